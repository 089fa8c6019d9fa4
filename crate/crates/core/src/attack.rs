//! End-to-end PThammer and the clflush baseline on one simulated machine.
//!
//! [`Session::setup`] installs the defense layout, sprays Level-1 page
//! tables, builds the eviction machinery and calibrates the row-pair
//! threshold. [`Session::run_pthammer`] then hammers the chosen pair until
//! the budget runs out or an exploitable flip shows up.

use crate::config::{AttackKind, ConfigError, DefenseLayout, Scenario};
use crate::dram::{map_paddr, mix, unmap, DramLoc};
use crate::eviction::{
    calibrate_rowpair_threshold, minimal_tlb_eviction_size, pair_truth, prepare_llc_pool, rowpair_latency,
    Calibration, EvictionError, Evictor, PairSample, TlbBuffer,
};
use crate::mmu::alloc::{Direction, FrameKind, Region};
use crate::mmu::tables::pte_frame;
use crate::mmu::{Audit, FlipRecord, Machine, MmuError, PageMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use thiserror::Error;

pub const SPRAY_BASE: u64 = 0x100_0000_0000;
pub const BASELINE_BASE: u64 = 0x30_0000_0000;
/// Frames every sprayed page aliases.
pub const DATA_POOL_FRAMES: u64 = 64;
const SPAN: u64 = 1 << 21;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mmu(#[from] MmuError),
    #[error(transparent)]
    Eviction(#[from] EvictionError),
    #[error("layout: {0}")]
    Layout(String),
}

pub type Result<T> = std::result::Result<T, AttackError>;

/// Physical layout facts the verdicts need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub defense: DefenseLayout,
    /// Frames per row index (one row in every bank).
    pub row_frames: u64,
    /// CATT: frames below this are kernel memory.
    pub kernel_end: Option<u64>,
    pub low_water_mark: Option<u64>,
    pub data_pool: Vec<u64>,
    pub sensitive: Vec<u64>,
}

impl Layout {
    pub fn row_index(&self, frame: u64) -> u64 {
        frame / self.row_frames
    }
}

/// Install the physical placement policy. Must run before any mapping.
pub fn apply_defense(m: &mut Machine, defense: DefenseLayout) -> Result<Layout> {
    let frames = m.allocator().frames();
    let row_frames = m.config().dram.rows_size() / 4096;
    let mut layout = Layout {
        defense,
        row_frames,
        kernel_end: None,
        low_water_mark: None,
        data_pool: Vec::new(),
        sensitive: Vec::new(),
    };
    match defense {
        DefenseLayout::None => {}
        DefenseLayout::Catt { guard_rows } => {
            let k = frames / 2;
            let user_lo = k + guard_rows as u64 * row_frames;
            if user_lo >= frames {
                return Err(AttackError::Layout("guard rows leave no user memory".into()));
            }
            m.allocator_mut().set_regions(
                Region { lo: frames / 16, hi: k, dir: Direction::Down },
                Region { lo: user_lo, hi: frames, dir: Direction::Down },
            );
            layout.kernel_end = Some(k);
        }
        DefenseLayout::Cta { low_water_mark } => {
            if low_water_mark == 0 || low_water_mark >= frames {
                return Err(AttackError::Layout(format!("low water mark {low_water_mark:#x} out of range")));
            }
            m.allocator_mut().set_regions(
                Region { lo: low_water_mark, hi: frames, dir: Direction::Up },
                Region { lo: frames / 16, hi: low_water_mark, dir: Direction::Down },
            );
            layout.low_water_mark = Some(low_water_mark);
        }
        DefenseLayout::ZebRam => m.allocator_mut().set_even_rows_only(Some(row_frames)),
    }
    m.rebase_root()?;
    Ok(layout)
}

/// Map `bytes` of virtual memory at `base`, every page onto one of the
/// `pool` frames, so that only the page tables consume physical memory.
pub fn spray_page_tables(m: &mut Machine, base: u64, bytes: u64, pool: &[u64]) -> Result<()> {
    for (i, off) in (0..bytes).step_by(4096).enumerate() {
        m.map_page(base + off, pool[i % pool.len()], false)?;
    }
    Ok(())
}

/// What one flip did.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipOutcome {
    pub record: FlipRecord,
    /// The flipped row holds Level-1 tables.
    pub l1_row: bool,
    /// Sprayed address whose Level-1 entry changed.
    pub vaddr: Option<u64>,
    /// Frame that entry points at after the flip (frame bits only).
    pub new_frame: Option<u64>,
    /// The entry now points at a Level-1 table.
    pub exploitable: bool,
    pub cred_hit: bool,
    pub below_lwm: Option<bool>,
    pub kernel_row: bool,
    /// ZebRAM: the flip hit an even (data-bearing) row.
    pub safe_row: bool,
}

impl FlipOutcome {
    pub fn frame_bit(&self) -> bool {
        self.new_frame.is_some()
    }
}

/// Classify a flip against the current page tables.
pub fn detect_exploitable_flip(m: &Machine, layout: &Layout, l1_rows: &HashSet<(u32, u32)>, rec: &FlipRecord) -> FlipOutcome {
    let row_index = layout.row_index(rec.frame);
    let mut out = FlipOutcome {
        record: rec.clone(),
        l1_row: l1_rows.contains(&(rec.event.bank, rec.event.row)),
        vaddr: None,
        new_frame: None,
        exploitable: false,
        cred_hit: false,
        below_lwm: None,
        kernel_row: layout.kernel_end.is_some_and(|k| rec.frame < k),
        safe_row: layout.defense == DefenseLayout::ZebRam && row_index.is_multiple_of(2),
    };
    if let (Some(1), Some(before), Some(bit)) = (rec.table_level, rec.pte_before, rec.pte_bit) {
        if let Some(span) = m.tables().l1_span_of(rec.frame) {
            out.vaddr = Some(span + ((rec.paddr & 0xfff) / 8) * 4096);
        }
        if (12..52).contains(&bit) && before & 1 != 0 {
            let nf = pte_frame(before & !(1u64 << bit));
            out.new_frame = Some(nf);
            out.exploitable = m.tables().level_of(nf) == Some(1);
            out.cred_hit = layout.sensitive.contains(&nf);
            out.below_lwm = layout.low_water_mark.map(|l| nf < l);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    /// Stopped on an exploitable flip (or a cred hit under CTA).
    Exploited,
    /// Budget spent; flips may or may not have happened.
    Exhausted,
    /// An access faulted because a flip corrupted the attacker's own mapping.
    Faulted,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Exploited => "exploited",
            Status::Exhausted => "exhausted",
            Status::Faulted => "faulted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairInfo {
    pub a: u64,
    pub b: u64,
    pub bank_a: u32,
    pub row_a: u32,
    pub bank_b: u32,
    pub row_b: u32,
    pub latency: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HammerReport {
    pub preset: String,
    pub attack: AttackKind,
    pub mode: PageMode,
    pub defense: DefenseLayout,
    pub seed: u64,
    pub budget: u64,
    pub pad_cycles: u64,
    pub t_max: u64,
    pub rounds: u64,
    pub round_cycles: Vec<u32>,
    pub sim_cycles: u64,
    pub first_flip_round: Option<u64>,
    pub flips: Vec<FlipOutcome>,
    pub tlb_set_size: usize,
    pub threshold: Option<u32>,
    pub pair: Option<PairInfo>,
    pub audit: Audit,
    pub causality_ok: bool,
    pub status: Status,
}

impl HammerReport {
    pub fn exploitable(&self) -> usize {
        self.flips.iter().filter(|f| f.exploitable).count()
    }

    pub fn cred_hits(&self) -> usize {
        self.flips.iter().filter(|f| f.cred_hit).count()
    }

    pub fn kernel_row_flips(&self) -> usize {
        self.flips.iter().filter(|f| f.kernel_row).count()
    }

    pub fn safe_row_flips(&self) -> usize {
        self.flips.iter().filter(|f| f.safe_row).count()
    }

    pub fn l1_row_flips(&self) -> usize {
        self.flips.iter().filter(|f| f.l1_row).count()
    }

    /// Share of rounds within `limit` cycles.
    pub fn rounds_within(&self, limit: u64) -> f64 {
        if self.round_cycles.is_empty() {
            return 0.0;
        }
        let ok = self.round_cycles.iter().filter(|&&c| c as u64 <= limit).count();
        ok as f64 / self.round_cycles.len() as f64
    }

    pub fn mean_round_cycles(&self) -> f64 {
        if self.round_cycles.is_empty() {
            return 0.0;
        }
        self.round_cycles.iter().map(|&c| c as f64).sum::<f64>() / self.round_cycles.len() as f64
    }
}

/// Every flip names aggressors within `r_max` that crossed the threshold.
pub fn causality_holds(m: &Machine) -> bool {
    let d = &m.config().dram;
    m.flips().iter().all(|f| {
        !f.event.aggressors.is_empty()
            && f.event.aggressors.iter().all(|&(r, c)| r.abs_diff(f.event.row) <= d.r_max && c >= d.flip_threshold)
    })
}

/// A prepared attack: machine, layout, spray and eviction machinery.
#[derive(Debug, Clone)]
pub struct Session {
    pub m: Machine,
    pub sc: Scenario,
    pub layout: Layout,
    pub spray_bytes: u64,
    pub ev: Option<Evictor>,
    pub tlb_set_size: usize,
    pub calibration: Option<Calibration>,
    pub samples: Vec<PairSample>,
    l1_rows: HashSet<(u32, u32)>,
    rng: ChaCha8Rng,
}

impl Session {
    /// Layout, data pool and spray; no eviction machinery yet.
    pub fn prepare(sc: &Scenario) -> Result<Self> {
        sc.validate()?;
        let seed = sc.seed();
        let mut m = Machine::new(sc.machine.clone())?;
        let mut layout = apply_defense(&mut m, sc.attack.defense)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 0x5e55]));
        m.allocator_mut().fragment_tables(&mut rng, sc.attack.fragmentation, 16);
        for _ in 0..DATA_POOL_FRAMES {
            layout.data_pool.push(m.allocator_mut().alloc_user(FrameKind::User).map_err(MmuError::from)?);
        }
        if layout.low_water_mark.is_some() {
            for _ in 0..DATA_POOL_FRAMES {
                layout.sensitive.push(m.allocator_mut().alloc_user(FrameKind::Sensitive).map_err(MmuError::from)?);
            }
        }
        let stride = Self::stride_of(sc);
        let spray_bytes = sc.attack.spray_bytes & !(SPAN - 1);
        if sc.attack.kind == AttackKind::Pthammer {
            if spray_bytes < stride + SPAN {
                return Err(AttackError::Layout(format!(
                    "spray of {spray_bytes:#x} bytes is shorter than the pair stride {stride:#x}"
                )));
            }
            spray_page_tables(&mut m, SPRAY_BASE, spray_bytes, &layout.data_pool)?;
        }
        let l1_rows = m
            .l1_tables()
            .iter()
            .map(|&(f, _)| {
                let l = m.dram_loc(f * 4096);
                (l.bank, l.row)
            })
            .collect();
        Ok(Self {
            m,
            sc: sc.clone(),
            layout,
            spray_bytes,
            ev: None,
            tlb_set_size: 0,
            calibration: None,
            samples: Vec::new(),
            l1_rows,
            rng,
        })
    }

    /// `prepare`, then eviction sets and the row-pair threshold.
    pub fn setup(sc: &Scenario) -> Result<Self> {
        let mut s = Self::prepare(sc)?;
        if sc.attack.kind == AttackKind::Pthammer {
            s.build_eviction()?;
            s.calibrate()?;
        }
        Ok(s)
    }

    pub fn stride_of(sc: &Scenario) -> u64 {
        sc.attack.stride_rowsizes * sc.machine.dram.rows_size() * 512
    }

    pub fn stride(&self) -> u64 {
        Self::stride_of(&self.sc)
    }

    pub fn l1_rows(&self) -> &HashSet<(u32, u32)> {
        &self.l1_rows
    }

    /// A sprayed page whose L1PTE does not share the page's own line offset.
    fn spray_page(&mut self, span: u64) -> u64 {
        SPRAY_BASE + span * SPAN + self.rng.gen_range(8..512u64) * 4096
    }

    pub fn build_eviction(&mut self) -> Result<()> {
        let buf = TlbBuffer::allocate(&mut self.m)?;
        let pool = prepare_llc_pool(&mut self.m, self.sc.attack.mode)?;
        let size = match self.sc.eviction.tlb_size {
            Some(n) => n,
            None => {
                let probe = self.spray_page(0);
                minimal_tlb_eviction_size(&mut self.m, &buf, probe, &self.sc.eviction)?.size
            }
        };
        self.tlb_set_size = size;
        self.ev = Some(Evictor::new(buf, size, pool));
        Ok(())
    }

    fn spans(&self) -> u64 {
        self.spray_bytes / SPAN
    }

    /// Candidate hammer pairs `(a, a + stride)`, `n` of them, from a seeded
    /// starting span.
    pub fn stride_pairs(&mut self, n: usize) -> Vec<(u64, u64)> {
        let usable = (self.spray_bytes - self.stride()) / SPAN;
        let start = self.rng.gen_range(0..usable);
        (0..n as u64)
            .map(|k| {
                let a = self.spray_page((start + k) % usable);
                (a, a + self.stride())
            })
            .collect()
    }

    /// `n` random pairs of sprayed pages in different 2MiB spans.
    pub fn random_pairs(&mut self, n: usize) -> Vec<(u64, u64)> {
        let spans = self.spans();
        let mut v = Vec::with_capacity(n);
        while v.len() < n {
            let (x, y) = (self.rng.gen_range(0..spans), self.rng.gen_range(0..spans));
            if x != y {
                let (a, b) = (self.spray_page(x), self.spray_page(y));
                v.push((a, b));
            }
        }
        v
    }

    fn evictor(&mut self) -> Result<&mut Evictor> {
        self.ev.as_mut().ok_or_else(|| AttackError::Layout("eviction machinery not built".into()))
    }

    pub fn calibrate(&mut self) -> Result<Calibration> {
        let n = self.sc.attack.calib_pairs;
        let stride = self.stride_pairs(4 * n);
        let random = self.random_pairs(4 * n);
        let mut ev = self.evictor()?.clone();
        let res = calibrate_rowpair_threshold(&mut self.m, &mut ev, &stride, &random, n);
        self.ev = Some(ev);
        let (cal, samples) = res?;
        self.samples = samples;
        let cal = cal?;
        self.calibration = Some(cal);
        Ok(cal)
    }

    pub fn probe_pair(&mut self, a: u64, b: u64) -> Result<u32> {
        let mut ev = self.evictor()?.clone();
        let r = rowpair_latency(&mut self.m, &mut ev, a, b);
        self.ev = Some(ev);
        Ok(r?)
    }

    fn pair_info(&self, a: u64, b: u64, latency: u32) -> Result<PairInfo> {
        let la = self.m.dram_loc(self.m.l1pte_addr_oracle(a)?);
        let lb = self.m.dram_loc(self.m.l1pte_addr_oracle(b)?);
        Ok(PairInfo { a, b, bank_a: la.bank, row_a: la.row, bank_b: lb.bank, row_b: lb.row, latency })
    }

    /// First stride pair whose probe latency reaches the threshold.
    pub fn pick_hammer_pair(&mut self, max_tries: usize) -> Result<PairInfo> {
        let thr = match self.calibration {
            Some(c) => c.threshold,
            None => self.calibrate()?.threshold,
        };
        for (a, b) in self.stride_pairs(max_tries) {
            let lat = self.probe_pair(a, b)?;
            if lat >= thr {
                return self.pair_info(a, b, lat);
            }
        }
        Err(EvictionError::NoPairFound.into())
    }

    /// Oracle audit of a pair: same bank, row gap.
    pub fn pair_truth(&self, a: u64, b: u64) -> Result<(bool, u32)> {
        Ok(pair_truth(&self.m, a, b)?)
    }

    fn take_new_flips(&self, seen: &mut usize, out: &mut Vec<FlipOutcome>) {
        let flips = self.m.flips();
        for rec in &flips[*seen..] {
            out.push(detect_exploitable_flip(&self.m, &self.layout, &self.l1_rows, rec));
        }
        *seen = flips.len();
    }

    fn report(&self, kind: AttackKind, rounds: u64, cycles: Vec<u32>, flips: Vec<FlipOutcome>, status: Status) -> HammerReport {
        let first_flip_round = flips.iter().find(|f| f.l1_row || kind == AttackKind::Baseline).map(|f| f.record.round);
        HammerReport {
            preset: self.sc.machine.name.clone(),
            attack: kind,
            mode: self.sc.attack.mode,
            defense: self.sc.attack.defense,
            seed: self.sc.seed(),
            budget: self.sc.attack.budget,
            pad_cycles: self.sc.attack.pad_cycles,
            t_max: self.sc.machine.t_max,
            rounds,
            round_cycles: cycles,
            sim_cycles: self.m.now(),
            first_flip_round,
            flips,
            tlb_set_size: self.tlb_set_size,
            threshold: self.calibration.map(|c| c.threshold),
            pair: None,
            audit: self.m.audit().clone(),
            causality_ok: causality_holds(&self.m),
            status,
        }
    }

    fn goal_reached(&self, f: &FlipOutcome) -> bool {
        f.exploitable || (self.layout.low_water_mark.is_some() && f.cred_hit)
    }

    /// Hammer the pair for up to `budget` rounds.
    pub fn hammer(&mut self, pair: PairInfo, budget: u64) -> Result<HammerReport> {
        let mut ev = self.evictor()?.clone();
        let mut evict = ev.llc_set(&mut self.m, pair.a)?.members;
        evict.extend(ev.llc_set(&mut self.m, pair.b)?.members);
        evict.extend(ev.tlb_set(&self.m, pair.a)?.members);
        evict.extend(ev.tlb_set(&self.m, pair.b)?.members);
        self.ev = Some(ev);
        let pad = self.sc.attack.pad_cycles;
        let stop = self.sc.attack.stop_at_exploitable;
        let mut cycles = Vec::with_capacity(budget.min(1 << 20) as usize);
        let mut flips = Vec::new();
        let mut seen = self.m.flips().len();
        let mut status = Status::Exhausted;
        let mut rounds = 0;
        while rounds < budget {
            self.m.round = rounds;
            match pthammer_round(&mut self.m, &evict, pair.a, pair.b, pad) {
                Ok(c) => cycles.push(c),
                Err(MmuError::PageFault(_)) | Err(MmuError::PermissionFault(_)) => {
                    status = Status::Faulted;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
            rounds += 1;
            let before = flips.len();
            self.take_new_flips(&mut seen, &mut flips);
            if stop && flips[before..].iter().any(|f| self.goal_reached(f)) {
                status = Status::Exploited;
                break;
            }
        }
        if status != Status::Exploited && flips.iter().any(|f| self.goal_reached(f)) {
            status = Status::Exploited;
        }
        let mut r = self.report(AttackKind::Pthammer, rounds, cycles, flips, status);
        r.pair = Some(pair);
        Ok(r)
    }

    /// Pick a pair and hammer it with the configured budget.
    pub fn run_pthammer(&mut self) -> Result<HammerReport> {
        let tries = (self.spans() as usize).clamp(1, 4096);
        let pair = self.pick_hammer_pair(tries)?;
        self.hammer(pair, self.sc.attack.budget)
    }

    /// Two user rows nearest the kernel (or the lowest user rows), pinned in
    /// bank 0 and mapped at [`BASELINE_BASE`].
    pub fn baseline_pair(&mut self) -> Result<(u64, u64)> {
        let user = self.m.allocator().user_region();
        let rf = self.layout.row_frames;
        let dcfg = self.m.config().dram.clone();
        let mut row = user.lo.div_ceil(rf) as u32;
        if self.layout.defense == DefenseLayout::ZebRam && row % 2 == 1 {
            row += 1;
        }
        let step = if self.layout.defense == DefenseLayout::ZebRam { 2 } else { 1 };
        while (row + 2) < dcfg.rows_per_bank {
            let fa = unmap(&dcfg, DramLoc { channel: 0, dimm: 0, rank: 0, bank: 0, row, column: 0 }) / 4096;
            let fb = unmap(&dcfg, DramLoc { channel: 0, dimm: 0, rank: 0, bank: 0, row: row + 2, column: 0 }) / 4096;
            let alloc = self.m.allocator_mut();
            if alloc.kind(fa) == FrameKind::Free && alloc.kind(fb) == FrameKind::Free {
                alloc.claim(fa, FrameKind::User).map_err(MmuError::from)?;
                alloc.claim(fb, FrameKind::User).map_err(MmuError::from)?;
                self.m.map_page(BASELINE_BASE, fa, false)?;
                self.m.map_page(BASELINE_BASE + 4096, fb, false)?;
                debug_assert_eq!(map_paddr(&dcfg, fb * 4096).map(|l| l.row).ok(), Some(row + 2));
                return Ok((BASELINE_BASE, BASELINE_BASE + 4096));
            }
            row += step;
        }
        Err(AttackError::Layout("no free user row pair".into()))
    }

    /// The clflush double-sided baseline on user rows.
    pub fn perihammer_baseline(&mut self) -> Result<HammerReport> {
        let (a, b) = self.baseline_pair()?;
        let pad = self.sc.attack.pad_cycles;
        let budget = self.sc.attack.budget;
        let mut cycles = Vec::new();
        let mut flips = Vec::new();
        let mut seen = self.m.flips().len();
        for round in 0..budget {
            self.m.round = round;
            let t0 = self.m.now();
            self.m.clflush(a)?;
            self.m.clflush(b)?;
            self.m.mem_access(a)?;
            self.m.mem_access(b)?;
            self.m.pad(pad);
            cycles.push((self.m.now() - t0) as u32);
            self.take_new_flips(&mut seen, &mut flips);
        }
        let pa = self.m.dram_loc(self.m.translate(a).unwrap_or(0));
        let pb = self.m.dram_loc(self.m.translate(b).unwrap_or(0));
        let mut r = self.report(AttackKind::Baseline, budget, cycles, flips, Status::Exhausted);
        r.pair = Some(PairInfo { a, b, bank_a: pa.bank, row_a: pa.row, bank_b: pb.bank, row_b: pb.row, latency: 0 });
        Ok(r)
    }

    /// Whatever the scenario asks for.
    pub fn run(&mut self) -> Result<HammerReport> {
        match self.sc.attack.kind {
            AttackKind::Pthammer => self.run_pthammer(),
            AttackKind::Baseline => self.perihammer_baseline(),
        }
    }
}

/// One hammer round: evict both translations and both L1PTE lines, then
/// touch both targets. Returns the round's cycles.
pub fn pthammer_round(m: &mut Machine, evict: &[u64], a: u64, b: u64, pad: u64) -> std::result::Result<u32, MmuError> {
    let t0 = m.now();
    m.batch(evict)?;
    m.mem_access(a)?;
    m.mem_access(b)?;
    m.pad(pad);
    Ok((m.now() - t0) as u32)
}
