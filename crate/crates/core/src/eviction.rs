//! Eviction-set discovery: the minimal TLB eviction-set size, the LLC pool,
//! per-target LLC set selection and the row-pair timing threshold.
//!
//! Everything here goes through [`Machine::mem_access`] and friends, the way
//! an unprivileged process would. Physical-address oracles are only used to
//! fill `hint` fields for auditing and to label calibration pairs.

use crate::cache::SetHash;
use crate::config::{EvictionConfig, Removal};
use crate::dram::mix;
use crate::mmu::{Machine, MmuError, PageMode};
use crate::tlb::{tlb_set_index, PageKey, PageSize};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::fmt::Write as _;
use thiserror::Error;

pub const TLB_BUFFER_BASE: u64 = 0x10_0000_0000;
pub const LLC_POOL_BASE: u64 = 0x20_0000_0000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvictionError {
    #[error("the buffer holds no usable eviction set for this target")]
    BufferTooSmall,
    #[error("the pool buffer cannot cover every LLC set: {0}")]
    InsufficientBuffer(String),
    #[error("no pool set matches page offset {0:#x}")]
    EmptyCandidates(u64),
    #[error("target {0:#x}: its L1PTE shares the target's own line offset")]
    OffsetCollision(u64),
    #[error("no threshold reaches the required rates: {0}")]
    CalibrationFailed(String),
    #[error("no candidate pair passed the threshold")]
    NoPairFound,
    #[error("unsupported geometry: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Mmu(#[from] MmuError),
}

pub type Result<T> = std::result::Result<T, EvictionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetKind {
    Tlb,
    Llc,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvictionSet {
    pub kind: SetKind,
    pub members: Vec<u64>,
    /// TLB: the L2 set. LLC: flat `slice * sets + set`, from the oracle.
    pub hint: Option<usize>,
}

impl EvictionSet {
    pub fn empty(kind: SetKind) -> Self {
        Self { kind, members: Vec::new(), hint: None }
    }
}

/// Pages reserved for TLB eviction sets: eight times the 4KiB TLB reach.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TlbBuffer {
    pub base: u64,
    pub pages: u64,
}

impl TlbBuffer {
    pub fn allocate(m: &mut Machine) -> Result<Self> {
        let t = &m.config().tlb;
        let pages = 8 * (t.l1_sets * t.l1_ways + t.l2_sets * t.l2_ways) as u64;
        Self::allocate_pages(m, pages)
    }

    pub fn allocate_pages(m: &mut Machine, pages: u64) -> Result<Self> {
        m.map_region(TLB_BUFFER_BASE, pages * 4096, PageMode::Regular)?;
        Ok(Self { base: TLB_BUFFER_BASE, pages })
    }

    pub fn page(&self, i: u64) -> u64 {
        self.base + i * 4096
    }

    /// Buffer pages sharing both TLB sets with `target`, in buffer order.
    /// Each page is touched at its own nonzero line offset so the set's
    /// cache footprint spreads out instead of piling onto offset 0.
    pub fn congruent(&self, m: &Machine, target: u64) -> Vec<u64> {
        let cfg = &m.config().tlb;
        let n = target >> 12;
        let (s1, s2) = (tlb_set_index(cfg, 1, n), tlb_set_index(cfg, 2, n));
        (0..self.pages)
            .map(|i| self.page(i))
            .filter(|&p| {
                let q = p >> 12;
                q != n && tlb_set_index(cfg, 1, q) == s1 && tlb_set_index(cfg, 2, q) == s2
            })
            .map(|p| p + (1 + (p >> 12) * 7 % 63) * 64)
            .collect()
    }
}

/// Target misses over `reps` repetitions of: perturb, write target, write
/// every page of `set`, write target again.
pub fn profile_tlb_set(m: &mut Machine, target: u64, set: &[u64], reps: u32, rng: &mut ChaCha8Rng) -> Result<u32> {
    let key = PageKey::of(target, PageSize::Small);
    let members: Vec<(PageKey, u64)> = set
        .iter()
        .map(|&v| (PageKey::of(v, PageSize::Small), m.walk_oracle(v).steps.last().map_or(0, |s| s.pte)))
        .collect();
    let mut misses = 0;
    for _ in 0..reps {
        m.tlb.perturb(key, &members, rng);
        m.mem_access(target)?;
        for &p in set {
            m.mem_access(p)?;
        }
        let before = m.tlb.misses();
        m.mem_access(target)?;
        misses += (m.tlb.misses() - before) as u32;
    }
    Ok(misses)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlbSizeResult {
    pub size: usize,
    pub set: EvictionSet,
    /// Misses measured for the initial set.
    pub threshold: u32,
    pub repetitions: u32,
    /// `(set size, misses)` for every profile, in the order they ran.
    pub log: Vec<(usize, u32)>,
}

/// Minimal TLB eviction-set size: shrink a congruent page set until the target stops missing
/// as often as with the full set, then put the last page back.
pub fn minimal_tlb_eviction_size(
    m: &mut Machine,
    buf: &TlbBuffer,
    target: u64,
    cfg: &EvictionConfig,
) -> Result<TlbSizeResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[m.config().dram.seed, 0xa1, target]));
    let mut set: Vec<u64> = buf.congruent(m, target);
    set.truncate(cfg.tlb_init_cap);
    if set.is_empty() {
        return Err(EvictionError::BufferTooSmall);
    }
    for &p in &set {
        m.mem_access(p)?;
    }
    let reps = cfg.repetitions;
    let threshold = profile_tlb_set(m, target, &set, reps, &mut rng)?;
    let mut log = vec![(set.len(), threshold)];
    if threshold == 0 {
        return Err(EvictionError::BufferTooSmall);
    }
    while !set.is_empty() {
        let idx = match cfg.removal {
            Removal::LastAdded => set.len() - 1,
            Removal::Random => rand::Rng::gen_range(&mut rng, 0..set.len()),
        };
        let page = set.remove(idx);
        let misses = profile_tlb_set(m, target, &set, reps, &mut rng)?;
        log.push((set.len(), misses));
        if misses < threshold {
            set.insert(idx, page);
            break;
        }
    }
    let hint = Some(tlb_set_index(&m.config().tlb, 2, target >> 12));
    Ok(TlbSizeResult {
        size: set.len(),
        set: EvictionSet { kind: SetKind::Tlb, members: set, hint },
        threshold,
        repetitions: reps,
        log,
    })
}

/// The first `size` buffer pages congruent with `target`.
pub fn build_tlb_eviction_set(m: &Machine, buf: &TlbBuffer, target: u64, size: usize) -> Result<EvictionSet> {
    let mut c = buf.congruent(m, target);
    if c.len() < size {
        return Err(EvictionError::BufferTooSmall);
    }
    c.truncate(size);
    let hint = Some(tlb_set_index(&m.config().tlb, 2, target >> 12));
    Ok(EvictionSet { kind: SetKind::Tlb, members: c, hint })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvictionPool {
    pub mode: PageMode,
    pub sets: Vec<EvictionSet>,
    /// Timed eviction tests spent building the pool.
    pub probes: u64,
    pub threshold: u32,
}

impl EvictionPool {
    /// One line per set: `<hint|-> <vaddr> <vaddr> ...` in hex.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mode = if self.mode == PageMode::Super { "super" } else { "regular" };
        let _ = writeln!(s, "# pool mode={mode} threshold={} probes={}", self.threshold, self.probes);
        for set in &self.sets {
            let hint = set.hint.map_or("-".to_string(), |h| h.to_string());
            let mem: Vec<String> = set.members.iter().map(|v| format!("{v:#x}")).collect();
            let _ = writeln!(s, "{hint} {}", mem.join(" "));
        }
        s
    }

    pub fn from_text(text: &str, mode: PageMode, threshold: u32) -> std::result::Result<Self, String> {
        let mut sets = Vec::new();
        for (i, l) in text.lines().enumerate() {
            let l = l.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let mut it = l.split_whitespace();
            let hint = match it.next() {
                Some("-") => None,
                Some(h) => Some(h.parse::<usize>().map_err(|e| format!("line {}: {e}", i + 1))?),
                None => continue,
            };
            let members = it
                .map(|t| crate::config::parse_u64(t).map_err(|e| format!("line {}: {e}", i + 1)))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            sets.push(EvictionSet { kind: SetKind::Llc, members, hint });
        }
        Ok(Self { mode, sets, probes: 0, threshold })
    }
}

struct Prober {
    threshold: u32,
    probes: u64,
}

impl Prober {
    fn other_line(x: u64) -> u64 {
        (x & !0xfff) | ((x + 0x800) & 0xfc0)
    }

    /// Does accessing `set` push `x` out of the LLC?
    fn evicts(&mut self, m: &mut Machine, set: &[u64], x: u64) -> Result<bool> {
        self.probes += 1;
        m.mem_access(x)?;
        // two passes: upper-level hits leave LLC replacement state alone
        m.batch(set)?;
        m.batch(set)?;
        m.mem_access(Self::other_line(x))?;
        Ok(m.mem_access(x)? > self.threshold)
    }

    /// Midpoint between a cached and a flushed access to `x`.
    fn calibrate(m: &mut Machine, x: u64) -> Result<u32> {
        m.mem_access(x)?;
        let hit = m.mem_access(x)?;
        m.clflush(x)?;
        m.mem_access(Self::other_line(x))?;
        let miss = m.mem_access(x)?;
        Ok((hit + miss) / 2)
    }
}

fn oracle_slot(m: &Machine, v: u64) -> Option<usize> {
    m.translate(v).map(|p| m.config().cache.llc_slot(p))
}

/// Build the LLC pool from a buffer of twice the LLC size.
pub fn prepare_llc_pool(m: &mut Machine, mode: PageMode) -> Result<EvictionPool> {
    let llc_bytes = m.config().cache.level_bytes(crate::cache::Level::Llc);
    let bytes = match mode {
        PageMode::Regular => 2 * llc_bytes,
        PageMode::Super => (2 * llc_bytes).div_ceil(1 << 21) << 21,
    };
    m.map_region(LLC_POOL_BASE, bytes, mode)?;
    match mode {
        PageMode::Regular => regular_pool(m, LLC_POOL_BASE, bytes),
        PageMode::Super => super_pool(m, LLC_POOL_BASE, bytes),
    }
}

/// Reduce `cand` to `ways` lines that still evict `x` (group testing).
fn reduce(p: &mut Prober, m: &mut Machine, mut cand: Vec<u64>, x: u64, ways: usize) -> Result<Option<Vec<u64>>> {
    if !p.evicts(m, &cand, x)? {
        return Ok(None);
    }
    let mut fine = false;
    while cand.len() > ways {
        let chunk = if fine { 1 } else { cand.len().div_ceil(ways + 1) };
        let mut shrunk = false;
        for lo in (0..cand.len()).step_by(chunk) {
            let hi = (lo + chunk).min(cand.len());
            let rest: Vec<u64> = cand[..lo].iter().chain(&cand[hi..]).copied().collect();
            if p.evicts(m, &rest, x)? {
                cand = rest;
                shrunk = true;
                break;
            }
        }
        if !shrunk {
            if chunk > 1 {
                fine = true;
                continue;
            }
            return Ok(None);
        }
    }
    Ok(Some(cand))
}

fn regular_pool(m: &mut Machine, base: u64, bytes: u64) -> Result<EvictionPool> {
    let ways = m.config().cache.llc.ways;
    let pages = bytes / 4096;
    let mut remaining: Vec<u64> = (0..pages).map(|i| base + i * 4096).collect();
    let threshold = Prober::calibrate(m, remaining[0])?;
    let mut p = Prober { threshold, probes: 0 };
    let mut classes: Vec<Vec<u64>> = Vec::new();
    while remaining.len() > ways {
        let x = remaining[0];
        let cand: Vec<u64> = remaining[1..].to_vec();
        let Some(core) = reduce(&mut p, m, cand, x, ways)? else {
            remaining.remove(0);
            continue;
        };
        let mut class = vec![x];
        let mut rest = Vec::new();
        for &y in &remaining[1..] {
            if core.contains(&y) || p.evicts(m, &core, y)? {
                class.push(y);
            } else {
                rest.push(y);
            }
        }
        remaining = rest;
        classes.push(core);
    }
    let line = m.config().cache.line_bytes;
    let mut sets = Vec::new();
    for core in &classes {
        for off in (0..4096).step_by(line as usize) {
            let members: Vec<u64> = core.iter().map(|v| v + off).collect();
            let hint = oracle_slot(m, members[0]);
            sets.push(EvictionSet { kind: SetKind::Llc, members, hint });
        }
    }
    Ok(EvictionPool { mode: PageMode::Regular, sets, probes: p.probes, threshold })
}

fn super_pool(m: &mut Machine, base: u64, bytes: u64) -> Result<EvictionPool> {
    let cc = m.config().cache.clone();
    if let SetHash::XorFold(masks) = &cc.llc.set_hash {
        if masks.iter().any(|mk| mk >> 21 != 0) {
            return Err(EvictionError::Unsupported("set hash uses bits above the superpage offset".into()));
        }
    }
    let low = (1u64 << 21) - 1;
    let ways = cc.llc.ways;
    let known = |a: u64| -> usize {
        cc.llc
            .slice_masks
            .iter()
            .enumerate()
            .fold(0, |acc, (b, mk)| acc | ((((a & low) & mk).count_ones() as usize) & 1) << b)
    };
    let slices = cc.llc.slices();
    let sps: Vec<u64> = (0..bytes >> 21).map(|i| base + (i << 21)).collect();
    let line = cc.line_bytes;
    let set_stride = cc.llc.sets as u64 * line;
    let lines_in = |sp: u64, s: u64, cls: usize, c: usize| -> Vec<u64> {
        (0..(1u64 << 21) / set_stride)
            .map(|k| sp + s * line + k * set_stride)
            .filter(|&a| known(a) ^ c == cls)
            .collect()
    };

    let x0 = sps[0];
    let threshold = Prober::calibrate(m, x0)?;
    let mut p = Prober { threshold, probes: 0 };
    // relative slice offsets, found by timing at set 0 with sp0 as reference
    let mut offs: Vec<Option<usize>> = vec![None; sps.len()];
    offs[0] = Some(0);
    let cls0 = known(x0);
    let mut next = 1;
    while next < sps.len() {
        let reference: Vec<u64> = (0..next)
            .filter_map(|i| offs[i].map(|c| lines_in(sps[i], 0, cls0, c)))
            .flatten()
            .filter(|&a| a != x0)
            .collect();
        let per = lines_in(sps[0], 0, cls0, 0).len();
        let mut t = 1;
        while reference.len() + t * per < ways && next + t < sps.len() {
            t += 1;
        }
        let group: Vec<usize> = (next..next + t).collect();
        let combos = slices.pow(t as u32);
        let mut found = None;
        for h in 0..combos {
            let hyp: Vec<usize> = (0..t).map(|j| (h / slices.pow(j as u32)) % slices).collect();
            let mut set = reference.clone();
            for (j, &i) in group.iter().enumerate() {
                set.extend(lines_in(sps[i], 0, cls0, hyp[j]));
            }
            if set.len() >= ways && p.evicts(m, &set, x0)? {
                found = Some(hyp);
                break;
            }
        }
        let hyp = found.ok_or_else(|| EvictionError::InsufficientBuffer("slice offsets unresolved".into()))?;
        for (j, &i) in group.iter().enumerate() {
            offs[i] = Some(hyp[j]);
        }
        next += t;
    }

    let mut sets = Vec::new();
    for s in 0..cc.llc.sets as u64 {
        for q in 0..slices {
            let mut members = Vec::new();
            for (i, &sp) in sps.iter().enumerate() {
                members.extend(lines_in(sp, s, q, offs[i].unwrap_or(0)));
            }
            if members.len() < ways {
                return Err(EvictionError::InsufficientBuffer(format!("set {s} slice class {q}")));
            }
            members.truncate(ways);
            let hint = oracle_slot(m, members[0]);
            sets.push(EvictionSet { kind: SetKind::Llc, members, hint });
        }
    }
    Ok(EvictionPool { mode: PageMode::Super, sets, probes: p.probes, threshold })
}

/// Byte offset of `vaddr`'s L1PTE inside its table page.
pub fn l1pte_offset(vaddr: u64) -> u64 {
    ((vaddr >> 12) & 511) * 8
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub set: EvictionSet,
    /// Pool index of the chosen set.
    pub index: usize,
    /// `(pool index, latency)` for every candidate profiled.
    pub latencies: Vec<(usize, u32)>,
}

/// LLC eviction-set selection: among pool sets at the L1PTE's line offset, pick the one
/// whose access makes the target's next translation slowest.
pub fn select_llc_eviction_set(
    m: &mut Machine,
    pool: &EvictionPool,
    tlb_set: &EvictionSet,
    target: u64,
) -> Result<Selection> {
    let line = m.config().cache.line_bytes;
    let pte_line = l1pte_offset(target) & !(line - 1);
    if pte_line == (target & 0xfff) & !(line - 1) {
        return Err(EvictionError::OffsetCollision(target));
    }
    let cands: Vec<usize> = pool
        .sets
        .iter()
        .enumerate()
        .filter(|(_, s)| s.members.first().is_some_and(|&v| v & 0xfff == pte_line))
        .map(|(i, _)| i)
        .collect();
    if cands.is_empty() {
        return Err(EvictionError::EmptyCandidates(pte_line));
    }
    // warm up: translation cached everywhere
    m.batch(&tlb_set.members)?;
    m.mem_access(target)?;
    let mut best: Option<(usize, u32)> = None;
    let mut latencies = Vec::with_capacity(cands.len());
    for &i in &cands {
        m.batch(&tlb_set.members)?;
        m.mem_access(target)?;
        m.batch(&pool.sets[i].members)?;
        m.batch(&tlb_set.members)?;
        let lat = m.mem_access(target)?;
        latencies.push((i, lat));
        if best.is_none_or(|(_, b)| b < lat) {
            best = Some((i, lat));
        }
    }
    let (index, _) = best.expect("non-empty candidates");
    Ok(Selection { set: pool.sets[index].clone(), index, latencies })
}

/// Selected eviction sets per target, memoised on the L1PTE line: pages
/// whose entries share a line share a set.
#[derive(Debug, Clone)]
pub struct Evictor {
    pub tlb_buf: TlbBuffer,
    pub tlb_size: usize,
    pub pool: EvictionPool,
    llc: HashMap<u64, EvictionSet>,
    pub selections: u64,
}

impl Evictor {
    pub fn new(tlb_buf: TlbBuffer, tlb_size: usize, pool: EvictionPool) -> Self {
        Self { tlb_buf, tlb_size, pool, llc: HashMap::new(), selections: 0 }
    }

    pub fn tlb_set(&self, m: &Machine, target: u64) -> Result<EvictionSet> {
        build_tlb_eviction_set(m, &self.tlb_buf, target, self.tlb_size)
    }

    pub fn llc_set(&mut self, m: &mut Machine, target: u64) -> Result<EvictionSet> {
        let key = target >> 15;
        if let Some(s) = self.llc.get(&key) {
            return Ok(s.clone());
        }
        let tlb = self.tlb_set(m, target)?;
        let sel = select_llc_eviction_set(m, &self.pool, &tlb, target)?;
        self.selections += 1;
        self.llc.insert(key, sel.set.clone());
        Ok(sel.set)
    }

    /// Push every given target's translation out of the TLB and its L1PTE
    /// line out of the caches.
    pub fn evict(&mut self, m: &mut Machine, targets: &[u64]) -> Result<()> {
        let mut all = Vec::new();
        for &t in targets {
            all.extend(self.llc_set(m, t)?.members);
        }
        for &t in targets {
            all.extend(self.tlb_set(m, t)?.members);
        }
        m.batch(&all)?;
        Ok(())
    }
}

/// Timed row-pair probe. Evicts `a`, `b` and `a2` (a page whose L1PTE is in
/// another line of `a`'s table), walks `a` to open its row, then times `b`
/// followed by `a2`. Two row conflicts mean `b`'s L1PTE shares `a`'s bank.
pub fn rowpair_latency(m: &mut Machine, ev: &mut Evictor, a: u64, b: u64) -> Result<u32> {
    let a2 = sibling_page(a);
    ev.evict(m, &[a, b, a2])?;
    m.mem_access(a)?;
    Ok(m.mem_access(b)? + m.mem_access(a2)?)
}

/// A page eight entries away from `a` in the same Level-1 table.
pub fn sibling_page(a: u64) -> u64 {
    if (a >> 12) & 511 < 504 {
        a + 8 * 4096
    } else {
        a - 8 * 4096
    }
}

/// A calibration sample: latency and the oracle's verdict on the L1PTEs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSample {
    pub latency: u32,
    pub same_bank: bool,
    pub row_gap: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub threshold: u32,
    pub precision: f64,
    pub two_rows: f64,
    pub passing: usize,
}

/// Smallest latency threshold at which at least `min_precision` of passing
/// pairs are same-bank and at least `min_two_rows` of those are two rows
/// apart.
pub fn choose_threshold(samples: &[PairSample], min_precision: f64, min_two_rows: f64) -> Result<Calibration> {
    let mut lats: Vec<u32> = samples.iter().map(|s| s.latency).collect();
    lats.sort_unstable();
    lats.dedup();
    for &t in &lats {
        let pass: Vec<&PairSample> = samples.iter().filter(|s| s.latency >= t).collect();
        let same: Vec<&&PairSample> = pass.iter().filter(|s| s.same_bank).collect();
        if same.is_empty() {
            continue;
        }
        let precision = same.len() as f64 / pass.len() as f64;
        let two = same.iter().filter(|s| s.row_gap == 2).count() as f64 / same.len() as f64;
        if precision >= min_precision && two >= min_two_rows {
            return Ok(Calibration { threshold: t, precision, two_rows: two, passing: pass.len() });
        }
    }
    Err(EvictionError::CalibrationFailed(format!("{} samples, {} distinct latencies", samples.len(), lats.len())))
}

/// Oracle view of the L1PTEs of `a` and `b`.
pub fn pair_truth(m: &Machine, a: u64, b: u64) -> Result<(bool, u32)> {
    let la = m.dram_loc(m.l1pte_addr_oracle(a)?);
    let lb = m.dram_loc(m.l1pte_addr_oracle(b)?);
    Ok((la.bank == lb.bank, la.row.abs_diff(lb.row)))
}

/// Profile up to `n` stride pairs that the oracle puts in one bank and up to
/// `n` random pairs it puts in different banks, then pick the threshold.
/// The samples come back even when no threshold works.
pub fn calibrate_rowpair_threshold(
    m: &mut Machine,
    ev: &mut Evictor,
    stride_pairs: &[(u64, u64)],
    random_pairs: &[(u64, u64)],
    n: usize,
) -> Result<(Result<Calibration>, Vec<PairSample>)> {
    let mut samples = Vec::new();
    for (pairs, want_same) in [(stride_pairs, true), (random_pairs, false)] {
        let mut taken = 0;
        for &(a, b) in pairs {
            if taken == n {
                break;
            }
            let (same, gap) = pair_truth(m, a, b)?;
            if same != want_same || (!same && gap == 0 && a >> 21 == b >> 21) {
                continue;
            }
            let latency = rowpair_latency(m, ev, a, b)?;
            samples.push(PairSample { latency, same_bank: same, row_gap: gap });
            taken += 1;
        }
    }
    let cal = choose_threshold(&samples, 0.95, 0.90);
    Ok((cal, samples))
}

/// Shuffle helper shared by callers that sample pairs.
pub fn shuffled<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1pte_offset_examples() {
        assert_eq!(l1pte_offset(0x20_0000), 0);
        assert_eq!(l1pte_offset(0x20_1000), 8);
        assert_eq!(l1pte_offset(0x3f_f000), 511 * 8);
    }

    #[test]
    fn threshold_separates_clean_populations() {
        let mut s = Vec::new();
        for i in 0..50 {
            s.push(PairSample { latency: 700 + i % 3, same_bank: true, row_gap: 2 });
            s.push(PairSample { latency: 550 + i % 3, same_bank: false, row_gap: 0 });
        }
        let c = choose_threshold(&s, 0.95, 0.9).unwrap();
        assert!(c.threshold > 552 && c.threshold <= 700);
        assert_eq!(c.precision, 1.0);
    }

    #[test]
    fn identical_latencies_fail() {
        let s: Vec<PairSample> = (0..20)
            .map(|i| PairSample { latency: 600, same_bank: i % 2 == 0, row_gap: 2 })
            .collect();
        assert!(matches!(choose_threshold(&s, 0.95, 0.9), Err(EvictionError::CalibrationFailed(_))));
    }
}
