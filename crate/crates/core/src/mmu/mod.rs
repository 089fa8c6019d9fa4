//! Address translation and the simulated machine.
//!
//! [`Machine`] owns every piece of state of one run: caches, TLB, DRAM, page
//! tables, the paging-structure caches, the frame allocator and the clock.
//! [`Machine::mem_access`] is the single timed path that the attacker drives.

pub mod alloc;
pub mod tables;

use crate::cache::{CacheHierarchy, HitLevel, ReplacementPolicy, SetAssoc};
use crate::config::MachineConfig;
use crate::dram::{map_paddr, unmap, AccessKind, Dram, DramLoc, FlipEvent};
use crate::tlb::{PageKey, PageSize, Tlb, TlbHit};
use alloc::{AllocError, Allocator, Direction, FrameKind, Region};
use std::collections::{HashMap, HashSet};
use tables::{pte_frame, PageTables, Walk, PTE_P, PTE_PS, PTE_US};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MmuError {
    #[error("page fault at {0:#x}")]
    PageFault(u64),
    #[error("permission fault at {0:#x}")]
    PermissionFault(u64),
    #[error("address {0:#x} is not mapped")]
    UnmappedAddress(u64),
    #[error("out of simulated physical memory")]
    OutOfMemory,
    #[error("virtual range at {0:#x} is already mapped")]
    RegionBusy(u64),
}

impl From<AllocError> for MmuError {
    fn from(_: AllocError) -> Self {
        MmuError::OutOfMemory
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageMode {
    Regular,
    Super,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Served {
    L1,
    L2,
    Llc,
    Dram { bank: u32, row: u32, kind: AccessKind },
}

/// One node touched by an access, with the cycles it contributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    Tlb { page: u64, hit: TlbHit, latency: u32 },
    /// Paging-structure cache hit for the entry of `level` (4, 3 or 2).
    Psc { level: u8, latency: u32 },
    Pte { level: u8, paddr: u64, served: Served, latency: u32 },
    Data { paddr: u64, served: Served, latency: u32 },
}

impl TraceEvent {
    pub fn latency(&self) -> u32 {
        match *self {
            TraceEvent::Tlb { latency, .. }
            | TraceEvent::Psc { latency, .. }
            | TraceEvent::Pte { latency, .. }
            | TraceEvent::Data { latency, .. } => latency,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Walk,
    Data,
}

/// Cross-boundary bookkeeping, kept for every access.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Audit {
    /// Attacker data accesses whose frame is a page table. Must stay zero.
    pub direct_table_accesses: u64,
    pub walk_table_row_activations: u64,
    pub data_table_row_activations: u64,
}

/// A flip after it was applied to memory.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipRecord {
    pub event: FlipEvent,
    pub round: u64,
    pub paddr: u64,
    pub frame: u64,
    /// Bit within the byte at `paddr`.
    pub byte_bit: u8,
    pub kind: FrameKind,
    /// Level of the page table holding the flipped bit.
    pub table_level: Option<u8>,
    /// Entry value before the flip.
    pub pte_before: Option<u64>,
    /// Bit index within that 64-bit entry.
    pub pte_bit: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct Psc {
    levels: [SetAssoc; 3],
}

impl Psc {
    fn new(entries: usize) -> Self {
        let mk = |s| SetAssoc::new(1, entries, ReplacementPolicy::TrueLru, s);
        Self { levels: [mk(4), mk(3), mk(2)] }
    }

    fn shift(level: u8) -> u32 {
        12 + 9 * (level as u32 - 1)
    }

    fn slot(level: u8) -> usize {
        (4 - level) as usize
    }

    /// Table frame cached for the entry of `level` covering `vaddr`.
    fn lookup(&mut self, level: u8, vaddr: u64) -> Option<u64> {
        let lv = &mut self.levels[Self::slot(level)];
        let tag = vaddr >> Self::shift(level);
        let w = lv.find(0, tag)?;
        lv.touch(0, w);
        Some(lv.value(0, w))
    }

    fn fill(&mut self, level: u8, vaddr: u64, next_table: u64) {
        let lv = &mut self.levels[Self::slot(level)];
        let tag = vaddr >> Self::shift(level);
        match lv.find(0, tag) {
            Some(w) => {
                lv.put(0, w, tag, next_table);
                lv.touch(0, w);
            }
            None => {
                lv.insert(0, tag, next_table);
            }
        }
    }

    fn clear(&mut self) {
        for (i, lv) in self.levels.iter_mut().enumerate() {
            *lv = SetAssoc::new(1, lv.ways(), ReplacementPolicy::TrueLru, i as u64);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Machine {
    cfg: MachineConfig,
    pub cache: CacheHierarchy,
    pub tlb: Tlb,
    pub dram: Dram,
    psc: Psc,
    tables: PageTables,
    alloc: Allocator,
    huge: HashSet<u64>,
    table_rows: HashSet<(u32, u32)>,
    clock: u64,
    trace_on: bool,
    trace: Vec<TraceEvent>,
    audit: Audit,
    flips: Vec<FlipRecord>,
    activations: Option<HashMap<(u64, u32, u32), u32>>,
    /// Tag stored with flips, set by drivers to the current round.
    pub round: u64,
}

impl Machine {
    pub fn new(cfg: MachineConfig) -> Result<Self, MmuError> {
        let frames = cfg.dram.total_bytes() / 4096;
        let table = Region { lo: frames / 16, hi: frames / 2, dir: Direction::Up };
        let user = Region { lo: frames / 2, hi: frames, dir: Direction::Down };
        let mut alloc = Allocator::new(frames, table, user);
        let root = alloc.alloc_table()?;
        let seed = cfg.dram.seed;
        let mut m = Self {
            cache: CacheHierarchy::new(cfg.cache.clone(), seed),
            tlb: Tlb::new(cfg.tlb.clone(), seed),
            dram: Dram::new(cfg.dram.clone()),
            psc: Psc::new(cfg.mmu.psc_entries),
            tables: PageTables::new(root),
            alloc,
            huge: HashSet::new(),
            table_rows: HashSet::new(),
            clock: 0,
            trace_on: false,
            trace: Vec::new(),
            audit: Audit::default(),
            flips: Vec::new(),
            activations: None,
            round: 0,
            cfg,
        };
        m.note_table_frame(root);
        Ok(m)
    }

    pub fn config(&self) -> &MachineConfig {
        &self.cfg
    }

    pub fn now(&self) -> u64 {
        self.clock
    }

    pub fn tables(&self) -> &PageTables {
        &self.tables
    }

    pub fn allocator(&self) -> &Allocator {
        &self.alloc
    }

    pub fn allocator_mut(&mut self) -> &mut Allocator {
        &mut self.alloc
    }

    pub fn audit(&self) -> &Audit {
        &self.audit
    }

    pub fn flips(&self) -> &[FlipRecord] {
        &self.flips
    }

    /// Start or stop logging row activations per `(window, bank, row)`.
    pub fn set_activation_log(&mut self, on: bool) {
        self.activations = on.then(HashMap::new);
    }

    pub fn activation_log(&self) -> Option<&HashMap<(u64, u32, u32), u32>> {
        self.activations.as_ref()
    }

    pub fn set_trace(&mut self, on: bool) {
        self.trace_on = on;
        self.trace.clear();
    }

    /// Events of the most recent access (when tracing is on).
    pub fn last_trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    /// Relocate the root table into the current table region. Layout changes
    /// call this so that no table frame is left outside its region.
    pub fn rebase_root(&mut self) -> Result<(), MmuError> {
        if self.tables.l1_count() > 0 {
            return Err(MmuError::RegionBusy(0));
        }
        let root = self.alloc.alloc_table()?;
        self.tables = PageTables::new(root);
        self.table_rows.clear();
        self.note_table_frame(root);
        self.psc.clear();
        Ok(())
    }

    fn note_table_frame(&mut self, frame: u64) {
        if let Ok(loc) = map_paddr(&self.cfg.dram, frame * 4096) {
            self.table_rows.insert((loc.bank, loc.row));
        }
    }

    pub fn is_table_row(&self, bank: u32, row: u32) -> bool {
        self.table_rows.contains(&(bank, row))
    }

    pub fn dram_loc(&self, paddr: u64) -> DramLoc {
        map_paddr(&self.cfg.dram, paddr).expect("paddr in range")
    }

    /// Map one page of `vaddr` onto `frame` (4KiB) or onto the 2MiB frame run
    /// starting at `frame`.
    pub fn map_page(&mut self, vaddr: u64, frame: u64, huge: bool) -> Result<(), MmuError> {
        let mut new_tables = Vec::new();
        let alloc = &mut self.alloc;
        let mut grab = || {
            let f = alloc.alloc_table().ok()?;
            new_tables.push(f);
            Some(f)
        };
        self.tables.map(vaddr, frame, huge, &mut grab).ok_or(MmuError::OutOfMemory)?;
        for f in new_tables {
            self.note_table_frame(f);
        }
        if huge {
            self.huge.insert(vaddr >> 21);
        }
        Ok(())
    }

    /// Map `bytes` at `base` with freshly allocated user frames.
    pub fn map_region(&mut self, base: u64, bytes: u64, mode: PageMode) -> Result<(), MmuError> {
        self.map_region_kind(base, bytes, mode, FrameKind::User)
    }

    pub fn map_region_kind(
        &mut self,
        base: u64,
        bytes: u64,
        mode: PageMode,
        kind: FrameKind,
    ) -> Result<(), MmuError> {
        match mode {
            PageMode::Regular => {
                assert_eq!(base % 4096, 0);
                for off in (0..bytes).step_by(4096) {
                    if self.translate(base + off).is_some() {
                        return Err(MmuError::RegionBusy(base + off));
                    }
                    let f = self.alloc.alloc_user(kind)?;
                    self.map_page(base + off, f, false)?;
                }
            }
            PageMode::Super => {
                assert_eq!(base % (1 << 21), 0);
                for off in (0..bytes).step_by(1 << 21) {
                    let f = self.alloc.alloc_user_huge()?;
                    self.map_page(base + off, f, true)?;
                }
            }
        }
        Ok(())
    }

    /// Untimed software translation (oracle and setup use only).
    pub fn translate(&self, vaddr: u64) -> Option<u64> {
        self.tables.walk(vaddr).paddr
    }

    pub fn walk_oracle(&self, vaddr: u64) -> Walk {
        self.tables.walk(vaddr)
    }

    /// Physical address of the Level-1 entry governing `vaddr`.
    pub fn l1pte_addr_oracle(&self, vaddr: u64) -> Result<u64, MmuError> {
        let w = self.tables.walk(vaddr);
        match w.steps.last() {
            Some(s) if s.level == 1 && w.paddr.is_some() => Ok(s.entry_paddr()),
            _ => Err(MmuError::UnmappedAddress(vaddr)),
        }
    }

    fn page_key(&self, vaddr: u64) -> PageKey {
        if self.huge.contains(&(vaddr >> 21)) {
            PageKey::of(vaddr, PageSize::Huge)
        } else {
            PageKey::of(vaddr, PageSize::Small)
        }
    }

    pub fn page_key_of(&self, vaddr: u64) -> PageKey {
        self.page_key(vaddr)
    }

    fn line(&mut self, paddr: u64, src: Source) -> (u32, Served) {
        let out = self.cache.access(paddr);
        let served = match out.level {
            HitLevel::L1 => Served::L1,
            HitLevel::L2 => Served::L2,
            HitLevel::Llc => Served::Llc,
            HitLevel::Memory => {
                let loc = self.dram_loc(paddr);
                let (kind, lat) = self.dram.access(loc);
                if kind != AccessKind::RowHit {
                    if let Some(log) = self.activations.as_mut() {
                        *log.entry((self.dram.current_window(), loc.bank, loc.row)).or_default() += 1;
                    }
                }
                if kind != AccessKind::RowHit && self.table_rows.contains(&(loc.bank, loc.row)) {
                    match src {
                        Source::Walk => self.audit.walk_table_row_activations += 1,
                        Source::Data => self.audit.data_table_row_activations += 1,
                    }
                }
                return (out.latency + lat, Served::Dram { bank: loc.bank, row: loc.row, kind });
            }
        };
        (out.latency, served)
    }

    fn record(&mut self, ev: TraceEvent) {
        if self.trace_on {
            self.trace.push(ev);
        }
    }

    /// Timed user access to `vaddr`; returns the cycles it took and advances
    /// the clock by exactly that amount.
    pub fn mem_access(&mut self, vaddr: u64) -> Result<u32, MmuError> {
        self.trace.clear();
        let lat = self.access_untimed(vaddr)?;
        self.advance(lat as u64);
        Ok(lat)
    }

    /// Independent accesses issued back to back: each costs one issue slot
    /// and the batch completes when the slowest one returns.
    pub fn batch(&mut self, vaddrs: &[u64]) -> Result<u32, MmuError> {
        let mut worst = 0u32;
        self.trace.clear();
        for &v in vaddrs {
            let lat = self.access_untimed(v)?;
            worst = worst.max(lat);
        }
        let total = vaddrs.len() as u32 * self.cfg.issue_cycles + if vaddrs.is_empty() { 0 } else { worst };
        self.advance(total as u64);
        Ok(total)
    }

    fn access_untimed(&mut self, vaddr: u64) -> Result<u32, MmuError> {
        let key = self.page_key(vaddr);
        let (hit, cached) = self.tlb.lookup(key);
        let tlb_lat = self.cfg.tlb.hit_latency;
        self.record(TraceEvent::Tlb { page: key.number, hit, latency: tlb_lat });
        let mut lat = tlb_lat;
        let leaf = match cached {
            Some(pte) => pte,
            None => {
                let (walk_lat, pte) = self.walk(vaddr, key)?;
                lat += walk_lat;
                self.tlb.fill(key, pte);
                pte
            }
        };
        if leaf & PTE_US == 0 {
            return Err(MmuError::PermissionFault(vaddr));
        }
        let paddr = match key.size {
            PageSize::Small => pte_frame(leaf) << 12 | (vaddr & 0xfff),
            PageSize::Huge => (pte_frame(leaf) << 12 & !((1 << 21) - 1)) | (vaddr & ((1 << 21) - 1)),
        };
        if self.tables.is_table(paddr >> 12) {
            self.audit.direct_table_accesses += 1;
        }
        let (dl, served) = self.line(paddr, Source::Data);
        self.record(TraceEvent::Data { paddr, served, latency: dl });
        Ok(lat + dl)
    }

    /// Hardware walk after a TLB miss. Returns cycles and the leaf entry.
    fn walk(&mut self, vaddr: u64, key: PageKey) -> Result<(u32, u64), MmuError> {
        let leaf_level = if key.size == PageSize::Huge { 2 } else { 1 };
        // deepest paging-structure cache hit gives the table to start from
        let mut start = (4u8, self.tables.root());
        for level in leaf_level + 1..=4 {
            if let Some(t) = self.psc.lookup(level, vaddr) {
                self.record(TraceEvent::Psc { level, latency: 0 });
                start = (level - 1, t);
                break;
            }
        }
        let (mut level, mut table) = start;
        let mut lat = 0;
        loop {
            let idx = tables::level_index(vaddr, level);
            let paddr = table * 4096 + idx as u64 * 8;
            let (l, served) = self.line(paddr, Source::Walk);
            lat += l;
            self.record(TraceEvent::Pte { level, paddr, served, latency: l });
            let pte = self.tables.entry(table, idx);
            if pte & PTE_P == 0 {
                return Err(MmuError::PageFault(vaddr));
            }
            if level == leaf_level {
                if level == 2 && pte & PTE_PS == 0 {
                    return Err(MmuError::PageFault(vaddr));
                }
                return Ok((lat, pte));
            }
            let next = pte_frame(pte);
            if !self.tables.is_table(next) {
                return Err(MmuError::PageFault(vaddr));
            }
            self.psc.fill(level, vaddr, next);
            table = next;
            level -= 1;
        }
    }

    /// Burn cycles without touching memory.
    pub fn pad(&mut self, cycles: u64) {
        self.advance(cycles);
    }

    fn advance(&mut self, cycles: u64) {
        self.clock += cycles;
        let boundary = (self.dram.current_window() + 1) * self.cfg.dram.refresh_window;
        if self.clock >= boundary {
            self.refresh();
        }
    }

    fn refresh(&mut self) {
        let Self { dram, tables, cfg, .. } = self;
        let dcfg = cfg.dram.clone();
        let events = dram.refresh_tick(self.clock, &mut |bank, row, bit| {
            let paddr = unmap(&dcfg, DramLoc { channel: 0, dimm: 0, rank: 0, bank, row, column: bit / 8 });
            tables.bit(paddr >> 12, paddr & 0xfff, bit % 8).unwrap_or(true)
        });
        for ev in events {
            let paddr = unmap(&self.cfg.dram, DramLoc {
                channel: 0,
                dimm: 0,
                rank: 0,
                bank: ev.bank,
                row: ev.row,
                column: ev.bit / 8,
            });
            let frame = paddr >> 12;
            let off = paddr & 0xfff;
            let byte_bit = (ev.bit % 8) as u8;
            let level = self.tables.level_of(frame);
            let (pte_before, pte_bit) = if level.is_some() {
                let before = self.tables.entry(frame, (off / 8) as usize);
                self.tables.clear_bit(frame, off, byte_bit as u64);
                (Some(before), Some(((off % 8) * 8) as u32 + byte_bit as u32))
            } else {
                (None, None)
            };
            self.flips.push(FlipRecord {
                kind: self.alloc.kind(frame),
                event: ev,
                round: self.round,
                paddr,
                frame,
                byte_bit,
                table_level: level,
                pte_before,
                pte_bit,
            });
        }
    }

    /// clflush on a user address (the classic hammering primitive).
    pub fn clflush(&mut self, vaddr: u64) -> Result<(), MmuError> {
        let pa = self.translate(vaddr).ok_or(MmuError::UnmappedAddress(vaddr))?;
        let leaf = self.tables.walk(vaddr).steps.last().map_or(0, |s| s.pte);
        if leaf & PTE_US == 0 {
            return Err(MmuError::PermissionFault(vaddr));
        }
        self.cache.flush_line(pa);
        self.advance(self.cfg.issue_cycles as u64);
        Ok(())
    }

    /// Oracle-side flush of any physical line (tests and baselines only).
    pub fn flush_paddr(&mut self, paddr: u64) {
        self.cache.flush_line(paddr);
    }

    /// invlpg, oracle use only.
    pub fn invlpg(&mut self, vaddr: u64) {
        let key = self.page_key(vaddr);
        self.tlb.invalidate(key);
    }

    /// Drop every paging-structure cache entry (cold-start experiments).
    pub fn clear_psc(&mut self) {
        self.psc.clear();
    }

    /// L1 table frames with the base of the span they map.
    pub fn l1_tables(&self) -> Vec<(u64, u64)> {
        let mut v: Vec<(u64, u64)> = self.tables.l1_tables().collect();
        v.sort_unstable();
        v
    }

    pub fn table_region_frames(&self) -> HashMap<u64, u8> {
        self.alloc
            .frames_of(FrameKind::Table)
            .filter_map(|f| self.tables.level_of(f).map(|l| (f, l)))
            .collect()
    }
}
