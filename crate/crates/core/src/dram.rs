//! DRAM topology, open-row timing, per-window activation counting and the
//! disturbance flip model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, HashSet};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DramMapping {
    /// column | bank | row, low to high.
    Simple,
    /// As `Simple`, with the bank bits XORed with the low row bits.
    XorBank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DramConfig {
    pub channels: u32,
    pub dimms: u32,
    pub ranks: u32,
    pub banks: u32,
    pub rows_per_bank: u32,
    pub row_bytes: u64,
    pub mapping: DramMapping,
    pub row_hit: u32,
    pub row_closed: u32,
    pub row_conflict: u32,
    pub refresh_window: u64,
    pub flip_threshold: u32,
    pub r_max: u32,
    pub flip_rate: f64,
    /// Cells drawn per victim row per window.
    pub cells_per_row: u32,
    /// Hammered rows are their own victims at a tenth of the rate.
    pub self_corruption: bool,
    pub seed: u64,
}

impl DramConfig {
    pub fn total_bytes(&self) -> u64 {
        self.banks_total() as u64 * self.rows_per_bank as u64 * self.row_bytes
    }

    fn banks_total(&self) -> u32 {
        self.channels * self.dimms * self.ranks * self.banks
    }

    /// Bytes covered by one row index across every bank.
    pub fn rows_size(&self) -> u64 {
        self.banks_total() as u64 * self.row_bytes
    }

    pub fn row_bits(&self) -> u64 {
        self.row_bytes * 8
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.row_conflict > self.row_closed && self.row_closed > self.row_hit) {
            return Err("dram: need row_conflict > row_closed > row_hit".into());
        }
        if !(1..=2).contains(&self.r_max) {
            return Err("dram: r_max must be 1 or 2".into());
        }
        if self.flip_threshold == 0 {
            return Err("dram: flip_threshold must be positive".into());
        }
        if !self.row_bytes.is_power_of_two() || !self.banks.is_power_of_two() {
            return Err("dram: row_bytes and banks must be powers of two".into());
        }
        if self.channels != 1 || self.dimms != 1 || self.ranks != 1 {
            return Err("dram: only one channel, dimm and rank are modelled".into());
        }
        if !(0.0..=1.0).contains(&self.flip_rate) {
            return Err("dram: flip_rate must be a probability".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DramLoc {
    pub channel: u32,
    pub dimm: u32,
    pub rank: u32,
    pub bank: u32,
    pub row: u32,
    pub column: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DramError {
    #[error("physical address {0:#x} is outside simulated memory")]
    OutOfRange(u64),
}

pub fn map_paddr(cfg: &DramConfig, paddr: u64) -> Result<DramLoc, DramError> {
    if paddr >= cfg.total_bytes() {
        return Err(DramError::OutOfRange(paddr));
    }
    let column = paddr % cfg.row_bytes;
    let rest = paddr / cfg.row_bytes;
    let mut bank = (rest % cfg.banks as u64) as u32;
    let row = (rest / cfg.banks as u64) as u32;
    if cfg.mapping == DramMapping::XorBank {
        bank ^= row & (cfg.banks - 1);
    }
    Ok(DramLoc { channel: 0, dimm: 0, rank: 0, bank, row, column })
}

pub fn unmap(cfg: &DramConfig, loc: DramLoc) -> u64 {
    let mut bank = loc.bank;
    if cfg.mapping == DramMapping::XorBank {
        bank ^= loc.row & (cfg.banks - 1);
    }
    ((loc.row as u64 * cfg.banks as u64) + bank as u64) * cfg.row_bytes + loc.column
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    RowHit,
    RowClosed,
    RowConflict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlipEvent {
    pub window: u64,
    pub bank: u32,
    pub row: u32,
    /// Bit index within the row.
    pub bit: u64,
    pub double_sided: bool,
    /// Rows within r_max of the victim that crossed the threshold, with counts.
    pub aggressors: Vec<(u32, u32)>,
}

#[derive(Debug, Clone)]
pub struct Dram {
    cfg: DramConfig,
    open: Vec<Option<u32>>,
    counts: BTreeMap<(u32, u32), u32>,
    window: u64,
    flipped: HashSet<(u32, u32, u64)>,
    flips: Vec<FlipEvent>,
    activations: u64,
    window_activations: u64,
    kinds: [u64; 3],
}

impl Dram {
    pub fn new(cfg: DramConfig) -> Self {
        let banks = cfg.banks_total() as usize;
        Self {
            cfg,
            open: vec![None; banks],
            counts: BTreeMap::new(),
            window: 0,
            flipped: HashSet::new(),
            flips: Vec::new(),
            activations: 0,
            window_activations: 0,
            kinds: [0; 3],
        }
    }

    pub fn config(&self) -> &DramConfig {
        &self.cfg
    }

    pub fn open_row(&self, bank: u32) -> Option<u32> {
        self.open[bank as usize]
    }

    /// Access counts by kind: hits, closed-row opens, conflicts.
    pub fn kind_counts(&self) -> [u64; 3] {
        self.kinds
    }

    pub fn total_activations(&self) -> u64 {
        self.activations
    }

    pub fn window_activations(&self) -> u64 {
        self.window_activations
    }

    pub fn current_window(&self) -> u64 {
        self.window
    }

    pub fn count(&self, bank: u32, row: u32) -> u32 {
        self.counts.get(&(bank, row)).copied().unwrap_or(0)
    }

    pub fn flips(&self) -> &[FlipEvent] {
        &self.flips
    }

    pub fn is_flipped(&self, bank: u32, row: u32, bit: u64) -> bool {
        self.flipped.contains(&(bank, row, bit))
    }

    pub fn access(&mut self, loc: DramLoc) -> (AccessKind, u32) {
        let slot = &mut self.open[loc.bank as usize];
        let kind = match *slot {
            Some(r) if r == loc.row => AccessKind::RowHit,
            None => AccessKind::RowClosed,
            Some(_) => AccessKind::RowConflict,
        };
        *slot = Some(loc.row);
        let lat = match kind {
            AccessKind::RowHit => {
                self.kinds[0] += 1;
                self.cfg.row_hit
            }
            AccessKind::RowClosed => {
                self.kinds[1] += 1;
                self.cfg.row_closed
            }
            AccessKind::RowConflict => {
                self.kinds[2] += 1;
                self.cfg.row_conflict
            }
        };
        if kind != AccessKind::RowHit {
            *self.counts.entry((loc.bank, loc.row)).or_insert(0) += 1;
            self.activations += 1;
            self.window_activations += 1;
        }
        (kind, lat)
    }

    /// Precharge every bank (used between unrelated experiments).
    pub fn close_all(&mut self) {
        self.open.iter_mut().for_each(|o| *o = None);
    }

    /// Advance to `now`, closing every refresh window that ended. `charged`
    /// tells whether a cell currently stores a 1; only those can discharge.
    pub fn refresh_tick(
        &mut self,
        now: u64,
        charged: &mut dyn FnMut(u32, u32, u64) -> bool,
    ) -> Vec<FlipEvent> {
        let mut out = Vec::new();
        while now >= (self.window + 1) * self.cfg.refresh_window {
            let banks: Vec<u32> = {
                let mut b: Vec<u32> = self.counts.keys().map(|&(b, _)| b).collect();
                b.dedup();
                b
            };
            for bank in banks {
                for (row, bit, double_sided, aggressors) in self.evaluate_flips(bank, charged) {
                    self.flipped.insert((bank, row, bit));
                    let ev = FlipEvent { window: self.window, bank, row, bit, double_sided, aggressors };
                    self.flips.push(ev.clone());
                    out.push(ev);
                }
            }
            self.counts.clear();
            self.window_activations = 0;
            self.window += 1;
        }
        out
    }

    /// Flips due in `bank` for the current window's counts.
    pub fn evaluate_flips(
        &self,
        bank: u32,
        charged: &mut dyn FnMut(u32, u32, u64) -> bool,
    ) -> Vec<(u32, u64, bool, Vec<(u32, u32)>)> {
        let thr = self.cfg.flip_threshold;
        let hammered: Vec<(u32, u32)> = self
            .counts
            .range((bank, 0)..=(bank, u32::MAX))
            .filter(|(_, &c)| c >= thr)
            .map(|(&(_, r), &c)| (r, c))
            .collect();
        if hammered.is_empty() {
            return Vec::new();
        }
        let r_max = self.cfg.r_max;
        let mut victims: BTreeMap<u32, Vec<(u32, u32)>> = BTreeMap::new();
        for &(h, c) in &hammered {
            let lo = h.saturating_sub(r_max);
            let hi = (h + r_max).min(self.cfg.rows_per_bank - 1);
            for v in lo..=hi {
                if v != h || self.cfg.self_corruption {
                    victims.entry(v).or_default().push((h, c));
                }
            }
        }
        let row_bits = self.cfg.row_bits();
        let samples = (self.cfg.cells_per_row as u64).min(row_bits);
        let mut out = Vec::new();
        for (v, aggs) in victims {
            let below = aggs.iter().any(|&(h, _)| h < v);
            let above = aggs.iter().any(|&(h, _)| h > v);
            let double_sided = below && above;
            let self_hammered = aggs.iter().any(|&(h, _)| h == v);
            let rate = if self_hammered && !below && !above {
                self.cfg.flip_rate * 0.1
            } else if double_sided {
                (2.0 * self.cfg.flip_rate).min(1.0)
            } else {
                self.cfg.flip_rate
            };
            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[self.cfg.seed, self.window, bank as u64, v as u64]));
            let mut seen = HashSet::new();
            for _ in 0..samples {
                let bit = rng.gen_range(0..row_bits);
                let hit = rng.gen_bool(rate);
                if hit
                    && seen.insert(bit)
                    && !self.flipped.contains(&(bank, v, bit))
                    && charged(bank, v, bit)
                {
                    out.push((v, bit, double_sided, aggs.clone()));
                }
            }
        }
        out
    }
}

/// SplitMix64-style fold of a key into one seed word.
pub fn mix(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}
