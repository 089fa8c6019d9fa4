//! Set-associative cache hierarchy: L1D, L2 and a sliced, inclusive LLC.
//!
//! The same [`SetAssoc`] array backs the TLB levels and the paging-structure
//! caches, so replacement behaviour is shared across every structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

pub const INVALID: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplacementPolicy {
    TrueLru,
    TreePlru,
    RandomSeeded,
}

impl FromStr for ReplacementPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "lru" | "truelru" => Ok(Self::TrueLru),
            "plru" | "treeplru" => Ok(Self::TreePlru),
            "random" | "randomseeded" => Ok(Self::RandomSeeded),
            _ => Err(format!("unknown replacement policy `{s}`")),
        }
    }
}

impl fmt::Display for ReplacementPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TrueLru => "lru",
            Self::TreePlru => "plru",
            Self::RandomSeeded => "random",
        })
    }
}

/// A `sets x ways` tag array with a payload word per way.
#[derive(Debug, Clone)]
pub struct SetAssoc {
    sets: usize,
    ways: usize,
    policy: ReplacementPolicy,
    tags: Vec<u64>,
    vals: Vec<u64>,
    stamps: Vec<u64>,
    plru: Vec<u64>,
    tick: u64,
    rng: ChaCha8Rng,
}

impl SetAssoc {
    pub fn new(sets: usize, ways: usize, policy: ReplacementPolicy, seed: u64) -> Self {
        assert!(sets > 0 && ways > 0 && ways <= 32, "bad geometry {sets}x{ways}");
        Self {
            sets,
            ways,
            policy,
            tags: vec![INVALID; sets * ways],
            vals: vec![0; sets * ways],
            stamps: vec![0; sets * ways],
            plru: vec![0; sets],
            tick: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sets(&self) -> usize {
        self.sets
    }
    pub fn ways(&self) -> usize {
        self.ways
    }
    pub fn policy(&self) -> ReplacementPolicy {
        self.policy
    }

    pub fn find(&self, set: usize, tag: u64) -> Option<usize> {
        let base = set * self.ways;
        self.tags[base..base + self.ways].iter().position(|&t| t == tag)
    }

    pub fn value(&self, set: usize, way: usize) -> u64 {
        self.vals[set * self.ways + way]
    }

    pub fn tag(&self, set: usize, way: usize) -> u64 {
        self.tags[set * self.ways + way]
    }

    pub fn touch(&mut self, set: usize, way: usize) {
        self.tick += 1;
        self.stamps[set * self.ways + way] = self.tick;
        if self.policy == ReplacementPolicy::TreePlru {
            let bits = &mut self.plru[set];
            let (mut node, mut lo, mut hi) = (1usize, 0usize, self.ways);
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                // a set bit sends the next victim search right
                if way < mid {
                    *bits |= 1 << node;
                    hi = mid;
                    node *= 2;
                } else {
                    *bits &= !(1 << node);
                    lo = mid;
                    node = node * 2 + 1;
                }
            }
        }
    }

    /// Way that the next fill of `set` would replace.
    pub fn victim(&mut self, set: usize) -> usize {
        let base = set * self.ways;
        if let Some(w) = self.tags[base..base + self.ways].iter().position(|&t| t == INVALID) {
            return w;
        }
        match self.policy {
            ReplacementPolicy::TrueLru => (0..self.ways)
                .min_by_key(|&w| self.stamps[base + w])
                .unwrap_or(0),
            ReplacementPolicy::TreePlru => {
                let bits = self.plru[set];
                let (mut node, mut lo, mut hi) = (1usize, 0usize, self.ways);
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    if bits & (1 << node) != 0 {
                        lo = mid;
                        node = node * 2 + 1;
                    } else {
                        hi = mid;
                        node *= 2;
                    }
                }
                lo
            }
            ReplacementPolicy::RandomSeeded => self.rng.gen_range(0..self.ways),
        }
    }

    /// Fill `tag` into `set`, returning the displaced `(tag, value)` if any.
    pub fn insert(&mut self, set: usize, tag: u64, val: u64) -> Option<(u64, u64)> {
        let way = self.victim(set);
        let i = set * self.ways + way;
        let old = (self.tags[i] != INVALID).then(|| (self.tags[i], self.vals[i]));
        self.tags[i] = tag;
        self.vals[i] = val;
        self.touch(set, way);
        old
    }

    /// Overwrite a specific way without consulting the policy.
    pub fn put(&mut self, set: usize, way: usize, tag: u64, val: u64) {
        let i = set * self.ways + way;
        self.tags[i] = tag;
        self.vals[i] = val;
    }

    pub fn invalidate(&mut self, set: usize, tag: u64) -> Option<u64> {
        let way = self.find(set, tag)?;
        let i = set * self.ways + way;
        self.tags[i] = INVALID;
        Some(self.vals[i])
    }

    pub fn set_tags(&self, set: usize) -> &[u64] {
        &self.tags[set * self.ways..(set + 1) * self.ways]
    }

    /// Replace the replacement metadata of `set` with random state.
    pub fn scramble_meta(&mut self, set: usize, rng: &mut impl Rng) {
        for w in 0..self.ways {
            self.stamps[set * self.ways + w] = rng.gen_range(0..=self.tick);
        }
        self.plru[set] = rng.gen();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    L1,
    L2,
    Llc,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelConfig {
    pub sets: usize,
    pub ways: usize,
    pub latency: u32,
    pub policy: ReplacementPolicy,
}

/// How LLC set bits are derived from the line address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SetHash {
    /// Bits 6.. of the address taken directly.
    Identity,
    /// Identity index XORed with the given higher address bits, one mask per
    /// index bit.
    XorFold(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlcConfig {
    /// Sets per slice.
    pub sets: usize,
    pub ways: usize,
    pub latency: u32,
    pub policy: ReplacementPolicy,
    pub inclusive: bool,
    /// One physical-address mask per slice-index bit; the bit is the mask's parity.
    pub slice_masks: Vec<u64>,
    pub set_hash: SetHash,
}

impl LlcConfig {
    pub fn slices(&self) -> usize {
        1 << self.slice_masks.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheConfig {
    pub line_bytes: u64,
    pub l1: LevelConfig,
    pub l2: LevelConfig,
    pub llc: LlcConfig,
}

impl CacheConfig {
    pub fn level_bytes(&self, level: Level) -> u64 {
        let lb = self.line_bytes;
        match level {
            Level::L1 => (self.l1.sets * self.l1.ways) as u64 * lb,
            Level::L2 => (self.l2.sets * self.l2.ways) as u64 * lb,
            Level::Llc => (self.llc.sets * self.llc.ways * self.llc.slices()) as u64 * lb,
        }
    }

    pub fn set_index(&self, level: Level, paddr: u64) -> usize {
        let line = paddr / self.line_bytes;
        match level {
            Level::L1 => (line % self.l1.sets as u64) as usize,
            Level::L2 => (line % self.l2.sets as u64) as usize,
            Level::Llc => {
                let mut idx = line % self.llc.sets as u64;
                if let SetHash::XorFold(masks) = &self.llc.set_hash {
                    for (bit, m) in masks.iter().enumerate() {
                        idx ^= ((paddr & m).count_ones() as u64 & 1) << bit;
                    }
                    idx %= self.llc.sets as u64;
                }
                idx as usize
            }
        }
    }

    pub fn slice_index(&self, paddr: u64) -> usize {
        self.llc
            .slice_masks
            .iter()
            .enumerate()
            .fold(0, |acc, (bit, m)| acc | (((paddr & m).count_ones() as usize) & 1) << bit)
    }

    /// Flat LLC set id, `slice * sets + set`.
    pub fn llc_slot(&self, paddr: u64) -> usize {
        self.slice_index(paddr) * self.llc.sets + self.set_index(Level::Llc, paddr)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.line_bytes.is_power_of_two() {
            return Err("line size must be a power of two".into());
        }
        for (name, l) in [("l1", &self.l1), ("l2", &self.l2)] {
            if l.sets == 0 || l.ways == 0 || l.ways > 32 {
                return Err(format!("cache.{name}: bad geometry"));
            }
        }
        if self.llc.sets == 0 || self.llc.ways == 0 || self.llc.ways > 32 {
            return Err("cache.llc: bad geometry".into());
        }
        if !self.llc.inclusive {
            return Err("cache.llc: the LLC must be inclusive".into());
        }
        Ok(())
    }
}

/// Where an access was satisfied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitLevel {
    L1,
    L2,
    Llc,
    Memory,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheOutcome {
    pub level: HitLevel,
    /// Cache-side latency. A `Memory` outcome carries the LLC lookup time and
    /// the caller adds the DRAM latency.
    pub latency: u32,
    /// Line addresses evicted from the LLC by this access.
    pub evicted: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct CacheHierarchy {
    cfg: CacheConfig,
    l1: SetAssoc,
    l2: SetAssoc,
    llc: SetAssoc,
    misses: [u64; 3],
}

impl CacheHierarchy {
    pub fn new(cfg: CacheConfig, seed: u64) -> Self {
        let l1 = SetAssoc::new(cfg.l1.sets, cfg.l1.ways, cfg.l1.policy, seed ^ 0x11);
        let l2 = SetAssoc::new(cfg.l2.sets, cfg.l2.ways, cfg.l2.policy, seed ^ 0x22);
        let llc = SetAssoc::new(
            cfg.llc.sets * cfg.llc.slices(),
            cfg.llc.ways,
            cfg.llc.policy,
            seed ^ 0x33,
        );
        Self { cfg, l1, l2, llc, misses: [0; 3] }
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    /// Miss counters for L1, L2 and LLC.
    pub fn misses(&self) -> [u64; 3] {
        self.misses
    }

    fn line(&self, paddr: u64) -> u64 {
        paddr / self.cfg.line_bytes
    }

    pub fn access(&mut self, paddr: u64) -> CacheOutcome {
        let line = self.line(paddr);
        let s1 = self.cfg.set_index(Level::L1, paddr);
        if let Some(w) = self.l1.find(s1, line) {
            self.l1.touch(s1, w);
            return CacheOutcome { level: HitLevel::L1, latency: self.cfg.l1.latency, evicted: None };
        }
        self.misses[0] += 1;
        let s2 = self.cfg.set_index(Level::L2, paddr);
        if let Some(w) = self.l2.find(s2, line) {
            self.l2.touch(s2, w);
            self.l1.insert(s1, line, 0);
            return CacheOutcome { level: HitLevel::L2, latency: self.cfg.l2.latency, evicted: None };
        }
        self.misses[1] += 1;
        let s3 = self.cfg.llc_slot(paddr);
        if let Some(w) = self.llc.find(s3, line) {
            self.llc.touch(s3, w);
            self.l2.insert(s2, line, 0);
            self.l1.insert(s1, line, 0);
            return CacheOutcome { level: HitLevel::Llc, latency: self.cfg.llc.latency, evicted: None };
        }
        self.misses[2] += 1;
        let evicted = self.llc.insert(s3, line, 0).map(|(old, _)| old);
        if let Some(old) = evicted {
            self.back_invalidate(old);
        }
        self.l2.insert(s2, line, 0);
        self.l1.insert(s1, line, 0);
        CacheOutcome {
            level: HitLevel::Memory,
            latency: self.cfg.llc.latency,
            evicted: evicted.map(|l| l * self.cfg.line_bytes),
        }
    }

    fn back_invalidate(&mut self, line: u64) {
        let paddr = line * self.cfg.line_bytes;
        let s1 = self.cfg.set_index(Level::L1, paddr);
        let s2 = self.cfg.set_index(Level::L2, paddr);
        self.l1.invalidate(s1, line);
        self.l2.invalidate(s2, line);
    }

    /// clflush: drop the line from every level.
    pub fn flush_line(&mut self, paddr: u64) {
        let line = self.line(paddr);
        self.back_invalidate(line);
        let s3 = self.cfg.llc_slot(paddr);
        self.llc.invalidate(s3, line);
    }

    /// Which levels currently hold the line (L1, L2, LLC).
    pub fn probe(&self, paddr: u64) -> [bool; 3] {
        let line = self.line(paddr);
        [
            self.l1.find(self.cfg.set_index(Level::L1, paddr), line).is_some(),
            self.l2.find(self.cfg.set_index(Level::L2, paddr), line).is_some(),
            self.llc.find(self.cfg.llc_slot(paddr), line).is_some(),
        ]
    }

    /// Every line held in L1 or L2 is also in the LLC.
    pub fn inclusion_holds(&self) -> bool {
        let lb = self.cfg.line_bytes;
        [&self.l1, &self.l2].iter().all(|lvl| {
            (0..lvl.sets()).all(|s| {
                lvl.set_tags(s)
                    .iter()
                    .filter(|&&t| t != INVALID)
                    .all(|&t| self.llc.find(self.cfg.llc_slot(t * lb), t).is_some())
            })
        })
    }

    /// Direct access to the LLC array, for seeding experiment states.
    pub fn llc_mut(&mut self) -> &mut SetAssoc {
        &mut self.llc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(policy: ReplacementPolicy) -> CacheConfig {
        CacheConfig {
            line_bytes: 64,
            l1: LevelConfig { sets: 64, ways: 8, latency: 4, policy },
            l2: LevelConfig { sets: 512, ways: 8, latency: 12, policy },
            llc: LlcConfig {
                sets: 2048,
                ways: 12,
                latency: 40,
                policy,
                inclusive: true,
                slice_masks: vec![(1 << 17) | (1 << 18)],
                set_hash: SetHash::Identity,
            },
        }
    }

    #[test]
    fn l1_index_uses_bits_6_to_11() {
        let c = cfg(ReplacementPolicy::TrueLru);
        assert_eq!(c.set_index(Level::L1, 0x1040), 1);
        assert_eq!(c.set_index(Level::L1, 0), 0);
        assert_eq!(c.set_index(Level::L1, 0xfc0), 63);
        assert_eq!(c.set_index(Level::L1, 0x1000), 0);
    }

    #[test]
    fn llc_index_ignores_bits_above_16() {
        let c = cfg(ReplacementPolicy::TrueLru);
        let p = 0x1_2345_6780u64 & !((1 << 17) - 1) | 0x1_abc0;
        let q = p ^ (0x5f << 17);
        assert_eq!(c.set_index(Level::Llc, p), c.set_index(Level::Llc, q));
        assert_eq!(c.set_index(Level::Llc, 0x1_ffc0), 2047);
    }

    #[test]
    fn slice_is_parity_of_masked_bits() {
        let c = cfg(ReplacementPolicy::TrueLru);
        assert_eq!(c.slice_index(1 << 17), 1);
        assert_eq!(c.slice_index((1 << 17) | (1 << 18)), 0);
        let mut one = c.clone();
        one.llc.slice_masks.clear();
        assert_eq!(one.slice_index(0xdead_beef), 0);
    }

    #[test]
    fn warm_hit_is_l1() {
        let mut h = CacheHierarchy::new(cfg(ReplacementPolicy::TrueLru), 1);
        assert_eq!(h.access(0x4000).level, HitLevel::Memory);
        let o = h.access(0x4000);
        assert_eq!(o.level, HitLevel::L1);
        assert_eq!(o.latency, 4);
    }

    #[test]
    fn flush_then_access_misses_everywhere() {
        let mut h = CacheHierarchy::new(cfg(ReplacementPolicy::TrueLru), 1);
        h.access(0x4000);
        h.flush_line(0x4000);
        assert_eq!(h.probe(0x4000), [false; 3]);
        h.flush_line(0x9000);
        assert_eq!(h.access(0x4000).level, HitLevel::Memory);
    }

    #[test]
    fn llc_eviction_back_invalidates() {
        let c = cfg(ReplacementPolicy::TrueLru);
        let mut h = CacheHierarchy::new(c.clone(), 1);
        let target = 0x40u64;
        h.access(target);
        // same LLC set and slice: stride 2^17 with the slice bits kept even
        let congruent: Vec<u64> = (1..)
            .map(|k| target + (k as u64) * (1 << 17))
            .filter(|&p| c.llc_slot(p) == c.llc_slot(target))
            .take(12)
            .collect();
        for &p in &congruent {
            h.access(p);
        }
        assert_eq!(h.probe(target), [false; 3]);
        assert!(h.inclusion_holds());
    }

    #[test]
    fn plru_tree_visits_every_way_on_consecutive_misses() {
        for ways in [2, 4, 8, 16] {
            let mut s = SetAssoc::new(1, ways, ReplacementPolicy::TreePlru, 0);
            for t in 0..ways as u64 {
                s.insert(0, t, 0);
            }
            let mut seen = std::collections::BTreeSet::new();
            for t in 100..100 + ways as u64 {
                let w = s.victim(0);
                seen.insert(w);
                s.insert(0, t, 0);
            }
            assert_eq!(seen.len(), ways, "ways={ways}");
        }
    }
}
