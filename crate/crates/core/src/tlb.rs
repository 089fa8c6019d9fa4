//! Two-level data TLB (L1 dTLB, shared L2 sTLB) indexed by virtual page number.

use crate::cache::{ReplacementPolicy, SetAssoc, INVALID};
use rand::seq::SliceRandom;
use rand::Rng;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inclusion {
    /// Misses fill the L1 only; L1 victims move to the L2 and an L2 hit moves
    /// the entry back up. The two levels never hold the same page.
    NonInclusive,
    /// Misses fill both levels and an L2 eviction removes the L1 copy.
    Inclusive,
}

impl FromStr for Inclusion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "noninclusive" | "non-inclusive" => Ok(Self::NonInclusive),
            "inclusive" => Ok(Self::Inclusive),
            _ => Err(format!("unknown TLB inclusion policy `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlbMapping {
    /// `vpn mod sets`
    Linear,
    /// Low index bits XORed with the next group of vpn bits.
    Xor,
}

impl FromStr for TlbMapping {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(Self::Linear),
            "xor" => Ok(Self::Xor),
            _ => Err(format!("unknown TLB mapping `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlbConfig {
    pub l1_sets: usize,
    pub l1_ways: usize,
    pub l2_sets: usize,
    pub l2_ways: usize,
    pub policy: ReplacementPolicy,
    pub inclusion: Inclusion,
    pub mapping: TlbMapping,
    pub hit_latency: u32,
    /// Set members left resident in the dTLB set by background activity
    /// between profiling repetitions.
    pub noise_resident: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PageSize {
    Small,
    Huge,
}

/// Tag of one translation: the page number in units of its own size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PageKey {
    pub number: u64,
    pub size: PageSize,
}

impl PageKey {
    pub fn of(vaddr: u64, size: PageSize) -> Self {
        let number = match size {
            PageSize::Small => vaddr >> 12,
            PageSize::Huge => vaddr >> 21,
        };
        Self { number, size }
    }
    fn tag(self) -> u64 {
        self.number << 1 | (self.size == PageSize::Huge) as u64
    }
    fn from_tag(t: u64) -> Self {
        let size = if t & 1 == 1 { PageSize::Huge } else { PageSize::Small };
        Self { number: t >> 1, size }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlbHit {
    L1,
    L2,
    Miss,
}

pub fn tlb_set_index(cfg: &TlbConfig, level: u8, number: u64) -> usize {
    let sets = if level == 1 { cfg.l1_sets } else { cfg.l2_sets } as u64;
    match cfg.mapping {
        TlbMapping::Linear => (number % sets) as usize,
        TlbMapping::Xor => {
            let bits = sets.trailing_zeros();
            ((number ^ (number >> bits)) % sets) as usize
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tlb {
    cfg: TlbConfig,
    l1: SetAssoc,
    l2: SetAssoc,
    misses: u64,
    filler: u64,
}

/// Tags for filler entries never collide with a real page number.
const FILLER_BASE: u64 = 1 << 62;

impl Tlb {
    pub fn new(cfg: TlbConfig, seed: u64) -> Self {
        let l1 = SetAssoc::new(cfg.l1_sets, cfg.l1_ways, cfg.policy, seed ^ 0x71);
        let l2 = SetAssoc::new(cfg.l2_sets, cfg.l2_ways, cfg.policy, seed ^ 0x72);
        Self { cfg, l1, l2, misses: 0, filler: FILLER_BASE }
    }

    pub fn config(&self) -> &TlbConfig {
        &self.cfg
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    fn sets(&self, key: PageKey) -> (usize, usize) {
        (
            tlb_set_index(&self.cfg, 1, key.number),
            tlb_set_index(&self.cfg, 2, key.number),
        )
    }

    /// Look a page up; a hit returns the cached payload.
    pub fn lookup(&mut self, key: PageKey) -> (TlbHit, Option<u64>) {
        let (s1, s2) = self.sets(key);
        let tag = key.tag();
        if let Some(w) = self.l1.find(s1, tag) {
            self.l1.touch(s1, w);
            return (TlbHit::L1, Some(self.l1.value(s1, w)));
        }
        if let Some(w) = self.l2.find(s2, tag) {
            let val = self.l2.value(s2, w);
            match self.cfg.inclusion {
                Inclusion::NonInclusive => {
                    self.l2.invalidate(s2, tag);
                    self.fill_l1_exclusive(s1, tag, val);
                }
                Inclusion::Inclusive => {
                    self.l2.touch(s2, w);
                    self.l1.insert(s1, tag, val);
                }
            }
            return (TlbHit::L2, Some(val));
        }
        self.misses += 1;
        (TlbHit::Miss, None)
    }

    fn fill_l1_exclusive(&mut self, s1: usize, tag: u64, val: u64) {
        if let Some((old, oval)) = self.l1.insert(s1, tag, val) {
            let os2 = tlb_set_index(&self.cfg, 2, PageKey::from_tag(old).number);
            self.l2.insert(os2, old, oval);
        }
    }

    /// Install a translation after a walk.
    pub fn fill(&mut self, key: PageKey, val: u64) {
        let (s1, s2) = self.sets(key);
        let tag = key.tag();
        match self.cfg.inclusion {
            Inclusion::NonInclusive => self.fill_l1_exclusive(s1, tag, val),
            Inclusion::Inclusive => {
                if let Some((old, _)) = self.l2.insert(s2, tag, val) {
                    let os1 = tlb_set_index(&self.cfg, 1, PageKey::from_tag(old).number);
                    self.l1.invalidate(os1, old);
                }
                self.l1.insert(s1, tag, val);
            }
        }
    }

    /// invlpg: drop the page from both levels.
    pub fn invalidate(&mut self, key: PageKey) {
        let (s1, s2) = self.sets(key);
        self.l1.invalidate(s1, key.tag());
        self.l2.invalidate(s2, key.tag());
    }

    /// Which levels hold the page.
    pub fn probe(&self, key: PageKey) -> (bool, bool) {
        let (s1, s2) = self.sets(key);
        (self.l1.find(s1, key.tag()).is_some(), self.l2.find(s2, key.tag()).is_some())
    }

    /// Model background activity between profiling repetitions: the dTLB set
    /// of `target` gets random replacement state, up to `noise_resident`
    /// random members of `members` are left in it, and the other ways hold
    /// unrelated translations.
    /// Members carry the payload a real fill would have stored.
    pub fn perturb(&mut self, target: PageKey, members: &[(PageKey, u64)], rng: &mut impl Rng) {
        let (s1, _) = self.sets(target);
        let mut pool: Vec<(PageKey, u64)> = members
            .iter()
            .copied()
            .filter(|(k, _)| tlb_set_index(&self.cfg, 1, k.number) == s1 && *k != target)
            .collect();
        pool.shuffle(rng);
        let resident = self.cfg.noise_resident.min(pool.len()).min(self.cfg.l1_ways);
        for (k, _) in &pool[..resident] {
            self.invalidate(*k);
        }
        let mut ways: Vec<usize> = (0..self.cfg.l1_ways).collect();
        ways.shuffle(rng);
        for (i, &w) in ways.iter().enumerate() {
            let old = self.l1.tag(s1, w);
            if old != INVALID && old < FILLER_BASE {
                // a real translation pushed out by the noise
                let key = PageKey::from_tag(old);
                let os2 = tlb_set_index(&self.cfg, 2, key.number);
                if self.cfg.inclusion == Inclusion::NonInclusive {
                    self.l2.insert(os2, old, self.l1.value(s1, w));
                }
            }
            if i < resident {
                self.l1.put(s1, w, pool[i].0.tag(), pool[i].1);
            } else {
                self.filler += 2;
                self.l1.put(s1, w, self.filler, 0);
            }
        }
        self.l1.scramble_meta(s1, rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(policy: ReplacementPolicy) -> TlbConfig {
        TlbConfig {
            l1_sets: 16,
            l1_ways: 4,
            l2_sets: 128,
            l2_ways: 4,
            policy,
            inclusion: Inclusion::NonInclusive,
            mapping: TlbMapping::Linear,
            hit_latency: 1,
            noise_resident: 2,
        }
    }

    fn k(n: u64) -> PageKey {
        PageKey { number: n, size: PageSize::Small }
    }

    #[test]
    fn linear_mapping() {
        let c = cfg(ReplacementPolicy::TrueLru);
        assert_eq!(tlb_set_index(&c, 1, 16), 0);
        assert_eq!(tlb_set_index(&c, 1, 5), 5);
        assert_eq!(tlb_set_index(&c, 2, 130), 2);
    }

    #[test]
    fn xor_mapping_table() {
        let mut c = cfg(ReplacementPolicy::TrueLru);
        c.mapping = TlbMapping::Xor;
        // vpn 0x13: low nibble 3 ^ next nibble 1 = 2
        assert_eq!(tlb_set_index(&c, 1, 0x13), 2);
        assert_eq!(tlb_set_index(&c, 1, 0xff), 0);
        assert_eq!(tlb_set_index(&c, 1, 0x2a), 8);
    }

    #[test]
    fn fill_then_hit() {
        let mut t = Tlb::new(cfg(ReplacementPolicy::TrueLru), 0);
        assert_eq!(t.lookup(k(7)).0, TlbHit::Miss);
        t.fill(k(7), 42);
        assert_eq!(t.lookup(k(7)), (TlbHit::L1, Some(42)));
        assert_eq!(t.misses(), 1);
    }

    #[test]
    fn l1_victim_moves_to_l2() {
        let mut t = Tlb::new(cfg(ReplacementPolicy::TrueLru), 0);
        t.fill(k(0), 1);
        for i in 1..=4u64 {
            t.fill(k(i * 128), 0);
        }
        assert_eq!(t.probe(k(0)), (false, true));
        assert_eq!(t.lookup(k(0)).0, TlbHit::L2);
        assert_eq!(t.probe(k(0)), (true, false));
    }

    #[test]
    fn invalidate_both_levels() {
        let mut t = Tlb::new(cfg(ReplacementPolicy::TrueLru), 0);
        t.fill(k(3), 0);
        t.invalidate(k(3));
        assert_eq!(t.lookup(k(3)).0, TlbHit::Miss);
        t.invalidate(k(99));
    }
}
