//! Four-level x86-64 style radix page tables stored in simulated frames.

use std::collections::HashMap;

pub const PTE_P: u64 = 1;
pub const PTE_RW: u64 = 1 << 1;
pub const PTE_US: u64 = 1 << 2;
pub const PTE_PS: u64 = 1 << 7;
pub const FRAME_MASK: u64 = 0x000f_ffff_ffff_f000;

pub fn pte_frame(pte: u64) -> u64 {
    (pte & FRAME_MASK) >> 12
}

pub fn make_pte(frame: u64, flags: u64) -> u64 {
    (frame << 12) & FRAME_MASK | flags
}

/// Index into the table at `level` (4 = PML4 .. 1 = PT).
pub fn level_index(vaddr: u64, level: u8) -> usize {
    ((vaddr >> (12 + 9 * (level as u64 - 1))) & 511) as usize
}

/// One step of a software walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkStep {
    pub level: u8,
    pub table: u64,
    pub index: usize,
    pub pte: u64,
}

impl WalkStep {
    pub fn entry_paddr(&self) -> u64 {
        self.table * 4096 + self.index as u64 * 8
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Walk {
    pub steps: Vec<WalkStep>,
    /// Physical address the walk resolves to, if the leaf is present.
    pub paddr: Option<u64>,
    pub huge: bool,
}

#[derive(Debug, Clone)]
pub struct PageTables {
    root: u64,
    tables: HashMap<u64, Box<[u64; 512]>>,
    levels: HashMap<u64, u8>,
    /// Level-1 table frame -> base of the 2MiB virtual span it maps.
    l1_span: HashMap<u64, u64>,
}

impl PageTables {
    pub fn new(root: u64) -> Self {
        let mut t = Self {
            root,
            tables: HashMap::new(),
            levels: HashMap::new(),
            l1_span: HashMap::new(),
        };
        t.tables.insert(root, Box::new([0; 512]));
        t.levels.insert(root, 4);
        t
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn is_table(&self, frame: u64) -> bool {
        self.tables.contains_key(&frame)
    }

    pub fn level_of(&self, frame: u64) -> Option<u8> {
        self.levels.get(&frame).copied()
    }

    pub fn l1_tables(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.l1_span.iter().map(|(&f, &v)| (f, v))
    }

    pub fn l1_span_of(&self, frame: u64) -> Option<u64> {
        self.l1_span.get(&frame).copied()
    }

    pub fn l1_count(&self) -> usize {
        self.l1_span.len()
    }

    pub fn entry(&self, table: u64, index: usize) -> u64 {
        self.tables.get(&table).map_or(0, |t| t[index])
    }

    pub fn set_entry(&mut self, table: u64, index: usize, pte: u64) {
        if let Some(t) = self.tables.get_mut(&table) {
            t[index] = pte;
        }
    }

    /// Bit value of a table frame at byte offset `off`, bit `bit` (0..8).
    pub fn bit(&self, frame: u64, off: u64, bit: u64) -> Option<bool> {
        let t = self.tables.get(&frame)?;
        let pte = t[(off / 8) as usize];
        Some(pte >> ((off % 8) * 8 + bit) & 1 == 1)
    }

    pub fn clear_bit(&mut self, frame: u64, off: u64, bit: u64) {
        if let Some(t) = self.tables.get_mut(&frame) {
            t[(off / 8) as usize] &= !(1u64 << ((off % 8) * 8 + bit));
        }
    }

    /// Map `vaddr` to `frame`, creating intermediate tables with `alloc`.
    pub fn map(
        &mut self,
        vaddr: u64,
        frame: u64,
        huge: bool,
        alloc: &mut dyn FnMut() -> Option<u64>,
    ) -> Option<()> {
        let leaf_level = if huge { 2 } else { 1 };
        let mut table = self.root;
        for level in (leaf_level + 1..=4u8).rev() {
            let idx = level_index(vaddr, level);
            let pte = self.entry(table, idx);
            table = if pte & PTE_P != 0 {
                pte_frame(pte)
            } else {
                let f = alloc()?;
                self.tables.insert(f, Box::new([0; 512]));
                self.levels.insert(f, level - 1);
                if level - 1 == 1 {
                    self.l1_span.insert(f, vaddr & !((1 << 21) - 1));
                }
                self.set_entry(table, idx, make_pte(f, PTE_P | PTE_RW | PTE_US));
                f
            };
        }
        let flags = PTE_P | PTE_RW | PTE_US | if huge { PTE_PS } else { 0 };
        self.set_entry(table, level_index(vaddr, leaf_level), make_pte(frame, flags));
        Some(())
    }

    pub fn walk(&self, vaddr: u64) -> Walk {
        let mut steps = Vec::with_capacity(4);
        let mut table = self.root;
        for level in (1..=4u8).rev() {
            let index = level_index(vaddr, level);
            let pte = self.entry(table, index);
            steps.push(WalkStep { level, table, index, pte });
            if pte & PTE_P == 0 {
                return Walk { steps, paddr: None, huge: false };
            }
            if level == 2 && pte & PTE_PS != 0 {
                let base = pte_frame(pte) << 12 & !((1 << 21) - 1);
                return Walk { steps, paddr: Some(base | (vaddr & ((1 << 21) - 1))), huge: true };
            }
            if level == 1 {
                return Walk { steps, paddr: Some(pte_frame(pte) << 12 | (vaddr & 0xfff)), huge: false };
            }
            table = pte_frame(pte);
            if !self.tables.contains_key(&table) {
                // a corrupted entry pointing at a non-table frame
                return Walk { steps, paddr: None, huge: false };
            }
        }
        unreachable!()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_and_walk() {
        let mut next = 10u64;
        let mut alloc = || {
            next += 1;
            Some(next)
        };
        let mut pt = PageTables::new(1);
        let v = 0x7f12_3456_7000u64;
        pt.map(v, 999, false, &mut alloc).unwrap();
        let w = pt.walk(v + 0x123);
        assert_eq!(w.paddr, Some(999 * 4096 + 0x123));
        assert_eq!(w.steps.len(), 4);
        let l1 = w.steps[3];
        assert_eq!(l1.level, 1);
        assert_eq!(l1.entry_paddr() % 4096, ((v >> 12) & 511) * 8);
        assert_eq!(pt.l1_count(), 1);
    }

    #[test]
    fn huge_keeps_low_21_bits() {
        let mut next = 10u64;
        let mut alloc = || {
            next += 1;
            Some(next)
        };
        let mut pt = PageTables::new(1);
        let v = 0x4000_0000u64;
        pt.map(v, 512 * 7, true, &mut alloc).unwrap();
        let w = pt.walk(v + 0x1a_bcde);
        assert!(w.huge);
        assert_eq!(w.paddr.unwrap() & 0x1f_ffff, 0x1a_bcde);
        assert_eq!(pt.l1_count(), 0);
    }
}
