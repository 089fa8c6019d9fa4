//! Choose the pool set that evicts a target's L1PTE, and check
//! the choice against the page tables.

use telehammer::config::{preset, EvictionConfig};
use telehammer::eviction::{
    build_tlb_eviction_set, minimal_tlb_eviction_size, prepare_llc_pool, select_llc_eviction_set, TlbBuffer,
};
use telehammer::mmu::{Machine, PageMode};

fn main() {
    let mut m = Machine::new(preset("desk").unwrap()).unwrap();
    let buf = TlbBuffer::allocate(&mut m).unwrap();
    let pool = prepare_llc_pool(&mut m, PageMode::Regular).unwrap();
    let base = 0x40_0000_0000u64;
    m.map_region(base, 4 << 21, PageMode::Regular).unwrap();
    let size = minimal_tlb_eviction_size(&mut m, &buf, base + 0x9000, &EvictionConfig::default()).unwrap().size;

    let mut hits = 0;
    let n = 32u64;
    for i in 0..n {
        let target = base + (i % 4) * (1 << 21) + (8 + i * 37 % 500) * 4096;
        let tlb = build_tlb_eviction_set(&m, &buf, target, size).unwrap();
        let sel = select_llc_eviction_set(&mut m, &pool, &tlb, target).unwrap();
        let truth = m.config().cache.llc_slot(m.l1pte_addr_oracle(target).unwrap());
        hits += (sel.set.hint == Some(truth)) as u32;
    }
    println!("{hits}/{n} selections congruent with the L1PTE");
}
