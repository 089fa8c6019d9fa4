//! Minimal TLB eviction-set size under true LRU and tree-PLRU TLB replacement.

use telehammer::cache::ReplacementPolicy;
use telehammer::config::{preset, EvictionConfig};
use telehammer::eviction::{minimal_tlb_eviction_size, TlbBuffer};
use telehammer::mmu::{Machine, PageMode};

fn main() {
    let target = 0x40_0000_5000;
    for policy in [ReplacementPolicy::TrueLru, ReplacementPolicy::TreePlru] {
        let mut cfg = preset("desk").unwrap();
        cfg.tlb.policy = policy;
        let mut m = Machine::new(cfg).unwrap();
        let buf = TlbBuffer::allocate(&mut m).unwrap();
        m.map_region(target, 4096, PageMode::Regular).unwrap();
        let r = minimal_tlb_eviction_size(&mut m, &buf, target, &EvictionConfig::default()).unwrap();
        println!("{policy:?}: minimal size {} (threshold {}/{})", r.size, r.threshold, r.repetitions);
        for (n, misses) in &r.log {
            println!("  {n:>2} pages -> {misses} misses");
        }
    }
}
