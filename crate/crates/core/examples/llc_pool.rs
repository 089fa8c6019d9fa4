//! Prepare the LLC eviction pool in both page modes and round-trip it
//! through its text form.

use telehammer::config::preset;
use telehammer::eviction::{prepare_llc_pool, EvictionPool};
use telehammer::mmu::{Machine, PageMode};

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "desk".into());
    for mode in [PageMode::Super, PageMode::Regular] {
        let mut m = Machine::new(preset(&name).unwrap()).unwrap();
        let t = std::time::Instant::now();
        let pool = prepare_llc_pool(&mut m, mode).unwrap();
        println!("{name} {mode:?}: {} sets, {} timed probes, {:?}", pool.sets.len(), pool.probes, t.elapsed());
        let back = EvictionPool::from_text(&pool.to_text(), mode, pool.threshold).unwrap();
        assert_eq!(back.sets.len(), pool.sets.len());
    }
}
