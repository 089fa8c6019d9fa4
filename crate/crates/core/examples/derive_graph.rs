//! Derive the memory graph of one access from the simulator, cold and after
//! the translation has been cached.

use telehammer::config::preset;
use telehammer::memgraph::derive_graph_from_sim;
use telehammer::mmu::{Machine, PageMode};

fn main() {
    let mut m = Machine::new(preset("desk").unwrap()).unwrap();
    let va = 0x40_0000_3000;
    m.map_region(va, 4096, PageMode::Regular).unwrap();

    for label in ["cold", "warm"] {
        let d = derive_graph_from_sim(&m, va).unwrap();
        let (path, lat) = d.graph.shortest_path(d.m_a, d.end).unwrap();
        println!("{label}: {} cycles, {} PTE rows", lat, d.pte_rows.len());
        println!("  {}", d.graph.path_names(&path).join(" -> "));
        m.mem_access(va).unwrap();
    }
}
