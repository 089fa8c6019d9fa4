//! Build a small memory graph by hand and ask both feasibility questions.

use telehammer::memgraph::{FeasibilityParams, MemGraph, NodeKind};

fn main() {
    let mut g = MemGraph::new();
    let user = g.add_entity("user").unwrap();
    let mmu = g.add_entity("mmu").unwrap();
    let va = g.add_node("va", NodeKind::Register, None, true, false).unwrap();
    let line = g.add_node("pte_line", NodeKind::CacheLine, None, false, false).unwrap();
    let buf = g.add_node("rowbuf", NodeKind::RowBuffer, None, true, false).unwrap();
    let row = g.add_node("pt_row", NodeKind::DramRow, Some(10), true, true).unwrap();
    let victim = g.add_node("victim", NodeKind::DramRow, Some(11), true, true).unwrap();
    g.grant(va, user);
    for n in [va, line, buf, row, victim] {
        g.grant(n, mmu);
    }
    g.add_edge(va, mmu, line, 40).unwrap();
    g.add_edge(va, mmu, buf, 200).unwrap();
    g.add_edge(buf, mmu, row, 100).unwrap();

    let p = FeasibilityParams { r_max: 1, t_max: 500, t_set: 150, t_node_attacker: 4, t_delta: 0 };
    let tele = g.check_telehammer(user, va, row, victim, &p).unwrap();
    println!("telehammer feasible={} latency={}", tele.feasible, tele.total_latency);
    if let Some(w) = &tele.witness {
        println!("  path {}", g.path_names(w).join(" -> "));
    }
    // the user cannot open the table row itself
    let peri = g.check_perihammer(user, row, victim, &p);
    println!("perihammer feasible={} failed={:?}", peri.feasible, peri.failed);

    print!("\n{}", g.to_text());
}
