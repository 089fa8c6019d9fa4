//! Calibrate the row-conflict threshold for L1PTE pairs and show the two
//! latency populations.

use telehammer::attack::Session;
use telehammer::config::Scenario;

fn main() {
    let sc = Scenario::from_preset("desk").unwrap();
    let mut s = Session::prepare(&sc).unwrap();
    s.build_eviction().unwrap();
    let cal = s.calibrate().unwrap();
    println!("threshold {} precision {:.3} two-rows {:.3}", cal.threshold, cal.precision, cal.two_rows);

    let (mut same, mut diff) = (Vec::new(), Vec::new());
    for p in &s.samples {
        if p.same_bank { same.push(p.latency) } else { diff.push(p.latency) }
    }
    let mean = |v: &[u32]| v.iter().map(|&x| x as f64).sum::<f64>() / v.len().max(1) as f64;
    println!("same bank: {} samples, mean {:.1}", same.len(), mean(&same));
    println!("diff bank: {} samples, mean {:.1}", diff.len(), mean(&diff));
}
