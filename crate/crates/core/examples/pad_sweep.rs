//! Pad every hammer round and watch the flips disappear once a round no
//! longer fits the activation budget. Cells run in parallel.

use telehammer::cli::sweep_pad;
use telehammer::config::Scenario;
use telehammer::report::write_sweep;

fn main() {
    let sc = Scenario::from_preset("desk").unwrap();
    let pads: Vec<u64> = (0..=400).step_by(50).collect();
    let rows = sweep_pad(&sc, &pads, 1).unwrap();
    write_sweep(std::io::stdout(), &rows).unwrap();
}
