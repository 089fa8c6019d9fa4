//! End-to-end implicit hammering on a preset, printing the report CSV.
//!
//! cargo run --release --example pthammer -- t420 super

use telehammer::attack::Session;
use telehammer::config::Scenario;
use telehammer::mmu::PageMode;
use telehammer::report;

fn main() {
    let mut args = std::env::args().skip(1);
    let mut sc = Scenario::from_preset(&args.next().unwrap_or_else(|| "desk".into())).unwrap();
    if args.next().as_deref() == Some("super") {
        sc.attack.mode = PageMode::Super;
    }
    let mut s = Session::setup(&sc).unwrap();
    let r = s.run().unwrap();
    println!(
        "{} rounds, first L1-row flip at {:?}, {} flips, causality {}",
        r.rounds,
        r.first_flip_round,
        r.flips.len(),
        r.causality_ok
    );
    report::write_reports(std::io::stdout(), &[r]).unwrap();
}
