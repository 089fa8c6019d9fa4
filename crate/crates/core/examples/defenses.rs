//! The explicit baseline against implicit hammering under CATT, CTA and
//! ZebRAM.

use telehammer::attack::Session;
use telehammer::config::{default_lwm, AttackKind, DefenseLayout, Scenario};

fn run(sc: &Scenario) -> telehammer::attack::HammerReport {
    Session::setup(sc).unwrap().run().unwrap()
}

fn main() {
    let mut sc = Scenario::from_preset("desk").unwrap();
    sc.attack.budget = 40_000;

    sc.attack.defense = DefenseLayout::Catt { guard_rows: 2 };
    sc.attack.kind = AttackKind::Baseline;
    let base = run(&sc);
    sc.attack.kind = AttackKind::Pthammer;
    let pt = run(&sc);
    println!("catt: baseline kernel-row flips {}, pthammer exploitable {}", base.kernel_row_flips(), pt.exploitable());

    sc.attack.defense = DefenseLayout::Cta { low_water_mark: default_lwm(&sc.machine) };
    let r = run(&sc);
    let below = r.flips.iter().filter(|f| f.below_lwm == Some(true)).count();
    let frame = r.flips.iter().filter(|f| f.below_lwm.is_some()).count();
    println!("cta: {below}/{frame} frame flips below the mark, cred hits {}", r.cred_hits());

    sc.attack.defense = DefenseLayout::ZebRam;
    sc.attack.stride_rowsizes = 1;
    sc.attack.stop_at_exploitable = false;
    for r_max in [1, 2] {
        sc.machine.dram.r_max = r_max;
        println!("zebram r_max={r_max}: safe-row flips {}", run(&sc).safe_row_flips());
    }
}
