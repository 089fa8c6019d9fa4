//! One pass/fail line per acceptance criterion. Runs without the libtest
//! harness so the lines always show.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::time::{Duration, Instant};
use telehammer::attack::Session;
use telehammer::cache::ReplacementPolicy;
use telehammer::cli::run_loaded;
use telehammer::config::{default_lwm, AttackKind, DefenseLayout, Scenario};
use telehammer::mmu::PageMode;
use telehammer::report::{FLIPS_HEADER, REPORT_HEADER};

struct Verdict {
    id: u32,
    pass: bool,
    detail: String,
}

fn timed(id: u32, limit: Duration, f: impl FnOnce() -> (bool, String)) -> Verdict {
    let t = Instant::now();
    let (ok, detail) = f();
    let el = t.elapsed();
    let in_time = el < limit;
    Verdict { id, pass: ok && in_time, detail: format!("{detail}; {:.2}s (limit {}s)", el.as_secs_f64(), limit.as_secs()) }
}

fn formal_suite() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut fold_ok = 0;
    for _ in 0..1000 {
        let len = rng.gen_range(1..=32);
        let lats: Vec<u64> = (0..len).map(|_| rng.gen_range(0..1_000_000)).collect();
        let (g, path) = common::chain(&lats);
        fold_ok += (g.path_latency(&path).unwrap() == lats.iter().fold(0, |a, b| a + b)) as u32;
    }
    let (mut equiv, mut mono, mut feasible) = (0, 0, 0);
    for _ in 0..1000 {
        let n = rng.gen_range(3..10);
        let mut s = common::random_scenario(&mut rng, n);
        let tele = s.g.check_telehammer(s.attacker, s.m_h, s.m_h, s.m_v, &s.p).unwrap();
        let peri = s.g.check_perihammer(s.attacker, s.m_h, s.m_v, &s.p);
        equiv += (tele.feasible == peri.feasible && tele.failed == peri.failed) as u32;
        let before = s.g.check_telehammer(s.attacker, s.m_a, s.m_h, s.m_v, &s.p).unwrap();
        feasible += before.feasible as u32;
        s.p.t_max += rng.gen_range(0..2000);
        let after = s.g.check_telehammer(s.attacker, s.m_a, s.m_h, s.m_v, &s.p).unwrap();
        mono += (!before.feasible || after.feasible) as u32;
    }
    let ok = fold_ok == 1000 && equiv == 1000 && mono == 1000 && feasible > 0 && feasible < 1000;
    (ok, format!("fold-sum {fold_ok}/1000, tele=peri {equiv}/1000, t_max monotone {mono}/1000 ({feasible} feasible)"))
}

fn eviction_oracles() -> (bool, String) {
    let (mut m, buf, lru) = common::tlb_min_size("desk", ReplacementPolicy::TrueLru);
    let t = m.config().tlb.clone();
    let model = common::lru_min_eviction(t.l1_ways, t.l2_ways, 16);
    let subsets = common::subset_min_size(&mut m, &buf, 20, 19, 12, 5);
    let (_, _, plru) = common::tlb_min_size("desk", ReplacementPolicy::TreePlru);
    let reps = plru.repetitions as f64;
    let kept = plru.log.iter().find(|(n, _)| *n == plru.size).unwrap().1 as f64 / reps;
    let last = plru.log.last().unwrap().1 as f64 / reps;
    let ok = lru.size == 8 && model == Some(8) && subsets == Some(8) && plru.size > 8 && kept >= 0.95 && last < 0.95;
    (
        ok,
        format!(
            "LRU size {} (model {model:?}, subsets {subsets:?}); PLRU size {} at {:.0}%, final step {:.0}%",
            lru.size,
            plru.size,
            kept * 100.0,
            last * 100.0
        ),
    )
}

fn llc_selection() -> (bool, String) {
    let r = common::llc_select_congruence("t420", PageMode::Regular, 200, 31);
    let s = common::llc_select_congruence("t420", PageMode::Super, 200, 32);
    (r >= 188 && s >= 188, format!("t420 regular {r}/200, super {s}/200 congruent (need 188)"))
}

fn row_pairs() -> (bool, String) {
    let mut s = common::instrumented(&Scenario::from_preset("desk").unwrap());
    let a = common::audit_pairs(&mut s, 200);
    let ok = a.passing > 0 && a.same_bank_rate() >= 0.95 && a.two_row_rate() >= 0.90;
    (
        ok,
        format!(
            "{} of {} pairs pass; same bank {:.1}%, two rows apart {:.1}%",
            a.passing,
            a.probed,
            a.same_bank_rate() * 100.0,
            a.two_row_rate() * 100.0
        ),
    )
}

fn timing_gate() -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for mode in [PageMode::Regular, PageMode::Super] {
        let g = common::timing_gate("t420", mode, 1500);
        let rate = g.within as f64 / g.measured as f64;
        ok &= rate >= 0.94 && g.first_flip.is_some() && g.padded_min_cost > 1500 && g.padded_flips == 0;
        parts.push(format!(
            "{mode:?}: {}/{} rounds <=1500, first flip {:?}, padded >= {} cycles: {} flips in {} rounds",
            g.within, g.measured, g.first_flip, g.padded_min_cost, g.padded_flips, g.padded_rounds
        ));
    }
    (ok, parts.join("; "))
}

fn end_to_end() -> (bool, String) {
    let sc = Scenario::from_preset("desk").unwrap();
    let a = common::end_to_end(&sc);
    let b = common::end_to_end(&sc);
    let same = a.report.flips == b.report.flips && a.report.round_cycles == b.report.round_cycles;
    let ok = a.l1_row_flips >= 1 && a.direct_table_accesses == 0 && a.causality && same;
    (
        ok,
        format!(
            "{} L1-row flips (first at round {:?}), direct table accesses {}, causality {}, deterministic {same}",
            a.l1_row_flips, a.report.first_flip_round, a.direct_table_accesses, a.causality
        ),
    )
}

fn defenses() -> (bool, String) {
    let desk = || {
        let mut sc = Scenario::from_preset("desk").unwrap();
        sc.attack.budget = 40_000;
        sc
    };

    let mut sc = desk();
    sc.attack.defense = DefenseLayout::Catt { guard_rows: 2 };
    sc.attack.kind = AttackKind::Baseline;
    let mut kernel = 0;
    for seed in 1..=5 {
        sc.set_seed(seed);
        let mut s = Session::setup(&sc).unwrap();
        s.run().unwrap();
        let end = s.layout.kernel_end.unwrap();
        kernel += s.m.flips().iter().filter(|f| f.frame < end).count();
    }
    sc.set_seed(1);
    sc.attack.kind = AttackKind::Pthammer;
    let mut s = Session::setup(&sc).unwrap();
    s.run().unwrap();
    let l1: Vec<u64> = s.m.l1_tables().iter().map(|t| t.0).collect();
    let catt_hits = common::l1_frame_flips(&s).iter().filter(|(_, n)| l1.contains(n)).count();

    let mut sc = desk();
    let lwm = default_lwm(&sc.machine);
    sc.attack.defense = DefenseLayout::Cta { low_water_mark: lwm };
    let mut s = Session::setup(&sc).unwrap();
    s.run().unwrap();
    let ff = common::l1_frame_flips(&s);
    let below = ff.iter().filter(|(_, n)| *n < lwm).count();
    let cred = ff.iter().filter(|(_, n)| s.layout.sensitive.contains(n)).count();

    let mut sc = desk();
    sc.attack.defense = DefenseLayout::ZebRam;
    sc.attack.stride_rowsizes = 1;
    sc.attack.stop_at_exploitable = false;
    sc.attack.budget = 50_000;
    let mut safe = Vec::new();
    for r_max in [1, 2] {
        sc.machine.dram.r_max = r_max;
        let mut s = Session::setup(&sc).unwrap();
        s.run().unwrap();
        safe.push(s.m.flips().iter().filter(|f| f.event.row % 2 == 0).count());
    }

    let ok = kernel == 0 && catt_hits >= 1 && !ff.is_empty() && below == ff.len() && cred >= 1 && safe[0] == 0 && safe[1] >= 1;
    (
        ok,
        format!(
            "CATT baseline kernel flips {kernel} over 5 seeds, pthammer exploitable {catt_hits}; \
             CTA {below}/{} below mark, cred hits {cred}; ZebRAM safe flips r_max=1: {}, r_max=2: {}",
            ff.len(),
            safe[0],
            safe[1]
        ),
    )
}

fn determinism() -> (bool, String) {
    let mut sc = Scenario::from_preset("desk").unwrap();
    sc.attack.stop_at_exploitable = false;
    let mut outs = Vec::new();
    for i in 0..2 {
        let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("acceptance{i}"));
        let _ = fs::remove_dir_all(&dir);
        sc.output.dir = Some(dir.to_string_lossy().into());
        run_loaded(&sc).unwrap();
        outs.push((fs::read(dir.join("report.csv")).unwrap(), fs::read(dir.join("flips.csv")).unwrap()));
    }
    let golden = |n: &str| fs::read_to_string(format!("{}/tests/golden/{n}", env!("CARGO_MANIFEST_DIR"))).unwrap();
    let header = |b: &[u8]| String::from_utf8_lossy(b).lines().next().unwrap_or("").to_string() + "\n";
    let headers_ok = header(&outs[0].0) == golden("report_header.csv")
        && header(&outs[0].1) == golden("flips_header.csv")
        && REPORT_HEADER.join(",") + "\n" == golden("report_header.csv")
        && FLIPS_HEADER.join(",") + "\n" == golden("flips_header.csv");
    let same = outs[0] == outs[1];
    (same && headers_ok, format!("byte-identical {same} ({} + {} bytes), golden headers {headers_ok}", outs[0].0.len(), outs[0].1.len()))
}

fn main() {
    let s = Duration::from_secs;
    let verdicts = [
        timed(1, s(5), formal_suite),
        timed(2, s(30), eviction_oracles),
        timed(3, s(120), llc_selection),
        timed(4, s(60), row_pairs),
        timed(5, s(120), timing_gate),
        timed(6, s(180), end_to_end),
        timed(7, s(300), defenses),
        timed(8, s(60), determinism),
    ];
    for v in &verdicts {
        println!("criterion {}: {} {}", v.id, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
