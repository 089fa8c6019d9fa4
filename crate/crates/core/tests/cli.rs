use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use telehammer::cli::{run_loaded, sweep_pad, sweep_set_size, EXIT_BUDGET, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_MODEL, EXIT_OK};
use telehammer::config::Scenario;
use telehammer::report::{write_sweep, FLIPS_HEADER, REPORT_HEADER, SWEEP_HEADER};

fn golden(name: &str) -> String {
    fs::read_to_string(format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn tmp(name: &str) -> PathBuf {
    let p = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&p);
    fs::create_dir_all(&p).unwrap();
    p
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_telehammer"));
    c.env_remove("TH_SEED");
    c
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string() + "\n"
}

#[test]
fn headers_match_golden_files() {
    assert_eq!(REPORT_HEADER.join(",") + "\n", golden("report_header.csv"));
    assert_eq!(FLIPS_HEADER.join(",") + "\n", golden("flips_header.csv"));
    assert_eq!(SWEEP_HEADER.join(",") + "\n", golden("sweep_header.csv"));
}

#[test]
fn written_csvs_start_with_golden_headers() {
    let dir = tmp("headers");
    let mut sc = Scenario::from_preset("desk").unwrap();
    sc.attack.budget = 5000;
    sc.output.dir = Some(dir.to_string_lossy().into());
    run_loaded(&sc).unwrap();
    assert_eq!(first_line(&dir.join("report.csv")), golden("report_header.csv"));
    assert_eq!(first_line(&dir.join("flips.csv")), golden("flips_header.csv"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let mut sc = Scenario::from_preset("desk").unwrap();
    sc.attack.stop_at_exploitable = false;
    let mut outs = Vec::new();
    for i in 0..2 {
        let dir = tmp(&format!("repeat{i}"));
        sc.output.dir = Some(dir.to_string_lossy().into());
        run_loaded(&sc).unwrap();
        outs.push((fs::read(dir.join("report.csv")).unwrap(), fs::read(dir.join("flips.csv")).unwrap()));
    }
    assert_eq!(outs[0], outs[1]);
    assert!(outs[0].1.len() > golden("flips_header.csv").len(), "expected flips");
}

#[test]
fn sweeps_are_byte_identical_and_sorted() {
    let sc = Scenario::from_preset("desk").unwrap();
    let render = |rows: &[telehammer::report::SweepRow]| {
        let mut b = Vec::new();
        write_sweep(&mut b, rows).unwrap();
        String::from_utf8(b).unwrap()
    };
    let a = render(&sweep_set_size(&sc, &[6, 7, 8, 9], 2).unwrap());
    let b = render(&sweep_set_size(&sc, &[6, 7, 8, 9], 2).unwrap());
    assert_eq!(a, b);
    let values: Vec<u64> = a.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[0] <= w[1]));
    assert!(a.contains("tlb_set_size,7,0,miss_rate,0.0000"));
    assert!(a.contains("tlb_set_size,8,0,miss_rate,1.0000"));
}

#[test]
fn padding_never_brings_the_first_flip_earlier() {
    let mut sc = Scenario::from_preset("desk").unwrap();
    sc.attack.budget = 12_000;
    let rows = sweep_pad(&sc, &[0, 50, 100, 200], 1).unwrap();
    let times: Vec<Option<u64>> = [0u64, 50, 100, 200]
        .iter()
        .map(|&p| {
            let r = rows.iter().find(|r| r.value == p && r.metric == "first_flip_cycles").unwrap();
            r.result.parse().ok()
        })
        .collect();
    assert!(times[0].is_some());
    assert_eq!(times[3], None);
    for w in times.windows(2) {
        match (w[0], w[1]) {
            (Some(a), Some(b)) => assert!(a <= b),
            (None, Some(_)) => panic!("flip reappeared with more padding: {times:?}"),
            _ => {}
        }
    }
}

#[test]
fn exit_codes() {
    let code = |c: &mut Command| c.output().unwrap().status.code().unwrap() as u8;
    let data = format!("{}/data", env!("CARGO_MANIFEST_DIR"));
    assert_eq!(code(bin().args(["check-model", &format!("{data}/pthammer.graph")])), EXIT_OK);
    assert_eq!(code(bin().args(["check-model", &format!("{data}/catt_perihammer.graph")])), EXIT_INFEASIBLE);
    assert_eq!(code(bin().args(["attack", "pthammer", "--preset", "nope"])), EXIT_CONFIG);
    assert_eq!(code(bin().args(["attack", "pthammer", "--bogus"])), EXIT_CONFIG);

    let dir = tmp("exit");
    let short = dir.join("short.ini");
    fs::write(&short, "[machine]\npreset = desk\n[attack]\nspray_bytes = 4MiB\n").unwrap();
    assert_eq!(code(bin().args(["attack", "pthammer", "--config"]).arg(&short)), EXIT_MODEL);
    let bad = dir.join("bad.ini");
    fs::write(&bad, "[attack]\nbudgett = 3\n").unwrap();
    assert_eq!(code(bin().arg("run").arg(&bad)), EXIT_CONFIG);

    let out = dir.join("out");
    assert_eq!(code(bin().args(["attack", "pthammer", "--budget=100", "--out"]).arg(&out)), EXIT_BUDGET);
    let cfg = format!("{}/configs/desk.ini", env!("CARGO_MANIFEST_DIR"));
    assert_eq!(code(bin().args(["run", &cfg, "--out"]).arg(&out)), EXIT_OK);
}

#[test]
fn th_seed_overrides_the_config_seed() {
    let dir = tmp("seed");
    let o = bin()
        .env("TH_SEED", "42")
        .args(["attack", "pthammer", "--budget=10", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4));
    let report = fs::read_to_string(dir.join("report.csv")).unwrap();
    let row: Vec<&str> = report.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[4], "42");
}

#[test]
fn shipped_configs_load() {
    for f in fs::read_dir(format!("{}/configs", env!("CARGO_MANIFEST_DIR"))).unwrap() {
        let p = f.unwrap().path();
        Scenario::load(&p.to_string_lossy()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}
