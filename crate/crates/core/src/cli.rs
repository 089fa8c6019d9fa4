//! Command-line front end: scenario runs, sweeps, eviction tools and the
//! model checker. Exit codes: 0 success, 1 infeasible model, 2 config
//! error, 3 runtime model error, 4 budget exhausted without flips.

use crate::attack::{AttackError, HammerReport, Session};
use crate::cache::ReplacementPolicy;
use crate::config::{default_lwm, parse_u64, AttackKind, ConfigError, DefenseLayout, Removal, Scenario};
use crate::dram::mix;
use crate::eviction::{
    build_tlb_eviction_set, minimal_tlb_eviction_size, prepare_llc_pool, profile_tlb_set, select_llc_eviction_set,
    EvictionPool, TlbBuffer,
};
use crate::memgraph::{FeasibilityParams, GraphError, MemGraph};
use crate::mmu::{Machine, PageMode};
use crate::report::{self, SweepRow};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INFEASIBLE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_MODEL: u8 = 3;
pub const EXIT_BUDGET: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Attack(#[from] AttackError),
    #[error("model error: {0}")]
    Graph(#[from] GraphError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Graph(GraphError::Parse { .. }) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_CONFIG,
            CliError::Attack(AttackError::Config(_)) => EXIT_CONFIG,
            CliError::Attack(_) | CliError::Graph(_) => EXIT_MODEL,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "telehammer", version, about = "Implicit rowhammer simulator and model checker")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the scenario described by a config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a memory graph for TeleHammer / PeriHammer feasibility.
    CheckModel(CheckArgs),
    #[command(subcommand)]
    Evict(EvictCmd),
    #[command(subcommand)]
    Attack(AttackCmd),
    /// Generic sweep over one variable.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        var: SweepVar,
        /// `start..end:step`, end inclusive.
        #[arg(long)]
        range: String,
        #[arg(long, default_value_t = 1)]
        reps: u32,
    },
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset used when no config is given.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub defense: Option<DefenseArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum ModeArg {
    Regular,
    Super,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum DefenseArg {
    None,
    Catt,
    Cta,
    Zebram,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum SweepVar {
    SetSize,
    Pad,
    RMax,
    Cycles,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum PolicyArg {
    Lru,
    Plru,
    Random,
}

#[derive(Debug, Subcommand)]
pub enum EvictCmd {
    /// Minimal TLB eviction-set size.
    TlbSize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
    },
    /// Build the LLC eviction pool.
    LlcPool {
        #[command(flatten)]
        common: Common,
        /// Write the pool here instead of stdout.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Pick the LLC eviction set for one target's L1PTE.
    LlcSelect {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_u64)]
        target: u64,
        /// Reuse a pool written by `llc-pool`.
        #[arg(long)]
        pool: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum AttackCmd {
    Pthammer(Common),
    Baseline(Common),
    /// Padded-round sweep: time to first flip against round cost.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "0..2000:100")]
        pad: String,
        #[arg(long, default_value_t = 1)]
        reps: u32,
    },
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub graph: PathBuf,
    #[arg(long)]
    pub attacker: Option<String>,
    #[arg(long)]
    pub m_a: Option<String>,
    #[arg(long)]
    pub m_h: Option<String>,
    #[arg(long)]
    pub m_v: Option<String>,
    #[arg(long)]
    pub r_max: Option<u64>,
    #[arg(long)]
    pub t_max: Option<u64>,
    #[arg(long)]
    pub t_set: Option<u64>,
    #[arg(long)]
    pub t_node: Option<u64>,
    #[arg(long)]
    pub t_delta: Option<u64>,
}

/// Load the scenario named by `common`, then apply `TH_SEED` and flags, in
/// that order.
pub fn load_scenario(common: &Common) -> Result<Scenario, CliError> {
    let mut sc = match &common.config {
        Some(p) => Scenario::load(&p.to_string_lossy())?,
        None => Scenario::from_preset(common.preset.as_deref().unwrap_or("desk"))?,
    };
    sc.apply_env()?;
    if let Some(s) = common.seed {
        sc.set_seed(s);
    }
    if let Some(b) = common.budget {
        sc.attack.budget = b;
    }
    if let Some(m) = common.mode {
        sc.attack.mode = match m {
            ModeArg::Regular => PageMode::Regular,
            ModeArg::Super => PageMode::Super,
        };
    }
    if let Some(d) = common.defense {
        sc.attack.defense = match d {
            DefenseArg::None => DefenseLayout::None,
            DefenseArg::Catt => DefenseLayout::Catt { guard_rows: 2 },
            DefenseArg::Cta => DefenseLayout::Cta { low_water_mark: default_lwm(&sc.machine) },
            DefenseArg::Zebram => {
                // Tables only sit in even rows, so one row-size of page
                // tables already spans two physical rows.
                sc.attack.stride_rowsizes = 1;
                DefenseLayout::ZebRam
            }
        };
    }
    if let Some(o) = &common.out {
        sc.output.dir = Some(o.to_string_lossy().into_owned());
    }
    sc.validate()?;
    Ok(sc)
}

/// Outcome of one scenario run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: HammerReport,
    pub exit: u8,
}

pub fn run_loaded(sc: &Scenario) -> Result<RunOutcome, CliError> {
    let mut s = Session::setup(sc)?;
    let report = s.run()?;
    if let Some(dir) = &sc.output.dir {
        write_outputs(Path::new(dir), &report)?;
    }
    let exit = if report.flips.is_empty() { EXIT_BUDGET } else { EXIT_OK };
    Ok(RunOutcome { report, exit })
}

/// Full pipeline for a config file. Outputs go to `[output] dir`, or to the
/// config's directory when unset.
pub fn run_scenario(path: &Path) -> Result<RunOutcome, CliError> {
    let mut sc = Scenario::load(&path.to_string_lossy())?;
    sc.apply_env()?;
    if sc.output.dir.is_none() {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        sc.output.dir = Some(dir.to_string_lossy().into_owned());
    }
    run_loaded(&sc)
}

pub fn write_outputs(dir: &Path, r: &HammerReport) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    report::write_reports(fs::File::create(dir.join("report.csv"))?, std::slice::from_ref(r))?;
    report::write_flips(fs::File::create(dir.join("flips.csv"))?, r)?;
    Ok(())
}

/// `start..end:step` with an inclusive end.
pub fn parse_range(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("range `{s}`: expected start..end:step"));
    let (span, step) = s.split_once(':').unwrap_or((s, "1"));
    let (a, b) = span.split_once("..").ok_or_else(bad)?;
    let a = parse_u64(a).map_err(|_| bad())?;
    let b = parse_u64(b).map_err(|_| bad())?;
    let step = parse_u64(step).map_err(|_| bad())?;
    if step == 0 || a > b {
        return Err(bad());
    }
    Ok((a..=b).step_by(step as usize).collect())
}

fn run_cells<F>(cells: Vec<(u64, u32)>, f: F) -> Result<Vec<SweepRow>, CliError>
where
    F: Fn(u64, u32) -> Result<Vec<SweepRow>, CliError> + Sync,
{
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cells.len().max(1));
    let chunks: Vec<Vec<(u64, u32)>> = (0..threads).map(|t| cells.iter().copied().skip(t).step_by(threads).collect()).collect();
    let results: Vec<Result<Vec<SweepRow>, CliError>> = std::thread::scope(|sc| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|chunk| {
                let f = &f;
                sc.spawn(move || {
                    let mut rows = Vec::new();
                    for &(v, rep) in chunk {
                        rows.extend(f(v, rep)?);
                    }
                    Ok(rows)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep cell panicked")).collect()
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

fn cells(values: &[u64], reps: u32) -> Vec<(u64, u32)> {
    values.iter().flat_map(|&v| (0..reps).map(move |r| (v, r))).collect()
}

fn rep_seed(sc: &Scenario, rep: u32) -> u64 {
    if rep == 0 {
        sc.seed()
    } else {
        mix(&[sc.seed(), rep as u64])
    }
}

/// TLB miss rate against eviction-set size (the knee experiment).
pub fn sweep_set_size(sc: &Scenario, sizes: &[u64], reps: u32) -> Result<Vec<SweepRow>, CliError> {
    run_cells(cells(sizes, reps), |size, rep| {
        let mut cfg = sc.machine.clone();
        cfg.dram.seed = rep_seed(sc, rep);
        let mut m = Machine::new(cfg).map_err(AttackError::from)?;
        let buf = TlbBuffer::allocate(&mut m).map_err(AttackError::from)?;
        let target = crate::attack::SPRAY_BASE + 0x5000;
        m.map_region(target, 4096, PageMode::Regular).map_err(AttackError::from)?;
        let set = build_tlb_eviction_set(&m, &buf, target, size as usize).map_err(AttackError::from)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[m.config().dram.seed, size]));
        let n = sc.eviction.repetitions;
        let misses = profile_tlb_set(&mut m, target, &set.members, n, &mut rng).map_err(AttackError::from)?;
        Ok(vec![SweepRow::new("tlb_set_size", size, rep, "miss_rate", format!("{:.4}", misses as f64 / n as f64))])
    })
}

fn first_flip_cycles(sc: &Scenario, r: &HammerReport) -> Option<u64> {
    let w = sc.machine.dram.refresh_window;
    r.flips.iter().find(|f| f.l1_row).map(|f| (f.record.event.window + 1) * w)
}

/// Round cost and time to first flip against padding.
pub fn sweep_pad(sc: &Scenario, pads: &[u64], reps: u32) -> Result<Vec<SweepRow>, CliError> {
    let mut sc = sc.clone();
    sc.attack.stop_at_exploitable = false;
    let bases: Vec<Session> = (0..reps)
        .map(|rep| {
            let mut s = sc.clone();
            s.set_seed(rep_seed(&sc, rep));
            Session::setup(&s).map_err(CliError::from)
        })
        .collect::<Result<_, _>>()?;
    let pairs: Vec<_> = bases
        .iter()
        .map(|b| {
            let mut b = b.clone();
            let tries = (b.spray_bytes >> 21).clamp(1, 4096) as usize;
            b.pick_hammer_pair(tries).map(|p| (b, p)).map_err(CliError::from)
        })
        .collect::<Result<_, _>>()?;
    run_cells(cells(pads, reps), |pad, rep| {
        let (base, pair) = &pairs[rep as usize];
        let mut s = base.clone();
        s.sc.attack.pad_cycles = pad;
        let r = s.hammer(*pair, sc.attack.budget)?;
        Ok(vec![
            SweepRow::new("pad_cycles", pad, rep, "mean_round_cycles", format!("{:.1}", r.mean_round_cycles())),
            SweepRow::new("pad_cycles", pad, rep, "first_flip_round", r.first_flip_round.map_or("NONE".into(), |x| x.to_string())),
            SweepRow::new("pad_cycles", pad, rep, "first_flip_cycles", first_flip_cycles(&sc, &r).map_or("NONE".into(), |x| x.to_string())),
            SweepRow::new("pad_cycles", pad, rep, "flips", r.flips.len()),
        ])
    })
}

/// Flip counts against the blast radius.
pub fn sweep_r_max(sc: &Scenario, values: &[u64], reps: u32) -> Result<Vec<SweepRow>, CliError> {
    run_cells(cells(values, reps), |r_max, rep| {
        let mut s = sc.clone();
        s.set_seed(rep_seed(sc, rep));
        s.machine.dram.r_max = r_max as u32;
        s.attack.stop_at_exploitable = false;
        let mut sess = Session::setup(&s)?;
        let r = sess.run()?;
        Ok(vec![
            SweepRow::new("r_max", r_max, rep, "flips", r.flips.len()),
            SweepRow::new("r_max", r_max, rep, "safe_row_flips", r.safe_row_flips()),
            SweepRow::new("r_max", r_max, rep, "l1_row_flips", r.l1_row_flips()),
        ])
    })
}

/// Histogram of round cycles in bins of `bin` cycles.
pub fn sweep_cycles(sc: &Scenario, bin: u64) -> Result<Vec<SweepRow>, CliError> {
    let mut s = sc.clone();
    s.attack.stop_at_exploitable = false;
    let mut sess = Session::setup(&s)?;
    let r = sess.run()?;
    let mut hist = std::collections::BTreeMap::new();
    for &c in &r.round_cycles {
        *hist.entry(c as u64 / bin * bin).or_insert(0u64) += 1;
    }
    Ok(hist.into_iter().map(|(k, n)| SweepRow::new("round_cycles_bin", k, 0, "rounds", n)).collect())
}

fn emit_sweep(out: Option<&Path>, name: &str, rows: &[SweepRow]) -> Result<(), CliError> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            report::write_sweep(fs::File::create(dir.join(name))?, rows)?;
        }
        None => report::write_sweep(std::io::stdout().lock(), rows)?,
    }
    Ok(())
}

/// Text report and exit code for one graph file.
pub fn check_model(text: &str, args: &CheckArgs) -> Result<(String, u8), CliError> {
    let g = MemGraph::parse(text)?;
    let q = g.query.clone();
    let pick = |flag: &Option<String>, f: fn(&crate::memgraph::Query) -> String| -> Result<String, CliError> {
        flag.clone()
            .or_else(|| q.as_ref().map(f))
            .ok_or_else(|| CliError::Usage("no query in the graph file and no flag given".into()))
    };
    let attacker = pick(&args.attacker, |q| q.attacker.clone())?;
    let m_a = pick(&args.m_a, |q| q.m_a.clone())?;
    let m_h = pick(&args.m_h, |q| q.m_h.clone())?;
    let m_v = pick(&args.m_v, |q| q.m_v.clone())?;
    let mut p = g.params.unwrap_or(FeasibilityParams::default());
    if let Some(v) = args.r_max {
        p.r_max = v;
    }
    if let Some(v) = args.t_max {
        p.t_max = v;
    }
    if let Some(v) = args.t_set {
        p.t_set = v;
    }
    if let Some(v) = args.t_node {
        p.t_node_attacker = v;
    }
    if let Some(v) = args.t_delta {
        p.t_delta = v;
    }
    let u = g.entity_id(&attacker)?;
    let (a, h, v) = (g.node_id(&m_a)?, g.node_id(&m_h)?, g.node_id(&m_v)?);
    let (kind, rep) = if a == h {
        ("perihammer", g.check_perihammer(u, h, v, &p))
    } else {
        ("telehammer", g.check_telehammer(u, a, h, v, &p)?)
    };
    let mut s = String::new();
    s.push_str(&format!("check: {kind} attacker={attacker} m_a={m_a} m_h={m_h} m_v={m_v}\n"));
    for c in crate::memgraph::ALL_CONDITIONS {
        s.push_str(&format!("{c}: {}\n", if rep.holds(c) { "ok" } else { "FAIL" }));
    }
    match &rep.witness {
        Some(w) if !w.edges.is_empty() => s.push_str(&format!("witness: {}\n", g.path_names(w).join(" -> "))),
        Some(_) => s.push_str(&format!("witness: {m_h}\n")),
        None => s.push_str("witness: NONE\n"),
    }
    s.push_str(&format!("total_latency: {} (t_max {})\n", rep.total_latency, p.t_max));
    s.push_str(&format!("feasible: {}\n", rep.feasible));
    Ok((s, if rep.feasible { EXIT_OK } else { EXIT_INFEASIBLE }))
}

fn evict(cmd: EvictCmd) -> Result<u8, CliError> {
    match cmd {
        EvictCmd::TlbSize { common, policy } => {
            let mut sc = load_scenario(&common)?;
            if let Some(p) = policy {
                sc.machine.tlb.policy = match p {
                    PolicyArg::Lru => ReplacementPolicy::TrueLru,
                    PolicyArg::Plru => ReplacementPolicy::TreePlru,
                    PolicyArg::Random => ReplacementPolicy::RandomSeeded,
                };
            }
            let mut m = Machine::new(sc.machine.clone()).map_err(AttackError::from)?;
            let buf = TlbBuffer::allocate(&mut m).map_err(AttackError::from)?;
            let target = crate::attack::SPRAY_BASE + 0x5000;
            m.map_region(target, 4096, PageMode::Regular).map_err(AttackError::from)?;
            let r = minimal_tlb_eviction_size(&mut m, &buf, target, &sc.eviction).map_err(AttackError::from)?;
            println!("size,misses");
            for (n, miss) in &r.log {
                println!("{n},{miss}");
            }
            println!("# minimal size {} (threshold {} of {})", r.size, r.threshold, r.repetitions);
            Ok(EXIT_OK)
        }
        EvictCmd::LlcPool { common, file } => {
            let sc = load_scenario(&common)?;
            let mut m = Machine::new(sc.machine.clone()).map_err(AttackError::from)?;
            let pool = prepare_llc_pool(&mut m, sc.attack.mode).map_err(AttackError::from)?;
            match file {
                Some(f) => fs::write(f, pool.to_text())?,
                None => print!("{}", pool.to_text()),
            }
            eprintln!("{} sets, {} probes", pool.sets.len(), pool.probes);
            Ok(EXIT_OK)
        }
        EvictCmd::LlcSelect { common, target, pool } => {
            let sc = load_scenario(&common)?;
            let mut s = Session::prepare(&sc)?;
            let m = &mut s.m;
            if m.translate(target).is_none() {
                m.map_region(target & !0xfff, 4096, PageMode::Regular).map_err(AttackError::from)?;
            }
            let buf = TlbBuffer::allocate(m).map_err(AttackError::from)?;
            let built = prepare_llc_pool(m, sc.attack.mode).map_err(AttackError::from)?;
            let pool = match pool {
                Some(p) => EvictionPool::from_text(&fs::read_to_string(p)?, sc.attack.mode, built.threshold)
                    .map_err(CliError::Usage)?,
                None => built,
            };
            let size = match sc.eviction.tlb_size {
                Some(n) => n,
                None => minimal_tlb_eviction_size(m, &buf, target, &sc.eviction).map_err(AttackError::from)?.size,
            };
            let tlb = build_tlb_eviction_set(m, &buf, target, size).map_err(AttackError::from)?;
            let sel = select_llc_eviction_set(m, &pool, &tlb, target).map_err(AttackError::from)?;
            println!("pool_index,latency");
            for (i, l) in &sel.latencies {
                println!("{i},{l}");
            }
            let truth = m.l1pte_addr_oracle(target).map(|p| m.config().cache.llc_slot(p)).ok();
            let members: Vec<String> = sel.set.members.iter().map(|v| format!("{v:#x}")).collect();
            println!("# selected {} members {}", sel.index, members.join(" "));
            println!("# congruent with L1PTE: {}", sel.set.hint.is_some() && sel.set.hint == truth);
            Ok(EXIT_OK)
        }
    }
}

fn finish_run(sc: &Scenario) -> Result<u8, CliError> {
    let out = run_loaded(sc)?;
    let r = &out.report;
    eprintln!(
        "{} rounds, {} flips, {} exploitable, status {}",
        r.rounds,
        r.flips.len(),
        r.exploitable() + r.cred_hits(),
        r.status.as_str()
    );
    if sc.output.dir.is_none() {
        report::write_reports(std::io::stdout().lock(), std::slice::from_ref(r))?;
    }
    Ok(out.exit)
}

fn dispatch(cli: Cli) -> Result<u8, CliError> {
    match cli.cmd {
        Command::Run { config, out } => {
            let mut sc = Scenario::load(&config.to_string_lossy())?;
            sc.apply_env()?;
            if let Some(o) = out {
                sc.output.dir = Some(o.to_string_lossy().into_owned());
                Ok(run_loaded(&sc)?.exit)
            } else {
                Ok(run_scenario(&config)?.exit)
            }
        }
        Command::CheckModel(args) => {
            let text = fs::read_to_string(&args.graph)?;
            let (s, code) = check_model(&text, &args)?;
            print!("{s}");
            Ok(code)
        }
        Command::Evict(e) => evict(e),
        Command::Attack(AttackCmd::Pthammer(c)) => {
            let mut sc = load_scenario(&c)?;
            sc.attack.kind = AttackKind::Pthammer;
            finish_run(&sc)
        }
        Command::Attack(AttackCmd::Baseline(c)) => {
            let mut sc = load_scenario(&c)?;
            sc.attack.kind = AttackKind::Baseline;
            finish_run(&sc)
        }
        Command::Attack(AttackCmd::Sweep { common, pad, reps }) => {
            let sc = load_scenario(&common)?;
            let rows = sweep_pad(&sc, &parse_range(&pad)?, reps.max(1))?;
            emit_sweep(common.out.as_deref(), "sweep_pad.csv", &rows)?;
            Ok(EXIT_OK)
        }
        Command::Sweep { common, var, range, reps } => {
            let mut sc = load_scenario(&common)?;
            let values = parse_range(&range)?;
            let reps = reps.max(1);
            let (name, rows) = match var {
                SweepVar::SetSize => {
                    sc.eviction.removal = Removal::LastAdded;
                    ("sweep_set_size.csv", sweep_set_size(&sc, &values, reps)?)
                }
                SweepVar::Pad => ("sweep_pad.csv", sweep_pad(&sc, &values, reps)?),
                SweepVar::RMax => ("sweep_r_max.csv", sweep_r_max(&sc, &values, reps)?),
                SweepVar::Cycles => ("sweep_cycles.csv", sweep_cycles(&sc, values.first().copied().unwrap_or(100).max(1))?),
            };
            emit_sweep(common.out.as_deref(), name, &rows)?;
            Ok(EXIT_OK)
        }
    }
}

/// Entry point for the binary.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
