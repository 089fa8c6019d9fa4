//! Machine presets and the scenario file format.
//!
//! Scenario files are plain `[section]` / `key=value` text. `#` starts a
//! comment. Unknown sections and keys are errors that name the line.

use crate::cache::{CacheConfig, LevelConfig, LlcConfig, ReplacementPolicy, SetHash};
use crate::dram::{DramConfig, DramMapping};
use crate::mmu::PageMode;
use crate::tlb::{Inclusion, TlbConfig, TlbMapping};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: bad value for `{key}`: {msg}")]
    BadValue { line: usize, key: String, msg: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MmuConfig {
    pub superpage: bool,
    pub psc_entries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineConfig {
    pub name: String,
    pub cache: CacheConfig,
    pub tlb: TlbConfig,
    pub dram: DramConfig,
    pub mmu: MmuConfig,
    /// Issue cost of one access inside a batch of independent accesses.
    pub issue_cycles: u32,
    /// Slowest hammer round that still reaches the flip threshold in a window.
    pub t_max: u64,
    /// Display-only conversion from simulated cycles to seconds.
    pub cycles_per_second: u64,
}

impl MachineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.cache.validate().map_err(ConfigError::Invalid)?;
        self.dram.validate().map_err(ConfigError::Invalid)?;
        let t = &self.tlb;
        if t.l1_sets == 0 || t.l1_ways == 0 || t.l2_sets == 0 || t.l2_ways == 0 {
            return Err(ConfigError::Invalid("tlb: sets and ways must be positive".into()));
        }
        if t.mapping == TlbMapping::Xor && !(t.l1_sets.is_power_of_two() && t.l2_sets.is_power_of_two()) {
            return Err(ConfigError::Invalid("tlb: xor mapping needs power-of-two sets".into()));
        }
        if self.mmu.psc_entries == 0 {
            return Err(ConfigError::Invalid("mmu: psc_entries must be positive".into()));
        }
        if self.dram.total_bytes() < 32 << 20 {
            return Err(ConfigError::Invalid("dram: at least 32MiB is needed".into()));
        }
        Ok(())
    }

    /// `refresh_window / flip_threshold`, the budget a round must meet.
    pub fn derived_t_max(&self) -> u64 {
        self.dram.refresh_window / self.dram.flip_threshold as u64
    }
}

fn lvl(sets: usize, ways: usize, latency: u32) -> LevelConfig {
    LevelConfig { sets, ways, latency, policy: ReplacementPolicy::TrueLru }
}

fn mask(bits: &[u32]) -> u64 {
    bits.iter().fold(0, |m, b| m | 1 << b)
}

fn preset_tlb() -> TlbConfig {
    TlbConfig {
        l1_sets: 16,
        l1_ways: 4,
        l2_sets: 128,
        l2_ways: 4,
        policy: ReplacementPolicy::TrueLru,
        inclusion: Inclusion::NonInclusive,
        mapping: TlbMapping::Linear,
        hit_latency: 1,
        noise_resident: 2,
    }
}

fn laptop(name: &str, llc_ways: usize, refresh_window: u64) -> MachineConfig {
    MachineConfig {
        name: name.into(),
        cache: CacheConfig {
            line_bytes: 64,
            l1: lvl(64, 8, 4),
            l2: lvl(512, 8, 12),
            llc: LlcConfig {
                sets: 2048,
                ways: llc_ways,
                latency: 40,
                policy: ReplacementPolicy::TrueLru,
                inclusive: true,
                slice_masks: vec![mask(&[17, 18, 20, 22, 24, 25, 26, 27, 28, 30, 32])],
                set_hash: SetHash::Identity,
            },
        },
        tlb: preset_tlb(),
        dram: DramConfig {
            channels: 1,
            dimms: 1,
            ranks: 1,
            banks: 32,
            rows_per_bank: 32768,
            row_bytes: 8192,
            mapping: DramMapping::Simple,
            row_hit: 150,
            row_closed: 200,
            row_conflict: 250,
            refresh_window,
            flip_threshold: 2000,
            r_max: 1,
            flip_rate: 1e-3,
            cells_per_row: 4096,
            self_corruption: false,
            seed: 1,
        },
        mmu: MmuConfig { superpage: false, psc_entries: 16 },
        issue_cycles: 1,
        t_max: refresh_window / 2000,
        cycles_per_second: 2_600_000_000,
    }
}

/// Small machine used by tests and CI: 256MiB of DRAM, 8 banks of 64 rows.
fn desk() -> MachineConfig {
    MachineConfig {
        name: "desk".into(),
        cache: CacheConfig {
            line_bytes: 64,
            l1: lvl(64, 8, 4),
            l2: lvl(128, 8, 12),
            llc: LlcConfig {
                sets: 512,
                ways: 8,
                latency: 40,
                policy: ReplacementPolicy::TrueLru,
                inclusive: true,
                slice_masks: vec![mask(&[15, 17, 19, 21, 23, 25, 27])],
                set_hash: SetHash::Identity,
            },
        },
        tlb: preset_tlb(),
        dram: DramConfig {
            channels: 1,
            dimms: 1,
            ranks: 1,
            banks: 8,
            rows_per_bank: 64,
            row_bytes: 512 << 10,
            mapping: DramMapping::Simple,
            row_hit: 40,
            row_closed: 60,
            row_conflict: 80,
            refresh_window: 1_000_000,
            flip_threshold: 2000,
            r_max: 1,
            flip_rate: 1e-3,
            cells_per_row: 4096,
            self_corruption: false,
            seed: 1,
        },
        mmu: MmuConfig { superpage: false, psc_entries: 16 },
        issue_cycles: 1,
        t_max: 500,
        cycles_per_second: 1_000_000_000,
    }
}

pub const PRESETS: [&str; 4] = ["desk", "t420", "x230", "e6420"];

pub fn preset(name: &str) -> Result<MachineConfig, ConfigError> {
    match name {
        "desk" => Ok(desk()),
        "t420" => Ok(laptop("t420", 12, 3_000_000)),
        "x230" => Ok(laptop("x230", 12, 3_000_000)),
        "e6420" | "dell" => Ok(laptop("e6420", 16, 3_200_000)),
        _ => Err(ConfigError::UnknownPreset(name.into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Pthammer,
    Baseline,
}

/// Physical placement policy installed before the spray.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefenseLayout {
    None,
    /// Kernel frames low, user frames high, `guard_rows` unused rows between.
    Catt { guard_rows: u32 },
    /// Page tables above the low water mark (a frame number), user frames below.
    Cta { low_water_mark: u64 },
    /// Everything on even rows; odd rows stay empty.
    ZebRam,
}

impl fmt::Display for DefenseLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DefenseLayout::None => f.write_str("none"),
            DefenseLayout::Catt { .. } => f.write_str("catt"),
            DefenseLayout::Cta { .. } => f.write_str("cta"),
            DefenseLayout::ZebRam => f.write_str("zebram"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Removal {
    LastAdded,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvictionConfig {
    pub repetitions: u32,
    pub removal: Removal,
    /// Cap on the initial TLB eviction set.
    pub tlb_init_cap: usize,
    /// Fixed TLB eviction-set size; `None` runs the minimisation.
    pub tlb_size: Option<usize>,
    /// Target miss rate for a TLB set to count as evicting.
    pub miss_rate: f64,
}

impl Default for EvictionConfig {
    fn default() -> Self {
        Self { repetitions: 100, removal: Removal::LastAdded, tlb_init_cap: 16, tlb_size: None, miss_rate: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub mode: PageMode,
    pub budget: u64,
    pub pad_cycles: u64,
    pub spray_bytes: u64,
    pub defense: DefenseLayout,
    /// Fraction of the table region pre-occupied in clustered runs.
    pub fragmentation: f64,
    /// Pairs per label used to calibrate the row-pair threshold.
    pub calib_pairs: usize,
    /// Hammer-pair distance in units of `RowsSize * 512` of virtual space.
    pub stride_rowsizes: u64,
    pub stop_at_exploitable: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputConfig {
    pub dir: Option<String>,
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub machine: MachineConfig,
    pub attack: AttackConfig,
    pub eviction: EvictionConfig,
    pub output: OutputConfig,
}

impl Scenario {
    pub fn from_preset(name: &str) -> Result<Self, ConfigError> {
        let machine = preset(name)?;
        let desk = machine.name == "desk";
        Ok(Self {
            attack: AttackConfig {
                kind: AttackKind::Pthammer,
                mode: PageMode::Regular,
                budget: if desk { 20_000 } else { 10_000 },
                pad_cycles: 0,
                spray_bytes: if desk { 8 << 30 } else { 2 << 30 },
                defense: DefenseLayout::None,
                fragmentation: 0.0,
                calib_pairs: 500,
                stride_rowsizes: 2,
                stop_at_exploitable: true,
            },
            eviction: EvictionConfig::default(),
            output: OutputConfig::default(),
            machine,
        })
    }

    pub fn seed(&self) -> u64 {
        self.machine.dram.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.machine.dram.seed = seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.machine.validate()?;
        let a = &self.attack;
        if a.budget == 0 {
            return Err(ConfigError::Invalid("attack: budget must be positive".into()));
        }
        if a.stride_rowsizes == 0 {
            return Err(ConfigError::Invalid("attack: stride_rowsizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&a.fragmentation) {
            return Err(ConfigError::Invalid("attack: fragmentation must be in [0, 1)".into()));
        }
        if self.eviction.repetitions == 0 {
            return Err(ConfigError::Invalid("eviction: repetitions must be positive".into()));
        }
        Ok(())
    }

    /// Parse a scenario file. A `preset=` key in `[machine]` must come before
    /// any key it would otherwise overwrite.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sc = Self::from_preset("desk")?;
        let mut section = String::new();
        let mut touched = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            if let Some(rest) = l.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line, msg: "unterminated section header".into() })?;
                section = name.trim().to_string();
                if !SECTIONS.contains(&section.as_str()) {
                    return Err(ConfigError::Syntax { line, msg: format!("unknown section [{section}]") });
                }
                continue;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, msg: format!("expected key=value, got `{l}`") })?;
            let (k, v) = (k.trim(), v.trim());
            if section.is_empty() {
                return Err(ConfigError::Syntax { line, msg: "key outside of any section".into() });
            }
            if section == "machine" && k == "preset" {
                if touched {
                    return Err(ConfigError::BadValue {
                        line,
                        key: k.into(),
                        msg: "preset must come before other keys".into(),
                    });
                }
                let seed = sc.seed();
                let out = sc.output.clone();
                sc = Self::from_preset(v).map_err(|e| ConfigError::BadValue { line, key: k.into(), msg: e.to_string() })?;
                sc.set_seed(seed);
                sc.output = out;
                continue;
            }
            touched = true;
            sc.set(&section, k, v).map_err(|e| match e {
                SetError::Unknown => ConfigError::UnknownKey { line, section: section.clone(), key: k.into() },
                SetError::Bad(msg) => ConfigError::BadValue { line, key: k.into(), msg },
            })?;
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &str) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.into(), msg: e.to_string() })?;
        Self::parse(&text)
    }

    /// Apply `TH_SEED` if it is set.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(s) = std::env::var("TH_SEED") {
            let seed = parse_u64(&s).map_err(|msg| ConfigError::BadValue { line: 0, key: "TH_SEED".into(), msg })?;
            self.set_seed(seed);
        }
        Ok(())
    }

    fn set(&mut self, section: &str, k: &str, v: &str) -> Result<(), SetError> {
        let m = &mut self.machine;
        match (section, k) {
            ("machine", "seed") => m.dram.seed = num(v)?,
            ("machine", "issue_cycles") => m.issue_cycles = num(v)?,
            ("machine", "t_max") => m.t_max = num(v)?,
            ("machine", "cycles_per_second") => m.cycles_per_second = num(v)?,
            ("cache.l1" | "cache.l2" | "cache.llc", "line") => m.cache.line_bytes = num(v)?,
            ("cache.l1", _) => level_key(&mut m.cache.l1, k, v)?,
            ("cache.l2", _) => level_key(&mut m.cache.l2, k, v)?,
            ("cache.llc", "sets") => m.cache.llc.sets = num(v)?,
            ("cache.llc", "ways") => m.cache.llc.ways = num(v)?,
            ("cache.llc", "latency") => m.cache.llc.latency = num(v)?,
            ("cache.llc", "policy") => m.cache.llc.policy = parse(v)?,
            ("cache.llc", "inclusive") => m.cache.llc.inclusive = flag(v)?,
            ("cache.llc", "slice_masks") => m.cache.llc.slice_masks = list(v)?,
            ("cache.llc", "set_hash") => {
                m.cache.llc.set_hash = if v == "identity" { SetHash::Identity } else { SetHash::XorFold(list(v)?) }
            }
            ("tlb", "l1_sets") => m.tlb.l1_sets = num(v)?,
            ("tlb", "l1_ways") => m.tlb.l1_ways = num(v)?,
            ("tlb", "l2_sets") => m.tlb.l2_sets = num(v)?,
            ("tlb", "l2_ways") => m.tlb.l2_ways = num(v)?,
            ("tlb", "policy") => m.tlb.policy = parse(v)?,
            ("tlb", "inclusion") => m.tlb.inclusion = parse(v)?,
            ("tlb", "mapping") => m.tlb.mapping = parse(v)?,
            ("tlb", "hit_latency") => m.tlb.hit_latency = num(v)?,
            ("tlb", "noise_resident") => m.tlb.noise_resident = num(v)?,
            ("dram", "banks") => m.dram.banks = num(v)?,
            ("dram", "rows") => m.dram.rows_per_bank = num(v)?,
            ("dram", "row_bytes") => m.dram.row_bytes = num(v)?,
            ("dram", "mapping") => {
                m.dram.mapping = match v {
                    "simple" => DramMapping::Simple,
                    "xor" => DramMapping::XorBank,
                    _ => return Err(SetError::Bad(format!("expected simple or xor, got `{v}`"))),
                }
            }
            ("dram", "row_hit") => m.dram.row_hit = num(v)?,
            ("dram", "row_closed") => m.dram.row_closed = num(v)?,
            ("dram", "row_conflict") => m.dram.row_conflict = num(v)?,
            ("dram", "refresh_window") => m.dram.refresh_window = num(v)?,
            ("dram", "flip_threshold") => m.dram.flip_threshold = num(v)?,
            ("dram", "r_max") => m.dram.r_max = num(v)?,
            ("dram", "flip_rate") => m.dram.flip_rate = float(v)?,
            ("dram", "cells_per_row") => m.dram.cells_per_row = num(v)?,
            ("dram", "self_corruption") => m.dram.self_corruption = flag(v)?,
            ("dram", "seed") => m.dram.seed = num(v)?,
            ("mmu", "superpage") => {
                m.mmu.superpage = flag(v)?;
                self.attack.mode = if m.mmu.superpage { PageMode::Super } else { PageMode::Regular };
            }
            ("mmu", "psc_entries") => m.mmu.psc_entries = num(v)?,
            ("attack", "kind") => {
                self.attack.kind = match v {
                    "pthammer" => AttackKind::Pthammer,
                    "baseline" | "perihammer" => AttackKind::Baseline,
                    _ => return Err(SetError::Bad(format!("expected pthammer or baseline, got `{v}`"))),
                }
            }
            ("attack", "budget") => self.attack.budget = num(v)?,
            ("attack", "pad_cycles") => self.attack.pad_cycles = num(v)?,
            ("attack", "spray_bytes") => self.attack.spray_bytes = bytes(v)?,
            ("attack", "fragmentation") => self.attack.fragmentation = float(v)?,
            ("attack", "calib_pairs") => self.attack.calib_pairs = num(v)?,
            ("attack", "stride_rowsizes") => self.attack.stride_rowsizes = num(v)?,
            ("attack", "stop_at_exploitable") => self.attack.stop_at_exploitable = flag(v)?,
            ("attack", "one_location") => {
                if flag(v)? {
                    return Err(SetError::Bad("one-location hammering has no timing model".into()));
                }
            }
            ("attack", "defense") => {
                self.attack.defense = match v {
                    "none" => DefenseLayout::None,
                    "catt" => DefenseLayout::Catt { guard_rows: 2 },
                    "cta" => DefenseLayout::Cta { low_water_mark: default_lwm(m) },
                    "zebram" => DefenseLayout::ZebRam,
                    _ => return Err(SetError::Bad(format!("unknown defense `{v}`"))),
                }
            }
            ("attack", "guard_rows") => match &mut self.attack.defense {
                DefenseLayout::Catt { guard_rows } => *guard_rows = num(v)?,
                _ => return Err(SetError::Bad("guard_rows needs defense=catt first".into())),
            },
            ("attack", "low_water_mark") => match &mut self.attack.defense {
                DefenseLayout::Cta { low_water_mark } => *low_water_mark = num(v)?,
                _ => return Err(SetError::Bad("low_water_mark needs defense=cta first".into())),
            },
            ("eviction", "repetitions") => self.eviction.repetitions = num(v)?,
            ("eviction", "removal") => {
                self.eviction.removal = match v {
                    "last" => Removal::LastAdded,
                    "random" => Removal::Random,
                    _ => return Err(SetError::Bad(format!("expected last or random, got `{v}`"))),
                }
            }
            ("eviction", "tlb_init_cap") => self.eviction.tlb_init_cap = num(v)?,
            ("eviction", "tlb_size") => {
                self.eviction.tlb_size = if v == "auto" { None } else { Some(num(v)?) }
            }
            ("eviction", "miss_rate") => self.eviction.miss_rate = float(v)?,
            ("output", "dir") => self.output.dir = Some(v.to_string()),
            ("output", "trace") => self.output.trace = flag(v)?,
            _ => return Err(SetError::Unknown),
        }
        Ok(())
    }
}

/// Half of physical memory, in frames.
pub fn default_lwm(m: &MachineConfig) -> u64 {
    m.dram.total_bytes() / 4096 / 2
}

const SECTIONS: [&str; 10] =
    ["machine", "cache.l1", "cache.l2", "cache.llc", "tlb", "dram", "mmu", "attack", "eviction", "output"];

enum SetError {
    Unknown,
    Bad(String),
}

impl From<String> for SetError {
    fn from(s: String) -> Self {
        SetError::Bad(s)
    }
}

fn level_key(l: &mut LevelConfig, k: &str, v: &str) -> Result<(), SetError> {
    match k {
        "sets" => l.sets = num(v)?,
        "ways" => l.ways = num(v)?,
        "latency" => l.latency = num(v)?,
        "policy" => l.policy = parse(v)?,
        _ => return Err(SetError::Unknown),
    }
    Ok(())
}

pub fn parse_u64(v: &str) -> Result<u64, String> {
    let v = v.replace('_', "");
    let r = match v.strip_prefix("0x") {
        Some(h) => u64::from_str_radix(h, 16),
        None => v.parse::<u64>(),
    };
    r.map_err(|e| format!("`{v}`: {e}"))
}

fn num<T: TryFrom<u64>>(v: &str) -> Result<T, SetError> {
    let n = parse_u64(v)?;
    T::try_from(n).map_err(|_| SetError::Bad(format!("`{v}` is out of range")))
}

fn float(v: &str) -> Result<f64, SetError> {
    v.parse::<f64>().map_err(|e| SetError::Bad(format!("`{v}`: {e}")))
}

fn flag(v: &str) -> Result<bool, SetError> {
    match v {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(SetError::Bad(format!("expected on or off, got `{v}`"))),
    }
}

fn parse<T: FromStr<Err = String>>(v: &str) -> Result<T, SetError> {
    v.parse::<T>().map_err(SetError::Bad)
}

fn list(v: &str) -> Result<Vec<u64>, SetError> {
    v.split(',').map(|p| parse_u64(p.trim()).map_err(SetError::Bad)).collect()
}

/// Sizes like `2GiB`, `512MiB`, `64KiB` or a plain byte count.
pub fn parse_bytes(v: &str) -> Result<u64, String> {
    for (suf, mul) in [("GiB", 1u64 << 30), ("MiB", 1 << 20), ("KiB", 1 << 10)] {
        if let Some(n) = v.strip_suffix(suf) {
            return Ok(parse_u64(n.trim())? * mul);
        }
    }
    parse_u64(v)
}

fn bytes(v: &str) -> Result<u64, SetError> {
    parse_bytes(v).map_err(SetError::Bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            preset(p).unwrap().validate().unwrap();
        }
        assert_eq!(preset("t420").unwrap().t_max, 1500);
        assert_eq!(preset("e6420").unwrap().t_max, 1600);
        assert_eq!(preset("t420").unwrap().dram.rows_size(), 256 << 10);
    }

    #[test]
    fn preset_llc_sizes() {
        let mb = |p: &str| preset(p).unwrap().cache.level_bytes(crate::cache::Level::Llc) >> 20;
        assert_eq!((mb("t420"), mb("x230"), mb("e6420")), (3, 3, 4));
    }

    #[test]
    fn unknown_key_names_line() {
        let e = Scenario::parse("[dram]\nbanks=8\nbogus=1\n").unwrap_err();
        assert_eq!(
            e,
            ConfigError::UnknownKey { line: 3, section: "dram".into(), key: "bogus".into() }
        );
    }

    #[test]
    fn preset_then_overrides() {
        let s = Scenario::parse("[machine]\npreset=t420\nseed=9\n[mmu]\nsuperpage=on\n").unwrap();
        assert_eq!(s.machine.name, "t420");
        assert_eq!(s.seed(), 9);
        assert_eq!(s.attack.mode, PageMode::Super);
    }

    #[test]
    fn bytes_suffixes() {
        assert_eq!(parse_bytes("2GiB").unwrap(), 2 << 30);
        assert_eq!(parse_bytes("0x1000").unwrap(), 4096);
    }
}
