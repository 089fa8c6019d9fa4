//! CSV output. Column order is part of the interface; the headers below are
//! pinned by a golden test.

use crate::attack::HammerReport;
use crate::mmu::PageMode;
use std::io::Write;

pub const REPORT_HEADER: [&str; 30] = [
    "preset",
    "attack",
    "mode",
    "defense",
    "seed",
    "budget",
    "pad_cycles",
    "t_max",
    "rounds",
    "sim_cycles",
    "mean_round_cycles",
    "max_round_cycles",
    "rounds_within_t_max",
    "first_flip_round",
    "flips",
    "l1_row_flips",
    "exploitable",
    "cred_hits",
    "below_lwm",
    "kernel_row_flips",
    "safe_row_flips",
    "tlb_set_size",
    "threshold",
    "pair_bank",
    "pair_row_a",
    "pair_row_b",
    "direct_table_accesses",
    "walk_table_row_activations",
    "causality_ok",
    "status",
];

pub const FLIPS_HEADER: [&str; 5] = ["round", "bank", "row", "bit", "exploitable"];

pub const SWEEP_HEADER: [&str; 5] = ["variable", "value", "rep", "metric", "result"];

pub fn mode_str(m: PageMode) -> &'static str {
    match m {
        PageMode::Regular => "regular",
        PageMode::Super => "super",
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "NONE".to_string(), |x| x.to_string())
}

/// One CSV record per report.
pub fn report_record(r: &HammerReport) -> Vec<String> {
    let attack = match r.attack {
        crate::config::AttackKind::Pthammer => "pthammer",
        crate::config::AttackKind::Baseline => "baseline",
    };
    let below = r.flips.iter().filter(|f| f.below_lwm == Some(true)).count();
    let frame_flips = r.flips.iter().filter(|f| f.below_lwm.is_some()).count();
    vec![
        r.preset.clone(),
        attack.into(),
        mode_str(r.mode).into(),
        r.defense.to_string(),
        r.seed.to_string(),
        r.budget.to_string(),
        r.pad_cycles.to_string(),
        r.t_max.to_string(),
        r.rounds.to_string(),
        r.sim_cycles.to_string(),
        format!("{:.1}", r.mean_round_cycles()),
        r.round_cycles.iter().max().copied().unwrap_or(0).to_string(),
        format!("{:.4}", r.rounds_within(r.t_max)),
        opt(r.first_flip_round),
        r.flips.len().to_string(),
        r.l1_row_flips().to_string(),
        r.exploitable().to_string(),
        r.cred_hits().to_string(),
        if frame_flips == 0 && r.flips.iter().all(|f| f.below_lwm.is_none()) {
            "NONE".into()
        } else {
            format!("{below}/{frame_flips}")
        },
        r.kernel_row_flips().to_string(),
        r.safe_row_flips().to_string(),
        r.tlb_set_size.to_string(),
        opt(r.threshold),
        opt(r.pair.map(|p| p.bank_a)),
        opt(r.pair.map(|p| p.row_a)),
        opt(r.pair.map(|p| p.row_b)),
        r.audit.direct_table_accesses.to_string(),
        r.audit.walk_table_row_activations.to_string(),
        r.causality_ok.to_string(),
        r.status.as_str().into(),
    ]
}

pub fn write_reports<W: Write>(w: W, reports: &[HammerReport]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_HEADER)?;
    for r in reports {
        out.write_record(report_record(r))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_flips<W: Write>(w: W, r: &HammerReport) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(FLIPS_HEADER)?;
    for f in &r.flips {
        let e = &f.record.event;
        out.write_record([
            f.record.round.to_string(),
            e.bank.to_string(),
            e.row.to_string(),
            e.bit.to_string(),
            (f.exploitable || f.cred_hit).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variable: String,
    pub value: u64,
    pub rep: u32,
    pub metric: String,
    /// Already formatted; `NONE` when the metric has no value.
    pub result: String,
}

impl SweepRow {
    pub fn new(variable: &str, value: u64, rep: u32, metric: &str, result: impl ToString) -> Self {
        Self { variable: variable.into(), value, rep, metric: metric.into(), result: result.to_string() }
    }

    fn key(&self) -> (&str, u64, u32, &str) {
        (&self.variable, self.value, self.rep, &self.metric)
    }
}

/// Rows are sorted by cell before writing, so the output does not depend on
/// the order cells finished in.
pub fn write_sweep<W: Write>(w: W, rows: &[SweepRow]) -> csv::Result<()> {
    let mut rows: Vec<&SweepRow> = rows.iter().collect();
    rows.sort_by(|a, b| a.key().cmp(&b.key()));
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_HEADER)?;
    for r in rows {
        out.write_record([r.variable.clone(), r.value.to_string(), r.rep.to_string(), r.metric.clone(), r.result.clone()])?;
    }
    out.flush()?;
    Ok(())
}
