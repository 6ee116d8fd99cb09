//! Comma-separated report tables. Rows come first under a header; the
//! aggregate block and config snapshot follow as `#` lines.
//!
//! ```text
//! episode,seed,baseline_accuracy,adapted_accuracy,delta,...
//! 0,1234,0.96,0.97333,0.01333,...
//! # arm=baseline count=600 mean_pct=98.1 std_pct=2.3 ci95_pct=0.18
//! # loss_decreased_fraction=0.99
//! # config: [experiment]
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use protoadapt_core::adaptation::{AdaptedResult, SweepRow};
use protoadapt_core::{Error, Result, Summary};
use serde::{Deserialize, Serialize};

/// One evaluated episode. Accuracies are fractions in `[0, 1]`; fields an
/// evaluation mode does not produce are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub episode: usize,
    pub seed: u64,
    pub baseline_accuracy: Option<f64>,
    pub adapted_accuracy: Option<f64>,
    pub delta: Option<f64>,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub min_inter_before: Option<f64>,
    pub mean_intra_before: Option<f64>,
    pub min_inter_after: Option<f64>,
    pub mean_intra_after: Option<f64>,
}

impl EvalRow {
    pub fn baseline(episode: usize, seed: u64, accuracy: f64) -> Self {
        EvalRow {
            episode,
            seed,
            baseline_accuracy: Some(accuracy),
            adapted_accuracy: None,
            delta: None,
            initial_loss: None,
            final_loss: None,
            min_inter_before: None,
            mean_intra_before: None,
            min_inter_after: None,
            mean_intra_after: None,
        }
    }

    pub fn paired(episode: usize, r: &AdaptedResult) -> Self {
        EvalRow {
            episode,
            seed: r.episode_seed,
            baseline_accuracy: Some(r.baseline_accuracy),
            adapted_accuracy: Some(r.adapted_accuracy),
            delta: Some(r.adapted_accuracy - r.baseline_accuracy),
            initial_loss: Some(r.initial_loss()),
            final_loss: Some(r.final_loss()),
            min_inter_before: Some(r.margins_before.min_inter),
            mean_intra_before: Some(r.margins_before.mean_intra),
            min_inter_after: Some(r.margins_after.min_inter),
            mean_intra_after: Some(r.margins_after.mean_intra),
        }
    }

    /// Drops the baseline columns, as in adapted-only mode.
    pub fn without_baseline(mut self) -> Self {
        self.baseline_accuracy = None;
        self.delta = None;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Baseline,
    Adapted,
    Delta,
}

impl Arm {
    fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Adapted => "adapted",
            Arm::Delta => "delta",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "baseline" => Some(Arm::Baseline),
            "adapted" => Some(Arm::Adapted),
            "delta" => Some(Arm::Delta),
            _ => None,
        }
    }

    fn column(self, row: &EvalRow) -> Option<f64> {
        match self {
            Arm::Baseline => row.baseline_accuracy,
            Arm::Adapted => row.adapted_accuracy,
            Arm::Delta => row.delta,
        }
    }
}

/// Per-arm aggregate in percentage points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmSummary {
    pub arm: Arm,
    pub percent: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub arms: Vec<ArmSummary>,
    /// Share of episodes whose final support loss is below the initial one.
    pub loss_decreased_fraction: Option<f64>,
    /// Rendered experiment config, stored verbatim.
    pub config_snapshot: String,
}

impl EvalReport {
    /// Aggregates every arm whose column is populated on all rows.
    pub fn from_rows(rows: Vec<EvalRow>, config_snapshot: String) -> Self {
        let arms = [Arm::Baseline, Arm::Adapted, Arm::Delta]
            .into_iter()
            .filter_map(|arm| {
                let values: Option<Vec<f64>> = rows.iter().map(|r| arm.column(r)).collect();
                let values = values.filter(|v| !v.is_empty())?;
                Some(ArmSummary {
                    arm,
                    percent: Summary::of(&values).scaled(100.0),
                })
            })
            .collect();
        let losses: Option<Vec<(f64, f64)>> = rows.iter().map(|r| Some((r.initial_loss?, r.final_loss?))).collect();
        let loss_decreased_fraction = losses.filter(|l| !l.is_empty()).map(|l| {
            l.iter().filter(|(a, b)| b < a).count() as f64 / l.len() as f64
        });
        EvalReport {
            rows,
            arms,
            loss_decreased_fraction,
            config_snapshot,
        }
    }

    pub fn arm(&self, arm: Arm) -> Option<&Summary> {
        self.arms.iter().find(|a| a.arm == arm).map(|a| &a.percent)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(csv_error)?;
        }
        if self.rows.is_empty() {
            w.write_record(HEADER).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        let mut out = String::from_utf8(bytes).expect("csv output is UTF-8");
        for a in &self.arms {
            let s = a.percent;
            let _ = writeln!(
                out,
                "# arm={} count={} mean_pct={} std_pct={} ci95_pct={}",
                a.arm.name(),
                s.count,
                s.mean,
                s.std,
                s.ci95
            );
        }
        if let Some(f) = self.loss_decreased_fraction {
            let _ = writeln!(out, "# loss_decreased_fraction={f}");
        }
        for line in self.config_snapshot.lines() {
            let _ = writeln!(out, "# config: {line}");
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<EvalRow>, _>>()
            .map_err(csv_error)?;
        let mut arms = Vec::new();
        let mut loss_decreased_fraction = None;
        let mut config_snapshot = String::new();
        for line in text.lines().filter_map(|l| l.strip_prefix("# ")) {
            if let Some(cfg) = line.strip_prefix("config: ") {
                config_snapshot.push_str(cfg);
                config_snapshot.push('\n');
            } else if let Some(f) = line.strip_prefix("loss_decreased_fraction=") {
                loss_decreased_fraction = Some(number(f)?);
            } else if line.starts_with("arm=") {
                arms.push(parse_arm(line)?);
            }
        }
        Ok(EvalReport {
            rows,
            arms,
            loss_decreased_fraction,
            config_snapshot,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::parse(&text).map_err(|e| Error::Ingestion {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

const HEADER: [&str; 11] = [
    "episode",
    "seed",
    "baseline_accuracy",
    "adapted_accuracy",
    "delta",
    "initial_loss",
    "final_loss",
    "min_inter_before",
    "mean_intra_before",
    "min_inter_after",
    "mean_intra_after",
];

fn number(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Contract(format!("bad number `{s}` in aggregate block")))
}

fn parse_arm(line: &str) -> Result<ArmSummary> {
    let mut arm = None;
    let (mut count, mut mean, mut std, mut ci95) = (None, None, None, None);
    for kv in line.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Contract(format!("bad aggregate field `{kv}`")))?;
        match k {
            "arm" => arm = Arm::parse(v),
            "count" => count = v.parse().ok(),
            "mean_pct" => mean = Some(number(v)?),
            "std_pct" => std = Some(number(v)?),
            "ci95_pct" => ci95 = Some(number(v)?),
            _ => {}
        }
    }
    match (arm, count, mean, std, ci95) {
        (Some(arm), Some(count), Some(mean), Some(std), Some(ci95)) => Ok(ArmSummary {
            arm,
            percent: Summary { count, mean, std, ci95 },
        }),
        _ => Err(Error::Contract(format!("incomplete aggregate line `{line}`"))),
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Contract(format!("csv: {e}"))
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Sweep table, one row per step count. Accuracies are in percent.
pub fn sweep_csv(rows: &[SweepRow], config_snapshot: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "steps",
        "episodes",
        "baseline_mean_pct",
        "baseline_ci95_pct",
        "adapted_mean_pct",
        "adapted_std_pct",
        "adapted_ci95_pct",
        "delta_pct",
        "loss_decreased_fraction",
    ])
    .map_err(csv_error)?;
    for r in rows {
        let (b, a) = (r.baseline.scaled(100.0), r.adapted.scaled(100.0));
        w.write_record([
            r.steps.to_string(),
            a.count.to_string(),
            b.mean.to_string(),
            b.ci95.to_string(),
            a.mean.to_string(),
            a.std.to_string(),
            a.ci95.to_string(),
            (a.mean - b.mean).to_string(),
            r.loss_decreased_fraction.to_string(),
        ])
        .map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
    let mut out = String::from_utf8(bytes).expect("csv output is UTF-8");
    for line in config_snapshot.lines() {
        let _ = writeln!(out, "# config: {line}");
    }
    Ok(out)
}

/// Fixed-width rendering of a sweep for the terminal.
pub fn sweep_table(rows: &[SweepRow], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{:>7}  {:>16}  {:>16}  {:>8}  {:>10}", "steps", "baseline %", "adapted %", "delta", "loss down")?;
    for r in rows {
        let (b, a) = (r.baseline.scaled(100.0), r.adapted.scaled(100.0));
        writeln!(
            out,
            "{:>7}  {:>8.2} ± {:<5.2}  {:>8.2} ± {:<5.2}  {:>+8.2}  {:>9.1}%",
            r.steps,
            b.mean,
            b.ci95,
            a.mean,
            a.ci95,
            a.mean - b.mean,
            100.0 * r.loss_decreased_fraction
        )?;
    }
    Ok(())
}
