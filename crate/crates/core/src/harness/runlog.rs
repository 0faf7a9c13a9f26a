use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::diagnostics::StepDiagnostics;
use crate::error::Result;

/// Fixed per-step CSV header.
pub const CSV_HEADER: [&str; 17] = [
    "step",
    "layer",
    "loss",
    "kyfan_grad_r",
    "nu",
    "delta",
    "eps_proj",
    "eps_proj_G",
    "eps_hat",
    "phi",
    "r_ratio",
    "gamma_tilde",
    "kappa_G",
    "rho",
    "erank",
    "rank",
    "degenerate",
];

pub const RUN_JSON: &str = "run.json";
pub const STEPS_CSV: &str = "steps.csv";

/// Name of the generator behind every seed in a log.
pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha), seeded via seed_from_u64";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub layer: usize,
    /// Objective value; absent for gradient streams.
    pub loss: Option<f64>,
    pub kyfan_grad_r: f64,
    pub diagnostics: StepDiagnostics,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortMarker {
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// `min_t ‖G_t‖_(r)`; absent only when a run aborts before its first step.
    pub min_kyfan_grad: Option<f64>,
    pub mean_nu: f64,
    pub final_r_ratio: f64,
    pub mean_phi: f64,
    pub mean_eps_hat: f64,
    /// `1 − 2ε̂` at the mean tracking error; reported only.
    pub suggested_beta: f64,
    pub final_rank: usize,
    pub wall_time_secs: f64,
    pub aborted: Option<AbortMarker>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config: ExperimentConfig,
    pub rng: String,
    pub records: Vec<StepRecord>,
    pub summary: RunSummary,
}

fn fmt_f(x: f64) -> String {
    // `{}` on f64 is the shortest round-trip representation: stable bytes.
    format!("{x}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

impl StepRecord {
    fn csv_fields(&self) -> [String; 17] {
        let d = &self.diagnostics;
        [
            self.step.to_string(),
            self.layer.to_string(),
            fmt_opt(self.loss),
            fmt_f(self.kyfan_grad_r),
            fmt_f(d.nu),
            fmt_opt(d.delta),
            fmt_opt(d.eps_proj),
            fmt_opt(d.eps_proj_g),
            fmt_f(d.eps_hat),
            fmt_f(d.phi),
            fmt_f(d.r_ratio),
            fmt_opt(d.gamma_tilde),
            fmt_opt(d.kappa_g),
            fmt_opt(d.rho),
            fmt_f(d.erank),
            self.rank.to_string(),
            (d.degenerate as u8).to_string(),
        ]
    }
}

impl RunLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for rec in &self.records {
            w.write_record(rec.csv_fields())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    /// Writes `run.json` and `steps.csv` into `dir`, creating it if needed.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self)?;
        fs::write(dir.join(RUN_JSON), json)?;
        let file = fs::File::create(dir.join(STEPS_CSV))?;
        self.write_csv(std::io::BufWriter::new(file))?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub(crate) fn summarize(
    records: &[StepRecord],
    wall_time_secs: f64,
    aborted: Option<AbortMarker>,
    fallback_rank: usize,
) -> RunSummary {
    let n = records.len().max(1) as f64;
    let min_kyfan_grad = records
        .iter()
        .map(|r| r.kyfan_grad_r)
        .reduce(f64::min);
    let mean = |f: fn(&StepRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let mean_eps_hat = mean(|r| r.diagnostics.eps_hat);
    RunSummary {
        min_kyfan_grad,
        mean_nu: mean(|r| r.diagnostics.nu),
        final_r_ratio: records.last().map(|r| r.diagnostics.r_ratio).unwrap_or(0.0),
        mean_phi: mean(|r| r.diagnostics.phi),
        mean_eps_hat,
        suggested_beta: crate::diagnostics::suggested_beta(mean_eps_hat),
        final_rank: records.last().map(|r| r.rank).unwrap_or(fallback_rank),
        wall_time_secs,
        aborted,
    }
}
