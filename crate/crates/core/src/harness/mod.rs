//! Experiment orchestration: single runs, β-sweeps and ν-traces.
//!
//! A run is strictly sequential in `t`. Independent runs inside a sweep or
//! trace execute on scoped threads; each owns its RNG streams, so results do
//! not depend on scheduling.

mod check;
mod config;
mod runlog;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use check::{run_invariant_suite, CheckResult};
pub use config::{
    EtaKind, EtaSchedule, ExperimentConfig, RankPolicyConfig, RunAlgorithm, DEFAULT_MU,
};
pub use runlog::{
    AbortMarker, RunLog, RunSummary, StepRecord, CSV_HEADER, RNG_NAME, RUN_JSON, STEPS_CSV,
};

use crate::adarank::rank_policy_update;
use crate::error::{Error, Result};
use crate::linalg::{kyfan_norm, Mat};
use crate::optimizer::{step, LayerOptState};
use crate::problems::{GradientStream, PlantedQuadratic, ProblemKind, ProblemSpec};
use crate::rng::derive_seed;

/// Where gradients come from during a run.
#[allow(clippy::large_enum_variant)]
pub enum GradientSource {
    Quadratic(PlantedQuadratic),
    Stream(GradientStream),
}

impl GradientSource {
    pub fn new(spec: &ProblemSpec) -> Result<Self> {
        Ok(match spec.kind {
            ProblemKind::PlantedQuadratic => GradientSource::Quadratic(PlantedQuadratic::new(spec)?),
            ProblemKind::GradientStream => GradientSource::Stream(GradientStream::new(spec)?),
        })
    }

    pub fn start(&self, m: usize, n: usize) -> Mat {
        match self {
            GradientSource::Quadratic(q) => q.start().clone(),
            GradientSource::Stream(_) => Mat::zeros(m, n),
        }
    }

    pub fn value(&self, x: &Mat) -> Option<f64> {
        match self {
            GradientSource::Quadratic(q) => Some(q.value(x)),
            GradientSource::Stream(_) => None,
        }
    }

    pub fn gradient(&mut self, x: &Mat) -> Mat {
        match self {
            GradientSource::Quadratic(q) => q.gradient(x),
            GradientSource::Stream(s) => s.next_gradient(),
        }
    }
}

/// Optimizer state seed derived from the run seed.
pub fn optimizer_seed(config: &ExperimentConfig) -> u64 {
    derive_seed(config.seed, 1)
}

fn initial_state(config: &ExperimentConfig, x0: Mat) -> Result<LayerOptState> {
    let mut state = LayerOptState::new(
        x0,
        config.rank,
        config.eta(),
        config.beta,
        optimizer_seed(config),
    )?
    .with_diagnostics(config.diagnostics_mode)
    .with_warm_start(config.warm_start);
    if config.algorithm == RunAlgorithm::PolyakDion {
        state = state.with_momentum(config.mu_or_default())?;
    }
    Ok(state)
}

/// Runs one experiment. When `output_path` is set the log is written there
/// (`run.json` + `steps.csv`), including on numerical abort, in which case
/// the partial log carries an abort marker and the error is returned.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunLog> {
    config.validate()?;
    let (m, n) = (config.problem.m, config.problem.n);
    let mut source = GradientSource::new(&config.problem)?;
    let mut state = initial_state(config, source.start(m, n))?;
    let alg = config.algorithm.step_algorithm();
    let mut policy = match &config.rank_policy {
        Some(p) => Some(p.initial_state(config.rank)?),
        None => None,
    };

    let started = Instant::now();
    let mut records = Vec::with_capacity(config.steps);
    let mut aborted = None;

    for t in 0..config.steps {
        let loss = source.value(&state.x);
        if loss.is_some_and(|l| !l.is_finite()) {
            aborted = Some(AbortMarker {
                step: t,
                reason: "non-finite objective".into(),
            });
            break;
        }
        let g = source.gradient(&state.x);
        if g.iter().any(|v| !v.is_finite()) {
            aborted = Some(AbortMarker {
                step: t,
                reason: "non-finite gradient".into(),
            });
            break;
        }
        let rank = state.rank;
        let kyfan_grad_r = kyfan_norm(&g, rank)?;
        let out = match step(alg, &state, &g) {
            Ok(out) => out,
            Err(e @ (Error::DegenerateRank { .. } | Error::Validation(_))) => {
                aborted = Some(AbortMarker {
                    step: t,
                    reason: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        };
        records.push(StepRecord {
            step: t,
            layer: 0,
            loss,
            kyfan_grad_r,
            diagnostics: out.diagnostics,
            rank,
        });
        state = out.new_state;

        if let (Some(p), Some(cfg)) = (policy.as_mut(), config.rank_policy.as_ref()) {
            let frozen = cfg.freeze_after.is_some_and(|f| t >= f);
            if !frozen && t % cfg.cadence == 0 {
                let estimate = records.last().map(|r| r.diagnostics.erank).unwrap_or(1.0);
                *p = rank_policy_update(p, estimate);
                state.set_rank(p.r_current)?;
            }
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    let summary = runlog::summarize(&records, elapsed, aborted.clone(), config.rank);
    let log = RunLog {
        config: config.clone(),
        rng: RNG_NAME.to_string(),
        records,
        summary,
    };
    if let Some(dir) = &config.output_path {
        log.write_to_dir(dir)?;
    }
    match aborted {
        Some(a) => Err(Error::NumericalAbort {
            step: a.step,
            reason: a.reason,
        }),
        None => Ok(log),
    }
}

/// Runs every config on its own scoped thread; results keep input order.
pub fn run_many(configs: &[ExperimentConfig]) -> Vec<Result<RunLog>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|cfg| scope.spawn(move || run_experiment(cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment thread panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSweepRow {
    pub beta: f64,
    /// `min_t ‖G_t‖_(r)` over the run.
    pub final_metric: f64,
    /// Mean of `‖R_t‖_F / ‖G_t‖_F` over the second half of the run.
    pub mean_r_ratio: f64,
    pub mean_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSweepTable {
    pub config: ExperimentConfig,
    pub rows: Vec<BetaSweepRow>,
    /// Steady-state R-ratio strictly increases as β decreases.
    pub r_ratio_increases_as_beta_decreases: bool,
}

fn steady_state_mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let len = values.len();
    let skip = len / 2;
    let tail: Vec<f64> = values.skip(skip).collect();
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

/// One run per β with the base seed; rows sorted by β ascending.
pub fn run_beta_sweep(base: &ExperimentConfig, betas: &[f64]) -> Result<BetaSweepTable> {
    if let Some(b) = betas.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(Error::config("betas", format!("{b} not in [0, 1]")));
    }
    let mut sorted = betas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let configs: Vec<ExperimentConfig> = sorted
        .iter()
        .map(|&beta| ExperimentConfig {
            beta,
            output_path: None,
            ..base.clone()
        })
        .collect();
    let mut rows = Vec::with_capacity(configs.len());
    for (beta, log) in sorted.iter().zip(run_many(&configs)) {
        let log = log?;
        rows.push(BetaSweepRow {
            beta: *beta,
            final_metric: log.summary.min_kyfan_grad.unwrap_or(f64::NAN),
            mean_r_ratio: steady_state_mean(log.records.iter().map(|r| r.diagnostics.r_ratio)),
            mean_phi: log.summary.mean_phi,
        });
    }
    let r_ratio_increases_as_beta_decreases = rows
        .windows(2)
        .all(|w| w[0].mean_r_ratio > w[1].mean_r_ratio);
    Ok(BetaSweepTable {
        config: base.clone(),
        rows,
        r_ratio_increases_as_beta_decreases,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuTraceRow {
    pub rank: usize,
    pub dion: Vec<f64>,
    pub orth_dion: Vec<f64>,
    pub dion_mean: f64,
    pub orth_dion_max_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuTrace {
    pub rows: Vec<NuTraceRow>,
    /// Every Orth-Dion ν within `1e-8` of 1.
    pub orth_dion_flat: bool,
}

/// Orth-Dion ν tolerance used by [`run_nu_trace`].
pub const NU_FLAT_TOL: f64 = 1e-8;

/// ν time series for Dion and Orth-Dion at each rank.
pub fn run_nu_trace(base: &ExperimentConfig, ranks: &[usize]) -> Result<NuTrace> {
    let max = base.problem.m.min(base.problem.n);
    if let Some(&r) = ranks.iter().find(|&&r| r == 0 || r > max) {
        return Err(Error::config("ranks", format!("{r} not in [1, {max}]")));
    }
    let mut configs = Vec::with_capacity(2 * ranks.len());
    for &rank in ranks {
        for algorithm in [RunAlgorithm::Dion, RunAlgorithm::OrthDion] {
            configs.push(ExperimentConfig {
                algorithm,
                rank,
                mu: None,
                rank_policy: None,
                output_path: None,
                ..base.clone()
            });
        }
    }
    let mut logs = run_many(&configs).into_iter();
    let mut rows = Vec::with_capacity(ranks.len());
    for &rank in ranks {
        let dion_log = logs.next().expect("dion run")?;
        let orth_log = logs.next().expect("orth run")?;
        let dion: Vec<f64> = dion_log.records.iter().map(|r| r.diagnostics.nu).collect();
        let orth_dion: Vec<f64> = orth_log.records.iter().map(|r| r.diagnostics.nu).collect();
        rows.push(NuTraceRow {
            rank,
            dion_mean: dion.iter().sum::<f64>() / dion.len() as f64,
            orth_dion_max_dev: orth_dion.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max),
            dion,
            orth_dion,
        });
    }
    let orth_dion_flat = rows.iter().all(|r| r.orth_dion_max_dev <= NU_FLAT_TOL);
    Ok(NuTrace {
        rows,
        orth_dion_flat,
    })
}
