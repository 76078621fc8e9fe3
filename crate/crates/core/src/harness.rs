//! Replicated simulation protocol and value-function aggregation.
//!
//! One replication draws a training set, fits the GP with multi-restart
//! marginal-likelihood search, draws a fresh test population, recommends a
//! dose for every test subject and averages the true `Q` at those doses.
//! That average is the replication's value estimate `vhat`.
//!
//! Random streams: replication `r` under base seed `s` uses
//! `stream_rng(s, 4r + k)` with `k = 0` for the training set, `k = 1` for
//! hyperparameter initializations and `k = 2` for the test covariates. The
//! fit does not depend on the penalty, so every percentile in a cell is
//! evaluated on the same datasets and the same fitted model (a paired
//! design), and a percentile run on its own reproduces the same value.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gp::HyperSearch;
use crate::policy::{self, PenaltySpec};
use crate::rng::stream_rng;
use crate::scenarios::Scenario;

const TRAIN_STREAM: u64 = 0;
const RESTART_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;

/// How test subjects are dosed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DosePolicy {
    Lcsl,
    /// Give every subject its true optimal dose; no model is fitted.
    Oracle,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub n_train: Vec<usize>,
    pub replications: usize,
    pub n_test: usize,
    pub percentiles: Vec<u32>,
    pub restarts: usize,
    pub grid_size: usize,
    pub refine: bool,
    pub base_seed: u64,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
    pub policy: DosePolicy,
}

impl ExperimentConfig {
    /// Desk-scale defaults: 20 replications, training sizes up to 400.
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            n_train: vec![50, 100, 200, 400],
            replications: 20,
            n_test: 1000,
            percentiles: vec![95],
            restarts: 10,
            grid_size: 50,
            refine: false,
            base_seed: 0,
            workers: None,
            policy: DosePolicy::Lcsl,
        }
    }

    /// Full-scale protocol: 50 replications, training sizes 50 to 800.
    pub fn full_profile(scenario: Scenario) -> Self {
        Self {
            n_train: vec![50, 100, 200, 400, 800],
            replications: 50,
            ..Self::new(scenario)
        }
    }

    /// Reports every problem at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_train.is_empty() {
            problems.push("at least one training size is required".to_string());
        }
        if self.n_train.contains(&0) {
            problems.push("training sizes must be positive".to_string());
        }
        if self.replications == 0 {
            problems.push("replications must be positive".to_string());
        }
        if self.n_test == 0 {
            problems.push("test size must be positive".to_string());
        }
        if self.percentiles.is_empty() {
            problems.push("at least one percentile is required".to_string());
        }
        if let Some(p) = self.percentiles.iter().find(|p| !(50..=99).contains(*p)) {
            problems.push(format!("percentiles must lie in [50, 99], got {p}"));
        }
        if self.restarts == 0 {
            problems.push("restarts must be positive".to_string());
        }
        if self.grid_size < 2 {
            problems.push("grid size must be at least 2".to_string());
        }
        if self.workers == Some(0) {
            problems.push("workers must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// What one replication needs apart from its seed.
#[derive(Debug, Clone, Copy)]
pub struct ReplicationSpec {
    pub scenario: Scenario,
    pub n_train: usize,
    pub n_test: usize,
    pub restarts: usize,
    pub grid_size: usize,
    pub refine: bool,
    pub policy: DosePolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    /// Value estimate per requested penalty, in order.
    pub vhat: Vec<f64>,
    /// Mean of `Q(c, f_opt(c))` over the same test population.
    pub optimal_value: f64,
}

pub fn run_replication(
    spec: &ReplicationSpec,
    penalties: &[PenaltySpec],
    base_seed: u64,
    replication: u64,
) -> Result<ReplicationOutcome> {
    let scenario = spec.scenario;
    let stream = |k: u64| stream_rng(base_seed, replication * 4 + k);

    let model = match spec.policy {
        DosePolicy::Lcsl => {
            let train = scenario.sample_dataset(spec.n_train, &mut stream(TRAIN_STREAM))?;
            Some(HyperSearch::new(spec.restarts).run(&train, &mut stream(RESTART_STREAM))?)
        }
        DosePolicy::Oracle => None,
    };
    let test = scenario.sample_covariates(spec.n_test, &mut stream(TEST_STREAM));
    let grid = scenario.spec().dose_range.grid(spec.grid_size);

    let mut totals = vec![0.0; penalties.len()];
    let mut optimal_total = 0.0;
    let mut c = vec![0.0; test.ncols()];
    for row in test.row_iter() {
        c.iter_mut().zip(row.iter()).for_each(|(dst, src)| *dst = *src);
        let best = scenario.optimal_dose(&c)?;
        let best_q = scenario.true_q_unchecked(&c, best);
        optimal_total += best_q;
        match &model {
            None => totals.iter_mut().for_each(|t| *t += best_q),
            Some(model) => {
                let coeffs = policy::dose_coefficients(model, &c)?;
                let surface = coeffs.surface(&grid);
                for (total, pen) in totals.iter_mut().zip(penalties) {
                    let rec = policy::recommend_on_surface(&coeffs, &surface, pen.s, spec.refine);
                    *total += scenario.true_q_unchecked(&c, rec.dose);
                }
            }
        }
    }
    let n = spec.n_test as f64;
    Ok(ReplicationOutcome {
        vhat: totals.into_iter().map(|t| t / n).collect(),
        optimal_value: optimal_total / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: u8,
    pub n_train: usize,
    pub percentile: u32,
    /// `None` when no replication completed.
    pub mean_vhat: Option<f64>,
    /// Sample standard deviation (n - 1); zero when only one replication completed.
    pub std_vhat: Option<f64>,
    pub completed: usize,
    pub failed: usize,
    pub wall_time_secs: f64,
}

impl SummaryRow {
    /// The std is a placeholder because it rests on a single replication.
    pub fn std_is_degenerate(&self) -> bool {
        self.completed == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    /// Sorted by `(n_train, percentile)`.
    pub rows: Vec<SummaryRow>,
}

impl ExperimentSummary {
    pub fn row(&self, n_train: usize, percentile: u32) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.n_train == n_train && r.percentile == percentile)
    }
}

/// Welford running mean and sample standard deviation.
pub(crate) fn mean_and_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let std = if values.len() > 1 {
        (m2 / (values.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    let penalties: Vec<PenaltySpec> = config
        .percentiles
        .iter()
        .map(|p| PenaltySpec::from_percentile(*p))
        .collect::<Result<_>>()?;

    let work = || -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for &n_train in &config.n_train {
            let started = Instant::now();
            let spec = ReplicationSpec {
                scenario: config.scenario,
                n_train,
                n_test: config.n_test,
                restarts: config.restarts,
                grid_size: config.grid_size,
                refine: config.refine,
                policy: config.policy,
            };
            let outcomes: Vec<Result<ReplicationOutcome>> = (0..config.replications as u64)
                .into_par_iter()
                .map(|rep| {
                    let out = run_replication(&spec, &penalties, config.base_seed, rep);
                    match &out {
                        Ok(o) => log::info!(
                            "scenario {} n_train {n_train} replication {rep}: vhat {:?}",
                            config.scenario.id(),
                            o.vhat
                        ),
                        Err(e) => log::warn!(
                            "scenario {} n_train {n_train} replication {rep} failed: {e}",
                            config.scenario.id()
                        ),
                    }
                    out
                })
                .collect();
            let wall = started.elapsed().as_secs_f64();
            let completed: Vec<&ReplicationOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
            let failed = outcomes.len() - completed.len();
            for (k, pen) in penalties.iter().enumerate() {
                let values: Vec<f64> = completed.iter().map(|o| o.vhat[k]).collect();
                let stats = mean_and_std(&values);
                rows.push(SummaryRow {
                    scenario: config.scenario.id(),
                    n_train,
                    percentile: pen.percentile,
                    mean_vhat: stats.map(|s| s.0),
                    std_vhat: stats.map(|s| s.1),
                    completed: completed.len(),
                    failed,
                    wall_time_secs: wall,
                });
            }
        }
        rows
    };

    let mut rows = match config.workers {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Validation(vec![format!("cannot start {k} workers: {e}")]))?
            .install(work),
        None => work(),
    };
    rows.sort_by_key(|r| (r.n_train, r.percentile));
    rows.dedup_by_key(|r| (r.n_train, r.percentile));
    Ok(ExperimentSummary { rows })
}

/// Runs every percentile of `config` on shared replications.
pub fn penalty_sweep(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    run_experiment(config)
}
