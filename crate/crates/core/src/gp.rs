//! Exact zero-mean Gaussian-process regression.
//!
//! Noise enters once: the Gram matrix carries `sn2` on its diagonal and that
//! same matrix is the `K + sn2 I` of the posterior equations. Test-point
//! prior variance is the latent `sf2`, without the nugget.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, Hyperparameters};
use crate::optim::{self, LbfgsOptions};
use crate::rng;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Jitter multipliers of `mean(diag K)` tried in order after a failed factorization.
const JITTER_STEPS: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Closed admissible dose interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseRange {
    pub lo: f64,
    pub hi: f64,
}

impl DoseRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::domain(format!(
                "dose range needs finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, a: f64) -> bool {
        a >= self.lo && a <= self.hi
    }

    /// `size` equally spaced doses; the first is `lo` and the last is exactly `hi`.
    pub fn grid(&self, size: usize) -> Vec<f64> {
        assert!(size >= 2, "a dose grid needs at least two points");
        let step = (self.hi - self.lo) / (size - 1) as f64;
        (0..size)
            .map(|i| {
                if i == size - 1 {
                    self.hi
                } else {
                    self.lo + step * i as f64
                }
            })
            .collect()
    }
}

/// Training records `(covariates, dose, reward)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: DMatrix<f64>,
    doses: DVector<f64>,
    rewards: DVector<f64>,
    dose_range: DoseRange,
}

impl Dataset {
    pub fn new(
        covariates: DMatrix<f64>,
        doses: DVector<f64>,
        rewards: DVector<f64>,
        dose_range: DoseRange,
    ) -> Result<Self> {
        let n = covariates.nrows();
        if n == 0 {
            return Err(Error::shape("dataset has no records"));
        }
        if doses.len() != n || rewards.len() != n {
            return Err(Error::shape(format!(
                "{n} covariate rows but {} doses and {} rewards",
                doses.len(),
                rewards.len()
            )));
        }
        if covariates.iter().chain(rewards.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("dataset contains non-finite values"));
        }
        if let Some((i, a)) = doses.iter().enumerate().find(|(_, a)| !dose_range.contains(**a)) {
            return Err(Error::domain(format!(
                "dose {a} of record {} lies outside [{}, {}]",
                i + 1,
                dose_range.lo,
                dose_range.hi
            )));
        }
        Ok(Self {
            covariates,
            doses,
            rewards,
            dose_range,
        })
    }

    pub fn len(&self) -> usize {
        self.doses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doses.is_empty()
    }

    /// Covariate dimension `p`.
    pub fn covariate_dim(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn doses(&self) -> &DVector<f64> {
        &self.doses
    }

    pub fn rewards(&self) -> &DVector<f64> {
        &self.rewards
    }

    pub fn dose_range(&self) -> DoseRange {
        self.dose_range
    }

    /// GP inputs: each row is `[covariates..., dose]`.
    pub fn inputs(&self) -> DMatrix<f64> {
        let (n, p) = self.covariates.shape();
        DMatrix::from_fn(
            n,
            p + 1,
            |i, j| if j < p { self.covariates[(i, j)] } else { self.doses[i] },
        )
    }
}

/// Min-max map of rewards onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardScaler {
    pub r_min: f64,
    pub r_max: f64,
}

impl RewardScaler {
    pub fn fit(rewards: &DVector<f64>) -> Self {
        Self {
            r_min: rewards.min(),
            r_max: rewards.max(),
        }
    }

    /// Constant rewards all map to 0.5.
    pub fn scale(&self, r: f64) -> f64 {
        if self.r_max > self.r_min {
            (r - self.r_min) / (self.r_max - self.r_min)
        } else {
            0.5
        }
    }

    pub fn unscale(&self, y: f64) -> f64 {
        self.r_min + (self.r_max - self.r_min) * y
    }
}

/// Posterior of the latent response at one query point, on the scaled reward scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    /// Latent (noise-free) variance, clamped at zero.
    pub variance: f64,
}

impl Posterior {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// A factorized GP, immutable after construction.
#[derive(Debug, Clone)]
pub struct FittedGP {
    hp: Hyperparameters,
    inputs: DMatrix<f64>,
    targets: DVector<f64>,
    chol: DMatrix<f64>,
    weights: DVector<f64>,
    chol_inv: DMatrix<f64>,
    scaler: RewardScaler,
    log_ml: f64,
    jitter: f64,
    dose_range: DoseRange,
}

fn factorize(k: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mean_diag = k.diagonal().mean();
    let mut last = 0.0;
    for eps in JITTER_STEPS {
        let jitter = eps * mean_diag;
        let mut m = k.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if let Some(c) = m.cholesky() {
            if c.l_dirty().diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
                return Ok((c, jitter));
            }
        }
        last = jitter;
    }
    Err(Error::Conditioning { jitter: last })
}

/// Inverse of a lower-triangular matrix with a nonzero diagonal, by column
/// forward substitution over contiguous storage.
fn lower_triangular_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let ls = l.as_slice();
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for (j, col) in inv.as_mut_slice().chunks_exact_mut(n).enumerate() {
        col[j] = 1.0;
        for k in j..n {
            let xk = col[k] / ls[k * n + k];
            col[k] = xk;
            if xk != 0.0 {
                for (c, v) in col[k + 1..].iter_mut().zip(&ls[k * n + k + 1..(k + 1) * n]) {
                    *c -= xk * v;
                }
            }
        }
    }
    inv
}

fn check_inputs(inputs: &DMatrix<f64>, targets: &DVector<f64>, hp: &Hyperparameters) -> Result<()> {
    hp.validate()?;
    if inputs.nrows() != targets.len() {
        return Err(Error::shape(format!(
            "{} input rows but {} targets",
            inputs.nrows(),
            targets.len()
        )));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("targets contain non-finite values"));
    }
    Ok(())
}

impl FittedGP {
    /// Builds a model from already-scaled targets.
    pub fn from_scaled(
        hp: Hyperparameters,
        inputs: DMatrix<f64>,
        targets: DVector<f64>,
        scaler: RewardScaler,
        dose_range: DoseRange,
    ) -> Result<Self> {
        check_inputs(&inputs, &targets, &hp)?;
        let k = kernel::gram_matrix(&inputs, &hp)?;
        let (chol, jitter) = factorize(&k)?;
        let weights = chol.solve(&targets);
        let l = chol.unpack();
        let chol_inv = lower_triangular_inverse(&l);
        let log_det_half: f64 = l.diagonal().iter().map(|d| d.ln()).sum();
        let n = targets.len() as f64;
        let log_ml = -0.5 * targets.dot(&weights) - log_det_half - 0.5 * n * LN_2PI;
        Ok(Self {
            hp,
            inputs,
            targets,
            chol: l,
            weights,
            chol_inv,
            scaler,
            log_ml,
            jitter,
            dose_range,
        })
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    /// Scaled training rewards.
    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    /// Lower-triangular `L` with `L L^T = K + sn2 I` (plus any jitter).
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// `(K + sn2 I)^-1 y`.
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// `L^-1`, lower triangular.
    pub fn cholesky_inverse(&self) -> &DMatrix<f64> {
        &self.chol_inv
    }

    /// `(K + sn2 I)^-1 = L^-T L^-1`, formed on demand.
    pub fn precision(&self) -> DMatrix<f64> {
        self.chol_inv.transpose() * &self.chol_inv
    }

    pub fn scaler(&self) -> RewardScaler {
        self.scaler
    }

    pub fn log_ml(&self) -> f64 {
        self.log_ml
    }

    /// Diagonal jitter that was needed to factorize, `0` in the common case.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dose_range(&self) -> DoseRange {
        self.dose_range
    }

    pub fn n_train(&self) -> usize {
        self.targets.len()
    }

    pub fn covariate_dim(&self) -> usize {
        self.hp.dim() - 1
    }

    pub fn predict(&self, x_star: &[f64]) -> Result<Posterior> {
        let k_star = kernel::cross_covariance(&self.inputs, x_star, &self.hp)?;
        Ok(self.posterior_from_cross(&k_star))
    }

    pub(crate) fn posterior_from_cross(&self, k_star: &DVector<f64>) -> Posterior {
        let mean = compensated_sum(k_star.iter().zip(self.weights.iter()).map(|(k, w)| k * w));
        let v = self
            .chol
            .solve_lower_triangular(k_star)
            .expect("cholesky factor has a positive diagonal");
        let variance = (self.hp.signal_variance - v.norm_squared()).max(0.0);
        Posterior { mean, variance }
    }
}

/// Neumaier-compensated sum. Posterior means are sums of large terms of
/// both signs when `sf2` is large and the nugget tiny; plain summation then
/// loses digits and depends on the order of the terms.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + carry
}

/// Scales rewards into `[0, 1]` and factorizes the GP at fixed hyperparameters.
pub fn fit(data: &Dataset, hp: Hyperparameters) -> Result<FittedGP> {
    if hp.dim() != data.covariate_dim() + 1 {
        return Err(Error::shape(format!(
            "{} length-scales for {} covariates plus dose",
            hp.dim(),
            data.covariate_dim()
        )));
    }
    let scaler = RewardScaler::fit(data.rewards());
    let targets = data.rewards().map(|r| scaler.scale(r));
    FittedGP::from_scaled(hp, data.inputs(), targets, scaler, data.dose_range())
}

/// Log evidence of (already scaled) targets and its gradient with respect to
/// `[ln sf2, ln theta_1..d, ln sn2]`.
pub fn log_marginal_likelihood(
    inputs: &DMatrix<f64>,
    targets: &DVector<f64>,
    hp: &Hyperparameters,
) -> Result<(f64, Vec<f64>)> {
    check_inputs(inputs, targets, hp)?;
    if inputs.ncols() != hp.dim() {
        return Err(Error::shape(format!(
            "inputs have {} columns, expected {}",
            inputs.ncols(),
            hp.dim()
        )));
    }
    let n = inputs.nrows();
    let signal = kernel::signal_gram(inputs, hp);
    let mut k = signal.clone();
    for i in 0..n {
        k[(i, i)] += hp.noise_variance;
    }
    let (chol, _) = factorize(&k)?;
    let alpha = chol.solve(targets);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let value = -0.5 * targets.dot(&alpha) - log_det_half - 0.5 * n as f64 * LN_2PI;

    // dL/dphi = 1/2 tr(W dK/dphi), W = alpha alpha^T - K^-1
    let l_inv = lower_triangular_inverse(chol.l_dirty());
    let mut w = l_inv.transpose() * &l_inv;
    w.neg_mut();
    w.ger(1.0, &alpha, &alpha, 1.0);
    let trace_w = w.trace();
    let p = w.component_mul(&signal);
    let row_sums = p.column_sum();

    let mut grad = Vec::with_capacity(hp.dim() + 2);
    grad.push(0.5 * p.sum());

    // sum_ij P_ij (x_ik - x_jk)^2 = 2 sum_i x_ik^2 r_i - 2 x_k^T P x_k, on centred columns
    let mut centred = inputs.clone();
    for mut col in centred.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let px = &p * &centred;
    for (kdim, theta) in hp.length_scales.iter().enumerate() {
        let col = centred.column(kdim);
        let quad: f64 = col.iter().zip(px.column(kdim).iter()).map(|(a, b)| a * b).sum();
        let diag: f64 = col.iter().zip(row_sums.iter()).map(|(a, r)| a * a * r).sum();
        grad.push((diag - quad) / (2.0 * theta));
    }
    grad.push(0.5 * hp.noise_variance * trace_w);
    Ok((value, grad))
}

/// Multi-restart type-II maximum-likelihood search in log space.
///
/// With `unit_start`, the first restart begins at `sf2 = theta_i = sn2 = 1`
/// and only the remaining `restarts - 1` are drawn at random. With many
/// inputs, a random start usually holds a few tiny `theta_i` that decorrelate
/// every pair of points; the likelihood is flat there and the ascent stalls
/// in a pure-noise fit.
#[derive(Debug, Clone)]
pub struct HyperSearch {
    pub restarts: usize,
    /// Box for every hyperparameter, in natural units.
    pub bounds: (f64, f64),
    /// Log-uniform initialization range, in natural units.
    pub init_range: (f64, f64),
    pub unit_start: bool,
    pub lbfgs: LbfgsOptions,
}

impl HyperSearch {
    pub fn new(restarts: usize) -> Self {
        Self {
            restarts,
            bounds: (1e-6, 1e6),
            init_range: (1e-2, 1e2),
            unit_start: true,
            lbfgs: LbfgsOptions::default(),
        }
    }

    /// Draws `restarts` starting points, then optimizes from each.
    pub fn run<R: RngCore + ?Sized>(&self, data: &Dataset, rng: &mut R) -> Result<FittedGP> {
        if self.restarts == 0 {
            return Err(Error::Validation(vec!["restarts must be at least 1".into()]));
        }
        let n_params = data.covariate_dim() + 3;
        let (lo, hi) = (self.init_range.0.ln(), self.init_range.1.ln());
        let random = self.restarts - usize::from(self.unit_start);
        let mut starts: Vec<Vec<f64>> = Vec::with_capacity(self.restarts);
        if self.unit_start {
            starts.push(vec![0.0; n_params]);
        }
        starts.extend((0..random).map(|_| (0..n_params).map(|_| rng::uniform(rng, lo, hi)).collect::<Vec<f64>>()));
        self.run_from(data, &starts)
    }

    /// Optimizes from explicit log-space starting points.
    pub fn run_from(&self, data: &Dataset, starts: &[Vec<f64>]) -> Result<FittedGP> {
        let scaler = RewardScaler::fit(data.rewards());
        let targets = data.rewards().map(|r| scaler.scale(r));
        let inputs = data.inputs();
        let n_params = data.covariate_dim() + 3;
        let lower = vec![self.bounds.0.ln(); n_params];
        let upper = vec![self.bounds.1.ln(); n_params];

        let outcomes: Vec<std::result::Result<(f64, Vec<f64>), String>> = starts
            .par_iter()
            .enumerate()
            .map(|(idx, start)| {
                if start.len() != n_params {
                    return Err(format!(
                        "restart {idx}: start has {} parameters, expected {n_params}",
                        start.len()
                    ));
                }
                let objective = |x: &[f64]| {
                    let hp = Hyperparameters::from_log_params(x);
                    log_marginal_likelihood(&inputs, &targets, &hp)
                        .ok()
                        .map(|(v, g)| (-v, g.into_iter().map(|gi| -gi).collect()))
                };
                match optim::minimize_bounded(objective, start, &lower, &upper, &self.lbfgs) {
                    Some(m) => {
                        log::debug!(
                            "restart {idx}: log_ml {:.6} after {} iterations ({:?})",
                            -m.value,
                            m.iterations,
                            m.termination
                        );
                        Ok((-m.value, m.x))
                    }
                    None => Err(format!(
                        "restart {idx}: marginal likelihood not computable at the start point"
                    )),
                }
            })
            .collect();

        let mut best: Option<(f64, &Vec<f64>)> = None;
        let mut failures = Vec::new();
        for outcome in &outcomes {
            match outcome {
                Ok((value, x)) => {
                    if best.is_none_or(|(b, _)| *value > b) {
                        best = Some((*value, x));
                    }
                }
                Err(msg) => failures.push(msg.clone()),
            }
        }
        let Some((_, x)) = best else {
            return Err(Error::Fit(failures));
        };
        let hp = Hyperparameters::from_log_params(x);
        FittedGP::from_scaled(hp, inputs, targets, scaler, data.dose_range())
    }
}

/// Fits hyperparameters by maximizing the marginal likelihood from
/// `restarts` random log-uniform initializations and keeps the best.
pub fn optimize_hyperparameters<R: RngCore + ?Sized>(data: &Dataset, restarts: usize, rng: &mut R) -> Result<FittedGP> {
    HyperSearch::new(restarts).run(data, rng)
}
