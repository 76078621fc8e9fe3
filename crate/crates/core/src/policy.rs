//! Lower-confidence-surface dose rule.
//!
//! For a fixed patient `c*` the kernel factorizes into a covariate part and
//! a dose part, so the posterior over the dose `a` reduces to
//!
//! ```text
//! mean(a)     = sum_i alpha_i e_i(a)
//! variance(a) = sf2 - sum_ij gamma_ij e_i(a) e_j(a)
//! e_i(a)      = exp(-(a - a_i)^2 / (2 theta_dose))
//! ```
//!
//! with `alpha_i = sf2 w_i [Lambda y]_i`, `gamma_ij = sf2^2 Lambda_ij w_i w_j`,
//! `w_i = exp(-|c* - c_i|^2_theta / 2)` and `Lambda = (K + sn2 I)^-1`. The
//! recommended dose maximizes `mean(a) - s sqrt(variance(a))` on a fixed
//! grid, optionally polished by a bracketed local search.
//!
//! `gamma` is held as `B^T B` with `B = sf2 L^-1 diag(w)` and the quadratic
//! form is evaluated as `|B e(a)|^2`. Fitted models routinely reach
//! `sf2 ~ 1e5` with a tiny nugget; forming `sf2^2 Lambda` explicitly there
//! leaves no correct digits in the variance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gp::{compensated_sum, DoseRange, FittedGP};
use crate::kernel::{self, weighted_sq_dist};
use crate::normal;

/// Uncertainty penalty `s = inverse_cdf(percentile / 100)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySpec {
    pub percentile: u32,
    pub s: f64,
}

impl PenaltySpec {
    pub fn from_percentile(percentile: u32) -> Result<Self> {
        if !(50..=99).contains(&percentile) {
            return Err(Error::domain(format!(
                "percentile must lie in [50, 99], got {percentile}"
            )));
        }
        let s = normal::inverse_cdf(f64::from(percentile) / 100.0)?;
        Ok(Self { percentile, s })
    }
}

/// Standard normal quantile; see [`normal::inverse_cdf`].
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    normal::inverse_cdf(p)
}

/// Exponential-sum representation of the posterior along the dose axis for
/// one covariate vector.
#[derive(Debug, Clone)]
pub struct DoseCoefficients {
    pub alpha: DVector<f64>,
    /// `B` with `gamma = B^T B`; lower triangular.
    pub gamma_factor: DMatrix<f64>,
    /// Prior variance of the latent response, `sf2`.
    pub prior_variance: f64,
    pub train_doses: DVector<f64>,
    pub dose_length_scale: f64,
    pub dose_range: DoseRange,
}

impl DoseCoefficients {
    fn dose_factors(&self, a: f64) -> DVector<f64> {
        let denom = 2.0 * self.dose_length_scale;
        self.train_doses.map(|ai| (-(a - ai) * (a - ai) / denom).exp())
    }

    /// Mean and variance at `a`; the single evaluation path shared by every
    /// caller, so grid and pointwise values agree bit for bit.
    fn evaluate(&self, a: f64) -> (f64, f64) {
        let e = self.dose_factors(a);
        let mean = self.mean_from_factors(&e);
        let variance = (self.prior_variance - (&self.gamma_factor * &e).norm_squared()).max(0.0);
        (mean, variance)
    }

    /// The explicit `gamma` matrix.
    pub fn gamma(&self) -> DMatrix<f64> {
        self.gamma_factor.tr_mul(&self.gamma_factor)
    }

    fn mean_from_factors(&self, e: &DVector<f64>) -> f64 {
        compensated_sum(self.alpha.iter().zip(e.iter()).map(|(al, ei)| al * ei))
    }

    pub fn mean(&self, a: f64) -> f64 {
        self.mean_from_factors(&self.dose_factors(a))
    }

    /// Latent variance, clamped at zero.
    pub fn variance(&self, a: f64) -> f64 {
        self.evaluate(a).1
    }

    pub fn surface(&self, doses: &[f64]) -> GridSurface {
        let (means, variances) = doses.iter().map(|a| self.evaluate(*a)).unzip();
        GridSurface {
            doses: doses.to_vec(),
            means,
            variances,
        }
    }
}

/// Posterior mean and variance tabulated on a dose grid.
#[derive(Debug, Clone)]
pub struct GridSurface {
    pub doses: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl GridSurface {
    pub fn objective(&self, s: f64) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.variances)
            .map(|(m, v)| m - s * v.sqrt())
            .collect()
    }

    /// Index and value of the best grid point; ties go to the smaller dose.
    pub fn argmax(&self, s: f64) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, v) in self.objective(s).into_iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    }
}

fn check_covariates(model: &FittedGP, c_star: &[f64]) -> Result<()> {
    if c_star.len() != model.covariate_dim() {
        return Err(Error::shape(format!(
            "expected {} covariates, got {}",
            model.covariate_dim(),
            c_star.len()
        )));
    }
    if c_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("covariates contain non-finite values"));
    }
    Ok(())
}

pub fn dose_coefficients(model: &FittedGP, c_star: &[f64]) -> Result<DoseCoefficients> {
    check_covariates(model, c_star)?;
    let hp = model.hyperparameters();
    let p = model.covariate_dim();
    let inputs = model.inputs();
    let sf2 = hp.signal_variance;

    let w = DVector::from_iterator(
        inputs.nrows(),
        inputs.row_iter().map(|row| {
            let d2 = weighted_sq_dist(
                row.iter().take(p).copied(),
                c_star.iter().copied(),
                &hp.length_scales[..p],
            );
            (-0.5 * d2).exp()
        }),
    );
    let alpha = w.component_mul(model.weights()) * sf2;
    let mut gamma_factor = model.cholesky_inverse() * sf2;
    for (mut col, wj) in gamma_factor.column_iter_mut().zip(w.iter()) {
        col *= *wj;
    }
    Ok(DoseCoefficients {
        alpha,
        gamma_factor,
        prior_variance: sf2,
        train_doses: inputs.column(p).into_owned(),
        dose_length_scale: hp.dose_length_scale(),
        dose_range: model.dose_range(),
    })
}

/// `mean(a) - s * sqrt(variance(a))` from the exponential-sum coefficients.
pub fn lcsl_objective(coeffs: &DoseCoefficients, a: f64, s: f64) -> f64 {
    let (mean, variance) = coeffs.evaluate(a);
    mean - s * variance.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoseRecommendation {
    pub dose: f64,
    /// Objective at `dose`, scaled reward units.
    pub objective: f64,
    pub mean: f64,
    pub sd: f64,
    /// Best grid dose before any refinement.
    pub grid_argmax: f64,
}

pub fn recommend_dose(
    model: &FittedGP,
    c_star: &[f64],
    penalty: PenaltySpec,
    grid_size: usize,
    refine: bool,
) -> Result<DoseRecommendation> {
    if grid_size < 2 {
        return Err(Error::domain(format!("grid needs at least 2 points, got {grid_size}")));
    }
    let coeffs = dose_coefficients(model, c_star)?;
    let surface = coeffs.surface(&model.dose_range().grid(grid_size));
    Ok(recommend_on_surface(&coeffs, &surface, penalty.s, refine))
}

pub(crate) fn recommend_on_surface(
    coeffs: &DoseCoefficients,
    surface: &GridSurface,
    s: f64,
    refine: bool,
) -> DoseRecommendation {
    let (idx, grid_best) = surface.argmax(s);
    let grid_dose = surface.doses[idx];
    let mut rec = DoseRecommendation {
        dose: grid_dose,
        objective: grid_best,
        mean: surface.means[idx],
        sd: surface.variances[idx].sqrt(),
        grid_argmax: grid_dose,
    };
    if refine {
        let lo = surface.doses[idx.saturating_sub(1)];
        let hi = surface.doses[(idx + 1).min(surface.doses.len() - 1)];
        let (a, v) = golden_section_max(|a| lcsl_objective(coeffs, a, s), lo, hi, 1e-10);
        if v > grid_best {
            rec.dose = a;
            rec.objective = v;
            rec.mean = coeffs.mean(a);
            rec.sd = coeffs.variance(a).sqrt();
        }
    }
    rec
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// One training record's share of a posterior mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    /// Zero-based training index.
    pub index: usize,
    pub value: f64,
}

/// Top-`k` training contributions `k(x*, x_i) [Lambda y]_i` to the posterior
/// mean at `[c*, a]`, by decreasing magnitude. All `n` contributions sum to
/// the mean.
pub fn explain(model: &FittedGP, c_star: &[f64], a: f64, k: usize) -> Result<Vec<Contribution>> {
    check_covariates(model, c_star)?;
    if k > model.n_train() {
        return Err(Error::domain(format!(
            "asked for {k} contributions from {} training records",
            model.n_train()
        )));
    }
    let mut x_star = c_star.to_vec();
    x_star.push(a);
    let k_star = kernel::cross_covariance(model.inputs(), &x_star, model.hyperparameters())?;
    let mut contributions: Vec<Contribution> = k_star
        .iter()
        .zip(model.weights().iter())
        .enumerate()
        .map(|(index, (kv, w))| Contribution { index, value: kv * w })
        .collect();
    contributions.sort_by(|x, y| y.value.abs().total_cmp(&x.value.abs()).then(x.index.cmp(&y.index)));
    contributions.truncate(k);
    Ok(contributions)
}

/// ARD relevances `1 / theta_i`, covariates first and dose last.
pub fn feature_relevances(model: &FittedGP) -> Vec<f64> {
    model.hyperparameters().length_scales.iter().map(|t| 1.0 / t).collect()
}
