//! ARD squared-exponential covariance with a nugget term.
//!
//! ```text
//! k(x_p, x_q) = sf2 * exp(-sum_i (x_pi - x_qi)^2 / (2 theta_i)) + sn2 * [p == q]
//! ```
//!
//! `theta_i` divides the squared distance directly, so it is a *squared*
//! length-scale (the usual `l_i` satisfies `theta_i = l_i^2`). Inputs are
//! `[covariates..., dose]`; the dose always occupies the last dimension.
//!
//! The nugget indicator is structural: it applies on the diagonal of a Gram
//! matrix over a single point set and never because two rows happen to hold
//! equal coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Signal variance `sf2`, in squared (scaled) reward units.
    pub signal_variance: f64,
    /// Squared length-scales, one per covariate followed by one for dose.
    pub length_scales: Vec<f64>,
    /// Noise variance `sn2`.
    pub noise_variance: f64,
}

impl Hyperparameters {
    pub fn new(signal_variance: f64, length_scales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let hp = Self {
            signal_variance,
            length_scales,
            noise_variance,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance.is_finite() && self.signal_variance > 0.0) {
            return Err(Error::domain(format!(
                "signal variance must be positive and finite, got {}",
                self.signal_variance
            )));
        }
        if self.length_scales.is_empty() {
            return Err(Error::shape("at least one length-scale (the dose) is required"));
        }
        // +inf is allowed: it switches a dimension off entirely.
        if let Some(t) = self.length_scales.iter().find(|t| t.is_nan() || **t <= 0.0) {
            return Err(Error::domain(format!("length-scales must be positive, got {t}")));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(Error::domain(format!(
                "noise variance must be non-negative and finite, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }

    /// Input dimension `d = p + 1`.
    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    /// Squared length-scale of the dose dimension.
    pub fn dose_length_scale(&self) -> f64 {
        self.length_scales[self.dim() - 1]
    }

    /// `[ln sf2, ln theta_1, ..., ln theta_d, ln sn2]`.
    pub fn to_log_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim() + 2);
        out.push(self.signal_variance.ln());
        out.extend(self.length_scales.iter().map(|t| t.ln()));
        out.push(self.noise_variance.ln());
        out
    }

    pub fn from_log_params(params: &[f64]) -> Self {
        let n = params.len();
        assert!(n >= 3, "need at least signal, one length-scale and noise");
        Self {
            signal_variance: params[0].exp(),
            length_scales: params[1..n - 1].iter().map(|v| v.exp()).collect(),
            noise_variance: params[n - 1].exp(),
        }
    }
}

/// `sum_i (a_i - b_i)^2 / theta_i` over the given dimensions.
#[inline]
pub(crate) fn weighted_sq_dist(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>, theta: &[f64]) -> f64 {
    a.zip(b)
        .zip(theta)
        .map(|((x, y), t)| {
            let diff = x - y;
            diff * diff / t
        })
        .sum()
}

fn check_point(x: &[f64], hp: &Hyperparameters, what: &str) -> Result<()> {
    if x.len() != hp.dim() {
        return Err(Error::shape(format!(
            "{what} has {} entries, kernel expects {}",
            x.len(),
            hp.dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(format!("{what} contains non-finite values")));
    }
    Ok(())
}

fn check_matrix(x: &DMatrix<f64>, hp: &Hyperparameters) -> Result<()> {
    if x.ncols() != hp.dim() {
        return Err(Error::shape(format!(
            "input matrix has {} columns, kernel expects {}",
            x.ncols(),
            hp.dim()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::shape("input matrix has no rows"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("input matrix contains non-finite values"));
    }
    Ok(())
}

/// Pointwise covariance. `same_point` is the Kronecker delta: pass `true`
/// only for a Gram diagonal entry.
pub fn kernel_eval(xp: &[f64], xq: &[f64], hp: &Hyperparameters, same_point: bool) -> Result<f64> {
    check_point(xp, hp, "x_p")?;
    check_point(xq, hp, "x_q")?;
    let d2 = weighted_sq_dist(xp.iter().copied(), xq.iter().copied(), &hp.length_scales);
    let nugget = if same_point { hp.noise_variance } else { 0.0 };
    Ok(hp.signal_variance * (-0.5 * d2).exp() + nugget)
}

/// Noise-free Gram matrix `sf2 * exp(-d2/2)`, built symmetrically.
pub(crate) fn signal_gram(x: &DMatrix<f64>, hp: &Hyperparameters) -> DMatrix<f64> {
    let (n, d) = x.shape();
    // Rows of `x` are strided; work on a transposed copy so each point is contiguous.
    let xt = x.transpose();
    let pts = xt.as_slice();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = hp.signal_variance;
        let xj = &pts[j * d..(j + 1) * d];
        for i in (j + 1)..n {
            let xi = &pts[i * d..(i + 1) * d];
            let d2 = weighted_sq_dist(xi.iter().copied(), xj.iter().copied(), &hp.length_scales);
            let v = hp.signal_variance * (-0.5 * d2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `K_ij = k(x_i, x_j)` over the rows of `x`, nugget on the diagonal only.
pub fn gram_matrix(x: &DMatrix<f64>, hp: &Hyperparameters) -> Result<DMatrix<f64>> {
    hp.validate()?;
    check_matrix(x, hp)?;
    let mut k = signal_gram(x, hp);
    for i in 0..x.nrows() {
        k[(i, i)] += hp.noise_variance;
    }
    Ok(k)
}

/// `k_*` between every training row and a test point. No nugget.
pub fn cross_covariance(x_train: &DMatrix<f64>, x_star: &[f64], hp: &Hyperparameters) -> Result<DVector<f64>> {
    check_matrix(x_train, hp)?;
    check_point(x_star, hp, "x_star")?;
    Ok(cross_covariance_unchecked(x_train, x_star, hp))
}

pub(crate) fn cross_covariance_unchecked(x_train: &DMatrix<f64>, x_star: &[f64], hp: &Hyperparameters) -> DVector<f64> {
    DVector::from_iterator(
        x_train.nrows(),
        x_train.row_iter().map(|row| {
            let d2 = weighted_sq_dist(row.iter().copied(), x_star.iter().copied(), &hp.length_scales);
            hp.signal_variance * (-0.5 * d2).exp()
        }),
    )
}
