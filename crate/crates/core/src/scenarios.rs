//! Ground-truth simulators for the five dose-finding scenarios.
//!
//! | id | p  | covariates  | dose   | assignment                       | noise sd |
//! |----|----|-------------|--------|----------------------------------|----------|
//! | 1  | 1  | U(0, 1)     | [0, 1] | U(0, 1)                          | 0.1      |
//! | 2  | 1  | U(0, 1)     | [0, 1] | U(0, 1)                          | 0.1      |
//! | 3  | 30 | U(-1, 1)    | [0, 2] | U(0, 2)                          | 1        |
//! | 4  | 10 | U(-1, 1)    | [0, 2] | U(0, 2)                          | 1        |
//! | 5  | 10 | U(-1, 1)    | [0, 2] | TruncN(f_opt(C), 0.5) on [0, 2]  | 1        |
//!
//! Scenario 2's optimal dose is
//! `(runge(C1) + step(C1) * [C1 > 0.5]) / 1.5 + 0.7`, which maps `[0, 1]`
//! onto roughly `[0.102, 0.997]`, inside the dose range.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::gp::{Dataset, DoseRange};
use crate::normal;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    Parabola = 1,
    Runge = 2,
    Linear = 3,
    Piecewise = 4,
    Observational = 5,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Assignment {
    Uniform,
    /// Normal around the optimal dose, truncated to the dose range.
    TruncatedNormal {
        sd: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub id: u8,
    pub covariate_dim: usize,
    pub dose_range: DoseRange,
    pub covariate_range: (f64, f64),
    pub noise_sd: f64,
    pub assignment: Assignment,
}

pub fn runge(x: f64) -> f64 {
    (3.0 * PI * (4.0 * x - 0.3)).cos() / (1.0 + 25.0 * (4.0 * x - 0.55).powi(2))
}

pub fn step(x: f64) -> f64 {
    0.1 * x * (10.0 + (20.0 * x).sin() + (50.0 * x).sin()) - 1.3
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Parabola,
        Scenario::Runge,
        Scenario::Linear,
        Scenario::Piecewise,
        Scenario::Observational,
    ];

    pub fn from_id(id: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| *s as u8 == id)
            .ok_or_else(|| Error::domain(format!("scenario id must be 1..5, got {id}")))
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn spec(self) -> ScenarioSpec {
        let unit = DoseRange { lo: 0.0, hi: 1.0 };
        let two = DoseRange { lo: 0.0, hi: 2.0 };
        let (covariate_dim, dose_range, covariate_range, noise_sd, assignment) = match self {
            Scenario::Parabola | Scenario::Runge => (1, unit, (0.0, 1.0), 0.1, Assignment::Uniform),
            Scenario::Linear => (30, two, (-1.0, 1.0), 1.0, Assignment::Uniform),
            Scenario::Piecewise => (10, two, (-1.0, 1.0), 1.0, Assignment::Uniform),
            Scenario::Observational => (10, two, (-1.0, 1.0), 1.0, Assignment::TruncatedNormal { sd: 0.5 }),
        };
        ScenarioSpec {
            id: self.id(),
            covariate_dim,
            dose_range,
            covariate_range,
            noise_sd,
            assignment,
        }
    }

    fn check_covariates(self, c: &[f64]) -> Result<()> {
        let spec = self.spec();
        if c.len() != spec.covariate_dim {
            return Err(Error::shape(format!(
                "scenario {} takes {} covariates, got {}",
                spec.id,
                spec.covariate_dim,
                c.len()
            )));
        }
        let (lo, hi) = spec.covariate_range;
        if let Some(v) = c.iter().find(|v| !(**v >= lo && **v <= hi)) {
            return Err(Error::domain(format!(
                "covariate {v} outside [{lo}, {hi}] for scenario {}",
                spec.id
            )));
        }
        Ok(())
    }

    /// True optimal dose `f_opt(c)`.
    pub fn optimal_dose(self, c: &[f64]) -> Result<f64> {
        self.check_covariates(c)?;
        Ok(self.optimal_dose_unchecked(c))
    }

    fn optimal_dose_unchecked(self, c: &[f64]) -> f64 {
        match self {
            Scenario::Parabola => 4.0 * (c[0] - 0.5).powi(2),
            Scenario::Runge => {
                let x = c[0];
                let jump = if x > 0.5 { step(x) } else { 0.0 };
                (runge(x) + jump) / 1.5 + 0.7
            }
            Scenario::Linear => 1.0 + 0.5 * c[0] + 0.5 * c[1],
            Scenario::Piecewise | Scenario::Observational => {
                let ind = if c[0].abs() >= 0.5 { 0.6 } else { 0.0 };
                ind + c[3] * c[3] + 0.5 * (c[6].abs() + 1.0).ln()
            }
        }
    }

    /// Expected reward `Q(c, a)`.
    pub fn true_q(self, c: &[f64], a: f64) -> Result<f64> {
        self.check_covariates(c)?;
        let range = self.spec().dose_range;
        if !range.contains(a) {
            return Err(Error::domain(format!("dose {a} outside [{}, {}]", range.lo, range.hi)));
        }
        Ok(self.true_q_unchecked(c, a))
    }

    pub(crate) fn true_q_unchecked(self, c: &[f64], a: f64) -> f64 {
        let f = self.optimal_dose_unchecked(c);
        match self {
            Scenario::Parabola | Scenario::Runge => -100.0 * (f - a).powi(2),
            Scenario::Linear => 8.0 + 4.0 * c[0] - 2.0 * c[1] - 2.0 * c[2] - 25.0 * (f - a).powi(2),
            Scenario::Piecewise | Scenario::Observational => {
                8.0 + 4.0 * (2.0 * PI * c[1]).cos() - 2.0 * c[3] - 8.0 * c[4].powi(3) - 15.0 * (f - a).abs()
            }
        }
    }

    /// `n` covariate vectors, i.i.d. uniform per dimension.
    pub fn sample_covariates<R: RngCore + ?Sized>(self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let spec = self.spec();
        let (lo, hi) = spec.covariate_range;
        let mut c = DMatrix::zeros(n, spec.covariate_dim);
        for i in 0..n {
            for j in 0..spec.covariate_dim {
                c[(i, j)] = rng::uniform(rng, lo, hi);
            }
        }
        c
    }

    /// Training data: per record, covariates, then dose, then noisy reward.
    pub fn sample_dataset<R: RngCore + ?Sized>(self, n: usize, rng: &mut R) -> Result<Dataset> {
        let spec = self.spec();
        let (lo, hi) = spec.covariate_range;
        let p = spec.covariate_dim;
        let range = spec.dose_range;
        let mut c = DMatrix::zeros(n, p);
        let mut doses = DVector::zeros(n);
        let mut rewards = DVector::zeros(n);
        let mut row = vec![0.0; p];
        for i in 0..n {
            for v in row.iter_mut() {
                *v = rng::uniform(rng, lo, hi);
            }
            let a = match spec.assignment {
                Assignment::Uniform => rng::uniform(rng, range.lo, range.hi),
                Assignment::TruncatedNormal { sd } => {
                    sample_truncated_normal(self.optimal_dose_unchecked(&row), range.lo, range.hi, sd, rng)
                }
            };
            let q = self.true_q_unchecked(&row, a);
            for (j, v) in row.iter().enumerate() {
                c[(i, j)] = *v;
            }
            doses[i] = a;
            rewards[i] = q + spec.noise_sd * rng::standard_normal(rng);
        }
        Dataset::new(c, doses, rewards, range)
    }
}

/// Draw from `N(mean, sd^2)` conditioned on `[lo, hi]`.
///
/// Plain rejection while the interval holds at least 1e-3 of the mass,
/// otherwise inversion of the normal CDF on whichever tail the interval
/// lies in.
pub fn sample_truncated_normal<R: RngCore + ?Sized>(mean: f64, lo: f64, hi: f64, sd: f64, rng: &mut R) -> f64 {
    debug_assert!(lo < hi);
    if sd.is_nan() || sd <= 0.0 {
        return mean.clamp(lo, hi);
    }
    let alpha = (lo - mean) / sd;
    let beta = (hi - mean) / sd;
    let upper_tail = alpha > 0.0;
    let mass = if upper_tail {
        normal::sf(alpha) - normal::sf(beta)
    } else {
        normal::cdf(beta) - normal::cdf(alpha)
    };
    if mass >= 1e-3 {
        loop {
            let x = mean + sd * rng::standard_normal(rng);
            if x >= lo && x <= hi {
                return x;
            }
        }
    }
    let z = if upper_tail {
        let u = rng::uniform(rng, normal::sf(beta), normal::sf(alpha));
        normal::inverse_cdf(u).map(|q| -q).unwrap_or(alpha)
    } else {
        let u = rng::uniform(rng, normal::cdf(alpha), normal::cdf(beta));
        normal::inverse_cdf(u).unwrap_or(beta)
    };
    (mean + sd * z).clamp(lo, hi)
}
