//! The two synthetic constrained benchmarks.
//!
//! * `f1d`: `sin(x) + 2.55 * phi_0.45(x - 3)` on `[0, 7]`, observed with
//!   N(0, 0.15^2) noise, feasible region `[0, 2] U [4, 7]`.
//! * `f2d`: `-w(x1) w(x2)` with
//!   `w(x) = exp(-(x-1)^2) + exp(-0.8 (x+1)^2) - 0.05 sin(8 (x+0.1))` on
//!   `[-2, 2]^2`, noise-free, feasible inside the 95% contour of a centred
//!   bivariate normal with variance 0.75^2 and correlation -0.5.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::design::Bounds;
use crate::error::{check_dim, Error, Result};
use crate::optimizer::{Observation, Problem};
use crate::stats::norm_pdf;

/// 0.95 quantile of the chi-square distribution with 2 degrees of freedom,
/// `-2 ln(0.05)`.
pub const CHI2_2DF_Q95: f64 = 5.991_464_547;

pub const F1D_NOISE_SD: f64 = 0.15;
const F1D_BUMP_SD: f64 = 0.45;

const ELLIPSE_VAR: f64 = 0.75 * 0.75;
const ELLIPSE_RHO: f64 = -0.5;

/// Noise-free mean of the 1-d benchmark.
pub fn f1d(x: f64) -> Result<f64> {
    if !(0.0..=7.0).contains(&x) {
        return Err(Error::Domain(format!("f1d is defined on [0, 7], got {x}")));
    }
    Ok(x.sin() + 2.55 * norm_pdf((x - 3.0) / F1D_BUMP_SD) / F1D_BUMP_SD)
}

/// 1 on `[0, 2] U [4, 7]`.
pub fn f1d_constraint(x: f64) -> u8 {
    u8::from((0.0..=2.0).contains(&x) || (4.0..=7.0).contains(&x))
}

pub fn w(x: f64) -> f64 {
    (-(x - 1.0).powi(2)).exp() + (-0.8 * (x + 1.0).powi(2)).exp() - 0.05 * (8.0 * (x + 0.1)).sin()
}

/// The 2-d benchmark objective on `[-2, 2]^2`.
pub fn f2d(x1: f64, x2: f64) -> Result<f64> {
    for v in [x1, x2] {
        if !(-2.0..=2.0).contains(&v) {
            return Err(Error::Domain(format!("f2d is defined on [-2, 2]^2, got {v}")));
        }
    }
    Ok(-w(x1) * w(x2))
}

/// Mahalanobis form `x' Sigma^-1 x` of the constraint ellipse.
pub fn ellipse_quadratic(x1: f64, x2: f64) -> f64 {
    (x1 * x1 - 2.0 * ELLIPSE_RHO * x1 * x2 + x2 * x2) / (ELLIPSE_VAR * (1.0 - ELLIPSE_RHO * ELLIPSE_RHO))
}

/// 1 inside the 95% contour.
pub fn ellipse_constraint(x1: f64, x2: f64) -> u8 {
    u8::from(ellipse_quadratic(x1, x2) <= CHI2_2DF_Q95)
}

/// Constrained minimizer recorded from a dense-grid search of the noise-free
/// objective over the feasible region.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownOptimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub provenance: &'static str,
}

/// A named benchmark with its own noise stream.
#[derive(Debug, Clone)]
pub struct BenchmarkProblem {
    name: &'static str,
    bounds: Bounds,
    noise_sd: f64,
    noise: ChaCha8Rng,
    evaluations: usize,
}

pub const BENCHMARKS: [&str; 2] = ["f1d", "f2d"];

impl BenchmarkProblem {
    /// Problem by name; `seed` drives the observation noise.
    pub fn by_name(name: &str, seed: u64) -> Result<Self> {
        let (name, bounds, noise_sd) = match name {
            "f1d" => ("f1d", Bounds::new(vec![0.0], vec![7.0])?, F1D_NOISE_SD),
            "f2d" => ("f2d", Bounds::new(vec![-2.0, -2.0], vec![2.0, 2.0])?, 0.0),
            other => {
                return Err(Error::Config(format!(
                    "unknown problem '{other}' (expected one of {})",
                    BENCHMARKS.join(", ")
                )))
            }
        };
        let mut noise = ChaCha8Rng::seed_from_u64(seed);
        noise.set_stream(u64::MAX);
        Ok(Self { name, bounds, noise_sd, noise, evaluations: 0 })
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn description(&self) -> &'static str {
        match self.name {
            "f1d" => "sin(x) + 2.55*phi_0.45(x-3) on [0,7], noise sd 0.15, feasible on [0,2] U [4,7]",
            _ => "-w(x1)w(x2) on [-2,2]^2, noise-free, feasible inside the 95% ellipse (var 0.75^2, rho -0.5)",
        }
    }

    /// Noise-free objective.
    pub fn mean(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.bounds.dim(), x.len())?;
        match self.name {
            "f1d" => f1d(x[0]),
            _ => f2d(x[0], x[1]),
        }
    }

    pub fn constraint(&self, x: &[f64]) -> Result<u8> {
        check_dim(self.bounds.dim(), x.len())?;
        Ok(match self.name {
            "f1d" => f1d_constraint(x[0]),
            _ => ellipse_constraint(x[0], x[1]),
        })
    }

    /// Recorded constrained minimizers (two symmetric ones for `f2d`).
    pub fn known_optima(&self) -> Vec<KnownOptimum> {
        const GRID_1D: &str = "dense grid over [0,2] U [4,7], step 1e-5";
        const GRID: &str = "dense grid over the ellipse interior, step 1e-3";
        match self.name {
            "f1d" => vec![KnownOptimum { x: vec![4.72482], value: -0.998_463_77, provenance: GRID_1D }],
            _ => vec![
                KnownOptimum { x: vec![1.137, -1.041], value: -1.093_396_13, provenance: GRID },
                KnownOptimum { x: vec![-1.041, 1.137], value: -1.093_396_13, provenance: GRID },
            ],
        }
    }
}

impl Problem for BenchmarkProblem {
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<Observation> {
        let mean = self.mean(x)?;
        let c = self.constraint(x)?;
        let eps = if self.noise_sd > 0.0 {
            Normal::new(0.0, self.noise_sd).expect("positive sd").sample(&mut self.noise)
        } else {
            0.0
        };
        self.evaluations += 1;
        Ok(Observation { z: mean + eps, c })
    }

    fn known_constraint(&self, x: &[f64]) -> Option<bool> {
        self.constraint(x).ok().map(|c| c == 1)
    }
}
