//! Self-checks against independent reference computations.
//!
//! Each suite recomputes a quantity by a different route (dense linear
//! solves, full refits, Monte Carlo, brute-force quadrature, grid search)
//! and compares it with the library's fast path.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bench::{ellipse_constraint, f1d, f1d_constraint, w, BenchmarkProblem};
use crate::constraint::{fit_constraint, ConstraintData};
use crate::design::Bounds;
use crate::error::{Error, Result};
use crate::gp::{GpModel, Hyperparams, JITTER};
use crate::improvement::expected_improvement;
use crate::stats::{sigmoid, GaussHermite};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// Kriging mean and variance against a dense LU solve.
    Kriging,
    /// Deduced variance against a refit with the candidate appended.
    Deduced,
    /// Closed-form EI against Monte Carlo.
    Ei,
    /// Laplace classifier probabilities against brute-force quadrature.
    Classifier,
    /// Recorded benchmark optima against a dense grid search.
    Minima,
}

pub const ALL_SUITES: [Suite; 5] = [Suite::Kriging, Suite::Deduced, Suite::Ei, Suite::Classifier, Suite::Minima];

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Self::Kriging => "kriging",
            Self::Deduced => "deduced",
            Self::Ei => "ei",
            Self::Classifier => "classifier",
            Self::Minima => "minima",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_SUITES.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let names: Vec<_> = ALL_SUITES.iter().map(|x| x.name()).collect();
            Error::Config(format!("unknown suite '{s}' (expected one of {})", names.join(", ")))
        })
    }
}

/// Closed-form EI as `(mean, sd, fmin) -> value`.
pub type EiFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    /// EI under test; replaceable so the harness itself can be checked.
    pub ei: EiFn,
    /// Random cases for the kriging and deduced-variance suites.
    pub cases: usize,
    pub ei_draws: usize,
}

impl fmt::Debug for VerifyOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VerifyOptions")
            .field("seed", &self.seed)
            .field("cases", &self.cases)
            .field("ei_draws", &self.ei_draws)
            .finish_non_exhaustive()
    }
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 20120901, ei: Arc::new(expected_improvement), cases: 1000, ei_draws: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub cases: usize,
    /// Largest discrepancy seen, in the suite's own units.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<10} cases={:<6} worst={:.3e} tol={:.1e} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite.name(),
            self.cases,
            self.worst,
            self.tolerance,
            self.detail
        )
    }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<SuiteReport> {
    match suite {
        Suite::Kriging => kriging_suite(opts),
        Suite::Deduced => deduced_suite(opts),
        Suite::Ei => ei_suite(opts),
        Suite::Classifier => classifier_suite(),
        Suite::Minima => minima_suite(),
    }
}

/// A random GP on the unit cube: `N <= 20`, `D <= 3`, well-conditioned
/// hyperparameters. Returns the model and its design.
pub fn random_model(rng: &mut ChaCha8Rng) -> Result<(GpModel, Vec<Vec<f64>>)> {
    let n = rng.gen_range(1..=20);
    let d = rng.gen_range(1..=3);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let lengthscales = (0..d).map(|_| 10f64.powf(rng.gen_range(-1.5..0.0))).collect();
    let nugget = 10f64.powf(rng.gen_range(-3.0..-1.0));
    let sigma2 = rng.gen_range(0.5..2.0);
    let params = Hyperparams::new(sigma2, lengthscales, nugget)?;
    Ok((GpModel::fit(&x, &z, &params)?, x))
}

fn random_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.gen::<f64>()).collect()
}

fn dense_correlation(a: &[f64], b: &[f64], p: &Hyperparams) -> f64 {
    let s: f64 = a.iter().zip(b).zip(&p.lengthscales).map(|((u, v), d)| (u - v).abs().powf(p.power) / d).sum();
    (-s).exp()
}

/// Kriging prediction by explicit LU solves on the dense Gram matrix.
pub fn dense_predict(x: &[Vec<f64>], z: &[f64], p: &Hyperparams, y: &[f64]) -> (f64, f64) {
    let n = x.len();
    let gram = DMatrix::from_fn(n, n, |i, j| {
        dense_correlation(&x[i], &x[j], p) + if i == j { p.nugget + JITTER } else { 0.0 }
    });
    let k = DVector::from_fn(n, |i, _| dense_correlation(&x[i], y, p));
    let lu = gram.lu();
    let kinv_z = lu.solve(&DVector::from_column_slice(z)).expect("gram is nonsingular");
    let kinv_k = lu.solve(&k).expect("gram is nonsingular");
    let mean = k.dot(&kinv_z);
    let var = p.sigma2 * (1.0 + p.nugget - k.dot(&kinv_k));
    (mean, var)
}

fn kriging_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    const TOL: f64 = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    for _ in 0..opts.cases {
        let (model, x) = random_model(&mut rng)?;
        let y = random_point(&mut rng, model.dim());
        let got = model.predict(&y)?;
        let (mean, var) = dense_predict(&x, &model.responses(), model.params(), &y);
        worst = worst.max((got.mean - mean).abs()).max((got.variance - var.max(0.0)).abs());
    }
    Ok(SuiteReport {
        suite: Suite::Kriging,
        passed: worst <= TOL,
        cases: opts.cases,
        worst,
        tolerance: TOL,
        detail: "absolute error in mean and variance".into(),
    })
}

/// Deduced variance at `y` from a full refit with `x` appended; the
/// response given to `x` is arbitrary.
pub fn refit_variance(model: &GpModel, y: &[f64], x: &[f64]) -> Result<f64> {
    let mut design = model.design();
    let mut z = model.responses();
    design.push(x.to_vec());
    z.push(0.0);
    let refit = GpModel::fit(&design, &z, model.params())?;
    Ok(refit.predict(y)?.variance)
}

fn deduced_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    const TOL: f64 = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ salt(2));
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < opts.cases {
        let (model, _) = random_model(&mut rng)?;
        let x = random_point(&mut rng, model.dim());
        let y = random_point(&mut rng, model.dim());
        let fast = match model.deduced_variance(&y, &x) {
            Ok(v) => v,
            Err(Error::DegenerateCandidate(_)) => continue,
            Err(e) => return Err(e),
        };
        worst = worst.max((fast - refit_variance(&model, &y, &x)?).abs());
        checked += 1;
    }
    Ok(SuiteReport {
        suite: Suite::Deduced,
        passed: worst <= TOL,
        cases: checked,
        worst,
        tolerance: TOL,
        detail: "absolute variance error vs refit".into(),
    })
}

const fn salt(tag: u64) -> u64 {
    tag.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Standardized improvements `(fmin - mean) / sd` probed by the EI suite.
pub const EI_Z_SCORES: [f64; 5] = [-3.0, -1.0, 0.0, 1.0, 3.0];

/// Monte Carlo estimate of `E[max(fmin - Y, 0)]`, `Y ~ N(mean, sd^2)`, with
/// its standard error.
pub fn ei_monte_carlo(mean: f64, sd: f64, fmin: f64, draws: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..draws {
        let e: f64 = rng.sample(StandardNormal);
        let imp = (fmin - (mean + sd * e)).max(0.0);
        sum += imp;
        sum_sq += imp * imp;
    }
    let n = draws as f64;
    let est = sum / n;
    let var = (sum_sq / n - est * est).max(0.0) * n / (n - 1.0);
    (est, (var / n).sqrt())
}

fn ei_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    const SE_TOL: f64 = 3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ salt(3));
    let (mean, sd) = (0.3, 1.7);
    let mut worst = 0.0f64;
    let mut notes = Vec::new();
    for u in EI_Z_SCORES {
        let fmin = mean + u * sd;
        let analytic = (opts.ei)(mean, sd, fmin);
        let (est, se) = ei_monte_carlo(mean, sd, fmin, opts.ei_draws, &mut rng);
        let score = (analytic - est).abs() / se;
        worst = worst.max(score);
        notes.push(format!("z={u}: {score:.2}se"));
    }
    Ok(SuiteReport {
        suite: Suite::Ei,
        passed: worst <= SE_TOL,
        cases: EI_Z_SCORES.len(),
        worst,
        tolerance: SE_TOL,
        detail: notes.join(" "),
    })
}

/// A small classifier problem on `[0, 7]`.
#[derive(Debug, Clone)]
pub struct ClassifierCase {
    pub x: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Every labelling of a few designs with one to three points.
pub fn classifier_cases() -> Vec<ClassifierCase> {
    let designs: [&[f64]; 6] = [&[3.5], &[1.0, 2.0], &[3.0, 3.5], &[1.0, 2.0, 3.0], &[0.5, 3.5, 6.5], &[2.0, 2.3, 2.6]];
    let mut out = Vec::new();
    for x in designs {
        for mask in 0..(1u32 << x.len()) {
            let labels = (0..x.len()).map(|i| ((mask >> i) & 1) as u8).collect();
            out.push(ClassifierCase { x: x.to_vec(), labels });
        }
    }
    out
}

pub const CLASSIFIER_TEST_GRID: [f64; 5] = [0.0, 1.75, 3.5, 5.25, 7.0];

/// Latent hyperparameters used by the classifier check, in unit-cube units.
pub fn classifier_params() -> Hyperparams {
    Hyperparams::new(2.0, vec![0.1], 0.0).expect("valid")
}

/// Exact predictive satisfaction probability by quadrature over the joint
/// latent posterior: a trapezoid grid over whitened latent values at the
/// design, and Gauss-Hermite for the test latent given them.
pub fn quadrature_probability(case: &ClassifierCase, params: &Hyperparams, lo: f64, hi: f64, y: f64) -> f64 {
    const HALF_WIDTH: f64 = 6.0;
    const STEPS: usize = 48;
    let n = case.x.len();
    let unit = |v: f64| (v - lo) / (hi - lo);
    let kern =
        |a: f64, b: f64| params.sigma2 * (-(unit(a) - unit(b)).abs().powf(params.power) / params.lengthscales[0]).exp();
    let k =
        DMatrix::from_fn(n, n, |i, j| kern(case.x[i], case.x[j]) + if i == j { params.sigma2 * JITTER } else { 0.0 });
    let l = k.clone().cholesky().expect("latent covariance is positive definite").l();
    let ks = DVector::from_fn(n, |i, _| kern(case.x[i], y));
    let v = l.solve_lower_triangular(&ks).expect("nonsingular");
    let cond_var = (params.sigma2 - v.norm_squared()).max(0.0);
    let gh = GaussHermite::new(32);

    let h = 2.0 * HALF_WIDTH / STEPS as f64;
    let axis: Vec<f64> = (0..=STEPS).map(|i| -HALF_WIDTH + h * i as f64).collect();
    let mut idx = vec![0usize; n];
    let (mut num, mut den) = (0.0, 0.0);
    loop {
        let eps = DVector::from_fn(n, |i, _| axis[idx[i]]);
        let f = &l * &eps;
        let mut weight = (-0.5 * eps.norm_squared()).exp();
        for i in 0..n {
            let sign = if case.labels[i] == 1 { 1.0 } else { -1.0 };
            weight *= sigmoid(sign * f[i]);
        }
        let m = v.dot(&eps);
        let p = gh.normal_expectation(m, cond_var, sigmoid);
        num += weight * p;
        den += weight;
        let mut i = 0;
        while i < n {
            idx[i] += 1;
            if idx[i] <= STEPS {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
        if i == n {
            break;
        }
    }
    num / den
}

fn classifier_suite() -> Result<SuiteReport> {
    const TOL: f64 = 0.05;
    let params = classifier_params();
    let bounds = Bounds::new(vec![0.0], vec![7.0])?;
    let mut worst = 0.0f64;
    let mut worst_case = String::new();
    let cases = classifier_cases();
    for case in &cases {
        let data = ConstraintData::new(case.x.iter().map(|v| vec![*v]).collect(), case.labels.clone())?;
        let model = fit_constraint(&data, &params, &bounds)?;
        for y in CLASSIFIER_TEST_GRID {
            let diff = (model.predict_prob(&[y])? - quadrature_probability(case, &params, 0.0, 7.0, y)).abs();
            if diff > worst {
                worst = diff;
                worst_case = format!("x={:?} labels={:?} y={y}", case.x, case.labels);
            }
        }
    }
    Ok(SuiteReport {
        suite: Suite::Classifier,
        passed: worst <= TOL,
        cases: cases.len() * CLASSIFIER_TEST_GRID.len(),
        worst,
        tolerance: TOL,
        detail: format!("worst at {worst_case}"),
    })
}

/// Constrained minimizer of the noise-free 1-d benchmark over a grid with
/// `steps + 1` points on `[0, 7]`.
pub fn grid_minimum_1d(steps: usize) -> (Vec<f64>, f64) {
    let mut best = (vec![f64::NAN], f64::INFINITY);
    for i in 0..=steps {
        let x = 7.0 * i as f64 / steps as f64;
        if f1d_constraint(x) == 1 {
            let v = f1d(x).expect("in domain");
            if v < best.1 {
                best = (vec![x], v);
            }
        }
    }
    best
}

/// Constrained minimizers of the 2-d benchmark on a `(steps + 1)^2` grid over
/// `[-2, 2]^2`; ties within `1e-12` are all returned.
pub fn grid_minima_2d(steps: usize) -> (Vec<Vec<f64>>, f64) {
    let axis: Vec<f64> = (0..=steps).map(|i| -2.0 + 4.0 * i as f64 / steps as f64).collect();
    let wv: Vec<f64> = axis.iter().map(|&x| w(x)).collect();
    let mut best = f64::INFINITY;
    let mut arg = Vec::new();
    for (i, &a) in axis.iter().enumerate() {
        for (j, &b) in axis.iter().enumerate() {
            if ellipse_constraint(a, b) == 0 {
                continue;
            }
            let v = -wv[i] * wv[j];
            if v < best - 1e-12 {
                best = v;
                arg = vec![vec![a, b]];
            } else if (v - best).abs() <= 1e-12 {
                arg.push(vec![a, b]);
            }
        }
    }
    (arg, best)
}

fn minima_suite() -> Result<SuiteReport> {
    let mut worst = 0.0f64;
    let mut notes = Vec::new();

    let steps_1d = 70_000;
    let (x1, v1) = grid_minimum_1d(steps_1d);
    let p1 = BenchmarkProblem::by_name("f1d", 0)?;
    let o1 = &p1.known_optima()[0];
    let dx = (x1[0] - o1.x[0]).abs() / (7.0 / steps_1d as f64);
    worst = worst.max(dx);
    notes.push(format!("f1d grid argmin {:.5} value {:.8}", x1[0], v1));

    let steps_2d = 2000;
    let (x2, v2) = grid_minima_2d(steps_2d);
    let p2 = BenchmarkProblem::by_name("f2d", 0)?;
    for got in &x2 {
        let near = p2
            .known_optima()
            .iter()
            .map(|o| o.x.iter().zip(got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(near / (4.0 / steps_2d as f64));
    }
    notes.push(format!("f2d grid minima {x2:?} value {v2:.8}"));

    // grid steps between the grid argmin and the recorded optimum
    const TOL: f64 = 1.0;
    Ok(SuiteReport {
        suite: Suite::Minima,
        passed: worst <= TOL && !x2.is_empty(),
        cases: 1 + x2.len(),
        worst,
        tolerance: TOL,
        detail: notes.join("; "),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        for s in ALL_SUITES {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn dense_predict_matches_on_one_point() {
        let p = Hyperparams::new(1.0, vec![1.0], 0.1).unwrap();
        let (m, v) = dense_predict(&[vec![0.0]], &[2.2], &p, &[0.0]);
        assert!((m - 2.2 / (1.1 + JITTER)).abs() < 1e-12);
        assert!((v - (1.1 - 1.0 / (1.1 + JITTER))).abs() < 1e-12);
    }

    #[test]
    fn quadrature_is_half_far_from_data() {
        let case = ClassifierCase { x: vec![0.0], labels: vec![1] };
        let params = Hyperparams::new(2.0, vec![0.01], 0.0).unwrap();
        let p = quadrature_probability(&case, &params, 0.0, 7.0, 7.0);
        assert!((p - 0.5).abs() < 1e-9);
    }

    #[test]
    fn quadrature_flips_with_labels() {
        let a = ClassifierCase { x: vec![1.0, 2.0], labels: vec![1, 0] };
        let b = ClassifierCase { x: vec![1.0, 2.0], labels: vec![0, 1] };
        let p = classifier_params();
        for y in [1.0, 1.5, 2.0] {
            let s = quadrature_probability(&a, &p, 0.0, 7.0, y) + quadrature_probability(&b, &p, 0.0, 7.0, y);
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn tampered_ei_fails() {
        let bad = |m: f64, s: f64, f: f64| expected_improvement(m, s, f) * 1.01;
        let opts = VerifyOptions { ei: Arc::new(bad), ei_draws: 200_000, ..VerifyOptions::default() };
        assert!(!run_suite(Suite::Ei, &opts).unwrap().passed);
        let good = VerifyOptions { ei_draws: 200_000, ..VerifyOptions::default() };
        assert!(run_suite(Suite::Ei, &good).unwrap().passed);
    }
}
