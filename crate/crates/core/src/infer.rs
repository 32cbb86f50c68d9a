//! Hyperparameter inference for both surrogates.
//!
//! The objective GP is searched over `(log d_j, log nugget)` with `sigma2`
//! profiled at its conditional maximum `Z' K^-1 Z / N`. The classifier is
//! searched over `(log d_j, log sigma2)` under its Laplace marginal likelihood.
//! Priors are independent normals on the log scale (log-normal on the
//! parameters), and every search runs inside a box on the log scale.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::constraint::{fit_constraint_warm, ConstraintData, ConstraintModel};
use crate::design::Bounds;
use crate::error::{Error, Result};
use crate::gp::{GpModel, Hyperparams, Scaling};
use crate::simplex::{self, NelderMeadOptions};

/// Log-normal prior on one positive parameter, restricted to `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalPrior {
    pub median: f64,
    pub log_sd: f64,
    pub min: f64,
    pub max: f64,
}

impl LogNormalPrior {
    fn log_density(&self, log_value: f64) -> f64 {
        if log_value < self.min.ln() || log_value > self.max.ln() {
            return f64::NEG_INFINITY;
        }
        let t = (log_value - self.median.ln()) / self.log_sd;
        -0.5 * t * t
    }

    fn clamp_log(&self, log_value: f64) -> f64 {
        log_value.clamp(self.min.ln(), self.max.ln())
    }

    fn sample_log(&self, rng: &mut ChaCha8Rng) -> f64 {
        let n = Normal::new(self.median.ln(), self.log_sd).expect("positive sd");
        self.clamp_log(n.sample(rng))
    }
}

/// Priors and search budget. Lengthscales are in unit-cube coordinates, so a
/// median of 0.1 is a tenth of each input range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub lengthscale: LogNormalPrior,
    pub nugget: LogNormalPrior,
    pub constraint_lengthscale: LogNormalPrior,
    pub constraint_scale: LogNormalPrior,
    pub power: f64,
    pub starts: usize,
    pub max_evaluations: usize,
    /// Slice-sampling sweeps discarded before collecting draws.
    pub burn_in: usize,
    /// Sweeps between retained draws.
    pub thin: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            lengthscale: LogNormalPrior { median: 0.1, log_sd: 1.5, min: 1e-4, max: 10.0 },
            nugget: LogNormalPrior { median: 0.01, log_sd: 2.0, min: 1e-6, max: 1.0 },
            constraint_lengthscale: LogNormalPrior { median: 0.1, log_sd: 1.5, min: 1e-3, max: 10.0 },
            constraint_scale: LogNormalPrior { median: 2.0, log_sd: 1.5, min: 0.05, max: 100.0 },
            power: 2.0,
            starts: 5,
            max_evaluations: 250,
            burn_in: 20,
            thin: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThetaMode {
    Map,
    Sample(usize),
}

/// Outcome of an objective-surrogate inference.
#[derive(Debug, Clone)]
pub struct ObjectiveFit {
    /// The MAP estimate (also the first entry of `draws` in MAP mode).
    pub map: Hyperparams,
    pub map_log_posterior: f64,
    /// One entry in MAP mode, `T` posterior draws in sample mode.
    pub draws: Vec<Hyperparams>,
    pub draw_log_posteriors: Vec<f64>,
    /// Log posterior at each multi-start initialization.
    pub start_log_posteriors: Vec<f64>,
    pub fell_back: bool,
}

/// Concentrated log likelihood plus log prior for the objective GP at
/// `theta = (log d_1..log d_D, log nugget)`. Returns `-inf` when the Gram
/// matrix cannot be factorized.
pub fn objective_log_posterior(
    x: &[Vec<f64>],
    z: &[f64],
    scaling: &Scaling,
    prior: &PriorConfig,
    theta: &[f64],
) -> f64 {
    let d = theta.len() - 1;
    let mut lp: f64 = theta[..d].iter().map(|t| prior.lengthscale.log_density(*t)).sum();
    lp += prior.nugget.log_density(theta[d]);
    if !lp.is_finite() {
        return f64::NEG_INFINITY;
    }
    let Some(params) = objective_params(theta, 1.0, prior.power) else {
        return f64::NEG_INFINITY;
    };
    match GpModel::fit_scaled(x, z, &params, scaling.clone()) {
        Ok(m) => {
            let n = z.len() as f64;
            let s2 = (m.quadratic_form() / n).max(1e-300);
            lp - 0.5 * n * (s2.ln() + 1.0 + (2.0 * std::f64::consts::PI).ln()) - 0.5 * m.log_det()
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

fn objective_params(theta: &[f64], sigma2: f64, power: f64) -> Option<Hyperparams> {
    let d = theta.len() - 1;
    let p = Hyperparams {
        sigma2,
        lengthscales: theta[..d].iter().map(|t| t.exp()).collect(),
        nugget: theta[d].exp(),
        power,
    };
    p.validate().ok().map(|_| p)
}

/// Attach the profiled `sigma2` to correlation parameters.
fn profiled(x: &[Vec<f64>], z: &[f64], scaling: &Scaling, theta: &[f64], power: f64) -> Result<Hyperparams> {
    let unit = objective_params(theta, 1.0, power)
        .ok_or_else(|| Error::InvalidHyperparams("non-finite search point".into()))?;
    let m = GpModel::fit_scaled(x, z, &unit, scaling.clone())?;
    let s2 = (m.quadratic_form() / z.len() as f64).max(1e-12);
    Ok(Hyperparams { sigma2: s2, ..unit })
}

fn objective_theta(p: &Hyperparams) -> Vec<f64> {
    p.lengthscales.iter().map(|d| d.ln()).chain([p.nugget.ln()]).collect()
}

/// MAP (and optionally slice-sampled draws) for the objective surrogate.
/// `warm` seeds one of the multi-start points.
pub fn infer_hyperparams(
    x: &[Vec<f64>],
    z: &[f64],
    scaling: &Scaling,
    prior: &PriorConfig,
    rng: &mut ChaCha8Rng,
    mode: ThetaMode,
    warm: Option<&Hyperparams>,
) -> Result<ObjectiveFit> {
    if x.len() < 2 {
        return Err(Error::Config("hyperparameter inference needs at least two design points".into()));
    }
    let dim = scaling.dim();
    let lp = |t: &[f64]| objective_log_posterior(x, z, scaling, prior, t);

    let medians: Vec<f64> =
        std::iter::repeat_n(prior.lengthscale.median.ln(), dim).chain([prior.nugget.median.ln()]).collect();
    let mut starts = vec![medians.clone()];
    if let Some(w) = warm.filter(|w| w.dim() == dim) {
        let mut t = objective_theta(w);
        for v in t.iter_mut().take(dim) {
            *v = prior.lengthscale.clamp_log(*v);
        }
        t[dim] = prior.nugget.clamp_log(t[dim]);
        starts.push(t);
    }
    while starts.len() < prior.starts.max(1) {
        let mut t: Vec<f64> = (0..dim).map(|_| prior.lengthscale.sample_log(rng)).collect();
        t.push(prior.nugget.sample_log(rng));
        starts.push(t);
    }

    let box_clip = |t: &mut [f64]| {
        for v in t.iter_mut().take(dim) {
            *v = prior.lengthscale.clamp_log(*v);
        }
        t[dim] = prior.nugget.clamp_log(t[dim]);
    };
    let (best, best_lp, start_lps) = multi_start(&starts, &lp, box_clip, prior.max_evaluations);

    let fell_back = !best_lp.is_finite();
    let (map_theta, map_lp) = if best_lp.is_finite() {
        (best, best_lp)
    } else {
        log::warn!("objective hyperparameter search failed; using prior medians");
        (medians.clone(), lp(&medians))
    };
    let map = profiled(x, z, scaling, &map_theta, prior.power)?;

    let (draws, draw_lps) = match mode {
        ThetaMode::Map => (vec![map.clone()], vec![map_lp]),
        ThetaMode::Sample(t) => {
            if t == 0 {
                return Err(Error::Config("sample mode needs at least one draw".into()));
            }
            let thetas = slice_sample(&lp, &map_theta, t, prior.burn_in, prior.thin, rng);
            let mut out = Vec::with_capacity(t);
            let mut lps = Vec::with_capacity(t);
            for th in thetas {
                lps.push(lp(&th));
                out.push(profiled(x, z, scaling, &th, prior.power)?);
            }
            (out, lps)
        }
    };
    Ok(ObjectiveFit {
        map,
        map_log_posterior: map_lp,
        draws,
        draw_log_posteriors: draw_lps,
        start_log_posteriors: start_lps,
        fell_back,
    })
}

/// Run Nelder–Mead from each start and keep the best point.
fn multi_start<F, P>(starts: &[Vec<f64>], lp: &F, clip: P, budget: usize) -> (Vec<f64>, f64, Vec<f64>)
where
    F: Fn(&[f64]) -> f64,
    P: Fn(&mut [f64]) + Copy,
{
    let mut best = starts[0].clone();
    let mut best_lp = f64::NEG_INFINITY;
    let mut start_lps = Vec::with_capacity(starts.len());
    for s in starts {
        let mut s = s.clone();
        clip(&mut s);
        start_lps.push(lp(&s));
        let res = simplex::minimize(
            |t| -lp(t),
            clip,
            &s,
            &vec![0.5; s.len()],
            NelderMeadOptions { max_iterations: budget, diameter_tol: 1e-3, max_evaluations: Some(budget) },
        );
        let v = -res.value;
        if v > best_lp {
            best_lp = v;
            best = res.x;
        }
    }
    (best, best_lp, start_lps)
}

/// Coordinate-wise univariate slice sampling with stepping out.
pub fn slice_sample<F>(
    lp: &F,
    init: &[f64],
    draws: usize,
    burn_in: usize,
    thin: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    const WIDTH: f64 = 1.0;
    const MAX_STEPS: usize = 20;
    let mut x = init.to_vec();
    let mut fx = lp(&x);
    let mut out = Vec::with_capacity(draws);
    let sweeps = burn_in + draws * thin.max(1);
    for sweep in 0..sweeps {
        for j in 0..x.len() {
            let level = fx + rng.gen::<f64>().ln();
            let mut lo = x[j] - WIDTH * rng.gen::<f64>();
            let mut hi = lo + WIDTH;
            let eval_at = |v: f64, base: &[f64]| {
                let mut p = base.to_vec();
                p[j] = v;
                lp(&p)
            };
            let mut steps = 0;
            while steps < MAX_STEPS && eval_at(lo, &x) > level {
                lo -= WIDTH;
                steps += 1;
            }
            steps = 0;
            while steps < MAX_STEPS && eval_at(hi, &x) > level {
                hi += WIDTH;
                steps += 1;
            }
            loop {
                let v = lo + (hi - lo) * rng.gen::<f64>();
                let fv = eval_at(v, &x);
                if fv > level {
                    x[j] = v;
                    fx = fv;
                    break;
                }
                if v < x[j] {
                    lo = v;
                } else {
                    hi = v;
                }
                if hi - lo < 1e-12 {
                    break;
                }
            }
        }
        if sweep >= burn_in && (sweep - burn_in + 1).is_multiple_of(thin.max(1)) {
            out.push(x.clone());
        }
    }
    out.truncate(draws);
    out
}

/// Laplace log marginal likelihood plus log prior for the classifier at
/// `theta = (log d_1..log d_D, log sigma2)`.
fn constraint_log_posterior(
    data: &ConstraintData,
    bounds: &Bounds,
    prior: &PriorConfig,
    theta: &[f64],
    warm: Option<&DVector<f64>>,
) -> (f64, Option<ConstraintModel>) {
    let d = theta.len() - 1;
    let mut lp: f64 = theta[..d].iter().map(|t| prior.constraint_lengthscale.log_density(*t)).sum();
    lp += prior.constraint_scale.log_density(theta[d]);
    if !lp.is_finite() {
        return (f64::NEG_INFINITY, None);
    }
    let params = Hyperparams {
        sigma2: theta[d].exp(),
        lengthscales: theta[..d].iter().map(|t| t.exp()).collect(),
        nugget: 0.0,
        power: prior.power,
    };
    match fit_constraint_warm(data, &params, bounds, warm) {
        Ok(m) => (lp + m.log_marginal_likelihood(), Some(m)),
        Err(_) => (f64::NEG_INFINITY, None),
    }
}

/// MAP classifier parameters and the model fitted at them.
pub fn infer_constraint_params(
    data: &ConstraintData,
    bounds: &Bounds,
    prior: &PriorConfig,
    rng: &mut ChaCha8Rng,
    warm: Option<&ConstraintModel>,
) -> Result<ConstraintModel> {
    let dim = bounds.dim();
    let warm_alpha = warm.map(|m| m.alpha().clone());
    let lp = |t: &[f64]| constraint_log_posterior(data, bounds, prior, t, warm_alpha.as_ref()).0;

    let medians: Vec<f64> = std::iter::repeat_n(prior.constraint_lengthscale.median.ln(), dim)
        .chain([prior.constraint_scale.median.ln()])
        .collect();
    let clip = |t: &mut [f64]| {
        for v in t.iter_mut().take(dim) {
            *v = prior.constraint_lengthscale.clamp_log(*v);
        }
        t[dim] = prior.constraint_scale.clamp_log(t[dim]);
    };
    let mut starts = vec![medians.clone()];
    if let Some(w) = warm.filter(|w| w.params().dim() == dim) {
        let p = w.params();
        starts.push(p.lengthscales.iter().map(|v| v.ln()).chain([p.sigma2.ln()]).collect());
    }
    while starts.len() < prior.starts.max(1) {
        let mut t: Vec<f64> = (0..dim).map(|_| prior.constraint_lengthscale.sample_log(rng)).collect();
        t.push(prior.constraint_scale.sample_log(rng));
        starts.push(t);
    }
    let (best, best_lp, _) = multi_start(&starts, &lp, clip, prior.max_evaluations);
    let theta = if best_lp.is_finite() {
        best
    } else {
        log::warn!("constraint hyperparameter search failed; using prior medians");
        medians
    };
    match constraint_log_posterior(data, bounds, prior, &theta, warm_alpha.as_ref()) {
        (_, Some(m)) => Ok(m),
        _ => Err(Error::ConstraintFit("classifier could not be fitted at any parameter value".into())),
    }
}
