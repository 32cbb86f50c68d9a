//! Improvement statistics: expected improvement, the `f_min` threshold,
//! expected conditional improvement (ECI) and its integrated, weighted form
//! (IECI) over a finite set of reference locations.
//!
//! Conventions: the ECI at reference `y` given candidate `x` is the EI formula
//! evaluated with the unchanged predictive mean at `y` and the deduced standard
//! deviation at `y` once `x` joins the design. IECI is the negated weighted
//! average of ECI over references and posterior draws, so larger is better, and
//! differs from the expected reduction in improvement only by the
//! candidate-free weighted average of EI.

use std::io::Write;

use rand::Rng;

use crate::design::{Bounds, RngState};
use crate::error::{check_dim, Error, Result};
use crate::gp::GpModel;
use crate::stats::{norm_cdf, norm_pdf};

/// Closed-form `E[max(fmin - Z, 0)]` for `Z ~ N(mean, sd^2)`.
pub fn expected_improvement(mean: f64, sd: f64, fmin: f64) -> f64 {
    let diff = fmin - mean;
    if !(sd > 0.0) {
        return diff.max(0.0);
    }
    let u = diff / sd;
    (diff * norm_cdf(u) + sd * norm_pdf(u)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FminRule {
    /// Minimum of the posterior mean over the references and the design.
    MinPosteriorMean,
    /// Minimum observed response. Breaks `ECI <= EI`; diagnostics only.
    MinObserved,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FminValue {
    pub value: f64,
    pub rule: FminRule,
}

impl FminValue {
    fn require_mean_rule(&self) -> Result<()> {
        match self.rule {
            FminRule::MinPosteriorMean => Ok(()),
            FminRule::MinObserved => Err(Error::Config(
                "the minimum observed response cannot serve as f_min for conditional improvement".into(),
            )),
        }
    }
}

/// The improvement threshold for `model` over `refs`.
pub fn f_min(model: &GpModel, refs: &[Vec<f64>], rule: FminRule) -> Result<FminValue> {
    if refs.is_empty() {
        return Err(Error::Config("f_min needs at least one reference location".into()));
    }
    let value = match rule {
        FminRule::MinPosteriorMean => {
            let mut best = f64::INFINITY;
            for y in refs.iter().chain(model.design().iter()) {
                best = best.min(model.predict_mean(y)?);
            }
            best
        }
        FminRule::MinObserved => model.responses().into_iter().fold(f64::INFINITY, f64::min),
    };
    Ok(FminValue { value, rule })
}

/// Weight at or above which a reference counts as feasible for the threshold.
pub const FEASIBLE_WEIGHT: f64 = 0.5;

/// Posterior-mean threshold over the references whose weight is at least
/// [`FEASIBLE_WEIGHT`]; over all references when none qualifies.
pub fn weighted_f_min(model: &GpModel, refs: &[Vec<f64>], weights: &[f64]) -> Result<FminValue> {
    if refs.is_empty() {
        return Err(Error::Config("f_min needs at least one reference location".into()));
    }
    check_dim(refs.len(), weights.len())?;
    let any = weights.iter().any(|w| *w >= FEASIBLE_WEIGHT);
    let mut best = f64::INFINITY;
    for (y, w) in refs.iter().zip(weights) {
        if !any || *w >= FEASIBLE_WEIGHT {
            best = best.min(model.predict_mean(y)?);
        }
    }
    Ok(FminValue { value: best, rule: FminRule::MinPosteriorMean })
}

/// Expected conditional improvement at reference `y` when `x` joins the design.
pub fn expected_conditional_improvement(model: &GpModel, y: &[f64], x: &[f64], fmin: FminValue) -> Result<f64> {
    fmin.require_mean_rule()?;
    let mean = model.predict(y)?.mean;
    let var = model.deduced_variance(y, x)?;
    Ok(expected_improvement(mean, var.sqrt(), fmin.value))
}

/// Reference locations, their weights, and the acquisition search pool.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    refs: Vec<Vec<f64>>,
    weights: Vec<f64>,
    candidates: Vec<Vec<f64>>,
}

impl CandidateSet {
    pub fn new(refs: Vec<Vec<f64>>, weights: Vec<f64>, candidates: Vec<Vec<f64>>) -> Result<Self> {
        if refs.is_empty() {
            return Err(Error::Config("the reference set is empty".into()));
        }
        check_dim(refs.len(), weights.len())?;
        let dim = refs[0].len();
        for p in refs.iter().chain(&candidates) {
            check_dim(dim, p.len())?;
        }
        validate_weights(&weights)?;
        Ok(Self { refs, weights, candidates })
    }

    pub fn refs(&self) -> &[Vec<f64>] {
        &self.refs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn candidates(&self) -> &[Vec<f64>] {
        &self.candidates
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        check_dim(self.refs.len(), weights.len())?;
        validate_weights(&weights)?;
        self.weights = weights;
        Ok(())
    }
}

fn validate_weights(w: &[f64]) -> Result<()> {
    match w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        Some(v) => Err(Error::Config(format!("reference weight {v} is not a finite non-negative number"))),
        None => Ok(()),
    }
}

/// One posterior draw of the objective surrogate with its threshold and the
/// reference weights that go with it.
#[derive(Debug, Clone, Copy)]
pub struct Draw<'a> {
    pub model: &'a GpModel,
    pub fmin: FminValue,
    pub weights: &'a [f64],
}

impl<'a> Draw<'a> {
    /// Draw whose `f_min` is the posterior-mean minimum over the references
    /// weighted as feasible.
    pub fn new(model: &'a GpModel, refs: &[Vec<f64>], weights: &'a [f64]) -> Result<Self> {
        let fmin = weighted_f_min(model, refs, weights)?;
        Ok(Self { model, fmin, weights })
    }
}

fn check_draws(draws: &[Draw<'_>], refs: &[Vec<f64>]) -> Result<()> {
    if draws.is_empty() {
        return Err(Error::Config("at least one posterior draw is required".into()));
    }
    if refs.is_empty() {
        return Err(Error::Config("the reference set is empty".into()));
    }
    for d in draws {
        d.fmin.require_mean_rule()?;
        check_dim(refs.len(), d.weights.len())?;
    }
    Ok(())
}

/// Integrated expected conditional improvement of candidate `x`:
/// `-(1/T) sum_t (1/M) sum_m ECI_t(y_m | x) w_t(y_m)`.
pub fn ieci(draws: &[Draw<'_>], refs: &[Vec<f64>], x: &[f64]) -> Result<f64> {
    check_draws(draws, refs)?;
    let mut total = 0.0;
    for d in draws {
        let update = d.model.partitioned_update(x)?;
        let mut acc = 0.0;
        for (y, w) in refs.iter().zip(d.weights) {
            let mean = d.model.predict(y)?.mean;
            let sd = d.model.deduced_variance_with(&update, y)?.sqrt();
            acc += w * expected_improvement(mean, sd, d.fmin.value);
        }
        total += acc / refs.len() as f64;
    }
    Ok(-total / draws.len() as f64)
}

/// Expected reduction in weighted average improvement from adding `x`:
/// `(1/T) sum_t (1/M) sum_m w_t(y_m) (EI_t(y_m) - ECI_t(y_m | x))`.
pub fn expected_reduction(draws: &[Draw<'_>], refs: &[Vec<f64>], x: &[f64]) -> Result<f64> {
    check_draws(draws, refs)?;
    let mut total = 0.0;
    for d in draws {
        let update = d.model.partitioned_update(x)?;
        let mut acc = 0.0;
        for (y, w) in refs.iter().zip(d.weights) {
            let pred = d.model.predict(y)?;
            let sd = d.model.deduced_variance_with(&update, y)?.sqrt();
            let ei = expected_improvement(pred.mean, pred.sd(), d.fmin.value);
            let eci = expected_improvement(pred.mean, sd, d.fmin.value);
            acc += w * (ei - eci);
        }
        total += acc / refs.len() as f64;
    }
    Ok(total / draws.len() as f64)
}

/// Weighted average EI over the references: the candidate-free constant
/// separating [`ieci`] from [`expected_reduction`].
pub fn weighted_mean_ei(draws: &[Draw<'_>], refs: &[Vec<f64>]) -> Result<f64> {
    check_draws(draws, refs)?;
    let mut total = 0.0;
    for d in draws {
        let mut acc = 0.0;
        for (y, w) in refs.iter().zip(d.weights) {
            let p = d.model.predict(y)?;
            acc += w * expected_improvement(p.mean, p.sd(), d.fmin.value);
        }
        total += acc / refs.len() as f64;
    }
    Ok(total / draws.len() as f64)
}

/// IECI with references redrawn uniformly over `bounds` for every posterior
/// draw and equal weights; `f_min` is recomputed on each draw's references.
pub fn ieci_resampled(models: &[&GpModel], bounds: &Bounds, m: usize, x: &[f64], rng: &mut RngState) -> Result<f64> {
    if models.is_empty() || m == 0 {
        return Err(Error::Config("resampled IECI needs draws and references".into()));
    }
    let ones = vec![1.0; m];
    let mut total = 0.0;
    for model in models {
        let mut g = rng.next_rng();
        let refs: Vec<Vec<f64>> = (0..m)
            .map(|_| bounds.lower().iter().zip(bounds.upper()).map(|(l, u)| g.gen_range(*l..*u)).collect())
            .collect();
        let draw = Draw::new(model, &refs, &ones)?;
        total += ieci(&[draw], &refs, x)?;
    }
    Ok(total / models.len() as f64)
}

/// Acquisition scores for every candidate in a pool.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionReport {
    /// `-inf` marks a candidate that is degenerate under some draw.
    pub per_candidate_ieci: Vec<f64>,
    pub argmax_index: usize,
    /// Expected reduction at the argmax.
    pub expected_reduction: f64,
    /// Weighted average EI over the references (averaged over draws).
    pub mean_ei: f64,
    /// `eci[c][m]`, averaged over draws, when requested.
    pub per_candidate_eci_matrix: Option<Vec<Vec<f64>>>,
}

/// Score every candidate. Each draw's model factorization is shared across the
/// whole reference-by-candidate grid, so the cost is one batched deduced-variance
/// computation per draw.
pub fn acquire(draws: &[Draw<'_>], cands: &CandidateSet, keep_matrix: bool) -> Result<AcquisitionReport> {
    let refs = cands.refs();
    check_draws(draws, refs)?;
    let nc = cands.candidates().len();
    if nc == 0 {
        return Err(Error::Config("the candidate pool is empty".into()));
    }
    let m = refs.len() as f64;
    let t = draws.len() as f64;
    let mut ieci_acc = vec![0.0; nc];
    let mut degenerate = vec![false; nc];
    let mut mean_ei = 0.0;
    let mut matrix = keep_matrix.then(|| vec![vec![0.0; refs.len()]; nc]);

    for d in draws {
        let grid = d.model.conditional_grid(refs, cands.candidates())?;
        let fmin = d.fmin.value;
        let ei: Vec<f64> = grid
            .ref_means
            .iter()
            .zip(&grid.ref_variances)
            .map(|(mu, v)| expected_improvement(*mu, v.sqrt(), fmin))
            .collect();
        mean_ei += ei.iter().zip(d.weights).map(|(e, w)| e * w).sum::<f64>() / m / t;
        for (c, col) in grid.variances.iter().enumerate() {
            let Some(vars) = col else {
                degenerate[c] = true;
                continue;
            };
            let mut acc = 0.0;
            for (k, ((mu, v), w)) in grid.ref_means.iter().zip(vars).zip(d.weights).enumerate() {
                let eci = expected_improvement(*mu, v.sqrt(), fmin);
                acc += w * eci;
                if let Some(mat) = matrix.as_mut() {
                    mat[c][k] += eci / t;
                }
            }
            ieci_acc[c] -= acc / m / t;
        }
    }

    let per_candidate_ieci: Vec<f64> =
        ieci_acc.iter().zip(&degenerate).map(|(v, bad)| if *bad { f64::NEG_INFINITY } else { *v }).collect();
    let argmax_index = argmax_lowest(&per_candidate_ieci).ok_or({ Error::DegenerateCandidate(0.0) })?;
    let expected_reduction = mean_ei + per_candidate_ieci[argmax_index];
    Ok(AcquisitionReport {
        per_candidate_ieci,
        argmax_index,
        expected_reduction,
        mean_ei,
        per_candidate_eci_matrix: matrix,
    })
}

/// Index of the largest finite value; ties go to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        match best {
            Some((_, b)) if *v <= b => {}
            _ => best = Some((i, *v)),
        }
    }
    best.map(|(i, _)| i)
}

/// CSV dump of the ECI matrix: `candidate_index,ref_index,eci,weight`.
pub fn write_eci_matrix<W: Write>(out: W, report: &AcquisitionReport, weights: &[f64]) -> Result<()> {
    let Some(matrix) = &report.per_candidate_eci_matrix else {
        return Err(Error::Config("the acquisition report holds no ECI matrix".into()));
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["candidate_index", "ref_index", "eci", "weight"])?;
    for (c, row) in matrix.iter().enumerate() {
        for (m, eci) in row.iter().enumerate() {
            w.write_record(&[c.to_string(), m.to_string(), eci.to_string(), weights[m].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
