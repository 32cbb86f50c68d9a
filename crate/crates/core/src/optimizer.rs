//! The sequential optimization loop.
//!
//! Each round: draw a fresh LHD that serves as both reference set and
//! candidate pool, append the oracle point (a local minimum of the posterior
//! mean reached from the last evaluated input), weight the references by the
//! probability of satisfying the constraint, score every candidate by IECI,
//! evaluate the objective and constraint jointly at the winner, append the
//! observation, and re-infer both surrogates.
//!
//! Randomness is drawn from per-round, per-purpose ChaCha streams so that
//! switching how reference weights are produced never perturbs the other
//! random choices of a run.

use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::{constraint_weights, ConstraintData, ConstraintModel};
use crate::design::{fresh_candidates, lhd, oracle_point, Bounds, RngState};
use crate::error::{check_dim, Error, Result};
use crate::gp::{GpModel, Hyperparams, Scaling};
use crate::improvement::{acquire, AcquisitionReport, Draw};
use crate::infer::{infer_constraint_params, infer_hyperparams, PriorConfig, ThetaMode};

/// Floor applied before taking the log of an expected reduction.
pub const LOG_FLOOR: f64 = 1e-300;

/// Joint response at one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub z: f64,
    /// 1 when the constraint is satisfied.
    pub c: u8,
}

/// A black box that returns the objective and the constraint label together.
pub trait Problem {
    fn bounds(&self) -> &Bounds;

    /// Evaluate objective and constraint once, jointly.
    fn evaluate(&mut self, x: &[f64]) -> Result<Observation>;

    /// The true feasibility indicator, when it is cheap and known.
    fn known_constraint(&self, _x: &[f64]) -> Option<bool> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMode {
    /// Weights from the fitted classifier.
    Surrogate,
    /// Weights from the problem's true indicator.
    KnownIndicator,
    /// Unit weights.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub n_init: usize,
    pub rounds: usize,
    pub m_candidates: usize,
    pub theta_mode: ThetaMode,
    pub constraint_mode: ConstraintMode,
    pub prior: PriorConfig,
    pub use_oracle: bool,
    pub keep_eci_matrix: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_init: 20,
            rounds: 60,
            m_candidates: 100,
            theta_mode: ThetaMode::Map,
            constraint_mode: ConstraintMode::Surrogate,
            prior: PriorConfig::default(),
            use_oracle: true,
            keep_eci_matrix: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_init < 2 {
            return Err(Error::Config(format!("n_init must be at least 2, got {}", self.n_init)));
        }
        if self.m_candidates == 0 {
            return Err(Error::Config("m_candidates must be at least 1".into()));
        }
        if let ThetaMode::Sample(0) = self.theta_mode {
            return Err(Error::Config("sample mode needs at least one draw".into()));
        }
        Ok(())
    }
}

/// Evaluated inputs with their responses and labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Design {
    pub x: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub c: Vec<u8>,
}

impl Design {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn push(&mut self, x: Vec<f64>, obs: Observation) {
        self.x.push(x);
        self.z.push(obs.z);
        self.c.push(obs.c);
    }
}

/// Best evaluated point believed feasible.
#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub x: Vec<f64>,
    pub mean: f64,
    pub feasibility: f64,
}

/// Everything one round produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub chosen_x: Vec<f64>,
    pub ieci_value: f64,
    /// Expected reduction in weighted average improvement at `chosen_x`.
    pub expected_reduction: f64,
    pub expected_reduction_log: f64,
    pub z_observed: f64,
    pub c_observed: u8,
    pub fmin_used: f64,
    pub oracle: Option<Vec<f64>>,
    pub elapsed: Duration,
}

impl RoundRecord {
    /// Equality on everything except wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self { elapsed: Duration::ZERO, ..self.clone() } == Self { elapsed: Duration::ZERO, ..other.clone() }
    }
}

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Purpose {
    InitialDesign = 0,
    ObjectiveInference = 1,
    ConstraintInference = 2,
    Candidates = 3,
}

/// The accumulated design and the surrogates fitted to it.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    design: Design,
    round: usize,
    bounds: Bounds,
    theta_f: Vec<Hyperparams>,
    theta_map: Hyperparams,
    models: Vec<GpModel>,
    map_model: GpModel,
    constraint: Option<ConstraintModel>,
    progress: Vec<f64>,
    rng: RngState,
}

impl OptimizerState {
    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    /// Objective hyperparameters in use: the MAP, or the posterior draws.
    pub fn theta_f(&self) -> &[Hyperparams] {
        &self.theta_f
    }

    pub fn theta_map(&self) -> &Hyperparams {
        &self.theta_map
    }

    pub fn theta_c(&self) -> Option<&Hyperparams> {
        self.constraint.as_ref().map(|c| c.params())
    }

    /// The objective surrogate at the MAP.
    pub fn model(&self) -> &GpModel {
        &self.map_model
    }

    pub fn constraint_model(&self) -> Option<&ConstraintModel> {
        self.constraint.as_ref()
    }

    /// Log expected reduction recorded each round.
    pub fn progress(&self) -> &[f64] {
        &self.progress
    }

    pub fn rng(&self) -> RngState {
        self.rng
    }

    fn stream(&self, round: usize, purpose: Purpose) -> ChaCha8Rng {
        RngState { seed: self.rng.seed, stream: ((round as u64) << 8) | purpose as u64 }.next_rng()
    }

    /// Probability that `x` satisfies the constraint under the classifier, or
    /// the problem's indicator when no classifier is fitted.
    pub fn feasibility(&self, x: &[f64]) -> Result<f64> {
        match &self.constraint {
            Some(m) => m.predict_prob(x),
            None => Ok(1.0),
        }
    }
}

/// Surrogates refitted on `design`; the only place inference happens.
struct Fitted {
    theta_f: Vec<Hyperparams>,
    theta_map: Hyperparams,
    models: Vec<GpModel>,
    map_model: GpModel,
    constraint: Option<ConstraintModel>,
}

fn fit_surrogates(
    design: &Design,
    bounds: &Bounds,
    config: &OptimizerConfig,
    mut objective_rng: ChaCha8Rng,
    mut constraint_rng: ChaCha8Rng,
    previous: Option<&OptimizerState>,
) -> Result<Fitted> {
    let scaling = Scaling::standardize(bounds, &design.z);
    let fit = infer_hyperparams(
        &design.x,
        &design.z,
        &scaling,
        &config.prior,
        &mut objective_rng,
        config.theta_mode,
        previous.map(|s| &s.theta_map),
    )?;
    let map_model = GpModel::fit_scaled(&design.x, &design.z, &fit.map, scaling.clone())?;
    let models = match config.theta_mode {
        ThetaMode::Map => vec![map_model.clone()],
        ThetaMode::Sample(_) => fit
            .draws
            .iter()
            .map(|p| GpModel::fit_scaled(&design.x, &design.z, p, scaling.clone()))
            .collect::<Result<Vec<_>>>()?,
    };
    let constraint = match config.constraint_mode {
        ConstraintMode::Surrogate => {
            let data = ConstraintData::new(design.x.clone(), design.c.clone())?;
            Some(infer_constraint_params(
                &data,
                bounds,
                &config.prior,
                &mut constraint_rng,
                previous.and_then(|s| s.constraint.as_ref()),
            )?)
        }
        _ => None,
    };
    Ok(Fitted { theta_f: fit.draws, theta_map: fit.map, models, map_model, constraint })
}

/// Evaluate an `n_init` LHD and fit both surrogates.
pub fn initialize<P: Problem + ?Sized>(problem: &mut P, config: &OptimizerConfig, seed: u64) -> Result<OptimizerState> {
    config.validate()?;
    let bounds = problem.bounds().clone();
    let rng = RngState::new(seed);
    let stream = |purpose: Purpose| RngState { seed, stream: purpose as u64 };
    let points = lhd(config.n_init, &bounds, &mut stream(Purpose::InitialDesign));
    let mut design = Design::default();
    for x in points {
        let obs = problem.evaluate(&x)?;
        design.push(x, obs);
    }
    let fitted = fit_surrogates(
        &design,
        &bounds,
        config,
        stream(Purpose::ObjectiveInference).next_rng(),
        stream(Purpose::ConstraintInference).next_rng(),
        None,
    )?;
    Ok(OptimizerState {
        design,
        round: 0,
        bounds,
        theta_f: fitted.theta_f,
        theta_map: fitted.theta_map,
        models: fitted.models,
        map_model: fitted.map_model,
        constraint: fitted.constraint,
        progress: Vec::new(),
        rng,
    })
}

/// One round with reference weights from the configured constraint mode.
pub fn step<P: Problem + ?Sized>(
    state: &mut OptimizerState,
    problem: &mut P,
    config: &OptimizerConfig,
) -> Result<RoundRecord> {
    match config.constraint_mode {
        ConstraintMode::Surrogate => {
            let model = state
                .constraint
                .clone()
                .ok_or_else(|| Error::Config("surrogate mode without a fitted classifier".into()))?;
            step_with_weights(state, problem, config, |refs| constraint_weights(&model, refs))
        }
        ConstraintMode::KnownIndicator => {
            let plan =
                plan_round(state, config, |refs| refs.iter().map(|y| problem_indicator(&*problem, y)).collect())?;
            commit_round(state, problem, config, plan)
        }
        ConstraintMode::None => step_with_weights(state, problem, config, |refs| Ok(vec![1.0; refs.len()])),
    }
}

fn problem_indicator<P: Problem + ?Sized>(problem: &P, y: &[f64]) -> Result<f64> {
    problem
        .known_constraint(y)
        .map(|b| if b { 1.0 } else { 0.0 })
        .ok_or_else(|| Error::Config("known-indicator mode needs a problem with a known constraint".into()))
}

/// One round with caller-supplied reference weights.
pub fn step_with_weights<P, W>(
    state: &mut OptimizerState,
    problem: &mut P,
    config: &OptimizerConfig,
    weights: W,
) -> Result<RoundRecord>
where
    P: Problem + ?Sized,
    W: Fn(&[Vec<f64>]) -> Result<Vec<f64>>,
{
    let plan = plan_round(state, config, weights)?;
    commit_round(state, problem, config, plan)
}

/// The acquisition decision of a round, before anything is evaluated.
#[derive(Debug, Clone)]
pub struct RoundPlan {
    pub round: usize,
    pub oracle: Option<Vec<f64>>,
    pub candidates: crate::improvement::CandidateSet,
    pub report: AcquisitionReport,
    pub fmin: f64,
    started: Instant,
}

impl RoundPlan {
    pub fn chosen(&self) -> &[f64] {
        &self.candidates.candidates()[self.report.argmax_index]
    }
}

/// Candidates, weights, thresholds and scores for the next round.
pub fn plan_round<W>(state: &OptimizerState, config: &OptimizerConfig, weights: W) -> Result<RoundPlan>
where
    W: Fn(&[Vec<f64>]) -> Result<Vec<f64>>,
{
    let started = Instant::now();
    let round = state.round + 1;
    let oracle = if config.use_oracle {
        let last = state.design.x.last().expect("design is never empty");
        Some(oracle_point(&state.map_model, last, &state.bounds)?.x)
    } else {
        None
    };
    let mut rng = RngState { seed: state.rng.seed, stream: ((round as u64) << 8) | Purpose::Candidates as u64 };
    let mut cands = fresh_candidates(config.m_candidates, &state.bounds, &mut rng, oracle.as_deref())?;
    let w = weights(cands.refs())?;
    cands.set_weights(w)?;
    let draws = state.models.iter().map(|m| Draw::new(m, cands.refs(), cands.weights())).collect::<Result<Vec<_>>>()?;
    let fmin = draws.iter().map(|d| d.fmin.value).sum::<f64>() / draws.len() as f64;
    let report = acquire(&draws, &cands, config.keep_eci_matrix)?;
    if report.expected_reduction < -1e-10 {
        return Err(Error::Inconsistent(format!(
            "negative expected reduction {:e} at the selected candidate",
            report.expected_reduction
        )));
    }
    Ok(RoundPlan { round, oracle, candidates: cands, report, fmin, started })
}

/// Evaluate the planned point, append it, refit. `state` is untouched on error.
pub fn commit_round<P: Problem + ?Sized>(
    state: &mut OptimizerState,
    problem: &mut P,
    config: &OptimizerConfig,
    plan: RoundPlan,
) -> Result<RoundRecord> {
    if plan.round != state.round + 1 {
        return Err(Error::Config("round plan is stale".into()));
    }
    let x = plan.chosen().to_vec();
    check_dim(state.bounds.dim(), x.len())?;
    let obs = problem.evaluate(&x)?;
    let mut design = state.design.clone();
    design.push(x.clone(), obs);
    let fitted = fit_surrogates(
        &design,
        &state.bounds,
        config,
        state.stream(plan.round, Purpose::ObjectiveInference),
        state.stream(plan.round, Purpose::ConstraintInference),
        Some(state),
    )?;
    let reduction = plan.report.expected_reduction;
    let log_reduction = reduction.max(LOG_FLOOR).ln();

    state.design = design;
    state.round = plan.round;
    state.theta_f = fitted.theta_f;
    state.theta_map = fitted.theta_map;
    state.models = fitted.models;
    state.map_model = fitted.map_model;
    state.constraint = fitted.constraint;
    state.progress.push(log_reduction);

    Ok(RoundRecord {
        round: plan.round,
        chosen_x: x,
        ieci_value: plan.report.per_candidate_ieci[plan.report.argmax_index],
        expected_reduction: reduction,
        expected_reduction_log: log_reduction,
        z_observed: obs.z,
        c_observed: obs.c,
        fmin_used: plan.fmin,
        oracle: plan.oracle,
        elapsed: plan.started.elapsed(),
    })
}

/// Initialize, then run `config.rounds` rounds, reporting each record to
/// `on_round` as it completes.
pub fn run_with<P, F>(
    problem: &mut P,
    config: &OptimizerConfig,
    seed: u64,
    mut on_round: F,
) -> Result<(OptimizerState, Vec<RoundRecord>)>
where
    P: Problem + ?Sized,
    F: FnMut(&OptimizerState, &RoundRecord) -> Result<()>,
{
    let mut state = initialize(problem, config, seed)?;
    let mut records = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let rec = step(&mut state, problem, config)?;
        on_round(&state, &rec)?;
        records.push(rec);
    }
    Ok((state, records))
}

pub fn run<P: Problem + ?Sized>(
    problem: &mut P,
    config: &OptimizerConfig,
    seed: u64,
) -> Result<(OptimizerState, Vec<RoundRecord>)> {
    run_with(problem, config, seed, |_, _| Ok(()))
}

/// Evaluated point with the smallest posterior mean among those observed to
/// satisfy the constraint. `None` when no feasible point has been seen.
pub fn incumbent(state: &OptimizerState) -> Result<Option<Incumbent>> {
    let mut best: Option<Incumbent> = None;
    for (x, c) in state.design.x.iter().zip(&state.design.c) {
        if *c != 1 {
            continue;
        }
        let mean = state.map_model.predict_mean(x)?;
        if best.as_ref().is_none_or(|b| mean < b.mean) {
            best = Some(Incumbent { x: x.clone(), mean, feasibility: state.feasibility(x)? });
        }
    }
    Ok(best)
}
