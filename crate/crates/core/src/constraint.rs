//! Probabilistic constraint surrogate: a zero-mean latent GP with a logistic
//! link, fitted by the Laplace approximation.
//!
//! Labels use 1 for "constraint satisfied" and 0 for "violated". The latent
//! covariance is `sigma2 * K*(x, x')` with the power-family correlation of
//! [`crate::gp`], inputs mapped onto the unit cube. The predictive satisfaction
//! probability averages the sigmoid over the Gaussian latent predictive with a
//! fixed 32-node Gauss–Hermite rule.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::design::Bounds;
use crate::error::{check_dim, Error, Result};
use crate::gp::{correlation_unchecked, Hyperparams, Scaling, JITTER};
use crate::stats::{sigmoid, softplus, GaussHermite};

const MAX_NEWTON: usize = 100;
const GRAD_TOL: f64 = 1e-8;
const QUADRATURE_NODES: usize = 32;

fn hermite() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(QUADRATURE_NODES))
}

/// Observed inputs with their 0/1 constraint labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintData {
    x: Vec<Vec<f64>>,
    labels: Vec<u8>,
}

impl ConstraintData {
    pub fn new(x: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        check_dim(x.len(), labels.len())?;
        if x.is_empty() {
            return Err(Error::Config("constraint data needs at least one observation".into()));
        }
        if let Some(l) = labels.iter().find(|l| **l > 1) {
            return Err(Error::Config(format!("constraint labels must be 0 or 1, got {l}")));
        }
        let d = x[0].len();
        for r in &x {
            check_dim(d, r.len())?;
        }
        Ok(Self { x, labels })
    }

    pub fn x(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Same inputs, every label flipped.
    pub fn flipped(&self) -> Self {
        Self { x: self.x.clone(), labels: self.labels.iter().map(|l| 1 - l).collect() }
    }
}

/// Fitted classifier. Immutable.
#[derive(Debug, Clone)]
pub struct ConstraintModel {
    data: ConstraintData,
    x_internal: Vec<Vec<f64>>,
    params: Hyperparams,
    scaling: Scaling,
    latent_mode: DVector<f64>,
    /// `K^-1 f` at the mode.
    alpha: DVector<f64>,
    w_sqrt: DVector<f64>,
    /// Factor of `I + W^1/2 K W^1/2`.
    mode_hessian_factor: Cholesky<f64, Dyn>,
    log_marginal: f64,
    newton_iterations: usize,
}

impl ConstraintModel {
    pub fn data(&self) -> &ConstraintData {
        &self.data
    }

    pub fn params(&self) -> &Hyperparams {
        &self.params
    }

    pub fn latent_mode(&self) -> &DVector<f64> {
        &self.latent_mode
    }

    /// `K^-1 f_hat`, usable to warm-start a later fit.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Laplace approximation of `log p(labels | X, params)`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal
    }

    pub fn newton_iterations(&self) -> usize {
        self.newton_iterations
    }

    /// Max-norm of the gradient of the penalized log likelihood at the mode,
    /// `d log p(y|f)/df - K^-1 f`.
    pub fn stationarity_residual(&self) -> f64 {
        (label_gradient(&self.latent_mode, &self.data.labels) - &self.alpha).amax()
    }

    /// Gaussian latent predictive `(mean, variance)` at `y`.
    pub fn latent_predictive(&self, y: &[f64]) -> Result<(f64, f64)> {
        check_dim(self.scaling.dim(), y.len())?;
        let u = self.scaling.to_internal(y);
        let s2 = self.params.sigma2;
        let k = DVector::from_iterator(
            self.x_internal.len(),
            self.x_internal.iter().map(|r| s2 * correlation_unchecked(&u, r, &self.params)),
        );
        let grad = label_gradient(&self.latent_mode, &self.data.labels);
        let mean = k.dot(&grad);
        let v = self
            .mode_hessian_factor
            .l_dirty()
            .solve_lower_triangular(&k.component_mul(&self.w_sqrt))
            .expect("positive diagonal");
        let var = (s2 - v.norm_squared()).max(0.0);
        Ok((mean, var))
    }

    /// Probability that `y` satisfies the constraint.
    pub fn predict_prob(&self, y: &[f64]) -> Result<f64> {
        let (mean, var) = self.latent_predictive(y)?;
        Ok(hermite().normal_expectation(mean, var, sigmoid).clamp(0.0, 1.0))
    }
}

/// Elementwise satisfaction probabilities over `refs`.
pub fn constraint_weights(model: &ConstraintModel, refs: &[Vec<f64>]) -> Result<Vec<f64>> {
    refs.iter().map(|y| model.predict_prob(y)).collect()
}

/// Fit the classifier with inputs mapped onto `bounds`.
pub fn fit_constraint(data: &ConstraintData, params: &Hyperparams, bounds: &Bounds) -> Result<ConstraintModel> {
    fit_constraint_warm(data, params, bounds, None)
}

/// As [`fit_constraint`], starting Newton from `K a0` where `a0` is `warm`
/// padded with zeros (or truncated) to the data size.
pub fn fit_constraint_warm(
    data: &ConstraintData,
    params: &Hyperparams,
    bounds: &Bounds,
    warm: Option<&DVector<f64>>,
) -> Result<ConstraintModel> {
    params.validate()?;
    check_dim(params.dim(), bounds.dim())?;
    check_dim(params.dim(), data.x[0].len())?;
    let scaling = Scaling::unit_cube(bounds);
    let xi: Vec<Vec<f64>> = data.x.iter().map(|r| scaling.to_internal(r)).collect();
    let n = xi.len();
    let k = latent_gram(&xi, params);

    let mut a = DVector::zeros(n);
    if let Some(w) = warm {
        for i in 0..n.min(w.len()) {
            a[i] = w[i];
        }
    }
    let mut f = &k * &a;
    let mut psi = objective(&a, &f, &data.labels);
    if !psi.is_finite() {
        a.fill(0.0);
        f.fill(0.0);
        psi = objective(&a, &f, &data.labels);
    }

    let mut iterations = 0;
    loop {
        let grad = label_gradient(&f, &data.labels);
        if (&grad - &a).amax() <= GRAD_TOL {
            break;
        }
        if iterations == MAX_NEWTON {
            return Err(Error::ConstraintFit(format!("Newton iteration did not converge in {MAX_NEWTON} steps")));
        }
        iterations += 1;
        let w_sqrt = hessian_sqrt(&f);
        let chol = factor_b(&k, &w_sqrt)?;
        // b = W f + grad;  a_new = b - W^1/2 B^-1 W^1/2 K b
        let b = f.component_mul(&w_sqrt).component_mul(&w_sqrt) + &grad;
        let kb = &k * &b;
        let c = chol.solve(&kb.component_mul(&w_sqrt));
        let a_new = &b - c.component_mul(&w_sqrt);
        // damped step: halve until the penalized likelihood does not decrease
        let mut step = 1.0;
        loop {
            let a_try = &a + (&a_new - &a) * step;
            let f_try = &k * &a_try;
            let psi_try = objective(&a_try, &f_try, &data.labels);
            if psi_try >= psi - 1e-12 * psi.abs().max(1.0) || step < 1e-6 {
                a = a_try;
                f = f_try;
                psi = psi_try;
                break;
            }
            step *= 0.5;
        }
    }

    let w_sqrt = hessian_sqrt(&f);
    let chol = factor_b(&k, &w_sqrt)?;
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let log_marginal = psi - log_det_half;
    Ok(ConstraintModel {
        data: data.clone(),
        x_internal: xi,
        params: params.clone(),
        scaling,
        latent_mode: f,
        alpha: a,
        w_sqrt,
        mode_hessian_factor: chol,
        log_marginal,
        newton_iterations: iterations,
    })
}

fn latent_gram(x: &[Vec<f64>], params: &Hyperparams) -> DMatrix<f64> {
    let n = x.len();
    let s2 = params.sigma2;
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = s2 * (1.0 + JITTER);
        for j in 0..i {
            let v = s2 * correlation_unchecked(&x[i], &x[j], params);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `t - sigmoid(f)`, the gradient of the logistic log likelihood.
fn label_gradient(f: &DVector<f64>, labels: &[u8]) -> DVector<f64> {
    DVector::from_iterator(f.len(), f.iter().zip(labels).map(|(v, t)| *t as f64 - sigmoid(*v)))
}

fn hessian_sqrt(f: &DVector<f64>) -> DVector<f64> {
    f.map(|v| {
        let p = sigmoid(v);
        (p * (1.0 - p)).sqrt()
    })
}

/// `-a'f/2 + sum log p(y|f)`.
fn objective(a: &DVector<f64>, f: &DVector<f64>, labels: &[u8]) -> f64 {
    let loglik: f64 = f
        .iter()
        .zip(labels)
        .map(|(v, t)| {
            let sign = if *t == 1 { 1.0 } else { -1.0 };
            -softplus(-sign * v)
        })
        .sum();
    -0.5 * a.dot(f) + loglik
}

fn factor_b(k: &DMatrix<f64>, w_sqrt: &DVector<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = k.nrows();
    let mut b = DMatrix::identity(n, n);
    for j in 0..n {
        for i in 0..n {
            b[(i, j)] += w_sqrt[i] * k[(i, j)] * w_sqrt[j];
        }
    }
    Cholesky::new(b).ok_or_else(|| Error::ConstraintFit("I + W^1/2 K W^1/2 is not positive definite".into()))
}
