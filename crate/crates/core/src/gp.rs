//! Zero-mean Gaussian-process regression with a separable power-family
//! correlation, kriging prediction, and the partitioned-inverse update used to
//! deduce how the predictive variance at a reference point shrinks once a
//! candidate input joins the design.
//!
//! Covariance is `sigma2 * K(x, x')` with
//! `K(x, x') = exp(-sum_j |x_j - x'_j|^power / d_j) + nugget * [same observation]`.
//! The nugget is tied to observation identity: the diagonal of the Gram matrix
//! and the self-variance of a prediction carry it, cross terms never do.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::design::Bounds;
use crate::error::{check_dim, Error, Result};

/// Diagonal jitter added before factorization, independent of the nugget.
pub const JITTER: f64 = 1e-10;

/// Variances (in correlation units) in `(VARIANCE_FLOOR, 0)` are clamped to 0.
pub const VARIANCE_FLOOR: f64 = -1e-10;

/// Smallest admissible `K(x,x) - k' K^-1 k` for a candidate.
pub const DEGENERATE_TOL: f64 = 1e-9;

/// Correlation parameters `(sigma2, d, nugget, power)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub sigma2: f64,
    pub lengthscales: Vec<f64>,
    pub nugget: f64,
    pub power: f64,
}

impl Hyperparams {
    /// Gaussian (power 2) parameters.
    pub fn new(sigma2: f64, lengthscales: Vec<f64>, nugget: f64) -> Result<Self> {
        let params = Self { sigma2, lengthscales, nugget, power: 2.0 };
        params.validate()?;
        Ok(params)
    }

    pub fn with_power(mut self, power: f64) -> Result<Self> {
        self.power = power;
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperparams(msg));
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return bad(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        if self.lengthscales.is_empty() {
            return bad("at least one lengthscale is required".into());
        }
        if let Some(d) = self.lengthscales.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return bad(format!("lengthscales must be positive, got {d}"));
        }
        if !(self.nugget.is_finite() && self.nugget >= 0.0) {
            return bad(format!("nugget must be non-negative, got {}", self.nugget));
        }
        if !(self.power > 0.0 && self.power <= 2.0) {
            return bad(format!("power must lie in (0, 2], got {}", self.power));
        }
        Ok(())
    }

    /// `K(x, x)` for a single observation.
    pub fn self_correlation(&self) -> f64 {
        1.0 + self.nugget
    }
}

/// Power-family correlation `K*(x, y)` without the nugget. Callers guarantee
/// matching dimensions.
#[inline]
pub(crate) fn correlation_unchecked(x: &[f64], y: &[f64], params: &Hyperparams) -> f64 {
    let mut s = 0.0;
    if params.power == 2.0 {
        for ((a, b), d) in x.iter().zip(y).zip(&params.lengthscales) {
            let t = a - b;
            s += t * t / d;
        }
    } else {
        for ((a, b), d) in x.iter().zip(y).zip(&params.lengthscales) {
            s += (a - b).abs().powf(params.power) / d;
        }
    }
    (-s).exp()
}

/// Correlation `K*(x, y)` between two distinct observations.
pub fn correlation(x: &[f64], y: &[f64], params: &Hyperparams) -> Result<f64> {
    check_dim(params.dim(), x.len())?;
    check_dim(params.dim(), y.len())?;
    Ok(correlation_unchecked(x, y, params))
}

/// `K(x, y | nugget)`: the correlation plus the nugget when the two inputs are
/// bitwise identical.
pub fn covariance(x: &[f64], y: &[f64], params: &Hyperparams) -> Result<f64> {
    let k = correlation(x, y, params)?;
    let same = x.iter().zip(y).all(|(a, b)| a.to_bits() == b.to_bits());
    Ok(if same { k + params.nugget } else { k })
}

/// Affine maps between user coordinates and the model's internal coordinates:
/// inputs onto the unit cube, responses onto zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub lower: Vec<f64>,
    pub width: Vec<f64>,
    pub shift: f64,
    pub scale: f64,
}

impl Scaling {
    pub fn identity(dim: usize) -> Self {
        Self { lower: vec![0.0; dim], width: vec![1.0; dim], shift: 0.0, scale: 1.0 }
    }

    /// Unit-cube inputs over `bounds`, standardized responses.
    pub fn standardize(bounds: &Bounds, z: &[f64]) -> Self {
        let n = z.len() as f64;
        let shift = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - shift).powi(2)).sum::<f64>() / n;
        let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self { lower: bounds.lower().to_vec(), width: bounds.widths(), shift, scale }
    }

    /// Inputs only; responses pass through unchanged.
    pub fn unit_cube(bounds: &Bounds) -> Self {
        Self { lower: bounds.lower().to_vec(), width: bounds.widths(), shift: 0.0, scale: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn to_internal(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.lower).zip(&self.width).map(|((v, lo), w)| (v - lo) / w).collect()
    }

    pub fn to_external(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.lower).zip(&self.width).map(|((v, lo), w)| lo + v * w).collect()
    }
}

/// Kriging prediction at one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Blocks of the inverse of the Gram matrix augmented by a candidate `x`.
///
/// With `a = K_N^-1 k_N(x)` and `1/mu = K(x,x) - k_N(x)' a`, the cross vector is
/// `g = -mu a` and
/// `K_{N+1}^-1 = [[K_N^-1 + g g' / mu, g], [g', mu]]`.
/// All quantities are in correlation units.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedUpdate {
    pub cross_vector: DVector<f64>,
    pub mu: f64,
    pub kx: DVector<f64>,
    pub kxx: f64,
    x_internal: Vec<f64>,
}

impl PartitionedUpdate {
    pub fn mu_inv(&self) -> f64 {
        1.0 / self.mu
    }

    /// Dense `K_{N+1}^-1` assembled from the blocks. O(N^2) beyond the
    /// `K_N^-1` that the model already provides.
    pub fn assemble_inverse(&self, model: &GpModel) -> DMatrix<f64> {
        let n = model.len();
        let kinv = model.chol.inverse();
        let g = &self.cross_vector;
        let mut out = DMatrix::zeros(n + 1, n + 1);
        out.view_mut((0, 0), (n, n)).copy_from(&(kinv + g * g.transpose() / self.mu));
        for i in 0..n {
            out[(i, n)] = g[i];
            out[(n, i)] = g[i];
        }
        out[(n, n)] = self.mu;
        out
    }
}

/// Deduced variances on a reference-by-candidate grid for one fitted model.
#[derive(Debug, Clone)]
pub struct ConditionalGrid {
    /// Predictive means at each reference location.
    pub ref_means: Vec<f64>,
    /// Predictive variances at each reference location.
    pub ref_variances: Vec<f64>,
    /// `variances[c][m]`: deduced variance at reference `m` once candidate
    /// `c` joins the design; `None` for degenerate candidates.
    pub variances: Vec<Option<Vec<f64>>>,
}

/// A fitted GP surrogate. Immutable once built.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    z: DVector<f64>,
    params: Hyperparams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    scaling: Scaling,
}

impl GpModel {
    /// Fit on raw coordinates with the identity scaling.
    pub fn fit(x: &[Vec<f64>], z: &[f64], params: &Hyperparams) -> Result<Self> {
        Self::fit_scaled(x, z, params, Scaling::identity(params.dim()))
    }

    /// Fit after mapping inputs and responses through `scaling`. The
    /// hyperparameters are interpreted in internal coordinates.
    pub fn fit_scaled(x: &[Vec<f64>], z: &[f64], params: &Hyperparams, scaling: Scaling) -> Result<Self> {
        params.validate()?;
        check_dim(params.dim(), scaling.dim())?;
        if x.is_empty() {
            return Err(Error::Config("a GP needs at least one design point".into()));
        }
        check_dim(x.len(), z.len())?;
        for row in x {
            check_dim(params.dim(), row.len())?;
        }
        let xi: Vec<Vec<f64>> = x.iter().map(|r| scaling.to_internal(r)).collect();
        let zi = DVector::from_iterator(z.len(), z.iter().map(|v| (v - scaling.shift) / scaling.scale));
        let gram = gram_matrix(&xi, params);
        let chol = factor_gram(gram, &xi, params)?;
        let alpha = chol.solve(&zi);
        Ok(Self { x: xi, z: zi, params: params.clone(), chol, alpha, scaling })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn params(&self) -> &Hyperparams {
        &self.params
    }

    pub fn scaling(&self) -> &Scaling {
        &self.scaling
    }

    /// `K_N^-1 Z_N` in internal units.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Design inputs in user coordinates.
    pub fn design(&self) -> Vec<Vec<f64>> {
        self.x.iter().map(|r| self.scaling.to_external(r)).collect()
    }

    /// Responses in user units.
    pub fn responses(&self) -> Vec<f64> {
        self.z.iter().map(|v| self.scaling.shift + self.scaling.scale * v).collect()
    }

    /// Gram matrix `K_N` in internal coordinates, jitter included.
    pub fn gram(&self) -> DMatrix<f64> {
        gram_matrix(&self.x, &self.params)
    }

    /// `Z' K^-1 Z` in internal units.
    pub fn quadratic_form(&self) -> f64 {
        self.z.dot(&self.alpha)
    }

    /// `log |K_N|`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Overall variance factor in user units.
    fn variance_factor(&self) -> f64 {
        self.params.sigma2 * self.scaling.scale * self.scaling.scale
    }

    fn internal_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.scaling.to_internal(x))
    }

    fn cross_correlations(&self, u: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.x.iter().map(|r| correlation_unchecked(u, r, &self.params)))
    }

    /// `L^-1 k` where `K_N = L L'`.
    fn whiten(&self, k: &DVector<f64>) -> DVector<f64> {
        self.chol.l_dirty().solve_lower_triangular(k).expect("cholesky factor has a positive diagonal")
    }

    /// Kriging mean and variance at `x` (user coordinates).
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let u = self.internal_point(x)?;
        let k = self.cross_correlations(&u);
        let mean = k.dot(&self.alpha);
        let v = self.whiten(&k);
        let var = clamp_variance(self.params.self_correlation() - v.norm_squared())?;
        Ok(Prediction { mean: self.scaling.shift + self.scaling.scale * mean, variance: self.variance_factor() * var })
    }

    /// Predictive mean only; cheaper than [`GpModel::predict`].
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        let u = self.internal_point(x)?;
        let k = self.cross_correlations(&u);
        Ok(self.scaling.shift + self.scaling.scale * k.dot(&self.alpha))
    }

    /// Partitioned-inverse blocks for adding `x` to the design.
    pub fn partitioned_update(&self, x: &[f64]) -> Result<PartitionedUpdate> {
        let u = self.internal_point(x)?;
        let kx = self.cross_correlations(&u);
        let a = self.chol.solve(&kx);
        let kxx = self.params.self_correlation();
        let mu_inv = kxx - kx.dot(&a);
        if !(mu_inv > DEGENERATE_TOL) {
            return Err(Error::DegenerateCandidate(mu_inv));
        }
        let mu = 1.0 / mu_inv;
        Ok(PartitionedUpdate { cross_vector: -mu * a, mu, kx, kxx, x_internal: u })
    }

    /// Predictive variance at `y` once `x` is added to the design, whatever
    /// response `x` turns out to have.
    pub fn deduced_variance(&self, y: &[f64], x: &[f64]) -> Result<f64> {
        let update = self.partitioned_update(x)?;
        self.deduced_variance_with(&update, y)
    }

    /// As [`GpModel::deduced_variance`], reusing a precomputed update.
    pub fn deduced_variance_with(&self, update: &PartitionedUpdate, y: &[f64]) -> Result<f64> {
        let u = self.internal_point(y)?;
        let ky = self.cross_correlations(&u);
        let base = self.params.self_correlation() - self.whiten(&ky).norm_squared();
        let kxy = correlation_unchecked(&update.x_internal, &u, &self.params);
        let kg = ky.dot(&update.cross_vector);
        let reduction = kg * kg / update.mu + 2.0 * kg * kxy + kxy * kxy * update.mu;
        let var = clamp_variance(base - reduction)?;
        Ok(self.variance_factor() * var)
    }

    /// `(L^-1 K(X_N, pts), K(pts, X_N) alpha)` for internal-coordinate points.
    fn whitened_block(&self, pts: &[Vec<f64>]) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.len();
        let mut k = DMatrix::zeros(n, pts.len());
        for (j, p) in pts.iter().enumerate() {
            for (i, r) in self.x.iter().enumerate() {
                k[(i, j)] = correlation_unchecked(p, r, &self.params);
            }
        }
        let means = k.tr_mul(&self.alpha);
        let solved = self.chol.l_dirty().solve_lower_triangular_mut(&mut k);
        debug_assert!(solved);
        (k, means)
    }

    /// Predictions at every reference and deduced variances for every
    /// (candidate, reference) pair, in O(N^2 (M + C) + N M C).
    pub fn conditional_grid(&self, refs: &[Vec<f64>], cands: &[Vec<f64>]) -> Result<ConditionalGrid> {
        let refs_i = refs.iter().map(|r| self.internal_point(r)).collect::<Result<Vec<_>>>()?;
        let cands_i = cands.iter().map(|c| self.internal_point(c)).collect::<Result<Vec<_>>>()?;
        let kself = self.params.self_correlation();
        let factor = self.variance_factor();

        let (wr, ref_means_i) = self.whitened_block(&refs_i);
        let (wc, _) = self.whitened_block(&cands_i);

        let mut ref_var_i = Vec::with_capacity(refs_i.len());
        for m in 0..refs_i.len() {
            ref_var_i.push(clamp_variance(kself - wr.column(m).norm_squared())?);
        }
        // posterior cross covariance between references and candidates
        let cross = wr.tr_mul(&wc);

        let mut variances = Vec::with_capacity(cands_i.len());
        for (c, cu) in cands_i.iter().enumerate() {
            let mu_inv = kself - wc.column(c).norm_squared();
            if !(mu_inv > DEGENERATE_TOL) {
                variances.push(None);
                continue;
            }
            let mut col = Vec::with_capacity(refs_i.len());
            for (m, ru) in refs_i.iter().enumerate() {
                let r = correlation_unchecked(cu, ru, &self.params) - cross[(m, c)];
                let v = clamp_variance(ref_var_i[m] - r * r / mu_inv)?;
                col.push(factor * v);
            }
            variances.push(Some(col));
        }

        Ok(ConditionalGrid {
            ref_means: ref_means_i.iter().map(|m| self.scaling.shift + self.scaling.scale * m).collect(),
            ref_variances: ref_var_i.iter().map(|v| factor * v).collect(),
            variances,
        })
    }
}

fn clamp_variance(v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v > VARIANCE_FLOOR {
        Ok(0.0)
    } else {
        Err(Error::Inconsistent(format!("negative predictive variance {v:e}")))
    }
}

pub(crate) fn gram_matrix(x: &[Vec<f64>], params: &Hyperparams) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0 + params.nugget + JITTER;
        for j in 0..i {
            let v = correlation_unchecked(&x[i], &x[j], params);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn factor_gram(gram: DMatrix<f64>, x: &[Vec<f64>], params: &Hyperparams) -> Result<Cholesky<f64, Dyn>> {
    if params.nugget == 0.0 {
        for i in 0..x.len() {
            if let Some(j) = (0..i).find(|&j| x[i] == x[j]) {
                return Err(Error::NotPositiveDefinite(format!(
                    "design rows {j} and {i} coincide and the nugget is zero"
                )));
            }
        }
    }
    let chol = Cholesky::new(gram)
        .ok_or_else(|| Error::NotPositiveDefinite("factorization failed (near-duplicate design rows?)".into()))?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, b| a.min(*b));
    if min_pivot * min_pivot <= 10.0 * JITTER {
        return Err(Error::NotPositiveDefinite(format!(
            "pivot {:e} is indistinguishable from jitter (near-duplicate design rows with a tiny nugget)",
            min_pivot * min_pivot
        )));
    }
    Ok(chol)
}
