//! Space-filling designs, per-round candidate pools and oracle points.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gp::GpModel;
use crate::improvement::CandidateSet;
use crate::simplex::{self, NelderMeadOptions};

/// Axis-aligned input box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::Config("bounds need at least one dimension".into()));
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("dimension {j}: lower bound {lo} must be below upper bound {hi}")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }
}

/// Seed plus a stream counter. Every draw of randomness takes a fresh ChaCha
/// stream, so generation is reproducible from `(seed, stream)` alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Generator for the current stream; advances the counter.
    pub fn next_rng(&mut self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        self.stream += 1;
        rng
    }
}

/// Latin hypercube of `n` points: in every dimension each of the `n`
/// equal-width strata holds exactly one point, jittered uniformly inside it.
pub fn lhd(n: usize, bounds: &Bounds, rng: &mut RngState) -> Vec<Vec<f64>> {
    let mut g = rng.next_rng();
    let d = bounds.dim();
    let mut points = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(&mut g);
        let lo = bounds.lower[j];
        let w = bounds.upper[j] - lo;
        for (i, p) in points.iter_mut().enumerate() {
            let u: f64 = g.gen();
            // stay strictly inside the stratum even after rounding
            let v = lo + w * (perm[i] as f64 + u) / n as f64;
            let hi_edge = lo + w * (perm[i] + 1) as f64 / n as f64;
            p[j] = if v >= hi_edge { hi_edge.next_down() } else { v };
        }
    }
    points
}

/// Result of the local search for an oracle candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePoint {
    pub x: Vec<f64>,
    pub mean: f64,
    pub converged: bool,
}

/// Local minimum of the posterior mean from `x_start`, found by a bounded
/// Nelder–Mead (200 iterations, simplex diameter 1e-6).
pub fn oracle_point(model: &GpModel, x_start: &[f64], bounds: &Bounds) -> Result<OraclePoint> {
    check_dim(bounds.dim(), x_start.len())?;
    check_dim(model.dim(), x_start.len())?;
    let steps: Vec<f64> = bounds.widths().iter().map(|w| 0.05 * w).collect();
    let res = simplex::minimize(
        |x| model.predict_mean(x).unwrap_or(f64::INFINITY),
        |x| bounds.clip(x),
        x_start,
        &steps,
        NelderMeadOptions { max_iterations: 200, diameter_tol: 1e-6, max_evaluations: None },
    );
    if !res.converged {
        log::warn!("oracle search stopped after {} iterations without converging", res.iterations);
    }
    Ok(OraclePoint { x: res.x, mean: res.value, converged: res.converged })
}

/// A fresh `m`-point LHD serving as both reference locations and candidates,
/// with the optional oracle point appended to the candidates only. Weights
/// start at 1.
pub fn fresh_candidates(m: usize, bounds: &Bounds, rng: &mut RngState, oracle: Option<&[f64]>) -> Result<CandidateSet> {
    if m == 0 {
        return Err(Error::Config("candidate pool size must be at least 1".into()));
    }
    let refs = lhd(m, bounds, rng);
    let mut candidates = refs.clone();
    if let Some(o) = oracle {
        check_dim(bounds.dim(), o.len())?;
        let mut o = o.to_vec();
        bounds.clip(&mut o);
        candidates.push(o);
    }
    CandidateSet::new(refs, vec![1.0; m], candidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::Hyperparams;

    fn unit(d: usize) -> Bounds {
        Bounds::new(vec![0.0; d], vec![1.0; d]).unwrap()
    }

    fn strata_ok(points: &[Vec<f64>], bounds: &Bounds) -> bool {
        let n = points.len();
        (0..bounds.dim()).all(|j| {
            let mut seen = vec![false; n];
            for p in points {
                let k =
                    ((p[j] - bounds.lower()[j]) / (bounds.upper()[j] - bounds.lower()[j]) * n as f64).floor() as usize;
                if k >= n || seen[k] {
                    return false;
                }
                seen[k] = true;
            }
            true
        })
    }

    #[test]
    fn bounds_validation() {
        assert!(Bounds::new(vec![1.0], vec![0.0]).is_err());
        assert!(Bounds::new(vec![0.0], vec![0.0]).is_err());
        assert!(Bounds::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(Bounds::new(vec![], vec![]).is_err());
    }

    #[test]
    fn single_point_design() {
        let b = Bounds::new(vec![-2.0], vec![5.0]).unwrap();
        let p = lhd(1, &b, &mut RngState::new(3));
        assert_eq!(p.len(), 1);
        assert!(b.contains(&p[0]));
    }

    #[test]
    fn five_points_one_per_fifth() {
        let mut pts: Vec<f64> = lhd(5, &unit(1), &mut RngState::new(11)).into_iter().map(|p| p[0]).collect();
        pts.sort_by(f64::total_cmp);
        for (k, v) in pts.iter().enumerate() {
            assert!(*v >= k as f64 / 5.0 && *v < (k + 1) as f64 / 5.0, "{k}: {v}");
        }
    }

    #[test]
    fn stratified_and_reproducible() {
        let b = Bounds::new(vec![-2.0, 0.0], vec![2.0, 7.0]).unwrap();
        let a = lhd(100, &b, &mut RngState::new(42));
        assert!(strata_ok(&a, &b));
        assert!(a.iter().all(|p| b.contains(p)));
        assert_eq!(a, lhd(100, &b, &mut RngState::new(42)));
    }

    #[test]
    fn rng_streams_advance() {
        let b = unit(2);
        let mut rng = RngState::new(5);
        let first = lhd(10, &b, &mut rng);
        let second = lhd(10, &b, &mut rng);
        assert_ne!(first, second);
        assert_eq!(rng.stream, 2);
        assert_eq!(first, lhd(10, &b, &mut RngState::new(5)));
    }

    #[test]
    fn candidate_pool_sizes() {
        let b = unit(1);
        let c = fresh_candidates(100, &b, &mut RngState::new(1), None).unwrap();
        assert_eq!(c.refs().len(), 100);
        assert_eq!(c.candidates().len(), 100);
        let c = fresh_candidates(100, &b, &mut RngState::new(1), Some(&[0.25])).unwrap();
        assert_eq!(c.refs().len(), 100);
        assert_eq!(c.candidates().len(), 101);
        assert_eq!(c.candidates()[100], vec![0.25]);
        assert!(fresh_candidates(0, &b, &mut RngState::new(1), None).is_err());
    }

    fn bowl_model() -> GpModel {
        // mean surface with a single dip near 0.6
        let x: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64 / 8.0]).collect();
        let z: Vec<f64> = x.iter().map(|p| (p[0] - 0.6).powi(2) * 4.0 - 1.0).collect();
        GpModel::fit(&x, &z, &Hyperparams::new(1.0, vec![0.1], 1e-6).unwrap()).unwrap()
    }

    fn grid_argmin(model: &GpModel, lo: f64, hi: f64) -> f64 {
        (0..10_000)
            .map(|i| lo + (hi - lo) * i as f64 / 9_999.0)
            .min_by(|a, b| model.predict_mean(&[*a]).unwrap().total_cmp(&model.predict_mean(&[*b]).unwrap()))
            .unwrap()
    }

    #[test]
    fn oracle_stationary_start() {
        let m = bowl_model();
        let b = unit(1);
        let xmin = grid_argmin(&m, 0.0, 1.0);
        let o = oracle_point(&m, &[xmin], &b).unwrap();
        assert!((o.x[0] - xmin).abs() < 1e-4, "{:?} vs {xmin}", o.x);
    }

    #[test]
    fn oracle_finds_grid_minimum() {
        let m = bowl_model();
        let b = unit(1);
        let xmin = grid_argmin(&m, 0.0, 1.0);
        let o = oracle_point(&m, &[0.2], &b).unwrap();
        assert!((o.x[0] - xmin).abs() < 1e-2, "{:?} vs {xmin}", o.x);
    }

    #[test]
    fn oracle_clips_to_boundary() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
        let z: Vec<f64> = x.iter().map(|p| -3.0 * p[0]).collect();
        let m = GpModel::fit(&x, &z, &Hyperparams::new(1.0, vec![2.0], 1e-6).unwrap()).unwrap();
        let b = Bounds::new(vec![0.0], vec![0.5]).unwrap();
        let o = oracle_point(&m, &[0.1], &b).unwrap();
        assert_eq!(o.x, vec![0.5]);
    }
}
