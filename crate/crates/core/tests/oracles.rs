use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use ieci::config::{RunConfig, ThetaSetting};
use ieci::constraint::{fit_constraint, ConstraintData};
use ieci::design::{lhd, Bounds, RngState};
use ieci::gp::{correlation, GpModel, Hyperparams};
use ieci::improvement::{expected_conditional_improvement, expected_improvement, f_min, FminRule};
use ieci::infer::ThetaMode;
use ieci::optimizer::ConstraintMode;
use ieci::output::{parse_trace, TraceRow, TraceWriter};
use ieci::verify::{classifier_params, quadrature_probability, ClassifierCase, CLASSIFIER_TEST_GRID};

fn design_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, f64)> {
    (1usize..=3, 2usize..=12).prop_flat_map(|(d, n)| {
        (
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, d), n),
            prop::collection::vec(-2.0f64..2.0, n),
            prop::collection::vec(0.05f64..1.0, d),
            0.001f64..0.2,
        )
    })
}

fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn deduced_variance_never_exceeds_current(
        (x, z, d, eta) in design_strategy(),
        seed in 0u64..1000,
    ) {
        let dim = d.len();
        let p = Hyperparams::new(1.3, d, eta).unwrap();
        let m = GpModel::fit(&x, &z, &p).unwrap();
        let mut rng = RngState::new(seed);
        let pts = lhd(2, &Bounds::new(vec![0.0; dim], vec![1.0; dim]).unwrap(), &mut rng);
        let (cand, y) = (&pts[0], &pts[1]);
        let base = m.predict(y).unwrap().variance;
        let v = m.deduced_variance(y, cand).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!(v <= base + 1e-12);
    }

    #[test]
    fn conditional_improvement_is_monotone(
        (x, z, d, eta) in design_strategy(),
        seed in 0u64..1000,
    ) {
        let dim = d.len();
        let p = Hyperparams::new(0.8, d, eta).unwrap();
        let m = GpModel::fit(&x, &z, &p).unwrap();
        let bounds = Bounds::new(vec![0.0; dim], vec![1.0; dim]).unwrap();
        let refs = lhd(20, &bounds, &mut RngState::new(seed));
        let fmin = f_min(&m, &refs, FminRule::MinPosteriorMean).unwrap();
        for y in refs.iter().take(5) {
            let pr = m.predict(y).unwrap();
            let ei = expected_improvement(pr.mean, pr.sd(), fmin.value);
            let eci = expected_conditional_improvement(&m, y, &refs[19], fmin).unwrap();
            prop_assert!(eci <= ei + 1e-10);
        }
    }

    #[test]
    fn correlation_is_symmetric_and_bounded(a in point(3), b in point(3), d in prop::collection::vec(0.01f64..5.0, 3)) {
        let p = Hyperparams::new(1.0, d, 0.0).unwrap();
        let ab = correlation(&a, &b, &p).unwrap();
        prop_assert_eq!(ab, correlation(&b, &a, &p).unwrap());
        prop_assert!(ab > 0.0 && ab <= 1.0);
        prop_assert_eq!(correlation(&a, &a, &p).unwrap(), 1.0);
    }

    #[test]
    fn lhd_has_one_point_per_stratum(n in 1usize..60, d in 1usize..4, seed in any::<u64>()) {
        let bounds = Bounds::new(vec![-1.0; d], vec![3.0; d]).unwrap();
        let pts = lhd(n, &bounds, &mut RngState::new(seed));
        prop_assert_eq!(pts.len(), n);
        for j in 0..d {
            let mut seen = vec![false; n];
            for p in &pts {
                let k = ((p[j] + 1.0) / 4.0 * n as f64).floor() as usize;
                prop_assert!(k < n && !seen[k]);
                seen[k] = true;
            }
        }
    }

    #[test]
    fn classifier_probabilities_are_probabilities(
        xs in prop::collection::vec(0.0f64..7.0, 1..8),
        labels in prop::collection::vec(0u8..=1, 8),
        y in 0.0f64..7.0,
    ) {
        let n = xs.len();
        let data = ConstraintData::new(xs.iter().map(|v| vec![*v]).collect(), labels[..n].to_vec()).unwrap();
        let b = Bounds::new(vec![0.0], vec![7.0]).unwrap();
        let m = fit_constraint(&data, &classifier_params(), &b).unwrap();
        let p = m.predict_prob(&[y]).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn config_round_trips(
        seed in 0..=i64::MAX as u64,
        n_init in 2usize..100,
        rounds in 0usize..500,
        candidates in 1usize..1000,
        sample in prop::option::of(1usize..64),
        mode in 0usize..3,
        dir in prop::option::of("[a-z]{1,8}(/[a-z]{1,8})?"),
    ) {
        let cfg = RunConfig {
            problem: "f2d".into(),
            seed,
            n_init,
            rounds,
            candidates,
            theta_mode: ThetaSetting(sample.map_or(ThetaMode::Map, ThetaMode::Sample)),
            constraint_mode: [ConstraintMode::Surrogate, ConstraintMode::KnownIndicator, ConstraintMode::None][mode],
            output_dir: dir.map(Into::into),
        };
        let text = cfg.emit().unwrap();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.emit().unwrap(), text);
    }

    #[test]
    fn trace_round_trips(rows in prop::collection::vec(
        (prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 2),
         any::<f64>(), -700.0f64..0.0, any::<f64>(), 0u8..=1, any::<f64>()),
        0..20,
    )) {
        let rows: Vec<TraceRow> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (x, ieci, lr, z, c, fmin))| TraceRow { round: i + 1, x, ieci, log_reduction: lr, z, c, fmin })
            .filter(|r| [r.ieci, r.z, r.fmin].iter().all(|v| !v.is_nan()))
            .collect();
        let mut w = TraceWriter::new(Vec::new(), 2).unwrap();
        for r in &rows {
            w.write(r).unwrap();
        }
        let bytes = w.into_inner().unwrap();
        prop_assert_eq!(parse_trace(bytes.as_slice()).unwrap(), rows);
    }
}

/// Kriging by explicit matrix inversion on the dense Gram matrix.
fn inverse_predict(x: &[Vec<f64>], z: &[f64], p: &Hyperparams, y: &[f64]) -> (f64, f64) {
    let corr = |a: &[f64], b: &[f64]| -> f64 {
        (-a.iter().zip(b).zip(&p.lengthscales).map(|((u, v), d)| (u - v) * (u - v) / d).sum::<f64>()).exp()
    };
    let n = x.len();
    let k = DMatrix::from_fn(n, n, |i, j| corr(&x[i], &x[j]) + if i == j { p.nugget + 1e-10 } else { 0.0 });
    let kinv = k.try_inverse().unwrap();
    let ky = DVector::from_fn(n, |i, _| corr(&x[i], y));
    let zv = DVector::from_column_slice(z);
    let mean = (ky.transpose() * &kinv * zv)[0];
    let var = p.sigma2 * (1.0 + p.nugget - (ky.transpose() * &kinv * &ky)[0]);
    (mean, var)
}

#[test]
fn kriging_matches_explicit_inverse() {
    let x = vec![vec![0.1, 0.9], vec![0.4, 0.4], vec![0.8, 0.2], vec![0.55, 0.7], vec![0.3, 0.05]];
    let z = [0.5, -1.2, 0.3, 0.9, -0.4];
    let p = Hyperparams::new(1.7, vec![0.3, 0.15], 0.02).unwrap();
    let m = GpModel::fit(&x, &z, &p).unwrap();
    for y in [[0.0, 0.0], [0.4, 0.4], [0.33, 0.61], [1.0, 1.0]] {
        let got = m.predict(&y).unwrap();
        let (mean, var) = inverse_predict(&x, &z, &p, &y);
        assert!((got.mean - mean).abs() < 1e-10);
        assert!((got.variance - var).abs() < 1e-10);
    }
}

#[test]
fn ei_reference_value() {
    // -Phi(-1) + phi(-1) from a 10^7-draw Monte Carlo check, agreeing to 3 standard errors
    assert_relative_eq!(expected_improvement(1.0, 1.0, 0.0), 0.083_315_470_3, max_relative = 1e-8);
}

#[test]
fn finer_reference_grid_lowers_the_threshold() {
    let x = vec![vec![0.2], vec![0.5], vec![0.7]];
    let m = GpModel::fit(&x, &[0.4, -0.9, -0.2], &Hyperparams::new(1.0, vec![0.05], 0.01).unwrap()).unwrap();
    let grid = |n: usize| (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect::<Vec<_>>();
    let coarse = f_min(&m, &grid(100), FminRule::MinPosteriorMean).unwrap().value;
    let fine = f_min(&m, &grid(10_000), FminRule::MinPosteriorMean).unwrap().value;
    assert!(coarse >= fine);
}

/// Predictive probabilities from an independent tensor Gauss-Hermite
/// integration (60 nodes per latent, 80 for the test latent).
const FROZEN_QUADRATURE: [(&[f64], &[u8], [f64; 5]); 5] = [
    (&[3.5], &[1], [0.5108283357, 0.5712886243, 0.636838154, 0.5712886243, 0.5108283357]),
    (&[3.0, 3.5], &[0, 1], [0.4862288755, 0.4643992546, 0.5098769701, 0.5325959219, 0.5078168422]),
    (&[1.0, 2.0, 3.0], &[1, 0, 1], [0.5661836705, 0.5602192312, 0.5694320786, 0.5366135392, 0.5048721471]),
    (&[2.0, 2.3, 2.6], &[1, 1, 0], [0.5614744646, 0.6104166167, 0.5244207499, 0.4915431232, 0.4984659441]),
    (&[0.5, 3.5, 6.5], &[0, 1, 1], [0.3758789718, 0.4709132031, 0.6357452707, 0.6636414519, 0.6349149453]),
];

#[test]
fn classifier_quadrature_matches_frozen_values() {
    let params = classifier_params();
    let b = Bounds::new(vec![0.0], vec![7.0]).unwrap();
    for (x, labels, expect) in FROZEN_QUADRATURE {
        let case = ClassifierCase { x: x.to_vec(), labels: labels.to_vec() };
        let data = ConstraintData::new(x.iter().map(|v| vec![*v]).collect(), labels.to_vec()).unwrap();
        let laplace = fit_constraint(&data, &params, &b).unwrap();
        for (y, e) in CLASSIFIER_TEST_GRID.iter().zip(expect) {
            let q = quadrature_probability(&case, &params, 0.0, 7.0, *y);
            assert!((q - e).abs() < 1e-7, "quadrature {q} vs frozen {e} at {x:?} {labels:?} y={y}");
            let l = laplace.predict_prob(&[*y]).unwrap();
            assert!((l - e).abs() <= 0.05, "laplace {l} vs {e} at {x:?} {labels:?} y={y}");
        }
    }
}
