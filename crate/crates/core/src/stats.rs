//! Standard normal helpers and Gauss–Hermite quadrature.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn norm_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// `Phi(z)` through `erfc`, accurate in both tails.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Logistic sigmoid, evaluated without overflow for large `|f|`.
pub fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Nodes and weights for `int exp(-x^2) h(x) dx ~ sum_i w_i h(x_i)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let m = n.div_ceil(2);
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * (n as f64).powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * n as f64).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        Self { nodes, weights }
    }

    /// `E[h(F)]` for `F ~ N(mean, var)`.
    pub fn normal_expectation<H: Fn(f64) -> f64>(&self, mean: f64, var: f64, h: H) -> f64 {
        let s = (2.0 * var.max(0.0)).sqrt();
        let total: f64 = self.nodes.iter().zip(&self.weights).map(|(x, w)| w * h(mean + s * x)).sum();
        total / PI.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cdf_reference_values() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert_relative_eq!(norm_cdf(-1.0), 0.158_655_253_931_457_05, max_relative = 1e-12);
        assert_relative_eq!(norm_cdf(1.96), 0.975_002_104_851_780, max_relative = 1e-12);
        assert_relative_eq!(norm_cdf(-8.0), 6.220_960_574_271_785e-16, max_relative = 1e-12);
        assert_relative_eq!(norm_pdf(0.0), 1.0 / (2.0 * PI).sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn sigmoid_symmetry() {
        for f in [-40.0, -3.0, -0.1, 0.0, 0.7, 12.0] {
            assert!((sigmoid(f) + sigmoid(-f) - 1.0).abs() < 1e-15);
            assert_relative_eq!(softplus(f) - softplus(-f), f, epsilon = 1e-12);
        }
    }

    #[test]
    fn hermite_rule_integrates_moments() {
        let gh = GaussHermite::new(32);
        assert_eq!(gh.nodes.len(), 32);
        assert_relative_eq!(gh.weights.iter().sum::<f64>(), PI.sqrt(), max_relative = 1e-13);
        assert_relative_eq!(gh.normal_expectation(1.5, 4.0, |f| f), 1.5, epsilon = 1e-12);
        assert_relative_eq!(gh.normal_expectation(0.0, 4.0, |f| f * f), 4.0, max_relative = 1e-12);
        assert_relative_eq!(gh.normal_expectation(0.0, 1.0, |f| f.powi(4)), 3.0, max_relative = 1e-12);
        // E[sigmoid] of a centred normal is one half
        assert_relative_eq!(gh.normal_expectation(0.0, 9.0, sigmoid), 0.5, epsilon = 1e-14);
    }
}
