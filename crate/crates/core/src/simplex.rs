//! Bounded Nelder–Mead simplex minimizer.
//!
//! Coefficients are fixed: reflection 1, expansion 2, contraction 0.5,
//! shrink 0.5. Every trial vertex is projected by the caller-supplied
//! `project` before evaluation, which is how box constraints are enforced.

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Convergence when every vertex lies within this distance of the best.
    pub diameter_tol: f64,
    /// Optional cap on objective evaluations.
    pub max_evaluations: Option<usize>,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_iterations: 200, diameter_tol: 1e-6, max_evaluations: None }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimize `f` from `start`, with initial simplex edges `steps` along each axis.
/// Non-finite objective values are treated as `+inf`.
pub fn minimize<F, P>(mut f: F, project: P, start: &[f64], steps: &[f64], opts: NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
    P: Fn(&mut [f64]),
{
    let n = start.len();
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64], count: &mut usize| -> f64 {
        *count += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut first = start.to_vec();
    project(&mut first);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(&first, &mut evaluations);
    simplex.push((first.clone(), v0));
    for j in 0..n {
        let mut v = first.clone();
        v[j] += steps[j];
        project(&mut v);
        if v[j] == first[j] {
            // pinned against a bound; step the other way
            v[j] -= steps[j];
            project(&mut v);
        }
        let fv = eval(&v, &mut evaluations);
        simplex.push((v, fv));
    }

    let budget_left = |count: usize| opts.max_evaluations.is_none_or(|m| count < m);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diameter = simplex[1..].iter().map(|(v, _)| distance(v, &simplex[0].0)).fold(0.0, f64::max);
        if diameter <= opts.diameter_tol {
            converged = true;
            break;
        }
        if !budget_left(evaluations) {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect();
            project(&mut p);
            p
        };

        let xr = along(REFLECT);
        let fr = eval(&xr, &mut evaluations);
        if fr < simplex[0].1 {
            let xe = along(EXPAND);
            let fe = eval(&xe, &mut evaluations);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = along(CONTRACT);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc)
        } else {
            let xc = along(-CONTRACT);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc)
        };
        if fc < worst.1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for (v, fv) in simplex.iter_mut().skip(1) {
            for (x, b) in v.iter_mut().zip(&best) {
                *x = b + SHRINK * (*x - b);
            }
            project(v);
            *fv = eval(v, &mut evaluations);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    NelderMeadResult { x, value, iterations, evaluations, converged }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
