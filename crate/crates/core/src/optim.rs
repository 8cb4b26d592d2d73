//! Derivative-free Nelder–Mead simplex minimization.
//!
//! Non-finite objective values are treated as `+inf`, which turns any region
//! where the objective refuses to evaluate into a hard wall.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Edge length of the initial axis-aligned simplex.
    pub initial_step: f64,
    /// Stop once every vertex is within this distance of the best one.
    pub diameter_tol: f64,
    pub max_iter: usize,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.5,
            diameter_tol: 1e-6,
            max_iter: 500,
            max_evals: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    // a + t (b - a)
    a.iter().zip(b).map(|(ai, bi)| ai + t * (bi - ai)).collect()
}

pub fn nelder_mead<F>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 {
        return Err(Error::Dimension("Nelder-Mead needs at least one coordinate".into()));
    }
    let mut obj = Counted { f, evals: 0 };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = obj.call(x0);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        let v = obj.call(&x);
        simplex.push((x, v));
    }
    if simplex.iter().all(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteObjective);
    }

    let order = |s: &mut Vec<(Vec<f64>, f64)>| {
        // stable sort keeps the earlier vertex first on ties
        s.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    };

    let mut iterations = 0;
    let mut converged = false;
    order(&mut simplex);
    while iterations < opts.max_iter && obj.evals < opts.max_evals {
        let best = &simplex[0].0;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(best)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        if diameter < opts.diameter_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let (worst_x, worst_v) = simplex[n].clone();
        let second_worst = simplex[n - 1].1;
        let best_v = simplex[0].1;

        let xr = lerp(&centroid, &worst_x, -1.0);
        let vr = obj.call(&xr);
        if vr < best_v {
            let xe = lerp(&centroid, &worst_x, -2.0);
            let ve = obj.call(&xe);
            simplex[n] = if ve < vr { (xe, ve) } else { (xr, vr) };
        } else if vr < second_worst {
            simplex[n] = (xr, vr);
        } else {
            let (xc, vc) = if vr < worst_v {
                let xc = lerp(&centroid, &xr, 0.5);
                let vc = obj.call(&xc);
                (xc, vc)
            } else {
                let xc = lerp(&centroid, &worst_x, 0.5);
                let vc = obj.call(&xc);
                (xc, vc)
            };
            if vc < worst_v.min(vr) {
                simplex[n] = (xc, vc);
            } else {
                let x_best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let xs = lerp(&x_best, &vertex.0, 0.5);
                    let vs = obj.call(&xs);
                    *vertex = (xs, vs);
                }
            }
        }
        order(&mut simplex);
    }

    let (x, value) = simplex.swap_remove(0);
    Ok(Minimum {
        x,
        value,
        iterations,
        evaluations: obj.evals,
        converged,
    })
}
