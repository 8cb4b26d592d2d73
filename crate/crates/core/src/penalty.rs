//! Stabilization by a barrier penalty on the spectral radius inside the
//! marginal-likelihood search.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{start_grid, Evidence};
use crate::kernel::{HyperBox, Hyperparameters};
use crate::lti::PredictorEstimate;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::poly::spectral_radius;

/// Barrier `J(rho) = (alpha (delta - rho))^-alpha - (alpha delta)^-alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub alpha: f64,
    pub delta: f64,
}

/// Tuning of the outer loop that tightens the barrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltySchedule {
    /// Barrier offset factor; also the steepness of the final refinement.
    pub eps: f64,
    pub d_alpha: f64,
    pub alpha_floor: f64,
    /// Relative decrement of `delta` on a stall.
    pub d_delta_rel: f64,
    pub delta_floor: f64,
    pub inner_evals: usize,
    pub max_outer: usize,
    pub stall_tol: f64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self {
            eps: 0.05,
            d_alpha: 0.1,
            alpha_floor: 0.05,
            d_delta_rel: 0.01,
            delta_floor: 1.0 + 1e-4,
            inner_evals: 200,
            max_outer: 50,
            stall_tol: 1e-6,
        }
    }
}

fn barrier_term(alpha: f64, gap: f64) -> f64 {
    (alpha * gap).powf(-alpha)
}

/// Penalty value; `+inf` once `rho >= delta`.
pub fn penalty(rho: f64, params: &PenaltyParams) -> f64 {
    if !(rho < params.delta) {
        return f64::INFINITY;
    }
    barrier_term(params.alpha, params.delta - rho) - barrier_term(params.alpha, params.delta)
}

/// Spectral radius of `A_eta(z)` built from the posterior-mean `f`.
pub fn rho_of_eta(evidence: &Evidence, eta: &Hyperparameters) -> Result<f64> {
    let est = evidence.posterior_mean(eta)?;
    spectral_radius(&est.f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyOutcome {
    pub eta: Hyperparameters,
    pub estimate: PredictorEstimate,
    pub spectral_radius: f64,
    pub nll: f64,
    pub outer_iterations: usize,
}

struct Penalized<'a> {
    evidence: &'a Evidence,
    bounds: &'a HyperBox,
    noise_var: f64,
}

impl Penalized<'_> {
    fn eta(&self, theta: &[f64]) -> Hyperparameters {
        let (scale, decay) = HyperBox::from_unconstrained(theta);
        Hyperparameters {
            scale,
            decay,
            noise_var: self.noise_var,
        }
    }

    /// `(-ln p_eta(y) + J(rho_eta), rho_eta)`.
    fn eval(&self, theta: &[f64], params: &PenaltyParams) -> (f64, f64) {
        if !self.bounds.contains_unconstrained(theta) {
            return (f64::INFINITY, f64::NAN);
        }
        let eta = self.eta(theta);
        let rho = match rho_of_eta(self.evidence, &eta) {
            Ok(r) => r,
            Err(_) => return (f64::INFINITY, f64::NAN),
        };
        let j = penalty(rho, params);
        if !j.is_finite() {
            return (f64::INFINITY, rho);
        }
        match self.evidence.neg_log_marginal(&eta) {
            Ok(nll) => (nll + j, rho),
            Err(_) => (f64::INFINITY, rho),
        }
    }

    /// `theta` if the barrier is finite there, else the largest kernel scale
    /// at the same decay that is (bisection in `ln c`; the smallest scale
    /// gives `f -> 0` and is the stable end).
    fn feasible_start(&self, theta: &[f64], params: &PenaltyParams) -> Vec<f64> {
        if self.eval(theta, params).0.is_finite() {
            return theta.to_vec();
        }
        let mut lo = self.bounds.scale.0.ln() + 1e-9;
        let mut hi = theta[0];
        let at = |lc: f64| vec![lc, theta[1]];
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.eval(&at(mid), params).0.is_finite() {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-3 {
                break;
            }
        }
        at(lo)
    }

    fn simplex(&self, start: &[f64], params: &PenaltyParams, evals: usize) -> Result<(Vec<f64>, f64)> {
        let opts = NelderMeadOptions {
            initial_step: 0.25,
            max_evals: evals,
            ..Default::default()
        };
        let m = nelder_mead(|th: &[f64]| self.eval(th, params).0, start, &opts)?;
        Ok((m.x, m.value))
    }

    /// Simplex search from `start` and from the best start-grid point; the
    /// better result wins (ties keep the warm start).
    fn minimize(&self, start: &[f64], params: &PenaltyParams, evals: usize) -> Result<(Vec<f64>, f64)> {
        let warm = self.simplex(start, params, evals);
        let grid = start_grid(self.bounds)
            .into_iter()
            .map(|(c, b)| HyperBox::to_unconstrained(c, b).to_vec())
            .map(|th| (self.eval(&th, params).0, th))
            .filter(|(v, _)| v.is_finite())
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let cold = match grid {
            Some((_, th)) => self.simplex(&th, params, evals).ok(),
            None => None,
        };
        match (warm, cold) {
            (Ok(w), Some(c)) if c.1 < w.1 => Ok(c),
            (Ok(w), _) => Ok(w),
            (Err(_), Some(c)) => Ok(c),
            (Err(e), None) => Err(e),
        }
    }
}

/// Iteratively tightened barrier search over the hyperparameters.
///
/// `start` is the unconstrained marginal-likelihood optimum. While the
/// posterior-mean predictor is unstable, `delta` is set to
/// `min(delta, rho (1 + eps))` and the penalized objective re-minimized;
/// when the value stalls, `alpha` and `delta` are decreased, and once both
/// sit at their floors a further stall ends the loop. A final pass
/// with `alpha = eps`, `delta = 1` makes `rho >= 1` infeasible.
pub fn stabilize_ml_pf(
    evidence: &Evidence,
    start: &Hyperparameters,
    bounds: &HyperBox,
    schedule: &PenaltySchedule,
) -> Result<PenaltyOutcome> {
    start.validate()?;
    let problem = Penalized {
        evidence,
        bounds,
        noise_var: start.noise_var,
    };
    let clamp_scale = start.scale.clamp(bounds.scale.0, bounds.scale.1);
    let mut theta = HyperBox::to_unconstrained(clamp_scale, start.decay).to_vec();
    let mut rho = rho_of_eta(evidence, &problem.eta(&theta))?;

    let mut params = PenaltyParams {
        alpha: 1.0,
        delta: rho * (1.0 + schedule.eps),
    };
    let mut prev_value: Option<f64> = None;
    let mut outer = 0;
    while rho >= 1.0 {
        if outer >= schedule.max_outer {
            return Err(Error::PenaltyStabilizationFailed {
                iterations: outer,
                rho,
            });
        }
        outer += 1;
        // never loosen the barrier again, so stall decrements accumulate
        params.delta = params.delta.min(rho * (1.0 + schedule.eps));
        let from = problem.feasible_start(&theta, &params);
        let (next, value) = problem.minimize(&from, &params, schedule.inner_evals)?;
        theta = next;
        rho = problem.eval(&theta, &params).1;
        debug!(
            "ml+pf outer {outer}: alpha={:.3} delta={:.5} rho={rho:.5} value={value:.6}",
            params.alpha, params.delta
        );
        if prev_value.is_some_and(|pv| (pv - value).abs() < schedule.stall_tol) {
            if params.alpha <= schedule.alpha_floor && params.delta <= schedule.delta_floor {
                // schedule exhausted; further passes repeat the same search
                debug!("ml+pf: schedule exhausted at rho={rho:.6}, moving to the final pass");
                break;
            }
            params.alpha = (params.alpha - schedule.d_alpha).max(schedule.alpha_floor);
            params.delta = (params.delta * (1.0 - schedule.d_delta_rel)).max(schedule.delta_floor);
        }
        prev_value = Some(value);
    }

    let final_params = PenaltyParams {
        alpha: schedule.eps,
        delta: 1.0,
    };
    let from = problem.feasible_start(&theta, &final_params);
    let (theta, _) = problem.minimize(&from, &final_params, schedule.inner_evals)?;
    let eta = problem.eta(&theta);
    let estimate = evidence.posterior_mean(&eta)?;
    let rho = spectral_radius(&estimate.f)?;
    if !(rho < 1.0) {
        return Err(Error::PenaltyStabilizationFailed {
            iterations: outer,
            rho,
        });
    }
    Ok(PenaltyOutcome {
        nll: evidence.neg_log_marginal(&eta)?,
        eta,
        estimate,
        spectral_radius: rho,
        outer_iterations: outer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_vanishes_at_zero() {
        for &(alpha, delta) in &[(1.0, 1.0), (0.05, 1.3), (2.5, 4.0), (0.3, 1.0001)] {
            assert_eq!(penalty(0.0, &PenaltyParams { alpha, delta }), 0.0);
        }
    }

    #[test]
    fn penalty_formula_value() {
        let v = penalty(1.0, &PenaltyParams { alpha: 1.0, delta: 2.0 });
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn penalty_wall() {
        let params = PenaltyParams { alpha: 1.0, delta: 1.1 };
        assert_eq!(penalty(1.1, &params), f64::INFINITY);
        assert_eq!(penalty(2.0, &params), f64::INFINITY);
        assert!(penalty(1.1 - 1e-8, &params) > 1e6);
    }

    #[test]
    fn small_alpha_is_flat_until_the_wall() {
        // As alpha -> 0 the barrier flattens: values stay O(1) right up to
        // delta and the penalty only becomes infinite at delta itself.
        let params = PenaltyParams { alpha: 0.01, delta: 1.1 };
        let at_one = penalty(1.0, &params);
        let near_wall = penalty(1.0999, &params);
        let expect_one = (0.01f64 * 0.1).powf(-0.01) - (0.011f64).powf(-0.01);
        let expect_wall = (0.01f64 * 0.0001).powf(-0.01) - (0.011f64).powf(-0.01);
        assert!((at_one - expect_one).abs() < 1e-12 && at_one < 0.1);
        assert!((near_wall - expect_wall).abs() < 1e-12);
        assert!(near_wall < 0.2);
        assert_eq!(penalty(1.1, &params), f64::INFINITY);
    }
}
