//! Predictor and forward (simulation) models, conversions between them, and
//! ARMAX simulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{spectral_radius, Polynomial};

/// Default length of impulse-response expansions.
pub const DEFAULT_EXPANSION: usize = 200;

const OVERFLOW_GUARD: f64 = 1e150;

/// Truncated one-step predictor `y(t|t-1) = F(z) y(t) + G(z) u(t)` with
/// `F = sum f_k z^-k`, `G = sum g_k z^-k`, `k = 1..p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorEstimate {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

impl PredictorEstimate {
    pub fn new(f: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if f.len() != g.len() || f.is_empty() {
            return Err(Error::Dimension(format!(
                "predictor needs equal nonzero lengths, got f={} g={}",
                f.len(),
                g.len()
            )));
        }
        if f.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite predictor coefficient".into()));
        }
        Ok(Self { f, g })
    }

    pub fn zeros(p: usize) -> Self {
        Self {
            f: vec![0.0; p],
            g: vec![0.0; p],
        }
    }

    pub fn p(&self) -> usize {
        self.f.len()
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        spectral_radius(&self.f)
    }
}

/// Impulse responses of `P(z) = G/(1-F)` and `H(z) = 1/(1-F)` truncated to
/// `L` terms. `p_ir[0] = 0` and `h_ir[0] = 1` always.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardModel {
    pub p_ir: Vec<f64>,
    pub h_ir: Vec<f64>,
    /// Dominant pole modulus.
    pub spectral_radius: f64,
}

impl ForwardModel {
    pub fn len(&self) -> usize {
        self.h_ir.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h_ir.is_empty()
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius < 1.0
    }

    /// `p_ir = 0`, `h_ir = [1, 0, ..]`.
    pub fn zero(len: usize) -> Self {
        let mut h_ir = vec![0.0; len];
        if len > 0 {
            h_ir[0] = 1.0;
        }
        Self {
            p_ir: vec![0.0; len],
            h_ir,
            spectral_radius: 0.0,
        }
    }
}

/// Power-series expansion of `G/(1-F)` and `1/(1-F)` to `len` terms.
pub fn predictor_to_forward(est: &PredictorEstimate, len: usize) -> Result<ForwardModel> {
    let p = est.p();
    if len < p {
        return Err(Error::Dimension(format!(
            "expansion length {len} shorter than predictor length {p}"
        )));
    }
    let mut h = vec![0.0; len];
    let mut pir = vec![0.0; len];
    if len > 0 {
        h[0] = 1.0;
    }
    for n in 1..len {
        let kmax = n.min(p);
        let mut hn = 0.0;
        let mut pn = 0.0;
        for k in 1..=kmax {
            hn += est.f[k - 1] * h[n - k];
            pn += est.g[k - 1] * h[n - k];
        }
        h[n] = hn;
        pir[n] = pn;
    }
    Ok(ForwardModel {
        p_ir: pir,
        h_ir: h,
        spectral_radius: spectral_radius(&est.f)?,
    })
}

/// Recovers `F = 1 - 1/H` and `G = P/H` truncated to `p` coefficients.
pub fn forward_to_predictor(model: &ForwardModel, p: usize) -> Result<PredictorEstimate> {
    if model.h_ir.first() != Some(&1.0) {
        return Err(Error::Domain("forward model needs h_ir[0] = 1".into()));
    }
    if model.len() <= p || model.p_ir.len() != model.h_ir.len() {
        return Err(Error::Dimension(format!(
            "forward model of length {} cannot yield {p} predictor coefficients",
            model.len()
        )));
    }
    let h = &model.h_ir;
    // q = 1/H as a power series
    let mut q = vec![0.0; p + 1];
    q[0] = 1.0;
    for n in 1..=p {
        q[n] = -(1..=n).map(|k| h[k] * q[n - k]).sum::<f64>();
    }
    let f = (1..=p).map(|n| -q[n]).collect();
    let g = (1..=p)
        .map(|n| (0..=n).map(|k| q[k] * model.p_ir[n - k]).sum())
        .collect();
    PredictorEstimate::new(f, g)
}

/// Causal filter `num/den` applied to `x` with zero initial conditions.
/// `den[0]` must be nonzero.
pub fn filter(num: &Polynomial, den: &Polynomial, x: &[f64]) -> Result<Vec<f64>> {
    let a = den.coeffs();
    let b = num.coeffs();
    let a0 = *a.first().ok_or(Error::DegeneratePolynomial("empty denominator"))?;
    if a0 == 0.0 {
        return Err(Error::DegeneratePolynomial("denominator has zero leading coefficient"));
    }
    let mut y = vec![0.0; x.len()];
    for t in 0..x.len() {
        let mut acc = 0.0;
        for (j, bj) in b.iter().enumerate().take(t + 1) {
            acc += bj * x[t - j];
        }
        for (j, aj) in a.iter().enumerate().skip(1).take(t) {
            acc -= aj * y[t - j];
        }
        let v = acc / a0;
        if !v.is_finite() || v.abs() > OVERFLOW_GUARD {
            return Err(Error::Overflow { step: t });
        }
        y[t] = v;
    }
    Ok(y)
}

/// First `len` impulse-response terms of `num/den`.
pub fn impulse_response(num: &Polynomial, den: &Polynomial, len: usize) -> Result<Vec<f64>> {
    let mut impulse = vec![0.0; len];
    if len > 0 {
        impulse[0] = 1.0;
    }
    filter(num, den, &impulse)
}

/// `A(z) y(t) = k z^-1 B(z) u(t) + C(z) e(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaxModel {
    pub a: Polynomial,
    pub b: Polynomial,
    pub c: Polynomial,
    pub k_gain: f64,
}

impl ArmaxModel {
    /// `k z^-1 B(z)` as a polynomial.
    pub fn input_numerator(&self) -> Polynomial {
        let mut coeffs = vec![0.0];
        coeffs.extend(self.b.coeffs().iter().map(|v| v * self.k_gain));
        Polynomial::new(coeffs)
    }

    /// Impulse response of `k z^-1 B / A`.
    pub fn input_response(&self, len: usize) -> Result<Vec<f64>> {
        impulse_response(&self.input_numerator(), &self.a, len)
    }

    /// Impulse response of `C / A`.
    pub fn noise_response(&self, len: usize) -> Result<Vec<f64>> {
        impulse_response(&self.c, &self.a, len)
    }

    /// Exact forward model of the system, for reference comparisons.
    pub fn forward(&self, len: usize) -> Result<ForwardModel> {
        let rho = if self.a.order() == 0 {
            0.0
        } else {
            crate::poly::poly_roots(&self.a)?
                .iter()
                .fold(0.0_f64, |m, r| m.max(r.norm()))
        };
        Ok(ForwardModel {
            p_ir: self.input_response(len)?,
            h_ir: self.noise_response(len)?,
            spectral_radius: rho,
        })
    }
}

/// Simulates the ARMAX model from rest.
pub fn simulate_armax(model: &ArmaxModel, u: &[f64], e: &[f64]) -> Result<Vec<f64>> {
    if u.len() != e.len() {
        return Err(Error::Dimension(format!(
            "input length {} differs from noise length {}",
            u.len(),
            e.len()
        )));
    }
    let yu = filter(&model.input_numerator(), &model.a, u)?;
    let ye = filter(&model.c, &model.a, e)?;
    Ok(yu.iter().zip(&ye).map(|(a, b)| a + b).collect())
}

/// One-step-ahead predictions with zero pre-sample values, together with the
/// squared prediction-error loss.
pub fn one_step_predictions(
    est: &PredictorEstimate,
    y: &[f64],
    u: &[f64],
) -> Result<(Vec<f64>, f64)> {
    if y.len() != u.len() {
        return Err(Error::Dimension(format!(
            "output length {} differs from input length {}",
            y.len(),
            u.len()
        )));
    }
    let p = est.p();
    let mut yhat = vec![0.0; y.len()];
    let mut loss = 0.0;
    for t in 0..y.len() {
        let mut acc = 0.0;
        for k in 1..=p.min(t) {
            acc += est.f[k - 1] * y[t - k] + est.g[k - 1] * u[t - k];
        }
        yhat[t] = acc;
        loss += (y[t] - acc).powi(2);
    }
    Ok((yhat, loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_expansion() {
        let est = PredictorEstimate::new(vec![0.5], vec![1.0]).unwrap();
        let fm = predictor_to_forward(&est, 4).unwrap();
        assert_eq!(fm.p_ir, vec![0.0, 1.0, 0.5, 0.25]);
        assert_eq!(fm.h_ir, vec![1.0, 0.5, 0.25, 0.125]);
        assert!((fm.spectral_radius - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_feedback_identity() {
        let est = PredictorEstimate::new(vec![0.0; 3], vec![1.0, 2.0, 3.0]).unwrap();
        let fm = predictor_to_forward(&est, 6).unwrap();
        assert_eq!(fm.p_ir, vec![0.0, 1.0, 2.0, 3.0, 0.0, 0.0]);
        assert_eq!(fm.h_ir, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(fm.spectral_radius, 0.0);
    }

    #[test]
    fn expansion_shorter_than_p_rejected() {
        let est = PredictorEstimate::zeros(5);
        assert!(predictor_to_forward(&est, 3).is_err());
    }

    #[test]
    fn inverse_of_unit_forward() {
        let mut fm = ForwardModel::zero(10);
        fm.p_ir[1] = 1.0;
        let est = forward_to_predictor(&fm, 4).unwrap();
        assert_eq!(est.f, vec![0.0; 4]);
        assert_eq!(est.g, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn scalar_round_trip() {
        let est = PredictorEstimate::new(vec![0.5], vec![1.0]).unwrap();
        let back = forward_to_predictor(&predictor_to_forward(&est, 20).unwrap(), 1).unwrap();
        assert!((back.f[0] - 0.5).abs() < 1e-15);
        assert!((back.g[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn forward_to_predictor_requires_unit_h0() {
        let mut fm = ForwardModel::zero(5);
        fm.h_ir[0] = 2.0;
        assert!(forward_to_predictor(&fm, 2).is_err());
    }

    #[test]
    fn unit_armax_is_delay_plus_noise() {
        let m = ArmaxModel {
            a: Polynomial::one(),
            b: Polynomial::one(),
            c: Polynomial::one(),
            k_gain: 1.0,
        };
        let u = [1.0, 2.0, 3.0, 4.0];
        let e = [0.5, -0.5, 0.25, 0.0];
        let y = simulate_armax(&m, &u, &e).unwrap();
        assert_eq!(y, vec![0.5, 0.5, 2.25, 3.0]);
    }

    #[test]
    fn impulse_through_armax() {
        let m = ArmaxModel {
            a: Polynomial::new(vec![1.0, -0.9]),
            b: Polynomial::new(vec![1.0, 0.3]),
            c: Polynomial::one(),
            k_gain: 2.0,
        };
        let mut u = vec![0.0; 8];
        u[0] = 1.0;
        let y = simulate_armax(&m, &u, &[0.0; 8]).unwrap();
        let ir = impulse_response(&Polynomial::new(vec![1.0, 0.3]), &m.a, 8).unwrap();
        assert_eq!(y[0], 0.0);
        for t in 1..8 {
            assert!((y[t] - 2.0 * ir[t - 1]).abs() < 1e-14);
        }
    }

    #[test]
    fn unstable_simulation_overflows() {
        let m = ArmaxModel {
            a: Polynomial::new(vec![1.0, -3.0]),
            b: Polynomial::one(),
            c: Polynomial::one(),
            k_gain: 1.0,
        };
        let n = 2000;
        let e = vec![1.0; n];
        assert!(matches!(
            simulate_armax(&m, &vec![0.0; n], &e),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn predictions_examples() {
        let zero = PredictorEstimate::zeros(2);
        let y = [1.0, -2.0, 3.0];
        let (yhat, loss) = one_step_predictions(&zero, &y, &[0.0; 3]).unwrap();
        assert_eq!(yhat, vec![0.0; 3]);
        assert_eq!(loss, 14.0);

        let shift = PredictorEstimate::new(vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        let (yhat, loss) = one_step_predictions(&shift, &[1.0, 1.0, 1.0], &[0.0; 3]).unwrap();
        assert_eq!(yhat, vec![0.0, 1.0, 1.0]);
        assert_eq!(loss, 1.0);
    }
}
