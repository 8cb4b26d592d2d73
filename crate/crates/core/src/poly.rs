//! Real polynomials in the delay operator, root finding and Schur stability.
//!
//! Coefficients are stored in ascending powers of `z^-1`: `[a0, a1, .., an]`
//! stands for `a0 + a1 z^-1 + .. + an z^-n`. Its roots are the roots of the
//! z-domain polynomial `a0 z^n + a1 z^(n-1) + .. + an`.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Complex64 = Complex<f64>;

const ABERTH_MAX_ITER: usize = 100;
const ABERTH_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn one() -> Self {
        Self { coeffs: vec![1.0] }
    }

    /// Monic polynomial `prod (1 - r z^-1)` with the given real roots.
    pub fn from_real_roots(roots: &[f64]) -> Self {
        roots.iter().fold(Self::one(), |acc, &r| acc.mul(&Self::new(vec![1.0, -r])))
    }

    /// `A(z) = 1 - f1 z^-1 - .. - fp z^-p`, the denominator of the forward
    /// model implied by the predictor coefficients `f`.
    pub fn from_predictor(f: &[f64]) -> Self {
        let mut coeffs = Vec::with_capacity(f.len() + 1);
        coeffs.push(1.0);
        coeffs.extend(f.iter().map(|v| -v));
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Index of the last nonzero coefficient (0 for constants and the zero
    /// polynomial).
    pub fn degree(&self) -> usize {
        self.coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    /// Number of stored coefficients minus one; the count of roots returned
    /// by [`poly_roots`], zeros at the origin included.
    pub fn order(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn is_monic(&self) -> bool {
        self.coeffs.first() == Some(&1.0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            return Self { coeffs: vec![] };
        }
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self { coeffs: out }
    }

    /// Evaluates the z-domain polynomial `a0 z^n + .. + an` at `z`.
    pub fn eval_z(&self, z: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// All roots of the z-domain polynomial, sorted by modulus then angle.
///
/// Trailing zero coefficients contribute exact roots at the origin; the rest
/// are found by Aberth–Ehrlich simultaneous iteration on the monic form.
pub fn poly_roots(poly: &Polynomial) -> Result<Vec<Complex64>> {
    let c = poly.coeffs();
    if poly.is_zero() {
        return Err(Error::DegeneratePolynomial("zero polynomial"));
    }
    if c[0] == 0.0 {
        return Err(Error::DegeneratePolynomial("leading coefficient is zero"));
    }
    if poly.order() == 0 {
        return Err(Error::DegeneratePolynomial("constant polynomial has no roots"));
    }
    let deg = poly.degree();
    let zeros_at_origin = poly.order() - deg;
    let monic: Vec<f64> = c[..=deg].iter().map(|v| v / c[0]).collect();

    let mut roots = if deg == 0 {
        Vec::new()
    } else {
        aberth(&monic)?
    };
    roots.extend(std::iter::repeat(Complex64::new(0.0, 0.0)).take(zeros_at_origin));
    sort_roots(&mut roots);
    Ok(roots)
}

fn sort_roots(roots: &mut [Complex64]) {
    roots.sort_by(|a, b| {
        a.norm()
            .partial_cmp(&b.norm())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.arg().partial_cmp(&b.arg()).unwrap_or(std::cmp::Ordering::Equal))
    });
}

/// Horner evaluation of a monic polynomial and its derivative, plus the
/// magnitude bound `sum |a_k| |z|^(n-k)` used for backward error.
fn horner(monic: &[f64], z: Complex64) -> (Complex64, Complex64, f64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    let mut bound = 0.0;
    let r = z.norm();
    for &a in monic {
        dp = dp * z + p;
        p = p * z + a;
        bound = bound * r + a.abs();
    }
    (p, dp, bound)
}

fn aberth(monic: &[f64]) -> Result<Vec<Complex64>> {
    let n = monic.len() - 1;
    if n == 1 {
        return Ok(vec![Complex64::new(-monic[1], 0.0)]);
    }

    // Start on a circle whose radius matches the coefficient growth, rotated
    // off the real axis so conjugate roots separate.
    let radius = monic
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, a)| a.abs().powf(1.0 / k as f64))
        .fold(0.0_f64, f64::max)
        .max(1e-3);
    let mut z: Vec<Complex64> = (0..n)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.4;
            Complex64::from_polar(radius, theta)
        })
        .collect();

    let mut done = vec![false; n];
    let mut backward = vec![f64::INFINITY; n];
    for _ in 0..ABERTH_MAX_ITER {
        for i in 0..n {
            if done[i] {
                continue;
            }
            let (p, dp, bound) = horner(monic, z[i]);
            backward[i] = p.norm() / bound.max(f64::MIN_POSITIVE);
            if p.norm() == 0.0 {
                done[i] = true;
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| (z[i] - z[j]).inv())
                .sum();
            let w = ratio / (Complex64::new(1.0, 0.0) - ratio * repulsion);
            if !w.re.is_finite() || !w.im.is_finite() {
                continue;
            }
            z[i] -= w;
            if w.norm() <= 1e-14 * z[i].norm().max(1e-300) || backward[i] <= 1e-15 {
                done[i] = true;
            }
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }

    let mut max_residual: f64 = 0.0;
    for zi in &z {
        let (p, _, bound) = horner(monic, *zi);
        max_residual = max_residual.max(p.norm() / bound.max(f64::MIN_POSITIVE));
    }
    if !(max_residual <= ABERTH_TOL) {
        return Err(Error::RootsNotConverged {
            iterations: ABERTH_MAX_ITER,
            max_residual,
            partial: z.iter().map(|c| (c.re, c.im)).collect(),
        });
    }
    Ok(z)
}

/// Companion matrix of `A(z) = z^p - f1 z^(p-1) - .. - fp`: first row holds
/// `f`, identity on the subdiagonal.
pub fn companion(f: &[f64]) -> Result<DMatrix<f64>> {
    let p = f.len();
    if p == 0 {
        return Err(Error::Dimension("companion matrix needs p >= 1".into()));
    }
    let mut m = DMatrix::zeros(p, p);
    for (j, v) in f.iter().enumerate() {
        m[(0, j)] = *v;
    }
    for i in 1..p {
        m[(i, i - 1)] = 1.0;
    }
    Ok(m)
}

/// Largest root modulus of `A(z) = z^p - sum f_k z^(p-k)`.
pub fn spectral_radius(f: &[f64]) -> Result<f64> {
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite predictor coefficient".into()));
    }
    if f.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let roots = poly_roots(&Polynomial::from_predictor(f))?;
    Ok(roots.iter().fold(0.0_f64, |m, r| m.max(r.norm())))
}

/// Schur–Cohn step-down test: true iff every root of
/// `A(z) = z^p - sum f_k z^(p-k)` lies strictly inside the unit circle.
///
/// O(p^2) and root-free, so it is the cheap indicator used inside samplers.
pub fn is_schur_stable(f: &[f64]) -> bool {
    let mut a: Vec<f64> = f.iter().map(|v| -v).collect();
    let mut scratch = vec![0.0; a.len()];
    while let Some(&k) = a.last() {
        if !(k.abs() < 1.0) {
            return false;
        }
        let n = a.len();
        let denom = 1.0 - k * k;
        for i in 0..n - 1 {
            scratch[i] = (a[i] - k * a[n - 2 - i]) / denom;
        }
        a.truncate(n - 1);
        a.copy_from_slice(&scratch[..n - 1]);
    }
    true
}
