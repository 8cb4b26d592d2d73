//! First-order stable-spline (TC) prior on predictor impulse responses and
//! the data matrices that map it to the output covariance.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel scale `c`, decay `beta` and the innovation variance carried with
/// them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub scale: f64,
    pub decay: f64,
    pub noise_var: f64,
}

impl Hyperparameters {
    pub fn new(scale: f64, decay: f64, noise_var: f64) -> Result<Self> {
        let eta = Self {
            scale,
            decay,
            noise_var,
        };
        eta.validate()?;
        Ok(eta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale >= 0.0) || !self.scale.is_finite() {
            return Err(Error::Domain(format!("kernel scale {} must be >= 0", self.scale)));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Domain(format!("kernel decay {} outside (0, 1)", self.decay)));
        }
        if !(self.noise_var > 0.0) || !self.noise_var.is_finite() {
            return Err(Error::Domain(format!("noise variance {} must be > 0", self.noise_var)));
        }
        Ok(())
    }

    /// Same kernel, different noise variance.
    pub fn with_noise_var(self, noise_var: f64) -> Self {
        Self { noise_var, ..self }
    }
}

/// Box on `(scale, decay)` shared by optimization and the flat hyperprior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperBox {
    pub scale: (f64, f64),
    pub decay: (f64, f64),
}

impl Default for HyperBox {
    fn default() -> Self {
        Self {
            scale: (1e-6, 1e4),
            decay: (0.01, 0.99),
        }
    }
}

impl HyperBox {
    pub fn contains(&self, scale: f64, decay: f64) -> bool {
        scale >= self.scale.0 && scale <= self.scale.1 && decay >= self.decay.0 && decay <= self.decay.1
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.scale.0 + self.scale.1),
            0.5 * (self.decay.0 + self.decay.1),
        )
    }

    /// Unconstrained coordinates `(ln c, logit beta)`.
    pub fn to_unconstrained(scale: f64, decay: f64) -> [f64; 2] {
        [scale.ln(), (decay / (1.0 - decay)).ln()]
    }

    pub fn from_unconstrained(theta: &[f64]) -> (f64, f64) {
        (theta[0].exp(), 1.0 / (1.0 + (-theta[1]).exp()))
    }

    /// `ln |d(c, beta) / d theta|`.
    pub fn log_jacobian(theta: &[f64]) -> f64 {
        let (c, b) = Self::from_unconstrained(theta);
        c.ln() + b.ln() + (1.0 - b).ln()
    }

    pub fn contains_unconstrained(&self, theta: &[f64]) -> bool {
        let lo = Self::to_unconstrained(self.scale.0, self.decay.0);
        let hi = Self::to_unconstrained(self.scale.1, self.decay.1);
        theta[0] >= lo[0] && theta[0] <= hi[0] && theta[1] >= lo[1] && theta[1] <= hi[1]
    }
}

/// `K[t, s] = c * beta^max(t, s)` for `t, s = 1..p`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix(pub DMatrix<f64>);

pub fn stable_spline_kernel(eta: &Hyperparameters, p: usize) -> Result<KernelMatrix> {
    eta.validate()?;
    let k = DMatrix::from_fn(p, p, |i, j| {
        eta.scale * eta.decay.powi((i.max(j) + 1) as i32)
    });
    Ok(KernelMatrix(k))
}

/// Exact factor `K = S S^T` of the TC kernel with `S = U diag(sqrt(d))`,
/// `U` the upper-triangular matrix of ones.
///
/// `d_j = c (beta^j - beta^(j+1))` for `j < p` and `d_p = c beta^p`, so
/// `sum_{j >= m} d_j = c beta^m`. Products with `U` are suffix/prefix sums,
/// which keeps every kernel operation O(p^2) or better.
#[derive(Debug, Clone, PartialEq)]
pub struct TcFactor {
    pub d: Vec<f64>,
}

impl TcFactor {
    pub fn new(scale: f64, decay: f64, p: usize) -> Self {
        let d = (1..=p)
            .map(|j| {
                let bj = decay.powi(j as i32);
                if j < p {
                    scale * bj * (1.0 - decay)
                } else {
                    scale * bj
                }
            })
            .collect();
        Self { d }
    }

    pub fn p(&self) -> usize {
        self.d.len()
    }

    /// `S z`: scale then suffix-sum.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        let mut acc = 0.0;
        for j in (0..self.d.len()).rev() {
            acc += self.d[j].sqrt() * z[j];
            out[j] = acc;
        }
    }

    /// `S^T x`: prefix-sum then scale.
    pub fn apply_t(&self, x: &[f64], out: &mut [f64]) {
        let mut acc = 0.0;
        for j in 0..self.d.len() {
            acc += x[j];
            out[j] = self.d[j].sqrt() * acc;
        }
    }

    /// `x^T K^-1 x` and `ln det K`, via `U^-1` being first differences.
    /// Returns `+inf` for the quadratic form when some `d_j` vanishes and the
    /// corresponding difference does not.
    pub fn quad_inv_and_logdet(&self, x: &[f64]) -> (f64, f64) {
        let p = self.d.len();
        let mut quad = 0.0;
        let mut logdet = 0.0;
        for j in 0..p {
            let next = if j + 1 < p { x[j + 1] } else { 0.0 };
            let diff = x[j] - next;
            logdet += self.d[j].ln();
            if self.d[j] > 0.0 {
                quad += diff * diff / self.d[j];
            } else if diff != 0.0 {
                quad = f64::INFINITY;
            }
        }
        (quad, logdet)
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let p = self.d.len();
        let mut s = DMatrix::zeros(p, p);
        for j in 0..p {
            let sd = self.d[j].sqrt();
            for i in 0..=j {
                s[(i, j)] = sd;
            }
        }
        s
    }
}

/// Lagged-output and lagged-input regressors, zero pre-sample values.
/// Row `t` holds `[y(t-1) .. y(t-p)]` and `[u(t-1) .. u(t-p)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorPair {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl RegressorPair {
    /// `[A B]`, T x 2p.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (t, p) = self.a.shape();
        let mut phi = DMatrix::zeros(t, 2 * p);
        phi.columns_mut(0, p).copy_from(&self.a);
        phi.columns_mut(p, p).copy_from(&self.b);
        phi
    }
}

pub fn build_regressors(y: &[f64], u: &[f64], p: usize) -> Result<RegressorPair> {
    if p == 0 {
        return Err(Error::Domain("truncation length must be positive".into()));
    }
    if y.len() != u.len() || y.is_empty() {
        return Err(Error::Dimension(format!(
            "need equal nonempty y/u, got {} and {}",
            y.len(),
            u.len()
        )));
    }
    let t = y.len();
    let lagged = |x: &[f64]| DMatrix::from_fn(t, p, |row, k| if row > k { x[row - k - 1] } else { 0.0 });
    Ok(RegressorPair {
        a: lagged(y),
        b: lagged(u),
    })
}

/// `Sigma = A K A^T + B K B^T + sigma^2 I` with its Cholesky factor.
pub struct OutputCovariance {
    pub matrix: DMatrix<f64>,
    pub cholesky: Cholesky<f64, Dyn>,
}

pub fn output_covariance(eta: &Hyperparameters, reg: &RegressorPair) -> Result<OutputCovariance> {
    let (t, p) = reg.a.shape();
    if reg.b.shape() != (t, p) {
        return Err(Error::Dimension("A and B regressors differ in shape".into()));
    }
    let k = stable_spline_kernel(eta, p)?.0;
    let mut sigma = &reg.a * &k * reg.a.transpose() + &reg.b * &k * reg.b.transpose();
    for i in 0..t {
        sigma[(i, i)] += eta.noise_var;
    }
    // symmetrize against rounding in the two products
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let cholesky = Cholesky::new(sigma.clone()).ok_or(Error::CovarianceNotPd)?;
    Ok(OutputCovariance {
        matrix: sigma,
        cholesky,
    })
}
