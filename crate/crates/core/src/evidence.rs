//! Empirical-Bayes identification: marginal likelihood, hyperparameter
//! search, Gaussian posterior of the predictor and the noise pre-estimate.
//!
//! The production path never forms the T x T output covariance. With the
//! exact TC factor `K = S S^T` and `Phi = [A B]`, the matrix determinant
//! lemma and Woodbury give
//!
//! ```text
//! M         = I + S' Phi^T Phi S / sigma^2                  (2p x 2p)
//! ln det Sigma = T ln sigma^2 + ln det M
//! y^T Sigma^-1 y = (y^T y - v^T M^-1 v / sigma^2) / sigma^2,  v = S' Phi^T y
//! E[f, g | y]   = S M^-1 v / sigma^2
//! Cov[f, g | y] = S M^-1 S^T
//! ```
//!
//! where `S` is block-diagonal with two copies of the TC factor. The literal
//! T x T formulas are kept in [`dense`] and used to cross-check.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{build_regressors, HyperBox, Hyperparameters, RegressorPair, TcFactor};
use crate::lti::{predictor_to_forward, ForwardModel, PredictorEstimate, DEFAULT_EXPANSION};
use crate::optim::{nelder_mead, NelderMeadOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(u: Vec<f64>, y: Vec<f64>, seed: Option<u64>) -> Result<Self> {
        if u.len() != y.len() {
            return Err(Error::Dimension(format!(
                "input length {} differs from output length {}",
                u.len(),
                y.len()
            )));
        }
        if u.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::Domain("dataset contains non-finite samples".into()));
        }
        Ok(Self { u, y, seed })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Gaussian posterior of the stacked predictor `[f; g]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub mean_f: Vec<f64>,
    pub mean_g: Vec<f64>,
    pub covariance: DMatrix<f64>,
}

impl PosteriorMoments {
    pub fn mean(&self) -> PredictorEstimate {
        PredictorEstimate {
            f: self.mean_f.clone(),
            g: self.mean_g.clone(),
        }
    }

    pub fn stacked_mean(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.mean_f.len() * 2,
            self.mean_f.iter().chain(&self.mean_g).copied(),
        )
    }
}

/// Unregularized least-squares ARX fit of the given order; returns
/// `RSS / (T - 2 order)`.
pub fn estimate_noise_variance(data: &Dataset, order: usize) -> Result<f64> {
    let t = data.len();
    if order == 0 || t <= 2 * order {
        return Err(Error::Domain(format!(
            "noise estimate needs T > 2 * order, got T={t} order={order}"
        )));
    }
    let phi = build_regressors(&data.y, &data.u, order)?.stacked();
    let y = DVector::from_column_slice(&data.y);
    let svd = SVD::new(phi.clone(), true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::RankDeficient {
            condition: if smin > 0.0 { smax / smin } else { f64::INFINITY },
        });
    }
    let theta = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Domain(format!("least squares failed: {e}")))?;
    let rss = (&y - &phi * theta).norm_squared();
    Ok(rss / (t - 2 * order) as f64)
}

/// Sample variance of first differences of `y`, the fallback noise level for
/// degenerate excitation.
pub fn difference_variance(y: &[f64]) -> f64 {
    if y.len() < 3 {
        return 1.0;
    }
    let d: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
    var.max(1e-12)
}

/// Sufficient statistics of a dataset for a fixed truncation length.
#[derive(Debug, Clone)]
pub struct Evidence {
    p: usize,
    t: usize,
    /// `Phi^T Phi`, 2p x 2p.
    gram: DMatrix<f64>,
    /// `Phi^T y`.
    phi_y: DVector<f64>,
    yy: f64,
}

struct Reduced {
    factor: TcFactor,
    chol: Cholesky<f64, Dyn>,
    v: DVector<f64>,
    noise_var: f64,
}

impl Evidence {
    pub fn new(data: &Dataset, p: usize) -> Result<Self> {
        let reg = build_regressors(&data.y, &data.u, p)?;
        Ok(Self::from_regressors(&reg, &data.y))
    }

    pub fn from_regressors(reg: &RegressorPair, y: &[f64]) -> Self {
        let phi = reg.stacked();
        let yv = DVector::from_column_slice(y);
        Self {
            p: reg.a.ncols(),
            t: y.len(),
            gram: phi.tr_mul(&phi),
            phi_y: phi.tr_mul(&yv),
            yy: yv.norm_squared(),
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    /// `S^T X S` for one p x p block, via 2-D prefix sums.
    fn sandwich(&self, factor: &TcFactor, row0: usize, col0: usize) -> DMatrix<f64> {
        let p = self.p;
        let mut acc = DMatrix::zeros(p, p);
        for i in 0..p {
            let mut row_sum = 0.0;
            for j in 0..p {
                row_sum += self.gram[(row0 + i, col0 + j)];
                acc[(i, j)] = row_sum + if i > 0 { acc[(i - 1, j)] } else { 0.0 };
            }
        }
        let sd: Vec<f64> = factor.d.iter().map(|d| d.sqrt()).collect();
        for i in 0..p {
            for j in 0..p {
                acc[(i, j)] *= sd[i] * sd[j];
            }
        }
        acc
    }

    fn reduce(&self, eta: &Hyperparameters) -> Result<Reduced> {
        eta.validate()?;
        let p = self.p;
        let factor = TcFactor::new(eta.scale, eta.decay, p);
        let mut m = DMatrix::zeros(2 * p, 2 * p);
        let blocks = [(0, 0), (0, p), (p, p)];
        for &(r, c) in &blocks {
            let w = self.sandwich(&factor, r, c);
            m.view_mut((r, c), (p, p)).copy_from(&w);
            if r != c {
                m.view_mut((c, r), (p, p)).copy_from(&w.transpose());
            }
        }
        m /= eta.noise_var;
        for i in 0..2 * p {
            m[(i, i)] += 1.0;
        }
        let chol = Cholesky::new(m).ok_or(Error::CovarianceNotPd)?;
        let mut v = DVector::zeros(2 * p);
        factor.apply_t(&self.phi_y.as_slice()[..p], &mut v.as_mut_slice()[..p]);
        let mut tail = vec![0.0; p];
        factor.apply_t(&self.phi_y.as_slice()[p..], &mut tail);
        v.as_mut_slice()[p..].copy_from_slice(&tail);
        Ok(Reduced {
            factor,
            chol,
            v,
            noise_var: eta.noise_var,
        })
    }

    /// `-ln p_eta(y) = 1/2 ln det(2 pi Sigma) + 1/2 y^T Sigma^-1 y`.
    pub fn neg_log_marginal(&self, eta: &Hyperparameters) -> Result<f64> {
        let r = self.reduce(eta)?;
        let l = r.chol.l_dirty();
        let logdet_m: f64 = (0..2 * self.p).map(|i| 2.0 * l[(i, i)].ln()).sum();
        let alpha = r.chol.solve(&r.v);
        let s2 = r.noise_var;
        let quad = ((self.yy - r.v.dot(&alpha) / s2) / s2).max(0.0);
        let n = self.t as f64;
        Ok(0.5 * (n * LN_2PI + n * s2.ln() + logdet_m + quad))
    }

    fn expand(&self, factor: &TcFactor, x: &DVector<f64>) -> DVector<f64> {
        let p = self.p;
        let mut out = DVector::zeros(2 * p);
        factor.apply(&x.as_slice()[..p], &mut out.as_mut_slice()[..p]);
        let mut tail = vec![0.0; p];
        factor.apply(&x.as_slice()[p..], &mut tail);
        out.as_mut_slice()[p..].copy_from_slice(&tail);
        out
    }

    pub fn posterior_mean(&self, eta: &Hyperparameters) -> Result<PredictorEstimate> {
        let r = self.reduce(eta)?;
        let alpha = r.chol.solve(&r.v) / r.noise_var;
        let x = self.expand(&r.factor, &alpha);
        Ok(PredictorEstimate {
            f: x.as_slice()[..self.p].to_vec(),
            g: x.as_slice()[self.p..].to_vec(),
        })
    }

    pub fn posterior_moments(&self, eta: &Hyperparameters) -> Result<PosteriorMoments> {
        let p = self.p;
        let r = self.reduce(eta)?;
        let alpha = r.chol.solve(&r.v) / r.noise_var;
        let mean = self.expand(&r.factor, &alpha);
        // S M^-1 S^T, built column by column from M^-1 S^T
        let s = block_factor(&r.factor);
        let minv_st = r.chol.solve(&s.transpose());
        let mut cov = &s * minv_st;
        cov = (&cov + cov.transpose()) * 0.5;
        Ok(PosteriorMoments {
            mean_f: mean.as_slice()[..p].to_vec(),
            mean_g: mean.as_slice()[p..].to_vec(),
            covariance: cov,
        })
    }

    /// `ln p(y | f, g)` for the Gaussian one-step likelihood with the given
    /// noise variance.
    pub fn log_likelihood(&self, x: &[f64], noise_var: f64) -> f64 {
        let xv = DVector::from_column_slice(x);
        let rss = (self.yy - 2.0 * self.phi_y.dot(&xv) + (xv.transpose() * &self.gram * &xv)[(0, 0)]).max(0.0);
        let n = self.t as f64;
        -0.5 * (n * (LN_2PI + noise_var.ln()) + rss / noise_var)
    }
}

fn block_factor(factor: &TcFactor) -> DMatrix<f64> {
    let p = factor.p();
    let s = factor.dense();
    let mut out = DMatrix::zeros(2 * p, 2 * p);
    out.view_mut((0, 0), (p, p)).copy_from(&s);
    out.view_mut((p, p), (p, p)).copy_from(&s);
    out
}

/// Spec-facing convenience: `-ln p_eta(y)` for a dataset at truncation `p`.
pub fn neg_log_marginal(eta: &Hyperparameters, data: &Dataset, p: usize) -> Result<f64> {
    Evidence::new(data, p)?.neg_log_marginal(eta)
}

pub fn posterior_moments(eta: &Hyperparameters, data: &Dataset, p: usize) -> Result<PosteriorMoments> {
    Evidence::new(data, p)?.posterior_moments(eta)
}

/// Literal T x T evaluations through the output covariance.
pub mod dense {
    use super::*;
    use crate::kernel::{output_covariance, stable_spline_kernel};

    pub fn neg_log_marginal(eta: &Hyperparameters, reg: &RegressorPair, y: &[f64]) -> Result<f64> {
        let cov = output_covariance(eta, reg)?;
        let yv = DVector::from_column_slice(y);
        let l = cov.cholesky.l();
        let n = y.len();
        let logdet: f64 = (0..n).map(|i| 2.0 * l[(i, i)].ln()).sum();
        let quad = yv.dot(&cov.cholesky.solve(&yv));
        Ok(0.5 * (n as f64 * LN_2PI + logdet + quad))
    }

    pub fn posterior_moments(
        eta: &Hyperparameters,
        reg: &RegressorPair,
        y: &[f64],
    ) -> Result<PosteriorMoments> {
        let p = reg.a.ncols();
        let cov = output_covariance(eta, reg)?;
        let k = stable_spline_kernel(eta, p)?.0;
        let yv = DVector::from_column_slice(y);
        let sinv_y = cov.cholesky.solve(&yv);
        let mean_f = &k * reg.a.transpose() * &sinv_y;
        let mean_g = &k * reg.b.transpose() * &sinv_y;
        let mut kb = DMatrix::zeros(2 * p, 2 * p);
        kb.view_mut((0, 0), (p, p)).copy_from(&k);
        kb.view_mut((p, p), (p, p)).copy_from(&k);
        let phi = reg.stacked();
        let phik = &phi * &kb;
        let covariance = &kb - phik.transpose() * cov.cholesky.solve(&phik);
        Ok(PosteriorMoments {
            mean_f: mean_f.as_slice().to_vec(),
            mean_g: mean_g.as_slice().to_vec(),
            covariance,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperOptimum {
    pub eta: Hyperparameters,
    pub nll: f64,
    pub converged: bool,
    pub evaluations: usize,
}

/// Objective in unconstrained coordinates; `+inf` outside the box.
pub fn box_objective<'a>(
    evidence: &'a Evidence,
    bounds: &'a HyperBox,
    noise_var: f64,
) -> impl Fn(&[f64]) -> f64 + 'a {
    move |theta: &[f64]| {
        if !bounds.contains_unconstrained(theta) {
            return f64::INFINITY;
        }
        let (scale, decay) = HyperBox::from_unconstrained(theta);
        let eta = Hyperparameters {
            scale,
            decay,
            noise_var,
        };
        evidence.neg_log_marginal(&eta).unwrap_or(f64::INFINITY)
    }
}

/// Nelder–Mead on `-ln p_eta(y)` over `(ln c, logit beta)`, noise variance
/// held at `start.noise_var`. Restarts from the optimum until the value stops
/// improving (at most twice).
pub fn optimize_hyperparameters(
    evidence: &Evidence,
    start: &Hyperparameters,
    bounds: &HyperBox,
) -> Result<HyperOptimum> {
    start.validate()?;
    let objective = box_objective(evidence, bounds, start.noise_var);
    let mut theta = HyperBox::to_unconstrained(start.scale.max(bounds.scale.0), start.decay).to_vec();
    let mut opts = NelderMeadOptions::default();
    let mut best = nelder_mead(&objective, &theta, &opts)?;
    let mut evaluations = best.evaluations;
    for _ in 0..2 {
        theta.clone_from(&best.x);
        opts.initial_step = 0.1;
        let again = nelder_mead(&objective, &theta, &opts)?;
        evaluations += again.evaluations;
        let improved = again.value < best.value - 1e-9;
        if again.value <= best.value {
            best = again;
        }
        if !improved {
            break;
        }
    }
    if !best.value.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let (scale, decay) = HyperBox::from_unconstrained(&best.x);
    Ok(HyperOptimum {
        eta: Hyperparameters {
            scale,
            decay,
            noise_var: start.noise_var,
        },
        nll: best.value,
        converged: best.converged,
        evaluations,
    })
}

/// Coarse `(scale, decay)` grid inside `bounds` used to start simplex
/// searches.
pub fn start_grid(bounds: &HyperBox) -> Vec<(f64, f64)> {
    const SCALES: [f64; 8] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0];
    const DECAYS: [f64; 6] = [0.3, 0.5, 0.7, 0.8, 0.9, 0.95];
    SCALES
        .iter()
        .flat_map(|&c| DECAYS.iter().map(move |&b| (c, b)))
        .filter(|&(c, b)| bounds.contains(c, b))
        .collect()
}

/// Best point of the start grid.
pub fn grid_start(evidence: &Evidence, bounds: &HyperBox, noise_var: f64) -> Hyperparameters {
    let mut best = (f64::INFINITY, Hyperparameters {
        scale: 1.0,
        decay: 0.8,
        noise_var,
    });
    for (scale, decay) in start_grid(bounds) {
        let eta = Hyperparameters {
            scale,
            decay,
            noise_var,
        };
        if let Ok(v) = evidence.neg_log_marginal(&eta) {
            if v < best.0 {
                best = (v, eta);
            }
        }
    }
    best.1
}

#[derive(Debug, Clone)]
pub struct IdentifyOptions {
    pub bounds: HyperBox,
    pub expansion: usize,
    /// Overrides the least-squares noise pre-estimate.
    pub noise_var: Option<f64>,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self {
            bounds: HyperBox::default(),
            expansion: DEFAULT_EXPANSION,
            noise_var: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Identification {
    pub estimate: PredictorEstimate,
    pub forward: ForwardModel,
    pub eta: Hyperparameters,
    pub nll: f64,
    pub evidence: Evidence,
}

impl Identification {
    pub fn is_stable(&self) -> bool {
        self.forward.is_stable()
    }
}

/// Noise pre-estimate at order `p`, falling back to the difference variance
/// when the regressors are rank deficient.
pub fn noise_variance_or_fallback(data: &Dataset, p: usize) -> Result<f64> {
    match estimate_noise_variance(data, p) {
        Ok(v) if v > 0.0 => Ok(v),
        Ok(_) | Err(Error::RankDeficient { .. }) => {
            warn!("noise pre-estimate degenerate; using variance of output differences");
            Ok(difference_variance(&data.y))
        }
        Err(e) => Err(e),
    }
}

/// Noise pre-estimate, marginal-likelihood hyperparameters, posterior-mean
/// predictor and its forward expansion.
pub fn identify(data: &Dataset, p: usize, opts: &IdentifyOptions) -> Result<Identification> {
    let noise_var = match opts.noise_var {
        Some(v) => v,
        None => noise_variance_or_fallback(data, p)?,
    };
    let evidence = Evidence::new(data, p)?;
    let start = grid_start(&evidence, &opts.bounds, noise_var);
    let opt = optimize_hyperparameters(&evidence, &start, &opts.bounds)?;
    let estimate = evidence.posterior_mean(&opt.eta)?;
    let forward = predictor_to_forward(&estimate, opts.expansion.max(p))?;
    Ok(Identification {
        estimate,
        forward,
        eta: opt.eta,
        nll: opt.nll,
        evidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_data(t: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
        let mut y = vec![0.0; t];
        for i in 0..t {
            let e: f64 = rng.sample(StandardNormal);
            y[i] = e + if i > 0 { 0.6 * y[i - 1] + u[i - 1] } else { 0.0 };
        }
        Dataset::new(u, y, Some(seed)).unwrap()
    }

    #[test]
    fn fast_and_dense_marginal_agree() {
        let data = random_data(9, 3);
        let reg = build_regressors(&data.y, &data.u, 3).unwrap();
        let ev = Evidence::from_regressors(&reg, &data.y);
        for &(c, b, s) in &[(0.5, 0.7, 0.8), (10.0, 0.3, 0.1), (1e-3, 0.95, 2.0)] {
            let eta = Hyperparameters::new(c, b, s).unwrap();
            let fast = ev.neg_log_marginal(&eta).unwrap();
            let slow = dense::neg_log_marginal(&eta, &reg, &data.y).unwrap();
            assert!((fast - slow).abs() < 1e-8 * slow.abs().max(1.0), "{fast} vs {slow}");
        }
    }

    #[test]
    fn degenerate_prior_gives_white_noise_marginal() {
        let data = random_data(20, 4);
        let eta = Hyperparameters::new(0.0, 0.5, 1.0).unwrap();
        let v = neg_log_marginal(&eta, &data, 4).unwrap();
        let yy: f64 = data.y.iter().map(|v| v * v).sum();
        assert!((v - (10.0 * LN_2PI + 0.5 * yy)).abs() < 1e-10);
        let post = posterior_moments(&eta, &data, 4).unwrap();
        assert!(post.mean_f.iter().chain(&post.mean_g).all(|&v| v == 0.0));
        assert!(post.covariance.amax() == 0.0);
    }

    #[test]
    fn two_sample_closed_form() {
        // p = 1, T = 2: A = [0, y0], B = [0, u0]
        let data = Dataset::new(vec![0.5, -1.0], vec![1.0, 2.0], None).unwrap();
        let eta = Hyperparameters::new(2.0, 0.5, 0.3).unwrap();
        let kappa = 1.0;
        let s11 = 0.3;
        let s22 = kappa * (1.0 + 0.25) + 0.3;
        let det = s11 * s22;
        let quad = 1.0 / s11 + 4.0 / s22;
        let expect = 0.5 * ((2.0 * std::f64::consts::PI).powi(2) * det).ln() + 0.5 * quad;
        let got = neg_log_marginal(&eta, &data, 1).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn posterior_mean_is_linear_in_y() {
        let data = random_data(40, 5);
        let eta = Hyperparameters::new(0.7, 0.6, 0.5).unwrap();
        let base = Evidence::new(&data, 5).unwrap().posterior_mean(&eta).unwrap();
        // doubling y also doubles the lagged-output regressors, so scale only
        // the target by rebuilding from the same regressors
        let reg = build_regressors(&data.y, &data.u, 5).unwrap();
        let y2: Vec<f64> = data.y.iter().map(|v| 2.0 * v).collect();
        let doubled = Evidence::from_regressors(&reg, &y2).posterior_mean(&eta).unwrap();
        for (a, b) in base.f.iter().chain(&base.g).zip(doubled.f.iter().chain(&doubled.g)) {
            assert!((2.0 * a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn noise_free_arx_fit_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = 120;
        let u: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
        let mut y = vec![0.0; t];
        for i in 1..t {
            y[i] = 0.5 * y[i - 1] + u[i - 1] - if i > 1 { 0.2 * u[i - 2] } else { 0.0 };
        }
        let data = Dataset::new(u, y, None).unwrap();
        assert!(estimate_noise_variance(&data, 2).unwrap() < 1e-10);
        // over-parameterized noise-free data has collinear lagged regressors
        assert!(estimate_noise_variance(&data, 4).is_err());
    }

    #[test]
    fn zero_input_is_rank_deficient() {
        let data = random_data(60, 1);
        let silent = Dataset::new(vec![0.0; 60], data.y.clone(), None).unwrap();
        assert!(matches!(
            estimate_noise_variance(&silent, 3),
            Err(Error::RankDeficient { .. })
        ));
        assert!(noise_variance_or_fallback(&silent, 3).unwrap() > 0.0);
        assert!(estimate_noise_variance(&silent, 40).is_err());
    }

    #[test]
    fn optimizer_never_worsens_start() {
        let data = random_data(150, 11);
        let ev = Evidence::new(&data, 10).unwrap();
        let start = Hyperparameters::new(1.0, 0.5, 1.0).unwrap();
        let start_v = ev.neg_log_marginal(&start).unwrap();
        let opt = optimize_hyperparameters(&ev, &start, &HyperBox::default()).unwrap();
        assert!(opt.nll <= start_v);
        let again = optimize_hyperparameters(&ev, &opt.eta, &HyperBox::default()).unwrap();
        assert!((again.nll - opt.nll).abs() < 1e-8);
    }
}
