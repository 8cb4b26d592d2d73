//! Full-Bayes stabilization.
//!
//! Two chained samplers:
//!
//! 1. a random-walk Metropolis chain on the hyperparameters, run in
//!    `(ln c, logit beta)` with proposal `N(theta, gamma H^-1)`, `H` the
//!    Hessian of the negative log target at the posterior mode;
//! 2. an independence Metropolis–Hastings chain on the stacked predictor
//!    `[f; g]` whose proposal is the mixture of the Gaussian posteriors at
//!    (thinned) hyperparameter samples and whose target is the posterior
//!    under the stability-truncated prior,
//!
//! ```text
//! p_S(f, g | y)  ~  p(y | f, g) sum_i k_i p_i(f) p_i(g) / p_i(y)
//! ```
//!
//! which vanishes whenever `A(z)` has a root on or outside the unit circle.
//! `k_i` is the truncation constant of the prior at `eta_i`.

use std::collections::HashMap;

use log::{debug, warn};
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{grid_start, optimize_hyperparameters, Evidence};
use crate::kernel::{HyperBox, Hyperparameters, TcFactor};
use crate::lti::{predictor_to_forward, ForwardModel, PredictorEstimate, DEFAULT_EXPANSION};
use crate::par::{map_indexed, Execution};
use crate::poly::{is_schur_stable, spectral_radius};
use crate::seed;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HyperPriorKind {
    /// Uniform on the box.
    #[default]
    Flat,
}

/// Prior on `(c, beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HyperPrior {
    pub kind: HyperPriorKind,
    pub bounds: HyperBox,
}

impl HyperPrior {
    pub fn flat(bounds: HyperBox) -> Self {
        Self {
            kind: HyperPriorKind::Flat,
            bounds,
        }
    }

    /// `ln p(c, beta)`; `-inf` outside the box.
    pub fn log_density(&self, scale: f64, decay: f64) -> f64 {
        if !self.bounds.contains(scale, decay) {
            return f64::NEG_INFINITY;
        }
        let b = &self.bounds;
        -((b.scale.1 - b.scale.0) * (b.decay.1 - b.decay.0)).ln()
    }
}

/// Hyperparameter posterior as a density in `theta = (ln c, logit beta)`,
/// Jacobian included so that the chain targets `p(c, beta | y)`.
#[derive(Debug, Clone, Copy)]
pub struct HyperPosterior<'a> {
    evidence: Option<&'a Evidence>,
    prior: HyperPrior,
    noise_var: f64,
}

impl<'a> HyperPosterior<'a> {
    pub fn new(evidence: &'a Evidence, prior: HyperPrior, noise_var: f64) -> Self {
        Self {
            evidence: Some(evidence),
            prior,
            noise_var,
        }
    }

    /// The prior alone, with the likelihood switched off.
    pub fn prior_only(prior: HyperPrior, noise_var: f64) -> Self {
        Self {
            evidence: None,
            prior,
            noise_var,
        }
    }

    pub fn prior(&self) -> &HyperPrior {
        &self.prior
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn eta(&self, theta: &[f64]) -> Hyperparameters {
        let (scale, decay) = HyperBox::from_unconstrained(theta);
        Hyperparameters {
            scale,
            decay,
            noise_var: self.noise_var,
        }
    }

    /// `-ln p_eta(y)` without the box; 0 when the likelihood is off.
    pub fn neg_log_likelihood(&self, theta: &[f64]) -> f64 {
        match self.evidence {
            Some(ev) => ev.neg_log_marginal(&self.eta(theta)).unwrap_or(f64::INFINITY),
            None => 0.0,
        }
    }

    /// `-ln p_eta(y) - ln |J(theta)|`: the negative log target without the
    /// box, smooth across its faces.
    pub fn neg_log_target_unbounded(&self, theta: &[f64]) -> f64 {
        self.neg_log_likelihood(theta) - HyperBox::log_jacobian(theta)
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let (scale, decay) = HyperBox::from_unconstrained(theta);
        let lp = self.prior.log_density(scale, decay);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let nll = self.neg_log_likelihood(theta);
        if !nll.is_finite() {
            return f64::NEG_INFINITY;
        }
        lp - nll + HyperBox::log_jacobian(theta)
    }
}

/// Central finite-difference Hessian with steps `1e-4 (1 + |x_i|)`,
/// symmetrized.
pub fn finite_difference_hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * (1.0 + v.abs())).collect();
    let at = |di: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, s) in di {
            y[i] += s;
        }
        f(&y)
    };
    let f0 = f(x);
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        hess[(i, i)] = (at(&[(i, h[i])]) - 2.0 * f0 + at(&[(i, -h[i])])) / (h[i] * h[i]);
        for j in 0..i {
            let v = (at(&[(i, h[i]), (j, h[j])]) - at(&[(i, h[i]), (j, -h[j])])
                - at(&[(i, -h[i]), (j, h[j])])
                + at(&[(i, -h[i]), (j, -h[j])]))
                / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    (&hess + hess.transpose()) * 0.5
}

/// Returns `h` if it is positive definite, otherwise `h` with eigenvalues
/// raised to `rel * max eigenvalue` (identity if no eigenvalue is positive).
pub fn repair_positive_definite(h: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let sym = (h + h.transpose()) * 0.5;
    if sym.iter().all(|v| v.is_finite()) && Cholesky::new(sym.clone()).is_some() {
        return sym;
    }
    if !sym.iter().all(|v| v.is_finite()) {
        warn!("non-finite Hessian; using identity");
        return DMatrix::identity(h.nrows(), h.ncols());
    }
    let eig = SymmetricEigen::new(sym);
    let top = eig.eigenvalues.max();
    if !(top > 0.0) {
        warn!("Hessian has no positive eigenvalue; using identity");
        return DMatrix::identity(h.nrows(), h.ncols());
    }
    let floor = rel * top;
    let lam = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&lam) * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// Posterior mode `eta` (flat prior: the marginal-likelihood optimum on the
/// box) and the repaired Hessian there of the chain's negative log target in
/// `theta`, i.e. `-ln p_eta(y)` plus the change-of-variables term. The latter
/// keeps `H` nonsingular when the likelihood is flat along a ridge (for
/// `p = 1` it depends on `c beta` only).
pub fn posterior_mode_and_hessian(
    evidence: &Evidence,
    prior: &HyperPrior,
    noise_var: f64,
) -> Result<(Hyperparameters, DMatrix<f64>)> {
    let start = grid_start(evidence, &prior.bounds, noise_var);
    let opt = optimize_hyperparameters(evidence, &start, &prior.bounds)?;
    let target = HyperPosterior::new(evidence, *prior, noise_var);
    let theta = HyperBox::to_unconstrained(opt.eta.scale, opt.eta.decay);
    let hess = finite_difference_hessian(|t| target.neg_log_target_unbounded(t), &theta);
    Ok((opt.eta, repair_positive_definite(&hess, 1e-6)))
}

/// Cholesky factor of `gamma H^-1`, the random-walk step covariance.
pub fn step_factor(hessian: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!("proposal scale {gamma} must be > 0")));
    }
    let inv = Cholesky::new(hessian.clone())
        .ok_or(Error::CovarianceNotPd)?
        .inverse();
    let cov = (&inv + inv.transpose()) * (0.5 * gamma);
    Ok(Cholesky::new(cov).ok_or(Error::CovarianceNotPd)?.l())
}

/// Metropolis rule: accept when `log_ratio >= 0`, otherwise with
/// probability `exp(log_ratio)`.
pub fn metropolis_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    if log_ratio.is_nan() || log_ratio == f64::NEG_INFINITY {
        return false;
    }
    let u: f64 = rng.gen();
    u.ln() < log_ratio
}

/// States after burn-in and the acceptance rate over those steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Walk {
    pub states: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
}

/// Gaussian random-walk Metropolis on `log_target` with step factor `l`.
pub fn random_walk<F, R>(
    log_target: F,
    start: &[f64],
    l: &DMatrix<f64>,
    burn_in: usize,
    n: usize,
    rng: &mut R,
) -> Result<Walk>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let d = start.len();
    let mut x = DVector::from_column_slice(start);
    let mut lx = log_target(x.as_slice());
    if !lx.is_finite() {
        return Err(Error::Domain("random walk starts outside the target support".into()));
    }
    let mut states = Vec::with_capacity(n);
    let mut accepted = 0usize;
    for step in 0..burn_in + n {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cand = &x + l * z;
        let lc = log_target(cand.as_slice());
        if metropolis_accept(lc - lx, rng) {
            x = cand;
            lx = lc;
            if step >= burn_in {
                accepted += 1;
            }
        }
        if step >= burn_in {
            states.push(x.as_slice().to_vec());
        }
    }
    Ok(Walk {
        states,
        acceptance_rate: if n > 0 { accepted as f64 / n as f64 } else { 0.0 },
    })
}

/// Post-burn-in hyperparameter samples and the proposal they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperChain {
    pub samples: Vec<Hyperparameters>,
    pub mode: Hyperparameters,
    /// Hessian in `(ln c, logit beta)` at the mode.
    pub hessian: DMatrix<f64>,
    pub acceptance_rate: f64,
    pub burn_in: usize,
    pub gamma: f64,
}

impl HyperChain {
    /// Samples in `(ln c, logit beta)`.
    pub fn unconstrained(&self) -> Vec<[f64; 2]> {
        self.samples
            .iter()
            .map(|e| HyperBox::to_unconstrained(e.scale, e.decay))
            .collect()
    }
}

/// Random-walk chain started at the mode.
pub fn sample_hyperposterior(
    target: &HyperPosterior<'_>,
    mode: &Hyperparameters,
    hessian: &DMatrix<f64>,
    n: usize,
    burn_in: usize,
    gamma: f64,
    seed: u64,
) -> Result<HyperChain> {
    if n == 0 {
        return Err(Error::Domain("hyperparameter chain needs N >= 1".into()));
    }
    let l = step_factor(hessian, gamma)?;
    let start = HyperBox::to_unconstrained(mode.scale, mode.decay);
    let mut rng = seed::stream(seed, 0);
    let walk = random_walk(|t| target.log_density(t), &start, &l, burn_in, n, &mut rng)?;
    debug!(
        "hyper chain: gamma={gamma:.3} acceptance={:.3}",
        walk.acceptance_rate
    );
    Ok(HyperChain {
        samples: walk.states.iter().map(|t| target.eta(t)).collect(),
        mode: *mode,
        hessian: hessian.clone(),
        acceptance_rate: walk.acceptance_rate,
        burn_in,
        gamma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneOptions {
    pub initial_gamma: f64,
    pub pilot_steps: usize,
    pub max_pilots: usize,
    pub target: (f64, f64),
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            initial_gamma: 1.0,
            pilot_steps: 500,
            max_pilots: 12,
            target: (0.2, 0.4),
        }
    }
}

/// Pilot-chain search for `gamma`: doubles while acceptance is too high,
/// halves while too low and bisects geometrically once both sides are
/// bracketed. Returns the first `gamma` whose pilot lands in the target band,
/// or the closest one seen when the pilot budget runs out.
pub fn tune_gamma_with<F>(
    log_target: F,
    start: &[f64],
    hessian: &DMatrix<f64>,
    opts: &TuneOptions,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let (lo_acc, hi_acc) = opts.target;
    let mut gamma = opts.initial_gamma;
    let mut too_high: Option<f64> = None;
    let mut too_low: Option<f64> = None;
    let mut best = (f64::INFINITY, gamma);
    for pilot in 0..opts.max_pilots {
        let l = step_factor(hessian, gamma)?;
        let mut rng = seed::stream(seed, pilot as u64);
        let acc = random_walk(&log_target, start, &l, 0, opts.pilot_steps, &mut rng)?.acceptance_rate;
        debug!("pilot {pilot}: gamma={gamma:.4} acceptance={acc:.3}");
        let dist = (lo_acc - acc).max(acc - hi_acc).max(0.0);
        if dist < best.0 {
            best = (dist, gamma);
        }
        if dist == 0.0 {
            return Ok(gamma);
        }
        if acc > hi_acc {
            too_high = Some(gamma);
        } else {
            too_low = Some(gamma);
        }
        gamma = match (too_high, too_low) {
            (Some(a), Some(b)) => (a * b).sqrt(),
            (Some(_), None) => gamma * 2.0,
            _ => gamma / 2.0,
        };
    }
    warn!(
        "gamma tuning hit {} pilots; using gamma={:.4}",
        opts.max_pilots, best.1
    );
    Ok(best.1)
}

pub fn tune_gamma(
    target: &HyperPosterior<'_>,
    mode: &Hyperparameters,
    hessian: &DMatrix<f64>,
    opts: &TuneOptions,
    seed: u64,
) -> Result<f64> {
    let start = HyperBox::to_unconstrained(mode.scale, mode.decay);
    tune_gamma_with(|t| target.log_density(t), &start, hessian, opts, seed)
}

/// How the truncation constant `k_eta` enters the stable posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaPolicy {
    /// Monte Carlo stable fraction of the prior, per component.
    #[default]
    Estimate,
    /// `k = 1` for every component.
    Unit,
}

impl std::str::FromStr for KappaPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "estimate" => Ok(Self::Estimate),
            "unit" => Ok(Self::Unit),
            other => Err(Error::Config(format!(
                "unknown kappa policy '{other}' (expected estimate or unit)"
            ))),
        }
    }
}

/// `M / #{stable draws}` for `M` draws `f ~ N(0, K_eta)`; `+inf` when no
/// draw is stable.
pub fn estimate_truncation_constant(eta: &Hyperparameters, p: usize, m: usize, seed: u64) -> Result<f64> {
    if m < 100 {
        return Err(Error::Domain(format!("truncation estimate needs M >= 100, got {m}")));
    }
    if p == 0 {
        return Err(Error::Dimension("truncation estimate needs p >= 1".into()));
    }
    let factor = TcFactor::new(eta.scale, eta.decay, p);
    let mut rng = seed::stream(seed, 0);
    let mut z = vec![0.0; p];
    let mut f = vec![0.0; p];
    let mut stable = 0usize;
    for _ in 0..m {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        factor.apply(&z, &mut f);
        if is_schur_stable(&f) {
            stable += 1;
        }
    }
    Ok(if stable == 0 {
        f64::INFINITY
    } else {
        m as f64 / stable as f64
    })
}

/// Truncation constants on a quantized `(ln c, logit beta)` grid.
///
/// Each cell is evaluated at its center with a seed derived from the cell
/// index, so a value never depends on which samples requested it or in
/// which order.
#[derive(Debug, Clone)]
pub struct KappaCache {
    p: usize,
    draws: usize,
    step: f64,
    seed: u64,
    values: HashMap<(i64, i64), f64>,
}

impl KappaCache {
    pub fn new(p: usize, draws: usize, step: f64, seed: u64) -> Self {
        Self {
            p,
            draws,
            step,
            seed,
            values: HashMap::new(),
        }
    }

    fn key(&self, eta: &Hyperparameters) -> (i64, i64) {
        let t = HyperBox::to_unconstrained(eta.scale, eta.decay);
        ((t[0] / self.step).round() as i64, (t[1] / self.step).round() as i64)
    }

    fn eval_cell(&self, key: (i64, i64)) -> Result<f64> {
        let theta = [key.0 as f64 * self.step, key.1 as f64 * self.step];
        let (scale, decay) = HyperBox::from_unconstrained(&theta);
        let eta = Hyperparameters {
            scale,
            decay,
            noise_var: 1.0,
        };
        let cell = ((key.0 as u64) << 32) ^ (key.1 as u32 as u64);
        estimate_truncation_constant(&eta, self.p, self.draws, seed::derive(self.seed, cell))
    }

    /// Evaluates every missing cell touched by `etas`.
    pub fn fill(&mut self, etas: &[Hyperparameters], exec: Execution) -> Result<()> {
        let mut missing: Vec<(i64, i64)> = etas
            .iter()
            .map(|e| self.key(e))
            .filter(|k| !self.values.contains_key(k))
            .collect();
        missing.sort_unstable();
        missing.dedup();
        let vals = map_indexed(missing.len(), exec, |i| self.eval_cell(missing[i]));
        for (k, v) in missing.into_iter().zip(vals) {
            self.values.insert(k, v?);
        }
        Ok(())
    }

    pub fn get(&mut self, eta: &Hyperparameters) -> Result<f64> {
        let key = self.key(eta);
        if let Some(&v) = self.values.get(&key) {
            return Ok(v);
        }
        let v = self.eval_cell(key)?;
        self.values.insert(key, v);
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Lower Cholesky factor of `cov`; if the factorization fails the
/// eigenvalues are floored at `1e-12 trace` first. The flag reports whether
/// the floor was applied.
pub fn gaussian_factor(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let sym = (cov + cov.transpose()) * 0.5;
    if !sym.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("non-finite covariance".into()));
    }
    if let Some(ch) = Cholesky::new(sym.clone()) {
        return Ok((ch.l(), false));
    }
    let floor = (1e-12 * sym.trace()).max(f64::MIN_POSITIVE);
    let eig = SymmetricEigen::new(sym);
    let lam = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let rebuilt = v * DMatrix::from_diagonal(&lam) * v.transpose();
    let rebuilt = (&rebuilt + rebuilt.transpose()) * 0.5;
    let ch = Cholesky::new(rebuilt).ok_or(Error::CovarianceNotPd)?;
    Ok((ch.l(), true))
}

/// One Gaussian `N(mean, L L^T)` of the proposal mixture, together with
/// the per-`eta` quantities the stable posterior needs.
#[derive(Debug, Clone)]
pub struct MixtureComponent {
    pub eta: Hyperparameters,
    pub mean: DVector<f64>,
    /// Lower Cholesky factor of the (possibly floored) covariance.
    pub factor: DMatrix<f64>,
    pub floored: bool,
    /// `-ln p_eta(y)`.
    pub nll: f64,
    /// Truncation constant `k_eta >= 1`.
    pub kappa: f64,
    log_norm: f64,
    prior: TcFactor,
}

impl MixtureComponent {
    pub fn new(eta: Hyperparameters, mean: DVector<f64>, cov: &DMatrix<f64>, nll: f64, kappa: f64) -> Result<Self> {
        let n = mean.len();
        if n % 2 != 0 || cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Dimension(format!(
                "component mean of length {n} with {}x{} covariance",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let (factor, floored) = gaussian_factor(cov)?;
        let log_det_half: f64 = (0..n).map(|i| factor[(i, i)].ln()).sum();
        Ok(Self {
            prior: TcFactor::new(eta.scale, eta.decay, n / 2),
            log_norm: -0.5 * n as f64 * LN_2PI - log_det_half,
            eta,
            mean,
            factor,
            floored,
            nll,
            kappa,
        })
    }

    /// Conditional posterior at `eta` computed from the data.
    pub fn from_evidence(evidence: &Evidence, eta: &Hyperparameters, kappa: f64) -> Result<Self> {
        let mom = evidence.posterior_moments(eta)?;
        let nll = evidence.neg_log_marginal(eta)?;
        Self::new(*eta, mom.stacked_mean(), &mom.covariance, nll, kappa)
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        match self.factor.solve_lower_triangular(&diff) {
            Some(w) => self.log_norm - 0.5 * w.norm_squared(),
            None => f64::NEG_INFINITY,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * z
    }

    /// `ln N(v; 0, K_eta)` for one half of the predictor.
    fn log_prior(&self, v: &[f64]) -> f64 {
        let (quad, logdet) = self.prior.quad_inv_and_logdet(v);
        -0.5 * (v.len() as f64 * LN_2PI + logdet + quad)
    }
}

/// Equal-weight mixture of conditional posteriors.
#[derive(Debug, Clone)]
pub struct ProposalMixture {
    components: Vec<MixtureComponent>,
    noise_var: f64,
    /// Components discarded because no prior draw was stable.
    pub dropped: usize,
}

impl ProposalMixture {
    /// Drops components with infinite `kappa`; fails if none remain.
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let total = components.len();
        let kept: Vec<MixtureComponent> = components.into_iter().filter(|c| c.kappa.is_finite()).collect();
        if kept.is_empty() {
            return Err(Error::StableRegionUnreachable { attempts: 0 });
        }
        let p2 = kept[0].mean.len();
        if kept.iter().any(|c| c.mean.len() != p2) {
            return Err(Error::Dimension("mixture components differ in dimension".into()));
        }
        Ok(Self {
            noise_var: kept[0].eta.noise_var,
            dropped: total - kept.len(),
            components: kept,
        })
    }

    /// Builds one component per `eta` (in parallel), with `kappa` per the
    /// policy.
    pub fn build(
        evidence: &Evidence,
        etas: &[Hyperparameters],
        policy: KappaPolicy,
        kappa_draws: usize,
        kappa_grid: f64,
        seed: u64,
        exec: Execution,
    ) -> Result<Self> {
        let kappas: Vec<f64> = match policy {
            KappaPolicy::Unit => vec![1.0; etas.len()],
            KappaPolicy::Estimate => {
                let mut cache = KappaCache::new(evidence.p(), kappa_draws, kappa_grid, seed);
                cache.fill(etas, exec)?;
                etas.iter().map(|e| cache.get(e)).collect::<Result<_>>()?
            }
        };
        let comps = map_indexed(etas.len(), exec, |i| {
            MixtureComponent::from_evidence(evidence, &etas[i], kappas[i])
        });
        Self::new(comps.into_iter().collect::<Result<_>>()?)
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Dimension of the stacked predictor, `2p`.
    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        log_sum_exp(self.components.iter().map(|c| c.log_density(x))) - (self.len() as f64).ln()
    }

    /// Uniform component choice, then a draw from it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let i = rng.gen_range(0..self.len());
        self.components[i].sample(rng)
    }

    /// Unnormalized `ln p_S(f, g | y)`; `-inf` when `f` is not Schur stable.
    pub fn log_stable_posterior(&self, evidence: &Evidence, x: &DVector<f64>) -> f64 {
        let p = self.dim() / 2;
        let (f, g) = x.as_slice().split_at(p);
        if !is_schur_stable(f) {
            return f64::NEG_INFINITY;
        }
        let ll = evidence.log_likelihood(x.as_slice(), self.noise_var);
        let terms = self
            .components
            .iter()
            .map(|c| c.kappa.ln() + c.log_prior(f) + c.log_prior(g) + c.nll);
        ll + log_sum_exp(terms) - (self.len() as f64).ln()
    }
}

fn stack(est: &PredictorEstimate) -> DVector<f64> {
    DVector::from_iterator(2 * est.p(), est.f.iter().chain(&est.g).copied())
}

fn unstack(x: &DVector<f64>) -> PredictorEstimate {
    let p = x.len() / 2;
    PredictorEstimate {
        f: x.as_slice()[..p].to_vec(),
        g: x.as_slice()[p..].to_vec(),
    }
}

pub fn eval_proposal_density(est: &PredictorEstimate, mixture: &ProposalMixture) -> f64 {
    mixture.log_density(&stack(est)).exp()
}

pub fn sample_proposal(mixture: &ProposalMixture, seed: u64) -> PredictorEstimate {
    unstack(&mixture.sample(&mut seed::stream(seed, 0)))
}

/// `exp` of [`ProposalMixture::log_stable_posterior`]; underflows to 0 for
/// realistic data sizes, where the log form should be used.
pub fn eval_stable_posterior(est: &PredictorEstimate, mixture: &ProposalMixture, evidence: &Evidence) -> f64 {
    mixture.log_stable_posterior(evidence, &stack(est)).exp()
}

/// Samples of the stable posterior with their unnormalized log densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableChain {
    pub samples: Vec<PredictorEstimate>,
    pub log_ps: Vec<f64>,
    pub acceptance_rate: f64,
    /// Proposal draws needed to find a stable initial state (0 if the given
    /// start was stable).
    pub init_attempts: usize,
}

impl StableChain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Independence Metropolis–Hastings chain of length `n` with the mixture as
/// proposal. `start` is replaced by proposal draws while unstable, at most
/// `max_init` times.
pub fn sample_stable_posterior(
    evidence: &Evidence,
    mixture: &ProposalMixture,
    start: &PredictorEstimate,
    n: usize,
    max_init: usize,
    seed: u64,
) -> Result<StableChain> {
    if start.p() * 2 != mixture.dim() {
        return Err(Error::Dimension(format!(
            "start of order {} for a mixture of dimension {}",
            start.p(),
            mixture.dim()
        )));
    }
    let mut rng = seed::stream(seed, 0);
    let mut x = stack(start);
    let mut lp = mixture.log_stable_posterior(evidence, &x);
    let mut attempts = 0;
    while !lp.is_finite() {
        if attempts >= max_init {
            return Err(Error::StableRegionUnreachable { attempts });
        }
        attempts += 1;
        x = mixture.sample(&mut rng);
        lp = mixture.log_stable_posterior(evidence, &x);
    }
    let mut lq = mixture.log_density(&x);
    let mut samples = Vec::with_capacity(n);
    let mut log_ps = Vec::with_capacity(n);
    let mut accepted = 0usize;
    let mut current = unstack(&x);
    for _ in 0..n {
        let cand = mixture.sample(&mut rng);
        let lp_c = mixture.log_stable_posterior(evidence, &cand);
        if lp_c.is_finite() {
            let lq_c = mixture.log_density(&cand);
            if metropolis_accept((lp_c - lq_c) - (lp - lq), &mut rng) {
                x = cand;
                lp = lp_c;
                lq = lq_c;
                current = unstack(&x);
                accepted += 1;
            }
        }
        samples.push(current.clone());
        log_ps.push(lp);
    }
    Ok(StableChain {
        samples,
        log_ps,
        acceptance_rate: if n > 0 { accepted as f64 / n as f64 } else { 0.0 },
        init_attempts: attempts,
    })
}

/// Term-wise average of the samples' forward expansions. The dominant pole
/// of the average is the largest among the samples' dominant poles.
pub fn mcmc_posterior_mean(chain: &StableChain, len: usize) -> Result<ForwardModel> {
    if chain.is_empty() {
        return Err(Error::Domain("empty stable chain".into()));
    }
    let mut p_ir = vec![0.0; len];
    let mut h_ir = vec![0.0; len];
    let mut rho = 0.0_f64;
    let mut prev: Option<(&PredictorEstimate, ForwardModel)> = None;
    for s in &chain.samples {
        let fwd = match &prev {
            Some((ps, m)) if *ps == s => m.clone(),
            _ => predictor_to_forward(s, len)?,
        };
        for k in 0..len {
            p_ir[k] += fwd.p_ir[k];
            h_ir[k] += fwd.h_ir[k];
        }
        rho = rho.max(fwd.spectral_radius);
        prev = Some((s, fwd));
    }
    let n = chain.len() as f64;
    p_ir.iter_mut().for_each(|v| *v /= n);
    h_ir.iter_mut().for_each(|v| *v /= n);
    Ok(ForwardModel {
        p_ir,
        h_ir,
        spectral_radius: rho,
    })
}

/// Sample with the largest recorded `log_ps`, earliest on ties, and its
/// index.
pub fn mcmc_map(chain: &StableChain) -> Result<(usize, PredictorEstimate)> {
    let mut best: Option<usize> = None;
    for (i, &v) in chain.log_ps.iter().enumerate() {
        if best.map_or(true, |b| v > chain.log_ps[b]) {
            best = Some(i);
        }
    }
    let i = best.ok_or_else(|| Error::Domain("empty stable chain".into()))?;
    Ok((i, chain.samples[i].clone()))
}

/// Effective sample size from Geyer's initial monotone sequence of
/// autocorrelation pair sums, clamped to `[1, n]`.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0 = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(c0 > 0.0) {
        return 1.0;
    }
    let rho = |k: usize| c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * c0);
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = (rho(2 * m) + rho(2 * m + 1)).min(prev);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        prev = pair;
        m += 1;
    }
    (n as f64 / tau.max(1e-12)).clamp(1.0, n as f64)
}

/// Uniform thinning to at most `k` elements.
pub fn thin<T: Clone>(xs: &[T], k: usize) -> Vec<T> {
    let n = xs.len();
    if k == 0 || n <= k {
        return xs.to_vec();
    }
    (0..k).map(|i| xs[i * n / k].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcOptions {
    pub burn_in: usize,
    pub hyper_samples: usize,
    /// Mixture components kept after thinning the hyperparameter chain.
    pub components: usize,
    pub stable_samples: usize,
    pub kappa_policy: KappaPolicy,
    pub kappa_draws: usize,
    /// Cell width of the truncation-constant cache in `(ln c, logit beta)`.
    pub kappa_grid: f64,
    /// Fixed random-walk scale; tuned by pilot chains when absent.
    pub gamma: Option<f64>,
    pub tune: TuneOptions,
    pub max_init_attempts: usize,
    pub expansion: usize,
}

impl Default for McmcOptions {
    fn default() -> Self {
        Self {
            burn_in: 2000,
            hyper_samples: 2000,
            components: 200,
            stable_samples: 2000,
            kappa_policy: KappaPolicy::Estimate,
            kappa_draws: 2000,
            kappa_grid: 0.01,
            gamma: None,
            tune: TuneOptions::default(),
            max_init_attempts: 10_000,
            expansion: DEFAULT_EXPANSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub gamma: f64,
    pub hyper_acceptance: f64,
    /// ESS of `ln c` and `logit beta`.
    pub hyper_ess: [f64; 2],
    pub stable_acceptance: f64,
    pub stable_ess_log_ps: f64,
    pub components: usize,
    pub dropped_components: usize,
    pub floored_components: usize,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub init_attempts: usize,
}

#[derive(Debug, Clone)]
pub struct McmcOutcome {
    pub hyper: HyperChain,
    pub stable: StableChain,
    pub posterior_mean: ForwardModel,
    pub map_index: usize,
    pub map: PredictorEstimate,
    pub map_forward: ForwardModel,
    pub diagnostics: ChainDiagnostics,
}

/// Whole full-Bayes pipeline: mode and Hessian, pilot tuning, hyperparameter
/// chain, mixture construction, stable chain and both point estimates.
pub fn stabilize_mcmc(
    evidence: &Evidence,
    noise_var: f64,
    prior: &HyperPrior,
    opts: &McmcOptions,
    seed: u64,
    exec: Execution,
) -> Result<McmcOutcome> {
    let target = HyperPosterior::new(evidence, *prior, noise_var);
    let (mode, hessian) = posterior_mode_and_hessian(evidence, prior, noise_var)?;
    let gamma = match opts.gamma {
        Some(g) => g,
        None => tune_gamma(&target, &mode, &hessian, &opts.tune, seed::derive(seed, 0))?,
    };
    let hyper = sample_hyperposterior(
        &target,
        &mode,
        &hessian,
        opts.hyper_samples,
        opts.burn_in,
        gamma,
        seed::derive(seed, 1),
    )?;
    let etas = thin(&hyper.samples, opts.components);
    let mixture = ProposalMixture::build(
        evidence,
        &etas,
        opts.kappa_policy,
        opts.kappa_draws,
        opts.kappa_grid,
        seed::derive(seed, 2),
        exec,
    )?;
    let start = evidence.posterior_mean(&mode)?;
    let stable = sample_stable_posterior(
        evidence,
        &mixture,
        &start,
        opts.stable_samples,
        opts.max_init_attempts,
        seed::derive(seed, 3),
    )?;
    let posterior_mean = mcmc_posterior_mean(&stable, opts.expansion)?;
    let (map_index, map) = mcmc_map(&stable)?;
    let map_forward = predictor_to_forward(&map, opts.expansion)?;
    // the root finder, not only the step-down test, must agree on stability
    let map_rho = spectral_radius(&map.f)?;
    if !(map_rho < 1.0) || !(posterior_mean.spectral_radius < 1.0) {
        return Err(Error::StableRegionUnreachable { attempts: stable.len() });
    }

    let theta = hyper.unconstrained();
    let kappas = mixture.components().iter().map(|c| c.kappa);
    let diagnostics = ChainDiagnostics {
        gamma,
        hyper_acceptance: hyper.acceptance_rate,
        hyper_ess: [
            effective_sample_size(&theta.iter().map(|t| t[0]).collect::<Vec<_>>()),
            effective_sample_size(&theta.iter().map(|t| t[1]).collect::<Vec<_>>()),
        ],
        stable_acceptance: stable.acceptance_rate,
        stable_ess_log_ps: effective_sample_size(&stable.log_ps),
        components: mixture.len(),
        dropped_components: mixture.dropped,
        floored_components: mixture.components().iter().filter(|c| c.floored).count(),
        kappa_min: kappas.clone().fold(f64::INFINITY, f64::min),
        kappa_max: kappas.fold(0.0, f64::max),
        init_attempts: stable.init_attempts,
    };
    Ok(McmcOutcome {
        hyper,
        stable,
        posterior_mean,
        map_index,
        map,
        map_forward,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eta(scale: f64, decay: f64) -> Hyperparameters {
        Hyperparameters {
            scale,
            decay,
            noise_var: 1.0,
        }
    }

    fn gaussian_pdf(x: f64, m: f64, v: f64) -> f64 {
        (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
    }

    #[test]
    fn hessian_of_quadratic() {
        let q = DMatrix::from_row_slice(2, 2, &[3.0, 0.7, 0.7, 1.5]);
        let f = |x: &[f64]| {
            let v = DVector::from_column_slice(x);
            0.5 * (v.transpose() * &q * &v)[(0, 0)]
        };
        let h = finite_difference_hessian(f, &[0.3, -1.2]);
        assert!((h - q).abs().max() < 1e-4);
    }

    #[test]
    fn repair_yields_positive_definite() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -1.0]);
        let r = repair_positive_definite(&h, 1e-6);
        let eig = SymmetricEigen::new(r).eigenvalues;
        assert!(eig.min() > 0.0);
        assert!((eig.max() - 2.0).abs() < 1e-12);
        let pd = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(repair_positive_definite(&pd, 1e-6), pd);
    }

    #[test]
    fn uphill_moves_always_accepted() {
        let mut rng = seed::stream(3, 0);
        for _ in 0..1000 {
            assert!(metropolis_accept(0.0, &mut rng));
            assert!(metropolis_accept(1e-9, &mut rng));
        }
        assert!(!metropolis_accept(f64::NEG_INFINITY, &mut rng));
    }

    #[test]
    fn prior_only_chain_matches_box_center() {
        let prior = HyperPrior::default();
        let target = HyperPosterior::prior_only(prior, 1.0);
        let start = HyperBox::to_unconstrained(5000.0, 0.5);
        let l = DMatrix::identity(2, 2) * 1.5;
        let mut rng = seed::stream(11, 0);
        let walk = random_walk(|t| target.log_density(t), &start, &l, 1000, 5000, &mut rng).unwrap();
        let (cc, bc) = prior.bounds.center();
        let check = |vals: Vec<f64>, center: f64| {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let se = sd / effective_sample_size(&vals).sqrt();
            assert!((mean - center).abs() < 3.0 * se, "mean {mean} center {center} se {se}");
        };
        check(walk.states.iter().map(|t| t[0].exp()).collect(), cc);
        check(
            walk.states.iter().map(|t| 1.0 / (1.0 + (-t[1]).exp())).collect(),
            bc,
        );
    }

    #[test]
    fn tuning_reaches_band_on_gaussian_target() {
        let target = |x: &[f64]| -0.5 * (x[0] * x[0] + 4.0 * x[1] * x[1]);
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]);
        let opts = TuneOptions {
            initial_gamma: 0.01,
            ..Default::default()
        };
        let gamma = tune_gamma_with(target, &[0.0, 0.0], &h, &opts, 5).unwrap();
        let l = step_factor(&h, gamma).unwrap();
        let acc = random_walk(target, &[0.0, 0.0], &l, 0, 5000, &mut seed::stream(9, 0))
            .unwrap()
            .acceptance_rate;
        assert!((0.17..=0.43).contains(&acc), "gamma {gamma} acceptance {acc}");
    }

    #[test]
    fn tuned_gamma_kept_when_already_in_band() {
        let target = |x: &[f64]| -0.5 * x[0] * x[0];
        let h = DMatrix::identity(1, 1);
        // step sd 4 on N(0, 1): acceptance (2 / pi) atan(2 / 4) ~ 0.30
        let opts = TuneOptions {
            initial_gamma: 16.0,
            max_pilots: 1,
            ..Default::default()
        };
        assert_eq!(tune_gamma_with(target, &[0.0], &h, &opts, 1).unwrap(), 16.0);
    }

    #[test]
    fn kappa_scalar_gaussian() {
        // K = c beta = 1 for p = 1: stable mass is P(|f| < 1) = 0.6827
        let k = estimate_truncation_constant(&eta(2.0, 0.5), 1, 40_000, 1).unwrap();
        assert!((k - 1.0 / 0.682_689_492).abs() < 0.02, "{k}");
    }

    #[test]
    fn kappa_near_degenerate_prior_is_one() {
        let k = estimate_truncation_constant(&eta(1e-8, 0.5), 30, 500, 2).unwrap();
        assert_eq!(k, 1.0);
        for seed in 0..5 {
            assert!(estimate_truncation_constant(&eta(3.0, 0.9), 4, 200, seed).unwrap() >= 1.0);
        }
        assert!(estimate_truncation_constant(&eta(1.0, 0.5), 1, 50, 0).is_err());
    }

    #[test]
    fn kappa_cache_is_order_independent() {
        let etas = [eta(1.0, 0.5), eta(2.0, 0.7), eta(1.0, 0.5)];
        let mut a = KappaCache::new(3, 300, 0.01, 4);
        a.fill(&etas, Execution::Parallel).unwrap();
        let mut b = KappaCache::new(3, 300, 0.01, 4);
        let vb: Vec<f64> = etas.iter().rev().map(|e| b.get(e).unwrap()).collect();
        let va: Vec<f64> = etas.iter().rev().map(|e| a.get(e).unwrap()).collect();
        assert_eq!(va, vb);
        assert_eq!(a.len(), 2);
    }

    fn scalar_component(mf: f64, mg: f64, vf: f64, vg: f64) -> MixtureComponent {
        let cov = DMatrix::from_row_slice(2, 2, &[vf, 0.0, 0.0, vg]);
        MixtureComponent::new(eta(1.0, 0.5), DVector::from_vec(vec![mf, mg]), &cov, 0.0, 1.0).unwrap()
    }

    #[test]
    fn single_component_is_its_gaussian() {
        let mix = ProposalMixture::new(vec![scalar_component(0.2, -0.4, 0.3, 0.5)]).unwrap();
        let est = PredictorEstimate::new(vec![0.5], vec![0.1]).unwrap();
        let expect = gaussian_pdf(0.5, 0.2, 0.3) * gaussian_pdf(0.1, -0.4, 0.5);
        assert!((eval_proposal_density(&est, &mix) - expect).abs() < 1e-14);
        let at_mean = eval_proposal_density(&PredictorEstimate::new(vec![0.2], vec![-0.4]).unwrap(), &mix);
        let far = eval_proposal_density(
            &PredictorEstimate::new(vec![0.2 + 5.0 * 0.3f64.sqrt()], vec![-0.4]).unwrap(),
            &mix,
        );
        assert!(at_mean >= far);
    }

    #[test]
    fn mixture_integrates_to_one() {
        let mix = ProposalMixture::new(vec![
            scalar_component(0.2, -0.4, 0.3, 0.5),
            scalar_component(-1.0, 0.7, 0.1, 0.2),
        ])
        .unwrap();
        let h = 0.02;
        let mut total = 0.0;
        for i in 0..500 {
            for j in 0..500 {
                let x = DVector::from_vec(vec![-5.0 + h * i as f64, -5.0 + h * j as f64]);
                total += mix.log_density(&x).exp() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn identical_components_sample_their_moments() {
        let cov = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.3]);
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let comps = (0..3)
            .map(|_| MixtureComponent::new(eta(1.0, 0.5), mean.clone(), &cov, 0.0, 1.0).unwrap())
            .collect();
        let mix = ProposalMixture::new(comps).unwrap();
        let mut rng = seed::stream(1, 0);
        let n = 10_000;
        let xs: Vec<DVector<f64>> = (0..n).map(|_| mix.sample(&mut rng)).collect();
        let m = xs.iter().fold(DVector::zeros(2), |a, x| a + x) / n as f64;
        let c = xs
            .iter()
            .fold(DMatrix::zeros(2, 2), |a, x| a + (x - &m) * (x - &m).transpose())
            / (n - 1) as f64;
        assert!((m - mean).abs().max() < 0.03);
        assert!((c - cov).abs().max() < 0.03);
        assert_eq!(sample_proposal(&mix, 8), sample_proposal(&mix, 8));
    }

    #[test]
    fn singular_component_is_floored() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let c = MixtureComponent::new(eta(1.0, 0.5), DVector::zeros(2), &cov, 0.0, 1.0).unwrap();
        assert!(c.floored);
        assert!(c.log_density(&DVector::zeros(2)).is_finite());
    }

    #[test]
    fn infinite_kappa_components_dropped() {
        let mut bad = scalar_component(0.0, 0.0, 1.0, 1.0);
        bad.kappa = f64::INFINITY;
        let mix = ProposalMixture::new(vec![bad.clone(), scalar_component(0.0, 0.0, 1.0, 1.0)]).unwrap();
        assert_eq!((mix.len(), mix.dropped), (1, 1));
        assert!(matches!(
            ProposalMixture::new(vec![bad]),
            Err(Error::StableRegionUnreachable { .. })
        ));
    }

    fn chain(samples: Vec<PredictorEstimate>, log_ps: Vec<f64>) -> StableChain {
        StableChain {
            samples,
            log_ps,
            acceptance_rate: 1.0,
            init_attempts: 0,
        }
    }

    #[test]
    fn posterior_mean_averages_termwise() {
        let a = PredictorEstimate::new(vec![0.5], vec![1.0]).unwrap();
        let b = PredictorEstimate::new(vec![-0.5], vec![1.0]).unwrap();
        let single = mcmc_posterior_mean(&chain(vec![a.clone()], vec![0.0]), 50).unwrap();
        assert_eq!(single, predictor_to_forward(&a, 50).unwrap());
        let both = mcmc_posterior_mean(&chain(vec![a.clone(), b.clone()], vec![0.0, 0.0]), 50).unwrap();
        assert!(both.p_ir[2].abs() < 1e-15);
        assert_eq!(both.h_ir[0], 1.0);
        assert!((both.spectral_radius - 0.5).abs() < 1e-12);
    }

    #[test]
    fn map_picks_first_maximum() {
        let s: Vec<PredictorEstimate> = (0..4)
            .map(|i| PredictorEstimate::new(vec![0.1 * i as f64], vec![0.0]).unwrap())
            .collect();
        let (i, m) = mcmc_map(&chain(s.clone(), vec![-3.0, 2.0, 2.0, -1.0])).unwrap();
        assert_eq!(i, 1);
        assert_eq!(m, s[1]);
        assert!(mcmc_map(&chain(vec![], vec![])).is_err());
    }

    #[test]
    fn ess_reflects_autocorrelation() {
        let mut rng = seed::stream(2, 0);
        let iid: Vec<f64> = (0..4000).map(|_| rng.sample(StandardNormal)).collect();
        let ess_iid = effective_sample_size(&iid);
        assert!(ess_iid > 3000.0, "{ess_iid}");
        let mut ar = vec![0.0; 4000];
        for i in 1..ar.len() {
            ar[i] = 0.9 * ar[i - 1] + iid[i];
        }
        // AR(1) with phi = 0.9: n (1 - phi) / (1 + phi) ~ 210
        let ess_ar = effective_sample_size(&ar);
        assert!(ess_ar > 100.0 && ess_ar < 400.0, "{ess_ar}");
        assert_eq!(effective_sample_size(&[1.0; 50]), 1.0);
    }

    #[test]
    fn thinning_is_uniform() {
        let xs: Vec<usize> = (0..2000).collect();
        let t = thin(&xs, 200);
        assert_eq!(t.len(), 200);
        assert!(t.windows(2).all(|w| w[1] - w[0] == 10));
        assert_eq!(thin(&xs[..5], 200).len(), 5);
    }
}
