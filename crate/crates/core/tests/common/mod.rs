#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use stabid::evidence::{Dataset, Evidence};
use stabid::kernel::HyperBox;
use stabid::mcmc::{
    posterior_mode_and_hessian, sample_hyperposterior, sample_stable_posterior, thin, tune_gamma,
    HyperChain, HyperPosterior, HyperPrior, KappaPolicy, ProposalMixture, StableChain, TuneOptions,
};
use stabid::par::Execution;

pub const TOY_NOISE_VAR: f64 = 0.5;

/// p = 1, T = 3 instance whose unconstrained posterior puts visible mass on
/// |f| >= 1.
pub fn toy_data() -> Dataset {
    Dataset::new(vec![0.3, -0.2, 0.1], vec![1.0, 1.5, 2.2], None).unwrap()
}

pub struct ToyRun {
    pub evidence: Evidence,
    pub hyper: HyperChain,
    pub mixture: ProposalMixture,
    pub stable: StableChain,
}

pub fn run_toy(seed: u64, stable_samples: usize) -> ToyRun {
    let data = toy_data();
    let evidence = Evidence::new(&data, 1).unwrap();
    let prior = HyperPrior::flat(HyperBox::default());
    let (mode, hess) = posterior_mode_and_hessian(&evidence, &prior, TOY_NOISE_VAR).unwrap();
    let target = HyperPosterior::new(&evidence, prior, TOY_NOISE_VAR);
    let gamma = tune_gamma(&target, &mode, &hess, &TuneOptions::default(), seed).unwrap();
    let hyper = sample_hyperposterior(&target, &mode, &hess, 2000, 2000, gamma, seed + 1).unwrap();
    let etas = thin(&hyper.samples, 200);
    let mixture = ProposalMixture::build(
        &evidence,
        &etas,
        KappaPolicy::Estimate,
        2000,
        0.01,
        seed + 2,
        Execution::Parallel,
    )
    .unwrap();
    let start = evidence.posterior_mean(&mode).unwrap();
    let stable = sample_stable_posterior(&evidence, &mixture, &start, stable_samples, 10_000, seed + 3).unwrap();
    ToyRun {
        evidence,
        hyper,
        mixture,
        stable,
    }
}

fn ln_normal(x: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + x * x / var)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Explicit densities for the p = 1 toy: `ln p(y | f, g)` from residuals
/// and `-ln p_eta(y)` from the 3 x 3 output covariance.
pub struct ToyOracle {
    y: Vec<f64>,
    u: Vec<f64>,
    noise_var: f64,
    /// `(prior variance c beta, exact truncation constant, -ln p_eta(y))`.
    comps: Vec<(f64, f64, f64)>,
}

impl ToyOracle {
    pub fn new(data: &Dataset, noise_var: f64, mixture: &ProposalMixture) -> Self {
        let std = Normal::new(0.0, 1.0).unwrap();
        let t = data.y.len();
        let a = DVector::from_fn(t, |i, _| if i == 0 { 0.0 } else { data.y[i - 1] });
        let b = DVector::from_fn(t, |i, _| if i == 0 { 0.0 } else { data.u[i - 1] });
        let y = DVector::from_column_slice(&data.y);
        let comps = mixture
            .components()
            .iter()
            .map(|c| {
                let k = c.eta.scale * c.eta.decay;
                let mass = std.cdf(1.0 / k.sqrt()) - std.cdf(-1.0 / k.sqrt());
                let sigma: DMatrix<f64> =
                    (&a * a.transpose() + &b * b.transpose()) * k + DMatrix::identity(t, t) * noise_var;
                let det = sigma.determinant();
                let quad = (y.transpose() * sigma.try_inverse().unwrap() * &y)[(0, 0)];
                let nll = 0.5 * (t as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad);
                (k, 1.0 / mass, nll)
            })
            .collect();
        Self {
            y: data.y.clone(),
            u: data.u.clone(),
            noise_var,
            comps,
        }
    }

    pub fn log_density(&self, f: f64, g: f64) -> f64 {
        if f.abs() >= 1.0 {
            return f64::NEG_INFINITY;
        }
        let mut ll = 0.0;
        for t in 0..self.y.len() {
            let pred = if t == 0 { 0.0 } else { f * self.y[t - 1] + g * self.u[t - 1] };
            ll += ln_normal(self.y[t] - pred, self.noise_var);
        }
        let terms: Vec<f64> = self
            .comps
            .iter()
            .map(|&(k, kappa, nll)| kappa.ln() + ln_normal(f, k) + ln_normal(g, k) + nll)
            .collect();
        ll + log_sum_exp(&terms)
    }

    /// Deciles of the f-marginal from a midpoint grid on (-1, 1) x [-g_max, g_max].
    pub fn f_deciles(&self, nf: usize, ng: usize, g_max: f64) -> Vec<f64> {
        let hf = 2.0 / nf as f64;
        let hg = 2.0 * g_max / ng as f64;
        let fs: Vec<f64> = (0..nf).map(|i| -1.0 + hf * (i as f64 + 0.5)).collect();
        let logs: Vec<Vec<f64>> = fs
            .iter()
            .map(|&f| {
                (0..ng)
                    .map(|j| self.log_density(f, -g_max + hg * (j as f64 + 0.5)))
                    .collect()
            })
            .collect();
        let top = logs.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let marg: Vec<f64> = logs.iter().map(|row| row.iter().map(|l| (l - top).exp()).sum()).collect();
        let total: f64 = marg.iter().sum();
        let mut cdf = Vec::with_capacity(nf);
        let mut acc = 0.0;
        for m in &marg {
            acc += m / total;
            cdf.push(acc);
        }
        (1..10)
            .map(|q| {
                let q = q as f64 / 10.0;
                let i = cdf.iter().position(|&c| c >= q).unwrap();
                let (c0, f0) = if i == 0 { (0.0, -1.0) } else { (cdf[i - 1], -1.0 + hf * i as f64) };
                f0 + hf * (q - c0) / (cdf[i] - c0)
            })
            .collect()
    }
}

pub fn empirical_deciles(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (1..10)
        .map(|q| {
            let pos = q as f64 / 10.0 * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let w = pos - lo as f64;
            v[lo] * (1.0 - w) + v[(lo + 1).min(v.len() - 1)] * w
        })
        .collect()
}
