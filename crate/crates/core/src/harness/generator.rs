//! Random second-order ARMAX systems with a lightly damped pole pair and
//! unit signal-to-noise ratio, plus their input/output data.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::evidence::Dataset;
use crate::lti::{filter, simulate_armax, ArmaxModel};
use crate::poly::Polynomial;
use crate::seed;

/// Modulus of the true pole pair `0.996 exp(+-j pi / 3)`.
pub const POLE_RADIUS: f64 = 0.996;
pub const B_ROOT_RADIUS: f64 = 0.9;
pub const C_ROOT_RANGE: (f64, f64) = (0.65, 0.73);

/// `z^2 - 2 r cos(pi/3) z + r^2` with `2 cos(pi/3) = 1` taken exactly.
pub fn true_denominator() -> Polynomial {
    Polynomial::new(vec![1.0, -POLE_RADIUS, POLE_RADIUS * POLE_RADIUS])
}

fn white(rng: &mut seed::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// `sqrt(var(y_e) / var(y_u))`.
pub fn gain_from_channels(y_u: &[f64], y_e: &[f64]) -> Result<f64> {
    let vu = variance(y_u);
    if !(vu > 0.0) {
        return Err(Error::Domain("input channel has zero variance".into()));
    }
    Ok((variance(y_e) / vu).sqrt())
}

/// Random model: real `B` roots uniform on `(-0.9, 0.9)`, real `C` roots
/// uniform on `[0.65, 0.73]`, gain from `horizon`-sample simulations of the
/// two channels driven by independent unit white noise.
pub fn generate_armax_model(seed: u64, b_degree: usize, horizon: usize) -> Result<ArmaxModel> {
    let mut rng = seed::stream(seed, 0);
    let b_roots: Vec<f64> = (0..b_degree)
        .map(|_| rng.gen_range(-B_ROOT_RADIUS..B_ROOT_RADIUS))
        .collect();
    let c_roots: Vec<f64> = (0..2).map(|_| rng.gen_range(C_ROOT_RANGE.0..=C_ROOT_RANGE.1)).collect();
    let a = true_denominator();
    let b = Polynomial::from_real_roots(&b_roots);
    let c = Polynomial::from_real_roots(&c_roots);

    let mut sim = seed::stream(seed, 1);
    let u = white(&mut sim, horizon);
    let e = white(&mut sim, horizon);
    let mut num = vec![0.0];
    num.extend_from_slice(b.coeffs());
    let y_u = filter(&Polynomial::new(num), &a, &u)?;
    let y_e = filter(&c, &a, &e)?;
    let k_gain = gain_from_channels(&y_u, &y_e)?;
    Ok(ArmaxModel { a, b, c, k_gain })
}

/// Identification and test sets; `noise_scale = 0` switches the
/// disturbance off.
pub fn generate_dataset(
    model: &ArmaxModel,
    t_id: usize,
    t_test: usize,
    seed: u64,
    noise_scale: f64,
) -> Result<(Dataset, Dataset)> {
    let make = |stream: u64, t: usize| -> Result<Dataset> {
        let mut rng = seed::stream(seed, stream);
        let u = white(&mut rng, t);
        let e: Vec<f64> = white(&mut rng, t).into_iter().map(|v| v * noise_scale).collect();
        let y = simulate_armax(model, &u, &e)?;
        Dataset::new(u, y, Some(seed))
    };
    Ok((make(2, t_id)?, make(3, t_test)?))
}

/// Signal-to-noise ratio `var(y_u) / var(y_e)` on a fresh simulation.
pub fn empirical_snr(model: &ArmaxModel, horizon: usize, seed: u64) -> Result<f64> {
    let mut rng = seed::stream(seed, 9);
    let u = white(&mut rng, horizon);
    let e = white(&mut rng, horizon);
    let y_u = filter(&model.input_numerator(), &model.a, &u)?;
    let y_e = filter(&model.c, &model.a, &e)?;
    Ok(variance(&y_u) / variance(&y_e))
}
