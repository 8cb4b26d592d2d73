use crate::error::{Error, Result};
use crate::lti::{ArmaxModel, ForwardModel};

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `1/2 |p - p_hat| / |p| + 1/2 |h - h_hat| / |h|` over the first `len`
/// impulse-response terms.
pub fn relative_error(truth: &ArmaxModel, est: &ForwardModel, len: usize) -> Result<f64> {
    if est.p_ir.len() < len || est.h_ir.len() < len {
        return Err(Error::Dimension(format!(
            "estimate has {} terms, metric needs {len}",
            est.len()
        )));
    }
    let t = truth.forward(len)?;
    let (np, nh) = (norm(&t.p_ir), norm(&t.h_ir));
    if !(np > 0.0 && nh > 0.0) {
        return Err(Error::Domain("true impulse response has zero norm".into()));
    }
    let err = 0.5 * dist(&t.p_ir, &est.p_ir[..len]) / np + 0.5 * dist(&t.h_ir, &est.h_ir[..len]) / nh;
    if !err.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    Ok(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::generator::generate_armax_model;

    #[test]
    fn truth_has_zero_error() {
        let m = generate_armax_model(1, 1, 1000).unwrap();
        let f = m.forward(200).unwrap();
        assert_eq!(relative_error(&m, &f, 200).unwrap(), 0.0);
    }

    #[test]
    fn zero_model_error() {
        let m = generate_armax_model(2, 1, 1000).unwrap();
        let t = m.forward(200).unwrap();
        let z = ForwardModel::zero(200);
        let mut e1 = vec![0.0; 200];
        e1[0] = 1.0;
        let expect = 0.5 + 0.5 * dist(&t.h_ir, &e1) / norm(&t.h_ir);
        assert!((relative_error(&m, &z, 200).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn larger_input_error_increases_metric() {
        let m = generate_armax_model(3, 1, 1000).unwrap();
        let t = m.forward(200).unwrap();
        let mut a = t.clone();
        let mut b = t.clone();
        a.p_ir[3] += 0.1;
        b.p_ir[3] += 0.2;
        assert!(relative_error(&m, &b, 200).unwrap() > relative_error(&m, &a, 200).unwrap());
        assert!(relative_error(&m, &ForwardModel::zero(50), 200).is_err());
    }
}
