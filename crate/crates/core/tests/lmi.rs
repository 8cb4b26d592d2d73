use nalgebra::DMatrix;
use proptest::prelude::*;

use stabid::lmi::{lmi_matrix, project_stable, LmiOptions};
use stabid::poly::spectral_radius;

fn min_eig(m: DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues().min()
}

/// Scalar feasibility: some `P > 0` with `M(P f, P) >= 0`. `M` is
/// homogeneous in `P`, so `P = 1` decides it.
fn scalar_feasible(f: f64) -> bool {
    min_eig(lmi_matrix(&[f], &DMatrix::from_element(1, 1, 1.0)).unwrap()) >= -1e-12
}

#[test]
fn scalar_feasible_set_is_unit_interval() {
    for i in -3000..=3000 {
        let f = i as f64 * 1e-3;
        assert_eq!(scalar_feasible(f), f.abs() <= 1.0, "f = {f}");
        for &p in &[0.01, 0.5, 7.0] {
            let m = lmi_matrix(&[f * p], &DMatrix::from_element(1, 1, p)).unwrap();
            assert_eq!(min_eig(m) >= -1e-12 * p, f.abs() <= 1.0, "f = {f}, P = {p}");
        }
    }
}

#[test]
fn scalar_projection_matches_grid_oracle() {
    let opts = LmiOptions::default();
    // with tr P = 1 the scalar problem is min (psi - 2)^2 over
    // [[1, psi], [psi, 1]] >= eps I, i.e. |psi| <= 1 - eps
    let mut best = (f64::INFINITY, 0.0);
    for i in -2000..=2000 {
        let psi = i as f64 * 1e-3;
        let m = lmi_matrix(&[psi], &DMatrix::from_element(1, 1, 1.0)).unwrap();
        if min_eig(m) >= opts.margin {
            let v = (psi - 2.0f64).powi(2);
            if v < best.0 {
                best = (v, psi);
            }
        }
    }
    let proj = project_stable(&[2.0], &opts).unwrap();
    assert!((proj.f[0] - best.1).abs() <= 1e-3, "{} vs grid {}", proj.f[0], best.1);
    assert!(proj.f[0] < 1.0 && proj.f[0] > 1.0 - 1e-4, "{}", proj.f[0]);
    let neg = project_stable(&[-3.0], &opts).unwrap();
    assert!(neg.f[0] > -1.0 && neg.f[0] < -1.0 + 1e-4, "{}", neg.f[0]);
}

#[test]
fn stable_targets_are_reproduced() {
    let opts = LmiOptions::default();
    for &f in &[0.0, 0.3, -0.9, 0.99] {
        let proj = project_stable(&[f], &opts).unwrap();
        assert!((proj.f[0] - f).abs() < 1e-4, "{f} -> {}", proj.f[0]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_is_always_stable(
        f in prop::collection::vec(-1.5..1.5f64, 1..=8),
        scale in 0.5..3.0f64,
    ) {
        let target: Vec<f64> = f.iter().map(|v| v * scale).collect();
        let proj = project_stable(&target, &LmiOptions::default()).unwrap();
        prop_assert!(proj.spectral_radius < 1.0);
        prop_assert!((spectral_radius(&proj.f).unwrap() - proj.spectral_radius).abs() < 1e-12);
        prop_assert!(proj.solution.min_eig >= 0.0);
    }
}
