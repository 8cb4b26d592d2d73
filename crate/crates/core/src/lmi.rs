//! Projection of a predictor onto the Schur-stable set through an LMI.
//!
//! `A(z)` is stable iff there is `P = P^T > 0` with
//!
//! ```text
//! M = [ P        Psi P ]
//!     [ (Psi P)^T  P   ]  >= 0,
//! ```
//!
//! `Psi` the companion matrix of `f`. With the first-row companion layout,
//! `Psi P` has first row `psi^T = (P f)^T` and then the first `p-1` rows of
//! `P`, so `M` is linear in `(psi, P)`. The projection solves
//!
//! ```text
//! min ||psi - P f~||^2   s.t.  M(psi, P) >= eps I,  tr P = p
//! ```
//!
//! with a log-determinant barrier method and recovers `f = P^-1 psi`.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::spectral_radius;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmiOptions {
    /// Strictness margin: the solution satisfies `M >= margin * I`.
    pub margin: f64,
    /// Target barrier duality gap `2p / t`.
    pub gap_tol: f64,
    pub max_newton: usize,
    /// Barrier parameter growth per outer iteration.
    pub mu: f64,
}

impl Default for LmiOptions {
    fn default() -> Self {
        Self {
            margin: 1e-6,
            gap_tol: 1e-9,
            max_newton: 3000,
            mu: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub target: Vec<f64>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub psi: DVector<f64>,
    pub p_mat: DMatrix<f64>,
    pub objective: f64,
    /// Barrier suboptimality certificate.
    pub gap: f64,
    /// Smallest eigenvalue of `M(psi, P)`.
    pub min_eig: f64,
    pub newton_steps: usize,
}

/// `[[P, Psi P], [(Psi P)^T, P]]`.
pub fn lmi_matrix(psi: &[f64], p_mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = psi.len();
    if p_mat.shape() != (p, p) {
        return Err(Error::Dimension(format!(
            "psi has length {p} but P is {:?}",
            p_mat.shape()
        )));
    }
    let mut q = DMatrix::zeros(p, p);
    for j in 0..p {
        q[(0, j)] = psi[j];
    }
    for r in 1..p {
        q.row_mut(r).copy_from(&p_mat.row(r - 1));
    }
    let mut m = DMatrix::zeros(2 * p, 2 * p);
    m.view_mut((0, 0), (p, p)).copy_from(p_mat);
    m.view_mut((p, p), (p, p)).copy_from(p_mat);
    m.view_mut((0, p), (p, p)).copy_from(&q);
    m.view_mut((p, 0), (p, p)).copy_from(&q.transpose());
    Ok(m)
}

/// Sparse description of the linear map `x -> M(x)`: one list of
/// `(row, col, value)` per variable, both triangle positions included.
struct LmiStructure {
    p: usize,
    basis: Vec<Vec<(usize, usize, f64)>>,
    /// Residual map `psi - P f~ = C x`.
    c: DMatrix<f64>,
    /// Indices of the diagonal entries of `P` in `x`.
    diag_idx: Vec<usize>,
}

fn push_sym(list: &mut Vec<(usize, usize, f64)>, r: usize, c: usize) {
    if r == c {
        list.push((r, r, 1.0));
    } else {
        list.push((r, c, 1.0));
        list.push((c, r, 1.0));
    }
}

impl LmiStructure {
    fn new(target: &[f64]) -> Self {
        let p = target.len();
        let nvar = p + p * (p + 1) / 2;
        let mut basis = Vec::with_capacity(nvar);
        let mut c = DMatrix::zeros(p, nvar);
        let mut diag_idx = Vec::with_capacity(p);
        for j in 0..p {
            let mut list = Vec::new();
            push_sym(&mut list, 0, p + j);
            c[(j, j)] = 1.0;
            basis.push(list);
        }
        for a in 0..p {
            for b in a..p {
                let idx = basis.len();
                let mut list = Vec::new();
                push_sym(&mut list, a, b);
                push_sym(&mut list, p + a, p + b);
                // Psi P rows 1.. are rows 0..p-1 of P
                if a + 1 < p {
                    push_sym(&mut list, a + 1, p + b);
                }
                if a != b && b + 1 < p {
                    push_sym(&mut list, b + 1, p + a);
                }
                c[(a, idx)] -= target[b];
                if a != b {
                    c[(b, idx)] -= target[a];
                } else {
                    diag_idx.push(idx);
                }
                basis.push(list);
            }
        }
        Self {
            p,
            basis,
            c,
            diag_idx,
        }
    }

    fn nvar(&self) -> usize {
        self.basis.len()
    }

    fn assemble(&self, x: &DVector<f64>, shift: f64) -> DMatrix<f64> {
        let n = 2 * self.p;
        let mut m = DMatrix::from_diagonal_element(n, n, -shift);
        for (xi, list) in x.iter().zip(&self.basis) {
            for &(r, c, v) in list {
                m[(r, c)] += xi * v;
            }
        }
        m
    }

    fn unpack(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.p;
        let psi = DVector::from_iterator(p, x.iter().take(p).copied());
        let mut pm = DMatrix::zeros(p, p);
        let mut k = p;
        for a in 0..p {
            for b in a..p {
                pm[(a, b)] = x[k];
                pm[(b, a)] = x[k];
                k += 1;
            }
        }
        (psi, pm)
    }
}

fn log_det_pd(m: DMatrix<f64>) -> Option<(f64, Cholesky<f64, nalgebra::Dyn>)> {
    let chol = Cholesky::new(m)?;
    let l = chol.l_dirty();
    let n = l.nrows();
    let ld = (0..n).map(|i| 2.0 * l[(i, i)].ln()).sum::<f64>();
    ld.is_finite().then_some((ld, chol))
}

const CENTERING_STEPS: usize = 100;

/// Log-determinant barrier method with equality-constrained Newton steps.
pub fn solve_sdp(prob: &SdpProblem, opts: &LmiOptions) -> Result<SdpSolution> {
    let p = prob.target.len();
    if p == 0 {
        return Err(Error::Dimension("empty predictor".into()));
    }
    if prob.target.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite target".into()));
    }
    let st = LmiStructure::new(&prob.target);
    let nvar = st.nvar();
    let eps = prob.margin;
    let n_barrier = (2 * p) as f64;

    // Strictly feasible start: psi = 0 and an increasing diagonal P with
    // trace p, for which P - Psi P Psi^T = 2/(p+1) I.
    let mut x = DVector::zeros(nvar);
    for (i, &idx) in st.diag_idx.iter().enumerate() {
        x[idx] = 2.0 * (i + 1) as f64 / (p + 1) as f64;
    }
    if log_det_pd(st.assemble(&x, eps)).is_none() {
        return Err(Error::Domain(format!(
            "margin {eps} too large for a strictly feasible start"
        )));
    }

    let ctc = st.c.tr_mul(&st.c) * 2.0;
    let mut a_eq = DVector::zeros(nvar);
    for &idx in &st.diag_idx {
        a_eq[idx] = 1.0;
    }

    let phi = |x: &DVector<f64>, t: f64| -> Option<f64> {
        let (ld, _) = log_det_pd(st.assemble(x, eps))?;
        let r = &st.c * x;
        Some(t * r.norm_squared() - ld)
    };

    let mut t = 1.0;
    let mut steps = 0;
    loop {
        // centering; at large t rounding in phi can keep the decrement
        // above tolerance forever, hence the per-pass cap
        let pass_start = steps;
        while steps - pass_start < CENTERING_STEPS {
            if steps >= opts.max_newton {
                let min_eig = st.assemble(&x, 0.0).symmetric_eigenvalues().min();
                return Err(Error::SdpNotConverged {
                    iterations: steps,
                    gap: n_barrier / t,
                    min_eig,
                });
            }
            steps += 1;
            let (_, chol) = log_det_pd(st.assemble(&x, eps)).ok_or(Error::SdpNotConverged {
                iterations: steps,
                gap: n_barrier / t,
                min_eig: f64::NAN,
            })?;
            let y = chol.inverse();
            let mut grad = &ctc * &x * t;
            for (i, list) in st.basis.iter().enumerate() {
                let tr: f64 = list.iter().map(|&(r, c, v)| v * y[(c, r)]).sum();
                grad[i] -= tr;
            }
            let mut hess = &ctc * t;
            for i in 0..nvar {
                let li = &st.basis[i];
                for j in i..nvar {
                    let lj = &st.basis[j];
                    let mut h = 0.0;
                    for &(a, b, v) in li {
                        for &(c, d, w) in lj {
                            h += v * w * y[(b, c)] * y[(d, a)];
                        }
                    }
                    hess[(i, j)] += h;
                    if i != j {
                        hess[(j, i)] += h;
                    }
                }
            }
            let dx = match newton_direction(&hess, &grad, &a_eq) {
                Some(d) => d,
                None => break,
            };
            let decrement = -grad.dot(&dx);
            if decrement / 2.0 <= 1e-10 {
                break;
            }
            let f0 = phi(&x, t).unwrap_or(f64::INFINITY);
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial = &x + &dx * step;
                if let Some(v) = phi(&trial, t) {
                    if v < f0 && v <= f0 - 0.25 * step * decrement {
                        x = trial;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if n_barrier / t < opts.gap_tol * (1.0 + (&st.c * &x).norm_squared()) {
            break;
        }
        t *= opts.mu;
    }

    let (psi, p_mat) = st.unpack(&x);
    let m = lmi_matrix(psi.as_slice(), &p_mat)?;
    let min_eig = m.symmetric_eigenvalues().min();
    Ok(SdpSolution {
        objective: (&st.c * &x).norm_squared(),
        psi,
        p_mat,
        gap: n_barrier / t,
        min_eig,
        newton_steps: steps,
    })
}

/// Solves `H dx + a nu = -g`, `a^T dx = 0`.
fn newton_direction(
    hess: &DMatrix<f64>,
    grad: &DVector<f64>,
    a: &DVector<f64>,
) -> Option<DVector<f64>> {
    let chol = Cholesky::new(hess.clone())?;
    let hg = chol.solve(grad);
    let ha = chol.solve(a);
    let denom = a.dot(&ha);
    if !(denom > 0.0) {
        return None;
    }
    let nu = -a.dot(&hg) / denom;
    let dx = -(hg + ha * nu);
    dx.iter().all(|v| v.is_finite()).then_some(dx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub f: Vec<f64>,
    pub spectral_radius: f64,
    pub solution: SdpSolution,
}

const MAX_CONDITION: f64 = 1e12;

/// Closest stable predictor feedback vector in the LMI sense, `f = P^-1 psi`.
pub fn project_stable(target: &[f64], opts: &LmiOptions) -> Result<Projection> {
    let prob = SdpProblem {
        target: target.to_vec(),
        margin: opts.margin,
    };
    let solution = solve_sdp(&prob, opts)?;
    let eig = solution.p_mat.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularMatrix { condition });
    }
    let chol = Cholesky::new(solution.p_mat.clone()).ok_or(Error::SingularMatrix { condition })?;
    let f: Vec<f64> = chol.solve(&solution.psi).iter().copied().collect();
    let rho = spectral_radius(&f)?;
    Ok(Projection {
        f,
        spectral_radius: rho,
        solution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lmi_matrix_scalar_cases() {
        let one = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(lmi_matrix(&[0.0], &one).unwrap(), DMatrix::identity(2, 2));
        let m = lmi_matrix(&[0.5], &one).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        let e = m.symmetric_eigenvalues();
        assert!((e.min() - 0.5).abs() < 1e-14 && (e.max() - 1.5).abs() < 1e-14);
        let m = lmi_matrix(&[2.0], &one).unwrap();
        assert!((m.symmetric_eigenvalues().min() + 1.0).abs() < 1e-14);
    }

    #[test]
    fn lmi_matrix_matches_companion_product() {
        let f = [0.3, -0.2, 0.1];
        let p_mat = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.2, 0.0, 0.2, 1.5]);
        let psi: Vec<f64> = (&p_mat * DVector::from_column_slice(&f)).iter().copied().collect();
        let psi_p = crate::poly::companion(&f).unwrap() * &p_mat;
        let m = lmi_matrix(&psi, &p_mat).unwrap();
        assert!((m.view((0, 3), (3, 3)) - &psi_p).amax() < 1e-14);
        assert!((m.view((3, 0), (3, 3)) - psi_p.transpose()).amax() < 1e-14);
    }

    #[test]
    fn structure_assembles_lmi_matrix() {
        let target = [0.4, -0.1, 0.7];
        let st = LmiStructure::new(&target);
        let x = DVector::from_iterator(st.nvar(), (0..st.nvar()).map(|i| (i as f64 * 0.7).sin()));
        let (psi, pm) = st.unpack(&x);
        let direct = lmi_matrix(psi.as_slice(), &pm).unwrap();
        assert!((st.assemble(&x, 0.0) - direct).amax() < 1e-15);
        let resid = &psi - &pm * DVector::from_column_slice(&target);
        assert!((&st.c * &x - resid).amax() < 1e-15);
    }

    #[test]
    fn scalar_projection_of_unstable_target() {
        let opts = LmiOptions::default();
        let proj = project_stable(&[2.0], &opts).unwrap();
        assert!(proj.spectral_radius < 1.0);
        assert!((proj.f[0] - (1.0 - opts.margin)).abs() < 1e-6, "{}", proj.f[0]);
        assert!((proj.solution.p_mat.trace() - 1.0).abs() < 1e-7);
        assert!(proj.solution.min_eig >= opts.margin - 1e-7);
    }

    #[test]
    fn scalar_projection_of_stable_target() {
        let proj = project_stable(&[0.5], &LmiOptions::default()).unwrap();
        assert!((proj.f[0] - 0.5).abs() < 1e-4);
        let proj = project_stable(&[-0.3], &LmiOptions::default()).unwrap();
        assert!((proj.f[0] + 0.3).abs() < 1e-4);
    }

    #[test]
    fn zero_target_stays_zero() {
        let proj = project_stable(&[0.0; 4], &LmiOptions::default()).unwrap();
        assert!(proj.f.iter().all(|v| v.abs() < 1e-6), "{:?}", proj.f);
    }

    #[test]
    fn stable_pair_is_kept() {
        let proj = project_stable(&[1.5, -0.56], &LmiOptions::default()).unwrap();
        assert!((proj.f[0] - 1.5).abs() < 1e-3 && (proj.f[1] + 0.56).abs() < 1e-3, "{:?}", proj.f);
        assert!((proj.solution.p_mat.trace() - 2.0).abs() < 1e-7);
    }
}
