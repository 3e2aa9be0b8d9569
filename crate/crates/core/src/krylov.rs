//! Matrix-free Krylov kernels: CG, unrestarted GMRES, Lanczos with full
//! reorthogonalization, `f(A)b` for `f(t) = t^{-1/2}`, and the Lanczos
//! Gaussian sampler.
//!
//! Preconditioners are [`PrecisionFactor`]s `G` with `G Gᵀ ≈ A`; Lanczos
//! runs on the split-preconditioned operator `G⁻¹ A G⁻ᵀ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::ops::{dot, norm2, LinearMap, PrecisionFactor};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub tolerance_used: f64,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&0.0)
    }
}

fn check_square(a: &dyn LinearMap, b: &[f64], what: &str) -> Result<()> {
    if a.in_dim() != a.out_dim() {
        return Err(Error::InvalidArgument(format!(
            "{what} needs a square operator, got {}x{}",
            a.out_dim(),
            a.in_dim()
        )));
    }
    check_len(&format!("{what}: operator vs right-hand side"), a.in_dim(), b.len())
}

fn check_precond(p: Option<&dyn PrecisionFactor>, n: usize) -> Result<()> {
    if let Some(p) = p {
        check_len("preconditioner dimension", n, p.dim())?;
    }
    Ok(())
}

fn check_tol(rel_tol: f64) -> Result<()> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "relative tolerance must lie in (0, 1), got {rel_tol}"
        )));
    }
    Ok(())
}

/// Conjugate gradients from `x0 = 0`, optionally preconditioned by
/// `M = G Gᵀ`. Stops once `‖b − A x‖ ≤ rel_tol ‖b‖`.
pub fn cg_solve(
    a: &dyn LinearMap,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
    precond: Option<&dyn PrecisionFactor>,
) -> Result<(Vec<f64>, SolveReport)> {
    check_square(a, b, "CG")?;
    check_precond(precond, b.len())?;
    check_tol(rel_tol)?;
    let n = b.len();
    let bnorm = norm2(b);
    let target = rel_tol * bnorm;
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut history = vec![bnorm];
    let apply_m = |r: &[f64]| match precond {
        Some(p) => p.solve_precision(r),
        None => r.to_vec(),
    };
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                residual_history: history,
                converged: true,
                tolerance_used: rel_tol,
            },
        ));
    }
    let mut z = apply_m(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut converged = false;
    let mut it = 0;
    while it < max_iter {
        let ap = a.apply(&p);
        let curv = dot(&p, &ap);
        if !(curv > 0.0) {
            return Err(Error::CgBreakdown {
                iteration: it + 1,
                curvature: curv,
            });
        }
        let alpha = rz / curv;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        it += 1;
        let rn = norm2(&r);
        history.push(rn);
        if rn <= target {
            converged = true;
            break;
        }
        z = apply_m(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok((
        x,
        SolveReport {
            iterations: it,
            residual_history: history,
            converged,
            tolerance_used: rel_tol,
        },
    ))
}

/// GMRES without restart, right-preconditioned by `M = G Gᵀ`, so the
/// monitored residual is the true residual `‖b − A x‖`.
pub fn gmres_solve(
    a: &dyn LinearMap,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
    precond: Option<&dyn PrecisionFactor>,
) -> Result<(Vec<f64>, SolveReport)> {
    check_square(a, b, "GMRES")?;
    check_precond(precond, b.len())?;
    check_tol(rel_tol)?;
    let n = b.len();
    let bnorm = norm2(b);
    let target = rel_tol * bnorm;
    let mut history = vec![bnorm];
    if bnorm == 0.0 || max_iter == 0 {
        return Ok((
            vec![0.0; n],
            SolveReport {
                iterations: 0,
                residual_history: history,
                converged: bnorm == 0.0,
                tolerance_used: rel_tol,
            },
        ));
    }
    let apply_m = |v: &[f64]| match precond {
        Some(p) => p.solve_precision(v),
        None => v.to_vec(),
    };
    let mut basis: Vec<Vec<f64>> = vec![b.iter().map(|v| v / bnorm).collect()];
    // Hessenberg columns after rotation, i.e. the growing R factor
    let mut rcols: Vec<Vec<f64>> = Vec::new();
    let mut cs: Vec<(f64, f64)> = Vec::new();
    let mut g = vec![bnorm];
    let mut converged = false;
    let mut it = 0;
    while it < max_iter {
        let j = it;
        let mut w = a.apply(&apply_m(&basis[j]));
        let mut h = vec![0.0; j + 2];
        for _pass in 0..2 {
            for (i, v) in basis.iter().enumerate() {
                let c = dot(&w, v);
                h[i] += c;
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= c * vk;
                }
            }
        }
        let hn = norm2(&w);
        h[j + 1] = hn;
        for (i, &(c, s)) in cs.iter().enumerate() {
            let (a0, a1) = (h[i], h[i + 1]);
            h[i] = c * a0 + s * a1;
            h[i + 1] = -s * a0 + c * a1;
        }
        let rho = h[j].hypot(h[j + 1]);
        let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (h[j] / rho, h[j + 1] / rho) };
        h[j] = rho;
        h[j + 1] = 0.0;
        cs.push((c, s));
        let gj = g[j];
        g[j] = c * gj;
        g.push(-s * gj);
        h.truncate(j + 1);
        rcols.push(h);
        it += 1;
        let res = g[j + 1].abs();
        history.push(res);
        if res <= target {
            converged = true;
            break;
        }
        if hn <= 1e-14 * bnorm {
            // invariant subspace: the least-squares solution is exact
            converged = res <= target;
            break;
        }
        basis.push(w.iter().map(|v| v / hn).collect());
    }
    // back substitution R y = g
    let k = rcols.len();
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = g[i];
        for (l, yl) in y.iter().enumerate().skip(i + 1) {
            s -= rcols[l][i] * yl;
        }
        y[i] = s / rcols[i][i];
    }
    let mut u = vec![0.0; n];
    for (yi, v) in y.iter().zip(&basis) {
        for (uk, vk) in u.iter_mut().zip(v) {
            *uk += yi * vk;
        }
    }
    let x = apply_m(&u);
    Ok((
        x,
        SolveReport {
            iterations: it,
            residual_history: history,
            converged,
            tolerance_used: rel_tol,
        },
    ))
}

/// `G⁻¹ A G⁻ᵀ` as a symmetric operator.
pub struct SplitPreconditioned<'a> {
    pub a: &'a dyn LinearMap,
    pub g: &'a dyn PrecisionFactor,
}

impl LinearMap for SplitPreconditioned<'_> {
    fn in_dim(&self) -> usize {
        self.g.dim()
    }
    fn out_dim(&self) -> usize {
        self.g.dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.g.solve(&self.a.apply(&self.g.solve_adjoint(x)))
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.apply(y)
    }
}

/// Orthonormal Krylov basis `V_k` with tridiagonal `T_k = V_kᵀ M V_k`.
#[derive(Debug, Clone)]
pub struct LanczosBasis {
    /// The `k` basis vectors, each of length `n`.
    pub v: Vec<Vec<f64>>,
    /// Diagonal of `T_k`.
    pub alpha: Vec<f64>,
    /// Off-diagonal of `T_k` (length `k − 1`); zero where the run restarted.
    pub beta: Vec<f64>,
    /// `β_{k+1}`, coupling to the next (unstored) basis vector.
    pub beta_next: f64,
    pub k: usize,
    /// `‖start‖`
    pub start_norm: f64,
    /// Possible early exit: an invariant subspace was found after `k` steps.
    pub breakdown: bool,
    /// Number of restarts performed after breakdowns.
    pub restarts: usize,
}

impl LanczosBasis {
    pub fn t_dense(&self) -> DMatrix<f64> {
        let k = self.k;
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = self.alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = self.beta[i];
                t[(i + 1, i)] = self.beta[i];
            }
        }
        t
    }

    /// `max |VᵀV − I|`
    pub fn orthogonality_error(&self) -> f64 {
        let mut e: f64 = 0.0;
        for i in 0..self.k {
            for j in 0..=i {
                let d = dot(&self.v[i], &self.v[j]) - if i == j { 1.0 } else { 0.0 };
                e = e.max(d.abs());
            }
        }
        e
    }
}

/// Lanczos controls beyond the step count.
#[derive(Debug, Clone, Copy, Default)]
pub struct LanczosOptions {
    /// After a breakdown before `k` steps, continue from a fresh random
    /// direction orthogonal to the current basis (so `k = n` yields a full
    /// orthonormal basis even when the start vector spans a small
    /// invariant subspace).
    pub restart_seed: Option<u64>,
}

/// Relative size of `β_{j+1}` (against the running operator scale) that is
/// treated as an exact breakdown.
pub const BREAKDOWN_RTOL: f64 = 1e-12;

/// `k` steps of Lanczos on `G⁻¹ A G⁻ᵀ` starting from `start`.
pub fn lanczos(
    a: &dyn LinearMap,
    start: &[f64],
    k: usize,
    precond: &dyn PrecisionFactor,
) -> Result<LanczosBasis> {
    lanczos_with(a, start, k, precond, LanczosOptions::default())
}

pub fn lanczos_with(
    a: &dyn LinearMap,
    start: &[f64],
    k: usize,
    precond: &dyn PrecisionFactor,
    opts: LanczosOptions,
) -> Result<LanczosBasis> {
    check_square(a, start, "Lanczos")?;
    check_precond(Some(precond), start.len())?;
    let n = start.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "Lanczos steps must be in 1..={n}, got {k}"
        )));
    }
    let snorm = norm2(start);
    if !(snorm > 0.0) || !snorm.is_finite() {
        return Err(Error::InvalidArgument("Lanczos start vector is zero".into()));
    }
    let op = SplitPreconditioned { a, g: precond };
    let mut v: Vec<Vec<f64>> = vec![start.iter().map(|x| x / snorm).collect()];
    let mut alpha = Vec::with_capacity(k);
    let mut beta = Vec::with_capacity(k);
    let mut scale: f64 = 0.0;
    let mut restarts = 0;
    let mut restart_rng = opts.restart_seed.map(|s| rng::stream(s, 0x1a2c));
    let breakdown;
    let beta_next;
    loop {
        let j = v.len() - 1;
        let mut w = op.apply(&v[j]);
        let aj = dot(&w, &v[j]);
        alpha.push(aj);
        // full reorthogonalization, two passes
        for _ in 0..2 {
            for vi in &v {
                let c = dot(&w, vi);
                for (wk, vk) in w.iter_mut().zip(vi) {
                    *wk -= c * vk;
                }
            }
        }
        let bj = norm2(&w);
        scale = scale.max(aj.abs() + bj + beta.last().copied().unwrap_or(0.0));
        let broke = bj <= BREAKDOWN_RTOL * scale;
        if v.len() == k {
            beta_next = if broke { 0.0 } else { bj };
            breakdown = broke;
            break;
        }
        if broke {
            match restart_rng.as_mut() {
                None => {
                    breakdown = true;
                    beta_next = 0.0;
                    break;
                }
                Some(r) => {
                    let mut fresh = rng::standard_normal(r, n);
                    for _ in 0..2 {
                        for vi in &v {
                            let c = dot(&fresh, vi);
                            for (fk, vk) in fresh.iter_mut().zip(vi) {
                                *fk -= c * vk;
                            }
                        }
                    }
                    let fnorm = norm2(&fresh);
                    fresh.iter_mut().for_each(|x| *x /= fnorm);
                    beta.push(0.0);
                    v.push(fresh);
                    restarts += 1;
                }
            }
        } else {
            beta.push(bj);
            v.push(w.iter().map(|x| x / bj).collect());
        }
    }
    let steps = v.len();
    Ok(LanczosBasis {
        v,
        alpha,
        beta,
        beta_next,
        k: steps,
        start_norm: snorm,
        breakdown,
        restarts,
    })
}

/// `f(T) e₁` for symmetric tridiagonal `T` via dense eigendecomposition;
/// errors if `T` has a nonpositive eigenvalue.
fn inv_sqrt_e1(basis: &LanczosBasis) -> Result<Vec<f64>> {
    let eig = SymmetricEigen::new(basis.t_dense());
    if let Some((i, &l)) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .find(|(_, &l)| !(l > 0.0))
    {
        return Err(Error::NotPositiveDefinite { row: i, pivot: l });
    }
    let q = &eig.eigenvectors;
    let k = basis.k;
    let mut coef = DVector::zeros(k);
    for i in 0..k {
        coef[i] = q[(0, i)] / eig.eigenvalues[i].sqrt();
    }
    Ok((q * coef).iter().copied().collect())
}

/// Lanczos approximation of `(G⁻¹ A G⁻ᵀ)^{-1/2} b` from `k` steps.
pub fn apply_inv_sqrt(
    a: &dyn LinearMap,
    precond: &dyn PrecisionFactor,
    b: &[f64],
    k: usize,
) -> Result<Vec<f64>> {
    Ok(apply_inv_sqrt_report(a, precond, b, k)?.0)
}

/// As [`apply_inv_sqrt`], also reporting the Lanczos run. The report's
/// `residual_history` holds `‖b‖` followed by the `β_{j+1}`; its last
/// entry is the recurrence residual `β_{k+1} |e_kᵀ f(T_k) e₁| ‖b‖`.
pub fn apply_inv_sqrt_report(
    a: &dyn LinearMap,
    precond: &dyn PrecisionFactor,
    b: &[f64],
    k: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    let basis = lanczos(a, b, k, precond)?;
    let f = inv_sqrt_e1(&basis)?;
    let n = b.len();
    let mut out = vec![0.0; n];
    for (fi, vi) in f.iter().zip(&basis.v) {
        let c = fi * basis.start_norm;
        for (o, x) in out.iter_mut().zip(vi) {
            *o += c * x;
        }
    }
    let mut history = vec![basis.start_norm];
    history.extend(basis.beta.iter().copied());
    history.push(basis.beta_next * f[basis.k - 1].abs() * basis.start_norm);
    Ok((
        out,
        SolveReport {
            iterations: basis.k,
            residual_history: history,
            converged: basis.breakdown || basis.k == k,
            tolerance_used: BREAKDOWN_RTOL,
        },
    ))
}

/// `S η = G⁻ᵀ (G⁻¹ H G⁻ᵀ)^{-1/2} η` for a given `η`.
pub fn sampler_apply(
    h: &dyn LinearMap,
    precond: &dyn PrecisionFactor,
    eta: &[f64],
    k: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    let (y, rep) = apply_inv_sqrt_report(h, precond, eta, k)?;
    Ok((precond.solve_adjoint(&y), rep))
}

/// Zero-mean draw from `N(0, H⁻¹)` (approximate for `k < n`): `S η` with
/// `η` standard normal from the seeded stream.
pub fn sample_gaussian(
    h: &dyn LinearMap,
    precond: &dyn PrecisionFactor,
    k: usize,
    seed: u64,
) -> Result<(Vec<f64>, SolveReport)> {
    let eta = rng::standard_normal(&mut rng::stream(seed, 0), precond.dim());
    sampler_apply(h, precond, &eta, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{
        densify, CooBuilder, CsrMatrix, DiagonalFactor, IdentityFactor,
        SymmetricSparseFactor,
    };
    use proptest::prelude::*;

    fn dense_map(m: &DMatrix<f64>) -> CsrMatrix {
        let (r, c) = m.shape();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] = m[(i, j)];
            }
        }
        CsrMatrix::from_dense(r, c, &data)
    }

    fn random_spd(n: usize, seed: u64, shift: f64) -> DMatrix<f64> {
        let g = rng::standard_normal(&mut rng::stream(seed, 1), n * n);
        let b = DMatrix::from_row_slice(n, n, &g);
        &b * b.transpose() / n as f64 + DMatrix::identity(n, n) * shift
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        num / norm2(b).max(1e-300)
    }

    fn tridiag(n: usize, d: f64) -> CsrMatrix {
        let mut b = CooBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, d);
            if i + 1 < n {
                b.push(i, i + 1, -1.0);
                b.push(i + 1, i, -1.0);
            }
        }
        b.build()
    }

    #[test]
    fn cg_identity_one_step() {
        let a = CsrMatrix::identity(5);
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (x, rep) = cg_solve(&a, &b, 1e-12, 10, None).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rel(&x, &b) < 1e-15);
        assert_eq!(rep.residual_history.len(), 2);
    }

    #[test]
    fn cg_two_by_two() {
        let a = CsrMatrix::from_dense(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let (x, rep) = cg_solve(&a, &[1.0, 2.0], 1e-12, 10, None).unwrap();
        assert!(rep.converged);
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn cg_random_spd_vs_dense() {
        let m = random_spd(100, 3, 0.5);
        let a = dense_map(&m);
        let b: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin()).collect();
        let (x, rep) = cg_solve(&a, &b, 1e-10, 500, None).unwrap();
        assert!(rep.converged);
        let xd = m.cholesky().unwrap().solve(&DVector::from_column_slice(&b));
        assert!(rel(&x, xd.as_slice()) < 1e-8);
        assert_eq!(rep.residual_history.len(), rep.iterations + 1);
    }

    #[test]
    fn cg_detects_indefinite() {
        let a = CsrMatrix::from_diagonal(&[1.0, -1.0]);
        match cg_solve(&a, &[1.0, 1.0], 1e-10, 10, None) {
            Err(Error::CgBreakdown { iteration, .. }) => assert_eq!(iteration, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cg_rejects_bad_inputs() {
        let a = CsrMatrix::identity(3);
        assert!(cg_solve(&a, &[1.0, 2.0], 1e-6, 5, None).is_err());
        assert!(cg_solve(&a, &[1.0, 2.0, 3.0], 1.5, 5, None).is_err());
    }

    #[test]
    fn cg_a_norm_error_decreases() {
        let m = random_spd(40, 8, 0.1);
        let a = dense_map(&m);
        let b: Vec<f64> = (0..40).map(|i| (i as f64).cos()).collect();
        let xs = m.clone().cholesky().unwrap().solve(&DVector::from_column_slice(&b));
        let mut prev = f64::INFINITY;
        for k in 1..40 {
            let (x, _) = cg_solve(&a, &b, 1e-15, k, None).unwrap();
            let e = DVector::from_column_slice(&x) - &xs;
            let en = (e.transpose() * &m * &e)[(0, 0)].sqrt();
            assert!(en <= prev * (1.0 + 1e-10) + 1e-14, "k={k}: {en} > {prev}");
            prev = en;
        }
    }

    #[test]
    fn gmres_identity_and_nonsymmetric() {
        let a = CsrMatrix::identity(4);
        let (x, rep) = gmres_solve(&a, &[1.0, -1.0, 2.0, 0.5], 1e-12, 10, None).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rel(&x, &[1.0, -1.0, 2.0, 0.5]) < 1e-15);
        let d = [2.0, 1.0, 0.0, -1.0, 3.0, 1.0, 0.5, 0.0, 4.0];
        let a = CsrMatrix::from_dense(3, 3, &d);
        let b = [1.0, 2.0, 3.0];
        let (x, rep) = gmres_solve(&a, &b, 1e-13, 10, None).unwrap();
        assert!(rep.converged);
        let m = DMatrix::from_row_slice(3, 3, &d);
        let xd = m.lu().solve(&DVector::from_column_slice(&b)).unwrap();
        assert!(rel(&x, xd.as_slice()) < 1e-10);
    }

    #[test]
    fn gmres_agrees_with_cg_and_preconditioning() {
        let m = random_spd(60, 4, 0.2);
        let a = dense_map(&m);
        let b: Vec<f64> = (0..60).map(|i| (i as f64 * 0.7).sin()).collect();
        let (xc, _) = cg_solve(&a, &b, 1e-12, 500, None).unwrap();
        let (xg, rg) = gmres_solve(&a, &b, 1e-12, 500, None).unwrap();
        assert!(rg.converged);
        assert!(rel(&xg, &xc) < 1e-8);
        let diag: Vec<f64> = (0..60).map(|i| m[(i, i)]).collect();
        let p = DiagonalFactor::sqrt_of(&diag).unwrap();
        let (xp, rp) = gmres_solve(&a, &b, 1e-12, 500, Some(&p)).unwrap();
        assert!(rp.converged);
        assert!(rel(&xp, &xc) < 1e-8);
        // the monitored residual is the true one
        let r: Vec<f64> = a.matvec(&xp).iter().zip(&b).map(|(x, y)| y - x).collect();
        assert!((norm2(&r) - rp.final_residual()).abs() < 1e-10 * norm2(&b));
    }

    #[test]
    fn gmres_reports_nonconvergence() {
        let a = tridiag(50, 2.0);
        let b = vec![1.0; 50];
        let (x, rep) = gmres_solve(&a, &b, 1e-12, 3, None).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 3);
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn preconditioning_reduces_iterations() {
        // H = regularized data term + prior precision, preconditioned by the prior factor
        let n = 64;
        let b_mat = tridiag(n, 2.2);
        let g = SymmetricSparseFactor::new(b_mat.clone(), 1.0).unwrap();
        let jd: Vec<f64> = (0..n).map(|i| if i % 7 == 0 { 3.0 } else { 0.0 }).collect();
        let h = crate::ops::FnMap::symmetric(n, move |x| {
            let mut y = b_mat.matvec(&b_mat.matvec(x));
            for i in 0..x.len() {
                y[i] += jd[i] * jd[i] * x[i];
            }
            y
        });
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.4).cos()).collect();
        let (_, plain) = cg_solve(&h, &rhs, 1e-8, 1000, None).unwrap();
        let (_, pre) = cg_solve(&h, &rhs, 1e-8, 1000, Some(&g)).unwrap();
        assert!(pre.converged && plain.converged);
        assert!(pre.iterations <= plain.iterations, "{} vs {}", pre.iterations, plain.iterations);
    }

    #[test]
    fn lanczos_perfect_preconditioner() {
        let b = tridiag(10, 3.0);
        let g = SymmetricSparseFactor::new(b, 1.3).unwrap();
        let a = crate::ops::PrecisionMap(&g);
        let start: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        let basis = lanczos(&a, &start, 5, &g).unwrap();
        assert_eq!(basis.k, 1);
        assert!(basis.breakdown);
        assert!((basis.alpha[0] - 1.0).abs() < 1e-12);
        let y = apply_inv_sqrt(&a, &g, &start, 5).unwrap();
        assert!(rel(&y, &start) < 1e-12);
    }

    #[test]
    fn lanczos_rejects_zero_start() {
        let a = CsrMatrix::identity(3);
        assert!(lanczos(&a, &[0.0; 3], 2, &IdentityFactor(3)).is_err());
        assert!(lanczos(&a, &[1.0; 3], 4, &IdentityFactor(3)).is_err());
    }

    fn preconditioned_dense(m: &DMatrix<f64>, g: &dyn PrecisionFactor) -> DMatrix<f64> {
        let a = dense_map(m);
        densify(&SplitPreconditioned { a: &a, g }).unwrap()
    }

    #[test]
    fn lanczos_full_eigenvalues_and_recurrence() {
        let m = random_spd(20, 11, 0.3);
        let a = dense_map(&m);
        let diag: Vec<f64> = (0..20).map(|i| m[(i, i)]).collect();
        let g = DiagonalFactor::sqrt_of(&diag).unwrap();
        let start: Vec<f64> = (0..20).map(|i| (i as f64 + 0.5).sin()).collect();
        let basis = lanczos(&a, &start, 20, &g).unwrap();
        assert_eq!(basis.k, 20);
        assert!(basis.orthogonality_error() < 1e-8);
        let mut et: Vec<f64> = SymmetricEigen::new(basis.t_dense()).eigenvalues.iter().copied().collect();
        let mp = preconditioned_dense(&m, &g);
        let mut em: Vec<f64> = SymmetricEigen::new(mp.clone()).eigenvalues.iter().copied().collect();
        et.sort_by(f64::total_cmp);
        em.sort_by(f64::total_cmp);
        for (x, y) in et.iter().zip(&em) {
            assert!((x - y).abs() < 1e-8);
        }
        // recurrence residual at k < n
        let k = 8;
        let basis = lanczos(&a, &start, k, &g).unwrap();
        let v = DMatrix::from_fn(20, k, |i, j| basis.v[j][i]);
        let mut res = &mp * &v - &v * basis.t_dense();
        let op = SplitPreconditioned { a: &a, g: &g };
        let w = op.apply(&basis.v[k - 1]);
        // v_{k+1} = (A v_k − α_k v_k − β_{k−1} v_{k−1}) / β_{k+1}, orthogonalized
        let mut next = w.clone();
        for vi in &basis.v {
            let c = dot(&next, vi);
            next.iter_mut().zip(vi).for_each(|(a, b)| *a -= c * b);
        }
        let nn = norm2(&next);
        assert!((nn - basis.beta_next).abs() < 1e-10);
        for i in 0..20 {
            res[(i, k - 1)] -= next[i];
        }
        assert!(res.amax() < 1e-8);
    }

    #[test]
    fn inv_sqrt_full_rank_and_squared() {
        let m = random_spd(20, 21, 0.4);
        let a = dense_map(&m);
        let g = IdentityFactor(20);
        let b: Vec<f64> = (0..20).map(|i| (i as f64 * 1.3).cos()).collect();
        let y = apply_inv_sqrt(&a, &g, &b, 20).unwrap();
        let eig = SymmetricEigen::new(m.clone());
        let f = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        let isq = &eig.eigenvectors * f * eig.eigenvectors.transpose();
        let yd = &isq * DVector::from_column_slice(&b);
        assert!(rel(&y, yd.as_slice()) < 1e-8);
        let y2 = apply_inv_sqrt(&a, &g, &y, 20).unwrap();
        let (xc, _) = cg_solve(&a, &b, 1e-12, 200, None).unwrap();
        assert!(rel(&y2, &xc) < 1e-6);
    }

    #[test]
    fn inv_sqrt_rejects_indefinite() {
        let a = CsrMatrix::from_diagonal(&[1.0, -2.0, 3.0]);
        assert!(apply_inv_sqrt(&a, &IdentityFactor(3), &[1.0, 1.0, 1.0], 3).is_err());
    }

    #[test]
    fn sampler_diagonal_variances() {
        let d = [1.0, 2.0, 4.0, 0.5, 10.0];
        let h = CsrMatrix::from_diagonal(&d);
        let g = DiagonalFactor::sqrt_of(&d).unwrap();
        let n = 100_000;
        let mut acc = [0.0; 5];
        for s in 0..n {
            let (x, _) = sample_gaussian(&h, &g, 5, s).unwrap();
            for i in 0..5 {
                acc[i] += x[i] * x[i];
            }
        }
        for i in 0..5 {
            let v = acc[i] / n as f64;
            assert!((v * d[i] - 1.0).abs() < 0.03, "coordinate {i}: {v}");
        }
        assert_eq!(sample_gaussian(&h, &g, 5, 42).unwrap().0, sample_gaussian(&h, &g, 5, 42).unwrap().0);
    }

    #[test]
    fn sampler_covariance_dense_oracle() {
        let n = 50;
        let m = random_spd(n, 31, 0.5);
        let h = dense_map(&m);
        let diag: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
        let g = DiagonalFactor::sqrt_of(&diag).unwrap();
        let cov = m.clone().try_inverse().unwrap();
        let ns = 20_000;
        let mut c = DMatrix::<f64>::zeros(n, n);
        for s in 0..ns {
            let (x, _) = sample_gaussian(&h, &g, n, s as u64).unwrap();
            let v = DVector::from_column_slice(&x);
            c.ger(1.0, &v, &v, 1.0);
        }
        c /= ns as f64;
        assert!((c - &cov).norm() / cov.norm() < 0.10);
    }

    #[test]
    fn s_factor_identity_full_rank() {
        let n = 30;
        let m = random_spd(n, 41, 0.3);
        let h = dense_map(&m);
        let diag: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
        let g = DiagonalFactor::sqrt_of(&diag).unwrap();
        let mut s = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let (col, _) = sampler_apply(&h, &g, &e, n).unwrap();
            s.set_column(j, &DVector::from_column_slice(&col));
        }
        let cov = m.try_inverse().unwrap();
        assert!((&s * s.transpose() - &cov).norm() / cov.norm() < 1e-6);
    }

    proptest! {
        #[test]
        fn lanczos_orthonormal_and_t_positive(seed in 0u64..500, k in 1usize..25) {
            let m = random_spd(25, seed, 0.2);
            let a = dense_map(&m);
            let start = rng::standard_normal(&mut rng::stream(seed, 5), 25);
            let basis = lanczos(&a, &start, k, &IdentityFactor(25)).unwrap();
            prop_assert!(basis.orthogonality_error() < 1e-8);
            let eig = SymmetricEigen::new(basis.t_dense());
            prop_assert!(eig.eigenvalues.iter().all(|&l| l > 0.0));
        }

        #[test]
        fn cg_meets_tolerance(seed in 0u64..500) {
            let m = random_spd(30, seed, 0.5);
            let a = dense_map(&m);
            let b = rng::standard_normal(&mut rng::stream(seed, 6), 30);
            let (x, rep) = cg_solve(&a, &b, 1e-9, 200, None).unwrap();
            prop_assert!(rep.converged);
            let r: Vec<f64> = a.matvec(&x).iter().zip(&b).map(|(p, q)| q - p).collect();
            prop_assert!(norm2(&r) <= 1e-9 * norm2(&b) * 10.0);
        }
    }
}
