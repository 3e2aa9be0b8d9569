//! Multiple-level-set parameterization of a piecewise-constant field.
//!
//! With `nls` level-set functions `φ_1..φ_nls` on an `n`-pixel grid and
//! `2^nls` magnitudes `c`, the field is
//!
//! ```text
//! m(p) = Σ_j c[j] Π_i F_ij(φ_i(p)),   F_ij = H_ε    if bit i of j is 0
//!                                            1 - H_ε if bit i of j is 1
//! ```
//!
//! so bit `i` of the magnitude index selects the side of level set `i`; the
//! magnitude with multi-index `(b_1, ..., b_nls)` lives at `Σ b_i 2^(i-1)`.
//!
//! `H_ε` is the C¹ mollified Heaviside
//! `½ + x/(2ε) + sin(πx/ε)/(2π)` on `[-ε, ε]`, clamped to 0 and 1 outside.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::ops::{CsrMatrix, LinearMap};

/// Label recorded in run metadata for the mollifier in use.
pub const MOLLIFIER_CONVENTION: &str = "C1: 1/2 + x/(2 eps) + sin(pi x / eps)/(2 pi)";

/// Default mollifier half-width.
pub const DEFAULT_EPSILON: f64 = 1e-2;

/// Mollified Heaviside `H_ε(x)`.
pub fn heaviside_mollified(x: f64, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    Ok(heaviside(x, epsilon))
}

/// Analytic derivative `δ_ε(x) = (1 + cos(πx/ε)) / (2ε)` inside the band, 0 outside.
pub fn heaviside_derivative(x: f64, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    Ok(heaviside_deriv(x, epsilon))
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "mollifier half-width must be positive, got {epsilon}"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn heaviside(x: f64, eps: f64) -> f64 {
    if x > eps {
        1.0
    } else if x < -eps {
        0.0
    } else {
        0.5 + x / (2.0 * eps) + (PI * x / eps).sin() / (2.0 * PI)
    }
}

#[inline]
pub(crate) fn heaviside_deriv(x: f64, eps: f64) -> f64 {
    if x.abs() > eps {
        0.0
    } else {
        (1.0 + (PI * x / eps).cos()) / (2.0 * eps)
    }
}

/// Smallest `nls` with `2^(nls-1) < regions <= 2^nls`.
pub fn levelsets_for_regions(regions: usize) -> Result<usize> {
    if regions < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two regions, got {regions}"
        )));
    }
    let mut nls = 1;
    while (1usize << nls) < regions {
        nls += 1;
    }
    Ok(nls)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSetConfig {
    pub nls: usize,
    pub n: usize,
    pub epsilon: f64,
}

impl LevelSetConfig {
    pub fn new(nls: usize, n: usize, epsilon: f64) -> Result<Self> {
        if nls == 0 || nls > 8 {
            return Err(Error::InvalidArgument(format!(
                "number of level sets must be in 1..=8, got {nls}"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("grid must have pixels".into()));
        }
        check_epsilon(epsilon)?;
        Ok(Self { nls, n, epsilon })
    }

    /// Configuration sized for `regions` distinct magnitudes.
    pub fn for_regions(regions: usize, n: usize, epsilon: f64) -> Result<Self> {
        Self::new(levelsets_for_regions(regions)?, n, epsilon)
    }

    pub fn n_magnitudes(&self) -> usize {
        1 << self.nls
    }

    /// Length of the stacked unknown `x = [Φ; c]`.
    pub fn state_len(&self) -> usize {
        self.n * self.nls + self.n_magnitudes()
    }
}

/// The unknown `x = [φ_1; ...; φ_nls; c]`, stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetState {
    nls: usize,
    n: usize,
    values: Vec<f64>,
}

impl LevelSetState {
    pub fn from_parts(phi: &[Vec<f64>], c: &[f64]) -> Result<Self> {
        let nls = phi.len();
        if nls == 0 {
            return Err(Error::InvalidArgument("no level sets".into()));
        }
        let n = phi[0].len();
        let mut values = Vec::with_capacity(n * nls + c.len());
        for p in phi {
            check_len("level-set grid", n, p.len())?;
            values.extend_from_slice(p);
        }
        check_len("magnitude vector", 1 << nls, c.len())?;
        values.extend_from_slice(c);
        Self::from_flat(nls, n, values)
    }

    pub fn from_flat(nls: usize, n: usize, values: Vec<f64>) -> Result<Self> {
        check_len("level-set state", n * nls + (1 << nls), values.len())?;
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { nls, n, values })
    }

    pub fn for_config(cfg: &LevelSetConfig, values: Vec<f64>) -> Result<Self> {
        Self::from_flat(cfg.nls, cfg.n, values)
    }

    pub fn nls(&self) -> usize {
        self.nls
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn phi(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn phi_all(&self) -> &[f64] {
        &self.values[..self.n * self.nls]
    }

    pub fn c(&self) -> &[f64] {
        &self.values[self.n * self.nls..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// `self + t * dir`, same shape.
    pub fn offset(&self, t: f64, dir: &[f64]) -> Result<Self> {
        check_len("state offset", self.values.len(), dir.len())?;
        let values = self.values.iter().zip(dir).map(|(a, d)| a + t * d).collect();
        Self::from_flat(self.nls, self.n, values)
    }

    fn check_config(&self, cfg: &LevelSetConfig) -> Result<()> {
        check_len("number of level sets", cfg.nls, self.nls)?;
        check_len("grid size", cfg.n, self.n)
    }
}

/// Per-pixel factor products: `prod[j] = Π_i F_ij(φ_i)`.
fn products(h: &[f64], out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let mut p = 1.0;
        for (i, &hi) in h.iter().enumerate() {
            p *= if (j >> i) & 1 == 0 { hi } else { 1.0 - hi };
        }
        *o = p;
    }
}

/// The field `m(Φ, c)` on every pixel.
pub fn assemble_field(state: &LevelSetState, cfg: &LevelSetConfig) -> Result<Vec<f64>> {
    state.check_config(cfg)?;
    let (n, nls, nm) = (cfg.n, cfg.nls, cfg.n_magnitudes());
    let c = state.c();
    let mut h = vec![0.0; nls];
    let mut prod = vec![0.0; nm];
    let mut m = vec![0.0; n];
    for (p, mp) in m.iter_mut().enumerate() {
        for (i, hi) in h.iter_mut().enumerate() {
            *hi = heaviside(state.phi(i)[p], cfg.epsilon);
        }
        products(&h, &mut prod);
        *mp = prod.iter().zip(c).map(|(a, b)| a * b).sum();
    }
    Ok(m)
}

/// Sparse Jacobian `∂m/∂x = [∂m/∂φ_1 ... ∂m/∂φ_nls  ∂m/∂c]`.
///
/// The `∂m/∂φ_i` blocks are diagonal and kept as their diagonals; `∂m/∂c`
/// is a dense `n × 2^nls` row-major array whose rows are partitions of unity.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetJacobian {
    n: usize,
    nls: usize,
    d_phi: Vec<Vec<f64>>,
    d_c: Vec<f64>,
}

impl LevelSetJacobian {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nls(&self) -> usize {
        self.nls
    }

    pub fn n_magnitudes(&self) -> usize {
        1 << self.nls
    }

    /// Diagonal of `∂m/∂φ_i`.
    pub fn d_phi_diag(&self, i: usize) -> &[f64] {
        &self.d_phi[i]
    }

    /// `∂m/∂φ_i` as a sparse diagonal matrix.
    pub fn d_phi_block(&self, i: usize) -> CsrMatrix {
        CsrMatrix::from_diagonal(&self.d_phi[i])
    }

    /// Row-major `n × 2^nls` array `∂m/∂c`.
    pub fn d_c(&self) -> &[f64] {
        &self.d_c
    }

    pub fn d_c_row(&self, p: usize) -> &[f64] {
        let nm = self.n_magnitudes();
        &self.d_c[p * nm..(p + 1) * nm]
    }

    pub fn in_dim(&self) -> usize {
        self.n * self.nls + self.n_magnitudes()
    }
}

pub fn assemble_jacobian(state: &LevelSetState, cfg: &LevelSetConfig) -> Result<LevelSetJacobian> {
    state.check_config(cfg)?;
    let (n, nls, nm) = (cfg.n, cfg.nls, cfg.n_magnitudes());
    let c = state.c();
    let mut d_phi = vec![vec![0.0; n]; nls];
    let mut d_c = vec![0.0; n * nm];
    let mut h = vec![0.0; nls];
    let mut dh = vec![0.0; nls];
    for p in 0..n {
        for i in 0..nls {
            let x = state.phi(i)[p];
            h[i] = heaviside(x, cfg.epsilon);
            dh[i] = heaviside_deriv(x, cfg.epsilon);
        }
        products(&h, &mut d_c[p * nm..(p + 1) * nm]);
        for i in 0..nls {
            if dh[i] == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for (j, &cj) in c.iter().enumerate() {
                let mut prod = 1.0;
                for (l, &hl) in h.iter().enumerate() {
                    if l != i {
                        prod *= if (j >> l) & 1 == 0 { hl } else { 1.0 - hl };
                    }
                }
                let sign = if (j >> i) & 1 == 0 { 1.0 } else { -1.0 };
                s += sign * cj * prod;
            }
            d_phi[i][p] = dh[i] * s;
        }
    }
    Ok(LevelSetJacobian {
        n,
        nls,
        d_phi,
        d_c,
    })
}

/// `∂m/∂x` as a matrix-free operator from state space to pixels.
pub fn jacobian_as_linear_map(jac: LevelSetJacobian) -> LevelSetJacobianMap {
    LevelSetJacobianMap(jac)
}

pub struct LevelSetJacobianMap(pub LevelSetJacobian);

impl LinearMap for LevelSetJacobianMap {
    fn in_dim(&self) -> usize {
        self.0.in_dim()
    }

    fn out_dim(&self) -> usize {
        self.0.n
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let j = &self.0;
        assert_eq!(x.len(), j.in_dim(), "level-set Jacobian input length");
        let (n, nm) = (j.n, j.n_magnitudes());
        let xc = &x[n * j.nls..];
        let mut out: Vec<f64> = (0..n)
            .map(|p| {
                let row = &j.d_c[p * nm..(p + 1) * nm];
                row.iter().zip(xc).map(|(a, b)| a * b).sum()
            })
            .collect();
        for (i, dphi) in j.d_phi.iter().enumerate() {
            let seg = &x[i * n..(i + 1) * n];
            for p in 0..n {
                out[p] += dphi[p] * seg[p];
            }
        }
        out
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let j = &self.0;
        assert_eq!(y.len(), j.n, "level-set Jacobian adjoint length");
        let (n, nm) = (j.n, j.n_magnitudes());
        let mut out = Vec::with_capacity(j.in_dim());
        for dphi in &j.d_phi {
            out.extend(dphi.iter().zip(y).map(|(a, b)| a * b));
        }
        let mut gc = vec![0.0; nm];
        for p in 0..n {
            let row = &j.d_c[p * nm..(p + 1) * nm];
            for (g, r) in gc.iter_mut().zip(row) {
                *g += r * y[p];
            }
        }
        out.extend(gc);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::adjoint_mismatch;
    use crate::rng;
    use proptest::prelude::*;

    const EPS: f64 = 1e-2;

    fn random_state(nls: usize, n: usize, seed: u64) -> LevelSetState {
        let mut r = rng::stream(seed, 0);
        // keep a good fraction of pixels inside the transition band
        let phi: Vec<Vec<f64>> = (0..nls)
            .map(|_| rng::uniform(&mut r, n, -2.0 * EPS, 2.0 * EPS))
            .collect();
        let c = rng::uniform(&mut r, 1 << nls, -1.0, 2.0);
        LevelSetState::from_parts(&phi, &c).unwrap()
    }

    // literal multi-index summation written out independently of `products`
    fn brute_force_field(state: &LevelSetState, cfg: &LevelSetConfig) -> Vec<f64> {
        let nls = cfg.nls;
        (0..cfg.n)
            .map(|p| {
                let mut total = 0.0;
                let mut bits = vec![0usize; nls];
                loop {
                    let mut term = 1.0;
                    let mut offset = 0;
                    for i in 0..nls {
                        let h = heaviside_mollified(state.phi(i)[p], cfg.epsilon).unwrap();
                        term *= if bits[i] == 0 { h } else { 1.0 - h };
                        offset += bits[i] * (1 << i);
                    }
                    total += state.c()[offset] * term;
                    // odometer increment over {0,1}^nls
                    let mut k = 0;
                    while k < nls && bits[k] == 1 {
                        bits[k] = 0;
                        k += 1;
                    }
                    if k == nls {
                        break;
                    }
                    bits[k] = 1;
                }
                total
            })
            .collect()
    }

    #[test]
    fn heaviside_values() {
        assert_eq!(heaviside_mollified(2.0 * EPS, EPS).unwrap(), 1.0);
        assert_eq!(heaviside_mollified(-2.0 * EPS, EPS).unwrap(), 0.0);
        assert!((heaviside_mollified(0.0, EPS).unwrap() - 0.5).abs() < 1e-15);
        assert!(heaviside_mollified(0.0, 0.0).is_err());
        assert!(heaviside_derivative(0.0, -1.0).is_err());
    }

    #[test]
    fn heaviside_continuity_at_band_edges() {
        for &x in &[EPS, -EPS] {
            let inside = 0.5 + x / (2.0 * EPS) + (PI * x / EPS).sin() / (2.0 * PI);
            let outside = if x > 0.0 { 1.0 } else { 0.0 };
            assert!((inside - outside).abs() < 1e-15);
            assert!(heaviside_derivative(x, EPS).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_at_zero_and_outside() {
        let d0 = heaviside_derivative(0.0, EPS).unwrap();
        assert!((d0 - 1.0 / EPS).abs() < 1e-10);
        let h = 1e-7;
        let fd = (heaviside(h, EPS) - heaviside(-h, EPS)) / (2.0 * h);
        assert!((fd - d0).abs() / d0 < 1e-8);
        assert_eq!(heaviside_derivative(2.0 * EPS, EPS).unwrap(), 0.0);
    }

    #[test]
    fn nls_rule() {
        assert_eq!(levelsets_for_regions(2).unwrap(), 1);
        assert_eq!(levelsets_for_regions(3).unwrap(), 2);
        assert_eq!(levelsets_for_regions(4).unwrap(), 2);
        assert_eq!(levelsets_for_regions(5).unwrap(), 3);
        assert_eq!(levelsets_for_regions(8).unwrap(), 3);
        assert!(levelsets_for_regions(1).is_err());
    }

    #[test]
    fn saturated_two_levelsets() {
        let cfg = LevelSetConfig::new(2, 4, EPS).unwrap();
        let c = [1.0, 2.0, 3.0, 4.0];
        let s = LevelSetState::from_parts(&[vec![10.0 * EPS; 4], vec![10.0 * EPS; 4]], &c).unwrap();
        assert_eq!(assemble_field(&s, &cfg).unwrap(), vec![1.0; 4]);
        // bits (b1, b2) = (0, 1) -> offset 2
        let s = LevelSetState::from_parts(&[vec![10.0 * EPS; 4], vec![-10.0 * EPS; 4]], &c).unwrap();
        assert_eq!(assemble_field(&s, &cfg).unwrap(), vec![3.0; 4]);
        let j = assemble_jacobian(&s, &cfg).unwrap();
        assert!(j.d_phi_diag(0).iter().chain(j.d_phi_diag(1)).all(|&v| v == 0.0));
    }

    #[test]
    fn single_levelset_reduces_to_two_region_formula() {
        let cfg = LevelSetConfig::new(1, 32, EPS).unwrap();
        let s = random_state(1, 32, 5);
        let m = assemble_field(&s, &cfg).unwrap();
        for p in 0..32 {
            let h = heaviside(s.phi(0)[p], EPS);
            let expect = s.c()[0] * h + s.c()[1] * (1.0 - h);
            assert!((m[p] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn field_matches_brute_force() {
        for nls in 1..=3 {
            let cfg = LevelSetConfig::new(nls, 16, EPS).unwrap();
            let s = random_state(nls, 16, 10 + nls as u64);
            let m = assemble_field(&s, &cfg).unwrap();
            let b = brute_force_field(&s, &cfg);
            for p in 0..16 {
                assert!((m[p] - b[p]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for nls in 1..=3 {
            for trial in 0..5 {
                let n = 64;
                let cfg = LevelSetConfig::new(nls, n, EPS).unwrap();
                let s = random_state(nls, n, 100 * nls as u64 + trial);
                let jm = jacobian_as_linear_map(assemble_jacobian(&s, &cfg).unwrap());
                let mut r = rng::stream(trial, 9);
                let mut v = rng::standard_normal(&mut r, cfg.state_len());
                // scale the level-set part to the band width
                for x in v.iter_mut().take(n * nls) {
                    *x *= EPS;
                }
                let t = 1e-6;
                let fp = assemble_field(&s.offset(t, &v).unwrap(), &cfg).unwrap();
                let fm = assemble_field(&s.offset(-t, &v).unwrap(), &cfg).unwrap();
                let fd: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * t)).collect();
                let jv = jm.apply(&v);
                let num: f64 = fd.iter().zip(&jv).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let den: f64 = jv.iter().map(|a| a * a).sum::<f64>().sqrt();
                assert!(num / den < 1e-5, "nls={nls} trial={trial}: {}", num / den);
            }
        }
    }

    #[test]
    fn jacobian_map_basics() {
        let cfg = LevelSetConfig::new(2, 10, EPS).unwrap();
        let s = random_state(2, 10, 77);
        let jac = assemble_jacobian(&s, &cfg).unwrap();
        let map = jacobian_as_linear_map(jac.clone());
        assert_eq!(map.apply(&vec![0.0; cfg.state_len()]), vec![0.0; 10]);
        let j = 3;
        let mut e = vec![0.0; cfg.state_len()];
        e[20 + j] = 1.0;
        let col = map.apply(&e);
        for p in 0..10 {
            assert_eq!(col[p], jac.d_c_row(p)[j]);
        }
        assert!(adjoint_mismatch(&map, 10, 1) < 1e-10);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let cfg = LevelSetConfig::new(2, 10, EPS).unwrap();
        let s = random_state(2, 12, 1);
        assert!(assemble_field(&s, &cfg).is_err());
        assert!(LevelSetState::from_flat(2, 4, vec![0.0; 5]).is_err());
    }

    proptest! {
        #[test]
        fn partition_of_unity(seed in 0u64..10_000, nls in 1usize..=4) {
            let cfg = LevelSetConfig::new(nls, 8, EPS).unwrap();
            let s = random_state(nls, 8, seed);
            let j = assemble_jacobian(&s, &cfg).unwrap();
            for p in 0..8 {
                let row = j.d_c_row(p);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }

        #[test]
        fn mollifier_bounds_and_monotone(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let (hl, hh) = (heaviside(lo * EPS, EPS), heaviside(hi * EPS, EPS));
            prop_assert!((0.0..=1.0).contains(&hl) && (0.0..=1.0).contains(&hh));
            prop_assert!(hl <= hh + 1e-15);
        }

        #[test]
        fn derivative_matches_fd(u in -0.999f64..0.999) {
            let x = u * EPS;
            let h = 1e-9;
            let fd = (heaviside(x + h, EPS) - heaviside(x - h, EPS)) / (2.0 * h);
            let d = heaviside_deriv(x, EPS);
            prop_assert!((fd - d).abs() <= 1e-6 * d.max(1.0));
        }

        #[test]
        fn saturation_gives_pure_magnitudes(seed in 0u64..1000) {
            let cfg = LevelSetConfig::new(2, 6, EPS).unwrap();
            let mut r = rng::stream(seed, 1);
            let phi: Vec<Vec<f64>> = (0..2).map(|_| {
                rng::uniform(&mut r, 6, 1.5 * EPS, 1.0)
                    .into_iter()
                    .enumerate()
                    .map(|(k, v)| if k % 2 == 0 { v } else { -v })
                    .collect()
            }).collect();
            let c = rng::uniform(&mut r, 4, -1.0, 1.0);
            let s = LevelSetState::from_parts(&phi, &c).unwrap();
            let m = assemble_field(&s, &cfg).unwrap();
            for v in m {
                prop_assert!(c.iter().any(|&cj| cj == v));
            }
        }
    }
}
