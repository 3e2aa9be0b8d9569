//! Gaussian priors: a GMRF on each level-set grid and an isotropic prior on
//! the magnitudes, combined into one block-diagonal prior on `x = [Φ; c]`.
//!
//! The level-set precision is `I_nls ⊗ λ_Φ² (αL + γI)²` with `L` the
//! Neumann graph Laplacian of the pixel lattice. Because it is an exact
//! square, the factor `G = I_nls ⊗ λ_Φ (αL + γI)` is used directly and
//! `G Gᵀ` reproduces the precision to rounding.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::levelset::LevelSetState;
use crate::ops::{
    BlockDiagFactor, CooBuilder, CsrMatrix, KronFactor, MapRef, PrecisionFactor, PrecisionMap,
    ScaledIdentityFactor, SymmetricSparseFactor,
};
use crate::rng;

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_GAMMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmrfSpec {
    pub rows: usize,
    pub cols: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub lambda_phi_sq: f64,
}

impl GmrfSpec {
    pub fn new(rows: usize, cols: usize, lambda_phi_sq: f64) -> Self {
        Self {
            rows,
            cols,
            alpha: DEFAULT_ALPHA,
            gamma: DEFAULT_GAMMA,
            lambda_phi_sq,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("lambda_phi_sq", self.lambda_phi_sq),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "GMRF {name} must be positive, got {v}"
                )));
            }
        }
        check_grid(self.rows, self.cols)
    }
}

fn check_grid(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 || rows * cols < 2 {
        return Err(Error::InvalidArgument(format!(
            "degenerate {rows}x{cols} grid"
        )));
    }
    Ok(())
}

/// Five-point `-Δ` on a `rows × cols` lattice (row-major, unit spacing) with
/// homogeneous Neumann conditions: each pixel couples only to the neighbours
/// it has, so constants are in the null space.
pub fn build_laplacian(rows: usize, cols: usize) -> Result<CsrMatrix> {
    check_grid(rows, cols)?;
    let n = rows * cols;
    let mut b = CooBuilder::with_capacity(n, n, 5 * n);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let mut link = |j: usize| {
                b.push(i, i, 1.0);
                b.push(i, j, -1.0);
            };
            if c > 0 {
                link(i - 1);
            }
            if c + 1 < cols {
                link(i + 1);
            }
            if r > 0 {
                link(i - cols);
            }
            if r + 1 < rows {
                link(i + cols);
            }
        }
    }
    Ok(b.build())
}

/// Mean plus an exact precision factor `G` (`G Gᵀ = Γ⁻¹`).
#[derive(Clone)]
pub struct GaussianPrior {
    mean: Vec<f64>,
    factor: Arc<dyn PrecisionFactor>,
}

impl std::fmt::Debug for GaussianPrior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaussianPrior")
            .field("dim", &self.dim())
            .finish()
    }
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, factor: Arc<dyn PrecisionFactor>) -> Result<Self> {
        check_len("prior mean vs factor", factor.dim(), mean.len())?;
        Ok(Self { mean, factor })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn factor(&self) -> &Arc<dyn PrecisionFactor> {
        &self.factor
    }

    /// The precision `G Gᵀ` as a linear map.
    pub fn precision(&self) -> MapRef {
        Arc::new(PrecisionMap(self.factor.clone()))
    }

    pub fn apply_precision(&self, v: &[f64]) -> Vec<f64> {
        self.factor.apply_precision(v)
    }

    /// `½ (x − μ)ᵀ Γ⁻¹ (x − μ)`
    pub fn neg_log_density(&self, x: &[f64]) -> Result<f64> {
        check_len("prior argument", self.dim(), x.len())?;
        let d: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let w = self.factor.apply_factor_adjoint(&d);
        Ok(0.5 * w.iter().map(|v| v * v).sum::<f64>())
    }

    /// `Γ⁻¹ (x − μ)`
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("prior argument", self.dim(), x.len())?;
        let d: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        Ok(self.factor.apply_precision(&d))
    }

    /// `μ + G⁻ᵀ η`, `η` standard normal.
    pub fn sample_with(&self, eta: &[f64]) -> Result<Vec<f64>> {
        check_len("prior sample noise", self.dim(), eta.len())?;
        let z = self.factor.solve_adjoint(eta);
        if let Some(index) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(z.iter().zip(&self.mean).map(|(a, b)| a + b).collect())
    }
}

/// Level-set prior `N(0, (I_nls ⊗ λ_Φ²(αL+γI)²)⁻¹)`.
pub fn build_gmrf_prior(spec: &GmrfSpec, nls: usize) -> Result<GaussianPrior> {
    spec.validate()?;
    if nls == 0 {
        return Err(Error::InvalidArgument("need at least one level set".into()));
    }
    let b = build_laplacian(spec.rows, spec.cols)?.shifted(spec.alpha, spec.gamma);
    let block: Arc<dyn PrecisionFactor> =
        Arc::new(SymmetricSparseFactor::new(b, spec.lambda_phi_sq.sqrt())?);
    let factor = Arc::new(KronFactor::new(block, nls)?);
    GaussianPrior::new(vec![0.0; spec.rows * spec.cols * nls], factor)
}

/// Magnitude prior with precision `λ_c² I`; `λ_c²` enters the objective as
/// `(λ_c²/2)‖c − μ_c‖²`.
pub fn build_c_prior(dim: usize, lambda_c_sq: f64, mean: Vec<f64>) -> Result<GaussianPrior> {
    if !(lambda_c_sq > 0.0) || !lambda_c_sq.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda_c_sq must be positive, got {lambda_c_sq}"
        )));
    }
    check_len("magnitude prior mean", dim, mean.len())?;
    GaussianPrior::new(
        mean,
        Arc::new(ScaledIdentityFactor {
            dim,
            scale: lambda_c_sq.sqrt(),
        }),
    )
}

/// `blockdiag(Φ prior, c prior)` on the stacked state.
#[derive(Clone, Debug)]
pub struct JointPrior {
    phi: GaussianPrior,
    c: GaussianPrior,
    joint: GaussianPrior,
}

impl JointPrior {
    pub fn new(phi: GaussianPrior, c: GaussianPrior) -> Result<Self> {
        let mut mean = phi.mean().to_vec();
        mean.extend_from_slice(c.mean());
        let factor = Arc::new(BlockDiagFactor::new(vec![phi.factor.clone(), c.factor.clone()]));
        let joint = GaussianPrior::new(mean, factor)?;
        Ok(Self { phi, c, joint })
    }

    pub fn phi_prior(&self) -> &GaussianPrior {
        &self.phi
    }

    pub fn c_prior(&self) -> &GaussianPrior {
        &self.c
    }

    pub fn joint(&self) -> &GaussianPrior {
        &self.joint
    }

    pub fn dim(&self) -> usize {
        self.joint.dim()
    }

    pub fn mean(&self) -> &[f64] {
        self.joint.mean()
    }

    pub fn joint_factor(&self) -> &Arc<dyn PrecisionFactor> {
        self.joint.factor()
    }

    pub fn joint_precision(&self) -> MapRef {
        self.joint.precision()
    }
}

/// Regularization term `½ (x − μ)ᵀ Γ_prior⁻¹ (x − μ)`.
pub fn prior_logdensity_neg(prior: &JointPrior, x: &LevelSetState) -> Result<f64> {
    prior.joint.neg_log_density(x.as_slice())
}

/// One exact draw `μ + G⁻ᵀ η` with `η` from the seeded stream.
pub fn sample_prior(prior: &GaussianPrior, seed: u64) -> Result<Vec<f64>> {
    let mut r = rng::stream(seed, 0);
    let eta = rng::standard_normal(&mut r, prior.dim());
    prior.sample_with(&eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{densify, LinearMap};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den.max(1e-300)
    }

    fn probe(n: usize, seed: u64) -> Vec<f64> {
        rng::standard_normal(&mut rng::stream(seed, 3), n)
    }

    fn joint(rows: usize, cols: usize, nls: usize) -> JointPrior {
        let phi = build_gmrf_prior(&GmrfSpec::new(rows, cols, 2.5), nls).unwrap();
        let nm = 1 << nls;
        let c = build_c_prior(nm, 25.0, (0..nm).map(|j| j as f64).collect()).unwrap();
        JointPrior::new(phi, c).unwrap()
    }

    #[test]
    fn laplacian_basics() {
        let l = build_laplacian(5, 7).unwrap();
        assert!(l.matvec(&[1.0; 35]).iter().all(|v| v.abs() < 1e-15));
        assert!(l.is_symmetric(0.0));
        assert_eq!(l.to_dense(), l.transpose().to_dense());
        let l = build_laplacian(1, 3).unwrap();
        assert_eq!((l.get(1, 0), l.get(1, 1), l.get(1, 2)), (-1.0, 2.0, -1.0));
        assert!(build_laplacian(0, 4).is_err());
        assert!(build_laplacian(1, 1).is_err());
    }

    #[test]
    fn gmrf_precision_two_stage() {
        let spec = GmrfSpec::new(6, 5, 3.0);
        let p = build_gmrf_prior(&spec, 2).unwrap();
        let b = build_laplacian(6, 5).unwrap().shifted(spec.alpha, spec.gamma);
        let v = probe(60, 1);
        let got = p.apply_precision(&v);
        for k in 0..2 {
            let seg = &v[k * 30..(k + 1) * 30];
            let expect: Vec<f64> = b.matvec(&b.matvec(seg)).iter().map(|x| 3.0 * x).collect();
            assert!(rel(&got[k * 30..(k + 1) * 30], &expect) < 1e-12);
        }
        let f = p.factor();
        assert!(rel(&f.solve(&f.apply_factor(&v)), &v) < 1e-10);
        assert!(p.mean().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn gmrf_small_alpha_limit() {
        let spec = GmrfSpec {
            alpha: 1e-12,
            ..GmrfSpec::new(4, 4, 2.0)
        };
        let p = build_gmrf_prior(&spec, 1).unwrap();
        let v = probe(16, 2);
        let expect: Vec<f64> = v.iter().map(|x| 2.0 * 0.01 * x).collect();
        assert!(rel(&p.apply_precision(&v), &expect) < 1e-9);
    }

    #[test]
    fn invalid_specs() {
        let bad = GmrfSpec {
            gamma: 0.0,
            ..GmrfSpec::new(4, 4, 1.0)
        };
        assert!(build_gmrf_prior(&bad, 1).is_err());
        assert!(build_gmrf_prior(&GmrfSpec::new(4, 4, -1.0), 1).is_err());
        assert!(build_c_prior(4, 0.0, vec![0.0; 4]).is_err());
        assert!(build_c_prior(4, 1.0, vec![0.0; 3]).is_err());
    }

    #[test]
    fn c_prior_scaling_and_mean() {
        let mean = vec![-4.0, -3.0];
        let p = build_c_prior(2, 7.0, mean.clone()).unwrap();
        assert!(rel(&p.apply_precision(&[1.0, 2.0]), &[7.0, 14.0]) < 1e-15);
        assert!(p.gradient(&mean).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn logdensity_properties() {
        let jp = joint(4, 4, 2);
        let mu = jp.mean().to_vec();
        let s = LevelSetState::from_flat(2, 16, mu.clone()).unwrap();
        assert_eq!(prior_logdensity_neg(&jp, &s).unwrap(), 0.0);
        let d = probe(jp.dim(), 4);
        let x1: Vec<f64> = mu.iter().zip(&d).map(|(m, v)| m + v).collect();
        let x2: Vec<f64> = mu.iter().zip(&d).map(|(m, v)| m + 2.0 * v).collect();
        let f1 = prior_logdensity_neg(&jp, &LevelSetState::from_flat(2, 16, x1).unwrap()).unwrap();
        let f2 = prior_logdensity_neg(&jp, &LevelSetState::from_flat(2, 16, x2).unwrap()).unwrap();
        assert!((f2 - 4.0 * f1).abs() < 1e-12 * f2);
        // dense quadratic form
        let p = densify(jp.joint_precision().as_ref()).unwrap();
        let dv = DMatrix::from_column_slice(jp.dim(), 1, &d);
        let q = 0.5 * (dv.transpose() * &p * &dv)[(0, 0)];
        assert!((q - f1).abs() < 1e-12 * q);
    }

    #[test]
    fn sampling_reproducible_and_mean() {
        let p = build_c_prior(3, 4.0, vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(sample_prior(&p, 9).unwrap(), sample_prior(&p, 9).unwrap());
        let n = 10_000;
        let mut acc = [0.0; 3];
        for s in 0..n {
            let x = sample_prior(&p, s).unwrap();
            for i in 0..3 {
                acc[i] += x[i];
            }
        }
        let sigma = 0.5;
        for i in 0..3 {
            let m = acc[i] / n as f64;
            assert!((m - p.mean()[i]).abs() <= 4.0 * sigma / (n as f64).sqrt());
        }
    }

    #[test]
    fn sample_covariance_of_toy_gmrf() {
        let spec = GmrfSpec {
            alpha: 1.0,
            gamma: 0.5,
            ..GmrfSpec::new(1, 3, 1.0)
        };
        let p = build_gmrf_prior(&spec, 1).unwrap();
        let cov = densify(p.precision().as_ref()).unwrap().try_inverse().unwrap();
        let n = 100_000;
        let eta_all = rng::standard_normal(&mut rng::stream(77, 0), 3 * n);
        let mut c = DMatrix::<f64>::zeros(3, 3);
        for k in 0..n {
            let x = p.sample_with(&eta_all[3 * k..3 * k + 3]).unwrap();
            let v = DMatrix::from_column_slice(3, 1, &x);
            c += &v * v.transpose();
        }
        c /= n as f64;
        assert!((c - &cov).norm() / cov.norm() < 0.05);
    }

    #[test]
    fn block_structure() {
        let jp = joint(3, 4, 1);
        let n = 12;
        let mut v = probe(jp.dim(), 6);
        v[n..].iter_mut().for_each(|x| *x = 0.0);
        let pv = jp.joint_precision().apply(&v);
        assert!(pv[n..].iter().all(|&x| x == 0.0));
        let mut w = probe(jp.dim(), 7);
        w[..n].iter_mut().for_each(|x| *x = 0.0);
        let pw = jp.joint_precision().apply(&w);
        assert!(pw[..n].iter().all(|&x| x == 0.0));
    }

    proptest! {
        #[test]
        fn factor_exactness(seed in 0u64..1000, rows in 2usize..8, cols in 2usize..8) {
            let jp = joint(rows, cols, 2);
            let v = probe(jp.dim(), seed);
            let f = jp.joint_factor();
            let ggt = f.apply_factor(&f.apply_factor_adjoint(&v));
            let pv = jp.joint_precision().apply(&v);
            prop_assert!(rel(&ggt, &pv) < 1e-12);
            // independent two-stage oracle for the Φ block
            let b = build_laplacian(rows, cols).unwrap().shifted(DEFAULT_ALPHA, DEFAULT_GAMMA);
            let n = rows * cols;
            let expect: Vec<f64> = b.matvec(&b.matvec(&v[..n])).iter().map(|x| 2.5 * x).collect();
            prop_assert!(rel(&pv[..n], &expect) < 1e-12);
        }

        #[test]
        fn precision_is_positive(seed in 0u64..100_000) {
            // γ > 0 keeps the Φ block definite despite the singular Laplacian
            let jp = joint(4, 5, 1);
            let v = probe(jp.dim(), seed);
            let pv = jp.joint_precision().apply(&v);
            let q: f64 = v.iter().zip(&pv).map(|(a, b)| a * b).sum();
            prop_assert!(q > 0.0);
            let ones = vec![1.0; 20];
            let p1 = jp.phi_prior().apply_precision(&ones);
            prop_assert!(ones.iter().zip(&p1).map(|(a, b)| a * b).sum::<f64>() > 0.0);
        }
    }
}
