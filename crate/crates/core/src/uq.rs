//! Laplace approximation at the MAP point and posterior variance.
//!
//! The posterior over `x = [Φ; c]` is approximated by `N(μ_x, H⁻¹)` with
//! `H` the Gauss-Newton Hessian frozen at `μ_x`. Pixel-space quantities go
//! through the level-set Jacobian `J_m`: the linearized pixel covariance is
//! `Γ_m = J_m H⁻¹ J_mᵀ`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diagest::{lanczos_factor, probe};
use crate::error::{check_len, Error, Result};
use crate::krylov::{cg_solve, gmres_solve, sampler_apply, SolveReport};
use crate::levelset::{
    assemble_field, assemble_jacobian, jacobian_as_linear_map, LevelSetConfig, LevelSetJacobian, LevelSetState,
};
use crate::mapsolve::{linearize, GaussNewtonHessian, InnerSolver, InverseProblem};
use crate::ops::{MapRef, PrecisionFactor};
use crate::rng;

/// Relative tolerance of the inner `H⁻¹` solves in the hybrid estimator.
pub const INNER_RTOL: f64 = 1e-8;

pub struct PosteriorApprox {
    pub map_point: LevelSetState,
    pub map_field: Vec<f64>,
    pub levelset: LevelSetConfig,
    pub hessian: Arc<GaussNewtonHessian>,
    pub precond: Arc<dyn PrecisionFactor>,
    pub pixel_jacobian: Arc<LevelSetJacobian>,
    /// `J_m` as an operator `x ↦ m`.
    pub pixel_map: MapRef,
    pub forward_jacobian: MapRef,
    sampler_calls: AtomicUsize,
}

/// Freeze the Jacobians and the prior factor at `map_point`.
pub fn build_posterior(problem: &InverseProblem, map_point: LevelSetState) -> Result<PosteriorApprox> {
    check_len("posterior point", problem.levelset.state_len(), map_point.as_slice().len())?;
    let field = assemble_field(&map_point, &problem.levelset)?;
    let lin = linearize(problem, &map_point, &field)?;
    let hessian = Arc::new(GaussNewtonHessian::from_linearization(problem, &lin));
    let jm = assemble_jacobian(&map_point, &problem.levelset)?;
    Ok(PosteriorApprox {
        map_point,
        map_field: field,
        levelset: problem.levelset,
        hessian,
        precond: problem.prior.joint_factor().clone(),
        pixel_map: Arc::new(jacobian_as_linear_map(jm)),
        pixel_jacobian: lin.pixel_jacobian.clone(),
        forward_jacobian: lin.forward_jacobian.clone(),
        sampler_calls: AtomicUsize::new(0),
    })
}

impl PosteriorApprox {
    pub fn dim(&self) -> usize {
        self.map_point.as_slice().len()
    }

    pub fn n(&self) -> usize {
        self.map_field.len()
    }

    /// Number of sampler invocations so far.
    pub fn sampler_calls(&self) -> usize {
        self.sampler_calls.load(Ordering::Relaxed)
    }

    /// `Γ_x v = H⁻¹ v` by preconditioned CG to `rel_tol`.
    pub fn covariance_apply(&self, v: &[f64], rel_tol: f64) -> Result<Vec<f64>> {
        let (x, rep) = cg_solve(self.hessian.as_ref(), v, rel_tol, 20 * self.dim(), Some(self.precond.as_ref()))?;
        if !rep.converged {
            return Err(Error::InnerSolve {
                probe: 0,
                iterations: rep.iterations,
                residual: rep.final_residual() / rep.residual_history[0],
            });
        }
        Ok(x)
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.dim() {
            return Err(Error::InvalidArgument(format!(
                "Lanczos steps must be in 1..={}, got {k}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// `μ_x + S η` for a given standard-normal vector `η`; `η = 0` returns `μ_x`.
pub fn sample_x_with_eta(post: &PosteriorApprox, eta: &[f64], k: usize) -> Result<(Vec<f64>, SolveReport)> {
    check_len("sampler input", post.dim(), eta.len())?;
    post.check_k(k)?;
    post.sampler_calls.fetch_add(1, Ordering::Relaxed);
    let mu = post.map_point.as_slice();
    if eta.iter().all(|&v| v == 0.0) {
        return Ok((
            mu.to_vec(),
            SolveReport {
                iterations: 0,
                residual_history: vec![0.0],
                converged: true,
                tolerance_used: 0.0,
            },
        ));
    }
    let (s, rep) = sampler_apply(post.hessian.as_ref(), post.precond.as_ref(), eta, k)?;
    Ok((mu.iter().zip(&s).map(|(a, b)| a + b).collect(), rep))
}

/// Draw from `N(μ_x, Γ_x)` (approximate for `k < dim x`).
pub fn sample_x(post: &PosteriorApprox, k: usize, seed: u64) -> Result<(Vec<f64>, SolveReport)> {
    let eta = rng::standard_normal(&mut rng::stream(seed, 0), post.dim());
    sample_x_with_eta(post, &eta, k)
}

/// Pixel sample `m(x)` with `x` from [`sample_x`].
pub fn sample_m(post: &PosteriorApprox, k: usize, seed: u64) -> Result<Vec<f64>> {
    let (x, _) = sample_x(post, k, seed)?;
    assemble_field(&LevelSetState::for_config(&post.levelset, x)?, &post.levelset)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    LanczosMc,
    SampleCov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub values: Vec<f64>,
    pub method: VarianceMethod,
    pub k: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Entries that came out negative and were set to zero.
    pub clipped: usize,
    /// Sampler invocations made by this estimate.
    pub sampler_calls: usize,
    /// Lanczos steps (hybrid: the low-rank factor; sampling: per sample).
    pub lanczos_steps: usize,
    /// Inner iterations per probe (hybrid) or Lanczos steps per sample.
    pub inner_iterations: Vec<usize>,
}

impl VarianceEstimate {
    pub fn mean_inner_iterations(&self) -> f64 {
        if self.inner_iterations.is_empty() {
            0.0
        } else {
            self.inner_iterations.iter().sum::<usize>() as f64 / self.inner_iterations.len() as f64
        }
    }
}

fn clip(values: &mut [f64]) -> usize {
    let mut n = 0;
    for v in values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
            n += 1;
        }
    }
    n
}

/// `diag(Γ_m)` as `diag(J_m W_k W_kᵀ J_mᵀ)` plus a Rademacher estimate of
/// the remainder, `y = J_m (H⁻¹ − W_k W_kᵀ) J_mᵀ z`, with `H⁻¹` applied by
/// the chosen inner solver to [`INNER_RTOL`]. `k = 0` gives plain Monte
/// Carlo, `N = 0` the Lanczos term alone.
pub fn variance_lanczos_mc(
    post: &PosteriorApprox,
    k: usize,
    n_samples: usize,
    seed: u64,
    inner: InnerSolver,
) -> Result<VarianceEstimate> {
    if k == 0 && n_samples == 0 {
        return Err(Error::InvalidArgument("need k > 0 or N > 0".into()));
    }
    if k > 0 {
        post.check_k(k)?;
    }
    let n = post.n();
    let jm = post.pixel_map.as_ref();
    let h = post.hessian.as_ref();
    let g = post.precond.as_ref();
    let w = if k > 0 {
        Some(lanczos_factor(h, g, k, seed)?)
    } else {
        None
    };
    let mut values = vec![0.0; n];
    if let Some(w) = &w {
        for col in &w.columns {
            for (v, u) in values.iter_mut().zip(jm.apply(col)) {
                *v += u * u;
            }
        }
    }
    let mut iters = Vec::with_capacity(n_samples);
    if n_samples > 0 {
        let max_iter = 20 * post.dim();
        let mut acc = vec![0.0; n];
        for l in 0..n_samples {
            let z = probe(seed, l, n);
            let u = jm.apply_adjoint(&z);
            let (mut a, rep) = match inner {
                InnerSolver::Cg => cg_solve(h, &u, INNER_RTOL, max_iter, Some(g))?,
                InnerSolver::Gmres => gmres_solve(h, &u, INNER_RTOL, max_iter, Some(g))?,
            };
            if !rep.converged {
                return Err(Error::InnerSolve {
                    probe: l,
                    iterations: rep.iterations,
                    residual: rep.final_residual() / rep.residual_history[0],
                });
            }
            iters.push(rep.iterations);
            if let Some(w) = &w {
                let low = w.expand(&w.project(w.k(), &u));
                for (ai, li) in a.iter_mut().zip(&low) {
                    *ai -= li;
                }
            }
            for ((s, y), zi) in acc.iter_mut().zip(jm.apply(&a)).zip(&z) {
                *s += y * zi;
            }
        }
        let s = 1.0 / n_samples as f64;
        for (v, a) in values.iter_mut().zip(&acc) {
            *v += a * s;
        }
    }
    let clipped = clip(&mut values);
    Ok(VarianceEstimate {
        values,
        method: VarianceMethod::LanczosMc,
        k,
        n_samples,
        seed,
        clipped,
        sampler_calls: 0,
        lanczos_steps: w.as_ref().map_or(0, |w| w.k()),
        inner_iterations: iters,
    })
}

/// Per-entry unbiased sample variance (`1/(N−1)`) of a sequence of fields.
pub fn sample_variance<I>(samples: I) -> Result<(Vec<f64>, usize)>
where
    I: IntoIterator<Item = Result<Vec<f64>>>,
{
    let mut count = 0usize;
    let mut mean: Vec<f64> = Vec::new();
    let mut m2: Vec<f64> = Vec::new();
    for s in samples {
        let s = s?;
        if count == 0 {
            mean = vec![0.0; s.len()];
            m2 = vec![0.0; s.len()];
        }
        check_len("sample", mean.len(), s.len())?;
        count += 1;
        for ((mu, q), x) in mean.iter_mut().zip(m2.iter_mut()).zip(&s) {
            let d = x - *mu;
            *mu += d / count as f64;
            *q += d * (x - *mu);
        }
    }
    if count < 2 {
        return Err(Error::InvalidArgument("sample variance needs at least two samples".into()));
    }
    Ok((m2.iter().map(|q| q / (count - 1) as f64).collect(), count))
}

/// Pixel variance from `N` posterior samples `m(x_j)`.
pub fn variance_sample_cov(post: &PosteriorApprox, k: usize, n_samples: usize, seed: u64) -> Result<VarianceEstimate> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument("sample covariance needs N >= 2".into()));
    }
    post.check_k(k)?;
    let before = post.sampler_calls();
    let mut steps = Vec::with_capacity(n_samples);
    let cfg = post.levelset;
    let (mut values, _) = sample_variance((0..n_samples).map(|j| {
        let (x, rep) = sample_x(post, k, rng::split(seed, j as u64))?;
        steps.push(rep.iterations);
        assemble_field(&LevelSetState::for_config(&cfg, x)?, &cfg)
    }))?;
    let clipped = clip(&mut values);
    Ok(VarianceEstimate {
        values,
        method: VarianceMethod::SampleCov,
        k,
        n_samples,
        seed,
        clipped,
        sampler_calls: post.sampler_calls() - before,
        lanczos_steps: k,
        inner_iterations: steps,
    })
}
