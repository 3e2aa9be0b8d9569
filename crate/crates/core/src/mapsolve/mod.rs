//! MAP estimation for the level-set parameterized inverse problem
//!
//! ```text
//! F(x) = ½ ‖f(m(x)) − d‖²_{Γ⁻¹} + ½ ‖x − μ‖²_{P}
//! ```
//!
//! by inexact Gauss-Newton with a strong-Wolfe line search.

mod gn;
mod init;
mod linesearch;

use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::levelset::{
    assemble_field, assemble_jacobian, jacobian_as_linear_map, LevelSetConfig, LevelSetJacobian,
    LevelSetState,
};
use crate::ops::{compose, dot, ComposedMap, CountingMap, DiagonalMap, LinearMap, MapRef};
use crate::prior::JointPrior;

pub use gn::{solve_map, GnRecord, GnSettings, GnTrace, InnerSolver, StopReason};
pub use init::{radial_bump_init, InitSettings};
pub use linesearch::{line_search, wolfe_search, LineSearchOutcome, LineSearchSettings};

/// A forward operator on pixel fields, with its linearization.
pub trait ForwardModel: Send + Sync {
    fn n_obs(&self) -> usize;
    /// Number of pixels the model takes.
    fn n(&self) -> usize;
    fn evaluate(&self, m: &[f64]) -> Result<Vec<f64>>;
    /// `∂f/∂m` at `m`, matrix-free.
    fn jacobian_at(&self, m: &[f64]) -> Result<MapRef>;
}

/// `f(m) = A m` for a fixed operator `A`.
pub struct LinearForward(pub MapRef);

impl ForwardModel for LinearForward {
    fn n_obs(&self) -> usize {
        self.0.out_dim()
    }
    fn n(&self) -> usize {
        self.0.in_dim()
    }
    fn evaluate(&self, m: &[f64]) -> Result<Vec<f64>> {
        check_len("linear forward input", self.n(), m.len())?;
        Ok(self.0.apply(m))
    }
    fn jacobian_at(&self, _m: &[f64]) -> Result<MapRef> {
        Ok(self.0.clone())
    }
}

/// Everything the MAP solver and the Laplace approximation need.
#[derive(Clone)]
pub struct InverseProblem {
    pub forward: Arc<dyn ForwardModel>,
    pub data: Vec<f64>,
    pub noise_precision: MapRef,
    pub prior: JointPrior,
    pub levelset: LevelSetConfig,
}

impl InverseProblem {
    pub fn new(
        forward: Arc<dyn ForwardModel>,
        data: Vec<f64>,
        noise_precision: MapRef,
        prior: JointPrior,
        levelset: LevelSetConfig,
    ) -> Result<Self> {
        check_len("data vs forward observations", forward.n_obs(), data.len())?;
        check_len("forward pixels vs level-set grid", levelset.n, forward.n())?;
        check_len("noise precision", data.len(), noise_precision.in_dim())?;
        check_len("noise precision", data.len(), noise_precision.out_dim())?;
        check_len("prior vs state", levelset.state_len(), prior.dim())?;
        Ok(Self {
            forward,
            data,
            noise_precision,
            prior,
            levelset,
        })
    }

    /// Noise model `Γ = σ² I`.
    pub fn isotropic_noise(n_obs: usize, sigma: f64) -> Result<MapRef> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise standard deviation must be positive, got {sigma}"
            )));
        }
        Ok(Arc::new(DiagonalMap(vec![1.0 / (sigma * sigma); n_obs])))
    }

    pub fn n_obs(&self) -> usize {
        self.data.len()
    }

    pub fn state(&self, values: Vec<f64>) -> Result<LevelSetState> {
        LevelSetState::for_config(&self.levelset, values)
    }
}

/// The objective and its pieces at one point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub field: Vec<f64>,
    pub predicted: Vec<f64>,
    /// `f(m) − d`
    pub residual: Vec<f64>,
    /// `½ ‖f − d‖²_{Γ⁻¹}`
    pub misfit: f64,
    /// `½ ‖x − μ‖²_P`
    pub regularization: f64,
}

impl Evaluation {
    pub fn objective(&self) -> f64 {
        self.misfit + self.regularization
    }

    /// Whitened squared misfit `‖d − f‖²_{Γ⁻¹}` used by the discrepancy test.
    pub fn whitened_misfit(&self) -> f64 {
        2.0 * self.misfit
    }
}

pub fn evaluate(problem: &InverseProblem, x: &LevelSetState) -> Result<Evaluation> {
    let field = assemble_field(x, &problem.levelset)?;
    let predicted = problem.forward.evaluate(&field)?;
    check_len("forward output", problem.n_obs(), predicted.len())?;
    if let Some(index) = predicted.iter().position(|v| !v.is_finite()) {
        return Err(Error::Forward(format!("non-finite prediction at observation {index}")));
    }
    let residual: Vec<f64> = predicted.iter().zip(&problem.data).map(|(p, d)| p - d).collect();
    let misfit = 0.5 * dot(&residual, &problem.noise_precision.apply(&residual));
    let regularization = problem.prior.joint().neg_log_density(x.as_slice())?;
    Ok(Evaluation {
        field,
        predicted,
        residual,
        misfit,
        regularization,
    })
}

pub fn objective(problem: &InverseProblem, x: &LevelSetState) -> Result<f64> {
    Ok(evaluate(problem, x)?.objective())
}

/// Jacobians frozen at one point: `J = (∂f/∂m)(∂m/∂x)`, with application counts.
#[derive(Clone)]
pub struct Linearization {
    pub pixel_jacobian: Arc<LevelSetJacobian>,
    pub forward_jacobian: MapRef,
    pub jacobian: Arc<CountingMap<ComposedMap>>,
}

impl Linearization {
    pub fn jacobian_map(&self) -> MapRef {
        self.jacobian.clone()
    }
}

pub fn linearize(problem: &InverseProblem, x: &LevelSetState, field: &[f64]) -> Result<Linearization> {
    let jm = assemble_jacobian(x, &problem.levelset)?;
    let jf = problem.forward.jacobian_at(field)?;
    let jm_map: MapRef = Arc::new(jacobian_as_linear_map(jm.clone()));
    let j = compose(vec![jf.clone(), jm_map])?;
    Ok(Linearization {
        pixel_jacobian: Arc::new(jm),
        forward_jacobian: jf,
        jacobian: Arc::new(CountingMap::new(j)),
    })
}

/// `Jᵀ Γ⁻¹ (f − d) + P (x − μ)` from a cached evaluation and linearization.
pub fn gradient_from(
    problem: &InverseProblem,
    x: &LevelSetState,
    eval: &Evaluation,
    lin: &Linearization,
) -> Result<Vec<f64>> {
    let w = problem.noise_precision.apply(&eval.residual);
    let mut g = lin.jacobian.apply_adjoint(&w);
    let p = problem.prior.joint().gradient(x.as_slice())?;
    for (gi, pi) in g.iter_mut().zip(&p) {
        *gi += pi;
    }
    Ok(g)
}

pub fn gradient(problem: &InverseProblem, x: &LevelSetState) -> Result<Vec<f64>> {
    let eval = evaluate(problem, x)?;
    let lin = linearize(problem, x, &eval.field)?;
    gradient_from(problem, x, &eval, &lin)
}

/// Gauss-Newton Hessian `Jᵀ Γ⁻¹ J + P`; each application costs one `J`,
/// one `Jᵀ` and one prior precision.
pub struct GaussNewtonHessian {
    pub jacobian: Arc<CountingMap<ComposedMap>>,
    pub noise_precision: MapRef,
    pub prior: JointPrior,
}

impl GaussNewtonHessian {
    pub fn from_linearization(problem: &InverseProblem, lin: &Linearization) -> Self {
        Self {
            jacobian: lin.jacobian.clone(),
            noise_precision: problem.noise_precision.clone(),
            prior: problem.prior.clone(),
        }
    }
}

impl LinearMap for GaussNewtonHessian {
    fn in_dim(&self) -> usize {
        self.jacobian.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.jacobian.in_dim()
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let jv = self.jacobian.apply(v);
        let mut y = self.jacobian.apply_adjoint(&self.noise_precision.apply(&jv));
        let pv = self.prior.joint().apply_precision(v);
        for (a, b) in y.iter_mut().zip(&pv) {
            *a += b;
        }
        y
    }
    fn apply_adjoint(&self, v: &[f64]) -> Vec<f64> {
        self.apply(v)
    }
}

pub fn gn_hessian(problem: &InverseProblem, x: &LevelSetState) -> Result<GaussNewtonHessian> {
    let field = assemble_field(x, &problem.levelset)?;
    let lin = linearize(problem, x, &field)?;
    Ok(GaussNewtonHessian::from_linearization(problem, &lin))
}
