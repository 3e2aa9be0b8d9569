use std::io::Write;

use serde::{Deserialize, Serialize};

use super::linesearch::{wolfe_search, LineSearchSettings};
use super::{evaluate, gradient_from, linearize, Evaluation, GaussNewtonHessian, InverseProblem, Linearization};
use crate::error::{Error, Result};
use crate::krylov::{cg_solve, gmres_solve};
use crate::levelset::LevelSetState;
use crate::ops::{dot, norm2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerSolver {
    Cg,
    Gmres,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnSettings {
    pub max_outer: usize,
    pub cg_max: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub grad_reduction: f64,
    pub discrepancy_tau: f64,
    pub use_discrepancy: bool,
    /// Replace `τ · n_obs` by this value of `‖ε‖²_{Γ⁻¹}` (a noise estimate).
    pub discrepancy_target: Option<f64>,
    pub inner: InnerSolver,
    pub precondition: bool,
}

impl Default for GnSettings {
    fn default() -> Self {
        Self {
            max_outer: 30,
            cg_max: 200,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            grad_reduction: 1e-3,
            discrepancy_tau: 1.0,
            use_discrepancy: true,
            discrepancy_target: None,
            inner: InnerSolver::Cg,
            precondition: true,
        }
    }
}

impl GnSettings {
    pub fn validate(&self) -> Result<()> {
        self.line_search().validate()?;
        if self.max_outer == 0 || self.cg_max == 0 {
            return Err(Error::InvalidArgument(
                "max_outer and cg_max must be positive".into(),
            ));
        }
        if !(self.grad_reduction > 0.0 && self.grad_reduction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "grad_reduction must lie in (0, 1), got {}",
                self.grad_reduction
            )));
        }
        if !(self.discrepancy_tau > 0.0) {
            return Err(Error::InvalidArgument("discrepancy_tau must be positive".into()));
        }
        Ok(())
    }

    fn line_search(&self) -> LineSearchSettings {
        LineSearchSettings {
            c1: self.wolfe_c1,
            c2: self.wolfe_c2,
            ..Default::default()
        }
    }

    pub fn discrepancy_threshold(&self, n_obs: usize) -> f64 {
        self.discrepancy_target
            .unwrap_or(self.discrepancy_tau * n_obs as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Discrepancy,
    GradientReduction,
    MaxOuter,
}

/// One accepted outer iteration. Values describe the new iterate; `eta`,
/// `cg_*` and the application counts describe the step that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnRecord {
    pub iteration: usize,
    pub objective: f64,
    pub misfit: f64,
    pub regularization: f64,
    pub grad_norm: f64,
    /// `‖g‖` at the iterate the step started from.
    pub grad_norm_start: f64,
    pub eta: f64,
    pub cg_iterations: usize,
    pub cg_converged: bool,
    pub alpha: f64,
    pub dir_derivative: f64,
    pub f_evals: usize,
    /// `J` applications on the start iterate's Jacobian (CG matvecs).
    pub jacobian_applies: usize,
    /// `Jᵀ` applications on the start iterate's Jacobian (CG matvecs plus the gradient).
    pub jacobian_adjoint_applies: usize,
    /// `Jᵀ` applications made by line-search gradient evaluations.
    pub line_search_adjoint_applies: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnTrace {
    pub initial_objective: f64,
    pub initial_misfit: f64,
    pub initial_grad_norm: f64,
    pub discrepancy_threshold: f64,
    pub records: Vec<GnRecord>,
    pub stop: StopReason,
}

impl GnTrace {
    pub fn total_cg(&self) -> usize {
        self.records.iter().map(|r| r.cg_iterations).sum()
    }

    pub fn objectives(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective)
            .chain(self.records.iter().map(|r| r.objective))
            .collect()
    }

    /// One JSON object per outer iteration.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            let line = serde_json::to_string(r)
                .map_err(|e| Error::InvalidArgument(format!("trace serialization: {e}")))?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Vec<GnRecord>> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })
            })
            .collect()
    }
}

struct Point {
    x: LevelSetState,
    eval: Evaluation,
    lin: Linearization,
    grad: Vec<f64>,
}

fn point_at(problem: &InverseProblem, x: LevelSetState) -> Result<Point> {
    let eval = evaluate(problem, &x)?;
    let lin = linearize(problem, &x, &eval.field)?;
    let grad = gradient_from(problem, &x, &eval, &lin)?;
    Ok(Point { x, eval, lin, grad })
}

/// `η_k = min(0.5, √(‖g_k‖/‖g₀‖))`
pub fn forcing_term(grad_norm: f64, grad_norm0: f64) -> f64 {
    0.5f64.min((grad_norm / grad_norm0).sqrt())
}

/// Inexact Gauss-Newton from `x0`.
pub fn solve_map(
    problem: &InverseProblem,
    settings: &GnSettings,
    x0: LevelSetState,
) -> Result<(LevelSetState, GnTrace)> {
    settings.validate()?;
    let threshold = settings.discrepancy_threshold(problem.n_obs());
    let ls = settings.line_search();
    let precond = problem.prior.joint_factor().clone();
    let mut cur = point_at(problem, x0)?;
    let g0 = norm2(&cur.grad);
    let mut trace = GnTrace {
        initial_objective: cur.eval.objective(),
        initial_misfit: cur.eval.misfit,
        initial_grad_norm: g0,
        discrepancy_threshold: threshold,
        records: Vec::new(),
        stop: StopReason::MaxOuter,
    };
    let stop_now = |p: &Point, k: usize| -> Option<StopReason> {
        if settings.use_discrepancy && p.eval.whitened_misfit() <= threshold {
            return Some(StopReason::Discrepancy);
        }
        let gn = norm2(&p.grad);
        if gn == 0.0 || (k > 0 && gn <= settings.grad_reduction * g0) {
            return Some(StopReason::GradientReduction);
        }
        None
    };
    if let Some(reason) = stop_now(&cur, 0) {
        trace.stop = reason;
        return Ok((cur.x, trace));
    }
    for k in 0..settings.max_outer {
        let gnorm = norm2(&cur.grad);
        let eta = forcing_term(gnorm, g0);
        let h = GaussNewtonHessian::from_linearization(problem, &cur.lin);
        let rhs: Vec<f64> = cur.grad.iter().map(|v| -v).collect();
        let pc = if settings.precondition {
            Some(precond.as_ref())
        } else {
            None
        };
        let (dir, report) = match settings.inner {
            InnerSolver::Cg => cg_solve(&h, &rhs, eta, settings.cg_max, pc)?,
            InnerSolver::Gmres => gmres_solve(&h, &rhs, eta, settings.cg_max, pc)?,
        };
        let d0 = dot(&cur.grad, &dir);
        if !(d0 < 0.0) {
            return Err(Error::NotDescent(d0));
        }
        let jf = cur.lin.jacobian.forward_count();
        let ja = cur.lin.jacobian.adjoint_count();
        let out = wolfe_search(
            |a| {
                let x = cur.x.offset(a, &dir)?;
                let p = point_at(problem, x)?;
                let slope = dot(&p.grad, &dir);
                Ok((p.eval.objective(), slope, p))
            },
            cur.eval.objective(),
            d0,
            &ls,
        )?;
        let next = out.payload;
        trace.records.push(GnRecord {
            iteration: k + 1,
            objective: next.eval.objective(),
            misfit: next.eval.misfit,
            regularization: next.eval.regularization,
            grad_norm: norm2(&next.grad),
            grad_norm_start: gnorm,
            eta,
            cg_iterations: report.iterations,
            cg_converged: report.converged,
            alpha: out.alpha,
            dir_derivative: d0,
            f_evals: out.evals,
            jacobian_applies: jf,
            jacobian_adjoint_applies: ja,
            line_search_adjoint_applies: out.evals,
        });
        cur = next;
        if let Some(reason) = stop_now(&cur, k + 1) {
            trace.stop = reason;
            return Ok((cur.x, trace));
        }
    }
    trace.stop = StopReason::MaxOuter;
    Ok((cur.x, trace))
}
