//! Bayesian inversion of piecewise-constant fields with multiple level sets.
//!
//! The unknown field `m` is parameterized by `nls` level-set functions and
//! `2^nls` magnitudes. The crate computes MAP estimates with an inexact
//! Gauss-Newton method, builds the Gauss-Newton Laplace approximation at the
//! MAP point, draws posterior samples with a preconditioned Lanczos sampler,
//! and estimates posterior variances with Lanczos/Monte Carlo diagonal
//! estimators. Everything is matrix-free: operators are only ever applied.
//!
//! Module map:
//! - [`ops`]: linear maps, sparse matrices, factors and preconditioners
//! - [`levelset`]: the parameterization `m(Φ, c)` and its Jacobian
//! - [`prior`]: GMRF priors for the level sets, Gaussian prior for magnitudes
//! - [`krylov`]: CG, GMRES, Lanczos, matrix functions and Gaussian sampling
//! - [`mapsolve`]: objective, gradient, Gauss-Newton Hessian, line search, solver
//! - [`uq`]: Laplace approximation, posterior sampling, variance estimators
//! - [`diagest`]: estimators for `diag(A⁻¹)` and `trace(A⁻¹)` plus benchmarks
//! - [`forward`]: ray-transform and steady Darcy forward models, phantoms, noise

pub mod diagest;
pub mod error;
pub mod forward;
pub mod krylov;
pub mod levelset;
pub mod mapsolve;
pub mod ops;
pub mod prior;
pub mod rng;
pub mod uq;

pub use error::{Error, Result};
