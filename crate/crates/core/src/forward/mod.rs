//! Forward models and synthetic data: a parallel-beam ray transform, a
//! finite-volume Darcy model for pump tests, phantoms and noise.

mod darcy;
mod noise;
mod phantom;
mod ray;

pub use darcy::{
    darcy_forward, darcy_jacobian_adjoint, darcy_jacobian_apply, fv_matrix, solve_fv_dirichlet, well_grid,
    DarcyForward, DarcyJacobian, DarcyProblem, DarcyState,
};
pub use noise::add_noise;
pub use phantom::{make_phantom, Disk, Phantom, PhantomKind};
pub use ray::{build_ray_transform, ray_matrix, trace_ray, Ray, RayGeometry, RayTransform};
