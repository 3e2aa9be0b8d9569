//! Linear operators, sparse kernels and precision factors.
//!
//! Everything downstream talks to operators through [`LinearMap`]: an
//! opaque pair of procedures for `A x` and `Aᵀ y`. Nothing is materialized
//! unless a test asks for it through [`densify`].

mod band;
mod factor;
mod ichol;
mod linear_map;
mod market;
mod sparse;
mod vector;

pub use band::BandCholesky;
pub use factor::{
    BlockDiagFactor, DiagonalFactor, FactorMap, IdentityFactor, KronFactor, PrecisionFactor,
    PrecisionMap, ScaledIdentityFactor, SymmetricSparseFactor, TriangularFactor,
};
pub use ichol::{incomplete_cholesky, IncompleteCholesky};
pub use linear_map::{
    adjoint_mismatch, compose, densify, kron_block_diag, Adjoint, BlockDiagMap, ComposedMap,
    CountingMap, DiagonalMap, FnMap, IdentityMap, KronBlockDiag, LinearMap, MapRef, ScaledMap,
    DENSIFY_LIMIT,
};
pub use market::{read_matrix_market, write_matrix_market};
pub use sparse::{spmv, CooBuilder, CsrMatrix};
pub use vector::{axpy, dot, norm2, scale, sub, DenseVector};
