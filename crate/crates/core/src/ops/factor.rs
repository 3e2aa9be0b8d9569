use std::sync::Arc;

use crate::error::{Error, Result};

use super::band::BandCholesky;
use super::linear_map::LinearMap;
use super::sparse::CsrMatrix;

/// A square factor `G` of a precision operator `P = G Gᵀ`, with solves.
///
/// Used both as the exact square root of prior precisions and as a
/// preconditioner `G Gᵀ ≈ A` for Krylov methods.
pub trait PrecisionFactor: Send + Sync {
    fn dim(&self) -> usize;
    /// `G x`
    fn apply_factor(&self, x: &[f64]) -> Vec<f64>;
    /// `Gᵀ x`
    fn apply_factor_adjoint(&self, x: &[f64]) -> Vec<f64>;
    /// `G⁻¹ x`
    fn solve(&self, x: &[f64]) -> Vec<f64>;
    /// `G⁻ᵀ x`
    fn solve_adjoint(&self, x: &[f64]) -> Vec<f64>;

    /// `G Gᵀ x`
    fn apply_precision(&self, x: &[f64]) -> Vec<f64> {
        self.apply_factor(&self.apply_factor_adjoint(x))
    }

    /// `(G Gᵀ)⁻¹ x`
    fn solve_precision(&self, x: &[f64]) -> Vec<f64> {
        self.solve_adjoint(&self.solve(x))
    }
}

macro_rules! forward_factor {
    ($($ty:ty),*) => {$(
        impl<T: PrecisionFactor + ?Sized> PrecisionFactor for $ty {
            fn dim(&self) -> usize {
                (**self).dim()
            }
            fn apply_factor(&self, x: &[f64]) -> Vec<f64> {
                (**self).apply_factor(x)
            }
            fn apply_factor_adjoint(&self, x: &[f64]) -> Vec<f64> {
                (**self).apply_factor_adjoint(x)
            }
            fn solve(&self, x: &[f64]) -> Vec<f64> {
                (**self).solve(x)
            }
            fn solve_adjoint(&self, x: &[f64]) -> Vec<f64> {
                (**self).solve_adjoint(x)
            }
        }
    )*};
}

forward_factor!(Arc<T>, &T);

/// `G` itself as a linear map.
pub struct FactorMap<F>(pub F);

impl<F: PrecisionFactor> LinearMap for FactorMap<F> {
    fn in_dim(&self) -> usize {
        self.0.dim()
    }
    fn out_dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.0.apply_factor(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.0.apply_factor_adjoint(y)
    }
}

/// `G Gᵀ` as a (self-adjoint) linear map.
pub struct PrecisionMap<F>(pub F);

impl<F: PrecisionFactor> LinearMap for PrecisionMap<F> {
    fn in_dim(&self) -> usize {
        self.0.dim()
    }
    fn out_dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.0.apply_precision(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.0.apply_precision(y)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityFactor(pub usize);

impl PrecisionFactor for IdentityFactor {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply_factor(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn apply_factor_adjoint(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn solve(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn solve_adjoint(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

/// `G = s I`.
#[derive(Debug, Clone, Copy)]
pub struct ScaledIdentityFactor {
    pub dim: usize,
    pub scale: f64,
}

impl PrecisionFactor for ScaledIdentityFactor {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply_factor(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v * self.scale).collect()
    }
    fn apply_factor_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.apply_factor(x)
    }
    fn solve(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v / self.scale).collect()
    }
    fn solve_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.solve(x)
    }
}

/// `G = diag(d)`, entries strictly positive.
#[derive(Debug, Clone)]
pub struct DiagonalFactor(Vec<f64>);

impl DiagonalFactor {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if let Some(i) = d.iter().position(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::NotPositiveDefinite { row: i, pivot: d[i] });
        }
        Ok(Self(d))
    }

    /// Square root of a diagonal precision.
    pub fn sqrt_of(precision_diag: &[f64]) -> Result<Self> {
        Self::new(precision_diag.iter().map(|v| v.sqrt()).collect())
    }
}

impl PrecisionFactor for DiagonalFactor {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn apply_factor(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.0).map(|(a, d)| a * d).collect()
    }
    fn apply_factor_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.apply_factor(x)
    }
    fn solve(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.0).map(|(a, d)| a / d).collect()
    }
    fn solve_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.solve(x)
    }
}

/// `G = s B` for a sparse symmetric positive definite `B`, so that
/// `G Gᵀ = s² B²` exactly. Solves reuse one band Cholesky of `B`.
#[derive(Debug, Clone)]
pub struct SymmetricSparseFactor {
    matrix: CsrMatrix,
    chol: BandCholesky,
    scale: f64,
}

impl SymmetricSparseFactor {
    pub fn new(matrix: CsrMatrix, scale: f64) -> Result<Self> {
        if scale <= 0.0 || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "factor scale must be positive, got {scale}"
            )));
        }
        if !matrix.is_symmetric(1e-14) {
            return Err(Error::InvalidArgument("factor matrix is not symmetric".into()));
        }
        let chol = BandCholesky::factor(&matrix)?;
        Ok(Self {
            matrix,
            chol,
            scale,
        })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl PrecisionFactor for SymmetricSparseFactor {
    fn dim(&self) -> usize {
        self.matrix.rows()
    }
    fn apply_factor(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.matrix.matvec(x);
        y.iter_mut().for_each(|v| *v *= self.scale);
        y
    }
    fn apply_factor_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.apply_factor(x)
    }
    fn solve(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.chol.solve(x);
        y.iter_mut().for_each(|v| *v /= self.scale);
        y
    }
    fn solve_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.solve(x)
    }
}

/// Lower-triangular sparse factor `G = L` (Cholesky or incomplete Cholesky).
#[derive(Debug, Clone)]
pub struct TriangularFactor {
    lower: CsrMatrix,
}

impl TriangularFactor {
    pub fn new(lower: CsrMatrix) -> Result<Self> {
        if lower.rows() != lower.cols() {
            return Err(Error::InvalidArgument("triangular factor must be square".into()));
        }
        for (i, j, _) in lower.triplets() {
            if j > i {
                return Err(Error::InvalidArgument(format!(
                    "entry ({i}, {j}) above the diagonal"
                )));
            }
        }
        for (i, &d) in lower.diagonal().iter().enumerate() {
            if d <= 0.0 {
                return Err(Error::NotPositiveDefinite { row: i, pivot: d });
            }
        }
        Ok(Self { lower })
    }

    pub fn lower(&self) -> &CsrMatrix {
        &self.lower
    }
}

impl PrecisionFactor for TriangularFactor {
    fn dim(&self) -> usize {
        self.lower.rows()
    }
    fn apply_factor(&self, x: &[f64]) -> Vec<f64> {
        self.lower.matvec(x)
    }
    fn apply_factor_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.lower.matvec_transpose(x)
    }
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (ptr, idx, val) = self.lower.raw_parts();
        let mut y = b.to_vec();
        for i in 0..y.len() {
            let mut s = y[i];
            let mut diag = 1.0;
            for k in ptr[i]..ptr[i + 1] {
                let j = idx[k];
                if j == i {
                    diag = val[k];
                } else {
                    s -= val[k] * y[j];
                }
            }
            y[i] = s / diag;
        }
        y
    }
    fn solve_adjoint(&self, b: &[f64]) -> Vec<f64> {
        let (ptr, idx, val) = self.lower.raw_parts();
        let mut x = b.to_vec();
        for i in (0..x.len()).rev() {
            // the diagonal is the last stored entry of a lower-triangular row
            let last = ptr[i + 1] - 1;
            debug_assert_eq!(idx[last], i);
            x[i] /= val[last];
            let xi = x[i];
            for k in ptr[i]..last {
                x[idx[k]] -= val[k] * xi;
            }
        }
        x
    }
}

/// `I_count ⊗ G`.
pub struct KronFactor {
    block: Arc<dyn PrecisionFactor>,
    count: usize,
}

impl KronFactor {
    pub fn new(block: Arc<dyn PrecisionFactor>, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("KronFactor: count must be >= 1".into()));
        }
        Ok(Self { block, count })
    }

    fn map(&self, x: &[f64], f: impl Fn(&dyn PrecisionFactor, &[f64]) -> Vec<f64>) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        x.chunks(self.block.dim())
            .flat_map(|seg| f(self.block.as_ref(), seg))
            .collect()
    }
}

impl PrecisionFactor for KronFactor {
    fn dim(&self) -> usize {
        self.block.dim() * self.count
    }
    fn apply_factor(&self, x: &[f64]) -> Vec<f64> {
        self.map(x, |b, s| b.apply_factor(s))
    }
    fn apply_factor_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.map(x, |b, s| b.apply_factor_adjoint(s))
    }
    fn solve(&self, x: &[f64]) -> Vec<f64> {
        self.map(x, |b, s| b.solve(s))
    }
    fn solve_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.map(x, |b, s| b.solve_adjoint(s))
    }
}

/// Block-diagonal factor `blockdiag(G_1, ..., G_k)`.
pub struct BlockDiagFactor {
    blocks: Vec<Arc<dyn PrecisionFactor>>,
}

impl BlockDiagFactor {
    pub fn new(blocks: Vec<Arc<dyn PrecisionFactor>>) -> Self {
        assert!(!blocks.is_empty());
        Self { blocks }
    }

    pub fn blocks(&self) -> &[Arc<dyn PrecisionFactor>] {
        &self.blocks
    }

    fn map(&self, x: &[f64], f: impl Fn(&dyn PrecisionFactor, &[f64]) -> Vec<f64>) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        let mut out = Vec::with_capacity(x.len());
        let mut off = 0;
        for b in &self.blocks {
            out.extend(f(b.as_ref(), &x[off..off + b.dim()]));
            off += b.dim();
        }
        out
    }
}

impl PrecisionFactor for BlockDiagFactor {
    fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.dim()).sum()
    }
    fn apply_factor(&self, x: &[f64]) -> Vec<f64> {
        self.map(x, |b, s| b.apply_factor(s))
    }
    fn apply_factor_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.map(x, |b, s| b.apply_factor_adjoint(s))
    }
    fn solve(&self, x: &[f64]) -> Vec<f64> {
        self.map(x, |b, s| b.solve(s))
    }
    fn solve_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.map(x, |b, s| b.solve_adjoint(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{adjoint_mismatch, CooBuilder};

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den
    }

    fn spd(n: usize) -> CsrMatrix {
        let mut b = CooBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, 3.0 + (i % 3) as f64);
            if i + 1 < n {
                b.push(i, i + 1, -1.0);
                b.push(i + 1, i, -1.0);
            }
        }
        b.build()
    }

    fn probe(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i * 7 + 3) as f64).sin()).collect()
    }

    fn check_round_trips(f: &dyn PrecisionFactor) {
        let v = probe(f.dim());
        assert!(rel_err(&f.solve(&f.apply_factor(&v)), &v) < 1e-10);
        assert!(rel_err(&f.solve_adjoint(&f.apply_factor_adjoint(&v)), &v) < 1e-10);
        assert!(rel_err(&f.solve_precision(&f.apply_precision(&v)), &v) < 1e-10);
        assert!(adjoint_mismatch(&FactorMap(f), 10, 5) < 1e-12);
    }

    #[test]
    fn all_factors_round_trip() {
        let sym = SymmetricSparseFactor::new(spd(12), 1.7).unwrap();
        check_round_trips(&sym);
        let chol = BandCholesky::factor(&spd(12)).unwrap();
        let lower = CsrMatrix::from_dense(
            12,
            12,
            &nalgebra::DMatrix::from_fn(12, 12, |i, j| {
                if j <= i {
                    let mut e = vec![0.0; 12];
                    e[j] = 1.0;
                    chol.mul_lower(&e)[i]
                } else {
                    0.0
                }
            })
            .transpose()
            .as_slice()
            .to_vec(),
        );
        let tri = TriangularFactor::new(lower).unwrap();
        check_round_trips(&tri);
        // L Lᵀ reproduces the matrix
        let v = probe(12);
        assert!(rel_err(&tri.apply_precision(&v), &spd(12).matvec(&v)) < 1e-12);

        check_round_trips(&ScaledIdentityFactor { dim: 5, scale: 0.3 });
        check_round_trips(&DiagonalFactor::new(vec![1.0, 2.0, 3.0]).unwrap());
        let kron = KronFactor::new(Arc::new(sym.clone()), 3).unwrap();
        check_round_trips(&kron);
        let block = BlockDiagFactor::new(vec![
            Arc::new(kron),
            Arc::new(ScaledIdentityFactor { dim: 4, scale: 2.0 }),
        ]);
        check_round_trips(&block);
    }

    #[test]
    fn symmetric_factor_squares_exactly() {
        let m = spd(10);
        let f = SymmetricSparseFactor::new(m.clone(), 2.0).unwrap();
        let v = probe(10);
        let two_stage: Vec<f64> = m.matvec(&m.matvec(&v)).iter().map(|x| 4.0 * x).collect();
        assert!(rel_err(&f.apply_precision(&v), &two_stage) < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(DiagonalFactor::new(vec![1.0, 0.0]).is_err());
        assert!(SymmetricSparseFactor::new(spd(3), -1.0).is_err());
        let upper = CsrMatrix::from_dense(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(TriangularFactor::new(upper).is_err());
    }
}
