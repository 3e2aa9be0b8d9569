use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rng;

use super::vector::{dot, norm2};

/// A matrix-free linear operator `A: R^in -> R^out` with its adjoint.
///
/// Implementations must be pure: the same input always gives the same
/// output, and concurrent calls are allowed. Lengths are checked with
/// assertions; use the fallible helpers (e.g. [`super::spmv`]) at API
/// boundaries where a recoverable error is wanted.
pub trait LinearMap: Send + Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64>;
}

pub type MapRef = Arc<dyn LinearMap>;

impl<T: LinearMap + ?Sized> LinearMap for Arc<T> {
    fn in_dim(&self) -> usize {
        (**self).in_dim()
    }
    fn out_dim(&self) -> usize {
        (**self).out_dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (**self).apply(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        (**self).apply_adjoint(y)
    }
}

impl<T: LinearMap + ?Sized> LinearMap for &T {
    fn in_dim(&self) -> usize {
        (**self).in_dim()
    }
    fn out_dim(&self) -> usize {
        (**self).out_dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (**self).apply(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        (**self).apply_adjoint(y)
    }
}

type VecFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Operator defined by a pair of closures.
pub struct FnMap {
    in_dim: usize,
    out_dim: usize,
    forward: VecFn,
    adjoint: VecFn,
}

impl FnMap {
    pub fn new<F, G>(in_dim: usize, out_dim: usize, forward: F, adjoint: G) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            in_dim,
            out_dim,
            forward: Box::new(forward),
            adjoint: Box::new(adjoint),
        }
    }

    /// Self-adjoint operator from a single closure.
    pub fn symmetric<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + Clone + 'static,
    {
        Self::new(dim, dim, f.clone(), f)
    }
}

impl LinearMap for FnMap {
    fn in_dim(&self) -> usize {
        self.in_dim
    }
    fn out_dim(&self) -> usize {
        self.out_dim
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim, "FnMap::apply input length");
        let y = (self.forward)(x);
        debug_assert_eq!(y.len(), self.out_dim);
        y
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.out_dim, "FnMap::apply_adjoint input length");
        (self.adjoint)(y)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityMap(pub usize);

impl LinearMap for IdentityMap {
    fn in_dim(&self) -> usize {
        self.0
    }
    fn out_dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.0);
        x.to_vec()
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.apply(y)
    }
}

#[derive(Debug, Clone)]
pub struct DiagonalMap(pub Vec<f64>);

impl LinearMap for DiagonalMap {
    fn in_dim(&self) -> usize {
        self.0.len()
    }
    fn out_dim(&self) -> usize {
        self.0.len()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.0.len());
        x.iter().zip(&self.0).map(|(a, d)| a * d).collect()
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.apply(y)
    }
}

/// `s * A`
pub struct ScaledMap<M> {
    pub scale: f64,
    pub inner: M,
}

impl<M: LinearMap> LinearMap for ScaledMap<M> {
    fn in_dim(&self) -> usize {
        self.inner.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.inner.out_dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.inner.apply(x);
        y.iter_mut().for_each(|v| *v *= self.scale);
        y
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.inner.apply_adjoint(y);
        x.iter_mut().for_each(|v| *v *= self.scale);
        x
    }
}

/// `Aᵀ` as an operator.
pub struct Adjoint<M>(pub M);

impl<M: LinearMap> LinearMap for Adjoint<M> {
    fn in_dim(&self) -> usize {
        self.0.out_dim()
    }
    fn out_dim(&self) -> usize {
        self.0.in_dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.0.apply_adjoint(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.0.apply(y)
    }
}

/// Product `A_0 A_1 ... A_{k-1}`; `apply` runs right to left.
pub struct ComposedMap {
    maps: Vec<MapRef>,
}

impl ComposedMap {
    pub fn factors(&self) -> &[MapRef] {
        &self.maps
    }
}

impl LinearMap for ComposedMap {
    fn in_dim(&self) -> usize {
        self.maps.last().unwrap().in_dim()
    }
    fn out_dim(&self) -> usize {
        self.maps[0].out_dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        for m in self.maps.iter().rev() {
            v = m.apply(&v);
        }
        v
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut v = y.to_vec();
        for m in &self.maps {
            v = m.apply_adjoint(&v);
        }
        v
    }
}

/// Compose a chain of maps into their product, written left to right.
///
/// `compose(vec![a, b])` applies `b` first; the adjoint is `bᵀ aᵀ`.
pub fn compose(maps: Vec<MapRef>) -> Result<ComposedMap> {
    if maps.is_empty() {
        return Err(Error::InvalidArgument("compose: empty chain".into()));
    }
    for (i, pair) in maps.windows(2).enumerate() {
        if pair[0].in_dim() != pair[1].out_dim() {
            return Err(Error::IncompatibleChain {
                left: i,
                left_in: pair[0].in_dim(),
                right: i + 1,
                right_out: pair[1].out_dim(),
            });
        }
    }
    Ok(ComposedMap { maps })
}

/// `I_count ⊗ B`: the block applied to each contiguous segment.
pub struct KronBlockDiag {
    block: MapRef,
    count: usize,
}

impl LinearMap for KronBlockDiag {
    fn in_dim(&self) -> usize {
        self.block.in_dim() * self.count
    }
    fn out_dim(&self) -> usize {
        self.block.out_dim() * self.count
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim(), "kron_block_diag input length");
        x.chunks(self.block.in_dim())
            .flat_map(|seg| self.block.apply(seg))
            .collect()
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.out_dim(), "kron_block_diag adjoint length");
        y.chunks(self.block.out_dim())
            .flat_map(|seg| self.block.apply_adjoint(seg))
            .collect()
    }
}

pub fn kron_block_diag(block: MapRef, count: usize) -> Result<KronBlockDiag> {
    if count == 0 {
        return Err(Error::InvalidArgument("kron_block_diag: count must be >= 1".into()));
    }
    Ok(KronBlockDiag { block, count })
}

impl KronBlockDiag {
    /// Fallible application for inputs of unknown provenance.
    pub fn try_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() % (self.count * self.block.in_dim()) != 0 || x.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "kron_block_diag: input not a multiple of {} x {}",
                    self.count,
                    self.block.in_dim()
                ),
                expected: self.in_dim(),
                found: x.len(),
            });
        }
        Ok(self.apply(x))
    }
}

/// Block-diagonal operator with heterogeneous blocks.
pub struct BlockDiagMap {
    blocks: Vec<MapRef>,
}

impl BlockDiagMap {
    pub fn new(blocks: Vec<MapRef>) -> Self {
        assert!(!blocks.is_empty());
        Self { blocks }
    }
}

impl LinearMap for BlockDiagMap {
    fn in_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.in_dim()).sum()
    }
    fn out_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.out_dim()).sum()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim());
        let mut out = Vec::with_capacity(self.out_dim());
        let mut off = 0;
        for b in &self.blocks {
            out.extend(b.apply(&x[off..off + b.in_dim()]));
            off += b.in_dim();
        }
        out
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.out_dim());
        let mut out = Vec::with_capacity(self.in_dim());
        let mut off = 0;
        for b in &self.blocks {
            out.extend(b.apply_adjoint(&y[off..off + b.out_dim()]));
            off += b.out_dim();
        }
        out
    }
}

/// Wraps a map and counts forward and adjoint applications.
pub struct CountingMap<M> {
    inner: M,
    forward: AtomicUsize,
    adjoint: AtomicUsize,
}

impl<M: LinearMap> CountingMap<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            forward: AtomicUsize::new(0),
            adjoint: AtomicUsize::new(0),
        }
    }

    pub fn forward_count(&self) -> usize {
        self.forward.load(Ordering::Relaxed)
    }

    pub fn adjoint_count(&self) -> usize {
        self.adjoint.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> usize {
        self.forward_count() + self.adjoint_count()
    }

    pub fn reset(&self) {
        self.forward.store(0, Ordering::Relaxed);
        self.adjoint.store(0, Ordering::Relaxed);
    }
}

impl<M: LinearMap> LinearMap for CountingMap<M> {
    fn in_dim(&self) -> usize {
        self.inner.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.inner.out_dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.forward.fetch_add(1, Ordering::Relaxed);
        self.inner.apply(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.adjoint.fetch_add(1, Ordering::Relaxed);
        self.inner.apply_adjoint(y)
    }
}

/// Largest operator dimension [`densify`] accepts.
pub const DENSIFY_LIMIT: usize = 2000;

/// Materialize a map column by column. Debug and oracle use only.
pub fn densify(map: &dyn LinearMap) -> Result<DMatrix<f64>> {
    let (m, n) = (map.out_dim(), map.in_dim());
    if m > DENSIFY_LIMIT || n > DENSIFY_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "densify: {m}x{n} exceeds the {DENSIFY_LIMIT} limit"
        )));
    }
    let mut out = DMatrix::zeros(m, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = map.apply(&e);
        for i in 0..m {
            out[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    Ok(out)
}

/// Worst relative violation of `<Au, v> = <u, Aᵀv>` over `trials` random
/// probe pairs, scaled by `max(|Au||v|, |u||Aᵀv|)`.
pub fn adjoint_mismatch(map: &dyn LinearMap, trials: usize, seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let mut r = rng::stream(seed, t as u64);
        let u = rng::standard_normal(&mut r, map.in_dim());
        let v = rng::standard_normal(&mut r, map.out_dim());
        let au = map.apply(&u);
        let atv = map.apply_adjoint(&v);
        let lhs = dot(&au, &v);
        let rhs = dot(&u, &atv);
        let scale = (norm2(&au) * norm2(&v)).max(norm2(&u) * norm2(&atv));
        if scale > 0.0 {
            worst = worst.max((lhs - rhs).abs() / scale);
        }
    }
    worst
}
