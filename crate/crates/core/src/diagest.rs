//! Estimators for `diag(A⁻¹)` and `tr(A⁻¹)` of an SPD operator.
//!
//! The Lanczos estimate factors `A⁻¹ ≈ W_k W_kᵀ` with `W_k = G⁻ᵀ V_k L_k⁻ᵀ`,
//! where `V_k` is the Lanczos basis of `G⁻¹ A G⁻ᵀ` and `T_k = L_k L_kᵀ`.
//! Its diagonal is the row-wise squared norm of `W_k` and grows
//! monotonically with `k`. The Monte Carlo estimate averages `y ⊙ z` over
//! Rademacher probes `z` with `y = A⁻¹ z`. The hybrid applies Monte Carlo
//! only to the remainder `A⁻¹ − W_k W_kᵀ`.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::krylov::{cg_solve, lanczos_with, LanczosBasis, LanczosOptions};
use crate::ops::{dot, incomplete_cholesky, CsrMatrix, LinearMap, PrecisionFactor};
use crate::rng;

/// Inner CG tolerance for probe solves.
pub const INNER_RTOL: f64 = 1e-10;
/// Largest dimension for which the dense oracle is formed.
pub const ORACLE_LIMIT: usize = 2000;

const LANCZOS_STREAM: u64 = 0x4c41;
const PROBE_STREAM: u64 = 0x5052_0000;

/// Rademacher probe `l` of the stream keyed by `seed`.
pub fn probe(seed: u64, l: usize, n: usize) -> Vec<f64> {
    rng::rademacher(&mut rng::stream(seed, PROBE_STREAM + l as u64), n)
}

/// `W_k` as explicit columns, together with the Lanczos run behind it.
#[derive(Debug, Clone)]
pub struct LowRankFactor {
    /// Columns `w_1 … w_k`, each of length `n`.
    pub columns: Vec<Vec<f64>>,
    pub basis: LanczosBasis,
}

impl LowRankFactor {
    pub fn k(&self) -> usize {
        self.columns.len()
    }

    /// `W_jᵀ z` using the first `j` columns.
    pub fn project(&self, j: usize, z: &[f64]) -> Vec<f64> {
        self.columns[..j].iter().map(|w| dot(w, z)).collect()
    }

    /// `W_j c`
    pub fn expand(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.columns.first().map_or(0, |w| w.len())];
        for (ci, w) in c.iter().zip(&self.columns) {
            for (o, x) in out.iter_mut().zip(w) {
                *o += ci * x;
            }
        }
        out
    }

    /// `diag(W_j W_jᵀ)` using the first `j` columns.
    pub fn diag(&self, j: usize) -> Vec<f64> {
        let mut d = vec![0.0; self.columns.first().map_or(0, |w| w.len())];
        for w in &self.columns[..j] {
            for (di, x) in d.iter_mut().zip(w) {
                *di += x * x;
            }
        }
        d
    }
}

/// `k` Lanczos steps on `G⁻¹ A G⁻ᵀ` from a seeded Gaussian start, then
/// `W_k = G⁻ᵀ V_k L_k⁻ᵀ`. Breakdowns restart from fresh directions so the
/// basis always has `k` columns; the factor for any `j < k` is the first
/// `j` columns.
pub fn lanczos_factor(
    a: &dyn LinearMap,
    precond: &dyn PrecisionFactor,
    k: usize,
    seed: u64,
) -> Result<LowRankFactor> {
    let n = precond.dim();
    let start = rng::standard_normal(&mut rng::stream(seed, LANCZOS_STREAM), n);
    let opts = LanczosOptions {
        restart_seed: Some(rng::split(seed, 1)),
    };
    let basis = lanczos_with(a, &start, k, precond, opts)?;
    // T_k is tridiagonal, so L_k is lower bidiagonal
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(basis.k);
    let mut prev: Option<(Vec<f64>, f64)> = None;
    for i in 0..basis.k {
        let sub = match &prev {
            Some((_, d)) => basis.beta[i - 1] / d,
            None => 0.0,
        };
        let piv = basis.alpha[i] - sub * sub;
        if !(piv > 0.0) {
            return Err(Error::NotPositiveDefinite { row: i, pivot: piv });
        }
        let d = piv.sqrt();
        let mut y = basis.v[i].clone();
        if let Some((yp, _)) = &prev {
            for (a, b) in y.iter_mut().zip(yp) {
                *a -= sub * b;
            }
        }
        y.iter_mut().for_each(|x| *x /= d);
        columns.push(precond.solve_adjoint(&y));
        prev = Some((y, d));
    }
    Ok(LowRankFactor { columns, basis })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagMethod {
    Lanczos,
    Mc,
    LanczosMc,
}

impl DiagMethod {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Lanczos => "lanczos",
            Self::Mc => "mc",
            Self::LanczosMc => "lanczos_mc",
        }
    }

    pub fn from_tag(s: &str) -> Result<Self> {
        match s {
            "lanczos" => Ok(Self::Lanczos),
            "mc" => Ok(Self::Mc),
            "lanczos_mc" => Ok(Self::LanczosMc),
            _ => Err(Error::InvalidArgument(format!("unknown estimator {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagEstimate {
    pub values: Vec<f64>,
    pub method: DiagMethod,
    pub k: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Trace estimate from the same probes.
    pub trace: f64,
    /// Applications of `A` (Lanczos steps plus inner CG iterations).
    pub operator_applies: usize,
    /// CG iterations per probe.
    pub inner_iterations: Vec<usize>,
}

struct Counted<'a> {
    inner: &'a dyn LinearMap,
    count: AtomicUsize,
}

impl LinearMap for Counted<'_> {
    fn in_dim(&self) -> usize {
        self.inner.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.inner.out_dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.apply(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.apply_adjoint(y)
    }
}

/// Preconditioned CG solve of `A x = b` for probe `probe`, to [`INNER_RTOL`].
pub fn probe_solve(
    a: &dyn LinearMap,
    precond: Option<&dyn PrecisionFactor>,
    b: &[f64],
    probe: usize,
) -> Result<(Vec<f64>, usize)> {
    let max_iter = 20 * b.len().max(10);
    let (x, rep) = cg_solve(a, b, INNER_RTOL, max_iter, precond)?;
    if !rep.converged {
        return Err(Error::InnerSolve {
            probe,
            iterations: rep.iterations,
            residual: rep.final_residual() / rep.residual_history[0],
        });
    }
    Ok((x, rep.iterations))
}

/// Lanczos estimate `diag(W_k W_kᵀ)`.
pub fn diag_lanczos(
    a: &dyn LinearMap,
    precond: &dyn PrecisionFactor,
    k: usize,
    seed: u64,
) -> Result<DiagEstimate> {
    diag_lanczos_mc(a, precond, k, 0, seed)
}

/// Plain Monte Carlo with `N` Rademacher probes; `apply_inv(l, z)` returns
/// `A⁻¹ z` for probe `l`.
pub fn diag_mc<F>(mut apply_inv: F, n: usize, n_samples: usize, seed: u64) -> Result<DiagEstimate>
where
    F: FnMut(usize, &[f64]) -> Result<Vec<f64>>,
{
    if n_samples == 0 {
        return Err(Error::InvalidArgument("Monte Carlo needs at least one probe".into()));
    }
    let mut acc = vec![0.0; n];
    let mut trace = 0.0;
    for l in 0..n_samples {
        let z = probe(seed, l, n);
        let y = apply_inv(l, &z)?;
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                context: format!("inverse application for probe {l}"),
                expected: n,
                found: y.len(),
            });
        }
        for ((a, yi), zi) in acc.iter_mut().zip(&y).zip(&z) {
            *a += yi * zi;
        }
        trace += dot(&y, &z);
    }
    let s = 1.0 / n_samples as f64;
    Ok(DiagEstimate {
        values: acc.iter().map(|v| v * s).collect(),
        method: DiagMethod::Mc,
        k: 0,
        n_samples,
        seed,
        trace: trace * s,
        operator_applies: 0,
        inner_iterations: Vec::new(),
    })
}

/// Plain Monte Carlo with preconditioned CG inner solves.
pub fn diag_mc_cg(
    a: &dyn LinearMap,
    precond: Option<&dyn PrecisionFactor>,
    n_samples: usize,
    seed: u64,
) -> Result<DiagEstimate> {
    let counted = Counted {
        inner: a,
        count: AtomicUsize::new(0),
    };
    let mut iters = Vec::with_capacity(n_samples);
    let mut est = diag_mc(
        |l, z| {
            let (x, it) = probe_solve(&counted, precond, z, l)?;
            iters.push(it);
            Ok(x)
        },
        a.in_dim(),
        n_samples,
        seed,
    )?;
    est.operator_applies = counted.count.load(Ordering::Relaxed);
    est.inner_iterations = iters;
    Ok(est)
}

/// Hybrid estimate `diag(W_k W_kᵀ) + (1/N) Σ (A⁻¹z − W_k W_kᵀ z) ⊙ z`.
/// `N = 0` gives the pure Lanczos estimate.
pub fn diag_lanczos_mc(
    a: &dyn LinearMap,
    precond: &dyn PrecisionFactor,
    k: usize,
    n_samples: usize,
    seed: u64,
) -> Result<DiagEstimate> {
    let n = precond.dim();
    if a.in_dim() != n || a.out_dim() != n {
        return Err(Error::DimensionMismatch {
            context: "operator vs preconditioner".into(),
            expected: n,
            found: a.in_dim(),
        });
    }
    let counted = Counted {
        inner: a,
        count: AtomicUsize::new(0),
    };
    let w = lanczos_factor(&counted, precond, k, seed)?;
    let mut values = w.diag(w.k());
    let mut trace: f64 = values.iter().sum();
    let mut iters = Vec::with_capacity(n_samples);
    if n_samples > 0 {
        let mut acc = vec![0.0; n];
        let mut tr = 0.0;
        for l in 0..n_samples {
            let z = probe(seed, l, n);
            let (x, it) = probe_solve(&counted, Some(precond), &z, l)?;
            iters.push(it);
            let low = w.expand(&w.project(w.k(), &z));
            for i in 0..n {
                let y = x[i] - low[i];
                acc[i] += y * z[i];
                tr += y * z[i];
            }
        }
        let s = 1.0 / n_samples as f64;
        for (v, a) in values.iter_mut().zip(&acc) {
            *v += a * s;
        }
        trace += tr * s;
    }
    Ok(DiagEstimate {
        values,
        method: if n_samples == 0 {
            DiagMethod::Lanczos
        } else {
            DiagMethod::LanczosMc
        },
        k: w.k(),
        n_samples,
        seed,
        trace,
        operator_applies: counted.count.load(Ordering::Relaxed),
        inner_iterations: iters,
    })
}

/// Hybrid trace estimate `tr(W_kᵀ W_k) + (1/N) Σ yᵀ z`.
pub fn trace_inverse(
    a: &dyn LinearMap,
    precond: &dyn PrecisionFactor,
    k: usize,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    Ok(diag_lanczos_mc(a, precond, k, n_samples, seed)?.trace)
}

/// Dense `diag(A⁻¹)` by Cholesky; refuses past [`ORACLE_LIMIT`].
pub fn exact_diag_inverse(a: &CsrMatrix) -> Result<Vec<f64>> {
    let n = a.rows();
    if n > ORACLE_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "dense oracle refused for n = {n} > {ORACLE_LIMIT}"
        )));
    }
    let dense = DMatrix::from_row_slice(n, n, &a.to_dense());
    let chol = dense.cholesky().ok_or(Error::NotPositiveDefinite {
        row: 0,
        pivot: f64::NAN,
    })?;
    Ok(chol.inverse().diagonal().iter().copied().collect())
}

/// A benchmark matrix with its exact inverse diagonal.
#[derive(Debug, Clone)]
pub struct BenchCase {
    pub name: String,
    pub matrix: Arc<CsrMatrix>,
    pub condition_estimate: f64,
    pub exact_diag: Vec<f64>,
}

impl BenchCase {
    /// Wrap a user matrix: checks symmetry, forms the dense oracle and the
    /// extreme eigenvalues.
    pub fn from_matrix(name: &str, matrix: CsrMatrix) -> Result<Self> {
        let n = matrix.rows();
        if n != matrix.cols() || !matrix.is_symmetric(1e-12) {
            return Err(Error::InvalidArgument(format!("{name}: matrix is not symmetric")));
        }
        if n > ORACLE_LIMIT {
            return Err(Error::InvalidArgument(format!(
                "{name}: n = {n} exceeds the oracle limit {ORACLE_LIMIT}"
            )));
        }
        let exact_diag = exact_diag_inverse(&matrix)?;
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &matrix.to_dense()));
        let lo = eig.eigenvalues.min();
        let hi = eig.eigenvalues.max();
        Ok(Self {
            name: name.to_string(),
            matrix: Arc::new(matrix),
            condition_estimate: hi / lo,
            exact_diag,
        })
    }

    pub fn from_matrix_market<R: BufRead>(name: &str, reader: R) -> Result<Self> {
        Self::from_matrix(name, crate::ops::read_matrix_market(reader)?)
    }

    /// Synthetic SPD matrix `Q D Qᵀ` with log-spaced eigenvalues in
    /// `[1, cond]` and `Q` a product of sparse Givens layers.
    pub fn synthetic(name: &str, n: usize, cond: f64, seed: u64) -> Result<Self> {
        if n < 4 || !(cond >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "synthetic case needs n >= 4 and cond >= 1 (n = {n}, cond = {cond})"
            )));
        }
        let mut r = rng::stream(seed, 0x5e7);
        // sorted, so each rotation mixes modes of similar magnitude and IC(0)
        // exists without a shift
        let eig: Vec<f64> = (0..n)
            .map(|i| cond.powf(i as f64 / (n - 1) as f64))
            .collect();
        let rotations = givens_layers(n, &mut r);
        let a = rotate_diagonal(&eig, &rotations);
        let inv: Vec<f64> = eig.iter().map(|l| 1.0 / l).collect();
        let ainv = rotate_diagonal(&inv, &rotations);
        let exact_diag = (0..n).map(|i| ainv[i * n + i]).collect();
        Ok(Self {
            name: name.to_string(),
            matrix: Arc::new(CsrMatrix::from_dense(n, n, &a)),
            condition_estimate: cond,
            exact_diag,
        })
    }

    /// Diffusion on a `rows × cols` grid with a smooth coefficient field
    /// `10^{a f}` and a coupling `b` of boundary cells to a zero exterior.
    ///
    /// With [`Conditioning::NearFloating`] the contrast is `10³` and `b` is
    /// bisected (in log scale) until `κ(A)` is within 1% of `cond`, so the
    /// conditioning sits in a few smooth near-null modes. With
    /// [`Conditioning::Contrast`], `b = 1` and the amplitude `a` is bisected
    /// instead, which spreads the small eigenvalues over many localized
    /// low-conductivity modes.
    pub fn diffusion(
        name: &str,
        rows: usize,
        cols: usize,
        cond: f64,
        mode: Conditioning,
        seed: u64,
    ) -> Result<Self> {
        let n = rows * cols;
        if rows < 2 || cols < 2 || n > ORACLE_LIMIT || !(cond > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "diffusion case needs a grid of at most {ORACLE_LIMIT} cells and cond > 1"
            )));
        }
        let field = smooth_field(rows, cols, seed);
        let mut faces = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let p = r * cols + c;
                if c + 1 < cols {
                    faces.push((p, p + 1, 0.5 * (field[p] + field[p + 1])));
                }
                if r + 1 < rows {
                    faces.push((p, p + cols, 0.5 * (field[p] + field[p + cols])));
                }
            }
        }
        // t is log10(b) or the amplitude; κ is monotone in t either way
        let (params, mut lo, mut hi, increasing): (fn(f64) -> (f64, f64), f64, f64, bool) = match mode {
            Conditioning::NearFloating => (|t| (1.5, 10f64.powf(t)), -12.0, 2.0, false),
            Conditioning::Contrast => (|t| (t, 1.0), 0.0, 8.0, true),
        };
        let build = |t: f64| {
            let (amp, b) = params(t);
            let mut a = vec![0.0; n * n];
            for &(p, q, f) in &faces {
                let k = 10f64.powf(amp * f);
                a[p * n + p] += k;
                a[q * n + q] += k;
                a[p * n + q] -= k;
                a[q * n + p] -= k;
            }
            for p in 0..n {
                let (r, c) = (p / cols, p % cols);
                if r == 0 || c == 0 || r + 1 == rows || c + 1 == cols {
                    a[p * n + p] += b;
                }
            }
            a
        };
        let kappa = |a: &[f64]| {
            let e = DMatrix::from_row_slice(n, n, a).symmetric_eigenvalues();
            if e.min() > 0.0 {
                e.max() / e.min()
            } else {
                f64::INFINITY
            }
        };
        let below = |k: f64| (k < cond) == increasing;
        if !below(kappa(&build(lo))) || below(kappa(&build(hi))) {
            return Err(Error::InvalidArgument(format!("condition {cond:e} not reachable")));
        }
        let mut a = Vec::new();
        let mut kap = 0.0;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            a = build(mid);
            kap = kappa(&a);
            if (kap / cond - 1.0).abs() < 0.01 {
                break;
            }
            if below(kap) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Self::from_matrix(name, CsrMatrix::from_dense(n, n, &a)).map(|mut c| {
            c.condition_estimate = kap;
            c
        })
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }
}

/// Synthetic cases matching the spread of sizes and condition numbers of a
/// standard SPD test collection.
pub fn standard_fixtures(seed: u64) -> Result<Vec<BenchCase>> {
    [
        ("synth-cond5", 1138, 5.0),
        ("synth-cond4.6e3", 662, 4.63e3),
        ("synth-cond7.4e4", 500, 7.35e4),
        ("synth-cond1.2e7", 800, 1.23e7),
        ("synth-cond5.1e9", 416, 5.052e9),
    ]
    .iter()
    .enumerate()
    .map(|(i, &(name, n, c))| BenchCase::synthetic(name, n, c, rng::split(seed, i as u64)))
    .collect()
}

/// Where a [`BenchCase::diffusion`] fixture gets its conditioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    NearFloating,
    Contrast,
}

/// Smooth random field scaled to `[−1, 1]`: a few random plane waves.
fn smooth_field(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, 0xd1f);
    let waves: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| {
            let kx = r.random_range(-3.0..3.0) * std::f64::consts::PI / cols as f64;
            let ky = r.random_range(-3.0..3.0) * std::f64::consts::PI / rows as f64;
            (kx, ky, r.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let f: Vec<f64> = (0..rows * cols)
        .map(|p| {
            let (y, x) = ((p / cols) as f64, (p % cols) as f64);
            waves.iter().map(|(kx, ky, ph)| (kx * x + ky * y + ph).cos()).sum()
        })
        .collect();
    let (lo, hi) = f.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    f.iter().map(|v| 2.0 * (v - lo) / (hi - lo) - 1.0).collect()
}

type Rotation = (usize, usize, f64, f64);

/// Three layers of disjoint rotations: neighbours `(2i, 2i+1)`, then
/// `(2i+1, 2i+2)`, then pairs `w` apart, with random angles.
fn givens_layers(n: usize, r: &mut rng::StreamRng) -> Vec<Rotation> {
    let w = 8.min(n / 2).max(1);
    let mut out = Vec::new();
    let mut push = |i: usize, j: usize, r: &mut rng::StreamRng| {
        let t: f64 = r.random_range(0.0..std::f64::consts::PI);
        out.push((i, j, t.cos(), t.sin()));
    };
    for i in (0..n - 1).step_by(2) {
        push(i, i + 1, r);
    }
    for i in (1..n - 1).step_by(2) {
        push(i, i + 1, r);
    }
    for i in 0..n.saturating_sub(w) {
        if (i / w) % 2 == 0 {
            push(i, i + w, r);
        }
    }
    out
}

/// Dense row-major `Q diag(d) Qᵀ` with `Q = R_m ⋯ R_1`, entries that no
/// rotation touches left exactly zero.
fn rotate_diagonal(d: &[f64], rotations: &[Rotation]) -> Vec<f64> {
    let n = d.len();
    let mut a = vec![0.0; n * n];
    for (i, v) in d.iter().enumerate() {
        a[i * n + i] = *v;
    }
    for &(i, j, c, s) in rotations {
        // rows
        for k in 0..n {
            let (x, y) = (a[i * n + k], a[j * n + k]);
            if x != 0.0 || y != 0.0 {
                a[i * n + k] = c * x - s * y;
                a[j * n + k] = s * x + c * y;
            }
        }
        // columns
        for k in 0..n {
            let (x, y) = (a[k * n + i], a[k * n + j]);
            if x != 0.0 || y != 0.0 {
                a[k * n + i] = c * x - s * y;
                a[k * n + j] = s * x + c * y;
            }
        }
    }
    a
}

/// One row of a benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub case: String,
    pub method: DiagMethod,
    pub k: usize,
    pub n_samples: usize,
    pub trials: usize,
    pub mean_rel_err: f64,
    pub q025: f64,
    pub q975: f64,
}

pub const BENCH_HEADER: &str = "case,method,k,n_samples,trials,mean_rel_err,q025,q975";

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], mut w: W) -> Result<()> {
    writeln!(w, "{BENCH_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.case,
            r.method.tag(),
            r.k,
            r.n_samples,
            r.trials,
            r.mean_rel_err,
            r.q025,
            r.q975
        )?;
    }
    Ok(())
}

pub fn read_bench_csv<R: BufRead>(reader: R) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        if i == 0 {
            if line.trim() != BENCH_HEADER {
                return Err(bad(format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(format!("expected 8 fields, found {}", f.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(e.to_string()));
        let real = |s: &str| s.parse::<f64>().map_err(|e| bad(e.to_string()));
        rows.push(BenchRow {
            case: f[0].to_string(),
            method: DiagMethod::from_tag(f[1]).map_err(|e| bad(e.to_string()))?,
            k: int(f[2])?,
            n_samples: int(f[3])?,
            trials: int(f[4])?,
            mean_rel_err: real(f[5])?,
            q025: real(f[6])?,
            q975: real(f[7])?,
        });
    }
    Ok(rows)
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn relative_error(est: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

/// Error statistics of the three estimators over `trials` repetitions.
///
/// Within a trial the probes for the largest `N` are solved once and reused:
/// smaller `N` use a prefix, and every `k` shares one Lanczos run (the
/// factor for `k` is a prefix of the factor for `max k`). Values of `k`
/// equal to 0 are skipped for the Lanczos-based methods.
pub fn bench_sweep(
    case: &BenchCase,
    precond: &dyn PrecisionFactor,
    k_values: &[usize],
    n_values: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let n = case.n();
    if n > ORACLE_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "{}: n = {n} exceeds the oracle limit {ORACLE_LIMIT}",
            case.name
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let a = case.matrix.as_ref();
    let truth = &case.exact_diag;
    let ks: Vec<usize> = k_values.iter().copied().filter(|&k| k > 0).collect();
    if let Some(&k) = ks.iter().find(|&&k| k > n) {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds n = {n}")));
    }
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let nmax = n_values.iter().copied().max().unwrap_or(0);
    // errors[(method, k, N)] per trial
    let mut keys: Vec<(DiagMethod, usize, usize)> = Vec::new();
    for &k in &ks {
        keys.push((DiagMethod::Lanczos, k, 0));
    }
    for &nn in n_values.iter().filter(|&&v| v > 0) {
        keys.push((DiagMethod::Mc, 0, nn));
        for &k in &ks {
            keys.push((DiagMethod::LanczosMc, k, nn));
        }
    }
    let mut errors = vec![Vec::with_capacity(trials); keys.len()];
    for t in 0..trials {
        let tseed = rng::split(seed, t as u64);
        let w = if kmax > 0 {
            Some(lanczos_factor(a, precond, kmax, tseed)?)
        } else {
            None
        };
        // running sums of y ⊙ z for MC and for each k's remainder
        let mut mc = vec![0.0; n];
        let mut rem = vec![vec![0.0; n]; ks.len()];
        let mut snapshots: Vec<(usize, Vec<f64>, Vec<Vec<f64>>)> = Vec::new();
        let mut targets: Vec<usize> = n_values.iter().copied().filter(|&v| v > 0).collect();
        targets.sort_unstable();
        targets.dedup();
        let mut next = 0;
        for l in 0..nmax {
            let z = probe(tseed, l, n);
            let (x, _) = probe_solve(a, Some(precond), &z, l)?;
            for i in 0..n {
                mc[i] += x[i] * z[i];
            }
            if let Some(w) = &w {
                let c = w.project(kmax, &z);
                for (ki, &k) in ks.iter().enumerate() {
                    let low = w.expand(&c[..k]);
                    for i in 0..n {
                        rem[ki][i] += (x[i] - low[i]) * z[i];
                    }
                }
            }
            while next < targets.len() && targets[next] == l + 1 {
                snapshots.push((l + 1, mc.clone(), rem.clone()));
                next += 1;
            }
        }
        for (slot, &(method, k, nn)) in keys.iter().enumerate() {
            let est: Vec<f64> = match method {
                DiagMethod::Lanczos => w.as_ref().unwrap().diag(k),
                DiagMethod::Mc => {
                    let s = &snapshots.iter().find(|s| s.0 == nn).unwrap().1;
                    s.iter().map(|v| v / nn as f64).collect()
                }
                DiagMethod::LanczosMc => {
                    let ki = ks.iter().position(|&kk| kk == k).unwrap();
                    let s = &snapshots.iter().find(|s| s.0 == nn).unwrap().2[ki];
                    let base = w.as_ref().unwrap().diag(k);
                    base.iter().zip(s).map(|(b, r)| b + r / nn as f64).collect()
                }
            };
            errors[slot].push(relative_error(&est, truth));
        }
    }
    Ok(keys
        .iter()
        .zip(&errors)
        .map(|(&(method, k, nn), e)| BenchRow {
            case: case.name.clone(),
            method,
            k,
            n_samples: nn,
            trials,
            mean_rel_err: e.iter().sum::<f64>() / e.len() as f64,
            q025: quantile(e, 0.025),
            q975: quantile(e, 0.975),
        })
        .collect())
}

/// IC(0) preconditioner for a benchmark matrix (with the shift retry of
/// [`incomplete_cholesky`]).
pub fn ic0_preconditioner(case: &BenchCase) -> Result<crate::ops::TriangularFactor> {
    Ok(incomplete_cholesky(&case.matrix)?.factor)
}
