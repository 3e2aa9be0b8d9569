//! Steady Darcy flow `−∇·(K ∇h) = q δ(s)` on a rectangular cell-centered
//! finite-volume grid, driven by point extraction at one well per pump test.
//!
//! Rows run top to bottom. The left, right and top sides hold a constant
//! head; the bottom is no-flux. The background (no pumping) head is that
//! constant, so the drawdown `s = h_bg − h` solves `A(K) s = q e_well`
//! with homogeneous Dirichlet data, which is what is assembled here.
//! Face transmissibilities are harmonic means `2 K₁K₂/(K₁+K₂)`; a Dirichlet
//! face sits half a cell from the cell center and gets `2 K`. With square
//! cells the face length and center distance cancel, so `A` does not depend
//! on the cell size.

use std::f64::consts::LN_10;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mapsolve::ForwardModel;
use crate::ops::{BandCholesky, CooBuilder, CsrMatrix, LinearMap, MapRef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarcyProblem {
    pub rows: usize,
    pub cols: usize,
    /// Cell side length (m).
    pub cell_size: f64,
    /// Cell index of each well.
    pub wells: Vec<usize>,
    /// Extraction rate per pump test (2-D source strength).
    pub pump_rate: f64,
}

/// Which side a boundary face lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Top,
}

/// Interior faces `(p, q)` and Dirichlet faces `(p, side)` of the grid.
fn faces(rows: usize, cols: usize) -> (Vec<(usize, usize)>, Vec<(usize, Side)>) {
    let mut inner = Vec::with_capacity(2 * rows * cols);
    let mut bnd = Vec::with_capacity(2 * rows + cols);
    for r in 0..rows {
        for c in 0..cols {
            let p = r * cols + c;
            if c + 1 < cols {
                inner.push((p, p + 1));
            }
            if r + 1 < rows {
                inner.push((p, p + cols));
            }
            if c == 0 {
                bnd.push((p, Side::Left));
            }
            if c + 1 == cols {
                bnd.push((p, Side::Right));
            }
            if r == 0 {
                bnd.push((p, Side::Top));
            }
        }
    }
    (inner, bnd)
}

#[inline]
fn harmonic(k1: f64, k2: f64) -> f64 {
    2.0 * k1 * k2 / (k1 + k2)
}

/// Finite-volume matrix `A(K)` for conductivities `k` (one per cell).
pub fn fv_matrix(rows: usize, cols: usize, k: &[f64]) -> Result<CsrMatrix> {
    check_len("conductivity field", rows * cols, k.len())?;
    if let Some(i) = k.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Forward(format!(
            "conductivity must be positive and finite, cell {i} has {}",
            k[i]
        )));
    }
    let (inner, bnd) = faces(rows, cols);
    let mut b = CooBuilder::with_capacity(rows * cols, rows * cols, 4 * inner.len() + bnd.len());
    for &(p, q) in &inner {
        let t = harmonic(k[p], k[q]);
        b.push(p, p, t);
        b.push(q, q, t);
        b.push(p, q, -t);
        b.push(q, p, -t);
    }
    for &(p, _) in &bnd {
        b.push(p, p, 2.0 * k[p]);
    }
    Ok(b.build())
}

/// Solve the finite-volume problem with cell sources `source` (already
/// integrated over each cell) and Dirichlet values `g(x, y)` at boundary
/// face midpoints. Coordinates: `x` from the left edge, `y` up from the
/// bottom edge, cell size `h`.
pub fn solve_fv_dirichlet(
    rows: usize,
    cols: usize,
    h: f64,
    k: &[f64],
    source: &[f64],
    g: impl Fn(f64, f64) -> f64,
) -> Result<Vec<f64>> {
    check_len("cell sources", rows * cols, source.len())?;
    let a = fv_matrix(rows, cols, k)?;
    let mut rhs = source.to_vec();
    let (_, bnd) = faces(rows, cols);
    for &(p, side) in &bnd {
        let (r, c) = (p / cols, p % cols);
        let (x, y) = match side {
            Side::Left => (0.0, (rows - r) as f64 * h - 0.5 * h),
            Side::Right => (cols as f64 * h, (rows - r) as f64 * h - 0.5 * h),
            Side::Top => ((c as f64 + 0.5) * h, rows as f64 * h),
        };
        rhs[p] += 2.0 * k[p] * g(x, y);
    }
    let chol = BandCholesky::factor(&a).map_err(|e| Error::Forward(format!("FV solve: {e}")))?;
    Ok(chol.solve(&rhs))
}

/// Evenly spread interior well cells: `n` points of a lattice covering the grid.
pub fn well_grid(rows: usize, cols: usize, n: usize) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two wells".into()));
    }
    let nx = (n as f64).sqrt().ceil() as usize;
    let ny = n.div_ceil(nx);
    if nx + 2 > cols || ny + 2 > rows {
        return Err(Error::InvalidArgument(format!(
            "{n} wells do not fit on a {rows}x{cols} grid"
        )));
    }
    let mut wells = Vec::with_capacity(n);
    'outer: for iy in 0..ny {
        for ix in 0..nx {
            if wells.len() == n {
                break 'outer;
            }
            let r = ((iy as f64 + 0.5) / ny as f64 * rows as f64) as usize;
            let c = ((ix as f64 + 0.5) / nx as f64 * cols as f64) as usize;
            wells.push(r.clamp(1, rows - 2) * cols + c.clamp(1, cols - 2));
        }
    }
    Ok(wells)
}

impl DarcyProblem {
    pub fn new(rows: usize, cols: usize, cell_size: f64, wells: Vec<usize>, pump_rate: f64) -> Result<Self> {
        let p = Self {
            rows,
            cols,
            cell_size,
            wells,
            pump_rate,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 3 || self.cols < 3 {
            return Err(Error::InvalidArgument(format!(
                "Darcy grid {}x{} too small",
                self.rows, self.cols
            )));
        }
        if !(self.cell_size > 0.0) || !self.pump_rate.is_finite() {
            return Err(Error::InvalidArgument("cell size must be positive and pump rate finite".into()));
        }
        if self.wells.len() < 2 {
            return Err(Error::InvalidArgument("need at least two wells".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &w in &self.wells {
            let (r, c) = (w / self.cols, w % self.cols);
            if w >= self.n() || r == 0 || c == 0 || r + 1 == self.rows || c + 1 == self.cols {
                return Err(Error::InvalidArgument(format!("well cell {w} is not interior")));
            }
            if !seen.insert(w) {
                return Err(Error::InvalidArgument(format!("duplicate well cell {w}")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.rows * self.cols
    }

    pub fn n_obs(&self) -> usize {
        let ns = self.wells.len();
        ns * (ns - 1)
    }

    fn conductivity(&self, m: &[f64]) -> Result<Vec<f64>> {
        check_len("log-conductivity field", self.n(), m.len())?;
        if let Some(index) = m.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(m.iter().map(|v| 10f64.powf(*v)).collect())
    }

    /// Solved state at `m`: factorization plus the drawdown of every pump test.
    pub fn solve_state(&self, m: &[f64]) -> Result<DarcyState> {
        let k = self.conductivity(m)?;
        let a = fv_matrix(self.rows, self.cols, &k)?;
        let chol = BandCholesky::factor(&a).map_err(|e| Error::Forward(format!("Darcy system: {e}")))?;
        let n = self.n();
        let mut drawdowns = Vec::with_capacity(self.wells.len());
        for (i, &w) in self.wells.iter().enumerate() {
            let mut rhs = vec![0.0; n];
            rhs[w] = self.pump_rate;
            let s = chol.solve(&rhs);
            if let Some(p) = s.iter().position(|v| !v.is_finite()) {
                return Err(Error::Forward(format!("pump test {i}: non-finite drawdown at cell {p}")));
            }
            drawdowns.push(s);
        }
        Ok(DarcyState {
            problem: self.clone(),
            k,
            chol: Arc::new(chol),
            drawdowns,
        })
    }

    /// Drawdown over the whole grid for pump test `test`.
    pub fn drawdown_field(&self, m: &[f64], test: usize) -> Result<Vec<f64>> {
        let mut st = self.solve_state(m)?;
        if test >= st.drawdowns.len() {
            return Err(Error::InvalidArgument(format!("no pump test {test}")));
        }
        Ok(st.drawdowns.swap_remove(test))
    }

    fn observe(&self, test: usize, field: &[f64], out: &mut Vec<f64>) {
        for (j, &w) in self.wells.iter().enumerate() {
            if j != test {
                out.push(field[w]);
            }
        }
    }
}

/// Factorized system and pump-test solutions at one `m`.
#[derive(Debug, Clone)]
pub struct DarcyState {
    problem: DarcyProblem,
    k: Vec<f64>,
    chol: Arc<BandCholesky>,
    drawdowns: Vec<Vec<f64>>,
}

impl DarcyState {
    pub fn observations(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.problem.n_obs());
        for (i, s) in self.drawdowns.iter().enumerate() {
            self.problem.observe(i, s, &mut out);
        }
        out
    }

    pub fn drawdowns(&self) -> &[Vec<f64>] {
        &self.drawdowns
    }

    /// `(∂A/∂m · v) s` for one state vector `s`.
    fn d_matrix_times(&self, dk: &[f64], s: &[f64]) -> Vec<f64> {
        let (inner, bnd) = faces(self.problem.rows, self.problem.cols);
        let k = &self.k;
        let mut r = vec![0.0; s.len()];
        for &(p, q) in &inner {
            let sum = k[p] + k[q];
            let dt = 2.0 * (k[q] * k[q] * dk[p] + k[p] * k[p] * dk[q]) / (sum * sum);
            let flux = dt * (s[p] - s[q]);
            r[p] += flux;
            r[q] -= flux;
        }
        for &(p, _) in &bnd {
            r[p] += 2.0 * dk[p] * s[p];
        }
        r
    }
}

/// Linearized drawdown map `v ↦ (∂f/∂m) v` at a fixed state.
pub struct DarcyJacobian {
    state: DarcyState,
}

impl DarcyJacobian {
    pub fn new(state: DarcyState) -> Self {
        Self { state }
    }
}

impl LinearMap for DarcyJacobian {
    fn in_dim(&self) -> usize {
        self.state.problem.n()
    }

    fn out_dim(&self) -> usize {
        self.state.problem.n_obs()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.in_dim(), "Darcy Jacobian input length");
        let st = &self.state;
        let dk: Vec<f64> = v.iter().zip(&st.k).map(|(a, k)| LN_10 * k * a).collect();
        let mut out = Vec::with_capacity(self.out_dim());
        for (i, s) in st.drawdowns.iter().enumerate() {
            let r = st.d_matrix_times(&dk, s);
            let ds: Vec<f64> = st.chol.solve(&r).iter().map(|x| -x).collect();
            st.problem.observe(i, &ds, &mut out);
        }
        out
    }

    fn apply_adjoint(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.out_dim(), "Darcy Jacobian adjoint length");
        let st = &self.state;
        let p = &st.problem;
        let n = p.n();
        let ns = p.wells.len();
        let (inner, bnd) = faces(p.rows, p.cols);
        let k = &st.k;
        let mut g = vec![0.0; n];
        for (i, s) in st.drawdowns.iter().enumerate() {
            let mut rhs = vec![0.0; n];
            let block = &w[i * (ns - 1)..(i + 1) * (ns - 1)];
            let mut b = block.iter();
            for (j, &well) in p.wells.iter().enumerate() {
                if j != i {
                    rhs[well] += b.next().unwrap();
                }
            }
            let lam = st.chol.solve(&rhs);
            for &(a, c) in &inner {
                let sum = k[a] + k[c];
                let prod = (lam[a] - lam[c]) * (s[a] - s[c]);
                g[a] -= 2.0 * k[c] * k[c] / (sum * sum) * prod;
                g[c] -= 2.0 * k[a] * k[a] / (sum * sum) * prod;
            }
            for &(a, _) in &bnd {
                g[a] -= 2.0 * lam[a] * s[a];
            }
        }
        for (gi, ki) in g.iter_mut().zip(k) {
            *gi *= LN_10 * ki;
        }
        g
    }
}

/// Forward model `m = log₁₀ K ↦ drawdowns at the observation wells`.
pub struct DarcyForward(pub Arc<DarcyProblem>);

impl ForwardModel for DarcyForward {
    fn n_obs(&self) -> usize {
        self.0.n_obs()
    }
    fn n(&self) -> usize {
        self.0.n()
    }
    fn evaluate(&self, m: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.solve_state(m)?.observations())
    }
    fn jacobian_at(&self, m: &[f64]) -> Result<MapRef> {
        Ok(Arc::new(DarcyJacobian::new(self.0.solve_state(m)?)))
    }
}

pub fn darcy_forward(problem: &DarcyProblem, m: &[f64]) -> Result<Vec<f64>> {
    Ok(problem.solve_state(m)?.observations())
}

pub fn darcy_jacobian_apply(problem: &DarcyProblem, m: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_len("Darcy Jacobian direction", problem.n(), v.len())?;
    Ok(DarcyJacobian::new(problem.solve_state(m)?).apply(v))
}

pub fn darcy_jacobian_adjoint(problem: &DarcyProblem, m: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    check_len("Darcy Jacobian adjoint input", problem.n_obs(), w.len())?;
    Ok(DarcyJacobian::new(problem.solve_state(m)?).apply_adjoint(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::adjoint_mismatch;
    use crate::rng;

    fn problem(side: usize, nw: usize) -> DarcyProblem {
        DarcyProblem::new(side, side, 1.0, well_grid(side, side, nw).unwrap(), 1e-3).unwrap()
    }

    fn random_m(n: usize, seed: u64) -> Vec<f64> {
        rng::uniform(&mut rng::stream(seed, 0), n, -5.0, -3.0)
    }

    #[test]
    fn no_pumping_no_drawdown() {
        let mut p = problem(10, 4);
        p.pump_rate = 0.0;
        assert!(darcy_forward(&p, &vec![-4.0; 100]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaling_with_conductivity() {
        let p = problem(12, 5);
        let m = random_m(144, 1);
        let d = darcy_forward(&p, &m).unwrap();
        let m10: Vec<f64> = m.iter().map(|v| v + 1.0).collect();
        let d10 = darcy_forward(&p, &m10).unwrap();
        for (a, b) in d.iter().zip(&d10) {
            assert!((a / 10.0 - b).abs() <= 1e-10 * a.abs());
        }
    }

    #[test]
    fn maximum_principle_single_sink() {
        let p = problem(15, 4);
        let s = p.drawdown_field(&vec![-4.0; 225], 2).unwrap();
        let w = p.wells[2];
        assert!(s.iter().all(|&v| v >= 0.0));
        assert!(s.iter().enumerate().all(|(i, &v)| i == w || v < s[w]));
    }

    fn mms_error(n: usize) -> f64 {
        let h = 1.0 / n as f64;
        let exact = |x: f64, y: f64| 1.0 + x * x + x * y * y - y * y * y;
        let kf = |x: f64, y: f64| 1.0 + 0.5 * x + 0.25 * y;
        let f = |x: f64, y: f64| {
            let (hx, hxx) = (2.0 * x + y * y, 2.0);
            let (hy, hyy) = (2.0 * x * y - 3.0 * y * y, 2.0 * x - 6.0 * y);
            -(0.5 * hx + kf(x, y) * hxx + 0.25 * hy + kf(x, y) * hyy)
        };
        let center = |p: usize| ((p % n) as f64 * h + 0.5 * h, (n - p / n) as f64 * h - 0.5 * h);
        let k: Vec<f64> = (0..n * n).map(|p| { let (x, y) = center(p); kf(x, y) }).collect();
        let src: Vec<f64> = (0..n * n).map(|p| { let (x, y) = center(p); f(x, y) * h * h }).collect();
        let u = solve_fv_dirichlet(n, n, h, &k, &src, exact).unwrap();
        (0..n * n)
            .map(|p| { let (x, y) = center(p); (u[p] - exact(x, y)).abs() })
            .fold(0.0, f64::max)
    }

    #[test]
    fn manufactured_solution_second_order() {
        let errs: Vec<f64> = [16, 32, 64, 128].iter().map(|&n| mms_error(n)).collect();
        for w in errs.windows(2) {
            assert!(w[0] / w[1] >= 3.5, "{errs:?}");
        }
    }

    #[test]
    fn jacobian_fd_and_adjoint() {
        let p = problem(20, 6);
        let m = random_m(400, 3);
        let jac = DarcyJacobian::new(p.solve_state(&m).unwrap());
        assert!(adjoint_mismatch(&jac, 10, 2) < 1e-10);
        for trial in 0..3 {
            let v = rng::standard_normal(&mut rng::stream(trial, 5), 400);
            let t = 1e-6;
            let mp: Vec<f64> = m.iter().zip(&v).map(|(a, b)| a + t * b).collect();
            let mm: Vec<f64> = m.iter().zip(&v).map(|(a, b)| a - t * b).collect();
            let fp = darcy_forward(&p, &mp).unwrap();
            let fm = darcy_forward(&p, &mm).unwrap();
            let fd: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * t)).collect();
            let jv = jac.apply(&v);
            let num: f64 = fd.iter().zip(&jv).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = jv.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(num / den < 1e-5, "trial {trial}: {}", num / den);
        }
        assert!(darcy_jacobian_apply(&p, &m, &vec![0.0; 400]).unwrap().iter().all(|&x| x == 0.0));
        assert_eq!(darcy_jacobian_adjoint(&p, &m, &vec![1.0; 30]).unwrap().len(), 400);
    }

    #[test]
    fn validation() {
        assert!(DarcyProblem::new(10, 10, 1.0, vec![0, 55], 1.0).is_err());
        assert!(DarcyProblem::new(10, 10, 1.0, vec![55, 55], 1.0).is_err());
        assert!(DarcyProblem::new(10, 10, 1.0, vec![55], 1.0).is_err());
        let p = problem(10, 4);
        assert_eq!(p.n_obs(), 12);
        assert!(darcy_forward(&p, &[0.0; 5]).is_err());
        let w = well_grid(50, 50, 8).unwrap();
        assert_eq!(w.len(), 8);
    }
}
