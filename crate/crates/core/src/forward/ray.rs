use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapsolve::LinearForward;
use crate::ops::{CooBuilder, CsrMatrix, MapRef};

/// Parallel-beam acquisition: `n_angles` directions evenly spaced over
/// `[0, angular_range)` radians, each with `n_detectors` rays spread
/// uniformly across the grid's circumscribed circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayGeometry {
    pub rows: usize,
    pub cols: usize,
    pub n_angles: usize,
    pub n_detectors: usize,
    pub angular_range: f64,
}

/// A line `origin + t * direction` in grid coordinates: `x` along columns,
/// `y` along rows, unit cells, pixel `(r, c)` covering `[c, c+1] × [r, r+1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: (f64, f64),
    pub direction: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct RayTransform {
    pub matrix: Arc<CsrMatrix>,
    pub geometry: Option<RayGeometry>,
    /// For each row, the `(angle, detector)` pair that produced it.
    pub ray_index: Vec<(usize, usize)>,
}

impl RayTransform {
    pub fn n_obs(&self) -> usize {
        self.matrix.rows()
    }

    pub fn as_map(&self) -> MapRef {
        self.matrix.clone()
    }

    pub fn forward_model(&self) -> LinearForward {
        LinearForward(self.as_map())
    }
}

/// Exact intersection lengths of `ray` with every pixel it crosses.
pub fn trace_ray(rows: usize, cols: usize, ray: &Ray) -> Vec<(usize, f64)> {
    let (ox, oy) = ray.origin;
    let (dx, dy) = ray.direction;
    let norm = dx.hypot(dy);
    let (dx, dy) = (dx / norm, dy / norm);
    let (w, h) = (cols as f64, rows as f64);
    // clip against the box
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for (o, d, hi) in [(ox, dx, w), (oy, dy, h)] {
        if d.abs() < 1e-15 {
            if o <= 0.0 || o >= hi {
                return Vec::new();
            }
        } else {
            let (a, b) = ((0.0 - o) / d, (hi - o) / d);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    if !(t1 > t0 + 1e-12) {
        return Vec::new();
    }
    let mut ts = vec![t0, t1];
    for (o, d, n) in [(ox, dx, cols), (oy, dy, rows)] {
        if d.abs() < 1e-15 {
            continue;
        }
        for k in 1..n {
            let t = (k as f64 - o) / d;
            if t > t0 && t < t1 {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(ts.len());
    for pair in ts.windows(2) {
        let len = pair[1] - pair[0];
        if len <= 1e-12 {
            continue;
        }
        let tm = 0.5 * (pair[0] + pair[1]);
        let (x, y) = (ox + tm * dx, oy + tm * dy);
        let c = (x.floor() as isize).clamp(0, cols as isize - 1) as usize;
        let r = (y.floor() as isize).clamp(0, rows as isize - 1) as usize;
        let p = r * cols + c;
        match out.last_mut() {
            Some(last) if last.0 == p => last.1 += len,
            _ => out.push((p, len)),
        }
    }
    out
}

/// Ray matrix for an explicit list of rays; rays missing the grid are an error.
pub fn ray_matrix(rows: usize, cols: usize, rays: &[Ray]) -> Result<CsrMatrix> {
    let mut b = CooBuilder::new(rays.len(), rows * cols);
    for (i, ray) in rays.iter().enumerate() {
        let hits = trace_ray(rows, cols, ray);
        if hits.is_empty() {
            return Err(Error::InvalidArgument(format!("ray {i} misses the grid")));
        }
        for (p, len) in hits {
            b.push(i, p, len);
        }
    }
    Ok(b.build())
}

pub fn build_ray_transform(geometry: &RayGeometry) -> Result<RayTransform> {
    let g = geometry;
    if g.rows == 0 || g.cols == 0 || g.n_angles == 0 || g.n_detectors == 0 {
        return Err(Error::InvalidArgument(format!(
            "degenerate ray geometry {}x{} grid, {} angles, {} detectors",
            g.rows, g.cols, g.n_angles, g.n_detectors
        )));
    }
    if !(g.angular_range > 0.0) || !g.angular_range.is_finite() {
        return Err(Error::InvalidArgument("angular range must be positive".into()));
    }
    let (cx, cy) = (0.5 * g.cols as f64, 0.5 * g.rows as f64);
    let radius = 0.5 * (g.cols as f64).hypot(g.rows as f64);
    let spacing = 2.0 * radius / g.n_detectors as f64;
    let mut entries = Vec::new();
    let mut index = Vec::new();
    for a in 0..g.n_angles {
        let theta = g.angular_range * a as f64 / g.n_angles as f64;
        let (d, nrm) = ((theta.cos(), theta.sin()), (-theta.sin(), theta.cos()));
        for j in 0..g.n_detectors {
            let s = -radius + (j as f64 + 0.5) * spacing;
            let ray = Ray {
                origin: (cx + s * nrm.0, cy + s * nrm.1),
                direction: d,
            };
            let hits = trace_ray(g.rows, g.cols, &ray);
            // rays that miss the grid carry no information and are dropped
            if !hits.is_empty() {
                entries.push(hits);
                index.push((a, j));
            }
        }
    }
    let mut b = CooBuilder::new(entries.len(), g.rows * g.cols);
    for (i, hits) in entries.into_iter().enumerate() {
        for (p, len) in hits {
            b.push(i, p, len);
        }
    }
    let matrix = b.build();
    Ok(RayTransform {
        matrix: Arc::new(matrix),
        geometry: Some(*geometry),
        ray_index: index,
    })
}
