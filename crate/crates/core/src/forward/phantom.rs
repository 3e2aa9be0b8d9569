use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    TwoCircle,
    ThreePhase,
    Grains,
    Facies,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_circle" => Ok(Self::TwoCircle),
            "three_phase" => Ok(Self::ThreePhase),
            "grains" => Ok(Self::Grains),
            "facies" => Ok(Self::Facies),
            _ => Err(Error::InvalidArgument(format!("unknown phantom kind {s:?}"))),
        }
    }
}

/// A disk in pixel coordinates (`x` along columns, `y` along rows).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub label: usize,
}

impl Disk {
    fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.cx).hypot(y - self.cy) <= self.radius
    }
}

/// Piecewise-constant image: a label per pixel and a value per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<usize>,
    pub magnitudes: Vec<f64>,
    /// Disks painted in order over the background, if the kind uses them.
    pub disks: Vec<Disk>,
}

impl Phantom {
    pub fn n_regions(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn field(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| self.magnitudes[l]).collect()
    }

    pub fn region_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_regions()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn paint(rows: usize, cols: usize, disks: &[Disk]) -> Vec<usize> {
    (0..rows * cols)
        .map(|p| {
            let (x, y) = ((p % cols) as f64 + 0.5, (p / cols) as f64 + 0.5);
            disks
                .iter()
                .rev()
                .find(|d| d.contains(x, y))
                .map_or(0, |d| d.label)
        })
        .collect()
}

pub fn make_phantom(kind: PhantomKind, rows: usize, cols: usize, seed: u64) -> Result<Phantom> {
    if rows < 4 || cols < 4 {
        return Err(Error::InvalidArgument(format!("phantom grid {rows}x{cols} too small")));
    }
    let mut r = rng::stream(seed, 0x9a47);
    let side = rows.min(cols) as f64;
    let (w, h) = (cols as f64, rows as f64);
    let mut jitter = |scale: f64| r.random_range(-scale..scale);
    let (disks, magnitudes) = match kind {
        PhantomKind::TwoCircle => {
            let d = vec![
                Disk {
                    cx: (0.33 + jitter(0.03)) * w,
                    cy: (0.35 + jitter(0.03)) * h,
                    radius: 0.18 * side,
                    label: 1,
                },
                Disk {
                    cx: (0.68 + jitter(0.03)) * w,
                    cy: (0.66 + jitter(0.03)) * h,
                    radius: 0.14 * side,
                    label: 1,
                },
            ];
            (d, vec![1.0, 2.0])
        }
        PhantomKind::ThreePhase => {
            let (cx, cy) = ((0.5 + jitter(0.04)) * w, (0.5 + jitter(0.04)) * h);
            let d = vec![
                Disk {
                    cx,
                    cy,
                    radius: 0.32 * side,
                    label: 1,
                },
                Disk {
                    cx: cx + 0.1 * side,
                    cy: cy - 0.08 * side,
                    radius: 0.12 * side,
                    label: 2,
                },
            ];
            (d, vec![0.2, 0.6, 1.0])
        }
        PhantomKind::Facies => {
            let centers = [(0.3, 0.35), (0.7, 0.3), (0.5, 0.72)];
            let d = centers
                .iter()
                .map(|&(fx, fy)| Disk {
                    cx: (fx + jitter(0.04)) * w,
                    cy: (fy + jitter(0.04)) * h,
                    radius: (0.14 + jitter(0.02)) * side,
                    label: 1,
                })
                .collect();
            (d, vec![-3.0, -5.0])
        }
        PhantomKind::Grains => return Ok(grains(rows, cols, seed)),
    };
    Ok(Phantom {
        rows,
        cols,
        labels: paint(rows, cols, &disks),
        magnitudes,
        disks,
    })
}

const GRAIN_SEEDS: usize = 14;
const GRAIN_CLASSES: usize = 8;

fn grains(rows: usize, cols: usize, seed: u64) -> Phantom {
    let mut r = rng::stream(seed, 0x6a1);
    let sites: Vec<(f64, f64, usize)> = (0..GRAIN_SEEDS)
        .map(|i| {
            let x = r.random_range(0.0..cols as f64);
            let y = r.random_range(0.0..rows as f64);
            // every class appears at least once, the rest at random
            let class = if i < GRAIN_CLASSES { i } else { r.random_range(0..GRAIN_CLASSES) };
            (x, y, class)
        })
        .collect();
    let raw: Vec<usize> = (0..rows * cols)
        .map(|p| {
            let (x, y) = ((p % cols) as f64 + 0.5, (p / cols) as f64 + 0.5);
            sites
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - x).hypot(a.1 - y);
                    let db = (b.0 - x).hypot(b.1 - y);
                    da.total_cmp(&db)
                })
                .unwrap()
                .2
        })
        .collect();
    // drop classes whose cells were all swallowed by neighbors
    let mut used = [false; GRAIN_CLASSES];
    for &l in &raw {
        used[l] = true;
    }
    let mut remap = [usize::MAX; GRAIN_CLASSES];
    let mut magnitudes = Vec::new();
    for c in 0..GRAIN_CLASSES {
        if used[c] {
            remap[c] = magnitudes.len();
            magnitudes.push(0.1 + 0.9 * c as f64 / (GRAIN_CLASSES - 1) as f64);
        }
    }
    Phantom {
        rows,
        cols,
        labels: raw.iter().map(|&l| remap[l]).collect(),
        magnitudes,
        disks: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn two_circle_areas() {
        let p = make_phantom(PhantomKind::TwoCircle, 32, 32, 5).unwrap();
        let area: f64 = p.disks.iter().map(|d| PI * d.radius * d.radius).sum();
        let perim: f64 = p.disks.iter().map(|d| 2.0 * PI * d.radius).sum();
        let inside = p.region_counts()[1] as f64;
        assert!((inside - area).abs() <= perim, "{inside} vs {area}");
        assert_eq!(p.n_regions(), 2);
    }

    #[test]
    fn facies_values() {
        let p = make_phantom(PhantomKind::Facies, 50, 50, 2).unwrap();
        assert!(p.field().iter().all(|&v| v == -5.0 || v == -3.0));
        let c = p.region_counts();
        assert!(c[0] > 0 && c[1] > 0);
    }

    #[test]
    fn labels_partition_and_classes_bounded() {
        for kind in [PhantomKind::TwoCircle, PhantomKind::ThreePhase, PhantomKind::Grains, PhantomKind::Facies] {
            for seed in 0..4 {
                let p = make_phantom(kind, 40, 36, seed).unwrap();
                assert_eq!(p.labels.len(), 40 * 36);
                assert!(p.region_counts().iter().all(|&c| c > 0), "{kind:?}");
                assert!(p.n_regions() <= 8);
            }
        }
        let t = make_phantom(PhantomKind::ThreePhase, 64, 64, 1).unwrap();
        assert_eq!(t.n_regions(), 3);
        let g = make_phantom(PhantomKind::Grains, 64, 64, 1).unwrap();
        assert!(g.magnitudes.iter().all(|&m| (0.1..=1.0).contains(&m)));
    }

    #[test]
    fn seed_determinism() {
        for kind in [PhantomKind::TwoCircle, PhantomKind::Grains] {
            assert_eq!(make_phantom(kind, 20, 20, 9).unwrap(), make_phantom(kind, 20, 20, 9).unwrap());
            assert_ne!(make_phantom(kind, 20, 20, 9).unwrap(), make_phantom(kind, 20, 20, 10).unwrap());
        }
        assert!("grains".parse::<PhantomKind>().is_ok());
        assert!("walnut".parse::<PhantomKind>().is_err());
        assert!(make_phantom(PhantomKind::Facies, 2, 20, 0).is_err());
    }
}
