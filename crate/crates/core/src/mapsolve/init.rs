use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::levelset::{LevelSetConfig, LevelSetState};
use crate::rng;

/// Shape of the starting level sets: one cone-shaped bump per level set,
/// positive inside a disk. The default slope is shallow enough that the
/// mollifier band covers the whole grid at the start, so regions can appear
/// away from the initial disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitSettings {
    /// Disk radius as a fraction of the shorter grid side.
    pub radius_frac: f64,
    /// Level-set slope in units of `ε` per pixel.
    pub slope: f64,
    /// Random center displacement as a fraction of the grid side.
    pub jitter_frac: f64,
    /// Offset of the bump centers from the grid center, for `nls > 1`.
    pub spread_frac: f64,
}

impl Default for InitSettings {
    fn default() -> Self {
        Self {
            radius_frac: 0.3,
            slope: 0.02,
            jitter_frac: 0.05,
            spread_frac: 0.15,
        }
    }
}

/// Starting state `[Φ₀; c₀]` on a `rows × cols` grid with magnitudes `c0`.
pub fn radial_bump_init(
    cfg: &LevelSetConfig,
    rows: usize,
    cols: usize,
    c0: &[f64],
    settings: &InitSettings,
    seed: u64,
) -> Result<LevelSetState> {
    check_len("grid vs level-set config", cfg.n, rows * cols)?;
    check_len("initial magnitudes", cfg.n_magnitudes(), c0.len())?;
    if !(settings.radius_frac > 0.0 && settings.slope > 0.0) {
        return Err(Error::InvalidArgument("init radius and slope must be positive".into()));
    }
    let side = rows.min(cols) as f64;
    let radius = settings.radius_frac * side;
    let slope = settings.slope * cfg.epsilon;
    let mut r = rng::stream(seed, 0x1417);
    let mut phi = Vec::with_capacity(cfg.nls);
    for i in 0..cfg.nls {
        let jit = rng::uniform(&mut r, 2, -1.0, 1.0);
        let (mut cy, mut cx) = (0.5 * rows as f64, 0.5 * cols as f64);
        if cfg.nls > 1 {
            let t = 2.0 * std::f64::consts::PI * i as f64 / cfg.nls as f64;
            cy += settings.spread_frac * rows as f64 * t.sin();
            cx += settings.spread_frac * cols as f64 * t.cos();
        }
        cy += settings.jitter_frac * rows as f64 * jit[0];
        cx += settings.jitter_frac * cols as f64 * jit[1];
        let grid: Vec<f64> = (0..rows * cols)
            .map(|p| {
                let (y, x) = ((p / cols) as f64 + 0.5, (p % cols) as f64 + 0.5);
                slope * (radius - (y - cy).hypot(x - cx))
            })
            .collect();
        phi.push(grid);
    }
    LevelSetState::from_parts(&phi, c0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::assemble_field;

    #[test]
    fn bump_inside_is_first_magnitude() {
        let cfg = LevelSetConfig::new(1, 400, 0.01).unwrap();
        let steep = InitSettings {
            slope: 0.5,
            ..Default::default()
        };
        let s = radial_bump_init(&cfg, 20, 20, &[2.0, 1.0], &steep, 1).unwrap();
        let m = assemble_field(&s, &cfg).unwrap();
        assert_eq!(m[10 * 20 + 10], 2.0);
        assert_eq!(m[0], 1.0);
        // transition band is a few pixels wide
        let band = m.iter().filter(|&&v| v > 1.0 && v < 2.0).count();
        assert!(band > 20 && band < 200, "{band}");
    }

    #[test]
    fn default_band_covers_grid() {
        let cfg = LevelSetConfig::new(1, 400, 0.01).unwrap();
        let s = radial_bump_init(&cfg, 20, 20, &[2.0, 1.0], &InitSettings::default(), 1).unwrap();
        let m = assemble_field(&s, &cfg).unwrap();
        assert!(m.iter().all(|&v| v > 1.0 && v < 2.0));
        assert!(m[10 * 20 + 10] > 1.5 && m[0] < 1.5);
    }

    #[test]
    fn seeded_and_checked() {
        let cfg = LevelSetConfig::new(2, 100, 0.01).unwrap();
        let a = radial_bump_init(&cfg, 10, 10, &[0.0; 4], &InitSettings::default(), 3).unwrap();
        let b = radial_bump_init(&cfg, 10, 10, &[0.0; 4], &InitSettings::default(), 3).unwrap();
        let c = radial_bump_init(&cfg, 10, 10, &[0.0; 4], &InitSettings::default(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(radial_bump_init(&cfg, 10, 9, &[0.0; 4], &InitSettings::default(), 3).is_err());
    }
}
