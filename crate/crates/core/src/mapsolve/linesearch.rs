//! Bracket-and-zoom line search for the strong Wolfe conditions.

use crate::error::{check_len, Error, Result};
use crate::ops::dot;

#[derive(Debug, Clone, Copy)]
pub struct LineSearchSettings {
    pub c1: f64,
    pub c2: f64,
    pub max_evals: usize,
    pub alpha0: f64,
    pub alpha_max: f64,
}

impl Default for LineSearchSettings {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            c2: 0.9,
            max_evals: 50,
            alpha0: 1.0,
            alpha_max: 1e4,
        }
    }
}

impl LineSearchSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "Wolfe parameters need 0 < c1 < c2 < 1, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        Ok(())
    }
}

/// Accepted step together with whatever the caller computed there.
#[derive(Debug, Clone)]
pub struct LineSearchOutcome<T> {
    pub alpha: f64,
    pub evals: usize,
    pub value: f64,
    pub slope: f64,
    pub payload: T,
}

struct Trial {
    a: f64,
    f: f64,
    d: f64,
}

/// Strong-Wolfe search along a ray.
///
/// `phi(α)` returns `(F(x + α p), ∇F(x + α p)ᵀ p, payload)`; `f0` and `d0`
/// are the value and slope at `α = 0`. A non-finite value counts as a
/// failed sufficient-decrease test.
pub fn wolfe_search<T, P>(
    mut phi: P,
    f0: f64,
    d0: f64,
    s: &LineSearchSettings,
) -> Result<LineSearchOutcome<T>>
where
    P: FnMut(f64) -> Result<(f64, f64, T)>,
{
    s.validate()?;
    if !(d0 < 0.0) {
        return Err(Error::NotDescent(d0));
    }
    let mut evals = 0;
    let mut eval = |a: f64, evals: &mut usize| -> Result<(Trial, T)> {
        *evals += 1;
        let (f, d, p) = phi(a)?;
        let f = if f.is_finite() { f } else { f64::INFINITY };
        let d = if d.is_finite() { d } else { f64::NAN };
        Ok((Trial { a, f, d }, p))
    };
    let armijo = |t: &Trial| t.f <= f0 + s.c1 * t.a * d0;
    let curvature = |t: &Trial| t.d.abs() <= -s.c2 * d0;
    let done = |t: Trial, p: T, evals: usize| LineSearchOutcome {
        alpha: t.a,
        evals,
        value: t.f,
        slope: t.d,
        payload: p,
    };

    let mut prev = Trial { a: 0.0, f: f0, d: d0 };
    let mut a = s.alpha0;
    let (lo, hi) = loop {
        let (t, p) = eval(a, &mut evals)?;
        if !armijo(&t) || (evals > 1 && t.f >= prev.f) {
            break (prev, t);
        }
        if curvature(&t) {
            return Ok(done(t, p, evals));
        }
        if t.d >= 0.0 {
            break (t, prev);
        }
        if evals >= s.max_evals || a >= s.alpha_max {
            return Err(Error::LineSearch {
                evals,
                lo: prev.a,
                hi: t.a,
            });
        }
        prev = t;
        a = (2.0 * a).min(s.alpha_max);
    };

    // zoom: `lo` satisfies Armijo and has the lowest value seen
    let (mut lo, mut hi) = (lo, hi);
    while evals < s.max_evals {
        let a = interpolate(&lo, &hi);
        let (t, p) = eval(a, &mut evals)?;
        if !armijo(&t) || t.f >= lo.f {
            hi = t;
        } else {
            if curvature(&t) {
                return Ok(done(t, p, evals));
            }
            if t.d * (hi.a - lo.a) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
        if (hi.a - lo.a).abs() <= 1e-16 * lo.a.abs().max(1e-300) {
            break;
        }
    }
    Err(Error::LineSearch {
        evals,
        lo: lo.a.min(hi.a),
        hi: lo.a.max(hi.a),
    })
}

/// Safeguarded cubic interpolation inside the bracket, bisection fallback.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.a, hi.a);
    let width = b - a;
    let mid = a + 0.5 * width;
    if !hi.f.is_finite() || !hi.d.is_finite() || !lo.d.is_finite() {
        // only a quadratic through (f_lo, d_lo, f_hi) is usable, or nothing
        if hi.f.is_finite() {
            let q = a - 0.5 * lo.d * width * width / (hi.f - lo.f - lo.d * width);
            return safeguard(q, a, b, mid);
        }
        return mid;
    }
    let d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.d * hi.d;
    if disc < 0.0 {
        return mid;
    }
    let d2 = width.signum() * disc.sqrt();
    let c = b - width * (hi.d + d2 - d1) / (hi.d - lo.d + 2.0 * d2);
    safeguard(c, a, b, mid)
}

fn safeguard(c: f64, a: f64, b: f64, mid: f64) -> f64 {
    if !c.is_finite() {
        return mid;
    }
    let (l, h) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (h - l);
    c.clamp(l + margin, h - margin)
}

/// Strong-Wolfe step along `direction` from `x` for a value-and-gradient
/// function; returns the accepted step with the value and gradient there.
pub fn line_search<F>(
    mut f_and_grad: F,
    x: &[f64],
    direction: &[f64],
    c1: f64,
    c2: f64,
) -> Result<LineSearchOutcome<Vec<f64>>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    check_len("line search direction", x.len(), direction.len())?;
    let (f0, g0) = f_and_grad(x)?;
    check_len("line search gradient", x.len(), g0.len())?;
    let d0 = dot(&g0, direction);
    let s = LineSearchSettings {
        c1,
        c2,
        ..Default::default()
    };
    let mut trial = vec![0.0; x.len()];
    wolfe_search(
        |a| {
            for i in 0..x.len() {
                trial[i] = x[i] + a * direction[i];
            }
            let (f, g) = f_and_grad(&trial)?;
            Ok((f, dot(&g, direction), g))
        },
        f0,
        d0,
        &s,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Ok((f, g))
    }

    fn check_wolfe(x: &[f64], p: &[f64], c1: f64, c2: f64) {
        let (f0, g0) = rosenbrock(x).unwrap();
        let d0 = dot(&g0, p);
        let out = line_search(rosenbrock, x, p, c1, c2).unwrap();
        let xn: Vec<f64> = x.iter().zip(p).map(|(a, b)| a + out.alpha * b).collect();
        let (f, g) = rosenbrock(&xn).unwrap();
        assert!(f <= f0 + c1 * out.alpha * d0, "Armijo");
        assert!(dot(&g, p).abs() <= c2 * d0.abs(), "curvature");
        assert!((out.value - f).abs() < 1e-12 * f.abs().max(1.0));
    }

    #[test]
    fn quadratic_takes_unit_step() {
        let f = |x: &[f64]| Ok((0.5 * x[0] * x[0], vec![x[0]]));
        let out = line_search(f, &[1.0], &[-1.0], 1e-4, 0.9).unwrap();
        assert_eq!(out.alpha, 1.0);
        assert_eq!(out.evals, 1);
    }

    #[test]
    fn rosenbrock_steps_satisfy_wolfe() {
        check_wolfe(&[-1.2, 1.0], &[1.0, 0.0], 1e-4, 0.9);
        // steepest descent: huge gradient, unit step overshoots
        let (_, g) = rosenbrock(&[-1.2, 1.0]).unwrap();
        check_wolfe(&[-1.2, 1.0], &[-g[0], -g[1]], 1e-4, 0.9);
        check_wolfe(&[-1.2, 1.0], &[-g[0], -g[1]], 1e-4, 0.1);
        // tiny direction forces expansion
        check_wolfe(&[0.0, 0.0], &[1e-4, 0.0], 1e-4, 0.9);
    }

    #[test]
    fn rejects_ascent_direction() {
        let f = |x: &[f64]| Ok((0.5 * x[0] * x[0], vec![x[0]]));
        assert!(matches!(
            line_search(f, &[1.0], &[1.0], 1e-4, 0.9),
            Err(Error::NotDescent(_))
        ));
    }

    #[test]
    fn rejects_bad_parameters() {
        let f = |x: &[f64]| Ok((0.5 * x[0] * x[0], vec![x[0]]));
        assert!(line_search(f, &[1.0], &[-1.0], 0.9, 0.5).is_err());
    }

    #[test]
    fn survives_non_finite_values() {
        // F blows up beyond t = 0.5
        let f = |x: &[f64]| {
            if x[0] < 0.5 {
                Ok(((x[0] - 0.4).powi(2), vec![2.0 * (x[0] - 0.4)]))
            } else {
                Ok((f64::NAN, vec![f64::NAN]))
            }
        };
        let out = line_search(f, &[0.0], &[1.0], 1e-4, 0.9).unwrap();
        assert!(out.alpha < 0.5 && out.value < 0.16);
    }

    proptest! {
        #[test]
        fn wolfe_on_random_rosenbrock_points(a in -2.0f64..2.0, b in -1.0f64..3.0, t in 0.0f64..6.28) {
            let (_, g) = rosenbrock(&[a, b]).unwrap();
            let p = [t.cos(), t.sin()];
            let p = if dot(&g, &p) < 0.0 { p } else { [-p[0], -p[1]] };
            prop_assume!(dot(&g, &p).abs() > 1e-6);
            check_wolfe(&[a, b], &p, 1e-4, 0.9);
        }
    }
}
