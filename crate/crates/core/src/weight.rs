//! Compactly supported smooth test functions and their Mellin transforms.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// support in [1/2, 2]
    BumpHalfTwo,
    /// support in [1, 2]
    BumpOneTwo,
}

/// A scaled bump exp(1 - 1/(1 - u^2)) placed inside the support interval.
///
/// The scale `p` shrinks the bump around the midpoint of the interval, so
/// derivatives grow like p^j.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmoothWeight {
    pub kind: WeightKind,
    pub p: f64,
    pub amplitude: f64,
    center: f64,
    half_width: f64,
    mellin_zero: f64,
    mellin_one: f64,
}

fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

pub fn smooth_weight(kind: WeightKind, p: f64) -> Result<SmoothWeight> {
    if !p.is_finite() || p < 1.0 {
        return Err(Error::InvalidArgument(format!("derivative scale {p} must be at least 1")));
    }
    let (lo, hi) = match kind {
        WeightKind::BumpHalfTwo => (0.5, 2.0),
        WeightKind::BumpOneTwo => (1.0, 2.0),
    };
    let mut w = SmoothWeight {
        kind,
        p,
        amplitude: 1.0,
        center: 0.5 * (lo + hi),
        half_width: 0.5 * (hi - lo) / p,
        mellin_zero: 0.0,
        mellin_one: 0.0,
    };
    w.mellin_zero = w.mellin_quad(Complex64::new(0.0, 0.0))?.re;
    w.mellin_one = w.mellin_quad(Complex64::new(1.0, 0.0))?.re;
    Ok(w)
}

impl SmoothWeight {
    /// The nominal support interval.
    pub fn support(&self) -> (f64, f64) {
        match self.kind {
            WeightKind::BumpHalfTwo => (0.5, 2.0),
            WeightKind::BumpOneTwo => (1.0, 2.0),
        }
    }

    /// Multiply by a constant (the amplitude enters every Mellin value linearly).
    pub fn scaled(&self, c: f64) -> SmoothWeight {
        let mut w = self.clone();
        w.amplitude *= c;
        w.mellin_zero *= c;
        w.mellin_one *= c;
        w
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * bump((x - self.center) / self.half_width)
    }

    /// Phi(y)/y, the weight used against central values.
    pub fn eval_over_x(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            self.eval(x) / x
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.half_width;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let q = 1.0 - u * u;
        -self.eval(x) * 2.0 * u / (q * q) / self.half_width
    }

    /// Cached Mellin value at s = 0, the integral of Phi(x)/x.
    pub fn mellin_at_zero(&self) -> f64 {
        self.mellin_zero
    }

    /// Cached Mellin value at s = 1, the integral of Phi.
    pub fn mellin_at_one(&self) -> f64 {
        self.mellin_one
    }

    fn log_range(&self) -> (f64, f64) {
        ((self.center - self.half_width).ln(), (self.center + self.half_width).ln())
    }

    /// Trapezoid value and the same rule applied to |integrand|.
    fn trapezoid_log(&self, s: Complex64, n: usize) -> (Complex64, f64) {
        // x = e^v: integral of W(e^v) e^{v s} dv, smooth with compact support
        let (v0, v1) = self.log_range();
        let h = (v1 - v0) / n as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        let mut mass = 0.0;
        for j in 1..n {
            let v = v0 + h * j as f64;
            let term = self.eval(v.exp()) * (s * v).exp();
            acc += term;
            mass += term.norm();
        }
        (acc * h, mass * h)
    }

    fn mellin_quad(&self, s: Complex64) -> Result<Complex64> {
        let mut n = 64usize;
        let (mut prev, _) = self.trapezoid_log(s, n);
        while n < 1 << 22 {
            n *= 2;
            let (cur, mass) = self.trapezoid_log(s, n);
            // rounding in the sum is relative to the mass, not the value
            if (cur - prev).norm() <= 1e-14 * mass + 1e-300 {
                return Ok(cur);
            }
            prev = cur;
        }
        Err(Error::QuadratureNonconvergent(format!("Mellin transform at s={s}")))
    }

    /// Mellin transform int W(x) x^{s-1} dx, by trapezoid refinement in log x.
    pub fn mellin(&self, s: Complex64) -> Result<Complex64> {
        self.mellin_quad(s)
    }

    /// Mellin transform on the vertical line sigma + i*y for many y at once.
    ///
    /// Uses one fixed log-grid fine enough for the largest |y|; the phase
    /// e^{i y v} runs by rotation along the grid.
    pub fn mellin_line(&self, sigma: f64, ys: &[f64]) -> Vec<Complex64> {
        let (v0, v1) = self.log_range();
        let ymax = ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        // at least 12 nodes per oscillation and never below the refinement floor
        let n = (((v1 - v0) * ymax / (2.0 * std::f64::consts::PI) * 12.0) as usize).max(512);
        let h = (v1 - v0) / n as f64;
        let base: Vec<(f64, f64)> = (1..n)
            .map(|j| {
                let v = v0 + h * j as f64;
                (v, self.eval(v.exp()) * (sigma * v).exp())
            })
            .collect();
        ys.iter()
            .map(|&y| {
                let step = Complex64::from_polar(1.0, y * h);
                let mut rot = Complex64::from_polar(1.0, y * (v0 + h));
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, &(v, f)) in base.iter().enumerate() {
                    if j % 256 == 0 {
                        rot = Complex64::from_polar(1.0, y * v);
                    }
                    acc += f * rot;
                    rot *= step;
                }
                acc * h
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_and_positivity() {
        for kind in [WeightKind::BumpHalfTwo, WeightKind::BumpOneTwo] {
            let w = smooth_weight(kind, 1.0).unwrap();
            let (lo, hi) = w.support();
            assert_eq!(w.eval(lo), 0.0);
            assert_eq!(w.eval(hi), 0.0);
            assert_eq!(w.eval(lo - 0.1), 0.0);
            assert!(w.eval(0.5 * (lo + hi)) > 0.99);
            assert!(w.mellin_at_zero() > 0.0);
        }
    }

    #[test]
    fn mellin_matches_line_and_decays() {
        let w = smooth_weight(WeightKind::BumpHalfTwo, 1.0).unwrap();
        let ys = [0.0, 3.0, 50.0, 400.0];
        let line = w.mellin_line(1.0, &ys);
        for (y, v) in ys.iter().zip(&line) {
            let d = w.mellin(Complex64::new(1.0, *y)).unwrap();
            assert!((d - v).norm() < 1e-12, "y={y}");
        }
        assert!((line[0].re - w.mellin_at_one()).abs() < 1e-12);
        // 1e-6 of the s = 1 value is only reached well past height 50
        assert!(line[2].norm() < line[1].norm());
        assert!(line[3].norm() < 1e-6 * line[0].norm());
        // a direct Riemann sum in x for the s = 1 value
        let n = 200_000;
        let direct: f64 = (0..n).map(|i| w.eval(0.5 + 1.5 * (i as f64 + 0.5) / n as f64)).sum::<f64>() * 1.5 / n as f64;
        assert!((direct - w.mellin_at_one()).abs() < 1e-9);
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        let w = smooth_weight(WeightKind::BumpOneTwo, 2.0).unwrap();
        for x in [1.3, 1.45, 1.5, 1.62] {
            let h = 1e-6;
            let fd = (w.eval(x + h) - w.eval(x - h)) / (2.0 * h);
            assert!((fd - w.derivative(x)).abs() < 1e-5 * (1.0 + fd.abs()), "x={x}");
        }
    }
}
