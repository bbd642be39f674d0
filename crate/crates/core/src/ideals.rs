//! Principal ideals of Z[w] enumerated by norm, Hecke Grossencharacters and
//! the Hecke eigenvalues of the attached dihedral forms.

use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;

use crate::arith::{divisors, kronecker};
use crate::error::{Error, Result};
use crate::quadfield::{FieldParams, QuadInt};

/// Norms beyond this are refused by the single-norm enumerator.
pub const NORM_SCAN_BOUND: u64 = 1_000_000_000_000;

/// A principal ideal through its canonical generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IdealRep {
    pub gen: QuadInt,
    pub norm_abs: u64,
    /// angle of the canonical generator, in [0, 2 log eps)
    pub theta: f64,
}

/// Kronecker symbol (D/n).
pub fn kronecker_chi(f: &FieldParams, n: i64) -> i32 {
    kronecker(f.d, n)
}

/// Number of ideals of norm n, as the divisor sum of the field character.
pub fn ideal_count(f: &FieldParams, n: u64) -> i64 {
    divisors(n).iter().map(|&d| kronecker_chi(f, d as i64) as i64).sum()
}

/// All principal ideals of norm n, sorted by angle.
pub fn elements_of_norm(f: &FieldParams, n: u64) -> Result<Vec<IdealRep>> {
    if n == 0 {
        return Err(Error::InvalidArgument("norm must be positive".into()));
    }
    if n > NORM_SCAN_BOUND {
        return Err(Error::ScanBoundExceeded(n));
    }
    let mut gens: Vec<QuadInt> = f
        .raw_solutions_of_norm(n as i128)?
        .into_iter()
        .map(|a| f.canonical_generator(a))
        .collect::<Result<_>>()?;
    gens.sort();
    gens.dedup();
    let mut out: Vec<IdealRep> = gens
        .into_iter()
        .map(|g| {
            Ok(IdealRep {
                gen: g,
                norm_abs: n,
                theta: f.angle(g)?,
            })
        })
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    Ok(out)
}

/// Xi_k(a) = e(k theta / (2 log eps)).
pub fn grossenchar(f: &FieldParams, k: i64, a: &IdealRep) -> Complex64 {
    let x = k as f64 * a.theta / (2.0 * f.log_eps);
    let frac = x - x.round();
    Complex64::from_polar(1.0, 2.0 * PI * frac)
}

/// lambda_k(n) = sum of Xi_k over ideals of norm n.
pub fn lambda_k(f: &FieldParams, k: i64, n: u64) -> Result<f64> {
    let ideals = elements_of_norm(f, n)?;
    let s: Complex64 = ideals.iter().map(|a| grossenchar(f, k, a)).sum();
    let tol = 1e-12 * (1.0 + ideals.len() as f64) * (1.0 + k.unsigned_abs() as f64);
    debug_assert!(s.im.abs() <= tol, "lambda_{k}({n}) has imaginary part {}", s.im);
    Ok(s.re)
}

/// Every principal ideal of norm at most `x`, stored compactly as
/// (norm, theta / (2 log eps)). Sorted by norm, then angle.
#[derive(Clone, Debug)]
pub struct IdealTable {
    pub max_norm: u64,
    pub norms: Vec<u32>,
    /// theta / (2 log eps) in [0, 1)
    pub fracs: Vec<f64>,
}

impl IdealTable {
    /// Enumerate by scanning w-coordinates in the (A, B) = (2m+n, n) plane,
    /// where alpha = (A + B sqrt D)/2, keeping points in the canonical window.
    pub fn build(f: &FieldParams, x: u64) -> Result<IdealTable> {
        if x > u32::MAX as u64 {
            return Err(Error::ScanBoundExceeded(x));
        }
        let d = f.d as i128;
        let s = f.sqrt_d;
        let rx = (x as f64).sqrt();
        let bmax = ((f.eps + 1.0) * rx / s).ceil() as i128 + 1;
        let two_reg = 2.0 * f.log_eps;
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity((0.75 * x as f64) as usize + 16);
        for b in -bmax..=bmax {
            let bs = b as f64 * s;
            let lo = (bs - 2.0 * rx).max(-bs).floor() as i128 - 1;
            let hi = (bs + 2.0 * rx).min(2.0 * f.eps * rx - bs).ceil() as i128 + 1;
            if hi < lo {
                continue;
            }
            let mut a = lo;
            if (a - b).rem_euclid(2) != 0 {
                a += 1;
            }
            let db2 = d * b * b;
            while a <= hi {
                let n4 = a * a - db2;
                if n4 != 0 && n4.abs() <= 4 * x as i128 {
                    let nrm = n4 / 4;
                    if let Some(frac) = window_frac(f, a, b, two_reg) {
                        entries.push((nrm.unsigned_abs() as u32, frac));
                    }
                }
                a += 2;
            }
        }
        entries.sort_by(|p, q| p.0.cmp(&q.0).then(p.1.total_cmp(&q.1)));
        let (norms, mut fracs): (Vec<u32>, Vec<f64>) = entries.into_iter().unzip();
        pair_conjugates(&norms, &mut fracs);
        Ok(IdealTable { max_norm: x, norms, fracs })
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    /// Dense table of lambda_k(n) for n <= max_norm (index 0 unused).
    pub fn lambda_table(&self, k: i64) -> Vec<f64> {
        let mut out = vec![0.0; self.max_norm as usize + 1];
        for (&n, &fr) in self.norms.iter().zip(&self.fracs) {
            out[n as usize] += (2.0 * PI * phase_frac(k, fr)).cos();
        }
        out
    }

    /// Dense ideal-count table r_D(n).
    pub fn count_table(&self) -> Vec<u32> {
        let mut out = vec![0u32; self.max_norm as usize + 1];
        for &n in &self.norms {
            out[n as usize] += 1;
        }
        out
    }
}

/// Decide whether alpha = (a + b sqrt D)/2 is a canonical generator and
/// return theta/(2 log eps) if so.
/// k * fr reduced mod 1 into [-1/2, 1/2], keeping the rounding error of
/// the product.
pub fn phase_frac(k: i64, fr: f64) -> f64 {
    let kf = k as f64;
    let hi = kf * fr;
    let lo = kf.mul_add(fr, -hi);
    hi - hi.round() + lo
}

/// Conjugation maps theta to 2 log eps - theta, so within one norm the
/// nonzero fractions pair up as f and 1 - f. Sorted ascending, entry i pairs
/// with entry len-1-i; both are set from their average so that the pair
/// sums to 1 exactly (1 - f is exact for f >= 1/2).
fn pair_conjugates(norms: &[u32], fracs: &mut [f64]) {
    let mut i = 0;
    while i < norms.len() {
        let mut j = i;
        while j < norms.len() && norms[j] == norms[i] {
            j += 1;
        }
        let g = &mut fracs[i..j];
        let z = g.iter().take_while(|&&v| v == 0.0).count();
        let r = &mut g[z..];
        let len = r.len();
        for a in 0..len / 2 {
            let b = len - 1 - a;
            if (r[a] + r[b] - 1.0).abs() > 1e-9 {
                continue;
            }
            let hi = 0.5 * (r[b] + (1.0 - r[a]));
            r[b] = hi;
            r[a] = 1.0 - hi;
        }
        if len % 2 == 1 && (r[len / 2] - 0.5).abs() < 1e-12 {
            r[len / 2] = 0.5;
        }
        i = j;
    }
}

fn window_frac(f: &FieldParams, a: i128, b: i128, two_reg: f64) -> Option<f64> {
    // alpha > 0
    let m = (a - b) / 2;
    let q = QuadInt::new(m, b);
    if f.sign(q) <= 0 {
        return None;
    }
    if b == 0 || a == 0 {
        return Some(0.0);
    }
    let theta = f.angle(q).ok()?;
    if theta < 0.0 {
        return None;
    }
    if theta >= two_reg - 1e-7 {
        let down = f.multiply(q, f.unit_inverse()).ok()?;
        let td = f.angle(down).ok()?;
        if td >= 0.0 {
            return None;
        }
    }
    Some(theta / two_reg)
}
