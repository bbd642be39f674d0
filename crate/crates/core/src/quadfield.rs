//! Exact arithmetic in the ring of integers Z[w] of Q(sqrt D), D = 1 mod 4,
//! where w = (1 + sqrt D)/2.

use serde::{Deserialize, Serialize};

use crate::arith::{factorize, gcd, is_squarefree, kronecker, perfect_sqrt, primes_up_to};
use crate::error::{Error, Result};

/// An element m + n*w of the ring of integers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuadInt {
    pub m: i128,
    pub n: i128,
}

impl QuadInt {
    pub const ONE: QuadInt = QuadInt { m: 1, n: 0 };

    pub fn new(m: i128, n: i128) -> Self {
        QuadInt { m, n }
    }

    pub fn is_zero(&self) -> bool {
        self.m == 0 && self.n == 0
    }

    pub fn neg(&self) -> QuadInt {
        QuadInt::new(-self.m, -self.n)
    }
}

/// Validated field data: discriminant, its two prime factors, the
/// fundamental unit x + y*w and the regulator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldParams {
    pub d: i64,
    pub p1: i64,
    pub p2: i64,
    pub unit_x: i128,
    pub unit_y: i128,
    pub log_eps: f64,
    /// w * conj(w) = (1 - D)/4
    pub omega_norm: i128,
    /// w + conj(w)
    pub omega_trace: i128,
    pub sqrt_d: f64,
    pub eps: f64,
}

fn checked(v: Option<i128>) -> Result<i128> {
    v.ok_or(Error::Overflow)
}

/// Build and validate the field Q(sqrt d).
///
/// Checks are applied in this order: squarefree, 1 mod 4, exactly two prime
/// factors, fundamental unit of norm +1, both primes 3 mod 4, and finally
/// that every prime below the Minkowski bound that is not inert has a
/// principal prime above it (wide class number one).
pub fn make_field(d: i64) -> Result<FieldParams> {
    if d < 5 {
        return Err(Error::InvalidArgument(format!("D={d} must be at least 5")));
    }
    if !is_squarefree(d as u64) {
        return Err(Error::NotSquarefree(d));
    }
    if d % 4 != 1 {
        return Err(Error::NotOneMod4(d));
    }
    let fac = factorize(d as u64);
    if fac.len() != 2 {
        return Err(Error::NotTwoPrimeProduct(d));
    }
    let (x, y, unit_norm) = fundamental_unit(d)?;
    if unit_norm != 1 {
        return Err(Error::UnitNormNotOne(d));
    }
    if fac.iter().any(|&(p, _)| p % 4 != 3) {
        return Err(Error::NotTwoPrimeProduct(d));
    }
    let sqrt_d = (d as f64).sqrt();
    let omega = (1.0 + sqrt_d) / 2.0;
    let eps = x as f64 + y as f64 * omega;
    let mut f = FieldParams {
        d,
        p1: 0,
        p2: 0,
        unit_x: x,
        unit_y: y,
        log_eps: eps.ln(),
        omega_norm: ((1 - d) / 4) as i128,
        omega_trace: 1,
        sqrt_d,
        eps,
    };
    let g1 = gcd(1 + x, y);
    let g2 = gcd(x - 1, y);
    let p1 = f.norm(QuadInt::new((1 + x) / g1, y / g1))?;
    let p2 = -f.norm(QuadInt::new((x - 1) / g2, y / g2))?;
    assert_eq!(p1 * p2, d as i128, "unit factorization does not split D");
    f.p1 = p1 as i64;
    f.p2 = p2 as i64;

    let bound = sqrt_d / 2.0;
    for p in primes_up_to(bound.floor() as usize) {
        if kronecker(d, p as i64) != -1 && f.raw_solutions_of_norm(p as i128)?.is_empty() {
            return Err(Error::ClassNumberNotOne { d, p: p as i64 });
        }
    }
    Ok(f)
}

/// Smallest unit (s + y sqrt D)/2 > 1, found by increasing y. Returns the
/// w-coordinates (x, y) and the norm.
fn fundamental_unit(d: i64) -> Result<(i128, i128, i128)> {
    let d = d as i128;
    for y in 1i128..=10_000_000 {
        let dy2 = checked(d.checked_mul(y * y))?;
        for (shift, norm) in [(4i128, 1i128), (-4, -1)] {
            if let Some(s) = perfect_sqrt(dy2 + shift) {
                // x + y*w = (2x + y + y sqrt D)/2, so 2x + y = s
                return Ok(((s - y) / 2, y, norm));
            }
        }
    }
    Err(Error::Overflow)
}

/// Sign of A + B sqrt(D) computed exactly.
fn sign_surd(a: i128, b: i128, d: i128) -> i32 {
    let sa = a.signum() as i32;
    let sb = b.signum() as i32;
    if sb == 0 {
        return sa;
    }
    if sa == 0 || sa == sb {
        return sb;
    }
    match (a.checked_mul(a), b.checked_mul(b).and_then(|v| v.checked_mul(d))) {
        (Some(a2), Some(db2)) => {
            if a2 > db2 {
                sa
            } else {
                sb
            }
        }
        _ => {
            let v = a as f64 + b as f64 * (d as f64).sqrt();
            if v > 0.0 {
                1
            } else {
                -1
            }
        }
    }
}

impl FieldParams {
    pub fn unit(&self) -> QuadInt {
        QuadInt::new(self.unit_x, self.unit_y)
    }

    pub fn unit_inverse(&self) -> QuadInt {
        self.conjugate(self.unit())
    }

    /// Exact norm m^2 + mn + n^2 (1-D)/4.
    pub fn norm(&self, a: QuadInt) -> Result<i128> {
        let m2 = checked(a.m.checked_mul(a.m))?;
        let mn = checked(a.m.checked_mul(a.n))?;
        let n2 = checked(a.n.checked_mul(a.n).and_then(|v| v.checked_mul(self.omega_norm)))?;
        checked(m2.checked_add(mn).and_then(|v| v.checked_add(n2)))
    }

    pub fn multiply(&self, a: QuadInt, b: QuadInt) -> Result<QuadInt> {
        let c = -self.omega_norm; // (D-1)/4
        let nn = checked(a.n.checked_mul(b.n))?;
        let m = checked(
            a.m.checked_mul(b.m)
                .and_then(|v| v.checked_add(nn.checked_mul(c)?)),
        )?;
        let n = checked(
            a.m.checked_mul(b.n)
                .and_then(|v| v.checked_add(a.n.checked_mul(b.m)?))
                .and_then(|v| v.checked_add(nn)),
        )?;
        Ok(QuadInt::new(m, n))
    }

    pub fn conjugate(&self, a: QuadInt) -> QuadInt {
        QuadInt::new(a.m + a.n, -a.n)
    }

    /// unit^j for any integer j.
    pub fn unit_pow(&self, j: i64) -> Result<QuadInt> {
        let base = if j >= 0 { self.unit() } else { self.unit_inverse() };
        let mut e = j.unsigned_abs();
        let mut acc = QuadInt::ONE;
        let mut b = base;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.multiply(acc, b)?;
            }
            e >>= 1;
            if e > 0 {
                b = self.multiply(b, b)?;
            }
        }
        Ok(acc)
    }

    /// Exact sign of the first real embedding.
    pub fn sign(&self, a: QuadInt) -> i32 {
        sign_surd(2 * a.m + a.n, a.n, self.d as i128)
    }

    /// Exact sign of the conjugate embedding.
    pub fn conj_sign(&self, a: QuadInt) -> i32 {
        sign_surd(2 * a.m + a.n, -a.n, self.d as i128)
    }

    /// Both real embeddings (alpha, conj alpha). The one of smaller modulus is
    /// recovered from the norm to avoid cancellation.
    pub fn embeddings(&self, a: QuadInt) -> (f64, f64) {
        let s = self.sqrt_d;
        let big_a = (2 * a.m + a.n) as f64;
        let b = a.n as f64;
        let e1 = (big_a + b * s) / 2.0;
        let e2 = (big_a - b * s) / 2.0;
        let nrm = match self.norm(a) {
            Ok(v) => v as f64,
            Err(_) => e1 * e2,
        };
        if e1.abs() >= e2.abs() {
            let small = if e1 == 0.0 { 0.0 } else { nrm / e1 };
            (e1, small)
        } else {
            (nrm / e2, e2)
        }
    }

    pub fn real_value(&self, a: QuadInt) -> f64 {
        self.embeddings(a).0
    }

    /// log|alpha / conj(alpha)|; exactly 0.0 when alpha is rational or a
    /// rational multiple of sqrt D.
    pub fn angle(&self, a: QuadInt) -> Result<f64> {
        if a.is_zero() {
            return Err(Error::ZeroElement);
        }
        if a.n == 0 || 2 * a.m + a.n == 0 {
            return Ok(0.0);
        }
        let (e1, e2) = self.embeddings(a);
        let nrm = (e1 * e2).abs();
        if e1.abs() >= e2.abs() {
            Ok(2.0 * e1.abs().ln() - nrm.ln())
        } else {
            Ok(nrm.ln() - 2.0 * e2.abs().ln())
        }
    }

    /// The unique associate u*alpha with u = +-unit^j that is positive in
    /// the first embedding and has angle in [0, 2 log eps).
    pub fn canonical_generator(&self, a: QuadInt) -> Result<QuadInt> {
        let two_reg = 2.0 * self.log_eps;
        let theta = self.angle(a)?;
        let j = (theta / two_reg).floor() as i64;
        let mut b = self.multiply(a, self.unit_pow(-j)?)?;
        let eps = self.unit();
        let eps_inv = self.unit_inverse();
        for _ in 0..8 {
            if self.angle(b)? < 0.0 {
                b = self.multiply(b, eps)?;
                continue;
            }
            let down = self.multiply(b, eps_inv)?;
            if self.angle(down)? >= 0.0 {
                b = down;
                continue;
            }
            break;
        }
        if self.sign(b) < 0 {
            b = b.neg();
        }
        Ok(b)
    }

    /// All elements alpha with |N(alpha)| = n inside the fundamental box
    /// sqrt(n) <= alpha < eps sqrt(n) up to the box's slack. Every principal
    /// ideal of norm n has at least one generator in the returned list.
    pub(crate) fn raw_solutions_of_norm(&self, n: i128) -> Result<Vec<QuadInt>> {
        let d = self.d as i128;
        let vmax = ((self.eps + 1.0) * (n as f64).sqrt() / self.sqrt_d).ceil() as i128 + 1;
        let mut out = Vec::new();
        for v in -vmax..=vmax {
            let dv2 = checked(d.checked_mul(v * v))?;
            let four_n = checked(n.checked_mul(4))?;
            for disc in [dv2 + four_n, dv2 - four_n] {
                if let Some(s) = perfect_sqrt(disc) {
                    for root in [s, -s] {
                        let num = -v + root;
                        if num.rem_euclid(2) == 0 {
                            out.push(QuadInt::new(num / 2, v));
                        }
                        if s == 0 {
                            break;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f21() -> FieldParams {
        make_field(21).unwrap()
    }

    #[test]
    fn field_21() {
        let f = f21();
        assert_eq!((f.p1, f.p2, f.unit_x, f.unit_y), (7, 3, 2, 1));
        assert!((f.log_eps - 1.566_799_236_972_411).abs() < 1e-14);
        assert_eq!(f.norm(f.unit()).unwrap(), 1);
    }

    #[test]
    fn rejected_fields() {
        assert_eq!(make_field(15), Err(Error::NotOneMod4(15)));
        assert_eq!(make_field(5), Err(Error::NotTwoPrimeProduct(5)));
        assert_eq!(make_field(65), Err(Error::UnitNormNotOne(65)));
        assert_eq!(make_field(45), Err(Error::NotSquarefree(45)));
        assert_eq!(make_field(105), Err(Error::NotTwoPrimeProduct(105)));
    }

    #[test]
    fn norms_and_products() {
        let f = f21();
        assert_eq!(f.norm(QuadInt::new(1, 1)).unwrap(), -3);
        assert_eq!(f.norm(QuadInt::new(0, 1)).unwrap(), -5);
        assert_eq!(f.multiply(QuadInt::new(0, 1), QuadInt::new(0, 1)).unwrap(), QuadInt::new(5, 1));
        let big = QuadInt::new(i128::MAX / 2, 3);
        assert_eq!(f.norm(big), Err(Error::Overflow));
    }

    #[test]
    fn angles() {
        let f = f21();
        assert_eq!(f.angle(QuadInt::ONE).unwrap(), 0.0);
        assert!((f.angle(f.unit()).unwrap() - 2.0 * f.log_eps).abs() < 1e-13);
        let s = 21f64.sqrt();
        let direct = ((1.0 + s) / (s - 1.0)).ln();
        assert!((f.angle(QuadInt::new(0, 1)).unwrap() - direct).abs() < 1e-14);
        assert!((direct - 0.443_568).abs() < 1e-6);
        assert_eq!(f.angle(QuadInt::new(0, 0)), Err(Error::ZeroElement));
    }

    #[test]
    fn canonical_generators() {
        let f = f21();
        let e3 = f.unit_pow(3).unwrap();
        assert_eq!(f.canonical_generator(e3).unwrap(), QuadInt::ONE);
        assert_eq!(f.canonical_generator(QuadInt::new(0, 1)).unwrap(), QuadInt::new(0, 1));
        let sqrt_d = QuadInt::new(-1, 2);
        let c = f.canonical_generator(f.multiply(sqrt_d, f.unit_pow(-4).unwrap()).unwrap()).unwrap();
        assert_eq!(c, sqrt_d);
    }

    #[test]
    fn admitted_fields_factor_d() {
        for d in [21i64, 33, 57, 69, 77, 93] {
            let f = make_field(d).unwrap();
            assert_eq!(f.p1 * f.p2, d);
            assert!(f.unit_x >= 2 && f.unit_y >= 1);
        }
    }
}
