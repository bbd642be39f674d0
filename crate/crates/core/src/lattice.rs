//! Integer geometry of the first-moment computation: the reduced norm of an
//! ideal generator, the four linearized-angle frames and the factorization
//! of the fundamental unit.

use serde::Serialize;

use crate::arith::{ext_gcd, gcd};
use crate::error::{Error, Result};
use crate::quadfield::{FieldParams, QuadInt};

fn chk(v: Option<i128>) -> Result<i128> {
    v.ok_or(Error::Overflow)
}

/// The norm form Q(X, Y) = X^2 + XY + (1-D)/4 Y^2 = N(X + Y w).
pub fn qform(f: &FieldParams, x: i128, y: i128) -> Result<i128> {
    let xx = chk(x.checked_mul(x))?;
    let xy = chk(x.checked_mul(y))?;
    let yy = chk(chk(y.checked_mul(y))?.checked_mul(f.omega_norm))?;
    chk(chk(xx.checked_add(xy))?.checked_add(yy))
}

/// (signed, absolute) reduced norm of beta: Q(M/g, N/g) with g = gcd(M, N).
pub fn n_beta(f: &FieldParams, beta: QuadInt) -> Result<(i128, u64)> {
    if beta.is_zero() {
        return Err(Error::ZeroElement);
    }
    let g = gcd(beta.m, beta.n);
    let s = qform(f, beta.m / g, beta.n / g)?;
    let a = u64::try_from(s.unsigned_abs()).map_err(|_| Error::Overflow)?;
    Ok((s, a))
}

/// One of the four frames attached to beta. Branches 1 and 2 linearize the
/// angle near 0, branches 3 and 4 near log eps; odd branches are for
/// products of positive norm.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OffDiagFrame {
    pub j: u8,
    pub c: f64,
    /// -c / (b + a w)
    pub c_tilde: f64,
    pub a: i128,
    pub b: i128,
    pub abar: i128,
    pub bbar: i128,
    /// rows (b, a) and (-abar, -bbar)
    pub gamma: [[i128; 2]; 2],
    pub ell: u8,
}

impl OffDiagFrame {
    pub fn det(&self) -> i128 {
        self.gamma[0][0] * self.gamma[1][1] - self.gamma[0][1] * self.gamma[1][0]
    }
}

/// g1 = gcd(1+x, y), g2 = gcd(1-x, y) and the primes they cut out of the
/// unit: Q((1+x)/g1, y/g1) = p1, Q((x-1)/g2, y/g2) = -p2.
pub fn unit_prime_split(f: &FieldParams) -> (i64, i64, i128, i128) {
    let (x, y) = (f.unit_x, f.unit_y);
    let g1 = gcd(1 + x, y);
    let g2 = gcd(1 - x, y);
    assert_eq!(g1 * g2, y, "unit gcd split failed for D={}", f.d);
    let p1 = qform(f, (1 + x) / g1, y / g1).expect("small unit");
    let p2 = -qform(f, (x - 1) / g2, y / g2).expect("small unit");
    assert_eq!(p1 * p2, f.d as i128, "unit factorization failed for D={}", f.d);
    (p1 as i64, p2 as i64, g1, g2)
}

/// The two divisibilities p1 | 2y/g1 * w w~ + (x+1)/g1 and
/// p2 | 2y/g2 * w w~ + (x-1)/g2.
pub fn unit_divisibilities(f: &FieldParams) -> (bool, bool) {
    let (p1, p2, g1, g2) = unit_prime_split(f);
    let (x, y, w) = (f.unit_x, f.unit_y, f.omega_norm);
    let r = 2 * y / g1 * w + (x + 1) / g1;
    let s = 2 * y / g2 * w + (x - 1) / g2;
    (r % p1 as i128 == 0, s % p2 as i128 == 0)
}

/// Raw (a_j, b_j) and the real constant C_j.
fn frame_coeffs(f: &FieldParams, beta: QuadInt, j: u8) -> Result<(i128, i128, f64)> {
    let (mm, nn) = (beta.m, beta.n);
    let g = gcd(mm, nn);
    let (x, y, w) = (f.unit_x, f.unit_y, f.omega_norm);
    let bv = f.real_value(beta);
    let scale = g as f64 / (bv * f.log_eps);
    let omega = (1.0 + f.sqrt_d) / 2.0;
    let mul = |a: i128, b: i128| chk(a.checked_mul(b));
    let add = |a: i128, b: i128| chk(a.checked_add(b));
    Ok(match j {
        1 => (nn / g, -add(mm, nn)? / g, -scale * f.sqrt_d),
        2 => {
            let a = add(mul(2, mm)?, nn)?;
            let b = add(mm, nn)? - mul(mul(2, nn)?, w)?;
            (a / g, -b / g, -scale)
        }
        3 => {
            let h = gcd(y, 1 + x);
            let a = mul(mm, y)? - mul(nn, 1 + x)?;
            let b = add(mul(mul(nn, w)?, y)?, mul(add(mm, nn)?, 1 + x)?)?;
            let lead = gcd(x - 1, x + y * w) as f64 + h as f64 * omega;
            (a / (g * h), b / (g * h), scale * lead)
        }
        4 => {
            let h = gcd(1 - x, y);
            let a = add(mul(nn, 1 - x)?, mul(mm, y)?)?;
            let b = add(mul(mul(nn, w)?, y)?, mul(add(mm, nn)?, x - 1)?)?;
            let lead = gcd(1 + x, y * w + x) as f64 + gcd(y, 1 - x) as f64 * omega;
            (a / (g * h), b / (g * h), -scale * lead)
        }
        _ => return Err(Error::InvalidArgument(format!("frame index {j} not in 1..=4"))),
    })
}

/// Solve a*abar - b*bbar = 1 with |abar| <= |b| and |bbar| <= |a|,
/// preferring nonnegative abar.
fn bezout_pair(a: i128, b: i128) -> Result<(i128, i128)> {
    let (g, s, t) = ext_gcd(a, b);
    if g != 1 || a == 0 || b == 0 {
        return Err(Error::BezoutRangeImpossible { a, b });
    }
    // a*s + b*t = 1, so abar = s, bbar = -t; shift along (b, a)
    let (abar0, bbar0) = (s, -t);
    let q = abar0.div_euclid(b);
    let base = (abar0 - q * b, bbar0 - q * a);
    let mut best: Option<(i128, i128)> = None;
    for k in -2i128..=2 {
        let cand = (base.0 + k * b, base.1 + k * a);
        if cand.0.abs() <= b.abs() && cand.1.abs() <= a.abs() {
            let better = match best {
                None => true,
                Some(bb) => (cand.0 >= 0 && bb.0 < 0) || (cand.0 >= 0) == (bb.0 >= 0) && cand.0.abs() < bb.0.abs(),
            };
            if better {
                best = Some(cand);
            }
        }
    }
    best.ok_or(Error::BezoutRangeImpossible { a, b })
}

/// Build frame j for beta.
pub fn offdiag_frame(f: &FieldParams, beta: QuadInt, j: u8) -> Result<OffDiagFrame> {
    if beta.is_zero() {
        return Err(Error::ZeroElement);
    }
    let (a, b, c) = frame_coeffs(f, beta, j)?;
    let (abar, bbar) = bezout_pair(a, b)?;
    let omega = (1.0 + f.sqrt_d) / 2.0;
    Ok(OffDiagFrame {
        j,
        c,
        c_tilde: -c / (b as f64 + a as f64 * omega),
        a,
        b,
        abar,
        bbar,
        gamma: [[b, a], [-abar, -bbar]],
        ell: if j <= 2 { 0 } else { 1 },
    })
}

/// Q(b_j, a_j) for beta without building the Bezout pair (works whenever
/// the raw coefficients exist, coprime or not).
pub fn frame_diagonal_value(f: &FieldParams, beta: QuadInt, j: u8) -> Result<i128> {
    if beta.is_zero() {
        return Err(Error::ZeroElement);
    }
    let (a, b, _) = frame_coeffs(f, beta, j)?;
    qform(f, b, a)
}

/// Raw (a_j, b_j) for beta.
pub fn frame_ab(f: &FieldParams, beta: QuadInt, j: u8) -> Result<(i128, i128)> {
    if beta.is_zero() {
        return Err(Error::ZeroElement);
    }
    let (a, b, _) = frame_coeffs(f, beta, j)?;
    Ok((a, b))
}

/// Q(b r - abar h, a r - bbar h).
pub fn qgamma(f: &FieldParams, fr: &OffDiagFrame, r: i128, h: i128) -> Result<i128> {
    let x = chk(chk(fr.b.checked_mul(r))?.checked_sub(chk(fr.abar.checked_mul(h))?))?;
    let y = chk(chk(fr.a.checked_mul(r))?.checked_sub(chk(fr.bbar.checked_mul(h))?))?;
    qform(f, x, y)
}

/// Coefficients (A, B, C) of Q^gamma(r, h) = A r^2 + B r h + C h^2.
pub fn qgamma_coeffs(f: &FieldParams, fr: &OffDiagFrame) -> Result<(i128, i128, i128)> {
    let a = qgamma(f, fr, 1, 0)?;
    let c = qgamma(f, fr, 0, 1)?;
    let b = qgamma(f, fr, 1, 1)? - a - c;
    Ok((a, b, c))
}

/// Deviation of the linearized angle from the true one:
/// |(ell - theta(alpha beta)/log eps) - C_j/alpha * (a_j m - b_j n)|.
/// Also returns the expansion parameter delta.
pub fn angle_linearization_error(f: &FieldParams, alpha: QuadInt, beta: QuadInt, j: u8) -> Result<(f64, f64)> {
    if alpha.is_zero() || beta.is_zero() {
        return Err(Error::ZeroElement);
    }
    let prod = f.multiply(alpha, beta)?;
    let nsign = f.norm(prod)?.signum();
    let want = if j % 2 == 1 { 1 } else { -1 };
    if nsign != want {
        return Err(Error::HypothesisViolated(format!("norm sign {nsign} does not match branch {j}")));
    }
    let (a, b, c) = frame_coeffs(f, beta, j)?;
    let ell = if j <= 2 { 0.0 } else { 1.0 };
    let theta = f.angle(prod)?;
    let lhs = ell - theta / f.log_eps;
    if lhs.abs() > 0.1 {
        return Err(Error::HypothesisViolated(format!("angle offset {lhs} outside window")));
    }
    let lin = c / f.real_value(alpha) * (a * alpha.m - b * alpha.n) as f64;
    let (g, gt) = f.embeddings(prod);
    let ratio = gt / g * f.eps.powf(ell);
    let delta = if nsign > 0 { ratio - 1.0 } else { ratio + 1.0 };
    Ok(((lhs - lin).abs(), delta.abs()))
}

/// A crude explicit constant c with max(|a_j|, |b_j|) <= c (|M| + |N|).
pub fn frame_size_constant(f: &FieldParams) -> i128 {
    let (x, y, w) = (f.unit_x, f.unit_y, f.omega_norm.abs());
    (2 + 2 * w).max(y + 1 + x).max(w * y + 2 * (x + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadfield::make_field;

    #[test]
    fn n_beta_examples() {
        let f = make_field(21).unwrap();
        assert_eq!(n_beta(&f, QuadInt::ONE).unwrap(), (1, 1));
        assert_eq!(n_beta(&f, QuadInt::new(0, 1)).unwrap(), (-5, 5));
        assert_eq!(n_beta(&f, QuadInt::new(3, 3)).unwrap(), (-3, 3));
        assert_eq!(n_beta(&f, QuadInt::new(0, 0)), Err(Error::ZeroElement));
    }

    #[test]
    fn frames_for_omega() {
        let f = make_field(21).unwrap();
        let beta = QuadInt::new(0, 1);
        let want = [(1, -1, -5), (1, -11, 105), (-3, -2, -35), (-1, -4, 15)];
        for (j, &(a, b, q)) in (1u8..=4).zip(want.iter()) {
            let fr = offdiag_frame(&f, beta, j).unwrap();
            assert_eq!((fr.a, fr.b), (a, b), "j={j}");
            assert_eq!(qform(&f, fr.b, fr.a).unwrap(), q);
            assert_eq!(fr.det(), 1);
            assert!(fr.abar.abs() <= fr.b.abs() && fr.bbar.abs() <= fr.a.abs());
        }
    }

    #[test]
    fn factor_split_21() {
        let f = make_field(21).unwrap();
        assert_eq!(unit_prime_split(&f), (7, 3, 1, 1));
        assert_eq!(unit_divisibilities(&f), (true, true));
    }

    #[test]
    fn bezout_degenerate() {
        assert!(matches!(bezout_pair(0, 1), Err(Error::BezoutRangeImpossible { .. })));
        assert!(matches!(bezout_pair(2, 4), Err(Error::BezoutRangeImpossible { .. })));
        assert_eq!(bezout_pair(1, 1).map(|(x, y)| x - y), Ok(1));
    }

    #[test]
    fn qgamma_discriminant() {
        let f = make_field(21).unwrap();
        let fr = offdiag_frame(&f, QuadInt::new(2, 1), 2).unwrap();
        let (a, b, c) = qgamma_coeffs(&f, &fr).unwrap();
        assert_eq!(b * b - 4 * a * c, 21);
        for r in 1..=100 {
            assert_eq!(qgamma(&f, &fr, r, 0).unwrap(), qform(&f, fr.b, fr.a).unwrap() * r * r);
        }
    }

    #[test]
    fn linearization_trivial() {
        let f = make_field(21).unwrap();
        let (e, d) = angle_linearization_error(&f, QuadInt::ONE, QuadInt::ONE, 1).unwrap();
        assert!(e < 1e-15 && d < 1e-15);
    }
}
