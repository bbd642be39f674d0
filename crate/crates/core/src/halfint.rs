//! Weight 1/2 Eisenstein data and sums of Hecke eigenvalues over values of
//! quadratic polynomials.
//!
//! The Fourier coefficient of the weight 1/2 Eisenstein series at infinity
//! factors into an odd part b(n, s) and a part c(n, s) supported on moduli
//! built from the primes of the level. Both are computed here as series and
//! in closed form at s = 3/4, where the residue is a theta series.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};
use std::time::Instant;

use crate::arith::{KahanSum, divisors, euler_phi, ext_gcd, factorize, gcd_u64, is_prime, kronecker, mobius, perfect_sqrt, spf_table};
use crate::chars::{characters_mod, DirChar};
use crate::error::{Error, Result};
use crate::hecke::HeckeSource;
use crate::lfun::{dirichlet_l, zeta};
use crate::report::{ExperimentReport, Tolerance};
use crate::weight::{SmoothWeight, WeightKind};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Exponent of the bound |lambda(n)| << n^theta used in error envelopes.
pub const THETA: f64 = 7.0 / 64.0;

fn c64(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Low part of 2 pi beyond its f64 rounding.
const TAU_LO: f64 = 2.449_293_598_294_706_4e-16;

/// e(num/den) computed from the reduced residue. The angle carries the low
/// part of 2 pi so that long sums of roots have no systematic phase drift.
fn e_frac(num: i128, den: i128) -> Complex64 {
    let f = num.rem_euclid(den) as f64 / den as f64;
    let hi = std::f64::consts::TAU * f;
    let lo = std::f64::consts::TAU.mul_add(f, -hi) + TAU_LO * f;
    let (s, c) = hi.sin_cos();
    Complex64::new(c - s * lo, s + c * lo)
}

fn valuation(mut n: u64, p: u64) -> u32 {
    let mut v = 0;
    while n > 0 && n.is_multiple_of(p) {
        n /= p;
        v += 1;
    }
    v
}

fn mod_inverse(a: u64, m: u64) -> u64 {
    let (_, x, _) = ext_gcd(a as i128, m as i128);
    x.rem_euclid(m as i128) as u64
}

/// The theta multiplier: 1 for d = 1 mod 4 and i for d = 3 mod 4, read on
/// residues so negative d follow the same rule (eps_d^2 = chi_{-4}(d)).
pub fn epsilon_d(d: i64) -> Result<Complex64> {
    if d % 2 == 0 {
        return Err(Error::EvenInput(d));
    }
    Ok(if d.rem_euclid(4) == 1 { c64(1.0) } else { I })
}

/// G_n(chi) = sum_{d=1}^{r} chi(d) e(dn/r).
pub fn gauss_sum(n: i64, chi: &DirChar) -> Complex64 {
    let r = chi.modulus as i128;
    let mut acc = Complex64::new(0.0, 0.0);
    for d in 1..=r {
        let v = chi.eval(d as i64);
        if v.norm_sqr() != 0.0 {
            acc += v * e_frac(d * n as i128, r);
        }
    }
    acc
}

/// The three families of local Gauss sums that occur in c(n, s).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GaussVariant {
    /// chi_8^k times the principal character mod 2^k
    G8,
    /// chi_{-4} chi_8^k mod 2^k
    Gneg8,
    /// chi_{-p}^k times the principal character mod p^k, for p = 3 mod 4
    Gp(u64),
}

impl GaussVariant {
    fn check(&self, k: u32) -> Result<()> {
        match *self {
            GaussVariant::G8 | GaussVariant::Gneg8 if !(2..=40).contains(&k) => {
                Err(Error::InvalidArgument(format!("2-adic exponent {k} must be in 2..=40")))
            }
            GaussVariant::Gp(p) if !(is_prime(p) && p % 4 == 3) => {
                Err(Error::InvalidArgument(format!("{p} is not a prime 3 mod 4")))
            }
            _ => Ok(()),
        }
    }

    pub fn modulus(&self, k: u32) -> u64 {
        match *self {
            GaussVariant::G8 | GaussVariant::Gneg8 => 1u64 << k,
            GaussVariant::Gp(p) => p.pow(k),
        }
    }

    pub fn char_value(&self, k: u32, x: u64) -> i32 {
        match *self {
            GaussVariant::G8 | GaussVariant::Gneg8 => {
                if x.is_multiple_of(2) {
                    return 0;
                }
                let c8 = if k % 2 == 1 { kronecker(2, x as i64) } else { 1 };
                if *self == GaussVariant::Gneg8 {
                    c8 * kronecker(-4, x as i64)
                } else {
                    c8
                }
            }
            GaussVariant::Gp(p) => {
                if k == 0 {
                    1
                } else if x.is_multiple_of(p) {
                    0
                } else if k % 2 == 1 {
                    kronecker(x as i64, p as i64)
                } else {
                    1
                }
            }
        }
    }
}

/// Closed form of the local Gauss sums for n = 2^{2a0} p1^{2a1} p2^{2a2} n0
/// with n0 a square prime to 2 p1 p2. n = 0 is read as every exponent
/// infinite.
pub fn gauss_closed(n: u64, variant: GaussVariant, k: u32) -> Result<Complex64> {
    variant.check(k)?;
    if n != 0 && perfect_sqrt(n as i128).is_none() {
        return Err(Error::BadDecomposition);
    }
    let alpha = |p: u64| if n == 0 { None } else { Some(valuation(n, p) / 2) };
    let z = Complex64::new(0.0, 0.0);
    Ok(match variant {
        GaussVariant::G8 => {
            let a = alpha(2);
            if k.is_multiple_of(2) && a.is_none_or(|a| k <= 2 * a) {
                c64((1u64 << (k - 1)) as f64)
            } else if a.is_some_and(|a| k == 2 * a + 3) {
                c64(2.0 * SQRT_2 * 4f64.powi(a.unwrap() as i32))
            } else {
                z
            }
        }
        GaussVariant::Gneg8 => match alpha(2) {
            Some(a) if k == 2 * a + 2 => I * 2.0 * 4f64.powi(a as i32),
            Some(a) if k == 2 * a + 3 => I * 2.0 * SQRT_2 * 4f64.powi(a as i32),
            _ => z,
        },
        GaussVariant::Gp(p) => {
            let a = alpha(p);
            if k.is_multiple_of(2) && a.is_none_or(|a| k <= 2 * a) {
                c64(euler_phi(p.pow(k)) as f64)
            } else if a.is_some_and(|a| k == 2 * a + 1) {
                I * (p as f64).sqrt() * (p as f64).powi(2 * a.unwrap() as i32)
            } else {
                z
            }
        }
    })
}

/// Brute-force local Gauss sums for many n at once (one root table).
pub fn gauss_brute_many(ns: &[u64], variant: GaussVariant, k: u32) -> Result<Vec<Complex64>> {
    variant.check(k)?;
    let q = variant.modulus(k);
    let chi: Vec<i8> = (0..q).map(|x| variant.char_value(k, x) as i8).collect();
    let roots: Vec<Complex64> = (0..q).map(|j| e_frac(j as i128, q as i128)).collect();
    Ok(ns
        .par_iter()
        .map(|&n| {
            let step = n % q;
            let mut idx = 0u64;
            let (mut re, mut im) = (KahanSum::new(), KahanSum::new());
            for &c in &chi {
                if c != 0 {
                    let r = roots[idx as usize] * c as f64;
                    re.add(r.re);
                    im.add(r.im);
                }
                idx += step;
                if idx >= q {
                    idx -= q;
                }
            }
            Complex64::new(re.value(), im.value())
        })
        .collect())
}

/// A level M = 2^{beta0} p1^{beta1} p2^{beta2} with beta0 >= 2 and odd
/// primes 3 mod 4.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelData {
    pub m: u64,
    pub beta0: u32,
    /// (p_j, beta_j) for the odd primes dividing M, at most two
    pub odd: Vec<(u64, u32)>,
    /// 2^{-2} prod p_j^{2 [beta_j/2]}, always an integer since beta0 >= 2
    pub t_m: u64,
}

impl LevelData {
    pub fn new(m: u64) -> Result<LevelData> {
        if m == 0 || !m.is_multiple_of(4) {
            return Err(Error::InvalidArgument(format!("level {m} is not divisible by 4")));
        }
        let fac = factorize(m);
        let beta0 = fac[0].1;
        let odd: Vec<(u64, u32)> = fac[1..].to_vec();
        if odd.len() > 2 || odd.iter().any(|&(p, _)| p % 4 != 3) {
            return Err(Error::InvalidArgument(format!(
                "level {m} must have at most two odd primes, each 3 mod 4"
            )));
        }
        let mut t = 1u64 << (2 * (beta0 / 2) - 2);
        for &(p, b) in &odd {
            t *= p.pow(2 * (b / 2));
        }
        Ok(LevelData { m, beta0, odd, t_m: t })
    }

    /// All (p, beta_p) including p = 2.
    pub fn primes(&self) -> Vec<(u64, u32)> {
        let mut v = vec![(2, self.beta0)];
        v.extend(self.odd.iter().copied());
        v
    }

    /// prod_{p | M} (1 - p^{-s})^{-1}
    pub fn zeta_at_level(&self, s: f64) -> f64 {
        self.primes().iter().map(|&(p, _)| 1.0 / (1.0 - (p as f64).powf(-s))).product()
    }

    /// zeta(s) with the Euler factors at p | M removed, s > 1.
    pub fn zeta_away(&self, s: f64) -> Result<f64> {
        let z = zeta(c64(s))?.re;
        Ok(z * self.primes().iter().map(|&(p, _)| 1.0 - (p as f64).powf(-s)).product::<f64>())
    }

    /// prod_j p_j^{-[(beta_j + 1)/2]}
    pub fn floor_product(&self) -> f64 {
        self.primes().iter().map(|&(p, b)| (p as f64).powi(-(b.div_ceil(2) as i32))).product()
    }

    fn rad(&self) -> u64 {
        self.primes().iter().map(|&(p, _)| p).product()
    }
}

/// One local factor of M': the character value of the CRT component on
/// residues mod q = p^k, where psi is (M'/.) or chi_{-4}(M'/.).
struct LocalPiece {
    p: u64,
    k: u32,
    q: u64,
    rest: u64,
    rest_inv: u64,
}

impl LocalPiece {
    fn lift(&self, x: u64) -> i64 {
        // y = x mod q and y = 1 mod rest
        let xm = (x % self.q + self.q - 1) % self.q;
        let t = (xm as u128 * self.rest_inv as u128 % self.q as u128) as u64;
        (1 + self.rest as u128 * t as u128) as i64
    }
}

fn psi_value(mprime: u64, twist: bool, y: i64) -> i32 {
    let k = kronecker(mprime as i64, y);
    if twist {
        k * kronecker(-4, y)
    } else if y % 2 == 0 {
        0
    } else {
        k
    }
}

/// Local Gauss sum mod p^k, reducing the exponent while the character is
/// periodic mod p^{k-1} (conductor at most 8, resp. p).
fn local_gauss(n: u64, piece: &LocalPiece, chi: impl Fn(u64) -> i32) -> Complex64 {
    let base = if piece.p == 2 { 3 } else { 1 };
    let (mut n, mut k, mut scale) = (n, piece.k, 1.0f64);
    while k > base {
        if n % piece.p != 0 {
            return Complex64::new(0.0, 0.0);
        }
        n /= piece.p;
        scale *= piece.p as f64;
        k -= 1;
    }
    let q = piece.p.pow(k);
    let mut acc = Complex64::new(0.0, 0.0);
    for x in 0..q {
        let v = chi(x);
        if v != 0 {
            acc += e_frac(x as i128 * n as i128, q as i128) * v as f64;
        }
    }
    acc * scale
}

/// sum_{d=1}^{M'} eps_d (M'/d) e(nd/M') for M' = prod p^{k_p}, through the
/// Chinese remainder theorem.
pub fn c_term(n: u64, exps: &[(u64, u32)]) -> Complex64 {
    let mprime: u64 = exps.iter().map(|&(p, k)| p.pow(k)).product();
    let pieces: Vec<LocalPiece> = exps
        .iter()
        .filter(|&&(_, k)| k > 0)
        .map(|&(p, k)| {
            let q = p.pow(k);
            let rest = mprime / q;
            LocalPiece { p, k, q, rest, rest_inv: mod_inverse(rest % q, q) }
        })
        .collect();
    let mut out = Complex64::new(0.0, 0.0);
    for (twist, w) in [(false, Complex64::new(0.5, 0.5)), (true, Complex64::new(0.5, -0.5))] {
        let mut g = c64(1.0);
        for pc in &pieces {
            let chi = |x: u64| psi_value(mprime, twist, pc.lift(x));
            let pre = chi(pc.rest % pc.q);
            if pre == 0 {
                g = c64(0.0);
                break;
            }
            g *= local_gauss(n, pc, chi) * pre as f64;
            if g.norm_sqr() == 0.0 {
                break;
            }
        }
        out += w * g;
    }
    out
}

/// The same sum by direct summation over d (for testing).
pub fn c_term_brute(n: u64, mprime: u64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for d in (1..=mprime).step_by(2) {
        let k = kronecker(mprime as i64, d as i64);
        if k != 0 {
            let eps = epsilon_d(d as i64).expect("odd");
            acc += eps * k as f64 * e_frac(d as i128 * n as i128, mprime as i128);
        }
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    pub value: Complex64,
    /// bound on the modulus of the omitted terms
    pub tail: f64,
    pub terms: usize,
}

type Visit<'a> = dyn FnMut(&[(u64, u32)], u64) + 'a;

fn exponent_triples(level: &LevelData, bound: u64, mut visit: impl FnMut(&[(u64, u32)], u64)) {
    let primes = level.primes();
    fn rec(primes: &[(u64, u32)], i: usize, cur: &mut Vec<(u64, u32)>, val: u64, bound: u64, visit: &mut Visit) {
        if i == primes.len() {
            visit(cur, val);
            return;
        }
        let (p, b) = primes[i];
        let mut v = match p.checked_pow(b).and_then(|x| x.checked_mul(val)) {
            Some(v) if v <= bound => v,
            _ => return,
        };
        let mut k = b;
        loop {
            cur.push((p, k));
            rec(primes, i + 1, cur, v, bound, visit);
            cur.pop();
            match v.checked_mul(p) {
                Some(nv) if nv <= bound => {
                    v = nv;
                    k += 1;
                }
                _ => break,
            }
        }
    }
    rec(&primes, 0, &mut Vec::new(), 1, bound, &mut visit);
}

/// c(n, s) = sum over M | M' | M^infinity of the twisted Gauss sums times
/// M'^{-2s}, truncated at M' <= bound.
///
/// For n != 0 the series is finite: terms vanish once p^{k_p - 3} (p = 2) or
/// p^{k_p - 1} (odd p) fails to divide n. For n = 0 only square M' survive
/// and the omitted part is a product of geometric series.
pub fn c_series(n: u64, s: Complex64, level: &LevelData, bound: u64, tol: f64) -> Result<SeriesValue> {
    let mut value = Complex64::new(0.0, 0.0);
    let mut terms = 0usize;
    let mut included_abs = 0.0f64;
    exponent_triples(level, bound, |exps, mp| {
        let t = c_term(n, exps);
        terms += 1;
        if t.norm_sqr() != 0.0 {
            value += t * (-2.0 * s * (mp as f64).ln()).exp();
        }
        if n == 0 && exps.iter().all(|&(_, k)| k % 2 == 0) {
            included_abs += euler_phi(mp) as f64 * (mp as f64).powf(-2.0 * s.re);
        }
    });
    let sigma = s.re;
    let tail = if n == 0 {
        if sigma <= 0.5 {
            return Err(Error::BoundTooSmall("c(0, s) diverges for Re s <= 1/2".into()));
        }
        let mut full = 1.0;
        for (p, b) in level.primes() {
            let pf = p as f64;
            let r = pf.powf(1.0 - 2.0 * sigma);
            let kmin = b + b % 2;
            full *= (1.0 - 1.0 / pf) * r.powi(kmin as i32) / (1.0 - r * r);
        }
        ((full - included_abs).max(0.0)) / SQRT_2
    } else {
        // finitely many possibly nonzero omitted terms, each bounded by sqrt2 M'
        let mut tail = 0.0;
        let caps: Vec<(u64, u32)> = level
            .primes()
            .iter()
            .map(|&(p, b)| (p, (valuation(n, p) + if p == 2 { 3 } else { 1 }).max(b)))
            .collect();
        let mut stack: Vec<(usize, u64)> = vec![(0, 1)];
        let mut combos: Vec<u64> = Vec::new();
        while let Some((i, v)) = stack.pop() {
            if i == caps.len() {
                combos.push(v);
                continue;
            }
            let (p, cap) = caps[i];
            let b = level.primes()[i].1;
            for k in b..=cap {
                if let Some(nv) = p.checked_pow(k).and_then(|x| x.checked_mul(v)) {
                    stack.push((i + 1, nv));
                } else {
                    stack.push((i + 1, u64::MAX));
                }
            }
        }
        for mp in combos {
            if mp > bound {
                tail += SQRT_2 * (mp as f64).powf(1.0 - 2.0 * sigma);
            }
        }
        tail
    };
    if tail > tol {
        return Err(Error::BoundTooSmall(format!("tail {tail:.3e} exceeds {tol:.1e} at bound {bound}")));
    }
    Ok(SeriesValue { value, tail, terms })
}

/// c(m^2, 3/4) for m >= 1 and c(0, 3/4) for m = 0, in closed form.
pub fn c_closed(m: u64, level: &LevelData) -> Complex64 {
    let fp = level.floor_product();
    if m == 0 {
        return Complex64::from_polar(1.0, PI / 4.0) * (fp / SQRT_2);
    }
    let a0 = valuation(m, 2) as i64;
    if 2 * a0 < level.beta0 as i64 - 3 {
        return c64(0.0);
    }
    for &(p, b) in &level.odd {
        if 2 * (valuation(m, p) as i64) < b as i64 - 1 {
            return c64(0.0);
        }
    }
    Complex64::new(0.5, 0.5) * fp
}

/// Squarefree t and m with n = t m^2.
pub fn square_class(n: u64) -> (u64, u64) {
    let mut t = 1u64;
    let mut m = 1u64;
    for (p, e) in factorize(n) {
        if e % 2 == 1 {
            t *= p;
        }
        m *= p.pow(e / 2);
    }
    (t, m)
}

fn l_away(level: &LevelData, z: Complex64) -> Result<Complex64> {
    let mut v = zeta(z)?;
    for (p, _) in level.primes() {
        v *= c64(1.0) - (-z * (p as f64).ln()).exp();
    }
    Ok(v)
}

/// b(n, s) for the theta multiplier twisted by (M/.), in closed form through
/// Dirichlet L-functions with the primes of M removed.
pub fn b_series(n: u64, s: Complex64, level: &LevelData) -> Result<Complex64> {
    let den = l_away(level, 4.0 * s - 1.0)?;
    if n == 0 {
        return Ok(l_away(level, 4.0 * s - 2.0)? / den);
    }
    let (t, m) = square_class(n);
    let tm = t * level.rad();
    let omega1 = |l: u64| if gcd_u64(l, tm) == 1 { kronecker(t as i64, l as i64) } else { 0 };
    let z1 = 2.0 * s - 0.5;
    let num = if t == 1 {
        l_away(level, z1)?
    } else {
        let r = {
            let a = 4 * t;
            let b = level.rad();
            a / gcd_u64(a, b) * b
        };
        let chi = DirChar::from_fn(r, |l| omega1(l) as f64);
        dirichlet_l(z1, &chi)?
    };
    let mut fin = Complex64::new(0.0, 0.0);
    for l in divisors(m) {
        if gcd_u64(l, level.m) != 1 {
            continue;
        }
        for l1 in divisors(l) {
            let mu = mobius(l1);
            if mu == 0 {
                continue;
            }
            let w = omega1(l1);
            if w == 0 {
                continue;
            }
            let l2 = l / l1;
            fin += (mu * w as i64) as f64
                * ((0.5 - 2.0 * s) * (l1 as f64).ln()).exp()
                * ((2.0 - 4.0 * s) * (l2 as f64).ln()).exp();
        }
    }
    Ok(num / den * fin)
}

/// b(n, s) from its defining Dirichlet series over odd q prime to M,
/// truncated at q <= qmax (for testing, needs Re s > 5/4).
pub fn b_series_brute(n: u64, s: Complex64, level: &LevelData, qmax: u64) -> Complex64 {
    let m = level.m as i64;
    let mut acc = Complex64::new(0.0, 0.0);
    for q in (1..=qmax).step_by(2) {
        if gcd_u64(q, level.m) != 1 {
            continue;
        }
        let pre = kronecker(-m, q as i64) * kronecker(m, q as i64);
        let eps = epsilon_d(q as i64).expect("odd");
        let mut g = Complex64::new(0.0, 0.0);
        for d in 1..=q {
            let k = kronecker(d as i64, q as i64);
            if k != 0 {
                g += e_frac(d as i128 * n as i128, q as i128) * k as f64;
            }
        }
        acc += eps * g * pre as f64 * (-2.0 * s * (q as f64).ln()).exp();
    }
    acc
}

/// Residue of b(n, s) at s = 3/4.
pub fn b_residue(n: u64, level: &LevelData) -> Result<f64> {
    let base = 1.0 / (level.zeta_at_level(1.0) * level.zeta_away(2.0)?);
    if n == 0 {
        return Ok(base / 4.0);
    }
    Ok(if perfect_sqrt(n as i128).is_some() { base / 2.0 } else { 0.0 })
}

/// Coefficient of the theta series in the residue at s = 3/4 of the weight
/// 1/2 Eisenstein series at infinity.
pub fn eisenstein_residue_const(level: &LevelData) -> Result<f64> {
    Ok(PI / (4.0 * level.zeta_at_level(1.0) * level.zeta_away(2.0)?) * level.floor_product())
}

/// Residue at s = 3/4 of the m^2-th Fourier coefficient, normalized by
/// y^{1/4} e^{-2 pi m^2 y}; m = 0 gives the constant term.
pub fn residue_coefficient(m: u64, level: &LevelData) -> Result<Complex64> {
    let pre = Complex64::from_polar(PI * SQRT_2, -PI / 4.0);
    Ok(pre * b_residue(m * m, level)? * c_closed(m, level))
}

// ---------------------------------------------------------------------------
// Sums over quadratic polynomials

/// a n^2 + b n + c with positive discriminant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadPoly {
    pub a: i64,
    pub b: i64,
    pub c: i64,
    pub delta: i64,
}

impl QuadPoly {
    pub fn new(a: i64, b: i64, c: i64) -> Result<QuadPoly> {
        if a <= 0 {
            return Err(Error::InvalidArgument(format!("leading coefficient {a} must be positive")));
        }
        let delta = b
            .checked_mul(b)
            .and_then(|bb| a.checked_mul(c).and_then(|ac| ac.checked_mul(4)).and_then(|ac4| bb.checked_sub(ac4)))
            .ok_or(Error::Overflow)?;
        if delta <= 0 {
            return Err(Error::InvalidArgument(format!("discriminant {delta} must be positive")));
        }
        Ok(QuadPoly { a, b, c, delta })
    }

    pub fn eval(&self, n: i64) -> i128 {
        let n = n as i128;
        self.a as i128 * n * n + self.b as i128 * n + self.c as i128
    }

    /// gcd(2a, b)
    pub fn d(&self) -> i64 {
        crate::arith::gcd(2 * self.a as i128, self.b as i128) as i64
    }

    pub fn a_prime(&self) -> i64 {
        2 * self.a / self.d()
    }

    pub fn b_prime(&self) -> i64 {
        self.b / self.d()
    }

    pub fn discriminant_is_square(&self) -> bool {
        perfect_sqrt(self.delta as i128).is_some()
    }
}

/// The direct sum S = sum_{n >= 1} lambda(a n^2 + b n + c) W((a n^2 + b n + c)/Y).
pub fn nonsplit_sum(src: &HeckeSource, q: &QuadPoly, y: f64, w: &SmoothWeight) -> Result<f64> {
    if w.kind != WeightKind::BumpOneTwo {
        return Err(Error::WindowViolation);
    }
    let vertex = -(q.b as f64) / (2.0 * q.a as f64);
    let mut acc = 0.0;
    let mut n = 1i64;
    loop {
        let v = q.eval(n);
        if (n as f64) > vertex && v as f64 > 2.0 * y {
            break;
        }
        let x = v as f64 / y;
        if x > 1.0 && x < 2.0 {
            acc += src.lambda_psi(v as i64)? * w.eval(x);
        }
        n += 1;
    }
    Ok(acc)
}

/// Terms of D_{psi,chi,t}(s, Delta) as (coefficient, log X_n) pairs, where
/// the n-th term is coefficient * X_n^{-s}.
fn d_terms(src: &HeckeSource, chi: &DirChar, t: u64, delta: i64, a: u64, n_max: u64) -> Result<Vec<(u64, Complex64, f64)>> {
    let nu = chi.parity() as i32;
    let four_a = 4 * a as i128;
    let mut out = Vec::new();
    for n in 0..=n_max {
        let tn2 = t as i128 * n as i128 * n as i128;
        let num = tn2 - delta as i128;
        if num == 0 || num % four_a != 0 {
            continue;
        }
        let cv = chi.eval(n as i64);
        if cv.norm_sqr() == 0.0 {
            continue;
        }
        let lam = src.lambda_psi((num / four_a) as i64)?;
        if lam == 0.0 {
            continue;
        }
        let x = (tn2 + delta as i128 + num.abs()) as f64;
        let weight = if n == 0 { 1.0 } else { 2.0 };
        let nnu = if nu == 1 { n as f64 } else { 1.0 };
        let phase = Complex64::from_polar(1.0, src.t_psi * ((2.0 * num.abs() as f64).ln() - x.ln()));
        let coef = cv * phase * (lam * weight * nnu * x.powf(-(nu as f64) / 2.0));
        out.push((n, coef, x.ln()));
    }
    Ok(out)
}

/// D_{psi,chi,t}(s, Delta) truncated at n <= n_max, with a tail estimate
/// extrapolated geometrically from the absolute sums of the last two dyadic
/// blocks.
pub fn d_series(
    src: &HeckeSource,
    chi: &DirChar,
    t: u64,
    s: Complex64,
    delta: i64,
    a: u64,
    n_max: u64,
) -> Result<SeriesValue> {
    if t == 0 || a == 0 || delta <= 0 {
        return Err(Error::InvalidArgument("t, a and Delta must be positive".into()));
    }
    let terms = d_terms(src, chi, t, delta, a, n_max)?;
    let mut value = Complex64::new(0.0, 0.0);
    let (mut last, mut prev) = (0.0f64, 0.0f64);
    for &(n, c, lx) in &terms {
        let term = c * (-s * lx).exp();
        value += term;
        if 2 * n > n_max {
            last += term.norm();
        } else if 4 * n > n_max {
            prev += term.norm();
        }
    }
    let floor = 2f64.powf(1.0 - 2.0 * s.re);
    let tail = if last == 0.0 {
        0.0
    } else {
        let r = if prev > 0.0 { (last / prev).max(floor) } else { floor };
        if r >= 1.0 || n_max < 8 {
            return Err(Error::TruncationInsufficient(format!("D-series blocks do not decay (ratio {r:.3})")));
        }
        last * r / (1.0 - r)
    };
    Ok(SeriesValue { value, tail, terms: terms.len() })
}

/// Options for the contour side of the reduction.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ContourConfig {
    pub step: f64,
    /// relative size of the Mellin transform at which the line is cut
    pub mellin_cut: f64,
    pub max_height: f64,
    /// constant in front of P Delta / Y^{1/2 - theta}
    pub envelope_const: f64,
}

impl Default for ContourConfig {
    fn default() -> Self {
        ContourConfig { step: 0.1, mellin_cut: 1e-14, max_height: 20_000.0, envelope_const: 1.0 }
    }
}

/// Which Dirichlet series the contour integral is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionForm {
    /// character average over chi mod a' with t = d^2
    CharacterAverage,
    /// trivial character with t = a^2 (needs a | b, a odd)
    TrivialCharacter,
}

/// Height where the Mellin transform of w on Re s = 1 has dropped below
/// cut * W~(1) for good.
fn contour_height(w: &SmoothWeight, cfg: &ContourConfig) -> Result<f64> {
    let scale = w.mellin_at_one().abs();
    let probe: Vec<f64> = (0..=(cfg.max_height / 10.0) as usize).map(|j| 10.0 * j as f64).collect();
    let vals = w.mellin_line(1.0, &probe);
    let mut last_big = None;
    for (j, v) in vals.iter().enumerate() {
        if v.norm() > cfg.mellin_cut * scale {
            last_big = Some(j);
        }
    }
    match last_big {
        Some(j) if j + 1 < probe.len() => Ok(probe[j + 1] + 20.0),
        None => Ok(20.0),
        _ => Err(Error::QuadratureNonconvergent(format!(
            "Mellin transform still above {:.0e} at height {}",
            cfg.mellin_cut, cfg.max_height
        ))),
    }
}

/// Contour side of the reduction: (1/4 pi i) int_{(1)} D(s) W~(s) (8aY)^s ds
/// by the trapezoid rule on the line, together with the exact smoothed sum
/// the integral represents (Mellin inversion term by term).
pub fn reduction_integral(
    src: &HeckeSource,
    q: &QuadPoly,
    y: f64,
    w: &SmoothWeight,
    form: ReductionForm,
    cfg: &ContourConfig,
) -> Result<(f64, Complex64, f64)> {
    if w.kind != WeightKind::BumpOneTwo {
        return Err(Error::WindowViolation);
    }
    let a = q.a as u64;
    let big = 8.0 * a as f64 * y;
    // terms with X_n up to 4 * 8aY: beyond 2 * 8aY the weight vanishes, the
    // margin exercises the quadrature on terms whose exact contribution is 0
    let mut combined: std::collections::BTreeMap<u64, (Complex64, f64)> = Default::default();
    let (chars, t): (Vec<(Complex64, DirChar)>, u64) = match form {
        ReductionForm::CharacterAverage => {
            let ap = q.a_prime() as u64;
            let d = q.d() as f64;
            let phi = euler_phi(ap) as f64;
            let cs = characters_mod(ap)?
                .into_iter()
                .map(|chi| {
                    let nu = chi.parity() as i32;
                    let pre = chi.eval(q.b_prime()).conj() * (2f64.powf(nu as f64 / 2.0) * d.powi(nu) / phi);
                    (pre, chi)
                })
                .collect();
            (cs, (q.d() * q.d()) as u64)
        }
        ReductionForm::TrivialCharacter => {
            if q.b % q.a != 0 || q.a % 2 == 0 {
                return Err(Error::HypothesisViolated("trivial-character form needs a | b and a odd".into()));
            }
            (vec![(c64(1.0), DirChar::trivial())], a * a)
        }
    };
    let xmax = 4.0 * big;
    let n_max = ((xmax / (2.0 * t as f64)).sqrt() + 2.0) as u64;
    for (pre, chi) in &chars {
        for (n, c, lx) in d_terms(src, chi, t, q.delta, a, n_max)? {
            if lx > xmax.ln() {
                continue;
            }
            let e = combined.entry(n).or_insert((Complex64::new(0.0, 0.0), lx));
            e.0 += pre * c;
        }
    }
    // exact value of the integral: (1/2) sum_n C_n W(X_n / 8aY)
    let smoothed: Complex64 = combined.values().map(|&(c, lx)| c * w.eval(lx.exp() / big)).sum::<Complex64>() * 0.5;

    let height = contour_height(w, cfg)?;
    let nodes = (height / cfg.step).ceil() as usize;
    let ys: Vec<f64> = (-(nodes as i64)..=nodes as i64).map(|j| j as f64 * cfg.step).collect();
    let mellin = w.mellin_line(1.0, &ys);
    let terms: Vec<(Complex64, f64)> = combined.values().copied().collect();
    // D(1 + i y_j) by rotation along the equispaced nodes
    let dvals: Vec<Complex64> = terms
        .par_chunks(64)
        .map(|chunk| {
            let mut acc = vec![Complex64::new(0.0, 0.0); ys.len()];
            for &(c, lx) in chunk {
                let amp = c * (-lx).exp();
                let step = Complex64::from_polar(1.0, -cfg.step * lx);
                let mut rot = Complex64::new(0.0, 0.0);
                for (j, &yj) in ys.iter().enumerate() {
                    if j % 128 == 0 {
                        rot = Complex64::from_polar(1.0, -yj * lx);
                    }
                    acc[j] += amp * rot;
                    rot *= step;
                }
            }
            acc
        })
        .reduce(
            || vec![Complex64::new(0.0, 0.0); ys.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let lb = big.ln();
    let mut integral = Complex64::new(0.0, 0.0);
    for (j, &yj) in ys.iter().enumerate() {
        let wgt = if j == 0 || j + 1 == ys.len() { 0.5 } else { 1.0 };
        integral += dvals[j] * mellin[j] * Complex64::from_polar(big, yj * lb) * wgt;
    }
    integral *= cfg.step / (4.0 * PI);
    Ok((height, integral, (integral - smoothed).norm()))
}

/// Direct non-split sum against the contour integral of the Dirichlet
/// series, with the deviation judged against envelope_const * P Delta /
/// Y^{1/2 - theta} times 3.
pub fn reduction_check(
    src: &HeckeSource,
    q: &QuadPoly,
    y: f64,
    w: &SmoothWeight,
    form: ReductionForm,
    cfg: &ContourConfig,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    if (q.delta as f64) * (q.delta as f64) > y {
        return Err(Error::WindowViolation);
    }
    let direct = nonsplit_sum(src, q, y, w)?;
    let (height, integral, quad_err) = reduction_integral(src, q, y, w, form, cfg)?;
    let envelope = cfg.envelope_const * w.p * q.delta as f64 / y.powf(0.5 - THETA);
    let dev = (direct - integral.re).abs();
    let name = match form {
        ReductionForm::CharacterAverage => "reduction_check",
        ReductionForm::TrivialCharacter => "reduction_check_trivial_character",
    };
    Ok(ExperimentReport::new(name, dev, 0.0, 3.0 * envelope, Tolerance::Absolute)
        .param("a", q.a)
        .param("b", q.b)
        .param("c", q.c)
        .param("Y", y)
        .param("P", w.p)
        .extra("direct", direct)
        .extra("integral_re", integral.re)
        .extra("integral_im", integral.im)
        .extra("quadrature_error", quad_err)
        .extra("envelope", envelope)
        .extra("height", height)
        .finish(start, quad_err < 1e-6 * (1.0 + direct.abs())))
}

// ---------------------------------------------------------------------------
// Symmetric square factorization

fn local_sym2_times_square_class(lam_p: f64, y: Complex64, ramified: bool) -> Complex64 {
    // sum_l lambda(p^{2l}) y^l in closed form
    if ramified {
        return c64(1.0) / (c64(1.0) - y * lam_p * lam_p);
    }
    (c64(1.0) - y * y) / ((c64(1.0) - y * (lam_p * lam_p - 2.0) + y * y) * (c64(1.0) - y))
}

fn local_sym2(lam_p: f64, y: Complex64, ramified: bool) -> Complex64 {
    if ramified {
        return c64(1.0) / (c64(1.0) - y * lam_p * lam_p);
    }
    c64(1.0) / ((c64(1.0) - y * (lam_p * lam_p - 2.0) + y * y) * (c64(1.0) - y))
}

/// Compare sum_{n <= N, 4a | t n^2} lambda(-t n^2 / 4a) conj(omega(n)) n^{-sigma}
/// (sigma = 2s - 1/2) with its Euler product: symmetric square factors away
/// from t'a1 and the H factors at p | t'a1.
pub fn symsq_factor_check(
    src: &HeckeSource,
    omega: &DirChar,
    t: u64,
    a: u64,
    s: Complex64,
    n_max: u64,
    p_max: u64,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    if omega.parity() != 0 {
        return Err(Error::InvalidArgument("omega must be even".into()));
    }
    let sigma = 2.0 * s - 0.5;
    if sigma.re <= 1.05 {
        return Err(Error::TruncationInsufficient(format!("Re(2s - 1/2) = {} is too close to 1", sigma.re)));
    }
    let four_a = 4 * a;
    // left side
    let spf = spf_table(n_max.max(p_max) as usize);
    let fac_of = |mut n: u64| {
        let mut v: Vec<(u64, u32)> = Vec::new();
        while n > 1 {
            let p = spf[n as usize] as u64;
            let mut e = 0;
            while n.is_multiple_of(p) {
                n /= p;
                e += 1;
            }
            v.push((p, e));
        }
        v
    };
    let merge = |a: &mut Vec<(u64, i64)>, p: u64, e: i64| match a.iter_mut().find(|x| x.0 == p) {
        Some(x) => x.1 += e,
        None => a.push((p, e)),
    };
    let t_fac = factorize(t);
    let a_fac = factorize(four_a);
    let sign = src.lambda_minus_one();
    let mut lhs = Complex64::new(0.0, 0.0);
    for n in 1..=n_max {
        if !(t as u128 * n as u128 * n as u128).is_multiple_of(four_a as u128) {
            continue;
        }
        let w = omega.eval(n as i64).conj();
        if w.norm_sqr() == 0.0 {
            continue;
        }
        let mut f: Vec<(u64, i64)> = Vec::new();
        for (p, e) in fac_of(n) {
            merge(&mut f, p, 2 * e as i64);
        }
        for &(p, e) in &t_fac {
            merge(&mut f, p, e as i64);
        }
        for &(p, e) in &a_fac {
            merge(&mut f, p, -(e as i64));
        }
        let mut lam = sign;
        for (p, e) in f {
            debug_assert!(e >= 0);
            if e > 0 {
                lam *= src.lambda_pp(p, e as u32)?;
            }
        }
        lhs += w * lam * (-sigma * (n as f64).ln()).exp();
    }
    // right side
    let d = gcd_u64(four_a, t);
    let ap = four_a / d;
    let tp = t / d;
    let (a1, a2) = square_class(ap);
    let ta1 = tp * a1;
    let pre = omega.eval((a1 * a2) as i64).conj() * sign * (-sigma * ((a1 * a2) as f64).ln()).exp();
    let mut rhs = pre;
    let mut literal = pre;
    for p in crate::arith::primes_up_to(p_max as usize) {
        let wp = omega.eval(p as i64).conj();
        let y = wp * (-sigma * (p as f64).ln()).exp();
        if ta1.is_multiple_of(p) {
            let rp = valuation(ta1, p);
            let mut h = Complex64::new(0.0, 0.0);
            let mut yl = c64(1.0);
            for l in 0..200u32 {
                let term = yl * src.lambda_pp(p, 2 * l + rp)?;
                h += term;
                if l > 0 && term.norm() < 1e-18 {
                    break;
                }
                yl *= y;
            }
            rhs *= h;
            literal *= h;
        } else if wp.norm_sqr() != 0.0 {
            let lp = src.lambda_prime(p)?;
            let ram = src.divides_level(p);
            rhs *= local_sym2_times_square_class(lp, y, ram);
            literal *= local_sym2(lp, y, ram);
        }
    }
    let rel_dev = |x: Complex64, y: Complex64| if y.norm() == 0.0 { x.norm() } else { (x - y).norm() / y.norm() };
    let rel = rel_dev(lhs, rhs);
    let rel_literal = rel_dev(lhs, literal);
    Ok(ExperimentReport::new("symsq_factor_check", rel, 0.0, 1e-6, Tolerance::Absolute)
        .param("t", t)
        .param("a", a)
        .param("omega_modulus", omega.modulus)
        .param("s_re", s.re)
        .param("s_im", s.im)
        .param("n_max", n_max)
        .param("p_max", p_max)
        .extra("lhs_re", lhs.re)
        .extra("lhs_im", lhs.im)
        .extra("rhs_re", rhs.re)
        .extra("rhs_im", rhs.im)
        .extra("deviation_without_square_class_factor", rel_literal)
        .finish(start, true))
}

// ---------------------------------------------------------------------------
// Grid verifications

/// Closed Gauss sums against brute force for k <= kmax (2-adic k >= 2) and
/// all squares n <= nmax together with n = 0. The deviation is measured
/// relative to max(1, |closed value|).
pub fn verify_gauss_grid(odd_primes: &[u64], nmax: u64, kmax: u32) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut ns: Vec<u64> = vec![0];
    ns.extend((1..).map(|m: u64| m * m).take_while(|&n| n <= nmax));
    let mut variants = vec![GaussVariant::G8, GaussVariant::Gneg8];
    variants.extend(odd_primes.iter().map(|&p| GaussVariant::Gp(p)));
    let mut worst = 0.0f64;
    let mut cells = 0usize;
    for v in variants {
        let k0 = if matches!(v, GaussVariant::Gp(_)) { 0 } else { 2 };
        for k in k0..=kmax {
            let brute = gauss_brute_many(&ns, v, k)?;
            for (&n, b) in ns.iter().zip(&brute) {
                let c = gauss_closed(n, v, k)?;
                // values reach phi(p^k) ~ 6e6, beyond absolute 1e-10 in f64
                worst = worst.max((c - b).norm() / c.norm().max(1.0));
                cells += 1;
            }
        }
    }
    Ok(ExperimentReport::new("gauss_closed_vs_brute", worst, 0.0, 1e-10, Tolerance::Absolute)
        .param("primes", odd_primes.to_vec())
        .param("nmax", nmax)
        .param("kmax", kmax)
        .extra("cells", cells as f64)
        .finish(start, true))
}

/// c(n, 3/4) series against closed forms over n in {0} and squares up to
/// nmax, plus the b residues, the residue constant and the theta structure
/// of the residue.
pub fn verify_eisenstein_grid(m: u64, nmax: u64, bound: u64, tol: f64) -> Result<ExperimentReport> {
    let start = Instant::now();
    let level = LevelData::new(m)?;
    let s = c64(0.75);
    let ms: Vec<u64> = (0..).take_while(|&k: &u64| k * k <= nmax).collect();
    let results: Vec<Result<(f64, bool)>> = ms
        .par_iter()
        .map(|&k| {
            let closed = c_closed(k, &level);
            let series = c_series(k * k, s, &level, bound, f64::INFINITY)?;
            let err = (series.value - closed).norm();
            Ok((err, err <= tol + series.tail))
        })
        .collect();
    let mut worst = 0.0f64;
    let mut ok = true;
    let mut zero_branches = 0usize;
    for (k, r) in ms.iter().zip(results) {
        let (err, good) = r?;
        if *k > 0 && c_closed(*k, &level).norm() == 0.0 {
            zero_branches += 1;
        }
        if *k > 0 {
            worst = worst.max(err);
        }
        ok &= good;
    }
    // residues of b at 3/4 by a one-sided difference quotient
    let eps = 1e-7;
    let mut b_err = 0.0f64;
    for n in [0u64, 1, 4, 9, 2, 3, 5] {
        let v = b_series(n, c64(0.75 + eps), &level)? * eps;
        b_err = b_err.max((v.re - b_residue(n, &level)?).abs());
    }
    ok &= b_err < 1e-5;
    // residue constant and theta structure
    let konst = eisenstein_residue_const(&level)?;
    let c0 = residue_coefficient(0, &level)?;
    ok &= (c0 - konst).norm() < 1e-12;
    for k in 1..=60u64 {
        let want = if (k * k) % level.t_m == 0 && perfect_sqrt(((k * k) / level.t_m) as i128).is_some() {
            2.0 * konst
        } else {
            0.0
        };
        ok &= (residue_coefficient(k, &level)? - want).norm() < 1e-12;
    }
    Ok(ExperimentReport::new("eisenstein_grid", worst, 0.0, tol, Tolerance::Absolute)
        .param("M", m)
        .param("nmax", nmax)
        .param("bound", bound)
        .extra("b_residue_error", b_err)
        .extra("residue_const", konst)
        .extra("forced_zero_cells", zero_branches as f64)
        .finish(start, ok))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hecke::{make_source, SourceSpec, SyntheticSpec};
    use crate::weight::smooth_weight;

    #[test]
    fn epsilon_values() {
        assert_eq!(epsilon_d(1).unwrap(), c64(1.0));
        assert_eq!(epsilon_d(3).unwrap(), I);
        assert!(matches!(epsilon_d(4), Err(Error::EvenInput(4))));
        for d in (-99i64..=99).step_by(2) {
            let e = epsilon_d(d).unwrap();
            assert_eq!(e * e, c64(kronecker(-4, d) as f64), "d={d}");
        }
    }

    #[test]
    fn gauss_sum_examples() {
        assert!((gauss_sum(1, &DirChar::trivial()) - 1.0).norm() < 1e-15);
        let chi4 = DirChar::kronecker_top(-4, 4);
        assert!((gauss_sum(1, &chi4) - I * 2.0).norm() < 1e-14);
        let chi3 = DirChar::kronecker_bottom(3);
        assert!((gauss_sum(4, &chi3) - I * 3f64.sqrt()).norm() < 1e-14);
        let chi8 = DirChar::kronecker_top(8, 8);
        assert!((gauss_sum(1, &chi8) - c64(2.0 * SQRT_2)).norm() < 1e-14);
        let chim8 = DirChar::kronecker_top(-8, 8);
        assert!((gauss_sum(1, &chim8) - I * 2.0 * SQRT_2).norm() < 1e-14);
    }

    #[test]
    fn gauss_closed_examples() {
        assert!((gauss_closed(1, GaussVariant::Gp(3), 1).unwrap() - I * 3f64.sqrt()).norm() < 1e-15);
        assert_eq!(gauss_closed(1, GaussVariant::G8, 5).unwrap(), c64(0.0));
        assert_eq!(gauss_closed(16, GaussVariant::Gneg8, 6).unwrap(), I * 32.0);
        assert!(matches!(gauss_closed(2, GaussVariant::G8, 3), Err(Error::BadDecomposition)));
    }

    #[test]
    fn gauss_closed_small_grid() {
        let rep = verify_gauss_grid(&[3, 7, 11], 400, 5).unwrap();
        assert!(rep.passed, "{}", rep.summary_line());
    }

    #[test]
    fn crt_c_term_matches_direct_sum() {
        for m in [4u64, 12, 28, 84] {
            let level = LevelData::new(m).unwrap();
            exponent_triples(&level, 30_000, |exps, mp| {
                for n in [0u64, 1, 2, 3, 4, 7, 9, 12, 36, 49, 100] {
                    let a = c_term(n, exps);
                    let b = c_term_brute(n, mp);
                    assert!((a - b).norm() < 1e-8 * mp as f64, "M'={mp} n={n}: {a} vs {b}");
                }
            });
        }
    }

    #[test]
    fn level_data() {
        let l = LevelData::new(1764).unwrap();
        assert_eq!(l.beta0, 2);
        assert_eq!(l.odd, vec![(3, 2), (7, 2)]);
        assert_eq!(l.t_m, 441);
        assert_eq!(LevelData::new(4).unwrap().t_m, 1);
        assert_eq!(LevelData::new(16).unwrap().t_m, 4);
        assert!(LevelData::new(20).is_err());
        assert!(LevelData::new(6).is_err());
        assert!((l.zeta_at_level(1.0) - 2.0 * 1.5 * 7.0 / 6.0).abs() < 1e-14);
        assert!((LevelData::new(4).unwrap().zeta_at_level(1.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn residue_constant_level_four() {
        let l = LevelData::new(4).unwrap();
        assert!((eisenstein_residue_const(&l).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-12);
        // raising beta_j by 2 divides by p_j
        let a = eisenstein_residue_const(&LevelData::new(12).unwrap()).unwrap();
        let b = eisenstein_residue_const(&LevelData::new(108).unwrap()).unwrap();
        assert!((a / b - 3.0).abs() < 1e-12);
        // M = 84 against M = 4 by the zeta corrections
        let c = eisenstein_residue_const(&LevelData::new(84).unwrap()).unwrap();
        let zc = (1.0 - 1.0 / 3.0) * (1.0 - 1.0 / 7.0) / ((1.0 - 1.0 / 9.0) * (1.0 - 1.0 / 49.0));
        assert!((c / eisenstein_residue_const(&l).unwrap() - zc / 21.0).abs() < 1e-12);
    }

    #[test]
    fn c_closed_examples() {
        let l = LevelData::new(4).unwrap();
        let c0 = c_closed(0, &l);
        assert!((c0 - Complex64::from_polar(1.0, PI / 4.0) / SQRT_2 / 2.0).norm() < 1e-15);
        let c1 = c_series(1, c64(0.75), &l, 1 << 20, 1e-8).unwrap();
        assert!((c1.value - c_closed(1, &l)).norm() < 1e-8);
        assert!((c_closed(1, &l) - Complex64::new(0.25, 0.25)).norm() < 1e-15);
        // forced zeros when p_j^2 | M but p_j does not divide m
        let l = LevelData::new(1764).unwrap();
        assert_eq!(c_closed(2, &l), c64(0.0));
        let v = c_series(4, c64(0.75), &l, 1 << 24, 1e-8).unwrap();
        assert!(v.value.norm() < 1e-12);
    }

    #[test]
    fn c_zero_needs_long_series() {
        let l = LevelData::new(4).unwrap();
        assert!(matches!(c_series(0, c64(0.75), &l, 1 << 24, 1e-8), Err(Error::BoundTooSmall(_))));
        let v = c_series(0, c64(0.75), &l, 1 << 24, 1.0).unwrap();
        let err = (v.value - c_closed(0, &l)).norm();
        assert!(err <= v.tail * (1.0 + 1e-9) && err > 0.5 * v.tail, "err={err} tail={}", v.tail);
    }

    #[test]
    fn divisor_identity() {
        for m in 1..=500u64 {
            let mut s = 0.0;
            for l in divisors(m) {
                for l1 in divisors(l) {
                    s += mobius(l1) as f64 / (l1 * (l / l1)) as f64;
                }
            }
            assert!((s - 1.0).abs() < 1e-12, "m={m}");
        }
    }

    #[test]
    fn b_closed_form_matches_series() {
        for m in [4u64, 12, 28] {
            let l = LevelData::new(m).unwrap();
            for n in [0u64, 1, 2, 3, 5, 12, 25, 50] {
                let s = Complex64::new(2.0, 0.3);
                let a = b_series(n, s, &l).unwrap();
                let b = b_series_brute(n, s, &l, 3001);
                assert!((a - b).norm() < 1e-6, "M={m} n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn b_residues() {
        let l = LevelData::new(4).unwrap();
        assert!((l.zeta_at_level(1.0) - 2.0).abs() < 1e-15);
        assert_eq!(b_residue(3, &l).unwrap(), 0.0);
        for n in [0u64, 1, 16, 7] {
            let eps = 1e-7;
            let v = b_series(n, c64(0.75 + eps), &l).unwrap() * eps;
            assert!((v.re - b_residue(n, &l).unwrap()).abs() < 1e-5, "n={n}");
        }
    }

    #[test]
    fn quad_poly() {
        let q = QuadPoly::new(1, 0, -21).unwrap();
        assert_eq!(q.delta, 84);
        assert_eq!((q.d(), q.a_prime(), q.b_prime()), (2, 1, 0));
        assert!(QuadPoly::new(1, 2, 1).is_err());
        assert!(QuadPoly::new(0, 2, 1).is_err());
        let q = QuadPoly::new(2, 1, -5).unwrap();
        assert_eq!((q.d(), q.a_prime(), q.b_prime()), (1, 4, 1));
    }

    fn source() -> HeckeSource {
        make_source(&SourceSpec::Synthetic(SyntheticSpec::new(5, 21))).unwrap()
    }

    #[test]
    fn nonsplit_empty_window() {
        let src = source();
        let w = smooth_weight(WeightKind::BumpOneTwo, 1.0).unwrap();
        let q = QuadPoly::new(1, 0, -21).unwrap();
        // n^2 - 21 skips the window (1.5, 3) entirely
        assert_eq!(nonsplit_sum(&src, &q, 1.5, &w).unwrap(), 0.0);
        let half = smooth_weight(WeightKind::BumpHalfTwo, 1.0).unwrap();
        assert!(matches!(nonsplit_sum(&src, &q, 1e4, &half), Err(Error::WindowViolation)));
    }

    #[test]
    fn d_series_truncations_agree() {
        let src = source();
        let chi = DirChar::trivial();
        let s = Complex64::new(1.0, 2.0);
        let a = d_series(&src, &chi, 4, s, 84, 1, 2000).unwrap();
        let b = d_series(&src, &chi, 4, s, 84, 1, 4000).unwrap();
        assert!((a.value - b.value).norm() <= a.tail);
        // no solutions of t n^2 = Delta mod 4a
        let z = d_series(&src, &chi, 1, s, 3, 1, 500).unwrap();
        assert_eq!(z.value, c64(0.0));
    }

    #[test]
    fn symsq_single_prime_closed_form() {
        let src = source();
        for p in [2u64, 5, 11, 3] {
            let lp = src.lambda_prime(p).unwrap();
            let y = Complex64::new(0.2, 0.1);
            let mut direct = Complex64::new(0.0, 0.0);
            let mut yl = c64(1.0);
            for l in 0..200u32 {
                direct += yl * src.lambda_pp(p, 2 * l).unwrap();
                yl *= y;
            }
            let closed = local_sym2_times_square_class(lp, y, src.divides_level(p));
            assert!((direct - closed).norm() < 1e-13, "p={p}");
        }
    }
}
