//! Hecke eigenvalues of the fixed form psi (from a table file or a seeded
//! synthetic model) and the multiplicative functions built from them.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::arith::{factorize, is_prime, mobius, primes_up_to, spf_table};
use crate::error::{Error, Result};
use crate::ideals::{elements_of_norm, ideal_count, kronecker_chi, lambda_k};
use crate::lattice::n_beta;
use crate::quadfield::FieldParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

/// Distribution of the angles theta_p with lambda(p) = 2 cos theta_p.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngleLaw {
    /// density (2/pi) sin^2 on [0, pi]
    SatoTate,
    /// uniform on [0, pi]
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub d: u64,
    pub t_psi: f64,
    pub eta: i32,
    pub parity: Parity,
    pub law: AngleLaw,
    pub max_prime: u64,
}

impl SyntheticSpec {
    pub fn new(seed: u64, d: u64) -> Self {
        SyntheticSpec {
            seed,
            d,
            t_psi: DEFAULT_T_PSI,
            eta: 1,
            parity: Parity::Even,
            law: AngleLaw::SatoTate,
            max_prime: 4_000_000_000,
        }
    }
}

/// Spectral parameter used when none is given (first even Maass form of
/// full level, a convenient realistic magnitude).
pub const DEFAULT_T_PSI: f64 = 9.533_695_261_353_557;

#[derive(Clone, Debug)]
pub enum SourceSpec {
    Table(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug)]
enum Backing {
    Table { primes: BTreeMap<u64, f64>, max: u64 },
    Synthetic { seed: u64, law: AngleLaw, max_prime: u64, ram: [(u64, f64); 2] },
}

/// Provider of lambda_psi(n), t_psi and the Atkin-Lehner sign.
#[derive(Clone, Debug)]
pub struct HeckeSource {
    pub level: u64,
    pub t_psi: f64,
    pub eta_d: i32,
    pub parity: Parity,
    backing: Backing,
}

pub fn make_source(spec: &SourceSpec) -> Result<HeckeSource> {
    match spec {
        SourceSpec::Table(path) => HeckeSource::read_table(path),
        SourceSpec::Synthetic(s) => HeckeSource::synthetic(s),
    }
}

fn prime_rng(seed: u64, p: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&p.to_le_bytes());
    key[16..24].copy_from_slice(b"heckeval");
    ChaCha8Rng::from_seed(key)
}

/// Inverse of F(t) = (t - sin(2t)/2)/pi on [0, pi].
fn sato_tate_quantile(u: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, PI);
    let mut t = PI * u;
    for _ in 0..60 {
        let f = (t - (2.0 * t).sin() / 2.0) / PI - u;
        if f > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let df = 2.0 * t.sin().powi(2) / PI;
        let mut next = if df > 1e-300 { t - f / df } else { 0.5 * (lo + hi) };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() < 1e-16 {
            return next;
        }
        t = next;
    }
    t
}

impl HeckeSource {
    fn synthetic(s: &SyntheticSpec) -> Result<HeckeSource> {
        let fac = factorize(s.d);
        if fac.len() != 2 || fac.iter().any(|&(_, e)| e != 1) {
            return Err(Error::InvalidArgument(format!("level {} is not a product of two primes", s.d)));
        }
        if s.eta != 1 && s.eta != -1 {
            return Err(Error::InvalidArgument("eta must be +1 or -1".into()));
        }
        // lambda(p) = -e_p / sqrt p with Atkin-Lehner signs e_p whose product is eta
        let (q1, q2) = (fac[0].0, fac[1].0);
        let e1: i32 = if prime_rng(s.seed, q1).gen::<bool>() { 1 } else { -1 };
        let e2 = s.eta * e1;
        let ram = [
            (q1, -(e1 as f64) / (q1 as f64).sqrt()),
            (q2, -(e2 as f64) / (q2 as f64).sqrt()),
        ];
        Ok(HeckeSource {
            level: s.d,
            t_psi: s.t_psi,
            eta_d: s.eta,
            parity: s.parity,
            backing: Backing::Synthetic { seed: s.seed, law: s.law, max_prime: s.max_prime, ram },
        })
    }

    /// Build a table-backed source from explicit prime data.
    pub fn from_primes(level: u64, t_psi: f64, eta_d: i32, parity: Parity, primes: BTreeMap<u64, f64>) -> HeckeSource {
        let max = primes.keys().next_back().copied().unwrap_or(0);
        HeckeSource { level, t_psi, eta_d, parity, backing: Backing::Table { primes, max } }
    }

    pub fn is_synthetic(&self) -> bool {
        matches!(self.backing, Backing::Synthetic { .. })
    }

    /// Largest prime for which lambda(p) is available.
    pub fn prime_limit(&self) -> u64 {
        match &self.backing {
            Backing::Table { max, .. } => *max,
            Backing::Synthetic { max_prime, .. } => *max_prime,
        }
    }

    /// lambda_psi(p) for a prime p.
    pub fn lambda_prime(&self, p: u64) -> Result<f64> {
        match &self.backing {
            Backing::Table { primes, .. } => primes.get(&p).copied().ok_or(Error::MissingPrime(p)),
            Backing::Synthetic { seed, law, max_prime, ram } => {
                if p > *max_prime {
                    return Err(Error::SeedModelRangeExceeded(p));
                }
                if let Some(&(_, v)) = ram.iter().find(|&&(q, _)| q == p) {
                    return Ok(v);
                }
                let u: f64 = prime_rng(*seed, p).gen();
                let theta = match law {
                    AngleLaw::SatoTate => sato_tate_quantile(u),
                    AngleLaw::Uniform => PI * u,
                };
                Ok(2.0 * theta.cos())
            }
        }
    }

    pub fn divides_level(&self, p: u64) -> bool {
        self.level.is_multiple_of(p)
    }

    /// lambda_psi(p^b) by the Hecke recursion (multiplicative powers at p | level).
    pub fn lambda_pp(&self, p: u64, b: u32) -> Result<f64> {
        if b == 0 {
            return Ok(1.0);
        }
        let lp = self.lambda_prime(p)?;
        Ok(prime_power_from(lp, b, self.divides_level(p)))
    }

    /// lambda_psi(n) for nonzero n, with lambda_psi(0) = 0 and
    /// lambda_psi(-1) = +1 or -1 according to the parity.
    pub fn lambda_psi(&self, n: i64) -> Result<f64> {
        if n == 0 {
            return Ok(0.0);
        }
        let mut v = if n < 0 { self.lambda_minus_one() } else { 1.0 };
        for (p, e) in factorize(n.unsigned_abs()) {
            v *= self.lambda_pp(p, e)?;
        }
        Ok(v)
    }

    pub fn lambda_minus_one(&self) -> f64 {
        match self.parity {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }

    /// (p, lambda(p)) for all primes p <= n.
    pub fn prime_values(&self, n: u64) -> Result<Vec<(u64, f64)>> {
        primes_up_to(n as usize)
            .into_iter()
            .map(|p| Ok((p, self.lambda_prime(p)?)))
            .collect()
    }

    /// Dense lambda_psi(n) for 0 <= n <= nmax via a smallest-prime-factor sieve.
    pub fn dense_table(&self, nmax: usize) -> Result<Vec<f64>> {
        let spf = spf_table(nmax);
        let mut out = vec![0.0f64; nmax + 1];
        if nmax >= 1 {
            out[1] = 1.0;
        }
        let mut lp = vec![0.0f64; nmax + 1];
        for n in 2..=nmax {
            if spf[n] as usize == n {
                lp[n] = self.lambda_prime(n as u64)?;
            }
        }
        for n in 2..=nmax {
            let p = spf[n] as usize;
            let mut m = n;
            let mut e = 0u32;
            while m % p == 0 {
                m /= p;
                e += 1;
            }
            out[n] = prime_power_from(lp[p], e, self.divides_level(p as u64)) * out[m];
        }
        Ok(out)
    }

    /// Serialize the table format: a header line then `p lambda(p)` lines.
    pub fn table_string(&self, pmax: u64) -> Result<String> {
        let mut s = String::new();
        let parity = match self.parity {
            Parity::Even => "even",
            Parity::Odd => "odd",
        };
        let eta = if self.eta_d > 0 { "+1" } else { "-1" };
        writeln!(s, "# D={} t_psi={:.17e} eta={} parity={}", self.level, self.t_psi, eta, parity).unwrap();
        for (p, v) in self.prime_values(pmax)? {
            writeln!(s, "{p} {v:.16e}").unwrap();
        }
        Ok(s)
    }

    pub fn write_table(&self, path: &Path, pmax: u64) -> Result<()> {
        std::fs::write(path, self.table_string(pmax)?)?;
        Ok(())
    }

    pub fn read_table(path: &Path) -> Result<HeckeSource> {
        let text = std::fs::read_to_string(path)?;
        HeckeSource::parse_table(&text)
    }

    pub fn parse_table(text: &str) -> Result<HeckeSource> {
        let mut header: Option<(u64, f64, i32, Parity)> = None;
        let mut primes = BTreeMap::new();
        let mut last = 0u64;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if header.is_none() && rest.contains("D=") {
                    header = Some(parse_header(rest)?);
                }
                continue;
            }
            let bad = || Error::MalformedTable(format!("line {}: {raw:?}", lineno + 1));
            let mut it = line.split_whitespace();
            let p: u64 = it.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
            let v: f64 = it.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
            if it.next().is_some() || !is_prime(p) || p <= last || !v.is_finite() {
                return Err(bad());
            }
            last = p;
            primes.insert(p, v);
        }
        let (level, t_psi, eta, parity) =
            header.ok_or_else(|| Error::MalformedTable("missing header line".into()))?;
        Ok(HeckeSource::from_primes(level, t_psi, eta, parity, primes))
    }
}

fn parse_header(rest: &str) -> Result<(u64, f64, i32, Parity)> {
    let bad = |what: &str| Error::MalformedTable(format!("header field {what}"));
    let mut d = None;
    let mut t = None;
    let mut eta = None;
    let mut parity = None;
    for tok in rest.split_whitespace() {
        let Some((k, v)) = tok.split_once('=') else { continue };
        match k {
            "D" => d = Some(v.parse::<u64>().map_err(|_| bad("D"))?),
            "t_psi" => t = Some(v.parse::<f64>().map_err(|_| bad("t_psi"))?),
            "eta" => {
                eta = Some(match v {
                    "+1" | "1" => 1,
                    "-1" => -1,
                    _ => return Err(bad("eta")),
                })
            }
            "parity" => {
                parity = Some(match v {
                    "even" => Parity::Even,
                    "odd" => Parity::Odd,
                    _ => return Err(bad("parity")),
                })
            }
            _ => {}
        }
    }
    Ok((
        d.ok_or_else(|| bad("D"))?,
        t.ok_or_else(|| bad("t_psi"))?,
        eta.unwrap_or(1),
        parity.unwrap_or(Parity::Even),
    ))
}

/// lambda(p^b) from lambda(p): Chebyshev recursion for good p,
/// lambda(p)^b at primes dividing the level.
pub fn prime_power_from(lp: f64, b: u32, ramified: bool) -> f64 {
    if ramified {
        return lp.powi(b as i32);
    }
    let (mut prev, mut cur) = (1.0f64, lp);
    if b == 0 {
        return 1.0;
    }
    for _ in 1..b {
        let next = lp * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// The local ratio sum_j lambda(p^{b+2j}) p^{-js} / sum_j lambda(p^{2j}) p^{-js}:
/// returns (closed form, truncation at J terms).
pub fn local_series(src: &HeckeSource, s: Complex64, p: u64, b: u32, j_terms: u32) -> Result<(Complex64, Complex64)> {
    let x = Complex64::new(p as f64, 0.0).powc(-s);
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = Complex64::new(0.0, 0.0);
    let mut xp = Complex64::new(1.0, 0.0);
    for j in 0..j_terms {
        num += xp * src.lambda_pp(p, b + 2 * j)?;
        den += xp * src.lambda_pp(p, 2 * j)?;
        xp *= x;
    }
    if den.norm() < 1e-12 {
        return Err(Error::DivergentDenominator);
    }
    let truncated = num / den;
    let closed = if src.divides_level(p) {
        Complex64::new(src.lambda_pp(p, b)?, 0.0)
    } else {
        let lb = src.lambda_pp(p, b)?;
        // the recurrence continues to lambda(p^-1) = 0, lambda(p^-2) = -1
        let lb2 = match b {
            0 => -1.0,
            1 => 0.0,
            _ => src.lambda_pp(p, b - 2)?,
        };
        (lb - x * lb2) / (1.0 + x)
    };
    Ok((closed, truncated))
}

/// vartheta(p^b) = (lambda(p^b) - chi0(p) lambda(p^{b-2})/p) / (1 + chi0(p)/p).
pub fn vartheta_pp(src: &HeckeSource, p: u64, b: u32) -> Result<f64> {
    if b == 0 {
        return Ok(1.0);
    }
    let chi0 = if src.divides_level(p) { 0.0 } else { 1.0 };
    let lb = src.lambda_pp(p, b)?;
    let lb2 = if b >= 2 { src.lambda_pp(p, b - 2)? } else { 0.0 };
    let pf = p as f64;
    Ok((lb - chi0 * lb2 / pf) / (1.0 + chi0 / pf))
}

pub fn vartheta(src: &HeckeSource, n: u64) -> Result<f64> {
    let mut v = 1.0;
    for (p, e) in factorize(n) {
        v *= vartheta_pp(src, p, e)?;
    }
    Ok(v)
}

/// h(n) = sum over ideals of norm n of vartheta(|n_beta|)/sqrt|n_beta|.
pub fn h_fn(src: &HeckeSource, f: &FieldParams, n: u64) -> Result<f64> {
    let mut total = 0.0;
    for rep in elements_of_norm(f, n)? {
        let (_, nb) = n_beta(f, rep.gen)?;
        total += vartheta(src, nb)? / (nb as f64).sqrt();
    }
    Ok(total)
}

/// The multiplicative function with g(p) = -2h(p), g(p^2) = 3chi(p) + h(p^2),
/// g(p^3) = -2chi(p)h(p), g(p^4) = chi(p)^2 and g(p^j) = 0 for j >= 5.
pub fn g_pp(src: &HeckeSource, f: &FieldParams, p: u64, j: u32) -> Result<f64> {
    let chi = kronecker_chi(f, p as i64) as f64;
    Ok(match j {
        0 => 1.0,
        1 => -2.0 * h_fn(src, f, p)?,
        2 => 3.0 * chi + h_fn(src, f, p * p)?,
        3 => -2.0 * chi * h_fn(src, f, p)?,
        4 => chi * chi,
        _ => 0.0,
    })
}

pub fn g_fn(src: &HeckeSource, f: &FieldParams, n: u64) -> Result<f64> {
    let mut v = 1.0;
    for (p, e) in factorize(n) {
        v *= g_pp(src, f, p, e)?;
    }
    Ok(v)
}

/// mu_2k(n) via the closed formula for n = r^2 s with s squarefree.
pub fn mu_2k(f: &FieldParams, k: i64, n: u64) -> Result<f64> {
    let mut r = 1u64;
    let mut s = 1u64;
    for (p, e) in factorize(n) {
        match e {
            1 => s *= p,
            2 => r *= p,
            _ => return Ok(0.0),
        }
    }
    let chi_r = kronecker_chi(f, r as i64) as f64;
    if chi_r == 0.0 {
        return Ok(0.0);
    }
    let mu_s = mobius(s) as f64;
    Ok(chi_r * mu_s * lambda_k(f, 2 * k, s)?)
}

/// mu_2k on prime powers as defining data: -lambda_2k(p), chi(p), then zero.
pub fn mu_2k_pp(f: &FieldParams, k: i64, p: u64, j: u32) -> Result<f64> {
    Ok(match j {
        0 => 1.0,
        1 => -lambda_k(f, 2 * k, p)?,
        2 => kronecker_chi(f, p as i64) as f64,
        _ => 0.0,
    })
}

/// (lambda_psi(p^2) - 1)(lambda_4k(p) + 1 - chi(p)) for p not dividing D.
pub fn satake_square(src: &HeckeSource, f: &FieldParams, k: i64, p: u64) -> Result<f64> {
    if (f.d as u64).is_multiple_of(p) {
        return Err(Error::InvalidArgument(format!("{p} divides D")));
    }
    let chi = kronecker_chi(f, p as i64) as f64;
    Ok((src.lambda_pp(p, 2)? - 1.0) * (lambda_k(f, 4 * k, p)? + 1.0 - chi))
}

/// r_D(p): number of ideals of norm p.
pub fn r_d(f: &FieldParams, n: u64) -> i64 {
    ideal_count(f, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn src() -> HeckeSource {
        make_source(&SourceSpec::Synthetic(SyntheticSpec::new(7, 21))).unwrap()
    }

    #[test]
    fn basic_values() {
        let s = src();
        assert_eq!(s.lambda_psi(1).unwrap(), 1.0);
        assert_eq!(s.lambda_psi(0).unwrap(), 0.0);
        let l6 = s.lambda_psi(6).unwrap();
        assert!((l6 - s.lambda_psi(2).unwrap() * s.lambda_psi(3).unwrap()).abs() < 1e-15);
        assert_eq!(s.lambda_psi(-10).unwrap(), s.lambda_psi(10).unwrap());
        for p in [3u64, 7] {
            let v = s.lambda_prime(p).unwrap();
            assert!((v.abs() - 1.0 / (p as f64).sqrt()).abs() < 1e-15);
        }
        // eta = +1 forces both Atkin-Lehner signs to agree
        assert!(s.lambda_prime(3).unwrap() * s.lambda_prime(7).unwrap() > 0.0);
    }

    #[test]
    fn recursion_with_vanishing_lambda2() {
        assert_eq!(prime_power_from(0.0, 2, false), -1.0);
        assert_eq!(prime_power_from(0.0, 3, false), 0.0);
    }

    #[test]
    fn sato_tate_quantile_inverts_cdf() {
        for i in 1..100 {
            let u = i as f64 / 100.0;
            let t = sato_tate_quantile(u);
            assert!(((t - (2.0 * t).sin() / 2.0) / PI - u).abs() < 1e-13);
        }
    }

    #[test]
    fn sato_tate_moments() {
        let s = src();
        let ps = s.prime_values(200_000).unwrap();
        let good: Vec<f64> = ps.iter().filter(|(p, _)| 21 % p != 0).map(|&(_, v)| v).collect();
        let n = good.len() as f64;
        let m2 = good.iter().map(|v| v * v).sum::<f64>() / n;
        let m4 = good.iter().map(|v| v.powi(4)).sum::<f64>() / n;
        assert!((m2 - 1.0).abs() < 0.02, "{m2}");
        assert!((m4 - 2.0).abs() < 0.05, "{m4}");
        assert!(good.iter().all(|v| v.abs() <= 2.0));
    }

    #[test]
    fn table_round_trip_bit_exact() {
        let s = src();
        let text = s.table_string(10_000).unwrap();
        let back = HeckeSource::parse_table(&text).unwrap();
        assert_eq!(back.level, 21);
        assert_eq!(back.eta_d, 1);
        assert_eq!(back.t_psi.to_bits(), s.t_psi.to_bits());
        for n in 1..=10_000i64 {
            assert_eq!(back.lambda_psi(n).unwrap().to_bits(), s.lambda_psi(n).unwrap().to_bits());
        }
        assert_eq!(back.lambda_prime(10_007), Err(Error::MissingPrime(10_007)));
    }

    #[test]
    fn malformed_tables() {
        assert!(matches!(HeckeSource::parse_table("2 0.5\n"), Err(Error::MalformedTable(_))));
        let t = "# D=21 t_psi=1.0 eta=+1 parity=even\n2 0.5\n4 0.1\n";
        assert!(matches!(HeckeSource::parse_table(t), Err(Error::MalformedTable(_))));
        let t = "# D=21 t_psi=1.0 eta=+1 parity=even\n\n# comment\n3 0.5\n2 0.1\n";
        assert!(matches!(HeckeSource::parse_table(t), Err(Error::MalformedTable(_))));
    }

    #[test]
    fn dense_table_agrees() {
        let s = src();
        let t = s.dense_table(5000).unwrap();
        for (n, v) in t.iter().enumerate().skip(1) {
            assert!((v - s.lambda_psi(n as i64).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn vartheta_special_cases() {
        let s = src();
        assert_eq!(vartheta(&s, 1).unwrap(), 1.0);
        let l5 = s.lambda_prime(5).unwrap();
        assert!((vartheta(&s, 5).unwrap() - l5 * 5.0 / 6.0).abs() < 1e-15);
        assert!((vartheta(&s, 9).unwrap() - s.lambda_pp(3, 2).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn mu_examples() {
        let f = crate::quadfield::make_field(21).unwrap();
        assert_eq!(mu_2k(&f, 3, 8).unwrap(), 0.0);
        let v = mu_2k(&f, 3, 12).unwrap();
        let want = -(kronecker_chi(&f, 2) as f64) * lambda_k(&f, 6, 3).unwrap();
        assert!((v - want).abs() < 1e-14);
    }

    #[test]
    fn g_fourth_power() {
        let f = crate::quadfield::make_field(21).unwrap();
        let s = src();
        for p in [2u64, 3, 5, 11] {
            let chi = kronecker_chi(&f, p as i64) as f64;
            assert_eq!(g_pp(&s, &f, p, 4).unwrap(), chi * chi);
            assert_eq!(g_pp(&s, &f, p, 5).unwrap(), 0.0);
        }
    }
}
