//! Dirichlet characters as explicit value tables.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::arith::{factorize, gcd_u64, kronecker};
use crate::error::{Error, Result};

/// A Dirichlet character mod `modulus`, stored by its values on 0..modulus.
#[derive(Clone, Debug, PartialEq)]
pub struct DirChar {
    pub modulus: u64,
    pub values: Vec<Complex64>,
}

impl DirChar {
    /// The trivial character mod 1 (value 1 everywhere, including 0).
    pub fn trivial() -> DirChar {
        DirChar { modulus: 1, values: vec![Complex64::new(1.0, 0.0)] }
    }

    /// The principal character mod r.
    pub fn principal(r: u64) -> DirChar {
        DirChar::from_fn(r, |a| if gcd_u64(a, r) == 1 { 1.0 } else { 0.0 })
    }

    /// n -> (d/n) restricted to a period r; d must make this periodic mod r.
    pub fn kronecker_top(d: i64, r: u64) -> DirChar {
        DirChar::from_fn(r, |a| kronecker(d, a as i64) as f64)
    }

    /// n -> (n/d) for odd positive d, a character mod d.
    pub fn kronecker_bottom(d: u64) -> DirChar {
        DirChar::from_fn(d, |a| kronecker(a as i64, d as i64) as f64)
    }

    pub fn from_fn(r: u64, f: impl Fn(u64) -> f64) -> DirChar {
        DirChar {
            modulus: r,
            values: (0..r).map(|a| Complex64::new(f(a), 0.0)).collect(),
        }
    }

    pub fn eval(&self, n: i64) -> Complex64 {
        self.values[n.rem_euclid(self.modulus as i64) as usize]
    }

    /// Pointwise product of characters to coprime or equal moduli, as a
    /// character mod the lcm.
    pub fn mul(&self, other: &DirChar) -> DirChar {
        let g = gcd_u64(self.modulus, other.modulus);
        let r = self.modulus / g * other.modulus;
        DirChar {
            modulus: r,
            values: (0..r as i64).map(|a| self.eval(a) * other.eval(a)).collect(),
        }
    }

    pub fn conj(&self) -> DirChar {
        DirChar { modulus: self.modulus, values: self.values.iter().map(|v| v.conj()).collect() }
    }

    /// nu in {0, 1} with chi(-1) = (-1)^nu.
    pub fn parity(&self) -> u8 {
        if self.eval(-1).re < 0.0 {
            1
        } else {
            0
        }
    }

    pub fn is_principal(&self) -> bool {
        self.values.iter().all(|v| v.norm() < 1e-12 || (v - 1.0).norm() < 1e-12)
    }
}

fn pow_mod_u(b: u64, e: u64, m: u64) -> u64 {
    crate::arith::pow_mod(b, e, m)
}

fn order_mod(g: u64, m: u64) -> u64 {
    let mut x = g % m;
    let mut k = 1;
    while x != 1 {
        x = x * g % m;
        k += 1;
    }
    k
}

/// Cyclic generators of (Z/q)^* for a prime power q, with their orders.
fn local_generators(p: u64, e: u32) -> Vec<(u64, u64)> {
    let q = p.pow(e);
    if p == 2 {
        return match e {
            1 => vec![],
            2 => vec![(3, 2)],
            _ => vec![(q - 1, 2), (5, q / 4)],
        };
    }
    let phi_p = p - 1;
    let mut g = 2;
    while order_mod(g, p) != phi_p {
        g += 1;
    }
    if e >= 2 && pow_mod_u(g, phi_p, p * p) == 1 {
        g += p;
    }
    vec![(g, q / p * (p - 1))]
}

/// All phi(r) Dirichlet characters mod r, principal first.
pub fn characters_mod(r: u64) -> Result<Vec<DirChar>> {
    if r == 0 {
        return Err(Error::InvalidArgument("modulus must be positive".into()));
    }
    if r == 1 {
        return Ok(vec![DirChar::trivial()]);
    }
    // discrete logs of every unit with respect to all local generators
    let mut gens: Vec<(u64, u64, u64)> = Vec::new(); // (q, generator, order)
    for (p, e) in factorize(r) {
        let q = p.pow(e);
        for (g, ord) in local_generators(p, e) {
            gens.push((q, g, ord));
        }
    }
    // log tables per local factor
    let mut logs: Vec<Vec<Option<Vec<u64>>>> = Vec::new();
    let mut factors: Vec<(u64, Vec<usize>)> = Vec::new(); // q and indices into gens
    for (i, &(q, _, _)) in gens.iter().enumerate() {
        match factors.iter_mut().find(|(qq, _)| *qq == q) {
            Some(f) => f.1.push(i),
            None => factors.push((q, vec![i])),
        }
    }
    for (q, idx) in &factors {
        let mut table: Vec<Option<Vec<u64>>> = vec![None; *q as usize];
        // enumerate products of generator powers
        let orders: Vec<u64> = idx.iter().map(|&i| gens[i].2).collect();
        let mut exps = vec![0u64; idx.len()];
        loop {
            let mut v = 1u64;
            for (j, &i) in idx.iter().enumerate() {
                v = v * pow_mod_u(gens[i].1, exps[j], *q) % q;
            }
            table[v as usize] = Some(exps.clone());
            let mut j = 0;
            while j < exps.len() {
                exps[j] += 1;
                if exps[j] < orders[j] {
                    break;
                }
                exps[j] = 0;
                j += 1;
            }
            if j == exps.len() {
                break;
            }
        }
        logs.push(table);
    }
    if r == 2 {
        return Ok(vec![DirChar::principal(2)]);
    }
    let orders: Vec<u64> = gens.iter().map(|g| g.2).collect();
    let mut out = Vec::new();
    let mut js = vec![0u64; orders.len()];
    loop {
        let mut values = vec![Complex64::new(0.0, 0.0); r as usize];
        for a in 0..r {
            if gcd_u64(a, r) != 1 {
                continue;
            }
            let mut phase = 0.0;
            let mut gi = 0;
            for (fi, (q, idx)) in factors.iter().enumerate() {
                let ex = logs[fi][(a % q) as usize].as_ref().expect("unit has a log");
                for (j, _) in idx.iter().enumerate() {
                    phase += js[gi] as f64 * ex[j] as f64 / orders[gi] as f64;
                    gi += 1;
                }
            }
            values[a as usize] = Complex64::from_polar(1.0, 2.0 * PI * phase);
        }
        out.push(DirChar { modulus: r, values });
        let mut j = 0;
        while j < js.len() {
            js[j] += 1;
            if js[j] < orders[j] {
                break;
            }
            js[j] = 0;
            j += 1;
        }
        if j == js.len() {
            break;
        }
    }
    Ok(out)
}
