//! Analytic layer: complex log-Gamma, Hurwitz zeta and Dirichlet L-values,
//! gamma factors, the smoothed approximate functional equation for the
//! central values L(1/2, psi x phi_2k), the auxiliary L-values at s = 1 and
//! the constants entering the first moment and the variance.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

use crate::arith::{factorize, primes_up_to, KahanSum};
use crate::chars::DirChar;
use crate::error::{Error, Result};
use crate::hecke::{h_fn, HeckeSource, Parity};
use crate::ideals::{kronecker_chi, IdealTable};
use crate::quadfield::FieldParams;

const C0: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const C1: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// B_2, B_4, ..., B_30.
const BERNOULLI: [f64; 15] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
    854513.0 / 138.0,
    -236364091.0 / 2730.0,
    8553103.0 / 6.0,
    -23749461029.0 / 870.0,
    8615841276005.0 / 14322.0,
];

fn is_nonpositive_integer(z: Complex64) -> bool {
    z.im == 0.0 && z.re <= 0.0 && z.re == z.re.round()
}

/// log Gamma(z), the analytic continuation from the positive axis (equal
/// to the principal log of Gamma off the negative real axis, up to 2 pi i
/// multiples that keep it continuous).
pub fn log_gamma(z: Complex64) -> Result<Complex64> {
    if !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::InvalidArgument(format!("log_gamma({z})")));
    }
    if is_nonpositive_integer(z) {
        return Err(Error::PoleInput(format!("{z}")));
    }
    let mut shift = C0;
    let mut w = z;
    if !(w.re >= 0.0 && w.norm() >= 20.0) {
        while w.re < 10.0 {
            shift += w.ln();
            w += 1.0;
        }
    }
    Ok(stirling(w) - shift)
}

fn stirling(z: Complex64) -> Complex64 {
    let mut s = (z - 0.5) * z.ln() - z + 0.5 * (2.0 * PI).ln();
    let zinv = z.inv();
    let z2 = zinv * zinv;
    let mut zp = zinv;
    for (j, b) in BERNOULLI.iter().enumerate() {
        let m = 2.0 * (j as f64 + 1.0);
        let term = zp * (b / (m * (m - 1.0)));
        s += term;
        if term.norm() < 1e-17 * s.norm().max(1.0) {
            break;
        }
        zp *= z2;
    }
    s
}

pub fn gamma(z: Complex64) -> Result<Complex64> {
    Ok(log_gamma(z)?.exp())
}

/// Digamma on the positive reals.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    let mut s = x.ln() - 0.5 / x;
    let mut xp = x2;
    for (j, b) in BERNOULLI.iter().take(8).enumerate() {
        let m = 2.0 * (j as f64 + 1.0);
        s -= b / m * xp;
        xp *= x2;
    }
    s + acc
}

/// Hurwitz zeta(s, a) for a > 0 and s != 1, by Euler-Maclaurin.
pub fn hurwitz_zeta(s: Complex64, a: f64) -> Result<Complex64> {
    if a <= 0.0 {
        return Err(Error::InvalidArgument(format!("Hurwitz shift {a} must be positive")));
    }
    if (s - 1.0).norm() < 1e-14 {
        return Err(Error::PoleInput("s=1".into()));
    }
    let n = (s.norm() + 20.0).ceil() as usize;
    let mut sum = C0;
    for k in 0..n {
        sum += (-s * (k as f64 + a).ln()).exp();
    }
    let x = n as f64 + a;
    let lx = x.ln();
    let xs = (-s * lx).exp();
    sum += xs * x / (s - 1.0) + xs * 0.5;
    let mut poch = s;
    let mut xp = xs / x;
    let mut fact = 2.0;
    for (j, b) in BERNOULLI.iter().enumerate() {
        let jj = j as f64 + 1.0;
        let term = poch * xp * (b / fact);
        sum += term;
        if term.norm() < 1e-18 * sum.norm().max(1e-300) {
            break;
        }
        poch *= (s + 2.0 * jj - 1.0) * (s + 2.0 * jj);
        xp /= x * x;
        fact *= (2.0 * jj + 1.0) * (2.0 * jj + 2.0);
    }
    Ok(sum)
}

pub fn zeta(s: Complex64) -> Result<Complex64> {
    hurwitz_zeta(s, 1.0)
}

/// L(s, chi) through Hurwitz zeta values; at s = 1 via digamma.
pub fn dirichlet_l(s: Complex64, chi: &DirChar) -> Result<Complex64> {
    let r = chi.modulus;
    if (s - 1.0).norm() < 1e-14 {
        if chi.is_principal() {
            return Err(Error::PoleInput("L(1, principal character)".into()));
        }
        let mut acc = C0;
        for a in 1..r {
            let v = chi.eval(a as i64);
            if v.norm() > 0.0 {
                acc -= v * digamma(a as f64 / r as f64);
            }
        }
        return Ok(acc / r as f64);
    }
    let mut acc = C0;
    for a in 1..=r {
        let v = chi.eval(a as i64);
        if v.norm() > 0.0 {
            acc += v * hurwitz_zeta(s, a as f64 / r as f64)?;
        }
    }
    Ok(acc * (-s * (r as f64).ln()).exp())
}

/// The field character as a Dirichlet character mod D.
pub fn field_character(f: &FieldParams) -> DirChar {
    DirChar::kronecker_top(f.d, f.d as u64)
}

/// Spectral parameter of phi_k: pi k / log eps.
pub fn t_k(f: &FieldParams, k: f64) -> f64 {
    PI * k / f.log_eps
}

/// log of pi^{-2s} prod Gamma((s +- i t_psi +- i t)/2).
pub fn log_gamma_factor(s: Complex64, t_psi: f64, t: f64) -> Result<Complex64> {
    let mut acc = -2.0 * s * PI.ln();
    for a in [t_psi, -t_psi] {
        for b in [t, -t] {
            acc += log_gamma((s + Complex64::new(0.0, a + b)) * 0.5)?;
        }
    }
    Ok(acc)
}

pub fn gamma_factor(s: Complex64, t_psi: f64, t: f64) -> Result<Complex64> {
    Ok(log_gamma_factor(s, t_psi, t)?.exp())
}

/// |G((1/2+i t_psi+i t)/2)|^2 |G((1/2-i t_psi+i t)/2)|^2 / |G((1+i t)/2)|^4 and
/// its leading Stirling asymptotic 2/sqrt(t^2 - t_psi^2) ~ 2/t.
pub fn gamma_ratio_stirling(t_psi: f64, t: f64) -> Result<(f64, f64)> {
    let lg = |re: f64, im: f64| log_gamma(Complex64::new(re, im)).map(|v| v.re);
    let num = 2.0 * lg(0.25, 0.5 * (t_psi + t))? + 2.0 * lg(0.25, 0.5 * (t - t_psi))?;
    let den = 4.0 * lg(0.5, 0.5 * t)?;
    Ok(((num - den).exp(), 2.0 / t))
}

/// Quadrature parameters for the smoothed approximate functional equation
/// W(u) = (1/2 pi i) int e^{w (log Q - u)} L(1+2w, chi_D) g(1/2+w)/g(1/2) e^{A w^2} dw/w.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AfeConfig {
    /// real part of the contour used for u beyond the transition point
    pub contour_re: f64,
    /// real part of the shifted contour (past the pole at 0) used below it
    pub left_re: f64,
    /// truncation height of the contour; 0 picks it from the regulator
    pub im_cutoff: f64,
    pub quad_step: f64,
    /// central-value series may run to mult * k^2 * D^{3/2}
    pub series_cutoff_multiplier: f64,
    /// A in the e^{A w^2} regulator
    pub regulator: f64,
    /// terms where |W| drops below this are discarded
    pub tail_tol: f64,
    /// step of the tabulation grid in u = log n
    pub grid_step: f64,
    /// extra factor applied to every series cutoff
    pub cutoff_scale: f64,
    /// report negative central values even for synthetic sources
    pub enforce_positivity: bool,
}

impl Default for AfeConfig {
    fn default() -> Self {
        AfeConfig {
            contour_re: 1.0,
            left_re: -0.25,
            im_cutoff: 0.0,
            quad_step: 0.05,
            series_cutoff_multiplier: 40.0,
            regulator: 0.05,
            tail_tol: 1e-10,
            grid_step: 0.005,
            cutoff_scale: 1.0,
            enforce_positivity: false,
        }
    }
}

impl AfeConfig {
    /// The unit regulator e^{w^2}; its series are about 10^3 times longer
    /// than the default's, so it is only practical for the weight alone.
    pub fn paper() -> Self {
        AfeConfig { regulator: 1.0, series_cutoff_multiplier: 1e5, ..AfeConfig::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.contour_re.is_nan() || self.contour_re <= 0.0 || self.left_re.is_nan() || self.left_re >= 0.0 {
            return Err(Error::InvalidArgument("contours must straddle 0".into()));
        }
        if !(self.regulator > 0.0 && self.quad_step > 0.0 && self.grid_step > 0.0) {
            return Err(Error::InvalidArgument("regulator and steps must be positive".into()));
        }
        if self.cutoff_scale.is_nan() || self.cutoff_scale < 1.0 {
            return Err(Error::InvalidArgument("cutoff_scale must be at least 1".into()));
        }
        Ok(())
    }

    fn height(&self, c: f64) -> f64 {
        if self.im_cutoff > 0.0 {
            self.im_cutoff
        } else {
            ((self.regulator * c * c + 40.0) / self.regulator).sqrt()
        }
    }

    /// Distance in u past the transition beyond which W is below tail_tol.
    fn decay_width(&self) -> f64 {
        2.0 * self.regulator.sqrt() * (2.0 * (1.0 / self.tail_tol).ln()).sqrt() + 1.5
    }

    /// Trapezoid nodes on c + i y, y >= 0, with weights h/pi (halved at y=0).
    fn nodes(&self, c: f64) -> Result<(Vec<Complex64>, Vec<f64>)> {
        let ymax = self.height(c);
        let n = (ymax / self.quad_step).ceil() as usize;
        if n > 1_000_000 {
            return Err(Error::QuadratureNonconvergent(format!("{n} nodes requested")));
        }
        let h = self.quad_step;
        let w = (0..=n).map(|j| Complex64::new(c, j as f64 * h)).collect();
        let wt = (0..=n).map(|j| if j == 0 { 0.5 * h / PI } else { h / PI }).collect();
        Ok((w, wt))
    }
}

/// W(u) = residue + Re sum_j coef_j e^{-w_j u} on two contours.
#[derive(Clone, Debug)]
pub struct WeightFn {
    left: Vec<(Complex64, Complex64)>,
    right: Vec<(Complex64, Complex64)>,
    residue: f64,
    pub u_split: f64,
}

fn sum_nodes(nodes: &[(Complex64, Complex64)], u: f64) -> f64 {
    let mut acc = KahanSum::new();
    for &(w, c) in nodes {
        acc.add((c * (-w * u).exp()).re);
    }
    acc.value()
}

/// Re sum_j c_j e^{-w_j (u0 + i h)} for i = 0..n, by the rotation recurrence.
fn tabulate_nodes(nodes: &[(Complex64, Complex64)], u0: f64, h: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for &(w, c) in nodes {
        let mut p = c * (-w * u0).exp();
        let m = (-w * h).exp();
        for o in out.iter_mut() {
            *o += p.re;
            p *= m;
        }
    }
    out
}

impl WeightFn {
    pub fn eval(&self, u: f64) -> f64 {
        if u < self.u_split {
            self.residue + sum_nodes(&self.left, u)
        } else {
            sum_nodes(&self.right, u)
        }
    }

    /// Values on the grid u_i = i h, i < n.
    pub fn tabulate(&self, h: f64, n: usize) -> Vec<f64> {
        let i_split = ((self.u_split / h).ceil() as usize).min(n);
        let mut out = tabulate_nodes(&self.left, 0.0, h, i_split);
        for v in out.iter_mut() {
            *v += self.residue;
        }
        out.extend(tabulate_nodes(&self.right, i_split as f64 * h, h, n - i_split));
        out
    }
}

/// Field-dependent part of the central-value weight, shared by all k.
#[derive(Clone, Debug)]
pub struct AfeKernel {
    pub cfg: AfeConfig,
    pub log_q: f64,
    pub l1_chi: f64,
    left: Vec<(Complex64, Complex64)>,
    right: Vec<(Complex64, Complex64)>,
}

impl AfeKernel {
    pub fn new(f: &FieldParams, cfg: &AfeConfig) -> Result<AfeKernel> {
        cfg.validate()?;
        let chi = field_character(f);
        let log_q = 1.5 * (f.d as f64).ln();
        let build = |c: f64| -> Result<Vec<(Complex64, Complex64)>> {
            let (ws, wts) = cfg.nodes(c)?;
            ws.iter()
                .zip(&wts)
                .map(|(&w, &wt)| {
                    let l = dirichlet_l(1.0 + 2.0 * w, &chi)?;
                    let base = l * (cfg.regulator * w * w + w * log_q).exp() / w * wt;
                    Ok((w, base))
                })
                .collect()
        };
        Ok(AfeKernel {
            cfg: cfg.clone(),
            log_q,
            l1_chi: dirichlet_l(C1, &chi)?.re,
            left: build(cfg.left_re)?,
            right: build(cfg.contour_re)?,
        })
    }

    /// The weight for spectral parameters (t_psi, t), as a function of u = log n.
    pub fn weight_fn(&self, t_psi: f64, t: f64) -> Result<WeightFn> {
        let g0 = log_gamma_factor(Complex64::new(0.5, 0.0), t_psi, t)?;
        let attach = |nodes: &[(Complex64, Complex64)]| -> Result<Vec<(Complex64, Complex64)>> {
            nodes
                .iter()
                .map(|&(w, b)| Ok((w, b * (log_gamma_factor(0.5 + w, t_psi, t)? - g0).exp())))
                .collect()
        };
        let u_split = (self.log_q + 2.0 * (t.abs().max(t_psi.abs()).max(1.0) / (2.0 * PI)).ln()).max(0.0);
        Ok(WeightFn {
            left: attach(&self.left)?,
            right: attach(&self.right)?,
            residue: self.l1_chi,
            u_split,
        })
    }
}

/// W(xi) for the central value of psi x phi_2k, where the n-th term uses
/// xi = n / k^2.
pub fn afe_weight(f: &FieldParams, cfg: &AfeConfig, xi: f64, t_psi: f64, k: i64) -> Result<f64> {
    if xi.is_nan() || xi <= 0.0 {
        return Err(Error::InvalidArgument("xi must be positive".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k = 0 is not cuspidal".into()));
    }
    let kern = AfeKernel::new(f, cfg)?;
    let wf = kern.weight_fn(t_psi, t_k(f, 2.0 * k as f64))?;
    let kk = k as f64;
    Ok(wf.eval((xi * kk * kk).ln()))
}

/// A weight tabulated on u = i*h with its effective cutoff log n <= u_cut.
#[derive(Clone, Debug)]
pub struct WeightTable {
    pub h: f64,
    pub vals: Vec<f64>,
    pub u_cut: f64,
}

impl WeightTable {
    pub fn build(wf: &WeightFn, cfg: &AfeConfig) -> Result<WeightTable> {
        let h = cfg.grid_step;
        let u_max = wf.u_split + cfg.decay_width();
        let n = (u_max / h).ceil() as usize + 4;
        let vals = wf.tabulate(h, n);
        let last = vals.iter().rposition(|v| v.abs() >= cfg.tail_tol).unwrap_or(0);
        if last + 4 >= n {
            return Err(Error::TruncationInsufficient("weight has not decayed at the end of its table".into()));
        }
        let u_cut = (last + 1) as f64 * h + cfg.cutoff_scale.ln();
        Ok(WeightTable { h, vals, u_cut })
    }

    /// Four-point Lagrange interpolation (zero past the table).
    pub fn eval(&self, u: f64) -> f64 {
        let x = u / self.h;
        let n = self.vals.len();
        if x >= (n - 1) as f64 {
            return 0.0;
        }
        let i = (x.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
        let t = x - i as f64;
        let v = &self.vals[i..i + 4];
        let (a, b, c, d) = (t, t - 1.0, t - 2.0, t - 3.0);
        -v[0] * b * c * d / 6.0 + v[1] * a * c * d / 2.0 - v[2] * a * b * d / 2.0 + v[3] * a * b * c / 6.0
    }
}

fn check_k(ks: &[i64]) -> Result<()> {
    if ks.contains(&0) {
        return Err(Error::InvalidArgument("k = 0 is not cuspidal".into()));
    }
    Ok(())
}

/// L(1/2, psi x phi_2k) for a batch of k, sharing one ideal table.
///
/// Each ideal a of norm N contributes 2 lambda_psi(N) N^{-1/2} W_k(log N)
/// cos(2 pi (2k) theta_a / (2 log eps)); the factor 2 counts both halves of
/// the functional equation.
pub fn central_values(src: &HeckeSource, f: &FieldParams, cfg: &AfeConfig, ks: &[i64]) -> Result<Vec<f64>> {
    check_k(ks)?;
    if src.eta_d == -1 {
        return Ok(vec![0.0; ks.len()]);
    }
    if ks.is_empty() {
        return Ok(vec![]);
    }
    // work with |k| sorted ascending
    let mut order: Vec<usize> = (0..ks.len()).collect();
    order.sort_by_key(|&i| ks[i].abs());
    let kabs: Vec<i64> = order.iter().map(|&i| ks[i].abs()).collect();
    let kern = AfeKernel::new(f, cfg)?;
    let tables: Vec<WeightTable> = kabs
        .par_iter()
        .map(|&k| {
            let wf = kern.weight_fn(src.t_psi, t_k(f, 2.0 * k as f64))?;
            WeightTable::build(&wf, cfg)
        })
        .collect::<Result<_>>()?;
    let d15 = (f.d as f64).powf(1.5);
    let mut cut: Vec<u64> = Vec::with_capacity(kabs.len());
    for (t, &k) in tables.iter().zip(&kabs) {
        let x = t.u_cut.exp().floor();
        let cap = cfg.series_cutoff_multiplier * (k * k) as f64 * d15;
        if x > cap {
            return Err(Error::TruncationInsufficient(format!(
                "k={k} needs {x:.3e} terms, allowed {cap:.3e}"
            )));
        }
        cut.push(x as u64);
    }
    // cutoffs must be monotone for the k_lo search
    for i in (0..cut.len().saturating_sub(1)).rev() {
        cut[i] = cut[i].min(cut[i + 1]);
    }
    let xmax = *cut.last().unwrap();
    if xmax > src.prime_limit() {
        return Err(Error::TableExhausted(src.prime_limit()));
    }
    let ideals = IdealTable::build(f, xmax)?;
    let lam = src.dense_table(xmax as usize)?;
    let consecutive = kabs.windows(2).all(|w| w[1] == w[0] + 1);
    let nk = kabs.len();
    const CHUNK: usize = 1 << 16;
    let partials: Vec<Vec<f64>> = ideals
        .norms
        .par_chunks(CHUNK)
        .zip(ideals.fracs.par_chunks(CHUNK))
        .map(|(norms, fracs)| {
            let mut acc = vec![0.0f64; nk];
            for (&n, &fr) in norms.iter().zip(fracs) {
                let c = lam[n as usize];
                if c == 0.0 {
                    continue;
                }
                let n64 = n as u64;
                let lo = cut.partition_point(|&x| x < n64);
                if lo >= nk {
                    continue;
                }
                let u = (n as f64).ln();
                let c = c / (n as f64).sqrt();
                let (x, i) = interp_weights(u, tables[0].h, tables[0].vals.len());
                // angle of the k-th character value is 2 pi (2k) fr
                if consecutive {
                    let step = Complex64::from_polar(1.0, 4.0 * PI * fr);
                    let ph = 4.0 * PI * (kabs[lo] as f64 * fr).fract();
                    let mut z = Complex64::from_polar(1.0, ph);
                    for kj in lo..nk {
                        let w = dot4(&tables[kj].vals, i, &x);
                        acc[kj] += c * w * z.re;
                        z *= step;
                    }
                } else {
                    for kj in lo..nk {
                        let w = dot4(&tables[kj].vals, i, &x);
                        let ph = 4.0 * PI * (kabs[kj] as f64 * fr).fract();
                        acc[kj] += c * w * ph.cos();
                    }
                }
            }
            acc
        })
        .collect();
    let mut sums = vec![0.0f64; nk];
    for p in &partials {
        for (s, v) in sums.iter_mut().zip(p) {
            *s += v;
        }
    }
    let mut out = vec![0.0; ks.len()];
    for (j, &i) in order.iter().enumerate() {
        out[i] = 2.0 * sums[j];
    }
    if cfg.enforce_positivity || !src.is_synthetic() {
        if let Some(&v) = out.iter().find(|&&v| v < -1e-3) {
            return Err(Error::NegativeCentralValue(v));
        }
    }
    Ok(out)
}

/// Lagrange weights for the 4 grid points starting at index i.
fn interp_weights(u: f64, h: f64, n: usize) -> ([f64; 4], usize) {
    let x = u / h;
    let i = (x.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let t = x - i as f64;
    let (a, b, c, d) = (t, t - 1.0, t - 2.0, t - 3.0);
    ([-b * c * d / 6.0, a * c * d / 2.0, -a * b * d / 2.0, a * b * c / 6.0], i)
}

#[inline]
fn dot4(v: &[f64], i: usize, x: &[f64; 4]) -> f64 {
    if i + 4 > v.len() {
        return 0.0;
    }
    v[i] * x[0] + v[i + 1] * x[1] + v[i + 2] * x[2] + v[i + 3] * x[3]
}

pub fn central_value(src: &HeckeSource, f: &FieldParams, cfg: &AfeConfig, k: i64) -> Result<f64> {
    Ok(central_values(src, f, cfg, &[k])?[0])
}

/// V(t) = |Gamma(1/4 + i t/2)|^4 / (2 pi |Gamma(1/2 + i t)|^2).
pub fn classical_variance(t_psi: f64) -> f64 {
    let a = log_gamma(Complex64::new(0.25, 0.5 * t_psi)).expect("no pole").re;
    let b = log_gamma(Complex64::new(0.5, t_psi)).expect("no pole").re;
    (4.0 * a - 2.0 * b).exp() / (2.0 * PI)
}

/// zeta_D(2) = zeta(2) prod_{p | D}(1 - p^{-2}).
pub fn zeta_d2(f: &FieldParams) -> f64 {
    let mut v = PI * PI / 6.0;
    for p in [f.p1, f.p2] {
        v *= 1.0 - 1.0 / (p * p) as f64;
    }
    v
}

/// L(1, chi_D) from Hurwitz/digamma values.
pub fn l1_chi(f: &FieldParams) -> f64 {
    dirichlet_l(C1, &field_character(f)).expect("nonprincipal").re
}

/// 2 h log eps / sqrt D with h = 1.
pub fn l1_chi_class_number(f: &FieldParams) -> f64 {
    2.0 * f.log_eps / f.sqrt_d
}

/// L(1, phi_2k) by the approximate functional equation of the degree-two
/// L-function of conductor D with gamma factor pi^{-s} Gamma((s +- i t)/2).
pub fn l1_phi(f: &FieldParams, cfg: &AfeConfig, k: i64) -> Result<f64> {
    Ok(l1_phi_batch(f, cfg, &[k])?[0])
}

pub fn l1_phi_batch(f: &FieldParams, cfg: &AfeConfig, ks: &[i64]) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_k(ks)?;
    if ks.is_empty() {
        return Ok(vec![]);
    }
    let (ws, wts) = cfg.nodes(cfg.contour_re)?;
    let ln_sqrt_d = 0.5 * (f.d as f64).ln();
    let u_lim = |k: i64| {
        let t = t_k(f, 2.0 * k as f64);
        ln_sqrt_d + (t.max(1.0) / (2.0 * PI)).ln() + cfg.decay_width()
    };
    let umax = ks.iter().map(|&k| u_lim(k)).fold(0.0, f64::max);
    let nmax = umax.exp().ceil() as u64;
    if nmax > 50_000_000 {
        return Err(Error::TruncationInsufficient(format!("L(1, phi) needs {nmax} terms")));
    }
    let ideals = IdealTable::build(f, nmax)?;
    let h = cfg.grid_step;
    let ngrid = (umax / h).ceil() as usize + 8;
    ks.par_iter()
        .map(|&k| {
            let t = t_k(f, 2.0 * k as f64);
            let lg = |s: Complex64| -> Result<Complex64> {
                Ok(-s * PI.ln()
                    + log_gamma((s + Complex64::new(0.0, t)) * 0.5)?
                    + log_gamma((s - Complex64::new(0.0, t)) * 0.5)?)
            };
            let g1 = lg(C1)?;
            // first half: (sqrt D/n)^w g(1+w)/g(1) over n; second: D^{-1/2} g(w)/g(1) (sqrt D/n)^w
            let mut a = Vec::with_capacity(ws.len());
            let mut b = Vec::with_capacity(ws.len());
            for (&w, &wt) in ws.iter().zip(&wts) {
                let reg = (cfg.regulator * w * w + w * ln_sqrt_d).exp() / w * wt;
                a.push((w, reg * (lg(1.0 + w)? - g1).exp()));
                b.push((w, reg * (lg(w)? - g1 - ln_sqrt_d).exp()));
            }
            let ta = tabulate_nodes(&a, 0.0, h, ngrid);
            let tb = tabulate_nodes(&b, 0.0, h, ngrid);
            let lam = ideals.lambda_table(2 * k);
            let mut acc = KahanSum::new();
            let mut tail = 0.0f64;
            let n_lim = u_lim(k).exp() as usize;
            for (n, &l) in lam.iter().enumerate().skip(1).take(n_lim) {
                if l == 0.0 {
                    continue;
                }
                let (x, i) = interp_weights((n as f64).ln(), h, ngrid);
                let term = l * (dot4(&ta, i, &x) / n as f64 + dot4(&tb, i, &x));
                if n > n_lim / 2 {
                    tail = tail.max(term.abs());
                }
                acc.add(term);
            }
            if tail > 1e-8 {
                return Err(Error::TruncationInsufficient(format!("L(1, phi_{}) tail {tail:.2e}", 2 * k)));
            }
            Ok(acc.value())
        })
        .collect()
}

/// L(1, sym^2 psi) by its Euler product over p <= pmax, with the
/// level-D factors (1 - lambda(p)^2/p)^{-1}. Returns (value, tail estimate).
pub fn l1_sym2(src: &HeckeSource, pmax: u64) -> Result<(f64, f64)> {
    if pmax < 100 {
        return Err(Error::BoundTooSmall(format!("pmax={pmax}")));
    }
    if pmax > src.prime_limit() {
        return Err(Error::TableExhausted(src.prime_limit()));
    }
    let mut log = KahanSum::new();
    for p in primes_up_to(pmax as usize) {
        let l = src.lambda_prime(p)?;
        let x = 1.0 / p as f64;
        if src.divides_level(p) {
            log.add(-(1.0 - l * l * x).ln());
        } else {
            log.add(-(1.0 - x).ln() - (1.0 - (l * l - 2.0) * x + x * x).ln());
        }
    }
    let p = pmax as f64;
    Ok((log.value().exp(), (2.0 / (p * p.ln())).sqrt()))
}

/// The auxiliary L-values at s = 1 used by the constants.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LValues {
    pub l1_chi: f64,
    pub zeta_d2: f64,
    pub l1_phi2k: f64,
    pub l1_sym2: f64,
    pub sym2_tail: f64,
}

pub fn l_values(f: &FieldParams, src: &HeckeSource, cfg: &AfeConfig, k: i64, pmax: u64) -> Result<LValues> {
    let l1 = l1_chi(f);
    let cross = l1_chi_class_number(f);
    if (l1 - cross).abs() > 1e-6 {
        return Err(Error::TruncationInsufficient(format!("L(1,chi)={l1} vs class number formula {cross}")));
    }
    let (s2, tail) = l1_sym2(src, pmax)?;
    Ok(LValues { l1_chi: l1, zeta_d2: zeta_d2(f), l1_phi2k: l1_phi(f, cfg, k)?, l1_sym2: s2, sym2_tail: tail })
}

/// 1 + lambda(p1)/sqrt p1 + lambda(p2)/sqrt p2 + lambda(D)/sqrt D.
pub fn ramified_factor(f: &FieldParams, src: &HeckeSource) -> Result<f64> {
    let mut v = 1.0;
    for n in [f.p1, f.p2, f.d] {
        v += src.lambda_psi(n)? / (n as f64).sqrt();
    }
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Constants {
    /// first-moment constant
    pub c_dpsi: f64,
    /// constant of the unweighted variance, as an Euler product
    pub c_dpsi_prime: f64,
    /// harmonic variance constant, including the input product of the
    /// central values L(1/2, psi) L(1/2, psi x chi_D)
    pub a_h: f64,
    pub ramified: f64,
    pub l1_chi: f64,
    pub zeta_d2: f64,
    pub l1_sym2: f64,
    /// estimated error of the truncated Euler products
    pub truncation_error: f64,
}

/// The Euler factor of C' at p (sum_j g(p^j) p^{-j}).
pub fn cprime_factor(src: &HeckeSource, f: &FieldParams, p: u64) -> Result<f64> {
    let x = 1.0 / p as f64;
    if (f.d as u64).is_multiple_of(p) {
        return Ok((1.0 - x) * (1.0 - x));
    }
    let chi = kronecker_chi(f, p as i64) as f64;
    let h1 = h_fn(src, f, p)?;
    let h2 = h_fn(src, f, p * p)?;
    Ok(1.0 - 2.0 * h1 * x + (3.0 * chi + h2) * x * x - 2.0 * chi * h1 * x.powi(3) + chi * chi * x.powi(4))
}

/// C, C' and A^h. `central_product` is L(1/2, psi) L(1/2, psi x chi_D),
/// which is not computed here. `pmax_sym2` and `pmax_cprime` truncate the
/// two Euler products.
pub fn constants(
    f: &FieldParams,
    src: &HeckeSource,
    central_product: f64,
    pmax_sym2: u64,
    pmax_cprime: u64,
) -> Result<Constants> {
    let l1 = l1_chi(f);
    let z2 = zeta_d2(f);
    let (s2, tail) = l1_sym2(src, pmax_sym2)?;
    let ram = ramified_factor(f, src)?;
    let mut log = KahanSum::new();
    for p in primes_up_to(pmax_cprime as usize) {
        log.add(cprime_factor(src, f, p)?.ln());
    }
    let pc = pmax_cprime as f64;
    // h(p) ~ 2/sqrt p at split primes, so the omitted factors are 1 + O(p^{-3/2})
    let cprime_tail = 4.0 / (pc.sqrt() * pc.ln());
    let c = 2.0 * l1 / z2 * s2 * ram;
    let d2 = (f.d * f.d) as f64;
    let a_h = central_product * PI * f.log_eps / (2.0 * d2 * z2 * l1) * ram;
    Ok(Constants {
        c_dpsi: c,
        c_dpsi_prime: log.value().exp(),
        a_h,
        ramified: ram,
        l1_chi: l1,
        zeta_d2: z2,
        l1_sym2: s2,
        truncation_error: tail.max(cprime_tail),
    })
}

/// nu(n) = n prod_{p | n}(1 + 1/p).
pub fn nu(n: u64) -> f64 {
    let mut v = n as f64;
    for (p, _) in factorize(n) {
        v *= 1.0 + 1.0 / p as f64;
    }
    v
}

/// Finite L-values entering the period formula for |mu_k|^2.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WiInputs {
    pub l_half_psi: f64,
    pub l_half_psi_chi: f64,
    pub l_half_rankin: f64,
    pub l1_sym2: f64,
    pub l1_chi: f64,
    pub l1_phi2k: f64,
}

/// |mu_k|^2 from completed L-values with conductor powers and gamma factors
/// (newform level D, so the nu factor is nu(1) = 1).
pub fn watson_ichino_mu2(f: &FieldParams, src: &HeckeSource, k: i64, inp: &WiInputs) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k = 0 is not cuspidal".into()));
    }
    if src.parity == Parity::Odd {
        return Ok(0.0);
    }
    let d = f.d as f64;
    let tp = src.t_psi;
    let t = t_k(f, 2.0 * k as f64);
    let half = Complex64::new(0.5, 0.0);
    let lg = |re: f64, im: f64| -> Result<f64> { Ok(log_gamma(Complex64::new(re, im))?.re) };
    // log gamma(s, psi) = -s log pi + log G((s+it)/2) + log G((s-it)/2)
    let g_psi_half = -0.5 * PI.ln() + 2.0 * lg(0.25, 0.5 * tp)?;
    let log_lam_psi = 0.25 * d.ln() + g_psi_half;
    let log_lam_psi_chi = 0.5 * d.ln() + g_psi_half;
    let log_lam_rankin = 0.75 * d.ln() + log_gamma_factor(half, tp, t)?.re;
    let log_lam_sym2 = d.ln() - 1.5 * PI.ln() + 2.0 * lg(0.5, tp)? + lg(0.5, 0.0)?;
    let log_lam_chi = 0.5 * d.ln() - 0.5 * PI.ln() + lg(0.5, 0.0)?;
    let log_lam_phi = 0.5 * d.ln() - PI.ln() + 2.0 * lg(0.5, 0.5 * t)?;
    let num = inp.l_half_psi * inp.l_half_psi_chi * inp.l_half_rankin;
    let den = inp.l1_sym2 * inp.l1_chi * inp.l1_chi * inp.l1_phi2k * inp.l1_phi2k;
    if den <= 0.0 {
        return Err(Error::InvalidArgument("L-values at 1 must be positive".into()));
    }
    let log_gamma_part = log_lam_psi + log_lam_psi_chi + log_lam_rankin - log_lam_sym2 - 2.0 * log_lam_chi - 2.0 * log_lam_phi;
    Ok(num / den * log_gamma_part.exp() / (8.0 * d.sqrt() * nu(1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hecke::{make_source, SourceSpec, SyntheticSpec};
    use crate::quadfield::make_field;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn log_gamma_special_values() {
        assert!(log_gamma(c(1.0, 0.0)).unwrap().norm() < 1e-13);
        assert!((log_gamma(c(0.5, 0.0)).unwrap() - c(0.5 * PI.ln(), 0.0)).norm() < 1e-14);
        assert!((log_gamma(c(10.0, 0.0)).unwrap().re - 362880f64.ln()).abs() < 1e-12);
        assert!(matches!(log_gamma(c(-3.0, 0.0)), Err(Error::PoleInput(_))));
        // Gamma(1/4)
        assert!((gamma(c(0.25, 0.0)).unwrap().re - 3.625_609_908_221_908).abs() < 1e-12);
    }

    #[test]
    fn log_gamma_reflection() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let z = c(rng.gen_range(-20.0..20.0), rng.gen_range(-30.0..30.0));
            let lhs = log_gamma(z).unwrap() + log_gamma(1.0 - z).unwrap();
            let rhs = (PI / (PI * z).sin()).ln();
            // compare exponentials modulo 2 pi i
            let d = lhs - rhs;
            let k = (d.im / (2.0 * PI)).round();
            assert!((d - c(0.0, 2.0 * PI * k)).norm() < 1e-10 * (1.0 + rhs.norm()), "z={z}");
        }
    }

    #[test]
    fn log_gamma_recurrence_large_imaginary() {
        for z in [c(0.3, 1e4), c(-49.5, 3.0), c(-10.2, -500.0), c(50.0, 0.1)] {
            let d = log_gamma(z + 1.0).unwrap() - log_gamma(z).unwrap() - z.ln();
            let k = (d.im / (2.0 * PI)).round();
            assert!((d - c(0.0, 2.0 * PI * k)).norm() < 1e-10, "z={z}");
        }
    }

    #[test]
    fn zeta_values() {
        assert!((zeta(c(2.0, 0.0)).unwrap().re - PI * PI / 6.0).abs() < 1e-14);
        assert!((zeta(c(0.0, 0.0)).unwrap().re + 0.5).abs() < 1e-13);
        assert!((zeta(c(-1.0, 0.0)).unwrap().re + 1.0 / 12.0).abs() < 1e-13);
        // first zero
        assert!(zeta(c(0.5, 14.134_725_141_734_693)).unwrap().norm() < 1e-10);
    }

    #[test]
    fn dirichlet_values() {
        let chi4 = DirChar::kronecker_top(-4, 4);
        assert!((dirichlet_l(C1, &chi4).unwrap().re - PI / 4.0).abs() < 1e-14);
        let chi4v = dirichlet_l(c(1.0 + 1e-7, 0.0), &chi4).unwrap().re;
        assert!((chi4v - PI / 4.0).abs() < 1e-6);
        let f = make_field(21).unwrap();
        assert!((l1_chi(&f) - l1_chi_class_number(&f)).abs() < 1e-12);
        assert!((l1_chi(&f) - 0.68385).abs() < 1e-4);
    }

    #[test]
    fn zeta_d2_closed_form() {
        let f = make_field(21).unwrap();
        let want = PI * PI / 6.0 * (1.0 - 1.0 / 9.0) * (1.0 - 1.0 / 49.0);
        assert!((zeta_d2(&f) - want).abs() < 1e-15);
    }

    #[test]
    fn classical_variance_values() {
        let g = gamma(c(0.25, 0.0)).unwrap().re;
        assert!((classical_variance(0.0) - g.powi(4) / (2.0 * PI * PI)).abs() < 1e-12);
        assert!((classical_variance(0.0) - 8.7540).abs() < 1e-3);
        assert_eq!(classical_variance(3.0), classical_variance(-3.0));
        let mut prev = classical_variance(0.0);
        for i in 1..=100 {
            let v = classical_variance(i as f64 * 0.1);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn stirling_ratio_converges() {
        let f = make_field(21).unwrap();
        let tp = crate::hecke::DEFAULT_T_PSI;
        let (e, a) = gamma_ratio_stirling(tp, t_k(&f, 100.0)).unwrap();
        assert!((e / a - 1.0).abs() < 0.01);
        assert!((a - f.log_eps / (PI * 50.0)).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for k in [50.0, 100.0, 200.0, 500.0] {
            let (e, a) = gamma_ratio_stirling(tp, t_k(&f, 2.0 * k)).unwrap();
            let err = (e / a - 1.0).abs();
            assert!(err < prev && err * k < 1.0);
            prev = err;
        }
    }

    #[test]
    fn gamma_factor_conjugate_symmetry() {
        let s = c(0.7, 3.3);
        let a = gamma_factor(s, 9.5, 40.0).unwrap();
        let b = gamma_factor(s.conj(), 9.5, 40.0).unwrap();
        assert!((a - b.conj()).norm() < 1e-12 * a.norm());
    }

    #[test]
    fn weight_limits() {
        let f = make_field(21).unwrap();
        let cfg = AfeConfig::default();
        let tp = crate::hecke::DEFAULT_T_PSI;
        let w0 = afe_weight(&f, &cfg, 1e-3, tp, 100).unwrap();
        assert!((w0 / 0.68385 - 1.0).abs() < 0.02, "{w0}");
        let q = (f.d as f64).powf(1.5) / (f.log_eps * f.log_eps);
        let far = afe_weight(&f, &cfg, 1e3 * q, tp, 100).unwrap();
        assert!(far.abs() <= 1e-6);
        let kern = AfeKernel::new(&f, &cfg).unwrap();
        let wf = kern.weight_fn(tp, t_k(&f, 200.0)).unwrap();
        // both contours agree where they meet
        let u = wf.u_split;
        let l = wf.residue + sum_nodes(&wf.left, u);
        let r = sum_nodes(&wf.right, u);
        assert!((l - r).abs() < 1e-10, "{l} {r}");
        // with the unit regulator the tail is monotone
        let paper = AfeKernel::new(&f, &AfeConfig::paper()).unwrap();
        let wp = paper.weight_fn(tp, t_k(&f, 200.0)).unwrap();
        let mut xi = 10.0f64;
        while xi < 1e6 {
            let a = wp.eval((xi * 1e4).ln()).abs();
            let b = wp.eval((2.0 * xi * 1e4).ln()).abs();
            assert!(b <= a + 1e-8, "xi={xi}");
            xi *= 2.0;
        }
        // the table reproduces direct evaluation
        let t = WeightTable::build(&wf, &cfg).unwrap();
        for u in [0.0, 3.3, 10.01, wf.u_split + 0.123, t.u_cut - 0.5] {
            assert!((t.eval(u) - wf.eval(u)).abs() < 1e-9, "u={u}");
        }
    }

    fn source(eta: i32) -> HeckeSource {
        let mut s = SyntheticSpec::new(11, 21);
        s.eta = eta;
        make_source(&SourceSpec::Synthetic(s)).unwrap()
    }

    #[test]
    fn central_value_self_consistency() {
        let f = make_field(21).unwrap();
        let src = source(1);
        let a = AfeConfig::default();
        let va = central_values(&src, &f, &a, &[10, 11, 12]).unwrap();
        // direct evaluation of the same smoothed sum
        let kern = AfeKernel::new(&f, &a).unwrap();
        let wf = kern.weight_fn(src.t_psi, t_k(&f, 20.0)).unwrap();
        let table = IdealTable::build(&f, 300_000).unwrap();
        let lam = table.lambda_table(20);
        let mut direct = 0.0;
        for (n, &l) in lam.iter().enumerate().skip(1) {
            if l != 0.0 {
                direct += 2.0 * src.lambda_psi(n as i64).unwrap() * l / (n as f64).sqrt() * wf.eval((n as f64).ln());
            }
        }
        assert!((direct - va[0]).abs() < 1e-8, "{direct} {}", va[0]);
        let doubled = AfeConfig { cutoff_scale: 2.0, ..AfeConfig::default() };
        let vd = central_values(&src, &f, &doubled, &[10, 11, 12]).unwrap();
        for (x, y) in va.iter().zip(&vd) {
            assert!((x - y).abs() <= 1e-4 * x.abs().max(1e-3));
        }
        // evenness in k and batch consistency
        let single = central_value(&src, &f, &a, -11).unwrap();
        assert!((single - va[1]).abs() < 1e-12);
    }

    #[test]
    fn negative_eta_vanishes() {
        let f = make_field(21).unwrap();
        let v = central_value(&source(-1), &f, &AfeConfig::default(), 7).unwrap();
        assert_eq!(v, 0.0);
        assert!(central_value(&source(1), &f, &AfeConfig::default(), 0).is_err());
    }

    #[test]
    fn l1_phi_regulator_independent() {
        let f = make_field(21).unwrap();
        let a = l1_phi(&f, &AfeConfig::default(), 20).unwrap();
        let b = l1_phi(&f, &AfeConfig { regulator: 0.2, ..AfeConfig::default() }, 20).unwrap();
        assert!(a > 0.0);
        assert!((a - b).abs() < 1e-8, "{a} {b}");
    }

    #[test]
    fn ramified_factor_splits() {
        let f = make_field(21).unwrap();
        let src = source(1);
        let r = ramified_factor(&f, &src).unwrap();
        let a = 1.0 + src.lambda_psi(3).unwrap() / 3f64.sqrt();
        let b = 1.0 + src.lambda_psi(7).unwrap() / 7f64.sqrt();
        assert!((r - a * b).abs() < 1e-14);
        assert!((cprime_factor(&src, &f, 7).unwrap() - (6.0f64 / 7.0).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn watson_ichino_structure() {
        let f = make_field(21).unwrap();
        let src = source(1);
        let inp = WiInputs {
            l_half_psi: 1.0,
            l_half_psi_chi: 1.0,
            l_half_rankin: 0.8,
            l1_sym2: 1.1,
            l1_chi: l1_chi(&f),
            l1_phi2k: 0.9,
        };
        let a = watson_ichino_mu2(&f, &src, 50, &inp).unwrap();
        let b = watson_ichino_mu2(&f, &src, 50, &WiInputs { l_half_rankin: 1.6, ..inp.clone() }).unwrap();
        assert!(a > 0.0 && (b / a - 2.0).abs() < 1e-12);
        assert_eq!(nu(1), 1.0);
        let mut odd = src.clone();
        odd.parity = Parity::Odd;
        assert_eq!(watson_ichino_mu2(&f, &odd, 50, &inp).unwrap(), 0.0);
        // closed form: L(1,phi)^2 |mu|^2 = pi^2 V/(4 D^2) LL ratio_k L_k / (L(1,sym2) L(1,chi)^2)
        let t = t_k(&f, 100.0);
        let (ratio, _) = gamma_ratio_stirling(src.t_psi, t).unwrap();
        let want = PI * PI * classical_variance(src.t_psi) / (4.0 * 441.0) * ratio * 0.8 / (1.1 * inp.l1_chi.powi(2));
        assert!((a * 0.81 / want - 1.0).abs() < 1e-10, "{} {}", a * 0.81, want);
    }
}
