//! The renormalization operator `R f = Psi P Psi^{-1}`.
//!
//! For `f` near `R_alpha` with return index `n = q_m`, put
//! `L = f^n(0) - p_m` and `g(u) = (f^n(L u) - p_m) / L`. A straightening map
//! `H` of the strip `Q = [0, 1] x [-2 eps, 2 eps]` satisfies
//! `H(1 + is) = g(H(is))`; the solution `F` of the Beltrami equation for the
//! dilatation of `H` makes `Theta = F o H^{-1}` conformal, and
//! `Psi(z) = Theta(z / L)` conjugates `f^n` to `w -> w + 1`. The first return
//! to the quadrilateral bounded by `I = L [-2 i eps, 2 i eps]` and `f^n(I)`
//! takes `q_{m+1}` or `q_{m+1} + n` iterates, and its conjugate by `Psi` is
//! fitted as a new map on `Pi_eps`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beltrami::{solve_beltrami, BeltramiConfig, BeltramiField, CellGrid, QCSolution};
use crate::cfrac::{return_index_f64, ReturnIndex};
use crate::circlemap::{
    e1, fit_periodic, fit_samples, FitConfig, FourierAnnulusMap, MapJson,
    StripDomain, TangentField, C64,
};
use crate::cohom::{apply_m, tangent_family, STRIP_LOSS};
use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Width of the flat ends of the smooth blending profile, in `t`.
pub const BLEND_MARGIN: f64 = 0.1;

/// The dilatation is tapered to zero between `|s| = 2 eps` and
/// `|s| = TAPER_END eps` in the smooth profile.
pub const TAPER_END: f64 = 3.5;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// How `H` interpolates between `I` and `g(I)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartProfile {
    /// `H(t + is) = t + is + chi(t) D(t - 1 + is)` with `D(u) = g(u) - u - 1`
    /// and `chi` a smooth step flat near both ends. `H` is holomorphic near
    /// `t = 0` and `t = 1`, so the dilatation is smooth and periodic.
    Smooth,
    /// `H(t + is) = (1 - t) is + t g(is)`. The dilatation jumps across
    /// `t = 0` and `|s| = 2 eps`.
    Linear,
}

/// Settings shared by chart construction and renormalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenormConfig {
    /// Half-height of the chart strip (and of the output strip before
    /// `output_scale`).
    pub epsilon: f64,
    /// Grid columns; rows are `nx * ceil(eps)`.
    pub nx: usize,
    pub profile: ChartProfile,
    /// The output map lives on `Pi_{output_scale * eps}` (1.5 is the
    /// expansion target, 1 the restriction).
    pub output_scale: f64,
    /// Largest admissible `||mu||_inf`.
    pub max_dilatation: f64,
    /// Smallest admissible `l = {n alpha}`.
    pub min_l: f64,
    /// Acceptable deviation of the Taylor model of `g` from direct iteration.
    pub jet_tolerance: f64,
    /// Largest admissible tail energy of the output fit.
    pub fit_tolerance: f64,
    /// Finite-difference step for `d beta / d alpha`, in units of `l^2`.
    pub fd_relative_step: f64,
    /// `zeta ||h||` for finite differences along tangent families.
    pub family_size: f64,
    pub beltrami: BeltramiConfig,
    pub fit: FitConfig,
}

impl Default for RenormConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            nx: 256,
            profile: ChartProfile::Smooth,
            output_scale: 1.0,
            max_dilatation: 0.5,
            min_l: 1e-6,
            jet_tolerance: 1e-11,
            fit_tolerance: 1e-6,
            fd_relative_step: 1e-4,
            family_size: 1e-2,
            beltrami: BeltramiConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

impl RenormConfig {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn output_strip(&self) -> Result<StripDomain> {
        StripDomain::new(self.epsilon * self.output_scale)
    }
}

fn ps_mul(a: &[C64], b: &[C64]) -> Vec<C64> {
    let k = a.len();
    let mut out = vec![ZERO; k];
    for (i, ai) in a.iter().enumerate() {
        if *ai == ZERO {
            continue;
        }
        for (j, bj) in b[..k - i].iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// `exp(q)` for a series with `q[0] = 0`.
fn ps_exp(q: &[C64]) -> Vec<C64> {
    let k = q.len();
    let mut e = vec![ZERO; k];
    e[0] = ONE;
    for j in 1..k {
        let mut s = ZERO;
        for m in 1..=j {
            s += q[m] * e[j - m] * m as f64;
        }
        e[j] = s / j as f64;
    }
    e
}

/// `f^n(z)` as a fractional lift plus an integer, and `(f^n)'(z)` if asked.
fn orbit(f: &FourierAnnulusMap, mut z: C64, n: u64, with_derivative: bool) -> Result<(C64, i64, C64)> {
    let mut shift = 0i64;
    let mut d = ONE;
    for _ in 0..n {
        if with_derivative {
            let [fz, dfz, _] = f.jet(z);
            d *= dfz;
            z = fz;
        } else {
            z = f.eval(z);
        }
        if !f.strip.contains(z) {
            return Err(Error::Escape(format!("{z} on an orbit of length {n}")));
        }
        let fl = z.re.floor();
        z.re -= fl;
        shift += fl as i64;
    }
    Ok((z, shift, d))
}

fn lift(frac: C64, shift: i64, minus: u64) -> C64 {
    frac + (shift - minus as i64) as f64
}

/// Taylor model of `f^n(z) - p` on a disc, in `w = (z - center) / radius`.
#[derive(Clone, Debug)]
pub struct ReturnJet {
    pub center: C64,
    pub radius: f64,
    pub coeffs: Vec<C64>,
    /// Largest deviation from direct iteration on the disc boundary.
    pub error: f64,
}

impl ReturnJet {
    fn build(f: &FourierAnnulusMap, n: u64, p: u64, center: C64, radius: f64, order: usize) -> Result<Self> {
        let len = order + 1;
        let mut s = vec![ZERO; len];
        s[0] = center;
        s[1] = C64::new(radius, 0.0);
        let dmax = f
            .displacement
            .modes()
            .filter(|(k, c)| *k != 0 && c.norm() != 0.0)
            .map(|(k, _)| k.unsigned_abs())
            .max()
            .unwrap_or(0) as i64;
        let mut shift = 0i64;
        for _ in 0..n {
            let p0 = s[0];
            if !f.strip.contains(p0) {
                return Err(Error::Escape(format!("{p0} while building the return jet")));
            }
            let mut next = s.clone();
            next[0] += f.displacement.coeff(0);
            if dmax > 0 {
                let mut qp = vec![ZERO; len];
                let mut qm = vec![ZERO; len];
                for j in 1..len {
                    qp[j] = s[j] * C64::new(0.0, TWO_PI);
                    qm[j] = -qp[j];
                }
                let (ep, em) = (ps_exp(&qp), ps_exp(&qm));
                let (bp, bm) = (e1(p0), e1(-p0));
                let mut pp = ep.clone();
                let mut pm = em.clone();
                let mut sp = bp;
                let mut sm = bm;
                for k in 1..=dmax {
                    if k > 1 {
                        pp = ps_mul(&pp, &ep);
                        pm = ps_mul(&pm, &em);
                        sp *= bp;
                        sm *= bm;
                    }
                    let cp = f.displacement.coeff(k) * sp;
                    let cm = f.displacement.coeff(-k) * sm;
                    for j in 0..len {
                        next[j] += cp * pp[j] + cm * pm[j];
                    }
                }
            }
            let fl = next[0].re.floor();
            next[0].re -= fl;
            shift += fl as i64;
            s = next;
        }
        s[0] += (shift - p as i64) as f64;
        let mut jet = Self {
            center,
            radius,
            coeffs: s,
            error: 0.0,
        };
        let probes = 24;
        let mut err: f64 = 0.0;
        for j in 0..=probes {
            let z = if j == probes {
                center
            } else {
                center + C64::from_polar(0.999 * radius, TWO_PI * (j as f64 + 0.5) / probes as f64)
            };
            let (fr, k, _) = orbit(f, z, n, false)?;
            err = err.max((lift(fr, k, p) - jet.eval(z).0).norm());
        }
        jet.error = err;
        Ok(jet)
    }

    /// `(f^n(z) - p, (f^n)'(z))`.
    pub fn eval(&self, z: C64) -> (C64, C64) {
        let w = (z - self.center) / self.radius;
        let mut v = ZERO;
        let mut dv = ZERO;
        for (j, c) in self.coeffs.iter().enumerate().rev() {
            dv = dv * w + v;
            v = v * w + c;
            let _ = j;
        }
        (v, dv / self.radius)
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }
}

/// `(chi, chi')` for the smooth step rising on `[BLEND_MARGIN, 1 - BLEND_MARGIN]`.
pub fn blend(t: f64) -> (f64, f64) {
    let width = 1.0 - 2.0 * BLEND_MARGIN;
    let (c, dc) = smoothstep((t - BLEND_MARGIN) / width);
    (c, dc / width)
}

fn smoothstep(x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 0.0);
    }
    if x >= 1.0 {
        return (1.0, 0.0);
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    let sum = a + b;
    let d = a * b * (1.0 / (x * x) + 1.0 / ((1.0 - x) * (1.0 - x))) / (sum * sum);
    (a / sum, d)
}

/// Vertical cutoff for the smooth profile: 1 on `|s| <= 2 eps`, 0 beyond
/// `TAPER_END eps`.
fn taper(s: f64, eps: f64) -> f64 {
    1.0 - smoothstep((s.abs() - 2.0 * eps) / ((TAPER_END - 2.0) * eps)).0
}

/// Solves the real-linear system `a x + b y = r` for `x + i y`.
fn solve_real2(a: C64, b: C64, r: C64) -> Option<C64> {
    let det = a.re * b.im - a.im * b.re;
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some(C64::new(
        (r.re * b.im - r.im * b.re) / det,
        (a.re * r.im - a.im * r.re) / det,
    ))
}

/// Boundary of the fundamental quadrilateral: `I` and `f^n(I)`, sampled
/// from bottom to top. The other two sides join their endpoints.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Quadrilateral {
    pub left: Vec<C64>,
    pub right: Vec<C64>,
}

impl Quadrilateral {
    /// Closed polyline as CSV with header `edge,index,re,im`.
    pub fn csv(&self) -> String {
        let mut s = String::from("edge,index,re,im\n");
        let mut push = |edge: &str, pts: &[C64]| {
            for (i, z) in pts.iter().enumerate() {
                let _ = writeln!(s, "{edge},{i},{:.15e},{:.15e}", z.re, z.im);
            }
        };
        push("I", &self.left);
        push("fnI", &self.right);
        if let (Some(a), Some(b)) = (self.left.first(), self.right.first()) {
            push("bottom", &[*a, *b]);
        }
        if let (Some(a), Some(b)) = (self.left.last(), self.right.last()) {
            push("top", &[*a, *b]);
        }
        s
    }
}

/// The straightening map `H` of the fundamental domain of `g`.
#[derive(Clone, Debug)]
pub struct Straightening {
    /// `f^n(0) - p_m`.
    pub big_l: C64,
    pub profile: ChartProfile,
    pub jet: ReturnJet,
}

impl Straightening {
    /// `(g(u), g'(u))`.
    pub fn g(&self, u: C64) -> (C64, C64) {
        let (v, dv) = self.jet.eval(self.big_l * u);
        (v / self.big_l, dv)
    }

    /// `(H, H_t, H_s)` at `zeta = t + is`.
    pub fn h_jet(&self, zeta: C64) -> [C64; 3] {
        match self.profile {
            ChartProfile::Smooth => {
                let (chi, dchi) = blend(zeta.re);
                if chi == 0.0 && dchi == 0.0 {
                    return [zeta, ONE, I];
                }
                let u = zeta - 1.0;
                let (gv, gd) = self.g(u);
                let d = gv - u - 1.0;
                let dp = gd - 1.0;
                [zeta + d * chi, ONE + d * dchi + dp * chi, I * (ONE + dp * chi)]
            }
            ChartProfile::Linear => {
                let t = zeta.re;
                let is = C64::new(0.0, zeta.im);
                let (gv, gd) = self.g(is);
                let e = gv - is;
                [is + e * t, e, I * (ONE + (gd - 1.0) * t)]
            }
        }
    }

    /// `H_zbar / H_z`.
    pub fn dilatation(&self, zeta: C64) -> C64 {
        let [_, ht, hs] = self.h_jet(zeta);
        (ht + I * hs) / (ht - I * hs)
    }

    /// `H^{-1}(u)` by Newton's method on the real Jacobian.
    pub fn inverse(&self, u: C64) -> Result<C64> {
        let mut zeta = u;
        let mut last = f64::INFINITY;
        for _ in 0..60 {
            let [h, ht, hs] = self.h_jet(zeta);
            let r = u - h;
            last = r.norm();
            if last <= 1e-15 * (1.0 + u.norm()) {
                return Ok(zeta);
            }
            let step = solve_real2(ht, hs, r).ok_or_else(|| {
                Error::Degenerate(format!("H has a singular Jacobian at {zeta}"))
            })?;
            zeta += step;
            if step.norm() <= 1e-16 * (1.0 + zeta.norm()) {
                return Ok(zeta);
            }
        }
        if last < 1e-12 {
            return Ok(zeta);
        }
        Err(Error::NonConvergence {
            what: "inversion of H",
            iterations: 60,
            last_error: last,
        })
    }
}

/// The chart `Psi` of a map near a rotation, with its ingredients.
#[derive(Clone, Debug)]
pub struct ChartAssembly {
    pub f: FourierAnnulusMap,
    pub alpha_hint: f64,
    pub index: ReturnIndex,
    pub n: u64,
    /// `f^n(0) - p_m`.
    pub big_l: C64,
    /// `{n alpha_hint}`.
    pub l: f64,
    pub epsilon: f64,
    pub profile: ChartProfile,
    pub straight: Straightening,
    /// `H` at the nodes of the rows with `|s| <= 2 eps`, from row `h_rows.0`
    /// to row `h_rows.1` inclusive.
    pub h_grid: Vec<C64>,
    pub h_rows: (usize, usize),
    pub mu: BeltramiField,
    pub qc: QCSolution,
    pub quad: Quadrilateral,
    /// `sup |Psi(f^n z) - Psi(z) - 1|` over sampled points of `I` (and, for
    /// the smooth profile, of two nearby vertical lines).
    pub residual_conj: f64,
    /// `max |Psi(L u) - u|` over the nodes of `Q`.
    pub psi_linear_defect: f64,
    /// Largest `|Theta_ubar|` at sampled interior points, by differences.
    pub conformality_defect: f64,
}

impl ChartAssembly {
    pub fn h_jet(&self, zeta: C64) -> [C64; 3] {
        self.straight.h_jet(zeta)
    }

    /// `F^{-1}(w)` by Newton's method with a differenced Jacobian.
    pub fn f_inverse(&self, w: C64) -> Result<C64> {
        let mut zeta = w;
        let mut last = f64::INFINITY;
        let h = 1e-6;
        for _ in 0..60 {
            let r = w - self.qc.eval(zeta);
            last = r.norm();
            if last <= 2e-16 * (1.0 + w.norm()) {
                return Ok(zeta);
            }
            let fx = (self.qc.eval(zeta + h) - self.qc.eval(zeta - h)) / (2.0 * h);
            let fy = (self.qc.eval(zeta + I * h) - self.qc.eval(zeta - I * h)) / (2.0 * h);
            let step = solve_real2(fx, fy, r).ok_or_else(|| {
                Error::Degenerate(format!("F has a singular Jacobian at {zeta}"))
            })?;
            zeta += step;
            if step.norm() <= 1e-16 * (1.0 + zeta.norm()) {
                return Ok(zeta);
            }
        }
        if last < 1e-12 {
            return Ok(zeta);
        }
        Err(Error::NonConvergence {
            what: "inversion of F",
            iterations: 60,
            last_error: last,
        })
    }

    /// `Theta(u) = F(H^{-1}(u))` without reduction to the fundamental domain.
    pub fn theta(&self, u: C64) -> Result<C64> {
        Ok(self.qc.eval(self.straight.inverse(u)?))
    }

    fn t_window(&self) -> (f64, f64) {
        match self.profile {
            ChartProfile::Smooth => (-BLEND_MARGIN, 1.0 + BLEND_MARGIN),
            ChartProfile::Linear => (-1e-12, 1.0 + 1e-12),
        }
    }

    /// `f^n(z) - p_m`.
    pub fn forward(&self, z: C64) -> Result<C64> {
        let (fr, k, _) = orbit(&self.f, z, self.n, false)?;
        Ok(lift(fr, k, self.index.p_m))
    }

    /// `f^{-n}(z + p_m)`, by Newton's method on the orbit.
    pub fn backward(&self, z: C64) -> Result<C64> {
        let mut y = z - self.big_l;
        let mut last = f64::INFINITY;
        for _ in 0..60 {
            let (fr, k, d) = orbit(&self.f, y, self.n, true)?;
            let r = lift(fr, k, self.index.p_m) - z;
            last = r.norm();
            let step = r / d;
            y -= step;
            if step.norm() <= 1e-16 * (1.0 + y.norm()) || last == 0.0 {
                return Ok(y);
            }
        }
        if last < 1e-12 {
            return Ok(y);
        }
        Err(Error::NonConvergence {
            what: "backward iterate",
            iterations: 60,
            last_error: last,
        })
    }

    /// `Psi(z)`, moving `z` into the quadrilateral with `f^{+-n}` first.
    /// Also returns the net number of forward moves.
    pub fn psi(&self, z: C64) -> Result<(C64, i64)> {
        let (lo, hi) = self.t_window();
        let mut z = z;
        let mut moves = 0i64;
        for _ in 0..6 {
            let zeta = self.straight.inverse(z / self.big_l)?;
            if zeta.re < lo {
                z = self.forward(z)?;
                moves += 1;
            } else if zeta.re > hi {
                z = self.backward(z)?;
                moves -= 1;
            } else {
                return Ok((self.qc.eval(zeta) - moves as f64, moves));
            }
        }
        Err(Error::Degenerate(format!(
            "{z} does not settle in the fundamental domain"
        )))
    }

    /// A point `z` of the quadrilateral and an integer `k` with
    /// `Psi(z) = w - k`.
    pub fn psi_inverse(&self, w: C64) -> Result<(C64, i64)> {
        let zeta = self.f_inverse(w)?;
        let k = zeta.re.floor();
        let zeta = zeta - k;
        Ok((self.big_l * self.h_jet(zeta)[0], k as i64))
    }

    /// `R f(w)` and the number of iterates of `f` used.
    pub fn return_sample(&self, w: C64) -> Result<(C64, u64)> {
        let (z, k) = self.psi_inverse(w)?;
        let (fr, j, _) = orbit(&self.f, z, self.index.q_next, false)?;
        let z1 = lift(fr, j, self.index.p_next);
        let (v, moves) = self.psi(z1)?;
        let count = self.index.q_next as i64 + moves * self.n as i64;
        Ok((v + k as f64, count.max(0) as u64))
    }
}

/// Builds the chart of `f` with the return index of `alpha_hint`.
pub fn build_chart(f: &FourierAnnulusMap, alpha_hint: f64, cfg: &RenormConfig) -> Result<ChartAssembly> {
    let index = return_index_f64(alpha_hint)?;
    let n = index.n;
    let l = index.l;
    if l < cfg.min_l {
        return Err(Error::Admissibility(format!("l = {l:e} is below {:e}", cfg.min_l)));
    }
    let eps = cfg.epsilon;
    let (fr, k, _) = orbit(f, ZERO, n, false)?;
    let big_l = lift(fr, k, index.p_m);
    if (big_l - l).norm() > 0.5 * l {
        return Err(Error::Admissibility(format!(
            "f^{n}(0) - {} = {big_l} is far from l = {l:e}",
            index.p_m
        )));
    }
    let half = (0.5 + BLEND_MARGIN + 0.05).hypot(TAPER_END * eps + 0.05);
    let radius = big_l.norm() * half;
    let center = big_l * -0.5;
    if center.im.abs() + radius >= f.strip.epsilon {
        return Err(Error::Admissibility(format!(
            "chart band of radius {radius:.3e} does not fit the strip of half-width {}",
            f.strip.epsilon
        )));
    }
    let mut order = 24;
    let jet = loop {
        let jet = ReturnJet::build(f, n, index.p_m, center, radius, order)?;
        if jet.error <= cfg.jet_tolerance * big_l.norm() || order >= 96 {
            break jet;
        }
        order *= 2;
    };
    if jet.error > cfg.jet_tolerance * big_l.norm() {
        return Err(Error::Admissibility(format!(
            "Taylor model of f^{n} misses direct iteration by {:.2e}",
            jet.error
        )));
    }
    let straight = Straightening {
        big_l,
        profile: cfg.profile,
        jet,
    };
    let samples = 65;
    let mut left = Vec::with_capacity(samples);
    let mut right = Vec::with_capacity(samples);
    for j in 0..samples {
        let s = -2.0 * eps + 4.0 * eps * j as f64 / (samples - 1) as f64;
        let is = C64::new(0.0, s);
        let g = straight.g(is).0;
        if g.re <= 0.5 {
            return Err(Error::Degenerate(format!(
                "f^n(I) meets I near s = {s:.3} (Re g = {:.3})",
                g.re
            )));
        }
        left.push(big_l * is);
        right.push(big_l * g);
    }
    let quad = Quadrilateral { left, right };

    let grid = CellGrid::for_strip(eps, cfg.nx)?;
    let row_lo = grid.row_of(-2.0 * eps).unwrap_or(grid.ny / 4);
    let row_hi = grid.row_of(2.0 * eps).unwrap_or(3 * grid.ny / 4);
    let values: Vec<C64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let node = grid.node(i % grid.nx, i / grid.nx);
            match cfg.profile {
                ChartProfile::Smooth => {
                    let w = taper(node.im, eps);
                    if w == 0.0 {
                        ZERO
                    } else {
                        straight.dilatation(node) * w
                    }
                }
                ChartProfile::Linear => {
                    let row = i / grid.nx;
                    if row >= row_lo && row <= row_hi {
                        straight.dilatation(node)
                    } else {
                        ZERO
                    }
                }
            }
        })
        .collect();
    let mut mu = BeltramiField::from_values(grid, values)?;
    if cfg.profile == ChartProfile::Linear {
        mu = mu.with_seams(vec![row_lo, row_hi], vec![0]);
    }
    if !(mu.norm_inf <= cfg.max_dilatation) {
        return Err(Error::Admissibility(format!(
            "|mu|_inf = {:.3e} exceeds {}",
            mu.norm_inf, cfg.max_dilatation
        )));
    }
    let h_grid: Vec<C64> = (row_lo * grid.nx..(row_hi + 1) * grid.nx)
        .into_par_iter()
        .map(|i| straight.h_jet(grid.node(i % grid.nx, i / grid.nx))[0])
        .collect();
    let qc = solve_beltrami(&mu, &cfg.beltrami)?;
    let psi_linear_defect = h_grid
        .iter()
        .enumerate()
        .map(|(idx, h)| {
            let i = row_lo * grid.nx + idx;
            (grid.node(i % grid.nx, i / grid.nx) + qc.values[i] - h).norm()
        })
        .fold(0.0, f64::max);
    let mut chart = ChartAssembly {
        f: f.clone(),
        alpha_hint,
        index,
        n,
        big_l,
        l,
        epsilon: eps,
        profile: cfg.profile,
        straight,
        h_grid,
        h_rows: (row_lo, row_hi),
        mu,
        qc,
        quad,
        residual_conj: 0.0,
        psi_linear_defect,
        conformality_defect: 0.0,
    };

    let lines: &[f64] = match cfg.profile {
        ChartProfile::Smooth => &[0.0, 0.5 * BLEND_MARGIN, BLEND_MARGIN],
        ChartProfile::Linear => &[0.0],
    };
    let mut resid: f64 = 0.0;
    for &t in lines {
        for j in 1..32 {
            let zeta = C64::new(t, -2.0 * eps + 4.0 * eps * j as f64 / 32.0);
            let z = big_l * chart.h_jet(zeta)[0];
            let image = chart.forward(z)?;
            let r = chart.theta(image / big_l)? - chart.qc.eval(zeta) - 1.0;
            resid = resid.max(r.norm());
        }
    }
    chart.residual_conj = resid;

    let h = 1e-4;
    let mut cr: f64 = 0.0;
    for j in 0..16 {
        let zeta = C64::new(0.2 + 0.6 * ((j * 7) % 16) as f64 / 15.0, -1.5 * eps + 3.0 * eps * j as f64 / 15.0);
        let u = chart.h_jet(zeta)[0];
        let tx = (chart.theta(u + h)? - chart.theta(u - h)?) / (2.0 * h);
        let ty = (chart.theta(u + I * h)? - chart.theta(u - I * h)?) / (2.0 * h);
        cr = cr.max(((tx + I * ty) * 0.5).norm());
    }
    chart.conformality_defect = cr;
    Ok(chart)
}

/// Everything produced by one renormalization.
#[derive(Clone, Debug)]
pub struct RenormTrace {
    pub input: FourierAnnulusMap,
    pub chart: ChartAssembly,
    /// Iterates of `f` realizing the first return, per sample (lower circle
    /// first).
    pub itinerary: Vec<u64>,
    pub output: FourierAnnulusMap,
    pub tail_energy: f64,
}

/// Wire form of a [`RenormTrace`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RenormTraceJson {
    pub alpha_hint: f64,
    pub n: u64,
    pub m: usize,
    pub big_l: [f64; 2],
    pub l: f64,
    pub epsilon: f64,
    pub profile: ChartProfile,
    pub mu_norm: f64,
    pub beltrami_iterations: usize,
    pub beltrami_residual: f64,
    pub jet_order: usize,
    pub jet_error: f64,
    pub residual_conj: f64,
    pub psi_linear_defect: f64,
    pub conformality_defect: f64,
    pub itinerary_histogram: BTreeMap<u64, usize>,
    pub tail_energy: f64,
    /// `(q_{m+1} alpha - p_{m+1}) / (q_m alpha - p_m) mod 1` at the hint.
    pub rotation_formula: f64,
    pub rotation: f64,
    pub input: MapJson,
    pub output: MapJson,
}

impl RenormTrace {
    /// Mean translation of the output, in `[0, 1)`.
    pub fn rotation(&self) -> f64 {
        self.output.mean().re
    }

    pub fn itinerary_histogram(&self) -> BTreeMap<u64, usize> {
        let mut h = BTreeMap::new();
        for &c in &self.itinerary {
            *h.entry(c).or_insert(0) += 1;
        }
        h
    }

    pub fn to_json(&self) -> RenormTraceJson {
        let c = &self.chart;
        RenormTraceJson {
            alpha_hint: c.alpha_hint,
            n: c.n,
            m: c.index.m,
            big_l: [c.big_l.re, c.big_l.im],
            l: c.l,
            epsilon: c.epsilon,
            profile: c.profile,
            mu_norm: c.mu.norm_inf,
            beltrami_iterations: c.qc.iterations,
            beltrami_residual: c.qc.residual,
            jet_order: c.straight.jet.order(),
            jet_error: c.straight.jet.error,
            residual_conj: c.residual_conj,
            psi_linear_defect: c.psi_linear_defect,
            conformality_defect: c.conformality_defect,
            itinerary_histogram: self.itinerary_histogram(),
            tail_energy: self.tail_energy,
            rotation_formula: c.index.beta(),
            rotation: self.rotation(),
            input: self.input.to_json(),
            output: self.output.to_json(),
        }
    }
}

/// `R f`, sampled as `Psi P Psi^{-1}` on the two boundary circles of the
/// output strip and fitted.
pub fn renormalize(f: &FourierAnnulusMap, alpha_hint: f64, cfg: &RenormConfig) -> Result<RenormTrace> {
    let chart = build_chart(f, alpha_hint, cfg)?;
    let strip = cfg.output_strip()?;
    if strip.epsilon > 2.0 * cfg.epsilon {
        return Err(Error::Domain("output strip exceeds the chart".into()));
    }
    let y = strip.epsilon;
    let n = cfg.fit.n();
    let reference = chart.return_sample(ZERO)?.0;
    let points: Vec<C64> = [-y, y]
        .iter()
        .flat_map(|&yy| (0..n).map(move |j| C64::new(j as f64 / n as f64, yy)))
        .collect();
    let samples: Vec<(C64, u64)> = points
        .par_iter()
        .map(|&w| chart.return_sample(w))
        .collect::<Result<_>>()?;
    let mut disp: Vec<C64> = points
        .iter()
        .zip(samples.iter())
        .map(|(w, (v, _))| {
            let d = v - w;
            d - (d.re - reference.re).round()
        })
        .collect();
    let upper = disp.split_off(n);
    let fit = fit_samples(disp, Some(upper), y, &cfg.fit);
    if fit.tail_energy > cfg.fit_tolerance {
        return Err(Error::Fit {
            tail: fit.tail_energy,
            tolerance: cfg.fit_tolerance,
        });
    }
    let mut series = fit.series;
    let shift = series.mean().re.floor();
    *series.coeff_mut(0) -= shift;
    let output = FourierAnnulusMap {
        strip,
        displacement: series,
        tail_energy: fit.tail_energy,
    };
    Ok(RenormTrace {
        input: f.clone(),
        itinerary: samples.iter().map(|s| s.1).collect(),
        tail_energy: fit.tail_energy,
        output,
        chart,
    })
}

/// Closed-form and finite-difference `d beta / d alpha` along rotations.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct UnstableEigenvalue {
    pub alpha: f64,
    pub m: usize,
    pub l: f64,
    /// `(-1)^m / l^2`.
    pub closed_form: f64,
    pub finite_difference: f64,
    pub delta: f64,
    pub relative_discrepancy: f64,
}

/// The expansion rate of `R` along the line of rotations at `R_alpha`.
pub fn unstable_eigenvalue(alpha: f64, cfg: &RenormConfig) -> Result<UnstableEigenvalue> {
    let index = return_index_f64(alpha)?;
    let closed = index.beta_derivative();
    let delta = cfg.fd_relative_step * index.l * index.l;
    let strip = StripDomain::new(cfg.epsilon)?;
    let beta = |a: f64| -> Result<f64> {
        Ok(renormalize(&FourierAnnulusMap::rotation(a, strip), alpha, cfg)?.rotation())
    };
    let mut diff = beta(alpha + delta)? - beta(alpha - delta)?;
    diff -= diff.round();
    let fd = diff / (2.0 * delta);
    Ok(UnstableEigenvalue {
        alpha,
        m: index.m,
        l: index.l,
        closed_form: closed,
        finite_difference: fd,
        delta,
        relative_discrepancy: ((fd - closed) / closed).abs(),
    })
}

/// `R' v` at a rotation, computed two ways.
#[derive(Clone, Debug)]
pub struct DifferentialOnV0 {
    /// Central difference of `R` along the tangent family of `v`, projected
    /// to zero mean.
    pub output: TangentField,
    /// `L_beta Q M_alpha v`, with `Q h` the central difference of the
    /// renormalized conjugacies `Psi_zeta o (id + zeta h) o (l .)`.
    pub factored: TangentField,
    /// `||output - factored|| / ||output||` on the output strip.
    pub discrepancy: f64,
    pub zeta: f64,
    /// `|mean|` removed from the central difference; roundoff in the
    /// rotation number amplified along the unstable direction.
    pub output_mean: f64,
    /// `||R' v|| / ||v||` in sup norm on `Pi_eps`.
    pub ratio: f64,
    /// `||(Q h)''|| / ||h''||` on `Pi_{0.9 eps}`.
    pub q_ratio: f64,
}

/// `R'|_{R_alpha} v` for zero-mean `v` on `Pi_eps`.
pub fn differential_on_v0(alpha: f64, v: &TangentField, cfg: &RenormConfig) -> Result<DifferentialOnV0> {
    let scale = v.sup_norm().max(1e-300);
    if !v.in_v0(1e-12 * scale) {
        return Err(Error::NonzeroMean { mean: v.mean().norm() });
    }
    let index = return_index_f64(alpha)?;
    let out_strip = cfg.output_strip()?;
    let inner = StripDomain::new(STRIP_LOSS * cfg.epsilon)?;
    let h = apply_m(v, alpha, v.strip.scaled(STRIP_LOSS))?;
    let hn = h.sup_norm();
    if hn == 0.0 {
        let z = TangentField::zero(out_strip, 0);
        return Ok(DifferentialOnV0 {
            output: z.clone(),
            factored: z,
            discrepancy: 0.0,
            zeta: 0.0,
            output_mean: 0.0,
            ratio: 0.0,
            q_ratio: 0.0,
        });
    }
    let zeta = cfg.family_size / hn;
    let map_strip = v.strip.scaled(0.8);
    let fp = tangent_family(v, alpha, C64::new(zeta, 0.0), map_strip, &cfg.fit)?;
    let fm = tangent_family(v, alpha, C64::new(-zeta, 0.0), map_strip, &cfg.fit)?;
    let rp = renormalize(&fp, alpha, cfg)?;
    let rm = renormalize(&fm, alpha, cfg)?;
    let mut diff = rp.output.displacement.sub(&rm.output.displacement);
    let wrap = diff.mean().re.round();
    *diff.coeff_mut(0) -= wrap;
    let mut diff = diff.scale(C64::new(0.5 / zeta, 0.0));
    // The family is conjugate to R_alpha, so the output mean is roundoff
    // in the rotation number amplified along the unstable direction.
    let output_mean = diff.mean().norm();
    *diff.coeff_mut(0) = C64::new(0.0, 0.0);
    let output = TangentField::new(out_strip, diff);

    let l = index.l;
    let beta = index.beta();
    let qh = |w: C64| -> Result<C64> {
        let w = w - w.re.floor();
        let z = w * l;
        let dz = h.eval(z) * zeta;
        Ok((rp.chart.psi(z + dz)?.0 - rm.chart.psi(z - dz)?.0) / (2.0 * zeta))
    };
    let factored = fit_periodic(|w| Ok(qh(w + beta)? - qh(w)?), out_strip.epsilon, &cfg.fit)?;
    let mut factored = factored.series;
    *factored.coeff_mut(0) = C64::new(0.0, 0.0);
    let factored = TangentField::new(out_strip, factored);
    let q_series = fit_periodic(qh, inner.epsilon, &cfg.fit)?.series;
    let q_ratio = q_series.second_derivative().sup_on_strip(inner.epsilon)
        / h.series.second_derivative().sup_on_strip(inner.epsilon).max(1e-300);

    let eps_strip = StripDomain::new(cfg.epsilon)?;
    let out_norm = output.sup_norm_on(eps_strip);
    let gap = output.series.sub(&factored.series).sup_on_strip(eps_strip.epsilon);
    Ok(DifferentialOnV0 {
        discrepancy: if out_norm > 0.0 { gap / out_norm } else { gap },
        output_mean,
        ratio: out_norm / v.sup_norm_on(eps_strip),
        zeta,
        q_ratio,
        output,
        factored,
    })
}

/// Output of `renormalize` for the rotation `R_alpha` on `Pi_eps`, as a
/// shorthand for tests and probes.
pub fn renormalize_rotation(alpha: f64, cfg: &RenormConfig) -> Result<RenormTrace> {
    renormalize(&FourierAnnulusMap::rotation(alpha, StripDomain::new(cfg.epsilon)?), alpha, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfrac::{expand, return_index, Alpha};
    use crate::circlemap::{distance, FourierSeries};

    fn golden() -> f64 {
        (5f64.sqrt() - 1.0) / 2.0
    }

    fn perturbed(alpha: f64, size: f64, eps: f64) -> FourierAnnulusMap {
        // alpha + size sin(2 pi z) / (2 pi)
        let c = C64::new(0.0, -size / (2.0 * TWO_PI));
        let s = FourierSeries::from_modes(&[(0, C64::new(alpha, 0.0)), (1, c), (-1, -c)]);
        FourierAnnulusMap::new(StripDomain::new(eps).unwrap(), s)
    }

    #[test]
    fn blend_is_flat_at_the_ends() {
        assert_eq!(blend(0.05), (0.0, 0.0));
        assert_eq!(blend(0.95), (1.0, 0.0));
        let (c, d) = blend(0.5);
        assert!((c - 0.5).abs() < 1e-12 && d > 0.0);
        for k in 1..100 {
            let t = k as f64 / 100.0;
            assert!(blend(t).0 >= blend(t - 0.01).0);
        }
    }

    #[test]
    fn rotation_renormalizes_to_rotation() {
        let cfg = RenormConfig::default();
        let tr = renormalize_rotation(golden(), &cfg).unwrap();
        let beta = 1.0 - golden();
        assert!((tr.rotation() - beta).abs() < 1e-8);
        assert!(tr.tail_energy < 1e-9);
        assert!(tr.output.displacement.modes().all(|(k, c)| k == 0 || c.norm() < 1e-9));
        assert!(tr.chart.mu.norm_inf < 1e-12);
        let hist = tr.itinerary_histogram();
        assert_eq!(hist.keys().copied().collect::<Vec<_>>(), vec![144, 233]);
        let cf = expand(&Alpha::golden(), 60).unwrap();
        assert_eq!(return_index(&cf).unwrap().n, tr.chart.n);
    }

    #[test]
    fn silver_rotation_goes_to_shifted_angle() {
        let a = 2f64.sqrt() - 1.0;
        let tr = renormalize_rotation(a, &RenormConfig::default()).unwrap();
        let idx = return_index_f64(a).unwrap();
        assert!((tr.rotation() - idx.beta()).abs() < 1e-8);
    }

    #[test]
    fn chart_conjugates_return_to_translation() {
        let cfg = RenormConfig::default();
        let f = perturbed(golden(), 1e-4, 1.0);
        let tr = renormalize(&f, golden(), &cfg).unwrap();
        let c = &tr.chart;
        assert!(c.residual_conj < 1e-6, "{}", c.residual_conj);
        assert!(c.conformality_defect < 1e-8, "{}", c.conformality_defect);
        assert!(c.mu.norm_inf > 0.0 && c.mu.norm_inf < 1e-3);
        for w in [C64::new(0.3, 0.2), C64::new(0.7, -0.5)] {
            let (z, _) = c.psi_inverse(w).unwrap();
            assert!((c.psi(z).unwrap().0 - w).norm() < 1e-9);
        }
        assert!(tr.output.is_real_symmetric(1e-10));
        let r0 = renormalize_rotation(golden(), &cfg).unwrap();
        assert!(distance(&tr.output, &r0.output) < 1e-2);
    }

    #[test]
    fn linear_profile_gives_the_same_map() {
        let f = perturbed(golden(), 1e-4, 1.0);
        let smooth = renormalize(&f, golden(), &RenormConfig::default()).unwrap();
        let cfg = RenormConfig { profile: ChartProfile::Linear, ..RenormConfig::default() };
        let linear = renormalize(&f, golden(), &cfg).unwrap();
        assert!(linear.chart.residual_conj < 1e-6);
        let d = distance(&smooth.output, &linear.output);
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn far_map_is_rejected() {
        let f = perturbed(golden(), 0.3, 1.0);
        let err = renormalize(&f, golden(), &RenormConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Admissibility(_) | Error::Degenerate(_)), "{err}");
    }

    #[test]
    fn itinerary_is_two_valued() {
        let f = perturbed(golden(), 1e-4, 1.0);
        let tr = renormalize(&f, golden(), &RenormConfig::default()).unwrap();
        let idx = &tr.chart.index;
        for &k in tr.itinerary_histogram().keys() {
            assert!(k == idx.q_next || k == idx.q_next + idx.n, "{k}");
        }
    }

    #[test]
    fn unstable_eigenvalue_matches_closed_form() {
        let e = unstable_eigenvalue(golden(), &RenormConfig::default()).unwrap();
        assert!((e.closed_form - golden().powi(-22)).abs() < 1e-6 * e.closed_form);
        assert!(e.relative_discrepancy < 1e-3, "{e:?}");
    }

    #[test]
    fn differential_on_v0_factors_through_q() {
        let cfg = RenormConfig::default();
        for seed in [0, 3] {
            let v = TangentField::random(StripDomain::new(1.0).unwrap(), 8, seed, true);
            let d = differential_on_v0(golden(), &v, &cfg).unwrap();
            assert!(d.discrepancy < 5e-2, "{}", d.discrepancy);
            assert!(d.ratio < 1.0);
            assert!(d.output.mean().norm() == 0.0);
        }
    }

    #[test]
    fn differential_of_zero_is_zero() {
        let v = TangentField::zero(StripDomain::new(1.0).unwrap(), 4);
        let d = differential_on_v0(golden(), &v, &RenormConfig::default()).unwrap();
        assert_eq!(d.ratio, 0.0);
    }
}
