//! Analytic maps of the annulus `Pi_eps = {|Im z| < eps}` commuting with
//! `z -> z + 1`, stored as `z + sum_{|k| <= d} c_k e^{2 pi i k z}`.

use std::f64::consts::PI;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

const TWO_PI: f64 = 2.0 * PI;

/// Relative slack when testing whether a point lies in a closed strip.
const STRIP_SLACK: f64 = 1e-9;

/// Largest `2 pi |k| |Im z|` for which mode powers are built by repeated
/// multiplication; beyond it each term goes through `exp` of its logarithm.
const POWER_PATH_LIMIT: f64 = 600.0;

/// The strip `Pi_eps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripDomain {
    pub epsilon: f64,
}

impl StripDomain {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon.is_finite() && epsilon > 0.0 {
            Ok(Self { epsilon })
        } else {
            Err(Error::Domain(format!("strip half-width {epsilon} must be positive")))
        }
    }

    /// Closed-strip membership with a small relative slack.
    pub fn contains(&self, z: C64) -> bool {
        z.im.abs() <= self.epsilon * (1.0 + STRIP_SLACK)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            epsilon: self.epsilon * factor,
        }
    }
}

/// `e^{2 pi i z}`.
pub fn e1(z: C64) -> C64 {
    C64::from_polar((-TWO_PI * z.im).exp(), TWO_PI * z.re)
}

/// A trigonometric polynomial `sum_{|k| <= d} c_k e^{2 pi i k z}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierSeries {
    /// `c_k` at index `k + d`.
    coeffs: Vec<C64>,
}

impl FourierSeries {
    pub fn zero(degree: usize) -> Self {
        Self {
            coeffs: vec![C64::new(0.0, 0.0); 2 * degree + 1],
        }
    }

    pub fn constant(c: C64) -> Self {
        Self { coeffs: vec![c] }
    }

    /// From `(k, c_k)` pairs; the degree is the largest `|k|`.
    pub fn from_modes(modes: &[(i64, C64)]) -> Self {
        let d = modes.iter().map(|(k, _)| k.unsigned_abs() as usize).max().unwrap_or(0);
        let mut s = Self::zero(d);
        for &(k, c) in modes {
            *s.coeff_mut(k) += c;
        }
        s
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() / 2
    }

    pub fn coeff(&self, k: i64) -> C64 {
        let d = self.degree() as i64;
        if k.abs() > d {
            C64::new(0.0, 0.0)
        } else {
            self.coeffs[(k + d) as usize]
        }
    }

    /// Panics if `|k|` exceeds the degree.
    pub fn coeff_mut(&mut self, k: i64) -> &mut C64 {
        let d = self.degree() as i64;
        assert!(k.abs() <= d, "mode {k} beyond degree {d}");
        &mut self.coeffs[(k + d) as usize]
    }

    pub fn modes(&self) -> impl Iterator<Item = (i64, C64)> + '_ {
        let d = self.degree() as i64;
        self.coeffs.iter().enumerate().map(move |(i, c)| (i as i64 - d, *c))
    }

    pub fn mean(&self) -> C64 {
        self.coeff(0)
    }

    /// Same series padded or truncated to `degree`.
    pub fn with_degree(&self, degree: usize) -> Self {
        let mut s = Self::zero(degree);
        for (k, c) in self.modes() {
            if k.unsigned_abs() as usize <= degree {
                *s.coeff_mut(k) = c;
            }
        }
        s
    }

    pub fn map_modes(&self, f: impl Fn(i64, C64) -> C64) -> Self {
        let d = self.degree() as i64;
        Self {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| f(i as i64 - d, *c))
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let d = self.degree().max(other.degree());
        let mut s = self.with_degree(d);
        for (k, c) in other.modes() {
            *s.coeff_mut(k) += c;
        }
        s
    }

    pub fn scale(&self, a: C64) -> Self {
        self.map_modes(|_, c| c * a)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    /// `(v, v', v'')` at `z`.
    pub fn jet(&self, z: C64) -> [C64; 3] {
        let d = self.degree();
        let mut out = [self.coeffs[d], C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
        if d == 0 {
            return out;
        }
        let tw = C64::new(0.0, TWO_PI);
        let mut add = |k: f64, term: C64| {
            out[0] += term;
            out[1] += tw * k * term;
            out[2] += tw * tw * k * k * term;
        };
        if TWO_PI * d as f64 * z.im.abs() < POWER_PATH_LIMIT {
            let w = e1(z);
            let winv = w.inv();
            let (mut wp, mut wn) = (w, winv);
            for k in 1..=d {
                add(k as f64, self.coeffs[d + k] * wp);
                add(-(k as f64), self.coeffs[d - k] * wn);
                wp *= w;
                wn *= winv;
            }
        } else {
            for k in 1..=d {
                for (kk, c) in [(k as f64, self.coeffs[d + k]), (-(k as f64), self.coeffs[d - k])] {
                    if c.norm() == 0.0 {
                        continue;
                    }
                    let logmag = c.norm().ln() - TWO_PI * kk * z.im;
                    let phase = c.arg() + TWO_PI * kk * z.re;
                    add(kk, C64::from_polar(logmag.exp(), phase));
                }
            }
        }
        out
    }

    pub fn eval(&self, z: C64) -> C64 {
        self.jet(z)[0]
    }

    pub fn derivative(&self) -> Self {
        self.map_modes(|k, c| c * C64::new(0.0, TWO_PI * k as f64))
    }

    pub fn second_derivative(&self) -> Self {
        self.map_modes(|k, c| c * (-(TWO_PI * k as f64).powi(2)))
    }

    /// Shift of the argument: `z -> v(z + a)`.
    pub fn shifted(&self, a: C64) -> Self {
        self.map_modes(|k, c| c * e1(a * k as f64))
    }

    /// Sup of `|v|` on the closed strip, sampled on its two boundary lines.
    pub fn sup_on_strip(&self, epsilon: f64) -> f64 {
        let n = sample_count(self.degree());
        [-epsilon, epsilon]
            .iter()
            .flat_map(|&y| (0..n).map(move |j| C64::new(j as f64 / n as f64, y)))
            .map(|z| self.eval(z).norm())
            .fold(0.0, f64::max)
    }

    /// `max_k |c_k| e^{2 pi |k| eps}`, the largest mode size on the boundary.
    pub fn boundary_mode_size(&self, epsilon: f64) -> f64 {
        self.modes()
            .map(|(k, c)| c.norm() * (TWO_PI * k.abs() as f64 * epsilon).exp())
            .fold(0.0, f64::max)
    }

    /// `L^2` norm on the circle `Im z = y`.
    pub fn l2_on_line(&self, y: f64) -> f64 {
        self.modes()
            .map(|(k, c)| (c.norm() * (-TWO_PI * k as f64 * y).exp()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Projection onto series with `c_{-k} = conj(c_k)`.
    pub fn real_part(&self) -> Self {
        self.map_modes(|k, c| 0.5 * (c + self.coeff(-k).conj()))
    }

    pub fn is_real_symmetric(&self, tol: f64) -> bool {
        self.modes()
            .all(|(k, c)| (c - self.coeff(-k).conj()).norm() <= tol * (1.0 + c.norm()))
    }
}

/// Samples per circle used for sup norms.
fn sample_count(degree: usize) -> usize {
    (8 * degree).max(256)
}

/// Result of fitting a periodic function by DFT on two horizontal circles.
#[derive(Clone, Debug)]
pub struct SeriesFit {
    pub series: FourierSeries,
    /// `L^2` size of the DFT modes with `|k| > degree` on the sampling circle
    /// (worst of the circles used).
    pub tail_energy: f64,
}

/// Settings for DFT fits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub degree: usize,
    /// Samples per circle; raised to at least `4 * degree`.
    pub samples: usize,
    /// Modes whose sampled magnitude falls below this fraction of the
    /// largest sampled magnitude are discarded as noise.
    pub noise_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            degree: 64,
            samples: 256,
            noise_floor: 1e-15,
        }
    }
}

impl FitConfig {
    /// Samples per circle actually used.
    pub fn n(&self) -> usize {
        self.samples.max(4 * self.degree).max(8)
    }
}

fn dft(samples: &mut [C64]) {
    let n = samples.len();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(samples);
    let s = 1.0 / n as f64;
    for x in samples.iter_mut() {
        *x *= s;
    }
}

/// Index of mode `k` in an `n`-point DFT.
fn bin(k: i64, n: usize) -> usize {
    k.rem_euclid(n as i64) as usize
}

fn sample_line<F>(y: f64, n: usize, f: &F) -> Result<Vec<C64>>
where
    F: Fn(C64) -> Result<C64> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|j| f(C64::new(j as f64 / n as f64, y)))
        .collect()
}

fn tail_of(spec: &[C64], degree: usize) -> f64 {
    let n = spec.len() as i64;
    let d = degree as i64;
    let mut t = 0.0;
    for j in 0..n {
        let k = if j <= n / 2 { j } else { j - n };
        if k.abs() > d {
            t += spec[j as usize].norm_sqr();
        }
    }
    t.sqrt()
}

/// Fits `f` (periodic) by a degree-`cfg.degree` series. Positive modes are
/// read off the circle `Im z = -y`, negative ones off `Im z = +y`, where each
/// is least sensitive to sampling noise.
pub fn fit_periodic<F>(f: F, y: f64, cfg: &FitConfig) -> Result<SeriesFit>
where
    F: Fn(C64) -> Result<C64> + Sync,
{
    let n = cfg.n();
    if y == 0.0 {
        return Ok(fit_samples(sample_line(0.0, n, &f)?, None, 0.0, cfg));
    }
    let y = y.abs();
    let lower = sample_line(-y, n, &f)?;
    let upper = sample_line(y, n, &f)?;
    Ok(fit_samples(lower, Some(upper), y, cfg))
}

/// Fit from samples at `x_j = j / n` on `Im z = -y` (`lower`) and `Im z = +y`
/// (`upper`). With `upper = None`, `lower` holds samples on the single line
/// `Im z = y` and supplies every mode.
pub fn fit_samples(
    mut lower: Vec<C64>,
    upper: Option<Vec<C64>>,
    y: f64,
    cfg: &FitConfig,
) -> SeriesFit {
    let n = lower.len();
    let d = cfg.degree.min(n / 2 - 1);
    let mut out = FourierSeries::zero(d);
    dft(&mut lower);
    let floor_lo = cfg.noise_floor * lower.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let Some(mut upper) = upper else {
        for k in -(d as i64)..=(d as i64) {
            let c = lower[bin(k, n)];
            if c.norm() >= floor_lo {
                *out.coeff_mut(k) = c * (TWO_PI * k as f64 * y).exp();
            }
        }
        return SeriesFit {
            tail_energy: tail_of(&lower, d),
            series: out,
        };
    };
    let y = y.abs();
    dft(&mut upper);
    let floor_up = cfg.noise_floor * upper.iter().map(|c| c.norm()).fold(0.0, f64::max);
    *out.coeff_mut(0) = 0.5 * (lower[0] + upper[0]);
    for k in 1..=(d as i64) {
        let cl = lower[bin(k, n)];
        if cl.norm() >= floor_lo {
            *out.coeff_mut(k) = cl * (-TWO_PI * k as f64 * y).exp();
        }
        let cu = upper[bin(-k, n)];
        if cu.norm() >= floor_up {
            *out.coeff_mut(-k) = cu * (-TWO_PI * k as f64 * y).exp();
        }
    }
    SeriesFit {
        tail_energy: tail_of(&lower, d).max(tail_of(&upper, d)),
        series: out,
    }
}

/// Wire form of a map.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MapJson {
    pub epsilon: f64,
    pub mean: [f64; 2],
    pub coeffs: Vec<(i64, f64, f64)>,
    pub real_symmetric: bool,
}

/// `f(z) = z + mean + sum_{0 < |k| <= d} c_k e^{2 pi i k z}` on `Pi_eps`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierAnnulusMap {
    pub strip: StripDomain,
    /// `f - id`, with the mean translation as mode zero.
    pub displacement: FourierSeries,
    /// Truncation record of the fit that produced this map (0 if exact).
    pub tail_energy: f64,
}

impl FourierAnnulusMap {
    pub fn new(strip: StripDomain, displacement: FourierSeries) -> Self {
        Self {
            strip,
            displacement,
            tail_energy: 0.0,
        }
    }

    /// `R_alpha`.
    pub fn rotation(alpha: f64, strip: StripDomain) -> Self {
        Self::new(strip, FourierSeries::constant(C64::new(alpha, 0.0)))
    }

    pub fn identity(strip: StripDomain) -> Self {
        Self::rotation(0.0, strip)
    }

    pub fn mean(&self) -> C64 {
        self.displacement.mean()
    }

    pub fn degree(&self) -> usize {
        self.displacement.degree()
    }

    pub fn coeff(&self, k: i64) -> C64 {
        self.displacement.coeff(k)
    }

    pub fn is_real_symmetric(&self, tol: f64) -> bool {
        self.displacement.is_real_symmetric(tol)
    }

    pub fn real_part(&self) -> Self {
        Self::new(self.strip, self.displacement.real_part())
    }

    /// `f(z)` for `z` in the closed strip.
    pub fn evaluate(&self, z: C64) -> Result<C64> {
        if !self.strip.contains(z) {
            return Err(Error::Domain(format!(
                "{z} is outside the strip of half-width {}",
                self.strip.epsilon
            )));
        }
        Ok(self.eval(z))
    }

    /// `f(z)` without the strip check; the series is entire.
    pub fn eval(&self, z: C64) -> C64 {
        z + self.displacement.eval(z)
    }

    /// `(f(z), f'(z), f''(z))`.
    pub fn jet(&self, z: C64) -> [C64; 3] {
        let [v, dv, ddv] = self.displacement.jet(z);
        [z + v, dv + 1.0, ddv]
    }

    pub fn derivative(&self, z: C64) -> C64 {
        self.jet(z)[1]
    }

    /// `f^n(z)`, checking the orbit stays in the strip.
    pub fn iterate(&self, mut z: C64, n: u64) -> Result<C64> {
        for _ in 0..n {
            z = self.eval(z);
            if !self.strip.contains(z) {
                return Err(Error::Escape(format!("{z} under iteration")));
            }
        }
        Ok(z)
    }

    /// Truncation bound: `|c_k| e^{2 pi |k| eps} / ||f - id - mean||`, at most
    /// 1 for an analytic map on the strip.
    pub fn decay_certificate(&self) -> f64 {
        let mut v = self.displacement.clone();
        *v.coeff_mut(0) = C64::new(0.0, 0.0);
        let sup = v.sup_on_strip(self.strip.epsilon);
        if sup == 0.0 {
            return 0.0;
        }
        v.boundary_mode_size(self.strip.epsilon) / sup
    }

    /// `sup |f' - 1|` on the boundary circles; below 1 certifies univalence.
    pub fn univalence_margin(&self) -> f64 {
        self.displacement
            .derivative()
            .sup_on_strip(self.strip.epsilon)
    }

    /// Solves `f(z) = w` by Newton's method seeded at `w - mean`.
    pub fn solve(&self, w: C64) -> Result<C64> {
        let mut z = w - self.mean();
        for _ in 0..60 {
            let [fz, dfz, _] = self.jet(z);
            let step = (fz - w) / dfz;
            z -= step;
            if step.norm() <= 1e-15 * (1.0 + z.norm()) {
                return Ok(z);
            }
        }
        let r = (self.eval(z) - w).norm();
        if r < 1e-12 {
            return Ok(z);
        }
        Err(Error::NonConvergence {
            what: "pointwise inversion",
            iterations: 60,
            last_error: r,
        })
    }

    pub fn to_json(&self) -> MapJson {
        let m = self.mean();
        MapJson {
            epsilon: self.strip.epsilon,
            mean: [m.re, m.im],
            coeffs: self
                .displacement
                .modes()
                .filter(|(k, c)| *k != 0 && c.norm() != 0.0)
                .map(|(k, c)| (k, c.re, c.im))
                .collect(),
            real_symmetric: self.is_real_symmetric(1e-14),
        }
    }

    pub fn from_json(j: &MapJson) -> Result<Self> {
        let strip = StripDomain::new(j.epsilon)?;
        let mut modes: Vec<(i64, C64)> = vec![(0, C64::new(j.mean[0], j.mean[1]))];
        modes.extend(j.coeffs.iter().map(|&(k, re, im)| (k, C64::new(re, im))));
        if j.coeffs.iter().any(|c| c.0 == 0) {
            return Err(Error::Domain("mode 0 belongs in \"mean\"".into()));
        }
        Ok(Self::new(strip, FourierSeries::from_modes(&modes)))
    }
}

/// Fits `z -> phi(z)` with `phi - id` periodic as a map on `strip`.
pub fn fit_map<F>(phi: F, strip: StripDomain, cfg: &FitConfig) -> Result<FourierAnnulusMap>
where
    F: Fn(C64) -> Result<C64> + Sync,
{
    let fit = fit_periodic(|z| phi(z).map(|w| w - z), strip.epsilon, cfg)?;
    Ok(FourierAnnulusMap {
        strip,
        displacement: fit.series,
        tail_energy: fit.tail_energy,
    })
}

/// `f o g` on `target`, refitted at degree `cfg.degree`.
pub fn compose_on(
    f: &FourierAnnulusMap,
    g: &FourierAnnulusMap,
    target: StripDomain,
    cfg: &FitConfig,
) -> Result<FourierAnnulusMap> {
    fit_map(
        |z| {
            let gz = g.eval(z);
            if !f.strip.contains(gz) {
                return Err(Error::Escape(format!(
                    "g({z}) = {gz} leaves the strip of f"
                )));
            }
            Ok(f.eval(gz))
        },
        target,
        cfg,
    )
}

/// `f o g` on the strip of `g`.
pub fn compose(
    f: &FourierAnnulusMap,
    g: &FourierAnnulusMap,
    cfg: &FitConfig,
) -> Result<FourierAnnulusMap> {
    compose_on(f, g, g.strip, cfg)
}

/// `f^{-1}` on `target`, by pointwise Newton solves on the sampling circles.
pub fn invert(
    f: &FourierAnnulusMap,
    target: StripDomain,
    cfg: &FitConfig,
) -> Result<FourierAnnulusMap> {
    let margin = f.univalence_margin();
    if margin >= 1.0 {
        return Err(Error::Univalence(format!(
            "sup |f' - 1| = {margin:.3} on the strip boundary"
        )));
    }
    fit_map(
        |w| {
            let z = f.solve(w)?;
            if !f.strip.contains(z) {
                return Err(Error::Escape(format!("preimage of {w} leaves the strip")));
            }
            Ok(z)
        },
        target,
        cfg,
    )
}

/// Distance in `C/Z`-valued sup norm on the common strip.
pub fn distance(f: &FourierAnnulusMap, g: &FourierAnnulusMap) -> f64 {
    let eps = f.strip.epsilon.min(g.strip.epsilon);
    let diff = f.displacement.sub(&g.displacement);
    let shift = diff.mean().re.round();
    let mut best = f64::INFINITY;
    for j in [shift - 1.0, shift, shift + 1.0] {
        let mut d = diff.clone();
        *d.coeff_mut(0) -= j;
        best = best.min(d.sup_on_strip(eps));
    }
    best
}

/// Rotation number with a plain and an accelerated estimate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RotationEstimate {
    /// Accelerated value.
    pub value: f64,
    /// Lift average `F^N(0)/N`.
    pub plain: f64,
    /// Weighted Birkhoff average of the displacement.
    pub birkhoff: f64,
    pub error_estimate: f64,
    pub iterations: u64,
}

/// `rho(f)` from the lift orbit of 0. The accelerated value combines the two
/// latest closest returns `x_{q_i} - p_i = r_i` as
/// `(r_1 p_2 - r_2 p_1) / (r_1 q_2 - r_2 q_1)`, exact for rotations.
pub fn rotation_number(f: &FourierAnnulusMap, iterations: u64) -> Result<RotationEstimate> {
    if !f.is_real_symmetric(1e-12) {
        return Err(Error::Domain("rotation number needs a real-symmetric map".into()));
    }
    if iterations == 0 {
        return Err(Error::Domain("need at least one iteration".into()));
    }
    let probe = 512;
    for j in 0..probe {
        let x = C64::new(j as f64 / probe as f64, 0.0);
        if f.derivative(x).re <= 0.0 {
            return Err(Error::Domain(format!(
                "map is not monotone on the circle (f'({}) <= 0)",
                x.re
            )));
        }
    }
    let mut int_part: i64 = 0;
    let mut frac = 0.0f64;
    let mut best = f64::INFINITY;
    let mut returns: Vec<(f64, f64, f64)> = Vec::new();
    let mut wsum = 0.0;
    let mut wtot = 0.0;
    for k in 1..=iterations {
        let y = f.eval(C64::new(frac, 0.0)).re;
        let step = y - frac;
        let t = (k as f64 - 0.5) / iterations as f64;
        let w = (-1.0 / (t * (1.0 - t))).exp();
        wsum += w * step;
        wtot += w;
        let fl = y.floor();
        int_part += fl as i64;
        frac = y - fl;
        let r = if frac > 0.5 { frac - 1.0 } else { frac };
        if r.abs() < best && r != 0.0 {
            best = r.abs();
            let p = int_part as f64 + if frac > 0.5 { 1.0 } else { 0.0 };
            returns.push((k as f64, p, r));
        } else if r == 0.0 {
            // exact return: periodic orbit through 0
            let p = int_part as f64;
            let v = p / k as f64;
            return Ok(RotationEstimate {
                value: v,
                plain: v,
                birkhoff: v,
                error_estimate: 0.0,
                iterations: k,
            });
        }
    }
    let plain = (int_part as f64 + frac) / iterations as f64;
    let birkhoff = if wtot > 0.0 { wsum / wtot } else { plain };
    let value = match returns.as_slice() {
        [.., (q1, p1, r1), (q2, p2, r2)] => {
            let den = r1 * q2 - r2 * q1;
            if den != 0.0 {
                (r1 * p2 - r2 * p1) / den
            } else {
                birkhoff
            }
        }
        _ => birkhoff,
    };
    Ok(RotationEstimate {
        value,
        plain,
        birkhoff,
        error_estimate: (value - birkhoff).abs().max(f64::EPSILON),
        iterations,
    })
}

/// A vector field `v(z) = mean + sum a_k e^{2 pi i k z}` on a strip.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentField {
    pub strip: StripDomain,
    pub series: FourierSeries,
}

impl TangentField {
    pub fn new(strip: StripDomain, series: FourierSeries) -> Self {
        Self { strip, series }
    }

    pub fn zero(strip: StripDomain, degree: usize) -> Self {
        Self::new(strip, FourierSeries::zero(degree))
    }

    /// The constant field 1, spanning `V_1`.
    pub fn unit(strip: StripDomain) -> Self {
        Self::new(strip, FourierSeries::constant(C64::new(1.0, 0.0)))
    }

    /// Zero-mean field with `a_k = r_k e^{-2 pi |k| eps}`, `r_k` uniform in
    /// the unit disc; `real` imposes `a_{-k} = conj(a_k)`.
    pub fn random(strip: StripDomain, degree: usize, seed: u64, real: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = FourierSeries::zero(degree);
        let draw = |rng: &mut ChaCha8Rng| loop {
            let c = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if c.norm() <= 1.0 {
                return c;
            }
        };
        for k in 1..=degree as i64 {
            let decay = (-TWO_PI * k as f64 * strip.epsilon).exp();
            let a = draw(&mut rng) * decay;
            *s.coeff_mut(k) = a;
            *s.coeff_mut(-k) = if real { a.conj() } else { draw(&mut rng) * decay };
        }
        Self::new(strip, s)
    }

    pub fn mean(&self) -> C64 {
        self.series.mean()
    }

    pub fn degree(&self) -> usize {
        self.series.degree()
    }

    pub fn eval(&self, z: C64) -> C64 {
        self.series.eval(z)
    }

    pub fn in_v0(&self, tol: f64) -> bool {
        self.mean().norm() <= tol
    }

    pub fn in_v1(&self, tol: f64) -> bool {
        self.series.modes().all(|(k, c)| k == 0 || c.norm() <= tol)
    }

    /// Zero-mean part.
    pub fn project_v0(&self) -> Self {
        let mut s = self.series.clone();
        *s.coeff_mut(0) = C64::new(0.0, 0.0);
        Self::new(self.strip, s)
    }

    /// Mean part, as a multiple of the unit field.
    pub fn project_v1(&self) -> Self {
        Self::new(self.strip, FourierSeries::constant(self.mean()))
    }

    /// Sup norm on the field's own strip.
    pub fn sup_norm(&self) -> f64 {
        self.series.sup_on_strip(self.strip.epsilon)
    }

    pub fn sup_norm_on(&self, strip: StripDomain) -> f64 {
        self.series.sup_on_strip(strip.epsilon)
    }

    /// `||v''||` on the field's strip.
    pub fn second_derivative_norm(&self) -> f64 {
        self.series.second_derivative().sup_on_strip(self.strip.epsilon)
    }

    /// `L^2` norm on the real circle.
    pub fn l2_norm(&self) -> f64 {
        self.series.l2_on_line(0.0)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::new(self.strip, self.series.add(&other.series))
    }

    pub fn scale(&self, a: f64) -> Self {
        Self::new(self.strip, self.series.scale(C64::new(a, 0.0)))
    }
}
