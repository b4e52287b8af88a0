//! Numerical probes of the dynamics near rotations: a Newton (KAM)
//! linearizer, convergence of iterated renormalization, the invariant curve
//! through 0, the stable-leaf functional and a hyperbolicity report.



use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfrac::{renormalized_alpha, return_index_f64, Alpha};
use crate::circlemap::{
    distance, fit_map, fit_periodic, FitConfig, FourierAnnulusMap, FourierSeries, StripDomain,
    TangentField, C64,
};
use crate::cohom::{solve_homological, STRIP_LOSS};
use crate::error::{Error, Result};
use crate::renorm::{differential_on_v0, renormalize, unstable_eigenvalue, RenormConfig, RenormTrace};


#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct KamConfig {
    pub max_steps: usize,
    /// Stop once the conjugacy error falls below this.
    pub tolerance: f64,
    /// The conjugacy is sought on this fraction of the map's strip.
    pub strip_fraction: f64,
    pub fit: FitConfig,
}

impl Default for KamConfig {
    fn default() -> Self {
        Self {
            max_steps: 12,
            tolerance: 1e-13,
            strip_fraction: 0.5,
            fit: FitConfig::default(),
        }
    }
}

/// Outcome of the Newton iteration for `f o xi = xi o R_alpha`.
#[derive(Clone, Debug)]
pub struct KamReport {
    pub xi: FourierAnnulusMap,
    pub alpha: f64,
    /// `sup |f(xi) - xi(. + alpha)|` on the strip of `xi`, before each step
    /// and after the last.
    pub errors: Vec<f64>,
    /// Mean of `e / xi'(. + alpha)` per step; it cannot be removed by a
    /// change of coordinates and stays away from 0 when `rho(f) != alpha`.
    pub obstructions: Vec<f64>,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KamJson {
    pub alpha: f64,
    pub converged: bool,
    pub steps: usize,
    pub errors: Vec<f64>,
    pub obstructions: Vec<f64>,
    pub quadratic_constants: Vec<f64>,
    pub xi: crate::circlemap::MapJson,
}

impl KamReport {
    pub fn steps(&self) -> usize {
        self.errors.len().saturating_sub(1)
    }

    pub fn final_error(&self) -> f64 {
        self.errors.last().copied().unwrap_or(f64::INFINITY)
    }

    /// `e_{k+1} / e_k^2` for the steps above the tolerance floor.
    pub fn quadratic_constants(&self, floor: f64) -> Vec<f64> {
        self.errors
            .windows(2)
            .filter(|w| w[1] > floor && w[0] > 0.0)
            .map(|w| w[1] / (w[0] * w[0]))
            .collect()
    }

    pub fn to_json(&self) -> KamJson {
        KamJson {
            alpha: self.alpha,
            converged: self.converged,
            steps: self.steps(),
            errors: self.errors.clone(),
            obstructions: self.obstructions.clone(),
            quadratic_constants: self.quadratic_constants(1e-12),
            xi: self.xi.to_json(),
        }
    }
}

/// Newton iteration for `xi` with `xi(0) = 0` and `f o xi = xi o R_alpha`.
///
/// With `e = f(xi) - xi(. + alpha)`, each step solves
/// `w(z + alpha) - w(z) = e(z) / xi'(z + alpha)` after removing the mean,
/// and updates `xi <- xi + xi' w`.
pub fn kam_linearize(f: &FourierAnnulusMap, alpha: f64, cfg: &KamConfig) -> Result<KamReport> {
    let outer = StripDomain::new(cfg.strip_fraction * f.strip.epsilon)?;
    let inner = outer.scaled(STRIP_LOSS);
    let mut xi = FourierAnnulusMap::identity(inner);
    let mut errors = Vec::new();
    let mut obstructions = Vec::new();
    let a = C64::new(alpha, 0.0);
    for step in 0..=cfg.max_steps {
        let err = fit_periodic(
            |z| {
                let w = xi.eval(z);
                if !f.strip.contains(w) {
                    return Err(Error::Escape(format!("xi({z}) = {w} leaves the strip of f")));
                }
                Ok(f.eval(w) - xi.eval(z + a))
            },
            inner.epsilon,
            &cfg.fit,
        )?
        .series;
        let size = err.sup_on_strip(inner.epsilon);
        errors.push(size);
        if size < cfg.tolerance {
            return Ok(KamReport { xi, alpha, errors, obstructions, converged: true });
        }
        if step == cfg.max_steps || !size.is_finite() || (step > 2 && size > errors[step - 1]) {
            break;
        }
        let mut rhs = fit_periodic(
            |z| Ok(err.eval(z) / xi.derivative(z + a)),
            inner.epsilon,
            &cfg.fit,
        )?
        .series;
        obstructions.push(rhs.mean().norm());
        *rhs.coeff_mut(0) = C64::new(0.0, 0.0);
        // All series are sampled on `inner`; the truncated right-hand side
        // is entire, so labelling it with the wider strip only records
        // where the estimates for `w` come from.
        let w = solve_homological(&TangentField::new(outer, rhs), alpha, inner)?.h;
        let next = fit_map(|z| Ok(xi.eval(z) + xi.derivative(z) * w.eval(z)), inner, &cfg.fit)?;
        xi = next;
    }
    Ok(KamReport { xi, alpha, errors, obstructions, converged: false })
}

/// Distances `d_k = dist(R^k f, R^k R_alpha)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub alpha: f64,
    /// Whether the rotation number was held; only real-symmetric maps can
    /// be pinned.
    pub pinned: bool,
    pub distances: Vec<f64>,
    /// Distances before the rotation-number correction; equal to
    /// `distances` when not pinned.
    pub raw_distances: Vec<f64>,
    /// Angles of `R^k R_alpha`, used as the hints at step `k`.
    pub angles: Vec<f64>,
    /// Mean shift applied to `R^k f` to restore its rotation number,
    /// starting with the input.
    pub corrections: Vec<f64>,
    /// `sup |xi''/xi'|` of the linearizer of `R^k f`, when it converged.
    pub nonlinearity: Vec<Option<f64>>,
    /// Set when a step failed; the lists hold the steps before it.
    pub failure: Option<String>,
}

impl ConvergenceReport {
    pub fn ratios(&self) -> Vec<f64> {
        self.distances.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceConfig {
    /// Hold `R^k f` in the conjugacy class of `R^k R_alpha`: the angles come
    /// exactly from the continued fraction and the mean of each `R^k f` is
    /// shifted until its rotation number matches. Roundoff along the
    /// expanding direction is otherwise multiplied by `1/l^2` per step.
    pub pin_rotation: bool,
    /// Orbit length for rotation numbers when pinning.
    pub rotation_iterations: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self { pin_rotation: true, rotation_iterations: 200_000 }
    }
}

fn nonlinearity(xi: &FourierAnnulusMap) -> f64 {
    let eps = xi.strip.epsilon;
    let n = 256;
    (0..n)
        .flat_map(|j| {
            let x = j as f64 / n as f64;
            [C64::new(x, 0.0), C64::new(x, eps), C64::new(x, -eps)]
        })
        .map(|z| {
            let [_, d1, d2] = xi.jet(z);
            (d2 / d1).norm()
        })
        .fold(0.0, f64::max)
}

/// Shifts the mean of `f` so that `rho(f) = target`, by secant steps.
/// Renormalized real maps are real only up to roundoff, so the real part is
/// pinned.
fn pin_rotation(f: &FourierAnnulusMap, target: f64, iterations: u64) -> Result<(FourierAnnulusMap, f64)> {
    let f = &f.real_part();
    let shifted = |d: f64| {
        let mut s = f.displacement.clone();
        *s.coeff_mut(0) += d;
        FourierAnnulusMap::new(f.strip, s)
    };
    let residual = |d: f64| -> Result<f64> {
        let r = crate::circlemap::rotation_number(&shifted(d), iterations)?.value - target;
        Ok(r - r.round())
    };
    let mut d0 = 0.0;
    let mut r0 = residual(d0)?;
    let mut d1 = -r0;
    for _ in 0..6 {
        if r0 == 0.0 {
            d1 = d0;
            break;
        }
        let r1 = residual(d1)?;
        if r1 == 0.0 || r1 == r0 {
            break;
        }
        let d2 = d1 - r1 * (d1 - d0) / (r1 - r0);
        (d0, r0, d1) = (d1, r1, d2);
    }
    Ok((shifted(d1), d1))
}

/// A chain of renormalizations with its traces.
#[derive(Clone, Debug)]
pub struct Chain {
    pub traces: Vec<RenormTrace>,
    pub report: ConvergenceReport,
    /// `R^k f` after the last completed step (pinned when requested).
    pub last: FourierAnnulusMap,
}

/// Renormalizes `f` and `R_alpha` side by side `steps` times.
///
/// When pinning, `f` itself is first moved along the mean so that
/// `rho(f) = alpha`; maps that are not real-symmetric are left unpinned.
pub fn renormalize_chain(
    f: &FourierAnnulusMap,
    alpha: &Alpha,
    steps: usize,
    cfg: &RenormConfig,
    conv: &ConvergenceConfig,
    kam: Option<&KamConfig>,
) -> Chain {
    let mut exact = alpha.clone();
    let alpha = alpha.to_f64();
    let pin = conv.pin_rotation && f.is_real_symmetric(1e-12);
    let mut report = ConvergenceReport {
        alpha,
        pinned: pin,
        distances: Vec::new(),
        raw_distances: Vec::new(),
        angles: Vec::new(),
        corrections: Vec::new(),
        nonlinearity: Vec::new(),
        failure: None,
    };
    let mut traces = Vec::new();
    let mut raw = f.clone();
    let mut fk = f.clone();
    if pin {
        match pin_rotation(f, alpha, conv.rotation_iterations) {
            Ok((g, shift)) => {
                fk = g;
                report.corrections.push(shift);
            }
            Err(e) => {
                report.failure = Some(format!("pinning the input: {e}"));
                return Chain { traces, report, last: fk };
            }
        }
    }
    let mut rk = FourierAnnulusMap::rotation(alpha, f.strip);
    let mut angle = alpha;
    for k in 0..=steps {
        report.distances.push(distance(&fk, &rk));
        report.raw_distances.push(distance(&raw, &rk));
        report.angles.push(angle);
        report.nonlinearity.push(kam.and_then(|c| {
            kam_linearize(&fk, angle, c)
                .ok()
                .filter(|r| r.converged)
                .map(|r| nonlinearity(&r.xi))
        }));
        if k == steps {
            break;
        }
        let mut step = || -> Result<(RenormTrace, FourierAnnulusMap, FourierAnnulusMap, f64, f64)> {
            let tf = renormalize(&fk, angle, cfg)?;
            if pin {
                let (b, _) = renormalized_alpha(&exact)?;
                let next = b.to_f64();
                exact = b;
                let rot = FourierAnnulusMap::rotation(next, tf.output.strip);
                let (pinned, shift) = pin_rotation(&tf.output, next, conv.rotation_iterations)?;
                Ok((tf, pinned, rot, next, shift))
            } else {
                let tr = renormalize(&rk, angle, cfg)?;
                let next = tr.rotation();
                let out = tf.output.clone();
                Ok((tf, out, tr.output, next, 0.0))
            }
        };
        match step() {
            Ok((trace, next_f, next_r, next_angle, shift)) => {
                raw = trace.output.clone();
                fk = next_f;
                rk = next_r;
                angle = next_angle;
                traces.push(trace);
                if pin {
                    report.corrections.push(shift);
                }
            }
            Err(e) => {
                report.failure = Some(format!("step {}: {e}", k + 1));
                break;
            }
        }
    }
    Chain { traces, report, last: fk }
}

/// `d_k = dist(R^k f, R^k R_alpha)` for `k = 0..=steps`.
pub fn renorm_convergence(
    f: &FourierAnnulusMap,
    alpha: &Alpha,
    steps: usize,
    cfg: &RenormConfig,
    conv: &ConvergenceConfig,
    kam: Option<&KamConfig>,
) -> ConvergenceReport {
    renormalize_chain(f, alpha, steps, cfg, conv, kam).report
}

/// Orbit of 0 under `f` and `f^{-1}`, in the circular order of `k alpha`.
#[derive(Clone, Debug)]
pub struct InvariantCircle {
    /// `(k alpha mod 1, f^k(0))`, sorted by the first entry.
    pub points: Vec<(f64, C64)>,
    /// Hausdorff distance between the closed polyline through the points
    /// and `R/Z`.
    pub distance: f64,
    /// `max |Im f^k(0)|`.
    pub max_height: f64,
}

/// Lift of `z` reduced so that its real part is in `[0, 1)`.
fn reduce(z: C64) -> C64 {
    C64::new(z.re - z.re.floor(), z.im)
}

fn segment_distance(x: f64, a: C64, b: C64) -> f64 {
    let p = C64::new(x, 0.0);
    let d = b - a;
    let len2 = d.norm_sqr();
    let t = if len2 > 0.0 { (((p - a) * d.conj()).re / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + d * t)).norm()
}

pub fn invariant_circle(f: &FourierAnnulusMap, alpha: f64, iterations: usize) -> Result<InvariantCircle> {
    if iterations == 0 {
        return Err(Error::Domain("need at least one iteration".into()));
    }
    let mut points = vec![(0.0, C64::new(0.0, 0.0))];
    let mut fwd = C64::new(0.0, 0.0);
    let mut bwd = fwd;
    for k in 1..=iterations {
        fwd = reduce(f.evaluate(fwd)?);
        bwd = f.solve(bwd)?;
        if !f.strip.contains(bwd) {
            return Err(Error::Escape(format!("backward orbit reached {bwd}")));
        }
        bwd = reduce(bwd);
        let t = (k as f64 * alpha).rem_euclid(1.0);
        points.push((t, fwd));
        points.push(((-(k as f64) * alpha).rem_euclid(1.0), bwd));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let max_height = points.iter().map(|p| p.1.im.abs()).fold(0.0, f64::max);
    // closed polyline, unwrapping the real part across the seam
    let mut poly: Vec<C64> = points.iter().map(|p| p.1).collect();
    for j in 1..poly.len() {
        let prev = poly[j - 1].re;
        poly[j].re += (prev - poly[j].re).round();
    }
    let first = poly[0];
    poly.push(first + 1.0);
    let grid = 4 * poly.len();
    let base = poly[0].re.floor();
    let circle_side = (0..grid)
        .into_par_iter()
        .map(|j| {
            let x = base + j as f64 / grid as f64;
            poly.windows(2)
                .flat_map(|s| [-1.0, 0.0, 1.0].map(|sh| segment_distance(x + sh, s[0], s[1])))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max);
    Ok(InvariantCircle { points, distance: circle_side.max(max_height), max_height })
}

/// `Lambda(v) = int_0^1 v(xi(t)) / xi'(t + alpha) dt` with a quadrature error
/// estimate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LeafFunctional {
    pub value: C64,
    pub error_estimate: f64,
    pub alpha: f64,
}

/// The functional vanishing on tangent vectors to the conjugacy class of
/// `f = xi R_alpha xi^{-1}`, with `alpha` read off as `xi^{-1}(f(0))`.
pub fn leaf_tangent_functional(
    f: &FourierAnnulusMap,
    xi: &FourierAnnulusMap,
    v: &TangentField,
    nodes: usize,
) -> Result<LeafFunctional> {
    if nodes < 4 || nodes % 2 != 0 {
        return Err(Error::Domain(format!("need an even node count >= 4, got {nodes}")));
    }
    let alpha = xi.solve(f.eval(C64::new(0.0, 0.0)))?.re;
    let a = C64::new(alpha, 0.0);
    let rule = |n: usize| -> C64 {
        (0..n)
            .map(|j| {
                let t = C64::new(j as f64 / n as f64, 0.0);
                v.eval(xi.eval(t)) / xi.derivative(t + a)
            })
            .sum::<C64>()
            / n as f64
    };
    let value = rule(nodes);
    let coarse = rule(nodes / 2);
    Ok(LeafFunctional { value, error_estimate: (value - coarse).norm(), alpha })
}

/// `d/dzeta (id + zeta u) f (id + zeta u)^{-1} |_0 = u o f - f' u`.
pub fn class_tangent(f: &FourierAnnulusMap, u: &TangentField, cfg: &FitConfig) -> Result<TangentField> {
    let strip = u.strip;
    let s = fit_periodic(|z| Ok(u.eval(f.eval(z)) - f.derivative(z) * u.eval(z)), strip.epsilon, cfg)?;
    Ok(TangentField::new(strip, s.series))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Number of random zero-mean fields per contraction measurement.
    pub samples: usize,
    /// Degree of the random fields.
    pub field_degree: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { samples: 10, field_degree: 8, seed: 0 }
    }
}

/// Largest `||R' v|| / ||v||` over random zero-mean fields on `Pi_eps`.
pub fn v0_contraction(alpha: f64, cfg: &RenormConfig, probe: &ProbeConfig) -> Result<f64> {
    let strip = StripDomain::new(cfg.epsilon)?;
    let ratios: Vec<f64> = (0..probe.samples)
        .map(|j| {
            let v = TangentField::random(strip, probe.field_degree, probe.seed + j as u64, true);
            differential_on_v0(alpha, &v, cfg).map(|d| d.ratio)
        })
        .collect::<Result<_>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HyperbolicityRow {
    pub name: String,
    pub alpha: f64,
    pub m: usize,
    pub l: f64,
    pub unstable_closed_form: f64,
    pub unstable_finite_difference: f64,
    pub unstable_discrepancy: f64,
    pub v0_ratio: f64,
    pub product: f64,
    /// `|lambda_u| > 1 > ||R'|_{V_0}||`.
    pub split: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HyperbolicityReport {
    pub epsilon: f64,
    pub rows: Vec<HyperbolicityRow>,
}

/// Expansion along `V_1` and contraction on `V_0` at each named rotation.
pub fn hyperbolicity(
    alphas: &[(String, f64)],
    cfg: &RenormConfig,
    probe: &ProbeConfig,
) -> Result<HyperbolicityReport> {
    let rows = alphas
        .iter()
        .map(|(name, alpha)| {
            let e = unstable_eigenvalue(*alpha, cfg)?;
            let ratio = v0_contraction(*alpha, cfg, probe)?;
            Ok(HyperbolicityRow {
                name: name.clone(),
                alpha: *alpha,
                m: e.m,
                l: e.l,
                unstable_closed_form: e.closed_form,
                unstable_finite_difference: e.finite_difference,
                unstable_discrepancy: e.relative_discrepancy,
                v0_ratio: ratio,
                product: e.closed_form.abs() * ratio,
                split: e.closed_form.abs() > 1.0 && ratio < 1.0,
            })
        })
        .collect::<Result<_>>()?;
    Ok(HyperbolicityReport { epsilon: cfg.epsilon, rows })
}

/// The three rotations used by default in hyperbolicity probes.
pub fn default_alphas() -> Vec<(String, f64)> {
    vec![
        ("golden".into(), Alpha::golden().to_f64()),
        ("silver".into(), Alpha::silver().to_f64()),
        ("one_two".into(), Alpha::one_two().to_f64()),
    ]
}

/// `l` for the rotation, or an error if the return index is unavailable.
pub fn return_length(alpha: f64) -> Result<f64> {
    Ok(return_index_f64(alpha)?.l)
}

/// `u(z) = sum_k c_k sin(2 pi k z)` style real conjugacy generator used in
/// tests and examples: `c e^{2 pi i z} + conj(c) e^{-2 pi i z}` minus its value at 0.
pub fn simple_generator(c: C64, strip: StripDomain) -> TangentField {
    let s = FourierSeries::from_modes(&[(1, c), (-1, c.conj()), (0, -(c + c.conj()))]);
    TangentField::new(strip, s)
}
