//! The Arnold family `F_{mu,a}(z) = z + mu - (a / 2 pi) sin(2 pi z)` and its
//! tongues `A_alpha = {(mu, a) : rho(F_{mu,a}) = alpha}`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfrac::{expand, Alpha};
use crate::circlemap::{rotation_number, FourierAnnulusMap, FourierSeries, StripDomain, C64};
use crate::error::{Error, Result};

/// Rationals with denominators up to this are refused by the tracer.
pub const MAX_REFUSED_DENOMINATOR: u64 = 1_000_000;

/// `F_{mu,a}` as a two-mode map on `Pi_eps`: `c_{+-1} = +-i a / (4 pi)`.
pub fn arnold(mu: f64, a: f64, epsilon: f64) -> Result<FourierAnnulusMap> {
    if !(a.abs() < 1.0) {
        return Err(Error::Domain(format!("|a| = {} must be below 1", a.abs())));
    }
    let c = C64::new(0.0, a / (4.0 * PI));
    let s = FourierSeries::from_modes(&[(0, C64::new(mu, 0.0)), (1, c), (-1, -c)]);
    Ok(FourierAnnulusMap::new(StripDomain::new(epsilon)?, s))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TongueConfig {
    /// Largest coupling traced, the `delta` of the tracer.
    pub a_max: f64,
    /// Number of grid points on `[0, a_max]`.
    pub grid: usize,
    pub rotation_iterations: u64,
    /// Bisection stops when the bracket is narrower than this.
    pub mu_tolerance: f64,
    /// Required `|rho - alpha|` at the returned point.
    pub rho_tolerance: f64,
    /// Strip of the maps handed to the rotation-number routine.
    pub epsilon: f64,
}

impl Default for TongueConfig {
    fn default() -> Self {
        Self {
            a_max: 0.1,
            grid: 11,
            rotation_iterations: 100_000,
            mu_tolerance: 1e-13,
            rho_tolerance: 1e-9,
            epsilon: 0.5,
        }
    }
}

impl TongueConfig {
    pub fn a_grid(&self) -> Vec<f64> {
        match self.grid {
            0 => Vec::new(),
            1 => vec![0.0],
            n => (0..n).map(|j| self.a_max * j as f64 / (n - 1) as f64).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct TonguePoint {
    pub alpha: f64,
    pub a: f64,
    pub mu: f64,
    /// `rho(F_{mu,a}) - alpha`.
    pub rho_residual: f64,
}

fn rho(mu: f64, a: f64, cfg: &TongueConfig) -> Result<f64> {
    Ok(rotation_number(&arnold(mu, a, cfg.epsilon)?, cfg.rotation_iterations)?.value)
}

/// Refuses rotation numbers that are rationals of small denominator.
pub fn check_irrational(alpha: &Alpha) -> Result<f64> {
    let cf = expand(alpha, 60)?;
    if cf.terminated {
        let q = cf.convergents.last().map(|c| c.1.clone()).unwrap_or_default();
        if q <= MAX_REFUSED_DENOMINATOR.into() {
            return Err(Error::Rational(format!(
                "alpha = {} has denominator {q}; rational tongues are not traced",
                alpha.decimal(12)
            )));
        }
    }
    Ok(alpha.to_f64())
}

/// The `mu` with `rho(F_{mu,a}) = alpha`, by bisection on `bracket`.
pub fn tongue_point(alpha: &Alpha, a: f64, bracket: (f64, f64), cfg: &TongueConfig) -> Result<TonguePoint> {
    let target = check_irrational(alpha)?;
    if a == 0.0 {
        return Ok(TonguePoint { alpha: target, a, mu: target, rho_residual: 0.0 });
    }
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) {
        return Err(Error::Domain(format!("empty bracket [{lo}, {hi}]")));
    }
    let r_lo = rho(lo, a, cfg)? - target;
    let r_hi = rho(hi, a, cfg)? - target;
    if r_lo > 0.0 || r_hi < 0.0 {
        return Err(Error::Domain(format!(
            "bracket [{lo}, {hi}] gives rho - alpha in [{r_lo:e}, {r_hi:e}], which does not straddle 0"
        )));
    }
    let mut best = (0.5 * (lo + hi), f64::INFINITY);
    while hi - lo > cfg.mu_tolerance {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let r = rho(mid, a, cfg)? - target;
        if r.abs() < best.1.abs() {
            best = (mid, r);
        }
        if r == 0.0 {
            break;
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (mu, rho_residual) = best;
    if rho_residual.abs() > cfg.rho_tolerance {
        return Err(Error::NonConvergence {
            what: "tongue bisection",
            iterations: 0,
            last_error: rho_residual.abs(),
        });
    }
    Ok(TonguePoint { alpha: target, a, mu, rho_residual })
}

/// Default bracket: the tongue moves by `O(a^2)`, so `alpha +- (|a| + 1e-3)`
/// clipped to `[0, 1]`.
pub fn default_bracket(alpha: f64, a: f64) -> (f64, f64) {
    let w = a.abs() + 1e-3;
    ((alpha - w).max(0.0), (alpha + w).min(1.0))
}

/// Tongue points over `a_grid`, evaluated in parallel.
pub fn tongue_curve(alpha: &Alpha, a_grid: &[f64], cfg: &TongueConfig) -> Result<Vec<TonguePoint>> {
    let target = check_irrational(alpha)?;
    a_grid
        .par_iter()
        .map(|&a| tongue_point(alpha, a, default_bracket(target, a), cfg))
        .collect()
}

/// Largest `|mu_{j+1} - mu_j|` along a curve.
pub fn max_jump(curve: &[TonguePoint]) -> f64 {
    curve.windows(2).map(|w| (w[1].mu - w[0].mu).abs()).fold(0.0, f64::max)
}

/// True when the curves keep a strict order on their common grid.
pub fn curves_ordered(lower: &[TonguePoint], upper: &[TonguePoint]) -> bool {
    lower.len() == upper.len()
        && lower.iter().zip(upper).all(|(p, q)| p.a == q.a && p.mu < q.mu)
}

/// CSV with header `alpha,a,mu,rho_residual`.
pub fn tongue_csv(curve: &[TonguePoint]) -> String {
    let mut s = String::from("alpha,a,mu,rho_residual\n");
    for p in curve {
        let _ = writeln!(s, "{:.17e},{:.17e},{:.17e},{:.6e}", p.alpha, p.a, p.mu, p.rho_residual);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_coupling_is_a_rotation() {
        let f = arnold(0.3, 0.0, 1.0).unwrap();
        let r = FourierAnnulusMap::rotation(0.3, StripDomain::new(1.0).unwrap());
        assert_eq!(crate::circlemap::distance(&f, &r), 0.0);
    }

    #[test]
    fn matches_the_sine_formula() {
        let (mu, a) = (0.37, 0.4);
        let f = arnold(mu, a, 1.0).unwrap();
        for z in [C64::new(0.1, 0.0), C64::new(0.6, 0.3), C64::new(-0.2, -0.7)] {
            let direct = z + mu - (2.0 * PI * z).sin() * (a / (2.0 * PI));
            assert!((f.eval(z) - direct).norm() < 1e-14);
        }
        assert!((f.derivative(C64::new(0.0, 0.0)).re - (1.0 - a)).abs() < 1e-14);
        assert!(f.is_real_symmetric(0.0));
        assert_eq!(f.displacement.modes().filter(|(k, c)| *k != 0 && c.norm() > 0.0).count(), 2);
    }

    #[test]
    fn critical_coupling_is_rejected() {
        assert!(arnold(0.1, 1.0, 1.0).is_err());
        assert!(arnold(0.1, -1.2, 1.0).is_err());
    }

    #[test]
    fn rotation_number_two_ways() {
        let f = arnold(0.5, 0.2, 0.5).unwrap();
        let r = rotation_number(&f, 200_000).unwrap();
        assert!((r.value - r.birkhoff).abs() < 1e-8, "{r:?}");
        assert!((r.value - 0.5).abs() < 1e-8);
    }

    #[test]
    fn tongue_at_zero_coupling_is_alpha() {
        let cfg = TongueConfig::default();
        for alpha in [Alpha::golden(), Alpha::silver(), Alpha::one_two(), Alpha::pi_minus_three()] {
            let p = tongue_point(&alpha, 0.0, (0.0, 1.0), &cfg).unwrap();
            assert_eq!(p.mu, alpha.to_f64());
        }
    }

    #[test]
    fn bisection_is_self_consistent() {
        let cfg = TongueConfig::default();
        let alpha = Alpha::golden();
        let b = default_bracket(alpha.to_f64(), 0.05);
        let p = tongue_point(&alpha, 0.05, b, &cfg).unwrap();
        assert!(p.rho_residual.abs() < 1e-9);
        let finer = TongueConfig { rho_tolerance: 0.5e-9, mu_tolerance: 0.5e-13, ..cfg };
        let q = tongue_point(&alpha, 0.05, b, &finer).unwrap();
        assert!((p.mu - q.mu).abs() < 1e-8);
    }

    #[test]
    fn rational_alpha_is_refused() {
        let err = tongue_point(&Alpha::rational(2, 5).unwrap(), 0.05, (0.3, 0.5), &TongueConfig::default());
        assert!(matches!(err, Err(Error::Rational(_))));
    }

    #[test]
    fn bad_bracket_is_reported() {
        let err = tongue_point(&Alpha::golden(), 0.05, (0.1, 0.2), &TongueConfig::default());
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn reflected_coupling_gives_the_same_mu() {
        // F_{mu,-a}(z) = F_{mu,a}(z + 1/2) - 1/2 shifted, so the rotation number agrees
        let cfg = TongueConfig::default();
        let alpha = Alpha::silver();
        let b = default_bracket(alpha.to_f64(), 0.08);
        let p = tongue_point(&alpha, 0.08, b, &cfg).unwrap();
        let q = tongue_point(&alpha, -0.08, b, &cfg).unwrap();
        assert!((p.mu - q.mu).abs() < 1e-9);
    }

    #[test]
    fn csv_has_one_row_per_point() {
        let cfg = TongueConfig { grid: 3, a_max: 0.02, ..TongueConfig::default() };
        let c = tongue_curve(&Alpha::golden(), &cfg.a_grid(), &cfg).unwrap();
        let csv = tongue_csv(&c);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("alpha,a,mu,rho_residual\n"));
    }
}
