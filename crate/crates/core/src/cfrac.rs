//! Continued fractions, Gauss-map orbits, Brjuno sums and the return index.
//!
//! Rotation numbers are held either as exact rationals or as a rational
//! bracket `[lo, hi]` around an irrational. The Gauss map is applied to both
//! ends of the bracket in exact arithmetic and a partial quotient is only
//! emitted while both ends agree on it, so precision loss can never invent
//! partial quotients.

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on `{n alpha}` used to pick the return index.
pub const RETURN_THRESHOLD: f64 = 0.01;

/// Discontinuities of the return index only accumulate at `p/q` with `q` at
/// most this value.
pub const K_ACCUMULATION_DENOMINATOR: u64 = 100;

/// Relative width of a Gauss-orbit bracket beyond which the orbit value is no
/// longer trusted to f64 accuracy.
const TRUST_WIDTH: f64 = 1e-14;

/// Digits kept for the built-in quadratic irrationals.
const NAMED_DIGITS: u32 = 160;

const PI_DIGITS: &str = "3.14159265358979323846264338327950288419716939937510582097494459230781640628620899862803482534211706798214808651328230664709384460955058223172535940812848111745028410270193852110555964462294895493038196";

/// A rotation number in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Alpha {
    Exact(BigRational),
    /// An irrational known to lie strictly inside `(lo, hi)`.
    Bracket { lo: BigRational, hi: BigRational },
}

fn big(n: i64) -> BigInt {
    BigInt::from(n)
}

fn ratio(n: BigInt, d: BigInt) -> BigRational {
    BigRational::new(n, d)
}

fn floor_int(x: &BigRational) -> BigInt {
    x.floor().to_integer()
}

/// f64 value of an exact rational, correctly scaled even for huge parts.
pub fn rational_to_f64(x: &BigRational) -> f64 {
    if let Some(v) = x.to_f64() {
        if v.is_finite() {
            return v;
        }
    }
    // fall back to shifting both parts to a common manageable size
    let nb = x.numer().bits() as i64;
    let db = x.denom().bits() as i64;
    let shift = (nb.max(db) - 60).max(0) as usize;
    let n = (x.numer() >> shift).to_f64().unwrap_or(0.0);
    let d = (x.denom() >> shift).to_f64().unwrap_or(1.0);
    n / d
}

impl Alpha {
    pub fn rational(p: i64, q: i64) -> Result<Alpha> {
        if q == 0 {
            return Err(Error::Domain("zero denominator".into()));
        }
        Ok(Alpha::Exact(ratio(big(p), big(q))))
    }

    /// The exact rational value of an f64.
    pub fn from_f64(x: f64) -> Result<Alpha> {
        BigRational::from_float(x)
            .map(Alpha::Exact)
            .ok_or_else(|| Error::Domain(format!("{x} is not finite")))
    }

    /// `(sqrt(radicand) + offset) / denom`, bracketed to about 160 digits.
    pub fn quadratic(radicand: u64, offset: i64, denom: i64) -> Alpha {
        let scale = BigInt::from(10u32).pow(NAMED_DIGITS);
        let s = (BigInt::from(radicand) * &scale * &scale).sqrt();
        let lo = ratio(&s + big(offset) * &scale, big(denom) * &scale);
        let hi = ratio(&s + 1 + big(offset) * &scale, big(denom) * &scale);
        Alpha::Bracket { lo, hi }
    }

    /// `(sqrt 5 - 1)/2 = [1, 1, 1, ...]`.
    pub fn golden() -> Alpha {
        Alpha::quadratic(5, -1, 2)
    }

    /// `sqrt 2 - 1 = [2, 2, 2, ...]`.
    pub fn silver() -> Alpha {
        Alpha::quadratic(2, -1, 1)
    }

    /// `sqrt 3 - 1 = [1, 2, 1, 2, ...]`.
    pub fn one_two() -> Alpha {
        Alpha::quadratic(3, -1, 1)
    }

    /// `pi - 3`, bracketed from a 200-digit literal.
    pub fn pi_minus_three() -> Alpha {
        let (lo, _) = decimal_bracket(PI_DIGITS).expect("literal parses");
        let places = PI_DIGITS.len() - 2;
        let ulp = ratio(BigInt::one(), BigInt::from(10u32).pow(places as u32));
        let three = BigRational::from_integer(big(3));
        Alpha::Bracket {
            hi: &lo - &three + ulp,
            lo: lo - three,
        }
    }

    /// Exact rational with the given partial quotients `[a_0, a_1, ...]`.
    pub fn from_partials(partials: &[u64]) -> Result<Alpha> {
        if partials.is_empty() || partials.contains(&0) {
            return Err(Error::Domain("partials must be nonempty and positive".into()));
        }
        let mut x = BigRational::zero();
        for &a in partials.iter().rev() {
            x = (BigRational::from_integer(BigInt::from(a)) + x).recip();
        }
        Ok(Alpha::Exact(x))
    }

    /// Parses `golden`, `silver`, `onetwo`, `pi-3`, a fraction `p/q`, or a
    /// decimal literal (taken as the exact rational it denotes).
    pub fn parse(s: &str) -> Result<Alpha> {
        let t = s.trim();
        match t.to_ascii_lowercase().as_str() {
            "golden" => return Ok(Alpha::golden()),
            "silver" => return Ok(Alpha::silver()),
            "onetwo" | "one-two" => return Ok(Alpha::one_two()),
            "pi-3" | "pi" => return Ok(Alpha::pi_minus_three()),
            _ => {}
        }
        if let Some((p, q)) = t.split_once('/') {
            let p: BigInt = p
                .trim()
                .parse()
                .map_err(|_| Error::Domain(format!("bad numerator in {t:?}")))?;
            let q: BigInt = q
                .trim()
                .parse()
                .map_err(|_| Error::Domain(format!("bad denominator in {t:?}")))?;
            if q.is_zero() {
                return Err(Error::Domain("zero denominator".into()));
            }
            return Ok(Alpha::Exact(ratio(p, q)));
        }
        let (v, _) = decimal_bracket(t)?;
        Ok(Alpha::Exact(v))
    }

    pub fn to_f64(&self) -> f64 {
        rational_to_f64(&self.midpoint())
    }

    pub fn midpoint(&self) -> BigRational {
        match self {
            Alpha::Exact(x) => x.clone(),
            Alpha::Bracket { lo, hi } => (lo + hi) / BigRational::from_integer(big(2)),
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Alpha::Exact(_))
    }

    /// Decimal rendering with `digits` places (exact when it terminates).
    pub fn decimal(&self, digits: usize) -> String {
        format_decimal(&self.midpoint(), digits)
    }

    fn bounds(&self) -> (BigRational, BigRational) {
        match self {
            Alpha::Exact(x) => (x.clone(), x.clone()),
            Alpha::Bracket { lo, hi } => (lo.clone(), hi.clone()),
        }
    }
}

/// Parses a decimal literal exactly; returned twice so callers can widen one end.
fn decimal_bracket(s: &str) -> Result<(BigRational, BigRational)> {
    let bad = || Error::Domain(format!("cannot parse {s:?} as a number"));
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    let mut n: BigInt = if digits.is_empty() {
        BigInt::zero()
    } else {
        digits.parse().map_err(|_| bad())?
    };
    if neg {
        n = -n;
    }
    let d = BigInt::from(10u32).pow(frac_part.len() as u32);
    let v = ratio(n, d);
    Ok((v.clone(), v))
}

fn format_decimal(x: &BigRational, digits: usize) -> String {
    let neg = x.is_negative();
    let a = x.abs();
    let scale = BigInt::from(10u32).pow(digits as u32);
    let scaled = (a * BigRational::from_integer(scale.clone())).round().to_integer();
    let (ip, fp) = scaled.div_rem(&scale);
    let mut frac = format!("{:0>width$}", fp.to_string(), width = digits);
    while frac.ends_with('0') {
        frac.pop();
    }
    let sign = if neg { "-" } else { "" };
    if frac.is_empty() {
        format!("{sign}{ip}")
    } else {
        format!("{sign}{ip}.{frac}")
    }
}

/// Continued-fraction state of a rotation number.
#[derive(Clone, Debug)]
pub struct ContinuedFraction {
    pub alpha: Alpha,
    /// `a_0, a_1, ...` with `a_n = [1/alpha_n]`.
    pub partials: Vec<u64>,
    /// `(p_n, q_n)` for `n = 0..=partials.len()`; `p_n/q_n = [a_0, ..., a_{n-1}]`.
    pub convergents: Vec<(BigInt, BigInt)>,
    /// `alpha_{-1} = 1, alpha_0 = alpha, alpha_1, ...`, ending at the last
    /// nonzero term for rationals.
    pub gauss_orbit: Vec<f64>,
    /// True iff the expansion reached `alpha_n = 0` (alpha rational).
    pub terminated: bool,
    /// True when the bracket became too wide before `depth` partials.
    pub precision_exhausted: bool,
}

/// Expands `alpha` to `depth` partial quotients (fewer if alpha is rational
/// or its bracket is exhausted).
pub fn expand(alpha: &Alpha, depth: usize) -> Result<ContinuedFraction> {
    if depth == 0 {
        return Err(Error::Domain("depth must be at least 1".into()));
    }
    let (mut lo, mut hi) = alpha.bounds();
    let zero = BigRational::zero();
    let one = BigRational::one();
    if lo <= zero || hi >= one {
        return Err(Error::Domain(format!(
            "alpha = {} is not in (0, 1)",
            alpha.decimal(20)
        )));
    }
    let mut partials = Vec::with_capacity(depth);
    let mut orbit = vec![1.0, rational_to_f64(&((&lo + &hi) / BigRational::from_integer(big(2))))];
    let mut terminated = false;
    let mut precision_exhausted = false;
    while partials.len() < depth {
        if lo.is_zero() && hi.is_zero() {
            terminated = true;
            // the last entry pushed is alpha_n = 0; drop it
            orbit.pop();
            break;
        }
        if lo.is_zero() {
            precision_exhausted = true;
            break;
        }
        let a_hi = floor_int(&lo.recip());
        let a_lo = floor_int(&hi.recip());
        if a_hi != a_lo {
            precision_exhausted = true;
            break;
        }
        let a = a_lo;
        let a_rat = BigRational::from_integer(a.clone());
        // G is decreasing on a branch, so the bracket ends swap
        let next_lo = hi.recip() - &a_rat;
        let next_hi = lo.recip() - &a_rat;
        let mid = (&next_lo + &next_hi) / BigRational::from_integer(big(2));
        let mid_f = rational_to_f64(&mid);
        if !mid.is_zero() {
            let width = rational_to_f64(&(&next_hi - &next_lo)) / mid_f.abs();
            if width > TRUST_WIDTH {
                precision_exhausted = true;
                break;
            }
        } else if next_lo != next_hi {
            precision_exhausted = true;
            break;
        }
        let a_u64 = a
            .to_u64()
            .ok_or_else(|| Error::Domain("partial quotient exceeds u64".into()))?;
        partials.push(a_u64);
        orbit.push(mid_f);
        lo = next_lo;
        hi = next_hi;
    }
    if !terminated && partials.len() == depth && lo.is_zero() && hi.is_zero() {
        terminated = true;
        orbit.pop();
    }
    let convergents = convergents_of(&partials);
    Ok(ContinuedFraction {
        alpha: alpha.clone(),
        partials,
        convergents,
        gauss_orbit: orbit,
        terminated,
        precision_exhausted,
    })
}

fn convergents_of(partials: &[u64]) -> Vec<(BigInt, BigInt)> {
    let mut out = Vec::with_capacity(partials.len() + 1);
    let (mut p_prev, mut q_prev) = (BigInt::one(), BigInt::zero());
    let (mut p, mut q) = (BigInt::zero(), BigInt::one());
    out.push((p.clone(), q.clone()));
    for &a in partials {
        let a = BigInt::from(a);
        let p_next = &a * &p + &p_prev;
        let q_next = &a * &q + &q_prev;
        p_prev = std::mem::replace(&mut p, p_next);
        q_prev = std::mem::replace(&mut q, q_next);
        out.push((p.clone(), q.clone()));
    }
    out
}

impl ContinuedFraction {
    pub fn depth(&self) -> usize {
        self.partials.len()
    }

    /// `alpha_n` for `n >= -1`, if stored.
    pub fn orbit(&self, n: isize) -> Option<f64> {
        let idx = n + 1;
        if idx < 0 {
            return None;
        }
        self.gauss_orbit.get(idx as usize).copied()
    }

    /// `alpha_{-1} alpha_0 ... alpha_n`, i.e. `|q_n alpha - p_n|`.
    pub fn orbit_product(&self, n: usize) -> Option<f64> {
        if n + 2 > self.gauss_orbit.len() {
            return None;
        }
        Some(self.gauss_orbit[1..=n + 1].iter().product())
    }

    /// Signed `q_n alpha - p_n` in f64, from the orbit product.
    pub fn signed_error(&self, n: usize) -> Option<f64> {
        let mag = self.orbit_product(n)?;
        Some(if n % 2 == 0 { mag } else { -mag })
    }

    /// `q_n alpha - p_n` evaluated directly in exact arithmetic from the
    /// midpoint, then rounded. Independent of the orbit product.
    pub fn direct_error(&self, n: usize) -> Option<f64> {
        let (p, q) = self.convergents.get(n)?;
        let x = self.alpha.midpoint();
        let v = x * BigRational::from_integer(q.clone()) - BigRational::from_integer(p.clone());
        Some(rational_to_f64(&v))
    }

    pub fn q(&self, n: usize) -> Option<&BigInt> {
        self.convergents.get(n).map(|c| &c.1)
    }

    pub fn p(&self, n: usize) -> Option<&BigInt> {
        self.convergents.get(n).map(|c| &c.0)
    }

    fn ensure_terms(&self, depth: usize, what: &str) -> Result<()> {
        // depth terms need alpha_0 .. alpha_{depth-1}, all nonzero
        let available = self.gauss_orbit.len().saturating_sub(1);
        if depth > available {
            if self.terminated {
                return Err(Error::Rational(format!(
                    "{what} is undefined: expansion of {} terminates after {} partials",
                    self.alpha.decimal(20),
                    self.partials.len()
                )));
            }
            return Err(Error::Shallow(format!(
                "{what} needs {depth} Gauss-orbit terms, only {available} stored"
            )));
        }
        if self.terminated && depth > self.partials.len() {
            return Err(Error::Rational(format!("{what} is undefined for rationals")));
        }
        Ok(())
    }

    pub fn to_json_value(&self) -> ContinuedFractionJson {
        ContinuedFractionJson {
            alpha_decimal: self.alpha.decimal(40),
            partials: self.partials.clone(),
            convergents: self
                .convergents
                .iter()
                .map(|(p, q)| [JsonInt::from(p), JsonInt::from(q)])
                .collect(),
        }
    }
}

/// Integer that serializes as a JSON number when it fits in `u128`, and as a
/// decimal string otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JsonInt {
    Small(u128),
    Large(String),
}

impl From<&BigInt> for JsonInt {
    fn from(v: &BigInt) -> Self {
        match v.to_u128() {
            Some(x) => JsonInt::Small(x),
            None => JsonInt::Large(v.to_string()),
        }
    }
}

/// Wire form of a [`ContinuedFraction`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ContinuedFractionJson {
    pub alpha_decimal: String,
    pub partials: Vec<u64>,
    pub convergents: Vec<[JsonInt; 2]>,
}

/// Partial sum of the Yoccoz-Brjuno function.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BrjunoValue {
    pub partial_sum: f64,
    /// `alpha_{-1} ... alpha_{n-1} log(1/alpha_n)` for `n = 0..depth`.
    pub terms: Vec<f64>,
    pub truncation_depth: usize,
    /// Threshold `C` for the heuristic membership test `Phi < C`.
    pub bound_c: Option<f64>,
}

impl BrjunoValue {
    /// Size of the last retained term; a tail indicator only, divergence
    /// cannot be certified from finitely many terms.
    pub fn last_term(&self) -> f64 {
        self.terms.last().copied().unwrap_or(0.0)
    }

    pub fn with_bound(mut self, c: f64) -> Self {
        self.bound_c = Some(c);
        self
    }

    /// `Some(partial_sum < C)` when a bound is attached.
    pub fn below_bound(&self) -> Option<bool> {
        self.bound_c.map(|c| self.partial_sum < c)
    }
}

/// `Phi(alpha) = sum_n alpha_{-1} ... alpha_{n-1} log(1/alpha_n)`, truncated
/// after `depth` terms.
pub fn brjuno_phi(cf: &ContinuedFraction, depth: usize) -> Result<BrjunoValue> {
    cf.ensure_terms(depth, "Brjuno function")?;
    let mut terms = Vec::with_capacity(depth);
    let mut weight = 1.0;
    let mut sum = 0.0;
    for n in 0..depth {
        let a = cf.gauss_orbit[n + 1];
        let t = weight * (1.0 / a).ln();
        terms.push(t);
        sum += t;
        weight *= a;
    }
    Ok(BrjunoValue {
        partial_sum: sum,
        terms,
        truncation_depth: depth,
        bound_c: None,
    })
}

/// `Phi_0(alpha) = sum_n log(q_{n+1}) / q_n`, truncated after `depth` terms.
pub fn brjuno_phi0(cf: &ContinuedFraction, depth: usize) -> Result<f64> {
    cf.ensure_terms(depth, "Brjuno function")?;
    if depth + 1 > cf.convergents.len() {
        return Err(Error::Shallow(format!(
            "need {} convergents, have {}",
            depth + 1,
            cf.convergents.len()
        )));
    }
    let mut sum = 0.0;
    for n in 0..depth {
        let qn = big_to_f64(&cf.convergents[n].1);
        let qn1 = big_to_f64(&cf.convergents[n + 1].1);
        sum += qn1.ln() / qn;
    }
    Ok(sum)
}

fn big_to_f64(x: &BigInt) -> f64 {
    x.to_f64().unwrap_or(f64::INFINITY)
}

/// Output of [`return_index`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ReturnIndex {
    /// `n(alpha) = q_m`.
    pub n: u64,
    pub m: usize,
    /// `l = {n alpha} = q_m alpha - p_m`.
    pub l: f64,
    pub p_m: u64,
    pub q_next: u64,
    pub p_next: u64,
    /// `alpha_{m+1}`, the ratio `|q_{m+1} alpha - p_{m+1}| / l`.
    pub alpha_next: f64,
}

impl ReturnIndex {
    /// Rotation number of the renormalized rotation,
    /// `(q_{m+1} alpha - p_{m+1}) / (q_m alpha - p_m) mod 1`.
    pub fn beta(&self) -> f64 {
        // m is even, so the numerator is negative with magnitude alpha_{m+1} l
        1.0 - self.alpha_next
    }

    /// `d beta / d alpha = (q_m p_{m+1} - q_{m+1} p_m) / l^2`.
    pub fn beta_derivative(&self) -> f64 {
        beta_derivative_sign(self.m) / (self.l * self.l)
    }

    /// First-return time of the rotation to `[0, l)` for the orbit of zero.
    pub fn first_return_of_zero(&self) -> u64 {
        self.n + self.q_next
    }
}

/// `q_m p_{m+1} - q_{m+1} p_m = (-1)^m` for our convergent indexing.
pub fn beta_derivative_sign(m: usize) -> f64 {
    if m % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `n(alpha)`: the denominator of the first convergent with
/// `0 < q_m alpha - p_m < 0.01`.
pub fn return_index(cf: &ContinuedFraction) -> Result<ReturnIndex> {
    for m in 0..cf.convergents.len() {
        let Some(err) = cf.signed_error(m) else { break };
        if err > 0.0 && err < RETURN_THRESHOLD {
            let need = m + 1;
            if cf.convergents.len() <= need || cf.orbit(m as isize + 1).is_none() {
                return Err(Error::Shallow(format!(
                    "return index found at m = {m} but convergent {need} is not stored"
                )));
            }
            let to_u64 = |x: &BigInt| {
                x.to_u64()
                    .ok_or_else(|| Error::Domain("return index exceeds u64".into()))
            };
            return Ok(ReturnIndex {
                n: to_u64(&cf.convergents[m].1)?,
                m,
                l: err,
                p_m: to_u64(&cf.convergents[m].0)?,
                q_next: to_u64(&cf.convergents[need].1)?,
                p_next: to_u64(&cf.convergents[need].0)?,
                alpha_next: cf.orbit(m as isize + 1).unwrap_or(0.0),
            });
        }
    }
    if cf.terminated {
        return Err(Error::Rational(format!(
            "no convergent of {} has 0 < q alpha - p < {RETURN_THRESHOLD}",
            cf.alpha.decimal(20)
        )));
    }
    Err(Error::Shallow(format!(
        "no convergent with 0 < q alpha - p < {RETURN_THRESHOLD} within {} partials",
        cf.depth()
    )))
}

/// Return index of an f64, read as the exact rational it denotes.
pub fn return_index_f64(alpha: f64) -> Result<ReturnIndex> {
    let a = Alpha::from_f64(alpha)?;
    let cf = expand(&a, 200)?;
    return_index(&cf)
}

/// The angle `beta = 1 - alpha_{m+1}` of the renormalized rotation, carried
/// exactly: the bracket of `alpha` is pushed through `m + 1` Gauss steps.
pub fn renormalized_alpha(alpha: &Alpha) -> Result<(Alpha, ReturnIndex)> {
    let cf = expand(alpha, 200)?;
    let index = return_index(&cf)?;
    let (mut lo, mut hi) = alpha.bounds();
    for &a in &cf.partials[..=index.m] {
        let a = BigRational::from_integer(BigInt::from(a));
        (lo, hi) = (hi.recip() - &a, lo.recip() - &a);
    }
    let one = BigRational::one();
    let out = if lo == hi {
        Alpha::Exact(one - lo)
    } else {
        Alpha::Bracket { lo: &one - hi, hi: one - lo }
    };
    Ok((out, index))
}

/// A jump of `n(alpha)` located by bisection.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Discontinuity {
    pub p: u64,
    pub q: u64,
    pub n_left: u64,
    pub n_right: u64,
}

impl Discontinuity {
    pub fn value(&self) -> f64 {
        self.p as f64 / self.q as f64
    }
}

/// Scans `n(alpha)` on a grid of `resolution + 1` points over `interval` and
/// bisects each change of value down to the rational where it happens.
pub fn locate_k_discontinuities(
    interval: (f64, f64),
    resolution: usize,
) -> Result<Vec<Discontinuity>> {
    let (a, b) = interval;
    if !(a > 0.0 && b < 1.0 && a < b) {
        return Err(Error::Domain(format!("interval ({a}, {b}) is not inside (0, 1)")));
    }
    let resolution = resolution.max(1);
    let eval = |x: f64| return_index_f64(x).map(|r| r.n).ok();
    let grid: Vec<f64> = (0..=resolution)
        .map(|j| a + (b - a) * j as f64 / resolution as f64)
        .collect();
    let values: Vec<Option<u64>> = grid.iter().map(|&x| eval(x)).collect();
    let mut out: Vec<Discontinuity> = Vec::new();
    for j in 0..resolution {
        let (Some(nl), Some(nr)) = (values[j], values[j + 1]) else {
            continue;
        };
        if nl == nr {
            continue;
        }
        let (mut lo, mut hi) = (grid[j], grid[j + 1]);
        let (mut n_lo, mut n_hi) = (nl, nr);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            match eval(mid) {
                Some(v) if v == n_lo => lo = mid,
                Some(v) if v == n_hi => hi = mid,
                // a third value: keep the left half and follow its change
                Some(v) => {
                    hi = mid;
                    n_hi = v;
                }
                None => {
                    hi = mid;
                }
            }
        }
        let (p, q) = simplest_rational_between(lo, hi);
        let d = Discontinuity {
            p,
            q,
            n_left: n_lo,
            n_right: n_hi,
        };
        if out.last().map(|x| (x.p, x.q)) != Some((p, q)) {
            out.push(d);
        }
        let _ = &mut n_lo;
    }
    Ok(out)
}

/// Smallest-denominator rational in the closed interval `[lo, hi]`.
pub fn simplest_rational_between(lo: f64, hi: f64) -> (u64, u64) {
    let l = BigRational::from_float(lo).expect("finite");
    let h = BigRational::from_float(hi).expect("finite");
    let r = simplest_between(&l, &h);
    (
        r.numer().to_u64().unwrap_or(0),
        r.denom().to_u64().unwrap_or(0),
    )
}

fn simplest_between(lo: &BigRational, hi: &BigRational) -> BigRational {
    // continued-fraction descent of the Stern-Brocot tree
    let fl = lo.floor();
    if &fl == lo {
        return fl;
    }
    if fl < hi.floor() {
        return fl + BigRational::one();
    }
    let frac_lo = lo - &fl;
    let frac_hi = hi - &fl;
    let inner = simplest_between(&frac_hi.recip(), &frac_lo.recip());
    fl + inner.recip()
}

/// Sign of a big integer as -1/0/1, for tests.
pub fn sign_of(x: &BigInt) -> i32 {
    match x.sign() {
        Sign::Minus => -1,
        Sign::NoSign => 0,
        Sign::Plus => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden_f64() -> f64 {
        (5f64.sqrt() - 1.0) / 2.0
    }

    #[test]
    fn golden_partials_and_convergents() {
        let cf = expand(&Alpha::golden(), 5).unwrap();
        assert_eq!(cf.partials, vec![1, 1, 1, 1, 1]);
        let conv: Vec<(i64, i64)> = cf
            .convergents
            .iter()
            .map(|(p, q)| (p.to_i64().unwrap(), q.to_i64().unwrap()))
            .collect();
        assert_eq!(&conv[..5], &[(0, 1), (1, 1), (1, 2), (2, 3), (3, 5)]);
        assert!(!cf.terminated);
    }

    #[test]
    fn rational_terminates() {
        let cf = expand(&Alpha::rational(1, 4).unwrap(), 10).unwrap();
        assert_eq!(cf.partials, vec![4]);
        assert!(cf.terminated);
        assert_eq!(cf.gauss_orbit, vec![1.0, 0.25]);
    }

    #[test]
    fn pi_partials_match_high_precision_gauss_iteration() {
        let cf = expand(&Alpha::pi_minus_three(), 4).unwrap();
        assert_eq!(cf.partials, vec![7, 15, 1, 292]);
        let cf = expand(&Alpha::pi_minus_three(), 12).unwrap();
        assert_eq!(cf.partials, vec![7, 15, 1, 292, 1, 1, 1, 2, 1, 3, 1, 14]);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            expand(&Alpha::rational(3, 2).unwrap(), 4),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            expand(&Alpha::rational(0, 1).unwrap(), 4),
            Err(Error::Domain(_))
        ));
        assert!(expand(&Alpha::golden(), 0).is_err());
    }

    #[test]
    fn f64_input_stops_at_trust_horizon() {
        let cf = expand(&Alpha::from_f64(golden_f64()).unwrap(), 200).unwrap();
        // the f64 is rational, so it either terminates or keeps producing
        // partials of that rational; it never exceeds 200
        assert!(cf.depth() <= 200);
        assert_eq!(&cf.partials[..30], &[1u64; 30][..]);
    }

    #[test]
    fn bracket_refuses_partials_past_precision() {
        // 8 correct decimals cannot determine 40 partials
        let lo = BigRational::new(big(61803398), big(100000000));
        let hi = BigRational::new(big(61803399), big(100000000));
        let cf = expand(&Alpha::Bracket { lo, hi }, 40).unwrap();
        assert!(cf.precision_exhausted);
        assert!(cf.depth() < 20);
        assert!(cf.partials.iter().all(|&a| a == 1));
    }

    #[test]
    fn telescoping_identity_golden_and_pi() {
        for alpha in [Alpha::golden(), Alpha::pi_minus_three(), Alpha::silver()] {
            let cf = expand(&alpha, 30).unwrap();
            for n in 0..30 {
                let prod = cf.orbit_product(n).unwrap();
                let direct = cf.direct_error(n).unwrap();
                assert!(
                    ((direct.abs() - prod) / prod).abs() < 1e-12,
                    "n={n}: {direct} vs {prod}"
                );
                assert_eq!(direct.signum(), cf.signed_error(n).unwrap().signum());
            }
        }
    }

    #[test]
    fn convergents_are_reduced_and_increasing() {
        let cf = expand(&Alpha::pi_minus_three(), 25).unwrap();
        for n in 0..cf.convergents.len() {
            let (p, q) = &cf.convergents[n];
            assert!(p.gcd(q).is_one());
            if n >= 2 {
                assert!(q > &cf.convergents[n - 1].1);
            }
        }
    }

    #[test]
    fn brjuno_golden_tail_is_geometric() {
        let a = golden_f64();
        let closed = (1.0 / a).ln() / (1.0 - a);
        let cf = expand(&Alpha::golden(), 60).unwrap();
        for depth in [10usize, 25, 40, 44, 50] {
            let v = brjuno_phi(&cf, depth).unwrap();
            let tail = a.powi(depth as i32) * closed;
            assert!(
                ((closed - v.partial_sum) - tail).abs() < 1e-14,
                "depth {depth}"
            );
        }
        assert!((closed - brjuno_phi(&cf, 44).unwrap().partial_sum).abs() < 1e-9);
        assert!((closed - 1.2598).abs() < 1e-4);
    }

    #[test]
    fn brjuno_empty_sum_and_errors() {
        let cf = expand(&Alpha::golden(), 10).unwrap();
        assert_eq!(brjuno_phi(&cf, 0).unwrap().partial_sum, 0.0);
        assert_eq!(brjuno_phi0(&cf, 0).unwrap(), 0.0);
        assert!(matches!(brjuno_phi(&cf, 50), Err(Error::Shallow(_))));
        let r = expand(&Alpha::rational(2, 7).unwrap(), 10).unwrap();
        assert!(matches!(brjuno_phi(&r, 5), Err(Error::Rational(_))));
        assert!(matches!(brjuno_phi0(&r, 5), Err(Error::Rational(_))));
    }

    #[test]
    fn brjuno_large_partial_dominates() {
        let mut partials = vec![1u64, 1_000_000];
        partials.extend(std::iter::repeat(1).take(60));
        let alpha = Alpha::from_partials(&partials).unwrap();
        let cf = expand(&alpha, 40).unwrap();
        let v = brjuno_phi(&cf, 40).unwrap();
        let a0 = cf.gauss_orbit[1];
        // term 1 is alpha_0 log(1/alpha_1) with alpha_1 ~ 1e-6
        assert!((v.terms[1] - a0 * (1.0 / cf.gauss_orbit[2]).ln()).abs() < 1e-12);
        assert!((v.terms[1] - a0 * 1e6f64.ln()).abs() < 1e-5);
        let max_other = v
            .terms
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 1)
            .map(|(_, t)| *t)
            .fold(0.0, f64::max);
        assert!(v.terms[1] > 10.0 * max_other);
    }

    #[test]
    fn brjuno_phi0_golden_fibonacci() {
        let cf = expand(&Alpha::golden(), 40).unwrap();
        // independent Fibonacci evaluation
        let mut fib = vec![1f64, 1.0];
        for i in 2..45 {
            fib.push(fib[i - 1] + fib[i - 2]);
        }
        let expected: f64 = (0..30).map(|n| fib[n + 1].ln() / fib[n]).sum();
        let got = brjuno_phi0(&cf, 30).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!(got > brjuno_phi(&cf, 30).unwrap().partial_sum);
        // both sums converge, their difference stays bounded
        let diffs: Vec<f64> = (5..40)
            .map(|d| (brjuno_phi(&cf, d).unwrap().partial_sum - brjuno_phi0(&cf, d).unwrap()).abs())
            .collect();
        assert!(diffs.iter().all(|d| *d < 3.0));
    }

    #[test]
    fn return_index_golden() {
        let cf = expand(&Alpha::golden(), 30).unwrap();
        let r = return_index(&cf).unwrap();
        assert_eq!(r.m, 10);
        assert_eq!(r.n, 89);
        assert_eq!(r.q_next, 144);
        let a = golden_f64();
        assert!((r.l - a.powi(11)).abs() < 1e-15);
        assert!((r.beta() - (1.0 - a)).abs() < 1e-14);
        // brute-force scan over q
        let first = (1u64..200)
            .find(|&q| {
                let x = q as f64 * a;
                let frac = x - x.round();
                frac > 0.0 && frac < 0.01 && {
                    // must be a convergent: best approximation so far
                    (1..q).all(|k| {
                        let y = k as f64 * a;
                        (y - y.round()).abs() > frac.abs()
                    })
                }
            })
            .unwrap();
        assert_eq!(first, 89);
    }

    #[test]
    fn return_index_small_alpha_is_one() {
        let alpha = Alpha::from_partials(&[201, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1]).unwrap();
        let cf = expand(&alpha, 12).unwrap();
        let r = return_index(&cf).unwrap();
        assert_eq!(r.n, 1);
        assert_eq!(r.m, 0);
        assert!(r.l < 0.01 && r.l > 0.0);
    }

    #[test]
    fn return_index_near_half_skips_early_convergents() {
        let r = return_index_f64(0.5 - 0.001 * (2f64.sqrt() - 1.0)).unwrap();
        assert!(r.n > 2);
        assert!(r.l > 0.0 && r.l < 0.01);
        // brute force over q up to n: nothing earlier among convergents qualifies
        let alpha = 0.5 - 0.001 * (2f64.sqrt() - 1.0);
        let frac = |q: u64| {
            let x = q as f64 * alpha;
            x - x.floor()
        };
        assert!((frac(r.n) - r.l).abs() < 1e-9);
    }

    #[test]
    fn return_index_errors() {
        let cf = expand(&Alpha::golden(), 5).unwrap();
        assert!(matches!(return_index(&cf), Err(Error::Shallow(_))));
        let cf = expand(&Alpha::rational(1, 3).unwrap(), 10).unwrap();
        assert!(matches!(return_index(&cf), Err(Error::Rational(_))));
    }

    #[test]
    fn derivative_sign_alternates_with_m() {
        let cf = expand(&Alpha::golden(), 20).unwrap();
        for m in 0..15 {
            let (pm, qm) = &cf.convergents[m];
            let (pn, qn) = &cf.convergents[m + 1];
            let det = qm * pn - qn * pm;
            assert_eq!(sign_of(&det) as f64, beta_derivative_sign(m));
        }
    }

    #[test]
    fn k_empty_near_golden() {
        let a = golden_f64();
        let jumps = locate_k_discontinuities((a - 1e-6, a + 1e-6), 400).unwrap();
        assert!(jumps.is_empty(), "{jumps:?}");
    }

    #[test]
    fn k_finite_on_interval() {
        let jumps = locate_k_discontinuities((0.30, 0.35), 2000).unwrap();
        assert!(!jumps.is_empty());
        for j in &jumps {
            assert!(j.value() > 0.30 && j.value() < 0.35);
            // the jump point is rational and n differs on both sides
            assert_ne!(j.n_left, j.n_right);
            let l = return_index_f64(j.value() - 1e-12).unwrap().n;
            let r = return_index_f64(j.value() + 1e-12).unwrap().n;
            assert_ne!(l, r, "{j:?}");
        }
    }

    #[test]
    fn k_accumulates_at_small_denominators() {
        // near 1/3 the count grows with resolution
        let iv = (1.0 / 3.0 - 1e-3, 1.0 / 3.0 - 1e-9);
        let coarse = locate_k_discontinuities(iv, 200).unwrap().len();
        let fine = locate_k_discontinuities(iv, 3200).unwrap().len();
        assert!(fine > coarse, "{coarse} vs {fine}");
    }

    #[test]
    fn one_sided_constancy_at_large_denominator() {
        // 34/89 has q = 89 < 100; pick a convergent of pi-3 with q > 100
        let p = 16.0;
        let q = 113.0;
        let x = p / q;
        for side in [-1.0, 1.0] {
            let vals: Vec<u64> = [1e-9, 1e-11, 1e-13]
                .iter()
                .map(|d| return_index_f64(x + side * d).unwrap().n)
                .collect();
            assert!(vals.windows(2).all(|w| w[0] == w[1]), "{vals:?}");
        }
    }

    #[test]
    fn json_shape() {
        let cf = expand(&Alpha::golden(), 3).unwrap();
        let v = serde_json::to_value(cf.to_json_value()).unwrap();
        assert_eq!(v["partials"], serde_json::json!([1, 1, 1]));
        assert_eq!(v["convergents"][3], serde_json::json!([2, 3]));
        assert!(v["alpha_decimal"].as_str().unwrap().starts_with("0.6180339887"));
    }

    #[test]
    fn parse_forms() {
        assert_eq!(Alpha::parse("0.25").unwrap(), Alpha::rational(1, 4).unwrap());
        assert_eq!(Alpha::parse("3/12").unwrap(), Alpha::rational(1, 4).unwrap());
        assert!(!Alpha::parse("golden").unwrap().is_exact());
        assert!(Alpha::parse("abc").is_err());
        assert_eq!(Alpha::rational(1, 3).unwrap().decimal(5), "0.33333");
    }

    #[test]
    fn renormalized_golden_angle_is_one_minus_alpha() {
        let (b, idx) = renormalized_alpha(&Alpha::golden()).unwrap();
        let a = Alpha::golden().to_f64();
        assert!((b.to_f64() - (1.0 - a)).abs() < 2e-16);
        assert_eq!(idx.n, 89);
        // 1 - alpha = alpha^2 = [2, 1, 1, ...]
        let cf = expand(&b, 20).unwrap();
        assert_eq!(cf.partials[..4], [2, 1, 1, 1]);
        let (b2, _) = renormalized_alpha(&b).unwrap();
        assert!((b2.to_f64() - return_index_f64(b.to_f64()).unwrap().beta()).abs() < 1e-10);
    }
}
