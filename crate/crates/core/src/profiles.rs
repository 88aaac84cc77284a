//! Rotational profiles `f > 0` and the cutoff functions of the Katok
//! construction.
//!
//! A rotational metric on the cylinder `R/2πZ × R` is `f(x2)^2 <.,.>`. The
//! round sphere minus its poles is the profile `f0 = sech`; torus examples
//! use a periodic `f` that agrees with `f0` away from a short bridge.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `f0(t) = 2e^t / (1 + e^{2t})`, evaluated without overflow for large `|t|`.
pub fn eval_f0(t: f64) -> f64 {
    let e = (-t.abs()).exp();
    2.0 * e / (1.0 + e * e)
}

/// Derivative of [`eval_f0`]: `-f0(t) tanh(t)`.
pub fn eval_f0_prime(t: f64) -> f64 {
    -eval_f0(t) * t.tanh()
}

/// `h(t) = 2 arctan(e^t) - π/2`, the solution of `h' = f0` with `h(0) = 0`.
///
/// Computed as `arctan(sinh t)`, which is the same function but exactly odd
/// and free of cancellation near zero.
pub fn eval_h(t: f64) -> f64 {
    t.sinh().atan()
}

/// Inverse of `f0` on `[0, ∞)`: the turning point `x*` with `f0(x*) = c`.
///
/// Returns `None` unless `0 < c <= 1`.
pub fn f0_inverse(c: f64) -> Option<f64> {
    if !(c > 0.0 && c <= 1.0) {
        return None;
    }
    // sech(x) = c  <=>  x = acosh(1/c)
    Some((1.0 / c).acosh())
}

fn bump(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

fn bump_prime(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        bump(x) / (x * x)
    }
}

/// C^∞ monotone step on `[0, 1]`, flat to all orders at both ends.
///
/// Outside the unit interval the value is exactly `0.0` or `1.0`.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let a = bump(s);
        let b = bump(1.0 - s);
        a / (a + b)
    }
}

pub fn smooth_step_prime(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    let a = bump(s);
    let b = bump(1.0 - s);
    let da = bump_prime(s);
    let db = -bump_prime(1.0 - s);
    (da * (a + b) - a * (da + db)) / ((a + b) * (a + b))
}

// 8-point Gauss-Legendre rule on [-1, 1].
const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let width = (b - a) / panels as f64;
    let mut sum = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * width;
        let half = 0.5 * width;
        for (node, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            sum += w * half * (f(mid - half * node) + f(mid + half * node));
        }
    }
    sum
}

/// A rotational profile `f(x2) > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileSpec", into = "ProfileSpec")]
pub enum RotationalProfile {
    /// `f0 = sech`: the round sphere minus its poles.
    RoundSphere,
    /// `mean + amplitude * cos(2π x2 / period)`.
    Periodic {
        period: f64,
        mean: f64,
        amplitude: f64,
    },
    /// Period-`L` profile equal to `f0` on `[-L/2+eps, L/2-eps]`.
    Spliced(SplicedProfile),
}

/// Serialized form of a profile, e.g. `{"kind":"spliced","L":4.0,"eps":0.25}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProfileSpec {
    RoundSphere,
    Periodic {
        #[serde(rename = "L")]
        period: f64,
        mean: f64,
        amplitude: f64,
    },
    Spliced {
        #[serde(rename = "L")]
        period: f64,
        eps: f64,
    },
}

impl TryFrom<ProfileSpec> for RotationalProfile {
    type Error = Error;

    fn try_from(spec: ProfileSpec) -> Result<Self> {
        match spec {
            ProfileSpec::RoundSphere => Ok(RotationalProfile::RoundSphere),
            ProfileSpec::Periodic {
                period,
                mean,
                amplitude,
            } => RotationalProfile::periodic(period, mean, amplitude),
            ProfileSpec::Spliced { period, eps } => make_spliced_profile(period, eps),
        }
    }
}

impl From<RotationalProfile> for ProfileSpec {
    fn from(p: RotationalProfile) -> Self {
        match p {
            RotationalProfile::RoundSphere => ProfileSpec::RoundSphere,
            RotationalProfile::Periodic {
                period,
                mean,
                amplitude,
            } => ProfileSpec::Periodic {
                period,
                mean,
                amplitude,
            },
            RotationalProfile::Spliced(s) => ProfileSpec::Spliced {
                period: s.period,
                eps: s.eps,
            },
        }
    }
}

/// Periodic profile glued from `f0` and a smooth bridge across `x2 = ±L/2`.
///
/// On the bridge `[L/2-eps, L/2+eps]` the profile blends `f0(s)` into
/// `f0(s-L)` with [`smooth_step`]; both are positive and the blend is flat to
/// all orders at the ends, so the jet of `f0` is matched exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplicedProfile {
    period: f64,
    eps: f64,
}

impl SplicedProfile {
    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn half_core(&self) -> f64 {
        0.5 * self.period - self.eps
    }

    fn eval_reduced(&self, y: f64) -> (f64, f64) {
        if y.abs() <= self.half_core() {
            return (eval_f0(y), eval_f0_prime(y));
        }
        let s = if y > 0.0 { y } else { y + self.period };
        let w = 2.0 * self.eps;
        let sigma = (s - self.half_core()) / w;
        let beta = smooth_step(sigma);
        let dbeta = smooth_step_prime(sigma) / w;
        let left = eval_f0(s);
        let right = eval_f0(s - self.period);
        let value = (1.0 - beta) * left + beta * right;
        let deriv = (1.0 - beta) * eval_f0_prime(s)
            + beta * eval_f0_prime(s - self.period)
            + dbeta * (right - left);
        (value, deriv)
    }

    /// `∫_0^y f` for `y` in `[-L/2, L/2]`.
    fn arclength_reduced(&self, y: f64) -> f64 {
        let core = self.half_core();
        if y.abs() <= core {
            return eval_h(y);
        }
        let tail = gauss_legendre(|s| self.eval_reduced(s).0, core, y.abs(), 16);
        y.signum() * (eval_h(core) + tail)
    }
}

/// Build the period-`L` torus profile that agrees with `f0` on
/// `[-L/2+eps, L/2-eps]`.
pub fn make_spliced_profile(period: f64, eps: f64) -> Result<RotationalProfile> {
    if !(period.is_finite() && period > 0.0) {
        return Err(Error::InvalidSplice(format!(
            "period {period} must be positive"
        )));
    }
    if !(eps > 0.0 && eps < period / 4.0) {
        return Err(Error::InvalidSplice(format!(
            "eps {eps} must lie in (0, L/4) = (0, {})",
            period / 4.0
        )));
    }
    let profile = SplicedProfile { period, eps };
    // the blend of two positive functions stays positive; check anyway on the bridge
    let core = profile.half_core();
    for k in 0..=256 {
        let s = core + 2.0 * eps * k as f64 / 256.0;
        let (v, _) = profile.eval_reduced(s - if s > 0.5 * period { period } else { 0.0 });
        if !(v > 0.0) {
            return Err(Error::InvalidSplice(format!("bridge value {v} at {s}")));
        }
    }
    Ok(RotationalProfile::Spliced(profile))
}

impl RotationalProfile {
    pub fn periodic(period: f64, mean: f64, amplitude: f64) -> Result<Self> {
        if !(period > 0.0 && mean > 0.0 && amplitude.abs() < mean) {
            return Err(Error::InvalidSplice(format!(
                "periodic profile needs L > 0 and |amplitude| < mean (L={period}, mean={mean}, amplitude={amplitude})"
            )));
        }
        Ok(RotationalProfile::Periodic {
            period,
            mean,
            amplitude,
        })
    }

    /// Period in `x2`, if the profile descends to a torus.
    pub fn period(&self) -> Option<f64> {
        match self {
            RotationalProfile::RoundSphere => None,
            RotationalProfile::Periodic { period, .. } => Some(*period),
            RotationalProfile::Spliced(s) => Some(s.period),
        }
    }

    /// Representative of `x2` in `[-L/2, L/2)`; the identity on the sphere.
    pub fn reduce(&self, x2: f64) -> f64 {
        match self.period() {
            None => x2,
            Some(l) => (x2 + 0.5 * l).rem_euclid(l) - 0.5 * l,
        }
    }

    pub fn eval(&self, x2: f64) -> f64 {
        self.eval_with_derivative(x2).0
    }

    pub fn deriv(&self, x2: f64) -> f64 {
        self.eval_with_derivative(x2).1
    }

    /// `(f(x2), f'(x2))`.
    pub fn eval_with_derivative(&self, x2: f64) -> (f64, f64) {
        match self {
            RotationalProfile::RoundSphere => (eval_f0(x2), eval_f0_prime(x2)),
            RotationalProfile::Periodic {
                period,
                mean,
                amplitude,
            } => {
                let k = std::f64::consts::TAU / period;
                let (s, c) = (k * x2).sin_cos();
                (mean + amplitude * c, -amplitude * k * s)
            }
            RotationalProfile::Spliced(p) => p.eval_reduced(self.reduce(x2)),
        }
    }

    /// Whether `f = f0` on `[-b, b]`.
    pub fn agrees_with_f0_on(&self, b: f64) -> bool {
        match self {
            RotationalProfile::RoundSphere => true,
            RotationalProfile::Periodic { .. } => false,
            RotationalProfile::Spliced(p) => b <= p.half_core(),
        }
    }

    /// Infimum of `f`; zero on the sphere, where `f0 -> 0` at the poles.
    pub fn min_value(&self) -> f64 {
        match self {
            RotationalProfile::RoundSphere => 0.0,
            RotationalProfile::Periodic {
                mean, amplitude, ..
            } => mean - amplitude.abs(),
            RotationalProfile::Spliced(p) => {
                // the minimum sits on the bridge; grid scan then golden refinement
                let lo = p.half_core();
                let hi = 0.5 * p.period;
                let n = 512;
                let mut best = (f64::INFINITY, lo);
                for k in 0..=n {
                    let s = lo + (hi - lo) * k as f64 / n as f64;
                    let v = p.eval_reduced(s).0;
                    if v < best.0 {
                        best = (v, s);
                    }
                }
                let step = (hi - lo) / n as f64;
                let (mut a, mut b) = ((best.1 - step).max(lo), (best.1 + step).min(hi));
                let g = 0.5 * (5f64.sqrt() - 1.0);
                for _ in 0..80 {
                    let c = b - g * (b - a);
                    let d = a + g * (b - a);
                    if p.eval_reduced(c).0 < p.eval_reduced(d).0 {
                        b = d;
                    } else {
                        a = c;
                    }
                }
                best.0.min(p.eval_reduced(0.5 * (a + b)).0)
            }
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            RotationalProfile::Periodic {
                mean, amplitude, ..
            } => mean + amplitude.abs(),
            _ => 1.0,
        }
    }

    /// Metric length `∫_0^{x2} f` along a meridian.
    pub fn arclength(&self, x2: f64) -> f64 {
        match self {
            RotationalProfile::RoundSphere => eval_h(x2),
            RotationalProfile::Periodic {
                period,
                mean,
                amplitude,
            } => {
                let k = std::f64::consts::TAU / period;
                mean * x2 + amplitude * (k * x2).sin() / k
            }
            RotationalProfile::Spliced(p) => {
                let l = p.period;
                let turns = ((x2 + 0.5 * l) / l).floor();
                let y = x2 - turns * l;
                turns * self.meridian_length().unwrap_or(0.0) + p.arclength_reduced(y)
            }
        }
    }

    /// Length of a full meridian circle (torus profiles only).
    pub fn meridian_length(&self) -> Option<f64> {
        match self {
            RotationalProfile::RoundSphere => None,
            RotationalProfile::Periodic { period, mean, .. } => Some(mean * period),
            RotationalProfile::Spliced(p) => Some(2.0 * p.arclength_reduced(0.5 * p.period)),
        }
    }

    /// Solve `arclength(x2) = s` by Newton's method.
    pub fn inverse_arclength(&self, s: f64) -> f64 {
        if let RotationalProfile::RoundSphere = self {
            // inverse gudermannian
            return s.clamp(-FRAC_PI_2, FRAC_PI_2).tan().asinh();
        }
        let mean = match (self.meridian_length(), self.period()) {
            (Some(m), Some(l)) => m / l,
            _ => 1.0,
        };
        let mut x = s / mean;
        for _ in 0..50 {
            let r = self.arclength(x) - s;
            let dx = r / self.eval(x);
            x -= dx;
            if dx.abs() < 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        x
    }
}

/// Smooth monotone step `eta` with `eta = 0` on `t <= f0(a1)` and `eta = 1`
/// on `t >= f0(a0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eta {
    lo: f64,
    hi: f64,
}

impl Eta {
    pub fn eval(&self, t: f64) -> f64 {
        if t <= self.lo {
            0.0
        } else if t >= self.hi {
            1.0
        } else {
            smooth_step((t - self.lo) / (self.hi - self.lo))
        }
    }

    pub fn deriv(&self, t: f64) -> f64 {
        if t <= self.lo || t >= self.hi {
            0.0
        } else {
            smooth_step_prime((t - self.lo) / (self.hi - self.lo)) / (self.hi - self.lo)
        }
    }

    /// Transition band `[f0(a1), f0(a0)]`.
    pub fn band(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

pub fn make_eta(a0: f64, a1: f64) -> Result<Eta> {
    if !(a0 > 0.0 && a0 < a1 && a1.is_finite()) {
        return Err(Error::InvalidBand(format!(
            "need 0 < a0 < a1, got a0={a0}, a1={a1}"
        )));
    }
    Ok(Eta {
        lo: eval_f0(a1),
        hi: eval_f0(a0),
    })
}

/// Cutoff data `0 < a0 < a1 < b` with the step `eta` and the indicator `chi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CutoffSpec", into = "CutoffSpec")]
pub struct CutoffPair {
    a0: f64,
    a1: f64,
    b: f64,
    eta: Eta,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffSpec {
    pub a0: f64,
    pub a1: f64,
    pub b: f64,
}

impl TryFrom<CutoffSpec> for CutoffPair {
    type Error = Error;
    fn try_from(s: CutoffSpec) -> Result<Self> {
        CutoffPair::new(s.a0, s.a1, s.b)
    }
}

impl From<CutoffPair> for CutoffSpec {
    fn from(c: CutoffPair) -> Self {
        CutoffSpec {
            a0: c.a0,
            a1: c.a1,
            b: c.b,
        }
    }
}

impl CutoffPair {
    pub fn new(a0: f64, a1: f64, b: f64) -> Result<Self> {
        let eta = make_eta(a0, a1)?;
        if !(a1 < b && b.is_finite()) {
            return Err(Error::InvalidBand(format!(
                "need a1 < b, got a1={a1}, b={b}"
            )));
        }
        Ok(CutoffPair { a0, a1, b, eta })
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }
    pub fn a1(&self) -> f64 {
        self.a1
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn eta(&self) -> &Eta {
        &self.eta
    }

    /// Indicator of `|x2| <= b`; callers pass the reduced coordinate.
    pub fn chi(&self, x2: f64) -> f64 {
        if x2.abs() <= self.b {
            1.0
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn f0_closed_form_values() {
        assert_eq!(eval_f0(0.0), 1.0);
        // sech(1) to 30 digits: 0.648054273663885399574977353226
        assert_relative_eq!(eval_f0(1.0), 0.648_054_273_663_885_4, max_relative = 1e-15);
        for t in [0.5, 1.0, 3.0] {
            assert_eq!(eval_f0(-t), eval_f0(t));
        }
        assert!(eval_f0(800.0) >= 0.0 && eval_f0(800.0).is_finite());
        assert!(eval_f0(40.0) > 0.0);
    }

    #[test]
    fn f0_strictly_decreasing_on_half_line() {
        let mut prev = eval_f0(0.0);
        for k in 1..=2000 {
            let v = eval_f0(k as f64 * 0.01);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn h_is_primitive_of_f0() {
        assert_eq!(eval_h(0.0), 0.0);
        let d = 1e-5;
        for t in [-1.0, 0.0, 2.0] {
            let fd = (eval_h(t + d) - eval_h(t - d)) / (2.0 * d);
            assert!((fd - eval_f0(t)).abs() < 1e-8, "t = {t}");
        }
        for t in [0.0, 1.0, 5.0] {
            assert!((eval_h(t).cos() - eval_f0(t)).abs() < 1e-12);
        }
        for t in [0.3, 2.0, 17.0] {
            assert!((eval_h(-t) + eval_h(t)).abs() < 1e-12);
            let classic = 2.0 * t.exp().atan() - FRAC_PI_2;
            assert!((classic - eval_h(t)).abs() < 1e-14);
        }
    }

    #[test]
    fn spliced_profile_matches_f0_in_core() {
        let p = make_spliced_profile(4.0, 0.25).unwrap();
        assert_eq!(p.eval(0.0), 1.0);
        assert_eq!(p.eval(1.0), eval_f0(1.0));
        assert_eq!(p.eval(-1.75), eval_f0(1.75));
        assert!((p.eval(2.0) - p.eval(-2.0)).abs() < 1e-15);
    }

    #[test]
    fn spliced_profile_periodic_and_positive() {
        let p = make_spliced_profile(4.0, 0.25).unwrap();
        for k in 0..10_000 {
            let x = -6.0 + 12.0 * k as f64 / 10_000.0;
            let v = p.eval(x);
            assert!(v > 0.0);
            assert!((p.eval(x + 4.0) - v).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn spliced_minimum_bounded_by_bridge_end() {
        let p = make_spliced_profile(4.0, 0.25).unwrap();
        // dense grid minimization oracle
        let mut m = f64::INFINITY;
        for k in 0..=100_000 {
            m = m.min(p.eval(-2.0 + 4.0 * k as f64 / 100_000.0));
        }
        assert!(m > 0.0 && m <= eval_f0(1.75));
        assert!((p.min_value() - m).abs() < 1e-9);
    }

    #[test]
    fn spliced_derivative_matches_finite_difference() {
        let p = make_spliced_profile(4.0, 0.25).unwrap();
        let d = 1e-6;
        for k in 0..400 {
            let x = -2.3 + 4.6 * k as f64 / 400.0;
            let fd = (p.eval(x + d) - p.eval(x - d)) / (2.0 * d);
            assert!(
                (fd - p.deriv(x)).abs() < 1e-7,
                "x = {x}: {fd} vs {}",
                p.deriv(x)
            );
        }
    }

    #[test]
    fn splice_rejects_bad_eps() {
        assert!(matches!(
            make_spliced_profile(4.0, 1.0),
            Err(Error::InvalidSplice(_))
        ));
        assert!(matches!(
            make_spliced_profile(4.0, 0.0),
            Err(Error::InvalidSplice(_))
        ));
    }

    #[test]
    fn eta_band_behaviour() {
        let (a0, a1) = (0.5, 1.25);
        let eta = make_eta(a0, a1).unwrap();
        assert_eq!(eta.eval(eval_f0(a1)), 0.0);
        assert_eq!(eta.eval(eval_f0(a0)), 1.0);
        assert_eq!(eta.eval(0.0), 0.0);
        assert_eq!(eta.eval(2.0), 1.0);
        let (lo, hi) = eta.band();
        let mid = eta.eval(0.5 * (lo + hi));
        assert!(mid > 0.0 && mid < 1.0);
        let d = 1e-7;
        for k in 0..=200 {
            let t = lo - 0.05 + (hi - lo + 0.1) * k as f64 / 200.0;
            let fd = (eta.eval(t + d) - eta.eval(t - d)) / (2.0 * d);
            assert!(fd >= -1e-9);
            assert!((fd - eta.deriv(t)).abs() < 1e-5);
        }
        assert!(matches!(make_eta(1.0, 0.5), Err(Error::InvalidBand(_))));
    }

    #[test]
    fn arclength_quadrature_agrees_with_closed_form() {
        let p = make_spliced_profile(4.0, 0.25).unwrap();
        for x in [0.3, 1.0, 1.75] {
            assert!((p.arclength(x) - eval_h(x)).abs() < 1e-15);
        }
        let total = p.meridian_length().unwrap();
        assert!((p.arclength(2.0) - 0.5 * total).abs() < 1e-13);
        assert!((p.arclength(6.0) - 1.5 * total).abs() < 1e-12);
        for s in [-3.0, 0.2, 1.9, 4.4] {
            let x = p.inverse_arclength(s);
            assert!((p.arclength(x) - s).abs() < 1e-12);
        }
    }

    #[test]
    fn profile_json_shape() {
        let p: RotationalProfile =
            serde_json::from_str(r#"{"kind":"spliced","L":4.0,"eps":0.25}"#).unwrap();
        assert_eq!(p.period(), Some(4.0));
        let back = serde_json::to_string(&p).unwrap();
        assert_eq!(back, r#"{"kind":"spliced","L":4.0,"eps":0.25}"#);
        assert!(serde_json::from_str::<RotationalProfile>(
            r#"{"kind":"spliced","L":4.0,"eps":3.0}"#
        )
        .is_err());
    }
}
