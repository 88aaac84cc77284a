//! Dual Finsler metrics on the cotangent bundle of the cylinder or torus.
//!
//! Everything runs on the cotangent side: a metric is a Hamiltonian
//! `H(x, ξ)`, positively 1-homogeneous in `ξ`. All kinds here are invariant
//! under `x1`-translation, so `∂_{x1} H = 0` and `ξ1` is a first integral.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::{eval_f0, CutoffPair, RotationalProfile};

/// Golden-ratio-scaled default perturbation `0.05 (√5 - 1) / 2`.
pub const DEFAULT_ALPHA: f64 = 0.05 * 0.618_033_988_749_894_9;

/// A covector `ξ1 dx1 + ξ2 dx2` at the base point `(x1, x2)`.
///
/// Base coordinates are stored as lifts in `R^2`; reduce them with
/// [`CotangentPoint::reduced`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CotangentPoint {
    pub x1: f64,
    pub x2: f64,
    pub xi1: f64,
    pub xi2: f64,
}

impl CotangentPoint {
    pub const fn new(x1: f64, x2: f64, xi1: f64, xi2: f64) -> Self {
        CotangentPoint { x1, x2, xi1, xi2 }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.x2, self.xi1, self.xi2]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        CotangentPoint::new(a[0], a[1], a[2], a[3])
    }

    pub fn xi_norm(&self) -> f64 {
        self.xi1.hypot(self.xi2)
    }

    pub fn scale_xi(self, a: f64) -> Self {
        CotangentPoint::new(self.x1, self.x2, a * self.xi1, a * self.xi2)
    }

    pub fn negate_xi(self) -> Self {
        self.scale_xi(-1.0)
    }

    /// Base coordinates reduced into the fundamental domain
    /// `[0, 2π) × [-L/2, L/2)` (no reduction in `x2` on the sphere).
    pub fn reduced(self, profile: &RotationalProfile) -> Self {
        CotangentPoint::new(
            self.x1.rem_euclid(std::f64::consts::TAU),
            profile.reduce(self.x2),
            self.xi1,
            self.xi2,
        )
    }
}

/// Partial derivatives of a Hamiltonian at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradient {
    pub dx: [f64; 2],
    pub dxi: [f64; 2],
}

/// Katok's commuting perturbation `H_α = H0 + α χ η(H1/H0) H1`.
#[derive(Debug, Clone, PartialEq)]
pub struct KatokMetric {
    profile: RotationalProfile,
    cutoffs: CutoffPair,
    alpha: f64,
}

impl KatokMetric {
    /// Without the convexity gate of [`build_katok_family`].
    pub(crate) fn unchecked(profile: RotationalProfile, cutoffs: CutoffPair, alpha: f64) -> Self {
        KatokMetric {
            profile,
            cutoffs,
            alpha,
        }
    }

    pub fn profile(&self) -> &RotationalProfile {
        &self.profile
    }
    pub fn cutoffs(&self) -> &CutoffPair {
        &self.cutoffs
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Value, `∂_{x2}`, and `∂_ξ`. `ξ` must be nonzero.
    fn value_grad(&self, x2: f64, xi1: f64, xi2: f64) -> (f64, f64, [f64; 2]) {
        let (h0, dx2, dxi) = rotational_value_grad(&self.profile, x2, xi1, xi2);
        let chi = self.cutoffs.chi(self.profile.reduce(x2));
        if chi == 0.0 {
            return (h0, dx2, dxi);
        }
        let (f, fp) = self.profile.eval_with_derivative(x2);
        let r = xi1.hypot(xi2);
        let q = f * xi1 / r;
        let eta = self.cutoffs.eta();
        let e = eta.eval(q);
        let de = eta.deriv(q);
        if e == 0.0 && de == 0.0 {
            return (h0, dx2, dxi);
        }
        let a = self.alpha;
        let value = h0 + a * (e * xi1);
        if de == 0.0 {
            // η ≡ 1 here: H = H0 + α ξ1
            return (value, dx2, [dxi[0] + a * e, dxi[1]]);
        }
        let r3 = r * r * r;
        let dq_dxi1 = f * xi2 * xi2 / r3;
        let dq_dxi2 = -f * xi1 * xi2 / r3;
        let dq_dx2 = fp * xi1 / r;
        (
            value,
            dx2 + a * de * dq_dx2 * xi1,
            [
                dxi[0] + a * (de * dq_dxi1 * xi1 + e),
                dxi[1] + a * de * dq_dxi2 * xi1,
            ],
        )
    }
}

fn rotational_value_grad(
    profile: &RotationalProfile,
    x2: f64,
    xi1: f64,
    xi2: f64,
) -> (f64, f64, [f64; 2]) {
    let (f, fp) = profile.eval_with_derivative(x2);
    let r = xi1.hypot(xi2);
    let h = r / f;
    let fr = f * r;
    (h, -r * fp / (f * f), [xi1 / fr, xi2 / fr])
}

/// A dual metric (Hamiltonian) on `T*C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MetricSpec", into = "MetricSpec")]
pub enum DualMetric {
    /// `H0(ξ) = |ξ| / f(x2)`.
    Rotational(RotationalProfile),
    /// `H1(ξ) = ξ1`, generator of the rotation `x1 -> x1 + t`.
    Angular,
    Katok(KatokMetric),
    /// `H'(ξ) = H(ξ)` for `ξ1 >= 0` and `H(-ξ)` otherwise.
    Reversibilized(KatokMetric),
}

impl DualMetric {
    pub fn profile(&self) -> Option<&RotationalProfile> {
        match self {
            DualMetric::Rotational(p) => Some(p),
            DualMetric::Angular => None,
            DualMetric::Katok(k) | DualMetric::Reversibilized(k) => Some(&k.profile),
        }
    }

    /// Value and gradient without the zero-covector check.
    pub(crate) fn value_grad_unchecked(&self, p: &CotangentPoint) -> (f64, Gradient) {
        let (v, dx2, dxi) = match self {
            DualMetric::Rotational(profile) => rotational_value_grad(profile, p.x2, p.xi1, p.xi2),
            DualMetric::Angular => (p.xi1, 0.0, [1.0, 0.0]),
            DualMetric::Katok(k) => k.value_grad(p.x2, p.xi1, p.xi2),
            DualMetric::Reversibilized(k) => {
                if p.xi1 >= 0.0 {
                    k.value_grad(p.x2, p.xi1, p.xi2)
                } else {
                    let (v, dx2, dxi) = k.value_grad(p.x2, -p.xi1, -p.xi2);
                    (v, dx2, [-dxi[0], -dxi[1]])
                }
            }
        };
        (
            v,
            Gradient {
                dx: [0.0, dx2],
                dxi,
            },
        )
    }

    fn check(&self, p: &CotangentPoint) -> Result<()> {
        if matches!(self, DualMetric::Angular) {
            return Ok(());
        }
        if p.xi1 == 0.0 && p.xi2 == 0.0 {
            return Err(Error::ZeroCovector);
        }
        Ok(())
    }

    pub fn eval(&self, p: &CotangentPoint) -> Result<f64> {
        self.check(p)?;
        Ok(self.value_grad_unchecked(p).0)
    }

    pub fn gradient(&self, p: &CotangentPoint) -> Result<Gradient> {
        self.check(p)?;
        Ok(self.value_grad_unchecked(p).1)
    }

    /// Whether `H(x, -ξ) = H(x, ξ)` holds by construction.
    pub fn is_reversible(&self) -> bool {
        match self {
            DualMetric::Rotational(_) | DualMetric::Reversibilized(_) => true,
            DualMetric::Katok(k) => k.alpha == 0.0,
            DualMetric::Angular => false,
        }
    }
}

/// `H0 = |ξ| / f(x2)`.
pub fn eval_h0(profile: &RotationalProfile, p: &CotangentPoint) -> Result<f64> {
    DualMetric::Rotational(profile.clone()).eval(p)
}

/// `H1 = ξ1`.
pub fn eval_h1(p: &CotangentPoint) -> f64 {
    p.xi1
}

/// Membership in the cone `U_a = {|x2| <= a, H1/H0 >= f0(a)}`.
pub fn cone_membership(profile: &RotationalProfile, a: f64, p: &CotangentPoint) -> Result<bool> {
    if !(a > 0.0) {
        return Err(Error::InvalidBand(format!(
            "cone parameter a = {a} must be positive"
        )));
    }
    if !profile.agrees_with_f0_on(a) {
        return Err(Error::ProfileMismatch(format!(
            "profile differs from f0 on [-{a}, {a}]"
        )));
    }
    let r = p.xi_norm();
    if r == 0.0 {
        return Err(Error::ZeroCovector);
    }
    let y = profile.reduce(p.x2);
    if y.abs() > a {
        return Ok(false);
    }
    let ratio = profile.eval(p.x2) * p.xi1 / r;
    Ok(ratio >= eval_f0(a))
}

/// Sampling of base points and covectors used by the fiberwise checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub count: usize,
    pub x2_min: f64,
    pub x2_max: f64,
    pub seed: u64,
}

impl SampleSpec {
    pub fn new(count: usize, x2_min: f64, x2_max: f64, seed: u64) -> Self {
        SampleSpec {
            count,
            x2_min,
            x2_max,
            seed,
        }
    }

    /// Default range for a profile: `[-3, 3]` on the sphere, one period on a torus.
    pub fn for_profile(profile: &RotationalProfile, count: usize, seed: u64) -> Self {
        match profile.period() {
            Some(l) => SampleSpec::new(count, -0.5 * l, 0.5 * l, seed),
            None => SampleSpec::new(count, -3.0, 3.0, seed),
        }
    }

    /// Deterministic covector samples with `|ξ| ∈ [0.5, 2]`.
    pub fn points(&self) -> Vec<CotangentPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.count)
            .map(|_| {
                let x1 = rng.random_range(0.0..std::f64::consts::TAU);
                let x2 = rng.random_range(self.x2_min..=self.x2_max);
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let r = rng.random_range(0.5..2.0);
                CotangentPoint::new(x1, x2, r * theta.cos(), r * theta.sin())
            })
            .collect()
    }
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec::new(1000, -3.0, 3.0, 0x5eed)
    }
}

/// Result of the sampled fiberwise Hessian test of `H^2/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub samples: usize,
    pub min_eigenvalue: f64,
    pub worst: CotangentPoint,
    pub pass: bool,
}

/// Hessian of `H^2/2` in `ξ` by central differences.
pub fn fiber_hessian(h: &DualMetric, p: &CotangentPoint) -> [[f64; 2]; 2] {
    let g = |a: f64, b: f64| {
        let v = h
            .value_grad_unchecked(&CotangentPoint::new(p.x1, p.x2, a, b))
            .0;
        0.5 * v * v
    };
    let d = 1e-4 * p.xi_norm();
    let (a, b) = (p.xi1, p.xi2);
    let g0 = g(a, b);
    let haa = (g(a + d, b) - 2.0 * g0 + g(a - d, b)) / (d * d);
    let hbb = (g(a, b + d) - 2.0 * g0 + g(a, b - d)) / (d * d);
    let hab =
        (g(a + d, b + d) - g(a + d, b - d) - g(a - d, b + d) + g(a - d, b - d)) / (4.0 * d * d);
    [[haa, hab], [hab, hbb]]
}

pub fn min_eigenvalue_2x2(m: [[f64; 2]; 2]) -> f64 {
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let half_diff = 0.5 * (m[0][0] - m[1][1]);
    mean - half_diff.hypot(m[0][1])
}

pub fn fiber_convexity_check(h: &DualMetric, samples: &SampleSpec) -> ConvexityReport {
    let mut min_eig = f64::INFINITY;
    let mut worst = CotangentPoint::new(0.0, 0.0, 1.0, 0.0);
    let pts = samples.points();
    for p in &pts {
        let e = min_eigenvalue_2x2(fiber_hessian(h, p));
        if e < min_eig {
            min_eig = e;
            worst = *p;
        }
    }
    ConvexityReport {
        samples: pts.len(),
        min_eigenvalue: min_eig,
        worst,
        pass: min_eig > 0.0,
    }
}

fn default_convexity_samples(profile: &RotationalProfile, cutoffs: &CutoffPair) -> SampleSpec {
    let reach = cutoffs.b() + 0.25;
    let span = match profile.period() {
        Some(l) => reach.min(0.5 * l),
        None => reach,
    };
    SampleSpec::new(2000, -span, span, 0xc0ffee)
}

/// Build `H_α = H0 + α ψ`, gated on the sampled fiber convexity test.
pub fn build_katok_family(
    profile: RotationalProfile,
    cutoffs: CutoffPair,
    alpha: f64,
) -> Result<DualMetric> {
    if !profile.agrees_with_f0_on(cutoffs.b()) {
        return Err(Error::ProfileMismatch(format!(
            "Katok family needs f = f0 on [-b, b] with b = {}",
            cutoffs.b()
        )));
    }
    let samples = default_convexity_samples(&profile, &cutoffs);
    let metric = DualMetric::Katok(KatokMetric {
        profile,
        cutoffs,
        alpha,
    });
    let report = fiber_convexity_check(&metric, &samples);
    if !report.pass {
        return Err(Error::ConvexityLost {
            alpha,
            min_eigenvalue: report.min_eigenvalue,
        });
    }
    Ok(metric)
}

/// Largest sampled `α` in `[0, alpha_max]` for which the convexity test still
/// passes, by bisection. Empirical; not a certified bound.
pub fn critical_alpha(
    profile: &RotationalProfile,
    cutoffs: &CutoffPair,
    alpha_max: f64,
    samples: &SampleSpec,
) -> f64 {
    let passes = |alpha: f64| {
        let m = DualMetric::Katok(KatokMetric {
            profile: profile.clone(),
            cutoffs: *cutoffs,
            alpha,
        });
        fiber_convexity_check(&m, samples).pass
    };
    if passes(alpha_max) {
        return alpha_max;
    }
    let (mut lo, mut hi) = (0.0, alpha_max);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if passes(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `H'(ξ) = H(ξ)` on `{ξ1 >= 0}` and `H(-ξ)` on `{ξ1 < 0}`.
///
/// Requires `H = H0` near `{ξ1 = 0}`; checked on samples of the seam.
pub fn reversibilize(h: &DualMetric) -> Result<DualMetric> {
    let k = match h {
        DualMetric::Katok(k) => k.clone(),
        DualMetric::Reversibilized(_) => return Ok(h.clone()),
        _ => {
            return Err(Error::ProfileMismatch(
                "reversibilization expects a Katok metric".into(),
            ))
        }
    };
    let span = match k.profile.period() {
        Some(l) => 0.5 * l,
        None => 3.0,
    };
    for i in 0..=64 {
        let x2 = -span + 2.0 * span * i as f64 / 64.0;
        for xi2 in [0.25, 1.0, 3.0] {
            let p = CotangentPoint::new(0.0, x2, 0.0, xi2);
            let plus = h.value_grad_unchecked(&p).0;
            let minus = h.value_grad_unchecked(&p.negate_xi()).0;
            let mismatch = (plus - minus).abs();
            if mismatch > 1e-10 {
                return Err(Error::SeamMismatch {
                    mismatch,
                    xi1: 0.0,
                    xi2,
                });
            }
        }
    }
    Ok(DualMetric::Reversibilized(k))
}

/// `∂_ξ H`: the velocity of the cotangent geodesic through `p`.
pub fn legendre_velocity(h: &DualMetric, p: &CotangentPoint) -> Result<[f64; 2]> {
    Ok(h.gradient(p)?.dxi)
}

fn fd_weights(order: usize) -> &'static [(i32, f64)] {
    match order {
        0 => &[(0, 1.0)],
        1 => &[(-1, -0.5), (1, 0.5)],
        2 => &[(-1, 1.0), (0, -2.0), (1, 1.0)],
        _ => &[(-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)],
    }
}

/// Central-difference estimate of `∂^i_{ξ1} ∂^j_{ξ2} g` at `(a, b)`.
pub fn fiber_partial(
    g: &dyn Fn(f64, f64) -> f64,
    a: f64,
    b: f64,
    i: usize,
    j: usize,
    step: f64,
) -> f64 {
    let mut acc = 0.0;
    for &(s, w1) in fd_weights(i) {
        for &(t, w2) in fd_weights(j) {
            acc += w1 * w2 * g(a + s as f64 * step, b + t as f64 * step);
        }
    }
    acc / step.powi((i + j) as i32)
}

/// Largest disagreement of all `ξ`-derivatives up to order 3 between `H'`
/// and the two smooth branches `H(ξ)`, `H(-ξ)` at seam points `ξ1 = 0`.
pub fn seam_jet_mismatch(rev: &DualMetric, points: &[CotangentPoint], step: f64) -> f64 {
    let inner = match rev {
        DualMetric::Reversibilized(k) => DualMetric::Katok(k.clone()),
        other => other.clone(),
    };
    let mut worst: f64 = 0.0;
    for p in points {
        let at = |m: &DualMetric, sign: f64| {
            let m = m.clone();
            let (x1, x2) = (p.x1, p.x2);
            move |a: f64, b: f64| {
                m.value_grad_unchecked(&CotangentPoint::new(x1, x2, sign * a, sign * b))
                    .0
            }
        };
        let h_rev = at(rev, 1.0);
        let h_plus = at(&inner, 1.0);
        let h_minus = at(&inner, -1.0);
        for order in 1..=3 {
            for i in 0..=order {
                let j = order - i;
                let d = fiber_partial(&h_rev, 0.0, p.xi2, i, j, step);
                let dp = fiber_partial(&h_plus, 0.0, p.xi2, i, j, step);
                let dm = fiber_partial(&h_minus, 0.0, p.xi2, i, j, step);
                worst = worst.max((d - dp).abs()).max((d - dm).abs());
            }
        }
    }
    worst
}

/// Sampled check of the Finsler axioms for a dual metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub samples: usize,
    pub max_homogeneity_error: f64,
    pub max_euler_error: f64,
    pub max_reversibility_error: f64,
    pub min_hessian_eigenvalue: f64,
}

impl AxiomReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_homogeneity_error <= rel_tol
            && self.max_euler_error <= rel_tol
            && self.min_hessian_eigenvalue > 0.0
    }
}

pub fn validate_axioms(h: &DualMetric, samples: &SampleSpec) -> AxiomReport {
    let pts = samples.points();
    let mut rng = ChaCha8Rng::seed_from_u64(samples.seed ^ 0xa5a5);
    let mut hom: f64 = 0.0;
    let mut euler: f64 = 0.0;
    let mut rev: f64 = 0.0;
    for p in &pts {
        let (v, g) = h.value_grad_unchecked(p);
        let a: f64 = rng.random_range(0.1..10.0);
        let va = h.value_grad_unchecked(&p.scale_xi(a)).0;
        hom = hom.max((va - a * v).abs() / (a * v).abs());
        let e = p.xi1 * g.dxi[0] + p.xi2 * g.dxi[1];
        euler = euler.max((e - v).abs() / v.abs());
        let vm = h.value_grad_unchecked(&p.negate_xi()).0;
        rev = rev.max((vm - v).abs());
    }
    let conv = fiber_convexity_check(h, samples);
    AxiomReport {
        samples: pts.len(),
        max_homogeneity_error: hom,
        max_euler_error: euler,
        max_reversibility_error: rev,
        min_hessian_eigenvalue: conv.min_eigenvalue,
    }
}

/// Serialized metric description, e.g.
/// `{"kind":"katok","profile":{..},"a0":0.5,"a1":1.25,"b":1.75,"alpha":0.03,"reversible":true}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MetricSpec {
    Rotational {
        profile: RotationalProfile,
    },
    Angular,
    Katok {
        profile: RotationalProfile,
        a0: f64,
        a1: f64,
        b: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        reversible: bool,
    },
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl MetricSpec {
    pub fn build(&self) -> Result<DualMetric> {
        match self {
            MetricSpec::Rotational { profile } => Ok(DualMetric::Rotational(profile.clone())),
            MetricSpec::Angular => Ok(DualMetric::Angular),
            MetricSpec::Katok {
                profile,
                a0,
                a1,
                b,
                alpha,
                reversible,
            } => {
                let cutoffs = CutoffPair::new(*a0, *a1, *b)?;
                let h = build_katok_family(profile.clone(), cutoffs, *alpha)?;
                if *reversible {
                    reversibilize(&h)
                } else {
                    Ok(h)
                }
            }
        }
    }
}

impl TryFrom<MetricSpec> for DualMetric {
    type Error = Error;
    fn try_from(spec: MetricSpec) -> Result<Self> {
        spec.build()
    }
}

impl From<DualMetric> for MetricSpec {
    fn from(m: DualMetric) -> Self {
        match m {
            DualMetric::Rotational(profile) => MetricSpec::Rotational { profile },
            DualMetric::Angular => MetricSpec::Angular,
            DualMetric::Katok(_) | DualMetric::Reversibilized(_) => {
                let reversible = matches!(m, DualMetric::Reversibilized(_));
                let (DualMetric::Katok(k) | DualMetric::Reversibilized(k)) = m else {
                    unreachable!()
                };
                MetricSpec::Katok {
                    profile: k.profile,
                    a0: k.cutoffs.a0(),
                    a1: k.cutoffs.a1(),
                    b: k.cutoffs.b(),
                    alpha: k.alpha,
                    reversible,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::make_spliced_profile;
    use approx::assert_relative_eq;

    fn sphere_katok(alpha: f64) -> DualMetric {
        build_katok_family(
            RotationalProfile::RoundSphere,
            CutoffPair::new(0.5, 1.25, 1.75).unwrap(),
            alpha,
        )
        .unwrap()
    }

    #[test]
    fn h0_values() {
        let s = RotationalProfile::RoundSphere;
        assert_eq!(
            eval_h0(&s, &CotangentPoint::new(0.0, 0.0, 1.0, 0.0)).unwrap(),
            1.0
        );
        // 0.5 / sech(1) = 0.771540317407621889...
        assert_relative_eq!(
            eval_h0(&s, &CotangentPoint::new(0.0, 1.0, 0.3, 0.4)).unwrap(),
            0.771_540_317_407_621_9,
            max_relative = 1e-15
        );
        assert_eq!(
            eval_h0(&s, &CotangentPoint::new(0.0, 1.0, 0.0, 0.0)),
            Err(Error::ZeroCovector)
        );
        for p in SampleSpec::default().points().iter().take(100) {
            let a = eval_h0(&s, p).unwrap();
            let b = eval_h0(&s, &p.scale_xi(2.0)).unwrap();
            assert_relative_eq!(b, 2.0 * a, max_relative = 1e-15);
        }
    }

    #[test]
    fn h1_values() {
        assert_eq!(eval_h1(&CotangentPoint::new(0.0, 0.0, 1.0, 0.0)), 1.0);
        assert_eq!(eval_h1(&CotangentPoint::new(0.0, 0.0, 0.0, 5.0)), 0.0);
    }

    #[test]
    fn cone_examples() {
        let s = RotationalProfile::RoundSphere;
        assert!(cone_membership(&s, 0.5, &CotangentPoint::new(0.0, 0.0, 1.0, 0.0)).unwrap());
        assert!(!cone_membership(&s, 0.5, &CotangentPoint::new(0.0, 0.3, 0.0, 1.0)).unwrap());
        // on |x2| = a the cone is the ray through +dx1
        assert!(cone_membership(&s, 0.5, &CotangentPoint::new(0.0, 0.5, 2.0, 0.0)).unwrap());
        assert!(!cone_membership(&s, 0.5, &CotangentPoint::new(0.0, 0.5, 2.0, 1e-6)).unwrap());
        assert!(!cone_membership(&s, 0.5, &CotangentPoint::new(0.0, -0.5, -2.0, 0.0)).unwrap());
        let periodic = RotationalProfile::periodic(4.0, 1.0, 0.2).unwrap();
        assert!(cone_membership(&periodic, 0.5, &CotangentPoint::new(0.0, 0.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn katok_reduces_to_h0_at_zero_alpha() {
        let h = sphere_katok(0.0);
        let s = RotationalProfile::RoundSphere;
        for p in SampleSpec::default().points() {
            assert_eq!(h.eval(&p).unwrap(), eval_h0(&s, &p).unwrap());
        }
    }

    #[test]
    fn katok_locality() {
        let alpha = DEFAULT_ALPHA;
        let h = sphere_katok(alpha);
        let s = RotationalProfile::RoundSphere;
        let inside = CotangentPoint::new(0.0, 0.1, 1.0, 0.2);
        assert!(cone_membership(&s, 0.5, &inside).unwrap());
        assert_eq!(
            h.eval(&inside).unwrap(),
            eval_h0(&s, &inside).unwrap() + alpha * 1.0
        );
        // |x2| in (a1, b)
        let band = CotangentPoint::new(0.0, 1.5, 1.0, 0.0);
        assert_eq!(h.eval(&band).unwrap(), eval_h0(&s, &band).unwrap());
    }

    #[test]
    fn katok_gradient_matches_finite_differences() {
        let h = sphere_katok(DEFAULT_ALPHA);
        let d = 1e-6;
        for p in SampleSpec::new(400, -2.0, 2.0, 3).points() {
            let g = h.gradient(&p).unwrap();
            let e = |q: CotangentPoint| h.eval(&q).unwrap();
            let fd = [
                (e(CotangentPoint { x2: p.x2 + d, ..p }) - e(CotangentPoint { x2: p.x2 - d, ..p }))
                    / (2.0 * d),
                (e(CotangentPoint {
                    xi1: p.xi1 + d,
                    ..p
                }) - e(CotangentPoint {
                    xi1: p.xi1 - d,
                    ..p
                })) / (2.0 * d),
                (e(CotangentPoint {
                    xi2: p.xi2 + d,
                    ..p
                }) - e(CotangentPoint {
                    xi2: p.xi2 - d,
                    ..p
                })) / (2.0 * d),
            ];
            assert!((fd[0] - g.dx[1]).abs() < 1e-6, "dx2 at {p:?}");
            assert!((fd[1] - g.dxi[0]).abs() < 1e-6, "dxi1 at {p:?}");
            assert!((fd[2] - g.dxi[1]).abs() < 1e-6, "dxi2 at {p:?}");
            assert_eq!(g.dx[0], 0.0);
        }
    }

    #[test]
    fn legendre_velocity_examples() {
        let s = DualMetric::Rotational(RotationalProfile::RoundSphere);
        let v = legendre_velocity(&s, &CotangentPoint::new(0.0, 0.0, 1.0, 0.0)).unwrap();
        assert_eq!(v, [1.0, 0.0]);
        let h = sphere_katok(DEFAULT_ALPHA);
        let p = CotangentPoint::new(0.0, 0.1, 1.0, 0.2);
        let v = legendre_velocity(&h, &p).unwrap();
        let v0 = legendre_velocity(&s, &p).unwrap();
        assert_relative_eq!(v[0], v0[0] + DEFAULT_ALPHA, max_relative = 1e-15);
        assert_eq!(v[1], v0[1]);
        let euler = p.xi1 * v[0] + p.xi2 * v[1];
        assert_relative_eq!(euler, h.eval(&p).unwrap(), max_relative = 1e-14);
    }

    #[test]
    fn rotational_hessian_is_conformal() {
        let s = DualMetric::Rotational(RotationalProfile::RoundSphere);
        let p = CotangentPoint::new(0.0, 0.7, 0.4, -1.1);
        let m = fiber_hessian(&s, &p);
        let f = eval_f0(0.7);
        assert_relative_eq!(m[0][0], 1.0 / (f * f), max_relative = 1e-6);
        assert_relative_eq!(m[1][1], 1.0 / (f * f), max_relative = 1e-6);
        assert!(m[0][1].abs() < 1e-6);
    }

    #[test]
    fn convexity_gate_and_critical_alpha() {
        let cut = CutoffPair::new(0.5, 1.25, 1.75).unwrap();
        let h = sphere_katok(DEFAULT_ALPHA);
        let rep = fiber_convexity_check(&h, &SampleSpec::new(1000, -2.0, 2.0, 11));
        assert!(rep.pass, "{rep:?}");
        let samples = SampleSpec::new(300, -2.0, 2.0, 12);
        let crit = critical_alpha(&RotationalProfile::RoundSphere, &cut, 50.0, &samples);
        assert!(crit > DEFAULT_ALPHA && crit < 50.0, "critical alpha {crit}");
        let err = build_katok_family(RotationalProfile::RoundSphere, cut, 50.0);
        assert!(matches!(err, Err(Error::ConvexityLost { .. })));
    }

    #[test]
    fn reversibilized_is_even() {
        let h = sphere_katok(DEFAULT_ALPHA);
        let r = reversibilize(&h).unwrap();
        for p in SampleSpec::default().points() {
            let a = r.eval(&p).unwrap();
            assert!((a - r.eval(&p.negate_xi()).unwrap()).abs() <= 1e-12);
            if p.xi1 > 0.0 {
                assert_eq!(a, h.eval(&p).unwrap());
            }
        }
        let zero = reversibilize(&sphere_katok(0.0)).unwrap();
        let h0 = DualMetric::Rotational(RotationalProfile::RoundSphere);
        for p in SampleSpec::default().points().iter().take(200) {
            assert_eq!(zero.eval(p).unwrap(), h0.eval(p).unwrap());
        }
        assert!(reversibilize(&h0).is_err());
    }

    #[test]
    fn seam_jets_agree() {
        let r = reversibilize(&sphere_katok(DEFAULT_ALPHA)).unwrap();
        let pts: Vec<_> = (0..20)
            .map(|k| {
                CotangentPoint::new(
                    0.0,
                    -2.0 + 0.2 * k as f64,
                    0.0,
                    if k % 2 == 0 { 1.0 } else { -0.7 },
                )
            })
            .collect();
        assert!(seam_jet_mismatch(&r, &pts, 1e-3) <= 1e-5);
    }

    #[test]
    fn torus_katok_needs_matching_profile() {
        let p = make_spliced_profile(4.0, 0.25).unwrap();
        let ok = build_katok_family(
            p.clone(),
            CutoffPair::new(0.5, 1.25, 1.75).unwrap(),
            DEFAULT_ALPHA,
        );
        assert!(ok.is_ok());
        let bad = build_katok_family(p, CutoffPair::new(0.5, 1.25, 1.9).unwrap(), DEFAULT_ALPHA);
        assert!(matches!(bad, Err(Error::ProfileMismatch(_))));
    }

    #[test]
    fn metric_spec_roundtrip() {
        let json = r#"{"kind":"katok","profile":{"kind":"spliced","L":4.0,"eps":0.25},"a0":0.5,"a1":1.25,"b":1.75,"alpha":0.03,"reversible":true}"#;
        let m: DualMetric = serde_json::from_str(json).unwrap();
        assert!(matches!(m, DualMetric::Reversibilized(_)));
        let back: DualMetric = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
