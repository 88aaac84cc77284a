//! Hamiltonian flows of dual metrics on the cotangent bundle.
//!
//! The canonical equations `ẋ = ∂_ξ H`, `ξ̇ = -∂_x H` are integrated with an
//! adaptive Dormand-Prince scheme. For a degree-1 Hamiltonian the base curve
//! on `{H = 1}` is parametrised by Finsler arclength. `H` and `ξ1` are
//! monitored at a fixed checkpoint cadence.

pub mod dopri;

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{CotangentPoint, DualMetric, KatokMetric};
use crate::profiles::{eval_f0, RotationalProfile};
use dopri::{Dopri5, State, StepControl};

/// Tolerances and bookkeeping for orbit integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
    /// Allowed relative drift of `H` (and of `ξ1`) over a run.
    pub invariant_drift_tol: f64,
    /// Rescale `ξ` back onto the initial `H`-level at every checkpoint.
    pub projection: bool,
    /// F-time between checkpoints.
    pub checkpoint_interval: f64,
    /// Cap on `|x2|` for runs on the round-sphere chart.
    pub pole_cap: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-12,
            abs_tol: 1e-12,
            max_step: 0.25,
            max_steps: 50_000_000,
            invariant_drift_tol: 1e-8,
            projection: false,
            checkpoint_interval: 0.1,
            pole_cap: 30.0,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("max_step", self.max_step),
            ("invariant_drift_tol", self.invariant_drift_tol),
            ("checkpoint_interval", self.checkpoint_interval),
            ("pole_cap", self.pole_cap),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::ConfigInvalid {
                    path: format!("integrator.{name}"),
                    message: format!("must be positive, got {v}"),
                });
            }
        }
        Ok(())
    }

    pub(crate) fn step_control(&self) -> StepControl {
        StepControl {
            rtol: self.rel_tol,
            atol: self.abs_tol,
            max_step: self.max_step,
            max_steps: self.max_steps,
        }
    }
}

/// `(∂_ξ H, -∂_x H)` at `p`.
pub fn hamiltonian_vector_field(h: &DualMetric, p: &CotangentPoint) -> Result<[f64; 4]> {
    let g = h.gradient(p)?;
    Ok([g.dxi[0], g.dxi[1], -g.dx[0], -g.dx[1]])
}

pub(crate) fn field_fn(h: &DualMetric) -> impl Fn(&State) -> State + '_ {
    move |y: &State| {
        let (_, g) = h.value_grad_unchecked(&CotangentPoint::from_array(*y));
        [g.dxi[0], g.dxi[1], -g.dx[0], -g.dx[1]]
    }
}

/// Conserved quantities logged at a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvariantRecord {
    pub t: f64,
    pub h: f64,
    pub h1: f64,
}

/// Sampled orbit: states with reduced base points, the continuous lift of
/// the base curve, and the invariant log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitTrace {
    pub times: Vec<f64>,
    pub states: Vec<CotangentPoint>,
    pub lifted_base: Vec<[f64; 2]>,
    pub invariant_log: Vec<InvariantRecord>,
    /// Periods of the base coordinates; `x2` is `inf` on the sphere chart.
    pub periods: [f64; 2],
}

impl OrbitTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<CotangentPoint> {
        let (s, l) = (self.states.last()?, self.lifted_base.last()?);
        Some(CotangentPoint::new(l[0], l[1], s.xi1, s.xi2))
    }

    /// Largest relative drift of `H` and of `ξ1` against their initial values.
    pub fn max_drift(&self) -> (f64, f64) {
        let Some(first) = self.invariant_log.first() else {
            return (0.0, 0.0);
        };
        let rel = |v: f64, v0: f64| {
            let scale = if v0 == 0.0 { 1.0 } else { v0.abs() };
            (v - v0).abs() / scale
        };
        self.invariant_log
            .iter()
            .fold((0.0f64, 0.0f64), |(a, b), r| {
                (a.max(rel(r.h, first.h)), b.max(rel(r.h1, first.h1)))
            })
    }

    /// Sub-trace up to time `t` (inclusive).
    pub fn truncated(&self, t: f64) -> OrbitTrace {
        let n = self.times.partition_point(|&s| s <= t);
        OrbitTrace {
            times: self.times[..n].to_vec(),
            states: self.states[..n].to_vec(),
            lifted_base: self.lifted_base[..n].to_vec(),
            invariant_log: self
                .invariant_log
                .iter()
                .filter(|r| r.t <= t)
                .copied()
                .collect(),
            periods: self.periods,
        }
    }
}

fn base_periods(h: &DualMetric) -> [f64; 2] {
    let l = h
        .profile()
        .and_then(|p| p.period())
        .unwrap_or(f64::INFINITY);
    [TAU, l]
}

fn on_sphere_chart(h: &DualMetric) -> bool {
    matches!(h.profile(), Some(RotationalProfile::RoundSphere))
}

struct Monitor<'a> {
    h: &'a DualMetric,
    cfg: &'a IntegratorConfig,
    h0: f64,
    h1_0: f64,
    sphere: bool,
}

impl Monitor<'_> {
    fn record(&self, t: f64, y: &State) -> Result<InvariantRecord> {
        let p = CotangentPoint::from_array(*y);
        let hv = self.h.value_grad_unchecked(&p).0;
        let tol = self.cfg.invariant_drift_tol;
        let drift = (hv - self.h0).abs() / self.h0.abs().max(f64::MIN_POSITIVE);
        if drift > tol || !drift.is_finite() {
            return Err(Error::InvariantDrift { t, drift, tol });
        }
        let scale = if self.h1_0 == 0.0 {
            1.0
        } else {
            self.h1_0.abs()
        };
        let drift1 = (p.xi1 - self.h1_0).abs() / scale;
        if drift1 > tol {
            return Err(Error::InvariantDrift {
                t,
                drift: drift1,
                tol,
            });
        }
        Ok(InvariantRecord {
            t,
            h: hv,
            h1: p.xi1,
        })
    }

    fn pole_check(&self, t: f64, y: &State) -> Result<()> {
        if self.sphere && y[1].abs() > self.cfg.pole_cap {
            return Err(Error::PoleProximity { t, x2: y[1] });
        }
        Ok(())
    }

    fn project(&self, y: &State) -> State {
        if matches!(self.h, DualMetric::Angular) {
            return *y;
        }
        let hv = self
            .h
            .value_grad_unchecked(&CotangentPoint::from_array(*y))
            .0;
        let a = self.h0 / hv;
        [y[0], y[1], a * y[2], a * y[3]]
    }
}

fn prepare<'a>(
    h: &'a DualMetric,
    p0: &CotangentPoint,
    cfg: &'a IntegratorConfig,
) -> Result<Monitor<'a>> {
    cfg.validate()?;
    let h0 = h.eval(p0)?;
    if !matches!(h, DualMetric::Angular) && !(h0 > 0.0) {
        return Err(Error::StepFailure(format!("H(p0) = {h0} must be positive")));
    }
    Ok(Monitor {
        h,
        cfg,
        h0,
        h1_0: p0.xi1,
        sphere: on_sphere_chart(h),
    })
}

/// Integrate from `p0` over `[0, t_end]`, recording a checkpoint every
/// `checkpoint_interval`.
pub fn integrate_orbit(
    h: &DualMetric,
    p0: &CotangentPoint,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<OrbitTrace> {
    if !(t_end >= 0.0) {
        return Err(Error::StepFailure(format!(
            "orbit length {t_end} must be non-negative"
        )));
    }
    let mon = prepare(h, p0, cfg)?;
    mon.pole_check(0.0, &p0.to_array())?;
    let periods = base_periods(h);
    let profile = h
        .profile()
        .cloned()
        .unwrap_or(RotationalProfile::RoundSphere);
    let mut trace = OrbitTrace {
        times: Vec::new(),
        states: Vec::new(),
        lifted_base: Vec::new(),
        invariant_log: Vec::new(),
        periods,
    };
    let push = |trace: &mut OrbitTrace, t: f64, y: &State| -> Result<()> {
        let rec = mon.record(t, y)?;
        let p = CotangentPoint::from_array(*y);
        trace.times.push(t);
        trace.states.push(p.reduced(&profile));
        trace.lifted_base.push([p.x1, p.x2]);
        trace.invariant_log.push(rec);
        Ok(())
    };
    let y0 = p0.to_array();
    push(&mut trace, 0.0, &y0)?;
    if t_end == 0.0 {
        return Ok(trace);
    }
    let mut solver = Dopri5::new(field_fn(h), cfg.step_control(), 0.0, y0, 1.0);
    let mut k = 1usize;
    loop {
        let target = (k as f64 * cfg.checkpoint_interval).min(t_end);
        while solver.t() < target {
            solver.step(target)?;
            mon.pole_check(solver.t(), solver.y())?;
        }
        let y = *solver.y();
        push(&mut trace, target, &y)?;
        if cfg.projection {
            solver.reset_state(mon.project(&y));
        }
        if target >= t_end {
            break;
        }
        k += 1;
    }
    Ok(trace)
}

/// The time-`t` map `φ_H^t(p)`; `t` may be negative.
pub fn flow_map(
    h: &DualMetric,
    p: &CotangentPoint,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<CotangentPoint> {
    let mon = prepare(h, p, cfg)?;
    if t == 0.0 {
        return Ok(*p);
    }
    let dir = t.signum();
    let mut solver = Dopri5::new(field_fn(h), cfg.step_control(), 0.0, p.to_array(), dir);
    let mut k = 1usize;
    loop {
        let target = dir * (k as f64 * cfg.checkpoint_interval).min(t.abs());
        while (target - solver.t()) * dir > 0.0 {
            solver.step(target)?;
            mon.pole_check(solver.t(), solver.y())?;
        }
        let y = *solver.y();
        mon.record(target, &y)?;
        if cfg.projection {
            solver.reset_state(mon.project(&y));
        }
        if target.abs() >= t.abs() {
            return Ok(CotangentPoint::from_array(*solver.y()));
        }
        k += 1;
    }
}

/// Accepted steps of one integration, evaluable anywhere in `[0, t_end]`.
#[derive(Debug, Clone)]
pub struct DenseTrajectory {
    steps: Vec<dopri::Step>,
}

impl DenseTrajectory {
    pub fn t_end(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.t1)
    }

    pub fn eval(&self, t: f64) -> CotangentPoint {
        let i = self
            .steps
            .partition_point(|s| s.t1 < t)
            .min(self.steps.len() - 1);
        CotangentPoint::from_array(self.steps[i].interpolate(t))
    }
}

/// Integrate forward to `t_end` keeping every dense-output step.
pub fn dense_trajectory(
    h: &DualMetric,
    p0: &CotangentPoint,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<DenseTrajectory> {
    let mon = prepare(h, p0, cfg)?;
    if !(t_end > 0.0) {
        return Err(Error::StepFailure(format!(
            "trajectory length {t_end} must be positive"
        )));
    }
    let mut solver = Dopri5::new(field_fn(h), cfg.step_control(), 0.0, p0.to_array(), 1.0);
    let mut steps = Vec::new();
    while solver.t() < t_end {
        steps.push(solver.step(t_end)?);
        mon.pole_check(solver.t(), solver.y())?;
    }
    mon.record(t_end, solver.y())?;
    Ok(DenseTrajectory { steps })
}

/// Cone membership with a small numerical slack on both inequalities.
fn in_cone_with_slack(profile: &RotationalProfile, a: f64, p: &CotangentPoint, slack: f64) -> bool {
    let y = profile.reduce(p.x2);
    let ratio = profile.eval(p.x2) * p.xi1 / p.xi_norm();
    y.abs() <= a + slack && ratio >= eval_f0(a) - slack
}

/// `φ_{H0}^t ∘ φ_{α H1}^t (p0)`: the rigid shift `x1 -> x1 + αt` followed
/// by the unperturbed rotational flow. On `U_{a0}` this equals the flow of
/// `H_α = H0 + α H1`.
pub fn compose_commuting_flows(
    katok: &KatokMetric,
    p0: &CotangentPoint,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<CotangentPoint> {
    let profile = katok.profile();
    let a0 = katok.cutoffs().a0();
    let slack = 1e-9;
    if !in_cone_with_slack(profile, a0, p0, slack) {
        return Err(Error::ConeViolation { t: 0.0 });
    }
    let shifted = CotangentPoint::new(p0.x1 + katok.alpha() * t, p0.x2, p0.xi1, p0.xi2);
    let h0 = DualMetric::Rotational(profile.clone());
    if t < 0.0 {
        return flow_map(&h0, &shifted, t, cfg);
    }
    let trace = integrate_orbit(&h0, &shifted, t, cfg)?;
    for (s, p) in trace.times.iter().zip(&trace.states) {
        if !in_cone_with_slack(profile, a0, p, slack) {
            return Err(Error::ConeViolation { t: *s });
        }
    }
    trace
        .last_state()
        .ok_or_else(|| Error::StepFailure("empty trace".into()))
}

/// Phase-space distance with base coordinates compared modulo their periods.
pub fn phase_distance(a: &CotangentPoint, b: &CotangentPoint, periods: [f64; 2]) -> f64 {
    let wrap = |d: f64, p: f64| {
        if p.is_finite() {
            let r = d.rem_euclid(p);
            r.min(p - r)
        } else {
            d.abs()
        }
    };
    let d1 = wrap(a.x1 - b.x1, periods[0]);
    let d2 = wrap(a.x2 - b.x2, periods[1]);
    let d3 = a.xi1 - b.xi1;
    let d4 = a.xi2 - b.xi2;
    (d1 * d1 + d2 * d2 + d3 * d3 + d4 * d4).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicityReport {
    pub period: f64,
    pub distances: Vec<f64>,
    pub max_distance: f64,
}

/// Integrate each sample for time `period` and report the return distance.
pub fn check_periodicity(
    h: &DualMetric,
    samples: &[CotangentPoint],
    period: f64,
    cfg: &IntegratorConfig,
) -> Result<PeriodicityReport> {
    use rayon::prelude::*;
    let periods = base_periods(h);
    let distances = samples
        .par_iter()
        .map(|p| flow_map(h, p, period, cfg).map(|q| phase_distance(p, &q, periods)))
        .collect::<Result<Vec<_>>>()?;
    let max_distance = distances.iter().copied().fold(0.0, f64::max);
    Ok(PeriodicityReport {
        period,
        distances,
        max_distance,
    })
}

/// Deterministic samples of `U_a ∩ {H0 = 1}` (profile must equal `f0` on `[-a, a]`).
pub fn sample_cone(
    profile: &RotationalProfile,
    a: f64,
    count: usize,
    seed: u64,
) -> Vec<CotangentPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fa = eval_f0(a);
    (0..count)
        .map(|_| {
            let x1 = rng.random_range(0.0..TAU);
            let x2 = rng.random_range(-a..=a);
            let f = profile.eval(x2);
            let max_angle = (fa / f).min(1.0).acos();
            let theta = rng.random_range(-max_angle..=max_angle);
            CotangentPoint::new(x1, x2, f * theta.cos(), f * theta.sin())
        })
        .collect()
}

/// Continuous lift of the reduced base curve of `trace` to `R^2`, starting
/// at the first reduced base point.
pub fn lift_to_cover(trace: &OrbitTrace) -> Result<Vec<[f64; 2]>> {
    let Some(first) = trace.states.first() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::with_capacity(trace.states.len());
    let mut cur = [first.x1, first.x2];
    out.push(cur);
    for (i, w) in trace.states.windows(2).enumerate() {
        let raw = [w[1].x1 - w[0].x1, w[1].x2 - w[0].x2];
        for c in 0..2 {
            let p = trace.periods[c];
            let d = if p.is_finite() {
                raw[c] - p * (raw[c] / p).round()
            } else {
                raw[c]
            };
            // wrapped steps near half a period cannot be told apart from their complement
            if p.is_finite() && d.abs() > 0.4 * p {
                return Err(Error::LiftAmbiguity { index: i + 1 });
            }
            cur[c] += d;
        }
        out.push(cur);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{build_katok_family, DEFAULT_ALPHA};
    use crate::profiles::{f0_inverse, make_spliced_profile, CutoffPair};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn sphere() -> DualMetric {
        DualMetric::Rotational(RotationalProfile::RoundSphere)
    }

    fn katok_sphere() -> KatokMetric {
        match build_katok_family(
            RotationalProfile::RoundSphere,
            CutoffPair::new(0.5, 1.25, 1.75).unwrap(),
            DEFAULT_ALPHA,
        )
        .unwrap()
        {
            DualMetric::Katok(k) => k,
            _ => unreachable!(),
        }
    }

    #[test]
    fn vector_field_examples() {
        let v =
            hamiltonian_vector_field(&sphere(), &CotangentPoint::new(0.0, 0.0, 1.0, 0.0)).unwrap();
        assert_eq!(v, [1.0, 0.0, 0.0, 0.0]);
        let base =
            hamiltonian_vector_field(&sphere(), &CotangentPoint::new(0.0, 1.0, 0.3, 0.4)).unwrap();
        for x1 in [1.0, 2.0] {
            let w = hamiltonian_vector_field(&sphere(), &CotangentPoint::new(x1, 1.0, 0.3, 0.4))
                .unwrap();
            assert_eq!(w, base);
        }
        // |ξ| f0'(1) / f0(1)^2 = -0.5 tanh(1) / sech(1) = -0.587600596821900728...
        assert!((base[3] - (-0.587_600_596_821_900_7)).abs() < 1e-14);
        assert!(
            hamiltonian_vector_field(&sphere(), &CotangentPoint::new(0.0, 0.0, 0.0, 0.0)).is_err()
        );
    }

    #[test]
    fn equator_is_stationary_in_reduced_system() {
        let cfg = IntegratorConfig::default();
        let tr = integrate_orbit(
            &sphere(),
            &CotangentPoint::new(0.0, 0.0, 1.0, 0.0),
            10.0,
            &cfg,
        )
        .unwrap();
        let last = tr.states.last().unwrap();
        assert!((last.x1 - 10.0f64.rem_euclid(TAU)).abs() < 1e-8);
        assert_eq!(last.x2, 0.0);
        assert_eq!((last.xi1, last.xi2), (1.0, 0.0));
        assert!((tr.lifted_base.last().unwrap()[0] - 10.0).abs() < 1e-8);
        assert_eq!(*tr.times.last().unwrap(), 10.0);
        assert!(tr.times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn meridian_hits_pole_cap() {
        let cfg = IntegratorConfig::default();
        let err = integrate_orbit(
            &sphere(),
            &CotangentPoint::new(0.0, 0.0, 0.0, 1.0),
            3.0,
            &cfg,
        )
        .unwrap_err();
        match err {
            Error::PoleProximity { t, .. } => assert!(t < FRAC_PI_2 + 1e-6, "t = {t}"),
            other => panic!("expected PoleProximity, got {other:?}"),
        }
    }

    #[test]
    fn conservation_over_long_orbit() {
        let cfg = IntegratorConfig::default();
        let k = DualMetric::Katok(katok_sphere());
        let p = CotangentPoint::new(0.3, 0.2, 0.6, 0.55);
        let tr = integrate_orbit(&k, &p, 100.0, &cfg).unwrap();
        let (dh, d1) = tr.max_drift();
        assert!(dh <= 1e-8 && d1 <= 1e-8, "{dh} {d1}");
    }

    #[test]
    fn angular_flow_is_rigid_rotation() {
        let cfg = IntegratorConfig::default();
        let p = CotangentPoint::new(0.5, 0.3, 0.7, -0.2);
        let q = flow_map(&DualMetric::Angular, &p, 2.0, &cfg).unwrap();
        assert!((q.x1 - 2.5).abs() < 1e-14);
        assert_eq!((q.x2, q.xi1, q.xi2), (p.x2, p.xi1, p.xi2));
        let rep = check_periodicity(&DualMetric::Angular, &[p], TAU, &cfg).unwrap();
        assert!(rep.max_distance < 1e-12);
    }

    #[test]
    fn cone_is_periodic_under_h0() {
        let cfg = IntegratorConfig::default();
        let samples = sample_cone(&RotationalProfile::RoundSphere, 0.5, 10, 1);
        let rep = check_periodicity(&sphere(), &samples, TAU, &cfg).unwrap();
        assert!(rep.max_distance <= 1e-6, "{}", rep.max_distance);
    }

    #[test]
    fn rotating_torus_orbit_is_not_periodic() {
        let cfg = IntegratorConfig::default();
        let prof = make_spliced_profile(4.0, 0.25).unwrap();
        let h = DualMetric::Rotational(prof.clone());
        let f = prof.eval(0.0);
        let c = 0.1;
        let p = CotangentPoint::new(0.0, 0.0, c, (f * f - c * c).sqrt());
        let rep = check_periodicity(&h, &[p], TAU, &cfg).unwrap();
        assert!(rep.max_distance > 1e-2, "{}", rep.max_distance);
    }

    #[test]
    fn commuting_flow_oracle() {
        let cfg = IntegratorConfig::default();
        let k = katok_sphere();
        let p = CotangentPoint::new(0.0, 0.1, 0.97, 0.1);
        // the H_{αH1} piece alone is the rigid shift
        let shift = flow_map(&DualMetric::Angular, &p, 1.0, &cfg).unwrap();
        assert!((shift.x1 - 1.0).abs() < 1e-14);
        let direct = flow_map(&DualMetric::Katok(k.clone()), &p, TAU, &cfg).unwrap();
        let composed = compose_commuting_flows(&k, &p, TAU, &cfg).unwrap();
        assert!(phase_distance(&direct, &composed, [f64::INFINITY; 2]) < 1e-6);
        let zero =
            match build_katok_family(RotationalProfile::RoundSphere, *k.cutoffs(), 0.0).unwrap() {
                DualMetric::Katok(z) => z,
                _ => unreachable!(),
            };
        let a = compose_commuting_flows(&zero, &p, 3.0, &cfg).unwrap();
        let b = flow_map(&sphere(), &p, 3.0, &cfg).unwrap();
        assert!(phase_distance(&a, &b, [f64::INFINITY; 2]) < 1e-8);
        let outside = CotangentPoint::new(0.0, 0.1, 0.2, 0.9);
        assert!(matches!(
            compose_commuting_flows(&k, &outside, 1.0, &cfg),
            Err(Error::ConeViolation { .. })
        ));
    }

    #[test]
    fn time_reversal() {
        let cfg = IntegratorConfig::default();
        let k = DualMetric::Katok(katok_sphere());
        let p = CotangentPoint::new(0.1, -0.4, 0.5, 0.7);
        let q = flow_map(&k, &p, 7.0, &cfg).unwrap();
        let back = flow_map(&k, &q, -7.0, &cfg).unwrap();
        assert!(phase_distance(&p, &back, [f64::INFINITY; 2]) < 1e-7);
    }

    #[test]
    fn lift_reproduces_native_lift() {
        let cfg = IntegratorConfig::default();
        let prof = make_spliced_profile(4.0, 0.25).unwrap();
        let h = DualMetric::Rotational(prof.clone());
        let f = prof.eval(0.0);
        let p = CotangentPoint::new(0.0, 0.0, 0.1, (f * f - 0.01).sqrt());
        let tr = integrate_orbit(&h, &p, 40.0, &cfg).unwrap();
        let lift = lift_to_cover(&tr).unwrap();
        for (a, b) in lift.iter().zip(&tr.lifted_base) {
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            let red = CotangentPoint::new(a[0], a[1], 0.0, 1.0).reduced(&prof);
            let orig = CotangentPoint::new(b[0], b[1], 0.0, 1.0).reduced(&prof);
            assert!((red.x1 - orig.x1).abs() < 1e-12 || (red.x1 - orig.x1).abs() > TAU - 1e-12);
        }
        let eq = integrate_orbit(
            &sphere(),
            &CotangentPoint::new(0.0, 0.0, 1.0, 0.0),
            4.0 * PI,
            &cfg,
        )
        .unwrap();
        let l = lift_to_cover(&eq).unwrap();
        let end = l.last().unwrap();
        assert!((end[0] - 4.0 * PI).abs() < 1e-8 && end[1] == 0.0);
    }

    #[test]
    fn trapped_orbit_respects_clairaut_bound() {
        let cfg = IntegratorConfig::default();
        let prof = make_spliced_profile(4.0, 0.25).unwrap();
        let h = build_katok_family(
            prof.clone(),
            CutoffPair::new(0.5, 1.25, 1.75).unwrap(),
            DEFAULT_ALPHA,
        )
        .unwrap();
        let p = CotangentPoint::new(0.0, 0.0, 0.6, 0.8);
        let h0 = crate::metrics::eval_h0(&prof, &p).unwrap();
        let x_star = f0_inverse(p.xi1 / h0).unwrap();
        let tr = integrate_orbit(&h, &p, 60.0, &cfg).unwrap();
        let lift = lift_to_cover(&tr).unwrap();
        assert!(lift.iter().all(|b| b[1].abs() <= x_star + 1e-9));
        assert!(lift.iter().any(|b| b[1].abs() > x_star - 1e-2));
    }
}
