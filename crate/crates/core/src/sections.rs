//! Transverse annular sections, first-return maps and the smooth division
//! used to extend return times to the annulus boundary.

use std::cell::RefCell;
use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::dopri::{single_step, Dopri5, State};
use crate::flow::{dense_trajectory, field_fn, DenseTrajectory, IntegratorConfig};
use crate::metrics::{CotangentPoint, DualMetric};
use crate::profiles::RotationalProfile;

/// Which annulus to cut the flow with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SectionKind {
    /// Unit covectors over `{x2 = 0}` crossing northwards.
    EquatorBirkhoff,
    /// `A_z` on the torus for `z = (1, 0)` (section `{x1 = offset}`, crossing
    /// with `ẋ1 > 0`) or `z = (0, 1)` (section `{x2 = offset}`, `ẋ2 > 0`).
    MeridianAz { z: [i32; 2], offset: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SectionSpec {
    #[serde(rename = "annulus")]
    pub kind: SectionKind,
    pub transversality_tol: f64,
    pub max_return_time: f64,
}

impl Default for SectionSpec {
    fn default() -> Self {
        SectionSpec {
            kind: SectionKind::EquatorBirkhoff,
            transversality_tol: 1e-6,
            max_return_time: 50.0,
        }
    }
}

impl SectionSpec {
    pub fn equator() -> Self {
        SectionSpec::default()
    }

    pub fn az(z: [i32; 2], offset: f64) -> Self {
        SectionSpec {
            kind: SectionKind::MeridianAz { z, offset },
            ..SectionSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: String| Error::ConfigInvalid {
            path: format!("section.{path}"),
            message,
        };
        if !(self.transversality_tol > 0.0) {
            return Err(bad("transversality_tol", "must be positive".into()));
        }
        if !(self.max_return_time > 0.0 && self.max_return_time.is_finite()) {
            return Err(bad("max_return_time", "must be positive and finite".into()));
        }
        if let SectionKind::MeridianAz { z, offset } = self.kind {
            if z != [1, 0] && z != [0, 1] {
                return Err(bad("z", format!("{z:?} unsupported; use [1, 0] or [0, 1]")));
            }
            if !offset.is_finite() {
                return Err(bad("offset", "must be finite".into()));
            }
        }
        Ok(())
    }
}

/// A section resolved against a metric's profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    spec: SectionSpec,
    profile: RotationalProfile,
    /// Index of the base coordinate that is constant on the section.
    coord: usize,
    level: f64,
    /// Period of that coordinate (`inf` on the sphere chart).
    coord_period: f64,
    dir: [f64; 2],
    normal: [f64; 2],
    s_period: f64,
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn wrap_pi(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

impl Section {
    pub fn new(h: &DualMetric, spec: &SectionSpec) -> Result<Self> {
        spec.validate()?;
        let profile = h
            .profile()
            .cloned()
            .ok_or_else(|| Error::ProfileMismatch("sections need a rotational profile".into()))?;
        let l = profile.period();
        let x2_period = l.unwrap_or(f64::INFINITY);
        let sec = match spec.kind {
            SectionKind::EquatorBirkhoff => Section {
                spec: *spec,
                coord: 1,
                level: 0.0,
                coord_period: x2_period,
                dir: [1.0, 0.0],
                normal: [0.0, 1.0],
                s_period: TAU * profile.eval(0.0),
                profile,
            },
            SectionKind::MeridianAz { z, offset } => {
                let Some(meridian) = profile.meridian_length() else {
                    return Err(Error::ProfileMismatch(
                        "A_z sections need a torus profile".into(),
                    ));
                };
                if z == [1, 0] {
                    Section {
                        spec: *spec,
                        coord: 0,
                        level: offset,
                        coord_period: TAU,
                        dir: [0.0, 1.0],
                        normal: [1.0, 0.0],
                        s_period: meridian,
                        profile,
                    }
                } else {
                    Section {
                        spec: *spec,
                        coord: 1,
                        level: offset,
                        coord_period: x2_period,
                        dir: [-1.0, 0.0],
                        normal: [0.0, 1.0],
                        s_period: TAU * profile.eval(offset),
                        profile,
                    }
                }
            }
        };
        Ok(sec)
    }

    pub fn spec(&self) -> &SectionSpec {
        &self.spec
    }

    /// Length of the base curve.
    pub fn s_period(&self) -> f64 {
        self.s_period
    }

    /// Lifted arclength coordinate of a base point along the base curve.
    fn lifted_s(&self, x: [f64; 2]) -> f64 {
        match (self.coord, self.dir[0] < 0.0) {
            (1, false) => self.profile.eval(self.level) * x[0],
            (1, true) => -self.profile.eval(self.level) * x[0],
            _ => self.profile.arclength(x[1]),
        }
    }

    fn base_point(&self, s: f64) -> [f64; 2] {
        match (self.coord, self.dir[0] < 0.0) {
            (1, false) => [s / self.profile.eval(self.level), self.level],
            (1, true) => [-s / self.profile.eval(self.level), self.level],
            _ => [self.level, self.profile.inverse_arclength(s)],
        }
    }

    /// Index of the section level at or just below `x`.
    fn cell(&self, x: f64) -> i64 {
        let rel = x - self.level;
        if self.coord_period.is_finite() {
            let q = rel / self.coord_period;
            let k = q.round();
            if (q - k).abs() < 1e-12 {
                k as i64
            } else {
                q.floor() as i64
            }
        } else if rel >= -1e-12 {
            0
        } else {
            -1
        }
    }

    fn level_value(&self, k: i64) -> f64 {
        if self.coord_period.is_finite() {
            self.level + k as f64 * self.coord_period
        } else {
            self.level
        }
    }

    fn on_section(&self, p: &CotangentPoint) -> bool {
        let x = [p.x1, p.x2][self.coord];
        let k = self.cell(x);
        (x - self.level_value(k)).abs() <= 1e-12 * (1.0 + x.abs())
    }

    /// Euclidean velocity component normal to the base curve.
    pub fn normal_speed(&self, h: &DualMetric, p: &CotangentPoint) -> Result<f64> {
        let g = h.gradient(p)?;
        Ok(dot(g.dxi, self.normal))
    }

    /// Annulus coordinates `(s, u)` of a state on the section, `s` reduced
    /// to `[0, s_period)`.
    pub fn coordinates(&self, h: &DualMetric, p: &CotangentPoint) -> Result<[f64; 2]> {
        let v = h.gradient(p)?.dxi;
        let u = dot(v, self.normal).atan2(dot(v, self.dir));
        let s = self.lifted_s([p.x1, p.x2]).rem_euclid(self.s_period);
        Ok([s, u])
    }

    /// The unit (`H = 1`) covector over the base point `s` whose velocity
    /// makes the angle `u` with the base direction.
    pub fn state_at(&self, h: &DualMetric, s: f64, u: f64) -> Result<CotangentPoint> {
        let x = self.base_point(s);
        let (su, cu) = u.sin_cos();
        let target =
            (cu * self.dir[1] + su * self.normal[1]).atan2(cu * self.dir[0] + su * self.normal[0]);
        let vel_angle = |theta: f64| -> Result<f64> {
            let p = CotangentPoint::new(x[0], x[1], theta.cos(), theta.sin());
            let v = h.gradient(&p)?.dxi;
            Ok(theta + wrap_pi(v[1].atan2(v[0]) - theta) - target)
        };
        // the Legendre map moves directions by less than a right angle
        let (mut lo, mut hi) = (target - 0.5 * PI, target + 0.5 * PI);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if vel_angle(mid)? < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let theta = 0.5 * (lo + hi);
        let p = CotangentPoint::new(x[0], x[1], theta.cos(), theta.sin());
        Ok(p.scale_xi(1.0 / h.eval(&p)?))
    }

    /// Canonical coordinates `(q, p)` tangent to the section; `dp ∧ dq`
    /// restricts the symplectic form to it.
    fn canonical_pair(&self, p: &CotangentPoint) -> [f64; 2] {
        if self.coord == 1 {
            [p.x1, p.xi1]
        } else {
            [p.x2, p.xi2]
        }
    }

    /// Shoelace area of a closed polygon of section states in the invariant
    /// section measure.
    pub fn invariant_area(&self, states: &[CotangentPoint]) -> f64 {
        let n = states.len();
        let mut acc = 0.0;
        for i in 0..n {
            let a = self.canonical_pair(&states[i]);
            let b = self.canonical_pair(&states[(i + 1) % n]);
            acc += a[0] * b[1] - a[1] * b[0];
        }
        0.5 * acc.abs()
    }
}

/// A tangency skipped during event location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkippedTangency {
    pub t: f64,
    pub normal_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvent {
    pub t: f64,
    /// State at the crossing, not reduced.
    pub state: CotangentPoint,
    pub normal_speed: f64,
    pub skipped: Vec<SkippedTangency>,
}

/// One record of the return map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnSample {
    pub point: [f64; 2],
    pub image: [f64; 2],
    pub tau: f64,
    /// Change of the lifted arclength coordinate.
    pub lift_displacement: f64,
    /// The returned state (base coordinates continuous from the start).
    pub image_state: CotangentPoint,
}

/// Illinois false position for `g(a) < 0 <= g(b)`.
fn refine_root(g: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let (mut ga, mut gb) = (g(a), g(b));
    if gb == 0.0 {
        return b;
    }
    let mut side = 0i8;
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (1.0 + b.abs()) {
            break;
        }
        let mut c = (a * gb - b * ga) / (gb - ga);
        if !(c > a.min(b) && c < a.max(b)) {
            c = 0.5 * (a + b);
        }
        let gc = g(c);
        if gc == 0.0 {
            return c;
        }
        if (gc < 0.0) == (ga < 0.0) {
            a = c;
            ga = gc;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            gb = gc;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    if ga.abs() < gb.abs() {
        a
    } else {
        b
    }
}

/// The return map of a metric's flow to a section.
#[derive(Debug, Clone)]
pub struct ReturnMap<'a> {
    h: &'a DualMetric,
    section: Section,
    cfg: IntegratorConfig,
}

impl<'a> ReturnMap<'a> {
    pub fn new(h: &'a DualMetric, spec: &SectionSpec, cfg: &IntegratorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ReturnMap {
            h,
            section: Section::new(h, spec)?,
            cfg: *cfg,
        })
    }

    pub fn section(&self) -> &Section {
        &self.section
    }

    pub fn metric(&self) -> &DualMetric {
        self.h
    }

    /// First upward crossing of a section level at positive time.
    pub fn detect_crossing(&self, p0: &CotangentPoint) -> Result<CrossingEvent> {
        let sec = &self.section;
        let tol = sec.spec.transversality_tol;
        let t_max = sec.spec.max_return_time;
        if sec.on_section(p0) {
            let w = sec.normal_speed(self.h, p0)?;
            if w.abs() < tol {
                return Err(Error::NonTransverse { normal_speed: w });
            }
        } else {
            self.h.gradient(p0)?;
        }
        let sphere = matches!(sec.profile, RotationalProfile::RoundSphere);
        let c = sec.coord;
        let f = field_fn(self.h);
        let mut solver = Dopri5::new(&f, self.cfg.step_control(), 0.0, p0.to_array(), 1.0);
        let mut cell = sec.cell(p0.to_array()[c]);
        let mut skipped = Vec::new();
        while solver.t() < t_max {
            let step = solver.step(t_max)?;
            let y = step.y1;
            if sphere && y[1].abs() > self.cfg.pole_cap {
                return Err(Error::PoleProximity {
                    t: step.t1,
                    x2: y[1],
                });
            }
            let next = sec.cell(y[c]);
            if next > cell {
                let level = sec.level_value(cell + 1);
                let at = |t: f64| -> State {
                    if t == step.t1 {
                        step.y1
                    } else {
                        single_step(&f, &step.y0, &step.k0, t - step.t0)
                    }
                };
                let g = |t: f64| at(t)[c] - level;
                let t = refine_root(&g, step.t0, step.t1);
                let mut state = CotangentPoint::from_array(at(t));
                // land exactly on the level
                if c == 0 {
                    state.x1 = level;
                } else {
                    state.x2 = level;
                }
                let w = sec.normal_speed(self.h, &state)?;
                if w >= tol {
                    return Ok(CrossingEvent {
                        t,
                        state,
                        normal_speed: w,
                        skipped,
                    });
                }
                skipped.push(SkippedTangency { t, normal_speed: w });
            }
            cell = next;
        }
        match skipped.last() {
            Some(s) => Err(Error::NonTransverse {
                normal_speed: s.normal_speed,
            }),
            None => Err(Error::NoCrossing { max_time: t_max }),
        }
    }

    /// Return from an arbitrary section state.
    pub fn first_return_state(&self, p: &CotangentPoint) -> Result<ReturnSample> {
        let sec = &self.section;
        let point = sec.coordinates(self.h, p)?;
        let ev = self.detect_crossing(p)?;
        let image = sec.coordinates(self.h, &ev.state)?;
        Ok(ReturnSample {
            point,
            image,
            tau: ev.t,
            lift_displacement: sec.lifted_s([ev.state.x1, ev.state.x2])
                - sec.lifted_s([p.x1, p.x2]),
            image_state: ev.state,
        })
    }

    /// Return of the section point with annulus coordinates `(s, u)`.
    pub fn first_return(&self, s: f64, u: f64) -> Result<ReturnSample> {
        let p = self.section.state_at(self.h, s, u)?;
        let mut r = self.first_return_state(&p)?;
        r.point = [s.rem_euclid(self.section.s_period), u];
        Ok(r)
    }

    /// `n` successive returns starting from the section state `p`.
    pub fn orbit(&self, p: &CotangentPoint, n: usize) -> Result<Vec<ReturnSample>> {
        let mut out = Vec::with_capacity(n);
        let mut cur = *p;
        for i in 0..n {
            let r = self
                .first_return_state(&cur)
                .map_err(|e| Error::MapFailure {
                    iterate: i,
                    source: Box::new(e),
                })?;
            cur = r.image_state;
            out.push(r);
        }
        Ok(out)
    }
}

/// Convenience wrapper around [`ReturnMap::detect_crossing`].
pub fn detect_crossing(
    h: &DualMetric,
    spec: &SectionSpec,
    p0: &CotangentPoint,
    cfg: &IntegratorConfig,
) -> Result<CrossingEvent> {
    ReturnMap::new(h, spec, cfg)?.detect_crossing(p0)
}

/// Convenience wrapper around [`ReturnMap::first_return`].
pub fn first_return(
    h: &DualMetric,
    spec: &SectionSpec,
    point: [f64; 2],
    cfg: &IntegratorConfig,
) -> Result<ReturnSample> {
    ReturnMap::new(h, spec, cfg)?.first_return(point[0], point[1])
}

/// Grid of section points in annulus coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub s_values: Vec<f64>,
    pub u_values: Vec<f64>,
}

impl GridSpec {
    /// `ns × nu` cell-centred grid of the open annulus.
    pub fn interior(s_period: f64, ns: usize, nu: usize) -> Self {
        GridSpec {
            s_values: (0..ns).map(|i| s_period * i as f64 / ns as f64).collect(),
            u_values: (0..nu).map(|j| PI * (j as f64 + 0.5) / nu as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub s: f64,
    pub u: f64,
    pub outcome: std::result::Result<ReturnSample, Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnGrid {
    pub s_period: f64,
    pub rows: Vec<GridRow>,
}

impl ReturnGrid {
    pub fn successes(&self) -> impl Iterator<Item = &ReturnSample> {
        self.rows.iter().filter_map(|r| r.outcome.as_ref().ok())
    }

    /// Table with columns `s,u,s_image,u_image,tau,lift_ds,status`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,u,s_image,u_image,tau,lift_ds,status\n");
        for r in &self.rows {
            match &r.outcome {
                Ok(x) => out.push_str(&format!(
                    "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},ok\n",
                    r.s, r.u, x.image[0], x.image[1], x.tau, x.lift_displacement
                )),
                Err(e) => out.push_str(&format!("{:.12e},{:.12e},,,,,{}\n", r.s, r.u, e.code())),
            }
        }
        out
    }
}

/// Evaluate the return map on every grid point; failures are kept per row.
pub fn build_return_map_grid(
    h: &DualMetric,
    spec: &SectionSpec,
    grid: &GridSpec,
    cfg: &IntegratorConfig,
) -> Result<ReturnGrid> {
    use rayon::prelude::*;
    let map = ReturnMap::new(h, spec, cfg)?;
    let pts: Vec<(f64, f64)> = grid
        .u_values
        .iter()
        .flat_map(|&u| grid.s_values.iter().map(move |&s| (s, u)))
        .collect();
    let rows = pts
        .par_iter()
        .map(|&(s, u)| GridRow {
            s,
            u,
            outcome: map.first_return(s, u),
        })
        .collect();
    Ok(ReturnGrid {
        s_period: map.section.s_period,
        rows,
    })
}

/// Settings of the Taylor model used near `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivisionConfig {
    pub t_switch: f64,
    /// Half-width of the interpolation interval in `t`.
    pub radius: f64,
    pub degree: usize,
    pub vanishing_tol: f64,
}

impl Default for DivisionConfig {
    fn default() -> Self {
        DivisionConfig {
            t_switch: 1e-3,
            radius: 0.1,
            degree: 12,
            vanishing_tol: 1e-12,
        }
    }
}

/// `G(x, t) = F(x, t) / t`, extended across `t = 0` by a polynomial model
/// of `F(x, ·)` interpolated at Chebyshev nodes.
pub struct SmoothQuotient<F> {
    f: F,
    cfg: DivisionConfig,
}

impl<F: Fn(&[f64], f64) -> f64> SmoothQuotient<F> {
    pub fn new(f: F, cfg: DivisionConfig) -> Result<Self> {
        if !(cfg.t_switch > 0.0 && cfg.radius > cfg.t_switch && cfg.degree >= 3) {
            return Err(Error::ConfigInvalid {
                path: "division".into(),
                message: "need 0 < t_switch < radius and degree >= 3".into(),
            });
        }
        Ok(SmoothQuotient { f, cfg })
    }

    pub fn config(&self) -> &DivisionConfig {
        &self.cfg
    }

    /// Monomial coefficients `c_j` of the model `F(x, t) ≈ Σ c_j t^j`.
    pub fn taylor_coefficients(&self, x: &[f64]) -> Result<Vec<f64>> {
        let f0 = (self.f)(x, 0.0);
        if f0.abs() > self.cfg.vanishing_tol {
            return Err(Error::NotVanishing { value: f0 });
        }
        let n = self.cfg.degree + 1;
        let r = self.cfg.radius;
        let nodes: Vec<f64> = (0..n)
            .map(|i| ((2 * i + 1) as f64 * PI / (2 * n) as f64).cos())
            .collect();
        let vander = DMatrix::from_fn(n, n, |i, j| nodes[i].powi(j as i32));
        let rhs = DVector::from_iterator(n, nodes.iter().map(|&s| (self.f)(x, r * s)));
        let a = vander
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::StepFailure("singular interpolation matrix".into()))?;
        Ok(a.iter()
            .enumerate()
            .map(|(j, &aj)| aj / r.powi(j as i32))
            .collect())
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Result<f64> {
        if t.abs() > self.cfg.t_switch {
            return Ok((self.f)(x, t) / t);
        }
        let c = self.taylor_coefficients(x)?;
        Ok(c[1..].iter().rev().fold(0.0, |acc, &cj| acc * t + cj))
    }

    /// `∂_t^k G(x, 0)` read off the model: `k! c_{k+1}`.
    pub fn derivative_at_zero(&self, x: &[f64], k: usize) -> Result<f64> {
        let c = self.taylor_coefficients(x)?;
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        Ok(fact * c.get(k + 1).copied().unwrap_or(0.0))
    }

    /// Mismatch of the two evaluation branches at `|t| = t_switch`.
    pub fn branch_mismatch(&self, x: &[f64]) -> Result<f64> {
        let c = self.taylor_coefficients(x)?;
        let model = |t: f64| c[1..].iter().rev().fold(0.0, |acc, &cj| acc * t + cj);
        let ts = self.cfg.t_switch;
        Ok([ts, -ts]
            .iter()
            .map(|&t| ((self.f)(x, t) / t - model(t)).abs())
            .fold(0.0, f64::max))
    }
}

/// Build a [`SmoothQuotient`] for `F`.
pub fn smooth_divide<F: Fn(&[f64], f64) -> f64>(
    f: F,
    cfg: DivisionConfig,
) -> Result<SmoothQuotient<F>> {
    SmoothQuotient::new(f, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryExtensionSpec {
    /// Base position of the approach.
    pub s: f64,
    /// Crossing angles approaching the boundary `u = 0`.
    pub angles: Vec<f64>,
    pub degree: usize,
    pub residual_tol: f64,
    pub division: DivisionConfig,
}

impl Default for BoundaryExtensionSpec {
    fn default() -> Self {
        BoundaryExtensionSpec {
            s: 0.0,
            angles: (3..=10).map(|k| 2f64.powi(-k)).collect(),
            degree: 3,
            residual_tol: 1e-4,
            division: DivisionConfig {
                radius: 0.05,
                degree: 8,
                ..DivisionConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryExtensionReport {
    pub angles: Vec<f64>,
    pub taus: Vec<f64>,
    pub poly_coefficients: Vec<f64>,
    /// Polynomial fit of `τ(u)` evaluated at `u = 0`.
    pub tau_boundary_fit: f64,
    /// Root of the divided section function at `u = 0`.
    pub tau_boundary_division: f64,
    pub fit_residual: f64,
}

fn least_squares_poly(x: &[f64], y: &[f64], degree: usize) -> Result<(Vec<f64>, f64)> {
    let n = x.len();
    let a = DMatrix::from_fn(n, degree + 1, |i, j| x[i].powi(j as i32));
    let b = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let c = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::ExtrapolationUnstable(e.to_string()))?;
    let resid = (&a * &c - &b).amax();
    Ok((c.iter().copied().collect(), resid))
}

/// Extrapolate the first-return time to the annulus boundary `u = 0` at
/// base position `spec.s`, in two ways: a polynomial fit of `τ(u)` and the
/// zero of `G = F / u` at `u = 0`, with `F(τ, u)` the section coordinate at
/// time `τ` of the orbit started at angle `u`.
pub fn return_time_boundary_extension(
    h: &DualMetric,
    section: &SectionSpec,
    spec: &BoundaryExtensionSpec,
    cfg: &IntegratorConfig,
) -> Result<BoundaryExtensionReport> {
    let unstable = |m: String| Err(Error::ExtrapolationUnstable(m));
    let a = &spec.angles;
    if a.len() < spec.degree + 2 {
        return unstable(format!("need more than {} samples", spec.degree + 1));
    }
    let approaching = a.iter().all(|&u| u > 0.0 && u < PI)
        && a.windows(2).all(|w| w[1] <= 0.75 * w[0])
        && a.last().is_some_and(|&u| u <= 0.05);
    if !approaching {
        return unstable("angles do not approach the boundary geometrically".into());
    }
    let map = ReturnMap::new(h, section, cfg)?;
    let taus = a
        .iter()
        .map(|&u| map.first_return(spec.s, u).map(|r| r.tau))
        .collect::<Result<Vec<_>>>()?;
    let (coef, resid) = least_squares_poly(a, &taus, spec.degree)?;
    if !(resid <= spec.residual_tol) {
        return unstable(format!(
            "fit residual {resid:e} exceeds {:e}",
            spec.residual_tol
        ));
    }
    let tau_fit = coef[0];

    let sec = map.section();
    let t_end = tau_fit + 1.0;
    let cache: RefCell<HashMap<u64, DenseTrajectory>> = RefCell::new(HashMap::new());
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let level = sec.level;
    let coord = sec.coord;
    let f = |x: &[f64], u: f64| -> f64 {
        let key = u.to_bits();
        let mut c = cache.borrow_mut();
        let tr = match c.entry(key) {
            Entry::Occupied(o) => o.into_mut(),
            Entry::Vacant(v) => match sec
                .state_at(h, spec.s, u)
                .and_then(|p| dense_trajectory(h, &p, t_end, cfg))
            {
                Ok(tr) => v.insert(tr),
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    return f64::NAN;
                }
            },
        };
        let q = tr.eval(x[0]);
        [q.x1, q.x2][coord] - level
    };
    let quotient = SmoothQuotient::new(f, spec.division)?;
    let g = |tau: f64| -> Result<f64> {
        let v = quotient.eval(&[tau], 0.0)?;
        if let Some(e) = failure.borrow().clone() {
            return Err(e);
        }
        Ok(v)
    };
    // upward zero of G(·, 0) nearest to the fitted value
    let n = 40;
    let (lo, hi) = (tau_fit - 0.5, tau_fit + 0.5);
    let mut best: Option<f64> = None;
    let mut prev = (lo, g(lo)?);
    for i in 1..=n {
        let t = lo + (hi - lo) * i as f64 / n as f64;
        let gt = g(t)?;
        if prev.1 < 0.0 && gt >= 0.0 {
            let err = RefCell::new(None);
            let root = refine_root(
                &|s| match g(s) {
                    Ok(v) => v,
                    Err(e) => {
                        err.borrow_mut().get_or_insert(e);
                        f64::NAN
                    }
                },
                prev.0,
                t,
            );
            if let Some(e) = err.into_inner() {
                return Err(e);
            }
            if best.is_none_or(|b| (root - tau_fit).abs() < (b - tau_fit).abs()) {
                best = Some(root);
            }
        }
        prev = (t, gt);
    }
    let Some(tau_div) = best else {
        return unstable("divided section function has no upward zero near the fit".into());
    };
    if (tau_div - tau_fit).abs() > spec.residual_tol.max(1e-6) * 10.0 {
        return unstable(format!(
            "fit {tau_fit} and division root {tau_div} disagree"
        ));
    }
    Ok(BoundaryExtensionReport {
        angles: a.clone(),
        taus,
        poly_coefficients: coef,
        tau_boundary_fit: tau_fit,
        tau_boundary_division: tau_div,
        fit_residual: resid,
    })
}
