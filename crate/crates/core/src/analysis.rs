//! Estimators on traces, return maps and sampled orbit segments.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{integrate_orbit, lift_to_cover, phase_distance, IntegratorConfig};
use crate::metrics::{CotangentPoint, DualMetric};
use crate::sections::ReturnMap;

/// An annulus map with a lift in the circle coordinate.
pub trait LiftedMap {
    /// Circumference of the circle coordinate.
    fn period(&self) -> f64;
    /// Image of `x` and the displacement of the lifted circle coordinate.
    fn apply(&self, x: [f64; 2]) -> Result<([f64; 2], f64)>;
}

impl LiftedMap for ReturnMap<'_> {
    fn period(&self) -> f64 {
        self.section().s_period()
    }

    fn apply(&self, x: [f64; 2]) -> Result<([f64; 2], f64)> {
        let r = self.first_return(x[0], x[1])?;
        Ok((r.image, r.lift_displacement))
    }
}

/// Model maps on `[0, 1)^2` with known rotation numbers and entropies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BenchmarkMap {
    Identity,
    Rotation {
        shift: f64,
    },
    /// `x ↦ 2x mod 1` on the first coordinate.
    Doubling,
    /// The automorphism `(2 1; 1 1)` of the 2-torus.
    Cat,
    /// `(s, u) ↦ (s + u, u)`.
    Twist,
}

impl BenchmarkMap {
    pub fn name(&self) -> &'static str {
        match self {
            BenchmarkMap::Identity => "identity",
            BenchmarkMap::Rotation { .. } => "rotation",
            BenchmarkMap::Doubling => "doubling",
            BenchmarkMap::Cat => "cat",
            BenchmarkMap::Twist => "twist",
        }
    }

    /// Topological entropy of the model.
    pub fn exact_entropy(&self) -> f64 {
        match self {
            BenchmarkMap::Doubling => 2f64.ln(),
            BenchmarkMap::Cat => ((3.0 + 5f64.sqrt()) / 2.0).ln(),
            _ => 0.0,
        }
    }

    fn lifted(&self, x: [f64; 2]) -> [f64; 2] {
        match *self {
            BenchmarkMap::Identity => x,
            BenchmarkMap::Rotation { shift } => [x[0] + shift, x[1]],
            BenchmarkMap::Doubling => [2.0 * x[0], 0.0],
            BenchmarkMap::Cat => [2.0 * x[0] + x[1], x[0] + x[1]],
            BenchmarkMap::Twist => [x[0] + x[1], x[1]],
        }
    }
}

impl LiftedMap for BenchmarkMap {
    fn period(&self) -> f64 {
        1.0
    }

    fn apply(&self, x: [f64; 2]) -> Result<([f64; 2], f64)> {
        let y = self.lifted(x);
        let wrap_u = !matches!(
            self,
            BenchmarkMap::Twist | BenchmarkMap::Rotation { .. } | BenchmarkMap::Identity
        );
        let u = if wrap_u { y[1].rem_euclid(1.0) } else { y[1] };
        let d = match *self {
            BenchmarkMap::Identity => 0.0,
            BenchmarkMap::Rotation { shift } => shift,
            BenchmarkMap::Twist => x[1],
            _ => y[0] - x[0],
        };
        Ok(([y[0].rem_euclid(1.0), u], d))
    }
}

/// A map shifted by a whole number of turns in its lift.
pub struct ShiftedLift<'a, M: ?Sized> {
    pub map: &'a M,
    pub turns: i64,
}

impl<M: LiftedMap + ?Sized> LiftedMap for ShiftedLift<'_, M> {
    fn period(&self) -> f64 {
        self.map.period()
    }

    fn apply(&self, x: [f64; 2]) -> Result<([f64; 2], f64)> {
        let (y, d) = self.map.apply(x)?;
        Ok((y, d + self.turns as f64 * self.map.period()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationEstimate {
    /// Mean lifted displacement per iterate, in turns.
    pub value: f64,
    pub reduced: f64,
    pub iterates: usize,
    pub error_bound: f64,
}

/// Birkhoff average of the lifted displacement over `n` iterates.
pub fn rotation_number<M: LiftedMap + ?Sized>(
    map: &M,
    x0: [f64; 2],
    n: usize,
) -> Result<RotationEstimate> {
    if n < 10 {
        return Err(Error::ConfigInvalid {
            path: "analysis.rotation.iterates".into(),
            message: format!("need at least 10 iterates, got {n}"),
        });
    }
    let p = map.period();
    let mut partial = Vec::with_capacity(n + 1);
    partial.push(0.0);
    let mut x = x0;
    let mut total = 0.0;
    for i in 0..n {
        let (y, d) = map.apply(x).map_err(|e| Error::MapFailure {
            iterate: i,
            source: Box::new(e),
        })?;
        total += d / p;
        partial.push(total);
        x = y;
    }
    let value = total / n as f64;
    let (lo, hi) = partial
        .iter()
        .enumerate()
        .map(|(k, s)| s - k as f64 * value)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    Ok(RotationEstimate {
        value,
        reduced: value.rem_euclid(1.0),
        iterates: n,
        error_bound: (hi - lo) / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectionConfig {
    pub min_length: f64,
    pub residual_tol: f64,
}

impl Default for DirectionConfig {
    fn default() -> Self {
        DirectionConfig {
            min_length: 10.0,
            residual_tol: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionEstimate {
    /// Unit endpoint chord.
    pub direction: [f64; 2],
    /// Largest angle between the chords to `T/4`, `T/2` and `T`.
    pub residual: f64,
    /// Unit direction of the least-squares velocity of the lift.
    pub fitted_direction: [f64; 2],
}

fn unit(v: [f64; 2]) -> Option<[f64; 2]> {
    let n = v[0].hypot(v[1]);
    (n > 0.0).then(|| [v[0] / n, v[1] / n])
}

fn angle_between(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] * b[1] - a[1] * b[0])
        .atan2(a[0] * b[0] + a[1] * b[1])
        .abs()
}

/// Asymptotic direction of a lifted base curve sampled at `times`.
pub fn asymptotic_direction(
    times: &[f64],
    lift: &[[f64; 2]],
    cfg: &DirectionConfig,
) -> Result<DirectionEstimate> {
    if lift.len() < 4 || times.len() != lift.len() {
        return Err(Error::EmptyInput);
    }
    let t0 = times[0];
    let t_end = times[times.len() - 1] - t0;
    if t_end < cfg.min_length {
        return Err(Error::NotConverged {
            residual: f64::INFINITY,
            tol: cfg.residual_tol,
        });
    }
    let chord = |frac: f64| -> Option<[f64; 2]> {
        let i = times
            .partition_point(|&t| t - t0 < frac * t_end)
            .min(lift.len() - 1);
        unit([lift[i][0] - lift[0][0], lift[i][1] - lift[0][1]])
    };
    let chords: Vec<[f64; 2]> = [0.25, 0.5, 1.0].iter().filter_map(|&f| chord(f)).collect();
    if chords.len() < 3 {
        return Err(Error::NotConverged {
            residual: f64::INFINITY,
            tol: cfg.residual_tol,
        });
    }
    let mut residual: f64 = 0.0;
    for i in 0..3 {
        for j in i + 1..3 {
            residual = residual.max(angle_between(chords[i], chords[j]));
        }
    }
    let tm = times.iter().sum::<f64>() / times.len() as f64;
    let mut vel = [0.0; 2];
    let mut den = 0.0;
    let mean = |c: usize| lift.iter().map(|p| p[c]).sum::<f64>() / lift.len() as f64;
    let m = [mean(0), mean(1)];
    for (t, p) in times.iter().zip(lift) {
        den += (t - tm) * (t - tm);
        vel[0] += (t - tm) * (p[0] - m[0]);
        vel[1] += (t - tm) * (p[1] - m[1]);
    }
    let fitted = unit([vel[0] / den, vel[1] / den]).unwrap_or(chords[2]);
    if residual > cfg.residual_tol {
        return Err(Error::NotConverged {
            residual,
            tol: cfg.residual_tol,
        });
    }
    Ok(DirectionEstimate {
        direction: chords[2],
        residual,
        fitted_direction: fitted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub direction: [f64; 2],
    pub sup_distance: f64,
    pub samples: usize,
}

/// Largest distance of the lift from the line through its start point with
/// direction `rho`.
pub fn bounded_deviation(lift: &[[f64; 2]], rho: [f64; 2]) -> DeviationReport {
    let r = unit(rho).unwrap_or([1.0, 0.0]);
    let sup = lift.first().map_or(0.0, |p0| {
        lift.iter()
            .map(|p| ((p[0] - p0[0]) * r[1] - (p[1] - p0[1]) * r[0]).abs())
            .fold(0.0, f64::max)
    });
    DeviationReport {
        direction: r,
        sup_distance: sup,
        samples: lift.len(),
    }
}

/// Orbit segments of a point cloud at integer times `0..=t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitSegments {
    dim: usize,
    len: usize,
    periods: Vec<f64>,
    data: Vec<f64>,
}

impl OrbitSegments {
    /// `orbits[i][t]` is the state of point `i` after `t` steps.
    pub fn new(periods: Vec<f64>, orbits: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let dim = periods.len();
        let len = orbits.first().map_or(0, |o| o.len());
        if orbits.is_empty() || len == 0 {
            return Err(Error::EmptyInput);
        }
        let mut data = Vec::with_capacity(orbits.len() * len * dim);
        for o in &orbits {
            if o.len() != len || o.iter().any(|x| x.len() != dim) {
                return Err(Error::InsufficientCloud("ragged orbit segments".into()));
            }
            for x in o {
                data.extend_from_slice(x);
            }
        }
        Ok(OrbitSegments {
            dim,
            len,
            periods,
            data,
        })
    }

    pub fn points(&self) -> usize {
        self.data.len() / (self.dim * self.len)
    }

    pub fn t_max(&self) -> usize {
        self.len - 1
    }

    fn state(&self, i: usize, t: usize) -> &[f64] {
        let o = (i * self.len + t) * self.dim;
        &self.data[o..o + self.dim]
    }

    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.dim {
            let mut d = (a[c] - b[c]).abs();
            let p = self.periods[c];
            if p.is_finite() {
                d = d.rem_euclid(p);
                d = d.min(p - d);
            }
            acc += d * d;
        }
        acc.sqrt()
    }

    /// Is `max_{t <= T} d(φ^t x_i, φ^t x_j) > eps`?
    pub fn separated(&self, i: usize, j: usize, t_max: usize, eps: f64) -> bool {
        (0..=t_max).any(|t| self.distance(self.state(i, t), self.state(j, t)) > eps)
    }

    /// Greedy maximal `(T, eps)`-separated subset in index order.
    pub fn greedy_separated(&self, t_max: usize, eps: f64) -> Vec<usize> {
        let mut chosen: Vec<usize> = Vec::new();
        for i in 0..self.points() {
            if chosen.iter().all(|&j| self.separated(i, j, t_max, eps)) {
                chosen.push(i);
            }
        }
        chosen
    }
}

/// Orbit segments of a benchmark map from a seeded uniform cloud in `[0,1)^2`.
pub fn map_segments(
    map: &BenchmarkMap,
    points: usize,
    t_max: usize,
    seed: u64,
) -> Result<OrbitSegments> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orbits = (0..points)
        .map(|_| {
            let mut x = [rng.random::<f64>(), rng.random::<f64>()];
            if matches!(map, BenchmarkMap::Doubling) {
                x[1] = 0.0;
            }
            let mut o = vec![x.to_vec()];
            for _ in 0..t_max {
                x = map.apply(x)?.0;
                o.push(x.to_vec());
            }
            Ok(o)
        })
        .collect::<Result<Vec<_>>>()?;
    let periods = match map {
        BenchmarkMap::Twist => vec![1.0, f64::INFINITY],
        _ => vec![1.0, 1.0],
    };
    OrbitSegments::new(periods, orbits)
}

/// Orbit segments of a return map started from section points.
pub fn return_map_segments(
    map: &ReturnMap<'_>,
    starts: &[[f64; 2]],
    t_max: usize,
) -> Result<OrbitSegments> {
    use rayon::prelude::*;
    let orbits = starts
        .par_iter()
        .map(|&x0| {
            let mut x = x0;
            let mut o = vec![x.to_vec()];
            for i in 0..t_max {
                x = map
                    .apply(x)
                    .map_err(|e| Error::MapFailure {
                        iterate: i,
                        source: Box::new(e),
                    })?
                    .0;
                o.push(x.to_vec());
            }
            Ok(o)
        })
        .collect::<Result<Vec<_>>>()?;
    OrbitSegments::new(vec![map.period(), f64::INFINITY], orbits)
}

/// Orbit segments of the time-`dt` map of a flow.
pub fn flow_segments(
    h: &DualMetric,
    starts: &[CotangentPoint],
    t_max: usize,
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<OrbitSegments> {
    use rayon::prelude::*;
    let periods = h
        .profile()
        .and_then(|p| p.period())
        .unwrap_or(f64::INFINITY);
    let c = IntegratorConfig {
        checkpoint_interval: dt,
        ..*cfg
    };
    let orbits = starts
        .par_iter()
        .map(|p| {
            let tr = integrate_orbit(h, p, dt * t_max as f64, &c)?;
            Ok(tr
                .states
                .iter()
                .map(|s| s.to_array().to_vec())
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    OrbitSegments::new(vec![TAU, periods, f64::INFINITY, f64::INFINITY], orbits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub t: usize,
    pub eps: f64,
    /// Cardinality of the greedy set.
    pub greedy: usize,
    /// Monotone envelope: max over `T' <= T`, `eps' >= eps`.
    pub s: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySlope {
    pub eps: f64,
    pub slope: Option<f64>,
    pub times_used: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub table: Vec<EntropyRow>,
    pub slopes: Vec<EntropySlope>,
    pub value: f64,
    pub points: usize,
}

impl EntropyEstimate {
    pub fn s(&self, t: usize, eps: f64) -> Option<usize> {
        self.table
            .iter()
            .find(|r| r.t == t && r.eps == eps)
            .map(|r| r.s)
    }

    /// CSV with columns `T,eps,s,slope`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("T,eps,s,slope\n");
        for r in &self.table {
            let slope = self
                .slopes
                .iter()
                .find(|s| s.eps == r.eps)
                .and_then(|s| s.slope)
                .map_or(String::new(), |v| format!("{v:.9e}"));
            out.push_str(&format!("{},{:.6e},{},{}\n", r.t, r.eps, r.s, slope));
        }
        out
    }
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}

/// Minimum cloud size accepted by the estimator.
pub const MIN_CLOUD: usize = 1000;

/// Fitting rules for the separated-set slopes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyConfig {
    /// Counts above `N / saturation_divisor` are treated as limited by the cloud.
    pub saturation_divisor: usize,
    /// Counts below this are too small to fit.
    pub min_count: usize,
    /// Number of trailing resolved times in the fit.
    pub window: usize,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig {
            saturation_divisor: 16,
            min_count: 10,
            window: 3,
        }
    }
}

/// Separated-set entropy estimate over the cloud in `segments`.
pub fn entropy_separated_sets(
    segments: &OrbitSegments,
    times: &[usize],
    eps: &[f64],
    cfg: &EntropyConfig,
) -> Result<EntropyEstimate> {
    let n = segments.points();
    if n < MIN_CLOUD {
        return Err(Error::InsufficientCloud(format!(
            "{n} points, need at least {MIN_CLOUD}"
        )));
    }
    if times.is_empty() || eps.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut ts = times.to_vec();
    ts.sort_unstable();
    ts.dedup();
    if ts.last().is_some_and(|&t| t > segments.t_max()) {
        return Err(Error::InsufficientCloud(format!(
            "segments only reach T = {}",
            segments.t_max()
        )));
    }
    let mut es = eps.to_vec();
    es.sort_by(|a, b| b.total_cmp(a));
    es.dedup();
    let saturation = n / cfg.saturation_divisor.max(1);
    // greedy[ie][it]
    let greedy: Vec<Vec<usize>> = {
        use rayon::prelude::*;
        es.par_iter()
            .map(|&e| {
                ts.iter()
                    .map(|&t| segments.greedy_separated(t, e).len())
                    .collect()
            })
            .collect()
    };
    if greedy.last().is_some_and(|row| row[0] > saturation) {
        return Err(Error::InsufficientCloud(format!(
            "eps = {} already saturates the cloud at T = {}",
            es[es.len() - 1],
            ts[0]
        )));
    }
    let mut env = greedy.clone();
    for ie in 0..es.len() {
        for it in 0..ts.len() {
            let mut v = greedy[ie][it];
            if it > 0 {
                v = v.max(env[ie][it - 1]);
            }
            if ie > 0 {
                v = v.max(env[ie - 1][it]);
            }
            env[ie][it] = v;
        }
    }
    let mut table = Vec::new();
    for (it, &t) in ts.iter().enumerate() {
        for (ie, &e) in es.iter().enumerate() {
            table.push(EntropyRow {
                t,
                eps: e,
                greedy: greedy[ie][it],
                s: env[ie][it],
            });
        }
    }
    let mut slopes = Vec::new();
    for (ie, &e) in es.iter().enumerate() {
        let resolved: Vec<usize> = (0..ts.len())
            .take_while(|&it| env[ie][it] <= saturation)
            .filter(|&it| env[ie][it] >= cfg.min_count)
            .collect();
        let w = cfg.window.max(2);
        let slope = if resolved.len() >= w {
            let used = &resolved[resolved.len() - w..];
            let x: Vec<f64> = used.iter().map(|&it| ts[it] as f64).collect();
            let y: Vec<f64> = used.iter().map(|&it| (env[ie][it] as f64).ln()).collect();
            Some((ls_slope(&x, &y), used.iter().map(|&it| ts[it]).collect()))
        } else {
            None
        };
        slopes.push(EntropySlope {
            eps: e,
            slope: slope.as_ref().map(|s| s.0),
            times_used: slope.map(|s| s.1).unwrap_or_default(),
        });
    }
    let value = slopes
        .iter()
        .rev()
        .find_map(|s| s.slope)
        .ok_or_else(|| Error::InsufficientCloud("no eps has enough resolved times".into()))?;
    Ok(EntropyEstimate {
        table,
        slopes,
        value: value.max(0.0),
        points: n,
    })
}

/// Base binning for the graph test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphBinning {
    pub bins: [usize; 2],
    /// Base fundamental domain `[0, p0) × [-p1/2, p1/2)`.
    pub periods: [f64; 2],
    /// Circular gap in the covector angle that separates clusters.
    pub gap_tol: f64,
}

impl Default for GraphBinning {
    fn default() -> Self {
        GraphBinning {
            bins: [32, 32],
            periods: [TAU, 4.0],
            gap_tol: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphReport {
    pub is_graph: bool,
    /// Largest circular gap between fiber clusters in a single bin (0 if none).
    pub max_gap: f64,
    pub max_cluster_spread: f64,
    pub lipschitz_estimate: f64,
    pub deviation_d: Option<f64>,
    pub nonempty_bins: usize,
}

/// Clusters of circular values separated by gaps wider than `tol`;
/// returns (cluster count, widest separating gap, widest cluster, circular mean).
fn circular_clusters(mut a: Vec<f64>, tol: f64) -> (usize, f64, f64, f64) {
    a.sort_by(f64::total_cmp);
    let n = a.len();
    let gaps: Vec<f64> = (0..n)
        .map(|i| {
            if i + 1 < n {
                a[i + 1] - a[i]
            } else {
                a[0] + TAU - a[n - 1]
            }
        })
        .collect();
    let big: Vec<usize> = (0..n).filter(|&i| gaps[i] > tol).collect();
    let (sx, sy) = a
        .iter()
        .fold((0.0, 0.0), |(x, y), t| (x + t.cos(), y + t.sin()));
    let mean = sy.atan2(sx);
    if big.is_empty() {
        // the values fill the whole fiber circle
        return (0, 0.0, TAU, mean);
    }
    let mut widest: f64 = 0.0;
    let mut sep: f64 = 0.0;
    for (k, &g) in big.iter().enumerate() {
        // cluster runs from element g+1 to the next big gap
        let next = big[(k + 1) % big.len()];
        let start = a[(g + 1) % n];
        let end = a[next];
        let width = (end - start).rem_euclid(TAU);
        widest = widest.max(if big.len() == 1 { TAU - gaps[g] } else { width });
        if big.len() > 1 {
            sep = sep.max(gaps[g]);
        }
    }
    (big.len(), sep, widest, mean)
}

/// Is the sample set the graph of a section of the unit bundle over the base?
pub fn invariant_graph_test(
    samples: &[CotangentPoint],
    binning: &GraphBinning,
    deviation_d: Option<f64>,
) -> Result<GraphReport> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let [n1, n2] = binning.bins;
    let [p1, p2] = binning.periods;
    let mut cells: Vec<Vec<f64>> = vec![Vec::new(); n1 * n2];
    for s in samples {
        let u = s.x1.rem_euclid(p1) / p1;
        let v = (s.x2 + 0.5 * p2).rem_euclid(p2) / p2;
        let i = ((u * n1 as f64) as usize).min(n1 - 1);
        let j = ((v * n2 as f64) as usize).min(n2 - 1);
        cells[i * n2 + j].push(s.xi2.atan2(s.xi1));
    }
    let mut is_graph = true;
    let mut max_gap: f64 = 0.0;
    let mut spread: f64 = 0.0;
    let mut means = vec![None; n1 * n2];
    let mut nonempty = 0;
    for (k, c) in cells.into_iter().enumerate() {
        if c.is_empty() {
            continue;
        }
        nonempty += 1;
        let (count, gap, width, mean) = circular_clusters(c, binning.gap_tol);
        if count != 1 {
            is_graph = false;
            max_gap = max_gap.max(gap);
        } else {
            spread = spread.max(width);
            means[k] = Some(mean);
        }
    }
    let h1 = p1 / n1 as f64;
    let h2 = p2 / n2 as f64;
    let mut lip: f64 = 0.0;
    for i in 0..n1 {
        for j in 0..n2 {
            let Some(a) = means[i * n2 + j] else { continue };
            let right = means[((i + 1) % n1) * n2 + j];
            let up = means[i * n2 + (j + 1) % n2];
            if let Some(b) = right {
                lip = lip.max(((b - a + PI).rem_euclid(TAU) - PI).abs() / h1);
            }
            if let Some(b) = up {
                lip = lip.max(((b - a + PI).rem_euclid(TAU) - PI).abs() / h2);
            }
        }
    }
    Ok(GraphReport {
        is_graph,
        max_gap,
        max_cluster_spread: spread,
        lipschitz_estimate: if is_graph { lip } else { f64::INFINITY },
        deviation_d,
        nonempty_bins: nonempty,
    })
}

/// `E = {c_lo < ξ1 < c_hi}` inside `{H = 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeSpec {
    pub c_lo: f64,
    pub c_hi: f64,
}

impl TubeSpec {
    pub fn contains(&self, p: &CotangentPoint) -> bool {
        p.xi1 > self.c_lo && p.xi1 < self.c_hi
    }

    /// Distance of `ξ1` to the boundary values.
    pub fn gap(&self, xi1: f64) -> f64 {
        (xi1 - self.c_lo).min(self.c_hi - xi1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TubePlan {
    pub ensemble: usize,
    pub ensemble_time: f64,
    pub eps_grid: Vec<f64>,
    pub witnesses: usize,
    pub witness_time: f64,
    pub witness_offset: f64,
    pub witness_radius: f64,
    pub seed: u64,
}

impl Default for TubePlan {
    fn default() -> Self {
        TubePlan {
            ensemble: 500,
            ensemble_time: 20.0,
            eps_grid: vec![0.2, 0.1, 0.05, 0.02, 0.01, 0.005],
            witnesses: 5,
            witness_time: 1000.0,
            witness_offset: 0.1,
            witness_radius: 0.05,
            seed: 0x7b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeOrbit {
    pub start: CotangentPoint,
    pub initial_gap: f64,
    pub min_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityWitness {
    pub center: CotangentPoint,
    pub radius: f64,
    /// Smallest phase-space distance from the orbit to the ball.
    pub distance: f64,
    pub orbit_xi1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeReport {
    pub tube: TubeSpec,
    pub eps_grid: Vec<f64>,
    pub boundary_fraction: Vec<f64>,
    pub orbits: Vec<TubeOrbit>,
    pub failures: usize,
    pub witnesses: Vec<DensityWitness>,
}

/// The unit covector over `(x1, x2)` with direction angle `theta`.
pub fn unit_covector(h: &DualMetric, x1: f64, x2: f64, theta: f64) -> Result<CotangentPoint> {
    let p = CotangentPoint::new(x1, x2, theta.cos(), theta.sin());
    Ok(p.scale_xi(1.0 / h.eval(&p)?))
}

/// Rejection samples of `E`, uniform in the chart coordinates `(x1, x2, θ)`.
pub fn sample_tube(
    h: &DualMetric,
    tube: &TubeSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<CotangentPoint>> {
    let l = h
        .profile()
        .and_then(|p| p.period())
        .ok_or_else(|| Error::ProfileMismatch("tube sampling needs a torus profile".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0usize;
    while out.len() < count {
        tries += 1;
        if tries > 1000 * count.max(1) {
            return Err(Error::EmptySample);
        }
        let x1 = rng.random_range(0.0..TAU);
        let x2 = rng.random_range(-0.5 * l..0.5 * l);
        let th = rng.random_range(0.0..TAU);
        let p = unit_covector(h, x1, x2, th)?;
        if tube.contains(&p) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Conservation-based diagnostics of the tube `E`.
pub fn tube_diagnostics(
    h: &DualMetric,
    tube: &TubeSpec,
    plan: &TubePlan,
    cfg: &IntegratorConfig,
) -> Result<TubeReport> {
    use rayon::prelude::*;
    let starts = sample_tube(h, tube, plan.ensemble, plan.seed)?;
    let results: Vec<Option<TubeOrbit>> = starts
        .par_iter()
        .map(|p| {
            integrate_orbit(h, p, plan.ensemble_time, cfg)
                .ok()
                .map(|tr| TubeOrbit {
                    start: *p,
                    initial_gap: tube.gap(p.xi1),
                    min_gap: tr
                        .states
                        .iter()
                        .map(|s| tube.gap(s.xi1))
                        .fold(f64::INFINITY, f64::min),
                })
        })
        .collect();
    let failures = results.iter().filter(|r| r.is_none()).count();
    let orbits: Vec<TubeOrbit> = results.into_iter().flatten().collect();
    if orbits.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut eps_grid = plan.eps_grid.clone();
    eps_grid.sort_by(|a, b| b.total_cmp(a));
    let boundary_fraction = eps_grid
        .iter()
        .map(|&e| orbits.iter().filter(|o| o.min_gap < e).count() as f64 / orbits.len() as f64)
        .collect();

    // witness balls sit off the orbit's level set in the ξ1 direction
    let periods = [
        TAU,
        h.profile()
            .and_then(|p| p.period())
            .unwrap_or(f64::INFINITY),
    ];
    let candidates: Vec<&TubeOrbit> = orbits
        .iter()
        .filter(|o| {
            tube.contains(&CotangentPoint::new(
                0.0,
                0.0,
                o.start.xi1 + plan.witness_offset,
                0.0,
            ))
        })
        .take(plan.witnesses)
        .collect();
    let witnesses = candidates
        .par_iter()
        .map(|o| {
            let tr = integrate_orbit(h, &o.start, plan.witness_time, cfg)?;
            let mut center = o.start;
            center.xi1 += plan.witness_offset;
            let d = tr
                .states
                .iter()
                .map(|s| phase_distance(s, &center, periods))
                .fold(f64::INFINITY, f64::min);
            Ok(DensityWitness {
                center,
                radius: plan.witness_radius,
                distance: d - plan.witness_radius,
                orbit_xi1: o.start.xi1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TubeReport {
        tube: *tube,
        eps_grid,
        boundary_fraction,
        orbits,
        failures,
        witnesses,
    })
}

/// Lifted base trace of an orbit, reconstructed from the reduced states.
pub fn lifted_trace(
    h: &DualMetric,
    p0: &CotangentPoint,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<(Vec<f64>, Vec<[f64; 2]>)> {
    let tr = integrate_orbit(h, p0, t, cfg)?;
    let lift = lift_to_cover(&tr)?;
    Ok((tr.times, lift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{build_katok_family, eval_h0, DEFAULT_ALPHA};
    use crate::profiles::{f0_inverse, make_spliced_profile, CutoffPair, RotationalProfile};
    use crate::sections::SectionSpec;

    fn torus() -> RotationalProfile {
        make_spliced_profile(4.0, 0.25).unwrap()
    }

    fn katok(p: RotationalProfile) -> DualMetric {
        build_katok_family(p, CutoffPair::new(0.5, 1.25, 1.75).unwrap(), DEFAULT_ALPHA).unwrap()
    }

    #[test]
    fn rotation_number_models() {
        let r = rotation_number(&BenchmarkMap::Rotation { shift: 0.25 }, [0.1, 0.0], 10).unwrap();
        assert_eq!(r.value, 0.25);
        assert_eq!(r.error_bound, 0.0);
        let r = rotation_number(&BenchmarkMap::Twist, [0.0, 1.0 / 3.0], 300).unwrap();
        assert!((r.value - 1.0 / 3.0).abs() < 1e-12);
        assert!(rotation_number(&BenchmarkMap::Identity, [0.0, 0.0], 5).is_err());
    }

    #[test]
    fn rotation_number_is_lift_invariant() {
        let m = BenchmarkMap::Rotation { shift: 0.3 };
        let a = rotation_number(&m, [0.2, 0.0], 50).unwrap();
        let b = rotation_number(&ShiftedLift { map: &m, turns: 2 }, [0.2, 0.0], 50).unwrap();
        assert!((b.value - a.value - 2.0).abs() < 1e-12);
        assert!((b.reduced - a.reduced).abs() < 1e-12);
    }

    #[test]
    fn rotation_number_reports_failing_iterate() {
        let h = DualMetric::Rotational(RotationalProfile::RoundSphere);
        let spec = SectionSpec {
            max_return_time: 3.0,
            ..SectionSpec::equator()
        };
        let map = ReturnMap::new(&h, &spec, &IntegratorConfig::default()).unwrap();
        match rotation_number(&map, [0.0, 0.5], 10) {
            Err(Error::MapFailure { iterate, source }) => {
                assert_eq!(iterate, 0);
                assert!(matches!(*source, Error::NoCrossing { .. }));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn directions_of_model_orbits() {
        let cfg = IntegratorConfig::default();
        let h = DualMetric::Rotational(RotationalProfile::RoundSphere);
        let (t, l) =
            lifted_trace(&h, &CotangentPoint::new(0.0, 0.0, 1.0, 0.0), 20.0, &cfg).unwrap();
        let d = asymptotic_direction(&t, &l, &DirectionConfig::default()).unwrap();
        assert!((d.direction[0] - 1.0).abs() < 1e-12 && d.direction[1].abs() < 1e-12);
        assert!(bounded_deviation(&l, [1.0, 0.0]).sup_distance < 1e-10);

        let prof = torus();
        let h = DualMetric::Rotational(prof.clone());
        let (t, l) =
            lifted_trace(&h, &CotangentPoint::new(1.0, 0.0, 0.0, 1.0), 30.0, &cfg).unwrap();
        let d = asymptotic_direction(&t, &l, &DirectionConfig::default()).unwrap();
        assert_eq!(d.direction, [0.0, 1.0]);
        assert!(asymptotic_direction(&t[..5], &l[..5], &DirectionConfig::default()).is_err());
    }

    #[test]
    fn trapped_orbit_direction_and_turning_point() {
        let cfg = IntegratorConfig::default();
        let prof = torus();
        let h = katok(prof.clone());
        let p = CotangentPoint::new(0.0, 0.0, 0.995, 0.0998749217771909);
        let (t, l) = lifted_trace(&h, &p, 1000.0, &cfg).unwrap();
        let d = asymptotic_direction(&t, &l, &DirectionConfig::default()).unwrap();
        assert!(d.residual <= 1e-3, "{}", d.residual);
        assert!((d.direction[0] - 1.0).abs() < 1e-6);
        let c = p.xi1 / eval_h0(&prof, &p).unwrap();
        // bisection oracle for f0(x*) = c
        let (mut lo, mut hi) = (0.0, 5.0);
        for _ in 0..200 {
            let m = 0.5 * (lo + hi);
            if crate::profiles::eval_f0(m) > c {
                lo = m
            } else {
                hi = m
            }
        }
        assert!((lo - f0_inverse(c).unwrap()).abs() < 1e-12);
        assert!(bounded_deviation(&l, [1.0, 0.0]).sup_distance <= lo + 1e-4);
    }

    #[test]
    fn rotating_orbit_deviation_stabilises() {
        let cfg = IntegratorConfig::default();
        let prof = torus();
        let h = katok(prof.clone());
        let c = 0.12;
        let p = CotangentPoint::new(0.0, 0.0, c, (1.0 - c * c).sqrt());
        let (t, l) = lifted_trace(&h, &p, 800.0, &cfg).unwrap();
        // quadrature oracle for the direction: (∫ c / sqrt(f² - c²), L) over one meridian
        let n = 20000;
        let dx1: f64 = (0..n)
            .map(|i| {
                let x = -2.0 + 4.0 * (i as f64 + 0.5) / n as f64;
                let f = prof.eval(x);
                c / (f * f - c * c).sqrt() * 4.0 / n as f64
            })
            .sum();
        let rho = unit([dx1, 4.0]).unwrap();
        let fit = asymptotic_direction(&t, &l, &DirectionConfig::default())
            .unwrap()
            .fitted_direction;
        assert!(angle_between(rho, fit) < 1e-3, "{rho:?} {fit:?}");
        let half = t.partition_point(|&s| s <= 400.0);
        let d1 = bounded_deviation(&l[..half], fit).sup_distance;
        let d2 = bounded_deviation(&l, fit).sup_distance;
        assert!((d2 - d1).abs() <= 0.05 * d2, "{d1} {d2}");
    }

    #[test]
    fn entropy_of_models() {
        let times: Vec<usize> = (0..=12).collect();
        let id = map_segments(&BenchmarkMap::Identity, 2000, 12, 3).unwrap();
        let e =
            entropy_separated_sets(&id, &times, &[0.2, 0.1], &EntropyConfig::default()).unwrap();
        assert!(e.value <= 0.02);
        let rot = map_segments(&BenchmarkMap::Rotation { shift: 0.618 }, 2000, 12, 3).unwrap();
        assert!(
            entropy_separated_sets(&rot, &times, &[0.2, 0.1], &EntropyConfig::default())
                .unwrap()
                .value
                <= 0.02
        );
        let dbl = map_segments(&BenchmarkMap::Doubling, 2000, 12, 3).unwrap();
        let e =
            entropy_separated_sets(&dbl, &times, &[0.2, 0.1], &EntropyConfig::default()).unwrap();
        assert!((e.value / 2f64.ln() - 1.0).abs() < 0.15, "{e:?}");
        let small = map_segments(&BenchmarkMap::Identity, 100, 3, 3).unwrap();
        assert!(matches!(
            entropy_separated_sets(&small, &[0, 1], &[0.1], &EntropyConfig::default()),
            Err(Error::InsufficientCloud(_))
        ));
    }

    #[test]
    fn greedy_sets_are_maximal_and_envelope_monotone() {
        let seg = map_segments(&BenchmarkMap::Cat, 2000, 6, 9).unwrap();
        let chosen = seg.greedy_separated(3, 0.3);
        for i in 0..seg.points() {
            if chosen.contains(&i) {
                continue;
            }
            assert!(chosen.iter().any(|&j| !seg.separated(i, j, 3, 0.3)));
        }
        let e = entropy_separated_sets(
            &seg,
            &[0, 1, 2, 3, 4, 5, 6],
            &[0.45, 0.4, 0.35, 0.3],
            &EntropyConfig::default(),
        )
        .unwrap();
        for r in &e.table {
            for q in &e.table {
                if q.t >= r.t && q.eps <= r.eps {
                    assert!(q.s >= r.s);
                }
            }
        }
    }

    #[test]
    fn level_set_graphs() {
        let prof = torus();
        let c = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut up = Vec::new();
        let mut both = Vec::new();
        for i in 0..40000 {
            let x1 = rng.random_range(0.0..TAU);
            let x2 = rng.random_range(-2.0..2.0);
            let f = prof.eval(x2);
            let xi2 = (f * f - c * c).sqrt();
            let p = CotangentPoint::new(x1, x2, c, xi2);
            up.push(p);
            both.push(if i % 2 == 0 {
                p
            } else {
                CotangentPoint::new(x1, x2, c, -xi2)
            });
        }
        for bins in [32, 128] {
            let b = GraphBinning {
                bins: [bins, bins],
                ..GraphBinning::default()
            };
            let g = invariant_graph_test(&up, &b, None).unwrap();
            assert!(g.is_graph && g.lipschitz_estimate.is_finite());
            assert!(!invariant_graph_test(&both, &b, None).unwrap().is_graph);
        }
        assert!(matches!(
            invariant_graph_test(&[], &GraphBinning::default(), None),
            Err(Error::EmptySample)
        ));
    }

    #[test]
    fn tube_witnesses_and_gaps() {
        let prof = torus();
        let h = katok(prof.clone());
        let tube = TubeSpec {
            c_lo: prof.min_value(),
            c_hi: 1.0 / (1.0 + DEFAULT_ALPHA),
        };
        let plan = TubePlan {
            ensemble: 60,
            ensemble_time: 10.0,
            witness_time: 50.0,
            ..TubePlan::default()
        };
        let rep = tube_diagnostics(&h, &tube, &plan, &IntegratorConfig::default()).unwrap();
        assert_eq!(rep.failures, 0);
        for o in &rep.orbits {
            assert!(o.min_gap >= o.initial_gap - 1e-6);
        }
        assert!(rep.boundary_fraction.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(rep.witnesses.len(), 5);
        assert!(rep.witnesses.iter().all(|w| w.distance > 0.0));
    }
}
