use std::f64::consts::{PI, TAU};
use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    render_section_plot, Artifact, Check, PlotInput, PlotStyle, Runner, Scenario, StagePlan,
};
use crate::analysis::{
    asymptotic_direction, bounded_deviation, entropy_separated_sets, flow_segments,
    invariant_graph_test, map_segments, return_map_segments, rotation_number, tube_diagnostics,
    unit_covector, BenchmarkMap, DirectionConfig, EntropyEstimate, GraphBinning, TubeSpec,
};
use crate::error::{Error, Result};
use crate::flow::{
    check_periodicity, compose_commuting_flows, dense_trajectory, integrate_orbit, lift_to_cover,
    phase_distance, sample_cone, IntegratorConfig, OrbitTrace,
};
use crate::metrics::{
    cone_membership, eval_h0, fiber_convexity_check, reversibilize, seam_jet_mismatch,
    validate_axioms, AxiomReport, CotangentPoint, DualMetric, KatokMetric, SampleSpec,
};
use crate::profiles::{CutoffPair, RotationalProfile};
use crate::sections::{
    build_return_map_grid, return_time_boundary_extension, smooth_divide, GridSpec, ReturnMap,
    Section,
};

fn stages(list: &[(&str, &[&str])]) -> Vec<StagePlan> {
    list.iter()
        .map(|(stage, checks)| StagePlan {
            stage: stage.to_string(),
            checks: checks.iter().map(|c| c.to_string()).collect(),
        })
        .collect()
}

const CONSERVATION: (&str, &[&str]) = ("conservation", &["conservation-h", "conservation-xi1"]);

pub(super) fn plan(s: &Scenario) -> Result<Vec<StagePlan>> {
    let p = match s.scenario.name.as_str() {
        "round-sphere-baseline" => stages(&[
            ("axioms", &["axioms-h0"]),
            ("periodicity", &["periodicity"]),
            ("return-grid", &["return-identity", "return-time"]),
            ("boundary", &["boundary-tau-fit", "boundary-tau-division"]),
            CONSERVATION,
        ]),
        "katok-sphere" => stages(&[
            ("convexity", &["convexity-gate"]),
            ("axioms", &["axioms-h0", "axioms-katok"]),
            ("locality", &["locality-outside", "locality-inside"]),
            ("commuting", &["commuting-flows"]),
            ("reversal", &["reversal-even", "reversal-seam-jets"]),
            (
                "iterates",
                &["iterates-invariant-circles", "rotation-katok-shift"],
            ),
            ("entropy", &["entropy-return-map"]),
            CONSERVATION,
        ]),
        "katok-torus" => stages(&[
            ("graphs", &["graph-level-sets", "graph-two-branch-control"]),
            ("deviation", &["deviation-rotating", "deviation-trapped"]),
            (
                "tube",
                &[
                    "tube-gap-conservation",
                    "tube-witnesses",
                    "tube-boundary-monotone",
                ],
            ),
            ("entropy", &["entropy-time-one-flow"]),
            CONSERVATION,
        ]),
        "benchmark-maps" => {
            let ids: Vec<String> = s
                .analysis
                .benchmarks
                .iter()
                .map(|b| format!("entropy-{}", b.map.name()))
                .collect();
            for (i, id) in ids.iter().enumerate() {
                if ids[..i].contains(id) {
                    return Err(Error::ConfigInvalid {
                        path: format!("analysis.benchmarks.{i}"),
                        message: format!("duplicate benchmark `{id}`"),
                    });
                }
            }
            vec![
                StagePlan {
                    stage: "entropy".into(),
                    checks: ids,
                },
                StagePlan {
                    stage: "rotation".into(),
                    checks: vec!["rotation-rigid".into(), "rotation-twist".into()],
                },
            ]
        }
        "appendix-smooth-division" => stages(&[(
            "division",
            &[
                "division-k0",
                "division-k1",
                "division-k2",
                "division-branch-match",
                "division-rejects-nonvanishing",
            ],
        )]),
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    Ok(p)
}

pub(super) fn execute(s: &Scenario, r: &mut Runner) {
    let metric = s.metric_spec().build();
    let h = || metric.clone();
    match s.scenario.name.as_str() {
        "round-sphere-baseline" => {
            r.stage("axioms", |seed, _| {
                let rep = validate_axioms(
                    &unperturbed(s),
                    &SampleSpec::for_profile(&s.profile, s.analysis.axioms.samples, seed),
                );
                Ok(vec![axiom_check(
                    "axioms-h0",
                    &rep,
                    s.analysis.axioms.rel_tol,
                )])
            });
            r.stage("periodicity", |seed, _| periodicity(s, seed));
            r.stage("return-grid", |_, arts| return_grid(s, &h()?, arts));
            r.stage("boundary", |_, arts| boundary(s, &h()?, arts));
            r.stage("conservation", |seed, arts| {
                conservation(s, &h()?, seed, arts)
            });
        }
        "katok-sphere" => {
            r.stage("convexity", |seed, _| convexity_gate(s, seed));
            r.stage("axioms", |seed, _| {
                let spec = SampleSpec::for_profile(&s.profile, s.analysis.axioms.samples, seed);
                let tol = s.analysis.axioms.rel_tol;
                let mut out = vec![axiom_check(
                    "axioms-h0",
                    &validate_axioms(&unperturbed(s), &spec),
                    tol,
                )];
                out.push(match h() {
                    Ok(h) => axiom_check("axioms-katok", &validate_axioms(&h, &spec), tol),
                    Err(e) => Check::failed("axioms-katok", e.to_string()),
                });
                Ok(out)
            });
            r.stage("locality", |seed, _| locality(s, &h()?, seed));
            r.stage("commuting", |seed, _| commuting(s, &h()?, seed));
            r.stage("reversal", |seed, _| reversal(s, &h()?, seed));
            r.stage("iterates", |seed, arts| iterates(s, &h()?, seed, arts));
            r.stage("entropy", |seed, arts| {
                return_map_entropy(s, &h()?, seed, arts)
            });
            r.stage("conservation", |seed, arts| {
                conservation(s, &h()?, seed, arts)
            });
        }
        "katok-torus" => {
            r.stage("graphs", |seed, arts| graphs(s, &h()?, seed, arts));
            r.stage("deviation", |_, arts| deviation(s, &h()?, arts));
            r.stage("tube", |seed, arts| tube(s, &h()?, seed, arts));
            r.stage("entropy", |seed, arts| flow_entropy(s, &h()?, seed, arts));
            r.stage("conservation", |seed, arts| {
                conservation(s, &h()?, seed, arts)
            });
        }
        "benchmark-maps" => {
            r.stage("entropy", |seed, arts| benchmark_entropy(s, seed, arts));
            r.stage("rotation", |_, _| benchmark_rotation(s));
        }
        "appendix-smooth-division" => {
            r.stage("division", |_, arts| division(s, arts));
        }
        _ => {}
    }
}

fn orbit_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index as u64)
}

fn unperturbed(s: &Scenario) -> DualMetric {
    DualMetric::Rotational(s.profile.clone())
}

fn katok_of(h: &DualMetric) -> Result<&KatokMetric> {
    match h {
        DualMetric::Katok(k) => Ok(k),
        _ => Err(Error::ConfigInvalid {
            path: "metric".into(),
            message: "stage needs a non-reversibilized Katok metric".into(),
        }),
    }
}

fn torus_period(profile: &RotationalProfile) -> Result<f64> {
    profile
        .period()
        .ok_or_else(|| Error::ProfileMismatch("stage needs a torus profile".into()))
}

fn circ_dist(a: f64, b: f64, p: f64) -> f64 {
    let d = (a - b).rem_euclid(p);
    d.min(p - d)
}

fn axiom_check(id: &str, rep: &AxiomReport, tol: f64) -> Check {
    let c = Check::at_most(id, rep.max_homogeneity_error.max(rep.max_euler_error), tol);
    if rep.min_hessian_eigenvalue > 0.0 {
        c.with_detail(format!(
            "{} samples, min fiber Hessian eigenvalue {:e}",
            rep.samples, rep.min_hessian_eigenvalue
        ))
    } else {
        Check { pass: false, ..c }.with_detail(format!(
            "fiber Hessian not positive: min eigenvalue {:e}",
            rep.min_hessian_eigenvalue
        ))
    }
}

fn convexity_gate(s: &Scenario, seed: u64) -> Result<Vec<Check>> {
    let m = &s.metric;
    let cutoffs = CutoffPair::new(m.a0, m.a1, m.b)?;
    let reach = match s.profile.period() {
        Some(l) => (m.b + 0.25).min(0.5 * l),
        None => m.b + 0.25,
    };
    let h = DualMetric::Katok(KatokMetric::unchecked(s.profile.clone(), cutoffs, m.alpha));
    let rep = fiber_convexity_check(
        &h,
        &SampleSpec::new(s.analysis.axioms.samples, -reach, reach, seed),
    );
    Ok(vec![Check::above(
        "convexity-gate",
        rep.min_eigenvalue,
        0.0,
    )
    .with_detail(format!("alpha = {}", m.alpha))])
}

fn periodicity(s: &Scenario, seed: u64) -> Result<Vec<Check>> {
    let p = &s.analysis.periodicity;
    let samples = sample_cone(&s.profile, p.cone, p.samples, seed);
    let rep = check_periodicity(&unperturbed(s), &samples, TAU, &s.integrator)?;
    Ok(vec![Check::at_most("periodicity", rep.max_distance, p.tol)])
}

fn return_grid(s: &Scenario, h: &DualMetric, arts: &mut Vec<Artifact>) -> Result<Vec<Check>> {
    let g = &s.analysis.grid;
    let period = Section::new(h, &s.section)?.s_period();
    let grid = build_return_map_grid(
        h,
        &s.section,
        &GridSpec::interior(period, g.ns, g.nu),
        &s.integrator,
    )?;
    let failures = grid.rows.iter().filter(|r| r.outcome.is_err()).count();
    let mut moved: f64 = 0.0;
    let mut tau: f64 = 0.0;
    for x in grid.successes() {
        moved = moved.max(circ_dist(x.image[0], x.point[0], period).hypot(x.image[1] - x.point[1]));
        tau = tau.max((x.tau - TAU).abs());
    }
    let fail = |c: Check| {
        if failures > 0 {
            Check { pass: false, ..c }.with_detail(format!("{failures} grid points failed"))
        } else {
            c
        }
    };
    let svg = render_section_plot(
        &PlotInput::ReturnGrid(&grid),
        &PlotStyle {
            title: "first-return map on the Birkhoff annulus".into(),
            ..PlotStyle::default()
        },
    )?;
    arts.push(Artifact::new("return_grid.csv", grid.to_csv()));
    arts.push(Artifact::new("return_grid.svg", svg));
    Ok(vec![
        fail(Check::at_most("return-identity", moved, g.identity_tol)),
        fail(Check::at_most("return-time", tau, g.tau_tol)),
    ])
}

fn boundary(s: &Scenario, h: &DualMetric, arts: &mut Vec<Artifact>) -> Result<Vec<Check>> {
    let b = &s.analysis.boundary;
    let rep = return_time_boundary_extension(h, &s.section, &b.extension, &s.integrator)?;
    let mut csv = String::from("u,tau\n");
    for (u, t) in rep.angles.iter().zip(&rep.taus) {
        let _ = writeln!(csv, "{u:.12e},{t:.12e}");
    }
    arts.push(Artifact::new("boundary.csv", csv));
    Ok(vec![
        Check::at_most(
            "boundary-tau-fit",
            (rep.tau_boundary_fit - TAU).abs(),
            b.tol,
        )
        .with_detail(format!("fit residual {:e}", rep.fit_residual)),
        Check::at_most(
            "boundary-tau-division",
            (rep.tau_boundary_division - TAU).abs(),
            b.tol,
        ),
    ])
}

/// Starts that stay clear of the sphere's poles: `|x2| <= 0.5` and a
/// velocity within 1.2 rad of the parallels. Uniform on the torus.
fn conservation_starts(
    s: &Scenario,
    h: &DualMetric,
    n: usize,
    seed: u64,
) -> Result<Vec<CotangentPoint>> {
    (0..n)
        .map(|i| {
            let mut rng = orbit_rng(seed, i);
            let x1 = rng.random_range(0.0..TAU);
            match s.profile.period() {
                Some(l) => {
                    let x2 = rng.random_range(-0.5 * l..0.5 * l);
                    unit_covector(h, x1, x2, rng.random_range(0.0..TAU))
                }
                None => {
                    let x2 = rng.random_range(-0.5..0.5);
                    let th =
                        rng.random_range(-1.2..1.2) + if rng.random_bool(0.5) { PI } else { 0.0 };
                    unit_covector(h, x1, x2, th)
                }
            }
        })
        .collect()
}

fn conservation(
    s: &Scenario,
    h: &DualMetric,
    seed: u64,
    arts: &mut Vec<Artifact>,
) -> Result<Vec<Check>> {
    let c = &s.analysis.conservation;
    let cfg = IntegratorConfig {
        invariant_drift_tol: c.tol.min(s.integrator.invariant_drift_tol),
        ..s.integrator
    };
    let starts = conservation_starts(s, h, c.orbits, seed)?;
    let drifts = starts
        .par_iter()
        .map(|p| integrate_orbit(h, p, c.time, &cfg).map(|t| t.max_drift()))
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("orbit,h_drift,xi1_drift\n");
    for (i, d) in drifts.iter().enumerate() {
        let _ = writeln!(csv, "{i},{:.6e},{:.6e}", d.0, d.1);
    }
    arts.push(Artifact::new("conservation.csv", csv));
    let (dh, dxi) = drifts
        .iter()
        .fold((0.0f64, 0.0f64), |a, d| (a.0.max(d.0), a.1.max(d.1)));
    Ok(vec![
        Check::at_most("conservation-h", dh, c.tol),
        Check::at_most("conservation-xi1", dxi, c.tol),
    ])
}

fn locality(s: &Scenario, h: &DualMetric, seed: u64) -> Result<Vec<Check>> {
    let k = katok_of(h)?;
    let n = s.analysis.locality.samples;
    let (a0, a1) = (k.cutoffs().a0(), k.cutoffs().a1());
    let outside: Vec<CotangentPoint> = SampleSpec::new(8 * n, -3.0, 3.0, seed)
        .points()
        .into_iter()
        .filter(|p| !cone_membership(&s.profile, a1, p).unwrap_or(true))
        .take(n)
        .collect();
    if outside.len() < n {
        return Err(Error::InsufficientCloud(format!(
            "{} samples outside the cone",
            outside.len()
        )));
    }
    let mut out_err: f64 = 0.0;
    for p in &outside {
        out_err = out_err.max((h.eval(p)? - eval_h0(&s.profile, p)?).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1);
    let mut in_err: f64 = 0.0;
    for p in sample_cone(&s.profile, a0, n, seed ^ 0x2) {
        let q = p.scale_xi(rng.random_range(0.5..2.0));
        let expect = eval_h0(&s.profile, &q)? + k.alpha() * q.xi1;
        in_err = in_err.max((h.eval(&q)? - expect).abs());
    }
    Ok(vec![
        Check::at_most("locality-outside", out_err, 0.0),
        Check::at_most("locality-inside", in_err, s.analysis.locality.inside_tol),
    ])
}

fn commuting(s: &Scenario, h: &DualMetric, seed: u64) -> Result<Vec<Check>> {
    let k = katok_of(h)?;
    let c = &s.analysis.commuting;
    let periods = [TAU, s.profile.period().unwrap_or(f64::INFINITY)];
    let starts = sample_cone(&s.profile, k.cutoffs().a0(), c.samples, seed);
    let errs = starts
        .par_iter()
        .map(|p| {
            let direct = dense_trajectory(h, p, TAU, &s.integrator)?;
            let mut worst: f64 = 0.0;
            for j in 1..=c.checkpoints {
                let t = TAU * j as f64 / c.checkpoints as f64;
                let composed = compose_commuting_flows(k, p, t, &s.integrator)?;
                worst = worst.max(phase_distance(&direct.eval(t), &composed, periods));
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(vec![Check::at_most(
        "commuting-flows",
        errs.iter().copied().fold(0.0, f64::max),
        c.tol,
    )])
}

fn reversal(s: &Scenario, h: &DualMetric, seed: u64) -> Result<Vec<Check>> {
    let r = reversibilize(h)?;
    let p = &s.analysis.reversal;
    let mut even: f64 = 0.0;
    for q in SampleSpec::new(p.samples, -3.0, 3.0, seed).points() {
        even = even.max((r.eval(&q)? - r.eval(&q.negate_xi())?).abs());
    }
    let span = s.profile.period().map_or(2.0, |l| 0.5 * l);
    let seam: Vec<CotangentPoint> = (0..p.seam_points)
        .map(|k| {
            let x2 = -span + 2.0 * span * k as f64 / p.seam_points as f64;
            CotangentPoint::new(0.0, x2, 0.0, if k % 2 == 0 { 1.0 } else { -0.7 })
        })
        .collect();
    Ok(vec![
        Check::at_most("reversal-even", even, p.even_tol),
        Check::at_most(
            "reversal-seam-jets",
            seam_jet_mismatch(&r, &seam, p.seam_step),
            p.jet_tol,
        ),
    ])
}

fn iterates(
    s: &Scenario,
    h: &DualMetric,
    seed: u64,
    arts: &mut Vec<Artifact>,
) -> Result<Vec<Check>> {
    let it = &s.analysis.iterates;
    let map = ReturnMap::new(h, &s.section, &s.integrator)?;
    let period = map.section().s_period();
    let orbits = (0..it.orbits)
        .into_par_iter()
        .map(|k| {
            let mut rng = orbit_rng(seed, k);
            let x0 = [
                rng.random_range(0.0..period),
                rng.random_range(it.u_range[0]..it.u_range[1]),
            ];
            let p = map.section().state_at(h, x0[0], x0[1])?;
            let mut pts = vec![x0];
            pts.extend(map.orbit(&p, it.iterates)?.iter().map(|r| r.image));
            Ok(pts)
        })
        .collect::<Result<Vec<Vec<[f64; 2]>>>>()?;
    let spread = orbits
        .iter()
        .map(|o| {
            let (lo, hi) = o
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                    (a.min(p[1]), b.max(p[1]))
                });
            hi - lo
        })
        .fold(0.0, f64::max);
    let mut csv = String::from("orbit,k,s,u\n");
    for (i, o) in orbits.iter().enumerate() {
        for (k, p) in o.iter().enumerate() {
            let _ = writeln!(csv, "{i},{k},{:.12e},{:.12e}", p[0], p[1]);
        }
    }
    arts.push(Artifact::new("iterates.csv", csv));
    arts.push(Artifact::new(
        "iterates.svg",
        render_section_plot(
            &PlotInput::Iterates(&orbits),
            &PlotStyle {
                title: "return-map iterates".into(),
                x_range: Some([0.0, period]),
                ..PlotStyle::default()
            },
        )?,
    ));
    let rot = rotation_number(&map, it.rotation_start, it.rotation_iterates)?;
    let alpha = s.metric.alpha;
    Ok(vec![
        Check::at_most("iterates-invariant-circles", spread, it.tol),
        Check::at_most(
            "rotation-katok-shift",
            circ_dist(rot.reduced, alpha, 1.0),
            it.tol,
        )
        .with_detail(format!("rotation number {} vs alpha {alpha}", rot.value)),
    ])
}

fn uniform_in(rng: &mut ChaCha8Rng, box_: &[[f64; 2]], dims: usize) -> Result<Vec<f64>> {
    if box_.len() != dims || box_.iter().any(|r| !(r[1] > r[0])) {
        return Err(Error::ConfigInvalid {
            path: "analysis.entropy.region".into(),
            message: format!("need {dims} increasing ranges"),
        });
    }
    Ok(box_.iter().map(|r| rng.random_range(r[0]..r[1])).collect())
}

fn entropy_check(id: &str, est: &EntropyEstimate, bound: f64) -> Check {
    Check::at_most(id, est.value, bound).with_detail(format!("{} points", est.points))
}

fn return_map_entropy(
    s: &Scenario,
    h: &DualMetric,
    seed: u64,
    arts: &mut Vec<Artifact>,
) -> Result<Vec<Check>> {
    let e = &s.analysis.entropy;
    let map = ReturnMap::new(h, &s.section, &s.integrator)?;
    let starts = (0..e.cloud)
        .map(|i| uniform_in(&mut orbit_rng(seed, i), &e.region, 2).map(|v| [v[0], v[1]]))
        .collect::<Result<Vec<_>>>()?;
    let t_max = e.times.iter().copied().max().unwrap_or(0);
    let seg = return_map_segments(&map, &starts, t_max)?;
    let est = entropy_separated_sets(&seg, &e.times, &e.eps, &e.fit)?;
    arts.push(Artifact::new("entropy.csv", est.to_csv()));
    Ok(vec![entropy_check("entropy-return-map", &est, e.tol)])
}

fn flow_entropy(
    s: &Scenario,
    h: &DualMetric,
    seed: u64,
    arts: &mut Vec<Artifact>,
) -> Result<Vec<Check>> {
    let e = &s.analysis.entropy;
    let starts = (0..e.cloud)
        .map(|i| {
            let v = uniform_in(&mut orbit_rng(seed, i), &e.region, 3)?;
            unit_covector(h, v[0], v[1], v[2])
        })
        .collect::<Result<Vec<_>>>()?;
    let t_max = e.times.iter().copied().max().unwrap_or(0);
    let seg = flow_segments(h, &starts, t_max, e.dt, &s.integrator)?;
    let est = entropy_separated_sets(&seg, &e.times, &e.eps, &e.fit)?;
    arts.push(Artifact::new("entropy.csv", est.to_csv()));
    Ok(vec![entropy_check("entropy-time-one-flow", &est, e.tol)])
}

/// `ξ2 > 0` with `H(x, c, ξ2) = 1`; `H` is even and convex in `ξ2`.
fn level_xi2(h: &DualMetric, x1: f64, x2: f64, c: f64) -> Result<f64> {
    let at = |xi2: f64| h.eval(&CotangentPoint::new(x1, x2, c, xi2));
    if at(0.0)? >= 1.0 {
        return Err(Error::EmptySample);
    }
    let mut hi = 1.0;
    while at(hi)? < 1.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if at(mid)? < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn graphs(s: &Scenario, h: &DualMetric, seed: u64, arts: &mut Vec<Artifact>) -> Result<Vec<Check>> {
    let g = &s.analysis.graphs;
    let l = torus_period(&s.profile)?;
    let level = (0..g.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = orbit_rng(seed, i);
            let (x1, x2) = (
                rng.random_range(0.0..TAU),
                rng.random_range(-0.5 * l..0.5 * l),
            );
            Ok(CotangentPoint::new(
                x1,
                x2,
                g.clairaut,
                level_xi2(h, x1, x2, g.clairaut)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    // both branches of the level set: never a graph
    let both: Vec<CotangentPoint> = level
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i % 2 == 0 {
                *p
            } else {
                CotangentPoint { xi2: -p.xi2, ..*p }
            }
        })
        .collect();
    let mut csv =
        String::from("set,bins,is_graph,max_gap,max_cluster_spread,lipschitz,nonempty_bins\n");
    let (mut graph_votes, mut control_votes) = (0usize, 0usize);
    for &n in &g.bins {
        let b = GraphBinning {
            bins: [n, n],
            periods: [TAU, l],
            gap_tol: g.gap_tol,
        };
        for (name, set) in [("level", &level), ("two-branch", &both)] {
            let r = invariant_graph_test(set, &b, None)?;
            match (name, r.is_graph) {
                ("level", true) => graph_votes += 1,
                ("two-branch", false) => control_votes += 1,
                _ => {}
            }
            let _ = writeln!(
                csv,
                "{name},{n},{},{:.6e},{:.6e},{:.6e},{}",
                r.is_graph, r.max_gap, r.max_cluster_spread, r.lipschitz_estimate, r.nonempty_bins
            );
        }
    }
    arts.push(Artifact::new("graphs.csv", csv));
    let need = g.bins.len() as f64;
    Ok(vec![
        Check::at_least("graph-level-sets", graph_votes as f64, need),
        Check::at_least("graph-two-branch-control", control_votes as f64, need),
    ])
}

/// `x*` with `f(x*) = c` on `[0, b]`, by bisection.
fn turning_point(profile: &RotationalProfile, c: f64, b: f64) -> Result<f64> {
    if !(profile.eval(0.0) > c && profile.eval(b) < c) {
        return Err(Error::ProfileMismatch(format!(
            "no turning point for c = {c} in [0, {b}]"
        )));
    }
    let (mut lo, mut hi) = (0.0, b);
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if profile.eval(m) > c {
            lo = m;
        } else {
            hi = m;
        }
    }
    Ok(lo)
}

fn deviation(s: &Scenario, h: &DualMetric, arts: &mut Vec<Artifact>) -> Result<Vec<Check>> {
    let d = &s.analysis.deviation;
    let f0 = s.profile.eval(0.0);
    let start = |c: f64| CotangentPoint::new(0.0, 0.0, c * f0, (1.0 - c * c).sqrt() * f0);

    let tr = integrate_orbit(
        h,
        &start(d.rotating_clairaut),
        d.rotating_time,
        &s.integrator,
    )?;
    let lift = lift_to_cover(&tr)?;
    let dir = asymptotic_direction(&tr.times, &lift, &DirectionConfig::default())?;
    let half = tr.times.partition_point(|&t| t <= 0.5 * d.rotating_time);
    let d1 = bounded_deviation(&lift[..half], dir.fitted_direction).sup_distance;
    let d2 = bounded_deviation(&lift, dir.fitted_direction).sup_distance;

    let p = start(d.trapped_clairaut);
    let c = p.xi1 / eval_h0(&s.profile, &p)?;
    let x_star = turning_point(&s.profile, c, s.metric.b)?;
    let trapped: OrbitTrace = integrate_orbit(h, &p, d.trapped_time, &s.integrator)?;
    let sup = bounded_deviation(&lift_to_cover(&trapped)?, [1.0, 0.0]).sup_distance;
    arts.push(Artifact::new(
        "trapped_orbit.svg",
        render_section_plot(
            &PlotInput::Orbit(&trapped),
            &PlotStyle {
                title: format!("trapped orbit, c = {c}"),
                x_label: "x1".into(),
                y_label: "x2".into(),
                ..PlotStyle::default()
            },
        )?,
    ));
    Ok(vec![
        Check::at_most("deviation-rotating", (d2 - d1).abs() / d2, d.stability_tol)
            .with_detail(format!("sup distance {d1:.9} over T, {d2:.9} over 2T")),
        Check::at_most("deviation-trapped", sup - x_star, d.turning_tol)
            .with_detail(format!("sup |x2| = {sup:.12}, x* = {x_star:.12}")),
    ])
}

fn tube(s: &Scenario, h: &DualMetric, seed: u64, arts: &mut Vec<Artifact>) -> Result<Vec<Check>> {
    let t = &s.analysis.tube;
    let k = katok_of(h)?;
    let spec = TubeSpec {
        c_lo: s.profile.min_value(),
        c_hi: 1.0 / (1.0 + k.alpha()),
    };
    let mut plan = t.plan.clone();
    plan.seed = seed;
    let rep = tube_diagnostics(h, &spec, &plan, &s.integrator)?;
    let loss = rep
        .orbits
        .iter()
        .map(|o| o.initial_gap - o.min_gap)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut gap = Check::at_most("tube-gap-conservation", loss, t.gap_tol);
    if rep.failures > 0 {
        gap = Check { pass: false, ..gap }.with_detail(format!("{} orbits failed", rep.failures));
    }
    let positive = rep.witnesses.iter().filter(|w| w.distance > 0.0).count();
    let rise = rep
        .boundary_fraction
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max);
    let mut csv = String::from("eps,boundary_fraction\n");
    for (e, f) in rep.eps_grid.iter().zip(&rep.boundary_fraction) {
        let _ = writeln!(csv, "{e:.6e},{f:.6e}");
    }
    arts.push(Artifact::new("tube.csv", csv));
    Ok(vec![
        gap,
        Check::at_least("tube-witnesses", positive as f64, t.min_witnesses as f64),
        Check::at_most("tube-boundary-monotone", rise, 0.0),
    ])
}

fn benchmark_entropy(s: &Scenario, seed: u64, arts: &mut Vec<Artifact>) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (i, b) in s.analysis.benchmarks.iter().enumerate() {
        let id = format!("entropy-{}", b.map.name());
        let p = &b.plan;
        let t_max = p.times.iter().copied().max().unwrap_or(0);
        let est = map_segments(&b.map, p.cloud, t_max, seed ^ i as u64)
            .and_then(|seg| entropy_separated_sets(&seg, &p.times, &p.eps, &p.fit));
        let check = match est {
            Ok(est) => {
                arts.push(Artifact::new(
                    format!("entropy_{}.csv", b.map.name()),
                    est.to_csv(),
                ));
                let exact = b.map.exact_entropy();
                let detail = format!("estimate {:.6} vs exact {exact:.6}", est.value);
                if exact == 0.0 {
                    Check::at_most(&id, est.value, p.tol).with_detail(detail)
                } else {
                    Check::at_most(&id, (est.value / exact - 1.0).abs(), p.tol).with_detail(detail)
                }
            }
            Err(e) => Check::failed(&id, e.to_string()),
        };
        out.push(check);
    }
    Ok(out)
}

fn benchmark_rotation(s: &Scenario) -> Result<Vec<Check>> {
    let it = &s.analysis.iterates;
    let rigid = rotation_number(
        &BenchmarkMap::Rotation { shift: 0.25 },
        [0.1, 0.0],
        it.rotation_iterates,
    )?;
    let twist = rotation_number(&BenchmarkMap::Twist, [0.0, 1.0 / 3.0], it.rotation_iterates)?;
    Ok(vec![
        Check::at_most("rotation-rigid", (rigid.value - 0.25).abs(), it.tol),
        Check::at_most("rotation-twist", (twist.value - 1.0 / 3.0).abs(), it.tol),
    ])
}

type Battery = (&'static str, fn(&[f64], f64) -> f64, fn(f64, usize) -> f64);

/// Analytic `F(x, t)` with `F(x, 0) = 0`, and `∂_t^{k+1} F(x, 0) / (k + 1)`.
fn battery() -> [Battery; 5] {
    [
        (
            "t*exp(x*t)",
            |x, t| t * (x[0] * t).exp(),
            |x, k| x.powi(k as i32),
        ),
        (
            "x*sin(t)",
            |x, t| x[0] * t.sin(),
            |x, k| [x, 0.0, -x / 3.0][k],
        ),
        (
            "sin(x*t)+t^2",
            |x, t| (x[0] * t).sin() + t * t,
            |x, k| [x, 1.0, -x.powi(3) / 3.0][k],
        ),
        (
            "(exp(t)-1)*cos(x)",
            |x, t| t.exp_m1() * x[0].cos(),
            |x, k| x.cos() / (k + 1) as f64,
        ),
        (
            "t/(1+x^2*t^2)",
            |x, t| t / (1.0 + x[0] * x[0] * t * t),
            |x, k| [1.0, 0.0, -2.0 * x * x][k],
        ),
    ]
}

fn division(s: &Scenario, arts: &mut Vec<Artifact>) -> Result<Vec<Check>> {
    let d = &s.analysis.division;
    let hh = d.fd_step;
    let mut worst = [0.0f64; 3];
    let mut branch: f64 = 0.0;
    let mut csv = String::from("function,x,k,model,finite_difference,oracle\n");
    for (name, f, oracle) in battery() {
        let q = smooth_divide(f, d.config)?;
        for &x in &d.xs {
            let g = |t: f64| q.eval(&[x], t);
            let (gm, g0, gp) = (g(-hh)?, g(0.0)?, g(hh)?);
            let fd = [g0, (gp - gm) / (2.0 * hh), (gp - 2.0 * g0 + gm) / (hh * hh)];
            for k in 0..3 {
                let model = q.derivative_at_zero(&[x], k)?;
                let want = oracle(x, k);
                let scale = want.abs().max(1.0);
                worst[k] = worst[k]
                    .max((fd[k] - want).abs() / scale)
                    .max((model - want).abs() / scale);
                let _ = writeln!(
                    csv,
                    "{name},{x},{k},{model:.12e},{:.12e},{want:.12e}",
                    fd[k]
                );
            }
            branch = branch.max(q.branch_mismatch(&[x])?);
        }
    }
    arts.push(Artifact::new("division.csv", csv));
    let rejects = smooth_divide(|_: &[f64], t: f64| 1.0 + t, d.config)?.eval(&[0.0], 0.0);
    let rejected = matches!(rejects, Err(Error::NotVanishing { .. }));
    Ok(vec![
        Check::at_most("division-k0", worst[0], d.tol),
        Check::at_most("division-k1", worst[1], d.tol),
        Check::at_most("division-k2", worst[2], d.tol),
        Check::at_most("division-branch-match", branch, d.branch_tol),
        Check::at_least(
            "division-rejects-nonvanishing",
            if rejected { 1.0 } else { 0.0 },
            1.0,
        ),
    ])
}
