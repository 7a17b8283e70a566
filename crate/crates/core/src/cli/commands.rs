//! One function per subcommand. Each returns its checks, summary values, data tables
//! and plots; nothing here touches the file system.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::config::{InitialCondition, RunConfig};
use super::svg::{render, Panel, Series};
use super::{Check, CliError, Command, RunOutput, RunReport, Table};
use crate::dynamics::{integrate, measure_period, sweep_q_with, SweepOptions, Trajectory};
use crate::geometry::{
    constraint_residuals, fit_circle, fit_line, hodograph_analysis, min_orbit_radius, period_formula,
    predict_geometry, stability_determinant, OrbitGeometry, CIRCULAR_ECCENTRICITY,
};
use crate::invariants::{
    constants_of_motion, plain_angular_momentum, plain_conserved_vector, random_phase_point, verify_algebra_with,
    SampleMode,
};
use crate::model::{bound_angular_momentum_range, hamiltonian, ModelParams, PhaseState};
use crate::quantum::{
    alpha_for_zero_mode, analytic_zero_mode, build_radial_operator_with, count_zero_modes_detailed,
    default_zero_tolerance, parallel_map, q_for_charge, tail_test, Gauge, Normalizability, QuantumError,
    StencilOrder,
};
use crate::stereo::{
    disc_flux_exact, metric_check, monopole_data, plane_flux_integral, project, sphere_circle_analysis,
};

struct Outcome {
    checks: Vec<Check>,
    results: Value,
    tables: Vec<Table>,
    plots: Vec<(String, String)>,
}

pub(super) fn dispatch(cfg: &RunConfig, command: Command) -> Result<RunOutput, CliError> {
    let o = match command {
        Command::Simulate => simulate(cfg)?,
        Command::Period => period(cfg)?,
        Command::AlgebraCheck => algebra_check(cfg)?,
        Command::Geometry => geometry(cfg)?,
        Command::Stability => stability(cfg)?,
        Command::Hodograph => hodograph(cfg)?,
        Command::Stereo => stereo(cfg)?,
        Command::Flux => flux(cfg)?,
        Command::SweepQ => sweep(cfg)?,
        Command::QuantumZeroMode => zero_mode(cfg)?,
        Command::QuantumCount => count(cfg)?,
        Command::QuantumSpectrum => spectrum(cfg)?,
    };
    Ok(RunOutput {
        report: RunReport {
            command,
            config: cfg.clone(),
            checks: o.checks,
            results: o.results,
            artifacts: Vec::new(),
            passed: false,
        },
        tables: o.tables,
        plots: o.plots,
    })
}

fn max_abs(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, |a, v| a.max(v.abs()))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn circle_points(center: [f64; 2], radius: f64, n: usize) -> Vec<[f64; 2]> {
    (0..=n)
        .map(|k| {
            let t = TAU * k as f64 / n as f64;
            [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
        })
        .collect()
}

/// One full predicted period of the zero-energy orbit through the configured start.
fn one_orbit(
    params: &ModelParams,
    initial: &InitialCondition,
    tol: f64,
) -> Result<(PhaseState, OrbitGeometry, Trajectory), CliError> {
    let s0 = initial.state(params)?;
    let pred = predict_geometry(params, &s0)?;
    let traj = integrate(params, &s0, pred.period_pred.abs(), tol)?;
    Ok((s0, pred, traj))
}

fn orbit_panel(title: &str, traj: &Trajectory, circle: Option<&OrbitGeometry>) -> Panel {
    let mut series = vec![Series::line("trajectory", traj.samples.iter().map(|s| [s.x, s.y]).collect())];
    if let Some(g) = circle {
        series.push(Series::line("predicted circle", circle_points(g.center, g.radius_r, 256)));
        series.push(Series::dots("center", vec![g.center]));
    }
    Panel { title: title.into(), x_label: "x".into(), y_label: "y".into(), series, equal_aspect: true }
}

fn trajectory_table(params: &ModelParams, states: &[PhaseState]) -> Table {
    let mut t = Table::new("trajectory", &["t", "x", "y", "px", "py", "E", "Lz", "Jx", "Jy"]);
    for s in states {
        let c = constants_of_motion(params, s);
        t.push(vec![
            s.t.into(),
            s.x.into(),
            s.y.into(),
            s.px.into(),
            s.py.into(),
            hamiltonian(params, s).into(),
            c.l_z.into(),
            c.j[0].into(),
            c.j[1].into(),
        ]);
    }
    t
}

fn geometry_checks(params: &ModelParams, fit: &OrbitGeometry, pred: &OrbitGeometry, checks: &mut Vec<Check>) {
    let rc = params.r_cal;
    checks.push(Check::at_most("circle fit residual", fit.fit_residual, 1e-6 * rc));
    checks.push(Check::at_most("center vs prediction", dist(fit.center, pred.center), 1e-5 * rc));
    checks.push(Check::at_most("radius vs prediction", (fit.radius_r - pred.radius_r).abs(), 1e-5 * rc));
}

fn simulate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = &cfg.params;
    let sc = &cfg.simulate;
    let s0 = sc.initial.state(p)?;
    let c0 = constants_of_motion(p, &s0);
    let pred = predict_geometry(p, &s0)?;
    let t_max = sc.t_max.unwrap_or(sc.periods * pred.period_pred.abs());
    let traj = integrate(p, &s0, t_max, sc.tol)?;

    let scale = p.energy_scale();
    let lz_scale = (p.alpha / 2.0).sqrt() / p.r_cal;
    let l_drift = max_abs(traj.samples.iter().map(|s| constants_of_motion(p, s).l_z - c0.l_z));
    let j_drift = traj
        .samples
        .iter()
        .map(|s| dist(constants_of_motion(p, s).j, c0.j))
        .fold(0.0, f64::max);
    let res = constraint_residuals(p, &traj)?;
    let mut checks = vec![
        Check::at_most("energy drift", traj.energy_drift, 100.0 * sc.tol * scale),
        Check::at_most("L_z drift", l_drift, 1e3 * sc.tol * lz_scale),
        Check::at_most("J drift", j_drift, 1e3 * sc.tol * lz_scale * p.r_cal),
        Check::at_most("radial constraint residual", res.radial_max, 1e3 * sc.tol * p.r_cal2()),
        Check::at_most("tangential constraint residual", res.tangential_max, 1e3 * sc.tol * p.r_cal2()),
    ];
    let full_orbit = t_max >= pred.period_pred.abs() * (1.0 - 1e-12);
    let fit = if full_orbit { Some(fit_circle(&traj)?) } else { None };
    if let Some(f) = &fit {
        geometry_checks(p, f, &pred, &mut checks);
    }

    let states = if sc.samples > 0 { traj.resample(sc.samples) } else { traj.samples.clone() };
    let results = json!({
        "t_max": t_max,
        "steps": traj.samples.len() - 1,
        "energy_drift": traj.energy_drift,
        "l_z": c0.l_z,
        "j": c0.j,
        "l_z_drift": l_drift,
        "j_drift": j_drift,
        "constraints": res,
        "predicted": pred,
        "fitted": fit,
    });
    let plot = render(&[orbit_panel("orbit", &traj, Some(&pred))]);
    Ok(Outcome {
        checks,
        results,
        tables: vec![trajectory_table(p, &states)],
        plots: vec![("orbit".into(), plot)],
    })
}

fn period(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = &cfg.params;
    let s0 = cfg.period.initial.state(p)?;
    let l_z = constants_of_motion(p, &s0).l_z;
    let measured = measure_period(p, &s0, cfg.period.tol)?;
    let predicted = period_formula(p, l_z);
    let rel = (measured - predicted).abs() / predicted.abs();
    Ok(Outcome {
        checks: vec![Check::at_most("period relative error", rel, 1e-6)],
        results: json!({ "l_z": l_z, "measured": measured, "predicted": predicted, "relative_error": rel }),
        tables: Vec::new(),
        plots: Vec::new(),
    })
}

fn algebra_check(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = &cfg.params;
    let ac = &cfg.algebra;
    let mode = if ac.zero_energy { SampleMode::ZeroEnergy } else { SampleMode::Box };
    let rep = verify_algebra_with(p, ac.samples, cfg.seed, ac.step, mode)?;
    let tol = ac.threshold;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut casimir: f64 = 0.0;
    let mut reduction: f64 = 0.0;
    let plain = p.with_q(0.0);
    for _ in 0..ac.samples {
        let s = random_phase_point(p, &mut rng, mode);
        casimir = casimir.max(constants_of_motion(p, &s).casimir_residual());
        // with the field switched off the generators reduce to the plain ones
        let c = constants_of_motion(&plain, &s);
        let j = plain_conserved_vector(&plain, &s);
        let scale = 1.0 + j[0].hypot(j[1]);
        reduction = reduction
            .max((c.l_z - plain_angular_momentum(&s)).abs() / scale)
            .max(dist(c.j, j) / scale);
    }

    let central_err = (rep.central_term + p.q).abs() / (1.0 + p.q.abs());
    let checks = vec![
        Check::at_most("{L_z, H} = 0", rep.lz_h, tol),
        Check::at_most("{J, L_z} = e_z x J", rep.j_lz, tol),
        Check::at_most("{Jx, Jy} = 4 R^2 L_z - Q", rep.jx_jy, tol),
        Check::at_most("{J, H} = 4 H e_z x r", rep.j_h, tol),
        Check::at_most("central term equals -Q", central_err, tol),
        Check::at_most("central term constant", rep.central_term_spread / (1.0 + p.q.abs()), tol),
        Check::at_most("casimir identity", casimir, 1e-11),
        Check::at_most("zero-field reduction", reduction, 1e-12),
    ];
    let mut table = Table::new("algebra", &["relation", "residual", "threshold"]);
    for c in &checks {
        table.push(vec![c.name.as_str().into(), c.value.into(), c.threshold.into()]);
    }
    Ok(Outcome {
        checks,
        results: json!({ "brackets": rep, "casimir_max": casimir, "zero_field_reduction": reduction }),
        tables: vec![table],
        plots: Vec::new(),
    })
}

fn geometry(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = &cfg.params;
    let (_, pred, traj) = one_orbit(p, &cfg.geometry.initial, cfg.geometry.tol)?;
    let fit = fit_circle(&traj)?;
    let res = constraint_residuals(p, &traj)?;
    let (l_lo, l_hi) = bound_angular_momentum_range(p);
    let r_min = min_orbit_radius(p);

    let tol = cfg.geometry.tol;
    let mut checks = Vec::new();
    geometry_checks(p, &fit, &pred, &mut checks);
    checks.push(Check::at_most("radial constraint residual", res.radial_max, 1e3 * tol * p.r_cal2()));
    checks.push(Check::at_most("tangential constraint residual", res.tangential_max, 1e3 * tol * p.r_cal2()));
    checks.push(Check::holds("L_z within bound range", (l_lo..=l_hi).contains(&pred.l_z)));
    checks.push(Check::holds("radius above minimum", pred.radius_r >= r_min * (1.0 - 1e-9)));

    let mut table = Table::new("geometry", &["quantity", "fitted", "predicted"]);
    for (name, f, q) in [
        ("center_x", fit.center[0], pred.center[0]),
        ("center_y", fit.center[1], pred.center[1]),
        ("radius", fit.radius_r, pred.radius_r),
        ("offset", fit.offset_l, pred.offset_l),
    ] {
        table.push(vec![name.into(), f.into(), q.into()]);
    }
    Ok(Outcome {
        checks,
        results: json!({
            "fitted": fit,
            "predicted": pred,
            "constraints": res,
            "l_z_range": [l_lo, l_hi],
            "min_radius": r_min,
        }),
        tables: vec![table],
        plots: vec![("orbit".into(), render(&[orbit_panel("orbit and predicted circle", &traj, Some(&pred))]))],
    })
}

fn stability(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = &cfg.params;
    let sc = &cfg.stability;
    let n = sc.points.max(2);
    let step = (sc.a_max - sc.a_min) / (n - 1) as f64;
    let mut table = Table::new("stability", &["a", "v_a", "det"]);
    let mut probes = Vec::with_capacity(n);
    for k in 0..n {
        let pr = stability_determinant(p, sc.a_min + k as f64 * step, sc.energy)?;
        table.push(vec![pr.a.into(), pr.v_a.into(), pr.det_m.into()]);
        probes.push(pr);
    }
    let roots: Vec<f64> = probes
        .windows(2)
        .filter(|w| w[0].det_m.signum() != w[1].det_m.signum())
        .map(|w| w[0].a - w[0].det_m * (w[1].a - w[0].a) / (w[1].det_m - w[0].det_m))
        .collect();

    let mut checks = Vec::new();
    let mut results = json!({ "roots": roots, "grid_step": step });
    if sc.energy == 0.0 {
        let rc = p.r_cal;
        // at zero energy det = 2 alpha (a^2 - R^2) / (a^2 + R^2)^3
        let closed = |a: f64| 2.0 * p.alpha * (a * a - rc * rc) / (a * a + rc * rc).powi(3);
        let at_rc = stability_determinant(p, rc, 0.0)?.det_m;
        let at_2rc = stability_determinant(p, 2.0 * rc, 0.0)?.det_m;
        let abs_tol = 1e-12 * p.energy_scale();
        checks.push(Check::holds("single root found", roots.len() == 1));
        let root_err = roots.first().map_or(f64::INFINITY, |r| (r - rc).abs());
        checks.push(Check::at_most("root at r_cal", root_err, step));
        checks.push(Check::at_most("|det(r_cal)|", at_rc.abs(), abs_tol));
        checks.push(Check::at_most("det(2 r_cal) vs closed form", (at_2rc - closed(2.0 * rc)).abs(), abs_tol));
        results["det_at_r_cal"] = json!(at_rc);
        results["det_at_2r_cal"] = json!(at_2rc);
    }
    let curve: Vec<[f64; 2]> = probes.iter().map(|pr| [pr.a, pr.det_m]).collect();
    let plot = render(&[Panel {
        title: "excursion determinant".into(),
        x_label: "a".into(),
        y_label: "det".into(),
        series: vec![Series::line("det", curve), Series::line("zero", vec![[sc.a_min, 0.0], [sc.a_max, 0.0]])],
        equal_aspect: false,
    }]);
    Ok(Outcome { checks, results, tables: vec![table], plots: vec![("stability".into(), plot)] })
}

fn hodograph(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = &cfg.params;
    let (_, pred, traj) = one_orbit(p, &cfg.hodograph.initial, cfg.hodograph.tol)?;
    let ha = hodograph_analysis(&traj, &pred)?;
    let mut checks = Vec::new();
    if ha.predicted_eccentricity <= CIRCULAR_ECCENTRICITY {
        checks.push(Check::at_most("centered orbit eccentricity", ha.fit.eccentricity, 1e-6));
    } else {
        checks.push(Check::at_most(
            "eccentricity vs prediction",
            (ha.fit.eccentricity - ha.predicted_eccentricity).abs(),
            1e-3,
        ));
        checks.push(Check::at_most("major axis normal to orbit axis", ha.axis_deviation.unwrap_or(f64::INFINITY), 1e-3));
    }
    let mut table = Table::new("hodograph", &["t", "vx", "vy"]);
    for s in &traj.samples {
        table.push(vec![s.t.into(), s.px.into(), s.py.into()]);
    }
    let plot = render(&[Panel {
        title: "hodograph".into(),
        x_label: "vx".into(),
        y_label: "vy".into(),
        series: vec![Series::line("velocity", traj.samples.iter().map(|s| [s.px, s.py]).collect())],
        equal_aspect: true,
    }]);
    Ok(Outcome {
        checks,
        results: json!({ "analysis": ha, "orbit": pred }),
        tables: vec![table],
        plots: vec![("hodograph".into(), plot)],
    })
}

fn stereo(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = &cfg.params;
    let sc = &cfg.stereo;
    let rc = p.r_cal;
    let (_, pred, traj) = one_orbit(p, &sc.initial, sc.tol)?;
    let circle = sphere_circle_analysis(p, &traj)?;

    let equator = max_abs((0..720).map(|k| {
        let t = TAU * k as f64 / 720.0;
        project(p, rc * t.cos(), rc * t.sin()).z3
    }));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut metric: f64 = 0.0;
    for _ in 0..sc.metric_points {
        let x = rng.random_range(-3.0 * rc..=3.0 * rc);
        let y = rng.random_range(-3.0 * rc..=3.0 * rc);
        let m = metric_check(p, x, y, sc.step);
        metric = metric
            .max((m.ratio_xx / m.expected - 1.0).abs())
            .max((m.ratio_yy / m.expected - 1.0).abs())
            .max(m.off_diagonal.abs());
    }
    let mono = monopole_data(p);
    let b_expected = -p.q / (4.0 * rc.powi(4));
    let b_err = (mono.b_sphere - b_expected).abs() / b_expected.abs().max(f64::MIN_POSITIVE);
    let checks = vec![
        Check::at_most("orbit image planarity", circle.planarity_residual, 1e-6 * rc),
        Check::at_most("circle r = r_cal on the equator", equator, 1e-12 * rc),
        Check::at_most("conformal factor", metric, 1e-6),
        Check::at_most("sphere field constant", if p.q == 0.0 { mono.b_sphere.abs() } else { b_err }, 4.0 * f64::EPSILON),
    ];

    let mut table = Table::new("sphere", &["t", "x3", "y3", "z3"]);
    let mut top = Vec::new();
    let mut side = Vec::new();
    for s in &traj.samples {
        let q = project(p, s.x, s.y);
        table.push(vec![s.t.into(), q.x3.into(), q.y3.into(), q.z3.into()]);
        top.push([q.x3, q.y3]);
        side.push([q.x3, q.z3]);
    }
    let outline = circle_points([0.0, 0.0], rc, 256);
    let view = |title: &str, y: &str, pts: Vec<[f64; 2]>| Panel {
        title: title.into(),
        x_label: "x3".into(),
        y_label: y.into(),
        series: vec![Series::line("sphere", outline.clone()), Series::line("orbit", pts)],
        equal_aspect: true,
    };
    let plot = render(&[view("view from the pole", "y3", top), view("side view", "z3", side)]);
    Ok(Outcome {
        checks,
        results: json!({
            "circle": circle,
            "orbit": pred,
            "equator_max_height": equator,
            "metric_max_error": metric,
            "monopole": mono,
        }),
        tables: vec![table],
        plots: vec![("sphere".into(), plot)],
    })
}

fn flux(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = &cfg.params;
    let fc = &cfg.flux;
    let r_max = fc.r_max * p.r_cal;
    let total = monopole_data(p).total_flux;
    let numeric = plane_flux_integral(p, r_max, fc.intervals)?;
    let disc = disc_flux_exact(p, r_max);
    let vs_total = if total == 0.0 { numeric.abs() } else { (numeric - total).abs() / total.abs() };
    let vs_disc = if disc == 0.0 { numeric.abs() } else { (numeric - disc).abs() / disc.abs() };
    let checks = vec![
        Check::at_most("flux vs total monopole flux", vs_total, 1e-5),
        Check::at_most("flux vs closed-form disc flux", vs_disc, 1e-10),
    ];

    let mut table = Table::new("flux", &["r", "numeric", "exact"]);
    let mut numeric_curve = Vec::new();
    let mut exact_curve = Vec::new();
    for k in 0..=24 {
        let r = p.r_cal * 1e-2 * (r_max / (1e-2 * p.r_cal)).powf(k as f64 / 24.0);
        let f = plane_flux_integral(p, r, fc.intervals)?;
        let e = disc_flux_exact(p, r);
        table.push(vec![r.into(), f.into(), e.into()]);
        numeric_curve.push([r.log10(), f]);
        exact_curve.push([r.log10(), e]);
    }
    let plot = render(&[Panel {
        title: "flux through disc".into(),
        x_label: "log10 r".into(),
        y_label: "flux".into(),
        series: vec![Series::line("closed form", exact_curve), Series::dots("quadrature", numeric_curve)],
        equal_aspect: false,
    }]);
    Ok(Outcome {
        checks,
        results: json!({ "r_max": r_max, "numeric": numeric, "total": total, "disc_exact": disc }),
        tables: vec![table],
        plots: vec![("flux".into(), plot)],
    })
}

fn sweep(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let sc = &cfg.sweep;
    let base = cfg.params.with_q(sc.q_from);
    base.validate()?;
    let rc = base.r_cal;
    let s0 = sc.initial.state(&base)?;
    let opts = SweepOptions { tol: sc.tol, snapshot_every: sc.snapshot_every };
    let out = sweep_q_with(&base, &s0, sc.q_from, sc.q_to, sc.rate, &opts)?;

    let centers: Vec<[f64; 2]> = out.records.iter().map(|r| r.geometry.center).collect();
    let mut checks = vec![
        Check::at_least("orbit records", out.records.len() as f64, 20.0),
        Check::holds("no branch flip", out.branch_flip.is_none()),
        Check::holds("adiabatic", out.adiabatic),
    ];
    let line = if centers.len() >= 2 { Some(fit_line(&centers)?) } else { None };
    checks.push(Check::at_most(
        "center collinearity",
        line.map_or(f64::INFINITY, |l| l.max_deviation),
        1e-3 * rc,
    ));
    let endpoint = out.records.last().map(|r| {
        let g = &r.geometry;
        let l2 = g.radius_r * g.radius_r - base.r_cal2() + r.q / (2.0 * g.l_z);
        (l2.max(0.0).sqrt(), g.offset_l)
    });
    checks.push(Check::at_most(
        "endpoint center distance vs offset formula",
        endpoint.map_or(f64::INFINITY, |(pred, got)| (pred - got).abs()),
        1e-2 * rc,
    ));

    let mut table = Table::new("sweep", &["q", "t", "center_x", "center_y", "radius", "offset", "Lz"]);
    for r in &out.records {
        let g = &r.geometry;
        table.push(vec![
            r.q.into(),
            r.t.into(),
            g.center[0].into(),
            g.center[1].into(),
            g.radius_r.into(),
            g.offset_l.into(),
            g.l_z.into(),
        ]);
    }
    let q_curve = |f: fn(&OrbitGeometry) -> f64| -> Vec<[f64; 2]> {
        out.records.iter().map(|r| [r.q, f(&r.geometry)]).collect()
    };
    let plot = render(&[
        Panel {
            title: "orbit centers".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series::dots("center", centers.clone())],
            equal_aspect: true,
        },
        Panel {
            title: "radius and angular momentum".into(),
            x_label: "Q".into(),
            y_label: "".into(),
            series: vec![
                Series::line("R", q_curve(|g| g.radius_r)),
                Series::line("L_z", q_curve(|g| g.l_z)),
                Series::line("l", q_curve(|g| g.offset_l)),
            ],
            equal_aspect: false,
        },
    ]);
    Ok(Outcome {
        checks,
        results: json!({
            "records": out.records.len(),
            "branch_flip": out.branch_flip,
            "max_dq_per_orbit": out.max_dq_per_orbit,
            "adiabatic": out.adiabatic,
            "line": line,
            "endpoint": endpoint.map(|(pred, got)| json!({ "predicted_offset": pred, "center_distance": got })),
        }),
        tables: vec![table],
        plots: vec![("sweep".into(), plot)],
    })
}

fn zero_mode(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let zc = &cfg.zero_mode;
    let rc = cfg.params.r_cal;
    let order = zc.order();
    let mut checks = Vec::new();
    let mut table = Table::new(
        "zero_modes",
        &["level", "alpha", "kernel_residual", "eigenvalue", "eigenvalue_below", "eigenvalue_above", "tail_exponent", "normalizable", "strict_l2"],
    );
    let mut panels = Vec::new();
    let mut summary = Vec::new();
    for &level in &zc.levels {
        let alpha = alpha_for_zero_mode(rc, level, 0)?;
        let params = ModelParams::new(alpha, rc, 0.0)?;
        let grid = zc.grid.build(&params, 1e-4)?;
        let op = build_radial_operator_with(&params, level, &grid, Gauge::StringAtInfinity, order);
        let exact: Vec<f64> =
            grid.nodes.iter().map(|&r| analytic_zero_mode(&params, level, r)).collect::<Result<_, _>>()?;
        let residual = op.interior_residual(&exact, 0.0);
        let e0 = op.eigenvalue(0)?;
        let nodal = op.eigenvector(e0)?;
        let psi = op.wavefunction(&nodal);
        let tail = tail_test(&grid, &psi);
        let flow = |f: f64| -> Result<f64, QuantumError> {
            let shifted = ModelParams::new(alpha * f, rc, 0.0)?;
            build_radial_operator_with(&shifted, level, &grid, Gauge::StringAtInfinity, order).eigenvalue(0)
        };
        let below = flow(1.0 - zc.flow_step)?;
        let above = flow(1.0 + zc.flow_step)?;

        checks.push(Check::at_most(format!("I={level} kernel residual"), residual, 1e-6));
        checks.push(Check::at_most(format!("I={level} lowest eigenvalue"), e0.abs(), 1e-5 / (rc * rc)));
        checks.push(Check::holds(format!("I={level} spectral flow sign change"), below > 0.0 && above < 0.0));
        table.push(vec![
            level.into(),
            alpha.into(),
            residual.into(),
            e0.into(),
            below.into(),
            above.into(),
            tail.exponent.into(),
            (tail.verdict == Normalizability::Normalizable).into(),
            tail.strict_l2.into(),
        ]);
        summary.push(json!({ "level": level, "alpha": alpha, "eigenvalue": e0, "tail": tail }));

        // scale the numerical mode onto the analytic one at its peak
        let k = exact.iter().enumerate().fold(0, |b, (i, v)| if *v > exact[b] { i } else { b });
        let s = exact[k] / psi[k];
        let stride = (grid.len() / 400).max(1);
        let pts = |v: &[f64], f: f64| -> Vec<[f64; 2]> {
            grid.nodes.iter().zip(v).step_by(stride).map(|(r, y)| [r.log10(), f * y]).collect()
        };
        panels.push(Panel {
            title: format!("I = {level}"),
            x_label: "log10 r".into(),
            y_label: "psi".into(),
            series: vec![Series::line("analytic", pts(&exact, 1.0)), Series::dots("numerical", pts(&psi, s))],
            equal_aspect: false,
        });
    }
    Ok(Outcome {
        checks,
        results: json!({ "stencil_order": order.order(), "levels": summary }),
        tables: vec![table],
        plots: vec![("zero_modes".into(), render(&panels))],
    })
}

fn count(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let cc = &cfg.count;
    let rc = cfg.params.r_cal;
    let mut checks = Vec::new();
    let mut counts = Table::new("counts", &["level", "charge", "gauge", "alpha", "q", "count", "expected", "excluded"]);
    let mut sectors = Table::new("sectors", &["level", "charge", "gauge", "m", "eigenvalue", "tail_exponent", "verdict", "counted"]);
    let mut summary = Vec::new();
    for &[level, charge] in &cc.cases {
        let alpha = alpha_for_zero_mode(rc, level, charge)?;
        let mut per_case = Vec::new();
        for (m_charge, gauge) in
            [(charge, Gauge::StringAtInfinity), (-charge, Gauge::StringAtInfinity), (charge, Gauge::StringAtOrigin)]
        {
            let params = ModelParams::new(alpha, rc, q_for_charge(rc, m_charge))?;
            let grid = cc.grid.build(&params, 1e-7)?;
            let tol = cc.tol.unwrap_or_else(|| default_zero_tolerance(&params, &grid, StencilOrder::Fourth));
            let res = count_zero_modes_detailed(&params, level, m_charge, &grid, tol, gauge, cc.extra_sectors)?;
            let gauge_name = match gauge {
                Gauge::StringAtInfinity => "regular",
                Gauge::StringAtOrigin => "singular",
            };
            let excluded: Vec<String> = res.excluded.iter().map(i64::to_string).collect();
            counts.push(vec![
                level.into(),
                m_charge.into(),
                gauge_name.into(),
                alpha.into(),
                params.q.into(),
                (res.count as i64).into(),
                m_charge.abs().into(),
                excluded.join(";").as_str().into(),
            ]);
            for s in &res.sectors {
                sectors.push(vec![
                    level.into(),
                    m_charge.into(),
                    gauge_name.into(),
                    s.m.into(),
                    s.eigenvalue.into(),
                    s.tail_exponent.into(),
                    format!("{:?}", s.verdict).as_str().into(),
                    s.counted.into(),
                ]);
            }
            per_case.push((m_charge, gauge, res));
        }
        let (main, mirror, singular) = (&per_case[0].2, &per_case[1].2, &per_case[2].2);
        let tag = format!("I={level} M={charge}");
        checks.push(Check::at_most(
            format!("{tag} count equals |M|"),
            (main.count as f64 - charge.abs() as f64).abs(),
            0.0,
        ));
        // the edge sector of the window in the regular gauge is m = -M
        let edge = -charge;
        checks.push(Check::holds(format!("{tag} edge sector m={edge} excluded"), main.excluded == vec![edge]));
        checks.push(Check::holds(format!("{tag} count unchanged under M -> -M"), mirror.count == main.count));
        checks.push(Check::holds(format!("{tag} count gauge invariant"), singular.count == main.count));
        summary.push(json!({
            "level": level,
            "charge": charge,
            "alpha": alpha,
            "count": main.count,
            "mirror_count": mirror.count,
            "singular_gauge_count": singular.count,
            "excluded": main.excluded,
            "tol": main.tol,
        }));
    }
    Ok(Outcome { checks, results: json!({ "cases": summary }), tables: vec![counts, sectors], plots: Vec::new() })
}

fn spectrum(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = &cfg.params;
    let sc = &cfg.spectrum;
    let grid = sc.grid.build(p, 1e-4)?;
    let solved = parallel_map(&sc.sectors, |&m| -> Result<Vec<(f64, f64, f64, Normalizability)>, QuantumError> {
        let op = build_radial_operator_with(p, m, &grid, Gauge::StringAtInfinity, StencilOrder::Fourth);
        let mut out = Vec::new();
        for k in 0..sc.modes.min(op.len()) {
            let e = op.eigenvalue(k)?;
            let nodal = op.eigenvector(e)?;
            let residual = op.interior_residual(&nodal, e);
            let tail = tail_test(&grid, &op.wavefunction(&nodal));
            out.push((e, residual, tail.exponent, tail.verdict));
        }
        Ok(out)
    });
    let mut table = Table::new("spectrum", &["m", "k", "eigenvalue", "residual", "tail_exponent", "normalizable"]);
    let mut worst: f64 = 0.0;
    let mut ordered = true;
    let mut dots = Vec::new();
    let mut summary = Vec::new();
    for (&m, res) in sc.sectors.iter().zip(solved) {
        let modes = res?;
        ordered &= modes.windows(2).all(|w| w[0].0 <= w[1].0);
        for (k, (e, residual, exponent, verdict)) in modes.iter().enumerate() {
            worst = worst.max(residual / (1.0 + e.abs()));
            table.push(vec![
                m.into(),
                (k as i64).into(),
                (*e).into(),
                (*residual).into(),
                (*exponent).into(),
                (*verdict == Normalizability::Normalizable).into(),
            ]);
            dots.push([m as f64, *e]);
        }
        summary.push(json!({ "m": m, "eigenvalues": modes.iter().map(|t| t.0).collect::<Vec<_>>() }));
    }
    let checks = vec![
        Check::holds("eigenvalues ascending in every sector", ordered),
        Check::at_most("eigenpair residual", worst, 1e-6),
    ];
    let plot = render(&[Panel {
        title: "lowest eigenvalues per sector".into(),
        x_label: "m".into(),
        y_label: "E".into(),
        series: vec![Series::dots("E", dots)],
        equal_aspect: false,
    }]);
    Ok(Outcome {
        checks,
        results: json!({ "grid_nodes": grid.len(), "sectors": summary }),
        tables: vec![table],
        plots: vec![("spectrum".into(), plot)],
    })
}
