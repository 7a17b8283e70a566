//! Property tests over random couplings, monopole strengths and phase points.

use monopole_orbits::cli::parse_config;
use monopole_orbits::dynamics::integrate;
use monopole_orbits::geometry::{period_formula, predict_geometry};
use monopole_orbits::invariants::constants_of_motion;
use monopole_orbits::model::{bound_angular_momentum_range, hamiltonian, make_e0_state, ModelParams, PhaseState};
use monopole_orbits::stereo::{project, unproject};
use proptest::prelude::*;

fn model() -> impl Strategy<Value = ModelParams> {
    (0.5f64..5.0, 0.5f64..2.0, -8.0f64..8.0).prop_map(|(a, r, q)| ModelParams::new(a, r, q).unwrap())
}

fn phase_point(p: ModelParams) -> impl Strategy<Value = (ModelParams, PhaseState)> {
    let rc = p.r_cal;
    let pm = 3.0 * (2.0 * p.alpha).sqrt() / (rc * rc);
    (-3.0 * rc..3.0 * rc, -3.0 * rc..3.0 * rc, -pm..pm, -pm..pm)
        .prop_map(move |(x, y, px, py)| (p, PhaseState { t: 0.0, x, y, px, py }))
}

fn e0_state() -> impl Strategy<Value = (ModelParams, PhaseState)> {
    (model(), 0.2f64..2.5, 0.0f64..std::f64::consts::TAU, 0.0f64..std::f64::consts::TAU).prop_map(
        |(p, r, phi, heading)| {
            let s = make_e0_state(&p, r * p.r_cal * phi.cos(), r * p.r_cal * phi.sin(), heading).unwrap();
            (p, s)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn casimir_holds_everywhere((p, s) in model().prop_flat_map(phase_point)) {
        prop_assert!(constants_of_motion(&p, &s).casimir_residual() <= 1e-11);
    }

    #[test]
    fn rotation_preserves_l_and_rotates_j((p, s) in model().prop_flat_map(phase_point), theta in -3.2f64..3.2) {
        let a = constants_of_motion(&p, &s);
        let b = constants_of_motion(&p, &s.rotated(theta));
        let (sn, cs) = theta.sin_cos();
        let scale = 1.0 + a.j[0].hypot(a.j[1]) + a.l_z.abs();
        prop_assert!((a.l_z - b.l_z).abs() <= 1e-12 * scale);
        prop_assert!((cs * a.j[0] - sn * a.j[1] - b.j[0]).abs() <= 1e-12 * scale);
        prop_assert!((sn * a.j[0] + cs * a.j[1] - b.j[1]).abs() <= 1e-12 * scale);
    }

    #[test]
    fn projection_round_trips(p in model(), x in -50.0f64..50.0, y in -50.0f64..50.0) {
        let q = project(&p, x, y);
        prop_assert!((q.norm() - p.r_cal).abs() <= 1e-12 * p.r_cal);
        let (xb, yb) = unproject(&p, &q).unwrap();
        let tol = 1e-11 * (1.0 + x.hypot(y)).powi(2);
        prop_assert!((xb - x).abs() <= tol && (yb - y).abs() <= tol);
    }

    #[test]
    fn zero_energy_states_obey_the_orbit_relations((p, s) in e0_state()) {
        let scale = p.energy_scale();
        prop_assert!(hamiltonian(&p, &s).abs() <= 1e-12 * scale);
        let c = constants_of_motion(&p, &s);
        prop_assume!(c.l_z.abs() > 1e-3);
        let (lo, hi) = bound_angular_momentum_range(&p);
        prop_assert!(c.l_z >= lo - 1e-9 && c.l_z <= hi + 1e-9);
        let g = predict_geometry(&p, &s).unwrap();
        // the start lies on the predicted circle and the period is positive
        let off = (s.x - g.center[0]).hypot(s.y - g.center[1]);
        prop_assert!((off - g.radius_r).abs() <= 1e-9 * g.radius_r.max(p.r_cal));
        prop_assert!(period_formula(&p, c.l_z) > 0.0);
    }

    #[test]
    fn short_integration_conserves_energy_and_l((p, s) in model().prop_flat_map(phase_point)) {
        let traj = integrate(&p, &s, p.r_cal * p.r_cal / (2.0 * p.alpha).sqrt(), 1e-10).unwrap();
        let scale = p.energy_scale() + hamiltonian(&p, &s).abs();
        prop_assert!(traj.energy_drift <= 1e-7 * scale);
        let l0 = constants_of_motion(&p, &s).l_z;
        let l1 = constants_of_motion(&p, traj.last()).l_z;
        prop_assert!((l1 - l0).abs() <= 1e-7 * (1.0 + l0.abs()));
    }

    #[test]
    fn config_accepts_positive_and_rejects_nonpositive(alpha in -5.0f64..5.0, r_cal in 0.1f64..3.0) {
        let res = parse_config(&format!(r#"{{"alpha": {alpha}, "r_cal": {r_cal}}}"#));
        if alpha > 0.0 {
            prop_assert!(res.is_ok());
        } else {
            let issues = res.unwrap_err();
            prop_assert!(issues.iter().any(|i| i.path == "alpha"));
        }
    }
}
