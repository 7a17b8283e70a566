//! Constants of motion and a finite-difference check of their Poisson algebra.
//!
//! Brackets are taken in kinetic-momentum coordinates `(x, y, Px, Py)` with
//! `{x_i, P_j} = delta_ij` and `{Px, Py} = B(r)`, so `df/dt = {f, H}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::{hamiltonian, ModelParams, PhaseState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InvariantsError {
    #[error("non-finite derivative of observable `{which}` along coordinate {coord}")]
    NonFiniteDerivative { which: &'static str, coord: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantsOfMotion {
    pub l_z: f64,
    pub j: [f64; 2],
    pub c2_lhs: f64,
    pub c2_rhs: f64,
    pub energy: f64,
}

impl ConstantsOfMotion {
    /// `|c2_lhs - c2_rhs| / (1 + |c2_rhs|)`.
    pub fn casimir_residual(&self) -> f64 {
        (self.c2_lhs - self.c2_rhs).abs() / (1.0 + self.c2_rhs.abs())
    }
}

pub fn constants_of_motion(params: &ModelParams, s: &PhaseState) -> ConstantsOfMotion {
    constants_with_g(params, s, params.gauge_g_r2(s.r2()))
}

/// Same as [`constants_of_motion`] but with `G` shifted by a constant. Any nonzero
/// offset breaks the conservation of `J`.
pub fn constants_of_motion_with_gauge_offset(
    params: &ModelParams,
    s: &PhaseState,
    offset: f64,
) -> ConstantsOfMotion {
    constants_with_g(params, s, params.gauge_g_r2(s.r2()) + offset)
}

fn constants_with_g(params: &ModelParams, s: &PhaseState, g: f64) -> ConstantsOfMotion {
    let l_z = s.mechanical_angular_momentum() + 0.5 * g;
    let j = j_vector(params, s.coords(), l_z, g);
    let rc2 = params.r_cal2();
    let energy = hamiltonian(params, s);
    let j2 = j[0] * j[0] + j[1] * j[1];
    let shift = l_z - params.q / (4.0 * rc2);
    let c2_lhs = j2 / (4.0 * rc2) + shift * shift;
    let d = params.denom(s.r2());
    let c2_rhs = d * d * energy / (2.0 * rc2) + params.alpha / (2.0 * rc2) + params.q * params.q / (16.0 * rc2 * rc2);
    ConstantsOfMotion { l_z, j, c2_lhs, c2_rhs, energy }
}

#[inline]
fn j_vector(params: &ModelParams, c: [f64; 4], l_z: f64, g: f64) -> [f64; 2] {
    let [x, y, px, py] = c;
    let rp = x * px + y * py;
    let w = l_z + 0.5 * g;
    let rc2 = params.r_cal2();
    // (L + G/2) r + (r.P) e_z x r + R^2 e_z x P
    [w * x - rp * y - rc2 * py, w * y + rp * x + rc2 * px]
}

/// Mechanical angular momentum `x Py - y Px`, the `Q = 0` angular momentum.
pub fn plain_angular_momentum(s: &PhaseState) -> f64 {
    s.x * s.py - s.y * s.px
}

/// `Q = 0` conserved vector `L r + (r.P) e_z x r + R^2 e_z x P`.
pub fn plain_conserved_vector(params: &ModelParams, s: &PhaseState) -> [f64; 2] {
    let l = plain_angular_momentum(s);
    let rp = s.radial_momentum();
    let rc2 = params.r_cal2();
    [l * s.x - rp * s.y - rc2 * s.py, l * s.y + rp * s.x + rc2 * s.px]
}

/// Scalar phase-space function of `(x, y, Px, Py)`.
pub type Observable<'a> = dyn Fn(&[f64; 4]) -> f64 + 'a;

pub fn observable_l_z(params: ModelParams) -> impl Fn(&[f64; 4]) -> f64 {
    move |c| c[0] * c[3] - c[1] * c[2] + 0.5 * params.gauge_g_r2(c[0] * c[0] + c[1] * c[1])
}

pub fn observable_jx(params: ModelParams) -> impl Fn(&[f64; 4]) -> f64 {
    move |c| jx_jy(&params, c)[0]
}

pub fn observable_jy(params: ModelParams) -> impl Fn(&[f64; 4]) -> f64 {
    move |c| jx_jy(&params, c)[1]
}

pub fn observable_h(params: ModelParams) -> impl Fn(&[f64; 4]) -> f64 {
    move |c| 0.5 * (c[2] * c[2] + c[3] * c[3]) + params.potential_r2(c[0] * c[0] + c[1] * c[1])
}

fn jx_jy(params: &ModelParams, c: &[f64; 4]) -> [f64; 2] {
    let r2 = c[0] * c[0] + c[1] * c[1];
    let g = params.gauge_g_r2(r2);
    let l_z = c[0] * c[3] - c[1] * c[2] + 0.5 * g;
    j_vector(params, *c, l_z, g)
}

/// Bracket value together with the sum of magnitudes of its terms, used to normalise
/// residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BracketValue {
    pub value: f64,
    pub magnitude: f64,
}

fn gradient(
    f: &Observable<'_>,
    c: &[f64; 4],
    h: f64,
    which: &'static str,
) -> Result<[f64; 4], InvariantsError> {
    let mut g = [0.0; 4];
    for k in 0..4 {
        let step = h * (1.0 + c[k].abs());
        let mut cp = *c;
        let mut cm = *c;
        cp[k] += step;
        cm[k] -= step;
        // use the representable step actually taken
        let dh = cp[k] - cm[k];
        g[k] = (f(&cp) - f(&cm)) / dh;
        if !g[k].is_finite() {
            return Err(InvariantsError::NonFiniteDerivative { which, coord: k });
        }
    }
    Ok(g)
}

/// Central-difference `{f, g}` with per-coordinate step `h (1 + |coordinate|)`.
pub fn poisson_bracket_detail(
    params: &ModelParams,
    f: &Observable<'_>,
    g: &Observable<'_>,
    s: &PhaseState,
    h: f64,
) -> Result<BracketValue, InvariantsError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(InvariantsError::InvalidArgument(format!("step must be > 0, got {h}")));
    }
    let c = s.coords();
    let df = gradient(f, &c, h, "f")?;
    let dg = gradient(g, &c, h, "g")?;
    let b = params.field_b_r2(s.r2());
    let terms = [
        df[0] * dg[2],
        df[1] * dg[3],
        -df[2] * dg[0],
        -df[3] * dg[1],
        b * df[2] * dg[3],
        -b * df[3] * dg[2],
    ];
    let value = terms.iter().sum();
    let magnitude = terms.iter().map(|t| t.abs()).sum();
    Ok(BracketValue { value, magnitude })
}

pub fn poisson_bracket(
    params: &ModelParams,
    f: &Observable<'_>,
    g: &Observable<'_>,
    s: &PhaseState,
    h: f64,
) -> Result<f64, InvariantsError> {
    Ok(poisson_bracket_detail(params, f, g, s, h)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SampleMode {
    /// Uniform in `x, y in [-3R, 3R]`, `P in [-3, 3] sqrt(2 alpha) / R^2`.
    Box,
    /// Box positions with zero-energy momenta of random heading.
    ZeroEnergy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlgebraReport {
    pub n_samples: usize,
    /// `{L_z, H} = 0`
    pub lz_h: f64,
    /// `{J, L_z} = e_z x J`
    pub j_lz: f64,
    /// `{Jx, Jy} = 4 R^2 L_z - Q`
    pub jx_jy: f64,
    /// `{J, H} = sign * 4 H e_z x r`
    pub j_h: f64,
    /// `+1` or `-1`: the sign found for the `{J, H}` relation.
    pub j_h_sign: f64,
    /// Mean of `{Jx, Jy} - 4 R^2 L_z` over the samples.
    pub central_term: f64,
    /// Largest deviation of `{Jx, Jy} - 4 R^2 L_z` from its mean.
    pub central_term_spread: f64,
}

impl AlgebraReport {
    pub fn worst(&self) -> f64 {
        self.lz_h.max(self.j_lz).max(self.jx_jy).max(self.j_h)
    }
}

pub fn random_phase_point(params: &ModelParams, rng: &mut impl Rng, mode: SampleMode) -> PhaseState {
    let rc = params.r_cal;
    let x = rng.random_range(-3.0 * rc..=3.0 * rc);
    let y = rng.random_range(-3.0 * rc..=3.0 * rc);
    match mode {
        SampleMode::Box => {
            let pmax = 3.0 * (2.0 * params.alpha).sqrt() / params.r_cal2();
            let px = rng.random_range(-pmax..=pmax);
            let py = rng.random_range(-pmax..=pmax);
            PhaseState { t: 0.0, x, y, px, py }
        }
        SampleMode::ZeroEnergy => {
            let heading = rng.random_range(0.0..std::f64::consts::TAU);
            let v = params.e0_speed_r2(x * x + y * y);
            PhaseState { t: 0.0, x, y, px: v * heading.cos(), py: v * heading.sin() }
        }
    }
}

/// Checks all four bracket relations at `n_samples` box-sampled phase points.
pub fn verify_algebra(
    params: &ModelParams,
    n_samples: usize,
    seed: u64,
    h: f64,
) -> Result<AlgebraReport, InvariantsError> {
    verify_algebra_with(params, n_samples, seed, h, SampleMode::Box)
}

pub fn verify_algebra_with(
    params: &ModelParams,
    n_samples: usize,
    seed: u64,
    h: f64,
    mode: SampleMode,
) -> Result<AlgebraReport, InvariantsError> {
    if n_samples == 0 {
        return Err(InvariantsError::InvalidArgument("n_samples must be >= 1".into()));
    }
    let p = *params;
    let lz = observable_l_z(p);
    let jx = observable_jx(p);
    let jy = observable_jy(p);
    let hm = observable_h(p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rc2 = p.r_cal2();

    struct Point {
        lz_h: BracketValue,
        jx_lz: BracketValue,
        jy_lz: BracketValue,
        jx_jy: BracketValue,
        jx_h: BracketValue,
        jy_h: BracketValue,
        l: f64,
        j: [f64; 2],
        e: f64,
        r: [f64; 2],
    }
    let mut pts = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let s = random_phase_point(&p, &mut rng, mode);
        let c = constants_of_motion(&p, &s);
        pts.push(Point {
            lz_h: poisson_bracket_detail(&p, &lz, &hm, &s, h)?,
            jx_lz: poisson_bracket_detail(&p, &jx, &lz, &s, h)?,
            jy_lz: poisson_bracket_detail(&p, &jy, &lz, &s, h)?,
            jx_jy: poisson_bracket_detail(&p, &jx, &jy, &s, h)?,
            jx_h: poisson_bracket_detail(&p, &jx, &hm, &s, h)?,
            jy_h: poisson_bracket_detail(&p, &jy, &hm, &s, h)?,
            l: c.l_z,
            j: c.j,
            e: c.energy,
            r: [s.x, s.y],
        });
    }
    let norm = |b: &BracketValue, expected: f64| {
        (b.value - expected).abs() / (b.magnitude + expected.abs()).max(f64::MIN_POSITIVE)
    };

    // sign of {J, H} against 4 H e_z x r, fixed once for the whole sample
    let mut dot = 0.0;
    for q in &pts {
        let (ex, ey) = (-4.0 * q.e * q.r[1], 4.0 * q.e * q.r[0]);
        dot += q.jx_h.value * ex + q.jy_h.value * ey;
    }
    let sign = if dot < 0.0 { -1.0 } else { 1.0 };

    let mut rep = AlgebraReport {
        n_samples,
        lz_h: 0.0,
        j_lz: 0.0,
        jx_jy: 0.0,
        j_h: 0.0,
        j_h_sign: sign,
        central_term: 0.0,
        central_term_spread: 0.0,
    };
    let mut central = Vec::with_capacity(n_samples);
    for q in &pts {
        rep.lz_h = rep.lz_h.max(norm(&q.lz_h, 0.0));
        rep.j_lz = rep.j_lz.max(norm(&q.jx_lz, -q.j[1])).max(norm(&q.jy_lz, q.j[0]));
        rep.jx_jy = rep.jx_jy.max(norm(&q.jx_jy, 4.0 * rc2 * q.l - p.q));
        let (ex, ey) = (-4.0 * sign * q.e * q.r[1], 4.0 * sign * q.e * q.r[0]);
        rep.j_h = rep.j_h.max(norm(&q.jx_h, ex)).max(norm(&q.jy_h, ey));
        central.push(q.jx_jy.value - 4.0 * rc2 * q.l);
    }
    let mean = central.iter().sum::<f64>() / n_samples as f64;
    rep.central_term = mean;
    rep.central_term_spread = central.iter().map(|c| (c - mean).abs()).fold(0.0, f64::max);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_e0_state;
    use std::f64::consts::FRAC_PI_2;

    fn p(alpha: f64, r: f64, q: f64) -> ModelParams {
        ModelParams::new(alpha, r, q).unwrap()
    }

    #[test]
    fn constants_examples() {
        let m = p(2.0, 1.0, 0.0);
        let s = make_e0_state(&m, 1.0, 0.0, FRAC_PI_2).unwrap();
        let c = constants_of_motion(&m, &s);
        assert!((c.l_z - 1.0).abs() < 1e-15);
        assert!(c.j[0].abs() < 1e-15 && c.j[1].abs() < 1e-15);
        assert!((c.c2_lhs - 1.0).abs() < 1e-14 && (c.c2_rhs - 1.0).abs() < 1e-14);

        let m = p(2.0, 1.0, 2.0);
        let s = PhaseState::new(0.0, 2.0, 0.0, 0.0, 0.4).unwrap();
        let c = constants_of_motion(&m, &s);
        assert!((c.l_z - 1.0).abs() < 1e-15);
        assert!((c.j[0].hypot(c.j[1]) - 2.0).abs() < 1e-14);
        assert!((c.c2_lhs - 1.25).abs() < 1e-14 && (c.c2_rhs - 1.25).abs() < 1e-14);
    }

    #[test]
    fn zero_charge_matches_plain_paths_bitwise() {
        let m = p(2.3, 0.7, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let s = random_phase_point(&m, &mut rng, SampleMode::Box);
            let c = constants_of_motion(&m, &s);
            assert_eq!(c.l_z, plain_angular_momentum(&s));
            assert_eq!(c.j, plain_conserved_vector(&m, &s));
        }
    }

    #[test]
    fn bracket_examples() {
        let m = p(2.0, 1.0, 2.0);
        let s = PhaseState::new(0.0, 0.3, -0.8, 0.5, 0.2).unwrap();
        let x = |c: &[f64; 4]| c[0];
        let px = |c: &[f64; 4]| c[2];
        let py = |c: &[f64; 4]| c[3];
        assert!((poisson_bracket(&m, &x, &px, &s, 1e-5).unwrap() - 1.0).abs() < 1e-10);
        let b = m.field_b_r2(s.r2());
        assert!((poisson_bracket(&m, &px, &py, &s, 1e-5).unwrap() - b).abs() < 1e-10);
        let lz = observable_l_z(m);
        let h = observable_h(m);
        assert!(poisson_bracket(&m, &lz, &h, &s, 1e-5).unwrap().abs() < 1e-8);
        assert!(poisson_bracket(&m, &lz, &h, &s, 0.0).is_err());
    }

    #[test]
    fn algebra_holds_for_generic_params() {
        let m = p(2.0, 1.0, 2.0);
        let r = verify_algebra(&m, 500, 7, 1e-5).unwrap();
        assert!(r.worst() < 1e-6, "{r:?}");
        assert!((r.central_term + 2.0).abs() < 1e-6);
        assert!(r.central_term_spread < 1e-5);
        assert_eq!(r.j_h_sign, 1.0);
    }

    #[test]
    fn algebra_at_zero_charge() {
        let m = p(2.0, 1.0, 0.0);
        let r = verify_algebra(&m, 300, 1, 1e-5).unwrap();
        assert!(r.worst() < 1e-6);
        assert!(r.central_term.abs() < 1e-6);
    }

    #[test]
    fn on_shell_j_commutes_with_h() {
        let m = p(3.0, 1.4, -2.5);
        let r = verify_algebra_with(&m, 300, 11, 1e-5, SampleMode::ZeroEnergy).unwrap();
        assert!(r.j_h < 1e-6, "{r:?}");
    }

    #[test]
    fn rotation_equivariance() {
        let m = p(2.0, 1.0, 1.7);
        let s = PhaseState::new(0.0, 0.9, 0.4, -0.2, 0.6).unwrap();
        let c = constants_of_motion(&m, &s);
        for th in [0.3, 1.9, -2.4] {
            let r = constants_of_motion(&m, &s.rotated(th));
            let (sn, cs) = f64::sin_cos(th);
            let jr = [cs * c.j[0] - sn * c.j[1], sn * c.j[0] + cs * c.j[1]];
            assert!((r.j[0] - jr[0]).abs() < 1e-13 && (r.j[1] - jr[1]).abs() < 1e-13);
            assert!((r.l_z - c.l_z).abs() < 1e-14);
            assert!((r.c2_rhs - c.c2_rhs).abs() < 1e-13);
            assert!((r.energy - c.energy).abs() < 1e-14);
        }
    }
}
