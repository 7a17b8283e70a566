//! Parameter family, closed-form field profiles and zero-energy state construction.
//!
//! The particle has unit mass and moves in the plane under
//!
//! ```text
//! V(r) = -alpha / (r^2 + R^2)^2,     B(r) = -Q / (r^2 + R^2)^2,     G(r) = Q / (r^2 + R^2)
//! ```
//!
//! where `R` is the length scale `r_cal` and `G = 2 * int B r dr` is normalised so that
//! `G(inf) = 0`. Momenta are always kinetic (gauge covariant), so nothing here depends
//! on a choice of vector potential.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("alpha must be finite and > 0, got {0}")]
    InvalidAlpha(f64),
    #[error("r_cal must be finite and > 0, got {0}")]
    InvalidLength(f64),
    #[error("q must be finite, got {0}")]
    InvalidCharge(f64),
    #[error("radius must be finite and >= 0, got {0}")]
    InvalidRadius(f64),
    #[error("non-finite phase-space coordinate")]
    NonFiniteState,
    #[error("angular momentum {l_z} is not reachable at zero energy from radius {r0}")]
    UnreachableAngularMomentum { l_z: f64, r0: f64 },
    #[error("centrifugal term diverges at r = 0 (l_z - G(0)/2 = {0})")]
    CentrifugalDivergence(f64),
}

/// One member of the Hamiltonian family. Mass is fixed to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub r_cal: f64,
    pub q: f64,
}

impl ModelParams {
    pub fn new(alpha: f64, r_cal: f64, q: f64) -> Result<Self, ModelError> {
        let p = Self { alpha, r_cal, q };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(ModelError::InvalidAlpha(self.alpha));
        }
        if !(self.r_cal.is_finite() && self.r_cal > 0.0) {
            return Err(ModelError::InvalidLength(self.r_cal));
        }
        if !self.q.is_finite() {
            return Err(ModelError::InvalidCharge(self.q));
        }
        Ok(())
    }

    /// Same family member with a different monopole strength.
    pub fn with_q(&self, q: f64) -> Self {
        Self { q, ..*self }
    }

    #[inline]
    pub fn r_cal2(&self) -> f64 {
        self.r_cal * self.r_cal
    }

    /// `r^2 + R^2`.
    #[inline]
    pub fn denom(&self, r2: f64) -> f64 {
        r2 + self.r_cal2()
    }

    #[inline]
    pub fn potential_r2(&self, r2: f64) -> f64 {
        let d = self.denom(r2);
        -self.alpha / (d * d)
    }

    /// `V'(r) / r`, finite at the origin.
    #[inline]
    pub fn force_factor_r2(&self, r2: f64) -> f64 {
        let d = self.denom(r2);
        4.0 * self.alpha / (d * d * d)
    }

    #[inline]
    pub fn field_b_r2(&self, r2: f64) -> f64 {
        let d = self.denom(r2);
        -self.q / (d * d)
    }

    #[inline]
    pub fn gauge_g_r2(&self, r2: f64) -> f64 {
        self.q / self.denom(r2)
    }

    /// Speed of a zero-energy particle at squared radius `r2`.
    #[inline]
    pub fn e0_speed_r2(&self, r2: f64) -> f64 {
        (2.0 * self.alpha).sqrt() / self.denom(r2)
    }

    /// Energy scale `alpha / R^4` (depth of the potential well).
    pub fn energy_scale(&self) -> f64 {
        self.alpha / (self.r_cal2() * self.r_cal2())
    }
}

/// Planar position and kinetic momentum at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub px: f64,
    pub py: f64,
}

impl PhaseState {
    pub fn new(t: f64, x: f64, y: f64, px: f64, py: f64) -> Result<Self, ModelError> {
        let s = Self { t, x, y, px, py };
        if s.is_finite() {
            Ok(s)
        } else {
            Err(ModelError::NonFiniteState)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.x.is_finite()
            && self.y.is_finite()
            && self.px.is_finite()
            && self.py.is_finite()
    }

    #[inline]
    pub fn r2(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    #[inline]
    pub fn r(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn phi(&self) -> f64 {
        self.y.atan2(self.x)
    }

    #[inline]
    pub fn p2(&self) -> f64 {
        self.px * self.px + self.py * self.py
    }

    /// `r . P`
    #[inline]
    pub fn radial_momentum(&self) -> f64 {
        self.x * self.px + self.y * self.py
    }

    /// Mechanical angular momentum `x Py - y Px`.
    #[inline]
    pub fn mechanical_angular_momentum(&self) -> f64 {
        self.x * self.py - self.y * self.px
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x, self.y, self.px, self.py]
    }

    pub fn from_coords(t: f64, c: [f64; 4]) -> Self {
        Self { t, x: c[0], y: c[1], px: c[2], py: c[3] }
    }

    /// Rotate position and momentum about the origin by `theta`.
    pub fn rotated(&self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            t: self.t,
            x: c * self.x - s * self.y,
            y: s * self.x + c * self.y,
            px: c * self.px - s * self.py,
            py: s * self.px + c * self.py,
        }
    }
}

/// `e_z x (a, b) = (-b, a)`.
#[inline]
pub fn ez_cross(a: f64, b: f64) -> (f64, f64) {
    (-b, a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldProfile {
    pub v: f64,
    pub dv_dr: f64,
    pub b: f64,
    pub g: f64,
}

pub fn field_profile(params: &ModelParams, r: f64) -> Result<FieldProfile, ModelError> {
    if !(r.is_finite() && r >= 0.0) {
        return Err(ModelError::InvalidRadius(r));
    }
    let r2 = r * r;
    Ok(FieldProfile {
        v: params.potential_r2(r2),
        dv_dr: params.force_factor_r2(r2) * r,
        b: params.field_b_r2(r2),
        g: params.gauge_g_r2(r2),
    })
}

/// `P^2 / 2 + V(r)`.
pub fn hamiltonian(params: &ModelParams, s: &PhaseState) -> f64 {
    0.5 * s.p2() + params.potential_r2(s.r2())
}

/// State at `(x, y)` with zero energy, moving along `heading` (radians from +x).
pub fn make_e0_state(
    params: &ModelParams,
    x: f64,
    y: f64,
    heading: f64,
) -> Result<PhaseState, ModelError> {
    if !(x.is_finite() && y.is_finite() && heading.is_finite()) {
        return Err(ModelError::NonFiniteState);
    }
    let speed = params.e0_speed_r2(x * x + y * y);
    let (s, c) = heading.sin_cos();
    PhaseState::new(0.0, x, y, speed * c, speed * s)
}

/// Zero-energy state at `(r0, 0)` with canonical angular momentum `l_z`, moving outward.
pub fn make_e0_state_with_angular_momentum(params: &ModelParams, r0: f64, l_z: f64) -> Result<PhaseState, ModelError> {
    if !(r0.is_finite() && r0 > 0.0) {
        return Err(ModelError::InvalidRadius(r0));
    }
    if !l_z.is_finite() {
        return Err(ModelError::NonFiniteState);
    }
    let r2 = r0 * r0;
    let speed = params.e0_speed_r2(r2);
    let py = (l_z - 0.5 * params.gauge_g_r2(r2)) / r0;
    if py.abs() > speed {
        return Err(ModelError::UnreachableAngularMomentum { l_z, r0 });
    }
    PhaseState::new(0.0, r0, 0.0, (speed * speed - py * py).sqrt(), py)
}

/// `(L_z - G(r)/2)^2 / (2 r^2) + V(r)`, the radial effective potential at fixed canonical
/// angular momentum.
pub fn effective_potential(params: &ModelParams, l_z: f64, r: f64) -> Result<f64, ModelError> {
    if !(r.is_finite() && r >= 0.0) {
        return Err(ModelError::InvalidRadius(r));
    }
    let r2 = r * r;
    let k = l_z - 0.5 * params.gauge_g_r2(r2);
    if r == 0.0 {
        if k.abs() > 1e-12 * (1.0 + l_z.abs()) {
            return Err(ModelError::CentrifugalDivergence(k));
        }
        // K(r) = O(r^2), so the centrifugal term vanishes in the limit.
        return Ok(params.potential_r2(0.0));
    }
    Ok(k * k / (2.0 * r2) + params.potential_r2(r2))
}

/// Largest canonical angular momentum carried by a bound (`E <= 0`) orbit.
///
/// A bound orbit with momentum `L` exists iff `|L - G(r)/2| <= r sqrt(2 alpha) / (r^2 + R^2)`
/// for some `r`, so the bound is `max_r (Q/2 + r sqrt(2 alpha)) / (r^2 + R^2)`. For `Q = 0`
/// this is `sqrt(alpha / (2 R^2))`; otherwise the maximum is located numerically.
pub fn bound_angular_momentum_limit(params: &ModelParams) -> f64 {
    if params.q == 0.0 {
        return (params.alpha / (2.0 * params.r_cal2())).sqrt();
    }
    let s = (2.0 * params.alpha).sqrt();
    let f = |r: f64| (0.5 * params.q + r * s) / params.denom(r * r);
    let hi = 10.0 * (params.r_cal + params.q.abs() / s);
    let (_, fmax) = golden_section_max(f, 0.0, hi, 1e-12 * hi);
    fmax.max(f(0.0))
}

/// `(L_min, L_max)` over bound orbits; `L_min(Q) = -L_max(-Q)` by reflection.
pub fn bound_angular_momentum_range(params: &ModelParams) -> (f64, f64) {
    let lo = -bound_angular_momentum_limit(&params.with_q(-params.q));
    (lo, bound_angular_momentum_limit(params))
}

/// Absorbs the potential term `-Q^2 / (8 R^2 (r^2 + R^2)^2)` into the coupling.
pub fn equivalent_params_under_q2_shift(params: &ModelParams) -> ModelParams {
    ModelParams {
        alpha: params.alpha + params.q * params.q / (8.0 * params.r_cal2()),
        ..*params
    }
}

/// Maximise a unimodal function on `[a, b]`. Returns `(argmax, max)`.
pub(crate) fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, xtol: f64) -> (f64, f64) {
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..500 {
        if (b - a).abs() <= xtol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(alpha: f64, r: f64, q: f64) -> ModelParams {
        ModelParams::new(alpha, r, q).unwrap()
    }

    #[test]
    fn profile_examples() {
        let f = field_profile(&p(2.0, 1.0, 0.0), 1.0).unwrap();
        assert_eq!(f.v, -0.5);
        assert_eq!(f.dv_dr, 1.0);
        assert_eq!(f.b, 0.0);
        assert_eq!(f.g, 0.0);

        let f = field_profile(&p(2.0, 1.0, 2.0), 0.0).unwrap();
        assert_eq!(f.b, -2.0);
        assert_eq!(f.g, 2.0);

        let f = field_profile(&p(2.0, 1.0, 2.0), 1e8).unwrap();
        assert!(f.v < 0.0 && f.v > -1e-30);
        assert!(f.b.abs() < 1e-30 && f.g.abs() < 1e-15);
    }

    #[test]
    fn profile_rejects_bad_radius() {
        let m = p(2.0, 1.0, 0.0);
        assert!(matches!(field_profile(&m, -1.0), Err(ModelError::InvalidRadius(_))));
        assert!(field_profile(&m, f64::NAN).is_err());
        assert!(field_profile(&m, f64::INFINITY).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(matches!(ModelParams::new(-1.0, 1.0, 0.0), Err(ModelError::InvalidAlpha(_))));
        assert!(matches!(ModelParams::new(1.0, 0.0, 0.0), Err(ModelError::InvalidLength(_))));
        assert!(matches!(ModelParams::new(1.0, 1.0, f64::NAN), Err(ModelError::InvalidCharge(_))));
        assert!(ModelParams::new(1.0, 1.0, -3.0).is_ok());
    }

    #[test]
    fn hamiltonian_examples() {
        let m = p(2.0, 1.0, 0.7);
        let s = PhaseState::new(0.0, 1.0, 0.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(hamiltonian(&m, &s), 0.0, epsilon = 1e-15);
        let rest = PhaseState::new(0.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(hamiltonian(&m, &rest), -2.0);
        let far = PhaseState::new(0.0, 1e6, 0.0, 0.0, 0.0).unwrap();
        let e = hamiltonian(&m, &far);
        assert!(e < 0.0 && e > -1e-20);
    }

    #[test]
    fn e0_state_examples() {
        let m = p(2.0, 1.0, 0.0);
        let s = make_e0_state(&m, 1.0, 0.0, std::f64::consts::FRAC_PI_2).unwrap();
        assert_relative_eq!(s.px, 0.0, epsilon = 1e-15);
        assert_relative_eq!(s.py, 1.0, epsilon = 1e-15);
        let s = make_e0_state(&m, 0.0, 0.0, 0.3).unwrap();
        assert_relative_eq!(s.p2().sqrt(), 2.0, epsilon = 1e-15);
        assert!(hamiltonian(&m, &s).abs() <= 1e-14 * 2.0);
        assert!(make_e0_state(&m, f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn effective_potential_examples() {
        let m = p(2.0, 1.0, 0.0);
        assert_relative_eq!(effective_potential(&m, 1.0, 1.0).unwrap(), 0.0, epsilon = 1e-15);
        for r in [0.1, 1.0, 5.0] {
            assert!(effective_potential(&m, 0.0, r).unwrap() < 0.0);
        }
        let m = p(2.0, 1.0, 2.0);
        assert_eq!(effective_potential(&m, 1.0, 0.0).unwrap(), -2.0);
        let near = effective_potential(&m, 1.0, 1e-6).unwrap();
        assert_relative_eq!(near, -2.0, epsilon = 1e-9);
        assert!(matches!(
            effective_potential(&m, 2.0, 0.0),
            Err(ModelError::CentrifugalDivergence(_))
        ));
    }

    #[test]
    fn lmax_examples() {
        assert_relative_eq!(bound_angular_momentum_limit(&p(2.0, 1.0, 0.0)), 1.0);
        assert_relative_eq!(bound_angular_momentum_limit(&p(8.0, 2.0, 0.0)), 1.0);
        assert!(bound_angular_momentum_limit(&p(1e-12, 1.0, 0.0)) < 1e-5);
    }

    // Independent oracle: tangency of the E = 0 family, L_max = (Q + sqrt(Q^2 + 8 alpha R^2)) / (4 R^2),
    // obtained from requiring l^2 = alpha/(2L^2) - R^2 + Q/(2L) >= 0.
    #[test]
    fn lmax_numeric_matches_tangency_oracle() {
        for &(a, r, q) in &[(2.0, 1.0, 2.0), (2.0, 1.0, -2.0), (3.0, 0.5, 8.0), (1.0, 2.0, -30.0), (5.0, 1.3, 0.1)] {
            let m = p(a, r, q);
            let oracle = (q + (q * q + 8.0 * a * r * r).sqrt()) / (4.0 * r * r);
            assert_relative_eq!(bound_angular_momentum_limit(&m), oracle, max_relative = 1e-10);
        }
        let (lo, hi) = bound_angular_momentum_range(&p(2.0, 1.0, 2.0));
        assert!(lo < 0.0 && hi > 0.0);
        assert_relative_eq!(-lo, (-2.0 + (4.0f64 + 16.0).sqrt()) / 4.0, max_relative = 1e-10);
    }

    #[test]
    fn q2_shift_examples() {
        assert_eq!(equivalent_params_under_q2_shift(&p(2.0, 1.0, 0.0)).alpha, 2.0);
        assert_eq!(equivalent_params_under_q2_shift(&p(2.0, 1.0, 4.0)).alpha, 4.0);
        assert_eq!(equivalent_params_under_q2_shift(&p(1.0, 2.0, 4.0)).alpha, 1.5);
    }

    #[test]
    fn gauge_field_consistency_fd() {
        for &q in &[-3.0, 0.5, 2.0] {
            let m = p(2.0, 1.3, q);
            let h = 1e-5 * m.r_cal;
            for i in 1..200 {
                let r = 0.05 * i as f64;
                let g = |r: f64| field_profile(&m, r).unwrap().g;
                let dg = (g(r + h) - g(r - h)) / (2.0 * h);
                let expect = 2.0 * field_profile(&m, r).unwrap().b * r;
                assert!((dg - expect).abs() <= 1e-8 * expect.abs().max(1e-12), "r={r} {dg} {expect}");
            }
        }
    }

    #[test]
    fn pointwise_identities() {
        let m = p(2.7, 0.8, -1.9);
        for i in 1..500 {
            let r = 0.013 * i as f64;
            let f = field_profile(&m, r).unwrap();
            let d = r * r + m.r_cal2();
            // G = -(r^2 + R^2) B, the condition that singles out the monopole field
            assert!((f.g + d * f.b).abs() <= 1e-14 * f.g.abs().max(1e-300));
            // V' (r^2 + R^2) / r = -4 V
            let lhs = f.dv_dr * d / r;
            assert!((lhs + 4.0 * f.v).abs() <= 1e-14 * f.v.abs());
        }
    }

    #[test]
    fn state_with_prescribed_angular_momentum() {
        let m = ModelParams::new(2.0, 1.0, 2.0).unwrap();
        let s = make_e0_state_with_angular_momentum(&m, 1.0, 1.0).unwrap();
        assert!(hamiltonian(&m, &s).abs() < 1e-15);
        let l = s.mechanical_angular_momentum() + 0.5 * m.gauge_g_r2(s.r2());
        assert!((l - 1.0).abs() < 1e-15);
        assert!(s.px > 0.0);
        assert!(matches!(
            make_e0_state_with_angular_momentum(&m, 1.0, 5.0),
            Err(ModelError::UnreachableAngularMomentum { .. })
        ));
    }
}
