//! Stereographic picture: the plane maps conformally onto a sphere of radius `R`
//! (origin to the south pole, plane infinity to the north pole), where the magnetic
//! field becomes a uniform monopole field and zero-energy orbits become circles.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

use crate::dynamics::Trajectory;
use crate::model::ModelParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StereoError {
    #[error("point is within {distance:e} of the north pole, which has no finite preimage")]
    PoleSingular { distance: f64 },
    #[error("point lies off the sphere (|p| = {norm}, expected {radius})")]
    OffSphere { norm: f64, radius: f64 },
    #[error("orbit image is not planar (rms distance {0:e})")]
    NotPlanar(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpherePoint {
    pub x3: f64,
    pub y3: f64,
    pub z3: f64,
}

impl SpherePoint {
    pub fn norm(&self) -> f64 {
        (self.x3 * self.x3 + self.y3 * self.y3 + self.z3 * self.z3).sqrt()
    }

    fn vec(&self) -> Vector3<f64> {
        Vector3::new(self.x3, self.y3, self.z3)
    }
}

/// Image of the plane's point at infinity on the unit sphere; scale by `R`.
pub const PLANE_INFINITY_UNIT: SpherePoint = SpherePoint { x3: 0.0, y3: 0.0, z3: 1.0 };

/// North pole of the sphere of radius `R`.
pub fn plane_infinity(params: &ModelParams) -> SpherePoint {
    SpherePoint { x3: 0.0, y3: 0.0, z3: params.r_cal }
}

/// Relative distance to the north pole below which [`unproject`] refuses.
pub const POLE_THRESHOLD: f64 = 1e-9;

pub fn project(params: &ModelParams, x: f64, y: f64) -> SpherePoint {
    let rc = params.r_cal;
    let rc2 = rc * rc;
    let r2 = x * x + y * y;
    if !r2.is_finite() {
        return plane_infinity(params);
    }
    let d = r2 + rc2;
    SpherePoint { x3: 2.0 * rc2 * x / d, y3: 2.0 * rc2 * y / d, z3: rc * (r2 - rc2) / d }
}

pub fn unproject(params: &ModelParams, p: &SpherePoint) -> Result<(f64, f64), StereoError> {
    let rc = params.r_cal;
    let norm = p.norm();
    if !norm.is_finite() || (norm - rc).abs() > 1e-9 * rc {
        return Err(StereoError::OffSphere { norm, radius: rc });
    }
    let rho2 = p.x3 * p.x3 + p.y3 * p.y3;
    let dist = (rho2 + (rc - p.z3).powi(2)).sqrt();
    if dist <= POLE_THRESHOLD * rc {
        return Err(StereoError::PoleSingular { distance: dist });
    }
    // R - z loses precision near the pole; use (X^2 + Y^2) / (R + z) there
    let gap = if p.z3 > 0.0 { rho2 / (rc + p.z3) } else { rc - p.z3 };
    Ok((rc * p.x3 / gap, rc * p.y3 / gap))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricCheck {
    /// Plane metric over pulled-back sphere metric along x and y.
    pub ratio_xx: f64,
    pub ratio_yy: f64,
    /// Normalised off-diagonal part of the pulled-back metric.
    pub off_diagonal: f64,
    /// `((r^2 + R^2) / (2 R^2))^2`
    pub expected: f64,
}

/// Central-difference pullback of the sphere metric at `(x, y)`.
pub fn metric_check(params: &ModelParams, x: f64, y: f64, h: f64) -> MetricCheck {
    let step = |v: f64| h * (params.r_cal + v.abs());
    let (hx, hy) = (step(x), step(y));
    let dx = project(params, x + hx, y).vec() - project(params, x - hx, y).vec();
    let dy = project(params, x, y + hy).vec() - project(params, x, y - hy).vec();
    let ex = dx / (2.0 * hx);
    let ey = dy / (2.0 * hy);
    let (gxx, gyy, gxy) = (ex.dot(&ex), ey.dot(&ey), ex.dot(&ey));
    let d = (x * x + y * y + params.r_cal2()) / (2.0 * params.r_cal2());
    MetricCheck { ratio_xx: 1.0 / gxx, ratio_yy: 1.0 / gyy, off_diagonal: gxy / (gxx * gyy).sqrt(), expected: d * d }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonopoleData {
    pub b_sphere: f64,
    pub total_flux: f64,
    pub m_charge: f64,
}

pub fn monopole_data(params: &ModelParams) -> MonopoleData {
    let rc2 = params.r_cal2();
    let total_flux = -PI * params.q / rc2;
    MonopoleData { b_sphere: -params.q / (4.0 * rc2 * rc2), total_flux, m_charge: -params.q / (2.0 * rc2) }
}

/// Closed form of the flux through the disc of radius `r`.
pub fn disc_flux_exact(params: &ModelParams, r: f64) -> f64 {
    let rc2 = params.r_cal2();
    -PI * params.q * r * r / (rc2 * (r * r + rc2))
}

/// Flux of the planar field through the disc of radius `r_max`, by composite Simpson
/// quadrature in the angle `phi` with `r = R tan(phi)`. An odd `n` is rounded up.
pub fn plane_flux_integral(params: &ModelParams, r_max: f64, n: usize) -> Result<f64, StereoError> {
    if !(r_max.is_finite() && r_max > 0.0) {
        return Err(StereoError::InvalidArgument(format!("r_max must be > 0, got {r_max}")));
    }
    if n < 16 {
        return Err(StereoError::InvalidArgument(format!("need at least 16 intervals, got {n}")));
    }
    if params.q == 0.0 {
        return Ok(0.0);
    }
    let n = n + n % 2;
    let rc = params.r_cal;
    let phi_max = (r_max / rc).atan();
    let h = phi_max / n as f64;
    let f = |phi: f64| {
        let (s, c) = phi.sin_cos();
        let r = rc * s / c;
        2.0 * PI * r * params.field_b_r2(r * r) * rc / (c * c)
    };
    let mut sum = f(0.0) + f(phi_max);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(i as f64 * h);
    }
    Ok(sum * h / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SphereCircle {
    /// RMS distance of the projected samples from the fitted plane.
    pub planarity_residual: f64,
    /// Half-angle of the cone from the sphere center to the image of the disc the orbit
    /// bounds in the plane; below `pi/2` that image is the smaller cap.
    pub gamma: f64,
    /// `|Q| / (4 R^4 cos(gamma))`, absent when `cos(gamma)` vanishes.
    pub omega_pred: Option<f64>,
    pub normal: [f64; 3],
    /// Signed distance of the plane from the sphere center along `normal`.
    pub offset: f64,
}

/// Fits a plane to the projected trajectory samples.
pub fn sphere_circle_analysis(params: &ModelParams, traj: &Trajectory) -> Result<SphereCircle, StereoError> {
    let mut pts: Vec<Vector3<f64>> = traj.samples.iter().map(|s| project(params, s.x, s.y).vec()).collect();
    for seg in traj.segments() {
        let y = seg.eval(seg.t0 + 0.5 * seg.h);
        pts.push(project(params, y[0], y[1]).vec());
    }
    let n = traj.samples.len() as f64;
    let inside = [
        traj.samples.iter().map(|s| s.x).sum::<f64>() / n,
        traj.samples.iter().map(|s| s.y).sum::<f64>() / n,
    ];
    let res = fit_sphere_circle(params, &pts, project(params, inside[0], inside[1]).vec())?;
    if res.planarity_residual > 1e-4 * params.r_cal {
        return Err(StereoError::NotPlanar(res.planarity_residual));
    }
    Ok(res)
}

// `inside` is any point of the cap whose half-angle is reported.
fn fit_sphere_circle(
    params: &ModelParams,
    pts: &[Vector3<f64>],
    inside: Vector3<f64>,
) -> Result<SphereCircle, StereoError> {
    if pts.len() < 3 {
        return Err(StereoError::InvalidArgument("need at least three points".into()));
    }
    let n = pts.len() as f64;
    let centroid = pts.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::<f64>::zeros();
    for p in pts {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / n);
    let k = eig.eigenvalues.imin();
    let mut normal: Vector3<f64> = eig.eigenvectors.column(k).into_owned();
    normal /= normal.norm();
    if normal.dot(&(inside - centroid)) < 0.0 {
        normal = -normal;
    }
    let offset = normal.dot(&centroid);
    let planarity_residual = (pts.iter().map(|p| (normal.dot(&(p - centroid))).powi(2)).sum::<f64>() / n).sqrt();
    let rc = params.r_cal;
    let cos_g = (offset / rc).clamp(-1.0, 1.0);
    let gamma = cos_g.acos();
    let omega_pred = if cos_g.abs() < 1e-8 {
        None
    } else {
        Some(params.q.abs() / (4.0 * rc.powi(4) * cos_g))
    };
    Ok(SphereCircle { planarity_residual, gamma, omega_pred, normal: [normal.x, normal.y, normal.z], offset })
}

/// `|Q| / (4 R^4 cos(gamma))` for a given cone half-angle.
pub fn sphere_angular_velocity(params: &ModelParams, gamma: f64) -> Option<f64> {
    let c = gamma.cos();
    if c.abs() < 1e-8 {
        None
    } else {
        Some(params.q.abs() / (4.0 * params.r_cal.powi(4) * c))
    }
}
