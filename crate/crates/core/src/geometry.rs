//! Orbit geometry: zero-energy predictions, circle and ellipse fits, the orbit
//! constraint residuals, stability determinants and the velocity hodograph.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

use crate::dynamics::Trajectory;
use crate::invariants::constants_of_motion;
use crate::model::{bound_angular_momentum_limit, hamiltonian, ModelParams, PhaseState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("state is not on the zero-energy shell (H = {0:e})")]
    NotZeroEnergy(f64),
    #[error("angular momentum {0:e} is too small to define an orbit circle")]
    ZeroAngularMomentum(f64),
    #[error("radius predictions disagree: {from_angular_momentum} vs {from_constants}")]
    Inconsistent { from_angular_momentum: f64, from_constants: f64 },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("energy {energy} lies below the potential {potential} at the probe radius")]
    Forbidden { energy: f64, potential: f64 },
    #[error("no circular orbit centered at the origin with radius {0}")]
    NoCircularOrbit(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Relative energy (against `|V(r)|`) accepted as zero.
pub const ZERO_ENERGY_TOL: f64 = 1e-10;
/// Relative disagreement allowed between the two radius expressions.
pub const RADIUS_CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrbitGeometry {
    pub center: [f64; 2],
    pub radius_r: f64,
    pub offset_l: f64,
    pub l_z: f64,
    pub j: [f64; 2],
    pub period_pred: f64,
    pub fit_residual: f64,
}

/// Zero-energy period `pi alpha / |L|^3 + pi Q / (2 L |L|)`.
///
/// The second term carries the sign of `L`: the period is `pi (l^2 + R^2 + r_cal^2) / |L|`,
/// which stays positive for both orbital senses.
pub fn period_formula(params: &ModelParams, l_z: f64) -> f64 {
    let la = l_z.abs();
    PI * params.alpha / (la * la * la) + PI * params.q / (2.0 * l_z * la)
}

/// Period formula with `L^2` in the monopole term, valid as written for `L > 0` only.
pub fn period_formula_unsigned(params: &ModelParams, l_z: f64) -> f64 {
    let la = l_z.abs();
    PI * params.alpha / (la * la * la) + PI * params.q / (2.0 * l_z * l_z)
}

fn angular_momentum_floor(params: &ModelParams) -> f64 {
    1e-9 * (params.alpha / 2.0).sqrt() / params.r_cal
}

/// Geometry of the closed orbit through a zero-energy state.
pub fn predict_geometry(params: &ModelParams, s: &PhaseState) -> Result<OrbitGeometry, GeometryError> {
    let e = hamiltonian(params, s);
    let v = params.potential_r2(s.r2()).abs();
    if e.abs() > ZERO_ENERGY_TOL * v {
        return Err(GeometryError::NotZeroEnergy(e));
    }
    let c = constants_of_motion(params, s);
    geometry_from_constants(params, c.l_z, c.j)
}

/// Orbit circle determined by the conserved `L_z` and `J` on the zero-energy shell.
pub fn geometry_from_constants(
    params: &ModelParams,
    l_z: f64,
    j: [f64; 2],
) -> Result<OrbitGeometry, GeometryError> {
    if !(l_z.is_finite() && j[0].is_finite() && j[1].is_finite()) {
        return Err(GeometryError::InvalidArgument("non-finite constants".into()));
    }
    if l_z.abs() < angular_momentum_floor(params) {
        return Err(GeometryError::ZeroAngularMomentum(l_z));
    }
    let r2_a = params.alpha / (2.0 * l_z * l_z);
    let j2 = j[0] * j[0] + j[1] * j[1];
    let r2_b = params.r_cal2() + j2 / (4.0 * l_z * l_z) - params.q / (2.0 * l_z);
    if (r2_a - r2_b).abs() > RADIUS_CONSISTENCY_TOL * r2_a {
        return Err(GeometryError::Inconsistent { from_angular_momentum: r2_a, from_constants: r2_b });
    }
    let l2 = r2_a - params.r_cal2() + params.q / (2.0 * l_z);
    Ok(OrbitGeometry {
        center: [j[0] / (2.0 * l_z), j[1] / (2.0 * l_z)],
        radius_r: r2_a.sqrt(),
        offset_l: l2.max(0.0).sqrt(),
        l_z,
        j,
        period_pred: period_formula(params, l_z),
        fit_residual: 0.0,
    })
}

/// Smallest orbit radius among zero-energy orbits at the given `Q`.
pub fn min_orbit_radius(params: &ModelParams) -> f64 {
    let l_max = bound_angular_momentum_limit(&params.with_q(params.q.abs()));
    (params.alpha / 2.0).sqrt() / l_max
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CircleFit {
    pub center: [f64; 2],
    pub radius: f64,
    /// RMS geometric distance of the points to the circle.
    pub residual: f64,
    /// Angular extent covered by the points, in radians.
    pub arc_span: f64,
}

/// Algebraic circle fit followed by Gauss–Newton refinement of geometric distances.
pub fn fit_circle_points(points: &[[f64; 2]]) -> Result<CircleFit, GeometryError> {
    if points.len() < 3 {
        return Err(GeometryError::DegenerateFit("fewer than three points".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let scale = points
        .iter()
        .map(|p| (p[0] - mx).hypot(p[1] - my))
        .fold(0.0, f64::max);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(GeometryError::DegenerateFit("points coincide".into()));
    }
    // x^2 + y^2 + D x + E y + F = 0 on centered, scaled data
    let a = DMatrix::from_fn(points.len(), 3, |i, k| {
        let (u, v) = ((points[i][0] - mx) / scale, (points[i][1] - my) / scale);
        [u, v, 1.0][k]
    });
    let b = DVector::from_fn(points.len(), |i, _| {
        let (u, v) = ((points[i][0] - mx) / scale, (points[i][1] - my) / scale);
        -(u * u + v * v)
    });
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    if sv.min() <= 1e-10 * sv.max() {
        return Err(GeometryError::DegenerateFit("points are collinear".into()));
    }
    let sol = svd.solve(&b, 1e-14).map_err(|e| GeometryError::DegenerateFit(e.to_string()))?;
    let (cu, cv) = (-0.5 * sol[0], -0.5 * sol[1]);
    let r2 = cu * cu + cv * cv - sol[2];
    if !(r2 > 0.0) {
        return Err(GeometryError::DegenerateFit("algebraic fit has no real radius".into()));
    }
    let (mut cx, mut cy, mut r) = (cu, cv, r2.sqrt());
    if r > 1e6 {
        return Err(GeometryError::DegenerateFit("points are collinear".into()));
    }

    let pts: Vec<(f64, f64)> =
        points.iter().map(|p| ((p[0] - mx) / scale, (p[1] - my) / scale)).collect();
    let mut lambda = 1e-6;
    let cost = |cx: f64, cy: f64, r: f64| -> f64 {
        pts.iter().map(|&(u, v)| ((u - cx).hypot(v - cy) - r).powi(2)).sum()
    };
    let mut c_now = cost(cx, cy, r);
    for _ in 0..100 {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for &(u, v) in &pts {
            let d = (u - cx).hypot(v - cy);
            if d == 0.0 {
                continue;
            }
            let jrow = Vector3::new(-(u - cx) / d, -(v - cy) / d, -1.0);
            let res = d - r;
            jtj += jrow * jrow.transpose();
            jtr += jrow * res;
        }
        let mut improved = false;
        for _ in 0..20 {
            let mut m = jtj;
            for k in 0..3 {
                m[(k, k)] *= 1.0 + lambda;
            }
            let Some(step) = m.lu().solve(&(-jtr)) else { break };
            let (nx, ny, nr) = (cx + step[0], cy + step[1], r + step[2]);
            let c_new = cost(nx, ny, nr);
            if c_new <= c_now {
                let small = step.norm() <= 1e-15 * (1.0 + r);
                cx = nx;
                cy = ny;
                r = nr;
                c_now = c_new;
                lambda = (lambda * 0.1).max(1e-12);
                improved = !small;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let residual = (c_now / n).sqrt() * scale;
    let center = [mx + cx * scale, my + cy * scale];
    let radius = r * scale;

    let mut angles: Vec<f64> =
        points.iter().map(|p| (p[1] - center[1]).atan2(p[0] - center[0])).collect();
    angles.sort_by(f64::total_cmp);
    let mut max_gap = angles[0] + 2.0 * PI - angles[angles.len() - 1];
    for w in angles.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    let arc_span = 2.0 * PI - max_gap;
    if arc_span < PI / 3.0 {
        return Err(GeometryError::DegenerateFit(format!(
            "points span only {:.1} degrees of arc",
            arc_span.to_degrees()
        )));
    }
    Ok(CircleFit { center, radius, residual, arc_span })
}

/// Positions of the step endpoints and step midpoints of a trajectory.
pub fn trajectory_positions(traj: &Trajectory) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = traj.samples.iter().map(|s| [s.x, s.y]).collect();
    for seg in traj.segments() {
        let y = seg.eval(seg.t0 + 0.5 * seg.h);
        pts.push([y[0], y[1]]);
    }
    pts
}

/// Circle fitted to the positions; constants and the predicted period come from the
/// first sample.
pub fn fit_circle(traj: &Trajectory) -> Result<OrbitGeometry, GeometryError> {
    let fit = fit_circle_points(&trajectory_positions(traj))?;
    let c = constants_of_motion(&traj.params, traj.first());
    Ok(OrbitGeometry {
        center: fit.center,
        radius_r: fit.radius,
        offset_l: fit.center[0].hypot(fit.center[1]),
        l_z: c.l_z,
        j: c.j,
        period_pred: period_formula(&traj.params, c.l_z),
        fit_residual: fit.residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstraintResiduals {
    pub radial_max: f64,
    pub radial_rms: f64,
    pub tangential_max: f64,
    pub tangential_rms: f64,
}

/// Orbit-constraint residuals along a trajectory, using `L_z` and `J` from its first sample:
///
/// ```text
/// J . r / L - (r^2 - r_cal^2 + Q / (2L))       and       (J x r + (r^2 + r_cal^2)(r . P)) / L
/// ```
///
/// Both vanish along zero-energy orbits and drift when `J` is not conserved.
pub fn constraint_residuals(
    params: &ModelParams,
    traj: &Trajectory,
) -> Result<ConstraintResiduals, GeometryError> {
    let s0 = traj.first();
    let e = hamiltonian(params, s0);
    if e.abs() > ZERO_ENERGY_TOL * params.potential_r2(s0.r2()).abs() {
        return Err(GeometryError::NotZeroEnergy(e));
    }
    let c = constants_of_motion(params, s0);
    if c.l_z.abs() < angular_momentum_floor(params) {
        return Err(GeometryError::ZeroAngularMomentum(c.l_z));
    }
    Ok(constraint_residuals_with(params, traj, c.l_z, c.j))
}

/// Residuals against caller-supplied constants; no shell check.
pub fn constraint_residuals_with(
    params: &ModelParams,
    traj: &Trajectory,
    l_z: f64,
    j: [f64; 2],
) -> ConstraintResiduals {
    let rc2 = params.r_cal2();
    let (mut r_max, mut r_sum, mut t_max, mut t_sum) = (0.0f64, 0.0, 0.0f64, 0.0);
    for s in &traj.samples {
        let r2 = s.r2();
        let radial = (j[0] * s.x + j[1] * s.y) / l_z - (r2 - rc2 + params.q / (2.0 * l_z));
        let cross = j[0] * s.y - j[1] * s.x;
        let tangential = (cross + (r2 + rc2) * s.radial_momentum()) / l_z;
        r_max = r_max.max(radial.abs());
        t_max = t_max.max(tangential.abs());
        r_sum += radial * radial;
        t_sum += tangential * tangential;
    }
    let n = traj.samples.len() as f64;
    ConstraintResiduals {
        radial_max: r_max,
        radial_rms: (r_sum / n).sqrt(),
        tangential_max: t_max,
        tangential_rms: (t_sum / n).sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityProbe {
    pub a: f64,
    pub v_a: f64,
    pub det_m: f64,
}

/// `a V'(a) - v_a^2` with `v_a^2 = 2 (E - V(a))`.
pub fn stability_determinant(params: &ModelParams, a: f64, energy: f64) -> Result<StabilityProbe, GeometryError> {
    if !(a.is_finite() && a > 0.0) {
        return Err(GeometryError::InvalidArgument(format!("radius must be > 0, got {a}")));
    }
    if !energy.is_finite() {
        return Err(GeometryError::InvalidArgument("energy must be finite".into()));
    }
    let r2 = a * a;
    let v = params.potential_r2(r2);
    if energy < v {
        return Err(GeometryError::Forbidden { energy, potential: v });
    }
    let dv = params.force_factor_r2(r2) * a;
    Ok(StabilityProbe { a, v_a: (2.0 * (energy - v)).sqrt(), det_m: a * dv + 2.0 * v - 2.0 * energy })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CenteredOrbit {
    /// Angular frequency, positive on the branch that continues `+sqrt(V'(a)/a)`.
    pub omega: f64,
    pub det_m: f64,
}

/// Both branches of the force balance `omega^2 a = V'(a) + B(a) omega a`, ordered
/// `[positive, negative]`, each with `det = omega Q a^2 / (a^2 + r_cal^2)^2`.
pub fn centered_orbit_branches(params: &ModelParams, a: f64) -> Result<[CenteredOrbit; 2], GeometryError> {
    if !(a.is_finite() && a > 0.0) {
        return Err(GeometryError::InvalidArgument(format!("radius must be > 0, got {a}")));
    }
    let r2 = a * a;
    let dv = params.force_factor_r2(r2) * a;
    let b = params.field_b_r2(r2);
    let disc = b * b * r2 + 4.0 * a * dv;
    if !(disc >= 0.0) {
        return Err(GeometryError::NoCircularOrbit(a));
    }
    let sq = disc.sqrt();
    // Roots of a w^2 - B a w - V' = 0, written to avoid cancellation.
    let (w_pos, w_neg) = if b >= 0.0 {
        let w1 = (b * a + sq) / (2.0 * a);
        (w1, -dv / (a * w1))
    } else {
        let w2 = (b * a - sq) / (2.0 * a);
        (-dv / (a * w2), w2)
    };
    let d = params.denom(r2);
    let det = |w: f64| w * params.q * r2 / (d * d);
    Ok([
        CenteredOrbit { omega: w_pos, det_m: det(w_pos) },
        CenteredOrbit { omega: w_neg, det_m: det(w_neg) },
    ])
}

/// Determinant on the positive-frequency branch.
pub fn centered_orbit_determinant(params: &ModelParams, a: f64) -> Result<f64, GeometryError> {
    Ok(centered_orbit_branches(params, a)?[0].det_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllipseFit {
    pub center: [f64; 2],
    pub semi_major: f64,
    pub semi_minor: f64,
    pub eccentricity: f64,
    /// Direction of the major axis in `[0, pi)`; absent for a circle.
    pub axis_angle: Option<f64>,
    pub residual: f64,
}

/// Eccentricity below which an ellipse is treated as a circle.
pub const CIRCULAR_ECCENTRICITY: f64 = 1e-6;

// Ellipse in center/axes/angle form and its approximate point distance.
#[derive(Debug, Clone, Copy)]
struct EllipseParams {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl EllipseParams {
    fn from_slice(p: &[f64]) -> Self {
        Self { cx: p[0], cy: p[1], a: p[2], b: p[3], theta: p[4] }
    }

    fn to_array(self) -> [f64; 5] {
        [self.cx, self.cy, self.a, self.b, self.theta]
    }

    // First-order (Sampson) distance of a point to the ellipse.
    fn distance(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let (a2, b2) = (self.a * self.a, self.b * self.b);
        let f = u * u / a2 + v * v / b2 - 1.0;
        let g = 2.0 * ((u / a2).powi(2) + (v / b2).powi(2)).sqrt();
        if g == 0.0 {
            f.abs() * self.a
        } else {
            f / g
        }
    }
}

fn conic_to_ellipse(c: &[f64; 6]) -> Option<EllipseParams> {
    let [a, b, cc, d, e, f] = *c;
    let den = b * b - 4.0 * a * cc;
    if !(den < 0.0) {
        return None;
    }
    let cx = (2.0 * cc * d - b * e) / den;
    let cy = (2.0 * a * e - b * d) / den;
    // value of the conic at the center
    let f0 = a * cx * cx + b * cx * cy + cc * cy * cy + d * cx + e * cy + f;
    let diff = ((a - cc).powi(2) + b * b).sqrt();
    let l1 = 0.5 * (a + cc - diff);
    let l2 = 0.5 * (a + cc + diff);
    // A u^2 + C v^2 = -f0 in the principal frame
    let (l_small, l_big) = if l1.abs() < l2.abs() { (l1, l2) } else { (l2, l1) };
    let sa = -f0 / l_small;
    let sb = -f0 / l_big;
    if !(sa > 0.0 && sb > 0.0) {
        return None;
    }
    // eigenvector of [[a, b/2], [b/2, cc]] for the smaller eigenvalue (major axis)
    let theta = if b.abs() < 1e-300 && (a - cc).abs() < 1e-300 {
        0.0
    } else {
        let (vx, vy) = if (a - l_small).abs() > (cc - l_small).abs() {
            (-0.5 * b, a - l_small)
        } else {
            (cc - l_small, -0.5 * b)
        };
        vy.atan2(vx)
    };
    Some(EllipseParams { cx, cy, a: sa.sqrt(), b: sb.sqrt(), theta })
}

/// Direct least-squares ellipse fit (Halir–Flusser) refined by Levenberg–Marquardt on
/// point-to-curve distances.
pub fn fit_ellipse_points(points: &[[f64; 2]]) -> Result<EllipseFit, GeometryError> {
    if points.len() < 6 {
        return Err(GeometryError::DegenerateFit("fewer than six points".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let scale = points.iter().map(|p| (p[0] - mx).hypot(p[1] - my)).fold(0.0, f64::max);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(GeometryError::DegenerateFit("points coincide".into()));
    }
    let pts: Vec<(f64, f64)> =
        points.iter().map(|p| ((p[0] - mx) / scale, (p[1] - my) / scale)).collect();

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for &(x, y) in &pts {
        let d1 = Vector3::new(x * x, x * y, y * y);
        let d2 = Vector3::new(x, y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    let s3_inv = s3
        .try_inverse()
        .ok_or_else(|| GeometryError::DegenerateFit("singular scatter matrix".into()))?;
    let t = -(s3_inv * s2.transpose());
    let m = s1 + s2 * t;
    let m = Matrix3::from_rows(&[
        (m.row(2) / 2.0).into_owned(),
        (-m.row(1)).into_owned(),
        (m.row(0) / 2.0).into_owned(),
    ]);
    let mut best: Option<Vector3<f64>> = None;
    for ev in m.complex_eigenvalues().iter() {
        if ev.im.abs() > 1e-9 * (1.0 + ev.re.abs()) {
            continue;
        }
        let k = m - Matrix3::identity() * ev.re;
        // null vector as the largest cross product of two rows
        let rows = [k.row(0).transpose(), k.row(1).transpose(), k.row(2).transpose()];
        let cands = [rows[0].cross(&rows[1]), rows[0].cross(&rows[2]), rows[1].cross(&rows[2])];
        let v = cands.iter().max_by(|a, b| a.norm().total_cmp(&b.norm())).copied().unwrap();
        if v.norm() == 0.0 {
            continue;
        }
        let cond = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cond > 0.0 {
            best = Some(v / v.norm());
        }
    }
    let a1 = best.ok_or_else(|| GeometryError::DegenerateFit("no elliptic solution".into()))?;
    let a2 = t * a1;
    let conic = [a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]];
    let init = conic_to_ellipse(&conic)
        .ok_or_else(|| GeometryError::DegenerateFit("conic is not a real ellipse".into()))?;

    let refined = refine_ellipse(&pts, init);
    let rms = (pts.iter().map(|&(x, y)| refined.distance(x, y).powi(2)).sum::<f64>() / n).sqrt();

    let (mut ea, mut eb, mut theta) = (refined.a.abs(), refined.b.abs(), refined.theta);
    if eb > ea {
        std::mem::swap(&mut ea, &mut eb);
        theta += 0.5 * PI;
    }
    let eccentricity = ((ea - eb) * (ea + eb)).max(0.0).sqrt() / ea;
    let axis_angle = if eccentricity < CIRCULAR_ECCENTRICITY { None } else { Some(theta.rem_euclid(PI)) };
    Ok(EllipseFit {
        center: [mx + refined.cx * scale, my + refined.cy * scale],
        semi_major: ea * scale,
        semi_minor: eb * scale,
        eccentricity,
        axis_angle,
        residual: rms * scale,
    })
}

fn refine_ellipse(pts: &[(f64, f64)], init: EllipseParams) -> EllipseParams {
    let cost = |p: &EllipseParams| pts.iter().map(|&(x, y)| p.distance(x, y).powi(2)).sum::<f64>();
    let mut cur = init;
    let mut c_now = cost(&cur);
    let mut lambda = 1e-3;
    let np = pts.len();
    for _ in 0..60 {
        let base = cur.to_array();
        let r0: Vec<f64> = pts.iter().map(|&(x, y)| cur.distance(x, y)).collect();
        let mut jac = DMatrix::<f64>::zeros(np, 5);
        for k in 0..5 {
            let h = 1e-7 * (1.0 + base[k].abs());
            let mut pp = base;
            pp[k] += h;
            let mut pm = base;
            pm[k] -= h;
            let (ep, em) = (EllipseParams::from_slice(&pp), EllipseParams::from_slice(&pm));
            for (i, &(x, y)) in pts.iter().enumerate() {
                jac[(i, k)] = (ep.distance(x, y) - em.distance(x, y)) / (2.0 * h);
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * DVector::from_vec(r0);
        let mut improved = false;
        for _ in 0..20 {
            let mut m = jtj.clone();
            for k in 0..5 {
                m[(k, k)] += lambda * (jtj[(k, k)] + 1e-15);
            }
            let Some(step) = m.lu().solve(&(-&jtr)) else { break };
            let mut trial = base;
            for k in 0..5 {
                trial[k] += step[k];
            }
            let cand = EllipseParams::from_slice(&trial);
            let c_new = cost(&cand);
            if c_new <= c_now {
                let rel = (c_now - c_new) / c_now.max(1e-300);
                cur = cand;
                c_now = c_new;
                lambda = (lambda * 0.2).max(1e-12);
                improved = rel > 1e-14 && c_now > 1e-32;
                break;
            }
            lambda *= 8.0;
        }
        if !improved {
            break;
        }
    }
    cur
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HodographAnalysis {
    pub fit: EllipseFit,
    pub predicted_eccentricity: f64,
    /// Angle between the major axis and the normal to the orbit axis, in `[0, pi/2]`.
    /// Absent when either axis is undefined.
    pub axis_deviation: Option<f64>,
}

/// `2 R l / (R^2 + r_cal^2 + l^2)`.
pub fn predicted_hodograph_eccentricity(params: &ModelParams, geom: &OrbitGeometry) -> f64 {
    let (r, l) = (geom.radius_r, geom.offset_l);
    2.0 * r * l / (r * r + params.r_cal2() + l * l)
}

/// Ellipse fitted to the velocity curve of one orbit, compared with the prediction.
pub fn hodograph_analysis(traj: &Trajectory, geom: &OrbitGeometry) -> Result<HodographAnalysis, GeometryError> {
    let mut vel: Vec<[f64; 2]> = traj.samples.iter().map(|s| [s.px, s.py]).collect();
    for seg in traj.segments() {
        let y = seg.eval(seg.t0 + 0.5 * seg.h);
        vel.push([y[2], y[3]]);
    }
    let fit = fit_ellipse_points(&vel)?;
    let predicted_eccentricity = predicted_hodograph_eccentricity(&traj.params, geom);
    let orbit_axis = if geom.offset_l > 1e-9 * traj.params.r_cal {
        Some(geom.center[1].atan2(geom.center[0]))
    } else {
        None
    };
    let axis_deviation = match (fit.axis_angle, orbit_axis) {
        (Some(major), Some(axis)) => {
            let normal = axis + 0.5 * PI;
            let d = (major - normal).rem_euclid(PI);
            Some(d.min(PI - d))
        }
        _ => None,
    };
    Ok(HodographAnalysis { fit, predicted_eccentricity, axis_deviation })
}

/// Total-least-squares line through `points`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub centroid: [f64; 2],
    /// Unit direction of the line.
    pub direction: [f64; 2],
    /// Largest perpendicular distance of a point from the line.
    pub max_deviation: f64,
}

pub fn fit_line(points: &[[f64; 2]]) -> Result<LineFit, GeometryError> {
    if points.len() < 2 {
        return Err(GeometryError::InvalidArgument("need at least two points".into()));
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - cx, p[1] - cy);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (s, c) = angle.sin_cos();
    let max_deviation = points.iter().map(|p| ((p[1] - cy) * c - (p[0] - cx) * s).abs()).fold(0.0, f64::max);
    Ok(LineFit { centroid: [cx, cy], direction: [c, s], max_deviation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::integrate;
    use crate::model::make_e0_state;
    use std::f64::consts::FRAC_PI_2;

    fn p(alpha: f64, r: f64, q: f64) -> ModelParams {
        ModelParams::new(alpha, r, q).unwrap()
    }

    #[test]
    fn prediction_examples() {
        let m = p(2.0, 1.0, 0.0);
        let s = make_e0_state(&m, 1.0, 0.0, FRAC_PI_2).unwrap();
        let g = predict_geometry(&m, &s).unwrap();
        assert!(g.center[0].abs() < 1e-15 && g.center[1].abs() < 1e-15);
        assert!((g.radius_r - 1.0).abs() < 1e-15);
        assert!(g.offset_l < 1e-7);
        assert!((g.period_pred - 2.0 * PI).abs() < 1e-14);

        let m = p(2.0, 1.0, 2.0);
        let s = PhaseState::new(0.0, 2.0, 0.0, 0.0, 0.4).unwrap();
        let g = predict_geometry(&m, &s).unwrap();
        assert!((g.l_z - 1.0).abs() < 1e-15);
        assert!((g.center[0].hypot(g.center[1]) - 1.0).abs() < 1e-14);
        assert!((g.radius_r - 1.0).abs() < 1e-14);
        assert!((g.offset_l - 1.0).abs() < 1e-14);
        assert!((g.period_pred - 3.0 * PI).abs() < 1e-13);
    }

    #[test]
    fn near_lmax_orbit_is_centered() {
        let m = p(2.0, 1.0, 0.0);
        let s = make_e0_state(&m, 1.0 + 1e-6, 0.0, FRAC_PI_2).unwrap();
        let g = predict_geometry(&m, &s).unwrap();
        assert!(g.offset_l < 1e-5 && (g.radius_r - 1.0).abs() < 1e-5);
    }

    #[test]
    fn prediction_errors() {
        let m = p(2.0, 1.0, 0.0);
        let s = PhaseState::new(0.0, 1.0, 0.0, 0.0, 1.1).unwrap();
        assert!(matches!(predict_geometry(&m, &s), Err(GeometryError::NotZeroEnergy(_))));
        let s = make_e0_state(&m, 1.0, 0.0, 0.0).unwrap();
        assert!(matches!(predict_geometry(&m, &s), Err(GeometryError::ZeroAngularMomentum(_))));
        assert!(matches!(
            geometry_from_constants(&m, 1.0, [1.0, 0.0]),
            Err(GeometryError::Inconsistent { .. })
        ));
    }

    #[test]
    fn period_sign_conventions() {
        let m = p(2.0, 1.0, 2.0);
        assert!((period_formula(&m, 1.0) - 3.0 * PI).abs() < 1e-14);
        assert!((period_formula(&m, -1.0) - PI).abs() < 1e-14);
        assert_eq!(period_formula(&m, 0.7), period_formula_unsigned(&m, 0.7));
    }

    #[test]
    fn circle_fit_exact_points() {
        let pts: Vec<[f64; 2]> = (0..50)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / 50.0;
                [3.0 + 2.5 * t.cos(), -1.0 + 2.5 * t.sin()]
            })
            .collect();
        let f = fit_circle_points(&pts).unwrap();
        assert!((f.center[0] - 3.0).abs() < 1e-12 && (f.center[1] + 1.0).abs() < 1e-12);
        assert!((f.radius - 2.5).abs() < 1e-12);
        assert!(f.residual < 1e-12 * 2.5);
    }

    #[test]
    fn circle_fit_degenerate_inputs() {
        let line: Vec<[f64; 2]> = (0..20).map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert!(matches!(fit_circle_points(&line), Err(GeometryError::DegenerateFit(_))));
        let arc: Vec<[f64; 2]> = (0..20)
            .map(|i| {
                let t = 0.5 * i as f64 / 19.0;
                [t.cos(), t.sin()]
            })
            .collect();
        assert!(matches!(fit_circle_points(&arc), Err(GeometryError::DegenerateFit(_))));
    }

    #[test]
    fn trajectory_circle_fit_matches_prediction() {
        let m = p(2.0, 1.0, -2.0);
        let s = make_e0_state(&m, 0.4, 0.9, 0.3).unwrap();
        let g = predict_geometry(&m, &s).unwrap();
        let tr = integrate(&m, &s, g.period_pred.abs(), 1e-10).unwrap();
        let f = fit_circle(&tr).unwrap();
        assert!((f.center[0] - g.center[0]).abs() < 1e-6);
        assert!((f.center[1] - g.center[1]).abs() < 1e-6);
        assert!((f.radius_r - g.radius_r).abs() < 1e-6);
        assert!(f.fit_residual < 1e-6);
    }

    #[test]
    fn negative_energy_orbit_is_not_circular() {
        let m = p(2.0, 1.0, 1.0);
        let s = PhaseState::new(0.0, 1.0, 0.0, 0.0, 0.8).unwrap();
        let tr = integrate(&m, &s, 30.0, 1e-10).unwrap();
        let f = fit_circle(&tr).unwrap();
        assert!(f.fit_residual > 1e-3, "{}", f.fit_residual);
    }

    #[test]
    fn constraint_residual_examples() {
        let m = p(2.0, 1.0, 2.0);
        let s = PhaseState::new(0.0, 2.0, 0.0, 0.0, 0.4).unwrap();
        let tr = integrate(&m, &s, 3.0 * PI, 1e-10).unwrap();
        let r = constraint_residuals(&m, &tr).unwrap();
        assert!(r.radial_max <= 1e-7 && r.tangential_max <= 1e-7, "{r:?}");

        let s = PhaseState::new(0.0, 1.0, 0.0, 0.0, 0.8).unwrap();
        let tr = integrate(&m, &s, 30.0, 1e-10).unwrap();
        let c = constants_of_motion(&m, &s);
        let r = constraint_residuals_with(&m, &tr, c.l_z, c.j);
        assert!(r.radial_max > 1e-2);
        assert!(matches!(constraint_residuals(&m, &tr), Err(GeometryError::NotZeroEnergy(_))));
    }

    #[test]
    fn stability_examples() {
        let m = p(2.0, 1.0, 0.0);
        assert!(stability_determinant(&m, 1.0, 0.0).unwrap().det_m.abs() <= 1e-15);
        let d = stability_determinant(&m, 2.0, 0.0).unwrap().det_m;
        assert!((d - 12.0 / 125.0).abs() <= 1e-15);
        assert!(stability_determinant(&m, 0.5, 0.0).unwrap().det_m < 0.0);
        assert!(matches!(stability_determinant(&m, 1.0, -1.0), Err(GeometryError::Forbidden { .. })));
        assert!(stability_determinant(&m, 0.0, 0.0).is_err());
    }

    #[test]
    fn centered_orbit_examples() {
        let m = p(2.0, 1.0, 0.0);
        for a in [0.3, 2.0, 5.0] {
            assert_eq!(centered_orbit_determinant(&m, a).unwrap(), 0.0);
        }
        for &q in &[-3.0, 0.5, 2.0] {
            let m = p(2.0, 1.0, q);
            for a in [0.2, 1.0, 3.0] {
                for br in centered_orbit_branches(&m, a).unwrap() {
                    assert_eq!(br.det_m.signum(), (br.omega * q).signum());
                    let r2 = a * a;
                    let resid = br.omega * br.omega * a
                        - m.force_factor_r2(r2) * a
                        - m.field_b_r2(r2) * br.omega * a;
                    assert!(resid.abs() < 1e-12);
                }
            }
        }
        let m = p(2.0, 1.0, 2.0);
        let d1 = centered_orbit_determinant(&m, 1e-3).unwrap();
        let d2 = centered_orbit_determinant(&m, 2e-3).unwrap();
        assert!((d2 / d1 - 4.0).abs() < 1e-2);
    }

    #[test]
    fn ellipse_fit_exact_points() {
        let (a, b, th, cx, cy) = (3.0, 1.2, 0.7f64, -1.0, 2.0);
        let pts: Vec<[f64; 2]> = (0..80)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / 80.0;
                let (u, v) = (a * t.cos(), b * t.sin());
                [cx + u * th.cos() - v * th.sin(), cy + u * th.sin() + v * th.cos()]
            })
            .collect();
        let f = fit_ellipse_points(&pts).unwrap();
        assert!((f.semi_major - a).abs() < 1e-10 && (f.semi_minor - b).abs() < 1e-10);
        assert!((f.center[0] - cx).abs() < 1e-10 && (f.center[1] - cy).abs() < 1e-10);
        assert!((f.axis_angle.unwrap() - th).abs() < 1e-10);
        let e = (1.0 - (b / a) * (b / a)).sqrt();
        assert!((f.eccentricity - e).abs() < 1e-10);
    }

    #[test]
    fn hodograph_of_offset_orbit() {
        let m = p(2.0, 1.0, 2.0);
        let s = PhaseState::new(0.0, 2.0, 0.0, 0.0, 0.4).unwrap();
        let g = predict_geometry(&m, &s).unwrap();
        let tr = integrate(&m, &s, g.period_pred, 1e-11).unwrap();
        let h = hodograph_analysis(&tr, &g).unwrap();
        assert!((h.predicted_eccentricity - 2.0 / 3.0).abs() < 1e-12);
        assert!((h.fit.eccentricity - 2.0 / 3.0).abs() < 1e-3, "{h:?}");
        assert!(h.axis_deviation.unwrap() < 1e-3);
    }

    #[test]
    fn hodograph_of_centered_orbit_is_circular() {
        let m = p(2.0, 1.0, 0.0);
        let s = make_e0_state(&m, 1.0, 0.0, FRAC_PI_2).unwrap();
        let g = predict_geometry(&m, &s).unwrap();
        let tr = integrate(&m, &s, 2.0 * PI, 1e-13).unwrap();
        let h = hodograph_analysis(&tr, &g).unwrap();
        assert!(h.fit.eccentricity <= 1e-6, "{}", h.fit.eccentricity);
        assert!(h.fit.axis_angle.is_none() && h.axis_deviation.is_none());
    }

    #[test]
    fn min_radius_shrinks_with_charge() {
        let mut last = f64::INFINITY;
        for q in [0.0, 2.0, 8.0, 32.0] {
            let r = min_orbit_radius(&p(2.0, 1.0, q));
            assert!(r > 0.0 && r < last);
            last = r;
        }
        assert!((min_orbit_radius(&p(2.0, 1.0, 0.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn line_fit_recovers_direction() {
        let pts: Vec<[f64; 2]> = (0..10).map(|i| [1.0 + 0.6 * i as f64, -2.0 + 0.8 * i as f64 + if i % 2 == 0 { 1e-4 } else { -1e-4 }]).collect();
        let l = fit_line(&pts).unwrap();
        assert!((l.direction[0].abs() - 0.6).abs() < 1e-4 && (l.direction[1].abs() - 0.8).abs() < 1e-4);
        assert!(l.max_deviation > 3e-5 && l.max_deviation < 1e-4);
        assert!(fit_line(&pts[..1]).is_err());
    }
}
