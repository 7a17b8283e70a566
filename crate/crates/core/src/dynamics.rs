//! Equations of motion, trajectories with dense output, first-return periods and
//! slow ramps of the monopole strength.

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{self, GeometryError, OrbitGeometry};
use crate::model::{hamiltonian, ModelError, ModelParams, PhaseState};
use crate::ode::{find_root, DenseSegment, Dopri5, OdeError, State, StepperConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("integrator failed: {0}")]
    Integrator(#[from] OdeError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("orbit is unbound: r = {r} exceeded the escape radius at t = {t}")]
    Unbound { t: f64, r: f64 },
    #[error("no return to the initial state within a time budget of {budget}")]
    NoReturn { budget: f64 },
    #[error("geometry fit failed: {0}")]
    Geometry(#[from] GeometryError),
}

/// `(dx/dt, dy/dt, dPx/dt, dPy/dt)` under the twisted bracket `{Px, Py} = B`.
pub fn derivative(params: &ModelParams, s: &PhaseState) -> [f64; 4] {
    rhs(params, &s.coords())
}

#[inline]
fn rhs(params: &ModelParams, y: &State) -> State {
    let r2 = y[0] * y[0] + y[1] * y[1];
    let f = params.force_factor_r2(r2);
    let b = params.field_b_r2(r2);
    [y[2], y[3], b * y[3] - f * y[0], -b * y[2] - f * y[1]]
}

fn check_tol(tol: f64) -> Result<(), DynamicsError> {
    if !(1e-14..=1e-3).contains(&tol) {
        return Err(DynamicsError::InvalidArgument(format!(
            "tolerance must lie in [1e-14, 1e-3], got {tol}"
        )));
    }
    Ok(())
}

/// Time-ordered samples (one per accepted step) plus the step interpolants.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: ModelParams,
    pub samples: Vec<PhaseState>,
    pub tol: f64,
    pub energy_drift: f64,
    segments: Vec<DenseSegment>,
}

impl Trajectory {
    fn from_segments(params: ModelParams, tol: f64, segments: Vec<DenseSegment>) -> Self {
        let mut samples = Vec::with_capacity(segments.len() + 1);
        samples.push(PhaseState::from_coords(segments[0].t0, segments[0].start()));
        for seg in &segments {
            samples.push(PhaseState::from_coords(seg.t1(), seg.end()));
        }
        let e0 = hamiltonian(&params, &samples[0]);
        let energy_drift =
            samples.iter().map(|s| (hamiltonian(&params, s) - e0).abs()).fold(0.0, f64::max);
        Self { params, samples, tol, energy_drift, segments }
    }

    pub fn t_start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn t_end(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    pub fn first(&self) -> &PhaseState {
        &self.samples[0]
    }

    pub fn last(&self) -> &PhaseState {
        &self.samples[self.samples.len() - 1]
    }

    pub fn segments(&self) -> &[DenseSegment] {
        &self.segments
    }

    /// Dense-output state at time `t`, clamped to the covered interval.
    pub fn state_at(&self, t: f64) -> PhaseState {
        let t = t.clamp(self.t_start(), self.t_end());
        let idx = self.segments.partition_point(|s| s.t1() < t).min(self.segments.len() - 1);
        PhaseState::from_coords(t, self.segments[idx].eval(t))
    }

    /// `n` states evenly spaced in time over the whole trajectory (endpoints included).
    pub fn resample(&self, n: usize) -> Vec<PhaseState> {
        let n = n.max(2);
        let (a, b) = (self.t_start(), self.t_end());
        (0..n).map(|i| self.state_at(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
    }

    /// Sub-trajectory restricted to the steps overlapping `[t0, t1]`.
    pub fn window(&self, t0: f64, t1: f64) -> Option<Trajectory> {
        let segs: Vec<DenseSegment> =
            self.segments.iter().filter(|s| s.t1() > t0 && s.t0 < t1).copied().collect();
        if segs.is_empty() {
            return None;
        }
        Some(Self::from_segments(self.params, self.tol, segs))
    }
}

/// Adaptive integration from `s0.t` to `s0.t + t_max`.
pub fn integrate(
    params: &ModelParams,
    s0: &PhaseState,
    t_max: f64,
    tol: f64,
) -> Result<Trajectory, DynamicsError> {
    params.validate()?;
    check_tol(tol)?;
    if !s0.is_finite() {
        return Err(ModelError::NonFiniteState.into());
    }
    if !(t_max.is_finite() && t_max > 0.0) {
        return Err(DynamicsError::InvalidArgument(format!("t_max must be > 0, got {t_max}")));
    }
    let p = *params;
    let t_end = s0.t + t_max;
    let mut stepper = Dopri5::new(move |_t, y: &State| rhs(&p, y), s0.t, s0.coords(), StepperConfig::with_tol(tol))?;
    let mut segments = Vec::new();
    while stepper.t() < t_end {
        segments.push(stepper.step(t_end)?);
    }
    Ok(Trajectory::from_segments(*params, tol, segments))
}

#[derive(Debug, Clone, Copy)]
pub struct PeriodOptions {
    /// Escape radius in units of `r_cal`.
    pub escape_radius: f64,
    /// Time budget; `None` selects the default described on [`measure_period_with`].
    pub budget: Option<f64>,
    /// Relative phase-space distance accepted as a return.
    pub return_tol: f64,
}

impl Default for PeriodOptions {
    fn default() -> Self {
        Self { escape_radius: 1e3, budget: None, return_tol: 1e-6 }
    }
}

/// First return time to `s0` in phase space with default options.
pub fn measure_period(params: &ModelParams, s0: &PhaseState, tol: f64) -> Result<f64, DynamicsError> {
    measure_period_with(params, s0, tol, &PeriodOptions::default())
}

/// First return time to `s0` in phase space.
///
/// Candidate returns are upward zero crossings of `(r(t) - r0) . P0`, located on the dense
/// output. A candidate is accepted when position and momentum are both within
/// `return_tol` (relative) of the initial state. The default budget is `1e4` times the
/// zero-energy period formula when `|H|` is negligible, and `1e4 R^2 / |L_z|` otherwise.
pub fn measure_period_with(
    params: &ModelParams,
    s0: &PhaseState,
    tol: f64,
    opts: &PeriodOptions,
) -> Result<f64, DynamicsError> {
    params.validate()?;
    check_tol(tol)?;
    if !s0.is_finite() {
        return Err(ModelError::NonFiniteState.into());
    }
    let r_cal = params.r_cal;
    let l_z = s0.mechanical_angular_momentum() + 0.5 * params.gauge_g_r2(s0.r2());
    let e = hamiltonian(params, s0);
    let budget = match opts.budget {
        Some(b) => b,
        None => {
            let v = params.potential_r2(s0.r2()).abs();
            let scale = if l_z.abs() > 1e-12 {
                if e.abs() <= 1e-9 * v {
                    geometry::period_formula(params, l_z).abs()
                } else {
                    params.r_cal2() / l_z.abs()
                }
            } else {
                params.r_cal2() / (2.0 * params.alpha).sqrt() * params.r_cal2()
            };
            1e4 * scale
        }
    };
    let escape = opts.escape_radius * r_cal;
    let pos_scale = s0.r().max(r_cal);
    let mom_scale = s0.p2().sqrt().max((2.0 * params.alpha).sqrt() / (params.r_cal2() + s0.r2()));
    let (x0, y0, p0x, p0y) = (s0.x, s0.y, s0.px, s0.py);
    let g = |y: &State| (y[0] - x0) * p0x + (y[1] - y0) * p0y;

    let p = *params;
    let t_end = s0.t + budget;
    let mut stepper = Dopri5::new(move |_t, y: &State| rhs(&p, y), s0.t, s0.coords(), StepperConfig::with_tol(tol))?;
    let mut armed = false;
    while stepper.t() < t_end {
        let seg = stepper.step(t_end)?;
        let y1 = seg.end();
        let r1 = y1[0].hypot(y1[1]);
        if r1 > escape {
            return Err(DynamicsError::Unbound { t: seg.t1(), r: r1 });
        }
        let (ga, gb) = (g(&seg.start()), g(&y1));
        if !armed {
            if gb < 0.0 {
                armed = true;
            }
            continue;
        }
        if ga < 0.0 && gb >= 0.0 {
            let tc = find_root(|t| g(&seg.eval(t)), seg.t0, seg.t1(), 1e-15 * seg.t1().abs().max(1.0));
            let yc = seg.eval(tc);
            let dpos = (yc[0] - x0).hypot(yc[1] - y0) / pos_scale;
            let dmom = (yc[2] - p0x).hypot(yc[3] - p0y) / mom_scale;
            if dpos.max(dmom) <= opts.return_tol {
                return Ok(tc - s0.t);
            }
        }
        if gb < 0.0 {
            armed = true;
        }
    }
    Err(DynamicsError::NoReturn { budget })
}

#[derive(Debug, Clone, Serialize)]
pub struct QSweepRecord {
    pub q: f64,
    pub t: f64,
    pub geometry: OrbitGeometry,
}

/// Sign change of the canonical angular momentum during a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchFlip {
    pub t: f64,
    pub q: f64,
    pub l_z_before: f64,
    pub l_z_after: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub tol: f64,
    /// Snapshot cadence in orbital periods.
    pub snapshot_every: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { tol: 1e-10, snapshot_every: 1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepOutcome {
    pub records: Vec<QSweepRecord>,
    /// Set when the orbital sense reversed; the sweep stops there.
    pub branch_flip: Option<BranchFlip>,
    /// Largest change of `Q` per orbit relative to `|Q| + 1`.
    pub max_dq_per_orbit: f64,
    pub adiabatic: bool,
}

/// Monopole strength ramps linearly from `q_from` to `q_to` at `|rate|`; the force law
/// uses the instantaneous value.
pub fn sweep_q(
    params: &ModelParams,
    s0: &PhaseState,
    q_from: f64,
    q_to: f64,
    rate: f64,
) -> Result<SweepOutcome, DynamicsError> {
    sweep_q_with(params, s0, q_from, q_to, rate, &SweepOptions::default())
}

/// Windows of one predicted period (from the instantaneous `Q` and `L_z`) are fitted
/// with a circle; every `snapshot_every`-th window is recorded.
pub fn sweep_q_with(
    params: &ModelParams,
    s0: &PhaseState,
    q_from: f64,
    q_to: f64,
    rate: f64,
    opts: &SweepOptions,
) -> Result<SweepOutcome, DynamicsError> {
    params.validate()?;
    check_tol(opts.tol)?;
    if !(q_from.is_finite() && q_to.is_finite() && rate.is_finite() && rate != 0.0) {
        return Err(DynamicsError::InvalidArgument("sweep endpoints and rate must be finite, rate nonzero".into()));
    }
    let speed = rate.abs() * (q_to - q_from).signum();
    let duration = if q_to == q_from { 0.0 } else { (q_to - q_from).abs() / rate.abs() };
    let t0 = s0.t;
    let q_at = move |t: f64| {
        if duration == 0.0 {
            q_from
        } else {
            q_from + speed * (t - t0).clamp(0.0, duration)
        }
    };
    let base = params.with_q(q_from);
    let e0 = hamiltonian(&base, s0);
    if e0.abs() > 1e-9 * base.potential_r2(s0.r2()).abs() {
        return Err(GeometryError::NotZeroEnergy(e0).into());
    }
    let lz = |q: f64, y: &State| {
        let r2 = y[0] * y[0] + y[1] * y[1];
        y[0] * y[3] - y[1] * y[2] + 0.5 * q / (r2 + params.r_cal2())
    };

    let p = *params;
    let f = move |t: f64, y: &State| rhs(&p.with_q(q_at(t)), y);
    let mut stepper = Dopri5::new(f, t0, s0.coords(), StepperConfig::with_tol(opts.tol))?;
    let t_final = t0 + duration;
    let mut records = Vec::new();
    let mut max_dq: f64 = 0.0;
    let mut window_index = 0usize;
    let mut branch_flip = None;
    let every = opts.snapshot_every.max(1);

    loop {
        let ts = stepper.t();
        let ys = stepper.y();
        let q_now = q_at(ts);
        let l_now = lz(q_now, &ys);
        if l_now == 0.0 {
            return Err(GeometryError::ZeroAngularMomentum(l_now).into());
        }
        let period = geometry::period_formula(&params.with_q(q_now), l_now).abs();
        let t_win = ts + period;
        max_dq = max_dq.max(rate.abs() * period / (q_now.abs() + 1.0));

        let mut segs = Vec::new();
        while stepper.t() < t_win {
            let seg = stepper.step(t_win)?;
            let (a, b) = (seg.start(), seg.end());
            let (la, lb) = (lz(q_at(seg.t0), &a), lz(q_at(seg.t1()), &b));
            segs.push(seg);
            if la.signum() != lb.signum() {
                let tc = find_root(|t| lz(q_at(t), &seg.eval(t)), seg.t0, seg.t1(), 1e-14);
                branch_flip = Some(BranchFlip { t: tc, q: q_at(tc), l_z_before: la, l_z_after: lb });
                break;
            }
        }
        if branch_flip.is_some() {
            break;
        }
        if window_index.is_multiple_of(every) {
            let q_mid = q_at(0.5 * (ts + t_win));
            let traj = Trajectory::from_segments(params.with_q(q_mid), opts.tol, segs);
            let geom = geometry::fit_circle(&traj)?;
            records.push(QSweepRecord { q: q_mid, t: 0.5 * (ts + t_win), geometry: geom });
        }
        window_index += 1;
        if stepper.t() >= t_final {
            break;
        }
    }
    let adiabatic = max_dq <= 0.01;
    Ok(SweepOutcome { records, branch_flip, max_dq_per_orbit: max_dq, adiabatic })
}
