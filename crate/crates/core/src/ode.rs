//! Dormand–Prince 5(4) stepper with its native continuous extension.
//!
//! The stepper works on fixed-size states and hands out one [`DenseSegment`] per
//! accepted step, so callers can sample, root-find or refit without re-integrating.

use thiserror::Error;

pub const DIM: usize = 4;
pub type State = [f64; DIM];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Continuous extension over one accepted step `[t0, t0 + h]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseSegment {
    pub t0: f64,
    pub h: f64,
    rc: [State; 5],
}

impl DenseSegment {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn start(&self) -> State {
        self.rc[0]
    }

    pub fn end(&self) -> State {
        let mut y = [0.0; DIM];
        for (i, v) in y.iter_mut().enumerate() {
            *v = self.rc[0][i] + self.rc[1][i];
        }
        y
    }

    /// Interpolated state at `t`; accurate to fourth order inside the step.
    pub fn eval(&self, t: f64) -> State {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let rc = &self.rc;
        let mut y = [0.0; DIM];
        for (i, v) in y.iter_mut().enumerate() {
            *v = rc[0][i] + th * (rc[1][i] + th1 * (rc[2][i] + th * (rc[3][i] + th1 * rc[4][i])));
        }
        y
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepperConfig {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl StepperConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self { rtol: tol, atol: tol, h_init: None, h_max: f64::INFINITY, max_steps: 50_000_000 }
    }
}

/// Adaptive integrator for `y' = f(t, y)`. Call [`Dopri5::step`] until done.
pub struct Dopri5<F> {
    f: F,
    cfg: StepperConfig,
    t: f64,
    y: State,
    k1: State,
    h: f64,
    steps: usize,
    rejected: usize,
}

impl<F: FnMut(f64, &State) -> State> Dopri5<F> {
    pub fn new(mut f: F, t0: f64, y0: State, cfg: StepperConfig) -> Result<Self, OdeError> {
        if !y0.iter().all(|v| v.is_finite()) {
            return Err(OdeError::NonFinite { t: t0 });
        }
        let k1 = f(t0, &y0);
        let mut s = Self { f, cfg, t: t0, y: y0, k1, h: 0.0, steps: 0, rejected: 0 };
        s.h = match cfg.h_init {
            Some(h) => h,
            None => s.initial_step(),
        };
        Ok(s)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> State {
        self.y
    }

    pub fn accepted_steps(&self) -> usize {
        self.steps
    }

    pub fn rejected_steps(&self) -> usize {
        self.rejected
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.cfg.atol + self.cfg.rtol * a.abs().max(b.abs())
    }

    // Hairer–Wanner starting step heuristic.
    fn initial_step(&mut self) -> f64 {
        let (y0, f0) = (self.y, self.k1);
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..DIM {
            let sc = self.scale(y0[i], y0[i]);
            d0 += (y0[i] / sc).powi(2);
            d1 += (f0[i] / sc).powi(2);
        }
        d0 = (d0 / DIM as f64).sqrt();
        d1 = (d1 / DIM as f64).sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let mut y1 = [0.0; DIM];
        for i in 0..DIM {
            y1[i] = y0[i] + h0 * f0[i];
        }
        let f1 = (self.f)(self.t + h0, &y1);
        let mut d2 = 0.0;
        for i in 0..DIM {
            let sc = self.scale(y0[i], y0[i]);
            d2 += ((f1[i] - f0[i]) / sc).powi(2);
        }
        d2 = (d2 / DIM as f64).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(self.cfg.h_max)
    }

    /// Take one accepted step, never passing `t_stop`.
    pub fn step(&mut self, t_stop: f64) -> Result<DenseSegment, OdeError> {
        let dir = if t_stop >= self.t { 1.0 } else { -1.0 };
        loop {
            if self.steps + self.rejected >= self.cfg.max_steps {
                return Err(OdeError::TooManySteps(self.cfg.max_steps));
            }
            let mut h = self.h.abs().min(self.cfg.h_max) * dir;
            let remaining = t_stop - self.t;
            let last = h.abs() >= remaining.abs();
            if last {
                h = remaining;
            }
            let floor = 16.0 * f64::EPSILON * self.t.abs().max(1e-300);
            if h.abs() <= floor && !last {
                return Err(OdeError::StepUnderflow { t: self.t, h });
            }
            let (y1, k7, rc5, err) = self.attempt(h);
            if !y1.iter().all(|v| v.is_finite()) || !err.is_finite() {
                if h.abs() <= floor {
                    return Err(OdeError::NonFinite { t: self.t });
                }
                self.h = 0.25 * h.abs();
                self.rejected += 1;
                continue;
            }
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
            if err <= 1.0 {
                let y0 = self.y;
                let mut rc = [[0.0; DIM]; 5];
                for i in 0..DIM {
                    let dy = y1[i] - y0[i];
                    rc[0][i] = y0[i];
                    rc[1][i] = dy;
                    rc[2][i] = h * self.k1[i] - dy;
                    rc[3][i] = dy - h * k7[i] - rc[2][i];
                    rc[4][i] = rc5[i];
                }
                let seg = DenseSegment { t0: self.t, h, rc };
                self.t = if last { t_stop } else { self.t + h };
                self.y = y1;
                self.k1 = k7;
                self.steps += 1;
                if !last || fac < 1.0 {
                    self.h = h.abs() * fac;
                }
                return Ok(seg);
            }
            self.rejected += 1;
            self.h = h.abs() * fac.min(1.0);
            if self.h <= floor {
                return Err(OdeError::StepUnderflow { t: self.t, h: self.h });
            }
        }
    }

    fn attempt(&mut self, h: f64) -> (State, State, State, f64) {
        let t = self.t;
        let y = self.y;
        let k1 = self.k1;
        let mut yt = [0.0; DIM];

        for i in 0..DIM {
            yt[i] = y[i] + h * A21 * k1[i];
        }
        let k2 = (self.f)(t + C2 * h, &yt);
        for i in 0..DIM {
            yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        let k3 = (self.f)(t + C3 * h, &yt);
        for i in 0..DIM {
            yt[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        let k4 = (self.f)(t + C4 * h, &yt);
        for i in 0..DIM {
            yt[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        let k5 = (self.f)(t + C5 * h, &yt);
        for i in 0..DIM {
            yt[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let k6 = (self.f)(t + h, &yt);
        let mut y1 = [0.0; DIM];
        for i in 0..DIM {
            y1[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        let k7 = (self.f)(t + h, &y1);

        let mut err = 0.0;
        let mut rc5 = [0.0; DIM];
        for i in 0..DIM {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = self.scale(y[i], y1[i]);
            err += (e / sc).powi(2);
            rc5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
        (y1, k7, rc5, (err / DIM as f64).sqrt())
    }
}

/// Root of `g` on a sign-changing bracket `[a, b]` (Illinois regula falsi).
pub fn find_root<G: FnMut(f64) -> f64>(mut g: G, mut a: f64, mut b: f64, xtol: f64) -> f64 {
    let mut fa = g(a);
    let mut fb = g(b);
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let c = (a * fb - b * fa) / (fb - fa);
        let c = if c.is_finite() && c > a.min(b) && c < a.max(b) { c } else { 0.5 * (a + b) };
        let fc = g(c);
        if fc == 0.0 || (b - a).abs() < xtol {
            return c;
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
        if (b - a).abs() < xtol {
            break;
        }
    }
    (a * fb - b * fa) / (fb - fa)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(_t: f64, y: &State) -> State {
        [y[1], -y[0], y[3], -y[2]]
    }

    #[test]
    fn harmonic_oscillator_accuracy() {
        let y0 = [1.0, 0.0, 0.0, 2.0];
        let mut s = Dopri5::new(oscillator, 0.0, y0, StepperConfig::with_tol(1e-10)).unwrap();
        let tf = 10.0;
        while s.t() < tf {
            s.step(tf).unwrap();
        }
        let y = s.y();
        assert!((y[0] - tf.cos()).abs() < 1e-8);
        assert!((y[2] - 2.0 * tf.sin()).abs() < 1e-8);
        assert_eq!(s.t(), tf);
    }

    #[test]
    fn dense_output_matches_solution_inside_steps() {
        let y0 = [1.0, 0.0, 0.0, 1.0];
        let mut s = Dopri5::new(oscillator, 0.0, y0, StepperConfig::with_tol(1e-9)).unwrap();
        let mut worst: f64 = 0.0;
        while s.t() < 6.0 {
            let seg = s.step(6.0).unwrap();
            for k in 0..=10 {
                let t = seg.t0 + seg.h * k as f64 / 10.0;
                let y = seg.eval(t);
                worst = worst.max((y[0] - t.cos()).abs()).max((y[2] - t.sin()).abs());
            }
            assert_eq!(seg.eval(seg.t0), seg.start());
            let e = seg.eval(seg.t1());
            for i in 0..DIM {
                assert!((e[i] - seg.end()[i]).abs() < 1e-14);
            }
        }
        assert!(worst < 1e-7, "{worst}");
    }

    #[test]
    fn fifth_order_convergence() {
        // Halving tolerance by 2^5 should roughly double the step count.
        let run = |tol: f64| {
            let mut s = Dopri5::new(oscillator, 0.0, [1.0, 0.0, 0.0, 1.0], StepperConfig::with_tol(tol)).unwrap();
            while s.t() < 20.0 {
                s.step(20.0).unwrap();
            }
            s.accepted_steps() as f64
        };
        let ratio = run(1e-11) / run(1e-11 * 32.0);
        assert!(ratio > 1.6 && ratio < 2.6, "{ratio}");
    }

    #[test]
    fn backward_integration() {
        let mut s = Dopri5::new(oscillator, 0.0, [1.0, 0.0, 0.0, 1.0], StepperConfig::with_tol(1e-10)).unwrap();
        while s.t() > -3.0 {
            s.step(-3.0).unwrap();
        }
        assert!((s.y()[0] - 3f64.cos()).abs() < 1e-8);
        assert!((s.y()[2] + 3f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn blowup_reports_error() {
        let f = |_t: f64, y: &State| [y[0] * y[0], 0.0, 0.0, 0.0];
        let mut s = Dopri5::new(f, 0.0, [1.0, 0.0, 0.0, 0.0], StepperConfig::with_tol(1e-8)).unwrap();
        let mut res = Ok(());
        while s.t() < 2.0 {
            if let Err(e) = s.step(2.0) {
                res = Err(e);
                break;
            }
        }
        assert!(res.is_err());
    }

    #[test]
    fn root_finder() {
        let r = find_root(|x| x * x - 2.0, 0.0, 3.0, 1e-15);
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
        let r = find_root(|x: f64| x.cos(), 0.0, 3.0, 1e-15);
        assert!((r - std::f64::consts::FRAC_PI_2).abs() < 1e-13);
    }
}
