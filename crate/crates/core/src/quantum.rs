//! Radial quantum problem in a fixed angular sector and the zero-energy modes.
//!
//! In sector `m` the radial operator is
//!
//! ```text
//! H_m = -(1/(2r)) d/dr (r d/dr) + (m + a(r))^2 / (2 r^2) + V(r),
//! a(r) = -Q r^2 / (2 R^2 (r^2 + R^2))
//! ```
//!
//! with the Dirac string at infinity, so `a(0) = 0` and `a(inf) = -Q / (2 R^2)`, the
//! monopole charge. On a logarithmic grid `xi = ln r` the eigenproblem becomes the
//! symmetric pencil `(-1/2 d^2/dxi^2 + W) psi = E r^2 psi` with
//! `W = (m + a)^2 / 2 + r^2 V`, which is discretized with a banded central stencil.
//! Eigenvalues come from Sturm-count bisection on `A - E rho`, eigenvectors from
//! inverse iteration.

use serde::Serialize;
use thiserror::Error;

use crate::model::{ModelError, ModelParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("level I must be >= 1, got {0}")]
    InvalidLevel(i64),
    #[error("|M| = {m_charge} exceeds 2I = {max} (alpha would not be positive)")]
    ChargeOutOfRange { m_charge: i64, max: i64 },
    #[error("counting requires |M| = 2I (got M = {m_charge}, I = {i_level})")]
    UnsupportedCharge { m_charge: i64, i_level: i64 },
    #[error("monopole strength q = {q} does not match M = {m_charge} (expected q = {expected})")]
    InconsistentCharge { q: f64, m_charge: i64, expected: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("eigensolver did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("tail test is inconclusive in sector m = {m} (decay exponent {exponent:.3}); enlarge r_max")]
    AmbiguousNormalizability { m: i64, exponent: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GridScheme {
    /// Nodes uniform in `ln r`.
    Log,
    /// Nodes `r_i = i h`, `i = 1..n`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialGrid {
    pub nodes: Vec<f64>,
    pub scheme: GridScheme,
    pub r_min: f64,
    pub r_max: f64,
    /// Node spacing in the grid coordinate (`ln r` or `r`).
    pub step: f64,
}

pub const MIN_GRID_NODES: usize = 64;

impl RadialGrid {
    pub fn log(r_min: f64, r_max: f64, n: usize) -> Result<Self, QuantumError> {
        if !(r_min.is_finite() && r_min > 0.0 && r_max.is_finite() && r_max > r_min) {
            return Err(QuantumError::InvalidGrid(format!("need 0 < r_min < r_max, got [{r_min}, {r_max}]")));
        }
        if n < MIN_GRID_NODES {
            return Err(QuantumError::InvalidGrid(format!("need at least {MIN_GRID_NODES} nodes, got {n}")));
        }
        let (a, b) = (r_min.ln(), r_max.ln());
        let step = (b - a) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| (a + step * i as f64).exp()).collect();
        nodes[0] = r_min;
        nodes[n - 1] = r_max;
        Ok(Self { nodes, scheme: GridScheme::Log, r_min, r_max, step })
    }

    /// Interior nodes of `[0, r_max]` with spacing `r_max / (n + 1)`.
    pub fn uniform(r_max: f64, n: usize) -> Result<Self, QuantumError> {
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(QuantumError::InvalidGrid(format!("r_max must be > 0, got {r_max}")));
        }
        if n < MIN_GRID_NODES {
            return Err(QuantumError::InvalidGrid(format!("need at least {MIN_GRID_NODES} nodes, got {n}")));
        }
        let step = r_max / (n + 1) as f64;
        let nodes: Vec<f64> = (1..=n).map(|i| step * i as f64).collect();
        Ok(Self { r_min: nodes[0], r_max: nodes[n - 1], nodes, scheme: GridScheme::Uniform, step })
    }

    /// Log grid over `[1e-4 R, 1e4 R]` with 4096 nodes.
    pub fn default_for(params: &ModelParams) -> Self {
        Self::log(1e-4 * params.r_cal, 1e4 * params.r_cal, 4096).expect("default grid is valid")
    }

    /// Log grid over `[1e-7 R, 1e4 R]` with 4096 nodes. The deeper inner edge keeps the
    /// truncation of `|m| = 1` and reflecting sectors below the zero tolerance.
    pub fn counting_default(params: &ModelParams) -> Self {
        Self::log(1e-7 * params.r_cal, 1e4 * params.r_cal, 4096).expect("default grid is valid")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StencilOrder {
    Second,
    Fourth,
}

impl StencilOrder {
    pub fn order(self) -> i32 {
        match self {
            Self::Second => 2,
            Self::Fourth => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Gauge {
    /// `a(r) = -Q r^2 / (2 R^2 (r^2 + R^2))`, regular at the origin.
    StringAtInfinity,
    /// `a(r) = Q / (2 (r^2 + R^2))`; sector labels shift by the monopole charge.
    StringAtOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InnerBoundary {
    /// Mirror about half a step below the first node (flat wavefunction at the origin).
    Reflecting,
    Dirichlet,
}

/// Symmetric banded pencil `A psi = E rho psi` for one sector.
#[derive(Debug, Clone, Serialize)]
pub struct RadialOperator {
    pub grid: RadialGrid,
    pub m: i64,
    pub params: ModelParams,
    pub gauge: Gauge,
    pub order: StencilOrder,
    pub inner: InnerBoundary,
    /// Main diagonal of `A`.
    pub diag: Vec<f64>,
    /// First super-diagonal of `A`.
    pub off1: Vec<f64>,
    /// Second super-diagonal of `A` (zeros for the second-order stencil).
    pub off2: Vec<f64>,
    /// Weight `rho` (`r^2` on the log grid, one on the uniform grid).
    pub weight: Vec<f64>,
    /// Potential part `W` of the diagonal.
    pub potential: Vec<f64>,
    pub gauge_a: Vec<f64>,
}

pub fn gauge_potential(params: &ModelParams, r: f64, gauge: Gauge) -> f64 {
    let r2 = r * r;
    match gauge {
        Gauge::StringAtInfinity => -params.q * r2 / (2.0 * params.r_cal2() * params.denom(r2)),
        Gauge::StringAtOrigin => 0.5 * params.gauge_g_r2(r2),
    }
}

/// Fourth-order operator in the regular gauge.
pub fn build_radial_operator(params: &ModelParams, m: i64, grid: &RadialGrid) -> RadialOperator {
    build_radial_operator_with(params, m, grid, Gauge::StringAtInfinity, StencilOrder::Fourth)
}

pub fn build_radial_operator_with(
    params: &ModelParams,
    m: i64,
    grid: &RadialGrid,
    gauge: Gauge,
    order: StencilOrder,
) -> RadialOperator {
    let n = grid.len();
    let h = grid.step;
    let gauge_a: Vec<f64> = grid.nodes.iter().map(|&r| gauge_potential(params, r, gauge)).collect();
    let (potential, weight): (Vec<f64>, Vec<f64>) = grid
        .nodes
        .iter()
        .zip(&gauge_a)
        .map(|(&r, &a)| {
            let k = m as f64 + a;
            let v = params.potential_r2(r * r);
            match grid.scheme {
                GridScheme::Log => (0.5 * k * k + r * r * v, r * r),
                GridScheme::Uniform => ((k * k - 0.25) / (2.0 * r * r) + v, 1.0),
            }
        })
        .unzip();
    let a0 = gauge_potential(params, 0.0, gauge);
    let inner = if grid.scheme == GridScheme::Log && (m as f64 + a0).abs() < 1e-12 {
        InnerBoundary::Reflecting
    } else {
        InnerBoundary::Dirichlet
    };

    let mut diag = vec![0.0; n];
    let mut off1 = vec![0.0; n];
    let mut off2 = vec![0.0; n];
    let c = -0.5 / (h * h);
    match order {
        StencilOrder::Second => {
            for i in 0..n {
                diag[i] = -2.0 * c;
                off1[i] = if i + 1 < n { c } else { 0.0 };
            }
            if inner == InnerBoundary::Reflecting {
                // ghost psi_{-1} = psi_0
                diag[0] += c;
            }
        }
        StencilOrder::Fourth => {
            let c = c / 12.0;
            for i in 0..n {
                diag[i] = -30.0 * c;
                off1[i] = if i + 1 < n { 16.0 * c } else { 0.0 };
                off2[i] = if i + 2 < n { -c } else { 0.0 };
            }
            if inner == InnerBoundary::Reflecting {
                // ghosts psi_{-1} = psi_0, psi_{-2} = psi_1
                diag[0] += 16.0 * c;
                off1[0] += -c;
            }
        }
    }
    for i in 0..n {
        diag[i] += potential[i];
    }
    RadialOperator { grid: grid.clone(), m, params: *params, gauge, order, inner, diag, off1, off2, weight, potential, gauge_a }
}

impl RadialOperator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `A psi`.
    pub fn apply(&self, psi: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * psi[i];
            if i + 1 < n {
                s += self.off1[i] * psi[i + 1];
            }
            if i >= 1 {
                s += self.off1[i - 1] * psi[i - 1];
            }
            if i + 2 < n {
                s += self.off2[i] * psi[i + 2];
            }
            if i >= 2 {
                s += self.off2[i - 2] * psi[i - 2];
            }
            out[i] = s;
        }
        out
    }

    /// Dense form of `rho^{-1/2} A rho^{-1/2}`, the standard symmetric eigenproblem.
    pub fn symmetric_dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let s: Vec<f64> = self.weight.iter().map(|w| 1.0 / w.sqrt()).collect();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            m[i][i] = self.diag[i] * s[i] * s[i];
            if i + 1 < n {
                let v = self.off1[i] * s[i] * s[i + 1];
                m[i][i + 1] = v;
                m[i + 1][i] = v;
            }
            if i + 2 < n {
                let v = self.off2[i] * s[i] * s[i + 2];
                m[i][i + 2] = v;
                m[i + 2][i] = v;
            }
        }
        m
    }

    /// Number of eigenvalues strictly below `e` (inertia of `A - e rho`).
    pub fn count_below(&self, e: f64) -> usize {
        let n = self.len();
        let tiny = f64::MIN_POSITIVE.sqrt();
        let mut count = 0;
        // D_i and the two sub-diagonal multipliers of the previous row
        let (mut d1, mut d2) = (0.0f64, 0.0f64);
        let mut l_prev1 = 0.0; // L[i-1][i-2]
        for i in 0..n {
            let mut di = self.diag[i] - e * self.weight[i];
            let mut l2 = 0.0;
            let mut l1 = 0.0;
            if i >= 2 {
                l2 = self.off2[i - 2] / d2;
                di -= l2 * l2 * d2;
            }
            if i >= 1 {
                l1 = (self.off1[i - 1] - l2 * l_prev1 * d2) / d1;
                di -= l1 * l1 * d1;
            }
            if di == 0.0 || !di.is_finite() {
                di = -tiny;
            }
            if di < 0.0 {
                count += 1;
            }
            d2 = d1;
            d1 = di;
            l_prev1 = l1;
        }
        count
    }

    /// Lower bound on the spectrum: the kinetic part is positive semidefinite.
    fn spectrum_floor(&self) -> f64 {
        self.potential.iter().zip(&self.weight).map(|(w, r)| w / r).fold(f64::INFINITY, f64::min)
    }

    /// `k`-th smallest eigenvalue (zero based) by bisection on the Sturm count.
    pub fn eigenvalue(&self, k: usize) -> Result<f64, QuantumError> {
        if k >= self.len() {
            return Err(QuantumError::InvalidArgument(format!("only {} eigenvalues exist", self.len())));
        }
        let scale = self.params.energy_scale();
        let mut lo = self.spectrum_floor().min(-scale);
        let mut guard = 0;
        while self.count_below(lo) > k {
            lo = 2.0 * lo - scale;
            guard += 1;
            if guard > 200 {
                return Err(QuantumError::NoConvergence { iterations: guard });
            }
        }
        let mut hi = scale;
        guard = 0;
        while self.count_below(hi) <= k {
            hi = 2.0 * hi + scale;
            guard += 1;
            if guard > 200 {
                return Err(QuantumError::NoConvergence { iterations: guard });
            }
        }
        let abs_tol = 1e-18 * scale;
        const MAX_ITER: usize = 400;
        for _ in 0..MAX_ITER {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= abs_tol.max(4.0 * f64::EPSILON * lo.abs().max(hi.abs())) || mid == lo || mid == hi {
                return Ok(mid);
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Err(QuantumError::NoConvergence { iterations: MAX_ITER })
    }

    /// Eigenvector for an (accurate) eigenvalue `e`, normalised to `sum rho psi^2 = 1`.
    pub fn eigenvector(&self, e: f64) -> Result<Vec<f64>, QuantumError> {
        let n = self.len();
        let lu = BandLu::factor(self, e);
        let mut y: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64 / 13.0).collect();
        normalise(&mut y, &self.weight);
        const ITERS: usize = 8;
        for it in 0..ITERS {
            let rhs: Vec<f64> = y.iter().zip(&self.weight).map(|(v, w)| v * w).collect();
            let mut x = lu.solve(rhs);
            if !x.iter().all(|v| v.is_finite()) {
                return Err(QuantumError::NoConvergence { iterations: it + 1 });
            }
            normalise(&mut x, &self.weight);
            // fix the sign by the largest component
            let imax = (0..n).max_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs())).unwrap_or(0);
            if x[imax] < 0.0 {
                x.iter_mut().for_each(|v| *v = -*v);
            }
            let diff: f64 = x
                .iter()
                .zip(&y)
                .zip(&self.weight)
                .map(|((a, b), w)| w * (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            y = x;
            if diff < 1e-12 && it >= 1 {
                break;
            }
        }
        Ok(y)
    }

    /// `||rho^{-1/2} A psi|| / ||rho^{1/2} psi||` over rows where the whole stencil lies
    /// inside the grid.
    pub fn interior_residual(&self, psi: &[f64], e: f64) -> f64 {
        let n = self.len();
        let ap = self.apply(psi);
        let skip = match self.order {
            StencilOrder::Second => 1,
            StencilOrder::Fourth => 2,
        };
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            let w = self.weight[i];
            den += w * psi[i] * psi[i];
            if i < skip || i + skip >= n {
                continue;
            }
            let r = ap[i] - e * w * psi[i];
            num += r * r / w;
        }
        (num / den).sqrt()
    }

    /// Plane norm `int |psi|^2 r dr` of nodal values.
    pub fn plane_norm(&self, psi: &[f64]) -> f64 {
        let h = self.grid.step;
        match self.grid.scheme {
            GridScheme::Log => psi.iter().zip(&self.weight).map(|(p, w)| p * p * w).sum::<f64>() * h,
            // nodal values are sqrt(r) psi on the uniform grid
            GridScheme::Uniform => psi.iter().map(|p| p * p).sum::<f64>() * h,
        }
    }

    /// Radial wavefunction `psi(r_i)` from the nodal unknowns.
    pub fn wavefunction(&self, nodal: &[f64]) -> Vec<f64> {
        match self.grid.scheme {
            GridScheme::Log => nodal.to_vec(),
            GridScheme::Uniform => nodal.iter().zip(&self.grid.nodes).map(|(u, r)| u / r.sqrt()).collect(),
        }
    }
}

fn normalise(v: &mut [f64], w: &[f64]) {
    let s = v.iter().zip(w).map(|(a, b)| a * a * b).sum::<f64>().sqrt();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

// LU with partial pivoting of the pentadiagonal matrix A - e rho; U has four
// super-diagonals after pivoting.
struct BandLu {
    rows: Vec<[f64; 5]>,
    mult: Vec<[f64; 2]>,
    piv: Vec<usize>,
}

impl BandLu {
    fn factor(op: &RadialOperator, e: f64) -> Self {
        let n = op.len();
        const W: usize = 8;
        // windows: (first column, values)
        let mut win: Vec<(usize, [f64; W])> = (0..n)
            .map(|i| {
                let base = i.saturating_sub(2);
                let mut a = [0.0; W];
                let mut set = |col: usize, v: f64| {
                    if col < n {
                        a[col - base] = v;
                    }
                };
                if i >= 2 {
                    set(i - 2, op.off2[i - 2]);
                }
                if i >= 1 {
                    set(i - 1, op.off1[i - 1]);
                }
                set(i, op.diag[i] - e * op.weight[i]);
                set(i + 1, op.off1[i]);
                set(i + 2, op.off2[i]);
                (base, a)
            })
            .collect();
        let get = |r: &(usize, [f64; W]), col: usize| -> f64 {
            if col >= r.0 && col - r.0 < W {
                r.1[col - r.0]
            } else {
                0.0
            }
        };
        let rebase = |r: &mut (usize, [f64; W]), j: usize| {
            if r.0 < j {
                let sh = j - r.0;
                let mut a = [0.0; W];
                a[..(W - sh)].copy_from_slice(&r.1[sh..]);
                *r = (j, a);
            }
        };
        let scale = op.diag.iter().map(|d| d.abs()).fold(0.0, f64::max).max(1e-300);
        let mut rows = vec![[0.0; 5]; n];
        let mut mult = vec![[0.0; 2]; n];
        let mut piv = vec![0; n];
        for j in 0..n {
            let last = (j + 2).min(n - 1);
            for i in j..=last {
                rebase(&mut win[i], j);
            }
            let p = (j..=last).max_by(|&a, &b| get(&win[a], j).abs().total_cmp(&get(&win[b], j).abs())).unwrap();
            win.swap(j, p);
            piv[j] = p;
            let mut pv = get(&win[j], j);
            if pv.abs() < f64::EPSILON * scale * 1e-3 {
                pv = f64::EPSILON * scale * 1e-3;
                win[j].1[0] = pv;
            }
            for (k, i) in (j + 1..=last).enumerate() {
                let l = get(&win[i], j) / pv;
                mult[j][k] = l;
                if l != 0.0 {
                    let src = win[j].1;
                    for c in 0..5 {
                        win[i].1[c] -= l * src[c];
                    }
                }
                win[i].1[0] = 0.0;
            }
            rows[j].copy_from_slice(&win[j].1[..5]);
        }
        Self { rows, mult, piv }
    }

    fn solve(&self, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for j in 0..n {
            b.swap(j, self.piv[j]);
            for k in 0..2 {
                if j + 1 + k < n {
                    b[j + 1 + k] -= self.mult[j][k] * b[j];
                }
            }
        }
        for j in (0..n).rev() {
            let u = &self.rows[j];
            let mut s = b[j];
            for c in 1..5 {
                if j + c < n {
                    s -= u[c] * b[j + c];
                }
            }
            b[j] = s / u[0];
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Normalizability {
    Normalizable,
    NotNormalizable,
    Ambiguous,
}

/// Tail decay read off the log-slope of `|psi|^2 r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailTest {
    /// `k` in `psi ~ r^{-k}` fitted on `[r_max / 100, r_max / 10]`.
    pub exponent: f64,
    pub verdict: Normalizability,
    /// `k > 1 + delta`, i.e. square integrable with measure `r dr` with margin.
    pub strict_l2: bool,
}

/// Margin `delta` of the tail test.
pub const TAIL_MARGIN: f64 = 0.05;

/// A mode counts as normalizable when its tail decays at least like `1/r`
/// (`k >= 1 - delta`) and as non-normalizable when it does not decay (`k <= delta`).
pub fn tail_test(grid: &RadialGrid, psi: &[f64]) -> TailTest {
    let (lo, hi) = (grid.r_max / 100.0, grid.r_max / 10.0);
    let floor = psi.iter().map(|p| p.abs()).fold(0.0, f64::max) * 1e-300;
    let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&r, &p) in grid.nodes.iter().zip(psi) {
        if r < lo || r > hi {
            continue;
        }
        let x = r.ln();
        let y = (p * p * r + floor).ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        n += 1.0;
    }
    let slope = if n >= 2.0 { (n * sxy - sx * sy) / (n * sxx - sx * sx) } else { f64::NAN };
    let exponent = 0.5 * (1.0 - slope);
    let verdict = if !exponent.is_finite() {
        Normalizability::Ambiguous
    } else if exponent >= 1.0 - TAIL_MARGIN {
        Normalizability::Normalizable
    } else if exponent <= TAIL_MARGIN {
        Normalizability::NotNormalizable
    } else {
        Normalizability::Ambiguous
    };
    TailTest { exponent, verdict, strict_l2: exponent > 1.0 + TAIL_MARGIN }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeResult {
    pub eigenvalue: f64,
    /// `psi` at the grid nodes, normalised to `sum rho psi^2 = 1`.
    pub vector: Vec<f64>,
    pub plane_norm: f64,
    pub normalizable: bool,
    pub tail: TailTest,
    pub criterion: &'static str,
}

pub const NORMALIZABILITY_CRITERION: &str = "tail |psi|^2 r ~ r^(1-2k) fitted on [r_max/100, r_max/10]; normalizable iff k >= 0.95";

/// The `k` lowest eigenpairs of the sector operator.
pub fn solve_modes(op: &RadialOperator, k: usize) -> Result<Vec<ModeResult>, QuantumError> {
    if k == 0 {
        return Err(QuantumError::InvalidArgument("k must be >= 1".into()));
    }
    (0..k.min(op.len()))
        .map(|j| {
            let e = op.eigenvalue(j)?;
            let nodal = op.eigenvector(e)?;
            let vector = op.wavefunction(&nodal);
            let tail = tail_test(&op.grid, &vector);
            Ok(ModeResult {
                eigenvalue: e,
                plane_norm: op.plane_norm(&nodal),
                normalizable: tail.verdict == Normalizability::Normalizable,
                tail,
                vector,
                criterion: NORMALIZABILITY_CRITERION,
            })
        })
        .collect()
}

/// `alpha = 2 R^2 I (I + 1) - R^2 M^2 / 2`, the coupling with a zero mode at level `I`.
pub fn alpha_for_zero_mode(r_cal: f64, i_level: i64, m_charge: i64) -> Result<f64, QuantumError> {
    if !(r_cal.is_finite() && r_cal > 0.0) {
        return Err(ModelError::InvalidLength(r_cal).into());
    }
    if i_level < 1 {
        return Err(QuantumError::InvalidLevel(i_level));
    }
    if m_charge.abs() > 2 * i_level {
        return Err(QuantumError::ChargeOutOfRange { m_charge, max: 2 * i_level });
    }
    let (i, m) = (i_level as f64, m_charge as f64);
    Ok(2.0 * r_cal * r_cal * i * (i + 1.0) - r_cal * r_cal * m * m / 2.0)
}

/// `r^I / (r^2 + R^2)^I`, the uncharged zero mode at level `I`.
pub fn analytic_zero_mode(params: &ModelParams, i_level: i64, r: f64) -> Result<f64, QuantumError> {
    if i_level < 1 {
        return Err(QuantumError::InvalidLevel(i_level));
    }
    if !(r.is_finite() && r >= 0.0) {
        return Err(ModelError::InvalidRadius(r).into());
    }
    Ok((r / params.denom(r * r)).powi(i_level as i32))
}

/// `r^|m| / (r^2 + R^2)^p` with `2p = |m| + |m + M|`, the zero mode of sector `m` in the
/// monopole background of charge `M`; exact when `alpha` matches [`alpha_for_zero_mode`]
/// with `I = p`.
pub fn monopole_zero_mode(r_cal: f64, m: i64, m_charge: i64, r: f64) -> f64 {
    let p = 0.5 * ((m.abs() + (m + m_charge).abs()) as f64);
    r.powi(m.abs() as i32) / (r * r + r_cal * r_cal).powf(p)
}

/// Monopole strength `Q = -2 R^2 M` carrying charge `M`.
pub fn q_for_charge(r_cal: f64, m_charge: i64) -> f64 {
    -2.0 * r_cal * r_cal * m_charge as f64
}

/// Default zero tolerance: `max(50 h^p alpha / R^4, 1e-9 alpha / R^4)` for grid step `h`
/// (in `ln r` or in units of `R`) and stencil order `p`.
pub fn default_zero_tolerance(params: &ModelParams, grid: &RadialGrid, order: StencilOrder) -> f64 {
    let h = match grid.scheme {
        GridScheme::Log => grid.step,
        GridScheme::Uniform => grid.step / params.r_cal,
    };
    let s = params.energy_scale();
    (50.0 * h.powi(order.order()) * s).max(1e-9 * s)
}

#[derive(Debug, Clone, Serialize)]
pub struct SectorResult {
    /// Sector label in the gauge used for the solve.
    pub m: i64,
    pub eigenvalue: f64,
    pub tail_exponent: f64,
    pub verdict: Normalizability,
    pub strict_l2: bool,
    pub counted: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroModeCount {
    pub count: usize,
    pub tol: f64,
    pub sectors: Vec<SectorResult>,
    /// Sectors with `|E| <= tol` whose tail is not normalizable.
    pub excluded: Vec<i64>,
}

/// Admissible sectors `|m - M'/2| <= I` with `M' = Q / (2 R^2)`, in the regular gauge.
pub fn sector_window(params: &ModelParams, i_level: i64) -> (i64, i64) {
    let half = params.q / (4.0 * params.r_cal2());
    let lo = (half - i_level as f64 - 1e-9).ceil() as i64;
    let hi = (half + i_level as f64 + 1e-9).floor() as i64;
    (lo, hi)
}

/// Number of normalizable zero modes at level `I` for monopole charge `M` (`|M| = 2I`).
pub fn count_zero_modes(
    params: &ModelParams,
    i_level: i64,
    m_charge: i64,
    grid: &RadialGrid,
    tol: f64,
) -> Result<usize, QuantumError> {
    Ok(count_zero_modes_detailed(params, i_level, m_charge, grid, tol, Gauge::StringAtInfinity, 0)?.count)
}

/// Scans the admissible window plus `extra` sectors beyond each edge; only window
/// sectors contribute to `count`.
pub fn count_zero_modes_detailed(
    params: &ModelParams,
    i_level: i64,
    m_charge: i64,
    grid: &RadialGrid,
    tol: f64,
    gauge: Gauge,
    extra: i64,
) -> Result<ZeroModeCount, QuantumError> {
    params.validate()?;
    if i_level < 1 {
        return Err(QuantumError::InvalidLevel(i_level));
    }
    if m_charge.abs() != 2 * i_level {
        return Err(QuantumError::UnsupportedCharge { m_charge, i_level });
    }
    let expected = q_for_charge(params.r_cal, m_charge);
    if (params.q - expected).abs() > 1e-12 * expected.abs() {
        return Err(QuantumError::InconsistentCharge { q: params.q, m_charge, expected });
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(QuantumError::InvalidArgument(format!("tolerance must be > 0, got {tol}")));
    }
    let (lo, hi) = sector_window(params, i_level);
    // sector labels in the singular gauge are shifted by the charge
    let shift = match gauge {
        Gauge::StringAtInfinity => 0,
        Gauge::StringAtOrigin => m_charge,
    };
    let sectors: Vec<i64> = (lo - extra..=hi + extra).collect();
    let solved = parallel_map(&sectors, |&m| -> Result<Vec<SectorResult>, QuantumError> {
        let label = m + shift;
        let op = build_radial_operator_with(params, label, grid, gauge, StencilOrder::Fourth);
        // the regular solution at E = 0 is unique, so a sector holds at most one zero
        // mode: the eigenvalue closest to zero
        let mut best: Option<f64> = None;
        for j in 0..op.len() {
            let e = op.eigenvalue(j)?;
            if e > tol {
                break;
            }
            if e >= -tol && best.is_none_or(|b| e.abs() < b.abs()) {
                best = Some(e);
            }
        }
        let mut out = Vec::new();
        if let Some(e) = best {
            let nodal = op.eigenvector(e)?;
            let psi = op.wavefunction(&nodal);
            let tail = tail_test(&op.grid, &psi);
            let in_window = (lo..=hi).contains(&m);
            if tail.verdict == Normalizability::Ambiguous && in_window {
                return Err(QuantumError::AmbiguousNormalizability { m: label, exponent: tail.exponent });
            }
            out.push(SectorResult {
                m: label,
                eigenvalue: e,
                tail_exponent: tail.exponent,
                verdict: tail.verdict,
                strict_l2: tail.strict_l2,
                counted: in_window && tail.verdict == Normalizability::Normalizable,
            });
        }
        Ok(out)
    });
    let mut all = Vec::new();
    for r in solved {
        all.extend(r?);
    }
    let count = all.iter().filter(|s| s.counted).count();
    let excluded = all
        .iter()
        .filter(|s| s.verdict != Normalizability::Normalizable && (lo + shift..=hi + shift).contains(&s.m))
        .map(|s| s.m)
        .collect();
    Ok(ZeroModeCount { count, tol, sectors: all, excluded })
}

/// Number of worker threads: `MONOPOLE_ORBITS_THREADS` if set, else the available
/// parallelism.
pub fn worker_count() -> usize {
    std::env::var("MONOPOLE_ORBITS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Order-preserving map over independent items on scoped threads.
pub fn parallel_map<T: Sync, R: Send, F: Fn(&T) -> R + Sync>(items: &[T], f: F) -> Vec<R> {
    let workers = worker_count().min(items.len()).max(1);
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(alpha: f64, r: f64, q: f64) -> ModelParams {
        ModelParams::new(alpha, r, q).unwrap()
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha_for_zero_mode(1.0, 1, 0).unwrap(), 4.0);
        assert_eq!(alpha_for_zero_mode(1.0, 1, 2).unwrap(), 2.0);
        assert_eq!(alpha_for_zero_mode(2.0, 2, 0).unwrap(), 48.0);
        assert_eq!(alpha_for_zero_mode(1.0, 3, -6).unwrap(), 6.0);
        assert!(matches!(alpha_for_zero_mode(1.0, 1, 3), Err(QuantumError::ChargeOutOfRange { .. })));
        assert!(matches!(alpha_for_zero_mode(1.0, 0, 0), Err(QuantumError::InvalidLevel(0))));
    }

    #[test]
    fn analytic_mode_examples() {
        let m = p(4.0, 1.0, 0.0);
        assert_eq!(analytic_zero_mode(&m, 1, 1.0).unwrap(), 0.5);
        let small = analytic_zero_mode(&m, 1, 1e-6).unwrap();
        assert!((small / 1e-6 - 1.0).abs() < 1e-11);
        let big = analytic_zero_mode(&m, 1, 1e6).unwrap();
        assert!((big * 1e6 - 1.0).abs() < 1e-11);
        assert!(analytic_zero_mode(&m, 0, 1.0).is_err());
        assert_eq!(monopole_zero_mode(1.0, 1, 0, 1.0), 0.5);
    }

    #[test]
    fn grid_validation() {
        assert!(RadialGrid::log(0.0, 1.0, 100).is_err());
        assert!(RadialGrid::log(1.0, 0.5, 100).is_err());
        assert!(RadialGrid::log(1e-3, 1e3, 10).is_err());
        let g = RadialGrid::log(1e-3, 1e3, 100).unwrap();
        assert_eq!(g.nodes[0], 1e-3);
        assert_eq!(g.nodes[99], 1e3);
        assert!(g.nodes.windows(2).all(|w| w[1] > w[0]));
        let u = RadialGrid::uniform(10.0, 99).unwrap();
        assert!((u.step - 0.1).abs() < 1e-15 && u.r_min > 0.0);
    }

    #[test]
    fn operator_is_symmetric() {
        let m = p(2.0, 1.0, 4.0);
        let g = RadialGrid::log(1e-3, 1e3, 200).unwrap();
        for sector in [0, 1, 3] {
            let op = build_radial_operator(&m, sector, &g);
            let d = op.symmetric_dense();
            for i in 0..d.len() {
                for j in 0..d.len() {
                    assert_eq!(d[i][j], d[j][i]);
                }
            }
            assert!(op.diag.iter().chain(&op.off1).chain(&op.off2).all(|v| v.is_finite()));
        }
    }

    #[test]
    fn regular_gauge_vanishes_at_origin() {
        let m = p(2.0, 1.0, 3.0);
        assert_eq!(gauge_potential(&m, 0.0, Gauge::StringAtInfinity), 0.0);
        let far = gauge_potential(&m, 1e8, Gauge::StringAtInfinity);
        assert!((far + 1.5).abs() < 1e-12);
        for r in [0.1, 1.0, 7.0] {
            let d = gauge_potential(&m, r, Gauge::StringAtOrigin) - gauge_potential(&m, r, Gauge::StringAtInfinity);
            assert!((d - 1.5).abs() < 1e-14);
        }
        let g = RadialGrid::log(1e-4, 1e4, 256).unwrap();
        let op = build_radial_operator(&m, 0, &g);
        assert_eq!(op.inner, InnerBoundary::Reflecting);
        // centrifugal term (m + a)^2 / (2 r^2) = potential / r^2 - V tends to zero
        let c0 = op.potential[0] / op.weight[0] - m.potential_r2(g.nodes[0] * g.nodes[0]);
        assert!(c0.abs() < 1e-6);
    }

    #[test]
    fn zero_charge_reduces_to_centrifugal_term() {
        let m = p(4.0, 1.0, 0.0);
        let g = RadialGrid::log(1e-2, 1e2, 128).unwrap();
        let op = build_radial_operator(&m, 2, &g);
        for (i, &r) in g.nodes.iter().enumerate() {
            let expect = 2.0 + r * r * m.potential_r2(r * r);
            assert!((op.potential[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn sturm_count_matches_dense_eigenvalues() {
        use nalgebra::{DMatrix, SymmetricEigen};
        let m = p(30.0, 1.0, 2.0);
        let g = RadialGrid::log(1e-2, 1e2, 150).unwrap();
        for sector in [0, 1] {
            let op = build_radial_operator(&m, sector, &g);
            let d = op.symmetric_dense();
            let n = d.len();
            let mat = DMatrix::from_fn(n, n, |i, j| d[i][j]);
            let mut ev: Vec<f64> = SymmetricEigen::new(mat).eigenvalues.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            for k in 0..4 {
                let e = op.eigenvalue(k).unwrap();
                assert!((e - ev[k]).abs() <= 1e-9 * (1.0 + ev[k].abs()), "k={k} {e} {}", ev[k]);
            }
        }
    }

    #[test]
    fn eigenvector_satisfies_pencil() {
        let m = p(30.0, 1.0, 0.0);
        let g = RadialGrid::log(1e-3, 1e3, 400).unwrap();
        let op = build_radial_operator(&m, 1, &g);
        let modes = solve_modes(&op, 2).unwrap();
        for md in &modes {
            let res = op.interior_residual(&md.vector, md.eigenvalue);
            assert!(res < 1e-8 * m.energy_scale(), "{res}");
            assert!(md.plane_norm > 0.0);
        }
        assert!(modes[0].eigenvalue < modes[1].eigenvalue);
    }

    #[test]
    fn tail_test_on_power_laws() {
        let g = RadialGrid::log(1e-4, 1e4, 1024).unwrap();
        for (k, verdict) in [(2.0, Normalizability::Normalizable), (1.0, Normalizability::Normalizable), (0.0, Normalizability::NotNormalizable), (0.5, Normalizability::Ambiguous)] {
            let psi: Vec<f64> = g.nodes.iter().map(|r| 1.0 / (1.0 + r * r).powf(0.5 * k)).collect();
            let t = tail_test(&g, &psi);
            assert!((t.exponent - k).abs() < 1e-3, "{k} {}", t.exponent);
            assert_eq!(t.verdict, verdict);
        }
    }

    #[test]
    fn window_edges() {
        assert_eq!(sector_window(&p(2.0, 1.0, q_for_charge(1.0, -2)), 1), (0, 2));
        assert_eq!(sector_window(&p(2.0, 1.0, q_for_charge(1.0, 2)), 1), (-2, 0));
        assert_eq!(sector_window(&p(4.0, 1.0, q_for_charge(1.0, -4)), 2), (0, 4));
        assert_eq!(sector_window(&p(4.0, 1.0, 0.0), 1), (-1, 1));
    }

    fn kernel_residual(i_level: i64, grid: &RadialGrid, order: StencilOrder) -> f64 {
        let m = p(alpha_for_zero_mode(1.0, i_level, 0).unwrap(), 1.0, 0.0);
        let op = build_radial_operator_with(&m, i_level, grid, Gauge::StringAtInfinity, order);
        let psi: Vec<f64> = grid.nodes.iter().map(|&r| analytic_zero_mode(&m, i_level, r).unwrap()).collect();
        op.interior_residual(&psi, 0.0)
    }

    #[test]
    fn analytic_mode_is_a_kernel_element() {
        let g = RadialGrid::log(1e-4, 1e4, 4096).unwrap();
        for i in 1..=3 {
            let res = kernel_residual(i, &g, StencilOrder::Fourth);
            assert!(res < 1e-8, "I={i} residual {res}");
        }
    }

    #[test]
    fn kernel_residual_converges_at_stencil_order() {
        for (order, expect) in [(StencilOrder::Second, 2.0), (StencilOrder::Fourth, 4.0)] {
            let coarse = kernel_residual(2, &RadialGrid::log(1e-4, 1e4, 512).unwrap(), order);
            let fine = kernel_residual(2, &RadialGrid::log(1e-4, 1e4, 1024).unwrap(), order);
            let rate = (coarse / fine).log2();
            assert!((rate - expect).abs() < 0.3, "{order:?}: rate {rate}");
        }
    }

    #[test]
    fn zero_mode_eigenvalue_and_spectral_flow() {
        for i in 1..=2 {
            let a = alpha_for_zero_mode(1.0, i, 0).unwrap();
            let m = p(a, 1.0, 0.0);
            let g = RadialGrid::default_for(&m);
            let e = build_radial_operator(&m, i, &g).eigenvalue(0).unwrap();
            assert!(e.abs() < 1e-5 * a, "I={i} E={e}");
            let below = build_radial_operator(&p(0.99 * a, 1.0, 0.0), i, &g).eigenvalue(0).unwrap();
            let above = build_radial_operator(&p(1.01 * a, 1.0, 0.0), i, &g).eigenvalue(0).unwrap();
            assert!(below > 0.0 && above < 0.0, "{below} {above}");
        }
    }

    #[test]
    fn weak_coupling_has_no_bound_states() {
        let m = p(1e-3, 1.0, 0.0);
        let g = RadialGrid::log(1e-4, 1e4, 1024).unwrap();
        for sector in [1, 2, -3] {
            assert!(build_radial_operator(&m, sector, &g).eigenvalue(0).unwrap() > 0.0);
        }
    }

    fn counting(i: i64, charge: i64, gauge: Gauge) -> ZeroModeCount {
        let m = p(alpha_for_zero_mode(1.0, i, charge).unwrap(), 1.0, q_for_charge(1.0, charge));
        let g = RadialGrid::counting_default(&m);
        let tol = default_zero_tolerance(&m, &g, StencilOrder::Fourth);
        count_zero_modes_detailed(&m, i, charge, &g, tol, gauge, 2).unwrap()
    }

    #[test]
    fn zero_mode_count_equals_charge() {
        for (i, charge) in [(1, 2), (1, -2), (2, 4), (2, -4)] {
            let c = counting(i, charge, Gauge::StringAtInfinity);
            assert_eq!(c.count, charge.unsigned_abs() as usize, "I={i} M={charge}");
            // only the edge sector with a flat tail is dropped
            assert_eq!(c.excluded, vec![-charge]);
            // nothing normalizable outside the window
            let (lo, hi) = sector_window(&p(1.0, 1.0, q_for_charge(1.0, charge)), i);
            assert!(c.sectors.iter().filter(|s| s.m < lo || s.m > hi).all(|s| s.verdict != Normalizability::Normalizable));
        }
    }

    #[test]
    fn count_is_gauge_invariant() {
        for (i, charge) in [(1, 2), (2, -4)] {
            let a = counting(i, charge, Gauge::StringAtInfinity);
            let b = counting(i, charge, Gauge::StringAtOrigin);
            assert_eq!(a.count, b.count);
            for (x, y) in a.sectors.iter().zip(&b.sectors) {
                assert_eq!(x.m + charge, y.m);
                assert!((x.eigenvalue - y.eigenvalue).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn count_rejects_bad_arguments() {
        let m = p(2.0, 1.0, q_for_charge(1.0, 2));
        let g = RadialGrid::log(1e-4, 1e4, 128).unwrap();
        assert!(matches!(count_zero_modes(&m, 1, 1, &g, 1e-6), Err(QuantumError::UnsupportedCharge { .. })));
        assert!(matches!(count_zero_modes(&m, 1, -2, &g, 1e-6), Err(QuantumError::InconsistentCharge { .. })));
        assert!(matches!(count_zero_modes(&m, 0, 0, &g, 1e-6), Err(QuantumError::InvalidLevel(0))));
        assert!(count_zero_modes(&m, 1, 2, &g, 0.0).is_err());
    }

    #[test]
    fn parallel_map_preserves_order() {
        let v: Vec<usize> = (0..37).collect();
        assert_eq!(parallel_map(&v, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
