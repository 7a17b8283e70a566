//! JSON run configuration: schema walk that collects every problem, then typed decode.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{make_e0_state, make_e0_state_with_angular_momentum, ModelError, ModelParams, PhaseState};
use crate::quantum::{GridScheme, QuantumError, RadialGrid, StencilOrder};

/// One validation problem, located by a dotted path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl OutputFormat {
    pub fn csv(self) -> bool {
        matches!(self, Self::Csv | Self::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, Self::Json | Self::Both)
    }
}

/// Starting point on the zero-energy shell: either a position and heading, or a radius
/// on the x axis and a canonical angular momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct InitialCondition {
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub heading: Option<f64>,
    pub r0: Option<f64>,
    pub l_z: Option<f64>,
}

impl InitialCondition {
    pub fn state(&self, params: &ModelParams) -> Result<PhaseState, ModelError> {
        match (self.r0, self.l_z) {
            (Some(r0), Some(l)) => make_e0_state_with_angular_momentum(params, r0 * params.r_cal, l),
            _ => make_e0_state(
                params,
                self.x.unwrap_or(1.5) * params.r_cal,
                self.y.unwrap_or(0.0) * params.r_cal,
                self.heading.unwrap_or(1.2),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub initial: InitialCondition,
    pub periods: f64,
    pub t_max: Option<f64>,
    pub tol: f64,
    /// Uniform resampling of the written trajectory; 0 keeps the integrator steps.
    pub samples: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { initial: InitialCondition::default(), periods: 1.0, t_max: None, tol: 1e-10, samples: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbitConfig {
    pub initial: InitialCondition,
    pub tol: f64,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        Self { initial: InitialCondition::default(), tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgebraConfig {
    pub samples: usize,
    pub step: f64,
    pub zero_energy: bool,
    pub threshold: f64,
}

impl Default for AlgebraConfig {
    fn default() -> Self {
        Self { samples: 1000, step: 1e-5, zero_energy: false, threshold: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    pub a_min: f64,
    pub a_max: f64,
    pub points: usize,
    pub energy: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { a_min: 0.05, a_max: 20.0, points: 2000, energy: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StereoConfig {
    pub initial: InitialCondition,
    pub tol: f64,
    pub metric_points: usize,
    pub step: f64,
}

impl Default for StereoConfig {
    fn default() -> Self {
        Self { initial: InitialCondition::default(), tol: 1e-10, metric_points: 100, step: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FluxConfig {
    pub r_max: f64,
    pub intervals: usize,
}

impl Default for FluxConfig {
    fn default() -> Self {
        Self { r_max: 1e3, intervals: 20000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub initial: InitialCondition,
    pub q_from: f64,
    pub q_to: f64,
    pub rate: f64,
    pub tol: f64,
    pub snapshot_every: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { initial: InitialCondition::default(), q_from: 0.0, q_to: 2.0, rate: 1e-3, tol: 1e-10, snapshot_every: 1 }
    }
}

/// Radial grid; radii are in units of `r_cal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct GridConfig {
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    pub nodes: Option<usize>,
    pub uniform: bool,
}

impl GridConfig {
    pub fn build(&self, params: &ModelParams, r_min_default: f64) -> Result<RadialGrid, QuantumError> {
        let n = self.nodes.unwrap_or(4096);
        let r_max = self.r_max.unwrap_or(1e4) * params.r_cal;
        if self.uniform {
            RadialGrid::uniform(r_max, n)
        } else {
            RadialGrid::log(self.r_min.unwrap_or(r_min_default) * params.r_cal, r_max, n)
        }
    }

    pub fn scheme(&self) -> GridScheme {
        if self.uniform {
            GridScheme::Uniform
        } else {
            GridScheme::Log
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZeroModeConfig {
    pub levels: Vec<i64>,
    pub grid: GridConfig,
    pub second_order: bool,
    /// Relative change of `alpha` for the spectral-flow check.
    pub flow_step: f64,
}

impl Default for ZeroModeConfig {
    fn default() -> Self {
        Self { levels: vec![1, 2, 3], grid: GridConfig::default(), second_order: false, flow_step: 0.01 }
    }
}

impl ZeroModeConfig {
    pub fn order(&self) -> StencilOrder {
        if self.second_order {
            StencilOrder::Second
        } else {
            StencilOrder::Fourth
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CountConfig {
    /// `[I, M]` pairs with `|M| = 2I`.
    pub cases: Vec<[i64; 2]>,
    pub grid: GridConfig,
    pub tol: Option<f64>,
    pub extra_sectors: i64,
}

impl Default for CountConfig {
    fn default() -> Self {
        Self { cases: vec![[1, 2], [2, 4]], grid: GridConfig::default(), tol: None, extra_sectors: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumConfig {
    pub sectors: Vec<i64>,
    pub modes: usize,
    pub grid: GridConfig,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { sectors: vec![-2, -1, 0, 1, 2], modes: 4, grid: GridConfig { nodes: Some(2048), ..GridConfig::default() } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub params: ModelParams,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub formats: OutputFormat,
    pub plot: bool,
    pub simulate: SimulateConfig,
    pub period: OrbitConfig,
    pub algebra: AlgebraConfig,
    pub geometry: OrbitConfig,
    pub stability: StabilityConfig,
    pub hodograph: OrbitConfig,
    pub stereo: StereoConfig,
    pub flux: FluxConfig,
    pub sweep: SweepConfig,
    pub zero_mode: ZeroModeConfig,
    pub count: CountConfig,
    pub spectrum: SpectrumConfig,
}

pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, Copy)]
enum Kind {
    Number,
    Positive,
    Tolerance,
    Count,
    Integer,
    Bool,
    Format,
    Path,
    IntList,
    PairList,
    Block(&'static [(&'static str, Kind)]),
}

const INITIAL: &[(&str, Kind)] = &[
    ("x", Kind::Number),
    ("y", Kind::Number),
    ("heading", Kind::Number),
    ("r0", Kind::Positive),
    ("l_z", Kind::Number),
];

const GRID: &[(&str, Kind)] =
    &[("r_min", Kind::Positive), ("r_max", Kind::Positive), ("nodes", Kind::Count), ("uniform", Kind::Bool)];

const ORBIT: &[(&str, Kind)] = &[("initial", Kind::Block(INITIAL)), ("tol", Kind::Tolerance)];

const TOP: &[(&str, Kind)] = &[
    ("alpha", Kind::Positive),
    ("r_cal", Kind::Positive),
    ("q", Kind::Number),
    ("seed", Kind::Integer),
    ("output_dir", Kind::Path),
    ("formats", Kind::Format),
    ("plot", Kind::Bool),
    (
        "simulate",
        Kind::Block(&[
            ("initial", Kind::Block(INITIAL)),
            ("periods", Kind::Positive),
            ("t_max", Kind::Positive),
            ("tol", Kind::Tolerance),
            ("samples", Kind::Integer),
        ]),
    ),
    ("period", Kind::Block(ORBIT)),
    (
        "algebra",
        Kind::Block(&[
            ("samples", Kind::Count),
            ("step", Kind::Positive),
            ("zero_energy", Kind::Bool),
            ("threshold", Kind::Positive),
        ]),
    ),
    ("geometry", Kind::Block(ORBIT)),
    (
        "stability",
        Kind::Block(&[
            ("a_min", Kind::Positive),
            ("a_max", Kind::Positive),
            ("points", Kind::Count),
            ("energy", Kind::Number),
        ]),
    ),
    ("hodograph", Kind::Block(ORBIT)),
    (
        "stereo",
        Kind::Block(&[
            ("initial", Kind::Block(INITIAL)),
            ("tol", Kind::Tolerance),
            ("metric_points", Kind::Count),
            ("step", Kind::Positive),
        ]),
    ),
    ("flux", Kind::Block(&[("r_max", Kind::Positive), ("intervals", Kind::Count)])),
    (
        "sweep",
        Kind::Block(&[
            ("initial", Kind::Block(INITIAL)),
            ("q_from", Kind::Number),
            ("q_to", Kind::Number),
            ("rate", Kind::Positive),
            ("tol", Kind::Tolerance),
            ("snapshot_every", Kind::Count),
        ]),
    ),
    (
        "zero_mode",
        Kind::Block(&[
            ("levels", Kind::IntList),
            ("grid", Kind::Block(GRID)),
            ("second_order", Kind::Bool),
            ("flow_step", Kind::Positive),
        ]),
    ),
    (
        "count",
        Kind::Block(&[
            ("cases", Kind::PairList),
            ("grid", Kind::Block(GRID)),
            ("tol", Kind::Positive),
            ("extra_sectors", Kind::Integer),
        ]),
    ),
    (
        "spectrum",
        Kind::Block(&[("sectors", Kind::IntList), ("modes", Kind::Count), ("grid", Kind::Block(GRID))]),
    ),
];

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn check_value(v: &Value, kind: Kind, path: &str, issues: &mut Vec<ConfigIssue>) {
    let mut bad = |message: String| issues.push(ConfigIssue { path: path.to_string(), message });
    let number = v.as_f64().filter(|x| x.is_finite());
    match kind {
        Kind::Number => {
            if number.is_none() {
                bad("expected a finite number".into());
            }
        }
        Kind::Positive => match number {
            Some(x) if x > 0.0 => {}
            Some(x) => bad(format!("must be > 0, got {x}")),
            None => bad("expected a positive number".into()),
        },
        Kind::Tolerance => match number {
            Some(x) if (1e-14..=1e-3).contains(&x) => {}
            Some(x) => bad(format!("tolerance must lie in [1e-14, 1e-3], got {x}")),
            None => bad("expected a number".into()),
        },
        Kind::Count => match v.as_u64() {
            Some(n) if n >= 1 => {}
            _ => bad("expected an integer >= 1".into()),
        },
        Kind::Integer => {
            if v.as_u64().is_none() {
                bad("expected a non-negative integer".into());
            }
        }
        Kind::Bool => {
            if !v.is_boolean() {
                bad("expected true or false".into());
            }
        }
        Kind::Format => match v.as_str() {
            Some("csv" | "json" | "both") => {}
            _ => bad("expected one of \"csv\", \"json\", \"both\"".into()),
        },
        Kind::Path => {
            if !v.as_str().is_some_and(|s| !s.is_empty()) {
                bad("expected a non-empty string".into());
            }
        }
        Kind::IntList => match v.as_array() {
            Some(a) if !a.is_empty() && a.iter().all(|x| x.as_i64().is_some()) => {}
            _ => bad("expected a non-empty list of integers".into()),
        },
        Kind::PairList => match v.as_array() {
            Some(a)
                if !a.is_empty()
                    && a.iter().all(|p| p.as_array().is_some_and(|p| p.len() == 2 && p.iter().all(|x| x.as_i64().is_some()))) => {}
            _ => bad("expected a non-empty list of [I, M] integer pairs".into()),
        },
        Kind::Block(fields) => match v.as_object() {
            Some(obj) => {
                for (key, value) in obj {
                    match fields.iter().find(|(name, _)| name == key) {
                        Some(&(_, k)) => check_value(value, k, &join(path, key), issues),
                        None => issues.push(ConfigIssue { path: join(path, key), message: "unknown key".into() }),
                    }
                }
            }
            None => bad("expected an object".into()),
        },
    }
}

// cross-field and domain rules that the per-key schema cannot express
fn check_domain(cfg: &RunConfig, issues: &mut Vec<ConfigIssue>) {
    let mut bad = |path: &str, message: String| issues.push(ConfigIssue { path: path.into(), message });
    for (name, init) in [
        ("simulate", &cfg.simulate.initial),
        ("period", &cfg.period.initial),
        ("geometry", &cfg.geometry.initial),
        ("hodograph", &cfg.hodograph.initial),
        ("stereo", &cfg.stereo.initial),
        ("sweep", &cfg.sweep.initial),
    ] {
        let by_position = init.x.is_some() || init.y.is_some() || init.heading.is_some();
        let by_momentum = init.r0.is_some() || init.l_z.is_some();
        if by_position && by_momentum {
            bad(&format!("{name}.initial"), "give either x/y/heading or r0/l_z, not both".into());
        } else if by_momentum && (init.r0.is_none() || init.l_z.is_none()) {
            bad(&format!("{name}.initial"), "r0 and l_z must be given together".into());
        }
    }
    if cfg.stability.a_min >= cfg.stability.a_max {
        bad("stability", format!("a_min ({}) must be below a_max ({})", cfg.stability.a_min, cfg.stability.a_max));
    }
    if cfg.stability.points < 2 {
        bad("stability.points", "need at least 2 points".into());
    }
    if cfg.sweep.q_from == cfg.sweep.q_to {
        bad("sweep", "q_from and q_to must differ".into());
    }
    if cfg.flux.intervals < 16 {
        bad("flux.intervals", "need at least 16 intervals".into());
    }
    for (name, grid) in [("zero_mode", &cfg.zero_mode.grid), ("count", &cfg.count.grid), ("spectrum", &cfg.spectrum.grid)] {
        if let (Some(a), Some(b)) = (grid.r_min, grid.r_max) {
            if a >= b {
                bad(&format!("{name}.grid"), format!("r_min ({a}) must be below r_max ({b})"));
            }
        }
        if grid.nodes.is_some_and(|n| n < crate::quantum::MIN_GRID_NODES) {
            bad(&format!("{name}.grid.nodes"), format!("need at least {} nodes", crate::quantum::MIN_GRID_NODES));
        }
    }
    if cfg.zero_mode.levels.iter().any(|&i| i < 1) {
        bad("zero_mode.levels", "levels must be >= 1".into());
    }
    for (k, [i, m]) in cfg.count.cases.iter().enumerate() {
        if *i < 1 || m.abs() != 2 * i {
            bad(&format!("count.cases[{k}]"), format!("need I >= 1 and |M| = 2I, got [{i}, {m}]"));
        }
    }
    if cfg.zero_mode.flow_step >= 1.0 {
        bad("zero_mode.flow_step", "must be below 1".into());
    }
}

fn decode<T: for<'de> Deserialize<'de> + Default>(root: &Value, key: &str, issues: &mut Vec<ConfigIssue>) -> T {
    match root.get(key) {
        None => T::default(),
        Some(v) => serde_json::from_value(v.clone()).unwrap_or_else(|e| {
            issues.push(ConfigIssue { path: key.into(), message: e.to_string() });
            T::default()
        }),
    }
}

/// Parses and validates a JSON document. All problems are reported together.
pub fn parse_config(text: &str) -> Result<RunConfig, Vec<ConfigIssue>> {
    let root: Value = serde_json::from_str(text).map_err(|e| {
        vec![ConfigIssue {
            path: String::new(),
            message: format!("JSON syntax error at line {}, column {}: {e}", e.line(), e.column()),
        }]
    })?;
    let mut issues = Vec::new();
    if !root.is_object() {
        return Err(vec![ConfigIssue { path: String::new(), message: "top level must be a JSON object".into() }]);
    }
    for key in ["alpha", "r_cal"] {
        if root.get(key).is_none() {
            issues.push(ConfigIssue { path: key.into(), message: "required key is missing".into() });
        }
    }
    check_value(&root, Kind::Block(TOP), "", &mut issues);
    if !issues.is_empty() {
        return Err(issues);
    }

    let num = |k: &str, d: f64| root.get(k).and_then(Value::as_f64).unwrap_or(d);
    let mut cfg = RunConfig {
        params: ModelParams { alpha: num("alpha", 0.0), r_cal: num("r_cal", 0.0), q: num("q", 0.0) },
        seed: root.get("seed").and_then(Value::as_u64).unwrap_or(DEFAULT_SEED),
        output_dir: PathBuf::from(root.get("output_dir").and_then(Value::as_str).unwrap_or("out")),
        formats: decode(&root, "formats", &mut issues),
        plot: root.get("plot").and_then(Value::as_bool).unwrap_or(true),
        simulate: decode(&root, "simulate", &mut issues),
        period: decode(&root, "period", &mut issues),
        algebra: decode(&root, "algebra", &mut issues),
        geometry: decode(&root, "geometry", &mut issues),
        stability: decode(&root, "stability", &mut issues),
        hodograph: decode(&root, "hodograph", &mut issues),
        stereo: decode(&root, "stereo", &mut issues),
        flux: decode(&root, "flux", &mut issues),
        sweep: decode(&root, "sweep", &mut issues),
        zero_mode: decode(&root, "zero_mode", &mut issues),
        count: decode(&root, "count", &mut issues),
        spectrum: decode(&root, "spectrum", &mut issues),
    };
    // the centered hodograph is circular only to about the integrator tolerance
    if root.pointer("/hodograph/tol").is_none() {
        cfg.hodograph.tol = 1e-13;
    }
    check_domain(&cfg, &mut issues);
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(issues)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paths(text: &str) -> Vec<String> {
        parse_config(text).unwrap_err().into_iter().map(|i| i.path).collect()
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(r#"{"alpha": 2, "r_cal": 1, "q": 0}"#).unwrap();
        assert_eq!(cfg.params, ModelParams::new(2.0, 1.0, 0.0).unwrap());
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.formats, OutputFormat::Both);
        assert_eq!(cfg.algebra.samples, 1000);
        assert_eq!(cfg.count.cases, vec![[1, 2], [2, 4]]);
    }

    #[test]
    fn negative_alpha_is_named() {
        assert_eq!(paths(r#"{"alpha": -1, "r_cal": 1}"#), vec!["alpha"]);
    }

    #[test]
    fn unknown_keys_are_listed_with_paths() {
        let p = paths(r#"{"alpha": 2, "r_cal": 1, "qq": 3, "simulate": {"tol": 1e-10, "toll": 1}}"#);
        assert_eq!(p, vec!["qq", "simulate.toll"]);
    }

    #[test]
    fn all_problems_are_reported() {
        let p = paths(r#"{"r_cal": "one", "formats": "xml", "period": {"tol": 1.0}, "flux": {"intervals": 0}}"#);
        for want in ["alpha", "r_cal", "formats", "period.tol", "flux.intervals"] {
            assert!(p.iter().any(|x| x == want), "{want} missing from {p:?}");
        }
    }

    #[test]
    fn syntax_error_has_position() {
        let e = parse_config("{\n  \"alpha\": 2,\n  \"r_cal\" 1\n}").unwrap_err();
        assert_eq!(e.len(), 1);
        assert!(e[0].message.contains("line 3"), "{}", e[0].message);
    }

    #[test]
    fn cross_field_rules() {
        let p = paths(
            r#"{"alpha": 2, "r_cal": 1, "stability": {"a_min": 3, "a_max": 1},
                "simulate": {"initial": {"x": 1, "l_z": 1}}, "count": {"cases": [[1, 3]]}}"#,
        );
        assert_eq!(p, vec!["simulate.initial", "stability", "count.cases[0]"]);
    }

    #[test]
    fn initial_condition_variants() {
        let m = ModelParams::new(2.0, 1.0, 2.0).unwrap();
        let by_l = InitialCondition { r0: Some(1.0), l_z: Some(1.0), ..Default::default() };
        let s = by_l.state(&m).unwrap();
        assert_eq!((s.x, s.y), (1.0, 0.0));
        let s = InitialCondition::default().state(&m).unwrap();
        assert_eq!(s.x, 1.5);
    }
}
