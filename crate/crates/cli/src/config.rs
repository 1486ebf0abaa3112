//! Run configuration: a JSON document, validated as a whole.

use std::fmt;
use std::path::{Path, PathBuf};

use homlab_core::{AxisBox, FieldSpec, Matrix, Observable, ResolutionPolicy, SolveOptions};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_N: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    FieldStats,
    SolveCell,
    EstimateFhom,
    VerifyBounds,
    Subadditivity,
    Stationarity,
    Recession,
    RankOne,
    DegenerateDivergence,
    DegenerateInterface,
    GlueCheck,
}

impl Command {
    pub const ALL: [Command; 11] = [
        Command::FieldStats,
        Command::SolveCell,
        Command::EstimateFhom,
        Command::VerifyBounds,
        Command::Subadditivity,
        Command::Stationarity,
        Command::Recession,
        Command::RankOne,
        Command::DegenerateDivergence,
        Command::DegenerateInterface,
        Command::GlueCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::FieldStats => "field-stats",
            Command::SolveCell => "solve-cell",
            Command::EstimateFhom => "estimate-fhom",
            Command::VerifyBounds => "verify-bounds",
            Command::Subadditivity => "subadditivity",
            Command::Stationarity => "stationarity",
            Command::Recession => "recession",
            Command::RankOne => "rank-one",
            Command::DegenerateDivergence => "degenerate-divergence",
            Command::DegenerateInterface => "degenerate-interface",
            Command::GlueCheck => "glue-check",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One entry of the `xi` list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum XiEntry {
    /// Rows of an `m × d` matrix.
    Matrix(Vec<Vec<f64>>),
    /// A single row.
    Row(Vec<f64>),
    /// Unit matrix `e_row ⊗ e_axis` (both 1-based).
    Axis {
        axis: usize,
        #[serde(default = "one")]
        row: usize,
    },
    /// `s · ray` for every `s` in `scales` (default `[1]`).
    Ray {
        ray: Vec<f64>,
        #[serde(default)]
        scales: Option<Vec<f64>>,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// File stem; defaults to the command name.
    #[serde(default)]
    pub stem: Option<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("homlab-out"), stem: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldStatsParams {
    pub observable: Observable,
    #[serde(rename = "box")]
    pub region: Option<AxisBox>,
}

impl Default for FieldStatsParams {
    fn default() -> Self {
        Self { observable: Observable::Norm, region: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveCellParams {
    #[serde(default)]
    pub realization: u64,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    /// Write minimizers next to the CSV.
    #[serde(default)]
    pub dump: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBoundsParams {
    pub mc_budget: usize,
}

impl Default for VerifyBoundsParams {
    fn default() -> Self {
        Self { mc_budget: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubadditivityParams {
    /// Defaults to the last entry of `t_list`.
    #[serde(default)]
    pub t: Option<f64>,
    pub depth: usize,
}

impl Default for SubadditivityParams {
    fn default() -> Self {
        Self { t: None, depth: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarityParams {
    #[serde(default)]
    pub t: Option<f64>,
    /// Integer shift; defaults to `(3, …, 3)`.
    #[serde(default)]
    pub shift: Option<Vec<i64>>,
    #[serde(default)]
    pub ks_alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecessionParams {
    pub s_list: Vec<f64>,
    #[serde(default)]
    pub t: Option<f64>,
}

impl Default for RecessionParams {
    fn default() -> Self {
        Self { s_list: vec![1.0, 2.0, 5.0], t: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankOneParams {
    /// Endpoints; default to the first two entries of `xi`.
    #[serde(default)]
    pub xi1: Option<XiEntry>,
    #[serde(default)]
    pub xi2: Option<XiEntry>,
    pub points: usize,
    #[serde(default)]
    pub t: Option<f64>,
}

impl Default for RankOneParams {
    fn default() -> Self {
        Self { xi1: None, xi2: None, points: 5, t: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceParams {
    pub deltas: Vec<f64>,
    pub search_limit: u64,
    pub target: f64,
    #[serde(default)]
    pub window: Option<f64>,
    /// Independent scans for the hitting-index statistics.
    pub scans: usize,
}

impl Default for InterfaceParams {
    fn default() -> Self {
        Self { deltas: vec![0.1, 0.01], search_limit: 10_000, target: 0.0, window: None, scans: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlueParams {
    pub instances: usize,
    /// Cells per side of the grid on `[0, side]^d`.
    pub cells: usize,
    pub side: f64,
    pub deltas: Vec<f64>,
    /// `A'` and `A''`, in units of `side`; default to centered cubes of
    /// relative width 1/4 and 3/4.
    #[serde(default)]
    pub inner: Option<AxisBox>,
    #[serde(default)]
    pub outer: Option<AxisBox>,
}

impl Default for GlueParams {
    fn default() -> Self {
        Self { instances: 20, cells: 64, side: 1.0, deltas: vec![0.5, 0.25, 0.2], inner: None, outer: None }
    }
}

/// Validated configuration with defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: u32,
    pub command: Option<Command>,
    pub field: FieldSpec,
    /// Rows of every `ξ`.
    pub m: usize,
    pub xi: Vec<Matrix<f64>>,
    pub t_list: Vec<f64>,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub resolution_policy: ResolutionPolicy,
    pub output: OutputConfig,
    pub workers: Option<usize>,
    pub field_stats: FieldStatsParams,
    pub solve_cell: SolveCellParams,
    pub verify_bounds: VerifyBoundsParams,
    pub subadditivity: SubadditivityParams,
    pub stationarity: StationarityParams,
    pub recession: RecessionParams,
    pub rank_one: RankOneParams,
    pub degenerate_interface: InterfaceParams,
    pub glue_check: GlueParams,
}

impl RunConfig {
    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions { tol: self.tol, max_iter: self.max_iter, ..SolveOptions::default() }
    }

    /// Side used by single-`t` commands.
    pub fn single_t(&self, explicit: Option<f64>) -> Option<f64> {
        explicit.or_else(|| self.t_list.last().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Dotted path of the offending entry.
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Every problem found in a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl ConfigErrors {
    pub fn mentions(&self, needle: &str) -> bool {
        self.0.iter().any(|e| e.field.contains(needle) || e.message.contains(needle))
    }
}

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration error(s):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

const KEYS: &[&str] = &[
    "version",
    "command",
    "field",
    "m",
    "xi",
    "t_list",
    "N",
    "seed",
    "tol",
    "max_iter",
    "resolution_policy",
    "output",
    "workers",
    "field_stats",
    "solve_cell",
    "verify_bounds",
    "subadditivity",
    "stationarity",
    "recession",
    "rank_one",
    "degenerate_interface",
    "glue_check",
];

struct Collector {
    errors: Vec<ConfigError>,
}

impl Collector {
    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.errors.push(ConfigError { field: field.into(), message: message.into() });
    }

    fn take<T: DeserializeOwned>(&mut self, obj: &Map<String, Value>, key: &str) -> Option<T> {
        let v = obj.get(key)?;
        match serde_json::from_value(v.clone()) {
            Ok(t) => Some(t),
            Err(e) => {
                self.push(key, e.to_string());
                None
            }
        }
    }

    fn positive_list(&mut self, field: &str, v: &[f64]) {
        for (i, x) in v.iter().enumerate() {
            if !(x.is_finite() && *x > 0.0) {
                self.push(format!("{field}[{i}]"), format!("must be a finite positive number, got {x}"));
            }
        }
        if v.windows(2).any(|w| w[1] <= w[0]) {
            self.push(field, "must be strictly increasing");
        }
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigErrors(vec![ConfigError { field: "<file>".into(), message: format!("{}: {e}", path.display()) }])
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigErrors> {
    let mut c = Collector { errors: Vec::new() };
    let root: Value = serde_json::from_str(text).map_err(|e| {
        ConfigErrors(vec![ConfigError { field: "<document>".into(), message: format!("not valid JSON: {e}") }])
    })?;
    let Some(obj) = root.as_object() else {
        return Err(ConfigErrors(vec![ConfigError { field: "<document>".into(), message: "expected a JSON object".into() }]));
    };
    for k in obj.keys() {
        if !KEYS.contains(&k.as_str()) {
            c.push(k.clone(), "unknown key");
        }
    }

    let version: u32 = c.take(obj, "version").unwrap_or(CONFIG_VERSION);
    if version != CONFIG_VERSION {
        c.push("version", format!("unsupported config version {version}; expected {CONFIG_VERSION}"));
    }
    let command: Option<Command> = c.take(obj, "command");
    let field: Option<FieldSpec> = c.take(obj, "field");
    if !obj.contains_key("field") {
        c.push("field", "missing");
    }
    if let Some(f) = &field {
        for e in f.validation_errors() {
            match e {
                homlab_core::Error::Config { field, reason } => {
                    let path = if field.starts_with("field") { field } else { format!("field.{field}") };
                    c.push(path, reason)
                }
                other => c.push("field", other.to_string()),
            }
        }
    }
    let dim = field.as_ref().map(|f| f.dim);

    let entries: Vec<XiEntry> = c.take(obj, "xi").unwrap_or_default();
    let m_given: Option<usize> = c.take(obj, "m");
    let mut xi = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        match expand_xi(e, dim, m_given.unwrap_or(1)) {
            Ok(v) => xi.extend(v),
            Err(msg) => c.push(format!("xi[{i}]"), msg),
        }
    }
    let m = m_given.unwrap_or_else(|| xi.first().map(|x| x.rows()).unwrap_or(1));
    if m == 0 {
        c.push("m", "must be >= 1");
    }
    for (i, x) in xi.iter().enumerate() {
        if x.rows() != m {
            c.push(format!("xi[{i}]"), format!("has {} rows, expected m = {m}", x.rows()));
        }
        if !x.is_finite() {
            c.push(format!("xi[{i}]"), "non-finite entry");
        }
    }

    let t_list: Vec<f64> = c.take(obj, "t_list").unwrap_or_default();
    c.positive_list("t_list", &t_list);
    let n: usize = c.take(obj, "N").unwrap_or(DEFAULT_N);
    if n == 0 {
        c.push("N", "must be >= 1");
    }
    let seed: u64 = c.take(obj, "seed").unwrap_or(0);
    let tol: f64 = c.take(obj, "tol").unwrap_or(DEFAULT_TOL);
    if !(tol.is_finite() && tol > 0.0 && tol < 1.0) {
        c.push("tol", format!("must lie in (0, 1), got {tol}"));
    }
    let max_iter: usize = c.take(obj, "max_iter").unwrap_or(SolveOptions::default().max_iter);
    if max_iter == 0 {
        c.push("max_iter", "must be >= 1");
    }
    let resolution_policy: ResolutionPolicy = c.take(obj, "resolution_policy").unwrap_or_default();
    if !(resolution_policy.cells_per_unit.is_finite() && resolution_policy.cells_per_unit > 0.0) {
        c.push("resolution_policy.cells_per_unit", "must be a finite positive number");
    }
    let output: OutputConfig = c.take(obj, "output").unwrap_or_default();
    let workers: Option<usize> = c.take(obj, "workers");
    if workers == Some(0) {
        c.push("workers", "must be >= 1");
    }

    let field_stats: FieldStatsParams = c.take(obj, "field_stats").unwrap_or_default();
    let solve_cell: SolveCellParams = c.take(obj, "solve_cell").unwrap_or_default();
    let verify_bounds: VerifyBoundsParams = c.take(obj, "verify_bounds").unwrap_or_default();
    let subadditivity: SubadditivityParams = c.take(obj, "subadditivity").unwrap_or_default();
    let stationarity: StationarityParams = c.take(obj, "stationarity").unwrap_or_default();
    let recession: RecessionParams = c.take(obj, "recession").unwrap_or_default();
    let rank_one: RankOneParams = c.take(obj, "rank_one").unwrap_or_default();
    let degenerate_interface: InterfaceParams = c.take(obj, "degenerate_interface").unwrap_or_default();
    let glue_check: GlueParams = c.take(obj, "glue_check").unwrap_or_default();

    for (key, t) in [("subadditivity.t", subadditivity.t), ("stationarity.t", stationarity.t), ("recession.t", recession.t), ("rank_one.t", rank_one.t)] {
        if let Some(t) = t {
            if !(t.is_finite() && t > 0.0) {
                c.push(key, format!("must be a finite positive number, got {t}"));
            }
        }
    }
    if let (Some(d), Some(b)) = (dim, &field_stats.region) {
        if b.dim() != d || !b.is_nonempty() {
            c.push("field_stats.box", format!("must be a nonempty box in dimension {d}"));
        }
    }
    if let (Some(d), Some(z)) = (dim, &stationarity.shift) {
        if z.len() != d {
            c.push("stationarity.shift", format!("needs {d} entries"));
        }
    }
    if let Some(a) = stationarity.ks_alpha {
        if !(a > 0.0 && a < 1.0) {
            c.push("stationarity.ks_alpha", "must lie in (0, 1)");
        }
    }
    if recession.s_list.is_empty() || recession.s_list[0] < 1.0 {
        c.push("recession.s_list", "must be nonempty with entries >= 1");
    }
    c.positive_list("recession.s_list", &recession.s_list);
    if rank_one.points < 3 {
        c.push("rank_one.points", "need at least 3 points");
    }
    for (key, e) in [("rank_one.xi1", &rank_one.xi1), ("rank_one.xi2", &rank_one.xi2)] {
        if let Some(e) = e {
            match expand_xi(e, dim, m) {
                Ok(v) if v.len() == 1 => {}
                Ok(_) => c.push(key, "must describe a single matrix"),
                Err(msg) => c.push(key, msg),
            }
        }
    }
    for (i, d) in degenerate_interface.deltas.iter().enumerate() {
        if !(*d > 0.0 && *d < 1.0) {
            c.push(format!("degenerate_interface.deltas[{i}]"), format!("must lie in (0, 1), got {d}"));
        }
    }
    if !(0.0..1.0).contains(&degenerate_interface.target) {
        c.push("degenerate_interface.target", "must lie in [0, 1)");
    }
    if degenerate_interface.search_limit == 0 {
        c.push("degenerate_interface.search_limit", "must be >= 1");
    }
    if degenerate_interface.scans == 0 {
        c.push("degenerate_interface.scans", "must be >= 1");
    }
    if glue_check.cells < 2 {
        c.push("glue_check.cells", "must be >= 2");
    }
    if !(glue_check.side.is_finite() && glue_check.side > 0.0) {
        c.push("glue_check.side", "must be a finite positive number");
    }
    for (i, d) in glue_check.deltas.iter().enumerate() {
        if !(d.is_finite() && *d > 0.0) {
            c.push(format!("glue_check.deltas[{i}]"), format!("must be a finite positive number, got {d}"));
        }
    }

    if !c.errors.is_empty() {
        return Err(ConfigErrors(c.errors));
    }
    Ok(RunConfig {
        version,
        command,
        field: field.expect("checked above"),
        m,
        xi,
        t_list,
        n,
        seed,
        tol,
        max_iter,
        resolution_policy,
        output,
        workers,
        field_stats,
        solve_cell,
        verify_bounds,
        subadditivity,
        stationarity,
        recession,
        rank_one,
        degenerate_interface,
        glue_check,
    })
}

pub fn expand_xi(e: &XiEntry, dim: Option<usize>, m: usize) -> Result<Vec<Matrix<f64>>, String> {
    let check_cols = |cols: usize| match dim {
        Some(d) if d != cols => Err(format!("has {cols} columns, field dimension is {d}")),
        _ => Ok(()),
    };
    match e {
        XiEntry::Matrix(rows) => {
            let cols = rows.first().map(|r| r.len()).unwrap_or(0);
            if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
                return Err("rows must be nonempty and of equal length".into());
            }
            check_cols(cols)?;
            Ok(vec![Matrix::from_rows(rows)])
        }
        XiEntry::Row(r) => {
            if r.is_empty() {
                return Err("empty row".into());
            }
            check_cols(r.len())?;
            Ok(vec![Matrix::from_rows(&[r.clone()])])
        }
        XiEntry::Axis { axis, row } => {
            let d = dim.ok_or("axis shorthand needs a valid field")?;
            if *axis == 0 || *axis > d {
                return Err(format!("axis {axis} outside 1..={d}"));
            }
            if *row == 0 || *row > m {
                return Err(format!("row {row} outside 1..={m}"));
            }
            Ok(vec![Matrix::unit(m, d, row - 1, axis - 1)])
        }
        XiEntry::Ray { ray, scales } => {
            if ray.is_empty() {
                return Err("empty ray".into());
            }
            check_cols(ray.len())?;
            let base = Matrix::from_rows(&[ray.clone()]);
            let scales = scales.clone().unwrap_or_else(|| vec![1.0]);
            if scales.is_empty() {
                return Err("scales must be nonempty".into());
            }
            Ok(scales.iter().map(|s| base.scale(*s)).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"field": {"dim": 2, "structure": {"kind": "iid_cubes"},
        "diagonal": {"isotropic": {"kind": "constant", "c": 2.0}}}}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.tol, 1e-5);
        assert_eq!(c.n, 50);
        assert_eq!(c.seed, 0);
        assert_eq!(c.m, 1);
        assert_eq!(c.resolution_policy, ResolutionPolicy::default());
    }

    #[test]
    fn negative_t_is_named() {
        let text = MINIMAL.replacen('{', r#"{"t_list": [4.0, -1.0],"#, 1);
        let e = parse_config_str(&text).unwrap_err();
        assert!(e.0.iter().any(|e| e.field.starts_with("t_list")), "{e}");
    }

    #[test]
    fn zero_tail_index_names_the_distribution() {
        let text = r#"{"field": {"dim": 1, "structure": {"kind": "iid_cubes"},
            "diagonal": {"isotropic": {"kind": "pareto", "x_m": 1.0, "alpha": 0.0}}}}"#;
        let e = parse_config_str(text).unwrap_err();
        assert!(e.mentions("pareto"), "{e}");
    }

    #[test]
    fn all_problems_are_reported() {
        let text = MINIMAL.replacen('{', r#"{"tol": -1, "N": 0, "sede": 3, "t_list": [0],"#, 1);
        let e = parse_config_str(&text).unwrap_err();
        for key in ["tol", "N", "sede", "t_list"] {
            assert!(e.0.iter().any(|x| x.field.starts_with(key)), "missing {key} in {e}");
        }
    }

    #[test]
    fn nested_typos_are_rejected() {
        let text = MINIMAL.replacen('{', r#"{"glue_check": {"instanses": 3},"#, 1);
        let e = parse_config_str(&text).unwrap_err();
        assert!(e.mentions("instanses"), "{e}");
    }

    #[test]
    fn xi_shorthands_expand() {
        let text = MINIMAL.replacen('{', r#"{"xi": [{"axis": 2}, [1.0, 1.0], {"ray": [1.0, 0.0], "scales": [1, 2]}],"#, 1);
        let c = parse_config_str(&text).unwrap();
        assert_eq!(c.xi.len(), 4);
        assert_eq!(c.xi[0], Matrix::from_rows(&[vec![0.0, 1.0]]));
        assert_eq!(c.xi[3], Matrix::from_rows(&[vec![2.0, 0.0]]));
        let bad = MINIMAL.replacen('{', r#"{"xi": [{"axis": 3}, [1.0]],"#, 1);
        let e = parse_config_str(&bad).unwrap_err();
        assert!(e.mentions("xi[0]") && e.mentions("xi[1]"), "{e}");
    }
}
