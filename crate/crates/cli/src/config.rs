//! Experiment configuration: TOML text walked against a fixed schema, then
//! typed section by section so that every error is reported at once.

use std::fmt;
use std::path::{Path, PathBuf};

use ospde_core::expr::Expr;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A 64-bit seed. TOML integers are signed, so seeds above `i64::MAX` are
/// written as decimal strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seed(pub u64);

impl Serialize for Seed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(self.0) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&self.0.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Seed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => u64::try_from(v).map(Seed).map_err(|_| serde::de::Error::custom(format!("seed {v} is negative"))),
            Raw::Str(s) => s
                .trim()
                .parse()
                .map(Seed)
                .map_err(|_| serde::de::Error::custom(format!("seed {s:?} is not an unsigned 64-bit integer"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<Seed>,
    pub paths: u64,
    pub parallel: bool,
    pub out: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seed: None, paths: 1, parallel: true, out: "ospde-out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub dim: usize,
    pub extents: Vec<f64>,
    pub nodes: Vec<usize>,
    pub horizon: f64,
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { dim: 1, extents: vec![1.0], nodes: vec![33], horizon: 0.5, steps: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    Identity,
    ScalarSin,
    Anisotropic,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorConfig {
    pub kind: OperatorKind,
    /// Constant matrix for `anisotropic`, rows first.
    pub matrix: [[f64; 2]; 2],
    /// CSV with columns `t,x,y,a11,a12,a21,a22` for `tabulated`.
    pub table: String,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self { kind: OperatorKind::Identity, matrix: [[1.0, 0.0], [0.0, 1.0]], table: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialConfig {
    /// `xi(x)`; boundary nodes take the boundary value.
    pub expr: String,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { expr: "0".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    None,
    BrownianBridge,
    Exponential,
    RankOne,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub kernel: KernelKind,
    pub length: f64,
    /// `phi(x)` of the rank-one kernel.
    pub profile: String,
    /// CSV kernel matrix on interior nodes for `tabulated`.
    pub table: String,
    pub modes: usize,
    pub substeps: u32,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kernel: KernelKind::None,
            length: 0.3,
            profile: "1".into(),
            table: String::new(),
            modes: 8,
            substeps: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermKind {
    Zero,
    Linear,
    Constant,
    SinReaction,
    Expr,
    Additive,
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TermConfig {
    pub kind: TermKind,
    pub cy: f64,
    pub cz: f64,
    pub values: Vec<f64>,
    pub amplitude: f64,
    /// One expression per component, in `t, x, x2, y, z, z2`.
    pub exprs: Vec<String>,
    pub scale: f64,
    pub htilde: String,
    pub lipschitz_c: f64,
    pub lipschitz_z: f64,
}

impl Default for TermConfig {
    fn default() -> Self {
        Self {
            kind: TermKind::Zero,
            cy: 0.0,
            cz: 0.0,
            values: Vec::new(),
            amplitude: 0.0,
            exprs: Vec::new(),
            scale: 1.0,
            htilde: String::new(),
            lipschitz_c: 0.0,
            lipschitz_z: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TermsConfig {
    pub f: TermConfig,
    pub g: TermConfig,
    pub h: TermConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObstacleKind {
    None,
    Direct,
    Dominated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObstacleConfig {
    pub kind: ObstacleKind,
    /// `S(t, x)` for `direct`.
    pub expr: String,
    /// `S'(0, x)` for `dominated`.
    pub s0: String,
    pub gap: f64,
    pub f: TermConfig,
    pub g: TermConfig,
    pub h: TermConfig,
}

impl Default for ObstacleConfig {
    fn default() -> Self {
        Self {
            kind: ObstacleKind::None,
            expr: "0".into(),
            s0: "0".into(),
            gap: 0.0,
            f: TermConfig::default(),
            g: TermConfig::default(),
            h: TermConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryKind {
    Zero,
    Ito,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundaryConfig {
    pub kind: BoundaryKind,
    pub m: f64,
    pub b: f64,
    pub sigma: Vec<f64>,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self { kind: BoundaryKind::Zero, m: 0.0, b: 0.0, sigma: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Unconstrained,
    Penalized,
    Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemeConfig {
    pub method: Method,
    pub penalty: f64,
    pub lcp_tolerance: f64,
    pub lcp_max_sweeps: usize,
    pub lcp_relaxation: f64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self { method: Method::Unconstrained, penalty: 1e3, lcp_tolerance: 1e-12, lcp_max_sweeps: 10_000, lcp_relaxation: 1.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckName {
    Weak,
    Energy,
    Ito,
    Comparison,
    Skorohod,
    MaximumPrinciple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub checks: Vec<CheckName>,
    pub weak_tolerance: f64,
    pub weak_times: usize,
    pub energy_tolerance: f64,
    pub ito_tolerance: f64,
    pub skorohod_tolerance: f64,
    /// Second comparison problem: `xi + xi_shift` in the interior,
    /// `S + obstacle_shift`, `f + f_shift`.
    pub xi_shift: f64,
    pub obstacle_shift: f64,
    pub f_shift: f64,
    pub mp_p: f64,
    pub mp_theta: f64,
    pub mp_tolerance: f64,
    pub mp_xi_enlarge: f64,
    pub mp_f_enlarge: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            checks: vec![
                CheckName::Weak,
                CheckName::Energy,
                CheckName::Ito,
                CheckName::Comparison,
                CheckName::Skorohod,
                CheckName::MaximumPrinciple,
            ],
            weak_tolerance: 0.05,
            weak_times: 4,
            energy_tolerance: 0.5,
            ito_tolerance: 0.05,
            skorohod_tolerance: 1e-10,
            xi_shift: 0.1,
            obstacle_shift: 0.05,
            f_shift: 0.0,
            mp_p: 2.0,
            mp_theta: 0.5,
            mp_tolerance: 0.5,
            mp_xi_enlarge: 0.1,
            mp_f_enlarge: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapacityConfig {
    pub t1: f64,
    pub t2: f64,
    /// The compact is `{x : region(x) >= 0}`.
    pub region: String,
    pub levels: usize,
    pub base_cells: usize,
    pub base_steps: usize,
    pub method: Method,
    pub penalty: f64,
    /// When set, the run fails unless the finest value is within
    /// `tolerance` (relative) of it and the indicators are monotone.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
    pub tolerance: f64,
}

impl Default for CapacityConfig {
    fn default() -> Self {
        Self {
            t1: 0.25,
            t2: 0.25,
            region: "0.25 - abs(x - 0.5)".into(),
            levels: 3,
            base_cells: 32,
            base_steps: 512,
            method: Method::Projected,
            penalty: 1e4,
            expected: None,
            tolerance: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    /// Oracle when the problem is in its class, otherwise `fine`.
    Auto,
    Oracle,
    Fine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumKind {
    Continuum,
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceConfig {
    pub dts: Vec<f64>,
    pub refinement: u32,
    pub reference: ReferenceKind,
    pub oracle_modes: usize,
    pub spectrum: SpectrumKind,
    pub min_order: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            dts: vec![4e-3, 2e-3, 1e-3],
            refinement: 8,
            reference: ReferenceKind::Auto,
            oracle_modes: 64,
            spectrum: SpectrumKind::Continuum,
            min_order: 0.4,
        }
    }
}

/// Provenance block written into manifests and ignored on input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestInfo {
    pub version: String,
    pub subcommand: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestInfo>,
    pub run: RunConfig,
    pub grid: GridConfig,
    pub operator: OperatorConfig,
    pub initial: InitialConfig,
    pub noise: NoiseConfig,
    pub terms: TermsConfig,
    pub obstacle: ObstacleConfig,
    pub boundary: BoundaryConfig,
    pub scheme: SchemeConfig,
    pub verify: VerifyConfig,
    pub capacity: CapacityConfig,
    pub convergence: ConvergenceConfig,
}

impl ExperimentConfig {
    pub fn seed(&self) -> u64 {
        self.run.seed.map_or(0, |s| s.0)
    }

    /// Resolved configuration as re-runnable TOML.
    pub fn to_manifest(&self, subcommand: &str) -> String {
        let mut m = self.clone();
        m.manifest = Some(ManifestInfo { version: env!("CARGO_PKG_VERSION").into(), subcommand: subcommand.into() });
        toml::to_string(&m).expect("configuration serializes")
    }
}

/// Every problem found in a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} errors):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

const TERM_KEYS: &[&str] =
    &["kind", "cy", "cz", "values", "amplitude", "exprs", "scale", "htilde", "lipschitz_c", "lipschitz_z"];

/// Valid keys per table. Dotted names are nested tables.
const SCHEMA: &[(&str, &[&str])] = &[
    ("manifest", &["version", "subcommand"]),
    ("run", &["seed", "paths", "parallel", "out"]),
    ("grid", &["dim", "extents", "nodes", "horizon", "steps"]),
    ("operator", &["kind", "matrix", "table"]),
    ("initial", &["expr"]),
    ("noise", &["kernel", "length", "profile", "table", "modes", "substeps"]),
    ("terms", &["f", "g", "h"]),
    ("terms.f", TERM_KEYS),
    ("terms.g", TERM_KEYS),
    ("terms.h", TERM_KEYS),
    ("obstacle", &["kind", "expr", "s0", "gap", "f", "g", "h"]),
    ("obstacle.f", TERM_KEYS),
    ("obstacle.g", TERM_KEYS),
    ("obstacle.h", TERM_KEYS),
    ("boundary", &["kind", "m", "b", "sigma"]),
    ("scheme", &["method", "penalty", "lcp_tolerance", "lcp_max_sweeps", "lcp_relaxation"]),
    (
        "verify",
        &[
            "checks",
            "weak_tolerance",
            "weak_times",
            "energy_tolerance",
            "ito_tolerance",
            "skorohod_tolerance",
            "xi_shift",
            "obstacle_shift",
            "f_shift",
            "mp_p",
            "mp_theta",
                        "mp_tolerance",
            "mp_xi_enlarge",
            "mp_f_enlarge",
        ],
    ),
    (
        "capacity",
        &["t1", "t2", "region", "levels", "base_cells", "base_steps", "method", "penalty", "expected", "tolerance"],
    ),
    ("convergence", &["dts", "refinement", "reference", "oracle_modes", "spectrum", "min_order"]),
];

const REQUIRED: &[&str] = &["run", "grid"];

fn keys_of(section: &str) -> Option<&'static [&'static str]> {
    SCHEMA.iter().find(|(s, _)| *s == section).map(|(_, k)| *k)
}

fn suggestion(key: &str, valid: &[&str]) -> String {
    let best = valid
        .iter()
        .map(|v| (strsim::jaro_winkler(key, v), *v))
        .max_by(|a, b| a.0.total_cmp(&b.0));
    match best {
        Some((score, v)) if score >= 0.7 => format!("did you mean `{v}`?"),
        _ => format!("valid keys: {}", valid.join(", ")),
    }
}

fn walk(table: &toml::Table, section: &str, errors: &mut Vec<String>) {
    let valid = keys_of(section).unwrap_or(&[]);
    for (key, value) in table {
        let path = if section.is_empty() { key.clone() } else { format!("{section}.{key}") };
        if !valid.contains(&key.as_str()) {
            let where_ = if section.is_empty() { "top level".to_string() } else { format!("[{section}]") };
            errors.push(format!("unknown key `{key}` in {where_}; {}", suggestion(key, valid)));
            continue;
        }
        if keys_of(&path).is_some() {
            match value.as_table() {
                Some(t) => walk(t, &path, errors),
                None => errors.push(format!("`{path}` must be a table")),
            }
        }
    }
}

fn top_level_keys() -> Vec<&'static str> {
    SCHEMA.iter().map(|(s, _)| *s).filter(|s| !s.contains('.')).collect()
}

/// Parses configuration text. Relative table paths are resolved against
/// `base`.
pub fn parse_config_str(text: &str, base: Option<&Path>) -> Result<ExperimentConfig, ConfigErrors> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigErrors(vec![format!("syntax: {e}")]))?;
    let mut errors = Vec::new();
    let top = top_level_keys();
    for (key, value) in &table {
        if !top.contains(&key.as_str()) {
            errors.push(format!("unknown section `{key}`; {}", suggestion(key, &top)));
        } else if value.as_table().is_none() {
            errors.push(format!("`{key}` must be a table"));
        } else {
            walk(value.as_table().unwrap(), key, &mut errors);
        }
    }
    for r in REQUIRED {
        if !table.contains_key(*r) {
            errors.push(format!("missing required section [{r}]"));
        }
    }
    let mut cfg = ExperimentConfig::default();
    macro_rules! section {
        ($field:ident) => {
            if let Some(v) = table.get(stringify!($field)) {
                if v.is_table() {
                    match v.clone().try_into() {
                        Ok(s) => cfg.$field = s,
                        Err(e) => errors.push(format!("[{}]: {}", stringify!($field), type_error(e))),
                    }
                }
            }
        };
    }
    section!(manifest);
    section!(run);
    section!(grid);
    section!(operator);
    section!(initial);
    section!(noise);
    section!(terms);
    section!(obstacle);
    section!(boundary);
    section!(scheme);
    section!(verify);
    section!(capacity);
    section!(convergence);
    if let Some(base) = base {
        for t in [&mut cfg.operator.table, &mut cfg.noise.table] {
            if !t.is_empty() && Path::new(t.as_str()).is_relative() {
                *t = base.join(&*t).to_string_lossy().into_owned();
            }
        }
    }
    if table.contains_key("run") && cfg.run.seed.is_none() {
        errors.push("run.seed is required: every run must be reproducible".into());
    }
    validate(&cfg, &mut errors);
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(errors))
    }
}

fn type_error(e: toml::de::Error) -> String {
    e.message().trim().to_string()
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigErrors(vec![format!("cannot read {}: {e}", path.display())]))?;
    let base: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, Some(&base))
}

fn check_expr(name: &str, src: &str, errors: &mut Vec<String>) {
    if let Err(e) = Expr::parse(src) {
        errors.push(format!("{name}: {e}"));
    }
}

fn validate_term(name: &str, t: &TermConfig, role: char, dim: usize, errors: &mut Vec<String>) {
    let allowed: &[TermKind] = match role {
        'f' => &[TermKind::Zero, TermKind::Linear, TermKind::Constant, TermKind::SinReaction, TermKind::Expr],
        'g' => &[TermKind::Zero, TermKind::Linear, TermKind::Constant, TermKind::Expr],
        _ => &[TermKind::Zero, TermKind::Additive, TermKind::Multiplicative],
    };
    if !allowed.contains(&t.kind) {
        errors.push(format!("{name}.kind: {:?} is not available for {role}", t.kind));
        return;
    }
    let width = if role == 'f' { 1 } else { dim };
    match t.kind {
        TermKind::Constant if t.values.len() != width => {
            errors.push(format!("{name}.values: expected {width} values, got {}", t.values.len()))
        }
        TermKind::Expr => {
            if t.exprs.len() != width {
                errors.push(format!("{name}.exprs: expected {width} expressions, got {}", t.exprs.len()));
            }
            for (i, e) in t.exprs.iter().enumerate() {
                check_expr(&format!("{name}.exprs[{i}]"), e, errors);
            }
        }
        TermKind::Multiplicative => check_expr(&format!("{name}.htilde"), &t.htilde, errors),
        _ => {}
    }
    if t.lipschitz_c < 0.0 || t.lipschitz_z < 0.0 {
        errors.push(format!("{name}: Lipschitz constants must be nonnegative"));
    }
}

fn validate(cfg: &ExperimentConfig, errors: &mut Vec<String>) {
    if cfg.run.paths < 1 {
        errors.push("run.paths must be at least 1".into());
    }
    let g = &cfg.grid;
    if !(1..=2).contains(&g.dim) {
        errors.push(format!("grid.dim must be 1 or 2, got {}", g.dim));
    }
    if g.extents.len() != g.dim || g.nodes.len() != g.dim {
        errors.push(format!("grid.extents and grid.nodes need {} entries each", g.dim));
    }
    if g.extents.iter().any(|&l| !(l > 0.0)) {
        errors.push("grid.extents must be positive".into());
    }
    if g.nodes.iter().any(|&n| n < 3) {
        errors.push("grid.nodes must be at least 3 per axis".into());
    }
    if !(g.horizon > 0.0) || g.steps == 0 {
        errors.push("grid.horizon must be positive and grid.steps at least 1".into());
    }
    if cfg.operator.kind == OperatorKind::Tabulated && cfg.operator.table.is_empty() {
        errors.push("operator.table is required for kind = \"tabulated\"".into());
    }
    check_expr("initial.expr", &cfg.initial.expr, errors);
    let n = &cfg.noise;
    match n.kernel {
        KernelKind::RankOne => check_expr("noise.profile", &n.profile, errors),
        KernelKind::Exponential if !(n.length > 0.0) => errors.push("noise.length must be positive".into()),
        KernelKind::Tabulated if n.table.is_empty() => {
            errors.push("noise.table is required for kernel = \"tabulated\"".into())
        }
        _ => {}
    }
    if n.kernel != KernelKind::None && n.modes == 0 {
        errors.push("noise.modes must be at least 1".into());
    }
    if n.substeps == 0 {
        errors.push("noise.substeps must be at least 1".into());
    }
    for (name, t, role) in [("terms.f", &cfg.terms.f, 'f'), ("terms.g", &cfg.terms.g, 'g'), ("terms.h", &cfg.terms.h, 'h')] {
        validate_term(name, t, role, g.dim, errors);
    }
    if n.kernel == KernelKind::None && cfg.terms.h.kind != TermKind::Zero {
        errors.push("terms.h needs a noise kernel".into());
    }
    let o = &cfg.obstacle;
    match o.kind {
        ObstacleKind::Direct => check_expr("obstacle.expr", &o.expr, errors),
        ObstacleKind::Dominated => {
            check_expr("obstacle.s0", &o.s0, errors);
            for (name, t, role) in [("obstacle.f", &o.f, 'f'), ("obstacle.g", &o.g, 'g'), ("obstacle.h", &o.h, 'h')] {
                validate_term(name, t, role, g.dim, errors);
            }
        }
        ObstacleKind::None => {}
    }
    let s = &cfg.scheme;
    if !(s.penalty > 0.0) || !(s.lcp_tolerance > 0.0) || s.lcp_max_sweeps == 0 || !(s.lcp_relaxation > 0.0 && s.lcp_relaxation < 2.0) {
        errors.push("scheme: penalty and lcp_tolerance must be positive, lcp_max_sweeps at least 1, lcp_relaxation in (0, 2)".into());
    }
    let v = &cfg.verify;
    if v.weak_times == 0 {
        errors.push("verify.weak_times must be at least 1".into());
    }
    if !(v.mp_p >= 2.0) || !(0.0..1.0).contains(&v.mp_theta) {
        errors.push("verify.mp_p must be at least 2 and verify.mp_theta in [0, 1)".into());
    }
    let c = &cfg.capacity;
    check_expr("capacity.region", &c.region, errors);
    if !(0.0 <= c.t1 && c.t1 <= c.t2) {
        errors.push("capacity needs 0 <= t1 <= t2".into());
    }
    if c.levels == 0 || c.base_cells < 2 || c.base_steps == 0 {
        errors.push("capacity.levels, capacity.base_cells and capacity.base_steps must be positive".into());
    }
    if c.method == Method::Unconstrained {
        errors.push("capacity.method must be projected or penalized".into());
    }
    let cv = &cfg.convergence;
    if cv.dts.len() < 2 || cv.dts.iter().any(|&d| !(d > 0.0)) {
        errors.push("convergence.dts needs at least two positive steps".into());
    }
    if cv.refinement == 0 || cv.oracle_modes == 0 {
        errors.push("convergence.refinement and convergence.oracle_modes must be positive".into());
    }
}
