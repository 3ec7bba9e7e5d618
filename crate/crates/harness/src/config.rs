//! Experiment configuration: a TOML file with a fixed schema. Every key is
//! checked before anything runs and all violations are reported together.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use gk_core::continuum::{KernelField, ScalarField};
use gk_core::kinetic::{Marginal, Rho0Spec};
use gk_core::{FrequencyResponse, Scheme};
use sha2::{Digest, Sha256};
use toml::de::{DeTable, DeValue};
use toml::Spanned;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Constants,
    Simulate,
    Equivalence,
    Stability,
    ContinuumLimit,
    Picard,
    Contraction,
    L1Envelope,
    MeanField,
    KineticStability,
    WeakForm,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 11] = [
        Self::Constants,
        Self::Simulate,
        Self::Equivalence,
        Self::Stability,
        Self::ContinuumLimit,
        Self::Picard,
        Self::Contraction,
        Self::L1Envelope,
        Self::MeanField,
        Self::KineticStability,
        Self::WeakForm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Constants => "constants",
            Self::Simulate => "simulate",
            Self::Equivalence => "equivalence",
            Self::Stability => "stability",
            Self::ContinuumLimit => "continuum-limit",
            Self::Picard => "picard",
            Self::Contraction => "contraction",
            Self::L1Envelope => "l1-envelope",
            Self::MeanField => "mean-field",
            Self::KineticStability => "kinetic-stability",
            Self::WeakForm => "weak-form",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    fn needs_run(self) -> bool {
        !matches!(self, Self::Constants | Self::Picard)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One schema violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}: {}", self.line, self.path, self.message)
    }
}

/// All violations found in one file, in source order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, PartialEq)]
pub enum ResponseSpec {
    Linear,
    Relativistic { c: f64 },
    Custom { name: String },
}

impl ResponseSpec {
    pub fn build(&self) -> gk_core::Result<FrequencyResponse> {
        match self {
            Self::Linear => Ok(FrequencyResponse::linear()),
            Self::Relativistic { c } => FrequencyResponse::relativistic(*c),
            Self::Custom { name } => FrequencyResponse::catalog(name),
        }
    }
}

/// Phases or natural frequencies: explicit values or a generator.
#[derive(Debug, Clone, PartialEq)]
pub enum VectorSpec {
    List(Vec<f64>),
    /// i.i.d. uniform on [lo, hi).
    Uniform { lo: f64, hi: f64, seed: u64 },
    /// lo + (hi − lo)·i/(N − 1).
    Linspace { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum CouplingSpec {
    Constant(f64),
    Matrix(Vec<Vec<f64>>),
    /// Whitespace-separated rows, resolved against the config directory.
    File(PathBuf),
    /// Symmetric, entries i.i.d. uniform on [lo, hi).
    Uniform { lo: f64, hi: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub n: usize,
    pub kappa: f64,
    pub theta0: VectorSpec,
    pub nu: VectorSpec,
    pub phi: CouplingSpec,
}

/// Second ensemble of a stability run; missing entries copy the first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TildeSpec {
    pub theta0: Option<VectorSpec>,
    pub nu: Option<VectorSpec>,
    pub phi: Option<CouplingSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub t_end: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub stride: usize,
    /// ℓp exponent of stability runs; `f64::INFINITY` for the max norm.
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameworkSpec {
    pub theta_star: Option<f64>,
    pub a_g: Option<f64>,
    pub b_g: Option<f64>,
    pub nu_l: Option<f64>,
    pub nu_r: Option<f64>,
}

/// Catalog data function on [0,1]^d.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    Constant(f64),
    Linear { offset: f64, slope: Vec<f64> },
    Sine { amplitude: f64, wavenumber: f64, axis: usize, offset: f64 },
    Piecewise { level: usize, values: Vec<f64> },
}

impl FieldSpec {
    pub fn build(&self) -> ScalarField {
        match self {
            Self::Constant(c) => ScalarField::Constant(*c),
            Self::Linear { offset, slope } => ScalarField::Affine { offset: *offset, slope: slope.clone() },
            Self::Sine { amplitude, wavenumber, axis, offset } => {
                ScalarField::Sine { amplitude: *amplitude, wavenumber: *wavenumber, axis: *axis, offset: *offset }
            }
            Self::Piecewise { level, values } => ScalarField::Cellwise { level: *level, values: values.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Constant(f64),
    Cosine { base: f64, amplitude: f64 },
    Piecewise { level: usize, values: Vec<f64> },
}

impl KernelSpec {
    pub fn build(&self) -> KernelField {
        match self {
            Self::Constant(c) => KernelField::Constant(*c),
            Self::Cosine { base, amplitude } => KernelField::Cosine { base: *base, amplitude: *amplitude },
            Self::Piecewise { level, values } => KernelField::Cellwise { level: *level, values: values.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumSpec {
    pub d: usize,
    pub kappa: f64,
    pub theta0: FieldSpec,
    pub nu: FieldSpec,
    pub phi: KernelSpec,
    pub theta0_tilde: Option<FieldSpec>,
    pub level: usize,
    pub levels: Vec<usize>,
    pub level_ref: usize,
    pub b_phi: Option<f64>,
    pub picard_steps: usize,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KineticSpec {
    pub kappa: f64,
    pub rho0: Rho0Spec,
    pub theta_shift: Option<f64>,
    pub n: usize,
    pub n_list: Vec<usize>,
    pub q: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub response: ResponseSpec,
    pub ensemble: Option<EnsembleSpec>,
    pub ensemble_tilde: Option<TildeSpec>,
    pub run: Option<RunSpec>,
    pub framework: FrameworkSpec,
    pub continuum: Option<ContinuumSpec>,
    pub kinetic: Option<KineticSpec>,
    pub output: Option<PathBuf>,
    /// Directory against which relative file references resolve.
    pub base_dir: Option<PathBuf>,
    /// SHA-256 of the config text, hex.
    pub hash: String,
}

impl ExperimentConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }
}

/// Parses a config whose `experiment` key names the kind.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    parse_config_as(text, None)
}

/// Parses a config for `kind`; an `experiment` key, if present, must agree.
pub fn parse_config_as(text: &str, kind: Option<ExperimentKind>) -> Result<ExperimentConfig, ConfigErrors> {
    let mut r = Reader { text, errors: Vec::new() };
    let (doc, parse_errors) = DeTable::parse_recoverable(text);
    for e in parse_errors {
        r.parse_error(&e);
    }
    if !r.errors.is_empty() {
        return Err(ConfigErrors(r.errors));
    }
    let root = Tab { path: String::new(), table: doc.get_ref(), span: 0..0 };
    let config = r.document(&root, kind);
    if r.errors.is_empty() {
        Ok(config.expect("a config is built whenever no violation was recorded"))
    } else {
        r.errors.sort_by_key(|e| e.line);
        Err(ConfigErrors(r.errors))
    }
}

/// Reads and parses a file; relative paths inside resolve against its directory.
pub fn load_config(path: &Path, kind: Option<ExperimentKind>) -> Result<ExperimentConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigErrors(vec![ConfigError { path: path.display().to_string(), line: 0, message: e.to_string() }])
    })?;
    let mut config = parse_config_as(&text, kind)?;
    config.base_dir = path.parent().map(Path::to_path_buf);
    Ok(config)
}

struct Tab<'a, 'i> {
    path: String,
    table: &'a DeTable<'i>,
    span: Range<usize>,
}

impl<'a, 'i> Tab<'a, 'i> {
    fn key_path(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn get(&self, key: &str) -> Option<&'a Spanned<DeValue<'i>>> {
        self.table.get(key)
    }
}

struct Reader<'t> {
    text: &'t str,
    errors: Vec<ConfigError>,
}

fn type_name(v: &DeValue<'_>) -> &'static str {
    match v {
        DeValue::String(_) => "string",
        DeValue::Integer(_) => "integer",
        DeValue::Float(_) => "float",
        DeValue::Boolean(_) => "boolean",
        DeValue::Datetime(_) => "datetime",
        DeValue::Array(_) => "array",
        DeValue::Table(_) => "table",
    }
}

fn int_value(v: &DeValue<'_>) -> Option<i128> {
    match v {
        DeValue::Integer(i) => i128::from_str_radix(i.as_str(), i.radix()).ok(),
        _ => None,
    }
}

fn float_value(v: &DeValue<'_>) -> Option<f64> {
    match v {
        DeValue::Float(x) => x.as_str().parse().ok(),
        DeValue::Integer(_) => int_value(v).map(|i| i as f64),
        _ => None,
    }
}

impl Reader<'_> {
    fn line(&self, offset: usize) -> usize {
        let end = offset.min(self.text.len());
        self.text[..end].bytes().filter(|&b| b == b'\n').count() + 1
    }

    fn push(&mut self, path: impl Into<String>, span: &Range<usize>, message: impl Into<String>) {
        let line = self.line(span.start);
        self.errors.push(ConfigError { path: path.into(), line, message: message.into() });
    }

    fn parse_error(&mut self, e: &toml::de::Error) {
        let span = e.span().unwrap_or(0..0);
        let message = e.message().trim().to_string();
        let key = self.text.get(span.clone()).unwrap_or("").trim().trim_matches('"').to_string();
        let line = self.line(span.start);
        if message.contains("duplicate key") {
            let first = self.first_definition(&key, line);
            let message = match first {
                Some(l) => format!("duplicate key, first defined at line {l}, again at line {line}"),
                None => "duplicate key".to_string(),
            };
            let table = self.enclosing_header(line);
            let path = if table.is_empty() || table == key { key } else { format!("{table}.{key}") };
            self.errors.push(ConfigError { path, line, message });
        } else {
            self.errors.push(ConfigError { path: if key.is_empty() { "<document>".into() } else { key }, line, message });
        }
    }

    /// Name of the last table header at or above `line`.
    fn enclosing_header(&self, line: usize) -> String {
        let lines: Vec<&str> = self.text.lines().collect();
        lines[..line.min(lines.len())].iter().rev().find_map(|l| header(l)).unwrap_or_default()
    }

    /// Earliest line before `line` that defines `key` in the same table, or
    /// declares the same table header.
    fn first_definition(&self, key: &str, line: usize) -> Option<usize> {
        let lines: Vec<&str> = self.text.lines().collect();
        let header_of = |upto: usize| self.enclosing_header(upto);
        let target = header_of(line.saturating_sub(1));
        let dup_line = lines.get(line.saturating_sub(1)).copied().unwrap_or("");
        if let Some(h) = header(dup_line) {
            return (0..line - 1).find(|&i| header(lines[i]).as_deref() == Some(h.as_str())).map(|i| i + 1);
        }
        (0..line.saturating_sub(1))
            .find(|&i| {
                let l = lines[i].trim_start();
                let k = l.split('=').next().unwrap_or("").trim().trim_matches('"');
                l.contains('=') && header(l).is_none() && (k == key || k.ends_with(&format!(".{key}")))
                    && header_of(i) == target
            })
            .map(|i| i + 1)
    }

    fn allow(&mut self, tab: &Tab, allowed: &[&str]) {
        for (k, v) in tab.table.iter() {
            if !allowed.contains(&k.get_ref().as_ref()) {
                let span = k.span();
                self.push(
                    tab.key_path(k.get_ref()),
                    &span,
                    format!("unknown key; expected one of: {}", allowed.join(", ")),
                );
                let _ = v;
            }
        }
    }

    fn missing(&mut self, tab: &Tab, key: &str) {
        let span = tab.span.clone();
        self.push(tab.key_path(key), &span, "missing required key");
    }

    fn mismatch(&mut self, tab: &Tab, key: &str, v: &Spanned<DeValue>, expected: &str) {
        let found = type_name(v.get_ref());
        self.push(tab.key_path(key), &v.span(), format!("expected {expected}, found {found}"));
    }

    fn invalid(&mut self, tab: &Tab, key: &str, v: &Spanned<DeValue>, message: impl Into<String>) {
        self.push(tab.key_path(key), &v.span(), message);
    }

    fn f64(&mut self, tab: &Tab, key: &str) -> Option<f64> {
        let v = tab.get(key)?;
        match float_value(v.get_ref()) {
            Some(x) if x.is_finite() => Some(x),
            Some(_) => {
                self.invalid(tab, key, v, "must be finite");
                None
            }
            None => {
                self.mismatch(tab, key, v, "number");
                None
            }
        }
    }

    fn req_f64(&mut self, tab: &Tab, key: &str) -> Option<f64> {
        if tab.get(key).is_none() {
            self.missing(tab, key);
            return None;
        }
        self.f64(tab, key)
    }

    fn positive(&mut self, tab: &Tab, key: &str, x: Option<f64>) -> Option<f64> {
        match x {
            Some(v) if v <= 0.0 => {
                let span = tab.get(key).map(|s| s.span()).unwrap_or(tab.span.clone());
                self.push(tab.key_path(key), &span, format!("must be positive, got {v}"));
                None
            }
            other => other,
        }
    }

    fn uint(&mut self, tab: &Tab, key: &str) -> Option<u64> {
        let v = tab.get(key)?;
        match int_value(v.get_ref()) {
            Some(i) if (0..=u64::MAX as i128).contains(&i) => Some(i as u64),
            Some(i) => {
                self.invalid(tab, key, v, format!("must be a non-negative integer, got {i}"));
                None
            }
            None => {
                self.mismatch(tab, key, v, "integer");
                None
            }
        }
    }

    fn string(&mut self, tab: &Tab, key: &str) -> Option<String> {
        let v = tab.get(key)?;
        match v.get_ref() {
            DeValue::String(s) => Some(s.to_string()),
            _ => {
                self.mismatch(tab, key, v, "string");
                None
            }
        }
    }

    fn f64_list(&mut self, tab: &Tab, key: &str) -> Option<Vec<f64>> {
        let v = tab.get(key)?;
        self.f64_list_value(tab, key, v)
    }

    fn f64_list_value(&mut self, tab: &Tab, key: &str, v: &Spanned<DeValue>) -> Option<Vec<f64>> {
        let DeValue::Array(items) = v.get_ref() else {
            self.mismatch(tab, key, v, "array of numbers");
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            match float_value(item.get_ref()) {
                Some(x) if x.is_finite() => out.push(x),
                _ => {
                    let path = format!("{}[{i}]", tab.key_path(key));
                    self.push(path, &item.span(), format!("expected finite number, found {}", type_name(item.get_ref())));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn uint_list(&mut self, tab: &Tab, key: &str) -> Option<Vec<usize>> {
        let v = tab.get(key)?;
        let DeValue::Array(items) = v.get_ref() else {
            self.mismatch(tab, key, v, "array of integers");
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            match int_value(item.get_ref()) {
                Some(x) if x >= 0 => out.push(x as usize),
                _ => {
                    let path = format!("{}[{i}]", tab.key_path(key));
                    self.push(path, &item.span(), "expected non-negative integer");
                    return None;
                }
            }
        }
        Some(out)
    }

    fn table<'a, 'i>(&mut self, tab: &Tab<'a, 'i>, key: &str) -> Option<Tab<'a, 'i>> {
        let v = tab.get(key)?;
        match v.get_ref() {
            DeValue::Table(t) => Some(Tab { path: tab.key_path(key), table: t, span: v.span() }),
            _ => {
                self.mismatch(tab, key, v, "table");
                None
            }
        }
    }

    fn document(&mut self, root: &Tab, forced: Option<ExperimentKind>) -> Option<ExperimentConfig> {
        self.allow(
            root,
            &[
                "experiment",
                "response",
                "ensemble",
                "ensemble_tilde",
                "run",
                "framework",
                "continuum",
                "kinetic",
                "output",
            ],
        );
        let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
        let declared = match root.get("experiment") {
            Some(v) => match self.string(root, "experiment") {
                Some(s) => match ExperimentKind::parse(&s) {
                    Some(k) => Some(k),
                    None => {
                        self.invalid(root, "experiment", v, format!("unknown kind '{s}'; expected one of: {}", names.join(", ")));
                        None
                    }
                },
                None => None,
            },
            None => None,
        };
        let kind = match (forced, declared) {
            (Some(f), Some(d)) if f != d => {
                let span = root.get("experiment").map(|v| v.span()).unwrap_or(0..0);
                self.push("experiment", &span, format!("config declares '{d}' but is run as '{f}'"));
                None
            }
            (Some(f), _) => Some(f),
            (None, Some(d)) => Some(d),
            (None, None) => {
                if root.get("experiment").is_none() {
                    self.missing(root, "experiment");
                }
                None
            }
        };

        let response = match self.table(root, "response") {
            Some(t) => self.response(&t),
            None => {
                if root.get("response").is_none() {
                    self.missing(root, "response");
                }
                None
            }
        };
        let ensemble = self.table(root, "ensemble").and_then(|t| self.ensemble(&t));
        let ensemble_tilde = self.table(root, "ensemble_tilde").map(|t| self.tilde(&t));
        let run = self.table(root, "run").and_then(|t| self.run(&t));
        let framework = self.table(root, "framework").map(|t| self.framework(&t)).unwrap_or_default();
        let continuum = self.table(root, "continuum").and_then(|t| self.continuum(&t));
        let kinetic = self.table(root, "kinetic").and_then(|t| self.kinetic(&t));
        let output = match self.table(root, "output") {
            Some(t) => {
                self.allow(&t, &["path"]);
                self.string(&t, "path").map(PathBuf::from)
            }
            None => None,
        };

        let kind = kind?;
        self.requirements(root, kind, &framework);
        if kind == ExperimentKind::Contraction {
            if let Some(c) = &continuum {
                if c.theta0_tilde.is_none() {
                    let t = self.table(root, "continuum").expect("continuum table parsed above");
                    self.missing(&t, "theta0_tilde");
                }
            }
        }
        if kind == ExperimentKind::KineticStability {
            if let Some(k) = &kinetic {
                if k.theta_shift.is_none() {
                    let t = self.table(root, "kinetic").expect("kinetic table parsed above");
                    self.missing(&t, "theta_shift");
                }
            }
        }
        if let (Some(e), Some(t)) = (&ensemble, &ensemble_tilde) {
            self.tilde_lengths(root, e, t);
        }
        Some(ExperimentConfig {
            kind,
            response: response?,
            ensemble,
            ensemble_tilde,
            run,
            framework,
            continuum,
            kinetic,
            output,
            base_dir: None,
            hash: hex::encode(Sha256::digest(self.text.as_bytes())),
        })
    }

    fn requirements(&mut self, root: &Tab, kind: ExperimentKind, fw: &FrameworkSpec) {
        use ExperimentKind::*;
        let mut tables: Vec<&str> = Vec::new();
        let mut fw_keys: Vec<(&str, Option<f64>)> = Vec::new();
        if kind.needs_run() {
            tables.push("run");
        }
        match kind {
            Constants => fw_keys.extend([("a_G", fw.a_g), ("b_G", fw.b_g)]),
            Simulate | Equivalence => tables.push("ensemble"),
            Stability => {
                tables.extend(["ensemble", "ensemble_tilde"]);
                fw_keys.extend([("theta_star", fw.theta_star), ("a_G", fw.a_g), ("b_G", fw.b_g)]);
            }
            ContinuumLimit => {
                tables.push("continuum");
                fw_keys.extend([("theta_star", fw.theta_star), ("a_G", fw.a_g), ("b_G", fw.b_g)]);
            }
            Picard | L1Envelope => tables.push("continuum"),
            Contraction => {
                tables.push("continuum");
                fw_keys.push(("theta_star", fw.theta_star));
            }
            MeanField | KineticStability | WeakForm => {
                tables.push("kinetic");
                fw_keys.extend([("theta_star", fw.theta_star), ("nu_l", fw.nu_l), ("nu_r", fw.nu_r)]);
            }
        }
        for t in tables {
            if root.get(t).is_none() {
                self.push(t, &(0..0), format!("missing required table for experiment '{kind}'"));
            }
        }
        let fw_tab = root.get("framework");
        for (k, v) in fw_keys {
            if v.is_none() {
                let span = fw_tab.map(|s| s.span()).unwrap_or(0..0);
                if fw_tab.is_none() || !matches!(fw_tab.map(|s| s.get_ref()), Some(DeValue::Table(t)) if t.get(k).is_some()) {
                    self.push(format!("framework.{k}"), &span, format!("missing required key for experiment '{kind}'"));
                }
            }
        }
    }

    fn response(&mut self, t: &Tab) -> Option<ResponseSpec> {
        self.allow(t, &["kind", "c", "name"]);
        let Some(kind) = t.get("kind") else {
            self.missing(t, "kind");
            return None;
        };
        let kind_name = self.string(t, "kind")?;
        let c = self.f64(t, "c");
        let name = self.string(t, "name");
        let spec = match kind_name.as_str() {
            "linear" => Some(ResponseSpec::Linear),
            "relativistic" => {
                if t.get("c").is_none() {
                    self.missing(t, "c");
                    None
                } else {
                    self.positive(t, "c", c).map(|c| ResponseSpec::Relativistic { c })
                }
            }
            "custom" => {
                if t.get("name").is_none() {
                    self.missing(t, "name");
                }
                name.clone().map(|name| ResponseSpec::Custom { name })
            }
            other => {
                self.invalid(t, "kind", kind, format!("unknown response '{other}'; expected linear, relativistic or custom"));
                None
            }
        };
        if kind_name != "relativistic" {
            if let Some(v) = t.get("c") {
                self.invalid(t, "c", v, "only applies to relativistic responses");
            }
        }
        if kind_name != "custom" {
            if let Some(v) = t.get("name") {
                self.invalid(t, "name", v, "only applies to custom responses");
            }
        }
        let spec = spec?;
        if let Err(e) = spec.build() {
            let key = if matches!(spec, ResponseSpec::Custom { .. }) { "name" } else { "kind" };
            let v = t.get(key).expect("key checked above");
            self.invalid(t, key, v, e.to_string());
            return None;
        }
        Some(spec)
    }

    fn vector(&mut self, t: &Tab, key: &str, n: Option<usize>) -> Option<VectorSpec> {
        let v = t.get(key)?;
        match v.get_ref() {
            DeValue::Array(_) => {
                let list = self.f64_list_value(t, key, v)?;
                if let Some(n) = n {
                    if list.len() != n {
                        self.invalid(t, key, v, format!("has {} entries, N = {n}", list.len()));
                        return None;
                    }
                }
                Some(VectorSpec::List(list))
            }
            DeValue::Table(_) => {
                let g = self.table(t, key)?;
                self.allow(&g, &["generator", "lo", "hi", "seed"]);
                let gen = match g.get("generator") {
                    Some(_) => self.string(&g, "generator")?,
                    None => {
                        self.missing(&g, "generator");
                        return None;
                    }
                };
                let (lo, hi) = (self.req_f64(&g, "lo"), self.req_f64(&g, "hi"));
                let (lo, hi) = (lo?, hi?);
                if !(lo < hi) {
                    self.invalid(t, key, v, format!("empty range [{lo}, {hi}]"));
                    return None;
                }
                match gen.as_str() {
                    "uniform" => {
                        if g.get("seed").is_none() {
                            self.missing(&g, "seed");
                            return None;
                        }
                        let seed = self.uint(&g, "seed")?;
                        Some(VectorSpec::Uniform { lo, hi, seed })
                    }
                    "linspace" => {
                        if let Some(s) = g.get("seed") {
                            self.invalid(&g, "seed", s, "linspace takes no seed");
                        }
                        Some(VectorSpec::Linspace { lo, hi })
                    }
                    other => {
                        let gv = g.get("generator").expect("checked above");
                        self.invalid(&g, "generator", gv, format!("unknown generator '{other}'; expected uniform or linspace"));
                        None
                    }
                }
            }
            _ => {
                self.mismatch(t, key, v, "array or generator table");
                None
            }
        }
    }

    fn coupling(&mut self, t: &Tab, key: &str, n: Option<usize>) -> Option<CouplingSpec> {
        let v = t.get(key)?;
        match v.get_ref() {
            DeValue::Integer(_) | DeValue::Float(_) => {
                let c = self.f64(t, key)?;
                self.positive(t, key, Some(c)).map(CouplingSpec::Constant)
            }
            DeValue::Table(_) => {
                let g = self.table(t, key)?;
                if g.get("file").is_some() {
                    self.allow(&g, &["file"]);
                    return self.string(&g, "file").map(|f| CouplingSpec::File(PathBuf::from(f)));
                }
                if let Some(m) = g.get("matrix") {
                    self.allow(&g, &["matrix"]);
                    let DeValue::Array(rows) = m.get_ref() else {
                        self.mismatch(&g, "matrix", m, "array of rows");
                        return None;
                    };
                    let mut out = Vec::new();
                    for (i, row) in rows.iter().enumerate() {
                        let row = self.f64_list_value(&g, &format!("matrix[{i}]"), row)?;
                        out.push(row);
                    }
                    if let Some(n) = n {
                        if out.len() != n || out.iter().any(|r| r.len() != n) {
                            self.invalid(&g, "matrix", m, format!("must be {n}x{n}"));
                            return None;
                        }
                    }
                    return Some(CouplingSpec::Matrix(out));
                }
                self.allow(&g, &["generator", "lo", "hi", "seed"]);
                let gen = match g.get("generator") {
                    Some(_) => self.string(&g, "generator")?,
                    None => {
                        self.push(g.path.clone(), &v.span(), "expected a number, {file = ...}, {matrix = ...} or {generator = ...}");
                        return None;
                    }
                };
                if gen != "uniform" {
                    let gv = g.get("generator").expect("checked above");
                    self.invalid(&g, "generator", gv, format!("unknown generator '{gen}'; expected uniform"));
                    return None;
                }
                let (lo, hi, seed) = (self.req_f64(&g, "lo"), self.req_f64(&g, "hi"), self.uint(&g, "seed"));
                if g.get("seed").is_none() {
                    self.missing(&g, "seed");
                }
                let (lo, hi, seed) = (lo?, hi?, seed?);
                if !(0.0 < lo && lo < hi) {
                    self.invalid(t, key, v, format!("need 0 < lo < hi, got [{lo}, {hi}]"));
                    return None;
                }
                Some(CouplingSpec::Uniform { lo, hi, seed })
            }
            _ => {
                self.mismatch(t, key, v, "number or table");
                None
            }
        }
    }

    fn ensemble(&mut self, t: &Tab) -> Option<EnsembleSpec> {
        self.allow(t, &["N", "kappa", "theta0", "nu", "phi"]);
        if t.get("N").is_none() {
            self.missing(t, "N");
        }
        let n = self.uint(t, "N").map(|n| n as usize);
        if n == Some(0) {
            self.invalid(t, "N", t.get("N").expect("present"), "must be at least 1");
        }
        let kappa = self.req_f64(t, "kappa");
        let kappa = self.positive(t, "kappa", kappa);
        for k in ["theta0", "nu"] {
            if t.get(k).is_none() {
                self.missing(t, k);
            }
        }
        let theta0 = self.vector(t, "theta0", n);
        let nu = self.vector(t, "nu", n);
        let phi = if t.get("phi").is_some() { self.coupling(t, "phi", n) } else { Some(CouplingSpec::Constant(1.0)) };
        Some(EnsembleSpec { n: n.filter(|&n| n > 0)?, kappa: kappa?, theta0: theta0?, nu: nu?, phi: phi? })
    }

    fn tilde(&mut self, t: &Tab) -> TildeSpec {
        self.allow(t, &["theta0", "nu", "phi"]);
        TildeSpec {
            theta0: self.vector(t, "theta0", None),
            nu: self.vector(t, "nu", None),
            phi: self.coupling(t, "phi", None),
        }
    }

    fn tilde_lengths(&mut self, root: &Tab, e: &EnsembleSpec, t: &TildeSpec) {
        let Some(tab) = root.get("ensemble_tilde") else { return };
        for (k, spec) in [("theta0", &t.theta0), ("nu", &t.nu)] {
            if let Some(VectorSpec::List(v)) = spec {
                if v.len() != e.n {
                    self.push(format!("ensemble_tilde.{k}"), &tab.span(), format!("has {} entries, N = {}", v.len(), e.n));
                }
            }
        }
    }

    fn run(&mut self, t: &Tab) -> Option<RunSpec> {
        self.allow(t, &["t_end", "dt", "scheme", "stride", "p"]);
        let t_end = self.req_f64(t, "t_end");
        let t_end = self.positive(t, "t_end", t_end);
        let dt = self.f64(t, "dt");
        let dt = self.positive(t, "dt", dt);
        let dt_ok = t.get("dt").is_none() || dt.is_some();
        let scheme = match t.get("scheme") {
            Some(v) => {
                let name = self.string(t, "scheme")?;
                match Scheme::parse(&name) {
                    Ok(s) => Some(s),
                    Err(_) => {
                        self.invalid(t, "scheme", v, format!("unknown scheme '{name}'; expected rk4 or rkf45"));
                        None
                    }
                }
            }
            None => Some(Scheme::Rk4),
        };
        let stride = match t.get("stride") {
            Some(v) => match self.uint(t, "stride") {
                Some(0) => {
                    self.invalid(t, "stride", v, "must be at least 1");
                    None
                }
                s => s.map(|s| s as usize),
            },
            None => Some(1),
        };
        let p = match t.get("p") {
            Some(v) => match v.get_ref() {
                DeValue::String(s) if s == "inf" => Some(f64::INFINITY),
                DeValue::Float(_) | DeValue::Integer(_) => match float_value(v.get_ref()) {
                    Some(p) if p >= 1.0 => Some(p),
                    _ => {
                        self.invalid(t, "p", v, "must be ≥ 1 or \"inf\"");
                        None
                    }
                },
                _ => {
                    self.mismatch(t, "p", v, "number or \"inf\"");
                    None
                }
            },
            None => Some(2.0),
        };
        if !dt_ok {
            return None;
        }
        Some(RunSpec { t_end: t_end?, dt: dt.unwrap_or(1e-3), scheme: scheme?, stride: stride?, p: p? })
    }

    fn framework(&mut self, t: &Tab) -> FrameworkSpec {
        self.allow(t, &["theta_star", "a_G", "b_G", "nu_l", "nu_r"]);
        let theta_star = self.f64(t, "theta_star");
        let theta_star = match theta_star {
            Some(th) if !(th > 0.0 && th < std::f64::consts::FRAC_PI_2) => {
                self.invalid(t, "theta_star", t.get("theta_star").expect("present"), "must lie in (0, π/2)");
                None
            }
            other => other,
        };
        let spec = FrameworkSpec {
            theta_star,
            a_g: self.f64(t, "a_G"),
            b_g: self.f64(t, "b_G"),
            nu_l: self.f64(t, "nu_l"),
            nu_r: self.f64(t, "nu_r"),
        };
        if let (Some(a), Some(b)) = (spec.a_g, spec.b_g) {
            if !(a < b) {
                self.invalid(t, "b_G", t.get("b_G").expect("present"), format!("a_G = {a} must be below b_G = {b}"));
            }
        }
        if let (Some(a), Some(b)) = (spec.nu_l, spec.nu_r) {
            if !(a < b) {
                self.invalid(t, "nu_r", t.get("nu_r").expect("present"), format!("nu_l = {a} must be below nu_r = {b}"));
            }
        }
        spec
    }

    fn field(&mut self, t: &Tab, key: &str, d: usize) -> Option<FieldSpec> {
        let v = t.get(key)?;
        if let DeValue::Integer(_) | DeValue::Float(_) = v.get_ref() {
            return self.f64(t, key).map(FieldSpec::Constant);
        }
        let g = self.table(t, key)?;
        let kind = match g.get("kind") {
            Some(_) => self.string(&g, "kind")?,
            None => {
                self.missing(&g, "kind");
                return None;
            }
        };
        let kv = g.get("kind").expect("checked above");
        match kind.as_str() {
            "constant" => {
                self.allow(&g, &["kind", "value"]);
                self.req_f64(&g, "value").map(FieldSpec::Constant)
            }
            "linear" => {
                self.allow(&g, &["kind", "offset", "slope"]);
                let offset = self.f64(&g, "offset").unwrap_or(0.0);
                let slope = match g.get("slope") {
                    Some(s) if matches!(s.get_ref(), DeValue::Array(_)) => self.f64_list(&g, "slope")?,
                    Some(_) => vec![self.f64(&g, "slope")?],
                    None => {
                        self.missing(&g, "slope");
                        return None;
                    }
                };
                if slope.len() != d {
                    self.invalid(&g, "slope", g.get("slope").expect("present"), format!("needs {d} entries for d = {d}"));
                    return None;
                }
                Some(FieldSpec::Linear { offset, slope })
            }
            "sine" => {
                self.allow(&g, &["kind", "amplitude", "wavenumber", "axis", "offset"]);
                let amplitude = self.req_f64(&g, "amplitude");
                let wavenumber = self.f64(&g, "wavenumber").unwrap_or(1.0);
                let axis = self.uint(&g, "axis").unwrap_or(0) as usize;
                let offset = self.f64(&g, "offset").unwrap_or(0.0);
                if axis >= d {
                    self.invalid(&g, "axis", g.get("axis").expect("present"), format!("must be below d = {d}"));
                    return None;
                }
                Some(FieldSpec::Sine { amplitude: amplitude?, wavenumber, axis, offset })
            }
            other => match piecewise_level(other) {
                Some(level) => {
                    self.allow(&g, &["kind", "values"]);
                    if g.get("values").is_none() {
                        self.missing(&g, "values");
                        return None;
                    }
                    let values = self.f64_list(&g, "values")?;
                    let cells = 1usize << (level * d);
                    if values.len() != cells {
                        self.invalid(&g, "values", g.get("values").expect("present"), format!("needs {cells} entries"));
                        return None;
                    }
                    Some(FieldSpec::Piecewise { level, values })
                }
                None => {
                    self.invalid(&g, "kind", kv, format!("unknown data function '{other}'; expected {}", FIELD_CATALOG.join(", ")));
                    None
                }
            },
        }
    }

    fn kernel(&mut self, t: &Tab, key: &str, d: usize) -> Option<KernelSpec> {
        let v = t.get(key)?;
        if let DeValue::Integer(_) | DeValue::Float(_) = v.get_ref() {
            return self.f64(t, key).map(KernelSpec::Constant);
        }
        let g = self.table(t, key)?;
        let kind = match g.get("kind") {
            Some(_) => self.string(&g, "kind")?,
            None => {
                self.missing(&g, "kind");
                return None;
            }
        };
        let kv = g.get("kind").expect("checked above");
        match kind.as_str() {
            "constant" => {
                self.allow(&g, &["kind", "value"]);
                self.req_f64(&g, "value").map(KernelSpec::Constant)
            }
            "cosine" => {
                self.allow(&g, &["kind", "base", "amplitude"]);
                let base = self.req_f64(&g, "base");
                let amplitude = self.req_f64(&g, "amplitude");
                Some(KernelSpec::Cosine { base: base?, amplitude: amplitude? })
            }
            other => match piecewise_level(other) {
                Some(level) => {
                    self.allow(&g, &["kind", "values"]);
                    if g.get("values").is_none() {
                        self.missing(&g, "values");
                        return None;
                    }
                    let values = self.f64_list(&g, "values")?;
                    let cells = 1usize << (2 * level * d);
                    if values.len() != cells {
                        self.invalid(&g, "values", g.get("values").expect("present"), format!("needs {cells} entries"));
                        return None;
                    }
                    Some(KernelSpec::Piecewise { level, values })
                }
                None => {
                    self.invalid(&g, "kind", kv, format!("unknown kernel '{other}'; expected constant, cosine, piecewise-level-M"));
                    None
                }
            },
        }
    }

    fn continuum(&mut self, t: &Tab) -> Option<ContinuumSpec> {
        self.allow(
            t,
            &[
                "d",
                "kappa",
                "theta0",
                "nu",
                "phi",
                "theta0_tilde",
                "level",
                "levels",
                "level_ref",
                "b_phi",
                "picard_steps",
                "picard_tol",
                "picard_max_iter",
            ],
        );
        let d = self.uint(t, "d").unwrap_or(1) as usize;
        if d == 0 || d > 3 {
            self.invalid(t, "d", t.get("d").expect("present"), "must be 1, 2 or 3");
            return None;
        }
        let kappa = self.req_f64(t, "kappa");
        let kappa = self.positive(t, "kappa", kappa);
        for k in ["theta0", "nu"] {
            if t.get(k).is_none() {
                self.missing(t, k);
            }
        }
        let theta0 = self.field(t, "theta0", d);
        let nu = self.field(t, "nu", d);
        let phi = if t.get("phi").is_some() { self.kernel(t, "phi", d) } else { Some(KernelSpec::Constant(1.0)) };
        let theta0_tilde = self.field(t, "theta0_tilde", d);
        let level = self.uint(t, "level").unwrap_or(6) as usize;
        let levels = self.uint_list(t, "levels").unwrap_or_else(|| (3..=8).collect());
        let level_ref = self.uint(t, "level_ref").unwrap_or(10) as usize;
        if let Some(&bad) = levels.iter().find(|&&l| l > level_ref) {
            self.invalid(t, "levels", t.get("levels").expect("present"), format!("level {bad} exceeds level_ref = {level_ref}"));
        }
        if level > level_ref && t.get("level").is_some() {
            self.invalid(t, "level", t.get("level").expect("present"), format!("exceeds level_ref = {level_ref}"));
        }
        let b_phi = self.f64(t, "b_phi");
        let b_phi = self.positive(t, "b_phi", b_phi);
        let picard_steps = self.uint(t, "picard_steps").unwrap_or(64) as usize;
        let picard_tol = self.f64(t, "picard_tol");
        let picard_tol = self.positive(t, "picard_tol", picard_tol).unwrap_or(1e-12);
        let picard_max_iter = self.uint(t, "picard_max_iter").unwrap_or(200) as usize;
        Some(ContinuumSpec {
            d,
            kappa: kappa?,
            theta0: theta0?,
            nu: nu?,
            phi: phi?,
            theta0_tilde,
            level,
            levels,
            level_ref,
            b_phi,
            picard_steps: picard_steps.max(1),
            picard_tol,
            picard_max_iter: picard_max_iter.max(1),
        })
    }

    fn marginal(&mut self, t: &Tab, key: &str) -> Option<Marginal> {
        let v = t.get(key)?;
        if let DeValue::Integer(_) | DeValue::Float(_) = v.get_ref() {
            return self.f64(t, key).map(Marginal::Point);
        }
        let g = self.table(t, key)?;
        let kind = match g.get("kind") {
            Some(_) => self.string(&g, "kind")?,
            None => {
                self.missing(&g, "kind");
                return None;
            }
        };
        let kv = g.get("kind").expect("checked above");
        let m = match kind.as_str() {
            "uniform" => {
                self.allow(&g, &["kind", "lo", "hi"]);
                let (lo, hi) = (self.req_f64(&g, "lo"), self.req_f64(&g, "hi"));
                Marginal::Uniform { lo: lo?, hi: hi? }
            }
            "normal" => {
                self.allow(&g, &["kind", "mean", "sd", "lo", "hi"]);
                let (mean, sd) = (self.req_f64(&g, "mean"), self.req_f64(&g, "sd"));
                let (lo, hi) = (self.req_f64(&g, "lo"), self.req_f64(&g, "hi"));
                Marginal::TruncatedNormal { mean: mean?, sd: sd?, lo: lo?, hi: hi? }
            }
            "point" => {
                self.allow(&g, &["kind", "value"]);
                Marginal::Point(self.req_f64(&g, "value")?)
            }
            other => {
                self.invalid(&g, "kind", kv, format!("unknown marginal '{other}'; expected uniform, normal or point"));
                return None;
            }
        };
        Some(m)
    }

    fn kinetic(&mut self, t: &Tab) -> Option<KineticSpec> {
        self.allow(t, &["kappa", "theta", "nu", "theta_shift", "n", "n_list", "q", "seed"]);
        let kappa = self.req_f64(t, "kappa");
        let kappa = self.positive(t, "kappa", kappa);
        for k in ["theta", "nu"] {
            if t.get(k).is_none() {
                self.missing(t, k);
            }
        }
        let theta = self.marginal(t, "theta");
        let nu = self.marginal(t, "nu");
        let theta_shift = self.f64(t, "theta_shift");
        let n = self.uint(t, "n").unwrap_or(64) as usize;
        let n_list = self.uint_list(t, "n_list").unwrap_or_else(|| vec![50, 100, 200, 400]);
        if let Some(v) = t.get("n_list") {
            if n_list.len() < 2 || n_list.contains(&0) {
                self.invalid(t, "n_list", v, "needs at least two positive sample sizes");
            }
        }
        if n == 0 {
            self.invalid(t, "n", t.get("n").expect("present"), "must be at least 1");
        }
        let q = match t.get("q") {
            Some(v) => match self.f64(t, "q") {
                Some(q) if q >= 1.0 => Some(q),
                Some(q) => {
                    self.invalid(t, "q", v, format!("must be ≥ 1, got {q}"));
                    None
                }
                None => None,
            },
            None => Some(2.0),
        };
        let seed = self.uint(t, "seed").unwrap_or(0);
        let rho0 = match Rho0Spec::new(theta?, nu?) {
            Ok(r) => r,
            Err(e) => {
                self.push(t.path.clone(), &t.span, e.to_string());
                return None;
            }
        };
        Some(KineticSpec { kappa: kappa?, rho0, theta_shift, n, n_list, q: q?, seed })
    }
}

/// Built-in data functions for continuum configs.
pub const FIELD_CATALOG: [&str; 4] = ["constant", "linear", "sine", "piecewise-level-M"];

fn piecewise_level(kind: &str) -> Option<usize> {
    kind.strip_prefix("piecewise-level-")?.parse().ok()
}

/// Name inside a `[name]` or `[[name]]` header line.
fn header(line: &str) -> Option<String> {
    let l = line.trim();
    let l = l.split('#').next().unwrap_or("").trim();
    if l.starts_with('[') && l.ends_with(']') {
        Some(l.trim_matches(|c| c == '[' || c == ']').trim().to_string())
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_kind_round_trips_its_name() {
        for k in ExperimentKind::ALL {
            assert_eq!(ExperimentKind::parse(k.name()), Some(k));
        }
        assert_eq!(ExperimentKind::parse("bogus"), None);
    }

    #[test]
    fn headers() {
        assert_eq!(header("[run] # c").as_deref(), Some("run"));
        assert_eq!(header("x = 1"), None);
        assert_eq!(piecewise_level("piecewise-level-3"), Some(3));
        assert_eq!(piecewise_level("piecewise"), None);
    }
}
