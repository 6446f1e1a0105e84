//! Flat, dotted-key experiment configuration.
//!
//! A config is TOML restricted to scalar and array values under dotted keys,
//! for example
//!
//! ```toml
//! kind = "balance"
//! seed = 7
//! d = 64
//! arch.activation = "tanh"
//! layer.1.width = 2
//! ```
//!
//! Every key has a default except `kind`, unknown keys are rejected, and
//! [`ExperimentConfig::to_toml`] writes a config that parses back to an equal
//! value.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use toml::Value;

use crate::advsearch::{SearchConfig, TheoremKind};
use crate::convnet::{Activation, ConvLayerSpec, InitKind, NetworkSpec};
use crate::error::{Error, Result};
use crate::isolab::ProbeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    HaarTest,
    KernelCheck,
    Balance,
    AdvSearch,
    TheoremTrial,
    Isoperimetry,
    Concentration,
    Separate,
    Sudakov,
    SphereTail,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 10] = [
        ExperimentKind::HaarTest,
        ExperimentKind::KernelCheck,
        ExperimentKind::Balance,
        ExperimentKind::AdvSearch,
        ExperimentKind::TheoremTrial,
        ExperimentKind::Isoperimetry,
        ExperimentKind::Concentration,
        ExperimentKind::Separate,
        ExperimentKind::Sudakov,
        ExperimentKind::SphereTail,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::HaarTest => "haar-test",
            ExperimentKind::KernelCheck => "kernel-check",
            ExperimentKind::Balance => "balance",
            ExperimentKind::AdvSearch => "adv-search",
            ExperimentKind::TheoremTrial => "theorem-trial",
            ExperimentKind::Isoperimetry => "isoperimetry",
            ExperimentKind::Concentration => "concentration",
            ExperimentKind::Separate => "separate",
            ExperimentKind::Sudakov => "sudakov",
            ExperimentKind::SphereTail => "sphere-tail",
        }
    }

    /// Whether the kind reads the `arch` or `layer` keys.
    pub fn uses_network(self) -> bool {
        matches!(
            self,
            ExperimentKind::KernelCheck
                | ExperimentKind::Balance
                | ExperimentKind::AdvSearch
                | ExperimentKind::TheoremTrial
                | ExperimentKind::Separate
        )
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|k| k.as_str()).collect();
                format!("unknown experiment kind `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// How the base point `x0` is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputKind {
    /// Independent uniform columns of norm `sqrt(d)`.
    Sphere,
    /// Column `t` is `sqrt(d) e_{t mod d}`.
    Axis,
}

impl FromStr for InputKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sphere" => Ok(InputKind::Sphere),
            "axis" => Ok(InputKind::Axis),
            other => Err(format!("unknown input kind `{other}` (expected sphere or axis)")),
        }
    }
}

impl InputKind {
    fn as_str(self) -> &'static str {
        match self {
            InputKind::Sphere => "sphere",
            InputKind::Axis => "axis",
        }
    }
}

/// Shorthand architecture: a convolution of the given width and stride, then
/// `depth - 2` pointwise layers, then a linear scalar readout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArchConfig {
    pub width: usize,
    pub stride: usize,
    pub channels: usize,
    pub depth: usize,
    pub activation: Activation,
    pub init: InitKind,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            width: 2,
            stride: 1,
            channels: 64,
            depth: 2,
            activation: Activation::Relu,
            init: InitKind::XavierGaussian,
        }
    }
}

/// One explicitly configured layer; `width = 0` means the full input width.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerConfig {
    pub width: usize,
    pub stride: usize,
    pub channels: usize,
    pub activation: Activation,
    pub init: InitKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsoConfig {
    pub set: String,
    /// Blow-up radii as multiples of `||x0||_sp`.
    pub scales: Vec<f64>,
    pub probes: usize,
    pub strata: usize,
    pub measure_samples: usize,
}

impl Default for IsoConfig {
    fn default() -> Self {
        let p = ProbeConfig::default();
        Self {
            set: "hemisphere".into(),
            scales: vec![0.75, 1.0, 1.5],
            probes: p.probes,
            strata: p.strata,
            measure_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcConfig {
    pub function: String,
    pub epsilons: Vec<f64>,
    /// Dimensions to sweep; empty means just `d`.
    pub dims: Vec<usize>,
}

impl Default for ConcConfig {
    fn default() -> Self {
        Self {
            function: "u11".into(),
            epsilons: vec![0.25, 0.5, 1.0],
            dims: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub d: usize,
    pub n: usize,
    pub tau: f64,
    /// Sweep for `theorem-trial`; empty means just `tau`.
    pub taus: Vec<f64>,
    pub trials: usize,
    pub samples: usize,
    pub networks: usize,
    pub workers: usize,
    pub out: String,
    pub input: InputKind,
    /// `odd` or `relu`; absent means inferred from the activation.
    pub theorem: Option<TheoremKind>,
    pub arch: ArchConfig,
    /// Explicit layers by 1-based index; when present they replace `arch`.
    pub layers: BTreeMap<usize, LayerConfig>,
    pub search: SearchConfig,
    pub kernel_channels: Vec<usize>,
    pub iso: IsoConfig,
    pub conc: ConcConfig,
    pub sudakov_m: Vec<usize>,
    /// Sphere-tail thresholds as fractions of `d`.
    pub tail_fractions: Vec<f64>,
    pub variance_points: usize,
}

impl ExperimentConfig {
    pub fn with_kind(kind: ExperimentKind) -> Self {
        Self {
            kind,
            seed: 0,
            d: 64,
            n: 4,
            tau: 8.0,
            taus: Vec::new(),
            trials: 100,
            samples: 10_000,
            networks: 20,
            workers: 1,
            out: "runs".into(),
            input: InputKind::Sphere,
            theorem: None,
            arch: ArchConfig::default(),
            layers: BTreeMap::new(),
            search: SearchConfig::default(),
            kernel_channels: vec![64, 128, 256, 512],
            iso: IsoConfig::default(),
            conc: ConcConfig::default(),
            sudakov_m: vec![16, 64],
            tail_fractions: vec![0.0, 0.125, 0.25, 0.375, 0.5],
            variance_points: 4,
        }
    }

    /// The network architecture, from explicit layers when given.
    pub fn network(&self) -> Result<NetworkSpec> {
        if self.layers.is_empty() {
            return self.shorthand_network();
        }
        let count = self.layers.len();
        if let Some((_, (&k, _))) = self.layers.iter().enumerate().find(|(i, (k, _))| **k != i + 1) {
            return Err(config_error(
                format!("layer.{k}"),
                format!("layers must be numbered 1..={count} without gaps"),
            ));
        }
        let (mut c, mut p) = (self.d, self.n);
        let mut specs = Vec::with_capacity(count);
        for (&k, l) in &self.layers {
            let width = if l.width == 0 { p } else { l.width };
            let spec = ConvLayerSpec::new(c, p, width, l.stride, l.channels, l.activation, l.init)
                .map_err(|e| config_error(format!("layer.{k}"), shape_message(e)))?;
            c = spec.out_channels;
            p = spec.out_positions();
            specs.push(spec);
        }
        NetworkSpec::new(specs).map_err(|e| config_error("layer", shape_message(e)))
    }

    fn shorthand_network(&self) -> Result<NetworkSpec> {
        let a = &self.arch;
        if a.depth == 0 {
            return Err(config_error("arch.depth", "depth must be >= 1"));
        }
        if a.depth >= 2 {
            if a.width == 0 || a.width > self.n {
                return Err(config_error(
                    "arch.width",
                    format!("width {} must satisfy 1 <= w <= n = {}", a.width, self.n),
                ));
            }
            if a.stride == 0 || !(self.n - a.width).is_multiple_of(a.stride) {
                return Err(config_error(
                    "arch.stride",
                    format!(
                        "stride {} must divide n - w = {} so that the windows tile the input",
                        a.stride,
                        self.n - a.width
                    ),
                ));
            }
        }
        NetworkSpec::standard(self.d, self.n, a.width, a.stride, a.channels, a.depth, a.activation, a.init)
            .map_err(|e| config_error("arch", shape_message(e)))
    }

    pub fn theorem_kind(&self) -> Result<TheoremKind> {
        if let Some(k) = self.theorem {
            return Ok(k);
        }
        let net = self.network()?;
        Ok(if net.layers().iter().any(|l| l.activation == Activation::Relu) {
            TheoremKind::Relu
        } else {
            TheoremKind::Odd
        })
    }

    pub fn tau_sweep(&self) -> Vec<f64> {
        if self.taus.is_empty() {
            vec![self.tau]
        } else {
            self.taus.clone()
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            probes: self.iso.probes,
            strata: self.iso.strata,
        }
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("n", self.n),
            ("trials", self.trials),
            ("samples", self.samples),
            ("networks", self.networks),
            ("workers", self.workers),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(config_error(field, "must be >= 1"));
            }
        }
        if !(self.tau > 0.0) {
            return Err(config_error("tau", "must be positive"));
        }
        if self.taus.iter().any(|t| !(*t > 0.0)) {
            return Err(config_error("taus", "every tau must be positive"));
        }
        if !(self.search.rel_tol > 0.0 && self.search.rel_tol < 1.0) {
            return Err(config_error("search.rel_tol", "must lie in (0, 1)"));
        }
        if self.kernel_channels.contains(&0) {
            return Err(config_error("kernel.channels", "channel counts must be >= 1"));
        }
        if self.sudakov_m.contains(&0) {
            return Err(config_error("sudakov.m", "point counts must be >= 1"));
        }
        if self.conc.dims.contains(&0) {
            return Err(config_error("conc.dims", "dimensions must be >= 1"));
        }
        if self.iso.measure_samples == 0 {
            return Err(config_error("iso.measure_samples", "must be >= 1"));
        }
        if self.variance_points == 0 {
            return Err(config_error("variance.points", "must be >= 1"));
        }
        if self.kind.uses_network() {
            self.network()?;
        }
        Ok(())
    }

    /// Flat TOML with every key, in a fixed order.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        let mut put = |key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };
        put("kind", string(self.kind.as_str()));
        // TOML integers are signed, so seeds past i64::MAX travel as strings.
        put(
            "seed",
            if self.seed > i64::MAX as u64 { format!("\"{}\"", self.seed) } else { self.seed.to_string() },
        );
        put("d", self.d.to_string());
        put("n", self.n.to_string());
        put("tau", float(self.tau));
        put("taus", float_list(&self.taus));
        put("trials", self.trials.to_string());
        put("samples", self.samples.to_string());
        put("networks", self.networks.to_string());
        put("workers", self.workers.to_string());
        put("out", string(&self.out));
        put("input.kind", string(self.input.as_str()));
        if let Some(k) = self.theorem {
            put("theorem.kind", string(&k.to_string()));
        }
        put("arch.width", self.arch.width.to_string());
        put("arch.stride", self.arch.stride.to_string());
        put("arch.channels", self.arch.channels.to_string());
        put("arch.depth", self.arch.depth.to_string());
        put("arch.activation", string(self.arch.activation.name()));
        put("arch.init", string(self.arch.init.name()));
        for (k, l) in &self.layers {
            put(&format!("layer.{k}.width"), l.width.to_string());
            put(&format!("layer.{k}.stride"), l.stride.to_string());
            put(&format!("layer.{k}.channels"), l.channels.to_string());
            put(&format!("layer.{k}.activation"), string(l.activation.name()));
            put(&format!("layer.{k}.init"), string(l.init.name()));
        }
        put("search.planes", self.search.planes.to_string());
        put("search.angles", self.search.angles.to_string());
        put("search.haar", self.search.haar.to_string());
        put("search.rel_tol", float(self.search.rel_tol));
        put("kernel.channels", int_list(&self.kernel_channels));
        put("iso.set", string(&self.iso.set));
        put("iso.scales", float_list(&self.iso.scales));
        put("iso.probes", self.iso.probes.to_string());
        put("iso.strata", self.iso.strata.to_string());
        put("iso.measure_samples", self.iso.measure_samples.to_string());
        put("conc.function", string(&self.conc.function));
        put("conc.epsilons", float_list(&self.conc.epsilons));
        put("conc.dims", int_list(&self.conc.dims));
        put("sudakov.m", int_list(&self.sudakov_m));
        put("tail.fractions", float_list(&self.tail_fractions));
        put("variance.points", self.variance_points.to_string());
        out
    }
}

fn config_error(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        line: None,
        message: message.into(),
    }
}

fn shape_message(e: Error) -> String {
    match e {
        Error::Shape(m) => m,
        other => other.to_string(),
    }
}

fn string(s: &str) -> String {
    Value::String(s.to_owned()).to_string()
}

fn float(x: f64) -> String {
    format!("{x:?}")
}

fn float_list(xs: &[f64]) -> String {
    let items: Vec<String> = xs.iter().map(|&x| float(x)).collect();
    format!("[{}]", items.join(", "))
}

fn int_list(xs: &[usize]) -> String {
    let items: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(", "))
}

/// Parses a config that must name its own `kind`.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with(text, None)
}

/// Parses a config for a known kind; a `kind` key in the text must agree.
pub fn parse_config_for(text: &str, kind: ExperimentKind) -> Result<ExperimentConfig> {
    parse_config_with(text, Some(kind))
}

fn parse_config_with(text: &str, fallback: Option<ExperimentKind>) -> Result<ExperimentConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
        field: "<syntax>".into(),
        line: e.span().map(|s| line_of_offset(text, s.start)),
        message: e.message().to_owned(),
    })?;
    let mut flat = Vec::new();
    flatten("", &table, &mut flat);

    let locate = |field: &str, message: String| Error::Config {
        field: field.to_owned(),
        line: find_line(text, field),
        message,
    };

    let kind = match flat.iter().find(|(k, _)| k == "kind") {
        Some((_, v)) => {
            let name = v.as_str().ok_or_else(|| locate("kind", "expected a string".into()))?;
            let k: ExperimentKind = name.parse().map_err(|m| locate("kind", m))?;
            if let Some(f) = fallback {
                if f != k {
                    return Err(locate("kind", format!("config is for `{k}` but the command is `{f}`")));
                }
            }
            k
        }
        None => fallback.ok_or_else(|| config_error("kind", "missing required key"))?,
    };

    let mut cfg = ExperimentConfig::with_kind(kind);
    for (key, value) in &flat {
        apply(&mut cfg, key, value).map_err(|m| locate(key, m))?;
    }
    cfg.validate().map_err(|e| match e {
        Error::Config { field, line: None, message } => Error::Config {
            line: find_line(text, &field),
            field,
            message,
        },
        other => other,
    })?;
    Ok(cfg)
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line assigning `field`, honouring `[table]` headers.
fn find_line(text: &str, field: &str) -> Option<usize> {
    let normalize = |s: &str| -> String { s.split('.').map(|p| p.trim().trim_matches('"')).collect::<Vec<_>>().join(".") };
    let mut header = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.starts_with('[') && line.ends_with(']') {
            header = normalize(line.trim_matches(|c| c == '[' || c == ']'));
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else {
            continue;
        };
        let key = normalize(lhs);
        let full = if header.is_empty() { key } else { format!("{header}.{key}") };
        if full == field || field.starts_with(&format!("{full}.")) || full.starts_with(&format!("{field}.")) {
            return Some(i + 1);
        }
    }
    None
}

fn as_usize(v: &Value) -> std::result::Result<usize, String> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(format!("expected a non-negative integer, got `{v}`")),
    }
}

fn as_u64(v: &Value) -> std::result::Result<u64, String> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(format!("expected a non-negative integer, got `{v}`")),
    }
}

fn as_seed(v: &Value) -> std::result::Result<u64, String> {
    match v {
        Value::String(s) => s.parse().map_err(|_| format!("expected an unsigned 64-bit integer, got `{v}`")),
        _ => as_u64(v),
    }
}

fn as_f64(v: &Value) -> std::result::Result<f64, String> {
    let x = match v {
        Value::Float(x) => *x,
        Value::Integer(i) => *i as f64,
        _ => return Err(format!("expected a number, got `{v}`")),
    };
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("expected a finite number, got `{v}`"))
    }
}

fn as_str(v: &Value) -> std::result::Result<&str, String> {
    v.as_str().ok_or_else(|| format!("expected a string, got `{v}`"))
}

fn as_list<T>(v: &Value, item: fn(&Value) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    match v {
        Value::Array(xs) => xs.iter().map(item).collect(),
        _ => Err(format!("expected an array, got `{v}`")),
    }
}

fn parse_named<T: FromStr<Err = String>>(v: &Value) -> std::result::Result<T, String> {
    as_str(v)?.parse()
}

fn apply(cfg: &mut ExperimentConfig, key: &str, v: &Value) -> std::result::Result<(), String> {
    if let Some(rest) = key.strip_prefix("layer.") {
        return apply_layer(cfg, rest, v);
    }
    match key {
        "kind" => {}
        "seed" => cfg.seed = as_seed(v)?,
        "d" => cfg.d = as_usize(v)?,
        "n" => cfg.n = as_usize(v)?,
        "tau" => cfg.tau = as_f64(v)?,
        "taus" => cfg.taus = as_list(v, as_f64)?,
        "trials" => cfg.trials = as_usize(v)?,
        "samples" => cfg.samples = as_usize(v)?,
        "networks" => cfg.networks = as_usize(v)?,
        "workers" => cfg.workers = as_usize(v)?,
        "out" => cfg.out = as_str(v)?.to_owned(),
        "input.kind" => cfg.input = parse_named(v)?,
        "theorem.kind" => cfg.theorem = Some(parse_named(v)?),
        "arch.width" => cfg.arch.width = as_usize(v)?,
        "arch.stride" => cfg.arch.stride = as_usize(v)?,
        "arch.channels" => cfg.arch.channels = as_usize(v)?,
        "arch.depth" => cfg.arch.depth = as_usize(v)?,
        "arch.activation" => cfg.arch.activation = parse_named(v)?,
        "arch.init" => cfg.arch.init = parse_named(v)?,
        "search.planes" => cfg.search.planes = as_usize(v)?,
        "search.angles" => cfg.search.angles = as_usize(v)?,
        "search.haar" => cfg.search.haar = as_usize(v)?,
        "search.rel_tol" => cfg.search.rel_tol = as_f64(v)?,
        "kernel.channels" => cfg.kernel_channels = as_list(v, as_usize)?,
        "iso.set" => cfg.iso.set = as_str(v)?.to_owned(),
        "iso.scales" => cfg.iso.scales = as_list(v, as_f64)?,
        "iso.probes" => cfg.iso.probes = as_usize(v)?,
        "iso.strata" => cfg.iso.strata = as_usize(v)?,
        "iso.measure_samples" => cfg.iso.measure_samples = as_usize(v)?,
        "conc.function" => cfg.conc.function = as_str(v)?.to_owned(),
        "conc.epsilons" => cfg.conc.epsilons = as_list(v, as_f64)?,
        "conc.dims" => cfg.conc.dims = as_list(v, as_usize)?,
        "sudakov.m" => cfg.sudakov_m = as_list(v, as_usize)?,
        "tail.fractions" => cfg.tail_fractions = as_list(v, as_f64)?,
        "variance.points" => cfg.variance_points = as_usize(v)?,
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

fn apply_layer(cfg: &mut ExperimentConfig, rest: &str, v: &Value) -> std::result::Result<(), String> {
    let (index, field) = rest.split_once('.').ok_or("expected layer.<index>.<field>")?;
    let index: usize = index
        .parse()
        .ok()
        .filter(|&i| i >= 1)
        .ok_or_else(|| format!("layer index `{index}` is not a positive integer"))?;
    let arch = cfg.arch.clone();
    let layer = cfg.layers.entry(index).or_insert_with(|| LayerConfig {
        width: 1,
        stride: 1,
        channels: arch.channels,
        activation: arch.activation,
        init: arch.init,
    });
    match field {
        "width" => layer.width = as_usize(v)?,
        "stride" => layer.stride = as_usize(v)?,
        "channels" => layer.channels = as_usize(v)?,
        "activation" => layer.activation = parse_named(v)?,
        "init" => layer.init = parse_named(v)?,
        _ => return Err("unknown key".into()),
    }
    Ok(())
}
