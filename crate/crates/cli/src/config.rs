//! Run configuration.
//!
//! Values are layered: built-in defaults, then the TOML file given with
//! `--config`, then command-line flags. Each leaf key remembers which layer
//! set it so the effective configuration can be printed with its sources.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sfl_core::optimizer::DEFAULT_GRID_STEP;
use sfl_core::privacy::{fit_quadratic, parse_samples, FMNIST_REFERENCE};
use sfl_core::{CutMode, ModelTopology, RsModel, SystemParams};
use toml::{Table, Value};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Tables that a higher layer replaces wholesale instead of merging into.
const REPLACED_TABLES: &[&str] = &["rs"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    /// Defaults to `params.total_params`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_params: Option<u64>,
    pub total_layers: u32,
    pub blocks: u32,
    pub layers_per_block: u32,
    pub cut_mode: CutMode,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            total_params: None,
            total_layers: 10,
            blocks: 5,
            layers_per_block: 2,
            cut_mode: CutMode::PerLayer,
        }
    }
}

/// Where the reconstruction-score model comes from; exactly one field is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RsSource {
    /// Name of a built-in model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    /// `alpha,ssim` sample file, fitted on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<PathBuf>,
    /// Model file written by `sfl fit`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
}

impl Default for RsSource {
    fn default() -> Self {
        Self {
            builtin: Some(FMNIST_REFERENCE.into()),
            samples: None,
            model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub alpha_step: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alpha_start: 0.0,
            alpha_end: 1.0,
            alpha_step: 0.1,
        }
    }
}

impl SweepConfig {
    pub fn points(&self) -> Result<Vec<f64>, CliError> {
        let (start, end, step) = (self.alpha_start, self.alpha_end, self.alpha_step);
        if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) {
            return Err(CliError::Config(format!("sweep bounds [{start}, {end}] must lie within [0, 1]")));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(CliError::Config(format!("sweep step must be positive, got {step}")));
        }
        if start > end {
            return Err(CliError::Config(format!("empty sweep range: start {start} > end {end}")));
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        // Rounding to 12 decimals turns 3 * 0.1 back into 0.3.
        Ok((0..=n)
            .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
            .map(|a| a.min(end))
            .collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub record_trace: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_full_train_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Per-client energy budget, joules.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_req: Option<f64>,
    pub grid_step: f64,
    pub params: SystemParams,
    /// Heterogeneous client profiles; when non-empty they replace `params`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profiles: Vec<SystemParams>,
    pub topology: TopologyConfig,
    pub rs: RsSource,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            alpha: None,
            e_req: None,
            grid_step: DEFAULT_GRID_STEP,
            params: SystemParams::reference(),
            profiles: Vec::new(),
            topology: TopologyConfig::default(),
            rs: RsSource::default(),
            sweep: SweepConfig::default(),
            output: OutputConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Default,
    File,
    Flag,
}

impl Source {
    fn as_str(self) -> &'static str {
        match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Flag => "flag",
        }
    }
}

/// A resolved configuration with the source of every leaf value.
#[derive(Debug, Clone)]
pub struct Effective {
    pub config: RunConfig,
    pub provenance: BTreeMap<String, Source>,
}

fn record_leaves(prefix: &str, value: &Value, source: Source, out: &mut BTreeMap<String, Source>) {
    match value {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                record_leaves(&key, v, source, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), source);
        }
    }
}

fn forget_under(prefix: &str, provenance: &mut BTreeMap<String, Source>) {
    let nested = format!("{prefix}.");
    provenance.retain(|k, _| k != prefix && !k.starts_with(&nested));
}

fn merge(base: &mut Table, overlay: Table, prefix: &str, source: Source, provenance: &mut BTreeMap<String, Source>) {
    for (key, value) in overlay {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (base.get_mut(&key), value) {
            (Some(Value::Table(existing)), Value::Table(incoming)) if !REPLACED_TABLES.contains(&path.as_str()) => {
                merge(existing, incoming, &path, source, provenance);
            }
            (_, value) => {
                forget_under(&path, provenance);
                record_leaves(&path, &value, source, provenance);
                base.insert(key, value);
            }
        }
    }
}

/// Parses `key=value`; the value is read as a TOML value, falling back to
/// a bare string.
pub fn parse_assignment(raw: &str) -> Result<(String, Value), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("expected KEY=VALUE, got {raw:?}")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("malformed key in {raw:?}")));
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.into()));
    Ok((key.to_string(), parsed))
}

fn dotted_to_table(key: &str, value: Value) -> Table {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap_or(key);
    let mut table = Table::new();
    table.insert(last.to_string(), value);
    for part in parts.into_iter().rev() {
        let mut outer = Table::new();
        outer.insert(part.to_string(), Value::Table(table));
        table = outer;
    }
    table
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn parse_toml(text: &str, path: &Path) -> Result<Table, CliError> {
    text.parse::<Table>().map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
        message: e.message().trim().to_string(),
    })
}

fn defaults_table() -> Table {
    match Value::try_from(RunConfig::default()) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("RunConfig serializes to a table"),
    }
}

/// Builds the effective configuration. `overrides` are `(dotted.key, value)`
/// pairs applied last, in order.
pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Effective, CliError> {
    let mut table = defaults_table();
    let mut provenance = BTreeMap::new();
    record_leaves("", &Value::Table(table.clone()), Source::Default, &mut provenance);

    let mut base_dir = None;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let file_table = parse_toml(&text, path)?;
        // Deserializing the file on its own (missing keys take defaults)
        // pins type errors and unknown keys to a line.
        toml::from_str::<RunConfig>(&text).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: e.span().map(|s| line_of(&text, s.start)).unwrap_or(1),
            message: e.message().trim().to_string(),
        })?;
        merge(&mut table, file_table, "", Source::File, &mut provenance);
        base_dir = path.parent().map(Path::to_path_buf);
    }
    for (key, value) in overrides {
        let overlay = dotted_to_table(key, value.clone());
        merge(&mut table, overlay, "", Source::Flag, &mut provenance);
    }

    let mut config: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("invalid configuration: {}", e.message().trim())))?;
    if config.schema_version != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            config.schema_version
        )));
    }
    // file-relative paths
    if let Some(dir) = base_dir {
        for p in [&mut config.rs.samples, &mut config.rs.model].into_iter().flatten() {
            if p.is_relative() && provenance_of(&provenance, "rs") == Some(Source::File) {
                *p = dir.join(&*p);
            }
        }
    }
    config.validate()?;
    Ok(Effective { config, provenance })
}

fn provenance_of(provenance: &BTreeMap<String, Source>, prefix: &str) -> Option<Source> {
    let nested = format!("{prefix}.");
    provenance
        .iter()
        .filter(|(k, _)| k.starts_with(&nested))
        .map(|(_, s)| *s)
        .max()
}

impl RunConfig {
    /// Checks everything that can be checked without running a command.
    pub fn validate(&self) -> Result<(), CliError> {
        self.params.validate()?;
        for p in &self.profiles {
            p.validate()?;
        }
        self.topology()?;
        let sources = [self.rs.builtin.is_some(), self.rs.samples.is_some(), self.rs.model.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(CliError::Config(
                "exactly one of rs.builtin, rs.samples, rs.model must be set".into(),
            ));
        }
        if let Some(name) = &self.rs.builtin {
            if RsModel::builtin(name).is_none() {
                return Err(CliError::Config(format!(
                    "unknown built-in model {name:?}; available: {}",
                    RsModel::builtin_names().join(", ")
                )));
            }
        }
        if let Some(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(sfl_core::Error::Domain {
                    name: "alpha",
                    value: a,
                    domain: "[0, 1]",
                }
                .into());
            }
        }
        Ok(())
    }

    /// Client profiles: the explicit list if given, else `params` alone.
    pub fn profiles(&self) -> Vec<SystemParams> {
        if self.profiles.is_empty() {
            vec![self.params.clone()]
        } else {
            self.profiles.clone()
        }
    }

    pub fn topology(&self) -> Result<ModelTopology, CliError> {
        let t = &self.topology;
        let total_params = t.total_params.unwrap_or(self.params.total_params);
        if total_params != self.params.total_params {
            return Err(CliError::Config(format!(
                "topology.total_params {total_params} differs from params.total_params {}",
                self.params.total_params
            )));
        }
        Ok(ModelTopology::new(total_params, t.total_layers, t.blocks, t.layers_per_block)?)
    }

    pub fn require_alpha(&self) -> Result<f64, CliError> {
        self.alpha
            .ok_or_else(|| CliError::Config("this command needs alpha (--alpha X or `alpha` in the config)".into()))
    }

    pub fn rs_model(&self) -> Result<RsModel, CliError> {
        if let Some(name) = &self.rs.builtin {
            return RsModel::builtin(name).ok_or_else(|| CliError::Config(format!("unknown built-in model {name:?}")));
        }
        if let Some(path) = &self.rs.samples {
            let samples = read_samples(path)?;
            return Ok(fit_quadratic(&samples)?);
        }
        if let Some(path) = &self.rs.model {
            return read_model(path);
        }
        Err(CliError::Config("no reconstruction-score model configured".into()))
    }

    /// The configuration as TOML, preceded by a comment block naming the
    /// source of every value. Reading it back yields the same configuration.
    pub fn to_toml_with_provenance(&self, provenance: &BTreeMap<String, Source>) -> Result<String, CliError> {
        let body = toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))?;
        let mut out = String::from("# effective sfl configuration; value sources:\n");
        for (key, source) in provenance {
            let _ = writeln!(out, "#   {key} = {}", source.as_str());
        }
        out.push('\n');
        out.push_str(&body);
        Ok(out)
    }
}

pub fn read_samples(path: &Path) -> Result<Vec<sfl_core::RsSample>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_samples(&text).map_err(|e| match e {
        sfl_core::Error::Parse { line, message } => CliError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => other.into(),
    })
}

/// On-disk form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub a2: f64,
    pub a1: f64,
    pub a0: f64,
    pub fit_rmse: f64,
    pub samples: usize,
}

impl ModelFile {
    pub fn new(model: &RsModel, samples: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            a2: model.a2,
            a1: model.a1,
            a0: model.a0,
            fit_rmse: model.fit_rmse,
            samples,
        }
    }

    pub fn model(&self) -> RsModel {
        RsModel {
            a2: self.a2,
            a1: self.a1,
            a0: self.a0,
            fit_rmse: self.fit_rmse,
        }
    }
}

/// Reads a model file in either of the formats `sfl fit` writes.
pub fn read_model(path: &Path) -> Result<RsModel, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if let Ok(file) = serde_json::from_str::<ModelFile>(&text) {
        return Ok(file.model());
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    match reader.deserialize::<ModelFile>().next() {
        Some(Ok(file)) => Ok(file.model()),
        Some(Err(e)) => Err(CliError::Parse {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line() as usize).unwrap_or(1),
            message: format!("not a model file: {e}"),
        }),
        None => Err(CliError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "model file has no data row".into(),
        }),
    }
}
