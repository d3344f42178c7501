use std::path::{Path, PathBuf};

use paleocorr::alignment::{AlignmentSpec, AlignmentSpecList};
use paleocorr::chronology::EnsembleSettings;
use paleocorr::experiments::{ForwardModel, ScenarioKind, ScenarioSpec, SuiteConfig, DEFAULT_N_ENS};
use paleocorr::pseudoproxy::{ParamRanges, PseudoproxyParams};
use paleocorr::InferenceConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, CliResult};

pub const ENV_PREFIX: &str = "PALEOCORR__";
pub const RESOLVED_CONFIG: &str = "config.toml";

/// Every tunable of every command. Written back, fully resolved, next to
/// each command's outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub inputs: Inputs,
    pub inference: InferenceConfig,
    pub alignment: AlignmentSection,
    pub preprocess: Preprocess,
    pub chronology: Chronology,
    pub simulate: Simulate,
    pub forward: ForwardModel,
    pub windows: WindowsSection,
    pub experiment: ExperimentSection,
    pub ranges: ParamRanges,
}

/// Input files; command-line arguments take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub record_a: Option<PathBuf>,
    pub record_b: Option<PathBuf>,
    pub dates_a: Option<PathBuf>,
    pub dates_b: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentSection {
    #[serde(with = "spec_string")]
    pub method: AlignmentSpec,
}

impl Default for AlignmentSection {
    fn default() -> Self {
        Self {
            method: AlignmentSpec::gaussian(0.5),
        }
    }
}

mod spec_string {
    use paleocorr::alignment::AlignmentSpec;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(spec: &AlignmentSpec, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(spec)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<AlignmentSpec, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocess {
    /// High-pass cutoff period for record A, in years; unset keeps the record as is.
    pub detrend_cutoff_a: Option<f64>,
    pub detrend_cutoff_b: Option<f64>,
    /// Years by which record B trails record A.
    pub lag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Chronology {
    /// Three-column calibration curve file; the built-in toy curve otherwise.
    pub curve: Option<PathBuf>,
    /// Realizations behind median age models.
    pub realizations: usize,
    pub grid_step: f64,
    pub retry_cap: usize,
    pub max_rejects_per_realization: usize,
}

impl Default for Chronology {
    fn default() -> Self {
        let s = EnsembleSettings::default();
        Self {
            curve: None,
            realizations: 200,
            grid_step: s.grid_step,
            retry_cap: s.retry_cap,
            max_rejects_per_realization: s.max_rejects_per_realization,
        }
    }
}

impl Chronology {
    pub fn settings(&self) -> EnsembleSettings {
        EnsembleSettings {
            grid_step: self.grid_step,
            retry_cap: self.retry_cap,
            max_rejects_per_realization: self.max_rejects_per_realization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Simulate {
    pub n_obs: usize,
    pub coupling: f64,
    pub drag: f64,
    pub sed_mean: f64,
    pub sed_skew: f64,
    pub n_ens: usize,
}

impl Default for Simulate {
    fn default() -> Self {
        Self {
            n_obs: 200,
            coupling: 0.6,
            drag: 0.2,
            sed_mean: 0.35,
            sed_skew: 1.5,
            n_ens: DEFAULT_N_ENS,
        }
    }
}

impl Simulate {
    pub fn params(&self, seed: u64) -> PseudoproxyParams {
        PseudoproxyParams {
            n_obs: self.n_obs,
            coupling: self.coupling,
            drag: self.drag,
            sed_mean: self.sed_mean,
            sed_skew: self.sed_skew,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowsSection {
    pub width: f64,
    pub step: f64,
    /// Search the best lag before windowing and shift record B by it.
    pub lag_scan: bool,
    pub lag_min: f64,
    pub lag_max: f64,
    pub lag_step: f64,
}

impl Default for WindowsSection {
    fn default() -> Self {
        Self {
            width: 5000.0,
            step: 2500.0,
            lag_scan: false,
            lag_min: -3000.0,
            lag_max: 3000.0,
            lag_step: 50.0,
        }
    }
}

impl WindowsSection {
    pub fn lags(&self) -> CliResult<Vec<f64>> {
        if !(self.lag_step > 0.0) || self.lag_max < self.lag_min {
            return Err(CliError::Config("lag grid needs lag_step > 0 and lag_max >= lag_min".into()));
        }
        let n = ((self.lag_max - self.lag_min) / self.lag_step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|k| self.lag_min + k as f64 * self.lag_step).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub n_pairs: usize,
    pub methods: AlignmentSpecList,
    pub scenarios: Vec<ScenarioKind>,
    pub n_ens: usize,
    /// Zero-coupling twin of every pair, used as ROC negatives.
    pub null_sweep: bool,
    pub chunk: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            n_pairs: 200,
            methods: AlignmentSpecList(AlignmentSpec::defaults()),
            scenarios: ScenarioKind::ALL.to_vec(),
            n_ens: DEFAULT_N_ENS,
            null_sweep: true,
            chunk: 8,
        }
    }
}

impl RunConfig {
    /// Defaults, then the file, then `PALEOCORR__SECTION__KEY` variables.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let mut overrides: Vec<(String, String)> =
            env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        overrides.sort();
        for (key, raw) in overrides {
            apply_override(&mut table, &key[ENV_PREFIX.len()..], &raw)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let wrap = |r: paleocorr::Result<()>| r.map_err(|e| CliError::Config(e.to_string()));
        wrap(self.inference.validate())?;
        wrap(self.forward.validate())?;
        wrap(self.ranges.validate())?;
        if self.chronology.realizations == 0 {
            return Err(CliError::Config("chronology.realizations must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn write_resolved(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(RESOLVED_CONFIG);
        std::fs::write(&path, self.to_toml()).map_err(io_err(&path))
    }

    /// Inference settings seeded from the run seed.
    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            seed: self.seed,
            ..self.inference.clone()
        }
    }

    pub fn suite(&self) -> SuiteConfig {
        let e = &self.experiment;
        SuiteConfig {
            n_pairs: e.n_pairs,
            methods: e.methods.0.clone(),
            scenarios: e
                .scenarios
                .iter()
                .map(|&kind| ScenarioSpec { kind, n_ens: e.n_ens })
                .collect(),
            ranges: self.ranges,
            forward: self.forward,
            inference: self.inference.clone(),
            seed: self.seed,
            null_sweep: e.null_sweep,
            chunk: e.chunk,
        }
    }
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> CliResult<()> {
    let parts: Vec<String> = key.split("__").map(str::to_ascii_lowercase).collect();
    if parts.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("malformed override {ENV_PREFIX}{key}")));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, sections) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for s in sections {
        let entry = cur
            .entry(s.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {ENV_PREFIX}{key}: {s} is not a section")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}
