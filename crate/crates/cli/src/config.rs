//! The run configuration: one JSON document holding every stage's settings.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rsnpe::datagen::PriorSpec;
use rsnpe::physics::AltitudeCorrection;
use rsnpe::{FlowConfig, RadarConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Environment variable naming the directory under which runs are written
/// when neither the config nor `--output-dir` sets one.
pub const OUTPUT_ROOT_ENV: &str = "RSNPE_OUTPUT_ROOT";

/// Run directory name used under the output root.
pub const DEFAULT_RUN_NAME: &str = "run";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub validate: u64,
    pub infer: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { data: 1, validate: 3, infer: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_primary: usize,
    pub n_reference: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n_primary: 500, n_reference: 200, n_train: 8000, n_val: 2000, n_test: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    /// Posterior draws per test point (`L`).
    pub posterior_draws: usize,
    pub histogram_bins: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { posterior_draws: 100, histogram_bins: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub n_samples: usize,
    pub altitude_correction: AltitudeCorrection,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { n_samples: 10_000, altitude_correction: AltitudeCorrection::Multiply }
    }
}

/// Limits above which a command still succeeds but exits with status 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub min_ks_p: f64,
    pub max_c2st_rank: f64,
    pub max_c2st_dap: f64,
    pub max_out_of_support_fraction: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { min_ks_p: 0.01, max_c2st_rank: 0.65, max_c2st_dap: 0.60, max_out_of_support_fraction: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Where every artifact of the run goes.
    pub output_dir: Option<PathBuf>,
    pub seeds: Seeds,
    pub radar: RadarConfig,
    pub prior: PriorSpec,
    pub data: DataConfig,
    pub flow: FlowConfig,
    pub train: TrainConfig,
    pub validation: ValidationConfig,
    pub inference: InferenceConfig,
    pub thresholds: Thresholds,
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies `key.path=value`
    /// overrides and the output directory precedence
    /// flag > file > `$RSNPE_OUTPUT_ROOT/run` > `./rsnpe-out`.
    pub fn resolve(path: Option<&Path>, overrides: &[String], output_dir: Option<PathBuf>) -> anyhow::Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value).context("config does not match the schema")?;
        if let Some(dir) = output_dir {
            cfg.output_dir = Some(dir);
        }
        if cfg.output_dir.is_none() {
            cfg.output_dir = Some(match std::env::var_os(OUTPUT_ROOT_ENV) {
                Some(root) => PathBuf::from(root).join(DEFAULT_RUN_NAME),
                None => PathBuf::from("rsnpe-out"),
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.radar.validate()?;
        self.prior.validate()?;
        self.flow.validate()?;
        self.train.validate()?;
        if self.data.n_primary == 0 || self.data.n_reference == 0 {
            bail!("invalid configuration `data`: n_primary and n_reference must be >= 1");
        }
        if self.data.n_train == 0 || self.data.n_val == 0 {
            bail!("invalid configuration `data`: n_train and n_val must be >= 1");
        }
        if self.validation.posterior_draws < 20 {
            bail!("invalid configuration `validation.posterior_draws`: must be >= 20");
        }
        if self.inference.n_samples == 0 {
            bail!("invalid configuration `inference.n_samples`: must be >= 1");
        }
        Ok(())
    }

    pub fn output_dir(&self) -> &Path {
        self.output_dir.as_deref().expect("output_dir is set by resolve")
    }

    /// Hash of every setting that affects artifact contents; the output
    /// directory is excluded.
    pub fn hash(&self) -> anyhow::Result<String> {
        let placed_anywhere = RunConfig { output_dir: None, ..self.clone() };
        Ok(rsnpe::io::config_hash(&placed_anywhere)?)
    }

    pub fn layout(&self) -> Layout {
        Layout { root: self.output_dir().to_path_buf() }
    }
}

/// Sets the dotted `key.path` inside `value` to the JSON-parsed right-hand
/// side, or to the raw string when it is not valid JSON.
pub fn apply_override(value: &mut Value, spec: &str) -> anyhow::Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .with_context(|| format!("override `{spec}` must look like key.path=value"))?;
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = value;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .with_context(|| format!("override `{path}`: `{}` is not an object", keys[..i].join(".")))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), new);
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one key")
}

/// Paths of every artifact under the run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn resolved_config(&self) -> PathBuf {
        self.root.join("config.resolved.json")
    }
    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(format!("{name}.csv"))
    }
    pub fn model_base(&self) -> PathBuf {
        self.root.join("model").join("flow")
    }
    pub fn history(&self) -> PathBuf {
        self.root.join("model").join("history.csv")
    }
    pub fn validation(&self, file: &str) -> PathBuf {
        self.root.join("validation").join(file)
    }
    pub fn inference_dir(&self, tag: &str) -> PathBuf {
        self.root.join("inference").join(tag)
    }
    pub fn simulate_dir(&self) -> PathBuf {
        self.root.join("simulate")
    }
    pub fn plots_dir(&self) -> PathBuf {
        self.root.join("plots")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_json_and_strings() {
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        apply_override(&mut v, "radar.altitude_km=300").unwrap();
        apply_override(&mut v, "inference.altitude_correction=divide").unwrap();
        apply_override(&mut v, "radar.snr_db=null").unwrap();
        let cfg: RunConfig = serde_json::from_value(v).unwrap();
        assert_eq!(cfg.radar.altitude_km, 300.0);
        assert_eq!(cfg.radar.snr_db, None);
        assert_eq!(cfg.inference.altitude_correction, AltitudeCorrection::Divide);
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        assert!(apply_override(&mut v, "radar.altitude_km.x=1").is_err());
        assert!(apply_override(&mut v, "nonsense").is_err());
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"radar": {"altitud_km": 3}}"#).unwrap();
        assert!(RunConfig::resolve(Some(&p), &[], None).is_err());
        let err = RunConfig::resolve(None, &["radar.n_s=0".into()], Some(dir.path().into())).unwrap_err();
        assert!(format!("{err:#}").contains("radar.n_s"), "{err:#}");
    }

    #[test]
    fn flag_beats_file_for_output_dir() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"output_dir": "from-file"}"#).unwrap();
        let cfg = RunConfig::resolve(Some(&p), &[], None).unwrap();
        assert_eq!(cfg.output_dir(), Path::new("from-file"));
        let cfg = RunConfig::resolve(Some(&p), &[], Some("from-flag".into())).unwrap();
        assert_eq!(cfg.output_dir(), Path::new("from-flag"));
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::resolve(None, &[], Some("a".into())).unwrap();
        let b = RunConfig::resolve(None, &[], Some("b".into())).unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let c = RunConfig::resolve(None, &["seeds.data=9".into()], Some("a".into())).unwrap();
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }
}
