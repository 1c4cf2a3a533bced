use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{DEFAULT_DROPOUT_RATE, DEFAULT_MEMBERS, DEFAULT_PASSES};
use crate::data::synthetic::{self, SyntheticSpec};
use crate::data::{self, Dataset, OodSpec, SplitSpec, TargetSelector};
use crate::error::{Error, Result};
use crate::mlp::{Activation, MlpSpec, TrainConfig};
use crate::nac::{LayerSelection, DEFAULT_EPSILON_REG};

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "NAC_OUT_DIR";

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        #[serde(default)]
        target: TargetSelector,
        #[serde(default)]
        name: Option<String>,
    },
    Synthetic(SyntheticSpec),
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Csv { path, target, name } => {
                let ds = data::load_csv(path, target)?;
                Ok(match name {
                    Some(n) => ds.with_name(n.clone()),
                    None => ds,
                })
            }
            DatasetSource::Synthetic(spec) => synthetic::generate(spec),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nac,
    Ensemble,
    McDropout,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Nac => "nac",
            Method::Ensemble => "ensemble",
            Method::McDropout => "mc_dropout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// Correlation with a 0/1 marker for synthesized OoD rows.
    Ood,
    /// Correlation with the per-sample squared error on the test split.
    Mse,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Ood => "ood",
            Study::Mse => "mse",
        }
    }
}

/// How the 95% interval around the mean correlation is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CiMode {
    /// Student-t across per-seed correlations.
    #[default]
    Seeds,
    /// Percentile bootstrap over evaluation samples within each seed.
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![128, 128, 128],
            activation: Activation::Selu,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, input: usize, output: usize, seed: u64) -> MlpSpec {
        MlpSpec::new(input, &self.hidden, output)
            .with_activation(self.activation)
            .with_seed(seed)
    }
}

/// NAC hyperparameter grid searched on the sweep split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NacGrid {
    pub bins: Vec<usize>,
    pub clips: Vec<f64>,
    pub layer_sets: Vec<LayerSelection>,
    pub epsilon_reg: f64,
}

impl Default for NacGrid {
    fn default() -> Self {
        NacGrid {
            bins: vec![10, 25, 50, 100],
            clips: vec![0.001, 0.005, 0.01, 0.05, 0.1],
            layer_sets: vec![LayerSelection::All, LayerSelection::First, LayerSelection::Last],
            epsilon_reg: DEFAULT_EPSILON_REG,
        }
    }
}

impl NacGrid {
    pub fn single(bins: usize, clip: f64, layers: LayerSelection) -> Self {
        NacGrid {
            bins: vec![bins],
            clips: vec![clip],
            layer_sets: vec![layers],
            epsilon_reg: DEFAULT_EPSILON_REG,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins.is_empty() || self.clips.is_empty() || self.layer_sets.is_empty() {
            return Err(Error::Invalid("NAC sweep grid must be non-empty".into()));
        }
        if self.bins.contains(&0) || self.clips.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::Invalid("grid needs bins > 0 and clip levels > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSettings {
    pub members: usize,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        EnsembleSettings {
            members: DEFAULT_MEMBERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McDropoutSettings {
    pub rate: f64,
    pub passes: usize,
    /// Pick the rate from `sweep_rates` on the sweep split, like NAC's grid.
    pub sweep: bool,
    pub sweep_rates: Vec<f64>,
}

impl Default for McDropoutSettings {
    fn default() -> Self {
        McDropoutSettings {
            rate: DEFAULT_DROPOUT_RATE,
            passes: DEFAULT_PASSES,
            sweep: true,
            sweep_rates: vec![0.05, 0.1, 0.2],
        }
    }
}

/// Everything one experiment run needs; serialized as the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub datasets: Vec<DatasetSource>,
    /// The split seed is replaced per run seed.
    pub split: SplitSpec,
    pub model: ModelConfig,
    /// The training seed is replaced per run seed.
    pub train: TrainConfig,
    /// The OoD seed is replaced per run seed.
    pub ood: OodSpec,
    pub nac: NacGrid,
    pub ensemble: EnsembleSettings,
    pub mc_dropout: McDropoutSettings,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub ci: CiMode,
    pub bootstrap_replicates: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            datasets: synthetic::SyntheticKind::ALL
                .iter()
                .map(|&k| DatasetSource::Synthetic(SyntheticSpec::new(k, 0)))
                .collect(),
            split: SplitSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ood: OodSpec::default(),
            nac: NacGrid::default(),
            ensemble: EnsembleSettings::default(),
            mc_dropout: McDropoutSettings::default(),
            methods: vec![Method::Nac, Method::Ensemble, Method::McDropout],
            seeds: (0..10).collect(),
            ci: CiMode::Seeds,
            bootstrap_replicates: 1000,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Format(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.datasets.is_empty() {
            return Err(Error::Invalid("config needs at least one dataset".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Invalid("config needs at least one seed".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Invalid("config needs at least one method".into()));
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(Error::Invalid("model needs at least one positive hidden width".into()));
        }
        if self.split.sweep_frac <= 0.0 || self.split.calib_frac <= 0.0 {
            return Err(Error::Invalid("studies need non-empty sweep and calibration splits".into()));
        }
        self.nac.validate()?;
        if self.methods.contains(&Method::Ensemble) && self.ensemble.members < 2 {
            return Err(Error::Invalid("ensemble needs at least 2 members".into()));
        }
        if self.methods.contains(&Method::McDropout) {
            let mc = &self.mc_dropout;
            let rate_ok = |r: &f64| *r > 0.0 && *r < 1.0;
            if mc.passes < 2 || !rate_ok(&mc.rate) || (mc.sweep && (mc.sweep_rates.is_empty() || !mc.sweep_rates.iter().all(rate_ok))) {
                return Err(Error::Invalid("MC dropout needs passes >= 2 and rates in (0, 1)".into()));
            }
        }
        if self.ci == CiMode::Bootstrap && self.bootstrap_replicates < 2 {
            return Err(Error::Invalid("bootstrap mode needs >= 2 replicates".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            output_dir: None,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Output directory: explicit override, then the config, then `$NAC_OUT_DIR`, then `./nac-out`.
    pub fn resolve_output_dir(&self, explicit: Option<&Path>) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("nac-out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"datasets":[{"source":"synthetic","kind":"linear","rows":300}], "seeds":[1,2]}"#,
        )
        .unwrap();
        assert_eq!(cfg.model.hidden, vec![128, 128, 128]);
        assert_eq!(cfg.train.epochs, 200);
        assert_eq!(cfg.ood.shift_factor, 4.0);
        match &cfg.datasets[0] {
            DatasetSource::Synthetic(s) => assert_eq!((s.rows, s.features), (300, 8)),
            other => panic!("{other:?}"),
        }
        let csv = ExperimentConfig::from_json(
            r#"{"datasets":[{"source":"csv","path":"a.csv","target":{"names":["y"]}}]}"#,
        )
        .unwrap();
        assert!(matches!(&csv.datasets[0], DatasetSource::Csv { target: TargetSelector::Names(n), .. } if n == &["y"]));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"datasets":[]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"seeds":[]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"nac":{"bins":[]}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"version":7}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"unknown_field":1}"#).is_err());
    }

    #[test]
    fn hash_ignores_output_dir_and_tracks_content() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            output_dir: Some("elsewhere".into()),
            ..a.clone()
        };
        let c = ExperimentConfig {
            seeds: vec![3],
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json_pretty().unwrap()).unwrap(), cfg);
    }
}
