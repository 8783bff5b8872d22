//! Run configuration: a TOML file plus `--set key.path=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use mmae::autoencoder::TrainConfig;
use mmae::data::{ChannelSelection, Criterion, SynthSpec};
use mmae::dwt::WaveletConfig;
use mmae::experiment::{TableRow, REFERENCE_ROWS};
use mmae::multimodal::{Architecture, PipelineConfig};
use mmae::nn::ActivationKind;

/// Every problem found while validating a config, reported together.
#[derive(Debug, thiserror::Error)]
#[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
pub struct ConfigError(pub Vec<String>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Synth,
    Deap,
    /// A dataset container written by `mmae synth` or `mmae train`.
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: SourceKind,
    #[serde(default)]
    pub synth: SynthSpec,
    #[serde(default)]
    pub deap_dir: Option<PathBuf>,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub channels: ChannelSelection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Hidden sizes of each pathway stack, shared by both modalities.
    pub pathway_dims: Option<Vec<usize>>,
    pub joint_dim: Option<usize>,
    pub activation: Option<ActivationKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DwtMode {
    /// Each row's own EEG/EMG thresholds.
    #[default]
    Table,
    /// Thresholds bisected to each row's nominal CR.
    TargetCr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Rows at the 896-sample reference, scaled to the data's segment length.
    pub rows: Vec<TableRow>,
    pub dwt: DwtMode,
    pub wavelet: WaveletConfig,
    /// Training fractions for the partition sweep; empty skips it.
    pub partitions: Vec<f64>,
    /// Index into `rows` of the architecture used by the partition sweep.
    pub partition_row: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rows: REFERENCE_ROWS.to_vec(),
            dwt: DwtMode::Table,
            wavelet: WaveletConfig::default(),
            partitions: Vec::new(),
            partition_row: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    /// The first entry also labels fine-tuning in `mmae train`.
    pub criteria: Vec<Criterion>,
    pub baselines: bool,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            criteria: vec![Criterion::Dominance, Criterion::Arousal],
            baselines: true,
        }
    }
}

fn default_fraction() -> f64 {
    0.75
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    pub data: DataConfig,
    #[serde(default)]
    pub architecture: ArchConfig,
    #[serde(default)]
    pub train: PipelineConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub classify: ClassifyConfig,
}

/// Sets `path` (dot-separated) in `table` to `raw`, parsed as a TOML value
/// when possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> anyhow::Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override {assignment:?} is not key.path=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        anyhow::bail!("override {assignment:?} has an empty key");
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = keys.split_last().expect("non-empty");
    let mut cursor = table;
    for key in parents {
        let entry = cursor
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .with_context(|| format!("override {path:?}: {key:?} is not a table"))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads `path`, applies the overrides in order, and validates.
    pub fn load(path: &Path, overrides: &[String]) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text, overrides).with_context(|| format!("config {}", path.display()))
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError(vec![e.to_string()]))?;
        for o in overrides {
            apply_override(&mut table, o).map_err(|e| ConfigError(vec![e.to_string()]))?;
        }
        let synth_seed_set = table
            .get("data")
            .and_then(|d| d.get("synth"))
            .and_then(|s| s.get("seed"))
            .is_some();
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(vec![e.to_string()]))?;
        let mut problems = cfg.problems();
        if synth_seed_set {
            problems
                .push("data.synth.seed is derived from the root seed; set `seed` instead".into());
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError(problems).into())
        }
    }

    fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.seed.is_none() {
            p.push("seed is required".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            p.push(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            ));
        }
        match self.data.source {
            SourceKind::Synth => {
                if let Err(e) = self.data.synth.validate() {
                    p.push(format!("data.synth: {e}"));
                }
            }
            SourceKind::Deap => match &self.data.deap_dir {
                None => p.push("data.deap_dir is required for source = \"deap\"".into()),
                Some(d) if !d.is_dir() => {
                    p.push(format!("data.deap_dir {} is not a directory", d.display()))
                }
                Some(_) => {}
            },
            SourceKind::Dataset => match &self.data.dataset {
                None => p.push("data.dataset is required for source = \"dataset\"".into()),
                Some(f) if !f.is_file() => {
                    p.push(format!("data.dataset {} does not exist", f.display()))
                }
                Some(_) => {}
            },
        }
        if self.data.channels.segment_dim == 0 {
            p.push("data.channels.segment_dim must be positive".into());
        }
        let stages = [
            ("train.pretrain", Some(&self.train.pretrain)),
            ("train.joint", Some(&self.train.joint)),
        ];
        for (name, stage) in stages
            .into_iter()
            .chain([("train.finetune", self.train.finetune.as_ref())])
        {
            if let Some(Err(e)) = stage.map(TrainConfig::validate) {
                p.push(format!("{name}: {e}"));
            }
        }
        let a = &self.architecture;
        match (&a.pathway_dims, a.joint_dim) {
            (Some(dims), Some(j)) => {
                if dims.is_empty() || dims.contains(&0) || j == 0 {
                    p.push("architecture dimensions must be non-empty and positive".into());
                }
            }
            (None, None) => {}
            _ => p.push(
                "architecture.pathway_dims and architecture.joint_dim must be given together"
                    .into(),
            ),
        }
        if self.eval.rows.is_empty() {
            p.push("eval.rows must not be empty".into());
        }
        if self.eval.partition_row >= self.eval.rows.len().max(1) {
            p.push(format!(
                "eval.partition_row {} is out of range for {} rows",
                self.eval.partition_row,
                self.eval.rows.len()
            ));
        }
        for f in &self.eval.partitions {
            if !(*f > 0.0 && *f < 1.0) {
                p.push(format!(
                    "eval.partitions entries must be in (0, 1), got {f}"
                ));
            }
        }
        if let Err(e) = self.eval.wavelet.validate() {
            p.push(format!("eval.wavelet: {e}"));
        }
        p
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated")
    }

    /// Segment length the data will have, when known before loading.
    pub fn expected_segment_dim(&self) -> Option<usize> {
        match self.data.source {
            SourceKind::Synth => Some(self.data.synth.segment_dim),
            SourceKind::Deap => Some(self.data.channels.segment_dim),
            SourceKind::Dataset => None,
        }
    }

    /// The configured architecture, or the 80% reference row scaled to `segment_dim`.
    pub fn architecture(&self, segment_dim: usize) -> Architecture {
        let a = &self.architecture;
        let mut arch = match (&a.pathway_dims, a.joint_dim) {
            (Some(dims), Some(j)) => {
                let stack: Vec<usize> = std::iter::once(segment_dim)
                    .chain(dims.iter().copied())
                    .collect();
                Architecture {
                    eeg_dims: stack.clone(),
                    emg_dims: stack,
                    joint_dim: j,
                    activation: ActivationKind::Sigmoid,
                }
            }
            _ => REFERENCE_ROWS[7]
                .scaled(segment_dim)
                .architecture(segment_dim),
        };
        if let Some(act) = a.activation {
            arch.activation = act;
        }
        arch
    }

    /// The config as embedded in artifacts and reports. The output directory
    /// is left out so the same run written elsewhere gives identical files.
    pub fn provenance(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 3\n[data]\nsource = \"synth\"\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.seed(), 3);
        assert_eq!(cfg.train, PipelineConfig::default());
        assert_eq!(cfg.eval.rows.len(), 9);
        let arch = cfg.architecture(64);
        assert_eq!((arch.eeg_dims.clone(), arch.joint_dim), (vec![64, 31], 13));
    }

    #[test]
    fn overrides_set_nested_leaves() {
        let sets = [
            "train.joint.epochs=7".to_string(),
            "data.synth.noise = 0.5".to_string(),
            "architecture.pathway_dims=[20, 10]".to_string(),
            "architecture.joint_dim=4".to_string(),
            "architecture.activation=identity".to_string(),
        ];
        let cfg = RunConfig::from_toml(MINIMAL, &sets).unwrap();
        assert_eq!(cfg.train.joint.epochs, 7);
        assert_eq!(cfg.data.synth.noise, 0.5);
        let arch = cfg.architecture(32);
        assert_eq!(arch.eeg_dims, vec![32, 20, 10]);
        assert_eq!(arch.activation, ActivationKind::Identity);
    }

    #[test]
    fn all_problems_are_reported_together() {
        let text = "train_fraction = 1.5\n[data]\nsource = \"deap\"\n[train.pretrain]\nlr = -1.0\n";
        let err = RunConfig::from_toml(text, &[]).unwrap_err();
        let cfg_err = err.downcast_ref::<ConfigError>().unwrap();
        let joined = cfg_err.0.join("\n");
        assert_eq!(cfg_err.0.len(), 4, "{joined}");
        for needle in [
            "seed is required",
            "train_fraction",
            "deap_dir",
            "train.pretrain",
        ] {
            assert!(joined.contains(needle), "{needle} missing from {joined}");
        }
    }

    #[test]
    fn unknown_keys_and_synth_seed_are_rejected() {
        assert!(RunConfig::from_toml(MINIMAL, &["train.joint.epoch=3".into()]).is_err());
        let err = RunConfig::from_toml(MINIMAL, &["data.synth.seed=9".into()]).unwrap_err();
        assert!(
            err.to_string().contains("derived from the root seed")
                || format!("{err:#}").contains("root seed")
        );
        assert!(RunConfig::from_toml(MINIMAL, &["novalue".into()]).is_err());
    }

    #[test]
    fn provenance_omits_output_dir() {
        let a = RunConfig::from_toml(MINIMAL, &["output_dir=a".into()]).unwrap();
        let b = RunConfig::from_toml(MINIMAL, &["output_dir=b".into()]).unwrap();
        assert_eq!(a.provenance(), b.provenance());
    }

    #[test]
    fn shipped_configs_validate() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let tmp = std::env::temp_dir();
        let deap = format!("data.deap_dir={}", tmp.display());
        for name in [
            "deap-repro.toml",
            "synth-quickstart.toml",
            "synth-sweep.toml",
        ] {
            let cfg = RunConfig::load(&dir.join(name), std::slice::from_ref(&deap))
                .unwrap_or_else(|e| panic!("{name}: {e:#}"));
            assert!(cfg.output_dir.is_some(), "{name}");
        }
    }
}
