use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::Device;
use outpaint::layout_data::{
    AnnotationOracle, ConstantSegmenter, DatasetProfile, Manifest, PrecomputedLayouts, Segmenter, Split,
};
use outpaint::pipeline::Models;
use outpaint::trainer::{TrainConfig, TrainStage};
use outpaint::Error;
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

/// Where the crop's own layout comes from at inference time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SegmenterConfig {
    /// Ground-truth layouts of every manifest record, looked up by file stem.
    #[default]
    Annotations,
    /// One class everywhere.
    Constant { class: u16 },
    /// `<dir>/<source id>.png` label maps computed offline.
    Precomputed { dir: PathBuf },
}

/// Contents of the TOML file passed with `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: String,
    pub manifest: PathBuf,
    pub checkpoint_dir: PathBuf,
    /// Explicit checkpoints; default to `<checkpoint_dir>/<stage>_latest.safetensors`.
    pub stage1: Option<PathBuf>,
    pub stage2: Option<PathBuf>,
    pub segmenter: SegmenterConfig,
    /// Seed of the FID feature embedder.
    pub eval_seed: u64,
    /// Training hyperparameters; the profile's preset when absent.
    pub train: Option<TrainConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            profile: "desk".into(),
            manifest: "data/toy/manifest.tsv".into(),
            checkpoint_dir: "checkpoints".into(),
            stage1: None,
            stage2: None,
            segmenter: SegmenterConfig::Annotations,
            eval_seed: 0,
            train: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.profile()?;
        if let Some(t) = &cfg.train {
            t.validate()?;
        }
        Ok(cfg)
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn profile(&self) -> Result<DatasetProfile> {
        DatasetProfile::by_name(&self.profile).map_err(|e| Error::Config(e.to_string()).into())
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(match &self.train {
            Some(t) => t.clone(),
            None if self.profile == "desk" => TrainConfig::desk(),
            None => TrainConfig::default(),
        })
    }

    pub fn manifest(&self) -> Result<Manifest> {
        Ok(Manifest::load(&self.manifest)?)
    }

    pub fn checkpoint_path(&self, stage: TrainStage) -> PathBuf {
        let explicit = match stage {
            TrainStage::Layout => self.stage1.clone(),
            TrainStage::Image => self.stage2.clone(),
            _ => None,
        };
        explicit.unwrap_or_else(|| {
            let name = serde_json::to_value(stage)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default();
            self.checkpoint_dir.join(format!("{name}_latest.safetensors"))
        })
    }

    pub fn segmenter(&self, profile: &DatasetProfile) -> Result<Arc<dyn Segmenter>> {
        Ok(match &self.segmenter {
            SegmenterConfig::Constant { class } => Arc::new(ConstantSegmenter {
                class: *class,
                num_classes: profile.num_classes,
            }),
            SegmenterConfig::Precomputed { dir } => Arc::new(PrecomputedLayouts {
                dir: dir.clone(),
                num_classes: profile.num_classes,
            }),
            SegmenterConfig::Annotations => {
                let manifest = self.manifest()?;
                let mut oracle = AnnotationOracle::new(profile.num_classes);
                for split in [Split::Train, Split::Val, Split::Test] {
                    for s in manifest.load_samples(split, profile)? {
                        oracle.insert(s.source_id, s.layout);
                    }
                }
                Arc::new(oracle)
            }
        })
    }

    /// Both generators plus the configured segmenter.
    pub fn models(&self, device: &Device) -> Result<Models> {
        let profile = self.profile()?;
        let (s1, s2) = (self.checkpoint_path(TrainStage::Layout), self.checkpoint_path(TrainStage::Image));
        for p in [&s1, &s2] {
            if !p.exists() {
                return Err(CliError::MissingCheckpoint(p.clone()));
            }
        }
        let segmenter = self.segmenter(&profile)?;
        Ok(Models::from_checkpoints(profile, &s1, &s2, segmenter, device)?)
    }
}
