//! Checkpoint files: a safetensors archive of named tensors whose header
//! metadata carries the spec fingerprint of every stored network.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::discriminator::MultiScaleDiscriminator;
use super::generator::Generator;
use super::layers::ParamStore;
use crate::error::{Error, Result};

const META_KEY: &str = "outpaint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    /// Network slot (tensor-name prefix) → spec fingerprint.
    pub fingerprints: BTreeMap<String, String>,
    /// Free-form trainer state (epoch, step, config, rng position).
    #[serde(default)]
    pub trainer: Option<serde_json::Value>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: HashMap<String, Tensor>,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self::new()
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self {
            meta: CheckpointMeta {
                format_version: FORMAT_VERSION,
                ..Default::default()
            },
            tensors: HashMap::new(),
        }
    }

    fn add_store(&mut self, slot: &str, fingerprint: String, store: &ParamStore) {
        self.meta.fingerprints.insert(slot.to_string(), fingerprint);
        for (name, t) in store.state(&format!("{slot}.")) {
            self.tensors.insert(name, t);
        }
    }

    pub fn add_generator(&mut self, slot: &str, g: &Generator) {
        self.add_store(slot, g.fingerprint(), g.params());
    }

    pub fn add_discriminator(&mut self, slot: &str, d: &MultiScaleDiscriminator) {
        self.add_store(slot, d.fingerprint(), d.params());
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    fn restore_store(&self, slot: &str, expected: String, store: &ParamStore) -> Result<()> {
        let found = self
            .meta
            .fingerprints
            .get(slot)
            .ok_or_else(|| Error::MalformedCheckpoint(format!("no network stored under '{slot}'")))?;
        if *found != expected {
            return Err(Error::CheckpointMismatch {
                expected,
                found: found.clone(),
            });
        }
        store.load_state(&format!("{slot}."), |n| self.tensors.get(n).cloned())
    }

    /// Loads weights into `g` after checking the stored fingerprint.
    pub fn restore_generator(&self, slot: &str, g: &Generator) -> Result<()> {
        self.restore_store(slot, g.fingerprint(), g.params())
    }

    pub fn restore_discriminator(&self, slot: &str, d: &MultiScaleDiscriminator) -> Result<()> {
        self.restore_store(slot, d.fingerprint(), d.params())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut info = HashMap::new();
        info.insert(META_KEY.to_string(), serde_json::to_string(&self.meta)?);
        let mut entries: Vec<(&String, &Tensor)> = self.tensors.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        safetensors::serialize(entries, Some(info))
            .map_err(|e| Error::MalformedCheckpoint(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8], device: &Device) -> Result<Self> {
        let (_, header) = safetensors::SafeTensors::read_metadata(bytes)
            .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        let raw_meta = header
            .metadata()
            .as_ref()
            .and_then(|m| m.get(META_KEY))
            .ok_or_else(|| Error::MalformedCheckpoint("missing checkpoint metadata".into()))?;
        let meta: CheckpointMeta = serde_json::from_str(raw_meta)
            .map_err(|e| Error::MalformedCheckpoint(format!("metadata: {e}")))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::MalformedCheckpoint(format!(
                "unsupported format version {}",
                meta.format_version
            )));
        }
        let tensors = candle_core::safetensors::load_buffer(bytes, device)
            .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.to_bytes()?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, device)
    }
}
