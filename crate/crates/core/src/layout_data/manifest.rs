//! Dataset manifests: one tab-separated `image_path  layout_path  split`
//! record per line. `#` starts a comment line; blank lines are ignored.
//! Relative paths resolve against the manifest's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::augment::{resize_layout, resize_pixels};
use super::cityscapes::cityscapes_split;
use super::io::{read_label_map, read_rgb};
use super::profile::DatasetProfile;
use super::types::{BinaryMask, ImageSample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image_path: PathBuf,
    pub layout_path: PathBuf,
    pub split: Split,
}

impl ManifestRecord {
    /// File stem of the image, used as the sample's source id.
    pub fn source_id(&self) -> String {
        self.image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let bad = |reason: String| Error::Manifest {
            line: i + 1,
            reason,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(bad("empty path".into()));
        }
        records.push(ManifestRecord {
            image_path: PathBuf::from(fields[0]),
            layout_path: PathBuf::from(fields[1]),
            split: fields[2].trim().parse().map_err(bad)?,
        });
    }
    Ok(records)
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::DatasetNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self {
            root,
            records: parse_manifest(&text)?,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Loads one split at the profile's resolution, with fully-known masks.
    /// 1:2 profiles contribute two mirrored squares per record.
    pub fn load_samples(&self, split: Split, profile: &DatasetProfile) -> Result<Vec<ImageSample>> {
        let mut out = Vec::new();
        for rec in self.split(split) {
            let image_path = self.resolve(&rec.image_path);
            let layout_path = self.resolve(&rec.layout_path);
            for p in [&image_path, &layout_path] {
                if !p.exists() {
                    return Err(Error::DatasetNotFound(p.clone()));
                }
            }
            let pixels = read_rgb(&image_path)?;
            let layout = read_label_map(&layout_path, profile.num_classes)?;
            let size = profile.image_size;
            let (h, w) = if profile.split_halves { (size, 2 * size) } else { (size, size) };
            let pixels = resize_pixels(&pixels, h, w);
            let layout = resize_layout(&layout, h, w)?;
            let sample = ImageSample::new(pixels, layout, BinaryMask::all_known(h, w), rec.source_id())?;
            if profile.split_halves {
                let (l, r) = cityscapes_split(&sample)?;
                out.push(l);
                out.push(r);
            } else {
                out.push(sample);
            }
        }
        Ok(out)
    }
}
