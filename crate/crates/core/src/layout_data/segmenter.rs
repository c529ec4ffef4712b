//! Semantic segmenter abstraction.
//!
//! The pretrained segmentation networks are not part of this crate. Three
//! implementations are shipped: a ground-truth lookup for desk-scale runs, a
//! constant stub, and an adapter over layout files computed offline by an
//! external model.

use std::collections::HashMap;
use std::path::PathBuf;

use super::io::read_label_map;
use super::types::{Pixels, SemanticLayout};
use crate::error::{Error, Result};

/// What the segmenter is asked to label.
#[derive(Clone, Copy, Debug)]
pub struct SegmentInput<'a> {
    pub source_id: &'a str,
    pub pixels: &'a Pixels,
}

pub trait Segmenter: Send + Sync {
    fn num_classes(&self) -> usize;

    /// Predicts a layout with the same extent as `input.pixels`.
    fn predict(&self, input: &SegmentInput<'_>) -> Result<SemanticLayout>;

    /// Whether `predict` may be called from several threads at once.
    fn is_reentrant(&self) -> bool {
        true
    }
}

/// Labels every pixel with one class.
#[derive(Clone, Debug)]
pub struct ConstantSegmenter {
    pub class: u16,
    pub num_classes: usize,
}

impl Segmenter for ConstantSegmenter {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict(&self, input: &SegmentInput<'_>) -> Result<SemanticLayout> {
        SemanticLayout::filled(
            input.pixels.height(),
            input.pixels.width(),
            self.class,
            self.num_classes,
        )
        .map_err(|e| Error::SegmentationFailed(e.to_string()))
    }
}

/// Returns stored annotations by source id.
///
/// A narrower input than the stored annotation is treated as a left crop of the
/// same image, so the prediction is the annotation's left columns.
#[derive(Clone, Debug, Default)]
pub struct AnnotationOracle {
    num_classes: usize,
    annotations: HashMap<String, SemanticLayout>,
}

impl AnnotationOracle {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            annotations: HashMap::new(),
        }
    }

    pub fn insert(&mut self, source_id: impl Into<String>, layout: SemanticLayout) {
        self.annotations.insert(source_id.into(), layout);
    }
}

impl Segmenter for AnnotationOracle {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict(&self, input: &SegmentInput<'_>) -> Result<SemanticLayout> {
        let stored = self.annotations.get(input.source_id).ok_or_else(|| {
            Error::SegmentationFailed(format!("no annotation for '{}'", input.source_id))
        })?;
        let (h, w) = (input.pixels.height(), input.pixels.width());
        if stored.height() != h || stored.width() < w {
            return Err(Error::SegmentationFailed(format!(
                "annotation {}x{} cannot cover input {h}x{w}",
                stored.height(),
                stored.width()
            )));
        }
        if stored.width() == w {
            Ok(stored.clone())
        } else {
            stored.crop(0, 0, h, w)
        }
    }
}

/// Reads `<dir>/<source_id>.png` label maps produced offline by an external model.
#[derive(Clone, Debug)]
pub struct PrecomputedLayouts {
    pub dir: PathBuf,
    pub num_classes: usize,
}

impl Segmenter for PrecomputedLayouts {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict(&self, input: &SegmentInput<'_>) -> Result<SemanticLayout> {
        if input.source_id.contains(['/', '\\']) || input.source_id.starts_with('.') {
            return Err(Error::SegmentationFailed(format!(
                "source id '{}' is not a plain file stem",
                input.source_id
            )));
        }
        let path = self.dir.join(format!("{}.png", input.source_id));
        let layout = read_label_map(&path, self.num_classes)
            .map_err(|e| Error::SegmentationFailed(format!("{}: {e}", path.display())))?;
        if layout.height() != input.pixels.height() || layout.width() != input.pixels.width() {
            return Err(Error::SegmentationFailed(format!(
                "{} is {}x{}, input is {}x{}",
                path.display(),
                layout.height(),
                layout.width(),
                input.pixels.height(),
                input.pixels.width()
            )));
        }
        Ok(layout)
    }
}
