//! Dataset ingestion, model files and experiment reports.
//!
//! Pixels are kept in normalized `[0,1]` space (byte value / 255), so an
//! L∞ budget of `ε = 0.3` corresponds to about 76 of 255 grey levels.

mod idx;
mod model;
pub mod report;

pub use idx::{
    encode_images, encode_labels, load_mnist_idx, write_idx_images, write_idx_labels, IMAGES_MAGIC,
    LABELS_MAGIC,
};
pub use model::{load_model, model_from_json, model_to_json, save_model};

use crate::error::{Error, Result};
use crate::nn::LabeledExample;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub name: String,
    /// SHA-256 over the raw image file followed by the raw label file.
    pub source_digest: String,
    pub image_shape: (usize, usize),
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.image_shape.0 * self.image_shape.1
    }

    /// Fails unless the source files hash to `expected` (hex, case-insensitive).
    pub fn verify_digest(&self, expected: &str) -> Result<()> {
        if self.source_digest.eq_ignore_ascii_case(expected.trim()) {
            Ok(())
        } else {
            Err(Error::Report(format!(
                "dataset digest {} does not match expected {}",
                self.source_digest, expected
            )))
        }
    }

    /// First `n` examples (or all, if fewer).
    pub fn head(&self, n: usize) -> &[LabeledExample] {
        &self.examples[..n.min(self.examples.len())]
    }
}
