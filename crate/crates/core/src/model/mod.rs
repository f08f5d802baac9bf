//! Residual CNN backbones with hand-written backpropagation, f64 throughout.

mod archive;
mod layers;
mod loss;
mod resnet;
mod tensor;

pub use archive::{NamedTensor, WeightArchive, FORMAT_VERSION as ARCHIVE_FORMAT_VERSION};
pub use layers::{Buffer, Param};
pub use loss::{cross_entropy_loss, softmax};
pub use resnet::{build_model, lookup_backbone, BackboneSpec, Batch, Family, Init, Model, REGISTRY};
pub use tensor::Matrix;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentedSample;
use crate::error::{Error, Result};

/// Input normalisation. Grayscale pixels are scaled to [0, 1], replicated
/// to three channels and standardised with statistics from the training
/// split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer {
            mean: [0.5; 3],
            std: [0.25; 3],
        }
    }
}

impl Normalizer {
    pub fn fit(samples: &[AugmentedSample]) -> Result<Self> {
        let (mut sum, mut sq, mut n) = (0.0, 0.0, 0usize);
        for s in samples {
            for p in s.image.as_raw() {
                let v = f64::from(*p) / 255.0;
                sum += v;
                sq += v * v;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::InvalidTrainConfig(
                "cannot fit normalisation on an empty training set".into(),
            ));
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = var.sqrt().max(1e-6);
        Ok(Normalizer {
            mean: [mean; 3],
            std: [std; 3],
        })
    }

    /// Build an `N x H x W x 3` batch from `samples[idx]`.
    pub fn batch(&self, samples: &[AugmentedSample], idx: &[usize]) -> Result<Batch> {
        let size = idx.first().map_or(0, |&i| samples[i].image.width() as usize);
        let mut data = Vec::with_capacity(idx.len() * size * size * 3);
        for &i in idx {
            let img = &samples[i].image;
            if img.width() as usize != size || img.height() as usize != size {
                return Err(Error::Shape(format!(
                    "sample `{}` is {}x{}, expected {size}x{size}",
                    samples[i].parent_cell_id,
                    img.width(),
                    img.height()
                )));
            }
            for p in img.as_raw() {
                let v = f64::from(*p) / 255.0;
                for c in 0..3 {
                    data.push((v - self.mean[c]) / self.std[c]);
                }
            }
        }
        Batch::new(idx.len(), size, data)
    }
}
