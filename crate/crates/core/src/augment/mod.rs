//! The three augmentation operations, cross-channel injection, and the
//! per-arm expansion of a training set.

mod ops;
mod resize;

pub use ops::{apply_op, rotate, AugmentationKind, AugmentationOp, OpParams, Range};
pub use resize::resize_to_working;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CellRecord, Channel, Label};
use crate::error::{Error, Result};
use crate::experiments::{ArmName, ExperimentArm};
use crate::imaging::{self, GrayImage};
use crate::rng;
use crate::source::ImageSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Origin {
    Original,
    AugGeometric,
    AugBrightness,
    AugColor,
    OtherChannel,
}

impl Origin {
    fn from_kind(kind: AugmentationKind) -> Self {
        match kind {
            AugmentationKind::Geometric => Origin::AugGeometric,
            AugmentationKind::Brightness => Origin::AugBrightness,
            AugmentationKind::Color => Origin::AugColor,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub parent_cell_id: String,
    pub image: GrayImage,
    pub label: Label,
    pub origin: Origin,
    /// Channel the pixels were read from.
    pub channel: Channel,
}

/// Operation parameters and arm compositions used to build plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSettings {
    pub geometric: OpParams,
    pub brightness: OpParams,
    pub color: OpParams,
    /// Operation used by the single-op arm.
    pub one_op: Vec<AugmentationKind>,
    /// Operations used by the two-op arm.
    pub two_ops: Vec<AugmentationKind>,
    pub seed: u64,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        AugmentSettings {
            geometric: OpParams::default_for(AugmentationKind::Geometric),
            brightness: OpParams::default_for(AugmentationKind::Brightness),
            color: OpParams::default_for(AugmentationKind::Color),
            one_op: vec![AugmentationKind::Geometric],
            two_ops: vec![AugmentationKind::Geometric, AugmentationKind::Brightness],
            seed: 0,
        }
    }
}

impl AugmentSettings {
    fn params(&self, kind: AugmentationKind) -> OpParams {
        match kind {
            AugmentationKind::Geometric => self.geometric.clone(),
            AugmentationKind::Brightness => self.brightness.clone(),
            AugmentationKind::Color => self.color.clone(),
        }
    }

    /// Operation kinds for an arm with `n` augmentation operations.
    pub fn kinds_for(&self, n: usize) -> Vec<AugmentationKind> {
        match n {
            0 => vec![],
            1 => self.one_op.clone(),
            2 => self.two_ops.clone(),
            _ => vec![
                AugmentationKind::Geometric,
                AugmentationKind::Brightness,
                AugmentationKind::Color,
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (kind, p) in [
            (AugmentationKind::Geometric, &self.geometric),
            (AugmentationKind::Brightness, &self.brightness),
            (AugmentationKind::Color, &self.color),
        ] {
            if p.kind() != kind {
                return Err(Error::InvalidAugmentation(format!(
                    "{kind:?} slot holds {:?} parameters",
                    p.kind()
                )));
            }
            AugmentationOp::new(p.clone(), 0).validate()?;
        }
        if self.one_op.len() != 1 || self.two_ops.len() != 2 {
            return Err(Error::InvalidAugmentation(
                "one_op must list one operation and two_ops two".into(),
            ));
        }
        Ok(())
    }
}

/// How one arm turns training records into samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelinePlan {
    pub arm: ArmName,
    pub primary_channel: Channel,
    pub ops: Vec<AugmentationOp>,
    pub inject_other_channel: bool,
    pub working_size: u32,
}

impl PipelinePlan {
    pub fn for_arm(arm: &ExperimentArm, settings: &AugmentSettings, working_size: u32) -> Self {
        let ops = settings
            .kinds_for(arm.n_aug_ops)
            .into_iter()
            .enumerate()
            .map(|(i, kind)| {
                AugmentationOp::new(settings.params(kind), rng::derive(settings.seed, i as u64))
            })
            .collect();
        PipelinePlan {
            arm: arm.name,
            primary_channel: arm.primary_channel,
            ops,
            inject_other_channel: arm.inject_other_channel,
            working_size,
        }
    }

    /// Samples emitted per training record.
    pub fn multiplier(&self) -> usize {
        1 + self.ops.len() + usize::from(self.inject_other_channel)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ops.len() > 3 {
            return Err(Error::InvalidAugmentation(format!(
                "at most 3 operations per plan, got {}",
                self.ops.len()
            )));
        }
        if self.working_size == 0 {
            return Err(Error::InvalidAugmentation("working size must be >= 1".into()));
        }
        self.ops.iter().try_for_each(AugmentationOp::validate)
    }
}

/// Expand training records into samples: per record the original, one
/// augmented copy per operation, then (if requested) the other channel's
/// image untransformed. Output order follows `records`.
pub fn expand_training_set(
    records: &[CellRecord],
    plan: &PipelinePlan,
    source: &dyn ImageSource,
) -> Result<Vec<AugmentedSample>> {
    plan.validate()?;
    let primary = plan.primary_channel;
    let other = primary.other();
    for r in records {
        if !r.has_channel(primary) {
            return Err(Error::MissingChannel {
                cell_id: r.cell_id.clone(),
                channel: primary.to_string(),
            });
        }
        if plan.inject_other_channel && !r.has_channel(other) {
            return Err(Error::MissingChannel {
                cell_id: r.cell_id.clone(),
                channel: other.to_string(),
            });
        }
    }

    let per_record = records
        .par_iter()
        .map(|r| -> Result<Vec<AugmentedSample>> {
            let base = resize_to_working(&source.load(r, primary)?, plan.working_size);
            let mut out = Vec::with_capacity(plan.multiplier());
            let key = rng::str_id(&r.cell_id);
            for (k, op) in plan.ops.iter().enumerate() {
                let img = apply_op(&base, op, rng::derive(key, k as u64))?;
                out.push(AugmentedSample {
                    parent_cell_id: r.cell_id.clone(),
                    image: img,
                    label: r.label,
                    origin: Origin::from_kind(op.kind()),
                    channel: primary,
                });
            }
            out.insert(
                0,
                AugmentedSample {
                    parent_cell_id: r.cell_id.clone(),
                    image: base,
                    label: r.label,
                    origin: Origin::Original,
                    channel: primary,
                },
            );
            if plan.inject_other_channel {
                let img = resize_to_working(&source.load(r, other)?, plan.working_size);
                out.push(AugmentedSample {
                    parent_cell_id: r.cell_id.clone(),
                    image: img,
                    label: r.label,
                    origin: Origin::OtherChannel,
                    channel: other,
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_record.into_iter().flatten().collect())
}

/// Load the primary-channel images of evaluation records at working size.
pub fn load_eval_set(
    records: &[CellRecord],
    channel: Channel,
    working_size: u32,
    source: &dyn ImageSource,
) -> Result<Vec<AugmentedSample>> {
    records
        .par_iter()
        .map(|r| {
            Ok(AugmentedSample {
                parent_cell_id: r.cell_id.clone(),
                image: resize_to_working(&source.load(r, channel)?, working_size),
                label: r.label,
                origin: Origin::Original,
                channel,
            })
        })
        .collect()
}

/// SHA-256 over ids, labels, origins, shapes and pixels, in order.
pub fn samples_digest(samples: &[AugmentedSample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.parent_cell_id.as_bytes());
        h.update([0u8, s.label.index() as u8, s.origin as u8, s.channel as u8]);
        h.update(s.image.width().to_le_bytes());
        h.update(s.image.height().to_le_bytes());
        h.update(s.image.as_raw());
    }
    hex::encode(h.finalize())
}

/// Write samples as PNGs: originals keep `<id>_<CH>.png`, augmented copies
/// get `_augN`, injected images `_<CH>INJ`.
pub fn write_samples(samples: &[AugmentedSample], dir: &Path) -> Result<Vec<String>> {
    let mut counters = std::collections::HashMap::<&str, usize>::new();
    let mut names = Vec::with_capacity(samples.len());
    for s in samples {
        let name = match s.origin {
            Origin::Original => format!("{}_{}.png", s.parent_cell_id, s.channel),
            Origin::OtherChannel => format!("{}_{}INJ.png", s.parent_cell_id, s.channel),
            _ => {
                let n = counters.entry(s.parent_cell_id.as_str()).or_insert(0);
                *n += 1;
                format!("{}_{}_aug{}.png", s.parent_cell_id, s.channel, n)
            }
        };
        imaging::save_png(&dir.join(&name), &s.image)?;
        names.push(name);
    }
    Ok(names)
}
