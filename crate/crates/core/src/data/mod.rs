//! Cell/image data model, manifest ingestion and provenance-aware splits.

mod manifest;
mod split;

pub use manifest::{load_manifest, load_manifest_with_root, Manifest, MANIFEST_HEADER, SCHEMA_VERSION};
pub use split::{
    make_split, split_report, DatasetSplit, Rounding, SplitCounts, SplitMode, SplitPolicy,
};

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

/// Class label. CTC is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Ctc,
    Leuko,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Ctc, Label::Leuko];

    /// Class index used by the classifier head: CTC = 1, LEUKO = 0.
    pub fn index(self) -> usize {
        match self {
            Label::Ctc => 1,
            Label::Leuko => 0,
        }
    }

    pub fn from_index(i: usize) -> Label {
        if i == 1 {
            Label::Ctc
        } else {
            Label::Leuko
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Ctc => "CTC",
            Label::Leuko => "LEUKO",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CTC" => Ok(Label::Ctc),
            "LEUKO" => Ok(Label::Leuko),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// Where a cell came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Provenance {
    /// Cell-line cells spiked into healthy blood; train/val only.
    Spiked,
    /// Cells from patient samples; CTCs of this provenance are test-only.
    Patient,
    Healthy,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Spiked => "SPIKED",
            Provenance::Patient => "PATIENT",
            Provenance::Healthy => "HEALTHY",
        }
    }

    pub fn allowed_for(self, label: Label) -> bool {
        matches!(
            (label, self),
            (Label::Ctc, Provenance::Spiked | Provenance::Patient)
                | (Label::Leuko, Provenance::Patient | Provenance::Healthy)
        )
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SPIKED" => Ok(Provenance::Spiked),
            "PATIENT" => Ok(Provenance::Patient),
            "HEALTHY" => Ok(Provenance::Healthy),
            other => Err(format!("unknown provenance `{other}`")),
        }
    }
}

/// Imaging channel of a single-cell image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Channel {
    /// Bright-field, the only channel used at inference in the BF arms.
    Bf,
    /// DAPI nuclear stain.
    Dapi,
}

impl Channel {
    pub fn other(self) -> Channel {
        match self {
            Channel::Bf => Channel::Dapi,
            Channel::Dapi => Channel::Bf,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Bf => "BF",
            Channel::Dapi => "DAPI",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One physical cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell_id: String,
    pub label: Label,
    pub provenance: Provenance,
    /// Relative to the manifest's image root.
    pub bf_path: PathBuf,
    pub dapi_path: Option<PathBuf>,
    pub source_tag: String,
}

impl CellRecord {
    pub fn path(&self, channel: Channel) -> Option<&PathBuf> {
        match channel {
            Channel::Bf => Some(&self.bf_path),
            Channel::Dapi => self.dapi_path.as_ref(),
        }
    }

    pub fn has_channel(&self, channel: Channel) -> bool {
        self.path(channel).is_some()
    }
}
