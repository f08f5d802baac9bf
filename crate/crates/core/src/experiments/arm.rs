use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Channel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ArmName {
    Aug1,
    Aug2,
    BfWoDapi,
    BfWDapiNoAug,
    BfWDapi,
    DapiWoBf,
    DapiWBf,
}

impl ArmName {
    pub const ALL: [ArmName; 7] = [
        ArmName::Aug1,
        ArmName::Aug2,
        ArmName::BfWoDapi,
        ArmName::BfWDapiNoAug,
        ArmName::BfWDapi,
        ArmName::DapiWoBf,
        ArmName::DapiWBf,
    ];

    /// Identifier used in configs, file names and CSV columns.
    pub fn as_str(self) -> &'static str {
        match self {
            ArmName::Aug1 => "AUG1",
            ArmName::Aug2 => "AUG2",
            ArmName::BfWoDapi => "BF_WO_DAPI",
            ArmName::BfWDapiNoAug => "BF_W_DAPI_NO_AUG",
            ArmName::BfWDapi => "BF_W_DAPI",
            ArmName::DapiWoBf => "DAPI_WO_BF",
            ArmName::DapiWBf => "DAPI_W_BF",
        }
    }

    /// Row label for report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ArmName::Aug1 => "AUG1",
            ArmName::Aug2 => "AUG2",
            ArmName::BfWoDapi => "BF w/o DAPI",
            ArmName::BfWDapiNoAug => "BF w/ DAPI no AUG",
            ArmName::BfWDapi => "BF w/ DAPI",
            ArmName::DapiWoBf => "DAPI w/o BF",
            ArmName::DapiWBf => "DAPI w/ BF",
        }
    }
}

impl fmt::Display for ArmName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArmName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace(['-', ' '], "_");
        ArmName::ALL
            .into_iter()
            .find(|a| a.as_str() == key)
            .ok_or_else(|| Error::Config {
                location: "arm".into(),
                message: format!(
                    "unknown arm `{s}` (expected one of {})",
                    ArmName::ALL.map(|a| a.as_str()).join(", ")
                ),
            })
    }
}

/// Training-data composition of one ablation arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentArm {
    pub name: ArmName,
    pub primary_channel: Channel,
    pub n_aug_ops: usize,
    pub inject_other_channel: bool,
}

impl ExperimentArm {
    pub fn from_name(name: ArmName) -> Self {
        use ArmName::*;
        let (primary_channel, n_aug_ops, inject_other_channel) = match name {
            Aug1 => (Channel::Bf, 1, false),
            Aug2 => (Channel::Bf, 2, false),
            BfWoDapi => (Channel::Bf, 3, false),
            BfWDapiNoAug => (Channel::Bf, 0, true),
            BfWDapi => (Channel::Bf, 3, true),
            DapiWoBf => (Channel::Dapi, 3, false),
            DapiWBf => (Channel::Dapi, 3, true),
        };
        ExperimentArm {
            name,
            primary_channel,
            n_aug_ops,
            inject_other_channel,
        }
    }

    /// Samples produced per training record.
    pub fn multiplier(&self) -> usize {
        1 + self.n_aug_ops + usize::from(self.inject_other_channel)
    }

    /// Whether training touches the non-primary channel at all.
    pub fn needs_other_channel(&self) -> bool {
        self.inject_other_channel
    }

    /// Channels a manifest record must provide for this arm.
    pub fn required_channels(&self) -> Vec<Channel> {
        let mut v = vec![self.primary_channel];
        if self.inject_other_channel {
            v.push(self.primary_channel.other());
        }
        v
    }

    /// One-line description recorded in run manifests.
    pub fn resolution(&self) -> String {
        format!(
            "{}: primary {}, {} augmentation op(s), {} injection of {}",
            self.name.display_name(),
            self.primary_channel.as_str(),
            self.n_aug_ops,
            if self.inject_other_channel { "with" } else { "no" },
            self.primary_channel.other().as_str(),
        )
    }
}
