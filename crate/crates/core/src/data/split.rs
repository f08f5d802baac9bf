use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Label, Manifest, Provenance};
use crate::error::{Error, Result};
use crate::rng;

/// How a fractional count is turned into a whole number of records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    #[default]
    Floor,
    Nearest,
}

impl Rounding {
    fn apply(self, x: f64) -> usize {
        // absorb representation error such as 0.15 * 80 = 11.999...
        let v = match self {
            Rounding::Floor => (x + 1e-9).floor(),
            Rounding::Nearest => (x + 1e-9).round(),
        };
        v.max(0.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SplitMode {
    /// Verbatim per-class counts.
    ExactCounts {
        val_ctc: usize,
        val_leuko: usize,
        test_ctc: usize,
        test_leuko: usize,
    },
    /// All patient CTCs go to test; `leuko_test_fraction` of all leukocytes
    /// go to test; `val_fraction` of what remains per class goes to
    /// validation.
    Fractions {
        val_fraction: f64,
        #[serde(default = "default_leuko_test_fraction")]
        leuko_test_fraction: f64,
        #[serde(default)]
        rounding: Rounding,
    },
}

fn default_leuko_test_fraction() -> f64 {
    0.15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPolicy {
    #[serde(flatten)]
    pub mode: SplitMode,
    pub seed: u64,
}

impl SplitPolicy {
    /// Counts of the reference partition: 50/29 validation, 52/56 test.
    pub fn table1(seed: u64) -> Self {
        SplitPolicy {
            mode: SplitMode::ExactCounts {
                val_ctc: 50,
                val_leuko: 29,
                test_ctc: 52,
                test_leuko: 56,
            },
            seed,
        }
    }

    pub fn fractions(val_fraction: f64, leuko_test_fraction: f64, seed: u64) -> Self {
        SplitPolicy {
            mode: SplitMode::Fractions {
                val_fraction,
                leuko_test_fraction,
                rounding: Rounding::Floor,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let SplitMode::Fractions {
            val_fraction,
            leuko_test_fraction,
            ..
        } = self.mode
        {
            for (name, f) in [
                ("val_fraction", val_fraction),
                ("leuko_test_fraction", leuko_test_fraction),
            ] {
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::InvalidPolicy(format!(
                        "{name} must lie in (0, 1), got {f}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub policy: SplitPolicy,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn empty(policy: SplitPolicy) -> Self {
        DatasetSplit {
            seed: policy.seed,
            policy,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Check disjointness, membership and the provenance exclusions.
    pub fn check(&self, manifest: &Manifest) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidPolicy(format!(
                    "cell `{id}` appears in more than one split"
                )));
            }
        }
        for (part, ids) in [("train", &self.train), ("val", &self.val)] {
            for id in ids {
                let r = manifest
                    .get(id)
                    .ok_or_else(|| Error::UnknownCellId(id.clone()))?;
                if r.label == Label::Ctc && r.provenance == Provenance::Patient {
                    return Err(Error::InvalidPolicy(format!(
                        "patient CTC `{id}` placed in {part}"
                    )));
                }
            }
        }
        for id in &self.test {
            let r = manifest
                .get(id)
                .ok_or_else(|| Error::UnknownCellId(id.clone()))?;
            if r.provenance == Provenance::Spiked {
                return Err(Error::InvalidPolicy(format!(
                    "spiked-in cell `{id}` placed in test"
                )));
            }
        }
        Ok(())
    }
}

/// Draw `k` elements uniformly from `pool` (manifest order in, manifest
/// order out) and return (chosen, rest).
fn draw(pool: &[usize], k: usize, seed: u64, stream: u64) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(&mut rng::rng_for(seed, &[stream]));
    let chosen: HashSet<usize> = shuffled[..k].iter().copied().collect();
    pool.iter().partition(|i| chosen.contains(i))
}

const STREAM_TEST_CTC: u64 = 1;
const STREAM_TEST_LEUKO: u64 = 2;
const STREAM_VAL_CTC: u64 = 3;
const STREAM_VAL_LEUKO: u64 = 4;

/// Partition a manifest into train/val/test.
///
/// Patient-derived CTCs are eligible for test only; spiked-in cells for
/// train/val only. Leukocyte test records are drawn uniformly from the full
/// leukocyte pool.
pub fn make_split(manifest: &Manifest, policy: &SplitPolicy) -> Result<DatasetSplit> {
    policy.validate()?;
    let idx = |pred: &dyn Fn(&super::CellRecord) -> bool| -> Vec<usize> {
        manifest
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| pred(r))
            .map(|(i, _)| i)
            .collect()
    };
    let spiked = idx(&|r| r.label == Label::Ctc && r.provenance == Provenance::Spiked);
    let patient_ctc = idx(&|r| r.label == Label::Ctc && r.provenance == Provenance::Patient);
    let leuko = idx(&|r| r.label == Label::Leuko);

    if patient_ctc.is_empty() {
        return Err(Error::InsufficientPool(
            "empty CTC test pool (no PATIENT-provenance CTC records)".into(),
        ));
    }
    if spiked.is_empty() {
        return Err(Error::InsufficientPool(
            "no SPIKED-provenance CTC records for training".into(),
        ));
    }
    if leuko.is_empty() {
        return Err(Error::InsufficientPool("no LEUKO records".into()));
    }

    let seed = policy.seed;
    let (test_ctc_n, test_leuko_n) = match policy.mode {
        SplitMode::ExactCounts {
            test_ctc,
            test_leuko,
            ..
        } => (test_ctc, test_leuko),
        SplitMode::Fractions {
            leuko_test_fraction,
            rounding,
            ..
        } => (
            patient_ctc.len(),
            rounding.apply(leuko_test_fraction * leuko.len() as f64),
        ),
    };
    if test_ctc_n > patient_ctc.len() {
        return Err(Error::InsufficientPool(format!(
            "{test_ctc_n} test CTCs requested but only {} PATIENT CTCs available",
            patient_ctc.len()
        )));
    }
    if test_leuko_n > leuko.len() {
        return Err(Error::InsufficientPool(format!(
            "{test_leuko_n} test LEUKO requested but only {} available",
            leuko.len()
        )));
    }
    let (test_ctc, _) = draw(&patient_ctc, test_ctc_n, seed, STREAM_TEST_CTC);
    let (test_leuko, leuko_rest) = draw(&leuko, test_leuko_n, seed, STREAM_TEST_LEUKO);

    let (val_ctc_n, val_leuko_n) = match policy.mode {
        SplitMode::ExactCounts {
            val_ctc, val_leuko, ..
        } => (val_ctc, val_leuko),
        SplitMode::Fractions {
            val_fraction,
            rounding,
            ..
        } => (
            rounding.apply(val_fraction * spiked.len() as f64),
            rounding.apply(val_fraction * leuko_rest.len() as f64),
        ),
    };
    if val_ctc_n > spiked.len() {
        return Err(Error::InsufficientPool(format!(
            "{val_ctc_n} validation CTCs requested but only {} SPIKED CTCs available",
            spiked.len()
        )));
    }
    if val_leuko_n > leuko_rest.len() {
        return Err(Error::InsufficientPool(format!(
            "{val_leuko_n} validation LEUKO requested but only {} remain after test selection",
            leuko_rest.len()
        )));
    }
    let (val_ctc, train_ctc) = draw(&spiked, val_ctc_n, seed, STREAM_VAL_CTC);
    let (val_leuko, train_leuko) = draw(&leuko_rest, val_leuko_n, seed, STREAM_VAL_LEUKO);

    let ids = |a: Vec<usize>, b: Vec<usize>| -> Vec<String> {
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort_unstable();
        all.into_iter()
            .map(|i| manifest.records[i].cell_id.clone())
            .collect()
    };
    Ok(DatasetSplit {
        seed,
        policy: policy.clone(),
        train: ids(train_ctc, train_leuko),
        val: ids(val_ctc, val_leuko),
        test: ids(test_ctc, test_leuko),
    })
}

/// Per-class counts of each split part, `[CTC, LEUKO]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: [usize; 2],
    pub val: [usize; 2],
    pub test: [usize; 2],
}

impl SplitCounts {
    pub fn total(&self) -> [usize; 2] {
        [
            self.train[0] + self.val[0] + self.test[0],
            self.train[1] + self.val[1] + self.test[1],
        ]
    }

    fn rows(&self, augmented_multiplier: Option<usize>) -> Vec<(&'static str, [usize; 2])> {
        let mut rows = vec![("Train", self.train)];
        if let Some(m) = augmented_multiplier {
            rows.push(("Augmented Train", [self.train[0] * m, self.train[1] * m]));
        }
        rows.push(("Validation", self.val));
        rows.push(("Test", self.test));
        rows.push(("TOTAL", self.total()));
        rows
    }

    /// Plain-text count table. With a multiplier, an "Augmented Train" row
    /// is included.
    pub fn to_text(&self, augmented_multiplier: Option<usize>) -> String {
        let mut out = format!("{:<16}{:>8}{:>8}\n", "", "CTC", "LEUKO");
        for (name, [c, l]) in self.rows(augmented_multiplier) {
            let _ = writeln!(out, "{name:<16}{c:>8}{l:>8}");
        }
        out
    }

    pub fn to_markdown(&self, augmented_multiplier: Option<usize>) -> String {
        let mut out = String::from("| | CTC | LEUKO |\n|---|---:|---:|\n");
        for (name, [c, l]) in self.rows(augmented_multiplier) {
            let _ = writeln!(out, "| {name} | {c} | {l} |");
        }
        out
    }
}

pub fn split_report(split: &DatasetSplit, manifest: &Manifest) -> Result<SplitCounts> {
    let count = |ids: &[String]| -> Result<[usize; 2]> {
        let mut c = [0usize; 2];
        for id in ids {
            let r = manifest
                .get(id)
                .ok_or_else(|| Error::UnknownCellId(id.clone()))?;
            match r.label {
                Label::Ctc => c[0] += 1,
                Label::Leuko => c[1] += 1,
            }
        }
        Ok(c)
    };
    Ok(SplitCounts {
        train: count(&split.train)?,
        val: count(&split.val)?,
        test: count(&split.test)?,
    })
}
