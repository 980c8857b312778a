//! Labeled/unlabeled curation of the seven training sets.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{ClassCounts, Dataset, LabelSource, Tripwire};
use crate::error::{Error, Result};
use crate::rng_stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "SL")]
    Supervised,
    #[serde(rename = "Semi-SL")]
    SemiSupervised,
    #[serde(rename = "Self-SL")]
    SelfSupervised,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::Supervised => "SL",
            Setting::SemiSupervised => "Semi-SL",
            Setting::SelfSupervised => "Self-SL",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One of TS1..TS7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrainingSetSpec {
    index: u8,
}

impl TrainingSetSpec {
    /// Labeled percentage per set, TS1 first.
    const LABELED_PERCENT: [u32; 7] = [100, 50, 40, 30, 20, 10, 0];

    pub fn all() -> Vec<TrainingSetSpec> {
        (1..=7).map(|index| TrainingSetSpec { index }).collect()
    }

    pub fn ts(index: u8) -> Result<Self> {
        if (1..=7).contains(&index) {
            Ok(TrainingSetSpec { index })
        } else {
            Err(Error::Config(format!("no training set TS{index}")))
        }
    }

    pub fn index(self) -> u8 {
        self.index
    }

    pub fn name(self) -> String {
        format!("TS{}", self.index)
    }

    pub fn labeled_percent(self) -> u32 {
        Self::LABELED_PERCENT[self.index as usize - 1]
    }

    pub fn labeled_fraction(self) -> f64 {
        self.labeled_percent() as f64 / 100.0
    }

    pub fn setting(self) -> Setting {
        match self.index {
            1 => Setting::Supervised,
            7 => Setting::SelfSupervised,
            _ => Setting::SemiSupervised,
        }
    }

    /// `round((1 - f) * n)` with halves rounded away from zero, in integers.
    pub fn unlabeled_count(self, n: usize) -> usize {
        let pct = 100 - self.labeled_percent() as usize;
        (pct * n + 50) / 100
    }
}

impl fmt::Display for TrainingSetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TS{}", self.index)
    }
}

impl FromStr for TrainingSetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .strip_prefix("TS")
            .and_then(|d| d.parse::<u8>().ok())
            .ok_or_else(|| Error::Config(format!("unknown training set `{s}`")))
            .and_then(TrainingSetSpec::ts)
    }
}

#[derive(Serialize, Deserialize)]
struct SpecRepr {
    name: String,
    labeled_fraction: f64,
    setting: Setting,
}

impl Serialize for TrainingSetSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SpecRepr {
            name: self.name(),
            labeled_fraction: self.labeled_fraction(),
            setting: self.setting(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TrainingSetSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = SpecRepr::deserialize(d)?;
        let spec: TrainingSetSpec = repr.name.parse().map_err(serde::de::Error::custom)?;
        if spec.labeled_fraction() != repr.labeled_fraction || spec.setting() != repr.setting {
            return Err(serde::de::Error::custom(format!(
                "{} is {} labeled ({}), not {} ({})",
                spec.name(),
                spec.labeled_fraction(),
                spec.setting(),
                repr.labeled_fraction,
                repr.setting
            )));
        }
        Ok(spec)
    }
}

/// Per-class bookkeeping for one curated training set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationLedger {
    pub training_set: String,
    pub train_total: usize,
    pub labeled: ClassCounts,
    pub unlabeled_before: ClassCounts,
    /// Assigned labels of the unlabeled part after prediction.
    pub predicted_after: Option<ClassCounts>,
}

impl CurationLedger {
    /// Predicted totals equal the unlabeled totals, and labeled plus
    /// unlabeled equals the train split.
    pub fn audit(&self) -> bool {
        let split_ok = self.labeled.total() + self.unlabeled_before.total() == self.train_total;
        let after_ok = self
            .predicted_after
            .is_none_or(|a| a.total() == self.unlabeled_before.total());
        split_ok && after_ok
    }
}

/// Result of curating one training set.
#[derive(Debug, Clone)]
pub struct Curated {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    pub ledger: CurationLedger,
    /// Counts reads of hidden truth on `unlabeled`.
    pub tripwire: Tripwire,
}

/// Strips labels from a uniformly random subset of `train`.
pub fn curate_training_set(train: &Dataset, spec: TrainingSetSpec, seed: u64) -> Result<Curated> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let u = spec.unlabeled_count(train.len());
    let mut rng = rng_stream!(seed, "curate", spec.name().as_str());
    let mut hidden = vec![false; train.len()];
    for i in index::sample(&mut rng, train.len(), u) {
        hidden[i] = true;
    }
    let tripwire = Tripwire::new();
    let mut labeled = Vec::with_capacity(train.len() - u);
    let mut unlabeled = Vec::with_capacity(u);
    for (s, &h) in train.iter().zip(&hidden) {
        if h {
            unlabeled.push(s.strip_label(&tripwire));
        } else {
            labeled.push(s.clone());
        }
    }
    let labeled = Dataset::new(labeled);
    let unlabeled = Dataset::new(unlabeled);
    let ledger = CurationLedger {
        training_set: spec.name(),
        train_total: train.len(),
        labeled: labeled.assigned_counts(),
        unlabeled_before: unlabeled.audit_true_counts(),
        predicted_after: None,
    };
    Ok(Curated {
        labeled,
        unlabeled,
        ledger,
        tripwire,
    })
}

/// Concatenates labeled and relabeled samples, recording after-counts.
pub fn merge_pseudo(labeled: &Dataset, relabeled: &Dataset, ledger: &mut CurationLedger) -> Result<Dataset> {
    let mut after = ClassCounts::default();
    for s in relabeled {
        match (s.assigned_label(), s.label_source()) {
            (Some(l), LabelSource::Pseudo | LabelSource::Cluster) => after.add(l),
            _ => {
                return Err(Error::Usage(format!(
                    "sample `{}` has no predicted label to merge",
                    s.id()
                )))
            }
        }
    }
    ledger.predicted_after = Some(after);
    Ok(labeled.iter().chain(relabeled.iter()).cloned().collect())
}
