use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::data::{augment, AugmentPolicy, Class, Dataset, Image};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::rng::Rng;
use crate::rng_stream;
use crate::scalar::Scalar;

/// Samples per inference batch.
pub(crate) const EVAL_BATCH: usize = 64;

/// One row of a loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub loss: f64,
    pub alpha: f64,
}

pub fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Images of `ds[indices]`, augmented with streams keyed by
/// `(seed, sample id, epoch, view)` when a policy is given.
pub(crate) fn batch<T: Scalar>(
    ds: &Dataset,
    indices: &[usize],
    policy: Option<&AugmentPolicy>,
    seed: u64,
    epoch: usize,
    view: usize,
) -> Result<Tensor<T>> {
    let Some(policy) = policy else {
        return ds.batch(indices);
    };
    let samples = ds.samples();
    let augmented: Vec<Image> = indices
        .iter()
        .map(|&i| {
            let s = &samples[i];
            let mut rng = rng_stream!(seed, "augment", s.id(), epoch, view);
            augment(s, policy, &mut rng).map(|a| a.pixels().clone())
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&Image> = augmented.iter().collect();
    Dataset::stack_images(&refs)
}

/// A fresh permutation of `0..n` for `epoch`.
pub(crate) fn epoch_order(n: usize, seed: u64, scope: &str, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng: Rng = rng_stream!(seed, "order", scope, epoch);
    order.shuffle(&mut rng);
    order
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Class probabilities for every sample, in evaluation mode.
pub fn predict_proba<T: Scalar>(model: &Model<T>, ds: &Dataset) -> Result<Vec<[f64; 2]>> {
    let mut out = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let p = model.forward_classify(&ds.batch::<T>(chunk)?)?;
        out.extend(p.data().chunks(2).map(|r| [r[0].as_f64(), r[1].as_f64()]));
    }
    Ok(out)
}

/// Argmax class for every sample.
pub fn predict<T: Scalar>(model: &Model<T>, ds: &Dataset) -> Result<Vec<Class>> {
    Ok(predict_proba(model, ds)?
        .iter()
        .map(|p| Class::from_index(argmax(p)).expect("two classes"))
        .collect())
}

pub(crate) fn require_nonempty(ds: &Dataset, what: &str) -> Result<()> {
    if ds.is_empty() {
        Err(Error::Usage(format!("{what} is empty")))
    } else {
        Ok(())
    }
}
