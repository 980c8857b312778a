use rand::seq::SliceRandom;

use crate::data::{Class, Dataset};
use crate::error::{Error, Result};
use crate::rng_stream;

pub const TRAIN_FRACTION: f64 = 0.8;

/// Class-stratified split; `|train| = floor(train_fraction * N)`.
///
/// Each class contributes `floor(f * n_c)` samples, and the shortfall is
/// handed to the classes with the largest fractional remainders. Both halves
/// keep the input order.
pub fn split_train_eval(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); Class::ALL.len()];
    for (i, s) in ds.iter().enumerate() {
        let label = s
            .true_label()
            .ok_or_else(|| Error::Usage(format!("sample `{}` has no ground truth to stratify on", s.id())))?;
        by_class[label.index()].push(i);
    }
    for (class, idx) in Class::ALL.iter().zip(&by_class) {
        if idx.len() < 2 {
            return Err(Error::Stratification(format!(
                "class {class} has {} sample(s), need at least 2",
                idx.len()
            )));
        }
    }

    let total = (train_fraction * ds.len() as f64).floor() as usize;
    let exact: Vec<f64> = by_class.iter().map(|v| train_fraction * v.len() as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..quota.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut short = total.saturating_sub(quota.iter().sum());
    for &c in order.iter().cycle() {
        if short == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            short -= 1;
        }
    }

    let mut in_train = vec![false; ds.len()];
    for (c, idx) in by_class.iter_mut().enumerate() {
        let mut rng = rng_stream!(seed, "split", Class::ALL[c].token());
        idx.shuffle(&mut rng);
        for &i in &idx[..quota[c]] {
            in_train[i] = true;
        }
    }
    let (train, eval): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| in_train[i]);
    Ok((ds.subset(&train), ds.subset(&eval)))
}
