use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mode, Sgd, SgdConfig};
use crate::data::{AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::learn::common::{batch, epoch_order, require_nonempty, LossRecord};
use crate::nn::Model;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    /// Per-sample augmentation; `null` trains on raw pixels.
    pub augment: Option<AugmentPolicy>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            sgd: SgdConfig::default(),
            augment: Some(AugmentPolicy::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.sgd.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// Minibatch SGD on cross-entropy against the assigned labels.
///
/// Returns the mean loss of every epoch.
pub fn train_supervised<T: Scalar>(
    model: &mut Model<T>,
    labeled: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    require_nonempty(labeled, "labeled training set")?;
    let targets = labeled.assigned_targets()?;
    let mut opt = Sgd::new(cfg.sgd)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(labeled.len(), seed, "supervised", epoch);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = batch::<T>(labeled, chunk, cfg.augment.as_ref(), seed, epoch, 0)?;
            let y: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let mut g = Graph::new();
            let nodes = model.bind(&mut g);
            let xi = g.input(x);
            let logits = model.logits_node(&mut g, &nodes, xi, Mode::Train)?;
            let loss = g.cross_entropy(logits, &y)?;
            total += g.value(loss).data()[0].as_f64() * chunk.len() as f64;
            g.backward(loss, model.params_mut())?;
            opt.step(model.params_mut())?;
            model.commit_batch_stats(g.batch_stats());
        }
        let mean = total / labeled.len() as f64;
        model.meta.epoch += 1;
        model.meta.losses.push(mean);
        history.push(LossRecord {
            epoch,
            loss: mean,
            alpha: 0.0,
        });
    }
    Ok(history)
}
