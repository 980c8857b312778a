use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mode, NodeId, Sgd, SgdConfig, Tensor};
use crate::data::{AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::learn::common::{batch, epoch_order, LossRecord};
use crate::nn::{build_backbone, BackbonePreset, Model};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    /// Views per step; each step draws `batch_size / 2` samples.
    pub batch_size: usize,
    pub epochs: usize,
    pub sgd: SgdConfig,
    pub augment: AugmentPolicy,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            temperature: 0.5,
            batch_size: 64,
            epochs: 30,
            sgd: SgdConfig::default(),
            augment: AugmentPolicy::default(),
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "contrastive batch_size must be even and >= 2, got {}",
                self.batch_size
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        self.sgd.validate()?;
        self.augment.validate()
    }
}

fn check_pairing(pairing: &[usize]) -> Result<()> {
    let m = pairing.len();
    if m < 2 || !m.is_multiple_of(2) {
        return Err(Error::Usage(format!(
            "NT-Xent needs an even number of views >= 2, got {m}"
        )));
    }
    for (i, &j) in pairing.iter().enumerate() {
        if j >= m || j == i || pairing[j] != i {
            return Err(Error::Usage(format!("view {i} has no unique positive partner")));
        }
    }
    Ok(())
}

/// `[i -> i + m/2, i + m/2 -> i]`: the first half of the views paired with
/// the second half.
pub fn halves_pairing(m: usize) -> Vec<usize> {
    let h = m / 2;
    (0..m).map(|i| if i < h { i + h } else { i - h }).collect()
}

/// NT-Xent over unit rows `z: [m, d]`: mean over views `i` of
/// `-log(exp(s_ij / t) / sum_{k != i} exp(s_ik / t))` with cosine `s`.
pub fn nt_xent_loss<T: Scalar>(g: &mut Graph<T>, z: NodeId, pairing: &[usize], temperature: f64) -> Result<NodeId> {
    check_pairing(pairing)?;
    if g.shape(z).first() != Some(&pairing.len()) {
        return Err(Error::Usage(format!(
            "pairing covers {} views but embeddings have shape {:?}",
            pairing.len(),
            g.shape(z)
        )));
    }
    let sim = g.matmul_nt(z, z)?;
    let logits = g.scale(sim, T::from_f64_lossy(1.0 / temperature));
    g.cross_entropy_offdiag(logits, pairing)
}

/// Value-level [`nt_xent_loss`].
pub fn nt_xent_value<T: Scalar>(z: &Tensor<T>, pairing: &[usize], temperature: f64) -> Result<T> {
    let mut g = Graph::new();
    let zi = g.input(z.clone());
    let loss = nt_xent_loss(&mut g, zi, pairing, temperature)?;
    Ok(g.value(loss).data()[0])
}

/// Trains a backbone plus projection head on two augmented views per sample.
pub fn pretrain_contrastive<T: Scalar>(
    preset: &BackbonePreset,
    unlabeled: &Dataset,
    cfg: &ContrastiveConfig,
    seed: u64,
) -> Result<(Model<T>, Vec<LossRecord>)> {
    cfg.validate()?;
    let half = cfg.batch_size / 2;
    if unlabeled.len() < half {
        return Err(Error::Usage(format!(
            "contrastive pretraining needs at least {half} samples, got {}",
            unlabeled.len()
        )));
    }
    let mut model = build_backbone::<T>(preset, seed)?;
    let mut opt = Sgd::new(cfg.sgd)?;
    let pairing = halves_pairing(cfg.batch_size);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(unlabeled.len(), seed, "contrastive", epoch);
        let mut total = 0.0;
        let mut steps = 0;
        // Drop the ragged tail so every step sees exactly `batch_size` views.
        for chunk in order.chunks_exact(half) {
            let a = batch::<T>(unlabeled, chunk, Some(&cfg.augment), seed, epoch, 0)?;
            let b = batch::<T>(unlabeled, chunk, Some(&cfg.augment), seed, epoch, 1)?;
            let mut shape = a.shape().to_vec();
            shape[0] *= 2;
            let mut data = a.into_data();
            data.extend(b.into_data());
            let views = Tensor::new(shape, data)?;
            let mut g = Graph::new();
            let nodes = model.bind(&mut g);
            let x = g.input(views);
            let z = model.projection_node(&mut g, &nodes, x, Mode::Train)?;
            let loss = nt_xent_loss(&mut g, z, &pairing, cfg.temperature)?;
            total += g.value(loss).data()[0].as_f64();
            steps += 1;
            g.backward(loss, model.params_mut())?;
            opt.step(model.params_mut())?;
            model.commit_batch_stats(g.batch_stats());
        }
        let mean = total / steps as f64;
        model.meta.epoch += 1;
        model.meta.losses.push(mean);
        history.push(LossRecord {
            epoch,
            loss: mean,
            alpha: 0.0,
        });
    }
    Ok((model, history))
}
