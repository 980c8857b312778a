use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mode, NodeId, Sgd, SgdConfig, Tensor};
use crate::data::{AugmentPolicy, Class, Dataset, LabelSource};
use crate::error::{Error, Result};
use crate::learn::common::{argmax, batch, epoch_order, predict_proba, require_nonempty, LossRecord};
use crate::nn::{build_backbone, BackbonePreset, Model};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Refresh {
    /// Recompute pseudo-labels from the current model every joint epoch.
    PerEpoch,
    /// Compute them once when the ramp starts and keep them.
    Once,
}

impl std::str::FromStr for Refresh {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-epoch" => Ok(Refresh::PerEpoch),
            "once" => Ok(Refresh::Once),
            other => Err(Error::Config(format!("unknown refresh mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoLabelConfig {
    pub alpha_f: f64,
    pub t1: usize,
    pub t2: usize,
    pub labeled_batch_size: usize,
    pub unlabeled_batch_size: usize,
    /// Total epochs, warm-up included. One epoch is one pass over the
    /// larger of the labeled and unlabeled pools.
    pub epochs: usize,
    pub refresh: Refresh,
    pub sgd: SgdConfig,
    pub augment: Option<AugmentPolicy>,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        PseudoLabelConfig {
            alpha_f: 3.0,
            t1: 10,
            t2: 40,
            labeled_batch_size: 32,
            unlabeled_batch_size: 32,
            epochs: 30,
            refresh: Refresh::PerEpoch,
            sgd: SgdConfig::default(),
            augment: Some(AugmentPolicy::default()),
        }
    }
}

impl PseudoLabelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t1 >= self.t2 || self.labeled_batch_size == 0 || !(self.alpha_f > 0.0 && self.alpha_f.is_finite()) {
            return Err(Error::Config(format!(
                "pseudo-label config needs t1 < t2, k >= 1 and alpha_f > 0 (t1={}, t2={}, k={}, alpha_f={})",
                self.t1, self.t2, self.labeled_batch_size, self.alpha_f
            )));
        }
        self.sgd.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// Weight of the unlabeled term at epoch `t`: zero before `t1`, linear up
/// to `alpha_f` at `t2`, constant after.
pub fn alpha_schedule(t: usize, cfg: &PseudoLabelConfig) -> f64 {
    if t < cfg.t1 {
        0.0
    } else if t < cfg.t2 {
        cfg.alpha_f * (t - cfg.t1) as f64 / (cfg.t2 - cfg.t1) as f64
    } else {
        cfg.alpha_f
    }
}

/// `CE(labeled) + alpha * CE(unlabeled vs pseudo)` on the tape; both terms
/// are batch means. With `alpha == 0` or no unlabeled rows the result is the
/// labeled node itself.
pub fn joint_loss<T: Scalar>(
    g: &mut Graph<T>,
    labeled_logits: NodeId,
    targets: &[usize],
    unlabeled: Option<(NodeId, &[usize])>,
    alpha: f64,
) -> Result<NodeId> {
    let sup = g.cross_entropy(labeled_logits, targets)?;
    match unlabeled {
        Some((logits, pseudo)) if alpha != 0.0 && !pseudo.is_empty() => {
            let unsup = g.cross_entropy(logits, pseudo)?;
            let weighted = g.scale(unsup, T::from_f64_lossy(alpha));
            g.add(sup, weighted)
        }
        _ => Ok(sup),
    }
}

/// Value-level [`joint_loss`] on precomputed logits.
pub fn joint_loss_value<T: Scalar>(
    labeled_logits: &Tensor<T>,
    targets: &[usize],
    unlabeled: Option<(&Tensor<T>, &[usize])>,
    alpha: f64,
) -> Result<T> {
    let mut g = Graph::new();
    let l = g.input(labeled_logits.clone());
    let u = unlabeled.map(|(t, p)| (g.input(t.clone()), p));
    let loss = joint_loss(&mut g, l, targets, u, alpha)?;
    Ok(g.value(loss).data()[0])
}

/// Assigns every sample its argmax class with source `pseudo`.
pub fn pseudo_label<T: Scalar>(model: &Model<T>, unlabeled: &Dataset) -> Result<Dataset> {
    if unlabeled.is_empty() {
        return Ok(Dataset::default());
    }
    let probs = predict_proba(model, unlabeled)?;
    Ok(unlabeled
        .iter()
        .zip(&probs)
        .map(|(s, p)| s.relabel(Class::from_index(argmax(p)).expect("two classes"), LabelSource::Pseudo))
        .collect())
}

fn pseudo_targets<T: Scalar>(model: &Model<T>, unlabeled: &Dataset) -> Result<Vec<usize>> {
    Ok(predict_proba(model, unlabeled)?.iter().map(|p| argmax(p)).collect())
}

/// Endless sequence of indices in reshuffled passes over `0..n`.
struct Cycle<'a> {
    n: usize,
    seed: u64,
    scope: &'a str,
    order: Vec<usize>,
    pos: usize,
    pass: usize,
}

impl<'a> Cycle<'a> {
    fn new(n: usize, seed: u64, scope: &'a str) -> Self {
        Cycle {
            n,
            seed,
            scope,
            order: Vec::new(),
            pos: 0,
            pass: 0,
        }
    }

    fn take(&mut self, count: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.pos == self.order.len() {
                self.order = epoch_order(self.n, self.seed, self.scope, self.pass);
                self.pass += 1;
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SemiOutcome<T> {
    /// The unlabeled samples with exported hard pseudo-labels.
    pub relabeled: Dataset,
    pub teacher: Model<T>,
    pub history: Vec<LossRecord>,
}

/// Warm-up on the labeled part, then joint training with the alpha ramp,
/// then a final hard labeling of the unlabeled part.
pub fn train_semi_supervised<T: Scalar>(
    preset: &BackbonePreset,
    labeled: &Dataset,
    unlabeled: &Dataset,
    cfg: &PseudoLabelConfig,
    seed: u64,
) -> Result<SemiOutcome<T>> {
    cfg.validate()?;
    require_nonempty(labeled, "labeled training set")?;
    let mut model = build_backbone::<T>(preset, seed)?;
    model.drop_projection_head();
    let targets = labeled.assigned_targets()?;
    let mut opt = Sgd::new(cfg.sgd)?;
    let policy = cfg.augment.as_ref();
    let k = cfg.labeled_batch_size;
    let kp = cfg.unlabeled_batch_size.min(unlabeled.len());
    // An epoch covers the larger pool once; the smaller one is cycled.
    let steps = labeled.len().max(unlabeled.len()).div_ceil(k);
    let mut l_cycle = Cycle::new(labeled.len(), seed, "semi-labeled");
    let mut u_cycle = Cycle::new(unlabeled.len(), seed, "semi-unlabeled");
    let mut pseudo: Option<Vec<usize>> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let alpha = alpha_schedule(epoch, cfg);
        let joint = alpha > 0.0 && kp > 0;
        if joint && (pseudo.is_none() || cfg.refresh == Refresh::PerEpoch) {
            pseudo = Some(pseudo_targets(&model, unlabeled)?);
        }
        let mut total = 0.0;
        for _ in 0..steps {
            let chunk = l_cycle.take(k.min(labeled.len()));
            let x = batch::<T>(labeled, &chunk, policy, seed, epoch, 0)?;
            let y: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let mut g = Graph::new();
            let nodes = model.bind(&mut g);
            let xi = g.input(x);
            let logits = model.logits_node(&mut g, &nodes, xi, Mode::Train)?;
            let loss = if joint {
                let u_idx = u_cycle.take(kp);
                let p = pseudo.as_ref().expect("refreshed above");
                let yu: Vec<usize> = u_idx.iter().map(|&i| p[i]).collect();
                let xu = batch::<T>(unlabeled, &u_idx, policy, seed, epoch, 1)?;
                let xui = g.input(xu);
                let ul = model.logits_node(&mut g, &nodes, xui, Mode::Train)?;
                joint_loss(&mut g, logits, &y, Some((ul, &yu)), alpha)?
            } else {
                joint_loss(&mut g, logits, &y, None, alpha)?
            };
            total += g.value(loss).data()[0].as_f64();
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
            alpha,
        });
    }
    let relabeled = pseudo_label(&model, unlabeled)?;
    Ok(SemiOutcome {
        relabeled,
        teacher: model,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_ramp() {
        let cfg = PseudoLabelConfig {
            t1: 10,
            t2: 20,
            alpha_f: 3.0,
            ..Default::default()
        };
        assert_eq!(alpha_schedule(0, &cfg), 0.0);
        assert_eq!(alpha_schedule(9, &cfg), 0.0);
        assert_eq!(alpha_schedule(10, &cfg), 0.0);
        assert_eq!(alpha_schedule(15, &cfg), 1.5);
        assert_eq!(alpha_schedule(20, &cfg), 3.0);
        assert_eq!(alpha_schedule(99, &cfg), 3.0);
    }

    #[test]
    fn joint_loss_reduces_to_supervised() {
        let l = Tensor::<f32>::new(vec![3, 2], vec![0.3, -1.2, 2.0, 0.1, -0.7, 0.4]).unwrap();
        let u = Tensor::<f32>::new(vec![2, 2], vec![5.0, -5.0, 0.0, 1.0]).unwrap();
        let t = [1, 0, 1];
        let sup = joint_loss_value(&l, &t, None, 0.0).unwrap();
        let a0 = joint_loss_value(&l, &t, Some((&u, &[1, 0])), 0.0).unwrap();
        assert_eq!(sup.to_bits(), a0.to_bits());
        let k0 = joint_loss_value(&l, &t, None, 2.0).unwrap();
        assert_eq!(sup.to_bits(), k0.to_bits());
    }

    #[test]
    fn joint_loss_half_half_is_ln2() {
        let l = Tensor::<f64>::new(vec![1, 2], vec![50.0, -50.0]).unwrap();
        let u = Tensor::<f64>::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let v = joint_loss_value(&l, &[0], Some((&u, &[0])), 1.0).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn refresh_parses() {
        assert_eq!("once".parse::<Refresh>().unwrap(), Refresh::Once);
        assert!("sometimes".parse::<Refresh>().is_err());
        assert_eq!(serde_json::to_string(&Refresh::PerEpoch).unwrap(), "\"per-epoch\"");
    }
}
