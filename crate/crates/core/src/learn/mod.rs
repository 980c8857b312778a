//! The three learning settings: supervised training, pseudo-label
//! semi-supervised training and contrastive pretraining with cluster labels.

mod cluster;
mod common;
mod contrastive;
mod pseudo;
mod supervised;

pub use cluster::{cluster_label, embed_all, kmeans, nearest, ClusterLabeler, ClusterOutcome};
pub use common::{argmax, predict, predict_proba, write_loss_csv, LossRecord};
pub use contrastive::{halves_pairing, nt_xent_loss, nt_xent_value, pretrain_contrastive, ContrastiveConfig};
pub use pseudo::{
    alpha_schedule, joint_loss, joint_loss_value, pseudo_label, train_semi_supervised, PseudoLabelConfig, Refresh,
    SemiOutcome,
};
pub use supervised::{train_supervised, TrainConfig};
