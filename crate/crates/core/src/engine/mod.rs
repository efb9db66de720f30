//! Pretraining, the adaptation loop and ablation grids.

pub mod ablation;
pub mod adapt;
pub mod config;
pub mod manifest;
pub mod pretrain;

pub use ablation::{ablation_matrix, format_ablation, mean_std, AblationRow, Variant};
pub use adapt::{adapt, AdaptOptions, AdaptOutcome, ParamProbe};
pub use config::{Ablation, AblationFlag, AdaptConfig};
pub use manifest::{parse_loss_log, write_atomic, LossRow, RunManifest, RunStatus, LOSS_LOG_HEADER};
pub use pretrain::{
    format_ranking, member_seeds, pretrain, rank_checkpoints, select_top, supervised_grads,
    PretrainConfig,
};
