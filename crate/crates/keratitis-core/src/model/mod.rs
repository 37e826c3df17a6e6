//! Reference trainable multitask model: architecture, losses, optimizer,
//! training loop, prediction and saliency.

mod adam;
mod loss;
mod net;
mod saliency;
mod train;

pub use adam::{adam_step, AdamState};
pub use loss::{
    age_class_weights, class_weights, clinical_loss, cross_entropy, hospital_weights,
    weighted_bce, LossSpec, DEFAULT_PRICES, PROB_EPS,
};
pub use net::{
    Batch, DropoutMask, ForwardPass, Inputs, LossKind, Model, ModelConfig, NormState, ParamEntry,
    ParamLayout, RunMode, Targets, TrainLoss, TrunkKind, Variant, BN_EPS, BN_MOMENTUM,
};
pub use saliency::{saliency_map, SaliencyMap};
pub use train::{
    predict, train, EpochRecord, FittedModel, InfectionPredictor, TrainConfig, TrainOutcome,
};
