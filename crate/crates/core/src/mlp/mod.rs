//! Fully-connected networks with analytic gradients.

mod checkpoint;
mod compute;
mod model;
mod optim;
mod scorer;
mod train;

pub use checkpoint::{load_model, save_model, CHECKPOINT_VERSION};
pub use compute::{DropoutMasks, Gradients, LossKind};
pub use model::{
    init_model, theorem_variance, Activation, Arch, Dense, InitScheme, InitSpec, MlpModel,
    ModelOptions, LEAKY_SLOPE, PRELU_INIT,
};
pub use optim::{Optimizer, OptimizerSpec};
pub use scorer::{
    ensemble_score, interpolate, predict_label, Differentiable, Ensemble, LinearScorer, Scorer,
};
pub use train::{
    train, train_with, Divergence, GroupNorms, LrDecay, Perturb, TrainConfig, TrainHistory,
    DIVERGENCE_LOSS,
};
