//! Gradients of the Tucker factors, RMSprop, and the toy trainer.

mod fd;
mod optim;
mod project;
mod toy;

pub use fd::{finite_difference_check, ConstantLoss, FdOptions, FdReport, LinearLoss, QuadraticLoss, WeightLoss};
pub use optim::{rmsprop_step, OptimizerState, RmsProp};
pub use project::{project_gradients, TuckerGradients};
pub use toy::{
    init_toy, kaiming_weights, train_toy, train_toy_observed, AuxParams, LossAndGrad, NetWeights, NetworkLoss,
    ToyNetwork, ToyTask, ToyTaskConfig, TrainOutcome,
};
