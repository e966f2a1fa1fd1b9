//! Fully-connected network with dropout masks, cross-entropy loss, analytic
//! gradients and GD/Adam training.

mod arch;
mod batch;
mod checkpoint;
mod forward;
mod mask;
mod optim;
mod params;
mod rop;
mod train;

pub use arch::{Activation, Architecture, DropoutLayer};
pub use batch::Batch;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use forward::{
    accuracy, cross_entropy, evaluate_batch, forward, forward_with, gradient, hidden_output, loss,
    loss_and_gradient, InferenceMode, Modulation,
};
pub(crate) use forward::evaluate;
pub(crate) use rop::hessian_vector;
pub use mask::{
    sample_batch_mask, sample_mask, sample_mask_rows, stream_rng, DropoutMask, LayerMask,
    MaskScope,
};
pub use optim::{OptimizerKind, OptimizerState};
pub use params::{Init, ParamLayout, ParamSlice, ParamVector, SliceSelector, TensorInfo, TensorKind};
pub use train::{train, HookAction, MaskPolicy, StepRecord, TrainOptions, TrainOutcome, Trainer};
