use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    arch::Architecture,
    batch::Batch,
    forward::{accuracy, evaluate, Modulation},
    mask::{sample_batch_mask, MaskScope},
    optim::OptimizerState,
    params::ParamVector,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MaskPolicy {
    #[default]
    FreshPerStep,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: usize,
    pub mask_policy: MaskPolicy,
    pub mask_scope: MaskScope,
    pub seed: u64,
}

/// Loss and accuracy of the (masked) network at the start of a step; `step`
/// counts completed updates, starting at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookAction {
    Continue,
    Stop,
}

/// Full-batch training state. Masks come from a single ChaCha stream seeded
/// once, so a run is a pure function of its inputs and seed.
pub struct Trainer<'a> {
    arch: Architecture,
    batch: &'a Batch,
    params: ParamVector,
    optimizer: OptimizerState,
    policy: MaskPolicy,
    scope: MaskScope,
    rng: ChaCha8Rng,
    seed: u64,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        arch: Architecture,
        params: ParamVector,
        batch: &'a Batch,
        optimizer: OptimizerState,
        policy: MaskPolicy,
        scope: MaskScope,
        seed: u64,
    ) -> Result<Self> {
        if !params.matches(&arch) {
            return Err(Error::dim("parameter vector", arch.num_params(), params.len()));
        }
        if batch.input_dim() != arch.input_dim() {
            return Err(Error::dim("batch input width", arch.input_dim(), batch.input_dim()));
        }
        Ok(Self {
            arch,
            batch,
            params,
            optimizer,
            policy,
            scope,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            step: 0,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn batch(&self) -> &Batch {
        self.batch
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn policy(&self) -> MaskPolicy {
        self.policy
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    /// One optimizer update on the full batch with a fresh mask (if enabled).
    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.step + 1;
        let mask = match self.policy {
            MaskPolicy::FreshPerStep if !self.arch.dropout().is_empty() => Some(
                sample_batch_mask(&self.arch, self.scope, self.batch.len(), &mut self.rng),
            ),
            _ => None,
        };
        let modulation = mask.as_ref().map_or(Modulation::Plain, Modulation::Mask);
        let eval = evaluate(
            &self.arch,
            self.params.values(),
            0,
            self.batch.inputs(),
            self.batch.labels(),
            modulation,
            Some(0),
        )
        .map_err(|e| match e {
            Error::Numeric(_) => Error::Divergence {
                step,
                loss: f64::NAN,
            },
            other => other,
        })?;
        let grad = eval.grad.expect("requested");
        self.optimizer.apply(self.params.values_mut(), &grad)?;
        if self.params.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step,
                loss: eval.loss,
            });
        }
        self.step = step;
        Ok(StepRecord {
            step,
            loss: eval.loss,
            accuracy: accuracy(eval.logits.view(), self.batch.labels()),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamVector,
    pub curve: Vec<StepRecord>,
}

/// Runs up to `options.steps` updates, calling `hook` with each record and
/// the post-update parameters. The hook may stop training early.
pub fn train<F>(
    arch: &Architecture,
    params: ParamVector,
    batch: &Batch,
    optimizer: OptimizerState,
    options: TrainOptions,
    mut hook: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&StepRecord, &ParamVector) -> HookAction,
{
    if options.steps == 0 {
        return Err(Error::Config("training needs at least one step".into()));
    }
    let mut trainer = Trainer::new(
        arch.clone(),
        params,
        batch,
        optimizer,
        options.mask_policy,
        options.mask_scope,
        options.seed,
    )?;
    let mut curve = Vec::with_capacity(options.steps);
    for _ in 0..options.steps {
        let record = trainer.step()?;
        curve.push(record);
        if hook(&record, trainer.params()) == HookAction::Stop {
            break;
        }
    }
    Ok(TrainOutcome {
        params: trainer.into_params(),
        curve,
    })
}
