//! The pretraining loop: augmented view pairs through the model bundle, the
//! combined loss, Adam updates, checkpoints and a metrics stream.

mod adam;
mod checkpoint;
mod metrics;

pub use adam::{adam_step, AdamParams, AdamState};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, AnyTensor, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use metrics::{parse_metrics, JsonlSink, MetricsRecord, MetricsSink, NullSink};

use std::time::Instant;

use thiserror::Error;

use crate::data::{AugmentationConfig, BatchIter, DataError, ViewBatch, ViewSource};
use crate::loss::{contrastive_loss, superinfo_loss, superinfo_total, LossBreakdown, LossParts, LossWeights};
use crate::model::{ModelBundle, ModelDims};
use crate::tensor::{fnv1a64, DType, Element, Rng, Tape, TensorError};

/// What the optimizer minimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Contrastive term plus the λ-weighted KL and reconstruction terms.
    SuperInfo,
    /// The contrastive term alone; heads and decoder stay out of the graph.
    Contrastive,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::SuperInfo => "superinfo",
            Objective::Contrastive => "contrastive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "superinfo" => Some(Objective::SuperInfo),
            "contrastive" => Some(Objective::Contrastive),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperInfoConfig {
    pub weights: LossWeights,
    pub epochs: u64,
    pub batch_size: usize,
    pub adam: AdamParams,
    pub seed: u64,
    pub dtype: DType,
    pub augmentation: AugmentationConfig,
    /// `input_dim` is filled in from the training data.
    pub model: ModelDims,
    pub objective: Objective,
    /// Update only the encoder and projector.
    pub freeze_heads: bool,
    /// Record real elapsed time in `wall_ms` (otherwise 0, keeping metrics
    /// byte-reproducible).
    pub metrics_wall_clock: bool,
}

impl Default for SuperInfoConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            epochs: 50,
            batch_size: 64,
            adam: AdamParams::default(),
            seed: 0,
            dtype: DType::F32,
            augmentation: AugmentationConfig::default(),
            model: ModelDims::standard(0),
            objective: Objective::SuperInfo,
            freeze_heads: false,
            metrics_wall_clock: false,
        }
    }
}

impl SuperInfoConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.weights.validate()?;
        self.adam.validate()?;
        self.augmentation.validate()?;
        if self.batch_size < 2 {
            return Err(TrainError::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        self.model.encoder()?;
        self.model.projector()?;
        self.model.decoder()?;
        Ok(())
    }

    /// Stable identifier of the run: a hash of the configuration with the
    /// epoch count left out, so that resumed runs share it.
    pub fn run_id(&self) -> String {
        let echo = crate::config::train_echo(&SuperInfoConfig {
            epochs: 0,
            ..self.clone()
        });
        format!("{:016x}", fnv1a64(echo.as_bytes()))
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("non-finite {component} at epoch {epoch}, step {step}")]
    NonFinite {
        component: &'static str,
        epoch: u64,
        step: u64,
    },
    #[error("checkpoint does not match the configuration: {0}")]
    CheckpointMismatch(String),
    #[error("writing metrics: {0}")]
    Metrics(#[from] std::io::Error),
}

/// Everything needed to continue training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub bundle: ModelBundle<T>,
    pub adam: AdamState<T>,
    /// Completed epochs.
    pub epoch: u64,
    /// Drives shuffling and augmentation.
    pub rng: Rng,
}

impl<T: Element> TrainState<T> {
    /// Fresh model from the `init` stream and the `augment` stream at its start.
    pub fn init(cfg: &SuperInfoConfig) -> Result<Self, TrainError> {
        let bundle = ModelBundle::init(&mut Rng::substream(cfg.seed, "init"), cfg.model.clone())?;
        let adam = AdamState::zeros_like(bundle.named_params().into_iter().map(|(_, t)| t));
        Ok(Self {
            bundle,
            adam,
            epoch: 0,
            rng: Rng::substream(cfg.seed, "augment"),
        })
    }

    pub fn to_checkpoint(&self, cfg: &SuperInfoConfig) -> Checkpoint {
        let named = self.bundle.named_params();
        let mut tensors: Vec<(String, AnyTensor)> = named
            .iter()
            .map(|(n, t)| (n.clone(), AnyTensor::wrap(*t)))
            .collect();
        for (prefix, moments) in [("adam.m.", &self.adam.m), ("adam.v.", &self.adam.v)] {
            for ((n, _), m) in named.iter().zip(moments) {
                tensors.push((format!("{prefix}{n}"), AnyTensor::wrap(m)));
            }
        }
        tensors.push((
            "adam.step".into(),
            AnyTensor::F64(crate::tensor::Tensor::scalar(self.adam.step as f64)),
        ));
        Checkpoint {
            tensors,
            epoch: self.epoch,
            rng_state: self.rng.to_bytes(),
            config_echo: crate::config::train_echo(cfg),
        }
    }

    /// Restores a state saved by [`Self::to_checkpoint`] for a run with the
    /// model dimensions and dtype of `cfg`.
    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &SuperInfoConfig) -> Result<Self, TrainError> {
        let mismatch = |m: String| TrainError::CheckpointMismatch(m);
        let fetch = |name: &str| -> Result<crate::tensor::Tensor<T>, TrainError> {
            let t = ckpt
                .get(name)
                .ok_or_else(|| mismatch(format!("missing tensor {name}")))?;
            t.unwrap_as::<T>().ok_or_else(|| {
                mismatch(format!(
                    "tensor {name} is {} but the run uses {}",
                    t.dtype().name(),
                    T::DTYPE.name()
                ))
            })
        };
        let mut missing = None;
        let bundle = ModelBundle::from_named(cfg.model.clone(), |n| match fetch(n) {
            Ok(t) => Some(t),
            Err(e) => {
                missing.get_or_insert(e);
                None
            }
        });
        if let Some(e) = missing {
            return Err(e);
        }
        let bundle = bundle.map_err(|e| mismatch(e.to_string()))?;
        let names: Vec<String> = bundle.named_params().into_iter().map(|(n, _)| n).collect();
        let m = names.iter().map(|n| fetch(&format!("adam.m.{n}"))).collect::<Result<Vec<_>, _>>()?;
        let v = names.iter().map(|n| fetch(&format!("adam.v.{n}"))).collect::<Result<Vec<_>, _>>()?;
        let step = match ckpt.get("adam.step") {
            Some(AnyTensor::F64(t)) if t.len() == 1 => t.data()[0] as u64,
            _ => return Err(mismatch("missing adam.step".into())),
        };
        let rng = Rng::from_bytes(&ckpt.rng_state).ok_or_else(|| mismatch("all-zero rng state".into()))?;
        Ok(Self {
            bundle,
            adam: AdamState { m, v, step },
            epoch: ckpt.epoch,
            rng,
        })
    }
}

/// Losses and gradient norm of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub losses: LossBreakdown,
    pub grad_norm: f64,
}

fn check_finite(component: &'static str, v: f64, epoch: u64, step: u64) -> Result<(), TrainError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(TrainError::NonFinite {
            component,
            epoch,
            step,
        })
    }
}

/// Forward, backward and Adam update on one batch. On a non-finite loss or
/// gradient, returns the offending component alongside the losses seen so far.
#[allow(clippy::result_large_err)]
pub fn train_step<T: Element>(
    state: &mut TrainState<T>,
    cfg: &SuperInfoConfig,
    batch: &ViewBatch,
) -> Result<StepOutcome, (TrainError, Option<StepOutcome>)> {
    let epoch = state.epoch + 1;
    let step = state.adam.step + 1;
    let plain = |e: TensorError| (TrainError::from(e), None);

    let mut tape = Tape::<T>::new();
    let bound = state.bundle.bind(&mut tape, true);
    let x1 = tape.constant(batch.x1.cast());
    let x2 = tape.constant(batch.x2.cast());
    let (total, parts) = match cfg.objective {
        Objective::SuperInfo => {
            let l = superinfo_loss(&mut tape, &bound, x1, x2, &cfg.weights).map_err(plain)?;
            (l.total, l.parts(&tape).map_err(plain)?)
        }
        Objective::Contrastive => {
            let l = contrastive_loss(&mut tape, &bound, x1, x2, cfg.weights.tau).map_err(plain)?;
            let l_cl = tape.scalar_value(l).map_err(plain)?.as_f64();
            (
                l,
                LossParts {
                    l_cl,
                    ..Default::default()
                },
            )
        }
    };
    let losses = superinfo_total(parts, &cfg.weights);
    let losses = match cfg.objective {
        Objective::SuperInfo => losses,
        Objective::Contrastive => LossBreakdown {
            l_total: parts.l_cl,
            ..losses
        },
    };
    let partial = StepOutcome {
        losses,
        grad_norm: f64::NAN,
    };
    for (name, v) in losses.named() {
        check_finite(name, v, epoch, step).map_err(|e| (e, Some(partial)))?;
    }
    let tape_total = tape.scalar_value(total).map_err(plain)?.as_f64();
    check_finite("l_total", tape_total, epoch, step).map_err(|e| (e, Some(partial)))?;

    let grads = tape.backward(total).map_err(plain)?;
    let vars = bound.vars();
    let grad_refs: Vec<_> = vars
        .iter()
        .map(|v| grads.get(*v).expect("every parameter is a trainable leaf"))
        .collect();
    let grad_norm = grad_refs
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt();
    let outcome = StepOutcome { losses, grad_norm };
    check_finite("grad_norm", grad_norm, epoch, step).map_err(|e| (e, Some(outcome)))?;

    let trainable: Vec<bool> = (0..vars.len())
        .map(|i| !cfg.freeze_heads || state.bundle.is_backbone_param(i))
        .collect();
    let mut params = state.bundle.params_mut();
    adam_step(&mut params, &grad_refs, &trainable, &mut state.adam, &cfg.adam).map_err(plain)?;
    Ok(outcome)
}

fn record(cfg: &SuperInfoConfig, run_id: &str, epoch: u64, step: Option<u64>, o: &StepOutcome, wall_ms: u64) -> MetricsRecord {
    let l = &o.losses;
    MetricsRecord {
        run_id: run_id.to_string(),
        epoch,
        step,
        l_cl: l.l_cl,
        l_kl_1: l.l_kl_1,
        l_kl_2: l.l_kl_2,
        l_re_1: l.l_re_1,
        l_re_2: l.l_re_2,
        l_total: l.l_total,
        grad_norm: o.grad_norm,
        wall_ms,
        seed: cfg.seed,
    }
}

/// Continues training until `state.epoch == cfg.epochs`, emitting one record
/// per step and one summary per epoch.
pub fn train_epochs<T: Element>(
    state: &mut TrainState<T>,
    cfg: &SuperInfoConfig,
    source: &ViewSource,
    sink: &mut dyn MetricsSink,
) -> Result<(), TrainError> {
    cfg.validate()?;
    if source.dim() != cfg.model.input_dim {
        return Err(TrainError::Config(format!(
            "data has {} features but the model expects {}",
            source.dim(),
            cfg.model.input_dim
        )));
    }
    if source.len() < cfg.batch_size {
        return Err(DataError::DatasetTooSmall {
            n: source.len(),
            batch_size: cfg.batch_size,
        }
        .into());
    }
    let run_id = cfg.run_id();
    let start = Instant::now();
    let wall = || {
        if cfg.metrics_wall_clock {
            start.elapsed().as_millis() as u64
        } else {
            0
        }
    };
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let mut rng = state.rng.clone();
        let batches: Vec<ViewBatch> =
            BatchIter::new(source, cfg.batch_size, cfg.augmentation, &mut rng)?.collect();
        state.rng = rng;
        let mut sums = [0.0f64; 7];
        for batch in &batches {
            match train_step(state, cfg, batch) {
                Ok(o) => {
                    sink.record(&record(cfg, &run_id, epoch, Some(state.adam.step), &o, wall()))?;
                    let l = &o.losses;
                    for (s, v) in sums.iter_mut().zip([
                        l.l_cl, l.l_kl_1, l.l_kl_2, l.l_re_1, l.l_re_2, l.l_total, o.grad_norm,
                    ]) {
                        *s += v;
                    }
                }
                Err((err, partial)) => {
                    if let Some(o) = partial {
                        sink.record(&record(cfg, &run_id, epoch, Some(state.adam.step + 1), &o, wall()))?;
                    }
                    sink.flush()?;
                    return Err(err);
                }
            }
        }
        let k = batches.len() as f64;
        let mean = |i: usize| sums[i] / k;
        let summary = StepOutcome {
            losses: LossBreakdown {
                l_cl: mean(0),
                l_kl_1: mean(1),
                l_kl_2: mean(2),
                l_re_1: mean(3),
                l_re_2: mean(4),
                l_total: mean(5),
            },
            grad_norm: mean(6),
        };
        state.epoch = epoch;
        sink.record(&record(cfg, &run_id, epoch, None, &summary, wall()))?;
    }
    sink.flush()?;
    Ok(())
}

/// Trains a fresh model for `cfg.epochs` epochs.
pub fn pretrain<T: Element>(
    cfg: &SuperInfoConfig,
    source: &ViewSource,
    sink: &mut dyn MetricsSink,
) -> Result<TrainState<T>, TrainError> {
    cfg.validate()?;
    let mut state = TrainState::init(cfg)?;
    train_epochs(&mut state, cfg, source, sink)?;
    Ok(state)
}
