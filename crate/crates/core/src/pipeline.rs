//! End-to-end runs: synthetic data, pretraining, and probing on the source
//! and transfer tasks.

use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::data::{generate_synthetic, DataError, DatasetContainer, PairedDataset, ViewSource};
use crate::eval::{mean_accuracy, probe_datasets, transfer_eval, EvalError, ProbeResult};
use crate::loss::LossWeights;
use crate::model::ModelBundle;
use crate::tensor::{DType, Element, Rng};
use crate::train::{pretrain, MetricsSink, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Labelled train/test splits of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSplit {
    pub train: PairedDataset,
    pub test: PairedDataset,
}

impl TaskSplit {
    /// View-1 containers used by the probe.
    pub fn probe_pair(&self) -> Result<(DatasetContainer, DatasetContainer), DataError> {
        let [train, _] = DatasetContainer::from_paired(&self.train)?;
        let [test, _] = DatasetContainer::from_paired(&self.test)?;
        Ok((train, test))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunData {
    pub source: TaskSplit,
    pub transfer: Vec<TaskSplit>,
}

/// Draws the source task and one transfer task per nuisance multiplier, all
/// from the `data` sub-stream of `seed`. Every task shares the same codes and
/// mixing matrices.
pub fn generate_run_data(run: &RunConfig, seed: u64) -> Result<RunData, DataError> {
    let mut rng = Rng::substream(seed, "data");
    let spec = &run.data;
    spec.validate()?;
    let with = |n: usize, scale: f64| {
        let mut s = spec.clone();
        s.n_samples = n;
        s.nuisance_scale = spec.nuisance_scale * scale;
        s
    };
    let source = TaskSplit {
        train: generate_synthetic(spec, &mut rng)?,
        test: generate_synthetic(&with(run.n_test, 1.0), &mut rng)?,
    };
    let mut transfer = Vec::with_capacity(run.transfer_nuisance_scales.len());
    for &scale in &run.transfer_nuisance_scales {
        transfer.push(TaskSplit {
            train: generate_synthetic(&with(run.transfer_samples, scale), &mut rng)?,
            test: generate_synthetic(&with(run.n_test, scale), &mut rng)?,
        });
    }
    Ok(RunData { source, transfer })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub source: ProbeResult,
    pub transfer: Vec<ProbeResult>,
    pub transfer_mean: f64,
}

/// Probes `bundle` on the source task and every transfer task.
pub fn evaluate<T: Element>(bundle: &ModelBundle<T>, run: &RunConfig, data: &RunData) -> Result<Evaluation, PipelineError> {
    let (train, test) = data.source.probe_pair()?;
    let source = probe_datasets(bundle, &train, &test, &run.probe)?;
    let pairs = data
        .transfer
        .iter()
        .map(TaskSplit::probe_pair)
        .collect::<Result<Vec<_>, _>>()?;
    let transfer = transfer_eval(bundle, &pairs, &run.probe)?;
    Ok(Evaluation {
        transfer_mean: mean_accuracy(&transfer),
        source,
        transfer,
    })
}

/// Pretrains on the source task, then evaluates.
pub fn pretrain_and_evaluate<T: Element>(
    run: &RunConfig,
    data: &RunData,
    sink: &mut dyn MetricsSink,
) -> Result<(ModelBundle<T>, Evaluation), PipelineError> {
    let mut cfg = run.train.clone();
    cfg.model.input_dim = data.source.train.dim();
    let source = ViewSource::paired(&data.source.train);
    let state = pretrain::<T>(&cfg, &source, sink)?;
    let eval = evaluate(&state.bundle, run, data)?;
    Ok((state.bundle, eval))
}

/// [`pretrain_and_evaluate`] at the precision named by the config.
pub fn run_evaluation(run: &RunConfig, data: &RunData, sink: &mut dyn MetricsSink) -> Result<Evaluation, PipelineError> {
    Ok(match run.train.dtype {
        DType::F32 => pretrain_and_evaluate::<f32>(run, data, sink)?.1,
        DType::F64 => pretrain_and_evaluate::<f64>(run, data, sink)?.1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub weights: LossWeights,
    pub seed: u64,
    pub source_acc: f64,
    pub transfer_acc_mean: f64,
}

/// `run` with the given loss weights and every sub-stream seeded by `seed`.
pub fn ablation_config(run: &RunConfig, lambdas: [f64; 4], seed: u64) -> RunConfig {
    let mut r = run.clone();
    let w = &mut r.train.weights;
    [w.lambda1, w.lambda2, w.lambda3, w.lambda4] = lambdas;
    r.train.seed = seed;
    r.probe.seed = seed;
    r
}

/// One pretrain and probe per `(tuple, seed)`, in grid-major order. Points run
/// in parallel on the current rayon pool.
pub fn run_ablation(run: &RunConfig, grid: &[[f64; 4]], seeds: &[u64]) -> Result<Vec<AblationRow>, PipelineError> {
    use rayon::prelude::*;
    let points: Vec<([f64; 4], u64)> = grid
        .iter()
        .flat_map(|l| seeds.iter().map(move |&s| (*l, s)))
        .collect();
    points
        .par_iter()
        .map(|&(lambdas, seed)| {
            let r = ablation_config(run, lambdas, seed);
            let data = generate_run_data(&r, seed)?;
            let eval = run_evaluation(&r, &data, &mut crate::train::NullSink)?;
            Ok(AblationRow {
                weights: r.train.weights,
                seed,
                source_acc: eval.source.accuracy,
                transfer_acc_mean: eval.transfer_mean,
            })
        })
        .collect()
}

/// Parses `"l1,l2,l3,l4;l1,l2,l3,l4;..."`.
pub fn parse_grid(text: &str) -> Result<Vec<[f64; 4]>, String> {
    let mut out = Vec::new();
    for (i, tuple) in text.split(';').map(str::trim).enumerate() {
        if tuple.is_empty() {
            continue;
        }
        let vals: Vec<f64> = tuple
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("grid tuple {}: {e}", i + 1))?;
        let arr: [f64; 4] = vals
            .try_into()
            .map_err(|v: Vec<f64>| format!("grid tuple {} has {} values, expected 4", i + 1, v.len()))?;
        if arr.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(format!("grid tuple {}: weights must be finite and >= 0", i + 1));
        }
        out.push(arr);
    }
    if out.is_empty() {
        return Err("grid is empty".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0.01,0.01,0.1,0.1; 0,0,0.1,0.1;0.01,0.01,0,0").unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g[1], [0.0, 0.0, 0.1, 0.1]);
        assert_eq!(parse_grid("0.005,0.005,0.5,0.5").unwrap(), vec![[0.005, 0.005, 0.5, 0.5]]);
        for bad in ["", ";", "1,2,3", "1,2,3,x", "1,2,3,4,5", "1,2,-3,4", "1,2,NaN,4"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn run_data_is_seeded() {
        let mut run = RunConfig::default();
        run.data.n_samples = 32;
        run.n_test = 16;
        run.transfer_samples = 24;
        let a = generate_run_data(&run, 3).unwrap();
        assert_eq!(a, generate_run_data(&run, 3).unwrap());
        assert_ne!(a, generate_run_data(&run, 4).unwrap());
        assert_eq!(a.transfer.len(), 2);
        assert_eq!(a.transfer[0].train.len(), 24);
        assert_eq!(a.source.test.len(), 16);
    }
}
