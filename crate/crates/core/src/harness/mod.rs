//! End-to-end pipelines: synthetic data, training loops, checkpoints, reports.

pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod data;
pub mod generative;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use classifier::{train_discriminative, ClassifierModel, ClassifierReport, ClassifierRun};
pub use config::{ClassifierTraining, GenerativeTraining, RunConfig};
pub use data::{generate_dataset, generate_sample, Dataset, SamplerKind, SynthConfig, SynthSample};
pub use generative::{
    evaluate_generative, train_epoch, train_generative, GenerativeModel, GenerativeReport, GenerativeRun,
};

use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::rng::SplitMix64;
use crate::tensor::Module;

// Sub-stream tags for `SplitMix64::derive` on the run seed.
pub(crate) const INIT_STREAM: u64 = 10;
const SHUFFLE_STREAM: u64 = 11;

/// Fisher-Yates permutation of `0..n` for one epoch.
pub(crate) fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = SplitMix64::derive(seed, &[SHUFFLE_STREAM, epoch as u64]);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub trainable_params: usize,
    pub frozen_params: usize,
    pub total_params: usize,
}

impl ParamCounts {
    pub fn of(module: &dyn Module) -> Self {
        let (trainable, total) = module.param_count();
        Self {
            trainable_params: trainable,
            frozen_params: total - trainable,
            total_params: total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Discriminative,
    Generative,
}

/// Config snapshot stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub pipeline: Pipeline,
    pub config: RunConfig,
}

impl Snapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }
}

/// Files written by a training command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutputs {
    pub checkpoint: PathBuf,
    pub report: PathBuf,
}

fn write_outputs<R: Serialize>(
    cfg: &RunConfig,
    pipeline: Pipeline,
    stem: &str,
    model: &dyn Module,
    report: &R,
) -> Result<RunOutputs> {
    let dir = Path::new(&cfg.output_dir);
    std::fs::create_dir_all(dir)?;
    let snapshot = Snapshot {
        pipeline,
        config: cfg.clone(),
    };
    let outputs = RunOutputs {
        checkpoint: dir.join(format!("{stem}.skf")),
        report: dir.join(format!("{stem}_report.json")),
    };
    Checkpoint::from_module(&snapshot.to_json(), model).save(&outputs.checkpoint)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(&outputs.report, json)?;
    Ok(outputs)
}

/// Generates data, trains the classifier, and writes `classifier.skf` plus its report.
pub fn run_classifier(cfg: &RunConfig) -> Result<(ClassifierRun, RunOutputs)> {
    cfg.validate()?;
    let data = generate_dataset(&cfg.data)?;
    let run = train_discriminative(cfg, &data)?;
    let out = write_outputs(cfg, Pipeline::Discriminative, "classifier", &run.model, &run.report)?;
    Ok((run, out))
}

/// Generates data, trains the generative model, and writes `generative.skf` plus its report.
pub fn run_generative(cfg: &RunConfig) -> Result<(GenerativeRun, RunOutputs)> {
    cfg.validate()?;
    let data = generate_dataset(&cfg.data)?;
    let run = train_generative(cfg, &data)?;
    let out = write_outputs(cfg, Pipeline::Generative, "generative", &run.model, &run.report)?;
    Ok((run, out))
}

/// Reads the pipeline and config stored in a checkpoint.
pub fn load_snapshot(path: &Path) -> Result<Snapshot> {
    let ck = Checkpoint::load(path)?;
    snapshot_of(&ck)
}

fn snapshot_of(ck: &Checkpoint) -> Result<Snapshot> {
    serde_json::from_str(&ck.config_json)
        .map_err(|e| Error::Config(format!("checkpoint config snapshot is invalid: {e}")))
}

/// Rebuilds the model described by `cfg`, loads the checkpoint into it, and
/// scores the test split. The pipeline comes from the checkpoint snapshot.
pub fn evaluate_checkpoint(path: &Path, cfg: &RunConfig) -> Result<(Pipeline, EvalReport)> {
    cfg.validate()?;
    let ck = Checkpoint::load(path)?;
    let snapshot = snapshot_of(&ck)?;
    let data = generate_dataset(&cfg.data)?;
    let report = match snapshot.pipeline {
        Pipeline::Discriminative => {
            let mut model = ClassifierModel::new(cfg)?;
            ck.apply_to(&mut model)?;
            model.evaluate(&data.test)?
        }
        Pipeline::Generative => {
            let mut model = GenerativeModel::new(cfg)?;
            ck.apply_to(&mut model)?;
            let n = cfg
                .generative
                .eval_limit
                .map_or(data.test.len(), |l| l.min(data.test.len()));
            evaluate_generative(&model, &data.test[..n], &cfg.generative)?
        }
    };
    Ok((snapshot.pipeline, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_is_a_seeded_permutation() {
        let a = shuffled(50, 3, 0);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_eq!(a, shuffled(50, 3, 0));
        assert_ne!(a, shuffled(50, 3, 1));
    }
}
