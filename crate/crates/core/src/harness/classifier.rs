use serde::Serialize;

use super::config::RunConfig;
use super::data::{Dataset, SynthSample};
use super::{shuffled, ParamCounts, INIT_STREAM};
use crate::error::Result;
use crate::fusion::{argmax, ClassifierHead, CrossViewFusion};
use crate::metrics::{EvalReport, Prediction};
use crate::rng::SplitMix64;
use crate::tensor::optim::OptimizerState;
use crate::tensor::{Graph, Module, Param, Tensor, Var};
use crate::textio::ProficiencyLabel;

/// Cross-view fusion over per-view token means, followed by a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub fusion: CrossViewFusion,
    pub head: ClassifierHead,
}

impl ClassifierModel {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let mut rng = SplitMix64::derive(cfg.seed, &[INIT_STREAM, 0]);
        Ok(Self {
            fusion: CrossViewFusion::new("fusion", &cfg.fusion, &mut rng)?,
            head: ClassifierHead::new("head", cfg.fusion.dim, &mut rng),
        })
    }

    /// Logits `[1, 4]` for pooled views `[V, D]`.
    pub fn logits(&self, g: &mut Graph, pooled: &Tensor) -> Result<Var> {
        let views = g.constant(pooled);
        let fused = self.fusion.forward(g, views)?;
        let logits = self.head.forward(g, fused)?;
        g.reshape(logits, &[1, ProficiencyLabel::COUNT])
    }

    pub fn predict(&self, sample: &SynthSample) -> Result<ProficiencyLabel> {
        let mut g = Graph::new();
        let logits = self.logits(&mut g, &sample.pooled_views())?;
        Ok(ProficiencyLabel::from_index(argmax(g.value(logits))).expect("four logits"))
    }

    pub fn evaluate(&self, samples: &[SynthSample]) -> Result<EvalReport> {
        let preds = samples
            .iter()
            .map(|s| {
                Ok(Prediction {
                    domain_id: s.domain_id,
                    predicted: self.predict(s)?,
                    gold: s.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        EvalReport::from_predictions(&preds)
    }
}

impl Module for ClassifierModel {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.fusion.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.fusion.visit_mut(f);
        self.head.visit_mut(f);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierReport {
    pub pipeline: &'static str,
    pub seed: u64,
    pub data_seed: u64,
    #[serde(flatten)]
    pub test: EvalReport,
    pub best_epoch: usize,
    pub best_val_top1: f64,
    pub train_loss: Vec<f64>,
    pub val_top1: Vec<f64>,
    #[serde(flatten)]
    pub params: ParamCounts,
}

#[derive(Debug, Clone)]
pub struct ClassifierRun {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: ClassifierModel,
    pub report: ClassifierReport,
}

/// Minibatch Adam or SGD on cross-entropy; keeps the best-validation model.
pub fn train_discriminative(cfg: &RunConfig, data: &Dataset) -> Result<ClassifierRun> {
    cfg.validate()?;
    let tc = &cfg.classifier;
    let mut model = ClassifierModel::new(cfg)?;
    let mut opt = OptimizerState::new(tc.optimizer, tc.learning_rate);
    let pooled: Vec<Tensor> = data.train.iter().map(SynthSample::pooled_views).collect();
    let targets: Vec<usize> = data.train.iter().map(|s| s.label.index()).collect();

    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    let (mut train_loss, mut val_top1) = (Vec::new(), Vec::new());
    for epoch in 0..tc.epochs {
        let order = shuffled(data.train.len(), cfg.seed, epoch);
        let mut total = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let mut g = Graph::new();
            let rows = batch
                .iter()
                .map(|&i| model.logits(&mut g, &pooled[i]))
                .collect::<Result<Vec<_>>>()?;
            let logits = if rows.len() == 1 { rows[0] } else { g.concat(&rows, 0)? };
            let batch_targets: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let loss = g.cross_entropy(logits, &batch_targets)?;
            total += g.value(loss)[0] * batch.len() as f64;
            let grads = g.backward(loss)?;
            model.zero_grad();
            grads.accumulate_into(&mut model)?;
            opt.step(&mut model)?;
        }
        train_loss.push(total / data.train.len() as f64);
        let val = model.evaluate(&data.val)?.top1;
        val_top1.push(val);
        if val > best.2 {
            best = (model.clone(), epoch, val);
        }
    }
    let (mut model, best_epoch, best_val) = best;
    model.zero_grad();
    let report = ClassifierReport {
        pipeline: "discriminative",
        seed: cfg.seed,
        data_seed: cfg.data.seed,
        test: model.evaluate(&data.test)?,
        best_epoch,
        best_val_top1: best_val,
        train_loss,
        val_top1,
        params: ParamCounts::of(&model),
    };
    Ok(ClassifierRun { model, report })
}
