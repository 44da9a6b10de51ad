use rayon::prelude::*;
use serde::Serialize;

use super::config::{GenerativeTraining, RunConfig};
use super::data::{Dataset, SynthSample};
use super::{shuffled, ParamCounts, INIT_STREAM};
use crate::error::Result;
use crate::fusion::AttentiveGatedProjector;
use crate::lm::{generate_greedy, lm_forward, lm_loss, SequencePlan, TinyDecoder, Vocab};
use crate::metrics::{EvalReport, Generation};
use crate::rng::SplitMix64;
use crate::tensor::optim::OptimizerState;
use crate::tensor::{Graph, Module, Param, Var};
use crate::textio::{format_target, StructuredResponse};

/// Projector plus decoder: view bundles in, structured text out.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeModel {
    pub agp: AttentiveGatedProjector,
    pub decoder: TinyDecoder,
}

impl GenerativeModel {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let mut rng = SplitMix64::derive(cfg.seed, &[INIT_STREAM, 1]);
        Ok(Self {
            agp: AttentiveGatedProjector::new("agp", &cfg.agp, &mut rng)?,
            decoder: TinyDecoder::new("lm", &cfg.lm, Vocab::standard().len(), &mut rng)?,
        })
    }

    pub fn target(sample: &SynthSample) -> Result<String> {
        Ok(format_target(&StructuredResponse::new(
            sample.label,
            &sample.commentary,
        )?))
    }

    pub fn plan(&self, sample: &SynthSample, gen: &GenerativeTraining, response: &str) -> Result<SequencePlan> {
        let t = sample.bundle.shape()[1];
        let prompt = gen.prompt(t, sample.domain());
        SequencePlan::new(&prompt, t, response, &Vocab::standard(), self.decoder.max_len())
    }

    /// Teacher-forced loss on the formatted target. The bundle enters as a
    /// constant, so view features never receive gradients.
    pub fn loss(&self, g: &mut Graph, sample: &SynthSample, gen: &GenerativeTraining) -> Result<Var> {
        let plan = self.plan(sample, gen, &Self::target(sample)?)?;
        let bundle = g.constant(&sample.bundle);
        let video = self.agp.forward(g, bundle)?;
        let logits = lm_forward(g, &self.decoder, &plan, Some(video))?;
        lm_loss(g, logits, &plan)
    }

    pub fn generate(&self, sample: &SynthSample, gen: &GenerativeTraining) -> Result<String> {
        let mut g = Graph::new();
        let bundle = g.constant(&sample.bundle);
        let video = self.agp.forward(&mut g, bundle)?;
        let video = g.tensor(video);
        let t = sample.bundle.shape()[1];
        let prompt = gen.prompt(t, sample.domain());
        generate_greedy(
            &self.decoder,
            &Vocab::standard(),
            &prompt,
            Some(&video),
            gen.max_new_tokens,
        )
    }

    pub fn mean_loss(&self, samples: &[SynthSample], gen: &GenerativeTraining) -> Result<f64> {
        let losses = samples
            .par_iter()
            .map(|s| {
                let mut g = Graph::new();
                let l = self.loss(&mut g, s, gen)?;
                Ok(g.value(l)[0])
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
    }
}

impl Module for GenerativeModel {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.agp.visit(f);
        self.decoder.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.agp.visit_mut(f);
        self.decoder.visit_mut(f);
    }
}

/// Greedy generation per sample (in parallel, merged in input order), then
/// strict-then-lenient parsing and scoring.
pub fn evaluate_generative(
    model: &GenerativeModel,
    samples: &[SynthSample],
    gen: &GenerativeTraining,
) -> Result<EvalReport> {
    let items = samples
        .par_iter()
        .map(|s| {
            Ok(Generation {
                domain_id: s.domain_id,
                gold: s.label,
                reference: s.commentary.clone(),
                generated: model.generate(s, gen)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_generations(&items)
}

/// Order-sensitive FNV-1a digest of every view feature in the dataset.
pub fn feature_checksum(data: &Dataset) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for s in data.train.iter().chain(&data.val).chain(&data.test) {
        for v in s.bundle.data() {
            for b in v.to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerativeReport {
    pub pipeline: &'static str,
    pub seed: u64,
    pub data_seed: u64,
    #[serde(flatten)]
    pub test: EvalReport,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub feature_checksum_before: String,
    pub feature_checksum_after: String,
    #[serde(flatten)]
    pub params: ParamCounts,
}

#[derive(Debug, Clone)]
pub struct GenerativeRun {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: GenerativeModel,
    pub report: GenerativeReport,
}

fn limited(xs: &[SynthSample], limit: Option<usize>) -> &[SynthSample] {
    &xs[..limit.map_or(xs.len(), |l| l.min(xs.len()))]
}

/// One shuffled pass of minibatch updates; returns the mean training loss.
pub fn train_epoch(
    model: &mut GenerativeModel,
    opt: &mut OptimizerState,
    train: &[SynthSample],
    gen: &GenerativeTraining,
    seed: u64,
    epoch: usize,
) -> Result<f64> {
    let order = shuffled(train.len(), seed, epoch);
    let mut total = 0.0;
    for batch in order.chunks(gen.batch_size) {
        let mut g = Graph::new();
        let losses = batch
            .iter()
            .map(|&i| model.loss(&mut g, &train[i], gen))
            .collect::<Result<Vec<_>>>()?;
        let mut sum = losses[0];
        for &l in &losses[1..] {
            sum = g.add(sum, l)?;
        }
        let loss = g.scale(sum, 1.0 / batch.len() as f64);
        total += g.value(loss)[0] * batch.len() as f64;
        let grads = g.backward(loss)?;
        model.zero_grad();
        grads.accumulate_into(model)?;
        opt.step(model)?;
    }
    Ok(total / train.len().max(1) as f64)
}

/// Trains projector and decoder on the causal objective; view features stay fixed.
pub fn train_generative(cfg: &RunConfig, data: &Dataset) -> Result<GenerativeRun> {
    cfg.validate()?;
    let gen = &cfg.generative;
    let train = limited(&data.train, gen.train_limit);
    let val = limited(&data.val, gen.eval_limit);
    let test = limited(&data.test, gen.eval_limit);
    let checksum_before = feature_checksum(data);

    let mut model = GenerativeModel::new(cfg)?;
    let mut opt = OptimizerState::new(gen.optimizer, gen.learning_rate);
    let mut best = (model.clone(), 0usize, f64::INFINITY);
    let (mut train_loss, mut val_loss) = (Vec::new(), Vec::new());
    for epoch in 0..gen.epochs {
        train_loss.push(train_epoch(&mut model, &mut opt, train, gen, cfg.seed, epoch)?);
        let v = model.mean_loss(val, gen)?;
        val_loss.push(v);
        if v < best.2 {
            best = (model.clone(), epoch, v);
        }
    }
    let (mut model, best_epoch, best_val_loss) = best;
    model.zero_grad();
    let report = GenerativeReport {
        pipeline: "generative",
        seed: cfg.seed,
        data_seed: cfg.data.seed,
        test: evaluate_generative(&model, test, gen)?,
        best_epoch,
        best_val_loss,
        train_loss,
        val_loss,
        feature_checksum_before: format!("{checksum_before:016x}"),
        feature_checksum_after: format!("{:016x}", feature_checksum(data)),
        params: ParamCounts::of(&model),
    };
    Ok(GenerativeRun { model, report })
}
