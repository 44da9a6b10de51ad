use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::sampler::{pats_plan, uniform_plan, FramePlan, SamplerConfig};
use crate::tensor::Tensor;
use crate::textio::{synth_commentary, ProficiencyLabel, DOMAINS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Pats,
    Uniform,
}

/// Synthetic multi-view data.
///
/// Every sample has a latent frame sequence of `video_length` frames with
/// short "movement bursts" shared by all views. Each informative view carries
/// one bit of the two-bit label along a fixed per-view direction: a weak cue
/// on every frame plus a strong cue on frames whose burst is seen at least
/// twice by the sampler. A single view therefore separates at most two label
/// pairs, and samplers that look at bursts densely see more signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub view_count: usize,
    pub token_count: usize,
    pub feature_dim: usize,
    pub class_count: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub noise_std: f64,
    pub uninformative_view_ids: Vec<usize>,
    pub video_length: usize,
    pub sampler: SamplerKind,
    pub n_segments: usize,
    pub segment_duration: usize,
    pub burst_length: usize,
    pub burst_period: usize,
    pub burst_jitter: usize,
    pub static_amplitude: f64,
    pub burst_amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            view_count: 3,
            token_count: 16,
            feature_dim: 32,
            class_count: ProficiencyLabel::COUNT,
            train_samples: 1000,
            val_samples: 100,
            test_samples: 200,
            noise_std: 1.0,
            uninformative_view_ids: vec![2],
            video_length: 240,
            sampler: SamplerKind::Pats,
            n_segments: 4,
            segment_duration: 12,
            burst_length: 12,
            burst_period: 30,
            burst_jitter: 6,
            static_amplitude: 0.35,
            burst_amplitude: 4.0,
        }
    }
}

impl SynthConfig {
    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            n_target: self.token_count,
            n_segments: self.n_segments,
            segment_duration: self.segment_duration,
        }
    }

    pub fn informative_views(&self) -> Vec<usize> {
        (0..self.view_count)
            .filter(|v| !self.uninformative_view_ids.contains(v))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.class_count != ProficiencyLabel::COUNT {
            return fail(format!("class_count must be {}", ProficiencyLabel::COUNT));
        }
        if !(1..=5).contains(&self.view_count) {
            return fail(format!("view_count {} outside [1, 5]", self.view_count));
        }
        if let Some(v) = self.uninformative_view_ids.iter().find(|&&v| v >= self.view_count) {
            return fail(format!("uninformative view {v} does not exist"));
        }
        if self.informative_views().is_empty() {
            return fail("at least one view must be informative".into());
        }
        if self.token_count == 0 || self.feature_dim == 0 || self.video_length == 0 {
            return fail("token_count, feature_dim and video_length must be positive".into());
        }
        if self.train_samples == 0 || self.val_samples == 0 || self.test_samples == 0 {
            return fail("every split needs at least one sample".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail(format!("noise_std {} must be finite and non-negative", self.noise_std));
        }
        if self.burst_length == 0 || self.burst_period < self.burst_length + self.burst_jitter + 1 {
            return fail("burst_period must exceed burst_length + burst_jitter".into());
        }
        if self.sampler == SamplerKind::Pats {
            self.sampler_config().validate()?;
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.train_samples + self.val_samples + self.test_samples
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    /// `[V, T, D]` per-view token features.
    pub bundle: Tensor,
    pub label: ProficiencyLabel,
    pub domain_id: usize,
    pub commentary: String,
    pub frame_plan: FramePlan,
}

impl SynthSample {
    /// Mean over tokens for each view: `[V, D]`.
    pub fn pooled_views(&self) -> Tensor {
        let s = self.bundle.shape();
        let (v, t, d) = (s[0], s[1], s[2]);
        let x = self.bundle.data();
        let mut out = vec![0.0; v * d];
        for view in 0..v {
            for tok in 0..t {
                let row = &x[(view * t + tok) * d..(view * t + tok + 1) * d];
                out[view * d..(view + 1) * d]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(o, r)| *o += r);
            }
        }
        out.iter_mut().for_each(|o| *o /= t as f64);
        Tensor::new(vec![v, d], out).expect("shape matches")
    }

    pub fn domain(&self) -> &'static str {
        DOMAINS[self.domain_id]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<SynthSample>,
    pub val: Vec<SynthSample>,
    pub test: Vec<SynthSample>,
}

// Sub-stream tags for `SplitMix64::derive`.
const DIRECTION: u64 = 1;
const SAMPLE: u64 = 2;
const FRAME: u64 = 3;

/// Disjoint `[start, end)` bursts covering part of `0..len`.
fn bursts(cfg: &SynthConfig, rng: &mut SplitMix64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = rng.below(cfg.burst_period as u64) as usize;
    while start < cfg.video_length {
        out.push((start, (start + cfg.burst_length).min(cfg.video_length)));
        let jitter = rng.below(2 * cfg.burst_jitter as u64 + 1) as usize;
        start = start + cfg.burst_period + jitter - cfg.burst_jitter;
    }
    out
}

/// Marks sampled frames that lie in a burst containing at least two sampled frames.
fn strong_tokens(plan: &[usize], bursts: &[(usize, usize)]) -> Vec<bool> {
    let burst_of = |f: usize| bursts.iter().position(|&(s, e)| s <= f && f < e);
    let ids: Vec<Option<usize>> = plan.iter().map(|&f| burst_of(f)).collect();
    ids.iter()
        .map(|id| id.is_some_and(|b| ids.iter().filter(|x| **x == Some(b)).count() >= 2))
        .collect()
}

fn unit_direction(seed: u64, view: usize, dim: usize) -> Vec<f64> {
    let mut rng = SplitMix64::derive(seed, &[DIRECTION, view as u64]);
    let v = rng.normal_vec(dim, 1.0);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Builds one sample. Labels, domains, bursts and frame noise depend only on
/// the seed and the sample index, so changing the sampler changes only which
/// frames are seen.
pub fn generate_sample(cfg: &SynthConfig, index: usize) -> Result<SynthSample> {
    let mut rng = SplitMix64::derive(cfg.seed, &[SAMPLE, index as u64]);
    let label = ProficiencyLabel::from_index(rng.below(4) as usize).expect("below 4");
    let domain_id = rng.below(DOMAINS.len() as u64) as usize;
    let commentary = synth_commentary(label, domain_id, rng.next_u64())?;
    let bursts = bursts(cfg, &mut rng);

    let frame_plan = match cfg.sampler {
        SamplerKind::Pats => pats_plan(cfg.video_length, &cfg.sampler_config())?,
        SamplerKind::Uniform => uniform_plan(cfg.video_length, cfg.token_count)?,
    };
    let strong = strong_tokens(&frame_plan.indices, &bursts);

    let (v, t, d) = (cfg.view_count, cfg.token_count, cfg.feature_dim);
    let informative = cfg.informative_views();
    let mut data = Vec::with_capacity(v * t * d);
    for view in 0..v {
        let cue = informative.iter().position(|&x| x == view).map(|j| {
            let bit = (label.index() >> (j % 2)) & 1;
            let sign = if bit == 1 { 1.0 } else { -1.0 };
            (sign, unit_direction(cfg.seed, view, d))
        });
        for (tok, &frame) in frame_plan.indices.iter().enumerate() {
            let mut frng = SplitMix64::derive(cfg.seed, &[FRAME, index as u64, view as u64, frame as u64]);
            let mut x = frng.normal_vec(d, cfg.noise_std);
            if let Some((sign, dir)) = &cue {
                let amp = cfg.static_amplitude + if strong[tok] { cfg.burst_amplitude } else { 0.0 };
                x.iter_mut().zip(dir).for_each(|(xi, di)| *xi += sign * amp * di);
            }
            data.extend(x);
        }
    }
    Ok(SynthSample {
        bundle: Tensor::new(vec![v, t, d], data)?,
        label,
        domain_id,
        commentary,
        frame_plan,
    })
}

/// Samples `0..train` form the training split, then validation, then test.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let all = (0..cfg.total_samples())
        .map(|i| generate_sample(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    let mut it = all.into_iter();
    let train = it.by_ref().take(cfg.train_samples).collect();
    let val = it.by_ref().take(cfg.val_samples).collect();
    let test = it.collect();
    Ok(Dataset { train, val, test })
}
