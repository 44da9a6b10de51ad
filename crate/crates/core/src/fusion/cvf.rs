use serde::{Deserialize, Serialize};

use super::{expand_rows, FeedForward, LayerNorm, MultiHeadAttention};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Graph, Module, Param, Tensor, Var};

/// Added to the softplus of the calibration scale so it stays bounded away from zero.
pub const CALIBRATION_EPS: f64 = 1e-5;

/// `softplus⁻¹(1)`: calibration starts as the identity.
const SIGMA_RAW_INIT: f64 = 0.541_324_854_612_918_1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub dim: usize,
    pub heads: usize,
    pub max_views: usize,
    pub ffn_hidden: usize,
    /// Attention projections use frozen bases plus LoRA adapters when set.
    pub lora: bool,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            heads: 4,
            max_views: 5,
            ffn_hidden: 64,
            lora: true,
            lora_rank: 4,
            lora_alpha: 8.0,
        }
    }
}

/// Cross-view fusion of `V` pooled view vectors into one `[D]` vector:
/// view-wise normalization, cross-view attention, per-view scalar gates,
/// mean aggregation, a feed-forward transform blended in through an
/// element-wise gate, and calibration with learned feature-wise statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossViewFusion {
    pub norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub view_gate_logits: Param,
    pub ffn: FeedForward,
    pub blend_gate_logits: Param,
    pub calib_mu: Param,
    pub calib_sigma_raw: Param,
    pub calib_scale: Param,
    pub calib_shift: Param,
}

impl CrossViewFusion {
    pub fn new(prefix: &str, cfg: &FusionConfig, rng: &mut SplitMix64) -> Result<Self> {
        let d = cfg.dim;
        let lora = cfg.lora.then_some((cfg.lora_rank, cfg.lora_alpha));
        let p = |name: &str| format!("{prefix}.{name}");
        Ok(Self {
            norm: LayerNorm::new(&p("norm"), d),
            attn: MultiHeadAttention::new(&p("attn"), d, cfg.heads, lora, rng)?,
            view_gate_logits: Param::trainable(p("view_gates"), Tensor::zeros(&[cfg.max_views])),
            ffn: FeedForward::new(&p("ffn"), d, cfg.ffn_hidden, rng),
            blend_gate_logits: Param::trainable(p("blend_gate"), Tensor::zeros(&[d])),
            calib_mu: Param::trainable(p("calib.mu"), Tensor::zeros(&[d])),
            calib_sigma_raw: Param::trainable(p("calib.sigma_raw"), Tensor::full(&[d], SIGMA_RAW_INIT)),
            calib_scale: Param::trainable(p("calib.scale"), Tensor::full(&[d], 1.0)),
            calib_shift: Param::trainable(p("calib.shift"), Tensor::zeros(&[d])),
        })
    }

    pub fn dim(&self) -> usize {
        self.blend_gate_logits.value.numel()
    }

    pub fn max_views(&self) -> usize {
        self.view_gate_logits.value.numel()
    }

    /// Normalize, attend across views, gate each view, and average: the fused
    /// vector before the feed-forward stage.
    pub fn fuse_pre_ffn(&self, g: &mut Graph, views: Var) -> Result<Var> {
        let shape = g.shape(views).to_vec();
        if shape.len() != 2 || shape[1] != self.dim() {
            return Err(Error::dim(format!(
                "cross-view fusion expects [V, {}], got {shape:?}",
                self.dim()
            )));
        }
        let v = shape[0];
        if v > self.max_views() {
            return Err(Error::Config(format!(
                "{v} views exceed the gate table of {}",
                self.max_views()
            )));
        }
        let normed = self.norm.forward(g, views)?;
        let attended = self.attn.forward(g, normed, false)?;
        let logits = g.param(&self.view_gate_logits);
        let logits = g.slice(logits, 0, 0, v)?;
        let gates = g.sigmoid(logits);
        let gates = expand_rows(g, gates, self.dim())?;
        let gated = g.mul(attended, gates)?;
        g.mean_axis(gated, 0)
    }

    pub fn forward(&self, g: &mut Graph, views: Var) -> Result<Var> {
        let fused = self.fuse_pre_ffn(g, views)?;
        let transformed = self.ffn.forward(g, fused)?;

        let blend = g.param(&self.blend_gate_logits);
        let gate = g.sigmoid(blend);
        let keep = g.scale(gate, -1.0);
        let keep = g.add_scalar(keep, 1.0);
        let a = g.mul(transformed, gate)?;
        let b = g.mul(fused, keep)?;
        let z = g.add(a, b)?;

        let mu = g.param(&self.calib_mu);
        let raw = g.param(&self.calib_sigma_raw);
        let scale = g.param(&self.calib_scale);
        let shift = g.param(&self.calib_shift);
        let sigma = g.softplus(raw);
        let sigma = g.add_scalar(sigma, CALIBRATION_EPS);
        let centered = g.sub(z, mu)?;
        let standardized = g.div(centered, sigma)?;
        let scaled = g.mul(standardized, scale)?;
        g.add(scaled, shift)
    }

    /// Freezes or unfreezes the attention base weights when they are plain layers.
    pub fn set_attention_base_trainable(&mut self, flag: bool) {
        self.attn.set_base_trainable(flag);
    }
}

impl Module for CrossViewFusion {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.norm.visit(f);
        self.attn.visit(f);
        f(&self.view_gate_logits);
        self.ffn.visit(f);
        f(&self.blend_gate_logits);
        f(&self.calib_mu);
        f(&self.calib_sigma_raw);
        f(&self.calib_scale);
        f(&self.calib_shift);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.norm.visit_mut(f);
        self.attn.visit_mut(f);
        f(&mut self.view_gate_logits);
        self.ffn.visit_mut(f);
        f(&mut self.blend_gate_logits);
        f(&mut self.calib_mu);
        f(&mut self.calib_sigma_raw);
        f(&mut self.calib_scale);
        f(&mut self.calib_shift);
    }
}
