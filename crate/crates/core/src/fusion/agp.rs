use serde::{Deserialize, Serialize};

use super::{expand_rows, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Graph, Module, Param, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgpConfig {
    pub d_vis: usize,
    pub d_lm: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for AgpConfig {
    fn default() -> Self {
        Self {
            d_vis: 32,
            d_lm: 32,
            heads: 4,
            ffn_hidden: 64,
            lora_rank: 4,
            lora_alpha: 8.0,
        }
    }
}

/// Turns a `[V, T, D_vis]` view bundle into `T` language-model embeddings.
///
/// At each temporal position the `V` view tokens are normalized, mixed by
/// cross-view attention and mean pooled; the pooled token is refined by a
/// residual feed-forward layer, scaled by a scalar sigmoid gate, projected to
/// `D_lm`, and normalized. Attention projections carry frozen bases with
/// trainable LoRA adapters.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentiveGatedProjector {
    pub norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ffn: FeedForward,
    pub token_gate: Linear,
    pub out_proj: Linear,
    pub out_norm: LayerNorm,
}

impl AttentiveGatedProjector {
    pub fn new(prefix: &str, cfg: &AgpConfig, rng: &mut SplitMix64) -> Result<Self> {
        let p = |name: &str| format!("{prefix}.{name}");
        Ok(Self {
            norm: LayerNorm::new(&p("norm"), cfg.d_vis),
            attn: MultiHeadAttention::new(
                &p("attn"),
                cfg.d_vis,
                cfg.heads,
                Some((cfg.lora_rank, cfg.lora_alpha)),
                rng,
            )?,
            ffn: FeedForward::new(&p("ffn"), cfg.d_vis, cfg.ffn_hidden, rng),
            token_gate: Linear::new(&p("token_gate"), cfg.d_vis, 1, rng),
            out_proj: Linear::new(&p("out_proj"), cfg.d_vis, cfg.d_lm, rng),
            out_norm: LayerNorm::new(&p("out_norm"), cfg.d_lm),
        })
    }

    pub fn d_vis(&self) -> usize {
        self.out_proj.d_in()
    }

    pub fn d_lm(&self) -> usize {
        self.out_proj.d_out()
    }

    /// Cross-view attention and mean pooling at every position: `[T, D_vis]`.
    pub fn pool_views(&self, g: &mut Graph, bundle: Var) -> Result<Var> {
        let shape = g.shape(bundle).to_vec();
        let d = self.d_vis();
        if shape.len() != 3 || shape[2] != d {
            return Err(Error::dim(format!(
                "projector expects a [V, T, {d}] bundle, got {shape:?}"
            )));
        }
        let (v, t) = (shape[0], shape[1]);
        // Row v * T + t holds view v at position t.
        let flat = g.reshape(bundle, &[v * t, d])?;
        let normed = self.norm.forward(g, flat)?;
        let qkv = self.attn.project(g, normed)?;
        let mut mixed = Vec::with_capacity(t);
        for pos in 0..t {
            let rows: Vec<usize> = (0..v).map(|view| view * t + pos).collect();
            let step = super::Qkv {
                q: g.select_rows(qkv.q, &rows)?,
                k: g.select_rows(qkv.k, &rows)?,
                v: g.select_rows(qkv.v, &rows)?,
            };
            mixed.push(self.attn.attend(g, step, false)?);
        }
        // Row pos * V + view after concatenation.
        let mixed = if mixed.len() == 1 {
            mixed[0]
        } else {
            g.concat(&mixed, 0)?
        };
        let attended = self.attn.output.forward(g, mixed)?;
        let grouped = g.reshape(attended, &[t, v, d])?;
        g.mean_axis(grouped, 1)
    }

    pub fn forward(&self, g: &mut Graph, bundle: Var) -> Result<Var> {
        let pooled = self.pool_views(g, bundle)?;
        let refined = self.ffn.forward(g, pooled)?;
        let refined = g.add(pooled, refined)?;
        let gate = self.token_gate.forward(g, pooled)?;
        let gate = g.sigmoid(gate);
        let gate = expand_rows(g, gate, self.d_vis())?;
        let gated = g.mul(refined, gate)?;
        let projected = self.out_proj.forward(g, gated)?;
        self.out_norm.forward(g, projected)
    }
}

impl Module for AttentiveGatedProjector {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.norm.visit(f);
        self.attn.visit(f);
        self.ffn.visit(f);
        self.token_gate.visit(f);
        self.out_proj.visit(f);
        self.out_norm.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.norm.visit_mut(f);
        self.attn.visit_mut(f);
        self.ffn.visit_mut(f);
        self.token_gate.visit_mut(f);
        self.out_proj.visit_mut(f);
        self.out_norm.visit_mut(f);
    }
}
