use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::rng::SplitMix64;
use crate::tensor::{Graph, Module, Param, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    pub max_len: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            heads: 4,
            layers: 2,
            ffn_hidden: 64,
            max_len: 256,
        }
    }
}

/// Pre-norm residual block: `x + attn(ln1(x))`, then `+ ffn(ln2(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderBlock {
    pub fn new(prefix: &str, cfg: &LmConfig, rng: &mut SplitMix64) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(&format!("{prefix}.ln1"), cfg.dim),
            attn: MultiHeadAttention::new(&format!("{prefix}.attn"), cfg.dim, cfg.heads, None, rng)?,
            ln2: LayerNorm::new(&format!("{prefix}.ln2"), cfg.dim),
            ffn: FeedForward::new(&format!("{prefix}.ffn"), cfg.dim, cfg.ffn_hidden, rng),
        })
    }

    /// Causal over the rows of `x: [L, D]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, x)?;
        let h = self.attn.forward(g, h, true)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, x)?;
        let h = self.ffn.forward(g, h)?;
        g.add(x, h)
    }
}

impl Module for DecoderBlock {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.ln1.visit(f);
        self.attn.visit(f);
        self.ln2.visit(f);
        self.ffn.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.ln1.visit_mut(f);
        self.attn.visit_mut(f);
        self.ln2.visit_mut(f);
        self.ffn.visit_mut(f);
    }
}

/// Small causal transformer over symbol and video embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyDecoder {
    pub tok_emb: Param,
    pub pos_emb: Param,
    pub blocks: Vec<DecoderBlock>,
    pub final_norm: LayerNorm,
    pub head: Linear,
}

const EMBED_STD: f64 = 0.1;

impl TinyDecoder {
    pub fn new(prefix: &str, cfg: &LmConfig, vocab_size: usize, rng: &mut SplitMix64) -> Result<Self> {
        if cfg.layers == 0 || cfg.max_len == 0 || cfg.dim == 0 {
            return Err(Error::Config("decoder needs layers, width and max_len >= 1".into()));
        }
        let emb = |rows: usize, rng: &mut SplitMix64| {
            Tensor::new(vec![rows, cfg.dim], rng.normal_vec(rows * cfg.dim, EMBED_STD)).expect("shape matches")
        };
        let tok_emb = Param::trainable(format!("{prefix}.tok_emb"), emb(vocab_size, rng));
        let pos_emb = Param::trainable(format!("{prefix}.pos_emb"), emb(cfg.max_len, rng));
        let blocks = (0..cfg.layers)
            .map(|i| DecoderBlock::new(&format!("{prefix}.blocks.{i}"), cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tok_emb,
            pos_emb,
            blocks,
            final_norm: LayerNorm::new(&format!("{prefix}.final_norm"), cfg.dim),
            head: Linear::new(&format!("{prefix}.head"), cfg.dim, vocab_size, rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.tok_emb.value.shape()[1]
    }

    pub fn vocab_size(&self) -> usize {
        self.tok_emb.value.shape()[0]
    }

    pub fn max_len(&self) -> usize {
        self.pos_emb.value.shape()[0]
    }

    /// Logits `[L, vocab]` for input embeddings `[L, D]` (positions are added here).
    pub fn forward_embeddings(&self, g: &mut Graph, emb: Var) -> Result<Var> {
        let shape = g.shape(emb).to_vec();
        if shape.len() != 2 || shape[1] != self.dim() {
            return Err(Error::dim(format!(
                "decoder expects [L, {}] embeddings, got {shape:?}",
                self.dim()
            )));
        }
        let len = shape[0];
        if len > self.max_len() {
            return Err(Error::Length(format!(
                "sequence of {len} exceeds the decoder limit {}",
                self.max_len()
            )));
        }
        let pos_table = g.param(&self.pos_emb);
        let pos = g.slice(pos_table, 0, 0, len)?;
        let mut x = g.add(emb, pos)?;
        for block in &self.blocks {
            x = block.forward(g, x)?;
        }
        let x = self.final_norm.forward(g, x)?;
        self.head.forward(g, x)
    }
}

impl Module for TinyDecoder {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.tok_emb);
        f(&self.pos_emb);
        for b in &self.blocks {
            b.visit(f);
        }
        self.final_norm.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.tok_emb);
        f(&mut self.pos_emb);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.final_norm.visit_mut(f);
        self.head.visit_mut(f);
    }
}
