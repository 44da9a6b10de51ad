//! Multi-view fusion blocks and their building blocks.
//!
//! * [`CrossViewFusion`] pools a set of per-view vectors into one fused
//!   vector for classification.
//! * [`AttentiveGatedProjector`] fuses views at every temporal position and
//!   projects the result into a language model's embedding space.

mod agp;
mod attention;
mod cvf;
mod head;
mod linear;

pub use agp::{AgpConfig, AttentiveGatedProjector};
pub use attention::{MultiHeadAttention, Qkv};
pub use cvf::{CrossViewFusion, FusionConfig, CALIBRATION_EPS};
pub(crate) use head::argmax;
pub use head::ClassifierHead;
pub use linear::{Linear, LoraLinear, Projection};

use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::{Graph, Module, Param, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;

/// Learned gain and bias of a layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Param,
    pub bias: Param,
}

impl LayerNorm {
    pub fn new(prefix: &str, dim: usize) -> Self {
        Self {
            gain: Param::trainable(format!("{prefix}.gain"), Tensor::full(&[dim], 1.0)),
            bias: Param::trainable(format!("{prefix}.bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(&self.gain);
        let bias = g.param(&self.bias);
        g.layer_norm(x, gain, bias, NORM_EPS)
    }
}

impl Module for LayerNorm {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gain);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gain);
        f(&mut self.bias);
    }
}

/// Two linear layers with a GELU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(prefix: &str, dim: usize, hidden: usize, rng: &mut SplitMix64) -> Self {
        Self {
            up: Linear::new(&format!("{prefix}.up"), dim, hidden, rng),
            down: Linear::new(&format!("{prefix}.down"), hidden, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}

impl Module for FeedForward {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.up.visit(f);
        self.down.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.up.visit_mut(f);
        self.down.visit_mut(f);
    }
}

/// Broadcasts a `[n]` vector of per-row scalars to `[n, width]` with a rank-1 product.
pub(crate) fn expand_rows(g: &mut Graph, scalars: Var, width: usize) -> Result<Var> {
    let n = g.value(scalars).len();
    let col = g.reshape(scalars, &[n, 1])?;
    let ones = g.constant(&Tensor::full(&[1, width], 1.0));
    g.matmul(col, ones)
}
