use super::linear::Projection;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Graph, Module, Param, Var};

/// Scaled dot-product attention with `heads` heads over a `[L, D]` sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub query: Projection,
    pub key: Projection,
    pub value: Projection,
    pub output: Projection,
    pub heads: usize,
}

/// Query, key, and value projections of a token set.
#[derive(Debug, Clone, Copy)]
pub struct Qkv {
    pub q: Var,
    pub k: Var,
    pub v: Var,
}

impl MultiHeadAttention {
    pub fn new(
        prefix: &str,
        dim: usize,
        heads: usize,
        lora: Option<(usize, f64)>,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model width {dim} is not divisible by {heads} heads"
            )));
        }
        let mut key = Projection::new(&format!("{prefix}.k"), dim, dim, lora, rng);
        freeze_key_bias(&mut key);
        Ok(Self {
            query: Projection::new(&format!("{prefix}.q"), dim, dim, lora, rng),
            key,
            value: Projection::new(&format!("{prefix}.v"), dim, dim, lora, rng),
            output: Projection::new(&format!("{prefix}.o"), dim, dim, lora, rng),
            heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.query.base().d_in()
    }

    pub fn project(&self, g: &mut Graph, x: Var) -> Result<Qkv> {
        Ok(Qkv {
            q: self.query.forward(g, x)?,
            k: self.key.forward(g, x)?,
            v: self.value.forward(g, x)?,
        })
    }

    /// Per-head attention over already projected `[L, D]` rows; heads are
    /// concatenated but the output projection is not applied.
    pub fn attend(&self, g: &mut Graph, qkv: Qkv, causal: bool) -> Result<Var> {
        let d = self.dim();
        let shape = g.shape(qkv.q).to_vec();
        if shape.len() != 2 || shape[1] != d {
            return Err(Error::dim(format!("attention over {shape:?} with width {d}")));
        }
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let (q, k, v) = if self.heads == 1 {
                (qkv.q, qkv.k, qkv.v)
            } else {
                (
                    g.slice(qkv.q, 1, lo, hi)?,
                    g.slice(qkv.k, 1, lo, hi)?,
                    g.slice(qkv.v, 1, lo, hi)?,
                )
            };
            let kt = g.transpose(k)?;
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, scale);
            let weights = if causal {
                g.causal_softmax(scores)?
            } else {
                g.softmax_lastdim(scores)?
            };
            outs.push(g.matmul(weights, v)?);
        }
        if outs.len() == 1 {
            Ok(outs[0])
        } else {
            g.concat(&outs, 1)
        }
    }

    pub fn forward(&self, g: &mut Graph, seq: Var, causal: bool) -> Result<Var> {
        let shape = g.shape(seq).to_vec();
        if shape.len() != 2 || shape[1] != self.dim() {
            return Err(Error::dim(format!(
                "attention expects [L, {}], got {shape:?}",
                self.dim()
            )));
        }
        let qkv = self.project(g, seq)?;
        let mixed = self.attend(g, qkv, causal)?;
        self.output.forward(g, mixed)
    }

    pub fn set_base_trainable(&mut self, flag: bool) {
        for p in [&mut self.query, &mut self.key, &mut self.value, &mut self.output] {
            if let Projection::Plain(l) = p {
                l.set_trainable(flag);
            }
        }
        freeze_key_bias(&mut self.key);
    }
}

/// Softmax ignores a shift shared by all scores of a query, so a key bias has
/// no effect on the output and would only receive zero gradients. It is held
/// at zero and frozen.
fn freeze_key_bias(key: &mut Projection) {
    let bias = &mut key.base_mut().bias;
    bias.value.data_mut().fill(0.0);
    bias.value.requires_grad = false;
}

impl Module for MultiHeadAttention {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.query.visit(f);
        self.key.visit(f);
        self.value.visit(f);
        self.output.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.query.visit_mut(f);
        self.key.visit_mut(f);
        self.value.visit_mut(f);
        self.output.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn identity_attention(dim: usize, heads: usize) -> MultiHeadAttention {
        let mut rng = SplitMix64::new(0);
        let mut mha = MultiHeadAttention::new("a", dim, heads, None, &mut rng).unwrap();
        let mut eye = vec![0.0; dim * dim];
        for i in 0..dim {
            eye[i * dim + i] = 1.0;
        }
        mha.visit_mut(&mut |p| {
            if p.name.ends_with("weight") {
                p.value = Tensor::new(vec![dim, dim], eye.clone()).unwrap();
            }
        });
        mha
    }

    #[test]
    fn single_token_collapses_to_value_then_output() {
        let mut rng = SplitMix64::new(3);
        let mha = MultiHeadAttention::new("a", 4, 2, None, &mut rng).unwrap();
        let x = Tensor::new(vec![1, 4], rng.normal_vec(4, 1.0)).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(&x);
        let y = mha.forward(&mut g, xv, false).unwrap();
        let v = mha.value.forward(&mut g, xv).unwrap();
        let direct = mha.output.forward(&mut g, v).unwrap();
        for (a, b) in g.value(y).iter().zip(g.value(direct)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn hand_evaluated_two_by_two() {
        // x = [[1, 0], [1, 1]], identity projections, H = 1, scale 1/sqrt(2).
        // Gram = [[1, 1], [1, 2]]; row 0 weights are [0.5, 0.5];
        // row 1 weights are softmax([1, 2] / sqrt 2) = [w, 1 - w] with
        // w = 1 / (1 + exp(1 / sqrt 2)).
        let mha = identity_attention(2, 1);
        let mut g = Graph::new();
        let x = g.constant(&Tensor::new(vec![2, 2], vec![1.0, 0.0, 1.0, 1.0]).unwrap());
        let y = mha.forward(&mut g, x, false).unwrap();
        let w = 1.0 / (1.0 + (1.0 / 2f64.sqrt()).exp());
        let expected = [1.0, 0.5, 1.0, 1.0 - w];
        for (a, b) in g.value(y).iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{:?}", g.value(y));
        }
    }

    #[test]
    fn causal_mask_hides_future_tokens() {
        let mut rng = SplitMix64::new(8);
        let mha = MultiHeadAttention::new("a", 4, 2, None, &mut rng).unwrap();
        let base = rng.normal_vec(12, 1.0);
        let mut changed = base.clone();
        changed[8..].iter_mut().for_each(|v| *v += 3.0);
        let run = |data: Vec<f64>| {
            let mut g = Graph::new();
            let x = g.constant(&Tensor::new(vec![3, 4], data).unwrap());
            let y = mha.forward(&mut g, x, true).unwrap();
            g.value(y).to_vec()
        };
        let (a, b) = (run(base), run(changed));
        assert_eq!(a[..8], b[..8]);
        assert_ne!(a[8..], b[8..]);
    }

    #[test]
    fn heads_must_divide_width() {
        let mut rng = SplitMix64::new(0);
        assert!(matches!(
            MultiHeadAttention::new("a", 6, 4, None, &mut rng),
            Err(Error::Config(_))
        ));
    }
}
