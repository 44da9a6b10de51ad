use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Graph, Module, Param, Tensor, Var};

/// Flattens any leading dimensions so `x` becomes `[rows, d]`.
fn as_rows(g: &mut Graph, x: Var, d_in: usize) -> Result<(Var, Vec<usize>)> {
    let shape = g.shape(x).to_vec();
    if shape.last() != Some(&d_in) {
        return Err(Error::dim(format!(
            "linear layer expects trailing dim {d_in}, got {shape:?}"
        )));
    }
    let rows = shape.iter().product::<usize>() / d_in;
    let flat = if shape.len() == 2 {
        x
    } else {
        g.reshape(x, &[rows, d_in])?
    };
    Ok((flat, shape))
}

fn restore(g: &mut Graph, y: Var, mut shape: Vec<usize>, d_out: usize) -> Result<Var> {
    let last = shape.len() - 1;
    shape[last] = d_out;
    if shape.len() == 2 {
        Ok(y)
    } else {
        g.reshape(y, &shape)
    }
}

/// `y = x Wᵀ + b` with `W: [d_out, d_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(prefix: &str, d_in: usize, d_out: usize, rng: &mut SplitMix64) -> Self {
        let std = 1.0 / (d_in as f64).sqrt();
        let w = Tensor::new(vec![d_out, d_in], rng.normal_vec(d_in * d_out, std)).expect("shape matches");
        Self {
            weight: Param::trainable(format!("{prefix}.weight"), w),
            bias: Param::trainable(format!("{prefix}.bias"), Tensor::zeros(&[d_out])),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn set_trainable(&mut self, flag: bool) {
        self.weight.value.requires_grad = flag;
        self.bias.value.requires_grad = flag;
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (flat, shape) = as_rows(g, x, self.d_in())?;
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        let wt = g.transpose(w)?;
        let xw = g.matmul(flat, wt)?;
        let y = g.add(xw, b)?;
        restore(g, y, shape, self.d_out())
    }
}

impl Module for Linear {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Frozen base layer plus a trainable low-rank correction `(alpha / r) · B A`.
///
/// `B` starts at zero, so a fresh adapter reproduces its base layer exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLinear {
    pub base: Linear,
    pub a: Param,
    pub b: Param,
    pub rank: usize,
    pub alpha: f64,
}

impl LoraLinear {
    pub fn new(prefix: &str, d_in: usize, d_out: usize, rank: usize, alpha: f64, rng: &mut SplitMix64) -> Self {
        let mut base = Linear::new(prefix, d_in, d_out, rng);
        base.set_trainable(false);
        Self::wrap(prefix, base, rank, alpha, rng)
    }

    /// Adapts an existing layer; the base is frozen.
    pub fn wrap(prefix: &str, mut base: Linear, rank: usize, alpha: f64, rng: &mut SplitMix64) -> Self {
        assert!(rank >= 1, "LoRA rank must be positive");
        base.set_trainable(false);
        let (d_in, d_out) = (base.d_in(), base.d_out());
        let a = Tensor::new(
            vec![rank, d_in],
            rng.normal_vec(rank * d_in, 1.0 / (d_in as f64).sqrt()),
        )
        .expect("shape matches");
        Self {
            base,
            a: Param::trainable(format!("{prefix}.A"), a),
            b: Param::trainable(format!("{prefix}.B"), Tensor::zeros(&[d_out, rank])),
            rank,
            alpha,
        }
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let d_in = self.base.d_in();
        let (flat, shape) = as_rows(g, x, d_in)?;
        let base = self.base.forward(g, flat)?;
        let a = g.param(&self.a);
        let b = g.param(&self.b);
        let at = g.transpose(a)?;
        let bt = g.transpose(b)?;
        let down = g.matmul(flat, at)?;
        let up = g.matmul(down, bt)?;
        let up = g.scale(up, self.scaling());
        let y = g.add(base, up)?;
        restore(g, y, shape, self.base.d_out())
    }

    /// `W0 + (alpha / r) · B A`, materialized.
    pub fn effective_weight(&self) -> Tensor {
        let (d_out, d_in) = (self.base.d_out(), self.base.d_in());
        let (a, b) = (self.a.value.data(), self.b.value.data());
        let s = self.scaling();
        let mut w = self.base.weight.value.data().to_vec();
        for o in 0..d_out {
            for i in 0..d_in {
                let mut acc = 0.0;
                for r in 0..self.rank {
                    acc += b[o * self.rank + r] * a[r * d_in + i];
                }
                w[o * d_in + i] += s * acc;
            }
        }
        Tensor::new(vec![d_out, d_in], w).expect("shape matches")
    }
}

impl Module for LoraLinear {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.base.visit(f);
        f(&self.a);
        f(&self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.base.visit_mut(f);
        f(&mut self.a);
        f(&mut self.b);
    }
}

/// A projection that is either a plain trainable layer or a LoRA-adapted one.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Projection {
    Plain(Linear),
    Lora(LoraLinear),
}

impl Projection {
    pub fn new(prefix: &str, d_in: usize, d_out: usize, lora: Option<(usize, f64)>, rng: &mut SplitMix64) -> Self {
        match lora {
            Some((rank, alpha)) => Projection::Lora(LoraLinear::new(prefix, d_in, d_out, rank, alpha, rng)),
            None => Projection::Plain(Linear::new(prefix, d_in, d_out, rng)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Projection::Plain(l) => l.forward(g, x),
            Projection::Lora(l) => l.forward(g, x),
        }
    }

    pub fn base(&self) -> &Linear {
        match self {
            Projection::Plain(l) => l,
            Projection::Lora(l) => &l.base,
        }
    }

    pub fn base_mut(&mut self) -> &mut Linear {
        match self {
            Projection::Plain(l) => l,
            Projection::Lora(l) => &mut l.base,
        }
    }
}

impl Module for Projection {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        match self {
            Projection::Plain(l) => l.visit(f),
            Projection::Lora(l) => l.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            Projection::Plain(l) => l.visit_mut(f),
            Projection::Lora(l) => l.visit_mut(f),
        }
    }
}
