//! Seeded finite-difference suites over every differentiable component.
//!
//! Each case builds a small randomized instance, reduces its output to a
//! scalar through fixed random weights, and runs [`gradcheck`] over all
//! trainable parameters and the input. Every parameter is jittered first, so
//! LoRA `B` matrices, layer-norm gains and biases sit away from their
//! special initial values.
//!
//! A suite passes on the resolved error (see [`crate::tensor::gradcheck::resolved_error`]): tiny
//! gradient components sit below what a central difference at `h = 1e-6` can
//! measure in f64, so the plain relative error is reported but not gated on.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusion::{
    AgpConfig, AttentiveGatedProjector, ClassifierHead, CrossViewFusion, FeedForward, FusionConfig, LayerNorm, Linear,
    LoraLinear, MultiHeadAttention,
};
use crate::lm::{DecoderBlock, LmConfig, TinyDecoder};
use crate::rng::SplitMix64;
use crate::tensor::gradcheck::{gradcheck, GradcheckReport, ParamList};
use crate::tensor::{Graph, Module, Param, Tensor, Var};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;
/// Random instances per case.
pub const SEEDS_PER_CASE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    All,
    Ops,
    Fusion,
    Agp,
    Lm,
}

impl Suite {
    fn includes(self, group: Suite) -> bool {
        self == Suite::All || self == group
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Suite::All),
            "ops" => Ok(Suite::Ops),
            "fusion" => Ok(Suite::Fusion),
            "agp" => Ok(Suite::Agp),
            "lm" => Ok(Suite::Lm),
            other => Err(Error::Config(format!(
                "unknown gradcheck module `{other}` (expected all, ops, fusion, agp or lm)"
            ))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Suite::All => "all",
            Suite::Ops => "ops",
            Suite::Fusion => "fusion",
            Suite::Agp => "agp",
            Suite::Lm => "lm",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub case: String,
    pub seed: u64,
    pub max_relative_error: f64,
    pub max_resolved_error: f64,
    pub offending_param: String,
    pub components_checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub instances: usize,
    pub components_checked: usize,
    pub max_relative_error: f64,
    pub max_resolved_error: f64,
    /// Case with the largest resolved error.
    pub worst_case: String,
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_resolved_error < self.tolerance
    }
}

/// A module together with the input it is evaluated on, both checked.
struct WithInput<M> {
    module: M,
    input: Param,
}

impl<M: Module> Module for WithInput<M> {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.module.visit(f);
        f(&self.input);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.module.visit_mut(f);
        f(&mut self.input);
    }
}

fn random(shape: &[usize], rng: &mut SplitMix64, std: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), rng.normal_vec(n, std)).expect("shape matches")
}

/// Values bounded away from zero, for kinks and divisors.
fn away_from_zero(shape: &[usize], rng: &mut SplitMix64) -> Tensor {
    let mut t = random(shape, rng, 1.0);
    for v in t.data_mut() {
        *v = v.signum() * (v.abs() + 0.1);
    }
    t
}

fn jitter(module: &mut dyn Module, rng: &mut SplitMix64) {
    module.visit_mut(&mut |p| {
        for v in p.value.data_mut() {
            *v += 0.2 * rng.normal();
        }
    });
}

/// `sum(out ⊙ W)` for fixed random `W`, so no output direction cancels.
fn project(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights);
    let prod = g.mul(out, w)?;
    Ok(g.sum_all(prod))
}

type OpFn = fn(&mut Graph, &[Var]) -> Result<Var>;

struct OpCase {
    name: &'static str,
    inputs: &'static [&'static [usize]],
    /// Inputs must stay away from zero (kinks, divisors).
    nonzero: bool,
    f: OpFn,
}

const OP_CASES: &[OpCase] = &[
    OpCase {
        name: "matmul",
        inputs: &[&[3, 4], &[4, 2]],
        nonzero: false,
        f: |g, x| g.matmul(x[0], x[1]),
    },
    OpCase {
        name: "transpose",
        inputs: &[&[3, 4]],
        nonzero: false,
        f: |g, x| g.transpose(x[0]),
    },
    OpCase {
        name: "add",
        inputs: &[&[3, 4], &[3, 4]],
        nonzero: false,
        f: |g, x| g.add(x[0], x[1]),
    },
    OpCase {
        name: "add_broadcast",
        inputs: &[&[3, 4], &[4]],
        nonzero: false,
        f: |g, x| g.add(x[0], x[1]),
    },
    OpCase {
        name: "sub",
        inputs: &[&[3, 4], &[4]],
        nonzero: false,
        f: |g, x| g.sub(x[0], x[1]),
    },
    OpCase {
        name: "mul",
        inputs: &[&[2, 3, 4], &[4]],
        nonzero: false,
        f: |g, x| g.mul(x[0], x[1]),
    },
    OpCase {
        name: "div",
        inputs: &[&[3, 4], &[3, 4]],
        nonzero: true,
        f: |g, x| g.div(x[0], x[1]),
    },
    OpCase {
        name: "scale",
        inputs: &[&[5]],
        nonzero: false,
        f: |g, x| Ok(g.scale(x[0], -1.7)),
    },
    OpCase {
        name: "add_scalar",
        inputs: &[&[5]],
        nonzero: false,
        f: |g, x| Ok(g.add_scalar(x[0], 0.3)),
    },
    OpCase {
        name: "sigmoid",
        inputs: &[&[3, 4]],
        nonzero: false,
        f: |g, x| Ok(g.sigmoid(x[0])),
    },
    OpCase {
        name: "gelu",
        inputs: &[&[3, 4]],
        nonzero: false,
        f: |g, x| Ok(g.gelu(x[0])),
    },
    OpCase {
        name: "relu",
        inputs: &[&[3, 4]],
        nonzero: true,
        f: |g, x| Ok(g.relu(x[0])),
    },
    OpCase {
        name: "softplus",
        inputs: &[&[3, 4]],
        nonzero: false,
        f: |g, x| Ok(g.softplus(x[0])),
    },
    OpCase {
        name: "mean_axis0",
        inputs: &[&[3, 4]],
        nonzero: false,
        f: |g, x| g.mean_axis(x[0], 0),
    },
    OpCase {
        name: "mean_axis1",
        inputs: &[&[2, 3, 4]],
        nonzero: false,
        f: |g, x| g.mean_axis(x[0], 1),
    },
    OpCase {
        name: "sum_all",
        inputs: &[&[3, 4]],
        nonzero: false,
        f: |g, x| Ok(g.sum_all(x[0])),
    },
    OpCase {
        name: "mean_all",
        inputs: &[&[3, 4]],
        nonzero: false,
        f: |g, x| Ok(g.mean_all(x[0])),
    },
    OpCase {
        name: "concat_axis0",
        inputs: &[&[2, 4], &[3, 4]],
        nonzero: false,
        f: |g, x| g.concat(x, 0),
    },
    OpCase {
        name: "concat_axis1",
        inputs: &[&[3, 2], &[3, 3]],
        nonzero: false,
        f: |g, x| g.concat(x, 1),
    },
    OpCase {
        name: "slice",
        inputs: &[&[5, 3]],
        nonzero: false,
        f: |g, x| g.slice(x[0], 0, 1, 4),
    },
    OpCase {
        name: "reshape",
        inputs: &[&[3, 4]],
        nonzero: false,
        f: |g, x| g.reshape(x[0], &[2, 6]),
    },
    OpCase {
        name: "softmax",
        inputs: &[&[3, 4]],
        nonzero: false,
        f: |g, x| g.softmax_lastdim(x[0]),
    },
    OpCase {
        name: "causal_softmax",
        inputs: &[&[4, 4]],
        nonzero: false,
        f: |g, x| g.causal_softmax(x[0]),
    },
    OpCase {
        name: "layer_norm",
        inputs: &[&[3, 5], &[5], &[5]],
        nonzero: false,
        f: |g, x| g.layer_norm(x[0], x[1], x[2], 1e-5),
    },
    OpCase {
        name: "cross_entropy",
        inputs: &[&[3, 5]],
        nonzero: false,
        f: |g, x| g.cross_entropy(x[0], &[4, 0, 2]),
    },
    OpCase {
        name: "select_rows",
        inputs: &[&[4, 3]],
        nonzero: false,
        f: |g, x| g.select_rows(x[0], &[2, 0, 2, 3]),
    },
];

fn run_op(case: &OpCase, seed: u64) -> Result<GradcheckReport> {
    let mut rng = SplitMix64::new(seed);
    let params: Vec<Param> = case
        .inputs
        .iter()
        .enumerate()
        .map(|(i, shape)| {
            let t = if case.nonzero {
                away_from_zero(shape, &mut rng)
            } else {
                random(shape, &mut rng, 1.0)
            };
            Param::trainable(format!("{}.x{i}", case.name), t)
        })
        .collect();
    let mut list = ParamList(params);
    let probe = {
        let mut g = Graph::new();
        let xs: Vec<Var> = list.0.iter().map(|p| g.param(p)).collect();
        let out = (case.f)(&mut g, &xs)?;
        g.shape(out).to_vec()
    };
    let weights = random(&probe, &mut rng, 1.0);
    let f = case.f;
    gradcheck(
        &mut list,
        &|m: &ParamList, g: &mut Graph| {
            let xs: Vec<Var> = m.0.iter().map(|p| g.param(p)).collect();
            let out = f(g, &xs)?;
            project(g, out, &weights)
        },
        STEP,
        TOLERANCE,
    )
}

/// Checks `forward(module, input)` with the input treated as a parameter.
fn check_module<M: Module>(
    module: M,
    input_shape: &[usize],
    rng: &mut SplitMix64,
    forward: &dyn Fn(&M, &mut Graph, Var) -> Result<Var>,
) -> Result<GradcheckReport> {
    let mut wrapped = WithInput {
        module,
        input: Param::trainable("input", random(input_shape, rng, 1.0)),
    };
    jitter(&mut wrapped.module, rng);
    let out_shape = {
        let mut g = Graph::new();
        let x = g.param(&wrapped.input);
        let out = forward(&wrapped.module, &mut g, x)?;
        g.shape(out).to_vec()
    };
    let weights = random(&out_shape, rng, 1.0);
    gradcheck(
        &mut wrapped,
        &|m: &WithInput<M>, g: &mut Graph| {
            let x = g.param(&m.input);
            let out = forward(&m.module, g, x)?;
            project(g, out, &weights)
        },
        STEP,
        TOLERANCE,
    )
}

const D: usize = 8;

fn fusion_cfg(lora: bool) -> FusionConfig {
    FusionConfig {
        dim: D,
        heads: 2,
        max_views: 3,
        ffn_hidden: 12,
        lora,
        lora_rank: 2,
        lora_alpha: 4.0,
    }
}

fn lm_cfg() -> LmConfig {
    LmConfig {
        dim: D,
        heads: 2,
        layers: 2,
        ffn_hidden: 12,
        max_len: 5,
    }
}

type ModuleCase = (&'static str, Suite, fn(u64) -> Result<GradcheckReport>);

const MODULE_CASES: &[ModuleCase] = &[
    ("linear", Suite::Fusion, |seed| {
        let mut rng = SplitMix64::new(seed);
        let m = Linear::new("linear", 5, 3, &mut rng);
        check_module(m, &[4, 5], &mut rng, &|m, g, x| m.forward(g, x))
    }),
    ("lora_linear", Suite::Fusion, |seed| {
        let mut rng = SplitMix64::new(seed);
        let m = LoraLinear::new("lora", 5, 3, 2, 4.0, &mut rng);
        check_module(m, &[4, 5], &mut rng, &|m, g, x| m.forward(g, x))
    }),
    ("lora_linear_unfrozen", Suite::Fusion, |seed| {
        let mut rng = SplitMix64::new(seed);
        let mut m = LoraLinear::new("lora", 5, 3, 2, 4.0, &mut rng);
        m.base.set_trainable(true);
        check_module(m, &[2, 3, 5], &mut rng, &|m, g, x| m.forward(g, x))
    }),
    ("layer_norm", Suite::Fusion, |seed| {
        let mut rng = SplitMix64::new(seed);
        check_module(LayerNorm::new("ln", D), &[3, D], &mut rng, &|m, g, x| m.forward(g, x))
    }),
    ("feed_forward", Suite::Fusion, |seed| {
        let mut rng = SplitMix64::new(seed);
        let m = FeedForward::new("ffn", D, 12, &mut rng);
        check_module(m, &[3, D], &mut rng, &|m, g, x| m.forward(g, x))
    }),
    ("attention", Suite::Fusion, |seed| {
        let mut rng = SplitMix64::new(seed);
        let m = MultiHeadAttention::new("attn", D, 2, None, &mut rng)?;
        check_module(m, &[3, D], &mut rng, &|m, g, x| m.forward(g, x, false))
    }),
    ("attention_causal", Suite::Fusion, |seed| {
        let mut rng = SplitMix64::new(seed);
        let m = MultiHeadAttention::new("attn", D, 2, None, &mut rng)?;
        check_module(m, &[4, D], &mut rng, &|m, g, x| m.forward(g, x, true))
    }),
    ("attention_lora", Suite::Fusion, |seed| {
        let mut rng = SplitMix64::new(seed);
        let m = MultiHeadAttention::new("attn", D, 2, Some((2, 4.0)), &mut rng)?;
        check_module(m, &[3, D], &mut rng, &|m, g, x| m.forward(g, x, false))
    }),
    ("cross_view_fusion", Suite::Fusion, |seed| {
        let mut rng = SplitMix64::new(seed);
        let m = CrossViewFusion::new("fusion", &fusion_cfg(true), &mut rng)?;
        check_module(m, &[3, D], &mut rng, &|m, g, x| m.forward(g, x))
    }),
    ("cross_view_fusion_unfrozen", Suite::Fusion, |seed| {
        let mut rng = SplitMix64::new(seed);
        let m = CrossViewFusion::new("fusion", &fusion_cfg(false), &mut rng)?;
        check_module(m, &[2, D], &mut rng, &|m, g, x| m.forward(g, x))
    }),
    ("classifier_head", Suite::Fusion, |seed| {
        let mut rng = SplitMix64::new(seed);
        let m = ClassifierHead::new("head", D, &mut rng);
        check_module(m, &[D], &mut rng, &|m, g, x| m.forward(g, x))
    }),
    ("attentive_gated_projector", Suite::Agp, |seed| {
        let mut rng = SplitMix64::new(seed);
        let cfg = AgpConfig {
            d_vis: D,
            d_lm: D,
            heads: 2,
            ffn_hidden: 12,
            lora_rank: 2,
            lora_alpha: 4.0,
        };
        let m = AttentiveGatedProjector::new("agp", &cfg, &mut rng)?;
        check_module(m, &[2, 3, D], &mut rng, &|m, g, x| m.forward(g, x))
    }),
    ("decoder_block", Suite::Lm, |seed| {
        let mut rng = SplitMix64::new(seed);
        let m = DecoderBlock::new("block", &lm_cfg(), &mut rng)?;
        check_module(m, &[5, D], &mut rng, &|m, g, x| m.forward(g, x))
    }),
    ("decoder", Suite::Lm, |seed| {
        let mut rng = SplitMix64::new(seed);
        let mut m = TinyDecoder::new("lm", &lm_cfg(), 11, &mut rng)?;
        jitter(&mut m, &mut rng);
        let tokens: Vec<usize> = (0..5).map(|_| rng.below(11) as usize).collect();
        let targets: Vec<usize> = (0..5).map(|_| rng.below(11) as usize).collect();
        gradcheck(
            &mut m,
            &|m: &TinyDecoder, g: &mut Graph| {
                let table = g.param(&m.tok_emb);
                let emb = g.select_rows(table, &tokens)?;
                let logits = m.forward_embeddings(g, emb)?;
                g.cross_entropy(logits, &targets)
            },
            STEP,
            TOLERANCE,
        )
    }),
];

fn record(case: &str, seed: u64, r: GradcheckReport) -> CaseResult {
    CaseResult {
        case: case.to_string(),
        seed,
        max_relative_error: r.max_relative_error,
        max_resolved_error: r.max_resolved_error,
        offending_param: format!("{}[{}]", r.offending_param, r.offending_index),
        components_checked: r.components_checked,
    }
}

/// Runs every case in `suite` over [`SEEDS_PER_CASE`] seeds derived from `seed`.
pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    let mut cases = Vec::new();
    for k in 0..SEEDS_PER_CASE {
        if suite.includes(Suite::Ops) {
            for (i, op) in OP_CASES.iter().enumerate() {
                let s = SplitMix64::derive(seed, &[0, i as u64, k]).next_u64();
                cases.push(record(op.name, s, run_op(op, s)?));
            }
        }
        for (i, (name, group, run)) in MODULE_CASES.iter().enumerate() {
            if suite.includes(*group) {
                let s = SplitMix64::derive(seed, &[1, i as u64, k]).next_u64();
                cases.push(record(name, s, run(s)?));
            }
        }
    }
    let worst = cases
        .iter()
        .max_by(|a, b| a.max_resolved_error.total_cmp(&b.max_resolved_error))
        .expect("every suite has cases");
    Ok(SuiteReport {
        suite,
        instances: cases.len(),
        components_checked: cases.iter().map(|c| c.components_checked).sum(),
        max_relative_error: cases.iter().map(|c| c.max_relative_error).fold(0.0, f64::max),
        max_resolved_error: worst.max_resolved_error,
        worst_case: format!("{} (seed {})", worst.case, worst.seed),
        tolerance: TOLERANCE,
        cases,
    })
}
