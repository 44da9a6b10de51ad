//! Character-level causal decoder that reads video tokens spliced into its prompt.

mod decoder;
mod vocab;

pub use decoder::{DecoderBlock, LmConfig, TinyDecoder};
pub use vocab::{Vocab, BOS, EOS, PAD, VID, VID_MARKER};

use crate::error::{Error, Result};
use crate::fusion::argmax;
use crate::tensor::{Graph, Tensor, Var};

/// Token layout of one decoder input: `[BOS, prompt, response, EOS]`.
///
/// Prompt `<vid>` markers become [`VID`] slots that are filled with video
/// embeddings in order. `loss_mask[i]` is true when position `i` predicts a
/// response symbol or the closing EOS; prompt and video positions are never
/// trained. An empty response adds no EOS and leaves the mask all false.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequencePlan {
    pub tokens: Vec<usize>,
    pub video_slots: Vec<usize>,
    pub response_start: usize,
    pub loss_mask: Vec<bool>,
}

impl SequencePlan {
    pub fn new(prompt: &str, video_count: usize, response: &str, vocab: &Vocab, max_len: usize) -> Result<Self> {
        let mut tokens = vec![BOS];
        tokens.extend(vocab.tokenize(prompt)?);
        let video_slots: Vec<usize> = (0..tokens.len()).filter(|&i| tokens[i] == VID).collect();
        if video_slots.len() != video_count {
            return Err(Error::Contract(format!(
                "prompt has {} video markers for {video_count} video tokens",
                video_slots.len()
            )));
        }
        let response_start = tokens.len();
        let response_ids = vocab.tokenize(response)?;
        if response_ids.contains(&VID) {
            return Err(Error::Contract("response may not contain video markers".into()));
        }
        if !response_ids.is_empty() {
            tokens.extend(response_ids);
            tokens.push(EOS);
        }
        if tokens.len() > max_len {
            return Err(Error::Length(format!(
                "sequence of {} symbols exceeds the limit {max_len}",
                tokens.len()
            )));
        }
        let loss_mask = (0..tokens.len())
            .map(|i| i + 1 >= response_start && i + 1 < tokens.len())
            .collect();
        Ok(Self {
            tokens,
            video_slots,
            response_start,
            loss_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Positions whose next-symbol prediction is trained, with their targets.
    pub fn trained_positions(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.tokens.len())
            .filter(|&i| self.loss_mask[i])
            .map(|i| (i, self.tokens[i + 1]))
            .unzip()
    }
}

/// Input embeddings `[L, D]`: symbol rows from the embedding table, with
/// `video` rows (`[T, D]`) substituted at the video slots one-for-one.
pub fn assemble_sequence(g: &mut Graph, model: &TinyDecoder, plan: &SequencePlan, video: Option<Var>) -> Result<Var> {
    let table = g.param(&model.tok_emb);
    let vocab = model.vocab_size();
    let t = plan.video_slots.len();
    let table = match video {
        Some(v) => {
            let shape = g.shape(v);
            if shape != [t, model.dim()] {
                return Err(Error::Contract(format!(
                    "plan has {t} video slots but video tokens have shape {shape:?}"
                )));
            }
            g.concat(&[table, v], 0)?
        }
        None if t == 0 => table,
        None => return Err(Error::Contract(format!("plan has {t} video slots but no video tokens"))),
    };
    let mut next_video = vocab;
    let rows: Vec<usize> = plan
        .tokens
        .iter()
        .map(|&id| {
            if id == VID {
                next_video += 1;
                next_video - 1
            } else {
                id
            }
        })
        .collect();
    g.select_rows(table, &rows)
}

/// Next-symbol logits `[L, vocab]`.
pub fn lm_forward(g: &mut Graph, model: &TinyDecoder, plan: &SequencePlan, video: Option<Var>) -> Result<Var> {
    let emb = assemble_sequence(g, model, plan, video)?;
    model.forward_embeddings(g, emb)
}

/// Mean cross-entropy over the masked-in positions.
pub fn lm_loss(g: &mut Graph, logits: Var, plan: &SequencePlan) -> Result<Var> {
    let (rows, targets) = plan.trained_positions();
    if rows.is_empty() {
        return Err(Error::Contract("loss mask selects no positions".into()));
    }
    let picked = g.select_rows(logits, &rows)?;
    g.cross_entropy(picked, &targets)
}

/// Greedy decoding until EOS or `max_new` symbols; ties go to the lowest id.
pub fn generate_greedy(
    model: &TinyDecoder,
    vocab: &Vocab,
    prompt: &str,
    video: Option<&Tensor>,
    max_new: usize,
) -> Result<String> {
    let t = video.map_or(0, |v| v.shape()[0]);
    let mut plan = SequencePlan::new(prompt, t, "", vocab, model.max_len())?;
    if plan.len() + max_new > model.max_len() {
        return Err(Error::Length(format!(
            "prefix of {} plus {max_new} new symbols exceeds the limit {}",
            plan.len(),
            model.max_len()
        )));
    }
    let mut generated = Vec::new();
    for _ in 0..max_new {
        let mut g = Graph::new();
        let v = video.map(|v| g.constant(v));
        let logits = lm_forward(&mut g, model, &plan, v)?;
        let last = plan.len() - 1;
        let row = &g.value(logits)[last * model.vocab_size()..(last + 1) * model.vocab_size()];
        let next = argmax(row);
        if next == EOS {
            break;
        }
        generated.push(next);
        plan.tokens.push(next);
        plan.loss_mask.push(false);
    }
    Ok(vocab.detokenize(&generated))
}
