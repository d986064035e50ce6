use std::collections::BTreeMap;

use super::params::{layer_key, ParamVars};
use super::{ModelConfig, ModelError, Params};
use crate::attention::{multi_head_on_tape, Dropout, HeadVarsOut};
use crate::corpus::{Batch, Example};
use crate::masks::{MaskRole, RoleMask};
use crate::numerics::{Tape, Tensor, Var};

const NORM_EPS: f64 = 1e-5;

/// Sinusoidal position encodings, `n × d`:
/// `PE[p][2i] = sin(p / 10000^(2i/d))`, `PE[p][2i+1] = cos(p / 10000^(2i/d))`.
pub fn positional_encoding(n: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; n * d];
    for p in 0..n {
        for c in 0..d {
            let pair = (c / 2) * 2;
            let angle = p as f64 / 10000f64.powf(pair as f64 / d as f64);
            data[p * d + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(n, d, data)
}

fn param(pv: &ParamVars, name: &str) -> Result<Var, ModelError> {
    pv.get(name)
        .ok_or_else(|| ModelError::MissingParameter(name.to_string()))
}

/// Token embedding plus position encoding for one example.
pub(crate) fn embed_on_tape(
    tape: &mut Tape,
    pv: &ParamVars,
    ids: &[usize],
    d_model: usize,
) -> Result<Var, ModelError> {
    let table = param(pv, "embed.tokens")?;
    let x = tape.gather_rows(table, ids)?;
    Ok(tape.add_const(x, &positional_encoding(ids.len(), d_model))?)
}

/// Attention weights of each head of each layer.
pub type AttentionTrace = Vec<Vec<HeadVarsOut>>;

/// `L` post-norm layers of guided multi-head attention and feed-forward.
pub(crate) fn encoder_on_tape(
    tape: &mut Tape,
    pv: &ParamVars,
    cfg: &ModelConfig,
    x: Var,
    masks: &BTreeMap<MaskRole, RoleMask>,
    mut dropout: Option<&mut Dropout>,
) -> Result<(Var, AttentionTrace), ModelError> {
    let heads = cfg.head_config();
    let mut x = x;
    let mut trace = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let hv = pv
            .head_vars(l, heads.heads)
            .ok_or_else(|| ModelError::MissingParameter(layer_key(l, "attn")))?;
        let attn = multi_head_on_tape(tape, x, &hv, &heads, masks, dropout.as_deref_mut())?;
        trace.push(attn.heads);
        let res = tape.add(x, attn.output)?;
        let n1 = tape.layer_norm(
            res,
            param(pv, &layer_key(l, "norm1.gain"))?,
            param(pv, &layer_key(l, "norm1.bias"))?,
            NORM_EPS,
        )?;
        let h = tape.matmul(n1, param(pv, &layer_key(l, "ff.w1"))?)?;
        let h = tape.add_row(h, param(pv, &layer_key(l, "ff.b1"))?)?;
        let h = tape.relu(h);
        let h = match dropout.as_deref_mut() {
            Some(d) => d.apply(tape, h)?,
            None => h,
        };
        let h = tape.matmul(h, param(pv, &layer_key(l, "ff.w2"))?)?;
        let h = tape.add_row(h, param(pv, &layer_key(l, "ff.b2"))?)?;
        let res = tape.add(n1, h)?;
        x = tape.layer_norm(
            res,
            param(pv, &layer_key(l, "norm2.gain"))?,
            param(pv, &layer_key(l, "norm2.bias"))?,
            NORM_EPS,
        )?;
    }
    Ok((x, trace))
}

/// Masked mean over the first `length` rows, then the affine classifier.
pub(crate) fn classify_on_tape(
    tape: &mut Tape,
    pv: &ParamVars,
    encoded: Var,
    length: usize,
) -> Result<Var, ModelError> {
    let pooled = tape.mean_rows(encoded, length)?;
    let logits = tape.matmul(pooled, param(pv, "classifier.w")?)?;
    Ok(tape.add_row(logits, param(pv, "classifier.b")?)?)
}

/// Recorded forward pass of one example.
pub struct ExampleVars {
    pub encoded: Var,
    pub logits: Var,
    pub trace: AttentionTrace,
}

pub fn example_on_tape(
    tape: &mut Tape,
    pv: &ParamVars,
    cfg: &ModelConfig,
    example: &Example,
    dropout: Option<&mut Dropout>,
) -> Result<ExampleVars, ModelError> {
    let x = embed_on_tape(tape, pv, &example.ids, cfg.d_model)?;
    let (enc, trace) = encoder_on_tape(tape, pv, cfg, x, &example.masks, dropout)?;
    let logits = classify_on_tape(tape, pv, enc, example.length)?;
    Ok(ExampleVars {
        encoded: enc,
        logits,
        trace,
    })
}

/// Records a batch and its mean cross-entropy. Returns the loss and each
/// example's logits.
pub(crate) fn batch_loss_on_tape(
    tape: &mut Tape,
    pv: &ParamVars,
    cfg: &ModelConfig,
    batch: &Batch,
    mut dropout: Option<&mut Dropout>,
) -> Result<(Var, Vec<Var>), ModelError> {
    let mut total: Option<Var> = None;
    let mut logits = Vec::with_capacity(batch.len());
    for ex in &batch.examples {
        let label = ex.label.ok_or_else(|| ModelError::MissingLabel(ex.sentence_id.clone()))?;
        let out = example_on_tape(tape, pv, cfg, ex, dropout.as_deref_mut())?;
        let ce = tape.cross_entropy(out.logits, label)?;
        total = Some(match total {
            Some(t) => tape.add(t, ce)?,
            None => ce,
        });
        logits.push(out.logits);
    }
    let total = total.ok_or(ModelError::EmptySplit("batch"))?;
    Ok((tape.scale(total, 1.0 / batch.len() as f64), logits))
}

/// Embeddings of every example in `batch`, each `max_len × d_model`.
pub fn embed(batch: &Batch, params: &Params, cfg: &ModelConfig) -> Result<Vec<Tensor>, ModelError> {
    let mut tape = Tape::new();
    let pv = params.record(&mut tape, false);
    batch
        .examples
        .iter()
        .map(|ex| {
            let v = embed_on_tape(&mut tape, &pv, &ex.ids, cfg.d_model)?;
            Ok(tape.value(v).clone())
        })
        .collect()
}

/// Runs the encoder stack over one `n × d_model` input.
pub fn encoder_forward(
    x: &Tensor,
    masks: &BTreeMap<MaskRole, RoleMask>,
    params: &Params,
    cfg: &ModelConfig,
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let pv = params.record(&mut tape, false);
    let xv = tape.constant(x.clone());
    let (out, _) = encoder_on_tape(&mut tape, &pv, cfg, xv, masks, None)?;
    Ok(tape.value(out).clone())
}

/// Class scores from an encoded `n × d_model` sequence whose first
/// `length` rows are real tokens.
pub fn classify(encoded: &Tensor, length: usize, params: &Params) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let pv = params.record(&mut tape, false);
    let e = tape.constant(encoded.clone());
    let out = classify_on_tape(&mut tape, &pv, e, length)?;
    Ok(tape.value(out).clone())
}

/// Dropout-free logits and per-layer, per-head attention weights for one
/// example.
pub fn forward_example(
    params: &Params,
    cfg: &ModelConfig,
    example: &Example,
) -> Result<(Tensor, Vec<Vec<Tensor>>), ModelError> {
    let mut tape = Tape::new();
    let pv = params.record(&mut tape, false);
    let out = example_on_tape(&mut tape, &pv, cfg, example, None)?;
    let weights = out
        .trace
        .iter()
        .map(|layer| layer.iter().map(|h| tape.value(h.weights).clone()).collect())
        .collect();
    Ok((tape.value(out.logits).clone(), weights))
}
