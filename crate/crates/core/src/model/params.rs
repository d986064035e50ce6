use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::attention::{xavier, HeadVars};
use crate::numerics::{Tape, Tensor, Var};

/// Named parameter tensors, ordered by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    tensors: BTreeMap<String, Tensor>,
}

pub(crate) fn layer_key(layer: usize, name: &str) -> String {
    format!("layer.{layer}.{name}")
}

pub(crate) fn head_key(layer: usize, proj: &str, head: usize) -> String {
    format!("layer.{layer}.attn.{proj}.{head}")
}

impl Params {
    /// Fresh parameters for `cfg` seeded by `cfg.seed`. Head projections are
    /// keyed by head index only, so configurations that differ only in
    /// head roles start from identical weights.
    pub fn init(cfg: &ModelConfig, vocab_size: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut p = Params::default();
        let d = cfg.d_model;
        let scale = 1.0 / (d as f64).sqrt();
        let emb = (0..vocab_size * d)
            .map(|_| rng.gen_range(-1.0..1.0) * scale)
            .collect();
        p.insert("embed.tokens", Tensor::matrix(vocab_size, d, emb));
        let heads = cfg.heads();
        let d_k = d.checked_div(heads).unwrap_or(0);
        for l in 0..cfg.layers {
            for proj in ["q", "k", "v"] {
                for h in 0..heads {
                    p.insert(head_key(l, proj, h), xavier(d, d_k, &mut rng));
                }
            }
            p.insert(layer_key(l, "attn.out"), xavier(heads * d_k, d, &mut rng));
            p.insert(layer_key(l, "norm1.gain"), Tensor::full(&[1, d], 1.0));
            p.insert(layer_key(l, "norm1.bias"), Tensor::zeros(&[1, d]));
            p.insert(layer_key(l, "ff.w1"), xavier(d, cfg.d_ff, &mut rng));
            p.insert(layer_key(l, "ff.b1"), Tensor::zeros(&[1, cfg.d_ff]));
            p.insert(layer_key(l, "ff.w2"), xavier(cfg.d_ff, d, &mut rng));
            p.insert(layer_key(l, "ff.b2"), Tensor::zeros(&[1, d]));
            p.insert(layer_key(l, "norm2.gain"), Tensor::full(&[1, d], 1.0));
            p.insert(layer_key(l, "norm2.bias"), Tensor::zeros(&[1, d]));
        }
        p.insert("classifier.w", xavier(d, cfg.num_classes, &mut rng));
        p.insert("classifier.b", Tensor::zeros(&[1, cfg.num_classes]));
        p
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Records every tensor on `tape`, as gradient-tracked leaves when
    /// `trainable` and as constants otherwise.
    pub fn record(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        ParamVars { vars }
    }
}

/// Parameters as recorded on one tape.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub(crate) fn head_vars(&self, layer: usize, heads: usize) -> Option<HeadVars> {
        let proj = |p: &str| -> Option<Vec<Var>> {
            (0..heads).map(|h| self.get(&head_key(layer, p, h))).collect()
        };
        Some(HeadVars {
            w_q: proj("q")?,
            w_k: proj("k")?,
            w_v: proj("v")?,
            w_o: self.get(&layer_key(layer, "attn.out"))?,
        })
    }
}
