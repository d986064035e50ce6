//! Scaled dot-product attention, masked heads, and the multi-head layer
//! whose first `N` heads are guided by role masks.
//!
//! A head's scores are `(Q Kᵀ + M) / sqrt(d_k)` with `M` the head's additive
//! mask. Guided heads use their role mask combined with padding; the
//! remaining regular heads use the padding mask alone.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::masks::{MaskRole, RoleMask};
use crate::numerics::{NumericsError, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttentionError {
    #[error("d_model {d_model} is not divisible by {heads} heads")]
    IndivisibleWidth { d_model: usize, heads: usize },
    #[error("{guided} guided heads exceed {heads} total heads")]
    TooManyGuided { guided: usize, heads: usize },
    #[error("role {0} is assigned to more than one head")]
    DuplicateRole(MaskRole),
    #[error("at least one head is required")]
    NoHeads,
    #[error("no mask supplied for role {0}")]
    MissingMask(MaskRole),
    #[error("mask is {mask}×{mask} but the sequence has {n} positions")]
    MaskShape { mask: usize, n: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, AttentionError>;

/// Head layout of one multi-head layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadConfig {
    pub d_model: usize,
    pub heads: usize,
    /// Roles of heads `0..N`; the rest are regular heads.
    pub guided: Vec<MaskRole>,
}

impl HeadConfig {
    pub fn new(d_model: usize, heads: usize, guided: Vec<MaskRole>) -> Result<Self> {
        let cfg = Self {
            d_model,
            heads,
            guided,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Padding may fill several guided slots (ablated heads); any other
    /// role appears at most once.
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(AttentionError::NoHeads);
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(AttentionError::IndivisibleWidth {
                d_model: self.d_model,
                heads: self.heads,
            });
        }
        if self.guided.len() > self.heads {
            return Err(AttentionError::TooManyGuided {
                guided: self.guided.len(),
                heads: self.heads,
            });
        }
        let mut seen = BTreeSet::new();
        for &r in &self.guided {
            if r != MaskRole::Padding && !seen.insert(r) {
                return Err(AttentionError::DuplicateRole(r));
            }
        }
        Ok(())
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn guided_count(&self) -> usize {
        self.guided.len()
    }

    /// Mask role seen by head `h`.
    pub fn head_role(&self, h: usize) -> MaskRole {
        self.guided.get(h).copied().unwrap_or(MaskRole::Padding)
    }
}

/// Per-head projections `d_model × d_k` and the output projection
/// `(H · d_k) × d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub w_q: Vec<Tensor>,
    pub w_k: Vec<Tensor>,
    pub w_v: Vec<Tensor>,
    pub w_o: Tensor,
}

impl HeadWeights {
    /// Uniform Xavier initialization.
    pub fn random(cfg: &HeadConfig, rng: &mut impl Rng) -> Self {
        let d_k = cfg.d_k();
        let mut proj = || xavier(cfg.d_model, d_k, rng);
        let w_q = (0..cfg.heads).map(|_| proj()).collect();
        let w_k = (0..cfg.heads).map(|_| proj()).collect();
        let w_v = (0..cfg.heads).map(|_| proj()).collect();
        let w_o = xavier(cfg.heads * d_k, cfg.d_model, rng);
        Self { w_q, w_k, w_v, w_o }
    }
}

pub(crate) fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
}

/// [`HeadWeights`] recorded on a tape.
#[derive(Debug, Clone)]
pub struct HeadVars {
    pub w_q: Vec<Var>,
    pub w_k: Vec<Var>,
    pub w_v: Vec<Var>,
    pub w_o: Var,
}

impl HeadVars {
    pub fn constants(tape: &mut Tape, w: &HeadWeights) -> Self {
        Self {
            w_q: w.w_q.iter().map(|t| tape.constant(t.clone())).collect(),
            w_k: w.w_k.iter().map(|t| tape.constant(t.clone())).collect(),
            w_v: w.w_v.iter().map(|t| tape.constant(t.clone())).collect(),
            w_o: tape.constant(w.w_o.clone()),
        }
    }
}

/// Source of dropout keep-masks. Rate 0 disables dropout entirely.
#[derive(Debug)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let shape = tape.value(x).shape().to_vec();
        let keep = 1.0 / (1.0 - self.rate);
        let data = (0..shape.iter().product::<usize>())
            .map(|_| {
                if self.rng.gen::<f64>() < self.rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        Ok(tape.mul_const(x, Tensor::new(shape, data)?)?)
    }
}

/// Output and weights of one head on the tape.
#[derive(Debug, Clone, Copy)]
pub struct HeadVarsOut {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub output: Var,
    pub weights: Var,
}

/// One head: `softmax((Q Kᵀ + M) / sqrt(d_k)) V`, with `M` omitted when
/// `mask` is `None`.
pub fn attend(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Tensor>,
    dropout: Option<&mut Dropout>,
) -> Result<HeadVarsOut> {
    let d_k = tape.value(q).shape().get(1).copied().unwrap_or(0);
    if tape.value(k).shape() != tape.value(q).shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "attention",
            left: tape.value(q).shape().to_vec(),
            right: tape.value(k).shape().to_vec(),
        }
        .into());
    }
    let kt = tape.transpose(k)?;
    let mut scores = tape.matmul(q, kt)?;
    if let Some(m) = mask {
        let n = tape.value(scores).rows();
        if m.shape() != [n, n] {
            return Err(AttentionError::MaskShape {
                mask: m.shape().first().copied().unwrap_or(0),
                n,
            });
        }
        scores = tape.add_const(scores, m)?;
    }
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
    let weights = tape.softmax_rows(scaled)?;
    let mixed = match dropout {
        Some(d) => d.apply(tape, weights)?,
        None => weights,
    };
    let output = tape.matmul(mixed, v)?;
    Ok(HeadVarsOut {
        q,
        k,
        v,
        output,
        weights,
    })
}

/// Result of a standalone attention evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub output: Tensor,
    pub weights: Tensor,
}

fn run_head(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&Tensor>) -> Result<AttentionOutput> {
    let mut tape = Tape::new();
    let (qv, kv, vv) = (
        tape.constant(q.clone()),
        tape.constant(k.clone()),
        tape.constant(v.clone()),
    );
    let out = attend(&mut tape, qv, kv, vv, mask, None)?;
    Ok(AttentionOutput {
        output: tape.value(out.output).clone(),
        weights: tape.value(out.weights).clone(),
    })
}

/// `softmax(Q Kᵀ / sqrt(d_k)) V`.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<AttentionOutput> {
    run_head(q, k, v, None)
}

/// `softmax((Q Kᵀ + M) / sqrt(d_k)) V`. Every row of `m` must have an open
/// entry; otherwise a degenerate-row error is returned.
pub fn masked_attention(q: &Tensor, k: &Tensor, v: &Tensor, m: &RoleMask) -> Result<AttentionOutput> {
    run_head(q, k, v, Some(&m.to_tensor()))
}

/// Per-head results of a multi-head layer on the tape.
#[derive(Debug, Clone)]
pub struct MultiHeadVars {
    pub output: Var,
    pub heads: Vec<HeadVarsOut>,
}

/// Multi-head self-attention over `x` (`n × d_model`). `masks` must hold
/// the padding mask under [`MaskRole::Padding`] and a padding-combined mask
/// for every guided role.
pub fn multi_head_on_tape(
    tape: &mut Tape,
    x: Var,
    w: &HeadVars,
    cfg: &HeadConfig,
    masks: &BTreeMap<MaskRole, RoleMask>,
    mut dropout: Option<&mut Dropout>,
) -> Result<MultiHeadVars> {
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let role = cfg.head_role(h);
        let mask = masks.get(&role).ok_or(AttentionError::MissingMask(role))?;
        let q = tape.matmul(x, w.w_q[h])?;
        let k = tape.matmul(x, w.w_k[h])?;
        let v = tape.matmul(x, w.w_v[h])?;
        let out = attend(tape, q, k, v, Some(&mask.to_tensor()), dropout.as_deref_mut())?;
        heads.push(out);
    }
    let outputs: Vec<Var> = heads.iter().map(|h| h.output).collect();
    let concat = tape.concat_cols(&outputs)?;
    let output = tape.matmul(concat, w.w_o)?;
    Ok(MultiHeadVars { output, heads })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadOutput {
    pub output: Tensor,
    pub head_outputs: Vec<Tensor>,
    pub weights: Vec<Tensor>,
}

/// Standalone multi-head evaluation: guided heads use `role_masks`, the
/// rest use `pad`.
pub fn multi_head(
    x: &Tensor,
    w: &HeadWeights,
    cfg: &HeadConfig,
    role_masks: &BTreeMap<MaskRole, RoleMask>,
    pad: &RoleMask,
) -> Result<MultiHeadOutput> {
    cfg.validate()?;
    let mut masks = role_masks.clone();
    masks.insert(MaskRole::Padding, pad.clone());
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = HeadVars::constants(&mut tape, w);
    let out = multi_head_on_tape(&mut tape, xv, &vars, cfg, &masks, None)?;
    Ok(MultiHeadOutput {
        output: tape.value(out.output).clone(),
        head_outputs: out.heads.iter().map(|h| tape.value(h.output).clone()).collect(),
        weights: out.heads.iter().map(|h| tape.value(h.weights).clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::{padding_mask, relative_position_mask};
    use crate::numerics::matmul;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn head_config_validation() {
        assert!(HeadConfig::new(12, 6, MaskRole::GUIDED.to_vec()).is_ok());
        assert_eq!(
            HeadConfig::new(10, 4, vec![]),
            Err(AttentionError::IndivisibleWidth { d_model: 10, heads: 4 })
        );
        assert!(matches!(
            HeadConfig::new(4, 2, MaskRole::GUIDED.to_vec()),
            Err(AttentionError::TooManyGuided { .. })
        ));
        assert_eq!(
            HeadConfig::new(8, 2, vec![MaskRole::Separator, MaskRole::Separator]),
            Err(AttentionError::DuplicateRole(MaskRole::Separator))
        );
        assert!(HeadConfig::new(8, 2, vec![MaskRole::Padding, MaskRole::Padding]).is_ok());
    }

    #[test]
    fn orthogonal_keys_pick_matching_query() {
        let eye = Tensor::from_rows(&[vec![4.0, 0.0, 0.0], vec![0.0, 4.0, 0.0], vec![0.0, 0.0, 4.0]]);
        let v = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
        let out = scaled_dot_attention(&eye, &eye, &v).unwrap();
        for i in 0..3 {
            let row = out.weights.row(i);
            let best = (0..3).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(best, i);
        }
    }

    #[test]
    fn single_position() {
        let q = Tensor::from_rows(&[vec![0.3, -0.2]]);
        let v = Tensor::from_rows(&[vec![5.0, 6.0, 7.0]]);
        let out = scaled_dot_attention(&q, &q, &v).unwrap();
        assert_eq!(out.weights.data(), &[1.0]);
        assert_eq!(out.output, v);
    }

    #[test]
    fn mismatched_dims_rejected() {
        let q = Tensor::zeros(&[2, 3]);
        let k = Tensor::zeros(&[2, 2]);
        assert!(scaled_dot_attention(&q, &k, &q).is_err());
        let m = relative_position_mask(3);
        assert!(matches!(
            masked_attention(&q, &q, &q, &m),
            Err(AttentionError::MaskShape { .. })
        ));
    }

    #[test]
    fn zero_mask_matches_unmasked_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (q, k, v) = (random(&mut rng, 4, 3), random(&mut rng, 4, 3), random(&mut rng, 4, 2));
        let a = scaled_dot_attention(&q, &k, &v).unwrap();
        let b = masked_attention(&q, &k, &v, &RoleMask::open(MaskRole::Padding, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_open_column_copies_value_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (q, k, v) = (random(&mut rng, 3, 2), random(&mut rng, 3, 2), random(&mut rng, 3, 4));
        let mut m = RoleMask::masked(MaskRole::RareWords, 3);
        for i in 0..3 {
            m.allow(i, 1);
        }
        let out = masked_attention(&q, &k, &v, &m).unwrap();
        for i in 0..3 {
            assert_eq!(out.output.row(i), v.row(1));
        }
    }

    #[test]
    fn infeasible_mask_is_degenerate() {
        let q = Tensor::zeros(&[2, 2]);
        let m = RoleMask::masked(MaskRole::Separator, 2);
        assert!(matches!(
            masked_attention(&q, &q, &q, &m),
            Err(AttentionError::Numerics(NumericsError::DegenerateRow { row: 0 }))
        ));
    }

    #[test]
    fn single_guided_head_with_open_mask_is_eq1_then_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = HeadConfig::new(4, 1, vec![MaskRole::Padding]).unwrap();
        let w = HeadWeights::random(&cfg, &mut rng);
        let x = random(&mut rng, 3, 4);
        let pad = padding_mask(3, 3).unwrap();
        let out = multi_head(&x, &w, &cfg, &BTreeMap::new(), &pad).unwrap();
        let q = matmul(&x, &w.w_q[0]).unwrap();
        let k = matmul(&x, &w.w_k[0]).unwrap();
        let v = matmul(&x, &w.w_v[0]).unwrap();
        let head = scaled_dot_attention(&q, &k, &v).unwrap();
        assert_eq!(out.output, matmul(&head.output, &w.w_o).unwrap());
    }

    #[test]
    fn missing_role_mask_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = HeadConfig::new(4, 2, vec![MaskRole::Separator]).unwrap();
        let w = HeadWeights::random(&cfg, &mut rng);
        let x = random(&mut rng, 2, 4);
        let err = multi_head(&x, &w, &cfg, &BTreeMap::new(), &padding_mask(2, 2).unwrap());
        assert_eq!(err, Err(AttentionError::MissingMask(MaskRole::Separator)));
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 2], 1.0));
        let mut d = Dropout::new(0.0, 0);
        assert_eq!(d.apply(&mut tape, x).unwrap(), x);
        let mut d = Dropout::new(0.5, 0);
        let y = d.apply(&mut tape, x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
