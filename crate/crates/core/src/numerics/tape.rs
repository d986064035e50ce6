use super::{
    add, add_row, layer_norm_with_cache, matmul, mul, softmax_rows, transpose,
    LayerNormCache, NumericsError, Result, Tensor,
};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    AddConst(Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Softmax(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        cache: LayerNormCache,
    },
    ConcatCols(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    MeanRows {
        x: Var,
        count: usize,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::MulConst(..) => "mul_const",
            Op::AddConst(..) => "add_const",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Softmax(..) => "softmax_rows",
            Op::Relu(..) => "relu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::ConcatCols(..) => "concat_cols",
            Op::Gather { .. } => "gather_rows",
            Op::MeanRows { .. } => "mean_rows",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(..) => "sum",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// Some leaf that requires a gradient is upstream of this node.
    tracked: bool,
    /// `-inf` entries here come from a deliberately applied mask.
    masked: bool,
}

/// Location of the first tensor on the tape holding an unexpected
/// non-finite value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NonFinite {
    pub node: usize,
    pub op: &'static str,
    pub shape: Vec<usize>,
}

/// A single-use record of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        let masked = match &op {
            Op::AddConst(_) => value.data().contains(&f64::NEG_INFINITY),
            Op::Scale(x, _) | Op::Transpose(x) => self.nodes[x.0].masked,
            _ => false,
        };
        self.nodes.push(Node {
            value,
            op,
            tracked,
            masked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor whose gradient will be reported by [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: true,
            masked: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor that takes no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: false,
            masked: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Broadcasts the `1 × cols` tensor `row` over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = add_row(self.value(a), self.value(row))?;
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = mul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Elementwise product with a fixed tensor (dropout keep-masks).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let out = mul(self.value(a), &c)?;
        Ok(self.push(out, Op::MulConst(a, c), &[a]))
    }

    /// Adds a fixed tensor. Used for additive attention masks and position
    /// encodings; `-inf` entries are allowed.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let out = add(self.value(a), c)?;
        Ok(self.push(out, Op::AddConst(a), &[a]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|v| v * factor);
        self.push(out, Op::Scale(a, factor), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = transpose(self.value(a))?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = softmax_rows(self.value(a))?;
        Ok(self.push(out, Op::Softmax(a), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (out, cache) =
            layer_norm_with_cache(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                cache,
            },
            &[x, gain, bias],
        ))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]);
        let rows = first.dims2("concat_cols")?.0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat_cols")?;
            if r != rows {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_cols",
                    left: first.shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            total += c;
        }
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            let c = t.cols();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + c].copy_from_slice(t.row(r));
            }
            offset += c;
        }
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = t.dims2("gather_rows")?;
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(NumericsError::IndexOutOfRange {
                    index: id,
                    len: rows,
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(vec![ids.len(), cols], data)?;
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Mean of the first `count` rows, as a `1 × cols` tensor.
    pub fn mean_rows(&mut self, x: Var, count: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.dims2("mean_rows")?;
        if count == 0 || count > rows {
            return Err(NumericsError::IndexOutOfRange {
                index: count,
                len: rows,
            });
        }
        let mut data = vec![0.0; cols];
        for r in 0..count {
            for (d, v) in data.iter_mut().zip(t.row(r)) {
                *d += v;
            }
        }
        for d in &mut data {
            *d /= count as f64;
        }
        let out = Tensor::new(vec![1, cols], data)?;
        Ok(self.push(out, Op::MeanRows { x, count }, &[x]))
    }

    /// Negative log-likelihood of `target` under softmax of a single row of
    /// logits. Returns a scalar.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        if target >= t.len() {
            return Err(NumericsError::IndexOutOfRange {
                index: target,
                len: t.len(),
            });
        }
        let max = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = t.data().iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let loss = z.ln() + max - t.data()[target];
        let probs = exps.into_iter().map(|e| e / z).collect();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// First recorded value holding NaN, `+inf`, or a `-inf` that did not
    /// originate from an additive mask.
    pub fn first_non_finite(&self) -> Option<NonFinite> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            let bad = n.value.data().iter().any(|v| {
                v.is_nan() || *v == f64::INFINITY || (*v == f64::NEG_INFINITY && !n.masked)
            });
            bad.then(|| NonFinite {
                node: i,
                op: n.op.name(),
                shape: n.value.shape().to_vec(),
            })
        })
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(NumericsError::NotScalar {
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].tracked {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[row.0].tracked {
                    let cols = g.cols();
                    let mut gr = vec![0.0; cols];
                    for chunk in g.data().chunks(cols) {
                        for (s, v) in gr.iter_mut().zip(chunk) {
                            *s += v;
                        }
                    }
                    let shape = self.value(*row).shape().to_vec();
                    self.accumulate(grads, *row, Tensor::new(shape, gr)?);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, g.zip_map(vb, |x, y| x * y));
                self.accumulate(grads, *b, g.zip_map(va, |x, y| x * y));
            }
            Op::MulConst(a, c) => {
                self.accumulate(grads, *a, g.zip_map(c, |x, y| x * y));
            }
            Op::AddConst(a) => self.accumulate(grads, *a, g.clone()),
            Op::Scale(a, factor) => self.accumulate(grads, *a, g.map(|v| v * factor)),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].tracked {
                    self.accumulate(grads, *a, matmul(g, &transpose(vb)?)?);
                }
                if self.nodes[b.0].tracked {
                    self.accumulate(grads, *b, matmul(&transpose(va)?, g)?);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, transpose(g)?),
            Op::Softmax(a) => {
                let y = &node.value;
                let cols = y.cols();
                let mut out = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for c in 0..cols {
                        out[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(y.shape().to_vec(), out)?);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                cache,
            } => {
                let gain_v = self.value(*gain);
                let (rows, cols) = (g.rows(), g.cols());
                let xhat = &cache.normalized;
                let mut dgain = vec![0.0; cols];
                let mut dbias = vec![0.0; cols];
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let gr = g.row(r);
                    let xr = xhat.row(r);
                    let dxhat: Vec<f64> = gr.iter().zip(gain_v.data()).map(|(a, b)| a * b).collect();
                    let sum_d: f64 = dxhat.iter().sum();
                    let sum_dx: f64 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum();
                    let scale = cache.inv_std[r] / cols as f64;
                    for c in 0..cols {
                        dgain[c] += gr[c] * xr[c];
                        dbias[c] += gr[c];
                        dx[r * cols + c] =
                            scale * (cols as f64 * dxhat[c] - sum_d - xr[c] * sum_dx);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
                let gshape = gain_v.shape().to_vec();
                self.accumulate(grads, *gain, Tensor::new(gshape, dgain)?);
                let bshape = self.value(*bias).shape().to_vec();
                self.accumulate(grads, *bias, Tensor::new(bshape, dbias)?);
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.nodes[p.0].tracked {
                        let mut part = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            part.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        self.accumulate(grads, p, Tensor::new(vec![rows, c], part)?);
                    }
                    offset += c;
                }
            }
            Op::Gather { table, ids } => {
                let t = self.value(*table);
                let cols = t.cols();
                let mut gt = Tensor::zeros(t.shape());
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut gt.data_mut()[id * cols..(id + 1) * cols];
                    for (d, v) in dst.iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::MeanRows { x, count } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut gx = Tensor::zeros(xv.shape());
                for r in 0..*count {
                    for c in 0..cols {
                        gx.data_mut()[r * cols + c] = g.data()[c] / *count as f64;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                let upstream = g.item();
                let mut gl = probs.clone();
                gl[*target] -= 1.0;
                for v in &mut gl {
                    *v *= upstream;
                }
                let shape = self.value(*logits).shape().to_vec();
                self.accumulate(grads, *logits, Tensor::new(shape, gl)?);
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, g.item()));
            }
        }
        Ok(())
    }
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled when unreachable from the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}
