//! Dense row-major `f64` tensors, the forward kernels used by the encoder,
//! and a reverse-mode tape ([`Tape`]) that records them.
//!
//! Masked attention relies on `f64::NEG_INFINITY` entries surviving into
//! [`softmax_rows`], which maps them to exactly `0.0`.

mod tape;

pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {actual} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, actual: usize },
    #[error("{op} expects a 2-D tensor, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },
    #[error("softmax row {row} has no finite entry")]
    DegenerateRow { row: usize },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
}

pub type Result<T> = std::result::Result<T, NumericsError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(NumericsError::DataLength {
                shape,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// A 0-dimensional tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a `rows × cols` matrix, panicking on a length mismatch.
    /// Intended for literals in tests and fixtures.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix literal length");
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let cols = self.shape[1];
        self.data[i * cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            _ => Err(NumericsError::NotMatrix {
                op,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(NumericsError::ShapeMismatch {
            op,
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same("add", a, b)?;
    Ok(a.zip_map(b, |x, y| x + y))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same("mul", a, b)?;
    Ok(a.zip_map(b, |x, y| x * y))
}

/// Adds a `1 × cols` row vector to every row of `a`.
pub fn add_row(a: &Tensor, row: &Tensor) -> Result<Tensor> {
    let (_, cols) = a.dims2("add_row")?;
    if row.len() != cols {
        return Err(NumericsError::ShapeMismatch {
            op: "add_row",
            left: a.shape.clone(),
            right: row.shape.clone(),
        });
    }
    let mut out = a.clone();
    for chunk in out.data.chunks_mut(cols) {
        for (o, b) in chunk.iter_mut().zip(&row.data) {
            *o += b;
        }
    }
    Ok(out)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a.data[i * k + p];
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = a.dims2("transpose")?;
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data[i * c + j];
        }
    }
    Ok(Tensor {
        shape: vec![c, r],
        data: out,
    })
}

/// Row-wise softmax. `-inf` entries map to exactly `0.0`; the stabilizing
/// max is taken over finite entries only.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (rows, cols) = x.dims2("softmax_rows")?;
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &x.data[r * cols..(r + 1) * cols];
        let max = row
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(NumericsError::DegenerateRow { row: r });
        }
        let dst = &mut out[r * cols..(r + 1) * cols];
        let mut sum = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = if v == f64::NEG_INFINITY {
                0.0
            } else {
                (v - max).exp()
            };
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    Ok(Tensor {
        shape: vec![rows, cols],
        data: out,
    })
}

/// Per-row statistics retained by [`layer_norm`] for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_with_cache(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let (rows, cols) = x.dims2("layer_norm")?;
    if gain.len() != cols || bias.len() != cols {
        return Err(NumericsError::ShapeMismatch {
            op: "layer_norm",
            left: x.shape.clone(),
            right: gain.shape.clone(),
        });
    }
    let mut normalized = vec![0.0; rows * cols];
    let mut out = vec![0.0; rows * cols];
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x.data[r * cols..(r + 1) * cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        for c in 0..cols {
            let xhat = (row[c] - mean) * inv;
            normalized[r * cols + c] = xhat;
            out[r * cols + c] = xhat * gain.data[c] + bias.data[c];
        }
    }
    let shape = vec![rows, cols];
    Ok((
        Tensor {
            shape: shape.clone(),
            data: out,
        },
        LayerNormCache {
            normalized: Tensor {
                shape,
                data: normalized,
            },
            inv_std,
        },
    ))
}

/// Normalizes each row to zero mean and unit (population) variance, then
/// applies `gain` and `bias` along the last dimension.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_with_cache(x, gain, bias, eps).map(|(out, _)| out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::matrix(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(matmul(&eye, &b).unwrap(), b);
    }

    #[test]
    fn matmul_row_by_column() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0]]);
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 4, 3);
        let b = random(&mut rng, 3, 2);
        let got = matmul(&a, &b).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..3 {
                    s += a.get(i, p) * b.get(p, j);
                }
                assert!((got.get(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(
            matmul(&a, &b),
            Err(NumericsError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn softmax_examples() {
        let x = Tensor::from_rows(&[vec![0.0, 0.0]]);
        assert_eq!(softmax_rows(&x).unwrap().data(), &[0.5, 0.5]);

        let x = Tensor::from_rows(&[vec![5.0, f64::NEG_INFINITY]]);
        assert_eq!(softmax_rows(&x).unwrap().data(), &[1.0, 0.0]);

        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]);
        let got = softmax_rows(&x).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (g, v) in got.data().iter().zip([1.0f64, 2.0, 3.0]) {
            assert!((g - v.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_all_masked_row_is_an_error() {
        let x = Tensor::from_rows(&[
            vec![0.0, 1.0],
            vec![f64::NEG_INFINITY, f64::NEG_INFINITY],
        ]);
        assert_eq!(
            softmax_rows(&x),
            Err(NumericsError::DegenerateRow { row: 1 })
        );
    }

    #[test]
    fn layer_norm_constant_row_gives_bias() {
        let x = Tensor::from_rows(&[vec![2.0, 2.0, 2.0]]);
        let gain = Tensor::full(&[1, 3], 1.0);
        let bias = Tensor::from_rows(&[vec![0.1, 0.2, 0.3]]);
        let y = layer_norm(&x, &gain, &bias, 1e-5).unwrap();
        assert_eq!(y.data(), bias.data());
    }

    #[test]
    fn layer_norm_two_points() {
        let x = Tensor::from_rows(&[vec![1.0, 3.0]]);
        let y = layer_norm(&x, &Tensor::full(&[1, 2], 1.0), &Tensor::zeros(&[1, 2]), 1e-5).unwrap();
        let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.get(0, 0) + scale).abs() < 1e-12);
        assert!((y.get(0, 1) - scale).abs() < 1e-12);
        assert!((y.get(0, 1) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&mut rng, 3, 4);
        let y = layer_norm(&x, &Tensor::full(&[1, 4], 1.0), &Tensor::zeros(&[1, 4]), 1e-12).unwrap();
        for r in 0..3 {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn tensor_new_checks_length() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![], vec![1.0]).unwrap().is_scalar());
    }
}
