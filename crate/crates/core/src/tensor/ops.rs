//! Differentiable operations: forward definitions and their vector-Jacobian products.

use super::kernels::{self, dot, gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{DptError, Result};

/// Operation recorded in a tensor's lineage, with what its backward needs.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    MatMul { m: usize, k: usize, n: usize },
    MatMulT { m: usize, k: usize, n: usize },
    Transpose { m: usize, n: usize },
    Add,
    AddRow,
    Mul,
    Scale(f32),
    Gelu,
    Softmax { temperature: f32 },
    LayerNorm { eps: f32 },
    CrossEntropy { targets: Vec<usize> },
    Cosine,
    L2Normalize,
    Sum,
    Mean,
    ConcatRows,
    SliceRows { start: usize },
    GatherRows { indices: Vec<usize> },
    SliceCols { start: usize },
    ConcatCols,
    Reshape,
}

fn rank2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(DptError::Shape(format!("{op} expects a matrix, got shape {s:?}"))),
    }
}

impl Tensor {
    /// Matrix product `self[m×k] · rhs[k×n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = rank2(self, "matmul")?;
        let (k2, n) = rank2(rhs, "matmul")?;
        if k != k2 {
            return Err(DptError::dim("matmul", self.shape(), rhs.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(&self.data(), &rhs.data(), &mut out, m, k, n);
        Ok(Tensor::from_op(out, vec![m, n], Op::MatMul { m, k, n }, vec![self.clone(), rhs.clone()]))
    }

    /// `self[m×k] · rhs[n×k]ᵀ` without materialising the transpose.
    pub fn matmul_t(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = rank2(self, "matmul_t")?;
        let (n, k2) = rank2(rhs, "matmul_t")?;
        if k != k2 {
            return Err(DptError::dim("matmul_t", self.shape(), rhs.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(&self.data(), &rhs.data(), &mut out, m, k, n);
        Ok(Tensor::from_op(out, vec![m, n], Op::MatMulT { m, k, n }, vec![self.clone(), rhs.clone()]))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = rank2(self, "transpose")?;
        let d = self.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        drop(d);
        Ok(Tensor::from_op(out, vec![n, m], Op::Transpose { m, n }, vec![self.clone()]))
    }

    fn zip_same(&self, rhs: &Tensor, op_name: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Vec<f32>> {
        if self.shape() != rhs.shape() {
            return Err(DptError::dim(op_name, self.shape(), rhs.shape()));
        }
        let (a, b) = (self.data(), rhs.data());
        Ok(a.iter().zip(b.iter()).map(|(x, y)| f(*x, *y)).collect())
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        let out = self.zip_same(rhs, "add", |x, y| x + y)?;
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::Add, vec![self.clone(), rhs.clone()]))
    }

    /// Adds a length-`n` vector to every last-axis slice.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let n = self.cols();
        if bias.numel() != n {
            return Err(DptError::dim("add_row", self.shape(), bias.shape()));
        }
        let b = bias.data();
        let mut out = self.to_vec();
        for row in out.chunks_mut(n) {
            row.iter_mut().zip(b.iter()).for_each(|(o, v)| *o += v);
        }
        drop(b);
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::AddRow, vec![self.clone(), bias.clone()]))
    }

    /// Elementwise product.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        let out = self.zip_same(rhs, "mul", |x, y| x * y)?;
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::Mul, vec![self.clone(), rhs.clone()]))
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        let out = self.data().iter().map(|v| v * factor).collect();
        Tensor::from_op(out, self.shape().to_vec(), Op::Scale(factor), vec![self.clone()])
    }

    pub fn gelu(&self) -> Tensor {
        let out = self.data().iter().map(|&v| kernels::gelu(v)).collect();
        Tensor::from_op(out, self.shape().to_vec(), Op::Gelu, vec![self.clone()])
    }

    /// Softmax of `self / temperature` along the last axis.
    pub fn softmax(&self, temperature: f32) -> Result<Tensor> {
        if !(temperature > 0.0) {
            return Err(DptError::Parameter(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let n = self.cols();
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for (src, dst) in x.chunks(n).zip(out.chunks_mut(n)) {
            kernels::softmax_row(src, temperature, dst);
        }
        drop(x);
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::Softmax { temperature }, vec![self.clone()]))
    }

    /// Per-slice normalisation over the last axis followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f32) -> Result<Tensor> {
        let d = self.cols();
        if gain.numel() != d {
            return Err(DptError::dim("layer_norm", self.shape(), gain.shape()));
        }
        if bias.numel() != d {
            return Err(DptError::dim("layer_norm", self.shape(), bias.shape()));
        }
        let (x, g, b) = (self.data(), gain.data(), bias.data());
        let mut out = vec![0.0; x.len()];
        for (src, dst) in x.chunks(d).zip(out.chunks_mut(d)) {
            let (mean, rstd) = kernels::moments(src, eps);
            for j in 0..d {
                dst[j] = (src[j] - mean) * rstd * g[j] + b[j];
            }
        }
        drop((x, g, b));
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::LayerNorm { eps },
            vec![self.clone(), gain.clone(), bias.clone()],
        ))
    }

    /// Scales every last-axis slice to unit Euclidean norm.
    pub fn l2_normalize(&self) -> Result<Tensor> {
        let n = self.cols();
        let mut out = self.to_vec();
        for row in out.chunks_mut(n) {
            let norm = dot(row, row).sqrt();
            if !(norm > 0.0) {
                return Err(DptError::DegenerateVector("l2_normalize"));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::L2Normalize, vec![self.clone()]))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(vec![s], vec![1], Op::Sum, vec![self.clone()])
    }

    pub fn mean(&self) -> Tensor {
        let s: f32 = self.data().iter().sum();
        Tensor::from_op(vec![s / self.numel() as f32], vec![1], Op::Mean, vec![self.clone()])
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        let (m, n) = rank2(self, "slice_rows")?;
        if len == 0 || start + len > m {
            return Err(DptError::Shape(format!(
                "slice_rows {start}..{} out of range for {m} rows",
                start + len
            )));
        }
        let out = self.data()[start * n..(start + len) * n].to_vec();
        Ok(Tensor::from_op(out, vec![len, n], Op::SliceRows { start }, vec![self.clone()]))
    }

    /// Selected rows in the given order (repeats allowed).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (m, n) = rank2(self, "gather_rows")?;
        if indices.is_empty() {
            return Err(DptError::Shape("gather_rows with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(DptError::Shape(format!("gather_rows index {bad} >= {m}")));
        }
        let d = self.data();
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            out.extend_from_slice(&d[i * n..(i + 1) * n]);
        }
        drop(d);
        Ok(Tensor::from_op(
            out,
            vec![indices.len(), n],
            Op::GatherRows { indices: indices.to_vec() },
            vec![self.clone()],
        ))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (m, n) = rank2(self, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(DptError::Shape(format!(
                "slice_cols {start}..{} out of range for {n} columns",
                start + len
            )));
        }
        let d = self.data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&d[i * n + start..i * n + start + len]);
        }
        drop(d);
        Ok(Tensor::from_op(out, vec![m, len], Op::SliceCols { start }, vec![self.clone()]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        super::check_shape(shape, self.numel())?;
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), Op::Reshape, vec![self.clone()]))
    }
}

/// Stacks matrices with equal column counts vertically.
pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| DptError::Shape("concat_rows of nothing".into()))?;
    let n = rank2(first, "concat_rows")?.1;
    let mut out = Vec::new();
    let mut rows = 0;
    for p in parts {
        let (m, c) = rank2(p, "concat_rows")?;
        if c != n {
            return Err(DptError::dim("concat_rows", first.shape(), p.shape()));
        }
        out.extend_from_slice(&p.data());
        rows += m;
    }
    Ok(Tensor::from_op(out, vec![rows, n], Op::ConcatRows, parts.to_vec()))
}

/// Joins matrices with equal row counts side by side.
pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| DptError::Shape("concat_cols of nothing".into()))?;
    let m = rank2(first, "concat_cols")?.0;
    let mut width = 0;
    for p in parts {
        let (r, c) = rank2(p, "concat_cols")?;
        if r != m {
            return Err(DptError::dim("concat_cols", first.shape(), p.shape()));
        }
        width += c;
    }
    let mut out = vec![0.0; m * width];
    let mut offset = 0;
    for p in parts {
        let c = p.cols();
        let d = p.data();
        for i in 0..m {
            out[i * width + offset..i * width + offset + c].copy_from_slice(&d[i * c..(i + 1) * c]);
        }
        offset += c;
    }
    Ok(Tensor::from_op(out, vec![m, width], Op::ConcatCols, parts.to_vec()))
}

/// Mean over the batch of `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let (b, k) = rank2(logits, "cross_entropy")?;
    if targets.len() != b {
        return Err(DptError::dim("cross_entropy", logits.shape(), &[targets.len()]));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(DptError::Label { label: bad, classes: k });
    }
    let z = logits.data();
    let mut total = 0.0f32;
    for (row, &t) in z.chunks(k).zip(targets) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f32>().ln() + max;
        total += lse - row[t];
    }
    drop(z);
    Ok(Tensor::from_op(
        vec![total / b as f32],
        vec![1],
        Op::CrossEntropy { targets: targets.to_vec() },
        vec![logits.clone()],
    ))
}

/// `a·b / (‖a‖‖b‖)` over flattened buffers of equal length.
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.numel() != b.numel() {
        return Err(DptError::dim("cosine_similarity", a.shape(), b.shape()));
    }
    let (x, y) = (a.data(), b.data());
    let na = dot(&x, &x).sqrt();
    let nb = dot(&y, &y).sqrt();
    if !(na > 0.0 && nb > 0.0) {
        return Err(DptError::DegenerateVector("cosine_similarity"));
    }
    let c = (dot(&x, &y) / (na * nb)).clamp(-1.0, 1.0);
    drop((x, y));
    Ok(Tensor::from_op(vec![c], vec![1], Op::Cosine, vec![a.clone(), b.clone()]))
}

/// Vector-Jacobian products for one recorded operation.
///
/// Returns one entry per input; `None` where the input does not need a gradient.
pub(crate) fn backward_op(op: &Op, out: &[f32], g: &[f32], inputs: &[Tensor]) -> Vec<Option<Vec<f32>>> {
    let needs = |i: usize| inputs[i].requires_grad();
    match op {
        Op::MatMul { m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let ga = needs(0).then(|| {
                let mut da = vec![0.0; m * k];
                gemm_nt(g, &inputs[1].data(), &mut da, m, n, k);
                da
            });
            let gb = needs(1).then(|| {
                let mut db = vec![0.0; k * n];
                gemm_tn(&inputs[0].data(), g, &mut db, m, k, n);
                db
            });
            vec![ga, gb]
        }
        Op::MatMulT { m, k, n } => {
            // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
            let (m, k, n) = (*m, *k, *n);
            let ga = needs(0).then(|| {
                let mut da = vec![0.0; m * k];
                gemm_nn(g, &inputs[1].data(), &mut da, m, n, k);
                da
            });
            let gb = needs(1).then(|| {
                let mut db = vec![0.0; n * k];
                gemm_tn(g, &inputs[0].data(), &mut db, m, n, k);
                db
            });
            vec![ga, gb]
        }
        Op::Transpose { m, n } => {
            let (m, n) = (*m, *n);
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    dx[i * n + j] = g[j * m + i];
                }
            }
            vec![Some(dx)]
        }
        Op::Add => vec![needs(0).then(|| g.to_vec()), needs(1).then(|| g.to_vec())],
        Op::AddRow => {
            let n = inputs[1].numel();
            let gb = needs(1).then(|| {
                let mut db = vec![0.0; n];
                for row in g.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                db
            });
            vec![needs(0).then(|| g.to_vec()), gb]
        }
        Op::Mul => {
            let ga = needs(0).then(|| g.iter().zip(inputs[1].data().iter()).map(|(a, b)| a * b).collect());
            let gb = needs(1).then(|| g.iter().zip(inputs[0].data().iter()).map(|(a, b)| a * b).collect());
            vec![ga, gb]
        }
        Op::Scale(f) => vec![Some(g.iter().map(|v| v * f).collect())],
        Op::Gelu => {
            let x = inputs[0].data();
            vec![Some(g.iter().zip(x.iter()).map(|(gv, &xv)| gv * kernels::gelu_grad(xv)).collect())]
        }
        Op::Softmax { temperature } => {
            let n = inputs[0].cols();
            let mut dx = vec![0.0; g.len()];
            for ((y, gy), d) in out.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                let s = dot(y, gy);
                for j in 0..n {
                    d[j] = y[j] * (gy[j] - s) / temperature;
                }
            }
            vec![Some(dx)]
        }
        Op::LayerNorm { eps } => {
            let d = inputs[0].cols();
            let x = inputs[0].data();
            let gain = inputs[1].data();
            let mut dx = needs(0).then(|| vec![0.0; x.len()]);
            let mut dgain = needs(1).then(|| vec![0.0; d]);
            let dbias = needs(2).then(|| {
                let mut db = vec![0.0; d];
                for row in g.chunks(d) {
                    db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                db
            });
            let mut xhat = vec![0.0; d];
            let mut dxhat = vec![0.0; d];
            for (r, (src, gy)) in x.chunks(d).zip(g.chunks(d)).enumerate() {
                let (mean, rstd) = kernels::moments(src, *eps);
                for j in 0..d {
                    xhat[j] = (src[j] - mean) * rstd;
                    dxhat[j] = gy[j] * gain[j];
                }
                if let Some(dg) = dgain.as_mut() {
                    for j in 0..d {
                        dg[j] += gy[j] * xhat[j];
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    let mean_d = dxhat.iter().sum::<f32>() / d as f32;
                    let mean_dx = dot(&dxhat, &xhat) / d as f32;
                    let row = &mut dx[r * d..(r + 1) * d];
                    for j in 0..d {
                        row[j] = rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx);
                    }
                }
            }
            vec![dx, dgain, dbias]
        }
        Op::CrossEntropy { targets } => {
            let k = inputs[0].cols();
            let z = inputs[0].data();
            let scale = g[0] / targets.len() as f32;
            let mut dz = vec![0.0; z.len()];
            for ((row, d), &t) in z.chunks(k).zip(dz.chunks_mut(k)).zip(targets) {
                kernels::softmax_row(row, 1.0, d);
                d[t] -= 1.0;
                d.iter_mut().for_each(|v| *v *= scale);
            }
            vec![Some(dz)]
        }
        Op::Cosine => {
            // f64 here: near c = ±1 the two terms cancel and f32 loses most digits
            let a: Vec<f64> = inputs[0].data().iter().map(|&v| v as f64).collect();
            let b: Vec<f64> = inputs[1].data().iter().map(|&v| v as f64).collect();
            let d64 = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
            let (na, nb) = (d64(&a, &a).sqrt(), d64(&b, &b).sqrt());
            let c = d64(&a, &b) / (na * nb);
            let g0 = g[0] as f64;
            let grad = |x: &[f64], y: &[f64], nx: f64| -> Vec<f32> {
                x.iter().zip(y).map(|(&p, &q)| (g0 * (q / (na * nb) - c * p / (nx * nx))) as f32).collect()
            };
            let ga = needs(0).then(|| grad(&a, &b, na));
            let gb = needs(1).then(|| grad(&b, &a, nb));
            vec![ga, gb]
        }
        Op::L2Normalize => {
            let n = inputs[0].cols();
            let x = inputs[0].data();
            let mut dx = vec![0.0; x.len()];
            for ((xr, yr), (gr, dr)) in x.chunks(n).zip(out.chunks(n)).zip(g.chunks(n).zip(dx.chunks_mut(n))) {
                let norm = dot(xr, xr).sqrt();
                let proj = dot(yr, gr);
                for j in 0..n {
                    dr[j] = (gr[j] - yr[j] * proj) / norm;
                }
            }
            vec![Some(dx)]
        }
        Op::Sum => vec![Some(vec![g[0]; inputs[0].numel()])],
        Op::Mean => {
            let n = inputs[0].numel();
            vec![Some(vec![g[0] / n as f32; n])]
        }
        Op::ConcatRows => {
            let mut offset = 0;
            inputs
                .iter()
                .map(|p| {
                    let len = p.numel();
                    let slice = &g[offset..offset + len];
                    offset += len;
                    p.requires_grad().then(|| slice.to_vec())
                })
                .collect()
        }
        Op::SliceRows { start } => {
            let n = inputs[0].cols();
            let mut dx = vec![0.0; inputs[0].numel()];
            dx[start * n..start * n + g.len()].copy_from_slice(g);
            vec![Some(dx)]
        }
        Op::GatherRows { indices } => {
            let n = inputs[0].cols();
            let mut dx = vec![0.0; inputs[0].numel()];
            for (r, &i) in indices.iter().enumerate() {
                dx[i * n..(i + 1) * n]
                    .iter_mut()
                    .zip(&g[r * n..(r + 1) * n])
                    .for_each(|(d, v)| *d += v);
            }
            vec![Some(dx)]
        }
        Op::SliceCols { start } => {
            let n = inputs[0].cols();
            let m = inputs[0].rows();
            let len = g.len() / m;
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                dx[i * n + start..i * n + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
            }
            vec![Some(dx)]
        }
        Op::ConcatCols => {
            let m = inputs[0].rows();
            let width = g.len() / m;
            let mut offset = 0;
            inputs
                .iter()
                .map(|p| {
                    let c = p.cols();
                    let grad = p.requires_grad().then(|| {
                        let mut dp = vec![0.0; m * c];
                        for i in 0..m {
                            dp[i * c..(i + 1) * c].copy_from_slice(&g[i * width + offset..i * width + offset + c]);
                        }
                        dp
                    });
                    offset += c;
                    grad
                })
                .collect()
        }
        Op::Reshape => vec![Some(g.to_vec())],
    }
}
