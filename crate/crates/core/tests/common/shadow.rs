//! Double-precision reference implementations and a finite-difference checker.
//!
//! Every function here is written from the textbook definition and shares no
//! code with the library kernels.

use dmpt::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

use dmpt::rng::DetRng;

/// Row-major `r × c` matrix in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct M {
    pub r: usize,
    pub c: usize,
    pub d: Vec<f64>,
}

impl M {
    pub fn new(r: usize, c: usize, d: Vec<f64>) -> Self {
        assert_eq!(r * c, d.len());
        Self { r, c, d }
    }
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.c + j]
    }
}

pub fn matmul(a: &M, b: &M) -> M {
    assert_eq!(a.c, b.r);
    let mut d = vec![0.0; a.r * b.c];
    for i in 0..a.r {
        for j in 0..b.c {
            d[i * b.c + j] = (0..a.c).map(|k| a.at(i, k) * b.at(k, j)).sum();
        }
    }
    M::new(a.r, b.c, d)
}

pub fn transpose(a: &M) -> M {
    let mut d = vec![0.0; a.d.len()];
    for i in 0..a.r {
        for j in 0..a.c {
            d[j * a.r + i] = a.at(i, j);
        }
    }
    M::new(a.c, a.r, d)
}

pub fn matmul_t(a: &M, b: &M) -> M {
    matmul(a, &transpose(b))
}

pub fn zip(a: &M, b: &M, f: impl Fn(f64, f64) -> f64) -> M {
    assert_eq!(a.d.len(), b.d.len());
    M::new(a.r, a.c, a.d.iter().zip(&b.d).map(|(x, y)| f(*x, *y)).collect())
}

pub fn map(a: &M, f: impl Fn(f64) -> f64) -> M {
    M::new(a.r, a.c, a.d.iter().map(|&x| f(x)).collect())
}

pub fn add_row(a: &M, bias: &[f64]) -> M {
    let d = a.d.iter().enumerate().map(|(i, x)| x + bias[i % a.c]).collect();
    M::new(a.r, a.c, d)
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn softmax(a: &M, t: f64) -> M {
    let mut d = Vec::with_capacity(a.d.len());
    for row in a.d.chunks(a.c) {
        let e: Vec<f64> = row.iter().map(|x| (x / t).exp()).collect();
        let s: f64 = e.iter().sum();
        d.extend(e.iter().map(|v| v / s));
    }
    M::new(a.r, a.c, d)
}

pub fn layer_norm(a: &M, gain: &[f64], bias: &[f64], eps: f64) -> M {
    let mut d = Vec::with_capacity(a.d.len());
    for row in a.d.chunks(a.c) {
        let n = a.c as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        for (j, x) in row.iter().enumerate() {
            d.push((x - mean) / (var + eps).sqrt() * gain[j] + bias[j]);
        }
    }
    M::new(a.r, a.c, d)
}

pub fn l2_normalize(a: &M) -> M {
    let mut d = Vec::with_capacity(a.d.len());
    for row in a.d.chunks(a.c) {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        d.extend(row.iter().map(|x| x / n));
    }
    M::new(a.r, a.c, d)
}

pub fn cross_entropy(logits: &M, targets: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &t) in logits.d.chunks(logits.c).zip(targets) {
        let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    total / targets.len() as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn concat_rows(parts: &[&M]) -> M {
    let c = parts[0].c;
    let d: Vec<f64> = parts.iter().flat_map(|p| p.d.iter().copied()).collect();
    M::new(d.len() / c, c, d)
}

pub fn concat_cols(parts: &[&M]) -> M {
    let r = parts[0].r;
    let c: usize = parts.iter().map(|p| p.c).sum();
    let mut d = Vec::with_capacity(r * c);
    for i in 0..r {
        for p in parts {
            d.extend_from_slice(&p.d[i * p.c..(i + 1) * p.c]);
        }
    }
    M::new(r, c, d)
}

pub fn rows(a: &M, idx: &[usize]) -> M {
    let d = idx.iter().flat_map(|&i| a.d[i * a.c..(i + 1) * a.c].iter().copied()).collect();
    M::new(idx.len(), a.c, d)
}

pub fn cols(a: &M, start: usize, len: usize) -> M {
    let mut d = Vec::with_capacity(a.r * len);
    for i in 0..a.r {
        d.extend_from_slice(&a.d[i * a.c + start..i * a.c + start + len]);
    }
    M::new(a.r, len, d)
}

pub fn randn(rng: &mut DetRng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect()
}

/// Values rounded through f32 so both implementations see identical inputs.
pub fn rounded(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x as f32 as f64).collect()
}

/// One gradient-check instance: inputs with shapes, the library computation
/// and an f64 reference producing the same flattened output.
pub struct Instance {
    pub inputs: Vec<(Vec<f64>, Vec<usize>)>,
    pub library: Box<dyn Fn(&[Tensor]) -> dmpt::Result<Tensor>>,
    pub reference: Box<dyn Fn(&[Vec<f64>]) -> Vec<f64>>,
}

pub const FD_STEP: f64 = 1e-3;

/// Checks the autodiff gradient of `Σ out·R` (random `R`) for every input
/// against central differences (step `FD_STEP`, Richardson-extrapolated) of
/// the f64 reference.
///
/// Returns the largest norm-wise relative error `‖g − ĝ‖ / ‖ĝ‖` over inputs.
pub fn grad_check(inst: &Instance, rng: &mut DetRng) -> f64 {
    let inputs: Vec<Vec<f64>> = inst.inputs.iter().map(|(v, _)| rounded(v.clone())).collect();
    let tensors: Vec<Tensor> = inst
        .inputs
        .iter()
        .zip(&inputs)
        .map(|((_, s), v)| Tensor::parameter(v.iter().map(|&x| x as f32).collect(), s).unwrap())
        .collect();
    let out = (inst.library)(&tensors).unwrap();

    // The forward pass itself must agree with the reference.
    let expect = (inst.reference)(&inputs);
    assert_eq!(out.numel(), expect.len(), "output size mismatch");
    for (a, b) in out.to_vec().iter().zip(&expect) {
        assert!(((*a as f64) - b).abs() <= 1e-4 * (1.0 + b.abs()), "forward {a} vs {b}");
    }

    let weights = rounded(randn(rng, expect.len(), 1.0));
    let r = Tensor::new(weights.iter().map(|&x| x as f32).collect(), out.shape()).unwrap();
    dmpt::tensor::backward(&out.mul(&r).unwrap().sum()).unwrap();

    let objective = |xs: &[Vec<f64>]| -> f64 { (inst.reference)(xs).iter().zip(&weights).map(|(a, b)| a * b).sum() };
    let mut worst: f64 = 0.0;
    for (i, t) in tensors.iter().enumerate() {
        let analytic = t.grad().unwrap_or_else(|| vec![0.0; t.numel()]);
        let mut xs = inputs.clone();
        let mut num = vec![0.0; analytic.len()];
        for j in 0..num.len() {
            let x0 = xs[i][j];
            let mut central = |h: f64| {
                xs[i][j] = x0 + h;
                let up = objective(&xs);
                xs[i][j] = x0 - h;
                let down = objective(&xs);
                xs[i][j] = x0;
                (up - down) / (2.0 * h)
            };
            // one Richardson step cancels the h² truncation term
            let (d1, d2) = (central(FD_STEP), central(FD_STEP / 2.0));
            num[j] = (4.0 * d2 - d1) / 3.0;
        }
        let diff = analytic.iter().zip(&num).map(|(a, n)| (*a as f64 - n).powi(2)).sum::<f64>().sqrt();
        let scale = num.iter().map(|n| n * n).sum::<f64>().sqrt().max(1e-8);
        worst = worst.max(diff / scale);
    }
    worst
}
