//! Minimal dense tensor engine with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle to a row-major `f32` buffer plus
//! its shape. Tensors created by an operation whose inputs require gradients
//! record their lineage (the operation and its input handles); calling
//! [`backward`] on a scalar walks that lineage in reverse creation order and
//! accumulates gradients into every leaf that requires them.
//!
//! Lineage can only point at tensors created earlier, so the graph is acyclic
//! by construction and creation ids give a valid topological order.

mod kernels;
mod ops;
pub mod optim;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DptError, Result};

pub use ops::{concat_cols, concat_rows, cosine_similarity, cross_entropy};
pub(crate) use ops::Op;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

pub(crate) struct Lineage {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<Tensor>,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<f32>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f32>>>,
    lineage: Option<Lineage>,
}

/// Shared handle to an n-dimensional `f32` array.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("has_lineage", &self.0.lineage.is_some())
            .finish()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(DptError::Shape(format!(
            "extents must be positive, got {shape:?}"
        )));
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(DptError::Shape(format!(
            "shape {shape:?} needs {numel} values, buffer has {len}"
        )));
    }
    Ok(())
}

impl Tensor {
    fn build(data: Vec<f32>, shape: Vec<usize>, requires_grad: bool, lineage: Option<Lineage>) -> Self {
        Tensor(Arc::new(Inner {
            id: next_id(),
            shape,
            data: RwLock::new(data),
            requires_grad,
            grad: Mutex::new(None),
            lineage,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(data, shape.to_vec(), false, None))
    }

    /// Learnable leaf tensor.
    pub fn parameter(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(data, shape.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(vec![0.0; shape.iter().product()], shape)
    }

    pub fn full(shape: &[usize], value: f32) -> Result<Self> {
        Self::new(vec![value; shape.iter().product()], shape)
    }

    pub fn scalar(value: f32) -> Self {
        Self::build(vec![value], vec![1], false, None)
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::new(data, &[n, n])
    }

    /// Zero-mean normal samples with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f32, rng: &mut R) -> Result<Self> {
        let numel = shape.iter().product();
        let normal = Normal::new(0.0f32, std)
            .map_err(|e| DptError::Parameter(format!("normal std {std}: {e}")))?;
        let data = (0..numel).map(|_| normal.sample(rng)).collect();
        Self::new(data, shape)
    }

    /// Result of an operation; lineage is kept only when some input needs gradients.
    pub(crate) fn from_op(data: Vec<f32>, shape: Vec<usize>, op: Op, inputs: Vec<Tensor>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        let lineage = requires_grad.then_some(Lineage { op, inputs });
        Self::build(data, shape, requires_grad, lineage)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    /// Length of the last axis.
    pub fn cols(&self) -> usize {
        *self.0.shape.last().expect("shape is never empty")
    }

    /// Number of last-axis slices.
    pub fn rows(&self) -> usize {
        self.numel() / self.cols()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn has_lineage(&self) -> bool {
        self.0.lineage.is_some()
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f32>> {
        self.0.data.read().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data().clone()
    }

    pub fn row(&self, i: usize) -> Vec<f32> {
        let c = self.cols();
        self.data()[i * c..(i + 1) * c].to_vec()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        d[0]
    }

    /// Overwrite the buffer in place (same length).
    pub fn set_data(&self, values: &[f32]) -> Result<()> {
        let mut d = self.0.data.write().expect("tensor data lock poisoned");
        if d.len() != values.len() {
            return Err(DptError::dim("set_data", &self.0.shape, &[values.len()]));
        }
        d.copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [f32])) {
        let mut d = self.0.data.write().expect("tensor data lock poisoned");
        f(&mut d);
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        let mut g = self.0.grad.lock().expect("grad lock poisoned");
        if let Some(g) = g.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Drop the gradient buffer entirely.
    pub fn clear_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    fn accumulate_grad(&self, delta: &[f32]) {
        let mut g = self.0.grad.lock().expect("grad lock poisoned");
        match g.as_mut() {
            Some(buf) => buf.iter_mut().zip(delta).for_each(|(b, d)| *b += d),
            None => *g = Some(delta.to_vec()),
        }
    }

    /// Copy without lineage or gradient tracking.
    pub fn detach(&self) -> Tensor {
        Self::build(self.to_vec(), self.0.shape.clone(), false, None)
    }

    /// Fresh learnable leaf holding a copy of this tensor's values.
    pub fn to_parameter(&self) -> Tensor {
        Self::build(self.to_vec(), self.0.shape.clone(), true, None)
    }

    pub fn same_handle(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    pub(crate) fn id(&self) -> u64 {
        self.0.id
    }
}

/// Reverse-mode sweep from a scalar loss.
///
/// Gradients are added (never overwritten) into the `grad` buffers of every
/// leaf tensor that requires them, so a parameter consumed by several
/// branches receives the sum of its partials.
pub fn backward(loss: &Tensor) -> Result<()> {
    if loss.numel() != 1 {
        return Err(DptError::Contract(format!(
            "backward needs a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.requires_grad() {
        return Err(DptError::Contract(
            "backward on a loss without lineage".into(),
        ));
    }

    let mut seen: HashSet<u64> = HashSet::new();
    let mut order: Vec<Tensor> = Vec::new();
    let mut stack = vec![loss.clone()];
    while let Some(t) = stack.pop() {
        if !seen.insert(t.id()) {
            continue;
        }
        if let Some(lin) = &t.0.lineage {
            for input in &lin.inputs {
                if input.requires_grad() && !seen.contains(&input.id()) {
                    stack.push(input.clone());
                }
            }
        }
        order.push(t);
    }
    order.sort_unstable_by_key(|t| std::cmp::Reverse(t.id()));

    let mut pending: HashMap<u64, Vec<f32>> = HashMap::new();
    pending.insert(loss.id(), vec![1.0]);
    for t in &order {
        let Some(out_grad) = pending.remove(&t.id()) else {
            continue;
        };
        match &t.0.lineage {
            None => t.accumulate_grad(&out_grad),
            Some(lin) => {
                let out_data = t.data();
                let input_grads = ops::backward_op(&lin.op, &out_data, &out_grad, &lin.inputs);
                drop(out_data);
                for (input, g) in lin.inputs.iter().zip(input_grads) {
                    let Some(g) = g else { continue };
                    match pending.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(input.id(), g);
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
