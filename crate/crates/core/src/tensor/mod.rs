//! Dense N-dimensional tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted value. Ops that touch a
//! tensor requiring gradients record themselves as graph nodes pointing at
//! their inputs, so the graph is implicit in the tensors themselves.
//!
//! Every backward rule is written in terms of differentiable tensor ops.
//! Running [`grad`] with `create_graph = true` therefore yields gradients that
//! are graph nodes of their own, which is what the gradient penalty needs to
//! push its value back into critic parameters.
//!
//! Layout is row-major with the axis order `N, C, D, H, W` for volumes.

mod autograd;
mod conv;
pub mod gradcheck;
mod ops;
mod shape;
pub mod snapshot;

use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use autograd::{backward, grad, Gradients};
pub use conv::ConvGeometry;
pub(crate) use autograd::Op;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("numeric domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tensor is not attached to a computation graph")]
    NoGraph,
    #[error("op `{0}` is not certified for second-order differentiation")]
    UnsupportedSecondOrder(&'static str),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Shape {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Element precision. Values are always held as `f64`; `F32` tensors are
/// rounded to single precision after every op.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DType {
    F32,
    #[default]
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    fn promote(self, other: DType) -> DType {
        if self == DType::F64 || other == DType::F64 {
            DType::F64
        } else {
            DType::F32
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(u64);

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Restores the previous recording state when dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    pub fn new() -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(false));
        NoGradGuard { prev }
    }
}

impl Default for NoGradGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub(crate) struct EnableGradGuard {
    prev: bool,
}

impl EnableGradGuard {
    pub(crate) fn new() -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(true));
        EnableGradGuard { prev }
    }
}

impl Drop for EnableGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

/// Runs `f` without recording any graph nodes.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let _guard = NoGradGuard::new();
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<Tensor>,
}

struct Inner {
    id: TensorId,
    shape: Vec<usize>,
    data: Vec<f64>,
    dtype: DType,
    requires_grad: bool,
    node: Option<Node>,
}

#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("dtype", &self.0.dtype)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.node.as_ref().map(|n| n.op.name()))
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(
        data: Vec<f64>,
        shape: Vec<usize>,
        dtype: DType,
        requires_grad: bool,
        node: Option<Node>,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        let data = match dtype {
            DType::F64 => data,
            DType::F32 => data.into_iter().map(|v| v as f32 as f64).collect(),
        };
        Tensor(Arc::new(Inner {
            id: TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed)),
            shape,
            data,
            dtype,
            requires_grad,
            node,
        }))
    }

    /// Creates a constant (non-differentiable) tensor.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Self::with_dtype(data, shape, DType::F64)
    }

    pub fn with_dtype(data: Vec<f64>, shape: &[usize], dtype: DType) -> Result<Tensor> {
        if shape.contains(&0) {
            return Err(TensorError::shape("new", format!("zero extent in {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(TensorError::shape(
                "new",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Self::build(data, shape.to_vec(), dtype, false, None))
    }

    /// Creates a differentiable leaf, typically a model parameter.
    pub fn parameter(data: Vec<f64>, shape: &[usize], dtype: DType) -> Result<Tensor> {
        let t = Self::with_dtype(data, shape, dtype)?;
        Ok(t.requires_grad_(true))
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::build(vec![v], vec![], DType::F64, false, None)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        Self::build(vec![v; numel(shape)], shape.to_vec(), DType::F64, false, None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Self::full(shape, 1.0)
    }

    /// Uniform samples in `[low, high)` from a ChaCha stream seeded by `seed`.
    pub fn random_uniform(shape: &[usize], low: f64, high: f64, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..numel(shape))
            .map(|_| low + (high - low) * rng.random::<f64>())
            .collect();
        Self::build(data, shape.to_vec(), DType::F64, false, None)
    }

    /// Returns a leaf that shares values with `self` and has the given
    /// `requires_grad` flag. Any graph history is dropped.
    pub fn requires_grad_(&self, flag: bool) -> Tensor {
        Self::build(self.0.data.clone(), self.0.shape.clone(), self.0.dtype, flag, None)
    }

    /// A constant copy cut from the graph.
    pub fn detach(&self) -> Tensor {
        if !self.0.requires_grad && self.0.node.is_none() {
            return self.clone();
        }
        self.requires_grad_(false)
    }

    pub fn to_dtype(&self, dtype: DType) -> Tensor {
        Self::build(self.0.data.clone(), self.0.shape.clone(), dtype, self.0.requires_grad, None)
    }

    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op, inputs: &[&Tensor]) -> Tensor {
        let dtype = inputs
            .iter()
            .map(|t| t.dtype())
            .reduce(DType::promote)
            .unwrap_or_default();
        let requires_grad = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let node = requires_grad.then(|| Node {
            op,
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
        });
        Self::build(data, shape, dtype, requires_grad, node)
    }

    pub fn id(&self) -> TensorId {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn dtype(&self) -> DType {
        self.0.dtype
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub(crate) fn node(&self) -> Option<&Node> {
        self.0.node.as_ref()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar(self.shape().to_vec()));
        }
        Ok(self.0.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality of shape, dtype and values.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
            && self.dtype() == other.dtype()
            && self
                .data()
                .iter()
                .zip(other.data())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}
