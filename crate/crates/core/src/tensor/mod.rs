//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle to a node in a dynamically
//! built computation graph. Operations record enough context to propagate
//! gradients; [`Tensor::backward`] walks the graph in reverse topological
//! order and accumulates into every reachable node that needs gradients.
//! Nodes whose inputs all have gradients disabled collapse to constants,
//! so evaluation-mode forward passes build no graph at all.
//!
//! Everything is 64-bit and deterministic: reductions run in index order,
//! max ties break to the lowest index, and dropout masks derive from an
//! explicit seed.

mod checkpoint;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, TensorData};
pub use params::Params;

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Reverse-mode differentiable dense tensor of f64 values.
#[derive(Clone)]
pub struct Tensor {
    node: Rc<RefCell<Node>>,
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

enum Op {
    Leaf,
    Matmul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    Softmax { input: Tensor, axis: usize },
    MaskedSoftmax { input: Tensor, allow: Rc<Vec<bool>> },
    LayerNorm { input: Tensor, axis: usize, eps: f64 },
    Gelu(Tensor),
    Relu(Tensor),
    Exp(Tensor),
    Ln(Tensor),
    Dropout { input: Tensor, mask: Rc<Vec<f64>> },
    Concat { inputs: Vec<Tensor>, axis: usize },
    Slice { input: Tensor, axis: usize, start: usize },
    Transpose(Tensor),
    Reshape(Tensor),
    MeanAxis { input: Tensor, axis: usize },
    SumAxis { input: Tensor, axis: usize },
    MaxAxis { input: Tensor, axis: usize, argmax: Vec<usize> },
    SumAll(Tensor),
    Embedding { table: Tensor, ids: Rc<Vec<u32>> },
    CosineSim { a: Tensor, b: Tensor },
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Lane decomposition for reductions along `axis`: the tensor is viewed as
/// `lanes` independent runs of `axis_len` elements spaced `stride` apart.
fn lane_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let axis_len = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let lanes = numel(shape) / axis_len.max(1);
    (lanes, axis_len, stride)
}

fn lane_base(lane: usize, axis_len: usize, stride: usize) -> usize {
    (lane / stride) * (axis_len * stride) + (lane % stride)
}

impl Tensor {
    fn new(shape: Vec<usize>, data: Vec<f64>, needs_grad: bool, op: Op) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            node: Rc::new(RefCell::new(Node {
                shape,
                data,
                grad: None,
                needs_grad,
                op,
            })),
        }
    }

    fn derived(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Tensor {
        let needs = match &op {
            Op::Leaf => false,
            other => op_inputs(other).iter().any(|t| t.needs_grad()),
        };
        if needs {
            Tensor::new(shape, data, true, op)
        } else {
            // Constant subgraph: drop the op so upstream nodes free early.
            Tensor::new(shape, data, false, Op::Leaf)
        }
    }

    /// A trainable leaf.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(numel(shape), data.len(), "param data does not match shape");
        Tensor::new(shape.to_vec(), data, true, Op::Leaf)
    }

    /// A non-differentiable leaf.
    pub fn constant(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(
            numel(shape),
            data.len(),
            "constant data does not match shape"
        );
        Tensor::new(shape.to_vec(), data, false, Op::Leaf)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::constant(shape, vec![0.0; numel(shape)])
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::constant(&[1], vec![value])
    }

    /// A trainable leaf with N(0, std) entries drawn from `rng`.
    pub fn randn(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
        let n = numel(shape);
        let normal = rand_distr::Normal::new(0.0, std).expect("std must be finite and positive");
        let data: Vec<f64> = (0..n).map(|_| rng.sample(normal)).collect();
        Tensor::param(shape, data)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.node.borrow().data.len()
    }

    pub fn data(&self) -> Vec<f64> {
        self.node.borrow().data.clone()
    }

    /// Overwrite the value buffer in place (optimizer updates).
    pub fn set_data(&self, data: Vec<f64>) {
        let mut node = self.node.borrow_mut();
        assert_eq!(node.data.len(), data.len(), "set_data length mismatch");
        node.data = data;
    }

    pub fn needs_grad(&self) -> bool {
        self.node.borrow().needs_grad
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.node.borrow_mut().grad = None;
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        let node = self.node.borrow();
        if node.data.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "item",
                detail: format!("expected one element, shape is {:?}", node.shape),
            });
        }
        Ok(node.data[0])
    }

    fn ptr(&self) -> *const RefCell<Node> {
        Rc::as_ptr(&self.node)
    }

    // ---- arithmetic ----

    /// Elementwise addition; `other` may broadcast over leading axes when
    /// its shape is a suffix of `self`'s (or is a single element).
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        broadcast_binary(self, other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        broadcast_binary(self, other, "sub", |a, b| a - b, Op::Sub)
    }

    /// Elementwise product with the same broadcast rule as [`Tensor::add`].
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        broadcast_binary(self, other, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let node = self.node.borrow();
        let data = node.data.iter().map(|v| v * factor).collect();
        let shape = node.shape.clone();
        drop(node);
        Tensor::derived(shape, data, Op::Scale(self.clone(), factor))
    }

    pub fn add_scalar(&self, value: f64) -> Tensor {
        let node = self.node.borrow();
        let data = node.data.iter().map(|v| v + value).collect();
        let shape = node.shape.clone();
        drop(node);
        Tensor::derived(shape, data, Op::AddScalar(self.clone()))
    }

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.node.borrow(), other.node.borrow());
        if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", a.shape, b.shape),
            });
        }
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
        let data = matmul_raw(&a.data, &b.data, m, k, n);
        drop(a);
        drop(b);
        Ok(Tensor::derived(
            vec![m, n],
            data,
            Op::Matmul(self.clone(), other.clone()),
        ))
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        let node = self.node.borrow();
        if node.shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                detail: format!("expected rank 2, got {:?}", node.shape),
            });
        }
        let (m, n) = (node.shape[0], node.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = node.data[i * n + j];
            }
        }
        drop(node);
        Ok(Tensor::derived(vec![n, m], data, Op::Transpose(self.clone())))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let node = self.node.borrow();
        if numel(shape) != node.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", node.shape, shape),
            });
        }
        let data = node.data.clone();
        drop(node);
        Ok(Tensor::derived(shape.to_vec(), data, Op::Reshape(self.clone())))
    }

    // ---- nonlinearities ----

    pub fn gelu(&self) -> Tensor {
        let node = self.node.borrow();
        let data = node.data.iter().map(|&x| gelu_value(x)).collect();
        let shape = node.shape.clone();
        drop(node);
        Tensor::derived(shape, data, Op::Gelu(self.clone()))
    }

    pub fn relu(&self) -> Tensor {
        let node = self.node.borrow();
        let data = node.data.iter().map(|&x| x.max(0.0)).collect();
        let shape = node.shape.clone();
        drop(node);
        Tensor::derived(shape, data, Op::Relu(self.clone()))
    }

    pub fn exp(&self) -> Tensor {
        let node = self.node.borrow();
        let data = node.data.iter().map(|&x| x.exp()).collect();
        let shape = node.shape.clone();
        drop(node);
        Tensor::derived(shape, data, Op::Exp(self.clone()))
    }

    /// Natural log; inputs must be strictly positive.
    pub fn ln(&self) -> Result<Tensor> {
        let node = self.node.borrow();
        if node.data.iter().any(|&x| x <= 0.0) {
            return Err(Error::ShapeMismatch {
                op: "ln",
                detail: "input must be strictly positive".into(),
            });
        }
        let data = node.data.iter().map(|&x| x.ln()).collect();
        let shape = node.shape.clone();
        drop(node);
        Ok(Tensor::derived(shape, data, Op::Ln(self.clone())))
    }

    // ---- normalization ----

    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let node = self.node.borrow();
        if axis >= node.shape.len() {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                detail: format!("axis {axis} out of range for {:?}", node.shape),
            });
        }
        let (lanes, axis_len, stride) = lane_layout(&node.shape, axis);
        let mut data = vec![0.0; node.data.len()];
        for lane in 0..lanes {
            let base = lane_base(lane, axis_len, stride);
            let mut max = f64::NEG_INFINITY;
            for j in 0..axis_len {
                max = max.max(node.data[base + j * stride]);
            }
            let mut sum = 0.0;
            for j in 0..axis_len {
                let e = (node.data[base + j * stride] - max).exp();
                data[base + j * stride] = e;
                sum += e;
            }
            for j in 0..axis_len {
                data[base + j * stride] /= sum;
            }
        }
        let shape = node.shape.clone();
        drop(node);
        Ok(Tensor::derived(
            shape,
            data,
            Op::Softmax {
                input: self.clone(),
                axis,
            },
        ))
    }

    /// Row-wise softmax over a 2-D tensor restricted to `allow`ed entries.
    /// Disallowed entries get exactly zero weight; a row with nothing
    /// allowed is all zeros.
    pub fn masked_softmax(&self, allow: &Rc<Vec<bool>>) -> Result<Tensor> {
        let node = self.node.borrow();
        if node.shape.len() != 2 || allow.len() != node.data.len() {
            return Err(Error::ShapeMismatch {
                op: "masked_softmax",
                detail: format!("shape {:?}, mask len {}", node.shape, allow.len()),
            });
        }
        let (rows, cols) = (node.shape[0], node.shape[1]);
        let mut data = vec![0.0; node.data.len()];
        for i in 0..rows {
            let row = i * cols;
            let mut max = f64::NEG_INFINITY;
            for j in 0..cols {
                if allow[row + j] {
                    max = max.max(node.data[row + j]);
                }
            }
            if max == f64::NEG_INFINITY {
                continue; // nothing allowed in this row
            }
            let mut sum = 0.0;
            for j in 0..cols {
                if allow[row + j] {
                    let e = (node.data[row + j] - max).exp();
                    data[row + j] = e;
                    sum += e;
                }
            }
            for j in 0..cols {
                if allow[row + j] {
                    data[row + j] /= sum;
                }
            }
        }
        let shape = node.shape.clone();
        drop(node);
        Ok(Tensor::derived(
            shape,
            data,
            Op::MaskedSoftmax {
                input: self.clone(),
                allow: Rc::clone(allow),
            },
        ))
    }

    /// Zero-mean unit-variance normalization along `axis` (no affine part;
    /// scale and shift are separate parameters).
    pub fn layer_norm(&self, axis: usize, eps: f64) -> Result<Tensor> {
        let node = self.node.borrow();
        if axis >= node.shape.len() {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                detail: format!("axis {axis} out of range for {:?}", node.shape),
            });
        }
        let (lanes, axis_len, stride) = lane_layout(&node.shape, axis);
        let mut data = vec![0.0; node.data.len()];
        for lane in 0..lanes {
            let base = lane_base(lane, axis_len, stride);
            let mut mean = 0.0;
            for j in 0..axis_len {
                mean += node.data[base + j * stride];
            }
            mean /= axis_len as f64;
            let mut var = 0.0;
            for j in 0..axis_len {
                let d = node.data[base + j * stride] - mean;
                var += d * d;
            }
            var /= axis_len as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..axis_len {
                data[base + j * stride] = (node.data[base + j * stride] - mean) * inv;
            }
        }
        let shape = node.shape.clone();
        drop(node);
        Ok(Tensor::derived(
            shape,
            data,
            Op::LayerNorm {
                input: self.clone(),
                axis,
                eps,
            },
        ))
    }

    /// Inverted dropout with a mask derived deterministically from `seed`.
    /// `p == 0` is the identity.
    pub fn dropout(&self, p: f64, seed: u64) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!(
                "dropout probability must be in [0,1), got {p}"
            )));
        }
        if p == 0.0 {
            return Ok(self.clone());
        }
        let node = self.node.borrow();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..node.data.len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let data = node
            .data
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = node.shape.clone();
        drop(node);
        Ok(Tensor::derived(
            shape,
            data,
            Op::Dropout {
                input: self.clone(),
                mask: Rc::new(mask),
            },
        ))
    }

    // ---- shape surgery ----

    pub fn concat(inputs: &[Tensor], axis: usize) -> Result<Tensor> {
        if inputs.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                detail: "no inputs".into(),
            });
        }
        let first = inputs[0].shape();
        if axis >= first.len() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                detail: format!("axis {axis} out of range for {first:?}"),
            });
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for t in inputs {
            let s = t.shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    detail: format!("incompatible shapes {first:?} and {s:?}"),
                });
            }
            out_shape[axis] += s[axis];
        }
        let (_, out_axis_len, stride) = lane_layout(&out_shape, axis);
        let outer: usize = out_shape[..axis].iter().product();
        let mut data = vec![0.0; numel(&out_shape)];
        let mut offset = 0;
        for t in inputs {
            let node = t.node.borrow();
            let len = node.shape[axis];
            for o in 0..outer {
                for j in 0..len {
                    for s in 0..stride {
                        data[o * out_axis_len * stride + (offset + j) * stride + s] =
                            node.data[o * len * stride + j * stride + s];
                    }
                }
            }
            offset += len;
        }
        Ok(Tensor::derived(
            out_shape,
            data,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Contiguous sub-range `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        let node = self.node.borrow();
        if axis >= node.shape.len() || start >= end || end > node.shape[axis] {
            return Err(Error::ShapeMismatch {
                op: "slice",
                detail: format!(
                    "range {start}..{end} on axis {axis} of {:?}",
                    node.shape
                ),
            });
        }
        let (_, axis_len, stride) = lane_layout(&node.shape, axis);
        let outer: usize = node.shape[..axis].iter().product();
        let len = end - start;
        let mut out_shape = node.shape.clone();
        out_shape[axis] = len;
        let mut data = vec![0.0; numel(&out_shape)];
        for o in 0..outer {
            for j in 0..len {
                for s in 0..stride {
                    data[o * len * stride + j * stride + s] =
                        node.data[o * axis_len * stride + (start + j) * stride + s];
                }
            }
        }
        drop(node);
        Ok(Tensor::derived(
            out_shape,
            data,
            Op::Slice {
                input: self.clone(),
                axis,
                start,
            },
        ))
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        self.slice(0, start, end)
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        self.slice(1, start, end)
    }

    // ---- reductions ----

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, "mean")
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, "sum")
    }

    #[allow(clippy::needless_range_loop)]
    fn reduce_axis(&self, axis: usize, kind: &'static str) -> Result<Tensor> {
        let node = self.node.borrow();
        if axis >= node.shape.len() {
            return Err(Error::ShapeMismatch {
                op: if kind == "mean" { "mean" } else { "sum_axis" },
                detail: format!("axis {axis} out of range for {:?}", node.shape),
            });
        }
        let (lanes, axis_len, stride) = lane_layout(&node.shape, axis);
        let mut data = vec![0.0; lanes];
        for lane in 0..lanes {
            let base = lane_base(lane, axis_len, stride);
            let mut acc = 0.0;
            for j in 0..axis_len {
                acc += node.data[base + j * stride];
            }
            if kind == "mean" {
                acc /= axis_len as f64;
            }
            data[lane] = acc;
        }
        let mut out_shape = node.shape.clone();
        out_shape.remove(axis);
        drop(node);
        let op = if kind == "mean" {
            Op::MeanAxis {
                input: self.clone(),
                axis,
            }
        } else {
            Op::SumAxis {
                input: self.clone(),
                axis,
            }
        };
        Ok(Tensor::derived(out_shape, data, op))
    }

    /// Maximum along `axis`; the gradient routes to the first (lowest
    /// index) maximal element of each lane.
    pub fn max_axis(&self, axis: usize) -> Result<Tensor> {
        let node = self.node.borrow();
        if axis >= node.shape.len() {
            return Err(Error::ShapeMismatch {
                op: "max",
                detail: format!("axis {axis} out of range for {:?}", node.shape),
            });
        }
        let (lanes, axis_len, stride) = lane_layout(&node.shape, axis);
        if axis_len == 0 {
            return Err(Error::ShapeMismatch {
                op: "max",
                detail: "cannot reduce an empty axis".into(),
            });
        }
        let mut data = vec![0.0; lanes];
        let mut argmax = vec![0usize; lanes];
        for lane in 0..lanes {
            let base = lane_base(lane, axis_len, stride);
            let mut best = node.data[base];
            let mut best_j = 0;
            for j in 1..axis_len {
                let v = node.data[base + j * stride];
                if v > best {
                    best = v;
                    best_j = j;
                }
            }
            data[lane] = best;
            argmax[lane] = best_j;
        }
        let mut out_shape = node.shape.clone();
        out_shape.remove(axis);
        drop(node);
        Ok(Tensor::derived(
            out_shape,
            data,
            Op::MaxAxis {
                input: self.clone(),
                axis,
                argmax,
            },
        ))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum_all(&self) -> Tensor {
        let node = self.node.borrow();
        let total: f64 = node.data.iter().sum();
        drop(node);
        Tensor::derived(vec![1], vec![total], Op::SumAll(self.clone()))
    }

    // ---- lookups and similarities ----

    /// Gather rows of `table` (`[vocab, dim]`) by id.
    pub fn embedding_lookup(table: &Tensor, ids: &[u32]) -> Result<Tensor> {
        let node = table.node.borrow();
        if node.shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embedding_lookup",
                detail: format!("table must be rank 2, got {:?}", node.shape),
            });
        }
        let (vocab, dim) = (node.shape[0], node.shape[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::ShapeMismatch {
                op: "embedding_lookup",
                detail: format!("id {bad} out of range for table with {vocab} rows"),
            });
        }
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            let row = id as usize * dim;
            data.extend_from_slice(&node.data[row..row + dim]);
        }
        drop(node);
        Ok(Tensor::derived(
            vec![ids.len(), dim],
            data,
            Op::Embedding {
                table: table.clone(),
                ids: Rc::new(ids.to_vec()),
            },
        ))
    }

    /// Pairwise cosine similarity between the rows of `a` (`[p,d]`) and
    /// `b` (`[n,d]`), yielding `[p,n]`. Zero-norm rows produce similarity
    /// zero (and zero gradient).
    pub fn cosine_sim(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (an, bn) = (a.node.borrow(), b.node.borrow());
        if an.shape.len() != 2 || bn.shape.len() != 2 || an.shape[1] != bn.shape[1] {
            return Err(Error::ShapeMismatch {
                op: "cosine_sim",
                detail: format!("{:?} vs {:?}", an.shape, bn.shape),
            });
        }
        let (p, d, n) = (an.shape[0], an.shape[1], bn.shape[0]);
        let a_norm: Vec<f64> = (0..p)
            .map(|i| an.data[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let b_norm: Vec<f64> = (0..n)
            .map(|j| bn.data[j * d..(j + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let mut data = vec![0.0; p * n];
        for i in 0..p {
            for j in 0..n {
                let denom = a_norm[i] * b_norm[j];
                if denom > 0.0 {
                    let dot: f64 = (0..d).map(|k| an.data[i * d + k] * bn.data[j * d + k]).sum();
                    data[i * n + j] = dot / denom;
                }
            }
        }
        drop(an);
        drop(bn);
        Ok(Tensor::derived(
            vec![p, n],
            data,
            Op::CosineSim {
                a: a.clone(),
                b: b.clone(),
            },
        ))
    }

    // ---- backward ----

    /// Reverse-mode gradient accumulation from a scalar loss. Repeated
    /// calls without zeroing add into existing gradients.
    pub fn backward(&self) -> Result<()> {
        {
            let node = self.node.borrow();
            if node.data.len() != 1 {
                return Err(Error::NonScalarLoss(node.shape.clone()));
            }
        }
        if !self.needs_grad() {
            return Ok(()); // nothing trainable below the loss
        }

        // Deterministic post-order DFS over grad-requiring nodes.
        let order = topo_order(self);

        // Interior grads are scratch for this pass; only leaves accumulate
        // across repeated calls.
        for t in &order {
            let mut node = t.node.borrow_mut();
            if !matches!(node.op, Op::Leaf) {
                node.grad = None;
            }
        }

        add_grad(self, &[1.0]);
        for tensor in order.iter().rev() {
            propagate(tensor);
        }
        Ok(())
    }
}

fn op_inputs(op: &Op) -> Vec<&Tensor> {
    match op {
        Op::Leaf => vec![],
        Op::Matmul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
        Op::Scale(a, _) | Op::AddScalar(a) => vec![a],
        Op::Softmax { input, .. }
        | Op::MaskedSoftmax { input, .. }
        | Op::LayerNorm { input, .. }
        | Op::Dropout { input, .. }
        | Op::Slice { input, .. }
        | Op::MeanAxis { input, .. }
        | Op::SumAxis { input, .. }
        | Op::MaxAxis { input, .. } => vec![input],
        Op::Gelu(a) | Op::Relu(a) | Op::Exp(a) | Op::Ln(a) | Op::Transpose(a)
        | Op::Reshape(a) | Op::SumAll(a) => vec![a],
        Op::Concat { inputs, .. } => inputs.iter().collect(),
        Op::Embedding { table, .. } => vec![table],
        Op::CosineSim { a, b } => vec![a, b],
    }
}

fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<*const RefCell<Node>> = HashSet::new();
    // Explicit stack: (tensor, children_pushed).
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((tensor, expanded)) = stack.pop() {
        if expanded {
            order.push(tensor);
            continue;
        }
        if !visited.insert(tensor.ptr()) {
            continue;
        }
        stack.push((tensor.clone(), true));
        let node = tensor.node.borrow();
        for input in op_inputs(&node.op) {
            if input.needs_grad() && !visited.contains(&input.ptr()) {
                stack.push((input.clone(), false));
            }
        }
    }
    order
}

fn add_grad(tensor: &Tensor, delta: &[f64]) {
    let mut node = tensor.node.borrow_mut();
    debug_assert_eq!(node.data.len(), delta.len());
    match &mut node.grad {
        Some(grad) => {
            for (g, d) in grad.iter_mut().zip(delta) {
                *g += d;
            }
        }
        None => node.grad = Some(delta.to_vec()),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn gelu_value(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Shared shape check + forward for the broadcasting binary ops.
fn broadcast_binary(
    lhs: &Tensor,
    rhs: &Tensor,
    name: &'static str,
    f: fn(f64, f64) -> f64,
    make_op: fn(Tensor, Tensor) -> Op,
) -> Result<Tensor> {
    let (a, b) = (lhs.node.borrow(), rhs.node.borrow());
    let block = b.data.len();
    let compatible = a.shape == b.shape
        || (block == 1)
        || (block > 0
            && a.shape.len() >= b.shape.len()
            && a.shape[a.shape.len() - b.shape.len()..] == b.shape[..]);
    if !compatible || block == 0 {
        return Err(Error::ShapeMismatch {
            op: name,
            detail: format!("{:?} vs {:?}", a.shape, b.shape),
        });
    }
    let mut data = Vec::with_capacity(a.data.len());
    if block == 1 {
        let s = b.data[0];
        data.extend(a.data.iter().map(|&x| f(x, s)));
    } else {
        for (i, &x) in a.data.iter().enumerate() {
            data.push(f(x, b.data[i % block]));
        }
    }
    let shape = a.shape.clone();
    drop(a);
    drop(b);
    Ok(Tensor::derived(shape, data, make_op(lhs.clone(), rhs.clone())))
}

/// Sum `delta` (shaped like the broadcast output) back down to the
/// broadcast input's size.
fn reduce_to_block(delta: &[f64], block: usize) -> Vec<f64> {
    let mut out = vec![0.0; block];
    for (i, &d) in delta.iter().enumerate() {
        out[i % block] += d;
    }
    out
}

#[allow(clippy::needless_range_loop)]
fn propagate(tensor: &Tensor) {
    let node = tensor.node.borrow();
    let Some(grad) = node.grad.clone() else {
        return; // no downstream contribution reached this node
    };
    let out_data = node.data.clone();
    let out_shape = node.shape.clone();
    // Clone op handles so the borrow on this node can be released before
    // mutating parents (a parent may be this same tensor's sibling).
    let op_ref: &Op = &node.op;
    match op_ref {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (a, b) = (a.clone(), b.clone());
            drop(node);
            let (as_, bs_) = (a.shape(), b.shape());
            let (m, k, n) = (as_[0], as_[1], bs_[1]);
            if a.needs_grad() {
                // dA = dC . B^T
                let bd = b.data();
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let g = grad[i * n + j];
                        if g == 0.0 {
                            continue;
                        }
                        for kk in 0..k {
                            da[i * k + kk] += g * bd[kk * n + j];
                        }
                    }
                }
                add_grad(&a, &da);
            }
            if b.needs_grad() {
                // dB = A^T . dC
                let ad = a.data();
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for kk in 0..k {
                        let av = ad[i * k + kk];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[kk * n + j] += av * grad[i * n + j];
                        }
                    }
                }
                add_grad(&b, &db);
            }
        }
        Op::Add(a, b) => {
            let (a, b) = (a.clone(), b.clone());
            drop(node);
            if a.needs_grad() {
                add_grad(&a, &grad);
            }
            if b.needs_grad() {
                add_grad(&b, &reduce_to_block(&grad, b.numel()));
            }
        }
        Op::Sub(a, b) => {
            let (a, b) = (a.clone(), b.clone());
            drop(node);
            if a.needs_grad() {
                add_grad(&a, &grad);
            }
            if b.needs_grad() {
                let mut d = reduce_to_block(&grad, b.numel());
                for v in &mut d {
                    *v = -*v;
                }
                add_grad(&b, &d);
            }
        }
        Op::Mul(a, b) => {
            let (a, b) = (a.clone(), b.clone());
            drop(node);
            let (ad, bd) = (a.data(), b.data());
            let block = bd.len();
            if a.needs_grad() {
                let da: Vec<f64> = grad
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| g * bd[i % block])
                    .collect();
                add_grad(&a, &da);
            }
            if b.needs_grad() {
                let mut db = vec![0.0; block];
                for (i, &g) in grad.iter().enumerate() {
                    db[i % block] += g * ad[i];
                }
                add_grad(&b, &db);
            }
        }
        Op::Scale(a, factor) => {
            let (a, factor) = (a.clone(), *factor);
            drop(node);
            if a.needs_grad() {
                let da: Vec<f64> = grad.iter().map(|g| g * factor).collect();
                add_grad(&a, &da);
            }
        }
        Op::AddScalar(a) => {
            let a = a.clone();
            drop(node);
            if a.needs_grad() {
                add_grad(&a, &grad);
            }
        }
        Op::Softmax { input, axis } => {
            let (input, axis) = (input.clone(), *axis);
            drop(node);
            if input.needs_grad() {
                let (lanes, axis_len, stride) = lane_layout(&out_shape, axis);
                let mut dx = vec![0.0; out_data.len()];
                for lane in 0..lanes {
                    let base = lane_base(lane, axis_len, stride);
                    let mut dot = 0.0;
                    for j in 0..axis_len {
                        let idx = base + j * stride;
                        dot += grad[idx] * out_data[idx];
                    }
                    for j in 0..axis_len {
                        let idx = base + j * stride;
                        dx[idx] = out_data[idx] * (grad[idx] - dot);
                    }
                }
                add_grad(&input, &dx);
            }
        }
        Op::MaskedSoftmax { input, allow } => {
            let (input, allow) = (input.clone(), Rc::clone(allow));
            drop(node);
            if input.needs_grad() {
                let (rows, cols) = (out_shape[0], out_shape[1]);
                let mut dx = vec![0.0; out_data.len()];
                for i in 0..rows {
                    let row = i * cols;
                    let mut dot = 0.0;
                    for j in 0..cols {
                        if allow[row + j] {
                            dot += grad[row + j] * out_data[row + j];
                        }
                    }
                    for j in 0..cols {
                        if allow[row + j] {
                            dx[row + j] = out_data[row + j] * (grad[row + j] - dot);
                        }
                    }
                }
                add_grad(&input, &dx);
            }
        }
        Op::LayerNorm { input, axis, eps } => {
            let (input, axis, eps) = (input.clone(), *axis, *eps);
            drop(node);
            if input.needs_grad() {
                let x = input.data();
                let (lanes, axis_len, stride) = lane_layout(&out_shape, axis);
                let n = axis_len as f64;
                let mut dx = vec![0.0; x.len()];
                for lane in 0..lanes {
                    let base = lane_base(lane, axis_len, stride);
                    let mut mean = 0.0;
                    for j in 0..axis_len {
                        mean += x[base + j * stride];
                    }
                    mean /= n;
                    let mut var = 0.0;
                    for j in 0..axis_len {
                        let d = x[base + j * stride] - mean;
                        var += d * d;
                    }
                    var /= n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let mut g_mean = 0.0;
                    let mut gy_mean = 0.0;
                    for j in 0..axis_len {
                        let idx = base + j * stride;
                        g_mean += grad[idx];
                        gy_mean += grad[idx] * out_data[idx];
                    }
                    g_mean /= n;
                    gy_mean /= n;
                    for j in 0..axis_len {
                        let idx = base + j * stride;
                        dx[idx] = inv * (grad[idx] - g_mean - out_data[idx] * gy_mean);
                    }
                }
                add_grad(&input, &dx);
            }
        }
        Op::Gelu(a) => {
            let a = a.clone();
            drop(node);
            if a.needs_grad() {
                let x = a.data();
                let da: Vec<f64> = grad
                    .iter()
                    .zip(&x)
                    .map(|(g, &xi)| g * gelu_grad(xi))
                    .collect();
                add_grad(&a, &da);
            }
        }
        Op::Relu(a) => {
            let a = a.clone();
            drop(node);
            if a.needs_grad() {
                let x = a.data();
                let da: Vec<f64> = grad
                    .iter()
                    .zip(&x)
                    .map(|(g, &xi)| if xi > 0.0 { *g } else { 0.0 })
                    .collect();
                add_grad(&a, &da);
            }
        }
        Op::Exp(a) => {
            let a = a.clone();
            drop(node);
            if a.needs_grad() {
                let da: Vec<f64> = grad
                    .iter()
                    .zip(&out_data)
                    .map(|(g, &y)| g * y)
                    .collect();
                add_grad(&a, &da);
            }
        }
        Op::Ln(a) => {
            let a = a.clone();
            drop(node);
            if a.needs_grad() {
                let x = a.data();
                let da: Vec<f64> = grad.iter().zip(&x).map(|(g, &xi)| g / xi).collect();
                add_grad(&a, &da);
            }
        }
        Op::Dropout { input, mask } => {
            let (input, mask) = (input.clone(), Rc::clone(mask));
            drop(node);
            if input.needs_grad() {
                let da: Vec<f64> = grad.iter().zip(mask.iter()).map(|(g, m)| g * m).collect();
                add_grad(&input, &da);
            }
        }
        Op::Concat { inputs, axis } => {
            let (inputs, axis) = (inputs.clone(), *axis);
            drop(node);
            let (_, out_axis_len, stride) = lane_layout(&out_shape, axis);
            let outer: usize = out_shape[..axis].iter().product();
            let mut offset = 0;
            for t in &inputs {
                let s = t.shape();
                let len = s[axis];
                if t.needs_grad() {
                    let mut d = vec![0.0; t.numel()];
                    for o in 0..outer {
                        for j in 0..len {
                            for k in 0..stride {
                                d[o * len * stride + j * stride + k] = grad
                                    [o * out_axis_len * stride + (offset + j) * stride + k];
                            }
                        }
                    }
                    add_grad(t, &d);
                }
                offset += len;
            }
        }
        Op::Slice { input, axis, start } => {
            let (input, axis, start) = (input.clone(), *axis, *start);
            drop(node);
            if input.needs_grad() {
                let in_shape = input.shape();
                let (_, in_axis_len, stride) = lane_layout(&in_shape, axis);
                let outer: usize = in_shape[..axis].iter().product();
                let len = out_shape[axis];
                let mut d = vec![0.0; input.numel()];
                for o in 0..outer {
                    for j in 0..len {
                        for k in 0..stride {
                            d[o * in_axis_len * stride + (start + j) * stride + k] =
                                grad[o * len * stride + j * stride + k];
                        }
                    }
                }
                add_grad(&input, &d);
            }
        }
        Op::Transpose(a) => {
            let a = a.clone();
            drop(node);
            if a.needs_grad() {
                let (n, m) = (out_shape[0], out_shape[1]);
                let mut d = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        d[j * n + i] = grad[i * m + j];
                    }
                }
                add_grad(&a, &d);
            }
        }
        Op::Reshape(a) => {
            let a = a.clone();
            drop(node);
            if a.needs_grad() {
                add_grad(&a, &grad);
            }
        }
        Op::MeanAxis { input, axis } => {
            let (input, axis) = (input.clone(), *axis);
            drop(node);
            if input.needs_grad() {
                let in_shape = input.shape();
                let (lanes, axis_len, stride) = lane_layout(&in_shape, axis);
                let scale = 1.0 / axis_len as f64;
                let mut d = vec![0.0; input.numel()];
                for lane in 0..lanes {
                    let base = lane_base(lane, axis_len, stride);
                    for j in 0..axis_len {
                        d[base + j * stride] = grad[lane] * scale;
                    }
                }
                add_grad(&input, &d);
            }
        }
        Op::SumAxis { input, axis } => {
            let (input, axis) = (input.clone(), *axis);
            drop(node);
            if input.needs_grad() {
                let in_shape = input.shape();
                let (lanes, axis_len, stride) = lane_layout(&in_shape, axis);
                let mut d = vec![0.0; input.numel()];
                for lane in 0..lanes {
                    let base = lane_base(lane, axis_len, stride);
                    for j in 0..axis_len {
                        d[base + j * stride] = grad[lane];
                    }
                }
                add_grad(&input, &d);
            }
        }
        Op::MaxAxis {
            input,
            axis,
            argmax,
        } => {
            let (input, axis, argmax) = (input.clone(), *axis, argmax.clone());
            drop(node);
            if input.needs_grad() {
                let in_shape = input.shape();
                let (lanes, axis_len, stride) = lane_layout(&in_shape, axis);
                let mut d = vec![0.0; input.numel()];
                for lane in 0..lanes {
                    let base = lane_base(lane, axis_len, stride);
                    d[base + argmax[lane] * stride] = grad[lane];
                }
                add_grad(&input, &d);
            }
        }
        Op::SumAll(a) => {
            let a = a.clone();
            drop(node);
            if a.needs_grad() {
                let d = vec![grad[0]; a.numel()];
                add_grad(&a, &d);
            }
        }
        Op::Embedding { table, ids } => {
            let (table, ids) = (table.clone(), Rc::clone(ids));
            drop(node);
            if table.needs_grad() {
                let dim = out_shape[1];
                let mut d = vec![0.0; table.numel()];
                for (i, &id) in ids.iter().enumerate() {
                    let row = id as usize * dim;
                    for k in 0..dim {
                        d[row + k] += grad[i * dim + k];
                    }
                }
                add_grad(&table, &d);
            }
        }
        Op::CosineSim { a, b } => {
            let (a, b) = (a.clone(), b.clone());
            drop(node);
            let (ad, bd) = (a.data(), b.data());
            let (as_, bs_) = (a.shape(), b.shape());
            let (p, d, n) = (as_[0], as_[1], bs_[0]);
            let a_norm: Vec<f64> = (0..p)
                .map(|i| ad[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect();
            let b_norm: Vec<f64> = (0..n)
                .map(|j| bd[j * d..(j + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect();
            let mut da = vec![0.0; p * d];
            let mut db = vec![0.0; n * d];
            for i in 0..p {
                for j in 0..n {
                    let g = grad[i * n + j];
                    if g == 0.0 {
                        continue;
                    }
                    let denom = a_norm[i] * b_norm[j];
                    if denom == 0.0 {
                        continue;
                    }
                    let s = out_data[i * n + j];
                    for k in 0..d {
                        da[i * d + k] +=
                            g * (bd[j * d + k] / denom - s * ad[i * d + k] / (a_norm[i] * a_norm[i]));
                        db[j * d + k] +=
                            g * (ad[i * d + k] / denom - s * bd[j * d + k] / (b_norm[j] * b_norm[j]));
                    }
                }
            }
            if a.needs_grad() {
                add_grad(&a, &da);
            }
            if b.needs_grad() {
                add_grad(&b, &db);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let t = Tensor::constant(&[2], vec![0.0, 0.0]);
        let s = t.softmax(0).unwrap();
        assert_close(&s.data(), &[0.5, 0.5], 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let t = Tensor::constant(&[2, 3], vec![1.0, -2.0, 0.5, 10.0, 10.0, 10.0]);
        let s = t.softmax(1).unwrap();
        let d = s.data();
        for row in 0..2 {
            let sum: f64 = d[row * 3..(row + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_softmax_zeroes_disallowed() {
        let t = Tensor::constant(&[1, 4], vec![5.0, 1.0, 2.0, 3.0]);
        let allow = Rc::new(vec![false, true, false, true]);
        let s = t.masked_softmax(&allow).unwrap();
        let d = s.data();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[2], 0.0);
        assert!((d[1] + d[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_empty_row_is_zero() {
        let t = Tensor::constant(&[1, 2], vec![1.0, 2.0]);
        let allow = Rc::new(vec![false, false]);
        let s = t.masked_softmax(&allow).unwrap();
        assert_eq!(s.data(), vec![0.0, 0.0]);
    }

    #[test]
    fn sum_backward_gives_ones() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]);
        let loss = x.sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn elementwise_product_backward() {
        let x = Tensor::param(&[2], vec![2.0, 3.0]);
        let y = Tensor::param(&[2], vec![5.0, 7.0]);
        let loss = x.mul(&y).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![5.0, 7.0]);
        assert_eq!(y.grad().unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn max_gradient_routes_to_lowest_tied_index() {
        let x = Tensor::param(&[3], vec![2.0, 5.0, 5.0]);
        let loss = x.max_axis(0).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn matmul_identity() {
        let a = Tensor::constant(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let eye = Tensor::constant(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let c = a.matmul(&eye).unwrap();
        assert_eq!(c.data(), a.data());
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let x = Tensor::param(&[2], vec![1.0, 1.0]);
        let loss = x.sum_all();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(&[2], vec![1.0, 1.0]);
        assert!(matches!(x.backward(), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn dropout_deterministic_and_scaled() {
        let x = Tensor::constant(&[1000], vec![1.0; 1000]);
        let a = x.dropout(0.25, 42).unwrap();
        let b = x.dropout(0.25, 42).unwrap();
        assert_eq!(a.data(), b.data());
        let kept = a.data().iter().filter(|&&v| v != 0.0).count();
        assert!(kept > 600 && kept < 900);
        assert!(a.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12));
    }

    #[test]
    fn dropout_zero_probability_is_identity() {
        let x = Tensor::constant(&[4], vec![1.0, 2.0, 3.0, 4.0]);
        let y = x.dropout(0.0, 7).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn constant_graphs_build_no_tape() {
        let x = Tensor::constant(&[2, 2], vec![1.0; 4]);
        let y = x.matmul(&x).unwrap();
        assert!(!y.needs_grad());
        assert!(matches!(y.node.borrow().op, Op::Leaf));
    }

    #[test]
    fn broadcast_add_bias() {
        let x = Tensor::param(&[2, 3], vec![0.0; 6]);
        let b = Tensor::param(&[3], vec![1.0, 2.0, 3.0]);
        let y = x.add(&b).unwrap();
        assert_eq!(y.data(), vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let loss = y.sum_all();
        loss.backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let a = Tensor::constant(&[1, 3], vec![1.0, 2.0, 3.0]);
        let b = Tensor::constant(&[2, 3], vec![4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let c = Tensor::concat(&[a.clone(), b.clone()], 0).unwrap();
        assert_eq!(c.shape(), vec![3, 3]);
        assert_eq!(c.slice_rows(0, 1).unwrap().data(), a.data());
        assert_eq!(c.slice_rows(1, 3).unwrap().data(), b.data());

        let cols = Tensor::concat(&[a.clone(), a.clone()], 1).unwrap();
        assert_eq!(cols.shape(), vec![1, 6]);
        assert_eq!(cols.data(), vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn embedding_lookup_gathers_and_scatters() {
        let table = Tensor::param(&[3, 2], vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
        let out = Tensor::embedding_lookup(&table, &[2, 0, 2]).unwrap();
        assert_eq!(out.data(), vec![20.0, 21.0, 0.0, 1.0, 20.0, 21.0]);
        let loss = out.sum_all();
        loss.backward().unwrap();
        assert_eq!(table.grad().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn cosine_sim_zero_norm_rows_are_zero() {
        let a = Tensor::constant(&[2, 2], vec![0.0, 0.0, 1.0, 0.0]);
        let b = Tensor::constant(&[1, 2], vec![1.0, 0.0]);
        let s = Tensor::cosine_sim(&a, &b).unwrap();
        assert_eq!(s.data(), vec![0.0, 1.0]);
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let x = Tensor::constant(&[2, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, -1.0, -1.0, -1.0]);
        let y = x.layer_norm(1, 1e-9).unwrap();
        let d = y.data();
        let mean: f64 = d[0..4].iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        // Constant row normalizes to zeros.
        assert!(d[4..8].iter().all(|v| v.abs() < 1e-3));
    }
}
