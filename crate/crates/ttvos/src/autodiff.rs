//! Reverse-mode automatic differentiation over a recording tape.
//!
//! A [`Tape`] owns an ordered list of recorded operations. Forward
//! calls on [`Var`] handles compute values eagerly and push a node
//! holding the input references and a backward rule. [`Tape::backward`]
//! walks the list in exact reverse recording order once; running it a
//! second time on the same tape is a usage error, a fresh forward pass
//! must re-record. Gradients come back in a [`Gradients`] map keyed by
//! variable (or parameter), never by mutating tensors in place.
//!
//! Independent tapes are independent: the tracker records a throwaway
//! no-grad tape per frame while the trainer records one tape per
//! supervised frame. A tape also counts the FLOPs of everything it
//! executes (see [`crate::ops::flops`] for the convention), which is
//! what the profiler's instrumented side reads.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::ops::{basic, conv, flops, pool};
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, Tensor};

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Scalar> {
    inputs: Vec<usize>,
    needs_grad: bool,
    backward: Option<BackwardFn<T>>,
}

static PARAM_UID: AtomicU64 = AtomicU64::new(1);

/// Named trainable leaf. Identity (not the stored value) is what ties
/// gradients and optimizer state to it, so the tensor can be swapped by
/// the optimizer between recorded passes.
pub struct Parameter<T: Scalar> {
    name: String,
    uid: u64,
    value: RefCell<Tensor<T>>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Parameter {
            name: name.into(),
            uid: PARAM_UID.fetch_add(1, Ordering::Relaxed),
            value: RefCell::new(value),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> Tensor<T> {
        self.value.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value.borrow().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value.borrow().numel()
    }

    /// Replaces the stored tensor. The shape is part of the parameter's
    /// contract and may not change.
    pub fn set(&self, t: Tensor<T>) -> Result<()> {
        if t.shape() != self.value.borrow().shape() {
            return Err(Error::Dimension(format!(
                "parameter {}: cannot replace {} with {}",
                self.name,
                fmt_shape(self.value.borrow().shape()),
                fmt_shape(t.shape())
            )));
        }
        *self.value.borrow_mut() = t;
        Ok(())
    }
}

pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    param_nodes: RefCell<HashMap<u64, usize>>,
    grad_enabled: bool,
    spent: Cell<bool>,
    flops: Cell<u64>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            param_nodes: RefCell::new(HashMap::new()),
            grad_enabled: true,
            spent: Cell::new(false),
            flops: Cell::new(0),
        }
    }

    /// Tape that records values and FLOPs but no backward rules; used
    /// for inference. Calling `backward` on it is a usage error.
    pub fn no_grad() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    /// Number of recorded operations (graph size).
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// FLOPs executed by ops recorded on this tape so far (forward
    /// passes only).
    pub fn flops(&self) -> u64 {
        self.flops.get()
    }

    fn add_flops(&self, n: u64) {
        self.flops.set(self.flops.get() + n);
    }

    fn push(
        &self,
        value: Tensor<T>,
        inputs: Vec<usize>,
        needs_grad: bool,
        backward: Option<BackwardFn<T>>,
    ) -> Var<'_, T> {
        let needs_grad = needs_grad && self.grad_enabled;
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            inputs,
            needs_grad,
            backward: if needs_grad { backward } else { None },
        });
        Var {
            tape: self,
            id,
            needs_grad,
            value,
        }
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, vec![], false, None)
    }

    /// Leaf whose gradient is wanted (finite-difference probes, loss
    /// inputs under test).
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, vec![], true, None)
    }

    /// Leaf tied to a parameter. Repeated reads of the same parameter
    /// on one tape return the same node so gradient contributions from
    /// every use accumulate.
    pub fn param<'t>(&'t self, p: &Parameter<T>) -> Var<'t, T> {
        if let Some(&id) = self.param_nodes.borrow().get(&p.uid) {
            let needs_grad = self.nodes.borrow()[id].needs_grad;
            return Var {
                tape: self,
                id,
                needs_grad,
                value: p.value(),
            };
        }
        let var = self.push(p.value(), vec![], true, None);
        self.param_nodes.borrow_mut().insert(p.uid, var.id);
        var
    }

    /// Reverse pass from a scalar loss. Visits recorded operations in
    /// exact reverse order, once; the tape is spent afterwards.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(self, loss.tape) {
            return Err(Error::Usage("backward called with a variable from another tape".into()));
        }
        if !self.grad_enabled {
            return Err(Error::Usage("backward on a no-grad tape".into()));
        }
        if self.spent.replace(true) {
            return Err(Error::Usage(
                "backward already ran on this tape; re-record the forward pass".into(),
            ));
        }
        if loss.value.numel() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar loss, got shape {}",
                fmt_shape(loss.value.shape())
            )));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(loss.value.shape().to_vec(), T::one()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(grad) = grads[id].clone() else { continue };
            let Some(bw) = &node.backward else { continue };
            let contribs = bw(&grad);
            debug_assert_eq!(contribs.len(), node.inputs.len());
            for (&src, contrib) in node.inputs.iter().zip(contribs.into_iter()) {
                let Some(c) = contrib else { continue };
                if !nodes[src].needs_grad {
                    continue;
                }
                grads[src] = Some(match grads[src].take() {
                    None => c,
                    Some(acc) => acc.zip_map(&c, |a, b| a + b)?,
                });
            }
        }
        Ok(Gradients {
            grads,
            param_nodes: self.param_nodes.borrow().clone(),
        })
    }
}

/// Result of a backward pass: per-node gradients plus the parameter
/// association captured from the tape.
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    param_nodes: HashMap<u64, usize>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. a recorded variable, if it received one.
    pub fn wrt(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient w.r.t. a parameter that was read on the tape.
    pub fn wrt_param(&self, p: &Parameter<T>) -> Option<&Tensor<T>> {
        self.param_nodes
            .get(&p.uid)
            .and_then(|&id| self.grads.get(id))
            .and_then(|g| g.as_ref())
    }
}

/// Handle to a value recorded on a tape. Cheap to clone; the tensor
/// buffer is shared.
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
    needs_grad: bool,
    value: Tensor<T>,
}

impl<'t, T: Scalar> std::fmt::Debug for Var<'t, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value)
    }
}

impl<'t, T: Scalar> Clone for Var<'t, T> {
    fn clone(&self) -> Self {
        Var {
            tape: self.tape,
            id: self.id,
            needs_grad: self.needs_grad,
            value: self.value.clone(),
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn needs_grad(&self) -> bool {
        self.needs_grad
    }

    fn same_tape(&self, other: &Var<'_, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Usage("variables come from different tapes".into()))
        }
    }

    fn binary_pointwise(
        &self,
        other: &Var<'t, T>,
        value: Tensor<T>,
        backward: BackwardFn<T>,
    ) -> Var<'t, T> {
        self.tape.add_flops(flops::elementwise(value.numel()));
        self.tape.push(
            value,
            vec![self.id, other.id],
            self.needs_grad || other.needs_grad,
            Some(backward),
        )
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let value = self.value.zip_map(&other.value, |a, b| a + b)?;
        Ok(self.binary_pointwise(
            other,
            value,
            Box::new(|g| vec![Some(g.clone()), Some(g.clone())]),
        ))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let value = self.value.zip_map(&other.value, |a, b| a - b)?;
        Ok(self.binary_pointwise(
            other,
            value,
            Box::new(|g| vec![Some(g.clone()), Some(g.map(|x| -x))]),
        ))
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let value = self.value.zip_map(&other.value, |a, b| a * b)?;
        let a = self.value.clone();
        let b = other.value.clone();
        Ok(self.binary_pointwise(
            other,
            value,
            Box::new(move |g| {
                vec![
                    Some(g.zip_map(&b, |gv, bv| gv * bv).expect("shape fixed")),
                    Some(g.zip_map(&a, |gv, av| gv * av).expect("shape fixed")),
                ]
            }),
        ))
    }

    pub fn scale(&self, k: f64) -> Var<'t, T> {
        let kt = T::c(k);
        let value = self.value.scale(kt);
        self.tape.add_flops(flops::elementwise(value.numel()));
        self.tape.push(
            value,
            vec![self.id],
            self.needs_grad,
            Some(Box::new(move |g| vec![Some(g.scale(kt))])),
        )
    }

    pub fn leaky_relu(&self, alpha: f64) -> Var<'t, T> {
        let a = T::c(alpha);
        let value = basic::leaky_relu(&self.value, a);
        let saved = self.value.clone();
        self.tape.add_flops(flops::elementwise(value.numel()));
        self.tape.push(
            value,
            vec![self.id],
            self.needs_grad,
            Some(Box::new(move |g| {
                vec![Some(basic::leaky_relu_backward(&saved, g, a))]
            })),
        )
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t, T>> {
        let value = basic::softmax(&self.value, axis)?;
        let out = value.clone();
        self.tape.add_flops(flops::softmax(value.numel()));
        Ok(self.tape.push(
            value,
            vec![self.id],
            self.needs_grad,
            Some(Box::new(move |g| {
                vec![Some(
                    basic::softmax_backward(&out, g, axis).expect("axis fixed at record time"),
                )]
            })),
        ))
    }

    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let value = basic::matmul(&self.value, &other.value)?;
        let (m, k) = (self.value.shape()[0], self.value.shape()[1]);
        let n = other.value.shape()[1];
        self.tape.add_flops(flops::matmul(m, k, n));
        let a = self.value.clone();
        let b = other.value.clone();
        Ok(self.tape.push(
            value,
            vec![self.id, other.id],
            self.needs_grad || other.needs_grad,
            Some(Box::new(move |g| {
                let bt = basic::transpose2d(&b).expect("rank checked");
                let at = basic::transpose2d(&a).expect("rank checked");
                vec![
                    Some(basic::matmul(g, &bt).expect("shapes fixed")),
                    Some(basic::matmul(&at, g).expect("shapes fixed")),
                ]
            })),
        ))
    }

    pub fn transpose(&self) -> Result<Var<'t, T>> {
        let value = basic::transpose2d(&self.value)?;
        Ok(self.tape.push(
            value,
            vec![self.id],
            self.needs_grad,
            Some(Box::new(|g| {
                vec![Some(basic::transpose2d(g).expect("rank fixed"))]
            })),
        ))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let value = self.value.reshape(shape.into())?;
        let orig = self.value.shape().to_vec();
        Ok(self.tape.push(
            value,
            vec![self.id],
            self.needs_grad,
            Some(Box::new(move |g| {
                vec![Some(g.reshape(orig.clone()).expect("numel fixed"))]
            })),
        ))
    }

    pub fn conv2d(
        &self,
        weight: &Var<'t, T>,
        bias: Option<&Var<'t, T>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var<'t, T>> {
        self.same_tape(weight)?;
        if let Some(b) = bias {
            self.same_tape(b)?;
        }
        let value = conv::conv2d(
            &self.value,
            &weight.value,
            bias.map(|b| &b.value),
            stride,
            padding,
            groups,
        )?;
        let d = conv::conv2d_dims(self.value.shape(), weight.value.shape(), stride, padding, groups)?;
        self.tape.add_flops(flops::conv2d(
            d.c_in,
            d.c_out,
            d.k,
            d.groups,
            d.h_out,
            d.w_out,
            bias.is_some(),
        ));
        let x = self.value.clone();
        let w = weight.value.clone();
        let has_bias = bias.is_some();
        let mut inputs = vec![self.id, weight.id];
        let mut needs = self.needs_grad || weight.needs_grad;
        if let Some(b) = bias {
            inputs.push(b.id);
            needs = needs || b.needs_grad;
        }
        Ok(self.tape.push(
            value,
            inputs,
            needs,
            Some(Box::new(move |g| {
                let (d_in, d_w, d_b) = conv::conv2d_backward(&x, &w, g, stride, padding, groups)
                    .expect("geometry fixed at record time");
                let mut out = vec![Some(d_in), Some(d_w)];
                if has_bias {
                    out.push(Some(d_b));
                }
                out
            })),
        ))
    }

    pub fn conv_transpose2d(
        &self,
        weight: &Var<'t, T>,
        bias: Option<&Var<'t, T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t, T>> {
        self.same_tape(weight)?;
        if let Some(b) = bias {
            self.same_tape(b)?;
        }
        let value = conv::conv_transpose2d(
            &self.value,
            &weight.value,
            bias.map(|b| &b.value),
            stride,
            padding,
        )?;
        let d = conv::conv_transpose2d_dims(self.value.shape(), weight.value.shape(), stride, padding)?;
        self.tape.add_flops(flops::conv_transpose2d(
            d.c_in,
            d.c_out,
            d.k,
            d.h_in,
            d.w_in,
            d.h_out,
            d.w_out,
            bias.is_some(),
        ));
        let x = self.value.clone();
        let w = weight.value.clone();
        let has_bias = bias.is_some();
        let mut inputs = vec![self.id, weight.id];
        let mut needs = self.needs_grad || weight.needs_grad;
        if let Some(b) = bias {
            inputs.push(b.id);
            needs = needs || b.needs_grad;
        }
        Ok(self.tape.push(
            value,
            inputs,
            needs,
            Some(Box::new(move |g| {
                let (d_in, d_w, d_b) =
                    conv::conv_transpose2d_backward(&x, &w, g, stride, padding)
                        .expect("geometry fixed at record time");
                let mut out = vec![Some(d_in), Some(d_w)];
                if has_bias {
                    out.push(Some(d_b));
                }
                out
            })),
        ))
    }

    pub fn avg_pool2d(&self, k: usize) -> Result<Var<'t, T>> {
        let value = pool::avg_pool2d(&self.value, k)?;
        self.tape.add_flops(flops::avg_pool2d(value.numel(), k));
        let in_shape = self.value.shape().to_vec();
        Ok(self.tape.push(
            value,
            vec![self.id],
            self.needs_grad,
            Some(Box::new(move |g| {
                vec![Some(
                    pool::avg_pool2d_backward(&in_shape, g, k).expect("geometry fixed"),
                )]
            })),
        ))
    }

    pub fn bilinear_resize(&self, h_out: usize, w_out: usize) -> Result<Var<'t, T>> {
        let value = pool::bilinear_resize(&self.value, h_out, w_out)?;
        self.tape.add_flops(flops::bilinear_resize(value.numel()));
        let in_shape = self.value.shape().to_vec();
        Ok(self.tape.push(
            value,
            vec![self.id],
            self.needs_grad,
            Some(Box::new(move |g| {
                vec![Some(
                    pool::bilinear_resize_backward(&in_shape, g).expect("geometry fixed"),
                )]
            })),
        ))
    }

    pub fn pixel_shuffle(&self, r: usize) -> Result<Var<'t, T>> {
        let value = basic::pixel_shuffle(&self.value, r)?;
        let in_shape = self.value.shape().to_vec();
        Ok(self.tape.push(
            value,
            vec![self.id],
            self.needs_grad,
            Some(Box::new(move |g| {
                vec![Some(basic::pixel_shuffle_backward(&in_shape, g, r))]
            })),
        ))
    }

    pub fn sum_all(&self) -> Var<'t, T> {
        let total = basic::sum_all(&self.value);
        self.tape.add_flops(flops::reduce(self.value.numel()));
        let in_shape = self.value.shape().to_vec();
        self.tape.push(
            Tensor::scalar(total),
            vec![self.id],
            self.needs_grad,
            Some(Box::new(move |g| {
                let gv = g.item().expect("scalar");
                vec![Some(Tensor::full(in_shape.clone(), gv))]
            })),
        )
    }

    pub fn mean_all(&self) -> Var<'t, T> {
        let n = self.value.numel();
        let total = basic::sum_all(&self.value) * T::c(1.0 / n as f64);
        self.tape.add_flops(flops::reduce(self.value.numel()) + 1);
        let in_shape = self.value.shape().to_vec();
        self.tape.push(
            Tensor::scalar(total),
            vec![self.id],
            self.needs_grad,
            Some(Box::new(move |g| {
                let gv = g.item().expect("scalar") * T::c(1.0 / n as f64);
                vec![Some(Tensor::full(in_shape.clone(), gv))]
            })),
        )
    }

    /// Mean over pixels of the per-pixel cross entropy between channel
    /// logits [C,H,W] and a one-hot target of the same shape. Stabilized
    /// with a per-pixel max shift; gradient is (softmax − onehot)/(H·W).
    pub fn cross_entropy_channel(&self, onehot: &Tensor<T>) -> Result<Var<'t, T>> {
        if self.value.rank() != 3 {
            return Err(Error::Dimension(format!(
                "cross_entropy_channel expects logits rank 3 (C,H,W), got {}",
                fmt_shape(self.value.shape())
            )));
        }
        if onehot.shape() != self.value.shape() {
            return Err(Error::Dimension(format!(
                "cross_entropy_channel target shape {} differs from logits {}",
                fmt_shape(onehot.shape()),
                fmt_shape(self.value.shape())
            )));
        }
        let (c, h, w) = (
            self.value.shape()[0],
            self.value.shape()[1],
            self.value.shape()[2],
        );
        let hw = h * w;
        let x = self.value.data();
        let t = onehot.data();
        let mut loss = T::zero();
        for px in 0..hw {
            let mut mx = x[px];
            for ci in 1..c {
                mx = mx.max(x[ci * hw + px]);
            }
            let mut lse = T::zero();
            for ci in 0..c {
                lse += (x[ci * hw + px] - mx).exp();
            }
            let lse = lse.ln() + mx;
            for ci in 0..c {
                let tv = t[ci * hw + px];
                if tv != T::zero() {
                    loss += tv * (lse - x[ci * hw + px]);
                }
            }
        }
        loss = loss * T::c(1.0 / hw as f64);
        self.tape
            .add_flops(flops::softmax(self.value.numel()) + 2 * self.value.numel() as u64);
        let logits = self.value.clone();
        let target = onehot.clone();
        Ok(self.tape.push(
            Tensor::scalar(loss),
            vec![self.id],
            self.needs_grad,
            Some(Box::new(move |g| {
                let gv = g.item().expect("scalar") * T::c(1.0 / hw as f64);
                let sm = basic::softmax(&logits, 0).expect("rank checked");
                vec![Some(
                    sm.zip_map(&target, |s, tv| (s - tv) * gv)
                        .expect("shape checked"),
                )]
            })),
        ))
    }
}

/// Channel-style concat of several variables along `axis`.
pub fn concat<'t, T: Scalar>(inputs: &[&Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Dimension("concat needs at least one input".into()))?;
    for v in inputs {
        first.same_tape(v)?;
    }
    let tensors: Vec<&Tensor<T>> = inputs.iter().map(|v| &v.value).collect();
    let value = basic::concat(&tensors, axis)?;
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|v| v.value.shape().to_vec()).collect();
    let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
    let needs = inputs.iter().any(|v| v.needs_grad);
    Ok(first.tape.push(
        value,
        ids,
        needs,
        Some(Box::new(move |g| {
            basic::concat_backward(&shapes, g, axis)
                .into_iter()
                .map(Some)
                .collect()
        })),
    ))
}
