//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Every operation pushes a node holding its output value, the operation
//! tag and parent indices. [`Tape::backward`] walks the nodes in reverse
//! insertion order (a valid reverse topological order, since parents always
//! precede children) and builds each vector-Jacobian product *as new tape
//! nodes*. Gradients are therefore themselves differentiable, which is what
//! the R1 penalty needs.
//!
//! A tape is single-threaded; independent tapes may run concurrently.
//! Values entering via [`Tape::constant`] never receive gradients and the
//! backward pass skips whole subgraphs that contain no [`Tape::leaf`].
//!
//! Shape violations panic with the operation name and the offending shapes.

use alloc::vec;
use alloc::vec::Vec;

use crate::kernels;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::Real;

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    AddScalar(Var, T),
    MulScalar(Var, T),
    Exp(Var),
    Sqrt(Var),
    Rsqrt(Var),
    Square(Var),
    Sigmoid(Var),
    Softplus(Var),
    LeakyRelu(Var, T),
    Matmul(Var, Var),
    Transpose(Var),
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    Conv2dDx { gy: Var, w: Var, stride: usize, pad: usize },
    Conv2dDw { x: Var, gy: Var, stride: usize, pad: usize },
    Upsample2x(Var),
    Downsum2x(Var),
    Blur(Var, Vec<T>),
    SumAll(Var),
    Expand(Var),
    SumAxis0(Var),
    RepeatAxis0(Var),
    SumAxis1(Var),
    RepeatAxis1(Var),
    SumHw(Var),
    ExpandSpatial(Var),
    SumC(Var),
    RepeatC(Var),
    Concat(Vec<Var>, usize),
    Narrow { x: Var, axis: usize, start: usize, len: usize },
    PadAxis { x: Var, axis: usize, before: usize },
    Reshape(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T = Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop all nodes. Outstanding `Var`s become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Register a differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Register a non-differentiable input; backward never descends into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar_const(&mut self, v: T) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let req = op_parents(&op).iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, req)
    }

    // ---- elementwise -------------------------------------------------

    fn zip<F: Fn(T, T) -> T>(&self, what: &str, a: Var, b: Var, f: F) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(
            ta.shape() == tb.shape(),
            "{}: shape mismatch {:?} vs {:?}",
            what,
            ta.shape(),
            tb.shape()
        );
        Tensor::new(
            ta.shape(),
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip("add", a, b, |x, y| x + y);
        self.push_op(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip("sub", a, b, |x, y| x - y);
        self.push_op(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip("mul", a, b, |x, y| x * y);
        self.push_op(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip("div", a, b, |x, y| x / y);
        self.push_op(v, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push_op(v, Op::Neg(a))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push_op(v, Op::AddScalar(a, c))
    }

    pub fn mul_scalar(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push_op(v, Op::MulScalar(a, c))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.exp());
        self.push_op(v, Op::Exp(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.sqrt());
        self.push_op(v, Op::Sqrt(a))
    }

    /// `(x + eps)^(-1/2)`; `eps` keeps the derivative finite at 0.
    pub fn rsqrt(&mut self, a: Var, eps: T) -> Var {
        let v = self.value(a).map(|x| T::ONE / (x + eps).sqrt());
        self.push_op(v, Op::Rsqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push_op(v, Op::Square(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid_stable);
        self.push_op(v, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.maxs(T::ZERO) + (-x.abs()).exp().ln_1p());
        self.push_op(v, Op::Softplus(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let v = self.value(a).map(|x| if x >= T::ZERO { x } else { slope * x });
        self.push_op(v, Op::LeakyRelu(a, slope))
    }

    // ---- linear algebra ----------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = kernels::matmul(self.value(a), self.value(b));
        self.push_op(v, Op::Matmul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = kernels::transpose2(self.value(a));
        self.push_op(v, Op::Transpose(a))
    }

    // ---- convolution family --------------------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let v = kernels::conv2d(self.value(x), self.value(w), stride, pad);
        self.push_op(v, Op::Conv2d { x, w, stride, pad })
    }

    pub fn conv2d_dx(&mut self, gy: Var, w: Var, stride: usize, pad: usize, h: usize, wi: usize) -> Var {
        let v = kernels::conv2d_dx(self.value(gy), self.value(w), stride, pad, h, wi);
        self.push_op(v, Op::Conv2dDx { gy, w, stride, pad })
    }

    pub fn conv2d_dw(&mut self, x: Var, gy: Var, stride: usize, pad: usize, kh: usize, kw: usize) -> Var {
        let v = kernels::conv2d_dw(self.value(x), self.value(gy), stride, pad, kh, kw);
        self.push_op(v, Op::Conv2dDw { x, gy, stride, pad })
    }

    pub fn upsample2x(&mut self, a: Var) -> Var {
        let v = kernels::upsample2x(self.value(a));
        self.push_op(v, Op::Upsample2x(a))
    }

    pub fn downsum2x(&mut self, a: Var) -> Var {
        let v = kernels::downsum2x(self.value(a));
        self.push_op(v, Op::Downsum2x(a))
    }

    /// Separable blur with a fixed symmetric kernel (zero padding).
    pub fn blur(&mut self, a: Var, kernel: &[T]) -> Var {
        for i in 0..kernel.len() / 2 {
            assert!(
                kernel[i] == kernel[kernel.len() - 1 - i],
                "blur: kernel must be symmetric"
            );
        }
        let v = kernels::blur_separable(self.value(a), kernel);
        self.push_op(v, Op::Blur(a, kernel.to_vec()))
    }

    // ---- reductions and broadcasts -------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(kernels::sum_slice(self.value(a).data()));
        self.push_op(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum_all(a);
        self.mul_scalar(s, T::ONE / T::from_f64(n as f64))
    }

    /// Broadcast a 1-element tensor to `shape`.
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a);
        assert!(t.numel() == 1, "expand: source must be scalar, got {:?}", t.shape());
        let v = Tensor::full(shape, t.item());
        self.push_op(v, Op::Expand(a))
    }

    /// `[M,N] -> [N]`, summing over rows.
    pub fn sum_axis0(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = rank2("sum_axis0", t);
        let mut out = Tensor::zeros(&[n]);
        for i in 0..m {
            kernels::axpy(T::ONE, &t.data()[i * n..(i + 1) * n], out.data_mut());
        }
        self.push_op(out, Op::SumAxis0(a))
    }

    /// `[N] -> [M,N]`, replicating the row.
    pub fn repeat_axis0(&mut self, a: Var, m: usize) -> Var {
        let t = self.value(a);
        assert!(t.shape().len() == 1, "repeat_axis0: expected rank 1, got {:?}", t.shape());
        let n = t.numel();
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            out.data_mut()[i * n..(i + 1) * n].copy_from_slice(t.data());
        }
        self.push_op(out, Op::RepeatAxis0(a))
    }

    /// `[M,N] -> [M]`, summing over columns.
    pub fn sum_axis1(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = rank2("sum_axis1", t);
        let out = Tensor::from_fn(&[m], |i| kernels::sum_slice(&t.data()[i * n..(i + 1) * n]));
        self.push_op(out, Op::SumAxis1(a))
    }

    /// `[M] -> [M,N]`, replicating the column.
    pub fn repeat_axis1(&mut self, a: Var, n: usize) -> Var {
        let t = self.value(a);
        assert!(t.shape().len() == 1, "repeat_axis1: expected rank 1, got {:?}", t.shape());
        let m = t.numel();
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            let v = t.data()[i];
            for o in out.data_mut()[i * n..(i + 1) * n].iter_mut() {
                *o = v;
            }
        }
        self.push_op(out, Op::RepeatAxis1(a))
    }

    /// `[B,C,H,W] -> [B,C]`, summing the spatial extent.
    pub fn sum_hw(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (b, c, h, w) = rank4("sum_hw", t);
        let out = Tensor::from_fn(&[b, c], |i| {
            kernels::sum_slice(&t.data()[i * h * w..(i + 1) * h * w])
        });
        self.push_op(out, Op::SumHw(a))
    }

    /// `[B,C] -> [B,C,H,W]`, replicating over space.
    pub fn expand_spatial(&mut self, a: Var, h: usize, w: usize) -> Var {
        let t = self.value(a);
        let (b, c) = rank2("expand_spatial", t);
        let mut out = Tensor::zeros(&[b, c, h, w]);
        for i in 0..b * c {
            let v = t.data()[i];
            for o in out.data_mut()[i * h * w..(i + 1) * h * w].iter_mut() {
                *o = v;
            }
        }
        self.push_op(out, Op::ExpandSpatial(a))
    }

    /// `[B,C,H,W] -> [B,1,H,W]`, summing channels.
    pub fn sum_c(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (b, c, h, w) = rank4("sum_c", t);
        let hw = h * w;
        let mut out = Tensor::zeros(&[b, 1, h, w]);
        for bi in 0..b {
            let ob = bi * hw;
            for ci in 0..c {
                let xb = (bi * c + ci) * hw;
                kernels::axpy(T::ONE, &t.data()[xb..xb + hw], &mut out.data_mut()[ob..ob + hw]);
            }
        }
        self.push_op(out, Op::SumC(a))
    }

    /// `[B,1,H,W] -> [B,C,H,W]`, replicating over channels.
    pub fn repeat_c(&mut self, a: Var, c: usize) -> Var {
        let t = self.value(a);
        let (b, c1, h, w) = rank4("repeat_c", t);
        assert!(c1 == 1, "repeat_c: expected single channel, got {:?}", t.shape());
        let hw = h * w;
        let mut out = Tensor::zeros(&[b, c, h, w]);
        for bi in 0..b {
            let src = &t.data()[bi * hw..(bi + 1) * hw];
            for ci in 0..c {
                let ob = (bi * c + ci) * hw;
                out.data_mut()[ob..ob + hw].copy_from_slice(src);
            }
        }
        self.push_op(out, Op::RepeatC(a))
    }

    // ---- structure ------------------------------------------------------

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat: no inputs");
        let first = self.value(parts[0]).shape().to_vec();
        assert!(axis < first.len(), "concat: axis {} out of range for {:?}", axis, first);
        let mut axis_total = 0usize;
        for &p in parts {
            let s = self.value(p).shape();
            assert!(
                s.len() == first.len()
                    && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b),
                "concat: incompatible shapes {:?} vs {:?} on axis {}",
                s,
                first,
                axis
            );
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Tensor::zeros(&shape);
        let mut offset = 0usize;
        for &p in parts {
            let t = self.value(p);
            let len = t.shape()[axis];
            for o in 0..outer {
                let src = &t.data()[o * len * inner..(o + 1) * len * inner];
                let dst_start = (o * axis_total + offset) * inner;
                out.data_mut()[dst_start..dst_start + len * inner].copy_from_slice(src);
            }
            offset += len;
        }
        self.push_op(out, Op::Concat(parts.to_vec(), axis))
    }

    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let t = self.value(a);
        let shape = t.shape().to_vec();
        assert!(axis < shape.len(), "narrow: axis {} out of range for {:?}", axis, shape);
        assert!(
            start + len <= shape[axis],
            "narrow: range {}..{} exceeds extent {} of {:?}",
            start,
            start + len,
            shape[axis],
            shape
        );
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut new_shape = shape.clone();
        new_shape[axis] = len;
        let mut out = Tensor::zeros(&new_shape);
        for o in 0..outer {
            let src_start = (o * shape[axis] + start) * inner;
            out.data_mut()[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&t.data()[src_start..src_start + len * inner]);
        }
        self.push_op(out, Op::Narrow { x: a, axis, start, len })
    }

    pub fn pad_axis(&mut self, a: Var, axis: usize, before: usize, after: usize) -> Var {
        let t = self.value(a);
        let shape = t.shape().to_vec();
        assert!(axis < shape.len(), "pad_axis: axis {} out of range for {:?}", axis, shape);
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let mut new_shape = shape.clone();
        new_shape[axis] = before + len + after;
        let mut out = Tensor::zeros(&new_shape);
        for o in 0..outer {
            let dst_start = (o * new_shape[axis] + before) * inner;
            out.data_mut()[dst_start..dst_start + len * inner]
                .copy_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
        }
        self.push_op(out, Op::PadAxis { x: a, axis, before })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).reshaped(shape);
        self.push_op(v, Op::Reshape(a))
    }

    // ---- backward -------------------------------------------------------

    /// Reverse pass from a scalar loss. Gradient tensors are appended to the
    /// tape as ordinary nodes, so they can participate in further losses
    /// (double backprop). Untouched leaves report no gradient; callers that
    /// want zeros ask [`Gradients::tensor_or_zeros`].
    pub fn backward(&mut self, loss: Var) -> Gradients {
        assert!(
            self.value(loss).numel() == 1,
            "backward: loss must be scalar, got {:?}",
            self.shape(loss)
        );
        let upto = loss.0;
        let mut grads: Vec<Option<Var>> = vec![None; upto + 1];
        grads[upto] = Some(self.constant(Tensor::scalar(T::ONE)));
        for i in (0..=upto).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i] {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            let out = Var(i);
            self.vjp(&op, out, g, &mut grads);
        }
        Gradients { grads }
    }

    fn accumulate(&mut self, grads: &mut [Option<Var>], target: Var, contribution: Var) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        debug_assert!(
            self.shape(target) == self.shape(contribution),
            "gradient shape {:?} does not match value shape {:?}",
            self.shape(contribution),
            self.shape(target)
        );
        grads[target.0] = Some(match grads[target.0] {
            None => contribution,
            Some(existing) => self.add(existing, contribution),
        });
    }

    fn vjp(&mut self, op: &Op<T>, out: Var, g: Var, grads: &mut [Option<Var>]) {
        match *op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.accumulate(grads, a, g);
                self.accumulate(grads, b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g);
                let nb = self.neg(g);
                self.accumulate(grads, b, nb);
            }
            Op::Mul(a, b) => {
                if self.requires_grad(a) {
                    let ga = self.mul(g, b);
                    self.accumulate(grads, a, ga);
                }
                if self.requires_grad(b) {
                    let gb = self.mul(g, a);
                    self.accumulate(grads, b, gb);
                }
            }
            Op::Div(a, b) => {
                if self.requires_grad(a) {
                    let ga = self.div(g, b);
                    self.accumulate(grads, a, ga);
                }
                if self.requires_grad(b) {
                    let q = self.div(out, b);
                    let gq = self.mul(g, q);
                    let gb = self.neg(gq);
                    self.accumulate(grads, b, gb);
                }
            }
            Op::Neg(a) => {
                let ga = self.neg(g);
                self.accumulate(grads, a, ga);
            }
            Op::AddScalar(a, _) => self.accumulate(grads, a, g),
            Op::MulScalar(a, c) => {
                let ga = self.mul_scalar(g, c);
                self.accumulate(grads, a, ga);
            }
            Op::Exp(a) => {
                let ga = self.mul(g, out);
                self.accumulate(grads, a, ga);
            }
            Op::Sqrt(a) => {
                let q = self.div(g, out);
                let ga = self.mul_scalar(q, T::from_f64(0.5));
                self.accumulate(grads, a, ga);
            }
            Op::Rsqrt(a) => {
                // d/dx (x+e)^(-1/2) = -1/2 (x+e)^(-3/2) = -1/2 out^3
                let o2 = self.square(out);
                let o3 = self.mul(out, o2);
                let go3 = self.mul(g, o3);
                let ga = self.mul_scalar(go3, T::from_f64(-0.5));
                self.accumulate(grads, a, ga);
            }
            Op::Square(a) => {
                let two_a = self.mul_scalar(a, T::from_f64(2.0));
                let ga = self.mul(g, two_a);
                self.accumulate(grads, a, ga);
            }
            Op::Sigmoid(a) => {
                let no = self.neg(out);
                let omo = self.add_scalar(no, T::ONE);
                let d = self.mul(out, omo);
                let ga = self.mul(g, d);
                self.accumulate(grads, a, ga);
            }
            Op::Softplus(a) => {
                let s = self.sigmoid(a);
                let ga = self.mul(g, s);
                self.accumulate(grads, a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                // Piecewise-constant factor; second derivative is zero a.e.
                let mask = self.value(a).map(|x| if x >= T::ZERO { T::ONE } else { slope });
                let m = self.constant(mask);
                let ga = self.mul(g, m);
                self.accumulate(grads, a, ga);
            }
            Op::Matmul(a, b) => {
                if self.requires_grad(a) {
                    let bt = self.transpose(b);
                    let ga = self.matmul(g, bt);
                    self.accumulate(grads, a, ga);
                }
                if self.requires_grad(b) {
                    let at = self.transpose(a);
                    let gb = self.matmul(at, g);
                    self.accumulate(grads, b, gb);
                }
            }
            Op::Transpose(a) => {
                let ga = self.transpose(g);
                self.accumulate(grads, a, ga);
            }
            Op::Conv2d { x, w, stride, pad } => {
                if self.requires_grad(x) {
                    let (h, wi) = {
                        let s = self.shape(x);
                        (s[2], s[3])
                    };
                    let gx = self.conv2d_dx(g, w, stride, pad, h, wi);
                    self.accumulate(grads, x, gx);
                }
                if self.requires_grad(w) {
                    let (kh, kw) = {
                        let s = self.shape(w);
                        (s[2], s[3])
                    };
                    let gw = self.conv2d_dw(x, g, stride, pad, kh, kw);
                    self.accumulate(grads, w, gw);
                }
            }
            Op::Conv2dDx { gy, w, stride, pad, .. } => {
                if self.requires_grad(gy) {
                    let ggy = self.conv2d(g, w, stride, pad);
                    self.accumulate(grads, gy, ggy);
                }
                if self.requires_grad(w) {
                    let (kh, kw) = {
                        let s = self.shape(w);
                        (s[2], s[3])
                    };
                    let gw = self.conv2d_dw(g, gy, stride, pad, kh, kw);
                    self.accumulate(grads, w, gw);
                }
            }
            Op::Conv2dDw { x, gy, stride, pad, .. } => {
                if self.requires_grad(x) {
                    let (h, wi) = {
                        let s = self.shape(x);
                        (s[2], s[3])
                    };
                    let gx = self.conv2d_dx(gy, g, stride, pad, h, wi);
                    self.accumulate(grads, x, gx);
                }
                if self.requires_grad(gy) {
                    let ggy = self.conv2d(x, g, stride, pad);
                    self.accumulate(grads, gy, ggy);
                }
            }
            Op::Upsample2x(a) => {
                let ga = self.downsum2x(g);
                self.accumulate(grads, a, ga);
            }
            Op::Downsum2x(a) => {
                let ga = self.upsample2x(g);
                self.accumulate(grads, a, ga);
            }
            Op::Blur(a, ref kernel) => {
                // symmetric kernel with zero padding is self-adjoint
                let k = kernel.clone();
                let ga = self.blur(g, &k);
                self.accumulate(grads, a, ga);
            }
            Op::SumAll(a) => {
                let shape = self.shape(a).to_vec();
                let ga = self.expand(g, &shape);
                self.accumulate(grads, a, ga);
            }
            Op::Expand(a) => {
                let ga = self.sum_all(g);
                self.accumulate(grads, a, ga);
            }
            Op::SumAxis0(a) => {
                let m = self.shape(a)[0];
                let ga = self.repeat_axis0(g, m);
                self.accumulate(grads, a, ga);
            }
            Op::RepeatAxis0(a) => {
                let ga = self.sum_axis0(g);
                self.accumulate(grads, a, ga);
            }
            Op::SumAxis1(a) => {
                let n = self.shape(a)[1];
                let ga = self.repeat_axis1(g, n);
                self.accumulate(grads, a, ga);
            }
            Op::RepeatAxis1(a) => {
                let ga = self.sum_axis1(g);
                self.accumulate(grads, a, ga);
            }
            Op::SumHw(a) => {
                let (h, w) = {
                    let s = self.shape(a);
                    (s[2], s[3])
                };
                let ga = self.expand_spatial(g, h, w);
                self.accumulate(grads, a, ga);
            }
            Op::ExpandSpatial(a) => {
                let ga = self.sum_hw(g);
                self.accumulate(grads, a, ga);
            }
            Op::SumC(a) => {
                let c = self.shape(a)[1];
                let ga = self.repeat_c(g, c);
                self.accumulate(grads, a, ga);
            }
            Op::RepeatC(a) => {
                let ga = self.sum_c(g);
                self.accumulate(grads, a, ga);
            }
            Op::Concat(ref parts, axis) => {
                let parts = parts.clone();
                let mut offset = 0usize;
                for p in parts {
                    let len = self.shape(p)[axis];
                    let gp = self.narrow(g, axis, offset, len);
                    self.accumulate(grads, p, gp);
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start, len } => {
                let total = self.shape(x)[axis];
                let ga = self.pad_axis(g, axis, start, total - start - len);
                self.accumulate(grads, x, ga);
            }
            Op::PadAxis { x, axis, before } => {
                let len = self.shape(x)[axis];
                let ga = self.narrow(g, axis, before, len);
                self.accumulate(grads, x, ga);
            }
            Op::Reshape(a) => {
                let shape = self.shape(a).to_vec();
                let ga = self.reshape(g, &shape);
                self.accumulate(grads, a, ga);
            }
        }
    }
}

fn op_parents<T>(op: &Op<T>) -> Vec<Var> {
    match *op {
        Op::Leaf | Op::Constant => Vec::new(),
        Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Div(a, b)
        | Op::Matmul(a, b) => vec![a, b],
        Op::Neg(a)
        | Op::AddScalar(a, _)
        | Op::MulScalar(a, _)
        | Op::Exp(a)
        | Op::Sqrt(a)
        | Op::Rsqrt(a)
        | Op::Square(a)
        | Op::Sigmoid(a)
        | Op::Softplus(a)
        | Op::LeakyRelu(a, _)
        | Op::Transpose(a)
        | Op::Upsample2x(a)
        | Op::Downsum2x(a)
        | Op::Blur(a, _)
        | Op::SumAll(a)
        | Op::Expand(a)
        | Op::SumAxis0(a)
        | Op::RepeatAxis0(a)
        | Op::SumAxis1(a)
        | Op::RepeatAxis1(a)
        | Op::SumHw(a)
        | Op::ExpandSpatial(a)
        | Op::SumC(a)
        | Op::RepeatC(a)
        | Op::Narrow { x: a, .. }
        | Op::PadAxis { x: a, .. }
        | Op::Reshape(a) => vec![a],
        Op::Conv2d { x, w, .. } => vec![x, w],
        Op::Conv2dDx { gy, w, .. } => vec![gy, w],
        Op::Conv2dDw { x, gy, .. } => vec![x, gy],
        Op::Concat(ref parts, _) => parts.clone(),
    }
}

fn sigmoid_stable<T: Scalar>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

fn rank2<T: Scalar>(what: &str, t: &Tensor<T>) -> (usize, usize) {
    assert!(t.shape().len() == 2, "{}: expected rank 2, got {:?}", what, t.shape());
    (t.shape()[0], t.shape()[1])
}

fn rank4<T: Scalar>(what: &str, t: &Tensor<T>) -> (usize, usize, usize, usize) {
    assert!(t.shape().len() == 4, "{}: expected rank 4, got {:?}", what, t.shape());
    (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3])
}

/// Result of a backward pass: gradient vars per tape node.
pub struct Gradients {
    grads: Vec<Option<Var>>,
}

impl Gradients {
    pub fn var(&self, v: Var) -> Option<Var> {
        self.grads.get(v.0).copied().flatten()
    }

    pub fn tensor<'t, T: Scalar>(&self, tape: &'t Tape<T>, v: Var) -> Option<&'t Tensor<T>> {
        self.var(v).map(|g| tape.value(g))
    }

    pub fn tensor_or_zeros<T: Scalar>(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        match self.tensor(tape, v) {
            Some(t) => t.clone(),
            None => Tensor::zeros(tape.shape(v)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]));
        let sq = tape.square(p);
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss);
        assert_eq!(grads.tensor(&tape, p).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_only_loss_has_no_gradients() {
        let mut tape = Tape::<f32>::new();
        let c = tape.constant(Tensor::scalar(3.0));
        let p = tape.leaf(Tensor::scalar(1.0));
        let loss = tape.mul_scalar(c, 2.0);
        let grads = tape.backward(loss);
        assert!(grads.var(p).is_none());
        assert_eq!(grads.tensor_or_zeros(&tape, p).data(), &[0.0]);
    }

    #[test]
    fn leaky_relu_values() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::new(&[2], vec![-1.0, 2.0]));
        let y = tape.leaky_relu(x, 0.2);
        assert_eq!(tape.value(y).data(), &[-0.2, 2.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = 2p + 3p => d/dp = 5
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::scalar(1.5));
        let a = tape.mul_scalar(p, 2.0);
        let b = tape.mul_scalar(p, 3.0);
        let loss = tape.add(a, b);
        let grads = tape.backward(loss);
        assert!((grads.tensor(&tape, p).unwrap().item() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn double_backward_through_square() {
        // y = x^3; dy/dx = 3x^2; d2y/dx2 = 6x
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let x2 = tape.square(x);
        let y = tape.mul(x2, x);
        let g1 = tape.backward(y);
        let dydx = g1.var(x).unwrap();
        assert!((tape.value(dydx).item() - 12.0).abs() < 1e-12);
        let g2 = tape.backward(dydx);
        let d2 = g2.var(x).unwrap();
        assert!((tape.value(d2).item() - 12.0).abs() < 1e-12, "6x = 12 at x=2");
    }

    #[test]
    #[should_panic(expected = "backward: loss must be scalar")]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]));
        let y = tape.square(x);
        let _ = tape.backward(y);
    }

    #[test]
    #[should_panic(expected = "add: shape mismatch")]
    fn add_rejects_shape_mismatch() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]));
        let b = tape.leaf(Tensor::new(&[3], vec![1.0, 2.0, 3.0]));
        let _ = tape.add(a, b);
    }

    #[test]
    fn ops_do_not_mutate_inputs() {
        let mut tape = Tape::<f32>::new();
        let src = Tensor::new(&[2, 2], vec![1.0, -2.0, 3.0, -4.0]);
        let a = tape.leaf(src.clone());
        let _ = tape.leaky_relu(a, 0.1);
        let _ = tape.square(a);
        let s = tape.sum_all(a);
        let _ = tape.backward(s);
        assert!(tape.value(a).bitwise_eq(&src));
    }
}
