//! Reverse-mode differentiation over a flat record of matrix operations.
//!
//! A [`Tape`] owns every intermediate value. Leaves are constants,
//! differentiable inputs, or parameters bound to a [`ParamStore`] slot.
//! [`Tape::backward`] performs one reverse sweep and returns [`Gradients`]
//! for every node that requires a gradient.

use super::params::{ParamStore, StoreId};
use super::tensor::{gemm, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ParamRef {
    store: StoreId,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Scale(Var, f64),
    Mish(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    SumCols(Var),
    Mean(Var),
    Sum(Var),
    Min(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Scale(..) => "scale",
            Op::Mish(_) => "mish",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Softplus(_) => "softplus",
            Op::Square(_) => "square",
            Op::Clamp(..) => "clamp",
            Op::Concat(_) => "concat",
            Op::SliceCols(..) => "slice_cols",
            Op::SumCols(_) => "sum_cols",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::Min(..) => "min",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(Var, ParamRef)>,
    non_finite: Option<String>,
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `tanh(softplus(x)) = n / (n + 2)` with `n = e^x (e^x + 2)`; one exp.
#[inline]
fn tanh_softplus(x: f64) -> f64 {
    if x > 20.0 {
        return 1.0;
    }
    let e = x.exp();
    let n = e * (e + 2.0);
    n / (n + 2.0)
}

/// `x * tanh(softplus(x))`.
#[inline]
pub fn mish(x: f64) -> f64 {
    x * tanh_softplus(x)
}

#[inline]
fn mish_grad(x: f64) -> f64 {
    let t = tanh_softplus(x);
    t + x * (1.0 - t * t) * sigmoid(x)
}

/// How the right operand of a binary op is broadcast against the left.
#[derive(Clone, Copy)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

fn bcast_kind(lhs: &Tensor, rhs: &Tensor, op: &str) -> Bcast {
    match (lhs.shape(), rhs.shape()) {
        (a, b) if a == b => Bcast::Same,
        (_, [1, 1]) => Bcast::Scalar,
        ([_, c], [1, c2]) if c == c2 => Bcast::Row,
        ([r, _], [r2, 1]) if r == r2 => Bcast::Col,
        (a, b) => panic!("{op}: cannot broadcast {b:?} onto {a:?}"),
    }
}

#[inline]
fn bidx(kind: Bcast, r: usize, c: usize, rhs_cols: usize) -> usize {
    match kind {
        Bcast::Same => r * rhs_cols + c,
        Bcast::Row => c,
        Bcast::Col => r,
        Bcast::Scalar => 0,
    }
}

fn binary(lhs: &Tensor, rhs: &Tensor, kind: Bcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut out = Tensor::zeros(lhs.rows(), lhs.cols());
    let rc = rhs.cols();
    let (l, rd) = (lhs.data(), rhs.data());
    let cols = lhs.cols();
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let (r, c) = (i / cols, i % cols);
        *o = f(l[i], rd[bidx(kind, r, c, rc)]);
    }
    out
}

/// Sum `g` (shaped like the lhs) down to the rhs shape.
fn reduce_to(g: &Tensor, kind: Bcast, rhs_shape: [usize; 2]) -> Tensor {
    match kind {
        Bcast::Same => g.clone(),
        _ => {
            let mut out = Tensor::zeros(rhs_shape[0], rhs_shape[1]);
            let cols = g.cols();
            for (i, &v) in g.data().iter().enumerate() {
                let j = bidx(kind, i / cols, i % cols, rhs_shape[1]);
                out.data_mut()[j] += v;
            }
            out
        }
    }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// First non-finite intermediate, if any op produced one.
    pub fn non_finite(&self) -> Option<&str> {
        self.non_finite.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        if self.non_finite.is_none() && !value.all_finite() {
            self.non_finite = Some(format!("op `{}` at node {}", op.name(), self.nodes.len()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to parameter `index` of `store`. Untracked parameters act
    /// as constants (frozen networks) but gradients still flow to inputs.
    pub fn param(&mut self, store: &ParamStore, index: usize, track: bool) -> Var {
        let v = self.push(store.value(index).clone(), Op::Leaf, track);
        if track {
            self.params.push((
                v,
                ParamRef {
                    store: store.id(),
                    index,
                },
            ));
        }
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let kind = bcast_kind(self.value(a), self.value(b), "add");
        let v = binary(self.value(a), self.value(b), kind, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let kind = bcast_kind(self.value(a), self.value(b), "sub");
        let v = binary(self.value(a), self.value(b), kind, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let kind = bcast_kind(self.value(a), self.value(b), "mul");
        let v = binary(self.value(a), self.value(b), kind, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).scale(k);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, k), rg)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(v, op, rg)
    }

    pub fn mish(&mut self, a: Var) -> Var {
        self.unary(a, Op::Mish(a), mish)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_cols(&tensors).expect("concat_cols: row mismatch");
        let rg = self.rg(parts);
        self.push(v, Op::Concat(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice_cols(start, len);
        let rg = self.rg(&[a]);
        self.push(v, Op::SliceCols(a, start), rg)
    }

    /// Row sums as an `n x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
        let v = Tensor::from_vec(t.rows(), 1, data).expect("non-empty");
        let rg = self.rg(&[a]);
        self.push(v, Op::SumCols(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(&[a]);
        self.push(v, Op::Mean(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(v, Op::Sum(a), rg)
    }

    /// Elementwise minimum. Ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), f64::min);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Min(a, b), rg)
    }

    /// Reverse sweep from a `1 x 1` output with unit seed.
    pub fn backward_scalar(&self, output: Var) -> Result<Gradients> {
        let shape = self.nodes.get(output.0).map(|n| n.value.shape());
        if shape != Some([1, 1]) && !self.nodes.is_empty() {
            return Err(Error::shape("Tape::backward_scalar", "[1, 1]", format!("{shape:?}")));
        }
        self.backward(output, Tensor::scalar(1.0))
    }

    /// Reverse sweep from `output` seeded with `seed`.
    pub fn backward(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Usage("backward on an empty tape".into()));
        }
        if output.0 >= self.nodes.len() {
            return Err(Error::Usage(format!("output var {} is not on this tape", output.0)));
        }
        if let Some(where_) = &self.non_finite {
            return Err(Error::NonFinite(format!("forward pass produced NaN/Inf at {where_}")));
        }
        if seed.shape() != self.value(output).shape() {
            return Err(Error::shape(
                "Tape::backward seed",
                format!("{:?}", self.value(output).shape()),
                format!("{:?}", seed.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(seed);

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let grads_finite = grads.iter().flatten().all(Tensor::all_finite);
        if !grads_finite {
            return Err(Error::NonFinite("backward pass produced NaN/Inf gradient".into()));
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        let x = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let kind = bcast_kind(x(*a), x(*b), "add");
                if wants(*b) {
                    acc(*b, reduce_to(g, kind, x(*b).shape()));
                }
                acc(*a, g.clone());
            }
            Op::Sub(a, b) => {
                let kind = bcast_kind(x(*a), x(*b), "sub");
                if wants(*b) {
                    acc(*b, reduce_to(&g.scale(-1.0), kind, x(*b).shape()));
                }
                acc(*a, g.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (x(*a), x(*b));
                let kind = bcast_kind(av, bv, "mul");
                if wants(*a) {
                    acc(*a, binary(g, bv, kind, |gi, bi| gi * bi));
                }
                if wants(*b) {
                    let ga = g.zip_map(av, |gi, ai| gi * ai);
                    acc(*b, reduce_to(&ga, kind, bv.shape()));
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (x(*a), x(*b));
                if wants(*a) {
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    gemm(g, false, bv, true, &mut ga, 0.0);
                    acc(*a, ga);
                }
                if wants(*b) {
                    let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                    gemm(av, true, g, false, &mut gb, 0.0);
                    acc(*b, gb);
                }
            }
            Op::Scale(a, k) => acc(*a, g.scale(*k)),
            Op::Mish(a) => acc(*a, g.zip_map(x(*a), |gi, xi| gi * mish_grad(xi))),
            Op::Relu(a) => acc(*a, g.zip_map(x(*a), |gi, xi| if xi > 0.0 { gi } else { 0.0 })),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |gi, yi| gi * (1.0 - yi * yi))),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |gi, yi| gi * yi)),
            Op::Log(a) => acc(*a, g.zip_map(x(*a), |gi, xi| gi / xi)),
            Op::Softplus(a) => acc(*a, g.zip_map(x(*a), |gi, xi| gi * sigmoid(xi))),
            Op::Square(a) => acc(*a, g.zip_map(x(*a), |gi, xi| 2.0 * gi * xi)),
            Op::Clamp(a, lo, hi) => acc(
                *a,
                g.zip_map(x(*a), |gi, xi| if xi >= *lo && xi <= *hi { gi } else { 0.0 }),
            ),
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = x(*p).cols();
                    if wants(*p) {
                        acc(*p, g.slice_cols(start, w));
                    }
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                let av = x(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        ga.set(r, start + c, g.get(r, c));
                    }
                }
                acc(*a, ga);
            }
            Op::SumCols(a) => {
                let av = x(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let gr = g.get(r, 0);
                    for c in 0..av.cols() {
                        ga.set(r, c, gr);
                    }
                }
                acc(*a, ga);
            }
            Op::Mean(a) => {
                let av = x(*a);
                let k = g.item() / av.len() as f64;
                acc(*a, Tensor::full(av.rows(), av.cols(), k));
            }
            Op::Sum(a) => {
                let av = x(*a);
                acc(*a, Tensor::full(av.rows(), av.cols(), g.item()));
            }
            Op::Min(a, b) => {
                let (av, bv) = (x(*a), x(*b));
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                let mut gb = Tensor::zeros(av.rows(), av.cols());
                for i in 0..av.len() {
                    if av.data()[i] <= bv.data()[i] {
                        ga.data_mut()[i] = g.data()[i];
                    } else {
                        gb.data_mut()[i] = g.data()[i];
                    }
                }
                acc(*a, ga);
                acc(*b, gb);
            }
        }
    }
}

/// Result of one reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(Var, ParamRef)>,
}

impl Gradients {
    /// Gradient with respect to a node, if any path reached it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Per-parameter gradients for `store`, summed over every binding on the
    /// tape. Parameters the output does not depend on get zeros.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = (0..store.len())
            .map(|i| {
                let p = store.value(i);
                Tensor::zeros(p.rows(), p.cols())
            })
            .collect();
        for (v, r) in &self.params {
            if r.store != store.id() {
                continue;
            }
            if let Some(g) = self.wrt(*v) {
                out[r.index].add_assign(g);
            }
        }
        out
    }

    /// True when at least one parameter of `store` is bound on the tape.
    pub fn touches(&self, store: &ParamStore) -> bool {
        self.params.iter().any(|(_, r)| r.store == store.id())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_derivative_at_origin_is_one() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(0.0));
        let y = tape.tanh(x);
        let g = tape.backward_scalar(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 1.0);
    }

    #[test]
    fn mish_matches_definition() {
        for i in -4000..=4000 {
            let x = i as f64 * 0.01;
            let direct = x * softplus(x).tanh();
            assert!((mish(x) - direct).abs() <= 1e-14 * direct.abs().max(1e-3), "x = {x}");
            let h = 1e-6;
            let fd = (mish(x + h) - mish(x - h)) / (2.0 * h);
            assert!((mish_grad(x) - fd).abs() < 1e-8, "x = {x}");
        }
        assert_eq!(mish(0.0), 0.0);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(3.0));
        let y = tape.add(x, x);
        let g = tape.backward_scalar(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 2.0);
    }

    #[test]
    fn activations_closed_forms() {
        assert_eq!(mish(0.0), 0.0);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(-1.0));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).item(), 0.0);
        // mish(x) = x tanh(ln(1 + e^x)); global minimum is about -0.3088
        for i in -400..400 {
            let x = f64::from(i) * 0.05;
            let direct = x * softplus(x).tanh();
            assert!((mish(x) - direct).abs() < 1e-12);
            assert!(mish(x) >= -0.31);
        }
    }

    #[test]
    fn empty_tape_backward_is_usage_error() {
        let tape = Tape::new();
        assert!(matches!(
            tape.backward(Var(0), Tensor::scalar(1.0)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn non_finite_forward_blocks_backward() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(-1.0));
        let y = tape.log(x);
        assert!(tape.non_finite().is_some());
        assert!(matches!(tape.backward_scalar(y), Err(Error::NonFinite(_))));
    }

    #[test]
    fn broadcast_gradients_reduce() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let row = tape.input(Tensor::row(&[1., 1., 1.]));
        let col = tape.input(Tensor::column(&[2., 3.]));
        let a = tape.add(x, row);
        let b = tape.mul(a, col);
        let s = tape.sum(b);
        let g = tape.backward_scalar(s).unwrap();
        assert_eq!(g.wrt(row).unwrap().data(), &[5., 5., 5.]);
        assert_eq!(g.wrt(col).unwrap().data(), &[9., 18.]);
        assert_eq!(g.wrt(x).unwrap().data(), &[2., 2., 2., 3., 3., 3.]);
    }

    #[test]
    fn min_routes_to_achiever() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::column(&[1.0, 5.0]));
        let b = tape.input(Tensor::column(&[2.0, 4.0]));
        let m = tape.min(a, b);
        let s = tape.sum(m);
        let g = tape.backward_scalar(s).unwrap();
        assert_eq!(g.wrt(a).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(g.wrt(b).unwrap().data(), &[0.0, 1.0]);
    }
}
