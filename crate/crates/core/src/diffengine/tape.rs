use std::collections::BTreeMap;
use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The closed primitive set. Each variant has a paired finite-difference test.
#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Affine { x: Var, w: Var, b: Var },
    Concat(Var, Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleRows { x: Var, s: Var },
    Gather { src: Var, index: Arc<[usize]>, shape: Vec<usize> },
    IndexAdd { src: Var, rows: Arc<[usize]>, out_rows: usize },
    SumAxis { src: Var, axis: usize },
    Mse(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Affine { .. } => "affine",
            Op::Concat(..) => "concat",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::ScaleRows { .. } => "scale_rows",
            Op::Gather { .. } => "gather",
            Op::IndexAdd { .. } => "index_add",
            Op::SumAxis { .. } => "sum_axis",
            Op::Mse(..) => "mse",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf | Op::Constant => vec![],
            Op::MatMul(a, b)
            | Op::Concat(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Mse(a, b) => vec![a, b],
            Op::Affine { x, w, b } => vec![x, w, b],
            Op::Tanh(a) | Op::Relu(a) | Op::Sigmoid(a) | Op::Scale(a, _) => vec![a],
            Op::ScaleRows { x, s } => vec![x, s],
            Op::Gather { src, .. } | Op::IndexAdd { src, .. } | Op::SumAxis { src, .. } => {
                vec![src]
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Single-use record of a forward computation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it. Leaves are the differentiable inputs; constants are not.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaves: Vec<(String, Var)>,
    output: Option<Var>,
}

fn as_matrix(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::dim(op, format!("expected a 2-D operand, got shape {s:?}"))),
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("operand shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// `c = op(a) · op(b) + beta · c` on row-major buffers.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    // logical a is m×k, logical b is k×n
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe in-bounds row-major views of the given slices,
    // whose lengths are checked by the callers' shape validation.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn eval(op: &Op, nodes: &[Node]) -> Result<Tensor> {
    let v = |var: Var| &nodes[var.0].value;
    let name = op.name();
    let out = match op {
        Op::Leaf | Op::Constant => unreachable!("leaves and constants carry their own values"),
        Op::MatMul(a, b) => {
            let (a, b) = (v(*a), v(*b));
            let (m, k) = as_matrix(a, name)?;
            let (k2, n) = as_matrix(b, name)?;
            if k != k2 {
                return Err(Error::dim(name, format!("inner dimensions {k} and {k2} differ")));
            }
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
            Tensor::from_parts(vec![m, n], out)
        }
        Op::Affine { x, w, b } => {
            let (x, w, b) = (v(*x), v(*w), v(*b));
            let (m, k) = as_matrix(x, name)?;
            let (k2, n) = as_matrix(w, name)?;
            if k != k2 {
                return Err(Error::dim(name, format!("input width {k} but weight rows {k2}")));
            }
            if b.len() != n || b.shape().len() != 1 {
                return Err(Error::dim(
                    name,
                    format!("bias shape {:?} does not match output width {n}", b.shape()),
                ));
            }
            let mut out: Vec<f64> = b.data().repeat(m);
            gemm(m, k, n, x.data(), false, w.data(), false, 1.0, &mut out);
            Tensor::from_parts(vec![m, n], out)
        }
        Op::Concat(a, b) => {
            let (a, b) = (v(*a), v(*b));
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
                return Err(Error::dim(
                    name,
                    format!("leading axes of {sa:?} and {sb:?} differ"),
                ));
            }
            let (p, q) = (a.cols(), b.cols());
            let rows = a.len() / p;
            let mut out = Vec::with_capacity(a.len() + b.len());
            for r in 0..rows {
                out.extend_from_slice(&a.data()[r * p..(r + 1) * p]);
                out.extend_from_slice(&b.data()[r * q..(r + 1) * q]);
            }
            let mut shape = sa.to_vec();
            *shape.last_mut().expect("non-empty shape") = p + q;
            Tensor::from_parts(shape, out)
        }
        Op::Tanh(a) => v(*a).map(f64::tanh),
        Op::Relu(a) => v(*a).map(|x| x.max(0.0)),
        Op::Sigmoid(a) => v(*a).map(sigmoid),
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            let (a, b) = (v(*a), v(*b));
            same_shape(a, b, name)?;
            let f: fn(f64, f64) -> f64 = match op {
                Op::Add(..) => |x, y| x + y,
                Op::Sub(..) => |x, y| x - y,
                _ => |x, y| x * y,
            };
            let out = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_parts(a.shape().to_vec(), out)
        }
        Op::Scale(a, c) => {
            let c = *c;
            v(*a).map(|x| c * x)
        }
        Op::ScaleRows { x, s } => {
            let (x, s) = (v(*x), v(*s));
            let (r, c) = as_matrix(x, name)?;
            if s.shape() != [r, 1] {
                return Err(Error::dim(
                    name,
                    format!("row scale shape {:?} should be [{r}, 1]", s.shape()),
                ));
            }
            let mut out = x.data().to_vec();
            for (row, &f) in out.chunks_mut(c).zip(s.data()) {
                row.iter_mut().for_each(|e| *e *= f);
            }
            Tensor::from_parts(vec![r, c], out)
        }
        Op::Gather { src, index, shape } => {
            let src = v(*src);
            let len: usize = shape.iter().product();
            if len != index.len() || shape.iter().any(|&d| d == 0) {
                return Err(Error::dim(
                    name,
                    format!("shape {shape:?} does not hold {} indices", index.len()),
                ));
            }
            if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
                return Err(Error::dim(
                    name,
                    format!("index {bad} out of range for {} values", src.len()),
                ));
            }
            let out = index.iter().map(|&i| src.data()[i]).collect();
            Tensor::from_parts(shape.clone(), out)
        }
        Op::IndexAdd { src, rows, out_rows } => {
            let src = v(*src);
            let (r, c) = as_matrix(src, name)?;
            if rows.len() != r {
                return Err(Error::dim(
                    name,
                    format!("{} row targets for {r} source rows", rows.len()),
                ));
            }
            if *out_rows == 0 || rows.iter().any(|&t| t >= *out_rows) {
                return Err(Error::dim(name, format!("row target outside 0..{out_rows}")));
            }
            let mut out = vec![0.0; out_rows * c];
            for (e, &t) in rows.iter().enumerate() {
                let dst = &mut out[t * c..(t + 1) * c];
                for (d, s) in dst.iter_mut().zip(&src.data()[e * c..(e + 1) * c]) {
                    *d += s;
                }
            }
            Tensor::from_parts(vec![*out_rows, c], out)
        }
        Op::SumAxis { src, axis } => {
            let src = v(*src);
            let shape = src.shape();
            if *axis >= shape.len() {
                return Err(Error::dim(name, format!("axis {axis} for shape {shape:?}")));
            }
            let (outer, len, inner) = split_axis(shape, *axis);
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    let base = (o * len + l) * inner;
                    for i in 0..inner {
                        out[o * inner + i] += src.data()[base + i];
                    }
                }
            }
            let mut out_shape: Vec<usize> = shape.to_vec();
            out_shape.remove(*axis);
            if out_shape.is_empty() {
                out_shape.push(1);
            }
            Tensor::from_parts(out_shape, out)
        }
        Op::Mse(a, b) => {
            let (a, b) = (v(*a), v(*b));
            same_shape(a, b, name)?;
            let sum: f64 = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            Tensor::scalar(sum / a.len() as f64)
        }
    };
    Ok(out)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    /// Register a named differentiable input.
    pub fn leaf(&mut self, name: impl Into<String>, value: Tensor) -> Result<Var> {
        let name = name.into();
        if self.leaves.iter().any(|(n, _)| *n == name) {
            return Err(Error::Contract(format!("duplicate leaf `{name}`")));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("leaf `{name}`")));
        }
        let var = Var(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: true,
        });
        self.leaves.push((name, var));
        Ok(var)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric {
                node: self.nodes.len(),
                op: "constant",
            });
        }
        let var = Var(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Constant,
            value,
            requires_grad: false,
        });
        Ok(var)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn leaf_names(&self) -> impl Iterator<Item = &str> {
        self.leaves.iter().map(|(n, _)| n.as_str())
    }

    pub fn output(&self) -> Option<Var> {
        self.output
    }

    pub fn set_output(&mut self, var: Var) {
        self.output = Some(var);
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = eval(&op, &self.nodes)?;
        let node = self.nodes.len();
        if !value.is_finite() {
            return Err(Error::Numeric { node, op: op.name() });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(node))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.push(Op::Affine { x, w, b })
    }

    /// Concatenate along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Concat(a, b))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sigmoid(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        if !factor.is_finite() {
            return Err(Error::Numeric {
                node: self.nodes.len(),
                op: "scale",
            });
        }
        self.push(Op::Scale(a, factor))
    }

    /// Multiply row `i` of a `[r, c]` matrix by `s[i]`, `s` shaped `[r, 1]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        self.push(Op::ScaleRows { x, s })
    }

    /// `out.flat[k] = src.flat[index[k]]`, reshaped to `shape`.
    pub fn gather(&mut self, src: Var, index: Arc<[usize]>, shape: Vec<usize>) -> Result<Var> {
        self.push(Op::Gather { src, index, shape })
    }

    /// Select rows of a `[n, c]` matrix.
    pub fn gather_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(src);
        let (_, c) = as_matrix(t, "gather")?;
        let index: Arc<[usize]> = rows
            .iter()
            .flat_map(|&r| (r * c..(r + 1) * c).collect::<Vec<_>>())
            .collect();
        self.gather(src, index, vec![rows.len(), c])
    }

    /// Sum row `e` of a `[E, c]` matrix into row `rows[e]` of an `[out_rows, c]` result.
    pub fn index_add(&mut self, src: Var, rows: Arc<[usize]>, out_rows: usize) -> Result<Var> {
        self.push(Op::IndexAdd {
            src,
            rows,
            out_rows,
        })
    }

    pub fn sum_axis(&mut self, src: Var, axis: usize) -> Result<Var> {
        self.push(Op::SumAxis { src, axis })
    }

    /// Mean of squared differences, as a one-element tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mse(a, b))
    }

    /// Recompute every node from the recorded leaves and constants.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut fresh: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf | Op::Constant => node.value.clone(),
                ref op => eval(op, &fresh)?,
            };
            fresh.push(Node {
                op: node.op.clone(),
                value,
                requires_grad: node.requires_grad,
            });
        }
        Ok(fresh.into_iter().map(|n| n.value).collect())
    }

    /// True when a replay reproduces every cached value bit for bit.
    pub fn verify_replay(&self) -> Result<bool> {
        let fresh = self.replay()?;
        Ok(fresh.iter().zip(&self.nodes).all(|(a, n)| {
            a.shape() == n.value.shape()
                && a
                    .data()
                    .iter()
                    .zip(n.value.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        }))
    }

    /// Gradients of the scalar output with respect to every leaf.
    ///
    /// Leaves with no path to the output get zero tensors.
    pub fn backward(&self) -> Result<BTreeMap<String, Tensor>> {
        let out = self
            .output
            .ok_or_else(|| Error::Contract("tape has no output".into()))?;
        if self.nodes[out.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.nodes[out.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);
        for id in (0..=out.0).rev() {
            let Some(g) = (if matches!(self.nodes[id].op, Op::Leaf) {
                None
            } else {
                grads[id].take()
            }) else {
                continue;
            };
            self.backprop_node(id, &g, &mut grads);
        }
        Ok(self
            .leaves
            .iter()
            .map(|(name, var)| {
                let value = &self.nodes[var.0].value;
                let grad = match grads[var.0].take() {
                    Some(g) => Tensor::from_parts(value.shape().to_vec(), g),
                    None => Tensor::zeros(value.shape()),
                };
                (name.clone(), grad)
            })
            .collect())
    }

    fn backprop_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).cols();
                if wants(*a) {
                    let buf = slot(grads, *a, m * k);
                    gemm(m, n, k, g, false, val(*b).data(), true, 1.0, buf);
                }
                if wants(*b) {
                    let buf = slot(grads, *b, k * n);
                    gemm(k, m, n, val(*a).data(), true, g, false, 1.0, buf);
                }
            }
            Op::Affine { x, w, b } => {
                let (m, k) = (val(*x).rows(), val(*x).cols());
                let n = val(*w).cols();
                if wants(*x) {
                    let buf = slot(grads, *x, m * k);
                    gemm(m, n, k, g, false, val(*w).data(), true, 1.0, buf);
                }
                if wants(*w) {
                    let buf = slot(grads, *w, k * n);
                    gemm(k, m, n, val(*x).data(), true, g, false, 1.0, buf);
                }
                if wants(*b) {
                    let buf = slot(grads, *b, n);
                    for row in g.chunks(n) {
                        buf.iter_mut().zip(row).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Concat(a, b) => {
                let (p, q) = (val(*a).cols(), val(*b).cols());
                let rows = val(*a).len() / p;
                if wants(*a) {
                    let buf = slot(grads, *a, rows * p);
                    for r in 0..rows {
                        let src = &g[r * (p + q)..r * (p + q) + p];
                        add_into(&mut buf[r * p..(r + 1) * p], src);
                    }
                }
                if wants(*b) {
                    let buf = slot(grads, *b, rows * q);
                    for r in 0..rows {
                        let src = &g[r * (p + q) + p..(r + 1) * (p + q)];
                        add_into(&mut buf[r * q..(r + 1) * q], src);
                    }
                }
            }
            // tanh and sigmoid differentiate through their outputs, relu through its input
            Op::Tanh(a) if wants(*a) => unary(grads, *a, g, node.value.data(), |y| 1.0 - y * y),
            Op::Sigmoid(a) if wants(*a) => unary(grads, *a, g, node.value.data(), |y| y * (1.0 - y)),
            Op::Relu(a) if wants(*a) => {
                unary(grads, *a, g, val(*a).data(), |x| if x > 0.0 { 1.0 } else { 0.0 })
            }
            Op::Tanh(_) | Op::Sigmoid(_) | Op::Relu(_) => {}
            Op::Add(a, b) => {
                if wants(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if wants(*b) {
                    add_into(slot(grads, *b, g.len()), g);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if wants(*b) {
                    let buf = slot(grads, *b, g.len());
                    buf.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let other = val(*b).data();
                    let buf = slot(grads, *a, g.len());
                    for ((d, s), o) in buf.iter_mut().zip(g).zip(other) {
                        *d += s * o;
                    }
                }
                if wants(*b) {
                    let other = val(*a).data();
                    let buf = slot(grads, *b, g.len());
                    for ((d, s), o) in buf.iter_mut().zip(g).zip(other) {
                        *d += s * o;
                    }
                }
            }
            Op::Scale(a, c) => {
                if wants(*a) {
                    let buf = slot(grads, *a, g.len());
                    buf.iter_mut().zip(g).for_each(|(d, s)| *d += c * s);
                }
            }
            Op::ScaleRows { x, s } => {
                let c = val(*x).cols();
                if wants(*x) {
                    let sv = val(*s).data();
                    let buf = slot(grads, *x, g.len());
                    for ((drow, grow), f) in buf.chunks_mut(c).zip(g.chunks(c)).zip(sv) {
                        drow.iter_mut().zip(grow).for_each(|(d, s)| *d += s * f);
                    }
                }
                if wants(*s) {
                    let xv = val(*x).data();
                    let rows = xv.len() / c;
                    let buf = slot(grads, *s, rows);
                    for (r, d) in buf.iter_mut().enumerate() {
                        let dot: f64 = g[r * c..(r + 1) * c]
                            .iter()
                            .zip(&xv[r * c..(r + 1) * c])
                            .map(|(a, b)| a * b)
                            .sum();
                        *d += dot;
                    }
                }
            }
            Op::Gather { src, index, .. } => {
                if wants(*src) {
                    let n = val(*src).len();
                    let buf = slot(grads, *src, n);
                    for (&i, s) in index.iter().zip(g) {
                        buf[i] += s;
                    }
                }
            }
            Op::IndexAdd { src, rows, .. } => {
                if wants(*src) {
                    let c = val(*src).cols();
                    let buf = slot(grads, *src, rows.len() * c);
                    for (e, &t) in rows.iter().enumerate() {
                        add_into(&mut buf[e * c..(e + 1) * c], &g[t * c..(t + 1) * c]);
                    }
                }
            }
            Op::SumAxis { src, axis } => {
                if wants(*src) {
                    let shape = val(*src).shape().to_vec();
                    let (outer, len, inner) = split_axis(&shape, *axis);
                    let buf = slot(grads, *src, outer * len * inner);
                    for o in 0..outer {
                        for l in 0..len {
                            let base = (o * len + l) * inner;
                            add_into(&mut buf[base..base + inner], &g[o * inner..(o + 1) * inner]);
                        }
                    }
                }
            }
            Op::Mse(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                let factor = 2.0 * g[0] / av.len() as f64;
                if wants(*a) {
                    let buf = slot(grads, *a, av.len());
                    for ((d, x), y) in buf.iter_mut().zip(av).zip(bv) {
                        *d += factor * (x - y);
                    }
                }
                if wants(*b) {
                    let buf = slot(grads, *b, bv.len());
                    for ((d, x), y) in buf.iter_mut().zip(av).zip(bv) {
                        *d -= factor * (x - y);
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut [f64] {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn unary(
    grads: &mut [Option<Vec<f64>>],
    input: Var,
    g: &[f64],
    vals: &[f64],
    deriv: impl Fn(f64) -> f64,
) {
    let buf = slot(grads, input, g.len());
    for ((d, s), &v) in buf.iter_mut().zip(g).zip(vals) {
        *d += s * deriv(v);
    }
}
