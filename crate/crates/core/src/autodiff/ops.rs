//! Elementwise, reduction and linear-algebra ops.

use super::graph::{Graph, NodeId, Op};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

struct Add;
impl Op for Add {
    fn name(&self) -> &'static str {
        "add"
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        same_shape("add", x[0], x[1])?;
        Ok(zip_map(x[0], x[1], |a, b| a + b))
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.clone()), Some(g.clone())])
    }
}

struct Sub;
impl Op for Sub {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        same_shape("sub", x[0], x[1])?;
        Ok(zip_map(x[0], x[1], |a, b| a - b))
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.clone()), Some(g.map(|v| -v))])
    }
}

struct Mul;
impl Op for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        same_shape("mul", x[0], x[1])?;
        Ok(zip_map(x[0], x[1], |a, b| a * b))
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, n: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![
            n[0].then(|| zip_map(g, x[1], |g, b| g * b)),
            n[1].then(|| zip_map(g, x[0], |g, a| g * a)),
        ])
    }
}

struct Scale(f64);
impl Op for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        Ok(x[0].map(|v| v * self.0))
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.map(|v| v * self.0))])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Tanh,
    Sigmoid,
    Log,
    Exp,
}

struct UnaryOp(Unary);
impl Op for UnaryOp {
    fn name(&self) -> &'static str {
        match self.0 {
            Unary::Relu => "relu",
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Log => "log",
            Unary::Exp => "exp",
        }
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        Ok(match self.0 {
            Unary::Relu => x[0].map(|v| v.max(0.0)),
            Unary::Tanh => x[0].map(f64::tanh),
            Unary::Sigmoid => x[0].map(sigmoid),
            Unary::Log => x[0].map(f64::ln),
            Unary::Exp => x[0].map(f64::exp),
        })
    }
    fn backward(&self, x: &[&Tensor], y: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let d = match self.0 {
            Unary::Relu => zip_map(g, x[0], |g, v| if v > 0.0 { g } else { 0.0 }),
            Unary::Tanh => zip_map(g, y, |g, t| g * (1.0 - t * t)),
            Unary::Sigmoid => zip_map(g, y, |g, s| g * s * (1.0 - s)),
            Unary::Log => zip_map(g, x[0], |g, v| g / v),
            Unary::Exp => zip_map(g, y, |g, e| g * e),
        };
        Ok(vec![Some(d)])
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

struct Sum {
    mean: bool,
}
impl Op for Sum {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        if x[0].is_empty() {
            return Err(Error::shape(self.name(), "empty input"));
        }
        let s = x[0].sum();
        Ok(Tensor::scalar(if self.mean { s / x[0].len() as f64 } else { s }))
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let mut v = g.item();
        if self.mean {
            v /= x[0].len() as f64;
        }
        Ok(vec![Some(Tensor::full(x[0].shape(), v))])
    }
}

/// `x[.., n] + b[n]`.
struct AddBias;
impl Op for AddBias {
    fn name(&self) -> &'static str {
        "add_bias"
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        let n = x[0].last_dim();
        if x[1].shape() != [n] {
            return Err(Error::shape("add_bias", format!("{:?} + {:?}", x[0].shape(), x[1].shape())));
        }
        let mut out = x[0].clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(x[1].data()) {
                *o += b;
            }
        }
        Ok(out)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, n: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let db = n[1].then(|| column_sums(g, x[1].len()));
        Ok(vec![Some(g.clone()), db])
    }
}

fn column_sums(g: &Tensor, n: usize) -> Tensor {
    let mut out = vec![0.0; n];
    for row in g.data().chunks(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::new(&[n], out).expect("shape")
}

/// `x[.., k] · w[k, n] (+ b[n])`, leading axes flattened into rows.
struct Linear {
    bias: bool,
}
impl Op for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        let (inp, w) = (x[0], x[1]);
        let k = inp.last_dim();
        if w.rank() != 2 || w.shape()[0] != k {
            return Err(Error::shape("linear", format!("{:?} · {:?}", inp.shape(), w.shape())));
        }
        let n = w.shape()[1];
        if self.bias && x[2].shape() != [n] {
            return Err(Error::shape("linear", format!("bias {:?}, expected [{n}]", x[2].shape())));
        }
        let rows = inp.rows();
        let mut shape = inp.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = n;
        let mut out = vec![0.0; rows * n];
        if self.bias {
            for row in out.chunks_mut(n) {
                row.copy_from_slice(x[2].data());
            }
        }
        gemm(rows, k, n, inp.data(), false, w.data(), false, &mut out, if self.bias { 1.0 } else { 0.0 });
        Tensor::new(&shape, out)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, need: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (inp, w) = (x[0], x[1]);
        let k = inp.last_dim();
        let n = w.shape()[1];
        let rows = inp.rows();
        let dx = need[0].then(|| {
            let mut d = vec![0.0; rows * k];
            gemm(rows, n, k, g.data(), false, w.data(), true, &mut d, 0.0);
            Tensor::new(inp.shape(), d).expect("shape")
        });
        let dw = need[1].then(|| {
            let mut d = vec![0.0; k * n];
            gemm(k, rows, n, inp.data(), true, g.data(), false, &mut d, 0.0);
            Tensor::new(&[k, n], d).expect("shape")
        });
        let mut out = vec![dx, dw];
        if self.bias {
            out.push(need[2].then(|| column_sums(g, n)));
        }
        Ok(out)
    }
}

struct MatMul;
impl Op for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        let (a, b) = (x[0], x[1]);
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::shape("matmul", format!("{:?} · {:?}", a.shape(), b.shape())));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, &mut out, 0.0);
        Tensor::new(&[m, n], out)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, need: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (a, b) = (x[0], x[1]);
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let da = need[0].then(|| {
            let mut d = vec![0.0; m * k];
            gemm(m, n, k, g.data(), false, b.data(), true, &mut d, 0.0);
            Tensor::new(&[m, k], d).expect("shape")
        });
        let db = need[1].then(|| {
            let mut d = vec![0.0; k * n];
            gemm(k, m, n, a.data(), true, g.data(), false, &mut d, 0.0);
            Tensor::new(&[k, n], d).expect("shape")
        });
        Ok(vec![da, db])
    }
}

/// Numerically stable softmax over one row, written into `out`.
pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// Numerically stable log-softmax over one row, written into `out`.
pub fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

struct Softmax {
    log: bool,
}
impl Op for Softmax {
    fn name(&self) -> &'static str {
        if self.log {
            "log_softmax"
        } else {
            "softmax"
        }
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        let n = x[0].last_dim();
        if n == 0 {
            return Err(Error::shape(self.name(), "empty last axis"));
        }
        let mut out = Tensor::zeros(x[0].shape());
        for (row, o) in x[0].data().chunks(n).zip(out.data_mut().chunks_mut(n)) {
            if self.log {
                log_softmax_row(row, o);
            } else {
                softmax_row(row, o);
            }
        }
        Ok(out)
    }
    fn backward(&self, _: &[&Tensor], y: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let n = y.last_dim();
        let mut d = Tensor::zeros(y.shape());
        for ((yr, gr), dr) in y.data().chunks(n).zip(g.data().chunks(n)).zip(d.data_mut().chunks_mut(n)) {
            if self.log {
                let gs: f64 = gr.iter().sum();
                for ((o, &lp), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                    *o = gv - lp.exp() * gs;
                }
            } else {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((o, &p), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                    *o = p * (gv - dot);
                }
            }
        }
        Ok(vec![Some(d)])
    }
}

/// Concatenation along the last axis.
struct ConcatLast;
impl Op for ConcatLast {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        let (a, b) = (x[0], x[1]);
        if a.rank() == 0 || a.rank() != b.rank() || a.shape()[..a.rank() - 1] != b.shape()[..b.rank() - 1] {
            return Err(Error::shape("concat", format!("{:?} ++ {:?}", a.shape(), b.shape())));
        }
        let (p, q) = (a.last_dim(), b.last_dim());
        let mut data = Vec::with_capacity(a.len() + b.len());
        for r in 0..a.rows() {
            data.extend_from_slice(&a.data()[r * p..(r + 1) * p]);
            data.extend_from_slice(&b.data()[r * q..(r + 1) * q]);
        }
        let mut shape = a.shape().to_vec();
        *shape.last_mut().expect("rank") = p + q;
        Tensor::new(&shape, data)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, need: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (p, q) = (x[0].last_dim(), x[1].last_dim());
        let mut da = Vec::with_capacity(x[0].len());
        let mut db = Vec::with_capacity(x[1].len());
        for row in g.data().chunks(p + q) {
            da.extend_from_slice(&row[..p]);
            db.extend_from_slice(&row[p..]);
        }
        Ok(vec![
            need[0].then(|| Tensor::new(x[0].shape(), da)).transpose()?,
            need[1].then(|| Tensor::new(x[1].shape(), db)).transpose()?,
        ])
    }
}

struct Reshape(Vec<usize>);
impl Op for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        x[0].clone().reshape(&self.0)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.clone().reshape(x[0].shape())?)])
    }
}

/// Stacks equally shaped inputs along a new leading axis.
struct Stack;
impl Op for Stack {
    fn name(&self) -> &'static str {
        "stack"
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        let owned: Vec<Tensor> = x.iter().map(|t| (*t).clone()).collect();
        Tensor::stack(&owned)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, need: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok((0..x.len()).map(|i| need[i].then(|| g.index0(i))).collect())
    }
}

/// Slice `i` along the leading axis.
struct Index0(usize);
impl Op for Index0 {
    fn name(&self) -> &'static str {
        "index0"
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        if x[0].rank() == 0 || self.0 >= x[0].shape()[0] {
            return Err(Error::shape("index0", format!("index {} into {:?}", self.0, x[0].shape())));
        }
        Ok(x[0].index0(self.0))
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let mut d = Tensor::zeros(x[0].shape());
        let inner = g.len();
        d.data_mut()[self.0 * inner..(self.0 + 1) * inner].copy_from_slice(g.data());
        Ok(vec![Some(d)])
    }
}

/// Builds `[M, T, D]` from per-track `[T_m, D]` inputs, reading frame
/// `t mod T_m` of each track so every track covers `T` frames.
struct LoopTimeStack {
    frames: usize,
}
impl Op for LoopTimeStack {
    fn name(&self) -> &'static str {
        "loop_time_stack"
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        let d = x
            .first()
            .ok_or_else(|| Error::shape("loop_time_stack", "no tracks"))?
            .last_dim();
        let mut data = Vec::with_capacity(x.len() * self.frames * d);
        for t in x {
            if t.rank() != 2 || t.shape()[1] != d || t.shape()[0] == 0 {
                return Err(Error::shape("loop_time_stack", format!("track shape {:?}", t.shape())));
            }
            let len = t.shape()[0];
            for f in 0..self.frames {
                let s = f % len;
                data.extend_from_slice(&t.data()[s * d..(s + 1) * d]);
            }
        }
        Tensor::new(&[x.len(), self.frames, d], data)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, need: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let d = x[0].last_dim();
        Ok(x.iter()
            .enumerate()
            .map(|(m, t)| {
                need[m].then(|| {
                    let len = t.shape()[0];
                    let mut out = Tensor::zeros(t.shape());
                    let gm = &g.data()[m * self.frames * d..(m + 1) * self.frames * d];
                    for f in 0..self.frames {
                        let s = f % len;
                        for (o, v) in out.data_mut()[s * d..(s + 1) * d].iter_mut().zip(&gm[f * d..(f + 1) * d]) {
                            *o += v;
                        }
                    }
                    out
                })
            })
            .collect())
    }
}

/// Convenience constructors for the ops in this module.
impl Graph {
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        self.apply(Scale(s), &[a])
    }

    pub fn unary(&mut self, a: NodeId, f: Unary) -> Result<NodeId> {
        self.apply(UnaryOp(f), &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Unary::Relu)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Unary::Tanh)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Unary::Log)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Sum { mean: false }, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Sum { mean: true }, &[a])
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(AddBias, &[x, b])
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        match b {
            Some(b) => self.apply(Linear { bias: true }, &[x, w, b]),
            None => self.apply(Linear { bias: false }, &[x, w]),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(MatMul, &[a, b])
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Softmax { log: false }, &[a])
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Softmax { log: true }, &[a])
    }

    pub fn concat_last(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(ConcatLast, &[a, b])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.apply(Reshape(shape.to_vec()), &[a])
    }

    pub fn stack(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(Stack, parts)
    }

    pub fn index0(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        self.apply(Index0(i), &[a])
    }

    pub fn loop_time_stack(&mut self, tracks: &[NodeId], frames: usize) -> Result<NodeId> {
        self.apply(LoopTimeStack { frames }, tracks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn add_elementwise() {
        let mut g = Graph::new();
        let a = g.input(t(&[2], &[1.0, 2.0]));
        let b = g.input(t(&[2], &[3.0, 4.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i = g.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = g.input(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let c = g.matmul(i, m).unwrap();
        assert_eq!(g.value(c).data(), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn softmax_favoring_logits() {
        let mut g = Graph::new();
        let a = g.input(t(&[2], &[10.0, -10.0]));
        let s = g.softmax(a).unwrap();
        let l = g.log(s).unwrap();
        assert!((g.value(s).data()[0] - 1.0).abs() < 1e-4);
        assert!(g.value(l).data()[0].abs() < 1e-4);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2]));
        let b = g.input(Tensor::zeros(&[3]));
        let err = g.add(a, b).unwrap_err();
        assert!(err.to_string().contains("add"), "{err}");
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
    }

    #[test]
    fn sum_grad_is_ones() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::full(&[2, 3], 0.7));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn product_rule() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(3.0));
        let y = g.variable(Tensor::scalar(4.0));
        let p = g.mul(x, y).unwrap();
        let grads = g.backward(p).unwrap();
        assert_eq!(grads.wrt(x).unwrap().item(), 4.0);
        assert_eq!(grads.wrt(y).unwrap().item(), 3.0);
    }

    #[test]
    fn gradients_accumulate_over_multiple_uses() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(2.0));
        let sq = g.mul(x, x).unwrap();
        let y = g.add(sq, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().item(), 5.0);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn forward_recomputes_after_set_value() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(1.0));
        let y = g.scale(x, 3.0).unwrap();
        g.set_value(x, Tensor::scalar(2.0)).unwrap();
        g.forward().unwrap();
        assert_eq!(g.value(y).item(), 6.0);
        assert_eq!(g.op_tag(y), "scale");
        assert_eq!(g.op_tag(x), "source");
    }

    #[test]
    fn loop_time_stack_wraps() {
        let mut g = Graph::new();
        let a = g.input(t(&[2, 1], &[1.0, 2.0]));
        let b = g.input(t(&[3, 1], &[5.0, 6.0, 7.0]));
        let s = g.loop_time_stack(&[a, b], 3).unwrap();
        assert_eq!(g.value(s).shape(), &[2, 3, 1]);
        assert_eq!(g.value(s).data(), &[1.0, 2.0, 1.0, 5.0, 6.0, 7.0]);
    }
}
