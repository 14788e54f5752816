//! Differentiable primitives.

use std::borrow::Cow;

use super::graph::{Op, Var};
use super::params::{sigmoid, softplus};
use super::tensor::{axis_split, broadcast_shapes, expand_to, gemm, Tensor};
use super::AutodiffError;
use crate::special;

type Result<T> = std::result::Result<T, AutodiffError>;

fn expanded<'a>(t: &'a Tensor, shape: &[usize]) -> Cow<'a, [f64]> {
    if t.shape() == shape {
        Cow::Borrowed(t.data())
    } else {
        Cow::Owned(expand_to(t, shape))
    }
}

// Arithmetic is fallible (shape checks), so the operator traits do not fit.
#[allow(clippy::should_implement_trait)]
impl<'g> Var<'g> {
    fn unary(self, f: impl Fn(f64) -> (f64, f64)) -> Var<'g> {
        let x = self.value();
        let need = self.requires_grad();
        let mut out = Vec::with_capacity(x.len());
        let mut partial = Vec::with_capacity(if need { x.len() } else { 0 });
        for &v in x.data() {
            let (y, dy) = f(v);
            out.push(y);
            if need {
                partial.push(dy);
            }
        }
        let value = Tensor::from_shape(x.shape(), out);
        let op = if need {
            Op::Elementwise { parents: vec![self.id], partials: vec![Tensor::from_shape(x.shape(), partial)] }
        } else {
            Op::Leaf
        };
        self.graph.push(value, op, need)
    }

    /// Pointwise binary primitive; `f` returns (value, ∂/∂lhs, ∂/∂rhs).
    pub(crate) fn binary(
        self,
        rhs: Var<'g>,
        op: &'static str,
        f: impl Fn(f64, f64) -> (f64, f64, f64),
    ) -> Result<Var<'g>> {
        let a = self.value();
        let b = rhs.value();
        let shape = broadcast_shapes(op, a.shape(), b.shape())?;
        let av = expanded(&a, &shape);
        let bv = expanded(&b, &shape);
        let need = self.requires_grad() || rhs.requires_grad();
        let n = av.len();
        let mut out = Vec::with_capacity(n);
        let (mut da, mut db) = if need { (Vec::with_capacity(n), Vec::with_capacity(n)) } else { (vec![], vec![]) };
        for (&x, &y) in av.iter().zip(bv.iter()) {
            let (v, px, py) = f(x, y);
            out.push(v);
            if need {
                da.push(px);
                db.push(py);
            }
        }
        let value = Tensor::from_shape(&shape, out);
        let node = if need {
            Op::Elementwise {
                parents: vec![self.id, rhs.id],
                partials: vec![Tensor::from_shape(&shape, da), Tensor::from_shape(&shape, db)],
            }
        } else {
            Op::Leaf
        };
        Ok(self.graph.push(value, node, need))
    }

    fn linear(self, rhs: Var<'g>, op: &'static str, sign: f64) -> Result<Var<'g>> {
        let a = self.value();
        let b = rhs.value();
        let shape = broadcast_shapes(op, a.shape(), b.shape())?;
        let av = expanded(&a, &shape);
        let bv = expanded(&b, &shape);
        let out: Vec<f64> = av.iter().zip(bv.iter()).map(|(x, y)| x + sign * y).collect();
        let need = self.requires_grad() || rhs.requires_grad();
        Ok(self.graph.push(
            Tensor::from_shape(&shape, out),
            Op::Linear { parents: vec![(self.id, 1.0), (rhs.id, sign)] },
            need,
        ))
    }

    pub fn add(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.linear(rhs, "add", 1.0)
    }

    pub fn sub(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.linear(rhs, "sub", -1.0)
    }

    pub fn mul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, "mul", |a, b| (a * b, b, a))
    }

    pub fn div(self, rhs: Var<'g>) -> Result<Var<'g>> {
        if let Some(i) = rhs.value().data().iter().position(|&v| v == 0.0) {
            return Err(AutodiffError::Domain { op: "div", detail: format!("zero denominator at element {i}") });
        }
        self.binary(rhs, "div", |a, b| (a / b, 1.0 / b, -a / (b * b)))
    }

    /// `a^b` with a differentiable exponent; the base must be positive.
    pub fn pow(self, rhs: Var<'g>) -> Result<Var<'g>> {
        if self.value().data().iter().any(|&v| v <= 0.0) {
            return Err(AutodiffError::Domain { op: "pow", detail: "non-positive base".into() });
        }
        self.binary(rhs, "pow", |a, b| {
            let v = a.powf(b);
            (v, b * a.powf(b - 1.0), v * a.ln())
        })
    }

    pub fn atan2(self, x: Var<'g>) -> Result<Var<'g>> {
        self.binary(x, "atan2", |y, x| {
            let r2 = x * x + y * y;
            if r2 == 0.0 {
                (0.0, 0.0, 0.0)
            } else {
                (y.atan2(x), x / r2, -y / r2)
            }
        })
    }

    /// Von Mises CDF of displacement `self` with concentration `kappa`,
    /// measured from the cut at −π.
    pub fn von_mises_cdf(self, kappa: Var<'g>) -> Result<Var<'g>> {
        let need_k = kappa.requires_grad();
        self.binary(kappa, "von_mises_cdf", |u, k| {
            let v = special::von_mises_cdf(u, k);
            let du = (k * (u.cos() - 1.0)).exp() / (2.0 * std::f64::consts::PI * special::bessel_i0e(k));
            let dk = if need_k { special::von_mises_cdf_dkappa(u, k) } else { 0.0 };
            (v, du, dk)
        })
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.unary(|v| (v + c, 1.0))
    }

    pub fn mul_scalar(self, c: f64) -> Var<'g> {
        self.unary(|v| (v * c, c))
    }

    pub fn neg(self) -> Var<'g> {
        self.mul_scalar(-1.0)
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(|v| {
            let e = v.exp();
            (e, e)
        })
    }

    pub fn log(self) -> Result<Var<'g>> {
        if let Some(v) = self.value().data().iter().find(|&&v| !(v > 0.0)) {
            return Err(AutodiffError::Domain { op: "log", detail: format!("argument {v}") });
        }
        Ok(self.unary(|v| (v.ln(), 1.0 / v)))
    }

    pub fn sqrt(self) -> Result<Var<'g>> {
        if let Some(v) = self.value().data().iter().find(|&&v| !(v >= 0.0)) {
            return Err(AutodiffError::Domain { op: "sqrt", detail: format!("argument {v}") });
        }
        Ok(self.unary(|v| {
            let s = v.sqrt();
            (s, 0.5 / s)
        }))
    }

    /// `x^p` for a constant exponent.
    pub fn powf(self, p: f64) -> Result<Var<'g>> {
        if p.fract() != 0.0 && self.value().data().iter().any(|&v| v < 0.0) {
            return Err(AutodiffError::Domain { op: "pow", detail: "negative base, fractional exponent".into() });
        }
        Ok(self.unary(|v| (v.powf(p), p * v.powf(p - 1.0))))
    }

    pub fn square(self) -> Var<'g> {
        self.unary(|v| (v * v, 2.0 * v))
    }

    pub fn sin(self) -> Var<'g> {
        self.unary(|v| (v.sin(), v.cos()))
    }

    pub fn cos(self) -> Var<'g> {
        self.unary(|v| (v.cos(), -v.sin()))
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(|v| {
            let t = v.tanh();
            (t, 1.0 - t * t)
        })
    }

    pub fn relu(self) -> Var<'g> {
        self.unary(|v| if v > 0.0 { (v, 1.0) } else { (0.0, 0.0) })
    }

    pub fn softplus(self) -> Var<'g> {
        self.unary(|v| (softplus(v), sigmoid(v)))
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(|v| {
            let s = sigmoid(v);
            (s, s * (1.0 - s))
        })
    }

    pub fn erf(self) -> Var<'g> {
        self.unary(|v| (special::erf(v), std::f64::consts::FRAC_2_SQRT_PI * (-v * v).exp()))
    }

    pub fn bessel_i0(self) -> Var<'g> {
        self.unary(|v| (special::bessel_i0(v), special::bessel_i1(v)))
    }

    /// `ln I₀(x)`; stable for large arguments.
    pub fn log_bessel_i0(self) -> Var<'g> {
        self.unary(|v| (special::log_bessel_i0(v), special::bessel_i1e(v) / special::bessel_i0e(v)))
    }

    /// Canonicalize angles to [−π, π); unit derivative.
    pub fn wrap_angle(self) -> Var<'g> {
        self.unary(|v| (special::wrap_angle(v), 1.0))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g> {
        self.unary(|v| if v < lo { (lo, 0.0) } else if v > hi { (hi, 0.0) } else { (v, 1.0) })
    }

    /// Elementwise select: `mask ? a : b`, with `a` and `b` broadcast to the mask shape.
    pub fn select(mask: &[bool], shape: &[usize], a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
        let n: usize = shape.iter().product();
        if mask.len() != n {
            return Err(AutodiffError::Shape { op: "where", lhs: shape.to_vec(), rhs: vec![mask.len()] });
        }
        let av = a.value();
        let bv = b.value();
        broadcast_shapes("where", shape, &broadcast_shapes("where", av.shape(), bv.shape())?)?;
        let ae = expand_to(&av, shape);
        let be = expand_to(&bv, shape);
        let out: Vec<f64> = (0..n).map(|i| if mask[i] { ae[i] } else { be[i] }).collect();
        let need = a.requires_grad() || b.requires_grad();
        let pa: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let pb: Vec<f64> = pa.iter().map(|v| 1.0 - v).collect();
        let g = a.graph;
        Ok(g.push(
            Tensor::from_shape(shape, out),
            Op::Elementwise {
                parents: vec![a.id, b.id],
                partials: vec![Tensor::from_shape(shape, pa), Tensor::from_shape(shape, pb)],
            },
            need,
        ))
    }

    pub fn matmul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        let a = self.value();
        let b = rhs.value();
        if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(AutodiffError::Shape { op: "matmul", lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, &mut out);
        let need = self.requires_grad() || rhs.requires_grad();
        Ok(self.graph.push(Tensor::from_shape(&[m, n], out), Op::MatMul(self.id, rhs.id), need))
    }

    pub fn sum(self) -> Var<'g> {
        let s = self.value().sum();
        self.graph.push(Tensor::scalar(s), Op::SumAll(self.id), self.requires_grad())
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().len() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<()> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(AutodiffError::Axis { op, axis, shape });
        }
        Ok(())
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'g>> {
        self.check_axis("sum", axis)?;
        let x = self.value();
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += x.data()[(o * len + l) * inner + i];
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        Ok(self.graph.push(Tensor::from_shape(&shape, out), Op::SumAxis { x: self.id, axis }, self.requires_grad()))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'g>> {
        let n = self.shape().get(axis).copied().unwrap_or(1) as f64;
        Ok(self.sum_axis(axis)?.mul_scalar(1.0 / n))
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'g>> {
        self.check_axis("softmax", axis)?;
        let x = self.value();
        let (soft, _) = softmax_and_lse(&x, axis);
        Ok(self.graph.push(soft, Op::Softmax { x: self.id, axis }, self.requires_grad()))
    }

    /// `log Σ exp` along `axis`, removing it. Entries of −∞ contribute zero mass.
    pub fn logsumexp(self, axis: usize) -> Result<Var<'g>> {
        self.check_axis("logsumexp", axis)?;
        let x = self.value();
        let (soft, lse) = softmax_and_lse(&x, axis);
        let need = self.requires_grad();
        let op = if need { Op::LogSumExp { x: self.id, axis, soft } } else { Op::Leaf };
        Ok(self.graph.push(lse, op, need))
    }

    /// Select `indices` along `axis` (gather). Gradient scatters back.
    pub fn index_select(self, axis: usize, indices: &[usize]) -> Result<Var<'g>> {
        self.check_axis("gather", axis)?;
        let x = self.value();
        let (outer, len, inner) = axis_split(x.shape(), axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(AutodiffError::Index { op: "gather", index: bad, len });
        }
        let k = indices.len();
        let mut out = Vec::with_capacity(outer * k * inner);
        for o in 0..outer {
            for &src in indices {
                let from = (o * len + src) * inner;
                out.extend_from_slice(&x.data()[from..from + inner]);
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = k;
        Ok(self.graph.push(
            Tensor::from_shape(&shape, out),
            Op::IndexSelect { x: self.id, axis, indices: indices.to_vec() },
            self.requires_grad(),
        ))
    }

    /// Column `j` of a 2-D array as a vector.
    pub fn column(self, j: usize) -> Result<Var<'g>> {
        let rows = self.shape()[0];
        self.index_select(1, &[j])?.reshape_checked(&[rows])
    }

    pub fn concat(xs: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = xs.first().expect("concat of at least one array");
        let graph = first.graph;
        let base = first.shape();
        if axis >= base.len() {
            return Err(AutodiffError::Axis { op: "concat", axis, shape: base });
        }
        let values: Vec<_> = xs.iter().map(|x| x.value()).collect();
        for v in &values {
            let s = v.shape();
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(d, (a, b))| d != axis && a != b) {
                return Err(AutodiffError::Shape { op: "concat", lhs: base, rhs: s.to_vec() });
            }
        }
        let total: usize = values.iter().map(|v| v.shape()[axis]).sum();
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let len = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let need = xs.iter().any(|x| x.requires_grad());
        Ok(graph.push(
            Tensor::from_shape(&shape, out),
            Op::Concat { xs: xs.iter().map(|x| x.id).collect(), axis },
            need,
        ))
    }

    pub fn reshape_checked(self, shape: &[usize]) -> Result<Var<'g>> {
        let x = self.value();
        if shape.iter().product::<usize>() != x.len() {
            return Err(AutodiffError::Shape { op: "reshape", lhs: x.shape().to_vec(), rhs: shape.to_vec() });
        }
        let t = Tensor::from_shape(shape, x.data().to_vec());
        Ok(self.graph.push(t, Op::Reshape(self.id), self.requires_grad()))
    }

    /// Reshape to a shape with the same element count; panics otherwise.
    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        self.reshape_checked(shape).expect("reshape preserves element count")
    }

    pub fn transpose(self) -> Result<Var<'g>> {
        let x = self.value();
        if x.ndim() != 2 {
            return Err(AutodiffError::Shape { op: "transpose", lhs: x.shape().to_vec(), rhs: vec![] });
        }
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x.data()[i * c + j];
            }
        }
        Ok(self.graph.push(Tensor::from_shape(&[c, r], out), Op::Transpose(self.id), self.requires_grad()))
    }
}

fn softmax_and_lse(x: &Tensor, axis: usize) -> (Tensor, Tensor) {
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let mut soft = vec![0.0; x.len()];
    let mut lse = vec![0.0; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            let m = (0..len).map(|l| x.data()[at(l)]).fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                lse[o * inner + i] = f64::NEG_INFINITY;
                continue;
            }
            if m == f64::INFINITY {
                lse[o * inner + i] = f64::INFINITY;
                continue;
            }
            let mut s = 0.0;
            for l in 0..len {
                let e = (x.data()[at(l)] - m).exp();
                soft[at(l)] = e;
                s += e;
            }
            for l in 0..len {
                soft[at(l)] /= s;
            }
            lse[o * inner + i] = m + s.ln();
        }
    }
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    (Tensor::from_shape(x.shape(), soft), Tensor::from_shape(&shape, lse))
}
