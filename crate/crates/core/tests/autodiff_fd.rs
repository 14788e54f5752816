//! Central finite differences against reverse-mode gradients for every op.

#![allow(clippy::cloned_ref_to_slice_refs)]
use mdpf::{Graph, RngStream, Tensor, Var};
use proptest::prelude::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

type Scalar = for<'g> fn(&'g Graph, &[Var<'g>]) -> Var<'g>;

fn eval(inputs: &[Tensor], f: Scalar) -> f64 {
    let g = Graph::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    f(&g, &vars).item()
}

fn check(name: &str, inputs: &[Tensor], f: Scalar) {
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&g, &vars);
    assert!(out.shape().is_empty(), "{name}: loss must be a scalar");
    g.backward(out).unwrap();
    for (k, t) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[k]);
        for i in 0..t.len() {
            let shifted = |delta: f64| {
                let mut ins = inputs.to_vec();
                ins[k].data_mut()[i] += delta;
                eval(&ins, f)
            };
            let fd = (shifted(H) - shifted(-H)) / (2.0 * H);
            let a = analytic.data()[i];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
            assert!(err < TOL, "{name}: input {k} element {i}: analytic {a} vs fd {fd} (rel {err:.2e})");
        }
    }
}

fn m(r: usize, c: usize, v: &[f64]) -> Tensor {
    Tensor::matrix(r, c, v.to_vec())
}

fn v(xs: &[f64]) -> Tensor {
    Tensor::vector(xs.to_vec())
}

/// Weighted sum so every output element gets a distinct adjoint.
fn probe<'g>(x: Var<'g>) -> Var<'g> {
    let n: usize = x.shape().iter().product();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * i as f64).collect();
    let w = x.graph().constant(Tensor::from_shape(&x.shape(), w));
    x.mul(w).unwrap().sum()
}

#[test]
fn elementwise_binary_ops() {
    let a = m(2, 3, &[0.4, -1.2, 0.7, 1.5, -0.3, 2.1]);
    let b = v(&[0.9, -0.6, 1.3]);
    check("add", &[a.clone(), b.clone()], |_, x| probe(x[0].add(x[1]).unwrap()));
    check("sub", &[a.clone(), b.clone()], |_, x| probe(x[0].sub(x[1]).unwrap()));
    check("mul", &[a.clone(), b.clone()], |_, x| probe(x[0].mul(x[1]).unwrap()));
    check("div", &[a.clone(), b.clone()], |_, x| probe(x[0].div(x[1]).unwrap()));
    let pos = m(2, 3, &[0.4, 1.2, 0.7, 1.5, 0.3, 2.1]);
    check("pow", &[pos, b.clone()], |_, x| probe(x[0].pow(x[1]).unwrap()));
    check("atan2", &[a.clone(), m(2, 3, &[1.0, 0.5, -0.8, -1.1, 0.2, 0.9])], |_, x| probe(x[0].atan2(x[1]).unwrap()));
    check("von_mises_cdf", &[v(&[-2.0, -0.4, 0.3, 1.9]), v(&[0.5, 3.0, 12.0, 40.0])], |_, x| {
        probe(x[0].von_mises_cdf(x[1]).unwrap())
    });
}

#[test]
fn elementwise_unary_ops() {
    let x = v(&[-1.3, -0.4, 0.2, 0.9, 2.2]);
    let pos = v(&[0.2, 0.7, 1.4, 3.0, 5.5]);
    check("exp", &[x.clone()], |_, x| probe(x[0].exp()));
    check("log", &[pos.clone()], |_, x| probe(x[0].log().unwrap()));
    check("sqrt", &[pos.clone()], |_, x| probe(x[0].sqrt().unwrap()));
    check("powf", &[pos.clone()], |_, x| probe(x[0].powf(1.7).unwrap()));
    check("square", &[x.clone()], |_, x| probe(x[0].square()));
    check("sin", &[x.clone()], |_, x| probe(x[0].sin()));
    check("cos", &[x.clone()], |_, x| probe(x[0].cos()));
    check("tanh", &[x.clone()], |_, x| probe(x[0].tanh()));
    check("relu", &[x.clone()], |_, x| probe(x[0].relu()));
    check("softplus", &[x.clone()], |_, x| probe(x[0].softplus()));
    check("sigmoid", &[x.clone()], |_, x| probe(x[0].sigmoid()));
    check("erf", &[x.clone()], |_, x| probe(x[0].erf()));
    check("neg", &[x.clone()], |_, x| probe(x[0].neg()));
    check("scalar affine", &[x.clone()], |_, x| probe(x[0].mul_scalar(-2.5).add_scalar(0.7)));
    check("bessel_i0", &[v(&[0.1, 1.0, 4.0, 12.0, 30.0])], |_, x| probe(x[0].bessel_i0().log().unwrap()));
    check("log_bessel_i0", &[v(&[0.1, 1.0, 4.0, 12.0, 300.0])], |_, x| probe(x[0].log_bessel_i0()));
    check("wrap_angle", &[v(&[-5.0, -2.0, 0.5, 4.0, 9.0])], |_, x| probe(x[0].wrap_angle()));
    check("clamp", &[x.clone()], |_, x| probe(x[0].clamp(-1.0, 1.0)));
}

#[test]
fn reductions_and_shape_ops() {
    let a = m(3, 4, &[0.3, -0.2, 1.1, 0.8, -1.4, 0.5, 0.9, -0.7, 2.0, 0.1, -0.6, 1.3]);
    check("sum", &[a.clone()], |_, x| x[0].square().sum());
    check("mean", &[a.clone()], |_, x| x[0].square().mean());
    check("sum_axis0", &[a.clone()], |_, x| probe(x[0].sum_axis(0).unwrap()));
    check("sum_axis1", &[a.clone()], |_, x| probe(x[0].sum_axis(1).unwrap()));
    check("mean_axis1", &[a.clone()], |_, x| probe(x[0].mean_axis(1).unwrap()));
    check("softmax", &[a.clone()], |_, x| probe(x[0].softmax(1).unwrap()));
    check("softmax0", &[a.clone()], |_, x| probe(x[0].softmax(0).unwrap()));
    check("logsumexp", &[a.clone()], |_, x| probe(x[0].logsumexp(1).unwrap()));
    check("index_select", &[a.clone()], |_, x| probe(x[0].index_select(0, &[2, 0, 2, 1]).unwrap()));
    check("column", &[a.clone()], |_, x| probe(x[0].column(2).unwrap()));
    check("transpose", &[a.clone()], |_, x| probe(x[0].transpose().unwrap()));
    check("reshape", &[a.clone()], |_, x| probe(x[0].reshape(&[2, 6]).square()));
    check("concat", &[a.clone(), m(1, 4, &[0.5, -0.5, 1.5, 0.2])], |_, x| probe(Var::concat(&[x[0], x[1]], 0).unwrap().square()));
    check("select", &[a.clone(), v(&[1.0, 2.0, 3.0, 4.0])], |_, x| {
        let mask = [true, false, true, true, false, false, true, false, true, true, false, true];
        probe(Var::select(&mask, &[3, 4], x[0], x[1]).unwrap().square())
    });
    check("matmul", &[a.clone(), m(4, 2, &[0.2, -0.9, 1.1, 0.4, -0.3, 0.6, 0.8, 0.5])], |_, x| {
        probe(x[0].matmul(x[1]).unwrap())
    });
}

#[test]
fn random_five_layer_composition() {
    let mut rng = RngStream::new(42);
    let mut draw = |r: usize, c: usize, s: f64| Tensor::matrix(r, c, (0..r * c).map(|_| s * rng.normal()).collect());
    let inputs = vec![
        draw(4, 3, 1.0),
        draw(3, 5, 0.6),
        draw(5, 5, 0.4),
        draw(5, 4, 0.4),
        draw(4, 4, 0.4),
        draw(4, 2, 0.5),
    ];
    check("five layers", &inputs, |_, x| {
        let h1 = x[0].matmul(x[1]).unwrap().tanh();
        let h2 = h1.matmul(x[2]).unwrap().softplus();
        let h3 = h2.matmul(x[3]).unwrap().sin();
        let h4 = h3.matmul(x[4]).unwrap().sigmoid();
        let h5 = h4.matmul(x[5]).unwrap();
        h5.logsumexp(1).unwrap().exp().log().unwrap().mean()
    });
}

fn grad_of(f: Scalar, x: &Tensor) -> Vec<f64> {
    let g = Graph::new();
    let v = g.variable(x.clone());
    let out = f(&g, &[v]);
    g.backward(out).unwrap();
    g.grad(v).into_data()
}

proptest! {
    #[test]
    fn gradient_is_linear_in_the_loss(xs in prop::collection::vec(-2.0f64..2.0, 1..8), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let x = Tensor::vector(xs);
        let f: Scalar = |_, v| v[0].tanh().square().sum();
        let h: Scalar = |_, v| v[0].sin().mul(v[0]).unwrap().sum();
        let gf = grad_of(f, &x);
        let gh = grad_of(h, &x);
        let g = Graph::new();
        let v = g.variable(x.clone());
        let loss = f(&g, &[v]).mul_scalar(a).add(h(&g, &[v]).mul_scalar(b)).unwrap();
        g.backward(loss).unwrap();
        for (i, got) in g.grad(v).data().iter().enumerate() {
            let want = a * gf[i] + b * gh[i];
            prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn stop_gradient_blocks_only_its_branch(xs in prop::collection::vec(-2.0f64..2.0, 1..8)) {
        let g = Graph::new();
        let v = g.variable(Tensor::vector(xs.clone()));
        let stopped = v.stop_gradient();
        prop_assert_eq!(stopped.value().data().to_vec(), xs);
        let loss = stopped.square().sum().add(v.sum()).unwrap();
        g.backward(loss).unwrap();
        for got in g.grad(v).data() {
            prop_assert_eq!(*got, 1.0);
        }
    }
}
