use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    t(shape, &(0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
}

fn eval(f: impl FnOnce(&mut Graph<f64>) -> crate::Result<Var>) -> Tensor<f64> {
    let mut g = Graph::new();
    let v = f(&mut g).unwrap();
    g.value(v).clone()
}

#[test]
fn elementwise_examples() {
    let relu = eval(|g| {
        let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        g.elementwise(Elementwise::Relu, x, None)
    });
    assert_eq!(relu.data(), &[0.0, 0.0, 2.0]);

    let tanh = eval(|g| {
        let x = g.constant(t(&[1], &[0.0]));
        g.tanh(x)
    });
    assert_eq!(tanh.data(), &[0.0]);

    let mul = eval(|g| {
        let a = g.constant(t(&[2], &[2.0, 3.0]));
        let b = g.constant(t(&[2], &[4.0, 5.0]));
        g.elementwise(Elementwise::Mul, a, Some(b))
    });
    assert_eq!(mul.data(), &[8.0, 15.0]);
}

#[test]
fn elementwise_errors() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(t(&[2], &[1.0, 2.0]));
    let b = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
    assert!(matches!(g.add(a, b), Err(Error::ShapeMismatch { .. })));
    let z = g.constant(t(&[2], &[1.0, 0.0]));
    assert!(matches!(g.log(z), Err(Error::NonPositiveLog(_))));
}

#[test]
fn scalar_broadcast() {
    let out = eval(|g| {
        let a = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let s = g.constant(Tensor::scalar(10.0));
        g.sub(s, a)
    });
    assert_eq!(out.data(), &[9.0, 8.0, 7.0]);
}

#[test]
fn non_finite_forward_is_an_error() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1], &[1000.0]));
    assert!(matches!(g.exp(x), Err(Error::NonFinite { op: "exp" })));
}

#[test]
fn matmul_examples() {
    let x = random(&[2, 5], 3);
    let out = eval(|g| {
        let i = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let xv = g.constant(x.clone());
        g.matmul(i, xv)
    });
    assert_eq!(out, x);

    let out = eval(|g| {
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t(&[2, 1], &[5.0, 6.0]));
        g.matmul(a, b)
    });
    assert_eq!(out.data(), &[17.0, 39.0]);

    let mut g = Graph::<f64>::new();
    let a = g.constant(random(&[2, 3], 1));
    let b = g.constant(random(&[2, 3], 2));
    assert!(matches!(g.matmul(a, b), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn matmul_gradient_is_ones_times_b_transpose() {
    let a = random(&[3, 4], 10);
    let b = random(&[4, 2], 11);
    let mut g = Graph::new();
    let av = g.param(a);
    let bv = g.constant(b.clone());
    let p = g.matmul(av, bv).unwrap();
    let s = g.sum(p, None).unwrap();
    g.backward(s).unwrap();
    let ga = g.grad(av).unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let expect: f64 = (0..2).map(|j| b.at(&[k, j])).sum();
            assert!((ga[i * 4 + k] - expect).abs() < 1e-12);
        }
    }
    let err = grad_check(
        |g, x| {
            let bv = g.constant(b.clone());
            let p = g.matmul(x, bv)?;
            g.sum(p, None)
        },
        &random(&[3, 4], 12),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6);
}

#[test]
fn conv2d_examples() {
    let x = random(&[2, 4, 4], 5);
    let out = eval(|g| {
        let xv = g.constant(x.clone());
        let mut k = Tensor::zeros(vec![2, 2, 1, 1]);
        k.set(&[0, 0, 0, 0], 1.0);
        k.set(&[1, 1, 0, 0], 1.0);
        let kv = g.constant(k);
        g.conv2d(xv, kv, 1, 0)
    });
    assert_eq!(out, x);

    let out = eval(|g| {
        let xv = g.constant(Tensor::ones(vec![1, 3, 3]));
        let kv = g.constant(Tensor::ones(vec![1, 1, 3, 3]));
        g.conv2d(xv, kv, 1, 0)
    });
    assert_eq!(out.shape(), &[1, 1, 1]);
    assert_eq!(out.data(), &[9.0]);

    let mut g = Graph::<f64>::new();
    let xv = g.constant(Tensor::ones(vec![1, 4, 4]));
    let kv = g.constant(Tensor::ones(vec![1, 1, 3, 3]));
    assert!(g.conv2d(xv, kv, 2, 0).is_err(), "(4-3)/2 is not integral");
}

#[test]
fn conv2d_is_cross_correlation() {
    // An asymmetric kernel picks the right-hand neighbour without flipping.
    let x = t(&[1, 1, 3], &[1.0, 2.0, 3.0]);
    let out = eval(|g| {
        let xv = g.constant(x);
        let kv = g.constant(t(&[1, 1, 1, 2], &[0.0, 1.0]));
        g.conv2d(xv, kv, 1, 0)
    });
    assert_eq!(out.data(), &[2.0, 3.0]);
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    for (seed, (c_in, c_out, hw, k, stride, pad)) in
        [(1, 3, 5, 3, 1, 1), (2, 2, 6, 3, 1, 0), (1, 2, 5, 1, 1, 0), (3, 2, 7, 3, 2, 1), (2, 1, 6, 2, 2, 0)]
            .into_iter()
            .enumerate()
    {
        let seed = seed as u64;
        let input = random(&[2, c_in, hw, hw], 100 + seed);
        let kernel = random(&[c_out, c_in, k, k], 200 + seed);
        let ki = kernel.clone();
        let err_x = grad_check(
            |g, x| {
                let kv = g.constant(ki.clone());
                let y = g.conv2d(x, kv, stride, pad)?;
                let y = g.mul(y, y)?;
                g.sum(y, None)
            },
            &input,
            1e-5,
        )
        .unwrap();
        let xi = input.clone();
        let err_k = grad_check(
            |g, k| {
                let xv = g.constant(xi.clone());
                let y = g.conv2d(xv, k, stride, pad)?;
                let y = g.tanh(y)?;
                g.sum(y, None)
            },
            &kernel,
            1e-5,
        )
        .unwrap();
        assert!(err_x < 1e-4 && err_k < 1e-4, "case {seed}: {err_x} {err_k}");
    }
}

#[test]
fn reduction_examples() {
    let sm = eval(|g| {
        let x = g.constant(t(&[3], &[0.0, 0.0, 0.0]));
        g.reduce(Reduction::Softmax, x, Some(0))
    });
    for v in sm.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    let gap = eval(|g| {
        let x = g.constant(Tensor::full(vec![1, 2, 3, 3], 2.5));
        g.global_avg_pool(x)
    });
    assert_eq!(gap.data(), &[2.5, 2.5]);

    let ls = eval(|g| {
        let x = g.constant(t(&[3], &[2.0, 1.0, 0.0]));
        g.log_softmax(x, 0)
    });
    assert!((ls.data()[0] - (-0.40761)).abs() < 1e-5);

    let mp = eval(|g| {
        let x = g.constant(random(&[2, 3, 4, 6], 9));
        g.max_pool2(x)
    });
    assert_eq!(mp.shape(), &[2, 3, 2, 3]);

    let mut g = Graph::<f64>::new();
    let x = g.constant(random(&[2, 3], 1));
    assert!(matches!(g.sum(x, Some(2)), Err(Error::InvalidAxis { .. })));
    assert!(matches!(g.softmax(x, 5), Err(Error::InvalidAxis { .. })));
}

#[test]
fn softmax_rows_sum_to_one() {
    let sm = eval(|g| {
        let x = g.constant(random(&[4, 7], 21).map(|v| v * 30.0));
        g.softmax(x, 1)
    });
    for row in sm.data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn backward_examples() {
    let x = random(&[5], 4);
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let sq = g.mul(xv, xv).unwrap();
    let loss = g.sum(sq, None).unwrap();
    g.backward(loss).unwrap();
    for (gv, xv) in g.grad(xv).unwrap().iter().zip(x.data()) {
        assert!((gv - 2.0 * xv).abs() < 1e-15);
    }

    let mut g = Graph::new();
    let xv = g.param(t(&[3], &[-1.0, -2.0, -0.5]));
    let r = g.relu(xv).unwrap();
    let loss = g.sum(r, None).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(xv).unwrap(), &[0.0, 0.0, 0.0]);

    let mut g = Graph::new();
    let xv = g.param(x);
    assert!(matches!(g.backward(xv), Err(Error::NonScalarLoss(_))));
}

#[test]
fn repeated_backward_accumulates_on_leaves() {
    let mut g = Graph::new();
    let xv = g.param(t(&[2], &[1.0, -3.0]));
    let sq = g.mul(xv, xv).unwrap();
    let loss = g.sum(sq, None).unwrap();
    g.backward(loss).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(xv).unwrap(), &[4.0, -12.0]);
    g.zero_grad();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(xv).unwrap(), &[2.0, -6.0]);
}

#[test]
fn composite_net_matches_finite_differences() {
    let input = random(&[1, 2, 8, 8], 77);
    let err = grad_check(
        |g, k| {
            let x = g.constant(input.clone());
            let y = g.conv2d(x, k, 1, 1)?;
            let y = g.relu(y)?;
            g.mean(y, None)
        },
        &random(&[3, 2, 3, 3], 78),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn grad_check_examples() {
    let x = random(&[6], 1);
    // linear: central differences are exact for any step, so a power-of-two
    // step keeps the perturbation itself free of rounding
    let err = grad_check(|g, x| g.sum(x, None), &x, 0.25).unwrap();
    assert!(err < 1e-12, "{err}");

    let err = grad_check(
        |g, x| {
            let x2 = g.mul(x, x)?;
            let x3 = g.mul(x2, x)?;
            g.sum(x3, None)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");

    let err = grad_check(
        |g, s| {
            let s = g.reshape(s, &[1, 5])?;
            let ls = g.log_softmax(s, 1)?;
            let picked = g.gather(ls, &[2])?;
            let nll = g.neg(picked)?;
            g.sum(nll, None)
        },
        &random(&[5], 2),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");

    assert!(grad_check(|g, x| g.sum(x, None), &x, 0.0).is_err());
    assert!(grad_check(
        |g, x| {
            let big = g.scale(x, 1e6)?;
            let e = g.exp(big)?;
            g.sum(e, None)
        },
        &t(&[1], &[1.0]),
        1e-5
    )
    .is_err());
}

#[test]
fn every_op_passes_grad_check_on_random_inputs() {
    for (name, shape, f) in crate::verify::op_cases() {
        for seed in 0..5 {
            let x = random(&shape, 1000 + seed).map(|v| v + 0.05);
            let err = grad_check(f, &x, 1e-5).unwrap();
            assert!(err < 1e-4, "{name} seed {seed}: {err}");
        }
    }
}

#[test]
fn backward_is_linear_in_the_loss() {
    let x = random(&[2, 3], 55);
    let grads = |which: u8| {
        let mut g = Graph::new();
        let xv = g.param(x.clone());
        let t = g.tanh(xv).unwrap();
        let l1 = g.sum(t, None).unwrap();
        let e = g.exp(xv).unwrap();
        let l2 = g.mean(e, None).unwrap();
        let loss = match which {
            0 => l1,
            1 => l2,
            _ => g.add(l1, l2).unwrap(),
        };
        g.backward(loss).unwrap();
        g.grad(xv).unwrap().to_vec()
    };
    let (a, b, c) = (grads(0), grads(1), grads(2));
    for i in 0..a.len() {
        assert!((a[i] + b[i] - c[i]).abs() < 1e-12);
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        eval(|g| {
            let x = g.constant(random(&[2, 3, 8, 8], 1).cast::<f64>());
            let k = g.constant(random(&[4, 3, 3, 3], 2));
            let y = g.conv2d(x, k, 1, 1)?;
            let y = g.relu(y)?;
            let y = g.max_pool2(y)?;
            g.global_avg_pool(y)
        })
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn param_store_rejects_duplicate_names() {
    let mut store = ParamStore::<f64>::new();
    store.add("a.weight", Tensor::zeros(vec![2])).unwrap();
    assert!(store.add("a.weight", Tensor::zeros(vec![2])).is_err());
}
