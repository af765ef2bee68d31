//! A two-layer network built directly on the tape, its gradients, and a
//! finite-difference check of one of them.

use fgvc_ssl::tensor::{grad_check, Graph, Tensor};

fn main() -> fgvc_ssl::Result<()> {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.0, -0.5])?);
    let w1 = g.param(Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 - 6.0) / 10.0).collect())?);
    let w2 = g.param(Tensor::new(vec![4, 2], (0..8).map(|i| (i as f64) / 8.0 - 0.4).collect())?);

    let h = g.matmul(x, w1)?;
    let h = g.relu(h)?;
    let y = g.matmul(h, w2)?;
    let lp = g.log_softmax(y, 1)?;
    let s = g.sum(lp, None)?;
    let loss = g.neg(s)?;
    g.backward(loss)?;

    println!("loss      {:.6}", g.value(loss).item()?);
    println!("dL/dw2    {:?}", g.grad(w2).unwrap());

    let w1_value = g.value(w1).clone();
    let err = grad_check(
        |g, w| {
            let x = g.constant(Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.0, -0.5])?);
            let h = g.matmul(x, w)?;
            let h = g.tanh(h)?;
            g.sum(h, None)
        },
        &w1_value,
        1e-5,
    )?;
    println!("grad_check relative error {err:.2e}");
    Ok(())
}
