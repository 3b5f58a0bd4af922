//! Build a small computation graph, run a backward pass, and verify one
//! gradient entry against a central finite difference.
//!
//! ```bash
//! cargo run --example autodiff_basics
//! ```

use didfuse::tensor::{Graph, Tensor};

fn main() {
    // loss = mean(tanh(x * w)) for a 1x2x4x4 input
    let x = Tensor::from_f64(
        [1, 2, 4, 4],
        &(0..32).map(|i| (i as f64 / 31.0) - 0.4).collect::<Vec<_>>(),
    )
    .unwrap();
    let w = Tensor::full([1, 2, 4, 4], 0.7f64);

    let loss_of = |wt: &Tensor<f64>| -> (f64, Option<Vec<f64>>) {
        let mut g = Graph::<f64>::new();
        let xv = g.leaf(x.clone());
        let wv = g.param(wt.clone());
        let prod = g.mul(xv, wv).unwrap();
        let act = g.tanh(prod);
        let loss = g.mean(act).unwrap();
        let value = g.scalar(loss);
        g.backward(loss).unwrap();
        (value, g.grad(wv).map(|s| s.to_vec()))
    };

    let (value, grads) = loss_of(&w);
    let grads = grads.expect("parameter gradient");
    println!("loss = {value:.6}");

    // check entry 5 against (L(w+h) - L(w-h)) / 2h
    let h = 1e-6;
    let mut wp = w.clone();
    wp.data_mut()[5] += h;
    let mut wm = w.clone();
    wm.data_mut()[5] -= h;
    let fd = (loss_of(&wp).0 - loss_of(&wm).0) / (2.0 * h);
    println!("analytic d(loss)/dw[5] = {:+.8}", grads[5]);
    println!("finite-difference      = {fd:+.8}");
    assert!((grads[5] - fd).abs() < 1e-6, "gradient mismatch");
    println!("gradient check passed");
}
