//! Gradient-check routines shared by the dedicated gradient suite and the
//! acceptance suite: every differentiable op individually, and the full
//! composite objective through a small network.

use super::{fd_check, TestRng};
use didfuse::loss::{
    decomposition_loss, fidelity, gradient_penalty, ssim, total_loss, LossConfig, Reduction,
};
use didfuse::network::{ArchVariant, BnMode, NetworkParams, SkipMode};
use didfuse::tensor::{Graph, Padding, Tensor, Var};

pub const OP_TOL: f64 = 1e-4;
pub const NET_TOL: f64 = 1e-3;

/// Scalarize an arbitrary tensor with a fixed random weighting so every
/// entry contributes a distinct gradient path.
fn weighted_sum(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> Var {
    let w = g.leaf(weights.clone());
    let prod = g.mul(out, w).unwrap();
    g.sum(prod)
}

pub fn check_conv3x3_both_paddings() {
    for (i, padding) in [Padding::Reflection, Padding::Zero].into_iter().enumerate() {
        let mut rng = TestRng::new(10 + i as u64);
        let input = rng.tensor([2, 2, 5, 6], 0.8);
        let kernel = rng.tensor([3, 2, 3, 3], 0.5);
        let bias = rng.tensor([1, 3, 1, 1], 0.3);
        let wts = rng.tensor([2, 3, 5, 6], 1.0);
        fd_check(
            &[input, kernel, bias],
            |g, p| {
                let out = g.conv3x3(p[0], p[1], p[2], padding).unwrap();
                weighted_sum(g, out, &wts)
            },
            OP_TOL,
            &format!("conv3x3/{padding:?}"),
        );
    }
}

pub fn check_window_conv() {
    let mut rng = TestRng::new(20);
    let input = rng.tensor([1, 2, 7, 7], 0.8);
    let kernel: Vec<f64> = (0..9).map(|_| rng.uniform(0.0, 0.3)).collect();
    let wts = rng.tensor([1, 2, 5, 5], 1.0);
    fd_check(
        &[input],
        |g, p| {
            let out = g.window_conv(p[0], &kernel, 3).unwrap();
            weighted_sum(g, out, &wts)
        },
        OP_TOL,
        "window_conv",
    );
}

pub fn check_batch_norm_train_mode() {
    let mut rng = TestRng::new(30);
    let input = rng.tensor([3, 2, 4, 4], 0.9);
    let gamma = rng.tensor_nonzero([1, 2, 1, 1], 0.5, 1.5);
    let beta = rng.tensor([1, 2, 1, 1], 0.4);
    let wts = rng.tensor([3, 2, 4, 4], 1.0);
    fd_check(
        &[input, gamma, beta],
        |g, p| {
            let mut rm = vec![0.0; 2];
            let mut rv = vec![1.0; 2];
            let out = g.batch_norm(p[0], p[1], p[2], &mut rm, &mut rv, true, 0.1, 1e-5).unwrap();
            weighted_sum(g, out, &wts)
        },
        OP_TOL,
        "batch_norm",
    );
}

pub fn check_activations() {
    let mut rng = TestRng::new(40);
    // PReLU is non-differentiable at 0; keep inputs away from it
    let input = rng.tensor_nonzero([2, 2, 3, 3], 0.1, 0.9);
    let slope = Tensor::from_f64([1, 1, 1, 1], &[0.25]).unwrap();
    let wts = rng.tensor([2, 2, 3, 3], 1.0);
    fd_check(
        &[input.clone(), slope],
        |g, p| {
            let out = g.prelu(p[0], p[1]).unwrap();
            weighted_sum(g, out, &wts)
        },
        OP_TOL,
        "prelu",
    );
    fd_check(
        &[input.clone()],
        |g, p| {
            let out = g.tanh(p[0]);
            weighted_sum(g, out, &wts)
        },
        OP_TOL,
        "tanh",
    );
    fd_check(
        &[input],
        |g, p| {
            let out = g.sigmoid(p[0]);
            weighted_sum(g, out, &wts)
        },
        OP_TOL,
        "sigmoid",
    );
}

pub fn check_elementwise_and_reductions() {
    let mut rng = TestRng::new(50);
    let a = rng.tensor([1, 2, 4, 4], 0.8);
    let b = rng.tensor_nonzero([1, 2, 4, 4], 0.3, 1.2); // divisor away from 0
    let wts = rng.tensor([1, 2, 4, 4], 1.0);

    type BinOp = fn(&mut Graph<f64>, Var, Var) -> Var;
    let cases: Vec<(&str, BinOp)> = vec![
        ("add", |g, x, y| g.add(x, y).unwrap()),
        ("sub", |g, x, y| g.sub(x, y).unwrap()),
        ("mul", |g, x, y| g.mul(x, y).unwrap()),
        ("div", |g, x, y| g.div(x, y).unwrap()),
    ];
    for (name, op) in cases {
        fd_check(
            &[a.clone(), b.clone()],
            |g, p| {
                let out = op(g, p[0], p[1]);
                weighted_sum(g, out, &wts)
            },
            OP_TOL,
            name,
        );
    }

    fd_check(
        &[a.clone()],
        |g, p| {
            let s = g.scale(p[0], -1.7);
            let s = g.add_scalar(s, 0.3);
            weighted_sum(g, s, &wts)
        },
        OP_TOL,
        "scale/add_scalar",
    );
    fd_check(&[a.clone()], |g, p| g.sum(p[0]), OP_TOL, "sum");
    fd_check(&[a.clone()], |g, p| g.mean(p[0]).unwrap(), OP_TOL, "mean");

    let nz = rng.tensor_nonzero([1, 2, 4, 4], 0.2, 1.0);
    fd_check(
        &[nz],
        |g, p| {
            let out = g.abs(p[0]);
            weighted_sum(g, out, &wts)
        },
        OP_TOL,
        "abs",
    );
}

pub fn check_concat_and_diffs() {
    let mut rng = TestRng::new(60);
    let a = rng.tensor([2, 2, 4, 4], 0.8);
    let b = rng.tensor([2, 3, 4, 4], 0.8);
    let wts = rng.tensor([2, 5, 4, 4], 1.0);
    fd_check(
        &[a.clone(), b],
        |g, p| {
            let out = g.concat_channels(p[0], p[1]).unwrap();
            weighted_sum(g, out, &wts)
        },
        OP_TOL,
        "concat_channels",
    );

    let wh = rng.tensor([2, 2, 4, 3], 1.0);
    fd_check(
        &[a.clone()],
        |g, p| {
            let out = g.diff_h(p[0]).unwrap();
            weighted_sum(g, out, &wh)
        },
        OP_TOL,
        "diff_h",
    );
    let wv = rng.tensor([2, 2, 3, 4], 1.0);
    fd_check(
        &[a],
        |g, p| {
            let out = g.diff_v(p[0]).unwrap();
            weighted_sum(g, out, &wv)
        },
        OP_TOL,
        "diff_v",
    );
}

pub fn check_loss_components() {
    let mut rng = TestRng::new(70);
    let bv = rng.tensor([1, 2, 5, 5], 0.4);
    let bi = rng.tensor([1, 2, 5, 5], 0.4);
    let dv = rng.tensor([1, 2, 5, 5], 0.4);
    let di = rng.tensor([1, 2, 5, 5], 0.4);
    for red in [Reduction::Sum, Reduction::Mean] {
        fd_check(
            &[bv.clone(), bi.clone(), dv.clone(), di.clone()],
            |g, p| {
                let (_, _, l1) = decomposition_loss(g, p[0], p[1], p[2], p[3], 0.05, red).unwrap();
                l1
            },
            OP_TOL,
            &format!("decomposition_loss/{red:?}"),
        );
    }

    // SSIM needs at least 11x11 planes
    let x = rng.tensor([1, 1, 12, 12], 0.4).map(|v| 0.5 + v);
    let y = rng.tensor([1, 1, 12, 12], 0.4).map(|v| 0.5 + v);
    fd_check(&[x.clone(), y.clone()], |g, p| ssim(g, p[0], p[1]).unwrap(), OP_TOL, "ssim");

    fd_check(
        &[x.clone(), y.clone()],
        |g, p| fidelity(g, p[0], p[1], 5.0, Reduction::Mean).unwrap(),
        OP_TOL,
        "fidelity",
    );

    let gx = rng.tensor_nonzero([1, 1, 6, 6], 0.1, 0.8);
    let gy = rng.tensor_nonzero([1, 1, 6, 6], 0.1, 0.8);
    fd_check(
        &[gx, gy],
        |g, p| gradient_penalty(g, p[0], p[1], Reduction::Sum).unwrap(),
        OP_TOL,
        "gradient_penalty",
    );
}

/// Full objective through the width-8 network on a 2-pair 16x16 batch.
/// Perturbs a spread of entries in every network parameter by name.
pub fn check_full_network_objective() {
    let mut rng = TestRng::new(80);
    let ir_batch = rng.tensor([2, 1, 16, 16], 0.5).map(|v| 0.5 + 0.8 * v);
    let vis_batch = rng.tensor([2, 1, 16, 16], 0.5).map(|v| 0.5 + 0.8 * v);
    let cfg = LossConfig { reduction: Reduction::Mean, ..LossConfig::default() };

    let template = NetworkParams::<f64>::init(8, 99, ArchVariant::Full, SkipMode::Add).unwrap();

    let loss_of = |net: &NetworkParams<f64>| -> (f64, Vec<(String, Vec<f64>)>) {
        let mut net = net.clone();
        let mut g = Graph::<f64>::new();
        let vars = net.register(&mut g);
        let ir = g.leaf(ir_batch.clone());
        let vis = g.leaf(vis_batch.clone());
        let (ir_hat, fi) = net.reconstruct(&mut g, &vars, ir, BnMode::Train).unwrap();
        let (vis_hat, fv) = net.reconstruct(&mut g, &vars, vis, BnMode::Train).unwrap();
        let terms = total_loss(&mut g, ir, ir_hat, vis, vis_hat, &fi, &fv, &cfg).unwrap();
        let value = g.scalar(terms.total);
        g.backward(terms.total).unwrap();
        let grads = vars
            .entries()
            .into_iter()
            .map(|(name, v)| (name, g.grad(v).unwrap().to_vec()))
            .collect();
        (value, grads)
    };

    let (_, analytic) = loss_of(&template);
    // smaller step than the per-op suites: the composite objective has
    // piecewise-linear units (PReLU, |x|), and a coarse step makes the
    // secant straddle their kinks
    let step = 1e-5;
    let mut checked = 0usize;
    let mut names: Vec<String> = Vec::new();
    template.visit_params(|name, _| names.push(name.to_string()));

    for (pi, name) in names.iter().enumerate() {
        let grads = analytic.iter().find(|(n, _)| n == name).map(|(_, g)| g.clone()).unwrap();
        // probe a deterministic subset of entries per tensor: full FD over
        // every one of the ~3.7k parameters is hours of wall clock; a spread
        // of entries in every tensor still exercises every layer and role
        let len = grads.len();
        let probes: Vec<usize> = if len <= 6 {
            (0..len).collect()
        } else {
            (0..6).map(|k| (k * (len - 1)) / 5).collect()
        };
        for &j in &probes {
            let perturb = |delta: f64| -> f64 {
                let mut net = template.clone();
                let mut idx = 0usize;
                net.visit_params_mut(|_, t| {
                    if idx == pi {
                        t.data_mut()[j] += delta;
                    }
                    idx += 1;
                });
                loss_of(&net).0
            };
            let fd = (perturb(step) - perturb(-step)) / (2.0 * step);
            let a = grads[j];
            let bound = NET_TOL * a.abs().max(fd.abs()) + 1e-7;
            assert!(
                (a - fd).abs() <= bound,
                "{name}[{j}]: analytic {a} vs finite-difference {fd} (bound {bound})"
            );
            checked += 1;
        }
    }
    assert!(checked >= 150, "expected a broad probe set, got {checked}");
}
