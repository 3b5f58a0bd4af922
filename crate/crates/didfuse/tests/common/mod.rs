//! Shared helpers for the integration suites: deterministic random tensors
//! and a central-finite-difference gradient checker.
#![allow(dead_code)] // each suite uses a different subset of these helpers

pub mod grads;
pub mod oracle;

use didfuse::tensor::{Graph, Shape, Tensor, Var};

/// Deterministic uniform values in [-amp, amp] (splitmix-style generator so
/// the suites do not depend on the crate's own RNG choices).
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(0xD1B54A32D192ED03))
    }

    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        (z ^ (z >> 31)) as f64 / u64::MAX as f64
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn tensor(&mut self, shape: Shape, amp: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let vals: Vec<f64> = (0..n).map(|_| self.uniform(-amp, amp)).collect();
        Tensor::from_f64(shape, &vals).unwrap()
    }

    /// Values bounded away from zero (for |x|, PReLU, division checks).
    pub fn tensor_nonzero(&mut self, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                let sign = if self.next_f64() < 0.5 { -1.0 } else { 1.0 };
                sign * self.uniform(lo, hi)
            })
            .collect();
        Tensor::from_f64(shape, &vals).unwrap()
    }
}

pub const FD_STEP: f64 = 1e-4;

/// Central-finite-difference check: `build` assembles a scalar loss from the
/// supplied parameter tensors; analytic gradients from one backward pass are
/// compared entrywise against (L(p+h) - L(p-h)) / 2h.
///
/// Relative tolerance: |a - f| <= tol * max(|a|, |f|) + 1e-8.
pub fn fd_check<F>(params: &[Tensor<f64>], build: F, tol: f64, label: &str)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    // analytic pass
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars);
    assert_eq!(g.shape(loss), [1, 1, 1, 1], "{label}: loss must be scalar");
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> =
        vars.iter().map(|&v| g.grad(v).map(|s| s.to_vec()).unwrap_or_default()).collect();

    let eval = |perturbed: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &vars);
        g.scalar(loss)
    };

    for (pi, base) in params.iter().enumerate() {
        let grads = &analytic[pi];
        assert_eq!(grads.len(), base.len(), "{label}: missing gradient for param {pi}");
        for j in 0..base.len() {
            let mut plus = params.to_vec();
            let mut pd = plus[pi].clone();
            pd.data_mut()[j] += FD_STEP;
            plus[pi] = pd;
            let mut minus = params.to_vec();
            let mut md = minus[pi].clone();
            md.data_mut()[j] -= FD_STEP;
            minus[pi] = md;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let a = grads[j];
            let bound = tol * a.abs().max(fd.abs()) + 1e-8;
            assert!(
                (a - fd).abs() <= bound,
                "{label}: param {pi} entry {j}: analytic {a} vs finite-difference {fd} (bound {bound})"
            );
        }
    }
}
