//! Reverse-mode differentiation over a recorded operation tape.
//!
//! A [`Graph`] owns every tensor produced during a forward pass. Operations
//! append nodes (operand indices plus whatever forward context the backward
//! pass needs) and return a [`Var`] handle. [`Graph::backward`] replays the
//! tape in reverse, accumulating gradients into per-node slots; leaf
//! parameters registered with [`Graph::param`] end up holding
//! d(root)/d(param).
//!
//! The tape is topological by construction: every node's operands precede it,
//! so a single reverse sweep visits each node exactly once. Repeated
//! `backward` calls without [`Graph::reset_grads`] accumulate.

use super::{r, Real, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Padding convention for 3x3 convolutions. Reflection mirrors without
/// repeating the border pixel (reflect-101).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Padding {
    Reflection,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
struct BnCtx<R> {
    mean: Vec<R>,
    inv_std: Vec<R>,
    train: bool,
}

#[derive(Debug, Clone)]
enum Op<R> {
    Leaf,
    Conv3x3 { input: usize, kernel: usize, bias: usize, padding: Padding },
    WindowConv { input: usize, kernel: Vec<R>, k: usize },
    BatchNorm { input: usize, gamma: usize, beta: usize, ctx: BnCtx<R> },
    Prelu { input: usize, slope: usize },
    Tanh { input: usize },
    Sigmoid { input: usize },
    Concat { a: usize, b: usize },
    Binary { a: usize, b: usize, kind: BinKind },
    Scale { a: usize, s: R },
    AddScalar { a: usize },
    Sum { a: usize },
    Mean { a: usize },
    Abs { a: usize },
    DiffH { a: usize },
    DiffV { a: usize },
}

struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    requires_grad: bool,
}

/// Computation tape. Single-writer: one logical thread owns it.
pub struct Graph<R> {
    nodes: Vec<Node<R>>,
    grads: Vec<Option<Vec<R>>>,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Insert a constant tensor (no gradient tracked).
    pub fn leaf(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Insert a tracked parameter; `backward` will accumulate its gradient.
    pub fn param(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Extract a 1-element tensor's value.
    pub fn scalar(&self, v: Var) -> R {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value.data()[0]
    }

    /// Gradient accumulated for `v`, if any flowed into it.
    pub fn grad(&self, v: Var) -> Option<&[R]> {
        self.grads[v.0].as_deref()
    }

    pub fn reset_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn req(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    // ---- forward operations -------------------------------------------------

    /// 3x3 convolution, stride 1, padding 1 (spatial size preserved).
    /// `kernel` has shape (outC, inC, 3, 3), `bias` shape (1, outC, 1, 1).
    pub fn conv3x3(&mut self, input: Var, kernel: Var, bias: Var, padding: Padding) -> Result<Var> {
        let ish = self.shape(input);
        let ksh = self.shape(kernel);
        let bsh = self.shape(bias);
        let [n, in_c, h, w] = ish;
        let [out_c, k_in_c, kh, kw] = ksh;
        if kh != 3 || kw != 3 {
            return Err(Error::shape(format!("conv3x3 kernel must be 3x3, got {kh}x{kw}")));
        }
        if k_in_c != in_c {
            return Err(Error::shape(format!(
                "conv3x3 input has {in_c} channels but kernel expects {k_in_c}"
            )));
        }
        if bsh != [1, out_c, 1, 1] {
            return Err(Error::shape(format!(
                "conv3x3 bias shape {bsh:?} does not match {out_c} output channels"
            )));
        }
        if padding == Padding::Reflection && (h < 2 || w < 2) {
            return Err(Error::invalid(format!(
                "reflection padding needs h,w >= 2, got {h}x{w}"
            )));
        }
        let kd = self.nodes[kernel.0].value.data().to_vec();
        let bd = self.nodes[bias.0].value.data().to_vec();
        let inp = &self.nodes[input.0].value;
        let mut out = vec![R::zero(); n * out_c * h * w];
        let pw = w + 2;
        for b in 0..n {
            let padded: Vec<Vec<R>> =
                (0..in_c).map(|c| pad_plane(inp.plane(b, c), h, w, padding)).collect();
            for oc in 0..out_c {
                let op_base = ((b * out_c) + oc) * h * w;
                out[op_base..op_base + h * w].fill(bd[oc]);
                for (ic, pp) in padded.iter().enumerate() {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wgt = kd[((oc * in_c + ic) * 3 + ky) * 3 + kx];
                            for y in 0..h {
                                let prow = &pp[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                                let orow = &mut out[op_base + y * w..op_base + (y + 1) * w];
                                for x in 0..w {
                                    orow[x] = orow[x] + wgt * prow[x];
                                }
                            }
                        }
                    }
                }
            }
        }
        let req = self.req(input.0) || self.req(kernel.0) || self.req(bias.0);
        Ok(self.push(
            Tensor::new([n, out_c, h, w], out)?,
            Op::Conv3x3 { input: input.0, kernel: kernel.0, bias: bias.0, padding },
            req,
        ))
    }

    /// Valid-mode correlation of every (batch, channel) plane with a fixed
    /// (untracked) k x k window. Used for Gaussian windows in SSIM.
    pub fn window_conv(&mut self, input: Var, kernel: &[R], k: usize) -> Result<Var> {
        if kernel.len() != k * k {
            return Err(Error::shape("window kernel length must be k*k".to_string()));
        }
        let [n, c, h, w] = self.shape(input);
        if h < k || w < k {
            return Err(Error::invalid(format!(
                "window_conv needs h,w >= {k}, got {h}x{w}"
            )));
        }
        let oh = h - k + 1;
        let ow = w - k + 1;
        let inp = &self.nodes[input.0].value;
        let mut out = vec![R::zero(); n * c * oh * ow];
        for b in 0..n {
            for ch in 0..c {
                let plane = inp.plane(b, ch);
                let ob = (b * c + ch) * oh * ow;
                for ky in 0..k {
                    for kx in 0..k {
                        let wgt = kernel[ky * k + kx];
                        for y in 0..oh {
                            let prow = &plane[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                            let orow = &mut out[ob + y * ow..ob + (y + 1) * ow];
                            for x in 0..ow {
                                orow[x] = orow[x] + wgt * prow[x];
                            }
                        }
                    }
                }
            }
        }
        let req = self.req(input.0);
        Ok(self.push(
            Tensor::new([n, c, oh, ow], out)?,
            Op::WindowConv { input: input.0, kernel: kernel.to_vec(), k },
            req,
        ))
    }

    /// Batch normalization over (n, h, w) per channel. Train mode uses batch
    /// statistics and updates the running statistics in place by exponential
    /// moving average; eval mode normalizes with the running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut [R],
        running_var: &mut [R],
        train: bool,
        momentum: R,
        eps: R,
    ) -> Result<Var> {
        let [n, c, h, w] = self.shape(input);
        if self.shape(gamma) != [1, c, 1, 1] || self.shape(beta) != [1, c, 1, 1] {
            return Err(Error::shape(format!("batch_norm gamma/beta must have {c} channels")));
        }
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batch_norm running stats length mismatch".to_string()));
        }
        if eps <= R::zero() {
            return Err(Error::invalid("batch_norm eps must be > 0".to_string()));
        }
        let count = n * h * w;
        if count == 0 {
            return Err(Error::invalid("batch_norm on a zero-size batch".to_string()));
        }
        let m = r::<R>(count as f64);
        let inp = &self.nodes[input.0].value;
        let gd = self.nodes[gamma.0].value.data().to_vec();
        let bd = self.nodes[beta.0].value.data().to_vec();

        let (mean, inv_std) = if train {
            let mut mean = vec![R::zero(); c];
            let mut var = vec![R::zero(); c];
            for ch in 0..c {
                let mut s = R::zero();
                for b in 0..n {
                    for &v in inp.plane(b, ch) {
                        s = s + v;
                    }
                }
                mean[ch] = s / m;
                let mut sq = R::zero();
                for b in 0..n {
                    for &v in inp.plane(b, ch) {
                        let d = v - mean[ch];
                        sq = sq + d * d;
                    }
                }
                var[ch] = sq / m;
            }
            let one = R::one();
            for ch in 0..c {
                // PyTorch convention: biased variance normalizes the batch,
                // unbiased variance feeds the running estimate.
                let unbiased = if count > 1 {
                    var[ch] * m / (m - one)
                } else {
                    var[ch]
                };
                running_mean[ch] = (one - momentum) * running_mean[ch] + momentum * mean[ch];
                running_var[ch] = (one - momentum) * running_var[ch] + momentum * unbiased;
            }
            let inv_std: Vec<R> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
            (mean, inv_std)
        } else {
            let inv_std: Vec<R> =
                running_var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
            (running_mean.to_vec(), inv_std)
        };

        let mut out = vec![R::zero(); inp.len()];
        for b in 0..n {
            for ch in 0..c {
                let plane = inp.plane(b, ch);
                let base = (b * c + ch) * h * w;
                let (mu, is, g, bt) = (mean[ch], inv_std[ch], gd[ch], bd[ch]);
                for (i, &v) in plane.iter().enumerate() {
                    out[base + i] = g * (v - mu) * is + bt;
                }
            }
        }
        let req = self.req(input.0) || self.req(gamma.0) || self.req(beta.0);
        Ok(self.push(
            Tensor::new([n, c, h, w], out)?,
            Op::BatchNorm { input: input.0, gamma: gamma.0, beta: beta.0, ctx: BnCtx { mean, inv_std, train } },
            req,
        ))
    }

    /// PReLU with a single learnable slope shared across the tensor.
    /// `slope` must be a 1-element tracked tensor.
    pub fn prelu(&mut self, input: Var, slope: Var) -> Result<Var> {
        if self.nodes[slope.0].value.len() != 1 {
            return Err(Error::shape("prelu slope must be a 1-element tensor".to_string()));
        }
        let s = self.nodes[slope.0].value.data()[0];
        let val = self.nodes[input.0].value.map(|v| if v >= R::zero() { v } else { s * v });
        let req = self.req(input.0) || self.req(slope.0);
        Ok(self.push(val, Op::Prelu { input: input.0, slope: slope.0 }, req))
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        let val = self.nodes[input.0].value.map(|v| v.tanh());
        let req = self.req(input.0);
        self.push(val, Op::Tanh { input: input.0 }, req)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let one = R::one();
        let val = self.nodes[input.0].value.map(|v| one / (one + (-v).exp()));
        let req = self.req(input.0);
        self.push(val, Op::Sigmoid { input: input.0 }, req)
    }

    /// Concatenate along the channel axis, `a`'s channels first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [na, ca, ha, wa] = self.shape(a);
        let [nb, cb, hb, wb] = self.shape(b);
        if na != nb || ha != hb || wa != wb {
            return Err(Error::shape(format!(
                "concat_channels batch/spatial mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = Vec::with_capacity((ca + cb) * na * ha * wa);
        for bi in 0..na {
            for c in 0..ca {
                out.extend_from_slice(av.plane(bi, c));
            }
            for c in 0..cb {
                out.extend_from_slice(bv.plane(bi, c));
            }
        }
        let req = self.req(a.0) || self.req(b.0);
        Ok(self.push(
            Tensor::new([na, ca + cb, ha, wa], out)?,
            Op::Concat { a: a.0, b: b.0 },
            req,
        ))
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinKind) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "elementwise {:?} on mismatched shapes {:?} vs {:?}",
                kind,
                self.shape(a),
                self.shape(b)
            )));
        }
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let out: Vec<R> = av
            .iter()
            .zip(bv)
            .map(|(&x, &y)| match kind {
                BinKind::Add => x + y,
                BinKind::Sub => x - y,
                BinKind::Mul => x * y,
                BinKind::Div => x / y,
            })
            .collect();
        let shape = self.shape(a);
        let req = self.req(a.0) || self.req(b.0);
        Ok(self.push(Tensor::new(shape, out)?, Op::Binary { a: a.0, b: b.0, kind }, req))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinKind::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinKind::Div)
    }

    pub fn scale(&mut self, a: Var, s: R) -> Var {
        let val = self.nodes[a.0].value.map(|v| v * s);
        let req = self.req(a.0);
        self.push(val, Op::Scale { a: a.0, s }, req)
    }

    pub fn add_scalar(&mut self, a: Var, s: R) -> Var {
        let val = self.nodes[a.0].value.map(|v| v + s);
        let req = self.req(a.0);
        self.push(val, Op::AddScalar { a: a.0 }, req)
    }

    /// Sum of all entries, as a scalar tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: R = self.nodes[a.0].value.iter().copied().sum();
        let req = self.req(a.0);
        self.push(Tensor::scalar(s), Op::Sum { a: a.0 }, req)
    }

    /// Mean of all entries, as a scalar tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.nodes[a.0].value.len();
        if n == 0 {
            return Err(Error::invalid("mean of an empty tensor".to_string()));
        }
        let s: R = self.nodes[a.0].value.iter().copied().sum();
        let req = self.req(a.0);
        Ok(self.push(Tensor::scalar(s / r::<R>(n as f64)), Op::Mean { a: a.0 }, req))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let val = self.nodes[a.0].value.map(|v| v.abs());
        let req = self.req(a.0);
        self.push(val, Op::Abs { a: a.0 }, req)
    }

    /// Horizontal forward differences: out[..., x] = a[..., x+1] - a[..., x].
    pub fn diff_h(&mut self, a: Var) -> Result<Var> {
        let [n, c, h, w] = self.shape(a);
        if w < 2 {
            return Err(Error::invalid("diff_h needs width >= 2".to_string()));
        }
        let av = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(n * c * h * (w - 1));
        for b in 0..n {
            for ch in 0..c {
                let p = av.plane(b, ch);
                for y in 0..h {
                    for x in 0..w - 1 {
                        out.push(p[y * w + x + 1] - p[y * w + x]);
                    }
                }
            }
        }
        let req = self.req(a.0);
        Ok(self.push(Tensor::new([n, c, h, w - 1], out)?, Op::DiffH { a: a.0 }, req))
    }

    /// Vertical forward differences: out[..., y, x] = a[..., y+1, x] - a[..., y, x].
    pub fn diff_v(&mut self, a: Var) -> Result<Var> {
        let [n, c, h, w] = self.shape(a);
        if h < 2 {
            return Err(Error::invalid("diff_v needs height >= 2".to_string()));
        }
        let av = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(n * c * (h - 1) * w);
        for b in 0..n {
            for ch in 0..c {
                let p = av.plane(b, ch);
                for y in 0..h - 1 {
                    for x in 0..w {
                        out.push(p[(y + 1) * w + x] - p[y * w + x]);
                    }
                }
            }
        }
        let req = self.req(a.0);
        Ok(self.push(Tensor::new([n, c, h - 1, w], out)?, Op::DiffV { a: a.0 }, req))
    }

    // ---- backward -----------------------------------------------------------

    /// Propagate d(root)/d(node) through the tape. `root` must be scalar.
    /// Tracked parameter gradients accumulate across calls until
    /// [`Graph::reset_grads`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(()); // nothing tracked feeds the root
        }
        // Intermediate grads are taken during the sweep; leaf grads persist.
        let mut flow: Vec<Option<Vec<R>>> = vec![None; root.0 + 1];
        flow[root.0] = Some(vec![R::one()]);
        for i in (0..=root.0).rev() {
            let g = match flow[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let slot = self.grads[i].get_or_insert_with(|| vec![R::zero(); g.len()]);
                for (s, gv) in slot.iter_mut().zip(&g) {
                    *s = *s + *gv;
                }
                continue;
            }
            self.backprop_node(i, &g, &mut flow);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[R], flow: &mut [Option<Vec<R>>]) {
        let node = &self.nodes[i];
        let acc = |flow: &mut [Option<Vec<R>>], idx: usize, len: usize| -> bool {
            if !self.nodes[idx].requires_grad {
                return false;
            }
            if flow[idx].is_none() {
                flow[idx] = Some(vec![R::zero(); len]);
            }
            true
        };
        match &node.op {
            Op::Leaf => unreachable!("leaves handled in backward"),
            Op::Conv3x3 { input, kernel, bias, padding } => {
                self.backprop_conv3x3(*input, *kernel, *bias, *padding, i, g, flow);
            }
            Op::WindowConv { input, kernel, k } => {
                let [n, c, h, w] = self.nodes[*input].value.shape();
                let [_, _, oh, ow] = node.value.shape();
                if acc(flow, *input, n * c * h * w) {
                    let di = flow[*input].as_mut().unwrap();
                    for b in 0..n {
                        for ch in 0..c {
                            let gb = (b * c + ch) * oh * ow;
                            let ib = (b * c + ch) * h * w;
                            for ky in 0..*k {
                                for kx in 0..*k {
                                    let wgt = kernel[ky * k + kx];
                                    for y in 0..oh {
                                        let grow = &g[gb + y * ow..gb + (y + 1) * ow];
                                        let irow = &mut di
                                            [ib + (y + ky) * w + kx..ib + (y + ky) * w + kx + ow];
                                        for x in 0..ow {
                                            irow[x] = irow[x] + wgt * grow[x];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::BatchNorm { input, gamma, beta, ctx } => {
                self.backprop_batch_norm(*input, *gamma, *beta, ctx, i, g, flow);
            }
            Op::Prelu { input, slope } => {
                let s = self.nodes[*slope].value.data()[0];
                let x = self.nodes[*input].value.data();
                if acc(flow, *input, x.len()) {
                    let di = flow[*input].as_mut().unwrap();
                    for ((d, &xi), &gi) in di.iter_mut().zip(x).zip(g) {
                        *d = *d + if xi >= R::zero() { gi } else { gi * s };
                    }
                }
                if acc(flow, *slope, 1) {
                    let mut ds = R::zero();
                    for (&xi, &gi) in x.iter().zip(g) {
                        if xi < R::zero() {
                            ds = ds + gi * xi;
                        }
                    }
                    let slot = flow[*slope].as_mut().unwrap();
                    slot[0] = slot[0] + ds;
                }
            }
            Op::Tanh { input } => {
                let y = node.value.data();
                if acc(flow, *input, y.len()) {
                    let di = flow[*input].as_mut().unwrap();
                    let one = R::one();
                    for ((d, &yi), &gi) in di.iter_mut().zip(y).zip(g) {
                        *d = *d + gi * (one - yi * yi);
                    }
                }
            }
            Op::Sigmoid { input } => {
                let y = node.value.data();
                if acc(flow, *input, y.len()) {
                    let di = flow[*input].as_mut().unwrap();
                    let one = R::one();
                    for ((d, &yi), &gi) in di.iter_mut().zip(y).zip(g) {
                        *d = *d + gi * yi * (one - yi);
                    }
                }
            }
            Op::Concat { a, b } => {
                let [n, ca, h, w] = self.nodes[*a].value.shape();
                let cb = self.nodes[*b].value.channels();
                let plane = h * w;
                for (operand, coff, cn) in [(*a, 0usize, ca), (*b, ca, cb)] {
                    if !acc(flow, operand, n * cn * plane) {
                        continue;
                    }
                    let d = flow[operand].as_mut().unwrap();
                    for bi in 0..n {
                        for c in 0..cn {
                            let src = ((bi * (ca + cb)) + coff + c) * plane;
                            let dst = (bi * cn + c) * plane;
                            for x in 0..plane {
                                d[dst + x] = d[dst + x] + g[src + x];
                            }
                        }
                    }
                }
            }
            Op::Binary { a, b, kind } => {
                let av = self.nodes[*a].value.data();
                let bv = self.nodes[*b].value.data();
                if acc(flow, *a, av.len()) {
                    let da = flow[*a].as_mut().unwrap();
                    match kind {
                        BinKind::Add | BinKind::Sub => {
                            for (d, &gi) in da.iter_mut().zip(g) {
                                *d = *d + gi;
                            }
                        }
                        BinKind::Mul => {
                            for ((d, &gi), &yi) in da.iter_mut().zip(g).zip(bv) {
                                *d = *d + gi * yi;
                            }
                        }
                        BinKind::Div => {
                            for ((d, &gi), &yi) in da.iter_mut().zip(g).zip(bv) {
                                *d = *d + gi / yi;
                            }
                        }
                    }
                }
                if acc(flow, *b, bv.len()) {
                    let db = flow[*b].as_mut().unwrap();
                    match kind {
                        BinKind::Add => {
                            for (d, &gi) in db.iter_mut().zip(g) {
                                *d = *d + gi;
                            }
                        }
                        BinKind::Sub => {
                            for (d, &gi) in db.iter_mut().zip(g) {
                                *d = *d - gi;
                            }
                        }
                        BinKind::Mul => {
                            for ((d, &gi), &xi) in db.iter_mut().zip(g).zip(av) {
                                *d = *d + gi * xi;
                            }
                        }
                        BinKind::Div => {
                            for (((d, &gi), &xi), &yi) in db.iter_mut().zip(g).zip(av).zip(bv) {
                                *d = *d - gi * xi / (yi * yi);
                            }
                        }
                    }
                }
            }
            Op::Scale { a, s } => {
                if acc(flow, *a, g.len()) {
                    let da = flow[*a].as_mut().unwrap();
                    for (d, &gi) in da.iter_mut().zip(g) {
                        *d = *d + gi * *s;
                    }
                }
            }
            Op::AddScalar { a } => {
                if acc(flow, *a, g.len()) {
                    let da = flow[*a].as_mut().unwrap();
                    for (d, &gi) in da.iter_mut().zip(g) {
                        *d = *d + gi;
                    }
                }
            }
            Op::Sum { a } => {
                let len = self.nodes[*a].value.len();
                if acc(flow, *a, len) {
                    let da = flow[*a].as_mut().unwrap();
                    let g0 = g[0];
                    for d in da.iter_mut() {
                        *d = *d + g0;
                    }
                }
            }
            Op::Mean { a } => {
                let len = self.nodes[*a].value.len();
                if acc(flow, *a, len) {
                    let da = flow[*a].as_mut().unwrap();
                    let g0 = g[0] / r::<R>(len as f64);
                    for d in da.iter_mut() {
                        *d = *d + g0;
                    }
                }
            }
            Op::Abs { a } => {
                let av = self.nodes[*a].value.data();
                if acc(flow, *a, av.len()) {
                    let da = flow[*a].as_mut().unwrap();
                    for ((d, &gi), &xi) in da.iter_mut().zip(g).zip(av) {
                        // subgradient 0 at 0
                        if xi > R::zero() {
                            *d = *d + gi;
                        } else if xi < R::zero() {
                            *d = *d - gi;
                        }
                    }
                }
            }
            Op::DiffH { a } => {
                let [n, c, h, w] = self.nodes[*a].value.shape();
                if acc(flow, *a, n * c * h * w) {
                    let da = flow[*a].as_mut().unwrap();
                    let ow = w - 1;
                    for bc in 0..n * c {
                        let ib = bc * h * w;
                        let gb = bc * h * ow;
                        for y in 0..h {
                            for x in 0..ow {
                                let gi = g[gb + y * ow + x];
                                da[ib + y * w + x + 1] = da[ib + y * w + x + 1] + gi;
                                da[ib + y * w + x] = da[ib + y * w + x] - gi;
                            }
                        }
                    }
                }
            }
            Op::DiffV { a } => {
                let [n, c, h, w] = self.nodes[*a].value.shape();
                if acc(flow, *a, n * c * h * w) {
                    let da = flow[*a].as_mut().unwrap();
                    let oh = h - 1;
                    for bc in 0..n * c {
                        let ib = bc * h * w;
                        let gb = bc * oh * w;
                        for y in 0..oh {
                            for x in 0..w {
                                let gi = g[gb + y * w + x];
                                da[ib + (y + 1) * w + x] = da[ib + (y + 1) * w + x] + gi;
                                da[ib + y * w + x] = da[ib + y * w + x] - gi;
                            }
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_conv3x3(
        &self,
        input: usize,
        kernel: usize,
        bias: usize,
        padding: Padding,
        node: usize,
        g: &[R],
        flow: &mut [Option<Vec<R>>],
    ) {
        let [n, in_c, h, w] = self.nodes[input].value.shape();
        let out_c = self.nodes[node].value.channels();
        let pw = w + 2;
        let inp = &self.nodes[input].value;
        let kd = self.nodes[kernel].value.data();

        if self.nodes[bias].requires_grad {
            if flow[bias].is_none() {
                flow[bias] = Some(vec![R::zero(); out_c]);
            }
            let db = flow[bias].as_mut().unwrap();
            for b in 0..n {
                for oc in 0..out_c {
                    let base = (b * out_c + oc) * h * w;
                    let mut s = R::zero();
                    for &gi in &g[base..base + h * w] {
                        s = s + gi;
                    }
                    db[oc] = db[oc] + s;
                }
            }
        }

        let need_kernel = self.nodes[kernel].requires_grad;
        let need_input = self.nodes[input].requires_grad;
        if !need_kernel && !need_input {
            return;
        }
        if need_kernel && flow[kernel].is_none() {
            flow[kernel] = Some(vec![R::zero(); out_c * in_c * 9]);
        }
        if need_input && flow[input].is_none() {
            flow[input] = Some(vec![R::zero(); n * in_c * h * w]);
        }

        for b in 0..n {
            let padded: Vec<Vec<R>> = if need_kernel {
                (0..in_c).map(|c| pad_plane(inp.plane(b, c), h, w, padding)).collect()
            } else {
                Vec::new()
            };
            if need_kernel {
                let dk = flow[kernel].as_mut().unwrap();
                for oc in 0..out_c {
                    let gb = (b * out_c + oc) * h * w;
                    for (ic, pp) in padded.iter().enumerate() {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let mut s = R::zero();
                                for y in 0..h {
                                    let grow = &g[gb + y * w..gb + (y + 1) * w];
                                    let prow = &pp[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                                    for x in 0..w {
                                        s = s + grow[x] * prow[x];
                                    }
                                }
                                let ki = ((oc * in_c + ic) * 3 + ky) * 3 + kx;
                                dk[ki] = dk[ki] + s;
                            }
                        }
                    }
                }
            }
            if need_input {
                let di = flow[input].as_mut().unwrap();
                for ic in 0..in_c {
                    let mut dpad = vec![R::zero(); (h + 2) * pw];
                    for oc in 0..out_c {
                        let gb = (b * out_c + oc) * h * w;
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let wgt = kd[((oc * in_c + ic) * 3 + ky) * 3 + kx];
                                for y in 0..h {
                                    let grow = &g[gb + y * w..gb + (y + 1) * w];
                                    let drow = &mut dpad
                                        [(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                                    for x in 0..w {
                                        drow[x] = drow[x] + wgt * grow[x];
                                    }
                                }
                            }
                        }
                    }
                    let base = (b * in_c + ic) * h * w;
                    for py in 0..h + 2 {
                        for px in 0..pw {
                            if let Some((sy, sx)) = pad_source(py, px, h, w, padding) {
                                di[base + sy * w + sx] = di[base + sy * w + sx] + dpad[py * pw + px];
                            }
                        }
                    }
                }
            }
        }
    }

    fn backprop_batch_norm(
        &self,
        input: usize,
        gamma: usize,
        beta: usize,
        ctx: &BnCtx<R>,
        _node: usize,
        g: &[R],
        flow: &mut [Option<Vec<R>>],
    ) {
        let [n, c, h, w] = self.nodes[input].value.shape();
        let inp = &self.nodes[input].value;
        let gd = self.nodes[gamma].value.data();
        let m = r::<R>((n * h * w) as f64);
        let plane = h * w;

        // per-channel reductions over g and g*xhat
        let mut sum_g = vec![R::zero(); c];
        let mut sum_gx = vec![R::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let (mu, is) = (ctx.mean[ch], ctx.inv_std[ch]);
                let p = inp.plane(b, ch);
                let gp = &g[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                let mut sg = R::zero();
                let mut sgx = R::zero();
                for (&xi, &gi) in p.iter().zip(gp) {
                    sg = sg + gi;
                    sgx = sgx + gi * (xi - mu) * is;
                }
                sum_g[ch] = sum_g[ch] + sg;
                sum_gx[ch] = sum_gx[ch] + sgx;
            }
        }

        if self.nodes[beta].requires_grad {
            if flow[beta].is_none() {
                flow[beta] = Some(vec![R::zero(); c]);
            }
            let db = flow[beta].as_mut().unwrap();
            for ch in 0..c {
                db[ch] = db[ch] + sum_g[ch];
            }
        }
        if self.nodes[gamma].requires_grad {
            if flow[gamma].is_none() {
                flow[gamma] = Some(vec![R::zero(); c]);
            }
            let dg = flow[gamma].as_mut().unwrap();
            for ch in 0..c {
                dg[ch] = dg[ch] + sum_gx[ch];
            }
        }
        if self.nodes[input].requires_grad {
            if flow[input].is_none() {
                flow[input] = Some(vec![R::zero(); n * c * plane]);
            }
            let di = flow[input].as_mut().unwrap();
            for b in 0..n {
                for ch in 0..c {
                    let (mu, is, ga) = (ctx.mean[ch], ctx.inv_std[ch], gd[ch]);
                    let p = inp.plane(b, ch);
                    let base = (b * c + ch) * plane;
                    if ctx.train {
                        let mg = sum_g[ch] / m;
                        let mgx = sum_gx[ch] / m;
                        for (i, (&xi, &gi)) in p.iter().zip(&g[base..base + plane]).enumerate() {
                            let xhat = (xi - mu) * is;
                            di[base + i] = di[base + i] + ga * is * (gi - mg - xhat * mgx);
                        }
                    } else {
                        for (i, &gi) in g[base..base + plane].iter().enumerate() {
                            di[base + i] = di[base + i] + ga * is * gi;
                        }
                    }
                }
            }
        }
    }
}

/// Build a (h+2) x (w+2) padded copy of a plane.
fn pad_plane<R: Real>(plane: &[R], h: usize, w: usize, padding: Padding) -> Vec<R> {
    let pw = w + 2;
    let mut out = vec![R::zero(); (h + 2) * pw];
    for py in 0..h + 2 {
        for px in 0..pw {
            if let Some((sy, sx)) = pad_source(py, px, h, w, padding) {
                out[py * pw + px] = plane[sy * w + sx];
            }
        }
    }
    out
}

/// Source pixel for a padded coordinate, or None for zero padding borders.
fn pad_source(py: usize, px: usize, h: usize, w: usize, padding: Padding) -> Option<(usize, usize)> {
    let y = py as isize - 1;
    let x = px as isize - 1;
    match padding {
        Padding::Zero => {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                None
            } else {
                Some((y as usize, x as usize))
            }
        }
        Padding::Reflection => {
            let ry = if y < 0 {
                -y
            } else if y >= h as isize {
                2 * (h as isize - 1) - y
            } else {
                y
            };
            let rx = if x < 0 {
                -x
            } else if x >= w as isize {
                2 * (w as isize - 1) - x
            } else {
                x
            };
            Some((ry as usize, rx as usize))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn conv_all_ones_zero_padding() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full([1, 1, 4, 4], 1.0));
        let k = g.leaf(Tensor::full([1, 1, 3, 3], 1.0));
        let b = g.leaf(Tensor::zeros([1, 1, 1, 1]));
        let y = g.conv3x3(x, k, b, Padding::Zero).unwrap();
        let out = g.value(y);
        assert_eq!(out.at(0, 0, 0, 0), 4.0); // corner
        assert_eq!(out.at(0, 0, 0, 1), 6.0); // edge
        assert_eq!(out.at(0, 0, 1, 1), 9.0); // interior
        assert_eq!(out.at(0, 0, 3, 3), 4.0);
    }

    #[test]
    fn conv_delta_kernel_is_identity_under_either_padding() {
        let vals: Vec<f64> = (0..25).map(|i| (i as f64) * 0.13 - 1.0).collect();
        for pad in [Padding::Zero, Padding::Reflection] {
            let mut g = Graph::<f64>::new();
            let x = g.leaf(t([1, 1, 5, 5], &vals));
            let mut kd = vec![0.0; 9];
            kd[4] = 1.0; // center tap
            let k = g.leaf(t([1, 1, 3, 3], &kd));
            let b = g.leaf(Tensor::zeros([1, 1, 1, 1]));
            let y = g.conv3x3(x, k, b, pad).unwrap();
            assert_eq!(g.value(y).data(), g.value(x).data());
        }
    }

    #[test]
    fn conv_rejects_shape_mismatch_and_tiny_reflection() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros([1, 2, 4, 4]));
        let k = g.leaf(Tensor::zeros([1, 3, 3, 3]));
        let b = g.leaf(Tensor::zeros([1, 1, 1, 1]));
        assert!(g.conv3x3(x, k, b, Padding::Zero).is_err());

        let x1 = g.leaf(Tensor::zeros([1, 1, 1, 4]));
        let k1 = g.leaf(Tensor::zeros([1, 1, 3, 3]));
        assert!(g.conv3x3(x1, k1, b, Padding::Reflection).is_err());
        assert!(g.conv3x3(x1, k1, b, Padding::Zero).is_ok());
    }

    #[test]
    fn concat_shapes_and_empty_identity() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::full([1, 2, 4, 4], 1.0));
        let b = g.leaf(Tensor::full([1, 3, 4, 4], 2.0));
        let c = g.concat_channels(a, b).unwrap();
        assert_eq!(g.shape(c), [1, 5, 4, 4]);
        assert_eq!(g.value(c).at(0, 1, 0, 0), 1.0);
        assert_eq!(g.value(c).at(0, 2, 0, 0), 2.0);

        let empty = g.leaf(Tensor::zeros([1, 0, 4, 4]));
        let d = g.concat_channels(a, empty).unwrap();
        assert_eq!(g.value(d).data(), g.value(a).data());

        let mismatched = g.leaf(Tensor::zeros([1, 1, 3, 4]));
        assert!(g.concat_channels(a, mismatched).is_err());
    }

    #[test]
    fn concat_backward_splits_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::full([1, 1, 2, 2], 0.5));
        let b = g.param(Tensor::full([1, 2, 2, 2], -0.5));
        let c = g.concat_channels(a, b).unwrap();
        let s = g.sum(c);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0; 4]);
        assert_eq!(g.grad(b).unwrap(), &[1.0; 8]);
    }

    #[test]
    fn elementwise_identities() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t([1, 1, 2, 2], &[1.0, -2.0, 3.0, 0.5]));
        let zeros = g.leaf(Tensor::zeros([1, 1, 2, 2]));
        let ones = g.leaf(Tensor::full([1, 1, 2, 2], 1.0));
        let a = g.add(x, zeros).unwrap();
        assert_eq!(g.value(a).data(), g.value(x).data());
        let m = g.mul(x, ones).unwrap();
        assert_eq!(g.value(m).data(), g.value(x).data());
        let s = g.sub(x, x).unwrap();
        assert_eq!(g.value(s).data(), &[0.0; 4]);
        let bad = g.leaf(Tensor::zeros([1, 1, 1, 1]));
        assert!(g.add(x, bad).is_err());
    }

    #[test]
    fn activation_values() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t([1, 1, 1, 4], &[0.0, -1.0, 2.0, 0.0]));
        let th = g.tanh(x);
        assert_eq!(g.value(th).at(0, 0, 0, 0), 0.0);
        let sg = g.sigmoid(x);
        assert_eq!(g.value(sg).at(0, 0, 0, 0), 0.5);
        let slope = g.leaf(Tensor::scalar(0.25));
        let pr = g.prelu(x, slope).unwrap();
        assert_eq!(g.value(pr).data(), &[0.0, -0.25, 2.0, 0.0]);
    }

    #[test]
    fn backward_sum_and_square() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t([1, 1, 2, 2], &[1.0, 2.0, -3.0, 0.5]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);

        let mut g = Graph::<f64>::new();
        let x = g.param(t([1, 1, 2, 2], &[1.0, 2.0, -3.0, 0.5]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, -6.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros([1, 1, 2, 2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn backward_accumulates_without_reset() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::full([1, 1, 1, 2], 3.0));
        let s = g.sum(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
        g.reset_grads();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn batch_norm_train_normalizes_and_eval_identity() {
        let mut g = Graph::<f64>::new();
        let vals: Vec<f64> = (0..32).map(|i| (i as f64) * 0.3 - 4.0).collect();
        let x = g.leaf(t([4, 2, 2, 2], &vals));
        let gamma = g.leaf(Tensor::full([1, 2, 1, 1], 1.0));
        let beta = g.leaf(Tensor::zeros([1, 2, 1, 1]));
        let mut rm = vec![0.0; 2];
        let mut rv = vec![1.0; 2];
        let y = g.batch_norm(x, gamma, beta, &mut rm, &mut rv, true, 0.1, 1e-5).unwrap();
        for ch in 0..2 {
            let mut s = 0.0;
            let mut sq = 0.0;
            for b in 0..4 {
                for &v in g.value(y).plane(b, ch) {
                    s += v;
                    sq += v * v;
                }
            }
            let mean = s / 16.0;
            let var = sq / 16.0 - mean * mean;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4); // within the eps effect
        }
        assert!(rm[0] != 0.0); // running stats moved

        // eval with identity statistics reproduces the input
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t([1, 1, 2, 2], &[0.3, -0.2, 0.9, 0.0]));
        let gamma = g.leaf(Tensor::full([1, 1, 1, 1], 1.0));
        let beta = g.leaf(Tensor::zeros([1, 1, 1, 1]));
        let mut rm = vec![0.0];
        let mut rv = vec![1.0];
        let y = g.batch_norm(x, gamma, beta, &mut rm, &mut rv, false, 0.1, 1e-12).unwrap();
        for (a, b) in g.value(y).data().iter().zip(g.value(x).data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_norm_rejects_zero_batch() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros([0, 1, 2, 2]));
        let gamma = g.leaf(Tensor::full([1, 1, 1, 1], 1.0));
        let beta = g.leaf(Tensor::zeros([1, 1, 1, 1]));
        let mut rm = vec![0.0];
        let mut rv = vec![1.0];
        assert!(g.batch_norm(x, gamma, beta, &mut rm, &mut rv, true, 0.1, 1e-5).is_err());
    }

    #[test]
    fn diff_ops_shapes_and_values() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t([1, 1, 2, 3], &[0.0, 1.0, 3.0, 2.0, 2.0, 2.0]));
        let dh = g.diff_h(x).unwrap();
        assert_eq!(g.shape(dh), [1, 1, 2, 2]);
        assert_eq!(g.value(dh).data(), &[1.0, 2.0, 0.0, 0.0]);
        let dv = g.diff_v(x).unwrap();
        assert_eq!(g.shape(dv), [1, 1, 1, 3]);
        assert_eq!(g.value(dv).data(), &[2.0, 1.0, -1.0]);
    }

    #[test]
    fn determinism_same_inputs_bit_identical() {
        let run = || {
            let mut g = Graph::<f64>::new();
            let vals: Vec<f64> = (0..50).map(|i| ((i * 37 + 11) % 97) as f64 / 97.0 - 0.5).collect();
            let x = g.param(t([1, 2, 5, 5], &vals));
            let k = g.leaf(t(
                [2, 2, 3, 3],
                &(0..36).map(|i| ((i * 13 + 5) % 31) as f64 / 31.0 - 0.5).collect::<Vec<_>>(),
            ));
            let b = g.leaf(Tensor::zeros([1, 2, 1, 1]));
            let c = g.conv3x3(x, k, b, Padding::Reflection).unwrap();
            let th = g.tanh(c);
            let s = g.sum(th);
            g.backward(s).unwrap();
            (g.value(s).data().to_vec(), g.grad(x).unwrap().to_vec())
        };
        assert_eq!(run(), run());
    }
}
