//! Test-time merging of encoder outputs.
//!
//! Base and detail feature map pairs are merged separately by a spatial
//! attention module (one of three strategies) optionally averaged with a
//! channel attention module:
//!
//! - l1 attention: per-pixel channel-absolute-sum activity, 3x3 box blurred,
//!   normalized across the two sources.
//! - saliency attention: per-channel histogram-contrast saliency, normalized,
//!   then spatially regularized by a guided filter with the feature channel
//!   as guidance.
//! - weighted average: fixed gamma weights.
//! - channel attention: per-channel pooled absolute activity, normalized.
//!
//! Every strategy produces an infrared weight in [0,1] whose complement
//! weighs the visible operand, so fused values stay inside the per-position
//! envelope of the two inputs and equal inputs pass through unchanged.

use crate::error::{Error, Result};
use crate::tensor::{r, Real, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamStrategy {
    L1Attention,
    Saliency,
    WeightedAverage,
}

/// Strategy selection and parameters for the fusion layer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FusionConfig {
    pub sam: SamStrategy,
    pub use_cam: bool,
    /// (g1, g2) weigh the base pair, (g3, g4) the detail pair; g1+g2 = g3+g4 = 1.
    pub gammas: [f64; 4],
    pub gf_radius: usize,
    pub gf_eps: f64,
    pub sal_bins: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            sam: SamStrategy::Saliency,
            use_cam: true,
            gammas: [0.5; 4],
            gf_radius: 5,
            gf_eps: 0.01,
            sal_bins: 256,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.gammas[0] + self.gammas[1] - 1.0).abs() > 1e-9
            || (self.gammas[2] + self.gammas[3] - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid("fusion gammas must satisfy g1+g2 = g3+g4 = 1".to_string()));
        }
        if self.gf_radius < 1 {
            return Err(Error::invalid("guided filter radius must be >= 1".to_string()));
        }
        if self.sal_bins < 2 {
            return Err(Error::invalid("saliency histogram needs >= 2 bins".to_string()));
        }
        Ok(())
    }
}

/// Base/detail feature maps of one image, as concrete tensors.
#[derive(Debug, Clone)]
pub struct FeaturePair<R> {
    pub base: Tensor<R>,
    pub detail: Tensor<R>,
}

/// A spatial attention result: the merged map plus the infrared weight map
/// that produced it (visible weight is its complement).
#[derive(Debug, Clone)]
pub struct SamOutput<R> {
    pub fused: Tensor<R>,
    /// (1,1,h,w) for l1 attention, (n,C,h,w) for saliency.
    pub ir_weight: Tensor<R>,
}

fn check_same_shape<R: Real>(a: &Tensor<R>, b: &Tensor<R>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

// ---- plane helpers ---------------------------------------------------------

/// Box mean over (2r+1)^2 windows with edge replication, via an integral
/// image over the replicate-padded plane.
pub fn box_mean_replicate<R: Real>(plane: &[R], h: usize, w: usize, radius: usize) -> Vec<R> {
    let ph = h + 2 * radius;
    let pw = w + 2 * radius;
    // integral in f64 regardless of R: keeps window sums exact enough for the
    // 1e-9 oracle tolerances at f64 and costs nothing at f32
    let mut integral = vec![0.0f64; (ph + 1) * (pw + 1)];
    for py in 0..ph {
        let sy = (py.max(radius) - radius).min(h - 1);
        for px in 0..pw {
            let sx = (px.max(radius) - radius).min(w - 1);
            let v = plane[sy * w + sx].as_f64();
            integral[(py + 1) * (pw + 1) + px + 1] = v
                + integral[py * (pw + 1) + px + 1]
                + integral[(py + 1) * (pw + 1) + px]
                - integral[py * (pw + 1) + px];
        }
    }
    let side = 2 * radius + 1;
    let area = (side * side) as f64;
    let mut out = vec![R::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let (y0, x0) = (y, x);
            let (y1, x1) = (y + side, x + side);
            let s = integral[y1 * (pw + 1) + x1] - integral[y0 * (pw + 1) + x1]
                - integral[y1 * (pw + 1) + x0]
                + integral[y0 * (pw + 1) + x0];
            out[y * w + x] = r::<R>(s / area);
        }
    }
    out
}

/// 3x3 box blur with edge replication (the psi operator of the l1 strategy).
pub fn box_blur3<R: Real>(plane: &[R], h: usize, w: usize) -> Vec<R> {
    box_mean_replicate(plane, h, w, 1)
}

/// Local-linear-model guided filter with edge-replicated box windows:
/// per window a = cov(guide, p) / (var(guide) + eps), b = mean(p) - a mean(guide),
/// output = mean(a) * guide + mean(b).
pub fn guided_filter<R: Real>(
    p: &[R],
    guide: &[R],
    h: usize,
    w: usize,
    radius: usize,
    eps: f64,
) -> Result<Vec<R>> {
    if p.len() != h * w || guide.len() != h * w {
        return Err(Error::shape("guided_filter plane length mismatch".to_string()));
    }
    if radius < 1 {
        return Err(Error::invalid("guided_filter radius must be >= 1".to_string()));
    }
    if eps <= 0.0 {
        return Err(Error::invalid("guided_filter eps must be > 0".to_string()));
    }
    let gp: Vec<R> = guide.iter().zip(p).map(|(&g, &v)| g * v).collect();
    let gg: Vec<R> = guide.iter().map(|&g| g * g).collect();
    let mean_g = box_mean_replicate(guide, h, w, radius);
    let mean_p = box_mean_replicate(p, h, w, radius);
    let corr_gp = box_mean_replicate(&gp, h, w, radius);
    let corr_gg = box_mean_replicate(&gg, h, w, radius);
    let e = r::<R>(eps);
    let mut a = vec![R::zero(); h * w];
    let mut b = vec![R::zero(); h * w];
    for i in 0..h * w {
        let cov = corr_gp[i] - mean_g[i] * mean_p[i];
        let var = corr_gg[i] - mean_g[i] * mean_g[i];
        a[i] = cov / (var + e);
        b[i] = mean_p[i] - a[i] * mean_g[i];
    }
    let mean_a = box_mean_replicate(&a, h, w, radius);
    let mean_b = box_mean_replicate(&b, h, w, radius);
    Ok((0..h * w).map(|i| mean_a[i] * guide[i] + mean_b[i]).collect())
}

/// Histogram-contrast saliency of a single channel over the fixed range
/// [-1, 1]: S(x,y) = sum_k H(k) |q(F(x,y)) - q_k| with bin-center
/// quantization q and normalized bin frequencies H.
pub fn saliency_map<R: Real>(plane: &[R], bins: usize) -> Result<Vec<R>> {
    if bins < 2 {
        return Err(Error::invalid("saliency_map needs >= 2 bins".to_string()));
    }
    if plane.is_empty() {
        return Ok(Vec::new());
    }
    let n = plane.len() as f64;
    let bin_of = |v: R| -> usize {
        let t = (v.as_f64().clamp(-1.0, 1.0) + 1.0) / 2.0 * bins as f64;
        (t as usize).min(bins - 1)
    };
    let center = |k: usize| -> f64 { -1.0 + (k as f64 + 0.5) * 2.0 / bins as f64 };
    let mut counts = vec![0usize; bins];
    for &v in plane {
        counts[bin_of(v)] += 1;
    }
    // per-bin score: sum_k H(k) |c_j - c_k|
    let occupied: Vec<(usize, f64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &c)| (k, c as f64 / n))
        .collect();
    let mut score = vec![0.0f64; bins];
    for j in 0..bins {
        let cj = center(j);
        let mut s = 0.0;
        for &(k, freq) in &occupied {
            s += freq * (cj - center(k)).abs();
        }
        score[j] = s;
    }
    Ok(plane.iter().map(|&v| r::<R>(score[bin_of(v)])).collect())
}

// ---- spatial attention strategies ------------------------------------------

/// l1-attention: per-pixel activity is the channel-wise absolute sum,
/// box-blurred and normalized across the two sources. The weight broadcasts
/// over channels.
pub fn sam_l1<R: Real>(f_ir: &Tensor<R>, f_vis: &Tensor<R>) -> Result<SamOutput<R>> {
    check_same_shape(f_ir, f_vis, "sam_l1")?;
    let [n, c, h, w] = f_ir.shape();
    let half = r::<R>(0.5);
    let mut fused = Tensor::zeros([n, c, h, w]);
    let mut weight = Tensor::zeros([n, 1, h, w]);
    for b in 0..n {
        let mut act_ir = vec![R::zero(); h * w];
        let mut act_vis = vec![R::zero(); h * w];
        for ch in 0..c {
            for (i, (&a, &v)) in f_ir.plane(b, ch).iter().zip(f_vis.plane(b, ch)).enumerate() {
                act_ir[i] = act_ir[i] + a.abs();
                act_vis[i] = act_vis[i] + v.abs();
            }
        }
        let blur_ir = box_blur3(&act_ir, h, w);
        let blur_vis = box_blur3(&act_vis, h, w);
        let eta: Vec<R> = blur_ir
            .iter()
            .zip(&blur_vis)
            .map(|(&a, &v)| {
                let denom = a + v;
                if denom == R::zero() {
                    half
                } else {
                    a / denom
                }
            })
            .collect();
        for (i, &e) in eta.iter().enumerate() {
            weight.data_mut()[(b * h * w) + i] = e;
        }
        for ch in 0..c {
            let pi = f_ir.plane(b, ch).to_vec();
            let pv = f_vis.plane(b, ch).to_vec();
            let base = ((b * c) + ch) * h * w;
            for i in 0..h * w {
                fused.data_mut()[base + i] = eta[i] * pi[i] + (R::one() - eta[i]) * pv[i];
            }
        }
    }
    Ok(SamOutput { fused, ir_weight: weight })
}

/// Saliency-attention: per channel, histogram-contrast saliency gives raw
/// weights which a guided filter (guided by the feature channel itself)
/// regularizes spatially; weights are renormalized, clamped to [0,1] and
/// fall back to 0.5 wherever a denominator vanishes.
pub fn sam_saliency<R: Real>(
    f_ir: &Tensor<R>,
    f_vis: &Tensor<R>,
    cfg: &FusionConfig,
) -> Result<SamOutput<R>> {
    check_same_shape(f_ir, f_vis, "sam_saliency")?;
    cfg.validate()?;
    let [n, c, h, w] = f_ir.shape();
    let half = r::<R>(0.5);
    let one = R::one();
    let mut fused = Tensor::zeros([n, c, h, w]);
    let mut weight = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let pi = f_ir.plane(b, ch);
            let pv = f_vis.plane(b, ch);
            let s_ir = saliency_map(pi, cfg.sal_bins)?;
            let s_vis = saliency_map(pv, cfg.sal_bins)?;
            let raw_ir: Vec<R> = s_ir
                .iter()
                .zip(&s_vis)
                .map(|(&a, &v)| {
                    let denom = a + v;
                    if denom == R::zero() {
                        half
                    } else {
                        a / denom
                    }
                })
                .collect();
            let raw_vis: Vec<R> = raw_ir.iter().map(|&x| one - x).collect();
            let chi_ir = guided_filter(&raw_ir, pi, h, w, cfg.gf_radius, cfg.gf_eps)?;
            let chi_vis = guided_filter(&raw_vis, pv, h, w, cfg.gf_radius, cfg.gf_eps)?;
            let base = ((b * c) + ch) * h * w;
            for i in 0..h * w {
                let denom = chi_ir[i] + chi_vis[i];
                let mut omega = if denom == R::zero() { half } else { chi_ir[i] / denom };
                omega = omega.max(R::zero()).min(one);
                weight.data_mut()[base + i] = omega;
                fused.data_mut()[base + i] = omega * pi[i] + (one - omega) * pv[i];
            }
        }
    }
    Ok(SamOutput { fused, ir_weight: weight })
}

/// Fixed-weight average gamma_a * F_I + gamma_b * F_V.
pub fn sam_weighted<R: Real>(
    f_ir: &Tensor<R>,
    f_vis: &Tensor<R>,
    gamma_ir: f64,
    gamma_vis: f64,
) -> Result<SamOutput<R>> {
    check_same_shape(f_ir, f_vis, "sam_weighted")?;
    if (gamma_ir + gamma_vis - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("sam_weighted gammas must sum to 1".to_string()));
    }
    let ga = r::<R>(gamma_ir);
    let gb = r::<R>(gamma_vis);
    let data: Vec<R> = f_ir.iter().zip(f_vis.iter()).map(|(&a, &v)| ga * a + gb * v).collect();
    let [n, _, h, w] = f_ir.shape();
    Ok(SamOutput {
        fused: Tensor::new(f_ir.shape(), data)?,
        ir_weight: Tensor::full([n, 1, h, w], ga),
    })
}

/// Channel attention result: fused map plus the per-channel infrared weights
/// (row-major over batch then channel).
#[derive(Debug, Clone)]
pub struct CamOutput<R> {
    pub fused: Tensor<R>,
    pub ir_weights: Vec<R>,
}

/// Channel attention: pooled absolute activity per channel, normalized across
/// the two sources, applied as per-channel scalar weights.
pub fn cam<R: Real>(f_ir: &Tensor<R>, f_vis: &Tensor<R>) -> Result<CamOutput<R>> {
    check_same_shape(f_ir, f_vis, "cam")?;
    let [n, c, h, w] = f_ir.shape();
    let half = r::<R>(0.5);
    let one = R::one();
    let pool = |plane: &[R]| -> R {
        if plane.is_empty() {
            return R::zero();
        }
        let s: R = plane.iter().map(|v| v.abs()).sum();
        s / r::<R>(plane.len() as f64)
    };
    let mut fused = Tensor::zeros([n, c, h, w]);
    let mut weights = Vec::with_capacity(n * c);
    for b in 0..n {
        for ch in 0..c {
            let a = pool(f_ir.plane(b, ch));
            let v = pool(f_vis.plane(b, ch));
            let denom = a + v;
            let lam = if denom == R::zero() { half } else { a / denom };
            weights.push(lam);
            let base = ((b * c) + ch) * h * w;
            for (i, (&x, &y)) in f_ir.plane(b, ch).iter().zip(f_vis.plane(b, ch)).enumerate() {
                fused.data_mut()[base + i] = lam * x + (one - lam) * y;
            }
        }
    }
    Ok(CamOutput { fused, ir_weights: weights })
}

/// Merge one pair of feature maps with the configured spatial strategy,
/// optionally averaged with channel attention.
pub fn fuse_maps<R: Real>(
    f_ir: &Tensor<R>,
    f_vis: &Tensor<R>,
    cfg: &FusionConfig,
    gamma_ir: f64,
    gamma_vis: f64,
) -> Result<Tensor<R>> {
    let spa = match cfg.sam {
        SamStrategy::L1Attention => sam_l1(f_ir, f_vis)?.fused,
        SamStrategy::Saliency => sam_saliency(f_ir, f_vis, cfg)?.fused,
        SamStrategy::WeightedAverage => sam_weighted(f_ir, f_vis, gamma_ir, gamma_vis)?.fused,
    };
    if !cfg.use_cam {
        return Ok(spa);
    }
    let ch = cam(f_ir, f_vis)?.fused;
    let half = r::<R>(0.5);
    let data: Vec<R> = spa.iter().zip(ch.iter()).map(|(&a, &b)| half * (a + b)).collect();
    Tensor::new(spa.shape(), data)
}

/// Merge base and detail feature map pairs separately: spatial attention,
/// optionally averaged with channel attention.
pub fn fuse_features<R: Real>(
    fp_ir: &FeaturePair<R>,
    fp_vis: &FeaturePair<R>,
    cfg: &FusionConfig,
) -> Result<(Tensor<R>, Tensor<R>)> {
    cfg.validate()?;
    check_same_shape(&fp_ir.base, &fp_vis.base, "fuse_features base")?;
    check_same_shape(&fp_ir.detail, &fp_vis.detail, "fuse_features detail")?;
    let base = fuse_maps(&fp_ir.base, &fp_vis.base, cfg, cfg.gammas[0], cfg.gammas[1])?;
    let detail = fuse_maps(&fp_ir.detail, &fp_vis.detail, cfg, cfg.gammas[2], cfg.gammas[3])?;
    Ok((base, detail))
}
