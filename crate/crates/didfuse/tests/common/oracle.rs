//! Brute-force reference implementations and randomized equivalence trials,
//! shared by the dedicated oracle suite and the acceptance suite: convolution,
//! box blur, guided filter, saliency map, SSIM, and all six quality metrics.
//! Linear operations must agree to 1e-12, windowed/statistical ones to 1e-6.
//!
//! Inputs are random small planes (8x8 where the operation permits; SSIM
//! requires >= 11x11 planes and 4-scale VIF >= 48x48, so those two use the
//! smallest sizes their own preconditions allow).

use super::TestRng;
use didfuse::fusion::{box_mean_replicate, guided_filter, saliency_map};
use didfuse::loss::{ssim, ssim_window};
use didfuse::metrics;
use didfuse::tensor::{Graph, Padding, Tensor};

pub const TRIALS: usize = 50;
pub const LINEAR_TOL: f64 = 1e-12;
pub const STAT_TOL: f64 = 1e-6;

// ---- brute-force references -------------------------------------------------

fn ref_conv3x3(
    input: &Tensor<f64>,
    kernel: &Tensor<f64>,
    bias: &Tensor<f64>,
    padding: Padding,
) -> Tensor<f64> {
    let [n, ci, h, w] = input.shape();
    let [co, _, _, _] = kernel.shape();
    let sample = |b: usize, c: usize, y: i64, x: i64| -> f64 {
        let reflect = |v: i64, len: i64| -> Option<i64> {
            match padding {
                Padding::Reflection => {
                    let mut v = v;
                    if v < 0 {
                        v = -v;
                    }
                    if v >= len {
                        v = 2 * (len - 1) - v;
                    }
                    Some(v)
                }
                Padding::Zero => (0..len).contains(&v).then_some(v),
            }
        };
        match (reflect(y, h as i64), reflect(x, w as i64)) {
            (Some(yy), Some(xx)) => input.at(b, c, yy as usize, xx as usize),
            _ => 0.0,
        }
    };
    let mut out = Tensor::zeros([n, co, h, w]);
    for b in 0..n {
        for oc in 0..co {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias.at(0, oc, 0, 0);
                    for ic in 0..ci {
                        for ky in 0..3i64 {
                            for kx in 0..3i64 {
                                acc += kernel.at(oc, ic, ky as usize, kx as usize)
                                    * sample(b, ic, y as i64 + ky - 1, x as i64 + kx - 1);
                            }
                        }
                    }
                    out.set(b, oc, y, x, acc);
                }
            }
        }
    }
    out
}

fn ref_box_mean(plane: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    let r = radius as i64;
    let mut out = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut s = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = (y + dy).clamp(0, h as i64 - 1) as usize;
                    let xx = (x + dx).clamp(0, w as i64 - 1) as usize;
                    s += plane[yy * w + xx];
                }
            }
            out[(y as usize) * w + x as usize] = s / ((2 * r + 1) * (2 * r + 1)) as f64;
        }
    }
    out
}

fn ref_guided_filter(
    p: &[f64],
    guide: &[f64],
    h: usize,
    w: usize,
    radius: usize,
    eps: f64,
) -> Vec<f64> {
    let mean_g = ref_box_mean(guide, h, w, radius);
    let mean_p = ref_box_mean(p, h, w, radius);
    let gp: Vec<f64> = guide.iter().zip(p).map(|(a, b)| a * b).collect();
    let gg: Vec<f64> = guide.iter().map(|a| a * a).collect();
    let mean_gp = ref_box_mean(&gp, h, w, radius);
    let mean_gg = ref_box_mean(&gg, h, w, radius);
    let mut a = vec![0.0; h * w];
    let mut b = vec![0.0; h * w];
    for i in 0..h * w {
        let cov = mean_gp[i] - mean_g[i] * mean_p[i];
        let var = mean_gg[i] - mean_g[i] * mean_g[i];
        a[i] = cov / (var + eps);
        b[i] = mean_p[i] - a[i] * mean_g[i];
    }
    let ma = ref_box_mean(&a, h, w, radius);
    let mb = ref_box_mean(&b, h, w, radius);
    (0..h * w).map(|i| ma[i] * guide[i] + mb[i]).collect()
}

/// Pairwise form of histogram-contrast saliency:
/// S(v) = (1/N) sum over pixels u of |q(v) - q(u)|.
fn ref_saliency(plane: &[f64], bins: usize) -> Vec<f64> {
    let q = |v: f64| -> f64 {
        let t = (v.clamp(-1.0, 1.0) + 1.0) / 2.0 * bins as f64;
        let k = (t as usize).min(bins - 1);
        -1.0 + (k as f64 + 0.5) * 2.0 / bins as f64
    };
    let n = plane.len() as f64;
    plane
        .iter()
        .map(|&v| plane.iter().map(|&u| (q(v) - q(u)).abs()).sum::<f64>() / n)
        .collect()
}

/// Scalar SSIM: Gaussian-window statistics computed by direct loops.
fn ref_ssim(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let win: Vec<f64> = ssim_window::<f64>();
    let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
    let (oh, ow) = (h - 10, w - 10);
    let mut total = 0.0;
    for yy in 0..oh {
        for xx in 0..ow {
            let mut mx = 0.0;
            let mut my = 0.0;
            let mut mxx = 0.0;
            let mut myy = 0.0;
            let mut mxy = 0.0;
            for ky in 0..11 {
                for kx in 0..11 {
                    let wgt = win[ky * 11 + kx];
                    let a = x[(yy + ky) * w + xx + kx];
                    let b = y[(yy + ky) * w + xx + kx];
                    mx += wgt * a;
                    my += wgt * b;
                    mxx += wgt * a * a;
                    myy += wgt * b * b;
                    mxy += wgt * a * b;
                }
            }
            let vx = mxx - mx * mx;
            let vy = myy - my * my;
            let cxy = mxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    total / (oh * ow) as f64
}

/// Independent pixel-domain multi-scale VIF with explicit window loops.
fn ref_vif_single(reference: &[f64], distorted: &[f64], h: usize, w: usize, sigma_nsq: f64) -> f64 {
    let gauss = |n: usize| -> Vec<f64> {
        let sigma = n as f64 / 5.0;
        let c = (n as f64 - 1.0) / 2.0;
        let mut k: Vec<f64> = (0..n * n)
            .map(|i| {
                let (y, x) = ((i / n) as f64, (i % n) as f64);
                (-((x - c).powi(2) + (y - c).powi(2)) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let s: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
        k
    };
    let filt = |img: &[f64], h: usize, w: usize, ker: &[f64], n: usize| -> (Vec<f64>, usize, usize) {
        let (oh, ow) = (h + 1 - n, w + 1 - n);
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let mut s = 0.0;
                for ky in 0..n {
                    for kx in 0..n {
                        s += ker[ky * n + kx] * img[(y + ky) * w + x + kx];
                    }
                }
                out[y * ow + x] = s;
            }
        }
        (out, oh, ow)
    };
    let mut rf = reference.to_vec();
    let mut df = distorted.to_vec();
    let (mut ch, mut cw) = (h, w);
    let (mut num, mut den) = (0.0, 0.0);
    for scale in 1..=4u32 {
        let n = 2usize.pow(4 - scale + 1) + 1;
        let ker = gauss(n);
        if scale > 1 {
            let (a, ah, aw) = filt(&rf, ch, cw, &ker, n);
            let (b, _, _) = filt(&df, ch, cw, &ker, n);
            let (mut sr, mut sd) = (Vec::new(), Vec::new());
            for y in (0..ah).step_by(2) {
                for x in (0..aw).step_by(2) {
                    sr.push(a[y * aw + x]);
                    sd.push(b[y * aw + x]);
                }
            }
            ch = ah.div_ceil(2);
            cw = aw.div_ceil(2);
            rf = sr;
            df = sd;
        }
        let (mu1, oh, ow) = filt(&rf, ch, cw, &ker, n);
        let (mu2, _, _) = filt(&df, ch, cw, &ker, n);
        let sq = |v: &[f64]| -> Vec<f64> { v.iter().map(|a| a * a).collect() };
        let pr: Vec<f64> = rf.iter().zip(&df).map(|(a, b)| a * b).collect();
        let (mrr, _, _) = filt(&sq(&rf), ch, cw, &ker, n);
        let (mdd, _, _) = filt(&sq(&df), ch, cw, &ker, n);
        let (mrd, _, _) = filt(&pr, ch, cw, &ker, n);
        for i in 0..oh * ow {
            let eps = 1e-10;
            let mut s1 = (mrr[i] - mu1[i] * mu1[i]).max(0.0);
            let s2 = (mdd[i] - mu2[i] * mu2[i]).max(0.0);
            let s12 = mrd[i] - mu1[i] * mu2[i];
            let mut g = s12 / (s1 + eps);
            let mut sv = s2 - g * s12;
            if s1 < eps {
                g = 0.0;
                sv = s2;
                s1 = 0.0;
            }
            if s2 < eps {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = s2;
                g = 0.0;
            }
            if sv < eps {
                sv = eps;
            }
            num += (1.0 + g * g * s1 / (sv + sigma_nsq)).log10();
            den += (1.0 + s1 / sigma_nsq).log10();
        }
    }
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol * (1.0 + a.abs().max(b.abs())), "{what}: {a} vs {b}");
}

// ---- trials -----------------------------------------------------------------

pub fn conv3x3_trials() {
    let mut rng = TestRng::new(1);
    for trial in 0..TRIALS {
        let n = 1 + trial % 2;
        let ci = 1 + trial % 3;
        let co = 1 + (trial / 2) % 3;
        let h = 3 + trial % 6;
        let w = 3 + (trial / 3) % 6;
        let padding = if trial % 2 == 0 { Padding::Reflection } else { Padding::Zero };
        let input = rng.tensor([n, ci, h, w], 1.0);
        let kernel = rng.tensor([co, ci, 3, 3], 0.8);
        let bias = rng.tensor([1, co, 1, 1], 0.5);
        let expect = ref_conv3x3(&input, &kernel, &bias, padding);

        let mut g = Graph::<f64>::new();
        let iv = g.leaf(input);
        let kv = g.leaf(kernel);
        let bv = g.leaf(bias);
        let out = g.conv3x3(iv, kv, bv, padding).unwrap();
        for (a, b) in g.value(out).iter().zip(expect.iter()) {
            close(*a, *b, LINEAR_TOL, "conv3x3");
        }
    }
}

pub fn box_blur_trials() {
    let mut rng = TestRng::new(2);
    for trial in 0..TRIALS {
        let h = 2 + trial % 7;
        let w = 2 + (trial / 2) % 7;
        let radius = 1 + trial % 3;
        let plane: Vec<f64> = (0..h * w).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let got = box_mean_replicate(&plane, h, w, radius);
        let expect = ref_box_mean(&plane, h, w, radius);
        for (a, b) in got.iter().zip(&expect) {
            close(*a, *b, LINEAR_TOL, "box blur");
        }
    }
}

pub fn guided_filter_trials() {
    let mut rng = TestRng::new(3);
    for trial in 0..TRIALS {
        let h = 4 + trial % 5;
        let w = 4 + (trial / 2) % 5;
        let radius = 1 + trial % 2;
        let eps = [0.01, 0.1, 1e-4][trial % 3];
        let p: Vec<f64> = (0..h * w).map(|_| rng.uniform(0.0, 1.0)).collect();
        let guide: Vec<f64> = (0..h * w).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let got = guided_filter(&p, &guide, h, w, radius, eps).unwrap();
        let expect = ref_guided_filter(&p, &guide, h, w, radius, eps);
        for (a, b) in got.iter().zip(&expect) {
            close(*a, *b, STAT_TOL, "guided filter");
        }
    }
}

pub fn saliency_trials() {
    let mut rng = TestRng::new(4);
    for trial in 0..TRIALS {
        let h = 3 + trial % 6;
        let w = 3 + (trial / 2) % 6;
        let bins = [256, 64, 16][trial % 3];
        let plane: Vec<f64> = (0..h * w).map(|_| rng.uniform(-1.1, 1.1)).collect();
        let got = saliency_map(&plane, bins).unwrap();
        let expect = ref_saliency(&plane, bins);
        for (a, b) in got.iter().zip(&expect) {
            close(*a, *b, STAT_TOL, "saliency");
        }
    }
}

pub fn ssim_trials() {
    let mut rng = TestRng::new(5);
    for trial in 0..TRIALS {
        let h = 11 + trial % 6;
        let w = 11 + (trial / 2) % 6;
        let x: Vec<f64> = (0..h * w).map(|_| rng.uniform(0.0, 1.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| (v + rng.uniform(-0.2, 0.2)).clamp(0.0, 1.0))
            .collect();
        let expect = ref_ssim(&x, &y, h, w);

        let mut g = Graph::<f64>::new();
        let xv = g.leaf(Tensor::from_f64([1, 1, h, w], &x).unwrap());
        let yv = g.leaf(Tensor::from_f64([1, 1, h, w], &y).unwrap());
        let s = ssim(&mut g, xv, yv).unwrap();
        close(g.scalar(s), expect, STAT_TOL, "ssim");
    }
}

pub fn scalar_metric_trials() {
    let mut rng = TestRng::new(6);
    for trial in 0..TRIALS {
        let h = 4 + trial % 5;
        let w = 4 + (trial / 2) % 5;
        let img: Vec<f64> = (0..h * w).map(|_| rng.uniform(0.0, 255.0)).collect();

        // entropy: direct histogram over round-half-up levels
        let mut counts = [0usize; 256];
        for &v in &img {
            counts[(v + 0.5).floor().clamp(0.0, 255.0) as usize] += 1;
        }
        let en_ref: f64 = -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / (h * w) as f64;
                p * p.log2()
            })
            .sum::<f64>();
        close(metrics::entropy(&img).unwrap(), en_ref, STAT_TOL, "entropy");

        // std dev: two-pass
        let mean = img.iter().sum::<f64>() / (h * w) as f64;
        let sd_ref =
            (img.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (h * w) as f64).sqrt();
        close(metrics::std_dev(&img).unwrap(), sd_ref, LINEAR_TOL * 255.0, "std_dev");

        // spatial frequency: direct loops
        let mut hg = 0.0;
        let mut vg = 0.0;
        for y in 0..h {
            for x in 1..w {
                hg += (img[y * w + x] - img[y * w + x - 1]).powi(2);
            }
        }
        for y in 1..h {
            for x in 0..w {
                vg += (img[y * w + x] - img[(y - 1) * w + x]).powi(2);
            }
        }
        let sf_ref = (hg / (h * (w - 1)) as f64 + vg / ((h - 1) * w) as f64).sqrt();
        close(metrics::spatial_frequency(&img, h, w).unwrap(), sf_ref, STAT_TOL, "sf");

        // average gradient: direct loops
        let mut ag = 0.0;
        for y in 0..h - 1 {
            for x in 0..w - 1 {
                let dh = img[y * w + x + 1] - img[y * w + x];
                let dv = img[(y + 1) * w + x] - img[y * w + x];
                ag += ((dh * dh + dv * dv) / 2.0).sqrt();
            }
        }
        ag /= ((h - 1) * (w - 1)) as f64;
        close(metrics::avg_gradient(&img, h, w).unwrap(), ag, STAT_TOL, "ag");

        // scd: direct covariance formula
        let ir: Vec<f64> = (0..h * w).map(|_| rng.uniform(0.0, 255.0)).collect();
        let vis: Vec<f64> = (0..h * w).map(|_| rng.uniform(0.0, 255.0)).collect();
        let corr = |x: &[f64], y: &[f64]| -> f64 {
            let n = x.len() as f64;
            let mx = x.iter().sum::<f64>() / n;
            let my = y.iter().sum::<f64>() / n;
            let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
            let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
            if vx == 0.0 || vy == 0.0 {
                0.0
            } else {
                cov / (vx * vy).sqrt()
            }
        };
        let d1: Vec<f64> = img.iter().zip(&vis).map(|(a, b)| a - b).collect();
        let d2: Vec<f64> = img.iter().zip(&ir).map(|(a, b)| a - b).collect();
        let scd_ref = corr(&d1, &ir) + corr(&d2, &vis);
        close(metrics::scd(&img, &ir, &vis).unwrap(), scd_ref, STAT_TOL, "scd");
    }
}

pub fn vif_trials() {
    let mut rng = TestRng::new(7);
    for trial in 0..TRIALS {
        let h = 48 + trial % 3;
        let w = 48 + (trial / 2) % 3;
        let reference: Vec<f64> = (0..h * w).map(|_| rng.uniform(0.0, 255.0)).collect();
        let distorted: Vec<f64> = reference
            .iter()
            .map(|&v| (0.7 * v + rng.uniform(-20.0, 20.0)).clamp(0.0, 255.0))
            .collect();
        let got = metrics::vif_single(&reference, &distorted, h, w, 2.0).unwrap();
        let expect = ref_vif_single(&reference, &distorted, h, w, 2.0);
        close(got, expect, STAT_TOL, "vif");
    }
}
