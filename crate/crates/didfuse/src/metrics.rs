//! Reference-free and source-referenced fusion quality metrics: entropy
//! (EN), standard deviation (SD), spatial frequency (SF), visual information
//! fidelity (VIF), average gradient (AG), and the sum of correlations of
//! differences (SCD).
//!
//! All metrics operate on the 0-255 gray scale (pixel data in [0,1] is
//! rescaled by 255 before the call); quantization to integer levels applies
//! to EN only. Everything here is `f64` — metric values are reported, never
//! trained through.

use crate::error::{Error, Result};
use crate::io::ImageRecord;

/// All six metric values for one fused image against its two sources.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub fused_id: String,
    pub ir_id: String,
    pub vis_id: String,
    pub en: f64,
    pub sd: f64,
    pub sf: f64,
    pub vif: f64,
    pub ag: f64,
    pub scd: f64,
}

pub const CSV_HEADER: &str = "id,en,sd,sf,vif,ag,scd";

impl MetricReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.fused_id, self.en, self.sd, self.sf, self.vif, self.ag, self.scd
        )
    }

    fn check_ranges(&self) -> Result<()> {
        let ok = (0.0..=8.0).contains(&self.en)
            && self.sd >= 0.0
            && self.sf >= 0.0
            && self.ag >= 0.0
            && (-2.0..=2.0).contains(&self.scd);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("metric values out of range: {self:?}")))
        }
    }
}

fn require_nonempty(img: &[f64]) -> Result<()> {
    if img.is_empty() {
        return Err(Error::invalid("metric input image is empty".to_string()));
    }
    Ok(())
}

/// Shannon entropy of the 256-bin gray-level histogram, in bits. Input
/// values on the 0-255 scale are quantized round-half-up.
pub fn entropy(img: &[f64]) -> Result<f64> {
    require_nonempty(img)?;
    let mut counts = [0u64; 256];
    for &v in img {
        let level = (v + 0.5).floor().clamp(0.0, 255.0) as usize;
        counts[level] += 1;
    }
    let n = img.len() as f64;
    let mut en = 0.0;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / n;
            en -= p * p.log2();
        }
    }
    Ok(en)
}

/// Population standard deviation on the 0-255 scale.
pub fn std_dev(img: &[f64]) -> Result<f64> {
    require_nonempty(img)?;
    let n = img.len() as f64;
    let mean = img.iter().sum::<f64>() / n;
    let var = img.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// SF = sqrt(HG^2 + VG^2) with HG/VG the root-mean-square horizontal and
/// vertical forward differences over the valid region.
pub fn spatial_frequency(img: &[f64], h: usize, w: usize) -> Result<f64> {
    check_dims(img, h, w)?;
    let mut hg = 0.0;
    for y in 0..h {
        for x in 0..w - 1 {
            let d = img[y * w + x + 1] - img[y * w + x];
            hg += d * d;
        }
    }
    let mut vg = 0.0;
    for y in 0..h - 1 {
        for x in 0..w {
            let d = img[(y + 1) * w + x] - img[y * w + x];
            vg += d * d;
        }
    }
    let hg = hg / (h * (w - 1)) as f64;
    let vg = vg / ((h - 1) * w) as f64;
    Ok((hg + vg).sqrt())
}

/// AG = mean over the valid (M-1)x(N-1) region of
/// sqrt((dh^2 + dv^2)/2) with forward differences.
pub fn avg_gradient(img: &[f64], h: usize, w: usize) -> Result<f64> {
    check_dims(img, h, w)?;
    let mut sum = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let dh = img[y * w + x + 1] - img[y * w + x];
            let dv = img[(y + 1) * w + x] - img[y * w + x];
            sum += ((dh * dh + dv * dv) / 2.0).sqrt();
        }
    }
    Ok(sum / ((h - 1) * (w - 1)) as f64)
}

fn check_dims(img: &[f64], h: usize, w: usize) -> Result<()> {
    if h < 2 || w < 2 || img.len() != h * w {
        return Err(Error::shape(format!(
            "image of {} values is not a valid {h}x{w} plane (need >= 2x2)",
            img.len()
        )));
    }
    Ok(())
}

// ---- VIF -------------------------------------------------------------------

fn gaussian_kernel(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let mut k = Vec::with_capacity(n * n);
    let mut sum = 0.0;
    for y in 0..n {
        for x in 0..n {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            let v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            k.push(v);
            sum += v;
        }
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-mode 2-D correlation with an n x n kernel.
fn filter_valid(img: &[f64], h: usize, w: usize, kernel: &[f64], n: usize) -> (Vec<f64>, usize, usize) {
    let oh = h + 1 - n;
    let ow = w + 1 - n;
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for ky in 0..n {
                for kx in 0..n {
                    s += kernel[ky * n + kx] * img[(y + ky) * w + x + kx];
                }
            }
            out[y * ow + x] = s;
        }
    }
    (out, oh, ow)
}

fn subsample2(img: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    let mut out = Vec::with_capacity(oh * ow);
    for y in (0..h).step_by(2) {
        for x in (0..w).step_by(2) {
            out.push(img[y * w + x]);
        }
    }
    (out, oh, ow)
}

/// Pixel-domain multi-scale visual information fidelity of a distorted image
/// against one reference: 4 scales, Gaussian windows of size 17/9/5/3
/// (sigma = size/5), noise variance `sigma_nsq`.
pub fn vif_single(reference: &[f64], distorted: &[f64], h: usize, w: usize, sigma_nsq: f64) -> Result<f64> {
    check_dims(reference, h, w)?;
    if distorted.len() != reference.len() {
        return Err(Error::shape("vif: reference/distorted sizes differ".to_string()));
    }
    const EPS: f64 = 1e-10;
    let mut reference = reference.to_vec();
    let mut distorted = distorted.to_vec();
    let (mut ch, mut cw) = (h, w);
    let mut num = 0.0;
    let mut den = 0.0;
    for scale in 1..=4u32 {
        let n = 2usize.pow(4 - scale + 1) + 1;
        let win = gaussian_kernel(n, n as f64 / 5.0);
        if scale > 1 {
            if ch < n || cw < n {
                return Err(Error::invalid(format!(
                    "image too small for 4-scale vif: {ch}x{cw} at scale {scale} (window {n})"
                )));
            }
            let (fr, fh, fw) = filter_valid(&reference, ch, cw, &win, n);
            let (fd, _, _) = filter_valid(&distorted, ch, cw, &win, n);
            let (sr, sh, sw) = subsample2(&fr, fh, fw);
            let (sd, _, _) = subsample2(&fd, fh, fw);
            reference = sr;
            distorted = sd;
            ch = sh;
            cw = sw;
        }
        if ch < n || cw < n {
            return Err(Error::invalid(format!(
                "image too small for 4-scale vif: {ch}x{cw} at scale {scale} (window {n})"
            )));
        }
        let rr: Vec<f64> = reference.iter().map(|v| v * v).collect();
        let dd: Vec<f64> = distorted.iter().map(|v| v * v).collect();
        let rd: Vec<f64> = reference.iter().zip(&distorted).map(|(a, b)| a * b).collect();
        let (mu1, oh, ow) = filter_valid(&reference, ch, cw, &win, n);
        let (mu2, _, _) = filter_valid(&distorted, ch, cw, &win, n);
        let (m_rr, _, _) = filter_valid(&rr, ch, cw, &win, n);
        let (m_dd, _, _) = filter_valid(&dd, ch, cw, &win, n);
        let (m_rd, _, _) = filter_valid(&rd, ch, cw, &win, n);
        for i in 0..oh * ow {
            let mut sigma1_sq = (m_rr[i] - mu1[i] * mu1[i]).max(0.0);
            let sigma2_sq = (m_dd[i] - mu2[i] * mu2[i]).max(0.0);
            let sigma12 = m_rd[i] - mu1[i] * mu2[i];
            let mut g = sigma12 / (sigma1_sq + EPS);
            let mut sv_sq = sigma2_sq - g * sigma12;
            if sigma1_sq < EPS {
                g = 0.0;
                sv_sq = sigma2_sq;
                sigma1_sq = 0.0;
            }
            if sigma2_sq < EPS {
                g = 0.0;
                sv_sq = 0.0;
            }
            if g < 0.0 {
                sv_sq = sigma2_sq;
                g = 0.0;
            }
            if sv_sq < EPS {
                sv_sq = EPS;
            }
            num += (1.0 + g * g * sigma1_sq / (sv_sq + sigma_nsq)).log10();
            den += (1.0 + sigma1_sq / sigma_nsq).log10();
        }
    }
    if den == 0.0 {
        // a constant reference carries no information; full fidelity by convention
        return Ok(1.0);
    }
    Ok(num / den)
}

/// Reported VIF: mean of the fused image's fidelity against each source.
pub fn vif(fused: &[f64], ir: &[f64], vis: &[f64], h: usize, w: usize) -> Result<f64> {
    let a = vif_single(ir, fused, h, w, 2.0)?;
    let b = vif_single(vis, fused, h, w, 2.0)?;
    Ok(0.5 * (a + b))
}

// ---- SCD -------------------------------------------------------------------

/// Pearson correlation; 0 when either operand is constant.
fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Sum of correlations of differences:
/// corr(fused - vis, ir) + corr(fused - ir, vis).
pub fn scd(fused: &[f64], ir: &[f64], vis: &[f64]) -> Result<f64> {
    require_nonempty(fused)?;
    if ir.len() != fused.len() || vis.len() != fused.len() {
        return Err(Error::shape("scd: operand sizes differ".to_string()));
    }
    let d1: Vec<f64> = fused.iter().zip(vis).map(|(a, b)| a - b).collect();
    let d2: Vec<f64> = fused.iter().zip(ir).map(|(a, b)| a - b).collect();
    Ok(pearson(&d1, ir) + pearson(&d2, vis))
}

/// Compute all six metrics for a fused image and its two sources.
pub fn evaluate_all(fused: &ImageRecord, ir: &ImageRecord, vis: &ImageRecord) -> Result<MetricReport> {
    if fused.height() != ir.height()
        || fused.width() != ir.width()
        || fused.height() != vis.height()
        || fused.width() != vis.width()
    {
        return Err(Error::shape("evaluate_all: image dimensions differ".to_string()));
    }
    let (h, w) = (fused.height(), fused.width());
    let f = fused.to_255();
    let a = ir.to_255();
    let b = vis.to_255();
    let report = MetricReport {
        fused_id: fused.id.clone(),
        ir_id: ir.id.clone(),
        vis_id: vis.id.clone(),
        en: entropy(&f)?,
        sd: std_dev(&f)?,
        sf: spatial_frequency(&f, h, w)?,
        vif: vif(&f, &a, &b, h, w)?,
        ag: avg_gradient(&f, h, w)?,
        scd: scd(&f, &a, &b)?,
    };
    report.check_ranges()?;
    Ok(report)
}
