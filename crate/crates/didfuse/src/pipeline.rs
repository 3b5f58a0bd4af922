//! Orchestration: training, fusion inference, decomposition visualization,
//! metric evaluation, ablations, strategy comparison, and the
//! reproducibility harness. These functions back the `didfuse` binary.

use crate::error::{Error, Result};
use crate::fusion::{fuse_maps, FusionConfig};
use crate::io::{
    center_crop, load_grayscale, save_checkpoint, write_image, ImageRecord, PairEntry,
    PairManifest, SourceKind,
};
use crate::loss::{classic_ae_loss, total_loss, LossBreakdown, LossConfig, LossVariant};
use crate::metrics::{evaluate_all, MetricReport, CSV_HEADER};
use crate::network::{ArchVariant, BnMode, Features, NetworkParams, SkipMode};
use crate::tensor::{r, AdamState, Graph, Real, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Hyperparameters of one training run. The defaults are the published
/// full-scale recipe; desk-scale tests override width/epochs/crop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub width: usize,
    pub crop: usize,
    pub seed: u64,
    pub arch: ArchVariant,
    pub skip_mode: SkipMode,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 120,
            batch_size: 24,
            lr: 1e-3,
            width: 64,
            crop: 128,
            seed: 0,
            arch: ArchVariant::Full,
            skip_mode: SkipMode::Add,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be >= 1".to_string()));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch size must be >= 1".to_string()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be > 0".to_string()));
        }
        let classic_arch = self.arch == ArchVariant::ClassicAe;
        let classic_loss = self.loss.variant == LossVariant::ClassicAe;
        if classic_arch != classic_loss {
            return Err(Error::invalid(
                "classic-ae architecture and classic-ae loss must be used together".to_string(),
            ));
        }
        Ok(())
    }

    /// Learning rate at a 0-based epoch index: divided by 10 at
    /// floor(epochs/3) and again at floor(2*epochs/3) (epochs 40 and 80 of
    /// the 120-epoch recipe).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let b1 = self.epochs / 3;
        let b2 = 2 * self.epochs / 3;
        let mut lr = self.lr;
        if epoch >= b1 {
            lr /= 10.0;
        }
        if epoch >= b2 {
            lr /= 10.0;
        }
        lr
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub per_epoch: Vec<LossBreakdown>,
    pub checkpoint_path: PathBuf,
    pub wall_clock_secs: f64,
    pub seed: u64,
}

fn mean_breakdown(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len().max(1) as f64;
    let mut out = LossBreakdown::default();
    for b in items {
        out.base_gap += b.base_gap;
        out.detail_gap += b.detail_gap;
        out.recon_ir += b.recon_ir;
        out.recon_vis += b.recon_vis;
        out.grad_term += b.grad_term;
        out.total += b.total;
    }
    out.base_gap /= n;
    out.detail_gap /= n;
    out.recon_ir /= n;
    out.recon_vis /= n;
    out.grad_term /= n;
    out.total /= n;
    out
}

fn image_to_tensor<R: Real>(img: &ImageRecord) -> Result<Tensor<R>> {
    Tensor::from_f64([1, 1, img.height(), img.width()], img.pixels())
}

fn tensor_to_image<R: Real>(t: &Tensor<R>, id: &str, kind: SourceKind) -> Result<ImageRecord> {
    let [n, c, h, w] = t.shape();
    if n != 1 || c != 1 {
        return Err(Error::shape(format!("expected a single-plane tensor, got {:?}", t.shape())));
    }
    let pixels: Vec<f64> = t.iter().map(|v| v.as_f64().clamp(0.0, 1.0)).collect();
    ImageRecord::new(id, kind, h, w, pixels)
}

fn load_pair(entry: &PairEntry) -> Result<(ImageRecord, ImageRecord)> {
    let ir = load_grayscale(&entry.ir_path, SourceKind::Infrared)?;
    let vis = load_grayscale(&entry.vis_path, SourceKind::Visible)?;
    Ok((ir, vis))
}

/// Stack single-plane tensors along the batch dimension.
fn stack_batch<R: Real>(items: &[Tensor<R>]) -> Result<Tensor<R>> {
    let [_, c, h, w] = items[0].shape();
    let mut data = Vec::with_capacity(items.len() * c * h * w);
    for t in items {
        if t.shape() != [1, c, h, w] {
            return Err(Error::shape("batch items must share one shape".to_string()));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new([items.len(), c, h, w], data)
}

/// Train a model on every pair in the manifest, write the checkpoint (and
/// optionally a per-epoch loss CSV), and return the trained parameters.
pub fn train<R: Real>(
    manifest: &PairManifest,
    cfg: &TrainConfig,
    out_ckpt: &Path,
    loss_csv: Option<&Path>,
) -> Result<(NetworkParams<R>, RunRecord)> {
    cfg.validate()?;
    if manifest.is_empty() {
        return Err(Error::invalid("training manifest is empty".to_string()));
    }
    let started = std::time::Instant::now();

    // ingest: grayscale load + center crop, once
    let mut irs: Vec<Tensor<R>> = Vec::with_capacity(manifest.len());
    let mut viss: Vec<Tensor<R>> = Vec::with_capacity(manifest.len());
    for entry in &manifest.entries {
        let (ir, vis) = load_pair(entry)?;
        irs.push(image_to_tensor(&center_crop(&ir, cfg.crop)?)?);
        viss.push(image_to_tensor(&center_crop(&vis, cfg.crop)?)?);
    }

    let mut net = NetworkParams::<R>::init(cfg.width, cfg.seed, cfg.arch, cfg.skip_mode)?;
    let mut adam: BTreeMap<String, AdamState<R>> = BTreeMap::new();
    net.visit_params(|name, t| {
        adam.insert(name.to_string(), AdamState::new(t.len()));
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED));
    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = r::<R>(cfg.lr_at(epoch));
        order.shuffle(&mut rng);
        let mut step_records = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let ir_batch = stack_batch(&chunk.iter().map(|&i| irs[i].clone()).collect::<Vec<_>>())?;
            let vis_batch =
                stack_batch(&chunk.iter().map(|&i| viss[i].clone()).collect::<Vec<_>>())?;

            let mut g = Graph::<R>::new();
            let vars = net.register(&mut g);
            let terms = if cfg.loss.variant == LossVariant::ClassicAe {
                // single-stream: every image is its own sample
                let mut all = Vec::with_capacity(2 * chunk.len());
                for &i in chunk {
                    all.push(irs[i].clone());
                    all.push(viss[i].clone());
                }
                let x = g.leaf(stack_batch(&all)?);
                let (xhat, _) = net.reconstruct(&mut g, &vars, x, BnMode::Train)?;
                classic_ae_loss(&mut g, x, xhat, &cfg.loss)?
            } else {
                let ir = g.leaf(ir_batch);
                let vis = g.leaf(vis_batch);
                let (ir_hat, feats_ir) = net.reconstruct(&mut g, &vars, ir, BnMode::Train)?;
                let (vis_hat, feats_vis) = net.reconstruct(&mut g, &vars, vis, BnMode::Train)?;
                total_loss(&mut g, ir, ir_hat, vis, vis_hat, &feats_ir, &feats_vis, &cfg.loss)?
            };
            let breakdown = terms.breakdown(&g);
            if !breakdown.total.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite loss at epoch {epoch}: {breakdown:?}"
                )));
            }
            g.backward(terms.total)?;

            let grads: BTreeMap<String, Vec<R>> = vars
                .entries()
                .into_iter()
                .map(|(name, var)| {
                    let grad = g.grad(var).map(|s| s.to_vec()).unwrap_or_default();
                    (name, grad)
                })
                .collect();
            let mut step_err = None;
            net.visit_params_mut(|name, t| {
                if step_err.is_some() {
                    return;
                }
                let grad = &grads[name];
                if grad.is_empty() {
                    return; // parameter not touched by this variant's loss
                }
                if let Err(e) = adam.get_mut(name).expect("adam state").step(t.data_mut(), grad, lr)
                {
                    step_err = Some(e);
                }
            });
            if let Some(e) = step_err {
                return Err(e);
            }
            step_records.push(breakdown);
        }
        per_epoch.push(mean_breakdown(&step_records));
    }

    save_checkpoint(&net, &cfg.loss, out_ckpt)?;
    if let Some(csv) = loss_csv {
        let mut text =
            String::from("epoch,base_gap,detail_gap,recon_ir,recon_vis,grad_term,total\n");
        for (i, b) in per_epoch.iter().enumerate() {
            text.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                i + 1,
                b.base_gap,
                b.detail_gap,
                b.recon_ir,
                b.recon_vis,
                b.grad_term,
                b.total
            ));
        }
        std::fs::write(csv, text).map_err(|e| Error::io(csv, e))?;
    }

    let record = RunRecord {
        per_epoch,
        checkpoint_path: out_ckpt.to_path_buf(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        seed: cfg.seed,
    };
    Ok((net, record))
}

/// Concrete (non-graph) encoder outputs for one image, evaluated in eval
/// mode with the stored batch-norm statistics.
#[derive(Debug, Clone)]
pub struct EvalFeatures<R> {
    pub base: Option<Tensor<R>>,
    pub detail: Option<Tensor<R>>,
    pub skip1: Tensor<R>,
    pub skip2: Tensor<R>,
}

/// Encode one image in eval mode and extract the feature tensors.
pub fn encode_features<R: Real>(
    net: &mut NetworkParams<R>,
    img: &ImageRecord,
) -> Result<EvalFeatures<R>> {
    let mut g = Graph::<R>::new();
    let vars = net.register(&mut g);
    let x = g.leaf(image_to_tensor(img)?);
    let feats = net.encode(&mut g, &vars, x, BnMode::Eval)?;
    Ok(EvalFeatures {
        base: feats.base.map(|v| g.value(v).clone()),
        detail: feats.detail.map(|v| g.value(v).clone()),
        skip1: g.value(feats.skip1).clone(),
        skip2: g.value(feats.skip2).clone(),
    })
}

/// Which skip activations feed the decoder when decoding fused features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionSkip {
    Avg,
    Ir,
    Vis,
    FusedSam,
}

fn merge_skip<R: Real>(
    a: &Tensor<R>,
    b: &Tensor<R>,
    mode: FusionSkip,
    fcfg: &FusionConfig,
) -> Result<Tensor<R>> {
    match mode {
        FusionSkip::Ir => Ok(a.clone()),
        FusionSkip::Vis => Ok(b.clone()),
        FusionSkip::Avg => {
            let half = r::<R>(0.5);
            let data: Vec<R> = a.iter().zip(b.iter()).map(|(&x, &y)| half * (x + y)).collect();
            Tensor::new(a.shape(), data)
        }
        FusionSkip::FusedSam => fuse_maps(a, b, fcfg, fcfg.gammas[0], fcfg.gammas[1]),
    }
}

/// Decode a feature set assembled from concrete tensors (eval mode).
fn decode_tensors<R: Real>(
    net: &mut NetworkParams<R>,
    base: Option<&Tensor<R>>,
    detail: Option<&Tensor<R>>,
    skip1: &Tensor<R>,
    skip2: &Tensor<R>,
) -> Result<Tensor<R>> {
    let mut g = Graph::<R>::new();
    let vars = net.register(&mut g);
    let feats = Features {
        base: base.map(|t| g.leaf(t.clone())),
        detail: detail.map(|t| g.leaf(t.clone())),
        skip1: g.leaf(skip1.clone()),
        skip2: g.leaf(skip2.clone()),
    };
    let out = net.decode(&mut g, &vars, &feats, BnMode::Eval)?;
    Ok(g.value(out).clone())
}

/// Eval-mode reconstruction of a single image through the full network.
pub fn reconstruct_image<R: Real>(
    net: &mut NetworkParams<R>,
    img: &ImageRecord,
) -> Result<ImageRecord> {
    let f = encode_features(net, img)?;
    let out = decode_tensors(net, f.base.as_ref(), f.detail.as_ref(), &f.skip1, &f.skip2)?;
    tensor_to_image(&out, &img.id, SourceKind::Fused)
}

/// Fuse one registered pair: eval-mode encode of both sources, feature
/// merging per the fusion config, decode with the configured skip source.
pub fn fuse_pair<R: Real>(
    net: &mut NetworkParams<R>,
    ir: &ImageRecord,
    vis: &ImageRecord,
    fcfg: &FusionConfig,
    skip: FusionSkip,
) -> Result<ImageRecord> {
    fcfg.validate()?;
    if ir.height() != vis.height() || ir.width() != vis.width() {
        return Err(Error::shape(format!(
            "infrared {}x{} and visible {}x{} differ; no implicit resampling",
            ir.height(),
            ir.width(),
            vis.height(),
            vis.width()
        )));
    }
    let fi = encode_features(net, ir)?;
    let fv = encode_features(net, vis)?;
    let fused_base = match (&fi.base, &fv.base) {
        (Some(a), Some(b)) => Some(fuse_maps(a, b, fcfg, fcfg.gammas[0], fcfg.gammas[1])?),
        _ => None,
    };
    let fused_detail = match (&fi.detail, &fv.detail) {
        (Some(a), Some(b)) => Some(fuse_maps(a, b, fcfg, fcfg.gammas[2], fcfg.gammas[3])?),
        _ => None,
    };
    let skip1 = merge_skip(&fi.skip1, &fv.skip1, skip, fcfg)?;
    let skip2 = merge_skip(&fi.skip2, &fv.skip2, skip, fcfg)?;
    let out = decode_tensors(net, fused_base.as_ref(), fused_detail.as_ref(), &skip1, &skip2)?;
    tensor_to_image(&out, &ir.id, SourceKind::Fused)
}

/// Sidecar metadata written next to every fused image.
#[derive(Debug, Serialize, Deserialize)]
pub struct FusionSidecar {
    pub sam: crate::fusion::SamStrategy,
    pub use_cam: bool,
    pub gammas: [f64; 4],
    pub gf_radius: usize,
    pub gf_eps: f64,
    pub fusion_skip: FusionSkip,
}

/// Fuse a pair of image files and write the result plus a JSON sidecar.
pub fn fuse_to_file<R: Real>(
    net: &mut NetworkParams<R>,
    ir_path: &Path,
    vis_path: &Path,
    fcfg: &FusionConfig,
    skip: FusionSkip,
    out: &Path,
) -> Result<()> {
    let ir = load_grayscale(ir_path, SourceKind::Infrared)?;
    let vis = load_grayscale(vis_path, SourceKind::Visible)?;
    let fused = fuse_pair(net, &ir, &vis, fcfg, skip)?;
    write_image(&fused, out)?;
    let sidecar = FusionSidecar {
        sam: fcfg.sam,
        use_cam: fcfg.use_cam,
        gammas: fcfg.gammas,
        gf_radius: fcfg.gf_radius,
        gf_eps: fcfg.gf_eps,
        fusion_skip: skip,
    };
    let sc_path = out.with_extension("json");
    let text = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::invalid(format!("sidecar encode: {e}")))?;
    std::fs::write(&sc_path, text).map_err(|e| Error::io(&sc_path, e))
}

/// Min-max normalize a plane into [0,1]; zero-range maps become mid-gray.
fn normalize_plane<R: Real>(plane: &[R]) -> Vec<f64> {
    let vals: Vec<f64> = plane.iter().map(|v| v.as_f64()).collect();
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![0.5; vals.len()];
    }
    vals.into_iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Write the first channel of the base and detail maps of one image as
/// min-max-normalized grayscale files; returns the written paths.
pub fn decompose_to_files<R: Real>(
    net: &mut NetworkParams<R>,
    img: &ImageRecord,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let feats = encode_features(net, img)?;
    let mut written = Vec::new();
    for (label, map) in [("base", &feats.base), ("detail", &feats.detail)] {
        if let Some(t) = map {
            let [_, _, h, w] = t.shape();
            let pixels = normalize_plane(t.plane(0, 0));
            let rec = ImageRecord::new(format!("{}_{label}", img.id), SourceKind::Fused, h, w, pixels)?;
            let path = out_dir.join(format!("{}_{label}.png", img.id));
            write_image(&rec, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Score every fused image in a directory against its manifest sources;
/// writes a CSV with one row per pair and a mean row. The fused file for
/// pair `id` must be named `id.png` (or `id.pgm`).
pub fn evaluate_dir(
    fused_dir: &Path,
    manifest: &PairManifest,
    csv_out: Option<&Path>,
) -> Result<(Vec<MetricReport>, MetricReport)> {
    if manifest.is_empty() {
        return Err(Error::invalid("evaluation manifest is empty".to_string()));
    }
    let mut reports = Vec::with_capacity(manifest.len());
    for entry in &manifest.entries {
        let fused_path = ["png", "pgm"]
            .iter()
            .map(|ext| fused_dir.join(format!("{}.{ext}", entry.id)))
            .find(|p| p.exists())
            .ok_or_else(|| {
                Error::invalid(format!(
                    "no fused image for pair {} in {}",
                    entry.id,
                    fused_dir.display()
                ))
            })?;
        let fused = load_grayscale(&fused_path, SourceKind::Fused)?;
        let (ir, vis) = load_pair(entry)?;
        reports.push(evaluate_all(&fused, &ir, &vis)?);
    }
    let n = reports.len() as f64;
    let mean = MetricReport {
        fused_id: "mean".to_string(),
        ir_id: String::new(),
        vis_id: String::new(),
        en: reports.iter().map(|x| x.en).sum::<f64>() / n,
        sd: reports.iter().map(|x| x.sd).sum::<f64>() / n,
        sf: reports.iter().map(|x| x.sf).sum::<f64>() / n,
        vif: reports.iter().map(|x| x.vif).sum::<f64>() / n,
        ag: reports.iter().map(|x| x.ag).sum::<f64>() / n,
        scd: reports.iter().map(|x| x.scd).sum::<f64>() / n,
    };
    if let Some(csv) = csv_out {
        let mut text = String::from(CSV_HEADER);
        text.push('\n');
        for rep in &reports {
            text.push_str(&rep.csv_row());
            text.push('\n');
        }
        text.push_str(&mean.csv_row());
        text.push('\n');
        std::fs::write(csv, text).map_err(|e| Error::io(csv, e))?;
    }
    Ok((reports, mean))
}

/// Fuse every pair of a manifest into `out_dir` with one strategy.
pub fn fuse_manifest<R: Real>(
    net: &mut NetworkParams<R>,
    manifest: &PairManifest,
    fcfg: &FusionConfig,
    skip: FusionSkip,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for entry in &manifest.entries {
        let (ir, vis) = load_pair(entry)?;
        let fused = fuse_pair(net, &ir, &vis, fcfg, skip)?;
        write_image(&fused, out_dir.join(format!("{}.png", entry.id)))?;
    }
    Ok(())
}

/// The five structural/objective ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationVariant {
    NoBase,
    NoDetail,
    NoDecomp,
    ClassicAe,
    NoSkip,
}

impl AblationVariant {
    /// Structural change and objective for this ablation.
    pub fn arch_and_loss(self) -> (ArchVariant, LossVariant) {
        match self {
            AblationVariant::NoBase => (ArchVariant::NoBase, LossVariant::NoBase),
            AblationVariant::NoDetail => (ArchVariant::NoDetail, LossVariant::NoDetail),
            AblationVariant::NoDecomp => (ArchVariant::Full, LossVariant::NoDecomp),
            AblationVariant::ClassicAe => (ArchVariant::ClassicAe, LossVariant::ClassicAe),
            AblationVariant::NoSkip => (ArchVariant::NoSkip, LossVariant::Full),
        }
    }
}

/// Train one ablation variant, fuse the evaluation pairs, and score them.
pub fn ablate<R: Real>(
    train_manifest: &PairManifest,
    eval_manifest: &PairManifest,
    variant: AblationVariant,
    cfg: &TrainConfig,
    fcfg: &FusionConfig,
    out_dir: &Path,
) -> Result<(RunRecord, Vec<MetricReport>, MetricReport)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (arch, loss_variant) = variant.arch_and_loss();
    let mut cfg = cfg.clone();
    cfg.arch = arch;
    cfg.loss.variant = loss_variant;
    let ckpt = out_dir.join("model.ckpt");
    let csv = out_dir.join("loss.csv");
    let (mut net, record) = train::<R>(train_manifest, &cfg, &ckpt, Some(&csv))?;
    let fused_dir = out_dir.join("fused");
    fuse_manifest(&mut net, eval_manifest, fcfg, FusionSkip::Avg, &fused_dir)?;
    let (reports, mean) = evaluate_dir(&fused_dir, eval_manifest, Some(&out_dir.join("metrics.csv")))?;
    Ok((record, reports, mean))
}

/// Per-metric dispersion across repeated runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DispersionRow {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    /// Coefficient of variation std/|mean| (0 when the mean is 0).
    pub cv: f64,
}

/// Outcome of the reproducibility harness: one mean metric row per run plus
/// the per-metric dispersion table.
#[derive(Debug, Clone)]
pub struct ReproSummary {
    pub run_means: Vec<MetricReport>,
    pub dispersion: Vec<DispersionRow>,
}

/// Train `runs` models with seeds `base_seed..base_seed+runs`, evaluate each
/// on the evaluation manifest, and write a per-run table plus a dispersion
/// CSV (metric, mean, std, cv).
pub fn repro<R: Real>(
    train_manifest: &PairManifest,
    eval_manifest: &PairManifest,
    runs: usize,
    cfg: &TrainConfig,
    fcfg: &FusionConfig,
    out_dir: &Path,
) -> Result<ReproSummary> {
    if runs < 1 {
        return Err(Error::invalid("repro needs runs >= 1".to_string()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut run_means = Vec::with_capacity(runs);
    for run in 0..runs {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed + run as u64;
        let run_dir = out_dir.join(format!("run{run}"));
        std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
        let ckpt = run_dir.join("model.ckpt");
        let (mut net, _) = train::<R>(train_manifest, &run_cfg, &ckpt, Some(&run_dir.join("loss.csv")))?;
        let fused_dir = run_dir.join("fused");
        fuse_manifest(&mut net, eval_manifest, fcfg, FusionSkip::Avg, &fused_dir)?;
        let (_, mean) = evaluate_dir(&fused_dir, eval_manifest, Some(&run_dir.join("metrics.csv")))?;
        let mut mean = mean;
        mean.fused_id = format!("run{run}");
        run_means.push(mean);
    }

    let dispersion: Vec<DispersionRow> = [
        ("en", run_means.iter().map(|m| m.en).collect::<Vec<_>>()),
        ("sd", run_means.iter().map(|m| m.sd).collect()),
        ("sf", run_means.iter().map(|m| m.sf).collect()),
        ("vif", run_means.iter().map(|m| m.vif).collect()),
        ("ag", run_means.iter().map(|m| m.ag).collect()),
        ("scd", run_means.iter().map(|m| m.scd).collect()),
    ]
    .into_iter()
    .map(|(name, vals)| {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        let cv = if mean == 0.0 { 0.0 } else { std / mean.abs() };
        DispersionRow { metric: name.to_string(), mean, std, cv }
    })
    .collect();

    let mut text = String::from("metric,mean,std,cv\n");
    for row in &dispersion {
        text.push_str(&format!("{},{:.6},{:.6},{:.6}\n", row.metric, row.mean, row.std, row.cv));
    }
    let path = out_dir.join("dispersion.csv");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    let mut runs_text = String::from(CSV_HEADER);
    runs_text.push('\n');
    for m in &run_means {
        runs_text.push_str(&m.csv_row());
        runs_text.push('\n');
    }
    let path = out_dir.join("runs.csv");
    std::fs::write(&path, runs_text).map_err(|e| Error::io(&path, e))?;

    Ok(ReproSummary { run_means, dispersion })
}

/// The six merging-strategy combinations: {l1, saliency, average} x {with,
/// without channel attention}.
pub fn strategy_combinations() -> Vec<(String, FusionConfig)> {
    use crate::fusion::SamStrategy;
    let mut out = Vec::new();
    for (label, sam) in [
        ("l1", SamStrategy::L1Attention),
        ("saliency", SamStrategy::Saliency),
        ("average", SamStrategy::WeightedAverage),
    ] {
        for use_cam in [false, true] {
            let name = if use_cam { format!("{label}+cam") } else { label.to_string() };
            out.push((name, FusionConfig { sam, use_cam, ..FusionConfig::default() }));
        }
    }
    out
}

/// Fuse+evaluate a validation manifest under all six strategy combinations;
/// writes one mean metric row per strategy. Ordering is reported, never
/// asserted.
pub fn compare_strategies<R: Real>(
    net: &mut NetworkParams<R>,
    val_manifest: &PairManifest,
    out_dir: &Path,
    csv_out: &Path,
) -> Result<Vec<(String, MetricReport)>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rows = Vec::new();
    for (name, fcfg) in strategy_combinations() {
        let fused_dir = out_dir.join(name.replace('+', "_"));
        fuse_manifest(net, val_manifest, &fcfg, FusionSkip::Avg, &fused_dir)?;
        let (_, mut mean) = evaluate_dir(&fused_dir, val_manifest, None)?;
        mean.fused_id = name.clone();
        rows.push((name, mean));
    }
    let mut text = String::from("strategy,en,sd,sf,vif,ag,scd\n");
    for (name, m) in &rows {
        text.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            name, m.en, m.sd, m.sf, m.vif, m.ag, m.scd
        ));
    }
    std::fs::write(csv_out, text).map_err(|e| Error::io(csv_out, e))?;
    Ok(rows)
}
