//! Image ingestion, dataset pairing, and checkpoint persistence.
//!
//! Images are 8-bit PNG or PGM files; color inputs are converted to
//! grayscale by BT.601 luma and scaled to [0,1]. Training pairs are matched
//! by identical file stems (or an explicit tab-separated manifest file).
//! Checkpoints are a small binary format: magic bytes, version, a JSON
//! header describing the architecture and parameter layout, then raw
//! little-endian `f32` values.

use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::network::{ArchVariant, NetworkParams, SkipMode};
use crate::tensor::{r, Real};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Infrared,
    Visible,
    Fused,
}

/// A grayscale image with pixels in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub kind: SourceKind,
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ImageRecord {
    pub fn new(
        id: impl Into<String>,
        kind: SourceKind,
        height: usize,
        width: usize,
        pixels: Vec<f64>,
    ) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::invalid(format!("image must be at least 2x2, got {height}x{width}")));
        }
        if pixels.len() != height * width {
            return Err(Error::shape(format!(
                "pixel count {} does not match {height}x{width}",
                pixels.len()
            )));
        }
        if !pixels.iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("image pixels must lie in [0,1]".to_string()));
        }
        Ok(ImageRecord { id: id.into(), kind, height, width, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Pixels rescaled to the 0-255 range (used by the quality metrics).
    pub fn to_255(&self) -> Vec<f64> {
        self.pixels.iter().map(|&v| v * 255.0).collect()
    }
}

/// Load an 8-bit PNG or PGM file as grayscale in [0,1].
pub fn load_grayscale(path: impl AsRef<Path>, kind: SourceKind) -> Result<ImageRecord> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::Image { path: path.to_path_buf(), msg: e.to_string() })?;
    let luma = |r: u8, g: u8, b: u8| -> f64 {
        (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
    };
    use image::DynamicImage as D;
    let (w, h, pixels) = match img {
        D::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            (w, h, buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect::<Vec<_>>())
        }
        D::ImageLumaA8(buf) => {
            let (w, h) = buf.dimensions();
            (w, h, buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect())
        }
        D::ImageRgb8(buf) => {
            let (w, h) = buf.dimensions();
            (w, h, buf.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect())
        }
        D::ImageRgba8(buf) => {
            let (w, h) = buf.dimensions();
            (w, h, buf.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect())
        }
        other => {
            return Err(Error::Image {
                path: path.to_path_buf(),
                msg: format!("unsupported pixel format {:?}; only 8-bit images are accepted", other.color()),
            })
        }
    };
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ImageRecord::new(id, kind, h as usize, w as usize, pixels)
}

/// Write an image as 8-bit PNG or PGM (chosen by extension): values are
/// clamped to [0,1], scaled by 255 and rounded half-up.
pub fn write_image(img: &ImageRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
        .collect();
    image::save_buffer(
        path,
        &bytes,
        img.width as u32,
        img.height as u32,
        image::ColorType::L8,
    )
    .map_err(|e| Error::Image { path: path.to_path_buf(), msg: e.to_string() })
}

/// The centered `size` x `size` window; for odd margins the extra pixel goes
/// to the right/bottom.
pub fn center_crop(img: &ImageRecord, size: usize) -> Result<ImageRecord> {
    if img.height < size || img.width < size {
        return Err(Error::invalid(format!(
            "image {}x{} is smaller than crop size {size}; reduce the crop size",
            img.height, img.width
        )));
    }
    let top = (img.height - size) / 2;
    let left = (img.width - size) / 2;
    let mut pixels = Vec::with_capacity(size * size);
    for y in top..top + size {
        pixels.extend_from_slice(&img.pixels[y * img.width + left..y * img.width + left + size]);
    }
    ImageRecord::new(img.id.clone(), img.kind, size, size, pixels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairEntry {
    pub id: String,
    pub ir_path: PathBuf,
    pub vis_path: PathBuf,
}

/// A deterministic list of registered infrared/visible pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairManifest {
    pub entries: Vec<PairEntry>,
    pub split: Split,
}

impl PairManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn image_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if matches!(ext.as_str(), "png" | "pgm") {
            if let Some(stem) = path.file_stem() {
                out.insert(stem.to_string_lossy().into_owned(), path);
            }
        }
    }
    Ok(out)
}

/// Pair files in the two directories by identical stem, sorted
/// lexicographically. Unpaired files are reported in the warning list and
/// skipped; an empty intersection is an error.
pub fn build_manifest(
    ir_dir: impl AsRef<Path>,
    vis_dir: impl AsRef<Path>,
    split: Split,
) -> Result<(PairManifest, Vec<String>)> {
    let ir = image_stems(ir_dir.as_ref())?;
    let vis = image_stems(vis_dir.as_ref())?;
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for (stem, ir_path) in &ir {
        match vis.get(stem) {
            Some(vis_path) => entries.push(PairEntry {
                id: stem.clone(),
                ir_path: ir_path.clone(),
                vis_path: vis_path.clone(),
            }),
            None => warnings.push(format!("unpaired infrared image skipped: {}", ir_path.display())),
        }
    }
    for (stem, vis_path) in &vis {
        if !ir.contains_key(stem) {
            warnings.push(format!("unpaired visible image skipped: {}", vis_path.display()));
        }
    }
    if entries.is_empty() {
        return Err(Error::invalid("no matching infrared/visible stems found".to_string()));
    }
    Ok((PairManifest { entries, split }, warnings))
}

/// Read an explicit manifest file: one line per pair, `id<TAB>ir<TAB>vis`.
pub fn read_manifest_file(path: impl AsRef<Path>, split: Split) -> Result<PairManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!(
                "{}:{}: expected id<TAB>ir_path<TAB>vis_path",
                path.display(),
                lineno + 1
            )));
        }
        if !seen.insert(parts[0].to_string()) {
            return Err(Error::invalid(format!("duplicate manifest id {}", parts[0])));
        }
        entries.push(PairEntry {
            id: parts[0].to_string(),
            ir_path: PathBuf::from(parts[1]),
            vis_path: PathBuf::from(parts[2]),
        });
    }
    if entries.is_empty() {
        return Err(Error::invalid(format!("manifest {} is empty", path.display())));
    }
    Ok(PairManifest { entries, split })
}

pub fn write_manifest_file(manifest: &PairManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for e in &manifest.entries {
        text.push_str(&format!("{}\t{}\t{}\n", e.id, e.ir_path.display(), e.vis_path.display()));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---- checkpoints -----------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"DIDF";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CkptEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CkptHeader {
    width: usize,
    variant: ArchVariant,
    skip_mode: SkipMode,
    bn_momentum: f64,
    bn_eps: f64,
    loss: LossConfig,
    entries: Vec<CkptEntry>,
}

/// A deserialized model: network parameters plus the loss configuration the
/// model was trained with.
#[derive(Debug, Clone)]
pub struct Checkpoint<R> {
    pub net: NetworkParams<R>,
    pub loss: LossConfig,
}

/// Canonical (name, values) listing of every stored quantity, including BN
/// running statistics, in fixed block/field order.
fn param_entries<R: Real>(net: &NetworkParams<R>) -> Vec<(String, Vec<f32>)> {
    let mut out = Vec::new();
    for (name, block) in net.blocks() {
        let tensor = |t: &crate::tensor::Tensor<R>| -> Vec<f32> {
            t.iter().map(|v| v.as_f64() as f32).collect()
        };
        out.push((format!("{name}.kernel"), tensor(&block.kernel)));
        out.push((format!("{name}.bias"), tensor(&block.bias)));
        out.push((format!("{name}.gamma"), tensor(&block.gamma)));
        out.push((format!("{name}.beta"), tensor(&block.beta)));
        out.push((
            format!("{name}.running_mean"),
            block.running_mean.iter().map(|v| v.as_f64() as f32).collect(),
        ));
        out.push((
            format!("{name}.running_var"),
            block.running_var.iter().map(|v| v.as_f64() as f32).collect(),
        ));
        if let Some(slope) = &block.slope {
            out.push((format!("{name}.slope"), tensor(slope)));
        }
    }
    out
}

/// Serialize a model atomically (write to a temp file, then rename).
pub fn save_checkpoint<R: Real>(
    net: &NetworkParams<R>,
    loss: &LossConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let entries = param_entries(net);
    let header = CkptHeader {
        width: net.width,
        variant: net.variant,
        skip_mode: net.skip_mode,
        bn_momentum: net.bn_momentum,
        bn_eps: net.bn_eps,
        loss: *loss,
        entries: entries.iter().map(|(n, v)| CkptEntry { name: n.clone(), len: v.len() }).collect(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;

    let mut bytes = Vec::new();
    bytes.extend_from_slice(CKPT_MAGIC);
    bytes.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, values) in &entries {
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }

    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Deserialize a model, validating magic, version, and every blob length
/// against the architecture declared in the header.
pub fn load_checkpoint<R: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<R>> {
    let path = path.as_ref();
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic bytes", path.display())));
    }
    let mut word = [0u8; 4];
    f.read_exact(&mut word).map_err(|e| Error::io(path, e))?;
    let version = u32::from_le_bytes(word);
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {version} (expected {CKPT_VERSION})",
            path.display()
        )));
    }
    f.read_exact(&mut word).map_err(|e| Error::io(path, e))?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes).map_err(|e| Error::io(path, e))?;
    let header: CkptHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: header decode: {e}", path.display())))?;

    let mut net = NetworkParams::<R>::init(header.width, 0, header.variant, header.skip_mode)?;
    net.bn_momentum = header.bn_momentum;
    net.bn_eps = header.bn_eps;

    // the stored entry list must match the architecture's canonical inventory
    let expected = param_entries(&net);
    if header.entries.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {} parameter blobs, architecture expects {}",
            path.display(),
            header.entries.len(),
            expected.len()
        )));
    }
    for (e, (name, values)) in header.entries.iter().zip(&expected) {
        if &e.name != name || e.len != values.len() {
            return Err(Error::Checkpoint(format!(
                "{}: blob {} (len {}) does not match expected {} (len {})",
                path.display(),
                e.name,
                e.len,
                name,
                values.len()
            )));
        }
    }

    let total: usize = header.entries.iter().map(|e| e.len).sum();
    let mut raw = vec![0u8; total * 4];
    f.read_exact(&mut raw)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated parameter blob", path.display())))?;
    let mut rest = Vec::new();
    f.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{}: {} trailing bytes after parameter blob",
            path.display(),
            rest.len()
        )));
    }
    let mut values = Vec::with_capacity(total);
    for chunk in raw.chunks_exact(4) {
        values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }

    let mut cursor = 0usize;
    for (name, block) in net.blocks_mut() {
        let fill_tensor = |t: &mut crate::tensor::Tensor<R>, cursor: &mut usize| {
            for v in t.data_mut() {
                *v = r::<R>(values[*cursor] as f64);
                *cursor += 1;
            }
        };
        fill_tensor(&mut block.kernel, &mut cursor);
        fill_tensor(&mut block.bias, &mut cursor);
        fill_tensor(&mut block.gamma, &mut cursor);
        fill_tensor(&mut block.beta, &mut cursor);
        for v in &mut block.running_mean {
            *v = r::<R>(values[cursor] as f64);
            cursor += 1;
        }
        for v in &mut block.running_var {
            *v = r::<R>(values[cursor] as f64);
            cursor += 1;
        }
        if let Some(slope) = &mut block.slope {
            fill_tensor(slope, &mut cursor);
        }
        let _ = name;
    }
    debug_assert_eq!(cursor, total);

    Ok(Checkpoint { net, loss: header.loss })
}
