//! Seeded synthetic infrared/visible image pairs for examples and tests.
//!
//! No dataset ships with the crate, so desk-scale experiments generate
//! registered pairs procedurally: a shared scene layer (smooth low-frequency
//! structure common to both modalities) plus modality-specific content — hot
//! blobs for the infrared image, texture and edges for the visible one.

use crate::error::Result;
use crate::io::{write_image, ImageRecord, PairEntry, PairManifest, SourceKind, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// One registered synthetic pair. Both images share the same scene layer.
pub fn synth_pair(id: &str, h: usize, w: usize, seed: u64) -> Result<(ImageRecord, ImageRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // shared low-frequency scene
    let fx = rng.gen_range(0.03..0.09);
    let fy = rng.gen_range(0.03..0.09);
    let (px, py) = (rng.gen_range(0.0..6.28), rng.gen_range(0.0..6.28));
    let scene: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            0.5 + 0.2 * (fx * x + px).sin() + 0.18 * (fy * y + py).cos()
        })
        .collect();

    // infrared: scene plus hot Gaussian blobs
    let mut ir = scene.clone();
    let blobs = rng.gen_range(2..5);
    for _ in 0..blobs {
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        let sigma = rng.gen_range(0.06..0.18) * h.min(w) as f64;
        let amp = rng.gen_range(0.25..0.45);
        for (i, v) in ir.iter_mut().enumerate() {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            let d2 = (y - cy).powi(2) + (x - cx).powi(2);
            *v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }

    // visible: scene plus fine texture and a few sharp edges
    let mut vis = scene;
    let tfx = rng.gen_range(0.5..1.1);
    let tfy = rng.gen_range(0.5..1.1);
    for (i, v) in vis.iter_mut().enumerate() {
        let (y, x) = ((i / w) as f64, (i % w) as f64);
        *v += 0.08 * (tfx * x).sin() * (tfy * y).cos();
        *v += 0.02 * (rng.gen::<f64>() - 0.5);
    }
    let edges = rng.gen_range(1..4);
    for _ in 0..edges {
        let col = rng.gen_range(w / 4..3 * w / 4);
        let step = rng.gen_range(0.1..0.2);
        for y in 0..h {
            for x in col..w {
                vis[y * w + x] += step;
            }
        }
    }

    let clamp = |v: Vec<f64>| v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect::<Vec<_>>();
    Ok((
        ImageRecord::new(id, SourceKind::Infrared, h, w, clamp(ir))?,
        ImageRecord::new(id, SourceKind::Visible, h, w, clamp(vis))?,
    ))
}

/// Write `count` synthetic pairs into `dir`/ir and `dir`/vis and return a
/// manifest over them. Pair k uses seed `seed + k`.
pub fn synth_dataset(
    dir: impl AsRef<Path>,
    count: usize,
    h: usize,
    w: usize,
    seed: u64,
    split: Split,
) -> Result<PairManifest> {
    let dir = dir.as_ref();
    let ir_dir = dir.join("ir");
    let vis_dir = dir.join("vis");
    std::fs::create_dir_all(&ir_dir).map_err(|e| crate::Error::io(&ir_dir, e))?;
    std::fs::create_dir_all(&vis_dir).map_err(|e| crate::Error::io(&vis_dir, e))?;
    let mut entries = Vec::with_capacity(count);
    for k in 0..count {
        let id = format!("pair{k:03}");
        let (ir, vis) = synth_pair(&id, h, w, seed + k as u64)?;
        let ir_path = ir_dir.join(format!("{id}.png"));
        let vis_path = vis_dir.join(format!("{id}.png"));
        write_image(&ir, &ir_path)?;
        write_image(&vis, &vis_path)?;
        entries.push(PairEntry { id, ir_path, vis_path });
    }
    Ok(PairManifest { entries, split })
}
