//! Save a model to the binary checkpoint format, load it back, and verify
//! the reloaded model fuses a pair to the exact same bytes.
//!
//! ```bash
//! cargo run --example checkpoint_roundtrip
//! ```

use didfuse::fusion::FusionConfig;
use didfuse::io::{load_checkpoint, save_checkpoint, ImageRecord};
use didfuse::loss::LossConfig;
use didfuse::network::{ArchVariant, NetworkParams, SkipMode};
use didfuse::pipeline::{fuse_pair, FusionSkip};
use didfuse::synth::synth_pair;

fn quantize(img: &ImageRecord) -> Vec<u8> {
    img.pixels().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut net = NetworkParams::<f32>::init(8, 3, ArchVariant::Full, SkipMode::Add)?;
    let path = std::env::temp_dir().join("didfuse_example_roundtrip.ckpt");
    save_checkpoint(&net, &LossConfig::default(), &path)?;
    println!("saved {} bytes to {}", std::fs::metadata(&path)?.len(), path.display());

    let mut reloaded = load_checkpoint::<f32>(&path)?.net;

    let (ir, vis) = synth_pair("demo", 64, 64, 13)?;
    let fcfg = FusionConfig::default();
    let a = fuse_pair(&mut net, &ir, &vis, &fcfg, FusionSkip::Avg)?;
    let b = fuse_pair(&mut reloaded, &ir, &vis, &fcfg, FusionSkip::Avg)?;
    assert_eq!(quantize(&a), quantize(&b), "round-trip changed the fused output");
    println!("fused output is byte-identical after save/load");
    Ok(())
}
