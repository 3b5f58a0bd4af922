//! Train briefly, then write the base (scene-level) and detail
//! (modality-specific) feature maps of one image as grayscale files.
//!
//! ```bash
//! cargo run --example decompose_features
//! ```

use didfuse::io::Split;
use didfuse::loss::{LossConfig, Reduction};
use didfuse::pipeline::{decompose_to_files, train, TrainConfig};
use didfuse::synth::{synth_dataset, synth_pair};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("didfuse_example_decompose");
    let _ = std::fs::remove_dir_all(&dir);
    let manifest = synth_dataset(&dir, 8, 64, 64, 21, Split::Train)?;
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 4,
        lr: 1e-3,
        width: 8,
        crop: 64,
        seed: 21,
        loss: LossConfig { reduction: Reduction::Mean, ..LossConfig::default() },
        ..TrainConfig::default()
    };
    let (mut net, _) = train::<f32>(&manifest, &cfg, &dir.join("model.ckpt"), None)?;

    let (ir, _) = synth_pair("demo", 64, 64, 99)?;
    let written = decompose_to_files(&mut net, &ir, &dir.join("decomposed"))?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}
