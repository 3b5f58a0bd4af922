//! Run a miniature ablation: train two structural variants for a few epochs
//! on the same synthetic data and compare their fused-image metrics.
//!
//! ```bash
//! cargo run --example ablation_study
//! ```

use didfuse::fusion::FusionConfig;
use didfuse::io::Split;
use didfuse::loss::{LossConfig, Reduction};
use didfuse::pipeline::{ablate, AblationVariant, TrainConfig};
use didfuse::synth::synth_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("didfuse_example_ablation");
    let _ = std::fs::remove_dir_all(&dir);
    let manifest = synth_dataset(&dir, 6, 48, 48, 41, Split::Train)?;
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 3,
        lr: 1e-3,
        width: 8,
        crop: 48,
        seed: 41,
        loss: LossConfig { reduction: Reduction::Mean, ..LossConfig::default() },
        ..TrainConfig::default()
    };

    println!("{:<12} {:>6} {:>7} {:>7} {:>6} {:>6} {:>7}", "variant", "en", "sd", "sf", "vif", "ag", "scd");
    for variant in [AblationVariant::NoDecomp, AblationVariant::NoSkip] {
        let out = dir.join(format!("{variant:?}"));
        let (_, _, mean) =
            ablate::<f32>(&manifest, &manifest, variant, &cfg, &FusionConfig::default(), &out)?;
        println!(
            "{:<12} {:>6.3} {:>7.3} {:>7.3} {:>6.3} {:>6.3} {:>7.3}",
            format!("{variant:?}"),
            mean.en,
            mean.sd,
            mean.sf,
            mean.vif,
            mean.ag,
            mean.scd
        );
    }
    println!("full artifacts (checkpoints, loss curves, fused images) under {}", dir.display());
    Ok(())
}
