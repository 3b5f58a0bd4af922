//! Fuse one infrared/visible pair under all six merging-strategy
//! combinations and print the quality metrics of each result.
//!
//! ```bash
//! cargo run --example fuse_strategies
//! ```

use didfuse::io::Split;
use didfuse::loss::{LossConfig, Reduction};
use didfuse::metrics::evaluate_all;
use didfuse::pipeline::{fuse_pair, strategy_combinations, train, FusionSkip, TrainConfig};
use didfuse::synth::{synth_dataset, synth_pair};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("didfuse_example_strategies");
    let _ = std::fs::remove_dir_all(&dir);
    let manifest = synth_dataset(&dir, 8, 64, 64, 31, Split::Train)?;
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 4,
        lr: 1e-3,
        width: 8,
        crop: 64,
        seed: 31,
        loss: LossConfig { reduction: Reduction::Mean, ..LossConfig::default() },
        ..TrainConfig::default()
    };
    let (mut net, _) = train::<f32>(&manifest, &cfg, &dir.join("model.ckpt"), None)?;

    let (ir, vis) = synth_pair("demo", 64, 64, 77)?;
    println!("{:<14} {:>6} {:>7} {:>7} {:>6} {:>6} {:>7}", "strategy", "en", "sd", "sf", "vif", "ag", "scd");
    for (name, fcfg) in strategy_combinations() {
        let fused = fuse_pair(&mut net, &ir, &vis, &fcfg, FusionSkip::Avg)?;
        let m = evaluate_all(&fused, &ir, &vis)?;
        println!(
            "{:<14} {:>6.3} {:>7.3} {:>7.3} {:>6.3} {:>6.3} {:>7.3}",
            name, m.en, m.sd, m.sf, m.vif, m.ag, m.scd
        );
    }
    Ok(())
}
