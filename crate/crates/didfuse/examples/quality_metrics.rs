//! Compute the six reference-free and reference-based fusion quality
//! metrics on synthetic images, including a few analytic anchor cases.
//!
//! ```bash
//! cargo run --example quality_metrics
//! ```

use didfuse::metrics;
use didfuse::synth::synth_pair;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // analytic anchors
    let constant = vec![100.0; 64 * 64];
    println!("EN(constant)        = {:.6}  (expect 0)", metrics::entropy(&constant)?);
    let uniform: Vec<f64> = (0..256).map(|v| v as f64).collect();
    println!("EN(uniform 256)     = {:.6}  (expect 8)", metrics::entropy(&uniform)?);
    let checker: Vec<f64> =
        (0..64 * 64).map(|i| if (i / 64 + i % 64) % 2 == 0 { 0.0 } else { 255.0 }).collect();
    println!("SD(checkerboard)    = {:.6}  (expect 127.5)", metrics::std_dev(&checker)?);

    // full report on a synthetic pair, using the average of the sources as a
    // stand-in fused image
    let (ir, vis) = synth_pair("demo", 64, 64, 5)?;
    let avg: Vec<f64> =
        ir.pixels().iter().zip(vis.pixels()).map(|(a, b)| 0.5 * (a + b)).collect();
    let fused = didfuse::io::ImageRecord::new(
        "avg".to_string(),
        didfuse::io::SourceKind::Fused,
        64,
        64,
        avg,
    )?;
    let m = metrics::evaluate_all(&fused, &ir, &vis)?;
    println!(
        "averaged sources: en {:.3}, sd {:.3}, sf {:.3}, vif {:.3}, ag {:.3}, scd {:.3}",
        m.en, m.sd, m.sf, m.vif, m.ag, m.scd
    );
    Ok(())
}
