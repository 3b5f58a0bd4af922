//! Build a pair manifest from two image directories, center-crop the pairs,
//! and write the manifest to a TSV file.
//!
//! ```bash
//! cargo run --example dataset_io
//! ```

use didfuse::io::{
    build_manifest, center_crop, load_grayscale, read_manifest_file, write_manifest_file,
    SourceKind, Split,
};
use didfuse::synth::synth_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("didfuse_example_io");
    let _ = std::fs::remove_dir_all(&dir);
    synth_dataset(&dir, 4, 48, 64, 17, Split::Train)?;

    let (manifest, warnings) = build_manifest(&dir.join("ir"), &dir.join("vis"), Split::Train)?;
    for w in &warnings {
        println!("warning: {w}");
    }
    println!("paired {} images:", manifest.len());
    for entry in &manifest.entries {
        let ir = load_grayscale(&entry.ir_path, SourceKind::Infrared)?;
        let cropped = center_crop(&ir, 32)?;
        println!(
            "  {}: {}x{} -> center crop {}x{}",
            entry.id,
            ir.height(),
            ir.width(),
            cropped.height(),
            cropped.width()
        );
    }

    let tsv = dir.join("pairs.tsv");
    write_manifest_file(&manifest, &tsv)?;
    let reread = read_manifest_file(&tsv, Split::Train)?;
    assert_eq!(reread, manifest);
    println!("manifest round-tripped through {}", tsv.display());
    Ok(())
}
