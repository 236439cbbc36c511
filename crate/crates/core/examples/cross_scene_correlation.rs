//! Per-scene label noise against scene statistics, and the 2x2 correlation
//! table between a prediction and the noisy labels it was trained on.
//!
//! `cargo run --release --example cross_scene_correlation`

use focalsal::evalkit::cross_scene_correlation;
use focalsal::noiseloss::estimate_delta;
use focalsal::synthdata::{generate_corpus, GenConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_corpus(&GenConfig { count: 30, ..GenConfig::default() }, 4)?;
    let report = cross_scene_correlation(&corpus)?;
    report.write_csv(std::io::stdout())?;
    println!("{} scenes omitted", report.omitted);

    // a clean-mask "prediction" against the noisy labels
    let preds: Vec<Vec<f64>> = corpus.iter().map(|s| s.clean_mask().to_f64()).collect();
    let labels: Vec<Vec<f64>> = corpus.iter().map(|s| s.noisy.to_f64()).collect();
    let stats = estimate_delta(
        &preds.iter().map(Vec::as_slice).collect::<Vec<_>>(),
        &labels.iter().map(Vec::as_slice).collect::<Vec<_>>(),
        0.5,
    )?;
    println!("joint {:?}\ndelta {:?}\nomega {:?}", stats.joint, stats.delta, stats.omega);
    Ok(())
}
