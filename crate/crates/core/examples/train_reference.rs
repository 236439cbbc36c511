//! Train the baseline and full variants on the desk-scale reference corpus,
//! compare them with the noisy labels they learned from, and summarise the
//! forgetting statistics of the full run.
//!
//! `cargo run --release --example train_reference -- [seeds] [epochs] [train] [eval]`

use std::time::Instant;

use focalsal::evalkit::{forgetting_analysis, label_quality, NoiseTruth};
use focalsal::synthdata::{generate_corpus, GenConfig};
use focalsal::trainer::{train, TrainConfig, TrainOptions, Variant};

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let (seeds, epochs, n_train, n_eval) = (arg(1, 3), arg(2, 20), arg(3, 200), arg(4, 50));
    for seed in 0..seeds as u64 {
        let gen = GenConfig {
            count: n_train + n_eval,
            ..GenConfig::default()
        };
        let corpus = generate_corpus(&gen, seed)?;
        let (train_set, eval) = corpus.split_at(n_train);
        let views: Vec<_> = train_set.iter().map(|s| s.training_view()).collect();
        let labels = label_quality(eval)?;
        println!("seed {seed}: noisy labels F {:.4} MAE {:.4}", labels.mean_f, labels.mean_mae);
        for variant in [Variant::Baseline, Variant::Full] {
            let cfg = TrainConfig {
                epochs,
                seed,
                variant,
                ..TrainConfig::default()
            };
            let start = Instant::now();
            let out = train(&views, eval, &cfg, &TrainOptions::default())?;
            let r = &out.record;
            let losses: Vec<String> = r.epochs.iter().map(|e| format!("{:.3}", e.loss)).collect();
            println!(
                "  {:<8} F {:.4} MAE {:.4} ({:.1}s) loss [{}]",
                variant.name(),
                r.final_f().unwrap_or(f64::NAN),
                r.final_mae().unwrap_or(f64::NAN),
                start.elapsed().as_secs_f64(),
                losses.join(" ")
            );
            if let Some(state) = &out.checkpoint.forgetting {
                let truth: Vec<_> = train_set.iter().map(NoiseTruth::from_sample).collect();
                let a = forgetting_analysis(state, &truth)?;
                println!(
                    "    >3 events: noisy {:.4} clean {:.4} (x{:.2}); first learn: noisy {:.2} clean {:.2}",
                    a.noisy.fraction.unwrap_or(f64::NAN),
                    a.clean.fraction.unwrap_or(f64::NAN),
                    a.separation().unwrap_or(f64::NAN),
                    a.noisy.mean_first_learn.unwrap_or(f64::NAN),
                    a.clean.mean_first_learn.unwrap_or(f64::NAN),
                );
            }
        }
    }
    Ok(())
}
