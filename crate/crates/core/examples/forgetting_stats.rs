//! Track forgetting events through a short training run and compare how
//! often corrupted and clean label pixels are forgotten.
//!
//! `cargo run --release --example forgetting_stats -- [epochs]`

use focalsal::evalkit::{forgetting_analysis, NoiseTruth};
use focalsal::fusion::NetConfig;
use focalsal::synthdata::{generate_corpus, GenConfig, SceneSpec};
use focalsal::trainer::{desk_net, train, TrainConfig, TrainOptions, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(25);
    let gen = GenConfig {
        count: 160,
        scene: SceneSpec {
            width: 32,
            height: 32,
            ..SceneSpec::default()
        },
        ..GenConfig::default()
    };
    let corpus = generate_corpus(&gen, 5)?;
    let views: Vec<_> = corpus.iter().map(|s| s.training_view()).collect();
    let cfg = TrainConfig {
        epochs,
        variant: Variant::Pfm,
        net: NetConfig {
            height: 32,
            width: 32,
            ..desk_net()
        },
        ..TrainConfig::default()
    };
    let out = train(&views, &[], &cfg, &TrainOptions::default())?;
    for e in &out.record.epochs {
        println!("epoch {:>2}: loss {:.4}, {} new events", e.epoch, e.loss, e.events);
    }

    let truth: Vec<_> = corpus.iter().map(NoiseTruth::from_sample).collect();
    let report = forgetting_analysis(out.checkpoint.forgetting.as_ref().unwrap(), &truth)?;
    for (name, p) in [("corrupted", &report.noisy), ("clean", &report.clean)] {
        println!(
            "{name:<9} pixels {:>7}: >3 events {:.4}, mean events {:.3}, mean first learn {:.2}, never learned {}",
            p.pixels,
            p.fraction.unwrap_or(f64::NAN),
            p.mean_events.unwrap_or(f64::NAN),
            p.mean_first_learn.unwrap_or(f64::NAN),
            p.never_learned
        );
    }
    report.write_events_csv(std::io::stdout())?;
    Ok(())
}
