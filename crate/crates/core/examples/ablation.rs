//! Train every variant on the same small corpus and seed and tabulate the
//! validation metrics.
//!
//! `cargo run --release --example ablation -- [epochs]`

use focalsal::evalkit::label_quality;
use focalsal::fusion::NetConfig;
use focalsal::synthdata::{generate_corpus, GenConfig, SceneSpec};
use focalsal::trainer::{ablation, desk_net, TrainConfig, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(25);
    let gen = GenConfig {
        count: 190,
        scene: SceneSpec {
            width: 32,
            height: 32,
            ..SceneSpec::default()
        },
        ..GenConfig::default()
    };
    let corpus = generate_corpus(&gen, 1)?;
    let (train_set, eval) = corpus.split_at(160);
    let views: Vec<_> = train_set.iter().map(|s| s.training_view()).collect();
    let cfg = TrainConfig {
        epochs,
        net: NetConfig {
            height: 32,
            width: 32,
            ..desk_net()
        },
        ..TrainConfig::default()
    };
    let q = label_quality(eval)?;
    println!("{:<9} F {:.4} MAE {:.4}", "labels", q.mean_f, q.mean_mae);
    for v in [Variant::Baseline, Variant::Mffo, Variant::Pfm, Variant::Ploss, Variant::Full] {
        let r = ablation(&views, eval, &cfg, v)?;
        println!("{:<9} F {:.4} MAE {:.4}", v.name(), r.final_f().unwrap(), r.final_mae().unwrap());
    }
    Ok(())
}
