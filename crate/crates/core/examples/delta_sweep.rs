//! Sweep the forgetting margin over the standard grid on a small corpus and
//! print the sweep table as CSV.
//!
//! `cargo run --release --example delta_sweep -- [epochs] [seeds]`

use focalsal::fusion::NetConfig;
use focalsal::synthdata::{generate_corpus, GenConfig, SceneSpec};
use focalsal::trainer::{delta_sweep, desk_net, write_sweep_csv, TrainConfig, DELTA_GRID};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<u64>().ok());
    let epochs = args.next().flatten().unwrap_or(25) as usize;
    let seeds: Vec<u64> = (0..args.next().flatten().unwrap_or(1)).collect();
    let gen = GenConfig {
        count: 190,
        scene: SceneSpec {
            width: 32,
            height: 32,
            ..SceneSpec::default()
        },
        ..GenConfig::default()
    };
    let corpus = generate_corpus(&gen, 2)?;
    let (train_set, eval) = corpus.split_at(160);
    let views: Vec<_> = train_set.iter().map(|s| s.training_view()).collect();
    let base = TrainConfig {
        epochs,
        eval_every: 0,
        net: NetConfig {
            height: 32,
            width: 32,
            ..desk_net()
        },
        ..TrainConfig::default()
    };
    let rows = delta_sweep(&views, eval, &base, &DELTA_GRID, &seeds, |d, s, r| {
        eprintln!("delta {d} seed {s}: F {:.4}", r.final_f().unwrap_or(f64::NAN));
        Ok(())
    })?;
    write_sweep_csv(&rows, std::io::stdout())?;
    Ok(())
}
