//! Generate a small corpus, write it to disk and report how far the noisy
//! labels are from the clean masks.
//!
//! `cargo run --release --example generate_corpus -- [out_dir] [count] [seed]`

use focalsal::evalkit::{label_quality, NoiseTruth};
use focalsal::synthdata::{generate_corpus, io, GenConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "target/example_corpus".into());
    let count = args.next().and_then(|s| s.parse().ok()).unwrap_or(12);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let cfg = GenConfig { count, ..GenConfig::default() };
    let corpus = generate_corpus(&cfg, seed)?;
    io::write_corpus(out.as_ref(), &corpus)?;

    for s in &corpus {
        let truth = NoiseTruth::from_sample(s);
        println!(
            "{}: {}x{}, {} slices, salient area {:.3}, corrupted pixels {:.3}",
            s.id,
            s.resolution().1,
            s.resolution().0,
            s.k(),
            s.clean_mask().area_fraction(),
            truth.noise.area_fraction()
        );
    }
    let q = label_quality(&corpus)?;
    println!("noisy labels vs clean masks: F {:.4} MAE {:.4}", q.mean_f, q.mean_mae);

    // the files read back to the same samples
    let back = io::read_corpus(out.as_ref())?;
    assert_eq!(back.len(), corpus.len());
    println!("wrote {} samples to {out}", back.len());
    Ok(())
}
