//! The cross-scene penalty on a toy batch: a prediction that copies its own
//! label scores well on the matched term and badly on mismatched pairs, so
//! the penalty rewards predictions that are specific to their scene.
//!
//! `cargo run --release --example penalty_loss`

use focalsal::gradcore::{Graph, Tensor};
use focalsal::noiseloss::{penalty_loss, PeerPairs, PenaltyConfig};
use focalsal::synthdata::seeded_rng;
use rand::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (b, px) = (6, 64);
    let mut rng = seeded_rng(2);
    let labels: Vec<f64> = (0..b * px).map(|_| rng.random_bool(0.3) as u8 as f64).collect();
    let y = Tensor::from_vec(&[b, 1, 8, 8], labels.clone())?;
    let cfg = PenaltyConfig { alpha: 0.2, m_l: 4 };
    let pairs = PeerPairs::sample(b, &cfg, &mut rng)?;
    println!("pairs for anchor 0: {:?}", pairs.pairs[0]);

    let candidates = [
        ("copies its label", labels.iter().map(|y| 0.1 + 0.8 * y).collect::<Vec<_>>()),
        ("constant prior", vec![0.3; b * px]),
        ("uniform noise", (0..b * px).map(|_| rng.random_range(0.05..0.95)).collect()),
    ];
    for (name, s) in candidates {
        let mut g = Graph::<f64>::new();
        let sv = g.constant(Tensor::from_vec(&[b, 1, 8, 8], s)?);
        let parts = penalty_loss(&mut g, sv, &y, &pairs, cfg.alpha)?;
        let per = (b * px) as f64;
        println!(
            "{name:<17} matched {:.4}  mismatched {:.4}  total {:.4}",
            g.value(parts.matched).item() / per,
            g.value(parts.mismatched.unwrap()).item() / per,
            g.value(parts.total).item() / per
        );
    }
    Ok(())
}
