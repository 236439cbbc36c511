//! Run one batch of generated scenes through the untrained network and show
//! the output shapes, the slice attention weights and the prediction range.
//!
//! `cargo run --release --example forward_pass`

use focalsal::fusion::{forward, BatchInputs, NetConfig};
use focalsal::gradcore::Graph;
use focalsal::synthdata::{generate_corpus, FocalSpec, GenConfig, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gen = GenConfig {
        count: 2,
        scene: SceneSpec {
            width: 32,
            height: 32,
            ..SceneSpec::default()
        },
        focal: FocalSpec { k: 3, blur_scale: 3.0 },
        ..GenConfig::default()
    };
    let corpus = generate_corpus(&gen, 3)?;
    let views: Vec<_> = corpus.iter().map(|s| s.training_view()).collect();
    let input = BatchInputs::<f32>::from_views(&views)?;

    let net = NetConfig {
        k: 3,
        height: 32,
        width: 32,
        widths: vec![4, 8, 8],
        ..NetConfig::default()
    };
    let params = net.init_params::<f32>(0)?;
    println!("{} parameter tensors, {} scalars", params.len(), params.iter().map(|(_, p)| p.value.len()).sum::<usize>());

    let mut g = Graph::new();
    let out = forward(&mut g, &params, &net, &input)?;
    for (name, v) in [("s_f", out.s_f), ("s_r", out.s_r)] {
        let t = g.value(v);
        let (lo, hi) = t.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        println!("{name}: shape {:?}, range [{lo:.4}, {hi:.4}]", t.shape());
    }
    println!("graph has {} nodes", g.len());
    Ok(())
}
