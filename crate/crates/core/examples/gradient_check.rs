//! Finite-difference check of the tape autodiff, first on a small composed
//! expression and then on the whole two-stream network.
//!
//! `cargo run --release --example gradient_check`

use focalsal::fusion::{forward, BatchInputs, NetConfig};
use focalsal::gradcore::{grad_check, grad_check_params, GradCheckConfig, Tensor};
use rand::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = focalsal::synthdata::seeded_rng(7);
    let mut random = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    };

    // sum(tanh(conv(x, w)) * sigmoid(x))
    let inputs = [random(&[1, 2, 6, 6])?, random(&[2, 2, 3, 3])?];
    let report = grad_check(
        |g, v| {
            let y = g.conv2d(v[0], v[1], None, 1, 1)?;
            let t = g.tanh(y)?;
            let s = g.sigmoid(v[0])?;
            let s = g.global_avg_pool(s)?;
            let p = g.mul(t, s)?;
            g.sum(p)
        },
        &inputs,
        GradCheckConfig::default(),
    )?;
    println!("expression: passed {} max rel err {:.2e}", report.passed(), report.max_rel_error());

    let net = NetConfig {
        k: 2,
        height: 16,
        width: 16,
        widths: vec![3, 3],
        head_width: 3,
        ..NetConfig::default()
    };
    // at raw init some pathways are damped below finite-difference
    // resolution; scaled weights keep every tensor measurable
    let mut params = net.init_params::<f64>(1)?;
    for (name, p) in params.iter_mut() {
        if name.ends_with(".w") {
            p.value = p.value.map(|v| 3.0 * v);
        }
    }
    let x = BatchInputs {
        all_focus: random(&[1, net.in_channels, 16, 16])?,
        slices: random(&[net.k, net.in_channels, 16, 16])?,
        batch: 1,
        k: net.k,
    };
    let target = Tensor::from_vec(&[1, 1, 16, 16], (0..256).map(|i| ((i / 16 + i % 16) % 2) as f64).collect())?;
    let report = grad_check_params(
        |g, p| {
            let out = forward(g, p, &net, &x)?;
            let a = g.bce(out.s_f, target.clone(), 1e-7)?;
            let b = g.bce(out.s_r, target.clone(), 1e-7)?;
            g.add(a, b)
        },
        &params,
        GradCheckConfig::normwise(),
    )?;
    println!("network ({} tensors): passed {} max rel err {:.2e}", report.inputs.len(), report.passed(), report.max_rel_error());
    if let Some(w) = report.worst() {
        println!("  worst tensor {}: normwise {:.2e}, largest single element {:.2e}", w.name, w.norm_rel_error, w.max_rel_error);
    }
    Ok(())
}
