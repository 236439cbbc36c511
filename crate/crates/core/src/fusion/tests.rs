use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcore::{grad_check_params, GradCheckConfig};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn tiny(k: usize, size: usize, widths: Vec<usize>) -> NetConfig {
    NetConfig {
        k,
        height: size,
        width: size,
        widths,
        head_width: 3,
        ..NetConfig::default()
    }
}

fn inputs(cfg: &NetConfig, batch: usize, seed: u64) -> BatchInputs<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = (cfg.in_channels, cfg.height, cfg.width);
    BatchInputs {
        all_focus: random(&[batch, c, h, w], &mut rng).map(|v| v.abs()),
        slices: random(&[batch * cfg.k, c, h, w], &mut rng).map(|v| v.abs()),
        batch,
        k: cfg.k,
    }
}

#[test]
fn parameter_names_are_unique_and_initialized_within_bounds() {
    let cfg = NetConfig::default();
    let params: ParameterSet<f64> = cfg.init_params(3).unwrap();
    assert_eq!(params.len(), cfg.parameter_shapes().len());
    let w = params.value("enc.r.l1.c0.w").unwrap();
    let bound = 1.0 / ((16 * 9) as f64).sqrt();
    assert!(w.data().iter().all(|v| v.abs() <= bound));
    assert_eq!(cfg.init_params::<f64>(3).unwrap().value("fuse.w").unwrap(), params.value("fuse.w").unwrap());
}

#[test]
fn encoder_levels_halve_resolution() {
    let cfg = tiny(2, 32, vec![2, 3, 2, 2]);
    let params = cfg.init_params::<f64>(0).unwrap();
    let x = inputs(&cfg, 1, 0);
    let mut g = Graph::new();
    let af = g.constant(x.all_focus.clone());
    let sl = g.constant(x.slices.clone());
    let feats = encode(&mut g, &params, &cfg, af, sl).unwrap();
    for l in 0..4 {
        assert_eq!(g.value(feats.r[l]).shape(), &[1, cfg.widths[l], 32 >> (l + 1), 32 >> (l + 1)]);
        assert_eq!(g.value(feats.f[l]).shape()[0], 2);
    }
}

#[test]
fn indivisible_input_is_a_shape_error() {
    let cfg = tiny(2, 24, vec![2, 2, 2, 2]);
    assert!(cfg.validate().is_err());
    let ok = tiny(2, 32, vec![2, 2, 2, 2]);
    let params = ok.init_params::<f64>(0).unwrap();
    let mut g = Graph::new();
    let af = g.constant(Tensor::zeros(&[1, 1, 24, 24]));
    let sl = g.constant(Tensor::zeros(&[2, 1, 24, 24]));
    assert!(encode(&mut g, &params, &ok, af, sl).is_err());
}

#[test]
fn identical_slices_give_identical_features() {
    let cfg = tiny(3, 16, vec![2, 3]);
    let params = cfg.init_params::<f64>(1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let one = random(&[1, 1, 16, 16], &mut rng);
    let stacked = Tensor::stack_rows(&[&one, &one, &one]).unwrap();
    let mut g = Graph::new();
    let af = g.constant(one.clone());
    let sl = g.constant(stacked);
    let feats = encode(&mut g, &params, &cfg, af, sl).unwrap();
    for &f in &feats.f {
        let v = g.value(f);
        let a = v.batch_rows(0, 1);
        assert_eq!(a, v.batch_rows(1, 1));
        assert_eq!(a, v.batch_rows(2, 1));
    }
}

#[test]
fn zero_input_and_biases_give_zero_features() {
    let cfg = tiny(2, 16, vec![2, 2]);
    let mut params = cfg.init_params::<f64>(1).unwrap();
    for (name, p) in params.iter_mut() {
        if name.ends_with(".b") {
            p.value = Tensor::zeros(p.value.shape());
        }
    }
    let mut g = Graph::new();
    let af = g.constant(Tensor::zeros(&[1, 1, 16, 16]));
    let sl = g.constant(Tensor::zeros(&[2, 1, 16, 16]));
    let feats = encode(&mut g, &params, &cfg, af, sl).unwrap();
    for &v in feats.r.iter().chain(&feats.f) {
        assert!(g.value(v).data().iter().all(|&x| x == 0.0));
    }
}

fn attention_params(c: usize, seed: u64) -> ParameterSet<f64> {
    let cfg = tiny(2, 16, vec![c]);
    cfg.init_params(seed).unwrap()
}

#[test]
fn equal_logits_give_uniform_attention() {
    let c = 3;
    let k = 4;
    let mut params = attention_params(c, 0);
    for n in ["att.l0.r.w", "att.l0.s.w", "att.l0.g.w"] {
        params.set_value(n, Tensor::zeros(&[1, c, 1, 1])).unwrap();
    }
    params.set_value("att.l0.r.b", Tensor::scalar(0.7)).unwrap();
    params.set_value("att.l0.s.b", Tensor::scalar(0.7)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::new();
    let r = g.constant(random(&[2, c, 4, 4], &mut rng));
    let f = g.constant(random(&[2 * k, c, 4, 4], &mut rng));
    let (att, _) = channel_attention(&mut g, &params, "att.l0", r, f, k).unwrap();
    for &a in g.value(att).data() {
        assert!((a - 0.2).abs() < 1e-15);
    }
}

#[test]
fn zero_group_weight_zeroes_the_slice() {
    let c = 2;
    let k = 3;
    let mut params = attention_params(c, 0);
    params.set_value("att.l0.s.w", Tensor::full(&[1, c, 1, 1], -50.0)).unwrap();
    params.set_value("att.l0.g.w", Tensor::zeros(&[1, c, 1, 1])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fv = random(&[k, c, 4, 4], &mut rng).map(|v| v * 0.1);
    // Slice 1 carries large features, so its logit underflows the softmax.
    for v in &mut fv.data_mut()[c * 16..2 * c * 16] {
        *v = 100.0;
    }
    let mut g = Graph::new();
    let r = g.constant(random(&[1, c, 4, 4], &mut rng));
    let f = g.constant(fv);
    let (att, weighted) = channel_attention(&mut g, &params, "att.l0", r, f, k).unwrap();
    assert_eq!(g.value(att).data()[2], 0.0);
    let wv = g.value(weighted);
    assert!(wv.batch_rows(1, 1).data().iter().all(|&v| v == 0.0));
    assert!(wv.batch_rows(0, 1).data().iter().any(|&v| v != 0.0));
}

#[test]
fn attention_is_a_distribution_and_permutation_equivariant() {
    let c = 3;
    let k = 4;
    for seed in 0..10 {
        let params = attention_params(c, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        let rv = random(&[1, c, 4, 4], &mut rng);
        let fv = random(&[k, c, 4, 4], &mut rng);
        let perm = [2usize, 0, 3, 1];
        let parts: Vec<Tensor<f64>> = perm.iter().map(|&p| fv.batch_rows(p, 1)).collect();
        let fp = Tensor::stack_rows(&parts.iter().collect::<Vec<_>>()).unwrap();
        let run = |f: Tensor<f64>| {
            let mut g = Graph::new();
            let r = g.constant(rv.clone());
            let f = g.constant(f);
            let (att, _) = channel_attention(&mut g, &params, "att.l0", r, f, k).unwrap();
            g.value(att).clone()
        };
        let a = run(fv.clone());
        let b = run(fp);
        assert!((a.sum() - 1.0).abs() < 1e-12 && a.data().iter().all(|&v| v >= 0.0));
        assert!((a.data()[0] - b.data()[0]).abs() < 1e-15);
        for (j, &p) in perm.iter().enumerate() {
            assert!((b.data()[1 + j] - a.data()[1 + p]).abs() < 1e-15);
        }
    }
}

#[test]
fn zero_gate_weights_keep_hidden_state_zero() {
    let c = 2;
    let mut params = ParameterSet::<f64>::new();
    params.insert("cell.w", Tensor::zeros(&[4 * c, 2 * c, 3, 3])).unwrap();
    params.insert("cell.b", Tensor::zeros(&[4 * c])).unwrap();
    let cell = ConvLstm::new("cell", c, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = Graph::new();
    let x = g.constant(random(&[6, c, 4, 4], &mut rng));
    let h = refine_slices(&mut g, &params, &cell, x, 2, 3).unwrap();
    assert!(g.value(h).data().iter().all(|&v| v == 0.0));
}

#[test]
fn single_step_depends_only_on_its_slice() {
    let c = 2;
    let cfg = tiny(1, 16, vec![c]);
    let params = cfg.init_params::<f64>(5).unwrap();
    let cell = ConvLstm::new("ref.l0", c, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[1, c, 4, 4], &mut rng);
    let run = |x: &Tensor<f64>| {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let h = refine_slices(&mut g, &params, &cell, v, 1, 1).unwrap();
        g.value(h).clone()
    };
    assert_eq!(run(&x), run(&x));
    assert_ne!(run(&x), run(&x.map(|v| v + 0.5)));
}

#[test]
fn refinement_gradient_reaches_the_first_slice() {
    let c = 2;
    let k = 3;
    let cfg = tiny(k, 16, vec![c]);
    let params = cfg.init_params::<f64>(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(&[k, c, 8, 8], &mut rng);
    let report = crate::gradcore::grad_check(
        |g, v| {
            let cell = ConvLstm::new("ref.l0", c, 3);
            let h = refine_slices(g, &params, &cell, v[0], 1, k)?;
            g.sum(h)
        },
        &[x],
        GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.inputs);
    let mut g = Graph::new();
    let xv = g.constant(random(&[k, c, 8, 8], &mut rng));
    let cell = ConvLstm::new("ref.l0", c, 3);
    let h = refine_slices(&mut g, &params, &cell, xv, 1, k).unwrap();
    let out = g.sum(h).unwrap();
    let grads = g.backward(out).unwrap();
    let dx = grads.get(xv).unwrap();
    assert!(dx.batch_rows(0, 1).data().iter().any(|&v| v.abs() > 1e-8));
}

#[test]
fn uniform_pixel_attention_scales_by_one_plus_inverse_area() {
    let c = 2;
    let mut params = attention_params(c, 0);
    params.set_value("pix.l0.w", Tensor::zeros(&[1, c, 3, 3])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rv = random(&[1, c, 4, 5], &mut rng);
    let mut g = Graph::new();
    let r = g.constant(rv.clone());
    let fr = g.constant(random(&[1, c, 4, 5], &mut rng));
    let out = pixel_guidance(&mut g, &params, "pix.l0", r, fr, PixelAttention::Softmax).unwrap();
    for (a, b) in g.value(out).data().iter().zip(rv.data()) {
        assert!((a - b * (1.0 + 1.0 / 20.0)).abs() < 1e-14);
    }
    let zero = g.constant(Tensor::zeros(&[1, c, 4, 5]));
    let out = pixel_guidance(&mut g, &params, "pix.l0", zero, fr, PixelAttention::Sigmoid).unwrap();
    assert!(g.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn heads_produce_probability_maps_and_share_logic() {
    let cfg = tiny(2, 16, vec![2, 3]);
    let mut params = cfg.init_params::<f64>(8).unwrap();
    let names: Vec<String> = params.names().filter(|n| n.starts_with("head.f.")).map(String::from).collect();
    for n in names {
        let v = params.value(&n).unwrap().clone();
        params.set_value(&n.replacen("head.f.", "head.r.", 1), v).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let a = g.constant(random(&[2, 2, 8, 8], &mut rng));
    let b = g.constant(random(&[2, 3, 4, 4], &mut rng));
    let (s_f, s_r) = heads(&mut g, &params, &cfg, &[a, b], &[a, b]).unwrap();
    assert_eq!(g.value(s_f).shape(), &[2, 1, 16, 16]);
    assert!(g.value(s_f).data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(g.value(s_f), g.value(s_r));
}

#[test]
fn forward_rejects_mismatched_inputs() {
    let cfg = tiny(2, 16, vec![2, 2]);
    let params = cfg.init_params::<f64>(0).unwrap();
    let wrong = tiny(3, 16, vec![2, 2]);
    let x = inputs(&wrong, 1, 0);
    let mut g = Graph::new();
    assert!(forward(&mut g, &params, &cfg, &x).is_err());
}

fn two_stream_loss(g: &mut Graph<f64>, params: &ParameterSet<f64>, cfg: &NetConfig, x: &BatchInputs<f64>) -> Result<Var> {
    let out = forward(g, params, cfg, x)?;
    let target = Tensor::from_vec(
        &[x.batch, 1, cfg.height, cfg.width],
        (0..x.batch * cfg.height * cfg.width).map(|i| ((i / 5) % 2) as f64).collect(),
    )?;
    let a = g.bce(out.s_f, target.clone(), 1e-7)?;
    let b = g.bce(out.s_r, target, 1e-7)?;
    g.add(a, b)
}

/// Weights scaled up from their initial range so no pathway is damped
/// below finite-difference resolution.
fn well_conditioned(cfg: &NetConfig, seed: u64) -> ParameterSet<f64> {
    let mut params = cfg.init_params::<f64>(seed).unwrap();
    for (n, p) in params.iter_mut() {
        if n.ends_with(".w") {
            p.value = p.value.map(|v| 3.0 * v);
        }
    }
    params
}

#[test]
fn two_level_network_passes_gradient_check() {
    for mode in [PixelAttention::Softmax, PixelAttention::Sigmoid] {
        let cfg = NetConfig {
            pixel_attention: mode,
            head_width: 4,
            ..tiny(3, 16, vec![4, 4])
        };
        let params = well_conditioned(&cfg, 11);
        let x = inputs(&cfg, 1, 4);
        let report = grad_check_params(|g, p| two_stream_loss(g, p, &cfg, &x), &params, GradCheckConfig::normwise()).unwrap();
        assert!(report.passed(), "{mode:?}: {:.3e} {:?}", report.max_rel_error(), report.inputs.iter().filter(|i| i.max_rel_error > 1e-4).collect::<Vec<_>>());
    }
}

#[test]
fn loss_gradient_reaches_the_coarsest_encoder_level() {
    let cfg = tiny(2, 32, vec![4, 4, 4, 4]);
    let params = cfg.init_params::<f64>(6).unwrap();
    let x = inputs(&cfg, 2, 1);
    let mut g = Graph::new();
    let loss = two_stream_loss(&mut g, &params, &cfg, &x).unwrap();
    let grads = g.backward(loss).unwrap();
    for name in ["enc.r.l3.c0.w", "enc.f.l3.c0.w"] {
        let v = g.bindings().iter().find(|(_, n)| n == name).unwrap().0;
        assert!(grads.get(v).unwrap().data().iter().any(|g| g.abs() > 0.0), "{name}");
    }
}

#[test]
fn ablated_network_has_no_fusion_parameters() {
    let cfg = NetConfig {
        mffo: false,
        ..tiny(2, 16, vec![2, 2])
    };
    let params = cfg.init_params::<f64>(0).unwrap();
    assert!(params.names().all(|n| !n.starts_with("att.") && !n.starts_with("ref.") && !n.starts_with("pix.")));
    let x = inputs(&cfg, 1, 0);
    let mut g = Graph::new();
    let out = forward(&mut g, &params, &cfg, &x).unwrap();
    assert_eq!(g.value(out.s_r).shape(), &[1, 1, 16, 16]);
}
