use super::*;
use crate::synthdata::{generate_corpus, FocalSpec, GenConfig, SceneSpec};

fn corpus(count: usize, seed: u64) -> Vec<FocalStackSample> {
    generate_corpus(
        &GenConfig {
            count,
            scene: SceneSpec {
                width: 16,
                height: 16,
                ..SceneSpec::default()
            },
            focal: FocalSpec { k: 2, blur_scale: 3.0 },
            ..GenConfig::default()
        },
        seed,
    )
    .unwrap()
}

fn config(variant: Variant, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        variant,
        seed: 3,
        net: NetConfig {
            k: 2,
            height: 16,
            width: 16,
            widths: vec![2, 2],
            convs_per_stage: 1,
            head_width: 2,
            ..NetConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn views(s: &[FocalStackSample]) -> Vec<TrainingView<'_>> {
    s.iter().map(|s| s.training_view()).collect()
}

#[test]
fn variants_parse_and_switch_components() {
    assert_eq!("full".parse::<Variant>().unwrap(), Variant::Full);
    assert!("bogus".parse::<Variant>().is_err());
    assert!(!Variant::Baseline.mffo() && !Variant::Baseline.pfm() && !Variant::Baseline.ploss());
    assert!(Variant::Full.mffo() && Variant::Full.pfm() && Variant::Full.ploss());
    assert_eq!(config(Variant::Pfm, 1).effective_alpha(), 0.0);
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { batch_size: 3, ..TrainConfig::default() }.validate().is_err());
    let c = TrainConfig::default();
    assert_eq!(c.hash(), c.clone().hash());
    assert_ne!(c.hash(), TrainConfig { seed: 1, ..c }.hash());
}

#[test]
fn short_tails_join_the_previous_batch() {
    let order: Vec<usize> = (0..10).collect();
    let b = batches(&order, 4, 4);
    assert_eq!(b.len(), 2);
    assert_eq!(b[1], &[4, 5, 6, 7, 8, 9]);
    assert_eq!(batches(&order, 5, 4).len(), 2);
}

#[test]
fn identical_seeds_give_identical_records() {
    let data = corpus(8, 1);
    let eval = corpus(4, 2);
    let cfg = config(Variant::Full, 2);
    let a = train(&views(&data), &eval, &cfg, &TrainOptions::default()).unwrap();
    let b = train(&views(&data), &eval, &cfg, &TrainOptions::default()).unwrap();
    assert_eq!(a.record, b.record);
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(a.record.epochs.len(), 2);
    assert!(a.record.final_f().is_some());
    let mut csv_a = Vec::new();
    a.record.write_csv(&mut csv_a).unwrap();
    let mut csv_b = Vec::new();
    b.record.write_csv(&mut csv_b).unwrap();
    assert_eq!(csv_a, csv_b);
}

#[test]
fn zero_learning_rate_keeps_the_initial_parameters() {
    let data = corpus(8, 1);
    let cfg = TrainConfig { lr: 0.0, ..config(Variant::Full, 1) };
    let init = initial_checkpoint(&views(&data), &cfg).unwrap();
    let out = train(&views(&data), &[], &cfg, &TrainOptions::default()).unwrap();
    assert_eq!(out.checkpoint.params.iter().map(|(n, p)| (n, &p.value)).collect::<Vec<_>>(),
        init.params.iter().map(|(n, p)| (n, &p.value)).collect::<Vec<_>>());
}

#[test]
fn baseline_tracks_no_forgetting_and_logs_plain_ce() {
    let data = corpus(8, 1);
    let out = train(&views(&data), &[], &config(Variant::Baseline, 2), &TrainOptions::default()).unwrap();
    assert!(out.checkpoint.forgetting.is_none());
    assert!(!out.record.forgetting_enabled);
    for e in &out.record.epochs {
        assert_eq!(e.loss, e.ce);
        assert_eq!(e.penalty, 0.0);
        assert_eq!(e.events_total, 0);
    }
}

#[test]
fn forgetting_state_covers_the_training_ids_and_grows_monotonically() {
    let data = corpus(8, 1);
    let cfg = config(Variant::Pfm, 3);
    let out = train(&views(&data), &[], &cfg, &TrainOptions::default()).unwrap();
    let st = out.checkpoint.forgetting.as_ref().unwrap();
    assert_eq!(st.len(), 8);
    assert!(st.iter().all(|(_, s)| s.epoch == Some(2)));
    let totals: Vec<u64> = out.record.epochs.iter().map(|e| e.events_total).collect();
    assert!(totals.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(out.record.epochs[0].events, 0);
}

#[test]
fn checkpoints_round_trip_and_resume_exactly() {
    let data = corpus(8, 1);
    let eval = corpus(4, 2);
    let cfg = config(Variant::Full, 4);
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        checkpoint_every: 2,
        stop_after: None,
    };
    let full = train(&views(&data), &eval, &cfg, &opts).unwrap();
    let mid = Checkpoint::read(&dir.path().join("epoch_002")).unwrap();
    assert_eq!(mid.meta.epoch, 2);
    let again = dir.path().join("copy");
    mid.write(&again).unwrap();
    for f in ["meta.json", "params.bin", "adam.bin", "forgetting.bin"] {
        assert_eq!(
            fs_read(&dir.path().join("epoch_002").join(f)),
            fs_read(&again.join(f)),
            "{f}"
        );
    }
    let resumed = resume(&views(&data), &eval, &cfg, mid, &TrainOptions::default()).unwrap();
    assert_eq!(resumed.record, full.record);
    assert_eq!(resumed.checkpoint, full.checkpoint);
    let fin = Checkpoint::read(&dir.path().join("final")).unwrap();
    assert_eq!(fin, full.checkpoint);
}

fn fs_read(p: &std::path::Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn resume_refuses_a_different_config() {
    let data = corpus(8, 1);
    let cfg = config(Variant::Full, 2);
    let ck = initial_checkpoint(&views(&data), &cfg).unwrap();
    let other = TrainConfig { lr: 0.5, ..cfg };
    assert!(matches!(
        resume(&views(&data), &[], &other, ck, &TrainOptions::default()),
        Err(TrainError::ConfigMismatch { .. })
    ));
}

#[test]
fn corrupted_checkpoints_fail_to_load() {
    let data = corpus(8, 1);
    let cfg = config(Variant::Full, 1);
    let dir = tempfile::tempdir().unwrap();
    let ck = initial_checkpoint(&views(&data), &cfg).unwrap();
    ck.write(dir.path()).unwrap();
    let p = dir.path().join("params.bin");
    let bytes = fs_read(&p);
    std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(Checkpoint::read(dir.path()), Err(TrainError::Checkpoint { .. })));
    std::fs::write(dir.path().join("meta.json"), b"{not json").unwrap();
    assert!(matches!(Checkpoint::read(dir.path()), Err(TrainError::Checkpoint { .. })));
}

#[test]
fn non_finite_loss_aborts() {
    let data = corpus(8, 1);
    let cfg = config(Variant::Baseline, 1);
    let mut ck = initial_checkpoint(&views(&data), &cfg).unwrap();
    let w = ck.params.value("fuse.b").unwrap().map(|_| f32::NAN);
    ck.params.set_value("fuse.b", w).unwrap();
    assert!(matches!(
        resume(&views(&data), &[], &cfg, ck, &TrainOptions::default()),
        Err(TrainError::Diverged { epoch: 0, checkpoint: None })
    ));
}

#[test]
fn mismatched_data_is_refused_before_training() {
    let data = corpus(8, 1);
    let cfg = TrainConfig {
        net: NetConfig { k: 3, ..config(Variant::Full, 1).net },
        ..config(Variant::Full, 1)
    };
    assert!(matches!(train(&views(&data), &[], &cfg, &TrainOptions::default()), Err(TrainError::Data(_))));
    assert!(matches!(
        train(&views(&data[..3]), &[], &config(Variant::Full, 1), &TrainOptions::default()),
        Err(TrainError::Data(_))
    ));
}

#[test]
fn augmentation_only_runs_without_forgetting() {
    let aug = AugmentConfig { flip: true, crop: true, rotate: true };
    let full = TrainConfig { augment: aug, ..config(Variant::Full, 1) };
    assert!(!full.effective_augment().any());
    let data = corpus(8, 1);
    let base = TrainConfig { augment: aug, ..config(Variant::Baseline, 1) };
    let plain = config(Variant::Baseline, 1);
    let a = train(&views(&data), &[], &base, &TrainOptions::default()).unwrap();
    let b = train(&views(&data), &[], &plain, &TrainOptions::default()).unwrap();
    assert_ne!(a.record.epochs[0].loss, b.record.epochs[0].loss);
}

#[test]
fn evaluation_reproduces_the_final_validation_metrics() {
    let data = corpus(8, 1);
    let eval = corpus(5, 2);
    let cfg = config(Variant::Full, 2);
    let out = train(&views(&data), &eval, &cfg, &TrainOptions::default()).unwrap();
    let m = evaluate(&out.checkpoint.params, &cfg.effective_net(), &eval, cfg.batch_size).unwrap();
    assert_eq!(Some(m.mean_f), out.record.final_f());
    assert_eq!(Some(m.mean_mae), out.record.final_mae());
}
