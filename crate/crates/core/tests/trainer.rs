use flame_gaze::data::{synth_generate, Eye, EyePolicy, SplitSpec};
use flame_gaze::geometry::GazeAngles;
use flame_gaze::model::{Checkpoint, ModelSpec, Variant};
use flame_gaze::nn::HasParams;
use flame_gaze::trainer::*;
use flame_gaze::FlameError;

fn tiny(variant: Variant, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::new(ModelSpec::tiny(variant, 30));
    cfg.epochs = epochs;
    cfg.seed = 3;
    cfg
}

#[test]
fn schedule_examples_and_exhaustive() {
    let cfg = tiny(Variant::Flame, 1);
    assert_eq!(lr_at_epoch(&cfg, 0), 1e-4);
    assert_eq!(lr_at_epoch(&cfg, 85), 1e-4);
    assert_eq!(lr_at_epoch(&cfg, 86), 5e-5);
    assert_eq!(lr_at_epoch(&cfg, 100), 5e-5);
    assert_eq!(lr_at_epoch(&cfg, 190), 1.25e-5);
    for e in 0..200 {
        let k = [85, 120, 175].iter().filter(|&&m| e > m).count();
        assert_eq!(
            lr_at_epoch(&cfg, e),
            1e-4 * 0.5f64.powi(k as i32),
            "epoch {e}"
        );
    }
}

#[test]
fn config_validation() {
    let mut cfg = tiny(Variant::Flame, 1);
    assert!(cfg.validate().is_ok());
    cfg.lr_milestones = vec![10, 10];
    assert!(cfg.validate().is_err());
    let mut cfg = tiny(Variant::Flame, 1);
    cfg.lr_factor = 1.0;
    assert!(cfg.validate().is_err());
    let mut cfg = tiny(Variant::Flame, 1);
    cfg.batch_size = 1;
    assert!(cfg.validate().is_err());
}

#[test]
fn batch_arithmetic() {
    assert_eq!(epoch_batches(8, 8, 0, 0).len(), 1);
    let b = epoch_batches(9, 8, 0, 0);
    assert_eq!(b.len(), 1);
    assert_eq!(b[0].len(), 9);
    let sizes: Vec<_> = epoch_batches(18, 8, 1, 2).iter().map(Vec::len).collect();
    assert_eq!(sizes, vec![8, 8, 2]);
    let mut all: Vec<_> = epoch_batches(18, 8, 1, 2).concat();
    all.sort();
    assert_eq!(all, (0..18).collect::<Vec<_>>());
    assert_ne!(epoch_batches(18, 8, 1, 2), epoch_batches(18, 8, 1, 3));
}

#[test]
fn one_epoch_on_eight_samples_is_one_step() {
    let recs = synth_generate(8, 1, 0.0).unwrap();
    let out = train::<f32>(
        &tiny(Variant::Flame, 1),
        &recs,
        &[],
        &TrainOutput::default(),
    )
    .unwrap();
    assert_eq!(out.steps, 1);
    assert_eq!(out.history.len(), 1);
    assert!(out.history[0].val_mean_deg.is_nan());
    assert!(out.best_checkpoint.is_none());
}

#[test]
fn training_is_deterministic() {
    let recs = synth_generate(20, 2, 0.2).unwrap();
    let (train_set, val) = recs.split_at(16);
    let run = |det: bool| {
        let mut cfg = tiny(Variant::Flame, 2);
        cfg.deterministic = det;
        train::<f32>(&cfg, train_set, val, &TrainOutput::default()).unwrap()
    };
    let a = run(true);
    let b = run(true);
    let c = run(false);
    for m in [&b, &c] {
        for (p, q) in a.model.params().iter().zip(m.model.params()) {
            assert_eq!(p.value, q.value, "{}", p.name);
        }
        for (h, k) in a.history.iter().zip(&m.history) {
            assert_eq!(
                (h.train_loss, h.val_mean_deg),
                (k.train_loss, k.val_mean_deg)
            );
        }
    }
    assert_eq!(history_tsv(&a.history), history_tsv(&b.history));
    assert!(a.best_epoch.is_some());
}

#[test]
fn writes_history_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let recs = synth_generate(12, 4, 0.0).unwrap();
    let out = TrainOutput {
        dir: Some(dir.path().to_path_buf()),
    };
    let outcome =
        train::<f32>(&tiny(Variant::Baseline, 3), &recs[..10], &recs[10..], &out).unwrap();
    let hist = std::fs::read_to_string(dir.path().join("history.tsv")).unwrap();
    let lines: Vec<_> = hist.lines().collect();
    assert_eq!(lines[0], HISTORY_HEADER);
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1].split('\t').count(), 6);
    let best = Checkpoint::<f32>::load(&dir.path().join("best.ckpt")).unwrap();
    assert_eq!(Some(best.epoch), outcome.best_epoch);
    let fin = Checkpoint::<f32>::load(&dir.path().join("final.ckpt")).unwrap();
    assert_eq!(fin, outcome.final_checkpoint);
    assert_eq!(fin.optimizer.as_ref().unwrap().step, outcome.steps);
}

#[test]
fn checkpoint_evaluation_matches_memory() {
    let dir = tempfile::tempdir().unwrap();
    let recs = synth_generate(10, 5, 0.0).unwrap();
    let mut outcome = train::<f32>(
        &tiny(Variant::Flame, 1),
        &recs,
        &[],
        &TrainOutput::default(),
    )
    .unwrap();
    let path = dir.path().join("m.ckpt");
    outcome.final_checkpoint.save(&path).unwrap();
    let mut loaded = Checkpoint::<f32>::load(&path)
        .unwrap()
        .build_model()
        .unwrap();
    let a = evaluate(&mut outcome.model, &recs, EyePolicy::Both, 0, 120).unwrap();
    let b = evaluate(&mut loaded, &recs, EyePolicy::Both, 0, 120).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.samples.len(), 20);
}

fn sample(id: &str, subject: &str, truth: GazeAngles, pred: GazeAngles) -> SampleError {
    let t = truth.to_vector().unwrap();
    let p = pred.to_vector().unwrap();
    SampleError {
        image_id: id.into(),
        subject_id: subject.into(),
        eye: Eye::Left,
        truth,
        prediction: pred,
        error_deg: flame_gaze::geometry::angular_error(p, t).unwrap(),
    }
}

#[test]
fn eval_report_statistics() {
    let g = |p, y| GazeAngles::from_degrees(p, y);
    let exact: Vec<_> = (0..5)
        .map(|i| sample("a", "s", g(i as f64, -(i as f64)), g(i as f64, -(i as f64))))
        .collect();
    let r = EvalReport::from_samples(Variant::Flame, 120, EyePolicy::Both, exact, vec![]);
    assert!(r.mean_deg.abs() < 1e-6 && r.std_deg.abs() < 1e-6);

    let theta = 10.0;
    let sym = vec![
        sample("p", "s1", g(0.0, theta), g(0.0, 0.0)),
        sample("m", "s2", g(0.0, -theta), g(0.0, 0.0)),
        sample("q", "s2", g(theta, 0.0), g(0.0, 0.0)),
    ];
    let r = EvalReport::from_samples(Variant::Flame, 120, EyePolicy::Both, sym, vec![]);
    assert!(r.mean_deg >= theta - 1e-9, "{}", r.mean_deg);
    let errs: Vec<f64> = r.samples.iter().map(|s| s.error_deg).collect();
    let mean = errs.iter().sum::<f64>() / 3.0;
    let std = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    assert!((r.mean_deg - mean).abs() < 1e-9 && (r.std_deg - std).abs() < 1e-9);
    assert_eq!(r.per_subject.len(), 2);
    assert!((r.per_subject["s2"] - (errs[1] + errs[2]) / 2.0).abs() < 1e-12);
}

#[test]
fn ablation_table_is_reproducible() {
    let recs = synth_generate(40, 6, 0.0).unwrap();
    let variants = [Variant::Baseline, Variant::Flame];
    let run = || {
        ablate::<f32>(
            &tiny(Variant::Flame, 1),
            &recs,
            &SplitSpec::new(2),
            &variants,
            None,
        )
        .unwrap()
    };
    let a = run();
    let tsv = a.to_tsv();
    assert_eq!(tsv, run().to_tsv());
    let lines: Vec<_> = tsv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("variant\tmean_deg\tstd_deg"));
    assert!(lines[0].contains("paper_columbiagaze_mean"));
    assert!(lines[1].starts_with("F_B\t") && lines[1].contains("\t5.93\t3.20\t5.32\t3.08"));
    assert!(lines[2].starts_with("FLAME\t") && lines[2].contains("\t4.64\t2.86\t4.62\t2.93"));
}

#[test]
fn failing_variant_does_not_stop_the_table() {
    let recs = synth_generate(30, 7, 0.0).unwrap();
    let mut cfg = tiny(Variant::Flame, 1);
    cfg.model.coord_widths = vec![0];
    let r = ablate::<f32>(
        &cfg,
        &recs,
        &SplitSpec::new(1),
        &[Variant::DenseFusion, Variant::Baseline],
        None,
    )
    .unwrap();
    assert!(r.rows[0].outcome.is_err());
    assert!(r.rows[1].outcome.is_ok());
    assert!(r.to_tsv().contains("failed: invalid configuration"));
}

#[test]
fn resolution_sweep_rows_and_annotations() {
    let recs = synth_generate(30, 8, 0.0).unwrap();
    let r = resolution_sweep::<f32>(
        &tiny(Variant::Flame, 1),
        &recs,
        &SplitSpec::new(1),
        &[60, 30],
        None,
    )
    .unwrap();
    let tsv = r.to_tsv();
    assert!(tsv.contains("\n60\t") && tsv.contains("\n30\t"));
    assert!(tsv.contains("\t4.79\t3.23\t4.81\t2.99") && tsv.contains("\t5.50\t3.50\t4.77\t3.15"));
    let res30 = r.rows[1].outcome.as_ref().unwrap();
    assert_eq!(res30.resolution, 30);
    assert_eq!(
        paper_resolution_reference(120).unwrap().columbia,
        (Some(4.64), Some(2.86))
    );
}

#[test]
fn exploding_training_aborts() {
    let recs = synth_generate(8, 9, 0.0).unwrap();
    let mut cfg = tiny(Variant::Baseline, 30);
    cfg.lr = 1e6;
    match train::<f32>(&cfg, &recs, &[], &TrainOutput::default()) {
        Err(FlameError::NonFinite(msg)) => assert!(msg.contains("epoch")),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training with lr 1e6 should diverge"),
    }
}

#[test]
fn overfit_loss_trends_down() {
    let recs = synth_generate(64, 7, 0.0).unwrap();
    let mut cfg = TrainConfig::new(ModelSpec::tiny(Variant::Flame, 30));
    cfg.epochs = 100;
    let out = train::<f32>(&cfg, &recs, &[], &TrainOutput::default()).unwrap();
    let loss: Vec<f64> = out.history.iter().map(|h| h.train_loss).collect();
    let blocks: Vec<f64> = loss[40..]
        .chunks(20)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    assert!(blocks.windows(2).all(|w| w[1] < w[0]), "{blocks:?}");
    // Sliding windows wobble with dropout and eye sampling, but only slightly.
    let ma: Vec<f64> = loss
        .windows(20)
        .map(|w| w.iter().sum::<f64>() / 20.0)
        .collect();
    for w in ma[21..].windows(2) {
        assert!(w[1] <= w[0] * 1.03, "{} -> {}", w[0], w[1]);
    }
}
