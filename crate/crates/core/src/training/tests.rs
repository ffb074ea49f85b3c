use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::network::{ContextConfig, ContextMode, OneMaxCnnSpec};
use crate::signal_io::StageLabel;

fn labels(idx: &[usize]) -> Vec<StageLabel> {
    idx.iter().map(|&i| StageLabel::from_index(i).unwrap()).collect()
}

fn recording(id: &str, labs: &[usize], dims: (usize, usize, usize)) -> LabeledRecording {
    let len = dims.0 * dims.1 * dims.2;
    let images = (0..labs.len() * len).map(|i| i as f32).collect();
    LabeledRecording {
        subject_id: id.into(),
        images,
        labels: labels(labs),
    }
}

#[test]
fn loss_of_perfect_posteriors_is_zero() {
    let p = vec![vec![0.0, 1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 0.0, 1.0]];
    assert_eq!(multitask_loss(&p, &[1, 4]).unwrap(), 0.0);
}

#[test]
fn loss_of_uniform_posteriors() {
    let p = vec![vec![0.2; 5]; 3];
    let l = multitask_loss(&p, &[0, 2, 4]).unwrap();
    assert!((l - 3.0 * 5f64.ln()).abs() < 1e-12);
    assert!((l - 4.8283).abs() < 1e-4);
}

#[test]
fn loss_is_hand_summed_slot_cross_entropy() {
    let p = vec![
        vec![0.7, 0.1, 0.1, 0.05, 0.05],
        vec![0.2, 0.5, 0.1, 0.1, 0.1],
        vec![0.1, 0.1, 0.1, 0.3, 0.4],
    ];
    let expected = -(0.7f64.ln() + 0.5f64.ln() + 0.3f64.ln());
    assert!((multitask_loss(&p, &[0, 1, 3]).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn loss_rejects_mismatched_slots_and_bad_targets() {
    let p = vec![vec![0.2; 5]; 3];
    assert!(multitask_loss(&p, &[0, 1]).is_err());
    assert!(multitask_loss(&p, &[0, 1, 5]).is_err());
}

#[test]
fn zero_posterior_at_target_is_floored() {
    let p = vec![vec![0.0, 1.0, 0.0, 0.0, 0.0]];
    let l = multitask_loss(&p, &[0]).unwrap();
    assert!((l + LOG_FLOOR.ln()).abs() < 1e-9);
}

proptest::proptest! {
    #[test]
    fn loss_is_sum_of_slot_losses(raw in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 5), 1..6),
                                  seed in 0u64..1000) {
        let p: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| { let s: f64 = r.iter().sum(); r.iter().map(|v| v / s).collect() })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<usize> = p.iter().map(|_| rng.gen_range(0..5)).collect();
        let whole = multitask_loss(&p, &t).unwrap();
        let parts: f64 = p.iter().zip(&t).map(|(s, &y)| multitask_loss(&[s.clone()], &[y]).unwrap()).sum();
        proptest::prop_assert!(whole >= 0.0);
        proptest::prop_assert!((whole - parts).abs() < 1e-12);
    }

    #[test]
    fn balanced_batches_have_exact_counts(seed in 0u64..10_000, per in 1usize..30) {
        let dims = (1, 2, 3);
        let ctx = ContextConfig::new(ContextMode::OneToOne, 0).unwrap();
        let d = Dataset::new(vec![recording("a", &[0, 0, 0, 1, 2, 2, 3, 4, 4, 2], dims)], dims, ctx).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = make_balanced_batch(&d, per * 5, &mut rng).unwrap();
        let mut counts = [0usize; 5];
        for &i in &b {
            counts[d.center_label(i).index()] += 1;
        }
        proptest::prop_assert_eq!(counts, [per; 5]);
    }
}

fn five_class_dataset() -> Dataset {
    let dims = (1, 2, 3);
    let ctx = ContextConfig::new(ContextMode::OneToMany, 1).unwrap();
    Dataset::new(
        vec![recording("a", &[0, 1, 2, 2, 3], dims), recording("b", &[4, 2, 0], dims)],
        dims,
        ctx,
    )
    .unwrap()
}

#[test]
fn balanced_batch_of_200_has_40_per_class() {
    let d = five_class_dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let b = make_balanced_batch(&d, 200, &mut rng).unwrap();
    assert_eq!(b.len(), 200);
    for c in 0..5 {
        assert_eq!(b.iter().filter(|&&i| d.center_label(i).index() == c).count(), 40);
    }
}

#[test]
fn balanced_batch_is_deterministic_per_seed() {
    let d = five_class_dataset();
    let a = make_balanced_batch(&d, 50, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = make_balanced_batch(&d, 50, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn balanced_batch_errors() {
    let dims = (1, 2, 3);
    let ctx = ContextConfig::new(ContextMode::OneToOne, 0).unwrap();
    let no_rem = Dataset::new(vec![recording("a", &[0, 1, 2, 3], dims)], dims, ctx).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        make_balanced_batch(&no_rem, 200, &mut rng),
        Err(Error::MissingClass { class: 4 })
    ));
    assert!(make_balanced_batch(&five_class_dataset(), 201, &mut rng).is_err());
}

#[test]
fn label_windows_replicate_edges() {
    let d = five_class_dataset();
    assert_eq!(d.len(), 8);
    let first = d.sample(0);
    assert_eq!(first.subject_id, "a");
    assert_eq!(first.label_window, labels(&[0, 0, 1]));
    assert_eq!(d.sample(4).label_window, labels(&[2, 3, 3]));
    let second = d.sample(5);
    assert_eq!((second.subject_id, second.epoch_index), ("b", 0));
    assert_eq!(second.label_window, labels(&[4, 4, 2]));
    assert_eq!(d.targets(6), vec![4, 2, 0]);
    assert_eq!(d.recording_range(1), 5..8);
    for i in 0..d.len() {
        assert_eq!(d.sample(i).label_window.len(), 3);
    }
}

#[test]
fn many_to_one_input_joins_replicated_neighbours() {
    let dims = (1, 2, 3);
    let ctx = ContextConfig::new(ContextMode::ManyToOne, 1).unwrap();
    let d = Dataset::new(vec![recording("a", &[0, 1], dims)], dims, ctx).unwrap();
    // epoch 0 is 0..6, epoch 1 is 6..12; rows of 3 frames each
    let x = d.input(0).unwrap();
    assert_eq!(
        x,
        vec![0., 1., 2., 0., 1., 2., 6., 7., 8., 3., 4., 5., 3., 4., 5., 9., 10., 11.]
    );
    assert_eq!(d.targets(0), vec![0]);
}

#[test]
fn dataset_rejects_wrong_image_length() {
    let ctx = ContextConfig::new(ContextMode::OneToOne, 0).unwrap();
    let mut rec = recording("a", &[0, 1], (1, 2, 3));
    rec.images.pop();
    assert!(Dataset::new(vec![rec], (1, 2, 3), ctx).is_err());
}

/// Three classes, each lighting up its own filter row over a noisy floor.
fn separable(n_rec: usize, per_rec: usize, seed: u64, ctx: ContextConfig) -> Dataset {
    let dims = (1, 3, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let recs = (0..n_rec)
        .map(|r| {
            let labs: Vec<usize> = (0..per_rec).map(|_| rng.gen_range(0..3)).collect();
            let mut images = Vec::new();
            for &l in &labs {
                for m in 0..3 {
                    for _ in 0..8 {
                        let base = if m == l { 1.5 } else { 0.0 };
                        images.push((base + rng.gen_range(-0.5..0.5)) as f32);
                    }
                }
            }
            LabeledRecording {
                subject_id: format!("s{r}"),
                images,
                labels: labels(&labs),
            }
        })
        .collect();
    Dataset::new(recs, dims, ctx).unwrap()
}

fn small_spec(ctx: ContextConfig, classes: usize) -> ModelSpec {
    let mut s = OneMaxCnnSpec::new(vec![3], 4, (1, 3, 8), ctx);
    s.n_classes = classes;
    ModelSpec::OneMax(s)
}

fn quick_config(passes: usize) -> TrainingConfig {
    TrainingConfig {
        passes,
        batch_size: 20,
        learning_rate: 1e-2,
        lambda_reg: 1e-4,
        dropout: 0.0,
        balanced_batching: false,
        seed: 11,
    }
}

#[test]
fn separable_three_classes_are_learned() {
    let ctx = ContextConfig::new(ContextMode::OneToOne, 0).unwrap();
    let train_set = separable(4, 50, 1, ctx);
    let val_set = separable(2, 50, 2, ctx);
    let out = train(&small_spec(ctx, 3), &train_set, &val_set, &quick_config(50)).unwrap();
    let best = out.history[out.best_pass - 1].val_center_accuracy;
    assert!(best > 0.95, "validation accuracy {best}");
    assert!(out.history.iter().filter(|r| r.best).all(|r| r.pass <= out.best_pass));
}

#[test]
fn same_seed_gives_identical_history() {
    let ctx = ContextConfig::new(ContextMode::OneToMany, 1).unwrap();
    let train_set = separable(2, 30, 3, ctx);
    let val_set = separable(1, 30, 4, ctx);
    let mut cfg = quick_config(4);
    cfg.dropout = 0.2;
    let a = train(&small_spec(ctx, 3), &train_set, &val_set, &cfg).unwrap();
    let b = train(&small_spec(ctx, 3), &train_set, &val_set, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
}

#[test]
fn large_penalty_shrinks_weights() {
    let ctx = ContextConfig::new(ContextMode::OneToOne, 0).unwrap();
    let train_set = separable(2, 30, 5, ctx);
    let val_set = separable(1, 30, 6, ctx);
    let mut cfg = quick_config(10);
    cfg.lambda_reg = 0.0;
    cfg.passes = 10;
    let free = train(&small_spec(ctx, 3), &train_set, &val_set, &cfg).unwrap();
    cfg.lambda_reg = 10.0;
    let tight = train(&small_spec(ctx, 3), &train_set, &val_set, &cfg).unwrap();
    let last = |o: &TrainOutcome| o.params.sum_squares();
    assert!(last(&tight) < last(&free), "{} vs {}", last(&tight), last(&free));
}

#[test]
fn balanced_training_runs_on_five_classes() {
    let d = five_class_dataset();
    let spec = ModelSpec::OneMax(OneMaxCnnSpec::new(vec![2], 2, (1, 2, 3), d.context()));
    let mut cfg = quick_config(2);
    cfg.balanced_batching = true;
    cfg.batch_size = 10;
    let out = train(&spec, &d, &d, &cfg).unwrap();
    assert_eq!(out.history.len(), 2);
    assert!(out.history[0].best);
}

#[test]
fn divergence_is_reported() {
    let ctx = ContextConfig::new(ContextMode::OneToOne, 0).unwrap();
    let train_set = separable(2, 30, 7, ctx);
    let mut cfg = quick_config(5);
    cfg.learning_rate = 1e300;
    let err = train(&small_spec(ctx, 3), &train_set, &train_set, &cfg).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
}

#[test]
fn config_and_context_are_validated() {
    let ctx = ContextConfig::new(ContextMode::OneToOne, 0).unwrap();
    let d = separable(1, 10, 8, ctx);
    let mut cfg = quick_config(1);
    cfg.learning_rate = 0.0;
    assert!(train(&small_spec(ctx, 3), &d, &d, &cfg).is_err());
    let other = ContextConfig::new(ContextMode::OneToMany, 1).unwrap();
    assert!(train(&small_spec(other, 3), &d, &d, &quick_config(1)).is_err());
}

#[test]
fn history_csv_has_one_row_per_pass() {
    let h = vec![
        PassRecord {
            pass: 1,
            train_loss: 1.5,
            val_center_accuracy: 0.5,
            val_aggregated_accuracy: 0.25,
            best: true,
        },
        PassRecord {
            pass: 2,
            train_loss: 1.0,
            val_center_accuracy: 0.5,
            val_aggregated_accuracy: 0.75,
            best: false,
        },
    ];
    assert_eq!(
        history_csv(&h),
        "pass,train_loss,val_center_accuracy,val_aggregated_accuracy,best\n1,1.5,0.5,0.25,true\n2,1,0.5,0.75,false\n"
    );
}
