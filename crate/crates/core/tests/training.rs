use canopy_core::objectives::{total_loss, LossBreakdown, LossWeights};
use canopy_core::trainer::{
    adamw_step, clip_gradients, lr_at, AdamState, OptimizerConfig, ScheduleConfig,
};
use canopy_core::{Tape, Tensor};
use proptest::prelude::*;

fn schedule(steps_per_epoch: usize) -> (ScheduleConfig, OptimizerConfig) {
    (
        ScheduleConfig {
            steps_per_epoch,
            ..Default::default()
        },
        OptimizerConfig::default(),
    )
}

#[test]
fn schedule_hits_its_anchor_values() {
    let (s, o) = schedule(3);
    assert_eq!(lr_at(s.warmup_steps(), &s, &o), 1e-4);
    assert!((lr_at(s.total_steps(), &s, &o) - 1e-6).abs() < 1e-18);
    assert!((lr_at(s.warmup_steps() / 2, &s, &o) - 5e-5).abs() < 1e-18);
    assert_eq!(lr_at(0, &s, &o), 0.0);
}

proptest! {
    #[test]
    fn schedule_is_continuous_then_non_increasing(spe in 1usize..50) {
        let (s, o) = schedule(spe);
        let warm = s.warmup_steps();
        // The warmup line reaches lr0 exactly where the cosine starts.
        let line_end = o.lr0 * warm as f64 / warm as f64;
        prop_assert!((line_end - lr_at(warm, &s, &o)).abs() < 1e-9);
        for k in warm..s.total_steps() + 5 {
            prop_assert!(lr_at(k + 1, &s, &o) <= lr_at(k, &s, &o));
        }
        for k in 0..warm {
            prop_assert!(lr_at(k + 1, &s, &o) > lr_at(k, &s, &o));
        }
    }

    #[test]
    fn loss_total_is_the_weighted_sum(f in 0.0f64..10.0, g in 0.0f64..2.0, b in 0.0f64..5.0, n in 0usize..100) {
        let w = LossWeights::default();
        let l = LossBreakdown::new(f, g, b, n, &w);
        prop_assert!((l.total - (f + 2.0 * g + b)).abs() < 1e-12);
        let tape = Tape::new();
        let v = |x: f64| tape.constant(Tensor::scalar(x));
        let t = total_loss(v(f), v(g), v(b), &w).unwrap().value().item().unwrap();
        prop_assert!((t - l.total).abs() < 1e-12);
    }

    #[test]
    fn clipping_never_raises_the_norm(vals in prop::collection::vec(-5.0f64..5.0, 1..30), max in 0.1f64..3.0) {
        let mut g = vec![Tensor::new([vals.len()], vals.clone()).unwrap()];
        let before = g[0].norm_sq().sqrt();
        let f = clip_gradients(&mut g, &["w".into()], max).unwrap();
        let after = g[0].norm_sq().sqrt();
        prop_assert!(f > 0.0 && f <= 1.0);
        prop_assert!(after <= before + 1e-12);
        prop_assert!(after <= max + 1e-9);
    }
}

#[test]
fn clipping_examples() {
    let mut g = vec![Tensor::new([2], vec![0.3, 0.4]).unwrap()];
    assert_eq!(clip_gradients(&mut g, &["a".into()], 1.0).unwrap(), 1.0);
    let mut g = vec![Tensor::new([2], vec![0.0, 4.0]).unwrap()];
    assert_eq!(clip_gradients(&mut g, &["a".into()], 1.0).unwrap(), 0.25);
    assert_eq!(g[0].data(), &[0.0, 1.0]);
    let mut g = vec![Tensor::new([1], vec![f64::NAN]).unwrap()];
    let err = clip_gradients(&mut g, &["head.cls".into()], 1.0).unwrap_err();
    assert!(err.to_string().contains("head.cls"));
}

#[test]
fn adamw_first_step_and_decay() {
    let cfg = OptimizerConfig {
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut p = vec![Tensor::new([1], vec![0.5]).unwrap()];
    let mut st = AdamState::zeros_like(&p);
    adamw_step(
        &mut p,
        &[Tensor::new([1], vec![1.0]).unwrap()],
        &mut st,
        1e-3,
        &cfg,
    )
    .unwrap();
    // m̂ / √v̂ = 1 on the first step, so the update is lr up to eps.
    assert!((p[0].data()[0] - (0.5 - 1e-3)).abs() < 1e-10);

    let cfg = OptimizerConfig {
        weight_decay: 0.1,
        ..Default::default()
    };
    let mut p = vec![Tensor::new([1], vec![2.0]).unwrap()];
    let mut st = AdamState::zeros_like(&p);
    adamw_step(&mut p, &[Tensor::zeros([1])], &mut st, 0.01, &cfg).unwrap();
    assert!((p[0].data()[0] - 2.0 * (1.0 - 0.01 * 0.1)).abs() < 1e-15);
}
