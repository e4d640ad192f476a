use super::*;
use crate::autodiff::Tape;
use crate::gradcheck::{check_fn, GradCheckConfig};
use crate::nn::{Graph, LayerParams, Linear, Mode, ParamKind};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Error;
use proptest::prelude::*;

/// Per-sample scalar oracle for the weighted mean cross-entropy.
fn ce_oracle(logits: &[f64], k: usize, targets: &[usize], w: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (row, &t) in logits.chunks(k).zip(targets) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        num += w[t] * (lse - row[t]);
        den += w[t];
    }
    num / den
}

fn ce(logits: &Tensor<f64>, targets: &[usize], w: &ClassWeights) -> Result<f64, Error> {
    cross_entropy_value(logits, targets, w)
}

#[test]
fn class_weight_examples() {
    assert_eq!(ClassWeights::from_counts(&[10, 10, 10]).unwrap().w, vec![1.0; 3]);
    assert_eq!(ClassWeights::from_counts(&[10, 30, 60]).unwrap().w, vec![10.0 / 3.0, 10.0 / 9.0, 5.0 / 9.0]);
    let err = ClassWeights::from_counts(&[4, 0, 2]).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("class 1") && err.to_string().contains("merge"));
}

#[test]
fn cross_entropy_examples() {
    let z = Tensor::from_f64(vec![1, 2], &[0.0, 0.0]).unwrap();
    let l = ce(&z, &[0], &ClassWeights::uniform(2)).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    let z = Tensor::from_f64(vec![1, 3], &[60.0, 0.0, 0.0]).unwrap();
    let l = ce(&z, &[0], &ClassWeights::uniform(3)).unwrap();
    assert!(l >= 0.0 && l < 1e-20);
    let err = ce(&z, &[3], &ClassWeights::uniform(3)).unwrap_err();
    assert!(matches!(err, Error::Input(_)) && err.to_string().contains("index 0"));
}

#[test]
fn cross_entropy_matches_scalar_oracle() {
    let mut rng = Rng::new(1);
    let (n, k) = (7, 3);
    let z: Vec<f64> = (0..n * k).map(|_| rng.normal(0.0, 2.0)).collect();
    let targets: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
    let t = Tensor::from_f64(vec![n, k], &z).unwrap();
    let w = ClassWeights { w: vec![2.0, 1.0, 1.0] };
    assert!((ce(&t, &targets, &w).unwrap() - ce_oracle(&z, k, &targets, &w.w)).abs() <= 1e-6);
    let ones = ClassWeights::uniform(k);
    let unweighted: f64 = z
        .chunks(k)
        .zip(&targets)
        .map(|(row, &y)| ce_oracle(row, k, &[y], &[1.0; 3]))
        .sum::<f64>()
        / n as f64;
    assert!((ce(&t, &targets, &ones).unwrap() - unweighted).abs() <= 1e-7);
}

#[test]
fn cross_entropy_gradcheck() {
    let mut rng = Rng::new(2);
    let z: Vec<f64> = (0..15).map(|_| rng.normal(0.0, 1.0)).collect();
    let targets = [0, 2, 1, 2, 2];
    let w = ClassWeights { w: vec![0.5, 2.0, 1.25] };
    let report = check_fn(
        "weighted_cross_entropy",
        &[Tensor::from_f64(vec![5, 3], &z).unwrap()],
        |t, v| weighted_cross_entropy(t, v[0], &targets, &w),
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passed(), "{report}");
}

proptest! {
    #[test]
    fn cross_entropy_is_permutation_consistent(
        seed in any::<u64>(), n in 1usize..6, k in 2usize..6,
    ) {
        let mut rng = Rng::new(seed);
        let z: Vec<f64> = (0..n * k).map(|_| rng.normal(0.0, 3.0)).collect();
        let targets: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let w: Vec<f64> = (0..k).map(|_| rng.uniform_range(0.1, 3.0)).collect();
        let mut perm: Vec<usize> = (0..k).collect();
        rng.shuffle(&mut perm);
        // new column j holds old column perm[j]
        let mut zp = vec![0.0; n * k];
        for i in 0..n {
            for j in 0..k {
                zp[i * k + j] = z[i * k + perm[j]];
            }
        }
        let inv: Vec<usize> = (0..k).map(|c| perm.iter().position(|&p| p == c).unwrap()).collect();
        let tp: Vec<usize> = targets.iter().map(|&t| inv[t]).collect();
        let wp: Vec<f64> = (0..k).map(|j| w[perm[j]]).collect();
        let a = ce(&Tensor::from_f64(vec![n, k], &z).unwrap(), &targets, &ClassWeights { w }).unwrap();
        let b = ce(&Tensor::from_f64(vec![n, k], &zp).unwrap(), &tp, &ClassWeights { w: wp }).unwrap();
        prop_assert!((a - b).abs() <= 1e-7);
    }

    #[test]
    fn unit_weights_equal_unweighted_mean(seed in any::<u64>(), n in 1usize..8, k in 2usize..5) {
        let mut rng = Rng::new(seed);
        let z: Vec<f64> = (0..n * k).map(|_| rng.normal(0.0, 3.0)).collect();
        let targets: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let got = ce(&Tensor::from_f64(vec![n, k], &z).unwrap(), &targets, &ClassWeights::uniform(k)).unwrap();
        let want = ce_oracle(&z, k, &targets, &vec![1.0; k]);
        prop_assert!((got - want).abs() <= 1e-7);
    }

    #[test]
    fn scheduler_lr_never_increases(losses in proptest::collection::vec(0.0f64..5.0, 1..60)) {
        let mut s = SchedulerState::new(SchedulerConfig::default(), 1e-4);
        let mut prev = s.lr;
        for l in losses {
            let e = s.update(l).unwrap();
            prop_assert!(e.lr <= prev && e.lr >= s.config.min_lr);
            prev = e.lr;
        }
    }

    #[test]
    fn adam_first_step_is_bounded_by_lr(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut p = LayerParams::<f32>::new();
        let w: Vec<f64> = (0..16).map(|_| rng.normal(0.0, 1.0)).collect();
        p.insert("w", Tensor::from_f64(vec![16], &w).unwrap(), ParamKind::LinearWeight).unwrap();
        let g: Vec<f32> = (0..16).map(|_| rng.normal(0.0, 10.0) as f32).collect();
        p.get_mut("w").unwrap().accumulate_grad(&g).unwrap();
        let before = p.get("w").unwrap().clone();
        let mut opt = OptimizerConfig::default().build().unwrap();
        opt.step(&mut p).unwrap();
        let lr = 1e-4;
        for (a, b) in before.data().iter().zip(p.get("w").unwrap().data()) {
            prop_assert!(((a - b).abs() as f64) <= lr * (1.0 + 1e-3) / (1.0 - 1e-3));
        }
    }
}

#[test]
fn l2_examples() {
    let mut p = LayerParams::<f64>::new();
    p.insert("head.fc.weight", Tensor::from_f64(vec![2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap(), ParamKind::LinearWeight)
        .unwrap();
    p.insert("head.fc.bias", Tensor::from_f64(vec![2], &[5.0, 6.0]).unwrap(), ParamKind::Bias).unwrap();
    p.insert("transformer.block1.mlp.fc1.weight", Tensor::ones(vec![2, 2]), ParamKind::LinearWeight).unwrap();
    p.insert("cnn.stem.conv.weight", Tensor::ones(vec![1, 1, 1, 1]), ParamKind::ConvWeight).unwrap();
    let value = |p: &mut LayerParams<f64>, scope, coeff| {
        let mut g = Graph::new(p, Mode::Train, Rng::new(0));
        match l2_penalty(&mut g, scope, coeff).unwrap() {
            Some(v) => g.value(v).item().unwrap(),
            None => 0.0,
        }
    };
    assert!((value(&mut p, L2Scope::Head, 0.01) - 0.3).abs() < 1e-12);
    assert_eq!(value(&mut p, L2Scope::Head, 0.0), 0.0);
    assert!((value(&mut p, L2Scope::AllLinear, 0.01) - 0.34).abs() < 1e-12);
    p.get_mut("head.fc.bias").unwrap().data_mut()[0] = -100.0;
    assert!((value(&mut p, L2Scope::Head, 0.01) - 0.3).abs() < 1e-12);
    assert!((l2_value(&p, L2Scope::Head, 0.01) - 0.3).abs() < 1e-12);

    // d/dW of c·ΣW² is 2cW.
    let mut g = Graph::new(&mut p, Mode::Train, Rng::new(0));
    let l = l2_penalty(&mut g, L2Scope::Head, 0.01).unwrap().unwrap();
    g.backward(l).unwrap();
    let grad = p.get("head.fc.weight").unwrap().grad().unwrap().to_vec();
    assert!(grad.iter().zip([1.0, 2.0, 3.0, 4.0]).all(|(g, w)| (g - 0.02 * w).abs() < 1e-12));
}

fn scalar_param(w: f32, g: f32) -> LayerParams<f32> {
    let mut p = LayerParams::<f32>::new();
    p.insert("w", Tensor::new(vec![1], vec![w]).unwrap(), ParamKind::LinearWeight).unwrap();
    p.get_mut("w").unwrap().accumulate_grad(&[g]).unwrap();
    p
}

#[test]
fn adam_hand_step() {
    let mut p = scalar_param(0.0, 1.0);
    let mut opt = OptimizerConfig::default().build().unwrap();
    opt.step(&mut p).unwrap();
    let w = p.get("w").unwrap().data()[0] as f64;
    assert!((w - (-1e-4 / (1.0 + 1e-8))).abs() < 1e-10, "{w}");
    assert_eq!(p.get("w").unwrap().grad().unwrap(), &[0.0]);
    let Optimizer::Adam(a) = &opt else { unreachable!() };
    assert_eq!(a.t, 1);
}

#[test]
fn adam_zero_gradient_is_null_update() {
    let mut p = scalar_param(0.7, 0.0);
    let mut opt = OptimizerConfig::default().build().unwrap();
    opt.step(&mut p).unwrap();
    opt.step(&mut p).unwrap();
    assert_eq!(p.get("w").unwrap().data(), &[0.7]);
    let Optimizer::Adam(a) = &opt else { unreachable!() };
    assert_eq!(a.t, 2);
}

#[test]
fn adam_aborts_on_non_finite_gradient() {
    let mut p = scalar_param(1.0, f32::NAN);
    p.insert("a", Tensor::new(vec![1], vec![2.0]).unwrap(), ParamKind::Bias).unwrap();
    p.get_mut("a").unwrap().accumulate_grad(&[1.0]).unwrap();
    let mut opt = OptimizerConfig::default().build().unwrap();
    let err = opt.step(&mut p).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)) && err.to_string().contains("w[0]"), "{err}");
    assert_eq!(p.get("a").unwrap().data(), &[2.0]);
    assert_eq!(p.get("w").unwrap().data(), &[1.0]);
}

fn train_steps(seed: u64, steps: usize) -> LayerParams<f32> {
    let layer = Linear::new("head.fc", 4, 3);
    let mut p = LayerParams::<f32>::new();
    layer.init(&mut p, &mut Rng::new(seed)).unwrap();
    let mut opt = OptimizerConfig::default().build().unwrap();
    let mut rng = Rng::new(seed + 1);
    for _ in 0..steps {
        let x: Vec<f64> = (0..8).map(|_| rng.normal(0.0, 1.0)).collect();
        let targets = [rng.below(3), rng.below(3)];
        let mut g = Graph::new(&mut p, Mode::Train, Rng::new(0));
        let xv = g.input(Tensor::from_f64(vec![2, 4], &x).unwrap());
        let z = layer.forward(&mut g, xv).unwrap();
        let l = weighted_cross_entropy(g.tape_mut(), z, &targets, &ClassWeights::uniform(3)).unwrap();
        g.backward(l).unwrap();
        opt.step(&mut p).unwrap();
    }
    p
}

#[test]
fn adam_is_deterministic() {
    assert!(train_steps(3, 5).bitwise_eq(&train_steps(3, 5)));
    assert!(!train_steps(3, 5).bitwise_eq(&train_steps(3, 4)));
}

#[test]
fn sgd_step_and_state_roundtrip() {
    let mut p = scalar_param(1.0, 2.0);
    let mut sgd = OptimizerConfig { kind: OptimizerKind::Sgd, lr: 0.25, ..Default::default() }.build().unwrap();
    sgd.step(&mut p).unwrap();
    assert_eq!(p.get("w").unwrap().data(), &[0.5]);

    let mut p = scalar_param(1.0, 2.0);
    let mut adam = OptimizerConfig::default().build().unwrap();
    adam.step(&mut p).unwrap();
    let (state, t) = adam.export_state();
    let mut fresh = OptimizerConfig::default().build().unwrap();
    fresh.import_state(&state, t);
    assert_eq!(fresh, adam);
}

#[test]
fn scheduler_flat_losses_halve_lr_after_three_non_improvements() {
    let mut s = SchedulerState::new(SchedulerConfig::default(), 1e-4);
    let events: Vec<SchedulerEvent> = [1.0, 1.0, 1.0, 1.0].iter().map(|&l| s.update(l).unwrap()).collect();
    let lrs: Vec<f64> = events.iter().map(|e| e.lr).collect();
    assert_eq!(lrs, vec![1e-4, 1e-4, 1e-4, 5e-5]);
    assert_eq!(events.iter().map(|e| e.lr_reduced).collect::<Vec<_>>(), vec![false, false, false, true]);
    assert!(events[0].improved && !events[1].improved);
}

#[test]
fn scheduler_flat_losses_stop_at_epoch_nine() {
    let mut s = SchedulerState::new(SchedulerConfig::default(), 1e-4);
    let stop_epoch = (1..=20).find(|_| s.update(2.0).unwrap().should_stop);
    assert_eq!(stop_epoch, Some(9));
    // Reductions at epochs 4 and 7 (plateau counter restarts after each).
    assert_eq!(s.lr, 2.5e-5);
}

#[test]
fn scheduler_decreasing_never_stops() {
    let mut s = SchedulerState::new(SchedulerConfig::default(), 1e-4);
    for i in 0..100 {
        let e = s.update(10.0 - 0.01 * i as f64).unwrap();
        assert!(e.improved && !e.should_stop && e.lr == 1e-4);
    }
    assert!(matches!(s.update(f64::NAN), Err(Error::NonFinite(_))));
}

#[test]
fn scheduler_respects_min_delta_and_min_lr() {
    let cfg = SchedulerConfig { lr_patience: 1, min_lr: 3e-5, early_stop: false, ..Default::default() };
    let mut s = SchedulerState::new(cfg, 1e-4);
    s.update(1.0).unwrap();
    let e = s.update(1.0 - 5e-5).unwrap();
    assert!(!e.improved && e.lr == 5e-5);
    assert_eq!(s.update(1.0).unwrap().lr, 3e-5);
    assert_eq!(s.update(1.0).unwrap().lr, 3e-5);
    assert!(!s.update(1.0).unwrap().should_stop);
    let json = serde_json::to_string(&s).unwrap();
    assert_eq!(serde_json::from_str::<SchedulerState>(&json).unwrap(), s);
}

#[test]
fn tape_based_ce_needs_matching_shapes() {
    let mut t = Tape::<f64>::new();
    let z = t.constant(Tensor::zeros(vec![2, 3]));
    assert!(matches!(weighted_cross_entropy(&mut t, z, &[0], &ClassWeights::uniform(3)), Err(Error::Dimension(_))));
    assert!(matches!(weighted_cross_entropy(&mut t, z, &[0, 1], &ClassWeights::uniform(2)), Err(Error::Dimension(_))));
}
