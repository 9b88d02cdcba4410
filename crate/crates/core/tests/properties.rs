mod common;

use std::sync::Arc;

use panning::data::{synthetic_classification, Dataset};
use panning::metrics::{self, balanced_batch, FusionWeights, Metric, Normalization};
use panning::model::{forward, forward_with, Activation, Mask, NetworkSpec, Parameters};
use panning::pruner::{
    banded_weights, effective_compression, keep_count, panning, schedule_ratio, topk_keep, topk_mask, FusionSchedule,
    PanningRun, RunSettings,
};
use panning::rl_env::{action_to_weights, reward, Curriculum, EnvConfig, EnvState, PanningEnv};
use panning::tensor::Tensor;
use panning::trainer::{evaluate, train_sparse, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_net(seed: u64) -> Parameters {
    Parameters::init(&NetworkSpec::mlp(&[6], &[10, 8], 3, Activation::Relu), seed).unwrap()
}

fn blobs() -> Dataset {
    synthetic_classification(3, 12, 6, 3.0, 11)
}

fn random_mask(params: &Parameters, seed: u64, density: f64) -> Mask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = (0..params.weight_count()).map(|_| rng.gen_bool(density)).collect();
    Mask::from_keep(params, keep).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_forward_is_forward_on_masked_weights(seed in any::<u64>(), density in 0.05f64..1.0) {
        let p = small_net(seed);
        let mask = random_mask(&p, seed ^ 1, density);
        let x = blobs().images.gather_rows(&[0, 5, 17, 30]);
        let a = forward(&p, &mask, &x).unwrap();
        let b = forward_with(&p, &mask.apply(&p.weights), &x).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn topk_keeps_exactly_keep_count(scores in prop::collection::vec(-5.0f64..5.0, 1..300), ratio in 0.0f64..1.0) {
        let keep = keep_count(scores.len(), ratio);
        let kept = topk_keep(&scores, keep).unwrap();
        prop_assert_eq!(kept.iter().filter(|&&k| k).count(), keep.min(scores.len()));
        // Every kept score is at least every dropped score.
        let lo = scores.iter().zip(&kept).filter(|(_, &k)| k).map(|(s, _)| *s).fold(f64::INFINITY, f64::min);
        let hi = scores.iter().zip(&kept).filter(|(_, &k)| !k).map(|(s, _)| *s).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo >= hi);
    }

    #[test]
    fn effective_compression_bounds_nominal(seed in any::<u64>(), density in 0.02f64..1.0) {
        let p = small_net(seed);
        let mask = random_mask(&p, seed, density);
        let rho_e = effective_compression(&p, &mask).unwrap();
        prop_assert!(rho_e >= mask.sparsity() - 1e-15);
        prop_assert!(rho_e <= 1.0);
    }

    #[test]
    fn schedule_strictly_increases(target in 1e-3f64..0.9999, t in 1usize..200) {
        let mut prev = schedule_ratio(0, t, target);
        for i in 1..=t {
            let r = schedule_ratio(i, t, target);
            prop_assert!(r > prev, "i={} {} <= {}", i, r, prev);
            prev = r;
        }
        prop_assert_eq!(prev, target);
    }

    #[test]
    fn rewards_are_nonpositive(
        v in prop::collection::vec(0.0f64..10.0, 4),
        rho_t in 0.0f64..1.0,
        rho_e in 0.0f64..=1.0,
        t in 1usize..150,
        t_max in 1usize..150,
    ) {
        let s = EnvState { loss: v[0], delta_loss: v[1], sparse_loss: v[2], sparse_delta: v[3], rho_t, rho_e, t: 0.0 };
        let r = reward(&s, t, t_max, 5.0);
        prop_assert!(r.total <= 0.0);
        prop_assert_eq!(r.done, rho_e == 1.0 || t >= t_max);
    }

    #[test]
    fn single_metric_fusion_ignores_scale(values in prop::collection::vec(0.001f64..10.0, 2..64), scale in 0.01f64..100.0) {
        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        let p = FusionWeights::only(Metric::Snip);
        let a = metrics::fuse(&p, None, Some(&metrics::normalize(&values, Normalization::Sum).unwrap()), None).unwrap();
        let b = metrics::fuse(&p, None, Some(&metrics::normalize(&scaled, Normalization::Sum).unwrap()), None).unwrap();
        let keep = keep_count(values.len(), 0.5).max(1);
        prop_assert_eq!(topk_keep(&a, keep).unwrap(), topk_keep(&b, keep).unwrap());
    }

    #[test]
    fn actions_map_into_unit_cube(a in prop::array::uniform3(-3.0f64..3.0)) {
        let p = action_to_weights(&a).as_array();
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(p.iter().any(|&v| v > 0.0));
    }
}

#[test]
fn iterative_runs_resurrect_weights() {
    let data = synthetic_classification(4, 20, 16, 3.0, 3);
    let p = Parameters::init(&NetworkSpec::mlp(&[16], &[32, 32], 4, Activation::Relu), 5).unwrap();
    let batch = balanced_batch(&data, 4, 5, 9).unwrap();
    let (mask, trace) = panning(&p, &batch, &RunSettings::new(0.95, 10), FusionSchedule::Banded).unwrap();
    assert_eq!(trace.records.len(), 10);
    let revived: usize = trace.records.iter().map(|r| r.resurrected).sum();
    assert!(revived > 0, "no weight was ever re-admitted");
    assert_eq!(mask.count_kept(), keep_count(p.weight_count(), 0.95));
}

#[test]
fn episodes_stop_by_t() {
    let (mut config, data) = EnvConfig::reduced();
    config.iterations = 6;
    let mut env = PanningEnv::new(config, Arc::new(data)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for episode in 0..3 {
        env.reset_episode(episode, 1.0).unwrap();
        let mut steps = 0;
        while !env.is_done() {
            let a = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let (_, r) = env.step_action(a).unwrap();
            assert!(r.total <= 0.0);
            steps += 1;
        }
        assert!(steps <= 6);
        assert_eq!(env.log().len(), steps);
    }
}

#[test]
fn curriculum_high_band_frequency() {
    let c = Curriculum::default();
    let n = 10_000;
    for (u, expected) in [(0.0, 0.1), (0.5, 0.4), (1.0, 0.7)] {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let targets: Vec<f64> = (0..n).map(|_| c.sample(&mut rng, u)).collect();
        assert!(targets.iter().all(|&t| (0.8..=0.9999).contains(&t)));
        let high = targets.iter().filter(|&&t| t > 0.99).count() as f64 / n as f64;
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((high - expected).abs() < 5.0 * se, "u={u}: {high} vs {expected}");
    }
}

#[test]
fn same_seed_same_episode() {
    let (config, data) = EnvConfig::reduced();
    let data = Arc::new(data);
    let mut a = PanningEnv::new(config.clone(), data.clone()).unwrap();
    let mut b = PanningEnv::new(config, data).unwrap();
    let sa = a.reset_episode(123, 0.3).unwrap();
    let sb = b.reset_episode(123, 0.3).unwrap();
    assert_eq!(a.target(), b.target());
    assert_eq!(sa, sb);
    a.reset_episode(124, 0.3).unwrap();
    assert_ne!(a.target(), b.target());
}

#[test]
fn banded_actions_reproduce_fixed_panning() {
    let (mut config, data) = EnvConfig::reduced();
    config.iterations = 8;
    let params = Parameters::init(&config.spec, 31).unwrap();
    let batch = balanced_batch(&data, config.classes, config.per_class, 32).unwrap();
    let settings = RunSettings::new(0.97, 8);
    let (expected, trace) = panning(&params, &batch, &settings, FusionSchedule::Banded).unwrap();

    let mut env = PanningEnv::new(config, Arc::new(data)).unwrap();
    env.start(params, 0.97, 32).unwrap();
    while !env.is_done() {
        let ratio = env.run().unwrap().next_ratio();
        let p = banded_weights(ratio).as_array();
        let a = p.map(|v| 2.0 * v - 1.0);
        assert_eq!(action_to_weights(&a).as_array(), p);
        env.step_action(a).unwrap();
    }
    assert_eq!(env.run().unwrap().mask(), &expected);
    assert_eq!(env.trace(), &trace);
}

#[test]
fn run_state_tracks_trace() {
    let data = blobs();
    let p = small_net(8);
    let batch = balanced_batch(&data, 3, 4, 1).unwrap();
    let mut run = PanningRun::new(p.clone(), batch, RunSettings::new(0.8, 4)).unwrap();
    while !run.is_finished() {
        let ratio = run.next_ratio();
        let rec = run.step(banded_weights(ratio)).unwrap();
        assert_eq!(rec.ratio, ratio);
        assert_eq!(rec.keep, keep_count(p.weight_count(), ratio));
        assert_eq!(rec.rho_e, run.rho_e());
    }
    let scores = run.fused_scores(&banded_weights(0.8)).unwrap();
    assert_eq!(topk_mask(&p, &scores, 0.8).unwrap().count_kept(), run.mask().count_kept());
}

#[test]
fn linear_probe_separates_blobs() {
    // Centers depend on the seed, so both splits come from one draw.
    let all = synthetic_classification(5, 100, 20, 4.0, 21);
    let (even, odd): (Vec<usize>, Vec<usize>) = (0..all.len()).partition(|i| i % 2 == 0);
    let (train, test) = (all.subset(&even), all.subset(&odd));
    let p = Parameters::init(&NetworkSpec::mlp(&[20], &[], 5, Activation::Relu), 1).unwrap();
    let mask = Mask::ones(&p);
    let cfg = TrainConfig { epochs: 20, batch: 32, ..TrainConfig::default() };
    let (trained, _) = train_sparse(&p, &mask, &train, None, &cfg, |_| {}).unwrap();
    let acc = evaluate(&trained, &mask, &test).unwrap();
    assert!(acc > 0.9, "probe accuracy {acc}");
}

#[test]
fn balanced_batch_has_k_per_class() {
    let data = synthetic_classification(4, 9, 3, 2.0, 0);
    let b = balanced_batch(&data, 4, 7, 2).unwrap();
    for class in 0..4 {
        assert_eq!(b.labels.iter().filter(|&&l| l == class).count(), 7);
    }
    let mut idx = b.indices.clone();
    idx.sort_unstable();
    idx.dedup();
    assert_eq!(idx.len(), 28);
    assert_eq!(b.inputs.shape(), &[28, 3]);
    assert!(balanced_batch(&data, 4, 10, 2).is_err());
}

#[test]
fn ones_input_masks_nothing_in_dense_runs() {
    let p = small_net(2);
    let out = forward(&p, &Mask::ones(&p), &Tensor::ones(&[1, 6])).unwrap();
    assert!(out.all_finite());
    assert_eq!(out.shape(), &[1, 3]);
}

#[test]
fn mnist_train_split_when_present() {
    let root = common::mnist_root();
    if !root.join("mnist/train-images-idx3-ubyte").exists() {
        eprintln!("MNIST not under {}; skipping", root.display());
        return;
    }
    let (train, _, _) = panning::data::load_family(&root, panning::data::ImageFamily::Mnist).unwrap();
    assert_eq!(train.len(), 60_000);
    let b = balanced_batch(&train, 10, 10, 0).unwrap();
    assert_eq!(b.inputs.shape(), &[100, 1, 28, 28]);
}
