//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Run a subset with `cargo test --test acceptance -- 1 4 10`. The full
//! 80-epoch LeNet5 protocol runs only with `PANNING_FULL_PROTOCOL=1`.

use std::io;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use panning::autodiff::{default_step, gradient, hvp_fd, AutodiffError, Tape, Var};
use panning::cli::{cmd_prune, cmd_rl_train, cmd_train, Config};
use panning::data::{synthetic_classification, DATA_DIR_ENV};
use panning::metrics::{self, balanced_batch, Metric};
use panning::model::{Activation, Mask, NetworkSpec, Parameters};
use panning::pruner::{
    effective_compression, iterative_single_metric, keep_count, panning, schedule_ratio, topk_mask, FusionSchedule,
    RunSettings,
};
use panning::rl_env::{reward, EnvState};
use panning::tensor::Tensor;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict { pass, detail: detail.into() })
}

// ---------------------------------------------------------------- helpers

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect())
}

/// Values bounded away from 0, for primitives with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, v)
}

type Primitive = dyn Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>;
type Case = (Vec<Tensor>, Box<Primitive>);

/// Relative error between reverse-mode and central-difference gradients of
/// `Σ f(inputs) ⊙ R` for a fixed random `R`.
fn gradcheck(rng: &mut ChaCha8Rng, inputs: &[Tensor], f: &Primitive) -> Result<f64> {
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).shape().to_vec()
    };
    let weights = random_tensor(rng, &probe);
    let eval = |xs: &[Tensor], grads: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let r = tape.constant(weights.clone());
        let prod = tape.mul(out, r)?;
        let loss = tape.sum(prod);
        let value = tape.value(loss).item();
        if !grads {
            return Ok((value, Vec::new()));
        }
        let g = tape.backward(loss)?;
        Ok((value, vars.iter().map(|&v| g.wrt(v).into_data()).collect()))
    };
    let (_, analytic) = eval(inputs, true)?;
    let h = 1e-5;
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for (i, x) in inputs.iter().enumerate() {
        for (j, &a) in analytic[i].iter().enumerate() {
            let mut shifted = inputs.to_vec();
            shifted[i].data_mut()[j] = x.data()[j] + h;
            let plus = eval(&shifted, false)?.0;
            shifted[i].data_mut()[j] = x.data()[j] - h;
            let minus = eval(&shifted, false)?.0;
            let fd = (plus - minus) / (2.0 * h);
            diff += (a - fd).powi(2);
            scale = scale.max(a.abs()).max(fd.abs());
        }
    }
    let norm: f64 = analytic.iter().flatten().map(|a| a * a).sum::<f64>().sqrt();
    Ok(diff.sqrt() / norm.max(scale).max(1e-12))
}

fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn mnist_available() -> bool {
    data_root().join("mnist/train-images-idx3-ubyte").exists()
}

/// Reduced protocol: first 10k training samples, 10 epochs, batch 256, full test set.
fn reduced_config(out: &Path, seed: u64, method: &str, target: f64, iterations: usize) -> Config {
    let mut c = Config::default();
    for kv in [
        format!("run.out={}", out.display()),
        format!("run.seed={seed}"),
        format!("data.root={}", data_root().display()),
        "data.train_subset=10000".into(),
        "train.epochs=10".into(),
        "train.eval_every=0".into(),
        format!("panning.method={method}"),
        format!("panning.target={target}"),
        format!("panning.T={iterations}"),
    ] {
        c.set(&kv).expect("registered key");
    }
    c
}

fn prune_and_train(cfg: &Config) -> Result<(f64, f64)> {
    let pruned = cmd_prune(cfg, &mut io::sink())?;
    let trained = cmd_train(cfg, &mut io::sink())?;
    Ok((trained.summary.test_acc, pruned.summary.rho_e))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

// ---------------------------------------------------------------- criteria

fn gradient_correctness() -> Result<Verdict> {
    const CASES: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut run = |name: &'static str,
                   rng: &mut ChaCha8Rng,
                   make: &dyn Fn(&mut ChaCha8Rng) -> Case|
     -> Result<()> {
        let mut max = 0.0f64;
        for _ in 0..CASES {
            let (inputs, f) = make(rng);
            max = max.max(gradcheck(rng, &inputs, f.as_ref())?);
        }
        worst.push((name, max));
        Ok(())
    };
    run("matmul", &mut rng, &|r| {
        let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
        (vec![random_tensor(r, &[m, k]), random_tensor(r, &[k, n])], Box::new(|t, v| t.matmul(v[0], v[1])))
    })?;
    run("matmul_t", &mut rng, &|r| {
        let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
        (vec![random_tensor(r, &[m, k]), random_tensor(r, &[n, k])], Box::new(|t, v| t.matmul_t(v[0], v[1])))
    })?;
    run("conv2d", &mut rng, &|r| {
        let (n, c, o) = (r.gen_range(1..3), r.gen_range(1..3), r.gen_range(1..3));
        let k = r.gen_range(1..4);
        let (h, w) = (r.gen_range(k..k + 4), r.gen_range(k..k + 4));
        let (stride, padding) = (r.gen_range(1..3), r.gen_range(0..2));
        let inputs = vec![random_tensor(r, &[n, c, h, w]), random_tensor(r, &[o, c, k, k])];
        (inputs, Box::new(move |t, v| t.conv2d(v[0], v[1], stride, padding)))
    })?;
    run("add_bias", &mut rng, &|r| {
        let (n, c) = (r.gen_range(1..4), r.gen_range(1..4));
        let shape = if r.gen_bool(0.5) { vec![n, c] } else { vec![n, c, r.gen_range(1..4), r.gen_range(1..4)] };
        (vec![random_tensor(r, &shape), random_tensor(r, &[c])], Box::new(|t, v| t.add_bias(v[0], v[1])))
    })?;
    for (name, op) in [("add", 0), ("sub", 1), ("mul", 2)] {
        run(name, &mut rng, &move |r| {
            let shape = [r.gen_range(1..5), r.gen_range(1..5)];
            let f: Box<Primitive> = match op {
                0 => Box::new(|t, v| t.add(v[0], v[1])),
                1 => Box::new(|t, v| t.sub(v[0], v[1])),
                _ => Box::new(|t, v| t.mul(v[0], v[1])),
            };
            (vec![random_tensor(r, &shape), random_tensor(r, &shape)], f)
        })?;
    }
    run("scale", &mut rng, &|r| {
        let s: f64 = r.gen_range(-3.0..3.0);
        (vec![{ let n = r.gen_range(1..6); random_tensor(r, &[n, 3]) }], Box::new(move |t, v| Ok(t.scale(v[0], s))))
    })?;
    run("relu", &mut rng, &|r| (vec![{ let n = r.gen_range(1..6); away_from_zero(r, &[n, 4]) }], Box::new(|t, v| Ok(t.relu(v[0])))))?;
    run("tanh", &mut rng, &|r| (vec![{ let n = r.gen_range(1..6); random_tensor(r, &[n, 4]) }], Box::new(|t, v| Ok(t.tanh(v[0])))))?;
    run("abs", &mut rng, &|r| (vec![{ let n = r.gen_range(1..6); away_from_zero(r, &[n, 4]) }], Box::new(|t, v| Ok(t.abs(v[0])))))?;
    run("sum", &mut rng, &|r| (vec![{ let n = r.gen_range(1..6); random_tensor(r, &[n, 3, 2]) }], Box::new(|t, v| Ok(t.sum(v[0])))))?;
    run("mean", &mut rng, &|r| (vec![{ let n = r.gen_range(1..6); random_tensor(r, &[n, 5]) }], Box::new(|t, v| Ok(t.mean(v[0])))))?;
    run("avg_pool2d", &mut rng, &|r| {
        let size = r.gen_range(1..4);
        let shape = [r.gen_range(1..3), r.gen_range(1..3), r.gen_range(size..size + 5), r.gen_range(size..size + 5)];
        (vec![random_tensor(r, &shape)], Box::new(move |t, v| t.avg_pool2d(v[0], size)))
    })?;
    run("softmax_cross_entropy", &mut rng, &|r| {
        let (n, c) = (r.gen_range(1..6), r.gen_range(2..6));
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
        let mut logits = random_tensor(r, &[n, c]);
        logits.data_mut().iter_mut().for_each(|x| *x *= 3.0);
        (vec![logits], Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels)))
    })?;
    run("concat_cols", &mut rng, &|r| {
        let n = r.gen_range(1..5);
        let (p, q) = (r.gen_range(1..4), r.gen_range(1..4));
        let inputs = vec![random_tensor(r, &[n, p]), random_tensor(r, &[n, q])];
        (inputs, Box::new(|t, v| t.concat_cols(v[0], v[1])))
    })?;
    run("reshape", &mut rng, &|r| {
        let (a, b, c) = (r.gen_range(1..4), r.gen_range(1..4), r.gen_range(1..4));
        (vec![random_tensor(r, &[a, b, c])], Box::new(move |t, v| t.reshape(v[0], &[a * b, c])))
    })?;
    let (name, max) = worst.iter().cloned().fold(("", 0.0), |acc, w| if w.1 > acc.1 { w } else { acc });
    verdict(
        max < 1e-5,
        format!("{} primitives x {CASES} cases, worst rel. error {max:.2e} ({name}), tolerance 1e-5", worst.len()),
    )
}

fn hvp_correctness() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for n in 1..=50 {
        for _ in 0..4 {
            let b: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // Symmetric A = (B + Bᵀ)/2.
            let a: Vec<f64> = (0..n * n).map(|i| 0.5 * (b[i] + b[(i % n) * n + i / n])).collect();
            let lin: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (at, lt) = (Tensor::from_vec(&[n, n], a.clone()), Tensor::from_vec(&[n, 1], lin.clone()));
            // L(θ) = ½ θᵀAθ + bᵀθ, differentiated on the tape.
            let grad = |x: &[f64]| -> Result<Vec<f64>, AutodiffError> {
                let f = |t: &mut Tape, x: Var| {
                    let col = t.reshape(x, &[n, 1])?;
                    let am = t.constant(at.clone());
                    let ax = t.matmul(am, col)?;
                    let quad = t.mul(col, ax)?;
                    let q = t.sum(quad);
                    let half = t.scale(q, 0.5);
                    let bl = t.constant(lt.clone());
                    let bx = t.mul(bl, col)?;
                    let l = t.sum(bx);
                    t.add(half, l)
                };
                Ok(gradient(f, x)?.1)
            };
            let hv = hvp_fd(grad, &theta, &v, default_step(&theta))?;
            for i in 0..n {
                let exact: f64 = (0..n).map(|j| a[i * n + j] * v[j]).sum();
                worst = worst.max((hv[i] - exact).abs());
            }
            cases += 1;
        }
    }
    verdict(worst < 1e-8, format!("{cases} quadratics, dims 1..=50, max abs. error {worst:.2e}, tolerance 1e-8"))
}

fn synflow_conservation() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut dense_worst, mut masked_worst) = (0.0f64, 0.0f64);
    for case in 0..30 {
        let depth = rng.gen_range(1..6);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..40)).collect();
        let inputs = rng.gen_range(1..30);
        let act = if case % 2 == 0 { Activation::Relu } else { Activation::Tanh };
        let spec = NetworkSpec::mlp(&[inputs], &hidden, rng.gen_range(1..12), act);
        let p = Parameters::init(&spec, case)?;
        let sparse = Mask::from_keep(&p, (0..p.weight_count()).map(|_| rng.gen_bool(0.8)).collect())?;
        for (mask, worst) in [(Mask::ones(&p), &mut dense_worst), (sparse, &mut masked_worst)] {
            let s = metrics::synflow_score(&p, &mask)?;
            // Oracle: each layer's kept-weight total equals R, the output sum of
            // the linearized network, computed by a separate forward pass.
            let eff: Vec<f64> = mask.apply(&p.weights).iter().map(|w| w.abs()).collect();
            let (r, _) = panning::model::path_flow(&p, &eff)?;
            for range in p.layer_ranges() {
                let total: f64 = range.filter(|&i| mask.get(i)).map(|i| s.values[i]).sum();
                *worst = worst.max((total - r).abs() / r.abs().max(1e-300));
            }
        }
    }
    verdict(
        dense_worst < 1e-8,
        format!(
            "30 random dense chains, max rel. deviation of layer totals {dense_worst:.2e} (tolerance 1e-8); kept-weight totals of masked chains {masked_worst:.2e}"
        ),
    )
}

fn schedule_and_mask_exactness() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut endpoint_failures = 0;
    for _ in 0..1000 {
        let target: f64 = rng.gen_range(1e-6..1.0 - 1e-9);
        let t = rng.gen_range(1..500);
        if schedule_ratio(0, t, target) != 0.0 || schedule_ratio(t, t, target) != target {
            endpoint_failures += 1;
        }
    }
    let (mut mismatches, mut cases, mut zero_keep) = (0, 0, 0);
    while cases < 1000 {
        let spec = NetworkSpec::mlp(&[rng.gen_range(1..20)], &[rng.gen_range(1..30)], rng.gen_range(1..10), Activation::Relu);
        let p = Parameters::init(&spec, cases as u64)?;
        let m = p.weight_count();
        let ratio: f64 = rng.gen_range(0.0..1.0);
        // Coarse scores force ties.
        let scores: Vec<f64> = (0..m).map(|_| rng.gen_range(0..8) as f64).collect();
        let want = (m as f64 * (1.0 - ratio)).round() as usize;
        match topk_mask(&p, &scores, ratio) {
            Ok(mask) => {
                if mask.count_kept() != want {
                    mismatches += 1;
                }
            }
            Err(_) if want == 0 => zero_keep += 1,
            Err(e) => return Err(e.into()),
        }
        cases += 1;
    }
    // Keep counts along a real run.
    let d = synthetic_classification(4, 10, 12, 3.0, 4);
    let p = Parameters::init(&NetworkSpec::mlp(&[12], &[20, 20], 4, Activation::Relu), 4)?;
    let b = balanced_batch(&d, 4, 5, 4)?;
    let (_, trace) = panning(&p, &b, &RunSettings::new(0.97, 25), FusionSchedule::Banded)?;
    let run_bad = trace
        .records
        .iter()
        .filter(|r| r.keep != keep_count(p.weight_count(), schedule_ratio(r.iteration, 25, 0.97)))
        .count();
    verdict(
        endpoint_failures == 0 && mismatches == 0 && run_bad == 0,
        format!(
            "endpoint failures {endpoint_failures}/1000, keep-count mismatches {mismatches}/1000 ({zero_keep} zero-keep rejections), run mismatches {run_bad}/25"
        ),
    )
}

fn layer_collapse() -> Result<Verdict> {
    let d = synthetic_classification(10, 20, 64, 4.0, 5);
    let spec = NetworkSpec::mlp(&[64], &[32, 32, 32, 32, 32], 10, Activation::Relu);
    let p = Parameters::init(&spec, 5)?;
    let b = balanced_batch(&d, 10, 10, 5)?;
    let rho = 0.99;
    let (snip, _) = iterative_single_metric(&p, &b, Metric::Snip, rho, 1)?;
    let (pan, _) = panning(&p, &b, &RunSettings::new(rho, 100), FusionSchedule::Banded)?;
    let snip_rho_e = effective_compression(&p, &snip)?;
    let pan_rho_e = effective_compression(&p, &pan)?;
    let snip_empty = snip.layer_kept().iter().filter(|&&k| k == 0).count();
    let pan_min = pan.layer_kept().into_iter().min().unwrap_or(0);
    let snip_gap = snip_rho_e - snip.sparsity();
    let pan_gap = (pan_rho_e - pan.sparsity()).abs();
    let pass = snip_empty >= 1 && snip_gap > 0.01 && pan_min >= 1 && pan_gap < 0.01;
    verdict(
        pass,
        format!(
            "m = {}, SNIP: {snip_empty} empty layers, rho_e - rho = {snip_gap:.5} (> 0.01); Panning: min layer kept {pan_min}, |rho_e - rho| = {pan_gap:.5} (< 0.01); layer kept SNIP {:?} Panning {:?}",
            p.weight_count(),
            snip.layer_kept(),
            pan.layer_kept()
        ),
    )
}

fn lenet_table5() -> Result<Verdict> {
    ensure!(mnist_available(), "MNIST not found under {}", data_root().display());
    let dir = tempfile::tempdir()?;
    let start = Instant::now();
    let (acc, rho_e) = prune_and_train(&reduced_config(dir.path(), 0, "panning", 0.9, 100))?;
    let secs = start.elapsed().as_secs_f64();
    let mut detail = format!("reduced protocol: Panning 0.90 accuracy {:.2}% (>= 97.5%), rho_e {rho_e:.4}, {secs:.0}s (< 600s)", acc * 100.0);
    let mut pass = acc >= 0.975 && secs < 600.0;
    if std::env::var("PANNING_FULL_PROTOCOL").is_ok_and(|v| v == "1") {
        let full = |method: &str, sub: &str| -> Result<f64> {
            let mut c = reduced_config(&dir.path().join(sub), 0, method, 0.9, 100);
            c.set("data.train_subset=0")?;
            c.set("train.epochs=80")?;
            Ok(prune_and_train(&c)?.0)
        };
        let pan = full("panning", "full-panning")?;
        let dense = full("dense", "full-dense")?;
        pass &= pan >= 0.985 && dense >= 0.990;
        detail.push_str(&format!("; full protocol: Panning {:.2}% (>= 98.5%), dense {:.2}% (>= 99.0%)", pan * 100.0, dense * 100.0));
    } else {
        detail.push_str("; full 80-epoch protocol skipped (set PANNING_FULL_PROTOCOL=1)");
    }
    verdict(pass, detail)
}

fn grasp_direction() -> Result<Verdict> {
    ensure!(mnist_available(), "MNIST not found under {}", data_root().display());
    let dir = tempfile::tempdir()?;
    let (mut modified, mut original) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        for (method, acc) in [("grasp", &mut modified), ("grasp-original", &mut original)] {
            let out = dir.path().join(format!("{method}-{seed}"));
            acc.push(prune_and_train(&reduced_config(&out, seed, method, 0.99, 1))?.0);
        }
    }
    let (m, o) = (mean(&modified), mean(&original));
    verdict(
        m >= o,
        format!("single-shot at 0.99, 3 seeds: modified GraSP {:.2}% {modified:.4?} vs original {:.2}% {original:.4?}", m * 100.0, o * 100.0),
    )
}

fn extreme_sparsity() -> Result<Verdict> {
    ensure!(mnist_available(), "MNIST not found under {}", data_root().display());
    let dir = tempfile::tempdir()?;
    let runs = [("panning", "panning", 100), ("iterative SNIP", "snip", 100), ("single-shot SNIP", "snip", 1)];
    let mut means = Vec::new();
    let mut detail = String::from("rho 0.999, 3 seeds:");
    for (label, method, t) in runs {
        let mut accs = Vec::new();
        for seed in 0..3 {
            let out = dir.path().join(format!("{method}-{t}-{seed}"));
            accs.push(prune_and_train(&reduced_config(&out, seed, method, 0.999, t))?.0);
        }
        means.push(mean(&accs));
        detail.push_str(&format!(" {label} {:.2}% {accs:.4?};", mean(&accs) * 100.0));
    }
    verdict(means[0] >= means[1] && means[0] >= means[2], detail)
}

fn rl_sanity() -> Result<Verdict> {
    let zero = EnvState { loss: 1.0, delta_loss: 1.0, sparse_loss: 1.0, sparse_delta: 1.0, rho_t: 0.5, rho_e: 0.5, t: 0.3 };
    let r0 = reward(&zero, 30, 100, 100.0);
    let collapsed = EnvState { rho_e: 1.0, ..zero };
    let rc = reward(&collapsed, 30, 100, 100.0);
    let identities = r0.total == 0.0 && !r0.done && rc.r_done == 70.0 && rc.done;
    let dir = tempfile::tempdir()?;
    let mut c = Config::default();
    for kv in [format!("run.out={}", dir.path().display()), "td3.max_steps=50000".into(), "env.network=reduced".into(), "env.T=20".into(), "env.eval_episodes=20".into()] {
        c.set(&kv)?;
    }
    let start = Instant::now();
    let out = cmd_rl_train(&c, &mut io::sink())?;
    let secs = start.elapsed().as_secs_f64();
    let s = &out.summary;
    let pass = identities && s.agent_mean > s.random_mean && s.margin >= 3.0 * s.standard_error && secs < 3600.0;
    verdict(
        pass,
        format!(
            "identities {}: zero penalty -> {}, collapse at t=30/T=100 -> r_done {}; TD3 5e4 steps: agent {:.4} vs random {:.4}, margin {:.4} = {:.2} SE (>= 3), {secs:.0}s (< 3600s)",
            if identities { "hold" } else { "FAIL" },
            r0.total,
            rc.r_done,
            s.agent_mean,
            s.random_mean,
            s.margin,
            s.margin / s.standard_error
        ),
    )
}

fn reproducibility() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let mut c = Config::default();
    for kv in [
        format!("run.out={}", a.display()),
        "run.seed=17".into(),
        "data.family=synthetic".into(),
        "data.dims=20".into(),
        "data.per_class=30".into(),
        "data.test_per_class=10".into(),
        "model.arch=mlp".into(),
        "model.hidden=24,24".into(),
        "panning.T=15".into(),
        "panning.target=0.95".into(),
        "metrics.resample=true".into(),
        "train.epochs=3".into(),
        "train.batch=32".into(),
        "td3.max_steps=400".into(),
        "td3.start_steps=100".into(),
        "td3.batch=32".into(),
        "env.eval_episodes=3".into(),
    ] {
        c.set(&kv)?;
    }
    cmd_prune(&c, &mut io::sink())?;
    cmd_train(&c, &mut io::sink())?;
    cmd_rl_train(&c, &mut io::sink())?;
    for command in ["prune", "train", "rl-train"] {
        let mut again = Config::load(&a.join(format!("{command}.config")))?;
        again.set(&format!("run.out={}", b.display()))?;
        match command {
            "prune" => drop(cmd_prune(&again, &mut io::sink())?),
            "train" => drop(cmd_train(&again, &mut io::sink())?),
            _ => drop(cmd_rl_train(&again, &mut io::sink())?),
        }
    }
    let files = ["mask.ckpt", "trace.jsonl", "prune.json", "trained.ckpt", "metrics.csv", "agent.ckpt", "curve.csv", "rl.json"];
    let differing: Vec<&str> = files
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .copied()
        .collect();
    verdict(differing.is_empty(), format!("{} artifacts compared byte for byte, differing: {differing:?}", files.len()))
}

type Criterion = (usize, &'static str, fn() -> Result<Verdict>);

const CRITERIA: &[Criterion] = &[
    (1, "gradient correctness", gradient_correctness),
    (2, "HVP correctness", hvp_correctness),
    (3, "SynFlow conservation", synflow_conservation),
    (4, "schedule/mask exactness", schedule_and_mask_exactness),
    (5, "layer-collapse reproduction", layer_collapse),
    (6, "LeNet5/MNIST at 0.90", lenet_table5),
    (7, "modified vs original GraSP", grasp_direction),
    (8, "Panning at 0.999", extreme_sparsity),
    (9, "RL sanity", rl_sanity),
    (10, "reproducibility", reproducibility),
];

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for &(id, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok(Ok(v)) => (v.pass, v.detail),
            Ok(Err(e)) => (false, format!("error: {e:#}")),
            Err(_) => (false, "panicked".to_string()),
        };
        if !pass {
            failed += 1;
        }
        println!("criterion {id:>2} [{name}]: {} ({secs:.1}s) {detail}", if pass { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
