//! End-to-end acceptance checks. Runs as a plain binary so that every
//! check prints its own PASS/FAIL line; exits non-zero if any fails.

mod common;

use std::time::Instant;

use common::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tinyattn::backbone::Injection;
use tinyattn::checkpoint;
use tinyattn::model::ParamCounts;
use tinyattn::nn::{count_params, Params};
use tinyattn::trainer::{evaluate, train, LrSchedule, TrainReport};
use tinyattn::{
    count_adapter_params, AdamW, AdapterConfig, AdapterStack, Backbone, BackboneConfig, Mode, Model, Placement, Rule,
    ScheduleKind, TaskSpec, Tensor, TinyAttnAdapter, TrainConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- merging

fn merged_head_equivalence() -> Outcome {
    let started = Instant::now();
    let mut r = rng(100);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let heads = [2, 4, 8][i % 3];
        let head_dim = [1, 4][(i / 3) % 2];
        let mut a = TinyAttnAdapter::zeros(32, AdapterConfig { heads, head_dim, with_biases: true });
        a.visit_mut("", &mut |_, t| t.values_mut().iter_mut().for_each(|v| *v = r.gen_range(-1.0..1.0)));
        let z = Tensor::uniform(&[2, 9, 32], -2.0, 2.0, &mut r);
        let merged = a.merge_heads().apply(&z, None).unwrap();
        let reference = a.head_averaged().apply(&z, None).unwrap();
        worst = worst.max(merged.max_abs_diff(&reference));
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(worst <= 1e-12 && secs < 10.0, format!("max abs diff {worst:.2e} over 100 adapters in {secs:.2}s"))
}

// ------------------------------------------------------------- gradients

fn gradient_fidelity() -> Outcome {
    let started = Instant::now();
    let mut worst: (f64, String) = (0.0, String::new());
    let mut tensors = 0;
    for placement in [Placement::Sequential, Placement::Parallel] {
        let model = adapted_model(200, placement, 1, 0.5);
        let batch = random_batch(&mut rng(201), 2, 8, 64, 3);
        for (name, err) in model_gradcheck(&model, &batch, 1e-5) {
            tensors += 1;
            if err > worst.0 {
                worst = (err, format!("{placement:?} {name}"));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst.0 <= 1e-4 && secs < 120.0,
        format!("{tensors} tensors, worst relative error {:.2e} ({}) in {secs:.1}s", worst.0, worst.1),
    )
}

// ---------------------------------------------------------- identity start

fn near_identity_start() -> Outcome {
    let mut r = rng(300);
    let backbone = Backbone::init(small_config(), &mut r).unwrap();
    let stack = AdapterStack::init_single_head(2, 32, AdapterConfig::default(), Placement::Sequential, 0.01, &mut r);
    let inj = Injection {
        adapters: &stack.layers,
        placement: stack.placement,
    };
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let batch = random_batch(&mut r, 8, 16, 64, 2);
        let plain = backbone.cls_embedding(&batch, None).unwrap();
        let adapted = backbone.cls_embedding(&batch, Some(inj)).unwrap();
        let diff: Vec<f64> = plain.values().iter().zip(adapted.values()).map(|(a, b)| a - b).collect();
        let rel = Tensor::new(plain.shape().to_vec(), diff).unwrap().l2_norm() / plain.l2_norm();
        worst = worst.max(rel);
    }
    outcome(worst <= 1e-2, format!("worst relative L2 distance {worst:.2e} over 100 batches"))
}

// --------------------------------------------------------------- freezing

fn freezing_contract() -> Outcome {
    let mut model = adapted_model(400, Placement::Sequential, 1, 0.01);
    let snapshot = model.backbone.clone();
    let mut opt = AdamW::new(0.01);
    let mut r = rng(401);
    for _ in 0..200 {
        let batch = random_batch(&mut r, 8, 16, 64, 3);
        model.compute_grads(&batch).unwrap();
        opt.update(&mut model, 1e-2).unwrap();
    }
    let mut before = Vec::new();
    snapshot.visit("", &mut |_, t| before.push(t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()));
    let mut changed = Vec::new();
    let mut i = 0;
    model.backbone.visit("", &mut |name, t| {
        if t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>() != before[i] || t.grad.is_some() {
            changed.push(name.to_string());
        }
        i += 1;
    });
    outcome(
        changed.is_empty(),
        format!("{} backbone tensors checked after 200 steps, {} changed", before.len(), changed.len()),
    )
}

// --------------------------------------------------------------- transfer

const PRETRAIN_SEED: u64 = 1;
const DOWNSTREAM_SEED: u64 = 2;

fn pretrain() -> (Backbone, f64, f64) {
    let started = Instant::now();
    let task = TaskSpec::new(Rule::PretrainNextset, PRETRAIN_SEED);
    let mut r = rng(500);
    let mut model = Model::new(Backbone::init(BackboneConfig::default(), &mut r).unwrap(), 4, &mut r);
    let config = TrainConfig {
        epochs: 6,
        train_size: 4000,
        val_size: 1000,
        lr: 1e-3,
        mode: Mode::FullFinetune,
        ..TrainConfig::default()
    };
    train(&mut model, &task, &config).unwrap();
    let accuracy = evaluate(&model, &task, 1000).unwrap();
    (model.backbone, accuracy, started.elapsed().as_secs_f64())
}

fn finetune_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 10,
        train_size: 4000,
        val_size: 1000,
        lr: 1e-3,
        mode: Mode::FullFinetune,
        seed,
        ..TrainConfig::default()
    }
}

/// Adapter runs draw fresh examples rather than cycling a small set: with
/// so few trainable parameters the decoder otherwise memorizes before the
/// attention scores find the positions that matter.
fn adapter_config(seed: u64, epochs: usize, train_size: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        train_size,
        val_size: 1000,
        lr: 5e-3,
        schedule: ScheduleKind::Constant,
        mode: Mode::AdapterTune,
        seed,
        ..TrainConfig::default()
    }
}

fn finetune(backbone: &Backbone, task: &TaskSpec, seed: u64) -> TrainReport {
    let mut model = Model::new(backbone.clone(), task.classes(), &mut seeded(seed, 1));
    train(&mut model, task, &finetune_config(seed)).unwrap()
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = rng(seed);
    r.set_stream(stream);
    r
}

fn adapter_model(backbone: &Backbone, task: &TaskSpec, seed: u64, placement: Placement) -> Model {
    let mut r = seeded(seed, 2);
    let mut model = Model::new(backbone.clone(), task.classes(), &mut r);
    let stack = AdapterStack::init_single_head(
        backbone.config.layers,
        backbone.config.hidden,
        AdapterConfig::default(),
        placement,
        0.01,
        &mut r,
    );
    model.attach_adapters(stack).unwrap();
    model
}

fn transfer_efficacy(backbone: &Backbone, pretrain_accuracy: f64, pretrain_secs: f64) -> Outcome {
    let mut pass = pretrain_accuracy >= 0.95;
    let mut detail = format!("pretrain accuracy {pretrain_accuracy:.3} ({pretrain_secs:.0}s)");
    for rule in [Rule::MatchPair, Rule::FirstLast] {
        let started = Instant::now();
        let task = TaskSpec::new(rule, DOWNSTREAM_SEED);
        let full = finetune(backbone, &task, 0).best_accuracy;
        let mut model = adapter_model(backbone, &task, 0, Placement::Sequential);
        let report = train(&mut model, &task, &adapter_config(0, 6, 100_000)).unwrap();
        let counts = ParamCounts::of(&model);
        let total = counts.backbone + counts.adapter + counts.decoder;
        let fraction = counts.trainable as f64 / total as f64;
        let ratio = report.best_accuracy / full;
        let secs = started.elapsed().as_secs_f64();
        pass &= ratio >= 0.9 && fraction <= 0.05 && secs <= 600.0;
        detail += &format!(
            "; {rule}: adapter {:.3} / full {full:.3} = {ratio:.3}, trainable {:.2}% ({secs:.0}s)",
            report.best_accuracy,
            100.0 * fraction
        );
    }
    outcome(pass, detail)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

const SEEDS: [u64; 3] = [11, 12, 13];

fn placements_agree(backbone: &Backbone) -> Outcome {
    let task = TaskSpec::new(Rule::MatchPair, DOWNSTREAM_SEED);
    let mut best = [Vec::new(), Vec::new()];
    for seed in SEEDS {
        for (i, placement) in [Placement::Sequential, Placement::Parallel].into_iter().enumerate() {
            let mut model = adapter_model(backbone, &task, seed, placement);
            let report = train(&mut model, &task, &adapter_config(seed, 2, 40_000)).unwrap();
            best[i].push(report.best_accuracy);
        }
    }
    let (seq, par) = (mean(&best[0]), mean(&best[1]));
    let gap = 100.0 * (seq - par).abs();
    outcome(
        gap <= 2.0,
        format!("match-pair mean best accuracy: sequential {seq:.3} {:?}, parallel {par:.3} {:?}, gap {gap:.2} points", best[0], best[1]),
    )
}

fn head_averaging(backbone: &Backbone) -> Outcome {
    let task = TaskSpec::new(Rule::MatchPair, DOWNSTREAM_SEED);
    let (mut single, mut merged) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let mut model = adapter_model(backbone, &task, seed, Placement::Sequential);
        let report = train(&mut model, &task, &adapter_config(seed, 2, 40_000)).unwrap();
        single.push(report.best_accuracy);

        let one = model.adapters.take().unwrap();
        let four = one.init_from_single(4, 1e-3, &mut seeded(seed, 3)).unwrap();
        model.attach_adapters(four).unwrap();
        train(&mut model, &task, &adapter_config(seed, 1, 40_000)).unwrap();
        let stack = model.adapters.take().unwrap();
        model.attach_adapters(stack.merge_heads()).unwrap();
        merged.push(evaluate(&model, &task, 1000).unwrap());
    }
    let (s, m) = (mean(&single), mean(&merged));
    outcome(
        m >= s - 0.01,
        format!("match-pair mean accuracy: 1-head {s:.3} {single:?}, merged 4-head {m:.3} {merged:?}"),
    )
}

// ------------------------------------------------------------- accounting

fn parameter_accounting() -> Outcome {
    let mut pass = true;
    let mut r = rng(800);
    let backbone = Backbone::init(small_config(), &mut r).unwrap();
    for heads in [1, 2, 4] {
        for head_dim in [1, 3] {
            for with_biases in [false, true] {
                let config = AdapterConfig { heads, head_dim, with_biases };
                let stack = AdapterStack::init_single_head(2, 32, AdapterConfig { heads: 1, ..config }, Placement::Sequential, 0.01, &mut r);
                let stack = if heads > 1 { stack.init_from_single(heads, 0.0, &mut r).unwrap() } else { stack };
                let closed = 4 * 2 * heads * 32 * head_dim + if with_biases { 2 * heads * (3 * head_dim + 32) } else { 0 };
                pass &= count_params(&stack) == closed && count_adapter_params(2, 32, heads, head_dim, with_biases) == closed;
                let mut model = Model::new(backbone.clone(), 2, &mut r);
                model.attach_adapters(stack).unwrap();
                pass &= ParamCounts::of(&model).trainable == model.trainable_count();
            }
        }
    }
    let large = BackboneConfig::roberta_large();
    let counts = ParamCounts::from_configs(
        &large,
        Some(AdapterConfig { heads: 1, head_dim: 1, with_biases: false }),
        2,
        false,
    );
    let percent_of_355m = 100.0 * counts.adapter as f64 / 355e6;
    pass &= counts.adapter == 98_304 && percent_of_355m <= 0.06;
    outcome(
        pass,
        format!(
            "closed form matches at toy scale; roberta-large shape: adapter {} = {percent_of_355m:.4}% of 355M (backbone {})",
            counts.adapter, counts.backbone
        ),
    )
}

// ---------------------------------------------------- schedule, optimizer

fn schedule_and_optimizer() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let warm = LrSchedule::new(ScheduleKind::Linear, 10, 100, 0.1).unwrap();
    let cosine = LrSchedule::new(ScheduleKind::Cosine, 10, 110, 0.1).unwrap();
    let anchors = [warm.lr_at(0) == 0.0, close(warm.lr_at(10), 0.1), close(cosine.lr_at(60), 0.05)];

    struct One(tinyattn::tensor::Tensor<f64>);
    impl Params<f64> for One {
        fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &tinyattn::tensor::Tensor<f64>)) {
            f(p, &self.0)
        }
        fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut tinyattn::tensor::Tensor<f64>)) {
            f(p, &mut self.0)
        }
    }
    let step = |g: f64, wd: f64| {
        let mut t = Tensor::scalar(1.0).trainable(true);
        t.grad = Some(vec![g]);
        let mut p = One(t);
        AdamW::new(wd).update(&mut p, 0.1).unwrap();
        p.0.values()[0]
    };
    // first step: m̂ = g, v̂ = g²
    let eps = 1e-8;
    let adamw = [
        close(step(1.0, 0.0), 1.0 - 0.1 / (1.0 + eps)),
        close(step(1.0, 0.01), 1.0 - 0.1 / (1.0 + eps) - 0.1 * 0.01),
        step(0.0, 0.0) == 1.0,
    ];
    let ok = anchors.iter().chain(&adamw).filter(|&&b| b).count();
    outcome(ok == 6, format!("{ok}/6 hand values within 1e-12"))
}

// ----------------------------------------------------------- determinism

fn determinism_and_persistence() -> Outcome {
    let task = TaskSpec::new(Rule::Majority, 900);
    let run = || {
        let mut model = adapted_model(901, Placement::Parallel, 2, 0.1);
        model.decoder = tinyattn::nn::Linear::init(32, 2, &mut rng(902));
        tinyattn::nn::set_trainable(&mut model.decoder, true);
        let config = TrainConfig {
            epochs: 2,
            train_size: 160,
            val_size: 100,
            lr: 3e-3,
            seed: 903,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &task, &config).unwrap();
        let trace: Vec<[u64; 5]> = report
            .records
            .iter()
            .map(|r| [r.step as u64, r.epoch.to_bits(), r.lr.to_bits(), r.train_loss.to_bits(), r.val_accuracy.to_bits()])
            .collect();
        (model, trace)
    };
    let (model, a) = run();
    let (_, b) = run();
    let bytes = checkpoint::to_bytes(&model, 903, Some(&task)).unwrap();
    let (loaded, _) = checkpoint::from_bytes::<f64>(&bytes).unwrap();
    let again = checkpoint::to_bytes(&loaded, 903, Some(&task)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &loaded, 903, Some(&task)).unwrap();
    let on_disk = std::fs::read(&path).unwrap();
    outcome(
        a == b && bytes == again && on_disk == bytes,
        format!("{} records identical bit for bit; {}-byte checkpoint round trip identical", a.len(), bytes.len()),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |name: &str, o: Outcome| {
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failures += usize::from(!o.pass);
    };
    report("merged-head equivalence", merged_head_equivalence());
    report("gradient fidelity", gradient_fidelity());
    report("near-identity start", near_identity_start());
    report("freezing contract", freezing_contract());
    let (backbone, accuracy, secs) = pretrain();
    report("transfer efficacy", transfer_efficacy(&backbone, accuracy, secs));
    report("sequential vs parallel placement", placements_agree(&backbone));
    report("head averaging", head_averaging(&backbone));
    report("parameter accounting", parameter_accounting());
    report("schedule and optimizer", schedule_and_optimizer());
    report("determinism and persistence", determinism_and_persistence());
    if failures > 0 {
        println!("{failures} acceptance check(s) failed");
        std::process::exit(1);
    }
    println!("all acceptance checks passed");
}
