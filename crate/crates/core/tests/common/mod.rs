#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinyattn::gradcheck::{central_difference, relative_error};
use tinyattn::nn::Params;
use tinyattn::{AdapterConfig, AdapterStack, Backbone, BackboneConfig, Batch, Model, Placement};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_config() -> BackboneConfig {
    BackboneConfig {
        layers: 2,
        hidden: 32,
        heads: 4,
        ffn: 64,
        vocab: 64,
        max_len: 17,
    }
}

/// Random batch of `batch` sequences with `payload` tokens after CLS.
pub fn random_batch(rng: &mut ChaCha8Rng, batch: usize, payload: usize, vocab: usize, classes: usize) -> Batch {
    let seq = payload + 1;
    let ids = (0..batch * seq)
        .map(|i| if i % seq == 0 { 0 } else { rng.gen_range(1..vocab) })
        .collect();
    let labels = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
    Batch::new(ids, labels, seq).unwrap()
}

/// Adapter model whose adapter parameters are all drawn from U(±scale).
pub fn adapted_model(seed: u64, placement: Placement, heads: usize, scale: f64) -> Model {
    let mut r = rng(seed);
    let backbone = Backbone::init(small_config(), &mut r).unwrap();
    let mut model = Model::new(backbone, 3, &mut r);
    let mut stack = AdapterStack::init_single_head(2, 32, AdapterConfig::default(), placement, 0.01, &mut r);
    if heads > 1 {
        stack = stack.init_from_single(heads, 0.0, &mut r).unwrap();
    }
    stack.visit_mut("", &mut |_, t| {
        for v in t.values_mut() {
            *v = r.gen_range(-scale..scale);
        }
    });
    model.attach_adapters(stack).unwrap();
    model
}

/// Worst per-tensor relative error between tape gradients and central
/// differences over every trainable tensor of `model`.
pub fn model_gradcheck(model: &Model, batch: &Batch, step: f64) -> Vec<(String, f64)> {
    let mut m = model.clone();
    m.compute_grads(batch).unwrap();
    let mut analytic = Vec::new();
    m.visit("", &mut |name, t| {
        if t.trainable {
            analytic.push((name.to_string(), t.values().to_vec(), t.grad.clone().unwrap()));
        }
    });
    analytic
        .into_iter()
        .map(|(name, point, grad)| {
            let numeric = central_difference(
                |x| {
                    let mut probe = model.clone();
                    probe.visit_mut("", &mut |n, t| {
                        if n == name {
                            t.values_mut().copy_from_slice(x);
                        }
                    });
                    let mut tape = tinyattn::Tape::new();
                    let l = probe.loss(&mut tape, batch).unwrap();
                    tape.value(l)[0]
                },
                &point,
                step,
            );
            // exactly-zero true gradients (e.g. key biases, which shift every
            // score in a row equally) only carry FD noise
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff: Vec<f64> = grad.iter().zip(&numeric).map(|(a, b)| a - b).collect();
            let err = if norm(&grad).max(norm(&numeric)) < 1e-6 {
                if norm(&diff) <= 1e-8 { 0.0 } else { f64::INFINITY }
            } else {
                relative_error(&grad, &numeric)
            };
            (name, err)
        })
        .collect()
}
