//! Tiny-attention adapters.
//!
//! An adapter holds `M` attention heads whose query, key and value vectors
//! have a tiny width `D` (usually 1). For every position `t`, head `m`
//! attends over all unmasked positions of the same sequence:
//!
//! ```text
//! q_t = W_Qᵀ z_t,  k_s = W_Kᵀ z_s,  v_s = W_Vᵀ z_s          (each in R^D)
//! ẑ_t = Σ_s softmax_s(q_t · k_s / √D) v_s
//! out_t = merged_scale · Σ_m (O_m ẑ_t^(m) + b_O^(m))         (in R^H)
//! ```
//!
//! All projection matrices, including `O`, are stored as `[H×D]`, so `O`
//! maps a head vector back to the hidden size.
//!
//! After training, [`TinyAttnAdapter::merge_heads`] averages every per-head
//! parameter into a single head and records `merged_scale = M`. Identical
//! heads produce identical head vectors, so the single head reproduces the
//! head-averaged `M`-head adapter exactly while costing one head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, Params};
use crate::scalar::Scalar;
use crate::tape::{AttnDims, Tape, Var};
use crate::tensor::Tensor;

/// Shape hyperparameters of one adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub with_biases: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            heads: 1,
            head_dim: 1,
            with_biases: true,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 {
            return Err(Error::Config(format!(
                "adapter needs heads ≥ 1 and head_dim ≥ 1, got {} and {}",
                self.heads, self.head_dim
            )));
        }
        Ok(())
    }
}

/// Trainable parameters added by adapters on `layers` layers of hidden
/// size `hidden`: `L·M·(4·H·D)` plus `L·M·(3·D + H)` when biases are used.
pub fn count_adapter_params(layers: usize, hidden: usize, heads: usize, head_dim: usize, with_biases: bool) -> usize {
    let per_head = 4 * hidden * head_dim + if with_biases { 3 * head_dim + hidden } else { 0 };
    layers * heads * per_head
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterHead<S> {
    pub query: Tensor<S>,
    pub key: Tensor<S>,
    pub value: Tensor<S>,
    pub output: Tensor<S>,
    pub query_bias: Option<Tensor<S>>,
    pub key_bias: Option<Tensor<S>>,
    pub value_bias: Option<Tensor<S>>,
    pub output_bias: Option<Tensor<S>>,
}

impl<S: Scalar> AdapterHead<S> {
    fn zeros(hidden: usize, head_dim: usize, with_biases: bool) -> Self {
        let bias = |n| with_biases.then(|| Tensor::zeros(&[n]).trainable(true));
        let mat = || Tensor::zeros(&[hidden, head_dim]).trainable(true);
        Self {
            query: mat(),
            key: mat(),
            value: mat(),
            output: mat(),
            query_bias: bias(head_dim),
            key_bias: bias(head_dim),
            value_bias: bias(head_dim),
            output_bias: bias(hidden),
        }
    }

    fn tensors(&self) -> [Option<&Tensor<S>>; 8] {
        [
            Some(&self.query),
            self.query_bias.as_ref(),
            Some(&self.key),
            self.key_bias.as_ref(),
            Some(&self.value),
            self.value_bias.as_ref(),
            Some(&self.output),
            self.output_bias.as_ref(),
        ]
    }

    fn tensors_mut(&mut self) -> [Option<&mut Tensor<S>>; 8] {
        [
            Some(&mut self.query),
            self.query_bias.as_mut(),
            Some(&mut self.key),
            self.key_bias.as_mut(),
            Some(&mut self.value),
            self.value_bias.as_mut(),
            Some(&mut self.output),
            self.output_bias.as_mut(),
        ]
    }

    const NAMES: [&'static str; 8] = [
        "query.weight",
        "query.bias",
        "key.weight",
        "key.bias",
        "value.weight",
        "value.bias",
        "output.weight",
        "output.bias",
    ];

    /// Projects rows `[N×H]` to `[N×D]` head vectors, with optional bias.
    fn project(tape: &mut Tape<S>, prefix: &str, which: usize, w: &Tensor<S>, b: Option<&Tensor<S>>, z: Var) -> Result<Var> {
        let wv = tape.param(&join(prefix, Self::NAMES[which]), w);
        let y = tape.matmul(z, wv)?;
        match b {
            Some(b) => {
                let bv = tape.param(&join(prefix, Self::NAMES[which + 1]), b);
                tape.add_row(y, bv)
            }
            None => Ok(y),
        }
    }
}

impl<S: Scalar> Params<S> for AdapterHead<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        for (name, t) in Self::NAMES.iter().zip(self.tensors()) {
            if let Some(t) = t {
                f(&join(prefix, name), t);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        for (name, t) in Self::NAMES.iter().zip(self.tensors_mut()) {
            if let Some(t) = t {
                f(&join(prefix, name), t);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyAttnAdapter<S> {
    pub heads: Vec<AdapterHead<S>>,
    pub hidden: usize,
    pub head_dim: usize,
    /// Multiplier on the summed head outputs: 1 while training, `M` after
    /// [`merge_heads`](Self::merge_heads) collapsed `M` heads.
    pub merged_scale: S,
}

impl<S: Scalar> TinyAttnAdapter<S> {
    /// Adapter with every parameter zero, for callers that set weights by hand.
    pub fn zeros(hidden: usize, config: AdapterConfig) -> Self {
        Self {
            heads: (0..config.heads)
                .map(|_| AdapterHead::zeros(hidden, config.head_dim, config.with_biases))
                .collect(),
            hidden,
            head_dim: config.head_dim,
            merged_scale: S::one(),
        }
    }

    /// Fresh single-head adapter: `W_Q, W_K, W_V ~ U(±1/√H)`,
    /// `O ~ U(±scale/√D)`, zero biases. A small `scale` keeps the adapted
    /// model close to the frozen one at the start of training.
    pub fn init_single_head<R: Rng + ?Sized>(hidden: usize, head_dim: usize, with_biases: bool, scale: f64, rng: &mut R) -> Self {
        let mut a = Self::zeros(
            hidden,
            AdapterConfig {
                heads: 1,
                head_dim,
                with_biases,
            },
        );
        let w_bound = 1.0 / (hidden as f64).sqrt();
        let o_bound = scale / (head_dim as f64).sqrt();
        let head = &mut a.heads[0];
        for w in [&mut head.query, &mut head.key, &mut head.value] {
            *w = Tensor::uniform(&[hidden, head_dim], -w_bound, w_bound, rng).trainable(true);
        }
        head.output = Tensor::uniform(&[hidden, head_dim], -o_bound, o_bound, rng).trainable(true);
        a
    }

    /// Expands a single-head adapter to `heads` heads, each a copy of the
    /// original plus `U(±eps)` noise on every parameter. Output weights and
    /// biases are divided by `heads` so that the sum over heads starts out
    /// equal to the single head's output (exactly so when `eps = 0`).
    pub fn init_from_single<R: Rng + ?Sized>(&self, heads: usize, eps: f64, rng: &mut R) -> Result<Self> {
        if self.heads.len() != 1 {
            return Err(Error::Model(format!(
                "init_from_single expects a single-head adapter, got {} heads",
                self.heads.len()
            )));
        }
        if heads == 0 {
            return Err(Error::Model("init_from_single needs at least one head".into()));
        }
        let share = S::one() / S::of_usize(heads);
        let mut out = self.clone();
        out.heads = (0..heads)
            .map(|_| {
                let mut h = self.heads[0].clone();
                h.visit_mut("", &mut |name, t| {
                    for v in t.values_mut() {
                        if eps > 0.0 {
                            *v += S::of(rng.gen_range(-eps..eps));
                        }
                        if name.starts_with("output") {
                            *v *= share;
                        }
                    }
                });
                h
            })
            .collect();
        Ok(out)
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn config(&self) -> AdapterConfig {
        AdapterConfig {
            heads: self.heads.len(),
            head_dim: self.head_dim,
            with_biases: self.heads.first().is_some_and(|h| h.query_bias.is_some()),
        }
    }

    /// Element-wise mean of every per-head parameter.
    pub fn averaged_head(&self) -> AdapterHead<S> {
        let m = S::of_usize(self.heads.len());
        let mut avg = self.heads[0].clone();
        avg.visit_mut("", &mut |_, t| t.values_mut().iter_mut().for_each(|v| *v = S::zero()));
        for head in &self.heads {
            let mut sources = Vec::new();
            head.visit("", &mut |_, t| sources.push(t.values().to_vec()));
            let mut i = 0;
            avg.visit_mut("", &mut |_, t| {
                for (a, &s) in t.values_mut().iter_mut().zip(&sources[i]) {
                    *a += s;
                }
                i += 1;
            });
        }
        avg.visit_mut("", &mut |_, t| t.values_mut().iter_mut().for_each(|v| *v /= m));
        avg
    }

    /// The `M`-head adapter with every head overwritten by the averaged
    /// parameters; the reference that [`merge_heads`](Self::merge_heads)
    /// must reproduce.
    pub fn head_averaged(&self) -> Self {
        let avg = self.averaged_head();
        Self {
            heads: vec![avg; self.heads.len()],
            ..self.clone()
        }
    }

    /// Collapses `M` heads into their average with `merged_scale` scaled by
    /// `M`. Merging a single-head adapter leaves it unchanged.
    pub fn merge_heads(&self) -> Self {
        let m = self.heads.len();
        Self {
            heads: vec![self.averaged_head()],
            hidden: self.hidden,
            head_dim: self.head_dim,
            merged_scale: self.merged_scale * S::of_usize(m),
        }
    }

    /// Adapter output for rows `z: [batch·seq × H]`.
    pub fn forward_rows(&self, tape: &mut Tape<S>, prefix: &str, z: Var, batch: usize, seq: usize, mask: Option<&[bool]>) -> Result<Var> {
        let shape = tape.shape(z);
        if shape.len() != 2 || shape[1] != self.hidden {
            return Err(Error::ShapeMismatch {
                op: "adapter",
                lhs: shape.to_vec(),
                rhs: vec![batch * seq, self.hidden],
            });
        }
        if let Some(m) = mask {
            if m.len() != batch * seq {
                return Err(Error::ShapeMismatch {
                    op: "adapter mask",
                    lhs: vec![batch, seq],
                    rhs: vec![m.len()],
                });
            }
        }
        let dims = AttnDims {
            batch,
            seq,
            heads: 1,
            head_dim: self.head_dim,
        };
        let mut total: Option<Var> = None;
        for (m, head) in self.heads.iter().enumerate() {
            let p = join(prefix, &format!("heads.{m}"));
            let q = AdapterHead::project(tape, &p, 0, &head.query, head.query_bias.as_ref(), z)?;
            let k = AdapterHead::project(tape, &p, 2, &head.key, head.key_bias.as_ref(), z)?;
            let v = AdapterHead::project(tape, &p, 4, &head.value, head.value_bias.as_ref(), z)?;
            let mixed = tape.attention(q, k, v, dims, mask)?;
            let o = tape.param(&join(&p, "output.weight"), &head.output);
            let ot = tape.transpose(o)?;
            let mut y = tape.matmul(mixed, ot)?;
            if let Some(b) = &head.output_bias {
                let bv = tape.param(&join(&p, "output.bias"), b);
                y = tape.add_row(y, bv)?;
            }
            total = Some(match total {
                None => y,
                Some(acc) => tape.add(acc, y)?,
            });
        }
        let total = total.ok_or_else(|| Error::Model("adapter has no heads".into()))?;
        Ok(if self.merged_scale == S::one() {
            total
        } else {
            tape.scale(total, self.merged_scale)
        })
    }

    /// Adapter output for `z: [B×(T+1)×H]`, same shape out.
    pub fn forward(&self, tape: &mut Tape<S>, prefix: &str, z: Var, mask: Option<&[bool]>) -> Result<Var> {
        let shape = tape.shape(z).to_vec();
        if shape.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "adapter",
                lhs: shape,
                rhs: vec![0, 0, self.hidden],
            });
        }
        let rows = tape.reshape(z, &[shape[0] * shape[1], shape[2]])?;
        let y = self.forward_rows(tape, prefix, rows, shape[0], shape[1], mask)?;
        tape.reshape(y, &shape)
    }

    /// Tape-free evaluation on a `[B×(T+1)×H]` tensor.
    pub fn apply(&self, z: &Tensor<S>, mask: Option<&[bool]>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let zv = tape.constant(z);
        let y = self.forward(&mut tape, "adapter", zv, mask)?;
        Ok(tape.tensor(y))
    }
}

impl<S: Scalar> Params<S> for TinyAttnAdapter<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        for (m, h) in self.heads.iter().enumerate() {
            h.visit(&join(prefix, &format!("heads.{m}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        for (m, h) in self.heads.iter_mut().enumerate() {
            h.visit_mut(&join(prefix, &format!("heads.{m}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::count_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(t: &mut Tensor<f64>, values: &[f64]) {
        t.values_mut().copy_from_slice(values);
    }

    fn random_adapter(rng: &mut ChaCha8Rng, hidden: usize, heads: usize, head_dim: usize) -> TinyAttnAdapter<f64> {
        let mut a = TinyAttnAdapter::zeros(
            hidden,
            AdapterConfig {
                heads,
                head_dim,
                with_biases: true,
            },
        );
        a.visit_mut("", &mut |_, t| {
            for v in t.values_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        });
        a
    }

    #[test]
    fn hand_computed_uniform_attention() {
        let mut a = TinyAttnAdapter::<f64>::zeros(
            2,
            AdapterConfig {
                heads: 1,
                head_dim: 1,
                with_biases: false,
            },
        );
        set(&mut a.heads[0].value, &[1.0, 0.0]);
        set(&mut a.heads[0].output, &[0.5, 0.5]);
        let z = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = a.apply(&z, None).unwrap();
        // q = k = 0 so both positions average v = (1, 3) to 2, then O scales by 0.5
        assert_eq!(out.values(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_output_projection_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = random_adapter(&mut rng, 4, 3, 2);
        for h in &mut a.heads {
            h.output.values_mut().iter_mut().for_each(|v| *v = 0.0);
            h.output_bias = None;
        }
        let z = Tensor::uniform(&[2, 5, 4], -1.0, 1.0, &mut rng);
        assert!(a.apply(&z, None).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_position_sequence_passes_value_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_adapter(&mut rng, 3, 2, 1);
        let z = Tensor::uniform(&[1, 1, 3], -1.0, 1.0, &mut rng);
        let out = a.apply(&z, None).unwrap();
        let zr = z.values();
        let mut expected = vec![0.0; 3];
        for h in &a.heads {
            let v: f64 = (0..3).map(|i| h.value.values()[i] * zr[i]).sum::<f64>() + h.value_bias.as_ref().unwrap().values()[0];
            for (j, e) in expected.iter_mut().enumerate() {
                *e += h.output.values()[j] * v + h.output_bias.as_ref().unwrap().values()[j];
            }
        }
        for (o, e) in out.values().iter().zip(&expected) {
            assert!((o - e).abs() < 1e-14);
        }
    }

    #[test]
    fn merge_of_single_head_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_adapter(&mut rng, 4, 1, 1);
        let merged = a.merge_heads();
        assert_eq!(merged, a);
        assert_eq!(merged.merge_heads(), a);
    }

    #[test]
    fn merge_of_identical_heads_matches_original() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let one = random_adapter(&mut rng, 4, 1, 1);
        let mut two = one.clone();
        two.heads.push(one.heads[0].clone());
        let z = Tensor::uniform(&[2, 3, 4], -1.0, 1.0, &mut rng);
        let diff = two.merge_heads().apply(&z, None).unwrap().max_abs_diff(&two.apply(&z, None).unwrap());
        assert!(diff <= 1e-12, "diff {diff}");
    }

    #[test]
    fn merge_matches_head_averaged_adapter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_adapter(&mut rng, 8, 4, 1);
        let z = Tensor::uniform(&[2, 6, 8], -1.0, 1.0, &mut rng);
        let merged = a.merge_heads();
        assert_eq!(merged.num_heads(), 1);
        assert_eq!(merged.merged_scale, 4.0);
        let diff = merged.apply(&z, None).unwrap().max_abs_diff(&a.head_averaged().apply(&z, None).unwrap());
        assert!(diff <= 1e-12, "diff {diff}");
        // and the merge is not trivially the original forward
        assert!(merged.apply(&z, None).unwrap().max_abs_diff(&a.apply(&z, None).unwrap()) > 1e-6);
    }

    #[test]
    fn init_single_head_bounds_and_determinism() {
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = TinyAttnAdapter::<f64>::init_single_head(32, 1, true, 0.01, &mut r1);
        let b = TinyAttnAdapter::<f64>::init_single_head(32, 1, true, 0.01, &mut r2);
        assert_eq!(a, b);
        let h = &a.heads[0];
        assert!(h.output.values().iter().all(|v| v.abs() < 0.01));
        let w = 1.0 / 32f64.sqrt();
        assert!(h.query.values().iter().all(|v| v.abs() < w));
        assert!(h.query_bias.as_ref().unwrap().values().iter().all(|&v| v == 0.0));
        assert!(h.output.trainable && h.query.trainable);

        let d4 = TinyAttnAdapter::<f64>::init_single_head(32, 4, true, 0.01, &mut r1);
        assert!(d4.heads[0].output.values().iter().all(|v| v.abs() < 0.005));
    }

    #[test]
    fn init_from_single_without_noise_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        // powers of two keep the 1/M rescale exact
        let single = random_adapter(&mut rng, 6, 1, 1);
        let multi = single.init_from_single(4, 0.0, &mut rng).unwrap();
        assert_eq!(multi.num_heads(), 4);
        let z = Tensor::uniform(&[2, 5, 6], -1.0, 1.0, &mut rng);
        let diff = multi.apply(&z, None).unwrap().max_abs_diff(&single.apply(&z, None).unwrap());
        assert!(diff < 1e-14, "diff {diff}");
    }

    #[test]
    fn init_from_single_with_noise_is_close_and_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let single = random_adapter(&mut rng, 8, 1, 1);
        let multi = single.init_from_single(4, 1e-3, &mut rng).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(multi.heads[i], multi.heads[j]);
            }
        }
        let z = Tensor::uniform(&[3, 7, 8], -1.0, 1.0, &mut rng);
        let base = single.apply(&z, None).unwrap();
        let rel = multi.apply(&z, None).unwrap().max_abs_diff(&base) / base.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(rel <= 1e-2, "relative diff {rel}");
        assert!(single.init_from_single(2, 0.0, &mut rng).unwrap().init_from_single(2, 0.0, &mut rng).is_err());
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(count_adapter_params(24, 1024, 1, 1, false), 98_304);
        assert_eq!(count_adapter_params(2, 32, 1, 1, false), 256);
        assert_eq!(count_adapter_params(2, 32, 4, 1, true), 4 * count_adapter_params(2, 32, 1, 1, true));
        assert_eq!(count_adapter_params(2, 32, 1, 1, true), 256 + 2 * (3 + 32));
        let a = TinyAttnAdapter::<f64>::zeros(
            32,
            AdapterConfig {
                heads: 3,
                head_dim: 2,
                with_biases: true,
            },
        );
        assert_eq!(count_params(&a), count_adapter_params(1, 32, 3, 2, true));
    }

    #[test]
    fn mask_shape_is_checked() {
        let a = TinyAttnAdapter::<f64>::zeros(2, AdapterConfig::default());
        let z = Tensor::zeros(&[1, 3, 2]);
        assert!(matches!(a.apply(&z, Some(&[true, true])), Err(Error::ShapeMismatch { .. })));
    }
}
