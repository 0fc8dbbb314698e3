//! Toy post-layer-norm transformer encoder standing in for a pretrained
//! language model, with hooks where tiny-attention adapters attach.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::TinyAttnAdapter;
use crate::error::{Error, Result};
use crate::nn::{join, set_trainable, LayerNorm, Linear, Params};
use crate::scalar::Scalar;
use crate::tape::{AttnDims, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub vocab: usize,
    /// Longest accepted sequence, CLS included.
    pub max_len: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 32,
            heads: 4,
            ffn: 64,
            vocab: 64,
            max_len: 17,
        }
    }
}

impl BackboneConfig {
    /// Dimensions of a roberta-large sized encoder, for parameter accounting.
    pub fn roberta_large() -> Self {
        Self {
            layers: 24,
            hidden: 1024,
            heads: 16,
            ffn: 4096,
            vocab: 50_265,
            max_len: 514,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.layers, self.hidden, self.heads, self.ffn, self.vocab, self.max_len];
        if dims.contains(&0) {
            return Err(Error::Config(format!("backbone dimensions must be positive: {self:?}")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count of [`Backbone`] with these dimensions.
    pub fn param_count(&self) -> usize {
        let h = self.hidden;
        let f = self.ffn;
        let per_layer = 4 * (h * h + h) + (h * f + f) + (f * h + h) + 4 * h;
        (self.vocab + self.max_len) * h + self.layers * per_layer
    }
}

/// Where adapters are wired into each layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    None,
    /// After the first layer norm, added residually before the FFN.
    #[default]
    Sequential,
    /// Reads the layer input, summed into the attention residual.
    Parallel,
}

impl std::str::FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Placement::None),
            "sequential" => Ok(Placement::Sequential),
            "parallel" => Ok(Placement::Parallel),
            other => Err(Error::Config(format!("unknown placement `{other}`"))),
        }
    }
}

/// Token ids for `batch` sequences of `seq` positions each, CLS first.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub labels: Vec<usize>,
    /// `true` marks a real token; padded positions are `false`.
    pub mask: Option<Vec<bool>>,
    pub batch: usize,
    pub seq: usize,
}

impl Batch {
    pub fn new(ids: Vec<usize>, labels: Vec<usize>, seq: usize) -> Result<Self> {
        if seq == 0 || ids.len() % seq != 0 || ids.len() / seq != labels.len() {
            return Err(Error::Model(format!(
                "batch of {} ids, {} labels and sequence length {seq} is inconsistent",
                ids.len(),
                labels.len()
            )));
        }
        Ok(Self {
            batch: labels.len(),
            ids,
            labels,
            mask: None,
            seq,
        })
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.ids.len() {
            return Err(Error::Model("mask length differs from ids".into()));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn sequence(&self, i: usize) -> &[usize] {
        &self.ids[i * self.seq..(i + 1) * self.seq]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayer<S> {
    pub query: Linear<S>,
    pub key: Linear<S>,
    pub value: Linear<S>,
    pub output: Linear<S>,
    pub ln1: LayerNorm<S>,
    pub ffn_in: Linear<S>,
    pub ffn_out: Linear<S>,
    pub ln2: LayerNorm<S>,
}

impl<S: Scalar> TransformerLayer<S> {
    fn init<R: Rng + ?Sized>(c: &BackboneConfig, rng: &mut R) -> Self {
        let h = c.hidden;
        Self {
            query: Linear::init(h, h, rng),
            key: Linear::init(h, h, rng),
            value: Linear::init(h, h, rng),
            output: Linear::init(h, h, rng),
            ln1: LayerNorm::new(h),
            ffn_in: Linear::init(h, c.ffn, rng),
            ffn_out: Linear::init(c.ffn, h, rng),
            ln2: LayerNorm::new(h),
        }
    }

    fn self_attention(&self, tape: &mut Tape<S>, prefix: &str, x: Var, dims: AttnDims, mask: Option<&[bool]>) -> Result<Var> {
        let q = self.query.forward(tape, &join(prefix, "attn.query"), x)?;
        let k = self.key.forward(tape, &join(prefix, "attn.key"), x)?;
        let v = self.value.forward(tape, &join(prefix, "attn.value"), x)?;
        let mixed = tape.attention(q, k, v, dims, mask)?;
        self.output.forward(tape, &join(prefix, "attn.output"), mixed)
    }

    fn ffn(&self, tape: &mut Tape<S>, prefix: &str, x: Var) -> Result<Var> {
        let u = self.ffn_in.forward(tape, &join(prefix, "ffn.in"), x)?;
        let a = tape.gelu(u);
        self.ffn_out.forward(tape, &join(prefix, "ffn.out"), a)
    }

    /// One layer over rows `[B·T1 × H]`.
    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        tape: &mut Tape<S>,
        prefix: &str,
        x: Var,
        dims: AttnDims,
        mask: Option<&[bool]>,
        adapter: Option<(&TinyAttnAdapter<S>, &str)>,
        placement: Placement,
    ) -> Result<Var> {
        let attn = self.self_attention(tape, prefix, x, dims, mask)?;
        let residual = tape.add(x, attn)?;
        let (batch, seq) = (dims.batch, dims.seq);
        let z = match (adapter, placement) {
            (Some((a, name)), Placement::Parallel) => {
                let extra = a.forward_rows(tape, name, x, batch, seq, mask)?;
                let r = tape.add(residual, extra)?;
                self.ln1.forward(tape, &join(prefix, "ln1"), r)?
            }
            (Some((a, name)), Placement::Sequential) => {
                let z = self.ln1.forward(tape, &join(prefix, "ln1"), residual)?;
                let delta = a.forward_rows(tape, name, z, batch, seq, mask)?;
                tape.add(z, delta)?
            }
            _ => self.ln1.forward(tape, &join(prefix, "ln1"), residual)?,
        };
        let f = self.ffn(tape, prefix, z)?;
        let r = tape.add(z, f)?;
        self.ln2.forward(tape, &join(prefix, "ln2"), r)
    }
}

impl<S: Scalar> Params<S> for TransformerLayer<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        self.query.visit(&join(prefix, "attn.query"), f);
        self.key.visit(&join(prefix, "attn.key"), f);
        self.value.visit(&join(prefix, "attn.value"), f);
        self.output.visit(&join(prefix, "attn.output"), f);
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.ffn_in.visit(&join(prefix, "ffn.in"), f);
        self.ffn_out.visit(&join(prefix, "ffn.out"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        self.query.visit_mut(&join(prefix, "attn.query"), f);
        self.key.visit_mut(&join(prefix, "attn.key"), f);
        self.value.visit_mut(&join(prefix, "attn.value"), f);
        self.output.visit_mut(&join(prefix, "attn.output"), f);
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.ffn_in.visit_mut(&join(prefix, "ffn.in"), f);
        self.ffn_out.visit_mut(&join(prefix, "ffn.out"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<S> {
    pub config: BackboneConfig,
    pub token_embedding: Tensor<S>,
    pub position_embedding: Tensor<S>,
    pub layers: Vec<TransformerLayer<S>>,
}

/// Adapters to inject, one per backbone layer.
#[derive(Debug, Clone, Copy)]
pub struct Injection<'a, S> {
    pub adapters: &'a [TinyAttnAdapter<S>],
    pub placement: Placement,
}

impl<S: Scalar> Backbone<S> {
    /// Randomly initialized backbone with every tensor trainable.
    pub fn init<R: Rng + ?Sized>(config: BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut b = Self {
            config,
            token_embedding: Tensor::uniform(&[config.vocab, config.hidden], -1.0, 1.0, rng),
            position_embedding: Tensor::uniform(&[config.max_len, config.hidden], -1.0, 1.0, rng),
            layers: (0..config.layers).map(|_| TransformerLayer::init(&config, rng)).collect(),
        };
        set_trainable(&mut b, true);
        Ok(b)
    }

    /// Marks every backbone tensor, embeddings included, as frozen.
    pub fn set_frozen(&mut self) {
        set_trainable(self, false);
    }

    pub fn is_frozen(&self) -> bool {
        let mut frozen = true;
        self.visit("", &mut |_, t| frozen &= !t.trainable);
        frozen
    }

    /// Runs the encoder and returns the top-layer CLS rows `[B×H]`.
    pub fn forward(&self, tape: &mut Tape<S>, batch: &Batch, injection: Option<Injection<'_, S>>) -> Result<Var> {
        let c = &self.config;
        if batch.seq > c.max_len {
            return Err(Error::Model(format!(
                "sequence length {} exceeds maximum {}",
                batch.seq, c.max_len
            )));
        }
        let placement = injection.map_or(Placement::None, |i| i.placement);
        if let Some(inj) = injection {
            if placement != Placement::None && inj.adapters.len() != c.layers {
                return Err(Error::Model(format!(
                    "{} adapters for {} layers",
                    inj.adapters.len(),
                    c.layers
                )));
            }
            if let Some(a) = inj.adapters.iter().find(|a| a.hidden != c.hidden) {
                return Err(Error::ShapeMismatch {
                    op: "adapter hidden size",
                    lhs: vec![a.hidden],
                    rhs: vec![c.hidden],
                });
            }
        }

        let tok = tape.param("backbone.embed.token", &self.token_embedding);
        let pos = tape.param("backbone.embed.position", &self.position_embedding);
        let tok_rows = tape.gather_rows(tok, &batch.ids)?;
        let positions: Vec<usize> = (0..batch.batch).flat_map(|_| 0..batch.seq).collect();
        let pos_rows = tape.gather_rows(pos, &positions)?;
        let mut x = tape.add(tok_rows, pos_rows)?;

        let dims = AttnDims {
            batch: batch.batch,
            seq: batch.seq,
            heads: c.heads,
            head_dim: c.hidden / c.heads,
        };
        let mask = batch.mask.as_deref();
        for (l, layer) in self.layers.iter().enumerate() {
            let name = format!("adapters.{l}");
            let adapter = injection
                .filter(|_| placement != Placement::None)
                .map(|i| (&i.adapters[l], name.as_str()));
            x = layer.forward(tape, &format!("backbone.layers.{l}"), x, dims, mask, adapter, placement)?;
        }
        let cls: Vec<usize> = (0..batch.batch).map(|b| b * batch.seq).collect();
        tape.gather_rows(x, &cls)
    }

    /// Tape-free CLS embedding.
    pub fn cls_embedding(&self, batch: &Batch, injection: Option<Injection<'_, S>>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let cls = self.forward(&mut tape, batch, injection)?;
        Ok(tape.tensor(cls))
    }
}

impl<S: Scalar> Params<S> for Backbone<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        f(&join(prefix, "embed.token"), &self.token_embedding);
        f(&join(prefix, "embed.position"), &self.position_embedding);
        for (l, layer) in self.layers.iter().enumerate() {
            layer.visit(&join(prefix, &format!("layers.{l}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        f(&join(prefix, "embed.token"), &mut self.token_embedding);
        f(&join(prefix, "embed.position"), &mut self.position_embedding);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("layers.{l}")), f);
        }
    }
}
