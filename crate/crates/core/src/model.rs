//! Backbone + optional adapters + task decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{count_adapter_params, AdapterConfig, TinyAttnAdapter};
use crate::backbone::{Backbone, BackboneConfig, Batch, Injection, Placement};
use crate::error::{Error, Result};
use crate::nn::{join, set_trainable, Linear, Params};
use crate::scalar::Scalar;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// One adapter per backbone layer, all wired the same way.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterStack<S> {
    pub placement: Placement,
    pub layers: Vec<TinyAttnAdapter<S>>,
}

impl<S: Scalar> AdapterStack<S> {
    /// Fresh single-head adapters on every layer.
    pub fn init_single_head<R: Rng + ?Sized>(
        layers: usize,
        hidden: usize,
        config: AdapterConfig,
        placement: Placement,
        output_scale: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            placement,
            layers: (0..layers)
                .map(|_| TinyAttnAdapter::init_single_head(hidden, config.head_dim, config.with_biases, output_scale, rng))
                .collect(),
        }
    }

    pub fn merge_heads(&self) -> Self {
        Self {
            placement: self.placement,
            layers: self.layers.iter().map(TinyAttnAdapter::merge_heads).collect(),
        }
    }

    pub fn head_averaged(&self) -> Self {
        Self {
            placement: self.placement,
            layers: self.layers.iter().map(TinyAttnAdapter::head_averaged).collect(),
        }
    }

    pub fn init_from_single<R: Rng + ?Sized>(&self, heads: usize, eps: f64, rng: &mut R) -> Result<Self> {
        Ok(Self {
            placement: self.placement,
            layers: self
                .layers
                .iter()
                .map(|a| a.init_from_single(heads, eps, rng))
                .collect::<Result<_>>()?,
        })
    }

    pub fn config(&self) -> Option<AdapterConfig> {
        self.layers.first().map(TinyAttnAdapter::config)
    }

    pub fn merged_scale(&self) -> Option<S> {
        self.layers.first().map(|a| a.merged_scale)
    }
}

impl<S: Scalar> Params<S> for AdapterStack<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        for (l, a) in self.layers.iter().enumerate() {
            a.visit(&join(prefix, &l.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        for (l, a) in self.layers.iter_mut().enumerate() {
            a.visit_mut(&join(prefix, &l.to_string()), f);
        }
    }
}

/// Classifier: backbone, optional adapters, and a linear decoder on the
/// top-layer CLS embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    pub backbone: Backbone<S>,
    pub adapters: Option<AdapterStack<S>>,
    pub decoder: Linear<S>,
}

impl<S: Scalar> Model<S> {
    pub fn new<R: Rng + ?Sized>(backbone: Backbone<S>, classes: usize, rng: &mut R) -> Self {
        let mut decoder = Linear::init(backbone.config.hidden, classes, rng);
        set_trainable(&mut decoder, true);
        Self {
            backbone,
            adapters: None,
            decoder,
        }
    }

    pub fn classes(&self) -> usize {
        self.decoder.outputs()
    }

    /// Freezes the backbone and attaches `adapters` (trainable).
    pub fn attach_adapters(&mut self, mut adapters: AdapterStack<S>) -> Result<()> {
        let c = &self.backbone.config;
        if adapters.layers.len() != c.layers {
            return Err(Error::Model(format!(
                "{} adapters for {} layers",
                adapters.layers.len(),
                c.layers
            )));
        }
        if let Some(a) = adapters.layers.iter().find(|a| a.hidden != c.hidden) {
            return Err(Error::ShapeMismatch {
                op: "adapter hidden size",
                lhs: vec![a.hidden],
                rhs: vec![c.hidden],
            });
        }
        self.backbone.set_frozen();
        set_trainable(&mut adapters, true);
        self.adapters = Some(adapters);
        Ok(())
    }

    fn injection(&self) -> Option<Injection<'_, S>> {
        self.adapters.as_ref().map(|a| Injection {
            adapters: &a.layers,
            placement: a.placement,
        })
    }

    /// CLS embedding of the (possibly adapted) backbone.
    pub fn cls(&self, tape: &mut Tape<S>, batch: &Batch) -> Result<Var> {
        self.backbone.forward(tape, batch, self.injection())
    }

    /// Class logits `[B×C]`.
    pub fn logits(&self, tape: &mut Tape<S>, batch: &Batch) -> Result<Var> {
        let cls = self.cls(tape, batch)?;
        self.decoder.forward(tape, "decoder", cls)
    }

    /// Logits `[B×C]` for given CLS embeddings `[B×H]`.
    pub fn decode(&self, cls: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let x = tape.constant(cls);
        let y = self.decoder.forward(&mut tape, "decoder", x)?;
        Ok(tape.tensor(y))
    }

    pub fn loss(&self, tape: &mut Tape<S>, batch: &Batch) -> Result<Var> {
        let logits = self.logits(tape, batch)?;
        tape.cross_entropy(logits, &batch.labels)
    }

    /// Predicted class per sequence (ties to the lowest class index).
    pub fn predict(&self, batch: &Batch) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let logits = self.logits(&mut tape, batch)?;
        let c = self.classes();
        Ok(tape
            .value(logits)
            .chunks(c)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, S::neg_infinity()), |best, (j, &x)| if x > best.1 { (j, x) } else { best })
                    .0
            })
            .collect())
    }

    /// Forward + backward on one batch; stores gradients on every trainable
    /// tensor and returns the loss.
    pub fn compute_grads(&mut self, batch: &Batch) -> Result<S> {
        let mut tape = Tape::new();
        let loss = self.loss(&mut tape, batch)?;
        let grads = tape.backward(loss)?;
        let value = tape.value(loss)[0];
        self.store_grads(&grads);
        Ok(value)
    }

    /// Copies gradients onto trainable tensors (zeros where the loss did not
    /// reach them). Frozen tensors never hold a gradient.
    pub fn store_grads(&mut self, grads: &Gradients<S>) {
        self.visit_mut("", &mut |name, t| {
            t.grad = if t.trainable {
                Some(grads.get(name).map_or_else(|| vec![S::zero(); t.len()], <[S]>::to_vec))
            } else {
                None
            };
        });
    }

    /// `(name, element count)` of every trainable tensor, in visit order.
    pub fn trainable_params(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| {
            if t.trainable {
                out.push((name.to_string(), t.len()));
            }
        });
        out
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable_params().iter().map(|(_, n)| n).sum()
    }
}

impl<S: Scalar> Params<S> for Model<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        if let Some(a) = &self.adapters {
            a.visit(&join(prefix, "adapters"), f);
        }
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
        if let Some(a) = &mut self.adapters {
            a.visit_mut(&join(prefix, "adapters"), f);
        }
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}

/// Itemized parameter counts, computed from configs alone so that very
/// large shapes can be accounted for without allocating them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub backbone: usize,
    pub adapter: usize,
    pub decoder: usize,
    pub trainable: usize,
    /// Adapter parameters as a percentage of the backbone.
    pub adapter_percent: f64,
}

impl ParamCounts {
    /// `adapter` is `None` for models without adapters. With `full` every
    /// parameter trains, otherwise only adapters and decoder.
    pub fn from_configs(backbone: &BackboneConfig, adapter: Option<AdapterConfig>, classes: usize, full: bool) -> Self {
        let bb = backbone.param_count();
        let ad = adapter.map_or(0, |a| count_adapter_params(backbone.layers, backbone.hidden, a.heads, a.head_dim, a.with_biases));
        let dec = backbone.hidden * classes + classes;
        Self {
            backbone: bb,
            adapter: ad,
            decoder: dec,
            trainable: ad + dec + if full { bb } else { 0 },
            adapter_percent: 100.0 * ad as f64 / bb as f64,
        }
    }

    pub fn of<S: Scalar>(model: &Model<S>) -> Self {
        let full = !model.backbone.is_frozen();
        Self::from_configs(&model.backbone.config, model.adapters.as_ref().and_then(AdapterStack::config), model.classes(), full)
    }
}
