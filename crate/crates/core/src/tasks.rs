//! Seeded synthetic sequence-classification tasks.
//!
//! Sequences are `T` payload tokens drawn from `1..V`; id 0 is reserved
//! for the CLS token that the model sees at position 0. Labels always come
//! from [`TaskSpec::oracle_label`]; generators only shape the token
//! distribution so that classes come out balanced.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::Batch;
use crate::error::{Error, Result};

pub const CLS: usize = 0;

/// Partitions used by the pretraining rule.
const NEXTSET_PARTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    /// Which of four equal vocabulary ranges holds the most tokens (C=4).
    #[serde(rename = "pretrain-nextset")]
    PretrainNextset,
    /// Whether tokens at or above the boundary outnumber those below (C=2).
    #[serde(rename = "majority")]
    Majority,
    /// Whether any token value occurs at two distinct positions (C=2).
    #[serde(rename = "match-pair")]
    MatchPair,
    /// Whether the first and last payload tokens fall on the same side of
    /// the boundary (C=2).
    #[serde(rename = "first-last")]
    FirstLast,
}

impl Rule {
    pub const ALL: [Rule; 4] = [Rule::PretrainNextset, Rule::Majority, Rule::MatchPair, Rule::FirstLast];

    pub fn name(self) -> &'static str {
        match self {
            Rule::PretrainNextset => "pretrain-nextset",
            Rule::Majority => "majority",
            Rule::MatchPair => "match-pair",
            Rule::FirstLast => "first-last",
        }
    }

    pub fn classes(self) -> usize {
        match self {
            Rule::PretrainNextset => NEXTSET_PARTS,
            _ => 2,
        }
    }
}

impl std::str::FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Rule::ALL
            .into_iter()
            .find(|r| r.name() == norm)
            .ok_or_else(|| Error::UnknownRule(s.to_string()))
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub rule: Rule,
    pub vocab: usize,
    /// Payload length; sequences fed to the model have `seq_len + 1` ids.
    pub seq_len: usize,
    /// Two-way partition: tokens `< boundary` are class 0.
    pub boundary: usize,
    pub seed: u64,
}

/// Which sample stream an example index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl TaskSpec {
    pub fn new(rule: Rule, seed: u64) -> Self {
        Self {
            rule,
            vocab: 64,
            seq_len: 16,
            boundary: 32,
            seed,
        }
    }

    pub fn classes(&self) -> usize {
        self.rule.classes()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.vocab < 3 {
            return Err(Error::Config(format!("task needs seq_len ≥ 1 and vocab ≥ 3: {self:?}")));
        }
        if self.boundary <= 1 || self.boundary >= self.vocab {
            return Err(Error::Config(format!(
                "partition boundary {} must lie inside 2..{}",
                self.boundary, self.vocab
            )));
        }
        if self.rule == Rule::MatchPair && self.vocab - 1 < self.seq_len {
            return Err(Error::Config("match-pair needs at least seq_len distinct payload tokens".into()));
        }
        if self.rule == Rule::PretrainNextset && self.vocab - 1 < NEXTSET_PARTS {
            return Err(Error::Config("pretrain-nextset needs at least 4 payload tokens".into()));
        }
        Ok(())
    }

    fn binary_part(&self, tok: usize) -> usize {
        usize::from(tok >= self.boundary)
    }

    fn nextset_part(&self, tok: usize) -> usize {
        ((tok - 1) * NEXTSET_PARTS / (self.vocab - 1)).min(NEXTSET_PARTS - 1)
    }

    /// Ground-truth label of a payload sequence (CLS excluded).
    pub fn oracle_label(&self, tokens: &[usize]) -> Result<usize> {
        if tokens.is_empty() {
            return Err(Error::Model("empty token sequence".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t == CLS || t >= self.vocab) {
            return Err(Error::IndexOutOfRange {
                id: bad,
                rows: self.vocab,
            });
        }
        Ok(match self.rule {
            Rule::PretrainNextset => {
                let mut counts = [0usize; NEXTSET_PARTS];
                for &t in tokens {
                    counts[self.nextset_part(t)] += 1;
                }
                // first maximum wins ties
                (0..NEXTSET_PARTS).fold(0, |best, p| if counts[p] > counts[best] { p } else { best })
            }
            Rule::Majority => {
                let high = tokens.iter().filter(|&&t| self.binary_part(t) == 1).count();
                usize::from(high > tokens.len() - high)
            }
            Rule::MatchPair => {
                let mut seen = vec![false; self.vocab];
                let mut dup = false;
                for &t in tokens {
                    dup |= std::mem::replace(&mut seen[t], true);
                }
                usize::from(dup)
            }
            Rule::FirstLast => {
                let first = tokens[0];
                let last = tokens[tokens.len() - 1];
                usize::from(self.binary_part(first) == self.binary_part(last))
            }
        })
    }

    fn token_in<R: Rng + ?Sized>(&self, rng: &mut R, part: usize, parts: usize) -> usize {
        loop {
            let t = rng.gen_range(1..self.vocab);
            let p = if parts == 2 { self.binary_part(t) } else { self.nextset_part(t) };
            if p == part {
                return t;
            }
        }
    }

    fn token_not_in<R: Rng + ?Sized>(&self, rng: &mut R, part: usize, parts: usize) -> usize {
        loop {
            let t = rng.gen_range(1..self.vocab);
            let p = if parts == 2 { self.binary_part(t) } else { self.nextset_part(t) };
            if p != part {
                return t;
            }
        }
    }

    /// Candidate sequence biased towards `target`; may still carry another label.
    fn propose<R: Rng + ?Sized>(&self, rng: &mut R, target: usize) -> Vec<usize> {
        let t = self.seq_len;
        match self.rule {
            Rule::PretrainNextset | Rule::Majority => {
                let parts = self.classes();
                let lo = t / parts + 1;
                let k = rng.gen_range(lo.min(t)..=t);
                let mut seq: Vec<usize> = (0..t)
                    .map(|i| {
                        if i < k {
                            self.token_in(rng, target, parts)
                        } else {
                            self.token_not_in(rng, target, parts)
                        }
                    })
                    .collect();
                seq.shuffle(rng);
                seq
            }
            Rule::MatchPair => {
                let mut pool: Vec<usize> = (1..self.vocab).collect();
                pool.shuffle(rng);
                if target == 1 && t >= 2 {
                    let mut seq = pool[..t - 1].to_vec();
                    let copy = seq[rng.gen_range(0..t - 1)];
                    let at = rng.gen_range(0..t);
                    seq.insert(at, copy);
                    seq
                } else {
                    pool[..t].to_vec()
                }
            }
            Rule::FirstLast => {
                let mut seq: Vec<usize> = (0..t).map(|_| rng.gen_range(1..self.vocab)).collect();
                let first_part = self.binary_part(seq[0]);
                seq[t - 1] = if target == 1 {
                    self.token_in(rng, first_part, 2)
                } else {
                    self.token_not_in(rng, first_part, 2)
                };
                seq
            }
        }
    }

    /// Draws one labelled example. Classes are chosen uniformly and
    /// candidates are resampled until the oracle agrees; for the counting
    /// rules ties are rejected as well, so every class has a clear winner.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<usize>, usize) {
        let target = rng.gen_range(0..self.classes());
        loop {
            let seq = self.propose(rng, target);
            let label = self.oracle_label(&seq).expect("generated tokens are valid");
            if label == target && !self.is_tied(&seq) {
                return (seq, label);
            }
        }
    }

    fn is_tied(&self, seq: &[usize]) -> bool {
        match self.rule {
            Rule::PretrainNextset => {
                let mut counts = [0usize; NEXTSET_PARTS];
                for &t in seq {
                    counts[self.nextset_part(t)] += 1;
                }
                let max = *counts.iter().max().expect("non-empty");
                counts.iter().filter(|&&c| c == max).count() > 1
            }
            Rule::Majority => {
                let high = seq.iter().filter(|&&t| self.binary_part(t) == 1).count();
                2 * high == seq.len()
            }
            _ => false,
        }
    }

    /// Example `index` of a split; a pure function of `(spec, split, index)`.
    pub fn example(&self, split: Split, index: u64) -> (Vec<usize>, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let stream = match split {
            Split::Train => index,
            Split::Validation => index | (1 << 62),
        };
        rng.set_stream(stream);
        self.sample(&mut rng)
    }

    /// `count` consecutive examples of a split starting at `start`.
    pub fn examples(&self, split: Split, start: u64, count: usize) -> Vec<(Vec<usize>, usize)> {
        (0..count as u64).map(|i| self.example(split, start + i)).collect()
    }

    /// Draws `batch_size` examples from `rng` into a model batch.
    pub fn generate_batch<R: Rng + ?Sized>(&self, rng: &mut R, batch_size: usize) -> Result<Batch> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let examples: Vec<_> = (0..batch_size).map(|_| self.sample(rng)).collect();
        to_batch(&examples)
    }
}

/// Packs payload sequences into a batch with CLS prepended.
pub fn to_batch(examples: &[(Vec<usize>, usize)]) -> Result<Batch> {
    let seq = examples.first().map_or(0, |(s, _)| s.len()) + 1;
    let mut ids = Vec::with_capacity(examples.len() * seq);
    let mut labels = Vec::with_capacity(examples.len());
    for (tokens, label) in examples {
        if tokens.len() + 1 != seq {
            return Err(Error::Model("examples in a batch must have equal length".into()));
        }
        ids.push(CLS);
        ids.extend_from_slice(tokens);
        labels.push(*label);
    }
    Batch::new(ids, labels, seq)
}

/// Writes one example per line: space-separated model input ids (CLS
/// first), a tab, then the label.
pub fn export_examples(path: &Path, examples: &[(Vec<usize>, usize)]) -> Result<()> {
    let mut out = String::new();
    for (tokens, label) in examples {
        let ids: Vec<String> = std::iter::once(CLS).chain(tokens.iter().copied()).map(|t| t.to_string()).collect();
        out.push_str(&ids.join(" "));
        out.push('\t');
        out.push_str(&label.to_string());
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Accuracy of a position-free multinomial logistic regression on token
/// counts, trained by full-batch gradient descent. A reference point for
/// how much of a task can be solved without cross-position information.
pub fn bag_of_tokens_accuracy(spec: &TaskSpec, train: usize, val: usize, iterations: usize) -> f64 {
    let v = spec.vocab;
    let c = spec.classes();
    let featurize = |tokens: &[usize]| {
        let mut x = vec![0.0; v + 1];
        for &t in tokens {
            x[t] += 1.0 / tokens.len() as f64;
        }
        x[v] = 1.0;
        x
    };
    let train_set: Vec<(Vec<f64>, usize)> = spec
        .examples(Split::Train, 0, train)
        .iter()
        .map(|(s, l)| (featurize(s), *l))
        .collect();
    let mut w = vec![vec![0.0; v + 1]; c];
    let lr = 2.0 * v as f64;
    for _ in 0..iterations {
        let mut grad = vec![vec![0.0; v + 1]; c];
        for (x, y) in &train_set {
            let logits: Vec<f64> = w.iter().map(|wc| wc.iter().zip(x).map(|(a, b)| a * b).sum()).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for k in 0..c {
                let err = exps[k] / z - f64::from(u8::from(k == *y));
                for (g, xi) in grad[k].iter_mut().zip(x) {
                    *g += err * xi;
                }
            }
        }
        for (wc, gc) in w.iter_mut().zip(&grad) {
            for (a, g) in wc.iter_mut().zip(gc) {
                *a -= lr * g / train as f64;
            }
        }
    }
    let val_set = spec.examples(Split::Validation, 0, val);
    let correct = val_set
        .iter()
        .filter(|(s, l)| {
            let x = featurize(s);
            let pred = (0..c)
                .map(|k| w[k].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>())
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (k, s)| if s > b.1 { (k, s) } else { b })
                .0;
            pred == *l
        })
        .count();
    correct as f64 / val as f64
}
