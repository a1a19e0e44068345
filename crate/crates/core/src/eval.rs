//! Frozen-representation evaluation: feature extraction, K-nearest-neighbor
//! classification, linear and nonlinear probes, and few-label sweeps.

use crate::data::Dataset;
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::{init_uniform, Model, ParamStore, LINEAR_GAIN, RELU_GAIN};
use crate::objectives::nll_rows;
use crate::train::{sgd_step, LrEvent, LrSchedule, OptimizerState};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Neighbor counts evaluated when none are given.
pub const DEFAULT_K: [usize; 5] = [3, 5, 10, 15, 20];

const EXTRACT_CHUNK: usize = 256;

/// Labeled feature rows `[N, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Where the features came from, usually an encoder digest.
    pub source: String,
}

impl FeatureBank {
    pub fn new(features: Tensor, labels: Vec<usize>, class_count: usize, source: impl Into<String>) -> Result<Self> {
        let &[n, d] = features.shape() else {
            return Err(Error::shape("feature bank", &[0, 0], features.shape()));
        };
        if n == 0 || d == 0 {
            return Err(Error::Input(format!("feature bank {n}×{d} is empty")));
        }
        if labels.len() != n {
            return Err(Error::shape("feature bank labels", &[n], &[labels.len()]));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::Input(format!("label {y} outside [0, {class_count})")));
        }
        if !features.is_finite() {
            return Err(Error::Numerical("feature bank contains non-finite values".into()));
        }
        Ok(Self { features, labels, class_count, source: source.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.features.data()[i * d..(i + 1) * d]
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Input(format!("row {i} outside bank of {}", self.len())));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(
            Tensor::new(&[indices.len(), d], data)?,
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.class_count,
            self.source.clone(),
        )
    }

    /// `per_class` rows of every class, chosen at random, in ascending order.
    pub fn stratified_indices<R: Rng + ?Sized>(&self, per_class: usize, rng: &mut R) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(per_class * self.class_count);
        for c in 0..self.class_count {
            let mut rows: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            if rows.len() < per_class {
                return Err(Error::Input(format!("class {c} has {} examples, {per_class} requested", rows.len())));
            }
            let (picked, _) = rows.partial_shuffle(rng, per_class);
            out.extend_from_slice(picked);
        }
        out.sort_unstable();
        Ok(out)
    }
}

fn image_key(pixels: &[f64]) -> u64 {
    let mut h = Sha256::new();
    for v in pixels {
        h.update(v.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Downstream representation of every image: the mean of `n_samples`
/// reparameterized draws. Each image's noise depends only on its pixels and
/// one key drawn from `rng`, so reordering the dataset reorders the rows.
pub fn extract_features<R: Rng + ?Sized>(
    model: &Model,
    data: &Dataset,
    n_samples: usize,
    rng: &mut R,
) -> Result<FeatureBank> {
    if n_samples == 0 {
        return Err(Error::Contract("feature extraction needs at least one sample".into()));
    }
    let labels = data.require_labels()?.to_vec();
    if data.class_count != model.label_classes {
        return Err(Error::Format {
            offset: 0,
            message: format!(
                "model expects {} classes, dataset '{}' has {}",
                model.label_classes, data.name, data.class_count
            ),
        });
    }
    model.check_input(data.images.dims()).map_err(|e| Error::Format {
        offset: 0,
        message: format!("model does not fit dataset '{}': {e}", data.name),
    })?;
    let key: u64 = rng.gen();
    let d = model.rep_dim();
    let mut out = Vec::with_capacity(data.len() * d);
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EXTRACT_CHUNK) {
        let img = data.images.select(chunk)?;
        let zero = Tensor::zeros(&[chunk.len(), d]);
        let rep = model.encode(&img, Some(&zero), rng)?;
        for r in 0..chunk.len() {
            let mut noise = ChaCha8Rng::seed_from_u64(key ^ image_key(img.image(r)));
            let mean = &rep.mean.data()[r * d..(r + 1) * d];
            let lv = &rep.logvar.data()[r * d..(r + 1) * d];
            let mut acc = vec![0.0; d];
            for _ in 0..n_samples {
                for j in 0..d {
                    let e: f64 = noise.sample(StandardNormal);
                    acc[j] += mean[j] + (0.5 * lv[j]).exp() * e;
                }
            }
            out.extend(acc.iter().map(|a| a / n_samples as f64));
        }
    }
    FeatureBank::new(Tensor::new(&[data.len(), d], out)?, labels, data.class_count, model.encoder_digest())
}

/// Label of every query row by majority vote among its `k` nearest bank
/// rows in Euclidean distance. Equal distances are ordered by bank row; vote
/// ties go to the smaller summed distance, then the lower label.
pub fn knn_classify(bank: &FeatureBank, queries: &Tensor, k: usize) -> Result<Vec<usize>> {
    let d = bank.dim();
    let &[m, qd] = queries.shape() else {
        return Err(Error::shape("knn queries", &[0, d], queries.shape()));
    };
    if qd != d {
        return Err(Error::shape("knn queries", &[m, d], queries.shape()));
    }
    if k == 0 || k > bank.len() {
        return Err(Error::Contract(format!("k = {k} must lie in [1, {}]", bank.len())));
    }
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(bank.len());
    let mut votes = vec![(0usize, 0.0f64); bank.class_count];
    let mut out = Vec::with_capacity(m);
    for q in queries.data().chunks(d) {
        dist.clear();
        dist.extend((0..bank.len()).map(|i| {
            let s: f64 = bank.row(i).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            (s.sqrt(), i)
        }));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dist.len() {
            dist.select_nth_unstable_by(k - 1, cmp);
        }
        dist[..k].sort_unstable_by(cmp);
        votes.iter_mut().for_each(|v| *v = (0, 0.0));
        for &(dd, i) in &dist[..k] {
            let v = &mut votes[bank.labels[i]];
            v.0 += 1;
            v.1 += dd;
        }
        let mut best = 0;
        for c in 1..votes.len() {
            let (n, s) = votes[c];
            let (bn, bs) = votes[best];
            if n > bn || (n == bn && s < bs) {
                best = c;
            }
        }
        out.push(best);
    }
    Ok(out)
}

pub fn error_rate(pred: &[usize], truth: &[usize]) -> f64 {
    let wrong = pred.iter().zip(truth).filter(|(a, b)| a != b).count();
    wrong as f64 / truth.len().max(1) as f64
}

/// Test error of `k`-NN with `train` as the bank.
pub fn knn_error(train: &FeatureBank, test: &FeatureBank, k: usize) -> Result<f64> {
    let pred = knn_classify(train, &test.features, k)?;
    Ok(error_rate(&pred, &test.labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeHead {
    Linear,
    /// Two hidden relu layers.
    Nonlinear,
}

impl std::str::FromStr for ProbeHead {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ProbeHead::Linear),
            "nonlinear" => Ok(ProbeHead::Nonlinear),
            _ => Err(Error::Config(format!("unknown probe head '{s}' (linear or nonlinear)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { hidden: 64, epochs: 60, batch_size: 64, lr: 0.05, momentum: 0.9, weight_decay: 5e-4, seed: 0 }
    }
}

impl ProbeConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("probe hidden, epochs and batch_size must be positive".into()));
        }
        for (name, v) in [("lr", self.lr), ("momentum", self.momentum), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("probe {name} must be a nonnegative number")));
            }
        }
        Ok(())
    }

    /// Constant for the first half, then a linear ramp down to 1%.
    fn schedule(&self) -> LrSchedule {
        let half = self.epochs / 2;
        LrSchedule {
            initial: self.lr,
            events: if half > 0 {
                vec![LrEvent::Linear { start: half, end: self.epochs, to: self.lr * 0.01 }]
            } else {
                Vec::new()
            },
        }
    }
}

struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(bank: &FeatureBank) -> Self {
        let (n, d) = (bank.len() as f64, bank.dim());
        let mut mean = vec![0.0; d];
        for i in 0..bank.len() {
            mean.iter_mut().zip(bank.row(i)).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for i in 0..bank.len() {
            for ((s, v), m) in var.iter_mut().zip(bank.row(i)).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.iter().map(|v| if v.sqrt() > 1e-12 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        Self { mean, scale }
    }

    fn apply(&self, bank: &FeatureBank) -> Tensor {
        let d = bank.dim();
        let data =
            bank.features.data().iter().enumerate().map(|(i, v)| (v - self.mean[i % d]) * self.scale[i % d]).collect();
        Tensor::new(&[bank.len(), d], data).expect("shape matches")
    }
}

fn probe_params(head: ProbeHead, d: usize, classes: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<ParamStore> {
    let mut p = ParamStore::new();
    let mut layer = |p: &mut ParamStore, name: &str, i: usize, o: usize, gain: f64| -> Result<()> {
        p.push(format!("{name}.w"), init_uniform(rng, &[i, o], i, gain))?;
        p.push(format!("{name}.b"), Tensor::zeros(&[o]))?;
        Ok(())
    };
    match head {
        ProbeHead::Linear => layer(&mut p, "probe.out", d, classes, LINEAR_GAIN)?,
        ProbeHead::Nonlinear => {
            layer(&mut p, "probe.h1", d, hidden, RELU_GAIN)?;
            layer(&mut p, "probe.h2", hidden, hidden, RELU_GAIN)?;
            layer(&mut p, "probe.out", hidden, classes, LINEAR_GAIN)?;
        }
    }
    Ok(p)
}

fn probe_forward(g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
    let mut h = x;
    let layers = vars.len() / 2;
    for l in 0..layers {
        let y = g.matmul(h, vars[2 * l])?;
        let shape = g.shape(y).to_vec();
        let b = g.reshape(vars[2 * l + 1], &[1, shape[1]])?;
        let b = g.broadcast(b, &shape)?;
        h = g.add(y, b)?;
        if l + 1 < layers {
            h = g.relu(h);
        }
    }
    g.log_softmax(h)
}

fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let c = t.shape()[1];
    t.data()
        .chunks(c)
        .map(|r| {
            let mut best = 0;
            for j in 1..c {
                if r[j] > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Trains a classifier on frozen, standardized `train` features and returns
/// its error on `test`.
pub fn probe_train(train: &FeatureBank, test: &FeatureBank, head: ProbeHead, cfg: &ProbeConfig) -> Result<f64> {
    cfg.validate()?;
    if train.dim() != test.dim() {
        return Err(Error::Input(format!(
            "train features have {} dimensions, test features {}",
            train.dim(),
            test.dim()
        )));
    }
    if train.class_count != test.class_count || train.class_count < 2 {
        return Err(Error::Input(format!(
            "probe needs at least two classes shared by both banks (train {}, test {})",
            train.class_count, test.class_count
        )));
    }
    let std = Standardizer::fit(train);
    let (xtr, xte) = (std.apply(train), std.apply(test));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = probe_params(head, train.dim(), train.class_count, cfg.hidden, &mut rng)?;
    let mut opt = OptimizerState::new(&params);
    let schedule = cfg.schedule();
    let d = train.dim();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        order.shuffle(&mut rng);
        for rows in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let vars = params.bind(&mut g, true).vars;
            let mut xb = Vec::with_capacity(rows.len() * d);
            for &i in rows {
                xb.extend_from_slice(&xtr.data()[i * d..(i + 1) * d]);
            }
            let x = g.constant(Tensor::new(&[rows.len(), d], xb)?);
            let lp = probe_forward(&mut g, &vars, x)?;
            let labels: Vec<usize> = rows.iter().map(|&i| train.labels[i]).collect();
            let nll = nll_rows(&mut g, lp, &labels)?;
            let loss = g.mean(nll);
            let v = g.value(loss).item()?;
            if !v.is_finite() {
                return Err(Error::Numerical(format!("probe loss {v} at epoch {epoch}")));
            }
            let grads = g.backward(loss)?;
            let grads: Vec<Tensor> =
                vars.iter().zip(params.tensors()).map(|(v, t)| grads.get_or_zeros(*v, t.shape())).collect();
            sgd_step(&mut params, &grads, &mut opt, lr, cfg.momentum, cfg.weight_decay)?;
        }
    }
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false).vars;
    let x = g.constant(xte);
    let lp = probe_forward(&mut g, &vars, x)?;
    Ok(error_rate(&argmax_rows(g.value(lp)), &test.labels))
}

/// Probe errors for one labeled-set size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewLabelResult {
    pub per_class: usize,
    pub errors: Vec<f64>,
    pub mean_error: f64,
}

/// For each count, `repeats` probes trained on stratified subsets of
/// `train` with that many examples per class. Repeat `r` uses probe seed
/// `cfg.seed + r`.
pub fn few_label_protocol<R: Rng + ?Sized>(
    train: &FeatureBank,
    test: &FeatureBank,
    per_class: &[usize],
    repeats: usize,
    head: ProbeHead,
    cfg: &ProbeConfig,
    rng: &mut R,
) -> Result<Vec<FewLabelResult>> {
    if repeats == 0 {
        return Err(Error::Config("few-label protocol needs at least one repeat".into()));
    }
    per_class
        .iter()
        .map(|&count| {
            if count == 0 {
                return Err(Error::Input("few-label count must be positive".into()));
            }
            let errors = (0..repeats)
                .map(|r| {
                    let idx = train.stratified_indices(count, rng)?;
                    let sub = train.subset(&idx)?;
                    let c = ProbeConfig { seed: cfg.seed + r as u64, ..cfg.clone() };
                    probe_train(&sub, test, head, &c)
                })
                .collect::<Result<Vec<_>>>()?;
            let mean_error = errors.iter().sum::<f64>() / errors.len() as f64;
            Ok(FewLabelResult { per_class: count, errors, mean_error })
        })
        .collect()
}

/// One line of an error table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub protocol: String,
    pub setting: String,
    pub seed: u64,
    pub error_rate: f64,
}

pub fn rows_to_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("protocol,setting,seed,error_rate\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.protocol, r.setting, r.seed, r.error_rate));
    }
    s
}
