//! Batch assembly, SGD with momentum, learning-rate schedules and the
//! training loop for every objective.

mod schedule;

pub use schedule::{LrEvent, LrSchedule};

use crate::data::Dataset;
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::{BoundParams, Checkpoint, CheckpointMeta, DecoderHead, DecoderVars, Model, ParamStore};
use crate::objectives::{
    aet_loss, avt_rows, entropy_min, nll_rows, semisup_objective, LossBreakdown, LossVars, SemisupTerms,
    TransformTargets,
};
use crate::warp::{warp_each, ImageTensor};
use crate::xform::{encode_target, Homography, TransformKind, TransformParams, TransformSpec};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Aet,
    Avt,
    Sat,
    /// Classifier trained on the labeled pool alone, same network and step count.
    Supervised,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Aet => "aet",
            Mode::Avt => "avt",
            Mode::Sat => "sat",
            Mode::Supervised => "supervised",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub batch_size: usize,
    /// Entries of every batch drawn from the labeled pool.
    pub labeled_per_batch: usize,
    /// Size per class of the labeled pool; all labeled data when absent.
    pub labels_per_class: Option<usize>,
    pub epochs: usize,
    /// Defaults to one pass over the data by the unlabeled part of a batch.
    pub steps_per_epoch: Option<usize>,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub entmin_weight: f64,
    pub hflip: bool,
    pub translate_px: usize,
    /// Epochs between checkpoints; zero keeps only the final one.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Avt,
            batch_size: 128,
            labeled_per_batch: 0,
            labels_per_class: None,
            epochs: 20,
            steps_per_epoch: None,
            lr: LrSchedule::constant(0.01),
            momentum: 0.9,
            weight_decay: 5e-4,
            lambda: 1.0,
            entmin_weight: 0.0,
            hflip: false,
            translate_px: 0,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-length schedules and batch sizes for `mode`.
    pub fn paper(mode: Mode) -> Self {
        let base = Self { mode, ..Self::default() };
        match mode {
            Mode::Aet => Self { batch_size: 512, epochs: 1500, lr: LrSchedule::paper_aet(), ..base },
            Mode::Avt => Self { batch_size: 512, epochs: 4500, lr: LrSchedule::paper_avt(), ..base },
            Mode::Sat | Mode::Supervised => Self {
                batch_size: 500,
                labeled_per_batch: 40,
                epochs: 4500,
                lr: LrSchedule::paper_avt(),
                hflip: true,
                translate_px: 2,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lr.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.labeled_per_batch > self.batch_size {
            return Err(Error::Config(format!(
                "labeled_per_batch {} exceeds batch_size {}",
                self.labeled_per_batch, self.batch_size
            )));
        }
        for (name, v) in [
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("lambda", self.lambda),
            ("entmin_weight", self.entmin_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        if matches!(self.mode, Mode::Sat | Mode::Supervised) && self.labeled_per_batch == 0 {
            return Err(Error::Config(format!("mode {} needs labeled_per_batch > 0", self.mode)));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be positive".into()));
        }
        Ok(())
    }

    /// Checks the mode against the transformation family.
    pub fn check_spec(&self, spec: &TransformSpec) -> Result<()> {
        spec.validate()?;
        if self.mode == Mode::Aet && spec.kind() == TransformKind::Categorical {
            return Err(Error::Config(
                "aet mode regresses transformation parameters and cannot use a categorical family".into(),
            ));
        }
        Ok(())
    }
}

/// Momentum buffer per parameter and the number of updates applied.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub buffers: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        Self { buffers: params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(), step: 0 }
    }
}

/// `buf ← momentum·buf + grad + wd·param; param ← param − lr·buf`.
pub fn sgd_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.buffers.len() != params.len() {
        return Err(Error::Contract(format!(
            "sgd_step got {} parameters, {} gradients, {} buffers",
            params.len(),
            grads.len(),
            state.buffers.len()
        )));
    }
    for (i, p) in params.tensors().iter().enumerate() {
        if grads[i].shape() != p.shape() || state.buffers[i].shape() != p.shape() {
            return Err(Error::Contract(format!(
                "parameter {} has shape {:?}, gradient {:?}, buffer {:?}",
                params.names()[i],
                p.shape(),
                grads[i].shape(),
                state.buffers[i].shape()
            )));
        }
    }
    for ((p, g), buf) in params.tensors_mut().iter_mut().zip(grads).zip(&mut state.buffers) {
        for ((w, &dw), b) in p.data_mut().iter_mut().zip(g.data()).zip(buf.data_mut()) {
            *b = momentum * *b + dw + weight_decay * *w;
            *w -= lr * *b;
        }
    }
    state.step += 1;
    Ok(())
}

/// Original images, their transformed copies, the transformations, and the
/// labels of the entries drawn from the labeled pool.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub originals: ImageTensor,
    pub transformed: ImageTensor,
    pub params: Vec<TransformParams>,
    pub labels: Vec<Option<usize>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn labeled_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i].is_some()).collect()
    }

    pub fn unlabeled_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i].is_none()).collect()
    }
}

/// Random horizontal flip and whole-pixel translation of each image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Augment {
    pub hflip: bool,
    pub translate_px: usize,
}

impl Augment {
    fn apply<R: Rng + ?Sized>(&self, img: ImageTensor, rng: &mut R) -> Result<ImageTensor> {
        if !self.hflip && self.translate_px == 0 {
            return Ok(img);
        }
        let (h, w) = (img.height() as f64, img.width() as f64);
        let t = self.translate_px as i64;
        let hs = (0..img.count())
            .map(|_| {
                let flip = if self.hflip && rng.gen::<bool>() { -1.0 } else { 1.0 };
                let dx = 2.0 * rng.gen_range(-t..=t) as f64 / w;
                let dy = 2.0 * rng.gen_range(-t..=t) as f64 / h;
                Homography::new([[flip, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]])
            })
            .collect::<Result<Vec<_>>>()?;
        let out = warp_each(&img, &hs)?;
        let (lo, hi) = img.value_range();
        ImageTensor::new(out.dims(), out.data().to_vec(), (lo.min(0.0), hi))
    }
}

/// Assembles a batch from `unlabeled` entries followed by `labeled` ones; only
/// the latter carry labels. Transformations are drawn in batch order.
pub fn build_batch<R: Rng + ?Sized>(
    data: &Dataset,
    spec: &TransformSpec,
    unlabeled: &[usize],
    labeled: &[usize],
    augment: Augment,
    rng: &mut R,
) -> Result<Batch> {
    if data.is_empty() {
        return Err(Error::Input("cannot draw a batch from an empty dataset".into()));
    }
    let mut indices = unlabeled.to_vec();
    indices.extend_from_slice(labeled);
    if indices.is_empty() {
        return Err(Error::Input("batch must contain at least one entry".into()));
    }
    let mut labels = vec![None; unlabeled.len()];
    if !labeled.is_empty() {
        let all = data.require_labels()?;
        labels.extend(labeled.iter().map(|&i| Some(all[i])));
    }
    let originals = augment.apply(data.images.select(&indices)?, rng)?;
    let params = (0..indices.len()).map(|_| spec.sample(rng)).collect::<Result<Vec<_>>>()?;
    let hs: Vec<Homography> = params.iter().map(|p| p.h).collect();
    let transformed = warp_each(&originals, &hs)?;
    Ok(Batch { indices, originals, transformed, params, labels })
}

fn targets(batch: &Batch, head: DecoderHead) -> Result<TransformTargets> {
    match head {
        DecoderHead::Gaussian { dim } => {
            let mut data = Vec::with_capacity(batch.len() * dim);
            for p in &batch.params {
                data.extend(encode_target(p)?);
            }
            Ok(TransformTargets::Regression(Tensor::new(&[batch.len(), dim], data)?))
        }
        DecoderHead::Categorical { .. } => Ok(TransformTargets::Classes(
            batch
                .params
                .iter()
                .map(|p| p.class().ok_or(Error::UnsupportedKind("categorical decoder targets")))
                .collect::<Result<Vec<_>>>()?,
        )),
    }
}

/// The loss of one batch on a fresh tape.
pub struct StepGraph {
    pub graph: Graph,
    pub params: BoundParams,
    pub originals: Var,
    pub transformed: Var,
    pub loss: LossVars,
}

/// Builds the objective of `cfg.mode` for `batch`. With `track_inputs` the
/// image batches are differentiable leaves as well.
pub fn step_graph<R: Rng + ?Sized>(
    model: &Model,
    cfg: &TrainConfig,
    batch: &Batch,
    track_inputs: bool,
    rng: &mut R,
) -> Result<StepGraph> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, true);
    let xo = g.leaf(batch.originals.to_tensor(), track_inputs);
    let xt = g.leaf(batch.transformed.to_tensor(), track_inputs);
    let labeled = batch.labeled_rows();
    let label_values: Vec<usize> = labeled.iter().map(|&i| batch.labels[i].expect("labeled row")).collect();
    let loss = match cfg.mode {
        Mode::Aet => {
            let DecoderHead::Gaussian { .. } = model.head else {
                return Err(Error::Config("aet mode needs a regression decoder".into()));
            };
            let (zo, _) = model.encoder_forward(&mut g, &p, xo)?;
            let (zt, _) = model.encoder_forward(&mut g, &p, xt)?;
            let DecoderVars::Gaussian { mean, .. } = model.decode_graph(&mut g, &p, zt, zo)? else {
                unreachable!("gaussian head checked above")
            };
            let TransformTargets::Regression(t) = targets(batch, model.head)? else {
                unreachable!("gaussian head gives regression targets")
            };
            let t = g.constant(t);
            let mse = aet_loss(&mut g, t, mean)?;
            LossVars { total: mse, transformation: mse, label: None, entmin: None, lambda: 0.0 }
        }
        Mode::Avt | Mode::Sat => {
            let o = model.encode_graph(&mut g, &p, xo, None, rng)?;
            let t = model.encode_graph(&mut g, &p, xt, None, rng)?;
            let dec = model.decode_graph(&mut g, &p, t.sample, o.sample)?;
            let rows = avt_rows(&mut g, dec, &targets(batch, model.head)?)?;
            let sat = cfg.mode == Mode::Sat;
            let label = if sat && !labeled.is_empty() {
                let z = g.select_rows(o.sample, &labeled)?;
                let lp = model.classify_graph(&mut g, &p, z)?;
                Some(nll_rows(&mut g, lp, &label_values)?)
            } else {
                None
            };
            let unlabeled = batch.unlabeled_rows();
            let entropy = if sat && cfg.entmin_weight > 0.0 && !unlabeled.is_empty() {
                let z = g.select_rows(o.sample, &unlabeled)?;
                let lp = model.classify_graph(&mut g, &p, z)?;
                Some(entropy_min(&mut g, lp)?)
            } else {
                None
            };
            let lambda = if sat { cfg.lambda } else { 0.0 };
            semisup_objective(&mut g, SemisupTerms { transformation: rows, label, entropy }, lambda, cfg.entmin_weight)?
        }
        Mode::Supervised => {
            if labeled.is_empty() {
                return Err(Error::Input("supervised batch has no labeled entries".into()));
            }
            let o = model.encode_graph(&mut g, &p, xo, None, rng)?;
            let z = g.select_rows(o.sample, &labeled)?;
            let lp = model.classify_graph(&mut g, &p, z)?;
            let r = nll_rows(&mut g, lp, &label_values)?;
            let label = g.mean(r);
            let zero = g.constant(Tensor::scalar(0.0));
            LossVars { total: label, transformation: zero, label: Some(label), entmin: None, lambda: 1.0 }
        }
    };
    Ok(StepGraph { graph: g, params: p, originals: xo, transformed: xt, loss })
}

/// One metrics line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub transformation_term: f64,
    pub label_term: f64,
    pub entmin_term: f64,
}

impl StepRecord {
    fn new(step: u64, epoch: usize, lr: f64, b: &LossBreakdown) -> Self {
        Self {
            step,
            epoch,
            lr,
            total: b.total,
            transformation_term: b.transformation_term,
            label_term: b.label_term,
            entmin_term: b.entmin_term,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub opt: OptimizerState,
    /// Completed epochs.
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: Model) -> Self {
        let opt = OptimizerState::new(&model.params);
        Self { model, opt, epoch: 0 }
    }

    /// Model parameters followed by `opt.`-prefixed momentum buffers.
    pub fn to_checkpoint(&self, config_hash: &str, seed: u64) -> Result<Checkpoint> {
        let mut tensors = self.model.params.clone();
        for (name, buf) in self.model.params.names().iter().zip(&self.opt.buffers) {
            tensors.push(format!("opt.{name}"), buf.clone())?;
        }
        Ok(Checkpoint {
            meta: CheckpointMeta { config_hash: config_hash.to_owned(), epoch: self.epoch, step: self.opt.step, seed },
            tensors,
        })
    }
}

/// Receives metrics and checkpoints while training runs.
pub trait TrainSink {
    fn record(&mut self, rec: &StepRecord) -> Result<()>;

    fn checkpoint(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }

    fn epoch_end(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }

    /// Called once before a numerical abort is returned.
    fn abort(&mut self, _rec: &StepRecord, _reason: &str) -> Result<()> {
        Ok(())
    }
}

/// Keeps every record in memory.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub records: Vec<StepRecord>,
    pub checkpoints: Vec<usize>,
}

impl TrainSink for MemorySink {
    fn record(&mut self, rec: &StepRecord) -> Result<()> {
        self.records.push(*rec);
        Ok(())
    }

    fn checkpoint(&mut self, state: &TrainState) -> Result<()> {
        self.checkpoints.push(state.epoch);
        Ok(())
    }
}

impl MemorySink {
    /// Mean total loss of each epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let epochs = self.records.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
        let mut sum = vec![0.0; epochs];
        let mut n = vec![0usize; epochs];
        for r in &self.records {
            sum[r.epoch] += r.total;
            n[r.epoch] += 1;
        }
        sum.iter().zip(&n).map(|(s, &c)| s / c.max(1) as f64).collect()
    }
}

/// Endless reshuffling cursor over a pool of indices.
struct Cycler {
    pool: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn take<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.pool.len() {
                self.pool.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.pool[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Trains `model` on `data` and returns the final state. All randomness is
/// drawn from `rng`.
pub fn run<R: Rng + ?Sized>(
    cfg: &TrainConfig,
    spec: &TransformSpec,
    model: Model,
    data: &Dataset,
    rng: &mut R,
    sink: &mut dyn TrainSink,
) -> Result<TrainState> {
    cfg.validate()?;
    cfg.check_spec(spec)?;
    if DecoderHead::for_spec(spec) != model.head {
        return Err(Error::Config(format!(
            "model decoder {:?} does not match the transformation family {:?}",
            model.head,
            spec.kind()
        )));
    }
    model.check_input(data.images.dims())?;
    if data.is_empty() {
        return Err(Error::Input("training dataset is empty".into()));
    }
    let mut state = TrainState::new(model);
    if cfg.epochs == 0 {
        sink.checkpoint(&state)?;
        return Ok(state);
    }
    let labeled_pool = if cfg.labeled_per_batch > 0 {
        match cfg.labels_per_class {
            Some(k) => data.stratified_indices(k, rng)?,
            None => {
                data.require_labels()?;
                (0..data.len()).collect()
            }
        }
    } else {
        Vec::new()
    };
    let unlabeled_per_batch = if cfg.mode == Mode::Supervised { 0 } else { cfg.batch_size - cfg.labeled_per_batch };
    let steps = cfg.steps_per_epoch.unwrap_or_else(|| {
        let per = cfg.batch_size - cfg.labeled_per_batch;
        if per > 0 {
            data.len().div_ceil(per)
        } else {
            labeled_pool.len().div_ceil(cfg.labeled_per_batch)
        }
    });
    let augment = Augment { hflip: cfg.hflip, translate_px: cfg.translate_px };
    let mut labeled = Cycler { pos: labeled_pool.len(), pool: labeled_pool };
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.lr_at(epoch);
        order.shuffle(rng);
        for s in 0..steps {
            let unl: Vec<usize> =
                (0..unlabeled_per_batch).map(|j| order[(s * unlabeled_per_batch + j) % order.len()]).collect();
            let lab = labeled.take(cfg.labeled_per_batch, rng);
            let batch = build_batch(data, spec, &unl, &lab, augment, rng)?;
            let sg = step_graph(&state.model, cfg, &batch, false, rng)?;
            let values = sg.loss.values(&sg.graph)?;
            let rec = StepRecord::new(state.opt.step, epoch, lr, &values);
            if !values.total.is_finite() {
                let reason = format!("non-finite loss {} at step {} (epoch {epoch})", values.total, state.opt.step);
                sink.abort(&rec, &reason)?;
                return Err(Error::Numerical(reason));
            }
            let grads = sg.graph.backward(sg.loss.total)?;
            let grads: Vec<Tensor> = sg
                .params
                .vars
                .iter()
                .zip(state.model.params.tensors())
                .map(|(v, t)| grads.get_or_zeros(*v, t.shape()))
                .collect();
            if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
                let reason = format!(
                    "non-finite gradient for {} at step {} (epoch {epoch})",
                    state.model.params.names()[i],
                    state.opt.step
                );
                sink.abort(&rec, &reason)?;
                return Err(Error::Numerical(reason));
            }
            sink.record(&rec)?;
            sgd_step(&mut state.model.params, &grads, &mut state.opt, lr, cfg.momentum, cfg.weight_decay)?;
        }
        state.epoch = epoch + 1;
        sink.epoch_end(&state)?;
        if cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0 && state.epoch != cfg.epochs {
            sink.checkpoint(&state)?;
        }
    }
    sink.checkpoint(&state)?;
    Ok(state)
}
