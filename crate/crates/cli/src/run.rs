//! Manifests and the train and eval commands.

use crate::config::RunConfig;
use aet_core::data::Dataset;
use aet_core::eval::{
    extract_features, few_label_protocol, knn_error, probe_train, rows_to_csv, EvalRow, FeatureBank, ProbeHead,
};
use aet_core::nets::{read_checkpoint, write_checkpoint, DecoderHead, Model};
use aet_core::train::{run, StepRecord, TrainSink, TrainState};
use aet_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "kebab-case")]
pub enum Protocol {
    Knn { k: Vec<usize> },
    Probe { head: ProbeHead },
    FewLabel { per_class: Vec<usize>, repeats: usize, head: ProbeHead },
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Knn { .. } => "knn",
            Protocol::Probe { .. } => "probe",
            Protocol::FewLabel { .. } => "few-label",
        }
    }
}

/// Everything needed to repeat a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Train {
        config: RunConfig,
        /// Directory that relative data paths resolve against.
        base_dir: PathBuf,
    },
    Eval {
        run_dir: PathBuf,
        checkpoint: PathBuf,
        protocol: Protocol,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub invocation: Invocation,
    pub config_hash: String,
    pub code_hash: String,
    pub seed: u64,
    /// Artifact names relative to the output directory.
    pub layout: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(e.column() as u64, format!("{}: {e}", path.display())))
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

pub fn code_hash() -> String {
    env!("AET_SOURCE_HASH").to_owned()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `metrics.jsonl` and checkpoints under the run directory.
struct FileSink {
    dir: PathBuf,
    metrics: BufWriter<File>,
    metrics_path: PathBuf,
    config_hash: String,
    seed: u64,
    epochs: usize,
}

impl FileSink {
    fn io(&self, e: std::io::Error) -> Error {
        Error::io(&self.metrics_path, e)
    }
}

impl TrainSink for FileSink {
    fn record(&mut self, rec: &StepRecord) -> Result<()> {
        let line = serde_json::to_string(rec).expect("record serializes");
        writeln!(self.metrics, "{line}").map_err(|e| self.io(e))
    }

    fn checkpoint(&mut self, state: &TrainState) -> Result<()> {
        let path = if state.epoch == self.epochs {
            self.dir.join(FINAL_CHECKPOINT)
        } else {
            let d = self.dir.join(CHECKPOINT_DIR);
            create_dir(&d)?;
            d.join(format!("epoch-{:05}.ckpt", state.epoch))
        };
        write_checkpoint(&state.to_checkpoint(&self.config_hash, self.seed)?, &path)
    }

    fn epoch_end(&mut self, _state: &TrainState) -> Result<()> {
        self.metrics.flush().map_err(|e| self.io(e))
    }

    fn abort(&mut self, rec: &StepRecord, reason: &str) -> Result<()> {
        let mut v = serde_json::to_value(rec).expect("record serializes");
        v["abort"] = serde_json::Value::String(reason.to_owned());
        writeln!(self.metrics, "{v}").map_err(|e| self.io(e))?;
        self.metrics.flush().map_err(|e| self.io(e))
    }
}

pub fn new_model(cfg: &RunConfig, label_classes: usize, rng: &mut ChaCha8Rng) -> Result<Model> {
    Model::new(cfg.nets.clone(), DecoderHead::for_spec(&cfg.xform), label_classes, rng)
}

/// Trains into `out`, writing the manifest before anything else.
pub fn train(config: RunConfig, base_dir: PathBuf, out: &Path) -> Result<TrainState> {
    config.validate()?;
    create_dir(out)?;
    let seed = config.train.seed;
    let layout = BTreeMap::from([
        ("manifest".to_owned(), MANIFEST.to_owned()),
        ("metrics".to_owned(), METRICS.to_owned()),
        ("checkpoint".to_owned(), FINAL_CHECKPOINT.to_owned()),
        ("intermediate_checkpoints".to_owned(), format!("{CHECKPOINT_DIR}/epoch-NNNNN.ckpt")),
    ]);
    let manifest = Manifest {
        config_hash: config.hash(),
        code_hash: code_hash(),
        seed,
        layout,
        invocation: Invocation::Train { config: config.clone(), base_dir: base_dir.clone() },
    };
    manifest.write(out)?;
    let (train_set, _) = config.data.load(&base_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = new_model(&config, train_set.class_count, &mut rng)?;
    let metrics_path = out.join(METRICS);
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut sink = FileSink {
        dir: out.to_path_buf(),
        metrics: BufWriter::new(file),
        metrics_path,
        config_hash: manifest.config_hash.clone(),
        seed,
        epochs: config.train.epochs,
    };
    let result = run(&config.train, &config.xform, model, &train_set, &mut rng, &mut sink);
    sink.metrics.flush().map_err(|e| sink.io(e))?;
    result
}

/// The training config, base directory and config hash recorded in a run.
pub fn read_run(run_dir: &Path) -> Result<(RunConfig, PathBuf, String)> {
    let m = Manifest::read(&run_dir.join(MANIFEST))?;
    match m.invocation {
        Invocation::Train { config, base_dir } => Ok((config, base_dir, m.config_hash)),
        Invocation::Eval { .. } => Err(Error::Config(format!(
            "{} describes an evaluation, not a training run",
            run_dir.join(MANIFEST).display()
        ))),
    }
}

/// Restores the model of a run from `checkpoint`.
pub fn load_model(cfg: &RunConfig, config_hash: &str, checkpoint: &Path, label_classes: usize) -> Result<Model> {
    let ckpt = read_checkpoint(checkpoint)?;
    if ckpt.meta.config_hash != config_hash {
        return Err(Error::format(
            0,
            format!(
                "{} was written under config {}, the run config is {}",
                checkpoint.display(),
                ckpt.meta.config_hash,
                config_hash
            ),
        ));
    }
    let mut model = new_model(cfg, label_classes, &mut ChaCha8Rng::seed_from_u64(0))?;
    model.load_tensors(&ckpt.tensors)?;
    Ok(model)
}

fn features(model: &Model, train: &Dataset, test: &Dataset, n: usize, seed: u64) -> Result<(FeatureBank, FeatureBank)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((extract_features(model, train, n, &mut rng)?, extract_features(model, test, n, &mut rng)?))
}

#[derive(Debug, Serialize)]
struct EvalSummary<'a> {
    protocol: &'a str,
    checkpoint_sha256: String,
    encoder_digest: String,
    rows: &'a [EvalRow],
}

/// Evaluates a run's checkpoint and writes `<protocol>.csv` and
/// `<protocol>.json` under `out`.
pub fn evaluate(run_dir: &Path, checkpoint: &Path, protocol: Protocol, seed: u64, out: &Path) -> Result<Vec<EvalRow>> {
    let (cfg, base_dir, config_hash) = read_run(run_dir)?;
    create_dir(out)?;
    let name = protocol.name();
    let manifest = Manifest {
        config_hash: config_hash.clone(),
        code_hash: code_hash(),
        seed,
        layout: BTreeMap::from([
            ("manifest".to_owned(), MANIFEST.to_owned()),
            ("table".to_owned(), format!("{name}.csv")),
            ("summary".to_owned(), format!("{name}.json")),
        ]),
        invocation: Invocation::Eval {
            run_dir: run_dir.to_path_buf(),
            checkpoint: checkpoint.to_path_buf(),
            protocol: protocol.clone(),
            seed,
        },
    };
    manifest.write(out)?;
    let (train_set, test_set) = cfg.data.load(&base_dir)?;
    let model = load_model(&cfg, &config_hash, checkpoint, train_set.class_count)?;
    let before = model.encoder_digest();
    let (bank, test) = features(&model, &train_set, &test_set, cfg.nets.n_samples, seed)?;
    let row = |setting: String, error_rate: f64| EvalRow { protocol: name.to_owned(), setting, seed, error_rate };
    let probe = aet_core::eval::ProbeConfig { seed, ..cfg.eval.probe.clone() };
    let rows = match &protocol {
        Protocol::Knn { k } => {
            k.iter().map(|&k| Ok(row(format!("k={k}"), knn_error(&bank, &test, k)?))).collect::<Result<Vec<_>>>()?
        }
        Protocol::Probe { head } => vec![row(head_name(*head).to_owned(), probe_train(&bank, &test, *head, &probe)?)],
        Protocol::FewLabel { per_class, repeats, head } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            few_label_protocol(&bank, &test, per_class, *repeats, *head, &probe, &mut rng)?
                .into_iter()
                .map(|r| row(format!("{}/per_class={}", head_name(*head), r.per_class), r.mean_error))
                .collect()
        }
    };
    if model.encoder_digest() != before {
        return Err(Error::Contract("evaluation modified the encoder".into()));
    }
    write_file(&out.join(format!("{name}.csv")), rows_to_csv(&rows))?;
    let bytes = std::fs::read(checkpoint).map_err(|e| Error::io(checkpoint, e))?;
    let summary = EvalSummary {
        protocol: name,
        checkpoint_sha256: format!("{:x}", Sha256::digest(&bytes)),
        encoder_digest: before,
        rows: &rows,
    };
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    write_file(&out.join(format!("{name}.json")), json)?;
    Ok(rows)
}

pub fn head_name(h: ProbeHead) -> &'static str {
    match h {
        ProbeHead::Linear => "linear",
        ProbeHead::Nonlinear => "nonlinear",
    }
}

/// Repeats the command recorded in `manifest` with outputs under `out`.
pub fn replay(manifest: &Path, out: &Path) -> Result<()> {
    let m = Manifest::read(manifest)?;
    match m.invocation {
        Invocation::Train { config, base_dir } => train(config, base_dir, out).map(|_| ()),
        Invocation::Eval { run_dir, checkpoint, protocol, seed } => {
            evaluate(&run_dir, &checkpoint, protocol, seed, out).map(|_| ())
        }
    }
}
