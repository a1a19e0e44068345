use aet_cli::config::RunConfig;
use aet_cli::run::{self, Protocol, FINAL_CHECKPOINT};
use aet_cli::{exit_code, report};
use aet_core::eval::ProbeHead;
use aet_core::train::Mode;
use aet_core::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "aet", version, about = "Train and evaluate transformation autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write manifest, metrics and checkpoints.
    Train(TrainArgs),
    /// Evaluate the frozen encoder of a training run.
    Eval {
        #[command(subcommand)]
        protocol: EvalCommand,
    },
    /// Plot loss curves and tabulate test errors of finished runs.
    Report {
        /// Training run directories.
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Aet,
    Avt,
    Sat,
    Supervised,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Aet => Mode::Aet,
            ModeArg::Avt => Mode::Avt,
            ModeArg::Sat => Mode::Sat,
            ModeArg::Supervised => Mode::Supervised,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Full-length schedules, batch sizes and epochs.
    #[arg(long)]
    paper_scale: bool,
    /// Weight of the entropy term on unlabeled examples.
    #[arg(long)]
    entmin: Option<f64>,
    /// Weight of the label term.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Linear,
    Nonlinear,
}

impl From<HeadArg> for ProbeHead {
    fn from(h: HeadArg) -> Self {
        match h {
            HeadArg::Linear => ProbeHead::Linear,
            HeadArg::Nonlinear => ProbeHead::Nonlinear,
        }
    }
}

#[derive(Args)]
struct EvalCommon {
    /// Training run directory.
    #[arg(long)]
    run: PathBuf,
    /// Defaults to the run's final checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Defaults to the run's training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Defaults to `<run>/eval/<protocol>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// K-nearest-neighbor test error.
    Knn {
        #[command(flatten)]
        common: EvalCommon,
        /// Neighbor counts; defaults to the run config's list.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
    },
    /// Probe classifier trained on frozen features.
    Probe {
        #[command(flatten)]
        common: EvalCommon,
        #[arg(long, value_enum)]
        head: Option<HeadArg>,
    },
    /// Probe errors for several labeled-set sizes.
    FewLabel {
        #[command(flatten)]
        common: EvalCommon,
        #[arg(long, value_delimiter = ',')]
        per_class: Vec<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long, value_enum)]
        head: Option<HeadArg>,
    },
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(m) = a.mode {
        cfg.apply_mode(m.into());
    }
    if a.paper_scale {
        cfg.paper_scale();
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(w) = a.entmin {
        cfg.train.entmin_weight = w;
    }
    if let Some(l) = a.lambda {
        cfg.train.lambda = l;
    }
    let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = std::fs::canonicalize(&base).unwrap_or(base);
    let state = run::train(cfg, base, &a.out)?;
    eprintln!("trained {} epochs ({} steps); outputs in {}", state.epoch, state.opt.step, a.out.display());
    Ok(())
}

fn cmd_eval(e: EvalCommand) -> Result<()> {
    let common = match &e {
        EvalCommand::Knn { common, .. } | EvalCommand::Probe { common, .. } | EvalCommand::FewLabel { common, .. } => {
            common
        }
    };
    let (cfg, _, _) = run::read_run(&common.run)?;
    let head = |h: &Option<HeadArg>| h.map(Into::into).unwrap_or(cfg.eval.head);
    let or_default = |v: &Vec<usize>, d: &Vec<usize>| if v.is_empty() { d.clone() } else { v.clone() };
    let protocol = match &e {
        EvalCommand::Knn { k, .. } => Protocol::Knn { k: or_default(k, &cfg.eval.k) },
        EvalCommand::Probe { head: h, .. } => Protocol::Probe { head: head(h) },
        EvalCommand::FewLabel { per_class, repeats, head: h, .. } => Protocol::FewLabel {
            per_class: or_default(per_class, &cfg.eval.per_class),
            repeats: repeats.unwrap_or(cfg.eval.repeats),
            head: head(h),
        },
    };
    let checkpoint = common.checkpoint.clone().unwrap_or_else(|| common.run.join(FINAL_CHECKPOINT));
    let seed = common.seed.unwrap_or(cfg.train.seed);
    let out = common.out.clone().unwrap_or_else(|| common.run.join("eval").join(protocol.name()));
    for r in run::evaluate(&common.run, &checkpoint, protocol, seed, &out)? {
        println!("{},{},{},{}", r.protocol, r.setting, r.seed, r.error_rate);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval { protocol } => cmd_eval(protocol),
        Command::Report { runs, out } => report::report(&runs, &out),
        Command::Replay { manifest, out } => run::replay(&manifest, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
