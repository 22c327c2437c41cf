//! The `hillie` command line.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use hillie::checkpoint::read_checkpoint;
use hillie::config::{ConfigError, RunConfig};
use hillie::enhancer::CurveEnhancer;
use hillie::image::{load_image, save_image};
use hillie::pipeline::{Phase1Metrics, Pipeline, PipelineError, StageMetrics, Workdir};
use hillie::study::{build_matrix, export_report, read_votes_csv, thurstone_scores, StudyError};

const SCALES: &str = "\
Configuration:
  Settings come from --config FILE, else from WORKDIR/config.json when it
  exists, else from the built-in defaults; each --set key=value then
  overrides one key (values are JSON, bare words are strings). Unknown keys
  and out-of-range values are rejected with every offending key named.

  Defaults are desk-scale, sized for a CPU. Paper-scale values:

    key                 desk     paper
    stages              3        5
    top_k               16       300
    annotators          3        3
    lambda_r            0.1      0.1
    finetune_lr         0.01     1e-5
    finetune_iters      1000     10000
    finetune_batch      2        2
    ranker_blocks       4        9
    ranker_lr           1e-3     1e-5
    ranker_iters        500      5000
    ranker_batch        8        8
    bootstrap_halve_every  iters/3  20000

  The enhancer is a tone-curve model rather than a diffusion network, so
  its pretraining settings have no paper-scale counterpart.

Exit codes:
  0 success, 2 usage, 3 invalid configuration, 4 votes still pending,
  5 work directory state (locked, out of order, config mismatch),
  6 input or file error, 7 training failure, 8 study data error.
";

#[derive(Debug, Parser)]
#[command(name = "hillie", version, about = "Human-in-the-loop training of a low-light enhancer against a learned quality ranker", after_long_help = SCALES)]
pub struct Cli {
    /// Work directory holding config.json and the stages.
    #[arg(long, global = true, default_value = "work")]
    pub workdir: PathBuf,
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain the stage 0 enhancer and save its intermediate versions.
    Pretrain,
    /// Train the initial ranker on NIQE labels of the pretraining versions.
    BootstrapRanker,
    /// Advance one stage: pairs, selection, votes, ranker, next enhancer.
    RunStage {
        #[arg(long)]
        stage: u32,
    },
    /// Phase 1 followed by every stage.
    RunAll,
    /// Serve the annotation API (and optionally a UI directory).
    Serve {
        #[arg(long, default_value_t = hillie_service::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Static files served at /.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// Cast the missing simulated votes of a stage.
    SimulateVotes {
        #[arg(long)]
        stage: u32,
    },
    /// Enhance one PNG with a checkpoint file or `stage-N` of the work directory.
    Enhance {
        #[arg(long)]
        ckpt: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Thurstone global scores from a CSV of method_i,method_j,winner votes.
    StudyAggregate {
        #[arg(long)]
        votes: PathBuf,
        /// Directory for scores.csv and report.json.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error(transparent)]
    Service(#[from] hillie_service::ServiceError),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use PipelineError as P;
        match self {
            CliError::Config(_) | CliError::Pipeline(P::Config(_)) => 3,
            CliError::Pipeline(P::IncompleteVotes { .. }) => 4,
            CliError::Pipeline(
                P::Locked(_)
                | P::StageMismatch { .. }
                | P::ConfigMismatch(_)
                | P::NotReady { .. }
                | P::BeyondLastStage { .. }
                | P::NoLabels { .. }
                | P::UnknownPair(_),
            ) => 5,
            CliError::Pipeline(P::Enhance(_) | P::Ranker(_) | P::Bootstrap(_) | P::NoPairs | P::ZeroK) => 7,
            CliError::Pipeline(_) | CliError::Input(_) | CliError::Io(_) => 6,
            CliError::Service(hillie_service::ServiceError::Config(_)) => 3,
            CliError::Service(_) => 6,
            CliError::Study(_) => 8,
        }
    }
}

/// Configuration for `workdir`: `--config`, else the recorded one, else defaults; then `--set`.
pub fn resolve_config(workdir: &Path, config: Option<&Path>, set: &[String]) -> Result<RunConfig, ConfigError> {
    let recorded = Workdir::new(workdir).config();
    let base = match config {
        Some(p) => RunConfig::load(p)?,
        None if recorded.exists() => RunConfig::load(&recorded)?,
        None => RunConfig::default(),
    };
    let c = base.with_overrides(set)?;
    c.validate()?;
    Ok(c)
}

fn open(cli: &Cli) -> Result<Pipeline, CliError> {
    let config = resolve_config(&cli.workdir, cli.config.as_deref(), &cli.set)?;
    Ok(Pipeline::open(&cli.workdir, config)?)
}

fn print_phase1(m: &Phase1Metrics) {
    let acc = m.bootstrap_holdout_accuracy.map_or("-".to_string(), |a| format!("{a:.3}"));
    println!("{:>5}  {:>10}  {:>10}  {:>10}  {:>10}", "stage", "l_total", "ranker_acc", "utility", "preference");
    println!(
        "{:>5}  {:>10.5}  {:>10}  {:>10.5}  {:>10.3}",
        0, m.finetune_total_last, acc, m.utility_after, m.preference_rate
    );
}

fn print_stage(m: &StageMetrics) {
    println!(
        "{:>5}  {:>10.5}  {:>10.3}  {:>10.5}  {:>10.3}",
        m.stage, m.finetune_total_last, m.fresh_accuracy, m.utility_after, m.preference_rate
    );
}

fn enhancer_path(workdir: &Path, ckpt: &str) -> Result<PathBuf, CliError> {
    match ckpt.strip_prefix("stage-") {
        Some(n) => {
            let n: u32 = n.parse().map_err(|_| CliError::Input(format!("bad stage in {ckpt:?}")))?;
            Ok(Workdir::new(workdir).enhancer(n))
        }
        None => Ok(PathBuf::from(ckpt)),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Pretrain => {
            let r = open(&cli)?.pretrain()?;
            println!("pretraining loss {:.5} -> {:.5}, {} intermediates", r.loss_first, r.loss_last, r.intermediates);
        }
        Command::BootstrapRanker => {
            let r = open(&cli)?.bootstrap_ranker()?;
            let acc = r.holdout_accuracy.map_or("-".to_string(), |a| format!("{a:.3}"));
            println!("{} NIQE pairs ({} for training), held-out accuracy {acc}", r.pairs, r.train_pairs);
        }
        Command::RunStage { stage } => {
            let p = open(&cli)?;
            let m = p.run_stage(*stage)?;
            println!("{:>5}  {:>10}  {:>10}  {:>10}  {:>10}", "stage", "l_total", "ranker_acc", "utility", "preference");
            print_stage(&m);
        }
        Command::RunAll => {
            let p = open(&cli)?;
            let phase1 = p.run_phase1()?;
            print_phase1(&phase1);
            for n in 1..p.config().stages {
                print_stage(&p.run_stage(n)?);
            }
        }
        Command::Serve { port, host, ui_dir } => {
            let state = std::sync::Arc::new(hillie_service::AppState::open(&cli.workdir)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind((host.as_str(), *port)).await?;
                eprintln!("serving {} on http://{}", cli.workdir.display(), listener.local_addr()?);
                hillie_service::serve(listener, state, ui_dir.clone(), async {
                    tokio::signal::ctrl_c().await.ok();
                })
                .await
            })?;
        }
        Command::SimulateVotes { stage } => {
            let p = open(&cli)?;
            let cast = p.simulate_votes(*stage)?;
            println!("{cast} votes cast, {} pairs pending", p.pending_pairs(*stage)?.len());
        }
        Command::Enhance { ckpt, input, output } => {
            let ck = read_checkpoint(enhancer_path(&cli.workdir, ckpt)?).map_err(PipelineError::from)?;
            let f = CurveEnhancer::from_checkpoint(&ck).map_err(PipelineError::from)?;
            let x = load_image(input).map_err(PipelineError::from)?;
            let y = f.enhance(&x).map_err(PipelineError::from)?;
            save_image(&y, output).map_err(PipelineError::from)?;
        }
        Command::StudyAggregate { votes, out } => {
            let votes = read_votes_csv(std::fs::File::open(votes)?)?;
            let matrix = build_matrix(&votes)?;
            let scores = thurstone_scores(&matrix)?;
            export_report(&scores, &matrix, out)?;
            let mut order: Vec<usize> = (0..matrix.methods.len()).collect();
            order.sort_by(|&a, &b| scores.q[b].total_cmp(&scores.q[a]).then_with(|| matrix.methods[a].cmp(&matrix.methods[b])));
            for i in order {
                println!("{:<24} {:>9.4}", matrix.methods[i], scores.q[i]);
            }
        }
    }
    Ok(())
}
