use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use log::error;
use tdm_core::doctaet::parse_parts;
use tdm_core::pipeline::{self, PipelineConfig, PipelineError, Stage};

/// Leaderboard (task, dataset, metric) extraction pipeline.
///
/// Stages run in the order given. Flags override values read from the
/// `--config` file.
#[derive(Debug, Parser)]
#[command(name = "tdm", version)]
struct Cli {
    /// Stages to run; `all` runs ingest through evaluate.
    #[arg(value_enum, required = true)]
    stages: Vec<StageArg>,

    /// TOML pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    tei_dir: Option<PathBuf>,

    #[arg(long)]
    papers: Option<PathBuf>,

    #[arg(long)]
    evaluations: Option<PathBuf>,

    #[arg(long)]
    work_dir: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    /// False triples sampled per training paper.
    #[arg(long)]
    k_false: Option<usize>,

    /// Entailment score a triple must exceed to be predicted.
    #[arg(long)]
    threshold: Option<f64>,

    /// `lexical:` or http(s)://host/score
    #[arg(long)]
    scorer: Option<String>,

    #[arg(long)]
    min_papers: Option<usize>,

    /// Feature parts, e.g. `title,abstract,table_info`.
    #[arg(long)]
    parts: Option<String>,

    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,

    /// Only process this fold.
    #[arg(long)]
    fold: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    Ingest,
    BuildCorpus,
    MakeInstances,
    Predict,
    Evaluate,
    Ablate,
    /// ingest, build-corpus, make-instances, predict, evaluate
    All,
    /// Check stage manifests against the files in the work directory.
    Verify,
}

impl StageArg {
    fn expand(self) -> Vec<Stage> {
        match self {
            StageArg::Ingest => vec![Stage::Ingest],
            StageArg::BuildCorpus => vec![Stage::BuildCorpus],
            StageArg::MakeInstances => vec![Stage::MakeInstances],
            StageArg::Predict => vec![Stage::Predict],
            StageArg::Evaluate => vec![Stage::Evaluate],
            StageArg::Ablate => vec![Stage::Ablate],
            StageArg::All => vec![
                Stage::Ingest,
                Stage::BuildCorpus,
                Stage::MakeInstances,
                Stage::Predict,
                Stage::Evaluate,
            ],
            StageArg::Verify => vec![],
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|_| PipelineError::MissingInput(path.clone()))?;
            toml::from_str(&text)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(v) = &cli.tei_dir {
        cfg.tei_dir = v.clone();
    }
    if let Some(v) = &cli.papers {
        cfg.papers = v.clone();
    }
    if let Some(v) = &cli.evaluations {
        cfg.evaluations = v.clone();
    }
    if let Some(v) = &cli.work_dir {
        cfg.work_dir = v.clone();
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.k_false {
        cfg.k_false = v;
    }
    if let Some(v) = cli.threshold {
        cfg.threshold = v;
    }
    if let Some(v) = &cli.scorer {
        cfg.scorer = v.clone();
    }
    if let Some(v) = cli.min_papers {
        cfg.min_papers = v;
    }
    if let Some(v) = &cli.parts {
        cfg.features.enabled_parts =
            parse_parts(v).map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    if cli.fold.is_some() {
        cfg.fold = cli.fold;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = load_config(cli)?;
    for arg in &cli.stages {
        if *arg == StageArg::Verify {
            let manifests = pipeline::verify_manifests(&cfg.work_dir).map_err(|msg| {
                PipelineError::Io {
                    path: cfg.work_dir.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::InvalidData, msg),
                }
            })?;
            println!("{} manifests verified", manifests.len());
            continue;
        }
        for stage in arg.expand() {
            let manifest = pipeline::run_stage(stage, &cfg)?;
            for out in &manifest.outputs {
                println!("{stage}: wrote {}", out.path);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build();
    let result = match pool {
        Ok(pool) => pool.install(|| run(&cli)),
        Err(e) => Err(PipelineError::Config(format!("--jobs: {e}"))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
