use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use causal_al::graphdist::SpectrumMode;
use causal_al::kv::KeyValues;
use causal_al::pipeline::{self, PipelineConfig, StageOutcome, SEED_ENV};
use causal_al::{Error, Result};

#[derive(Parser)]
#[command(name = "causal-al", version, about = "Causal discovery, active data selection and interventions on feature tables")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (`key = value` lines)
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config entry; repeatable, flags win over the file
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config and CAUSAL_AL_SEED)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this
    #[arg(long, short, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the GMM over pivot features and write subset labels
    Cluster,
    /// Discover the DAG over all features with the target as a sink
    Discover,
    /// Rank features by total effect on the target and keep the top k
    SelectFeatures,
    /// Run greedy and random data selection against the global graph
    ActiveLearn,
    /// Plan per-molecule interventions toward the goal value
    Intervene,
    /// Nearest reference molecules for the intervened feature vectors
    Match,
    /// Histograms, similarity and success summary
    Report,
    /// Generate a synthetic world and a matching pipeline.conf
    Synth {
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
    /// Run cluster through report in order
    All,
    /// Spectral distance between two graph files
    GraphDist {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long, value_enum, default_value_t = Mode::Singular)]
        mode: Mode,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Heterogeneous,
    Descriptor,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Singular,
    Eigen,
}

fn overrides(common: &Common, command: &Command) -> Result<KeyValues> {
    let mut kv = KeyValues::new();
    for entry in &common.set {
        let (k, v) = entry
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{entry}`")))?;
        kv.set(k.trim(), v.trim());
    }
    if let Some(out) = &common.out {
        kv.set("out_dir", out.display());
    }
    if let Some(seed) = common.seed {
        kv.set("seed", seed);
    }
    if let Command::Synth { preset: Some(p) } = command {
        kv.set(
            "synth_preset",
            match p {
                Preset::Heterogeneous => "heterogeneous",
                Preset::Descriptor => "descriptor",
            },
        );
    }
    Ok(kv)
}

fn report(outcome: &StageOutcome) {
    println!("{}: {}", outcome.stage, outcome.summary);
}

fn run(cli: Cli) -> Result<()> {
    if let Command::GraphDist { a, b, top_n, mode } = &cli.command {
        let mode = match mode {
            Mode::Singular => SpectrumMode::SingularValues,
            Mode::Eigen => SpectrumMode::EigenvalueModuli,
        };
        let d = pipeline::graph_distance(a, b, *top_n, mode)?;
        println!("{d:?}");
        return Ok(());
    }
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = PipelineConfig::load(
        cli.common.config.as_deref(),
        &overrides(&cli.common, &cli.command)?,
        env_seed.as_deref(),
    )?;
    let jobs = cli.common.jobs.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| {
        let stages: Vec<pipeline::StageFn> = match cli.command {
            Command::Cluster => vec![pipeline::cluster],
            Command::Discover => vec![pipeline::discover],
            Command::SelectFeatures => vec![pipeline::select_features],
            Command::ActiveLearn => vec![pipeline::active_learn],
            Command::Intervene => vec![pipeline::intervene],
            Command::Match => vec![pipeline::match_reference],
            Command::Report => vec![pipeline::report],
            Command::Synth { .. } => vec![pipeline::synth],
            Command::All => pipeline::PIPELINE.iter().map(|(_, f)| *f).collect(),
            Command::GraphDist { .. } => unreachable!(),
        };
        for stage in stages {
            report(&stage(&cfg)?);
        }
        Ok(())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("{}: {msg}", kind.prefix());
            ExitCode::from(kind.exit_code() as u8)
        }
    }
}
