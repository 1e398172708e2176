use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use metatree::{Engine, LeafPrior};
use metatree_cli::commands;
use metatree_cli::config::{AssignmentConfig, Depth, LeafPriorConfig, RunConfig, SplitPriorConfig};

#[derive(Debug, Parser)]
#[command(name = "metatree", version, about = "Exact Bayesian posteriors over meta-trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a CSV and write the model JSON plus a one-line report.
    Fit(Common),
    /// Predict P(y = 1) for each row of a CSV with a saved model.
    Predict(Common),
    /// Check every engine (and optionally a saved model) against subtree enumeration.
    Verify(Common),
    /// Time the engines over growing sample sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV with header x1,...,xK[,y].
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model JSON to read (predict, verify).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// sequential, batch, sparse or lazy.
    #[arg(long)]
    engine: Option<Engine>,
    #[arg(long)]
    seed: Option<u64>,
    /// Branching factor M.
    #[arg(long)]
    arity: Option<u32>,
    /// Feature count K.
    #[arg(long)]
    features: Option<u32>,
    /// Depth bound, or "unbounded".
    #[arg(long)]
    max_depth: Option<Depth>,
    /// Feature per depth, comma separated.
    #[arg(long, value_delimiter = ',')]
    assignment: Option<Vec<u32>>,
    /// Split probability, shared or comma-separated per depth.
    #[arg(long, value_delimiter = ',')]
    g: Option<Vec<f64>>,
    /// Beta prior on every leaf, as ALPHA,BETA.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    beta_prior: Option<Vec<f64>>,
    /// Deepest split the lazy engine may make.
    #[arg(long)]
    depth_cap: Option<usize>,
    /// Feature values in the CSV are 0-based.
    #[arg(long)]
    zero_based: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Repetitions per size.
    #[arg(long)]
    reps: Option<usize>,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Engines to time, comma separated.
    #[arg(long, value_delimiter = ',')]
    engines: Option<Vec<Engine>>,
}

impl Common {
    fn config(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.data {
            c.data = Some(v.clone());
        }
        if let Some(v) = &self.model {
            c.model = Some(v.clone());
        }
        if let Some(v) = &self.out {
            c.out = Some(v.clone());
        }
        if let Some(v) = self.engine {
            c.engine = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.arity {
            c.arity = v;
        }
        if let Some(v) = self.features {
            c.feature_count = Some(v);
        }
        if let Some(v) = self.max_depth {
            c.max_depth = v;
        }
        if let Some(v) = &self.assignment {
            c.assignment = Some(AssignmentConfig::Depths(v.clone()));
        }
        if let Some(v) = &self.g {
            c.split_prior = match v.as_slice() {
                [g] => SplitPriorConfig::Shared(*g),
                gs => SplitPriorConfig::ByDepth(gs.to_vec()),
            };
        }
        if let Some(v) = &self.beta_prior {
            c.leaf_prior = LeafPriorConfig::Shared(LeafPrior::bernoulli_beta(v[0], v[1])?);
        }
        if let Some(v) = self.depth_cap {
            c.depth_cap = v;
        }
        c.zero_based |= self.zero_based;
        Ok(c)
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Fit(common) => {
            commands::cmd_fit(&common.config()?, &mut out)?;
        }
        Command::Predict(common) => commands::cmd_predict(&common.config()?, &mut out)?,
        Command::Verify(common) => return commands::cmd_verify(&common.config()?, &mut out),
        Command::Bench(args) => {
            let mut config = args.common.config()?;
            if let Some(v) = args.reps {
                config.reps = v;
            }
            if let Some(v) = args.sizes {
                config.sizes = v;
            }
            if let Some(v) = args.engines {
                config.engines = v;
            }
            commands::cmd_bench(&config, &mut out)?;
        }
    }
    out.flush()?;
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
