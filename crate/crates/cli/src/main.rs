mod commands;
mod config;
mod error;
mod output;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brainreg::data::BallNorm;
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::SmoothFlags;
use config::{MethodName, RunConfig};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "brainreg", version, about = "Regularized voxel-wise encoding models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one estimator on every row and write the coefficient field.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Nested cross-validation with zero-shot scoring.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        folds: Option<usize>,
        /// Rows dropped on each side of a test block (dynamic datasets).
        #[arg(long)]
        trim: Option<usize>,
        #[arg(long)]
        rank_folds: Option<usize>,
    },
    /// Fit, then smooth the field across voxels.
    Smooth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Ball smoother with this radius at every voxel.
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long, value_enum)]
        norm: Option<NormArg>,
        /// Within-area Laplacian smoother with this strength.
        #[arg(long)]
        gamma: Option<f64>,
        /// Gaussian affinity bandwidth for --gamma (uniform when absent).
        #[arg(long)]
        bandwidth: Option<f64>,
    },
    /// Partition-misassignment experiment and marginal prior check.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Take the design matrix from this dataset instead of drawing one.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        no_prior_check: bool,
    },
    /// Sampler correctness checks: joint-distribution test, conditional
    /// means and the marginal prior check.
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        draws: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (beats the environment and the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory or manifest path.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodName>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormArg {
    L1,
    L2,
}

impl Common {
    fn load(&self) -> CliResult<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if self.seed.is_some() {
            config.seed = self.seed;
        }
        Ok(config)
    }
}

impl DataArgs {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(d) = &self.dataset {
            config.dataset = Some(d.clone());
        }
        if let Some(m) = self.method {
            config.method = m;
        }
    }
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Fit { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Smooth { common, .. }
            | Command::Simulate { common, .. }
            | Command::Check { common, .. } => common,
        }
    }
}

fn execute(command: Command) -> CliResult<commands::Completed> {
    let common = command.common();
    let mut config = common.load()?;
    match &command {
        Command::Fit { data, .. } | Command::Smooth { data, .. } => data.apply(&mut config),
        Command::Evaluate {
            data,
            folds,
            trim,
            rank_folds,
            ..
        } => {
            data.apply(&mut config);
            config.folds = folds.unwrap_or(config.folds);
            config.trim = trim.or(config.trim);
            config.rank_folds = rank_folds.unwrap_or(config.rank_folds);
        }
        Command::Simulate {
            dataset,
            replicates,
            no_prior_check,
            ..
        } => {
            if dataset.is_some() {
                config.dataset = dataset.clone();
            }
            config.simulate.replicates = replicates.unwrap_or(config.simulate.replicates);
            config.simulate.prior_check &= !no_prior_check;
        }
        Command::Check { draws, .. } => {
            config.check.draws = draws.unwrap_or(config.check.draws);
        }
    }
    config.seed()?;
    let out_dir = config.output_dir(common.out.as_deref());

    match common.threads {
        Some(0) => Err(CliError::validation("threads", "--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::runtime("threads", e.to_string()))?;
            pool.install(|| dispatch(&command, &config, &out_dir))
        }
        None => dispatch(&command, &config, &out_dir),
    }
}

fn dispatch(command: &Command, config: &RunConfig, out_dir: &Path) -> CliResult<commands::Completed> {
    match command {
        Command::Fit { .. } => commands::fit(config, out_dir),
        Command::Evaluate { .. } => commands::evaluate(config, out_dir),
        Command::Smooth {
            radius,
            norm,
            gamma,
            bandwidth,
            ..
        } => {
            let flags = SmoothFlags {
                radius: *radius,
                norm: norm.map(|n| match n {
                    NormArg::L1 => BallNorm::L1,
                    NormArg::L2 => BallNorm::L2,
                }),
                gamma: *gamma,
                bandwidth: *bandwidth,
            };
            commands::smooth(config, &flags, out_dir)
        }
        Command::Simulate { .. } => commands::simulate(config, out_dir),
        Command::Check { .. } => commands::check(config, out_dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let record = CliError::validation("usage", e.to_string().trim_end().to_string());
            eprintln!("{}", record.to_json());
            return ExitCode::from(record.kind.exit_code() as u8);
        }
    };
    match execute(cli.command) {
        Ok(done) => {
            // a closed stdout is not a failure: the artifacts are on disk
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{}", done.summary);
            for f in &done.files {
                let _ = writeln!(out, "  wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.kind.exit_code() as u8)
        }
    }
}
