#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{load_config, parse_modes, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(
    name = "llg",
    version,
    about = "Controlled Landau-Lifshitz-Gilbert Galerkin experiments"
)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config, or a JSON summary of an earlier run
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// JSON summary path; CSV data files are written beside it
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (default: available parallelism)
    #[arg(long, global = true, env = "LLG_THREADS")]
    threads: Option<usize>,

    /// Truncation order
    #[arg(long = "K", global = true)]
    order: Option<usize>,

    #[arg(long, global = true, allow_negative_numbers = true)]
    mu1: Option<f64>,

    #[arg(long, global = true, allow_negative_numbers = true)]
    mu2: Option<f64>,

    /// Control modes as `frequency:axis` pairs, e.g. `0:1,0:2,1:1`
    #[arg(long, global = true)]
    modes: Option<String>,

    /// Horizon
    #[arg(long = "T", global = true)]
    horizon: Option<f64>,

    #[arg(long, global = true)]
    dt: Option<f64>,

    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub(crate) enum Command {
    /// Integrate the controlled system and write the trajectory
    Simulate {
        /// Control schedule JSON, or a steer summary
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Run the Stratonovich system with this noise amplitude instead
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Sampled Lie rank of the control family
    Rank {
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Synthesize a steering control from m0 to m1
    Steer {
        /// Schedule segments
        #[arg(long = "S")]
        segments: Option<usize>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        eps_target: Option<f64>,
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Small-ball probability estimates around m0
    Support {
        #[arg(long)]
        eps: Option<f64>,
        /// Number of paths
        #[arg(long = "N")]
        paths: Option<usize>,
        /// Grid radius around m0
        #[arg(long = "R")]
        radius: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        /// Steering schedule (or steer summary) used as the Girsanov shift
        #[arg(long)]
        shift: Option<PathBuf>,
        /// Steer each grid point and shift by its control
        #[arg(long)]
        steer: bool,
    },
    /// Galerkin truncations against the finite-difference PDE
    PdeCompare {
        /// Truncation orders to compare, e.g. `2,4,8,16` (default: K)
        #[arg(long, value_delimiter = ',')]
        orders: Vec<usize>,
        #[arg(long = "N_x")]
        nx: Option<usize>,
        #[arg(long)]
        richardson: bool,
    },
    /// Tail energy growth beyond frequency K along a PDE run
    Tail {
        #[arg(long = "T1")]
        horizon: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long = "N_x")]
        nx: Option<usize>,
    },
}

impl Cli {
    fn effective_config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut c = match &self.common.config {
            Some(p) => load_config(p)?,
            None => ExperimentConfig::default(),
        };
        let f = &self.common;
        if f.order.is_some() {
            c.order = f.order;
        }
        if let Some(v) = f.mu1 {
            c.mu1 = v;
        }
        if let Some(v) = f.mu2 {
            c.mu2 = v;
        }
        if let Some(m) = &f.modes {
            c.control_modes = parse_modes(m)?;
        }
        if let Some(v) = f.horizon {
            c.horizon = v;
        }
        if let Some(v) = f.dt {
            c.dt = v;
        }
        if let Some(v) = f.seed {
            c.seed = v;
        }
        match &self.command {
            Command::Rank { samples } => {
                if let Some(v) = samples {
                    c.rank.samples = *v;
                }
            }
            Command::Steer {
                segments,
                budget,
                eps_target,
                restarts,
            } => {
                if let Some(v) = segments {
                    c.steering.segments = *v;
                }
                if let Some(v) = budget {
                    c.steering.budget = *v;
                }
                if let Some(v) = eps_target {
                    c.steering.eps_target = *v;
                }
                if let Some(v) = restarts {
                    c.steering.restarts = *v;
                }
            }
            Command::Support {
                eps,
                paths,
                radius,
                points,
                sigma,
                steer,
                ..
            } => {
                if let Some(v) = eps {
                    c.support.eps = *v;
                }
                if let Some(v) = paths {
                    c.support.paths = *v;
                }
                if let Some(v) = radius {
                    c.support.radius = *v;
                }
                if let Some(v) = points {
                    c.support.points = *v;
                }
                if let Some(v) = sigma {
                    c.support.sigma = *v;
                }
                c.support.steer |= *steer;
            }
            Command::PdeCompare { nx, richardson, .. } => {
                if let Some(v) = nx {
                    c.pde.nx = *v;
                }
                c.pde.richardson |= *richardson;
            }
            Command::Tail {
                horizon,
                samples,
                nx,
            } => {
                if let Some(v) = horizon {
                    c.tail.horizon = *v;
                }
                if let Some(v) = samples {
                    c.tail.samples = *v;
                }
                if let Some(v) = nx {
                    c.pde.nx = *v;
                }
            }
            Command::Simulate { .. } => {}
        }
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match cli.effective_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let out = commands::Output::new(cli.common.out.clone(), &cli.command_name());
    match commands::run(&cli.command, &config, &out) {
        Ok(commands::Status::Done) => ExitCode::SUCCESS,
        Ok(commands::Status::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

impl Cli {
    fn command_name(&self) -> String {
        match self.command {
            Command::Simulate { .. } => "simulate",
            Command::Rank { .. } => "rank",
            Command::Steer { .. } => "steer",
            Command::Support { .. } => "support",
            Command::PdeCompare { .. } => "pde-compare",
            Command::Tail { .. } => "tail",
        }
        .to_string()
    }
}
