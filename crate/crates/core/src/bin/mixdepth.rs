use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixdepth::loss::VarianceMode;
use mixdepth::run::{
    cmd_check_prop, cmd_eval, cmd_fit, cmd_synth, CommonArgs, EvalArgs, FitArgs, RunError,
};

#[derive(Parser)]
#[command(
    name = "mixdepth",
    version,
    about = "Mixture-of-Gaussians disparity fitting on synthetic two-view scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; missing fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// RNG seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bit-identical reruns.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene spec (default: the box scene) into images and depth maps.
    Synth(Common),
    /// Fit a per-pixel mixture table to a rendered scene.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Scene directory written by `synth`.
        #[arg(long)]
        scene: PathBuf,
        /// Single-Gaussian ablation.
        #[arg(long)]
        baseline: bool,
        #[arg(long, value_parser = ["per-pixel", "one-constant", "two-constants"])]
        variance_mode: Option<String>,
    },
    /// Score a predicted depth map against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Camera rig JSON, or a scene.json holding one.
        #[arg(long)]
        rig: PathBuf,
    },
    /// Compare analytic uncertainty propagation with Monte Carlo.
    CheckProp(Common),
}

impl Common {
    /// Size the worker pool and return the arguments the library takes.
    fn setup(self) -> Result<CommonArgs, RunError> {
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| RunError::Input(mixdepth::Error::InvalidInput(e.to_string())))?;
        }
        Ok(CommonArgs {
            config: self.config,
            out: self.out,
            seed: self.seed,
        })
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Synth(c) => cmd_synth(&c.setup()?).map(|_| ()),
        Command::Fit {
            common,
            scene,
            baseline,
            variance_mode,
        } => {
            let variance_mode = variance_mode
                .map(|m| m.parse::<VarianceMode>())
                .transpose()
                .map_err(|e| RunError::Input(mixdepth::Error::InvalidInput(e)))?;
            cmd_fit(&FitArgs {
                common: common.setup()?,
                scene,
                baseline,
                variance_mode,
            })
            .map(|_| ())
        }
        Command::Eval {
            common,
            pred,
            gt,
            rig,
        } => cmd_eval(&EvalArgs {
            common: common.setup()?,
            pred,
            gt,
            rig,
        })
        .map(|_| ()),
        Command::CheckProp(c) => {
            let report = cmd_check_prop(&c.setup()?)?;
            for s in &report.sigmas {
                eprintln!(
                    "sigma {}: color max {:.4}, error max {:.4}",
                    s.sigma, s.color.max_rel, s.error.max_rel
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mixdepth: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
