use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use svmax_core::gan::GanConfig;
use svmax_core::losses::Mining;
use svmax_lab::commands;
use svmax_lab::config::{
    default_lambda, parse_loss_kind, CircleEmbedConfig, SvmaxMode, TrainMetricConfig,
};
use svmax_lab::CliError;

/// Embedding-regularization laboratory: bounds calculator, SVD self-check,
/// metric-learning and unit-circle training, and the ring-GAN driver.
#[derive(Parser)]
#[command(name = "svmax-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the mean-singular-value bounds [L, U] for a b x d unit-row matrix.
    Bounds {
        #[arg(long)]
        b: usize,
        #[arg(long)]
        d: usize,
    },
    /// Run the SVD property suite (factor invariants, oracle match, gradient
    /// checks, bound containment, attainment, scale equivariance).
    SvdCheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Trial count per property.
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Train a metric-learning embedder on synthetic hypersphere classes.
    TrainMetric(TrainMetricArgs),
    /// Embed MNIST (or the synthetic stand-in) onto the 2D unit circle.
    MnistEmbed(MnistEmbedArgs),
    /// Train the 2D ring GAN with the spectrum term on the fake batch.
    TrainGan(TrainGanArgs),
}

#[derive(Args)]
struct TrainMetricArgs {
    /// Ranking loss: contrastive | triplet | npair | angular.
    #[arg(long, default_value = "contrastive")]
    loss: String,
    /// Regularizer form: off | unbounded | bounded.
    #[arg(long, default_value = "bounded")]
    svmax: String,
    /// Regularizer weight; defaults to the per-loss table (1 / 0.1 / 1 / 2).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long, default_value_t = 45.0)]
    alpha: f64,
    /// Triplet mining: hard | all.
    #[arg(long, default_value = "hard")]
    mining: String,
    #[arg(long, default_value_t = 64)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    input_dim: usize,
    #[arg(long, default_value_t = 40)]
    per_class: usize,
    #[arg(long, default_value_t = 0.1)]
    spread: f64,
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,
    /// Embedding dimension.
    #[arg(long, default_value_t = 32)]
    d: usize,
    /// Classes per batch (batch size is p * l).
    #[arg(long, default_value_t = 16)]
    p: usize,
    /// Samples per class in a batch.
    #[arg(long, default_value_t = 4)]
    l: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 1e-7)]
    end_lr: f64,
    #[arg(long, default_value_t = 100)]
    eval_every: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory for trace.csv, report.csv, checkpoint.svmx.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MnistEmbedArgs {
    /// Train on hypersphere classes instead of MNIST IDX files.
    #[arg(long, default_value_t = false)]
    synthetic: bool,
    /// Directory holding the four MNIST IDX files (default: $SVMAX_DATA_DIR,
    /// then ./data).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    p: usize,
    #[arg(long, default_value_t = 16)]
    l: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    /// Bounded regularizer weight; 0 trains the vanilla baseline.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 2000)]
    test_subset: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainGanArgs {
    #[arg(long, default_value_t = 0.025)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    /// Generator hidden activation: tanh | relu.
    #[arg(long, default_value = "tanh")]
    gen_activation: String,
    /// Discriminator hidden activation: tanh | relu.
    #[arg(long, default_value = "relu")]
    disc_activation: String,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long, default_value_t = 25_000)]
    steps: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 16)]
    latent: usize,
    /// Generator hidden widths, comma separated.
    #[arg(long, default_value = "128,128", value_delimiter = ',')]
    gen_layers: Vec<usize>,
    /// Discriminator hidden widths, comma separated.
    #[arg(long, default_value = "128,128", value_delimiter = ',')]
    disc_layers: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    modes: usize,
    #[arg(long, default_value_t = 2.0)]
    radius: f64,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Bounds { b, d } => {
            println!("{}", commands::cmd_bounds(b, d)?);
            Ok(())
        }
        Command::SvdCheck { seed, trials } => {
            let (report, ok) = commands::cmd_svd_check(seed, trials)?;
            print!("{report}");
            if ok {
                Ok(())
            } else {
                Err(CliError::PropertyFailure("svd-check found failing properties".into()))
            }
        }
        Command::TrainMetric(args) => {
            let loss = parse_loss_kind(&args.loss)?;
            let cfg = TrainMetricConfig {
                loss,
                svmax: SvmaxMode::parse(&args.svmax)?,
                lambda: args.lambda.unwrap_or_else(|| default_lambda(loss)),
                margin: args.margin,
                alpha_deg: args.alpha,
                mining: match args.mining.as_str() {
                    "hard" => Mining::Hard,
                    "all" => Mining::All,
                    other => return Err(CliError::Config(format!("unknown mining '{other}'"))),
                },
                classes: args.classes,
                input_dim: args.input_dim,
                per_class: args.per_class,
                spread: args.spread,
                train_fraction: args.train_fraction,
                d: args.d,
                p: args.p,
                l: args.l,
                hidden: args.hidden,
                lr: args.lr,
                iters: args.iters,
                momentum: args.momentum,
                end_lr: args.end_lr,
                eval_every: args.eval_every,
                seed: args.seed,
            };
            let result = commands::cmd_train_metric(&cfg, Some(&args.out))?;
            if let Some(last) = result.reports.last() {
                println!("final {}", last.csv_row());
            }
            println!("wrote {}", args.out.display());
            Ok(())
        }
        Command::MnistEmbed(args) => {
            let cfg = CircleEmbedConfig {
                synthetic: args.synthetic,
                p: args.p,
                l: args.l,
                hidden: args.hidden,
                margin: args.margin,
                lambda: args.lambda,
                lr: args.lr,
                momentum: args.momentum,
                epochs: args.epochs,
                test_subset: args.test_subset,
                seed: args.seed,
                ..CircleEmbedConfig::default()
            };
            let result = commands::cmd_mnist_embed(&cfg, args.data_dir, Some(&args.out))?;
            if let Some(last) = result.epochs.last() {
                println!(
                    "epoch {} s_mu {:.4} of U {:.4}",
                    last.epoch, last.s_mu, last.upper
                );
            }
            println!("wrote {}", args.out.display());
            Ok(())
        }
        Command::TrainGan(args) => {
            let cfg = GanConfig {
                latent_dim: args.latent,
                gen_layers: args.gen_layers.clone(),
                disc_layers: args.disc_layers.clone(),
                lr: args.lr,
                momentum: args.momentum,
                gen_activation: svmax_lab::config::parse_activation(&args.gen_activation)?,
                disc_activation: svmax_lab::config::parse_activation(&args.disc_activation)?,
                steps: args.steps,
                batch: args.batch,
                lambda: args.lambda,
                seed: args.seed,
                modes: args.modes,
                radius: args.radius,
                sigma: args.sigma,
                ..GanConfig::ring_defaults(args.seed, args.lambda)
            };
            let out = commands::cmd_train_gan(&cfg, Some(&args.out))?;
            for snap in &out.run.snapshots {
                println!(
                    "step {:>6}: covered {}/{} modes, hq fraction {:.3}",
                    snap.step, snap.covered, cfg.modes, snap.hq_fraction
                );
            }
            if let svmax_core::gan::RunOutcome::DivergedAt(step) = out.run.outcome {
                println!("diverged at step {step}");
            }
            println!("wrote {}", args.out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
