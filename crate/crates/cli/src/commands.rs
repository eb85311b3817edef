//! Subcommand entry points. Each returns its primary output so tests can
//! exercise it in-process; when an output directory is given the same bytes
//! are written to disk.

use std::path::{Path, PathBuf};

use svmax_core::gan::{self, GanConfig, GanRun};
use svmax_core::linalg;
use svmax_core::selfcheck;

use crate::config::{gan_echo, CircleEmbedConfig, TrainMetricConfig};
use crate::harness::{self, CircleRunResult, MetricRunResult};
use crate::CliError;

/// `bounds --b B --d D`: prints the mean-singular-value bounds to six
/// decimals.
pub fn cmd_bounds(b: usize, d: usize) -> Result<String, CliError> {
    let bounds = linalg::sv_bounds(b, d)?;
    Ok(format!("L={:.6} U={:.6}", bounds.lower, bounds.upper))
}

/// `svd-check`: runs the spectrum property suite; the flag says whether every
/// property passed.
pub fn cmd_svd_check(seed: u64, trials: usize) -> Result<(String, bool), CliError> {
    if trials == 0 {
        return Err(CliError::Config("trials must be at least 1".into()));
    }
    let reports = selfcheck::run_all(seed, trials);
    let mut ok = true;
    let mut out = String::new();
    for r in &reports {
        let status = if r.ok() { "ok" } else { "FAIL" };
        out.push_str(&format!(
            "{:<26} {:>5}/{:<5} {status} (worst err {:.3e})\n",
            r.name, r.passed, r.total, r.worst
        ));
        ok &= r.ok();
    }
    out.push_str(if ok { "all properties passed\n" } else { "PROPERTY FAILURE\n" });
    Ok((out, ok))
}

/// `train-metric`: full metric-learning run; writes `trace.csv`,
/// `report.csv`, and `checkpoint.svmx` under `out_dir` when given.
pub fn cmd_train_metric(
    cfg: &TrainMetricConfig,
    out_dir: Option<&Path>,
) -> Result<MetricRunResult, CliError> {
    let result = harness::run_metric_training(cfg)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("trace.csv"), &result.trace_csv)?;
        std::fs::write(dir.join("report.csv"), &result.report_csv)?;
        result.net.save_checkpoint(&dir.join("checkpoint.svmx"))?;
    }
    Ok(result)
}

/// `mnist-embed`: unit-circle embedding of MNIST (or the synthetic stand-in
/// with `--synthetic`). Writes `trace.csv` plus per-epoch scatter files.
pub fn cmd_mnist_embed(
    cfg: &CircleEmbedConfig,
    data_dir: Option<PathBuf>,
    out_dir: Option<&Path>,
) -> Result<CircleRunResult, CliError> {
    let data = if cfg.synthetic {
        harness::synthetic_circle_data(cfg)
    } else {
        let dir = data_dir
            .or_else(|| std::env::var_os("SVMAX_DATA_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"));
        harness::load_mnist(&dir)?
    };
    let result = harness::run_circle_embedding(cfg, data)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("trace.csv"), &result.trace_csv)?;
        for (epoch, csv) in &result.snapshots {
            std::fs::write(dir.join(format!("scatter_epoch_{epoch:03}.csv")), csv)?;
        }
        result.net.save_checkpoint(&dir.join("checkpoint.svmx"))?;
    }
    Ok(result)
}

pub struct GanRunOutput {
    pub run: GanRun,
    pub trace_csv: String,
    pub coverage_csv: String,
}

/// `train-gan`: ring-GAN run; writes `trace.csv`, `coverage.csv`, and the
/// snapshot point clouds / density renders under `out_dir` when given.
pub fn cmd_train_gan(cfg: &GanConfig, out_dir: Option<&Path>) -> Result<GanRunOutput, CliError> {
    cfg.validate()?;
    let mut rng = svmax_core::data::Rng::new(cfg.seed ^ 0xda7a_5eed);
    let data = svmax_core::data::gaussian_ring(cfg.modes, cfg.radius, cfg.sigma, 8192, &mut rng);
    let run = gan::train_gan(cfg, &data)?;

    let echo = gan_echo(cfg);
    let mut trace_csv = echo.clone();
    trace_csv.push_str("step,d_loss,g_loss,s_mu\n");
    for row in &run.trace {
        trace_csv.push_str(&format!("{},{},{},{}\n", row.step, row.d_loss, row.g_loss, row.s_mu));
    }
    if let gan::RunOutcome::DivergedAt(step) = run.outcome {
        trace_csv.push_str(&format!("# diverged_at={step}\n"));
    }

    let mut coverage_csv = echo;
    coverage_csv.push_str("step,covered,hq_fraction\n");
    for snap in &run.snapshots {
        coverage_csv.push_str(&format!("{},{},{}\n", snap.step, snap.covered, snap.hq_fraction));
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("trace.csv"), &trace_csv)?;
        std::fs::write(dir.join("coverage.csv"), &coverage_csv)?;
        gan::write_snapshots(&run, dir)?;
    }
    Ok(GanRunOutput { run, trace_csv, coverage_csv })
}
