//! Training harnesses binding data, network, losses, and evaluation.

use std::path::Path;

use svmax_core::data::{hypersphere_classes, load_idx_pair, sample_batch, Dataset, Rng};
use svmax_core::error::Error as CoreError;
use svmax_core::linalg::Matrix;
use svmax_core::losses::{self, LabeledBatch, LossKind, LossValue};
use svmax_core::metrics::{self, EvalReport};
use svmax_core::net::{Network, SgdState};

use crate::config::{CircleEmbedConfig, SvmaxMode, TrainMetricConfig};
use crate::CliError;

pub struct MetricRunResult {
    pub reports: Vec<EvalReport>,
    pub trace_csv: String,
    pub report_csv: String,
    pub net: Network,
}

fn base_loss(cfg: &TrainMetricConfig, batch: &LabeledBatch) -> Result<LossValue, CoreError> {
    match cfg.loss {
        LossKind::Contrastive => losses::contrastive_loss(batch, cfg.margin),
        LossKind::Triplet => losses::triplet_loss(batch, cfg.margin, cfg.mining),
        LossKind::Npair => losses::npair_loss(batch, true),
        LossKind::Angular => losses::angular_loss(batch, cfg.alpha_deg),
    }
}

fn apply_svmax(
    mode: SvmaxMode,
    lambda: f64,
    base: &LossValue,
    embeddings: &Matrix,
) -> Result<LossValue, CoreError> {
    match mode {
        SvmaxMode::Off => Ok(base.clone()),
        SvmaxMode::Unbounded => losses::svmax_unbounded(base, embeddings, lambda),
        SvmaxMode::Bounded => losses::svmax_bounded(base, embeddings, lambda),
    }
}

fn evaluate(
    iteration: usize,
    loss: f64,
    net: &Network,
    eval: &Dataset,
    rng: &mut Rng,
) -> Result<EvalReport, CoreError> {
    let emb = net.infer(&eval.samples)?;
    let (s_mu, sv_bounds) = metrics::spread_report(&emb)?;
    let recall_at = metrics::recall_at_k(&emb, &eval.labels, &[1, 4, 8])?;
    let k = eval.class_count.min(eval.len());
    let assignment = metrics::kmeans(&emb, k, 10, 300, 1e-6, rng)?;
    let nmi = metrics::nmi(&assignment, &eval.labels)?;
    Ok(EvalReport { iteration, loss, s_mu, sv_bounds, recall_at, nmi })
}

/// Trains the embedding MLP on hypersphere classes under the configured
/// ranking loss and regularizer; evaluates on the held-out split every
/// `eval_every` iterations and at the end.
pub fn run_metric_training(cfg: &TrainMetricConfig) -> Result<MetricRunResult, CliError> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let ds = hypersphere_classes(cfg.classes, cfg.input_dim, cfg.spread, cfg.per_class, &mut rng);
    let (train, eval) = ds.split(cfg.train_fraction);
    let mut net = Network::embedder_mlp(cfg.input_dim, cfg.hidden, cfg.d, &mut rng);
    let mut sgd = SgdState::new(&net, cfg.momentum, cfg.lr, cfg.end_lr, cfg.iters)
        .map_err(CliError::Core)?;

    let mut reports = Vec::new();
    for iter in 0..cfg.iters {
        let inputs = sample_batch(&train, cfg.p, cfg.l, &mut rng)?;
        let out = net.forward(inputs.embeddings())?;
        let out_batch = inputs.with_embeddings(out.clone())?;
        let base = base_loss(cfg, &out_batch)?;
        let total = apply_svmax(cfg.svmax, cfg.lambda, &base, &out)?;
        let bp = net.backward(&total.embedding_grad)?;
        sgd.step(&mut net, &bp.params, iter);

        if (iter + 1) % cfg.eval_every == 0 || iter + 1 == cfg.iters {
            reports.push(evaluate(iter + 1, total.value, &net, &eval, &mut rng)?);
        }
    }

    let echo = cfg.echo();
    let mut trace_csv = echo.clone();
    trace_csv.push_str(EvalReport::CSV_HEADER);
    trace_csv.push('\n');
    for r in &reports {
        trace_csv.push_str(&r.csv_row());
        trace_csv.push('\n');
    }
    let mut report_csv = echo;
    report_csv.push_str(EvalReport::CSV_HEADER);
    report_csv.push('\n');
    if let Some(last) = reports.last() {
        report_csv.push_str(&last.csv_row());
        report_csv.push('\n');
    }
    Ok(MetricRunResult { reports, trace_csv, report_csv, net })
}

#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    pub s_mu: f64,
    pub lower: f64,
    pub upper: f64,
}

pub struct CircleRunResult {
    pub epochs: Vec<EpochRow>,
    /// Scatter CSVs (`label,x0,x1`) of the fixed test subset, keyed by epoch.
    pub snapshots: Vec<(usize, String)>,
    pub trace_csv: String,
    pub net: Network,
}

const MNIST_FILES: [(&str, &str); 2] = [
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
];

/// Loads the MNIST train/test pair from `dir`, or explains how to provide it.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset), CoreError> {
    for (images, labels) in MNIST_FILES {
        for name in [images, labels] {
            if !dir.join(name).exists() {
                return Err(CoreError::MissingData(format!(
                    "{} not found under {}; download the four MNIST IDX files \
                     (train-images-idx3-ubyte, train-labels-idx1-ubyte, \
                     t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte), gunzip them, \
                     and point SVMAX_DATA_DIR (or --data-dir) at the directory",
                    name,
                    dir.display()
                )));
            }
        }
    }
    let train = load_idx_pair(&dir.join(MNIST_FILES[0].0), &dir.join(MNIST_FILES[0].1))?;
    let test = load_idx_pair(&dir.join(MNIST_FILES[1].0), &dir.join(MNIST_FILES[1].1))?;
    Ok((train, test))
}

fn scatter_csv(embeddings: &Matrix, labels: &[usize]) -> String {
    let mut out = String::from("label,x0,x1\n");
    for i in 0..embeddings.rows() {
        let r = embeddings.row(i);
        out.push_str(&format!("{},{},{}\n", labels[i], r[0], r[1]));
    }
    out
}

/// Trains the 2D unit-circle embedder with contrastive loss and the bounded
/// regularizer (`lambda = 0` is the vanilla baseline). Snapshots the fixed
/// test subset at the configured epochs.
pub fn run_circle_embedding(
    cfg: &CircleEmbedConfig,
    data: (Dataset, Dataset),
) -> Result<CircleRunResult, CliError> {
    cfg.validate()?;
    let (train, test) = data;
    if test.is_empty() || train.is_empty() {
        return Err(CliError::Config("empty split for circle embedding".into()));
    }
    let subset_len = cfg.test_subset.min(test.len());
    let subset = test.subset(&(0..subset_len).collect::<Vec<_>>());

    let mut rng = Rng::new(cfg.seed);
    let input_dim = train.samples.cols();
    let mut net = Network::embedder_mlp(input_dim, cfg.hidden, 2, &mut rng);
    let b = cfg.batch_size();
    let iters_per_epoch = (train.len() / b).max(1);
    let total_iters = cfg.epochs * iters_per_epoch;
    let mut sgd = SgdState::new(&net, cfg.momentum, cfg.lr, cfg.end_lr, total_iters)
        .map_err(CliError::Core)?;

    let mode = if cfg.lambda > 0.0 { SvmaxMode::Bounded } else { SvmaxMode::Off };
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::new();
    let mut last_loss = f64::NAN;
    for epoch in 1..=cfg.epochs {
        for step in 0..iters_per_epoch {
            let iter = (epoch - 1) * iters_per_epoch + step;
            let inputs = sample_batch(&train, cfg.p, cfg.l, &mut rng)?;
            let out = net.forward(inputs.embeddings())?;
            let out_batch = inputs.with_embeddings(out.clone())?;
            let base = losses::contrastive_loss(&out_batch, cfg.margin)?;
            let total = apply_svmax(mode, cfg.lambda, &base, &out)?;
            last_loss = total.value;
            let bp = net.backward(&total.embedding_grad)?;
            sgd.step(&mut net, &bp.params, iter);
        }
        let emb = net.infer(&subset.samples)?;
        let (s_mu, bounds) = metrics::spread_report(&emb)?;
        epochs.push(EpochRow {
            epoch,
            loss: last_loss,
            s_mu,
            lower: bounds.lower,
            upper: bounds.upper,
        });
        if cfg.snapshot_epochs.contains(&epoch) {
            snapshots.push((epoch, scatter_csv(&emb, &subset.labels)));
        }
    }

    let mut trace_csv = cfg.echo();
    trace_csv.push_str("epoch,loss,s_mu,L,U\n");
    for row in &epochs {
        trace_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.loss, row.s_mu, row.lower, row.upper
        ));
    }
    Ok(CircleRunResult { epochs, snapshots, trace_csv, net })
}

/// Builds the synthetic train/test pair used when MNIST is unavailable.
pub fn synthetic_circle_data(cfg: &CircleEmbedConfig) -> (Dataset, Dataset) {
    // Generated from a seed stream disjoint from the training stream.
    let mut rng = Rng::new(cfg.seed ^ 0x5eed_da7a);
    let ds = hypersphere_classes(cfg.classes, cfg.input_dim, cfg.spread, cfg.per_class, &mut rng);
    ds.split(0.75)
}
