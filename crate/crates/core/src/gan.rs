//! Tiny GAN on the 2D Gaussian ring.
//!
//! The generator loss is the non-saturating `-log D(G(z))` with an optional
//! unbounded mean-singular-value term on the raw fake batch. Fakes are never
//! normalized: the ring radius keeps them away from the unit circle on
//! purpose, so the bounded regularizer does not apply here.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{ring_centers, Dataset, Rng};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::metrics;
use crate::net::{Layer, Network, SgdState, Shape};

/// Hidden activation of the generator and discriminator MLPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenActivation {
    Tanh,
    Relu,
}

impl HiddenActivation {
    fn layer(self) -> Layer {
        match self {
            HiddenActivation::Tanh => Layer::Tanh,
            HiddenActivation::Relu => Layer::ReLU,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub gen_layers: Vec<usize>,
    pub disc_layers: Vec<usize>,
    pub lr: f64,
    pub momentum: f64,
    pub gen_activation: HiddenActivation,
    pub disc_activation: HiddenActivation,
    pub steps: usize,
    pub batch: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Steps (1-based) at which a point-cloud snapshot is taken.
    pub snapshot_steps: Vec<usize>,
    pub snapshot_points: usize,
    // Ring geometry, shared with the data generator and the coverage score.
    pub modes: usize,
    pub radius: f64,
    pub sigma: f64,
    pub min_hits: usize,
}

impl GanConfig {
    /// The large-learning-rate collapse setting: lr = 0.025 for both
    /// networks, lambda = 0.01 on the fake batch, 8 modes at radius 2.
    pub fn ring_defaults(seed: u64, lambda: f64) -> Self {
        Self {
            latent_dim: 16,
            gen_layers: vec![128, 128],
            disc_layers: vec![128, 128],
            lr: 0.025,
            momentum: 0.0,
            gen_activation: HiddenActivation::Tanh,
            disc_activation: HiddenActivation::Relu,
            steps: 25_000,
            batch: 64,
            lambda,
            seed,
            snapshot_steps: vec![1, 5_000, 10_000, 15_000, 20_000, 25_000],
            snapshot_points: 5_000,
            modes: 8,
            radius: 2.0,
            sigma: 0.05,
            min_hits: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::InvalidInput(
                "GAN batch must be at least 2 (full-rank 2D fake batch)".into(),
            ));
        }
        if self.lr <= 0.0 || self.lambda < 0.0 {
            return Err(Error::InvalidInput("need lr > 0 and lambda >= 0".into()));
        }
        if self.steps == 0 || self.snapshot_points == 0 {
            return Err(Error::InvalidInput("steps and snapshot_points must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    DivergedAt(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanTraceRow {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    /// Mean singular value of the fake batch used for the generator update.
    pub s_mu: f64,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub points: Matrix,
    pub covered: usize,
    pub hq_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct GanRun {
    pub trace: Vec<GanTraceRow>,
    pub snapshots: Vec<Snapshot>,
    pub outcome: RunOutcome,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `log(1 + exp(-z))`, the positive-label BCE on a logit, evaluated stably.
fn softplus_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

// Hidden-activation MLP with a linear output layer.
fn mlp(
    input: usize,
    widths: &[usize],
    output: usize,
    activation: HiddenActivation,
    rng: &mut Rng,
) -> crate::error::Result<Network> {
    let mut layers = Vec::with_capacity(2 * widths.len() + 1);
    let mut fan_in = input;
    for &w in widths {
        layers.push(Layer::linear(fan_in, w, rng));
        layers.push(activation.layer());
        fan_in = w;
    }
    layers.push(Layer::linear(fan_in, output, rng));
    Network::new(Shape::Dense(input), layers)
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.next_gaussian();
    }
    m
}

/// Alternating GAN training on 2D data. The discriminator minimizes sigmoid
/// BCE on real-vs-fake; the generator minimizes `-log D(G(z)) - lambda *
/// s_mu(fake batch)`. Snapshots of generated points are collected at the
/// configured steps together with their mode coverage.
pub fn train_gan(cfg: &GanConfig, data: &Dataset) -> Result<GanRun> {
    cfg.validate()?;
    if data.samples.cols() != 2 {
        return Err(Error::ShapeError("GAN training data must be 2D".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut gen = mlp(cfg.latent_dim, &cfg.gen_layers, 2, cfg.gen_activation, &mut rng)?;
    let mut disc = mlp(2, &cfg.disc_layers, 1, cfg.disc_activation, &mut rng)?;
    let mut sgd_g = SgdState::constant(&gen, cfg.momentum, cfg.lr)?;
    let mut sgd_d = SgdState::constant(&disc, cfg.momentum, cfg.lr)?;

    let centers = ring_centers(cfg.modes, cfg.radius);
    let b = cfg.batch;
    let n_real = data.len();

    let mut trace = Vec::with_capacity(cfg.steps);
    let mut snapshots = Vec::new();
    let mut outcome = RunOutcome::Completed;

    for step in 1..=cfg.steps {
        // Discriminator update on a real and a fake half.
        let mut real = Matrix::zeros(b, 2);
        for i in 0..b {
            let src = rng.gen_range(n_real);
            real.row_mut(i).copy_from_slice(data.samples.row(src));
        }
        let fake = gen.forward(&gaussian_matrix(b, cfg.latent_dim, &mut rng))?;
        debug_assert_eq!((fake.rows(), fake.cols()), (b, 2));

        let mut d_loss = 0.0;
        let norm = 1.0 / (2 * b) as f64;

        let real_logits = disc.forward(&real)?;
        let mut grad_real = Matrix::zeros(b, 1);
        for i in 0..b {
            let z = real_logits.get(i, 0);
            d_loss += softplus_neg(z) * norm;
            grad_real.set(i, 0, (sigmoid(z) - 1.0) * norm);
        }
        let bp_real = disc.backward(&grad_real)?;

        let fake_logits = disc.forward(&fake)?;
        let mut grad_fake = Matrix::zeros(b, 1);
        for i in 0..b {
            let z = fake_logits.get(i, 0);
            d_loss += softplus_neg(-z) * norm;
            grad_fake.set(i, 0, sigmoid(z) * norm);
        }
        let bp_fake = disc.backward(&grad_fake)?;

        let d_grads: Vec<_> = bp_real
            .params
            .iter()
            .zip(&bp_fake.params)
            .map(|(a, b)| match (a, b) {
                (Some(x), Some(y)) => Some(crate::net::LayerGrad {
                    weight: x.weight.add(&y.weight).expect("same shape"),
                    bias: x.bias.iter().zip(&y.bias).map(|(p, q)| p + q).collect(),
                }),
                _ => None,
            })
            .collect();
        sgd_d.step(&mut disc, &d_grads, step);

        // Generator update through the frozen discriminator.
        let z_batch = gaussian_matrix(b, cfg.latent_dim, &mut rng);
        let fake2 = gen.forward(&z_batch)?;
        let logits = disc.forward(&fake2)?;
        let mut adv_loss = 0.0;
        let mut grad_logits = Matrix::zeros(b, 1);
        let gnorm = 1.0 / b as f64;
        for i in 0..b {
            let z = logits.get(i, 0);
            adv_loss += softplus_neg(z) * gnorm;
            grad_logits.set(i, 0, (sigmoid(z) - 1.0) * gnorm);
        }
        let mut fake_grad = disc.backward(&grad_logits)?.input_grad;

        let s_mu;
        let g_loss;
        if cfg.lambda > 0.0 {
            let (value, msv_grad) = linalg::msv_value_and_grad(&fake2)
                .unwrap_or_else(|_| (f64::NAN, linalg::MsvGrad { grad: Matrix::zeros(b, 2), degenerate: true }));
            s_mu = value;
            g_loss = adv_loss - cfg.lambda * s_mu;
            if s_mu.is_finite() {
                fake_grad = fake_grad.sub(&msv_grad.grad.scale(cfg.lambda))?;
            }
        } else {
            s_mu = linalg::mean_singular_value(&fake2).unwrap_or(f64::NAN);
            g_loss = adv_loss;
        }

        let bp_gen = gen.backward(&fake_grad)?;
        sgd_g.step(&mut gen, &bp_gen.params, step);

        if !d_loss.is_finite() || !g_loss.is_finite() || !s_mu.is_finite() {
            outcome = RunOutcome::DivergedAt(step);
            break;
        }
        trace.push(GanTraceRow { step, d_loss, g_loss, s_mu });

        if cfg.snapshot_steps.contains(&step) {
            let z = gaussian_matrix(cfg.snapshot_points, cfg.latent_dim, &mut rng);
            let points = gen.infer(&z)?;
            let (covered, hq_fraction) =
                metrics::mode_coverage(&points, &centers, cfg.sigma, cfg.min_hits);
            snapshots.push(Snapshot { step, points, covered, hq_fraction });
        }
    }

    Ok(GanRun { trace, snapshots, outcome })
}

/// Point-cloud CSV: header `step,x,y`, one row per generated point.
pub fn snapshot_csv(snap: &Snapshot) -> String {
    let mut out = String::from("step,x,y\n");
    for i in 0..snap.points.rows() {
        let r = snap.points.row(i);
        writeln!(out, "{},{},{}", snap.step, r[0], r[1]).expect("string write");
    }
    out
}

/// 128x128 binary PGM density render, linear binning over [-3, 3]^2.
pub fn snapshot_pgm(snap: &Snapshot) -> Vec<u8> {
    const SIDE: usize = 128;
    let mut bins = vec![0u32; SIDE * SIDE];
    for i in 0..snap.points.rows() {
        let r = snap.points.row(i);
        let to_bin = |v: f64| ((v + 3.0) / 6.0 * SIDE as f64).floor();
        let (bx, by) = (to_bin(r[0]), to_bin(r[1]));
        if (0.0..SIDE as f64).contains(&bx) && (0.0..SIDE as f64).contains(&by) {
            // Image rows run top-down; flip y so positive values render up.
            bins[(SIDE - 1 - by as usize) * SIDE + bx as usize] += 1;
        }
    }
    let max = bins.iter().copied().max().unwrap_or(0).max(1);
    let mut out = format!("P5\n{SIDE} {SIDE}\n255\n").into_bytes();
    out.extend(bins.iter().map(|&c| ((c as f64 / max as f64) * 255.0).round() as u8));
    out
}

/// Writes every snapshot as CSV and PGM under `dir`.
pub fn write_snapshots(run: &GanRun, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for snap in &run.snapshots {
        std::fs::write(dir.join(format!("snapshot_{:06}.csv", snap.step)), snapshot_csv(snap))?;
        std::fs::write(dir.join(format!("snapshot_{:06}.pgm", snap.step)), snapshot_pgm(snap))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian_ring;

    fn tiny_cfg(seed: u64, lambda: f64, steps: usize) -> GanConfig {
        GanConfig {
            steps,
            snapshot_steps: vec![1, steps],
            snapshot_points: 256,
            ..GanConfig::ring_defaults(seed, lambda)
        }
    }

    fn ring_data(seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        gaussian_ring(8, 2.0, 0.05, 2048, &mut rng)
    }

    #[test]
    fn smoke_run_completes() {
        let mut cfg = tiny_cfg(1, 0.0, 500);
        cfg.lr = 1e-4;
        let run = train_gan(&cfg, &ring_data(9)).unwrap();
        assert_eq!(run.outcome, RunOutcome::Completed);
        assert_eq!(run.trace.len(), 500);
        assert_eq!(run.snapshots.len(), 2);
        assert_eq!(run.snapshots[0].points.rows(), 256);
        assert_eq!(run.snapshots[0].points.cols(), 2);
    }

    #[test]
    fn deterministic_trace() {
        let cfg = tiny_cfg(3, 0.01, 200);
        let data = ring_data(5);
        let a = train_gan(&cfg, &data).unwrap();
        let b = train_gan(&cfg, &data).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.outcome, b.outcome);
    }

    #[test]
    fn fake_spectrum_positive_once_training_moves() {
        let cfg = tiny_cfg(7, 0.01, 300);
        let run = train_gan(&cfg, &ring_data(2)).unwrap();
        for row in run.trace.iter().filter(|r| r.step > 100) {
            assert!(row.s_mu > 1e-8, "step {} s_mu {}", row.step, row.s_mu);
        }
    }

    #[test]
    fn rejects_tiny_batch() {
        let mut cfg = tiny_cfg(1, 0.0, 10);
        cfg.batch = 1;
        assert!(train_gan(&cfg, &ring_data(1)).is_err());
    }

    #[test]
    fn snapshot_formats() {
        let snap = Snapshot {
            step: 42,
            points: Matrix::from_rows(&[vec![0.0, 0.0], vec![2.5, -1.0]]).unwrap(),
            covered: 1,
            hq_fraction: 0.5,
        };
        let csv = snapshot_csv(&snap);
        assert!(csv.starts_with("step,x,y\n42,0,0\n42,2.5,-1\n"));
        let pgm = snapshot_pgm(&snap);
        assert!(pgm.starts_with(b"P5\n128 128\n255\n"));
        assert_eq!(pgm.len(), b"P5\n128 128\n255\n".len() + 128 * 128);
    }
}
