//! Resolved experiment configurations with a lossless text echo.
//!
//! Every trace file starts with `# key=value` lines holding the full
//! resolved configuration. [`parse_echo`] turns those lines back into the
//! config, and re-running from the parsed config reproduces the trace
//! byte-for-byte (floats round-trip through the shortest-representation
//! formatting).

use std::collections::BTreeMap;

use svmax_core::losses::{LossKind, Mining};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvmaxMode {
    Off,
    Unbounded,
    Bounded,
}

impl SvmaxMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SvmaxMode::Off => "off",
            SvmaxMode::Unbounded => "unbounded",
            SvmaxMode::Bounded => "bounded",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "off" => Ok(SvmaxMode::Off),
            "unbounded" => Ok(SvmaxMode::Unbounded),
            "bounded" => Ok(SvmaxMode::Bounded),
            other => Err(CliError::Config(format!("unknown svmax mode '{other}'"))),
        }
    }
}

pub fn loss_kind_str(kind: LossKind) -> &'static str {
    match kind {
        LossKind::Contrastive => "contrastive",
        LossKind::Triplet => "triplet",
        LossKind::Npair => "npair",
        LossKind::Angular => "angular",
    }
}

pub fn parse_loss_kind(s: &str) -> Result<LossKind, CliError> {
    match s {
        "contrastive" => Ok(LossKind::Contrastive),
        "triplet" => Ok(LossKind::Triplet),
        "npair" => Ok(LossKind::Npair),
        "angular" => Ok(LossKind::Angular),
        other => Err(CliError::Config(format!("unknown loss kind '{other}'"))),
    }
}

/// Ranking-loss default weight: 1 for contrastive and N-pair, 0.1 for
/// triplet, 2 for angular.
pub fn default_lambda(kind: LossKind) -> f64 {
    match kind {
        LossKind::Contrastive | LossKind::Npair => 1.0,
        LossKind::Triplet => 0.1,
        LossKind::Angular => 2.0,
    }
}

/// Metric-learning run on synthetic hypersphere classes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMetricConfig {
    pub loss: LossKind,
    pub svmax: SvmaxMode,
    pub lambda: f64,
    pub margin: f64,
    pub alpha_deg: f64,
    pub mining: Mining,
    pub classes: usize,
    pub input_dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub train_fraction: f64,
    pub d: usize,
    pub p: usize,
    pub l: usize,
    pub hidden: usize,
    pub lr: f64,
    pub iters: usize,
    pub momentum: f64,
    pub end_lr: f64,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainMetricConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Contrastive,
            svmax: SvmaxMode::Bounded,
            lambda: 1.0,
            margin: 1.0,
            alpha_deg: 45.0,
            mining: Mining::Hard,
            classes: 64,
            input_dim: 32,
            per_class: 40,
            spread: 0.1,
            train_fraction: 0.75,
            d: 32,
            p: 16,
            l: 4,
            hidden: 64,
            lr: 0.01,
            iters: 2000,
            momentum: 0.9,
            end_lr: 1e-7,
            eval_every: 100,
            seed: 1,
        }
    }
}

impl TrainMetricConfig {
    pub fn batch_size(&self) -> usize {
        self.p * self.l
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.p == 0 || self.l == 0 {
            return Err(CliError::Config("p and l must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(CliError::Config("lambda must be non-negative".into()));
        }
        match self.loss {
            LossKind::Npair | LossKind::Angular if self.l != 2 => {
                return Err(CliError::Config(format!(
                    "{} loss needs l = 2, got l = {}",
                    loss_kind_str(self.loss),
                    self.l
                )));
            }
            LossKind::Contrastive if self.l < 2 || self.l % 2 != 0 || self.p < 2 => {
                return Err(CliError::Config(
                    "contrastive pairing needs p >= 2 and even l >= 2".into(),
                ));
            }
            LossKind::Triplet if self.l < 2 => {
                return Err(CliError::Config("triplet mining needs l >= 2".into()));
            }
            _ => {}
        }
        if self.classes < self.p {
            return Err(CliError::Config(format!(
                "dataset has {} classes but batches want p = {}",
                self.classes, self.p
            )));
        }
        if self.d == 1 && self.svmax == SvmaxMode::Bounded {
            return Err(CliError::Config(
                "bounded regularizer is degenerate at d = 1".into(),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CliError::Config("train fraction must lie in (0, 1)".into()));
        }
        if self.eval_every == 0 || self.iters == 0 {
            return Err(CliError::Config("iters and eval_every must be positive".into()));
        }
        Ok(())
    }

    pub fn echo(&self) -> String {
        let mut out = String::from("# svmax-lab train-metric config v1\n");
        let mut kv = |k: &str, v: String| out.push_str(&format!("# {k}={v}\n"));
        kv("loss", loss_kind_str(self.loss).into());
        kv("svmax", self.svmax.as_str().into());
        kv("lambda", self.lambda.to_string());
        kv("margin", self.margin.to_string());
        kv("alpha_deg", self.alpha_deg.to_string());
        kv("mining", if self.mining == Mining::Hard { "hard".into() } else { "all".into() });
        kv("classes", self.classes.to_string());
        kv("input_dim", self.input_dim.to_string());
        kv("per_class", self.per_class.to_string());
        kv("spread", self.spread.to_string());
        kv("train_fraction", self.train_fraction.to_string());
        kv("d", self.d.to_string());
        kv("p", self.p.to_string());
        kv("l", self.l.to_string());
        kv("hidden", self.hidden.to_string());
        kv("lr", self.lr.to_string());
        kv("iters", self.iters.to_string());
        kv("momentum", self.momentum.to_string());
        kv("end_lr", self.end_lr.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("seed", self.seed.to_string());
        out
    }

    pub fn from_echo(text: &str) -> Result<Self, CliError> {
        let map = echo_map(text, "train-metric")?;
        Ok(Self {
            loss: parse_loss_kind(get(&map, "loss")?)?,
            svmax: SvmaxMode::parse(get(&map, "svmax")?)?,
            lambda: num(&map, "lambda")?,
            margin: num(&map, "margin")?,
            alpha_deg: num(&map, "alpha_deg")?,
            mining: match get(&map, "mining")? {
                "hard" => Mining::Hard,
                "all" => Mining::All,
                other => return Err(CliError::Config(format!("unknown mining '{other}'"))),
            },
            classes: num(&map, "classes")?,
            input_dim: num(&map, "input_dim")?,
            per_class: num(&map, "per_class")?,
            spread: num(&map, "spread")?,
            train_fraction: num(&map, "train_fraction")?,
            d: num(&map, "d")?,
            p: num(&map, "p")?,
            l: num(&map, "l")?,
            hidden: num(&map, "hidden")?,
            lr: num(&map, "lr")?,
            iters: num(&map, "iters")?,
            momentum: num(&map, "momentum")?,
            end_lr: num(&map, "end_lr")?,
            eval_every: num(&map, "eval_every")?,
            seed: num(&map, "seed")?,
        })
    }
}

/// Unit-circle (d = 2) embedding run: MNIST when IDX files are available, or
/// the synthetic hypersphere stand-in.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleEmbedConfig {
    /// Use hypersphere classes instead of MNIST IDX files.
    pub synthetic: bool,
    pub classes: usize,
    pub input_dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub p: usize,
    pub l: usize,
    pub hidden: usize,
    pub margin: f64,
    pub lambda: f64,
    pub lr: f64,
    pub momentum: f64,
    pub end_lr: f64,
    pub epochs: usize,
    pub snapshot_epochs: Vec<usize>,
    pub test_subset: usize,
    pub seed: u64,
}

impl Default for CircleEmbedConfig {
    fn default() -> Self {
        Self {
            synthetic: false,
            classes: 10,
            input_dim: 16,
            per_class: 800,
            spread: 0.1,
            p: 8,
            l: 16,
            hidden: 64,
            margin: 1.0,
            lambda: 1.0,
            lr: 0.01,
            momentum: 0.9,
            end_lr: 1e-7,
            epochs: 64,
            snapshot_epochs: vec![1, 2, 4, 8, 16, 32, 64],
            test_subset: 2000,
            seed: 1,
        }
    }
}

impl CircleEmbedConfig {
    pub fn batch_size(&self) -> usize {
        self.p * self.l
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.p < 2 || self.l < 2 || self.l % 2 != 0 {
            return Err(CliError::Config(
                "circle embedding uses contrastive pairs: p >= 2 and even l >= 2".into(),
            ));
        }
        if self.epochs == 0 || self.test_subset == 0 {
            return Err(CliError::Config("epochs and test_subset must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(CliError::Config("lambda must be non-negative".into()));
        }
        Ok(())
    }

    pub fn echo(&self) -> String {
        let mut out = String::from("# svmax-lab mnist-embed config v1\n");
        let mut kv = |k: &str, v: String| out.push_str(&format!("# {k}={v}\n"));
        kv("synthetic", self.synthetic.to_string());
        kv("classes", self.classes.to_string());
        kv("input_dim", self.input_dim.to_string());
        kv("per_class", self.per_class.to_string());
        kv("spread", self.spread.to_string());
        kv("p", self.p.to_string());
        kv("l", self.l.to_string());
        kv("hidden", self.hidden.to_string());
        kv("margin", self.margin.to_string());
        kv("lambda", self.lambda.to_string());
        kv("lr", self.lr.to_string());
        kv("momentum", self.momentum.to_string());
        kv("end_lr", self.end_lr.to_string());
        kv("epochs", self.epochs.to_string());
        kv(
            "snapshot_epochs",
            self.snapshot_epochs
                .iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        );
        kv("test_subset", self.test_subset.to_string());
        kv("seed", self.seed.to_string());
        out
    }

    pub fn from_echo(text: &str) -> Result<Self, CliError> {
        let map = echo_map(text, "mnist-embed")?;
        Ok(Self {
            synthetic: get(&map, "synthetic")? == "true",
            classes: num(&map, "classes")?,
            input_dim: num(&map, "input_dim")?,
            per_class: num(&map, "per_class")?,
            spread: num(&map, "spread")?,
            p: num(&map, "p")?,
            l: num(&map, "l")?,
            hidden: num(&map, "hidden")?,
            margin: num(&map, "margin")?,
            lambda: num(&map, "lambda")?,
            lr: num(&map, "lr")?,
            momentum: num(&map, "momentum")?,
            end_lr: num(&map, "end_lr")?,
            epochs: num(&map, "epochs")?,
            snapshot_epochs: get(&map, "snapshot_epochs")?
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| CliError::Config("bad snapshot epoch".into())))
                .collect::<Result<_, _>>()?,
            test_subset: num(&map, "test_subset")?,
            seed: num(&map, "seed")?,
        })
    }
}

/// Echo form of the GAN configuration.
pub fn gan_echo(cfg: &svmax_core::gan::GanConfig) -> String {
    let mut out = String::from("# svmax-lab train-gan config v1\n");
    let mut kv = |k: &str, v: String| out.push_str(&format!("# {k}={v}\n"));
    kv("latent_dim", cfg.latent_dim.to_string());
    kv(
        "gen_layers",
        cfg.gen_layers.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(";"),
    );
    kv(
        "disc_layers",
        cfg.disc_layers.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(";"),
    );
    kv("lr", cfg.lr.to_string());
    kv("momentum", cfg.momentum.to_string());
    let act_str = |a: &svmax_core::gan::HiddenActivation| match a {
        svmax_core::gan::HiddenActivation::Tanh => "tanh".to_string(),
        svmax_core::gan::HiddenActivation::Relu => "relu".to_string(),
    };
    kv("gen_activation", act_str(&cfg.gen_activation));
    kv("disc_activation", act_str(&cfg.disc_activation));
    kv("steps", cfg.steps.to_string());
    kv("batch", cfg.batch.to_string());
    kv("lambda", cfg.lambda.to_string());
    kv("seed", cfg.seed.to_string());
    kv(
        "snapshot_steps",
        cfg.snapshot_steps.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";"),
    );
    kv("snapshot_points", cfg.snapshot_points.to_string());
    kv("modes", cfg.modes.to_string());
    kv("radius", cfg.radius.to_string());
    kv("sigma", cfg.sigma.to_string());
    kv("min_hits", cfg.min_hits.to_string());
    out
}

pub fn gan_from_echo(text: &str) -> Result<svmax_core::gan::GanConfig, CliError> {
    let map = echo_map(text, "train-gan")?;
    Ok(svmax_core::gan::GanConfig {
        latent_dim: num(&map, "latent_dim")?,
        gen_layers: widths(&map, "gen_layers")?,
        disc_layers: widths(&map, "disc_layers")?,
        lr: num(&map, "lr")?,
        momentum: num(&map, "momentum")?,
        gen_activation: parse_activation(get(&map, "gen_activation")?)?,
        disc_activation: parse_activation(get(&map, "disc_activation")?)?,
        steps: num(&map, "steps")?,
        batch: num(&map, "batch")?,
        lambda: num(&map, "lambda")?,
        seed: num(&map, "seed")?,
        snapshot_steps: get(&map, "snapshot_steps")?
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| CliError::Config("bad snapshot step".into())))
            .collect::<Result<_, _>>()?,
        snapshot_points: num(&map, "snapshot_points")?,
        modes: num(&map, "modes")?,
        radius: num(&map, "radius")?,
        sigma: num(&map, "sigma")?,
        min_hits: num(&map, "min_hits")?,
    })
}

fn echo_map<'a>(text: &'a str, subcommand: &str) -> Result<BTreeMap<&'a str, &'a str>, CliError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let expected = format!("# svmax-lab {subcommand} config v1");
    if header != expected {
        return Err(CliError::Config(format!(
            "echo header '{header}' does not match '{expected}'"
        )));
    }
    let mut map = BTreeMap::new();
    for line in lines {
        let Some(rest) = line.strip_prefix("# ") else { break };
        if let Some((k, v)) = rest.split_once('=') {
            map.insert(k, v);
        }
    }
    Ok(map)
}

fn get<'a>(map: &BTreeMap<&'a str, &'a str>, key: &str) -> Result<&'a str, CliError> {
    map.get(key)
        .copied()
        .ok_or_else(|| CliError::Config(format!("echo is missing key '{key}'")))
}

pub fn parse_activation(s: &str) -> Result<svmax_core::gan::HiddenActivation, CliError> {
    match s {
        "tanh" => Ok(svmax_core::gan::HiddenActivation::Tanh),
        "relu" => Ok(svmax_core::gan::HiddenActivation::Relu),
        other => Err(CliError::Config(format!("unknown activation '{other}'"))),
    }
}

fn widths(map: &BTreeMap<&str, &str>, key: &str) -> Result<Vec<usize>, CliError> {
    get(map, key)?
        .split(';')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::Config(format!("bad width in '{key}'"))))
        .collect()
}

fn num<T: std::str::FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<T, CliError> {
    get(map, key)?
        .parse()
        .map_err(|_| CliError::Config(format!("echo key '{key}' failed to parse")))
}
