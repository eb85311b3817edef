//! Seeded synthetic datasets, the (p, l) batch sampler, and the MNIST IDX
//! parser.
//!
//! All randomness flows through [`Rng`], a self-contained xoshiro256**
//! generator seeded through splitmix64. Traces produced from the same seed
//! are identical across platforms, which the determinism tests rely on.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::LabeledBatch;

/// xoshiro256** with splitmix64 seed expansion.
///
/// Box-Muller supplies gaussians; `gen_range` reduces by modulo, whose bias
/// is irrelevant at the ranges used here (< 2^20).
#[derive(Debug, Clone)]
pub struct Rng {
    state: [u64; 4],
    spare_gaussian: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut next = || {
            sm = sm.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = sm;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        };
        Self {
            state: [next(), next(), next(), next()],
            spare_gaussian: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let [s0, s1, s2, s3] = self.state;
        let result = s1.wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s1 << 17;
        let mut s2n = s2 ^ s0;
        let mut s3n = s3 ^ s1;
        let s1n = s1 ^ s2n;
        let s0n = s0 ^ s3n;
        s2n ^= t;
        s3n = s3n.rotate_left(45);
        self.state = [s0n, s1n, s2n, s3n];
        result
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via the trigonometric Box-Muller transform.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare_gaussian.take() {
            return z;
        }
        let u1 = (1.0 - self.next_f64()).max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_gaussian = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn gen_range(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.gen_range(i + 1);
            slice.swap(i, j);
        }
    }

    /// Independent substream; used to give k-means restarts their own state.
    pub fn split(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }

    /// Random point on the unit sphere in `dim` dimensions.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.next_gaussian()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}

/// In-memory dataset: one sample per row, integer class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(samples: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if labels.len() != samples.rows() {
            return Err(Error::ShapeError(format!(
                "{} labels for {} samples",
                labels.len(),
                samples.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidInput(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        Ok(Self { samples, labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    /// Row indices of every sample in each class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }

    /// Splits off the first `fraction` of every class as the training part;
    /// the remainder becomes the held-out part. Deterministic.
    pub fn split(&self, train_fraction: f64) -> (Dataset, Dataset) {
        let mut train_idx = Vec::new();
        let mut eval_idx = Vec::new();
        for idx in self.class_indices() {
            let cut = ((idx.len() as f64) * train_fraction).round() as usize;
            let cut = cut.clamp(1, idx.len().saturating_sub(1).max(1));
            train_idx.extend_from_slice(&idx[..cut]);
            eval_idx.extend_from_slice(&idx[cut.min(idx.len())..]);
        }
        (self.subset(&train_idx), self.subset(&eval_idx))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let cols = self.samples.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.samples.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            samples: Matrix::new(indices.len(), cols, data).expect("subset shape"),
            labels,
            class_count: self.class_count,
        }
    }

    /// CSV export with header `label,x0,x1,...`.
    pub fn to_csv(&self) -> String {
        let cols = self.samples.cols();
        let mut out = String::from("label");
        for j in 0..cols {
            out.push_str(&format!(",x{j}"));
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&self.labels[i].to_string());
            for v in self.samples.row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Mixture of `modes` isotropic Gaussians placed on a circle of the given
/// radius; mode k sits at angle `2 pi k / modes`.
pub fn gaussian_ring(modes: usize, radius: f64, sigma: f64, n: usize, rng: &mut Rng) -> Dataset {
    assert!(modes >= 1 && sigma > 0.0);
    let centers = ring_centers(modes, radius);
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.gen_range(modes);
        data.push(centers.get(k, 0) + sigma * rng.next_gaussian());
        data.push(centers.get(k, 1) + sigma * rng.next_gaussian());
        labels.push(k);
    }
    Dataset {
        samples: Matrix::new(n, 2, data).expect("ring shape"),
        labels,
        class_count: modes,
    }
}

/// The mode centers of [`gaussian_ring`] as a `modes x 2` matrix.
pub fn ring_centers(modes: usize, radius: f64) -> Matrix {
    let mut data = Vec::with_capacity(modes * 2);
    for k in 0..modes {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / modes as f64;
        data.push(radius * angle.cos());
        data.push(radius * angle.sin());
    }
    Matrix::new(modes, 2, data).expect("center shape")
}

/// Synthetic classification data on the unit sphere: class centers drawn
/// uniformly, samples jittered by `spread` and re-normalized. A desk-scale
/// stand-in for image retrieval datasets.
pub fn hypersphere_classes(
    classes: usize,
    dim: usize,
    spread: f64,
    n_per_class: usize,
    rng: &mut Rng,
) -> Dataset {
    assert!(classes >= 2 && dim >= 2 && spread > 0.0);
    let centers: Vec<Vec<f64>> = (0..classes).map(|_| rng.unit_vector(dim)).collect();
    let n = classes * n_per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            let mut v: Vec<f64> = center
                .iter()
                .map(|&x| x + spread * rng.next_gaussian())
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            for x in v.iter_mut() {
                *x /= norm;
            }
            data.extend_from_slice(&v);
            labels.push(c);
        }
    }
    Dataset {
        samples: Matrix::new(n, dim, data).expect("hypersphere shape"),
        labels,
        class_count: classes,
    }
}

/// Draws a (p, l) batch: `p` distinct classes, `l` distinct samples each,
/// without replacement inside the batch. Rows are grouped by class.
pub fn sample_batch(ds: &Dataset, p: usize, l: usize, rng: &mut Rng) -> Result<LabeledBatch> {
    if p == 0 || l == 0 {
        return Err(Error::BatchComposition("p and l must be positive".into()));
    }
    if ds.class_count < p {
        return Err(Error::BatchComposition(format!(
            "dataset has {} classes, batch wants p = {p}",
            ds.class_count
        )));
    }
    let by_class = ds.class_indices();
    let mut class_ids: Vec<usize> = (0..ds.class_count).collect();
    rng.shuffle(&mut class_ids);
    let chosen = &class_ids[..p];
    if let Some(&short) = chosen.iter().find(|&&c| by_class[c].len() < l) {
        return Err(Error::BatchComposition(format!(
            "class {short} has {} samples, batch wants l = {l}",
            by_class[short].len()
        )));
    }

    let cols = ds.samples.cols();
    let mut data = Vec::with_capacity(p * l * cols);
    let mut labels = Vec::with_capacity(p * l);
    for &c in chosen {
        let mut idx = by_class[c].clone();
        rng.shuffle(&mut idx);
        for &i in &idx[..l] {
            data.extend_from_slice(ds.samples.row(i));
            labels.push(c);
        }
    }
    LabeledBatch::new(Matrix::new(p * l, cols, data)?, labels, p, l)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Payload of one IDX file.
#[derive(Debug, Clone)]
pub enum IdxContent {
    /// `n x (rows*cols)` matrix with pixel values scaled to [0, 1].
    Images(Matrix),
    Labels(Vec<usize>),
}

/// Parses the big-endian IDX container used to distribute MNIST.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxContent> {
    let magic = read_u32_be(bytes, 0)?;
    match magic {
        IDX_IMAGES_MAGIC => {
            let n = read_u32_be(bytes, 4)? as usize;
            let rows = read_u32_be(bytes, 8)? as usize;
            let cols = read_u32_be(bytes, 12)? as usize;
            let expected = n * rows * cols;
            let payload = &bytes[16.min(bytes.len())..];
            if payload.len() < expected {
                return Err(Error::TruncatedFile { expected, actual: payload.len() });
            }
            let data: Vec<f64> = payload[..expected].iter().map(|&b| b as f64 / 255.0).collect();
            Ok(IdxContent::Images(Matrix::new(n, rows * cols, data)?))
        }
        IDX_LABELS_MAGIC => {
            let n = read_u32_be(bytes, 4)? as usize;
            let payload = &bytes[8.min(bytes.len())..];
            if payload.len() < n {
                return Err(Error::TruncatedFile { expected: n, actual: payload.len() });
            }
            Ok(IdxContent::Labels(payload[..n].iter().map(|&b| b as usize).collect()))
        }
        other => Err(Error::FormatError(format!("unknown IDX magic 0x{other:08x}"))),
    }
}

fn read_u32_be(bytes: &[u8], at: usize) -> Result<u32> {
    let end = at + 4;
    if bytes.len() < end {
        return Err(Error::TruncatedFile { expected: end, actual: bytes.len() });
    }
    Ok(u32::from_be_bytes(bytes[at..end].try_into().unwrap()))
}

/// Loads an MNIST-style image + label file pair into a [`Dataset`].
pub fn load_idx_pair(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = match parse_idx(&std::fs::read(images_path)?)? {
        IdxContent::Images(m) => m,
        IdxContent::Labels(_) => {
            return Err(Error::FormatError(format!(
                "{} holds labels, expected images",
                images_path.display()
            )))
        }
    };
    let labels = match parse_idx(&std::fs::read(labels_path)?)? {
        IdxContent::Labels(l) => l,
        IdxContent::Images(_) => {
            return Err(Error::FormatError(format!(
                "{} holds images, expected labels",
                labels_path.display()
            )))
        }
    };
    let class_count = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(images, labels, class_count)
}
