//! Ranking losses with analytic bounds, the mean-singular-value regularizers,
//! and the representation-counting losses.
//!
//! Every loss reports the batch mean (never the sum) so regularizer weights
//! transfer across batch sizes, and returns the gradient with respect to the
//! embedding matrix so training code can chain it through the network.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// A mini-batch of embeddings with class labels in (p, l) composition:
/// `p` classes, `l` samples per class, `b = p * l` rows grouped by class.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    embeddings: Matrix,
    labels: Vec<usize>,
    p: usize,
    l: usize,
    unit_norm: bool,
    // Row indices per class, in first-appearance order.
    class_rows: Vec<Vec<usize>>,
}

impl LabeledBatch {
    pub fn new(embeddings: Matrix, labels: Vec<usize>, p: usize, l: usize) -> Result<Self> {
        let b = p * l;
        if embeddings.rows() != b || labels.len() != b {
            return Err(Error::BatchComposition(format!(
                "expected b = p*l = {b} rows, got {} embeddings / {} labels",
                embeddings.rows(),
                labels.len()
            )));
        }
        let mut class_rows: Vec<Vec<usize>> = Vec::new();
        let mut class_of: Vec<(usize, usize)> = Vec::new(); // (label, slot)
        for (i, &lab) in labels.iter().enumerate() {
            match class_of.iter().find(|(l2, _)| *l2 == lab) {
                Some(&(_, slot)) => class_rows[slot].push(i),
                None => {
                    class_of.push((lab, class_rows.len()));
                    class_rows.push(vec![i]);
                }
            }
        }
        if class_rows.len() != p {
            return Err(Error::BatchComposition(format!(
                "expected {p} distinct classes, got {}",
                class_rows.len()
            )));
        }
        if let Some(bad) = class_rows.iter().position(|r| r.len() != l) {
            return Err(Error::BatchComposition(format!(
                "class in slot {bad} has {} samples, expected l = {l}",
                class_rows[bad].len()
            )));
        }
        let unit_norm = (0..b).all(|i| {
            let n: f64 = embeddings.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            (n - 1.0).abs() <= 1e-9
        });
        Ok(Self { embeddings, labels, p, l, unit_norm, class_rows })
    }

    /// Same labels and layout, new embedding values (e.g. a network output).
    pub fn with_embeddings(&self, embeddings: Matrix) -> Result<Self> {
        Self::new(embeddings, self.labels.clone(), self.p, self.l)
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// True when every row was unit-norm (within 1e-9) at construction.
    pub fn unit_norm(&self) -> bool {
        self.unit_norm
    }

    fn require_unit_norm(&self) -> Result<()> {
        if self.unit_norm {
            return Ok(());
        }
        for i in 0..self.len() {
            let n: f64 = self.embeddings.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::NormViolation { row: i });
            }
        }
        unreachable!("unit_norm flag inconsistent with row norms");
    }
}

/// A loss evaluation: scalar value, gradient with respect to the embedding
/// matrix, and the closed-form range the value lives in (infinite sentinels
/// when no normalization assumption backs a range).
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub embedding_grad: Matrix,
    pub bounds: (f64, f64),
}

/// Triplet selection strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mining {
    /// Per anchor: farthest positive, nearest negative.
    Hard,
    /// Average over every valid (anchor, positive, negative) triple.
    All,
}

/// Loss family tag used for closed-form bound lookup and CLI dispatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Contrastive,
    Triplet,
    Npair,
    Angular,
}

fn euclid(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn add_scaled(row: &mut [f64], src: &[f64], c: f64) {
    for (r, s) in row.iter_mut().zip(src) {
        *r += c * s;
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Contrastive loss over a deterministic pair layout: inside every class the
/// samples pair up two-by-two (positives); each positive anchor is paired
/// with the mirror sample of the next class block (negatives), giving equal
/// positive and negative pair counts.
///
/// `CL = mean[ delta * D + (1 - delta) * max(0, m - D) ]` with `0 < m <= 2`.
pub fn contrastive_loss(batch: &LabeledBatch, m: f64) -> Result<LossValue> {
    batch.require_unit_norm()?;
    if !(m > 0.0 && m <= 2.0) {
        return Err(Error::InvalidInput(format!("contrastive margin {m} outside (0, 2]")));
    }
    if batch.p() < 2 || batch.l() < 2 {
        return Err(Error::BatchComposition(
            "contrastive pairing needs p >= 2 and l >= 2".into(),
        ));
    }
    Ok(contrastive_raw(batch, m))
}

fn contrastive_raw(batch: &LabeledBatch, m: f64) -> LossValue {
    let e = batch.embeddings();
    let mut grad = Matrix::zeros(e.rows(), e.cols());
    let pairs_per_class = batch.l() / 2;
    let p = batch.p();
    let mut total = 0.0;
    let mut count = 0usize;

    for (slot, rows) in batch.class_rows.iter().enumerate() {
        let next = &batch.class_rows[(slot + 1) % p];
        for j in 0..pairs_per_class {
            let (i, k) = (rows[2 * j], rows[2 * j + 1]);
            // Positive pair: pull together.
            let d = euclid(e.row(i), e.row(k));
            total += d;
            count += 1;
            if d > 0.0 {
                let inv = 1.0 / d;
                for c in 0..e.cols() {
                    let diff = (e.get(i, c) - e.get(k, c)) * inv;
                    grad.set(i, c, grad.get(i, c) + diff);
                    grad.set(k, c, grad.get(k, c) - diff);
                }
            }
            // Negative pair: push apart up to the margin.
            let (ni, nk) = (rows[2 * j], next[2 * j + 1]);
            let dn = euclid(e.row(ni), e.row(nk));
            total += (m - dn).max(0.0);
            count += 1;
            if dn > 0.0 && dn < m {
                let inv = 1.0 / dn;
                for c in 0..e.cols() {
                    let diff = (e.get(ni, c) - e.get(nk, c)) * inv;
                    grad.set(ni, c, grad.get(ni, c) - diff);
                    grad.set(nk, c, grad.get(nk, c) + diff);
                }
            }
        }
    }

    let n = count.max(1) as f64;
    LossValue {
        value: total / n,
        embedding_grad: grad.scale(1.0 / n),
        bounds: (0.0, 2.0),
    }
}

/// Triplet loss `mean[ max(0, D_ap - D_an + m) ]` with `0 < m < 2`.
///
/// Every row acts as an anchor. `Mining::Hard` picks the farthest positive
/// and nearest negative per anchor; ties break toward the lower row index.
pub fn triplet_loss(batch: &LabeledBatch, m: f64, mining: Mining) -> Result<LossValue> {
    batch.require_unit_norm()?;
    if !(m > 0.0 && m < 2.0) {
        return Err(Error::InvalidInput(format!("triplet margin {m} outside (0, 2)")));
    }
    if batch.l() < 2 {
        return Err(Error::InsufficientPositives { class: batch.labels()[0] });
    }
    Ok(triplet_raw(batch, m, mining))
}

fn triplet_raw(batch: &LabeledBatch, m: f64, mining: Mining) -> LossValue {
    let e = batch.embeddings();
    let b = batch.len();
    let labels = batch.labels();
    let mut dist = vec![0.0; b * b];
    for i in 0..b {
        for j in (i + 1)..b {
            let d = euclid(e.row(i), e.row(j));
            dist[i * b + j] = d;
            dist[j * b + i] = d;
        }
    }

    let mut grad = Matrix::zeros(e.rows(), e.cols());
    let mut total = 0.0;
    let mut count = 0usize;

    let accumulate = |grad: &mut Matrix, a: usize, p: usize, n: usize, w: f64| {
        let (dap, dan) = (dist[a * b + p], dist[a * b + n]);
        let term = dap - dan + m;
        if term <= 0.0 {
            return term.max(0.0);
        }
        if dap > 0.0 {
            let inv = w / dap;
            for c in 0..e.cols() {
                let diff = (e.get(a, c) - e.get(p, c)) * inv;
                grad.set(a, c, grad.get(a, c) + diff);
                grad.set(p, c, grad.get(p, c) - diff);
            }
        }
        if dan > 0.0 {
            let inv = w / dan;
            for c in 0..e.cols() {
                let diff = (e.get(a, c) - e.get(n, c)) * inv;
                grad.set(a, c, grad.get(a, c) - diff);
                grad.set(n, c, grad.get(n, c) + diff);
            }
        }
        term
    };

    match mining {
        Mining::Hard => {
            for a in 0..b {
                let mut hp = usize::MAX;
                let mut hn = usize::MAX;
                for j in 0..b {
                    if j == a {
                        continue;
                    }
                    if labels[j] == labels[a] {
                        if hp == usize::MAX || dist[a * b + j] > dist[a * b + hp] {
                            hp = j;
                        }
                    } else if hn == usize::MAX || dist[a * b + j] < dist[a * b + hn] {
                        hn = j;
                    }
                }
                total += accumulate(&mut grad, a, hp, hn, 1.0);
                count += 1;
            }
        }
        Mining::All => {
            for a in 0..b {
                for p in 0..b {
                    if p == a || labels[p] != labels[a] {
                        continue;
                    }
                    for n in 0..b {
                        if labels[n] == labels[a] {
                            continue;
                        }
                        total += accumulate(&mut grad, a, p, n, 1.0);
                        count += 1;
                    }
                }
            }
        }
    }

    let nf = count.max(1) as f64;
    LossValue {
        value: total / nf,
        embedding_grad: grad.scale(1.0 / nf),
        bounds: (0.0, 2.0 + m),
    }
}

/// N-pair loss with `l = 2`: every row anchors against its classmate as the
/// positive and all other `b - 2` rows as negatives,
/// `NL = mean[ -log( exp(a.p) / (exp(a.p) + sum_n exp(a.n)) ) ]`.
///
/// With `normalized` the closed-form bounds apply; without it the value is
/// still defined but unbounded (sentinel infinities).
pub fn npair_loss(batch: &LabeledBatch, normalized: bool) -> Result<LossValue> {
    if batch.l() != 2 {
        return Err(Error::BatchComposition(format!(
            "n-pair loss needs l = 2, got l = {}",
            batch.l()
        )));
    }
    if normalized {
        batch.require_unit_norm()?;
    }
    Ok(npair_raw(batch, normalized))
}

fn npair_raw(batch: &LabeledBatch, normalized: bool) -> LossValue {
    let e = batch.embeddings();
    let b = batch.len();
    let labels = batch.labels();
    let mut grad = Matrix::zeros(e.rows(), e.cols());
    let mut total = 0.0;

    for a in 0..b {
        let pos = (0..b)
            .find(|&j| j != a && labels[j] == labels[a])
            .expect("l = 2 guarantees a classmate");
        // Stable log-sum-exp over the positive plus all negatives.
        let z_pos = dot(e.row(a), e.row(pos));
        let mut zs: Vec<(usize, f64)> = vec![(pos, z_pos)];
        for j in 0..b {
            if j != a && j != pos {
                zs.push((j, dot(e.row(a), e.row(j))));
            }
        }
        let z_max = zs.iter().map(|&(_, z)| z).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = zs.iter().map(|&(_, z)| (z - z_max).exp()).sum();
        total += z_max + denom.ln() - z_pos;

        for &(j, z) in &zs {
            let w = (z - z_max).exp() / denom;
            let coeff = if j == pos { w - 1.0 } else { w };
            add_scaled(grad.row_mut(a), e.row(j), coeff);
            add_scaled(grad.row_mut(j), e.row(a), coeff);
        }
    }

    let nf = b as f64;
    let bounds = if normalized {
        loss_bounds(LossKind::Npair, 0.0, b)
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    };
    LossValue {
        value: total / nf,
        embedding_grad: grad.scale(1.0 / nf),
        bounds,
    }
}

/// Angular loss with `l = 2` and unit-norm rows,
/// `AL = mean[ log(1 + sum_n exp(f)) ]` where
/// `f = 4 tan^2(alpha) (a + p).n - 2 (1 + tan^2(alpha)) a.p`.
pub fn angular_loss(batch: &LabeledBatch, alpha_deg: f64) -> Result<LossValue> {
    if batch.l() != 2 {
        return Err(Error::BatchComposition(format!(
            "angular loss needs l = 2, got l = {}",
            batch.l()
        )));
    }
    batch.require_unit_norm()?;
    if !(alpha_deg > 0.0 && alpha_deg < 90.0) {
        return Err(Error::InvalidInput(format!(
            "angle bound {alpha_deg} outside (0, 90) degrees"
        )));
    }
    Ok(angular_raw(batch, alpha_deg))
}

fn angular_raw(batch: &LabeledBatch, alpha_deg: f64) -> LossValue {
    let e = batch.embeddings();
    let b = batch.len();
    let labels = batch.labels();
    let t2 = (alpha_deg.to_radians().tan()).powi(2);
    let mut grad = Matrix::zeros(e.rows(), e.cols());
    let mut total = 0.0;

    for a in 0..b {
        let pos = (0..b)
            .find(|&j| j != a && labels[j] == labels[a])
            .expect("l = 2 guarantees a classmate");
        let ap = dot(e.row(a), e.row(pos));
        let sum_row: Vec<f64> = e.row(a).iter().zip(e.row(pos)).map(|(x, y)| x + y).collect();

        let negs: Vec<usize> = (0..b).filter(|&j| j != a && j != pos).collect();
        let fs: Vec<f64> = negs
            .iter()
            .map(|&n| 4.0 * t2 * dot(&sum_row, e.row(n)) - 2.0 * (1.0 + t2) * ap)
            .collect();
        // term = log(1 + sum exp(f)), evaluated against the max exponent.
        let f_max = fs.iter().copied().fold(0.0_f64, f64::max);
        let denom = (-f_max).exp() + fs.iter().map(|&f| (f - f_max).exp()).sum::<f64>();
        total += f_max + denom.ln();

        for (&n, &f) in negs.iter().zip(&fs) {
            let w = (f - f_max).exp() / denom;
            if w == 0.0 {
                continue;
            }
            // df/da = 4 t2 n - 2 (1 + t2) p, symmetrically for p; df/dn = 4 t2 (a + p).
            add_scaled(grad.row_mut(a), e.row(n), w * 4.0 * t2);
            add_scaled(grad.row_mut(a), e.row(pos), -w * 2.0 * (1.0 + t2));
            add_scaled(grad.row_mut(pos), e.row(n), w * 4.0 * t2);
            add_scaled(grad.row_mut(pos), e.row(a), -w * 2.0 * (1.0 + t2));
            add_scaled(grad.row_mut(n), &sum_row, w * 4.0 * t2);
        }
    }

    let nf = b as f64;
    LossValue {
        value: total / nf,
        embedding_grad: grad.scale(1.0 / nf),
        bounds: loss_bounds(LossKind::Angular, alpha_deg, b),
    }
}

/// Unbounded regularization: `value = base - lambda * s_mu(e)`. With
/// `lambda = 0` the base loss is returned unchanged (bitwise).
pub fn svmax_unbounded(base: &LossValue, e: &Matrix, lambda: f64) -> Result<LossValue> {
    if lambda < 0.0 {
        return Err(Error::InvalidInput("lambda must be non-negative".into()));
    }
    if lambda == 0.0 {
        return Ok(base.clone());
    }
    let (s_mu, g) = linalg::msv_value_and_grad(e)?;
    Ok(LossValue {
        value: base.value - lambda * s_mu,
        embedding_grad: base.embedding_grad.sub(&g.grad.scale(lambda))?,
        bounds: (f64::NEG_INFINITY, f64::INFINITY),
    })
}

/// Bounded regularization for unit-norm embeddings:
/// `value = base + lambda * exp((U - s_mu) / (U - L))`, the regularizer term
/// living in `[lambda, lambda * e]`.
pub fn svmax_bounded(base: &LossValue, e: &Matrix, lambda: f64) -> Result<LossValue> {
    if lambda < 0.0 {
        return Err(Error::InvalidInput("lambda must be non-negative".into()));
    }
    let bounds = linalg::sv_bounds(e.rows(), e.cols())?;
    if bounds.upper - bounds.lower <= 0.0 {
        return Err(Error::DegenerateBounds);
    }
    if lambda == 0.0 {
        return Ok(base.clone());
    }
    for i in 0..e.rows() {
        let n: f64 = e.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::NormViolation { row: i });
        }
    }
    let (s_mu, g) = linalg::msv_value_and_grad(e)?;
    let width = bounds.upper - bounds.lower;
    let reg = lambda * ((bounds.upper - s_mu) / width).exp();
    Ok(LossValue {
        value: base.value + reg,
        embedding_grad: base.embedding_grad.add(&g.grad.scale(-reg / width))?,
        bounds: (base.bounds.0 + lambda, base.bounds.1 + lambda * std::f64::consts::E),
    })
}

/// Representation-counting loss for one image: equivariance distance between
/// the image embedding and the summed tile embeddings, plus a margin term
/// that repels a contrast image, `D(img, sum) + max(0, m - D(contrast, sum))`.
pub fn repcnt_loss(
    emb_image: &[f64],
    emb_tiles: &[Vec<f64>; 4],
    emb_contrast: &[f64],
    m: f64,
) -> Result<f64> {
    let d = emb_image.len();
    if emb_contrast.len() != d || emb_tiles.iter().any(|t| t.len() != d) {
        return Err(Error::ShapeError("rep-cnt embeddings must share one dimension".into()));
    }
    let mut tile_sum = vec![0.0; d];
    for t in emb_tiles {
        for (acc, v) in tile_sum.iter_mut().zip(t) {
            *acc += v;
        }
    }
    Ok(euclid(emb_image, &tile_sum) + (m - euclid(emb_contrast, &tile_sum)).max(0.0))
}

/// Batch form with the generic prior replacing the contrast term:
/// mean equivariance distance minus `lambda * s_mu` of the image batch.
pub fn repcnt_svmax(emb_image_batch: &Matrix, emb_tile_sums: &Matrix, lambda: f64) -> Result<f64> {
    if emb_image_batch.rows() != emb_tile_sums.rows()
        || emb_image_batch.cols() != emb_tile_sums.cols()
    {
        return Err(Error::ShapeError(format!(
            "image batch {}x{} vs tile sums {}x{}",
            emb_image_batch.rows(),
            emb_image_batch.cols(),
            emb_tile_sums.rows(),
            emb_tile_sums.cols()
        )));
    }
    let b = emb_image_batch.rows();
    let mean_dist = (0..b)
        .map(|i| euclid(emb_image_batch.row(i), emb_tile_sums.row(i)))
        .sum::<f64>()
        / b as f64;
    Ok(mean_dist - lambda * linalg::mean_singular_value(emb_image_batch)?)
}

/// Closed-form value range of each loss on unit-norm embeddings.
///
/// `param` is the margin for contrastive/triplet and the angle (degrees) for
/// angular; `b` only matters for the batch-dependent N-pair and angular
/// ranges (negative count `b - 2` per anchor).
pub fn loss_bounds(kind: LossKind, param: f64, b: usize) -> (f64, f64) {
    match kind {
        LossKind::Contrastive => (0.0, 2.0),
        LossKind::Triplet => (0.0, 2.0 + param),
        LossKind::Npair => {
            let n = b.saturating_sub(2) as f64;
            let e2 = std::f64::consts::E.powi(2);
            ((e2 + n).ln() - 2.0, (n * e2 + 1.0).ln())
        }
        LossKind::Angular => {
            let n = b.saturating_sub(2) as f64;
            let t2 = (param.to_radians().tan()).powi(2);
            (
                (n * (-10.0 * t2 - 2.0).exp() + 1.0).ln(),
                (n * (6.0 * t2 - 2.0).exp() + 1.0).ln(),
            )
        }
    }
}
