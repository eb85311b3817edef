//! Retrieval and clustering evaluation: Recall@K, k-means with NMI, the
//! embedding-spread report, and the GAN mode-coverage score.

use crate::data::Rng;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SvBounds};

/// One evaluation snapshot, serialized as a CSV row
/// `iter,loss,s_mu,L,U,recall@1,recall@4,recall@8,nmi`.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub iteration: usize,
    pub loss: f64,
    pub s_mu: f64,
    pub sv_bounds: SvBounds,
    pub recall_at: Vec<(usize, f64)>,
    pub nmi: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "iter,loss,s_mu,L,U,recall@1,recall@4,recall@8,nmi";

    pub fn csv_row(&self) -> String {
        let mut row = format!(
            "{},{},{},{},{}",
            self.iteration, self.loss, self.s_mu, self.sv_bounds.lower, self.sv_bounds.upper
        );
        for (_, rate) in &self.recall_at {
            row.push_str(&format!(",{rate}"));
        }
        row.push_str(&format!(",{}", self.nmi));
        row
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Recall@K over Euclidean nearest neighbors, self excluded: the fraction of
/// queries with at least one same-label hit among the K nearest. Distance
/// ties break toward the lower row index.
pub fn recall_at_k(embeddings: &Matrix, labels: &[usize], ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(Error::ShapeError(format!("{} labels for {n} embeddings", labels.len())));
    }
    let k_max = ks.iter().copied().max().unwrap_or(0);
    if k_max >= n {
        return Err(Error::InvalidK { k: k_max, n });
    }
    let mut hits = vec![0usize; ks.len()];
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for q in 0..n {
        order.clear();
        for j in 0..n {
            if j != q {
                order.push((sq_dist(embeddings.row(q), embeddings.row(j)), j));
            }
        }
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut hit_depth = None;
        for (depth, &(_, j)) in order.iter().take(k_max).enumerate() {
            if labels[j] == labels[q] {
                hit_depth = Some(depth + 1);
                break;
            }
        }
        if let Some(d) = hit_depth {
            for (slot, &k) in ks.iter().enumerate() {
                if k >= d {
                    hits[slot] += 1;
                }
            }
        }
    }
    Ok(ks
        .iter()
        .zip(hits)
        .map(|(&k, h)| (k, h as f64 / n as f64))
        .collect())
}

/// Lloyd's algorithm with k-means++ seeding and best-of-`restarts` selection.
/// An empty cluster is re-seeded at the point farthest from its assigned
/// centroid. Returns the assignment of the lowest-inertia restart.
pub fn kmeans(
    embeddings: &Matrix,
    k: usize,
    restarts: usize,
    max_iters: usize,
    tol: f64,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let n = embeddings.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("k = {k} outside [1, {n}]")));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let mut local = rng.split();
        let (inertia, assignment) = kmeans_once(embeddings, k, max_iters, tol, &mut local);
        if best.as_ref().map_or(true, |(bi, _)| inertia < *bi) {
            best = Some((inertia, assignment));
        }
    }
    Ok(best.expect("at least one restart").1)
}

fn kmeans_once(
    e: &Matrix,
    k: usize,
    max_iters: usize,
    tol: f64,
    rng: &mut Rng,
) -> (f64, Vec<usize>) {
    let n = e.rows();
    let d = e.cols();

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(e.row(rng.gen_range(n)).to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(e.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(n)
        } else {
            let mut target = rng.next_f64() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(e.row(next).to_vec());
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(e.row(i), centroids.last().unwrap()));
        }
    }

    let mut assignment = vec![0usize; n];
    let mut prev_inertia = f64::INFINITY;
    for _iter in 0..max_iters {
        let mut inertia = 0.0;
        for i in 0..n {
            let (mut arg, mut best) = (0usize, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(e.row(i), centroid);
                if d < best {
                    best = d;
                    arg = c;
                }
            }
            assignment[i] = arg;
            inertia += best;
        }

        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; d]; k];
        for i in 0..n {
            counts[assignment[i]] += 1;
            for (s, v) in sums[assignment[i]].iter_mut().zip(e.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed at the point farthest from its current centroid.
                let far = (0..n)
                    .max_by(|&i, &j| {
                        let di = sq_dist(e.row(i), &centroids[assignment[i]]);
                        let dj = sq_dist(e.row(j), &centroids[assignment[j]]);
                        di.partial_cmp(&dj).unwrap()
                    })
                    .expect("n >= 1");
                centroids[c] = e.row(far).to_vec();
            } else {
                for (cv, s) in centroids[c].iter_mut().zip(&sums[c]) {
                    *cv = s / counts[c] as f64;
                }
            }
        }

        let converged = prev_inertia.is_finite()
            && (prev_inertia - inertia).abs() <= tol * prev_inertia.max(f64::MIN_POSITIVE);
        prev_inertia = inertia;
        if converged {
            break;
        }
    }

    // Final assignment against the updated centroids.
    let mut inertia = 0.0;
    for i in 0..n {
        let (mut arg, mut best) = (0usize, f64::INFINITY);
        for (c, centroid) in centroids.iter().enumerate() {
            let dd = sq_dist(e.row(i), centroid);
            if dd < best {
                best = dd;
                arg = c;
            }
        }
        assignment[i] = arg;
        inertia += best;
    }
    (inertia, assignment)
}

/// Normalized mutual information `I(A, B) / sqrt(H(A) H(B))`.
///
/// Zero-entropy convention: if exactly one side is a single cluster the score
/// is 0; if both are, the assignments carry the same (absent) structure and
/// the score is 1.
pub fn nmi(assignment_a: &[usize], assignment_b: &[usize]) -> Result<f64> {
    if assignment_a.len() != assignment_b.len() || assignment_a.is_empty() {
        return Err(Error::ShapeError(format!(
            "assignments of length {} and {}",
            assignment_a.len(),
            assignment_b.len()
        )));
    }
    let n = assignment_a.len() as f64;
    let ka = assignment_a.iter().max().unwrap() + 1;
    let kb = assignment_b.iter().max().unwrap() + 1;
    let mut joint = vec![0.0; ka * kb];
    let mut ma = vec![0.0; ka];
    let mut mb = vec![0.0; kb];
    for (&a, &b) in assignment_a.iter().zip(assignment_b) {
        joint[a * kb + b] += 1.0;
        ma[a] += 1.0;
        mb[b] += 1.0;
    }
    let entropy = |m: &[f64]| -> f64 {
        m.iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| {
                let p = c / n;
                -p * p.ln()
            })
            .sum()
    };
    let ha = entropy(&ma);
    let hb = entropy(&mb);
    if ha == 0.0 || hb == 0.0 {
        return Ok(if ha == 0.0 && hb == 0.0 { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for a in 0..ka {
        for b in 0..kb {
            let c = joint[a * kb + b];
            if c > 0.0 {
                let p = c / n;
                mi += p * (p * n * n / (ma[a] * mb[b])).ln();
            }
        }
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

/// Counts generator modes that received at least `min_hits` samples within
/// `3 sigma` of their center, plus the fraction of samples within `3 sigma`
/// of any center.
pub fn mode_coverage(
    samples: &Matrix,
    centers: &Matrix,
    sigma: f64,
    min_hits: usize,
) -> (usize, f64) {
    assert_eq!(samples.cols(), 2, "mode coverage is defined for 2D samples");
    assert_eq!(centers.cols(), 2);
    let r2 = (3.0 * sigma) * (3.0 * sigma);
    let mut hits = vec![0usize; centers.rows()];
    let mut near_any = 0usize;
    for i in 0..samples.rows() {
        let mut close = false;
        for (c, h) in hits.iter_mut().enumerate() {
            if sq_dist(samples.row(i), centers.row(c)) <= r2 {
                *h += 1;
                close = true;
            }
        }
        if close {
            near_any += 1;
        }
    }
    let covered = hits.iter().filter(|&&h| h >= min_hits).count();
    (covered, near_any as f64 / samples.rows().max(1) as f64)
}

/// Spread report for a unit-norm embedding: its mean singular value against
/// the bounds for its own shape.
pub fn spread_report(embeddings: &Matrix) -> Result<(f64, SvBounds)> {
    Ok((
        linalg::mean_singular_value(embeddings)?,
        linalg::sv_bounds(embeddings.rows(), embeddings.cols())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gaussian_ring, ring_centers};

    fn two_blobs(sep: f64, n_per: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            let cx = if c == 0 { 0.0 } else { sep };
            for _ in 0..n_per {
                rows.push(vec![cx + 0.1 * rng.next_gaussian(), 0.1 * rng.next_gaussian()]);
                labels.push(c);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn recall_separated_clusters() {
        let (e, labels) = two_blobs(10.0, 10, 4);
        let rates = recall_at_k(&e, &labels, &[1]).unwrap();
        assert_eq!(rates[0], (1, 1.0));
    }

    #[test]
    fn recall_all_distinct_labels() {
        let (e, _) = two_blobs(10.0, 5, 5);
        let labels: Vec<usize> = (0..10).collect();
        for (_, rate) in recall_at_k(&e, &labels, &[1, 3, 5]).unwrap() {
            assert_eq!(rate, 0.0);
        }
    }

    #[test]
    fn recall_matches_bruteforce_oracle() {
        let mut rng = Rng::new(17);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()]).collect();
        let labels: Vec<usize> = (0..50).map(|_| rng.gen_range(5)).collect();
        let e = Matrix::from_rows(&rows).unwrap();
        let ks = [1usize, 4, 8];
        let rates = recall_at_k(&e, &labels, &ks).unwrap();

        for (slot, &k) in ks.iter().enumerate() {
            let mut hits = 0;
            for q in 0..50 {
                let mut all: Vec<(f64, usize)> = (0..50)
                    .filter(|&j| j != q)
                    .map(|j| (sq_dist(e.row(q), e.row(j)), j))
                    .collect();
                all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                if all[..k].iter().any(|&(_, j)| labels[j] == labels[q]) {
                    hits += 1;
                }
            }
            assert_eq!(rates[slot].1, hits as f64 / 50.0, "k = {k}");
        }
    }

    #[test]
    fn recall_monotone_in_k() {
        let mut rng = Rng::new(9);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.next_gaussian(), rng.next_gaussian()]).collect();
        let labels: Vec<usize> = (0..40).map(|_| rng.gen_range(4)).collect();
        let e = Matrix::from_rows(&rows).unwrap();
        let rates = recall_at_k(&e, &labels, &[1, 2, 4, 8, 16]).unwrap();
        for w in rates.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn recall_rejects_big_k() {
        let (e, labels) = two_blobs(1.0, 3, 2);
        assert!(matches!(
            recall_at_k(&e, &labels, &[6]),
            Err(Error::InvalidK { k: 6, n: 6 })
        ));
    }

    #[test]
    fn kmeans_k_equals_n() {
        let (e, _) = two_blobs(5.0, 4, 3);
        let mut rng = Rng::new(1);
        let a = kmeans(&e, 8, 4, 100, 1e-6, &mut rng).unwrap();
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 8, "every point gets its own cluster");
    }

    #[test]
    fn kmeans_single_cluster_centroid_is_mean() {
        let (e, _) = two_blobs(2.0, 5, 8);
        let mut rng = Rng::new(2);
        let a = kmeans(&e, 1, 2, 50, 1e-9, &mut rng).unwrap();
        assert!(a.iter().all(|&c| c == 0));
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let (e, labels) = two_blobs(10.0, 25, 6);
        let mut rng = Rng::new(3);
        let a = kmeans(&e, 2, 5, 100, 1e-6, &mut rng).unwrap();
        let score = nmi(&a, &labels).unwrap();
        assert!((score - 1.0).abs() < 1e-12, "NMI {score}");
    }

    #[test]
    fn nmi_identical_assignments() {
        let a = vec![0, 0, 1, 1, 2, 2];
        assert_eq!(nmi(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn nmi_permuted_labels_is_one() {
        let a = vec![0, 0, 1, 1, 2, 2];
        let b = vec![2, 2, 0, 0, 1, 1];
        assert_eq!(nmi(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn nmi_symmetric() {
        let mut rng = Rng::new(5);
        let a: Vec<usize> = (0..200).map(|_| rng.gen_range(4)).collect();
        let b: Vec<usize> = (0..200).map(|_| rng.gen_range(3)).collect();
        let ab = nmi(&a, &b).unwrap();
        let ba = nmi(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn nmi_independent_assignments_near_zero() {
        let mut rng = Rng::new(6);
        let n = 6000;
        let a: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.gen_range(3)).collect();
        let score = nmi(&a, &b).unwrap();
        assert!(score < 0.05, "independent NMI {score}");
    }

    #[test]
    fn nmi_zero_entropy_conventions() {
        let flat = vec![0usize; 10];
        let structured = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        assert_eq!(nmi(&flat, &structured).unwrap(), 0.0);
        assert_eq!(nmi(&structured, &flat).unwrap(), 0.0);
        let flat_other = vec![3usize; 10];
        assert_eq!(nmi(&flat, &flat_other).unwrap(), 1.0);
    }

    #[test]
    fn coverage_centers_themselves() {
        let centers = ring_centers(8, 2.0);
        let (covered, hq) = mode_coverage(&centers, &centers, 0.05, 1);
        assert_eq!(covered, 8);
        assert_eq!(hq, 1.0);
    }

    #[test]
    fn coverage_collapse_signature() {
        let centers = ring_centers(8, 2.0);
        let collapsed = Matrix::from_rows(&vec![vec![2.0, 0.0]; 100]).unwrap();
        let (covered, _) = mode_coverage(&collapsed, &centers, 0.05, 1);
        assert_eq!(covered, 1);
    }

    #[test]
    fn coverage_ground_truth_ring() {
        let mut rng = Rng::new(11);
        let ds = gaussian_ring(8, 2.0, 0.05, 5000, &mut rng);
        let centers = ring_centers(8, 2.0);
        let (covered, hq) = mode_coverage(&ds.samples, &centers, 0.05, 20);
        assert_eq!(covered, 8);
        assert!(hq >= 0.98, "high-quality fraction {hq}");
    }

    #[test]
    fn eval_report_csv_shape() {
        let report = EvalReport {
            iteration: 7,
            loss: 0.5,
            s_mu: 1.25,
            sv_bounds: SvBounds { lower: 1.0, upper: 2.0 },
            recall_at: vec![(1, 0.5), (4, 0.75), (8, 1.0)],
            nmi: 0.25,
        };
        assert_eq!(report.csv_row(), "7,0.5,1.25,1,2,0.5,0.75,1,0.25");
    }
}
