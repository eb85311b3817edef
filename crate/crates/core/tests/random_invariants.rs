//! Randomized invariants over the data sampler, normalization, spectrum
//! scaling, and clustering scores.

use proptest::prelude::*;

use svmax_core::data::{hypersphere_classes, sample_batch, Rng};
use svmax_core::linalg::{self, Matrix};
use svmax_core::losses::{self, LabeledBatch, Mining};
use svmax_core::metrics;

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.next_gaussian()).collect();
    Matrix::new(rows, cols, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batch_composition_holds(p in 2usize..6, l in 1usize..5, seed in 0u64..1_000) {
        let mut rng = Rng::new(seed);
        let ds = hypersphere_classes(6, 8, 0.2, 6, &mut rng);
        let batch = sample_batch(&ds, p, l, &mut rng).unwrap();
        prop_assert_eq!(batch.len(), p * l);
        // Exactly l rows per chosen class, all without replacement.
        let labels = batch.labels();
        let mut counts = std::collections::HashMap::new();
        for &lab in labels {
            *counts.entry(lab).or_insert(0usize) += 1;
        }
        prop_assert_eq!(counts.len(), p);
        prop_assert!(counts.values().all(|&c| c == l));
        let e = batch.embeddings();
        for i in 0..batch.len() {
            for j in (i + 1)..batch.len() {
                if labels[i] == labels[j] {
                    prop_assert!(e.row(i) != e.row(j), "sample reused within a batch");
                }
            }
        }
    }

    #[test]
    fn singular_values_scale_linearly(rows in 2usize..10, cols in 2usize..10,
                                      c in 0.1f64..8.0, seed in 0u64..500) {
        let a = gaussian_matrix(rows, cols, seed);
        let s = linalg::singular_values(&a).unwrap();
        let sc = linalg::singular_values(&a.scale(c)).unwrap();
        for (x, y) in s.iter().zip(&sc) {
            prop_assert!((c * x - y).abs() <= 1e-12 * (c * x).max(1.0));
        }
    }

    #[test]
    fn row_normalization_is_idempotent(rows in 1usize..8, cols in 2usize..8, seed in 0u64..500) {
        let a = gaussian_matrix(rows, cols, seed);
        let once = linalg::l2_normalize_rows(&a).unwrap();
        let twice = linalg::l2_normalize_rows(&once).unwrap();
        prop_assert!(once.max_abs_diff(&twice) <= 1e-15);
        for i in 0..rows {
            let n: f64 = once.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn nmi_stays_normalized_and_symmetric(seed in 0u64..1_000, n in 4usize..120) {
        let mut rng = Rng::new(seed);
        let a: Vec<usize> = (0..n).map(|_| rng.gen_range(4)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.gen_range(3)).collect();
        let ab = metrics::nmi(&a, &b).unwrap();
        let ba = metrics::nmi(&b, &a).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() <= 1e-12);
    }

    #[test]
    fn set_based_losses_ignore_row_order(seed in 0u64..500) {
        let mut rng = Rng::new(seed);
        let p = 4usize;
        let l = 2usize;
        let b = p * l;
        let mut rows = Vec::with_capacity(b);
        let mut labels = Vec::with_capacity(b);
        for c in 0..p {
            for _ in 0..l {
                rows.push(rng.unit_vector(6));
                labels.push(c);
            }
        }
        let batch = LabeledBatch::new(Matrix::from_rows(&rows).unwrap(), labels.clone(), p, l).unwrap();

        let mut perm: Vec<usize> = (0..b).collect();
        rng.shuffle(&mut perm);
        let prows: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let plabels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let permuted = LabeledBatch::new(Matrix::from_rows(&prows).unwrap(), plabels, p, l).unwrap();

        let t0 = losses::triplet_loss(&batch, 0.2, Mining::Hard).unwrap().value;
        let t1 = losses::triplet_loss(&permuted, 0.2, Mining::Hard).unwrap().value;
        prop_assert!((t0 - t1).abs() <= 1e-12);

        let n0 = losses::npair_loss(&batch, true).unwrap().value;
        let n1 = losses::npair_loss(&permuted, true).unwrap().value;
        prop_assert!((n0 - n1).abs() <= 1e-12);

        let a0 = losses::angular_loss(&batch, 45.0).unwrap().value;
        let a1 = losses::angular_loss(&permuted, 45.0).unwrap().value;
        prop_assert!((a0 - a1).abs() <= 1e-12);
    }
}
