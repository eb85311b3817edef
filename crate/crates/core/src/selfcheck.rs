//! Independent verification routes for the SVD and its gradient, plus the
//! property suite behind the `svd-check` subcommand.
//!
//! The oracle here never shares code with the production SVD: singular
//! values are recomputed as eigenvalue square roots of the Gram matrix using
//! a two-sided symmetric Jacobi sweep, and gradients are re-derived by
//! central finite differences.

use crate::data::Rng;
use crate::linalg::{self, Matrix};

/// Eigenvalues of a symmetric matrix, descending, by two-sided cyclic Jacobi.
pub fn eig_sym(a: &Matrix) -> Vec<f64> {
    assert_eq!(a.rows(), a.cols(), "eig_sym needs a square matrix");
    let n = a.rows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m.get(i, j) * m.get(i, j);
            }
        }
        if (2.0 * off).sqrt() <= 1e-14 * m.frobenius_norm().max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;

                let app = m.get(p, p);
                let aqq = m.get(q, q);
                m.set(p, p, app - t * apq);
                m.set(q, q, aqq + t * apq);
                m.set(p, q, 0.0);
                m.set(q, p, 0.0);
                for i in 0..n {
                    if i == p || i == q {
                        continue;
                    }
                    let aip = m.get(i, p);
                    let aiq = m.get(i, q);
                    m.set(i, p, c * aip - s * aiq);
                    m.set(p, i, c * aip - s * aiq);
                    m.set(i, q, s * aip + c * aiq);
                    m.set(q, i, s * aip + c * aiq);
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eigs
}

/// Singular values of `a` recomputed through the smaller Gram matrix:
/// `sqrt(eig(A^T A))` (or `A A^T` when that is smaller), descending.
pub fn singular_values_via_gram(a: &Matrix) -> Vec<f64> {
    let gram = if a.cols() <= a.rows() {
        a.transpose().matmul(a).expect("gram shape")
    } else {
        a.matmul(&a.transpose()).expect("gram shape")
    };
    eig_sym(&gram).into_iter().map(|l| l.max(0.0).sqrt()).collect()
}

/// Central-difference gradient of the mean singular value at step `h`.
pub fn grad_msv_fd(e: &Matrix, h: f64) -> Matrix {
    let mut out = Matrix::zeros(e.rows(), e.cols());
    for i in 0..e.rows() {
        for j in 0..e.cols() {
            let mut plus = e.clone();
            plus.set(i, j, plus.get(i, j) + h);
            let mut minus = e.clone();
            minus.set(i, j, minus.get(i, j) - h);
            let fp = linalg::mean_singular_value(&plus).expect("finite");
            let fm = linalg::mean_singular_value(&minus).expect("finite");
            out.set(i, j, (fp - fm) / (2.0 * h));
        }
    }
    out
}

/// Outcome of one property over a trial set.
#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    /// Largest error metric observed (property-specific scale).
    pub worst: f64,
}

impl PropertyReport {
    pub fn ok(&self) -> bool {
        self.passed == self.total
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.next_gaussian()).collect();
    Matrix::new(rows, cols, data).expect("gaussian data is finite")
}

fn unit_row_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let rows_vec: Vec<Vec<f64>> = (0..rows).map(|_| rng.unit_vector(cols)).collect();
    Matrix::from_rows(&rows_vec).expect("unit rows")
}

/// Runs every linalg property; `trials` scales the per-property trial count.
pub fn run_all(seed: u64, trials: usize) -> Vec<PropertyReport> {
    let mut rng = Rng::new(seed);
    vec![
        check_factor_invariants(&mut rng, trials),
        check_gram_oracle(&mut rng, trials),
        check_gradient_fd(&mut rng, trials.min(50)),
        check_bound_containment(&mut rng, trials),
        check_rank_one_attainment(&mut rng, trials),
        check_orthogonal_attainment(&mut rng, trials),
        check_scale_equivariance(&mut rng, trials),
    ]
}

const FACTOR_SHAPES: &[(usize, usize)] = &[(16, 8), (8, 16), (5, 5), (64, 16), (12, 3)];
const BOUND_SHAPES: &[(usize, usize)] = &[(144, 128), (72, 64), (288, 256), (72, 128)];

pub fn check_factor_invariants(rng: &mut Rng, trials: usize) -> PropertyReport {
    let mut passed = 0;
    let mut worst = 0.0_f64;
    for t in 0..trials {
        let (r, c) = FACTOR_SHAPES[t % FACTOR_SHAPES.len()];
        let a = random_matrix(r, c, rng);
        let f = linalg::svd(&a).expect("svd on finite input");
        let k = r.min(c);
        let eye = Matrix::identity(k);
        let ortho_u = f.u.transpose().matmul(&f.u).unwrap().sub(&eye).unwrap().frobenius_norm();
        let ortho_v = f.v.transpose().matmul(&f.v).unwrap().sub(&eye).unwrap().frobenius_norm();
        let mut us = f.u.clone();
        for i in 0..us.rows() {
            for j in 0..k {
                let v = us.get(i, j) * f.s[j];
                us.set(i, j, v);
            }
        }
        let recon = us.matmul(&f.v.transpose()).unwrap().sub(&a).unwrap().frobenius_norm()
            / a.frobenius_norm().max(1.0);
        let sorted = f.s.windows(2).all(|w| w[0] >= w[1]) && f.s[k - 1] >= 0.0;
        let err = ortho_u.max(ortho_v).max(recon);
        worst = worst.max(err);
        if err <= 1e-9 && sorted {
            passed += 1;
        }
    }
    PropertyReport { name: "svd-factor-invariants", passed, total: trials, worst }
}

pub fn check_gram_oracle(rng: &mut Rng, trials: usize) -> PropertyReport {
    let shapes = [(16, 8), (64, 16), (8, 16)];
    let mut passed = 0;
    let mut worst = 0.0_f64;
    for t in 0..trials {
        let (r, c) = shapes[t % shapes.len()];
        let a = random_matrix(r, c, rng);
        let s = linalg::singular_values(&a).expect("svd");
        let oracle = singular_values_via_gram(&a);
        let mut rel = 0.0_f64;
        for (x, o) in s.iter().zip(&oracle) {
            rel = rel.max((x - o).abs() / o.max(1e-12));
        }
        worst = worst.max(rel);
        if rel <= 1e-8 {
            passed += 1;
        }
    }
    PropertyReport { name: "gram-eigensolver-match", passed, total: trials, worst }
}

pub fn check_gradient_fd(rng: &mut Rng, trials: usize) -> PropertyReport {
    let shapes = [(16, 8), (8, 16), (12, 12)];
    let mut passed = 0;
    let mut worst = 0.0_f64;
    let mut t = 0;
    let mut done = 0;
    while done < trials {
        let (r, c) = shapes[t % shapes.len()];
        t += 1;
        let a = random_matrix(r, c, rng);
        let g = linalg::grad_mean_singular_value(&a).expect("svd");
        if g.degenerate {
            // The contract only promises finite-difference agreement away
            // from coalescing singular values; resample.
            continue;
        }
        done += 1;
        let fd = grad_msv_fd(&a, 1e-5);
        let rel = g.grad.sub(&fd).unwrap().frobenius_norm() / fd.frobenius_norm().max(1e-12);
        worst = worst.max(rel);
        if rel <= 1e-5 {
            passed += 1;
        }
    }
    PropertyReport { name: "msv-gradient-vs-fd", passed, total: trials, worst }
}

pub fn check_bound_containment(rng: &mut Rng, trials: usize) -> PropertyReport {
    let mut passed = 0;
    let mut worst = 0.0_f64;
    for t in 0..trials {
        let (b, d) = BOUND_SHAPES[t % BOUND_SHAPES.len()];
        let e = unit_row_matrix(b, d, rng);
        let s_mu = linalg::mean_singular_value(&e).expect("svd");
        let bounds = linalg::sv_bounds(b, d).expect("positive dims");
        let violation = (bounds.lower - s_mu).max(s_mu - bounds.upper).max(0.0);
        worst = worst.max(violation);
        if violation <= 1e-9 {
            passed += 1;
        }
    }
    PropertyReport { name: "msv-bound-containment", passed, total: trials, worst }
}

pub fn check_rank_one_attainment(rng: &mut Rng, trials: usize) -> PropertyReport {
    let mut passed = 0;
    let mut worst = 0.0_f64;
    for t in 0..trials {
        let (b, d) = BOUND_SHAPES[t % BOUND_SHAPES.len()];
        let row = rng.unit_vector(d);
        let e = Matrix::from_rows(&vec![row; b]).expect("rank-1 rows");
        let s_mu = linalg::mean_singular_value(&e).expect("svd");
        let bounds = linalg::sv_bounds(b, d).expect("positive dims");
        let err = (s_mu - bounds.lower).abs();
        worst = worst.max(err);
        if err <= 1e-9 {
            passed += 1;
        }
    }
    PropertyReport { name: "rank-one-attains-lower", passed, total: trials, worst }
}

/// Matrices whose columns are orthogonal with equal norms `sqrt(b/d)` attain
/// the upper bound. Uses the block-stacked basis construction plus the
/// evenly-spaced-classes-on-a-circle corner case.
pub fn check_orthogonal_attainment(rng: &mut Rng, trials: usize) -> PropertyReport {
    let mut passed = 0;
    let mut worst = 0.0_f64;
    for t in 0..trials {
        let err = if t % 2 == 0 {
            let (q, d) = [(2, 8), (3, 5), (4, 16)][t % 3];
            let b = q * d;
            let mut e = Matrix::zeros(b, d);
            for i in 0..b {
                e.set(i, i % d, 1.0);
            }
            let s_mu = linalg::mean_singular_value(&e).expect("svd");
            (s_mu - linalg::sv_bounds(b, d).unwrap().upper).abs()
        } else {
            // p classes evenly spaced on the unit circle, l identical
            // samples each: a perfectly distributed mini-batch.
            let p = 3 + t % 6;
            let l = 2 + t % 3;
            let phase = rng.next_f64() * std::f64::consts::TAU;
            let mut rows = Vec::with_capacity(p * l);
            for k in 0..p {
                let angle = phase + std::f64::consts::TAU * k as f64 / p as f64;
                for _ in 0..l {
                    rows.push(vec![angle.cos(), angle.sin()]);
                }
            }
            let e = Matrix::from_rows(&rows).unwrap();
            let s_mu = linalg::mean_singular_value(&e).expect("svd");
            (s_mu - linalg::sv_bounds(p * l, 2).unwrap().upper).abs()
        };
        worst = worst.max(err);
        if err <= 1e-9 {
            passed += 1;
        }
    }
    PropertyReport { name: "orthogonal-attains-upper", passed, total: trials, worst }
}

pub fn check_scale_equivariance(rng: &mut Rng, trials: usize) -> PropertyReport {
    let mut passed = 0;
    let mut worst = 0.0_f64;
    for t in 0..trials {
        let (r, c) = FACTOR_SHAPES[t % FACTOR_SHAPES.len()];
        let a = random_matrix(r, c, rng);
        let scale = 0.25 + 4.0 * rng.next_f64();
        let s = linalg::singular_values(&a).expect("svd");
        let sc = linalg::singular_values(&a.scale(scale)).expect("svd");
        let mut rel = 0.0_f64;
        for (x, y) in s.iter().zip(&sc) {
            rel = rel.max((scale * x - y).abs() / (scale * x).max(1e-12));
        }
        worst = worst.max(rel);
        if rel <= 1e-12 {
            passed += 1;
        }
    }
    PropertyReport { name: "scale-equivariance", passed, total: trials, worst }
}
