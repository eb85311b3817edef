//! Dense matrix arithmetic, SVD, and the mean singular value with its bounds.
//!
//! Everything here operates on small row-major `f64` matrices (mini-batch
//! embeddings, layer weights). The SVD is a one-sided Jacobi applied to the
//! thinner orientation, which is the accuracy sweet spot for matrices of this
//! size and keeps the crate dependency-free.

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data. Rejects dimension mismatches and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeError(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite matrix entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::InvalidInput("empty row list".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeError("ragged rows".into()));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * other`; i-k-j loop order to stay cache-friendly on row-major data.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeError(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeError(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Thin SVD `A = U diag(s) V^T` with `r = min(rows, cols)` factors.
///
/// `u` is rows x r, `v` is cols x r, and `s` is sorted descending. Columns of
/// `u` and `v` are orthonormal even when `A` is rank deficient (null columns
/// are completed to an orthonormal basis).
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

/// Lower and upper bounds on the mean singular value of a unit-row matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Induced and spectral norms of a matrix. `l1` is the maximum absolute
/// column sum, `linf` the maximum absolute row sum, `nuclear` the sum of
/// singular values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixNorms {
    pub l1: f64,
    pub linf: f64,
    pub frobenius: f64,
    pub nuclear: f64,
}

/// Gradient of the mean singular value, with a degeneracy advisory.
///
/// `degenerate` is set when singular values are near-equal or near-zero
/// (relative gap below 1e-8). The gradient is still the subgradient
/// `U V^T / r` built from the computed factors; callers decide whether the
/// advisory matters.
#[derive(Debug, Clone)]
pub struct MsvGrad {
    pub grad: Matrix,
    pub degenerate: bool,
}

// Relative off-diagonal threshold at which a Jacobi rotation is skipped.
const JACOBI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 60;

/// Singular value decomposition by one-sided Jacobi rotations.
///
/// The rotation sweep runs on the thinner orientation (the input is
/// transposed when rows < cols) and stops once every column pair satisfies
/// `|c_p . c_q| <= 1e-12 * ||c_p|| ||c_q||`, or after 60 sweeps.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    if a.rows >= a.cols {
        jacobi_svd_tall(a, true)
    } else {
        let r = jacobi_svd_tall(&a.transpose(), true)?;
        Ok(SvdResult { u: r.v, s: r.s, v: r.u })
    }
}

/// Singular values only (descending); skips factor accumulation.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    let tall = if a.rows >= a.cols { a.clone() } else { a.transpose() };
    Ok(jacobi_svd_tall(&tall, false)?.s)
}

// One-sided Jacobi on a tall matrix (rows >= cols). Columns are stored
// contiguously so the hot dot products and rotations run over slices.
fn jacobi_svd_tall(a: &Matrix, want_factors: bool) -> Result<SvdResult> {
    let m = a.rows;
    let n = a.cols;
    debug_assert!(m >= n);

    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a.data[i * n + j]).collect())
        .collect();
    let mut v_cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = column_moments(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                if want_factors {
                    rotate_pair(&mut v_cols, p, q, c, s);
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));

    let s = apply_fault(order.iter().map(|&i| norms[i]).collect());

    if !want_factors {
        return Ok(SvdResult {
            u: Matrix::zeros(1, 1),
            s,
            v: Matrix::zeros(1, 1),
        });
    }

    let s_max = s[0];
    let null_threshold = s_max * f64::EPSILON * (m.max(n) as f64);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (rank, &src) in order.iter().enumerate() {
        if s[rank] > null_threshold {
            let inv = 1.0 / s[rank];
            u_cols.push(cols[src].iter().map(|x| x * inv).collect());
        } else {
            u_cols.push(complete_basis(&u_cols, m));
        }
    }

    let mut u = Matrix::zeros(m, n);
    for (j, col) in u_cols.iter().enumerate() {
        for i in 0..m {
            u.data[i * n + j] = col[i];
        }
    }
    let mut v = Matrix::zeros(n, n);
    for (j, &src) in order.iter().enumerate() {
        for i in 0..n {
            v.data[i * n + j] = v_cols[src][i];
        }
    }
    Ok(SvdResult { u, s, v })
}

// Deliberate corruption hook for the harness self-test build.
#[cfg(feature = "fault-inject")]
fn apply_fault(mut s: Vec<f64>) -> Vec<f64> {
    if let Some(first) = s.first_mut() {
        *first *= 1.0 + 1e-6;
    }
    s
}

#[cfg(not(feature = "fault-inject"))]
fn apply_fault(s: Vec<f64>) -> Vec<f64> {
    s
}

fn column_moments(cp: &[f64], cq: &[f64]) -> (f64, f64, f64) {
    let mut alpha = 0.0;
    let mut beta = 0.0;
    let mut gamma = 0.0;
    for (x, y) in cp.iter().zip(cq) {
        alpha += x * x;
        beta += y * y;
        gamma += x * y;
    }
    (alpha, beta, gamma)
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let cp = &mut head[p];
    let cq = &mut tail[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = c * *x - s * *y;
        let xq = s * *x + c * *y;
        *x = xp;
        *y = xq;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Unit vector orthogonal to every column collected so far; fills the null
// space of a rank-deficient factor. Tries canonical basis vectors in order,
// so the result is deterministic.
fn complete_basis(existing: &[Vec<f64>], m: usize) -> Vec<f64> {
    for k in 0..m {
        let mut cand = vec![0.0; m];
        cand[k] = 1.0;
        for col in existing {
            let proj = dot(&cand, col);
            for (c, e) in cand.iter_mut().zip(col) {
                *c -= proj * e;
            }
        }
        let norm = dot(&cand, &cand).sqrt();
        if norm > 0.5 {
            for c in cand.iter_mut() {
                *c /= norm;
            }
            return cand;
        }
    }
    unreachable!("fewer than m orthonormal columns cannot exhaust R^m");
}

/// Mean singular value `s_mu`: the singular values averaged over
/// `min(rows, cols)`, the number of values that exist.
pub fn mean_singular_value(e: &Matrix) -> Result<f64> {
    let s = singular_values(e)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Analytic gradient of [`mean_singular_value`]: `U V^T / min(rows, cols)`.
pub fn grad_mean_singular_value(e: &Matrix) -> Result<MsvGrad> {
    Ok(msv_value_and_grad(e)?.1)
}

/// One SVD shared between the value and its gradient; the training loops use
/// this to avoid decomposing the same batch twice.
pub fn msv_value_and_grad(e: &Matrix) -> Result<(f64, MsvGrad)> {
    let f = svd(e)?;
    let r = f.s.len();
    let value = f.s.iter().sum::<f64>() / r as f64;
    let grad = f.u.matmul(&f.v.transpose())?.scale(1.0 / r as f64);
    let scale = f.s[0].max(f64::MIN_POSITIVE);
    let near_equal = f.s.windows(2).any(|w| (w[0] - w[1]).abs() < 1e-8 * scale);
    let near_zero = f.s[r - 1] < 1e-8 * scale;
    Ok((value, MsvGrad { grad, degenerate: near_equal || near_zero }))
}

/// Bounds `[L, U]` on the mean singular value of a `b x d` matrix with
/// L2-normalized rows (the unit-row assumption is documented, not checked).
///
/// `L = sqrt(b) / min(b, d)` is attained by rank-1 matrices; `U` scales `L`
/// by the nuclear-norm-to-Frobenius factor `sqrt(b d / max(b, d))`.
pub fn sv_bounds(b: usize, d: usize) -> Result<SvBounds> {
    if b == 0 || d == 0 {
        return Err(Error::InvalidInput("sv_bounds needs positive dimensions".into()));
    }
    let (bf, df) = (b as f64, d as f64);
    let divisor = bf.min(df);
    let lower = bf.sqrt() / divisor;
    let upper = (bf * df / bf.max(df)).sqrt() * lower;
    Ok(SvBounds { lower, upper })
}

/// Induced 1- and infinity-norms, Frobenius norm, and nuclear norm.
pub fn matrix_norms(a: &Matrix) -> Result<MatrixNorms> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    let mut col_sums = vec![0.0; a.cols];
    let mut linf: f64 = 0.0;
    for i in 0..a.rows {
        let row = a.row(i);
        let row_sum: f64 = row.iter().map(|v| v.abs()).sum();
        linf = linf.max(row_sum);
        for (cs, v) in col_sums.iter_mut().zip(row) {
            *cs += v.abs();
        }
    }
    let l1 = col_sums.iter().copied().fold(0.0, f64::max);
    let nuclear = singular_values(a)?.iter().sum();
    Ok(MatrixNorms { l1, linf, frobenius: a.frobenius_norm(), nuclear })
}

/// Returns a copy of `a` with every row scaled to unit Euclidean norm.
pub fn l2_normalize_rows(a: &Matrix) -> Result<Matrix> {
    let mut out = a.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::ZeroVector { row: i });
        }
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Rng;
    use crate::selfcheck;

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.next_gaussian()).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    fn assert_svd_invariants(a: &Matrix) {
        let f = svd(a).unwrap();
        let r = a.rows().min(a.cols());
        assert_eq!(f.u.rows(), a.rows());
        assert_eq!(f.u.cols(), r);
        assert_eq!(f.v.rows(), a.cols());
        assert_eq!(f.s.len(), r);
        for w in f.s.windows(2) {
            assert!(w[0] >= w[1], "singular values not descending: {:?}", f.s);
        }
        assert!(f.s[r - 1] >= 0.0);

        let utu = f.u.transpose().matmul(&f.u).unwrap();
        let vtv = f.v.transpose().matmul(&f.v).unwrap();
        let eye = Matrix::identity(r);
        assert!(utu.sub(&eye).unwrap().frobenius_norm() <= 1e-9, "U^T U != I");
        assert!(vtv.sub(&eye).unwrap().frobenius_norm() <= 1e-9, "V^T V != I");

        let mut us = f.u.clone();
        for i in 0..us.rows() {
            for j in 0..r {
                let v = us.get(i, j) * f.s[j];
                us.set(i, j, v);
            }
        }
        let recon = us.matmul(&f.v.transpose()).unwrap();
        let err = recon.sub(a).unwrap().frobenius_norm();
        assert!(
            err <= 1e-9 * a.frobenius_norm().max(1.0),
            "reconstruction error {err}"
        );
    }

    #[test]
    fn svd_identity() {
        let f = svd(&Matrix::identity(2)).unwrap();
        assert!((f.s[0] - 1.0).abs() < 1e-12);
        assert!((f.s[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svd_permuted_diagonal() {
        let a = Matrix::from_rows(&[vec![0.0, 3.0], vec![2.0, 0.0]]).unwrap();
        let f = svd(&a).unwrap();
        assert!((f.s[0] - 3.0).abs() < 1e-12);
        assert!((f.s[1] - 2.0).abs() < 1e-12);
        assert_svd_invariants(&a);
    }

    #[test]
    fn svd_matches_gram_eigensolver() {
        let mut rng = Rng::new(42);
        let a = random_matrix(64, 16, &mut rng);
        let s = singular_values(&a).unwrap();
        let oracle = selfcheck::singular_values_via_gram(&a);
        for (x, o) in s.iter().zip(&oracle) {
            assert!((x - o).abs() <= 1e-8 * o.max(1.0), "{x} vs oracle {o}");
        }
    }

    #[test]
    fn svd_invariants_across_shapes() {
        let mut rng = Rng::new(7);
        for &(r, c) in &[(1, 1), (5, 3), (3, 5), (16, 8), (8, 16), (40, 40)] {
            let a = random_matrix(r, c, &mut rng);
            assert_svd_invariants(&a);
        }
    }

    #[test]
    fn svd_rank_deficient_keeps_orthonormal_factors() {
        // Every row equals (1, 0): rank one, second singular value zero.
        let a = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
        ])
        .unwrap();
        let f = svd(&a).unwrap();
        assert!((f.s[0] - 2.0).abs() < 1e-12);
        assert!(f.s[1].abs() < 1e-12);
        assert_svd_invariants(&a);
    }

    #[test]
    fn svd_zero_matrix() {
        let a = Matrix::zeros(3, 2);
        assert_svd_invariants(&a);
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut a = Matrix::zeros(2, 2);
        a.data_mut()[0] = f64::NAN;
        assert!(matches!(svd(&a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn svd_deterministic() {
        let mut rng = Rng::new(3);
        let a = random_matrix(12, 7, &mut rng);
        let f1 = svd(&a).unwrap();
        let f2 = svd(&a).unwrap();
        assert_eq!(f1.s, f2.s);
        assert_eq!(f1.u, f2.u);
        assert_eq!(f1.v, f2.v);
    }

    #[test]
    fn msv_rank_one_attains_lower_bound() {
        let a = Matrix::from_rows(&vec![vec![1.0, 0.0]; 4]).unwrap();
        let s_mu = mean_singular_value(&a).unwrap();
        let bounds = sv_bounds(4, 2).unwrap();
        assert!((s_mu - 1.0).abs() < 1e-12);
        assert!((s_mu - bounds.lower).abs() < 1e-9);
    }

    #[test]
    fn msv_identity_attains_upper_bound() {
        let s_mu = mean_singular_value(&Matrix::identity(2)).unwrap();
        let bounds = sv_bounds(2, 2).unwrap();
        assert!((s_mu - 1.0).abs() < 1e-12);
        assert!((s_mu - bounds.upper).abs() < 1e-9);
    }

    #[test]
    fn msv_matches_oracle_on_unit_rows() {
        let mut rng = Rng::new(11);
        let a = l2_normalize_rows(&random_matrix(144, 128, &mut rng)).unwrap();
        let s_mu = mean_singular_value(&a).unwrap();
        let oracle = selfcheck::singular_values_via_gram(&a);
        let expected = oracle.iter().sum::<f64>() / 128.0;
        assert!((s_mu - expected).abs() <= 1e-8 * expected);
    }

    #[test]
    fn msv_divisor_is_min_dimension() {
        // 2x4 with orthogonal unit rows: singular values [1, 1], divisor 2.
        let a = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
        ])
        .unwrap();
        assert!((mean_singular_value(&a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grad_identity() {
        let g = grad_mean_singular_value(&Matrix::identity(2)).unwrap();
        let expected = Matrix::identity(2).scale(0.5);
        assert!(g.grad.max_abs_diff(&expected) < 1e-12);
        assert!(g.degenerate, "equal singular values should be flagged");
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let a = random_matrix(16, 8, &mut rng);
        let g = grad_mean_singular_value(&a).unwrap();
        assert!(!g.degenerate);
        let fd = selfcheck::grad_msv_fd(&a, 1e-5);
        let rel = g.grad.sub(&fd).unwrap().frobenius_norm() / fd.frobenius_norm();
        assert!(rel <= 1e-5, "gradient mismatch: rel err {rel}");
    }

    #[test]
    fn grad_rank_deficient_after_perturbation() {
        let mut rng = Rng::new(9);
        let mut a = Matrix::from_rows(&vec![vec![1.0, 0.0]; 4]).unwrap();
        for v in a.data_mut() {
            *v += 1e-6 * rng.next_gaussian();
        }
        let g = grad_mean_singular_value(&a).unwrap();
        let fd = selfcheck::grad_msv_fd(&a, 1e-7);
        // Column 0 entries sit near 1/(2*2); the tiny spectrum gap limits
        // finite-difference agreement, so compare loosely.
        for i in 0..4 {
            assert!((g.grad.get(i, 0) - 0.25).abs() < 1e-3);
            assert!((g.grad.get(i, 0) - fd.get(i, 0)).abs() < 1e-3);
        }
    }

    #[test]
    fn bounds_square_512() {
        let b = sv_bounds(512, 512).unwrap();
        assert!((b.lower - 0.0442).abs() < 1e-3);
        assert!((b.upper - 1.0).abs() < 1e-3);
    }

    #[test]
    fn bounds_cub_test_split() {
        let b = sv_bounds(5924, 128).unwrap();
        assert!((b.upper - 6.803).abs() < 5e-3);
    }

    #[test]
    fn bounds_derived_shapes() {
        let b = sv_bounds(144, 128).unwrap();
        assert!((b.lower - 0.09375).abs() < 1e-5);
        assert!((b.upper - 1.06066).abs() < 1e-5);

        let small = sv_bounds(72, 128).unwrap();
        assert!((small.lower - 0.11785).abs() < 1e-5);
        assert!((small.upper - 1.0).abs() < 1e-5);
    }

    #[test]
    fn bounds_reject_zero() {
        assert!(sv_bounds(0, 4).is_err());
        assert!(sv_bounds(4, 0).is_err());
    }

    #[test]
    fn norms_rank_one() {
        let a = Matrix::from_rows(&vec![vec![1.0, 0.0]; 4]).unwrap();
        let n = matrix_norms(&a).unwrap();
        assert_eq!(n.l1, 4.0);
        assert_eq!(n.linf, 1.0);
        assert!((n.frobenius - 2.0).abs() < 1e-12);
        assert!((n.nuclear - 2.0).abs() < 1e-12);
    }

    #[test]
    fn norms_identity() {
        let n = matrix_norms(&Matrix::identity(2)).unwrap();
        assert_eq!(n.l1, 1.0);
        assert_eq!(n.linf, 1.0);
        assert!((n.frobenius - 2.0_f64.sqrt()).abs() < 1e-12);
        assert!((n.nuclear - 2.0).abs() < 1e-12);
    }

    #[test]
    fn norms_satisfy_bounding_inequalities() {
        let mut rng = Rng::new(21);
        let a = random_matrix(10, 4, &mut rng);
        let n = matrix_norms(&a).unwrap();
        let oracle: f64 = selfcheck::singular_values_via_gram(&a).iter().sum();
        assert!((n.nuclear - oracle).abs() <= 1e-8 * oracle);
        // Nuclear-to-Frobenius bound and the Horn bound on s_1.
        let factor = (10.0_f64 * 4.0 / 10.0).sqrt();
        assert!(n.nuclear <= factor * n.frobenius + 1e-12);
        let s1 = singular_values(&a).unwrap()[0];
        assert!(s1 <= (n.l1 * n.linf).sqrt() + 1e-12);
    }

    #[test]
    fn normalize_rows_basic() {
        let a = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let n = l2_normalize_rows(&a).unwrap();
        assert!((n.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((n.get(0, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_rows_idempotent() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.6, 0.8]]).unwrap();
        let once = l2_normalize_rows(&a).unwrap();
        assert!(once.max_abs_diff(&a) < 1e-15);
    }

    #[test]
    fn normalize_rows_rejects_zero_row() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(l2_normalize_rows(&a), Err(Error::ZeroVector { row: 1 })));
    }

    #[test]
    fn normalize_rows_random() {
        let mut rng = Rng::new(33);
        let a = random_matrix(20, 6, &mut rng);
        let n = l2_normalize_rows(&a).unwrap();
        for i in 0..20 {
            let norm: f64 = n.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = Rng::new(17);
        let a = random_matrix(9, 5, &mut rng);
        let s = singular_values(&a).unwrap();
        for &c in &[0.5, 2.0, 13.7] {
            let sc = singular_values(&a.scale(c)).unwrap();
            for (x, y) in s.iter().zip(&sc) {
                assert!((c * x - y).abs() <= 1e-12 * c * x.max(1.0));
            }
        }
    }
}
