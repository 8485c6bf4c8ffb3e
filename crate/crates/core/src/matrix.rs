//! Dense real-matrix analysis: generalized inverses, the matrix index,
//! spectral classification and the matrix-class predicates (Z-, M-, RPN,
//! splittings) that the convergence conditions are phrased in.
//!
//! Every rank and kernel decision goes through [`threshold`], so the whole
//! crate agrees on what "zero" means.

use std::collections::BTreeSet;

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tolerance::{EIG_CLUSTER, MARGINAL, NONNEG, RANK_ATOL, RANK_RTOL, UNIT_CIRCLE};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Builds a matrix from rows, rejecting ragged input and non-finite entries.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::Dimension(format!(
                "row {i} has {} entries, expected {ncols}",
                row.len()
            )));
        }
    }
    let m = Mat::from_fn(nrows, ncols, |i, j| rows[i][j]);
    ensure_finite(&m)?;
    Ok(m)
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn ensure_finite(m: &Mat) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

pub fn ensure_square(m: &Mat) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

/// `[a | b]`.
pub fn hstack(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.nrows(), b.nrows(), "hstack row mismatch");
    let mut out = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// `[a ; b]`.
pub fn vstack(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.ncols(), b.ncols(), "vstack column mismatch");
    let mut out = Mat::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

pub fn power(a: &Mat, k: usize) -> Mat {
    let mut out = Mat::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = &out * a;
    }
    out
}

/// Largest absolute entry.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// `m = U diag(s) Vᴴ` with `s` descending; `U` is `rows x k`, `V` is `cols x k`,
/// `k = min(rows, cols)`. Columns of `U` for zero singular values are zero.
#[derive(Debug, Clone)]
pub struct Svd<T: ComplexField<RealField = f64>> {
    pub u: DMatrix<T>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<T>,
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// nalgebra's bidiagonal SVD returns factorizations that are off by 1e-4 on
/// some benign 4x4 and 8x8 matrices, which silently corrupts rank decisions.
/// Jacobi is slower but accurate, and these matrices are small.
pub fn svd<T: ComplexField<RealField = f64>>(m: &DMatrix<T>) -> Svd<T> {
    let (rows, cols) = m.shape();
    if rows < cols {
        let t = svd(&m.adjoint());
        return Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        };
    }
    let mut a = m.clone();
    let mut v = DMatrix::<T>::identity(cols, cols);
    for _ in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dotc(&a.column(q));
                let g = gamma.clone().modulus();
                if g == 0.0 || g <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // Rotate column q by a phase so the inner product is real.
                let z = gamma.conjugate().unscale(g);
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut v] {
                    for i in 0..mat.nrows() {
                        let xp = mat[(i, p)].clone();
                        let xq = mat[(i, q)].clone() * z.clone();
                        mat[(i, p)] = xp.clone().scale(c) - xq.clone().scale(s);
                        mat[(i, q)] = xp.scale(s) + xq.scale(c);
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..cols).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let u = DMatrix::from_fn(rows, cols, |i, k| {
        let j = order[k];
        if norms[j] > 0.0 {
            a[(i, j)].clone().unscale(norms[j])
        } else {
            T::zero()
        }
    });
    let v = DMatrix::from_fn(cols, cols, |i, k| v[(i, order[k])].clone());
    Svd {
        u,
        singular_values: order.iter().map(|&j| norms[j]).collect(),
        v,
    }
}

fn singular_values<T: ComplexField<RealField = f64>>(m: &DMatrix<T>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    svd(m).singular_values
}

pub fn sigma_max(m: &Mat) -> f64 {
    singular_values(m).into_iter().fold(0.0, f64::max)
}

/// Smallest singular value treated as nonzero for a matrix of scale `scale`.
pub fn threshold(scale: f64) -> f64 {
    (RANK_RTOL * scale).max(RANK_ATOL)
}

fn rank_scaled<T: ComplexField<RealField = f64>>(m: &DMatrix<T>, scale: Option<f64>) -> usize {
    let sv = singular_values(m);
    let smax = scale.unwrap_or_else(|| sv.iter().copied().fold(0.0, f64::max));
    let thr = threshold(smax);
    sv.iter().filter(|&&s| s > thr).count()
}

pub fn rank(m: &Mat) -> usize {
    rank_scaled(m, None)
}

fn null_space_scaled<T: ComplexField<RealField = f64>>(m: &DMatrix<T>, scale: f64) -> DMatrix<T> {
    let n = m.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Thin SVD of a wide matrix drops right singular vectors; pad to square.
    let padded = if m.nrows() < n {
        let mut p = DMatrix::<T>::zeros(n, n);
        p.rows_mut(0, m.nrows()).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = svd(&padded);
    let thr = threshold(scale);
    let cols: Vec<DVector<T>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= thr)
        .map(|(i, _)| svd.v.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis of `ker(m)` as columns (`ncols x k`).
pub fn null_space(m: &Mat) -> Mat {
    null_space_scaled(m, sigma_max(m))
}

fn column_space_truncated(m: &Mat, scale: f64, max_dim: Option<usize>) -> Mat {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Mat::zeros(m.nrows(), 0);
    }
    let svd = svd(m);
    let thr = threshold(scale);
    let mut idx: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > thr)
        .collect();
    if let Some(k) = max_dim {
        idx.truncate(k);
    }
    let cols: Vec<Vector> = idx.iter().map(|&i| svd.u.column(i).into_owned()).collect();
    if cols.is_empty() {
        Mat::zeros(m.nrows(), 0)
    } else {
        Mat::from_columns(&cols)
    }
}

/// Orthonormal basis of `col(m)` as columns.
pub fn column_space(m: &Mat) -> Mat {
    column_space_truncated(m, sigma_max(m), None)
}

/// `m / sigma_max(m)`, so stacked rank tests are not dominated by the larger block.
fn unit_scale(m: &Mat) -> Mat {
    let s = sigma_max(m);
    if s > 0.0 {
        m / s
    } else {
        m.clone()
    }
}

/// `col(a) == col(b)` by `rank(a) = rank(b) = rank([a|b])`.
pub fn same_column_space(a: &Mat, b: &Mat) -> bool {
    let ra = rank(a);
    ra == rank(b) && ra == rank(&hstack(&unit_scale(a), &unit_scale(b)))
}

/// `ker(a) == ker(b)` by comparing row spaces.
pub fn same_kernel(a: &Mat, b: &Mat) -> bool {
    let ra = rank(a);
    ra == rank(b) && ra == rank(&vstack(&unit_scale(a), &unit_scale(b)))
}

/// `col(sub) ⊆ col(sup)`.
pub fn column_space_contained(sub: &Mat, sup: &Mat) -> bool {
    rank(&hstack(&unit_scale(sup), &unit_scale(sub))) == rank(sup)
}

/// Moore–Penrose pseudoinverse via SVD, truncated at the shared rank threshold.
pub fn pseudoinverse(a: &Mat) -> Mat {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Mat::zeros(n, m);
    }
    let svd = svd(a);
    let thr = threshold(svd.singular_values.first().copied().unwrap_or(0.0));
    let mut out = Mat::zeros(n, m);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > thr {
            out += (svd.v.column(i) * svd.u.column(i).transpose()) / s;
        }
    }
    out
}

/// Walks `ker(A) ⊆ ker(A^2) ⊆ ...` without forming powers.
///
/// `ker(A^{k+1}) = ker((I - Q_k Q_k^H) A)` where `Q_k` is an orthonormal basis
/// of `ker(A^k)`; every rank test is scaled by `sigma_max(A)` so small
/// eigenvalues do not vanish the way they would in `A^k`. Returns the kernel
/// dimensions `[0, dim ker A, dim ker A^2, ...]` up to the first repeat, the
/// index (first `k` with `dim ker A^k = dim ker A^{k+1}`) and a basis of
/// `ker(A^index)`.
struct KernelChain<T: ComplexField<RealField = f64>> {
    dims: Vec<usize>,
    index: usize,
    basis: DMatrix<T>,
}

fn kernel_chain<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> KernelChain<T> {
    let n = a.nrows();
    let scale = singular_values(a).into_iter().fold(0.0, f64::max);
    let mut dims = vec![0usize];
    let mut basis = DMatrix::<T>::zeros(n, 0);
    loop {
        let projected = if basis.ncols() == 0 {
            a.clone()
        } else {
            a - &basis * (basis.adjoint() * a)
        };
        let next = null_space_scaled(&projected, scale);
        let prev = *dims.last().expect("nonempty");
        if next.ncols() <= prev || prev == n {
            let index = dims.len() - 1;
            return KernelChain { dims, index, basis };
        }
        dims.push(next.ncols());
        basis = next;
    }
}

/// Smallest `k >= 0` with `rank(A^k) = rank(A^{k+1})`; 0 exactly for nonsingular `a`.
pub fn matrix_index(a: &Mat) -> Result<usize> {
    ensure_square(a)?;
    Ok(kernel_chain(a).index)
}

/// Algebraic multiplicity of the eigenvalue 0, i.e. `dim ker(A^n)`.
pub fn zero_multiplicity(a: &Mat) -> Result<usize> {
    ensure_square(a)?;
    Ok(kernel_chain(a).basis.ncols())
}

/// Drazin inverse by core–nilpotent decomposition.
///
/// With `k = ind(A)`, `R^n = col(A^k) ⊕ ker(A^k)`. Taking orthonormal bases `U`
/// and `W` of the two pieces, `A U = U C` with `C = U^T A U` invertible, and
/// `A^D = [U W] diag(C^{-1}, 0) [U W]^{-1}`.
pub fn drazin_inverse(a: &Mat) -> Result<Mat> {
    let n = ensure_square(a)?;
    let chain = kernel_chain(a);
    if chain.index == 0 {
        return a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Diagnostic("rank says nonsingular but LU failed".into()));
    }
    let scale = sigma_max(a);
    let mut range = Mat::identity(n, n);
    for &dim in &chain.dims[1..] {
        range = column_space_truncated(&(a * &range), scale, Some(n - dim));
    }
    let r = range.ncols();
    if r + chain.basis.ncols() != n {
        return Err(Error::Diagnostic(format!(
            "core-nilpotent split has dims {r} + {} != {n}",
            chain.basis.ncols()
        )));
    }
    if r == 0 {
        return Ok(Mat::zeros(n, n));
    }
    let core = range.transpose() * a * &range;
    let core_inv = core
        .try_inverse()
        .ok_or_else(|| Error::Diagnostic("core block is singular".into()))?;
    let s = hstack(&range, &chain.basis);
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Diagnostic("range and kernel are not complementary".into()))?;
    Ok(&range * core_inv * s_inv.rows(0, r))
}

/// Eigenvalues of a square real matrix via the real Schur form.
pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex64>> {
    let n = ensure_square(a)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    // Deflating at machine epsilon can stall on benign matrices; relax a
    // little, and only accept a factorization that reproduces `a`.
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    let schur = [1.0, 4.0, 16.0, 64.0, 256.0]
        .into_iter()
        .filter_map(|k| a.clone().try_schur(k * f64::EPSILON, 100_000))
        .find(|s| {
            let (q, t) = s.clone().unpack();
            max_abs(&(&q * t * q.transpose() - a)) <= 1e-11 * scale
        })
        .ok_or_else(|| Error::NoConvergence("Schur decomposition".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect())
}

pub fn spectral_radius(a: &Mat) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Spectral classification of one square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub eigenvalues: Vec<Complex64>,
    pub spectral_radius: f64,
    /// Matrix index, 0 for nonsingular.
    pub index: usize,
    pub unit_circle_eigs: Vec<Complex64>,
    pub semiconvergent: bool,
    pub positive_stable: bool,
    pub positive_semi_stable: bool,
    pub nonnegative_stable: bool,
    pub zero_eig_semisimple: bool,
    /// Algebraic multiplicity of 0, from the rank chain.
    pub zero_multiplicity: usize,
    /// Algebraic multiplicity of 1, from the rank chain of `A - I`.
    pub one_multiplicity: usize,
    /// Largest modulus once the eigenvalue 1 (with its multiplicity) is removed.
    pub radius_without_one: f64,
    /// A non-unit eigenvalue sits within `MARGINAL` of the unit circle.
    pub marginal_unit_circle: bool,
    /// A nonzero eigenvalue has real part within `MARGINAL` of zero.
    pub marginal_imaginary_axis: bool,
}

/// Drops the `count` entries closest to `target`.
fn remove_closest(eigs: &[Complex64], target: Complex64, count: usize) -> Vec<Complex64> {
    let mut order: Vec<usize> = (0..eigs.len()).collect();
    order.sort_by(|&i, &j| (eigs[i] - target).norm().total_cmp(&(eigs[j] - target).norm()));
    let dropped: BTreeSet<usize> = order.into_iter().take(count).collect();
    eigs.iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, z)| *z)
        .collect()
}

pub fn spectral_report(a: &Mat) -> Result<SpectralReport> {
    let n = ensure_square(a)?;
    let eigs = eigenvalues(a)?;
    let spectral_radius = eigs.iter().map(|z| z.norm()).fold(0.0, f64::max);

    let zero_chain = kernel_chain(a);
    let zero_multiplicity = zero_chain.basis.ncols();
    let nonzero = remove_closest(&eigs, Complex64::new(0.0, 0.0), zero_multiplicity);
    let positive_semi_stable = nonzero.iter().all(|z| z.re > 0.0);
    let positive_stable = zero_multiplicity == 0 && positive_semi_stable;
    let nonnegative_stable = nonzero.iter().all(|z| z.re >= -NONNEG);
    let marginal_imaginary_axis = nonzero.iter().any(|z| z.re.abs() < MARGINAL);

    let shifted = a - Mat::identity(n, n);
    let one_chain = kernel_chain(&shifted);
    let one_multiplicity = one_chain.basis.ncols();
    let one_semisimple = one_chain.index <= 1;
    let rest = remove_closest(&eigs, Complex64::new(1.0, 0.0), one_multiplicity);
    let radius_without_one = rest.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let semiconvergent =
        radius_without_one < 1.0 - UNIT_CIRCLE && (one_multiplicity == 0 || one_semisimple);
    let marginal_unit_circle = rest.iter().any(|z| (z.norm() - 1.0).abs() < MARGINAL);

    let unit_circle_eigs = eigs
        .iter()
        .copied()
        .filter(|z| (z.norm() - 1.0).abs() <= UNIT_CIRCLE)
        .collect();

    Ok(SpectralReport {
        eigenvalues: eigs,
        spectral_radius,
        index: zero_chain.index,
        unit_circle_eigs,
        semiconvergent,
        positive_stable,
        positive_semi_stable,
        nonnegative_stable,
        zero_eig_semisimple: zero_chain.index <= 1,
        zero_multiplicity,
        one_multiplicity,
        radius_without_one,
        marginal_unit_circle,
        marginal_imaginary_axis,
    })
}

impl SpectralReport {
    /// Eigenvalues with the `zero_multiplicity` ones nearest the origin removed.
    pub fn nonzero_eigenvalues(&self) -> Vec<Complex64> {
        remove_closest(&self.eigenvalues, Complex64::new(0.0, 0.0), self.zero_multiplicity)
    }

    pub fn is_nonsingular(&self) -> bool {
        self.zero_multiplicity == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityRecord {
    pub eigenvalue: Complex64,
    pub algebraic: usize,
    pub geometric: usize,
    pub semisimple: bool,
}

/// Algebraic and geometric multiplicity of the eigenvalue nearest `lambda`.
///
/// `lambda` is snapped to the centre of the cluster of computed eigenvalues
/// around it. The geometric multiplicity is `n - rank(A - λI)`; the algebraic
/// multiplicity is `dim ker((A - λI)^n)` from the rank chain, which agrees with
/// the clustered count when the cluster is resolved and stays correct when a
/// defective eigenvalue splits numerically.
pub fn eig_multiplicity(a: &Mat, lambda: Complex64) -> Result<MultiplicityRecord> {
    let n = ensure_square(a)?;
    let eigs = eigenvalues(a)?;
    let nearest = eigs
        .iter()
        .copied()
        .min_by(|x, y| (x - lambda).norm().total_cmp(&(y - lambda).norm()))
        .ok_or(Error::NotAnEigenvalue(lambda))?;
    if (nearest - lambda).norm() > MARGINAL * lambda.norm().max(1.0) {
        return Err(Error::NotAnEigenvalue(lambda));
    }
    // Single-linkage cluster around the nearest computed eigenvalue.
    let mut members = vec![nearest];
    let mut grew = true;
    while grew {
        grew = false;
        for z in &eigs {
            let close = members.iter().any(|m| (m - z).norm() <= EIG_CLUSTER);
            let already = members.iter().any(|m| (m - z).norm() == 0.0);
            if close && !already {
                members.push(*z);
                grew = true;
            }
        }
    }
    let centre = members.iter().sum::<Complex64>() / members.len() as f64;

    let shifted = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
        let diag = if i == j { centre } else { Complex64::new(0.0, 0.0) };
        Complex64::new(a[(i, j)], 0.0) - diag
    });
    let scale = sigma_max(a).max(centre.norm());
    let geometric = n - rank_scaled(&shifted, Some(scale));
    if geometric == 0 {
        return Err(Error::Diagnostic(format!(
            "A - ({centre})I is numerically nonsingular"
        )));
    }
    let algebraic = kernel_chain(&shifted).basis.ncols().max(geometric);
    Ok(MultiplicityRecord {
        eigenvalue: centre,
        algebraic,
        geometric,
        semisimple: algebraic == geometric,
    })
}

/// All entries `>= -NONNEG`.
pub fn is_nonnegative(m: &Mat) -> bool {
    m.iter().all(|&x| x >= -NONNEG)
}

/// Off-diagonal entries `<= NONNEG`.
pub fn is_z_matrix(a: &Mat) -> Result<bool> {
    let n = ensure_square(a)?;
    for i in 0..n {
        for j in 0..n {
            if i != j && a[(i, j)] > NONNEG {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Z-matrix, nonsingular and inverse-nonnegative.
pub fn is_nonsingular_m_matrix(a: &Mat) -> Result<bool> {
    let n = ensure_square(a)?;
    if !is_z_matrix(a)? || rank(a) < n {
        return Ok(false);
    }
    Ok(a.clone().try_inverse().is_some_and(|inv| is_nonnegative(&inv)))
}

/// Z-matrix whose eigenvalues all have nonnegative real part (possibly singular).
pub fn is_m_matrix(a: &Mat) -> Result<bool> {
    if !is_z_matrix(a)? {
        return Ok(false);
    }
    Ok(eigenvalues(a)?.iter().all(|z| z.re >= -NONNEG))
}

/// Range-perpendicular-to-nullspace: `col(A) = col(A^T)`.
pub fn is_rpn(a: &Mat) -> Result<bool> {
    ensure_square(a)?;
    Ok(rank(&hstack(a, &a.transpose())) == rank(a))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplittingKind {
    Regular,
    WeakRegular,
    Proper,
}

/// Classifies `A = M - N`. An empty set means the splitting has none of the properties.
pub fn splitting_classify(a: &Mat, m: &Mat, n: &Mat) -> Result<BTreeSet<SplittingKind>> {
    let dim = ensure_square(a)?;
    if m.shape() != (dim, dim) || n.shape() != (dim, dim) {
        return Err(Error::Dimension(format!(
            "A is {dim}x{dim}, M is {:?}, N is {:?}",
            m.shape(),
            n.shape()
        )));
    }
    let scale = max_abs(a).max(max_abs(m)).max(max_abs(n)).max(1.0);
    if max_abs(&(a - (m - n))) > 1e-10 * scale {
        return Err(Error::Precondition("A != M - N".into()));
    }
    let mut kinds = BTreeSet::new();
    if rank(m) == dim {
        if let Some(m_inv) = m.clone().try_inverse() {
            if is_nonnegative(&m_inv) {
                if is_nonnegative(n) {
                    kinds.insert(SplittingKind::Regular);
                }
                if is_nonnegative(&(&m_inv * n)) {
                    kinds.insert(SplittingKind::WeakRegular);
                }
            }
        }
    }
    if same_column_space(a, m) && same_kernel(a, m) {
        kinds.insert(SplittingKind::Proper);
    }
    Ok(kinds)
}
