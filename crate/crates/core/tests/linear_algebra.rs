use nalgebra::{DMatrix, QR};
use num_complex::Complex64;
use precond_ope::matrix::{
    drazin_inverse, eigenvalues, is_rpn, matrix_index, max_abs, power, pseudoinverse, rank, spectral_report, svd,
    Mat,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Mat {
    QR::new(gaussian(n, n, rng)).q()
}

/// Well-conditioned invertible matrix: orthogonal times a diagonal in [1, 3).
fn conditioned(n: usize, rng: &mut ChaCha8Rng) -> Mat {
    let diag = Mat::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| rng.random_range(1.0..3.0)));
    orthogonal(n, rng) * diag * orthogonal(n, rng)
}

fn block_diag(a: &Mat, b: &Mat) -> Mat {
    let n = a.nrows() + b.nrows();
    let mut out = Mat::zeros(n, n);
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut(a.shape(), b.shape()).copy_from(b);
    out
}

/// Nilpotent block of size `n` made of Jordan chains of length at most `k`;
/// the longest chain has length exactly `k`.
fn nilpotent(n: usize, k: usize) -> Mat {
    let mut out = Mat::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        if (i + 1) % k != 0 {
            out[(i, i + 1)] = 1.0;
        }
    }
    out
}

/// `A = S diag(C, N) S^{-1}` with `C` invertible and `N` nilpotent of index `k`,
/// along with the Drazin inverse `S diag(C^{-1}, 0) S^{-1}` built from the factors.
fn core_nilpotent(r: usize, z: usize, k: usize, rng: &mut ChaCha8Rng) -> (Mat, Mat) {
    let s = conditioned(r + z, rng);
    let s_inv = s.clone().try_inverse().unwrap();
    let c = conditioned(r, rng);
    let c_inv = c.clone().try_inverse().unwrap();
    let a = &s * block_diag(&c, &nilpotent(z, k)) * &s_inv;
    let ad = &s * block_diag(&c_inv, &Mat::zeros(z, z)) * &s_inv;
    (a, ad)
}

fn close(a: &Mat, b: &Mat, tol: f64) -> bool {
    max_abs(&(a - b)) <= tol * max_abs(b).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn svd_reconstructs_real(rows in 1usize..8, cols in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = gaussian(rows, cols, &mut rng);
        let f = svd(&m);
        let k = f.singular_values.len();
        prop_assert_eq!(k, rows.min(cols));
        prop_assert!(f.singular_values.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(f.singular_values.iter().all(|&s| s >= 0.0));
        let sigma = Mat::from_diagonal(&nalgebra::DVector::from_vec(f.singular_values.clone()));
        let back = f.u.columns(0, k) * sigma * f.v.columns(0, k).transpose();
        prop_assert!(close(&back, &m, 1e-12));
        let vtv = f.v.columns(0, k).transpose() * f.v.columns(0, k);
        prop_assert!(close(&vtv, &Mat::identity(k, k), 1e-12));
        let utu = f.u.columns(0, k).transpose() * f.u.columns(0, k);
        prop_assert!(close(&utu, &Mat::identity(k, k), 1e-12));
    }

    #[test]
    fn svd_reconstructs_complex(n in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::<Complex64>::from_fn(n, n, |_, _| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let f = svd(&m);
        let sigma = DMatrix::<Complex64>::from_diagonal(&nalgebra::DVector::from_iterator(
            n,
            f.singular_values.iter().map(|&s| Complex64::new(s, 0.0)),
        ));
        let back = &f.u * sigma * f.v.adjoint();
        let gap = (back - &m).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(gap < 1e-12 * f.singular_values[0].max(1.0));
    }

    #[test]
    fn svd_rank_deficient_singular_values(rows in 2usize..8, cols in 2usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rng.random_range(1..rows.min(cols));
        let m = gaussian(rows, r, &mut rng) * gaussian(r, cols, &mut rng);
        let f = svd(&m);
        let smax = f.singular_values[0];
        prop_assert!(f.singular_values[r - 1] > 1e-8 * smax);
        prop_assert!(f.singular_values[r..].iter().all(|&s| s < 1e-12 * smax));
        prop_assert_eq!(rank(&m), r);
    }

    #[test]
    fn pseudoinverse_penrose_conditions(rows in 1usize..7, cols in 1usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rng.random_range(1..=rows.min(cols));
        let a = gaussian(rows, r, &mut rng) * gaussian(r, cols, &mut rng);
        let x = pseudoinverse(&a);
        prop_assert!(close(&(&a * &x * &a), &a, 1e-9));
        prop_assert!(close(&(&x * &a * &x), &x, 1e-9));
        let ax = &a * &x;
        let xa = &x * &a;
        prop_assert!(close(&ax, &ax.transpose(), 1e-9));
        prop_assert!(close(&xa, &xa.transpose(), 1e-9));
    }

    #[test]
    fn drazin_matches_core_nilpotent_construction(
        r in 0usize..5, z in 1usize..4, k in 1usize..4, seed in any::<u64>()
    ) {
        let k = k.min(z);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, expected) = core_nilpotent(r, z, k, &mut rng);
        prop_assert_eq!(matrix_index(&a).unwrap(), k);
        let ad = drazin_inverse(&a).unwrap();
        prop_assert!(close(&ad, &expected, 1e-8));
        // Defining identities.
        prop_assert!(close(&(&ad * &a * &ad), &ad, 1e-8));
        prop_assert!(close(&(&a * &ad), &(&ad * &a), 1e-8));
        prop_assert!(close(&(power(&a, k + 1) * &ad), &power(&a, k), 1e-8));
    }

    #[test]
    fn index_at_most_one_iff_zero_is_semisimple(r in 0usize..5, z in 1usize..4, k in 1usize..4, seed in any::<u64>()) {
        let k = k.min(z);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, _) = core_nilpotent(r, z, k, &mut rng);
        let report = spectral_report(&a).unwrap();
        prop_assert_eq!(report.zero_multiplicity, z);
        prop_assert_eq!(report.index <= 1, report.zero_eig_semisimple);
        prop_assert_eq!(report.index, k);
    }

    #[test]
    fn spectrum_shifts_with_identity(n in 1usize..8, shift in -5.0f64..5.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(n, n, &mut rng);
        let mut base = eigenvalues(&a).unwrap();
        let shifted = eigenvalues(&(&a + Mat::identity(n, n) * shift)).unwrap();
        prop_assert_eq!(base.len(), n);
        for z in &shifted {
            let target = z - shift;
            let (pos, gap) = base
                .iter()
                .enumerate()
                .map(|(i, w)| (i, (w - target).norm()))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .unwrap();
            prop_assert!(gap < 1e-8 * (1.0 + target.norm()));
            base.remove(pos);
        }
    }

    #[test]
    fn rpn_matrices_have_index_at_most_one(n in 2usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rng.random_range(0..n);
        let q = orthogonal(n, &mut rng);
        let c = conditioned(r, &mut rng);
        let a = &q * block_diag(&c, &Mat::zeros(n - r, n - r)) * q.transpose();
        prop_assert!(is_rpn(&a).unwrap());
        prop_assert!(matrix_index(&a).unwrap() <= 1);
    }

    /// Eigenvalues placed by construction; compare against powers of the matrix.
    #[test]
    fn semiconvergence_agrees_with_powers(n in 2usize..6, case in 0usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lambda: Vec<f64> = (0..n).map(|_| rng.random_range(-0.9..0.9)).collect();
        let mut jordan_at_one = false;
        match case {
            0 => {}
            1 => lambda[0] = 1.0,
            2 => { lambda[0] = 1.0; lambda[1] = 1.0; jordan_at_one = true; }
            3 => lambda[0] = -1.0,
            _ => lambda[0] = 1.05,
        }
        let mut core = Mat::from_diagonal(&nalgebra::DVector::from_vec(lambda));
        if jordan_at_one {
            core[(0, 1)] = 1.0;
        }
        let s = conditioned(n, &mut rng);
        let h = &s * core * s.clone().try_inverse().unwrap();
        let expected = case <= 1;
        let report = spectral_report(&h).unwrap();
        prop_assert_eq!(report.semiconvergent, expected);
        let p1 = power(&h, 1000);
        let p2 = power(&h, 1001);
        let settled = max_abs(&p1).is_finite() && max_abs(&(&p2 - &p1)) < 1e-6 * max_abs(&p1).max(1.0);
        prop_assert_eq!(settled, expected);
    }
}
