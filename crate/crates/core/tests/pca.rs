use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wordspot_core::subspace::{compute_covariance, eigendecompose, select_dimension, SquareMatrix};
use wordspot_core::{fit_pca, PcaError, Retention};

/// Correlated samples `x = A z + b` with `A` diagonally dominant, so the
/// covariance stays well conditioned.
fn samples(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| if i == j { 1.0 + i as f64 * 0.3 } else { rng.random_range(-0.2..0.2) })
                .collect()
        })
        .collect();
    let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            (0..dim).map(|i| b[i] + (0..dim).map(|j| a[i][j] * z[j]).sum::<f64>()).collect()
        })
        .collect()
}

fn random_symmetric(rng: &mut impl Rng, n: usize) -> SquareMatrix {
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-5.0..5.0);
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    m
}

fn check_decomposition(r: &SquareMatrix) {
    let n = r.n();
    let eig = eigendecompose(r).unwrap();
    let lead = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let v: f64 = (0..n).map(|k| eig.vectors[k][i] * eig.values[k] * eig.vectors[k][j]).sum();
            worst = worst.max((v - r.get(i, j)).abs());
        }
    }
    assert!(worst <= 1e-8 * lead.max(1.0), "reconstruction off by {worst}");

    let trace: f64 = eig.values.iter().sum();
    assert!((trace - r.trace()).abs() <= 1e-8 * r.trace().abs().max(1.0));
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = eig.vectors[i].iter().zip(&eig.vectors[j]).map(|(a, b)| a * b).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((dot - target).abs() <= 1e-9);
        }
    }
    assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));

    let dm = DMatrix::from_fn(n, n, |i, j| r.get(i, j));
    let mut reference: Vec<f64> = nalgebra::SymmetricEigen::new(dm).eigenvalues.iter().copied().collect();
    reference.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for (a, b) in eig.values.iter().zip(&reference) {
        assert!((a - b).abs() <= 1e-8 * lead.max(1.0));
    }
}

#[test]
fn eigendecomposition_reconstructs_random_symmetric_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [1, 2, 3, 5, 8, 13, 30] {
        for _ in 0..5 {
            check_decomposition(&random_symmetric(&mut rng, n));
        }
    }
}

#[test]
fn eigendecomposition_of_descriptor_sized_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xs: Vec<Vec<f64>> = (0..400).map(|_| (0..93).map(|_| rng.random::<f64>().powi(3)).collect()).collect();
    let (_, cov) = compute_covariance(&xs).unwrap();
    check_decomposition(&cov);
}

#[test]
fn hand_cases() {
    let ones = SquareMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
    let eig = eigendecompose(&ones).unwrap();
    assert!((eig.values[0] - 2.0).abs() < 1e-12 && eig.values[1].abs() < 1e-12);
    let s = 0.5f64.sqrt();
    assert!((eig.vectors[0][0] - s).abs() < 1e-12 && (eig.vectors[0][1] - s).abs() < 1e-12);

    let m = SquareMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
    let eig = eigendecompose(&m).unwrap();
    assert!((eig.values[0] - 3.0).abs() < 1e-12 && (eig.values[1] - 1.0).abs() < 1e-12);

    let diag = SquareMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 5.0, 0.0], vec![0.0, 0.0, 3.0]]).unwrap();
    assert_eq!(eigendecompose(&diag).unwrap().values, vec![5.0, 3.0, 1.0]);

    let asym = SquareMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
    assert!(matches!(eigendecompose(&asym), Err(PcaError::Symmetry { .. })));
}

#[test]
fn whitened_distance_equals_explicit_inverse_mahalanobis() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for dim in 4..=10 {
        let xs = samples(&mut rng, 300, dim);
        let model = fit_pca(&xs, Retention::Fixed(dim), true).unwrap();

        let n = xs.len() as f64;
        let mean = xs.iter().fold(DVector::zeros(dim), |acc, x| acc + DVector::from_column_slice(x)) / n;
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for x in &xs {
            let c = DVector::from_column_slice(x) - &mean;
            cov += &c * c.transpose();
        }
        cov /= n;
        let inv = cov.try_inverse().expect("well conditioned");

        for _ in 0..20 {
            let a = &xs[rng.random_range(0..xs.len())];
            let b = &xs[rng.random_range(0..xs.len())];
            let d = DVector::from_column_slice(a) - DVector::from_column_slice(b);
            let want = (d.transpose() * &inv * &d)[(0, 0)].sqrt();
            let got = model.whitened_distance(a, b).unwrap();
            assert!((got - want).abs() <= 1e-6 * want.max(1e-12), "dim {dim}: {got} vs {want}");
        }
    }
}

#[test]
fn tail_eigenvalue_sum_equals_empirical_reconstruction_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (n, dim) in [(200, 6), (150, 12), (500, 20)] {
        let xs = samples(&mut rng, n, dim);
        for whiten in [false, true] {
            let mut previous = f64::INFINITY;
            for m in 1..=dim {
                let model = fit_pca(&xs, Retention::Fixed(m), whiten).unwrap();
                let je = model.reconstruction_error();
                let empirical = xs
                    .iter()
                    .map(|x| {
                        let back = model.reconstruct(&model.project(x).unwrap()).unwrap();
                        x.iter().zip(&back).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                    })
                    .sum::<f64>()
                    / xs.len() as f64;
                let total: f64 = model.eigenvalues().iter().sum();
                assert!(
                    (je - empirical).abs() <= 1e-8 * je.max(1e-12 * total),
                    "m={m}: J_e {je} vs {empirical}"
                );
                assert!(je <= previous);
                previous = je;
            }
        }
    }
}

#[test]
fn variance_retention_picks_the_smallest_sufficient_dimension() {
    let spectrum = [4.0, 3.0, 2.0, 1.0];
    assert_eq!(select_dimension(&spectrum, Retention::Variance(0.4)).unwrap(), 1);
    assert_eq!(select_dimension(&spectrum, Retention::Variance(0.7)).unwrap(), 2);
    assert_eq!(select_dimension(&spectrum, Retention::Variance(0.71)).unwrap(), 3);
    assert_eq!(select_dimension(&spectrum, Retention::Variance(1.0)).unwrap(), 4);
    assert_eq!(select_dimension(&spectrum, Retention::Fixed(2)).unwrap(), 2);
    assert!(select_dimension(&spectrum, Retention::Fixed(5)).is_err());
    assert!(matches!(select_dimension(&[0.0, 0.0], Retention::Fixed(1)), Err(PcaError::DegenerateSpectrum)));
}

#[test]
fn rank_deficient_data_caps_the_dimension() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Points on a plane inside 5 dimensions.
    let xs: Vec<Vec<f64>> = (0..100)
        .map(|_| {
            let (u, v) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            vec![u, v, u + v, u - v, 2.0 * u]
        })
        .collect();
    let model = fit_pca(&xs, Retention::Variance(1.0), true).unwrap();
    assert_eq!(model.dim(), 2);
    assert!(model.orthonormality_error() <= 1e-9);
}
