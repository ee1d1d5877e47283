use proptest::prelude::*;
use weight_surgery::linalg::{self, Matrix, Vector};
use weight_surgery::seed;
use weight_surgery::simulator::uniform_on_sphere;

fn max_abs(m: &Matrix) -> f64 {
    m.amax()
}

fn perpendicular(x: &Vector, rng: &mut seed::Rng) -> Vector {
    loop {
        let g = uniform_on_sphere(x.len(), rng);
        let w = &g - x * x.dot(&g);
        if w.norm() > 1e-3 {
            return w.normalize();
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_symmetric_idempotent_with_unit_spectrum(dim in 2usize..40, s in any::<u64>()) {
        let x = uniform_on_sphere(dim, &mut seed::rng(s));
        let p = linalg::projection_matrix(&x).unwrap();
        let formula = Matrix::identity(dim, dim) - &x * x.transpose();
        prop_assert!(max_abs(&(&p - formula)) <= 1e-10);
        prop_assert!(max_abs(&(&p * &p - &p)) <= 1e-10);
        let values = linalg::singular_values(&p);
        prop_assert!(values.values()[..dim - 1].iter().all(|s| (s - 1.0).abs() <= 1e-10));
        prop_assert!(values.values()[dim - 1].abs() <= 1e-10);
        let via_basis = linalg::projection_matrix_via_basis(&x).unwrap();
        prop_assert!(max_abs(&(&via_basis - &p)) <= 1e-10);
    }

    #[test]
    fn basis_is_orthogonal(dim in 2usize..40, s in any::<u64>()) {
        let mut rng = seed::rng(s);
        let a = uniform_on_sphere(dim, &mut rng);
        let b = uniform_on_sphere(dim, &mut rng);
        for second in [None, Some(&b)] {
            let u = linalg::orthonormal_basis_from(&a, second).unwrap();
            prop_assert!(max_abs(&(&u * u.transpose() - Matrix::identity(dim, dim))) <= 1e-10);
            prop_assert!((u.row(0).transpose() - &a).amax() <= 1e-12);
        }
    }

    #[test]
    fn normalization_commutes_with_projection(dim in 2usize..40, s in any::<u64>(), k1 in 0.01..100.0f64, k2 in 0.01..100.0f64) {
        let mut rng = seed::rng(s);
        let x = uniform_on_sphere(dim, &mut rng);
        let v1 = uniform_on_sphere(dim, &mut rng);
        let v2 = uniform_on_sphere(dim, &mut rng);
        let p = linalg::projection_matrix(&x).unwrap();
        let raw = linalg::cos_angle(&(&p * (&v1 * k1)), &(&p * (&v2 * k2))).unwrap();
        let unit = linalg::cos_angle(&(&p * &v1), &(&p * &v2)).unwrap();
        prop_assert!((raw - unit).abs() <= 1e-10);
    }

    #[test]
    fn same_latitude_law(dim in 3usize..64, s in any::<u64>(), phi in -1.5..1.5f64) {
        let mut rng = seed::rng(s);
        let x = uniform_on_sphere(dim, &mut rng);
        let w1 = perpendicular(&x, &mut rng);
        let w2 = perpendicular(&x, &mut rng);
        let v1 = &x * phi.sin() + &w1 * phi.cos();
        let v2 = &x * phi.sin() + &w2 * phi.cos();
        let p = linalg::projection_matrix(&x).unwrap();
        let lhs = 1.0 - linalg::cos_angle(&v1, &v2).unwrap();
        let rhs = phi.cos().powi(2) * (1.0 - linalg::cos_angle(&(&p * &v1), &(&p * &v2)).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-9);
    }

    #[test]
    fn stretch_merges_any_two_unit_directions(dim in 2usize..40, s in any::<u64>()) {
        let mut rng = seed::rng(s);
        let v1 = uniform_on_sphere(dim, &mut rng);
        let v2 = uniform_on_sphere(dim, &mut rng);
        prop_assume!((&v1 + &v2).norm() > 0.05 && (&v1 - &v2).norm() > 1e-3);
        let kill = (&v1 - &v2).normalize();
        let v_bar = (&v1 + &v2) / 2.0;
        let t = linalg::projection_with_stretch(&kill, &v_bar.normalize(), 1.0 / v_bar.norm()).unwrap();
        let (a, b) = (&t * &v1, &t * &v2);
        prop_assert!((&a - &b).amax() <= 1e-9);
        prop_assert!((a.norm() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn latitude_expectation_and_concentration() {
    let mut rng = seed::rng(77);
    for dim in [4usize, 16, 128] {
        let x = uniform_on_sphere(dim, &mut rng);
        let n = 20_000;
        let (mut sum, mut sum_sq, mut gap) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let h1 = x.dot(&uniform_on_sphere(dim, &mut rng));
            let h2 = x.dot(&uniform_on_sphere(dim, &mut rng));
            let c2 = 1.0 - h1 * h1;
            sum += c2;
            sum_sq += c2 * c2;
            gap += (h1 - h2).abs();
        }
        let n = n as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean) / n).sqrt();
        let expected = (dim as f64 - 1.0) / dim as f64;
        assert!((mean - expected).abs() <= 3.0 * se, "d={dim}: {mean} vs {expected}");
        assert!(gap / n <= (2.0 / dim as f64).sqrt(), "d={dim}: latitude gap {}", gap / n);
    }
}

#[test]
fn uniform_draws_have_no_preferred_hemisphere() {
    let mut rng = seed::rng(5);
    let axis = uniform_on_sphere(8, &mut rng);
    let positive = (0..4000).filter(|_| axis.dot(&uniform_on_sphere(8, &mut rng)) > 0.0).count();
    assert!((positive as i64 - 2000).abs() < 200, "{positive}");
}
