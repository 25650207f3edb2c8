mod common;

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use transductive::acquisition::{itl_scores, select_next, DecisionRule, ItlForm};
use transductive::theory::{
    approx_markov_boundary, greedy_capacity, information_ratio, irreducible_uncertainty, task_complexity,
};
use transductive::{FiniteDomain, GaussianBelief, Kernel, MaternNu, NoiseModel};

fn points(dim: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, dim), 2..max)
}

fn kernels() -> impl Strategy<Value = Kernel> {
    (0.3..3.0f64, 0usize..5).prop_map(|(ell, k)| match k {
        0 => Kernel::gaussian(ell),
        1 => Kernel::laplace(ell),
        2 => Kernel::matern(MaternNu::Half, ell),
        3 => Kernel::matern(MaternNu::ThreeHalves, ell),
        _ => Kernel::matern(MaternNu::FiveHalves, ell),
    })
}

fn gaussian_belief(pts: &[Vec<f64>], ell: f64) -> GaussianBelief {
    let domain = FiniteDomain::from_points(pts).unwrap();
    GaussianBelief::prior(&domain, &Kernel::gaussian(ell), |_| 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_matrices_are_psd(pts in points(2, 50), kernel in kernels()) {
        let k = kernel.gram(&pts).unwrap();
        prop_assert!(k == k.transpose());
        let eig = SymmetricEigen::new(k.clone());
        let max = eig.eigenvalues.amax().max(1.0);
        prop_assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-10 * max));
    }

    #[test]
    fn matern_half_equals_laplace_in_one_dimension(a in -5.0..5.0f64, b in -5.0..5.0f64, ell in 0.1..5.0f64) {
        let m = Kernel::matern(MaternNu::Half, ell).eval(&[a], &[b]).unwrap();
        let l = Kernel::laplace(ell).eval(&[a], &[b]).unwrap();
        prop_assert!((m - l).abs() < 1e-14);
    }

    #[test]
    fn information_chain_rule(pts in points(2, 12), ell in 0.5..2.0f64, rho2 in 0.01..0.5f64) {
        let b = gaussian_belief(&pts, ell);
        let m = pts.len();
        let noise = NoiseModel::homoscedastic(m, rho2).unwrap();
        let a = [0];
        let (x, y) = (m - 1, m / 2);
        let joint = b.mutual_information(&a, &[x, y], &noise).unwrap();
        let first = b.mutual_information(&a, &[x], &noise).unwrap();
        let cond = b.rank_one_condition(x, rho2).unwrap();
        let second = cond.mutual_information(&a, &[y], &noise).unwrap();
        prop_assert!((joint - first - second).abs() < 1e-8);
    }

    #[test]
    fn data_processing(pts in points(2, 12), ell in 0.5..2.0f64) {
        let b = gaussian_belief(&pts, ell);
        let m = pts.len();
        let noise = NoiseModel::homoscedastic(m, 0.1).unwrap();
        let s: Vec<usize> = (0..m / 2 + 1).collect();
        let a: Vec<usize> = (m / 2 + 1..m).collect();
        prop_assume!(!a.is_empty());
        let x = &s[..s.len().min(3)];
        let about_a = b.mutual_information(&a, x, &noise).unwrap();
        let about_s = b.mutual_information(&s, x, &noise).unwrap();
        prop_assert!(about_a <= about_s + 1e-8);
        let ca = greedy_capacity(&b, &a, &s, &noise, 3).unwrap();
        let cs = greedy_capacity(&b, &s, &s, &noise, 3).unwrap();
        for n in 0..3 {
            prop_assert!(ca.values[n] <= cs.values[n] + 1e-8);
        }
    }

    #[test]
    fn rank_one_updates_commute(pts in points(3, 20), i in 0usize..20, j in 0usize..20) {
        let b = gaussian_belief(&pts, 1.0);
        let (i, j) = (i % pts.len(), j % pts.len());
        let ij = b.rank_one_condition(i, 0.1).unwrap().rank_one_condition(j, 0.2).unwrap();
        let ji = b.rank_one_condition(j, 0.2).unwrap().rank_one_condition(i, 0.1).unwrap();
        let diff = (ij.cov() - ji.cov()).amax();
        prop_assert!(diff < 1e-10);
    }

    #[test]
    fn posterior_variance_never_increases(pts in points(2, 20), i in 0usize..20) {
        let b = gaussian_belief(&pts, 1.0);
        let post = b.rank_one_condition(i % pts.len(), 0.05).unwrap();
        for k in 0..pts.len() {
            prop_assert!(post.variance(k) <= b.variance(k) + 1e-15);
            prop_assert!(post.variance(k) >= 0.0);
        }
    }

    #[test]
    fn itl_invariant_to_joint_scaling(pts in points(2, 15), c in 0.1..10.0f64) {
        let b = gaussian_belief(&pts, 1.0);
        let m = pts.len();
        let noise = NoiseModel::homoscedastic(m, 0.1).unwrap();
        let s: Vec<usize> = (0..m).collect();
        let a = [0, m - 1];
        let base = itl_scores(&b, &a, &s, &noise, ItlForm::Latent).unwrap();
        let scaled = itl_scores(&b.with_scaled_cov(c).unwrap(), &a, &s, &noise.scaled(c).unwrap(), ItlForm::Latent).unwrap();
        for (x, y) in base.iter().zip(&scaled) {
            prop_assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn itl_is_submodular_inside_targets(pts in points(2, 14), ell in 0.5..2.0f64) {
        let b = gaussian_belief(&pts, ell);
        let m = pts.len();
        let noise = NoiseModel::homoscedastic(m, 0.1).unwrap();
        let a: Vec<usize> = (0..m).collect();
        let s: Vec<usize> = (0..m).step_by(2).collect();
        let curve = greedy_capacity(&b, &a, &s, &noise, 6).unwrap();
        for w in curve.gains.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-8);
        }
        let alpha = task_complexity(&curve.history()).unwrap();
        prop_assert!(alpha <= 1.0 + 1e-8);
    }

    #[test]
    fn itl_equals_uncertainty_sampling_inside_targets(pts in points(2, 20), ell in 0.3..2.0f64) {
        let b = gaussian_belief(&pts, ell);
        let m = pts.len();
        let noise = NoiseModel::homoscedastic(m, 0.05).unwrap();
        let a: Vec<usize> = (0..m).collect();
        let s: Vec<usize> = (0..m).filter(|i| i % 3 != 1).collect();
        let itl = select_next(DecisionRule::ITL, &b, &s, &a, &noise).unwrap();
        let unsa = select_next(DecisionRule::UncertaintySampling, &b, &s, &a, &noise).unwrap();
        prop_assert_eq!(itl.chosen, unsa.chosen);
    }

    #[test]
    fn information_ratio_positive(a in 0.05..0.65f64, c in 0.05..0.65f64, rho2 in 0.001..0.5f64) {
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, a, c, a, 1.0, 0.0, c, 0.0, 1.0]);
        let b = GaussianBelief::new(nalgebra::DVector::zeros(3), cov).unwrap();
        let noise = NoiseModel::homoscedastic(3, rho2).unwrap();
        let r = information_ratio(&b, &[1, 2], &[], &[0], &noise).unwrap();
        prop_assert!(r > 0.0);
    }

    #[test]
    fn markov_boundary_meets_its_inequality(pts in points(2, 12), eps in 0.01..0.5f64) {
        let b = gaussian_belief(&pts, 1.0);
        let m = pts.len();
        let noise = NoiseModel::homoscedastic(m, 0.01).unwrap();
        let s: Vec<usize> = (1..m).collect();
        let x = 0;
        match approx_markov_boundary(&b, &s, x, eps, &noise) {
            Ok(boundary) => {
                let mut post = b.clone();
                for &i in &boundary {
                    post.rank_one_update(i, 0.01, None).unwrap();
                }
                let floor = irreducible_uncertainty(&b, &s, x).unwrap();
                prop_assert!(post.variance(x) <= floor + eps + 1e-12);
                prop_assert!(boundary.iter().all(|i| s.contains(i)));
            }
            Err(e) => {
                let gave_up = matches!(e, transductive::Error::NoConvergence { .. });
                prop_assert!(gave_up, "unexpected error {:?}", e);
            }
        }
    }

    #[test]
    fn irreducible_below_prior(pts in points(2, 15)) {
        let b = gaussian_belief(&pts, 1.0);
        let m = pts.len();
        let s: Vec<usize> = (0..m / 2).collect();
        for x in 0..m {
            let eta = irreducible_uncertainty(&b, &s, x).unwrap();
            prop_assert!(eta >= 0.0 && eta <= b.variance(x) + 1e-12);
            if s.contains(&x) {
                prop_assert!(eta.abs() < 1e-8);
            }
        }
    }
}
