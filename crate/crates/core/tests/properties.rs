use std::f64::consts::FRAC_PI_4;
use std::sync::Arc;

use kdesign::fitting::*;
use kdesign::gates::*;
use kdesign::perm_dynamics::*;
use kdesign::statevec::*;
use kdesign::theory::*;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn angles() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.0..6.3f64, 0.0..6.3f64, 0.0..6.3f64)
}

fn random_state(d: usize, n: usize, seed: u64) -> PureState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = haar_unitary(d.pow(n as u32), &mut rng);
    PureState::from_amplitudes(d, n, u.column(0).iter().copied().collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(48) })]

    #[test]
    fn du_family_entangling_power(j in -1.6..1.6f64, a in angles(), b in angles()) {
        let g = build_xyz_gate(FRAC_PI_4, FRAC_PI_4, j, a, b);
        prop_assert!(is_dual_unitary(&g, 1e-10).0);
        let expected = 2.0 / 3.0 * (2.0 * j).cos().powi(2);
        prop_assert!((entangling_power(&g) - expected).abs() < 1e-10);
    }

    #[test]
    fn gates_preserve_norm_and_inner_products(seed in 0u64..1000, site in 0usize..4, j in -1.6..1.6f64, a in angles(), b in angles()) {
        let g = build_xyz_gate(0.6, 0.2, j, a, b);
        let (mut x, mut y) = (random_state(2, 5, seed), random_state(2, 5, seed + 1));
        let before = x.inner(&y);
        x.apply_two_site(&g, site).unwrap();
        y.apply_two_site(&g, site).unwrap();
        prop_assert!((x.norm() - 1.0).abs() < 1e-12);
        prop_assert!((x.inner(&y) - before).norm() < 1e-12);
    }

    #[test]
    fn averaged_gate_fixes_identity_replicas(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Gate::with_tolerance(2, haar_unitary(4, &mut rng), "haar", 1e-10).unwrap();
        let basis = Arc::new(PermBasis::new(2, 2).unwrap());
        let w = AveragedGate::new(&g, basis).unwrap();
        prop_assert!(w.fixed_point_defect() < 1e-10);
    }

    #[test]
    fn haar_frame_potential_is_inverse_binomial(d in 2usize..4, l in 1usize..3, k in 1usize..5) {
        let n = (d as f64).powi(2 * l as i32);
        let binom: f64 = (0..k).map(|i| (n + i as f64) / (i + 1) as f64).product();
        prop_assert!((haar_frame_potential(d, l, k) * binom - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generalised_gamma_moments_by_quadrature(p in 0.7..3.0f64, q in 1.2..3.0f64, r in 0.0..3.0f64) {
        let a = 1.3;
        // trapezoid on a grid wide enough for the tail to be negligible
        let hi = a * (60.0f64).powf(1.0 / p) * 2.0;
        let n = 200_000;
        let h = hi / n as f64;
        let (mut norm, mut mom) = (0.0, 0.0);
        for i in 1..n {
            let x = i as f64 * h;
            let f = gg_pdf(x, a, p, q);
            norm += f * h;
            mom += x.powf(r) * f * h;
        }
        prop_assert!((norm - 1.0).abs() < 2e-3, "norm {}", norm);
        let exact = gamma_moment(a, p, q, r).unwrap();
        prop_assert!((mom / exact - 1.0).abs() < 2e-3, "{} vs {}", mom, exact);
    }

    #[test]
    fn two_step_fit_is_shift_invariant(r1 in 0.8..2.0f64, ratio in 0.2..0.6f64, t_star in 5usize..10, shift in -5.0..5.0f64) {
        let r2 = r1 * ratio;
        let c1 = 2.0;
        let c2 = c1 - (r1 - r2) * t_star as f64;
        let series = |s: f64| -> Vec<(f64, f64)> {
            (0..30).map(|t| {
                let t = t as f64;
                let ln = if t <= t_star as f64 { c1 - r1 * t } else { c2 - r2 * t };
                (t, ln + s)
            }).collect()
        };
        let opts = TwoStepOptions::default();
        let a = fit_two_step_points(&series(0.0), &opts).unwrap();
        let b = fit_two_step_points(&series(shift), &opts).unwrap();
        prop_assert!((a.r1 - r1).abs() < 1e-8 && (a.r2 - r2).abs() < 1e-8);
        prop_assert!((a.r1 - b.r1).abs() < 1e-8 && (a.r2 - b.r2).abs() < 1e-8);
        prop_assert!((b.c1 - a.c1 - shift).abs() < 1e-8);
        prop_assert_eq!(a.t_star, b.t_star);
    }
}

#[test]
fn bell_pairs_are_maximally_entangled_across_each_pair() {
    let psi = PureState::bell_pairs(3, 2);
    assert!((psi.norm() - 1.0).abs() < 1e-14);
    assert!((psi.bipartite_purity(1) - 1.0 / 3.0).abs() < 1e-12);
    assert!((psi.bipartite_purity(2) - 1.0).abs() < 1e-12);
    let z = PureState::all_zero(2, 2);
    assert_eq!(z.amplitudes()[0], C64::new(1.0, 0.0));
}
