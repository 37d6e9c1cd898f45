use dyadic_core::bounds::BoundConstants;
use dyadic_core::model::{
    drift, flux, sobolev_norm_sq, weighted_norm_sq, ModelParams, ShellState, SobolevIndex,
};
use proptest::prelude::*;

fn h_plus(max_n: usize, scale: f64) -> impl Strategy<Value = ShellState> {
    (1..=max_n).prop_flat_map(move |n| {
        (
            -scale..scale,
            proptest::collection::vec(0.0..scale, n),
        )
            .prop_map(|(u0, tail)| {
                let mut v = vec![u0];
                v.extend(tail);
                ShellState::new(v).unwrap()
            })
    })
}

fn params_for(state: &ShellState, c: f64) -> ModelParams {
    ModelParams::new(c, 1.0, 1.0, state.truncation(), 0.1).unwrap()
}

proptest! {
    #[test]
    fn drift_conserves_energy_on_small_truncations(u in h_plus(4, 2.0), c in 1.0f64..=3.0) {
        let d = drift(&u, &params_for(&u, c)).unwrap();
        let power: f64 = u.as_slice().iter().zip(&d).map(|(x, f)| 2.0 * x * f).sum();
        let norm2 = u.energy();
        prop_assert!(power.abs() <= 1e-12 * (1.0 + norm2 * norm2));
    }

    #[test]
    fn drift_conserves_energy_to_rounding(u in h_plus(24, 1.0), c in 1.0f64..=3.0) {
        let d = drift(&u, &params_for(&u, c)).unwrap();
        let terms: Vec<f64> = u.as_slice().iter().zip(&d).map(|(x, f)| 2.0 * x * f).collect();
        let power: f64 = terms.iter().sum();
        let scale: f64 = terms.iter().map(|t| t.abs()).sum::<f64>() + u.as_slice().iter().zip(&d).map(|(x, f)| (x * f).abs()).sum::<f64>();
        prop_assert!(power.abs() <= 64.0 * f64::EPSILON * (1.0 + scale));
    }

    #[test]
    fn drift_points_inward_on_empty_shells(u in h_plus(12, 2.0), c in 1.0f64..=3.0, pick in 0usize..64) {
        let n = u.truncation();
        let j = 1 + pick % n;
        let mut v = u.into_vec();
        v[j] = 0.0;
        let u = ShellState::new(v).unwrap();
        let d = drift(&u, &params_for(&u, c)).unwrap();
        let expected = libm::exp2(c * (j - 1) as f64) * u.get(j - 1) * u.get(j - 1);
        prop_assert_eq!(d[j], expected);
        prop_assert!(d[j] >= 0.0);
    }

    #[test]
    fn single_mode_norm_is_monotone_in_alpha(j in 1usize..16, amp in 1e-3f64..10.0, a1 in -2.0f64..2.0, gap in 1e-3f64..2.0) {
        let mut v = vec![0.0; 17];
        v[j] = amp;
        let u = ShellState::new(v).unwrap();
        let lo = sobolev_norm_sq(&u, SobolevIndex::new(a1).unwrap());
        let hi = sobolev_norm_sq(&u, SobolevIndex::new(a1 + gap).unwrap());
        prop_assert_eq!(lo, libm::exp2(2.0 * a1 * j as f64) * amp * amp);
        prop_assert!(lo < hi);
    }

    #[test]
    fn energy_norm_matches_plain_sum(u in h_plus(30, 3.0)) {
        let plain: f64 = u.as_slice().iter().map(|x| x * x).sum();
        prop_assert!((sobolev_norm_sq(&u, SobolevIndex::ENERGY) - plain).abs() <= 1e-14 * (1.0 + plain));
    }

    #[test]
    fn contraction_norm_is_dominated_by_energy(v in proptest::collection::vec(-5.0f64..5.0, 2..30)) {
        prop_assert!(weighted_norm_sq(&v, SobolevIndex::CONTRACTION) <= weighted_norm_sq(&v, SobolevIndex::ENERGY));
    }

    #[test]
    fn flux_is_nonnegative_on_h_plus(u in h_plus(12, 2.0), c in 1.0f64..=3.0) {
        let p = params_for(&u, c);
        for j in 0..u.truncation() {
            prop_assert!(flux(&u, j, &p).unwrap() >= 0.0);
        }
    }

    #[test]
    fn drift_telescopes_into_fluxes(u in h_plus(10, 1.5), c in 1.0f64..=3.0) {
        // 2 u_j d_j = Pi_{j-1} - Pi_j, with Pi_0 = 2 u_0^2 u_1 leaving shell 0.
        let p = params_for(&u, c);
        let d = drift(&u, &p).unwrap();
        let n = u.truncation();
        let pi: Vec<f64> = (0..n).map(|j| flux(&u, j, &p).unwrap()).collect();
        for j in 0..=n {
            let inflow = if j == 0 { 0.0 } else { pi[j - 1] };
            let outflow = if j == n { 0.0 } else { pi[j] };
            let lhs = 2.0 * u.get(j) * d[j];
            prop_assert!((lhs - (inflow - outflow)).abs() <= 1e-12 * (1.0 + inflow.abs() + outflow.abs()));
        }
    }

    #[test]
    fn radius_scales_with_data(norm in 0.0f64..5.0, sigma in 0.0f64..3.0, w in 0.0f64..4.0, k in 0u32..6) {
        let lambda = libm::exp2(k as f64 - 3.0);
        let base = BoundConstants::new(norm, sigma, w, 1.0, 1e-2);
        let scaled = BoundConstants::new(lambda * norm, lambda * sigma, w, 1.0, 1e-2);
        prop_assert_eq!(scaled.a, lambda * base.a);
    }
}
