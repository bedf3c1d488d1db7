use proptest::prelude::*;
use siv_core::regime::*;

fn generator(off: &[f64], n: usize) -> RegimeChain {
    let mut rows = vec![vec![0.0; n]; n];
    let mut k = 0;
    for (i, row) in rows.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            if i != j {
                *x = off[k];
                k += 1;
            }
        }
        row[i] = -row.iter().sum::<f64>();
    }
    RegimeChain::new(rows).unwrap()
}

fn chain_strategy() -> impl Strategy<Value = RegimeChain> {
    (2usize..=6).prop_flat_map(|n| {
        prop::collection::vec(0.05f64..10.0, n * (n - 1)).prop_map(move |off| generator(&off, n))
    })
}

// Closed-form top eigenvalue of a 2×2 matrix with real spectrum.
fn top_eig_2x2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let tr = a + d;
    let det = a * d - b * c;
    0.5 * tr + (0.25 * tr * tr - det).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stationary_is_probability(chain in chain_strategy()) {
        let pi = stationary_distribution(&chain).unwrap();
        prop_assert!(pi.iter().all(|&x| x > 0.0));
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        prop_assert!(stationary_residual(&chain, &pi) <= 1e-12);
    }

    #[test]
    fn eta_nonincreasing_for_nonnegative_rho(chain in chain_strategy(), seedv in prop::collection::vec(0.0f64..3.0, 6)) {
        let rho = &seedv[..chain.n_states()];
        let mut last = f64::INFINITY;
        for p in [0.1, 0.25, 0.5, 0.75, 1.0] {
            let r = spectral_report(&chain, rho, p).unwrap();
            prop_assert!(r.eta_p <= last + 1e-10);
            prop_assert!(r.eigen_residual <= 1e-10);
            prop_assert!(r.xi_p.iter().all(|&x| x > 0.0));
            last = r.eta_p;
        }
    }

    #[test]
    fn two_state_eta_matches_closed_form(q12 in 0.1f64..10.0, q21 in 0.1f64..10.0,
                                         r1 in -3.0f64..3.0, r2 in -3.0f64..3.0, p in 0.05f64..1.0) {
        let chain = RegimeChain::new(vec![vec![-q12, q12], vec![q21, -q21]]).unwrap();
        let r = spectral_report(&chain, &[r1, r2], p).unwrap();
        let top = top_eig_2x2(-q12 + 0.5 * p * r1, q12, q21, -q21 + 0.5 * p * r2);
        prop_assert!((r.eta_p + top).abs() <= 1e-10 * (1.0 + top.abs()));
    }
}

#[test]
fn two_state_stationary_closed_form() {
    let chain = RegimeChain::default_two_state();
    let pi = stationary_distribution(&chain).unwrap();
    assert!((pi[0] - 8.0 / 13.5).abs() < 1e-15);
    assert!((pi[1] - 5.5 / 13.5).abs() < 1e-15);
}

#[test]
fn reducible_chain_is_reported() {
    let chain = RegimeChain::new(vec![vec![-1.0, 1.0, 0.0], vec![0.0, 0.0, 0.0], vec![0.0, 2.0, -2.0]]).unwrap();
    assert!(matches!(stationary_distribution(&chain), Err(siv_core::Error::Reducible { .. })));
}

#[test]
fn occupation_fractions_partition_horizon() {
    let chain = RegimeChain::new(vec![vec![-1.0, 0.5, 0.5], vec![2.0, -3.0, 1.0], vec![0.2, 0.3, -0.5]]).unwrap();
    let path = sample_path(&chain, 1, 500.0, 3).unwrap();
    let f = path.occupation_fractions(3);
    assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let segs = path.segments();
    assert_eq!(segs.first().unwrap().0, 0.0);
    assert_eq!(segs.last().unwrap().1, 500.0);
    assert!(segs.windows(2).all(|w| w[0].1 == w[1].0 && w[0].2 != w[1].2));
    let pi = stationary_distribution(&chain).unwrap();
    for k in 0..3 {
        assert!((f[k] - pi[k]).abs() < 0.05, "state {k}: {} vs {}", f[k], pi[k]);
    }
}

#[test]
fn same_seed_same_path() {
    let chain = RegimeChain::default_two_state();
    assert_eq!(sample_path(&chain, 0, 50.0, 9).unwrap(), sample_path(&chain, 0, 50.0, 9).unwrap());
    assert_ne!(sample_path(&chain, 0, 50.0, 9).unwrap(), sample_path(&chain, 0, 50.0, 10).unwrap());
}

#[test]
fn negative_rho_makes_eta_grow_with_p() {
    let chain = RegimeChain::default_two_state();
    let rho = [-1.0, -0.4];
    let mut prev = f64::NEG_INFINITY;
    for k in 1..=20 {
        let eta = spectral_report(&chain, &rho, k as f64 / 20.0).unwrap().eta_p;
        assert!(eta >= prev, "p = {}: {eta} < {prev}", k as f64 / 20.0);
        assert!(eta > 0.0);
        prev = eta;
    }
}
