use proptest::prelude::*;
use siv_core::measure::*;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

// Couplings of two uniform n-point laws are the doubly stochastic matrices,
// whose extreme points are permutations.
fn brute_force(a: &[f64], b: &[f64], p: f64) -> f64 {
    permutations(a.len())
        .iter()
        .map(|s| a.iter().zip(s).map(|(x, &j)| (x - b[j]).abs().powf(p)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        / a.len() as f64
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..=6).prop_flat_map(|n| (prop::collection::vec(-5.0f64..5.0, n), prop::collection::vec(-5.0f64..5.0, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sorted_pairing_is_optimal_at_p1((a, b) in pair()) {
        let w = wasserstein_1d(&a, &b, 1.0).unwrap();
        prop_assert!((w - brute_force(&a, &b, 1.0)).abs() <= 1e-12);
    }

    #[test]
    fn exact_solver_matches_enumeration((a, b) in pair(), p in 0.05f64..1.0) {
        let w = wasserstein_1d(&a, &b, p).unwrap();
        let bf = brute_force(&a, &b, p);
        prop_assert!((w - bf).abs() <= 1e-12, "{} vs {}", w, bf);
        prop_assert!(quantile_coupling_cost(&a, &b, p).unwrap() >= bf - 1e-12);
    }

    #[test]
    fn metric_axioms(n in 1usize..=8, p in 0.1f64..=1.0,
                     xs in prop::collection::vec(-3.0f64..3.0, 24)) {
        let (a, rest) = xs.split_at(8);
        let (b, c) = rest.split_at(8);
        let (a, b, c) = (&a[..n], &b[..n], &c[..n]);
        let ab = wasserstein_1d(a, b, p).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!(wasserstein_1d(a, a, p).unwrap().abs() <= 1e-15);
        prop_assert!((ab - wasserstein_1d(b, a, p).unwrap()).abs() <= 1e-12);
        let ac = wasserstein_1d(a, c, p).unwrap();
        let cb = wasserstein_1d(c, b, p).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }
}

#[test]
fn crossing_beats_sorted_below_p1() {
    let p = 0.5;
    let w = wasserstein_1d(&[0.0, 1.0], &[1.0, 2.0], p).unwrap();
    assert!((w - 2f64.powf(p) / 2.0).abs() < 1e-15);
    assert_eq!(quantile_coupling_cost(&[0.0, 1.0], &[1.0, 2.0], p).unwrap(), 1.0);
}

#[test]
fn unequal_sizes_need_p1_below_one() {
    assert!(wasserstein_1d(&[0.0, 1.0], &[0.5], 0.5).is_err());
    assert!((wasserstein_1d(&[0.0, 1.0], &[0.5], 1.0).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn kde_has_unit_mass() {
    let samples: Vec<f64> = (0..400).map(|k| ((k as f64) * 0.61803).fract() * 2.0 + ((k * 7 % 13) as f64) * 0.05).collect();
    let m = EmpiricalMarginal::new(samples, 1.0, Component::S).unwrap();
    let d = kde(&m, Bandwidth::Auto).unwrap();
    assert!((d.trapezoid_mass() - 1.0).abs() < 1e-3);
    assert!(d.density.iter().all(|&x| x >= 0.0));
}

#[test]
fn kde_refuses_constant_samples() {
    let m = EmpiricalMarginal::new(vec![0.3; 20], 0.0, Component::I).unwrap();
    assert!(kde(&m, Bandwidth::Auto).is_err());
    assert!(kde(&m, Bandwidth::Fixed(0.1)).is_ok());
}
