use proptest::prelude::*;
use siv_core::grid::*;
use siv_core::model::*;

fn grid_strategy() -> impl Strategy<Value = (SpatialGrid, Vec<f64>)> {
    (3usize..80, 0.1f64..10.0).prop_flat_map(|(n, len)| {
        prop::collection::vec(-2.0f64..2.0, n).prop_map(move |f| (SpatialGrid::new(n, len).unwrap(), f))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn laplacian_conserves_and_dissipates((g, f) in grid_strategy(), d in 0.001f64..1.0) {
        let lf = laplacian(&g, &f, d);
        let scale: f64 = lf.iter().map(|x| x.abs()).sum::<f64>() * g.dx();
        prop_assert!(integrate(&g, &lf).abs() <= 1e-14 * scale.max(1.0));
        let energy: f64 = f.iter().zip(&lf).map(|(a, b)| a * b).sum::<f64>() * g.dx();
        prop_assert!(energy <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn laplacian_is_symmetric((g, f) in grid_strategy(), seed in 0u64..1000) {
        let h: Vec<f64> = (0..f.len()).map(|k| ((k as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0).collect();
        let a: f64 = h.iter().zip(laplacian(&g, &f, 1.0)).map(|(x, y)| x * y).sum();
        let b: f64 = f.iter().zip(laplacian(&g, &h, 1.0)).map(|(x, y)| x * y).sum();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn running_cost_is_convex_in_control(s in 0.0f64..2.0, i in 0.0f64..1.0, u in 0.0f64..1.0, w in 0.0f64..1.0, lam in 0.0f64..1.0) {
        let g = SpatialGrid::homogeneous();
        let st = FieldState::uniform(&g, s, i, 0.3);
        let cost = CostParams::default();
        let at = |a: f64, b: f64| running_cost(&g, &st, &ControlField::constant(1, a, b), &cost);
        let mid = at(lam * u + (1.0 - lam) * w, lam * w + (1.0 - lam) * u);
        prop_assert!(mid <= lam * at(u, w) + (1.0 - lam) * at(w, u) + 1e-14);
    }
}

#[test]
fn reaction_conserves_mass_without_births_deaths() {
    let par = RegimeParams { b: 0.0, mu: 0.0, ..RegimeParams::regime2() };
    for (s, i, v, u1, u2) in [(0.6, 0.1, 1.0, 0.3, 0.9), (2.0, 0.5, 0.0, 1.0, 0.0)] {
        let f = reaction(&par, s, i, v, u1, u2);
        assert!((f[0] + f[1] + f[2]).abs() < 1e-15);
    }
}

#[test]
fn mass_follows_births_minus_deaths() {
    let par = RegimeParams::regime1();
    let (s, i, v) = (0.4, 0.2, 0.7);
    let f = reaction(&par, s, i, v, 0.5, 0.5);
    let want = par.b - par.mu * (s + i + v);
    assert!((f[0] + f[1] + f[2] - want).abs() < 1e-15);
}

#[test]
fn saturated_treatment_is_bounded() {
    let par = RegimeParams::regime1();
    let big = treatment(&par, 1.0, 1e9);
    assert!(big <= par.m / par.eta + 1e-12);
    assert!((treatment(&par, 0.5, 0.2) - par.m * 0.5 * 0.2 / (1.0 + par.eta * 0.2)).abs() < 1e-16);
}
