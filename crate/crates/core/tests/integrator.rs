use siv_core::grid::SpatialGrid;
use siv_core::integrator::*;
use siv_core::model::*;
use siv_core::regime::RegimeChain;

fn run(par: RegimeParams, g: &SpatialGrid, init: &FieldState, dt: f64, t: f64, seed: u64) -> TrajectoryRecord {
    let p = SivParams::single(par).unwrap();
    let n = g.n_cells();
    simulate_path(g, init, &mut |_, _, _| ControlField::constant(n, 0.2, 0.3), &p, &RegimeChain::single(), 0,
        &StepConfig::new(dt, t, seed))
    .unwrap()
}

#[test]
fn noise_free_error_halves_with_dt() {
    let g = SpatialGrid::homogeneous();
    let init = FieldState::uniform(&g, 0.6, 0.1, 1.0);
    let par = RegimeParams { sigma: 0.0, beta: 0.3, ..RegimeParams::regime1() };
    let end = |dt: f64| run(par, &g, &init, dt, 4.0, 1).states.last().unwrap().means();
    let reference = end(0.25 / 256.0);
    let err = |dt: f64| {
        let x = end(dt);
        (0..3).map(|k| (x[k] - reference[k]).abs()).fold(0.0, f64::max)
    };
    let (e1, e2, e3) = (err(0.25), err(0.125), err(0.0625));
    for ratio in [e1 / e2, e2 / e3] {
        assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
    }
}

#[test]
fn diffusion_only_conserves_total_mass() {
    let g = SpatialGrid::new(32, 1.0).unwrap();
    let mut init = FieldState::uniform(&g, 0.0, 0.0, 0.0);
    for k in 0..32 {
        let x = g.center(k);
        init.s[k] = 1.0 + (6.0 * x).sin();
        init.i[k] = (x - 0.5).abs();
        init.v[k] = x * x;
    }
    let par = RegimeParams { d1: 0.01, d2: 0.02, d3: 0.005, ..RegimeParams::zero() };
    let rec = run(par, &g, &init, 0.001, 1.0, 3);
    let m0 = init.total_mass(&g);
    for st in &rec.states {
        assert!((st.total_mass(&g) - m0).abs() < 1e-12);
    }
}

#[test]
fn paths_depend_only_on_seed() {
    let g = SpatialGrid::new(8, 1.0).unwrap();
    let init = FieldState::uniform(&g, 0.6, 0.1, 1.0);
    let a = run(RegimeParams::regime1(), &g, &init, 0.01, 1.0, 77);
    let b = run(RegimeParams::regime1(), &g, &init, 0.01, 1.0, 77);
    let c = run(RegimeParams::regime1(), &g, &init, 0.01, 1.0, 78);
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_ne!(a.to_bytes(), c.to_bytes());
}

#[test]
fn ensemble_order_is_thread_independent() {
    let g = SpatialGrid::homogeneous();
    let init = FieldState::uniform(&g, 0.6, 0.1, 1.0);
    let go = || {
        run_ensemble(64, 5, |_, s| Ok(run(RegimeParams::regime1(), &g, &init, 0.01, 1.0, s).states.last().unwrap().means()))
            .unwrap()
    };
    let wide = go();
    let narrow = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(go);
    assert_eq!(wide, narrow);
}

#[test]
fn regime_switching_uses_both_parameter_sets() {
    let g = SpatialGrid::homogeneous();
    let init = FieldState::uniform(&g, 0.6, 0.1, 1.0);
    let p = SivParams::two_regime_default();
    let rec = simulate_path(&g, &init, &mut |_, _, _| ControlField::zeros(1), &p, &RegimeChain::default_two_state(), 0,
        &StepConfig::new(0.01, 20.0, 4))
    .unwrap();
    assert!(rec.regimes.contains(&0) && rec.regimes.contains(&1));
    for (k, r) in rec.regimes.iter().enumerate().take(rec.n_steps()) {
        assert_eq!(*r, rec.regime_path.state_at(rec.times[k]));
    }
}
