use siv_core::control::*;
use siv_core::grid::SpatialGrid;
use siv_core::integrator::StepConfig;
use siv_core::model::*;
use siv_core::regime::RegimeChain;

struct Fixture {
    grid: SpatialGrid,
    init: FieldState,
    params: SivParams,
    chain: RegimeChain,
    step: StepConfig,
}

fn fixture(t_final: f64) -> Fixture {
    let grid = SpatialGrid::homogeneous();
    Fixture {
        init: FieldState::uniform(&grid, 0.6, 0.1, 1.0),
        grid,
        params: SivParams::single(RegimeParams::regime1()).unwrap(),
        chain: RegimeChain::single(),
        step: StepConfig::new(0.01, t_final, 21),
    }
}

fn problem<'a>(f: &'a Fixture, cost: &'a CostParams, n: usize) -> Problem<'a> {
    Problem {
        grid: &f.grid,
        initial: &f.init,
        params: &f.params,
        chain: &f.chain,
        initial_regime: 0,
        cost,
        step: &f.step,
        n_paths: n,
    }
}

#[test]
fn free_running_is_optimal_without_state_costs() {
    let f = fixture(2.0);
    let cost = CostParams { a1: 0.0, a2: 0.0, terminal_weight: 0.0, ..CostParams::default() };
    let sol = forward_backward_sweep(&problem(&f, &cost, 20), &SweepConfig { initial_control: [0.7, 0.7], ..SweepConfig::default() })
        .unwrap();
    assert!(sol.converged);
    for u in &sol.control {
        assert!(u.u1.iter().chain(&u.u2).all(|&x| x.abs() < 1e-3));
    }
}

#[test]
fn expensive_vaccination_is_switched_off() {
    let f = fixture(2.0);
    let cost = CostParams { tau1: 1e6, ..CostParams::default() };
    let sol = forward_backward_sweep(&problem(&f, &cost, 20), &SweepConfig::default()).unwrap();
    let max_u1 = sol.control.iter().flat_map(|u| u.u1.iter()).fold(0.0f64, |m, &x| m.max(x));
    assert!(max_u1 < 1e-5, "u1 reached {max_u1}");
}

#[test]
fn sweep_beats_constant_controls() {
    let f = fixture(3.0);
    let cost = CostParams::default();
    let pb = problem(&f, &cost, 50);
    let sol = forward_backward_sweep(&pb, &SweepConfig::default()).unwrap();
    assert!(sol.converged);
    assert!(sol.stationarity_residual <= SweepConfig::default().tol);
    for u in [0.0, 0.5, 1.0] {
        let e = pb.evaluate(&pb.constant_schedule(u, u)).unwrap();
        assert!(sol.objective.mean < e.mean, "J* {} vs J({u}) {}", sol.objective.mean, e.mean);
    }
    assert!(sol.control.iter().all(|u| u.u1.iter().chain(&u.u2).all(|x| (0.0..=1.0).contains(x))));
    assert_eq!(sol.history.len(), sol.iterations);
}

#[test]
fn sweep_is_deterministic() {
    let f = fixture(1.0);
    let cost = CostParams::default();
    let a = forward_backward_sweep(&problem(&f, &cost, 16), &SweepConfig::default()).unwrap();
    let b = forward_backward_sweep(&problem(&f, &cost, 16), &SweepConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn regular_control_reduces_to_closed_form() {
    let par = RegimeParams::regime1();
    let cost = CostParams::default();
    let (x, p) = ([0.8, 0.3, 0.4], [2.0, 1.5, 0.5]);
    let u = regular_control_cell(&par, &cost, x, p);
    assert!((u[0] - x[0] * (p[0] - p[2]) / (2.0 * cost.tau1)).abs() < 1e-15);
    assert!((u[1] - par.m * x[1] * (p[1] - p[2]) / ((1.0 + par.eta * x[1]) * 2.0 * cost.tau2)).abs() < 1e-15);
}

#[test]
fn invalid_sweep_config_lists_every_problem() {
    let cfg = SweepConfig { relax: 0.0, tol: -1.0, u1_bounds: [0.5, 0.2], ..SweepConfig::default() };
    let v = cfg.validate();
    let msgs = match v.into_result() {
        Err(siv_core::Error::Validation(m)) => m,
        other => panic!("{other:?}"),
    };
    assert_eq!(msgs.len(), 3);
}
