use serde::Serialize;
use serde_json::json;

use siv_core::control::{self, Estimate, Problem};
use siv_core::integrator::{self, TrajectoryRecord};
use siv_core::irl::{self, IrlProblem};
use siv_core::measure::{self, Bandwidth, Component, EmpiricalMarginal};
use siv_core::model::{self, ControlField, FieldState};
use siv_core::regime;
use siv_core::seed;
use siv_core::Result;

use crate::config::RunConfig;
use crate::output::{json_bytes, real, Cell, Csv, OutDir, Provenance};

/// Index mixed into the master seed for IRL data collection, keeping the
/// data noise independent of the evaluation ensemble.
pub const IRL_DATA_STREAM: u64 = 0x1d47a;

fn trajectory_rows(csv: &mut Csv, path: usize, grid: &siv_core::grid::SpatialGrid, rec: &TrajectoryRecord) {
    let xs = grid.centers();
    for (k, st) in rec.states.iter().enumerate() {
        for (c, x) in xs.iter().enumerate() {
            csv.row(&[
                Cell::U(path as u64),
                Cell::R(rec.times[k]),
                Cell::R(*x),
                Cell::R(st.s[c]),
                Cell::R(st.i[c]),
                Cell::R(st.v[c]),
                Cell::U(rec.regimes[k] as u64 + 1),
            ]);
        }
    }
}

pub fn simulate(cfg: &RunConfig, prov: &Provenance, out: &mut OutDir) -> Result<serde_json::Value> {
    let r = cfg.resolve()?;
    let n = cfg.stepping.n_paths;
    let cells = r.grid.n_cells();
    let [u1, u2] = cfg.simulate.control;
    let per_path = integrator::run_ensemble(n, r.step.rng_seed, |k, s| {
        let rec = integrator::simulate_path(
            &r.grid,
            &r.initial,
            &mut |_, _, _| ControlField::constant(cells, u1, u2),
            &r.params,
            &r.chain,
            r.initial_regime,
            &r.step.with_seed(s),
        )?;
        let mut rows = Csv::bare();
        trajectory_rows(&mut rows, k, &r.grid, &rec);
        let mut regs = Csv::bare();
        for (a, b, st) in rec.regime_path.segments() {
            regs.row(&[Cell::U(k as u64), Cell::R(a), Cell::R(b), Cell::U(st as u64 + 1)]);
        }
        Ok((rows.into_bytes(), rec.to_bytes(), regs.into_bytes(), rec.states.last().unwrap().clone(), rec.clamps))
    })?;

    let mut traj = Csv::new(prov, &["path", "t", "x", "S", "I", "V", "regime"]).into_bytes();
    let mut bin = prov.header().into_bytes();
    let mut regs = Csv::new(prov, &["path", "t_start", "t_end", "state"]).into_bytes();
    let mut finals: Vec<FieldState> = Vec::with_capacity(n);
    let mut clamps = 0;
    for (rows, b, rg, fin, cl) in per_path {
        traj.extend(rows);
        bin.extend(b);
        regs.extend(rg);
        finals.push(fin);
        clamps += cl;
    }
    out.write("trajectory.csv", &traj)?;
    out.write("trajectory.bin", &bin)?;
    out.write("regimes.csv", &regs)?;

    let mass = model::mass_diagnostic(&r.grid, &finals, r.initial.total_mass(&r.grid))?;
    let means: Vec<[f64; 3]> = finals.iter().map(|s| s.means()).collect();
    let final_mean: [f64; 3] = std::array::from_fn(|c| means.iter().map(|m| m[c]).sum::<f64>() / n as f64);
    let summary = json!({
        "n_paths": n,
        "t_final": r.step.t_final,
        "final_mean_state": { "S": final_mean[0], "I": final_mean[1], "V": final_mean[2] },
        "mass": mass,
        "negative_clamps": clamps,
    });
    out.write("simulate-summary.json", &json_bytes(prov, &summary)?)?;
    Ok(summary)
}

pub fn control(cfg: &RunConfig, prov: &Provenance, out: &mut OutDir) -> Result<serde_json::Value> {
    let r = cfg.resolve()?;
    let pb = Problem {
        grid: &r.grid,
        initial: &r.initial,
        params: &r.params,
        chain: &r.chain,
        initial_regime: r.initial_regime,
        cost: &cfg.cost,
        step: &r.step,
        n_paths: cfg.stepping.n_paths,
    };
    let sol = control::forward_backward_sweep(&pb, &cfg.sweep)?;

    let mut hist = Csv::new(prov, &["iter", "J", "stderr", "control_change"]);
    for h in &sol.history {
        hist.row(&[Cell::U(h.iter as u64), Cell::R(h.objective.mean), Cell::R(h.objective.std_error), Cell::R(h.control_change)]);
    }
    out.write("iter-history.csv", &hist.into_bytes())?;

    let xs = r.grid.centers();
    let mut field = Csv::new(prov, &["t", "x", "u1", "u2"]);
    for (k, u) in sol.control.iter().enumerate() {
        for (c, x) in xs.iter().enumerate() {
            field.row(&[Cell::R(r.step.time(k)), Cell::R(*x), Cell::R(u.u1[c]), Cell::R(u.u2[c])]);
        }
    }
    out.write("control-field.csv", &field.into_bytes())?;

    let b = cfg.sweep.bounds();
    let lo = pb.evaluate(&pb.constant_schedule(b.u1[0], b.u2[0]))?;
    let hi = pb.evaluate(&pb.constant_schedule(b.u1[1], b.u2[1]))?;
    let summary = json!({
        "objective": sol.objective,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "stationarity_residual": sol.stationarity_residual,
        "descent_violations": sol.descent_violations,
        "negative_clamps": sol.clamps,
        "baseline_lower_bound_control": lo,
        "baseline_upper_bound_control": hi,
    });
    out.write("control-summary.json", &json_bytes(prov, &summary)?)?;
    Ok(summary)
}

pub fn irl(cfg: &RunConfig, prov: &Provenance, out: &mut OutDir) -> Result<serde_json::Value> {
    let r = cfg.resolve()?;
    let data_step = r.step.with_seed(seed::derive(r.step.rng_seed, IRL_DATA_STREAM));
    let pb = IrlProblem {
        grid: &r.grid,
        initial: &r.initial,
        params: &r.params,
        chain: &r.chain,
        initial_regime: r.initial_regime,
        cost: &cfg.cost,
        step: &data_step,
    };
    let icfg = cfg.irl_config(cfg.stepping.n_paths);
    // J estimates share the sweep's common random numbers
    let icfg = irl::IrlConfig { eval_seed: cfg.irl.eval_seed.unwrap_or(r.step.rng_seed), ..icfg };
    let res = irl::irl_policy_iteration(&pb, &icfg)?;

    let mut hist = Csv::new(prov, &["iter", "mean_probe_V", "fit_se", "J", "J_stderr", "policy_change"]);
    for h in &res.history {
        hist.row(&[
            Cell::U(h.iter as u64),
            Cell::R(h.mean_probe_value),
            Cell::R(h.fit_se),
            Cell::R(h.objective.mean),
            Cell::R(h.objective.std_error),
            Cell::R(h.policy_change),
        ]);
    }
    out.write("irl-history.csv", &hist.into_bytes())?;

    #[derive(Serialize)]
    struct Coefficients<'a> {
        final_objective: Estimate,
        final_policy: &'a irl::IrlPolicy,
        last_value: &'a irl::ValueApprox,
        monomials: [&'static str; 10],
        policy_features: [&'static str; 4],
        n_windows: usize,
        n_probes: usize,
    }
    let last = res.history.last().expect("i_max >= 1");
    let body = Coefficients {
        final_objective: res.final_objective,
        final_policy: &res.final_policy,
        last_value: &last.value,
        monomials: irl::MONOMIALS,
        policy_features: irl::POLICY_FEATURES,
        n_windows: res.n_windows,
        n_probes: res.probes.len(),
    };
    out.write("irl-coefficients.json", &json_bytes(prov, &body)?)?;
    Ok(json!({
        "final_objective": res.final_objective,
        "iterations": res.history.len(),
        "n_windows": res.n_windows,
    }))
}

pub fn measure(cfg: &RunConfig, prov: &Provenance, out: &mut OutDir) -> Result<serde_json::Value> {
    let r = cfg.resolve()?;
    let m = &cfg.measure;
    let n = cfg.stepping.n_paths;
    let second = FieldState::uniform(&r.grid, m.second_initial.s, m.second_initial.i, m.second_initial.v);
    // both ensembles use the same master seed (common random numbers)
    let run = |init: &FieldState| {
        measure::ensemble_snapshots(&r.grid, init, &r.params, &r.chain, r.initial_regime, &r.step, n, &m.checkpoints, m.control)
    };
    let a = run(&r.initial)?;
    let b = run(&second)?;
    let bw = m.bandwidth.map_or(Bandwidth::Auto, Bandwidth::Fixed);

    let mut dens = Csv::new(prov, &["component", "t", "x", "density"]);
    for snap in &a {
        for c in Component::ALL {
            let marg: EmpiricalMarginal = snap.marginal(c);
            let curve = measure::kde(&marg, bw)?;
            for (x, d) in curve.grid.iter().zip(&curve.density) {
                dens.row(&[Cell::S(c.name()), Cell::R(snap.time), Cell::R(*x), Cell::R(*d)]);
            }
        }
    }
    out.write("densities.csv", &dens.into_bytes())?;

    let audit = measure::ergodicity_audit(&[a, b], m.p)?;
    out.write("audit.json", &json_bytes(prov, &audit)?)?;
    Ok(json!({
        "checkpoints": audit.checkpoints,
        "decay_rate": audit.decay_rate,
        "cross_w1": audit.cross.iter().map(|d| d.w1).collect::<Vec<_>>(),
    }))
}

#[derive(Serialize)]
struct SpectralRow {
    p: f64,
    eta_p: f64,
    eta_positive: bool,
    xi_p: Vec<f64>,
    eigen_residual: f64,
}

pub fn spectral(cfg: &RunConfig, prov: &Provenance, out: &mut OutDir) -> Result<(serde_json::Value, String)> {
    let r = cfg.resolve()?;
    let chain = &r.chain;
    let pi = regime::stationary_distribution(chain)?;
    let rho = cfg.spectral.rho.clone().unwrap_or_else(|| vec![-1.0; chain.n_states()]);
    let p0 = regime::p0_threshold(chain, &rho);
    let k = cfg.spectral.n_points;
    let mut rows = Vec::with_capacity(k);
    let mut mean_rho_negative = false;
    for j in 1..=k {
        let p = p0 * j as f64 / k as f64;
        let rep = regime::spectral_report(chain, &rho, p)?;
        mean_rho_negative = rep.mean_rho_negative;
        rows.push(SpectralRow { p, eta_p: rep.eta_p, eta_positive: rep.eta_positive, xi_p: rep.xi_p, eigen_residual: rep.eigen_residual });
    }
    let mut text = prov.header();
    text.push_str(&format!("pi = [{}]\n", pi.iter().map(|x| real(*x)).collect::<Vec<_>>().join(", ")));
    text.push_str(&format!("rho = [{}]\n", rho.iter().map(|x| real(*x)).collect::<Vec<_>>().join(", ")));
    text.push_str(&format!("p0 = {}\n", real(p0)));
    text.push_str(&format!("sum pi_i rho_i < 0: {mean_rho_negative}\n"));
    text.push_str("p,eta_p\n");
    for row in &rows {
        text.push_str(&format!("{},{}\n", real(row.p), real(row.eta_p)));
    }
    out.write("spectral.txt", text.as_bytes())?;
    let body = json!({
        "stationary_distribution": pi,
        "stationary_residual": regime::stationary_residual(chain, &pi),
        "rho": rho,
        "p0": p0,
        "mean_rho_negative": mean_rho_negative,
        "table": rows,
    });
    out.write("spectral.json", &json_bytes(prov, &body)?)?;
    Ok((body, text))
}
