//! Hamiltonian, projected regular controls and the forward–backward sweep.
//!
//! The Hamiltonian carries the quadratic control cost as τ·u², the
//! convention under which u₁ = (p₁−p₃)S/(2τ₁) and
//! u₂ = (p₂−p₃)mI/(2τ₂(1+ηI)) are its exact stationary points. The
//! reported objective J keeps the ½τ·u² weighting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, Violations};
use crate::grid::SpatialGrid;
use crate::integrator::{self, AdjointScheme, AdjointState, StepConfig, TrajectoryRecord};
use crate::model::{self, ControlField, CostParams, FieldState, RegimeParams, SivParams};
use crate::regime::RegimeChain;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub max_iters: usize,
    pub relax: f64,
    pub tol: f64,
    pub u1_bounds: [f64; 2],
    pub u2_bounds: [f64; 2],
    pub scheme: AdjointScheme,
    /// constant starting guess
    pub initial_control: [f64; 2],
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            relax: 0.5,
            tol: 1e-3,
            u1_bounds: [0.0, 1.0],
            u2_bounds: [0.0, 1.0],
            scheme: AdjointScheme::Costate,
            initial_control: [0.0, 0.0],
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Violations {
        let mut v = Violations::new();
        v.check(self.max_iters >= 1, || "sweep.max_iters: must be >= 1".into());
        v.check(self.relax > 0.0 && self.relax <= 1.0, || format!("sweep.relax: must lie in (0,1], got {}", self.relax));
        v.check(self.tol > 0.0, || format!("sweep.tol: must be positive, got {}", self.tol));
        for (name, [lo, hi]) in [("u1_bounds", self.u1_bounds), ("u2_bounds", self.u2_bounds)] {
            v.check((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi, || {
                format!("sweep.{name}: need 0 <= lo <= hi <= 1, got [{lo}, {hi}]")
            });
        }
        for (k, &u) in self.initial_control.iter().enumerate() {
            v.check((0.0..=1.0).contains(&u), || format!("sweep.initial_control[{k}]: must lie in [0,1]"));
        }
        v
    }

    pub fn bounds(&self) -> Bounds {
        Bounds { u1: self.u1_bounds, u2: self.u2_bounds }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub u1: [f64; 2],
    pub u2: [f64; 2],
}

impl Default for Bounds {
    fn default() -> Self {
        Self { u1: [0.0, 1.0], u2: [0.0, 1.0] }
    }
}

impl Bounds {
    pub fn clamp(&self, u1: f64, u2: f64) -> [f64; 2] {
        [u1.clamp(self.u1[0], self.u1[1]), u2.clamp(self.u2[0], self.u2[1])]
    }
}

/// Monte Carlo mean with standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let (mean, std_error) = model::mean_and_se(xs);
        Self { mean, std_error }
    }
}

/// H = fᵀp + σ*ᵀq + A₁S + A₂I + τ₁u₁² + τ₂u₂², pointwise.
pub fn hamiltonian(
    grid: &SpatialGrid,
    state: &FieldState,
    control: &ControlField,
    adjoint: &AdjointState,
    cost: &CostParams,
    par: &RegimeParams,
) -> Vec<f64> {
    let f = model::drift(grid, state, control, par);
    let e1 = 1.0 - par.e;
    (0..state.n_cells())
        .map(|k| {
            let (s, i, v) = (state.s[k], state.i[k], state.v[k]);
            let (u1, u2) = (control.u1[k], control.u2[k]);
            let fp = f[0][k] * adjoint.p1[k] + f[1][k] * adjoint.p2[k] + f[2][k] * adjoint.p3[k];
            let sq = -par.sigma * s * i * adjoint.q1[k]
                + (par.sigma * s * i + e1 * par.sigma * v * i) * adjoint.q2[k]
                - e1 * par.sigma * v * i * adjoint.q3[k];
            let l = cost.a1 * s + cost.a2 * i + cost.tau1 * u1 * u1 + cost.tau2 * u2 * u2;
            fp + sq + l
        })
        .collect()
}

#[inline]
pub fn regular_control_cell(par: &RegimeParams, cost: &CostParams, x: [f64; 3], p: [f64; 3]) -> [f64; 2] {
    let [s, i, _] = x;
    [
        (p[0] - p[2]) * s / (2.0 * cost.tau1),
        (p[1] - p[2]) * par.m * i / (2.0 * cost.tau2 * (1.0 + par.eta * i)),
    ]
}

/// Unclamped stationary point of H in (u₁, u₂).
pub fn regular_control(state: &FieldState, adjoint: &AdjointState, cost: &CostParams, par: &RegimeParams) -> ControlField {
    let n = state.n_cells();
    let mut out = ControlField::zeros(n);
    for k in 0..n {
        let u = regular_control_cell(
            par,
            cost,
            [state.s[k], state.i[k], state.v[k]],
            [adjoint.p1[k], adjoint.p2[k], adjoint.p3[k]],
        );
        out.u1[k] = u[0];
        out.u2[k] = u[1];
    }
    out
}

pub fn project_control(raw: &ControlField, bounds: &Bounds) -> ControlField {
    let mut out = raw.clone();
    for k in 0..raw.u1.len() {
        let [a, b] = bounds.clamp(raw.u1[k], raw.u2[k]);
        out.u1[k] = a;
        out.u2[k] = b;
    }
    out
}

/// Σ_k running_cost·dt (left endpoint) + w_h·∫I(T) along one record.
pub fn path_cost(grid: &SpatialGrid, rec: &TrajectoryRecord, cost: &CostParams, dt: f64) -> f64 {
    let running: f64 = rec
        .controls
        .iter()
        .zip(&rec.states)
        .map(|(u, x)| model::running_cost(grid, x, u, cost))
        .sum();
    running * dt + cost.terminal_weight * model::terminal_cost(grid, rec.states.last().expect("nonempty record"))
}

pub fn objective(grid: &SpatialGrid, records: &[TrajectoryRecord], cost: &CostParams, dt: f64) -> Result<Estimate> {
    if records.is_empty() {
        return Err(crate::Error::invalid("objective: ensemble is empty"));
    }
    let costs: Vec<f64> = records.iter().map(|r| path_cost(grid, r, cost, dt)).collect();
    Ok(Estimate::from_samples(&costs))
}

/// Everything the sweep and its baselines share.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub grid: &'a SpatialGrid,
    pub initial: &'a FieldState,
    pub params: &'a SivParams,
    pub chain: &'a RegimeChain,
    pub initial_regime: usize,
    pub cost: &'a CostParams,
    /// rng_seed is the master seed of the ensemble
    pub step: &'a StepConfig,
    pub n_paths: usize,
}

impl Problem<'_> {
    fn path_cfg(&self, k: usize) -> StepConfig {
        self.step.with_seed(seed::derive(self.step.rng_seed, k as u64))
    }

    fn simulate(&self, k: usize, schedule: &[ControlField]) -> Result<TrajectoryRecord> {
        let cfg = self.path_cfg(k);
        integrator::simulate_path(
            self.grid,
            self.initial,
            &mut |_, step, _| schedule[step].clone(),
            self.params,
            self.chain,
            self.initial_regime,
            &cfg,
        )
    }

    /// J of an open-loop schedule under the problem's common random numbers.
    pub fn evaluate(&self, schedule: &[ControlField]) -> Result<Estimate> {
        let costs = integrator::run_ensemble(self.n_paths, 0, |k, _| {
            self.simulate(k, schedule).map(|r| path_cost(self.grid, &r, self.cost, self.step.dt))
        })?;
        Ok(Estimate::from_samples(&costs))
    }

    pub fn constant_schedule(&self, u1: f64, u2: f64) -> Vec<ControlField> {
        vec![ControlField::constant(self.grid.n_cells(), u1, u2); self.step.n_steps()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepIteration {
    pub iter: usize,
    pub objective: Estimate,
    /// ‖Π(u_regular) − u‖ / max(‖u‖, floor) at this iterate
    pub control_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSolution {
    /// one field per step, applied on [t_k, t_{k+1})
    pub control: Vec<ControlField>,
    pub objective: Estimate,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<SweepIteration>,
    /// projected-gradient residual of the returned control
    pub stationarity_residual: f64,
    /// iterations whose J rose by more than one standard error
    pub descent_violations: Vec<usize>,
    pub clamps: u64,
}

const CHUNK: usize = 8;

struct Pass {
    costs: Vec<f64>,
    raw_sum: Vec<f64>,
    clamps: u64,
}

// Forward under `schedule`, backward adjoint, and summed regular controls;
// chunked so the reduction order is independent of the thread count.
fn sweep_pass(pb: &Problem<'_>, schedule: &[ControlField], scheme: AdjointScheme) -> Result<Pass> {
    let cells = pb.grid.n_cells();
    let steps = pb.step.n_steps();
    let chunks: Vec<Result<Pass>> = (0..pb.n_paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Pass { costs: Vec::new(), raw_sum: vec![0.0; 2 * steps * cells], clamps: 0 };
            for k in c * CHUNK..((c + 1) * CHUNK).min(pb.n_paths) {
                let rec = pb.simulate(k, schedule)?;
                acc.costs.push(path_cost(pb.grid, &rec, pb.cost, pb.step.dt));
                acc.clamps += rec.clamps;
                integrator::backward_sweep_with(pb.grid, &rec, pb.params, pb.cost, pb.step.dt, scheme, |j, p| {
                    if j == steps {
                        return;
                    }
                    let x = &rec.states[j];
                    let par = pb.params.regime(rec.regimes[j]);
                    for cell in 0..cells {
                        let u = regular_control_cell(
                            par,
                            pb.cost,
                            [x.s[cell], x.i[cell], x.v[cell]],
                            [p.p1[cell], p.p2[cell], p.p3[cell]],
                        );
                        let base = 2 * (j * cells + cell);
                        acc.raw_sum[base] += u[0];
                        acc.raw_sum[base + 1] += u[1];
                    }
                })?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = Pass { costs: Vec::with_capacity(pb.n_paths), raw_sum: vec![0.0; 2 * steps * cells], clamps: 0 };
    for c in chunks {
        let c = c?;
        total.costs.extend(c.costs);
        total.clamps += c.clamps;
        for (a, b) in total.raw_sum.iter_mut().zip(&c.raw_sum) {
            *a += b;
        }
    }
    Ok(total)
}

fn l2(s: &[ControlField]) -> f64 {
    s.iter()
        .flat_map(|u| u.u1.iter().chain(&u.u2))
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Floor on ‖u‖ in the relative change, as a fraction of the norm of the
/// all-ones field; without it an optimum at u ≡ 0 is never declared converged
/// because every damped step shrinks ‖u‖ and ‖Δu‖ alike.
pub const CHANGE_FLOOR: f64 = 1e-2;

fn relative_change(u: &[ControlField], new: &[ControlField]) -> f64 {
    let diff: f64 = u
        .iter()
        .zip(new)
        .flat_map(|(a, b)| a.u1.iter().zip(&b.u1).chain(a.u2.iter().zip(&b.u2)))
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let entries: usize = u.iter().map(|f| f.u1.len() + f.u2.len()).sum();
    let norm = l2(u).max(CHANGE_FLOOR * (entries as f64).sqrt());
    if diff == 0.0 {
        0.0
    } else {
        diff / norm
    }
}

pub fn forward_backward_sweep(pb: &Problem<'_>, cfg: &SweepConfig) -> Result<ControlSolution> {
    let mut v = cfg.validate();
    v.extend(pb.cost.validate());
    v.check(pb.n_paths >= 1, || "stepping.n_paths: must be >= 1".into());
    v.extend(pb.step.validate(pb.grid, pb.params));
    v.into_result()?;

    let cells = pb.grid.n_cells();
    let steps = pb.step.n_steps();
    let bounds = cfg.bounds();
    let [a, b] = bounds.clamp(cfg.initial_control[0], cfg.initial_control[1]);
    let mut u = pb.constant_schedule(a, b);
    let mut history = Vec::new();
    let mut violations = Vec::new();
    let inv_n = 1.0 / pb.n_paths as f64;

    for iter in 0..cfg.max_iters {
        let pass = sweep_pass(pb, &u, cfg.scheme)?;
        let j = Estimate::from_samples(&pass.costs);
        let target: Vec<ControlField> = (0..steps)
            .map(|s| {
                let mut f = ControlField::zeros(cells);
                for c in 0..cells {
                    let base = 2 * (s * cells + c);
                    let [x, y] = bounds.clamp(pass.raw_sum[base] * inv_n, pass.raw_sum[base + 1] * inv_n);
                    f.u1[c] = x;
                    f.u2[c] = y;
                }
                f
            })
            .collect();
        let change = relative_change(&u, &target);
        if let Some(prev) = history.last() {
            let prev: &SweepIteration = prev;
            if j.mean > prev.objective.mean + prev.objective.std_error {
                violations.push(iter);
            }
        }
        history.push(SweepIteration { iter, objective: j, control_change: change });
        let converged = change <= cfg.tol;
        if converged || iter + 1 == cfg.max_iters {
            return Ok(ControlSolution {
                control: u,
                objective: j,
                iterations: iter + 1,
                converged,
                history,
                stationarity_residual: change,
                descent_violations: violations,
                clamps: pass.clamps,
            });
        }
        for (cur, t) in u.iter_mut().zip(&target) {
            for c in 0..cells {
                cur.u1[c] = (1.0 - cfg.relax) * cur.u1[c] + cfg.relax * t.u1[c];
                cur.u2[c] = (1.0 - cfg.relax) * cur.u2[c] + cfg.relax * t.u2[c];
            }
        }
    }
    unreachable!("loop returns on its last iteration")
}
