//! Off-policy integral reinforcement learning on spatially averaged states.
//!
//! V(x, t) = Σ_j hat_j(t) Σ_m c_{jm} φ_m(x) with the ten monomials of degree
//! at most two in x = (S̄, Ī, V̄). The improved policy is parameterized as
//!
//! u₁ = S·w₁(x,t)/(2τ₁),  u₂ = mI/(1+ηI)·w₂(x,t)/(2τ₂),
//!
//! with w in span{1, S, I, V} × hats, the span of the value-gradient
//! differences V_S − V_V and V_I − V_V of the quadratic basis. Both sets of
//! coefficients come out of one least-squares solve of the windowed
//! Lyapunov identity
//!
//! V(x(t−δ), t−δ) − V(x(t), t) − ∫ S w₁ (u₁ − u₁ⁱ) − ∫ (mI/(1+ηI)) w₂ (u₂ − u₂ⁱ)
//!     = ∫ (A₁S + A₂I + τ₁(u₁ⁱ)² + τ₂(u₂ⁱ)²),
//!
//! using data generated by a behavior control u.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::{Bounds, Estimate};
use crate::error::{Error, Result, Violations};
use crate::grid::SpatialGrid;
use crate::integrator::{self, StepConfig};
use crate::model::{self, ControlField, CostParams, FieldState, RegimeParams, SivParams};
use crate::regime::RegimeChain;
use crate::seed;

pub const MONOMIALS: [&str; 10] = ["1", "S", "I", "V", "S^2", "I^2", "V^2", "SI", "SV", "IV"];
pub const POLICY_FEATURES: [&str; 4] = ["1", "S", "I", "V"];

#[inline]
pub fn monomials(x: [f64; 3]) -> [f64; 10] {
    let [s, i, v] = x;
    [1.0, s, i, v, s * s, i * i, v * v, s * i, s * v, i * v]
}

#[inline]
fn policy_features(x: [f64; 3]) -> [f64; 4] {
    [1.0, x[0], x[1], x[2]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub time_knots: Vec<f64>,
}

impl BasisSpec {
    pub fn new(time_knots: Vec<f64>) -> Result<Self> {
        let mut v = Violations::new();
        v.check(time_knots.len() >= 2, || "irl.basis: need at least two knots".into());
        v.check(time_knots.first() == Some(&0.0), || "irl.basis: first knot must be 0".into());
        v.check(time_knots.windows(2).all(|w| w[0] < w[1]), || "irl.basis: knots must be strictly increasing".into());
        v.into_result()?;
        Ok(Self { time_knots })
    }

    /// Evenly spaced knots 0, h, …, t_f with h as close to `spacing` as fits.
    pub fn uniform(t_final: f64, spacing: f64) -> Result<Self> {
        if !(t_final > 0.0 && spacing > 0.0) {
            return Err(Error::invalid(format!(
                "irl.knot_spacing: need positive horizon and spacing, got {t_final} and {spacing}"
            )));
        }
        let n = ((t_final / spacing).round() as usize).max(1);
        Self::new((0..=n).map(|k| t_final * k as f64 / n as f64).collect())
    }

    pub fn n_knots(&self) -> usize {
        self.time_knots.len()
    }

    pub fn t_final(&self) -> f64 {
        *self.time_knots.last().unwrap()
    }

    /// (j, w_j, w_{j+1}) with t clamped into the knot range.
    #[inline]
    pub fn hat(&self, t: f64) -> (usize, f64, f64) {
        let k = &self.time_knots;
        let n = k.len();
        let t = t.clamp(k[0], k[n - 1]);
        let j = k.partition_point(|&x| x <= t).saturating_sub(1).min(n - 2);
        let fr = (t - k[j]) / (k[j + 1] - k[j]);
        (j, 1.0 - fr, fr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueApprox {
    pub basis: BasisSpec,
    /// one row of monomial coefficients per knot
    pub coeffs: Vec<[f64; 10]>,
}

impl ValueApprox {
    pub fn zero(basis: BasisSpec) -> Self {
        let n = basis.n_knots();
        Self { basis, coeffs: vec![[0.0; 10]; n] }
    }

    pub fn value(&self, x: [f64; 3], t: f64) -> f64 {
        let (j, w0, w1) = self.basis.hat(t);
        let phi = monomials(x);
        (0..10).map(|m| phi[m] * (w0 * self.coeffs[j][m] + w1 * self.coeffs[j + 1][m])).sum()
    }

    /// ∂V/∂(S, I, V).
    pub fn gradient(&self, x: [f64; 3], t: f64) -> [f64; 3] {
        let (j, w0, w1) = self.basis.hat(t);
        let c: Vec<f64> = (0..10).map(|m| w0 * self.coeffs[j][m] + w1 * self.coeffs[j + 1][m]).collect();
        let [s, i, v] = x;
        [
            c[1] + 2.0 * c[4] * s + c[7] * i + c[8] * v,
            c[2] + 2.0 * c[5] * i + c[7] * s + c[9] * v,
            c[3] + 2.0 * c[6] * v + c[8] * s + c[9] * i,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyComponent {
    Constant(f64),
    /// per-knot coefficients on {1, S, I, V}
    Feedback(Vec<[f64; 4]>),
}

impl PolicyComponent {
    fn weight(&self, basis: &BasisSpec, x: [f64; 3], t: f64) -> f64 {
        match self {
            PolicyComponent::Constant(_) => unreachable!("constant components have no weight"),
            PolicyComponent::Feedback(w) => {
                let (j, a, b) = basis.hat(t);
                let psi = policy_features(x);
                (0..4).map(|k| psi[k] * (a * w[j][k] + b * w[j + 1][k])).sum()
            }
        }
    }
}

/// Feedback law on spatial means; always box-valued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrlPolicy {
    pub basis: BasisSpec,
    pub u1: PolicyComponent,
    pub u2: PolicyComponent,
    pub bounds: Bounds,
}

impl IrlPolicy {
    pub fn constant(basis: BasisSpec, u: [f64; 2], bounds: Bounds) -> Self {
        Self { basis, u1: PolicyComponent::Constant(u[0]), u2: PolicyComponent::Constant(u[1]), bounds }
    }

    /// Unclamped (u₁, u₂).
    pub fn raw(&self, x: [f64; 3], t: f64, par: &RegimeParams, cost: &CostParams) -> [f64; 2] {
        let u1 = match &self.u1 {
            PolicyComponent::Constant(c) => *c,
            comp => x[0] * comp.weight(&self.basis, x, t) / (2.0 * cost.tau1),
        };
        let u2 = match &self.u2 {
            PolicyComponent::Constant(c) => *c,
            comp => par.m * x[1] / (1.0 + par.eta * x[1]) * comp.weight(&self.basis, x, t) / (2.0 * cost.tau2),
        };
        [u1, u2]
    }

    pub fn control(&self, x: [f64; 3], t: f64, par: &RegimeParams, cost: &CostParams) -> [f64; 2] {
        let [a, b] = self.raw(x, t, par, cost);
        self.bounds.clamp(a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BehaviorPolicy {
    /// fresh uniform draw in the box for every δ-window
    Uniform,
    /// per-path level L drawn uniformly in the box, then per-window draws
    /// uniform on [L − jitter, L + jitter] ∩ box
    Persistent { jitter: f64 },
    Constant([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialSampling {
    /// every path starts from the given initial state
    Fixed,
    /// spatially uniform initial fields with (S, I, V) drawn uniformly in the box
    Uniform { lo: [f64; 3], hi: [f64; 3] },
}

/// Averaged path: x has steps+1 entries, u and regimes one per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathData {
    pub x: Vec<[f64; 3]>,
    pub u: Vec<[f64; 2]>,
    pub regimes: Vec<usize>,
}

/// Steps k0..k1 of one path; `cost` is the behavior running cost with the
/// objective's quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub path: usize,
    pub k0: usize,
    pub k1: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dt: f64,
    pub t_final: f64,
    /// |Γ|, converting means into spatial integrals
    pub length: f64,
    pub window_steps: usize,
    pub paths: Vec<PathData>,
    pub windows: Vec<Window>,
}

impl Dataset {
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// (x(t−δ), x(t), regime at t−δ, applied controls, cost integral)
    pub fn transition(&self, w: &Window) -> ([f64; 3], [f64; 3], usize, &[[f64; 2]], f64) {
        let p = &self.paths[w.path];
        (p.x[w.k0], p.x[w.k1], p.regimes[w.k0], &p.u[w.k0..w.k1], w.cost)
    }
}

fn behavior_draw(rng: &mut impl Rng, b: &BehaviorPolicy, level: [f64; 2], bounds: &Bounds) -> [f64; 2] {
    let box_ = [bounds.u1, bounds.u2];
    match b {
        BehaviorPolicy::Uniform => [0, 1].map(|c| rng.random_range(box_[c][0]..=box_[c][1])),
        BehaviorPolicy::Persistent { jitter } => [0, 1].map(|c| {
            let lo = (level[c] - jitter).max(box_[c][0]);
            let hi = (level[c] + jitter).min(box_[c][1]);
            rng.random_range(lo..=hi)
        }),
        BehaviorPolicy::Constant(u) => bounds.clamp(u[0], u[1]),
    }
}

pub struct CollectSpec<'a> {
    pub grid: &'a SpatialGrid,
    pub initial: &'a FieldState,
    pub initial_sampling: &'a InitialSampling,
    pub params: &'a SivParams,
    pub chain: &'a RegimeChain,
    pub initial_regime: usize,
    pub cost: &'a CostParams,
    /// rng_seed is the master seed
    pub step: &'a StepConfig,
    pub bounds: Bounds,
}

pub fn collect_transitions(spec: &CollectSpec<'_>, behavior: &BehaviorPolicy, delta: f64, n_paths: usize) -> Result<Dataset> {
    let step = spec.step;
    let ws = (delta / step.dt).round() as usize;
    let mut v = Violations::new();
    v.check(
        delta > 0.0 && ws >= 1 && (ws as f64 * step.dt - delta).abs() <= 1e-9 * delta,
        || format!("irl.delta: must be a positive multiple of dt {}, got {delta}", step.dt),
    );
    v.check(ws <= step.n_steps(), || format!("irl.delta: {delta} exceeds the horizon"));
    v.check(n_paths >= 1, || "irl.n_paths: must be >= 1".into());
    if let BehaviorPolicy::Persistent { jitter } = behavior {
        v.check(*jitter >= 0.0, || "irl.behavior.jitter: must be >= 0".into());
    }
    if let InitialSampling::Uniform { lo, hi } = spec.initial_sampling {
        v.check((0..3).all(|k| 0.0 <= lo[k] && lo[k] <= hi[k]), || "irl.initial_sampling: need 0 <= lo <= hi".into());
    }
    v.into_result()?;
    let cells = spec.grid.n_cells();
    let n_steps = step.n_steps();

    let paths = integrator::run_ensemble(n_paths, step.rng_seed, |_, s| {
        let cfg = step.with_seed(s);
        let mut prng = seed::stream(s, seed::POLICY_STREAM);
        let init = match spec.initial_sampling {
            InitialSampling::Fixed => spec.initial.clone(),
            InitialSampling::Uniform { lo, hi } => {
                let mut r = seed::stream(s, seed::INITIAL_STREAM);
                let x: [f64; 3] = [0, 1, 2].map(|k| if hi[k] > lo[k] { r.random_range(lo[k]..hi[k]) } else { lo[k] });
                FieldState::uniform(spec.grid, x[0], x[1], x[2])
            }
        };
        let level = [0, 1].map(|c| {
            let b = [spec.bounds.u1, spec.bounds.u2][c];
            prng.random_range(b[0]..=b[1])
        });
        let mut current = [0.0; 2];
        let rec = integrator::simulate_path(
            spec.grid,
            &init,
            &mut |_, k, _| {
                if k % ws == 0 {
                    current = behavior_draw(&mut prng, behavior, level, &spec.bounds);
                }
                ControlField::constant(cells, current[0], current[1])
            },
            spec.params,
            spec.chain,
            spec.initial_regime,
            &cfg,
        )?;
        let step_costs: Vec<f64> = (0..n_steps)
            .map(|k| model::running_cost(spec.grid, &rec.states[k], &rec.controls[k], spec.cost) * step.dt)
            .collect();
        let data = PathData {
            x: rec.states.iter().map(|s| s.means()).collect(),
            u: rec.controls.iter().map(|u| [u.u1[0], u.u2[0]]).collect(),
            regimes: rec.regimes[..n_steps].to_vec(),
        };
        Ok((data, step_costs))
    })?;

    let mut windows = Vec::new();
    for (p, (_, costs)) in paths.iter().enumerate() {
        for w in 0..n_steps / ws {
            let (k0, k1) = (w * ws, (w + 1) * ws);
            windows.push(Window { path: p, k0, k1, cost: costs[k0..k1].iter().sum() });
        }
    }
    Ok(Dataset {
        dt: step.dt,
        t_final: step.t_final,
        length: spec.grid.length(),
        window_steps: ws,
        paths: paths.into_iter().map(|(d, _)| d).collect(),
        windows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeOptions {
    pub ridge: f64,
    /// weight of the terminal-condition rows V(x, t_f) = w_h ∫I
    pub terminal_weight: f64,
}

impl Default for LeOptions {
    fn default() -> Self {
        Self { ridge: 1e-8, terminal_weight: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeSolution {
    pub value: ValueApprox,
    /// improved policy; a component whose cross terms vanish on the data
    /// (on-policy data) cannot be identified and keeps the current law
    pub policy: IrlPolicy,
    pub identified: [bool; 2],
    /// residual standard error of the Lyapunov rows
    pub fit_se: f64,
    pub n_rows: usize,
}

/// Relative eigenvalue floor of the scaled normal matrix below which the
/// system counts as rank deficient.
pub const RANK_TOL: f64 = 1e-13;

const ZERO_BLOCK: f64 = 1e-300;

struct Layout {
    n_knots: usize,
    v_cols: usize,
    a_off: Option<usize>,
    b_off: Option<usize>,
    cols: usize,
}

impl Layout {
    fn name(&self, col: usize) -> String {
        let (block, local, names): (&str, usize, &[&str]) = if col < self.v_cols {
            ("V", col, &MONOMIALS)
        } else if Some(col) >= self.a_off && self.a_off.is_some_and(|a| col < a + 4 * self.n_knots) {
            ("u1", col - self.a_off.unwrap(), &POLICY_FEATURES)
        } else {
            ("u2", col - self.b_off.unwrap(), &POLICY_FEATURES)
        };
        format!("{block}[knot {}, {}]", local / names.len(), names[local % names.len()])
    }
}

// Row features for one window: V block, u1 cross block, u2 cross block,
// and right-hand side.
struct RowParts {
    v: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    rhs: f64,
}

fn window_row(
    ds: &Dataset,
    w: &Window,
    current: &IrlPolicy,
    basis: &BasisSpec,
    params: &SivParams,
    cost: &CostParams,
) -> RowParts {
    let k = basis.n_knots();
    let path = &ds.paths[w.path];
    let len = ds.length;
    let mut row = RowParts { v: vec![0.0; 10 * k], a: vec![0.0; 4 * k], b: vec![0.0; 4 * k], rhs: 0.0 };
    for (sign, step) in [(1.0, w.k0), (-1.0, w.k1)] {
        let (j, h0, h1) = basis.hat(ds.time(step));
        let phi = monomials(path.x[step]);
        for m in 0..10 {
            row.v[10 * j + m] += sign * h0 * phi[m];
            row.v[10 * (j + 1) + m] += sign * h1 * phi[m];
        }
    }
    for step in w.k0..w.k1 {
        let x = path.x[step];
        let t = ds.time(step);
        let par = params.regime(path.regimes[step]);
        let ui = current.control(x, t, par, cost);
        let u = path.u[step];
        let (j, h0, h1) = basis.hat(t);
        let psi = policy_features(x);
        let ga = -len * ds.dt * x[0] * (u[0] - ui[0]);
        let gb = -len * ds.dt * par.m * x[1] / (1.0 + par.eta * x[1]) * (u[1] - ui[1]);
        for f in 0..4 {
            row.a[4 * j + f] += ga * h0 * psi[f];
            row.a[4 * (j + 1) + f] += ga * h1 * psi[f];
            row.b[4 * j + f] += gb * h0 * psi[f];
            row.b[4 * (j + 1) + f] += gb * h1 * psi[f];
        }
        row.rhs += len * ds.dt * (cost.a1 * x[0] + cost.a2 * x[1] + cost.tau1 * ui[0] * ui[0] + cost.tau2 * ui[1] * ui[1]);
    }
    row
}

fn assemble(parts: &RowParts, lay: &Layout) -> Vec<f64> {
    let mut r = vec![0.0; lay.cols];
    r[..lay.v_cols].copy_from_slice(&parts.v);
    if let Some(o) = lay.a_off {
        r[o..o + parts.a.len()].copy_from_slice(&parts.a);
    }
    if let Some(o) = lay.b_off {
        r[o..o + parts.b.len()].copy_from_slice(&parts.b);
    }
    r
}

fn terminal_row(ds: &Dataset, basis: &BasisSpec, cost: &CostParams, x: [f64; 3], weight: f64, lay: &Layout) -> (Vec<f64>, f64) {
    let mut r = vec![0.0; lay.cols];
    let (j, h0, h1) = basis.hat(basis.t_final());
    let phi = monomials(x);
    for m in 0..10 {
        r[10 * j + m] += weight * h0 * phi[m];
        r[10 * (j + 1) + m] += weight * h1 * phi[m];
    }
    (r, weight * cost.terminal_weight * ds.length * x[1])
}

pub fn solve_integral_le(
    ds: &Dataset,
    current: &IrlPolicy,
    basis: &BasisSpec,
    params: &SivParams,
    cost: &CostParams,
    opts: &LeOptions,
) -> Result<LeSolution> {
    let mut v = Violations::new();
    v.check(!ds.windows.is_empty(), || "irl: dataset has no windows".into());
    v.check(opts.ridge >= 0.0, || "irl.ridge: must be >= 0".into());
    v.check(opts.terminal_weight > 0.0, || "irl.terminal_weight: must be positive".into());
    v.check((basis.t_final() - ds.t_final).abs() <= 1e-9 * ds.t_final, || {
        "irl.basis: last knot must equal the data horizon".into()
    });
    v.extend(cost.validate());
    v.into_result()?;

    let k = basis.n_knots();
    let rows: Vec<RowParts> = ds.windows.iter().map(|w| window_row(ds, w, current, basis, params, cost)).collect();
    let block_live = |f: fn(&RowParts) -> &Vec<f64>| rows.iter().any(|r| f(r).iter().any(|x| x.abs() > ZERO_BLOCK));
    let identified = [block_live(|r| &r.a), block_live(|r| &r.b)];
    let v_cols = 10 * k;
    let a_off = identified[0].then_some(v_cols);
    let b_off = identified[1].then(|| v_cols + if identified[0] { 4 * k } else { 0 });
    let cols = v_cols + 4 * k * identified.iter().filter(|x| **x).count();
    let lay = Layout { n_knots: k, v_cols, a_off, b_off, cols };

    // Ordered accumulation of the normal equations.
    let mut g = DMatrix::<f64>::zeros(cols, cols);
    let mut rhs = DVector::<f64>::zeros(cols);
    let mut add_row = |r: &[f64], y: f64| {
        let nz: Vec<usize> = (0..cols).filter(|&c| r[c] != 0.0).collect();
        for &a in &nz {
            rhs[a] += r[a] * y;
            for &b in &nz {
                g[(a, b)] += r[a] * r[b];
            }
        }
    };
    for parts in &rows {
        add_row(&assemble(parts, &lay), parts.rhs);
    }
    let terminal: Vec<[f64; 3]> = ds.paths.iter().map(|p| *p.x.last().unwrap()).collect();
    for x in &terminal {
        let (r, y) = terminal_row(ds, basis, cost, *x, opts.terminal_weight, &lay);
        add_row(&r, y);
    }

    let scale: Vec<f64> = (0..cols).map(|c| g[(c, c)].sqrt()).collect();
    let dead: Vec<String> = (0..cols).filter(|&c| !(scale[c] > 0.0)).map(|c| lay.name(c)).collect();
    if !dead.is_empty() {
        return Err(Error::RankDeficient { directions: dead });
    }
    let mut gs = g.clone();
    for a in 0..cols {
        for b in 0..cols {
            gs[(a, b)] /= scale[a] * scale[b];
        }
    }
    let eig = SymmetricEigen::new(gs.clone());
    let lmax = eig.eigenvalues.max();
    let weak: Vec<usize> = (0..cols).filter(|&e| eig.eigenvalues[e] <= RANK_TOL * lmax).collect();
    if !weak.is_empty() {
        let mut names: Vec<String> = weak
            .iter()
            .map(|&e| lay.name(eig.eigenvectors.column(e).iamax()))
            .collect();
        names.dedup();
        return Err(Error::RankDeficient { directions: names });
    }
    for c in 0..cols {
        gs[(c, c)] += opts.ridge;
    }
    let bs = DVector::from_iterator(cols, (0..cols).map(|c| rhs[c] / scale[c]));
    let y = gs
        .cholesky()
        .ok_or_else(|| Error::Numeric("normal equations are not positive definite".into()))?
        .solve(&bs);
    let x: Vec<f64> = (0..cols).map(|c| y[c] / scale[c]).collect();

    let dot = |r: &[f64]| r.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
    let rss: f64 = rows.iter().map(|p| (dot(&assemble(p, &lay)) - p.rhs).powi(2)).sum();
    let n = rows.len();
    let dof = if n > cols { n - cols } else { n };
    let fit_se = (rss / dof as f64).sqrt();

    let coeffs = (0..k).map(|j| std::array::from_fn(|m| x[10 * j + m])).collect();
    let block = |off: usize| -> Vec<[f64; 4]> { (0..k).map(|j| std::array::from_fn(|f| x[off + 4 * j + f])).collect() };
    let policy = IrlPolicy {
        basis: basis.clone(),
        u1: a_off.map_or_else(|| current.u1.clone(), |o| PolicyComponent::Feedback(block(o))),
        u2: b_off.map_or_else(|| current.u2.clone(), |o| PolicyComponent::Feedback(block(o))),
        bounds: current.bounds,
    };
    Ok(LeSolution {
        value: ValueApprox { basis: basis.clone(), coeffs },
        policy,
        identified,
        fit_se,
        n_rows: n + terminal.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProbeSet {
    /// window start states drawn from the dataset itself
    DataStates,
    /// Latin hypercube in the box × a shuffled uniform time grid on [0, t_f)
    LatinHypercube { lo: [f64; 3], hi: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrlConfig {
    pub delta: f64,
    pub i_max: usize,
    pub behavior: BehaviorPolicy,
    pub ridge: f64,
    pub n_paths: usize,
    pub knot_spacing: f64,
    pub initial_policy: [f64; 2],
    pub initial_sampling: InitialSampling,
    pub terminal_weight: f64,
    pub bounds: Bounds,
    /// paths for each J estimate (common random numbers across iterations)
    pub eval_paths: usize,
    pub eval_seed: u64,
    pub probe: ProbeSet,
    pub n_probes: usize,
    pub probe_seed: u64,
}

impl Default for IrlConfig {
    fn default() -> Self {
        Self {
            delta: 0.2,
            i_max: 8,
            behavior: BehaviorPolicy::Persistent { jitter: 0.3 },
            ridge: 1e-8,
            n_paths: 500,
            knot_spacing: 1.0,
            initial_policy: [0.5, 0.5],
            initial_sampling: InitialSampling::Uniform { lo: [0.0, 0.0, 0.0], hi: [2.0, 0.3, 2.0] },
            terminal_weight: 100.0,
            bounds: Bounds::default(),
            eval_paths: 500,
            eval_seed: 7,
            probe: ProbeSet::DataStates,
            n_probes: 100,
            probe_seed: 5,
        }
    }
}

impl IrlConfig {
    pub fn validate(&self) -> Violations {
        let mut v = Violations::new();
        v.check(self.delta > 0.0, || format!("irl.delta: must be positive, got {}", self.delta));
        v.check(self.i_max >= 1, || "irl.i_max: must be >= 1".into());
        v.check(self.ridge >= 0.0, || "irl.ridge: must be >= 0".into());
        v.check(self.n_paths >= 1, || "irl.n_paths: must be >= 1".into());
        v.check(self.eval_paths >= 1, || "irl.eval_paths: must be >= 1".into());
        v.check(self.n_probes >= 1, || "irl.n_probes: must be >= 1".into());
        v.check(self.knot_spacing > 0.0, || "irl.knot_spacing: must be positive".into());
        v.check(self.terminal_weight > 0.0, || "irl.terminal_weight: must be positive".into());
        for (c, u) in self.initial_policy.iter().enumerate() {
            v.check((0.0..=1.0).contains(u), || format!("irl.initial_policy[{c}]: must lie in [0,1]"));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrlIteration {
    pub iter: usize,
    /// V⁽ⁱ⁾, the value of `policy`
    pub value: ValueApprox,
    /// u⁽ⁱ⁾
    pub policy: IrlPolicy,
    /// J(u⁽ⁱ⁾)
    pub objective: Estimate,
    pub mean_probe_value: f64,
    pub fit_se: f64,
    /// RMS over probes of |u⁽ⁱ⁺¹⁾ − u⁽ⁱ⁾|
    pub policy_change: f64,
    /// max over probes of |V⁽ⁱ⁾(x, t_f) − w_h ∫I|
    pub terminal_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrlResult {
    pub history: Vec<IrlIteration>,
    /// u⁽ⁱ_max⁾
    pub final_policy: IrlPolicy,
    pub final_objective: Estimate,
    pub probes: Vec<([f64; 3], f64)>,
    pub n_windows: usize,
}

/// J of a closed-loop policy on spatial means.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy(
    grid: &SpatialGrid,
    initial: &FieldState,
    params: &SivParams,
    chain: &RegimeChain,
    initial_regime: usize,
    cost: &CostParams,
    step: &StepConfig,
    n_paths: usize,
    policy: &IrlPolicy,
) -> Result<Estimate> {
    let cells = grid.n_cells();
    let costs = integrator::run_ensemble(n_paths, step.rng_seed, |_, s| {
        let cfg = step.with_seed(s);
        let rec = integrator::simulate_path(
            grid,
            initial,
            &mut |st, _, r| {
                let [a, b] = policy.control(st.means(), st.time, params.regime(r), cost);
                ControlField::constant(cells, a, b)
            },
            params,
            chain,
            initial_regime,
            &cfg,
        )?;
        Ok(crate::control::path_cost(grid, &rec, cost, step.dt))
    })?;
    Ok(Estimate::from_samples(&costs))
}

fn probe_points(ds: &Dataset, probe: &ProbeSet, n: usize, seed_: u64) -> Vec<([f64; 3], f64)> {
    let mut rng = seed::stream(seed_, 0);
    match probe {
        ProbeSet::DataStates => (0..n)
            .map(|_| {
                let w = &ds.windows[rng.random_range(0..ds.windows.len())];
                (ds.paths[w.path].x[w.k0], ds.time(w.k0))
            })
            .collect(),
        ProbeSet::LatinHypercube { lo, hi } => {
            let mut cols: Vec<Vec<usize>> = (0..3).map(|_| (0..n).collect()).collect();
            for c in cols.iter_mut() {
                c.shuffle(&mut rng);
            }
            let mut times: Vec<f64> = (0..n).map(|k| ds.t_final * k as f64 / n as f64).collect();
            times.shuffle(&mut rng);
            (0..n)
                .map(|k| {
                    let x = [0, 1, 2].map(|d| {
                        let u = (cols[d][k] as f64 + rng.random::<f64>()) / n as f64;
                        lo[d] + (hi[d] - lo[d]) * u
                    });
                    (x, times[k])
                })
                .collect()
        }
    }
}

pub struct IrlProblem<'a> {
    pub grid: &'a SpatialGrid,
    pub initial: &'a FieldState,
    pub params: &'a SivParams,
    pub chain: &'a RegimeChain,
    pub initial_regime: usize,
    pub cost: &'a CostParams,
    /// rng_seed is the data-collection master seed
    pub step: &'a StepConfig,
}

pub fn irl_policy_iteration(pb: &IrlProblem<'_>, cfg: &IrlConfig) -> Result<IrlResult> {
    let mut v = cfg.validate();
    v.extend(pb.cost.validate());
    v.into_result()?;
    let basis = BasisSpec::uniform(pb.step.t_final, cfg.knot_spacing)?;
    let spec = CollectSpec {
        grid: pb.grid,
        initial: pb.initial,
        initial_sampling: &cfg.initial_sampling,
        params: pb.params,
        chain: pb.chain,
        initial_regime: pb.initial_regime,
        cost: pb.cost,
        step: pb.step,
        bounds: cfg.bounds,
    };
    let ds = collect_transitions(&spec, &cfg.behavior, cfg.delta, cfg.n_paths)?;
    let probes = probe_points(&ds, &cfg.probe, cfg.n_probes, cfg.probe_seed);
    let eval_step = pb.step.with_seed(cfg.eval_seed);
    let evaluate = |pol: &IrlPolicy| {
        evaluate_policy(pb.grid, pb.initial, pb.params, pb.chain, pb.initial_regime, pb.cost, &eval_step, cfg.eval_paths, pol)
    };
    let opts = LeOptions { ridge: cfg.ridge, terminal_weight: cfg.terminal_weight };
    let probe_par = pb.params.regime(pb.initial_regime);

    let mut policy = IrlPolicy::constant(basis.clone(), cfg.initial_policy, cfg.bounds);
    let mut history = Vec::with_capacity(cfg.i_max);
    for iter in 0..cfg.i_max {
        let sol = solve_integral_le(&ds, &policy, &basis, pb.params, pb.cost, &opts)?;
        let mean_probe_value =
            probes.iter().map(|(x, t)| sol.value.value(*x, *t)).sum::<f64>() / probes.len() as f64;
        let terminal_error = probes
            .iter()
            .map(|(x, _)| (sol.value.value(*x, ds.t_final) - pb.cost.terminal_weight * ds.length * x[1]).abs())
            .fold(0.0, f64::max);
        let policy_change = (probes
            .iter()
            .map(|(x, t)| {
                let a = policy.control(*x, *t, probe_par, pb.cost);
                let b = sol.policy.control(*x, *t, probe_par, pb.cost);
                (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
            })
            .sum::<f64>()
            / probes.len() as f64)
            .sqrt();
        history.push(IrlIteration {
            iter,
            value: sol.value,
            objective: evaluate(&policy)?,
            policy,
            mean_probe_value,
            fit_se: sol.fit_se,
            policy_change,
            terminal_error,
        });
        policy = sol.policy;
    }
    let final_objective = evaluate(&policy)?;
    Ok(IrlResult { history, final_policy: policy, final_objective, probes, n_windows: ds.windows.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hats_partition_unity() {
        let b = BasisSpec::uniform(5.0, 1.0).unwrap();
        assert_eq!(b.n_knots(), 6);
        for t in [0.0, 0.3, 1.0, 2.7, 4.99, 5.0] {
            let (j, a, c) = b.hat(t);
            assert!((a + c - 1.0).abs() < 1e-15);
            assert!(b.time_knots[j] <= t && t <= b.time_knots[j + 1]);
        }
        assert!(BasisSpec::new(vec![0.0, 2.0, 1.0]).is_err());
        assert!(BasisSpec::new(vec![0.5, 1.0]).is_err());
    }

    #[test]
    fn gradient_matches_differences() {
        let b = BasisSpec::uniform(2.0, 1.0).unwrap();
        let mut va = ValueApprox::zero(b);
        for (j, row) in va.coeffs.iter_mut().enumerate() {
            for (m, c) in row.iter_mut().enumerate() {
                *c = ((j * 10 + m) as f64 * 0.37).sin();
            }
        }
        let x = [0.7, 0.2, 1.3];
        let g = va.gradient(x, 0.6);
        for d in 0..3 {
            let mut hi = x;
            let mut lo = x;
            hi[d] += 1e-6;
            lo[d] -= 1e-6;
            let fd = (va.value(hi, 0.6) - va.value(lo, 0.6)) / 2e-6;
            assert!((fd - g[d]).abs() < 1e-7);
        }
    }

    #[test]
    fn policy_is_box_valued() {
        let b = BasisSpec::uniform(1.0, 0.5).unwrap();
        let p = IrlPolicy {
            basis: b.clone(),
            u1: PolicyComponent::Feedback(vec![[50.0, -3.0, 1.0, 2.0]; 3]),
            u2: PolicyComponent::Feedback(vec![[-90.0, 1.0, 1.0, 1.0]; 3]),
            bounds: Bounds::default(),
        };
        let par = RegimeParams::regime1();
        let cost = CostParams::default();
        for x in [[0.1, 0.1, 0.1], [5.0, 2.0, 0.0], [0.0, 0.0, 0.0]] {
            let u = p.control(x, 0.3, &par, &cost);
            assert!(u.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }
}
