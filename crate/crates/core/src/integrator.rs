//! Milstein stepping of the state system forward in time and of the adjoint
//! system backward in time, with regime switching frozen per step.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violations};
use crate::grid::{self, SpatialGrid};
use crate::model::{self, ControlField, CostParams, FieldState, RegimeParams, SivParams};
use crate::regime::{self, RegimeChain, RegimePath};
use crate::seed;

/// How Gaussian draws feed the four Brownian motions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// One draw per Brownian motion and cell, standard Milstein corrections.
    #[default]
    Independent,
    /// Compatibility mode: a single draw per cell reused for every noise
    /// term, keeping the legacy correction terms literally (a minus sign on
    /// the S and V corrections, no (1−e)² on the I one).
    SharedZeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub dt: f64,
    pub t_final: f64,
    pub clamp_negative: bool,
    pub rng_seed: u64,
    pub noise: NoiseMode,
}

impl StepConfig {
    pub fn new(dt: f64, t_final: f64, rng_seed: u64) -> Self {
        Self { dt, t_final, clamp_negative: true, rng_seed, noise: NoiseMode::Independent }
    }

    pub fn with_seed(&self, rng_seed: u64) -> Self {
        Self { rng_seed, ..self.clone() }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    pub fn validate(&self, grid: &SpatialGrid, params: &SivParams) -> Violations {
        let mut v = Violations::new();
        let (dt, tf) = (self.dt, self.t_final);
        v.check(dt.is_finite() && dt > 0.0, || format!("stepping.dt: must be positive, got {dt}"));
        v.check(tf.is_finite() && tf > 0.0, || format!("stepping.t_final: must be positive, got {tf}"));
        if !(dt > 0.0 && tf > 0.0) {
            return v;
        }
        v.check(dt <= tf, || format!("stepping.dt: {dt} exceeds t_final {tf}"));
        let n = (tf / dt).round();
        v.check((n * dt - tf).abs() <= 1e-9 * tf, || {
            format!("stepping.t_final: {tf} is not an integer multiple of dt {dt}")
        });
        if !grid.is_homogeneous() {
            let ratio = dt * params.max_diffusivity() / (grid.dx() * grid.dx());
            v.check(ratio <= 0.5, || {
                format!("stepping.dt: diffusion stability bound dt*D/dx^2 <= 0.5 violated ({ratio:.6} with dt={dt}, max D={}, dx={})",
                    params.max_diffusivity(), grid.dx())
            });
        }
        v
    }
}

/// Per-cell standard normal draws for B₁…B₄.
pub type Zeta = [f64; 4];

pub fn draw_zeta(rng: &mut ChaCha8Rng, mode: NoiseMode, out: &mut [Zeta]) {
    for z in out.iter_mut() {
        match mode {
            NoiseMode::Independent => {
                for c in z.iter_mut() {
                    *c = rng.sample(StandardNormal);
                }
            }
            NoiseMode::SharedZeta => {
                let x: f64 = rng.sample(StandardNormal);
                *z = [x; 4];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: FieldState,
    /// negative component-cells before clamping
    pub negatives: usize,
}

/// One Milstein step. A blowup error from here carries step 0; callers that
/// know the step index rewrite it.
#[allow(clippy::too_many_arguments)]
pub fn milstein_state_step(
    grid: &SpatialGrid,
    state: &FieldState,
    control: &ControlField,
    par: &RegimeParams,
    dt: f64,
    zeta: &[Zeta],
    mode: NoiseMode,
    clamp: bool,
) -> Result<StepOutcome> {
    let n = state.n_cells();
    let ls = grid::laplacian(grid, &state.s, par.d1);
    let li = grid::laplacian(grid, &state.i, par.d2);
    let lv = grid::laplacian(grid, &state.v, par.d3);
    let sq = dt.sqrt();
    let sig = par.sigma;
    let e1 = 1.0 - par.e;
    let mut out = FieldState { s: vec![0.0; n], i: vec![0.0; n], v: vec![0.0; n], time: state.time + dt };
    let mut negatives = 0;
    for k in 0..n {
        let (s, i, v) = (state.s[k], state.i[k], state.v[k]);
        let f = model::reaction(par, s, i, v, control.u1[k], control.u2[k]);
        let ds = (f[0] + ls[k]) * dt;
        let di = (f[1] + li[k]) * dt;
        let dv = (f[2] + lv[k]) * dt;
        let (ns, ni, nv) = match mode {
            NoiseMode::Independent => {
                let [z1, z2, z3, z4] = zeta[k];
                (
                    s + ds - sig * s * i * sq * z1 + 0.5 * sig * sig * s * i * i * (z1 * z1 - 1.0) * dt,
                    i + di
                        + sig * s * i * sq * z2
                        + 0.5 * sig * sig * s * s * i * (z2 * z2 - 1.0) * dt
                        + e1 * sig * v * i * sq * z4
                        + 0.5 * e1 * e1 * sig * sig * v * v * i * (z4 * z4 - 1.0) * dt,
                    v + dv - e1 * sig * v * i * sq * z3 + 0.5 * e1 * e1 * sig * sig * v * i * i * (z3 * z3 - 1.0) * dt,
                )
            }
            NoiseMode::SharedZeta => {
                let z = zeta[k][0];
                let c = (z * z - 1.0) * dt;
                (
                    s + ds - sig * s * i * sq * z - 0.5 * sig * sig * s * i * i * c,
                    i + di
                        + sig * s * i * sq * z
                        + 0.5 * sig * sig * s * s * i * c
                        + e1 * sig * v * i * sq * z
                        + 0.5 * sig * sig * v * v * i * c,
                    v + dv - e1 * sig * v * i * sq * z - 0.5 * e1 * e1 * sig * sig * v * i * i * c,
                )
            }
        };
        for (term, x) in [("S", ns), ("I", ni), ("V", nv)] {
            if !x.is_finite() {
                return Err(Error::Blowup { step: 0, cell: k, term });
            }
            if x < 0.0 {
                negatives += 1;
            }
        }
        if clamp {
            out.s[k] = ns.max(0.0);
            out.i[k] = ni.max(0.0);
            out.v[k] = nv.max(0.0);
        } else {
            out.s[k] = ns;
            out.i[k] = ni;
            out.v[k] = nv;
        }
    }
    Ok(StepOutcome { state: out, negatives })
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::Blowup { cell, term, .. } => Error::Blowup { step, cell, term },
        other => other,
    }
}

/// Incremental simulator for one path; lets callers snapshot or feed back
/// without storing the whole record.
pub struct PathStepper<'a> {
    grid: &'a SpatialGrid,
    params: &'a SivParams,
    cfg: &'a StepConfig,
    regimes: RegimePath,
    rng: ChaCha8Rng,
    state: FieldState,
    step: usize,
    n_steps: usize,
    clamps: u64,
    zeta: Vec<Zeta>,
}

impl<'a> PathStepper<'a> {
    pub fn new(
        grid: &'a SpatialGrid,
        params: &'a SivParams,
        chain: &RegimeChain,
        initial_regime: usize,
        initial: FieldState,
        cfg: &'a StepConfig,
    ) -> Result<Self> {
        let mut v = cfg.validate(grid, params);
        v.check(chain.n_states() == params.n_regimes(), || {
            format!(
                "chain.generator: {} states but {} parameter sets",
                chain.n_states(),
                params.n_regimes()
            )
        });
        v.into_result()?;
        initial.validate(grid)?;
        let regimes = regime::sample_path(chain, initial_regime, cfg.t_final, cfg.rng_seed)?;
        Ok(Self {
            grid,
            params,
            cfg,
            regimes,
            rng: seed::stream(cfg.rng_seed, seed::NOISE_STREAM),
            state: FieldState { time: 0.0, ..initial },
            step: 0,
            n_steps: cfg.n_steps(),
            clamps: 0,
            zeta: vec![[0.0; 4]; grid.n_cells()],
        })
    }

    pub fn state(&self) -> &FieldState {
        &self.state
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn done(&self) -> bool {
        self.step >= self.n_steps
    }

    /// Regime in force on the coming step (left endpoint).
    pub fn regime(&self) -> usize {
        self.regimes.state_at(self.cfg.time(self.step))
    }

    pub fn regime_path(&self) -> &RegimePath {
        &self.regimes
    }

    pub fn clamps(&self) -> u64 {
        self.clamps
    }

    /// Draws used by the most recent step.
    pub fn last_zeta(&self) -> &[Zeta] {
        &self.zeta
    }

    pub fn advance(&mut self, control: &ControlField) -> Result<()> {
        let r = self.regime();
        draw_zeta(&mut self.rng, self.cfg.noise, &mut self.zeta);
        let out = milstein_state_step(
            self.grid,
            &self.state,
            control,
            self.params.regime(r),
            self.cfg.dt,
            &self.zeta,
            self.cfg.noise,
            self.cfg.clamp_negative,
        )
        .map_err(|e| at_step(e, self.step))?;
        self.step += 1;
        self.clamps += out.negatives as u64;
        self.state = out.state;
        self.state.time = self.cfg.time(self.step);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<FieldState>,
    /// regime in force on [t_k, t_{k+1}); the last entry repeats the final regime
    pub regimes: Vec<usize>,
    pub controls: Vec<ControlField>,
    pub noise: Vec<Vec<Zeta>>,
    pub regime_path: RegimePath,
    pub clamps: u64,
}

impl TrajectoryRecord {
    pub fn n_steps(&self) -> usize {
        self.controls.len()
    }

    /// Layout: b"SIVTRAJ1", then u64 n_cells, u64 n_records (= steps + 1),
    /// then per record t, regime, S[n], I[n], V[n]; all little-endian,
    /// reals as f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.states.first().map_or(0, |s| s.n_cells());
        let mut out = Vec::with_capacity(24 + self.states.len() * (2 + 3 * n) * 8);
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(self.states.len() as u64).to_le_bytes());
        for (k, st) in self.states.iter().enumerate() {
            out.extend_from_slice(&self.times[k].to_le_bytes());
            out.extend_from_slice(&(self.regimes[k] as f64).to_le_bytes());
            for f in [&st.s, &st.i, &st.v] {
                for x in f {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }
}

pub const BINARY_MAGIC: &[u8; 8] = b"SIVTRAJ1";

/// Decoded binary dump: (times, regimes, states).
pub fn read_binary(bytes: &[u8]) -> Result<(Vec<f64>, Vec<usize>, Vec<FieldState>)> {
    let bad = |m: &str| Error::invalid(format!("binary trajectory: {m}"));
    if bytes.len() < 24 || &bytes[..8] != BINARY_MAGIC {
        return Err(bad("missing header"));
    }
    let word = |k: usize| -> [u8; 8] { bytes[k..k + 8].try_into().unwrap() };
    let n = u64::from_le_bytes(word(8)) as usize;
    let recs = u64::from_le_bytes(word(16)) as usize;
    if bytes.len() != 24 + recs * (2 + 3 * n) * 8 {
        return Err(bad("length does not match header"));
    }
    let mut pos = 24;
    let mut next = || {
        let x = f64::from_le_bytes(word(pos));
        pos += 8;
        x
    };
    let (mut times, mut regimes, mut states) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..recs {
        let t = next();
        times.push(t);
        regimes.push(next() as usize);
        let mut f = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for comp in f.iter_mut() {
            for x in comp.iter_mut() {
                *x = next();
            }
        }
        let [s, i, v] = f;
        states.push(FieldState { s, i, v, time: t });
    }
    Ok((times, regimes, states))
}

/// Control law evaluated at the left endpoint of each step:
/// (state, step index, regime) -> control.
pub type Policy<'p> = dyn FnMut(&FieldState, usize, usize) -> ControlField + 'p;

pub fn simulate_path(
    grid: &SpatialGrid,
    initial: &FieldState,
    policy: &mut Policy<'_>,
    params: &SivParams,
    chain: &RegimeChain,
    initial_regime: usize,
    cfg: &StepConfig,
) -> Result<TrajectoryRecord> {
    let mut st = PathStepper::new(grid, params, chain, initial_regime, initial.clone(), cfg)?;
    let n = st.n_steps();
    let mut rec = TrajectoryRecord {
        times: Vec::with_capacity(n + 1),
        states: Vec::with_capacity(n + 1),
        regimes: Vec::with_capacity(n + 1),
        controls: Vec::with_capacity(n),
        noise: Vec::with_capacity(n),
        regime_path: st.regime_path().clone(),
        clamps: 0,
    };
    while !st.done() {
        let r = st.regime();
        let u = policy(st.state(), st.step_index(), r);
        rec.times.push(st.state().time);
        rec.states.push(st.state().clone());
        rec.regimes.push(r);
        st.advance(&u)?;
        rec.controls.push(u);
        rec.noise.push(st.last_zeta().to_vec());
    }
    rec.times.push(st.state().time);
    rec.states.push(st.state().clone());
    rec.regimes.push(st.regime_path().state_at(cfg.t_final));
    rec.clamps = st.clamps();
    Ok(rec)
}

/// Ordered parallel map over paths; path k gets seed derive(master, k).
/// The first failing path (by index) determines the error.
pub fn run_ensemble<T, F>(n_paths: usize, master_seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    let out: Vec<Result<T>> = (0..n_paths)
        .into_par_iter()
        .map(|k| f(k, seed::derive(master_seed, k as u64)))
        .collect();
    out.into_iter().collect()
}

/// Costate discretization used by the backward sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjointScheme {
    /// p_i = p_{i+1} + (∂H/∂x + DΔp)Δt − q·ΔB, the exact gradient of the
    /// discrete Hamiltonian; consistent with the regular-control formulas.
    #[default]
    Costate,
    /// The legacy backward lines verbatim (sign pattern included), plus
    /// the running-cost sources A₁, A₂ of the continuous adjoint system.
    Transcribed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointState {
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub p3: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub q3: Vec<f64>,
}

impl AdjointState {
    /// p(T) = ∇h = (0, w, 0), q = 0.
    pub fn terminal(n_cells: usize, weight: f64) -> Self {
        let z = vec![0.0; n_cells];
        Self {
            p1: z.clone(),
            p2: vec![weight; n_cells],
            p3: z.clone(),
            q1: z.clone(),
            q2: z.clone(),
            q3: z,
        }
    }

    pub fn zeros(n_cells: usize) -> Self {
        Self::terminal(n_cells, 0.0)
    }
}

/// ∂H/∂(S, I, V) at one cell, q-terms included.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn hamiltonian_gradient(
    par: &RegimeParams,
    cost: &CostParams,
    x: [f64; 3],
    u: [f64; 2],
    p: [f64; 3],
    q: [f64; 3],
) -> [f64; 3] {
    let [s, i, v] = x;
    let [u1, u2] = u;
    let [p1, p2, p3] = p;
    let [q1, q2, q3] = q;
    let (be, mu, al, sig) = (par.beta, par.mu, par.alpha, par.sigma);
    let e1 = 1.0 - par.e;
    let sat = par.m * u2 / (1.0 + par.eta * i).powi(2);
    [
        cost.a1 - (mu + u1 + be * i) * p1 + be * i * p2 + u1 * p3 - sig * i * q1 + sig * i * q2,
        cost.a2 + (al - be * s) * p1 + (be * s + e1 * be * v - (mu + al) - sat) * p2 + (-e1 * be * v + sat) * p3
            - sig * s * q1
            + (sig * s + e1 * sig * v) * q2
            - e1 * sig * v * q3,
        e1 * be * i * p2 - (mu + e1 * be * i) * p3 + e1 * sig * i * q2 - e1 * sig * i * q3,
    ]
}

/// One backward step p_{i+1} → p_i along the state at index i+1; `zeta`
/// are the draws of the forward step i → i+1.
#[allow(clippy::too_many_arguments)]
pub fn adjoint_step(
    grid: &SpatialGrid,
    next: &AdjointState,
    state_next: &FieldState,
    control: &ControlField,
    par: &RegimeParams,
    cost: &CostParams,
    dt: f64,
    zeta: &[Zeta],
    scheme: AdjointScheme,
) -> Result<AdjointState> {
    let n = state_next.n_cells();
    let l1 = grid::laplacian(grid, &next.p1, par.d1);
    let l2 = grid::laplacian(grid, &next.p2, par.d2);
    let l3 = grid::laplacian(grid, &next.p3, par.d3);
    let sq = dt.sqrt();
    let mut out = AdjointState { p1: vec![0.0; n], p2: vec![0.0; n], p3: vec![0.0; n], ..next.clone() };
    for k in 0..n {
        let x = [state_next.s[k], state_next.i[k], state_next.v[k]];
        let u = [control.u1[k], control.u2[k]];
        let p = [next.p1[k], next.p2[k], next.p3[k]];
        let q = [next.q1[k], next.q2[k], next.q3[k]];
        let z = zeta[k];
        let new = match scheme {
            AdjointScheme::Costate => {
                let h = hamiltonian_gradient(par, cost, x, u, p, q);
                [
                    p[0] + (h[0] + l1[k]) * dt - q[0] * sq * z[0],
                    p[1] + (h[1] + l2[k]) * dt - q[1] * sq * z[1],
                    p[2] + (h[2] + l3[k]) * dt - q[2] * sq * z[2],
                ]
            }
            AdjointScheme::Transcribed => transcribed_cell(par, cost, x, u, p, q, [l1[k], l2[k], l3[k]], dt, z),
        };
        for (term, val) in [("p1", new[0]), ("p2", new[1]), ("p3", new[2])] {
            if !val.is_finite() {
                return Err(Error::Blowup { step: 0, cell: k, term });
            }
        }
        out.p1[k] = new[0];
        out.p2[k] = new[1];
        out.p3[k] = new[2];
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn transcribed_cell(
    par: &RegimeParams,
    cost: &CostParams,
    x: [f64; 3],
    u: [f64; 2],
    p: [f64; 3],
    q: [f64; 3],
    lap: [f64; 3],
    dt: f64,
    z: Zeta,
) -> [f64; 3] {
    let [s, i, v] = x;
    let [u1, u2] = u;
    let [p1, p2, p3] = p;
    let [q1, q2, q3] = q;
    let (be, mu, al, sig) = (par.beta, par.mu, par.alpha, par.sigma);
    let e1 = 1.0 - par.e;
    let sat = par.m * u2 / (1.0 + par.eta * i).powi(2);
    let sq = dt.sqrt();
    let inner1 = ((mu + u1) * s + be * i) * p1 + lap[0] + be * i * p2 + u1 * p3 - sig * i * q1 + sig * i * q2;
    let inner2 = (al - be * s) * p1 + (be * s + e1 * be * v - (mu + al) - sat) * p2 + lap[1]
        - (e1 * be * v - sat) * p3
        - sig * s * q1
        + (sig * s + e1 * sig * v) * q2
        - e1 * sig * v * q3;
    let inner3 = e1 * be * i * p2 - (mu + e1 * be * i) * p3 + lap[2] + e1 * sig * i * q2 - e1 * sig * i * q3;
    [
        p1 - inner1 * dt - q1 * sq * z[0] - 0.5 * q1 * q1 * (z[0] * z[0] - 1.0) * dt + cost.a1 * dt,
        p2 - inner2 * dt - q2 * sq * z[1] - 0.5 * q2 * q2 * (z[1] * z[1] - 1.0) * dt + cost.a2 * dt,
        p3 + inner3 * dt,
    ]
}

/// Walks the adjoint backward from p(T) = (0, w_h, 0), calling `visit`
/// with (index, p_index) for index = n, n−1, …, 0.
pub fn backward_sweep_with(
    grid: &SpatialGrid,
    traj: &TrajectoryRecord,
    params: &SivParams,
    cost: &CostParams,
    dt: f64,
    scheme: AdjointScheme,
    mut visit: impl FnMut(usize, &AdjointState),
) -> Result<()> {
    let n = traj.n_steps();
    let cells = traj.states[0].n_cells();
    let mut p = AdjointState::terminal(cells, cost.terminal_weight);
    visit(n, &p);
    for k in (0..n).rev() {
        let par = params.regime(traj.regimes[k]);
        p = adjoint_step(grid, &p, &traj.states[k + 1], &traj.controls[k], par, cost, dt, &traj.noise[k], scheme)
            .map_err(|e| at_step(e, k))?;
        visit(k, &p);
    }
    Ok(())
}

/// Adjoint states aligned with `traj.states` (index 0 … n).
pub fn adjoint_backward_sweep(
    grid: &SpatialGrid,
    traj: &TrajectoryRecord,
    params: &SivParams,
    cost: &CostParams,
    dt: f64,
    scheme: AdjointScheme,
) -> Result<Vec<AdjointState>> {
    let mut out = vec![AdjointState::zeros(0); traj.states.len()];
    backward_sweep_with(grid, traj, params, cost, dt, scheme, |k, p| out[k] = p.clone())?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(par: RegimeParams) -> SivParams {
        SivParams::single(par).unwrap()
    }

    #[test]
    fn noise_free_step_is_euler() {
        let g = SpatialGrid::new(6, 1.0).unwrap();
        let par = RegimeParams { sigma: 0.0, ..RegimeParams::regime1() };
        let st = FieldState {
            s: vec![0.6, 0.7, 0.5, 0.9, 1.0, 0.2],
            i: vec![0.1, 0.2, 0.05, 0.3, 0.1, 0.0],
            v: vec![1.0; 6],
            time: 0.0,
        };
        let u = ControlField::constant(6, 0.3, 0.4);
        let z = vec![[1.7, -0.3, 2.2, 0.9]; 6];
        let out = milstein_state_step(&g, &st, &u, &par, 0.01, &z, NoiseMode::Independent, true).unwrap();
        let f = model::drift(&g, &st, &u, &par);
        for k in 0..6 {
            assert!((out.state.s[k] - (st.s[k] + f[0][k] * 0.01)).abs() < 1e-15);
            assert!((out.state.i[k] - (st.i[k] + f[1][k] * 0.01)).abs() < 1e-15);
            assert!((out.state.v[k] - (st.v[k] + f[2][k] * 0.01)).abs() < 1e-15);
        }
    }

    #[test]
    fn all_zero_leaves_state() {
        let g = SpatialGrid::new(3, 1.0).unwrap();
        let st = FieldState { s: vec![0.1, 0.2, 0.3], i: vec![0.4; 3], v: vec![0.5; 3], time: 0.0 };
        let z = vec![[0.5; 4]; 3];
        for mode in [NoiseMode::Independent, NoiseMode::SharedZeta] {
            let out = milstein_state_step(&g, &st, &ControlField::zeros(3), &RegimeParams::zero(), 0.1, &z, mode, true)
                .unwrap();
            assert_eq!(out.state.s, st.s);
            assert_eq!(out.state.i, st.i);
            assert_eq!(out.state.v, st.v);
        }
    }

    #[test]
    fn clamp_counts_negatives() {
        let g = SpatialGrid::homogeneous();
        let par = RegimeParams { sigma: 5.0, ..RegimeParams::regime1() };
        let st = FieldState::uniform(&g, 1.0, 1.0, 0.0);
        let z = vec![[0.63, 1.0, 1.0, 1.0]];
        let out = milstein_state_step(&g, &st, &ControlField::zeros(1), &par, 0.1, &z, NoiseMode::Independent, true)
            .unwrap();
        assert_eq!(out.negatives, 1);
        assert_eq!(out.state.s[0], 0.0);
    }

    #[test]
    fn blowup_names_cell() {
        let g = SpatialGrid::new(3, 1.0).unwrap();
        let st = FieldState { s: vec![0.1, f64::MAX, 0.3], i: vec![f64::MAX; 3], v: vec![0.5; 3], time: 0.0 };
        let par = RegimeParams { d1: 0.0, d2: 0.0, d3: 0.0, ..RegimeParams::regime1() };
        let err = milstein_state_step(&g, &st, &ControlField::zeros(3), &par, 0.1, &[[1.0; 4]; 3], NoiseMode::Independent, false)
            .unwrap_err();
        assert!(matches!(err, Error::Blowup { cell: 0, .. }));
    }

    #[test]
    fn stability_guard() {
        let g = SpatialGrid::new(64, 1.0).unwrap();
        let p = single(RegimeParams { d1: 1.0, ..RegimeParams::regime1() });
        assert!(StepConfig::new(0.01, 1.0, 0).validate(&g, &p).into_result().is_err());
        let p = SivParams::two_regime_default();
        assert!(StepConfig::new(0.01, 1.0, 0).validate(&g, &p).is_empty());
        assert!(StepConfig::new(-0.01, 1.0, 0).validate(&g, &p).into_result().is_err());
        assert!(StepConfig::new(0.3, 1.0, 0).validate(&g, &p).into_result().is_err());
    }

    #[test]
    fn pure_diffusion_conserves_mass() {
        let g = SpatialGrid::new(32, 1.0).unwrap();
        let par = RegimeParams { d1: 0.02, d2: 0.01, d3: 0.005, ..RegimeParams::zero() };
        let p = single(par);
        let x = g.centers();
        let init = FieldState {
            s: x.iter().map(|x| 1.0 + (6.0 * x).sin()).collect(),
            i: x.iter().map(|x| x * x).collect(),
            v: x.iter().map(|x| (3.0 * x).exp()).collect(),
            time: 0.0,
        };
        let m0 = init.total_mass(&g);
        let cfg = StepConfig::new(0.01, 2.0, 1);
        let rec = simulate_path(&g, &init, &mut |_, _, _| ControlField::zeros(32), &p, &RegimeChain::single(), 0, &cfg)
            .unwrap();
        for st in &rec.states {
            assert!((st.total_mass(&g) - m0).abs() < 1e-12);
        }
    }

    #[test]
    fn record_reproducible() {
        let g = SpatialGrid::new(8, 1.0).unwrap();
        let p = SivParams::two_regime_default();
        let cfg = StepConfig::new(0.01, 1.0, 77);
        let init = FieldState::uniform(&g, 0.6, 0.1, 1.0);
        let run = || {
            simulate_path(&g, &init, &mut |_, _, _| ControlField::constant(8, 0.2, 0.1), &p, &RegimeChain::default_two_state(), 0, &cfg)
                .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.states.len(), 101);
        assert_eq!(a.noise.len(), 100);
    }

    #[test]
    fn binary_roundtrip() {
        let g = SpatialGrid::new(4, 1.0).unwrap();
        let p = SivParams::two_regime_default();
        let cfg = StepConfig::new(0.05, 0.5, 3);
        let rec = simulate_path(&g, &FieldState::uniform(&g, 0.6, 0.1, 1.0), &mut |_, _, _| ControlField::zeros(4), &p,
            &RegimeChain::default_two_state(), 1, &cfg).unwrap();
        let (t, r, s) = read_binary(&rec.to_bytes()).unwrap();
        assert_eq!(t, rec.times);
        assert_eq!(r, rec.regimes);
        assert_eq!(s, rec.states);
        assert!(read_binary(&rec.to_bytes()[..30]).is_err());
    }

    #[test]
    fn trivial_adjoint_is_constant() {
        let g = SpatialGrid::new(5, 1.0).unwrap();
        let par = RegimeParams { b: 1.0, p: 0.3, ..RegimeParams::zero() };
        let p = single(par);
        let cost = CostParams { a1: 0.0, a2: 0.0, ..CostParams::default() };
        let cfg = StepConfig::new(0.01, 1.0, 5);
        let rec = simulate_path(&g, &FieldState::uniform(&g, 0.6, 0.1, 1.0), &mut |_, _, _| ControlField::zeros(5), &p,
            &RegimeChain::single(), 0, &cfg).unwrap();
        for scheme in [AdjointScheme::Costate, AdjointScheme::Transcribed] {
            let adj = adjoint_backward_sweep(&g, &rec, &p, &cost, cfg.dt, scheme).unwrap();
            assert_eq!(adj.len(), 101);
            for a in &adj {
                assert!(a.p1.iter().all(|&x| x == 0.0));
                assert!(a.p2.iter().all(|&x| x == 1.0));
                assert!(a.p3.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn transcribed_mu_only_grows_backward() {
        let g = SpatialGrid::homogeneous();
        let mu = 0.3;
        let p = single(RegimeParams { mu, ..RegimeParams::zero() });
        let cost = CostParams { a1: 0.0, a2: 0.0, ..CostParams::default() };
        let cfg = StepConfig::new(0.01, 2.0, 5);
        let rec = simulate_path(&g, &FieldState::uniform(&g, 0.6, 0.1, 1.0), &mut |_, _, _| ControlField::zeros(1), &p,
            &RegimeChain::single(), 0, &cfg).unwrap();
        let adj = adjoint_backward_sweep(&g, &rec, &p, &cost, cfg.dt, AdjointScheme::Transcribed).unwrap();
        for (k, a) in adj.iter().enumerate() {
            let left = (200 - k) as f64 * 0.01;
            let discrete = (1.0 + mu * 0.01_f64).powi((200 - k) as i32);
            assert!((a.p2[0] - discrete).abs() < 1e-12);
            assert!((a.p2[0] - (mu * left).exp()).abs() <= mu * mu * left * 0.01 * (mu * left).exp());
        }
    }
}
