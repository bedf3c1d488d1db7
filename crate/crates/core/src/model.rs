//! SIV reaction terms, multiplicative noise coefficients and costs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violations};
use crate::grid::{self, SpatialGrid};

/// Coefficients of one regime. Rates are per year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeParams {
    /// fraction of newborns vaccinated
    pub p: f64,
    pub b: f64,
    pub beta: f64,
    pub mu: f64,
    /// recovery back into S
    pub alpha: f64,
    /// vaccine effectiveness
    pub e: f64,
    pub sigma: f64,
    /// cure rate under treatment
    pub m: f64,
    /// treatment saturation
    pub eta: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

pub const DEFAULT_DIFFUSIVITY: f64 = 0.01;

impl RegimeParams {
    pub fn regime1() -> Self {
        Self {
            p: 0.5,
            b: 4.0,
            beta: 0.02,
            mu: 0.04,
            alpha: 0.001,
            e: 0.8,
            sigma: 0.035,
            m: 0.01,
            eta: 1.03,
            d1: DEFAULT_DIFFUSIVITY,
            d2: DEFAULT_DIFFUSIVITY,
            d3: DEFAULT_DIFFUSIVITY,
        }
    }

    pub fn regime2() -> Self {
        Self {
            p: 0.6,
            b: 5.0,
            beta: 0.04,
            mu: 0.05,
            alpha: 0.002,
            e: 0.9,
            sigma: 0.036,
            m: 0.02,
            eta: 1.05,
            ..Self::regime1()
        }
    }

    pub fn zero() -> Self {
        Self {
            p: 0.0,
            b: 0.0,
            beta: 0.0,
            mu: 0.0,
            alpha: 0.0,
            e: 0.0,
            sigma: 0.0,
            m: 0.0,
            eta: 0.0,
            d1: 0.0,
            d2: 0.0,
            d3: 0.0,
        }
    }

    pub fn max_diffusivity(&self) -> f64 {
        self.d1.max(self.d2).max(self.d3)
    }

    pub fn validate(&self, label: &str) -> Violations {
        let mut v = Violations::new();
        let fields = [
            ("p", self.p),
            ("b", self.b),
            ("beta", self.beta),
            ("mu", self.mu),
            ("alpha", self.alpha),
            ("e", self.e),
            ("sigma", self.sigma),
            ("m", self.m),
            ("eta", self.eta),
            ("d1", self.d1),
            ("d2", self.d2),
            ("d3", self.d3),
        ];
        for (name, x) in fields {
            v.check(x.is_finite() && x >= 0.0, || format!("{label}.{name}: must be finite and >= 0, got {x}"));
        }
        v.check(self.p <= 1.0, || format!("{label}.p: must lie in [0,1], got {}", self.p));
        v.check(self.e <= 1.0, || format!("{label}.e: must lie in [0,1], got {}", self.e));
        v
    }
}

/// Parameter sets indexed by regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SivParams {
    regimes: Vec<RegimeParams>,
}

impl SivParams {
    pub fn new(regimes: Vec<RegimeParams>) -> Result<Self> {
        let mut v = Violations::new();
        v.check(!regimes.is_empty(), || "regime: need at least one parameter set".into());
        for (k, r) in regimes.iter().enumerate() {
            v.extend(r.validate(&format!("regime.{}", k + 1)));
        }
        v.into_result()?;
        Ok(Self { regimes })
    }

    pub fn single(r: RegimeParams) -> Result<Self> {
        Self::new(vec![r])
    }

    pub fn two_regime_default() -> Self {
        Self { regimes: vec![RegimeParams::regime1(), RegimeParams::regime2()] }
    }

    pub fn regime(&self, i: usize) -> &RegimeParams {
        &self.regimes[i]
    }

    pub fn regimes(&self) -> &[RegimeParams] {
        &self.regimes
    }

    pub fn n_regimes(&self) -> usize {
        self.regimes.len()
    }

    pub fn max_diffusivity(&self) -> f64 {
        self.regimes.iter().map(|r| r.max_diffusivity()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub v: Vec<f64>,
    pub time: f64,
}

impl FieldState {
    pub fn uniform(grid: &SpatialGrid, s: f64, i: f64, v: f64) -> Self {
        let n = grid.n_cells();
        Self { s: vec![s; n], i: vec![i; n], v: vec![v; n], time: 0.0 }
    }

    pub fn n_cells(&self) -> usize {
        self.s.len()
    }

    /// Spatial means (S̄, Ī, V̄).
    pub fn means(&self) -> [f64; 3] {
        [grid::mean(&self.s), grid::mean(&self.i), grid::mean(&self.v)]
    }

    /// ∫(S+I+V)dx
    pub fn total_mass(&self, grid: &SpatialGrid) -> f64 {
        grid::integrate(grid, &self.s) + grid::integrate(grid, &self.i) + grid::integrate(grid, &self.v)
    }

    pub fn validate(&self, grid: &SpatialGrid) -> Result<()> {
        let n = grid.n_cells();
        let mut v = Violations::new();
        for (name, f) in [("S", &self.s), ("I", &self.i), ("V", &self.v)] {
            v.check(f.len() == n, || format!("initial.{name}: expected {n} cells, got {}", f.len()));
            v.check(f.iter().all(|x| x.is_finite() && *x >= 0.0), || {
                format!("initial.{name}: values must be finite and >= 0")
            });
        }
        v.into_result()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlField {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl ControlField {
    pub fn constant(n_cells: usize, u1: f64, u2: f64) -> Self {
        Self { u1: vec![u1; n_cells], u2: vec![u2; n_cells] }
    }

    pub fn zeros(n_cells: usize) -> Self {
        Self::constant(n_cells, 0.0, 0.0)
    }
}

/// Weights of the objective. The terminal weight scales h = (0, I, 0);
/// setting it to zero removes the terminal cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    pub a1: f64,
    pub a2: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub terminal_weight: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self { a1: 1.0, a2: 1.0, tau1: 0.5, tau2: 0.5, terminal_weight: 1.0 }
    }
}

impl CostParams {
    pub fn validate(&self) -> Violations {
        let mut v = Violations::new();
        for (name, x) in [("a1", self.a1), ("a2", self.a2), ("terminal_weight", self.terminal_weight)] {
            v.check(x.is_finite() && x >= 0.0, || format!("cost.{name}: must be finite and >= 0, got {x}"));
        }
        for (name, x) in [("tau1", self.tau1), ("tau2", self.tau2)] {
            v.check(x.is_finite() && x > 0.0, || format!("cost.{name}: must be positive, got {x}"));
        }
        v
    }

    pub fn checked(self) -> Result<Self> {
        self.validate().into_result().map(|_| self)
    }
}

/// m·u₂·I/(1+ηI)
#[inline]
pub fn treatment(par: &RegimeParams, u2: f64, i: f64) -> f64 {
    par.m * u2 * i / (1.0 + par.eta * i)
}

/// Pointwise reaction part of the drift, without diffusion.
#[inline]
pub fn reaction(par: &RegimeParams, s: f64, i: f64, v: f64, u1: f64, u2: f64) -> [f64; 3] {
    let tr = treatment(par, u2, i);
    let ve = (1.0 - par.e) * par.beta * v * i;
    [
        (1.0 - par.p) * par.b + par.alpha * i - (par.mu + u1) * s - par.beta * s * i,
        par.beta * s * i + ve - (par.mu + par.alpha) * i - tr,
        par.p * par.b - par.mu * v - ve + u1 * s + tr,
    ]
}

/// (f₁, f₂, f₃) including the diffusion terms.
pub fn drift(grid: &SpatialGrid, state: &FieldState, control: &ControlField, par: &RegimeParams) -> [Vec<f64>; 3] {
    let mut f = [
        grid::laplacian(grid, &state.s, par.d1),
        grid::laplacian(grid, &state.i, par.d2),
        grid::laplacian(grid, &state.v, par.d3),
    ];
    for k in 0..state.n_cells() {
        let r = reaction(par, state.s[k], state.i[k], state.v[k], control.u1[k], control.u2[k]);
        for c in 0..3 {
            f[c][k] += r[c];
        }
    }
    f
}

/// Magnitudes of the four noise channels. Signs: S gets −g₁dB₁,
/// I gets +g₂ₐdB₂ + g₂ᵦdB₄, V gets −g₃dB₃.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCoeffs {
    pub g1: Vec<f64>,
    pub g2a: Vec<f64>,
    pub g2b: Vec<f64>,
    pub g3: Vec<f64>,
}

pub fn diffusion_coeffs(state: &FieldState, par: &RegimeParams) -> NoiseCoeffs {
    let n = state.n_cells();
    let mut g = NoiseCoeffs { g1: vec![0.0; n], g2a: vec![0.0; n], g2b: vec![0.0; n], g3: vec![0.0; n] };
    let se = (1.0 - par.e) * par.sigma;
    for k in 0..n {
        let (s, i, v) = (state.s[k], state.i[k], state.v[k]);
        g.g1[k] = par.sigma * s * i;
        g.g2a[k] = par.sigma * s * i;
        g.g2b[k] = se * v * i;
        g.g3[k] = se * v * i;
    }
    g
}

/// ∫(A₁S + A₂I + ½(τ₁u₁² + τ₂u₂²))dx
pub fn running_cost(grid: &SpatialGrid, state: &FieldState, control: &ControlField, cost: &CostParams) -> f64 {
    let dx = grid.dx();
    (0..state.n_cells())
        .map(|k| {
            cost.a1 * state.s[k]
                + cost.a2 * state.i[k]
                + 0.5 * (cost.tau1 * control.u1[k].powi(2) + cost.tau2 * control.u2[k].powi(2))
        })
        .sum::<f64>()
        * dx
}

/// ∫I(x,T)dx
pub fn terminal_cost(grid: &SpatialGrid, state: &FieldState) -> f64 {
    grid::integrate(grid, &state.i)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassReport {
    /// Monte Carlo mean of ∫(S+I+V)dx
    pub mean_mass: f64,
    pub std_error: f64,
    pub initial_mass: f64,
    /// initial_mass − mean_mass
    pub deviation: f64,
}

pub fn mass_diagnostic(grid: &SpatialGrid, ensemble: &[FieldState], initial_mass: f64) -> Result<MassReport> {
    if ensemble.is_empty() {
        return Err(Error::invalid("mass_diagnostic: ensemble is empty"));
    }
    let masses: Vec<f64> = ensemble.iter().map(|s| s.total_mass(grid)).collect();
    let (mean, se) = mean_and_se(&masses);
    Ok(MassReport { mean_mass: mean, std_error: se, initial_mass, deviation: initial_mass - mean })
}

/// Sample mean and its standard error (0 for a single sample).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
