//! Run configuration: a JSON document deep-merged over the reference
//! defaults, then validated as a whole so every problem is reported at once.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use siv_core::control::{Bounds, SweepConfig};
use siv_core::grid::SpatialGrid;
use siv_core::integrator::{NoiseMode, StepConfig};
use siv_core::irl::{BehaviorPolicy, InitialSampling, IrlConfig, ProbeSet};
use siv_core::model::{CostParams, FieldState, RegimeParams, SivParams};
use siv_core::regime::RegimeChain;
use siv_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub generator: Vec<Vec<f64>>,
    /// 1-based regime at t = 0
    pub initial: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// 1 selects the spatially homogeneous mode
    pub n_cells: usize,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteppingSection {
    pub dt: f64,
    pub t_final: f64,
    pub seed: u64,
    pub n_paths: usize,
    pub clamp_negative: bool,
    pub noise: NoiseMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub s: f64,
    pub i: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BehaviorKind {
    Uniform,
    Persistent,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingKind {
    Fixed,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    Data,
    LatinHypercube,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrlSection {
    pub delta: f64,
    pub i_max: usize,
    pub behavior: BehaviorKind,
    /// half-width of the per-window draw around the persistent level
    pub jitter: f64,
    /// used by the constant behavior
    pub behavior_control: [f64; 2],
    pub ridge: f64,
    /// data paths; null uses stepping.n_paths
    pub n_paths: Option<usize>,
    pub knot_spacing: f64,
    pub initial_policy: [f64; 2],
    pub initial_sampling: SamplingKind,
    pub initial_lo: [f64; 3],
    pub initial_hi: [f64; 3],
    pub terminal_weight: f64,
    /// J-estimate paths; null uses stepping.n_paths
    pub eval_paths: Option<usize>,
    /// null reuses stepping.seed
    pub eval_seed: Option<u64>,
    pub probe: ProbeKind,
    pub probe_lo: [f64; 3],
    pub probe_hi: [f64; 3],
    pub n_probes: usize,
    pub probe_seed: u64,
}

impl Default for IrlSection {
    fn default() -> Self {
        let d = IrlConfig::default();
        Self {
            delta: d.delta,
            i_max: d.i_max,
            behavior: BehaviorKind::Persistent,
            jitter: 0.3,
            behavior_control: [0.5, 0.5],
            ridge: d.ridge,
            n_paths: None,
            knot_spacing: d.knot_spacing,
            initial_policy: d.initial_policy,
            initial_sampling: SamplingKind::Uniform,
            initial_lo: [0.0, 0.0, 0.0],
            initial_hi: [2.0, 0.3, 2.0],
            terminal_weight: d.terminal_weight,
            eval_paths: None,
            eval_seed: None,
            probe: ProbeKind::Data,
            probe_lo: [0.0; 3],
            probe_hi: [2.0; 3],
            n_probes: d.n_probes,
            probe_seed: d.probe_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSection {
    /// snapshot times; the run horizon is the last one
    pub checkpoints: Vec<f64>,
    /// start of the comparison ensemble
    pub second_initial: InitialSection,
    /// exponent of the d_p surrogate and the moment bound
    pub p: f64,
    /// constant control applied during the runs
    pub control: [f64; 2],
    /// null selects Silverman's rule
    pub bandwidth: Option<f64>,
}

impl Default for MeasureSection {
    fn default() -> Self {
        Self {
            checkpoints: vec![5.0, 25.0, 28.0, 30.0],
            second_initial: InitialSection { s: 2.0, i: 0.5, v: 0.5 },
            p: 0.5,
            control: [0.0, 0.0],
            bandwidth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// constant (u₁, u₂) applied along every path
    pub control: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSection {
    /// one ρ_i per regime; null means −1 everywhere
    pub rho: Option<Vec<f64>>,
    /// table size; p runs over p₀·k/n for k = 1..n
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// keyed "1", "2", … in chain order
    pub regime: BTreeMap<String, RegimeParams>,
    pub chain: ChainSection,
    pub grid: GridSection,
    pub stepping: SteppingSection,
    pub initial: InitialSection,
    pub cost: CostParams,
    pub sweep: SweepConfig,
    pub simulate: SimulateSection,
    pub irl: IrlSection,
    pub measure: MeasureSection,
    pub spectral: SpectralSection,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut regime = BTreeMap::new();
        regime.insert("1".to_string(), RegimeParams::regime1());
        regime.insert("2".to_string(), RegimeParams::regime2());
        Self {
            regime,
            chain: ChainSection { generator: RegimeChain::default_two_state().rows(), initial: 1 },
            grid: GridSection { n_cells: 1, length: 1.0 },
            stepping: SteppingSection {
                dt: 0.01,
                t_final: 10.0,
                seed: 42,
                n_paths: 200,
                clamp_negative: true,
                noise: NoiseMode::Independent,
            },
            initial: InitialSection { s: 0.6, i: 0.1, v: 1.0 },
            cost: CostParams::default(),
            sweep: SweepConfig::default(),
            simulate: SimulateSection { control: [0.0, 0.0] },
            irl: IrlSection::default(),
            measure: MeasureSection::default(),
            spectral: SpectralSection { rho: None, n_points: 20 },
            output_dir: "out".to_string(),
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses a config document. Omitted fields take the reference defaults;
/// the result is not yet validated.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let user: Value = serde_json::from_str(text).map_err(|e| {
        Error::invalid(format!("config: parse error at line {}, column {}: {e}", e.line(), e.column()))
    })?;
    if !user.is_object() {
        return Err(Error::invalid("config: top level must be a JSON object"));
    }
    let mut base = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    // A user generator fixes the number of regimes; default parameter sets
    // beyond it would otherwise linger.
    if let Some(n) = user.pointer("/chain/generator").and_then(Value::as_array).map(Vec::len) {
        if let Some(Value::Object(r)) = base.get_mut("regime") {
            r.retain(|k, _| k.parse::<usize>().is_ok_and(|i| (1..=n).contains(&i)));
        }
    }
    merge(&mut base, user);
    serde_path_to_error::deserialize(base).map_err(|e| {
        let path = e.path().to_string();
        Error::invalid(format!("{path}: {}", e.into_inner()))
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("config: cannot read {}: {e}", path.display())))?;
    let cfg = parse_config(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Everything a pipeline needs, built from a validated config.
pub struct Resolved {
    pub grid: SpatialGrid,
    pub params: SivParams,
    pub chain: RegimeChain,
    /// 0-based
    pub initial_regime: usize,
    pub initial: FieldState,
    pub step: StepConfig,
}

impl RunConfig {
    fn regimes_in_order(&self) -> std::result::Result<Vec<RegimeParams>, String> {
        let n = self.regime.len();
        (1..=n)
            .map(|i| self.regime.get(&i.to_string()).copied().ok_or_else(|| {
                format!("regime: keys must be 1..{n}, found {:?}", self.regime.keys().collect::<Vec<_>>())
            }))
            .collect()
    }

    /// Checks every section against the module preconditions and reports
    /// all violations together.
    pub fn validate(&self) -> Result<()> {
        let mut errs: Vec<String> = Vec::new();
        let mut take = |r: Result<()>| {
            if let Err(e) = r {
                match e {
                    Error::Validation(m) => errs.extend(m),
                    other => errs.push(other.to_string()),
                }
            }
        };
        let chain = RegimeChain::new(self.chain.generator.clone());
        let n_states = chain.as_ref().map(|c| c.n_states()).ok();
        match &chain {
            Ok(c) => take(c.check_irreducible().map_err(|e| Error::invalid(format!("chain.generator: {e}")))),
            Err(Error::Validation(m)) => take(Err(Error::Validation(m.iter().map(|x| format!("chain.generator: {x}")).collect()))),
            Err(e) => take(Err(Error::invalid(format!("chain.generator: {e}")))),
        }
        let regimes = match self.regimes_in_order() {
            Ok(r) => {
                for (k, p) in r.iter().enumerate() {
                    take(p.validate(&format!("regime.{}", k + 1)).into_result());
                }
                Some(r)
            }
            Err(m) => {
                take(Err(Error::invalid(m)));
                None
            }
        };
        if let (Some(n), Some(r)) = (n_states, &regimes) {
            if r.len() != n {
                take(Err(Error::invalid(format!(
                    "regime: {} parameter sets for a {n}-state generator",
                    r.len()
                ))));
            }
            if !(1..=n).contains(&self.chain.initial) {
                take(Err(Error::invalid(format!("chain.initial: must lie in 1..={n}, got {}", self.chain.initial))));
            }
            if let Some(rho) = &self.spectral.rho {
                if rho.len() != n {
                    take(Err(Error::invalid(format!("spectral.rho: expected {n} entries, got {}", rho.len()))));
                }
            }
        }
        let grid = SpatialGrid::new(self.grid.n_cells, self.grid.length);
        let st = &self.stepping;
        if st.n_paths == 0 {
            take(Err(Error::invalid("stepping.n_paths: must be >= 1")));
        }
        match (&grid, &regimes) {
            (Ok(g), Some(r)) if SivParams::new(r.clone()).is_ok() => {
                let params = SivParams::new(r.clone()).unwrap();
                take(self.step_config().validate(g, &params).into_result());
            }
            (Err(e), _) => take(Err(e.clone())),
            _ => take(self.step_config().validate(&SpatialGrid::homogeneous(), &SivParams::two_regime_default()).into_result()),
        }
        let ini = self.initial;
        if ![ini.s, ini.i, ini.v].iter().all(|x| x.is_finite() && *x >= 0.0) {
            take(Err(Error::invalid("initial: S, I, V must be finite and >= 0")));
        }
        take(self.cost.validate().into_result());
        take(self.sweep.validate().into_result());
        let irl = &self.irl;
        take(self.irl_config(1).validate().into_result());
        if irl.jitter < 0.0 {
            take(Err(Error::invalid("irl.jitter: must be >= 0")));
        }
        if !(0..3).all(|k| 0.0 <= irl.initial_lo[k] && irl.initial_lo[k] <= irl.initial_hi[k]) {
            take(Err(Error::invalid("irl.initial_lo/initial_hi: need 0 <= lo <= hi")));
        }
        if !(0..3).all(|k| irl.probe_lo[k] <= irl.probe_hi[k]) {
            take(Err(Error::invalid("irl.probe_lo/probe_hi: need lo <= hi")));
        }
        if !((0.0..=1.0).contains(&irl.behavior_control[0]) && (0.0..=1.0).contains(&irl.behavior_control[1])) {
            take(Err(Error::invalid("irl.behavior_control: must lie in [0,1]^2")));
        }
        let delta_steps = irl.delta / st.dt;
        if st.dt > 0.0 && (delta_steps.round() - delta_steps).abs() > 1e-9 * delta_steps.max(1.0) {
            take(Err(Error::invalid(format!("irl.delta: must be a multiple of stepping.dt, got {}", irl.delta))));
        }
        let m = &self.measure;
        if m.checkpoints.is_empty() || !m.checkpoints.windows(2).all(|w| w[0] < w[1]) || m.checkpoints[0] < 0.0 {
            take(Err(Error::invalid("measure.checkpoints: need a nonempty, strictly increasing list of times >= 0")));
        }
        if st.dt > 0.0 {
            for t in &m.checkpoints {
                let k = t / st.dt;
                if (k.round() - k).abs() > 1e-9 * k.max(1.0) {
                    take(Err(Error::invalid(format!("measure.checkpoints: {t} is not a multiple of stepping.dt"))));
                }
            }
        }
        if !(m.p > 0.0 && m.p <= 1.0) {
            take(Err(Error::invalid(format!("measure.p: must lie in (0,1], got {}", m.p))));
        }
        let si = m.second_initial;
        if ![si.s, si.i, si.v].iter().all(|x| x.is_finite() && *x >= 0.0) {
            take(Err(Error::invalid("measure.second_initial: S, I, V must be finite and >= 0")));
        }
        if !m.control.iter().all(|u| (0.0..=1.0).contains(u)) {
            take(Err(Error::invalid("measure.control: must lie in [0,1]^2")));
        }
        if let Some(h) = m.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                take(Err(Error::invalid("measure.bandwidth: must be positive")));
            }
        }
        if !self.simulate.control.iter().all(|u| (0.0..=1.0).contains(u)) {
            take(Err(Error::invalid("simulate.control: must lie in [0,1]^2")));
        }
        if self.spectral.n_points == 0 {
            take(Err(Error::invalid("spectral.n_points: must be >= 1")));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    pub fn step_config(&self) -> StepConfig {
        let st = &self.stepping;
        StepConfig { dt: st.dt, t_final: st.t_final, clamp_negative: st.clamp_negative, rng_seed: st.seed, noise: st.noise }
    }

    pub fn irl_config(&self, default_paths: usize) -> IrlConfig {
        let s = &self.irl;
        IrlConfig {
            delta: s.delta,
            i_max: s.i_max,
            behavior: match s.behavior {
                BehaviorKind::Uniform => BehaviorPolicy::Uniform,
                BehaviorKind::Persistent => BehaviorPolicy::Persistent { jitter: s.jitter },
                BehaviorKind::Constant => BehaviorPolicy::Constant(s.behavior_control),
            },
            ridge: s.ridge,
            n_paths: s.n_paths.unwrap_or(default_paths),
            knot_spacing: s.knot_spacing,
            initial_policy: s.initial_policy,
            initial_sampling: match s.initial_sampling {
                SamplingKind::Fixed => InitialSampling::Fixed,
                SamplingKind::Uniform => InitialSampling::Uniform { lo: s.initial_lo, hi: s.initial_hi },
            },
            terminal_weight: s.terminal_weight,
            bounds: Bounds { u1: self.sweep.u1_bounds, u2: self.sweep.u2_bounds },
            eval_paths: s.eval_paths.unwrap_or(default_paths),
            eval_seed: s.eval_seed.unwrap_or(self.stepping.seed),
            probe: match s.probe {
                ProbeKind::Data => ProbeSet::DataStates,
                ProbeKind::LatinHypercube => ProbeSet::LatinHypercube { lo: s.probe_lo, hi: s.probe_hi },
            },
            n_probes: s.n_probes,
            probe_seed: s.probe_seed,
        }
    }

    /// Builds the core objects; call after `validate`.
    pub fn resolve(&self) -> Result<Resolved> {
        let grid = SpatialGrid::new(self.grid.n_cells, self.grid.length)?;
        let params = SivParams::new(self.regimes_in_order().map_err(Error::invalid)?)?;
        let chain = RegimeChain::new(self.chain.generator.clone())?;
        let ini = self.initial;
        Ok(Resolved {
            initial: FieldState::uniform(&grid, ini.s, ini.i, ini.v),
            grid,
            params,
            chain,
            initial_regime: self.chain.initial - 1,
            step: self.step_config(),
        })
    }

    /// SHA-256 of the canonical effective configuration. The output
    /// directory is excluded: it decides where files go, not what they hold.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = String::new();
        let canon = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&canon))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = parse_config("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.chain.generator, vec![vec![-5.5, 5.5], vec![8.0, -8.0]]);
        assert_eq!(c.regime["1"], RegimeParams::regime1());
        assert_eq!(c.regime["2"], RegimeParams::regime2());
        c.validate().unwrap();
    }

    #[test]
    fn partial_regime_override_keeps_other_fields() {
        let c = parse_config(r#"{"regime": {"2": {"beta": 0.5}}}"#).unwrap();
        assert_eq!(c.regime["2"].beta, 0.5);
        assert_eq!(c.regime["2"].mu, RegimeParams::regime2().mu);
        assert_eq!(c.regime["1"], RegimeParams::regime1());
    }

    #[test]
    fn single_state_generator_drops_second_regime() {
        let c = parse_config(r#"{"chain": {"generator": [[0.0]]}}"#).unwrap();
        assert_eq!(c.regime.len(), 1);
        c.validate().unwrap();
    }

    #[test]
    fn negative_dt_names_field() {
        let c = parse_config(r#"{"stepping": {"dt": -0.1}}"#).unwrap();
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("stepping.dt"), "{msg}");
    }

    #[test]
    fn stability_bound_is_quoted() {
        let c = parse_config(r#"{"grid": {"n_cells": 64}, "stepping": {"dt": 0.5, "t_final": 10}}"#).unwrap();
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("dt*D/dx^2 <= 0.5"), "{msg}");
    }

    #[test]
    fn violations_are_aggregated() {
        let c = parse_config(r#"{"stepping": {"n_paths": 0}, "cost": {"tau1": 0}, "sweep": {"relax": 2}}"#).unwrap();
        match c.validate() {
            Err(Error::Validation(m)) => assert!(m.len() >= 3, "{m:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_line() {
        let msg = parse_config("{\n  \"grid\": {\n    \"n_cells\": ,\n  }\n}").unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn unknown_key_is_rejected_with_path() {
        let msg = parse_config(r#"{"regime": {"1": {"betta": 0.1}}}"#).unwrap_err().to_string();
        assert!(msg.contains("regime.1") && msg.contains("betta"), "{msg}");
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::default();
        let b = RunConfig { output_dir: "elsewhere".into(), ..a.clone() };
        let mut c = a.clone();
        c.stepping.seed += 1;
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
