//! Density estimates, 1-D Wasserstein distances and the ergodicity audit
//! on spatially averaged ensembles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violations};
use crate::grid::SpatialGrid;
use crate::integrator::{self, PathStepper, StepConfig};
use crate::model::{ControlField, FieldState, SivParams};
use crate::regime::RegimeChain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    S,
    I,
    V,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::S, Component::I, Component::V];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["S", "I", "V"][self as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMarginal {
    pub samples: Vec<f64>,
    pub time: f64,
    pub component: Component,
}

impl EmpiricalMarginal {
    pub fn new(samples: Vec<f64>, time: f64, component: Component) -> Result<Self> {
        let mut v = Violations::new();
        v.check(!samples.is_empty(), || "marginal: no samples".into());
        v.check(samples.iter().all(|x| x.is_finite()), || "marginal: samples must be finite".into());
        v.into_result()?;
        Ok(Self { samples, time, component })
    }

    pub fn std_dev(&self) -> f64 {
        std_dev(&self.samples)
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// Silverman: 1.06·σ̂·n^(−1/5)
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityCurve {
    pub fn trapezoid_mass(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }
}

pub const KDE_POINTS: usize = 512;

pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::invalid("kde: automatic bandwidth needs at least 2 samples"));
    }
    let s = std_dev(samples);
    let scale = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    // rounding in the mean leaves ~1e-17 relative spread on constant data
    if !(s > 1e-12 * scale) {
        return Err(Error::ZeroVariance);
    }
    Ok(1.06 * s * (samples.len() as f64).powf(-0.2))
}

/// Gaussian KDE on an even grid spanning the samples ± 4 bandwidths.
pub fn kde(marginal: &EmpiricalMarginal, bandwidth: Bandwidth) -> Result<DensityCurve> {
    let h = match bandwidth {
        Bandwidth::Auto => silverman_bandwidth(&marginal.samples)?,
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => return Err(Error::invalid(format!("kde: bandwidth must be positive, got {h}"))),
    };
    let xs = &marginal.samples;
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min) - 4.0 * h;
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 4.0 * h;
    let grid: Vec<f64> = (0..KDE_POINTS).map(|k| lo + (hi - lo) * k as f64 / (KDE_POINTS - 1) as f64).collect();
    Ok(DensityCurve { density: kde_eval(xs, h, &grid), grid, bandwidth: h })
}

pub fn kde_eval(samples: &[f64], h: f64, at: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    at.iter()
        .map(|&x| {
            // kernels beyond 9h contribute < 1e-17 each
            let a = sorted.partition_point(|&s| s < x - 9.0 * h);
            let b = sorted.partition_point(|&s| s <= x + 9.0 * h);
            sorted[a..b].iter().map(|s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum::<f64>() * norm
        })
        .collect()
}

/// Largest equal sample size accepted by the exact p < 1 solver.
pub const EXACT_ASSIGNMENT_LIMIT: usize = 1024;

/// Optimal transport cost between two empirical laws on the line for the
/// metric d(x,y) = |x−y|^p.
///
/// At p = 1 the quantile (sorted) coupling is optimal and any sample sizes
/// work. For p < 1 the cost is concave in |x−y| and the sorted pairing can
/// lose to a crossing one ({0,1} vs {1,2} costs 1 sorted, 2^p/2 crossed), so
/// the optimum comes from an assignment solve on equal sample sizes.
pub fn wasserstein_1d(a: &[f64], b: &[f64], p: f64) -> Result<f64> {
    if p == 1.0 {
        return quantile_coupling_cost(a, b, 1.0);
    }
    check_inputs(a, b, p)?;
    if a.len() != b.len() || a.len() > EXACT_ASSIGNMENT_LIMIT {
        return Err(Error::invalid(format!(
            "wasserstein: p < 1 needs equal sample sizes up to {EXACT_ASSIGNMENT_LIMIT}, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let cost: Vec<f64> = a.iter().flat_map(|x| b.iter().map(move |y| (x - y).abs().powf(p))).collect();
    Ok(assignment_cost(n, &cost) / n as f64)
}

fn check_inputs(a: &[f64], b: &[f64], p: f64) -> Result<()> {
    let mut v = Violations::new();
    v.check(!a.is_empty() && !b.is_empty(), || "wasserstein: empty sample set".into());
    v.check(p > 0.0 && p <= 1.0, || format!("wasserstein: p must lie in (0,1], got {p}"));
    v.check(a.iter().chain(b).all(|x| x.is_finite()), || "wasserstein: samples must be finite".into());
    v.into_result()
}

/// Minimum-cost perfect matching on a dense n×n row-major cost matrix
/// (shortest augmenting paths with potentials, O(n³)).
fn assignment_cost(n: usize, cost: &[f64]) -> f64 {
    let c = |i: usize, j: usize| cost[(i - 1) * n + (j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| c(owner[j], j)).sum()
}

/// Cost of the quantile (sorted) coupling, merging the two empirical
/// quantile functions when sample counts differ. Equal to W at p = 1 and an
/// upper bound for p < 1.
pub fn quantile_coupling_cost(a: &[f64], b: &[f64], p: f64) -> Result<f64> {
    check_inputs(a, b, p)?;
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let cost = |x: f64, y: f64| (x - y).abs().powf(p);
    if a.len() == b.len() {
        return Ok(a.iter().zip(&b).map(|(x, y)| cost(*x, *y)).sum::<f64>() / a.len() as f64);
    }
    let (n, m) = (a.len(), b.len());
    // walk breakpoints k/n and l/m in integer arithmetic on the scale n·m
    let (mut i, mut j) = (0usize, 0usize);
    let mut pos = 0usize;
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) * m;
        let next_b = (j + 1) * n;
        let next = next_a.min(next_b);
        total += (next - pos) as f64 * cost(a[i], b[j]);
        pos = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    Ok(total / (n * m) as f64)
}

/// A point of H₃ × 𝕊: (S, I, V) and a regime index.
pub type MarkedState = ([f64; 3], usize);

/// Σ|a_k − b_k|^p + 1{regime_a ≠ regime_b}
pub fn dp_metric(a: &MarkedState, b: &MarkedState, p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("dp_metric: p must lie in (0,1], got {p}")));
    }
    let d: f64 = (0..3).map(|k| (a.0[k] - b.0[k]).abs().powf(p)).sum();
    Ok(d + if a.1 != b.1 { 1.0 } else { 0.0 })
}

/// Ensemble of spatially averaged states at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSnapshot {
    pub time: f64,
    pub states: Vec<[f64; 3]>,
    pub regimes: Vec<usize>,
}

impl EnsembleSnapshot {
    pub fn marginal(&self, c: Component) -> EmpiricalMarginal {
        EmpiricalMarginal { samples: self.states.iter().map(|x| x[c.index()]).collect(), time: self.time, component: c }
    }

    pub fn regime_frequencies(&self, n_states: usize) -> Vec<f64> {
        let mut f = vec![0.0; n_states];
        for &r in &self.regimes {
            f[r] += 1.0;
        }
        let n = self.regimes.len().max(1) as f64;
        f.iter_mut().for_each(|x| *x /= n);
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDistance {
    pub from: f64,
    pub to: f64,
    /// W₁ per component (S, I, V)
    pub w1: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDistance {
    pub time: f64,
    pub w1: [f64; 3],
    /// total-variation distance of the regime marginals, i.e. the minimal
    /// disagreement frequency under the optimal coupling
    pub regime_disagreement: f64,
    /// Σ_k (quantile-coupling cost at p) + regime_disagreement. With exact
    /// marginal terms this bounds the joint d_p distance from below, since
    /// any joint coupling projects onto marginal couplings. At p < 1 the
    /// marginal terms are sorted-coupling upper bounds, so the sum is only
    /// descriptive.
    pub dp_surrogate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub p: f64,
    pub checkpoints: Vec<f64>,
    /// per ensemble, distances between consecutive checkpoints
    pub consecutive: Vec<Vec<StepDistance>>,
    /// per ensemble and checkpoint, componentwise standard deviation
    pub std_dev: Vec<Vec<[f64; 3]>>,
    /// first vs second ensemble
    pub cross: Vec<CrossDistance>,
    /// fitted λ in cross W₁ ≈ C·e^(−λt), per component; None without
    /// two positive distances
    pub decay_rate: [Option<f64>; 3],
    pub surrogate_decay_rate: Option<f64>,
    /// per ensemble, sup over checkpoints of E(|S|^p + |I|^p + |V|^p)
    pub moment_sup: Vec<f64>,
}

fn fit_decay(ts: &[f64], ds: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = ts.iter().zip(ds).filter(|(_, d)| **d > 0.0).map(|(t, d)| (*t, d.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(-sxy / sxx)
}

/// `ensembles[e][c]` is ensemble e at checkpoint c; all ensembles share
/// the checkpoint times.
pub fn ergodicity_audit(ensembles: &[Vec<EnsembleSnapshot>], p: f64) -> Result<AuditReport> {
    let mut v = Violations::new();
    v.check(ensembles.len() >= 2, || "audit: need ensembles from at least 2 initial conditions".into());
    v.check(p > 0.0 && p <= 1.0, || format!("audit: p must lie in (0,1], got {p}"));
    let checkpoints: Vec<f64> = ensembles.first().map(|e| e.iter().map(|s| s.time).collect()).unwrap_or_default();
    v.check(checkpoints.len() >= 2, || "audit: need at least 2 checkpoint times".into());
    for (k, e) in ensembles.iter().enumerate() {
        let ts: Vec<f64> = e.iter().map(|s| s.time).collect();
        v.check(ts == checkpoints, || format!("audit: ensemble {k} has different checkpoint times"));
        v.check(e.iter().all(|s| !s.states.is_empty() && s.states.len() == s.regimes.len()), || {
            format!("audit: ensemble {k} has an empty or misaligned snapshot")
        });
    }
    v.into_result()?;

    let w = |a: &EnsembleSnapshot, b: &EnsembleSnapshot, c: Component, q: f64| {
        quantile_coupling_cost(&a.marginal(c).samples, &b.marginal(c).samples, q)
    };
    let mut consecutive = Vec::new();
    let mut stds = Vec::new();
    let mut moment_sup = Vec::new();
    for e in ensembles {
        let mut steps = Vec::new();
        for pair in e.windows(2) {
            let mut w1 = [0.0; 3];
            for c in Component::ALL {
                w1[c.index()] = w(&pair[0], &pair[1], c, 1.0)?;
            }
            steps.push(StepDistance { from: pair[0].time, to: pair[1].time, w1 });
        }
        consecutive.push(steps);
        stds.push(e.iter().map(|s| Component::ALL.map(|c| s.marginal(c).std_dev())).collect());
        let sup = e
            .iter()
            .map(|s| s.states.iter().map(|x| x.iter().map(|c| c.abs().powf(p)).sum::<f64>()).sum::<f64>() / s.states.len() as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        moment_sup.push(sup);
    }

    let n_regimes = ensembles.iter().flatten().flat_map(|s| s.regimes.iter()).max().map_or(1, |m| m + 1);
    let mut cross = Vec::new();
    for (a, b) in ensembles[0].iter().zip(&ensembles[1]) {
        let mut w1 = [0.0; 3];
        let mut wp = 0.0;
        for c in Component::ALL {
            w1[c.index()] = w(a, b, c, 1.0)?;
            wp += w(a, b, c, p)?;
        }
        let fa = a.regime_frequencies(n_regimes);
        let fb = b.regime_frequencies(n_regimes);
        let tv = 0.5 * fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).sum::<f64>();
        cross.push(CrossDistance { time: a.time, w1, regime_disagreement: tv, dp_surrogate: wp + tv });
    }
    let decay_rate = Component::ALL.map(|c| fit_decay(&checkpoints, &cross.iter().map(|d| d.w1[c.index()]).collect::<Vec<_>>()));
    let surrogate_decay_rate = fit_decay(&checkpoints, &cross.iter().map(|d| d.dp_surrogate).collect::<Vec<_>>());
    Ok(AuditReport {
        p,
        checkpoints,
        consecutive,
        std_dev: stds,
        cross,
        decay_rate,
        surrogate_decay_rate,
        moment_sup,
    })
}

/// Runs `n_paths` paths under a constant control and records spatial means
/// at the requested checkpoint times (multiples of dt, ascending).
#[allow(clippy::too_many_arguments)]
pub fn ensemble_snapshots(
    grid: &SpatialGrid,
    initial: &FieldState,
    params: &SivParams,
    chain: &RegimeChain,
    initial_regime: usize,
    step: &StepConfig,
    n_paths: usize,
    checkpoints: &[f64],
    control: [f64; 2],
) -> Result<Vec<EnsembleSnapshot>> {
    let mut v = Violations::new();
    v.check(!checkpoints.is_empty(), || "measure.checkpoints: empty".into());
    v.check(checkpoints.windows(2).all(|w| w[0] < w[1]), || "measure.checkpoints: must be strictly increasing".into());
    v.check(checkpoints.iter().all(|&t| t >= 0.0), || "measure.checkpoints: must be >= 0".into());
    v.check(n_paths >= 1, || "measure.n_paths: must be >= 1".into());
    let idx: Vec<usize> = checkpoints.iter().map(|t| (t / step.dt).round() as usize).collect();
    for (t, k) in checkpoints.iter().zip(&idx) {
        v.check((*k as f64 * step.dt - t).abs() <= 1e-9 * t.max(1.0), || {
            format!("measure.checkpoints: {t} is not a multiple of dt {}", step.dt)
        });
    }
    v.into_result()?;
    let last = *checkpoints.last().unwrap();
    let cfg = StepConfig { t_final: last.max(step.dt), ..step.clone() };
    let u = ControlField::constant(grid.n_cells(), control[0], control[1]);

    let paths = integrator::run_ensemble(n_paths, step.rng_seed, |_, s| {
        let pc = cfg.with_seed(s);
        let mut st = PathStepper::new(grid, params, chain, initial_regime, initial.clone(), &pc)?;
        let mut out = Vec::with_capacity(idx.len());
        for &k in &idx {
            while st.step_index() < k {
                st.advance(&u)?;
            }
            out.push((st.state().means(), st.regime()));
        }
        Ok(out)
    })?;
    Ok(checkpoints
        .iter()
        .enumerate()
        .map(|(c, &t)| EnsembleSnapshot {
            time: t,
            states: paths.iter().map(|p| p[c].0).collect(),
            regimes: paths.iter().map(|p| p[c].1).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn marg(xs: &[f64]) -> EmpiricalMarginal {
        EmpiricalMarginal::new(xs.to_vec(), 0.0, Component::S).unwrap()
    }

    #[test]
    fn single_sample_peak() {
        let h = 0.3;
        let d = kde_eval(&[0.0], h, &[0.0]);
        assert!((d[0] - 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt())).abs() < 1e-15);
    }

    #[test]
    fn symmetric_about_zero() {
        let c = kde(&marg(&[0.0, 0.0, 0.0]), Bandwidth::Fixed(1.0)).unwrap();
        let n = c.grid.len();
        for k in 0..n {
            assert!((c.density[k] - c.density[n - 1 - k]).abs() < 1e-12);
        }
        let peak = c.density.iter().copied().fold(0.0, f64::max);
        assert!(peak <= 1.0 / (2.0 * std::f64::consts::PI).sqrt() + 1e-12);
        assert!((c.trapezoid_mass() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn zero_variance_needs_explicit_bandwidth() {
        assert_eq!(kde(&marg(&[2.0, 2.0]), Bandwidth::Auto).unwrap_err(), Error::ZeroVariance);
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein_1d(&[0.3, 0.1], &[0.1, 0.3], 1.0).unwrap(), 0.0);
        assert_eq!(wasserstein_1d(&[0.0], &[1.0], 1.0).unwrap(), 1.0);
        assert_eq!(wasserstein_1d(&[0.0, 1.0], &[1.0, 2.0], 1.0).unwrap(), 1.0);
    }

    #[test]
    fn unequal_counts_use_quantile_coupling() {
        // {0,1} has quantile 0 on [0,½), 1 on [½,1); {0,0.5,1} splits in thirds
        let w = wasserstein_1d(&[0.0, 1.0], &[0.0, 0.5, 1.0], 1.0).unwrap();
        assert!((w - (1.0 / 6.0) * 0.5 * 2.0).abs() < 1e-15);
        // replicating every sample leaves the law unchanged
        let a = [0.2, 1.5, -0.7];
        let b = [0.4, 0.9, 2.0, 0.0, 0.1, 0.3];
        let aa: Vec<f64> = a.iter().chain(&a).copied().collect();
        let w1 = quantile_coupling_cost(&a, &b, 0.7).unwrap();
        let w2 = quantile_coupling_cost(&aa, &b, 0.7).unwrap();
        assert!((w1 - w2).abs() < 1e-14);
    }

    #[test]
    fn dp_examples() {
        assert_eq!(dp_metric(&([0.1, 0.2, 0.3], 0), &([0.1, 0.2, 0.3], 0), 0.5).unwrap(), 0.0);
        assert_eq!(dp_metric(&([0.1, 0.2, 0.3], 0), &([0.1, 0.2, 0.3], 1), 0.5).unwrap(), 1.0);
        assert_eq!(dp_metric(&([0.0; 3], 0), &([1.0; 3], 0), 1.0).unwrap(), 3.0);
    }

    #[test]
    fn decay_fit_recovers_rate() {
        let ts: [f64; 3] = [1.0, 2.0, 4.0];
        let ds: Vec<f64> = ts.iter().map(|t| 3.0 * (-0.4 * t).exp()).collect();
        assert!((fit_decay(&ts, &ds).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(fit_decay(&ts, &[0.0, 0.0, 1.0]), None);
    }
}
