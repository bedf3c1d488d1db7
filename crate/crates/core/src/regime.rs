//! Finite-state continuous-time Markov chain driving the parameter regime,
//! plus the spectral quantities behind the moment-contraction argument.

use nalgebra::{DMatrix, DVector, Schur};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violations};
use crate::seed;

const ROW_SUM_TOL: f64 = 1e-9;
const SCHUR_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct RegimeChain {
    n: usize,
    // row-major
    q: Vec<f64>,
}

impl RegimeChain {
    /// Validates shape, sign pattern and conservativity. Irreducibility is
    /// checked separately because absorbing chains are still simulable.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut v = Violations::new();
        v.check(n > 0, || "generator: must have at least one state".into());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                v.push(format!("generator[{i}]: expected {n} entries, got {}", row.len()));
                continue;
            }
            let mut sum = 0.0;
            let mut scale: f64 = 1.0;
            for (j, &x) in row.iter().enumerate() {
                if !x.is_finite() {
                    v.push(format!("generator[{i}][{j}]: not finite"));
                }
                if i != j && x < 0.0 {
                    v.push(format!("generator[{i}][{j}]: off-diagonal rate {x} is negative"));
                }
                sum += x;
                scale = scale.max(x.abs());
            }
            if sum.abs() > ROW_SUM_TOL * scale {
                v.push(format!("generator[{i}]: row sums to {sum}, not 0 (non-conservative)"));
            }
        }
        v.into_result()?;
        let q = rows.into_iter().flatten().collect();
        Ok(Self { n, q })
    }

    pub fn single() -> Self {
        Self { n: 1, q: vec![0.0] }
    }

    /// The two-regime chain used in the numerical section of the model.
    pub fn default_two_state() -> Self {
        Self::new(vec![vec![-5.5, 5.5], vec![8.0, -8.0]]).expect("valid")
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.q.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.q)
    }

    /// Ok when the digraph of positive off-diagonal rates is strongly
    /// connected; otherwise names a pair that cannot communicate.
    pub fn check_irreducible(&self) -> Result<()> {
        let n = self.n;
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for j in 0..n {
                    let r = if forward { self.rate(i, j) } else { self.rate(j, i) };
                    if i != j && r > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen
        };
        // strongly connected iff everything reaches 0 and 0 reaches everything
        if let Some(j) = reach(true).iter().position(|s| !s) {
            return Err(Error::Reducible { from: 0, to: j });
        }
        if let Some(j) = reach(false).iter().position(|s| !s) {
            return Err(Error::Reducible { from: j, to: 0 });
        }
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for RegimeChain {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<RegimeChain> for Vec<Vec<f64>> {
    fn from(c: RegimeChain) -> Self {
        c.rows()
    }
}

/// πQ = 0, Σπ = 1.
pub fn stationary_distribution(chain: &RegimeChain) -> Result<Vec<f64>> {
    chain.check_irreducible()?;
    let n = chain.n;
    if n == 1 {
        return Ok(vec![1.0]);
    }
    // Solve Qᵀπ = 0 with the last equation replaced by normalization.
    let mut a = chain.matrix().transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut pi = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("singular stationary system".into()))?;
    // one round of refinement keeps ‖πQ‖ at roundoff level
    let r = &rhs - &a * &pi;
    if let Some(d) = lu.solve(&r) {
        pi += d;
    }
    if pi.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Numeric(format!(
            "stationary distribution has a nonpositive entry: {:?}",
            pi.as_slice()
        )));
    }
    Ok(pi.iter().copied().collect())
}

/// ‖πQ‖_∞.
pub fn stationary_residual(chain: &RegimeChain, pi: &[f64]) -> f64 {
    let n = chain.n;
    (0..n)
        .map(|j| (0..n).map(|i| pi[i] * chain.rate(i, j)).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub p_exponent: f64,
    pub rho: Vec<f64>,
    pub q_p: Vec<Vec<f64>>,
    pub eta_p: f64,
    pub xi_p: Vec<f64>,
    pub p0: f64,
    /// Σ π_i ρ_i < 0
    pub mean_rho_negative: bool,
    pub eta_positive: bool,
    /// ‖Q_p ξ + η_p ξ‖_∞ / (‖Q_p‖_∞ ‖ξ‖_∞)
    pub eigen_residual: f64,
}

pub fn q_p_matrix(chain: &RegimeChain, rho: &[f64], p: f64) -> DMatrix<f64> {
    let mut m = chain.matrix();
    for i in 0..chain.n {
        m[(i, i)] += 0.5 * p * rho[i];
    }
    m
}

pub fn spectral_report(chain: &RegimeChain, rho: &[f64], p: f64) -> Result<SpectralReport> {
    let n = chain.n;
    let mut v = Violations::new();
    v.check(p > 0.0 && p.is_finite(), || format!("p: must be positive, got {p}"));
    v.check(rho.len() == n, || format!("rho: expected {n} entries, got {}", rho.len()));
    v.check(rho.iter().all(|r| r.is_finite()), || "rho: entries must be finite".into());
    v.into_result()?;
    chain.check_irreducible()?;

    let qp = q_p_matrix(chain, rho, p);
    let schur = Schur::try_new(qp.clone(), f64::EPSILON, SCHUR_MAX_ITERS)
        .ok_or(Error::EigenSolver { iterations: SCHUR_MAX_ITERS })?;
    let eig = schur.complex_eigenvalues();
    let top = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let eta_p = -top;

    let xi = perron_vector(&qp, top)?;
    let norm_q = (0..n)
        .map(|i| (0..n).map(|j| qp[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let resid = (&qp * &xi + &xi * eta_p).amax() / (norm_q * xi.amax());

    let pi = stationary_distribution(chain)?;
    let mean_rho: f64 = pi.iter().zip(rho).map(|(a, b)| a * b).sum();
    Ok(SpectralReport {
        p_exponent: p,
        rho: rho.to_vec(),
        q_p: (0..n).map(|i| (0..n).map(|j| qp[(i, j)]).collect()).collect(),
        eta_p,
        xi_p: xi.iter().copied().collect(),
        p0: p0_threshold(chain, rho),
        mean_rho_negative: mean_rho < 0.0,
        eta_positive: eta_p > 0.0,
        eigen_residual: resid,
    })
}

// Null vector of (A − λI) from the SVD, polished by inverse iteration.
fn perron_vector(a: &DMatrix<f64>, lambda: f64) -> Result<DVector<f64>> {
    let n = a.nrows();
    if n == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let shifted = a - DMatrix::identity(n, n) * lambda;
    let svd = shifted.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numeric("SVD did not return right singular vectors".into()))?;
    let k = svd.singular_values.imin();
    let mut x: DVector<f64> = v_t.row(k).transpose();

    let scale = a.amax().max(1.0);
    let nudged = &shifted - DMatrix::identity(n, n) * (scale * 1e-13);
    let lu = nudged.lu();
    for _ in 0..3 {
        match lu.solve(&x) {
            Some(y) if y.iter().all(|c| c.is_finite()) && y.amax() > 0.0 => {
                let m = y.amax();
                x = y / m;
            }
            _ => break,
        }
    }
    let big = x.iamax();
    if x[big] < 0.0 {
        x = -x;
    }
    x /= x.amax();
    if x.iter().any(|&c| !(c > 0.0)) {
        return Err(Error::Numeric(format!(
            "leading eigenvector is not strictly positive: {:?}",
            x.as_slice()
        )));
    }
    Ok(x)
}

/// 1 ∧ min_{ρ_i>0} (−2 q_ii / ρ_i); the empty minimum is +∞.
pub fn p0_threshold(chain: &RegimeChain, rho: &[f64]) -> f64 {
    let m = rho
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > 0.0)
        .map(|(i, &r)| -2.0 * chain.rate(i, i) / r)
        .fold(f64::INFINITY, f64::min);
    m.min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimePath {
    /// Jump instants; states[k] holds on [jump_times[k-1], jump_times[k]).
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
    pub horizon: f64,
}

impl RegimePath {
    pub fn constant(state: usize, horizon: f64) -> Self {
        Self { jump_times: Vec::new(), states: vec![state], horizon }
    }

    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.states[k]
    }

    /// (t_start, t_end, state) per segment.
    pub fn segments(&self) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::with_capacity(self.states.len());
        let mut start = 0.0;
        for (k, &s) in self.states.iter().enumerate() {
            let end = self.jump_times.get(k).copied().unwrap_or(self.horizon);
            out.push((start, end, s));
            start = end;
        }
        out
    }

    pub fn occupation_fractions(&self, n_states: usize) -> Vec<f64> {
        let mut occ = vec![0.0; n_states];
        for (a, b, s) in self.segments() {
            occ[s] += b - a;
        }
        occ.iter_mut().for_each(|x| *x /= self.horizon);
        occ
    }
}

pub fn sample_path(chain: &RegimeChain, initial: usize, horizon: f64, rng_seed: u64) -> Result<RegimePath> {
    let mut rng = seed::stream(rng_seed, seed::REGIME_STREAM);
    sample_path_with(chain, initial, horizon, &mut rng)
}

pub fn sample_path_with(
    chain: &RegimeChain,
    initial: usize,
    horizon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<RegimePath> {
    let mut v = Violations::new();
    v.check(horizon > 0.0 && horizon.is_finite(), || format!("horizon: must be positive, got {horizon}"));
    v.check(initial < chain.n, || format!("initial regime {initial} out of range 0..{}", chain.n));
    v.into_result()?;

    let mut path = RegimePath::constant(initial, horizon);
    let mut t = 0.0;
    let mut s = initial;
    loop {
        let rate = -chain.rate(s, s);
        if rate <= 0.0 {
            break;
        }
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / rate;
        if t >= horizon {
            break;
        }
        let mut target = rng.random::<f64>() * rate;
        let mut next = s;
        for j in 0..chain.n {
            if j == s {
                continue;
            }
            let r = chain.rate(s, j);
            if r <= 0.0 {
                continue;
            }
            next = j;
            if target < r {
                break;
            }
            target -= r;
        }
        path.jump_times.push(t);
        path.states.push(next);
        s = next;
    }
    Ok(path)
}
