//! Cell-centered 1-D grid on Γ = [0, L] with zero-flux boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    n_cells: usize,
    length: f64,
}

impl SpatialGrid {
    /// `n_cells` must be at least 3, or exactly 1 for the spatially
    /// homogeneous mode (the mirror stencil then vanishes identically).
    pub fn new(n_cells: usize, length: f64) -> Result<Self> {
        let mut errs = Vec::new();
        if !(n_cells == 1 || n_cells >= 3) {
            errs.push(format!("grid.n_cells: need 1 (homogeneous) or >= 3, got {n_cells}"));
        }
        if !(length > 0.0 && length.is_finite()) {
            errs.push(format!("grid.length: must be positive, got {length}"));
        }
        if errs.is_empty() {
            Ok(Self { n_cells, length })
        } else {
            Err(Error::Validation(errs))
        }
    }

    pub fn homogeneous() -> Self {
        Self { n_cells: 1, length: 1.0 }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n_cells as f64
    }

    pub fn is_homogeneous(&self) -> bool {
        self.n_cells == 1
    }

    pub fn center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|k| self.center(k)).collect()
    }
}

/// D·(f_{k−1} − 2f_k + f_{k+1})/dx² with mirror ghosts f_{−1}=f_0, f_n=f_{n−1}.
pub fn laplacian(grid: &SpatialGrid, f: &[f64], diffusivity: f64) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    laplacian_into(grid, f, diffusivity, &mut out);
    out
}

pub fn laplacian_into(grid: &SpatialGrid, f: &[f64], diffusivity: f64, out: &mut [f64]) {
    let n = f.len();
    debug_assert_eq!(n, grid.n_cells());
    debug_assert_eq!(out.len(), n);
    if diffusivity == 0.0 || n == 1 {
        out.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let c = diffusivity / (grid.dx() * grid.dx());
    // differences first, so neighbouring cells cancel to roundoff
    out[0] = c * (f[1] - f[0]);
    for k in 1..n - 1 {
        out[k] = c * ((f[k - 1] - f[k]) + (f[k + 1] - f[k]));
    }
    out[n - 1] = c * (f[n - 2] - f[n - 1]);
}

/// Midpoint rule Σ f_k dx, with compensated summation so that exact
/// cancellations (conservation checks) survive at roundoff level.
pub fn integrate(grid: &SpatialGrid, f: &[f64]) -> f64 {
    neumaier_sum(f.iter().copied()) * grid.dx()
}

pub fn neumaier_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn mean(f: &[f64]) -> f64 {
    f.iter().sum::<f64>() / f.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_two_cells_and_bad_length() {
        assert!(SpatialGrid::new(2, 1.0).is_err());
        assert!(SpatialGrid::new(0, 1.0).is_err());
        assert!(SpatialGrid::new(4, 0.0).is_err());
        assert!(SpatialGrid::new(1, 1.0).is_ok());
    }

    #[test]
    fn constant_and_zero_diffusivity() {
        let g = SpatialGrid::new(10, 2.0).unwrap();
        assert!(laplacian(&g, &[3.5; 10], 0.7).iter().all(|&x| x == 0.0));
        let f: Vec<f64> = (0..10).map(|k| (k as f64).sin()).collect();
        assert!(laplacian(&g, &f, 0.0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn quadratic_interior() {
        let g = SpatialGrid::new(64, 1.0).unwrap();
        let x = g.centers();
        let f: Vec<f64> = x.iter().map(|x| x * x).collect();
        let lap = laplacian(&g, &f, 1.0);
        let dx = g.dx();
        for k in 1..63 {
            // brute-force stencil
            let oracle = (f[k - 1] - 2.0 * f[k] + f[k + 1]) / (dx * dx);
            assert!((lap[k] - oracle).abs() < 1e-9);
            assert!((lap[k] - 2.0).abs() <= 10.0 * dx);
        }
    }

    #[test]
    fn midpoint_rule() {
        let g = SpatialGrid::new(1000, 1.0).unwrap();
        assert!((integrate(&g, &g.centers()) - 0.5).abs() < 1e-6);
        let g = SpatialGrid::new(7, 3.0).unwrap();
        assert!((integrate(&g, &[2.0; 7]) - 6.0).abs() < 1e-14);
        assert!((integrate(&SpatialGrid::homogeneous(), &[1.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stencil_symmetric() {
        let g = SpatialGrid::new(9, 1.0).unwrap();
        let cols: Vec<Vec<f64>> = (0..9)
            .map(|j| {
                let mut e = vec![0.0; 9];
                e[j] = 1.0;
                laplacian(&g, &e, 0.3)
            })
            .collect();
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(cols[j][i], cols[i][j]);
            }
        }
    }
}
