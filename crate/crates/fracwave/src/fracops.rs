//! Discrete fractional calculus on uniform time grids.
//!
//! The two workhorses are the Abel integral
//!
//!   I^γ[v](t) = (1/Γ(γ)) ∫₀ᵗ v(s) (t-s)^{γ-1} ds,   0 < γ ≤ 1,
//!
//! and the Caputo derivative ∂ₜ^α v = I^{1-α}[v'], 0 < α < 1, both realized
//! by product integration on the piecewise-linear reconstruction of the
//! sampled input (the L1 scheme). The quadrature is exact for piecewise-linear
//! data, which several tests exploit directly.
//!
//! Orders in (2,3) are never formed here; the time steppers realize
//! ∂ₜ^{α+2} as the order-α operator applied to the acceleration sequence.
//!
//! `verify_alikhanov` evaluates both sides of the coercivity estimate
//!
//!   ∫₀ᵀ ∂ₜ^α[v](s) v'(s) ds  ≥  ‖∂ₜ^α v‖²_{L²(0,T)} / (2 Γ(α) T^{1-α}),
//!
//! which underpins the fractional energy estimates used by the wave solvers.

use crate::error::{Error, Result};
use statrs::function::gamma::gamma;

/// Uniform partition of [0, t_final] into `n_steps` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_final: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::Domain(format!("t_final must be positive, got {t_final}")));
        }
        if n_steps < 2 {
            return Err(Error::Domain(format!("n_steps must be at least 2, got {n_steps}")));
        }
        Ok(Self { t_final, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.node(i)).collect()
    }
}

/// Scalar trajectory sampled at the nodes of a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl Series {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::Shape(format!(
                "series has {} values, grid has {} nodes",
                values.len(),
                grid.n_nodes()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("series contains non-finite values".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..grid.n_nodes()).map(|i| f(grid.node(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Resample onto a finer grid of the same span by linear interpolation.
    /// Exact when the new node set contains the old one as a subset, in
    /// particular when `refine` multiplies the step count.
    pub fn refine(&self, factor: usize) -> Result<Series> {
        let grid = TimeGrid::new(self.grid.t_final, self.grid.n_steps * factor)?;
        let dt_old = self.grid.dt();
        let values = (0..grid.n_nodes())
            .map(|i| {
                let t = grid.node(i);
                let k = ((t / dt_old).floor() as usize).min(self.grid.n_steps - 1);
                let theta = (t - self.grid.node(k)) / dt_old;
                self.values[k] * (1.0 - theta) + self.values[k + 1] * theta
            })
            .collect();
        Series::new(grid, values)
    }
}

/// L1 convolution weight b_m = m^{1-α} - (m-1)^{1-α}, m ≥ 1.
pub(crate) fn l1_weight(m: usize, alpha: f64) -> f64 {
    let e = 1.0 - alpha;
    (m as f64).powf(e) - ((m - 1) as f64).powf(e)
}

/// Leading L1 factor dt^{-α} / Γ(2-α).
pub(crate) fn l1_scale(dt: f64, alpha: f64) -> f64 {
    dt.powf(-alpha) / gamma(2.0 - alpha)
}

/// Abel integral I^γ of the piecewise-linear reconstruction of `v`.
///
/// Node 0 maps to 0; the interval weights are the exact moments of the
/// kernel (t-s)^{γ-1} against linear shape functions, so the result is exact
/// (up to roundoff) whenever `v` is itself piecewise linear on the grid.
pub fn abel_integral(v: &Series, gamma_ord: f64) -> Result<Series> {
    if !(gamma_ord > 0.0 && gamma_ord <= 1.0) {
        return Err(Error::Domain(format!(
            "Abel integral order must lie in (0, 1], got {gamma_ord}"
        )));
    }
    let grid = v.grid();
    let dt = grid.dt();
    let n = grid.n_steps();
    let inv_gamma = 1.0 / gamma(gamma_ord);
    let g = gamma_ord;

    // Kernel moments per lag m: k0 = ∫ τ^{γ-1} dτ, k1 = ∫ τ^γ dτ over
    // [(m-1)dt, m dt].
    let mut k0 = vec![0.0; n + 1];
    let mut k1 = vec![0.0; n + 1];
    for m in 1..=n {
        let a = (m as f64 - 1.0) * dt;
        let b = m as f64 * dt;
        k0[m] = (b.powf(g) - a.powf(g)) / g;
        k1[m] = (b.powf(g + 1.0) - a.powf(g + 1.0)) / (g + 1.0);
    }

    let vals = v.values();
    let mut out = vec![0.0; n + 1];
    for node in 1..=n {
        let mut acc = 0.0;
        for k in 0..node {
            let m = node - k;
            let slope_term = m as f64 * k0[m] - k1[m] / dt;
            acc += vals[k] * k0[m] + (vals[k + 1] - vals[k]) * slope_term;
        }
        out[node] = inv_gamma * acc;
    }
    Series::new(grid, out)
}

/// L1-scheme Caputo derivative ∂ₜ^α of `v`, exact on piecewise-linear input.
///
/// `v(0)` is the Caputo base point; node 0 maps to 0. As α → 1 the weights
/// collapse onto the current cell and the scheme reduces to backward
/// differences.
pub fn caputo_derivative(v: &Series, alpha: f64) -> Result<Series> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "Caputo order must lie in (0, 1), got {alpha}"
        )));
    }
    let grid = v.grid();
    let dt = grid.dt();
    let n = grid.n_steps();
    let scale = l1_scale(dt, alpha);
    let weights: Vec<f64> = (0..=n).map(|m| if m == 0 { 0.0 } else { l1_weight(m, alpha) }).collect();

    let vals = v.values();
    let mut out = vec![0.0; n + 1];
    for node in 1..=n {
        let mut acc = 0.0;
        for k in 0..node {
            acc += weights[node - k] * (vals[k + 1] - vals[k]);
        }
        out[node] = scale * acc;
    }
    Series::new(grid, out)
}

/// Outcome of the coercivity check: `lhs ≥ rhs` up to a relative tolerance.
#[derive(Debug, Clone, Copy)]
pub struct CoercivityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluates both sides of the fractional coercivity estimate on the grid.
///
/// lhs = ∫₀ᵀ ∂ₜ^α[v](s) v'(s) ds (trapezoid, v' by central differences),
/// rhs = ‖∂ₜ^α v‖²_{L²(0,T)} / (2 Γ(α) T^{1-α}).
pub fn verify_alikhanov(v: &Series, alpha: f64) -> Result<CoercivityCheck> {
    let d = caputo_derivative(v, alpha)?;
    let grid = v.grid();
    let dt = grid.dt();
    let n = grid.n_steps();
    let vals = v.values();

    // Nodal derivative of the piecewise-linear input.
    let mut vdot = vec![0.0; n + 1];
    vdot[0] = (vals[1] - vals[0]) / dt;
    vdot[n] = (vals[n] - vals[n - 1]) / dt;
    for i in 1..n {
        vdot[i] = (vals[i + 1] - vals[i - 1]) / (2.0 * dt);
    }

    let trapz = |f: &dyn Fn(usize) -> f64| -> f64 {
        let mut acc = 0.5 * (f(0) + f(n));
        for i in 1..n {
            acc += f(i);
        }
        acc * dt
    };

    let dvals = d.values();
    let lhs = trapz(&|i| dvals[i] * vdot[i]);
    let l2_sq = trapz(&|i| dvals[i] * dvals[i]);
    let t_final = grid.t_final();
    let rhs = l2_sq / (2.0 * gamma(alpha) * t_final.powf(1.0 - alpha));
    let tol = 1e-8 * (1.0 + lhs.abs());
    Ok(CoercivityCheck { lhs, rhs, holds: lhs >= rhs - tol })
}
