//! Analytic eigensystem of -d²/dx² on (0,1) and modal transforms.
//!
//! Two boundary configurations are supported:
//!   * Dirichlet-Dirichlet:  φ_j(x) = √2 sin(jπx),        λ_j = (jπ)²
//!   * Dirichlet-Neumann:    φ_j(x) = √2 sin((j-½)πx),    λ_j = ((j-½)π)²
//!
//! Both families are L²(0,1)-orthonormal. Projection and synthesis use
//! trapezoid quadrature on a uniform grid; for sine products the trapezoid
//! rule is exact below the grid Nyquist, so orthonormality holds to roundoff
//! once n_x ≥ 8·n_modes.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

pub type ModalVector = DVector<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BoundaryConfig {
    /// Homogeneous Dirichlet at both ends.
    DirichletDirichlet,
    /// Homogeneous Dirichlet at x = 0, homogeneous Neumann at x = 1.
    DirichletNeumann,
}

impl BoundaryConfig {
    pub fn eigenvalue(&self, j: usize) -> f64 {
        let k = self.wavenumber(j);
        k * k
    }

    fn wavenumber(&self, j: usize) -> f64 {
        match self {
            BoundaryConfig::DirichletDirichlet => j as f64 * PI,
            BoundaryConfig::DirichletNeumann => (j as f64 - 0.5) * PI,
        }
    }

    /// φ_j evaluated analytically; j is 1-based.
    pub fn eigenfunction(&self, j: usize, x: f64) -> f64 {
        std::f64::consts::SQRT_2 * (self.wavenumber(j) * x).sin()
    }
}

/// Truncated eigenbasis with its spatial quadrature grid.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    bc: BoundaryConfig,
    n_modes: usize,
    lambdas: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// phi[(j, i)] = φ_{j+1}(x_i), n_modes × (n_x + 1).
    phi: DMatrix<f64>,
    /// Rows of `phi` pre-scaled by quadrature weights, for projections.
    phi_w: DMatrix<f64>,
}

impl SpectralBasis {
    /// `n_x` counts grid cells; the node set has `n_x + 1` points.
    pub fn build(bc: BoundaryConfig, n_modes: usize, n_x: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::Domain("n_modes must be at least 1".into()));
        }
        if n_x < 8 * n_modes {
            return Err(Error::Resolution(format!(
                "n_x = {n_x} too coarse for {n_modes} modes; need n_x ≥ {}",
                8 * n_modes
            )));
        }
        let dx = 1.0 / n_x as f64;
        let nodes: Vec<f64> = (0..=n_x).map(|i| i as f64 * dx).collect();
        let mut weights = vec![dx; n_x + 1];
        weights[0] = 0.5 * dx;
        weights[n_x] = 0.5 * dx;
        let lambdas: Vec<f64> = (1..=n_modes).map(|j| bc.eigenvalue(j)).collect();
        let phi = DMatrix::from_fn(n_modes, n_x + 1, |j, i| bc.eigenfunction(j + 1, nodes[i]));
        let mut phi_w = phi.clone();
        for (i, &w) in weights.iter().enumerate() {
            phi_w.column_mut(i).scale_mut(w);
        }
        Ok(Self { bc, n_modes, lambdas, nodes, weights, phi, phi_w })
    }

    pub fn bc(&self) -> BoundaryConfig {
        self.bc
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_x(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// λ_j, 1-based.
    pub fn lambda(&self, j: usize) -> f64 {
        self.lambdas[j - 1]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub(crate) fn phi_weighted(&self) -> &DMatrix<f64> {
        &self.phi_w
    }

    /// φ_j(x) for arbitrary x, analytic; j is 1-based.
    pub fn phi_at(&self, j: usize, x: f64) -> f64 {
        self.bc.eigenfunction(j, x)
    }

    /// Modal coefficients ⟨f, φ_j⟩ by trapezoid quadrature.
    pub fn project(&self, f: &[f64]) -> Result<ModalVector> {
        if f.len() != self.nodes.len() {
            return Err(Error::Shape(format!(
                "grid function has {} samples, grid has {} nodes",
                f.len(),
                self.nodes.len()
            )));
        }
        let fv = DVector::from_column_slice(f);
        Ok(&self.phi_w * fv)
    }

    /// Σ_j v_j φ_j sampled on the grid.
    pub fn synthesize(&self, v: &ModalVector) -> Result<Vec<f64>> {
        if v.len() != self.n_modes {
            return Err(Error::Shape(format!(
                "modal vector has {} entries, basis has {} modes",
                v.len(),
                self.n_modes
            )));
        }
        let g = self.phi.transpose() * v;
        Ok(g.iter().copied().collect())
    }

    /// Σ_j v_j φ_j at an arbitrary point.
    pub fn synthesize_at(&self, v: &ModalVector, x: f64) -> f64 {
        (1..=self.n_modes).map(|j| v[j - 1] * self.phi_at(j, x)).sum()
    }

    /// Ḣˢ norm (Σ λ_j^s v_j²)^{1/2}.
    pub fn sobolev_norm(&self, v: &ModalVector, s: f64) -> f64 {
        v.iter()
            .zip(&self.lambdas)
            .map(|(c, l)| l.powf(s) * c * c)
            .sum::<f64>()
            .sqrt()
    }

    /// Apply the operator power: f ↦ Σ λ_j^β ⟨f,φ_j⟩ φ_j on the grid.
    pub fn apply_power(&self, f: &[f64], beta: f64) -> Result<Vec<f64>> {
        let mut coeffs = self.project(f)?;
        for (c, l) in coeffs.iter_mut().zip(&self.lambdas) {
            *c *= l.powf(beta);
        }
        self.synthesize(&coeffs)
    }

    /// Relative L² mass of `f` carried by the last mode, a proxy for the
    /// unresolved modal tail.
    pub fn modal_tail(&self, f: &[f64]) -> Result<f64> {
        let coeffs = self.project(f)?;
        let total = coeffs.norm();
        if total == 0.0 {
            return Ok(0.0);
        }
        Ok(coeffs[self.n_modes - 1].abs() / total)
    }
}
