//! Spatial domains, the polynomial weight ρ(x) = 1/(1+|x|^r), and the
//! discretized function space shared by fields, segments, and operators.
//!
//! Two domain kinds are supported in one space dimension:
//!
//! * `BoundedDirichlet` — the interval (0, ℓ) with zero boundary values and
//!   no weight (r = 0). Fields live in the span of the Dirichlet eigenmodes
//!   and are stored as spectral coefficient vectors.
//! * `WholeLineWeighted` — the line truncated to [−X, X] with the weight
//!   ρ(x) = 1/(1+|x|^r), r > 1. Fields are stored as grid values; norms are
//!   weighted trapezoid quadratures.

use std::sync::Arc;

use crate::basis::{build_basis, EigenBasis};
use crate::error::{CoreError, Result};

pub const MIN_GRID_POINTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainKind {
    BoundedDirichlet,
    WholeLineWeighted,
}

/// Geometry and weight parameters of a spatial domain.
#[derive(Clone, Debug)]
pub struct DomainSpec {
    pub kind: DomainKind,
    /// Interval length ℓ (bounded case).
    pub length: f64,
    /// Truncation radius X (whole-line case).
    pub truncation_radius: f64,
    pub grid_points: usize,
    /// Weight exponent r; zero on bounded domains.
    pub weight_exponent: f64,
    /// Comparison-weight exponent r̄ used by the two-weight hypothesis r > 1 + r̄.
    pub compare_weight_exponent: f64,
}

impl DomainSpec {
    pub fn bounded_dirichlet(length: f64, grid_points: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(CoreError::InvalidDomain(format!(
                "interval length must be finite and positive, got {length}"
            )));
        }
        check_grid(grid_points)?;
        Ok(Self {
            kind: DomainKind::BoundedDirichlet,
            length,
            truncation_radius: 0.0,
            grid_points,
            weight_exponent: 0.0,
            compare_weight_exponent: 0.0,
        })
    }

    pub fn whole_line(
        truncation_radius: f64,
        grid_points: usize,
        weight_exponent: f64,
        compare_weight_exponent: f64,
    ) -> Result<Self> {
        if !(truncation_radius.is_finite() && truncation_radius > 0.0) {
            return Err(CoreError::InvalidDomain(format!(
                "truncation radius must be finite and positive, got {truncation_radius}"
            )));
        }
        check_grid(grid_points)?;
        let r = weight_exponent;
        let r_bar = compare_weight_exponent;
        if !(r.is_finite() && r > 1.0) {
            return Err(CoreError::InvalidDomain(format!(
                "whole-line weight requires r > d = 1, got r = {r}"
            )));
        }
        if !(r_bar.is_finite() && r_bar >= 0.0) {
            return Err(CoreError::InvalidDomain(format!(
                "comparison exponent must be nonnegative, got {r_bar}"
            )));
        }
        if r <= 1.0 + r_bar {
            return Err(CoreError::InvalidDomain(format!(
                "whole-line weights require r > 1 + r̄, got r = {r}, r̄ = {r_bar}"
            )));
        }
        Ok(Self {
            kind: DomainKind::WholeLineWeighted,
            length: 0.0,
            truncation_radius,
            grid_points,
            weight_exponent: r,
            compare_weight_exponent: r_bar,
        })
    }

    /// ρ(x) = 1/(1+|x|^r); identically one on bounded domains.
    pub fn weight(&self, x: f64) -> f64 {
        match self.kind {
            DomainKind::BoundedDirichlet => 1.0,
            DomainKind::WholeLineWeighted => 1.0 / (1.0 + x.abs().powf(self.weight_exponent)),
        }
    }

    /// Comparison weight ρ̄(x) = 1/(1+|x|^r̄).
    pub fn compare_weight(&self, x: f64) -> f64 {
        match self.kind {
            DomainKind::BoundedDirichlet => 1.0,
            DomainKind::WholeLineWeighted => {
                1.0 / (1.0 + x.abs().powf(self.compare_weight_exponent))
            }
        }
    }
}

fn check_grid(grid_points: usize) -> Result<()> {
    if grid_points < MIN_GRID_POINTS {
        return Err(CoreError::InvalidDomain(format!(
            "grid_points must be at least {MIN_GRID_POINTS}, got {grid_points}"
        )));
    }
    Ok(())
}

/// A discretized state space: the domain, its grid and quadrature weights,
/// the weight ρ sampled on the grid, and (bounded case) the eigenbasis.
///
/// `Space` is immutable and shared by `Arc`; every `Field` holds a handle.
#[derive(Debug)]
pub struct Space {
    pub domain: DomainSpec,
    basis: Option<EigenBasis>,
    grid: Vec<f64>,
    quad_w: Vec<f64>,
    rho: Vec<f64>,
}

impl Space {
    /// Bounded Dirichlet interval with the default spectrum λ_k = (kπ/ℓ)².
    pub fn bounded(length: f64, grid_points: usize, n_modes: usize) -> Result<Arc<Self>> {
        let domain = DomainSpec::bounded_dirichlet(length, grid_points)?;
        let basis = build_basis(&domain, n_modes, None)?;
        Ok(Arc::new(Self::assemble(domain, Some(basis))))
    }

    /// Bounded interval with sine eigenfunctions but a caller-supplied
    /// eigenvalue sequence (constant-coefficient diagonalizable operator).
    pub fn bounded_with_spectrum(
        length: f64,
        grid_points: usize,
        spectrum: &[f64],
    ) -> Result<Arc<Self>> {
        let domain = DomainSpec::bounded_dirichlet(length, grid_points)?;
        let basis = build_basis(&domain, spectrum.len(), Some(spectrum))?;
        Ok(Arc::new(Self::assemble(domain, Some(basis))))
    }

    /// Truncated whole line with the weight exponents (r, r̄).
    pub fn whole_line(
        truncation_radius: f64,
        grid_points: usize,
        weight_exponent: f64,
        compare_weight_exponent: f64,
    ) -> Result<Arc<Self>> {
        let domain = DomainSpec::whole_line(
            truncation_radius,
            grid_points,
            weight_exponent,
            compare_weight_exponent,
        )?;
        Ok(Arc::new(Self::assemble(domain, None)))
    }

    fn assemble(domain: DomainSpec, basis: Option<EigenBasis>) -> Self {
        let n = domain.grid_points;
        let (a, b) = match domain.kind {
            DomainKind::BoundedDirichlet => (0.0, domain.length),
            DomainKind::WholeLineWeighted => (-domain.truncation_radius, domain.truncation_radius),
        };
        let dx = (b - a) / (n - 1) as f64;
        let grid: Vec<f64> = (0..n).map(|i| a + i as f64 * dx).collect();
        let mut quad_w = vec![dx; n];
        quad_w[0] = 0.5 * dx;
        quad_w[n - 1] = 0.5 * dx;
        let rho: Vec<f64> = grid.iter().map(|&x| domain.weight(x)).collect();
        Self {
            domain,
            basis,
            grid,
            quad_w,
            rho,
        }
    }

    pub fn kind(&self) -> DomainKind {
        self.domain.kind
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Trapezoid quadrature weights on the grid.
    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_w
    }

    /// ρ sampled on the grid.
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn basis(&self) -> Result<&EigenBasis> {
        self.basis
            .as_ref()
            .ok_or_else(|| CoreError::NoBasis("whole-line spaces carry no eigenbasis".into()))
    }

    pub fn has_basis(&self) -> bool {
        self.basis.is_some()
    }

    /// Degrees of freedom of a field: mode count (bounded) or grid size.
    pub fn field_len(&self) -> usize {
        match &self.basis {
            Some(b) => b.mode_count(),
            None => self.grid.len(),
        }
    }

    /// Weighted trapezoid quadrature ∫ f(x) ρ(x) dx over the grid.
    pub fn weighted_quadrature(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.grid.len());
        values
            .iter()
            .zip(&self.quad_w)
            .zip(&self.rho)
            .map(|((v, w), r)| v * w * r)
            .sum()
    }
}
