//! Fields, delay segments, and the paired full state, with the three norms
//! ‖·‖_{B₀}, ‖·‖_{B₁}, ‖·‖_B.
//!
//! A `Field` is one point of B₀^ρ: spectral coefficients on a bounded domain
//! (so the B₀ norm is the plain Euclidean norm of the coefficients), grid
//! values against the weight ρ on the whole line. A `DelaySegment` is one
//! point of B₁^ρ = L²(−h, 0; B₀^ρ): a ring buffer of M+1 fields at the
//! θ-nodes −h + jΔt, with M·Δt = h exactly so the delayed lookup u(t−h) is
//! plain indexing. The product norm splits as ‖y‖² = ‖u‖²_{B₀} + ‖u_t‖²_{B₁}.

use std::sync::Arc;

use crate::domain::{DomainKind, Space};
use crate::error::{CoreError, Result};

#[derive(Clone, Debug)]
pub struct Field {
    space: Arc<Space>,
    values: Vec<f64>,
}

impl Field {
    pub fn zero(space: &Arc<Space>) -> Self {
        Self {
            space: Arc::clone(space),
            values: vec![0.0; space.field_len()],
        }
    }

    /// Spectral field from mode coefficients (bounded domains only).
    pub fn from_coeffs(space: &Arc<Space>, coeffs: Vec<f64>) -> Result<Self> {
        let basis = space.basis()?;
        if coeffs.len() != basis.mode_count() {
            return Err(CoreError::Mismatch(format!(
                "expected {} coefficients, got {}",
                basis.mode_count(),
                coeffs.len()
            )));
        }
        Ok(Self {
            space: Arc::clone(space),
            values: coeffs,
        })
    }

    /// The k-th basis mode e_{k+1} as a field (unit coefficient).
    pub fn basis_mode(space: &Arc<Space>, k: usize) -> Result<Self> {
        let basis = space.basis()?;
        if k >= basis.mode_count() {
            return Err(CoreError::Mismatch(format!(
                "mode {k} out of range (N = {})",
                basis.mode_count()
            )));
        }
        let mut f = Self::zero(space);
        f.values[k] = 1.0;
        Ok(f)
    }

    /// Grid-value field (whole-line domains only).
    pub fn from_grid(space: &Arc<Space>, values: Vec<f64>) -> Result<Self> {
        if space.kind() != DomainKind::WholeLineWeighted {
            return Err(CoreError::Mismatch(
                "bounded-domain fields are stored spectrally; use project_grid".into(),
            ));
        }
        if values.len() != space.grid().len() {
            return Err(CoreError::Mismatch(format!(
                "expected {} grid values, got {}",
                space.grid().len(),
                values.len()
            )));
        }
        Ok(Self {
            space: Arc::clone(space),
            values,
        })
    }

    /// L² projection of grid samples onto the retained modes (bounded case):
    /// c_k = ∫ u e_k dx by trapezoid quadrature.
    pub fn project_grid(space: &Arc<Space>, grid_values: &[f64]) -> Result<Self> {
        let basis = space.basis()?;
        if grid_values.len() != space.grid().len() {
            return Err(CoreError::Mismatch(format!(
                "expected {} grid values, got {}",
                space.grid().len(),
                grid_values.len()
            )));
        }
        let w = space.quad_weights();
        let coeffs = (0..basis.mode_count())
            .map(|k| {
                let mode = basis.mode_on_grid(k);
                grid_values
                    .iter()
                    .zip(mode)
                    .zip(w)
                    .map(|((u, e), w)| u * e * w)
                    .sum()
            })
            .collect();
        Ok(Self {
            space: Arc::clone(space),
            values: coeffs,
        })
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    /// Spectral coefficients (bounded) or grid values (whole line).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Pointwise values on the grid. Synthesizes Σ c_k e_k on bounded
    /// domains; clones on the whole line.
    pub fn to_grid(&self) -> Vec<f64> {
        match self.space.kind() {
            DomainKind::WholeLineWeighted => self.values.clone(),
            DomainKind::BoundedDirichlet => {
                let basis = self.space.basis().expect("bounded space has basis");
                let n = self.space.grid().len();
                let mut out = vec![0.0; n];
                for (k, &c) in self.values.iter().enumerate() {
                    if c == 0.0 {
                        continue;
                    }
                    for (o, e) in out.iter_mut().zip(basis.mode_on_grid(k)) {
                        *o += c * e;
                    }
                }
                out
            }
        }
    }

    /// ‖·‖_{B₀^ρ}: Euclidean coefficient norm (Parseval) on bounded domains,
    /// √∫|u|²ρ dx by trapezoid quadrature on the whole line.
    pub fn norm_b0(&self) -> f64 {
        self.norm_b0_sq().sqrt()
    }

    pub fn norm_b0_sq(&self) -> f64 {
        match self.space.kind() {
            DomainKind::BoundedDirichlet => self.values.iter().map(|v| v * v).sum(),
            DomainKind::WholeLineWeighted => {
                let sq: Vec<f64> = self.values.iter().map(|v| v * v).collect();
                self.space.weighted_quadrature(&sq)
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// self += s · other
    pub fn axpy(&mut self, s: f64, other: &Field) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn sub(&self, other: &Field) -> Field {
        debug_assert_eq!(self.values.len(), other.values.len());
        Field {
            space: Arc::clone(&self.space),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

/// The history slice u_t(θ) = u(t+θ), θ ∈ [−h, 0], as a ring buffer of
/// M+1 fields at θ_j = −h + jΔt.
#[derive(Clone, Debug)]
pub struct DelaySegment {
    /// Physical storage; `start` is the slot holding θ = −h.
    slots: Vec<Field>,
    start: usize,
    dt: f64,
    h: f64,
}

impl DelaySegment {
    /// Builds a segment from fields ordered oldest (θ = −h) to newest (θ = 0).
    pub fn from_fields(fields: Vec<Field>, h: f64, dt: f64) -> Result<Self> {
        if fields.len() < 2 {
            return Err(CoreError::InvalidArgument(
                "a delay segment needs at least two θ-nodes".into(),
            ));
        }
        let m = fields.len() - 1;
        check_delay_step(h, dt, m)?;
        Ok(Self {
            slots: fields,
            start: 0,
            dt,
            h,
        })
    }

    /// Constant-in-θ segment.
    pub fn constant(field: &Field, h: f64, dt: f64) -> Result<Self> {
        let m = steps_in_delay(h, dt)?;
        Ok(Self {
            slots: vec![field.clone(); m + 1],
            start: 0,
            dt,
            h,
        })
    }

    /// Segment sampled from a θ-profile: node j holds `profile(−h + jΔt)`.
    pub fn from_profile(
        h: f64,
        dt: f64,
        mut profile: impl FnMut(f64) -> Field,
    ) -> Result<Self> {
        let m = steps_in_delay(h, dt)?;
        let fields = (0..=m).map(|j| profile(-h + j as f64 * dt)).collect();
        Self::from_fields(fields, h, dt)
    }

    /// Number of steps M with M·Δt = h.
    pub fn steps(&self) -> usize {
        self.slots.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn delay(&self) -> f64 {
        self.h
    }

    /// Field at node j, counting from the oldest: θ_j = −h + jΔt.
    pub fn node(&self, j: usize) -> &Field {
        debug_assert!(j < self.slots.len());
        &self.slots[(self.start + j) % self.slots.len()]
    }

    /// The newest entry (θ = 0).
    pub fn newest(&self) -> &Field {
        self.node(self.steps())
    }

    /// The oldest entry (θ = −h), i.e. the fully delayed value u(t−h).
    pub fn oldest(&self) -> &Field {
        self.node(0)
    }

    /// Advances the window one step: drops θ = −h, appends the new head.
    /// Afterwards the content at θ equals the old content at θ+Δt for
    /// θ ∈ [−h, −Δt].
    pub fn advance(&mut self, new_head: Field) {
        let len = self.slots.len();
        self.slots[self.start] = new_head;
        self.start = (self.start + 1) % len;
    }

    /// ‖·‖_{B₁^ρ}: √(trapezoid over θ of ‖u(t+θ)‖²_{B₀}).
    pub fn norm_b1(&self) -> f64 {
        self.norm_b1_sq().sqrt()
    }

    pub fn norm_b1_sq(&self) -> f64 {
        let m = self.steps();
        let mut acc = 0.0;
        for j in 0..=m {
            let w = if j == 0 || j == m { 0.5 } else { 1.0 };
            acc += w * self.node(j).norm_b0_sq();
        }
        acc * self.dt
    }

    /// Trapezoid θ-distance to another segment, squared.
    pub fn distance_b1_sq(&self, other: &DelaySegment) -> f64 {
        debug_assert_eq!(self.steps(), other.steps());
        let m = self.steps();
        let mut acc = 0.0;
        for j in 0..=m {
            let w = if j == 0 || j == m { 0.5 } else { 1.0 };
            acc += w * self.node(j).sub(other.node(j)).norm_b0_sq();
        }
        acc * self.dt
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().all(Field::all_finite)
    }
}

pub(crate) fn steps_in_delay(h: f64, dt: f64) -> Result<usize> {
    if !(h.is_finite() && h > 0.0 && dt.is_finite() && dt > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "delay h = {h} and step Δt = {dt} must be positive"
        )));
    }
    let m = (h / dt).round();
    if m < 1.0 || ((m * dt - h) / h).abs() > 1e-9 {
        return Err(CoreError::InvalidArgument(format!(
            "step Δt = {dt} must divide the delay h = {h} (M·Δt = h)"
        )));
    }
    Ok(m as usize)
}

fn check_delay_step(h: f64, dt: f64, m: usize) -> Result<()> {
    let expect = steps_in_delay(h, dt)?;
    if expect != m {
        return Err(CoreError::InvalidArgument(format!(
            "segment holds {m} steps but h/Δt = {expect}"
        )));
    }
    Ok(())
}

/// The pair y(t) = (u(t), u_t) ∈ B^ρ = B₀^ρ × B₁^ρ.
///
/// The head is the segment's newest entry, so the pairing invariant holds by
/// construction.
#[derive(Clone, Debug)]
pub struct FullState {
    segment: DelaySegment,
}

impl FullState {
    pub fn new(segment: DelaySegment) -> Self {
        Self { segment }
    }

    /// State with constant history equal to `field`.
    pub fn constant(field: &Field, h: f64, dt: f64) -> Result<Self> {
        Ok(Self {
            segment: DelaySegment::constant(field, h, dt)?,
        })
    }

    pub fn head(&self) -> &Field {
        self.segment.newest()
    }

    pub fn segment(&self) -> &DelaySegment {
        &self.segment
    }

    pub fn segment_mut(&mut self) -> &mut DelaySegment {
        &mut self.segment
    }

    /// ‖y‖_B = √(‖u‖²_{B₀} + ‖u_t‖²_{B₁}).
    pub fn norm_b(&self) -> f64 {
        self.norm_b_sq().sqrt()
    }

    pub fn norm_b_sq(&self) -> f64 {
        self.head().norm_b0_sq() + self.segment.norm_b1_sq()
    }

    /// Squared B-distance to another state under the product split.
    pub fn distance_b_sq(&self, other: &FullState) -> f64 {
        self.head().sub(other.head()).norm_b0_sq()
            + self.segment.distance_b1_sq(&other.segment)
    }

    pub fn all_finite(&self) -> bool {
        self.segment.all_finite()
    }
}
