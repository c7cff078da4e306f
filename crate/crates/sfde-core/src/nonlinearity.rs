//! Delay functionals f, σ : B₁^ρ → B₀^ρ built from scalar primitives.
//!
//! The integral kind is the worked example of the theory:
//! f[φ] = f̄(∫_{−h}^0 φ(θ) dθ) pointwise in x, which is Lipschitz from B₁ to
//! B₀ with constant Lip(f̄)·√h by Cauchy–Schwarz. The point-delay kind
//! applies f̄ to φ(−h); on the discrete θ-grid its constant is
//! Lip(f̄)·√(2/Δt) (the trapezoid endpoint carries weight Δt/2).

use std::sync::Arc;

use crate::domain::DomainKind;
use crate::error::{CoreError, Result};
use crate::field::{DelaySegment, Field};
use crate::noise::RngStream;

/// Scalar primitive x ↦ gain·shape(x), optionally clipped to [−clip, clip].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarMap {
    pub shape: ScalarShape,
    pub gain: f64,
    pub clip: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarShape {
    Zero,
    Identity,
    Tanh,
    /// Ignores its argument: σ̄ ≡ gain gives additive noise.
    Constant,
}

impl ScalarMap {
    pub fn zero() -> Self {
        Self {
            shape: ScalarShape::Zero,
            gain: 0.0,
            clip: None,
        }
    }

    pub fn identity(gain: f64) -> Self {
        Self {
            shape: ScalarShape::Identity,
            gain,
            clip: None,
        }
    }

    pub fn tanh(gain: f64) -> Self {
        Self {
            shape: ScalarShape::Tanh,
            gain,
            clip: None,
        }
    }

    pub fn constant(gain: f64) -> Self {
        Self {
            shape: ScalarShape::Constant,
            gain,
            clip: None,
        }
    }

    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip = Some(clip);
        self
    }

    pub fn apply(&self, x: f64) -> f64 {
        let y = match self.shape {
            ScalarShape::Zero => 0.0,
            ScalarShape::Identity => self.gain * x,
            ScalarShape::Tanh => self.gain * x.tanh(),
            ScalarShape::Constant => self.gain,
        };
        match self.clip {
            Some(c) => y.clamp(-c, c),
            None => y,
        }
    }

    /// Lipschitz constant of the scalar map (clipping never increases it).
    pub fn lipschitz(&self) -> f64 {
        match self.shape {
            ScalarShape::Zero | ScalarShape::Constant => 0.0,
            ScalarShape::Identity | ScalarShape::Tanh => self.gain.abs(),
        }
    }

    /// Uniform bound ‖map‖_∞ if one exists.
    pub fn sup_bound(&self) -> Option<f64> {
        let natural = match self.shape {
            ScalarShape::Zero => Some(0.0),
            ScalarShape::Tanh | ScalarShape::Constant => Some(self.gain.abs()),
            ScalarShape::Identity => None,
        };
        match (natural, self.clip) {
            (Some(b), Some(c)) => Some(b.min(c)),
            (Some(b), None) => Some(b),
            (None, Some(c)) => Some(c),
            (None, None) => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.shape == ScalarShape::Zero || (self.gain == 0.0 && self.shape != ScalarShape::Constant)
    }

    pub fn is_constant(&self) -> bool {
        self.shape == ScalarShape::Constant
    }
}

type CustomFunctional = Arc<dyn Fn(&DelaySegment) -> Field + Send + Sync>;

/// How the delay segment enters the drift and diffusion.
#[derive(Clone)]
pub enum FunctionalKind {
    /// f = σ = 0.
    Zero,
    /// f̄ and σ̄ applied to the θ-integral of the segment.
    IntegralLipschitz,
    /// f̄ and σ̄ applied to the fully delayed value φ(−h).
    PointDelay,
    /// Caller-supplied functionals; the declared constant is checked only
    /// post hoc by `lipschitz_probe`.
    Custom {
        f: CustomFunctional,
        sigma: CustomFunctional,
    },
}

impl std::fmt::Debug for FunctionalKind {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FunctionalKind::Zero => write!(fm, "Zero"),
            FunctionalKind::IntegralLipschitz => write!(fm, "IntegralLipschitz"),
            FunctionalKind::PointDelay => write!(fm, "PointDelay"),
            FunctionalKind::Custom { .. } => write!(fm, "Custom"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NonlinearitySpec {
    pub kind: FunctionalKind,
    pub f_map: ScalarMap,
    pub sigma_map: ScalarMap,
    /// Declared scalar Lipschitz constant L of the primitives. For the
    /// built-in kinds this is max(Lip f̄, Lip σ̄); for Custom it is asserted
    /// by the caller.
    pub declared_l: f64,
}

impl NonlinearitySpec {
    pub fn zero() -> Self {
        Self {
            kind: FunctionalKind::Zero,
            f_map: ScalarMap::zero(),
            sigma_map: ScalarMap::zero(),
            declared_l: 0.0,
        }
    }

    pub fn integral(f_map: ScalarMap, sigma_map: ScalarMap) -> Self {
        Self {
            declared_l: f_map.lipschitz().max(sigma_map.lipschitz()),
            kind: FunctionalKind::IntegralLipschitz,
            f_map,
            sigma_map,
        }
    }

    pub fn point_delay(f_map: ScalarMap, sigma_map: ScalarMap) -> Self {
        Self {
            declared_l: f_map.lipschitz().max(sigma_map.lipschitz()),
            kind: FunctionalKind::PointDelay,
            f_map,
            sigma_map,
        }
    }

    pub fn custom(f: CustomFunctional, sigma: CustomFunctional, declared_l: f64) -> Self {
        Self {
            kind: FunctionalKind::Custom { f, sigma },
            f_map: ScalarMap::zero(),
            sigma_map: ScalarMap::zero(),
            declared_l,
        }
    }

    /// Functional Lipschitz bound B₁ → B₀ implied by the declared scalar
    /// constant: L√h for the integral kind, L√(2/Δt) for the discrete point
    /// delay.
    pub fn functional_lipschitz_bound(&self, h: f64, dt: f64) -> f64 {
        match self.kind {
            FunctionalKind::Zero => 0.0,
            FunctionalKind::IntegralLipschitz => self.declared_l * h.sqrt(),
            FunctionalKind::PointDelay => self.declared_l * (2.0 / dt).sqrt(),
            FunctionalKind::Custom { .. } => self.declared_l,
        }
    }

    /// Whether the drift admits a uniform envelope and the diffusion a
    /// uniform bound σ₀ (the moment-boundedness hypotheses).
    pub fn is_bounded(&self) -> bool {
        match self.kind {
            FunctionalKind::Zero => true,
            FunctionalKind::IntegralLipschitz | FunctionalKind::PointDelay => {
                self.f_map.sup_bound().is_some() && self.sigma_map.sup_bound().is_some()
            }
            FunctionalKind::Custom { .. } => false,
        }
    }
}

/// The multiplier produced by σ(u_t), kept at grid level so the stepper can
/// apply it to a noise increment without an intermediate projection.
pub enum SigmaMultiplier {
    Zero,
    /// σ̄ ≡ c: additive noise, exactly diagonal in modes.
    Constant(f64),
    Grid(Vec<f64>),
}

/// θ-trapezoid of the segment, taken coefficient-wise (synthesis is linear,
/// so this equals integrating the grid values).
fn segment_theta_integral(segment: &DelaySegment) -> Vec<f64> {
    let m = segment.steps();
    let len = segment.newest().values().len();
    let mut acc = vec![0.0; len];
    for j in 0..=m {
        let w = if j == 0 || j == m { 0.5 } else { 1.0 };
        for (a, v) in acc.iter_mut().zip(segment.node(j).values()) {
            *a += w * v;
        }
    }
    for a in &mut acc {
        *a *= segment.dt();
    }
    acc
}

fn scalar_argument_grid(kind: &FunctionalKind, segment: &DelaySegment) -> Result<Vec<f64>> {
    let space = segment.newest().space();
    if space.kind() != DomainKind::BoundedDirichlet {
        return Err(CoreError::NoBasis(
            "delay functionals act on spectral (bounded-domain) fields".into(),
        ));
    }
    match kind {
        FunctionalKind::IntegralLipschitz => {
            let coeffs = segment_theta_integral(segment);
            Ok(Field::from_coeffs(space, coeffs)?.to_grid())
        }
        FunctionalKind::PointDelay => Ok(segment.oldest().to_grid()),
        _ => unreachable!("only argument-taking kinds"),
    }
}

/// Drift functional f(u_t), projected onto the retained modes.
pub fn eval_f(nonlin: &NonlinearitySpec, segment: &DelaySegment) -> Result<Field> {
    let space = segment.newest().space();
    match &nonlin.kind {
        FunctionalKind::Zero => Ok(Field::zero(space)),
        FunctionalKind::Custom { f, .. } => Ok(f(segment)),
        kind => {
            if nonlin.f_map.is_zero() {
                return Ok(Field::zero(space));
            }
            let arg = scalar_argument_grid(kind, segment)?;
            let mapped: Vec<f64> = arg.iter().map(|&v| nonlin.f_map.apply(v)).collect();
            Field::project_grid(space, &mapped)
        }
    }
}

/// Diffusion functional σ(u_t), projected onto the retained modes.
pub fn eval_sigma(nonlin: &NonlinearitySpec, segment: &DelaySegment) -> Result<Field> {
    let space = segment.newest().space();
    match &nonlin.kind {
        FunctionalKind::Zero => Ok(Field::zero(space)),
        FunctionalKind::Custom { sigma, .. } => Ok(sigma(segment)),
        kind => {
            if nonlin.sigma_map.is_zero() {
                return Ok(Field::zero(space));
            }
            if nonlin.sigma_map.is_constant() {
                let c = nonlin.sigma_map.apply(0.0);
                let grid = vec![c; space.grid().len()];
                return Field::project_grid(space, &grid);
            }
            let arg = scalar_argument_grid(kind, segment)?;
            let mapped: Vec<f64> = arg.iter().map(|&v| nonlin.sigma_map.apply(v)).collect();
            Field::project_grid(space, &mapped)
        }
    }
}

/// σ(u_t) as the multiplication operator the stepper applies to noise.
pub fn eval_sigma_multiplier(
    nonlin: &NonlinearitySpec,
    segment: &DelaySegment,
) -> Result<SigmaMultiplier> {
    match &nonlin.kind {
        FunctionalKind::Zero => Ok(SigmaMultiplier::Zero),
        FunctionalKind::Custom { sigma, .. } => Ok(SigmaMultiplier::Grid(sigma(segment).to_grid())),
        kind => {
            if nonlin.sigma_map.is_zero() {
                return Ok(SigmaMultiplier::Zero);
            }
            if nonlin.sigma_map.is_constant() {
                return Ok(SigmaMultiplier::Constant(nonlin.sigma_map.apply(0.0)));
            }
            let arg = scalar_argument_grid(kind, segment)?;
            Ok(SigmaMultiplier::Grid(
                arg.iter().map(|&v| nonlin.sigma_map.apply(v)).collect(),
            ))
        }
    }
}

#[derive(Clone, Debug)]
pub struct LipschitzProbe {
    pub l_hat_f: f64,
    pub l_hat_sigma: f64,
    pub declared_bound_f: f64,
    pub declared_bound_sigma: f64,
    pub accepted: bool,
}

/// Empirical Lipschitz ratio over random segment pairs:
/// max ‖F(φ₁) − F(φ₂)‖_{B₀} / ‖φ₁ − φ₂‖_{B₁}. The nonlinearity is accepted
/// for solver use iff the measured ratio stays within the declared bound.
pub fn lipschitz_probe(
    nonlin: &NonlinearitySpec,
    sampler: &mut dyn FnMut(&mut rand_chacha::ChaCha12Rng) -> DelaySegment,
    trials: usize,
    stream: &RngStream,
) -> Result<LipschitzProbe> {
    if trials == 0 {
        return Err(CoreError::InvalidArgument("need at least one trial".into()));
    }
    let mut l_f: f64 = 0.0;
    let mut l_s: f64 = 0.0;
    let mut h = 0.0;
    let mut dt = 0.0;
    for trial in 0..trials {
        let mut rng = stream.at(crate::noise::MISC_COUNTER_BASE + trial as u64);
        let a = sampler(&mut rng);
        let b = sampler(&mut rng);
        h = a.delay();
        dt = a.dt();
        let dist = a.distance_b1_sq(&b).sqrt();
        if dist < 1e-12 {
            continue;
        }
        let df = eval_f(nonlin, &a)?.sub(&eval_f(nonlin, &b)?).norm_b0();
        let ds = eval_sigma(nonlin, &a)?
            .sub(&eval_sigma(nonlin, &b)?)
            .norm_b0();
        l_f = l_f.max(df / dist);
        l_s = l_s.max(ds / dist);
    }
    let bound = nonlin.functional_lipschitz_bound(h, dt);
    // For built-in kinds the same construction bounds both functionals with
    // the map's own constant in place of the shared L.
    let bound_f = match nonlin.kind {
        FunctionalKind::Custom { .. } | FunctionalKind::Zero => bound,
        FunctionalKind::IntegralLipschitz => nonlin.f_map.lipschitz() * h.sqrt(),
        FunctionalKind::PointDelay => nonlin.f_map.lipschitz() * (2.0 / dt).sqrt(),
    };
    let bound_s = match nonlin.kind {
        FunctionalKind::Custom { .. } | FunctionalKind::Zero => bound,
        FunctionalKind::IntegralLipschitz => nonlin.sigma_map.lipschitz() * h.sqrt(),
        FunctionalKind::PointDelay => nonlin.sigma_map.lipschitz() * (2.0 / dt).sqrt(),
    };
    let slack = 1.0 + 1e-6;
    let accepted = l_f <= bound_f * slack + 1e-15 && l_s <= bound_s * slack + 1e-15;
    Ok(LipschitzProbe {
        l_hat_f: l_f,
        l_hat_sigma: l_s,
        declared_bound_f: bound_f,
        declared_bound_sigma: bound_s,
        accepted,
    })
}
