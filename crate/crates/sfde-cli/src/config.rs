//! Experiment configuration: JSON schema, exhaustive validation, and
//! construction of the core model objects.
//!
//! Parsing reports every violation it can find, not just the first, and
//! unknown keys are rejected at the serde level.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use sfde_core::{
    DomainKind, ModelSpec, NonlinearitySpec, QWienerSpec, ScalarMap, Space,
};

use crate::CliError;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelConfig,
    pub experiment: ExperimentBlock,
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub domain: DomainConfig,
    #[serde(default)]
    pub n_modes: Option<usize>,
    /// Optional explicit eigenvalue sequence (bounded domains).
    #[serde(default)]
    pub spectrum: Option<Vec<f64>>,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
    #[serde(default)]
    pub nonlinearity: Option<NonlinearityConfig>,
    #[serde(default)]
    pub delay: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    BoundedDirichlet {
        length: f64,
        grid_points: usize,
    },
    WholeLine {
        radius: f64,
        grid_points: usize,
        weight_exponent: f64,
        #[serde(default)]
        compare_weight_exponent: f64,
    },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub modes: usize,
    pub spectrum: NoiseSpectrumConfig,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpectrumConfig {
    Explicit { values: Vec<f64> },
    Geometric { ratio: f64 },
    Polynomial { power: f64 },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityConfig {
    pub kind: NonlinearityKindConfig,
    #[serde(default)]
    pub f: Option<ScalarMapConfig>,
    #[serde(default)]
    pub sigma: Option<ScalarMapConfig>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityKindConfig {
    Zero,
    IntegralLipschitz,
    PointDelay,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarMapConfig {
    pub shape: ScalarShapeConfig,
    #[serde(default = "default_gain")]
    pub gain: f64,
    #[serde(default)]
    pub clip: Option<f64>,
}

fn default_gain() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ScalarShapeConfig {
    Zero,
    Identity,
    Tanh,
    Constant,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Picard,
    Stationary,
    Attractivity,
    Invariant,
    Homogeneity,
    KernelCheck,
    Smallness,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Picard => "picard",
            Self::Stationary => "stationary",
            Self::Attractivity => "attractivity",
            Self::Invariant => "invariant",
            Self::Homogeneity => "homogeneity",
            Self::KernelCheck => "kernel-check",
            Self::Smallness => "smallness",
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    #[serde(default)]
    pub t_final: Option<f64>,
    #[serde(default)]
    pub ensemble: Option<usize>,
    #[serde(default)]
    pub burn_in: Option<f64>,
    #[serde(default)]
    pub record_stride: Option<usize>,
    /// Initial data: constant history scale·e_mode (zero scale = rest state).
    #[serde(default)]
    pub initial: Option<InitialConfig>,
    /// Fixed-point iteration tolerance (picard, stationary).
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Picard window length in time units.
    #[serde(default)]
    pub max_window: Option<f64>,
    /// Stationary lookback T_back.
    #[serde(default)]
    pub t_back: Option<f64>,
    #[serde(default)]
    pub insensitivity_tol: Option<f64>,
    /// Attractivity initial-gap direction and size.
    #[serde(default)]
    pub gap_mode: Option<usize>,
    #[serde(default)]
    pub gap_scale: Option<f64>,
    /// Homogeneity start offsets and lag.
    #[serde(default)]
    pub offsets: Option<Vec<f64>>,
    #[serde(default)]
    pub lag: Option<f64>,
    #[serde(default)]
    pub z_threshold: Option<f64>,
    /// Observable family size (mode coefficients tracked).
    #[serde(default)]
    pub k_obs: Option<usize>,
    /// Kernel-check sampling resolution.
    #[serde(default)]
    pub t_samples: Option<usize>,
    #[serde(default)]
    pub xy_samples: Option<usize>,
    /// Moment-bound tail/early ratio limit (simulate with ensembles).
    #[serde(default)]
    pub ratio_limit: Option<f64>,
    /// Start invariant-measure runs from the exact stationary law
    /// (additive models only).
    #[serde(default)]
    pub stationary_start: Option<bool>,
    /// Smallness: override the Lipschitz constant L (defaults to the
    /// model nonlinearity's declared constant).
    #[serde(default)]
    pub lipschitz_l: Option<f64>,
    /// Dump raw per-trajectory observable samples as CSV (invariant runs).
    #[serde(default)]
    pub dump_samples: Option<bool>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default = "default_mode")]
    pub mode: usize,
    #[serde(default = "default_gain")]
    pub scale: f64,
}

fn default_mode() -> usize {
    1
}

/// Reads and parses the config file. Missing files and malformed JSON are
/// distinct error classes (exit codes 5 and 6); semantic validation happens
/// in [`validate`].
pub fn parse_config(path: &Path) -> Result<ConfigFile, CliError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::MissingFile(path.display().to_string()));
        }
        Err(e) => return Err(CliError::MissingFile(format!("{}: {e}", path.display()))),
    };
    parse_config_str(&text)
}

/// Parses config JSON from memory (also the fuzzing entry point).
pub fn parse_config_str(text: &str) -> Result<ConfigFile, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Malformed(e.to_string()))
}

/// Model objects plus the effective experiment parameters.
pub struct Validated {
    pub config: ConfigFile,
    pub kind: ExperimentKind,
    pub space: Arc<Space>,
    /// Present for bounded domains; dynamics experiments require it.
    pub model: Option<ModelSpec>,
}

/// Collects every violation; returns them all.
pub fn validate(mut config: ConfigFile, cli_kind: Option<ExperimentKind>) -> Result<Validated, CliError> {
    let mut errors: Vec<String> = Vec::new();

    let kind = match (cli_kind, config.experiment.kind) {
        (Some(k), Some(c)) if k != c => {
            errors.push(format!(
                "experiment.kind '{}' conflicts with the requested subcommand '{}'",
                c.as_str(),
                k.as_str()
            ));
            k
        }
        (Some(k), _) => k,
        (None, Some(c)) => c,
        (None, None) => {
            errors.push("no experiment kind given (subcommand or experiment.kind)".into());
            ExperimentKind::Simulate
        }
    };
    config.experiment.kind = Some(kind);

    // Domain and space.
    let space = match &config.model.domain {
        DomainConfig::BoundedDirichlet {
            length,
            grid_points,
        } => {
            let n_modes = config.model.n_modes.unwrap_or(16);
            if n_modes == 0 {
                errors.push("model.n_modes must be at least 1".into());
            }
            if *grid_points < 8 {
                errors.push(format!(
                    "model.domain.grid_points = {grid_points} is below the minimum of 8"
                ));
            }
            if n_modes + 1 >= *grid_points {
                errors.push(format!(
                    "model.n_modes = {n_modes} needs more than {grid_points} grid points"
                ));
            }
            let built = match &config.model.spectrum {
                Some(spec) => {
                    if spec.len() != n_modes {
                        errors.push(format!(
                            "model.spectrum has {} entries but n_modes = {n_modes}",
                            spec.len()
                        ));
                    }
                    Space::bounded_with_spectrum(*length, *grid_points, spec)
                }
                None => Space::bounded(*length, *grid_points, n_modes),
            };
            match built {
                Ok(s) => Some(s),
                Err(e) => {
                    errors.push(format!("model.domain: {e}"));
                    None
                }
            }
        }
        DomainConfig::WholeLine {
            radius,
            grid_points,
            weight_exponent,
            compare_weight_exponent,
        } => {
            if *weight_exponent <= 1.0 {
                errors.push(format!(
                    "whole-line weight requires r > d = 1, got r = {weight_exponent}"
                ));
            }
            if *weight_exponent <= 1.0 + *compare_weight_exponent {
                errors.push(format!(
                    "whole-line weights require r > 1 + r̄, got r = {weight_exponent}, r̄ = {compare_weight_exponent}"
                ));
            }
            match Space::whole_line(
                *radius,
                *grid_points,
                *weight_exponent,
                *compare_weight_exponent,
            ) {
                Ok(s) => Some(s),
                Err(e) => {
                    // avoid duplicating the weight complaints above
                    let msg = format!("model.domain: {e}");
                    if !errors.iter().any(|x| msg.contains(x.as_str())) {
                        errors.push(msg);
                    }
                    None
                }
            }
        }
    };

    let needs_dynamics = !matches!(kind, ExperimentKind::KernelCheck | ExperimentKind::Smallness);
    let is_bounded = matches!(config.model.domain, DomainConfig::BoundedDirichlet { .. });
    if needs_dynamics && !is_bounded {
        errors.push(format!(
            "experiment kind '{}' requires a bounded (spectral) domain",
            kind.as_str()
        ));
    }

    // Time stepping.
    let delay = config.model.delay.unwrap_or(1.0);
    let dt = config.model.dt.unwrap_or(0.01);
    if !(delay > 0.0) {
        errors.push(format!("model.delay = {delay} must be positive"));
    }
    if !(dt > 0.0) {
        errors.push(format!("model.dt = {dt} must be positive"));
    } else if delay > 0.0 {
        let m = (delay / dt).round();
        if m < 1.0 || ((m * dt - delay) / delay).abs() > 1e-9 {
            errors.push(format!(
                "model.dt = {dt} must divide model.delay = {delay} (M·Δt = h)"
            ));
        }
    }

    // Nonlinearity.
    let nonlin = build_nonlinearity(config.model.nonlinearity.as_ref(), &mut errors);

    // Noise and full model (bounded only).
    let model = if let Some(space) = space.as_ref().filter(|s| s.kind() == DomainKind::BoundedDirichlet) {
        let basis = space.basis().expect("bounded space has a basis");
        let noise = match &config.model.noise {
            None => QWienerSpec::new(vec![0.0], basis),
            Some(nc) => {
                if nc.modes == 0 || nc.modes > basis.mode_count() {
                    errors.push(format!(
                        "model.noise.modes = {} must lie in 1..={}",
                        nc.modes,
                        basis.mode_count()
                    ));
                }
                match &nc.spectrum {
                    NoiseSpectrumConfig::Explicit { values } => {
                        if values.len() != nc.modes {
                            errors.push(format!(
                                "model.noise.spectrum has {} values but modes = {}",
                                values.len(),
                                nc.modes
                            ));
                        }
                        QWienerSpec::new(values.clone(), basis)
                    }
                    NoiseSpectrumConfig::Geometric { ratio } => {
                        QWienerSpec::geometric(*ratio, nc.modes.min(basis.mode_count()), basis)
                    }
                    NoiseSpectrumConfig::Polynomial { power } => {
                        QWienerSpec::polynomial(*power, nc.modes.min(basis.mode_count()), basis)
                    }
                }
            }
        };
        match noise {
            Ok(noise) if errors.is_empty() => {
                match ModelSpec::new(Arc::clone(space), noise, nonlin.clone(), delay, dt) {
                    Ok(m) => Some(m),
                    Err(e) => {
                        errors.push(format!("model: {e}"));
                        None
                    }
                }
            }
            Ok(_) => None,
            Err(e) => {
                errors.push(format!("model.noise: {e}"));
                None
            }
        }
    } else {
        None
    };

    validate_experiment(&config.experiment, kind, model.as_ref(), &mut errors);

    if !errors.is_empty() {
        return Err(CliError::Validation(errors));
    }
    // Fill the model-block defaults so the manifest echoes the effective
    // configuration, not just what the file spelled out.
    if matches!(config.model.domain, DomainConfig::BoundedDirichlet { .. }) {
        config.model.n_modes.get_or_insert(16);
    }
    config.model.delay.get_or_insert(delay);
    config.model.dt.get_or_insert(dt);
    if config.model.nonlinearity.is_none() {
        config.model.nonlinearity = Some(NonlinearityConfig {
            kind: NonlinearityKindConfig::Zero,
            f: None,
            sigma: None,
        });
    }
    if config.model.noise.is_none() && model.is_some() {
        config.model.noise = Some(NoiseConfig {
            modes: 1,
            spectrum: NoiseSpectrumConfig::Explicit { values: vec![0.0] },
        });
    }
    Ok(Validated {
        config,
        kind,
        space: space.expect("space built when no errors"),
        model,
    })
}

fn build_nonlinearity(
    nc: Option<&NonlinearityConfig>,
    errors: &mut Vec<String>,
) -> NonlinearitySpec {
    let Some(nc) = nc else {
        return NonlinearitySpec::zero();
    };
    let map = |mc: Option<&ScalarMapConfig>, label: &str, errors: &mut Vec<String>| match mc {
        None => ScalarMap::zero(),
        Some(c) => {
            if !c.gain.is_finite() {
                errors.push(format!("model.nonlinearity.{label}.gain must be finite"));
            }
            if let Some(clip) = c.clip {
                if !(clip > 0.0) {
                    errors.push(format!(
                        "model.nonlinearity.{label}.clip = {clip} must be positive"
                    ));
                }
            }
            let base = match c.shape {
                ScalarShapeConfig::Zero => ScalarMap::zero(),
                ScalarShapeConfig::Identity => ScalarMap::identity(c.gain),
                ScalarShapeConfig::Tanh => ScalarMap::tanh(c.gain),
                ScalarShapeConfig::Constant => ScalarMap::constant(c.gain),
            };
            match c.clip {
                Some(clip) if clip > 0.0 => base.with_clip(clip),
                _ => base,
            }
        }
    };
    match nc.kind {
        NonlinearityKindConfig::Zero => {
            if nc.f.is_some() || nc.sigma.is_some() {
                errors.push("model.nonlinearity.kind = zero admits no f/sigma blocks".into());
            }
            NonlinearitySpec::zero()
        }
        NonlinearityKindConfig::IntegralLipschitz => {
            let f = map(nc.f.as_ref(), "f", errors);
            let s = map(nc.sigma.as_ref(), "sigma", errors);
            NonlinearitySpec::integral(f, s)
        }
        NonlinearityKindConfig::PointDelay => {
            let f = map(nc.f.as_ref(), "f", errors);
            let s = map(nc.sigma.as_ref(), "sigma", errors);
            NonlinearitySpec::point_delay(f, s)
        }
    }
}

fn validate_experiment(
    exp: &ExperimentBlock,
    kind: ExperimentKind,
    model: Option<&ModelSpec>,
    errors: &mut Vec<String>,
) {
    if let Some(t) = exp.t_final {
        if !(t >= 0.0 && t.is_finite()) {
            errors.push(format!("experiment.t_final = {t} must be nonnegative"));
        }
    }
    if let Some(tol) = exp.tolerance {
        if !(tol > 0.0) {
            errors.push(format!("experiment.tolerance = {tol} must be positive"));
        }
    }
    if let Some(z) = exp.z_threshold {
        if !(z > 0.0) {
            errors.push(format!("experiment.z_threshold = {z} must be positive"));
        }
    }
    match kind {
        ExperimentKind::Invariant => {
            if let (Some(model), Some(t)) = (model, exp.t_final) {
                let burn = exp
                    .burn_in
                    .unwrap_or_else(|| sfde_core::default_burn_in(model));
                if t <= burn {
                    errors.push(format!(
                        "experiment.t_final = {t} must exceed the burn-in {burn}"
                    ));
                }
            }
            if exp.ensemble.is_some_and(|n| n < 2) {
                errors.push("experiment.ensemble must be at least 2".into());
            }
        }
        ExperimentKind::Homogeneity => {
            if let Some(offsets) = &exp.offsets {
                if offsets.len() < 2 {
                    errors.push("experiment.offsets needs at least two entries".into());
                }
            }
            if exp.lag.is_some_and(|l| !(l > 0.0)) {
                errors.push("experiment.lag must be positive".into());
            }
        }
        ExperimentKind::Attractivity => {
            if let (Some(model), Some(t)) = (model, exp.t_final) {
                if t <= model.delay() {
                    errors.push(format!(
                        "experiment.t_final = {t} must exceed the delay h = {} for the fit window",
                        model.delay()
                    ));
                }
            }
        }
        ExperimentKind::Stationary if exp.t_back.is_some_and(|t| !(t > 0.0)) => {
            errors.push("experiment.t_back must be positive".into());
        }
        _ => {}
    }
    if let Some(model) = model {
        if let Some(init) = &exp.initial {
            let n = model.space().basis().map(|b| b.mode_count()).unwrap_or(0);
            if init.mode == 0 || init.mode > n {
                errors.push(format!(
                    "experiment.initial.mode = {} must lie in 1..={n}",
                    init.mode
                ));
            }
        }
        if let Some(gap_mode) = exp.gap_mode {
            let n = model.space().basis().map(|b| b.mode_count()).unwrap_or(0);
            if gap_mode == 0 || gap_mode > n {
                errors.push(format!(
                    "experiment.gap_mode = {gap_mode} must lie in 1..={n}"
                ));
            }
        }
    }
}
