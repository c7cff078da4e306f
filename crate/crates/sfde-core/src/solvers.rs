//! Constructive solution schemes and the smallness-condition calculator.
//!
//! * Picard: iterate the variation-of-constants map on a time window with a
//!   frozen noise path until the iterates contract below tolerance, then
//!   concatenate windows. The discretized map shares the stepper's update
//!   kernel, so its fixed point is exactly the stepper's path under the same
//!   frozen noise.
//! * Successive approximations toward the stationary solution: u⁽⁰⁾ = 0 and
//!   u⁽ⁿ⁺¹⁾ solves the linear equation with the delay arguments frozen at
//!   u⁽ⁿ⁾, driven by a two-sided frozen noise path from −T_back. The
//!   t₀ → −∞ limit is proxied by doubling T_back and checking insensitivity.
//! * The smallness calculator evaluates both explicit conditions on
//!   (h, λ₁, a, L): the iteration condition hL²(4/λ₁² + 2a/λ₁) < 1 and the
//!   attractivity condition γ₀L² < λ₁ with γ₀ = (3+3he^{λ₁h})(1/λ₁ + a).

use serde::Serialize;

use crate::dynamics::{ensemble_pair_difference, ModelSpec, Stepper};
use crate::error::{CoreError, Result};
use crate::field::{DelaySegment, Field, FullState};
use crate::noise::{extend_two_sided, RngStream, StreamFamily};

/// A discrete path iterate on a time window.
#[derive(Clone, Debug)]
pub struct PathApproximation {
    pub start_time: f64,
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
    pub iteration: usize,
    pub sup_distance_to_prev: f64,
}

/// Noise increments pre-sampled per absolute step index and immutable
/// across fixed-point iterations. Step j < 0 draws from the backward stream
/// at counter −1−j, so enlarging the lookback window never changes the
/// increments on shared steps.
pub struct FrozenNoise {
    increments: Vec<Vec<f64>>,
    /// Index of absolute step 0 within `increments`.
    offset: usize,
    active: bool,
}

impl FrozenNoise {
    pub fn sample_forward(stepper: &Stepper, stream: &RngStream, n_steps: usize) -> Self {
        if !stepper.uses_noise() {
            return Self {
                increments: Vec::new(),
                offset: 0,
                active: false,
            };
        }
        let increments = (0..n_steps)
            .map(|j| stepper.draw_increment(&mut stream.at(j as u64)))
            .collect();
        Self {
            increments,
            offset: 0,
            active: true,
        }
    }

    pub fn sample_two_sided(
        stepper: &Stepper,
        forward: &RngStream,
        backward: &RngStream,
        n_back: usize,
        n_forward: usize,
    ) -> Self {
        if !stepper.uses_noise() {
            return Self {
                increments: Vec::new(),
                offset: n_back,
                active: false,
            };
        }
        let mut increments = Vec::with_capacity(n_back + n_forward);
        for j in 0..n_back {
            // absolute step −n_back + j, i.e. backward counter n_back−1−j
            increments
                .push(stepper.draw_increment(&mut backward.at((n_back - 1 - j) as u64)));
        }
        for j in 0..n_forward {
            increments.push(stepper.draw_increment(&mut forward.at(j as u64)));
        }
        Self {
            increments,
            offset: n_back,
            active: true,
        }
    }

    pub fn get(&self, step: i64) -> Option<&[f64]> {
        if !self.active {
            return None;
        }
        let idx = step + self.offset as i64;
        Some(self.increments[idx as usize].as_slice())
    }
}

/// One application of the variation-of-constants map to a candidate path.
///
/// The candidate supplies the delay arguments; the initial state supplies
/// the head at the window start and the pre-window history. Node 0 of the
/// candidate must equal the initial head.
pub fn picard_map(
    stepper: &Stepper,
    initial: &FullState,
    candidate: &[Field],
    frozen: &FrozenNoise,
    start_step: i64,
) -> Result<Vec<Field>> {
    if candidate.is_empty() {
        return Err(CoreError::InvalidArgument("empty candidate path".into()));
    }
    let window = candidate.len() - 1;
    let mut head = initial.head().clone();
    let mut arg_segment = initial.segment().clone();
    let mut out = Vec::with_capacity(candidate.len());
    out.push(head.clone());
    for n in 0..window {
        let eta = frozen.get(start_step + n as i64);
        let new_head = stepper.advance_head(&head, &arg_segment, eta)?;
        if !new_head.all_finite() {
            return Err(CoreError::NumericalAbort {
                time: (start_step + n as i64) as f64 * stepper.model().dt(),
                reason: "non-finite iterate in Picard map".into(),
            });
        }
        out.push(new_head.clone());
        head = new_head;
        arg_segment.advance(candidate[n + 1].clone());
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct WindowHistory {
    pub start_step: usize,
    pub steps: usize,
    /// Sup-grid B₀ distance between successive iterates.
    pub distances: Vec<f64>,
}

impl WindowHistory {
    /// Successive distance ratios; contraction means all below one.
    pub fn ratios(&self) -> Vec<f64> {
        self.distances
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect()
    }
}

#[derive(Debug)]
pub struct PicardSolution {
    pub path: PathApproximation,
    pub windows: Vec<WindowHistory>,
}

#[derive(Clone, Copy, Debug)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_window_steps: usize,
    pub max_iterations: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_window_steps: 32,
            max_iterations: 200,
        }
    }
}

/// Window-concatenated Picard iteration under a frozen noise path.
///
/// Each window starts from the constant extension of the current head and
/// iterates `picard_map` until the sup-grid distance between iterates drops
/// below `tol`. Three consecutive non-contracting iterations halve the
/// window; a window below one step is a failure.
pub fn picard_solve(
    stepper: &Stepper,
    initial: &FullState,
    t_final: f64,
    frozen: &FrozenNoise,
    opts: PicardOptions,
) -> Result<PicardSolution> {
    if !(opts.tol > 0.0) {
        return Err(CoreError::InvalidArgument("tolerance must be positive".into()));
    }
    let dt = stepper.model().dt();
    let n_total = (t_final / dt).round() as usize;
    let mut state = initial.clone();
    let mut global = vec![initial.head().clone()];
    let mut windows = Vec::new();
    let mut step_offset = 0usize;
    let mut window_steps = opts.max_window_steps.max(1);

    while step_offset < n_total {
        let w = window_steps.min(n_total - step_offset);
        let mut candidate: Vec<Field> = vec![state.head().clone(); w + 1];
        let mut distances = Vec::new();
        let mut bad_streak = 0usize;
        let mut converged = false;

        for _ in 0..opts.max_iterations {
            let next = picard_map(stepper, &state, &candidate, frozen, step_offset as i64)?;
            let dist = sup_b0_distance(&next, &candidate);
            if let Some(&prev) = distances.last() {
                if prev > 0.0 && dist >= prev {
                    bad_streak += 1;
                } else {
                    bad_streak = 0;
                }
            }
            distances.push(dist);
            candidate = next;
            if dist < opts.tol {
                converged = true;
                break;
            }
            if bad_streak >= 3 {
                break;
            }
        }

        if !converged {
            if bad_streak >= 3 && w > 1 {
                window_steps = (w / 2).max(1);
                continue;
            }
            return Err(CoreError::SolverFailure(format!(
                "Picard window at step {step_offset} did not contract \
                 (last distances {:?})",
                &distances[distances.len().saturating_sub(3)..]
            )));
        }

        windows.push(WindowHistory {
            start_step: step_offset,
            steps: w,
            distances,
        });
        for field in &candidate[1..] {
            state.segment_mut().advance(field.clone());
            global.push(field.clone());
        }
        step_offset += w;
    }

    let times = (0..=n_total).map(|i| i as f64 * dt).collect();
    let iterations = windows.iter().map(|w| w.distances.len()).sum();
    let last_dist = windows
        .last()
        .and_then(|w| w.distances.last().copied())
        .unwrap_or(0.0);
    Ok(PicardSolution {
        path: PathApproximation {
            start_time: 0.0,
            times,
            fields: global,
            iteration: iterations,
            sup_distance_to_prev: last_dist,
        },
        windows,
    })
}

fn sup_b0_distance(a: &[Field], b: &[Field]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.sub(y).norm_b0())
        .fold(0.0, f64::max)
}

/// The stepper driven by the same frozen noise, for cross-method checks.
pub fn run_frozen_path(
    stepper: &Stepper,
    initial: &FullState,
    n_steps: usize,
    frozen: &FrozenNoise,
    start_step: i64,
) -> Result<Vec<Field>> {
    let mut state = initial.clone();
    let mut out = vec![state.head().clone()];
    let dt = stepper.model().dt();
    for n in 0..n_steps {
        let step = start_step + n as i64;
        stepper.step_with_increment(&mut state, frozen.get(step), step as f64 * dt)?;
        out.push(state.head().clone());
    }
    Ok(out)
}

/// Explicit smallness conditions on (h, λ₁, a, L).
#[derive(Clone, Debug, Serialize)]
pub struct SmallnessReport {
    pub h: f64,
    pub lambda_1: f64,
    pub trace_a: f64,
    pub lipschitz_l: f64,
    /// hL²(4/λ₁² + 2a/λ₁); the iteration scheme contracts when < 1.
    pub iteration_value: f64,
    pub iteration_ok: bool,
    /// γ₀ = (3 + 3he^{λ₁h})(1/λ₁ + a).
    pub gamma_0: f64,
    /// γ₀L², compared against λ₁.
    pub attractivity_value: f64,
    pub attractivity_ok: bool,
    /// Predicted decay rate λ₁ − γ₀L² when positive.
    pub gamma_pred: Option<f64>,
    /// Largest L satisfying the iteration condition at these (h, λ₁, a).
    pub l_iteration_max: f64,
    /// Largest L satisfying the attractivity condition.
    pub l_attractivity_max: f64,
    /// The prefactor the attractivity argument yields: 3e^{λ₁h}h + 3.
    pub k_proof: f64,
}

/// Evaluates both smallness conditions by direct substitution.
pub fn smallness_check(h: f64, lambda_1: f64, trace_a: f64, lipschitz_l: f64) -> Result<SmallnessReport> {
    if !(h > 0.0 && lambda_1 > 0.0 && trace_a >= 0.0 && lipschitz_l >= 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "need h > 0, λ₁ > 0, a ≥ 0, L ≥ 0; got h={h}, λ₁={lambda_1}, a={trace_a}, L={lipschitz_l}"
        )));
    }
    let l_sq = lipschitz_l * lipschitz_l;
    let iteration_coeff = h * (4.0 / (lambda_1 * lambda_1) + 2.0 * trace_a / lambda_1);
    let iteration_value = l_sq * iteration_coeff;
    let gamma_0 = (3.0 + 3.0 * h * (lambda_1 * h).exp()) * (1.0 / lambda_1 + trace_a);
    let attractivity_value = gamma_0 * l_sq;
    let gamma_pred = (attractivity_value < lambda_1).then_some(lambda_1 - attractivity_value);
    Ok(SmallnessReport {
        h,
        lambda_1,
        trace_a,
        lipschitz_l,
        iteration_value,
        iteration_ok: iteration_value < 1.0,
        gamma_0,
        attractivity_value,
        attractivity_ok: attractivity_value < lambda_1,
        gamma_pred,
        l_iteration_max: (1.0 / iteration_coeff).sqrt(),
        l_attractivity_max: (lambda_1 / gamma_0).sqrt(),
        k_proof: 3.0 * (lambda_1 * h).exp() * h + 3.0,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct StationaryOptions {
    pub tol: f64,
    pub max_iterations: usize,
    /// Relative tolerance for the T_back-doubling insensitivity proxy.
    pub insensitivity_tol: f64,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iterations: 60,
            insensitivity_tol: 1e-3,
        }
    }
}

pub struct StationaryPath {
    /// Path on [0, T_forward].
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
    /// Sup-forward-window B₀ distance between successive iterates.
    pub distances: Vec<f64>,
    pub smallness: SmallnessReport,
    /// Relative forward-window gap between the T_back and 2·T_back runs.
    pub tback_gap_rel: f64,
    pub tback_insensitive: bool,
}

/// Successive approximations u⁽⁰⁾ = 0, u⁽ⁿ⁺¹⁾ = linear solve with delay
/// arguments frozen at u⁽ⁿ⁾, from −T_back with zero start data over a
/// two-sided frozen noise path. Refuses models violating the iteration
/// smallness condition.
pub fn stationary_successive_approx(
    model: &ModelSpec,
    t_back: f64,
    t_forward: f64,
    seed: u64,
    opts: StationaryOptions,
) -> Result<StationaryPath> {
    let smallness = smallness_check(
        model.delay(),
        model.lambda_1(),
        model.noise().trace(),
        model.nonlin().declared_l,
    )?;
    if !smallness.iteration_ok {
        return Err(CoreError::SmallnessViolated(format!(
            "iteration condition hL²(4/λ₁²+2a/λ₁) = {:.6} ≥ 1 (L ≤ {:.5} required)",
            smallness.iteration_value, smallness.l_iteration_max
        )));
    }
    let stepper = Stepper::new(model)?;
    let dt = model.dt();
    let n_fwd = (t_forward / dt).round() as usize;
    let n_back = (t_back / dt).round().max(1.0) as usize;

    let (fwd, bwd) = extend_two_sided(seed);
    let fwd_stream = fwd.stream(0);
    let bwd_stream = bwd.stream(0);

    let frozen =
        FrozenNoise::sample_two_sided(&stepper, &fwd_stream, &bwd_stream, n_back, n_fwd);
    let (fields, distances) =
        iterate_stationary(&stepper, &frozen, n_back, n_fwd, &opts)?;

    // Lookback-doubling proxy for the t₀ → −∞ limit: the shared increments
    // are identical by construction, so the gap isolates the start effect.
    let frozen2 = FrozenNoise::sample_two_sided(
        &stepper,
        &fwd_stream,
        &bwd_stream,
        2 * n_back,
        n_fwd,
    );
    let (fields2, _) = iterate_stationary(&stepper, &frozen2, 2 * n_back, n_fwd, &opts)?;
    let scale = fields
        .iter()
        .map(Field::norm_b0)
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let gap = sup_b0_distance(&fields, &fields2) / scale;

    Ok(StationaryPath {
        times: (0..=n_fwd).map(|i| i as f64 * dt).collect(),
        fields,
        distances,
        smallness,
        tback_gap_rel: gap,
        tback_insensitive: gap <= opts.insensitivity_tol,
    })
}

fn iterate_stationary(
    stepper: &Stepper,
    frozen: &FrozenNoise,
    n_back: usize,
    n_fwd: usize,
    opts: &StationaryOptions,
) -> Result<(Vec<Field>, Vec<f64>)> {
    let space = stepper.model().space();
    let h = stepper.model().delay();
    let dt = stepper.model().dt();
    let n_total = n_back + n_fwd;
    let zero = Field::zero(space);
    let mut prev: Vec<Field> = vec![zero.clone(); n_total + 1];
    let mut distances = Vec::new();
    let mut growth_streak = 0usize;

    for _ in 0..opts.max_iterations {
        // Linear solve from −T_back with zero data; delay arguments frozen
        // at the previous iterate (zero-padded before the grid).
        let mut arg_segment = DelaySegment::constant(&zero, h, dt)?;
        let mut head = zero.clone();
        let mut next: Vec<Field> = Vec::with_capacity(n_total + 1);
        next.push(head.clone());
        for j in 0..n_total {
            let eta = frozen.get(j as i64 - n_back as i64);
            let new_head = stepper.advance_head(&head, &arg_segment, eta)?;
            if !new_head.all_finite() {
                return Err(CoreError::NumericalAbort {
                    time: (j as f64 - n_back as f64) * dt,
                    reason: "non-finite iterate in successive approximation".into(),
                });
            }
            next.push(new_head.clone());
            head = new_head;
            arg_segment.advance(prev[j + 1].clone());
        }

        let dist = sup_b0_distance(&next[n_back..], &prev[n_back..]);
        if let Some(&last) = distances.last() {
            if last > 0.0 && dist >= last {
                growth_streak += 1;
            } else {
                growth_streak = 0;
            }
        }
        distances.push(dist);
        prev = next;
        if dist < opts.tol {
            return Ok((prev.split_off(n_back), distances));
        }
        if growth_streak >= 3 {
            return Err(CoreError::SolverFailure(format!(
                "successive approximations stopped contracting: {distances:?}"
            )));
        }
    }
    Err(CoreError::SolverFailure(format!(
        "successive approximations did not converge in {} iterations \
         (last distance {:.3e})",
        opts.max_iterations,
        distances.last().copied().unwrap_or(f64::NAN)
    )))
}

/// Exponential-attractivity fit: two trajectories per ensemble member share
/// one noise path; the decay of E‖y − y₁‖²_B over [t₀+h, T] is fitted by
/// least squares in log coordinates.
#[derive(Clone, Debug, Serialize)]
pub struct AttractivityFit {
    pub gamma_hat: f64,
    pub k_hat: f64,
    pub slope_std_error: f64,
    pub gamma_pred: Option<f64>,
    /// Set when the smallness condition fails; the fit is then exploratory.
    pub exploratory: bool,
    pub pass: bool,
    pub series: Vec<(f64, f64)>,
}

pub fn attractivity_experiment(
    model: &ModelSpec,
    initial_a: &FullState,
    initial_b: &FullState,
    t_final: f64,
    n_pairs: usize,
    seed: u64,
    record_stride: usize,
) -> Result<AttractivityFit> {
    let stepper = Stepper::new(model)?;
    let h = model.delay();
    if !(t_final > h) {
        return Err(CoreError::InvalidArgument(format!(
            "fit window needs T > h, got T = {t_final}, h = {h}"
        )));
    }
    let series = ensemble_pair_difference(
        &stepper,
        initial_a,
        initial_b,
        t_final,
        n_pairs,
        StreamFamily::forward(seed),
        record_stride,
    )?;
    let smallness = smallness_check(
        h,
        model.lambda_1(),
        model.noise().trace(),
        model.nonlin().declared_l,
    )?;
    let initial_gap = series.first().map(|&(_, d)| d).unwrap_or(0.0);

    // Pathwise uniqueness under shared noise: identical initials stay glued.
    if series.iter().all(|&(_, d)| d == 0.0) {
        return Ok(AttractivityFit {
            gamma_hat: f64::INFINITY,
            k_hat: 0.0,
            slope_std_error: 0.0,
            gamma_pred: smallness.gamma_pred,
            exploratory: !smallness.attractivity_ok,
            pass: true,
            series,
        });
    }

    let window: Vec<(f64, f64)> = series
        .iter()
        .filter(|&&(t, d)| t >= h && d > 0.0)
        .map(|&(t, d)| (t, d.ln()))
        .collect();
    if window.len() < 3 {
        return Err(CoreError::SolverFailure(
            "too few positive samples in the fit window".into(),
        ));
    }
    let (slope, intercept, slope_se) = linear_fit(&window);
    let gamma_hat = -slope;
    let k_hat = intercept.exp() / initial_gap.max(1e-300);
    let pass = match smallness.gamma_pred {
        Some(pred) if smallness.attractivity_ok => gamma_hat >= pred - 3.0 * slope_se,
        _ => true,
    };
    Ok(AttractivityFit {
        gamma_hat,
        k_hat,
        slope_std_error: slope_se,
        gamma_pred: smallness.gamma_pred,
        exploratory: !smallness.attractivity_ok,
        pass,
        series,
    })
}

/// Least squares y = a + bx; returns (b, a, se(b)).
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = (n - 2.0).max(1.0);
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum();
    let se = (ss_res / dof / sxx).sqrt();
    (slope, intercept, se)
}
