//! Mild-solution time stepping and trajectory statistics.
//!
//! One exponential-Euler step of the variation-of-constants formula, exact
//! on the linear flow: mode k updates as
//!
//!   u_k ← e^{−λ_k Δt} u_k + (1−e^{−λ_k Δt})/λ_k · f_k(u_t) + σ-term,
//!
//! with f and σ evaluated at the left endpoint from the current delay
//! segment. The σ-term applies the multiplier σ(u_t) to an exact-variance
//! stochastic-convolution increment with per-mode standard deviation
//! √(a_k (1−e^{−2λ_k Δt}) / (2λ_k)), so the linear additive case commits no
//! time-discretization error in distribution.

use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::domain::{DomainKind, Space};
use crate::error::{CoreError, Result};
use crate::field::{steps_in_delay, DelaySegment, Field, FullState};
use crate::noise::{QWienerSpec, RngStream, StreamFamily};
use crate::nonlinearity::{
    eval_f, eval_sigma_multiplier, NonlinearitySpec, SigmaMultiplier,
};
use std::sync::Arc;

/// A complete model: discretized space, noise spectrum, nonlinearity, delay
/// length, and time step. Validated so that M·Δt = h exactly.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    space: Arc<Space>,
    noise: QWienerSpec,
    nonlin: NonlinearitySpec,
    delay: f64,
    dt: f64,
    delay_steps: usize,
}

impl ModelSpec {
    pub fn new(
        space: Arc<Space>,
        noise: QWienerSpec,
        nonlin: NonlinearitySpec,
        delay: f64,
        dt: f64,
    ) -> Result<Self> {
        if space.kind() != DomainKind::BoundedDirichlet {
            return Err(CoreError::InvalidModel(
                "time stepping requires a spectral (bounded-domain) space".into(),
            ));
        }
        let delay_steps = steps_in_delay(delay, dt)?;
        Ok(Self {
            space,
            noise,
            nonlin,
            delay,
            dt,
            delay_steps,
        })
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn noise(&self) -> &QWienerSpec {
        &self.noise
    }

    pub fn nonlin(&self) -> &NonlinearitySpec {
        &self.nonlin
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn delay_steps(&self) -> usize {
        self.delay_steps
    }

    pub fn lambda_1(&self) -> f64 {
        self.space.basis().expect("bounded space").lambda_1()
    }

    /// State with history constantly equal to `field`.
    pub fn constant_state(&self, field: &Field) -> Result<FullState> {
        FullState::constant(field, self.delay, self.dt)
    }

    pub fn zero_state(&self) -> Result<FullState> {
        self.constant_state(&Field::zero(&self.space))
    }
}

/// Precomputed per-mode step coefficients.
pub struct Stepper {
    model: ModelSpec,
    decay: Vec<f64>,
    phi1: Vec<f64>,
    noise_std: Vec<f64>,
    noise_active: bool,
}

impl Stepper {
    pub fn new(model: &ModelSpec) -> Result<Self> {
        let basis = model.space.basis()?;
        let dt = model.dt;
        let decay: Vec<f64> = basis.eigenvalues().iter().map(|l| (-l * dt).exp()).collect();
        let phi1: Vec<f64> = basis
            .eigenvalues()
            .iter()
            .map(|l| (1.0 - (-l * dt).exp()) / l)
            .collect();
        let mut noise_std = vec![0.0; basis.mode_count()];
        for (k, &a) in model.noise.coeffs().iter().enumerate() {
            let lam = basis.eigenvalues()[k];
            noise_std[k] = (a * (1.0 - (-2.0 * lam * dt).exp()) / (2.0 * lam)).sqrt();
        }
        let noise_active = model.noise.coeffs().iter().any(|&a| a > 0.0);
        Ok(Self {
            model: model.clone(),
            decay,
            phi1,
            noise_std,
            noise_active,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    /// Whether a step consumes random numbers at all.
    pub fn uses_noise(&self) -> bool {
        self.noise_active && !matches!(eval_zero_sigma(&self.model.nonlin), Some(true))
    }

    /// Exact-variance stochastic-convolution increment for one step.
    pub fn draw_increment(&self, rng: &mut ChaCha12Rng) -> Vec<f64> {
        let mut eta = vec![0.0; self.noise_std.len()];
        for (e, &sd) in eta.iter_mut().zip(&self.noise_std) {
            if sd > 0.0 {
                let xi: f64 = StandardNormal.sample(rng);
                *e = sd * xi;
            }
        }
        eta
    }

    /// New head from the previous head and the segment supplying the delay
    /// arguments (the segment is the state's own history in self-consistent
    /// stepping, or a candidate path's in fixed-point iterations).
    pub fn advance_head(
        &self,
        head: &Field,
        arg_segment: &DelaySegment,
        eta: Option<&[f64]>,
    ) -> Result<Field> {
        let mut out = Field::zero(&self.model.space);
        let drift = eval_f(&self.model.nonlin, arg_segment)?;
        for (k, o) in out.values_mut().iter_mut().enumerate() {
            *o = self.decay[k] * head.values()[k] + self.phi1[k] * drift.values()[k];
        }
        if let Some(eta) = eta {
            match eval_sigma_multiplier(&self.model.nonlin, arg_segment)? {
                SigmaMultiplier::Zero => {}
                SigmaMultiplier::Constant(c) => {
                    for (o, e) in out.values_mut().iter_mut().zip(eta) {
                        *o += c * e;
                    }
                }
                SigmaMultiplier::Grid(multiplier) => {
                    let eta_field = Field::from_coeffs(&self.model.space, eta.to_vec())?;
                    let eta_grid = eta_field.to_grid();
                    let product: Vec<f64> = eta_grid
                        .iter()
                        .zip(&multiplier)
                        .map(|(g, m)| g * m)
                        .collect();
                    let projected = Field::project_grid(&self.model.space, &product)?;
                    out.axpy(1.0, &projected);
                }
            }
        }
        Ok(out)
    }

    /// One self-consistent step with noise addressed by (stream, counter).
    pub fn step(
        &self,
        state: &mut FullState,
        stream: &RngStream,
        counter: u64,
        time: f64,
    ) -> Result<()> {
        let eta = if self.uses_noise() {
            Some(self.draw_increment(&mut stream.at(counter)))
        } else {
            None
        };
        self.step_with_increment(state, eta.as_deref(), time)
    }

    /// One self-consistent step with a caller-supplied (frozen) increment.
    pub fn step_with_increment(
        &self,
        state: &mut FullState,
        eta: Option<&[f64]>,
        time: f64,
    ) -> Result<()> {
        let new_head = self.advance_head(state.head(), state.segment(), eta)?;
        if !new_head.all_finite() {
            return Err(CoreError::NumericalAbort {
                time,
                reason: "non-finite coefficient after step".into(),
            });
        }
        state.segment_mut().advance(new_head);
        Ok(())
    }
}

fn eval_zero_sigma(nonlin: &NonlinearitySpec) -> Option<bool> {
    match nonlin.kind {
        crate::nonlinearity::FunctionalKind::Zero => Some(true),
        crate::nonlinearity::FunctionalKind::Custom { .. } => Some(false),
        _ => Some(nonlin.sigma_map.is_zero()),
    }
}

/// Per-time-node ensemble sums of norms and mode moments. Single
/// trajectories are the count = 1 case; ensembles are order-fixed sums of
/// them, so results never depend on the parallel schedule.
#[derive(Clone, Debug)]
pub struct TrajectoryStats {
    pub times: Vec<f64>,
    pub count: usize,
    pub sum_b0_sq: Vec<f64>,
    pub sum_b1_sq: Vec<f64>,
    pub sum_b_sq: Vec<f64>,
    /// Σ (‖y‖²)² per node, for standard errors and the p = 4 moment.
    pub sum_b_sq_sq: Vec<f64>,
    /// Σ ⟨u, e_k⟩ per node and mode.
    pub mode_first: Vec<Vec<f64>>,
    /// Σ ⟨u, e_k⟩² per node and mode.
    pub mode_second: Vec<Vec<f64>>,
}

impl TrajectoryStats {
    fn empty(times: Vec<f64>, n_modes: usize) -> Self {
        let n = times.len();
        Self {
            times,
            count: 0,
            sum_b0_sq: vec![0.0; n],
            sum_b1_sq: vec![0.0; n],
            sum_b_sq: vec![0.0; n],
            sum_b_sq_sq: vec![0.0; n],
            mode_first: vec![vec![0.0; n_modes]; n],
            mode_second: vec![vec![0.0; n_modes]; n],
        }
    }

    fn record(&mut self, idx: usize, state: &FullState) {
        let b0 = state.head().norm_b0_sq();
        let b1 = state.segment().norm_b1_sq();
        self.sum_b0_sq[idx] += b0;
        self.sum_b1_sq[idx] += b1;
        self.sum_b_sq[idx] += b0 + b1;
        self.sum_b_sq_sq[idx] += (b0 + b1) * (b0 + b1);
        for (k, &c) in state.head().values().iter().enumerate() {
            self.mode_first[idx][k] += c;
            self.mode_second[idx][k] += c * c;
        }
    }

    /// Commutative, associative merge of disjoint sub-ensembles.
    pub fn merge(mut self, other: &TrajectoryStats) -> Result<TrajectoryStats> {
        if self.times != other.times {
            return Err(CoreError::Mismatch("merging stats on different grids".into()));
        }
        self.count += other.count;
        for i in 0..self.times.len() {
            self.sum_b0_sq[i] += other.sum_b0_sq[i];
            self.sum_b1_sq[i] += other.sum_b1_sq[i];
            self.sum_b_sq[i] += other.sum_b_sq[i];
            self.sum_b_sq_sq[i] += other.sum_b_sq_sq[i];
            for k in 0..self.mode_first[i].len() {
                self.mode_first[i][k] += other.mode_first[i][k];
                self.mode_second[i][k] += other.mode_second[i][k];
            }
        }
        Ok(self)
    }

    pub fn mean_b0_sq(&self, i: usize) -> f64 {
        self.sum_b0_sq[i] / self.count as f64
    }

    pub fn mean_b1_sq(&self, i: usize) -> f64 {
        self.sum_b1_sq[i] / self.count as f64
    }

    pub fn mean_b_sq(&self, i: usize) -> f64 {
        self.sum_b_sq[i] / self.count as f64
    }

    /// Standard error of the mean of ‖y‖²_B at node i.
    pub fn se_b_sq(&self, i: usize) -> f64 {
        let n = self.count as f64;
        let mean = self.mean_b_sq(i);
        let var = (self.sum_b_sq_sq[i] / n - mean * mean).max(0.0);
        (var / n).sqrt()
    }

    /// Fourth moment E‖y‖⁴_B at node i (the p = 4 case of the moment bound).
    pub fn mean_b_pow4(&self, i: usize) -> f64 {
        self.sum_b_sq_sq[i] / self.count as f64
    }

    pub fn n_modes(&self) -> usize {
        self.mode_first.first().map_or(0, Vec::len)
    }
}

/// Time nodes at which statistics are recorded: every `stride` steps plus
/// the final step.
pub fn record_times(t_final: f64, dt: f64, stride: usize) -> (Vec<f64>, Vec<usize>) {
    let n_steps = (t_final / dt).round() as usize;
    let stride = stride.max(1);
    let mut idx = Vec::new();
    let mut times = Vec::new();
    for s in (0..=n_steps).step_by(stride) {
        idx.push(s);
        times.push(s as f64 * dt);
    }
    if *idx.last().unwrap() != n_steps {
        idx.push(n_steps);
        times.push(n_steps as f64 * dt);
    }
    (times, idx)
}

/// Runs a single trajectory, recording statistics on the time grid.
/// Noise for step j is addressed at counter j of the given stream.
pub fn run_trajectory(
    stepper: &Stepper,
    initial: FullState,
    t_final: f64,
    stream: &RngStream,
    record_stride: usize,
) -> Result<(TrajectoryStats, FullState)> {
    if !(t_final >= 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "final time must be nonnegative, got {t_final}"
        )));
    }
    let dt = stepper.model().dt();
    let n_modes = stepper.model().space().basis()?.mode_count();
    let (times, idx) = record_times(t_final, dt, record_stride);
    let mut stats = TrajectoryStats::empty(times, n_modes);
    stats.count = 1;

    let mut state = initial;
    let mut next_record = 0;
    let n_steps = (t_final / dt).round() as usize;
    for step in 0..=n_steps {
        if next_record < idx.len() && idx[next_record] == step {
            stats.record(next_record, &state);
            next_record += 1;
        }
        if step < n_steps {
            stepper.step(&mut state, stream, step as u64, step as f64 * dt)?;
        }
    }
    Ok((stats, state))
}

pub struct EnsembleOutput {
    pub stats: TrajectoryStats,
    /// Terminal states, if retained for tail diagnostics.
    pub terminals: Option<Vec<FullState>>,
}

/// Runs independent trajectories in parallel and folds their statistics in
/// trajectory order (bitwise schedule-independent).
pub fn run_ensemble(
    stepper: &Stepper,
    initial: &(dyn Fn(u64, &mut ChaCha12Rng) -> FullState + Sync),
    t_final: f64,
    n_traj: usize,
    family: StreamFamily,
    record_stride: usize,
    keep_terminals: bool,
) -> Result<EnsembleOutput> {
    if n_traj == 0 {
        return Err(CoreError::InvalidArgument("empty ensemble".into()));
    }
    let runs: Vec<Result<(TrajectoryStats, FullState)>> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let stream = family.stream(i as u64);
            let mut init_rng = stream.at(crate::noise::MISC_COUNTER_BASE);
            let state = initial(i as u64, &mut init_rng);
            run_trajectory(stepper, state, t_final, &stream, record_stride)
        })
        .collect();

    let mut merged: Option<TrajectoryStats> = None;
    let mut terminals = keep_terminals.then(Vec::new);
    let mut aborted = 0usize;
    let mut first_abort: Option<CoreError> = None;
    for run in runs {
        match run {
            Ok((stats, terminal)) => {
                merged = Some(match merged {
                    None => stats,
                    Some(acc) => acc.merge(&stats)?,
                });
                if let Some(t) = terminals.as_mut() {
                    t.push(terminal);
                }
            }
            Err(e) => {
                aborted += 1;
                first_abort.get_or_insert(e);
            }
        }
    }
    match merged {
        Some(stats) if aborted == 0 => Ok(EnsembleOutput { stats, terminals }),
        _ => {
            let cause = first_abort.expect("abort recorded");
            Err(CoreError::SolverFailure(format!(
                "{aborted} of {n_traj} trajectories aborted; first: {cause}"
            )))
        }
    }
}

/// Shared-noise pair evolution: both trajectories consume the same noise
/// increments, so for state-independent σ their difference is deterministic.
/// Returns E‖y − y₁‖²_B on the record grid.
pub fn ensemble_pair_difference(
    stepper: &Stepper,
    initial_a: &FullState,
    initial_b: &FullState,
    t_final: f64,
    n_pairs: usize,
    family: StreamFamily,
    record_stride: usize,
) -> Result<Vec<(f64, f64)>> {
    let dt = stepper.model().dt();
    let (times, idx) = record_times(t_final, dt, record_stride);
    let n_steps = (t_final / dt).round() as usize;

    let per_pair: Vec<Result<Vec<f64>>> = (0..n_pairs)
        .into_par_iter()
        .map(|p| {
            let stream = family.stream(p as u64);
            let mut a = initial_a.clone();
            let mut b = initial_b.clone();
            let mut out = Vec::with_capacity(idx.len());
            let mut next = 0;
            for step in 0..=n_steps {
                if next < idx.len() && idx[next] == step {
                    out.push(a.distance_b_sq(&b));
                    next += 1;
                }
                if step < n_steps {
                    let t = step as f64 * dt;
                    let eta = if stepper.uses_noise() {
                        Some(stepper.draw_increment(&mut stream.at(step as u64)))
                    } else {
                        None
                    };
                    stepper.step_with_increment(&mut a, eta.as_deref(), t)?;
                    stepper.step_with_increment(&mut b, eta.as_deref(), t)?;
                }
            }
            Ok(out)
        })
        .collect();

    let mut sums = vec![0.0; idx.len()];
    for run in per_pair {
        let vals = run?;
        for (s, v) in sums.iter_mut().zip(vals) {
            *s += v;
        }
    }
    Ok(times
        .into_iter()
        .zip(sums)
        .map(|(t, s)| (t, s / n_pairs as f64))
        .collect())
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct MomentBoundReport {
    pub sup_mean_b_sq: f64,
    /// sup_t E‖y‖⁴_B, the p = 4 moment alongside the default p = 2.
    pub sup_mean_b_pow4: f64,
    pub sup_time: f64,
    pub early_max: f64,
    pub tail_max: f64,
    pub tail_early_ratio: f64,
    /// Least-squares slope of E‖y‖²_B over the tail window; no growth
    /// trend means slope ≤ 0 within its standard error.
    pub tail_slope: f64,
    pub tail_slope_se: f64,
    /// Three standard errors of the mean at the supremizing node.
    pub confidence: f64,
    pub ensemble: usize,
    pub pass: bool,
}

/// Estimates sup_t E‖y(t)‖²_B for a model with bounded drift and diffusion
/// and compares the tail-window maximum against the early-window maximum.
/// Refuses nonlinearities without uniform envelopes.
pub fn moment_bound_experiment(
    model: &ModelSpec,
    initial: &FullState,
    t_final: f64,
    n_traj: usize,
    seed: u64,
    record_stride: usize,
    ratio_limit: f64,
) -> Result<MomentBoundReport> {
    if !model.nonlin().is_bounded() {
        return Err(CoreError::InvalidModel(
            "moment-bound experiment requires a bounded drift envelope and clipped diffusion"
                .into(),
        ));
    }
    let stepper = Stepper::new(model)?;
    let init = initial.clone();
    let out = run_ensemble(
        &stepper,
        &move |_, _| init.clone(),
        t_final,
        n_traj,
        StreamFamily::forward(seed),
        record_stride,
        false,
    )?;
    let stats = out.stats;
    let mut sup = f64::NEG_INFINITY;
    let mut sup_p4 = f64::NEG_INFINITY;
    let mut sup_i = 0;
    let mut early_max = f64::NEG_INFINITY;
    let mut tail_max = f64::NEG_INFINITY;
    for i in 0..stats.times.len() {
        let m = stats.mean_b_sq(i);
        sup_p4 = sup_p4.max(stats.mean_b_pow4(i));
        if m > sup {
            sup = m;
            sup_i = i;
        }
        if stats.times[i] <= t_final / 2.0 {
            early_max = early_max.max(m);
        } else {
            tail_max = tail_max.max(m);
        }
    }
    let ratio = tail_max / early_max;
    let tail_points: Vec<(f64, f64)> = (0..stats.times.len())
        .filter(|&i| stats.times[i] > t_final / 2.0)
        .map(|i| (stats.times[i], stats.mean_b_sq(i)))
        .collect();
    let (tail_slope, _, tail_slope_se) = if tail_points.len() >= 3 {
        crate::solvers::linear_fit(&tail_points)
    } else {
        (0.0, 0.0, 0.0)
    };
    Ok(MomentBoundReport {
        sup_mean_b_sq: sup,
        sup_mean_b_pow4: sup_p4,
        sup_time: stats.times[sup_i],
        early_max,
        tail_max,
        tail_early_ratio: ratio,
        tail_slope,
        tail_slope_se,
        confidence: 3.0 * stats.se_b_sq(sup_i),
        ensemble: n_traj,
        pass: ratio.is_finite() && ratio <= ratio_limit,
    })
}
