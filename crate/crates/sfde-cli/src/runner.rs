//! Experiment dispatch, artifact writing, and the run manifest.
//!
//! Every run writes three files into the output directory:
//! `manifest.json` (effective config, seed, version, thread count, wall
//! time, and every tolerance consumed), `series.csv` (the experiment's
//! tabular data), and `report.json` (checks and fits). series.csv and
//! report.json are byte-deterministic functions of (config, seed); the
//! manifest records runtime metadata.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use sfde_core::{
    attractivity_experiment, default_burn_in, ensemble_observables, hilbert_schmidt_norm_delay_op,
    homogeneity_test, invariance_test, moment_bound_experiment, picard_solve, run_ensemble,
    sample_stationary_additive, smallness_check, stationary_successive_approx,
    verify_exponential_decay, verify_kernel_bound, verify_semigroup_law,
    verify_weighted_boundedness, verify_weighted_smoothing, CheckReport, CoreError, Field,
    FrozenNoise, FullState, ModelSpec, ObservableFamily, PicardOptions, StationaryOptions,
    Stepper, StreamFamily,
};

use crate::config::{ExperimentKind, Validated};
use crate::CliError;

pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub pass: bool,
    pub failing_check: Option<String>,
    pub summary: String,
}

struct Artifacts {
    series_header: String,
    series_rows: Vec<String>,
    report: Value,
    tolerances: BTreeMap<String, f64>,
    pass: bool,
    failing_check: Option<String>,
    summary: String,
    /// Additional (filename, contents) pairs, e.g. raw sample dumps.
    extra_files: Vec<(String, String)>,
}

impl Artifacts {
    fn new(
        series_header: String,
        series_rows: Vec<String>,
        report: Value,
        tolerances: BTreeMap<String, f64>,
        pass: bool,
        failing_check: Option<String>,
        summary: String,
    ) -> Self {
        Self {
            series_header,
            series_rows,
            report,
            tolerances,
            pass,
            failing_check,
            summary,
            extra_files: Vec::new(),
        }
    }
}

pub fn run_experiment(
    validated: &Validated,
    seed: u64,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<RunOutcome, CliError> {
    let started = Instant::now();
    let effective_threads = threads
        .or(validated.config.threads)
        .unwrap_or_else(rayon::current_num_threads);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(effective_threads)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let artifacts = pool.install(|| dispatch(validated, seed))?;

    std::fs::create_dir_all(out_dir).map_err(CliError::from_io)?;
    let mut csv = String::new();
    csv.push_str(&artifacts.series_header);
    csv.push('\n');
    for row in &artifacts.series_rows {
        csv.push_str(row);
        csv.push('\n');
    }
    std::fs::write(out_dir.join("series.csv"), csv).map_err(CliError::from_io)?;
    for (name, contents) in &artifacts.extra_files {
        std::fs::write(out_dir.join(name), contents).map_err(CliError::from_io)?;
    }

    let report = json!({
        "kind": validated.kind.as_str(),
        "seed": seed,
        "pass": artifacts.pass,
        "failing_check": artifacts.failing_check,
        "data": artifacts.report,
    });
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?,
    )
    .map_err(CliError::from_io)?;

    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "kind": validated.kind.as_str(),
        "seed": seed,
        "threads": effective_threads,
        "wall_time_s": started.elapsed().as_secs_f64(),
        "tolerances": artifacts.tolerances,
        "config": serde_json::to_value(&validated.config)
            .map_err(|e| CliError::Internal(e.to_string()))?,
    });
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Internal(e.to_string()))?,
    )
    .map_err(CliError::from_io)?;

    Ok(RunOutcome {
        out_dir: out_dir.to_path_buf(),
        pass: artifacts.pass,
        failing_check: artifacts.failing_check,
        summary: artifacts.summary,
    })
}

fn dispatch(validated: &Validated, seed: u64) -> Result<Artifacts, CliError> {
    match validated.kind {
        ExperimentKind::Simulate => simulate(validated, seed),
        ExperimentKind::Picard => picard(validated, seed),
        ExperimentKind::Stationary => stationary(validated, seed),
        ExperimentKind::Attractivity => attractivity(validated, seed),
        ExperimentKind::Invariant => invariant(validated, seed),
        ExperimentKind::Homogeneity => homogeneity(validated, seed),
        ExperimentKind::KernelCheck => kernel_check(validated, seed),
        ExperimentKind::Smallness => smallness(validated),
    }
}

fn model_of(validated: &Validated) -> Result<&ModelSpec, CliError> {
    validated.model.as_ref().ok_or_else(|| {
        CliError::Validation(vec!["this experiment needs a bounded-domain model".into()])
    })
}

fn initial_state(validated: &Validated, model: &ModelSpec) -> Result<FullState, CliError> {
    let init = validated.config.experiment.initial;
    let (mode, scale) = init.map(|i| (i.mode, i.scale)).unwrap_or((1, 0.0));
    let mut field = Field::basis_mode(model.space(), mode - 1).map_err(CliError::from_core)?;
    field.scale(scale);
    model.constant_state(&field).map_err(CliError::from_core)
}

fn fmt_row(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v}");
    }
    s
}

fn simulate(validated: &Validated, seed: u64) -> Result<Artifacts, CliError> {
    let model = model_of(validated)?;
    let exp = &validated.config.experiment;
    let t_final = exp.t_final.unwrap_or(10.0);
    let ensemble = exp.ensemble.unwrap_or(1).max(1);
    let steps = (t_final / model.dt()).round() as usize;
    let stride = exp.record_stride.unwrap_or_else(|| (steps / 200).max(1));
    let stepper = Stepper::new(model).map_err(CliError::from_core)?;
    let init = initial_state(validated, model)?;

    let init_clone = init.clone();
    let out = run_ensemble(
        &stepper,
        &move |_, _| init_clone.clone(),
        t_final,
        ensemble,
        StreamFamily::forward(seed),
        stride,
        false,
    )
    .map_err(CliError::from_core)?;
    let stats = out.stats;

    let n_modes = stats.n_modes();
    let mut header = String::from("t,E_norm_B0_sq,E_norm_B1_sq,E_norm_B_sq");
    for k in 1..=n_modes {
        let _ = write!(header, ",mode_mean_{k}");
    }
    for k in 1..=n_modes {
        let _ = write!(header, ",mode_second_{k}");
    }
    let mut rows = Vec::with_capacity(stats.times.len());
    for i in 0..stats.times.len() {
        let mut vals = vec![
            stats.times[i],
            stats.mean_b0_sq(i),
            stats.mean_b1_sq(i),
            stats.mean_b_sq(i),
        ];
        let n = stats.count as f64;
        vals.extend(stats.mode_first[i].iter().map(|s| s / n));
        vals.extend(stats.mode_second[i].iter().map(|s| s / n));
        rows.push(fmt_row(&vals));
    }

    let sup = (0..stats.times.len())
        .map(|i| stats.mean_b_sq(i))
        .fold(f64::NEG_INFINITY, f64::max);

    let mut tolerances = BTreeMap::new();
    let mut report = json!({
        "ensemble": ensemble,
        "t_final": t_final,
        "sup_mean_b_sq": sup,
    });
    let mut pass = true;
    let mut failing = None;
    // Bounded nonlinearities admit the moment-bound check.
    if ensemble >= 2 && model.nonlin().is_bounded() {
        let ratio_limit = exp.ratio_limit.unwrap_or(1.2);
        tolerances.insert("ratio_limit".into(), ratio_limit);
        let mb = moment_bound_experiment(model, &init, t_final, ensemble, seed, stride, ratio_limit)
            .map_err(CliError::from_core)?;
        if !mb.pass {
            pass = false;
            failing = Some("moment_bound_tail_ratio".into());
        }
        report["moment_bound"] = serde_json::to_value(&mb).unwrap();
    }

    let summary = format!(
        "simulate: {ensemble} trajectories to T = {t_final}, sup E‖y‖² = {sup:.6}"
    );
    Ok(Artifacts::new(
        header, rows, report, tolerances, pass, failing, summary,
    ))
}

fn picard(validated: &Validated, seed: u64) -> Result<Artifacts, CliError> {
    let model = model_of(validated)?;
    let exp = &validated.config.experiment;
    let t_final = exp.t_final.unwrap_or(1.0);
    let tol = exp.tolerance.unwrap_or(1e-8);
    let window_t = exp.max_window.unwrap_or(0.25);
    let stepper = Stepper::new(model).map_err(CliError::from_core)?;
    let init = initial_state(validated, model)?;
    let n_steps = (t_final / model.dt()).round() as usize;
    let frozen = FrozenNoise::sample_forward(
        &stepper,
        &StreamFamily::forward(seed).stream(0),
        n_steps,
    );
    let opts = PicardOptions {
        tol,
        max_window_steps: ((window_t / model.dt()).round() as usize).max(1),
        max_iterations: 200,
    };
    let sol =
        picard_solve(&stepper, &init, t_final, &frozen, opts).map_err(CliError::from_core)?;
    let reference = sfde_core::solvers::run_frozen_path(&stepper, &init, n_steps, &frozen, 0)
        .map_err(CliError::from_core)?;
    let sup_gap = sol
        .path
        .fields
        .iter()
        .zip(&reference)
        .map(|(a, b)| a.sub(b).norm_b0())
        .fold(0.0f64, f64::max);
    let envelope = 5.0 * (model.dt() + tol);

    let mut rows = Vec::new();
    let mut contraction_ok = true;
    for w in &sol.windows {
        let ratios = w.ratios();
        for (i, d) in w.distances.iter().enumerate() {
            let ratio = if i == 0 { f64::NAN } else { ratios[i - 1] };
            rows.push(format!("{},{},{},{}", w.start_step, i, d, ratio));
            if i > 0 && ratios[i - 1] >= 1.0 {
                contraction_ok = false;
            }
        }
    }
    let pass = sup_gap <= envelope && contraction_ok;
    let report = json!({
        "tolerance": tol,
        "window_steps": opts.max_window_steps,
        "iterations_total": sol.path.iteration,
        "windows": sol.windows,
        "stepper_sup_gap": sup_gap,
        "agreement_envelope": envelope,
        "contraction_ok": contraction_ok,
    });
    let mut tolerances = BTreeMap::new();
    tolerances.insert("picard_tol".into(), tol);
    tolerances.insert("agreement_envelope".into(), envelope);
    Ok(Artifacts::new(
        "window_start_step,iteration,distance,ratio".into(),
        rows,
        report,
        tolerances,
        pass,
        (!pass).then(|| "picard_stepper_agreement".into()),
        format!(
            "picard: {} iterations over {} windows, stepper gap {sup_gap:.3e} (≤ {envelope:.3e})",
            sol.path.iteration,
            sol.windows.len()
        ),
    ))
}

fn stationary(validated: &Validated, seed: u64) -> Result<Artifacts, CliError> {
    let model = model_of(validated)?;
    let exp = &validated.config.experiment;
    let t_forward = exp.t_final.unwrap_or(2.0);
    let t_back = exp.t_back.unwrap_or(8.0 / model.lambda_1());
    let opts = StationaryOptions {
        tol: exp.tolerance.unwrap_or(1e-8),
        max_iterations: 60,
        insensitivity_tol: exp.insensitivity_tol.unwrap_or(1e-3),
    };
    let path = stationary_successive_approx(model, t_back, t_forward, seed, opts)
        .map_err(CliError::from_core)?;

    let mut rows = Vec::new();
    for (i, d) in path.distances.iter().enumerate() {
        let ratio = if i == 0 {
            f64::NAN
        } else {
            d / path.distances[i - 1].max(1e-300)
        };
        rows.push(format!("{i},{d},{ratio}"));
    }
    let pass = path.tback_insensitive;
    let report = json!({
        "t_back": t_back,
        "t_forward": t_forward,
        "iterations": path.distances.len(),
        "distances": path.distances,
        "smallness": path.smallness,
        "tback_gap_rel": path.tback_gap_rel,
        "tback_insensitive": path.tback_insensitive,
        "path_sup_norm": path.fields.iter().map(Field::norm_b0).fold(0.0f64, f64::max),
    });
    let mut tolerances = BTreeMap::new();
    tolerances.insert("stationary_tol".into(), opts.tol);
    tolerances.insert("insensitivity_tol".into(), opts.insensitivity_tol);
    Ok(Artifacts::new(
        "iteration,distance,ratio".into(),
        rows,
        report,
        tolerances,
        pass,
        (!pass).then(|| "tback_insensitivity".into()),
        format!(
            "stationary: converged in {} iterations, lookback gap {:.3e}",
            path.distances.len(),
            path.tback_gap_rel
        ),
    ))
}

fn attractivity(validated: &Validated, seed: u64) -> Result<Artifacts, CliError> {
    let model = model_of(validated)?;
    let exp = &validated.config.experiment;
    let t_final = exp.t_final.unwrap_or(5.0);
    let ensemble = exp.ensemble.unwrap_or(256);
    let gap_mode = exp.gap_mode.unwrap_or(1);
    let gap_scale = exp.gap_scale.unwrap_or(1.0);
    let steps = (t_final / model.dt()).round() as usize;
    let stride = exp.record_stride.unwrap_or_else(|| (steps / 200).max(1));

    let base = initial_state(validated, model)?;
    let mut gap = Field::basis_mode(model.space(), gap_mode - 1).map_err(CliError::from_core)?;
    gap.scale(gap_scale);
    let mut shifted_field = base.head().clone();
    shifted_field.axpy(1.0, &gap);
    let shifted = model
        .constant_state(&shifted_field)
        .map_err(CliError::from_core)?;

    let fit = attractivity_experiment(model, &base, &shifted, t_final, ensemble, seed, stride)
        .map_err(CliError::from_core)?;

    let rows = fit
        .series
        .iter()
        .map(|&(t, d)| format!("{t},{d}"))
        .collect();
    let report = serde_json::to_value(&fit).unwrap();
    let mut tolerances = BTreeMap::new();
    tolerances.insert("fit_ci_multiplier".into(), 3.0);
    let summary = format!(
        "attractivity: γ̂ = {:.4} (predicted {:?}), K̂ = {:.4}{}",
        fit.gamma_hat,
        fit.gamma_pred,
        fit.k_hat,
        if fit.exploratory { " [exploratory]" } else { "" }
    );
    Ok(Artifacts::new(
        "t,E_diff_b_sq".into(),
        rows,
        report,
        tolerances,
        fit.pass,
        (!fit.pass).then(|| "attractivity_rate".into()),
        summary,
    ))
}

fn invariant(validated: &Validated, seed: u64) -> Result<Artifacts, CliError> {
    let model = model_of(validated)?;
    let exp = &validated.config.experiment;
    let burn_in = exp.burn_in.unwrap_or_else(|| default_burn_in(model));
    let t1 = exp.t_final.unwrap_or_else(|| (2.0 * burn_in).max(burn_in + 1.0));
    let t2 = 2.0 * t1;
    let ensemble = exp.ensemble.unwrap_or(256);
    let z_threshold = exp.z_threshold.unwrap_or(3.0);
    let k_obs = exp.k_obs.unwrap_or(4).min(
        model
            .space()
            .basis()
            .map(|b| b.mode_count())
            .unwrap_or(4),
    );
    let family = ObservableFamily::standard(k_obs);

    let stationary_start = exp.stationary_start.unwrap_or(false);
    if stationary_start {
        // fail early with a clear message if the model is not additive
        let mut probe = StreamFamily::forward(seed).stream(0).at(0);
        sample_stationary_additive(model, &mut probe).map_err(CliError::from_core)?;
    }
    let fixed_init = initial_state(validated, model)?;
    let est = |t: f64, seed_shift: u64| {
        let sample = [t];
        if stationary_start {
            let model = model.clone();
            ensemble_observables(
                &model.clone(),
                &family,
                &move |_, rng| sample_stationary_additive(&model, rng).expect("additive model"),
                ensemble,
                &sample,
                burn_in,
                seed.wrapping_add(seed_shift),
            )
        } else {
            let init = fixed_init.clone();
            ensemble_observables(
                model,
                &family,
                &move |_, _| init.clone(),
                ensemble,
                &sample,
                burn_in,
                seed.wrapping_add(seed_shift),
            )
        }
    };
    let est1 = est(t1, 0).map_err(CliError::from_core)?;
    let est2 = est(t2, 1).map_err(CliError::from_core)?;
    let rep = invariance_test(&est1, &est2, z_threshold).map_err(CliError::from_core)?;

    let mut rows = Vec::new();
    for i in 0..est1.names.len() {
        rows.push(format!(
            "{},{},{},{},{},{}",
            est1.names[i], est1.mean[i], est1.std_error[i], est2.mean[i], est2.std_error[i],
            rep.z_scores[i]
        ));
    }
    let report = json!({
        "t1": t1,
        "t2": t2,
        "burn_in": burn_in,
        "ensemble": ensemble,
        "stationary_start": stationary_start,
        "estimate_t1": est1,
        "estimate_t2": est2,
        "invariance": rep,
    });
    let mut tolerances = BTreeMap::new();
    tolerances.insert("z_threshold".into(), z_threshold);
    tolerances.insert("burn_in".into(), burn_in);
    let pass = rep.pass;
    let mut artifacts = Artifacts::new(
        "observable,mean_t1,se_t1,mean_t2,se_t2,z".into(),
        rows,
        report,
        tolerances,
        pass,
        (!pass).then(|| "invariance_z".into()),
        format!(
            "invariant: max |z| = {:.3} over {} observables between T = {t1} and 2T",
            rep.max_abs_z,
            est1.names.len()
        ),
    );
    if exp.dump_samples.unwrap_or(false) {
        for (name, est) in [("samples_t1.csv", &est1), ("samples_t2.csv", &est2)] {
            let mut dump = est.names.join(",");
            dump.push('\n');
            for row in est.samples() {
                dump.push_str(&fmt_row(row));
                dump.push('\n');
            }
            artifacts.extra_files.push((name.to_string(), dump));
        }
    }
    Ok(artifacts)
}

fn homogeneity(validated: &Validated, seed: u64) -> Result<Artifacts, CliError> {
    let model = model_of(validated)?;
    let exp = &validated.config.experiment;
    let offsets = exp.offsets.clone().unwrap_or_else(|| vec![0.0, 1.0, 2.0]);
    let lag = exp.lag.unwrap_or(1.0);
    let ensemble = exp.ensemble.unwrap_or(512);
    let z_threshold = exp.z_threshold.unwrap_or(3.0);
    let k_obs = exp.k_obs.unwrap_or(2).min(
        model
            .space()
            .basis()
            .map(|b| b.mode_count())
            .unwrap_or(2),
    );
    let family = ObservableFamily::standard(k_obs);
    let init = initial_state(validated, model)?;
    let rep = homogeneity_test(
        model, &family, &init, &offsets, lag, ensemble, seed, z_threshold,
    )
    .map_err(CliError::from_core)?;

    let mut rows = Vec::new();
    for (oi, off) in rep.offsets.iter().enumerate() {
        for (ni, name) in rep.names.iter().enumerate() {
            rows.push(format!("{off},{name},{}", rep.means[oi][ni]));
        }
    }
    let mut tolerances = BTreeMap::new();
    tolerances.insert("z_threshold".into(), z_threshold);
    let pass = rep.pass;
    let summary = format!(
        "homogeneity: max |z| = {:.3} across offsets {:?} at lag {lag}",
        rep.max_abs_z, rep.offsets
    );
    Ok(Artifacts::new(
        "offset,observable,mean".into(),
        rows,
        serde_json::to_value(&rep).unwrap(),
        tolerances,
        pass,
        (!pass).then(|| "homogeneity_z".into()),
        summary,
    ))
}

fn kernel_check(validated: &Validated, seed: u64) -> Result<Artifacts, CliError> {
    let space = &validated.space;
    let exp = &validated.config.experiment;
    let t_max = exp.t_final.unwrap_or(1.0);
    let t_samples = exp.t_samples.unwrap_or(8);
    let xy_samples = exp.xy_samples.unwrap_or(10);

    let mut checks: Vec<CheckReport> = Vec::new();
    let kb = verify_kernel_bound(space, t_max, t_samples, xy_samples)
        .map_err(CliError::from_core)?;
    checks.push(kb.to_check_report());

    let t_floor = sfde_core::semigroup::kernel_resolution_floor(space)
        .max(0.02 * t_max)
        .min(0.5 * t_max);
    let smoothing_times: Vec<f64> = (0..t_samples)
        .map(|i| {
            t_floor * (t_max / t_floor).powf(i as f64 / (t_samples - 1).max(1) as f64)
        })
        .collect();
    checks.push(
        verify_weighted_smoothing(space, &smoothing_times).map_err(CliError::from_core)?,
    );

    // Semigroup law on a smooth probe field.
    let probe = match space.kind() {
        sfde_core::DomainKind::BoundedDirichlet => {
            let n = space.basis().map_err(CliError::from_core)?.mode_count();
            let coeffs = (0..n).map(|k| 1.0 / (1 + k * k) as f64).collect();
            Field::from_coeffs(space, coeffs).map_err(CliError::from_core)?
        }
        sfde_core::DomainKind::WholeLineWeighted => {
            let vals = space.grid().iter().map(|&x| (-x * x).exp()).collect();
            Field::from_grid(space, vals).map_err(CliError::from_core)?
        }
    };
    let law_tol = match space.kind() {
        sfde_core::DomainKind::BoundedDirichlet => 1e-12,
        sfde_core::DomainKind::WholeLineWeighted => 1e-4,
    };
    checks.push(
        verify_semigroup_law(&probe, 0.6 * t_max, 0.4 * t_max, law_tol)
            .map_err(CliError::from_core)?,
    );

    let mut rng = StreamFamily::forward(seed).stream(0).at(0);
    checks.push(
        verify_weighted_boundedness(space, t_max, 32, &mut rng).map_err(CliError::from_core)?,
    );

    if space.has_basis() {
        let mut rng = StreamFamily::forward(seed).stream(1).at(0);
        checks.push(
            verify_exponential_decay(space, 100, t_max, &mut rng)
                .map_err(CliError::from_core)?,
        );
        let h = validated.config.model.delay.unwrap_or(1.0);
        let t0 = (2.0 * h).max(t_max);
        let basis = space.basis().map_err(CliError::from_core)?;
        let hs = hilbert_schmidt_norm_delay_op(basis, t0, h).map_err(CliError::from_core)?;
        checks.push(
            CheckReport::new("hilbert_schmidt_delay_op", basis.mode_count(), hs, hs.is_finite())
                .with_constant("t0", t0)
                .with_constant("h", h)
                .with_constant("value", hs),
        );
    }

    let rows = checks
        .iter()
        .map(|c| format!("{},{},{}", c.check, c.worst_ratio, c.pass))
        .collect();
    let pass = checks.iter().all(|c| c.pass);
    let failing = checks.iter().find(|c| !c.pass).map(|c| c.check.clone());
    let mut tolerances = BTreeMap::new();
    tolerances.insert("semigroup_law_tol".into(), law_tol);
    tolerances.insert(
        "kernel_negativity_tol".into(),
        sfde_core::semigroup::KERNEL_NEGATIVITY_TOL,
    );
    let summary = format!(
        "kernel-check: {}/{} checks passed",
        checks.iter().filter(|c| c.pass).count(),
        checks.len()
    );
    Ok(Artifacts::new(
        "check,worst_ratio,pass".into(),
        rows,
        serde_json::to_value(&checks).unwrap(),
        tolerances,
        pass,
        failing,
        summary,
    ))
}

fn smallness(validated: &Validated) -> Result<Artifacts, CliError> {
    let exp = &validated.config.experiment;
    let (h, lambda_1, trace_a, declared_l) = match &validated.model {
        Some(model) => (
            model.delay(),
            model.lambda_1(),
            model.noise().trace(),
            model.nonlin().declared_l,
        ),
        None => {
            return Err(CliError::Validation(vec![
                "smallness needs a bounded-domain model".into(),
            ]))
        }
    };
    let l = exp.lipschitz_l.unwrap_or(declared_l);
    let rep = smallness_check(h, lambda_1, trace_a, l).map_err(CliError::from_core)?;
    let row = format!(
        "{h},{lambda_1},{trace_a},{l},{},{},{},{},{}",
        rep.iteration_value,
        rep.gamma_0,
        rep.attractivity_value,
        rep.l_iteration_max,
        rep.l_attractivity_max
    );
    let summary = format!(
        "smallness: iteration holds for L < {:.5}, attractivity for L < {:.5} (L = {l})",
        rep.l_iteration_max, rep.l_attractivity_max
    );
    Ok(Artifacts::new(
        "h,lambda_1,a,L,iteration_value,gamma_0,attractivity_value,l_iteration_max,l_attractivity_max"
            .into(),
        vec![row],
        serde_json::to_value(&rep).unwrap(),
        BTreeMap::new(),
        true,
        None,
        summary,
    ))
}

impl CliError {
    pub fn from_core(e: CoreError) -> Self {
        match e {
            CoreError::NumericalAbort { .. } => CliError::Numerical(e.to_string()),
            CoreError::SolverFailure(msg) => {
                if msg.contains("aborted") {
                    CliError::Numerical(msg)
                } else {
                    CliError::CheckFailed(msg)
                }
            }
            other => CliError::Validation(vec![other.to_string()]),
        }
    }

    pub fn from_io(e: std::io::Error) -> Self {
        CliError::Internal(format!("io: {e}"))
    }
}

pub fn default_out_dir(validated: &Validated) -> PathBuf {
    match &validated.config.output_dir {
        Some(d) => PathBuf::from(d),
        None => PathBuf::from("sfde_out"),
    }
}
