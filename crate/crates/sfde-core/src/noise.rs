//! Truncated Q-Wiener process, reproducible counter-based noise streams, and
//! verification of the stochastic-integral estimate.
//!
//! W(t) = Σ_{i≤J} √a_i β_i(t) e_i with Tr Q = Σ a_i < ∞. Every draw is
//! addressed by (seed, stream id, counter): the stream id selects a ChaCha
//! stream (one per trajectory and time direction), the counter jumps the
//! cipher to a disjoint 64 KiB block of the keystream (one per time step).
//! Ensembles are therefore schedule-independent: a trajectory's path never
//! depends on how work was distributed across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::EigenBasis;
use crate::domain::Space;
use crate::error::{CoreError, Result};
use crate::field::Field;
use crate::report::CheckReport;
use crate::semigroup::apply_semigroup;

/// Words of ChaCha keystream reserved per counter value. A step consumes a
/// few words per normal draw; 2^16 leaves five orders of headroom.
const BLOCK_WORDS: u128 = 1 << 16;

/// Reserved counter base for draws outside the time-step sequence
/// (initial data, probe segments, and similar).
pub const MISC_COUNTER_BASE: u64 = 1 << 50;

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_key(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    key
}

/// One reproducible noise stream: (seed, stream id) fixes the whole path,
/// the counter addresses independent blocks within it.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    template: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut template = ChaCha12Rng::from_seed(derive_key(seed));
        template.set_stream(stream);
        Self {
            seed,
            stream,
            template,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Generator positioned at the given counter's keystream block.
    pub fn at(&self, counter: u64) -> ChaCha12Rng {
        let mut rng = self.template.clone();
        rng.set_word_pos(counter as u128 * BLOCK_WORDS);
        rng
    }

    /// `n` standard normals from the counter's block.
    pub fn normals(&self, counter: u64, n: usize) -> Vec<f64> {
        let mut rng = self.at(counter);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

/// A family of independent streams, one per trajectory index; `side`
/// separates the forward (t ≥ 0) and backward (t < 0) halves of a two-sided
/// path.
#[derive(Clone, Copy, Debug)]
pub struct StreamFamily {
    seed: u64,
    side: u64,
}

impl StreamFamily {
    pub fn forward(seed: u64) -> Self {
        Self { seed, side: 0 }
    }

    pub fn stream(&self, trajectory: u64) -> RngStream {
        RngStream::new(self.seed, trajectory << 1 | self.side)
    }
}

/// Extends the Q-Wiener process to t ∈ ℝ: W(t) for t ≥ 0 and an independent
/// copy V(−t) for t ≤ 0, as two independent stream families per seed.
pub fn extend_two_sided(seed: u64) -> (StreamFamily, StreamFamily) {
    (
        StreamFamily { seed, side: 0 },
        StreamFamily { seed, side: 1 },
    )
}

/// Diagonal covariance spectrum of the driving noise: Q e_i = a_i e_i.
#[derive(Clone, Debug)]
pub struct QWienerSpec {
    coeffs: Vec<f64>,
    trace: f64,
}

impl QWienerSpec {
    pub fn new(coeffs: Vec<f64>, basis: &EigenBasis) -> Result<Self> {
        if coeffs.len() > basis.mode_count() {
            return Err(CoreError::InvalidSpectrum(format!(
                "noise uses {} modes but the basis has {}",
                coeffs.len(),
                basis.mode_count()
            )));
        }
        if coeffs.iter().any(|&a| !(a.is_finite() && a >= 0.0)) {
            return Err(CoreError::InvalidSpectrum(
                "noise coefficients must be nonnegative and finite".into(),
            ));
        }
        let trace = coeffs.iter().sum();
        Ok(Self { coeffs, trace })
    }

    /// a_i = ratio^i, i = 1..J.
    pub fn geometric(ratio: f64, modes: usize, basis: &EigenBasis) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(CoreError::InvalidSpectrum(format!(
                "geometric ratio must lie in (0,1), got {ratio}"
            )));
        }
        let coeffs = (1..=modes).map(|i| ratio.powi(i as i32)).collect();
        Self::new(coeffs, basis)
    }

    /// a_i = i^{−power}, i = 1..J.
    pub fn polynomial(power: f64, modes: usize, basis: &EigenBasis) -> Result<Self> {
        if !(power > 1.0) {
            return Err(CoreError::InvalidSpectrum(format!(
                "polynomial decay must exceed 1 for a summable trace, got {power}"
            )));
        }
        let coeffs = (1..=modes).map(|i| (i as f64).powf(-power)).collect();
        Self::new(coeffs, basis)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn modes(&self) -> usize {
        self.coeffs.len()
    }

    /// Tr Q = Σ a_i.
    pub fn trace(&self) -> f64 {
        self.trace
    }
}

/// One Brownian increment ΔW over Δt: mode i gets √(a_i Δt) ξ_i with ξ iid
/// standard normal, so E‖ΔW‖²_{L²} = Δt Tr Q.
pub fn sample_increment(
    spec: &QWienerSpec,
    space: &std::sync::Arc<Space>,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<Field> {
    if !(dt > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "increment length must be positive, got {dt}"
        )));
    }
    let mut field = Field::zero(space);
    let scale = dt.sqrt();
    for (i, &a) in spec.coeffs.iter().enumerate() {
        if a > 0.0 {
            let xi: f64 = StandardNormal.sample(rng);
            field.values_mut()[i] = a.sqrt() * scale * xi;
        }
    }
    Ok(field)
}

/// Integrand families for the stochastic-integral estimate.
pub enum NoiseIntegrand<'a> {
    /// Ψ(s) multiplies by 1: ∫ dW = W(t).
    Identity,
    /// Ψ(s) is pointwise multiplication by a fixed grid profile.
    Multiplier(&'a [f64]),
    /// Ψ(s) = S(t−s): the linear stochastic convolution, applied with
    /// exact per-step increment variance a_k(1−e^{−2λ_kΔt})/(2λ_k).
    SemigroupConvolution,
}

#[derive(Clone, Debug)]
pub struct NoiseEstimateReport {
    pub estimate: f64,
    pub std_error: f64,
    pub bound: f64,
    /// Per-mode empirical and analytic variances (semigroup integrand only).
    pub mode_variances: Vec<(f64, f64)>,
    pub pass: bool,
}

impl NoiseEstimateReport {
    pub fn to_check_report(&self) -> CheckReport {
        let ratio = if self.bound > 0.0 {
            self.estimate / self.bound
        } else if self.estimate > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        CheckReport::new("noise_estimate", 1, ratio, self.pass)
            .with_constant("estimate", self.estimate)
            .with_constant("bound", self.bound)
            .with_constant("std_error", self.std_error)
    }
}

/// Monte Carlo check of the stochastic-integral estimate
/// E‖∫₀ᵗ Ψ(s) dW(s)‖²_ρ ≤ Tr Q · sup_n ‖e_n‖²_∞ · ∫₀ᵗ ‖Ψ(s)‖²_ρ ds.
/// Passes iff the estimate stays below the bound plus three standard errors.
pub fn verify_noise_estimate(
    spec: &QWienerSpec,
    space: &std::sync::Arc<Space>,
    integrand: &NoiseIntegrand,
    t: f64,
    steps: usize,
    n_samples: usize,
    seed: u64,
) -> Result<NoiseEstimateReport> {
    if !(t > 0.0) || steps == 0 || n_samples < 2 {
        return Err(CoreError::InvalidArgument(
            "need t > 0, steps ≥ 1, samples ≥ 2".into(),
        ));
    }
    let basis = space.basis()?;
    let dt = t / steps as f64;
    let family = StreamFamily::forward(seed);
    let n_modes = basis.mode_count();

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut mode_sum_sq = vec![0.0; n_modes];
    for traj in 0..n_samples {
        let stream = family.stream(traj as u64);
        let integral = match integrand {
            NoiseIntegrand::Identity => {
                let mut acc = Field::zero(space);
                for j in 0..steps {
                    let mut rng = stream.at(j as u64);
                    let dw = sample_increment(spec, space, dt, &mut rng)?;
                    acc.axpy(1.0, &dw);
                }
                acc
            }
            NoiseIntegrand::Multiplier(profile) => {
                let mut acc = Field::zero(space);
                for j in 0..steps {
                    let mut rng = stream.at(j as u64);
                    let dw = sample_increment(spec, space, dt, &mut rng)?;
                    let grid = dw.to_grid();
                    let product: Vec<f64> =
                        grid.iter().zip(*profile).map(|(g, m)| g * m).collect();
                    acc.axpy(1.0, &Field::project_grid(space, &product)?);
                }
                acc
            }
            NoiseIntegrand::SemigroupConvolution => {
                // Exact-variance convolution increments composed with decay:
                // the result has exactly the analytic mode variances.
                let mut acc = Field::zero(space);
                for j in 0..steps {
                    acc = apply_semigroup(&acc, dt)?;
                    let mut rng = stream.at(j as u64);
                    for (k, &a) in spec.coeffs.iter().enumerate() {
                        if a > 0.0 {
                            let lam = basis.eigenvalues()[k];
                            let var = a * (1.0 - (-2.0 * lam * dt).exp()) / (2.0 * lam);
                            let xi: f64 = StandardNormal.sample(&mut rng);
                            acc.values_mut()[k] += var.sqrt() * xi;
                        }
                    }
                }
                acc
            }
        };
        let sq = integral.norm_b0_sq();
        sum += sq;
        sum_sq += sq * sq;
        for (k, v) in integral.values().iter().enumerate() {
            mode_sum_sq[k] += v * v;
        }
    }

    let n = n_samples as f64;
    let estimate = sum / n;
    let var = (sum_sq / n - estimate * estimate).max(0.0);
    let std_error = (var / n).sqrt();

    let sup_mode = basis.sup_mode_inf_norm();
    let integrand_norm_sq = match integrand {
        NoiseIntegrand::Identity => {
            let ones = vec![1.0; space.grid().len()];
            let sq: Vec<f64> = ones.iter().map(|v| v * v).collect();
            space.weighted_quadrature(&sq) * t
        }
        NoiseIntegrand::Multiplier(profile) => {
            let sq: Vec<f64> = profile.iter().map(|v| v * v).collect();
            space.weighted_quadrature(&sq) * t
        }
        NoiseIntegrand::SemigroupConvolution => {
            // ∫₀ᵗ ‖S(t−s)‖²_{op→ρ} ds ≤ t on the unweighted bounded domain.
            t
        }
    };
    let bound = spec.trace() * sup_mode * sup_mode * integrand_norm_sq;

    let mut pass = estimate <= bound + 3.0 * std_error;
    let mode_variances: Vec<(f64, f64)> = match integrand {
        NoiseIntegrand::SemigroupConvolution => spec
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, &a)| {
                let lam = basis.eigenvalues()[k];
                let analytic = a * (1.0 - (-2.0 * lam * t).exp()) / (2.0 * lam);
                (mode_sum_sq[k] / n, analytic)
            })
            .collect(),
        _ => Vec::new(),
    };
    for &(emp, exact) in &mode_variances {
        // Var of a variance estimate over n normals is 2 σ⁴ / n.
        let se = exact * (2.0 / n).sqrt();
        if (emp - exact).abs() > 3.0 * se.max(1e-300) {
            pass = false;
        }
    }

    Ok(NoiseEstimateReport {
        estimate,
        std_error,
        bound,
        mode_variances,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Space;
    use approx::assert_relative_eq;

    fn pi_space() -> std::sync::Arc<Space> {
        Space::bounded(std::f64::consts::PI, 129, 16).unwrap()
    }

    #[test]
    fn streams_are_reproducible_and_counter_disjoint() {
        let a = RngStream::new(42, 3);
        let b = RngStream::new(42, 3);
        assert_eq!(a.normals(0, 8), b.normals(0, 8));
        assert_eq!(a.normals(17, 8), b.normals(17, 8));
        assert_ne!(a.normals(0, 8), a.normals(1, 8));
        let c = RngStream::new(42, 4);
        assert_ne!(a.normals(0, 8), c.normals(0, 8));
        let d = RngStream::new(43, 3);
        assert_ne!(a.normals(0, 8), d.normals(0, 8));
    }

    #[test]
    fn two_sided_families_deterministic_and_uncorrelated() {
        let (f1, b1) = extend_two_sided(5);
        let (f2, b2) = extend_two_sided(5);
        assert_eq!(f1.stream(0).normals(0, 4), f2.stream(0).normals(0, 4));
        assert_eq!(b1.stream(0).normals(0, 4), b2.stream(0).normals(0, 4));

        let n = 20_000;
        let xs = f1.stream(9).normals(0, n);
        let ys = b1.stream(9).normals(0, n);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mx = mean(&xs);
        let my = mean(&ys);
        let cov: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / (n as f64 - 1.0);
        // 3 MC standard errors for a correlation of iid normals: 3/√n.
        assert!(cov.abs() < 3.0 / (n as f64).sqrt(), "cov = {cov}");

        // Reversed-time increments share the forward law: compare second
        // moments within 3 SE of a variance estimate.
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
        };
        let se = (2.0 / n as f64).sqrt();
        assert!((var(&xs) - 1.0).abs() < 3.0 * se);
        assert!((var(&ys) - 1.0).abs() < 3.0 * se);
    }

    #[test]
    fn increment_variance_matches_dt() {
        let s = pi_space();
        let spec = QWienerSpec::new(vec![1.0], s.basis().unwrap()).unwrap();
        let stream = RngStream::new(123, 0);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..n {
            let mut rng = stream.at(i);
            let f = sample_increment(&spec, &s, 0.01, &mut rng).unwrap();
            let c = f.values()[0];
            sum += c;
            sum_sq += c * c;
        }
        let var = sum_sq / n as f64 - (sum / n as f64).powi(2);
        assert!((var - 0.01).abs() < 3e-4, "variance {var}");
    }

    #[test]
    fn zero_spectrum_gives_zero_field() {
        let s = pi_space();
        let spec = QWienerSpec::new(vec![0.0, 0.0, 0.0], s.basis().unwrap()).unwrap();
        let mut rng = RngStream::new(1, 0).at(0);
        let f = sample_increment(&spec, &s, 1.0, &mut rng).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    /// Monte Carlo E‖ΔW‖² against Tr Q for a truncated geometric spectrum.
    #[test]
    fn geometric_trace_recovered() {
        let s = pi_space();
        let spec = QWienerSpec::geometric(0.5, 12, s.basis().unwrap()).unwrap();
        let trace = spec.trace();
        assert_relative_eq!(trace, 1.0 - 0.5f64.powi(12), max_relative = 1e-12);
        let stream = RngStream::new(9, 0);
        let n = 20_000;
        let mut sum = 0.0;
        for i in 0..n {
            let mut rng = stream.at(i);
            let f = sample_increment(&spec, &s, 1.0, &mut rng).unwrap();
            sum += f.norm_b0_sq();
        }
        let est = sum / n as f64;
        // ‖ΔW‖² is a weighted χ² with variance 2 Σ a_i²; bound SE loosely.
        let se = (2.0 * spec.coeffs().iter().map(|a| a * a).sum::<f64>() / n as f64).sqrt();
        assert!((est - trace).abs() < 3.0 * se, "estimate {est} vs {trace}");
    }

    /// Itô isometry: ∫ dW over [0,1] with a = 1 has E‖·‖² = 1.
    #[test]
    fn identity_integrand_isometry() {
        let s = pi_space();
        let spec = QWienerSpec::new(vec![1.0], s.basis().unwrap()).unwrap();
        let rep =
            verify_noise_estimate(&spec, &s, &NoiseIntegrand::Identity, 1.0, 16, 10_000, 21)
                .unwrap();
        assert!(rep.pass);
        let se = (2.0f64 / 10_000.0).sqrt();
        assert!((rep.estimate - 1.0).abs() < 3.0 * se, "{}", rep.estimate);
        assert!(rep.bound >= rep.estimate);
    }

    /// Analytic Ornstein–Uhlenbeck variance oracle for the stochastic
    /// convolution: a(1−e^{−2λt})/(2λ) = 0.43233 at λ = a = t = 1.
    #[test]
    fn semigroup_convolution_matches_ou_variance() {
        let s = Space::bounded(std::f64::consts::PI, 65, 4).unwrap();
        let spec = QWienerSpec::new(vec![1.0], s.basis().unwrap()).unwrap();
        let rep = verify_noise_estimate(
            &spec,
            &s,
            &NoiseIntegrand::SemigroupConvolution,
            1.0,
            32,
            10_000,
            33,
        )
        .unwrap();
        assert!(rep.pass);
        let (emp, exact) = rep.mode_variances[0];
        assert_relative_eq!(exact, 0.432_332_358_381_693_65, max_relative = 1e-12);
        let se = exact * (2.0f64 / 10_000.0).sqrt();
        assert!((emp - exact).abs() < 3.0 * se, "emp {emp} vs {exact}");
    }

    /// Multiplier-path oracle: for Ψ = multiplication by m and one noise
    /// mode, each increment contributes the projection of m·e₁, so
    /// E‖∫Ψ dW‖² = a·t·‖P(m e₁)‖² with P the projection onto the retained
    /// modes.
    #[test]
    fn multiplier_integrand_matches_projection_oracle() {
        let s = pi_space();
        let basis = s.basis().unwrap();
        let spec = QWienerSpec::new(vec![1.0], basis).unwrap();
        let profile: Vec<f64> = s.grid().iter().map(|&x| 1.0 + 0.5 * (2.0 * x).cos()).collect();
        let m_e1: Vec<f64> = profile
            .iter()
            .zip(basis.mode_on_grid(0))
            .map(|(m, e)| m * e)
            .collect();
        let projected = Field::project_grid(&s, &m_e1).unwrap();
        let oracle = projected.norm_b0_sq(); // a = t = 1
        let rep = verify_noise_estimate(
            &spec,
            &s,
            &NoiseIntegrand::Multiplier(&profile),
            1.0,
            16,
            10_000,
            55,
        )
        .unwrap();
        assert!(rep.pass);
        let se = oracle * (2.0f64 / 10_000.0).sqrt();
        assert!(
            (rep.estimate - oracle).abs() < 3.0 * se,
            "estimate {} vs oracle {oracle}",
            rep.estimate
        );
    }

    #[test]
    fn zero_integrand_is_zero() {
        let s = pi_space();
        let spec = QWienerSpec::new(vec![1.0], s.basis().unwrap()).unwrap();
        let zeros = vec![0.0; s.grid().len()];
        let rep = verify_noise_estimate(
            &spec,
            &s,
            &NoiseIntegrand::Multiplier(&zeros),
            1.0,
            8,
            100,
            3,
        )
        .unwrap();
        assert_eq!(rep.estimate, 0.0);
        assert!(rep.pass);
    }

    /// Increments over non-overlapping intervals are uncorrelated.
    #[test]
    fn disjoint_increments_uncorrelated() {
        let s = pi_space();
        let spec = QWienerSpec::new(vec![1.0], s.basis().unwrap()).unwrap();
        let stream = RngStream::new(77, 0);
        let n = 20_000;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = stream.at(i as u64);
            let a = sample_increment(&spec, &s, 1.0, &mut rng).unwrap();
            let b = sample_increment(&spec, &s, 1.0, &mut rng).unwrap();
            xs.push(a.values()[0]);
            ys.push(b.values()[0]);
        }
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / (n as f64 - 1.0);
        assert!(cov.abs() < 3.0 / (n as f64).sqrt(), "cov = {cov}");
    }

    #[test]
    fn spectrum_validation() {
        let s = pi_space();
        let b = s.basis().unwrap();
        assert!(QWienerSpec::new(vec![-0.1], b).is_err());
        assert!(QWienerSpec::new(vec![1.0; 17], b).is_err());
        assert!(QWienerSpec::geometric(1.5, 4, b).is_err());
        assert!(QWienerSpec::polynomial(0.5, 4, b).is_err());
        let p = QWienerSpec::polynomial(2.0, 4, b).unwrap();
        assert_relative_eq!(p.coeffs()[1], 0.25, max_relative = 1e-15);
    }
}
