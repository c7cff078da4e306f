//! Dirichlet eigenbasis on a bounded interval.
//!
//! The operator −A is realized by its spectrum: the default is the Dirichlet
//! Laplacian on (0, ℓ) with λ_k = (kπ/ℓ)² and modes e_k(x) = √(2/ℓ) sin(kπx/ℓ);
//! a caller may substitute any strictly increasing positive eigenvalue
//! sequence while keeping the sine eigenfunctions.

use crate::domain::{DomainKind, DomainSpec};
use crate::error::{CoreError, Result};

/// Finitely many eigenpairs of −A, with mode values tabulated on the grid.
#[derive(Clone, Debug)]
pub struct EigenBasis {
    eigenvalues: Vec<f64>,
    length: f64,
    /// Flat (mode-major) table: modes[k * grid_len + i] = e_{k+1}(x_i).
    modes: Vec<f64>,
    grid_len: usize,
}

impl EigenBasis {
    pub fn mode_count(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// The principal eigenvalue λ₁ of −A.
    pub fn lambda_1(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Tabulated values of mode k (zero-based) on the grid.
    pub fn mode_on_grid(&self, k: usize) -> &[f64] {
        &self.modes[k * self.grid_len..(k + 1) * self.grid_len]
    }

    /// e_{k+1}(x) = √(2/ℓ) sin((k+1)πx/ℓ), evaluated analytically.
    pub fn eval_mode(&self, k: usize, x: f64) -> f64 {
        let l = self.length;
        (2.0 / l).sqrt() * (((k + 1) as f64) * std::f64::consts::PI * x / l).sin()
    }

    /// sup_n ‖e_n‖_∞ = √(2/ℓ) for the sine family.
    pub fn sup_mode_inf_norm(&self) -> f64 {
        (2.0 / self.length).sqrt()
    }
}

/// Builds the eigenbasis for a bounded Dirichlet domain.
///
/// With `spectrum = None` the Dirichlet Laplacian eigenvalues (kπ/ℓ)² are
/// used. A supplied spectrum must be strictly increasing and positive.
/// Whole-line domains carry no modal basis and are rejected.
pub fn build_basis(
    domain: &DomainSpec,
    n_modes: usize,
    spectrum: Option<&[f64]>,
) -> Result<EigenBasis> {
    if domain.kind != DomainKind::BoundedDirichlet {
        return Err(CoreError::NoBasis(
            "the whole-line case uses the Gaussian kernel semigroup directly".into(),
        ));
    }
    if n_modes == 0 {
        return Err(CoreError::InvalidSpectrum("need at least one mode".into()));
    }
    // Discrete sine orthogonality needs every retained frequency strictly
    // below the grid Nyquist frequency.
    let n_cells = domain.grid_points - 1;
    if n_modes >= n_cells {
        return Err(CoreError::InvalidSpectrum(format!(
            "{n_modes} modes need more than {} grid points",
            domain.grid_points
        )));
    }

    let l = domain.length;
    let eigenvalues: Vec<f64> = match spectrum {
        Some(vals) => {
            if vals.len() != n_modes {
                return Err(CoreError::InvalidSpectrum(format!(
                    "spectrum length {} does not match mode count {n_modes}",
                    vals.len()
                )));
            }
            for w in vals.windows(2) {
                if w[1] <= w[0] {
                    return Err(CoreError::InvalidSpectrum(format!(
                        "eigenvalues must be strictly increasing, got {} then {}",
                        w[0], w[1]
                    )));
                }
            }
            if vals[0] <= 0.0 || !vals.iter().all(|v| v.is_finite()) {
                return Err(CoreError::InvalidSpectrum(
                    "eigenvalues must be positive and finite".into(),
                ));
            }
            vals.to_vec()
        }
        None => (1..=n_modes)
            .map(|k| {
                let f = k as f64 * std::f64::consts::PI / l;
                f * f
            })
            .collect(),
    };

    let grid_len = domain.grid_points;
    let dx = l / n_cells as f64;
    let amp = (2.0 / l).sqrt();
    let mut modes = Vec::with_capacity(n_modes * grid_len);
    for k in 1..=n_modes {
        for i in 0..grid_len {
            let x = i as f64 * dx;
            modes.push(amp * (k as f64 * std::f64::consts::PI * x / l).sin());
        }
    }

    Ok(EigenBasis {
        eigenvalues,
        length: l,
        modes,
        grid_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dirichlet(l: f64, grid: usize, n: usize) -> EigenBasis {
        let d = DomainSpec::bounded_dirichlet(l, grid).unwrap();
        build_basis(&d, n, None).unwrap()
    }

    #[test]
    fn laplacian_spectrum_on_pi_interval() {
        let b = dirichlet(std::f64::consts::PI, 65, 3);
        assert_relative_eq!(b.eigenvalues()[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(b.eigenvalues()[1], 4.0, max_relative = 1e-14);
        assert_relative_eq!(b.eigenvalues()[2], 9.0, max_relative = 1e-14);
    }

    #[test]
    fn mode_one_midpoint_value() {
        // √(2/π) sin(π/2) = √(2/π)
        let b = dirichlet(std::f64::consts::PI, 65, 1);
        assert_relative_eq!(
            b.eval_mode(0, std::f64::consts::FRAC_PI_2),
            0.797_884_560_802_865_4,
            max_relative = 1e-13
        );
    }

    /// Closed form (kπ/ℓ)² cross-checked by a finite-difference eigensolve
    /// of −u'' with Dirichlet ends (tridiagonal stencil, inverse iteration).
    #[test]
    fn spectrum_matches_finite_difference_eigensolve() {
        let l = 2.0;
        let b = dirichlet(l, 65, 2);
        let expected = fd_dirichlet_eigenvalues(l, 2048, 2);
        // FD eigenvalues carry an O(dx²) defect; 2048 cells gives ~1e-6.
        assert_relative_eq!(b.eigenvalues()[0], expected[0], max_relative = 1e-5);
        assert_relative_eq!(b.eigenvalues()[1], expected[1], max_relative = 1e-5);
        assert_relative_eq!(b.eigenvalues()[0], 2.467_401_100_272_34, max_relative = 1e-12);
        assert_relative_eq!(b.eigenvalues()[1], 9.869_604_401_089_36, max_relative = 1e-12);
    }

    /// Independent oracle: smallest eigenvalues of the (n−1)×(n−1)
    /// second-difference matrix via its known closed form
    /// λ_k = (2/dx²)(1 − cos(kπ dx/ℓ)), which converges to (kπ/ℓ)².
    fn fd_dirichlet_eigenvalues(l: f64, cells: usize, count: usize) -> Vec<f64> {
        let dx = l / cells as f64;
        (1..=count)
            .map(|k| 2.0 / (dx * dx) * (1.0 - (k as f64 * std::f64::consts::PI * dx / l).cos()))
            .collect()
    }

    #[test]
    fn discrete_orthonormality() {
        let l = 1.7;
        let grid = 129;
        let b = dirichlet(l, grid, 16);
        let dx = l / (grid - 1) as f64;
        for j in 0..16 {
            for k in 0..16 {
                let mut ip = 0.0;
                for i in 0..grid {
                    let w = if i == 0 || i == grid - 1 { 0.5 * dx } else { dx };
                    ip += w * b.mode_on_grid(j)[i] * b.mode_on_grid(k)[i];
                }
                let expect = if j == k { 1.0 } else { 0.0 };
                assert!(
                    (ip - expect).abs() < 1e-8,
                    "modes {j},{k}: inner product {ip}"
                );
            }
        }
    }

    #[test]
    fn rejects_bad_spectra() {
        let d = DomainSpec::bounded_dirichlet(1.0, 65).unwrap();
        assert!(build_basis(&d, 2, Some(&[1.0, 1.0])).is_err());
        assert!(build_basis(&d, 2, Some(&[2.0, 1.0])).is_err());
        assert!(build_basis(&d, 2, Some(&[-1.0, 1.0])).is_err());
        assert!(build_basis(&d, 2, Some(&[0.0, 1.0])).is_err());
        assert!(build_basis(&d, 3, Some(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn rejects_whole_line() {
        let d = DomainSpec::whole_line(10.0, 65, 2.0, 0.5).unwrap();
        assert!(build_basis(&d, 4, None).is_err());
    }
}
