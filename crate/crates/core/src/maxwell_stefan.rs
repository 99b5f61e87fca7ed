//! Multicomponent diffusion closure.
//!
//! The mixing matrix C = I − Y 1ᵀ has vanishing column sums, which is what
//! makes the diffusion fluxes sum to zero at every point. Fluxes can be
//! evaluated from partial-pressure gradients (primitive form) or from
//! gradients of the entropy variables r_k = log(ρ_k/m_k) (entropic form).

use crate::constitutive::{diffusion_amplitude_raw, ConstitutiveParams, DomainError, ThermoPoint};
use nalgebra::DMatrix;

/// Spatial vector; unused trailing components are zero in 1D and 2D.
pub type Vec3 = [f64; 3];

const SIMPLEX_TOL: f64 = 1e-12;

fn axpy(acc: &mut Vec3, a: f64, x: &Vec3) {
    for i in 0..3 {
        acc[i] += a * x[i];
    }
}

/// C_kl = δ_kl − Y_k.
pub fn mixing_matrix(y: &[f64]) -> Result<DMatrix<f64>, DomainError> {
    let sum: f64 = y.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL || y.iter().any(|&v| !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&v)) {
        return Err(DomainError::Simplex(sum));
    }
    Ok(mixing_matrix_raw(y))
}

pub(crate) fn mixing_matrix_raw(y: &[f64]) -> DMatrix<f64> {
    let n = y.len();
    DMatrix::from_fn(n, n, |k, l| if k == l { 1.0 - y[k] } else { -y[k] })
}

/// Diffusion force of species k, (∇p_k − Y_k∇π_m)/π_m.
pub fn diffusion_force(
    k: usize,
    pt: &ThermoPoint,
    grad_p: &[Vec3],
    grad_pim: &Vec3,
    p: &ConstitutiveParams,
) -> Result<Vec3, DomainError> {
    let pim = molecular_pressure_checked(pt, p)?;
    let yk = pt.rho_k.get(k).ok_or(DomainError::SpeciesIndex(k))? / pt.rho_k.iter().sum::<f64>();
    let mut d = grad_p[k];
    axpy(&mut d, -yk, grad_pim);
    Ok(d.map(|v| v / pim))
}

fn molecular_pressure_checked(pt: &ThermoPoint, p: &ConstitutiveParams) -> Result<f64, DomainError> {
    let pim = crate::constitutive::molecular_pressure(pt.theta, &pt.rho_k, p)?;
    if pim > 0.0 {
        Ok(pim)
    } else {
        Err(DomainError::VanishingMolecularPressure)
    }
}

/// F_k = −(C₀/π_m) Σ_l C_kl ∇p_l.
pub fn flux_primitive(pt: &ThermoPoint, grad_p: &[Vec3], p: &ConstitutiveParams) -> Result<Vec<Vec3>, DomainError> {
    let pim = molecular_pressure_checked(pt, p)?;
    if grad_p.len() != p.n_species() {
        return Err(DomainError::SpeciesCount { expected: p.n_species(), got: grad_p.len() });
    }
    let scale = diffusion_amplitude_raw(pt.rho, pt.theta, p) / pim;
    let c = mixing_matrix_raw(&pt.mass_fractions());
    Ok(apply_rows(&c, grad_p, -scale))
}

fn apply_rows(matrix: &DMatrix<f64>, vectors: &[Vec3], scale: f64) -> Vec<Vec3> {
    let n = vectors.len();
    (0..n)
        .map(|k| {
            let mut acc = [0.0; 3];
            for (l, v) in vectors.iter().enumerate() {
                axpy(&mut acc, matrix[(k, l)], v);
            }
            acc.map(|x| x * scale)
        })
        .collect()
}

/// D̂_kl = θ C_kl e^{r_l} / (π_m m_k) with π_m = θ Σ e^{r_k} and
/// Y_k = m_k e^{r_k} / Σ m_l e^{r_l}. Symmetric, positive semi-definite and
/// bounded entrywise by 1/min m.
pub fn dhat_matrix(r: &[f64], theta: f64, p: &ConstitutiveParams) -> Result<DMatrix<f64>, DomainError> {
    if !(theta > 0.0) {
        return Err(DomainError::NonPositiveTemperature(theta));
    }
    if r.len() != p.n_species() {
        return Err(DomainError::SpeciesCount { expected: p.n_species(), got: r.len() });
    }
    let exps: Vec<f64> = r.iter().map(|v| v.exp()).collect();
    Ok(dhat_from_exponentials(&exps, &p.masses))
}

// θ cancels between the numerator and π_m, so it never enters the arithmetic.
pub(crate) fn dhat_from_exponentials(exps: &[f64], masses: &[f64]) -> DMatrix<f64> {
    let n = exps.len();
    let sum_e: f64 = exps.iter().sum();
    let rho_n: f64 = exps.iter().zip(masses).map(|(e, m)| e * m).sum();
    DMatrix::from_fn(n, n, |k, l| {
        if k == l {
            let y = masses[k] * exps[k] / rho_n;
            (1.0 - y) * exps[k] / (sum_e * masses[k])
        } else {
            -exps[k] * exps[l] / (rho_n * sum_e)
        }
    })
}

/// F_k = −C₀ m_k (Σ_l D̂_kl ∇r_l + ∇log θ Σ_l D̂_kl).
pub fn flux_entropic(
    r: &[f64],
    grad_r: &[Vec3],
    grad_log_theta: &Vec3,
    rho: f64,
    theta: f64,
    p: &ConstitutiveParams,
) -> Result<Vec<Vec3>, DomainError> {
    let dhat = dhat_matrix(r, theta, p)?;
    if grad_r.len() != r.len() {
        return Err(DomainError::SpeciesCount { expected: r.len(), got: grad_r.len() });
    }
    let amp = diffusion_amplitude_raw(rho, theta, p);
    Ok(entropic_from_dhat(&dhat, grad_r, grad_log_theta, amp, &p.masses))
}

pub(crate) fn entropic_from_dhat(
    dhat: &DMatrix<f64>,
    grad_r: &[Vec3],
    grad_log_theta: &Vec3,
    amplitude: f64,
    masses: &[f64],
) -> Vec<Vec3> {
    let n = grad_r.len();
    (0..n)
        .map(|k| {
            let mut acc = [0.0; 3];
            let mut row_sum = 0.0;
            for l in 0..n {
                axpy(&mut acc, dhat[(k, l)], &grad_r[l]);
                row_sum += dhat[(k, l)];
            }
            axpy(&mut acc, row_sum, grad_log_theta);
            acc.map(|v| -amplitude * masses[k] * v)
        })
        .collect()
}

/// Splits partial-pressure gradients into the part C∇p seen by the fluxes
/// and the scalar multiplier α of Y. Reconstruction is
/// ∇p_k = (C∇p)_k + α Y_k, and α equals ∇π_m.
pub fn pressure_gradient_decomposition(
    pt: &ThermoPoint,
    grad_p: &[Vec3],
    p: &ConstitutiveParams,
) -> Result<(Vec<Vec3>, Vec3), DomainError> {
    if grad_p.len() != p.n_species() || pt.rho_k.len() != p.n_species() {
        return Err(DomainError::SpeciesCount { expected: p.n_species(), got: grad_p.len() });
    }
    let y = pt.mass_fractions();
    let weight: f64 = y.iter().zip(&p.masses).map(|(y, m)| y * m).sum();
    if !(weight > 0.0) || !weight.is_finite() {
        return Err(DomainError::DegenerateFractions);
    }
    let c = mixing_matrix_raw(&y);
    let projected = apply_rows(&c, grad_p, 1.0);
    let mut alpha = [0.0; 3];
    for k in 0..grad_p.len() {
        // ∇(ρθ) = Σ m_k ∇p_k
        axpy(&mut alpha, p.masses[k], &grad_p[k]);
        axpy(&mut alpha, -p.masses[k], &projected[k]);
    }
    Ok((projected, alpha.map(|v| v / weight)))
}
