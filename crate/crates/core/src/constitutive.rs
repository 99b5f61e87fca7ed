//! Thermodynamic closures of the mixture: pressures, energies, entropy,
//! Gibbs functions and transport coefficients.
//!
//! Every function here is pure. The `checked` public entry points validate
//! their arguments; the solver calls the unchecked kernels after it has
//! verified positivity of the whole field once.

use thiserror::Error;

/// Argument outside the physical domain of a closure.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("density must be positive, got {0}")]
    NonPositiveDensity(f64),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("species {species} density must be nonnegative, got {value}")]
    NegativeSpeciesDensity { species: usize, value: f64 },
    #[error("species {species} density must be positive for this evaluation, got {value}")]
    VanishingSpeciesDensity { species: usize, value: f64 },
    #[error("expected {expected} species values, got {got}")]
    SpeciesCount { expected: usize, got: usize },
    #[error("species index {0} out of range")]
    SpeciesIndex(usize),
    #[error("mass fractions must lie in [0,1] and sum to 1 (sum = {0})")]
    Simplex(f64),
    #[error("molecular pressure vanishes")]
    VanishingMolecularPressure,
    #[error("degenerate mass-fraction denominator")]
    DegenerateFractions,
}

/// Rejected parameter set. The messages are what the config parser reports.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("at least one species required")]
    NoSpecies,
    #[error("γ⁻ > 5 required")]
    GammaMinus,
    #[error("γ⁺ > 3 required")]
    GammaPlus,
    #[error("γ⁻ > (5γ⁺−3)/(γ⁺−3) required")]
    GammaCompatibility,
    #[error("B ≥ 8 required")]
    ConductivityExponent,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

/// Physical constants of the mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstitutiveParams {
    /// Molar mass of each species.
    pub masses: Vec<f64>,
    /// Cold-pressure exponent on the vacuum side.
    pub gamma_minus: f64,
    /// Cold-pressure exponent on the compression side.
    pub gamma_plus: f64,
    /// Cold-pressure amplitude, shared by both branches so that the
    /// derivative is continuous at unit density.
    pub cold_amplitude: f64,
    /// Radiation constant.
    pub radiation: f64,
    /// Exponent of the radiative part of the heat conductivity.
    pub conductivity_exponent: f64,
    /// Constant part of the heat conductivity.
    pub conductivity_base: f64,
    /// Amplitude of the Maxwell–Stefan diffusion coefficient.
    pub diffusion_amplitude: f64,
}

impl Default for ConstitutiveParams {
    fn default() -> Self {
        Self {
            masses: vec![1.0, 1.0],
            gamma_minus: 8.0,
            gamma_plus: 8.0,
            cold_amplitude: 1.0,
            radiation: 0.01,
            conductivity_exponent: 8.0,
            conductivity_base: 0.1,
            diffusion_amplitude: 0.1,
        }
    }
}

impl ConstitutiveParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.masses.is_empty() {
            return Err(ParamError::NoSpecies);
        }
        if self.masses.iter().any(|&m| !(m > 0.0)) {
            return Err(ParamError::NonPositive("every molar mass"));
        }
        if !(self.gamma_minus > 5.0) {
            return Err(ParamError::GammaMinus);
        }
        if !(self.gamma_plus > 3.0) {
            return Err(ParamError::GammaPlus);
        }
        let bound = (5.0 * self.gamma_plus - 3.0) / (self.gamma_plus - 3.0);
        if !(self.gamma_minus > bound) {
            return Err(ParamError::GammaCompatibility);
        }
        if !(self.conductivity_exponent >= 8.0) {
            return Err(ParamError::ConductivityExponent);
        }
        for (name, value) in [
            ("c_cold", self.cold_amplitude),
            ("beta", self.radiation),
            ("kappa0", self.conductivity_base),
            ("C0_bar", self.diffusion_amplitude),
        ] {
            if !(value > 0.0) {
                return Err(ParamError::NonPositive(name));
            }
        }
        Ok(())
    }

    pub fn n_species(&self) -> usize {
        self.masses.len()
    }

    pub fn min_mass(&self) -> f64 {
        self.masses.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Local thermodynamic state at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermoPoint {
    pub rho: f64,
    pub theta: f64,
    pub rho_k: Vec<f64>,
}

impl ThermoPoint {
    pub fn new(rho: f64, theta: f64, rho_k: Vec<f64>) -> Result<Self, DomainError> {
        let pt = Self { rho, theta, rho_k };
        pt.validate()?;
        Ok(pt)
    }

    /// Point whose total density is the sum of the species densities.
    pub fn from_species(theta: f64, rho_k: Vec<f64>) -> Result<Self, DomainError> {
        let rho = rho_k.iter().sum();
        Self::new(rho, theta, rho_k)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.rho > 0.0) {
            return Err(DomainError::NonPositiveDensity(self.rho));
        }
        if !(self.theta > 0.0) {
            return Err(DomainError::NonPositiveTemperature(self.theta));
        }
        for (k, &v) in self.rho_k.iter().enumerate() {
            if !(v >= 0.0) {
                return Err(DomainError::NegativeSpeciesDensity { species: k, value: v });
            }
        }
        Ok(())
    }

    /// Y_k = ρ_k / Σ ρ_l.
    pub fn mass_fractions(&self) -> Vec<f64> {
        let total: f64 = self.rho_k.iter().sum();
        self.rho_k.iter().map(|&v| v / total).collect()
    }
}

fn check_density(rho: f64) -> Result<(), DomainError> {
    if rho > 0.0 {
        Ok(())
    } else {
        Err(DomainError::NonPositiveDensity(rho))
    }
}

fn check_temperature(theta: f64) -> Result<(), DomainError> {
    if theta > 0.0 {
        Ok(())
    } else {
        Err(DomainError::NonPositiveTemperature(theta))
    }
}

fn check_species(rho_k: &[f64], p: &ConstitutiveParams) -> Result<(), DomainError> {
    if rho_k.len() != p.n_species() {
        return Err(DomainError::SpeciesCount { expected: p.n_species(), got: rho_k.len() });
    }
    for (k, &v) in rho_k.iter().enumerate() {
        if !(v >= 0.0) {
            return Err(DomainError::NegativeSpeciesDensity { species: k, value: v });
        }
    }
    Ok(())
}

/// x log x continuously extended by 0 at x = 0.
pub(crate) fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

pub(crate) fn cold_pressure_raw(rho: f64, p: &ConstitutiveParams) -> f64 {
    let c = p.cold_amplitude;
    if rho > 1.0 {
        c / p.gamma_plus * (rho.powf(p.gamma_plus) - 1.0)
    } else {
        -c / p.gamma_minus * (rho.powf(-p.gamma_minus) - 1.0)
    }
}

pub(crate) fn cold_pressure_derivative_raw(rho: f64, p: &ConstitutiveParams) -> f64 {
    let c = p.cold_amplitude;
    if rho > 1.0 {
        c * rho.powf(p.gamma_plus - 1.0)
    } else {
        c * rho.powf(-p.gamma_minus - 1.0)
    }
}

// Antiderivative of y⁻²π_c(y) from 1, branch by branch.
pub(crate) fn cold_energy_raw(rho: f64, p: &ConstitutiveParams) -> f64 {
    let c = p.cold_amplitude;
    if rho > 1.0 {
        let g = p.gamma_plus;
        c / g * ((rho.powf(g - 1.0) - 1.0) / (g - 1.0) + 1.0 / rho - 1.0)
    } else {
        let g = p.gamma_minus;
        c / g * ((rho.powf(-g - 1.0) - 1.0) / (g + 1.0) + 1.0 - 1.0 / rho)
    }
}

pub(crate) fn heat_conductivity_raw(rho: f64, theta: f64, p: &ConstitutiveParams) -> f64 {
    p.conductivity_base + rho + rho * theta * theta + p.radiation * theta.powf(p.conductivity_exponent)
}

pub(crate) fn diffusion_amplitude_raw(rho: f64, theta: f64, p: &ConstitutiveParams) -> f64 {
    p.diffusion_amplitude * rho * (1.0 + theta)
}

/// Barotropic cold pressure, zero at unit density.
pub fn cold_pressure(rho: f64, p: &ConstitutiveParams) -> Result<f64, DomainError> {
    check_density(rho)?;
    Ok(cold_pressure_raw(rho, p))
}

pub fn cold_pressure_derivative(rho: f64, p: &ConstitutiveParams) -> Result<f64, DomainError> {
    check_density(rho)?;
    Ok(cold_pressure_derivative_raw(rho, p))
}

/// Cold part of the specific internal energy, solving ρ²e_c' = π_c.
///
/// The additive constant puts the minimum (at unit density, the root of
/// π_c) at zero, so the value is nonnegative and blows up near vacuum.
pub fn cold_energy(rho: f64, p: &ConstitutiveParams) -> Result<f64, DomainError> {
    check_density(rho)?;
    Ok(cold_energy_raw(rho, p))
}

/// Boyle-law pressure Σ θρ_k/m_k.
pub fn molecular_pressure(theta: f64, rho_k: &[f64], p: &ConstitutiveParams) -> Result<f64, DomainError> {
    if !(theta >= 0.0) {
        return Err(DomainError::NonPositiveTemperature(theta));
    }
    check_species(rho_k, p)?;
    Ok(rho_k.iter().zip(&p.masses).map(|(&r, &m)| theta * r / m).sum())
}

pub fn total_pressure(pt: &ThermoPoint, p: &ConstitutiveParams) -> Result<f64, DomainError> {
    check_density(pt.rho)?;
    let pm = molecular_pressure(pt.theta, &pt.rho_k, p)?;
    Ok(cold_pressure_raw(pt.rho, p) + p.radiation / 3.0 * pt.theta.powi(4) + pm)
}

/// Specific internal energy θ + βθ⁴/ρ + e_c(ρ).
pub fn internal_energy(pt: &ThermoPoint, p: &ConstitutiveParams) -> Result<f64, DomainError> {
    check_density(pt.rho)?;
    if !(pt.theta >= 0.0) {
        return Err(DomainError::NonPositiveTemperature(pt.theta));
    }
    Ok(pt.theta + p.radiation * pt.theta.powi(4) / pt.rho + cold_energy_raw(pt.rho, p))
}

/// Entropy per unit volume,
/// ρ log θ − Σ (ρ_k/m_k) log(ρ_k/m_k) + (4β/3)θ³.
pub fn entropy_density(pt: &ThermoPoint, p: &ConstitutiveParams) -> Result<f64, DomainError> {
    check_temperature(pt.theta)?;
    check_species(&pt.rho_k, p)?;
    let mixing: f64 = pt.rho_k.iter().zip(&p.masses).map(|(&r, &m)| xlogx(r / m)).sum();
    Ok(pt.rho * pt.theta.ln() - mixing + 4.0 * p.radiation / 3.0 * pt.theta.powi(3))
}

/// Specific enthalpy of species k, (1 + 1/m_k)θ.
pub fn enthalpy(theta: f64, k: usize, p: &ConstitutiveParams) -> Result<f64, DomainError> {
    if !(theta >= 0.0) {
        return Err(DomainError::NonPositiveTemperature(theta));
    }
    let m = *p.masses.get(k).ok_or(DomainError::SpeciesIndex(k))?;
    Ok((1.0 + 1.0 / m) * theta)
}

pub(crate) fn gibbs_raw(theta: f64, rho_k: f64, mass: f64) -> f64 {
    (1.0 + 1.0 / mass) * theta - theta * theta.ln() + theta / mass * (rho_k / mass).ln()
}

/// Specific Gibbs function of species k.
pub fn gibbs(theta: f64, rho_k: f64, k: usize, p: &ConstitutiveParams) -> Result<f64, DomainError> {
    check_temperature(theta)?;
    let m = *p.masses.get(k).ok_or(DomainError::SpeciesIndex(k))?;
    if !(rho_k > 0.0) {
        return Err(DomainError::VanishingSpeciesDensity { species: k, value: rho_k });
    }
    Ok(gibbs_raw(theta, rho_k, m))
}

/// κ₀ + ρ + ρθ² + βθ^B.
pub fn heat_conductivity(rho: f64, theta: f64, p: &ConstitutiveParams) -> Result<f64, DomainError> {
    if !(rho >= 0.0) {
        return Err(DomainError::NonPositiveDensity(rho));
    }
    if !(theta >= 0.0) {
        return Err(DomainError::NonPositiveTemperature(theta));
    }
    Ok(heat_conductivity_raw(rho, theta, p))
}

/// Maxwell–Stefan amplitude C₀ = C̄₀ρ(1 + θ).
pub fn diffusion_amplitude(rho: f64, theta: f64, p: &ConstitutiveParams) -> Result<f64, DomainError> {
    if !(rho >= 0.0) {
        return Err(DomainError::NonPositiveDensity(rho));
    }
    if !(theta >= 0.0) {
        return Err(DomainError::NonPositiveTemperature(theta));
    }
    Ok(diffusion_amplitude_raw(rho, theta, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn upper(gamma_plus: f64, gamma_minus: f64) -> ConstitutiveParams {
        ConstitutiveParams { gamma_plus, gamma_minus, cold_amplitude: 1.0, ..Default::default() }
    }

    #[test]
    fn cold_pressure_branches() {
        let p = upper(4.0, 20.0);
        assert_eq!(cold_pressure(1.0, &p).unwrap(), 0.0);
        assert_relative_eq!(cold_pressure(2.0, &p).unwrap(), 3.75, max_relative = 1e-14);
        assert_relative_eq!(cold_pressure_derivative(2.0, &p).unwrap(), 8.0, max_relative = 1e-14);
        let p = upper(16.0, 6.0);
        p.validate().unwrap();
        assert_relative_eq!(cold_pressure(0.5, &p).unwrap(), -10.5, max_relative = 1e-14);
        assert_relative_eq!(cold_pressure_derivative(0.5, &p).unwrap(), 128.0, max_relative = 1e-14);
        assert_eq!(cold_pressure_derivative(1.0, &p).unwrap(), 1.0);
        assert!(cold_pressure(0.0, &p).is_err());
    }

    #[test]
    fn cold_energy_closed_forms() {
        // (1/6)[(2⁷−1)/7 + 1 − 2] and (1/4)[(2³−1)/3 + 1/2 − 1]
        let p = upper(16.0, 6.0);
        assert_relative_eq!(cold_energy(0.5, &p).unwrap(), 20.0 / 7.0, max_relative = 1e-14);
        let p = upper(4.0, 20.0);
        assert_relative_eq!(cold_energy(2.0, &p).unwrap(), 11.0 / 24.0, max_relative = 1e-14);
        assert_eq!(cold_energy(1.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn pressure_and_energy_examples() {
        let p = ConstitutiveParams { radiation: 3.0, ..Default::default() };
        let pt = ThermoPoint::new(1.0, 1.0, vec![0.5, 0.5]).unwrap();
        assert_relative_eq!(total_pressure(&pt, &p).unwrap(), 2.0, max_relative = 1e-15);
        let p = ConstitutiveParams { masses: vec![1.0, 2.0], ..Default::default() };
        assert_eq!(molecular_pressure(2.0, &[1.0, 2.0], &p).unwrap(), 4.0);
        assert_eq!(molecular_pressure(1.0, &[0.0, 0.0], &p).unwrap(), 0.0);
        assert!(molecular_pressure(1.0, &[-1.0, 0.0], &p).is_err());
        let p = ConstitutiveParams { radiation: 1.0, ..Default::default() };
        let pt = ThermoPoint::new(1.0, 1.0, vec![0.5, 0.5]).unwrap();
        assert_eq!(internal_energy(&pt, &p).unwrap(), 2.0);
    }

    #[test]
    fn entropy_examples() {
        let mut p = ConstitutiveParams { masses: vec![1.5, 2.5], ..Default::default() };
        p.radiation = 0.0;
        let pt = ThermoPoint::from_species(1.0, vec![1.5, 2.5]).unwrap();
        assert_eq!(entropy_density(&pt, &p).unwrap(), 0.0);
        let pt = ThermoPoint::from_species(std::f64::consts::E, vec![1.5, 2.5]).unwrap();
        assert_relative_eq!(entropy_density(&pt, &p).unwrap(), 4.0, max_relative = 1e-15);
        let pt = ThermoPoint::new(1.0, 1.0, vec![0.0, 2.5]).unwrap();
        let tiny = ThermoPoint::new(1.0, 1.0, vec![1e-300, 2.5]).unwrap();
        let gap = entropy_density(&pt, &p).unwrap() - entropy_density(&tiny, &p).unwrap();
        assert!(gap.abs() < 1e-296);
    }

    #[test]
    fn gibbs_and_enthalpy_examples() {
        let p = ConstitutiveParams { masses: vec![1.0, 2.0], ..Default::default() };
        assert_eq!(gibbs(1.0, 1.0, 0, &p).unwrap(), 2.0);
        assert_relative_eq!(gibbs(1.0, std::f64::consts::E, 0, &p).unwrap(), 3.0, max_relative = 1e-15);
        assert!(gibbs(1.0, 0.0, 0, &p).is_err());
        assert!(gibbs(1.0, 1e-200, 0, &p).unwrap() < -400.0);
        assert_eq!(enthalpy(0.0, 0, &p).unwrap(), 0.0);
        assert_eq!(enthalpy(1.0, 0, &p).unwrap(), 2.0);
        assert_eq!(enthalpy(2.0, 1, &p).unwrap(), 3.0);
    }

    #[test]
    fn transport_examples() {
        let p = ConstitutiveParams { radiation: 1.0, conductivity_base: 1.0, ..Default::default() };
        assert_eq!(heat_conductivity(0.0, 0.0, &p).unwrap(), 1.0);
        assert_eq!(heat_conductivity(1.0, 1.0, &p).unwrap(), 4.0);
        let q = ConstitutiveParams { conductivity_base: 0.0, ..p.clone() };
        assert_eq!(heat_conductivity(2.0, 2.0, &q).unwrap(), 266.0);
        let p = ConstitutiveParams { diffusion_amplitude: 1.0, ..Default::default() };
        assert_eq!(diffusion_amplitude(0.0, 3.0, &p).unwrap(), 0.0);
        assert_eq!(diffusion_amplitude(1.0, 1.0, &p).unwrap(), 2.0);
    }

    #[test]
    fn parameter_validation() {
        assert!(ConstitutiveParams::default().validate().is_ok());
        let bad = ConstitutiveParams { gamma_minus: 4.0, ..Default::default() };
        assert_eq!(bad.validate(), Err(ParamError::GammaMinus));
        let bad = ConstitutiveParams { conductivity_exponent: 6.0, ..Default::default() };
        assert_eq!(bad.validate(), Err(ParamError::ConductivityExponent));
        let bad = ConstitutiveParams { gamma_plus: 4.0, gamma_minus: 6.0, ..Default::default() };
        assert_eq!(bad.validate(), Err(ParamError::GammaCompatibility));
        let bad = ConstitutiveParams { masses: vec![1.0, 0.0], ..Default::default() };
        assert!(bad.validate().is_err());
        assert_eq!(ParamError::GammaMinus.to_string(), "γ⁻ > 5 required");
        assert_eq!(ParamError::ConductivityExponent.to_string(), "B ≥ 8 required");
    }
}
