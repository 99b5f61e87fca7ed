//! Species production rates.
//!
//! The default reactive law is a single reversible isomerisation a ⇌ b
//! driven by the Gibbs difference and saturated with tanh, which keeps the
//! rates bounded, mass-neutral and entropy-producing.

use crate::constitutive::{gibbs_raw, ConstitutiveParams, DomainError, ThermoPoint};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReactionKind {
    Inert,
    ReversiblePair { a: usize, b: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionModel {
    pub kind: ReactionKind,
    /// Rate constant κ_r ≥ 0 multiplying the Gibbs difference.
    pub rate_constant: f64,
    /// Saturation bound ω̄ > 0.
    pub saturation: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReactionError {
    #[error("reversible pair needs two distinct species indices below {0}")]
    BadPair(usize),
    #[error("reversible pair requires equal molar masses (got {0} and {1})")]
    UnequalMasses(f64, f64),
    #[error("kappa_r ≥ 0 required")]
    NegativeRate,
    #[error("omega_bar > 0 required")]
    NonPositiveSaturation,
}

impl ReactionModel {
    pub fn inert() -> Self {
        Self { kind: ReactionKind::Inert, rate_constant: 0.0, saturation: 1.0 }
    }

    pub fn reversible_pair(
        a: usize,
        b: usize,
        rate_constant: f64,
        saturation: f64,
        p: &ConstitutiveParams,
    ) -> Result<Self, ReactionError> {
        let model = Self { kind: ReactionKind::ReversiblePair { a, b }, rate_constant, saturation };
        model.validate(p)?;
        Ok(model)
    }

    pub fn validate(&self, p: &ConstitutiveParams) -> Result<(), ReactionError> {
        if !(self.rate_constant >= 0.0) {
            return Err(ReactionError::NegativeRate);
        }
        if !(self.saturation > 0.0) {
            return Err(ReactionError::NonPositiveSaturation);
        }
        if let ReactionKind::ReversiblePair { a, b } = self.kind {
            let n = p.n_species();
            if a == b || a >= n || b >= n {
                return Err(ReactionError::BadPair(n));
            }
            if p.masses[a] != p.masses[b] {
                return Err(ReactionError::UnequalMasses(p.masses[a], p.masses[b]));
            }
        }
        Ok(())
    }

    pub fn is_inert(&self) -> bool {
        matches!(self.kind, ReactionKind::Inert) || self.rate_constant == 0.0
    }
}

// Gibbs function allowing ρ_k = 0, where it is −∞.
fn gibbs_or_minus_infinity(theta: f64, rho_k: f64, mass: f64) -> f64 {
    if rho_k > 0.0 {
        gibbs_raw(theta, rho_k, mass)
    } else {
        f64::NEG_INFINITY
    }
}

/// Rate of the pair reaction for species a, given the state. Species b
/// receives the negative.
pub(crate) fn pair_rate(theta: f64, rho_a: f64, rho_b: f64, mass: f64, model: &ReactionModel) -> f64 {
    if model.rate_constant == 0.0 {
        return 0.0;
    }
    let ga = gibbs_or_minus_infinity(theta, rho_a, mass);
    let gb = gibbs_or_minus_infinity(theta, rho_b, mass);
    let diff = ga - gb;
    if diff.is_nan() {
        // both species absent
        return 0.0;
    }
    model.saturation * (-model.rate_constant * diff / theta).tanh()
}

/// Production rates ω_k at one point.
pub fn production_rates(
    pt: &ThermoPoint,
    model: &ReactionModel,
    p: &ConstitutiveParams,
) -> Result<Vec<f64>, DomainError> {
    if !(pt.theta > 0.0) {
        return Err(DomainError::NonPositiveTemperature(pt.theta));
    }
    if pt.rho_k.len() != p.n_species() {
        return Err(DomainError::SpeciesCount { expected: p.n_species(), got: pt.rho_k.len() });
    }
    let mut omega = vec![0.0; p.n_species()];
    if let ReactionKind::ReversiblePair { a, b } = model.kind {
        let rate = pair_rate(pt.theta, pt.rho_k[a], pt.rho_k[b], p.masses[a], model);
        omega[a] = rate;
        omega[b] = -rate;
    }
    Ok(omega)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ConstitutiveParams {
        ConstitutiveParams { masses: vec![1.0, 1.0, 2.0], ..Default::default() }
    }

    #[test]
    fn inert_is_zero() {
        let p = params();
        let pt = ThermoPoint::from_species(1.3, vec![0.2, 0.5, 0.1]).unwrap();
        assert_eq!(production_rates(&pt, &ReactionModel::inert(), &p).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn equilibrium_gives_zero() {
        let p = params();
        let model = ReactionModel::reversible_pair(0, 1, 2.0, 1.0, &p).unwrap();
        let pt = ThermoPoint::from_species(0.7, vec![0.4, 0.4, 0.3]).unwrap();
        assert_eq!(production_rates(&pt, &model, &p).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn depleted_species_is_produced() {
        let p = params();
        let model = ReactionModel::reversible_pair(0, 1, 1.0, 0.5, &p).unwrap();
        for rho_a in [1e-12, 0.0] {
            let pt = ThermoPoint::new(1.0, 1.0, vec![rho_a, 0.5, 0.5]).unwrap();
            let w = production_rates(&pt, &model, &p).unwrap();
            assert!(w[0] > 0.0 && w[0] <= 0.5);
            assert_eq!(w[1], -w[0]);
            assert_eq!(w[2], 0.0);
        }
    }

    #[test]
    fn unequal_masses_rejected() {
        let p = params();
        assert!(matches!(ReactionModel::reversible_pair(0, 2, 1.0, 1.0, &p), Err(ReactionError::UnequalMasses(..))));
        assert!(ReactionModel::reversible_pair(0, 0, 1.0, 1.0, &p).is_err());
        assert!(ReactionModel::reversible_pair(0, 7, 1.0, 1.0, &p).is_err());
    }

    #[test]
    fn nonpositive_temperature_rejected() {
        let p = params();
        let pt = ThermoPoint { rho: 1.0, theta: 0.0, rho_k: vec![0.3, 0.3, 0.4] };
        assert!(production_rates(&pt, &ReactionModel::inert(), &p).is_err());
    }
}
