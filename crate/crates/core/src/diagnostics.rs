//! Per-step audit of a mixture state: energies, entropy and its
//! production, the Bresch–Desjardins functional, mass ledgers and
//! positivity minima.
//!
//! Everything except `picard_iters` and `energy_residual` is a pure
//! function of the state, so replaying a snapshot reproduces the row.

use crate::constitutive::{cold_energy_raw, gibbs_raw};
use crate::solver::{species_total, MixtureState, Solver, StepRecord};

/// One row of the diagnostics time series.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiagnosticsReport {
    pub time: f64,
    pub total_mass: f64,
    /// δΣm_k∫r_k + Σ∫m_k e^{r_k}.
    pub species_ledger: f64,
    pub energy_total: f64,
    pub energy_kinetic: f64,
    pub energy_internal: f64,
    pub energy_radiative: f64,
    pub energy_cold: f64,
    pub energy_lambda: f64,
    pub entropy: f64,
    pub sigma_total: f64,
    /// Pointwise minimum of σ over grid points where no species sits at the floor.
    pub sigma_min: f64,
    pub bd_functional: f64,
    pub min_rho: f64,
    pub min_theta: f64,
    pub min_rho_k: f64,
    /// max |Σρ_k − ρ|/ρ.
    pub sum_rhok_dev: f64,
    pub picard_iters: usize,
    pub energy_residual: f64,
}

impl DiagnosticsReport {
    pub const COLUMNS: [&'static str; 19] = [
        "time",
        "total_mass",
        "species_ledger",
        "E_total",
        "E_kin",
        "E_int",
        "E_rad",
        "E_cold",
        "E_lambda",
        "entropy",
        "sigma_total",
        "sigma_min",
        "bd",
        "min_rho",
        "min_theta",
        "min_rho_k",
        "sum_rhok_dev",
        "picard_iters",
        "energy_residual",
    ];

    /// Values in column order.
    pub fn values(&self) -> [f64; 19] {
        [
            self.time,
            self.total_mass,
            self.species_ledger,
            self.energy_total,
            self.energy_kinetic,
            self.energy_internal,
            self.energy_radiative,
            self.energy_cold,
            self.energy_lambda,
            self.entropy,
            self.sigma_total,
            self.sigma_min,
            self.bd_functional,
            self.min_rho,
            self.min_theta,
            self.min_rho_k,
            self.sum_rhok_dev,
            self.picard_iters as f64,
            self.energy_residual,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyComponents {
    pub kinetic: f64,
    pub internal: f64,
    pub radiative: f64,
    pub cold: f64,
    pub lambda: f64,
}

impl EnergyComponents {
    pub fn total(&self) -> f64 {
        self.kinetic + self.internal + self.radiative + self.cold + self.lambda
    }
}

/// Integrals of ½ρ|u|², ρθ, βθ⁴, ρe_c(ρ) and (λ/2)|∇^{2s+1}ρ|².
pub fn energy_components(solver: &Solver, state: &MixtureState) -> EnergyComponents {
    let g = solver.grid();
    let cp = solver.params();
    let ap = solver.approx();
    let n = g.len();
    let kinetic: Vec<f64> =
        (0..n).map(|p| 0.5 * state.rho[p] * state.velocity.iter().map(|u| u[p] * u[p]).sum::<f64>()).collect();
    let internal: Vec<f64> = (0..n).map(|p| state.rho[p] * state.theta[p]).collect();
    let radiative: Vec<f64> = state.theta.iter().map(|t| cp.radiation * t.powi(4)).collect();
    let cold: Vec<f64> = state.rho.iter().map(|&r| r * cold_energy_raw(r, cp)).collect();
    let lambda =
        if ap.lambda > 0.0 { 0.5 * ap.lambda * g.seminorm_squared(&g.forward(&state.rho), 2 * ap.s + 1) } else { 0.0 };
    EnergyComponents {
        kinetic: g.integrate(&kinetic),
        internal: g.integrate(&internal),
        radiative: g.integrate(&radiative),
        cold: g.integrate(&cold),
        lambda,
    }
}

pub fn total_energy(solver: &Solver, state: &MixtureState) -> f64 {
    energy_components(solver, state).total()
}

/// ∫ρs with s from the mixture entropy, ρ_k = m_k e^{r_k}.
pub fn total_entropy(solver: &Solver, state: &MixtureState) -> f64 {
    let cp = solver.params();
    let density: Vec<f64> = (0..solver.grid().len())
        .map(|p| {
            let t = state.theta[p];
            let mixing: f64 = state.entropy_vars.iter().map(|r| r[p].exp() * r[p]).sum();
            state.rho[p] * t.ln() - mixing + 4.0 * cp.radiation / 3.0 * t.powi(3)
        })
        .collect();
    solver.grid().integrate(&density)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyProduction {
    pub total: f64,
    /// Minimum over unmasked points; +∞ when every point is masked.
    pub min: f64,
    pub field: Vec<f64>,
    /// Points excluded from the minimum because some r_k sits at the floor.
    pub masked: usize,
}

/// Pointwise σ = 2ρⁿ|D(u)|²/θ + κ_ε|∇θ|²/θ² − Σ(F_k/m_k)·∇log p_k − ρΣg_kω_k,
/// with ∇log p_k = ∇r_k + ∇log θ.
pub fn entropy_production(solver: &Solver, state: &MixtureState) -> EntropyProduction {
    let g = solver.grid();
    let cp = solver.params();
    let ap = solver.approx();
    let (dim, n) = (g.dim(), g.len());
    let theta = &state.theta;
    let grad_theta = g.gradient(theta);
    let grad_log_theta: Vec<Vec<f64>> =
        grad_theta.iter().map(|gt| gt.iter().zip(theta).map(|(a, t)| a / t).collect()).collect();
    let grad_r: Vec<Vec<Vec<f64>>> = state.entropy_vars.iter().map(|r| g.gradient(r)).collect();
    let grad_u: Vec<Vec<Vec<f64>>> = state.velocity.iter().map(|u| g.gradient(u)).collect();
    let fluxes = solver.diffusion_fluxes(&state.rho, theta, &state.entropy_vars, &grad_r, &grad_log_theta);
    let omega = solver.production_rates_field(theta, &state.entropy_vars);
    let rho_species = species_total(&state.entropy_vars, &cp.masses);

    let mut field = vec![0.0; n];
    let mut min = f64::INFINITY;
    let mut masked = 0;
    for p in 0..n {
        let t = theta[p];
        let mut strain2 = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                let d = 0.5 * (grad_u[i][j][p] + grad_u[j][i][p]);
                strain2 += d * d;
            }
        }
        let g2: f64 = (0..dim).map(|a| grad_theta[a][p] * grad_theta[a][p]).sum();
        let kappa = solver.effective_conductivity(state.rho[p], rho_species[p], t);
        let mut sigma = 2.0 * rho_species[p] * strain2 / t + kappa * g2 / (t * t);
        for k in 0..state.n_species() {
            let m = cp.masses[k];
            let drive: f64 = (0..dim).map(|a| fluxes[k][a][p] * (grad_r[k][a][p] + grad_log_theta[a][p])).sum();
            sigma -= drive / m;
            if omega[k][p] != 0.0 {
                let gk = gibbs_raw(t, m * state.entropy_vars[k][p].exp(), m);
                sigma -= state.rho[p] * gk * omega[k][p];
            }
        }
        field[p] = sigma;
        if state.entropy_vars.iter().any(|r| r[p] <= ap.r_min) {
            masked += 1;
        } else {
            min = min.min(sigma);
        }
    }
    EntropyProduction { total: g.integrate(&field), min, field, masked }
}

/// ∫[½ρ|u + 2∇log ρ|² + ((r−1)/2)ρ|u|² + (rλ/2)|∇Δ^sρ|² + rρe_c(ρ)] for a weight r > 1.
pub fn bd_functional(solver: &Solver, state: &MixtureState, weight: f64) -> f64 {
    let g = solver.grid();
    let cp = solver.params();
    let ap = solver.approx();
    let rho_hat = g.forward(&state.rho);
    let grad_rho = g.gradient_of_coeffs(&rho_hat);
    let density: Vec<f64> = (0..g.len())
        .map(|p| {
            let rho = state.rho[p];
            let mut drift = 0.0;
            let mut speed = 0.0;
            for (a, u) in state.velocity.iter().enumerate() {
                let v = u[p] + 2.0 * grad_rho[a][p] / rho;
                drift += v * v;
                speed += u[p] * u[p];
            }
            0.5 * rho * drift + 0.5 * (weight - 1.0) * rho * speed + weight * rho * cold_energy_raw(rho, cp)
        })
        .collect();
    let regular =
        if ap.lambda > 0.0 { 0.5 * weight * ap.lambda * g.seminorm_squared(&rho_hat, 2 * ap.s + 1) } else { 0.0 };
    g.integrate(&density) + regular
}

/// |E_next − E_prev − source| / E_next, where `source` is the dt·ε∫(θ⁻² − θ⁵)
/// the step injected.
pub fn energy_residual(previous_energy: f64, next_energy: f64, source: f64) -> f64 {
    (next_energy - previous_energy - source).abs() / next_energy.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Ledgers {
    pub total_mass: f64,
    pub species_ledger: f64,
    pub min_rho: f64,
    pub min_theta: f64,
    pub min_rho_k: f64,
    pub sum_rhok_dev: f64,
}

pub fn ledgers_and_positivity(solver: &Solver, state: &MixtureState) -> Ledgers {
    let g = solver.grid();
    let cp = solver.params();
    let delta = solver.approx().delta;
    let mut ledger = 0.0;
    let mut min_rho_k = f64::INFINITY;
    for (r, m) in state.entropy_vars.iter().zip(&cp.masses) {
        let exps: Vec<f64> = r.iter().map(|v| m * v.exp()).collect();
        min_rho_k = exps.iter().cloned().fold(min_rho_k, f64::min);
        ledger += g.integrate(&exps);
        if delta != 0.0 {
            ledger += delta * m * g.integrate(r);
        }
    }
    let rho_species = species_total(&state.entropy_vars, &cp.masses);
    let sum_rhok_dev = rho_species.iter().zip(&state.rho).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);
    Ledgers {
        total_mass: g.integrate(&state.rho),
        species_ledger: ledger,
        min_rho: state.rho.iter().cloned().fold(f64::INFINITY, f64::min),
        min_theta: state.theta.iter().cloned().fold(f64::INFINITY, f64::min),
        min_rho_k,
        sum_rhok_dev,
    }
}

/// Full report. `previous_energy` is the total energy of the state before
/// the step; pass `None` for the initial row, whose residual is zero.
pub fn report(
    solver: &Solver,
    state: &MixtureState,
    record: &StepRecord,
    previous_energy: Option<f64>,
    bd_weight: f64,
) -> DiagnosticsReport {
    let energy = energy_components(solver, state);
    let total = energy.total();
    let ledgers = ledgers_and_positivity(solver, state);
    let production = entropy_production(solver, state);
    DiagnosticsReport {
        time: state.time,
        total_mass: ledgers.total_mass,
        species_ledger: ledgers.species_ledger,
        energy_total: total,
        energy_kinetic: energy.kinetic,
        energy_internal: energy.internal,
        energy_radiative: energy.radiative,
        energy_cold: energy.cold,
        energy_lambda: energy.lambda,
        entropy: total_entropy(solver, state),
        sigma_total: production.total,
        sigma_min: production.min,
        bd_functional: bd_functional(solver, state, bd_weight),
        min_rho: ledgers.min_rho,
        min_theta: ledgers.min_theta,
        min_rho_k: ledgers.min_rho_k,
        sum_rhok_dev: ledgers.sum_rhok_dev,
        picard_iters: record.picard_iters,
        energy_residual: previous_energy.map_or(0.0, |e| energy_residual(e, total, record.energy_source)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemistry::ReactionModel;
    use crate::constitutive::ConstitutiveParams;
    use crate::solver::ApproxParams;
    use crate::spectral::SpectralGrid;
    use std::f64::consts::PI;

    fn solver(dim: usize, approx: ApproxParams, cp: ConstitutiveParams) -> Solver {
        Solver::new(SpectralGrid::new(dim, 16).unwrap(), approx, cp, ReactionModel::inert()).unwrap()
    }

    #[test]
    fn uniform_energy_and_production() {
        let cp = ConstitutiveParams::default();
        let s = solver(2, ApproxParams { lambda: 0.0, ..Default::default() }, cp.clone());
        let state = MixtureState::uniform(s.grid(), 1.0, 1.0, &[0.5, 0.5], &cp.masses);
        let volume = 4.0 * PI * PI;
        assert!((total_energy(&s, &state) - volume * (1.0 + cp.radiation)).abs() < 1e-12);
        let sigma = entropy_production(&s, &state);
        assert!(sigma.field.iter().all(|v| v.abs() < 1e-14));
        // e_c(1) = 0
        assert!((bd_functional(&s, &state, 2.0)).abs() < 1e-12);
    }

    #[test]
    fn kinetic_energy_is_quadratic() {
        let s = solver(1, ApproxParams::default(), ConstitutiveParams::default());
        let mut state = MixtureState::uniform(s.grid(), 1.2, 1.0, &[0.6, 0.6], &[1.0, 1.0]);
        state.velocity[0] = s.grid().sample(|x| x[0].sin());
        let once = energy_components(&s, &state).kinetic;
        state.velocity[0].iter_mut().for_each(|v| *v *= 2.0);
        let twice = energy_components(&s, &state).kinetic;
        assert!((twice - 4.0 * once).abs() < 1e-12);
        // ½·1.2·∫sin² = 0.6π
        assert!((once - 0.6 * PI).abs() < 1e-12);
        assert_eq!(energy_components(&s, &state).lambda, 0.0);
    }

    #[test]
    fn shear_production_closed_form() {
        // u = (a sin y, 0): |D|² = a² cos² y / 2, so ∫2ρⁿ|D|²/θ = a² ρⁿ 2π² /θ
        let a = 0.3;
        let s = solver(2, ApproxParams::default(), ConstitutiveParams::default());
        let mut state = MixtureState::uniform(s.grid(), 1.0, 2.0, &[0.5, 0.5], &[1.0, 1.0]);
        state.velocity[0] = s.grid().sample(|x| a * x[1].sin());
        let sigma = entropy_production(&s, &state);
        assert!((sigma.total - a * a * 2.0 * PI * PI / 2.0).abs() < 1e-12);
        assert!(sigma.min >= 0.0);
    }

    #[test]
    fn bd_cancellation_and_constant_state() {
        let s = solver(1, ApproxParams { lambda: 0.0, ..Default::default() }, ConstitutiveParams::default());
        let g = s.grid();
        let mut state = MixtureState::uniform(g, 1.0, 1.0, &[0.5, 0.5], &[1.0, 1.0]);
        state.rho = g.sample(|x| (0.2 * x[0].cos()).exp());
        // ∇log ρ = −0.2 sin x, so u = 0.4 sin x cancels the first term
        state.velocity[0] = g.sample(|x| 0.4 * x[0].sin());
        let weight = 1.0 + 1e-12;
        let cold: Vec<f64> = state.rho.iter().map(|&r| r * cold_energy_raw(r, s.params())).collect();
        let expected = weight * g.integrate(&cold)
            + 0.5
                * (weight - 1.0)
                * g.integrate(&state.rho.iter().zip(&state.velocity[0]).map(|(r, u)| r * u * u).collect::<Vec<_>>());
        assert!((bd_functional(&s, &state, weight) - expected).abs() < 1e-10);

        let rho = 1.7;
        let constant = MixtureState::uniform(g, rho, 1.0, &[0.85, 0.85], &[1.0, 1.0]);
        let want = 2.0 * 2.0 * PI * rho * cold_energy_raw(rho, s.params());
        assert!((bd_functional(&s, &constant, 2.0) - want).abs() < 1e-12);
    }

    #[test]
    fn fresh_ledgers() {
        let s = solver(1, ApproxParams { delta: 0.1, ..Default::default() }, ConstitutiveParams::default());
        let state = MixtureState::uniform(s.grid(), 1.0, 1.0, &[0.25, 0.75], &[1.0, 1.0]);
        let l = ledgers_and_positivity(&s, &state);
        let volume = 2.0 * PI;
        assert!((l.total_mass - volume).abs() < 1e-12);
        let want = volume * (1.0 + 0.1 * (0.25f64.ln() + 0.75f64.ln()));
        assert!((l.species_ledger - want).abs() < 1e-12);
        assert!(l.sum_rhok_dev < 1e-15);
        assert!((l.min_rho_k - 0.25).abs() < 1e-15);
    }

    #[test]
    fn residual_of_static_step_vanishes() {
        assert_eq!(energy_residual(3.0, 3.0, 0.0), 0.0);
        assert!((energy_residual(3.0, 3.5, 0.25) - 0.25 / 3.5).abs() < 1e-15);
    }
}
