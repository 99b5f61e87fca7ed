//! Time integration of the regularised mixture system on the torus.
//!
//! Unknowns are density ρ, velocity u, temperature θ and the entropy
//! variables r_k = log(ρ_k/m_k). One step is a Picard loop over four
//! sub-steps in a fixed order: density, temperature, velocity, species.
//! Inside a sub-step the field being advanced is explicit at the old time
//! level, with a constant-coefficient implicit stabiliser on its stiff
//! part, while every other field is read from the latest iterate. At the
//! fixed point the cross-couplings are therefore implicit.
//!
//! Conserved densities are advanced, not the primitive fields: ρu for
//! momentum, ρθ + βθ⁴ for heat and δr_k + e^{r_k} for species. Temperature
//! and r_k are recovered pointwise by safeguarded Newton iteration.

use crate::chemistry::{pair_rate, ReactionKind, ReactionModel};
use crate::constitutive::{
    cold_pressure_derivative_raw, cold_pressure_raw, diffusion_amplitude_raw, heat_conductivity_raw, ConstitutiveParams,
};
use crate::maxwell_stefan::{dhat_from_exponentials, entropic_from_dhat, Vec3};
use crate::spectral::SpectralGrid;
use num_complex::Complex64;
use thiserror::Error;

/// Regularisation knobs and time-stepping controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxParams {
    /// Parabolic regularisation ε of density, species and temperature.
    pub epsilon: f64,
    /// Species relaxation δ.
    pub delta: f64,
    /// High-order density/momentum regularisation λ.
    pub lambda: f64,
    /// Order parameter; the regulariser is Δ^{2s+1}.
    pub s: u32,
    /// Galerkin truncation radius; `None` means the two-thirds cutoff M/3.
    pub truncation: Option<usize>,
    pub dt: f64,
    pub t_end: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    /// Floor applied to the entropy variables of vanishing species.
    pub r_min: f64,
    /// How many times a rejected step may be halved.
    pub retry_budget: u32,
}

impl Default for ApproxParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            delta: 0.0,
            lambda: 1e-6,
            s: 1,
            truncation: None,
            dt: 1e-3,
            t_end: 0.1,
            picard_tol: 1e-10,
            picard_max: 25,
            r_min: -40.0,
            retry_budget: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApproxError {
    #[error("{0} ≥ 0 required")]
    Negative(&'static str),
    #[error("2s+1 ≥ 3 required when λ > 0")]
    Order,
    #[error("truncation {0} exceeds grid capacity {1}")]
    Truncation(usize, usize),
    #[error("dt > 0 required")]
    TimeStep,
    #[error("t_end ≥ 0 required")]
    EndTime,
    #[error("picard_tol > 0 and picard_max ≥ 1 required")]
    Picard,
    #[error("r_min must be finite")]
    Floor,
}

impl ApproxParams {
    pub fn truncation_for(&self, grid: &SpectralGrid) -> usize {
        self.truncation.unwrap_or(grid.modes() / 3)
    }

    pub fn validate(&self, grid: &SpectralGrid) -> Result<(), ApproxError> {
        for (name, v) in [("epsilon", self.epsilon), ("delta", self.delta), ("lambda", self.lambda)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(ApproxError::Negative(name));
            }
        }
        if self.lambda > 0.0 && self.s < 1 {
            return Err(ApproxError::Order);
        }
        let n = self.truncation_for(grid);
        if n > grid.capacity() {
            return Err(ApproxError::Truncation(n, grid.capacity()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(ApproxError::TimeStep);
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(ApproxError::EndTime);
        }
        if !(self.picard_tol > 0.0) || self.picard_max == 0 {
            return Err(ApproxError::Picard);
        }
        if !self.r_min.is_finite() {
            return Err(ApproxError::Floor);
        }
        Ok(())
    }
}

/// Full set of unknowns on the collocation grid at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState {
    pub rho: Vec<f64>,
    /// One component per torus dimension.
    pub velocity: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    /// r_k = log(ρ_k/m_k), one field per species.
    pub entropy_vars: Vec<Vec<f64>>,
    pub time: f64,
}

impl MixtureState {
    /// Constant state at rest.
    pub fn uniform(grid: &SpectralGrid, rho: f64, theta: f64, rho_k: &[f64], masses: &[f64]) -> Self {
        let n = grid.len();
        Self {
            rho: vec![rho; n],
            velocity: vec![vec![0.0; n]; grid.dim()],
            theta: vec![theta; n],
            entropy_vars: rho_k.iter().zip(masses).map(|(r, m)| vec![(r / m).ln(); n]).collect(),
            time: 0.0,
        }
    }

    pub fn n_species(&self) -> usize {
        self.entropy_vars.len()
    }

    /// ρ_k = m_k e^{r_k}.
    pub fn species_density(&self, k: usize, masses: &[f64]) -> Vec<f64> {
        self.entropy_vars[k].iter().map(|r| masses[k] * r.exp()).collect()
    }

    /// ρⁿ = Σ m_k e^{r_k}.
    pub fn species_total(&self, masses: &[f64]) -> Vec<f64> {
        species_total(&self.entropy_vars, masses)
    }

    pub fn as_fields(&self) -> FieldsRef<'_> {
        FieldsRef { rho: &self.rho, velocity: &self.velocity, theta: &self.theta, entropy_vars: &self.entropy_vars }
    }

    /// Momentum ∫ρu, per component.
    pub fn momentum(&self, grid: &SpectralGrid) -> Vec<f64> {
        self.velocity
            .iter()
            .map(|u| grid.integrate(&self.rho.iter().zip(u).map(|(r, v)| r * v).collect::<Vec<_>>()))
            .collect()
    }
}

pub(crate) fn species_total(entropy_vars: &[Vec<f64>], masses: &[f64]) -> Vec<f64> {
    let n = entropy_vars[0].len();
    (0..n).map(|i| entropy_vars.iter().zip(masses).map(|(r, m)| m * r[i].exp()).sum()).collect()
}

/// Borrowed view of a field set, possibly mixing time levels.
#[derive(Debug, Clone, Copy)]
pub struct FieldsRef<'a> {
    pub rho: &'a [f64],
    pub velocity: &'a [Vec<f64>],
    pub theta: &'a [f64],
    pub entropy_vars: &'a [Vec<f64>],
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InitialDataError {
    #[error("initial density must have a positive minimum (min {0})")]
    Density(f64),
    #[error("initial temperature must be positive (min {0})")]
    Temperature(f64),
    #[error("species density {0} negative")]
    Species(usize),
    #[error("species densities must sum to the density (max relative gap {0:e})")]
    SpeciesSum(f64),
    #[error("field sizes do not match the grid")]
    Shape,
}

/// Initial density, momentum, temperature and species densities.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub rho: Vec<f64>,
    pub momentum: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub rho_k: Vec<Vec<f64>>,
}

impl InitialData {
    pub fn validate(&self, grid: &SpectralGrid) -> Result<(), InitialDataError> {
        let n = grid.len();
        if self.rho.len() != n
            || self.theta.len() != n
            || self.momentum.len() != grid.dim()
            || self.momentum.iter().chain(&self.rho_k).any(|f| f.len() != n)
        {
            return Err(InitialDataError::Shape);
        }
        let min_rho = self.rho.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min_rho > 0.0) {
            return Err(InitialDataError::Density(min_rho));
        }
        let min_theta = self.theta.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min_theta > 0.0) {
            return Err(InitialDataError::Temperature(min_theta));
        }
        for (k, f) in self.rho_k.iter().enumerate() {
            if f.iter().any(|v| !(*v >= 0.0)) {
                return Err(InitialDataError::Species(k));
            }
        }
        let gap = (0..n)
            .map(|i| (self.rho_k.iter().map(|f| f[i]).sum::<f64>() - self.rho[i]).abs() / self.rho[i])
            .fold(0.0, f64::max);
        if gap > 1e-12 {
            return Err(InitialDataError::SpeciesSum(gap));
        }
        Ok(())
    }

    /// Builds the initial state: u⁰ = P_N(m⁰/ρ⁰), r_k⁰ = log(ρ_k⁰/m_k) floored at r_min.
    pub fn into_state(
        &self,
        grid: &SpectralGrid,
        ap: &ApproxParams,
        cp: &ConstitutiveParams,
    ) -> Result<MixtureState, InitialDataError> {
        self.validate(grid)?;
        if self.rho_k.len() != cp.n_species() {
            return Err(InitialDataError::Shape);
        }
        let truncation = ap.truncation_for(grid);
        let velocity = self
            .momentum
            .iter()
            .map(|m| {
                let u: Vec<f64> = m.iter().zip(&self.rho).map(|(m, r)| m / r).collect();
                grid.inverse(&grid.project(&grid.forward(&u), truncation).expect("validated truncation"))
            })
            .collect();
        let entropy_vars = self
            .rho_k
            .iter()
            .zip(&cp.masses)
            .map(|(f, m)| f.iter().map(|v| (v / m).ln().max(ap.r_min)).collect())
            .collect();
        Ok(MixtureState { rho: self.rho.clone(), velocity, theta: self.theta.clone(), entropy_vars, time: 0.0 })
    }
}

/// Source terms added to each equation, used by manufactured-solution runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingSet {
    pub continuity: Vec<f64>,
    pub momentum: Vec<Vec<f64>>,
    pub thermal: Vec<f64>,
    pub species: Vec<Vec<f64>>,
}

pub trait Forcing: Send + Sync {
    /// Forcing of every equation at the given time.
    fn evaluate(&self, time: f64) -> ForcingSet;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("{field} lost positivity at grid point {index} (value {value:e})")]
    Positivity { field: &'static str, index: usize, value: f64 },
    #[error("{field} became non-finite at grid point {index}")]
    NonFinite { field: &'static str, index: usize },
    #[error("{field} recovery did not converge at grid point {index}")]
    Recovery { field: &'static str, index: usize },
    #[error("fixed-point iteration stalled after {iterations} iterations (change {change:e})")]
    Picard { iterations: usize, change: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("{field} lost positivity at t = {time}, x = {location:?} (value {value:e})")]
    Positivity { field: &'static str, time: f64, location: [f64; 3], value: f64 },
    #[error("step rejected at t = {time} after exhausting the retry budget: {reason}")]
    Rejected { time: f64, reason: StepError },
    #[error("observer stopped the run: {0}")]
    Observer(String),
}

/// What happened during one accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepRecord {
    pub step: usize,
    /// Time step actually covered (sum of sub-steps after halving).
    pub dt: f64,
    /// Largest Picard count over the sub-steps.
    pub picard_iters: usize,
    /// dt·ε∫(θ⁻² − θ⁵) as injected by the thermal update.
    pub energy_source: f64,
    pub rejections: usize,
    /// Points where some r_k hit the floor.
    pub floored_points: usize,
}

pub struct Solver {
    grid: SpectralGrid,
    approx: ApproxParams,
    params: ConstitutiveParams,
    reaction: ReactionModel,
    forcing: Option<Box<dyn Forcing>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SetupError {
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Params(#[from] crate::constitutive::ParamError),
    #[error(transparent)]
    Reaction(#[from] crate::chemistry::ReactionError),
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn first_bad(values: &[f64], field: &'static str) -> Result<(), StepError> {
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(StepError::NonFinite { field, index: i });
        }
        if v <= 0.0 {
            return Err(StepError::Positivity { field, index: i, value: v });
        }
    }
    Ok(())
}

fn rms(values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

fn relative_change(new: &[f64], old: &[f64]) -> f64 {
    let diff: Vec<f64> = new.iter().zip(old).map(|(a, b)| a - b).collect();
    rms(&diff) / (1.0 + rms(new))
}

/// Solves ρz + βz⁴ = q for z > 0.
fn recover_temperature(q: f64, rho: f64, beta: f64, guess: f64) -> Option<f64> {
    if !(q > 0.0) {
        return None;
    }
    let mut lo = 0.0;
    let mut hi = (q / rho).min((q / beta).powf(0.25));
    let mut z = if guess > lo && guess < hi { guess } else { 0.5 * hi };
    for _ in 0..200 {
        let f = rho * z + beta * z.powi(4) - q;
        if f > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let slope = rho + 4.0 * beta * z.powi(3);
        let mut next = z - f / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - z).abs() <= 1e-15 * next || hi - lo <= 1e-15 * hi {
            return Some(next);
        }
        z = next;
    }
    None
}

/// Solves δz + e^z = w.
fn recover_entropy_variable(w: f64, delta: f64, guess: f64) -> Option<f64> {
    if delta == 0.0 {
        return if w > 0.0 { Some(w.ln()) } else { None };
    }
    let f = |z: f64| delta * z + z.exp() - w;
    let start = if guess.is_finite() { guess } else { 0.0 };
    let (mut lo, mut hi) = (start, start);
    while f(lo) > 0.0 {
        lo -= 1.0f64.max(lo.abs());
    }
    while f(hi) < 0.0 {
        hi += 1.0f64.max(hi.abs());
    }
    let mut z = start.clamp(lo, hi);
    for _ in 0..200 {
        let value = f(z);
        if value > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let mut next = z - value / (delta + z.exp());
        if !(next >= lo && next <= hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - z).abs() <= 1e-15 * (1.0 + next.abs()) || hi - lo <= 1e-15 * (1.0 + hi.abs()) {
            return Some(next);
        }
        z = next;
    }
    None
}

impl Solver {
    pub fn new(
        grid: SpectralGrid,
        approx: ApproxParams,
        params: ConstitutiveParams,
        reaction: ReactionModel,
    ) -> Result<Self, SetupError> {
        approx.validate(&grid)?;
        params.validate()?;
        reaction.validate(&params)?;
        Ok(Self { grid, approx, params, reaction, forcing: None })
    }

    pub fn with_forcing(mut self, forcing: Box<dyn Forcing>) -> Self {
        self.forcing = Some(forcing);
        self
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn approx(&self) -> &ApproxParams {
        &self.approx
    }

    pub fn params(&self) -> &ConstitutiveParams {
        &self.params
    }

    pub fn reaction(&self) -> &ReactionModel {
        &self.reaction
    }

    fn truncation(&self) -> usize {
        self.approx.truncation_for(&self.grid)
    }

    fn wavenumber_squared(&self, index: usize) -> f64 {
        self.grid.wavevector(index).iter().map(|&k| (k * k) as f64).sum()
    }

    /// Exponential-Euler update of ∂t f = εΔf + g: the increment is
    /// φ₁(g − ε|k|²f) with φ₁ = (1 − e^{−ε|k|²dt})/(ε|k|²), so the εΔ part is
    /// integrated exactly. A positive `damping` divides the whole increment,
    /// which leaves steady states untouched.
    fn exponential_euler(&self, old: &[f64], tendency_hat: &[Complex64], dt: f64, damping: f64) -> Vec<f64> {
        let eps = self.approx.epsilon;
        let old_hat = self.grid.forward(old);
        let new_hat: Vec<Complex64> = old_hat
            .iter()
            .zip(tendency_hat)
            .enumerate()
            .map(|(i, (f, g))| {
                let k2 = self.wavenumber_squared(i);
                let z = eps * k2 * dt;
                let phi = if z == 0.0 { dt } else { -(-z).exp_m1() / (eps * k2) };
                let stab = 1.0 + dt * damping * k2;
                if damping == 0.0 {
                    f * (-z).exp() + g * phi
                } else {
                    f + (g - f * (eps * k2)) * (phi / stab)
                }
            })
            .collect();
        self.grid.inverse(&new_hat)
    }

    /// −div(ρu).
    pub fn continuity_tendency(&self, rho: &[f64], velocity: &[Vec<f64>]) -> Vec<f64> {
        let flux: Vec<Vec<f64>> = velocity.iter().map(|u| mul(rho, u)).collect();
        self.grid.divergence(&flux).into_iter().map(|v| -v).collect()
    }

    /// Right-hand side of the momentum balance for ∂t(ρu).
    pub fn momentum_tendency(&self, f: FieldsRef<'_>) -> Vec<Vec<f64>> {
        let g = &self.grid;
        let (dim, n) = (g.dim(), g.len());
        let cp = &self.params;
        let ap = &self.approx;
        let rho = f.rho;
        let exps: Vec<Vec<f64>> = f.entropy_vars.iter().map(|r| r.iter().map(|v| v.exp()).collect()).collect();
        let viscosity = species_total(f.entropy_vars, &cp.masses);
        let grad_u: Vec<Vec<Vec<f64>>> = f.velocity.iter().map(|u| g.gradient(u)).collect();
        let pressure: Vec<f64> = (0..n)
            .map(|p| {
                let sum_e: f64 = exps.iter().map(|e| e[p]).sum();
                cold_pressure_raw(rho[p], cp) + cp.radiation / 3.0 * f.theta[p].powi(4) + f.theta[p] * sum_e
            })
            .collect();
        let grad_pressure = g.gradient(&pressure);
        let rho_hat = g.forward(rho);
        let order = 2 * ap.s + 1;
        let grad_high_rho =
            if ap.lambda > 0.0 { Some(g.gradient_of_coeffs(&g.laplacian_power(&rho_hat, order))) } else { None };
        let grad_rho = if ap.epsilon > 0.0 { Some(g.gradient_of_coeffs(&rho_hat)) } else { None };

        (0..dim)
            .map(|i| {
                // ρ u_i u_j − 2ρⁿ D_ij, divergence taken over j
                let flux: Vec<Vec<f64>> = (0..dim)
                    .map(|j| {
                        (0..n)
                            .map(|p| {
                                let strain = 0.5 * (grad_u[i][j][p] + grad_u[j][i][p]);
                                rho[p] * f.velocity[i][p] * f.velocity[j][p] - 2.0 * viscosity[p] * strain
                            })
                            .collect()
                    })
                    .collect();
                let mut out: Vec<f64> =
                    g.divergence(&flux).iter().zip(&grad_pressure[i]).map(|(d, gp)| -d - gp).collect();
                if let Some(grad_high_rho) = &grad_high_rho {
                    let momentum = mul(rho, &f.velocity[i]);
                    let high = g.inverse(&g.laplacian_power(&g.forward(&momentum), order));
                    for p in 0..n {
                        out[p] += ap.lambda * rho[p] * (high[p] + grad_high_rho[i][p]);
                    }
                }
                if let Some(grad_rho) = &grad_rho {
                    for p in 0..n {
                        let advect: f64 = (0..dim).map(|j| grad_rho[j][p] * grad_u[i][j][p]).sum();
                        out[p] -= ap.epsilon * advect;
                    }
                }
                out
            })
            .collect()
    }

    /// Maxwell–Stefan fluxes F_k in entropic form, as `[species][axis][point]`.
    pub(crate) fn diffusion_fluxes(
        &self,
        rho: &[f64],
        theta: &[f64],
        entropy_vars: &[Vec<f64>],
        grad_r: &[Vec<Vec<f64>>],
        grad_log_theta: &[Vec<f64>],
    ) -> Vec<Vec<Vec<f64>>> {
        let (dim, n) = (self.grid.dim(), self.grid.len());
        let species = entropy_vars.len();
        let masses = &self.params.masses;
        let mut out = vec![vec![vec![0.0; n]; dim]; species];
        if species < 2 {
            // a single species has no relative diffusion
            return out;
        }
        for p in 0..n {
            let exps: Vec<f64> = entropy_vars.iter().map(|r| r[p].exp()).collect();
            let dhat = dhat_from_exponentials(&exps, masses);
            let gr: Vec<Vec3> =
                (0..species).map(|k| std::array::from_fn(|a| if a < dim { grad_r[k][a][p] } else { 0.0 })).collect();
            let glt: Vec3 = std::array::from_fn(|a| if a < dim { grad_log_theta[a][p] } else { 0.0 });
            let amp = diffusion_amplitude_raw(rho[p], theta[p], &self.params);
            let fluxes = entropic_from_dhat(&dhat, &gr, &glt, amp, masses);
            for k in 0..species {
                for a in 0..dim {
                    out[k][a][p] = fluxes[k][a];
                }
            }
        }
        out
    }

    /// Production rates ω_k at every point, as `[species][point]`.
    pub(crate) fn production_rates_field(&self, theta: &[f64], entropy_vars: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.grid.len();
        let mut out = vec![vec![0.0; n]; entropy_vars.len()];
        if self.reaction.is_inert() {
            return out;
        }
        if let ReactionKind::ReversiblePair { a, b } = self.reaction.kind {
            let mass = self.params.masses[a];
            for p in 0..n {
                let rho_a = mass * entropy_vars[a][p].exp();
                let rho_b = mass * entropy_vars[b][p].exp();
                let rate = pair_rate(theta[p], rho_a, rho_b, mass, &self.reaction);
                out[a][p] = rate;
                out[b][p] = -rate;
            }
        }
        out
    }

    pub(crate) fn effective_conductivity(&self, rho: f64, rho_species: f64, theta: f64) -> f64 {
        self.approx.epsilon / self.params.min_mass() * rho_species + heat_conductivity_raw(rho, theta, &self.params)
    }

    /// Right-hand side for ∂t(ρθ + βθ⁴), together with dt-free ε∫(θ⁻² − θ⁵).
    pub fn thermal_tendency(&self, f: FieldsRef<'_>) -> (Vec<f64>, f64) {
        let g = &self.grid;
        let (dim, n) = (g.dim(), g.len());
        let cp = &self.params;
        let ap = &self.approx;
        let (rho, theta) = (f.rho, f.theta);
        let beta = cp.radiation;
        let exps: Vec<Vec<f64>> = f.entropy_vars.iter().map(|r| r.iter().map(|v| v.exp()).collect()).collect();
        let rho_species = species_total(f.entropy_vars, &cp.masses);
        let grad_theta = g.gradient(theta);
        let grad_log_theta: Vec<Vec<f64>> =
            grad_theta.iter().map(|gt| gt.iter().zip(theta).map(|(a, t)| a / t).collect()).collect();
        let grad_r: Vec<Vec<Vec<f64>>> = f.entropy_vars.iter().map(|r| g.gradient(r)).collect();
        let fluxes = self.diffusion_fluxes(rho, theta, f.entropy_vars, &grad_r, &grad_log_theta);
        let grad_u: Vec<Vec<Vec<f64>>> = f.velocity.iter().map(|u| g.gradient(u)).collect();

        let mut flux = vec![vec![0.0; n]; dim];
        for p in 0..n {
            let energy = rho[p] * theta[p] + beta * theta[p].powi(4);
            let kappa = self.effective_conductivity(rho[p], rho_species[p], theta[p]);
            for a in 0..dim {
                let mut v = f.velocity[a][p] * energy - kappa * grad_theta[a][p];
                for k in 0..exps.len() {
                    v += theta[p]
                        * (fluxes[k][a][p] / cp.masses[k] - (ap.delta + ap.epsilon * exps[k][p]) * grad_r[k][a][p]);
                }
                flux[a][p] = v;
            }
        }
        let mut out: Vec<f64> = g.divergence(&flux).into_iter().map(|v| -v).collect();

        let mut source_sum = 0.0;
        for p in 0..n {
            let t = theta[p];
            let singular = ap.epsilon * (1.0 / (t * t) - t.powi(5));
            source_sum += singular;
            let sum_e: f64 = exps.iter().map(|e| e[p]).sum();
            let div_u: f64 = (0..dim).map(|a| grad_u[a][a][p]).sum();
            let mut strain2 = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    let d = 0.5 * (grad_u[i][j][p] + grad_u[j][i][p]);
                    strain2 += d * d;
                }
            }
            out[p] += singular - (t * sum_e + beta / 3.0 * t.powi(4)) * div_u + 2.0 * rho_species[p] * strain2;
        }
        if ap.lambda > 0.0 {
            // λ|Δ^s∇(ρu)|², summed over components and directions
            for i in 0..dim {
                let m_hat = g.forward(&mul(rho, &f.velocity[i]));
                let lifted = g.laplacian_power(&m_hat, ap.s);
                for j in 0..dim {
                    let d = g.inverse(&g.derivative(&lifted, j));
                    for p in 0..n {
                        out[p] += ap.lambda * d[p] * d[p];
                    }
                }
            }
        }
        if ap.epsilon > 0.0 {
            let rho_hat = g.forward(rho);
            if ap.lambda > 0.0 {
                let lap = g.inverse(&g.laplacian_power(&rho_hat, ap.s + 1));
                for p in 0..n {
                    out[p] += ap.lambda * ap.epsilon * lap[p] * lap[p];
                }
            }
            let grad_rho = g.gradient_of_coeffs(&rho_hat);
            for p in 0..n {
                let g2: f64 = (0..dim).map(|a| grad_rho[a][p] * grad_rho[a][p]).sum();
                out[p] += ap.epsilon * cold_pressure_derivative_raw(rho[p], cp) / rho[p] * g2;
            }
        }
        (out, source_sum * g.cell_volume())
    }

    /// Right-hand side for ∂t(δr_k + e^{r_k}) without the εΔ(δr_k + e^{r_k})
    /// part, which the integrator treats exactly.
    pub fn species_tendency(&self, f: FieldsRef<'_>) -> Vec<Vec<f64>> {
        let g = &self.grid;
        let (dim, n) = (g.dim(), g.len());
        let cp = &self.params;
        let ap = &self.approx;
        let theta = f.theta;
        let grad_theta = g.gradient(theta);
        let grad_log_theta: Vec<Vec<f64>> =
            grad_theta.iter().map(|gt| gt.iter().zip(theta).map(|(a, t)| a / t).collect()).collect();
        let r_hat: Vec<Vec<Complex64>> = f.entropy_vars.iter().map(|r| g.forward(r)).collect();
        let grad_r: Vec<Vec<Vec<f64>>> = r_hat.iter().map(|c| g.gradient_of_coeffs(c)).collect();
        let fluxes = self.diffusion_fluxes(f.rho, theta, f.entropy_vars, &grad_r, &grad_log_theta);
        let omega = self.production_rates_field(theta, f.entropy_vars);
        let rho_species = species_total(f.entropy_vars, &cp.masses);
        let relax = ap.delta * (1.0 - ap.epsilon);

        (0..f.entropy_vars.len())
            .map(|k| {
                let mass = cp.masses[k];
                let flux: Vec<Vec<f64>> = (0..dim)
                    .map(|a| {
                        (0..n).map(|p| f.entropy_vars[k][p].exp() * f.velocity[a][p] + fluxes[k][a][p] / mass).collect()
                    })
                    .collect();
                let mut out: Vec<f64> = g.divergence(&flux).into_iter().map(|v| -v).collect();
                if relax != 0.0 {
                    let lap = g.inverse(&g.laplacian_power(&r_hat[k], 1));
                    out.iter_mut().zip(&lap).for_each(|(o, l)| *o += relax * l);
                }
                for p in 0..n {
                    out[p] += rho_species[p] * theta[p] * omega[k][p] / mass;
                }
                out
            })
            .collect()
    }

    fn dealiased_hat(&self, values: &[f64], forcing: Option<&Vec<f64>>) -> Vec<Complex64> {
        let hat = match forcing {
            Some(extra) => self.grid.forward(&values.iter().zip(extra).map(|(a, b)| a + b).collect::<Vec<_>>()),
            None => self.grid.forward(values),
        };
        self.grid.dealias(&hat)
    }

    /// Density update with frozen velocity.
    pub fn step_continuity(
        &self,
        old: &MixtureState,
        velocity: &[Vec<f64>],
        dt: f64,
        forcing: Option<&ForcingSet>,
    ) -> Result<Vec<f64>, StepError> {
        let tendency = self.continuity_tendency(&old.rho, velocity);
        let hat = self.dealiased_hat(&tendency, forcing.map(|f| &f.continuity));
        let rho = self.exponential_euler(&old.rho, &hat, dt, 0.0);
        first_bad(&rho, "density")?;
        Ok(rho)
    }

    /// Temperature update from the thermal energy balance; `next` supplies the
    /// new density and the latest velocity and species iterates.
    pub fn step_thermal(
        &self,
        old: &MixtureState,
        next: &MixtureState,
        dt: f64,
        forcing: Option<&ForcingSet>,
    ) -> Result<(Vec<f64>, f64), StepError> {
        let g = &self.grid;
        let beta = self.params.radiation;
        let fields =
            FieldsRef { rho: &next.rho, velocity: &next.velocity, theta: &old.theta, entropy_vars: &next.entropy_vars };
        let (tendency, source) = self.thermal_tendency(fields);
        let hat = self.dealiased_hat(&tendency, forcing.map(|f| &f.thermal));
        let rho_species = species_total(&next.entropy_vars, &self.params.masses);
        let diffusivity = (0..g.len())
            .map(|p| {
                let t = old.theta[p];
                self.effective_conductivity(next.rho[p], rho_species[p], t) / (next.rho[p] + 4.0 * beta * t.powi(3))
            })
            .fold(0.0, f64::max);
        let increment: Vec<Complex64> = hat
            .iter()
            .enumerate()
            .map(|(i, c)| c * (dt / (1.0 + dt * diffusivity * self.wavenumber_squared(i))))
            .collect();
        let increment = g.inverse(&increment);
        let mut theta = vec![0.0; g.len()];
        for p in 0..g.len() {
            let q = old.rho[p] * old.theta[p] + beta * old.theta[p].powi(4) + increment[p];
            if !q.is_finite() {
                return Err(StepError::NonFinite { field: "temperature", index: p });
            }
            if q <= 0.0 {
                return Err(StepError::Positivity { field: "temperature", index: p, value: q });
            }
            theta[p] = recover_temperature(q, next.rho[p], beta, old.theta[p])
                .ok_or(StepError::Recovery { field: "temperature", index: p })?;
        }
        first_bad(&theta, "temperature")?;
        Ok((theta, dt * source))
    }

    /// Velocity update in momentum form followed by division by the new density.
    pub fn step_momentum(
        &self,
        old: &MixtureState,
        next: &MixtureState,
        dt: f64,
        forcing: Option<&ForcingSet>,
    ) -> Result<Vec<Vec<f64>>, StepError> {
        let g = &self.grid;
        let (dim, n) = (g.dim(), g.len());
        let ap = &self.approx;
        let fields =
            FieldsRef { rho: &next.rho, velocity: &old.velocity, theta: &next.theta, entropy_vars: &next.entropy_vars };
        let tendency = self.momentum_tendency(fields);
        let hats: Vec<Vec<Complex64>> =
            (0..dim).map(|i| self.dealiased_hat(&tendency[i], forcing.map(|f| &f.momentum[i]))).collect();
        let rho_species = species_total(&next.entropy_vars, &self.params.masses);
        let viscous = (0..n).map(|p| rho_species[p] / next.rho[p]).fold(0.0, f64::max);
        let high = ap.lambda * next.rho.iter().cloned().fold(0.0, f64::max);
        let order = 2 * ap.s + 1;
        // (αI + b kkᵀ)⁻¹ = (I − b kkᵀ/(α + b|k|²))/α, mode by mode
        let mut increments = vec![vec![Complex64::new(0.0, 0.0); n]; dim];
        for idx in 0..n {
            let k = g.wavevector(idx).map(|v| v as f64);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            let alpha = 1.0 + dt * (viscous * k2 + high * k2.powi(order as i32));
            let b = dt * viscous;
            let kdot: Complex64 = (0..dim).map(|j| hats[j][idx] * k[j]).sum();
            for i in 0..dim {
                increments[i][idx] = (hats[i][idx] - kdot * (b * k[i] / (alpha + b * k2))) * (dt / alpha);
            }
        }
        let truncation = self.truncation();
        let mut velocity = Vec::with_capacity(dim);
        for i in 0..dim {
            let inc = g.inverse(&increments[i]);
            let u: Vec<f64> = (0..n).map(|p| (old.rho[p] * old.velocity[i][p] + inc[p]) / next.rho[p]).collect();
            let u = g.inverse(&g.project(&g.forward(&u), truncation).expect("validated truncation"));
            if let Some(p) = u.iter().position(|v| !v.is_finite()) {
                return Err(StepError::NonFinite { field: "velocity", index: p });
            }
            velocity.push(u);
        }
        Ok(velocity)
    }

    /// Species update; returns the new entropy variables and how many points were floored.
    pub fn step_species(
        &self,
        old: &MixtureState,
        next: &MixtureState,
        dt: f64,
        forcing: Option<&ForcingSet>,
    ) -> Result<(Vec<Vec<f64>>, usize), StepError> {
        let g = &self.grid;
        let n = g.len();
        let ap = &self.approx;
        let fields =
            FieldsRef { rho: &next.rho, velocity: &next.velocity, theta: &next.theta, entropy_vars: &old.entropy_vars };
        let tendency = self.species_tendency(fields);
        let truncation = self.truncation();
        let mut floored = vec![false; n];
        let mut result = Vec::with_capacity(tendency.len());
        for (k, t) in tendency.iter().enumerate() {
            let hat = self.dealiased_hat(t, forcing.map(|f| &f.species[k]));
            let hat = g.project(&hat, truncation).expect("validated truncation");
            // relaxation δΔr is stiff like diffusion with coefficient δ/(δ + e^r)
            let damping = if ap.delta > 0.0 {
                old.entropy_vars[k].iter().map(|r| ap.delta / (ap.delta + r.exp())).fold(0.0, f64::max)
            } else {
                0.0
            };
            let w_old: Vec<f64> = old.entropy_vars[k].iter().map(|r| ap.delta * r + r.exp()).collect();
            let w_new = self.exponential_euler(&w_old, &hat, dt, damping);
            let mut r_new = vec![0.0; n];
            for p in 0..n {
                if !w_new[p].is_finite() {
                    return Err(StepError::NonFinite { field: "species", index: p });
                }
                let r = match recover_entropy_variable(w_new[p], ap.delta, old.entropy_vars[k][p]) {
                    Some(r) => r,
                    None if ap.delta == 0.0 => f64::NEG_INFINITY,
                    None => return Err(StepError::Recovery { field: "species", index: p }),
                };
                if r < ap.r_min {
                    floored[p] = true;
                    r_new[p] = ap.r_min;
                } else {
                    r_new[p] = r;
                }
            }
            result.push(r_new);
        }
        Ok((result, floored.iter().filter(|&&f| f).count()))
    }

    /// One full step of length dt: Picard iteration over the four sub-steps.
    pub fn picard_coupled_step(&self, old: &MixtureState, dt: f64) -> Result<(MixtureState, StepRecord), StepError> {
        let time = old.time + dt;
        let forcing = self.forcing.as_ref().map(|f| f.evaluate(time));
        let forcing = forcing.as_ref();
        let mut next = old.clone();
        next.time = time;
        let mut change = f64::INFINITY;
        for iteration in 1..=self.approx.picard_max {
            let prev = next.clone();
            next.rho = self.step_continuity(old, &prev.velocity, dt, forcing)?;
            let (theta, energy_source) = self.step_thermal(old, &next, dt, forcing)?;
            next.theta = theta;
            next.velocity = self.step_momentum(old, &next, dt, forcing)?;
            let (r, floored_points) = self.step_species(old, &next, dt, forcing)?;
            next.entropy_vars = r;

            change = relative_change(&next.rho, &prev.rho).max(relative_change(&next.theta, &prev.theta));
            for (a, b) in
                next.velocity.iter().zip(&prev.velocity).chain(next.entropy_vars.iter().zip(&prev.entropy_vars))
            {
                change = change.max(relative_change(a, b));
            }
            if !change.is_finite() {
                break;
            }
            if change <= self.approx.picard_tol {
                let record =
                    StepRecord { step: 0, dt, picard_iters: iteration, energy_source, rejections: 0, floored_points };
                return Ok((next, record));
            }
        }
        Err(StepError::Picard { iterations: self.approx.picard_max, change })
    }

    /// Step of length dt, halving on rejection while the budget lasts.
    pub fn advance(&self, old: &MixtureState, dt: f64) -> Result<(MixtureState, StepRecord), StepError> {
        self.advance_with_budget(old, dt, self.approx.retry_budget)
    }

    fn advance_with_budget(
        &self,
        old: &MixtureState,
        dt: f64,
        budget: u32,
    ) -> Result<(MixtureState, StepRecord), StepError> {
        match self.picard_coupled_step(old, dt) {
            Ok(done) => Ok(done),
            Err(_) if budget > 0 => {
                let half = 0.5 * dt;
                let (mid, first) = self.advance_with_budget(old, half, budget - 1)?;
                let (mut end, second) = self.advance_with_budget(&mid, dt - half, budget - 1)?;
                end.time = old.time + dt;
                Ok((
                    end,
                    StepRecord {
                        step: 0,
                        dt,
                        picard_iters: first.picard_iters.max(second.picard_iters),
                        energy_source: first.energy_source + second.energy_source,
                        rejections: 1 + first.rejections + second.rejections,
                        floored_points: first.floored_points.max(second.floored_points),
                    },
                ))
            }
            Err(e) => Err(e),
        }
    }

    /// Steps from `state` to t_end. The observer sees the initial state
    /// (with a default record) and then every accepted step.
    pub fn run<F>(&self, state: MixtureState, mut observer: F) -> Result<MixtureState, RunError>
    where
        F: FnMut(&MixtureState, &StepRecord) -> Result<(), String>,
    {
        let t_end = self.approx.t_end;
        let dt = self.approx.dt;
        observer(&state, &StepRecord::default()).map_err(RunError::Observer)?;
        let start = state.time;
        let span = t_end - start;
        if span <= 0.0 {
            return Ok(state);
        }
        let steps = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
        let mut state = state;
        for step in 1..=steps {
            let target = if step == steps { t_end } else { start + step as f64 * dt };
            let h = target - state.time;
            let (mut next, mut record) = self.advance(&state, h).map_err(|reason| self.run_error(&state, reason))?;
            next.time = target;
            record.step = step;
            observer(&next, &record).map_err(RunError::Observer)?;
            state = next;
        }
        Ok(state)
    }

    fn run_error(&self, state: &MixtureState, reason: StepError) -> RunError {
        match reason {
            StepError::Positivity { field, index, value } => {
                RunError::Positivity { field, time: state.time, location: self.grid.point(index), value }
            }
            other => RunError::Rejected { time: state.time, reason: other },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solver(dim: usize, modes: usize, approx: ApproxParams) -> Solver {
        let grid = SpectralGrid::new(dim, modes).unwrap();
        Solver::new(grid, approx, ConstitutiveParams::default(), ReactionModel::inert()).unwrap()
    }

    fn perturbed(s: &Solver) -> MixtureState {
        let g = s.grid();
        let rho = g.sample(|x| 1.0 + 0.1 * x[0].cos());
        let y1 = g.sample(|x| 0.5 + 0.1 * x[0].sin());
        MixtureState {
            velocity: (0..g.dim()).map(|a| g.sample(|x| 0.1 * (x[a]).sin())).collect(),
            theta: g.sample(|x| 1.0 + 0.05 * x[0].cos()),
            entropy_vars: vec![
                rho.iter().zip(&y1).map(|(r, y)| (r * y).ln()).collect(),
                rho.iter().zip(&y1).map(|(r, y)| (r * (1.0 - y)).ln()).collect(),
            ],
            rho,
            time: 0.0,
        }
    }

    #[test]
    fn newton_recoveries() {
        let z = recover_temperature(1.0 * 0.7 + 0.3 * 0.7f64.powi(4), 1.0, 0.3, 2.0).unwrap();
        assert!((z - 0.7).abs() < 1e-14);
        let w = 0.1 * (-2.0) + (-2.0f64).exp();
        let r = recover_entropy_variable(w, 0.1, 5.0).unwrap();
        assert!((r + 2.0).abs() < 1e-13);
        assert_eq!(recover_entropy_variable(-1.0, 0.0, 0.0), None);
        assert!(recover_temperature(-1.0, 1.0, 0.3, 1.0).is_none());
    }

    #[test]
    fn uniform_state_is_stationary() {
        let s = solver(2, 8, ApproxParams { epsilon: 1e-2, ..Default::default() });
        let state = MixtureState::uniform(s.grid(), 1.0, 1.0, &[0.4, 0.6], &[1.0, 1.0]);
        let (next, record) = s.picard_coupled_step(&state, 1e-3).unwrap();
        assert_eq!(record.picard_iters, 1);
        assert!(next.velocity.iter().flatten().all(|v| v.abs() < 1e-14));
        for (a, b) in next.rho.iter().zip(&state.rho) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in next.entropy_vars.iter().flatten().zip(state.entropy_vars.iter().flatten()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn heat_kernel_decay_of_density() {
        let eps = 0.05;
        let s = solver(1, 16, ApproxParams { epsilon: eps, ..Default::default() });
        let mut state = MixtureState::uniform(s.grid(), 1.0, 1.0, &[0.5, 0.5], &[1.0, 1.0]);
        state.rho = s.grid().sample(|x| 1.0 + 0.2 * x[0].cos());
        let dt = 0.01;
        let rho = s.step_continuity(&state, &state.velocity, dt, None).unwrap();
        let want = s.grid().sample(|x| 1.0 + 0.2 * (-eps * dt).exp() * x[0].cos());
        for (a, b) in rho.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_density_under_divergence_free_flow() {
        let s = solver(2, 16, ApproxParams { epsilon: 0.0, ..Default::default() });
        let g = s.grid();
        let mut state = MixtureState::uniform(g, 1.3, 1.0, &[0.65, 0.65], &[1.0, 1.0]);
        state.velocity = vec![g.sample(|x| x[1].sin()), g.sample(|x| x[0].cos())];
        let rho = s.step_continuity(&state, &state.velocity, 1e-2, None).unwrap();
        assert!(rho.iter().all(|r| (r - 1.3).abs() < 1e-10));
    }

    #[test]
    fn single_species_tracks_density() {
        let grid = SpectralGrid::new(1, 32).unwrap();
        let cp = ConstitutiveParams { masses: vec![2.0], ..Default::default() };
        let approx = ApproxParams { epsilon: 0.02, t_end: 0.1, dt: 1e-3, ..Default::default() };
        let s = Solver::new(grid, approx, cp, ReactionModel::inert()).unwrap();
        let g = s.grid();
        let rho = g.sample(|x| 1.0 + 0.1 * x[0].cos());
        let init = InitialData {
            momentum: vec![rho.iter().zip(g.sample(|x| 0.1 * x[0].sin())).map(|(r, u)| r * u).collect()],
            theta: vec![1.0; g.len()],
            rho_k: vec![rho.clone()],
            rho,
        };
        let state = init.into_state(g, s.approx(), s.params()).unwrap();
        let end = s.run(state, |_, _| Ok(())).unwrap();
        let rho_k = end.species_density(0, &s.params().masses);
        let gap = rho_k.iter().zip(&end.rho).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-8, "gap {gap:e}");
    }

    #[test]
    fn huge_step_is_rejected() {
        let s = solver(1, 32, ApproxParams { dt: 50.0, t_end: 50.0, picard_max: 5, ..Default::default() });
        let state = perturbed(&s);
        assert!(s.run(state, |_, _| Ok(())).is_err());
    }

    #[test]
    fn small_step_converges_quickly() {
        let s = solver(1, 32, ApproxParams { dt: 1e-4, ..Default::default() });
        let state = perturbed(&s);
        let (_, record) = s.picard_coupled_step(&state, 1e-4).unwrap();
        assert!(record.picard_iters <= 5, "{} iterations", record.picard_iters);
    }

    #[test]
    fn zero_end_time_returns_initial_state() {
        let s = solver(1, 16, ApproxParams { t_end: 0.0, ..Default::default() });
        let state = perturbed(&s);
        assert_eq!(s.run(state.clone(), |_, _| Ok(())).unwrap(), state);
    }
}
