//! Fourier calculus on the 2π-periodic torus in one to three dimensions.
//!
//! Collocation values live on a uniform grid of M points per axis, stored
//! row-major with the first axis slowest. Coefficients use the convention
//! f̂_k = M^{-d} Σ_j f_j e^{−ik·x_j}, so a constant field maps to its value
//! at k = 0 and Parseval reads mean(f²) = Σ|f̂_k|².

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("dimension must be 1, 2 or 3 (got {0})")]
    Dimension(usize),
    #[error("modes per dimension must be even and at least 4 (got {0})")]
    Modes(usize),
    #[error("field has {got} entries, grid has {expected}")]
    Size { expected: usize, got: usize },
    #[error("truncation {truncation} exceeds grid capacity {capacity}")]
    Truncation { truncation: usize, capacity: usize },
}

#[derive(Clone)]
pub struct SpectralGrid {
    dim: usize,
    modes: usize,
    forward_plan: Arc<dyn Fft<f64>>,
    inverse_plan: Arc<dyn Fft<f64>>,
    wavenumbers: Vec<i64>,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid").field("dim", &self.dim).field("modes", &self.modes).finish()
    }
}

impl PartialEq for SpectralGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.modes == other.modes
    }
}

/// A scalar field in whichever representation was last produced.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarField {
    Grid(Vec<f64>),
    Spectral(Vec<Complex64>),
}

impl SpectralGrid {
    pub fn new(dim: usize, modes: usize) -> Result<Self, GridError> {
        if !(1..=3).contains(&dim) {
            return Err(GridError::Dimension(dim));
        }
        if modes < 4 || !modes.is_multiple_of(2) {
            return Err(GridError::Modes(modes));
        }
        let mut planner = FftPlanner::new();
        let half = modes as i64 / 2;
        let wavenumbers = (0..modes as i64).map(|j| if j < half { j } else { j - modes as i64 }).collect();
        Ok(Self {
            dim,
            modes,
            forward_plan: planner.plan_fft_forward(modes),
            inverse_plan: planner.plan_fft_inverse(modes),
            wavenumbers,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Number of collocation points, M^dim.
    pub fn len(&self) -> usize {
        self.modes.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// |Ω| = (2π)^dim.
    pub fn volume(&self) -> f64 {
        (2.0 * PI).powi(self.dim as i32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.volume() / self.len() as f64
    }

    fn axis_indices(&self, index: usize) -> [usize; 3] {
        let mut out = [0; 3];
        let mut rest = index;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % self.modes;
            rest /= self.modes;
        }
        out
    }

    /// Physical coordinates of a collocation point; unused axes are zero.
    pub fn point(&self, index: usize) -> [f64; 3] {
        let h = 2.0 * PI / self.modes as f64;
        self.axis_indices(index).map(|j| j as f64 * h)
    }

    /// Integer wavevector of a coefficient slot; unused axes are zero.
    pub fn wavevector(&self, index: usize) -> [i64; 3] {
        let idx = self.axis_indices(index);
        let mut k = [0; 3];
        for axis in 0..self.dim {
            k[axis] = self.wavenumbers[idx[axis]];
        }
        k
    }

    fn is_nyquist(&self, k: i64) -> bool {
        k == -(self.modes as i64) / 2
    }

    fn check(&self, n: usize) -> Result<(), GridError> {
        if n == self.len() {
            Ok(())
        } else {
            Err(GridError::Size { expected: self.len(), got: n })
        }
    }

    fn transform_axes(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let m = self.modes;
        let total = self.len();
        let mut line = vec![Complex64::new(0.0, 0.0); m];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for axis in 0..self.dim {
            let stride = m.pow((self.dim - 1 - axis) as u32);
            for start in 0..total {
                // visit each line once, from the slot whose axis index is 0
                if !(start / stride).is_multiple_of(m) {
                    continue;
                }
                for (j, slot) in line.iter_mut().enumerate() {
                    *slot = data[start + j * stride];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for (j, value) in line.iter().enumerate() {
                    data[start + j * stride] = *value;
                }
            }
        }
    }

    /// Collocation values to coefficients.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        assert_eq!(values.len(), self.len(), "field size does not match grid");
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform_axes(&mut data, &self.forward_plan);
        let scale = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|c| *c *= scale);
        data
    }

    /// Coefficients to collocation values (real part; the imaginary part is
    /// round-off for conjugate-symmetric input).
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.len(), "field size does not match grid");
        let mut data = coeffs.to_vec();
        self.transform_axes(&mut data, &self.inverse_plan);
        data.iter().map(|c| c.re).collect()
    }

    /// Toggles the representation of a field.
    pub fn transform(&self, field: &ScalarField) -> Result<ScalarField, GridError> {
        match field {
            ScalarField::Grid(v) => {
                self.check(v.len())?;
                Ok(ScalarField::Spectral(self.forward(v)))
            }
            ScalarField::Spectral(c) => {
                self.check(c.len())?;
                Ok(ScalarField::Grid(self.inverse(c)))
            }
        }
    }

    /// Multiplies every coefficient by a real function of its wavevector.
    pub fn apply_multiplier(&self, coeffs: &[Complex64], f: impl Fn([f64; 3]) -> f64) -> Vec<Complex64> {
        coeffs.iter().enumerate().map(|(i, c)| c * f(self.wavevector(i).map(|k| k as f64))).collect()
    }

    /// ∂/∂x_axis as multiplication by i k_axis. The Nyquist slot is zeroed so
    /// that odd derivatives of real fields stay real.
    pub fn derivative(&self, coeffs: &[Complex64], axis: usize) -> Vec<Complex64> {
        coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let k = self.wavevector(i)[axis];
                if self.is_nyquist(k) {
                    Complex64::new(0.0, 0.0)
                } else {
                    c * Complex64::new(0.0, k as f64)
                }
            })
            .collect()
    }

    /// Gradient of a collocation field, one component per dimension.
    pub fn gradient(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let coeffs = self.forward(values);
        self.gradient_of_coeffs(&coeffs)
    }

    pub fn gradient_of_coeffs(&self, coeffs: &[Complex64]) -> Vec<Vec<f64>> {
        (0..self.dim).map(|axis| self.inverse(&self.derivative(coeffs, axis))).collect()
    }

    /// Divergence of a collocation vector field with `dim` components.
    pub fn divergence(&self, components: &[Vec<f64>]) -> Vec<f64> {
        assert_eq!(components.len(), self.dim, "vector field needs one component per dimension");
        let mut acc = vec![Complex64::new(0.0, 0.0); self.len()];
        for (axis, comp) in components.iter().enumerate() {
            let d = self.derivative(&self.forward(comp), axis);
            acc.iter_mut().zip(d).for_each(|(a, b)| *a += b);
        }
        self.inverse(&acc)
    }

    /// Δ^power as the multiplier (−|k|²)^power.
    pub fn laplacian_power(&self, coeffs: &[Complex64], power: u32) -> Vec<Complex64> {
        self.apply_multiplier(coeffs, |k| (-(k[0] * k[0] + k[1] * k[1] + k[2] * k[2])).powi(power as i32))
    }

    /// Multiplier |k|^order, used for seminorms of fractional or odd order.
    pub fn abs_power(&self, coeffs: &[Complex64], order: f64) -> Vec<Complex64> {
        self.apply_multiplier(coeffs, |k| {
            let n2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            if n2 == 0.0 {
                if order == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                n2.powf(0.5 * order)
            }
        })
    }

    /// ∫|∇^order f|² = |Ω| Σ |k|^{2 order} |f̂_k|².
    pub fn seminorm_squared(&self, coeffs: &[Complex64], order: u32) -> f64 {
        let sum: f64 = coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let k = self.wavevector(i).map(|v| v as f64);
                let n2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
                n2.powi(order as i32) * c.norm_sqr()
            })
            .sum();
        self.volume() * sum
    }

    /// Largest truncation radius the grid can hold.
    pub fn capacity(&self) -> usize {
        self.modes / 2
    }

    /// Zeroes every mode with |k| > truncation (Euclidean ball).
    pub fn project(&self, coeffs: &[Complex64], truncation: usize) -> Result<Vec<Complex64>, GridError> {
        if truncation > self.capacity() {
            return Err(GridError::Truncation { truncation, capacity: self.capacity() });
        }
        let radius2 = (truncation * truncation) as i64;
        Ok(self.mask(coeffs, |k| k[0] * k[0] + k[1] * k[1] + k[2] * k[2] <= radius2))
    }

    /// Two-thirds rule: zeroes every mode with some |k_i| > M/3.
    pub fn dealias(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let m = self.modes as i64;
        self.mask(coeffs, |k| k.iter().all(|&ki| 3 * ki.abs() <= m))
    }

    fn mask(&self, coeffs: &[Complex64], keep: impl Fn([i64; 3]) -> bool) -> Vec<Complex64> {
        coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| if keep(self.wavevector(i)) { c } else { Complex64::new(0.0, 0.0) })
            .collect()
    }

    /// Collocation field with the two-thirds rule applied.
    pub fn filtered(&self, values: &[f64]) -> Vec<f64> {
        self.inverse(&self.dealias(&self.forward(values)))
    }

    /// Spectral quadrature ∫_Ω f, exact for trigonometric polynomials the grid resolves.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.cell_volume()
    }

    /// Samples a function of the coordinates on the grid.
    pub fn sample(&self, f: impl Fn([f64; 3]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|i| f(self.point(i))).collect()
    }
}
