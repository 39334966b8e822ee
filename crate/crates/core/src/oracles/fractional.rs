use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::geometry::GridShape;

use super::{check_len, SolverOracle};

/// Solves `(-Laplace_h)^s u + u = b` on a periodic grid through the discrete
/// Fourier transform, where `-Laplace_h` is the unit five-point (seven-point,
/// three-point) stencil.
pub struct FractionalOracle {
    shape: GridShape,
    s: f64,
    multiplier: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Eigenvalue of the unit periodic stencil for wave numbers `k`.
pub fn stencil_symbol(shape: GridShape, k: &[usize; 3]) -> f64 {
    (0..shape.dim).map(|a| 2.0 - 2.0 * (2.0 * PI * k[a] as f64 / shape.n as f64).cos()).sum()
}

impl FractionalOracle {
    pub fn new(n: usize, dim: usize, s: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidParameter(format!("dimension {dim} not in 1..=3")));
        }
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid { axis: 0, size: n });
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!("fractional order s = {s} must be positive")));
        }
        let shape = GridShape::new(n, dim);
        let multiplier =
            (0..shape.len()).map(|p| 1.0 / (stencil_symbol(shape, &shape.multi_index(p)).powf(s) + 1.0)).collect();
        let mut planner = FftPlanner::new();
        Ok(Self { shape, s, multiplier, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) })
    }

    pub fn order(&self) -> f64 {
        self.s
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.shape.n;
        let mut line = vec![Complex64::default(); n];
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        for axis in 0..self.shape.dim {
            let stride = n.pow((self.shape.dim - 1 - axis) as u32);
            for start in 0..self.shape.len() {
                if (start / stride) % n != 0 {
                    continue;
                }
                for (t, v) in line.iter_mut().enumerate() {
                    *v = data[start + t * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (t, v) in line.iter().enumerate() {
                    data[start + t * stride] = *v;
                }
            }
        }
    }
}

impl SolverOracle for FractionalOracle {
    fn dim(&self) -> usize {
        self.shape.len()
    }

    fn apply(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len(self, b)?;
        let mut data: Vec<Complex64> = b.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        for (v, m) in data.iter_mut().zip(&self.multiplier) {
            *v *= m;
        }
        self.transform(&mut data, &self.inverse);
        let scale = 1.0 / self.shape.len() as f64;
        Ok(data.iter().map(|v| v.re * scale).collect())
    }
}
