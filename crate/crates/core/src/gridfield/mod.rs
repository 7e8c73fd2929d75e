//! Periodic-box grids and the complex fields that live on them.
//!
//! The box is `[-L, L)^n` sampled with `points_per_axis` nodes per axis.
//! Flat storage is row-major with the last axis contiguous; unused
//! coordinates of a [`Vec3`] are zero for `n < 3`.

mod fft;
mod norms;

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Error, Result};

pub use fft::FftWorkspace;
pub use norms::{
    boundary_mass, lp_norm, mixed_norm, pair_norms, pair_norms_with, MixedNormSeries, PairNorms,
    Thresholds,
};

pub type Vec3 = [f64; 3];

/// Resolved geometry parameters, as they appear in scenario files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub dim: usize,
    pub points_per_axis: usize,
    pub box_half_length: f64,
}

struct GridInner {
    params: GridParams,
    spacing: f64,
    axis: Vec<f64>,
    wavenumbers: Vec<f64>,
    k2: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// A periodic box grid. Cloning is cheap; FFT plans are shared.
#[derive(Clone)]
pub struct Grid(Arc<GridInner>);

impl Grid {
    pub fn new(dim: usize, points_per_axis: usize, box_half_length: f64) -> Result<Self> {
        Self::from_params(GridParams {
            dim,
            points_per_axis,
            box_half_length,
        })
    }

    pub fn from_params(params: GridParams) -> Result<Self> {
        let GridParams {
            dim,
            points_per_axis: n,
            box_half_length: l,
        } = params;
        if !(1..=3).contains(&dim) {
            return Err(invalid_param(format!("dimension {dim} not in 1..=3")));
        }
        if n < 8 || n % 2 != 0 {
            return Err(invalid_param(format!(
                "points_per_axis must be even and at least 8, got {n}"
            )));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(invalid_param(format!("box half-length must be positive, got {l}")));
        }
        let h = 2.0 * l / n as f64;
        let axis: Vec<f64> = (0..n).map(|j| -l + j as f64 * h).collect();
        let dk = std::f64::consts::PI / l;
        let wavenumbers: Vec<f64> = (0..n)
            .map(|j| {
                let m = if j < n / 2 { j as i64 } else { j as i64 - n as i64 };
                m as f64 * dk
            })
            .collect();
        let total = n.pow(dim as u32);
        let mut k2 = vec![0.0; total];
        for (idx, slot) in k2.iter_mut().enumerate() {
            let mut rest = idx;
            let mut s = 0.0;
            for _ in 0..dim {
                let k = wavenumbers[rest % n];
                s += k * k;
                rest /= n;
            }
            *slot = s;
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        Ok(Grid(Arc::new(GridInner {
            params,
            spacing: h,
            axis,
            wavenumbers,
            k2,
            forward,
            inverse,
        })))
    }

    pub fn params(&self) -> GridParams {
        self.0.params
    }

    pub fn dim(&self) -> usize {
        self.0.params.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.0.params.points_per_axis
    }

    pub fn half_length(&self) -> f64 {
        self.0.params.box_half_length
    }

    pub fn spacing(&self) -> f64 {
        self.0.spacing
    }

    /// Total number of grid points, `points_per_axis^dim`.
    pub fn len(&self) -> usize {
        self.0.k2.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.0.spacing.powi(self.dim() as i32)
    }

    /// Box volume `(2L)^n`.
    pub fn volume(&self) -> f64 {
        (2.0 * self.half_length()).powi(self.dim() as i32)
    }

    /// Node coordinates along one axis.
    pub fn axis(&self) -> &[f64] {
        &self.0.axis
    }

    /// Discrete Fourier wavenumbers along one axis, in FFT order.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.0.wavenumbers
    }

    /// Spacing of the dual lattice, `pi / L`.
    pub fn dual_spacing(&self) -> f64 {
        std::f64::consts::PI / self.half_length()
    }

    /// `|k|^2` for every flat Fourier index.
    pub fn k_squared(&self) -> &[f64] {
        &self.0.k2
    }

    /// Per-axis multi-index of a flat index (unused axes are zero).
    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let n = self.points_per_axis();
        let d = self.dim();
        let mut out = [0usize; 3];
        let mut rest = idx;
        for a in (0..d).rev() {
            out[a] = rest % n;
            rest /= n;
        }
        out
    }

    pub fn coords(&self, idx: usize) -> Vec3 {
        let m = self.multi_index(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim() {
            x[a] = self.0.axis[m[a]];
        }
        x
    }

    /// Wave vector of a flat Fourier index.
    pub fn wavevector(&self, idx: usize) -> Vec3 {
        let m = self.multi_index(idx);
        let mut k = [0.0; 3];
        for a in 0..self.dim() {
            k[a] = self.0.wavenumbers[m[a]];
        }
        k
    }

    /// Minimum-image displacement `x - c`, each component wrapped into `[-L, L)`.
    pub fn min_image(&self, x: &Vec3, c: &Vec3) -> Vec3 {
        let l = self.half_length();
        let period = 2.0 * l;
        let mut d = [0.0; 3];
        for a in 0..self.dim() {
            d[a] = (x[a] - c[a] + l).rem_euclid(period) - l;
        }
        d
    }

    /// Minimum-image displacements from `c` along each axis. Missing axes hold
    /// a single zero, so nested loops over the three vectors visit grid points
    /// in flat (row-major) order.
    pub fn axis_displacements(&self, c: &Vec3) -> [Vec<f64>; 3] {
        let l = self.half_length();
        let period = 2.0 * l;
        std::array::from_fn(|a| {
            if a < self.dim() {
                self.0
                    .axis
                    .iter()
                    .map(|x| (x - c[a] + l).rem_euclid(period) - l)
                    .collect()
            } else {
                vec![0.0]
            }
        })
    }

    /// Whether `v` lies on the dual lattice, i.e. `e^{i x.v}` is periodic on the box.
    pub fn is_dual_lattice(&self, v: &Vec3) -> bool {
        let dk = self.dual_spacing();
        (0..3).all(|a| {
            if a >= self.dim() {
                return v[a] == 0.0;
            }
            let m = v[a] / dk;
            (m - m.round()).abs() < 1e-9
        })
    }

    pub fn fft_forward(&self, data: &mut [Complex64], ws: &mut FftWorkspace) {
        fft::transform(self, data, ws, &self.0.forward, 1.0);
    }

    /// Inverse transform, normalized so that `inverse(forward(f)) == f`.
    pub fn fft_inverse(&self, data: &mut [Complex64], ws: &mut FftWorkspace) {
        let scale = 1.0 / self.len() as f64;
        fft::transform(self, data, ws, &self.0.inverse, scale);
    }

    pub fn workspace(&self) -> FftWorkspace {
        FftWorkspace::new(self)
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.params == other.0.params
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.params();
        f.debug_struct("Grid")
            .field("dim", &p.dim)
            .field("points_per_axis", &p.points_per_axis)
            .field("box_half_length", &p.box_half_length)
            .finish()
    }
}

/// Complex wavefunction sampled on a grid.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<Complex64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid_input(format!(
                "field has {} values, grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(invalid_input("field contains non-finite values"));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&Vec3) -> Complex64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.coords(i))).collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn from_real_fn(grid: &Grid, f: impl Fn(&Vec3) -> f64) -> Self {
        Self::from_fn(grid, |x| Complex64::new(f(x), 0.0))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// `<self, other> = h^n sum conj(self) other`.
    pub fn inner(&self, other: &ScalarField) -> Complex64 {
        debug_assert!(self.grid == other.grid);
        let s: Complex64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum();
        s * self.grid.cell_volume()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    /// Discrete L2 norm.
    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&mut self, c: Complex64) {
        for z in &mut self.values {
            *z *= c;
        }
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: Complex64, other: &ScalarField) {
        debug_assert!(self.grid == other.grid);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn sub(&self, other: &ScalarField) -> Self {
        let mut out = self.clone();
        out.axpy(Complex64::new(-1.0, 0.0), other);
        out
    }

    pub fn add(&self, other: &ScalarField) -> Self {
        let mut out = self.clone();
        out.axpy(Complex64::new(1.0, 0.0), other);
        out
    }

    /// Rescale to unit L2 norm; returns the previous norm.
    pub fn normalize(&mut self) -> f64 {
        let n = self.norm();
        if n > 0.0 {
            self.scale(Complex64::new(1.0 / n, 0.0));
        }
        n
    }

    pub fn conj(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Two-component wavefunction; both components share one grid.
#[derive(Clone, Debug)]
pub struct SpinorField {
    pub upper: ScalarField,
    pub lower: ScalarField,
}

impl SpinorField {
    pub fn new(upper: ScalarField, lower: ScalarField) -> Result<Self> {
        upper.grid.check_same(&lower.grid)?;
        Ok(Self { upper, lower })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self {
            upper: ScalarField::zeros(grid),
            lower: ScalarField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.upper.grid()
    }

    pub fn inner(&self, other: &SpinorField) -> Complex64 {
        self.upper.inner(&other.upper) + self.lower.inner(&other.lower)
    }

    pub fn norm(&self) -> f64 {
        (self.upper.norm_sqr() + self.lower.norm_sqr()).sqrt()
    }

    /// Indefinite charge `int |psi_1|^2 - |psi_2|^2`.
    pub fn charge(&self) -> f64 {
        self.upper.norm_sqr() - self.lower.norm_sqr()
    }

    pub fn scale(&mut self, c: Complex64) {
        self.upper.scale(c);
        self.lower.scale(c);
    }

    pub fn axpy(&mut self, c: Complex64, other: &SpinorField) {
        self.upper.axpy(c, &other.upper);
        self.lower.axpy(c, &other.lower);
    }

    pub fn sub(&self, other: &SpinorField) -> Self {
        let mut out = self.clone();
        out.axpy(Complex64::new(-1.0, 0.0), other);
        out
    }

    /// Stack as `[upper; lower]`.
    pub fn to_vec(&self) -> Vec<Complex64> {
        let mut v = self.upper.values().to_vec();
        v.extend_from_slice(self.lower.values());
        v
    }

    pub fn from_vec(grid: &Grid, v: &[Complex64]) -> Result<Self> {
        let n = grid.len();
        if v.len() != 2 * n {
            return Err(invalid_input(format!(
                "spinor vector has {} entries, expected {}",
                v.len(),
                2 * n
            )));
        }
        Ok(Self {
            upper: ScalarField::new(grid.clone(), v[..n].to_vec())?,
            lower: ScalarField::new(grid.clone(), v[n..].to_vec())?,
        })
    }
}

/// Center of a weight `<x - D(t)>^{-sigma}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CenterPath {
    Fixed { at: Vec3 },
    Moving { origin: Vec3, velocity: Vec3 },
}

impl CenterPath {
    pub fn at(&self, t: f64) -> Vec3 {
        match *self {
            CenterPath::Fixed { at } => at,
            CenterPath::Moving { origin, velocity } => [
                origin[0] + velocity[0] * t,
                origin[1] + velocity[1] * t,
                origin[2] + velocity[2] * t,
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightProfile {
    pub sigma: f64,
    pub center: CenterPath,
}

impl WeightProfile {
    pub const DEFAULT_SIGMA: f64 = 2.0;

    pub fn new(sigma: f64, center: CenterPath) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(invalid_param(format!("weight exponent must be finite and >= 0, got {sigma}")));
        }
        Ok(Self { sigma, center })
    }

    /// Weight centered at the origin.
    pub fn fixed(sigma: f64) -> Result<Self> {
        Self::new(sigma, CenterPath::Fixed { at: [0.0; 3] })
    }

    /// Weight following `e_1 t`.
    pub fn moving_e1(sigma: f64) -> Result<Self> {
        Self::new(
            sigma,
            CenterPath::Moving {
                origin: [0.0; 3],
                velocity: [1.0, 0.0, 0.0],
            },
        )
    }

    /// `<x - D(t)>^{-sigma}` sampled with minimum-image distance.
    pub fn sample(&self, grid: &Grid, t: f64) -> Vec<f64> {
        let [dx, dy, dz] = grid.axis_displacements(&self.center.at(t));
        let mut out = Vec::with_capacity(grid.len());
        for a in &dx {
            for b in &dy {
                for c in &dz {
                    out.push((1.0 + a * a + b * b + c * c).powf(-0.5 * self.sigma));
                }
            }
        }
        out
    }
}

/// Pointwise product with `<x - D(t)>^{-sigma}`.
pub fn weighted_multiply(f: &ScalarField, w: &WeightProfile, t: f64) -> ScalarField {
    if w.sigma == 0.0 {
        return f.clone();
    }
    let weights = w.sample(f.grid(), t);
    let values = f
        .values()
        .iter()
        .zip(&weights)
        .map(|(z, w)| z * w)
        .collect();
    ScalarField::from_vec_unchecked(f.grid().clone(), values)
}

/// Same as [`weighted_multiply`] with the exponent negated (`<x - D(t)>^{+sigma}`).
pub fn weighted_multiply_inverse(f: &ScalarField, w: &WeightProfile, t: f64) -> ScalarField {
    let inv = WeightProfile {
        sigma: -w.sigma,
        center: w.center,
    };
    weighted_multiply(f, &inv, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(Grid::new(4, 16, 1.0).is_err());
        assert!(Grid::new(1, 6, 1.0).is_err());
        assert!(Grid::new(1, 15, 1.0).is_err());
        assert!(Grid::new(2, 16, -1.0).is_err());
        let g = Grid::new(3, 8, 4.0).unwrap();
        assert_eq!(g.len(), 512);
        assert_eq!(g.spacing(), 1.0);
    }

    #[test]
    fn coords_and_min_image() {
        let g = Grid::new(2, 8, 4.0).unwrap();
        assert_eq!(g.coords(0), [-4.0, -4.0, 0.0]);
        assert_eq!(g.coords(9), [-3.0, -3.0, 0.0]);
        let d = g.min_image(&[3.5, 0.0, 0.0], &[-3.5, 0.0, 0.0]);
        assert!((d[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn dual_lattice_detection() {
        let g = Grid::new(1, 16, std::f64::consts::PI * 4.0).unwrap();
        assert!(g.is_dual_lattice(&[1.0, 0.0, 0.0]));
        assert!(g.is_dual_lattice(&[-0.75, 0.0, 0.0]));
        assert!(!g.is_dual_lattice(&[0.1, 0.0, 0.0]));
    }

    #[test]
    fn weight_is_one_at_center_and_sigma_zero_is_identity() {
        let g = Grid::new(2, 16, 8.0).unwrap();
        let f = ScalarField::from_fn(&g, |x| Complex64::new(x[0], x[1] + 1.0));
        let w0 = WeightProfile::fixed(0.0).unwrap();
        assert_eq!(weighted_multiply(&f, &w0, 3.0).values(), f.values());

        let w = WeightProfile::moving_e1(2.0).unwrap();
        let ones = ScalarField::from_fn(&g, |_| c(1.0));
        let t = 3.0;
        let out = weighted_multiply(&ones, &w, t);
        let idx = (0..g.len())
            .find(|&i| {
                let x = g.coords(i);
                x[0] == 3.0 && x[1] == 0.0
            })
            .unwrap();
        assert!((out.values()[idx] - c(1.0)).norm() < 1e-15);
    }

    #[test]
    fn weight_twice_equals_double_exponent() {
        let g = Grid::new(2, 16, 8.0).unwrap();
        let f = ScalarField::from_fn(&g, |x| Complex64::new(x[0].cos(), x[1].sin()));
        let w = WeightProfile::fixed(1.3).unwrap();
        let w2 = WeightProfile::fixed(2.6).unwrap();
        let a = weighted_multiply(&weighted_multiply(&f, &w, 0.5), &w, 0.5);
        let b = weighted_multiply(&f, &w2, 0.5);
        assert!(a.sub(&b).norm() <= 1e-14 * b.norm());
    }

    #[test]
    fn spinor_rejects_mixed_grids() {
        let g1 = Grid::new(1, 16, 8.0).unwrap();
        let g2 = Grid::new(1, 32, 8.0).unwrap();
        assert!(SpinorField::new(ScalarField::zeros(&g1), ScalarField::zeros(&g2)).is_err());
    }
}
