//! Localized potential profiles and their evaluation along straight-line
//! trajectories.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Result};
use crate::gridfield::{Grid, ScalarField, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileFamily {
    /// `A exp(-r^2 / w^2)`
    Gaussian,
    /// `A sech(r / w)`
    Sech,
    /// `A sech^2(r / w)`, the profile of the cubic NLS soliton linearization.
    SechSquared,
}

/// A smooth, exponentially localized radial profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub family: ProfileFamily,
    pub amplitude: f64,
    pub width: f64,
    #[serde(default)]
    pub center: Vec3,
}

impl PotentialSpec {
    pub fn new(family: ProfileFamily, amplitude: f64, width: f64, center: Vec3) -> Result<Self> {
        let s = Self {
            family,
            amplitude,
            width,
            center,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn gaussian(amplitude: f64, width: f64) -> Self {
        Self {
            family: ProfileFamily::Gaussian,
            amplitude,
            width,
            center: [0.0; 3],
        }
    }

    pub fn sech(amplitude: f64, width: f64) -> Self {
        Self {
            family: ProfileFamily::Sech,
            amplitude,
            width,
            center: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(invalid_param(format!("profile width must be positive, got {}", self.width)));
        }
        if !self.amplitude.is_finite() || self.center.iter().any(|c| !c.is_finite()) {
            return Err(invalid_param("profile amplitude and center must be finite"));
        }
        Ok(())
    }

    /// Profile value at squared distance `r2` from its center.
    pub fn profile(&self, r2: f64) -> f64 {
        let w = self.width;
        match self.family {
            ProfileFamily::Gaussian => self.amplitude * (-r2 / (w * w)).exp(),
            ProfileFamily::Sech => {
                let z = r2.sqrt() / w;
                // 2 e^{-z} / (1 + e^{-2z}) avoids overflow of cosh
                let e = (-z).exp();
                self.amplitude * 2.0 * e / (1.0 + e * e)
            }
            ProfileFamily::SechSquared => {
                let e = (-r2.sqrt() / w).exp();
                let s = 2.0 * e / (1.0 + e * e);
                self.amplitude * s * s
            }
        }
    }

    /// `C` in `|V(x)| <= C |A| exp(-|x - c| / w)`.
    pub fn localization_constant(&self) -> f64 {
        match self.family {
            ProfileFamily::Gaussian => 0.25f64.exp(),
            ProfileFamily::Sech => 2.0,
            ProfileFamily::SechSquared => 4.0,
        }
    }

    /// Stationary profile on the grid (centered at `center`).
    pub fn sample(&self, grid: &Grid) -> Vec<f64> {
        let mut out = vec![0.0; grid.len()];
        accumulate_profile(self, &self.center, grid, &mut out);
        out
    }
}

fn accumulate_profile(spec: &PotentialSpec, center: &Vec3, grid: &Grid, out: &mut [f64]) {
    let d = grid.axis_displacements(center);
    let mut values = out.iter_mut();
    match spec.family {
        ProfileFamily::Gaussian => {
            // separable: one exponential per axis point
            let w2 = spec.width * spec.width;
            let f: Vec<Vec<f64>> = d
                .iter()
                .map(|axis| axis.iter().map(|x| (-x * x / w2).exp()).collect())
                .collect();
            for a in &f[0] {
                for b in &f[1] {
                    let ab = spec.amplitude * a * b;
                    for c in &f[2] {
                        *values.next().unwrap() += ab * c;
                    }
                }
            }
        }
        ProfileFamily::Sech | ProfileFamily::SechSquared => {
            for a in &d[0] {
                for b in &d[1] {
                    for c in &d[2] {
                        *values.next().unwrap() += spec.profile(a * a + b * b + c * c);
                    }
                }
            }
        }
    }
}

fn add3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn trajectory(center: &Vec3, offset: &Vec3, velocity: &Vec3, t: f64) -> Vec3 {
    let c = add3(center, offset);
    [
        c[0] + velocity[0] * t,
        c[1] + velocity[1] * t,
        c[2] + velocity[2] * t,
    ]
}

/// `V(x - v t - y)`: a profile translating along a straight line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovingPotential {
    pub spec: PotentialSpec,
    #[serde(default)]
    pub velocity: Vec3,
    #[serde(default)]
    pub offset: Vec3,
}

impl MovingPotential {
    pub fn stationary(spec: PotentialSpec) -> Self {
        Self {
            spec,
            velocity: [0.0; 3],
            offset: [0.0; 3],
        }
    }

    pub fn new(spec: PotentialSpec, velocity: Vec3, offset: Vec3) -> Self {
        Self {
            spec,
            velocity,
            offset,
        }
    }

    pub fn center(&self, t: f64) -> Vec3 {
        trajectory(&self.spec.center, &self.offset, &self.velocity, t)
    }

    /// Adds this potential at time `t` into `out`.
    pub fn accumulate(&self, t: f64, grid: &Grid, out: &mut [f64]) {
        accumulate_profile(&self.spec, &self.center(t), grid, out);
    }
}

/// Real potential `V(x - center(t))` sampled on the grid.
pub fn sample_potential(mp: &MovingPotential, t: f64, grid: &Grid) -> ScalarField {
    let mut v = vec![0.0; grid.len()];
    mp.accumulate(t, grid, &mut v);
    ScalarField::from_real_fn_values(grid, &v)
}

/// Sum of several moving potentials at time `t`.
pub fn sample_total(potentials: &[MovingPotential], t: f64, grid: &Grid) -> Vec<f64> {
    let mut v = vec![0.0; grid.len()];
    for mp in potentials {
        mp.accumulate(t, grid, &mut v);
    }
    v
}

/// Matrix potential `[[U, -e^{i theta} W], [e^{-i theta} W, -U]]` moving with `velocity`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixPotentialSpec {
    pub u_profile: PotentialSpec,
    pub w_profile: PotentialSpec,
    pub alpha: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub velocity: Vec3,
    #[serde(default)]
    pub offset: Vec3,
}

impl MatrixPotentialSpec {
    pub fn validate(&self) -> Result<()> {
        self.u_profile.validate()?;
        self.w_profile.validate()?;
        if !(self.alpha.is_finite() && self.alpha != 0.0) {
            return Err(invalid_param(format!("alpha must be finite and nonzero, got {}", self.alpha)));
        }
        if self.u_profile.center != self.w_profile.center {
            return Err(invalid_param("U and W profiles must share a center"));
        }
        Ok(())
    }

    /// Linearization of the focusing cubic NLS at the soliton `Q = alpha sech(alpha x)`:
    /// `U = -2 Q^2`, `W = Q^2`. Its generalized kernel carries Jordan chains.
    pub fn nls_soliton(alpha: f64) -> Self {
        let profile = |amplitude| PotentialSpec {
            family: ProfileFamily::SechSquared,
            amplitude,
            width: 1.0 / alpha.abs(),
            center: [0.0; 3],
        };
        Self {
            u_profile: profile(-2.0 * alpha * alpha),
            w_profile: profile(alpha * alpha),
            alpha,
            gamma: 0.0,
            velocity: [0.0; 3],
            offset: [0.0; 3],
        }
    }

    /// Spectral-gap edge `mu = alpha^2 / 2` of the stationary operator.
    pub fn gap_edge(&self) -> f64 {
        0.5 * self.alpha * self.alpha
    }

    pub fn center(&self, t: f64) -> Vec3 {
        trajectory(&self.u_profile.center, &self.offset, &self.velocity, t)
    }

    /// `theta(t, y) = (|v|^2 + alpha^2) t + 2 y.v + gamma` at moving-frame position `y`.
    pub fn theta(&self, t: f64, y: &Vec3) -> f64 {
        let v = &self.velocity;
        let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        (v2 + self.alpha * self.alpha) * t + 2.0 * (y[0] * v[0] + y[1] * v[1] + y[2] * v[2]) + self.gamma
    }

    fn accumulate(&self, t: f64, grid: &Grid, field: &mut MatrixPotentialField) {
        let d = grid.axis_displacements(&self.center(t));
        let mut i = 0;
        for a in &d[0] {
            for b in &d[1] {
                for c in &d[2] {
                    let y = [*a, *b, *c];
                    let r2 = a * a + b * b + c * c;
                    field.diag[i] += self.u_profile.profile(r2);
                    let w = self.w_profile.profile(r2);
                    if w != 0.0 {
                        field.coupling[i] += Complex64::from_polar(w, -self.theta(t, &y));
                    }
                    i += 1;
                }
            }
        }
    }
}

/// Pointwise 2x2 matrices `[[U, -conj(c)], [c, -U]]` with `c = e^{-i theta} W`.
#[derive(Clone, Debug)]
pub struct MatrixPotentialField {
    pub diag: Vec<f64>,
    pub coupling: Vec<Complex64>,
}

impl MatrixPotentialField {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            diag: vec![0.0; grid.len()],
            coupling: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn matrix(&self, i: usize) -> [[Complex64; 2]; 2] {
        let u = Complex64::new(self.diag[i], 0.0);
        let c = self.coupling[i];
        [[u, -c.conj()], [c, -u]]
    }
}

pub fn sample_matrix_potential(ms: &MatrixPotentialSpec, t: f64, grid: &Grid) -> MatrixPotentialField {
    let mut f = MatrixPotentialField::zeros(grid);
    ms.accumulate(t, grid, &mut f);
    f
}

pub fn sample_matrix_total(potentials: &[MatrixPotentialSpec], t: f64, grid: &Grid) -> MatrixPotentialField {
    let mut f = MatrixPotentialField::zeros(grid);
    for ms in potentials {
        ms.accumulate(t, grid, &mut f);
    }
    f
}

impl ScalarField {
    pub(crate) fn from_real_fn_values(grid: &Grid, v: &[f64]) -> ScalarField {
        ScalarField::from_vec_unchecked(grid.clone(), v.iter().map(|x| Complex64::new(*x, 0.0)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid3() -> Grid {
        Grid::new(3, 16, 8.0).unwrap()
    }

    fn index_of(g: &Grid, x: Vec3) -> usize {
        (0..g.len()).find(|&i| g.coords(i) == x).unwrap()
    }

    #[test]
    fn peak_at_trajectory_center() {
        let g = grid3();
        for spec in [PotentialSpec::gaussian(-2.5, 1.5), PotentialSpec::sech(0.7, 2.0)] {
            let mp = MovingPotential::new(spec, [1.0, 0.0, 0.0], [-2.0, 1.0, 0.0]);
            let f = sample_potential(&mp, 3.0, &g);
            let i = index_of(&g, [1.0, 1.0, 0.0]);
            assert!((f.values()[i].re - spec.amplitude).abs() < 1e-15);
            assert!(f.values().iter().all(|z| z.im == 0.0));
        }
    }

    #[test]
    fn zero_velocity_is_time_independent() {
        let g = grid3();
        let mp = MovingPotential::stationary(PotentialSpec::gaussian(1.0, 1.0));
        let a = sample_potential(&mp, 0.0, &g);
        let b = sample_potential(&mp, 17.3, &g);
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn translation_covariance() {
        let g = Grid::new(2, 32, 8.0).unwrap();
        let mp = MovingPotential::new(PotentialSpec::sech(1.0, 1.2), [0.5, -0.25, 0.0], [0.0; 3]);
        let t = 2.0;
        let at_t = sample_potential(&mp, t, &g);
        let at_0 = sample_potential(&mp, 0.0, &g);
        // x - v t = x - (1, -0.5): a shift of (2, -1) grid cells
        for i in 0..g.len() {
            let x = g.coords(i);
            let j = index_of(&g, [
                (x[0] - 1.0 + 8.0).rem_euclid(16.0) - 8.0,
                (x[1] + 0.5 + 8.0).rem_euclid(16.0) - 8.0,
                0.0,
            ]);
            assert!((at_t.values()[i] - at_0.values()[j]).norm() < 1e-14);
        }
    }

    #[test]
    fn exponential_localization_rate() {
        for spec in [PotentialSpec::gaussian(3.0, 1.5), PotentialSpec::sech(3.0, 1.5)] {
            // fit log|V| along a ray over r in [3w, 8w]
            let rs: Vec<f64> = (0..20).map(|i| 3.0 * spec.width + i as f64 * 0.25 * spec.width).collect();
            let logs: Vec<f64> = rs.iter().map(|r| spec.profile(r * r).abs().ln()).collect();
            let n = rs.len() as f64;
            let mr = rs.iter().sum::<f64>() / n;
            let ml = logs.iter().sum::<f64>() / n;
            let slope = rs.iter().zip(&logs).map(|(r, l)| (r - mr) * (l - ml)).sum::<f64>()
                / rs.iter().map(|r| (r - mr) * (r - mr)).sum::<f64>();
            assert!(-slope >= 1.0 / spec.width - 1e-3, "{:?}: rate {}", spec.family, -slope);
            for r in &rs {
                assert!(spec.profile(r * r).abs() <= spec.localization_constant() * 3.0 * (-r / spec.width).exp());
            }
        }
    }

    #[test]
    fn moving_potentials_add() {
        let g = Grid::new(2, 16, 6.0).unwrap();
        let a = MovingPotential::new(PotentialSpec::gaussian(-1.0, 1.0), [0.0; 3], [0.0; 3]);
        let b = MovingPotential::new(PotentialSpec::sech(0.5, 0.8), [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]);
        let t = 0.7;
        let total = sample_total(&[a, b], t, &g);
        let sa = sample_potential(&a, t, &g);
        let sb = sample_potential(&b, t, &g);
        for i in 0..g.len() {
            assert!((total[i] - (sa.values()[i].re + sb.values()[i].re)).abs() < 1e-15);
        }
    }

    fn matrix_spec() -> MatrixPotentialSpec {
        MatrixPotentialSpec {
            u_profile: PotentialSpec::gaussian(-1.2, 1.0),
            w_profile: PotentialSpec::sech(0.4, 1.1),
            alpha: 0.9,
            gamma: 0.3,
            velocity: [1.0, 0.0, 0.0],
            offset: [0.0; 3],
        }
    }

    #[test]
    fn theta_at_origin_and_time_zero_is_gamma() {
        let ms = matrix_spec();
        assert_eq!(ms.theta(0.0, &[0.0; 3]), ms.gamma);
    }

    #[test]
    fn matrix_potential_structure() {
        let g = Grid::new(2, 16, 6.0).unwrap();
        let ms = matrix_spec();
        let f = sample_matrix_potential(&ms, 1.3, &g);
        for i in 0..g.len() {
            let m = f.matrix(i);
            // traceless
            assert!((m[0][0] + m[1][1]).norm() < 1e-15);
            // sigma_1 conj(V) sigma_1 = -V
            let flipped = [[m[1][1].conj(), m[1][0].conj()], [m[0][1].conj(), m[0][0].conj()]];
            for r in 0..2 {
                for c in 0..2 {
                    assert!((flipped[r][c] + m[r][c]).norm() < 1e-14);
                }
            }
        }
        let mut no_w = ms;
        no_w.w_profile.amplitude = 0.0;
        let f = sample_matrix_potential(&no_w, 0.4, &g);
        assert!(f.coupling.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn matrix_validation() {
        let mut ms = matrix_spec();
        assert!(ms.validate().is_ok());
        ms.alpha = 0.0;
        assert!(ms.validate().is_err());
        assert!(PotentialSpec::new(ProfileFamily::Gaussian, 1.0, 0.0, [0.0; 3]).is_err());
    }
}
