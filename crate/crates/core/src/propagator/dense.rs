//! Densely assembled Hamiltonians and Crank-Nicolson stepping on small grids.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{MatrixHamiltonian, ScalarHamiltonian};
use crate::error::{invalid_param, Error, Result};
use crate::gridfield::{Grid, ScalarField, SpinorField};
use crate::potentials::MatrixPotentialField;

/// Largest dense dimension the oracle accepts.
pub const DENSE_LIMIT: usize = 4096;

/// Discretization of `-1/2 Delta` in the dense operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKinetic {
    /// The Fourier multiplier `|k|^2 / 2`, identical to the split-step kinetic flow.
    #[default]
    Spectral,
    /// Second-order central differences.
    FiniteDifference,
}

fn check_size(dim: usize) -> Result<()> {
    if dim > DENSE_LIMIT {
        Err(Error::GridTooLarge {
            points: dim,
            limit: DENSE_LIMIT,
        })
    } else {
        Ok(())
    }
}

fn kinetic_1d(grid: &Grid, kind: OracleKinetic) -> DMatrix<f64> {
    let n = grid.points_per_axis();
    let h = grid.spacing();
    match kind {
        OracleKinetic::Spectral => {
            // circulant: T[j, l] = c[(j - l) mod n]
            let ks = grid.wavenumbers();
            let c: Vec<f64> = (0..n)
                .map(|m| {
                    ks.iter()
                        .map(|k| 0.5 * k * k * (k * m as f64 * h).cos())
                        .sum::<f64>()
                        / n as f64
                })
                .collect();
            DMatrix::from_fn(n, n, |j, l| c[(j + n - l) % n])
        }
        OracleKinetic::FiniteDifference => {
            let a = 1.0 / (h * h);
            DMatrix::from_fn(n, n, |j, l| {
                let d = (j + n - l) % n;
                if d == 0 {
                    a
                } else if d == 1 || d == n - 1 {
                    -0.5 * a
                } else {
                    0.0
                }
            })
        }
    }
}

/// Dense `-1/2 Delta` on the grid (Kronecker sum of the one-axis operators).
pub fn dense_kinetic(grid: &Grid, kind: OracleKinetic) -> Result<DMatrix<f64>> {
    let len = grid.len();
    check_size(len)?;
    let n = grid.points_per_axis();
    let d = grid.dim();
    let t1 = kinetic_1d(grid, kind);
    let mut out = DMatrix::zeros(len, len);
    for i in 0..len {
        let mi = grid.multi_index(i);
        for a in 0..d {
            let stride = n.pow((d - 1 - a) as u32);
            let base = i - mi[a] * stride;
            for q in 0..n {
                out[(i, base + q * stride)] += t1[(mi[a], q)];
            }
        }
    }
    Ok(out)
}

/// Dense `-1/2 Delta + V` for real potential values `v`.
pub fn dense_scalar_hamiltonian(grid: &Grid, v: &[f64], kind: OracleKinetic) -> Result<DMatrix<f64>> {
    let mut h = dense_kinetic(grid, kind)?;
    for (i, x) in v.iter().enumerate() {
        h[(i, i)] += x;
    }
    Ok(h)
}

/// Dense `diag(-1/2 Delta, 1/2 Delta) + V` acting on `(psi_1, psi_2)` stacked.
pub fn dense_matrix_hamiltonian(grid: &Grid, field: &MatrixPotentialField, kind: OracleKinetic) -> Result<DMatrix<Complex64>> {
    let n = grid.len();
    check_size(2 * n)?;
    let t = dense_kinetic(grid, kind)?;
    let mut h = DMatrix::from_element(2 * n, 2 * n, Complex64::new(0.0, 0.0));
    for j in 0..n {
        for i in 0..n {
            let x = t[(i, j)];
            if x != 0.0 {
                h[(i, j)] = Complex64::new(x, 0.0);
                h[(n + i, n + j)] = Complex64::new(-x, 0.0);
            }
        }
    }
    for i in 0..n {
        let m = field.matrix(i);
        h[(i, i)] += m[0][0];
        h[(i, n + i)] += m[0][1];
        h[(n + i, i)] += m[1][0];
        h[(n + i, n + i)] += m[1][1];
    }
    Ok(h)
}

/// One Crank-Nicolson step `(I + i d H/2)^{-1} (I - i d H/2)` for a fixed dense `H`.
pub struct CrankNicolson {
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    explicit: DMatrix<Complex64>,
}

impl CrankNicolson {
    pub fn new(h: &DMatrix<Complex64>, delta: f64) -> Self {
        let n = h.nrows();
        let half = Complex64::new(0.0, 0.5 * delta);
        let id = DMatrix::<Complex64>::identity(n, n);
        let implicit = &id + h * half;
        let explicit = &id - h * half;
        Self {
            lu: implicit.lu(),
            explicit,
        }
    }

    pub fn step(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        let rhs = &self.explicit * v;
        self.lu.solve(&rhs).expect("Crank-Nicolson matrix is invertible for real spectra")
    }

    /// Applies the step `count` times.
    pub fn run(&self, v: &DVector<Complex64>, count: usize) -> DVector<Complex64> {
        let mut out = v.clone();
        for _ in 0..count {
            out = self.step(&out);
        }
        out
    }
}

fn steps(s: f64, t: f64, dt: f64) -> Vec<(f64, f64)> {
    let span = t - s;
    if span == 0.0 {
        return Vec::new();
    }
    let count = (span.abs() / dt - 1e-9).ceil().max(1.0) as usize;
    let delta = span / count as f64;
    (0..count).map(|k| (s + k as f64 * delta, delta)).collect()
}

/// Crank-Nicolson for a Hamiltonian assembled at each step midpoint.
fn cn_propagate(
    v: DVector<Complex64>,
    s: f64,
    t: f64,
    dt: f64,
    is_static: bool,
    assemble: impl Fn(f64) -> Result<DMatrix<Complex64>>,
) -> Result<DVector<Complex64>> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(invalid_param(format!("oracle dt must be positive, got {dt}")));
    }
    let sched = steps(s, t, dt);
    if sched.is_empty() {
        return Ok(v);
    }
    // uniform steps: s + k delta
    let delta = sched[0].1;
    if is_static {
        let cn = CrankNicolson::new(&assemble(s)?, delta);
        return Ok(cn.run(&v, sched.len()));
    }
    let mut out = v;
    for (start, delta) in sched {
        let cn = CrankNicolson::new(&assemble(start + 0.5 * delta)?, delta);
        out = cn.step(&out);
    }
    Ok(out)
}

/// Crank-Nicolson reference solution with the spectral kinetic operator.
pub fn oracle_propagate(h: &ScalarHamiltonian, psi: &ScalarField, s: f64, t: f64, dt: f64) -> Result<ScalarField> {
    oracle_propagate_with(h, psi, s, t, dt, OracleKinetic::Spectral)
}

pub fn oracle_propagate_with(
    h: &ScalarHamiltonian,
    psi: &ScalarField,
    s: f64,
    t: f64,
    dt: f64,
    kind: OracleKinetic,
) -> Result<ScalarField> {
    let g = psi.grid().clone();
    check_size(g.len())?;
    let kinetic = dense_kinetic(&g, kind)?;
    let v = DVector::from_column_slice(psi.values());
    let out = cn_propagate(v, s, t, dt, h.is_static(), |tm| {
        let pot = h.potential(tm, &g);
        let mut m = kinetic.map(|x| Complex64::new(x, 0.0));
        for (i, x) in pot.iter().enumerate() {
            m[(i, i)] += x;
        }
        Ok(m)
    })?;
    ScalarField::new(g, out.as_slice().to_vec())
}

/// Crank-Nicolson reference for the two-component system (spectral kinetic operator).
pub fn oracle_propagate_matrix(h: &MatrixHamiltonian, psi: &SpinorField, s: f64, t: f64, dt: f64) -> Result<SpinorField> {
    let g = psi.grid().clone();
    check_size(2 * g.len())?;
    let v = DVector::from_vec(psi.to_vec());
    let out = cn_propagate(v, s, t, dt, h.is_static(), |tm| {
        dense_matrix_hamiltonian(&g, &h.field(tm, &g), OracleKinetic::Spectral)
    })?;
    SpinorField::from_vec(&g, out.as_slice())
}
