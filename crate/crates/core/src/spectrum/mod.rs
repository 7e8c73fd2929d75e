//! Bound states of the stationary scalar operators and structural diagnostics
//! of the non-selfadjoint matrix operators.

mod matrix;

pub(crate) use matrix::linear_fit;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid_param, Error, Result};
use crate::gridfield::{FftWorkspace, Grid, ScalarField, Vec3};
use crate::potentials::PotentialSpec;
use crate::propagator::{dense_scalar_hamiltonian, OracleKinetic};

pub use matrix::{
    admissibility_report, admissibility_report_from, generalized_eigenspace, linear_growth_probe, matrix_operator, matrix_spectrum,
    matrix_spectrum_with, norm_growth, stability_probe, stability_probe_with, AdmissibilityReport,
    ConditionVerdict, DiscreteEigenvalue, GeneralizedEigenspace, MatrixSpectralData, StabilityProbe,
    Verdict, MATRIX_DENSE_LIMIT,
};

/// Eigenpairs of `-1/2 Delta + V` below zero, ascending.
#[derive(Clone, Debug)]
pub struct BoundStateSet {
    pub eigenvalues: Vec<f64>,
    /// L2-normalized on the grid.
    pub eigenfunctions: Vec<ScalarField>,
    pub residuals: Vec<f64>,
    /// Negative eigenvalues discarded because their eigenfunction is spread over
    /// the box (finite-box shifts of the continuum edge, not bound states).
    pub box_states: Vec<f64>,
}

impl BoundStateSet {
    pub fn empty() -> Self {
        Self {
            eigenvalues: Vec::new(),
            eigenfunctions: Vec::new(),
            residuals: Vec::new(),
            box_states: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `max |<u_i, u_j> - delta_ij|`.
    pub fn gram_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, a) in self.eigenfunctions.iter().enumerate() {
            for (j, b) in self.eigenfunctions.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((a.inner(b) - target).norm());
            }
        }
        worst
    }

    /// Recomputes `||(H - lambda) u||_2` for every pair.
    pub fn check_residuals(&self, potential: &[f64]) -> Vec<f64> {
        let Some(first) = self.eigenfunctions.first() else {
            return Vec::new();
        };
        let mut op = ScalarOperator::new(first.grid(), potential.to_vec());
        self.eigenfunctions
            .iter()
            .zip(&self.eigenvalues)
            .map(|(u, l)| op.residual(u.values(), *l) * first.grid().cell_volume().sqrt())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EigensolverConfig {
    /// Lanczos steps per restart.
    pub krylov_dim: usize,
    pub max_restarts: usize,
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
    pub seed: u64,
}

impl Default for EigensolverConfig {
    fn default() -> Self {
        Self {
            krylov_dim: 40,
            max_restarts: 24,
            cg_tolerance: 1e-14,
            cg_max_iterations: 2000,
            seed: 0x5eed,
        }
    }
}

/// `H = -1/2 Delta + V` applied through the FFT.
struct ScalarOperator {
    grid: Grid,
    v: Vec<f64>,
    ws: FftWorkspace,
    buf: Vec<Complex64>,
}

impl ScalarOperator {
    fn new(grid: &Grid, v: Vec<f64>) -> Self {
        Self {
            grid: grid.clone(),
            v,
            ws: grid.workspace(),
            buf: vec![Complex64::default(); grid.len()],
        }
    }

    fn apply(&mut self, x: &[Complex64], out: &mut [Complex64]) {
        self.buf.copy_from_slice(x);
        self.grid.fft_forward(&mut self.buf, &mut self.ws);
        for (z, k2) in self.buf.iter_mut().zip(self.grid.k_squared()) {
            *z *= 0.5 * k2;
        }
        self.grid.fft_inverse(&mut self.buf, &mut self.ws);
        for i in 0..x.len() {
            out[i] = self.buf[i] + self.v[i] * x[i];
        }
    }

    /// Euclidean `||H x - lambda x||` for a vector of unit L2 norm on the grid.
    fn residual(&mut self, x: &[Complex64], lambda: f64) -> f64 {
        let mut hx = vec![Complex64::default(); x.len()];
        self.apply(x, &mut hx);
        hx.iter().zip(x).map(|(a, b)| (a - b * lambda).norm_sqr()).sum::<f64>().sqrt()
    }

    /// `(|k|^2/2 + c)^{-1}` in Fourier space.
    fn precondition(&mut self, r: &[Complex64], out: &mut [Complex64], c: f64) {
        out.copy_from_slice(r);
        self.grid.fft_forward(out, &mut self.ws);
        for (z, k2) in out.iter_mut().zip(self.grid.k_squared()) {
            *z /= 0.5 * k2 + c;
        }
        self.grid.fft_inverse(out, &mut self.ws);
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn axpy(y: &mut [Complex64], a: Complex64, x: &[Complex64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

/// Preconditioned conjugate gradients for `(H - sigma) x = b`, `H - sigma` positive definite.
fn pcg(op: &mut ScalarOperator, sigma: f64, b: &[Complex64], cfg: &EigensolverConfig) -> Result<Vec<Complex64>> {
    let n = b.len();
    let shift = op.v.iter().cloned().fold(f64::INFINITY, f64::min) - sigma;
    let bnorm = norm(b);
    let mut x = vec![Complex64::default(); n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z = vec![Complex64::default(); n];
    op.precondition(&r, &mut z, shift.max(1e-3));
    let mut p = z.clone();
    let mut rz = dot(&r, &z).re;
    let mut ap = vec![Complex64::default(); n];
    for it in 0..cfg.cg_max_iterations {
        op.apply(&p, &mut ap);
        axpy(&mut ap, Complex64::new(-sigma, 0.0), &p);
        let alpha = rz / dot(&p, &ap).re;
        axpy(&mut x, Complex64::new(alpha, 0.0), &p);
        axpy(&mut r, Complex64::new(-alpha, 0.0), &ap);
        let rn = norm(&r);
        if rn <= cfg.cg_tolerance * bnorm {
            return Ok(x);
        }
        op.precondition(&r, &mut z, shift.max(1e-3));
        let rz_new = dot(&r, &z).re;
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + *pi * beta;
        }
        if it + 1 == cfg.cg_max_iterations {
            return Err(Error::SolverFailure {
                iterations: cfg.cg_max_iterations,
                residuals: vec![rn / bnorm],
            });
        }
    }
    Err(Error::SolverFailure {
        iterations: cfg.cg_max_iterations,
        residuals: Vec::new(),
    })
}

fn orthogonalize(w: &mut [Complex64], basis: &[Vec<Complex64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, w);
            axpy(w, -c, q);
        }
    }
}

/// Fraction of `|u|^2` farther than `L/2` (along some axis) from `center`.
fn far_mass(u: &[Complex64], grid: &Grid, center: &Vec3) -> f64 {
    let half = 0.5 * grid.half_length();
    let mut far = 0.0;
    let mut total = 0.0;
    for (i, z) in u.iter().enumerate() {
        let d = grid.min_image(&grid.coords(i), center);
        let m = z.norm_sqr();
        total += m;
        if d.iter().take(grid.dim()).any(|c| c.abs() > half) {
            far += m;
        }
    }
    if total > 0.0 {
        far / total
    } else {
        0.0
    }
}

/// Bound states of `-1/2 Delta + V` for a single profile centered at `spec.center`.
pub fn bound_states(spec: &PotentialSpec, g: &Grid, k_max: usize, tol: f64) -> Result<BoundStateSet> {
    spec.validate()?;
    if spec.amplitude >= 0.0 || k_max == 0 {
        // -1/2 Delta + V >= 0
        return Ok(BoundStateSet::empty());
    }
    if spec.width < 4.0 * g.spacing() {
        return Err(invalid_param(format!(
            "grid spacing {} does not resolve potential width {} (need width >= 4 h)",
            g.spacing(),
            spec.width
        )));
    }
    bound_states_of(&spec.sample(g), &spec.center, g, k_max, tol, &EigensolverConfig::default())
}

/// Eigenpairs of `-1/2 Delta + V` below `-tol` for sampled potential values `v`,
/// via shift-invert Lanczos with locking and restarts.
pub fn bound_states_of(
    v: &[f64],
    center: &Vec3,
    g: &Grid,
    k_max: usize,
    tol: f64,
    cfg: &EigensolverConfig,
) -> Result<BoundStateSet> {
    if v.len() != g.len() {
        return Err(Error::GridMismatch);
    }
    if !(tol > 0.0) {
        return Err(invalid_param("eigensolver tolerance must be positive"));
    }
    let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut set = BoundStateSet::empty();
    if vmin >= 0.0 || k_max == 0 {
        // -1/2 Delta + V >= 0
        return Ok(set);
    }
    let sigma = vmin - 0.25 * vmin.abs().max(1.0);
    let n = g.len();
    let sqrt_cell = g.cell_volume().sqrt();
    let mut op = ScalarOperator::new(g, v.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut locked: Vec<Vec<Complex64>> = Vec::new();
    let mut locked_vals: Vec<f64> = Vec::new();
    let mut best_residuals = Vec::new();

    for _restart in 0..cfg.max_restarts {
        let mut q: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.random::<f64>() - 0.5, 0.0)).collect();
        orthogonalize(&mut q, &locked);
        let qn = norm(&q);
        q.iter_mut().for_each(|z| *z /= qn);
        let mut basis = vec![q];
        let mut alphas = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut ritz: Option<(Vec<f64>, DMatrix<f64>)> = None;
        for j in 0..cfg.krylov_dim {
            let mut w = pcg(&mut op, sigma, &basis[j], cfg)?;
            let a = dot(&basis[j], &w).re;
            orthogonalize(&mut w, &locked);
            orthogonalize(&mut w, &basis);
            let b = norm(&w);
            alphas.push(a);
            let m = alphas.len();
            let done = b < 1e-12 * a.abs().max(1e-300) || m == cfg.krylov_dim || n == m + locked.len();
            if done || (m >= 4 && m % 4 == 0) {
                let t = DMatrix::from_fn(m, m, |r, c| {
                    if r == c {
                        alphas[r]
                    } else if r + 1 == c || c + 1 == r {
                        betas[r.min(c)]
                    } else {
                        0.0
                    }
                });
                let eig = SymmetricEigen::new(t);
                let top = (0..m).max_by(|x, y| eig.eigenvalues[*x].total_cmp(&eig.eigenvalues[*y])).unwrap();
                let theta = eig.eigenvalues[top];
                let est = b * eig.eigenvectors[(m - 1, top)].abs();
                ritz = Some((eig.eigenvalues.as_slice().to_vec(), eig.eigenvectors));
                if done || est < 1e-11 * theta.abs() {
                    break;
                }
            }
            betas.push(b);
            basis.push(w.into_iter().map(|z| z / b).collect());
        }
        let (thetas, vecs) = ritz.expect("at least one Ritz evaluation");
        let m = thetas.len();
        let mut order: Vec<usize> = (0..m).filter(|i| thetas[*i] > 0.0).collect();
        order.sort_by(|a, b| thetas[*b].total_cmp(&thetas[*a]));

        let mut new_found = 0;
        let mut exhausted = false;
        for (rank, &i) in order.iter().enumerate() {
            let mut u = vec![Complex64::default(); n];
            for (k, qk) in basis.iter().take(m).enumerate() {
                axpy(&mut u, Complex64::new(vecs[(k, i)], 0.0), qk);
            }
            orthogonalize(&mut u, &locked);
            let un = norm(&u);
            u.iter_mut().for_each(|z| *z /= un);
            let mut hu = vec![Complex64::default(); n];
            op.apply(&u, &mut hu);
            let lambda = dot(&u, &hu).re;
            let res = op.residual(&u, lambda) * sqrt_cell / (norm(&u) * sqrt_cell);
            if rank == 0 {
                best_residuals = vec![res];
            }
            if res > tol {
                // the remaining Ritz pairs are less converged
                break;
            }
            if lambda >= -tol {
                exhausted = true;
                break;
            }
            if far_mass(&u, g, center) > 0.01 {
                set.box_states.push(lambda);
                exhausted = true;
                break;
            }
            locked.push(u);
            locked_vals.push(lambda);
            new_found += 1;
            if locked.len() >= k_max {
                exhausted = true;
                break;
            }
        }
        if exhausted {
            return Ok(finish(&mut op, locked, g, tol, set, center));
        }
        if new_found == 0 && best_residuals.first().is_some_and(|r| *r > tol) && _restart + 1 == cfg.max_restarts {
            break;
        }
    }
    if locked.is_empty() {
        Err(Error::SolverFailure {
            iterations: cfg.max_restarts * cfg.krylov_dim,
            residuals: best_residuals,
        })
    } else {
        let _ = locked_vals;
        Ok(finish(&mut op, locked, g, tol, set, center))
    }
}

/// Rayleigh-Ritz on the locked vectors, then L2 normalization on the grid.
fn finish(
    op: &mut ScalarOperator,
    locked: Vec<Vec<Complex64>>,
    g: &Grid,
    _tol: f64,
    mut set: BoundStateSet,
    _center: &Vec3,
) -> BoundStateSet {
    let k = locked.len();
    if k == 0 {
        return set;
    }
    let n = g.len();
    let hq: Vec<Vec<Complex64>> = locked
        .iter()
        .map(|q| {
            let mut out = vec![Complex64::default(); n];
            op.apply(q, &mut out);
            out
        })
        .collect();
    let s = DMatrix::from_fn(k, k, |i, j| 0.5 * (dot(&locked[i], &hq[j]).re + dot(&locked[j], &hq[i]).re));
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    let scale = 1.0 / g.cell_volume().sqrt();
    for i in order {
        let mut u = vec![Complex64::default(); n];
        for (j, q) in locked.iter().enumerate() {
            axpy(&mut u, Complex64::new(eig.eigenvectors[(j, i)], 0.0), q);
        }
        let un = norm(&u);
        u.iter_mut().for_each(|z| *z *= scale / un);
        // fix the sign so the largest entry is positive
        let peak = u.iter().cloned().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap();
        let phase = peak.conj() / peak.norm();
        u.iter_mut().for_each(|z| *z *= phase);
        let lambda = eig.eigenvalues[i];
        let res = op.residual(&u, lambda) * g.cell_volume().sqrt();
        set.eigenvalues.push(lambda);
        set.residuals.push(res);
        set.eigenfunctions.push(ScalarField::new(g.clone(), u).expect("finite eigenvector"));
    }
    set
}

/// Negative eigenvalues of the dense spectral Hamiltonian, ascending (oracle).
pub fn dense_bound_state_energies(v: &[f64], g: &Grid) -> Result<Vec<f64>> {
    let h = dense_scalar_hamiltonian(g, v, OracleKinetic::Spectral)?;
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().cloned().filter(|x| *x < 0.0).collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}
