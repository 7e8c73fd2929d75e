//! Dense diagnostics of the stationary matrix operator
//! `A = [[-1/2 Delta + alpha^2/2 + U, -W], [W, 1/2 Delta - alpha^2/2 - U]]`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::gridfield::{Grid, SpinorField, Vec3};
use crate::potentials::MatrixPotentialSpec;
use crate::propagator::{dense_matrix_hamiltonian, stationary_field, OracleKinetic};

/// Largest grid (points, per component) accepted by the dense matrix diagnostics.
pub const MATRIX_DENSE_LIMIT: usize = 2048;

const NULL_THRESHOLD: f64 = 1e-8;
const CLUSTER_RADIUS: f64 = 1e-4;
const REALNESS_TOLERANCE: f64 = 1e-8;
const FAR_MASS_LIMIT: f64 = 1e-2;
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Numerical null space of `(A - omega)^order`.
#[derive(Clone, Debug)]
pub struct GeneralizedEigenspace {
    /// Orthonormal columns (Euclidean) spanning the right null space.
    pub basis: DMatrix<Complex64>,
    /// Orthonormal columns spanning the null space of the adjoint power.
    pub adjoint_basis: DMatrix<Complex64>,
    pub dimension: usize,
    /// Singular values of `(A - omega)^order`, ascending.
    pub singular_values: Vec<f64>,
    pub threshold: f64,
    pub warning: Option<String>,
}

impl GeneralizedEigenspace {
    pub fn ambiguous(&self) -> bool {
        self.warning.is_some()
    }
}

fn shifted_power(a: &DMatrix<Complex64>, omega: Complex64, order: usize) -> DMatrix<Complex64> {
    let n = a.nrows();
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] -= omega;
    }
    let mut p = shifted.clone();
    for _ in 1..order {
        p = &p * &shifted;
    }
    p
}

/// Null space of `(A - omega)^order` by singular-value thresholding at
/// `1e-8` times the largest singular value.
pub fn generalized_eigenspace(a: &DMatrix<Complex64>, omega: Complex64, order: usize) -> Result<GeneralizedEigenspace> {
    if !(1..=3).contains(&order) {
        return Err(invalid_param(format!("generalized eigenspace order must be 1, 2 or 3, got {order}")));
    }
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(invalid_input("generalized eigenspace needs a nonempty square matrix"));
    }
    let n = a.nrows();
    let real = omega.im == 0.0 && a.iter().all(|z| z.im == 0.0);
    let (sv, basis_of, adjoint_of): (Vec<f64>, DMatrix<Complex64>, DMatrix<Complex64>) = if real {
        // real arithmetic is several times faster and loses nothing here
        let p = shifted_power(a, omega, order).map(|z| z.re);
        let svd = p.svd(true, true);
        let v = svd.v_t.expect("requested V^T").transpose().map(|x| Complex64::new(x, 0.0));
        let u = svd.u.expect("requested U").map(|x| Complex64::new(x, 0.0));
        (svd.singular_values.as_slice().to_vec(), v, u)
    } else {
        let p = shifted_power(a, omega, order);
        let svd = p.svd(true, true);
        let v = svd.v_t.expect("requested V^*").adjoint();
        (svd.singular_values.as_slice().to_vec(), v, svd.u.expect("requested U"))
    };
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let threshold = NULL_THRESHOLD * smax;
    let mut order_idx: Vec<usize> = (0..sv.len()).collect();
    order_idx.sort_by(|x, y| sv[*x].total_cmp(&sv[*y]));
    let null: Vec<usize> = order_idx.iter().cloned().filter(|i| sv[*i] <= threshold).collect();
    let basis = DMatrix::from_fn(n, null.len(), |r, c| basis_of[(r, null[c])]);
    let adjoint_basis = DMatrix::from_fn(n, null.len(), |r, c| adjoint_of[(r, null[c])]);
    let near: Vec<f64> = sv
        .iter()
        .cloned()
        .filter(|s| *s > 0.1 * threshold && *s < 10.0 * threshold)
        .collect();
    let warning = (!near.is_empty()).then(|| {
        format!(
            "{} singular value(s) within a decade of the null threshold {threshold:.3e}: {near:?}",
            near.len()
        )
    });
    Ok(GeneralizedEigenspace {
        basis,
        adjoint_basis,
        dimension: null.len(),
        singular_values: order_idx.iter().map(|i| sv[*i]).collect(),
        threshold,
        warning,
    })
}

/// One discrete eigenvalue in the gap with its generalized eigenspaces.
#[derive(Clone, Debug, Serialize)]
pub struct DiscreteEigenvalue {
    /// Mean of the eigenvalue cluster (numerically split Jordan blocks appear as clusters).
    pub value: Complex64,
    pub cluster_size: usize,
    /// `dim ker (A - omega)^k` for `k = 1, 2, 3`.
    pub kernel_dimensions: [usize; 3],
    pub jordan_order: usize,
    pub ambiguous: bool,
}

#[derive(Clone, Debug)]
pub struct MatrixSpectralData {
    pub grid: Grid,
    /// `A` on the grid, acting on stacked coefficient vectors `(upper, lower)`.
    pub operator: DMatrix<Complex64>,
    pub center: Vec3,
    pub mu: f64,
    /// Discrete eigenvalues in `(-mu, mu)`.
    pub eigenvalues: Vec<Complex64>,
    pub discrete: Vec<DiscreteEigenvalue>,
    /// Per eigenvalue, Euclidean-orthonormal columns spanning `L_l`.
    pub right_generalized_vectors: Vec<DMatrix<Complex64>>,
    /// Per eigenvalue, columns spanning `L*_l`, scaled so that `left^* right = I`.
    pub left_generalized_vectors: Vec<DMatrix<Complex64>>,
    pub jordan_orders: Vec<usize>,
    /// Full spectrum of the discretized operator.
    pub all_eigenvalues: Vec<Complex64>,
    /// Gap eigenvalues discarded because their eigenvectors spread over the box.
    pub box_states: Vec<Complex64>,
    /// Largest distance from an eigenvalue to the mirror set `-conj(spec)`, relative to `max(1, |lambda|)`.
    pub symmetry_defect: f64,
    /// `max |(left^* right - I)_ij|` over the whole discrete part.
    pub biorthogonality_defect: f64,
    pub warnings: Vec<String>,
}

impl MatrixSpectralData {
    /// Dimension of `sum_l L_l`.
    pub fn discrete_dimension(&self) -> usize {
        self.right_generalized_vectors.iter().map(|m| m.ncols()).sum()
    }

    fn stacked(&self) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
        let n = self.operator.nrows();
        let d = self.discrete_dimension();
        let mut phi = DMatrix::from_element(n, d, ZERO);
        let mut psi = DMatrix::from_element(n, d, ZERO);
        let mut col = 0;
        for (r, l) in self.right_generalized_vectors.iter().zip(&self.left_generalized_vectors) {
            for j in 0..r.ncols() {
                phi.set_column(col, &r.column(j));
                psi.set_column(col, &l.column(j));
                col += 1;
            }
        }
        (phi, psi)
    }

    /// Dense `P_b = sum_l Phi_l Psi_l^*`.
    pub fn bound_projector(&self) -> DMatrix<Complex64> {
        let (phi, psi) = self.stacked();
        &phi * psi.adjoint()
    }

    /// Dense `P_c = I - P_b`.
    pub fn continuous_projector(&self) -> DMatrix<Complex64> {
        let n = self.operator.nrows();
        DMatrix::identity(n, n) - self.bound_projector()
    }

    /// `P_c f` for a spinor on the diagnostics grid.
    pub fn project_continuous(&self, f: &SpinorField) -> Result<SpinorField> {
        self.grid.check_same(f.grid())?;
        let x = DVector::from_vec(f.to_vec());
        let (phi, psi) = self.stacked();
        let y = &x - &phi * (psi.adjoint() * &x);
        SpinorField::from_vec(&self.grid, y.as_slice())
    }
}

/// Dense stationary-frame operator of `ms` on `g`.
pub fn matrix_operator(ms: &MatrixPotentialSpec, g: &Grid) -> Result<DMatrix<Complex64>> {
    ms.validate()?;
    if g.len() > MATRIX_DENSE_LIMIT {
        return Err(Error::GridTooLarge {
            points: g.len(),
            limit: MATRIX_DENSE_LIMIT,
        });
    }
    dense_matrix_hamiltonian(g, &stationary_field(ms, g), OracleKinetic::Spectral)
}

pub fn matrix_spectrum(ms: &MatrixPotentialSpec, g: &Grid) -> Result<MatrixSpectralData> {
    let a = matrix_operator(ms, g)?;
    matrix_spectrum_with(a, ms.gap_edge(), ms.center(0.0), g)
}

/// Spectral data of a dense operator acting on stacked spinors over `g`,
/// with gap edge `mu` and localization center `center`.
pub fn matrix_spectrum_with(a: DMatrix<Complex64>, mu: f64, center: Vec3, g: &Grid) -> Result<MatrixSpectralData> {
    if a.nrows() != 2 * g.len() || a.ncols() != a.nrows() {
        return Err(Error::GridMismatch);
    }
    let all = all_eigenvalues(&a);
    let symmetry_defect = mirror_defect(&all);
    let mut warnings = Vec::new();

    let mut gap: Vec<Complex64> = all.iter().cloned().filter(|w| w.re.abs() < mu).collect();
    gap.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    let mut clusters: Vec<Vec<Complex64>> = Vec::new();
    for w in gap {
        match clusters.iter_mut().find(|c| c.iter().any(|z| (z - w).norm() < CLUSTER_RADIUS)) {
            Some(c) => c.push(w),
            None => clusters.push(vec![w]),
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut data = MatrixSpectralData {
        grid: g.clone(),
        operator: a,
        center,
        mu,
        eigenvalues: Vec::new(),
        discrete: Vec::new(),
        right_generalized_vectors: Vec::new(),
        left_generalized_vectors: Vec::new(),
        jordan_orders: Vec::new(),
        all_eigenvalues: all,
        box_states: Vec::new(),
        symmetry_defect,
        biorthogonality_defect: 0.0,
        warnings: Vec::new(),
    };

    for cluster in clusters {
        let mut omega = cluster.iter().sum::<Complex64>() / cluster.len() as f64;
        if cluster.iter().all(|z| z.im.abs() < CLUSTER_RADIUS) {
            // conjugate pairs of a real operator: the mean is real up to roundoff
            omega.im = 0.0;
        }
        let probe = inverse_iteration(&data.operator, omega, &mut rng)?;
        if far_mass(probe.as_slice(), g, &center) > FAR_MASS_LIMIT {
            data.box_states.push(omega);
            continue;
        }
        let mut spaces = Vec::with_capacity(3);
        for k in 1..=3 {
            spaces.push(generalized_eigenspace(&data.operator, omega, k)?);
        }
        let dims = [spaces[0].dimension, spaces[1].dimension, spaces[2].dimension];
        let jordan_order = if dims[0] == dims[1] {
            1
        } else if dims[1] == dims[2] {
            2
        } else {
            3
        };
        let space = &spaces[jordan_order - 1];
        if space.dimension == 0 {
            warnings.push(format!("eigenvalue {omega:.6e} has no numerical null space at threshold"));
            continue;
        }
        let ambiguous = spaces.iter().any(|s| s.ambiguous());
        if ambiguous {
            for s in &spaces {
                if let Some(w) = &s.warning {
                    warnings.push(format!("eigenvalue {omega:.6e}: {w}"));
                }
            }
        }
        if dims[jordan_order - 1] != cluster.len() {
            warnings.push(format!(
                "eigenvalue {omega:.6e}: cluster of {} eigenvalues but generalized kernel of dimension {}",
                cluster.len(),
                dims[jordan_order - 1]
            ));
        }
        let spread = (0..space.basis.ncols())
            .map(|j| far_mass(space.basis.column(j).as_slice(), g, &center))
            .fold(0.0, f64::max);
        if spread > FAR_MASS_LIMIT {
            data.box_states.push(omega);
            continue;
        }
        let phi = space.basis.clone();
        let psi = space.adjoint_basis.clone();
        let gram = psi.adjoint() * &phi;
        let Some(inv) = gram.try_inverse() else {
            warnings.push(format!("eigenvalue {omega:.6e}: singular left/right Gram matrix"));
            continue;
        };
        let psi = psi * inv.adjoint();
        data.eigenvalues.push(omega);
        data.discrete.push(DiscreteEigenvalue {
            value: omega,
            cluster_size: cluster.len(),
            kernel_dimensions: dims,
            jordan_order,
            ambiguous,
        });
        data.jordan_orders.push(jordan_order);
        data.right_generalized_vectors.push(phi);
        data.left_generalized_vectors.push(psi);
    }

    let (phi, psi) = data.stacked();
    let gram = psi.adjoint() * phi;
    data.biorthogonality_defect = (0..gram.nrows())
        .flat_map(|i| (0..gram.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| (gram[(i, j)] - if i == j { 1.0 } else { 0.0 }).norm())
        .fold(0.0, f64::max);
    data.warnings = warnings;
    Ok(data)
}

fn all_eigenvalues(a: &DMatrix<Complex64>) -> Vec<Complex64> {
    if a.iter().all(|z| z.im == 0.0) {
        let re = a.map(|z| z.re);
        re.complex_eigenvalues().iter().cloned().collect()
    } else {
        let schur = a.clone().schur();
        let t = schur.unpack().1;
        (0..t.nrows()).map(|i| t[(i, i)]).collect()
    }
}

fn mirror_defect(spec: &[Complex64]) -> f64 {
    spec.iter()
        .map(|l| {
            let target = -l.conj();
            let d = spec.iter().map(|m| (m - target).norm()).fold(f64::INFINITY, f64::min);
            d / l.norm().max(1.0)
        })
        .fold(0.0, f64::max)
}

/// Spinor density `|x_i|^2 + |x_{N+i}|^2` per grid point.
fn density(x: &[Complex64], n: usize) -> Vec<f64> {
    (0..n).map(|i| x[i].norm_sqr() + x[n + i].norm_sqr()).collect()
}

/// Fraction of the spinor mass farther than `L/2` (along some axis) from `center`.
fn far_mass(x: &[Complex64], g: &Grid, center: &Vec3) -> f64 {
    let rho = density(x, g.len());
    let half = 0.5 * g.half_length();
    let total: f64 = rho.iter().sum();
    let far: f64 = rho
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let d = g.min_image(&g.coords(*i), center);
            d.iter().take(g.dim()).any(|c| c.abs() > half)
        })
        .map(|(_, r)| r)
        .sum();
    if total > 0.0 {
        far / total
    } else {
        0.0
    }
}

/// Exponential decay rate of the spinor amplitude: slope of `-log |x|` against
/// the distance from `center`, fitted on the per-shell maxima above the roundoff floor.
fn decay_rate(x: &[Complex64], g: &Grid, center: &Vec3) -> Option<f64> {
    let rho = density(x, g.len());
    let peak = rho.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return None;
    }
    let shells = g.points_per_axis() / 2;
    let dr = g.half_length() / shells as f64;
    let mut best = vec![0.0f64; shells + 1];
    for (i, r) in rho.iter().enumerate() {
        let d = g.min_image(&g.coords(i), center);
        let dist = d.iter().map(|c| c * c).sum::<f64>().sqrt();
        let s = ((dist / dr) as usize).min(shells);
        best[s] = best[s].max(*r);
    }
    let floor = 1e-24 * peak;
    let (xs, ys): (Vec<f64>, Vec<f64>) = best
        .iter()
        .enumerate()
        .filter(|(s, r)| **r > floor && *s > 0 && *s < shells)
        .map(|(s, r)| (s as f64 * dr, 0.5 * r.ln()))
        .unzip();
    // tail: points beyond the half-maximum shell
    let start = ys.iter().position(|y| *y < 0.5 * peak.ln() - 1.0).unwrap_or(ys.len());
    let (xs, ys) = (&xs[start..], &ys[start..]);
    if xs.len() < 3 {
        // decays below roundoff within a few shells
        return Some(f64::INFINITY);
    }
    let (slope, _) = linear_fit(xs, ys);
    Some(-slope)
}

pub(crate) fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Unchecked,
    Vacuous,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionVerdict {
    pub condition: String,
    pub check: String,
    pub verdict: Verdict,
    pub detail: String,
}

impl ConditionVerdict {
    fn new(condition: &str, check: &str, verdict: Verdict, detail: String) -> Self {
        Self {
            condition: condition.into(),
            check: check.into(),
            verdict,
            detail,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AdmissibilityReport {
    pub mu: f64,
    pub discrete: Vec<DiscreteEigenvalue>,
    pub symmetry_defect: f64,
    pub biorthogonality_defect: f64,
    pub conditions: Vec<ConditionVerdict>,
    pub warnings: Vec<String>,
}

impl AdmissibilityReport {
    pub fn verdict(&self, condition: &str, check: &str) -> Option<Verdict> {
        self.conditions
            .iter()
            .find(|c| c.condition == condition && c.check == check)
            .map(|c| c.verdict)
    }

    /// No checked condition failed.
    pub fn admissible(&self) -> bool {
        self.conditions.iter().all(|c| c.verdict != Verdict::Fail)
    }
}

pub fn admissibility_report(ms: &MatrixPotentialSpec, g: &Grid) -> Result<AdmissibilityReport> {
    let data = matrix_spectrum(ms, g)?;
    Ok(admissibility_report_from(&data))
}

/// Admissibility verdicts from already computed spectral data.
pub fn admissibility_report_from(data: &MatrixSpectralData) -> AdmissibilityReport {
    let mut conditions = Vec::new();
    let mu = data.mu;

    let max_im = data.eigenvalues.iter().map(|w| w.im.abs()).fold(0.0, f64::max);
    let complex_outside = data
        .all_eigenvalues
        .iter()
        .filter(|w| w.re.abs() >= mu && w.im.abs() > CLUSTER_RADIUS)
        .count();
    let real_ok = max_im <= REALNESS_TOLERANCE && complex_outside == 0;
    conditions.push(ConditionVerdict::new(
        "I",
        "real_spectrum",
        if real_ok { Verdict::Pass } else { Verdict::Fail },
        format!(
            "max |Im| over gap eigenvalues {max_im:.3e} (tolerance {REALNESS_TOLERANCE:.0e}); {complex_outside} non-real eigenvalue(s) beyond the gap"
        ),
    ));

    let localized_beyond = embedded_localized(data);
    conditions.push(ConditionVerdict::new(
        "I",
        "no_embedded_eigenvalues",
        match &localized_beyond {
            Ok(hits) if hits.is_empty() => Verdict::Pass,
            Ok(_) => Verdict::Fail,
            Err(_) => Verdict::Unchecked,
        },
        match &localized_beyond {
            Ok(hits) if hits.is_empty() => {
                "surrogate: eigenvectors nearest to the thresholds beyond +-mu are not localized".into()
            }
            Ok(hits) => format!("surrogate: localized eigenvectors beyond +-mu at {hits:?}"),
            Err(e) => format!("surrogate not evaluated: {e}"),
        },
    ));
    conditions.push(ConditionVerdict::new(
        "I",
        "thresholds_not_resonances",
        Verdict::Unchecked,
        "resonances at +-mu are not detected numerically".into(),
    ));

    let zero = data.discrete.iter().find(|d| d.value.norm() < CLUSTER_RADIUS);
    let (verdict, detail) = match zero {
        None => (Verdict::Vacuous, "0 is not an eigenvalue of the discretization".to_string()),
        Some(d) => {
            let [k1, k2, k3] = d.kernel_dimensions;
            let ok = k1 < k2 && k2 == k3;
            (
                if ok { Verdict::Pass } else { Verdict::Fail },
                format!("dim ker A = {k1}, dim ker A^2 = {k2}, dim ker A^3 = {k3}"),
            )
        }
    };
    conditions.push(ConditionVerdict::new("II", "jordan_structure_at_zero", verdict, detail));

    let nonzero: Vec<&DiscreteEigenvalue> = data.discrete.iter().filter(|d| d.value.norm() >= CLUSTER_RADIUS).collect();
    let bad: Vec<String> = nonzero
        .iter()
        .filter(|d| d.kernel_dimensions[0] != d.kernel_dimensions[1])
        .map(|d| format!("{:.6e}: {:?}", d.value, d.kernel_dimensions))
        .collect();
    conditions.push(ConditionVerdict::new(
        "II",
        "semisimple_nonzero_eigenvalues",
        if nonzero.is_empty() {
            Verdict::Vacuous
        } else if bad.is_empty() {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        if bad.is_empty() {
            format!("{} nonzero gap eigenvalue(s) with ker (A-w)^2 = ker (A-w)", nonzero.len())
        } else {
            format!("Jordan blocks at {}", bad.join(", "))
        },
    ));
    conditions.push(ConditionVerdict::new(
        "III",
        "closed_ranges",
        Verdict::Vacuous,
        "ranges of a finite-dimensional discretization are closed".into(),
    ));

    for (cond, check, vectors) in [
        ("IV", "right_localization", &data.right_generalized_vectors),
        ("V", "adjoint_localization", &data.left_generalized_vectors),
    ] {
        let (verdict, detail) = localization_verdict(data, vectors);
        conditions.push(ConditionVerdict::new(cond, check, verdict, detail));
    }

    let mut warnings = data.warnings.clone();
    if !data.box_states.is_empty() {
        warnings.push(format!("box-delocalized gap eigenvalues discarded: {:?}", data.box_states));
    }
    AdmissibilityReport {
        mu,
        discrete: data.discrete.clone(),
        symmetry_defect: data.symmetry_defect,
        biorthogonality_defect: data.biorthogonality_defect,
        conditions,
        warnings,
    }
}

fn localization_verdict(data: &MatrixSpectralData, vectors: &[DMatrix<Complex64>]) -> (Verdict, String) {
    if vectors.is_empty() {
        return (Verdict::Vacuous, "no discrete eigenvalues".into());
    }
    let mut min_rate = f64::INFINITY;
    let mut max_far = 0.0f64;
    for m in vectors {
        for j in 0..m.ncols() {
            let x = m.column(j);
            min_rate = min_rate.min(decay_rate(x.as_slice(), &data.grid, &data.center).unwrap_or(0.0));
            max_far = max_far.max(far_mass(x.as_slice(), &data.grid, &data.center));
        }
    }
    let ok = min_rate > 0.0 && max_far < 1e-4;
    (
        if ok { Verdict::Pass } else { Verdict::Fail },
        format!("smallest fitted decay rate {min_rate:.3e}, largest mass fraction beyond L/2 {max_far:.3e}"),
    )
}

/// Eigenvalues beyond `+-mu` (the few nearest each threshold) whose eigenvector,
/// obtained by inverse iteration, is localized.
fn embedded_localized(data: &MatrixSpectralData) -> Result<Vec<Complex64>> {
    const PER_SIDE: usize = 6;
    let mu = data.mu;
    let mut candidates = Vec::new();
    for side in [1.0, -1.0] {
        let mut outside: Vec<Complex64> = data
            .all_eigenvalues
            .iter()
            .cloned()
            .filter(|w| side * w.re >= mu)
            .collect();
        outside.sort_by(|x, y| (x.re.abs() - mu).total_cmp(&(y.re.abs() - mu)));
        candidates.extend(outside.into_iter().take(PER_SIDE));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut hits = Vec::new();
    for w in candidates {
        let x = inverse_iteration(&data.operator, w, &mut rng)?;
        if far_mass(x.as_slice(), &data.grid, &data.center) < FAR_MASS_LIMIT {
            hits.push(w);
        }
    }
    Ok(hits)
}

/// Approximate eigenvector for the eigenvalue `w` by three inverse-iteration sweeps.
fn inverse_iteration(a: &DMatrix<Complex64>, w: Complex64, rng: &mut ChaCha8Rng) -> Result<DVector<Complex64>> {
    let n = a.nrows();
    let shift = w + Complex64::new(1e-10 * w.norm().max(1.0), 0.0);
    let singular = || invalid_input("singular shift in inverse iteration");
    if shift.im == 0.0 && a.iter().all(|z| z.im == 0.0) {
        let mut m = a.map(|z| z.re);
        for i in 0..n {
            m[(i, i)] -= shift.re;
        }
        let lu = m.lu();
        let mut x = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        for _ in 0..3 {
            x = lu.solve(&x).ok_or_else(singular)?;
            x /= x.norm();
        }
        return Ok(x.map(|v| Complex64::new(v, 0.0)));
    }
    let mut m = a.clone();
    for i in 0..n {
        m[(i, i)] -= shift;
    }
    let lu = m.lu();
    let mut x = DVector::from_fn(n, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    for _ in 0..3 {
        x = lu.solve(&x).ok_or_else(singular)?;
        let nx = x.norm();
        x /= Complex64::new(nx, 0.0);
    }
    Ok(x)
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityProbe {
    pub times: Vec<f64>,
    /// Largest `||e^{itA} x||_2 / ||x||_2` over the probes at each time.
    pub norms: Vec<f64>,
    /// Least-squares slope of `norms` against `times`.
    pub slope: f64,
    /// Log-log slope of the norm against `t` on the last decade of the horizon.
    pub loglog_exponent: f64,
    pub probes: usize,
}

/// Norms of `e^{itA} x` for each column `x` of `probes`, stepped by Crank-Nicolson.
pub fn norm_growth(a: &DMatrix<Complex64>, probes: &DMatrix<Complex64>, horizon: f64, dt: f64) -> Result<StabilityProbe> {
    if !(horizon > 0.0 && dt > 0.0 && dt <= horizon) {
        return Err(invalid_param("stability probe needs 0 < dt <= horizon"));
    }
    if probes.nrows() != a.nrows() || probes.ncols() == 0 {
        return Err(Error::GridMismatch);
    }
    let n = a.nrows();
    let steps = (horizon / dt).round() as usize;
    let dt = horizon / steps as f64;
    // e^{itA} solves x' = iAx: (I - i dt A/2) x_{k+1} = (I + i dt A/2) x_k
    let half = Complex64::new(0.0, 0.5 * dt);
    let id = DMatrix::<Complex64>::identity(n, n);
    let implicit = &id - a * half;
    let explicit = &id + a * half;
    let step = implicit
        .lu()
        .solve(&explicit)
        .ok_or_else(|| Error::SolverFailure {
            iterations: 0,
            residuals: Vec::new(),
        })?;
    let initial: Vec<f64> = (0..probes.ncols()).map(|j| probes.column(j).norm()).collect();
    let record_every = ((0.5 / dt).round() as usize).max(1);
    let mut x = probes.clone();
    let mut times = vec![0.0];
    let mut norms = vec![1.0];
    for k in 1..=steps {
        x = &step * &x;
        if k % record_every == 0 || k == steps {
            times.push(k as f64 * dt);
            let worst = (0..x.ncols())
                .map(|j| x.column(j).norm() / initial[j])
                .fold(0.0, f64::max);
            norms.push(worst);
        }
    }
    let (slope, _) = linear_fit(&times, &norms);
    let (lx, ly): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&norms)
        .filter(|(t, _)| **t >= 0.1 * horizon)
        .map(|(t, v)| (t.ln(), v.ln()))
        .unzip();
    let loglog_exponent = if lx.len() >= 2 { linear_fit(&lx, &ly).0 } else { 0.0 };
    Ok(StabilityProbe {
        times,
        norms,
        slope,
        loglog_exponent,
        probes: probes.ncols(),
    })
}

/// Smooth localized random spinors: sums of Gaussian bumps with random lattice momenta.
fn random_probes(g: &Grid, center: &Vec3, count: usize, seed: u64) -> DMatrix<Complex64> {
    let n = g.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dk = g.dual_spacing();
    let mut m = DMatrix::from_element(2 * n, count, ZERO);
    for j in 0..count {
        for comp in 0..2 {
            for _ in 0..3 {
                let mut c = *center;
                let mut k = [0.0; 3];
                for a in 0..g.dim() {
                    c[a] += (rng.random::<f64>() - 0.5) * g.half_length();
                    k[a] = dk * rng.random_range(-4i32..=4) as f64;
                }
                let amp = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                let width = 1.0 + rng.random::<f64>();
                for i in 0..n {
                    let d = g.min_image(&g.coords(i), &c);
                    let r2: f64 = d.iter().map(|x| x * x).sum();
                    let phase: f64 = d.iter().zip(&k).map(|(x, k)| x * k).sum();
                    m[(comp * n + i, j)] += amp * Complex64::from_polar((-r2 / (width * width)).exp(), phase);
                }
            }
        }
    }
    m
}

/// Growth of `e^{itA} P_c x` over `[0, horizon]` for `probes` random localized `x`.
pub fn stability_probe(ms: &MatrixPotentialSpec, g: &Grid, horizon: f64, probes: usize) -> Result<StabilityProbe> {
    let data = matrix_spectrum(ms, g)?;
    stability_probe_with(&data, horizon, probes, 0.05, 0x57ab)
}

pub fn stability_probe_with(data: &MatrixSpectralData, horizon: f64, probes: usize, dt: f64, seed: u64) -> Result<StabilityProbe> {
    if probes == 0 {
        return Err(invalid_param("stability probe needs at least one probe"));
    }
    let raw = random_probes(&data.grid, &data.center, probes, seed);
    let projected = data.continuous_projector() * raw;
    norm_growth(&data.operator, &projected, horizon, dt)
}

/// Growth of `e^{itA} x` for `x` in `ker A^2` orthogonal to `ker A`.
pub fn linear_growth_probe(data: &MatrixSpectralData, horizon: f64, dt: f64) -> Result<StabilityProbe> {
    let k1 = generalized_eigenspace(&data.operator, ZERO, 1)?;
    let k2 = generalized_eigenspace(&data.operator, ZERO, 2)?;
    if k2.dimension <= k1.dimension {
        return Err(invalid_input(format!(
            "no Jordan chain at 0: dim ker A = {}, dim ker A^2 = {}",
            k1.dimension, k2.dimension
        )));
    }
    let q = &k1.basis;
    let residual = &k2.basis - q * (q.adjoint() * &k2.basis);
    let best = (0..residual.ncols())
        .max_by(|x, y| residual.column(*x).norm().total_cmp(&residual.column(*y).norm()))
        .expect("nonempty kernel");
    let x = residual.column(best).into_owned();
    let x = &x / Complex64::new(x.norm(), 0.0);
    norm_growth(&data.operator, &DMatrix::from_columns(&[x]), horizon, dt)
}
