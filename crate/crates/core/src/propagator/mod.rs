//! Exact free flow, Strang split-step propagation for the scalar and matrix
//! charge transfer Hamiltonians, and a dense Crank-Nicolson oracle.

mod dense;
mod export;
mod stepper;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Result};
use crate::gridfield::{boundary_mass, Grid, MixedNormSeries, ScalarField, SpinorField};
use crate::potentials::{sample_matrix_total, MatrixPotentialField, MatrixPotentialSpec, MovingPotential};

pub use dense::{
    dense_kinetic, dense_matrix_hamiltonian, dense_scalar_hamiltonian, oracle_propagate,
    oracle_propagate_matrix, oracle_propagate_with, CrankNicolson, OracleKinetic, DENSE_LIMIT,
};
pub use export::{export_trace, TraceFormat, TraceManifest};
pub use stepper::matrix_exponential_2x2;

/// `-1/2 Delta + sum_k V_k(x - v_k t - y_k)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarHamiltonian {
    #[serde(default)]
    pub potentials: Vec<MovingPotential>,
}

impl ScalarHamiltonian {
    pub fn free() -> Self {
        Self::default()
    }

    pub fn new(potentials: Vec<MovingPotential>) -> Self {
        Self { potentials }
    }

    pub fn is_static(&self) -> bool {
        self.potentials.iter().all(|p| p.velocity == [0.0; 3])
    }

    /// Potential values at time `t`.
    pub fn potential(&self, t: f64, grid: &Grid) -> Vec<f64> {
        crate::potentials::sample_total(&self.potentials, t, grid)
    }
}

/// Two-component operators with kinetic part `diag(-1/2 Delta, 1/2 Delta)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixHamiltonian {
    /// The time-dependent system with phase-rotating moving matrix potentials.
    Moving { potentials: Vec<MatrixPotentialSpec> },
    /// The stationary operator `H_k` obtained after the Galilei and modulation
    /// reductions: `U + alpha^2/2` on the diagonal and real coupling `W`.
    Stationary { potential: MatrixPotentialSpec },
}

impl MatrixHamiltonian {
    pub fn free() -> Self {
        MatrixHamiltonian::Moving { potentials: Vec::new() }
    }

    pub fn moving(potentials: Vec<MatrixPotentialSpec>) -> Self {
        MatrixHamiltonian::Moving { potentials }
    }

    pub fn stationary(potential: MatrixPotentialSpec) -> Self {
        MatrixHamiltonian::Stationary { potential }
    }

    pub fn is_static(&self) -> bool {
        match self {
            MatrixHamiltonian::Moving { potentials } => potentials.is_empty(),
            MatrixHamiltonian::Stationary { .. } => true,
        }
    }

    pub fn field(&self, t: f64, grid: &Grid) -> MatrixPotentialField {
        match self {
            MatrixHamiltonian::Moving { potentials } => sample_matrix_total(potentials, t, grid),
            MatrixHamiltonian::Stationary { potential } => stationary_field(potential, grid),
        }
    }
}

pub(crate) fn stationary_field(ms: &MatrixPotentialSpec, grid: &Grid) -> MatrixPotentialField {
    let mut u = ms.u_profile;
    let mut w = ms.w_profile;
    let c = ms.center(0.0);
    u.center = c;
    w.center = c;
    let shift = ms.gap_edge();
    MatrixPotentialField {
        diag: u.sample(grid).into_iter().map(|x| x + shift).collect(),
        coupling: w.sample(grid).into_iter().map(|x| Complex64::new(x, 0.0)).collect(),
    }
}

/// Either Hamiltonian family, as it appears in scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HamiltonianSpec {
    Scalar(ScalarHamiltonian),
    Matrix(MatrixHamiltonian),
}

/// Flags runs whose norm ratio exceeds `constant * (1 + |t - s|)^exponent`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthEnvelope {
    pub constant: f64,
    pub exponent: f64,
}

impl GrowthEnvelope {
    pub fn bound(&self, elapsed: f64) -> f64 {
        self.constant * (1.0 + elapsed.abs()).powf(self.exponent)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepperConfig {
    pub dt: f64,
    pub snapshot_every: usize,
    pub boundary_mass_guard: f64,
    /// Keep every snapshot field in the trace (otherwise only the endpoints).
    pub store_snapshots: bool,
    pub growth_envelope: Option<GrowthEnvelope>,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            snapshot_every: 25,
            boundary_mass_guard: 1e-6,
            store_snapshots: true,
            growth_envelope: None,
        }
    }
}

impl StepperConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid_param(format!("dt must be positive, got {}", self.dt)));
        }
        if self.snapshot_every == 0 {
            return Err(invalid_param("snapshot_every must be at least 1"));
        }
        if !(self.boundary_mass_guard >= 0.0) {
            return Err(invalid_param("boundary_mass_guard must be nonnegative"));
        }
        if let Some(g) = self.growth_envelope {
            if !(g.constant > 0.0 && g.exponent >= 0.0) {
                return Err(invalid_param("growth envelope needs constant > 0 and exponent >= 0"));
            }
        }
        Ok(())
    }
}

/// Per-snapshot diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub time: f64,
    pub norm: f64,
    pub boundary_mass: f64,
    /// `int |psi_1|^2 - |psi_2|^2` for two-component runs.
    pub charge: Option<f64>,
}

/// Fields the stepper can carry.
pub trait Field: Clone {
    fn grid(&self) -> &Grid;
    fn l2_norm(&self) -> f64;
    fn boundary_mass(&self) -> f64;
    fn charge(&self) -> Option<f64>;
    fn components(&self) -> Vec<&[Complex64]>;
}

impl Field for ScalarField {
    fn grid(&self) -> &Grid {
        ScalarField::grid(self)
    }
    fn l2_norm(&self) -> f64 {
        self.norm()
    }
    fn boundary_mass(&self) -> f64 {
        boundary_mass(self)
    }
    fn charge(&self) -> Option<f64> {
        None
    }
    fn components(&self) -> Vec<&[Complex64]> {
        vec![self.values()]
    }
}

impl Field for SpinorField {
    fn grid(&self) -> &Grid {
        SpinorField::grid(self)
    }
    fn l2_norm(&self) -> f64 {
        self.norm()
    }
    fn boundary_mass(&self) -> f64 {
        let (a, b) = (self.upper.norm_sqr(), self.lower.norm_sqr());
        if a + b == 0.0 {
            return 0.0;
        }
        (boundary_mass(&self.upper) * a + boundary_mass(&self.lower) * b) / (a + b)
    }
    fn charge(&self) -> Option<f64> {
        Some(SpinorField::charge(self))
    }
    fn components(&self) -> Vec<&[Complex64]> {
        vec![self.upper.values(), self.lower.values()]
    }
}

/// Snapshots of a propagation run together with its diagnostics.
#[derive(Clone, Debug)]
pub struct PropagatorTrace<F> {
    pub times: Vec<f64>,
    /// Stored snapshot fields; empty unless `store_snapshots` was set.
    pub fields: Vec<F>,
    pub diagnostics: Vec<Diagnostics>,
    pub initial: F,
    pub final_state: F,
    pub valid: bool,
    pub warnings: Vec<String>,
    pub config: StepperConfig,
}

pub type ScalarTrace = PropagatorTrace<ScalarField>;
pub type SpinorTrace = PropagatorTrace<SpinorField>;

impl<F: Field> PropagatorTrace<F> {
    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Largest `|norm(t) - norm(s)|` over the snapshots.
    pub fn norm_drift(&self) -> f64 {
        let n0 = self.diagnostics[0].norm;
        self.diagnostics.iter().map(|d| (d.norm - n0).abs()).fold(0.0, f64::max)
    }

    /// Largest charge deviation from its initial value (two-component runs).
    pub fn charge_drift(&self) -> Option<f64> {
        let q0 = self.diagnostics[0].charge?;
        Some(
            self.diagnostics
                .iter()
                .filter_map(|d| d.charge)
                .map(|q| (q - q0).abs())
                .fold(0.0, f64::max),
        )
    }

    pub fn max_boundary_mass(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.boundary_mass).fold(0.0, f64::max)
    }

    /// Applies `f` to every stored snapshot. Requires stored fields.
    pub fn series(&self, f: impl Fn(f64, &F) -> f64) -> Result<MixedNormSeries> {
        if self.fields.len() != self.times.len() {
            return Err(crate::error::invalid_input("trace does not store its snapshots"));
        }
        let values = self.times.iter().zip(&self.fields).map(|(t, x)| f(*t, x)).collect();
        MixedNormSeries::new(self.times.clone(), values)
    }
}

/// `e^{i tau Delta / 2}`: each Fourier mode multiplied by `e^{-i |k|^2 tau / 2}`.
pub fn free_propagate(f: &ScalarField, tau: f64) -> ScalarField {
    if tau == 0.0 {
        return f.clone();
    }
    let g = f.grid();
    let mut data = f.values().to_vec();
    let mut ws = g.workspace();
    g.fft_forward(&mut data, &mut ws);
    for (z, k2) in data.iter_mut().zip(g.k_squared()) {
        *z *= Complex64::from_polar(1.0, -0.5 * k2 * tau);
    }
    g.fft_inverse(&mut data, &mut ws);
    ScalarField::from_vec_unchecked(g.clone(), data)
}

/// Inhomogeneous term `F(t, x)` of `i psi_t = H(t) psi + F`, with the
/// exponents `(p', q')` of the mixed norm in which it is budgeted.
pub struct SourceTerm {
    evaluator: Box<dyn Fn(f64, &Grid) -> ScalarField + Send + Sync>,
    pub budget: (f64, f64),
}

impl SourceTerm {
    pub fn new(budget: (f64, f64), evaluator: impl Fn(f64, &Grid) -> ScalarField + Send + Sync + 'static) -> Self {
        Self {
            evaluator: Box::new(evaluator),
            budget,
        }
    }

    /// `F(t, x) = amp * exp(-|x - c|^2 / (2 w^2)) * exp(-(t - t0)^2 / (2 tau^2))`.
    pub fn gaussian_pulse(amplitude: f64, center: [f64; 3], width: f64, t0: f64, duration: f64, budget: (f64, f64)) -> Self {
        Self::new(budget, move |t, g| {
            let env = amplitude * (-(t - t0).powi(2) / (2.0 * duration * duration)).exp();
            ScalarField::from_real_fn(g, |x| {
                let d = g.min_image(x, &center);
                env * (-(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) / (2.0 * width * width)).exp()
            })
        })
    }

    pub fn eval(&self, t: f64, grid: &Grid) -> ScalarField {
        (self.evaluator)(t, grid)
    }

    /// The same source multiplied by `c`.
    pub fn scaled(self, c: f64) -> Self {
        let inner = self.evaluator;
        Self {
            evaluator: Box::new(move |t, g| inner(t, g).scaled(Complex64::new(c, 0.0))),
            budget: self.budget,
        }
    }
}

impl std::fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SourceTerm").field("budget", &self.budget).finish_non_exhaustive()
    }
}

/// Strang split-step solution of `i psi_t = H(t) psi` from `s` to `t`.
pub fn propagate(h: &ScalarHamiltonian, psi: &ScalarField, s: f64, t: f64, cfg: &StepperConfig) -> Result<ScalarTrace> {
    propagate_observed(h, psi, s, t, cfg, |_, _| {})
}

/// [`propagate`] calling `observer` at every snapshot (including the initial time).
pub fn propagate_observed(
    h: &ScalarHamiltonian,
    psi: &ScalarField,
    s: f64,
    t: f64,
    cfg: &StepperConfig,
    observer: impl FnMut(f64, &ScalarField),
) -> Result<ScalarTrace> {
    cfg.validate()?;
    let mut sys = stepper::ScalarSystem::new(h, psi.grid(), None);
    stepper::drive(&mut sys, psi, s, t, cfg, observer)
}

/// Split-step solution of `i psi_t = H(t) psi + F(t)` with the midpoint source rule.
pub fn propagate_with_source(
    h: &ScalarHamiltonian,
    psi: &ScalarField,
    source: &SourceTerm,
    window: (f64, f64),
    cfg: &StepperConfig,
) -> Result<ScalarTrace> {
    propagate_with_source_observed(h, psi, source, window, cfg, |_, _| {})
}

pub fn propagate_with_source_observed(
    h: &ScalarHamiltonian,
    psi: &ScalarField,
    source: &SourceTerm,
    window: (f64, f64),
    cfg: &StepperConfig,
    observer: impl FnMut(f64, &ScalarField),
) -> Result<ScalarTrace> {
    cfg.validate()?;
    let mut sys = stepper::ScalarSystem::new(h, psi.grid(), Some(source));
    stepper::drive(&mut sys, psi, window.0, window.1, cfg, observer)
}

/// Split-step solution of the two-component system.
pub fn matrix_propagate(
    h: &MatrixHamiltonian,
    psi: &SpinorField,
    s: f64,
    t: f64,
    cfg: &StepperConfig,
) -> Result<SpinorTrace> {
    matrix_propagate_observed(h, psi, s, t, cfg, |_, _| {})
}

pub fn matrix_propagate_observed(
    h: &MatrixHamiltonian,
    psi: &SpinorField,
    s: f64,
    t: f64,
    cfg: &StepperConfig,
    observer: impl FnMut(f64, &SpinorField),
) -> Result<SpinorTrace> {
    cfg.validate()?;
    let mut sys = stepper::MatrixSystem::new(h, psi.grid());
    stepper::drive(&mut sys, psi, s, t, cfg, observer)
}

#[cfg(test)]
mod tests;
