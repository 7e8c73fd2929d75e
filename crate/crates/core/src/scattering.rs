//! Channel bases built from truncated wave operators, the bound-channel and
//! scattering projections they define, and asymptotic-completeness residuals.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};
use crate::gridfield::{MixedNormSeries, ScalarField, SpinorField, Vec3};
use crate::potentials::{MatrixPotentialSpec, MovingPotential};
use crate::propagator::{
    matrix_propagate, propagate, propagate_observed, MatrixHamiltonian, ScalarHamiltonian, StepperConfig,
};
use crate::spectrum::{BoundStateSet, MatrixSpectralData};
use crate::symmetries::{galilei, modulation_inverse, translate, vector_galilei, GalileiParams, ModulationParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveOperatorConfig {
    /// Truncation time `T` of the strong limit.
    pub horizon: f64,
    pub tail_tolerance: f64,
    pub stepper: StepperConfig,
}

impl Default for WaveOperatorConfig {
    fn default() -> Self {
        Self {
            horizon: 40.0,
            tail_tolerance: 1e-4,
            stepper: StepperConfig {
                dt: 0.02,
                store_snapshots: false,
                ..StepperConfig::default()
            },
        }
    }
}

fn neg(v: &Vec3) -> Vec3 {
    [-v[0], -v[1], -v[2]]
}

/// Moves `f`, centered at `rest`, onto the trajectory `c0 + t v` with the
/// matching boost: `G_{-v, -c0}(t) f(. + rest)`.
pub fn moving_frame(f: &ScalarField, rest: &Vec3, c0: &Vec3, velocity: &Vec3, t: f64) -> ScalarField {
    let at_origin = translate(f, &neg(rest));
    galilei(&at_origin, &GalileiParams::new(neg(velocity), neg(c0), t))
}

/// Bound state `u` of the stationary profile of `pot`, carried along its trajectory at time `t`.
pub fn channel_state(pot: &MovingPotential, u: &ScalarField, t: f64) -> ScalarField {
    moving_frame(u, &pot.spec.center, &pot.center(0.0), &pot.velocity, t)
}

/// Orthonormal bases of the channel ranges at one anchor time.
#[derive(Clone, Debug)]
pub struct ChannelBasis {
    pub anchor_time: f64,
    pub u_tilde: Vec<ScalarField>,
    pub w_tilde: Vec<ScalarField>,
    /// `<u_i, w_j>` between the propagated families before orthonormalization.
    pub raw_overlap: DMatrix<Complex64>,
    /// A-posteriori Duhamel tail estimate per basis vector (channel 1 then channel 2).
    pub tail_estimates: Vec<f64>,
    pub valid: bool,
    pub warnings: Vec<String>,
}

impl ChannelBasis {
    /// The trivial basis (no bound channels): `P_c = I`.
    pub fn empty(anchor_time: f64) -> Self {
        Self {
            anchor_time,
            u_tilde: Vec::new(),
            w_tilde: Vec::new(),
            raw_overlap: DMatrix::zeros(0, 0),
            tail_estimates: Vec::new(),
            valid: true,
            warnings: Vec::new(),
        }
    }

    pub fn max_raw_overlap(&self) -> f64 {
        self.raw_overlap.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest within-family deviation from orthonormality.
    pub fn gram_defect(&self) -> f64 {
        gram_defect(&self.u_tilde).max(gram_defect(&self.w_tilde))
    }

    fn all(&self) -> impl Iterator<Item = &ScalarField> {
        self.u_tilde.iter().chain(&self.w_tilde)
    }
}

fn gram_defect(fam: &[ScalarField]) -> f64 {
    let mut worst = 0.0f64;
    for (i, a) in fam.iter().enumerate() {
        for (j, b) in fam.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((a.inner(b) - target).norm());
        }
    }
    worst
}

/// Modified Gram-Schmidt, two passes.
fn orthonormalize(fam: &[ScalarField]) -> Result<Vec<ScalarField>> {
    let mut out: Vec<ScalarField> = Vec::with_capacity(fam.len());
    for f in fam {
        let mut v = f.clone();
        for _ in 0..2 {
            for q in &out {
                let c = q.inner(&v);
                v.axpy(-c, q);
            }
        }
        let n = v.normalize();
        if !(n > 1e-12 * f.norm()) {
            return Err(invalid_input("channel vectors are linearly dependent"));
        }
        out.push(v);
    }
    Ok(out)
}

fn channel_potentials(h: &ScalarHamiltonian, sets: [&BoundStateSet; 2]) -> Result<Vec<(MovingPotential, BoundStateSet)>> {
    if h.potentials.len() > 2 {
        return Err(invalid_input(format!(
            "channel bases support at most two potentials, got {}",
            h.potentials.len()
        )));
    }
    let mut out = Vec::new();
    for (k, set) in sets.into_iter().enumerate() {
        match h.potentials.get(k) {
            Some(p) => out.push((*p, set.clone())),
            None if set.is_empty() => {}
            None => return Err(invalid_input(format!("bound states given for missing potential {}", k + 1))),
        }
    }
    Ok(out)
}

/// `int_T^inf ||V_other(r) u(r)||_2 dr`, extrapolated from the integrand on
/// `[max(s, T - 8), T]` with its fitted exponential decay rate.
/// Returns `(tail, rate, integrand at T)`.
/// An integrand already below `floor` is at the accuracy of the bound states themselves and
/// is charged over one window length instead of extrapolated.
fn duhamel_tail(
    others: &[MovingPotential],
    pot: &MovingPotential,
    u: &ScalarField,
    s: f64,
    horizon: f64,
    floor: f64,
) -> (f64, f64, f64) {
    let g = u.grid();
    let start = s.max(horizon - 8.0);
    let samples: Vec<(f64, f64)> = (0..=8)
        .map(|i| {
            let r = start + (horizon - start) * i as f64 / 8.0;
            let state = channel_state(pot, u, r);
            let v = ScalarHamiltonian::new(others.to_vec()).potential(r, g);
            let n2: f64 = state.values().iter().zip(&v).map(|(z, v)| (z * v).norm_sqr()).sum();
            (r, (n2 * g.cell_volume()).sqrt())
        })
        .collect();
    let at_t = samples.last().unwrap().1;
    if at_t <= floor {
        return (at_t * (horizon - start).max(1.0), f64::INFINITY, at_t);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = samples.iter().filter(|(_, y)| *y > 1e-300).map(|(r, y)| (*r, y.ln())).unzip();
    let rate = if xs.len() >= 2 {
        -crate::spectrum::linear_fit(&xs, &ys).0
    } else {
        0.0
    };
    if rate <= 0.0 {
        return (f64::INFINITY, rate, at_t);
    }
    (at_t / rate, rate, at_t)
}

/// `u_tilde_j(s) = U(s, T) e^{-i lambda_j (T - s)} u_j` for the first potential and the
/// boosted analogue for the second, each family orthonormalized.
pub fn channel_basis(
    s: f64,
    h: &ScalarHamiltonian,
    bs1: &BoundStateSet,
    bs2: &BoundStateSet,
    cfg: &WaveOperatorConfig,
) -> Result<ChannelBasis> {
    if !(cfg.horizon > s) {
        return Err(crate::error::invalid_param(format!(
            "wave-operator horizon {} must exceed the anchor time {s}",
            cfg.horizon
        )));
    }
    let channels = channel_potentials(h, [bs1, bs2])?;
    let mut basis = ChannelBasis::empty(s);
    let mut families: [Vec<ScalarField>; 2] = [Vec::new(), Vec::new()];
    for (k, (pot, set)) in channels.iter().enumerate() {
        let others: Vec<MovingPotential> = h
            .potentials
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, p)| *p)
            .collect();
        for (u, lambda) in set.eigenfunctions.iter().zip(&set.eigenvalues) {
            let (tail, rate, at_t) = duhamel_tail(&others, pot, u, s, cfg.horizon, 1e-4 * cfg.tail_tolerance);
            if tail > cfg.tail_tolerance {
                let suggested = if rate > 0.0 && rate.is_finite() {
                    cfg.horizon + (at_t / (rate * cfg.tail_tolerance)).ln() / rate
                } else {
                    f64::INFINITY
                };
                return Err(Error::HorizonTooSmall {
                    tail,
                    tolerance: cfg.tail_tolerance,
                    suggested,
                });
            }
            basis.tail_estimates.push(tail);
            let mut start = channel_state(pot, u, cfg.horizon);
            start.scale(Complex64::from_polar(1.0, -lambda * (cfg.horizon - s)));
            let trace = propagate(h, &start, cfg.horizon, s, &cfg.stepper)?;
            if !trace.valid {
                basis.valid = false;
                basis.warnings.extend(trace.warnings.iter().map(|w| format!("channel {}: {w}", k + 1)));
            }
            families[k].push(trace.final_state);
        }
    }
    let [raw1, raw2] = families;
    basis.raw_overlap = DMatrix::from_fn(raw1.len(), raw2.len(), |i, j| raw1[i].inner(&raw2[j]));
    basis.u_tilde = orthonormalize(&raw1)?;
    basis.w_tilde = orthonormalize(&raw2)?;
    Ok(basis)
}

/// Coefficients of the orthogonal projection onto the span of `vectors`.
fn span_coefficients(vectors: &[&ScalarField], f: &ScalarField) -> Result<Vec<Complex64>> {
    let k = vectors.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let gram = DMatrix::from_fn(k, k, |i, j| vectors[i].inner(vectors[j]));
    let rhs = nalgebra::DVector::from_fn(k, |i, _| vectors[i].inner(f));
    let c = gram
        .lu()
        .solve(&rhs)
        .ok_or_else(|| invalid_input("singular channel Gram matrix"))?;
    Ok(c.iter().cloned().collect())
}

/// Decomposes the orthogonal projection of `f` onto `span{u_tilde} + span{w_tilde}` into its
/// channel-1 and channel-2 parts. For mutually orthogonal families these are the orthogonal
/// projections `P_1b f` and `P_2b f`.
pub fn project_channels(f: &ScalarField, basis: &ChannelBasis) -> Result<(ScalarField, ScalarField)> {
    for b in basis.all() {
        b.grid().check_same(f.grid())?;
    }
    let all: Vec<&ScalarField> = basis.all().collect();
    let c = span_coefficients(&all, f)?;
    let mut p1 = ScalarField::zeros(f.grid());
    let mut p2 = ScalarField::zeros(f.grid());
    let n1 = basis.u_tilde.len();
    for (i, v) in all.iter().enumerate() {
        if i < n1 {
            p1.axpy(c[i], v);
        } else {
            p2.axpy(c[i], v);
        }
    }
    Ok((p1, p2))
}

/// `P_c(s) f = f - P_1b(s) f - P_2b(s) f`.
pub fn project_scattering(f: &ScalarField, basis: &ChannelBasis) -> Result<ScalarField> {
    let (p1, p2) = project_channels(f, basis)?;
    Ok(f.sub(&p1).sub(&p2))
}

/// Bound-channel amplitudes of a propagated datum.
#[derive(Clone, Debug, Serialize)]
pub struct AcResidual {
    /// `||P_b(H_1, t) psi(t)||_2 + ||P_b(H_2, t) psi(t)||_2`.
    pub series: MixedNormSeries,
    pub channel1: Vec<f64>,
    pub channel2: Vec<f64>,
    pub valid: bool,
    pub warnings: Vec<String>,
}

impl AcResidual {
    pub fn final_value(&self) -> f64 {
        *self.series.values().last().unwrap_or(&0.0)
    }
}

/// `||P_b(H_k, t) psi||_2` with the transported projection `G(t) P_b(H_k) G(t)^{-1}`.
pub fn channel_amplitude(pot: &MovingPotential, set: &BoundStateSet, psi: &ScalarField, t: f64) -> f64 {
    set.eigenfunctions
        .iter()
        .map(|u| channel_state(pot, u, t).inner(psi).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Propagates `f` from `s` to `t_end` and records the bound-channel residual at every snapshot.
pub fn ac_residual(
    f: &ScalarField,
    s: f64,
    t_end: f64,
    h: &ScalarHamiltonian,
    bs1: &BoundStateSet,
    bs2: &BoundStateSet,
    cfg: &StepperConfig,
) -> Result<AcResidual> {
    let channels = channel_potentials(h, [bs1, bs2])?;
    let mut times = Vec::new();
    let mut c1 = Vec::new();
    let mut c2 = Vec::new();
    let cfg = StepperConfig {
        store_snapshots: false,
        ..*cfg
    };
    let trace = propagate_observed(h, f, s, t_end, &cfg, |t, psi| {
        times.push(t);
        let amp = |k: usize| channels.get(k).map_or(0.0, |(p, set)| channel_amplitude(p, set, psi, t));
        c1.push(amp(0));
        c2.push(amp(1));
    })?;
    let values = c1.iter().zip(&c2).map(|(a, b)| a + b).collect();
    Ok(AcResidual {
        series: MixedNormSeries::new(times, values)?,
        channel1: c1,
        channel2: c2,
        valid: trace.valid,
        warnings: trace.warnings,
    })
}

/// `||P_c(t) U(t, s) f - U(t, s) P_c(s) f||_2 / ||f||_2`, with both bases built here.
pub fn intertwining_defect(
    f: &ScalarField,
    s: f64,
    t: f64,
    h: &ScalarHamiltonian,
    bs1: &BoundStateSet,
    bs2: &BoundStateSet,
    cfg: &WaveOperatorConfig,
) -> Result<f64> {
    let at_s = channel_basis(s, h, bs1, bs2, cfg)?;
    let at_t = channel_basis(t, h, bs1, bs2, cfg)?;
    intertwining_defect_with(f, &at_s, &at_t, h, &cfg.stepper)
}

/// [`intertwining_defect`] for precomputed bases at the two anchor times.
pub fn intertwining_defect_with(
    f: &ScalarField,
    at_s: &ChannelBasis,
    at_t: &ChannelBasis,
    h: &ScalarHamiltonian,
    stepper: &StepperConfig,
) -> Result<f64> {
    let norm = f.norm();
    if norm == 0.0 {
        return Err(Error::UndefinedRatio("intertwining defect of the zero field".into()));
    }
    let cfg = StepperConfig {
        store_snapshots: false,
        ..*stepper
    };
    let (s, t) = (at_s.anchor_time, at_t.anchor_time);
    let evolved = propagate(h, f, s, t, &cfg)?.final_state;
    let projected_first = propagate(h, &project_scattering(f, at_s)?, s, t, &cfg)?.final_state;
    let projected_after = project_scattering(&evolved, at_t)?;
    Ok(projected_after.sub(&projected_first).norm() / norm)
}

/// Moving-frame map of a matrix channel: `G_{-v, -c0}(t) M(t)^{-1}` applied to a
/// stationary-frame spinor centered at `c0`.
pub fn matrix_channel_state(ms: &MatrixPotentialSpec, phi: &SpinorField, t: f64) -> SpinorField {
    let c0 = ms.center(0.0);
    let demod = modulation_inverse(
        phi,
        &ModulationParams {
            alpha: ms.alpha,
            gamma: ms.gamma,
            time: t,
        },
    );
    let at_origin = SpinorField {
        upper: translate(&demod.upper, &neg(&c0)),
        lower: translate(&demod.lower, &neg(&c0)),
    };
    vector_galilei(&at_origin, &GalileiParams::new(neg(&ms.velocity), neg(&c0), t))
}

/// Oblique channel bases of the matrix system at one anchor time.
#[derive(Clone, Debug)]
pub struct MatrixChannelBasis {
    pub anchor_time: f64,
    /// Per channel, propagated generalized eigenvectors.
    pub right: Vec<Vec<SpinorField>>,
    /// Per channel, dual vectors with `<dual_i, right_j> = delta_ij` within the channel.
    pub dual: Vec<Vec<SpinorField>>,
    /// False when the growth envelope or boundary guard tripped during backward propagation.
    pub valid: bool,
    pub warnings: Vec<String>,
}

impl MatrixChannelBasis {
    /// Largest within-channel `|<dual_i, right_j> - delta_ij|`.
    pub fn biorthogonality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (r, d) in self.right.iter().zip(&self.dual) {
            for (i, a) in d.iter().enumerate() {
                for (j, b) in r.iter().enumerate() {
                    let target = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((a.inner(b) - target).norm());
                }
            }
        }
        worst
    }

    /// Oblique bound parts `(p_1, p_2, ...)` of `f` along the combined family, and the remainder.
    pub fn decompose(&self, f: &SpinorField) -> Result<(Vec<SpinorField>, SpinorField)> {
        let right: Vec<&SpinorField> = self.right.iter().flatten().collect();
        let dual: Vec<&SpinorField> = self.dual.iter().flatten().collect();
        let k = right.len();
        let mut parts: Vec<SpinorField> = self.right.iter().map(|_| SpinorField::zeros(f.grid())).collect();
        if k == 0 {
            return Ok((parts, f.clone()));
        }
        for r in &right {
            r.grid().check_same(f.grid())?;
        }
        let gram = DMatrix::from_fn(k, k, |i, j| dual[i].inner(right[j]));
        let rhs = nalgebra::DVector::from_fn(k, |i, _| dual[i].inner(f));
        let c = gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| invalid_input("singular dual Gram matrix"))?;
        let mut idx = 0;
        let mut rest = f.clone();
        for (ch, fam) in self.right.iter().enumerate() {
            for r in fam {
                parts[ch].axpy(c[idx], r);
                rest.axpy(-c[idx], r);
                idx += 1;
            }
        }
        Ok((parts, rest))
    }

    /// `P_c(s) f` for the oblique decomposition.
    pub fn project_scattering(&self, f: &SpinorField) -> Result<SpinorField> {
        Ok(self.decompose(f)?.1)
    }
}

fn spinor_columns(m: &DMatrix<Complex64>, data: &MatrixSpectralData) -> Result<Vec<SpinorField>> {
    let scale = 1.0 / data.grid.cell_volume().sqrt();
    (0..m.ncols())
        .map(|j| {
            let v: Vec<Complex64> = m.column(j).iter().map(|z| z * scale).collect();
            SpinorField::from_vec(&data.grid, &v)
        })
        .collect()
}

fn combine(fields: &[SpinorField], coeffs: &DMatrix<Complex64>, col: usize) -> SpinorField {
    let mut out = SpinorField::zeros(fields[0].grid());
    for (i, f) in fields.iter().enumerate() {
        out.axpy(coeffs[(i, col)], f);
    }
    out
}

/// `sigma_3 psi`.
fn sigma3(psi: &SpinorField) -> SpinorField {
    SpinorField {
        upper: psi.upper.clone(),
        lower: psi.lower.scaled(Complex64::new(-1.0, 0.0)),
    }
}

/// Right vectors `U(s, T) T_k(T) Phi e^{-i M (T - s)}` and duals
/// `sigma_3 U(s, T) sigma_3 T_k(T) Psi e^{-i M (T - s)}^{-*}` for each matrix channel,
/// where `M = Psi^* A Phi` is the restriction of the stationary operator to `L_l`
/// (Jordan chains evolve with the nilpotent part of `M`).
pub fn matrix_channel_basis(
    s: f64,
    h: &MatrixHamiltonian,
    spectra: &[&MatrixSpectralData],
    cfg: &WaveOperatorConfig,
) -> Result<MatrixChannelBasis> {
    let MatrixHamiltonian::Moving { potentials } = h else {
        return Err(invalid_input("matrix channel bases are built for the moving (lab-frame) system"));
    };
    if potentials.len() != spectra.len() {
        return Err(invalid_input(format!(
            "{} matrix potentials but {} spectral data sets",
            potentials.len(),
            spectra.len()
        )));
    }
    if !(cfg.horizon > s) {
        return Err(crate::error::invalid_param("wave-operator horizon must exceed the anchor time"));
    }
    let tau = cfg.horizon - s;
    let mut out = MatrixChannelBasis {
        anchor_time: s,
        right: Vec::new(),
        dual: Vec::new(),
        valid: true,
        warnings: Vec::new(),
    };
    for (ms, data) in potentials.iter().zip(spectra) {
        let mut right = Vec::new();
        let mut dual = Vec::new();
        for (phi, psi) in data.right_generalized_vectors.iter().zip(&data.left_generalized_vectors) {
            let m = psi.adjoint() * &data.operator * phi;
            let evo = (m * Complex64::new(0.0, -tau)).exp();
            let evo_dual = evo
                .clone()
                .try_inverse()
                .ok_or_else(|| invalid_input("singular channel evolution"))?
                .adjoint();
            let phis = spinor_columns(phi, data)?;
            let psis = spinor_columns(psi, data)?;
            for j in 0..phis.len() {
                let start = matrix_channel_state(ms, &combine(&phis, &evo, j), cfg.horizon);
                let trace = matrix_propagate(h, &start, cfg.horizon, s, &cfg.stepper)?;
                let start_dual = sigma3(&matrix_channel_state(ms, &combine(&psis, &evo_dual, j), cfg.horizon));
                let trace_dual = matrix_propagate(h, &start_dual, cfg.horizon, s, &cfg.stepper)?;
                for tr in [&trace, &trace_dual] {
                    if !tr.valid {
                        out.valid = false;
                        out.warnings.extend(tr.warnings.iter().cloned());
                    }
                }
                right.push(trace.final_state);
                dual.push(sigma3(&trace_dual.final_state));
            }
        }
        out.right.push(right);
        out.dual.push(dual);
    }
    Ok(out)
}

/// Bound amplitudes `||P_b(H_k, t) psi||` of the matrix system with the transported
/// oblique projections, for every snapshot of a lab-frame run.
pub fn matrix_ac_residual(
    f: &SpinorField,
    s: f64,
    t_end: f64,
    h: &MatrixHamiltonian,
    spectra: &[&MatrixSpectralData],
    cfg: &StepperConfig,
) -> Result<AcResidual> {
    let MatrixHamiltonian::Moving { potentials } = h else {
        return Err(invalid_input("matrix residuals are evaluated for the moving (lab-frame) system"));
    };
    if potentials.len() != spectra.len() {
        return Err(invalid_input("one spectral data set per matrix potential is required"));
    }
    let mut fams = Vec::new();
    for data in spectra {
        let mut phis = Vec::new();
        let mut psis = Vec::new();
        for (phi, psi) in data.right_generalized_vectors.iter().zip(&data.left_generalized_vectors) {
            phis.extend(spinor_columns(phi, data)?);
            psis.extend(spinor_columns(psi, data)?);
        }
        fams.push((phis, psis));
    }
    let mut times = Vec::new();
    let mut amps: Vec<Vec<f64>> = vec![Vec::new(); 2];
    let cfg = StepperConfig {
        store_snapshots: false,
        ..*cfg
    };
    let trace = crate::propagator::matrix_propagate_observed(h, f, s, t_end, &cfg, |t, psi| {
        times.push(t);
        for k in 0..2 {
            let a = match (potentials.get(k), fams.get(k)) {
                (Some(ms), Some((phis, psis))) => {
                    // P_b(H_k, t) psi = sum_j T(t) phi_j <T(t) psi_j, psi>
                    let mut acc = SpinorField::zeros(psi.grid());
                    for (phi, dual) in phis.iter().zip(psis) {
                        let c = matrix_channel_state(ms, dual, t).inner(psi);
                        acc.axpy(c, &matrix_channel_state(ms, phi, t));
                    }
                    acc.norm()
                }
                _ => 0.0,
            };
            amps[k].push(a);
        }
    })?;
    let values = amps[0].iter().zip(&amps[1]).map(|(a, b)| a + b).collect();
    let [channel1, channel2]: [Vec<f64>; 2] = amps.try_into().expect("two channels");
    Ok(AcResidual {
        series: MixedNormSeries::new(times, values)?,
        channel1,
        channel2,
        valid: trace.valid,
        warnings: trace.warnings,
    })
}

/// Coefficient vector of `f` in a basis, used by exporters.
pub fn channel_coefficients(f: &ScalarField, basis: &ChannelBasis) -> Vec<Complex64> {
    basis.all().map(|b| b.inner(f)).collect()
}
