//! Scenario execution: bound states, channel bases, propagation and estimators in
//! dependency order, collected into a [`RunReport`].

use std::path::Path;

use ctlab::estimators::{
    admissible_pairs, decay_fit, inhomogeneous_ratio, kato_jensen_probe, local_decay_norm, matrix_kato_jensen_probe,
    random_band_limited, strichartz_ratio, AdmissiblePair, DecayFit, KatoJensenSeries, ProbeConfig,
};
use ctlab::gridfield::{lp_norm, pair_norms, MixedNormSeries};
use ctlab::propagator::{
    export_trace, matrix_propagate, oracle_propagate, propagate, propagate_observed, propagate_with_source, Field,
    MatrixHamiltonian, PropagatorTrace, ScalarHamiltonian, ScalarTrace, SourceTerm, StepperConfig, DENSE_LIMIT,
};
use ctlab::scattering::{
    ac_residual, channel_basis, channel_state, intertwining_defect_with, matrix_channel_basis, project_scattering,
    ChannelBasis,
};
use ctlab::spectrum::{
    admissibility_report_from, bound_states, linear_growth_probe, matrix_spectrum, stability_probe_with, BoundStateSet,
    MatrixSpectralData, Verdict,
};
use ctlab::symmetries::{modulation, modulation_inverse, ModulationParams};
use ctlab::{Grid, ScalarField, SpinorField};
use num_complex::Complex64;
use serde_json::json;

use crate::config::*;
use crate::error::CliError;
use crate::report::{EstimatorError, RunReport, Series};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    BoundStates,
    Propagate,
    VerifyDecay,
    VerifyStrichartz,
    VerifyAc,
    MatrixDiagnose,
    OracleCompare,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::BoundStates,
        Command::Propagate,
        Command::VerifyDecay,
        Command::VerifyStrichartz,
        Command::VerifyAc,
        Command::MatrixDiagnose,
        Command::OracleCompare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::BoundStates => "bound-states",
            Command::Propagate => "propagate",
            Command::VerifyDecay => "verify-decay",
            Command::VerifyStrichartz => "verify-strichartz",
            Command::VerifyAc => "verify-ac",
            Command::MatrixDiagnose => "matrix-diagnose",
            Command::OracleCompare => "oracle-compare",
        }
    }

    /// Small built-in scenario used when no config file is given.
    pub fn preset(self) -> Scenario {
        let toml = match self {
            Command::BoundStates => PRESET_BOUND_STATES,
            Command::Propagate => PRESET_PROPAGATE,
            Command::VerifyDecay => PRESET_DECAY,
            Command::VerifyStrichartz => PRESET_STRICHARTZ,
            Command::VerifyAc => PRESET_AC,
            Command::MatrixDiagnose => PRESET_MATRIX,
            Command::OracleCompare => PRESET_ORACLE,
        };
        Scenario::from_toml(toml).expect("built-in presets are valid")
    }
}

const PRESET_BOUND_STATES: &str = r#"
name = "bound-states"
grid = { dim = 1, points_per_axis = 256, box_half_length = 20.0 }
[[potentials]]
spec = { family = "sech_squared", amplitude = -3.0, width = 1.0 }
[estimators.bound_states]
expect_counts = [2]
"#;

const PRESET_PROPAGATE: &str = r#"
name = "propagate"
grid = { dim = 1, points_per_axis = 256, box_half_length = 40.0 }
window = { start = 0.0, end = 5.0 }
initial = { kind = "gaussian_packet", center = [-5.0, 0.0, 0.0], momentum = [1.0, 0.0, 0.0], width = 1.5 }
stepper = { dt = 0.01 }
[[potentials]]
spec = { family = "gaussian", amplitude = -1.0, width = 1.0 }
velocity = [0.5, 0.0, 0.0]
"#;

const PRESET_DECAY: &str = r#"
name = "verify-decay"
grid = { dim = 1, points_per_axis = 2048, box_half_length = 200.0 }
window = { start = 0.0, end = 40.0 }
initial = { kind = "gaussian_packet", width = 1.0 }
normalization = "l1_cap_l2"
stepper = { dt = 0.05, snapshot_every = 10 }
[[potentials]]
spec = { family = "gaussian", amplitude = 0.05, width = 0.5, center = [-6.0, 0.0, 0.0] }
[[potentials]]
spec = { family = "gaussian", amplitude = 0.05, width = 0.5, center = [6.0, 0.0, 0.0] }
velocity = [0.5, 0.0, 0.0]
[estimators.decay]
norm = "linf"
fit_window = [5.0, 40.0]
expect_exponent = [-0.7, -0.3]
"#;

const PRESET_STRICHARTZ: &str = r#"
name = "verify-strichartz"
grid = { dim = 1, points_per_axis = 1024, box_half_length = 160.0 }
window = { start = 0.0, end = 10.0 }
initial = { kind = "gaussian_packet", width = 1.0 }
stepper = { dt = 0.02, snapshot_every = 5 }
source = { kind = "gaussian_pulse", amplitude = 1.0, center = [3.0, 0.0, 0.0], width = 1.0, t0 = 1.0, duration = 0.3 }
[[potentials]]
spec = { family = "gaussian", amplitude = 0.5, width = 1.0 }
[estimators.strichartz]
pairs = 3
random_data = 2
k_cut = 1.0
max_spread = 3.0
"#;

const PRESET_AC: &str = r#"
name = "verify-ac"
grid = { dim = 1, points_per_axis = 256, box_half_length = 25.132741228718345 }
window = { start = 0.0, end = 10.0 }
initial = { kind = "scattering_projected", base = { kind = "gaussian_packet", center = [-2.0, 0.0, 0.0], momentum = [0.5, 0.0, 0.0], width = 1.5 } }
stepper = { dt = 0.02, snapshot_every = 25, boundary_mass_guard = 1.0 }
wave_operator = { horizon = 30.0 }
[[potentials]]
spec = { family = "sech_squared", amplitude = -3.0, width = 1.0 }
offset = [-6.0, 0.0, 0.0]
[[potentials]]
spec = { family = "sech_squared", amplitude = -3.0, width = 1.0 }
velocity = [0.5, 0.0, 0.0]
[estimators.bound_states]
k_max = 1
[estimators.ac]
max_intertwining = 5e-3
max_overlap = 5e-3
"#;

const PRESET_MATRIX: &str = r#"
name = "matrix-diagnose"
grid = { dim = 1, points_per_axis = 128, box_half_length = 16.0 }
stepper = { dt = 0.0025 }
[[matrix_potentials]]
u_profile = { family = "gaussian", amplitude = -1.5, width = 1.0 }
w_profile = { family = "gaussian", amplitude = 0.2, width = 1.0 }
alpha = 1.0
[estimators.matrix]
stability_horizon = 20.0
max_slope = 1e-3
max_frame_error = 1e-6
"#;

const PRESET_ORACLE: &str = r#"
name = "oracle-compare"
grid = { dim = 1, points_per_axis = 128, box_half_length = 12.0 }
window = { start = 0.0, end = 1.0 }
initial = { kind = "gaussian_packet", center = [-1.0, 0.0, 0.0], momentum = [1.0, 0.0, 0.0], width = 1.0 }
stepper = { dt = 0.0025 }
[[potentials]]
spec = { family = "gaussian", amplitude = -2.0, width = 1.5 }
[estimators.oracle]
oracle_dt = 1e-4
max_error = 1e-6
"#;

/// Runs `cmd` on `scenario`. Artifacts beyond the report (trace exports) go under `out`.
/// Estimator failures are recorded in the report; only an unusable grid aborts.
pub fn run_scenario(cmd: Command, scenario: &Scenario, out: &Path) -> Result<RunReport, CliError> {
    scenario.validate()?;
    let mut ctx = Ctx::new(scenario, out)?;
    let mut report = RunReport::new(cmd.name(), scenario.clone());
    let req = &scenario.estimators;
    let mut stages: Vec<(&str, Stage)> = Vec::new();
    match cmd {
        Command::BoundStates => stages.push(("bound_states", Stage::BoundStates)),
        Command::Propagate => stages.push(("propagate", Stage::Propagate)),
        Command::VerifyDecay => {
            stages.push(("decay", Stage::Decay));
            if req.kato_jensen.is_some() {
                stages.push(("kato_jensen", Stage::KatoJensen));
            }
            if req.local_decay.is_some() {
                stages.push(("local_decay", Stage::LocalDecay));
            }
        }
        Command::VerifyStrichartz => stages.push(("strichartz", Stage::Strichartz)),
        Command::VerifyAc => stages.push(("ac", Stage::Ac)),
        Command::MatrixDiagnose => stages.push(("matrix", Stage::Matrix)),
        Command::OracleCompare => stages.push(("oracle", Stage::Oracle)),
    }
    for (name, stage) in stages {
        if let Err(e) = ctx.run(stage, &mut report) {
            report.errors.push(EstimatorError {
                estimator: name.to_string(),
                message: e.to_string(),
                code: e.exit_code(),
            });
        }
    }
    report.warnings.extend(ctx.warnings);
    report.diagnostics.truncation_tails = ctx.tails;
    Ok(report)
}

#[derive(Clone, Copy)]
enum Stage {
    BoundStates,
    Propagate,
    Decay,
    KatoJensen,
    LocalDecay,
    Strichartz,
    Ac,
    Matrix,
    Oracle,
}

struct Ctx<'a> {
    sc: &'a Scenario,
    out: &'a Path,
    grid: Grid,
    h: ScalarHamiltonian,
    bound: Option<Vec<BoundStateSet>>,
    tails: Vec<f64>,
    warnings: Vec<String>,
}

fn note_trace<F: Field>(report: &mut RunReport, label: &str, trace: &PropagatorTrace<F>) {
    let d = &mut report.diagnostics;
    d.max_boundary_mass = d.max_boundary_mass.max(trace.max_boundary_mass());
    d.max_norm_drift = d.max_norm_drift.max(trace.norm_drift());
    if let Some(c) = trace.charge_drift() {
        d.max_charge_drift = Some(d.max_charge_drift.unwrap_or(0.0).max(c));
    }
    if !trace.valid {
        d.guard_trips.extend(trace.warnings.iter().map(|w| format!("{label}: {w}")));
    }
}

fn within(x: f64, (lo, hi): (f64, f64)) -> bool {
    x >= lo && x <= hi
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

fn verdict_value(v: Verdict) -> f64 {
    match v {
        Verdict::Pass | Verdict::Vacuous => 1.0,
        Verdict::Fail => 0.0,
        Verdict::Unchecked => f64::NAN,
    }
}

/// The stored snapshots of `trace` up to time `end`.
fn truncate(trace: &ScalarTrace, end: f64) -> ScalarTrace {
    let keep = trace.times.iter().take_while(|t| **t <= end + 1e-9).count();
    let mut out = trace.clone();
    out.times.truncate(keep);
    out.fields.truncate(keep);
    out.diagnostics.truncate(keep);
    out.final_state = out.fields.last().cloned().unwrap_or_else(|| trace.initial.clone());
    out
}

impl<'a> Ctx<'a> {
    fn new(sc: &'a Scenario, out: &'a Path) -> Result<Self, CliError> {
        Ok(Self {
            sc,
            out,
            grid: Grid::from_params(sc.grid)?,
            h: ScalarHamiltonian::new(sc.potentials.clone()),
            bound: None,
            tails: Vec::new(),
            warnings: Vec::new(),
        })
    }

    fn run(&mut self, stage: Stage, report: &mut RunReport) -> Result<(), CliError> {
        match stage {
            Stage::BoundStates => self.bound_stage(report),
            Stage::Propagate => self.propagate_stage(report),
            Stage::Decay => self.decay_stage(report),
            Stage::KatoJensen => self.kato_jensen_stage(report),
            Stage::LocalDecay => self.local_decay_stage(report),
            Stage::Strichartz => self.strichartz_stage(report),
            Stage::Ac => self.ac_stage(report),
            Stage::Matrix => self.matrix_stage(report),
            Stage::Oracle => self.oracle_stage(report),
        }
    }

    fn stepper(&self, store: bool) -> StepperConfig {
        StepperConfig {
            store_snapshots: store,
            ..self.sc.stepper
        }
    }

    fn bound_sets(&mut self) -> Result<&[BoundStateSet], CliError> {
        if self.bound.is_none() {
            let req = self.sc.estimators.bound_states.clone().unwrap_or_default();
            let sets = self
                .sc
                .potentials
                .iter()
                .map(|p| bound_states(&p.spec, &self.grid, req.k_max, req.tolerance))
                .collect::<ctlab::Result<Vec<_>>>()?;
            self.bound = Some(sets);
        }
        Ok(self.bound.as_deref().unwrap())
    }

    fn has_bound_states(&mut self) -> Result<bool, CliError> {
        Ok(self.bound_sets()?.iter().any(|s| !s.is_empty()))
    }

    /// Channel basis at `s`; the trivial basis when no potential binds.
    fn basis_at(&mut self, s: f64) -> Result<ChannelBasis, CliError> {
        if !self.has_bound_states()? {
            return Ok(ChannelBasis::empty(s));
        }
        let sets = self.bound_sets()?.to_vec();
        if sets.len() > 2 {
            return Err(CliError::Validation(format!(
                "channel projections support at most two potentials, scenario has {}",
                sets.len()
            )));
        }
        let empty = BoundStateSet::empty();
        let basis = channel_basis(
            s,
            &self.h,
            &sets[0],
            sets.get(1).unwrap_or(&empty),
            &self.sc.wave_operator,
        )?;
        self.tails.extend(basis.tail_estimates.iter().copied());
        if !basis.valid {
            self.warnings.extend(basis.warnings.iter().cloned());
        }
        Ok(basis)
    }

    fn normalize(&self, mut f: ScalarField) -> Result<ScalarField, CliError> {
        let n = match self.sc.normalization {
            Normalization::L2 => f.norm(),
            Normalization::L1CapL2 => pair_norms(&f).l1_cap_l2,
            Normalization::None => 1.0,
        };
        if !(n > 0.0) {
            return Err(CliError::Validation("initial datum vanishes".into()));
        }
        f.scale(Complex64::new(1.0 / n, 0.0));
        Ok(f)
    }

    fn datum(&mut self, recipe: &InitialDatum, seed: u64) -> Result<ScalarField, CliError> {
        let s = self.sc.window.start;
        let g = self.grid.clone();
        let f = match recipe {
            InitialDatum::GaussianPacket { center, momentum, width } => {
                if !(*width > 0.0) {
                    return Err(CliError::Validation(format!("packet width must be positive, got {width}")));
                }
                ScalarField::from_fn(&g, |x| {
                    let d = g.min_image(x, center);
                    let r2: f64 = d.iter().map(|a| a * a).sum();
                    let phase: f64 = d.iter().zip(momentum).map(|(a, k)| a * k).sum();
                    Complex64::from_polar((-r2 / (2.0 * width * width)).exp(), phase)
                })
            }
            InitialDatum::RandomBandLimited { k_cut } => {
                if !(*k_cut > 0.0) {
                    return Err(CliError::Validation(format!("k_cut must be positive, got {k_cut}")));
                }
                self.random_datum(*k_cut, seed)
            }
            InitialDatum::BoundStateMixture { components } => {
                let sets = self.bound_sets()?.to_vec();
                let mut f = ScalarField::zeros(&g);
                for c in components {
                    let u = sets
                        .get(c.potential)
                        .and_then(|s| s.eigenfunctions.get(c.index))
                        .ok_or_else(|| {
                            CliError::Validation(format!("no bound state {} of potential {}", c.index, c.potential))
                        })?;
                    let pot = &self.sc.potentials[c.potential];
                    f.axpy(Complex64::new(c.amplitude, 0.0), &channel_state(pot, u, s));
                }
                f
            }
            InitialDatum::ScatteringProjected { base } => {
                let base = self.datum(base, seed)?;
                let basis = self.basis_at(s)?;
                project_scattering(&base, &basis)?
            }
        };
        Ok(f)
    }

    /// Band-limited noise under a Gaussian envelope of width `L/6`, so that random data
    /// start away from the box boundary.
    fn random_datum(&self, k_cut: f64, seed: u64) -> ScalarField {
        let mut f = random_band_limited(&self.grid, k_cut, seed);
        let w = self.grid.half_length() / 6.0;
        let env = ScalarField::from_real_fn(&self.grid, |x| {
            let r2: f64 = x.iter().map(|a| a * a).sum();
            (-r2 / (2.0 * w * w)).exp()
        });
        for (z, e) in f.values_mut().iter_mut().zip(env.values()) {
            *z *= e.re;
        }
        f
    }

    fn initial(&mut self) -> Result<ScalarField, CliError> {
        let recipe = self.sc.initial.clone();
        let f = self.datum(&recipe, self.sc.seed)?;
        self.normalize(f)
    }

    fn source(&self) -> Option<SourceTerm> {
        self.sc.source.map(|s| match s {
            SourceRecipe::GaussianPulse {
                amplitude,
                center,
                width,
                t0,
                duration,
            } => SourceTerm::gaussian_pulse(amplitude, center, width, t0, duration, (2.0, 1.0)),
        })
    }

    fn matrix_only(&self) -> bool {
        self.sc.potentials.is_empty() && !self.sc.matrix_potentials.is_empty()
    }

    fn bound_stage(&mut self, report: &mut RunReport) -> Result<(), CliError> {
        let sets = self.bound_sets()?.to_vec();
        let expect = self.sc.estimators.bound_states.as_ref().and_then(|r| r.expect_counts.clone());
        for (i, set) in sets.iter().enumerate() {
            for (j, (lambda, res)) in set.eigenvalues.iter().zip(&set.residuals).enumerate() {
                report.row("bound_state", json!({"potential": i, "index": j}), *lambda, json!({"residual": res}));
            }
            report.row(
                "bound_state_count",
                json!({"potential": i}),
                set.len() as f64,
                json!({"box_states_rejected": set.box_states.len(), "gram_defect": set.gram_defect()}),
            );
        }
        if let Some(expect) = expect {
            let got: Vec<usize> = sets.iter().map(|s| s.len()).collect();
            report.assert("bound_state_counts", got == expect, format!("found {got:?}, expected {expect:?}"));
        }
        Ok(())
    }

    fn propagate_stage(&mut self, report: &mut RunReport) -> Result<(), CliError> {
        let export = self.sc.estimators.propagate.and_then(|p| p.export);
        let (s, e) = (self.sc.window.start, self.sc.window.end);
        let cfg = self.stepper(export.is_some());
        if self.matrix_only() {
            let f = self.initial()?;
            let psi = SpinorField {
                upper: f,
                lower: ScalarField::zeros(&self.grid),
            };
            let h = MatrixHamiltonian::moving(self.sc.matrix_potentials.clone());
            let trace = matrix_propagate(&h, &psi, s, e, &cfg)?;
            note_trace(report, "propagate", &trace);
            report.row("norm_drift", json!({}), trace.norm_drift(), json!({"final_time": e}));
            report.row("charge_drift", json!({}), trace.charge_drift().unwrap_or(0.0), json!({}));
            if let Some(format) = export {
                export_trace(&trace, &self.out.join("trace"), format)?;
            }
            return Ok(());
        }
        let f = self.initial()?;
        let trace = match self.source() {
            Some(src) => propagate_with_source(&self.h, &f, &src, (s, e), &cfg)?,
            None => propagate(&self.h, &f, s, e, &cfg)?,
        };
        note_trace(report, "propagate", &trace);
        report.row("norm_drift", json!({}), trace.norm_drift(), json!({"final_time": e}));
        report.row("max_boundary_mass", json!({}), trace.max_boundary_mass(), json!({}));
        report.row("final_norm", json!({}), trace.final_state.norm(), json!({}));
        if let Some(format) = export {
            export_trace(&trace, &self.out.join("trace"), format)?;
        }
        Ok(())
    }

    fn decay_stage(&mut self, report: &mut RunReport) -> Result<(), CliError> {
        let req = self.sc.estimators.decay.unwrap_or_default();
        let (s, e) = (self.sc.window.start, self.sc.window.end);
        let f = self.initial()?;
        let mut times = Vec::new();
        let mut values = Vec::new();
        let norm = req.norm;
        let trace = propagate_observed(&self.h, &f, s, e, &self.stepper(false), |t, psi| {
            times.push(t);
            values.push(match norm {
                DecayNorm::L2PlusLinf => pair_norms(psi).l2_plus_linf_upper,
                DecayNorm::Linf => lp_norm(psi, f64::INFINITY).unwrap_or(f64::NAN),
            });
        })?;
        note_trace(report, "decay", &trace);
        let name = match norm {
            DecayNorm::L2PlusLinf => "decay_l2_plus_linf",
            DecayNorm::Linf => "decay_linf",
        };
        let series = MixedNormSeries::new(times, values)?;
        let window = req.fit_window.unwrap_or((5.0_f64.max(s + 1e-9), e));
        let fit = decay_fit(&series, window)?;
        push_fit(report, name, &series, &fit);
        if let Some(range) = req.expect_exponent {
            report.assert(
                "decay_exponent",
                within(fit.exponent, range),
                format!("exponent {:.4} expected in {range:?}", fit.exponent),
            );
        }
        Ok(())
    }

    fn kato_jensen_stage(&mut self, report: &mut RunReport) -> Result<(), CliError> {
        let req = self.sc.estimators.kato_jensen.clone().unwrap_or_default();
        let w = req.weight_center.profile(req.sigma)?;
        let probe = ProbeConfig {
            iterations: req.iterations,
            probes: req.probes,
            seed: self.sc.seed,
            k_cut: req.k_cut,
            ..ProbeConfig::default()
        };
        let cfg = self.stepper(false);
        let kj: KatoJensenSeries = if self.matrix_only() {
            let spectra = self
                .sc
                .matrix_potentials
                .iter()
                .map(|m| matrix_spectrum(m, &self.grid))
                .collect::<ctlab::Result<Vec<MatrixSpectralData>>>()?;
            let refs: Vec<&MatrixSpectralData> = spectra.iter().collect();
            let h = MatrixHamiltonian::moving(self.sc.matrix_potentials.clone());
            let basis = matrix_channel_basis(req.t0, &h, &refs, &self.sc.wave_operator)?;
            if !basis.valid {
                report.diagnostics.guard_trips.extend(basis.warnings.iter().map(|w| format!("matrix basis: {w}")));
            }
            let proj = |x: &SpinorField| basis.project_scattering(x);
            matrix_kato_jensen_probe(&h, &proj, req.t0, &req.times, &w, &self.grid, &probe, &cfg)?
        } else {
            let basis = self.basis_at(req.t0)?;
            let proj = |x: &ScalarField| project_scattering(x, &basis);
            kato_jensen_probe(&self.h, &proj, req.t0, &req.times, &w, &self.grid, &probe, &cfg)?
        };
        if !kj.valid {
            report.diagnostics.guard_trips.extend(kj.warnings.iter().map(|w| format!("kato_jensen: {w}")));
        } else {
            report.warnings.extend(kj.warnings.iter().cloned());
        }
        for ((t, v), change) in kj.series.times().iter().zip(kj.series.values()).zip(&kj.last_change) {
            report.row(
                "kato_jensen_norm",
                json!({"t": t, "t0": req.t0, "sigma": req.sigma}),
                *v,
                json!({"method": kj.method, "last_change": change}),
            );
        }
        let elapsed = kj.elapsed(req.t0)?;
        let positive: Vec<f64> = elapsed.times().iter().copied().filter(|t| *t > 0.0).collect();
        let window = req
            .fit_window
            .unwrap_or((positive.first().copied().unwrap_or(1.0), positive.last().copied().unwrap_or(2.0)));
        match decay_fit(&elapsed, window) {
            Ok(fit) => {
                push_fit(report, "kato_jensen", &elapsed, &fit);
                if let Some(range) = req.expect_exponent {
                    report.assert(
                        "kato_jensen_exponent",
                        within(fit.exponent, range),
                        format!("exponent {:.4} expected in {range:?} ({})", fit.exponent, kj.method),
                    );
                }
            }
            Err(e) => report.warnings.push(format!("kato_jensen fit skipped: {e}")),
        }
        Ok(())
    }

    fn local_decay_stage(&mut self, report: &mut RunReport) -> Result<(), CliError> {
        let req = self.sc.estimators.local_decay.unwrap_or_default();
        if req.data == 0 {
            return Err(CliError::Validation("local_decay.data must be at least 1".into()));
        }
        let w = req.weight_center.profile(req.sigma)?;
        let (s, e) = (self.sc.window.start, self.sc.window.end);
        let long_end = if req.max_doubling_change.is_some() { 2.0 * e - s } else { e };
        let basis = self.basis_at(s)?;
        let cfg = self.stepper(true);
        let mut short = Vec::new();
        let mut changes = Vec::new();
        for j in 0..req.data {
            let raw = self.random_datum(req.k_cut, self.sc.seed.wrapping_add(1000 + j as u64));
            let f = self.normalize(project_scattering(&raw, &basis)?)?;
            let trace = propagate(&self.h, &f, s, long_end, &cfg)?;
            note_trace(report, "local_decay", &trace);
            let r = local_decay_norm(&truncate(&trace, e), &w)?;
            report.row("local_decay_ratio", json!({"datum": j, "window": [s, e], "sigma": req.sigma}), r, json!({}));
            if long_end > e {
                let r2 = local_decay_norm(&trace, &w)?;
                report.row("local_decay_ratio", json!({"datum": j, "window": [s, long_end], "sigma": req.sigma}), r2, json!({}));
                changes.push((r2 - r) / r);
            }
            short.push(r);
        }
        let sp = spread(&short);
        report.row("local_decay_spread", json!({"data": req.data}), sp, json!({"min": short.iter().copied().fold(f64::INFINITY, f64::min)}));
        if let Some(max) = req.max_spread {
            report.assert("local_decay_spread", sp <= max, format!("max/min {sp:.4} (bound {max})"));
        }
        if let Some(max) = req.max_doubling_change {
            let worst = changes.iter().map(|c| c.abs()).fold(0.0, f64::max);
            report.row("local_decay_doubling_change", json!({}), worst, json!({}));
            report.assert("local_decay_doubling", worst <= max, format!("relative change {worst:.4} (bound {max})"));
        }
        Ok(())
    }

    fn strichartz_stage(&mut self, report: &mut RunReport) -> Result<(), CliError> {
        let req = self.sc.estimators.strichartz.unwrap_or_default();
        let pairs = admissible_pairs(self.grid.dim(), req.pairs.max(1))?;
        let (s, e) = (self.sc.window.start, self.sc.window.end);
        let long_end = if req.doubling { 2.0 * e - s } else { e };
        let cfg = self.stepper(true);
        let basis = self.basis_at(s)?;
        let mut data = vec![self.initial()?];
        for j in 0..req.random_data {
            let raw = self.random_datum(req.k_cut, self.sc.seed.wrapping_add(2000 + j as u64));
            data.push(self.normalize(project_scattering(&raw, &basis)?)?);
        }
        // ratios[pair][datum] = (short window, long window)
        let mut ratios = vec![Vec::new(); pairs.len()];
        for (j, f) in data.iter().enumerate() {
            let trace = propagate(&self.h, f, s, long_end, &cfg)?;
            note_trace(report, "strichartz", &trace);
            let short = truncate(&trace, e);
            for (k, pair) in pairs.iter().enumerate() {
                let a = strichartz_ratio(&short, pair)?;
                let b = if req.doubling { strichartz_ratio(&trace, pair)? } else { a };
                report.row("strichartz_ratio", pair_params(pair, j, (s, e)), a, json!({"outside_hypothesis": pair.outside_hypothesis}));
                if req.doubling {
                    report.row("strichartz_ratio", pair_params(pair, j, (s, long_end)), b, json!({}));
                }
                ratios[k].push((a, b));
            }
        }
        for (pair, rs) in pairs.iter().zip(&ratios) {
            let short: Vec<f64> = rs.iter().map(|r| r.0).collect();
            let sp = spread(&short);
            let growth = rs.iter().map(|(a, b)| (b - a) / a).fold(0.0, f64::max);
            report.row("strichartz_spread", json!({"p": exponent(pair.p), "q": exponent(pair.q)}), sp, json!({"data": rs.len()}));
            report.row("strichartz_doubling_growth", json!({"p": exponent(pair.p), "q": exponent(pair.q)}), growth, json!({}));
            if let Some(max) = req.max_spread {
                report.assert(&format!("strichartz_spread_{}", pair_label(pair)), sp <= max, format!("max/min {sp:.4} (bound {max})"));
            }
            if let Some(max) = req.max_doubling_growth {
                report.assert(&format!("strichartz_doubling_{}", pair_label(pair)), growth <= max, format!("growth {growth:.4} (bound {max})"));
            }
        }
        if let Some(src) = self.source() {
            let zero = ScalarField::zeros(&self.grid);
            let trace = propagate_with_source(&self.h, &zero, &src, (s, long_end), &cfg)?;
            note_trace(report, "inhomogeneous", &trace);
            let bases = if basis.u_tilde.is_empty() && basis.w_tilde.is_empty() {
                Vec::new()
            } else {
                trace.times.iter().map(|t| self.basis_at(*t)).collect::<Result<Vec<_>, _>>()?
            };
            let projector = |t: f64, x: &ScalarField| match bases.iter().find(|b| (b.anchor_time - t).abs() < 1e-9) {
                Some(b) => project_scattering(x, b),
                None => Ok(x.clone()),
            };
            for pair in &pairs {
                let a = inhomogeneous_ratio(&truncate(&trace, e), &src, pair, pair, projector)?;
                let b = inhomogeneous_ratio(&trace, &src, pair, pair, projector)?;
                let growth = (b - a) / a;
                report.row("inhomogeneous_ratio", pair_params(pair, 0, (s, e)), a, json!({"dual": [exponent(pair.p), exponent(pair.q)]}));
                report.row("inhomogeneous_ratio", pair_params(pair, 0, (s, long_end)), b, json!({"dual": [exponent(pair.p), exponent(pair.q)]}));
                if let Some(max) = req.max_doubling_growth {
                    report.assert(
                        &format!("inhomogeneous_doubling_{}", pair_label(pair)),
                        growth <= max,
                        format!("growth {growth:.4} (bound {max})"),
                    );
                }
            }
        }
        Ok(())
    }

    fn ac_stage(&mut self, report: &mut RunReport) -> Result<(), CliError> {
        let req = self.sc.estimators.ac.unwrap_or_default();
        let (s, e) = (self.sc.window.start, self.sc.window.end);
        let t_check = req.intertwining_at.unwrap_or(e);
        let sets = self.bound_sets()?.to_vec();
        if sets.is_empty() || sets.len() > 2 {
            return Err(CliError::Validation(format!(
                "asymptotic completeness checks need one or two scalar potentials, got {}",
                sets.len()
            )));
        }
        let empty = BoundStateSet::empty();
        let (bs1, bs2) = (&sets[0], sets.get(1).unwrap_or(&empty));
        let at_s = self.basis_at(s)?;
        let at_t = self.basis_at(t_check)?;
        let overlap = at_s.max_raw_overlap();
        report.row("channel_raw_overlap", json!({"t": s}), overlap, json!({"gram_defect": at_s.gram_defect()}));
        for (i, tail) in at_s.tail_estimates.iter().enumerate() {
            report.row("wave_operator_tail", json!({"vector": i, "horizon": self.sc.wave_operator.horizon}), *tail, json!({}));
        }
        if let Some(max) = req.max_overlap {
            report.assert("channel_overlap", overlap <= max, format!("raw overlap {overlap:.3e} (bound {max:.1e})"));
        }

        let f = self.initial()?;
        let scattering = project_scattering(&f, &at_s)?;
        let res = ac_residual(&scattering, s, e, &self.h, bs1, bs2, &self.sc.stepper)?;
        if !res.valid {
            report.diagnostics.guard_trips.extend(res.warnings.iter().map(|w| format!("ac_residual: {w}")));
        }
        let v = res.series.values();
        let last = res.final_value();
        let third = (v.len() / 3).max(1);
        let head = v[..third].iter().sum::<f64>() / third as f64;
        let tail = v[v.len() - third..].iter().sum::<f64>() / third as f64;
        report.row("ac_residual", json!({"t": e}), last, json!({"early_mean": head, "late_mean": tail}));
        report.series.push(Series {
            name: "ac_residual".into(),
            times: res.series.times().to_vec(),
            values: v.to_vec(),
            fit: None,
        });
        if let Some(max) = req.max_residual {
            report.assert("ac_residual", last <= max && tail <= head, format!("final {last:.3e}, late mean {tail:.3e} vs early {head:.3e}"));
        }
        let defect = intertwining_defect_with(&f, &at_s, &at_t, &self.h, &self.sc.stepper)?;
        report.row("intertwining_defect", json!({"s": s, "t": t_check}), defect, json!({}));
        if let Some(max) = req.max_intertwining {
            report.assert("intertwining", defect <= max, format!("defect {defect:.3e} (bound {max:.1e})"));
        }
        Ok(())
    }

    fn matrix_stage(&mut self, report: &mut RunReport) -> Result<(), CliError> {
        let req = self.sc.estimators.matrix.unwrap_or_default();
        if self.sc.matrix_potentials.is_empty() {
            return Err(CliError::Validation("matrix-diagnose needs at least one matrix potential".into()));
        }
        for (i, ms) in self.sc.matrix_potentials.iter().enumerate() {
            let data = matrix_spectrum(ms, &self.grid)?;
            let adm = admissibility_report_from(&data);
            for c in &adm.conditions {
                report.row(
                    "admissibility",
                    json!({"potential": i, "condition": c.condition, "check": c.check}),
                    verdict_value(c.verdict),
                    json!({"verdict": format!("{:?}", c.verdict), "detail": c.detail}),
                );
            }
            report.assert(&format!("admissible_{i}"), adm.admissible(), format!("{} conditions checked", adm.conditions.len()));
            for d in &data.discrete {
                report.row(
                    "discrete_eigenvalue",
                    json!({"potential": i}),
                    d.value.re,
                    json!({"im": d.value.im, "kernel_dimensions": d.kernel_dimensions, "jordan_order": d.jordan_order, "cluster_size": d.cluster_size}),
                );
            }
            report.warnings.extend(data.warnings.iter().cloned());
            let probe = stability_probe_with(&data, req.stability_horizon, req.probes, req.probe_dt, self.sc.seed)?;
            report.row(
                "stability_slope",
                json!({"potential": i, "horizon": req.stability_horizon, "probes": req.probes}),
                probe.slope,
                json!({"loglog_exponent": probe.loglog_exponent}),
            );
            if let Some(max) = req.max_slope {
                report.assert(&format!("stability_{i}"), probe.slope.abs() <= max, format!("slope {:.3e} (bound {max:.1e})", probe.slope));
            }
            if data.discrete.iter().any(|d| d.jordan_order >= 2 && d.value.norm() < 1e-4) {
                let growth = linear_growth_probe(&data, req.growth_horizon, req.probe_dt)?;
                let series = MixedNormSeries::new(growth.times.clone(), growth.norms.clone())?;
                let fit = decay_fit(&series, (0.1 * req.growth_horizon, req.growth_horizon))?;
                push_fit(report, &format!("jordan_growth_{i}"), &series, &fit);
            }
            if ms.velocity == [0.0; 3] && ms.offset == [0.0; 3] && self.sc.matrix_potentials.len() == 1 {
                self.frame_check(report, ms)?;
            }
        }
        Ok(())
    }

    /// Lab flow against `M(t)^{-1} e^{-itH} M(0)` at `t = min(1, window length)`.
    fn frame_check(&mut self, report: &mut RunReport, ms: &ctlab::potentials::MatrixPotentialSpec) -> Result<(), CliError> {
        let t = (self.sc.window.end - self.sc.window.start).min(1.0);
        let f = self.initial()?;
        let psi = SpinorField {
            lower: f.conj(),
            upper: f,
        };
        let cfg = self.stepper(false);
        let lab = matrix_propagate(&MatrixHamiltonian::moving(vec![*ms]), &psi, 0.0, t, &cfg)?;
        note_trace(report, "frame_check", &lab);
        let mp = |time| ModulationParams {
            alpha: ms.alpha,
            gamma: ms.gamma,
            time,
        };
        let stat = matrix_propagate(&MatrixHamiltonian::stationary(*ms), &modulation(&psi, &mp(0.0)), 0.0, t, &cfg)?;
        let reduced = modulation_inverse(&stat.final_state, &mp(t));
        let err = lab.final_state.sub(&reduced).norm() / psi.norm();
        report.row("frame_reduction_error", json!({"t": t}), err, json!({"charge_drift": lab.charge_drift()}));
        if let Some(max) = self.sc.estimators.matrix.and_then(|m| m.max_frame_error) {
            report.assert("frame_reduction", err <= max, format!("relative error {err:.3e} (bound {max:.1e})"));
        }
        Ok(())
    }

    fn oracle_stage(&mut self, report: &mut RunReport) -> Result<(), CliError> {
        let req = self.sc.estimators.oracle.unwrap_or_default();
        if self.grid.len() > DENSE_LIMIT {
            return Err(ctlab::Error::GridTooLarge {
                points: self.grid.len(),
                limit: DENSE_LIMIT,
            }
            .into());
        }
        let (s, e) = (self.sc.window.start, self.sc.window.end);
        let f = self.initial()?;
        let reference = oracle_propagate(&self.h, &f, s, e, req.oracle_dt)?;
        let dt = self.sc.stepper.dt;
        let mut errors = Vec::new();
        for k in 0..2 {
            let cfg = StepperConfig {
                dt: dt / f64::from(1 << k),
                ..self.stepper(false)
            };
            let run = propagate(&self.h, &f, s, e, &cfg)?;
            note_trace(report, "oracle", &run);
            let err = run.final_state.sub(&reference).norm() / reference.norm();
            report.row("oracle_error", json!({"dt": cfg.dt, "oracle_dt": req.oracle_dt}), err, json!({}));
            errors.push(err);
        }
        let ratio = errors[0] / errors[1];
        report.row("oracle_halving_ratio", json!({"dt": dt}), ratio, json!({}));
        if let Some(max) = req.max_error {
            report.assert("oracle_error", errors[0] <= max, format!("relative error {:.3e} (bound {max:.1e})", errors[0]));
        }
        Ok(())
    }
}

/// Lebesgue exponent as JSON; infinity becomes `"inf"` instead of `null`.
fn exponent(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!("inf")
    }
}

fn pair_label(pair: &AdmissiblePair) -> String {
    let e = |x: f64| if x.is_finite() { format!("{x}") } else { "inf".into() };
    format!("p{}_q{}", e(pair.p), e(pair.q))
}

fn pair_params(pair: &AdmissiblePair, datum: usize, window: (f64, f64)) -> serde_json::Value {
    json!({"p": exponent(pair.p), "q": exponent(pair.q), "datum": datum, "window": [window.0, window.1]})
}

fn push_fit(report: &mut RunReport, name: &str, series: &MixedNormSeries, fit: &DecayFit) {
    report.row(
        &format!("{name}_exponent"),
        json!({"window": [fit.window.0, fit.window.1]}),
        fit.exponent,
        json!({"intercept": fit.intercept, "residual": fit.residual, "samples": fit.samples}),
    );
    report.series.push(Series {
        name: name.to_string(),
        times: series.times().to_vec(),
        values: series.values().to_vec(),
        fit: Some(*fit),
    });
}

