use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;

use super::*;
use crate::gridfield::Vec3;
use crate::potentials::PotentialSpec;
use crate::symmetries::{galilei, galilei_inverse, modulation, modulation_inverse, GalileiParams, ModulationParams};

/// Closed-form free evolution of `exp(-|x - x0|^2 / (2 s^2) + i k0.x)` on R^n.
pub(crate) fn analytic_gaussian(dim: usize, s: f64, x0: Vec3, k0: Vec3, t: f64, x: &Vec3) -> Complex64 {
    let a = Complex64::new(s * s, t);
    let mut r2 = Complex64::new(0.0, 0.0);
    let mut phase = 0.0;
    let mut k2 = 0.0;
    for i in 0..dim {
        let d = x[i] - x0[i] - k0[i] * t;
        r2 += d * d;
        phase += k0[i] * x[i];
        k2 += k0[i] * k0[i];
    }
    let pre = (Complex64::new(s * s, 0.0) / a).powf(0.5 * dim as f64);
    pre * (-r2 / (2.0 * a) + Complex64::new(0.0, phase - 0.5 * k2 * t)).exp()
}

fn gaussian(g: &Grid, s: f64, x0: Vec3, k0: Vec3) -> ScalarField {
    let dim = g.dim();
    ScalarField::from_fn(g, |x| analytic_gaussian(dim, s, x0, k0, 0.0, x))
}

fn rel(a: &ScalarField, b: &ScalarField) -> f64 {
    a.sub(b).norm() / b.norm()
}

fn well(amplitude: f64, width: f64) -> ScalarHamiltonian {
    ScalarHamiltonian::new(vec![MovingPotential::stationary(PotentialSpec::gaussian(amplitude, width))])
}

fn quiet(dt: f64) -> StepperConfig {
    StepperConfig {
        dt,
        boundary_mass_guard: 1.0,
        ..StepperConfig::default()
    }
}

#[test]
fn free_flow_identity_and_plane_wave() {
    let g = Grid::new(2, 16, 3.0).unwrap();
    let f = gaussian(&g, 0.8, [0.2, 0.0, 0.0], [1.0, 0.0, 0.0]);
    assert_eq!(free_propagate(&f, 0.0).values(), f.values());

    let dk = g.dual_spacing();
    let k = [3.0 * dk, -2.0 * dk, 0.0];
    let wave = ScalarField::from_fn(&g, |x| Complex64::from_polar(1.0, k[0] * x[0] + k[1] * x[1]));
    let tau = 0.37;
    let out = free_propagate(&wave, tau);
    let expected = wave.scaled(Complex64::from_polar(1.0, -0.5 * (k[0] * k[0] + k[1] * k[1]) * tau));
    assert!(rel(&out, &expected) < 1e-13);
}

#[test]
fn free_flow_matches_dispersing_gaussian() {
    let g = Grid::new(3, 64, 15.0).unwrap();
    let (s, x0, k0) = (1.3, [0.5, -0.3, 0.0], [0.4, 0.0, -0.2]);
    let t = 1.5;
    let out = free_propagate(&gaussian(&g, s, x0, k0), t);
    let exact = ScalarField::from_fn(&g, |x| analytic_gaussian(3, s, x0, k0, t, x));
    assert!(rel(&out, &exact) < 1e-10, "{}", rel(&out, &exact));
}

#[test]
fn empty_hamiltonian_reproduces_free_flow() {
    let g = Grid::new(2, 32, 8.0).unwrap();
    let f = gaussian(&g, 1.0, [0.0; 3], [0.5, 0.5, 0.0]);
    let tr = propagate(&ScalarHamiltonian::free(), &f, 0.0, 1.3, &quiet(0.05)).unwrap();
    assert!(rel(&tr.final_state, &free_propagate(&f, 1.3)) < 1e-12);
    assert!((tr.end_time() - 1.3).abs() < 1e-15);
}

#[test]
fn snapshots_follow_schedule_and_norm_is_kept() {
    let g = Grid::new(1, 128, 20.0).unwrap();
    let f = gaussian(&g, 1.0, [0.0; 3], [1.0, 0.0, 0.0]);
    let cfg = StepperConfig {
        dt: 0.01,
        snapshot_every: 10,
        ..quiet(0.01)
    };
    let tr = propagate(&well(-2.0, 1.0), &f, 0.0, 1.05, &cfg).unwrap();
    assert_eq!(tr.times.len(), 12);
    assert_eq!(tr.fields.len(), 12);
    assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    assert!((tr.times[3] - 0.3).abs() < 1e-12);
    assert!(tr.norm_drift() < 1e-10 * 1.05);
}

#[test]
fn boundary_guard_flags_run() {
    let g = Grid::new(1, 64, 8.0).unwrap();
    let f = gaussian(&g, 1.0, [0.0; 3], [4.0, 0.0, 0.0]);
    let tr = propagate(&ScalarHamiltonian::free(), &f, 0.0, 2.0, &StepperConfig::with_dt(0.05)).unwrap();
    assert!(!tr.valid);
    assert!(!tr.warnings.is_empty());
}

#[test]
fn split_step_matches_dense_oracle() {
    let g = Grid::new(1, 128, 12.0).unwrap();
    let h = well(-1.5, 1.2);
    let f = gaussian(&g, 1.0, [1.0, 0.0, 0.0], [0.5, 0.0, 0.0]);
    let reference = oracle_propagate(&h, &f, 0.0, 1.0, 1e-4).unwrap();
    let errors: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|dt| rel(&propagate(&h, &f, 0.0, 1.0, &quiet(*dt)).unwrap().final_state, &reference))
        .collect();
    assert!(errors[2] < 1e-5, "{errors:?}");
    let r1 = errors[0] / errors[1];
    let r2 = errors[1] / errors[2];
    assert!((3.5..=4.5).contains(&r1) && (3.5..=4.5).contains(&r2), "{errors:?}");
}

#[test]
fn oracle_basics() {
    let g = Grid::new(1, 64, 10.0).unwrap();
    let h = well(-1.0, 1.0);
    let f = gaussian(&g, 1.0, [0.0; 3], [0.3, 0.0, 0.0]);
    let same = oracle_propagate(&h, &f, 0.5, 0.5, 0.01).unwrap();
    assert_eq!(same.values(), f.values());

    let out = oracle_propagate(&h, &f, 0.0, 1.0, 0.01).unwrap();
    assert!((out.norm() - f.norm()).abs() < 1e-12);

    // self-convergence against a quarter-step reference
    let fine = oracle_propagate(&h, &f, 0.0, 1.0, 0.0025).unwrap();
    let e1 = rel(&oracle_propagate(&h, &f, 0.0, 1.0, 0.02).unwrap(), &fine);
    let e2 = rel(&oracle_propagate(&h, &f, 0.0, 1.0, 0.01).unwrap(), &fine);
    let ratio = e1 / e2;
    assert!((3.5..=4.5).contains(&ratio), "{ratio}");

    let big = Grid::new(3, 32, 5.0).unwrap();
    assert!(matches!(
        oracle_propagate(&h, &ScalarField::zeros(&big), 0.0, 1.0, 0.1),
        Err(crate::Error::GridTooLarge { .. })
    ));
}

#[test]
fn finite_difference_oracle_converges_to_spectral() {
    let g = Grid::new(1, 128, 12.0).unwrap();
    let h = well(-1.0, 1.0);
    let f = gaussian(&g, 1.5, [0.0; 3], [0.0; 3]);
    let spec = oracle_propagate(&h, &f, 0.0, 0.5, 0.005).unwrap();
    let fd = oracle_propagate_with(&h, &f, 0.0, 0.5, 0.005, OracleKinetic::FiniteDifference).unwrap();
    let err = rel(&fd, &spec);
    assert!(err < 1e-2 && err > 1e-8, "{err}");
}

#[test]
fn group_property_and_reversibility() {
    let g = Grid::new(2, 32, 10.0).unwrap();
    let h = ScalarHamiltonian::new(vec![
        MovingPotential::stationary(PotentialSpec::gaussian(-1.0, 1.0)),
        MovingPotential::new(PotentialSpec::gaussian(-0.5, 1.0), [0.5, 0.0, 0.0], [-2.0, 1.0, 0.0]),
    ]);
    let f = gaussian(&g, 1.0, [1.0, 0.0, 0.0], [0.0, 0.5, 0.0]);
    let cfg = quiet(0.02);
    let direct = propagate(&h, &f, 0.0, 1.2, &cfg).unwrap().final_state;
    let mid = propagate(&h, &f, 0.0, 0.6, &cfg).unwrap().final_state;
    let split = propagate(&h, &mid, 0.6, 1.2, &cfg).unwrap().final_state;
    assert!(rel(&split, &direct) < 1e-10);
    let back = propagate(&h, &direct, 1.2, 0.0, &cfg).unwrap().final_state;
    assert!(rel(&back, &f) < 1e-10);
}

#[test]
fn moving_potential_is_galilei_covariant() {
    let g = Grid::new(1, 256, 16.0 * PI / 2.0).unwrap();
    let dk = g.dual_spacing();
    let spec = PotentialSpec::gaussian(-1.0, 1.0);
    let f = gaussian(&g, 1.2, [2.0, 0.0, 0.0], [0.5, 0.0, 0.0]);
    let cfg = quiet(0.01);
    for (m, y) in [(2, 0.7), (-3, -1.1), (5, 0.0)] {
        let v = [m as f64 * dk, 0.0, 0.0];
        let gp = GalileiParams::new(v, [y, 0.0, 0.0], 0.0);
        let moving = ScalarHamiltonian::new(vec![MovingPotential::new(spec, v, [y, 0.0, 0.0])]);
        let t = 1.5;
        let lab = propagate(&moving, &f, 0.0, t, &cfg).unwrap().final_state;
        let still = propagate(&ScalarHamiltonian::new(vec![MovingPotential::stationary(spec)]), &galilei(&f, &gp), 0.0, t, &cfg)
            .unwrap()
            .final_state;
        let via = galilei_inverse(&still, &gp.at_time(t));
        assert!(rel(&lab, &via) < 1e-6, "m={m}: {}", rel(&lab, &via));
    }
}

#[test]
fn source_with_zero_amplitude_is_plain_propagation() {
    let g = Grid::new(1, 64, 10.0).unwrap();
    let h = well(-1.0, 1.0);
    let f = gaussian(&g, 1.0, [0.0; 3], [0.2, 0.0, 0.0]);
    let zero = SourceTerm::new((1.0, 2.0), |_, g| ScalarField::zeros(g));
    let a = propagate_with_source(&h, &f, &zero, (0.0, 1.0), &quiet(0.01)).unwrap().final_state;
    let b = propagate(&h, &f, 0.0, 1.0, &quiet(0.01)).unwrap().final_state;
    assert!(rel(&a, &b) < 1e-13);
}

#[test]
fn plane_wave_source_matches_duhamel_sum() {
    let g = Grid::new(1, 32, PI * 4.0).unwrap();
    let k = 3.0 * g.dual_spacing();
    let omega = 0.5 * k * k;
    let wave = ScalarField::from_fn(&g, |x| Complex64::from_polar(1.0, k * x[0]));
    let w2 = wave.clone();
    let src = SourceTerm::new((1.0, 2.0), move |_, _| w2.clone());
    let (t, dt) = (2.0, 0.01);
    let out = propagate_with_source(&ScalarHamiltonian::free(), &ScalarField::zeros(&g), &src, (0.0, t), &quiet(dt))
        .unwrap()
        .final_state;
    let coef = wave.inner(&out) / wave.norm_sqr();
    // midpoint rule: -i dt e^{-i w dt/2} sum_j e^{-i w dt j}
    let n = (t / dt).round() as i32;
    let q = Complex64::from_polar(1.0, -omega * dt);
    let geometric = Complex64::new(0.0, -dt) * Complex64::from_polar(1.0, -0.5 * omega * dt) * (Complex64::new(1.0, 0.0) - q.powi(n))
        / (Complex64::new(1.0, 0.0) - q);
    assert!((coef - geometric).norm() < 1e-12, "{coef} vs {geometric}");
    // exact Duhamel integral -(1 - e^{-i w t}) / w, second order in dt
    let exact = -(Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, -omega * t)) / omega;
    assert!((coef - exact).norm() < (omega * dt).powi(2) / 12.0 * exact.norm() + 1e-14);
}

#[test]
fn source_runs_are_linear() {
    let g = Grid::new(1, 64, 10.0).unwrap();
    let h = ScalarHamiltonian::new(vec![MovingPotential::new(PotentialSpec::gaussian(-1.0, 1.0), [0.5, 0.0, 0.0], [0.0; 3])]);
    let f1 = gaussian(&g, 1.0, [0.0; 3], [0.2, 0.0, 0.0]);
    let f2 = gaussian(&g, 0.7, [1.0, 0.0, 0.0], [-0.4, 0.0, 0.0]);
    let s1 = SourceTerm::gaussian_pulse(1.0, [0.0; 3], 1.0, 0.5, 0.2, (1.0, 2.0));
    let s2 = SourceTerm::gaussian_pulse(-0.5, [2.0, 0.0, 0.0], 0.8, 0.3, 0.3, (1.0, 2.0));
    let sum = SourceTerm::new((1.0, 2.0), {
        let (a, b) = (
            SourceTerm::gaussian_pulse(1.0, [0.0; 3], 1.0, 0.5, 0.2, (1.0, 2.0)),
            SourceTerm::gaussian_pulse(-0.5, [2.0, 0.0, 0.0], 0.8, 0.3, 0.3, (1.0, 2.0)),
        );
        move |t, g| a.eval(t, g).add(&b.eval(t, g))
    });
    let cfg = quiet(0.01);
    let a = propagate_with_source(&h, &f1, &s1, (0.0, 1.0), &cfg).unwrap().final_state;
    let b = propagate_with_source(&h, &f2, &s2, (0.0, 1.0), &cfg).unwrap().final_state;
    let c = propagate_with_source(&h, &f1.add(&f2), &sum, (0.0, 1.0), &cfg).unwrap().final_state;
    assert!(rel(&a.add(&b), &c) < 1e-12);
}

fn matrix_spec(alpha: f64, gamma: f64) -> MatrixPotentialSpec {
    MatrixPotentialSpec {
        u_profile: PotentialSpec::gaussian(-1.0, 1.0),
        w_profile: PotentialSpec::gaussian(0.3, 1.0),
        alpha,
        gamma,
        velocity: [0.0; 3],
        offset: [0.0; 3],
    }
}

fn spinor(g: &Grid) -> SpinorField {
    SpinorField::new(
        gaussian(g, 1.0, [0.5, 0.0, 0.0], [0.3, 0.0, 0.0]),
        gaussian(g, 1.3, [-0.5, 0.0, 0.0], [0.0; 3]).scaled(Complex64::new(0.0, 0.5)),
    )
    .unwrap()
}

#[test]
fn free_matrix_flow_decouples() {
    let g = Grid::new(1, 64, 10.0).unwrap();
    let psi = spinor(&g);
    let out = matrix_propagate(&MatrixHamiltonian::free(), &psi, 0.0, 0.8, &quiet(0.05)).unwrap().final_state;
    assert!(rel(&out.upper, &free_propagate(&psi.upper, 0.8)) < 1e-12);
    assert!(rel(&out.lower, &free_propagate(&psi.lower, -0.8)) < 1e-12);
}

#[test]
fn matrix_frame_reduction() {
    let g = Grid::new(1, 128, 12.0).unwrap();
    let ms = matrix_spec(0.9, 0.4);
    let psi = spinor(&g);
    let cfg = quiet(0.002);
    let t = 1.0;
    let lab = matrix_propagate(&MatrixHamiltonian::moving(vec![ms]), &psi, 0.0, t, &cfg).unwrap();
    let m0 = ModulationParams { alpha: ms.alpha, gamma: ms.gamma, time: 0.0 };
    let stat = matrix_propagate(&MatrixHamiltonian::stationary(ms), &modulation(&psi, &m0), 0.0, t, &cfg).unwrap();
    let via = modulation_inverse(&stat.final_state, &ModulationParams { time: t, ..m0 });
    let err = lab.final_state.sub(&via).norm() / via.norm();
    assert!(err < 1e-6, "{err}");
    assert!(lab.charge_drift().unwrap() < 1e-8 * t);
}

#[test]
fn matrix_stepper_matches_oracle_and_keeps_charge() {
    let g = Grid::new(1, 64, 10.0).unwrap();
    let mut ms = matrix_spec(1.0, 0.0);
    ms.w_profile.amplitude = 1.2; // U^2 - W^2 changes sign inside the well
    let h = MatrixHamiltonian::moving(vec![ms]);
    let psi = spinor(&g);
    let split = matrix_propagate(&h, &psi, 0.0, 1.0, &quiet(0.001)).unwrap();
    let oracle = oracle_propagate_matrix(&h, &psi, 0.0, 1.0, 0.001).unwrap();
    let err = split.final_state.sub(&oracle).norm() / oracle.norm();
    assert!(err < 1e-5, "{err}");
    assert!((oracle.charge() - psi.charge()).abs() < 1e-8);
    assert!(split.charge_drift().unwrap() < 1e-8);
}

#[test]
fn growth_envelope_flags_runs() {
    let g = Grid::new(1, 64, 10.0).unwrap();
    let psi = spinor(&g);
    let cfg = StepperConfig {
        growth_envelope: Some(GrowthEnvelope { constant: 0.5, exponent: 0.0 }),
        ..quiet(0.05)
    };
    let tr = matrix_propagate(&MatrixHamiltonian::free(), &psi, 0.0, 0.5, &cfg).unwrap();
    assert!(!tr.valid);
}

#[test]
fn trace_export_round_trip() {
    let g = Grid::new(1, 16, 4.0).unwrap();
    let psi = spinor(&g);
    let tr = matrix_propagate(&MatrixHamiltonian::free(), &psi, 0.0, 0.2, &StepperConfig { snapshot_every: 2, ..quiet(0.05) }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = export_trace(&tr, dir.path(), TraceFormat::Binary).unwrap();
    assert_eq!(manifest.files.len(), tr.times.len());
    let bytes = std::fs::read(dir.path().join(&manifest.files[1])).unwrap();
    assert_eq!(bytes.len(), 2 * 16 * 16);
    let re = f64::from_le_bytes(bytes[16 * 16..16 * 16 + 8].try_into().unwrap());
    assert_eq!(re, tr.fields[1].lower.values()[0].re);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(json["components"], 2);

    let csv_dir = tempfile::tempdir().unwrap();
    let scalar = propagate(&ScalarHamiltonian::free(), &psi.upper, 0.0, 0.1, &quiet(0.05)).unwrap();
    let m = export_trace(&scalar, csv_dir.path(), TraceFormat::Csv).unwrap();
    let text = std::fs::read_to_string(csv_dir.path().join(&m.files[0])).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,x1,re1,im1"));
    assert_eq!(lines.count(), 16);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn propagation_is_unitary(amp in -3.0f64..0.0, v in -1.0f64..1.0, t in 0.1f64..2.0) {
        let g = Grid::new(1, 64, 12.0).unwrap();
        let h = ScalarHamiltonian::new(vec![MovingPotential::new(PotentialSpec::sech(amp, 1.0), [v, 0.0, 0.0], [0.0; 3])]);
        let f = gaussian(&g, 1.0, [0.0; 3], [0.5, 0.0, 0.0]);
        let tr = propagate(&h, &f, 0.0, t, &quiet(0.01)).unwrap();
        prop_assert!(tr.norm_drift() <= 1e-10 * t.max(1.0));
    }
}
