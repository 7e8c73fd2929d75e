use super::*;
use crate::propagator::propagate_with_source;
use crate::symmetries::{galilei, GalileiParams};
use proptest::prelude::*;

fn gaussian(g: &Grid, sigma: f64) -> ScalarField {
    let mut f = ScalarField::from_real_fn(g, |x| (-x[0] * x[0] / (2.0 * sigma * sigma)).exp());
    f.normalize();
    f
}

fn stepper(dt: f64, every: usize) -> StepperConfig {
    StepperConfig {
        dt,
        snapshot_every: every,
        boundary_mass_guard: 1.0,
        ..StepperConfig::default()
    }
}

#[test]
fn three_dimensional_endpoint_is_two_six() {
    let end = AdmissiblePair::endpoint(3).unwrap();
    assert_eq!((end.p, end.q), (2.0, 6.0));
    assert!(end.satisfies_identity());
    assert!(!end.outside_hypothesis);
}

#[test]
fn enumeration_runs_from_energy_pair_to_endpoint() {
    let pairs = admissible_pairs(3, 3).unwrap();
    let pq: Vec<(f64, f64)> = pairs.iter().map(|a| (a.p, a.q)).collect();
    assert_eq!(pq, vec![(f64::INFINITY, 2.0), (4.0, 3.0), (2.0, 6.0)]);
    for n in 1..=3 {
        let first = admissible_pairs(n, 5).unwrap()[0];
        assert_eq!((first.p, first.q), (f64::INFINITY, 2.0));
    }
}

#[test]
fn low_dimensions_are_flagged() {
    let one = admissible_pairs(1, 4).unwrap();
    assert!(one.iter().all(|a| a.outside_hypothesis && a.satisfies_identity()));
    assert_eq!((one[3].p, one[3].q), (4.0, f64::INFINITY));
    let two = AdmissiblePair::endpoint(2).unwrap();
    assert_eq!((two.p, two.q), (2.0, f64::INFINITY));
}

#[test]
fn off_line_rationals_are_rejected() {
    assert!(AdmissiblePair::from_inverse_p(3, 3, 4).is_err());
    assert!(AdmissiblePair::from_inverse_p(1, 1, 2).is_err());
    assert!(AdmissiblePair::from_inverse_p(4, 0, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_emitted_pair_is_admissible(n in 1usize..=3, count in 0usize..40) {
        let pairs = admissible_pairs(n, count).unwrap();
        prop_assert_eq!(pairs.len(), count);
        for a in &pairs {
            prop_assert!(a.satisfies_identity());
            prop_assert!(a.p >= 2.0);
            prop_assert!((2.0 / a.p - (n as f64 / 2.0 - n as f64 / a.q)).abs() < 1e-12);
        }
    }

    #[test]
    fn decay_fit_ignores_constant_factors(exponent in -3.0f64..1.0, scale in 1e-3f64..1e3) {
        let times: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let vals: Vec<f64> = times.iter().map(|t| t.powf(exponent) * (1.0 + 0.1 * (t * 1.7).sin())).collect();
        let a = decay_fit(&MixedNormSeries::new(times.clone(), vals.clone()).unwrap(), (1.0, 20.0)).unwrap();
        let scaled: Vec<f64> = vals.iter().map(|v| v * scale).collect();
        let b = decay_fit(&MixedNormSeries::new(times, scaled).unwrap(), (1.0, 20.0)).unwrap();
        prop_assert!((a.exponent - b.exponent).abs() < 1e-9);
        prop_assert!((a.residual - b.residual).abs() < 1e-9);
    }
}

#[test]
fn planted_power_law_is_recovered() {
    let times: Vec<f64> = (0..40).map(|i| 5.0 + i as f64).collect();
    let vals: Vec<f64> = times.iter().map(|t| 3.0 * t.powf(-1.5)).collect();
    let fit = decay_fit(&MixedNormSeries::new(times.clone(), vals).unwrap(), (5.0, 40.0)).unwrap();
    assert!((fit.exponent + 1.5).abs() < 1e-9);
    assert!((fit.intercept - 3.0f64.ln()).abs() < 1e-9);
    assert!(fit.residual < 1e-9);
    assert_eq!(fit.samples, 36);

    let flat = decay_fit(&MixedNormSeries::new(times.clone(), vec![2.0; 40]).unwrap(), (5.0, 40.0)).unwrap();
    assert!(flat.exponent.abs() < 1e-12);
}

#[test]
fn decay_fit_rejects_bad_windows() {
    let times: Vec<f64> = (1..=10).map(|i| i as f64).collect();
    let mut vals = vec![1.0; 10];
    assert!(decay_fit(&MixedNormSeries::new(times.clone(), vals.clone()).unwrap(), (1.0, 5.0)).is_err());
    vals[4] = 0.0;
    assert!(decay_fit(&MixedNormSeries::new(times.clone(), vals).unwrap(), (1.0, 10.0)).is_err());
    assert!(decay_fit(&MixedNormSeries::new(times, vec![1.0; 10]).unwrap(), (0.0, 10.0)).is_err());
}

#[test]
fn free_gaussian_sup_norm_decays_like_inverse_root_t() {
    // 1D analogue of the Gaussian sup-norm oracle: ||psi(t)||_inf ~ t^{-1/2}
    let g = Grid::new(1, 1024, 200.0).unwrap();
    let trace = propagate(&ScalarHamiltonian::free(), &gaussian(&g, 1.0), 0.0, 40.0, &stepper(0.05, 20)).unwrap();
    let series = trace.series(|_, f| lp_norm(f, f64::INFINITY).unwrap()).unwrap();
    let fit = decay_fit(&series, (5.0, 40.0)).unwrap();
    // exact: (1 + t^2)^{-1/4}; its log-log slope on [5, 40] is within 0.02 of -1/2
    assert!((fit.exponent + 0.5).abs() < 0.02, "{}", fit.exponent);
}

/// `||psi(t)||_inf` for the free evolution of a normalized 1D Gaussian of width `s`.
fn analytic_sup(s: f64, t: f64) -> f64 {
    let st = s * (1.0 + t * t / s.powi(4)).sqrt();
    (st * std::f64::consts::PI.sqrt()).powf(-0.5)
}

#[test]
fn endpoint_ratio_matches_closed_form() {
    let g = Grid::new(1, 512, 80.0).unwrap();
    let s = 1.5;
    let trace = propagate(&ScalarHamiltonian::free(), &gaussian(&g, s), 0.0, 10.0, &stepper(0.02, 2)).unwrap();
    let pair = AdmissiblePair::endpoint(1).unwrap();
    let ratio = strichartz_ratio(&trace, &pair).unwrap();
    // L^4_t of the analytic sup norm by composite Simpson on a fine mesh
    let m = 20000;
    let h = 10.0 / m as f64;
    let integral: f64 = (0..=m)
        .map(|i| {
            let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            w * analytic_sup(s, i as f64 * h).powi(4)
        })
        .sum::<f64>()
        * h
        / 3.0;
    let expected = integral.powf(0.25);
    assert!((ratio - expected).abs() < 1e-4 * expected, "{ratio} vs {expected}");
}

#[test]
fn ratio_is_invariant_under_phase_scale_and_boost() {
    let g = Grid::new(1, 256, 40.0).unwrap();
    let f = gaussian(&g, 1.2);
    let free = ScalarHamiltonian::free();
    let cfg = stepper(0.05, 5);
    let pair = admissible_pairs(1, 3).unwrap()[1];
    let base = strichartz_ratio(&propagate(&free, &f, 0.0, 5.0, &cfg).unwrap(), &pair).unwrap();
    let twisted = f.scaled(Complex64::from_polar(3.7, 0.9));
    let other = strichartz_ratio(&propagate(&free, &twisted, 0.0, 5.0, &cfg).unwrap(), &pair).unwrap();
    assert!((base - other).abs() < 1e-12 * base);
    let v = 2.0 * g.dual_spacing();
    let boosted = galilei(&f, &GalileiParams::new([v, 0.0, 0.0], [1.0, 0.0, 0.0], 0.0));
    let moved = strichartz_ratio(&propagate(&free, &boosted, 0.0, 5.0, &cfg).unwrap(), &pair).unwrap();
    assert!((base - moved).abs() < 1e-6 * base, "{base} vs {moved}");
}

#[test]
fn zero_data_has_no_ratio() {
    let g = Grid::new(1, 64, 10.0).unwrap();
    let trace = propagate(&ScalarHamiltonian::free(), &ScalarField::zeros(&g), 0.0, 1.0, &stepper(0.1, 1)).unwrap();
    let pair = AdmissiblePair::endpoint(1).unwrap();
    assert!(matches!(strichartz_ratio(&trace, &pair), Err(Error::UndefinedRatio(_))));
    let w = WeightProfile::fixed(2.0).unwrap();
    assert_eq!(local_decay_norm(&trace, &w).unwrap(), 0.0);
}

fn pulse(amp: f64) -> SourceTerm {
    SourceTerm::gaussian_pulse(amp, [3.0, 0.0, 0.0], 1.0, 1.0, 0.3, (2.0, 1.0))
}

#[test]
fn inhomogeneous_ratio_reduces_and_scales() {
    let g = Grid::new(1, 256, 40.0).unwrap();
    let f = gaussian(&g, 1.0);
    let h = ScalarHamiltonian::free();
    let cfg = stepper(0.02, 5);
    let pair = AdmissiblePair::endpoint(1).unwrap();
    let identity = |_: f64, x: &ScalarField| Ok(x.clone());

    let plain = propagate_with_source(&h, &f, &pulse(0.0), (0.0, 4.0), &cfg).unwrap();
    let reduced = inhomogeneous_ratio(&plain, &pulse(0.0), &pair, &pair, identity).unwrap();
    assert!((reduced - strichartz_ratio(&plain, &pair).unwrap()).abs() < 1e-14);

    let one = propagate_with_source(&h, &f, &pulse(0.7), (0.0, 4.0), &cfg).unwrap();
    let two = propagate_with_source(&h, &f.scaled(Complex64::new(2.0, 0.0)), &pulse(1.4), (0.0, 4.0), &cfg).unwrap();
    let r1 = inhomogeneous_ratio(&one, &pulse(0.7), &pair, &pair, identity).unwrap();
    let r2 = inhomogeneous_ratio(&two, &pulse(1.4), &pair, &pair, identity).unwrap();
    assert!((r1 - r2).abs() < 1e-12 * r1, "{r1} vs {r2}");

    let empty = propagate(&h, &ScalarField::zeros(&g), 0.0, 1.0, &cfg).unwrap();
    assert!(inhomogeneous_ratio(&empty, &pulse(0.0), &pair, &pair, identity).is_err());
}

#[test]
fn pulse_source_ratio_settles_with_longer_windows() {
    let g = Grid::new(1, 512, 80.0).unwrap();
    let h = ScalarHamiltonian::free();
    let cfg = stepper(0.02, 5);
    let pair = admissible_pairs(1, 3).unwrap()[1];
    let identity = |_: f64, x: &ScalarField| Ok(x.clone());
    let zero = ScalarField::zeros(&g);
    let short = propagate_with_source(&h, &zero, &pulse(1.0), (0.0, 8.0), &cfg).unwrap();
    let long = propagate_with_source(&h, &zero, &pulse(1.0), (0.0, 16.0), &cfg).unwrap();
    let a = inhomogeneous_ratio(&short, &pulse(1.0), &pair, &pair, identity).unwrap();
    let b = inhomogeneous_ratio(&long, &pulse(1.0), &pair, &pair, identity).unwrap();
    assert!(a.is_finite() && a > 0.0);
    assert!((b - a).abs() < 0.1 * a, "{a} vs {b}");
}

#[test]
fn local_decay_matches_quadrature_of_the_analytic_solution() {
    let g = Grid::new(1, 1024, 100.0).unwrap();
    let s = 1.0;
    let w = WeightProfile::fixed(1.0).unwrap();
    let trace = propagate(&ScalarHamiltonian::free(), &gaussian(&g, s), 0.0, 6.0, &stepper(0.02, 5)).unwrap();
    let got = local_decay_norm(&trace, &w).unwrap();
    // |psi(t,x)|^2 = exp(-x^2 / st^2) / (st sqrt(pi)); spatial integral by Simpson on [-60, 60]
    let weighted = |t: f64| {
        let st = s * (1.0 + t * t / s.powi(4)).sqrt();
        let m = 24000;
        let h = 120.0 / m as f64;
        (0..=m)
            .map(|i| {
                let x = -60.0 + i as f64 * h;
                let c = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                c * (-x * x / (st * st)).exp() / (st * std::f64::consts::PI.sqrt()) / (1.0 + x * x)
            })
            .sum::<f64>()
            * h
            / 3.0
    };
    let t = trace.times.clone();
    let integral: f64 = (1..t.len()).map(|i| 0.5 * (t[i] - t[i - 1]) * (weighted(t[i]) + weighted(t[i - 1]))).sum();
    let expected = integral.sqrt();
    assert!((got - expected).abs() < 1e-6 * expected, "{got} vs {expected}");
}

#[test]
fn random_fields_are_normalized_and_reproducible() {
    let g = Grid::new(2, 32, 8.0).unwrap();
    let a = random_band_limited(&g, 2.0, 7);
    let b = random_band_limited(&g, 2.0, 7);
    let c = random_band_limited(&g, 2.0, 8);
    assert!((a.norm() - 1.0).abs() < 1e-12);
    assert_eq!(a.values(), b.values());
    assert!(a.sub(&c).norm() > 0.1);
}

#[test]
fn free_weighted_propagator_norm_decays() {
    let g = Grid::new(1, 512, 64.0).unwrap();
    let w = WeightProfile::fixed(2.0).unwrap();
    let identity = |x: &ScalarField| Ok(x.clone());
    let times = [0.0, 4.0, 6.0, 8.0, 11.0, 14.0, 17.0, 20.0, 24.0];
    let kj = kato_jensen_probe(
        &ScalarHamiltonian::free(),
        &identity,
        0.0,
        &times,
        &w,
        &g,
        &ProbeConfig::default(),
        &stepper(0.05, 1000),
    )
    .unwrap();
    assert_eq!(kj.method, "power_iteration");
    let v = kj.series.values();
    assert!(v[0] <= 1.0 + 1e-10 && v[0] > 0.9, "{}", v[0]);
    let fit = decay_fit(&kj.elapsed(0.0).unwrap(), (4.0, 24.0)).unwrap();
    // 1D weighted dispersive rate t^{-1/2}
    assert!((-0.7..=-0.3).contains(&fit.exponent), "{} {:?}", fit.exponent, v);
}

#[test]
fn matrix_probe_is_labeled_as_lower_bound() {
    let g = Grid::new(1, 128, 16.0).unwrap();
    let w = WeightProfile::fixed(2.0).unwrap();
    let identity = |x: &SpinorField| Ok(x.clone());
    let probe = ProbeConfig {
        probes: 3,
        ..ProbeConfig::default()
    };
    let kj = matrix_kato_jensen_probe(&MatrixHamiltonian::free(), &identity, 0.0, &[0.0, 2.0, 4.0], &w, &g, &probe, &stepper(0.05, 1000))
        .unwrap();
    assert_eq!(kj.method, "rayleigh_lower_bound");
    let v = kj.series.values();
    assert!(v[0] <= 1.0 && v[2] < v[0], "{v:?}");
}
