use serde::{Deserialize, Serialize};

use super::ScalarField;
use crate::error::{invalid_input, invalid_param, Result};

/// Discrete `L^p` norm `(h^n sum |f|^p)^{1/p}`; `p = f64::INFINITY` gives the max.
pub fn lp_norm(f: &ScalarField, p: f64) -> Result<f64> {
    check_exponent(p)?;
    let vals = f.values();
    if p.is_infinite() {
        return Ok(vals.iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    let dv = f.grid().cell_volume();
    if p == 2.0 {
        return Ok((vals.iter().map(|z| z.norm_sqr()).sum::<f64>() * dv).sqrt());
    }
    if p == 1.0 {
        return Ok(vals.iter().map(|z| z.norm()).sum::<f64>() * dv);
    }
    // Scale by the max to keep large p from overflowing.
    let m = vals.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if m == 0.0 {
        return Ok(0.0);
    }
    let s: f64 = vals.iter().map(|z| (z.norm() / m).powf(p)).sum();
    Ok(m * (s * dv).powf(1.0 / p))
}

fn check_exponent(p: f64) -> Result<()> {
    if p.is_nan() || p < 1.0 {
        return Err(invalid_param(format!("Lebesgue exponent must be >= 1, got {p}")));
    }
    Ok(())
}

/// Time series of spatial norms `t -> ||psi(t)||_q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedNormSeries {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl MixedNormSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(invalid_input("times and values differ in length"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid_input("sample times must be strictly increasing"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid_input("series values must be finite and nonnegative"));
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Samples with `t_min <= t <= t_max`.
    pub fn window(&self, t_min: f64, t_max: f64) -> MixedNormSeries {
        let (times, values) = self
            .times
            .iter()
            .zip(&self.values)
            .filter(|(t, _)| **t >= t_min - 1e-12 && **t <= t_max + 1e-12)
            .map(|(t, v)| (*t, *v))
            .unzip();
        MixedNormSeries { times, values }
    }
}

/// Outer `L^p_t` norm of a series: trapezoid rule on `values^p`, or the sup for `p = inf`.
pub fn mixed_norm(series: &MixedNormSeries, p: f64) -> Result<f64> {
    check_exponent(p)?;
    if series.is_empty() {
        return Err(invalid_input("mixed norm of an empty series"));
    }
    let v = &series.values;
    if p.is_infinite() {
        return Ok(v.iter().copied().fold(0.0, f64::max));
    }
    let t = &series.times;
    let integral: f64 = (1..t.len())
        .map(|i| 0.5 * (t[i] - t[i - 1]) * (v[i].powf(p) + v[i - 1].powf(p)))
        .sum();
    Ok(integral.powf(1.0 / p))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairNorms {
    /// `max(||f||_1, ||f||_2)`.
    pub l1_cap_l2: f64,
    /// Upper bound for `inf_{f = f1 + f2} ||f1||_2 + ||f2||_inf`.
    pub l2_plus_linf_upper: f64,
}

/// Threshold family used for the `L^2 + L^inf` splitting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Thresholds {
    /// Every order statistic of `|f|`; the best threshold splitting.
    All,
    /// `m + 1` evenly spaced quantiles; doubling `m` refines the family.
    Quantiles(usize),
}

pub fn pair_norms(f: &ScalarField) -> PairNorms {
    pair_norms_with(f, Thresholds::All)
}

pub fn pair_norms_with(f: &ScalarField, family: Thresholds) -> PairNorms {
    let dv = f.grid().cell_volume();
    let mut mags: Vec<f64> = f.values().iter().map(|z| z.norm()).collect();
    let l1 = mags.iter().sum::<f64>() * dv;
    let l2 = (mags.iter().map(|a| a * a).sum::<f64>() * dv).sqrt();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let n = mags.len();
    // prefix[k] = h^n * sum of the k largest |f|^2
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for a in &mags {
        acc += a * a;
        prefix.push(acc);
    }
    // Moving the k largest values into the L^2 part leaves mags[k] as the sup.
    let cost = |k: usize| -> f64 {
        let sup = if k < n { mags[k] } else { 0.0 };
        (prefix[k] * dv).sqrt() + sup
    };
    let mut best = cost(0).min(cost(n));
    match family {
        Thresholds::All => {
            for k in 1..n {
                best = best.min(cost(k));
            }
        }
        Thresholds::Quantiles(m) => {
            let m = m.max(1);
            for i in 1..m {
                best = best.min(cost(i * n / m));
            }
        }
    }
    PairNorms {
        l1_cap_l2: l1.max(l2),
        l2_plus_linf_upper: best,
    }
}

/// Fraction of the L2 mass lying within `L/4` of the box boundary.
pub fn boundary_mass(f: &ScalarField) -> f64 {
    let g = f.grid();
    let cut = 0.75 * g.half_length();
    let mut edge = 0.0;
    let mut total = 0.0;
    for (i, z) in f.values().iter().enumerate() {
        let m = z.norm_sqr();
        total += m;
        let x = g.coords(i);
        if x.iter().take(g.dim()).any(|c| c.abs() > cut) {
            edge += m;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        edge / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridfield::Grid;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn constant(g: &Grid, c: f64) -> ScalarField {
        ScalarField::from_fn(g, |_| Complex64::new(c, 0.0))
    }

    #[test]
    fn constant_field_norms() {
        let g = Grid::new(2, 16, 3.0).unwrap();
        let f = constant(&g, 1.0);
        assert!((lp_norm(&f, 2.0).unwrap() - g.volume().sqrt()).abs() < 1e-12);
        assert!((lp_norm(&f, 1.0).unwrap() - g.volume()).abs() < 1e-12);
        assert_eq!(lp_norm(&f, f64::INFINITY).unwrap(), 1.0);
        let z = ScalarField::zeros(&g);
        for p in [1.0, 2.0, 3.5, f64::INFINITY] {
            assert_eq!(lp_norm(&z, p).unwrap(), 0.0);
        }
        assert!(lp_norm(&f, 0.5).is_err());
    }

    #[test]
    fn normalized_gaussian_has_unit_l2_norm() {
        // |psi|^2 = (pi s^2)^{-3/2} exp(-r^2/s^2) integrates to one on R^3.
        let s: f64 = 1.2;
        let g = Grid::new(3, 32, 10.0).unwrap();
        let amp = (std::f64::consts::PI * s * s).powf(-0.75);
        let f = ScalarField::from_real_fn(&g, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            amp * (-r2 / (2.0 * s * s)).exp()
        });
        assert!((lp_norm(&f, 2.0).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn mixed_norm_of_constant_series() {
        let times: Vec<f64> = (0..=40).map(|i| i as f64 * 0.25).collect();
        let s = MixedNormSeries::new(times, vec![3.0; 41]).unwrap();
        let t: f64 = 10.0;
        for p in [1.0, 2.0, 6.0] {
            assert!((mixed_norm(&s, p).unwrap() - 3.0 * t.powf(1.0 / p)).abs() < 1e-12);
        }
        assert_eq!(mixed_norm(&s, f64::INFINITY).unwrap(), 3.0);
        let empty = MixedNormSeries::new(vec![], vec![]).unwrap();
        assert!(mixed_norm(&empty, 2.0).is_err());
    }

    #[test]
    fn series_validation() {
        assert!(MixedNormSeries::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(MixedNormSeries::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
        assert!(MixedNormSeries::new(vec![0.0], vec![f64::NAN]).is_err());
    }

    #[test]
    fn mixed_norm_with_equal_exponents_is_space_time_quadrature() {
        let g = Grid::new(1, 32, 4.0).unwrap();
        let p = 3.0;
        let times: Vec<f64> = (0..9).map(|i| i as f64 * 0.5).collect();
        let fields: Vec<ScalarField> = times
            .iter()
            .map(|t| ScalarField::from_fn(&g, |x| Complex64::new((x[0] - t).cos() + 1.5, *t)))
            .collect();
        let values: Vec<f64> = fields.iter().map(|f| lp_norm(f, p).unwrap()).collect();
        let series = MixedNormSeries::new(times.clone(), values).unwrap();
        // Flattened trapezoid over (t, x) directly on |psi|^p.
        let mut flat = 0.0;
        for i in 1..times.len() {
            let dt = times[i] - times[i - 1];
            for (a, b) in fields[i].values().iter().zip(fields[i - 1].values()) {
                flat += 0.5 * dt * (a.norm().powf(p) + b.norm().powf(p)) * g.cell_volume();
            }
        }
        let expected = flat.powf(1.0 / p);
        let got = mixed_norm(&series, p).unwrap();
        assert!((got - expected).abs() <= 1e-10 * expected);
    }

    #[test]
    fn pair_norms_basic_contracts() {
        let g = Grid::new(1, 16, 4.0).unwrap();
        let z = ScalarField::zeros(&g);
        let pn = pair_norms(&z);
        assert_eq!((pn.l1_cap_l2, pn.l2_plus_linf_upper), (0.0, 0.0));

        // two cells of modulus 1/2 with h = 2
        let g4 = Grid::new(1, 16, 16.0).unwrap(); // h = 2
        let mut vals = vec![Complex64::new(0.0, 0.0); 16];
        vals[3] = Complex64::new(0.5, 0.0);
        vals[7] = Complex64::new(0.0, 0.5);
        let f = ScalarField::new(g4, vals).unwrap();
        // ||f||_1 = 2 * 0.5 * 2 = 2, ||f||_2 = sqrt(2 * 0.25 * 2) = 1
        let pn = pair_norms(&f);
        assert!((pn.l1_cap_l2 - 2.0).abs() < 1e-15);
        let l2 = lp_norm(&f, 2.0).unwrap();
        let linf = lp_norm(&f, f64::INFINITY).unwrap();
        assert!(pn.l2_plus_linf_upper <= l2.min(linf) + 1e-15);
    }

    fn random_field(g: &Grid, seed: &[f64]) -> ScalarField {
        let vals = (0..g.len())
            .map(|i| Complex64::new(seed[i % seed.len()] * (i as f64).sin(), seed[(i + 3) % seed.len()]))
            .collect();
        ScalarField::new(g.clone(), vals).unwrap()
    }

    proptest! {
        #[test]
        fn lp_norm_is_absolutely_homogeneous(seed in prop::collection::vec(-2.0f64..2.0, 5..20),
                                             re in -3.0f64..3.0, im in -3.0f64..3.0) {
            let g = Grid::new(1, 32, 5.0).unwrap();
            let f = random_field(&g, &seed);
            let c = Complex64::new(re, im);
            for p in [1.0, 2.0, 4.5, f64::INFINITY] {
                let a = lp_norm(&f.scaled(c), p).unwrap();
                let b = c.norm() * lp_norm(&f, p).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
            }
        }

        #[test]
        fn triangle_inequality(s1 in prop::collection::vec(-2.0f64..2.0, 5..20),
                               s2 in prop::collection::vec(-2.0f64..2.0, 5..20)) {
            let g = Grid::new(2, 8, 2.0).unwrap();
            let f = random_field(&g, &s1);
            let h = random_field(&g, &s2);
            for p in [1.0, 2.0, f64::INFINITY] {
                let lhs = lp_norm(&f.add(&h), p).unwrap();
                let rhs = lp_norm(&f, p).unwrap() + lp_norm(&h, p).unwrap();
                prop_assert!(lhs <= rhs + 1e-12);
            }
        }

        #[test]
        fn weights_never_increase_l2(seed in prop::collection::vec(-2.0f64..2.0, 5..20),
                                     sigma in 0.0f64..4.0, t in -5.0f64..5.0) {
            let g = Grid::new(2, 16, 6.0).unwrap();
            let f = random_field(&g, &seed);
            let w = crate::gridfield::WeightProfile::moving_e1(sigma).unwrap();
            let out = crate::gridfield::weighted_multiply(&f, &w, t);
            prop_assert!(out.norm() <= f.norm() * (1.0 + 1e-15));
        }

        #[test]
        fn pair_proxy_refines_monotonically(seed in prop::collection::vec(-2.0f64..2.0, 5..20)) {
            let g = Grid::new(1, 64, 5.0).unwrap();
            let f = random_field(&g, &seed);
            let mut prev = f64::INFINITY;
            for m in [1usize, 2, 4, 8, 16, 32, 64] {
                let v = pair_norms_with(&f, Thresholds::Quantiles(m)).l2_plus_linf_upper;
                prop_assert!(v <= prev + 1e-15);
                prev = v;
            }
            let all = pair_norms(&f).l2_plus_linf_upper;
            prop_assert!(all <= prev + 1e-15);
            let l2 = lp_norm(&f, 2.0).unwrap();
            let linf = lp_norm(&f, f64::INFINITY).unwrap();
            prop_assert!(all <= l2.min(linf) + 1e-15);
        }
    }
}
