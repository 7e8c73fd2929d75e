//! Admissible pairs, Strichartz ratios, decay fits, weighted operator-norm probes
//! and local decay norms.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::gridfield::{lp_norm, mixed_norm, weighted_multiply, Grid, MixedNormSeries, ScalarField, SpinorField, WeightProfile};
use crate::propagator::{
    matrix_propagate, propagate, MatrixHamiltonian, PropagatorTrace, ScalarHamiltonian, ScalarTrace, SourceTerm, StepperConfig,
};
use crate::spectrum::linear_fit;

/// Exponents `(p, q)` on the line `2/p = n/2 - n/q`, stored with exact rational
/// reciprocals `1/p = p_num/p_den`, `1/q = q_num/q_den`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissiblePair {
    pub p: f64,
    pub q: f64,
    pub dim: usize,
    pub inv_p: (i64, i64),
    pub inv_q: (i64, i64),
    /// Set for `n < 3`, where the estimates are not claimed.
    pub outside_hypothesis: bool,
}

fn reduce((a, b): (i64, i64)) -> (i64, i64) {
    fn gcd(a: i64, b: i64) -> i64 {
        if b == 0 {
            a.abs()
        } else {
            gcd(b, a % b)
        }
    }
    let g = gcd(a, b).max(1);
    (a / g, b / g)
}

fn reciprocal((num, den): (i64, i64)) -> f64 {
    if num == 0 {
        f64::INFINITY
    } else {
        den as f64 / num as f64
    }
}

impl AdmissiblePair {
    /// The pair with `1/p = num/den`.
    pub fn from_inverse_p(dim: usize, num: i64, den: i64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(invalid_param(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if den <= 0 || num < 0 || 2 * num > den {
            return Err(invalid_param(format!("1/p = {num}/{den} is outside [0, 1/2]")));
        }
        let n = dim as i64;
        // 1/q = 1/2 - 2/(n p) = (n den - 4 num) / (2 n den)
        let inv_q = reduce((n * den - 4 * num, 2 * n * den));
        if inv_q.0 < 0 {
            return Err(invalid_param(format!("1/p = {num}/{den} gives q < 0 in dimension {dim}")));
        }
        let inv_p = reduce((num, den));
        Ok(Self {
            p: reciprocal(inv_p),
            q: reciprocal(inv_q),
            dim,
            inv_p,
            inv_q,
            outside_hypothesis: dim < 3,
        })
    }

    /// `(2, 2n/(n-2))` for `n >= 3`, `(2, inf)` for `n = 2`, `(4, inf)` for `n = 1`.
    pub fn endpoint(dim: usize) -> Result<Self> {
        if dim == 1 {
            Self::from_inverse_p(1, 1, 4)
        } else {
            Self::from_inverse_p(dim, 1, 2)
        }
    }

    /// `2/p = n/2 - n/q` checked in integer arithmetic.
    pub fn satisfies_identity(&self) -> bool {
        let n = self.dim as i128;
        let (a, b) = (self.inv_p.0 as i128, self.inv_p.1 as i128);
        let (c, d) = (self.inv_q.0 as i128, self.inv_q.1 as i128);
        // 2a/b == n/2 - n c/d  <=>  4 a d == n b d - 2 n b c
        4 * a * d == n * b * d - 2 * n * b * c && self.p >= 2.0
    }

    /// Hoelder conjugates `(p', q')`.
    pub fn conjugate_exponents(&self) -> (f64, f64) {
        (conjugate(self.p), conjugate(self.q))
    }
}

/// `r' = r / (r - 1)`.
pub fn conjugate(r: f64) -> f64 {
    if r.is_infinite() {
        1.0
    } else if r == 1.0 {
        f64::INFINITY
    } else {
        r / (r - 1.0)
    }
}

/// `count` pairs evenly spaced in `1/p` from `(inf, 2)` to the endpoint, both included.
pub fn admissible_pairs(dim: usize, count: usize) -> Result<Vec<AdmissiblePair>> {
    let end = AdmissiblePair::endpoint(dim)?;
    match count {
        0 => Ok(Vec::new()),
        1 => Ok(vec![end]),
        _ => {
            let (num, den) = end.inv_p;
            let steps = (count - 1) as i64;
            (0..=steps)
                .map(|j| AdmissiblePair::from_inverse_p(dim, j * num, steps * den))
                .collect()
        }
    }
}

fn lq_series<F>(trace: &PropagatorTrace<F>, q: f64, map: impl Fn(f64, &F) -> Result<ScalarField>) -> Result<MixedNormSeries> {
    if trace.fields.len() != trace.times.len() {
        return Err(invalid_input("trace does not store its snapshots"));
    }
    let values = trace
        .times
        .iter()
        .zip(&trace.fields)
        .map(|(t, f)| lp_norm(&map(*t, f)?, q))
        .collect::<Result<Vec<_>>>()?;
    MixedNormSeries::new(trace.times.clone(), values)
}

/// `||psi||_{L^p_t L^q_x} / ||psi_0||_2` over the trace window.
pub fn strichartz_ratio(trace: &ScalarTrace, pair: &AdmissiblePair) -> Result<f64> {
    let n0 = trace.initial.norm();
    if n0 == 0.0 {
        return Err(Error::UndefinedRatio("Strichartz ratio of zero initial data".into()));
    }
    let series = lq_series(trace, pair.q, |_, f| Ok(f.clone()))?;
    Ok(mixed_norm(&series, pair.p)? / n0)
}

/// `||F||_{L^{p'}_t L^{q'}_x}` sampled at `times`.
pub fn source_mixed_norm(source: &SourceTerm, grid: &Grid, times: &[f64], dual_pair: &AdmissiblePair) -> Result<f64> {
    let (pc, qc) = dual_pair.conjugate_exponents();
    let values = times
        .iter()
        .map(|t| lp_norm(&source.eval(*t, grid), qc))
        .collect::<Result<Vec<_>>>()?;
    mixed_norm(&MixedNormSeries::new(times.to_vec(), values)?, pc)
}

/// `||P_c psi||_{L^p L^q} / (||psi_0||_2 + ||F||_{L^{p~'} L^{q~'}})`, with `projector`
/// applying `P_c(t)` to the snapshot at time `t`.
pub fn inhomogeneous_ratio(
    trace: &ScalarTrace,
    source: &SourceTerm,
    pair: &AdmissiblePair,
    dual_pair: &AdmissiblePair,
    projector: impl Fn(f64, &ScalarField) -> Result<ScalarField>,
) -> Result<f64> {
    let denom = trace.initial.norm() + source_mixed_norm(source, trace.initial.grid(), &trace.times, dual_pair)?;
    if denom == 0.0 {
        return Err(Error::UndefinedRatio("zero data and zero source".into()));
    }
    let series = lq_series(trace, pair.q, projector)?;
    Ok(mixed_norm(&series, pair.p)? / denom)
}

/// Least-squares line through `(log t, log value)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub exponent: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    /// RMS deviation of the log-log fit.
    pub residual: f64,
    pub samples: usize,
}

impl DecayFit {
    pub fn predict(&self, t: f64) -> f64 {
        (self.intercept + self.exponent * t.ln()).exp()
    }
}

pub fn decay_fit(series: &MixedNormSeries, window: (f64, f64)) -> Result<DecayFit> {
    let (t_min, t_max) = window;
    if !(t_min > 0.0 && t_min < t_max) {
        return Err(invalid_param(format!("decay window needs 0 < t_min < t_max, got {window:?}")));
    }
    let w = series.window(t_min, t_max);
    if w.len() < 8 {
        return Err(invalid_input(format!("decay fit needs 8 samples in {window:?}, found {}", w.len())));
    }
    if let Some((t, v)) = w.times().iter().zip(w.values()).find(|(_, v)| !(**v > 0.0)) {
        return Err(invalid_input(format!("nonpositive value {v} at t = {t} in decay window")));
    }
    let xs: Vec<f64> = w.times().iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = w.values().iter().map(|v| v.ln()).collect();
    let (slope, intercept) = linear_fit(&xs, &ys);
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    Ok(DecayFit {
        exponent: slope,
        intercept,
        window,
        residual,
        samples: xs.len(),
    })
}

/// Smooth random field: white noise low-pass filtered by `exp(-|k|^2 / (2 k_cut^2))`, normalized.
pub fn random_band_limited(grid: &Grid, k_cut: f64, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<Complex64> = (0..grid.len())
        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
        .collect();
    let mut ws = grid.workspace();
    grid.fft_forward(&mut data, &mut ws);
    for (z, k2) in data.iter_mut().zip(grid.k_squared()) {
        *z *= (-0.5 * k2 / (k_cut * k_cut)).exp();
    }
    grid.fft_inverse(&mut data, &mut ws);
    let mut f = ScalarField::new(grid.clone(), data).expect("grid-sized data");
    f.normalize();
    f
}

/// Norm estimates of `W(t) U(t, t0) P_c(t0) W(t0)` for each requested `t`.
#[derive(Clone, Debug, Serialize)]
pub struct KatoJensenSeries {
    pub series: MixedNormSeries,
    /// `"power_iteration"` (scalar) or `"rayleigh_lower_bound"` (matrix).
    pub method: &'static str,
    /// Relative change of the estimate in the final power step, per time.
    pub last_change: Vec<f64>,
    pub valid: bool,
    pub warnings: Vec<String>,
}

impl KatoJensenSeries {
    /// Series against the elapsed time `t - t0`, for decay fits.
    pub fn elapsed(&self, t0: f64) -> Result<MixedNormSeries> {
        MixedNormSeries::new(self.series.times().iter().map(|t| t - t0).collect(), self.series.values().to_vec())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub probes: usize,
    pub seed: u64,
    /// Band limit of the random start vectors.
    pub k_cut: f64,
    /// Relative change in the last power step above which stagnation is reported.
    pub stagnation: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            probes: 1,
            seed: 0,
            k_cut: 2.0,
            stagnation: 1e-2,
        }
    }
}

fn quiet(cfg: &StepperConfig) -> StepperConfig {
    StepperConfig {
        store_snapshots: false,
        ..*cfg
    }
}

/// Scalar probe by power iteration on `K^* K`, with `K^* = W(t0) P_c U(t0, t) W(t)` realized
/// by backward propagation. `projector` applies the orthogonal projection `P_c(t0)`.
pub fn kato_jensen_probe(
    h: &ScalarHamiltonian,
    projector: &dyn Fn(&ScalarField) -> Result<ScalarField>,
    t0: f64,
    t_list: &[f64],
    w: &WeightProfile,
    grid: &Grid,
    probe: &ProbeConfig,
    stepper: &StepperConfig,
) -> Result<KatoJensenSeries> {
    if probe.iterations == 0 || probe.probes == 0 {
        return Err(invalid_param("power iteration needs at least one iteration and one probe"));
    }
    let cfg = quiet(stepper);
    let mut valid = true;
    let mut warnings = Vec::new();
    let mut values = Vec::new();
    let mut changes = Vec::new();
    for &t in t_list {
        let mut best = 0.0f64;
        let mut best_change = 0.0;
        for j in 0..probe.probes {
            let mut x = random_band_limited(grid, probe.k_cut, probe.seed.wrapping_add(j as u64));
            let mut estimate = 0.0;
            let mut change = f64::INFINITY;
            for _ in 0..probe.iterations {
                let a = projector(&weighted_multiply(&x, w, t0))?;
                let run = propagate(h, &a, t0, t, &cfg)?;
                valid &= run.valid;
                let kx = weighted_multiply(&run.final_state, w, t);
                let next = kx.norm();
                change = if next > 0.0 { (next - estimate).abs() / next } else { 0.0 };
                estimate = next;
                if next == 0.0 {
                    break;
                }
                let back = propagate(h, &weighted_multiply(&kx, w, t), t, t0, &cfg)?;
                valid &= back.valid;
                let mut z = weighted_multiply(&projector(&back.final_state)?, w, t0);
                if z.normalize() == 0.0 {
                    break;
                }
                x = z;
            }
            if change > probe.stagnation {
                warnings.push(format!("power iteration at t = {t} (probe {j}) still moving by {change:.2e}"));
            }
            if estimate > best {
                best = estimate;
                best_change = change;
            }
        }
        values.push(best);
        changes.push(best_change);
    }
    if !valid {
        warnings.push("boundary-mass guard tripped during probe propagation".into());
    }
    Ok(KatoJensenSeries {
        series: MixedNormSeries::new(t_list.to_vec(), values)?,
        method: "power_iteration",
        last_change: changes,
        valid,
        warnings,
    })
}

fn weighted_spinor(f: &SpinorField, w: &WeightProfile, t: f64) -> SpinorField {
    SpinorField {
        upper: weighted_multiply(&f.upper, w, t),
        lower: weighted_multiply(&f.lower, w, t),
    }
}

/// Matrix probe: largest `||W U P_c W x|| / ||x||` over random inputs. A lower bound for the
/// operator norm, since no adjoint propagation is used.
pub fn matrix_kato_jensen_probe(
    h: &MatrixHamiltonian,
    projector: &dyn Fn(&SpinorField) -> Result<SpinorField>,
    t0: f64,
    t_list: &[f64],
    w: &WeightProfile,
    grid: &Grid,
    probe: &ProbeConfig,
    stepper: &StepperConfig,
) -> Result<KatoJensenSeries> {
    if probe.probes == 0 {
        return Err(invalid_param("Rayleigh probing needs at least one probe"));
    }
    let cfg = quiet(stepper);
    let mut valid = true;
    let inputs: Vec<SpinorField> = (0..probe.probes)
        .map(|j| {
            let seed = probe.seed.wrapping_add(2 * j as u64);
            let mut x = SpinorField {
                upper: random_band_limited(grid, probe.k_cut, seed),
                lower: random_band_limited(grid, probe.k_cut, seed + 1),
            };
            x.scale(Complex64::new(1.0 / x.norm(), 0.0));
            x
        })
        .collect();
    let mut values = Vec::new();
    for &t in t_list {
        let mut best = 0.0f64;
        for x in &inputs {
            let a = projector(&weighted_spinor(x, w, t0))?;
            let run = matrix_propagate(h, &a, t0, t, &cfg)?;
            valid &= run.valid;
            best = best.max(weighted_spinor(&run.final_state, w, t).norm());
        }
        values.push(best);
    }
    let mut warnings = Vec::new();
    if !valid {
        warnings.push("boundary-mass guard or growth envelope tripped during probe propagation".into());
    }
    Ok(KatoJensenSeries {
        series: MixedNormSeries::new(t_list.to_vec(), values)?,
        method: "rayleigh_lower_bound",
        last_change: vec![0.0; t_list.len()],
        valid,
        warnings,
    })
}

/// `||W(t) psi(t)||_{L^2_t L^2_x} / ||psi_0||_2`; zero data gives 0.
pub fn local_decay_norm(trace: &ScalarTrace, w: &WeightProfile) -> Result<f64> {
    let n0 = trace.initial.norm();
    let series = lq_series(trace, 2.0, |t, f| Ok(weighted_multiply(f, w, t)))?;
    if n0 == 0.0 {
        return Ok(0.0);
    }
    Ok(mixed_norm(&series, 2.0)? / n0)
}

#[cfg(test)]
mod tests;
