use num_complex::Complex64;

use super::{Diagnostics, Field, MatrixHamiltonian, PropagatorTrace, ScalarHamiltonian, SourceTerm, StepperConfig};
use crate::error::Result;
use crate::gridfield::{FftWorkspace, Grid, ScalarField, SpinorField};
use crate::potentials::MatrixPotentialField;

/// Eigenvalue gap below which the 2x2 exponential switches to its Taylor series.
const COALESCENCE_GAP: f64 = 1e-8;

/// Splitting of one equation into an exact kinetic flow and an exact potential flow.
pub(super) trait Splitting {
    type State: Field;
    /// `e^{-i tau H_0}`.
    fn kinetic(&mut self, state: &mut Self::State, tau: f64);
    /// Potential substep of length `delta` centered at `t_mid`.
    fn potential(&mut self, state: &mut Self::State, t_mid: f64, delta: f64);
}

/// Step list `(start, delta)` from `s` to `t`; a shorter final step absorbs the remainder.
fn schedule(s: f64, t: f64, dt: f64) -> Vec<(f64, f64)> {
    let span = t - s;
    if span == 0.0 {
        return Vec::new();
    }
    let sign = span.signum();
    let full = (span.abs() / dt + 1e-9).floor() as usize;
    let mut steps: Vec<(f64, f64)> = (0..full).map(|k| (s + sign * k as f64 * dt, sign * dt)).collect();
    let reached = s + sign * full as f64 * dt;
    let rest = t - reached;
    if rest.abs() > 1e-9 * dt {
        steps.push((reached, rest));
    } else if let Some(last) = steps.last_mut() {
        // land exactly on t
        last.1 = t - last.0;
    }
    steps
}

pub(super) fn drive<S: Splitting>(
    sys: &mut S,
    psi: &S::State,
    s: f64,
    t: f64,
    cfg: &StepperConfig,
    mut observer: impl FnMut(f64, &S::State),
) -> Result<PropagatorTrace<S::State>> {
    let steps = schedule(s, t, cfg.dt);
    let mut trace = PropagatorTrace {
        times: Vec::new(),
        fields: Vec::new(),
        diagnostics: Vec::new(),
        initial: psi.clone(),
        final_state: psi.clone(),
        valid: true,
        warnings: Vec::new(),
        config: *cfg,
    };
    let n0 = psi.l2_norm();
    let mut record = |time: f64, state: &S::State, trace: &mut PropagatorTrace<S::State>| {
        let d = Diagnostics {
            time,
            norm: state.l2_norm(),
            boundary_mass: state.boundary_mass(),
            charge: state.charge(),
        };
        if d.boundary_mass > cfg.boundary_mass_guard && trace.valid {
            trace.valid = false;
            trace.warnings.push(format!(
                "boundary mass {:.3e} exceeds guard {:.1e} at t = {time}",
                d.boundary_mass, cfg.boundary_mass_guard
            ));
        }
        if let Some(env) = cfg.growth_envelope {
            if n0 > 0.0 && d.norm / n0 > env.bound(time - s) {
                trace.valid = false;
                trace.warnings.push(format!(
                    "norm ratio {:.3e} exceeds growth envelope at t = {time}",
                    d.norm / n0
                ));
            }
        }
        if !d.norm.is_finite() && trace.valid {
            trace.valid = false;
            trace.warnings.push(format!("non-finite state at t = {time}"));
        }
        trace.times.push(time);
        trace.diagnostics.push(d);
        if cfg.store_snapshots {
            trace.fields.push(state.clone());
        }
        observer(time, state);
    };

    let mut state = psi.clone();
    record(s, &state, &mut trace);
    if steps.is_empty() {
        return Ok(trace);
    }
    sys.kinetic(&mut state, 0.5 * steps[0].1);
    for (k, &(start, delta)) in steps.iter().enumerate() {
        sys.potential(&mut state, start + 0.5 * delta, delta);
        let last = k + 1 == steps.len();
        let snap = last || (k + 1) % cfg.snapshot_every == 0;
        if snap || steps[k + 1].1 != delta {
            sys.kinetic(&mut state, 0.5 * delta);
            if snap {
                record(if last { t } else { start + delta }, &state, &mut trace);
            }
            if !last {
                sys.kinetic(&mut state, 0.5 * steps[k + 1].1);
            }
        } else {
            sys.kinetic(&mut state, delta);
        }
    }
    trace.final_state = state;
    Ok(trace)
}

/// Fourier multipliers `e^{-i |k|^2 tau / 2}` for the few `tau` values a run uses.
struct KineticCache {
    grid: Grid,
    ws: FftWorkspace,
    entries: Vec<(f64, Vec<Complex64>)>,
}

impl KineticCache {
    fn new(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            ws: grid.workspace(),
            entries: Vec::new(),
        }
    }

    fn multiplier(&mut self, tau: f64) -> usize {
        if let Some(i) = self.entries.iter().position(|(t, _)| *t == tau) {
            return i;
        }
        if self.entries.len() >= 6 {
            self.entries.remove(0);
        }
        let m = self
            .grid
            .k_squared()
            .iter()
            .map(|k2| Complex64::from_polar(1.0, -0.5 * k2 * tau))
            .collect();
        self.entries.push((tau, m));
        self.entries.len() - 1
    }

    /// Applies the multiplier for `tau`, conjugated when `flip` (the `+1/2 Delta` component).
    fn apply(&mut self, data: &mut [Complex64], tau: f64, flip: bool) {
        let i = self.multiplier(tau);
        self.grid.fft_forward(data, &mut self.ws);
        let m = &self.entries[i].1;
        if flip {
            data.iter_mut().zip(m).for_each(|(z, p)| *z *= p.conj());
        } else {
            data.iter_mut().zip(m).for_each(|(z, p)| *z *= p);
        }
        self.grid.fft_inverse(data, &mut self.ws);
    }
}

pub(super) struct ScalarSystem<'a> {
    h: &'a ScalarHamiltonian,
    source: Option<&'a SourceTerm>,
    kinetic: KineticCache,
    potential: Vec<f64>,
    static_ready: bool,
}

impl<'a> ScalarSystem<'a> {
    pub(super) fn new(h: &'a ScalarHamiltonian, grid: &Grid, source: Option<&'a SourceTerm>) -> Self {
        Self {
            h,
            source,
            kinetic: KineticCache::new(grid),
            potential: vec![0.0; grid.len()],
            static_ready: false,
        }
    }

    fn refresh(&mut self, t: f64) {
        if self.h.is_static() && self.static_ready {
            return;
        }
        self.potential = self.h.potential(t, &self.kinetic.grid);
        self.static_ready = true;
    }
}

fn potential_phase(values: &mut [Complex64], v: &[f64], delta: f64) {
    for (z, v) in values.iter_mut().zip(v) {
        if *v != 0.0 {
            *z *= Complex64::from_polar(1.0, -delta * v);
        }
    }
}

impl Splitting for ScalarSystem<'_> {
    type State = ScalarField;

    fn kinetic(&mut self, state: &mut ScalarField, tau: f64) {
        if tau != 0.0 {
            self.kinetic.apply(state.values_mut(), tau, false);
        }
    }

    fn potential(&mut self, state: &mut ScalarField, t_mid: f64, delta: f64) {
        if !self.h.potentials.is_empty() {
            self.refresh(t_mid);
        }
        let empty = self.h.potentials.is_empty();
        match self.source {
            None => {
                if !empty {
                    potential_phase(state.values_mut(), &self.potential, delta);
                }
            }
            Some(src) => {
                // e^{-i d V/2} (. - i d F(t_mid)) e^{-i d V/2}
                if !empty {
                    potential_phase(state.values_mut(), &self.potential, 0.5 * delta);
                }
                let f = src.eval(t_mid, &self.kinetic.grid);
                state.axpy(Complex64::new(0.0, -delta), &f);
                if !empty {
                    potential_phase(state.values_mut(), &self.potential, 0.5 * delta);
                }
            }
        }
    }
}

/// `e^{-i delta V}` for `V = [[u, -conj(c)], [c, -u]]`.
///
/// `V^2 = (u^2 - |c|^2) I`, so the exponential is `C I - i delta S V` with
/// `C = cos(delta r)`, `S = sin(delta r) / (delta r)` and `r^2 = u^2 - |c|^2`
/// (hyperbolic functions when `r^2 < 0`).
pub fn matrix_exponential_2x2(u: f64, c: Complex64, delta: f64) -> [[Complex64; 2]; 2] {
    let (cc, ss) = exp_coefficients(u, c, delta);
    let a = Complex64::new(0.0, -delta * ss);
    [
        [Complex64::new(cc, 0.0) + a * u, -a * c.conj()],
        [a * c, Complex64::new(cc, 0.0) - a * u],
    ]
}

fn exp_coefficients(u: f64, c: Complex64, delta: f64) -> (f64, f64) {
    let s = u * u - c.norm_sqr();
    let z = delta * delta * s;
    if 2.0 * s.abs().sqrt() < COALESCENCE_GAP {
        let c = 1.0 - z / 2.0 + z * z / 24.0 - z * z * z / 720.0;
        let sn = 1.0 - z / 6.0 + z * z / 120.0 - z * z * z / 5040.0;
        return (c, sn);
    }
    if z >= 0.0 {
        let r = z.sqrt();
        (r.cos(), r.sin() / r)
    } else {
        let r = (-z).sqrt();
        (r.cosh(), r.sinh() / r)
    }
}

pub(super) struct MatrixSystem<'a> {
    h: &'a MatrixHamiltonian,
    kinetic: KineticCache,
    field: Option<MatrixPotentialField>,
}

impl<'a> MatrixSystem<'a> {
    pub(super) fn new(h: &'a MatrixHamiltonian, grid: &Grid) -> Self {
        Self {
            h,
            kinetic: KineticCache::new(grid),
            field: None,
        }
    }
}

impl Splitting for MatrixSystem<'_> {
    type State = SpinorField;

    fn kinetic(&mut self, state: &mut SpinorField, tau: f64) {
        if tau != 0.0 {
            self.kinetic.apply(state.upper.values_mut(), tau, false);
            self.kinetic.apply(state.lower.values_mut(), tau, true);
        }
    }

    fn potential(&mut self, state: &mut SpinorField, t_mid: f64, delta: f64) {
        if matches!(self.h, MatrixHamiltonian::Moving { potentials } if potentials.is_empty()) {
            return;
        }
        if self.field.is_none() || !self.h.is_static() {
            self.field = Some(self.h.field(t_mid, &self.kinetic.grid));
        }
        let field = self.field.as_ref().unwrap();
        let up = state.upper.values_mut();
        let dn = state.lower.values_mut();
        for i in 0..field.len() {
            let (u, c) = (field.diag[i], field.coupling[i]);
            if u == 0.0 && c == Complex64::new(0.0, 0.0) {
                continue;
            }
            let m = matrix_exponential_2x2(u, c, delta);
            let (a, b) = (up[i], dn[i]);
            up[i] = m[0][0] * a + m[0][1] * b;
            dn[i] = m[1][0] * a + m[1][1] * b;
        }
    }
}
