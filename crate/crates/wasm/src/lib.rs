//! WebAssembly entry points for the static demo page in `www/`. Each returns a JSON string;
//! the `*_json` functions are the same computations callable natively.

use ctlab::estimators::admissible_pairs;
use ctlab::potentials::{MovingPotential, PotentialSpec, ProfileFamily};
use ctlab::propagator::{propagate_observed, ScalarHamiltonian, StepperConfig};
use ctlab::spectrum::bound_states;
use ctlab::{Grid, ScalarField};
use num_complex::Complex64;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn family(name: &str) -> Result<ProfileFamily, String> {
    match name {
        "gaussian" => Ok(ProfileFamily::Gaussian),
        "sech" => Ok(ProfileFamily::Sech),
        "sech_squared" => Ok(ProfileFamily::SechSquared),
        other => Err(format!("unknown profile family {other:?}")),
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct BoundStatesOut {
    x: Vec<f64>,
    potential: Vec<f64>,
    eigenvalues: Vec<f64>,
    residuals: Vec<f64>,
    densities: Vec<Vec<f64>>,
}

pub fn bound_states_json(profile: &str, amplitude: f64, width: f64, points: usize, half_length: f64) -> Result<String, String> {
    let grid = Grid::new(1, points, half_length).map_err(|e| e.to_string())?;
    let spec = PotentialSpec::new(family(profile)?, amplitude, width, [0.0; 3]).map_err(|e| e.to_string())?;
    let set = bound_states(&spec, &grid, 8, 1e-9).map_err(|e| e.to_string())?;
    to_json(&BoundStatesOut {
        x: grid.axis().to_vec(),
        potential: spec.sample(&grid),
        eigenvalues: set.eigenvalues.clone(),
        residuals: set.residuals.clone(),
        densities: set
            .eigenfunctions
            .iter()
            .map(|u| u.values().iter().map(|z| z.norm_sqr()).collect())
            .collect(),
    })
}

#[derive(Serialize)]
struct PropagationOut {
    x: Vec<f64>,
    times: Vec<f64>,
    densities: Vec<Vec<f64>>,
    well_centers: Vec<f64>,
    norm_drift: f64,
    max_boundary_mass: f64,
    valid: bool,
}

/// A Gaussian packet at `-10` with momentum `momentum` meeting a well that starts at the
/// origin and moves with `velocity`; `frames` density snapshots up to `t_end`.
pub fn moving_well_json(amplitude: f64, velocity: f64, momentum: f64, t_end: f64, frames: usize) -> Result<String, String> {
    if frames < 2 || !(t_end > 0.0) {
        return Err("need at least two frames and a positive end time".into());
    }
    let grid = Grid::new(1, 1024, 80.0).map_err(|e| e.to_string())?;
    let well = MovingPotential::new(PotentialSpec::gaussian(amplitude, 1.0), [velocity, 0.0, 0.0], [0.0; 3]);
    let h = ScalarHamiltonian::new(vec![well]);
    let mut psi = ScalarField::from_fn(&grid, |x| {
        let d = x[0] + 10.0;
        Complex64::from_polar((-d * d / 4.0).exp(), momentum * d)
    });
    psi.normalize();
    let dt = 0.01;
    let steps = (t_end / dt).round().max(1.0) as usize;
    let cfg = StepperConfig {
        dt: t_end / steps as f64,
        snapshot_every: (steps / (frames - 1)).max(1),
        store_snapshots: false,
        ..StepperConfig::default()
    };
    let mut times = Vec::new();
    let mut densities = Vec::new();
    let trace = propagate_observed(&h, &psi, 0.0, t_end, &cfg, |t, f| {
        times.push(t);
        densities.push(f.values().iter().map(|z| z.norm_sqr()).collect());
    })
    .map_err(|e| e.to_string())?;
    to_json(&PropagationOut {
        x: grid.axis().to_vec(),
        well_centers: times.iter().map(|t| well.center(*t)[0]).collect(),
        times,
        densities,
        norm_drift: trace.norm_drift(),
        max_boundary_mass: trace.max_boundary_mass(),
        valid: trace.valid,
    })
}

#[derive(Serialize)]
struct PairOut {
    p: String,
    q: String,
    identity_holds: bool,
    endpoint: bool,
}

pub fn admissible_pairs_json(dim: usize, count: usize) -> Result<String, String> {
    let pairs = admissible_pairs(dim, count).map_err(|e| e.to_string())?;
    let show = |x: f64| if x.is_finite() { format!("{x:.4}") } else { "inf".into() };
    let last = pairs.len().saturating_sub(1);
    to_json(
        &pairs
            .iter()
            .enumerate()
            .map(|(i, p)| PairOut {
                p: show(p.p),
                q: show(p.q),
                identity_holds: p.satisfies_identity(),
                endpoint: i == last,
            })
            .collect::<Vec<_>>(),
    )
}

#[wasm_bindgen]
pub fn bound_states_demo(profile: &str, amplitude: f64, width: f64, points: usize, half_length: f64) -> Result<String, JsValue> {
    bound_states_json(profile, amplitude, width, points, half_length).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn moving_well_demo(amplitude: f64, velocity: f64, momentum: f64, t_end: f64, frames: usize) -> Result<String, JsValue> {
    moving_well_json(amplitude, velocity, momentum, t_end, frames).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn admissible_pairs_demo(dim: usize, count: usize) -> Result<String, JsValue> {
    admissible_pairs_json(dim, count).map_err(|e| JsValue::from_str(&e))
}
