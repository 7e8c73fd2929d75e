//! Scenario files: TOML with every table closed to unknown keys.

use std::path::Path;

use ctlab::gridfield::{CenterPath, GridParams, WeightProfile};
use ctlab::potentials::{MatrixPotentialSpec, MovingPotential};
use ctlab::propagator::{StepperConfig, TraceFormat};
use ctlab::scattering::WaveOperatorConfig;
use ctlab::Vec3;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridParams,
    #[serde(default)]
    pub potentials: Vec<MovingPotential>,
    #[serde(default)]
    pub matrix_potentials: Vec<MatrixPotentialSpec>,
    #[serde(default)]
    pub initial: InitialDatum,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub source: Option<SourceRecipe>,
    #[serde(default)]
    pub window: Window,
    #[serde(default)]
    pub stepper: StepperConfig,
    #[serde(default)]
    pub wave_operator: WaveOperatorConfig,
    #[serde(default)]
    pub estimators: EstimatorRequests,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDatum {
    GaussianPacket {
        #[serde(default)]
        center: Vec3,
        #[serde(default)]
        momentum: Vec3,
        width: f64,
    },
    RandomBandLimited {
        k_cut: f64,
    },
    /// `sum a_j G_j(s) u_j` over bound states of the listed potentials.
    BoundStateMixture {
        components: Vec<BoundComponent>,
    },
    /// `P_c(s)` applied to another recipe.
    ScatteringProjected {
        base: Box<InitialDatum>,
    },
}

impl Default for InitialDatum {
    fn default() -> Self {
        InitialDatum::GaussianPacket {
            center: [0.0; 3],
            momentum: [0.0; 3],
            width: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundComponent {
    pub potential: usize,
    pub index: usize,
    pub amplitude: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    L2,
    /// `max(||f||_1, ||f||_2) = 1`.
    L1CapL2,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceRecipe {
    GaussianPulse {
        amplitude: f64,
        #[serde(default)]
        center: Vec3,
        width: f64,
        t0: f64,
        duration: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Default for Window {
    fn default() -> Self {
        Self { start: 0.0, end: 10.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorRequests {
    pub bound_states: Option<BoundStatesRequest>,
    pub propagate: Option<PropagateRequest>,
    pub decay: Option<DecayRequest>,
    pub kato_jensen: Option<KatoJensenRequest>,
    pub local_decay: Option<LocalDecayRequest>,
    pub strichartz: Option<StrichartzRequest>,
    pub ac: Option<AcRequest>,
    pub matrix: Option<MatrixRequest>,
    pub oracle: Option<OracleRequest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundStatesRequest {
    pub k_max: usize,
    pub tolerance: f64,
    /// Expected number of bound states per potential.
    pub expect_counts: Option<Vec<usize>>,
}

impl Default for BoundStatesRequest {
    fn default() -> Self {
        Self {
            k_max: 8,
            tolerance: 1e-9,
            expect_counts: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagateRequest {
    /// Write every snapshot in this format under `trace/`.
    pub export: Option<TraceFormat>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayNorm {
    #[default]
    L2PlusLinf,
    Linf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayRequest {
    pub norm: DecayNorm,
    /// Fit window; defaults to `[5, window.end]`.
    pub fit_window: Option<(f64, f64)>,
    pub expect_exponent: Option<(f64, f64)>,
}

impl Default for DecayRequest {
    fn default() -> Self {
        Self {
            norm: DecayNorm::L2PlusLinf,
            fit_window: None,
            expect_exponent: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightCenter {
    Fixed {
        #[serde(default)]
        at: Vec3,
    },
    Moving {
        #[serde(default)]
        origin: Vec3,
        velocity: Vec3,
    },
}

impl Default for WeightCenter {
    fn default() -> Self {
        WeightCenter::Fixed { at: [0.0; 3] }
    }
}

impl WeightCenter {
    pub fn profile(&self, sigma: f64) -> ctlab::Result<WeightProfile> {
        let center = match *self {
            WeightCenter::Fixed { at } => CenterPath::Fixed { at },
            WeightCenter::Moving { origin, velocity } => CenterPath::Moving { origin, velocity },
        };
        WeightProfile::new(sigma, center)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KatoJensenRequest {
    pub sigma: f64,
    pub weight_center: WeightCenter,
    pub t0: f64,
    pub times: Vec<f64>,
    pub iterations: usize,
    pub probes: usize,
    pub k_cut: f64,
    pub fit_window: Option<(f64, f64)>,
    pub expect_exponent: Option<(f64, f64)>,
}

impl Default for KatoJensenRequest {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            weight_center: WeightCenter::default(),
            t0: 0.0,
            times: vec![0.0, 2.0, 4.0, 6.0, 8.0],
            iterations: 10,
            probes: 1,
            k_cut: 2.0,
            fit_window: None,
            expect_exponent: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalDecayRequest {
    pub sigma: f64,
    pub weight_center: WeightCenter,
    pub data: usize,
    pub k_cut: f64,
    /// Bound on `max / min` of the ratios across data.
    pub max_spread: Option<f64>,
    /// Also evaluate on the doubled window and bound the relative change.
    pub max_doubling_change: Option<f64>,
}

impl Default for LocalDecayRequest {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            weight_center: WeightCenter::default(),
            data: 4,
            k_cut: 2.0,
            max_spread: None,
            max_doubling_change: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrichartzRequest {
    /// Number of pairs from `(inf, 2)` to the endpoint; 1 means the endpoint only.
    pub pairs: usize,
    /// Extra random band-limited data besides the configured initial datum.
    pub random_data: usize,
    pub k_cut: f64,
    /// Also evaluate on `[start, 2 end - start]`.
    pub doubling: bool,
    pub max_spread: Option<f64>,
    pub max_doubling_growth: Option<f64>,
}

impl Default for StrichartzRequest {
    fn default() -> Self {
        Self {
            pairs: 1,
            random_data: 0,
            k_cut: 2.0,
            doubling: true,
            max_spread: None,
            max_doubling_growth: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcRequest {
    /// Time at which the intertwining defect is measured; defaults to `window.end`.
    pub intertwining_at: Option<f64>,
    pub max_residual: Option<f64>,
    pub max_intertwining: Option<f64>,
    pub max_overlap: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixRequest {
    pub stability_horizon: f64,
    pub probes: usize,
    pub probe_dt: f64,
    pub max_slope: Option<f64>,
    /// Bound on the relative frame-reduction error (single stationary potential only).
    pub max_frame_error: Option<f64>,
    /// Horizon of the Jordan-chain growth probe (run when a chain exists).
    pub growth_horizon: f64,
}

impl Default for MatrixRequest {
    fn default() -> Self {
        Self {
            stability_horizon: 20.0,
            probes: 3,
            probe_dt: 0.05,
            max_slope: None,
            max_frame_error: None,
            growth_horizon: 20.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleRequest {
    /// Crank-Nicolson step of the dense reference.
    pub oracle_dt: f64,
    pub max_error: Option<f64>,
}

impl Default for OracleRequest {
    fn default() -> Self {
        Self {
            oracle_dt: 1e-3,
            max_error: None,
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(CliError::Validation(format!("scenario name {:?} is not a plain file name", self.name)));
        }
        let v = |e: ctlab::Error| CliError::Validation(e.to_string());
        ctlab::Grid::from_params(self.grid).map_err(v)?;
        for p in &self.potentials {
            p.spec.validate().map_err(v)?;
        }
        for m in &self.matrix_potentials {
            m.validate().map_err(v)?;
        }
        self.stepper.validate().map_err(v)?;
        if !(self.window.end > self.window.start) {
            return Err(CliError::Validation(format!(
                "window end {} must exceed start {}",
                self.window.end, self.window.start
            )));
        }
        Ok(())
    }
}
