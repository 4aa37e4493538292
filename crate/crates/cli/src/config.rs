//! TOML scenario files.
//!
//! ```toml
//! seed = 42
//!
//! [plant]
//! kind = "quadrotor"        # or "matrices" (continuous) or "discrete"
//!
//! [weights]
//! w = 1.0                   # scalar·I, {diag = [...]}, or row-major [[...], ...]
//! u = 1.0
//!
//! [sampling]
//! period = 0.1
//! grid = [0.01, 0.02, 0.04, 0.07, 0.1, 0.15]
//! max_period = 0.2
//! reference = 0.01
//!
//! [watermark]
//! budget = 1.0
//!
//! [detector]
//! window = 10
//! false_alarm = 0.05
//!
//! [simulation]
//! horizon = 2100
//! trials = 100
//!
//! [attack]
//! record_start = 100
//! record_len = 1000
//! replay_start = 1100
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use watermark_core::lqg::CostWeights;
use watermark_core::numerics::Matrix;
use watermark_core::plant::{quadrotor_hover_plant, ContinuousPlant, DiscretePlant, QuadrotorParams};
use watermark_core::sim::{DetectorConfig, ReplayAttack};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub plant: PlantSpec,
    #[serde(default)]
    pub weights: WeightsSpec,
    #[serde(default)]
    pub sampling: SamplingSpec,
    #[serde(default)]
    pub watermark: WatermarkSpec,
    #[serde(default)]
    pub detector: DetectorSpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSpec>,
}

/// A matrix as `s` (meaning `s·I`), `{ diag = [...] }`, or row-major rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Diag { diag: Vec<f64> },
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    /// Builds the matrix, checking it against the expected shape.
    pub fn build(&self, field: &str, rows: usize, cols: usize) -> Result<Matrix, CliError> {
        let m = match self {
            MatrixSpec::Scalar(s) => {
                if rows != cols {
                    return Err(CliError::validation(
                        field,
                        format!("a scalar means s·I, but the expected shape is {rows}x{cols}"),
                    ));
                }
                Matrix::identity(rows, cols) * *s
            }
            MatrixSpec::Diag { diag } => {
                if rows != cols || diag.len() != rows {
                    return Err(CliError::validation(
                        field,
                        format!("diag has {} entries, expected {rows}", diag.len()),
                    ));
                }
                Matrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag))
            }
            MatrixSpec::Rows(data) => {
                let m = Self::from_rows(field, data)?;
                if m.shape() != (rows, cols) {
                    return Err(CliError::validation(
                        field,
                        format!("is {}x{}, expected {rows}x{cols}", m.nrows(), m.ncols()),
                    ));
                }
                m
            }
        };
        if m.iter().any(|v| !v.is_finite()) {
            return Err(CliError::validation(field, "contains a non-finite entry"));
        }
        Ok(m)
    }

    /// Rows form only; shape comes from the data.
    fn from_rows(field: &str, data: &[Vec<f64>]) -> Result<Matrix, CliError> {
        watermark_core::numerics::from_rows(data).map_err(|e| CliError::validation(field, e.to_string()))
    }

    fn rows_only(&self, field: &str) -> Result<Matrix, CliError> {
        match self {
            MatrixSpec::Rows(data) => Self::from_rows(field, data),
            _ => Err(CliError::validation(field, "must be given as explicit rows")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PlantSpec {
    /// Linearized hover model; noise intensities default to the documented values.
    Quadrotor(QuadrotorSpec),
    /// Continuous-time `(A, B, C)` with noise intensities `Q`, `R`.
    Matrices(MatrixPlantSpec),
    /// Already sampled `(A_d, B_d, C)` with `Q_d`, `R_d` at a fixed period.
    Discrete(DiscretePlantSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadrotorSpec {
    #[serde(default = "defaults::mass")]
    pub mass: f64,
    #[serde(default = "defaults::jx")]
    pub jx: f64,
    #[serde(default = "defaults::jy")]
    pub jy: f64,
    #[serde(default = "defaults::jz")]
    pub jz: f64,
    #[serde(default = "defaults::gravity")]
    pub gravity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<MatrixSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixPlantSpec {
    pub a: MatrixSpec,
    pub b: MatrixSpec,
    pub c: MatrixSpec,
    pub q: MatrixSpec,
    pub r: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretePlantSpec {
    pub a: MatrixSpec,
    pub b: MatrixSpec,
    pub c: MatrixSpec,
    pub q: MatrixSpec,
    pub r: MatrixSpec,
    pub period: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSpec {
    /// State weight; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<MatrixSpec>,
    /// Input weight; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<MatrixSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    /// Upper bound `T̄` on admissible periods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_period: Option<f64>,
    /// Normalizing period of the cost table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkSpec {
    /// Cost budget `μ`.
    #[serde(default = "defaults::budget")]
    pub budget: f64,
}

impl Default for WatermarkSpec {
    fn default() -> Self {
        Self {
            budget: defaults::budget(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    #[serde(default = "defaults::window")]
    pub window: usize,
    #[serde(default = "defaults::false_alarm")]
    pub false_alarm: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            window: defaults::window(),
            false_alarm: defaults::false_alarm(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default = "defaults::horizon")]
    pub horizon: usize,
    #[serde(default = "defaults::trials")]
    pub trials: usize,
    /// Steps after replay onset excluded from attack statistics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settling: Option<usize>,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            horizon: defaults::horizon(),
            trials: defaults::trials(),
            settling: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub record_start: usize,
    pub record_len: usize,
    pub replay_start: usize,
}

mod defaults {
    use watermark_core::plant::QuadrotorParams;

    pub fn mass() -> f64 {
        QuadrotorParams::default().mass
    }
    pub fn jx() -> f64 {
        QuadrotorParams::default().jx
    }
    pub fn jy() -> f64 {
        QuadrotorParams::default().jy
    }
    pub fn jz() -> f64 {
        QuadrotorParams::default().jz
    }
    pub fn gravity() -> f64 {
        QuadrotorParams::default().gravity
    }
    pub fn budget() -> f64 {
        1.0
    }
    pub fn window() -> usize {
        10
    }
    pub fn false_alarm() -> f64 {
        0.05
    }
    pub fn horizon() -> usize {
        2_000
    }
    pub fn trials() -> usize {
        100
    }
}

/// The plant after validation.
#[derive(Debug, Clone, PartialEq)]
pub enum PlantModel {
    Continuous(ContinuousPlant),
    Discrete(DiscretePlant),
}

impl PlantModel {
    pub fn states(&self) -> usize {
        match self {
            PlantModel::Continuous(p) => p.states(),
            PlantModel::Discrete(p) => p.states(),
        }
    }

    pub fn inputs(&self) -> usize {
        match self {
            PlantModel::Continuous(p) => p.inputs(),
            PlantModel::Discrete(p) => p.inputs(),
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            PlantModel::Continuous(p) => p.outputs(),
            PlantModel::Discrete(p) => p.outputs(),
        }
    }

    /// Sampled plant at `period`; a discrete plant only admits its own period.
    pub fn at_period(&self, period: f64) -> Result<DiscretePlant, CliError> {
        match self {
            PlantModel::Continuous(p) => Ok(p.discretize(period)?),
            PlantModel::Discrete(p) if p.period() == period => Ok(p.clone()),
            PlantModel::Discrete(p) => Err(CliError::validation(
                "sampling.period",
                format!("a discrete plant is fixed at period {}, got {period}", p.period()),
            )),
        }
    }

    pub fn continuous(&self, command: &str) -> Result<&ContinuousPlant, CliError> {
        match self {
            PlantModel::Continuous(p) => Ok(p),
            PlantModel::Discrete(_) => Err(CliError::validation(
                "plant.kind",
                format!("`{command}` varies the sampling period and needs a continuous plant"),
            )),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config: cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    /// Checks every invariant that does not depend on the subcommand.
    pub fn validate(&self) -> Result<(), CliError> {
        let plant = self.plant_model()?;
        self.weights(&plant)?;
        let s = &self.sampling;
        if let Some(t_bar) = s.max_period {
            if !(t_bar > 0.0 && t_bar.is_finite()) {
                return Err(CliError::validation(
                    "sampling.max_period",
                    format!("{t_bar} must be positive"),
                ));
            }
        }
        if let Some(t) = s.period {
            self.check_period("sampling.period", t)?;
        }
        if let Some(grid) = &s.grid {
            if grid.is_empty() {
                return Err(CliError::validation("sampling.grid", "is empty"));
            }
            for (i, t) in grid.iter().enumerate() {
                self.check_period(&format!("sampling.grid[{i}]"), *t)?;
            }
        }
        if let Some(r) = s.reference {
            self.check_period("sampling.reference", r)?;
        }
        if let PlantSpec::Discrete(d) = &self.plant {
            if s.period.is_some_and(|t| t != d.period) {
                return Err(CliError::validation(
                    "sampling.period",
                    format!("differs from plant.period = {}", d.period),
                ));
            }
        }
        let mu = self.watermark.budget;
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(CliError::validation(
                "watermark.budget",
                format!("μ = {mu} must be positive"),
            ));
        }
        self.detector(plant.outputs())?;
        if self.simulation.horizon == 0 {
            return Err(CliError::validation("simulation.horizon", "must be positive"));
        }
        if let Some(att) = self.attack {
            let attack = self.replay_attack(att)?;
            if self.simulation.horizon <= attack.replay_start + self.detector.window {
                return Err(CliError::validation(
                    "simulation.horizon",
                    format!(
                        "{} must exceed attack.replay_start + detector.window = {}",
                        self.simulation.horizon,
                        attack.replay_start + self.detector.window
                    ),
                ));
            }
        }
        Ok(())
    }

    fn check_period(&self, field: &str, t: f64) -> Result<(), CliError> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::validation(field, format!("{t} must be positive")));
        }
        if let Some(t_bar) = self.sampling.max_period {
            if t > t_bar {
                return Err(CliError::validation(
                    field,
                    format!("{t} exceeds sampling.max_period = {t_bar}"),
                ));
            }
        }
        Ok(())
    }

    pub fn plant_model(&self) -> Result<PlantModel, CliError> {
        let model = match &self.plant {
            PlantSpec::Quadrotor(q) => {
                let params = QuadrotorParams {
                    mass: q.mass,
                    jx: q.jx,
                    jy: q.jy,
                    jz: q.jz,
                    gravity: q.gravity,
                };
                params
                    .validate()
                    .map_err(|e| CliError::validation("plant", e.to_string()))?;
                let (q0, r0) = QuadrotorParams::default_noise();
                let qm = match &q.q {
                    Some(spec) => spec.build("plant.q", q0.nrows(), q0.ncols())?,
                    None => q0,
                };
                let rm = match &q.r {
                    Some(spec) => spec.build("plant.r", r0.nrows(), r0.ncols())?,
                    None => r0,
                };
                PlantModel::Continuous(
                    quadrotor_hover_plant(&params, qm, rm).map_err(|e| CliError::validation("plant", e.to_string()))?,
                )
            }
            PlantSpec::Matrices(m) => {
                let (a, b, c) = matrix_triple(&m.a, &m.b, &m.c)?;
                let q = m.q.build("plant.q", a.nrows(), a.nrows())?;
                let r = m.r.build("plant.r", c.nrows(), c.nrows())?;
                PlantModel::Continuous(
                    ContinuousPlant::new(a, b, c, q, r).map_err(|e| CliError::validation("plant", e.to_string()))?,
                )
            }
            PlantSpec::Discrete(d) => {
                let (a, b, c) = matrix_triple(&d.a, &d.b, &d.c)?;
                let q = d.q.build("plant.q", a.nrows(), a.nrows())?;
                let r = d.r.build("plant.r", c.nrows(), c.nrows())?;
                if !(d.period > 0.0 && d.period.is_finite()) {
                    return Err(CliError::validation(
                        "plant.period",
                        format!("{} must be positive", d.period),
                    ));
                }
                PlantModel::Discrete(
                    DiscretePlant::new(a, b, c, q, r, d.period)
                        .map_err(|e| CliError::validation("plant", e.to_string()))?,
                )
            }
        };
        Ok(model)
    }

    pub fn weights(&self, plant: &PlantModel) -> Result<CostWeights, CliError> {
        let (n, p) = (plant.states(), plant.inputs());
        let w = match &self.weights.w {
            Some(spec) => spec.build("weights.w", n, n)?,
            None => Matrix::identity(n, n),
        };
        let u = match &self.weights.u {
            Some(spec) => spec.build("weights.u", p, p)?,
            None => Matrix::identity(p, p),
        };
        CostWeights::new(w, u).map_err(|e| CliError::validation("weights", e.to_string()))
    }

    pub fn detector(&self, outputs: usize) -> Result<DetectorConfig, CliError> {
        if self.detector.window == 0 {
            return Err(CliError::validation("detector.window", "must be at least 1"));
        }
        let alpha = self.detector.false_alarm;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CliError::validation(
                "detector.false_alarm",
                format!("α = {alpha} is outside (0, 1)"),
            ));
        }
        DetectorConfig::new(self.detector.window, alpha, outputs)
            .map_err(|e| CliError::validation("detector", e.to_string()))
    }

    pub fn replay_attack(&self, spec: AttackSpec) -> Result<ReplayAttack, CliError> {
        ReplayAttack::new(
            spec.record_start,
            spec.record_len,
            spec.replay_start,
            self.detector.window,
        )
        .map_err(|e| CliError::validation("attack", e.to_string()))
    }

    /// The single period for `design` and `simulate`.
    pub fn single_period(&self) -> Result<f64, CliError> {
        match (&self.plant, self.sampling.period) {
            (_, Some(t)) => Ok(t),
            (PlantSpec::Discrete(d), None) => Ok(d.period),
            _ => Err(CliError::validation("sampling.period", "is required by this command")),
        }
    }

    pub fn grid(&self) -> Result<Vec<f64>, CliError> {
        self.sampling
            .grid
            .clone()
            .ok_or_else(|| CliError::validation("sampling.grid", "is required by this command"))
    }
}

fn matrix_triple(a: &MatrixSpec, b: &MatrixSpec, c: &MatrixSpec) -> Result<(Matrix, Matrix, Matrix), CliError> {
    let a = a.rows_only("plant.a")?;
    if !a.is_square() || a.nrows() == 0 {
        return Err(CliError::validation("plant.a", "must be square and non-empty"));
    }
    let b = b.rows_only("plant.b")?;
    if b.nrows() != a.nrows() {
        return Err(CliError::validation(
            "plant.b",
            format!("has {} rows, expected {}", b.nrows(), a.nrows()),
        ));
    }
    let c = c.rows_only("plant.c")?;
    if c.ncols() != a.nrows() {
        return Err(CliError::validation(
            "plant.c",
            format!("has {} columns, expected {}", c.ncols(), a.nrows()),
        ));
    }
    Ok((a, b, c))
}
