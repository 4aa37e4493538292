//! Continuous-time stochastic LTI plants and their zero-order-hold images.
//!
//! A [`ContinuousPlant`] carries `(A, B, C)` and the spectral densities `Q`, `R`
//! of the process and measurement noise. [`ContinuousPlant::discretize`]
//! holds the input constant over each period `T` and produces the exact
//! discrete matrices `A_d = e^{AT}`, `B_d = ∫₀ᵀ e^{As} ds B`, the exact process
//! noise covariance `Q_d`, and the measurement covariance `R_d = R / T`.

use crate::error::{Error, Result};
use crate::numerics::{
    check_symmetric_pd, check_symmetric_psd, ensure_finite, ensure_shape, psd_sqrt, zoh_pair, zoh_process_noise,
    Matrix, Vector,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousPlant {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    q: Matrix,
    r: Matrix,
}

impl ContinuousPlant {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, q: Matrix, r: Matrix) -> Result<Self> {
        let n = a.nrows();
        ensure_shape("ContinuousPlant", "A", &a, n, n)?;
        ensure_shape("ContinuousPlant", "B", &b, n, b.ncols())?;
        ensure_shape("ContinuousPlant", "C", &c, c.nrows(), n)?;
        let m = c.nrows();
        ensure_shape("ContinuousPlant", "Q", &q, n, n)?;
        ensure_shape("ContinuousPlant", "R", &r, m, m)?;
        for mat in [&a, &b, &c] {
            ensure_finite("ContinuousPlant", mat)?;
        }
        check_symmetric_psd("ContinuousPlant.Q", &q)?;
        check_symmetric_pd("ContinuousPlant.R", &r)?;
        Ok(Self { a, b, c, q, r })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn c(&self) -> &Matrix {
        &self.c
    }
    pub fn q(&self) -> &Matrix {
        &self.q
    }
    pub fn r(&self) -> &Matrix {
        &self.r
    }
    pub fn states(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Zero-order-hold discretization at sampling period `period`.
    pub fn discretize(&self, period: f64) -> Result<DiscretePlant> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::domain(
                "discretize",
                format!("sampling period {period} must be positive"),
            ));
        }
        let (a, b) = zoh_pair(&self.a, &self.b, period)?;
        let q = zoh_process_noise(&self.a, &self.q, period)?;
        Ok(DiscretePlant {
            a,
            b,
            c: self.c.clone(),
            q,
            r: &self.r / period,
            period,
        })
    }
}

/// Sampled plant `x_{k+1} = A_d x_k + B_d u_k + w_k`, `y_k = C x_k + v_k` with
/// `w_k ~ N(0, Q_d)` and `v_k ~ N(0, R_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePlant {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    q: Matrix,
    r: Matrix,
    period: f64,
}

impl DiscretePlant {
    /// A plant given directly in discrete time. `period` only tags the model.
    pub fn new(a: Matrix, b: Matrix, c: Matrix, q: Matrix, r: Matrix, period: f64) -> Result<Self> {
        let n = a.nrows();
        ensure_shape("DiscretePlant", "A_d", &a, n, n)?;
        ensure_shape("DiscretePlant", "B_d", &b, n, b.ncols())?;
        ensure_shape("DiscretePlant", "C", &c, c.nrows(), n)?;
        let m = c.nrows();
        ensure_shape("DiscretePlant", "Q_d", &q, n, n)?;
        ensure_shape("DiscretePlant", "R_d", &r, m, m)?;
        for mat in [&a, &b, &c] {
            ensure_finite("DiscretePlant", mat)?;
        }
        check_symmetric_psd("DiscretePlant.Q_d", &q)?;
        check_symmetric_pd("DiscretePlant.R_d", &r)?;
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::domain(
                "DiscretePlant",
                format!("sampling period {period} must be positive"),
            ));
        }
        Ok(Self { a, b, c, q, r, period })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn c(&self) -> &Matrix {
        &self.c
    }
    pub fn q(&self) -> &Matrix {
        &self.q
    }
    pub fn r(&self) -> &Matrix {
        &self.r
    }
    pub fn period(&self) -> f64 {
        self.period
    }
    pub fn states(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }
}

/// Rigid-body parameters of the hover linearization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrotorParams {
    pub mass: f64,
    pub jx: f64,
    pub jy: f64,
    pub jz: f64,
    pub gravity: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            mass: 0.6,
            jx: 0.0092,
            jy: 0.0092,
            jz: 0.0101,
            gravity: 9.81,
        }
    }
}

/// State layout `[ṗx, px, ṗy, py, ṗz, pz, φ̇, φ, θ̇, θ, ψ̇, ψ]`.
pub mod quad_state {
    pub const VX: usize = 0;
    pub const PX: usize = 1;
    pub const VY: usize = 2;
    pub const PY: usize = 3;
    pub const VZ: usize = 4;
    pub const PZ: usize = 5;
    pub const ROLL_RATE: usize = 6;
    pub const ROLL: usize = 7;
    pub const PITCH_RATE: usize = 8;
    pub const PITCH: usize = 9;
    pub const YAW_RATE: usize = 10;
    pub const YAW: usize = 11;
    /// Rate states, i.e. the ones driven directly by forces and torques.
    pub const RATES: [usize; 6] = [VX, VY, VZ, ROLL_RATE, PITCH_RATE, YAW_RATE];
}

pub const QUAD_STATES: usize = 12;
pub const QUAD_INPUTS: usize = 4;
pub const QUAD_OUTPUTS: usize = 4;

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mass", self.mass),
            ("jx", self.jx),
            ("jy", self.jy),
            ("jz", self.jz),
            ("gravity", self.gravity),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "quadrotor parameter `{name}` must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Default noise densities: unit density on the six rate states, `1e-3` on
    /// positions and angles, and `1e-5` on each measured channel.
    pub fn default_noise() -> (Matrix, Matrix) {
        let mut q = Matrix::from_diagonal_element(QUAD_STATES, QUAD_STATES, 1e-3);
        for i in quad_state::RATES {
            q[(i, i)] = 1.0;
        }
        let r = Matrix::from_diagonal_element(QUAD_OUTPUTS, QUAD_OUTPUTS, 1e-5);
        (q, r)
    }
}

/// Hover linearization with input `[F, τφ, τθ, τψ]` (F measured from the hover
/// thrust `m g`) and output `[px, py, pz, ψ]`.
///
/// Conventions: `p̈x = g θ`, `p̈y = −g φ`, `p̈z = −F / m`, `φ̈ = τφ / Jx`,
/// `θ̈ = τθ / Jy`, `ψ̈ = τψ / Jz`.
pub fn quadrotor_hover_plant(params: &QuadrotorParams, q: Matrix, r: Matrix) -> Result<ContinuousPlant> {
    use quad_state::*;
    params.validate()?;
    ensure_shape("quadrotor_hover_plant", "Q", &q, QUAD_STATES, QUAD_STATES)?;
    ensure_shape("quadrotor_hover_plant", "R", &r, QUAD_OUTPUTS, QUAD_OUTPUTS)?;

    let mut a = Matrix::zeros(QUAD_STATES, QUAD_STATES);
    for (pos, rate) in [
        (PX, VX),
        (PY, VY),
        (PZ, VZ),
        (ROLL, ROLL_RATE),
        (PITCH, PITCH_RATE),
        (YAW, YAW_RATE),
    ] {
        a[(pos, rate)] = 1.0;
    }
    a[(VX, PITCH)] = params.gravity;
    a[(VY, ROLL)] = -params.gravity;

    let mut b = Matrix::zeros(QUAD_STATES, QUAD_INPUTS);
    b[(VZ, 0)] = -1.0 / params.mass;
    b[(ROLL_RATE, 1)] = 1.0 / params.jx;
    b[(PITCH_RATE, 2)] = 1.0 / params.jy;
    b[(YAW_RATE, 3)] = 1.0 / params.jz;

    let mut c = Matrix::zeros(QUAD_OUTPUTS, QUAD_STATES);
    for (row, col) in [PX, PY, PZ, YAW].into_iter().enumerate() {
        c[(row, col)] = 1.0;
    }
    ContinuousPlant::new(a, b, c, q, r)
}

/// Fine-step reference integration of `ẋ = Ax + Bu + w` over one held period.
///
/// The period is split into `substeps` intervals of length `h`; on each the
/// noise is constant with covariance `Q / h` and the interval is propagated
/// exactly. `noise_draws` holds `substeps · n` standard normal samples.
pub fn continuous_oracle_step(
    plant: &ContinuousPlant,
    x: &Vector,
    u_held: &Vector,
    period: f64,
    substeps: usize,
    noise_draws: &[f64],
) -> Result<Vector> {
    let n = plant.states();
    if substeps == 0 {
        return Err(Error::domain("continuous_oracle_step", "substeps must be at least 1"));
    }
    if x.len() != n || u_held.len() != plant.inputs() {
        return Err(Error::dim("continuous_oracle_step", "state or input length mismatch"));
    }
    if noise_draws.len() != substeps * n {
        return Err(Error::dim(
            "continuous_oracle_step",
            format!("expected {} noise draws, got {}", substeps * n, noise_draws.len()),
        ));
    }
    let h = period / substeps as f64;
    let (phi, gamma) = zoh_pair(plant.a(), &Matrix::identity(n, n), h)?;
    let noise_factor = psd_sqrt(&(plant.q() / h));
    let drive = plant.b() * u_held;
    let mut state = x.clone();
    for draws in noise_draws.chunks_exact(n) {
        let w = &noise_factor * Vector::from_column_slice(draws);
        state = &phi * state + &gamma * (&drive + w);
    }
    Ok(state)
}
