//! Steady-state Kalman filter and LQG controller synthesis.

use crate::error::{Error, Result};
use crate::numerics::{
    check_symmetric_pd, check_symmetric_psd, ensure_shape, psd_output, solve_dare, solve_dlyap, spd_solve,
    spectral_radius, Matrix,
};
use crate::plant::DiscretePlant;

/// Per-sample quadratic weights of `J = lim (1/N) Σ xᵀWx + uᵀUu`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    w: Matrix,
    u: Matrix,
}

impl CostWeights {
    pub fn new(w: Matrix, u: Matrix) -> Result<Self> {
        check_symmetric_psd("CostWeights.W", &w)?;
        check_symmetric_pd("CostWeights.U", &u)?;
        Ok(Self { w, u })
    }

    pub fn identity(states: usize, inputs: usize) -> Self {
        Self {
            w: Matrix::identity(states, states),
            u: Matrix::identity(inputs, inputs),
        }
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }
    pub fn u(&self) -> &Matrix {
        &self.u
    }

    fn check_against(&self, plant: &DiscretePlant) -> Result<()> {
        ensure_shape("CostWeights", "W", &self.w, plant.states(), plant.states())?;
        ensure_shape("CostWeights", "U", &self.u, plant.inputs(), plant.inputs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanSteady {
    /// `K = P Cᵀ (C P Cᵀ + R_d)⁻¹`
    pub gain: Matrix,
    /// Steady prediction error covariance `P = lim P_{k|k−1}`.
    pub pred_cov: Matrix,
    /// Innovation covariance `C P Cᵀ + R_d`.
    pub resid_cov: Matrix,
}

/// Fixed-gain Kalman filter from the stabilizing solution of the filter DARE.
pub fn kalman_steady(plant: &DiscretePlant) -> Result<KalmanSteady> {
    let c = plant.c();
    let pred_cov = solve_dare(&plant.a().transpose(), &c.transpose(), plant.q(), plant.r())?;
    let resid_cov = psd_output(&(c * &pred_cov * c.transpose() + plant.r()));
    // K = P Cᵀ 𝒫⁻¹, computed as (𝒫⁻¹ C P)ᵀ
    let gain = spd_solve("kalman_steady", &resid_cov, &(c * &pred_cov))?.transpose();
    Ok(KalmanSteady {
        gain,
        pred_cov,
        resid_cov,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqgGain {
    /// `L = −(B_dᵀ S B_d + U)⁻¹ B_dᵀ S A_d`, so that `u = L x̂_{k|k}`.
    pub gain: Matrix,
    /// Control Riccati solution `S`.
    pub riccati: Matrix,
}

pub fn lqg_gain(plant: &DiscretePlant, weights: &CostWeights) -> Result<LqgGain> {
    weights.check_against(plant)?;
    let (a, b) = (plant.a(), plant.b());
    let riccati = solve_dare(a, b, weights.w(), weights.u())?;
    let bts = b.transpose() * &riccati;
    let gain = -spd_solve("lqg_gain", &(weights.u() + &bts * b), &(&bts * a))?;
    Ok(LqgGain { gain, riccati })
}

/// Everything the detector and the watermark design need about the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopDesign {
    pub kalman_gain: Matrix,
    pub pred_cov: Matrix,
    pub lqg_gain: Matrix,
    pub riccati: Matrix,
    /// Residual covariance `𝒫 = C P Cᵀ + R_d`.
    pub resid_cov: Matrix,
    /// `𝒜 = (A_d + B_d L)(I − K C)`
    pub closed_loop: Matrix,
    /// Steady-state per-sample LQG cost without watermark.
    pub nominal_cost: f64,
    /// Output matrix `C`, kept so the detector quantities are self-contained.
    pub output: Matrix,
}

impl ClosedLoopDesign {
    /// Runs both syntheses and assembles the loop.
    pub fn synthesize(plant: &DiscretePlant, weights: &CostWeights) -> Result<Self> {
        let kalman = kalman_steady(plant)?;
        let lqg = lqg_gain(plant, weights)?;
        assemble_closed_loop(plant, &kalman, &lqg, weights)
    }

    pub fn resid_cov_inverse(&self) -> Result<Matrix> {
        let m = self.resid_cov.nrows();
        spd_solve("resid_cov_inverse", &self.resid_cov, &Matrix::identity(m, m))
    }

    pub fn stability(&self) -> StabilityVerdict {
        classify_closed_loop(self)
    }
}

pub fn assemble_closed_loop(
    plant: &DiscretePlant,
    kalman: &KalmanSteady,
    lqg: &LqgGain,
    weights: &CostWeights,
) -> Result<ClosedLoopDesign> {
    let (n, p, m) = (plant.states(), plant.inputs(), plant.outputs());
    weights.check_against(plant)?;
    ensure_shape("assemble_closed_loop", "K", &kalman.gain, n, m)?;
    ensure_shape("assemble_closed_loop", "P", &kalman.pred_cov, n, n)?;
    ensure_shape("assemble_closed_loop", "L", &lqg.gain, p, n)?;
    ensure_shape("assemble_closed_loop", "S", &lqg.riccati, n, n)?;

    let c = plant.c();
    let innovation_gate = Matrix::identity(n, n) - &kalman.gain * c;
    let closed_loop = (plant.a() + plant.b() * &lqg.gain) * innovation_gate;
    let resid_cov = psd_output(&(c * &kalman.pred_cov * c.transpose() + plant.r()));
    let mut design = ClosedLoopDesign {
        kalman_gain: kalman.gain.clone(),
        pred_cov: kalman.pred_cov.clone(),
        lqg_gain: lqg.gain.clone(),
        riccati: lqg.riccati.clone(),
        resid_cov,
        closed_loop,
        nominal_cost: f64::INFINITY,
        output: c.clone(),
    };
    design.nominal_cost = match loop_cost(plant, &design, weights, &Matrix::zeros(p, p)) {
        Ok(j) => j,
        Err(Error::Stability { .. }) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    Ok(design)
}

/// Steady per-sample cost `E[xᵀWx + uᵀUu]` of the loop driven by an i.i.d.
/// watermark of covariance `watermark_cov` added to the LQG input.
///
/// Evaluated from the stationary covariance of `z = [x_k; x_k − x̂_{k|k−1}]`,
/// whose dynamics are block triangular with diagonal blocks `A_d + B_d L` and
/// `A_d (I − K C)`.
pub fn loop_cost(
    plant: &DiscretePlant,
    design: &ClosedLoopDesign,
    weights: &CostWeights,
    watermark_cov: &Matrix,
) -> Result<f64> {
    let (n, p) = (plant.states(), plant.inputs());
    ensure_shape("loop_cost", "watermark covariance", watermark_cov, p, p)?;
    let (a, b, c) = (plant.a(), plant.b(), plant.c());
    let (k, l) = (&design.kalman_gain, &design.lqg_gain);
    let gate = Matrix::identity(n, n) - k * c;
    let bl = b * l;

    let mut f = Matrix::zeros(2 * n, 2 * n);
    f.view_mut((0, 0), (n, n)).copy_from(&(a + &bl));
    f.view_mut((0, n), (n, n)).copy_from(&(-&bl * &gate));
    f.view_mut((n, n), (n, n)).copy_from(&(a * &gate));

    let mut g_w = Matrix::zeros(2 * n, n);
    g_w.view_mut((0, 0), (n, n)).copy_from(&Matrix::identity(n, n));
    g_w.view_mut((n, 0), (n, n)).copy_from(&Matrix::identity(n, n));
    let mut g_v = Matrix::zeros(2 * n, plant.outputs());
    g_v.view_mut((0, 0), (n, plant.outputs())).copy_from(&(&bl * k));
    g_v.view_mut((n, 0), (n, plant.outputs())).copy_from(&(-(a * k)));
    let mut g_wm = Matrix::zeros(2 * n, p);
    g_wm.view_mut((0, 0), (n, p)).copy_from(b);

    let forcing = &g_w * plant.q() * g_w.transpose()
        + &g_v * plant.r() * g_v.transpose()
        + &g_wm * watermark_cov * g_wm.transpose();
    let sigma = solve_dlyap(&f, &psd_output(&forcing))?;

    // u = [L, −L(I − KC)] z + L K v + Δu
    let mut h = Matrix::zeros(p, 2 * n);
    h.view_mut((0, 0), (p, n)).copy_from(l);
    h.view_mut((0, n), (p, n)).copy_from(&(-(l * &gate)));
    let lk = l * k;
    let input_cov = &h * &sigma * h.transpose() + &lk * plant.r() * lk.transpose() + watermark_cov;

    let state_cov = sigma.view((0, 0), (n, n));
    Ok((weights.w() * state_cov).trace() + (weights.u() * input_cov).trace())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityVerdict {
    pub spectral_radius: f64,
    pub stable: bool,
}

/// Stable `𝒜` means a replay without watermark is asymptotically invisible to
/// the χ² detector; unstable `𝒜` means replay is eventually detected anyway.
pub fn classify_closed_loop(design: &ClosedLoopDesign) -> StabilityVerdict {
    let radius = spectral_radius(&design.closed_loop);
    StabilityVerdict {
        spectral_radius: radius,
        stable: radius < 1.0,
    }
}
