//! Seeded Monte Carlo simulation of the watermarked LQG loop under replay.
//!
//! Per step `k`:
//!
//! ```text
//! y_k     = C x_k + v_k                    (or a recorded output while replaying)
//! r_k     = y′_k − C x̂_{k|k−1}
//! g_k     = Σ_{i=k−𝒯+1}^{k} r_iᵀ 𝒫⁻¹ r_i
//! x̂_{k|k} = x̂_{k|k−1} + K r_k
//! u_k     = L x̂_{k|k} + Δu_k,              Δu_k ~ N(0, 𝒬)
//! x_{k+1} = A_d x_k + B_d u_k + w_k
//! ```
//!
//! Each trial draws process noise, measurement noise, watermark and initial
//! condition from four independent ChaCha substreams keyed by `(seed, trial)`,
//! so results do not depend on scheduling.

mod engine;
mod experiments;

pub use experiments::{
    cost_ratio_table, default_settling, empirical_cost_increase, empirical_lqg_cost, monte_carlo_mean_g, roc_curve,
    CostIncreaseEstimate, CostRatioRow, Experiment, MeanCi, MeanG, RocCurve, RocPoint,
};

use crate::error::{Error, Result};
use crate::lqg::ClosedLoopDesign;
use crate::numerics::{chi2_quantile, Matrix, Vector};
use crate::plant::DiscretePlant;
use engine::{Engine, LoopModel};

/// Windowed χ² detector: alarm when `g_k > threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub window: usize,
    pub false_alarm_prob: f64,
    pub dof: usize,
    pub threshold: f64,
}

impl DetectorConfig {
    /// Threshold at the `1 − α` quantile of `χ²(m𝒯)`.
    pub fn new(window: usize, false_alarm_prob: f64, outputs: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("detector window must be at least 1".into()));
        }
        if outputs == 0 {
            return Err(Error::Config("detector needs at least one output".into()));
        }
        if !(false_alarm_prob > 0.0 && false_alarm_prob < 1.0) {
            return Err(Error::Config(format!(
                "false alarm probability {false_alarm_prob} is outside (0, 1)"
            )));
        }
        let dof = window * outputs;
        Ok(Self {
            window,
            false_alarm_prob,
            dof,
            threshold: chi2_quantile(dof, 1.0 - false_alarm_prob)?,
        })
    }
}

/// Sensor replay: outputs of `[record_start, record_start + record_len)` are
/// resent verbatim during `[replay_start, replay_start + record_len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayAttack {
    pub record_start: usize,
    pub record_len: usize,
    pub replay_start: usize,
}

impl ReplayAttack {
    pub fn new(record_start: usize, record_len: usize, replay_start: usize, window: usize) -> Result<Self> {
        if record_len < window.max(1) {
            return Err(Error::Config(format!(
                "attack.record_len = {record_len} is shorter than the detector window {window}"
            )));
        }
        if replay_start < record_start + record_len {
            return Err(Error::Config(format!(
                "attack.replay_start = {replay_start} precedes the end of recording at {}",
                record_start + record_len
            )));
        }
        Ok(Self {
            record_start,
            record_len,
            replay_start,
        })
    }

    pub fn replay_end(&self) -> usize {
        self.replay_start + self.record_len
    }

    pub fn is_active(&self, k: usize) -> bool {
        k >= self.replay_start && k < self.replay_end()
    }

    /// Horizon covering the whole replay.
    pub fn full_horizon(&self) -> usize {
        self.replay_end()
    }

    pub(crate) fn check_horizon(&self, horizon: usize, window: usize) -> Result<()> {
        if horizon <= self.replay_start + window {
            return Err(Error::Config(format!(
                "horizon {horizon} must exceed attack.replay_start + window = {}",
                self.replay_start + window
            )));
        }
        Ok(())
    }
}

/// Full record of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub states: Vec<Vector>,
    /// `x̂_{k|k−1}`
    pub estimates: Vec<Vector>,
    /// Applied input including the watermark.
    pub controls: Vec<Vector>,
    pub watermarks: Vec<Vector>,
    /// Output delivered to the estimator.
    pub outputs: Vec<Vector>,
    pub residuals: Vec<Vector>,
    pub g: Vec<f64>,
    pub alarms: Vec<bool>,
    pub attack_active: Vec<bool>,
    pub threshold: f64,
    pub window: usize,
    /// `ζ = x̂_{replay_start|·} − x̂_{record_start|·}`, the estimator mismatch at
    /// replay onset.
    pub replay_mismatch: Option<Vector>,
    /// `𝒫⁻¹`, kept for recomputing `g`.
    pub resid_cov_inv: Matrix,
}

impl SimTrace {
    pub fn horizon(&self) -> usize {
        self.g.len()
    }

    /// First step with a full window.
    pub fn first_valid(&self) -> usize {
        self.window - 1
    }

    /// `g_k` recomputed from the stored residuals.
    pub fn recompute_g(&self, k: usize) -> f64 {
        let lo = (k + 1).saturating_sub(self.window);
        self.residuals[lo..=k]
            .iter()
            .map(|r| (r.transpose() * &self.resid_cov_inv * r)[(0, 0)])
            .sum()
    }
}

/// Runs one trajectory of length `horizon`.
pub fn simulate(
    plant: &DiscretePlant,
    design: &ClosedLoopDesign,
    cov_q: &Matrix,
    detector: &DetectorConfig,
    attack: Option<ReplayAttack>,
    horizon: usize,
    seed: u64,
) -> Result<SimTrace> {
    if let Some(att) = attack {
        att.check_horizon(horizon, detector.window)?;
    }
    let model = LoopModel::new(plant, design, cov_q)?;
    let mut engine = Engine::new(&model, detector.window, attack, seed, 0);
    let mut trace = SimTrace {
        states: Vec::with_capacity(horizon),
        estimates: Vec::with_capacity(horizon),
        controls: Vec::with_capacity(horizon),
        watermarks: Vec::with_capacity(horizon),
        outputs: Vec::with_capacity(horizon),
        residuals: Vec::with_capacity(horizon),
        g: Vec::with_capacity(horizon),
        alarms: Vec::with_capacity(horizon),
        attack_active: Vec::with_capacity(horizon),
        threshold: detector.threshold,
        window: detector.window,
        replay_mismatch: None,
        resid_cov_inv: model.resid_inv.clone(),
    };
    for _ in 0..horizon {
        trace.states.push(engine.x.clone());
        trace.estimates.push(engine.pred.clone());
        let rec = engine.step();
        trace.controls.push(engine.u.clone());
        trace.watermarks.push(engine.watermark_draw.clone());
        trace.outputs.push(engine.delivered.clone());
        trace.residuals.push(engine.resid.clone());
        trace.g.push(rec.g);
        trace.alarms.push(rec.g > detector.threshold);
        trace.attack_active.push(rec.attack_active);
    }
    if let Some(att) = attack {
        if att.replay_start < horizon {
            trace.replay_mismatch = Some(&trace.estimates[att.replay_start] - &trace.estimates[att.record_start]);
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqg::CostWeights;
    use nalgebra::dmatrix;

    fn golden() -> (DiscretePlant, ClosedLoopDesign) {
        let plant = DiscretePlant::new(
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            1.0,
        )
        .unwrap();
        let design = ClosedLoopDesign::synthesize(&plant, &CostWeights::identity(1, 1)).unwrap();
        (plant, design)
    }

    #[test]
    fn detector_threshold() {
        let d = DetectorConfig::new(1, (-1.0f64).exp(), 2).unwrap();
        assert_eq!(d.dof, 2);
        assert!((d.threshold - 2.0).abs() < 1e-9);
        assert!(DetectorConfig::new(0, 0.05, 1).is_err());
        assert!(DetectorConfig::new(5, 1.0, 1).is_err());
        assert!(DetectorConfig::new(5, 0.0, 1).is_err());
    }

    #[test]
    fn attack_validation() {
        assert!(ReplayAttack::new(10, 5, 15, 10).is_err());
        assert!(ReplayAttack::new(10, 20, 25, 10).is_err());
        let a = ReplayAttack::new(10, 20, 30, 10).unwrap();
        assert!(a.is_active(30) && a.is_active(49) && !a.is_active(50) && !a.is_active(29));
        assert!(a.check_horizon(40, 10).is_err());
        assert!(a.check_horizon(41, 10).is_ok());
    }

    #[test]
    fn trace_invariants() {
        let (plant, design) = golden();
        let det = DetectorConfig::new(4, 0.05, 1).unwrap();
        let att = ReplayAttack::new(20, 30, 60, 4).unwrap();
        let tr = simulate(&plant, &design, &dmatrix![0.3], &det, Some(att), 100, 11).unwrap();
        assert_eq!(tr.horizon(), 100);
        for k in 0..100 {
            assert!((tr.g[k] - tr.recompute_g(k)).abs() <= 1e-9 * (1.0 + tr.g[k]));
            assert_eq!(tr.alarms[k], tr.g[k] > tr.threshold);
            assert_eq!(tr.attack_active[k], (60..90).contains(&k));
        }
        for j in 0..30 {
            assert_eq!(tr.outputs[60 + j], tr.outputs[20 + j]);
        }
        let zeta = tr.replay_mismatch.clone().unwrap();
        assert_eq!(zeta, &tr.estimates[60] - &tr.estimates[20]);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let (plant, design) = golden();
        let det = DetectorConfig::new(3, 0.05, 1).unwrap();
        let a = simulate(&plant, &design, &dmatrix![0.2], &det, None, 200, 5).unwrap();
        let b = simulate(&plant, &design, &dmatrix![0.2], &det, None, 200, 5).unwrap();
        let c = simulate(&plant, &design, &dmatrix![0.2], &det, None, 200, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.g, c.g);
    }

    #[test]
    fn infeasible_horizon_is_rejected() {
        let (plant, design) = golden();
        let det = DetectorConfig::new(4, 0.05, 1).unwrap();
        let att = ReplayAttack::new(0, 10, 10, 4).unwrap();
        assert!(matches!(
            simulate(&plant, &design, &dmatrix![0.0], &det, Some(att), 14, 1),
            Err(Error::Config(_))
        ));
    }
}
