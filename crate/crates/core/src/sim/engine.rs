//! Allocation-free closed-loop stepper shared by the full-trace simulator and
//! the Monte Carlo drivers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ReplayAttack;
use crate::error::Result;
use crate::lqg::ClosedLoopDesign;
use crate::numerics::{ensure_shape, psd_sqrt, spectral_radius, Matrix, Vector};
use crate::plant::DiscretePlant;

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Purpose {
    Process = 0,
    Measurement = 1,
    Watermark = 2,
    Initial = 3,
}

fn stream(seed: u64, trial: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((trial << 2) | purpose as u64);
    rng
}

fn fill_normal(rng: &mut ChaCha8Rng, out: &mut Vector) {
    for z in out.iter_mut() {
        *z = rng.sample(StandardNormal);
    }
}

/// Matrices of one closed loop, pre-factored for simulation.
#[derive(Debug, Clone)]
pub(crate) struct LoopModel {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    kalman: Matrix,
    lqg: Matrix,
    sqrt_q: Matrix,
    sqrt_r: Matrix,
    sqrt_wm: Matrix,
    sqrt_p: Matrix,
    pub(crate) resid_inv: Matrix,
    w: Matrix,
    u: Matrix,
    /// Spectral radius of the joint state/estimation-error dynamics.
    pub(crate) mixing_radius: f64,
}

impl LoopModel {
    pub(crate) fn new(plant: &DiscretePlant, design: &ClosedLoopDesign, cov_q: &Matrix) -> Result<Self> {
        let (n, p) = (plant.states(), plant.inputs());
        ensure_shape("simulate", "𝒬", cov_q, p, p)?;
        let gate = Matrix::identity(n, n) - &design.kalman_gain * plant.c();
        let regulator = plant.a() + plant.b() * &design.lqg_gain;
        let estimator = plant.a() * gate;
        Ok(Self {
            a: plant.a().clone(),
            b: plant.b().clone(),
            c: plant.c().clone(),
            kalman: design.kalman_gain.clone(),
            lqg: design.lqg_gain.clone(),
            sqrt_q: psd_sqrt(plant.q()),
            sqrt_r: psd_sqrt(plant.r()),
            sqrt_wm: psd_sqrt(cov_q),
            sqrt_p: psd_sqrt(&design.pred_cov),
            resid_inv: design.resid_cov_inverse()?,
            w: Matrix::identity(n, n),
            u: Matrix::identity(p, p),
            mixing_radius: spectral_radius(&regulator).max(spectral_radius(&estimator)),
        })
    }

    pub(crate) fn with_weights(mut self, w: &Matrix, u: &Matrix) -> Self {
        self.w = w.clone();
        self.u = u.clone();
        self
    }

    /// Same loop with the watermark factor multiplied by `gain`.
    pub(crate) fn with_watermark_gain(&self, gain: f64) -> Self {
        let mut out = self.clone();
        out.sqrt_wm *= gain;
        out
    }

    /// Steps for the joint transient to decay by `1e-6` in amplitude.
    pub(crate) fn burn_in(&self) -> usize {
        decay_steps(self.mixing_radius)
    }
}

pub(crate) fn decay_steps(radius: f64) -> usize {
    if radius < 1e-12 {
        return 1;
    }
    if radius >= 1.0 {
        return usize::MAX;
    }
    ((1e-6f64).ln() / radius.ln()).ceil().clamp(1.0, 1e6) as usize
}

/// Observables of one step.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepRecord {
    pub k: usize,
    /// Window sum; partial for `k < window − 1`.
    pub g: f64,
    pub attack_active: bool,
    /// `x_kᵀ W x_k + u_kᵀ U u_k`
    pub stage_cost: f64,
}

/// One trial in progress.
pub(crate) struct Engine<'m> {
    model: &'m LoopModel,
    process: ChaCha8Rng,
    measurement: ChaCha8Rng,
    watermark: ChaCha8Rng,
    attack: Option<ReplayAttack>,
    recorded: Vec<Vector>,
    window: usize,
    ring: Vec<f64>,
    k: usize,
    pub x: Vector,
    /// `x̂_{k|k−1}`
    pub pred: Vector,
    pub filt: Vector,
    pub u: Vector,
    /// Output delivered to the estimator.
    pub delivered: Vector,
    pub resid: Vector,
    pub watermark_draw: Vector,
    y_true: Vector,
    zn: Vector,
    zm: Vector,
    tmp_n: Vector,
    tmp_m: Vector,
    tmp_p: Vector,
}

impl<'m> Engine<'m> {
    pub(crate) fn new(
        model: &'m LoopModel,
        window: usize,
        attack: Option<ReplayAttack>,
        seed: u64,
        trial: u64,
    ) -> Self {
        let (n, p, m) = (model.a.nrows(), model.b.ncols(), model.c.nrows());
        let mut initial = stream(seed, trial, Purpose::Initial);
        let mut z0 = Vector::zeros(n);
        fill_normal(&mut initial, &mut z0);
        Self {
            model,
            process: stream(seed, trial, Purpose::Process),
            measurement: stream(seed, trial, Purpose::Measurement),
            watermark: stream(seed, trial, Purpose::Watermark),
            attack,
            recorded: Vec::with_capacity(attack.map_or(0, |a| a.record_len)),
            window,
            ring: vec![0.0; window],
            k: 0,
            // x̂_{0|−1} = 0 and x_0 ~ N(0, P): the estimation error starts stationary.
            x: &model.sqrt_p * z0,
            pred: Vector::zeros(n),
            filt: Vector::zeros(n),
            u: Vector::zeros(p),
            delivered: Vector::zeros(m),
            resid: Vector::zeros(m),
            watermark_draw: Vector::zeros(p),
            y_true: Vector::zeros(m),
            zn: Vector::zeros(n),
            zm: Vector::zeros(m),
            tmp_n: Vector::zeros(n),
            tmp_m: Vector::zeros(m),
            tmp_p: Vector::zeros(p),
        }
    }

    pub(crate) fn step(&mut self) -> StepRecord {
        let m = self.model;
        let k = self.k;

        fill_normal(&mut self.measurement, &mut self.zm);
        self.y_true.gemv(1.0, &m.c, &self.x, 0.0);
        self.y_true.gemv(1.0, &m.sqrt_r, &self.zm, 1.0);

        let mut attack_active = false;
        self.delivered.copy_from(&self.y_true);
        if let Some(att) = self.attack {
            if k >= att.record_start && k < att.record_start + att.record_len {
                self.recorded.push(self.y_true.clone());
            }
            if att.is_active(k) {
                attack_active = true;
                self.delivered.copy_from(&self.recorded[k - att.replay_start]);
            }
        }

        self.resid.copy_from(&self.delivered);
        self.resid.gemv(-1.0, &m.c, &self.pred, 1.0);
        self.tmp_m.gemv(1.0, &m.resid_inv, &self.resid, 0.0);
        self.ring[k % self.window] = self.resid.dot(&self.tmp_m);
        let g = self.ring.iter().sum();

        self.filt.copy_from(&self.pred);
        self.filt.gemv(1.0, &m.kalman, &self.resid, 1.0);

        fill_normal(&mut self.watermark, &mut self.tmp_p);
        self.watermark_draw.gemv(1.0, &m.sqrt_wm, &self.tmp_p, 0.0);
        self.u.gemv(1.0, &m.lqg, &self.filt, 0.0);
        self.u += &self.watermark_draw;

        self.tmp_n.gemv(1.0, &m.w, &self.x, 0.0);
        let mut stage_cost = self.x.dot(&self.tmp_n);
        self.tmp_p.gemv(1.0, &m.u, &self.u, 0.0);
        stage_cost += self.u.dot(&self.tmp_p);

        fill_normal(&mut self.process, &mut self.zn);
        self.tmp_n.gemv(1.0, &m.a, &self.x, 0.0);
        self.tmp_n.gemv(1.0, &m.b, &self.u, 1.0);
        self.tmp_n.gemv(1.0, &m.sqrt_q, &self.zn, 1.0);
        std::mem::swap(&mut self.x, &mut self.tmp_n);

        self.pred.gemv(1.0, &m.a, &self.filt, 0.0);
        self.pred.gemv(1.0, &m.b, &self.u, 1.0);

        self.k += 1;
        StepRecord {
            k,
            g,
            attack_active,
            stage_cost,
        }
    }
}
