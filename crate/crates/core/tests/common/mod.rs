#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use watermark_core::lqg::{ClosedLoopDesign, CostWeights};
use watermark_core::numerics::{spectral_radius, Matrix};
use watermark_core::plant::{quadrotor_hover_plant, ContinuousPlant, DiscretePlant, QuadrotorParams};
use watermark_core::watermark::{design_at_period, WatermarkDesign};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `G Gᵀ + floor·I`
pub fn spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Matrix {
    let g = gaussian(rng, n, n);
    &g * g.transpose() / n as f64 + Matrix::identity(n, n) * floor
}

pub fn with_radius(m: Matrix, radius: f64) -> Matrix {
    let r = spectral_radius(&m);
    if r < 1e-12 {
        m
    } else {
        m * (radius / r)
    }
}

pub fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    gaussian(rng, n, n).qr().q()
}

pub fn random_plant(seed: u64, n: usize, p: usize, m: usize, radius: f64) -> DiscretePlant {
    let mut r = rng(seed);
    let a = with_radius(gaussian(&mut r, n, n), radius);
    let b = gaussian(&mut r, n, p);
    let c = gaussian(&mut r, m, n);
    let q = spd(&mut r, n, 0.1);
    let rr = spd(&mut r, m, 0.1);
    DiscretePlant::new(a, b, c, q, rr, 0.1).unwrap()
}

pub fn random_weights(seed: u64, n: usize, p: usize) -> CostWeights {
    let mut r = rng(seed ^ 0x5eed);
    CostWeights::new(spd(&mut r, n, 0.1), spd(&mut r, p, 0.1)).unwrap()
}

pub fn quadrotor() -> ContinuousPlant {
    let (q, r) = QuadrotorParams::default_noise();
    quadrotor_hover_plant(&QuadrotorParams::default(), q, r).unwrap()
}

pub fn quadrotor_weights() -> CostWeights {
    CostWeights::identity(12, 4)
}

pub fn quadrotor_at(period: f64) -> (DiscretePlant, ClosedLoopDesign, WatermarkDesign) {
    design_at_period(&quadrotor(), &quadrotor_weights(), period, 1.0, 10).unwrap()
}

/// `a = b = c = 1`, unit noises and weights: `S = P = (1 + √5)/2`.
pub fn golden_plant() -> DiscretePlant {
    let one = Matrix::from_element(1, 1, 1.0);
    DiscretePlant::new(one.clone(), one.clone(), one.clone(), one.clone(), one, 1.0).unwrap()
}

pub fn unit_weights() -> CostWeights {
    CostWeights::identity(1, 1)
}
