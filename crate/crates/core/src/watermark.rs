//! Watermark covariance design.
//!
//! For a fixed sampling period the design problem is
//!
//! ```text
//! maximize    2·trace(Cᵀ 𝒫⁻¹ C 𝒰)·𝒯
//! subject to  trace[(U + B_dᵀ S B_d) 𝒬] ≤ μ,   𝒬 ⪰ 0,
//!             𝒰 = 𝒜 𝒰 𝒜ᵀ + B_d 𝒬 B_dᵀ.
//! ```
//!
//! `𝒰` is linear in `𝒬`, and `trace(Cᵀ𝒫⁻¹C 𝒰) = trace(M 𝒬)` with
//! `M = B_dᵀ Φ B_d` where `Φ = 𝒜ᵀ Φ 𝒜 + Cᵀ 𝒫⁻¹ C`. With `N = U + B_dᵀ S B_d`
//! both objective and budget are linear, so the optimum over the spectrahedron
//! is the rank-one extreme point `𝒬* = μ v vᵀ / (vᵀ N v)` along the top
//! generalized eigenvector of `(M, N)`.
//!
//! [`sweep_sampling_period`] repeats the design over a grid of periods with the
//! same budget and reports the maximizer.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lqg::{classify_closed_loop, ClosedLoopDesign, CostWeights};
use crate::numerics::{ensure_shape, generalized_symmetric_eig_max, psd_output, solve_dlyap, Matrix};
use crate::plant::{ContinuousPlant, DiscretePlant};

pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkDesign {
    /// Watermark covariance `𝒬`.
    pub cov_q: Matrix,
    /// `𝒰 = Σ 𝒜ⁱ B_d 𝒬 B_dᵀ 𝒜ⁱᵀ`
    pub steady_u: Matrix,
    /// Asymptotic increase of `E[g_k]` under replay.
    pub expected_shift: f64,
    /// LQG cost increase `trace[(U + B_dᵀ S B_d) 𝒬]`.
    pub cost_increase: f64,
    pub window: usize,
}

impl WatermarkDesign {
    /// No watermark at all.
    pub fn none(plant: &DiscretePlant, window: usize) -> Self {
        let (n, p) = (plant.states(), plant.inputs());
        Self {
            cov_q: Matrix::zeros(p, p),
            steady_u: Matrix::zeros(n, n),
            expected_shift: 0.0,
            cost_increase: 0.0,
            window,
        }
    }

    /// Evaluates a given watermark covariance on a designed loop.
    pub fn evaluate(
        plant: &DiscretePlant,
        design: &ClosedLoopDesign,
        weights: &CostWeights,
        cov_q: Matrix,
        window: usize,
    ) -> Result<Self> {
        ensure_shape("WatermarkDesign::evaluate", "𝒬", &cov_q, plant.inputs(), plant.inputs())?;
        let steady_u = steady_watermark_cov(plant, design, &cov_q)?;
        Ok(Self {
            expected_shift: expected_shift(design, &steady_u, window)?,
            cost_increase: cost_increase(plant, &design.riccati, weights, &cov_q)?,
            steady_u,
            cov_q,
            window,
        })
    }

    /// Same design with the covariance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            cov_q: &self.cov_q * factor,
            steady_u: &self.steady_u * factor,
            expected_shift: self.expected_shift * factor,
            cost_increase: self.cost_increase * factor,
            window: self.window,
        }
    }
}

/// Solves `𝒰 = 𝒜 𝒰 𝒜ᵀ + B_d 𝒬 B_dᵀ`.
pub fn steady_watermark_cov(plant: &DiscretePlant, design: &ClosedLoopDesign, cov_q: &Matrix) -> Result<Matrix> {
    let b = plant.b();
    solve_dlyap(&design.closed_loop, &psd_output(&(b * cov_q * b.transpose())))
}

/// `2·trace(Cᵀ 𝒫⁻¹ C 𝒰)·𝒯`
pub fn expected_shift(design: &ClosedLoopDesign, steady_u: &Matrix, window: usize) -> Result<f64> {
    detector_shift(&design.output, &design.resid_cov, steady_u, window)
}

/// [`expected_shift`] from its raw ingredients.
pub fn detector_shift(c: &Matrix, resid_cov: &Matrix, steady_u: &Matrix, window: usize) -> Result<f64> {
    let n = c.ncols();
    ensure_shape("expected_shift", "𝒰", steady_u, n, n)?;
    ensure_shape("expected_shift", "𝒫", resid_cov, c.nrows(), c.nrows())?;
    let inv = resid_cov.clone().cholesky().ok_or_else(|| Error::Conditioning {
        context: "expected_shift",
        detail: "residual covariance is not positive definite".into(),
    })?;
    let weighted = c.transpose() * inv.solve(c);
    Ok((2.0 * (weighted * steady_u).trace() * window as f64).max(0.0))
}

/// `trace[(U + B_dᵀ S B_d) 𝒬]`
pub fn cost_increase(plant: &DiscretePlant, riccati: &Matrix, weights: &CostWeights, cov_q: &Matrix) -> Result<f64> {
    let (n, p) = (plant.states(), plant.inputs());
    ensure_shape("cost_increase", "S", riccati, n, n)?;
    ensure_shape("cost_increase", "𝒬", cov_q, p, p)?;
    let b = plant.b();
    let penalty = weights.u() + b.transpose() * riccati * b;
    Ok((penalty * cov_q).trace().max(0.0))
}

/// The pair `(M, N)` whose generalized Rayleigh quotient is the per-window
/// objective per unit budget: `trace(M𝒬) = trace(Cᵀ𝒫⁻¹C 𝒰(𝒬))` and
/// `trace(N𝒬)` is the cost increase.
pub fn objective_matrices(
    plant: &DiscretePlant,
    design: &ClosedLoopDesign,
    weights: &CostWeights,
) -> Result<(Matrix, Matrix)> {
    let c = plant.c();
    let b = plant.b();
    let weighted = c.transpose() * design.resid_cov_inverse()? * c;
    let phi = solve_dlyap(&design.closed_loop.transpose(), &psd_output(&weighted))?;
    let m = psd_output(&(b.transpose() * phi * b));
    let n = psd_output(&(weights.u() + b.transpose() * &design.riccati * b));
    Ok((m, n))
}

/// Optimal watermark covariance at a fixed sampling period.
pub fn optimize_watermark_fixed_period(
    plant: &DiscretePlant,
    design: &ClosedLoopDesign,
    weights: &CostWeights,
    budget: f64,
    window: usize,
) -> Result<WatermarkDesign> {
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::domain(
            "optimize_watermark",
            format!("budget μ = {budget} must be positive"),
        ));
    }
    if window == 0 {
        return Err(Error::domain("optimize_watermark", "window must be at least 1"));
    }
    let verdict = classify_closed_loop(design);
    if !verdict.stable {
        return Err(Error::Stability {
            context: "optimize_watermark (replay already detectable without watermark)",
            radius: verdict.spectral_radius,
        });
    }
    let (m, n) = objective_matrices(plant, design, weights)?;
    if m.amax() <= 1e-14 * n.amax() {
        log::warn!("watermark cannot reach the detector (M ≈ 0); returning 𝒬 = 0");
        return Ok(WatermarkDesign::none(plant, window));
    }
    let top = generalized_symmetric_eig_max(&m, &n)?;
    let v = &top.vector;
    let norm = (v.transpose() * &n * v)[(0, 0)];
    let cov_q = psd_output(&(v * v.transpose() * (budget / norm)));
    WatermarkDesign::evaluate(plant, design, weights, cov_q, window)
}

/// Small-period approximation `2·trace(Cᵀ R⁻¹ C 𝒰)·𝒯·T`, obtained from
/// `𝒫 ≈ R / T`.
pub fn small_period_shift_approx(cont: &ContinuousPlant, steady_u: &Matrix, window: usize, period: f64) -> Result<f64> {
    let c = cont.c();
    let n = cont.states();
    ensure_shape("small_period_shift_approx", "𝒰", steady_u, n, n)?;
    let r_inv = cont.r().clone().cholesky().ok_or_else(|| Error::Conditioning {
        context: "small_period_shift_approx",
        detail: "R is not positive definite".into(),
    })?;
    let weighted = c.transpose() * r_inv.solve(c);
    Ok(2.0 * (weighted * steady_u).trace() * window as f64 * period)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowStatus {
    Ok,
    /// `𝒜` is unstable: replay is detectable without a watermark.
    WatermarkUnnecessary,
    Failed(String),
}

impl RowStatus {
    pub fn label(&self) -> &str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::WatermarkUnnecessary => "watermark-unnecessary",
            RowStatus::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub period: f64,
    pub status: RowStatus,
    pub cov_q: Option<Matrix>,
    pub expected_shift: Option<f64>,
    pub cost_increase: Option<f64>,
    pub nominal_cost: Option<f64>,
    pub spectral_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Index of the grid maximizer of the expected shift among `Ok` rows.
    pub argmax_row: Option<usize>,
    /// Grid maximizer, or the golden-section refinement of it when requested.
    pub argmax_period: Option<f64>,
    /// Shift at `argmax_period`.
    pub max_shift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub grid: Vec<f64>,
    pub max_period: f64,
    pub budget: f64,
    pub window: usize,
    pub refine: bool,
}

/// Designs the loop and optimal watermark at one sampling period.
pub fn design_at_period(
    cont: &ContinuousPlant,
    weights: &CostWeights,
    period: f64,
    budget: f64,
    window: usize,
) -> Result<(DiscretePlant, ClosedLoopDesign, WatermarkDesign)> {
    let plant = cont.discretize(period)?;
    let design = ClosedLoopDesign::synthesize(&plant, weights)?;
    let wm = optimize_watermark_fixed_period(&plant, &design, weights, budget, window)?;
    Ok((plant, design, wm))
}

fn sweep_row(cont: &ContinuousPlant, weights: &CostWeights, period: f64, budget: f64, window: usize) -> SweepRow {
    let mut row = SweepRow {
        period,
        status: RowStatus::Ok,
        cov_q: None,
        expected_shift: None,
        cost_increase: None,
        nominal_cost: None,
        spectral_radius: None,
    };
    let synthesized = cont
        .discretize(period)
        .and_then(|plant| ClosedLoopDesign::synthesize(&plant, weights).map(|d| (plant, d)));
    let (plant, design) = match synthesized {
        Ok(pair) => pair,
        Err(e) => {
            row.status = RowStatus::Failed(e.to_string());
            return row;
        }
    };
    let verdict = classify_closed_loop(&design);
    row.nominal_cost = Some(design.nominal_cost);
    row.spectral_radius = Some(verdict.spectral_radius);
    if !verdict.stable {
        row.status = RowStatus::WatermarkUnnecessary;
        return row;
    }
    match optimize_watermark_fixed_period(&plant, &design, weights, budget, window) {
        Ok(wm) => {
            row.expected_shift = Some(wm.expected_shift);
            row.cost_increase = Some(wm.cost_increase);
            row.cov_q = Some(wm.cov_q);
        }
        Err(e) => row.status = RowStatus::Failed(e.to_string()),
    }
    row
}

/// Repeats the fixed-period design over `config.grid` with a common budget.
///
/// Rows are computed in parallel and returned in grid order. Failures are
/// recorded per row and excluded from the maximization.
pub fn sweep_sampling_period(
    cont: &ContinuousPlant,
    weights: &CostWeights,
    config: &SweepConfig,
) -> Result<SweepResult> {
    if config.grid.is_empty() {
        return Err(Error::Config("sampling-period grid is empty".into()));
    }
    if !(config.max_period > 0.0) {
        return Err(Error::Config(format!(
            "max period {} must be positive",
            config.max_period
        )));
    }
    if let Some(bad) = config.grid.iter().find(|t| !(**t > 0.0 && **t <= config.max_period)) {
        return Err(Error::Config(format!(
            "sampling period {bad} is outside (0, {}]",
            config.max_period
        )));
    }
    if !(config.budget > 0.0) {
        return Err(Error::Config(format!("budget μ = {} must be positive", config.budget)));
    }
    if config.window == 0 {
        return Err(Error::Config("detector window must be at least 1".into()));
    }

    let rows: Vec<SweepRow> = config
        .grid
        .par_iter()
        .map(|&t| sweep_row(cont, weights, t, config.budget, config.window))
        .collect();

    let argmax_row = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.status == RowStatus::Ok)
        .filter_map(|(i, r)| r.expected_shift.map(|s| (i, s)))
        .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((i, s)),
        });

    let (mut argmax_period, mut max_shift) = match argmax_row {
        Some((i, s)) => (Some(rows[i].period), Some(s)),
        None => (None, None),
    };

    if let (true, Some((i, s))) = (config.refine, argmax_row) {
        let mut sorted: Vec<f64> = config.grid.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let pos = sorted.iter().position(|t| *t == rows[i].period).unwrap_or(0);
        let lo = sorted[pos.saturating_sub(1)];
        let hi = sorted[(pos + 1).min(sorted.len() - 1)];
        if hi > lo {
            let objective = |t: f64| {
                design_at_period(cont, weights, t, config.budget, config.window)
                    .map(|(_, _, wm)| wm.expected_shift)
                    .unwrap_or(f64::NEG_INFINITY)
            };
            let (t_best, s_best) = golden_section_max(objective, lo, hi, 1e-4 * (hi - lo));
            if s_best > s {
                argmax_period = Some(t_best);
                max_shift = Some(s_best);
            }
        }
    }

    Ok(SweepResult {
        rows,
        argmax_row: argmax_row.map(|(i, _)| i),
        argmax_period,
        max_shift,
    })
}

/// Golden-section search for the maximum of a unimodal function on `[lo, hi]`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}
