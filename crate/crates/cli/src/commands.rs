//! Subcommand bodies. Each returns the files it wrote and a one-line summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use watermark_core::lqg::{ClosedLoopDesign, CostWeights};
use watermark_core::numerics::Matrix;
use watermark_core::plant::DiscretePlant;
use watermark_core::sim::{cost_ratio_table, monte_carlo_mean_g, roc_curve, simulate, Experiment, MeanCi, RocCurve};
use watermark_core::watermark::{optimize_watermark_fixed_period, sweep_sampling_period, SweepConfig, WatermarkDesign};

use crate::config::ScenarioConfig;
use crate::error::CliError;
use crate::output::{derive_seed, num, opt_num, write_atomic, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub refine: bool,
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// A designed loop at one period.
struct Designed {
    plant: DiscretePlant,
    design: ClosedLoopDesign,
    watermark: WatermarkDesign,
    radius: f64,
    necessary: bool,
}

impl Designed {
    fn status(&self) -> &'static str {
        if self.necessary {
            "ok"
        } else {
            "watermark-unnecessary"
        }
    }
}

fn design_loop(plant: DiscretePlant, weights: &CostWeights, budget: f64, window: usize) -> Result<Designed, CliError> {
    let design = ClosedLoopDesign::synthesize(&plant, weights)?;
    let verdict = design.stability();
    let watermark = if verdict.stable {
        optimize_watermark_fixed_period(&plant, &design, weights, budget, window)?
    } else {
        log::warn!(
            "closed loop ρ(𝒜) = {:.4} ≥ 1 at T = {}: replay is detectable without a watermark",
            verdict.spectral_radius,
            plant.period()
        );
        WatermarkDesign::none(&plant, window)
    };
    Ok(Designed {
        plant,
        design,
        watermark,
        radius: verdict.spectral_radius,
        necessary: verdict.stable,
    })
}

fn designed_at(cfg: &ScenarioConfig, period: f64) -> Result<Designed, CliError> {
    let model = cfg.plant_model()?;
    let weights = cfg.weights(&model)?;
    design_loop(
        model.at_period(period)?,
        &weights,
        cfg.watermark.budget,
        cfg.detector.window,
    )
}

fn trials(cfg: &ScenarioConfig, opts: &RunOptions) -> usize {
    opts.trials.unwrap_or(cfg.simulation.trials)
}

fn push_matrix(table: &mut Table, name: &str, m: &Matrix) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            table.push(vec![name.into(), i.to_string(), j.to_string(), num(m[(i, j)])]);
        }
    }
}

fn push_scalar(table: &mut Table, name: &str, v: f64) {
    table.push(vec![name.into(), String::new(), String::new(), num(v)]);
}

/// Period as used in file names.
fn period_tag(t: f64) -> String {
    num(t)
}

pub fn design(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Report, CliError> {
    let period = cfg.single_period()?;
    let d = designed_at(cfg, period)?;
    let wm = &d.watermark;

    let mut table = Table::new(&["quantity", "row", "col", "value"]);
    push_scalar(&mut table, "period", period);
    push_scalar(&mut table, "budget", cfg.watermark.budget);
    push_scalar(&mut table, "window", cfg.detector.window as f64);
    push_scalar(&mut table, "expected_shift", wm.expected_shift);
    push_scalar(&mut table, "cost_increase", wm.cost_increase);
    push_scalar(&mut table, "nominal_cost", d.design.nominal_cost);
    push_scalar(&mut table, "spectral_radius", d.radius);
    push_scalar(&mut table, "watermark_necessary", if d.necessary { 1.0 } else { 0.0 });
    push_matrix(&mut table, "watermark_cov", &wm.cov_q);
    push_matrix(&mut table, "steady_u", &wm.steady_u);
    push_matrix(&mut table, "kalman_gain", &d.design.kalman_gain);
    push_matrix(&mut table, "lqg_gain", &d.design.lqg_gain);
    push_matrix(&mut table, "riccati", &d.design.riccati);
    push_matrix(&mut table, "pred_cov", &d.design.pred_cov);
    push_matrix(&mut table, "resid_cov", &d.design.resid_cov);
    let csv = table.write(&opts.out_dir.join("design.csv"))?;

    let mut text = String::new();
    let _ = writeln!(text, "sampling period T      {}", num(period));
    let _ = writeln!(text, "budget μ               {}", num(cfg.watermark.budget));
    let _ = writeln!(text, "detector window 𝒯      {}", cfg.detector.window);
    let _ = writeln!(text, "spectral radius ρ(𝒜)   {}", num(d.radius));
    let _ = writeln!(text, "status                 {}", d.status());
    let _ = writeln!(text, "nominal cost J         {}", num(d.design.nominal_cost));
    let _ = writeln!(text, "cost increase          {}", num(wm.cost_increase));
    let _ = writeln!(text, "expected shift of g_k  {}", num(wm.expected_shift));
    let eig = wm.cov_q.clone().symmetric_eigen().eigenvalues;
    let _ = writeln!(text, "trace 𝒬                {}", num(wm.cov_q.trace()));
    let _ = writeln!(text, "largest eigenvalue 𝒬   {}", num(eig.max()));
    let summary_path = opts.out_dir.join("design_summary.txt");
    write_atomic(&summary_path, text.as_bytes())?;

    Ok(Report {
        files: vec![csv, summary_path],
        summary: format!(
            "T={} shift={} cost_increase={} status={}",
            num(period),
            num(wm.expected_shift),
            num(wm.cost_increase),
            d.status()
        ),
    })
}

pub fn sweep(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Report, CliError> {
    let model = cfg.plant_model()?;
    let cont = model.continuous("sweep")?;
    let weights = cfg.weights(&model)?;
    let grid = cfg.grid()?;
    let max_period = cfg
        .sampling
        .max_period
        .unwrap_or_else(|| grid.iter().copied().fold(0.0, f64::max));
    let result = sweep_sampling_period(
        cont,
        &weights,
        &SweepConfig {
            grid,
            max_period,
            budget: cfg.watermark.budget,
            window: cfg.detector.window,
            refine: opts.refine,
        },
    )?;

    let mut table = Table::new(&[
        "T",
        "expected_shift",
        "cost_increase",
        "nominal_cost",
        "spectral_radius",
        "status",
        "argmax",
    ]);
    for (i, row) in result.rows.iter().enumerate() {
        table.push(vec![
            num(row.period),
            opt_num(row.expected_shift),
            opt_num(row.cost_increase),
            opt_num(row.nominal_cost),
            opt_num(row.spectral_radius),
            row.status.label().into(),
            if result.argmax_row == Some(i) { "1" } else { "0" }.into(),
        ]);
    }
    let csv = table.write(&opts.out_dir.join("delta_g_vs_T.csv"))?;

    let mut text = String::new();
    match (result.argmax_row, result.argmax_period, result.max_shift) {
        (Some(i), Some(t), Some(s)) => {
            let _ = writeln!(text, "grid argmax T     {}", num(result.rows[i].period));
            let _ = writeln!(text, "argmax T          {}", num(t));
            let _ = writeln!(text, "max shift         {}", num(s));
            let _ = writeln!(text, "refined           {}", opts.refine);
        }
        _ => {
            let _ = writeln!(text, "no grid point admits a watermark design");
        }
    }
    for row in &result.rows {
        if let watermark_core::watermark::RowStatus::Failed(msg) = &row.status {
            let _ = writeln!(text, "T = {} failed: {msg}", num(row.period));
        }
    }
    let summary_path = opts.out_dir.join("sweep_summary.txt");
    write_atomic(&summary_path, text.as_bytes())?;

    Ok(Report {
        files: vec![csv, summary_path],
        summary: format!(
            "rows={} argmax_T={} max_shift={}",
            result.rows.len(),
            opt_num(result.argmax_period),
            opt_num(result.max_shift)
        ),
    })
}

#[derive(Serialize)]
struct CiJson {
    mean: f64,
    half_width: f64,
    confidence: f64,
    samples: usize,
}

impl From<MeanCi> for CiJson {
    fn from(c: MeanCi) -> Self {
        Self {
            mean: c.mean,
            half_width: c.half_width,
            confidence: c.confidence,
            samples: c.samples,
        }
    }
}

#[derive(Serialize)]
struct TraceStats {
    mean_g_before_replay: Option<f64>,
    mean_g_during_replay: Option<f64>,
    alarm_rate_before_replay: Option<f64>,
    alarm_rate_during_replay: Option<f64>,
    replay_mismatch_norm: Option<f64>,
}

#[derive(Serialize)]
struct MonteCarloStats {
    trials: usize,
    settling: usize,
    mean_g_no_attack: CiJson,
    mean_g_under_attack: Option<CiJson>,
}

#[derive(Serialize)]
struct SimulateSummary {
    period: f64,
    seed: u64,
    horizon: usize,
    window: usize,
    dof: usize,
    threshold: f64,
    status: &'static str,
    expected_g_no_attack: f64,
    expected_shift: f64,
    trace: TraceStats,
    monte_carlo: Option<MonteCarloStats>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn simulate_cmd(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Report, CliError> {
    let period = cfg.single_period()?;
    let d = designed_at(cfg, period)?;
    let detector = cfg.detector(d.plant.outputs())?;
    let attack = cfg.attack.map(|a| cfg.replay_attack(a)).transpose()?;
    let horizon = cfg.simulation.horizon;
    let seed = derive_seed(opts.seed, "simulate");
    let trace = simulate(
        &d.plant,
        &d.design,
        &d.watermark.cov_q,
        &detector,
        attack,
        horizon,
        seed,
    )?;

    let mut table = Table::new(&["step", "g_k", "threshold", "alarm", "attack_active"]);
    for k in 0..trace.horizon() {
        table.push(vec![
            k.to_string(),
            num(trace.g[k]),
            num(trace.threshold),
            u8::from(trace.alarms[k]).to_string(),
            u8::from(trace.attack_active[k]).to_string(),
        ]);
    }
    let csv = table.write(&opts.out_dir.join("gk_trace.csv"))?;

    let n_trials = trials(cfg, opts);
    let settle = cfg
        .simulation
        .settling
        .unwrap_or_else(|| watermark_core::sim::default_settling(&d.design, detector.window));
    let valid = trace.first_valid();
    let replay_start = attack.map_or(horizon, |a| a.replay_start);
    let before = || valid..replay_start.min(horizon);
    let during: Vec<usize> = match attack {
        Some(a) => (a.replay_start + settle..a.replay_end().min(horizon)).collect(),
        None => Vec::new(),
    };
    let stats = TraceStats {
        mean_g_before_replay: mean(before().map(|k| trace.g[k])),
        mean_g_during_replay: mean(during.iter().map(|k| trace.g[*k])),
        alarm_rate_before_replay: mean(before().map(|k| f64::from(u8::from(trace.alarms[k])))),
        alarm_rate_during_replay: mean(during.iter().map(|k| f64::from(u8::from(trace.alarms[*k])))),
        replay_mismatch_norm: trace.replay_mismatch.as_ref().map(|z| z.norm()),
    };

    let monte_carlo = if n_trials > 0 {
        let exp = Experiment {
            attack,
            settling: cfg.simulation.settling,
            ..Experiment::new(
                detector,
                horizon,
                n_trials,
                derive_seed(opts.seed, "simulate/monte-carlo"),
            )
        };
        let mg = monte_carlo_mean_g(&d.plant, &d.design, &d.watermark.cov_q, &exp)?;
        Some(MonteCarloStats {
            trials: n_trials,
            settling: mg.settling,
            mean_g_no_attack: mg.no_attack.into(),
            mean_g_under_attack: mg.under_attack.map(Into::into),
        })
    } else {
        None
    };

    let summary = SimulateSummary {
        period,
        seed: opts.seed,
        horizon,
        window: detector.window,
        dof: detector.dof,
        threshold: detector.threshold,
        status: d.status(),
        expected_g_no_attack: detector.dof as f64,
        expected_shift: d.watermark.expected_shift,
        trace: stats,
        monte_carlo,
    };
    let mut json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    json.push('\n');
    let json_path = opts.out_dir.join("summary.json");
    write_atomic(&json_path, json.as_bytes())?;

    Ok(Report {
        files: vec![csv, json_path],
        summary: format!(
            "steps={} mean_g_before_replay={}",
            horizon,
            opt_num(summary.trace.mean_g_before_replay)
        ),
    })
}

fn write_roc(path: &Path, curve: &RocCurve) -> Result<PathBuf, CliError> {
    let mut table = Table::new(&["false_alarm_rate", "detection_rate"]);
    for p in &curve.points {
        table.push(vec![num(p.false_alarm_rate), num(p.detection_rate)]);
    }
    table.write(path)
}

pub fn roc(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Report, CliError> {
    let attack_spec = cfg
        .attack
        .ok_or_else(|| CliError::validation("attack", "is required by `roc`"))?;
    let attack = cfg.replay_attack(attack_spec)?;
    let periods = match &cfg.sampling.grid {
        Some(g) => g.clone(),
        None => vec![cfg.single_period()?],
    };
    let n_trials = trials(cfg, opts);
    if n_trials < 2 {
        return Err(CliError::validation(
            "simulation.trials",
            "ROC needs at least two trials",
        ));
    }
    let seed = derive_seed(opts.seed, "roc");
    let confidence = 0.99;

    let mut files = Vec::new();
    let mut summary = Table::new(&[
        "T",
        "status",
        "expected_shift",
        "auc",
        "auc_lo99",
        "auc_hi99",
        "baseline_auc",
        "baseline_lo99",
        "baseline_hi99",
        "gain_lo99",
        "gain_hi99",
    ]);
    let mut best: Option<(f64, f64)> = None;
    for &t in &periods {
        let d = designed_at(cfg, t)?;
        let detector = cfg.detector(d.plant.outputs())?;
        let exp = Experiment {
            attack: Some(attack),
            settling: cfg.simulation.settling,
            confidence,
            ..Experiment::new(detector, cfg.simulation.horizon, n_trials, seed)
        };
        let marked = roc_curve(&d.plant, &d.design, &d.watermark.cov_q, &exp)?;
        let zero = Matrix::zeros(d.plant.inputs(), d.plant.inputs());
        let baseline = roc_curve(&d.plant, &d.design, &zero, &exp)?;
        let tag = period_tag(t);
        files.push(write_roc(&opts.out_dir.join(format!("roc_T{tag}.csv")), &marked)?);
        files.push(write_roc(
            &opts.out_dir.join(format!("roc_T{tag}_baseline.csv")),
            &baseline,
        )?);

        let (m_ci, b_ci) = (marked.auc_ci(confidence), baseline.auc_ci(confidence));
        let gain = MeanCi::paired_difference(&marked.trial_aucs, &baseline.trial_aucs, confidence);
        summary.push(vec![
            num(t),
            d.status().into(),
            num(d.watermark.expected_shift),
            num(marked.auc),
            num(m_ci.lower()),
            num(m_ci.upper()),
            num(baseline.auc),
            num(b_ci.lower()),
            num(b_ci.upper()),
            num(gain.lower()),
            num(gain.upper()),
        ]);
        if best.is_none_or(|(_, auc)| marked.auc > auc) {
            best = Some((t, marked.auc));
        }
    }
    files.push(summary.write(&opts.out_dir.join("auc_summary.csv"))?);
    let (bt, bauc) = best.expect("at least one period");
    Ok(Report {
        files,
        summary: format!("periods={} best_T={} best_auc={}", periods.len(), num(bt), num(bauc)),
    })
}

pub fn table(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Report, CliError> {
    let model = cfg.plant_model()?;
    let cont = model.continuous("table")?;
    let weights = cfg.weights(&model)?;
    let grid = cfg.grid()?;
    let reference = cfg.sampling.reference.unwrap_or(grid[0]);
    if !grid.contains(&reference) {
        return Err(CliError::validation(
            "sampling.reference",
            format!("{reference} is not in sampling.grid"),
        ));
    }
    let rows = cost_ratio_table(
        cont,
        &weights,
        &grid,
        reference,
        cfg.watermark.budget,
        cfg.simulation.horizon,
        trials(cfg, opts),
        derive_seed(opts.seed, "table"),
    )?;
    let mut table = Table::new(&[
        "T",
        "nominal_cost",
        "ratio",
        "watermarked_ratio",
        "empirical_cost",
        "empirical_half_width",
        "status",
    ]);
    for row in &rows {
        table.push(vec![
            num(row.period),
            opt_num(row.nominal_cost),
            opt_num(row.ratio),
            opt_num(row.watermarked_ratio),
            opt_num(row.empirical_cost.map(|c| c.mean)),
            opt_num(row.empirical_cost.map(|c| c.half_width)),
            if row.error.is_some() { "failed" } else { "ok" }.into(),
        ]);
    }
    let csv = table.write(&opts.out_dir.join("cost_ratios.csv"))?;
    let ratios: Vec<String> = rows.iter().map(|r| opt_num(r.ratio)).collect();
    Ok(Report {
        files: vec![csv],
        summary: format!("reference_T={} ratios=[{}]", num(reference), ratios.join(",")),
    })
}
