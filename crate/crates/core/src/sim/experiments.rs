//! Monte Carlo estimators over independent trials.
//!
//! Trials run in parallel and are reduced in trial order, so every result is a
//! deterministic function of the seed. Confidence intervals use the normal
//! approximation over batch means whose length is several correlation times.

use rayon::prelude::*;

use super::engine::{decay_steps, Engine, LoopModel};
use super::{DetectorConfig, ReplayAttack};
use crate::error::{Error, Result};
use crate::lqg::{classify_closed_loop, ClosedLoopDesign, CostWeights};
use crate::numerics::{chi2_quantile, Matrix};
use crate::plant::{ContinuousPlant, DiscretePlant};
use crate::watermark::optimize_watermark_fixed_period;

/// Shared Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experiment {
    pub detector: DetectorConfig,
    pub attack: Option<ReplayAttack>,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    /// Steps after replay onset excluded from attack-arm statistics.
    /// `None` uses [`default_settling`].
    pub settling: Option<usize>,
    pub confidence: f64,
}

impl Experiment {
    pub fn new(detector: DetectorConfig, horizon: usize, trials: usize, seed: u64) -> Self {
        Self {
            detector,
            attack: None,
            horizon,
            trials,
            seed,
            settling: None,
            confidence: 0.95,
        }
    }

    pub fn with_attack(mut self, attack: ReplayAttack) -> Self {
        self.attack = Some(attack);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config(format!(
                "confidence {} is outside (0, 1)",
                self.confidence
            )));
        }
        if self.horizon < self.detector.window {
            return Err(Error::Config(format!(
                "horizon {} is shorter than the detector window {}",
                self.horizon, self.detector.window
            )));
        }
        if let Some(att) = self.attack {
            att.check_horizon(self.horizon, self.detector.window)?;
        }
        Ok(())
    }

    fn settling_for(&self, design: &ClosedLoopDesign) -> usize {
        self.settling
            .unwrap_or_else(|| default_settling(design, self.detector.window))
            .max(self.detector.window - 1)
    }
}

/// Window length plus the time for `𝒜ᵏ ζ` to decay by `1e-6`.
///
/// The replay-onset mismatch `ζ` inflates `g_k` until it has decayed, which
/// would otherwise bias both the attack-arm mean and the ROC baseline.
pub fn default_settling(design: &ClosedLoopDesign, window: usize) -> usize {
    let verdict = classify_closed_loop(design);
    if verdict.stable {
        window + decay_steps(verdict.spectral_radius)
    } else {
        window
    }
}

/// Sample mean with a normal-approximation confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
    pub confidence: f64,
    pub samples: usize,
}

impl MeanCi {
    /// Two-sided standard normal quantile for `confidence`.
    pub fn z(confidence: f64) -> f64 {
        chi2_quantile(1, confidence).map(f64::sqrt).unwrap_or(f64::NAN)
    }

    /// From i.i.d. (or batch-mean) observations.
    pub fn from_samples(values: &[f64], confidence: f64) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let half_width = if n >= 2 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Self::z(confidence) * (var / n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        Self {
            mean,
            half_width,
            confidence,
            samples: n,
        }
    }

    /// CI of `a_i − b_i` for paired observations.
    pub fn paired_difference(a: &[f64], b: &[f64], confidence: f64) -> Self {
        let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Self::from_samples(&diffs, confidence)
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn contains(&self, value: f64) -> bool {
        (value - self.mean).abs() <= self.half_width
    }
}

/// Running sum split into fixed-length batches.
#[derive(Debug, Clone, Default)]
struct Batches {
    len: usize,
    sum: f64,
    count: usize,
    total: f64,
    total_count: usize,
    means: Vec<f64>,
}

impl Batches {
    fn new(len: usize) -> Self {
        Self {
            len: len.max(1),
            ..Self::default()
        }
    }

    fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
        self.total += v;
        self.total_count += 1;
        if self.count == self.len {
            self.means.push(self.sum / self.count as f64);
            self.sum = 0.0;
            self.count = 0;
        }
    }

    fn merge(parts: Vec<Batches>, confidence: f64) -> Option<MeanCi> {
        let total: f64 = parts.iter().map(|b| b.total).sum();
        let count: usize = parts.iter().map(|b| b.total_count).sum();
        if count == 0 {
            return None;
        }
        let means: Vec<f64> = parts.into_iter().flat_map(|b| b.means).collect();
        let mut ci = MeanCi::from_samples(&means, confidence);
        ci.mean = total / count as f64;
        ci.samples = count;
        Some(ci)
    }
}

/// Both arms of the detector-statistic expectation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanG {
    /// Over full-window steps before replay onset (all steps without attack).
    pub no_attack: MeanCi,
    /// Over replay steps after settling.
    pub under_attack: Option<MeanCi>,
    pub settling: usize,
}

/// Averages `g_k` across trials for the no-attack and attack arms.
pub fn monte_carlo_mean_g(
    plant: &DiscretePlant,
    design: &ClosedLoopDesign,
    cov_q: &Matrix,
    exp: &Experiment,
) -> Result<MeanG> {
    exp.validate()?;
    let model = LoopModel::new(plant, design, cov_q)?;
    let settle = exp.settling_for(design);
    let batch = (10 * (exp.detector.window + settle)).min(exp.horizon);
    let first_valid = exp.detector.window - 1;
    let attack = exp.attack;

    let parts: Vec<(Batches, Batches)> = (0..exp.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut engine = Engine::new(&model, exp.detector.window, attack, exp.seed, trial);
            let (mut quiet, mut loud) = (Batches::new(batch), Batches::new(batch));
            for _ in 0..exp.horizon {
                let rec = engine.step();
                if rec.k < first_valid {
                    continue;
                }
                match attack {
                    None => quiet.push(rec.g),
                    Some(a) if rec.k < a.replay_start => quiet.push(rec.g),
                    Some(a) if rec.attack_active && rec.k >= a.replay_start + settle => loud.push(rec.g),
                    _ => {}
                }
            }
            (quiet, loud)
        })
        .collect();
    let (quiet, loud): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    let no_attack = Batches::merge(quiet, exp.confidence)
        .ok_or_else(|| Error::Config("no full-window steps before replay onset".into()))?;
    let under_attack = match attack {
        Some(_) => Some(
            Batches::merge(loud, exp.confidence)
                .ok_or_else(|| Error::Config("replay is shorter than the settling offset".into()))?,
        ),
        None => None,
    };
    Ok(MeanG {
        no_attack,
        under_attack,
        settling: settle,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub false_alarm_rate: f64,
    pub detection_rate: f64,
    /// Alarm rule `g > threshold` reproducing this point.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Sorted by false-alarm rate, from `(0, 0)` to `(1, 1)`.
    pub points: Vec<RocPoint>,
    pub auc: f64,
    /// AUC of each trial alone, in trial order.
    pub trial_aucs: Vec<f64>,
    /// `g_k` on disjoint full windows before replay onset.
    pub negatives: Vec<f64>,
    /// `g_k` on disjoint full windows of replay after settling.
    pub positives: Vec<f64>,
    pub settling: usize,
}

impl RocCurve {
    pub fn from_scores(negatives: Vec<f64>, positives: Vec<f64>, settling: usize) -> Self {
        let points = roc_points(&negatives, &positives);
        Self {
            auc: trapezoid_auc(&points),
            points,
            trial_aucs: Vec::new(),
            negatives,
            positives,
            settling,
        }
    }

    /// `(false_alarm_rate, detection_rate)` for the alarm rule `g > threshold`.
    pub fn rates_at(&self, threshold: f64) -> (f64, f64) {
        let frac = |v: &[f64]| v.iter().filter(|g| **g > threshold).count() as f64 / v.len().max(1) as f64;
        (frac(&self.negatives), frac(&self.positives))
    }

    pub fn auc_ci(&self, confidence: f64) -> MeanCi {
        MeanCi::from_samples(&self.trial_aucs, confidence)
    }
}

fn roc_points(negatives: &[f64], positives: &[f64]) -> Vec<RocPoint> {
    let mut pooled: Vec<(f64, bool)> = negatives
        .iter()
        .map(|g| (*g, false))
        .chain(positives.iter().map(|g| (*g, true)))
        .collect();
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (n_neg, n_pos) = (negatives.len().max(1) as f64, positives.len().max(1) as f64);
    let mut points = vec![RocPoint {
        false_alarm_rate: 0.0,
        detection_rate: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < pooled.len() {
        let level = pooled[i].0;
        while i < pooled.len() && pooled[i].0 == level {
            if pooled[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // Just below `level` every tied score alarms.
        let below = pooled.get(i).map_or(f64::NEG_INFINITY, |p| p.0);
        points.push(RocPoint {
            false_alarm_rate: fp as f64 / n_neg,
            detection_rate: tp as f64 / n_pos,
            threshold: if below.is_finite() {
                0.5 * (level + below)
            } else {
                level.min(0.0) - 1.0
            },
        });
    }
    let last = points[points.len() - 1];
    if last.false_alarm_rate < 1.0 || last.detection_rate < 1.0 {
        points.push(RocPoint {
            false_alarm_rate: 1.0,
            detection_rate: 1.0,
            threshold: f64::NEG_INFINITY,
        });
    }
    points
}

fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].false_alarm_rate - w[0].false_alarm_rate) * 0.5 * (w[0].detection_rate + w[1].detection_rate))
        .sum()
}

/// ROC of the χ² detector against replay, scored on disjoint windows.
///
/// Negatives are `g_k` on disjoint full windows before replay onset, positives
/// those on disjoint windows of replay once settled. Thresholds sweep all
/// pooled values.
pub fn roc_curve(
    plant: &DiscretePlant,
    design: &ClosedLoopDesign,
    cov_q: &Matrix,
    exp: &Experiment,
) -> Result<RocCurve> {
    exp.validate()?;
    let attack = exp
        .attack
        .ok_or_else(|| Error::Config("ROC needs an attack block".into()))?;
    if exp.trials < 2 {
        return Err(Error::Config("ROC needs at least two trials".into()));
    }
    let model = LoopModel::new(plant, design, cov_q)?;
    let window = exp.detector.window;
    let settle = exp.settling_for(design);
    let pos_start = attack.replay_start + settle;

    let per_trial: Vec<(Vec<f64>, Vec<f64>)> = (0..exp.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut engine = Engine::new(&model, window, Some(attack), exp.seed, trial);
            let (mut neg, mut pos) = (Vec::new(), Vec::new());
            for _ in 0..exp.horizon {
                let rec = engine.step();
                let k = rec.k;
                if k + 1 >= window && k < attack.replay_start && (k + 1).is_multiple_of(window) {
                    neg.push(rec.g);
                } else if rec.attack_active && k >= pos_start && (k - pos_start).is_multiple_of(window) {
                    pos.push(rec.g);
                }
            }
            (neg, pos)
        })
        .collect();

    if per_trial.iter().any(|(n, p)| n.is_empty() || p.is_empty()) {
        return Err(Error::Config(
            "attack layout leaves no scored windows before or after replay onset".into(),
        ));
    }
    let trial_aucs = per_trial
        .iter()
        .map(|(n, p)| trapezoid_auc(&roc_points(n, p)))
        .collect();
    let (negatives, positives): (Vec<Vec<f64>>, Vec<Vec<f64>>) = per_trial.into_iter().unzip();
    let mut curve = RocCurve::from_scores(negatives.concat(), positives.concat(), settle);
    curve.trial_aucs = trial_aucs;
    Ok(curve)
}

/// Batches of several correlation times `1/(1 − ρ)`, at most one per trial.
fn cost_batch(model: &LoopModel, horizon: usize) -> usize {
    let corr = 1.0 / (1.0 - model.mixing_radius).max(1e-9);
    ((10.0 * corr).ceil() as usize).clamp(1, horizon)
}

/// Time-averaged `xᵀWx + uᵀUu` after a burn-in, across trials.
pub fn empirical_lqg_cost(
    plant: &DiscretePlant,
    design: &ClosedLoopDesign,
    weights: &CostWeights,
    cov_q: &Matrix,
    horizon: usize,
    trials: usize,
    seed: u64,
) -> Result<MeanCi> {
    if trials == 0 || horizon == 0 {
        return Err(Error::Config("trials and horizon must be positive".into()));
    }
    let model = LoopModel::new(plant, design, cov_q)?.with_weights(weights.w(), weights.u());
    if model.mixing_radius >= 1.0 {
        return Err(Error::Stability {
            context: "empirical_lqg_cost",
            radius: model.mixing_radius,
        });
    }
    let burn = model.burn_in();
    let batch = cost_batch(&model, horizon);
    let parts: Vec<Batches> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut engine = Engine::new(&model, 1, None, seed, trial);
            let mut acc = Batches::new(batch);
            for _ in 0..burn {
                engine.step();
            }
            for _ in 0..horizon {
                acc.push(engine.step().stage_cost);
            }
            acc
        })
        .collect();
    Ok(Batches::merge(parts, 0.95).expect("horizon is positive"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostIncreaseEstimate {
    pub nominal: MeanCi,
    pub watermarked: MeanCi,
    /// Paired `J′ − J` on common random numbers.
    pub increase: MeanCi,
}

/// Measures `J′ − J` by running each trial with and without the watermark on
/// the same process, measurement and watermark draws.
pub fn empirical_cost_increase(
    plant: &DiscretePlant,
    design: &ClosedLoopDesign,
    weights: &CostWeights,
    cov_q: &Matrix,
    horizon: usize,
    trials: usize,
    seed: u64,
) -> Result<CostIncreaseEstimate> {
    if trials == 0 || horizon == 0 {
        return Err(Error::Config("trials and horizon must be positive".into()));
    }
    let marked = LoopModel::new(plant, design, cov_q)?.with_weights(weights.w(), weights.u());
    if marked.mixing_radius >= 1.0 {
        return Err(Error::Stability {
            context: "empirical_cost_increase",
            radius: marked.mixing_radius,
        });
    }
    let plain = marked.with_watermark_gain(0.0);
    let burn = marked.burn_in();
    let batch = cost_batch(&marked, horizon);
    let parts: Vec<[Batches; 3]> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut with = Engine::new(&marked, 1, None, seed, trial);
            let mut without = Engine::new(&plain, 1, None, seed, trial);
            let mut acc = [Batches::new(batch), Batches::new(batch), Batches::new(batch)];
            for _ in 0..burn {
                with.step();
                without.step();
            }
            for _ in 0..horizon {
                let (j1, j0) = (with.step().stage_cost, without.step().stage_cost);
                acc[0].push(j0);
                acc[1].push(j1);
                acc[2].push(j1 - j0);
            }
            acc
        })
        .collect();
    let mut cols: [Vec<Batches>; 3] = Default::default();
    for part in parts {
        for (col, b) in cols.iter_mut().zip(part) {
            col.push(b);
        }
    }
    let [nominal, watermarked, increase] = cols.map(|c| Batches::merge(c, 0.95).expect("horizon is positive"));
    Ok(CostIncreaseEstimate {
        nominal,
        watermarked,
        increase,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostRatioRow {
    pub period: f64,
    pub nominal_cost: Option<f64>,
    /// `J_T / J_ref`
    pub ratio: Option<f64>,
    /// `J′_T / J′_ref` with the optimal watermark at each period.
    pub watermarked_ratio: Option<f64>,
    pub empirical_cost: Option<MeanCi>,
    pub error: Option<String>,
}

/// Nominal LQG cost at each period normalized by the reference period.
///
/// With `trials > 0` each row also gets a Monte Carlo estimate of `J_T` on
/// common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn cost_ratio_table(
    cont: &ContinuousPlant,
    weights: &CostWeights,
    periods: &[f64],
    reference: f64,
    budget: f64,
    horizon: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<CostRatioRow>> {
    if periods.is_empty() {
        return Err(Error::Config("period list is empty".into()));
    }
    let ref_idx = periods
        .iter()
        .position(|t| *t == reference)
        .ok_or_else(|| Error::Config(format!("reference period {reference} is not in the period list")))?;

    let evaluate = |t: f64| -> Result<(f64, f64, Option<MeanCi>)> {
        let plant = cont.discretize(t)?;
        let design = ClosedLoopDesign::synthesize(&plant, weights)?;
        if !design.nominal_cost.is_finite() {
            return Err(Error::Stability {
                context: "cost_ratio_table",
                radius: f64::INFINITY,
            });
        }
        let increase = if design.stability().stable {
            optimize_watermark_fixed_period(&plant, &design, weights, budget, 1)?.cost_increase
        } else {
            0.0
        };
        let empirical = if trials > 0 {
            let zero = Matrix::zeros(plant.inputs(), plant.inputs());
            Some(empirical_lqg_cost(
                &plant, &design, weights, &zero, horizon, trials, seed,
            )?)
        } else {
            None
        };
        Ok((design.nominal_cost, design.nominal_cost + increase, empirical))
    };

    let results: Vec<Result<(f64, f64, Option<MeanCi>)>> = periods.par_iter().map(|t| evaluate(*t)).collect();
    let (j_ref, jw_ref) = match &results[ref_idx] {
        Ok((j, jw, _)) => (*j, *jw),
        Err(e) => return Err(e.clone()),
    };
    Ok(periods
        .iter()
        .zip(results)
        .map(|(t, res)| match res {
            Ok((j, jw, emp)) => CostRatioRow {
                period: *t,
                nominal_cost: Some(j),
                ratio: Some(j / j_ref),
                watermarked_ratio: Some(jw / jw_ref),
                empirical_cost: emp,
                error: None,
            },
            Err(e) => CostRatioRow {
                period: *t,
                nominal_cost: None,
                ratio: None,
                watermarked_ratio: None,
                empirical_cost: None,
                error: Some(e.to_string()),
            },
        })
        .collect())
}
