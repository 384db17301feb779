//! Log-level analysis: per-condition success and loop statistics, the
//! loop/success correlation across conditions and the success-rate fit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::flip_rate;
use crate::loops::{loop_metrics, LoopError, LoopStats};
use crate::runner::TrialRecord;
use crate::stats::{fit_csv, pearson, select_order, success_curve, OrderSelection, StatsError, SuccessCurve};

pub const ANALYSIS_SCHEMA: &str = "lockbox-probe-analysis/1";
pub const DEFAULT_MAX_ORDER: usize = 3;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("log contains no trial records")]
    NoRecords,
    #[error(transparent)]
    Loops(#[from] LoopError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub repetition: usize,
    pub success_rate: f64,
    #[serde(flatten)]
    pub loops: LoopStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub flip_p: f64,
    pub n_trials: usize,
    pub n_aborted: usize,
    pub success_rate: f64,
    pub loop_probability: f64,
    pub mean_coverage_fraction: f64,
    pub mean_flip_rate: f64,
    pub substitutions: usize,
    pub per_repetition: Vec<RepetitionReport>,
    pub success_curve: SuccessCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loop_probability_vs_success_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omitted_reason: Option<String>,
}

/// Fit of per-repetition success rate against flip probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<OrderSelection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_flip_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omitted_reason: Option<String>,
}

impl FitReport {
    pub fn csv(&self) -> Option<String> {
        self.selection.as_ref().map(|s| fit_csv(&self.x, &self.y, s.best()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema: String,
    pub n_records: usize,
    pub n_aborted: usize,
    pub n_substitutions: usize,
    /// Keyed by flip probability.
    pub conditions: BTreeMap<String, ConditionReport>,
    pub correlation: Correlation,
    pub fit: FitReport,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn success_rate<'a>(recs: impl Iterator<Item = &'a &'a TrialRecord>) -> f64 {
    mean(recs.filter(|r| !r.aborted).map(|r| f64::from(u8::from(r.success))))
}

/// Success-rate points for the fit: one per (condition, repetition).
pub fn repetition_points(records: &[TrialRecord]) -> (Vec<f64>, Vec<f64>) {
    let mut groups: BTreeMap<(usize, usize), (f64, Vec<&TrialRecord>)> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.aborted) {
        groups
            .entry((r.grid_index, r.repetition))
            .or_insert((r.flip_p, Vec::new()))
            .1
            .push(r);
    }
    groups
        .into_values()
        .map(|(p, recs)| (p, success_rate(recs.iter())))
        .unzip()
}

pub fn fit_success(records: &[TrialRecord], max_order: usize) -> FitReport {
    let (x, y) = repetition_points(records);
    let (selection, omitted_reason) = match select_order(&x, &y, max_order) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let peak_flip_p = selection.as_ref().and_then(|s| {
        let best = s.best();
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // densest grid argmax of the fitted curve over the observed range
        (0..=1000)
            .map(|i| lo + (hi - lo) * i as f64 / 1000.0)
            .max_by(|a, b| best.eval(*a).total_cmp(&best.eval(*b)))
    });
    FitReport {
        x,
        y,
        selection,
        peak_flip_p,
        omitted_reason,
    }
}

pub fn condition_key(p: f64) -> String {
    format!("{p}")
}

pub fn analyze(records: &[TrialRecord], max_order: usize) -> Result<AnalysisReport, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::NoRecords);
    }
    let loops = loop_metrics(records)?;
    let mut by_grid: BTreeMap<usize, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        by_grid.entry(r.grid_index).or_default().push(r);
    }
    let mut conditions = BTreeMap::new();
    let mut loop_probs = Vec::new();
    let mut success_rates = Vec::new();
    for (recs, l) in by_grid.values().zip(&loops) {
        let usable: Vec<&TrialRecord> = recs.iter().copied().filter(|r| !r.aborted).collect();
        let owned: Vec<TrialRecord> = usable.iter().map(|r| (*r).clone()).collect();
        let budget = usable.iter().map(|r| r.step_budget).max().unwrap_or(0);
        let per_repetition = l
            .per_repetition
            .iter()
            .map(|rep| RepetitionReport {
                repetition: rep.repetition,
                success_rate: success_rate(usable.iter().filter(|r| r.repetition == rep.repetition)),
                loops: rep.stats.clone(),
            })
            .collect();
        let rate = success_rate(usable.iter());
        loop_probs.push(l.stats.loop_probability);
        success_rates.push(rate);
        let report = ConditionReport {
            flip_p: l.flip_p,
            n_trials: usable.len(),
            n_aborted: recs.len() - usable.len(),
            success_rate: rate,
            loop_probability: l.stats.loop_probability,
            mean_coverage_fraction: l.stats.mean_coverage_fraction,
            mean_flip_rate: mean(
                usable
                    .iter()
                    .filter(|r| !r.steps.is_empty())
                    .map(|r| flip_rate(&r.flips().copied().collect::<Vec<_>>(), r.steps.len()).unwrap_or(0.0)),
            ),
            substitutions: usable.iter().map(|r| r.substitutions()).sum(),
            per_repetition,
            success_curve: success_curve(&owned, budget)?,
        };
        conditions.insert(condition_key(l.flip_p), report);
    }
    let correlation = match pearson(&loop_probs, &success_rates) {
        Ok(r) => Correlation {
            loop_probability_vs_success_rate: Some(r),
            omitted_reason: None,
        },
        Err(e) => Correlation {
            loop_probability_vs_success_rate: None,
            omitted_reason: Some(match e {
                StatsError::TooFewPoints { .. } => "correlation needs at least two conditions".to_string(),
                other => other.to_string(),
            }),
        },
    };
    Ok(AnalysisReport {
        schema: ANALYSIS_SCHEMA.into(),
        n_records: records.len(),
        n_aborted: records.iter().filter(|r| r.aborted).count(),
        n_substitutions: records.iter().map(|r| r.substitutions()).sum(),
        conditions,
        correlation,
        fit: fit_success(records, max_order),
    })
}
