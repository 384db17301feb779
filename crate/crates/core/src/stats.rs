//! Success curves, Pearson correlation, least-squares polynomial fits and
//! AIC / leave-one-out model-order selection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runner::TrialRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no usable records")]
    Empty,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("correlation undefined: {0} series is constant")]
    ConstantSeries(&'static str),
    #[error("design matrix is rank deficient for order {order}")]
    Degenerate { order: usize },
    #[error("non-finite input value")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessCurve {
    /// `cumulative_success[s - 1]` is the success fraction by step `s`.
    pub cumulative_success: Vec<f64>,
    pub n_trials: usize,
}

impl SuccessCurve {
    pub fn at(&self, step: usize) -> f64 {
        match step {
            0 => 0.0,
            s => self.cumulative_success[(s - 1).min(self.cumulative_success.len() - 1)],
        }
    }

    /// First step at which the curve reaches `level`.
    pub fn steps_to_reach(&self, level: f64) -> Option<usize> {
        self.cumulative_success.iter().position(|&v| v >= level).map(|i| i + 1)
    }
}

/// Cumulative success by step over the non-aborted `records`.
pub fn success_curve(records: &[TrialRecord], step_budget: usize) -> Result<SuccessCurve, StatsError> {
    let usable: Vec<&TrialRecord> = records.iter().filter(|r| !r.aborted).collect();
    if usable.is_empty() || step_budget == 0 {
        return Err(StatsError::Empty);
    }
    let mut by_step = vec![0usize; step_budget + 1];
    for r in &usable {
        if let Some(s) = r.steps_to_success.filter(|_| r.success) {
            by_step[s.min(step_budget)] += 1;
        }
    }
    let n = usable.len() as f64;
    let mut acc = 0;
    let cumulative_success = by_step[1..]
        .iter()
        .map(|&c| {
            acc += c;
            acc as f64 / n
        })
        .collect();
    Ok(SuccessCurve {
        cumulative_success,
        n_trials: usable.len(),
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewPoints {
            needed: 2,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::ConstantSeries("x"));
    }
    if syy == 0.0 {
        return Err(StatsError::ConstantSeries("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub order: usize,
    /// `c_0 + c_1 x + ... + c_k x^k`.
    pub coefficients: Vec<f64>,
    pub rss: f64,
    pub aic: f64,
    /// Leave-one-out RMSE; infinite when a held-out refit is impossible.
    pub cv_rmse: f64,
}

impl PolyFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// Stationary point of a quadratic fit.
    pub fn vertex(&self) -> Option<f64> {
        match self.coefficients[..] {
            [_, b, a] if a != 0.0 => Some(-b / (2.0 * a)),
            _ => None,
        }
    }
}

fn scale_of(y: &[f64]) -> f64 {
    y.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

/// Residual sums below this are treated as exact fits when computing AIC.
fn rss_floor(y: &[f64]) -> f64 {
    let s = 1e-9 * scale_of(y);
    y.len() as f64 * s * s
}

/// Least-squares coefficients via Householder QR.
fn lstsq(x: &[f64], y: &[f64], order: usize) -> Result<Vec<f64>, StatsError> {
    let n = x.len();
    let cols = order + 1;
    if n < cols {
        return Err(StatsError::Degenerate { order });
    }
    let design = DMatrix::from_fn(n, cols, |i, j| x[i].powi(j as i32));
    let qr = design.qr();
    let r = qr.r();
    let diag_max = (0..cols).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..cols).any(|i| r[(i, i)].abs() <= 1e-10 * diag_max.max(f64::MIN_POSITIVE)) {
        return Err(StatsError::Degenerate { order });
    }
    // solving for y - y[0] keeps constant data exact
    let shift = y.first().copied().unwrap_or(0.0);
    let qty = qr.q().transpose() * DVector::from_iterator(n, y.iter().map(|v| v - shift));
    let mut coef = r.solve_upper_triangular(&qty).ok_or(StatsError::Degenerate { order })?;
    coef[0] += shift;
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(StatsError::Degenerate { order });
    }
    Ok(coef.iter().copied().collect())
}

fn eval(coef: &[f64], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Fits an order-`k` polynomial. `aic = n ln(rss / n) + 2 (k + 1)`.
pub fn polyfit(x: &[f64], y: &[f64], k: usize) -> Result<PolyFit, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < k + 1 {
        return Err(StatsError::TooFewPoints {
            needed: k + 1,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let coefficients = lstsq(x, y, k)?;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (b - eval(&coefficients, a)).powi(2))
        .sum();
    let n = x.len() as f64;
    let aic = n * (rss.max(rss_floor(y)) / n).ln() + 2.0 * (k + 1) as f64;
    let mut press = 0.0;
    let mut xs = Vec::with_capacity(x.len() - 1);
    let mut ys = Vec::with_capacity(x.len() - 1);
    for i in 0..x.len() {
        xs.clear();
        ys.clear();
        xs.extend(x.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| *v));
        ys.extend(y.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| *v));
        match lstsq(&xs, &ys, k) {
            Ok(c) => press += (y[i] - eval(&c, x[i])).powi(2),
            Err(_) => {
                press = f64::INFINITY;
                break;
            }
        }
    }
    Ok(PolyFit {
        order: k,
        coefficients,
        rss,
        aic,
        cv_rmse: (press / n).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSelection {
    /// The chosen order (the AIC minimizer).
    pub order: usize,
    pub aic_order: usize,
    pub cv_order: usize,
    /// False when AIC and cross-validation pick different orders.
    pub criteria_agree: bool,
    pub fits: Vec<PolyFit>,
}

impl OrderSelection {
    pub fn best(&self) -> &PolyFit {
        &self.fits[self.order]
    }
}

fn argmin_with_tolerance(values: &[f64], tol: f64) -> usize {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    values.iter().position(|&v| v <= min + tol).unwrap_or(0)
}

/// Scores orders `0..=max_order` by AIC and leave-one-out RMSE. Ties go to
/// the smaller order; on disagreement AIC decides.
pub fn select_order(x: &[f64], y: &[f64], max_order: usize) -> Result<OrderSelection, StatsError> {
    if x.len() < max_order + 2 {
        return Err(StatsError::TooFewPoints {
            needed: max_order + 2,
            got: x.len(),
        });
    }
    let fits = (0..=max_order)
        .map(|k| polyfit(x, y, k))
        .collect::<Result<Vec<_>, _>>()?;
    let aics: Vec<f64> = fits.iter().map(|f| f.aic).collect();
    let cvs: Vec<f64> = fits.iter().map(|f| f.cv_rmse).collect();
    let aic_order = argmin_with_tolerance(&aics, 1e-9);
    let cv_order = argmin_with_tolerance(&cvs, 1e-9 * scale_of(y));
    Ok(OrderSelection {
        order: aic_order,
        aic_order,
        cv_order,
        criteria_agree: aic_order == cv_order,
        fits,
    })
}

/// Plot-ready `x,y,fitted` rows.
pub fn fit_csv(x: &[f64], y: &[f64], fit: &PolyFit) -> String {
    let mut out = String::from("x,y,fitted\n");
    for (a, b) in x.iter().zip(y) {
        out.push_str(&format!("{a},{b},{}\n", fit.eval(*a)));
    }
    out
}
