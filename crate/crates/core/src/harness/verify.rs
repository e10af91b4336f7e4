//! Statistical verifiers over per-seed metrics. Every check uses a
//! three-standard-error tolerance.

use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{invalid_param, MarketError, Result};
use crate::fee_market::share_accuracy_bound;
use crate::harness::config::RunConfig;
use crate::harness::trials::{mean_and_se, read_jsonl, read_summary, summarize, TrialMetrics, CONFIG_FILE, METRICS_FILE, SUMMARY_FILE};

pub const MIN_SEEDS: usize = 100;
const SE_MULTIPLIER: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub passed: bool,
    pub n: usize,
    pub statistic: f64,
    pub threshold: f64,
    /// `threshold - statistic`; negative on failure.
    pub margin: f64,
    pub detail: String,
}

impl CheckReport {
    fn new(check: &str, n: usize, statistic: f64, threshold: f64, detail: String) -> Self {
        Self {
            check: check.to_string(),
            passed: statistic <= threshold,
            n,
            statistic,
            threshold,
            margin: threshold - statistic,
            detail,
        }
    }
}

fn need(rows: &[TrialMetrics]) -> Result<()> {
    if rows.len() < MIN_SEEDS {
        return Err(MarketError::InsufficientData { needed: MIN_SEEDS, got: rows.len() });
    }
    Ok(())
}

/// `gamma + 3 sqrt(gamma (1 - gamma) / n)`.
pub fn exceedance_tolerance(gamma: f64, n: usize) -> f64 {
    gamma + SE_MULTIPLIER * (gamma * (1.0 - gamma) / n as f64).sqrt()
}

fn exceedance(rows: &[TrialMetrics], get: impl Fn(&TrialMetrics) -> f64, bound: f64) -> f64 {
    rows.iter().filter(|r| get(r) > bound).count() as f64 / rows.len() as f64
}

/// Fraction of seeds whose price gap exceeds `alpha`, against `gamma`.
pub fn verify_precision(rows: &[TrialMetrics], alpha: f64, gamma: f64) -> Result<CheckReport> {
    need(rows)?;
    let frac = exceedance(rows, |r| r.max_price_gap, alpha);
    Ok(CheckReport::new(
        "precision",
        rows.len(),
        frac,
        exceedance_tolerance(gamma, rows.len()),
        format!("fraction of seeds with max price gap > {alpha}"),
    ))
}

/// Mean designer loss against `bound + 3 SE`.
pub fn verify_budget_bound(rows: &[TrialMetrics], bound: f64) -> Result<CheckReport> {
    need(rows)?;
    let xs: Vec<f64> = rows.iter().map(|r| r.designer_loss).collect();
    let (mean, se) = mean_and_se(&xs);
    Ok(CheckReport::new(
        "budget",
        rows.len(),
        mean,
        bound + SE_MULTIPLIER * se,
        format!("mean designer loss vs budget {bound:.6} (se {se:.6})"),
    ))
}

/// Mean designer loss against `B1 / lambda + 3 SE`.
pub fn verify_budget(rows: &[TrialMetrics], base_loss: f64, lambda: f64) -> Result<CheckReport> {
    if !(lambda > 0.0) {
        return Err(invalid_param(format!("lambda must be positive, got {lambda}")));
    }
    verify_budget_bound(rows, base_loss / lambda)
}

/// Pooled `K` estimate: mean bundle l2 norm weighted by arrivals.
pub fn empirical_k(rows: &[TrialMetrics]) -> Option<f64> {
    let (num, den) = rows
        .iter()
        .filter_map(|r| r.mean_bundle_l2.map(|k| (k * r.arrivals as f64, r.arrivals as f64)))
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    (den > 0.0).then(|| num / den)
}

/// Mean noise-trader loss against the mean of `(T' log2 T' / 2) lambda K`
/// with `K` estimated from the drawn bundles.
pub fn verify_noise_loss(rows: &[TrialMetrics], lambda: f64) -> Result<CheckReport> {
    need(rows)?;
    let k = empirical_k(rows).unwrap_or(0.0);
    let bounds: Vec<f64> = rows
        .iter()
        .map(|r| {
            let tp = r.arrivals as f64;
            let lg = if r.arrivals > 0 { tp.log2() } else { 0.0 };
            tp * lg / 2.0 * lambda * k
        })
        .collect();
    let (bound, _) = mean_and_se(&bounds);
    let xs: Vec<f64> = rows.iter().map(|r| r.ntl).collect();
    let (mean, se) = mean_and_se(&xs);
    Ok(CheckReport::new(
        "noise_loss",
        rows.len(),
        mean,
        bound + SE_MULTIPLIER * se,
        format!("mean noise-trader loss vs (T' log2 T' / 2) lambda K, K = {k:.6}"),
    ))
}

/// Fraction of seeds whose share gap exceeds the high-probability bound.
pub fn verify_share_accuracy(rows: &[TrialMetrics], d: usize, horizon: u64, epsilon: f64, gamma: f64) -> Result<CheckReport> {
    need(rows)?;
    let bound = share_accuracy_bound(d, horizon, epsilon, gamma)?;
    let frac = exceedance(rows, |r| r.max_share_gap, bound);
    Ok(CheckReport::new(
        "shares",
        rows.len(),
        frac,
        exceedance_tolerance(gamma, rows.len()),
        format!("fraction of seeds with max share gap > {bound:.6}"),
    ))
}

/// Re-derive the summary from the rows and compare with a written summary.
pub fn verify_summary(config: &RunConfig, rows: &[TrialMetrics], written: &[crate::harness::trials::SummaryRow]) -> Result<CheckReport> {
    let fresh = summarize(config, rows)?;
    let close = |a: f64, b: f64| (a.is_nan() && b.is_nan()) || a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    let opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => close(x, y),
        (None, None) => true,
        _ => false,
    };
    let mismatches = if fresh.len() != written.len() {
        fresh.len().max(written.len())
    } else {
        fresh
            .iter()
            .zip(written)
            .filter(|(f, w)| {
                !(f.metric == w.metric
                    && f.count == w.count
                    && close(f.mean, w.mean)
                    && close(f.std_err, w.std_err)
                    && close(f.min, w.min)
                    && close(f.max, w.max)
                    && opt(f.threshold, w.threshold)
                    && opt(f.exceed_fraction, w.exceed_fraction))
            })
            .count()
    };
    Ok(CheckReport::new(
        "summary",
        rows.len(),
        mismatches as f64,
        0.0,
        "summary rows that disagree with the per-seed metrics".into(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Precision,
    Budget,
    Shares,
    All,
}

impl FromStr for Check {
    type Err = MarketError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "precision" => Ok(Check::Precision),
            "budget" => Ok(Check::Budget),
            "shares" => Ok(Check::Shares),
            "all" => Ok(Check::All),
            other => Err(invalid_param(format!("unknown check `{other}` (precision|budget|shares|all)"))),
        }
    }
}

/// Run checks against a directory written by `write_outputs`.
pub fn verify_run_dir(dir: &Path, check: Check) -> Result<Vec<CheckReport>> {
    let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let rows = read_jsonl(&dir.join(METRICS_FILE))?;
    let m = &config.market;
    let mut out = Vec::new();
    if matches!(check, Check::Precision | Check::All) {
        out.push(verify_precision(&rows, m.alpha, m.gamma)?);
    }
    if matches!(check, Check::Budget | Check::All) {
        let bound = rows.first().map_or(f64::INFINITY, |r| r.loss_bound);
        out.push(verify_budget_bound(&rows, bound)?);
        if !config.adaptive_enabled() {
            let lambda = rows.first().map_or(0.0, |r| r.lambda);
            out.push(verify_noise_loss(&rows, lambda)?);
        }
    }
    if matches!(check, Check::Shares | Check::All) && !config.adaptive_enabled() {
        out.push(verify_share_accuracy(&rows, m.d, m.horizon, m.epsilon, m.gamma)?);
    }
    if check == Check::All {
        let written = read_summary(&dir.join(SUMMARY_FILE))?;
        out.push(verify_summary(&config, &rows, &written)?);
    }
    Ok(out)
}
