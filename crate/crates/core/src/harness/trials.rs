//! Monte Carlo trial runner.

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive_market::{budget_bound, run_adaptive, AdaptiveOptions};
use crate::cost_function::{CostKind, OutcomeModel, SharesVector};
use crate::error::{MarketError, Result};
use crate::fee_market::{drive, share_accuracy_bound, ArrivalStream, MarketSession};
use crate::harness::config::{ArrivalOrder, OutcomeRule, RunConfig};
use crate::traders::{make_strategy, step_strategy, Decision, Strategy, StrategyContext};

/// Substream for arrival order draws.
pub const ARRIVAL_STREAM: u64 = 1 << 32;
/// Substream for outcome draws.
pub const OUTCOME_STREAM: u64 = (1 << 32) + 1;
/// Substream of the `i`-th trader in roster order.
pub const fn strategy_stream(i: usize) -> u64 {
    (1 << 33) + i as u64
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Seat {
    strategy: Box<dyn Strategy>,
    own: Vec<SharesVector>,
}

/// The configured traders, presented with arrival opportunities in turn.
pub struct Roster {
    seats: Vec<Seat>,
    order: ArrivalOrder,
    rng: ChaCha8Rng,
    remaining: u64,
    cursor: usize,
    last: Option<usize>,
}

impl Roster {
    pub fn from_config(config: &RunConfig, seed: u64) -> Result<Self> {
        let d = config.market.d;
        let mut seats = Vec::new();
        for entry in &config.traders {
            for _ in 0..entry.count {
                let rng = substream(seed, strategy_stream(seats.len()));
                seats.push(Seat { strategy: make_strategy(&entry.strategy, d, rng)?, own: Vec::new() });
            }
        }
        Ok(Self {
            seats,
            order: config.arrival_order,
            rng: substream(seed, ARRIVAL_STREAM),
            remaining: config.effective_opportunities()?,
            cursor: 0,
            last: None,
        })
    }

    pub fn len(&self) -> usize {
        self.seats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seats.is_empty()
    }

    /// Trades filled so far by trader `i`.
    pub fn own_trades(&self, i: usize) -> &[SharesVector] {
        &self.seats[i].own
    }
}

impl ArrivalStream for Roster {
    fn next_trade(&mut self, session: &MarketSession) -> Option<Result<Option<SharesVector>>> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let i = match self.order {
            ArrivalOrder::RoundRobin => {
                let i = self.cursor;
                self.cursor = (self.cursor + 1) % self.seats.len();
                i
            }
            ArrivalOrder::Random => self.rng.random_range(0..self.seats.len()),
        };
        let seat = &mut self.seats[i];
        let ctx = StrategyContext {
            t: session.t() + 1,
            own_trades: &seat.own,
            published_states: session.published_states(),
            published_prices: session.published_prices(),
            fee: session.params().fee,
            cost: session.cost(),
        };
        Some(step_strategy(seat.strategy.as_mut(), &ctx).map(|d| match d {
            Decision::Trade(dq) => {
                self.last = Some(i);
                Some(dq)
            }
            Decision::Abstain => None,
        }))
    }

    fn filled(&mut self, trade: &SharesVector) {
        if let Some(i) = self.last.take() {
            self.seats[i].own.push(trade.clone());
        }
    }

    fn exhausted(&self) -> bool {
        self.remaining == 0
    }
}

/// Per-seed results; field names are part of the JSONL format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub seed: u64,
    pub designer_loss: f64,
    pub mm_loss: f64,
    pub ntl: f64,
    pub fees: f64,
    pub participant_payments: f64,
    pub participant_payoffs: f64,
    /// `max_t ||p^t - phat^t||_1` against the same trades without noise.
    pub max_price_gap: f64,
    /// `max_t ||q^t - qhat^t||_1`.
    pub max_share_gap: f64,
    pub arrivals: u64,
    pub stages_completed: u32,
    pub stages_run: u32,
    /// Price sensitivity of the (first) market.
    pub lambda: f64,
    /// Designer budget the run is held to.
    pub loss_bound: f64,
    /// Mean `||z||_2` over the noise bundles drawn.
    pub mean_bundle_l2: Option<f64>,
    pub outcome: Option<usize>,
}

fn settle(config: &RunConfig, seed: u64) -> Result<(Vec<f64>, Option<usize>)> {
    let d = config.market.d;
    let model = OutcomeModel::complete(d);
    match &config.outcome {
        OutcomeRule::Fixed { outcome } => Ok((model.payoff(*outcome)?.to_vec(), Some(*outcome))),
        OutcomeRule::Sample { probabilities } => {
            let u: f64 = substream(seed, OUTCOME_STREAM).random();
            let mut acc = 0.0;
            let mut pick = d - 1;
            for (i, p) in probabilities.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            Ok((model.payoff(pick)?.to_vec(), Some(pick)))
        }
        OutcomeRule::Expected { probabilities } => Ok((model.expected_payoff(probabilities)?, None)),
    }
}

/// One market (or adaptive market) for one seed.
pub fn run_trial(config: &RunConfig, seed: u64) -> Result<TrialMetrics> {
    let mut roster = Roster::from_config(config, seed)?;
    let (payoff, outcome) = settle(config, seed)?;
    let m = &config.market;

    if let Some(schedule) = config.schedule()? {
        let eta = config.adaptive.as_ref().and_then(|a| a.eta);
        let options = AdaptiveOptions { kind: CostKind::Lmsr, noise: config.noise_mode(), eta };
        let out = run_adaptive(&schedule, &mut roster, &payoff, seed, options)?;
        let g = out.global;
        let drawn: u64 = out.stages.iter().filter(|s| s.mean_bundle_l2.is_some()).map(|s| s.arrivals).sum();
        let mean_bundle_l2 = (drawn > 0).then(|| {
            out.stages
                .iter()
                .filter_map(|s| s.mean_bundle_l2.map(|k| k * s.arrivals as f64))
                .sum::<f64>()
                / drawn as f64
        });
        return Ok(TrialMetrics {
            seed,
            designer_loss: g.designer_loss,
            mm_loss: g.mm_loss,
            ntl: g.ntl,
            fees: g.fees,
            participant_payments: g.participant_payments,
            participant_payoffs: g.participant_payoffs,
            max_price_gap: out.max_global_price_gap(),
            max_share_gap: out.stages.iter().map(|s| s.max_share_gap).fold(0.0, f64::max),
            arrivals: g.arrivals,
            stages_completed: out.stages_completed() as u32,
            stages_run: out.stages.len() as u32,
            lambda: schedule.stages[0].lambda,
            loss_bound: budget_bound(schedule.base_loss, m.d, m.alpha, m.gamma, m.epsilon)?,
            mean_bundle_l2,
            outcome,
        });
    }

    let params = config.market_params()?;
    let lambda = params.lambda;
    let mut session = MarketSession::open(params, CostKind::Lmsr, seed)?;
    drive(&mut session, &mut roster)?;
    let completed = session.is_full();
    let ledger = session.close_with_payoff(&payoff)?;
    Ok(TrialMetrics {
        seed,
        designer_loss: ledger.designer_loss,
        mm_loss: ledger.mm_loss,
        ntl: ledger.ntl,
        fees: ledger.fees,
        participant_payments: ledger.participant_payments,
        participant_payoffs: ledger.participant_payoffs,
        max_price_gap: session.max_price_gap(),
        max_share_gap: session.max_share_gap(),
        arrivals: ledger.arrivals,
        stages_completed: u32::from(completed),
        stages_run: 1,
        lambda,
        loss_bound: session.cost().worst_case_loss(),
        mean_bundle_l2: session.noise().mean_bundle_l2(),
        outcome,
    })
}

/// Run every seed in `seeds`, in parallel, returning rows in seed order.
/// `threads = None` uses rayon's global pool.
pub fn run_trials(config: &RunConfig, seeds: Range<u64>, threads: Option<usize>) -> Result<Vec<TrialMetrics>> {
    config.validate()?;
    let work = || seeds.clone().into_par_iter().map(|s| run_trial(config, s)).collect::<Result<Vec<_>>>();
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| MarketError::InvalidParameter(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub std_err: f64,
    pub min: f64,
    pub max: f64,
    pub threshold: Option<f64>,
    pub exceed_fraction: Option<f64>,
}

/// Per-metric statistics. Thresholds: designer loss against the run's loss
/// bound, price gap against `alpha`, share gap against the share bound.
pub fn summarize(config: &RunConfig, rows: &[TrialMetrics]) -> Result<Vec<SummaryRow>> {
    let m = &config.market;
    let share_bound = if config.adaptive_enabled() {
        None
    } else {
        Some(share_accuracy_bound(m.d, m.horizon, m.epsilon, m.gamma)?)
    };
    let loss_bound = rows.first().map(|r| r.loss_bound);
    type Getter = fn(&TrialMetrics) -> f64;
    let metrics: [(&str, Getter, Option<f64>); 8] = [
        ("designer_loss", |r| r.designer_loss, loss_bound),
        ("mm_loss", |r| r.mm_loss, None),
        ("ntl", |r| r.ntl, None),
        ("fees", |r| r.fees, None),
        ("max_price_gap", |r| r.max_price_gap, Some(m.alpha)),
        ("max_share_gap", |r| r.max_share_gap, share_bound),
        ("arrivals", |r| r.arrivals as f64, None),
        ("stages_completed", |r| r.stages_completed as f64, None),
    ];
    Ok(metrics
        .iter()
        .map(|(name, get, threshold)| {
            let xs: Vec<f64> = rows.iter().map(get).collect();
            let (mean, std_err) = mean_and_se(&xs);
            let exceed_fraction = threshold.map(|th| {
                xs.iter().filter(|x| **x > th).count() as f64 / xs.len().max(1) as f64
            });
            SummaryRow {
                metric: name.to_string(),
                count: xs.len(),
                mean,
                std_err,
                min: xs.iter().copied().fold(f64::INFINITY, f64::min),
                max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                threshold: *threshold,
                exceed_fraction,
            }
        })
        .collect())
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone)]
pub struct RunFiles {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub config: PathBuf,
}

pub fn write_jsonl(path: &Path, rows: &[TrialMetrics]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TrialMetrics>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(MarketError::from))
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(MarketError::from)).collect()
}

/// Write `metrics.jsonl`, `summary.csv` and a copy of the config into `dir`.
pub fn write_outputs(config: &RunConfig, rows: &[TrialMetrics], dir: &Path) -> Result<RunFiles> {
    fs::create_dir_all(dir)?;
    let files = RunFiles {
        metrics: dir.join(METRICS_FILE),
        summary: dir.join(SUMMARY_FILE),
        config: dir.join(CONFIG_FILE),
    };
    write_jsonl(&files.metrics, rows)?;
    write_summary(&files.summary, &summarize(config, rows)?)?;
    fs::write(&files.config, config.to_json()? + "\n")?;
    Ok(files)
}
