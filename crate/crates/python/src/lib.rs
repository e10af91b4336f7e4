//! Python bindings: `import privmarket_py`.

use privmarket::adaptive_market::{budget_bound, minimal_t, stage_schedule, verify_stage_inequalities};
use privmarket::cost_function::{PriceVector, ScaledCost, SharesVector};
use privmarket::fee_market::{lambda_star, share_accuracy_bound, MarketParams, MarketSession};
use privmarket::harness::audit::{privacy_audit_with, DEFAULT_PAIRS};
use privmarket::harness::{run_trials, RunConfig};
use privmarket::noise_schedule::{noise_scale, participation_count, NoiseMode};
use privmarket::traders::best_response;
use privmarket::{CostKind, MarketError};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

fn err(e: MarketError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.into_pyobject(py)?.into_any(),
            (None, Some(i)) => i.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(xs) => {
            let list = PyList::empty(py);
            for x in xs {
                list.append(to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(m) => {
            let dict = PyDict::new(py);
            for (k, x) in m {
                dict.set_item(k, to_py(py, x)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// Scaled LMSR cost `C(q) = ln(sum exp(lambda q)) / lambda`.
#[pyclass(name = "ScaledCost", frozen)]
struct PyScaledCost {
    inner: ScaledCost,
}

#[pymethods]
impl PyScaledCost {
    #[new]
    #[pyo3(signature = (d, lam, kind = "lmsr"))]
    fn new(d: usize, lam: f64, kind: &str) -> PyResult<Self> {
        let kind: CostKind = kind.parse().map_err(err)?;
        Ok(Self { inner: ScaledCost::new(kind, d, lam).map_err(err)? })
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda()
    }

    fn worst_case_loss(&self) -> f64 {
        self.inner.worst_case_loss()
    }

    fn cost(&self, q: Vec<f64>) -> PyResult<f64> {
        self.inner.cost(&q).map_err(err)
    }

    fn prices(&self, q: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.prices(&q).map_err(err)?.into_inner())
    }

    fn trade_cost(&self, q: Vec<f64>, dq: Vec<f64>) -> PyResult<f64> {
        self.inner.trade_cost(&q, &dq).map_err(err)
    }

    fn invert_prices(&self, p: Vec<f64>, eta: f64) -> PyResult<Vec<f64>> {
        Ok(self.inner.invert_prices(&p, eta).map_err(err)?.into_inner())
    }

    #[pyo3(signature = (q, iterations = 200))]
    fn ftrl_price(&self, q: Vec<f64>, iterations: usize) -> PyResult<Vec<f64>> {
        Ok(self.inner.ftrl_price(&q, iterations).map_err(err)?.into_inner())
    }

    fn __repr__(&self) -> String {
        format!("ScaledCost(d={}, lam={})", self.inner.d(), self.inner.lambda())
    }
}

/// One private fee market: participant trades in, noisy prices out.
#[pyclass(name = "MarketSession", unsendable)]
struct PyMarketSession {
    inner: MarketSession,
}

#[pymethods]
impl PyMarketSession {
    #[new]
    #[pyo3(signature = (d, epsilon, alpha, gamma, horizon, fee = None, lam = None, noise_off = false, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        d: usize,
        epsilon: f64,
        alpha: f64,
        gamma: f64,
        horizon: u64,
        fee: Option<f64>,
        lam: Option<f64>,
        noise_off: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let mut p = MarketParams::new(d, epsilon, alpha, gamma, horizon).map_err(err)?;
        if let Some(f) = fee {
            p = p.with_fee(f);
        }
        if let Some(l) = lam {
            p = p.with_lambda(l);
        }
        if noise_off {
            p = p.with_noise(NoiseMode::Off);
        }
        p.validate().map_err(err)?;
        Ok(Self { inner: MarketSession::open(p, CostKind::Lmsr, seed).map_err(err)? })
    }

    #[getter]
    fn t(&self) -> u64 {
        self.inner.t()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.params().lambda
    }

    fn is_full(&self) -> bool {
        self.inner.is_full()
    }

    fn cost(&self) -> PyScaledCost {
        PyScaledCost { inner: *self.inner.cost() }
    }

    /// Last published prices.
    fn prices(&self) -> Vec<f64> {
        self.inner.current_prices().to_vec()
    }

    fn published_state(&self) -> Vec<f64> {
        self.inner.published_state().to_vec()
    }

    /// Execute a trade; returns the step record as a dict.
    fn step<'py>(&mut self, py: Python<'py>, dq: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let r = self.inner.step(&SharesVector::new(dq)).map_err(err)?;
        serialize(py, &r)
    }

    fn max_price_gap(&self) -> f64 {
        self.inner.max_price_gap()
    }

    fn max_share_gap(&self) -> f64 {
        self.inner.max_share_gap()
    }

    /// Sell back all noise and settle on `payoff`; returns the ledger.
    fn close<'py>(&mut self, py: Python<'py>, payoff: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let l = self.inner.close_with_payoff(&payoff).map_err(err)?;
        serialize(py, &l)
    }
}

#[pyfunction(name = "lambda_star")]
fn py_lambda_star(horizon: u64, alpha: f64, gamma: f64, epsilon: f64, d: usize) -> PyResult<f64> {
    lambda_star(horizon, alpha, gamma, epsilon, d).map_err(err)
}

#[pyfunction(name = "share_accuracy_bound")]
fn py_share_accuracy_bound(d: usize, horizon: u64, epsilon: f64, gamma: f64) -> PyResult<f64> {
    share_accuracy_bound(d, horizon, epsilon, gamma).map_err(err)
}

#[pyfunction(name = "noise_scale")]
fn py_noise_scale(horizon: u64, epsilon: f64) -> PyResult<f64> {
    noise_scale(horizon, epsilon).map_err(err)
}

#[pyfunction(name = "participation_count")]
fn py_participation_count(t_prime: u64, horizon: u64) -> PyResult<u32> {
    participation_count(t_prime, horizon).map_err(err)
}

#[pyfunction(name = "minimal_t")]
fn py_minimal_t(a: f64, d: f64) -> PyResult<f64> {
    minimal_t(a, d).map_err(err)
}

#[pyfunction(name = "budget_bound")]
fn py_budget_bound(base_loss: f64, d: usize, alpha: f64, gamma: f64, epsilon: f64) -> PyResult<f64> {
    budget_bound(base_loss, d, alpha, gamma, epsilon).map_err(err)
}

/// Best signed unit trade against `belief`; returns `(trade or None, expected profit)`.
#[pyfunction(name = "best_response")]
fn py_best_response(lam: f64, q_hat: Vec<f64>, belief: Vec<f64>, fee: f64) -> PyResult<(Option<Vec<f64>>, f64)> {
    let cost = ScaledCost::lmsr(q_hat.len(), lam).map_err(err)?;
    let br = best_response(&cost, &q_hat, &PriceVector::new(belief), fee).map_err(err)?;
    Ok((br.decision.bundle().map(|b| b.to_vec()), br.expected_profit))
}

#[pyfunction(name = "privacy_audit")]
#[pyo3(signature = (horizon, d, epsilon, pairs = DEFAULT_PAIRS, seed = 0))]
fn py_privacy_audit<'py>(py: Python<'py>, horizon: u64, d: usize, epsilon: f64, pairs: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    serialize(py, &privacy_audit_with(horizon, d, epsilon, pairs, seed).map_err(err)?)
}

/// Stage schedule plus its inequality report for `k = 1..k_max`.
#[pyfunction(name = "stage_schedule")]
#[pyo3(signature = (base_loss, d, alpha, gamma, epsilon, k_max = 20))]
fn py_stage_schedule<'py>(
    py: Python<'py>,
    base_loss: f64,
    d: usize,
    alpha: f64,
    gamma: f64,
    epsilon: f64,
    k_max: u32,
) -> PyResult<Bound<'py, PyAny>> {
    let s = stage_schedule(base_loss, d, alpha, gamma, epsilon, k_max).map_err(err)?;
    let r = verify_stage_inequalities(&s, k_max).map_err(err)?;
    serialize(py, &serde_json::json!({ "schedule": s, "inequalities": r }))
}

/// Run the trials of a JSON run config; returns one dict per seed.
#[pyfunction(name = "run_trials")]
#[pyo3(signature = (config_json, start = None, end = None))]
fn py_run_trials<'py>(py: Python<'py>, config_json: &str, start: Option<u64>, end: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = RunConfig::from_json(config_json).map_err(err)?;
    let range = start.unwrap_or(cfg.seeds.start)..end.unwrap_or(cfg.seeds.end);
    let rows = py.detach(|| run_trials(&cfg, range, None)).map_err(err)?;
    serialize(py, &rows)
}

#[pymodule]
fn privmarket_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScaledCost>()?;
    m.add_class::<PyMarketSession>()?;
    m.add_function(wrap_pyfunction!(py_lambda_star, m)?)?;
    m.add_function(wrap_pyfunction!(py_share_accuracy_bound, m)?)?;
    m.add_function(wrap_pyfunction!(py_noise_scale, m)?)?;
    m.add_function(wrap_pyfunction!(py_participation_count, m)?)?;
    m.add_function(wrap_pyfunction!(py_minimal_t, m)?)?;
    m.add_function(wrap_pyfunction!(py_budget_bound, m)?)?;
    m.add_function(wrap_pyfunction!(py_best_response, m)?)?;
    m.add_function(wrap_pyfunction!(py_privacy_audit, m)?)?;
    m.add_function(wrap_pyfunction!(py_stage_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(py_run_trials, m)?)?;
    Ok(())
}
