//! Dual ascent on the risk multiplier `η`.

use std::io::Write;

use crate::io::{fmt, write_table, Meta};
use crate::model::ProblemSpec;
use crate::risk::estimate_pfail_is;
use crate::rng::sub_seed;
use crate::sim::sample_uncontrolled_ensemble;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualParams {
    /// Half-width of the stopping band around `Δ`.
    pub epsilon: f64,
    pub learning_rate: f64,
    pub eta_init: f64,
    pub samples: usize,
    pub dt: f64,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for DualParams {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            learning_rate: 0.01,
            eta_init: 0.05,
            samples: 20_000,
            dt: 0.01,
            seed: 0,
            max_iters: 200,
        }
    }
}

impl DualParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if !(self.eta_init > 0.0) {
            return Err(Error::invalid("eta_init", "must be positive"));
        }
        if self.samples == 0 {
            return Err(Error::invalid("samples", "must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualMode {
    InactiveConstraint,
    ActiveConstraint,
}

impl DualMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DualMode::InactiveConstraint => "inactive_constraint",
            DualMode::ActiveConstraint => "active_constraint",
        }
    }
}

/// One risk evaluation of the ascent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualStep {
    pub eta: f64,
    pub pfail: f64,
    pub std_error: f64,
    pub effective_sample_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub eta: f64,
    pub pfail: f64,
    pub std_error: f64,
    /// Number of risk evaluations so far (`history.len()`).
    pub iteration: usize,
    pub history: Vec<DualStep>,
    pub converged: bool,
    pub mode: DualMode,
}

impl DualState {
    /// Spread of `η` over the last `window` evaluations.
    pub fn eta_spread(&self, window: usize) -> f64 {
        let tail = &self.history[self.history.len().saturating_sub(window)..];
        if tail.len() < 2 {
            return 0.0;
        }
        let mean = tail.iter().map(|s| s.eta).sum::<f64>() / tail.len() as f64;
        let var = tail.iter().map(|s| (s.eta - mean).powi(2)).sum::<f64>() / (tail.len() - 1) as f64;
        var.sqrt()
    }

    pub fn write_trace<W: Write>(&self, out: W, meta: Option<&Meta>) -> Result<()> {
        let header: Vec<String> = ["iteration", "eta", "p_fail", "std_error", "ess"].map(String::from).to_vec();
        let rows = self.history.iter().enumerate().map(|(i, s)| {
            vec![
                (i + 1).to_string(),
                fmt(s.eta),
                fmt(s.pfail),
                fmt(s.std_error),
                fmt(s.effective_sample_size),
            ]
        });
        write_table(out, meta, &header, rows)
    }
}

fn evaluate(spec: &ProblemSpec, eta: f64, params: &DualParams, iteration: usize) -> Result<DualStep> {
    let seed = sub_seed(params.seed, iteration as u64);
    let ens = sample_uncontrolled_ensemble(spec, eta, params.samples, params.dt, seed)?;
    let est = estimate_pfail_is(&ens)?;
    Ok(DualStep {
        eta,
        pfail: est.p,
        std_error: est.std_error,
        effective_sample_size: est.effective_sample_size,
    })
}

/// Dual ascent: check `η = 0` first, then `η ← max(η + γ(P_fail(η) − Δ), 0)`
/// from `eta_init` until `|P_fail − Δ| < ε`. Every evaluation draws a fresh
/// ensemble.
pub fn dual_ascent(spec: &ProblemSpec, params: &DualParams) -> Result<DualState> {
    params.validate()?;
    let delta = spec.risk_tolerance();
    let first = evaluate(spec, 0.0, params, 0)?;
    let mut state = DualState {
        eta: 0.0,
        pfail: first.pfail,
        std_error: first.std_error,
        iteration: 1,
        history: vec![first],
        converged: false,
        mode: DualMode::ActiveConstraint,
    };
    log::info!("dual: η = 0, P_fail = {:.4} ± {:.4}", first.pfail, first.std_error);
    if first.pfail <= delta {
        state.converged = true;
        state.mode = DualMode::InactiveConstraint;
        return Ok(state);
    }

    let mut eta = params.eta_init;
    while state.iteration < params.max_iters {
        let step = evaluate(spec, eta, params, state.iteration)?;
        state.history.push(step);
        state.iteration += 1;
        state.eta = eta;
        state.pfail = step.pfail;
        state.std_error = step.std_error;
        log::debug!(
            "dual {}: η = {eta:.5}, P_fail = {:.4} ± {:.4}, ESS = {:.0}",
            state.iteration,
            step.pfail,
            step.std_error,
            step.effective_sample_size
        );
        if (step.pfail - delta).abs() < params.epsilon {
            state.converged = true;
            log::info!("dual converged after {} evaluations: η* = {eta:.5}", state.iteration);
            return Ok(state);
        }
        eta = (eta + params.learning_rate * (step.pfail - delta)).max(0.0);
    }

    // best-so-far among the η > 0 evaluations
    let best = state.history[1..]
        .iter()
        .min_by(|a, b| (a.pfail - delta).abs().total_cmp(&(b.pfail - delta).abs()))
        .copied()
        .unwrap_or(state.history[0]);
    state.eta = best.eta;
    state.pfail = best.pfail;
    state.std_error = best.std_error;
    Err(Error::MaxItersExceeded(Box::new(state)))
}

/// One row of a `Δ` sweep. `state` is `None` when the ascent failed outright.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub delta: f64,
    pub state: Option<DualState>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn eta(&self) -> f64 {
        self.state.as_ref().map_or(f64::NAN, |s| s.eta)
    }

    pub fn pfail(&self) -> f64 {
        self.state.as_ref().map_or(f64::NAN, |s| s.pfail)
    }

    pub fn std_error(&self) -> f64 {
        self.state.as_ref().map_or(f64::NAN, |s| s.std_error)
    }

    /// Uncertainty of `η*`: spread of the last ten iterates, floored at `γ·ε`.
    pub fn eta_std(&self, params: &DualParams) -> f64 {
        match &self.state {
            Some(s) if s.mode == DualMode::ActiveConstraint => {
                s.eta_spread(10).max(params.learning_rate * params.epsilon)
            }
            Some(_) => 0.0,
            None => f64::NAN,
        }
    }
}

/// Runs the ascent for each `Δ` with the same base seed. Failures are
/// recorded in the row and the sweep continues.
pub fn sweep_delta(spec: &ProblemSpec, deltas: &[f64], params: &DualParams) -> Result<Vec<SweepRow>> {
    if deltas.is_empty() {
        return Err(Error::invalid("deltas", "empty list"));
    }
    let mut rows = Vec::with_capacity(deltas.len());
    for &d in deltas {
        let s = spec.with_risk_tolerance(d)?;
        let row = match dual_ascent(&s, params) {
            Ok(state) => SweepRow {
                delta: d,
                state: Some(state),
                error: None,
            },
            Err(Error::MaxItersExceeded(state)) => SweepRow {
                delta: d,
                error: Some(format!("no convergence in {} iterations", state.iteration)),
                state: Some(*state),
            },
            Err(e) => SweepRow {
                delta: d,
                state: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Pairs of consecutive sweep rows that move against the expected trend by
/// more than three combined standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrendReport {
    pub eta_violations: usize,
    pub pfail_violations: usize,
}

impl TrendReport {
    pub fn total(&self) -> usize {
        self.eta_violations + self.pfail_violations
    }

    pub fn ok(&self) -> bool {
        self.total() <= 1
    }
}

/// Per-row flags: `(η up by > 3σ, P_fail down by > 3σ)` relative to the previous row.
pub fn trend_flags(rows: &[SweepRow], params: &DualParams) -> Vec<(bool, bool)> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[a].delta.total_cmp(&rows[b].delta));
    let mut flags = vec![(false, false); rows.len()];
    for w in order.windows(2) {
        let (a, b) = (&rows[w[0]], &rows[w[1]]);
        if a.state.is_none() || b.state.is_none() {
            continue;
        }
        let se = (a.eta_std(params).powi(2) + b.eta_std(params).powi(2)).sqrt();
        let eta_up = b.eta() > a.eta() + 3.0 * se;
        let sp = (a.std_error().powi(2) + b.std_error().powi(2)).sqrt();
        let p_down = b.pfail() < a.pfail() - 3.0 * sp;
        flags[w[1]] = (eta_up, p_down);
    }
    flags
}

pub fn trend_report(rows: &[SweepRow], params: &DualParams) -> TrendReport {
    let flags = trend_flags(rows, params);
    TrendReport {
        eta_violations: flags.iter().filter(|f| f.0).count(),
        pfail_violations: flags.iter().filter(|f| f.1).count(),
    }
}

pub fn write_sweep<W: Write>(out: W, meta: Option<&Meta>, rows: &[SweepRow], params: &DualParams) -> Result<()> {
    let header: Vec<String> = [
        "delta",
        "eta",
        "eta_std",
        "p_fail",
        "std_error",
        "converged",
        "mode",
        "iterations",
        "eta_trend_violation",
        "p_fail_trend_violation",
        "error",
    ]
    .map(String::from)
    .to_vec();
    let flags = trend_flags(rows, params);
    let body = rows.iter().zip(flags).map(|(r, (fe, fp))| {
        let (conv, mode, iters) = match &r.state {
            Some(s) => (s.converged.to_string(), s.mode.as_str().to_string(), s.iteration.to_string()),
            None => ("false".into(), String::new(), "0".into()),
        };
        vec![
            fmt(r.delta),
            fmt(r.eta()),
            fmt(r.eta_std(params)),
            fmt(r.pfail()),
            fmt(r.std_error()),
            conv,
            mode,
            iters,
            fe.to_string(),
            fp.to_string(),
            r.error.clone().unwrap_or_default(),
        ]
    });
    write_table(out, meta, &header, body)
}
