//! Failure-probability estimates for the optimal policy.

use std::io::Write;

use crate::fdm::{self, BackwardProblem, Coeffs, FdmParams, Field, Grid2D};
use crate::io::Meta;
use crate::model::ProblemSpec;
use crate::sim::{sample_controlled, Ensemble, Policy, RolloutOptions};
use crate::{Error, Result};

/// ESS below which a warning is logged.
pub const LOW_ESS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub p: f64,
    pub std_error: f64,
    pub effective_sample_size: f64,
    pub n: usize,
}

/// `Σ (r⁽ⁱ⁾/r) 1{boundary exit}` with a delta-method standard error.
pub fn estimate_pfail_is(ens: &Ensemble) -> Result<RiskEstimate> {
    if ens.is_empty() || !(ens.reward_sum > 0.0) {
        return Err(Error::DegenerateEstimate("all path rewards vanish".into()));
    }
    let r = ens.reward_sum;
    let p: f64 = ens
        .trajectories
        .iter()
        .zip(&ens.path_rewards)
        .filter(|(tr, _)| tr.exited_via_boundary)
        .map(|(_, ri)| ri / r)
        .sum::<f64>()
        .clamp(0.0, 1.0);
    let var: f64 = ens
        .trajectories
        .iter()
        .zip(&ens.path_rewards)
        .map(|(tr, ri)| {
            let y = if tr.exited_via_boundary { 1.0 } else { 0.0 };
            (ri / r).powi(2) * (y - p).powi(2)
        })
        .sum();
    let ess = ens.effective_sample_size();
    if ess < LOW_ESS {
        log::warn!("effective sample size {ess:.1} at η = {}", ens.eta);
    }
    Ok(RiskEstimate {
        p,
        std_error: var.sqrt(),
        effective_sample_size: ess,
        n: ens.len(),
    })
}

/// As [`estimate_pfail_is`], refusing an ensemble drawn for another `η`.
pub fn estimate_pfail_is_at(ens: &Ensemble, eta: f64) -> Result<RiskEstimate> {
    if ens.eta != eta {
        return Err(Error::invalid("eta", format!("ensemble was drawn for η = {}, not {eta}", ens.eta)));
    }
    estimate_pfail_is(ens)
}

/// Fraction of `n` controlled rollouts that exit through the boundary.
pub fn estimate_pfail_controlled(
    spec: &ProblemSpec,
    policy: &dyn Policy,
    n: usize,
    dt: f64,
    seed: u64,
) -> Result<RiskEstimate> {
    if n == 0 {
        return Err(Error::invalid("samples", "need at least one rollout"));
    }
    let trajs = sample_controlled(spec, policy, n, RolloutOptions::new(dt), seed)?;
    let hits = trajs.iter().filter(|t| t.exited_via_boundary).count();
    let p = hits as f64 / n as f64;
    Ok(RiskEstimate {
        p,
        std_error: (p * (1.0 - p) / n as f64).sqrt(),
        effective_sample_size: n as f64,
        n,
    })
}

/// Failure probability on a grid, clipped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskField {
    pub field: Field,
    /// Largest distance of an unclipped interior value from `[0, 1]`.
    pub clip_magnitude: f64,
    pub raw_min: f64,
    pub raw_max: f64,
}

impl RiskField {
    pub fn at(&self, x: &[f64]) -> Result<f64> {
        self.field.interpolate(0, x)
    }

    pub fn write_csv<W: Write>(&self, mut out: W, meta: Option<&Meta>) -> Result<()> {
        if let Some(m) = meta {
            writeln!(out, "{}", m.line())?;
        }
        self.field.write_csv(0, "p_fail", out)
    }
}

/// Solves the backward risk equation under `policy` with terminal data 0
/// inside and 1 on the boundary, and returns the field at `t0`.
pub fn solve_risk_pde(spec: &ProblemSpec, policy: &dyn Policy, grid: &Grid2D, params: &FdmParams) -> Result<RiskField> {
    if spec.state_dim() != 2 {
        return Err(Error::invalid("state_dim", "grid solvers need a 2-dimensional state"));
    }
    let coeffs = |x: &[f64], t: f64| -> Result<Coeffs> {
        let u = policy.control(x, t)?;
        Ok(fdm::model_coeffs(spec, x, t, Some(&u)))
    };
    let zero = |_x: &[f64], _t: f64| 0.0;
    let one = |_x: &[f64], _t: f64| 1.0;
    let problem = BackwardProblem {
        grid,
        horizon: spec.safe().horizon(),
        coeffs: &coeffs,
        terminal: &zero,
        boundary: &one,
        source: None,
        log_scale: 0.0,
    };
    let (raw, _) = fdm::solve_backward(&problem, &[], params)?;
    let s = raw.initial();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for n in grid.interior_nodes() {
        lo = lo.min(s[n]);
        hi = hi.max(s[n]);
    }
    let clip = (-lo).max(hi - 1.0).max(0.0);
    if clip > 1e-2 {
        log::warn!("risk field left [0, 1] by {clip:.3e} before clipping");
    }
    let field = raw.map(0.0, |_, v| v.clamp(0.0, 1.0));
    Ok(RiskField {
        field,
        clip_magnitude: clip,
        raw_min: lo,
        raw_max: hi,
    })
}
