//! Path-integral estimates of ξ, J and the optimal control from uncontrolled
//! ensembles.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::io::{fmt, Meta};
use crate::model::{spd_inverse, ProblemSpec};
use crate::rng;
use crate::sim::{sample_ensemble_from, Ensemble, EnsembleOptions, Policy};
use crate::{Error, Result};

pub use crate::fdm::policy_from_value_grid;

/// Monte Carlo estimate of `ξ(x, t; η)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PIEstimate {
    /// Sample mean of the path rewards; may underflow, see `log_value`.
    pub value: f64,
    pub log_value: f64,
    pub std_error: f64,
    /// `std_error / value`, kept separately so it survives underflow.
    pub relative_std_error: f64,
    pub effective_sample_size: f64,
    pub n_used: usize,
}

impl PIEstimate {
    pub fn from_ensemble(ens: &Ensemble) -> Result<Self> {
        let n = ens.len();
        if n == 0 || !(ens.reward_sum > 0.0) {
            return Err(Error::DegenerateEstimate("all path rewards vanish".into()));
        }
        let mean = ens.reward_sum / n as f64;
        let var = if n > 1 {
            ens.path_rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let rel = var.sqrt() / (n as f64).sqrt() / mean;
        let log_value = mean.ln() + ens.log_shift;
        let value = log_value.exp();
        Ok(Self {
            value,
            log_value,
            std_error: rel * value,
            relative_std_error: rel,
            effective_sample_size: ens.effective_sample_size(),
            n_used: n,
        })
    }

    /// Standard error of `J = −λ log ξ` by the delta method.
    pub fn value_std_error(&self, lambda: f64) -> f64 {
        lambda * self.relative_std_error
    }
}

fn check_start(spec: &ProblemSpec, x: &[f64], t: f64) -> Result<()> {
    if x.len() != spec.state_dim() {
        return Err(Error::invalid("state", "dimension mismatch"));
    }
    let (t0, t_end) = spec.safe().horizon();
    if !(t >= t0 && t < t_end) {
        return Err(Error::invalid("time", format!("{t} is outside [{t0}, {t_end})")));
    }
    Ok(())
}

fn ensemble_at(
    spec: &ProblemSpec,
    eta: f64,
    start: (&[f64], f64),
    n: usize,
    dt: f64,
    seed: u64,
    antithetic: bool,
) -> Result<Ensemble> {
    check_start(spec, start.0, start.1)?;
    sample_ensemble_from(
        spec,
        eta,
        start,
        EnsembleOptions {
            samples: n,
            dt,
            seed,
            record_paths: false,
            antithetic,
        },
    )
}

/// `ξ(x, t; η)` as the mean of `exp(−φ/λ − ∫V/λ)` over `n` uncontrolled rollouts.
pub fn estimate_xi(spec: &ProblemSpec, eta: f64, start: (&[f64], f64), n: usize, dt: f64, seed: u64) -> Result<PIEstimate> {
    PIEstimate::from_ensemble(&ensemble_at(spec, eta, start, n, dt, seed, false)?)
}

/// `J = −λ log ξ`.
pub fn value_j(xi: &PIEstimate, lambda: f64) -> Result<f64> {
    if xi.value < 0.0 || !xi.log_value.is_finite() {
        return Err(Error::DegenerateEstimate(format!("ξ = {} is not positive", xi.value)));
    }
    Ok(-lambda * xi.log_value)
}

/// `𝒢 = R⁻¹(Σ†G)ᵀ (Σ†G R⁻¹ (Σ†G)ᵀ)⁻¹` at `(x, t)`.
pub fn control_gain(spec: &ProblemSpec, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
    let model = spec.model();
    let sigma = model.noise_map(x, t);
    let g = model.input_map(x, t);
    let rinv = spd_inverse(&spec.cost().r_at(x, t))?;
    let k = sigma.ncols();
    let svd = sigma.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-12 * sigma.nrows().max(k) as f64;
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    if rank < k || smax == 0.0 {
        return Err(Error::SingularGram);
    }
    let pinv = svd.pseudo_inverse(tol).map_err(|_| Error::SingularGram)?;
    let b = pinv * g;
    let gram = &b * &rinv * b.transpose();
    let scale = gram.norm();
    let inv = gram.clone().cholesky().map(|c| c.inverse()).ok_or(Error::SingularGram)?;
    // reject numerically singular Gram matrices that Cholesky still accepts
    if !(scale > 0.0) || inv.norm() * scale > 1e12 {
        return Err(Error::SingularGram);
    }
    Ok(rinv * b.transpose() * inv)
}

/// Path-integral control estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlEstimate {
    pub u: Vec<f64>,
    /// Per-component self-normalized importance-sampling standard error.
    pub std_error: Vec<f64>,
    pub effective_sample_size: f64,
}

/// `u* = 𝒢 Σ wᵢ Δw₁⁽ⁱ⁾ / Δt` from an ensemble launched at the point of interest.
pub fn pi_control_from_ensemble(spec: &ProblemSpec, ens: &Ensemble) -> Result<ControlEstimate> {
    if !(ens.reward_sum > 0.0) {
        return Err(Error::DegenerateEstimate("all path rewards vanish".into()));
    }
    let (x, t) = (&ens.start.0, ens.start.1);
    let gain = control_gain(spec, x, t)?;
    let m = gain.nrows();
    let samples: Vec<DVector<f64>> = ens
        .trajectories
        .iter()
        .map(|tr| &gain * DVector::from_column_slice(&tr.noise_first_step) / tr.first_step)
        .collect();
    let r = ens.reward_sum;
    let mut u = DVector::zeros(m);
    for (y, ri) in samples.iter().zip(&ens.path_rewards) {
        u += y * (*ri / r);
    }
    let mut var = vec![0.0; m];
    for (y, ri) in samples.iter().zip(&ens.path_rewards) {
        let w = ri / r;
        for c in 0..m {
            var[c] += w * w * (y[c] - u[c]).powi(2);
        }
    }
    Ok(ControlEstimate {
        u: u.iter().copied().collect(),
        std_error: var.iter().map(|v| v.sqrt()).collect(),
        effective_sample_size: ens.effective_sample_size(),
    })
}

/// [`pi_control_from_ensemble`] on a fresh ensemble whose rollouts come in
/// pairs with opposite first increments.
pub fn pi_control(
    spec: &ProblemSpec,
    eta: f64,
    state: (&[f64], f64),
    n: usize,
    dt: f64,
    seed: u64,
) -> Result<ControlEstimate> {
    let ens = ensemble_at(spec, eta, state, n, dt, seed, true)?;
    pi_control_from_ensemble(spec, &ens)
}

/// Feedback law that runs [`pi_control`] at every query. The seed of each
/// query is derived from `(seed, x, t)`, so the policy is deterministic.
#[derive(Debug, Clone)]
pub struct PathIntegralPolicy {
    pub spec: ProblemSpec,
    pub eta: f64,
    pub samples: usize,
    pub dt: f64,
    pub seed: u64,
}

impl Policy for PathIntegralPolicy {
    fn control(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let seed = rng::state_seed(self.seed, x, t);
        pi_control(&self.spec, self.eta, (x, t), self.samples, self.dt, seed).map(|c| c.u)
    }
}

/// Value and control at one probe state, both from a single ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub x: Vec<f64>,
    pub t: f64,
    pub xi: PIEstimate,
    pub j: f64,
    pub j_std_error: f64,
    pub control: ControlEstimate,
}

pub fn evaluate_probe(
    spec: &ProblemSpec,
    eta: f64,
    state: (&[f64], f64),
    n: usize,
    dt: f64,
    seed: u64,
) -> Result<ProbeResult> {
    let ens = ensemble_at(spec, eta, state, n, dt, seed, false)?;
    let xi = PIEstimate::from_ensemble(&ens)?;
    let lambda = spec.lambda();
    Ok(ProbeResult {
        x: state.0.to_vec(),
        t: state.1,
        j: value_j(&xi, lambda)?,
        j_std_error: xi.value_std_error(lambda),
        control: pi_control_from_ensemble(spec, &ens)?,
        xi,
    })
}

/// Evaluates every probe with its own sub-seed.
pub fn evaluate_probes(
    spec: &ProblemSpec,
    eta: f64,
    probes: &[Vec<f64>],
    n: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<ProbeResult>> {
    let t0 = spec.safe().t0();
    probes
        .iter()
        .enumerate()
        .map(|(i, x)| evaluate_probe(spec, eta, (x, t0), n, dt, rng::sub_seed(seed, i as u64)))
        .collect()
}

/// `x…, J, J_se, u…, u_se…, ess` rows.
pub fn write_probe_csv<W: Write>(out: W, meta: Option<&Meta>, rows: &[ProbeResult]) -> Result<()> {
    let n = rows.first().map_or(0, |r| r.x.len());
    let m = rows.first().map_or(0, |r| r.control.u.len());
    let mut header: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    header.extend(["J".to_string(), "J_se".to_string()]);
    header.extend((0..m).map(|i| format!("u{i}")));
    header.extend((0..m).map(|i| format!("u{i}_se")));
    header.push("ess".into());
    let body = rows.iter().map(|r| {
        let mut rec: Vec<String> = r.x.iter().map(|v| fmt(*v)).collect();
        rec.push(fmt(r.j));
        rec.push(fmt(r.j_std_error));
        rec.extend(r.control.u.iter().map(|v| fmt(*v)));
        rec.extend(r.control.std_error.iter().map(|v| fmt(*v)));
        rec.push(fmt(r.control.effective_sample_size));
        rec
    });
    crate::io::write_table(out, meta, &header, body)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::{builtin_car_model, builtin_velocity_model, AffineModel, Ball, CostSpec, Drift, Outer, SafeSet};

    fn constant_spec(c: f64) -> ProblemSpec {
        let model = AffineModel::new(Drift::Zero, DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 0.1).unwrap();
        let safe = SafeSet::new(
            Outer::Ball(Ball {
                center: vec![0.0, 0.0],
                radius: 0.5,
            }),
            vec![],
            (0.0, 1.0),
        )
        .unwrap();
        ProblemSpec::new("const", Arc::new(model), CostSpec::constant(c, DMatrix::identity(2, 2)), safe, 0.1, vec![0.0, 0.0])
            .unwrap()
    }

    #[test]
    fn constant_functional_is_exact() {
        let c = 0.03;
        let spec = constant_spec(c);
        // with η = 0 the boundary value is 0 as well, so use c = 0 there
        let spec0 = constant_spec(0.0);
        let xi = estimate_xi(&spec0, 0.0, (&[0.1, 0.1], 0.0), 500, 0.01, 1).unwrap();
        assert_eq!(xi.value, 1.0);
        assert_eq!(xi.std_error, 0.0);
        assert_eq!(value_j(&xi, spec0.lambda()).unwrap(), 0.0);
        // interior-only paths (short horizon from the center) see exp(−c/λ)
        let xi = estimate_xi(&spec, 0.0, (&[0.0, 0.0], 0.95), 200, 0.01, 2).unwrap();
        assert!((xi.value - (-c / spec.lambda()).exp()).abs() < 1e-12);
        assert!((value_j(&xi, spec.lambda()).unwrap() - c).abs() < 1e-12);
    }

    #[test]
    fn value_j_rejects_non_positive() {
        let bad = PIEstimate {
            value: 0.0,
            log_value: f64::NEG_INFINITY,
            std_error: 0.0,
            relative_std_error: 0.0,
            effective_sample_size: 1.0,
            n_used: 1,
        };
        assert!(matches!(value_j(&bad, 0.01), Err(Error::DegenerateEstimate(_))));
    }

    #[test]
    fn gain_matches_hand_computation() {
        let spec = builtin_velocity_model();
        let g = control_gain(&spec, &[0.0, 0.0], 0.0).unwrap();
        assert!((g - DMatrix::identity(2, 2) * 0.1).norm() < 1e-12);
        let car = builtin_car_model();
        let g = control_gain(&car, car.initial_state(), 0.0).unwrap();
        assert!((g - DMatrix::identity(2, 2) * 0.07).norm() < 1e-12);
    }

    #[test]
    fn uniform_weights_give_small_control() {
        let spec = constant_spec(0.0);
        let (n, dt) = (4000, 0.01);
        let est = pi_control(&spec, 0.0, (&[0.0, 0.0], 0.0), n, dt, 9).unwrap();
        let bound = 3.0 * 0.1 * (dt * 2.0 / n as f64).sqrt() / dt;
        let norm = (est.u[0].powi(2) + est.u[1].powi(2)).sqrt();
        assert!(norm <= bound, "{norm} > {bound}");
        assert!((est.effective_sample_size - n as f64).abs() < 1e-6);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = builtin_velocity_model();
        let a = pi_control(&spec, 0.1, (&[-0.3, 0.3], 0.0), 300, 0.01, 5).unwrap();
        let b = pi_control(&spec, 0.1, (&[-0.3, 0.3], 0.0), 300, 0.01, 5).unwrap();
        assert_eq!(a, b);
        let p = PathIntegralPolicy {
            spec: spec.clone(),
            eta: 0.1,
            samples: 100,
            dt: 0.01,
            seed: 3,
        };
        assert_eq!(p.control(&[0.1, 0.1], 0.5).unwrap(), p.control(&[0.1, 0.1], 0.5).unwrap());
    }

    #[test]
    fn start_outside_horizon_is_rejected() {
        let spec = builtin_velocity_model();
        assert!(estimate_xi(&spec, 0.0, (&[0.0, 0.0], 2.0), 10, 0.01, 0).is_err());
    }

    #[test]
    fn xi_bounds_hold() {
        let spec = builtin_velocity_model();
        let eta = 0.13;
        let xi = estimate_xi(&spec, eta, (&[0.1, -0.1], 0.0), 2000, 0.01, 4).unwrap();
        let cap = eta * spec.risk_tolerance() / spec.lambda();
        assert!(xi.log_value <= cap + 1e-12);
        assert!(value_j(&xi, spec.lambda()).unwrap() >= -eta * spec.risk_tolerance() - 1e-12);
        assert!(xi.effective_sample_size >= 1.0 && xi.effective_sample_size <= 2000.0);
    }

    #[test]
    fn probe_csv_has_header() {
        let spec = builtin_velocity_model();
        let rows = evaluate_probes(&spec, 0.05, &[vec![0.0, 0.0], vec![0.1, 0.2]], 200, 0.01, 1).unwrap();
        let mut buf = Vec::new();
        write_probe_csv(&mut buf, None, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x0,x1,J,J_se,u0,u1,u0_se,u1_se,ess"));
        assert_eq!(text.lines().count(), 3);
    }
}
