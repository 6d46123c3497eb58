//! Euler–Maruyama simulation with exit-time detection and path rewards.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::model::{ControlAffineModel, ProblemSpec};
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

/// Feedback law `u(x, t)`.
pub trait Policy: Send + Sync {
    fn control(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
}

impl<F> Policy for F
where
    F: Fn(&[f64], f64) -> Result<Vec<f64>> + Send + Sync,
{
    fn control(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self(x, t)
    }
}

/// `u ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroPolicy(pub usize);

impl Policy for ZeroPolicy {
    fn control(&self, _x: &[f64], _t: f64) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.0])
    }
}

/// One sample path, stopped at the first exit from the safe set or at `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start_time: f64,
    /// Grid times; empty unless the path was recorded.
    pub times: Vec<f64>,
    /// States at `times`; empty unless the path was recorded.
    pub states: Vec<Vec<f64>>,
    /// `x(t_f)`, projected onto the boundary on an unsafe exit.
    pub final_state: Vec<f64>,
    pub exit_time: f64,
    pub exited_via_boundary: bool,
    /// `∫ V dt`, left-endpoint rule.
    pub running_cost_integral: f64,
    /// Brownian increment of the first step.
    pub noise_first_step: Vec<f64>,
    /// Length of the first step.
    pub first_step: f64,
    pub steps: usize,
}

/// Rollout settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub dt: f64,
    pub record_path: bool,
    /// Negate the first noise increment.
    pub flip_first: bool,
}

impl RolloutOptions {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            record_path: false,
            flip_first: false,
        }
    }

    pub fn recorded(dt: f64) -> Self {
        Self {
            dt,
            record_path: true,
            flip_first: false,
        }
    }
}

/// `x + f dt + G u dt + Σ dw` (control term skipped when `u` is `None`).
pub fn step_euler_maruyama(
    model: &dyn ControlAffineModel,
    x: &[f64],
    t: f64,
    u: Option<&[f64]>,
    dt: f64,
    dw: &[f64],
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    let mut f = vec![0.0; x.len()];
    em_step_into(model, x, t, u, dt, dw, &mut f, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { time: t + dt });
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn em_step_into(
    model: &dyn ControlAffineModel,
    x: &[f64],
    t: f64,
    u: Option<&[f64]>,
    dt: f64,
    dw: &[f64],
    f: &mut [f64],
    out: &mut [f64],
) {
    model.drift(x, t, f);
    for ((o, xi), fi) in out.iter_mut().zip(x).zip(f.iter()) {
        *o = xi + fi * dt;
    }
    if let Some(u) = u {
        model.add_input(x, t, u, dt, out);
    }
    model.add_noise(x, t, dw, out);
    model.project_state(out);
}

/// Simulates from `start` until the first grid time at which the state has
/// left the safe set, or until `T`.
pub fn rollout(
    spec: &ProblemSpec,
    policy: Option<&dyn Policy>,
    start: (&[f64], f64),
    opts: RolloutOptions,
    rng: &mut StreamRng,
) -> Result<Trajectory> {
    let model = spec.model();
    let safe = spec.safe();
    let cost = spec.cost();
    let n = model.state_dim();
    let k = model.noise_dim();
    let (x0, t_start) = start;
    let t_end = safe.t_final();
    let dt = opts.dt;
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    if x0.len() != n {
        return Err(Error::invalid("start", "state dimension mismatch"));
    }

    let span = t_end - t_start;
    let n_steps = if span <= 0.0 { 0 } else { ((span / dt) - 1e-9).ceil().max(1.0) as usize };

    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut dw = vec![0.0; k];
    let mut noise_first = vec![0.0; k];
    let mut first_step = 0.0;
    let mut integral = 0.0;
    let mut times = Vec::new();
    let mut states = Vec::new();
    if opts.record_path {
        times.push(t_start);
        states.push(x.clone());
    }
    let start_outside = !safe.contains(&x);
    let mut t = t_start;

    for step in 0..n_steps {
        let t_next = if step + 1 == n_steps { t_end } else { t_start + (step + 1) as f64 * dt };
        let h = t_next - t;
        integral += cost.running(&x, t) * h;
        let sq = h.sqrt();
        for w in dw.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = z * sq;
        }
        if step == 0 {
            if opts.flip_first {
                dw.iter_mut().for_each(|w| *w = -*w);
            }
            noise_first.copy_from_slice(&dw);
            first_step = h;
        }
        let u = match policy {
            Some(p) => Some(p.control(&x, t).map_err(|e| match e {
                Error::PolicyFailure(m) => Error::PolicyFailure(m),
                other => Error::PolicyFailure(other.to_string()),
            })?),
            None => None,
        };
        em_step_into(model, &x, t, u.as_deref(), h, &dw, &mut f, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { time: t_next });
        }
        if start_outside || !safe.contains(&next) {
            let exit = safe.boundary_project(&x, &next);
            if opts.record_path {
                times.push(t_next);
                states.push(exit.clone());
            }
            return Ok(Trajectory {
                start_time: t_start,
                times,
                states,
                final_state: exit,
                exit_time: t_next,
                exited_via_boundary: true,
                running_cost_integral: integral,
                noise_first_step: noise_first,
                first_step,
                steps: step + 1,
            });
        }
        std::mem::swap(&mut x, &mut next);
        t = t_next;
        if opts.record_path {
            times.push(t);
            states.push(x.clone());
        }
    }

    Ok(Trajectory {
        start_time: t_start,
        times,
        states,
        final_state: x,
        exit_time: t_end.max(t_start),
        exited_via_boundary: false,
        running_cost_integral: integral,
        noise_first_step: noise_first,
        first_step,
        steps: n_steps,
    })
}

/// Batch of uncontrolled paths with their path rewards.
///
/// Rewards are stored shifted: `path_rewards[i] = r⁽ⁱ⁾ · exp(-log_shift)` with
/// `log_shift` the largest log-reward, so every stored value lies in `(0, 1]`.
/// All normalized quantities are unaffected by the shift.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub trajectories: Vec<Trajectory>,
    /// `log r⁽ⁱ⁾ = −φ(x(t_f); η)/λ − ∫V dt/λ`
    pub log_rewards: Vec<f64>,
    pub log_shift: f64,
    pub path_rewards: Vec<f64>,
    /// `Σ path_rewards`, i.e. `r · exp(-log_shift)`.
    pub reward_sum: f64,
    pub eta: f64,
    pub seed: u64,
    pub step_size: f64,
    pub start: (Vec<f64>, f64),
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Unshifted reward `r⁽ⁱ⁾` (may underflow for extreme costs).
    pub fn reward(&self, i: usize) -> f64 {
        self.log_rewards[i].exp()
    }

    /// `log r` with `r = Σ r⁽ⁱ⁾`.
    pub fn log_reward_sum(&self) -> f64 {
        self.reward_sum.ln() + self.log_shift
    }

    /// Normalized weights `r⁽ⁱ⁾ / r`.
    pub fn weights(&self) -> Vec<f64> {
        self.path_rewards.iter().map(|r| r / self.reward_sum).collect()
    }

    /// `r² / Σ (r⁽ⁱ⁾)²`
    pub fn effective_sample_size(&self) -> f64 {
        let sq: f64 = self.path_rewards.iter().map(|r| r * r).sum();
        if sq == 0.0 {
            return 0.0;
        }
        self.reward_sum * self.reward_sum / sq
    }

    pub fn boundary_fraction(&self) -> f64 {
        let hits = self.trajectories.iter().filter(|t| t.exited_via_boundary).count();
        hits as f64 / self.len().max(1) as f64
    }
}

/// Ensemble settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleOptions {
    pub samples: usize,
    pub dt: f64,
    pub seed: u64,
    pub record_paths: bool,
    /// Pair rollouts `2j` and `2j + 1` on one stream with opposite first increments.
    pub antithetic: bool,
}

/// `N` uncontrolled rollouts from `(x₀, t₀)`.
pub fn sample_uncontrolled_ensemble(spec: &ProblemSpec, eta: f64, n: usize, dt: f64, seed: u64) -> Result<Ensemble> {
    sample_ensemble_from(
        spec,
        eta,
        (spec.initial_state(), spec.safe().t0()),
        EnsembleOptions {
            samples: n,
            dt,
            seed,
            record_paths: false,
            antithetic: false,
        },
    )
}

/// `N` uncontrolled rollouts from an arbitrary start.
pub fn sample_ensemble_from(
    spec: &ProblemSpec,
    eta: f64,
    start: (&[f64], f64),
    opts: EnsembleOptions,
) -> Result<Ensemble> {
    if opts.samples == 0 {
        return Err(Error::invalid("samples", "need at least one trajectory"));
    }
    if !(eta >= 0.0) {
        return Err(Error::invalid("eta", "must be nonnegative"));
    }
    let ropts = RolloutOptions {
        dt: opts.dt,
        record_path: opts.record_paths,
        flip_first: false,
    };
    let lambda = spec.lambda();
    let trajectories: Vec<Trajectory> = (0..opts.samples)
        .into_par_iter()
        .map(|i| {
            let (index, ropts) = if opts.antithetic {
                let flip = i % 2 == 1;
                ((i / 2) as u64, RolloutOptions { flip_first: flip, ..ropts })
            } else {
                (i as u64, ropts)
            };
            let mut rng = rng::stream(opts.seed, index);
            rollout(spec, None, start, ropts, &mut rng).map_err(|e| Error::Rollout {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let log_rewards: Vec<f64> = trajectories
        .iter()
        .map(|tr| -(spec.phi(&tr.final_state, eta, tr.exited_via_boundary) + tr.running_cost_integral) / lambda)
        .collect();
    let log_shift = log_rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !log_shift.is_finite() {
        return Err(Error::DegenerateEstimate("non-finite path cost".into()));
    }
    let path_rewards: Vec<f64> = log_rewards.iter().map(|l| (l - log_shift).exp()).collect();
    let reward_sum = path_rewards.iter().sum();
    Ok(Ensemble {
        trajectories,
        log_rewards,
        log_shift,
        path_rewards,
        reward_sum,
        eta,
        seed: opts.seed,
        step_size: opts.dt,
        start: (start.0.to_vec(), start.1),
    })
}

/// Controlled rollouts `i = 0..n` under `policy`, one stream per rollout.
pub fn sample_controlled(
    spec: &ProblemSpec,
    policy: &dyn Policy,
    n: usize,
    opts: RolloutOptions,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let start = (spec.initial_state(), spec.safe().t0());
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, i as u64);
            rollout(spec, Some(policy), start, opts, &mut rng).map_err(|e| Error::Rollout {
                index: i,
                source: Box::new(e),
            })
        })
        .collect()
}
