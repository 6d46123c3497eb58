//! Problem definition: dynamics, costs, safe region and risk tolerance.

mod cost;
mod dynamics;
mod safe_set;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

pub use cost::{ControlWeight, CostSpec, RunningCostFn, TerminalCostFn, WeightFn};
pub use dynamics::{AffineModel, ControlAffineModel, Drift};
pub use safe_set::{Ball, Outer, SafeSet};

use crate::{Error, Result};

/// Outcome of the noise/control-cost proportionality check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaCheck {
    pub lambda: f64,
    /// Largest `‖ΣΣᵀ − λGR⁻¹Gᵀ‖_F / ‖ΣΣᵀ‖_F` over the probe points.
    pub max_residual: f64,
    pub tolerance: f64,
}

/// Default relative tolerance: tight when every matrix is constant.
pub fn default_lambda_tolerance(model: &dyn ControlAffineModel, cost: &CostSpec) -> f64 {
    if model.has_constant_maps() && cost.control_weight().is_constant() {
        1e-9
    } else {
        1e-6
    }
}

/// Finds `λ > 0` with `ΣΣᵀ = λ G R⁻¹ Gᵀ` at every probe point.
///
/// `λ` is the least-squares ratio at the first probe; the remaining probes
/// only verify it.
pub fn check_lambda(
    model: &dyn ControlAffineModel,
    cost: &CostSpec,
    probes: &[(Vec<f64>, f64)],
    tolerance: Option<f64>,
) -> Result<LambdaCheck> {
    if probes.is_empty() {
        return Err(Error::invalid("probe_points", "need at least one probe point"));
    }
    let tol = tolerance.unwrap_or_else(|| default_lambda_tolerance(model, cost));
    let mut lambda = None;
    let mut max_residual = 0.0_f64;
    for (idx, (x, t)) in probes.iter().enumerate() {
        let (s, m) = proportionality_pair(model, cost, x, *t)?;
        let m_norm2 = m.norm_squared();
        let s_norm = s.norm();
        if m_norm2.sqrt() <= 1e-14 * s_norm.max(1.0) {
            return Err(Error::DegenerateInput(format!(
                "G R⁻¹ Gᵀ vanishes at probe {idx}"
            )));
        }
        let lam = *lambda.get_or_insert_with(|| s.dot(&m) / m_norm2);
        if !(lam > 0.0) || !lam.is_finite() {
            return Err(Error::AssumptionViolated {
                probe: idx,
                residual: f64::INFINITY,
                tolerance: tol,
            });
        }
        let residual = (&s - &m * lam).norm() / s_norm.max(f64::MIN_POSITIVE);
        max_residual = max_residual.max(residual);
        if residual > tol {
            return Err(Error::AssumptionViolated {
                probe: idx,
                residual,
                tolerance: tol,
            });
        }
    }
    Ok(LambdaCheck {
        lambda: lambda.expect("probes nonempty"),
        max_residual,
        tolerance: tol,
    })
}

/// `(ΣΣᵀ, G R⁻¹ Gᵀ)` at one point.
fn proportionality_pair(
    model: &dyn ControlAffineModel,
    cost: &CostSpec,
    x: &[f64],
    t: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let sigma = model.noise_map(x, t);
    let g = model.input_map(x, t);
    let r_inv = spd_inverse(&cost.r_at(x, t))?;
    Ok((&sigma * sigma.transpose(), &g * r_inv * g.transpose()))
}

pub(crate) fn spd_inverse(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !r.is_square() {
        return Err(Error::DegenerateInput("R is not square".into()));
    }
    let asym = (r - r.transpose()).norm();
    if asym > 1e-12 * r.norm().max(1.0) {
        return Err(Error::DegenerateInput("R is not symmetric".into()));
    }
    r.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::DegenerateInput("R is not positive definite".into()))
}

/// Terminal cost with the chance constraint absorbed:
/// `ψ(x) − ηΔ` inside, `η − ηΔ` on the unsafe boundary.
pub fn phi(x: &[f64], eta: f64, spec: &ProblemSpec, on_boundary: bool) -> f64 {
    let delta = spec.risk_tolerance();
    if on_boundary {
        eta * (1.0 - delta)
    } else {
        spec.cost().terminal(x) - eta * delta
    }
}

/// A complete chance-constrained problem.
#[derive(Clone)]
pub struct ProblemSpec {
    name: String,
    model: Arc<dyn ControlAffineModel>,
    cost: CostSpec,
    safe: SafeSet,
    risk_tolerance: f64,
    initial_state: Vec<f64>,
    lambda_check: LambdaCheck,
}

impl ProblemSpec {
    /// Validates the pieces and runs the λ check on `x₀` and the corners of
    /// the safe region's bounding box at both ends of the horizon.
    pub fn new(
        name: impl Into<String>,
        model: Arc<dyn ControlAffineModel>,
        mut cost: CostSpec,
        safe: SafeSet,
        risk_tolerance: f64,
        initial_state: Vec<f64>,
    ) -> Result<Self> {
        if !(risk_tolerance > 0.0 && risk_tolerance < 1.0) {
            return Err(Error::invalid("risk_tolerance", "must lie strictly inside (0, 1)"));
        }
        let n = model.state_dim();
        if initial_state.len() != n {
            return Err(Error::invalid(
                "initial_state",
                format!("expected {n} components, got {}", initial_state.len()),
            ));
        }
        if safe.axes() > n {
            return Err(Error::invalid("safe_set", "geometry has more axes than the state"));
        }
        let (lo, hi) = safe.bounding_box();
        if initial_state[..safe.axes()]
            .iter()
            .zip(lo.iter().zip(&hi))
            .any(|(x, (l, h))| x < l || x > h)
        {
            return Err(Error::invalid("initial_state", "outside the safe region"));
        }
        let probes = lambda_probes(&safe, &initial_state);
        let check = check_lambda(model.as_ref(), &cost, &probes, None)?;
        cost.set_lambda(check.lambda);
        Ok(Self {
            name: name.into(),
            model,
            cost,
            safe,
            risk_tolerance,
            initial_state,
            lambda_check: check,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn model(&self) -> &dyn ControlAffineModel {
        self.model.as_ref()
    }

    pub fn model_arc(&self) -> Arc<dyn ControlAffineModel> {
        Arc::clone(&self.model)
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn safe(&self) -> &SafeSet {
        &self.safe
    }

    pub fn risk_tolerance(&self) -> f64 {
        self.risk_tolerance
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    pub fn lambda(&self) -> f64 {
        self.lambda_check.lambda
    }

    pub fn lambda_check(&self) -> LambdaCheck {
        self.lambda_check
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn with_risk_tolerance(&self, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid("risk_tolerance", "must lie strictly inside (0, 1)"));
        }
        let mut s = self.clone();
        s.risk_tolerance = delta;
        Ok(s)
    }

    pub fn with_initial_state(&self, x0: Vec<f64>) -> Result<Self> {
        if x0.len() != self.state_dim() {
            return Err(Error::invalid("initial_state", "dimension mismatch"));
        }
        let mut s = self.clone();
        s.initial_state = x0;
        Ok(s)
    }

    pub fn with_safe_set(&self, safe: SafeSet) -> Result<Self> {
        if safe.axes() > self.state_dim() {
            return Err(Error::invalid("safe_set", "geometry has more axes than the state"));
        }
        let mut s = self.clone();
        s.safe = safe;
        Ok(s)
    }

    /// Absorbed terminal cost; see [`phi`].
    pub fn phi(&self, x: &[f64], eta: f64, on_boundary: bool) -> f64 {
        phi(x, eta, self, on_boundary)
    }
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("dims", &(self.model.state_dim(), self.model.control_dim(), self.model.noise_dim()))
            .field("safe", &self.safe)
            .field("risk_tolerance", &self.risk_tolerance)
            .field("initial_state", &self.initial_state)
            .field("lambda", &self.lambda_check.lambda)
            .finish()
    }
}

fn lambda_probes(safe: &SafeSet, x0: &[f64]) -> Vec<(Vec<f64>, f64)> {
    let (lo, hi) = safe.bounding_box();
    let (t0, t1) = safe.horizon();
    let d = safe.axes();
    let mut pts = vec![x0.to_vec()];
    for mask in 0..(1usize << d.min(3)) {
        let mut p = x0.to_vec();
        for i in 0..d.min(3) {
            p[i] = if mask >> i & 1 == 1 { hi[i] } else { lo[i] };
        }
        pts.push(p);
    }
    pts.into_iter().flat_map(|p| [(p.clone(), t0), (p, t1)]).collect()
}

/// The 2-D velocity-input navigation problem with the default geometry.
pub fn builtin_velocity_model() -> ProblemSpec {
    crate::config::ProblemConfig::preset("velocity")
        .and_then(|c| c.build())
        .expect("velocity preset is valid")
        .spec
}

/// The 5-state kinematic car problem with the default geometry.
pub fn builtin_car_model() -> ProblemSpec {
    crate::config::ProblemConfig::preset("car")
        .and_then(|c| c.build())
        .expect("car preset is valid")
        .spec
}

#[cfg(test)]
mod tests {
    use super::*;

    fn const_model(sigma: DMatrix<f64>, g: DMatrix<f64>) -> AffineModel {
        AffineModel::new(Drift::Zero, g, sigma).unwrap()
    }

    #[test]
    fn identity_case_gives_unit_lambda() {
        let m = const_model(DMatrix::identity(2, 2), DMatrix::identity(2, 2));
        let c = CostSpec::constant(0.0, DMatrix::identity(2, 2));
        let chk = check_lambda(&m, &c, &[(vec![0.0, 0.0], 0.0)], None).unwrap();
        assert_eq!(chk.lambda, 1.0);
        assert_eq!(chk.tolerance, 1e-9);
    }

    #[test]
    fn velocity_lambda() {
        let m = const_model(DMatrix::identity(2, 2) * 0.1, DMatrix::identity(2, 2));
        let c = CostSpec::constant(0.0, DMatrix::identity(2, 2));
        let chk = check_lambda(&m, &c, &[(vec![0.1, 0.1], 0.0), (vec![0.3, -0.2], 1.0)], None).unwrap();
        assert!((chk.lambda - 0.01).abs() < 1e-15);
        assert!(chk.max_residual <= 1e-9);
    }

    #[test]
    fn perturbed_noise_fails() {
        let mut sigma = DMatrix::identity(2, 2) * 0.1;
        sigma[(1, 1)] *= 1.05;
        let m = const_model(sigma, DMatrix::identity(2, 2));
        let c = CostSpec::constant(0.0, DMatrix::identity(2, 2));
        let err = check_lambda(&m, &c, &[(vec![0.0, 0.0], 0.0)], None).unwrap_err();
        assert!(matches!(err, Error::AssumptionViolated { .. }));
    }

    #[test]
    fn zero_input_map_is_degenerate() {
        let m = const_model(DMatrix::identity(2, 2), DMatrix::zeros(2, 2));
        let c = CostSpec::constant(0.0, DMatrix::identity(2, 2));
        let err = check_lambda(&m, &c, &[(vec![0.0, 0.0], 0.0)], None).unwrap_err();
        assert!(matches!(err, Error::DegenerateInput(_)));
    }

    #[test]
    fn non_spd_weight_is_rejected() {
        let m = const_model(DMatrix::identity(2, 2), DMatrix::identity(2, 2));
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let c = CostSpec::constant(0.0, r);
        assert!(check_lambda(&m, &c, &[(vec![0.0, 0.0], 0.0)], None).is_err());
    }

    #[test]
    fn empty_probe_list_is_rejected() {
        let m = const_model(DMatrix::identity(1, 1), DMatrix::identity(1, 1));
        let c = CostSpec::constant(0.0, DMatrix::identity(1, 1));
        assert!(check_lambda(&m, &c, &[], None).is_err());
    }

    #[test]
    fn phi_pieces() {
        let spec = builtin_velocity_model();
        // ψ = px² + py²: 0.3² + 0.3² = 0.18
        assert!((phi(&[-0.3, 0.3], 0.0, &spec, false) - 0.18).abs() < 1e-15);
        assert!((phi(&[0.5, 0.0], 0.13, &spec, true) - 0.117).abs() < 1e-15);
        let x = [0.5_f64.sqrt(), 0.0];
        assert!((phi(&x, 0.2, &spec, false) - 0.48).abs() < 1e-12);
    }

    #[test]
    fn phi_is_affine_in_eta() {
        let spec = builtin_velocity_model();
        let delta = spec.risk_tolerance();
        for &b in &[false, true] {
            for &eta in &[0.0, 0.05, 0.13, 1.7] {
                let x = [0.1, -0.2];
                let lhs = phi(&x, eta, &spec, b);
                let rhs = phi(&x, 0.0, &spec, b) + eta * (if b { 1.0 } else { 0.0 } - delta);
                assert!((lhs - rhs).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn risk_tolerance_bounds() {
        let spec = builtin_velocity_model();
        assert!(spec.with_risk_tolerance(0.0).is_err());
        assert!(spec.with_risk_tolerance(1.0).is_err());
        assert!(spec.with_risk_tolerance(0.5).is_ok());
    }
}
