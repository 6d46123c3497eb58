//! Method-of-lines finite differences for backward linear PDEs on 2-D grids.
//!
//! Every solver here integrates, in reversed time `τ = T − t`,
//!
//! ```text
//! ∂τ u = b·∇u + ½ Tr(A ∇²u) − c u + s
//! ```
//!
//! on the interior nodes of a masked grid, with Dirichlet data on the
//! staircase boundary and an embedded Runge–Kutta integrator in `τ`.

pub mod field;
pub mod grid;
pub mod ode;
pub(crate) mod stencil;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

pub use field::Field;
pub use grid::{Grid2D, NodeKind};
pub use ode::{IntegratorParams, IntegratorStats};
pub use stencil::fornberg_weights;

use crate::model::{spd_inverse, ProblemSpec};
use crate::sim::Policy;
use crate::{Error, Result};
use stencil::{apply, StencilSet};

/// Spatial order and time-integration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdmParams {
    /// Stencil order, 2 or 4.
    pub order: usize,
    pub integrator: IntegratorParams,
}

impl Default for FdmParams {
    fn default() -> Self {
        Self::new(4, 1e-3)
    }
}

impl FdmParams {
    pub fn new(order: usize, rtol: f64) -> Self {
        Self {
            order,
            integrator: IntegratorParams {
                rtol,
                atol: 1e-14,
                ..IntegratorParams::default()
            },
        }
    }
}

/// Pointwise PDE coefficients: drift `b`, diffusion `A = [a11, a12, a22]`, decay `c`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Coeffs {
    pub drift: [f64; 2],
    pub diffusion: [f64; 3],
    pub decay: f64,
}

pub type CoeffFn<'a> = dyn Fn(&[f64], f64) -> Result<Coeffs> + Sync + 'a;
pub type NodeFn<'a> = dyn Fn(&[f64], f64) -> f64 + Sync + 'a;

/// A backward problem on `grid` over `[t0, T]`.
pub struct BackwardProblem<'a> {
    pub grid: &'a Grid2D,
    pub horizon: (f64, f64),
    pub coeffs: &'a CoeffFn<'a>,
    /// `u(x, T)` on interior nodes.
    pub terminal: &'a NodeFn<'a>,
    /// `u(x, t)` on Dirichlet nodes.
    pub boundary: &'a NodeFn<'a>,
    pub source: Option<&'a NodeFn<'a>>,
    /// Passed through to the returned field.
    pub log_scale: f64,
}

/// Cell Péclet number `|b| h / a` above which advection is upwinded. Central
/// differencing of `b ∂u + ½ a ∂²u` is monotone only below 1.
const PECLET_UPWIND: f64 = 1.0;

/// Solves `problem` and returns slices at the requested times (plus `t0`),
/// sorted ascending.
pub fn solve_backward(problem: &BackwardProblem<'_>, times: &[f64], params: &FdmParams) -> Result<(Field, IntegratorStats)> {
    let grid = problem.grid;
    let (t0, t_end) = problem.horizon;
    if !(t0 < t_end) {
        return Err(Error::invalid("horizon", "t0 must precede T"));
    }
    let mut want: Vec<f64> = times.iter().copied().chain(std::iter::once(t0)).collect();
    if want.iter().any(|t| !(*t >= t0 - 1e-12 && *t <= t_end + 1e-12)) {
        return Err(Error::invalid("times", "slice time outside the horizon"));
    }
    want.sort_by(|a, b| a.total_cmp(b));
    want.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);

    let st = StencilSet::new(grid, params.order)?;
    if st.degraded > 0 {
        log::debug!("{} nodes use reduced-order closures", st.degraded);
    }
    let nx = grid.nx();
    let h = grid.spacing();
    let points: Vec<[f64; 2]> = (0..grid.len()).map(|n| grid.point_of(n)).collect();
    let dirichlet: Vec<usize> = grid.dirichlet_nodes().collect();
    let interior = &st.interior;

    check_peclet(problem, interior, &points, h)?;

    let fill = |u: &mut [f64], y: &[f64], t: f64| {
        for (k, &n) in interior.iter().enumerate() {
            u[n] = y[k];
        }
        for &n in &dirichlet {
            u[n] = (problem.boundary)(&points[n], t);
        }
    };

    let rhs = |tau: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let t = t_end - tau;
        let mut u = vec![0.0; grid.len()];
        fill(&mut u, y, t);
        dy.par_iter_mut().with_min_len(nx).enumerate().try_for_each(|(k, out)| {
            let n = interior[k];
            let p = &points[n];
            let c = (problem.coeffs)(p, t)?;
            let s = &st.stencils[k];
            let ux = first_derivative(&s[0], &u, n, 1, c.drift[0], c.diffusion[0], h[0]);
            let uxx = apply(&s[1], &u, n, 1);
            let uy = first_derivative(&s[2], &u, n, nx, c.drift[1], c.diffusion[2], h[1]);
            let uyy = apply(&s[3], &u, n, nx);
            let mut v = c.drift[0] * ux + c.drift[1] * uy + 0.5 * (c.diffusion[0] * uxx + c.diffusion[2] * uyy)
                - c.decay * u[n];
            if c.diffusion[1] != 0.0 {
                let uxy = if st.cross[k] {
                    stencil::apply_cross(&s[0], &s[2], &u, n, nx)
                } else {
                    (u[n + nx + 1] - u[n + nx - 1] - u[n + 1 - nx] + u[n - 1 - nx]) / (4.0 * h[0] * h[1])
                };
                v += c.diffusion[1] * uxy;
            }
            if let Some(src) = problem.source {
                v += src(p, t);
            }
            *out = v;
            Ok(())
        })
    };

    let y0: Vec<f64> = interior.iter().map(|&n| (problem.terminal)(&points[n], t_end)).collect();
    let taus: Vec<f64> = want.iter().rev().map(|t| (t_end - t).max(0.0)).collect();
    let mut recorded: Vec<Vec<f64>> = Vec::with_capacity(taus.len());
    let stats = ode::integrate(rhs, 0.0, y0, &taus, &params.integrator, |tau, y| {
        let t = t_end - tau;
        let mut u = vec![f64::NAN; grid.len()];
        fill(&mut u, y, t);
        recorded.push(u);
    })?;
    recorded.reverse();
    for s in &recorded {
        if let Some(n) = interior.iter().find(|&&n| !s[n].is_finite()) {
            return Err(Error::IntegratorFailure(format!("non-finite value at node {n}")));
        }
    }
    log::debug!(
        "backward solve: {} accepted, {} rejected steps, {} rhs evaluations",
        stats.accepted,
        stats.rejected,
        stats.rhs_evals
    );
    Ok((Field::new(grid.clone(), want, recorded, problem.log_scale)?, stats))
}

/// `∂u` along one axis: the high-order stencil where diffusion dominates,
/// first-order differencing toward the drift where the cell Péclet number
/// `|b| h / a` exceeds [`PECLET_UPWIND`].
#[inline]
fn first_derivative(s: &stencil::Stencil, u: &[f64], n: usize, stride: usize, b: f64, a: f64, h: f64) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    if b.abs() * h <= PECLET_UPWIND * a {
        return apply(s, u, n, stride);
    }
    if b > 0.0 {
        (u[n + stride] - u[n]) / h
    } else {
        (u[n] - u[n - stride]) / h
    }
}

fn check_peclet(problem: &BackwardProblem<'_>, interior: &[usize], points: &[[f64; 2]], h: [f64; 2]) -> Result<()> {
    let t = problem.horizon.1;
    let mut worst = 0.0_f64;
    for &n in interior {
        let c = (problem.coeffs)(&points[n], t)?;
        for axis in 0..2 {
            let b = c.drift[axis].abs();
            if b == 0.0 {
                continue;
            }
            let a = c.diffusion[if axis == 0 { 0 } else { 2 }];
            let pe = if a > 0.0 { b * h[axis] / a } else { f64::INFINITY };
            worst = worst.max(pe);
        }
    }
    if worst > PECLET_UPWIND {
        log::info!("cell Péclet number up to {worst:.2}: upwinding advection where it exceeds {PECLET_UPWIND}");
    }
    Ok(())
}

fn require_planar(spec: &ProblemSpec) -> Result<()> {
    if spec.state_dim() != 2 {
        return Err(Error::invalid("state_dim", "grid solvers need a 2-dimensional state"));
    }
    Ok(())
}

/// `A = ΣΣᵀ` and `b = f (+ G u)` at `(x, t)`.
pub(crate) fn model_coeffs(spec: &ProblemSpec, x: &[f64], t: f64, u: Option<&[f64]>) -> Coeffs {
    let model = spec.model();
    let mut b = [0.0; 2];
    model.drift(x, t, &mut b);
    if let Some(u) = u {
        model.add_input(x, t, u, 1.0, &mut b);
    }
    let s = model.noise_map(x, t);
    let a = &s * s.transpose();
    Coeffs {
        drift: b,
        diffusion: [a[(0, 0)], a[(0, 1)], a[(1, 1)]],
        decay: 0.0,
    }
}

/// Solves for `ξ(x, t; η)` with terminal data `exp(−φ/λ)` and boundary data
/// `exp(−η(1−Δ)/λ)`. Values are stored scaled by `exp(−log_scale)`.
pub fn solve_xi_pde(spec: &ProblemSpec, eta: f64, grid: &Grid2D, params: &FdmParams, times: &[f64]) -> Result<Field> {
    require_planar(spec)?;
    if !(eta >= 0.0) {
        return Err(Error::invalid("eta", "must be nonnegative"));
    }
    let lambda = spec.lambda();
    let exp_terminal = |x: &[f64]| -spec.phi(x, eta, false) / lambda;
    let exp_boundary = -spec.phi(&[0.0, 0.0], eta, true) / lambda;
    let scale = grid
        .interior_nodes()
        .map(|n| exp_terminal(&grid.point_of(n)))
        .fold(exp_boundary, f64::max);
    let coeffs = |x: &[f64], t: f64| -> Result<Coeffs> {
        let mut c = model_coeffs(spec, x, t, None);
        c.decay = spec.cost().running(x, t) / lambda;
        Ok(c)
    };
    let terminal = |x: &[f64], _t: f64| (exp_terminal(x) - scale).exp();
    let bval = (exp_boundary - scale).exp();
    let boundary = |_x: &[f64], _t: f64| bval;
    let problem = BackwardProblem {
        grid,
        horizon: spec.safe().horizon(),
        coeffs: &coeffs,
        terminal: &terminal,
        boundary: &boundary,
        source: None,
        log_scale: scale,
    };
    Ok(solve_backward(&problem, times, params)?.0)
}

/// Control field on a grid; evaluates by bilinear interpolation in space and
/// linear interpolation between time slices.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid2D,
    times: Vec<f64>,
    /// `[slice][component][node]`
    values: Vec<Vec<Vec<f64>>>,
}

impl VectorField {
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn component(&self, slice: usize, c: usize) -> &[f64] {
        &self.values[slice][c]
    }

    pub fn at_node(&self, slice: usize, node: usize) -> Vec<f64> {
        self.values[slice].iter().map(|c| c[node]).collect()
    }

    pub fn sample(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let (k, w) = field::time_bracket(&self.times, t);
        let mut out = Vec::with_capacity(self.dim());
        for c in 0..self.dim() {
            let a = field::interpolate(&self.grid, &self.values[k][c], x)?;
            let v = if w == 0.0 {
                a
            } else {
                let b = field::interpolate(&self.grid, &self.values[k + 1][c], x)?;
                a + w * (b - a)
            };
            out.push(v);
        }
        Ok(out)
    }
}

impl Policy for VectorField {
    fn control(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.sample(x, t)
    }
}

/// `∇v` at every non-exterior node of one slice. Interior nodes use the
/// stencil set; Dirichlet nodes average the gradients of adjacent interior
/// nodes. Exterior nodes are NaN.
fn gradient(grid: &Grid2D, st: &StencilSet, v: &[f64]) -> [Vec<f64>; 2] {
    let nx = grid.nx();
    let mut gx = vec![f64::NAN; grid.len()];
    let mut gy = vec![f64::NAN; grid.len()];
    for (k, &n) in st.interior.iter().enumerate() {
        gx[n] = apply(&st.stencils[k][0], v, n, 1);
        gy[n] = apply(&st.stencils[k][2], v, n, nx);
    }
    for n in grid.dirichlet_nodes() {
        let (i, j) = grid.coords(n);
        let (mut sx, mut sy, mut cnt) = (0.0, 0.0, 0);
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                let (ii, jj) = (i as i64 + di, j as i64 + dj);
                if ii < 0 || jj < 0 || ii >= nx as i64 || jj >= grid.ny() as i64 {
                    continue;
                }
                let m = grid.index(ii as usize, jj as usize);
                if grid.kind(m) == NodeKind::Interior {
                    sx += gx[m];
                    sy += gy[m];
                    cnt += 1;
                }
            }
        }
        if cnt > 0 {
            gx[n] = sx / cnt as f64;
            gy[n] = sy / cnt as f64;
        }
    }
    [gx, gy]
}

/// Policy `u = −R⁻¹Gᵀ∇J` from a gridded value function.
pub fn policy_from_value_grid(value: &Field, spec: &ProblemSpec, order: usize) -> Result<VectorField> {
    require_planar(spec)?;
    let grid = value.grid();
    let st = StencilSet::new(grid, order)?;
    let model = spec.model();
    let m = model.control_dim();
    let mut values = Vec::with_capacity(value.times().len());
    for (k, &t) in value.times().iter().enumerate() {
        let s = value.slice(k);
        if let Some(n) = grid.interior_nodes().find(|&n| !s[n].is_finite()) {
            return Err(Error::invalid("value", format!("non-finite value at node {n}")));
        }
        let [gx, gy] = gradient(grid, &st, s);
        let mut comps = vec![vec![f64::NAN; grid.len()]; m];
        for n in 0..grid.len() {
            if !gx[n].is_finite() {
                continue;
            }
            let x = grid.point_of(n);
            let g: DMatrix<f64> = model.input_map(&x, t);
            let rinv = spd_inverse(&spec.cost().r_at(&x, t))?;
            let u = -(rinv * g.transpose() * DVector::from_vec(vec![gx[n], gy[n]]));
            for c in 0..m {
                comps[c][n] = u[c];
            }
        }
        values.push(comps);
    }
    Ok(VectorField {
        grid: grid.clone(),
        times: value.times().to_vec(),
        values,
    })
}

/// `J = −λ log ξ` nodewise and the induced optimal policy.
pub fn value_and_policy_from_xi(xi: &Field, spec: &ProblemSpec, order: usize) -> Result<(Field, VectorField)> {
    let grid = xi.grid();
    for s in xi.slices() {
        for n in grid.interior_nodes() {
            if !(s[n] > 0.0) {
                let (i, j) = grid.coords(n);
                return Err(Error::NonPositiveXi { i, j });
            }
        }
    }
    let lambda = spec.lambda();
    let scale = xi.log_scale();
    let value = xi.map(0.0, |_, v| -lambda * (v.ln() + scale));
    let policy = policy_from_value_grid(&value, spec, order)?;
    Ok((value, policy))
}

/// Failure probability of the gridded policy; see [`crate::risk::solve_risk_pde`].
pub fn fdm_risk(
    spec: &ProblemSpec,
    policy: &VectorField,
    grid: &Grid2D,
    params: &FdmParams,
) -> Result<crate::risk::RiskField> {
    crate::risk::solve_risk_pde(spec, policy, grid, params)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::{builtin_velocity_model, AffineModel, Ball, CostSpec, Drift, Outer, SafeSet};

    fn disk_spec(cost: CostSpec, drift: Drift) -> ProblemSpec {
        let model = AffineModel::new(drift, DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 0.1).unwrap();
        let safe = SafeSet::new(
            Outer::Ball(Ball {
                center: vec![0.0, 0.0],
                radius: 0.5,
            }),
            vec![],
            (0.0, 1.0),
        )
        .unwrap();
        ProblemSpec::new("disk", Arc::new(model), cost, safe, 0.1, vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn constant_xi_is_preserved() {
        // V ≡ 0, ψ ≡ c and η = 0: terminal and boundary data coincide
        let spec = disk_spec(CostSpec::constant(0.0, DMatrix::identity(2, 2)), Drift::Linear { gains: vec![0.5, 0.5] });
        let grid = Grid2D::for_safe_set(spec.safe(), 25, 25).unwrap();
        let xi = solve_xi_pde(&spec, 0.0, &grid, &FdmParams::default(), &[]).unwrap();
        for n in grid.interior_nodes() {
            assert!((xi.initial()[n] * xi.log_scale().exp() - 1.0).abs() < 1e-9);
        }
        let (j, u) = value_and_policy_from_xi(&xi, &spec, 4).unwrap();
        for n in grid.interior_nodes() {
            assert!(j.initial()[n].abs() < 1e-9);
            assert!(u.at_node(0, n).iter().all(|c| c.abs() < 1e-6));
        }
    }

    #[test]
    fn maximum_principle_on_velocity_model() {
        let spec = builtin_velocity_model();
        let grid = Grid2D::for_safe_set(spec.safe(), 33, 33).unwrap();
        let xi = solve_xi_pde(&spec, 0.05, &grid, &FdmParams::default(), &[1.0]).unwrap();
        assert_eq!(xi.times(), &[0.0, 1.0]);
        let s = xi.initial();
        for n in grid.interior_nodes() {
            assert!(s[n] > 0.0 && s[n] <= 1.0 + 1e-3, "{}", s[n]);
        }
    }

    #[test]
    fn linear_value_gives_constant_control() {
        let spec = builtin_velocity_model();
        let grid = Grid2D::for_safe_set(spec.safe(), 21, 21).unwrap();
        let c = 0.7;
        let vals: Vec<f64> = (0..grid.len()).map(|n| c * grid.point_of(n)[0]).collect();
        let j = Field::new(grid.clone(), vec![0.0], vec![vals], 0.0).unwrap();
        let pol = policy_from_value_grid(&j, &spec, 2).unwrap();
        let u = pol.control(&[0.1, -0.1], 0.3).unwrap();
        assert!((u[0] + c).abs() < 1e-12 && u[1].abs() < 1e-12);
        assert!(matches!(pol.control(&[0.9, 0.0], 0.0), Err(Error::OutOfGrid { .. })));
    }

    #[test]
    fn non_positive_xi_is_rejected() {
        let spec = builtin_velocity_model();
        let grid = Grid2D::for_safe_set(spec.safe(), 21, 21).unwrap();
        let mut vals = vec![1.0; grid.len()];
        let n = grid.interior_nodes().nth(3).unwrap();
        vals[n] = 0.0;
        let xi = Field::new(grid.clone(), vec![0.0], vec![vals], 0.0).unwrap();
        assert!(matches!(value_and_policy_from_xi(&xi, &spec, 4), Err(Error::NonPositiveXi { .. })));
    }

    #[test]
    fn car_model_is_rejected() {
        let spec = crate::model::builtin_car_model();
        let grid = Grid2D::from_box([-1.0, -1.0], [1.0, 1.0], 9, 9, |_| true).unwrap();
        assert!(solve_xi_pde(&spec, 0.0, &grid, &FdmParams::default(), &[]).is_err());
    }
}
