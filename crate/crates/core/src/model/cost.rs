use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

pub type RunningCostFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
pub type TerminalCostFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type WeightFn = Arc<dyn Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync>;

/// Control weight `R(x, t)`.
#[derive(Clone)]
pub enum ControlWeight {
    Constant(DMatrix<f64>),
    Varying(WeightFn),
}

impl ControlWeight {
    pub fn at(&self, x: &[f64], t: f64) -> DMatrix<f64> {
        match self {
            ControlWeight::Constant(r) => r.clone(),
            ControlWeight::Varying(f) => f(x, t),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, ControlWeight::Constant(_))
    }
}

/// Running cost `V`, terminal cost `ψ`, control weight `R` and the
/// noise/cost ratio `λ` (filled in once the proportionality check passes).
#[derive(Clone)]
pub struct CostSpec {
    running: RunningCostFn,
    terminal: TerminalCostFn,
    control_weight: ControlWeight,
    lambda: Option<f64>,
}

impl CostSpec {
    pub fn new(running: RunningCostFn, terminal: TerminalCostFn, control_weight: ControlWeight) -> Self {
        Self {
            running,
            terminal,
            control_weight,
            lambda: None,
        }
    }

    /// `V = Σ qᵢ xᵢ²`, `ψ = Σ pᵢ xᵢ²`, constant `R`.
    pub fn diagonal_quadratic(running: Vec<f64>, terminal: Vec<f64>, r: DMatrix<f64>) -> Self {
        let v: RunningCostFn = Arc::new(move |x, _| weighted_square(&running, x));
        let psi: TerminalCostFn = Arc::new(move |x| weighted_square(&terminal, x));
        Self::new(v, psi, ControlWeight::Constant(r))
    }

    /// `V ≡ 0`, `ψ ≡ c`.
    pub fn constant(c: f64, r: DMatrix<f64>) -> Self {
        Self::new(Arc::new(|_, _| 0.0), Arc::new(move |_| c), ControlWeight::Constant(r))
    }

    pub fn running(&self, x: &[f64], t: f64) -> f64 {
        (self.running)(x, t)
    }

    pub fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    pub fn control_weight(&self) -> &ControlWeight {
        &self.control_weight
    }

    pub fn r_at(&self, x: &[f64], t: f64) -> DMatrix<f64> {
        self.control_weight.at(x, t)
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    pub(crate) fn set_lambda(&mut self, lambda: f64) {
        self.lambda = Some(lambda);
    }
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostSpec")
            .field("constant_weight", &self.control_weight.is_constant())
            .field("lambda", &self.lambda)
            .finish_non_exhaustive()
    }
}

fn weighted_square(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(w, x)| w * x * x).sum()
}
