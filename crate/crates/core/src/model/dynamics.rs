use nalgebra::DMatrix;

/// Control-affine Itô system `dx = f dt + G u dt + Σ dw`.
///
/// Implementations must be pure: ensembles call these from many threads.
/// The `add_*` hooks exist so the inner simulation loop can avoid allocating
/// matrices; the defaults go through [`input_map`](Self::input_map) and
/// [`noise_map`](Self::noise_map).
pub trait ControlAffineModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;

    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]);
    fn input_map(&self, x: &[f64], t: f64) -> DMatrix<f64>;
    fn noise_map(&self, x: &[f64], t: f64) -> DMatrix<f64>;

    /// `G` and `Σ` do not depend on `(x, t)`.
    fn has_constant_maps(&self) -> bool {
        false
    }

    /// `out += scale · G(x, t) u`
    fn add_input(&self, x: &[f64], t: f64, u: &[f64], scale: f64, out: &mut [f64]) {
        let g = self.input_map(x, t);
        add_mat_vec(&g, u, scale, out);
    }

    /// `out += Σ(x, t) dw`
    fn add_noise(&self, x: &[f64], t: f64, dw: &[f64], out: &mut [f64]) {
        let s = self.noise_map(x, t);
        add_mat_vec(&s, dw, 1.0, out);
    }

    /// Keeps the state inside the model's domain of definition after a step.
    fn project_state(&self, _x: &mut [f64]) {}
}

pub(crate) fn add_mat_vec(m: &DMatrix<f64>, v: &[f64], scale: f64, out: &mut [f64]) {
    for (j, &vj) in v.iter().enumerate() {
        let c = scale * vj;
        if c == 0.0 {
            continue;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o += m[(i, j)] * c;
        }
    }
}

/// Drift fields that can be named in a config file.
#[derive(Debug, Clone, PartialEq)]
pub enum Drift {
    Zero,
    /// `f_i = -gains_i · x_i`
    Linear { gains: Vec<f64> },
    /// `f = A x`
    Matrix(DMatrix<f64>),
    /// Kinematic car with state `[px, py, s, θ, φ]` and speed/position damping `k`.
    Car { damping: f64, wheelbase: f64 },
}

/// Model with a named drift and constant input/noise maps.
#[derive(Debug, Clone)]
pub struct AffineModel {
    drift: Drift,
    input: DMatrix<f64>,
    noise: DMatrix<f64>,
    /// Symmetric clamp on one state component, `(index, bound)`.
    clamp: Option<(usize, f64)>,
}

impl AffineModel {
    pub fn new(drift: Drift, input: DMatrix<f64>, noise: DMatrix<f64>) -> crate::Result<Self> {
        let n = input.nrows();
        if n == 0 || input.ncols() == 0 || noise.ncols() == 0 {
            return Err(crate::Error::invalid("model", "dimensions must be positive"));
        }
        if noise.nrows() != n {
            return Err(crate::Error::invalid(
                "model.noise_map",
                format!("expected {n} rows, got {}", noise.nrows()),
            ));
        }
        match &drift {
            Drift::Linear { gains } if gains.len() != n => {
                return Err(crate::Error::invalid(
                    "model.drift.gains",
                    format!("expected {n} gains, got {}", gains.len()),
                ))
            }
            Drift::Matrix(a) if a.nrows() != n || a.ncols() != n => {
                return Err(crate::Error::invalid("model.drift.matrix", format!("expected {n}x{n}")))
            }
            Drift::Car { wheelbase, .. } => {
                if n != 5 {
                    return Err(crate::Error::invalid("model.state_dim", "car drift needs 5 states"));
                }
                if *wheelbase <= 0.0 {
                    return Err(crate::Error::invalid("model.drift.wheelbase", "must be positive"));
                }
            }
            _ => {}
        }
        if input.iter().chain(noise.iter()).any(|v| !v.is_finite()) {
            return Err(crate::Error::invalid("model", "non-finite matrix entry"));
        }
        Ok(Self {
            drift,
            input,
            noise,
            clamp: None,
        })
    }

    pub fn with_clamp(mut self, index: usize, bound: f64) -> Self {
        self.clamp = Some((index, bound));
        self
    }

    pub fn drift_kind(&self) -> &Drift {
        &self.drift
    }

    pub fn clamp(&self) -> Option<(usize, f64)> {
        self.clamp
    }
}

impl ControlAffineModel for AffineModel {
    fn state_dim(&self) -> usize {
        self.input.nrows()
    }

    fn control_dim(&self) -> usize {
        self.input.ncols()
    }

    fn noise_dim(&self) -> usize {
        self.noise.ncols()
    }

    fn drift(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        match &self.drift {
            Drift::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            Drift::Linear { gains } => {
                for ((o, &xi), &k) in out.iter_mut().zip(x).zip(gains) {
                    *o = -k * xi;
                }
            }
            Drift::Matrix(a) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..x.len()).map(|j| a[(i, j)] * x[j]).sum();
                }
            }
            Drift::Car { damping, wheelbase } => {
                let (px, py, s, th, ph) = (x[0], x[1], x[2], x[3], x[4]);
                out[0] = -damping * px + s * th.cos();
                out[1] = -damping * py + s * th.sin();
                out[2] = -damping * s;
                out[3] = s * ph.tan() / wheelbase;
                out[4] = 0.0;
            }
        }
    }

    fn input_map(&self, _x: &[f64], _t: f64) -> DMatrix<f64> {
        self.input.clone()
    }

    fn noise_map(&self, _x: &[f64], _t: f64) -> DMatrix<f64> {
        self.noise.clone()
    }

    fn has_constant_maps(&self) -> bool {
        true
    }

    fn add_input(&self, _x: &[f64], _t: f64, u: &[f64], scale: f64, out: &mut [f64]) {
        add_mat_vec(&self.input, u, scale, out);
    }

    fn add_noise(&self, _x: &[f64], _t: f64, dw: &[f64], out: &mut [f64]) {
        add_mat_vec(&self.noise, dw, 1.0, out);
    }

    fn project_state(&self, x: &mut [f64]) {
        if let Some((i, b)) = self.clamp {
            x[i] = x[i].clamp(-b, b);
        }
    }
}
