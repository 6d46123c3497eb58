//! Dormand–Prince 5(4) with adaptive steps.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorParams {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Initial step; chosen automatically when `None`.
    pub initial_step: Option<f64>,
}

impl Default for IntegratorParams {
    fn default() -> Self {
        Self {
            rtol: 1e-3,
            atol: 1e-6,
            max_steps: 1_000_000,
            initial_step: None,
        }
    }
}

impl IntegratorParams {
    pub fn with_rtol(rtol: f64) -> Self {
        Self {
            rtol,
            atol: rtol * 1e-3,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// 5th minus 4th order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `y' = f(s, y)` from `s0`, stopping exactly at each of `outputs`
/// (ascending, `>= s0`) and calling `record(s, y)` there.
pub fn integrate<F, R>(
    mut f: F,
    s0: f64,
    y0: Vec<f64>,
    outputs: &[f64],
    params: &IntegratorParams,
    mut record: R,
) -> Result<IntegratorStats>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    R: FnMut(f64, &[f64]),
{
    let n = y0.len();
    let mut stats = IntegratorStats::default();
    let mut y = y0;
    let mut s = s0;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    f(s, &y, &mut k[0])?;
    stats.rhs_evals += 1;

    let s_end = outputs.last().copied().unwrap_or(s0);
    let mut h = params
        .initial_step
        .unwrap_or_else(|| initial_step(&y, &k[0], params, s_end - s0));
    let mut out_idx = 0;
    while out_idx < outputs.len() && outputs[out_idx] <= s0 {
        record(s, &y);
        out_idx += 1;
    }

    while out_idx < outputs.len() {
        if stats.accepted + stats.rejected >= params.max_steps {
            return Err(Error::IntegratorFailure(format!("exceeded {} steps", params.max_steps)));
        }
        let target = outputs[out_idx];
        let mut hit = false;
        if s + h >= target - 1e-12 * target.abs().max(1.0) {
            h = target - s;
            hit = true;
        }
        if !(h > 1e-14 * s_end.abs().max(1.0)) {
            return Err(Error::IntegratorFailure(format!("step size underflow at s = {s}")));
        }

        for stage in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, a) in A[stage][..stage].iter().enumerate() {
                    if *a != 0.0 {
                        acc += h * a * k[j][i];
                    }
                }
                tmp[i] = acc;
            }
            let (done, rest) = k.split_at_mut(stage);
            let _ = done;
            f(s + C[stage] * h, &tmp, &mut rest[0])?;
            stats.rhs_evals += 1;
        }
        // stage 6 input is the 5th-order solution (FSAL)
        ynew.copy_from_slice(&tmp);

        let mut err = 0.0_f64;
        for i in 0..n {
            let mut e = 0.0;
            for (j, ej) in E.iter().enumerate() {
                if *ej != 0.0 {
                    e += ej * k[j][i];
                }
            }
            e *= h;
            let sc = params.atol + params.rtol * y[i].abs().max(ynew[i].abs());
            let r = e / sc;
            err += r * r;
        }
        let err = (err / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::IntegratorFailure(format!("non-finite error estimate at s = {s}")));
        }

        if err <= 1.0 {
            stats.accepted += 1;
            s = if hit { target } else { s + h };
            std::mem::swap(&mut y, &mut ynew);
            k.swap(0, 6);
            if hit {
                record(s, &y);
                out_idx += 1;
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
        }
    }
    Ok(stats)
}

fn initial_step(y: &[f64], dy: &[f64], p: &IntegratorParams, span: f64) -> f64 {
    let n = y.len().max(1) as f64;
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for (yi, fi) in y.iter().zip(dy) {
        let sc = p.atol + p.rtol * yi.abs();
        d0 += (yi / sc).powi(2);
        d1 += (fi / sc).powi(2);
    }
    let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.min(span.abs().max(1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let mut got = Vec::new();
        let p = IntegratorParams {
            rtol: 1e-9,
            atol: 1e-12,
            ..Default::default()
        };
        integrate(
            |_, y, dy| {
                dy[0] = -2.0 * y[0];
                Ok(())
            },
            0.0,
            vec![1.0],
            &[0.5, 1.0],
            &p,
            |s, y| got.push((s, y[0])),
        )
        .unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[1].0, 1.0);
        assert!((got[0].1 - (-1.0_f64).exp()).abs() < 1e-8);
        assert!((got[1].1 - (-2.0_f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn harmonic_oscillator_fifth_order() {
        let p = IntegratorParams {
            rtol: 1e-10,
            atol: 1e-12,
            ..Default::default()
        };
        let mut end = vec![];
        integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
                Ok(())
            },
            0.0,
            vec![1.0, 0.0],
            &[std::f64::consts::PI],
            &p,
            |_, y| end = y.to_vec(),
        )
        .unwrap();
        assert!((end[0] + 1.0).abs() < 1e-8 && end[1].abs() < 1e-8);
    }

    #[test]
    fn rhs_error_propagates() {
        let r = integrate(
            |_, _, _| Err(Error::IntegratorFailure("boom".into())),
            0.0,
            vec![1.0],
            &[1.0],
            &IntegratorParams::default(),
            |_, _| {},
        );
        assert!(r.is_err());
    }

    #[test]
    fn blowup_is_reported() {
        let p = IntegratorParams {
            max_steps: 200,
            ..Default::default()
        };
        let r = integrate(
            |_, y, dy| {
                dy[0] = y[0] * y[0];
                Ok(())
            },
            0.0,
            vec![1.0],
            &[2.0],
            &p,
            |_, _| {},
        );
        assert!(matches!(r, Err(Error::IntegratorFailure(_))));
    }
}
