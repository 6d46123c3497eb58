//! Finite-difference stencils with reduced-order closures near the mask.

use super::grid::{Grid2D, NodeKind};
use crate::{Error, Result};

pub(crate) const MAX_POINTS: usize = 6;

/// Weights for derivatives `0..=max_deriv` at `z` on nodes `x` (Fornberg 1988).
/// Row `d` holds the weights of the `d`-th derivative.
pub fn fornberg_weights(z: f64, x: &[f64], max_deriv: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let m = max_deriv;
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] *= c4 / c3;
        }
        c1 = c2;
    }
    c
}

/// One-axis stencil: `Σ w[k] u[base + k]` along the axis (already scaled by `h`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Stencil {
    pub start: i32,
    pub len: u8,
    pub w: [f64; MAX_POINTS],
}

impl Stencil {
    fn build(pos: usize, first: usize, len: usize, deriv: usize, h: f64) -> Self {
        let offsets: Vec<f64> = (0..len).map(|k| (first + k) as f64 - pos as f64).collect();
        let c = fornberg_weights(0.0, &offsets, deriv);
        let scale = h.powi(deriv as i32);
        let mut w = [0.0; MAX_POINTS];
        for (k, v) in c[deriv].iter().enumerate() {
            w[k] = v / scale;
        }
        Self {
            start: first as i32 - pos as i32,
            len: len as u8,
            w,
        }
    }
}

/// Picks the stencil window for `deriv` at accuracy `order` inside the run `[lo, hi]`.
/// Always centered; near the mask the order drops until the window fits.
/// Returns `(first, len, achieved order)`.
fn window(pos: usize, lo: usize, hi: usize, _deriv: usize, order: usize) -> Option<(usize, usize, usize)> {
    let mut p = order;
    while p >= 2 {
        let half = p / 2;
        if pos >= lo + half && pos + half <= hi {
            return Some((pos - half, p + 1, p));
        }
        p -= 2;
    }
    None
}

/// Per-node first and second derivative stencils on both axes.
#[derive(Debug, Clone)]
pub(crate) struct StencilSet {
    /// `[d1x, d2x, d1y, d2y]` for each interior node, in `interior` order.
    pub stencils: Vec<[Stencil; 4]>,
    pub interior: Vec<usize>,
    /// Whether the product of the two first-derivative stencils stays inside
    /// the mask, so the mixed derivative can use it.
    pub cross: Vec<bool>,
    /// Interior nodes whose closure fell back to a lower order.
    pub degraded: usize,
}

impl StencilSet {
    pub fn new(grid: &Grid2D, order: usize) -> Result<Self> {
        if order != 2 && order != 4 {
            return Err(Error::invalid("order", "stencil order must be 2 or 4"));
        }
        let h = grid.spacing();
        let interior: Vec<usize> = grid.interior_nodes().collect();
        let mut stencils = Vec::with_capacity(interior.len());
        let mut cross = Vec::with_capacity(interior.len());
        let mut degraded = 0;
        for &n in &interior {
            let (i, j) = grid.coords(n);
            let mut set = [Stencil {
                start: 0,
                len: 0,
                w: [0.0; MAX_POINTS],
            }; 4];
            let mut low = false;
            for axis in 0..2 {
                let (lo, hi) = grid.run(i, j, axis);
                let pos = if axis == 0 { i } else { j };
                for deriv in 1..=2 {
                    let (first, len, p) = window(pos, lo, hi, deriv, order).ok_or_else(|| {
                        Error::MaskInconsistent(format!("node ({i}, {j}) has no stencil along axis {axis}"))
                    })?;
                    low |= p < order;
                    set[axis * 2 + deriv - 1] = Stencil::build(pos, first, len, deriv, h[axis]);
                }
            }
            if low {
                degraded += 1;
            }
            // every read must land on an interior or Dirichlet node
            for (k, s) in set.iter().enumerate() {
                for q in 0..s.len as i32 {
                    let off = s.start + q;
                    let m = if k < 2 {
                        grid.index((i as i32 + off) as usize, j)
                    } else {
                        grid.index(i, (j as i32 + off) as usize)
                    };
                    if grid.kind(m) == NodeKind::Exterior {
                        return Err(Error::MaskInconsistent(format!("stencil at ({i}, {j}) reads an exterior node")));
                    }
                }
            }
            let (sx, sy) = (set[0], set[2]);
            cross.push((0..sy.len as i32).all(|b| {
                (0..sx.len as i32).all(|a| {
                    let m = grid.index((i as i32 + sx.start + a) as usize, (j as i32 + sy.start + b) as usize);
                    grid.kind(m) != NodeKind::Exterior
                })
            }));
            stencils.push(set);
        }
        Ok(Self {
            stencils,
            interior,
            cross,
            degraded,
        })
    }
}

#[inline]
pub(crate) fn apply(s: &Stencil, u: &[f64], node: usize, stride: usize) -> f64 {
    let base = node as i64 + s.start as i64 * stride as i64;
    let mut acc = 0.0;
    for k in 0..s.len as usize {
        acc += s.w[k] * u[(base + (k * stride) as i64) as usize];
    }
    acc
}

/// `∂²u/∂x∂y` from the product of the x and y first-derivative stencils.
#[inline]
pub(crate) fn apply_cross(sx: &Stencil, sy: &Stencil, u: &[f64], node: usize, nx: usize) -> f64 {
    let mut acc = 0.0;
    for b in 0..sy.len as usize {
        let row = node as i64 + (sy.start as i64 + b as i64) * nx as i64;
        acc += sy.w[b] * apply(sx, u, row as usize, 1);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_weights() {
        let c = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_eq!(c[1], vec![-0.5, 0.0, 0.5]);
        assert_eq!(c[2], vec![1.0, -2.0, 1.0]);
        let c = fornberg_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 2);
        let d2 = [-1.0 / 12.0, 4.0 / 3.0, -2.5, 4.0 / 3.0, -1.0 / 12.0];
        for (a, b) in c[2].iter().zip(d2) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn one_sided_weights_are_exact_on_polynomials() {
        let offs = [-1.0, 0.0, 1.0, 2.0, 3.0, 4.0];
        let c = fornberg_weights(0.0, &offs, 2);
        for p in 0..=5 {
            let vals: Vec<f64> = offs.iter().map(|x: &f64| x.powi(p)).collect();
            let d1: f64 = c[1].iter().zip(&vals).map(|(w, v)| w * v).sum();
            let d2: f64 = c[2].iter().zip(&vals).map(|(w, v)| w * v).sum();
            let e1 = if p == 1 { 1.0 } else { 0.0 };
            let e2 = if p == 2 { 2.0 } else { 0.0 };
            assert!((d1 - e1).abs() < 1e-12 && (d2 - e2).abs() < 1e-12, "p = {p}");
        }
    }

    #[test]
    fn cross_product_is_exact_on_low_degree() {
        let (nx, h) = (7usize, 0.1);
        let f = |x: f64, y: f64| x.powi(3) * y * y + x * y;
        let u: Vec<f64> = (0..nx * nx).map(|n| f((n % nx) as f64 * h, (n / nx) as f64 * h)).collect();
        let sx = Stencil::build(3, 1, 5, 1, h);
        let got = apply_cross(&sx, &sx, &u, 3 * nx + 3, nx);
        let (x, y) = (0.3, 0.3);
        assert!((got - (6.0 * x * x * y + 1.0)).abs() < 1e-10, "{got}");
    }

    #[test]
    fn window_choice() {
        assert_eq!(window(5, 0, 10, 2, 4), Some((3, 5, 4)));
        // next to the left end: centered order 2
        assert_eq!(window(1, 0, 10, 2, 4), Some((0, 3, 2)));
        assert_eq!(window(1, 0, 10, 1, 4), Some((0, 3, 2)));
        assert_eq!(window(8, 0, 10, 1, 4), Some((6, 5, 4)));
        assert_eq!(window(0, 0, 0, 2, 2), None);
    }
}
