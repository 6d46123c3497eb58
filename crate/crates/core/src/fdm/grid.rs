use crate::model::SafeSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Dirichlet,
    Exterior,
}

/// Uniform tensor grid over a rectangle with a per-node mask.
///
/// Nodes are stored row-major with `x` fastest: `index = j * nx + i`.
/// Dirichlet nodes are the nodes outside the region that touch an interior
/// node (8-neighbourhood), i.e. a staircase of the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    origin: [f64; 2],
    spacing: [f64; 2],
    mask: Vec<NodeKind>,
}

impl Grid2D {
    /// Grid over the bounding box of a 2-axis safe set.
    pub fn for_safe_set(safe: &SafeSet, nx: usize, ny: usize) -> Result<Self> {
        if safe.axes() != 2 {
            return Err(Error::invalid("grid", "grid solver needs a 2-axis safe set"));
        }
        let (lo, hi) = safe.bounding_box();
        let g = Self::from_box([lo[0], lo[1]], [hi[0], hi[1]], nx, ny, |p| safe.contains(p))?;
        for (k, ob) in safe.obstacles().iter().enumerate() {
            let covered = (0..g.len()).any(|n| {
                let p = g.point_of(n);
                let d2 = (p[0] - ob.center[0]).powi(2) + (p[1] - ob.center[1]).powi(2);
                d2 <= ob.radius * ob.radius
            });
            if !covered {
                return Err(Error::GridTooCoarse(format!(
                    "obstacle {k} (radius {}) contains no grid node",
                    ob.radius
                )));
            }
        }
        Ok(g)
    }

    pub fn from_box(
        min: [f64; 2],
        max: [f64; 2],
        nx: usize,
        ny: usize,
        contains: impl Fn(&[f64]) -> bool,
    ) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::GridTooCoarse(format!("{nx}x{ny} grid")));
        }
        if !(min[0] < max[0] && min[1] < max[1]) {
            return Err(Error::invalid("grid", "empty box"));
        }
        let spacing = [(max[0] - min[0]) / (nx - 1) as f64, (max[1] - min[1]) / (ny - 1) as f64];
        let mut g = Self {
            nx,
            ny,
            origin: min,
            spacing,
            mask: vec![NodeKind::Exterior; nx * ny],
        };
        for j in 0..ny {
            for i in 0..nx {
                let edge = i == 0 || j == 0 || i + 1 == nx || j + 1 == ny;
                if !edge && contains(&g.point(i, j)) {
                    g.mask[j * nx + i] = NodeKind::Interior;
                }
            }
        }
        let interior = g.mask.iter().filter(|k| **k == NodeKind::Interior).count();
        if interior == 0 {
            return Err(Error::GridTooCoarse("no interior nodes".into()));
        }
        let mut dirichlet = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                if g.mask[j * nx + i] != NodeKind::Interior && g.touches_interior(i, j) {
                    dirichlet.push(j * nx + i);
                }
            }
        }
        for d in dirichlet {
            g.mask[d] = NodeKind::Dirichlet;
        }
        Ok(g)
    }

    /// Rebuilds a grid from stored parts; the mask is taken as given.
    pub(crate) fn from_parts(nx: usize, ny: usize, origin: [f64; 2], spacing: [f64; 2], mask: Vec<NodeKind>) -> Result<Self> {
        if nx < 3 || ny < 3 || mask.len() != nx * ny || !(spacing[0] > 0.0 && spacing[1] > 0.0) {
            return Err(Error::MaskInconsistent("grid parts do not fit together".into()));
        }
        Ok(Self {
            nx,
            ny,
            origin,
            spacing,
            mask,
        })
    }

    fn touches_interior(&self, i: usize, j: usize) -> bool {
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let (ii, jj) = (i as i64 + di, j as i64 + dj);
                if ii < 0 || jj < 0 || ii >= self.nx as i64 || jj >= self.ny as i64 {
                    continue;
                }
                if self.mask[jj as usize * self.nx + ii as usize] == NodeKind::Interior {
                    return true;
                }
            }
        }
        false
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn max_corner(&self) -> [f64; 2] {
        [
            self.origin[0] + self.spacing[0] * (self.nx - 1) as f64,
            self.origin[1] + self.spacing[1] * (self.ny - 1) as f64,
        ]
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn coords(&self, node: usize) -> (usize, usize) {
        (node % self.nx, node / self.nx)
    }

    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + self.spacing[0] * i as f64,
            self.origin[1] + self.spacing[1] * j as f64,
        ]
    }

    pub fn point_of(&self, node: usize) -> [f64; 2] {
        let (i, j) = self.coords(node);
        self.point(i, j)
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.mask[node]
    }

    pub fn mask(&self) -> &[NodeKind] {
        &self.mask
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&n| self.mask[n] == NodeKind::Interior)
    }

    pub fn dirichlet_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&n| self.mask[n] == NodeKind::Dirichlet)
    }

    /// Contiguous run of non-exterior nodes through `(i, j)` along `axis`.
    pub(crate) fn run(&self, i: usize, j: usize, axis: usize) -> (usize, usize) {
        let len = if axis == 0 { self.nx } else { self.ny };
        let pos = if axis == 0 { i } else { j };
        let at = |p: usize| if axis == 0 { self.index(p, j) } else { self.index(i, p) };
        let mut lo = pos;
        while lo > 0 && self.mask[at(lo - 1)] != NodeKind::Exterior {
            lo -= 1;
        }
        let mut hi = pos;
        while hi + 1 < len && self.mask[at(hi + 1)] != NodeKind::Exterior {
            hi += 1;
        }
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_velocity_model;

    #[test]
    fn velocity_mask_is_consistent() {
        let spec = builtin_velocity_model();
        let g = Grid2D::for_safe_set(spec.safe(), 48, 48).unwrap();
        for n in g.interior_nodes() {
            assert!(spec.safe().contains(&g.point_of(n)));
            let (i, j) = g.coords(n);
            for (di, dj) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)] {
                let m = g.index((i as i64 + di) as usize, (j as i64 + dj) as usize);
                assert_ne!(g.kind(m), NodeKind::Exterior);
            }
        }
        let h = g.spacing()[0] * std::f64::consts::SQRT_2;
        for n in g.dirichlet_nodes() {
            let p = g.point_of(n);
            assert!(!spec.safe().contains(&p));
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let ob = (((p[0] + 0.2).powi(2) + (p[1] - 0.1).powi(2)).sqrt() - 0.08).abs();
            assert!((r - 0.5).abs() <= h + 1e-12 || ob <= h + 1e-12, "{p:?}");
        }
    }

    #[test]
    fn unresolved_obstacle_is_too_coarse() {
        use crate::model::{Ball, Outer, SafeSet};
        let safe = SafeSet::new(
            Outer::Box {
                min: vec![-1.0, -1.0],
                max: vec![1.0, 1.0],
            },
            vec![Ball {
                center: vec![0.05, 0.05],
                radius: 0.01,
            }],
            (0.0, 1.0),
        )
        .unwrap();
        assert!(matches!(Grid2D::for_safe_set(&safe, 11, 11), Err(Error::GridTooCoarse(_))));
    }
}
