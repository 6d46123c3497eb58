//! Safe region built from simple primitives.
//!
//! Geometry acts on the leading `axes` coordinates of the state (positions);
//! remaining coordinates are unconstrained. The region is the open interior of
//! the outer boundary minus the closed obstacle balls.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outer {
    Box { min: Vec<f64>, max: Vec<f64> },
    Ball(Ball),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeSet {
    axes: usize,
    outer: Outer,
    obstacles: Vec<Ball>,
    t0: f64,
    horizon_end: f64,
}

impl SafeSet {
    pub fn new(outer: Outer, obstacles: Vec<Ball>, horizon: (f64, f64)) -> Result<Self> {
        let axes = match &outer {
            Outer::Box { min, max } => {
                if min.len() != max.len() || min.is_empty() {
                    return Err(Error::invalid("safe_set.outer", "min/max length mismatch"));
                }
                if min.iter().zip(max).any(|(a, b)| !(a < b)) {
                    return Err(Error::invalid("safe_set.outer", "empty box"));
                }
                min.len()
            }
            Outer::Ball(b) => {
                if b.center.is_empty() || !(b.radius > 0.0) {
                    return Err(Error::invalid("safe_set.outer", "radius must be positive"));
                }
                b.center.len()
            }
        };
        for (i, o) in obstacles.iter().enumerate() {
            if o.center.len() != axes || !(o.radius > 0.0) {
                return Err(Error::invalid(
                    format!("safe_set.obstacles[{i}]"),
                    format!("need {axes} center coordinates and a positive radius"),
                ));
            }
        }
        let (t0, t1) = horizon;
        if !(t0 < t1) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::invalid("safe_set.horizon", "need t0 < T"));
        }
        Ok(Self {
            axes,
            outer,
            obstacles,
            t0,
            horizon_end: t1,
        })
    }

    /// Number of leading state coordinates the geometry constrains.
    pub fn axes(&self) -> usize {
        self.axes
    }

    pub fn outer(&self) -> &Outer {
        &self.outer
    }

    pub fn obstacles(&self) -> &[Ball] {
        &self.obstacles
    }

    pub fn horizon(&self) -> (f64, f64) {
        (self.t0, self.horizon_end)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_final(&self) -> f64 {
        self.horizon_end
    }

    /// Axis-aligned box enclosing the safe region (on the constrained axes).
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.outer {
            Outer::Box { min, max } => (min.clone(), max.clone()),
            Outer::Ball(b) => (
                b.center.iter().map(|c| c - b.radius).collect(),
                b.center.iter().map(|c| c + b.radius).collect(),
            ),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let p = &x[..self.axes];
        let inside_outer = match &self.outer {
            Outer::Box { min, max } => p.iter().zip(min.iter().zip(max)).all(|(v, (lo, hi))| lo < v && v < hi),
            Outer::Ball(b) => dist2(p, &b.center) < b.radius * b.radius,
        };
        inside_outer
            && self
                .obstacles
                .iter()
                .all(|o| dist2(p, &o.center) > o.radius * o.radius)
    }

    /// Point where the segment `a → b` first leaves the region.
    ///
    /// `a` is expected inside and `b` outside. The returned point lies on the
    /// segment and is never reported as contained. If `a` is already outside it
    /// is returned unchanged.
    pub fn boundary_project(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        if !self.contains(a) {
            return a.to_vec();
        }
        let s = self.crossing_parameter(a, b).clamp(0.0, 1.0);
        let at = |s: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect() };
        let p = at(s);
        if !self.contains(&p) {
            return p;
        }
        // Rounding left the analytic point inside; bisect on [s, 1].
        let (mut lo, mut hi) = (s, 1.0);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if self.contains(&at(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(hi)
    }

    fn crossing_parameter(&self, a: &[f64], b: &[f64]) -> f64 {
        let pa = &a[..self.axes];
        let d: Vec<f64> = pa.iter().zip(&b[..self.axes]).map(|(x, y)| y - x).collect();
        let mut best = 1.0_f64;
        match &self.outer {
            Outer::Box { min, max } => {
                for i in 0..self.axes {
                    let s = if d[i] > 0.0 {
                        (max[i] - pa[i]) / d[i]
                    } else if d[i] < 0.0 {
                        (min[i] - pa[i]) / d[i]
                    } else {
                        continue;
                    };
                    best = best.min(s.max(0.0));
                }
            }
            Outer::Ball(ball) => {
                if let Some((_, hi)) = segment_sphere_roots(pa, &d, ball) {
                    best = best.min(hi.max(0.0));
                }
            }
        }
        for o in &self.obstacles {
            if let Some((lo, _)) = segment_sphere_roots(pa, &d, o) {
                if lo >= 0.0 {
                    best = best.min(lo);
                }
            }
        }
        best
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Roots of `|a + s d - c|² = r²`, ascending.
fn segment_sphere_roots(a: &[f64], d: &[f64], ball: &Ball) -> Option<(f64, f64)> {
    let qa: f64 = d.iter().map(|v| v * v).sum();
    if qa == 0.0 {
        return None;
    }
    let ac: Vec<f64> = a.iter().zip(&ball.center).map(|(x, c)| x - c).collect();
    let qb: f64 = 2.0 * ac.iter().zip(d).map(|(x, y)| x * y).sum::<f64>();
    let qc: f64 = ac.iter().map(|v| v * v).sum::<f64>() - ball.radius * ball.radius;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    Some(((-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn annulus() -> SafeSet {
        SafeSet::new(
            Outer::Ball(Ball {
                center: vec![0.0, 0.0],
                radius: 0.5,
            }),
            vec![Ball {
                center: vec![-0.2, 0.1],
                radius: 0.08,
            }],
            (0.0, 2.0),
        )
        .unwrap()
    }

    #[test]
    fn membership() {
        let s = annulus();
        assert!(s.contains(&[0.0, 0.0]));
        assert!(!s.contains(&[0.5, 0.0]));
        assert!(!s.contains(&[-0.2, 0.1]));
        assert!(!s.contains(&[0.6, 0.6]));
        assert!(s.contains(&[-0.3, 0.3]));
    }

    #[test]
    fn extra_coordinates_are_ignored() {
        let s = annulus();
        assert!(s.contains(&[0.0, 0.0, 100.0, -4.0]));
    }

    #[test]
    fn projection_onto_outer_circle() {
        let s = annulus();
        let p = s.boundary_project(&[0.4, 0.0], &[0.6, 0.0]);
        assert!((p[0] - 0.5).abs() < 1e-12 && p[1] == 0.0);
        assert!(!s.contains(&p));
    }

    #[test]
    fn projection_onto_obstacle() {
        let s = annulus();
        let p = s.boundary_project(&[0.0, 0.1], &[-0.2, 0.1]);
        assert!((p[0] + 0.12).abs() < 1e-12);
        assert!(!s.contains(&p));
    }

    #[test]
    fn projection_onto_box_face() {
        let s = SafeSet::new(
            Outer::Box {
                min: vec![-1.0],
                max: vec![1.0],
            },
            vec![],
            (0.0, 1.0),
        )
        .unwrap();
        let p = s.boundary_project(&[0.9, 7.0], &[1.3, 9.0]);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!((p[1] - 7.5).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(SafeSet::new(
            Outer::Box {
                min: vec![0.0],
                max: vec![0.0]
            },
            vec![],
            (0.0, 1.0)
        )
        .is_err());
        assert!(SafeSet::new(
            Outer::Ball(Ball {
                center: vec![0.0, 0.0],
                radius: 1.0
            }),
            vec![],
            (1.0, 1.0)
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn projected_point_is_outside_and_on_segment(
            ax in -0.45..0.45f64, ay in -0.45..0.45f64,
            dx in -0.3..0.3f64, dy in -0.3..0.3f64,
        ) {
            let s = annulus();
            let a = [ax, ay];
            let b = [ax + dx, ay + dy];
            prop_assume!(s.contains(&a) && !s.contains(&b));
            let p = s.boundary_project(&a, &b);
            prop_assert!(!s.contains(&p));
            let len = (dx * dx + dy * dy).sqrt();
            let da = ((p[0] - ax).powi(2) + (p[1] - ay).powi(2)).sqrt();
            let db = ((p[0] - b[0]).powi(2) + (p[1] - b[1]).powi(2)).sqrt();
            prop_assert!(da <= len + 1e-12);
            prop_assert!((da + db - len).abs() < 1e-9);
        }
    }
}
