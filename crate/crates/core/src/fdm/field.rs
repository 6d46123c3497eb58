//! Gridded scalar fields with CSV and binary export.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic    b"CCPF"
//! version  u32 (= 1)
//! nx, ny   u32, u32
//! slices   u32
//! origin   f64, f64
//! spacing  f64, f64
//! scale    f64        log of the factor multiplying every stored value
//! mask     nx*ny bytes (0 interior, 1 dirichlet, 2 exterior)
//! per slice: time f64, then nx*ny f64 values (row-major, x fastest)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::grid::{Grid2D, NodeKind};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CCPF";
const VERSION: u32 = 1;

/// Values on a grid at a list of times (ascending). Exterior nodes hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid2D,
    times: Vec<f64>,
    slices: Vec<Vec<f64>>,
    log_scale: f64,
}

impl Field {
    pub fn new(grid: Grid2D, times: Vec<f64>, slices: Vec<Vec<f64>>, log_scale: f64) -> Result<Self> {
        if times.is_empty() || times.len() != slices.len() {
            return Err(Error::invalid("field", "need one slice per time"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("field", "times must be strictly increasing"));
        }
        if slices.iter().any(|s| s.len() != grid.len()) {
            return Err(Error::invalid("field", "slice length does not match the grid"));
        }
        Ok(Self {
            grid,
            times,
            slices,
            log_scale,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.slices[k]
    }

    pub fn slices(&self) -> &[Vec<f64>] {
        &self.slices
    }

    /// The earliest slice.
    pub fn initial(&self) -> &[f64] {
        &self.slices[0]
    }

    /// Stored values are `true value · exp(−log_scale)`.
    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    /// Applies `f` to every non-exterior value, keeping the grid and times.
    pub fn map(&self, log_scale: f64, f: impl Fn(usize, f64) -> f64) -> Self {
        let slices = self
            .slices
            .iter()
            .map(|s| {
                s.iter()
                    .enumerate()
                    .map(|(n, v)| {
                        if self.grid.kind(n) == NodeKind::Exterior {
                            f64::NAN
                        } else {
                            f(n, *v)
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            grid: self.grid.clone(),
            times: self.times.clone(),
            slices,
            log_scale,
        }
    }

    /// Bilinear interpolation in slice `k`, using only corners that carry a
    /// finite value.
    pub fn interpolate(&self, k: usize, p: &[f64]) -> Result<f64> {
        interpolate(&self.grid, &self.slices[k], p)
    }

    /// Linear in time between slices, clamped at the ends.
    pub fn sample(&self, p: &[f64], t: f64) -> Result<f64> {
        let (k, w) = time_bracket(&self.times, t);
        let a = self.interpolate(k, p)?;
        if w == 0.0 {
            return Ok(a);
        }
        let b = self.interpolate(k + 1, p)?;
        Ok(a + w * (b - a))
    }

    /// `x,y,value` rows of slice `k` for interior and Dirichlet nodes.
    pub fn write_csv<W: Write>(&self, k: usize, header: &str, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", header])?;
        for (n, v) in self.slices[k].iter().enumerate() {
            if self.grid.kind(n) == NodeKind::Exterior {
                continue;
            }
            let p = self.grid.point_of(n);
            w.write_record([p[0].to_string(), p[1].to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let g = &self.grid;
        out.write_all(MAGIC)?;
        for v in [VERSION, g.nx() as u32, g.ny() as u32, self.times.len() as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        let o = g.origin();
        let h = g.spacing();
        for v in [o[0], o[1], h[0], h[1], self.log_scale] {
            out.write_all(&v.to_le_bytes())?;
        }
        let mask: Vec<u8> = g
            .mask()
            .iter()
            .map(|k| match k {
                NodeKind::Interior => 0,
                NodeKind::Dirichlet => 1,
                NodeKind::Exterior => 2,
            })
            .collect();
        out.write_all(&mask)?;
        for (t, s) in self.times.iter().zip(&self.slices) {
            out.write_all(&t.to_le_bytes())?;
            for v in s {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::invalid("field", "not a field file"));
        }
        let version = read_u32(&mut input)?;
        if version != VERSION {
            return Err(Error::invalid("field", format!("unsupported version {version}")));
        }
        let nx = read_u32(&mut input)? as usize;
        let ny = read_u32(&mut input)? as usize;
        let ns = read_u32(&mut input)? as usize;
        let origin = [read_f64(&mut input)?, read_f64(&mut input)?];
        let spacing = [read_f64(&mut input)?, read_f64(&mut input)?];
        let log_scale = read_f64(&mut input)?;
        let mut raw = vec![0u8; nx * ny];
        input.read_exact(&mut raw)?;
        let mask = raw
            .iter()
            .map(|b| match b {
                0 => Ok(NodeKind::Interior),
                1 => Ok(NodeKind::Dirichlet),
                2 => Ok(NodeKind::Exterior),
                _ => Err(Error::MaskInconsistent(format!("unknown node tag {b}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let grid = Grid2D::from_parts(nx, ny, origin, spacing, mask)?;
        let mut times = Vec::with_capacity(ns);
        let mut slices = Vec::with_capacity(ns);
        for _ in 0..ns {
            times.push(read_f64(&mut input)?);
            let s = (0..nx * ny).map(|_| read_f64(&mut input)).collect::<Result<Vec<_>>>()?;
            slices.push(s);
        }
        Self::new(grid, times, slices, log_scale)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(f))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Slice index `k` and weight `w` such that `t ≈ (1−w)·times[k] + w·times[k+1]`.
pub(crate) fn time_bracket(times: &[f64], t: f64) -> (usize, f64) {
    if times.len() == 1 || t <= times[0] {
        return (0, 0.0);
    }
    let last = times.len() - 1;
    if t >= times[last] {
        return (last, 0.0);
    }
    let k = times.partition_point(|s| *s <= t) - 1;
    (k, (t - times[k]) / (times[k + 1] - times[k]))
}

pub(crate) fn interpolate(grid: &Grid2D, values: &[f64], p: &[f64]) -> Result<f64> {
    let o = grid.origin();
    let h = grid.spacing();
    let fx = (p[0] - o[0]) / h[0];
    let fy = (p[1] - o[1]) / h[1];
    let tol = 1e-9;
    if !(fx >= -tol && fy >= -tol && fx <= (grid.nx() - 1) as f64 + tol && fy <= (grid.ny() - 1) as f64 + tol) {
        return Err(Error::OutOfGrid { point: p[..2].to_vec() });
    }
    let i = (fx.floor().max(0.0) as usize).min(grid.nx() - 2);
    let j = (fy.floor().max(0.0) as usize).min(grid.ny() - 2);
    let sx = (fx - i as f64).clamp(0.0, 1.0);
    let sy = (fy - j as f64).clamp(0.0, 1.0);
    let corners = [
        (grid.index(i, j), (1.0 - sx) * (1.0 - sy)),
        (grid.index(i + 1, j), sx * (1.0 - sy)),
        (grid.index(i, j + 1), (1.0 - sx) * sy),
        (grid.index(i + 1, j + 1), sx * sy),
    ];
    let mut acc = 0.0;
    let mut wsum = 0.0;
    for (n, w) in corners {
        let v = values[n];
        if v.is_finite() && grid.kind(n) != NodeKind::Exterior {
            acc += w * v;
            wsum += w;
        }
    }
    if wsum <= 1e-12 {
        // point sits on exterior corners only; fall back to any valid corner
        for (n, _) in corners {
            let v = values[n];
            if v.is_finite() && grid.kind(n) != NodeKind::Exterior {
                return Ok(v);
            }
        }
        return Err(Error::OutOfGrid { point: p[..2].to_vec() });
    }
    Ok(acc / wsum)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Grid2D {
        Grid2D::from_box([0.0, 0.0], [1.0, 1.0], 5, 5, |_| true).unwrap()
    }

    #[test]
    fn bilinear_reproduces_linear_fields() {
        let g = square();
        let vals: Vec<f64> = (0..g.len())
            .map(|n| {
                let p = g.point_of(n);
                2.0 * p[0] - p[1] + 0.5
            })
            .collect();
        let f = Field::new(g, vec![0.0], vec![vals], 0.0).unwrap();
        let v = f.interpolate(0, &[0.33, 0.71]).unwrap();
        assert!((v - (0.66 - 0.71 + 0.5)).abs() < 1e-12);
        assert!(matches!(f.interpolate(0, &[1.2, 0.5]), Err(Error::OutOfGrid { .. })));
    }

    #[test]
    fn time_interpolation() {
        let g = square();
        let f = Field::new(g.clone(), vec![0.0, 1.0], vec![vec![0.0; g.len()], vec![2.0; g.len()]], 0.0).unwrap();
        assert!((f.sample(&[0.5, 0.5], 0.25).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(f.sample(&[0.5, 0.5], 5.0).unwrap(), 2.0);
        assert_eq!(time_bracket(&[0.0, 1.0, 2.0], 1.0), (1, 0.0));
    }

    #[test]
    fn binary_round_trip() {
        let g = Grid2D::from_box([-1.0, -1.0], [1.0, 1.0], 7, 6, |p| p[0] * p[0] + p[1] * p[1] < 0.8).unwrap();
        let vals: Vec<f64> = (0..g.len()).map(|n| n as f64 * 0.25).collect();
        let f = Field::new(g, vec![0.0, 0.5], vec![vals.clone(), vals], -3.5).unwrap();
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let back = Field::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back, f);
        assert!(Field::read_binary(&b"XXXX"[..]).is_err());
    }

    #[test]
    fn csv_skips_exterior() {
        let g = Grid2D::from_box([-1.0, -1.0], [1.0, 1.0], 9, 9, |p| p[0] * p[0] + p[1] * p[1] < 0.3).unwrap();
        let active = g.mask().iter().filter(|k| **k != NodeKind::Exterior).count();
        let f = Field::new(g.clone(), vec![0.0], vec![vec![1.0; g.len()]], 0.0).unwrap();
        let mut buf = Vec::new();
        f.write_csv(0, "value", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), active + 1);
        assert!(text.starts_with("x,y,value"));
    }
}
