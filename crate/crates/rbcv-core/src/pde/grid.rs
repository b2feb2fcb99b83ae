//! Time–space grid values of a PDE solution and its spatial derivative,
//! with bilinear interpolation.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

/// Which stored surface to interpolate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridField {
    Value,
    Derivative,
}

/// Uniform-grid values `C_{l,j}` on `[0, T] x [0, S_max]` together with the
/// precomputed spatial derivative `D_{l,j}`.
///
/// Queries outside the domain are clamped to the boundary value; every clamp
/// is counted so callers can flag runs where clamping matters.
#[derive(Debug)]
pub struct GridFunction {
    time_steps: usize,
    space_steps: usize,
    horizon: f64,
    s_max: f64,
    /// `(L+1) * (J+1)` row-major in `[l][j]`.
    values: Vec<f64>,
    derivs: Vec<f64>,
    clamped: AtomicU64,
    queries: AtomicU64,
}

impl Clone for GridFunction {
    fn clone(&self) -> Self {
        GridFunction {
            time_steps: self.time_steps,
            space_steps: self.space_steps,
            horizon: self.horizon,
            s_max: self.s_max,
            values: self.values.clone(),
            derivs: self.derivs.clone(),
            clamped: AtomicU64::new(0),
            queries: AtomicU64::new(0),
        }
    }
}

impl GridFunction {
    /// Wraps raw grids; `values` holds `(L+1)*(J+1)` entries. The derivative
    /// grid is built by central differences, one-sided at the edges.
    pub fn from_values(
        time_steps: usize,
        space_steps: usize,
        horizon: f64,
        s_max: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        let expected = (time_steps + 1) * (space_steps + 1);
        if values.len() != expected {
            return Err(Error::invalid(format!(
                "grid has {} entries, expected {}",
                values.len(),
                expected
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Solver("non-finite grid values".into()));
        }
        let ds = s_max / space_steps as f64;
        let cols = space_steps + 1;
        let mut derivs = vec![0.0; values.len()];
        for l in 0..=time_steps {
            let row = &values[l * cols..(l + 1) * cols];
            let drow = &mut derivs[l * cols..(l + 1) * cols];
            drow[0] = (row[1] - row[0]) / ds;
            for j in 1..space_steps {
                drow[j] = (row[j + 1] - row[j - 1]) / (2.0 * ds);
            }
            drow[space_steps] = (row[space_steps] - row[space_steps - 1]) / ds;
        }
        Ok(GridFunction {
            time_steps,
            space_steps,
            horizon,
            s_max,
            values,
            derivs,
            clamped: AtomicU64::new(0),
            queries: AtomicU64::new(0),
        })
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn space_steps(&self) -> usize {
        self.space_steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn node(&self, l: usize, j: usize) -> f64 {
        self.values[l * (self.space_steps + 1) + j]
    }

    pub fn node_deriv(&self, l: usize, j: usize) -> f64 {
        self.derivs[l * (self.space_steps + 1) + j]
    }

    /// `(clamped, total)` query counters since construction or last reset.
    pub fn clamp_stats(&self) -> (u64, u64) {
        (
            self.clamped.load(Ordering::Relaxed),
            self.queries.load(Ordering::Relaxed),
        )
    }

    pub fn reset_clamp_stats(&self) {
        self.clamped.store(0, Ordering::Relaxed);
        self.queries.store(0, Ordering::Relaxed);
    }

    /// Bilinear interpolation on the enclosing tile, clamped to the domain.
    pub fn interpolate(&self, t: f64, s: f64, which: GridField) -> f64 {
        self.queries.fetch_add(1, Ordering::Relaxed);
        let mut clamped = false;
        let mut tt = t;
        if tt < 0.0 {
            tt = 0.0;
            clamped = true;
        } else if tt > self.horizon {
            tt = self.horizon;
            clamped = true;
        }
        let mut ss = s;
        if ss < 0.0 {
            ss = 0.0;
            clamped = true;
        } else if ss > self.s_max {
            ss = self.s_max;
            clamped = true;
        }
        if clamped {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }

        let lf = tt / self.horizon * self.time_steps as f64;
        let jf = ss / self.s_max * self.space_steps as f64;
        let l0 = (lf.floor() as usize).min(self.time_steps - 1);
        let j0 = (jf.floor() as usize).min(self.space_steps - 1);
        let wt = lf - l0 as f64;
        let ws = jf - j0 as f64;

        let grid = match which {
            GridField::Value => &self.values,
            GridField::Derivative => &self.derivs,
        };
        let cols = self.space_steps + 1;
        let g = |l: usize, j: usize| grid[l * cols + j];
        (1.0 - wt) * ((1.0 - ws) * g(l0, j0) + ws * g(l0, j0 + 1))
            + wt * ((1.0 - ws) * g(l0 + 1, j0) + ws * g(l0 + 1, j0 + 1))
    }

    /// Writes the grid as flat little-endian binary:
    /// magic `RBGF`, version u32, then L, J as u64, T, S_max as f64,
    /// then row-major values and derivatives.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"RBGF")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.time_steps as u64).to_le_bytes())?;
        w.write_all(&(self.space_steps as u64).to_le_bytes())?;
        w.write_all(&self.horizon.to_le_bytes())?;
        w.write_all(&self.s_max.to_le_bytes())?;
        for v in self.values.iter().chain(self.derivs.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"RBGF" {
            return Err(Error::Serialization("bad grid file magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != 1 {
            return Err(Error::Serialization("unsupported grid file version".into()));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let time_steps = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let space_steps = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let horizon = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let s_max = f64::from_le_bytes(b8);
        let n = (time_steps + 1) * (space_steps + 1);
        let mut read_vec = |len: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut b8)?;
                out.push(f64::from_le_bytes(b8));
            }
            Ok(out)
        };
        let values = read_vec(n)?;
        let derivs = read_vec(n)?;
        Ok(GridFunction {
            time_steps,
            space_steps,
            horizon,
            s_max,
            values,
            derivs,
            clamped: AtomicU64::new(0),
            queries: AtomicU64::new(0),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> GridFunction {
        // 2x2 tiles on [0,1]x[0,2]: values = t + 10 s at the nodes.
        let mut vals = Vec::new();
        for l in 0..=2 {
            for j in 0..=2 {
                vals.push(l as f64 * 0.5 + 10.0 * (j as f64));
            }
        }
        GridFunction::from_values(2, 2, 1.0, 2.0, vals).unwrap()
    }

    #[test]
    fn nodes_reproduce_exactly() {
        let g = small_grid();
        assert_eq!(g.interpolate(0.5, 1.0, GridField::Value), 0.5 + 10.0);
        assert_eq!(g.interpolate(1.0, 2.0, GridField::Value), 1.0 + 20.0);
        assert_eq!(g.clamp_stats().0, 0);
    }

    #[test]
    fn tile_midpoint_is_average_of_corners() {
        let g = small_grid();
        let v = g.interpolate(0.25, 0.5, GridField::Value);
        let corners = [g.node(0, 0), g.node(0, 1), g.node(1, 0), g.node(1, 1)];
        let avg = corners.iter().sum::<f64>() / 4.0;
        assert!((v - avg).abs() < 1e-14);
    }

    #[test]
    fn out_of_domain_clamps_and_flags() {
        let g = small_grid();
        let inside = g.interpolate(0.5, 2.0, GridField::Value);
        let outside = g.interpolate(0.5, 3.5, GridField::Value);
        assert_eq!(inside, outside);
        let (clamped, total) = g.clamp_stats();
        assert_eq!(clamped, 1);
        assert_eq!(total, 2);
    }

    #[test]
    fn derivative_grid_matches_linear_surface() {
        // Values linear in s, slope 10: central and one-sided agree.
        let g = small_grid();
        for l in 0..=2 {
            for j in 0..=2 {
                assert!((g.node_deriv(l, j) - 10.0).abs() < 1e-12);
            }
        }
        assert!((g.interpolate(0.3, 1.7, GridField::Derivative) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let g = small_grid();
        let mut buf = Vec::new();
        g.write_binary(&mut buf).unwrap();
        let h = GridFunction::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(g.values, h.values);
        assert_eq!(g.derivs, h.derivs);
        assert_eq!(g.s_max, h.s_max);
    }
}
