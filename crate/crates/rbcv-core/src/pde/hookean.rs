//! Exact backward Kolmogorov solution for Hookean dumbbells.
//!
//! For drift `(lambda - I) y`, unit diffusion and terminal output
//! `g(y) = y_i y_j`, the solution of
//!
//! ```text
//! du/dt + ((lambda - I) y) . grad u + (1/2) Laplacian u = 0,  u(T, y) = g(y)
//! ```
//!
//! is the quadratic form `u(t, y) = y' A(t) y + c(t)` where
//!
//! ```text
//! A'(t) = -(lambda - I)' A(t) - A(t) (lambda - I),   A(T) = (e_i e_j' + e_j e_i') / 2
//! c'(t) = -tr A(t),                                  c(T) = 0
//! ```
//!
//! and the gradient used by the control variates is `grad u(t, y) = 2 A(t) y`.
//! The matrix ODE is integrated backward with classical fourth-order
//! one-step integration on a uniform grid.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// The matrix path `A(t_l)` (plus the scalar offset `c(t_l)`) on a uniform
/// time grid, for one terminal component `(i, j)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HookeanKolmogorov {
    pub dim: usize,
    pub horizon: f64,
    /// Zero-based output component.
    pub component: (usize, usize),
    /// `(L+1) * dim * dim`, `a_path[l]` is `A(t_l)` row-major.
    pub a_path: Vec<f64>,
    /// `c(t_l)`, length `L+1`.
    pub c_path: Vec<f64>,
}

fn mat_mul(a: &[f64], b: &[f64], out: &mut [f64], d: usize) {
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += a[i * d + k] * b[k * d + j];
            }
            out[i * d + j] = s;
        }
    }
}

/// `-(lambda - I)' A - A (lambda - I)` and `-tr A`.
fn ode_rhs(drift_mat: &[f64], a: &[f64], d: usize, out_a: &mut [f64], out_c: &mut f64) {
    let mut ba = vec![0.0; d * d];
    let mut ab = vec![0.0; d * d];
    // (lambda - I)' A: entry (i,j) = sum_k drift[k,i] a[k,j]
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += drift_mat[k * d + i] * a[k * d + j];
            }
            ba[i * d + j] = s;
        }
    }
    mat_mul(a, drift_mat, &mut ab, d);
    for idx in 0..d * d {
        out_a[idx] = -(ba[idx] + ab[idx]);
    }
    *out_c = -(0..d).map(|i| a[i * d + i]).sum::<f64>();
}

/// Integrates the matrix ODE backward from `t = T` on `time_steps + 1` nodes.
///
/// `lambda_mat` is the `dim x dim` velocity-gradient matrix (row-major); it
/// must be trace-free.
pub fn solve_hookean_kolmogorov(
    lambda_mat: &[f64],
    dim: usize,
    component: (usize, usize),
    horizon: f64,
    time_steps: usize,
) -> Result<HookeanKolmogorov> {
    if lambda_mat.len() != dim * dim {
        return Err(Error::invalid("lambda matrix has wrong size"));
    }
    let trace: f64 = (0..dim).map(|i| lambda_mat[i * dim + i]).sum();
    if trace != 0.0 {
        return Err(Error::invalid(format!("lambda matrix must be trace-free, got trace {trace}")));
    }
    if component.0 >= dim || component.1 >= dim {
        return Err(Error::invalid("output component out of range"));
    }
    if time_steps == 0 || horizon <= 0.0 {
        return Err(Error::invalid("need a positive horizon and at least one step"));
    }

    let d = dim;
    // drift matrix lambda - I
    let mut drift_mat = lambda_mat.to_vec();
    for i in 0..d {
        drift_mat[i * d + i] -= 1.0;
    }

    let mut a_path = vec![0.0; (time_steps + 1) * d * d];
    let mut c_path = vec![0.0; time_steps + 1];

    // Terminal condition at l = L.
    let (ci, cj) = component;
    {
        let a_t = &mut a_path[time_steps * d * d..];
        a_t[ci * d + cj] += 0.5;
        a_t[cj * d + ci] += 0.5;
    }

    // March backward in t; RK4 with step -h on the augmented state (A, c).
    let h = horizon / time_steps as f64;
    let mut k1 = vec![0.0; d * d];
    let mut k2 = vec![0.0; d * d];
    let mut k3 = vec![0.0; d * d];
    let mut k4 = vec![0.0; d * d];
    let mut tmp = vec![0.0; d * d];
    for l in (0..time_steps).rev() {
        let (head, tail) = a_path.split_at_mut((l + 1) * d * d);
        let a_next = &tail[..d * d];
        let a_cur = &mut head[l * d * d..];
        let c_next = c_path[l + 1];

        let (mut c1, mut c2, mut c3, mut c4) = (0.0, 0.0, 0.0, 0.0);
        ode_rhs(&drift_mat, a_next, d, &mut k1, &mut c1);
        for idx in 0..d * d {
            tmp[idx] = a_next[idx] - 0.5 * h * k1[idx];
        }
        ode_rhs(&drift_mat, &tmp, d, &mut k2, &mut c2);
        for idx in 0..d * d {
            tmp[idx] = a_next[idx] - 0.5 * h * k2[idx];
        }
        ode_rhs(&drift_mat, &tmp, d, &mut k3, &mut c3);
        for idx in 0..d * d {
            tmp[idx] = a_next[idx] - h * k3[idx];
        }
        ode_rhs(&drift_mat, &tmp, d, &mut k4, &mut c4);
        for idx in 0..d * d {
            a_cur[idx] =
                a_next[idx] - h / 6.0 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
        }
        c_path[l] = c_next - h / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4);
    }

    Ok(HookeanKolmogorov {
        dim,
        horizon,
        component,
        a_path,
        c_path,
    })
}

impl HookeanKolmogorov {
    pub fn time_steps(&self) -> usize {
        self.c_path.len() - 1
    }

    pub fn a_at_node(&self, l: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.a_path[l * dd..(l + 1) * dd]
    }

    /// `A(t)` by linear interpolation between grid nodes, clamped to `[0,T]`.
    pub fn a_at(&self, t: f64, out: &mut [f64]) {
        let steps = self.time_steps();
        let tt = t.clamp(0.0, self.horizon);
        let lf = tt / self.horizon * steps as f64;
        let l0 = (lf.floor() as usize).min(steps - 1);
        let w = lf - l0 as f64;
        let a0 = self.a_at_node(l0);
        let a1 = self.a_at_node(l0 + 1);
        for idx in 0..self.dim * self.dim {
            out[idx] = (1.0 - w) * a0[idx] + w * a1[idx];
        }
    }

    /// `grad u(t, y) = 2 A(t) y`; allocation-free on the hot path for the
    /// dumbbell dimensions.
    pub fn gradient(&self, t: f64, y: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mut stack = [0.0f64; 16];
        let mut heap;
        let a: &mut [f64] = if d * d <= stack.len() {
            &mut stack[..d * d]
        } else {
            heap = vec![0.0; d * d];
            &mut heap
        };
        self.a_at(t, a);
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += a[i * d + j] * y[j];
            }
            out[i] = 2.0 * s;
        }
    }

    /// Flat little-endian binary: magic `RBHK`, version u32, then dim, L,
    /// component as u64, horizon f64, the matrix path and the offset path.
    pub fn write_binary<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"RBHK")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&(self.time_steps() as u64).to_le_bytes())?;
        w.write_all(&(self.component.0 as u64).to_le_bytes())?;
        w.write_all(&(self.component.1 as u64).to_le_bytes())?;
        w.write_all(&self.horizon.to_le_bytes())?;
        for v in self.a_path.iter().chain(self.c_path.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: std::io::Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"RBHK" {
            return Err(Error::Serialization("bad quadratic payload magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != 1 {
            return Err(Error::Serialization("unsupported payload version".into()));
        }
        let mut b8 = [0u8; 8];
        let mut read_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let dim = read_u64(r)? as usize;
        let steps = read_u64(r)? as usize;
        let ci = read_u64(r)? as usize;
        let cj = read_u64(r)? as usize;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let horizon = f64::from_le_bytes(b8);
        let mut read_vec = |len: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut b8)?;
                out.push(f64::from_le_bytes(b8));
            }
            Ok(out)
        };
        let a_path = read_vec((steps + 1) * dim * dim)?;
        let c_path = read_vec(steps + 1)?;
        Ok(HookeanKolmogorov {
            dim,
            horizon,
            component: (ci, cj),
            a_path,
            c_path,
        })
    }

    /// `u(t_l, y)` at a grid node (used by the PDE-residual self test).
    pub fn u_at_node(&self, l: usize, y: &[f64]) -> f64 {
        let d = self.dim;
        let a = self.a_at_node(l);
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += y[i] * a[i * d + j] * y[j];
            }
        }
        s + self.c_path[l]
    }
}
