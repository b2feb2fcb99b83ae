//! Crank–Nicolson finite-difference solver for the Black–Scholes PDE
//!
//! ```text
//! dC/dt - r C + r S dC/dS + sigma(t,S)^2 S^2 / 2 d2C/dS2 = 0
//! C(T, S) = max(S - K, 0)
//! ```
//!
//! solved backward on `[0, T] x [0, S_max]` with second-order central
//! differences in space. The `S = 0` row needs no boundary condition: the
//! advection and diffusion coefficients vanish there and the row reduces to
//! `dC/dt = r C`. The truncation boundary `S = S_max` carries the Dirichlet
//! value `(3 - e^{-r (T - t)}) K` on the last column.

use crate::error::{Error, Result};
use crate::pde::grid::GridFunction;

/// Time- and space-dependent volatility surface `sigma(t, S)`.
pub trait VolSurface: Sync {
    fn vol(&self, t: f64, s: f64) -> f64;
}

impl<F: Fn(f64, f64) -> f64 + Sync> VolSurface for F {
    fn vol(&self, t: f64, s: f64) -> f64 {
        self(t, s)
    }
}

/// Solves one tridiagonal system `a_j x_{j-1} + b_j x_j + c_j x_{j+1} = d_j`
/// in place by the Thomas algorithm. `d` holds the solution on return.
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64], scratch: &mut [f64]) {
    let n = d.len();
    scratch[0] = c[0] / b[0];
    d[0] /= b[0];
    for j in 1..n {
        let denom = b[j] - a[j] * scratch[j - 1];
        scratch[j] = c[j] / denom;
        d[j] = (d[j] - a[j] * d[j - 1]) / denom;
    }
    for j in (0..n - 1).rev() {
        d[j] -= scratch[j] * d[j + 1];
    }
}

/// Crank–Nicolson solve of the call-price surface; returns the grid with the
/// precomputed spatial derivative.
pub fn solve_bs_crank_nicolson(
    vol: &dyn VolSurface,
    strike: f64,
    rate: f64,
    horizon: f64,
    time_steps: usize,
    space_steps: usize,
    s_max: f64,
) -> Result<GridFunction> {
    if time_steps < 2 || space_steps < 2 {
        return Err(Error::invalid("grid needs at least 2 steps in each direction"));
    }
    if strike <= 0.0 || s_max <= 0.0 || horizon <= 0.0 {
        return Err(Error::invalid("strike, S_max and horizon must be positive"));
    }

    let l_steps = time_steps;
    let j_steps = space_steps;
    let cols = j_steps + 1;
    let dt = horizon / l_steps as f64;
    let ds = s_max / j_steps as f64;

    let mut values = vec![0.0; (l_steps + 1) * cols];

    // Terminal slice: the payoff, exactly.
    for j in 0..=j_steps {
        values[l_steps * cols + j] = ((j as f64) * ds - strike).max(0.0);
    }

    // Spatial operator rows at one time level. Row j of A C:
    //   (dif - adv) C_{j-1} + (-2 dif - r) C_j + (dif + adv) C_{j+1}
    // with adv = r S_j / (2 ds), dif = sigma^2 S_j^2 / (2 ds^2).
    // Row 0 collapses to -r C_0; row J is replaced by the Dirichlet value.
    let operator_row = |sig: f64, j: usize| -> (f64, f64, f64) {
        let s = j as f64 * ds;
        let adv = rate * s / (2.0 * ds);
        let dif = 0.5 * sig * sig * s * s / (ds * ds);
        (dif - adv, -2.0 * dif - rate, dif + adv)
    };

    let mut vol_row = vec![0.0; cols];
    let mut vol_row_next = vec![0.0; cols];
    let fill_vol = |t: f64, out: &mut [f64]| {
        out[0] = 0.0; // multiplied by S^2 = 0; never evaluated at S = 0
        for j in 1..cols {
            out[j] = vol.vol(t, j as f64 * ds);
        }
    };
    fill_vol(horizon, &mut vol_row_next);

    let mut sub = vec![0.0; cols];
    let mut diag = vec![0.0; cols];
    let mut sup = vec![0.0; cols];
    let mut rhs = vec![0.0; cols];
    let mut scratch = vec![0.0; cols];
    let mut c_next = vec![0.0; cols];

    for l in (0..l_steps).rev() {
        let t = l as f64 * dt;
        fill_vol(t, &mut vol_row);
        c_next.copy_from_slice(&values[(l + 1) * cols..(l + 2) * cols]);

        // RHS: (I + dt/2 A(t_{l+1})) C_{l+1}.
        rhs[0] = (1.0 - 0.5 * dt * rate) * c_next[0];
        for j in 1..j_steps {
            let (lo, mid, hi) = operator_row(vol_row_next[j], j);
            rhs[j] = c_next[j]
                + 0.5 * dt * (lo * c_next[j - 1] + mid * c_next[j] + hi * c_next[j + 1]);
        }
        rhs[j_steps] = (3.0 - (-rate * (horizon - t)).exp()) * strike;

        // LHS: (I - dt/2 A(t_l)).
        sub[0] = 0.0;
        diag[0] = 1.0 + 0.5 * dt * rate;
        sup[0] = 0.0;
        for j in 1..j_steps {
            let (lo, mid, hi) = operator_row(vol_row[j], j);
            sub[j] = -0.5 * dt * lo;
            diag[j] = 1.0 - 0.5 * dt * mid;
            sup[j] = -0.5 * dt * hi;
        }
        sub[j_steps] = 0.0;
        diag[j_steps] = 1.0;
        sup[j_steps] = 0.0;

        thomas(&sub, &diag, &sup, &mut rhs, &mut scratch);

        if !rhs.iter().all(|v| v.is_finite()) {
            return Err(Error::Solver(format!(
                "non-finite Crank-Nicolson slice at l={l} (dt={dt}, ds={ds})"
            )));
        }
        values[l * cols..(l + 1) * cols].copy_from_slice(&rhs);
        std::mem::swap(&mut vol_row, &mut vol_row_next);
    }

    GridFunction::from_values(l_steps, j_steps, horizon, s_max, values)
}
