//! Independent closed-form references used by tests and `oracle-check`.
//!
//! Nothing here shares code with the solvers it validates: the call price
//! comes from the lognormal formula, and the matrix exponential from
//! scaling-and-squaring of a Taylor series.

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Black–Scholes call price (discounted) for constant volatility.
pub fn black_scholes_call(spot: f64, strike: f64, rate: f64, sigma: f64, horizon: f64) -> f64 {
    if horizon <= 0.0 {
        return (spot - strike).max(0.0);
    }
    let st = sigma * horizon.sqrt();
    let d1 = ((spot / strike).ln() + (rate + 0.5 * sigma * sigma) * horizon) / st;
    let d2 = d1 - st;
    spot * norm_cdf(d1) - strike * (-rate * horizon).exp() * norm_cdf(d2)
}

/// Dense matrix exponential `exp(A)` for a small row-major `d x d` matrix,
/// by scaling-and-squaring with a Taylor series.
pub fn expm(a: &[f64], d: usize) -> Vec<f64> {
    assert_eq!(a.len(), d * d);
    let norm: f64 = a.iter().map(|v| v.abs()).fold(0.0, f64::max) * d as f64;
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scale = 0.5f64.powi(squarings as i32);
    let scaled: Vec<f64> = a.iter().map(|v| v * scale).collect();

    let mut result = vec![0.0; d * d];
    for i in 0..d {
        result[i * d + i] = 1.0;
    }
    let mut term = result.clone();
    for k in 1..=24 {
        let mut next = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for l in 0..d {
                    s += term[i * d + l] * scaled[l * d + j];
                }
                next[i * d + j] = s / k as f64;
            }
        }
        term = next;
        for idx in 0..d * d {
            result[idx] += term[idx];
        }
    }
    for _ in 0..squarings {
        let mut sq = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for l in 0..d {
                    s += result[i * d + l] * result[l * d + j];
                }
                sq[i * d + j] = s;
            }
        }
        result = sq;
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_cdf_reference_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((norm_cdf(1.96) - 0.9750021048517795).abs() < 1e-12);
        assert!((norm_cdf(-1.0) - 0.15865525393145707).abs() < 1e-12);
    }

    #[test]
    fn call_price_reference_value() {
        // Hull-style check: S=42, K=40, r=0.10, sigma=0.2, T=0.5.
        let p = black_scholes_call(42.0, 40.0, 0.10, 0.2, 0.5);
        assert!((p - 4.759422392871532).abs() < 1e-9, "price {p}");
    }

    #[test]
    fn expm_of_diagonal_and_nilpotent() {
        let e = expm(&[1.0, 0.0, 0.0, 2.0], 2);
        assert!((e[0] - 1.0f64.exp()).abs() < 1e-12);
        assert!((e[3] - 2.0f64.exp()).abs() < 1e-12);
        assert!(e[1].abs() < 1e-14 && e[2].abs() < 1e-14);

        // Nilpotent: exp([[0,1],[0,0]]) = [[1,1],[0,1]].
        let e = expm(&[0.0, 1.0, 0.0, 0.0], 2);
        assert!((e[0] - 1.0).abs() < 1e-14);
        assert!((e[1] - 1.0).abs() < 1e-14);
        assert!(e[2].abs() < 1e-14);
        assert!((e[3] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn expm_inverse_property() {
        let a = [0.3, -0.7, 0.2, -0.1];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let e = expm(&a, 2);
        let einv = expm(&neg, 2);
        // e * einv = I
        for i in 0..2 {
            for j in 0..2 {
                let s: f64 = (0..2).map(|k| e[i * 2 + k] * einv[k * 2 + j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-12);
            }
        }
    }
}
