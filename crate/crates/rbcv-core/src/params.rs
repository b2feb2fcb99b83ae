//! Parameter points and sampling boxes.
//!
//! A model exposes a full coordinate list for its parameter vector; an
//! experiment restricts it through a [`ParameterBox`]: a few coordinates are
//! *active* (sampled uniformly in an interval), some are *frozen* to fixed
//! values, and some are *tied* (copied from another coordinate, e.g. the
//! `b = c` constraint of the volatility experiments).

use crate::error::{Error, Result};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

/// A named real vector identifying one SDE instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterPoint(pub Vec<f64>);

impl ParameterPoint {
    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActiveCoord {
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
}

/// Active/frozen/tied mask over a model's full parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterBox {
    pub names: Vec<String>,
    pub active: Vec<ActiveCoord>,
    /// `(index, value)` pairs.
    pub frozen: Vec<(usize, f64)>,
    /// `(index, source_index)` pairs; the coordinate copies its source.
    pub ties: Vec<(usize, usize)>,
}

impl ParameterBox {
    /// Checks that every coordinate is covered exactly once and bounds are
    /// ordered.
    pub fn validate(&self) -> Result<()> {
        let dim = self.names.len();
        let mut covered = vec![0usize; dim];
        for a in &self.active {
            if a.index >= dim {
                return Err(Error::config(format!("active index {} out of range", a.index)));
            }
            if !(a.lo <= a.hi) {
                return Err(Error::config(format!(
                    "box bounds for {} not ordered: [{}, {}]",
                    self.names[a.index], a.lo, a.hi
                )));
            }
            covered[a.index] += 1;
        }
        for &(i, _) in &self.frozen {
            if i >= dim {
                return Err(Error::config(format!("frozen index {i} out of range")));
            }
            covered[i] += 1;
        }
        for &(i, src) in &self.ties {
            if i >= dim || src >= dim {
                return Err(Error::config(format!("tie {i}<-{src} out of range")));
            }
            if i == src {
                return Err(Error::config(format!("coordinate {i} tied to itself")));
            }
            covered[i] += 1;
        }
        for (i, &c) in covered.iter().enumerate() {
            if c != 1 {
                return Err(Error::config(format!(
                    "coordinate {} covered {} times (must be exactly once)",
                    self.names[i], c
                )));
            }
        }
        // Tie sources must not themselves be ties (one level of indirection
        // keeps reconstruction order-independent).
        for &(_, src) in &self.ties {
            if self.ties.iter().any(|&(i, _)| i == src) {
                return Err(Error::config(format!("tie source {src} is itself tied")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Completes a full parameter vector from values of the active coords.
    pub fn complete(&self, active_values: &[f64]) -> Result<ParameterPoint> {
        if active_values.len() != self.active.len() {
            return Err(Error::invalid(format!(
                "expected {} active values, got {}",
                self.active.len(),
                active_values.len()
            )));
        }
        let mut full = vec![f64::NAN; self.dim()];
        for (a, &v) in self.active.iter().zip(active_values) {
            full[a.index] = v;
        }
        for &(i, v) in &self.frozen {
            full[i] = v;
        }
        for &(i, src) in &self.ties {
            full[i] = full[src];
        }
        Ok(ParameterPoint(full))
    }

    /// Draws `n` uniform points, replicate `r` of `query` giving point `r`.
    pub fn sample(&self, seed: u64, query: u64, n: usize) -> Result<Vec<ParameterPoint>> {
        self.validate()?;
        let mut points = Vec::with_capacity(n);
        let mut u = vec![0.0; self.active.len()];
        for r in 0..n {
            RngStream::new(seed, query, r as u64).fill_uniform(&mut u);
            let vals: Vec<f64> = self
                .active
                .iter()
                .zip(&u)
                .map(|(a, &ui)| a.lo + ui * (a.hi - a.lo))
                .collect();
            points.push(self.complete(&vals)?);
        }
        Ok(points)
    }

    /// The box with every active interval doubled about its center.
    pub fn widened(&self) -> ParameterBox {
        let mut out = self.clone();
        for a in out.active.iter_mut() {
            let center = 0.5 * (a.lo + a.hi);
            let half = a.hi - center;
            a.lo = center - 2.0 * half;
            a.hi = center + 2.0 * half;
        }
        out
    }

    /// True when every coordinate of `p` lies inside the box: active coords
    /// within bounds, frozen coords equal to their value, ties satisfied.
    pub fn contains(&self, p: &ParameterPoint) -> bool {
        if p.dim() != self.dim() {
            return false;
        }
        let c = p.coords();
        self.active.iter().all(|a| c[a.index] >= a.lo && c[a.index] <= a.hi)
            && self.frozen.iter().all(|&(i, v)| c[i] == v)
            && self.ties.iter().all(|&(i, src)| c[i] == c[src])
    }
}
