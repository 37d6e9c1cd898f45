//! Seeded Brownian paths on uniform grids and Brownian-bridge refinement.
//!
//! Increment `k` of `sample_brownian(T, dt, seed)` is `sqrt(h_k)` times normal
//! number `k` of stream [`STREAM_SAMPLE`] under `seed` (see [`crate::rng`]).
//! Refinement draws interior point `i` of coarse interval `k` from normal number
//! `k (factor - 1) + i` of stream [`STREAM_REFINE`].

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{DyadicError, Result};
use crate::rng::{NormalStream, STREAM_REFINE, STREAM_SAMPLE};

const GRID_RTOL: f64 = 1e-9;

/// Uniform grid `0, dt, 2dt, ..., T`; the last interval is shorter when `dt`
/// does not divide `T`.
pub fn uniform_grid(horizon: f64, dt: f64) -> Vec<f64> {
    let ratio = horizon / dt;
    let whole = ratio.round();
    let steps = if (ratio - whole).abs() <= GRID_RTOL * ratio.max(1.0) {
        whole as usize
    } else {
        ratio.floor() as usize + 1
    };
    let mut times: Vec<f64> = (0..steps).map(|k| k as f64 * dt).collect();
    times.push(horizon);
    times
}

/// A sampled scalar path `w` with `w(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePath {
    times: Vec<f64>,
    values: Vec<f64>,
    seed: u64,
    dt: f64,
}

impl NoisePath {
    /// Wraps sampled values, checking `w(0) = 0`, finiteness and grid uniformity.
    pub fn from_samples(times: Vec<f64>, values: Vec<f64>, seed: u64) -> Result<Self> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(DyadicError::contract(
                "a path needs matching times and values with at least two points",
            ));
        }
        if times[0] != 0.0 || values[0] != 0.0 {
            return Err(DyadicError::contract("a path must start at t = 0 with w(0) = 0"));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(DyadicError::contract(format!("path value {k} is not finite")));
        }
        let dt = times[1] - times[0];
        if dt.is_nan() || dt <= 0.0 {
            return Err(DyadicError::contract("path times must increase"));
        }
        let last = times.len() - 1;
        for k in 1..=last {
            let h = times[k] - times[k - 1];
            let uniform = (h - dt).abs() <= GRID_RTOL * dt.max(times[k].abs() * 1e-6);
            let short_tail = k == last && h > 0.0 && h < dt;
            if !(uniform || short_tail) {
                return Err(DyadicError::Grid(format!(
                    "path interval {k} has length {h}, expected {dt}"
                )));
            }
        }
        Ok(NoisePath {
            times,
            values,
            seed,
            dt,
        })
    }

    /// The path identically zero on the grid of `(horizon, dt)`.
    pub fn zero(horizon: f64, dt: f64) -> Result<Self> {
        check_horizon(horizon, dt)?;
        let times = uniform_grid(horizon, dt);
        let values = vec![0.0; times.len()];
        Ok(NoisePath {
            times,
            values,
            seed: 0,
            dt,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("paths are nonempty")
    }

    /// Number of intervals.
    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    /// Pointwise `self + scale * other` on a shared grid.
    pub fn add_scaled(&self, other: &NoisePath, scale: f64) -> Result<NoisePath> {
        if self.times.len() != other.times.len() || self.dt != other.dt {
            return Err(DyadicError::Grid("paths live on different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + scale * b)
            .collect();
        Ok(NoisePath {
            times: self.times.clone(),
            values,
            seed: self.seed,
            dt: self.dt,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["t", "w"])?;
        for (t, w) in self.times.iter().zip(&self.values) {
            out.write_record([t.to_string(), w.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a `t,w` table. The seed is not stored in the file and is supplied
    /// by the caller.
    pub fn read_csv<R: Read>(reader: R, seed: u64) -> Result<Self> {
        let mut input = csv::Reader::from_reader(reader);
        let headers = input.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "w" {
            return Err(DyadicError::contract("path CSV must have columns t,w"));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for record in input.deserialize() {
            let (t, w): (f64, f64) = record?;
            times.push(t);
            values.push(w);
        }
        NoisePath::from_samples(times, values, seed)
    }
}

fn check_horizon(horizon: f64, dt: f64) -> Result<()> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(DyadicError::contract(format!("horizon T = {horizon} must be > 0")));
    }
    if !(dt.is_finite() && dt > 0.0 && dt <= horizon) {
        return Err(DyadicError::contract(format!(
            "grid step dt = {dt} must satisfy 0 < dt <= T"
        )));
    }
    Ok(())
}

/// Samples a standard Brownian path on the grid of `(horizon, dt)`.
pub fn sample_brownian(horizon: f64, dt: f64, seed: u64) -> Result<NoisePath> {
    check_horizon(horizon, dt)?;
    let times = uniform_grid(horizon, dt);
    let mut normals = NormalStream::new(seed, STREAM_SAMPLE, 0);
    let mut values = Vec::with_capacity(times.len());
    values.push(0.0);
    let mut w = 0.0;
    for k in 1..times.len() {
        w += (times[k] - times[k - 1]).sqrt() * normals.next_normal();
        values.push(w);
    }
    Ok(NoisePath {
        times,
        values,
        seed,
        dt,
    })
}

/// Inserts `factor - 1` bridge points into every interval of `path`.
pub fn refine(path: &NoisePath, factor: usize, seed: u64) -> Result<NoisePath> {
    if factor < 2 {
        return Err(DyadicError::contract(format!(
            "refinement factor {factor} must be >= 2"
        )));
    }
    let mut normals = NormalStream::new(seed, STREAM_REFINE, 0);
    let n = path.intervals();
    let mut times = Vec::with_capacity(n * factor + 1);
    let mut values = Vec::with_capacity(n * factor + 1);
    times.push(path.times[0]);
    values.push(path.values[0]);
    for k in 0..n {
        let (t0, t1) = (path.times[k], path.times[k + 1]);
        let end = path.values[k + 1];
        let h = (t1 - t0) / factor as f64;
        let mut x = path.values[k];
        for i in 1..factor {
            let t = t0 + (i - 1) as f64 * h;
            let remaining = t1 - t;
            let mean = x + (end - x) * h / remaining;
            let var = h * (remaining - h) / remaining;
            x = mean + var.max(0.0).sqrt() * normals.next_normal();
            times.push(t0 + i as f64 * h);
            values.push(x);
        }
        times.push(t1);
        values.push(end);
    }
    Ok(NoisePath {
        times,
        values,
        seed: path.seed,
        dt: path.dt / factor as f64,
    })
}

/// Largest `|w(t_k)|` over the grid; a lower estimate of the continuous sup.
pub fn sup_norm(path: &NoisePath) -> f64 {
    path.values.iter().fold(0.0, |m, v| m.max(v.abs()))
}
