//! Domain types of the truncated dyadic model and the pure operations on them.
//!
//! The truncated system keeps shells `0..=N` and closes with `u_{N+1} = 0`:
//!
//! ```text
//! du_0 = -u_0 u_1 dt + sigma dW
//! du_j = (-2^{cj} u_j u_{j+1} + 2^{c(j-1)} u_{j-1}^2) dt,   1 <= j <= N
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{DyadicError, Result};

/// Largest intermittency exponent accepted by the model.
pub const C_MAX: f64 = 3.0;
/// Smallest intermittency exponent accepted by the model.
pub const C_MIN: f64 = 1.0;

/// Parameters of one run of the truncated model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    c: f64,
    sigma: f64,
    horizon: f64,
    n: usize,
    dt: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    c: f64,
    sigma: f64,
    #[serde(rename = "T")]
    horizon: f64,
    #[serde(rename = "N")]
    n: usize,
    dt: f64,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = DyadicError;

    fn try_from(raw: RawParams) -> Result<Self> {
        ModelParams::new(raw.c, raw.sigma, raw.horizon, raw.n, raw.dt)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        RawParams {
            c: p.c,
            sigma: p.sigma,
            horizon: p.horizon,
            n: p.n,
            dt: p.dt,
        }
    }
}

impl ModelParams {
    /// Validates and builds a parameter set.
    ///
    /// `c` must lie in `[1, 3]`, `sigma >= 0`, `0 < dt <= horizon` and `n >= 1`.
    pub fn new(c: f64, sigma: f64, horizon: f64, n: usize, dt: f64) -> Result<Self> {
        if !(C_MIN..=C_MAX).contains(&c) {
            return Err(DyadicError::contract(format!(
                "intermittency c = {c} outside [{C_MIN}, {C_MAX}]"
            )));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(DyadicError::contract(format!("sigma = {sigma} must be >= 0")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(DyadicError::contract(format!("horizon T = {horizon} must be > 0")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(DyadicError::contract(format!("step dt = {dt} must be > 0")));
        }
        if dt > horizon {
            return Err(DyadicError::contract(format!(
                "step dt = {dt} exceeds horizon T = {horizon}"
            )));
        }
        if n < 1 {
            return Err(DyadicError::contract("truncation level N must be >= 1"));
        }
        Ok(ModelParams {
            c,
            sigma,
            horizon,
            n,
            dt,
        })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Time horizon `T`.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Truncation level `N`; states carry `N + 1` components.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        ModelParams::new(self.c, self.sigma, horizon, self.n, self.dt.min(horizon))
    }

    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        ModelParams::new(self.c, self.sigma, self.horizon, self.n, dt)
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        ModelParams::new(self.c, sigma, self.horizon, self.n, self.dt)
    }

    pub fn with_truncation(&self, n: usize) -> Result<Self> {
        ModelParams::new(self.c, self.sigma, self.horizon, n, self.dt)
    }

    /// Rejects `c = 3`, where the contraction and uniqueness results do not apply.
    pub fn require_subcritical(&self) -> Result<()> {
        if self.c < C_MAX {
            Ok(())
        } else {
            Err(DyadicError::contract(format!(
                "operation requires c < {C_MAX}, got c = {}",
                self.c
            )))
        }
    }

    /// Coupling coefficients `2^{cj}` for `j = 0..=N`.
    pub fn coefficients(&self) -> Vec<f64> {
        (0..=self.n).map(|j| libm::exp2(self.c * j as f64)).collect()
    }
}

/// A truncated state `u_0..u_N` lying in `H_+` (nonnegative for `j >= 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ShellState(Vec<f64>);

impl TryFrom<Vec<f64>> for ShellState {
    type Error = DyadicError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ShellState::new(values)
    }
}

impl From<ShellState> for Vec<f64> {
    fn from(s: ShellState) -> Self {
        s.0
    }
}

impl ShellState {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(DyadicError::contract("a state needs at least two shells"));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(DyadicError::contract(format!("shell {j} is not finite")));
        }
        if let Some(j) = values.iter().skip(1).position(|&v| v < 0.0) {
            return Err(DyadicError::contract(format!(
                "shell {} is negative ({}); states must lie in H+",
                j + 1,
                values[j + 1]
            )));
        }
        Ok(ShellState(values))
    }

    /// The zero state with `n + 1` shells.
    pub fn zeros(n: usize) -> Self {
        ShellState(vec![0.0; n + 1])
    }

    /// Builds a state of truncation `n` from the leading shells in `head`,
    /// padding the remainder with zeros.
    pub fn padded(head: &[f64], n: usize) -> Result<Self> {
        if head.len() > n + 1 {
            return Err(DyadicError::contract(format!(
                "{} shells given for truncation N = {n}",
                head.len()
            )));
        }
        let mut values = vec![0.0; n + 1];
        values[..head.len()].copy_from_slice(head);
        ShellState::new(values)
    }

    /// Clamps negative shells `j >= 1` to zero; returns the projected state and
    /// the number of clamped entries. Non-finite input is rejected.
    pub fn project(mut values: Vec<f64>) -> Result<(Self, usize)> {
        let mut clamped = 0;
        for v in values.iter_mut().skip(1) {
            if *v < 0.0 {
                *v = 0.0;
                clamped += 1;
            }
        }
        Ok((ShellState::new(values)?, clamped))
    }

    pub(crate) fn from_trusted(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        debug_assert!(values.iter().skip(1).all(|&v| v >= 0.0));
        ShellState(values)
    }

    /// Truncation level `N`.
    pub fn truncation(&self) -> usize {
        self.0.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, j: usize) -> f64 {
        self.0[j]
    }

    /// Euclidean (`l^2`) norm.
    pub fn l2_norm(&self) -> f64 {
        sobolev_norm_sq(self, SobolevIndex::ENERGY).sqrt()
    }

    pub fn energy(&self) -> f64 {
        sobolev_norm_sq(self, SobolevIndex::ENERGY)
    }

    pub(crate) fn check_truncation(&self, params: &ModelParams) -> Result<()> {
        if self.truncation() == params.n() {
            Ok(())
        } else {
            Err(DyadicError::contract(format!(
                "state has {} shells but N = {} requires {}",
                self.0.len(),
                params.n(),
                params.n() + 1
            )))
        }
    }
}

/// Exponent `alpha` of the weighted norm `sum_j 2^{2 alpha j} u_j^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevIndex(f64);

impl SobolevIndex {
    /// `alpha = 0`, the energy norm.
    pub const ENERGY: SobolevIndex = SobolevIndex(0.0);
    /// `alpha = -1/2`, the metric in which synchronous coupling contracts.
    pub const CONTRACTION: SobolevIndex = SobolevIndex(-0.5);

    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() {
            Ok(SobolevIndex(alpha))
        } else {
            Err(DyadicError::contract("Sobolev exponent must be finite"))
        }
    }

    pub fn alpha(self) -> f64 {
        self.0
    }
}

/// Squared weighted norm of an arbitrary coefficient slice.
///
/// Terms are summed from the highest shell down with compensated summation so
/// the small high-shell contributions are not lost against the low shells.
pub fn weighted_norm_sq(values: &[f64], alpha: SobolevIndex) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (j, &v) in values.iter().enumerate().rev() {
        let term = libm::exp2(2.0 * alpha.0 * j as f64) * v * v;
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Squared weighted distance `||a - b||_alpha^2` between two equally long slices.
pub fn weighted_distance_sq(a: &[f64], b: &[f64], alpha: SobolevIndex) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    weighted_norm_sq(&diff, alpha)
}

pub fn sobolev_norm_sq(state: &ShellState, alpha: SobolevIndex) -> f64 {
    weighted_norm_sq(&state.0, alpha)
}

/// Drift of the truncated system without the noise term.
pub fn drift(state: &ShellState, params: &ModelParams) -> Result<Vec<f64>> {
    state.check_truncation(params)?;
    let coeffs = params.coefficients();
    let mut out = vec![0.0; state.0.len()];
    drift_into(&state.0, &coeffs, &mut out);
    Ok(out)
}

/// Writes the truncated drift of `u` into `out`; `coeffs[j] = 2^{cj}`.
pub(crate) fn drift_into(u: &[f64], coeffs: &[f64], out: &mut [f64]) {
    let n = u.len() - 1;
    out[0] = -u[0] * u[1];
    for j in 1..=n {
        let gain = coeffs[j - 1] * u[j - 1] * u[j - 1];
        let loss = if j < n { coeffs[j] * u[j] * u[j + 1] } else { 0.0 };
        out[j] = gain - loss;
    }
}

/// Energy flux `2^{cj+1} u_j^2 u_{j+1}` through shell `j` (towards `j + 1`).
pub fn flux(state: &ShellState, j: usize, params: &ModelParams) -> Result<f64> {
    state.check_truncation(params)?;
    if j >= params.n() {
        return Err(DyadicError::contract(format!(
            "flux index j = {j} out of range 0..{}",
            params.n()
        )));
    }
    let u = &state.0;
    Ok(libm::exp2(params.c() * j as f64 + 1.0) * u[j] * u[j] * u[j + 1])
}
