//! Time stepping of the truncated pathwise system and a fourth-order reference solver.
//!
//! Three schemes are available:
//!
//! * `explicit-euler`: `u' = u + dt f(u) + sigma dW e_0`.
//! * `semi-implicit`: one sweep of `u'_j = (u_j + dt 2^{c(j-1)} u_{j-1}^2) / (1 + dt 2^{cj} u_{j+1})`
//!   on the old state, with `u_0` stepped explicitly.
//! * `implicit` (default): backward Euler in the kicked variable
//!   `v = u + sigma dW e_0`, i.e. `x = v + dt f(x)`, solved by a damped Newton
//!   iteration on the tridiagonal Jacobian. Each step combines one full step and
//!   two half steps by Richardson extrapolation `2 x_{dt/2,dt/2} - x_dt`; when the
//!   extrapolant leaves `H_+` the two half steps are kept instead.
//!
//! Backward Euler keeps every iterate in `H_+`, dissipates energy at the rate
//! `dt^2 |f(x)|^2` per step and therefore never overshoots the a-priori bounds.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundConstants, EPS_SUP};
use crate::error::{DyadicError, FaultKind, Result, StepFault};
use crate::model::{drift_into, ModelParams, ShellState};
use crate::noise::{sup_norm, uniform_grid, NoisePath};

const NEWTON_MAX_ITER: usize = 60;
const NEWTON_TOL: f64 = 1e-14;
const MAX_HALVINGS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ExplicitEuler,
    SemiImplicit,
    #[default]
    Implicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Positivity {
    #[default]
    Project,
    RejectStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScheme", into = "RawScheme")]
pub struct SchemeConfig {
    scheme: Scheme,
    positivity: Positivity,
    stiffness_safety: f64,
    enforce_gate: bool,
}

#[derive(Serialize, Deserialize)]
struct RawScheme {
    #[serde(default)]
    scheme: Scheme,
    #[serde(default)]
    positivity: Positivity,
    #[serde(default = "default_theta")]
    stiffness_safety: f64,
    #[serde(default = "default_enforce")]
    enforce_gate: bool,
}

fn default_theta() -> f64 {
    0.5
}

fn default_enforce() -> bool {
    true
}

impl TryFrom<RawScheme> for SchemeConfig {
    type Error = DyadicError;

    fn try_from(raw: RawScheme) -> Result<Self> {
        Ok(SchemeConfig::new(raw.scheme, raw.positivity, raw.stiffness_safety)?
            .with_gate(raw.enforce_gate))
    }
}

impl From<SchemeConfig> for RawScheme {
    fn from(c: SchemeConfig) -> Self {
        RawScheme {
            scheme: c.scheme,
            positivity: c.positivity,
            stiffness_safety: c.stiffness_safety,
            enforce_gate: c.enforce_gate,
        }
    }
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            scheme: Scheme::Implicit,
            positivity: Positivity::Project,
            stiffness_safety: default_theta(),
            enforce_gate: true,
        }
    }
}

impl SchemeConfig {
    pub fn new(scheme: Scheme, positivity: Positivity, stiffness_safety: f64) -> Result<Self> {
        if !(stiffness_safety > 0.0 && stiffness_safety <= 1.0) {
            return Err(DyadicError::contract(format!(
                "stiffness safety {stiffness_safety} outside (0, 1]"
            )));
        }
        Ok(SchemeConfig {
            scheme,
            positivity,
            stiffness_safety,
            enforce_gate: true,
        })
    }

    pub fn of(scheme: Scheme) -> Self {
        SchemeConfig {
            scheme,
            ..SchemeConfig::default()
        }
    }

    /// Turns the a-priori step gate check in [`integrate`] on or off.
    pub fn with_gate(mut self, enforce: bool) -> Self {
        self.enforce_gate = enforce;
        self
    }

    pub fn with_positivity(mut self, positivity: Positivity) -> Self {
        self.positivity = positivity;
        self
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn positivity(&self) -> Positivity {
        self.positivity
    }

    pub fn stiffness_safety(&self) -> f64 {
        self.stiffness_safety
    }

    pub fn enforce_gate(&self) -> bool {
        self.enforce_gate
    }
}

/// `theta / (2^{cn} sqrt(E))`, the explicit step gate for truncation `n`.
pub fn explicit_gate(c: f64, n: usize, energy_bound: f64, theta: f64) -> f64 {
    theta / (libm::exp2(c * n as f64) * energy_bound.sqrt())
}

/// Largest step admitted for `config.scheme` given an energy bound.
pub fn stable_dt(params: &ModelParams, energy_bound: f64, config: &SchemeConfig) -> Result<f64> {
    if !(energy_bound > 0.0 && energy_bound.is_finite()) {
        return Err(DyadicError::contract(format!(
            "energy bound {energy_bound} must be positive"
        )));
    }
    let theta = config.stiffness_safety;
    let gate = explicit_gate(params.c(), params.n(), energy_bound, theta);
    Ok(match config.scheme {
        Scheme::ExplicitEuler => gate,
        Scheme::SemiImplicit => theta.min(gate * libm::exp2(params.c())),
        Scheme::Implicit => theta * (1.0 / energy_bound.sqrt()).min(1.0),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StepStats {
    /// Negative entries clamped to zero under the `project` policy.
    pub projections: usize,
    /// Implicit steps whose extrapolant left `H_+`.
    pub fallbacks: usize,
    /// Implicit solves that had to be split into smaller substeps.
    pub subdivisions: usize,
}

impl StepStats {
    fn absorb(&mut self, other: StepStats) {
        self.projections += other.projections;
        self.fallbacks += other.fallbacks;
        self.subdivisions += other.subdivisions;
    }
}

/// Reusable stepping workspace for one integration.
pub(crate) struct Stepper {
    coeffs: Vec<f64>,
    scheme: Scheme,
    positivity: Positivity,
    f: Vec<f64>,
    full: Vec<f64>,
    half: Vec<f64>,
    newton: Newton,
}

struct Newton {
    v: Vec<f64>,
    x: Vec<f64>,
    g: Vec<f64>,
    f: Vec<f64>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    cp: Vec<f64>,
    dp: Vec<f64>,
    d: Vec<f64>,
    trial: Vec<f64>,
}

impl Newton {
    fn new(len: usize) -> Self {
        let z = || vec![0.0; len];
        Newton {
            v: z(),
            x: z(),
            g: z(),
            f: z(),
            lower: z(),
            diag: z(),
            upper: z(),
            cp: z(),
            dp: z(),
            d: z(),
            trial: z(),
        }
    }

    /// Solves `x = v + h f(x)` starting from `x = v`, with `v` taken from
    /// `self.v`. On success the solution is left in `self.x`; on failure
    /// returns the worst shell.
    fn solve(&mut self, coeffs: &[f64], h: f64) -> std::result::Result<(), usize> {
        let v = &self.v;
        let n = v.len() - 1;
        self.x.copy_from_slice(v);
        for _ in 0..NEWTON_MAX_ITER {
            drift_into(&self.x, coeffs, &mut self.f);
            let x = &self.x;
            for j in 0..=n {
                self.g[j] = x[j] - v[j] - h * self.f[j];
            }
            self.diag[0] = 1.0 + h * x[1];
            self.upper[0] = h * x[0];
            self.lower[0] = 0.0;
            for j in 1..=n {
                let next = if j < n { x[j + 1] } else { 0.0 };
                self.lower[j] = -2.0 * h * coeffs[j - 1] * x[j - 1];
                self.diag[j] = 1.0 + h * coeffs[j] * next;
                self.upper[j] = if j < n { h * coeffs[j] * x[j] } else { 0.0 };
            }
            self.cp[0] = self.upper[0] / self.diag[0];
            self.dp[0] = self.g[0] / self.diag[0];
            for j in 1..=n {
                let m = self.diag[j] - self.lower[j] * self.cp[j - 1];
                self.cp[j] = self.upper[j] / m;
                self.dp[j] = (self.g[j] - self.lower[j] * self.dp[j - 1]) / m;
            }
            self.d[n] = self.dp[n];
            for j in (0..n).rev() {
                self.d[j] = self.dp[j] - self.cp[j] * self.d[j + 1];
            }
            if let Some(j) = self.d.iter().position(|v| !v.is_finite()) {
                return Err(j);
            }
            let mut lambda = 1.0;
            loop {
                for j in 0..=n {
                    self.trial[j] = self.x[j] - lambda * self.d[j];
                }
                if self.trial[1..].iter().all(|&t| t >= 0.0) {
                    break;
                }
                lambda *= 0.5;
                if lambda < 1e-12 {
                    return Err(worst(&self.d));
                }
            }
            std::mem::swap(&mut self.x, &mut self.trial);
            let step = lambda * self.d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = 1.0 + self.x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if step <= NEWTON_TOL * scale {
                return Ok(());
            }
        }
        Err(worst(&self.d))
    }
}

fn worst(v: &[f64]) -> usize {
    let mut best = 0;
    for (j, x) in v.iter().enumerate() {
        if !x.is_finite() {
            return j;
        }
        if x.abs() > v[best].abs() {
            best = j;
        }
    }
    best
}

impl Stepper {
    pub(crate) fn new(params: &ModelParams, config: &SchemeConfig) -> Self {
        let len = params.n() + 1;
        Stepper {
            coeffs: params.coefficients(),
            scheme: config.scheme,
            positivity: config.positivity,
            f: vec![0.0; len],
            full: vec![0.0; len],
            half: vec![0.0; len],
            newton: Newton::new(len),
        }
    }

    /// Advances `u` in place over a step of length `h` carrying the noise
    /// increment `kick = sigma dW`.
    pub(crate) fn advance(
        &mut self,
        u: &mut [f64],
        kick: f64,
        h: f64,
    ) -> std::result::Result<StepStats, StepFault> {
        let mut stats = StepStats::default();
        match self.scheme {
            Scheme::ExplicitEuler => {
                drift_into(u, &self.coeffs, &mut self.f);
                for (x, f) in u.iter_mut().zip(&self.f) {
                    *x += h * f;
                }
                u[0] += kick;
            }
            Scheme::SemiImplicit => {
                let n = u.len() - 1;
                let old0 = u[0];
                let mut prev = u[0];
                u[0] = old0 - h * old0 * u[1] + kick;
                for j in 1..=n {
                    let next = if j < n { u[j + 1] } else { 0.0 };
                    let cur = u[j];
                    u[j] = (cur + h * self.coeffs[j - 1] * prev * prev)
                        / (1.0 + h * self.coeffs[j] * next);
                    prev = cur;
                }
            }
            Scheme::Implicit => {
                self.full.copy_from_slice(u);
                self.backward(&mut stats, 0, kick, h, true)?;
                self.half.copy_from_slice(u);
                self.backward(&mut stats, 0, 0.5 * kick, 0.5 * h, false)?;
                self.backward(&mut stats, 0, 0.5 * kick, 0.5 * h, false)?;
                let mut admissible = true;
                for (j, x) in u.iter_mut().enumerate() {
                    let z = 2.0 * self.half[j] - self.full[j];
                    if j >= 1 && z < 0.0 {
                        admissible = false;
                    }
                    *x = z;
                }
                if !admissible {
                    stats.fallbacks += 1;
                    u.copy_from_slice(&self.half);
                }
            }
        }
        if let Some(j) = u.iter().position(|v| !v.is_finite()) {
            return Err(StepFault {
                kind: FaultKind::NonFinite,
                mode: j,
            });
        }
        if let Some(j) = u.iter().skip(1).position(|&v| v < 0.0) {
            match self.positivity {
                Positivity::RejectStep => {
                    return Err(StepFault {
                        kind: FaultKind::Positivity,
                        mode: j + 1,
                    })
                }
                Positivity::Project => {
                    for x in u.iter_mut().skip(1) {
                        if *x < 0.0 {
                            *x = 0.0;
                            stats.projections += 1;
                        }
                    }
                }
            }
        }
        Ok(stats)
    }

    /// One backward Euler step applied to `self.full` (when `into_full`) or
    /// `self.half`, splitting it in two on Newton failure.
    fn backward(
        &mut self,
        stats: &mut StepStats,
        depth: u32,
        kick: f64,
        h: f64,
        into_full: bool,
    ) -> std::result::Result<(), StepFault> {
        let target = if into_full { &mut self.full } else { &mut self.half };
        self.newton.v.copy_from_slice(target);
        self.newton.v[0] += kick;
        match self.newton.solve(&self.coeffs, h) {
            Ok(()) => {
                target.copy_from_slice(&self.newton.x);
                Ok(())
            }
            Err(mode) => {
                if depth >= MAX_HALVINGS {
                    return Err(StepFault {
                        kind: FaultKind::SolverDivergence,
                        mode,
                    });
                }
                stats.subdivisions += 1;
                self.backward(stats, depth + 1, 0.5 * kick, 0.5 * h, into_full)?;
                self.backward(stats, depth + 1, 0.5 * kick, 0.5 * h, into_full)
            }
        }
    }
}

fn fault_error(fault: StepFault, time: f64) -> DyadicError {
    DyadicError::Integration {
        time,
        mode: fault.mode,
        kind: fault.kind,
    }
}

/// One step of length `params.dt` with Brownian increment `dw`.
///
/// A failure reports `time = params.dt`, the end of the attempted step.
pub fn step(
    state: &ShellState,
    params: &ModelParams,
    dw: f64,
    config: &SchemeConfig,
) -> Result<ShellState> {
    state.check_truncation(params)?;
    if !dw.is_finite() {
        return Err(DyadicError::contract("noise increment must be finite"));
    }
    let mut stepper = Stepper::new(params, config);
    let mut u = state.as_slice().to_vec();
    stepper
        .advance(&mut u, params.sigma() * dw, params.dt())
        .map_err(|f| fault_error(f, params.dt()))?;
    Ok(ShellState::from_trusted(u))
}

/// A computed solution on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub params: ModelParams,
    /// Seed of the noise path that drove the run.
    pub path_seed: u64,
    pub times: Vec<f64>,
    pub states: Vec<ShellState>,
    /// Trapezoidal `int_0^T u_j^2`, `j = 0..=N`.
    pub mode_integrals: Vec<f64>,
    /// Trapezoidal `int_0^T u_j^2 u_{j+1}`, `j = 0..N`.
    pub cross_integrals: Vec<f64>,
    pub stats: StepStats,
    /// Every `save_every`-th step was stored (the final state always is).
    pub save_every: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &ShellState {
        self.states.last().expect("trajectories are nonempty")
    }

    /// Largest squared energy over the stored states, with its time.
    pub fn max_energy(&self) -> (f64, f64) {
        self.states
            .iter()
            .zip(&self.times)
            .map(|(s, &t)| (s.energy(), t))
            .fold((f64::NEG_INFINITY, 0.0), |acc, x| if x.0 > acc.0 { x } else { acc })
    }

    /// Writes `t,u_0,...,u_N`, keeping every `every`-th stored state and the last.
    pub fn write_csv<W: Write>(&self, writer: W, every: usize) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((0..=self.params.n()).map(|j| format!("u_{j}")));
        out.write_record(&header)?;
        for k in thinned(self.times.len(), every) {
            let mut row = vec![self.times[k].to_string()];
            row.extend(self.states[k].as_slice().iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// One JSON object `{"t": .., "u": [..]}` per line.
    pub fn write_jsonl<W: Write>(&self, mut writer: W, every: usize) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            t: f64,
            u: &'a ShellState,
        }
        for k in thinned(self.times.len(), every) {
            serde_json::to_writer(
                &mut writer,
                &Row {
                    t: self.times[k],
                    u: &self.states[k],
                },
            )?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn thinned(len: usize, every: usize) -> impl Iterator<Item = usize> {
    let every = every.max(1);
    (0..len).filter(move |&k| k % every == 0 || k + 1 == len)
}

/// Ratio `params.dt / path.dt` after checking that the grids are compatible.
fn grid_ratio(params: &ModelParams, path: &NoisePath) -> Result<usize> {
    let (t, tp) = (params.horizon(), path.horizon());
    if (t - tp).abs() > 1e-12 * t.max(1.0) {
        return Err(DyadicError::Grid(format!(
            "path horizon {tp} differs from T = {t}"
        )));
    }
    let ratio = params.dt() / path.dt();
    let m = ratio.round();
    if m < 1.0 || (ratio - m).abs() > 1e-9 * ratio {
        return Err(DyadicError::Grid(format!(
            "step {} is not a multiple of the path spacing {}",
            params.dt(),
            path.dt()
        )));
    }
    Ok(m as usize)
}

fn check_gate(
    initial: &ShellState,
    params: &ModelParams,
    path: &NoisePath,
    config: &SchemeConfig,
) -> Result<()> {
    if !config.enforce_gate {
        return Ok(());
    }
    let bounds = BoundConstants::new(
        initial.l2_norm(),
        params.sigma(),
        sup_norm(path),
        params.horizon(),
        EPS_SUP,
    );
    if bounds.k1 == 0.0 {
        return Ok(());
    }
    let gate = stable_dt(params, bounds.k1, config)?;
    if params.dt() > gate {
        return Err(DyadicError::StabilityGate {
            dt: params.dt(),
            gate,
        });
    }
    Ok(())
}

struct Accumulator {
    prev_sq: Vec<f64>,
    prev_cross: Vec<f64>,
    cur_sq: Vec<f64>,
    cur_cross: Vec<f64>,
    modes: Vec<f64>,
    cross: Vec<f64>,
}

impl Accumulator {
    fn new(u: &[f64]) -> Self {
        let n = u.len() - 1;
        let mut acc = Accumulator {
            prev_sq: vec![0.0; n + 1],
            prev_cross: vec![0.0; n],
            cur_sq: vec![0.0; n + 1],
            cur_cross: vec![0.0; n],
            modes: vec![0.0; n + 1],
            cross: vec![0.0; n],
        };
        Self::integrands(u, &mut acc.prev_sq, &mut acc.prev_cross);
        acc
    }

    fn integrands(u: &[f64], sq: &mut [f64], cross: &mut [f64]) {
        for (s, x) in sq.iter_mut().zip(u) {
            *s = x * x;
        }
        for (j, c) in cross.iter_mut().enumerate() {
            *c = u[j] * u[j] * u[j + 1];
        }
    }

    fn push(&mut self, u: &[f64], h: f64) {
        Self::integrands(u, &mut self.cur_sq, &mut self.cur_cross);
        for j in 0..self.modes.len() {
            self.modes[j] += 0.5 * h * (self.prev_sq[j] + self.cur_sq[j]);
        }
        for j in 0..self.cross.len() {
            self.cross[j] += 0.5 * h * (self.prev_cross[j] + self.cur_cross[j]);
        }
        std::mem::swap(&mut self.prev_sq, &mut self.cur_sq);
        std::mem::swap(&mut self.prev_cross, &mut self.cur_cross);
    }
}

/// Integrates from `initial` over `[0, T]` driven by `path`, storing every state.
pub fn integrate(
    initial: &ShellState,
    params: &ModelParams,
    path: &NoisePath,
    config: &SchemeConfig,
) -> Result<Trajectory> {
    integrate_thinned(initial, params, path, config, 1)
}

/// As [`integrate`] but stores only every `save_every`-th state (plus the last).
/// The integrals still use every step.
pub fn integrate_thinned(
    initial: &ShellState,
    params: &ModelParams,
    path: &NoisePath,
    config: &SchemeConfig,
    save_every: usize,
) -> Result<Trajectory> {
    initial.check_truncation(params)?;
    let ratio = grid_ratio(params, path)?;
    check_gate(initial, params, path, config)?;
    let save_every = save_every.max(1);
    let grid = uniform_grid(params.horizon(), params.dt());
    let steps = grid.len() - 1;
    let w = path.values();
    let last = path.intervals();
    let widx = |i: usize| (i * ratio).min(last);

    let mut stepper = Stepper::new(params, config);
    let mut u = initial.as_slice().to_vec();
    let mut acc = Accumulator::new(&u);
    let mut stats = StepStats::default();
    let mut times = vec![0.0];
    let mut states = vec![initial.clone()];
    for i in 0..steps {
        let h = grid[i + 1] - grid[i];
        let kick = params.sigma() * (w[widx(i + 1)] - w[widx(i)]);
        let s = stepper
            .advance(&mut u, kick, h)
            .map_err(|f| fault_error(f, grid[i + 1]))?;
        stats.absorb(s);
        acc.push(&u, h);
        if (i + 1) % save_every == 0 || i + 1 == steps {
            times.push(grid[i + 1]);
            states.push(ShellState::from_trusted(u.clone()));
        }
    }
    Ok(Trajectory {
        params: *params,
        path_seed: path.seed(),
        times,
        states,
        mode_integrals: acc.modes,
        cross_integrals: acc.cross,
        stats,
        save_every,
    })
}

/// Default internal step of [`reference_solve`]: the smaller of the path
/// spacing and one sixteenth of the explicit gate at the a-priori energy bound.
pub fn reference_dt(initial: &ShellState, params: &ModelParams, path: &NoisePath) -> f64 {
    let bounds = BoundConstants::new(
        initial.l2_norm(),
        params.sigma(),
        sup_norm(path),
        params.horizon(),
        EPS_SUP,
    );
    if bounds.k1 == 0.0 {
        return path.dt();
    }
    let gate = explicit_gate(params.c(), params.n(), bounds.k1, default_theta());
    path.dt().min(gate / 16.0)
}

/// Classical RK4 on the pathwise ODE with `w` piecewise linear.
pub fn reference_solve(
    initial: &ShellState,
    params: &ModelParams,
    path: &NoisePath,
) -> Result<Trajectory> {
    reference_solve_with(initial, params, path, reference_dt(initial, params, path))
}

/// [`reference_solve`] with an explicit internal step `dt_ref`.
pub fn reference_solve_with(
    initial: &ShellState,
    params: &ModelParams,
    path: &NoisePath,
    dt_ref: f64,
) -> Result<Trajectory> {
    initial.check_truncation(params)?;
    let ratio = grid_ratio(params, path)?;
    if !(dt_ref > 0.0 && dt_ref.is_finite()) {
        return Err(DyadicError::contract("reference step must be positive"));
    }
    let coeffs = params.coefficients();
    let sigma = params.sigma();
    let len = params.n() + 1;
    let (pt, pw) = (path.times(), path.values());
    let grid = uniform_grid(params.horizon(), params.dt());
    let save_at: Vec<usize> = (0..grid.len()).map(|i| (i * ratio).min(path.intervals())).collect();

    let mut u = initial.as_slice().to_vec();
    let mut acc = Accumulator::new(&u);
    let mut k = [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]];
    let mut tmp = vec![0.0; len];
    let mut times = vec![0.0];
    let mut states = vec![initial.clone()];
    let mut next_save = 1;
    for p in 0..path.intervals() {
        let span = pt[p + 1] - pt[p];
        let slope = sigma * (pw[p + 1] - pw[p]) / span;
        let subs = (span / dt_ref).ceil().max(1.0) as usize;
        let h = span / subs as f64;
        for s in 0..subs {
            drift_into(&u, &coeffs, &mut k[0]);
            k[0][0] += slope;
            for j in 0..len {
                tmp[j] = u[j] + 0.5 * h * k[0][j];
            }
            drift_into(&tmp, &coeffs, &mut k[1]);
            k[1][0] += slope;
            for j in 0..len {
                tmp[j] = u[j] + 0.5 * h * k[1][j];
            }
            drift_into(&tmp, &coeffs, &mut k[2]);
            k[2][0] += slope;
            for j in 0..len {
                tmp[j] = u[j] + h * k[2][j];
            }
            drift_into(&tmp, &coeffs, &mut k[3]);
            k[3][0] += slope;
            for j in 0..len {
                u[j] += h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
            }
            let t = pt[p] + (s + 1) as f64 * h;
            if let Some(j) = u.iter().position(|v| !v.is_finite()) {
                return Err(fault_error(
                    StepFault {
                        kind: FaultKind::NonFinite,
                        mode: j,
                    },
                    t,
                ));
            }
            acc.push(&u, h);
        }
        while next_save < grid.len() && save_at[next_save] == p + 1 {
            times.push(grid[next_save]);
            let (state, _) = ShellState::project(u.clone())?;
            states.push(state);
            next_save += 1;
        }
    }
    Ok(Trajectory {
        params: *params,
        path_seed: path.seed(),
        times,
        states,
        mode_integrals: acc.modes,
        cross_integrals: acc.cross,
        stats: StepStats::default(),
        save_every: 1,
    })
}

/// Integrates like [`integrate`] but keeps only the states after the step
/// counts listed in `record_steps` (sorted, `0` meaning the initial state).
pub(crate) fn record_states(
    initial: &ShellState,
    params: &ModelParams,
    path: &NoisePath,
    config: &SchemeConfig,
    record_steps: &[usize],
) -> Result<Vec<ShellState>> {
    initial.check_truncation(params)?;
    let ratio = grid_ratio(params, path)?;
    check_gate(initial, params, path, config)?;
    let grid = uniform_grid(params.horizon(), params.dt());
    let steps = grid.len() - 1;
    if record_steps.windows(2).any(|w| w[1] < w[0]) || record_steps.last().is_some_and(|&k| k > steps) {
        return Err(DyadicError::contract("record steps must be sorted and within the run"));
    }
    let w = path.values();
    let last = path.intervals();
    let widx = |i: usize| (i * ratio).min(last);
    let mut stepper = Stepper::new(params, config);
    let mut u = initial.as_slice().to_vec();
    let mut out = Vec::with_capacity(record_steps.len());
    let mut next = 0;
    while next < record_steps.len() && record_steps[next] == 0 {
        out.push(initial.clone());
        next += 1;
    }
    for i in 0..steps {
        if next == record_steps.len() {
            break;
        }
        let kick = params.sigma() * (w[widx(i + 1)] - w[widx(i)]);
        stepper
            .advance(&mut u, kick, grid[i + 1] - grid[i])
            .map_err(|f| fault_error(f, grid[i + 1]))?;
        while next < record_steps.len() && record_steps[next] == i + 1 {
            out.push(ShellState::from_trusted(u.clone()));
            next += 1;
        }
    }
    Ok(out)
}
