//! Checks of the a-priori bounds, regularity exponent and contraction on
//! computed trajectories.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{BoundConstants, EPS_SUP};
use crate::error::{DyadicError, Result};
use crate::integrator::{integrate, SchemeConfig, Trajectory};
use crate::model::{weighted_distance_sq, ModelParams, ShellState, SobolevIndex};
use crate::noise::{sup_norm, NoisePath};
use crate::rng::{derived_stream, NormalStream};

/// Absolute slack on the bound comparisons, relative to `1 + bound`.
pub const BOUND_RTOL: f64 = 1e-10;

const TAG_PROBE_STATE: u32 = 1;
const TAG_PROBE_PATH: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub bound_name: String,
    pub theoretical: f64,
    /// Coarser closed form of the same bound, when one exists.
    pub loose_theoretical: Option<f64>,
    pub observed_max: f64,
    pub margin: f64,
    pub violated: bool,
    pub worst_time: f64,
    pub tolerance: f64,
}

impl BoundReport {
    fn new(
        name: &str,
        theoretical: f64,
        loose: Option<f64>,
        observed_max: f64,
        worst_time: f64,
    ) -> Self {
        let tolerance = BOUND_RTOL * (1.0 + theoretical);
        let margin = theoretical - observed_max;
        BoundReport {
            bound_name: name.to_string(),
            theoretical,
            loose_theoretical: loose,
            observed_max,
            margin,
            violated: margin < -tolerance,
            worst_time,
            tolerance,
        }
    }
}

fn run_constants(traj: &Trajectory, path: &NoisePath, initial_norm: f64) -> Result<BoundConstants> {
    let t = traj.params.horizon();
    if traj.path_seed != path.seed() || (path.horizon() - t).abs() > 1e-12 * t.max(1.0) {
        return Err(DyadicError::contract(format!(
            "trajectory (seed {}, T = {t}) was not driven by path (seed {}, T = {})",
            traj.path_seed,
            path.seed(),
            path.horizon()
        )));
    }
    if !(initial_norm.is_finite() && initial_norm >= 0.0) {
        return Err(DyadicError::contract("initial norm must be finite and >= 0"));
    }
    Ok(BoundConstants::new(
        initial_norm,
        traj.params.sigma(),
        sup_norm(path),
        t,
        EPS_SUP,
    ))
}

/// `max_t |u_0(t)|` against `a = ||u(0)|| + 2 sigma ||w||_inf (1 + eps)`.
pub fn check_u0_bound(traj: &Trajectory, path: &NoisePath, initial_norm: f64) -> Result<BoundReport> {
    let bounds = run_constants(traj, path, initial_norm)?;
    let (observed, when) = traj
        .states
        .iter()
        .zip(&traj.times)
        .map(|(s, &t)| (s.get(0).abs(), t))
        .fold((0.0, 0.0), |acc, x| if x.0 > acc.0 { x } else { acc });
    Ok(BoundReport::new("u0", bounds.a, None, observed, when))
}

/// `max_t ||u(t)||^2` against `K1 = a^2 + (a^2 T + a)^2`.
pub fn check_energy_bound(
    traj: &Trajectory,
    path: &NoisePath,
    initial_norm: f64,
) -> Result<BoundReport> {
    let bounds = run_constants(traj, path, initial_norm)?;
    let (observed, when) = traj.max_energy();
    Ok(BoundReport::new(
        "energy",
        bounds.k1,
        Some(bounds.k1_loose),
        observed,
        when,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileEntry {
    pub j: usize,
    /// `int u_j^2`.
    pub mode_integral: f64,
    /// `int u_j^2 u_{j+1}`; absent for the last shell.
    pub cross_integral: Option<f64>,
}

pub fn regularity_profile(traj: &Trajectory) -> Vec<ProfileEntry> {
    traj.mode_integrals
        .iter()
        .enumerate()
        .map(|(j, &i)| ProfileEntry {
            j,
            mode_integral: i,
            cross_integral: traj.cross_integrals.get(j).copied(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Shells that entered the fit.
    pub used: Vec<usize>,
    /// Shells in the window dropped because their value was not positive.
    pub excluded: Vec<usize>,
}

impl SlopeFit {
    /// `slope <= -2c/3 + slack`.
    pub fn satisfies_regularity_bound(&self, c: f64, slack: f64) -> bool {
        self.slope <= -2.0 * c / 3.0 + slack
    }

    /// Empirical prefactor `2^intercept` of the fitted power law.
    pub fn prefactor(&self) -> f64 {
        libm::exp2(self.intercept)
    }
}

/// Least-squares line through `(j, log2 value)` for `j_min <= j <= j_max`.
pub fn fit_decay_slope(profile: &[(usize, f64)], j_min: usize, j_max: usize) -> Result<SlopeFit> {
    if j_max <= j_min {
        return Err(DyadicError::Fit(format!("empty window [{j_min}, {j_max}]")));
    }
    let mut used = Vec::new();
    let mut excluded = Vec::new();
    let mut points = Vec::new();
    for &(j, v) in profile.iter().filter(|(j, _)| (j_min..=j_max).contains(j)) {
        if v > 0.0 && v.is_finite() {
            used.push(j);
            points.push((j as f64, libm::log2(v)));
        } else {
            excluded.push(j);
        }
    }
    if points.len() < 3 {
        return Err(DyadicError::Fit(format!(
            "{} usable points in [{j_min}, {j_max}], need 3",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(SlopeFit {
        slope,
        intercept,
        r2,
        used,
        excluded,
    })
}

/// `j -> I[j]` pairs of a regularity profile.
pub fn mode_profile(profile: &[ProfileEntry]) -> Vec<(usize, f64)> {
    profile.iter().map(|e| (e.j, e.mode_integral)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingResult {
    /// `(t, ||u(t) - u~(t)||_{-1/2})` at every stored time.
    pub distance_series: Vec<(f64, f64)>,
    pub monotone_violations: usize,
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_distance: f64,
    /// Slack `4 dt (1 + K1)` allowed before an increase counts as a violation.
    pub tolerance: f64,
}

impl CouplingResult {
    pub fn contracted(&self) -> bool {
        self.final_distance < self.initial
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["t", "d"])?;
        for (t, d) in &self.distance_series {
            out.write_record([t.to_string(), d.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Distance in the contraction norm between two states of equal length.
pub fn contraction_distance(a: &ShellState, b: &ShellState) -> f64 {
    weighted_distance_sq(a.as_slice(), b.as_slice(), SobolevIndex::CONTRACTION).sqrt()
}

/// Runs both initial data against the same noise path and tracks their
/// distance in the contraction norm.
pub fn couple(
    initial_a: &ShellState,
    initial_b: &ShellState,
    params: &ModelParams,
    path: &NoisePath,
    config: &SchemeConfig,
) -> Result<CouplingResult> {
    params.require_subcritical()?;
    let ta = integrate(initial_a, params, path, config)?;
    let tb = integrate(initial_b, params, path, config)?;
    let w = sup_norm(path);
    let k1 = [initial_a, initial_b]
        .iter()
        .map(|s| BoundConstants::new(s.l2_norm(), params.sigma(), w, params.horizon(), EPS_SUP).k1)
        .fold(0.0, f64::max);
    let tolerance = 4.0 * params.dt() * (1.0 + k1);
    Ok(coupling_from(&ta, &tb, tolerance))
}

pub(crate) fn coupling_from(ta: &Trajectory, tb: &Trajectory, tolerance: f64) -> CouplingResult {
    let distance_series: Vec<(f64, f64)> = ta
        .times
        .iter()
        .zip(ta.states.iter().zip(&tb.states))
        .map(|(&t, (a, b))| (t, contraction_distance(a, b)))
        .collect();
    let monotone_violations = distance_series
        .windows(2)
        .filter(|w| w[1].1 > w[0].1 + tolerance)
        .count();
    CouplingResult {
        initial: distance_series[0].1,
        final_distance: distance_series.last().map(|p| p.1).unwrap_or(0.0),
        distance_series,
        monotone_violations,
        tolerance,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModulusPoint {
    pub delta: f64,
    /// Largest initial-data distance actually realized after projection to `H_+`.
    pub realized_initial_delta: f64,
    /// Largest sup-distance of the perturbed paths.
    pub realized_path_delta: f64,
    /// Worst `sup_t ||u - u~||_{-1/2}` over the probes.
    pub value: f64,
}

/// Unit-norm direction for the initial perturbation of probe `p`.
fn probe_direction(len: usize, seed: u64, p: usize) -> Vec<f64> {
    let mut normals = NormalStream::new(seed, derived_stream(TAG_PROBE_STATE, p as u32), 0);
    let v: Vec<f64> = (0..len).map(|_| normals.next_normal()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Brownian-shaped path perturbation with unit grid sup for probe `p`.
fn probe_path(base: &NoisePath, seed: u64, p: usize) -> Result<NoisePath> {
    let mut normals = NormalStream::new(seed, derived_stream(TAG_PROBE_PATH, p as u32), 0);
    let times = base.times();
    let mut values = vec![0.0];
    let mut w = 0.0;
    for k in 1..times.len() {
        w += (times[k] - times[k - 1]).sqrt() * normals.next_normal();
        values.push(w);
    }
    let sup = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if sup > 0.0 {
        values.iter_mut().for_each(|v| *v /= sup);
    }
    NoisePath::from_samples(times.to_vec(), values, base.seed())
}

/// Empirical modulus of continuity of the solution map on a ladder of radii.
///
/// Each probe fixes one perturbation direction in state space and one in path
/// space; radius `delta` scales both by `0.99 delta`, so the probe sets are
/// nested along the ladder. Perturbed initial data are projected back to `H_+`
/// and the realized distance is reported.
pub fn continuity_modulus(
    base_initial: &ShellState,
    base_path: &NoisePath,
    params: &ModelParams,
    deltas: &[f64],
    probes: usize,
    seed: u64,
    config: &SchemeConfig,
) -> Result<Vec<ModulusPoint>> {
    params.require_subcritical()?;
    if deltas.is_empty() || probes == 0 {
        return Err(DyadicError::contract("need at least one radius and one probe"));
    }
    if deltas.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(DyadicError::contract("radii must be finite and >= 0"));
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(DyadicError::contract("radii must be strictly decreasing"));
    }
    let base = integrate(base_initial, params, base_path, config)?;
    let len = params.n() + 1;
    let shapes: Vec<(Vec<f64>, NoisePath)> = (0..probes)
        .map(|p| Ok((probe_direction(len, seed, p), probe_path(base_path, seed, p)?)))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..deltas.len())
        .flat_map(|d| (0..probes).map(move |p| (d, p)))
        .collect();
    let results: Vec<(f64, f64, f64)> = jobs
        .par_iter()
        .map(|&(d, p)| {
            let scale = 0.99 * deltas[d];
            let (dir, shape) = &shapes[p];
            let moved: Vec<f64> = base_initial
                .as_slice()
                .iter()
                .zip(dir)
                .map(|(u, e)| u + scale * e)
                .collect();
            let (initial, _) = ShellState::project(moved)?;
            let path = base_path.add_scaled(shape, scale)?;
            let init_delta =
                weighted_distance_sq(initial.as_slice(), base_initial.as_slice(), SobolevIndex::ENERGY)
                    .sqrt();
            let path_delta = base_path
                .values()
                .iter()
                .zip(path.values())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let traj = integrate(&initial, params, &path, config)?;
            let worst = traj
                .states
                .iter()
                .zip(&base.states)
                .map(|(a, b)| contraction_distance(a, b))
                .fold(0.0, f64::max);
            Ok((init_delta, path_delta, worst))
        })
        .collect::<Result<_>>()?;

    Ok(deltas
        .iter()
        .enumerate()
        .map(|(d, &delta)| {
            let rows = &results[d * probes..(d + 1) * probes];
            ModulusPoint {
                delta,
                realized_initial_delta: rows.iter().map(|r| r.0).fold(0.0, f64::max),
                realized_path_delta: rows.iter().map(|r| r.1).fold(0.0, f64::max),
                value: rows.iter().map(|r| r.2).fold(0.0, f64::max),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::Scheme;
    use crate::noise::sample_brownian;

    fn closed_form_run(t: f64) -> (Trajectory, NoisePath) {
        let params = ModelParams::new(2.0, 0.0, t, 1, 1e-3).unwrap();
        let path = NoisePath::zero(t, 1e-3).unwrap();
        let init = ShellState::new(vec![1.0, 0.0]).unwrap();
        (integrate(&init, &params, &path, &SchemeConfig::default()).unwrap(), path)
    }

    #[test]
    fn zero_run_bounds() {
        let params = ModelParams::new(2.0, 1.0, 1.0, 3, 0.01).unwrap();
        let path = NoisePath::zero(1.0, 0.01).unwrap();
        let traj = integrate(&ShellState::zeros(3), &params, &path, &SchemeConfig::default()).unwrap();
        let u0 = check_u0_bound(&traj, &path, 0.0).unwrap();
        let e = check_energy_bound(&traj, &path, 0.0).unwrap();
        for r in [u0, e] {
            assert_eq!((r.theoretical, r.observed_max, r.margin), (0.0, 0.0, 0.0));
            assert!(!r.violated);
        }
    }

    #[test]
    fn closed_form_bounds() {
        let (traj, path) = closed_form_run(1.0);
        let u0 = check_u0_bound(&traj, &path, 1.0).unwrap();
        assert_eq!(u0.theoretical, 1.0);
        assert!(u0.margin >= 0.0 && !u0.violated);
        let e = check_energy_bound(&traj, &path, 1.0).unwrap();
        assert_eq!(e.theoretical, 5.0);
        assert_eq!(e.loose_theoretical, Some(9.0));
        assert!((e.observed_max - 1.0).abs() < 1e-12);
        assert!((e.margin - 4.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_path_is_rejected() {
        let (traj, _) = closed_form_run(1.0);
        let other = sample_brownian(1.0, 1e-3, 99).unwrap();
        assert!(check_u0_bound(&traj, &other, 1.0).is_err());
        let longer = NoisePath::zero(2.0, 1e-3).unwrap();
        assert!(check_energy_bound(&traj, &longer, 1.0).is_err());
    }

    #[test]
    fn violation_is_flagged() {
        let (traj, path) = closed_form_run(1.0);
        let r = check_u0_bound(&traj, &path, 0.5).unwrap();
        assert!(r.violated);
        assert!((r.margin + 0.5).abs() < 1e-12);
        assert_eq!(r.worst_time, 0.0);
    }

    #[test]
    fn profile_of_closed_form() {
        let (traj, _) = closed_form_run(1.0);
        let prof = regularity_profile(&traj);
        assert_eq!(prof.len(), 2);
        assert!((prof[0].mode_integral - 1.0f64.tanh()).abs() < 1e-6);
        assert!(prof[0].cross_integral.unwrap() >= 0.0);
        assert_eq!(prof[1].cross_integral, None);
    }

    #[test]
    fn slope_on_exact_power_law() {
        let data: Vec<(usize, f64)> = (0..12).map(|j| (j, libm::exp2(-2.0 * j as f64))).collect();
        let fit = fit_decay_slope(&data, 2, 10).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert_eq!(fit.r2, 1.0);
        assert!(fit.satisfies_regularity_bound(3.0, 1e-9));
        let flat: Vec<(usize, f64)> = (0..12).map(|j| (j, 0.25)).collect();
        let fit = fit_decay_slope(&flat, 2, 10).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.r2, 1.0);
        assert!(!fit.satisfies_regularity_bound(1.0, 0.2));
    }

    #[test]
    fn slope_excludes_zeros_and_needs_three_points() {
        let mut data: Vec<(usize, f64)> = (0..8).map(|j| (j, libm::exp2(-(j as f64)))).collect();
        data[4].1 = 0.0;
        let fit = fit_decay_slope(&data, 2, 6).unwrap();
        assert_eq!(fit.excluded, vec![4]);
        assert_eq!(fit.used, vec![2, 3, 5, 6]);
        assert!((fit.slope + 1.0).abs() < 1e-12);
        data[2].1 = 0.0;
        data[3].1 = 0.0;
        assert!(fit_decay_slope(&data, 2, 5).is_err());
        assert!(fit_decay_slope(&data, 5, 5).is_err());
    }

    #[test]
    fn coupling_identical_is_zero() {
        let params = ModelParams::new(2.0, 1.0, 1.0, 6, 1e-2).unwrap();
        let path = sample_brownian(1.0, 1e-2, 5).unwrap();
        let u = ShellState::padded(&[0.4, 0.3, 0.2], 6).unwrap();
        let r = couple(&u, &u, &params, &path, &SchemeConfig::default()).unwrap();
        assert!(r.distance_series.iter().all(|p| p.1 == 0.0));
        assert_eq!(r.monotone_violations, 0);
        assert_eq!(r.distance_series.len(), 101);
    }

    #[test]
    fn coupling_rejects_critical_c() {
        let params = ModelParams::new(3.0, 1.0, 1.0, 4, 1e-2).unwrap();
        let path = NoisePath::zero(1.0, 1e-2).unwrap();
        let u = ShellState::zeros(4);
        assert!(couple(&u, &u, &params, &path, &SchemeConfig::default()).is_err());
    }

    #[test]
    fn coupling_initial_distance_is_exact() {
        let params = ModelParams::new(2.0, 1.0, 0.5, 4, 1e-2).unwrap();
        let path = sample_brownian(0.5, 1e-2, 2).unwrap();
        let a = ShellState::padded(&[0.4, 0.3, 0.2, 0.1], 4).unwrap();
        let b = ShellState::padded(&[-0.2, 0.0, 0.5], 4).unwrap();
        let r = couple(&a, &b, &params, &path, &SchemeConfig::default()).unwrap();
        let direct = crate::model::weighted_norm_sq(
            &[0.6, 0.3, -0.3, 0.1, 0.0],
            SobolevIndex::CONTRACTION,
        );
        assert!((r.initial * r.initial - direct).abs() < 1e-15);
        assert!(r.contracted());
    }

    #[test]
    fn modulus_at_zero_radius_is_zero() {
        let params = ModelParams::new(2.0, 1.0, 0.5, 6, 1e-2).unwrap();
        let path = sample_brownian(0.5, 1e-2, 3).unwrap();
        let u = ShellState::padded(&[0.5, 0.2], 6).unwrap();
        let cfg = SchemeConfig::of(Scheme::Implicit);
        let out = continuity_modulus(&u, &path, &params, &[0.0], 3, 1, &cfg).unwrap();
        assert_eq!(out[0].value, 0.0);
        assert!(continuity_modulus(&u, &path, &params, &[0.1, 0.2], 3, 1, &cfg).is_err());
    }

    #[test]
    fn modulus_is_monotone_on_nested_probes() {
        let params = ModelParams::new(2.0, 1.0, 1.0, 8, 1e-2).unwrap();
        let path = sample_brownian(1.0, 1e-2, 4).unwrap();
        let u = ShellState::padded(&[0.5, 0.3, 0.2], 8).unwrap();
        let out =
            continuity_modulus(&u, &path, &params, &[0.4, 0.2, 0.1], 4, 7, &SchemeConfig::default())
                .unwrap();
        assert!(out.windows(2).all(|w| w[1].value <= w[0].value));
        for p in &out {
            assert!(p.realized_initial_delta <= 0.99 * p.delta + 1e-15);
            assert!((p.realized_path_delta - 0.99 * p.delta).abs() < 1e-12);
        }
    }
}
