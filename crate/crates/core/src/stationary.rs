//! Long-run sampling, empirical Wasserstein-2 distances and the synchronous
//! coupling experiment for the stationary law.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::min_cost_assignment;
use crate::error::{DyadicError, Result};
use crate::integrator::{record_states, SchemeConfig};
use crate::model::{weighted_distance_sq, ModelParams, ShellState, SobolevIndex};
use crate::noise::sample_brownian;
use crate::rng::{chain_seed, derived_stream, NormalStream};

/// Largest sample count accepted by [`wasserstein2`].
pub const N_MAX: usize = 512;

const TAG_BOOTSTRAP: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureMeta {
    pub params: ModelParams,
    pub burn_in: f64,
    pub thin: f64,
    pub seeds: Vec<u64>,
}

/// Uniformly weighted samples of equal truncation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    samples: Vec<ShellState>,
    meta: MeasureMeta,
}

impl EmpiricalMeasure {
    pub fn new(samples: Vec<ShellState>, meta: MeasureMeta) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(DyadicError::contract("an empirical measure needs samples"));
        };
        let len = first.as_slice().len();
        if samples.iter().any(|s| s.as_slice().len() != len) {
            return Err(DyadicError::contract("samples differ in truncation"));
        }
        Ok(EmpiricalMeasure { samples, meta })
    }

    pub fn samples(&self) -> &[ShellState] {
        &self.samples
    }

    pub fn meta(&self) -> &MeasureMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Consecutive samples `range` as a measure with the same metadata.
    pub fn window(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.samples.len() {
            return Err(DyadicError::contract("window exceeds the sample count"));
        }
        EmpiricalMeasure::new(self.samples[range].to_vec(), self.meta.clone())
    }

    /// Sample mean of `u_j^2` for every shell.
    pub fn second_moments(&self) -> Vec<f64> {
        let len = self.samples[0].as_slice().len();
        let mut m = vec![0.0; len];
        for s in &self.samples {
            for (acc, x) in m.iter_mut().zip(s.as_slice()) {
                *acc += x * x;
            }
        }
        let n = self.samples.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// A `{"meta": ..}` header line followed by one state per line.
    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        #[derive(Serialize)]
        struct Header<'a> {
            meta: &'a MeasureMeta,
        }
        serde_json::to_writer(&mut writer, &Header { meta: &self.meta })?;
        writer.write_all(b"\n")?;
        for s in &self.samples {
            serde_json::to_writer(&mut writer, s)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            meta: MeasureMeta,
        }
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| DyadicError::contract("measure file is empty"))??;
        let Header { meta } = serde_json::from_str(&header)?;
        let mut samples = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                samples.push(serde_json::from_str(&line)?);
            }
        }
        EmpiricalMeasure::new(samples, meta)
    }
}

/// Number of whole steps of length `dt` in `span`, if `span` is a multiple of `dt`.
fn steps_in(span: f64, dt: f64, what: &str) -> Result<usize> {
    let ratio = span / dt;
    let k = ratio.round();
    if (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
        return Err(DyadicError::Grid(format!(
            "{what} = {span} is not a multiple of dt = {dt}"
        )));
    }
    Ok(k as usize)
}

/// Samples one chain at `burn_in + k thin`, `k = 1..=n_samples`.
///
/// The run covers `burn_in + n_samples * thin` regardless of `params.horizon()`.
/// With the gate enforced, the gate is evaluated for that full horizon.
pub fn long_run(
    initial: &ShellState,
    params: &ModelParams,
    burn_in: f64,
    n_samples: usize,
    thin: f64,
    seed: u64,
    config: &SchemeConfig,
) -> Result<EmpiricalMeasure> {
    params.require_subcritical()?;
    if !(burn_in.is_finite() && burn_in >= 0.0) {
        return Err(DyadicError::contract("burn-in must be >= 0"));
    }
    if thin.is_nan() || thin < params.dt() {
        return Err(DyadicError::contract(format!(
            "thinning interval {thin} is shorter than dt = {}",
            params.dt()
        )));
    }
    if n_samples < 2 {
        return Err(DyadicError::contract("need at least two samples"));
    }
    let b = steps_in(burn_in, params.dt(), "burn-in")?;
    let m = steps_in(thin, params.dt(), "thinning interval")?;
    let total_steps = b + n_samples * m;
    let horizon = total_steps as f64 * params.dt();
    let run = params.with_horizon(horizon)?;
    let path = sample_brownian(horizon, run.dt(), seed)?;
    let record: Vec<usize> = (1..=n_samples).map(|k| b + k * m).collect();
    let samples = record_states(initial, &run, &path, config, &record)?;
    EmpiricalMeasure::new(
        samples,
        MeasureMeta {
            params: run,
            burn_in,
            thin,
            seeds: vec![seed],
        },
    )
}

fn cost_matrix(a: &[ShellState], b: &[ShellState], alpha: SobolevIndex) -> Vec<f64> {
    let n = a.len();
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            cost[i * n + k] = weighted_distance_sq(a[i].as_slice(), b[k].as_slice(), alpha);
        }
    }
    cost
}

/// Squared empirical Wasserstein-2 distance in the weighted norm `alpha`:
/// the minimum over matchings of the mean squared distance.
pub fn wasserstein2(a: &EmpiricalMeasure, b: &EmpiricalMeasure, alpha: SobolevIndex) -> Result<f64> {
    let n = a.len();
    if b.len() != n {
        return Err(DyadicError::contract(format!(
            "sample counts differ ({n} vs {})",
            b.len()
        )));
    }
    if n > N_MAX {
        return Err(DyadicError::contract(format!(
            "{n} samples exceed the limit {N_MAX}"
        )));
    }
    if a.samples[0].as_slice().len() != b.samples[0].as_slice().len() {
        return Err(DyadicError::contract("measures differ in truncation"));
    }
    let cost = cost_matrix(&a.samples, &b.samples, alpha);
    let assign = min_cost_assignment(&cost, n);
    let total: f64 = assign.iter().enumerate().map(|(i, &k)| cost[i * n + k]).sum();
    Ok(total / n as f64)
}

/// Transport cost between two windows of the same chain.
pub fn stationarity_gap(early: &EmpiricalMeasure, late: &EmpiricalMeasure) -> Result<f64> {
    wasserstein2(early, late, SobolevIndex::CONTRACTION)
}

/// 95% quantile of the gap between two independent bootstrap resamples of
/// `measure`, over `resamples` repetitions.
pub fn bootstrap_noise_floor(measure: &EmpiricalMeasure, resamples: usize, seed: u64) -> Result<f64> {
    if resamples == 0 {
        return Err(DyadicError::contract("need at least one resample"));
    }
    let n = measure.len();
    let draw = |normals: &mut NormalStream| -> Vec<ShellState> {
        (0..n)
            .map(|_| {
                let k = ((normals.next_uniform() * n as f64) as usize).min(n - 1);
                measure.samples[k].clone()
            })
            .collect()
    };
    let mut gaps: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut normals = NormalStream::new(seed, derived_stream(TAG_BOOTSTRAP, r as u32), 0);
            let left = EmpiricalMeasure::new(draw(&mut normals), measure.meta.clone())?;
            let right = EmpiricalMeasure::new(draw(&mut normals), measure.meta.clone())?;
            stationarity_gap(&left, &right)
        })
        .collect::<Result<_>>()?;
    gaps.sort_by(f64::total_cmp);
    let idx = ((0.95 * resamples as f64).ceil() as usize).clamp(1, resamples) - 1;
    Ok(gaps[idx])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniquenessPoint {
    pub t: f64,
    /// Mean over chains of `||u_a(t) - u_b(t)||_{-1/2}^2`.
    pub mean_coupled_sq: f64,
    /// [`wasserstein2`] between the two clouds at time `t`.
    pub cloud_w2: f64,
}

/// Writes `t,mean_coupled_sq_dist,cloud_w2`.
pub fn write_uniqueness_csv<W: Write>(points: &[UniquenessPoint], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["t", "mean_coupled_sq_dist", "cloud_w2"])?;
    for p in points {
        out.write_record([p.t.to_string(), p.mean_coupled_sq.to_string(), p.cloud_w2.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Runs `n_samples` independent noise paths, each driving both initial data,
/// and compares the two clouds at `t = 0` and at every horizon.
pub fn uniqueness_experiment(
    initial_a: &ShellState,
    initial_b: &ShellState,
    params: &ModelParams,
    horizons: &[f64],
    n_samples: usize,
    seed: u64,
    config: &SchemeConfig,
) -> Result<Vec<UniquenessPoint>> {
    if initial_a == initial_b {
        return Err(DyadicError::contract("initial data must differ"));
    }
    uniqueness_experiment_unchecked(initial_a, initial_b, params, horizons, n_samples, seed, config)
}

/// [`uniqueness_experiment`] without the distinct-initial-data requirement.
pub fn uniqueness_experiment_unchecked(
    initial_a: &ShellState,
    initial_b: &ShellState,
    params: &ModelParams,
    horizons: &[f64],
    n_samples: usize,
    seed: u64,
    config: &SchemeConfig,
) -> Result<Vec<UniquenessPoint>> {
    params.require_subcritical()?;
    if horizons.is_empty() || n_samples == 0 || n_samples > N_MAX {
        return Err(DyadicError::contract(format!(
            "need at least one horizon and 1..={N_MAX} samples"
        )));
    }
    if horizons.windows(2).any(|w| w[1] <= w[0]) || horizons[0] <= 0.0 {
        return Err(DyadicError::contract("horizons must be positive and increasing"));
    }
    let mut record = vec![0];
    for &t in horizons {
        record.push(steps_in(t, params.dt(), "horizon")?);
    }
    let t_max = *horizons.last().expect("nonempty");
    let run = params.with_horizon(t_max)?;
    let chains: Vec<(Vec<ShellState>, Vec<ShellState>)> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let path = sample_brownian(t_max, run.dt(), chain_seed(seed, s as u64))?;
            Ok((
                record_states(initial_a, &run, &path, config, &record)?,
                record_states(initial_b, &run, &path, config, &record)?,
            ))
        })
        .collect::<Result<_>>()?;
    let meta = MeasureMeta {
        params: run,
        burn_in: 0.0,
        thin: 0.0,
        seeds: (0..n_samples).map(|s| chain_seed(seed, s as u64)).collect(),
    };
    let times: Vec<f64> = std::iter::once(0.0).chain(horizons.iter().copied()).collect();
    times
        .iter()
        .enumerate()
        .map(|(h, &t)| {
            let cloud_a: Vec<ShellState> = chains.iter().map(|c| c.0[h].clone()).collect();
            let cloud_b: Vec<ShellState> = chains.iter().map(|c| c.1[h].clone()).collect();
            let mean_coupled_sq = cloud_a
                .iter()
                .zip(&cloud_b)
                .map(|(a, b)| weighted_distance_sq(a.as_slice(), b.as_slice(), SobolevIndex::CONTRACTION))
                .sum::<f64>()
                / n_samples as f64;
            let a = EmpiricalMeasure::new(cloud_a, meta.clone())?;
            let b = EmpiricalMeasure::new(cloud_b, meta.clone())?;
            Ok(UniquenessPoint {
                t,
                mean_coupled_sq,
                cloud_w2: wasserstein2(&a, &b, SobolevIndex::CONTRACTION)?,
            })
        })
        .collect()
}

/// First time at which the mean squared coupled distance over `pairs` chains
/// falls below 1% of its initial value, scanning every step up to `params.horizon()`.
pub fn mixing_time_proxy(
    initial_a: &ShellState,
    initial_b: &ShellState,
    params: &ModelParams,
    pairs: usize,
    seed: u64,
    config: &SchemeConfig,
) -> Result<Option<f64>> {
    params.require_subcritical()?;
    let steps = steps_in(params.horizon(), params.dt(), "horizon")?;
    let record: Vec<usize> = (0..=steps).collect();
    let per_chain: Vec<Vec<f64>> = (0..pairs.max(1))
        .into_par_iter()
        .map(|s| {
            let path = sample_brownian(params.horizon(), params.dt(), chain_seed(seed, s as u64))?;
            let a = record_states(initial_a, params, &path, config, &record)?;
            let b = record_states(initial_b, params, &path, config, &record)?;
            Ok(a.iter()
                .zip(&b)
                .map(|(x, y)| weighted_distance_sq(x.as_slice(), y.as_slice(), SobolevIndex::CONTRACTION))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mean = |k: usize| per_chain.iter().map(|c| c[k]).sum::<f64>() / per_chain.len() as f64;
    let start = mean(0);
    Ok((0..=steps)
        .find(|&k| mean(k) <= 0.01 * start)
        .map(|k| k as f64 * params.dt()))
}

/// Ten times [`mixing_time_proxy`], rounded up to a whole number of steps.
pub fn default_burn_in(
    initial_a: &ShellState,
    initial_b: &ShellState,
    params: &ModelParams,
    pairs: usize,
    seed: u64,
    config: &SchemeConfig,
) -> Result<Option<f64>> {
    Ok(mixing_time_proxy(initial_a, initial_b, params, pairs, seed, config)?
        .map(|t| (10.0 * t / params.dt()).ceil() * params.dt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> MeasureMeta {
        MeasureMeta {
            params: ModelParams::new(2.0, 1.0, 1.0, 2, 0.1).unwrap(),
            burn_in: 0.0,
            thin: 0.1,
            seeds: vec![0],
        }
    }

    fn measure(rows: &[[f64; 3]]) -> EmpiricalMeasure {
        let samples = rows.iter().map(|r| ShellState::new(r.to_vec()).unwrap()).collect();
        EmpiricalMeasure::new(samples, meta()).unwrap()
    }

    #[test]
    fn identical_measures_are_at_zero_distance() {
        let a = measure(&[[1.0, 0.5, 0.0], [0.0, 1.0, 2.0], [-1.0, 0.0, 0.3]]);
        let b = measure(&[[0.0, 1.0, 2.0], [-1.0, 0.0, 0.3], [1.0, 0.5, 0.0]]);
        assert_eq!(wasserstein2(&a, &b, SobolevIndex::CONTRACTION).unwrap(), 0.0);
    }

    #[test]
    fn single_pair_is_the_squared_distance() {
        let a = measure(&[[1.0, 1.0, 0.0]]);
        let b = measure(&[[0.0, 0.0, 0.0]]);
        assert_eq!(wasserstein2(&a, &b, SobolevIndex::CONTRACTION).unwrap(), 1.5);
    }

    #[test]
    fn crafted_two_by_two_costs() {
        // In the -1/2 norm: c11 = 1, c22 = 2, c12 = c21 = 4, so the identity
        // matching (cost 3) beats the swap (cost 8).
        let b2 = 2.875f64.sqrt();
        let a = measure(&[[0.0, 0.0, 0.0], [0.0, b2, 2.5]]);
        let b = measure(&[[1.0, 0.0, 0.0], [0.0, 0.0, 4.0]]);
        let cost = cost_matrix(a.samples(), b.samples(), SobolevIndex::CONTRACTION);
        for (got, want) in cost.iter().zip([1.0, 4.0, 4.0, 2.0]) {
            assert!((got - want).abs() < 1e-14);
        }
        let w = wasserstein2(&a, &b, SobolevIndex::CONTRACTION).unwrap();
        assert!((w - 1.5).abs() < 1e-14);
    }

    #[test]
    fn size_checks() {
        let a = measure(&[[0.0, 0.0, 0.0]]);
        let b = measure(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert!(wasserstein2(&a, &b, SobolevIndex::ENERGY).is_err());
        let big: Vec<ShellState> = (0..N_MAX + 1).map(|_| ShellState::zeros(2)).collect();
        let m = EmpiricalMeasure::new(big, meta()).unwrap();
        assert!(wasserstein2(&m, &m, SobolevIndex::ENERGY).is_err());
        assert!(EmpiricalMeasure::new(vec![], meta()).is_err());
    }

    #[test]
    fn zero_chain_has_zero_samples_and_gap() {
        let params = ModelParams::new(2.0, 0.0, 1.0, 5, 0.01).unwrap();
        let m = long_run(&ShellState::zeros(5), &params, 0.5, 10, 0.1, 3, &SchemeConfig::default())
            .unwrap();
        assert!(m.samples().iter().all(|s| s == &ShellState::zeros(5)));
        let early = m.window(0..5).unwrap();
        let late = m.window(5..10).unwrap();
        assert_eq!(stationarity_gap(&early, &late).unwrap(), 0.0);
        assert_eq!(stationarity_gap(&early, &early).unwrap(), 0.0);
    }

    #[test]
    fn long_run_is_deterministic_and_validated() {
        let params = ModelParams::new(2.0, 1.0, 1.0, 6, 0.01).unwrap();
        let init = ShellState::padded(&[0.5, 0.2], 6).unwrap();
        let cfg = SchemeConfig::default().with_gate(false);
        let a = long_run(&init, &params, 0.5, 4, 0.25, 9, &cfg).unwrap();
        let b = long_run(&init, &params, 0.5, 4, 0.25, 9, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.meta().params.horizon(), 1.5);
        assert!(long_run(&init, &params, 0.5, 1, 0.25, 9, &cfg).is_err());
        assert!(long_run(&init, &params, 0.5, 4, 0.005, 9, &cfg).is_err());
        assert!(long_run(&init, &params, 0.51, 4, 0.25, 9, &cfg).is_ok());
        assert!(long_run(&init, &params, 0.515, 4, 0.25, 9, &cfg).is_err());
        let critical = ModelParams::new(3.0, 1.0, 1.0, 6, 0.01).unwrap();
        assert!(long_run(&init, &critical, 0.5, 4, 0.25, 9, &cfg).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let m = measure(&[[1.0, 0.5, 0.0], [0.0, 1.0, 2.0]]);
        let mut buf = Vec::new();
        m.write_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 3);
        assert_eq!(EmpiricalMeasure::read_jsonl(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn second_moments_average_squares() {
        let m = measure(&[[1.0, 3.0, 0.0], [-1.0, 1.0, 2.0]]);
        assert_eq!(m.second_moments(), vec![1.0, 5.0, 2.0]);
    }

    #[test]
    fn identical_initials_give_zero_series() {
        let params = ModelParams::new(2.0, 1.0, 1.0, 6, 0.01).unwrap();
        let u = ShellState::padded(&[0.5, 0.2], 6).unwrap();
        let cfg = SchemeConfig::default().with_gate(false);
        assert!(uniqueness_experiment(&u, &u, &params, &[0.5, 1.0], 4, 1, &cfg).is_err());
        let out = uniqueness_experiment_unchecked(&u, &u, &params, &[0.5, 1.0], 4, 1, &cfg).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|p| p.mean_coupled_sq == 0.0 && p.cloud_w2 == 0.0));
    }

    #[test]
    fn uniqueness_starts_at_initial_distance() {
        let params = ModelParams::new(2.0, 1.0, 1.0, 6, 0.01).unwrap();
        let a = ShellState::padded(&[0.5, 0.2, 0.1], 6).unwrap();
        let b = ShellState::padded(&[-0.3], 6).unwrap();
        let cfg = SchemeConfig::default().with_gate(false);
        let out = uniqueness_experiment(&a, &b, &params, &[0.5, 1.0], 6, 2, &cfg).unwrap();
        let d0 = weighted_distance_sq(a.as_slice(), b.as_slice(), SobolevIndex::CONTRACTION);
        assert_eq!(out[0].t, 0.0);
        assert_eq!(out[0].mean_coupled_sq, d0);
        for p in &out {
            assert!(p.cloud_w2 <= p.mean_coupled_sq + 1e-15);
        }
    }

    #[test]
    fn bootstrap_floor_is_nonnegative_and_deterministic() {
        let m = measure(&[[1.0, 0.5, 0.0], [0.0, 1.0, 2.0], [-1.0, 0.0, 0.3], [0.3, 0.3, 0.3]]);
        let f1 = bootstrap_noise_floor(&m, 50, 4).unwrap();
        let f2 = bootstrap_noise_floor(&m, 50, 4).unwrap();
        assert_eq!(f1, f2);
        assert!(f1 >= 0.0);
    }
}
