use std::io::Write;

use anyhow::{bail, Context};
use dyadic_core::analysis::{mode_profile, ModulusPoint};
use dyadic_core::stationary::{
    bootstrap_noise_floor, default_burn_in, write_uniqueness_csv, UniquenessPoint,
};
use dyadic_core::{
    check_energy_bound, check_u0_bound, continuity_modulus, couple, fit_decay_slope,
    integrate, integrate_thinned, long_run, regularity_profile, sample_brownian,
    stationarity_gap, uniqueness_experiment, BoundReport, ModelParams, SchemeConfig, ShellState,
    SlopeFit,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Format, RunConfig};
use crate::output::OutDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Violation,
}

impl Status {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Pass
        } else {
            Status::Violation
        }
    }
}

/// Runs `job` for every seed in parallel and returns the results in seed
/// order; the first failing seed (in that order) wins.
fn per_seed<T, F>(seeds: &[u64], job: F) -> anyhow::Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> anyhow::Result<T> + Sync,
{
    let results: Vec<anyhow::Result<T>> = seeds
        .par_iter()
        .map(|&s| job(s).with_context(|| format!("seed {s}")))
        .collect();
    results.into_iter().collect()
}

#[derive(Serialize)]
struct RunSummary {
    seed: u64,
    final_state: ShellState,
    max_energy: f64,
    max_energy_time: f64,
    projections: usize,
    fallbacks: usize,
    subdivisions: usize,
}

pub fn simulate(config: &RunConfig, out: &mut OutDir) -> anyhow::Result<Status> {
    let params = config.params()?;
    let scheme = config.scheme(true)?;
    let initial = config.initial_state()?;
    let every = config.run.save_every;
    let runs = per_seed(&config.seeds(1), |seed| {
        let path = sample_brownian(params.horizon(), params.dt(), seed)?;
        let traj = integrate_thinned(&initial, &params, &path, &scheme, every)?;
        Ok((seed, path, traj))
    })?;
    let mut summaries = Vec::new();
    for (seed, path, traj) in &runs {
        out.write(&format!("noise_{seed}.csv"), |w| Ok(path.write_csv(w)?))?;
        if config.run.format != Format::Jsonl {
            out.write(&format!("trajectory_{seed}.csv"), |w| Ok(traj.write_csv(w, 1)?))?;
        }
        if config.run.format != Format::Csv {
            out.write(&format!("trajectory_{seed}.jsonl"), |w| Ok(traj.write_jsonl(w, 1)?))?;
        }
        let (max_energy, max_energy_time) = traj.max_energy();
        summaries.push(RunSummary {
            seed: *seed,
            final_state: traj.final_state().clone(),
            max_energy,
            max_energy_time,
            projections: traj.stats.projections,
            fallbacks: traj.stats.fallbacks,
            subdivisions: traj.stats.subdivisions,
        });
    }
    out.write_json("summary.json", &summaries)?;
    Ok(Status::Pass)
}

/// Default fitting window `[2, N - 4]`, clipped by the user's choices.
fn window(config: &RunConfig, top: usize) -> (usize, usize) {
    let j_min = config.spectrum.j_min.unwrap_or(2);
    let j_max = config.spectrum.j_max.unwrap_or(top.saturating_sub(4));
    (j_min, j_max)
}

#[derive(Serialize)]
struct SlopeReport {
    c: f64,
    j_min: usize,
    j_max: usize,
    bound_exponent: f64,
    slack: f64,
    fit: Option<SlopeFit>,
    prefactor: Option<f64>,
    satisfied: bool,
    error: Option<String>,
}

fn slope_report(config: &RunConfig, profile: &[(usize, f64)], top: usize) -> SlopeReport {
    let (j_min, j_max) = window(config, top);
    let c = config.model.c;
    let slack = config.spectrum.slack;
    let fit = fit_decay_slope(profile, j_min, j_max);
    SlopeReport {
        c,
        j_min,
        j_max,
        bound_exponent: -2.0 * c / 3.0,
        slack,
        satisfied: fit
            .as_ref()
            .is_ok_and(|f| f.satisfies_regularity_bound(c, slack)),
        prefactor: fit.as_ref().ok().map(SlopeFit::prefactor),
        error: fit.as_ref().err().map(|e| e.to_string()),
        fit: fit.ok(),
    }
}

#[derive(Serialize)]
struct BoundSummary {
    theoretical_max: f64,
    observed_max: f64,
    worst_margin: f64,
    worst_seed: u64,
    violations: usize,
}

fn summarize<'a>(reports: impl Iterator<Item = (u64, &'a BoundReport)>) -> BoundSummary {
    let mut s = BoundSummary {
        theoretical_max: 0.0,
        observed_max: 0.0,
        worst_margin: f64::INFINITY,
        worst_seed: 0,
        violations: 0,
    };
    for (seed, r) in reports {
        s.theoretical_max = s.theoretical_max.max(r.theoretical);
        s.observed_max = s.observed_max.max(r.observed_max);
        if r.margin < s.worst_margin {
            s.worst_margin = r.margin;
            s.worst_seed = seed;
        }
        s.violations += usize::from(r.violated);
    }
    s
}

#[derive(Serialize)]
struct SeedBounds {
    seed: u64,
    u0: BoundReport,
    energy: BoundReport,
}

#[derive(Serialize)]
struct VerifyReport {
    seeds: usize,
    violations: usize,
    u0: BoundSummary,
    energy: BoundSummary,
    /// Fit of the seed-averaged `int u_j^2`; reported, not part of the verdict.
    regularity: SlopeReport,
    runs: Vec<SeedBounds>,
}

pub fn verify(config: &RunConfig, out: &mut OutDir) -> anyhow::Result<Status> {
    let params = config.params()?;
    let scheme = config.scheme(true)?;
    let initial = config.initial_state()?;
    let norm = initial.l2_norm();
    let seeds = config.seeds(100);
    let runs = per_seed(&seeds, |seed| {
        let path = sample_brownian(params.horizon(), params.dt(), seed)?;
        let traj = integrate(&initial, &params, &path, &scheme)?;
        let bounds = SeedBounds {
            seed,
            u0: check_u0_bound(&traj, &path, norm)?,
            energy: check_energy_bound(&traj, &path, norm)?,
        };
        Ok((bounds, traj.mode_integrals))
    })?;
    let n = params.n();
    let mut mean = vec![0.0; n + 1];
    for (_, modes) in &runs {
        mean.iter_mut().zip(modes).for_each(|(m, v)| *m += v / seeds.len() as f64);
    }
    let profile: Vec<(usize, f64)> = mean.iter().copied().enumerate().collect();
    let bounds: Vec<SeedBounds> = runs.into_iter().map(|r| r.0).collect();
    let u0 = summarize(bounds.iter().map(|b| (b.seed, &b.u0)));
    let energy = summarize(bounds.iter().map(|b| (b.seed, &b.energy)));
    let report = VerifyReport {
        seeds: seeds.len(),
        violations: u0.violations + energy.violations,
        u0,
        energy,
        regularity: slope_report(config, &profile, n),
        runs: bounds,
    };
    out.write("profile.csv", |w| write_profile(w, &profile))?;
    out.write_json("verify.json", &report)?;
    Ok(Status::from_pass(report.violations == 0))
}

fn write_profile<W: Write>(w: W, profile: &[(usize, f64)]) -> anyhow::Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["j", "value"])?;
    for (j, v) in profile {
        csv.write_record([j.to_string(), v.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct ProfileRow {
    j: usize,
    value: f64,
}

pub fn spectrum(config: &RunConfig, out: &mut OutDir) -> anyhow::Result<Status> {
    let profile: Vec<(usize, f64)> = match &config.spectrum.profile {
        Some(file) => {
            let mut reader = csv::Reader::from_path(file)
                .with_context(|| format!("opening profile {}", file.display()))?;
            reader
                .deserialize()
                .map(|row| row.map(|r: ProfileRow| (r.j, r.value)))
                .collect::<Result<_, _>>()
                .with_context(|| format!("reading profile {}", file.display()))?
        }
        None => {
            let params = config.params()?;
            let scheme = config.scheme(true)?;
            let initial = config.initial_state()?;
            let seeds = config.seeds(1);
            let runs = per_seed(&seeds, |seed| {
                let path = sample_brownian(params.horizon(), params.dt(), seed)?;
                let traj = integrate_thinned(&initial, &params, &path, &scheme, usize::MAX)?;
                Ok(mode_profile(&regularity_profile(&traj)))
            })?;
            let mut mean = vec![0.0; params.n() + 1];
            for run in &runs {
                for &(j, v) in run {
                    mean[j] += v / seeds.len() as f64;
                }
            }
            mean.into_iter().enumerate().collect()
        }
    };
    let top = profile.iter().map(|p| p.0).max().unwrap_or(0);
    let report = slope_report(config, &profile, top);
    out.write("spectrum.csv", |w| write_profile(w, &profile))?;
    out.write_json("spectrum.json", &report)?;
    Ok(Status::from_pass(report.satisfied))
}

#[derive(Serialize)]
struct CoupleRun {
    seed: u64,
    initial: f64,
    #[serde(rename = "final")]
    final_distance: f64,
    monotone_violations: usize,
    tolerance: f64,
}

#[derive(Serialize)]
struct CoupleReport {
    runs: Vec<CoupleRun>,
    modulus: Option<Vec<ModulusPoint>>,
    modulus_shrinking: Option<bool>,
}

pub fn couple_cmd(config: &RunConfig, out: &mut OutDir) -> anyhow::Result<Status> {
    let params = config.params()?;
    let scheme = config.scheme(true)?;
    let a = config.initial_state()?;
    let b = ShellState::padded(&config.couple.initial_b, params.n())?;
    let seeds = config.seeds(1);
    let runs = per_seed(&seeds, |seed| {
        let path = sample_brownian(params.horizon(), params.dt(), seed)?;
        Ok((seed, couple(&a, &b, &params, &path, &scheme)?))
    })?;
    let mut pass = true;
    let mut summary = Vec::new();
    for (seed, r) in &runs {
        out.write(&format!("distance_{seed}.csv"), |w| Ok(r.write_csv(w)?))?;
        pass &= r.monotone_violations == 0 && r.final_distance <= r.initial;
        summary.push(CoupleRun {
            seed: *seed,
            initial: r.initial,
            final_distance: r.final_distance,
            monotone_violations: r.monotone_violations,
            tolerance: r.tolerance,
        });
    }
    let mut report = CoupleReport {
        runs: summary,
        modulus: None,
        modulus_shrinking: None,
    };
    if !config.couple.deltas.is_empty() {
        let path = sample_brownian(params.horizon(), params.dt(), config.seed)?;
        let points = continuity_modulus(
            &a,
            &path,
            &params,
            &config.couple.deltas,
            config.couple.probes,
            config.seed,
            &scheme,
        )?;
        let shrinking = points.windows(2).all(|w| w[1].value <= w[0].value);
        pass &= shrinking;
        out.write("modulus.csv", |w| write_modulus(w, &points))?;
        report.modulus = Some(points);
        report.modulus_shrinking = Some(shrinking);
    }
    out.write_json("couple.json", &report)?;
    Ok(Status::from_pass(pass))
}

fn write_modulus<W: Write>(w: W, points: &[ModulusPoint]) -> anyhow::Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["delta", "realized_initial_delta", "realized_path_delta", "value"])?;
    for p in points {
        csv.write_record([
            p.delta.to_string(),
            p.realized_initial_delta.to_string(),
            p.realized_path_delta.to_string(),
            p.value.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Stationarity {
    burn_in: f64,
    samples: usize,
    gap: f64,
    noise_floor: f64,
    within_floor: bool,
}

#[derive(Serialize)]
struct StationaryReport {
    uniqueness: Vec<UniquenessPoint>,
    mean_decreasing: bool,
    cloud_decreasing: bool,
    stationarity: Option<Stationarity>,
}

fn strictly_decreasing(v: impl Iterator<Item = f64>) -> bool {
    let v: Vec<f64> = v.collect();
    v.windows(2).all(|w| w[1] < w[0])
}

pub fn stationary(config: &RunConfig, out: &mut OutDir) -> anyhow::Result<Status> {
    let params = config.params()?;
    // The a-priori bound grows like T^2, so long runs default to no gate.
    let scheme = config.scheme(false)?;
    let st = &config.stationary;
    let a = config.initial_state()?;
    let b = ShellState::padded(&st.initial_b, params.n())?;
    let points =
        uniqueness_experiment(&a, &b, &params, &st.horizons, st.n_samples, config.seed, &scheme)?;
    let mean_decreasing = strictly_decreasing(points.iter().map(|p| p.mean_coupled_sq));
    let cloud_decreasing = strictly_decreasing(points.iter().map(|p| p.cloud_w2));
    out.write("uniqueness.csv", |w| Ok(write_uniqueness_csv(&points, w)?))?;
    let stationarity = if st.long_run_samples > 0 {
        Some(stationarity(config, &params, &scheme, &a, &b, out)?)
    } else {
        None
    };
    let pass = mean_decreasing
        && cloud_decreasing
        && stationarity.as_ref().is_none_or(|s| s.within_floor);
    out.write_json(
        "stationary.json",
        &StationaryReport {
            uniqueness: points,
            mean_decreasing,
            cloud_decreasing,
            stationarity,
        },
    )?;
    Ok(Status::from_pass(pass))
}

fn stationarity(
    config: &RunConfig,
    params: &ModelParams,
    scheme: &SchemeConfig,
    a: &ShellState,
    b: &ShellState,
    out: &mut OutDir,
) -> anyhow::Result<Stationarity> {
    let st = &config.stationary;
    let burn_in = match st.burn_in {
        Some(t) => t,
        None => {
            let t_max = st.horizons.last().copied().unwrap_or(params.horizon());
            default_burn_in(a, b, &params.with_horizon(t_max)?, 16, config.seed, scheme)?
                .with_context(|| format!("coupled chains did not mix by t = {t_max}"))?
        }
    };
    if st.long_run_samples < 4 {
        bail!("stationary.long_run_samples must be at least 4");
    }
    let measure = long_run(a, params, burn_in, st.long_run_samples, st.thin, config.seed, scheme)?;
    let half = measure.len() / 2;
    let early = measure.window(0..half)?;
    let late = measure.window(half..2 * half)?;
    let gap = stationarity_gap(&early, &late)?;
    let noise_floor = bootstrap_noise_floor(&early, st.resamples, config.seed)?;
    out.write("measure.jsonl", |w| Ok(measure.write_jsonl(w)?))?;
    Ok(Stationarity {
        burn_in,
        samples: measure.len(),
        gap,
        noise_floor,
        within_floor: gap <= noise_floor,
    })
}
