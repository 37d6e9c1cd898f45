use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dyadic_core::{ModelParams, Positivity, Scheme, SchemeConfig, ShellState};
use serde::{Deserialize, Serialize};

/// Everything a run depends on, as read from the TOML file and the command line.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub scheme: SchemeSection,
    pub initial: InitialSection,
    pub run: RunSection,
    pub couple: CoupleSection,
    pub spectrum: SpectrumSection,
    pub stationary: StationarySection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub c: f64,
    pub sigma: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub dt: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            c: 2.0,
            sigma: 1.0,
            horizon: 1.0,
            n: 20,
            dt: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeSection {
    pub scheme: Scheme,
    pub positivity: Positivity,
    pub stiffness_safety: f64,
    /// Unset means the command's own default.
    pub enforce_gate: Option<bool>,
}

impl Default for SchemeSection {
    fn default() -> Self {
        let d = SchemeConfig::default();
        SchemeSection {
            scheme: d.scheme(),
            positivity: d.positivity(),
            stiffness_safety: d.stiffness_safety(),
            enforce_gate: None,
        }
    }
}

/// Initial data: explicit leading values (zero-padded), or `amplitude * 2^{-j}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub values: Option<Vec<f64>>,
    pub amplitude: f64,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            values: None,
            amplitude: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Jsonl,
    Both,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Number of consecutive seeds starting at `seed`.
    pub seeds: Option<usize>,
    pub save_every: usize,
    pub format: Format,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seeds: None,
            save_every: 1,
            format: Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupleSection {
    pub initial_b: Vec<f64>,
    /// Radii for the continuity ladder; empty skips it.
    pub deltas: Vec<f64>,
    pub probes: usize,
}

impl Default for CoupleSection {
    fn default() -> Self {
        CoupleSection {
            initial_b: vec![-0.5],
            deltas: Vec::new(),
            probes: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    pub j_min: Option<usize>,
    pub j_max: Option<usize>,
    pub slack: f64,
    /// CSV with columns `j,value` to fit instead of simulating.
    pub profile: Option<PathBuf>,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection {
            j_min: None,
            j_max: None,
            slack: 0.2,
            profile: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationarySection {
    pub initial_b: Vec<f64>,
    pub horizons: Vec<f64>,
    pub n_samples: usize,
    /// Length of the long-run measure; 0 skips it.
    pub long_run_samples: usize,
    /// Unset means ten times the coupling mixing proxy.
    pub burn_in: Option<f64>,
    pub thin: f64,
    pub resamples: usize,
}

impl Default for StationarySection {
    fn default() -> Self {
        StationarySection {
            initial_b: vec![-0.5],
            horizons: vec![1.0, 2.0, 4.0, 8.0],
            n_samples: 64,
            long_run_samples: 0,
            burn_in: None,
            thin: 0.25,
            resamples: 200,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub n: Option<usize>,
    pub c: Option<f64>,
    pub sigma: Option<f64>,
    pub horizon: Option<f64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = overrides.seed {
            config.seed = s;
        }
        let m = &mut config.model;
        m.dt = overrides.dt.unwrap_or(m.dt);
        m.n = overrides.n.unwrap_or(m.n);
        m.c = overrides.c.unwrap_or(m.c);
        m.sigma = overrides.sigma.unwrap_or(m.sigma);
        m.horizon = overrides.horizon.unwrap_or(m.horizon);
        config.params()?;
        config.initial_state()?;
        if config.run.save_every == 0 {
            bail!("run.save_every must be at least 1");
        }
        Ok(config)
    }

    pub fn params(&self) -> anyhow::Result<ModelParams> {
        let m = &self.model;
        Ok(ModelParams::new(m.c, m.sigma, m.horizon, m.n, m.dt)?)
    }

    /// The scheme, with `gate_default` used when the file leaves the gate unset.
    pub fn scheme(&self, gate_default: bool) -> anyhow::Result<SchemeConfig> {
        let s = &self.scheme;
        Ok(SchemeConfig::new(s.scheme, s.positivity, s.stiffness_safety)?
            .with_gate(s.enforce_gate.unwrap_or(gate_default)))
    }

    pub fn initial_state(&self) -> anyhow::Result<ShellState> {
        let n = self.model.n;
        let state = match &self.initial.values {
            Some(v) => ShellState::padded(v, n)?,
            None => ShellState::new(
                (0..=n)
                    .map(|j| self.initial.amplitude * (-(j as f64)).exp2())
                    .collect(),
            )?,
        };
        Ok(state)
    }

    /// Seeds of the batch, `seed, seed + 1, ...`.
    pub fn seeds(&self, default_count: usize) -> Vec<u64> {
        let count = self.run.seeds.unwrap_or(default_count).max(1);
        (0..count as u64).map(|k| self.seed.wrapping_add(k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RunConfig::load(None, &Overrides::default()).unwrap();
        assert_eq!(c.params().unwrap().n(), 20);
        assert_eq!(c.initial_state().unwrap().get(3), 0.5 / 8.0);
        assert_eq!(c.seeds(3), vec![0, 1, 2]);
    }

    #[test]
    fn sections_parse_and_overrides_win() {
        let text = r#"
            seed = 7
            [model]
            c = 1.5
            N = 4
            [scheme]
            scheme = "explicit-euler"
            enforce_gate = false
            [initial]
            values = [1.0, 0.5]
            [run]
            seeds = 2
        "#;
        let mut config: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(config.scheme.scheme, Scheme::ExplicitEuler);
        assert!(!config.scheme(true).unwrap().enforce_gate());
        config.model.n = 6;
        assert_eq!(config.initial_state().unwrap().truncation(), 6);
        assert_eq!(config.seeds(100), vec![7, 8]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[model]\nnu = 1.0").is_err());
    }
}
