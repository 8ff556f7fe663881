//! Experiment configuration: file schema, defaults and flag overrides.
//!
//! Files are TOML. A JSON summary written by a previous run is accepted as
//! well; its embedded `config` block is used.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use llg_core::integrators::SdeScheme;
use llg_core::steering::SteeringConfig;
use llg_core::{LlgParams, ModeIndex, ModeState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default = "unit")]
    pub mu1: f64,
    #[serde(default = "unit")]
    pub mu2: f64,
    /// `(frequency, axis)` pairs.
    #[serde(default = "default_modes")]
    pub control_modes: Vec<(usize, usize)>,
    #[serde(rename = "T", default = "unit")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    /// Flat initial coefficients; a random state on the sphere of radius
    /// `√(2π)` is drawn from `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<Vec<f64>>,
    /// Flat target coefficients; drawn from `seed + 1` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m1: Option<Vec<f64>>,
    #[serde(default)]
    pub steering: SteeringConfig,
    #[serde(default)]
    pub support: SupportSection,
    #[serde(default)]
    pub rank: RankSection,
    #[serde(default)]
    pub pde: PdeSection,
    #[serde(default)]
    pub tail: TailSection,
}

fn unit() -> f64 {
    1.0
}

fn default_dt() -> f64 {
    1e-3
}

fn default_modes() -> Vec<(usize, usize)> {
    vec![(0, 1), (0, 2), (1, 1)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupportSection {
    #[serde(rename = "N")]
    pub paths: usize,
    pub eps: f64,
    /// Grid radius around `m0`.
    #[serde(rename = "R")]
    pub radius: f64,
    pub points: usize,
    /// Noise amplitude.
    pub sigma: f64,
    pub scheme: SdeScheme,
    /// Steer every grid point to `m1` and shift the noise by the control.
    pub steer: bool,
    /// Time step used for steering.
    pub steer_dt: f64,
}

impl Default for SupportSection {
    fn default() -> Self {
        Self {
            paths: 10_000,
            eps: 0.05,
            radius: 0.0,
            points: 1,
            sigma: 1.0,
            scheme: SdeScheme::Heun,
            steer: false,
            steer_dt: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankSection {
    pub samples: usize,
}

impl Default for RankSection {
    fn default() -> Self {
        Self { samples: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeSection {
    #[serde(rename = "N_x")]
    pub nx: usize,
    /// Largest PDE step; 90% of the stability limit when absent.
    pub dt: Option<f64>,
    pub richardson: bool,
    pub renormalize: bool,
    /// Truncation of the smooth default initial field.
    pub reference_order: usize,
    /// Default initial field `(sin θ, 0, cos θ)` with `θ = tilt·cos x`.
    pub tilt: f64,
}

impl Default for PdeSection {
    fn default() -> Self {
        Self {
            nx: 257,
            dt: None,
            richardson: false,
            renormalize: false,
            reference_order: 16,
            tilt: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailSection {
    /// Longest sampled time.
    #[serde(rename = "T1")]
    pub horizon: f64,
    pub samples: usize,
}

impl Default for TailSection {
    fn default() -> Self {
        Self {
            horizon: 0.01,
            samples: 10,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            order: None,
            mu1: 1.0,
            mu2: 1.0,
            control_modes: default_modes(),
            horizon: 1.0,
            dt: default_dt(),
            seed: 0,
            m0: None,
            m1: None,
            steering: SteeringConfig::default(),
            support: SupportSection::default(),
            rank: RankSection::default(),
            pde: PdeSection::default(),
            tail: TailSection::default(),
        }
    }
}

/// Reads a TOML config, or the `config` block of a JSON summary.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let mut value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
        return serde_json::from_value(value)
            .with_context(|| format!("invalid config in {}", path.display()));
    }
    toml::from_str(&text).map_err(|e| anyhow!("{}: {e}", path.display()))
}

/// Parses `0:1,0:2,1:1`.
pub fn parse_modes(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (k, l) = p
                .trim()
                .split_once(':')
                .ok_or_else(|| anyhow!("mode `{p}` is not of the form frequency:axis"))?;
            Ok((k.trim().parse()?, l.trim().parse()?))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn order(&self) -> Result<usize> {
        self.order
            .ok_or_else(|| anyhow!("missing key `K` (set it in the config file or pass --K)"))
    }

    pub fn params(&self) -> Result<LlgParams> {
        let modes = self
            .control_modes
            .iter()
            .map(|&(k, l)| ModeIndex::new(k, l))
            .collect::<llg_core::Result<Vec<_>>>()?;
        let p = LlgParams::new(self.order()?)
            .with_constants(self.mu1, self.mu2)
            .with_modes(modes);
        p.validate()?;
        Ok(p)
    }

    /// Checks every numeric field against the preconditions of the modules.
    pub fn validate(&self) -> Result<()> {
        self.params()?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            bail!("T = {} must be positive", self.horizon);
        }
        if !(self.dt > 0.0 && self.dt <= self.horizon) {
            bail!("dt = {} must lie in (0, T]", self.dt);
        }
        let dim = 3 * (self.order()? + 1);
        for (name, v) in [("m0", &self.m0), ("m1", &self.m1)] {
            if let Some(v) = v {
                if v.len() != dim {
                    bail!(
                        "`{name}` has {} coefficients, K = {} needs {dim}",
                        v.len(),
                        self.order()?
                    );
                }
            }
        }
        self.steering.validate()?;
        let s = &self.support;
        if s.paths == 0 {
            bail!("support.N must be positive");
        }
        if !(s.eps > 0.0) {
            bail!("support.eps = {} must be positive", s.eps);
        }
        if !(s.radius >= 0.0) {
            bail!("support.R = {} must be non-negative", s.radius);
        }
        if s.points == 0 {
            bail!("support.points must be positive");
        }
        if !(s.sigma > 0.0 && s.sigma.is_finite()) {
            bail!("support.sigma = {} must be positive", s.sigma);
        }
        if !(s.steer_dt > 0.0) {
            bail!("support.steer_dt = {} must be positive", s.steer_dt);
        }
        if self.rank.samples == 0 {
            bail!("rank.samples must be positive");
        }
        if self.pde.nx < 3 {
            bail!("pde.N_x = {} needs at least 3 points", self.pde.nx);
        }
        if self.tail.samples < 2 || !(self.tail.horizon > 0.0) {
            bail!("tail needs T1 > 0 and at least two samples");
        }
        Ok(())
    }

    fn state(&self, given: &Option<Vec<f64>>, salt: u64) -> Result<ModeState> {
        let order = self.order()?;
        match given {
            Some(v) => Ok(ModeState::from_coeffs(order, v.clone())?),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(salt));
                Ok(ModeState::random_on_sphere(
                    order,
                    (2.0 * std::f64::consts::PI).sqrt(),
                    &mut rng,
                ))
            }
        }
    }

    pub fn initial(&self) -> Result<ModeState> {
        self.state(&self.m0, 0)
    }

    pub fn target(&self) -> Result<ModeState> {
        self.state(&self.m1, 1)
    }
}
