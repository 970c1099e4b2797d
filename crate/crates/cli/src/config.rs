//! Run configuration: a TOML document, fully explicit once defaults are applied.

use std::path::{Path, PathBuf};

use hardsphere::estimators::sample_evaluation_point;
use hardsphere::rng::derive_seed;
use hardsphere::{
    BoxSpec, Configuration, ExperimentSpec, InitialMeasure, InnerEstimator, MeasureVariant, ParticleState, Tolerances,
    Tree, Vec3,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(rename = "box")]
    pub bx: BoxConfig,
    pub measure: MeasureConfig,
    #[serde(default)]
    pub point: PointConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub samples: SampleCounts,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub run: RunOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lengths: [f64; 3],
    pub diameter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureConfig {
    #[serde(flatten)]
    pub variant: MeasureVariant,
    /// `N`; ignored by the grand-canonical variant.
    #[serde(default)]
    pub particles: usize,
    #[serde(default = "default_calibration")]
    pub calibration_samples: u64,
}

fn default_calibration() -> u64 {
    200_000
}

/// Evaluation point: explicit `states` rows `[qx, qy, qz, px, py, pz]`, or
/// `n` particles drawn generically (optionally inside `region`, given as
/// fractions of each side).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<[f64; 6]>>,
}

fn default_n() -> usize {
    1
}

impl Default for PointConfig {
    fn default() -> Self {
        Self { n: 1, region: None, states: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default = "default_t")]
    pub t: f64,
    #[serde(default)]
    pub grid: Vec<f64>,
}

fn default_t() -> f64 {
    1.0
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { t: 1.0, grid: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleCounts {
    pub direct: u64,
    pub tree: u64,
    pub series: u64,
    pub step: u64,
    pub cancel: u64,
    pub collision: u64,
    pub bbgky: u64,
}

impl Default for SampleCounts {
    fn default() -> Self {
        let k = 100_000;
        Self { direct: k, tree: k, series: k, step: k, cancel: k, collision: k, bbgky: k }
    }
}

impl SampleCounts {
    pub fn all(k: u64) -> Self {
        Self { direct: k, tree: k, series: k, step: k, cancel: k, collision: k, bbgky: k }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    /// Tree for `rho-tree`, or the source tree of `verify-step` / `verify-cancel`,
    /// written `n:[j1,...]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree: Option<String>,
    pub inner: InnerEstimator,
    pub nsigma: f64,
    /// Minimum fraction of anti-symmetric recollision draws in `verify-cancel`.
    pub min_antisymmetric: f64,
    pub chunk: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { tree: None, inner: InnerEstimator::Series, nsigma: 3.0, min_antisymmetric: 0.999, chunk: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    T,
    Lambda,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepEstimator {
    RhoSeries,
    RhoDirect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default = "default_sweep_estimator")]
    pub estimator: SweepEstimator,
}

fn default_sweep_estimator() -> SweepEstimator {
    SweepEstimator::RhoSeries
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.box_spec()?;
        self.tolerances.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let canonical = !matches!(self.measure.variant, MeasureVariant::GrandCanonical { .. });
        if canonical && self.measure.particles == 0 {
            return Err(CliError::Config("measure.particles must be at least 1".into()));
        }
        if self.point.n == 0 && self.point.states.is_none() {
            return Err(CliError::Config("point.n must be at least 1".into()));
        }
        if let Some([lo, hi]) = self.point.region {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return Err(CliError::Config(format!("point.region [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1")));
            }
        }
        if !(self.time.t >= 0.0 && self.time.t.is_finite()) {
            return Err(CliError::Config(format!("time.t must be non-negative, got {}", self.time.t)));
        }
        if !(self.run.nsigma > 0.0) {
            return Err(CliError::Config("run.nsigma must be positive".into()));
        }
        if let Some(tree) = &self.run.tree {
            tree.parse::<Tree>().map_err(|e| CliError::Config(format!("run.tree: {e}")))?;
        }
        Ok(())
    }

    pub fn box_spec(&self) -> Result<BoxSpec> {
        BoxSpec::new(self.bx.lengths, self.bx.diameter).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn tree(&self) -> Result<Tree> {
        let s = self.run.tree.as_deref().ok_or_else(|| CliError::Config("run.tree is required for this command".into()))?;
        s.parse().map_err(|e: hardsphere::Error| CliError::Config(format!("run.tree: {e}")))
    }

    pub fn measure_with(&self, variant: MeasureVariant) -> Result<InitialMeasure> {
        let seed = derive_seed(self.seed, "calibration");
        Ok(InitialMeasure::calibrate(variant, self.box_spec()?, self.measure.particles, self.measure.calibration_samples, seed)?)
    }

    pub fn measure(&self) -> Result<InitialMeasure> {
        self.measure_with(self.measure.variant.clone())
    }

    /// The evaluation point; generic draws are regular for the backward flow
    /// over `horizon`.
    pub fn point(&self, measure: &InitialMeasure, horizon: f64) -> Result<Configuration> {
        if let Some(rows) = &self.point.states {
            let states: Vec<ParticleState> = rows
                .iter()
                .map(|r| ParticleState::new(Vec3::new(r[0], r[1], r[2]), Vec3::new(r[3], r[4], r[5])))
                .collect();
            if states.is_empty() {
                return Err(CliError::Config("point.states is empty".into()));
            }
            return Ok(Configuration::new(states));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "point"));
        let region = self.point.region.map(|[lo, hi]| (lo, hi));
        Ok(sample_evaluation_point(measure, self.point.n, region, horizon, &self.tolerances, &mut rng)?)
    }

    pub fn spec(&self, measure: InitialMeasure, point: Configuration, t: f64, samples: u64) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(measure, point, t, samples, self.seed);
        spec.tol = self.tolerances;
        spec.chunk = self.run.chunk.max(1);
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [box]
        lengths = [1.0, 1.0, 1.0]
        diameter = 0.1

        [measure]
        kind = "perturbed_product"
        beta = 1.0
        lambda = 0.3
        wavevector = [1.0, 0.0, 0.0]
        profile = "rough"
        particles = 3
    "#;

    #[test]
    fn defaults_are_filled_in() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.seed, 1);
        assert_eq!(c.point, PointConfig::default());
        assert_eq!(c.samples, SampleCounts::default());
        assert_eq!(c.run.nsigma, 3.0);
        assert_eq!(c.measure.calibration_samples, 200_000);
        // Re-parsing the echoed form gives the same configuration.
        let echoed = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::parse(&echoed).unwrap(), c);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let bad = MINIMAL.replace("diameter = 0.1", "diameter = -0.1");
        assert!(matches!(RunConfig::parse(&bad), Err(CliError::Config(_))));
        let bad = format!("{MINIMAL}\n[run]\ntree = \"2:[3]\"\n");
        assert!(matches!(RunConfig::parse(&bad), Err(CliError::Config(_))));
        let bad = format!("unknown = 1\n{MINIMAL}");
        assert!(matches!(RunConfig::parse(&bad), Err(CliError::Config(_))));
    }
}
