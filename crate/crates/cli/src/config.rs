//! Run configuration: every module's settings in one versioned TOML file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dexgrasp::energy::{SynthesisWeights, TtaWeights};
use dexgrasp::hand::HandModel;
use dexgrasp::policy::RewardWeights;
use dexgrasp::quality::QualityConfig;
use dexgrasp::record::check_version;
use dexgrasp::synthesis::{OptimizerConfig, RefineConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Config schema version written by this build.
pub const CONFIG_VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HandConfig {
    /// Hand descriptor file; the bundled hand when absent. The descriptor's
    /// `surface_samples` line sets the hand cloud used for contact maps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<PathBuf>,
}

impl Default for HandConfig {
    fn default() -> Self {
        Self { descriptor: None }
    }
}

/// Built-in scenes and the sampling of every scene cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Points sampled on built-in objects.
    pub points: usize,
    pub sphere_radius: f64,
    pub box_half_extent: f64,
    /// Scale written into records of built-in objects.
    pub scale: f64,
    /// Reject record scales outside the dataset scale set.
    pub strict_scales: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { points: 1024, sphere_radius: 0.04, box_half_extent: 0.04, scale: 0.08, strict_scales: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: String,
    pub hand: HandConfig,
    pub scene: SceneConfig,
    pub synthesis: SynthesisWeights,
    /// Its `seed` is the default base seed of `synth --rng`.
    pub optimizer: OptimizerConfig,
    pub tta: TtaWeights,
    pub refine: RefineConfig,
    pub quality: QualityConfig,
    pub reward: RewardWeights,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION.to_string(),
            hand: HandConfig::default(),
            scene: SceneConfig::default(),
            synthesis: SynthesisWeights::default(),
            optimizer: OptimizerConfig::default(),
            tta: TtaWeights::default(),
            refine: RefineConfig::default(),
            quality: QualityConfig::default(),
            reward: RewardWeights::default(),
        }
    }
}

impl RunConfig {
    /// Loads `path`, or the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
        let config: Self = toml::from_str(&text).with_context(|| {
            format!("invalid config {}; see the README for the accepted keys and their defaults", path.display())
        })?;
        check_version(&config.version, CONFIG_VERSION)
            .with_context(|| format!("config {} was written by a newer version", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.synthesis.validate().context("config [synthesis]")?;
        self.optimizer.validate().context("config [optimizer]")?;
        self.tta.validate().context("config [tta]")?;
        self.quality.validate().context("config [quality]")?;
        self.reward.validate().context("config [reward]")?;
        if self.refine.steps == 0 {
            bail!("config [refine]: steps must be at least 1");
        }
        let s = &self.scene;
        if s.points == 0 || !(s.sphere_radius > 0.0) || !(s.box_half_extent > 0.0) || !(s.scale > 0.0) {
            bail!("config [scene]: points, sphere_radius, box_half_extent and scale must be positive");
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering, defaults included, so that
    /// configs differing only in layout or omitted defaults share a hash.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn hand_model(&self) -> Result<HandModel> {
        match &self.hand.descriptor {
            None => Ok(HandModel::bundled()),
            Some(p) => HandModel::load(p).with_context(|| format!("cannot load hand descriptor {}", p.display())),
        }
    }
}
