use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merging::MergeVariant;
use crate::partition::{DEFAULT_EPS, DEFAULT_K, DEFAULT_MIN_POINTS};
use crate::projection::DEFAULT_DEPTH_TOLERANCE_FACTOR;

/// How the crop cloud is split before k-means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SuperclusterMode {
    /// DBSCAN components; noise is dropped.
    #[default]
    Dbscan,
    /// Everything in one supercluster, nothing dropped.
    WholeCloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub eps: f64,
    pub min_points: usize,
    pub k: usize,
    /// World-space splat radius; estimated from the crop cloud when absent.
    pub splat_radius: Option<f64>,
    /// Depth tolerance as a multiple of the splat radius.
    pub depth_tolerance_factor: f64,
    pub variant: MergeVariant,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub superclusters: SuperclusterMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            min_points: DEFAULT_MIN_POINTS,
            k: DEFAULT_K,
            splat_radius: None,
            depth_tolerance_factor: DEFAULT_DEPTH_TOLERANCE_FACTOR,
            variant: MergeVariant::FullLpa,
            seed: 42,
            workers: 0,
            superclusters: SuperclusterMode::Dbscan,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.min_points == 0 {
            return bad("min_points must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if let Some(r) = self.splat_radius {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("splat_radius must be positive, got {r}"));
            }
        }
        if !(self.depth_tolerance_factor > 0.0 && self.depth_tolerance_factor.is_finite()) {
            return bad(format!(
                "depth_tolerance_factor must be positive, got {}",
                self.depth_tolerance_factor
            ));
        }
        Ok(())
    }
}
