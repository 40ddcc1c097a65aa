//! Run configuration. Every field has a default, so a config file only needs
//! the keys it changes.

use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, OptimizerConfig};
use crate::scene::{GenConfig, OracleParams, Range};
use crate::viewspace::ViewSpaceConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub far_plane: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            fov_deg: 50.0,
            far_plane: 16.0,
        }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::from_fov(self.width, self.height, self.fov_deg, self.far_plane)
    }
}

/// Placement of the global (first) view relative to the cabinet front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalViewConfig {
    pub distance: Range,
    /// Degrees around the vertical axis, 0 facing the cabinet front.
    pub azimuth: Range,
    /// Degrees above the horizontal.
    pub elevation: Range,
    /// Uniform jitter of the aim point around the cabinet front center.
    pub target_jitter: f64,
}

impl Default for GlobalViewConfig {
    fn default() -> Self {
        Self {
            distance: Range::new(5.5, 7.5),
            azimuth: Range::new(-35.0, 35.0),
            elevation: Range::new(12.0, 35.0),
            target_jitter: 0.3,
        }
    }
}

impl GlobalViewConfig {
    pub fn validate(&self) -> Result<()> {
        self.distance.validate("global_view.distance")?;
        self.azimuth.validate("global_view.azimuth")?;
        self.elevation.validate("global_view.elevation")?;
        if !(self.distance.min > 0.0) {
            return Err(Error::Config("global view distance must be positive".into()));
        }
        if self.elevation.min <= -90.0 || self.elevation.max >= 90.0 {
            return Err(Error::Config("global view elevation must stay inside (-90, 90)".into()));
        }
        if !(self.target_jitter >= 0.0) {
            return Err(Error::Config("target jitter must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub num_pos: usize,
    pub num_neg: usize,
    /// Contact pixels tried per scene before moving to the next scene.
    pub attempts_per_scene: usize,
    /// Total interaction attempts before collection gives up.
    pub max_attempts: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            num_pos: 400,
            num_neg: 400,
            attempts_per_scene: 100,
            max_attempts: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Leading epochs that optimize the initial-depth loss only.
    pub warmup_epochs: usize,
    pub batch_size: usize,
    /// Proposals scored per step for the action-scoring loss.
    pub proposals: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            warmup_epochs: 5,
            batch_size: 4,
            proposals: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Ray-march step for contact self-correction.
    pub march_step: f64,
    pub contact_tol: f64,
    /// Distance behind the predicted contact where the approach starts.
    pub standoff: f64,
    pub max_travel: f64,
    pub max_steps: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            beta: 0.2,
            march_step: 0.005,
            contact_tol: 1e-3,
            standoff: 0.5,
            max_travel: 1.5,
            max_steps: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seen_episodes: usize,
    pub unseen_episodes: usize,
    /// Proposals drawn at inference before picking the best-scored one.
    pub proposals: usize,
    /// Success threshold for long-term interaction.
    pub long_delta: f64,
    pub ablations: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seen_episodes: 100,
            unseen_episodes: 100,
            proposals: 100,
            long_delta: 0.1,
            ablations: [
                "pixel_fusion",
                "no_next_view",
                "random_next_view",
                "depth_gt",
                "three_views",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub camera: CameraConfig,
    pub scene_seen: GenConfig,
    pub scene_unseen: GenConfig,
    pub global_view: GlobalViewConfig,
    pub view_space: ViewSpaceConfig,
    pub oracle: OracleParams,
    /// Occlusion tolerance of the correspondence test, in normalized depth.
    pub occl_tol: f64,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub control: ControlConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            camera: CameraConfig::default(),
            scene_seen: GenConfig::default(),
            scene_unseen: unseen_default(),
            global_view: GlobalViewConfig::default(),
            view_space: ViewSpaceConfig::default(),
            oracle: OracleParams::default(),
            occl_tol: 0.01,
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            control: ControlConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Generation bounds outside the seen ones: larger, shallower cabinets with
/// a different palette.
fn unseen_default() -> GenConfig {
    GenConfig {
        cabinet_half_width: Range::new(1.1, 1.35),
        cabinet_half_height: Range::new(1.0, 1.2),
        cabinet_half_depth: Range::new(0.35, 0.45),
        cabinet_albedo: Range::new(0.15, 0.95),
        ..GenConfig::default()
    }
}

/// Spectral radius of the companion matrix of `x_{k+1} = (1 + β − α) x_k − β x_{k−1}`.
pub fn controller_spectral_radius(alpha: f64, beta: f64) -> f64 {
    let a = 1.0 + beta - alpha;
    let disc = a * a - 4.0 * beta;
    if disc >= 0.0 {
        let s = disc.sqrt();
        ((a + s) / 2.0).abs().max(((a - s) / 2.0).abs())
    } else {
        // Complex pair with modulus sqrt(β).
        beta.sqrt()
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let intr = self.camera.intrinsics()?;
        for (name, g) in [("scene_seen", &self.scene_seen), ("scene_unseen", &self.scene_unseen)] {
            g.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
            if g.far_plane != intr.far_plane {
                return Err(Error::Config(format!("{name}.far_plane must equal camera.far_plane")));
            }
        }
        self.global_view.validate()?;
        self.view_space.validate()?;
        self.model.validate()?;
        self.optimizer.validate()?;
        if self.model.width != self.camera.width || self.model.height != self.camera.height {
            return Err(Error::Config("model and camera resolutions differ".into()));
        }
        if !(self.oracle.stroke > 0.0) || !(self.oracle.delta >= 0.0) {
            return Err(Error::Config(
                "oracle stroke must be positive and delta non-negative".into(),
            ));
        }
        if !(self.occl_tol > 0.0) {
            return Err(Error::Config("occl_tol must be positive".into()));
        }
        if self.data.num_pos == 0 || self.data.num_neg == 0 || self.data.attempts_per_scene == 0 {
            return Err(Error::Config("data counts must be positive".into()));
        }
        if self.train.batch_size == 0 || self.train.proposals == 0 || self.eval.proposals == 0 {
            return Err(Error::Config("batch size and proposal counts must be positive".into()));
        }
        let c = &self.control;
        if !(c.march_step > 0.0 && c.contact_tol > 0.0 && c.max_travel > 0.0 && c.standoff >= 0.0) {
            return Err(Error::Config("controller distances must be positive".into()));
        }
        if c.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        let rho = controller_spectral_radius(c.alpha, c.beta);
        if !(rho < 1.0) {
            return Err(Error::Config(format!(
                "controller gains alpha={} beta={} do not contract (spectral radius {rho})",
                c.alpha, c.beta
            )));
        }
        for name in &self.eval.ablations {
            crate::eval::Ablation::parse(name)?;
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Config> {
        let cfg: Config = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
        let parsed = Config::from_json("{}").unwrap();
        assert_eq!(parsed, Config::default());
    }

    #[test]
    fn default_gains_contract() {
        let rho = controller_spectral_radius(0.3, 0.2);
        assert!((rho - 0.5).abs() < 1e-12);
    }

    #[test]
    fn diverging_gains_are_rejected() {
        let mut cfg = Config::default();
        cfg.control.alpha = 2.5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_json(r#"{"sed": 3}"#).is_err());
    }
}
