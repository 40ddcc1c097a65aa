//! Success-rate and depth evaluation over seen and unseen scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{unproject_pixel, CameraPose, DepthMap, Intrinsics};
use crate::config::Config;
use crate::control::{execute_long_term, self_correct_contact, TrajectoryStep};
use crate::error::{Error, Result};
use crate::geom::{approach_of, frame_from_approach, sample_hemisphere, Mat3, Vec3};
use crate::model::Model;
use crate::pipeline::dataset::{derive_seed, sample_global_pose};
use crate::pipeline::{infer, FusionLevel, InferOptions, NextView, SceneCamera};
use crate::render::{render, RenderOutput};
use crate::scene::{generate_scene, gt_affordance_from_render, interact, part_motion_dir, GenConfig, Primitive, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    PixelFusion,
    NoNextView,
    RandomNextView,
    DepthGt,
    ThreeViews,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::PixelFusion,
        Ablation::NoNextView,
        Ablation::RandomNextView,
        Ablation::DepthGt,
        Ablation::ThreeViews,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::PixelFusion => "pixel_fusion",
            Ablation::NoNextView => "no_next_view",
            Ablation::RandomNextView => "random_next_view",
            Ablation::DepthGt => "depth_gt",
            Ablation::ThreeViews => "three_views",
        }
    }

    pub fn parse(s: &str) -> Result<Ablation> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownAblation(s.to_string()))
    }

    /// Ablations that need their own trained model.
    pub fn needs_training(self) -> bool {
        matches!(self, Ablation::PixelFusion | Ablation::NoNextView)
    }
}

/// Mean of `|pred − gt| / gt` over the valid ground-truth pixels.
pub fn absrel(pred: &[f64], gt: &DepthMap) -> Result<f64> {
    if pred.len() != gt.values.len() {
        return Err(Error::Shape("prediction and ground truth differ in size".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, &g), &valid) in pred.iter().zip(&gt.values).zip(&gt.valid) {
        if valid && g > 0.0 {
            sum += (p - g).abs() / g;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Metric("no valid ground-truth depth".into()));
    }
    Ok(sum / n as f64)
}

/// Percentage of successes.
pub fn success_rate(outcomes: &[bool]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Metric("success rate of zero episodes".into()));
    }
    Ok(100.0 * outcomes.iter().filter(|&&s| s).count() as f64 / outcomes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Seen,
    Unseen,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub split: Split,
    pub index: usize,
    pub scene: Scene,
    pub pose1: CameraPose,
    pub seed: u64,
}

fn split_stream(split: Split) -> u64 {
    match split {
        Split::Seen => 0x5345_454e,
        Split::Unseen => 0x554e_5345,
    }
}

pub fn make_episode(cfg: &Config, gen: &GenConfig, split: Split, index: usize, seed: u64) -> Result<Episode> {
    let episode_seed = derive_seed(seed, split_stream(split), index as u64);
    let scene = generate_scene(episode_seed, gen)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(episode_seed, 2, 0));
    let pose1 = sample_global_pose(&mut rng, &scene, &cfg.global_view)?;
    Ok(Episode {
        split,
        index,
        scene,
        pose1,
        seed: episode_seed,
    })
}

/// Seen then unseen evaluation episodes.
pub fn episodes(cfg: &Config, seed: u64) -> Result<Vec<Episode>> {
    let mut out = Vec::new();
    for i in 0..cfg.eval.seen_episodes {
        out.push(make_episode(cfg, &cfg.scene_seen, Split::Seen, i, seed)?);
    }
    for i in 0..cfg.eval.unseen_episodes {
        out.push(make_episode(cfg, &cfg.scene_unseen, Split::Unseen, i, seed)?);
    }
    Ok(out)
}

/// How an episode picks its action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Model,
    Oracle,
    Random,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelSettings {
    pub next_view: NextView,
    pub fusion: FusionLevel,
    pub third_view: bool,
    pub depth_gt: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            next_view: NextView::Scored,
            fusion: FusionLevel::Token,
            third_view: false,
            depth_gt: false,
        }
    }
}

impl ModelSettings {
    pub fn for_ablation(a: Ablation) -> Self {
        let base = Self::default();
        match a {
            Ablation::PixelFusion => Self {
                fusion: FusionLevel::Pixel,
                ..base
            },
            Ablation::NoNextView => Self {
                next_view: NextView::None,
                ..base
            },
            Ablation::RandomNextView => Self {
                next_view: NextView::Random,
                ..base
            },
            Ablation::DepthGt => Self { depth_gt: true, ..base },
            Ablation::ThreeViews => Self {
                third_view: true,
                ..base
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub split: Split,
    pub index: usize,
    pub pixel: (usize, usize),
    /// Surface point the gripper touched; `None` when self-correction missed.
    pub contact: Option<Vec3>,
    pub short_success: bool,
    pub delta_dis: f64,
    pub long_success: bool,
    pub cumulative: f64,
    pub absrel_initial: Option<f64>,
    pub absrel_refined: Option<f64>,
    /// Long-term interaction log; written separately from the episode line.
    #[serde(skip)]
    pub trajectory: Vec<TrajectoryStep>,
}

struct Action {
    pixel: (usize, usize),
    point: Vec3,
    orientation: Mat3,
    absrel: Option<(f64, f64)>,
}

fn oracle_action(
    ep: &Episode,
    r: &RenderOutput,
    cfg: &Config,
    intr: &Intrinsics,
    prim: Primitive,
) -> Result<Option<Action>> {
    let aff = gt_affordance_from_render(&ep.scene, r, &ep.pose1, intr, prim, &cfg.oracle);
    let mut best: Option<(f64, Action)> = None;
    for (i, &a) in aff.values.iter().enumerate() {
        if a < 0.5 {
            continue;
        }
        let (row, col) = (i / intr.width, i % intr.width);
        let p = unproject_pixel(row, col, r.gt_depth.values[i], &ep.pose1, intr)?;
        let travel = ep.scene.remaining_travel(prim, &p);
        if best.as_ref().is_none_or(|(t, _)| travel > *t) {
            let m = part_motion_dir(&ep.scene, &p)?;
            best = Some((
                travel,
                Action {
                    pixel: (row, col),
                    point: p,
                    orientation: frame_from_approach(&m),
                    absrel: None,
                },
            ));
        }
    }
    Ok(best.map(|(_, a)| a))
}

fn random_action(ep: &Episode, r: &RenderOutput, intr: &Intrinsics) -> Result<Option<Action>> {
    let valid: Vec<usize> = (0..intr.num_pixels()).filter(|&i| r.gt_depth.valid[i]).collect();
    if valid.is_empty() {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ep.seed, 3, 0));
    let i = valid[rng.random_range(0..valid.len())];
    let (row, col) = (i / intr.width, i % intr.width);
    let point = unproject_pixel(row, col, r.gt_depth.values[i], &ep.pose1, intr)?;
    let d = -sample_hemisphere(&mut rng, &r.gt_normal[i]);
    Ok(Some(Action {
        pixel: (row, col),
        point,
        orientation: frame_from_approach(&d),
        absrel: None,
    }))
}

fn model_action(
    ep: &Episode,
    r: &RenderOutput,
    cfg: &Config,
    intr: &Intrinsics,
    model: &Model,
    settings: ModelSettings,
) -> Result<Option<Action>> {
    let mut camera = SceneCamera {
        scene: &ep.scene,
        intr: intr.clone(),
    };
    let mut oracle = SceneCamera {
        scene: &ep.scene,
        intr: intr.clone(),
    };
    let opts = InferOptions {
        proposals: cfg.eval.proposals,
        next_view: settings.next_view,
        fusion: settings.fusion,
        third_view: settings.third_view,
        occl_tol: cfg.occl_tol,
        seed: derive_seed(ep.seed, 4, 0),
    };
    let depth_oracle: Option<&mut dyn crate::pipeline::DepthOracle> =
        if settings.depth_gt { Some(&mut oracle) } else { None };
    let out = infer(
        model,
        &cfg.view_space,
        intr,
        &mut camera,
        depth_oracle,
        &ep.pose1,
        &opts,
    )?;
    let absrel = match (absrel(&out.depth1, &r.gt_depth), absrel(&out.depth, &r.gt_depth)) {
        (Ok(a), Ok(b)) => Some((a, b)),
        _ => None,
    };
    Ok(Some(Action {
        pixel: out.pixel,
        point: out.point,
        orientation: out.orientation,
        absrel,
    }))
}

pub fn run_episode(
    cfg: &Config,
    ep: &Episode,
    primitive: Primitive,
    policy: PolicyKind,
    model: Option<&Model>,
    settings: ModelSettings,
) -> Result<EpisodeResult> {
    let intr = cfg.camera.intrinsics()?;
    let r = render(&ep.scene, &ep.pose1, &intr);
    let action = match policy {
        PolicyKind::Oracle => oracle_action(ep, &r, cfg, &intr, primitive)?,
        PolicyKind::Random => random_action(ep, &r, &intr)?,
        PolicyKind::Model => {
            let model = model.ok_or_else(|| Error::Config("model policy needs a model".into()))?;
            model_action(ep, &r, cfg, &intr, model, settings)?
        }
    };
    let mut result = EpisodeResult {
        split: ep.split,
        index: ep.index,
        pixel: (0, 0),
        contact: None,
        short_success: false,
        delta_dis: 0.0,
        long_success: false,
        cumulative: 0.0,
        absrel_initial: None,
        absrel_refined: None,
        trajectory: Vec::new(),
    };
    let Some(action) = action else {
        return Ok(result);
    };
    result.pixel = action.pixel;
    result.absrel_initial = action.absrel.map(|a| a.0);
    result.absrel_refined = action.absrel.map(|a| a.1);
    let d = approach_of(&action.orientation);
    let Some(contact) = self_correct_contact(&ep.scene, &action.point, &d, &cfg.control)? else {
        return Ok(result);
    };
    result.contact = Some(contact);
    let short = interact(&ep.scene, primitive, &contact, &action.orientation, &cfg.oracle)?;
    result.short_success = short.success;
    result.delta_dis = short.delta_dis;
    let long = execute_long_term(
        &ep.scene,
        primitive,
        &contact,
        &action.orientation,
        &cfg.oracle,
        &cfg.control,
        cfg.eval.long_delta,
    )?;
    result.long_success = long.success;
    result.cumulative = long.cumulative;
    result.trajectory = long.steps;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub primitive: Primitive,
    pub policy: PolicyKind,
    /// Empty for the full model and the baselines.
    pub ablation: Option<Ablation>,
    pub short_term: f64,
    pub long_term: f64,
    pub short_seen: f64,
    pub short_unseen: f64,
    /// Mean AbsRel of the single-view and fused depth, when measured.
    pub absrel_initial: Option<f64>,
    pub absrel_refined: Option<f64>,
    pub absrel_seen: Option<DepthScores>,
    pub absrel_unseen: Option<DepthScores>,
    pub episodes: usize,
}

/// Mean AbsRel before and after fusion over one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthScores {
    pub initial: f64,
    pub refined: f64,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn summarize(
    primitive: Primitive,
    policy: PolicyKind,
    ablation: Option<Ablation>,
    results: &[EpisodeResult],
) -> Result<PolicyReport> {
    let short: Vec<bool> = results.iter().map(|r| r.short_success).collect();
    let long: Vec<bool> = results.iter().map(|r| r.long_success).collect();
    let split_rate = |split: Split| {
        let v: Vec<bool> = results
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.short_success)
            .collect();
        success_rate(&v).unwrap_or(0.0)
    };
    let depth_scores = |split: Split| {
        let of_split = || results.iter().filter(move |r| r.split == split);
        Some(DepthScores {
            initial: mean_of(of_split().filter_map(|r| r.absrel_initial))?,
            refined: mean_of(of_split().filter_map(|r| r.absrel_refined))?,
        })
    };
    Ok(PolicyReport {
        primitive,
        policy,
        ablation,
        short_term: success_rate(&short)?,
        long_term: success_rate(&long)?,
        short_seen: split_rate(Split::Seen),
        short_unseen: split_rate(Split::Unseen),
        absrel_initial: mean_of(results.iter().filter_map(|r| r.absrel_initial)),
        absrel_refined: mean_of(results.iter().filter_map(|r| r.absrel_refined)),
        absrel_seen: depth_scores(Split::Seen),
        absrel_unseen: depth_scores(Split::Unseen),
        episodes: results.len(),
    })
}

pub fn evaluate_policy(
    cfg: &Config,
    eps: &[Episode],
    primitive: Primitive,
    policy: PolicyKind,
    model: Option<&Model>,
    settings: ModelSettings,
) -> Result<Vec<EpisodeResult>> {
    eps.par_iter()
        .map(|ep| run_episode(cfg, ep, primitive, policy, model, settings))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: Config,
    pub seed: u64,
    pub reports: Vec<PolicyReport>,
}

/// Models available to an ablation run.
pub struct AblationModels<'a> {
    pub full: &'a Model,
    pub pixel_fusion: Option<&'a Model>,
    pub no_next_view: Option<&'a Model>,
}

pub fn run_ablation(
    cfg: &Config,
    eps: &[Episode],
    primitive: Primitive,
    ablation: Ablation,
    models: &AblationModels,
) -> Result<PolicyReport> {
    let model = match ablation {
        Ablation::PixelFusion => models.pixel_fusion,
        Ablation::NoNextView => models.no_next_view,
        _ => Some(models.full),
    }
    .ok_or_else(|| Error::Config(format!("ablation `{}` needs its trained model", ablation.name())))?;
    let results = evaluate_policy(
        cfg,
        eps,
        primitive,
        PolicyKind::Model,
        Some(model),
        ModelSettings::for_ablation(ablation),
    )?;
    summarize(primitive, PolicyKind::Model, Some(ablation), &results)
}
