//! RGB-only inference: choose the next view, fuse it, and pick a contact
//! point and gripper orientation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::derive_seed;
use super::forward::{correspondence, depth_map_of, encode_view, fuse_views, normal_noise, Encoded, FusionLevel};
use crate::camera::{unproject_pixel, CameraPose, DepthMap, Intrinsics};
use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};
use crate::model::loss::canonical_6d;
use crate::model::{Bound, Graph, Model, Rotation6D, Var};
use crate::raster::{argmax_masked, ImageBuffer};
use crate::render::render;
use crate::scene::Scene;
use crate::viewspace::{
    encode_pose, enumerate_candidates, estimate_normal, sample_pose, ViewFrame, ViewSample, ViewSpaceConfig,
};

/// Source of images for a requested camera pose.
pub trait RgbCamera {
    fn capture(&mut self, pose: &CameraPose) -> Result<ImageBuffer>;
}

/// Source of true depth, used only by the ground-truth-depth ablation.
pub trait DepthOracle {
    fn depth(&mut self, pose: &CameraPose) -> Result<DepthMap>;
}

/// Renders a fixed scene.
pub struct SceneCamera<'a> {
    pub scene: &'a Scene,
    pub intr: Intrinsics,
}

impl RgbCamera for SceneCamera<'_> {
    fn capture(&mut self, pose: &CameraPose) -> Result<ImageBuffer> {
        Ok(render(self.scene, pose, &self.intr).rgb)
    }
}

impl DepthOracle for SceneCamera<'_> {
    fn depth(&mut self, pose: &CameraPose) -> Result<DepthMap> {
        Ok(render(self.scene, pose, &self.intr).gt_depth)
    }
}

/// How the second view is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NextView {
    /// Highest scored candidate.
    Scored,
    /// Uniformly random candidate.
    Random,
    /// Single-view inference.
    None,
}

#[derive(Debug, Clone)]
pub struct InferOptions {
    pub proposals: usize,
    pub next_view: NextView,
    pub fusion: FusionLevel,
    /// Also fuse the second-best candidate.
    pub third_view: bool,
    pub occl_tol: f64,
    pub seed: u64,
}

impl InferOptions {
    pub fn new(proposals: usize, occl_tol: f64, seed: u64) -> Self {
        Self {
            proposals,
            next_view: NextView::Scored,
            fusion: FusionLevel::Token,
            third_view: false,
            occl_tol,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferResult {
    /// Argmax of the single-view affordance.
    pub pixel1: (usize, usize),
    /// Final contact pixel in view 1.
    pub pixel: (usize, usize),
    pub point: Vec3,
    /// Surface normal used to place the candidate views.
    pub normal: Vec3,
    /// Normal estimation failed and the viewing direction was used instead.
    pub normal_fallback: bool,
    pub view_scores: Vec<f64>,
    pub views: Vec<ViewSample>,
    /// World orientation of the gripper.
    pub orientation: Mat3,
    pub score: f64,
    pub depth1: Vec<f64>,
    pub afford1: Vec<f64>,
    /// Depth and affordance after fusion; equal to the single-view maps when
    /// no view is fused.
    pub depth: Vec<f64>,
    pub afford: Vec<f64>,
}

fn argmax(values: &[f64], width: usize) -> (usize, usize) {
    argmax_masked(values, width, |_| true).unwrap_or((0, 0))
}

struct Fuser<'a> {
    model: &'a Model,
    pv: &'a Bound,
    intr: &'a Intrinsics,
    pose1: &'a CameraPose,
    depth1: DepthMap,
    opts: &'a InferOptions,
}

impl Fuser<'_> {
    /// Fuses the view at `pose` into `base`, matching with the view-1 depth.
    fn add_view(
        &self,
        g: &mut Graph,
        camera: &mut dyn RgbCamera,
        depth_oracle: &mut Option<&mut dyn DepthOracle>,
        base: Encoded,
        pose: &CameraPose,
    ) -> Result<Var> {
        let rgb = camera.capture(pose)?;
        let e = encode_view(self.model, g, self.pv, &rgb)?;
        let (d1, d2) = match depth_oracle {
            Some(o) => (o.depth(self.pose1)?, o.depth(pose)?),
            None => {
                let d = self.model.depth_head(g, self.pv, e.tokens);
                (self.depth1.clone(), depth_map_of(g, d, self.intr)?)
            }
        };
        let pc = correspondence(&d1, self.pose1, &d2, pose, self.intr, self.opts.occl_tol)?;
        fuse_views(self.model, g, self.pv, self.opts.fusion, base, e, &pc)
    }
}

/// Full inference from the global view at `pose1`. Ground truth is only
/// consulted through `depth_oracle`, when one is given.
pub fn infer(
    model: &Model,
    view_space: &ViewSpaceConfig,
    intr: &Intrinsics,
    camera: &mut dyn RgbCamera,
    mut depth_oracle: Option<&mut dyn DepthOracle>,
    pose1: &CameraPose,
    opts: &InferOptions,
) -> Result<InferResult> {
    if opts.proposals == 0 {
        return Err(Error::Config("at least one proposal is needed".into()));
    }
    let mut g = Graph::new();
    let pv = model.bind(&mut g);
    let rgb1 = camera.capture(pose1)?;
    let e1 = encode_view(model, &mut g, &pv, &rgb1)?;
    let d1 = model.depth_head(&mut g, &pv, e1.tokens);
    let a1 = model.afford_head(&mut g, &pv, e1.tokens);
    let depth1 = depth_map_of(&g, d1, intr)?;
    let afford1 = g.value(a1).data.clone();
    let pixel1 = argmax(&afford1, intr.width);

    let x1 = unproject_pixel(
        pixel1.0,
        pixel1.1,
        depth1.values[pixel1.0 * intr.width + pixel1.1],
        pose1,
        intr,
    )?;
    let (normal, normal_fallback) = match estimate_normal(&depth1, pixel1.0, pixel1.1, pose1, intr) {
        Ok(n) => (n, false),
        Err(Error::Normal { .. }) => ((pose1.position - x1).normalize(), true),
        Err(e) => return Err(e),
    };
    let frame = ViewFrame::new(x1, normal)?;
    let candidates = enumerate_candidates(view_space);
    let codes: Vec<_> = candidates
        .iter()
        .map(|c| {
            let (az, alt, dist) = c.center();
            encode_pose(view_space, &frame, c.index, az, alt, dist)
        })
        .collect();
    let sv = model.view_head(&mut g, &pv, e1.tokens, &codes);
    let view_scores = g.value(sv).data.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 0x494e_4645, 0));
    let mut ranked: Vec<usize> = (0..candidates.len()).collect();
    // Stable sort keeps the lowest index first among equal scores.
    ranked.sort_by(|&a, &b| view_scores[b].total_cmp(&view_scores[a]));
    let chosen: Vec<usize> = match opts.next_view {
        NextView::None => Vec::new(),
        NextView::Random => vec![rng.random_range(0..candidates.len())],
        NextView::Scored if opts.third_view => ranked.iter().take(2).copied().collect(),
        NextView::Scored => vec![ranked[0]],
    };

    let fuser = Fuser {
        model,
        pv: &pv,
        intr,
        pose1,
        depth1,
        opts,
    };
    let mut tokens = e1.tokens;
    let mut views = Vec::new();
    for &c in &chosen {
        let view = sample_pose(&candidates[c], &frame, rng.random())?;
        let base = Encoded {
            pixels: e1.pixels,
            tokens,
        };
        tokens = fuser.add_view(&mut g, camera, &mut depth_oracle, base, &view.pose)?;
        views.push(view);
    }

    let (depth, afford) = if views.is_empty() {
        (fuser.depth1.values.clone(), afford1.clone())
    } else {
        let d2 = model.depth_head(&mut g, &pv, tokens);
        let a2 = model.afford_head(&mut g, &pv, tokens);
        (g.value(d2).data.clone(), g.value(a2).data.clone())
    };
    let pixel = argmax(&afford, intr.width);
    let point = unproject_pixel(pixel.0, pixel.1, depth[pixel.0 * intr.width + pixel.1], pose1, intr)?;
    let feature = g.select_rows(tokens, &[model.cfg.token_of(pixel.0, pixel.1)]);
    let z = normal_noise(&mut rng, opts.proposals, model.cfg.z_dim);
    let raw = model.propose(&mut g, &pv, feature, &z);
    let rots = canonical_6d(&mut g, raw);
    let scores = model.score(&mut g, &pv, feature, rots);
    let scores_v = g.value(scores).data.clone();
    let best = argmax(&scores_v, 1).0;
    let best_rot = Rotation6D(g.value(rots).row(best).try_into().expect("six columns"));
    let orientation = pose1.rotation * best_rot.decode()?;
    Ok(InferResult {
        pixel1,
        pixel,
        point,
        normal,
        normal_fallback,
        view_scores,
        views,
        orientation,
        score: scores_v[best],
        depth1: fuser.depth1.values,
        afford1,
        depth,
        afford,
    })
}
