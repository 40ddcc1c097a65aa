//! Joint training of the encoder and the five heads.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{derive_seed, Dataset, Sample};
use super::forward::{correspondence, depth_map_of, encode_view, fuse_views, normal_noise, pick, FusionLevel};
use crate::camera::{DepthMap, Intrinsics};
use crate::config::Config;
use crate::correspond::PixelCorrespondence;
use crate::error::{Error, Result};
use crate::model::loss::{
    canonical_6d, loss_afford, loss_depth, loss_rot, loss_score, loss_values, loss_view, total_loss,
};
use crate::model::optim::accumulate;
use crate::model::{Graph, LossParts, LossValues, Model, Optimizer, Rotation6D, Tensor, Var};
use crate::raster::ImageBuffer;
use crate::render::render;
use crate::scene::gt_affordance_from_render;
use crate::viewspace::{encode_pose, ViewFrame, POSE_ENCODING_DIM};

/// Loss values, validity flag and per-parameter gradients of one sample.
type SampleStep = (LossValues, bool, Vec<(usize, Tensor)>);

/// Which model is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Second view merged at the per-pixel feature level.
    PixelFusion,
    /// Single view: no second view, fusion or view scoring.
    NoNextView,
}

impl Variant {
    fn fusion(self) -> FusionLevel {
        match self {
            Variant::PixelFusion => FusionLevel::Pixel,
            _ => FusionLevel::Token,
        }
    }
}

/// Everything about a sample that does not depend on the model.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub rgb1: ImageBuffer,
    pub rgb2: ImageBuffer,
    pub depth1: DepthMap,
    pub depth2: DepthMap,
    /// Dense oracle labels for view 1.
    pub afford1: Vec<f64>,
    /// Ground-truth correspondence from view 1 into view 2.
    pub gt_corr: PixelCorrespondence,
    pub pixel: usize,
    pub token: usize,
    pub label: f64,
    /// Interaction orientation in the view-1 camera frame.
    pub rot_cam: Rotation6D,
    pub view_code: [f64; POSE_ENCODING_DIM],
    pub pose1: crate::camera::CameraPose,
    pub pose2: crate::camera::CameraPose,
}

pub fn prepare(cfg: &Config, intr: &Intrinsics, s: &Sample) -> Result<Prepared> {
    let r1 = render(&s.scene, &s.view1, intr);
    let r2 = render(&s.scene, &s.view2.pose, intr);
    let afford1 = gt_affordance_from_render(&s.scene, &r1, &s.view1, intr, s.record.primitive, &cfg.oracle).values;
    let gt_corr = correspondence(&r1.gt_depth, &s.view1, &r2.gt_depth, &s.view2.pose, intr, cfg.occl_tol)?;
    let (row, col) = s.record.pixel;
    let pixel = row * intr.width + col;
    let normal = r1.gt_normal[pixel];
    let frame = ViewFrame::new(s.record.contact_point, normal)?;
    let view_code = encode_pose(
        &cfg.view_space,
        &frame,
        s.view2.candidate,
        s.view2.azimuth,
        s.view2.altitude,
        s.view2.distance,
    );
    let r_cam = s.view1.rotation.transpose() * s.record.orientation;
    Ok(Prepared {
        rgb1: r1.rgb,
        rgb2: r2.rgb,
        depth1: r1.gt_depth,
        depth2: r2.gt_depth,
        afford1,
        gt_corr,
        pixel,
        token: cfg.model.token_of(row, col),
        label: if s.record.success { 1.0 } else { 0.0 },
        rot_cam: Rotation6D::from_matrix(&r_cam),
        view_code,
        pose1: s.view1.clone(),
        pose2: s.view2.pose.clone(),
    })
}

/// Outcome of the per-pixel vote on whether fusing view 2 helped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NextViewLabel {
    pub good: bool,
    pub mean_vote: f64,
    pub voters: usize,
    /// No view-1 pixel is visible in view 2; the view counts as bad.
    pub empty_overlap: bool,
}

/// Each overlapping pixel votes +1 when the fused prediction is closer to its
/// label than the single-view one and −1 otherwise. The view is good when the
/// mean vote is positive.
pub fn label_next_view(a1: &[f64], a2: &[f64], labels: &[f64], overlap: &[bool]) -> NextViewLabel {
    let mut sum = 0i64;
    let mut voters = 0usize;
    for i in 0..labels.len() {
        if !overlap[i] {
            continue;
        }
        let conf = |a: f64| if labels[i] >= 0.5 { a } else { 1.0 - a };
        sum += if conf(a2[i]) > conf(a1[i]) { 1 } else { -1 };
        voters += 1;
    }
    if voters == 0 {
        return NextViewLabel {
            good: false,
            mean_vote: 0.0,
            voters,
            empty_overlap: true,
        };
    }
    let mean_vote = sum as f64 / voters as f64;
    NextViewLabel {
        good: mean_vote > 0.0,
        mean_vote,
        voters,
        empty_overlap: false,
    }
}

/// Random draws of one step.
#[derive(Debug, Clone)]
pub struct StepNoise {
    pub z_rot: Tensor,
    pub z_score: Tensor,
}

impl StepNoise {
    pub fn draw(seed: u64, z_dim: usize, proposals: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            z_rot: normal_noise(&mut rng, 1, z_dim),
            z_score: normal_noise(&mut rng, proposals, z_dim),
        }
    }
}

pub struct StepGraph {
    pub graph: Graph,
    pub total: Var,
    pub parts: LossParts<Option<Var>>,
    pub next_view: Option<NextViewLabel>,
}

impl StepGraph {
    pub fn values(&self) -> LossValues {
        loss_values(&self.graph, &self.parts)
    }
}

/// Builds the loss graph of one sample. During warm-up only the
/// initial-depth loss is present.
pub fn step_graph(
    model: &Model,
    cfg: &Config,
    intr: &Intrinsics,
    p: &Prepared,
    variant: Variant,
    warmup: bool,
    noise: &StepNoise,
) -> Result<StepGraph> {
    let mut g = Graph::new();
    let pv = model.bind(&mut g);
    let mut parts: LossParts<Option<Var>> = LossParts::default();
    let e1 = encode_view(model, &mut g, &pv, &p.rgb1)?;
    let d1 = model.depth_head(&mut g, &pv, e1.tokens);
    let l1 = loss_depth(&mut g, d1, &p.depth1);
    let mut next_view = None;

    if variant == Variant::NoNextView {
        parts.ld1 = Some(l1);
        if !warmup {
            let a1 = model.afford_head(&mut g, &pv, e1.tokens);
            let a_at = pick(&mut g, a1, p.pixel);
            parts.la1 = Some(loss_afford(&mut g, a_at, &[p.label]));
            let feature = g.select_rows(e1.tokens, &[p.token]);
            action_losses(model, &mut g, &pv, &mut parts, feature, a_at, p, noise);
        }
    } else {
        let e2 = encode_view(model, &mut g, &pv, &p.rgb2)?;
        let d2v = model.depth_head(&mut g, &pv, e2.tokens);
        let l2 = loss_depth(&mut g, d2v, &p.depth2);
        let sum = g.add(l1, l2);
        parts.ld1 = Some(g.scale(sum, 0.5));
        if !warmup {
            let a1 = model.afford_head(&mut g, &pv, e1.tokens);
            let a1_at = pick(&mut g, a1, p.pixel);
            parts.la1 = Some(loss_afford(&mut g, a1_at, &[p.label]));

            let dm1 = depth_map_of(&g, d1, intr)?;
            let dm2 = depth_map_of(&g, d2v, intr)?;
            let pc = correspondence(&dm1, &p.pose1, &dm2, &p.pose2, intr, cfg.occl_tol)?;
            let fused = fuse_views(model, &mut g, &pv, variant.fusion(), e1, e2, &pc)?;
            let d2 = model.depth_head(&mut g, &pv, fused);
            parts.ld2 = Some(loss_depth(&mut g, d2, &p.depth1));
            let a2 = model.afford_head(&mut g, &pv, fused);
            let a2_at = pick(&mut g, a2, p.pixel);
            parts.la2 = Some(loss_afford(&mut g, a2_at, &[p.label]));

            let feature = g.select_rows(fused, &[p.token]);
            action_losses(model, &mut g, &pv, &mut parts, feature, a2_at, p, noise);

            let overlap: Vec<bool> = p.gt_corr.map.iter().map(Option::is_some).collect();
            let label = label_next_view(&g.value(a1).data, &g.value(a2).data, &p.afford1, &overlap);
            let score = model.view_head(&mut g, &pv, e1.tokens, &[p.view_code]);
            parts.lv = Some(loss_view(&mut g, score, label.good));
            next_view = Some(label);
        }
    }
    let total = total_loss(&mut g, &parts);
    Ok(StepGraph {
        graph: g,
        total,
        parts,
        next_view,
    })
}

/// Rotation regression on positives, and the scorer fit to the affordance
/// at the contact.
#[allow(clippy::too_many_arguments)]
fn action_losses(
    model: &Model,
    g: &mut Graph,
    pv: &crate::model::Bound,
    parts: &mut LossParts<Option<Var>>,
    feature: Var,
    afford_at: Var,
    p: &Prepared,
    noise: &StepNoise,
) {
    if p.label > 0.5 {
        let raw = model.propose(g, pv, feature, &noise.z_rot);
        parts.lr = Some(loss_rot(g, raw, &p.rot_cam));
    }
    let raw = model.propose(g, pv, feature, &noise.z_score);
    let raw = g.detach(raw);
    let rots = canonical_6d(g, raw);
    let scores = model.score(g, pv, feature, rots);
    let mean = g.mean(scores);
    let target = g.detach(afford_at);
    parts.ls = Some(loss_score(g, mean, target));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub warmup: bool,
    /// Mean component values over the epoch.
    pub losses: LossValues,
    pub total: f64,
    pub grad_norm: f64,
    /// Fraction of samples whose next view was labelled good.
    pub good_views: f64,
}

pub struct TrainOutput {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

pub fn prepare_all(cfg: &Config, data: &Dataset) -> Result<Vec<Prepared>> {
    let intr = cfg.camera.intrinsics()?;
    data.samples.iter().map(|s| prepare(cfg, &intr, s)).collect()
}

pub fn train(cfg: &Config, data: &Dataset, variant: Variant, seed: u64) -> Result<TrainOutput> {
    let prepared = prepare_all(cfg, data)?;
    train_prepared(cfg, &prepared, variant, seed, |_| {})
}

/// Minibatch training over prepared samples; `on_epoch` sees each epoch's log.
pub fn train_prepared(
    cfg: &Config,
    data: &[Prepared],
    variant: Variant,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutput> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let intr = cfg.camera.intrinsics()?;
    let mut model = Model::new(cfg.model.clone(), derive_seed(seed, 0x4d4f_4445, 0))?;
    let mut opt = Optimizer::new(cfg.optimizer.clone(), &model.params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.train.epochs);
    for epoch in 0..cfg.train.epochs {
        let warmup = epoch < cfg.train.warmup_epochs;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x4550_4f43, epoch as u64));
        order.shuffle(&mut rng);
        let mut sum = LossValues::default();
        let mut norm_sum = 0.0;
        let mut steps = 0usize;
        let mut good = 0usize;
        for batch in order.chunks(cfg.train.batch_size) {
            // Samples are independent given the parameters; gradients are
            // summed in batch order so the result does not depend on threads.
            let per_sample: Vec<Result<SampleStep>> = batch
                .par_iter()
                .map(|&i| {
                    let noise = StepNoise::draw(
                        derive_seed(seed, epoch as u64, i as u64),
                        cfg.model.z_dim,
                        cfg.train.proposals,
                    );
                    let sg = step_graph(&model, cfg, &intr, &data[i], variant, warmup, &noise)?;
                    let values = sg.values();
                    if !values.all_finite() || !sg.graph.scalar(sg.total).is_finite() {
                        return Err(Error::NonFinite {
                            epoch,
                            sample: i,
                            detail: format!("{values:?}"),
                        });
                    }
                    let good = sg.next_view.is_some_and(|l| l.good);
                    Ok((values, good, sg.graph.backward(sg.total)))
                })
                .collect();
            let mut grads = model.params.zeros_like();
            for r in per_sample {
                let (values, is_good, g) = r?;
                if is_good {
                    good += 1;
                }
                sum.add(&values);
                accumulate(&model.params, &mut grads, g, 1.0 / batch.len() as f64);
            }
            norm_sum += opt.step(&mut model.params, &grads);
            steps += 1;
            if !model.params.all_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    sample: batch[0],
                    detail: "parameters diverged".into(),
                });
            }
        }
        let losses = sum.scaled(1.0 / data.len() as f64);
        let entry = EpochLog {
            epoch,
            warmup,
            total: losses.total(),
            losses,
            grad_norm: norm_sum / steps as f64,
            good_views: good as f64 / data.len() as f64,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutput { model, log })
}
