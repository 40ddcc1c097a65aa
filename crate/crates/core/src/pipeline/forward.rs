//! Forward pieces shared by training and inference.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraPose, DepthMap, Intrinsics};
use crate::correspond::{pixel_correspondence, token_correspondence, PixelCorrespondence};
use crate::error::Result;
use crate::model::{Bound, Graph, Model, Tensor, Var};
use crate::raster::ImageBuffer;

/// Where the second view is merged into the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionLevel {
    Token,
    Pixel,
}

#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub pixels: Var,
    pub tokens: Var,
}

pub fn encode_view(model: &Model, g: &mut Graph, pv: &Bound, rgb: &ImageBuffer) -> Result<Encoded> {
    let pixels = model.pixel_features(g, pv, rgb)?;
    let tokens = model.tokens_from_pixels(g, pv, pixels);
    Ok(Encoded { pixels, tokens })
}

/// Dense depth map from a `1 × HW` head output.
pub fn depth_map_of(g: &Graph, v: Var, intr: &Intrinsics) -> Result<DepthMap> {
    DepthMap::dense(intr.width, intr.height, g.value(v).data.clone())
}

pub fn correspondence(
    depth1: &DepthMap,
    pose1: &CameraPose,
    depth2: &DepthMap,
    pose2: &CameraPose,
    intr: &Intrinsics,
    occl_tol: f64,
) -> Result<PixelCorrespondence> {
    pixel_correspondence(depth1, pose1, pose2, intr, depth2, occl_tol)
}

/// Fused token grid in the view-1 layout.
pub fn fuse_views(
    model: &Model,
    g: &mut Graph,
    pv: &Bound,
    level: FusionLevel,
    base: Encoded,
    other: Encoded,
    pc: &PixelCorrespondence,
) -> Result<Var> {
    match level {
        FusionLevel::Token => {
            let tc = token_correspondence(pc, model.cfg.patch)?;
            Ok(g.fuse(base.tokens, other.tokens, Arc::new(tc.map)))
        }
        FusionLevel::Pixel => {
            let map: Vec<Option<usize>> = pc.map.iter().map(|m| m.map(|(r, c)| r * pc.width + c)).collect();
            let fused = g.fuse(base.pixels, other.pixels, Arc::new(map));
            Ok(model.tokens_from_pixels(g, pv, fused))
        }
    }
}

/// Scalar at flat pixel `i` of a `1 × HW` map, kept in the graph.
pub fn pick(g: &mut Graph, map: Var, i: usize) -> Var {
    g.gather(map, Arc::new(vec![i]), 1, 1)
}

pub fn normal_noise<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    Tensor {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    }
}
