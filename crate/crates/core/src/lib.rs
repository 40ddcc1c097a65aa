//! Viewpoint-fusing affordance prediction for articulated objects from RGB
//! alone: a synthetic box world with a kinematic interaction oracle, a tiny
//! differentiable model, and the data/train/infer/control/eval pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod config;
pub mod control;
pub mod correspond;
pub mod error;
pub mod eval;
pub mod geom;
pub mod model;
pub mod pipeline;
pub mod raster;
pub mod render;
pub mod scene;
pub mod viewspace;

pub use error::{Error, Result};
