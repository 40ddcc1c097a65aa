//! Patch encoder and the five heads.
//!
//! Pixels are embedded individually (`3 → pixel_channels`, tanh), gathered
//! into `patch × patch` tokens, projected to `channels` with a learned
//! position embedding, and refined by mixing layers that alternate a
//! token-mixing residual (`X + tanh(M·X + b)`) with a channel-mixing
//! residual (`X + tanh(X·W + b)`).

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::{decode_checkpoint, encode_checkpoint, ParamStore};
use super::tensor::{Graph, Tensor, Var};
use crate::correspond::TokenGrid;
use crate::error::{Error, Result};
use crate::raster::ImageBuffer;
use crate::viewspace::POSE_ENCODING_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub width: usize,
    pub height: usize,
    pub patch: usize,
    pub pixel_channels: usize,
    pub channels: usize,
    pub hidden: usize,
    pub mixing_layers: usize,
    pub z_dim: usize,
    /// Initial output of the depth head before training.
    pub depth_init: f64,
    /// Initial output of the affordance head before training.
    pub afford_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            patch: 8,
            pixel_channels: 8,
            channels: 32,
            hidden: 32,
            mixing_layers: 2,
            z_dim: 16,
            depth_init: 0.4,
            afford_init: 0.15,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || !self.width.is_multiple_of(self.patch) || !self.height.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "image {}x{} not divisible by patch {}",
                self.width, self.height, self.patch
            )));
        }
        let dims = [
            ("pixel_channels", self.pixel_channels),
            ("channels", self.channels),
            ("hidden", self.hidden),
            ("z_dim", self.z_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
        }
        for (name, v) in [("depth_init", self.depth_init), ("afford_init", self.afford_init)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("`{name}` must lie in (0, 1)")));
            }
        }
        Ok(())
    }

    /// Number of parameter values `Model::new` allocates for this config.
    pub fn param_count(&self) -> u128 {
        let (cp, c, h, z) = (
            self.pixel_channels as u128,
            self.channels as u128,
            self.hidden as u128,
            self.z_dim as u128,
        );
        let t = (self.width / self.patch.max(1)) as u128 * (self.height / self.patch.max(1)) as u128;
        let n2 = (self.patch as u128).pow(2);
        let mlp = |input: u128, out: u128| input * h + h + h * out + out;
        let enc = 3 * cp + cp + n2 * cp * c + c + t * c;
        let mixers = self.mixing_layers as u128 * (t * t + c + c * c + c);
        let heads = 2 * mlp(c, n2) + mlp(c + POSE_ENCODING_DIM as u128, 1) + mlp(c + z, 6) + mlp(c + 6, 1);
        enc + mixers + heads
    }

    pub fn token_rows(&self) -> usize {
        self.height / self.patch
    }

    pub fn token_cols(&self) -> usize {
        self.width / self.patch
    }

    pub fn num_tokens(&self) -> usize {
        self.token_rows() * self.token_cols()
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Token index holding pixel `(row, col)`.
    pub fn token_of(&self, row: usize, col: usize) -> usize {
        (row / self.patch) * self.token_cols() + col / self.patch
    }
}

#[derive(Debug, Clone, Copy)]
struct Mlp {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct Mixer {
    tok: usize,
    tok_b: usize,
    ch: usize,
    ch_b: usize,
}

#[derive(Debug, Clone)]
struct Ids {
    pix_w: usize,
    pix_b: usize,
    tok_w: usize,
    tok_b: usize,
    pos: usize,
    mixers: Vec<Mixer>,
    dd: Mlp,
    da: Mlp,
    dv: Mlp,
    dr: Mlp,
    ds: Mlp,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    ids: Ids,
    patchify: Arc<Vec<usize>>,
    unfold: Arc<Vec<usize>>,
}

/// Parameters placed in one graph; index by parameter id.
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps vars created by the caller, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let mut dense = |p: &mut ParamStore, name: &str, rows: usize, cols: usize, gain: f64| -> usize {
            let std = gain / (rows as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
            p.add(name, Tensor { rows, cols, data })
        };
        let (cp, c, h, t, n2) = (
            cfg.pixel_channels,
            cfg.channels,
            cfg.hidden,
            cfg.num_tokens(),
            cfg.patch * cfg.patch,
        );
        let pix_w = dense(&mut p, "enc.pix.w", 3, cp, 1.5);
        let pix_b = p.add("enc.pix.b", Tensor::zeros(1, cp));
        let tok_w = dense(&mut p, "enc.tok.w", n2 * cp, c, 1.0);
        let tok_b = p.add("enc.tok.b", Tensor::zeros(1, c));
        let pos = dense(&mut p, "enc.pos", t, c, 0.1 * (t as f64).sqrt());
        let mut mixers = Vec::new();
        for l in 0..cfg.mixing_layers {
            mixers.push(Mixer {
                tok: dense(&mut p, &format!("enc.mix{l}.tok"), t, t, 0.5),
                tok_b: p.add(format!("enc.mix{l}.tok_b"), Tensor::zeros(1, c)),
                ch: dense(&mut p, &format!("enc.mix{l}.ch"), c, c, 0.5),
                ch_b: p.add(format!("enc.mix{l}.ch_b"), Tensor::zeros(1, c)),
            });
        }
        let mut mlp = |p: &mut ParamStore, name: &str, input: usize, out: usize, bias: f64| -> Mlp {
            let w1 = dense(p, &format!("{name}.w1"), input, h, 1.0);
            let b1 = p.add(format!("{name}.b1"), Tensor::zeros(1, h));
            let w2 = dense(p, &format!("{name}.w2"), h, out, 0.5);
            let b2 = p.add(
                format!("{name}.b2"),
                Tensor::from_vec(1, out, vec![bias; out]).expect("bias shape"),
            );
            Mlp { w1, b1, w2, b2 }
        };
        let dd = mlp(&mut p, "dd", c, n2, logit(cfg.depth_init));
        let da = mlp(&mut p, "da", c, n2, logit(cfg.afford_init));
        let dv = mlp(&mut p, "dv", c + POSE_ENCODING_DIM, 1, 0.0);
        let dr = mlp(&mut p, "dr", c + cfg.z_dim, 6, 0.0);
        // Start proposals near the identity rotation rather than the origin,
        // where the 6D decoding is singular.
        let dr_b2 = &mut p.tensors[dr.b2].data;
        dr_b2.copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let ds = mlp(&mut p, "ds", c + 6, 1, 0.0);
        p.quantize();
        let ids = Ids {
            pix_w,
            pix_b,
            tok_w,
            tok_b,
            pos,
            mixers,
            dd,
            da,
            dv,
            dr,
            ds,
        };
        Ok(Self {
            patchify: Arc::new(Self::patchify_index(&cfg)),
            unfold: Arc::new(Self::unfold_index(&cfg)),
            cfg,
            params: p,
            ids,
        })
    }

    /// Token `t`, column `k · cp + ch` reads pixel feature `(pixel, ch)`
    /// where `k` runs over the patch in row-major order.
    fn patchify_index(cfg: &ModelConfig) -> Vec<usize> {
        let (n, cp, w) = (cfg.patch, cfg.pixel_channels, cfg.width);
        let mut idx = Vec::with_capacity(cfg.num_pixels() * cp);
        for tr in 0..cfg.token_rows() {
            for tc in 0..cfg.token_cols() {
                for dr in 0..n {
                    for dc in 0..n {
                        let pixel = (tr * n + dr) * w + tc * n + dc;
                        idx.extend((0..cp).map(|ch| pixel * cp + ch));
                    }
                }
            }
        }
        idx
    }

    /// Pixel `i` reads column `k` of its token's `n²` head outputs.
    fn unfold_index(cfg: &ModelConfig) -> Vec<usize> {
        let n = cfg.patch;
        let mut idx = Vec::with_capacity(cfg.num_pixels());
        for row in 0..cfg.height {
            for col in 0..cfg.width {
                let t = cfg.token_of(row, col);
                idx.push(t * n * n + (row % n) * n + col % n);
            }
        }
        idx
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(
            self.params
                .tensors
                .iter()
                .enumerate()
                .map(|(i, t)| g.param(i, t.clone()))
                .collect(),
        )
    }

    fn dense_layer(g: &mut Graph, pv: &Bound, x: Var, w: usize, b: usize) -> Var {
        let y = g.matmul(x, pv.0[w]);
        g.add_row(y, pv.0[b])
    }

    fn mlp(g: &mut Graph, pv: &Bound, x: Var, m: Mlp) -> Var {
        let h = Self::dense_layer(g, pv, x, m.w1, m.b1);
        let h = g.tanh(h);
        Self::dense_layer(g, pv, h, m.w2, m.b2)
    }

    pub fn check_image(&self, rgb: &ImageBuffer) -> Result<()> {
        if rgb.width != self.cfg.width || rgb.height != self.cfg.height {
            return Err(Error::Shape(format!(
                "image {}x{} but model expects {}x{}",
                rgb.width, rgb.height, self.cfg.width, self.cfg.height
            )));
        }
        Ok(())
    }

    /// Per-pixel features, `num_pixels × pixel_channels`.
    pub fn pixel_features(&self, g: &mut Graph, pv: &Bound, rgb: &ImageBuffer) -> Result<Var> {
        self.check_image(rgb)?;
        let x = g.constant(Tensor::from_vec(self.cfg.num_pixels(), 3, rgb.data.clone())?);
        let h = Self::dense_layer(g, pv, x, self.ids.pix_w, self.ids.pix_b);
        Ok(g.tanh(h))
    }

    /// Token grid from per-pixel features, `num_tokens × channels`.
    pub fn tokens_from_pixels(&self, g: &mut Graph, pv: &Bound, pixels: Var) -> Var {
        let t = self.cfg.num_tokens();
        let width = self.cfg.patch * self.cfg.patch * self.cfg.pixel_channels;
        let patches = g.gather(pixels, self.patchify.clone(), t, width);
        let x = Self::dense_layer(g, pv, patches, self.ids.tok_w, self.ids.tok_b);
        let x = g.tanh(x);
        let mut x = g.add(x, pv.0[self.ids.pos]);
        for m in &self.ids.mixers {
            let mixed = g.matmul(pv.0[m.tok], x);
            let mixed = g.add_row(mixed, pv.0[m.tok_b]);
            let mixed = g.tanh(mixed);
            x = g.add(x, mixed);
            let ch = Self::dense_layer(g, pv, x, m.ch, m.ch_b);
            let ch = g.tanh(ch);
            x = g.add(x, ch);
        }
        x
    }

    pub fn encode(&self, g: &mut Graph, pv: &Bound, rgb: &ImageBuffer) -> Result<Var> {
        let pixels = self.pixel_features(g, pv, rgb)?;
        Ok(self.tokens_from_pixels(g, pv, pixels))
    }

    fn dense_head(&self, g: &mut Graph, pv: &Bound, tokens: Var, m: Mlp) -> Var {
        let per_token = Self::mlp(g, pv, tokens, m);
        let per_token = g.sigmoid(per_token);
        g.gather(per_token, self.unfold.clone(), 1, self.cfg.num_pixels())
    }

    /// Normalized depth per pixel, `1 × num_pixels`, in `(0, 1)`.
    pub fn depth_head(&self, g: &mut Graph, pv: &Bound, tokens: Var) -> Var {
        self.dense_head(g, pv, tokens, self.ids.dd)
    }

    /// Affordance probability per pixel, `1 × num_pixels`.
    pub fn afford_head(&self, g: &mut Graph, pv: &Bound, tokens: Var) -> Var {
        self.dense_head(g, pv, tokens, self.ids.da)
    }

    /// View scores for each pose encoding, `K × 1`.
    pub fn view_head(&self, g: &mut Graph, pv: &Bound, tokens: Var, encodings: &[[f64; POSE_ENCODING_DIM]]) -> Var {
        let pooled = g.mean_rows(tokens);
        let rep = g.select_rows(pooled, &vec![0; encodings.len()]);
        let enc = g.constant(Tensor {
            rows: encodings.len(),
            cols: POSE_ENCODING_DIM,
            data: encodings.iter().flatten().copied().collect(),
        });
        let x = g.concat_cols(&[rep, enc]);
        let s = Self::mlp(g, pv, x, self.ids.dv);
        g.sigmoid(s)
    }

    /// Raw 6D proposals, one per row of `z` (`N × z_dim`), from a `1 × C` feature.
    pub fn propose(&self, g: &mut Graph, pv: &Bound, feature: Var, z: &Tensor) -> Var {
        let rep = g.select_rows(feature, &vec![0; z.rows]);
        let zv = g.constant(z.clone());
        let x = g.concat_cols(&[rep, zv]);
        Self::mlp(g, pv, x, self.ids.dr)
    }

    /// Success probabilities of `N × 6` canonical rotations at a `1 × C` feature.
    pub fn score(&self, g: &mut Graph, pv: &Bound, feature: Var, rots: Var) -> Var {
        let n = g.value(rots).rows;
        let rep = g.select_rows(feature, &vec![0; n]);
        let x = g.concat_cols(&[rep, rots]);
        let s = Self::mlp(g, pv, x, self.ids.ds);
        g.sigmoid(s)
    }

    pub fn token_grid(&self, g: &Graph, tokens: Var) -> TokenGrid {
        let t = g.value(tokens);
        TokenGrid {
            rows: self.cfg.token_rows(),
            cols: self.cfg.token_cols(),
            channels: self.cfg.channels,
            patch: self.cfg.patch,
            features: t.data.clone(),
        }
    }

    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_string(&self.cfg)?;
        Ok(encode_checkpoint(&meta, &self.params))
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let (meta, params) = decode_checkpoint(bytes)?;
        let cfg: ModelConfig =
            serde_json::from_str(&meta).map_err(|e| Error::Checkpoint(format!("bad model config: {e}")))?;
        cfg.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        // Reject before allocating a model the stored values cannot fill.
        if cfg.param_count() != params.num_values() as u128 {
            return Err(Error::Checkpoint(
                "parameter count does not match the architecture".into(),
            ));
        }
        let mut model = Model::new(cfg, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if params.names != model.params.names {
            return Err(Error::Checkpoint(
                "parameter table does not match the architecture".into(),
            ));
        }
        for (have, want) in params.tensors.iter().zip(&model.params.tensors) {
            if (have.rows, have.cols) != (want.rows, want.cols) {
                return Err(Error::Checkpoint(
                    "parameter shape does not match the architecture".into(),
                ));
            }
        }
        if !params.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        model.params = params;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            width: 16,
            height: 16,
            patch: 4,
            pixel_channels: 3,
            channels: 6,
            hidden: 5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn default_model_produces_an_8x8_grid() {
        let m = Model::new(ModelConfig::default(), 1).unwrap();
        let mut g = Graph::new();
        let pv = m.bind(&mut g);
        let img = ImageBuffer::new(64, 64);
        let t = m.encode(&mut g, &pv, &img).unwrap();
        let grid = m.token_grid(&g, t);
        assert_eq!((grid.rows, grid.cols, grid.channels), (8, 8, 32));
    }

    #[test]
    fn unfold_places_outputs_in_their_patch() {
        let cfg = small();
        let idx = Model::unfold_index(&cfg);
        // Pixel (5, 6) is in token (1, 1) = 5, offset (1, 2) = 6 within the patch.
        assert_eq!(idx[5 * 16 + 6], 5 * 16 + 6);
        assert_eq!(idx[0], 0);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = Model::new(small(), 3).unwrap();
        let bytes = m.to_checkpoint().unwrap();
        let back = Model::from_checkpoint(&bytes).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.cfg, m.cfg);
        assert_eq!(back.to_checkpoint().unwrap(), bytes);
    }

    #[test]
    fn param_count_matches_allocation() {
        for cfg in [small(), ModelConfig::default()] {
            let m = Model::new(cfg.clone(), 1).unwrap();
            assert_eq!(cfg.param_count(), m.params.num_values() as u128);
        }
    }

    #[test]
    fn oversized_architecture_in_a_checkpoint_is_rejected() {
        let m = Model::new(small(), 3).unwrap();
        let mut huge = small();
        huge.width = 1 << 20;
        huge.height = 1 << 20;
        let meta = serde_json::to_string(&huge).unwrap();
        let bytes = crate::model::params::encode_checkpoint(&meta, &m.params);
        assert!(matches!(Model::from_checkpoint(&bytes), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn wrong_image_size_is_a_shape_error() {
        let m = Model::new(small(), 3).unwrap();
        let mut g = Graph::new();
        let pv = m.bind(&mut g);
        assert!(matches!(
            m.encode(&mut g, &pv, &ImageBuffer::new(8, 8)),
            Err(Error::Shape(_))
        ));
    }
}
