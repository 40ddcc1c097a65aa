//! Central finite-difference checks of reverse-mode gradients.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::{canonical_6d, loss_afford, loss_depth, loss_rot, loss_score, loss_view, total_loss, LossParts};
use super::net::{Bound, Model, ModelConfig};
use super::rot6d::Rotation6D;
use super::tensor::{Graph, Tensor, Var};
use crate::camera::DepthMap;
use crate::error::Result;
use crate::raster::ImageBuffer;
use crate::viewspace::POSE_ENCODING_DIM;

/// A loss head under test, built on the bound parameter variables.
type HeadFn<'a> = Box<dyn Fn(&mut Graph, &[Var]) -> Var + 'a>;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone, Default, Serialize)]
pub struct GradCheck {
    pub checked: usize,
    /// Entries whose gradient magnitude exceeds 1e-6, so the check is not vacuous.
    pub nonzero: usize,
    pub failures: usize,
    /// Largest `|analytic − numeric| / (rtol·max(|a|, |n|) + atol)`; a pass
    /// keeps it at or below 1.
    pub worst_ratio: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.nonzero > 0 && self.failures == 0
    }

    fn merge(&mut self, o: &GradCheck) {
        self.checked += o.checked;
        self.nonzero += o.nonzero;
        self.failures += o.failures;
        self.worst_ratio = self.worst_ratio.max(o.worst_ratio);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rtol: 1e-4,
            atol: 1e-8,
        }
    }
}

fn eval<F>(inputs: &[Tensor], build: &F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| g.param(i, t.clone())).collect();
    let root = build(&mut g, &vars);
    g.scalar(root)
}

/// Checks `d build / d inputs` at `inputs`. `build` must return a scalar.
/// At most `max_per_input` entries of each input are perturbed, spread
/// evenly over the tensor.
pub fn check_gradients<F>(inputs: &[Tensor], build: F, tol: Tolerance, max_per_input: usize) -> GradCheck
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| g.param(i, t.clone())).collect();
    let root = build(&mut g, &vars);
    let mut analytic: Vec<Tensor> = inputs.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
    for (id, t) in g.backward(root) {
        for (a, v) in analytic[id].data.iter_mut().zip(&t.data) {
            *a += v;
        }
    }
    let mut out = GradCheck::default();
    let mut work = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        let n = t.len();
        let stride = n.div_ceil(max_per_input.max(1)).max(1);
        for k in (0..n).step_by(stride) {
            let x = t.data[k];
            work[i].data[k] = x + tol.step;
            let fp = eval(&work, &build);
            work[i].data[k] = x - tol.step;
            let fm = eval(&work, &build);
            work[i].data[k] = x;
            let numeric = (fp - fm) / (2.0 * tol.step);
            let a = analytic[i].data[k];
            let bound = tol.rtol * a.abs().max(numeric.abs()) + tol.atol;
            let ratio = (a - numeric).abs() / bound;
            out.checked += 1;
            if a.abs().max(numeric.abs()) > 1e-6 {
                out.nonzero += 1;
            }
            if !(ratio <= 1.0) {
                out.failures += 1;
            }
            out.worst_ratio = out.worst_ratio.max(if ratio.is_nan() { f64::INFINITY } else { ratio });
        }
    }
    out
}

/// Small network used by the suite; big enough to exercise every layer.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        width: 8,
        height: 8,
        patch: 4,
        pixel_channels: 2,
        channels: 4,
        hidden: 5,
        mixing_layers: 1,
        z_dim: 3,
        ..ModelConfig::default()
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect(),
    }
}

fn random_image(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> ImageBuffer {
    let mut img = ImageBuffer::new(cfg.width, cfg.height);
    for v in &mut img.data {
        *v = rng.random();
    }
    img
}

/// Weighted sum of every entry, so each output receives a distinct cotangent.
fn project(g: &mut Graph, x: Var, w: &Tensor) -> Var {
    let wv = g.constant(w.clone());
    let p = g.mul(x, wv);
    g.mean(p)
}

/// Every head and loss, each checked against the model parameters (or the
/// loss inputs) on `configs` random configurations.
pub fn run_suite(configs: usize, seed: u64, tol: Tolerance) -> Result<Vec<(&'static str, GradCheck)>> {
    let names = [
        "depth_head",
        "afford_head",
        "view_head",
        "rotation_head",
        "score_head",
        "token_fusion",
        "loss_depth",
        "loss_afford",
        "loss_view",
        "loss_rot",
        "loss_score",
        "total_loss",
    ];
    let mut totals: Vec<GradCheck> = vec![GradCheck::default(); names.len()];
    let cfg = tiny_model_config();
    let per_input = 12;
    for c in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let model = Model::new(cfg.clone(), rng.random())?;
        let img = random_image(&mut rng, &cfg);
        let img2 = random_image(&mut rng, &cfg);
        let params = model.params.tensors.clone();
        let np = cfg.num_pixels();
        let nt = cfg.num_tokens();
        let w_pix = random_tensor(&mut rng, 1, np, 1.0);
        let encodings: Vec<[f64; POSE_ENCODING_DIM]> = (0..3)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let w_view = random_tensor(&mut rng, encodings.len(), 1, 1.0);
        let z = random_tensor(&mut rng, 4, cfg.z_dim, 1.0);
        let w_rot = random_tensor(&mut rng, 4, 6, 1.0);
        let rots = random_tensor(&mut rng, 4, 6, 1.0);
        let w_score = random_tensor(&mut rng, 4, 1, 1.0);
        let map: Arc<Vec<Option<usize>>> = Arc::new(
            (0..nt)
                .map(|_| rng.random_bool(0.6).then(|| rng.random_range(0..nt)))
                .collect(),
        );
        let w_tok = random_tensor(&mut rng, nt, cfg.channels, 1.0);
        let feature_row: usize = rng.random_range(0..nt);

        let encode = |g: &mut Graph, vars: &[Var], img: &ImageBuffer| -> (Bound, Var) {
            let pv = Bound::from_vars(vars.to_vec());
            let t = model.encode(g, &pv, img).expect("image matches model");
            (pv, t)
        };
        let head_checks: [(usize, HeadFn<'_>); 6] = [
            (
                0,
                Box::new(|g, v| {
                    let (pv, t) = encode(g, v, &img);
                    let d = model.depth_head(g, &pv, t);
                    project(g, d, &w_pix)
                }),
            ),
            (
                1,
                Box::new(|g, v| {
                    let (pv, t) = encode(g, v, &img);
                    let a = model.afford_head(g, &pv, t);
                    project(g, a, &w_pix)
                }),
            ),
            (
                2,
                Box::new(|g, v| {
                    let (pv, t) = encode(g, v, &img);
                    let s = model.view_head(g, &pv, t, &encodings);
                    project(g, s, &w_view)
                }),
            ),
            (
                3,
                Box::new(|g, v| {
                    let (pv, t) = encode(g, v, &img);
                    let f = g.select_rows(t, &[feature_row]);
                    let r = model.propose(g, &pv, f, &z);
                    let r = canonical_6d(g, r);
                    project(g, r, &w_rot)
                }),
            ),
            (
                4,
                Box::new(|g, v| {
                    let (pv, t) = encode(g, v, &img);
                    let f = g.select_rows(t, &[feature_row]);
                    let r = g.constant(rots.clone());
                    let r = canonical_6d(g, r);
                    let s = model.score(g, &pv, f, r);
                    project(g, s, &w_score)
                }),
            ),
            (
                5,
                Box::new(|g, v| {
                    let (pv, t1) = encode(g, v, &img);
                    let t2 = model.encode(g, &pv, &img2).expect("image matches model");
                    let f = g.fuse(t1, t2, map.clone());
                    project(g, f, &w_tok)
                }),
            ),
        ];
        for (slot, build) in &head_checks {
            let r = check_gradients(&params, build, tol, per_input);
            totals[*slot].merge(&r);
        }

        // Losses against their direct inputs.
        let logits = |rng: &mut ChaCha8Rng, n: usize| random_tensor(rng, 1, n, 2.0);
        let gt = DepthMap {
            width: cfg.width,
            height: cfg.height,
            values: (0..np).map(|_| rng.random_range(0.05..0.95)).collect(),
            valid: (0..np).map(|_| rng.random_bool(0.8)).collect(),
        };
        let labels: Vec<f64> = (0..np).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let good = rng.random_bool(0.5);
        let gt_rot = Rotation6D(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        let pixel_in = logits(&mut rng, np);
        let view_in = logits(&mut rng, 1);
        let rot_in = random_tensor(&mut rng, 1, 6, 1.0);
        let score_in = random_tensor(&mut rng, 1, 2, 1.0);
        let total_in: Vec<Tensor> = (0..7).map(|_| random_tensor(&mut rng, 1, 1, 1.0)).collect();

        let r = check_gradients(
            std::slice::from_ref(&pixel_in),
            |g, v| {
                let p = g.sigmoid(v[0]);
                loss_depth(g, p, &gt)
            },
            tol,
            np,
        );
        totals[6].merge(&r);
        let r = check_gradients(
            std::slice::from_ref(&pixel_in),
            |g, v| {
                let p = g.sigmoid(v[0]);
                loss_afford(g, p, &labels)
            },
            tol,
            np,
        );
        totals[7].merge(&r);
        let r = check_gradients(
            std::slice::from_ref(&view_in),
            |g, v| {
                let p = g.sigmoid(v[0]);
                loss_view(g, p, good)
            },
            tol,
            1,
        );
        totals[8].merge(&r);
        let r = check_gradients(std::slice::from_ref(&rot_in), |g, v| loss_rot(g, v[0], &gt_rot), tol, 6);
        totals[9].merge(&r);
        let r = check_gradients(
            std::slice::from_ref(&score_in),
            |g, v| {
                let s = g.slice_cols(v[0], 0, 1);
                let t = g.slice_cols(v[0], 1, 1);
                let s = g.sigmoid(s);
                let t = g.sigmoid(t);
                loss_score(g, s, t)
            },
            tol,
            2,
        );
        totals[10].merge(&r);
        let r = check_gradients(
            &total_in,
            |g, v| {
                let sq: Vec<Var> = v.iter().map(|&x| g.square(x)).collect();
                let parts = LossParts {
                    la1: Some(sq[0]),
                    la2: Some(sq[1]),
                    lr: Some(sq[2]),
                    ls: Some(sq[3]),
                    ld1: Some(sq[4]),
                    ld2: Some(sq[5]),
                    lv: Some(sq[6]),
                };
                total_loss(g, &parts)
            },
            tol,
            1,
        );
        totals[11].merge(&r);
    }
    Ok(names.into_iter().zip(totals).collect())
}
