//! Offline interaction dataset: random contacts with hemisphere orientations
//! labelled by the oracle, each paired with a sampled second view.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{unproject_pixel, CameraPose, Intrinsics};
use crate::config::{Config, GlobalViewConfig};
use crate::error::{Error, Result};
use crate::geom::{frame_from_approach, is_rotation, sample_hemisphere, world_up, Vec3};
use crate::render::render;
use crate::scene::{generate_scene, interact, GenConfig, InteractionRecord, Primitive, Scene};
use crate::viewspace::{enumerate_candidates, sample_pose, ViewFrame, ViewSample};

/// SplitMix64 finalizer; decorrelates derived seeds.
pub fn mix_seed(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic child seed for `(base, stream, index)`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    mix_seed(mix_seed(mix_seed(base) ^ stream) ^ index)
}

fn primitive_stream(p: Primitive) -> u64 {
    match p {
        Primitive::Push => 0x5055_5348,
        Primitive::Pull => 0x5055_4c4c,
    }
}

/// Global view aimed near the cabinet front.
pub fn sample_global_pose<R: Rng>(rng: &mut R, scene: &Scene, cfg: &GlobalViewConfig) -> Result<CameraPose> {
    let az = cfg.azimuth.sample(rng).to_radians();
    let el = cfg.elevation.sample(rng).to_radians();
    let dist = cfg.distance.sample(rng);
    let j = cfg.target_jitter;
    let jitter = Vec3::new(
        rng.random_range(-1.0..=1.0) * j,
        rng.random_range(-1.0..=1.0) * j,
        rng.random_range(-1.0..=1.0) * j,
    );
    let target = scene.focus + jitter;
    let dir = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
    crate::camera::make_lookat(target + dir * dist, target, world_up())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub scene: Scene,
    pub view1: CameraPose,
    pub view2: ViewSample,
    pub record: InteractionRecord,
}

impl Sample {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and checks one dataset line.
    pub fn from_json_line(line: &str, intr: &Intrinsics, num_candidates: usize) -> Result<Sample> {
        let s: Sample = serde_json::from_str(line)?;
        s.scene.validate()?;
        for pose in [&s.view1, &s.view2.pose] {
            if !is_rotation(&pose.rotation, 1e-6) || !pose.position.iter().all(|v| v.is_finite()) {
                return Err(Error::Geometry("sample camera pose is not a rigid transform".into()));
            }
        }
        let (row, col) = s.record.pixel;
        if row >= intr.height || col >= intr.width {
            return Err(Error::Shape(format!("contact pixel ({row}, {col}) outside the image")));
        }
        if s.view2.candidate >= num_candidates {
            return Err(Error::Shape(format!("candidate {} out of range", s.view2.candidate)));
        }
        if !is_rotation(&s.record.orientation, 1e-6) {
            return Err(Error::Geometry("interaction orientation is not a rotation".into()));
        }
        if s.record.scene_seed != s.scene.seed {
            return Err(Error::Geometry("record and scene seeds differ".into()));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub primitive: Primitive,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn positives(&self) -> usize {
        self.samples.iter().filter(|s| s.record.success).count()
    }

    pub fn negatives(&self) -> usize {
        self.samples.len() - self.positives()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.samples {
            w.write_all(s.to_json_line()?.as_bytes())?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R, intr: &Intrinsics, num_candidates: usize) -> Result<Dataset> {
        let mut samples = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s = Sample::from_json_line(&line, intr, num_candidates)
                .map_err(|e| Error::Config(format!("dataset line {}: {e}", i + 1)))?;
            samples.push(s);
        }
        let primitive = samples
            .first()
            .map(|s| s.record.primitive)
            .ok_or_else(|| Error::Config("dataset is empty".into()))?;
        if samples.iter().any(|s| s.record.primitive != primitive) {
            return Err(Error::Config("dataset mixes primitives".into()));
        }
        Ok(Dataset { primitive, samples })
    }
}

/// Rejection-samples interactions until both class quotas are met. Each
/// scene contributes at most one positive and one negative.
pub fn collect_dataset(
    cfg: &Config,
    gen: &GenConfig,
    primitive: Primitive,
    num_pos: usize,
    num_neg: usize,
    seed: u64,
) -> Result<Dataset> {
    if num_pos == 0 || num_neg == 0 {
        return Err(Error::Config("collection counts must be positive".into()));
    }
    let intr = cfg.camera.intrinsics()?;
    let candidates = enumerate_candidates(&cfg.view_space);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut attempts = 0usize;
    let stream = primitive_stream(primitive);
    for scene_index in 0.. {
        if pos.len() >= num_pos && neg.len() >= num_neg {
            break;
        }
        let scene_seed = derive_seed(seed, stream, scene_index);
        let scene = generate_scene(scene_seed, gen)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scene_seed, 1, 0));
        let view1 = sample_global_pose(&mut rng, &scene, &cfg.global_view)?;
        let rendered = render(&scene, &view1, &intr);
        let valid: Vec<usize> = (0..intr.num_pixels()).filter(|&i| rendered.gt_depth.valid[i]).collect();
        if valid.is_empty() {
            continue;
        }
        let (mut took_pos, mut took_neg) = (false, false);
        for _ in 0..cfg.data.attempts_per_scene {
            let need_pos = !took_pos && pos.len() < num_pos;
            let need_neg = !took_neg && neg.len() < num_neg;
            if !need_pos && !need_neg {
                break;
            }
            attempts += 1;
            if attempts > cfg.data.max_attempts {
                return Err(Error::Collection {
                    attempts: cfg.data.max_attempts,
                    positives: pos.len(),
                    negatives: neg.len(),
                    want_pos: num_pos,
                    want_neg: num_neg,
                });
            }
            let i = valid[rng.random_range(0..valid.len())];
            let (row, col) = (i / intr.width, i % intr.width);
            let depth = rendered.gt_depth.values[i];
            let contact = unproject_pixel(row, col, depth, &view1, &intr)?;
            let normal = rendered.gt_normal[i];
            // Approach from outside the surface: d · normal ≤ 0.
            let d = -sample_hemisphere(&mut rng, &normal);
            let orientation = frame_from_approach(&d);
            let outcome = interact(&scene, primitive, &contact, &orientation, &cfg.oracle)?;
            let view_seed: u64 = rng.random();
            let candidate = rng.random_range(0..candidates.len());
            if (outcome.success && !need_pos) || (!outcome.success && !need_neg) {
                continue;
            }
            let frame = ViewFrame::new(contact, normal)?;
            let view2 = sample_pose(&candidates[candidate], &frame, view_seed)?;
            let sample = Sample {
                scene: scene.clone(),
                view1: view1.clone(),
                view2,
                record: InteractionRecord {
                    scene_seed,
                    primitive,
                    pixel: (row, col),
                    contact_point: contact,
                    orientation,
                    success: outcome.success,
                    delta_dis: outcome.delta_dis,
                },
            };
            if outcome.success {
                took_pos = true;
                pos.push(sample);
            } else {
                took_neg = true;
                neg.push(sample);
            }
        }
    }
    // Interleave classes so any prefix stays roughly balanced.
    let mut samples = Vec::with_capacity(pos.len() + neg.len());
    let (mut p, mut n) = (pos.into_iter(), neg.into_iter());
    loop {
        match (p.next(), n.next()) {
            (None, None) => break,
            (a, b) => samples.extend(a.into_iter().chain(b)),
        }
    }
    Ok(Dataset { primitive, samples })
}
