//! Next-view candidate space around a contact point: the azimuth × altitude
//! grid, pose sampling inside a bin, and normal estimation from depth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{make_lookat, unproject_pixel, CameraPose, DepthMap, Intrinsics};
use crate::error::{Error, Result};
use crate::geom::{world_up, Vec3};

/// Length of the pose encoding fed to the view scorer.
pub const POSE_ENCODING_DIM: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewSpaceConfig {
    /// Azimuth bounds in degrees.
    pub azimuth: [f64; 2],
    /// Altitude bounds in degrees.
    pub altitude: [f64; 2],
    pub azimuth_bins: usize,
    pub altitude_bins: usize,
    pub distance: [f64; 2],
}

impl Default for ViewSpaceConfig {
    fn default() -> Self {
        Self {
            azimuth: [-20.0, 20.0],
            altitude: [-20.0, 20.0],
            azimuth_bins: 3,
            altitude_bins: 3,
            distance: [2.5, 4.5],
        }
    }
}

impl ViewSpaceConfig {
    pub fn validate(&self) -> Result<()> {
        let ok_range = |r: &[f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] < r[1];
        if !ok_range(&self.azimuth) || !ok_range(&self.altitude) || !ok_range(&self.distance) {
            return Err(Error::Config("view space bounds need min < max".into()));
        }
        if self.azimuth_bins == 0 || self.altitude_bins == 0 {
            return Err(Error::Config("view space needs at least one bin per axis".into()));
        }
        if self.distance[0] <= 0.0 {
            return Err(Error::Config("view distance must be positive".into()));
        }
        if self.azimuth[0] <= -90.0 || self.azimuth[1] >= 90.0 || self.altitude[0] <= -90.0 || self.altitude[1] >= 90.0
        {
            return Err(Error::Config("view angles must stay inside (-90, 90) degrees".into()));
        }
        Ok(())
    }

    pub fn num_candidates(&self) -> usize {
        self.azimuth_bins * self.altitude_bins
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewCandidate {
    pub index: usize,
    /// Half-open `[lo, hi)` in degrees.
    pub azimuth: [f64; 2],
    pub altitude: [f64; 2],
    pub distance: [f64; 2],
}

impl ViewCandidate {
    pub fn contains_angles(&self, az: f64, alt: f64) -> bool {
        az >= self.azimuth[0] && az < self.azimuth[1] && alt >= self.altitude[0] && alt < self.altitude[1]
    }

    pub fn center(&self) -> (f64, f64, f64) {
        (
            0.5 * (self.azimuth[0] + self.azimuth[1]),
            0.5 * (self.altitude[0] + self.altitude[1]),
            0.5 * (self.distance[0] + self.distance[1]),
        )
    }
}

fn bin_edges(bounds: [f64; 2], bins: usize, i: usize) -> [f64; 2] {
    let w = (bounds[1] - bounds[0]) / bins as f64;
    let lo = bounds[0] + w * i as f64;
    let hi = if i + 1 == bins {
        bounds[1]
    } else {
        bounds[0] + w * (i + 1) as f64
    };
    [lo, hi]
}

/// Row-major over altitude × azimuth: index = altitude_bin · azimuth_bins + azimuth_bin.
pub fn enumerate_candidates(cfg: &ViewSpaceConfig) -> Vec<ViewCandidate> {
    let mut out = Vec::with_capacity(cfg.num_candidates());
    for alt in 0..cfg.altitude_bins {
        for az in 0..cfg.azimuth_bins {
            out.push(ViewCandidate {
                index: out.len(),
                azimuth: bin_edges(cfg.azimuth, cfg.azimuth_bins, az),
                altitude: bin_edges(cfg.altitude, cfg.altitude_bins, alt),
                distance: cfg.distance,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewFrame {
    pub anchor: Vec3,
    pub normal: Vec3,
    /// Horizontal tangent (azimuth direction).
    pub t1: Vec3,
    /// Tangent completing the right-handed frame (altitude direction).
    pub t2: Vec3,
}

impl ViewFrame {
    pub fn new(anchor: Vec3, normal: Vec3) -> Result<Self> {
        let nn = normal.norm();
        if !(nn > 1e-12) || !nn.is_finite() {
            return Err(Error::Geometry("view frame normal is degenerate".into()));
        }
        let n = normal / nn;
        let mut t1 = world_up().cross(&n);
        if t1.norm() < 1e-6 {
            t1 = n.cross(&Vec3::x());
        }
        let t1 = t1.normalize();
        let t2 = n.cross(&t1);
        Ok(Self {
            anchor,
            normal: n,
            t1,
            t2,
        })
    }

    /// Unit direction from the anchor toward a camera at the given angles.
    pub fn direction(&self, azimuth_deg: f64, altitude_deg: f64) -> Vec3 {
        let (az, alt) = (azimuth_deg.to_radians(), altitude_deg.to_radians());
        (self.normal * az.cos() + self.t1 * az.sin()) * alt.cos() + self.t2 * alt.sin()
    }

    pub fn to_frame(&self, v: &Vec3) -> Vec3 {
        Vec3::new(v.dot(&self.normal), v.dot(&self.t1), v.dot(&self.t2))
    }
}

/// A concrete view placement in the candidate space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSample {
    pub candidate: usize,
    pub azimuth: f64,
    pub altitude: f64,
    pub distance: f64,
    pub pose: CameraPose,
}

/// Camera looking at the frame anchor from `distance` along `(azimuth, altitude)`.
pub fn pose_at(frame: &ViewFrame, azimuth: f64, altitude: f64, distance: f64) -> Result<CameraPose> {
    let dir = frame.direction(azimuth, altitude);
    let up = if dir.dot(&world_up()).abs() > 0.99 {
        frame.t2
    } else {
        world_up()
    };
    make_lookat(frame.anchor + dir * distance, frame.anchor, up)
}

fn uniform_in<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    loop {
        let v = lo + (hi - lo) * rng.random::<f64>();
        if v < hi {
            return v;
        }
    }
}

pub fn sample_pose(candidate: &ViewCandidate, frame: &ViewFrame, seed: u64) -> Result<ViewSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let azimuth = uniform_in(&mut rng, candidate.azimuth[0], candidate.azimuth[1]);
    let altitude = uniform_in(&mut rng, candidate.altitude[0], candidate.altitude[1]);
    let distance = candidate.distance[0] + (candidate.distance[1] - candidate.distance[0]) * rng.random::<f64>();
    Ok(ViewSample {
        candidate: candidate.index,
        azimuth,
        altitude,
        distance,
        pose: pose_at(frame, azimuth, altitude, distance)?,
    })
}

/// Scorer input for a view placement: the direction toward the camera in
/// frame coordinates, normalized distance, normalized angles, normalized
/// candidate index, and two reserved zeros.
pub fn encode_pose(
    cfg: &ViewSpaceConfig,
    frame: &ViewFrame,
    candidate: usize,
    azimuth: f64,
    altitude: f64,
    distance: f64,
) -> [f64; POSE_ENCODING_DIM] {
    let dir = frame.to_frame(&frame.direction(azimuth, altitude));
    let norm = |v: f64, r: [f64; 2]| 2.0 * (v - r[0]) / (r[1] - r[0]) - 1.0;
    let last = cfg.num_candidates().saturating_sub(1).max(1);
    [
        dir.x,
        dir.y,
        dir.z,
        (distance - cfg.distance[0]) / (cfg.distance[1] - cfg.distance[0]),
        norm(azimuth, cfg.azimuth),
        norm(altitude, cfg.altitude),
        candidate as f64 / last as f64,
        0.0,
        0.0,
    ]
}

/// Surface normal from central differences of unprojected 4-neighbors,
/// flipped to face the camera.
pub fn estimate_normal(depth: &DepthMap, row: usize, col: usize, pose: &CameraPose, intr: &Intrinsics) -> Result<Vec3> {
    let err = || Error::Normal { row, col };
    if row == 0 || col == 0 || row + 1 >= depth.height || col + 1 >= depth.width {
        return Err(err());
    }
    let at = |r: usize, c: usize| -> Result<Vec3> {
        let d = depth.get(r, c).ok_or_else(err)?;
        unproject_pixel(r, c, d, pose, intr).map_err(|_| err())
    };
    let center = at(row, col)?;
    let tx = at(row, col + 1)? - at(row, col - 1)?;
    let ty = at(row + 1, col)? - at(row - 1, col)?;
    let n = tx.cross(&ty);
    let nn = n.norm();
    if !(nn > 1e-15) {
        return Err(err());
    }
    let n = n / nn;
    Ok(if n.dot(&(pose.position - center)) < 0.0 { -n } else { n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_zero_is_the_low_corner() {
        let c = enumerate_candidates(&ViewSpaceConfig::default());
        assert_eq!(c.len(), 9);
        assert_eq!(c[0].azimuth, [-20.0, -20.0 + 40.0 / 3.0]);
        assert_eq!(c[0].altitude, [-20.0, -20.0 + 40.0 / 3.0]);
        assert!(c[4].contains_angles(0.0, 0.0));
        assert_eq!(c[8].azimuth[1], 20.0);
    }

    #[test]
    fn samples_stay_in_their_bin() {
        let frame = ViewFrame::new(Vec3::new(0.5, 0.2, 0.7), Vec3::new(1.0, 0.3, 0.2)).unwrap();
        for cand in enumerate_candidates(&ViewSpaceConfig::default()) {
            for seed in 0..200 {
                let s = sample_pose(&cand, &frame, seed).unwrap();
                assert!(cand.contains_angles(s.azimuth, s.altitude));
                let d = (s.pose.position - frame.anchor).norm();
                assert!((2.5 - 1e-12..=4.5 + 1e-12).contains(&d));
            }
        }
    }

    #[test]
    fn frame_is_orthonormal() {
        for n in [Vec3::x(), Vec3::z(), Vec3::new(0.3, -1.0, 0.4)] {
            let f = ViewFrame::new(Vec3::zeros(), n).unwrap();
            assert!((f.normal.dot(&f.t1)).abs() < 1e-12);
            assert!((f.normal.dot(&f.t2)).abs() < 1e-12);
            assert!((f.t1.dot(&f.t2)).abs() < 1e-12);
            assert!((f.t1.norm() - 1.0).abs() < 1e-12 && (f.t2.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn encoding_of_center_candidate() {
        let cfg = ViewSpaceConfig::default();
        let frame = ViewFrame::new(Vec3::zeros(), Vec3::x()).unwrap();
        let e = encode_pose(&cfg, &frame, 4, 0.0, 0.0, 3.5);
        assert_eq!(e, [1.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.5, 0.0, 0.0]);
    }
}
