//! Cross-view correspondence by depth reprojection, token-level voting, and
//! token-grid fusion.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{project, unproject_pixel, CameraPose, DepthMap, Intrinsics};
use crate::error::{Error, Result};
use crate::render::save_heatmap_png;

/// Grid of per-token feature vectors, row-major, `channels` values each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub patch: usize,
    pub features: Vec<f64>,
}

impl TokenGrid {
    pub fn new(rows: usize, cols: usize, channels: usize, patch: usize, features: Vec<f64>) -> Result<Self> {
        if features.len() != rows * cols * channels {
            return Err(Error::Shape(format!(
                "{} features for a {rows}x{cols}x{channels} grid",
                features.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            channels,
            patch,
            features,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.rows * self.cols
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelCorrespondence {
    pub width: usize,
    pub height: usize,
    /// View-2 pixel for each view-1 pixel, row-major.
    pub map: Vec<Option<(usize, usize)>>,
    /// In the view-2 frustum but hidden behind nearer geometry.
    pub occluded: Vec<bool>,
}

impl PixelCorrespondence {
    pub fn mapped_count(&self) -> usize {
        self.map.iter().filter(|m| m.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenCorrespondence {
    pub rows: usize,
    pub cols: usize,
    /// Linear view-2 token index for each view-1 token.
    pub map: Vec<Option<usize>>,
}

impl TokenCorrespondence {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            map: vec![None; rows * cols],
        }
    }

    pub fn identity(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            map: (0..rows * cols).map(Some).collect(),
        }
    }
}

/// Reprojects view-1 pixels into view 2 and keeps those that pass the
/// occlusion test `|depth_reprojected − depth2(q2)| ≤ occl_tol`.
pub fn pixel_correspondence(
    depth1: &DepthMap,
    pose1: &CameraPose,
    pose2: &CameraPose,
    intr: &Intrinsics,
    depth2: &DepthMap,
    occl_tol: f64,
) -> Result<PixelCorrespondence> {
    if depth1.width != depth2.width || depth1.height != depth2.height {
        return Err(Error::Shape("depth maps differ in resolution".into()));
    }
    if depth1.width != intr.width || depth1.height != intr.height {
        return Err(Error::Shape("depth map does not match intrinsics".into()));
    }
    let n = intr.num_pixels();
    let mut map = vec![None; n];
    let mut occluded = vec![false; n];
    for row in 0..intr.height {
        for col in 0..intr.width {
            let Some(d1) = depth1.get(row, col) else {
                continue;
            };
            let Ok(x) = unproject_pixel(row, col, d1, pose1, intr) else {
                continue;
            };
            let Some(p) = project(&x, pose2, intr) else {
                continue;
            };
            let (r2, c2) = p.pixel();
            let i = row * intr.width + col;
            match depth2.get(r2, c2) {
                Some(d2) if (p.depth - d2).abs() <= occl_tol => map[i] = Some((r2, c2)),
                _ => occluded[i] = true,
            }
        }
    }
    Ok(PixelCorrespondence {
        width: intr.width,
        height: intr.height,
        map,
        occluded,
    })
}

/// Plurality vote of the view-2 tokens hit by each view-1 token's pixels.
/// Ties go to the lowest view-2 token index.
pub fn token_correspondence(pc: &PixelCorrespondence, patch: usize) -> Result<TokenCorrespondence> {
    if patch == 0 || !pc.width.is_multiple_of(patch) || !pc.height.is_multiple_of(patch) {
        return Err(Error::Shape(format!(
            "image {}x{} not divisible by patch {patch}",
            pc.width, pc.height
        )));
    }
    let rows = pc.height / patch;
    let cols = pc.width / patch;
    let mut map = vec![None; rows * cols];
    let mut votes: HashMap<usize, usize> = HashMap::new();
    for tr in 0..rows {
        for tc in 0..cols {
            votes.clear();
            for r in tr * patch..(tr + 1) * patch {
                for c in tc * patch..(tc + 1) * patch {
                    if let Some((r2, c2)) = pc.map[r * pc.width + c] {
                        *votes.entry((r2 / patch) * cols + c2 / patch).or_insert(0) += 1;
                    }
                }
            }
            map[tr * cols + tc] = votes
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&tok, _)| tok);
        }
    }
    Ok(TokenCorrespondence { rows, cols, map })
}

/// Row fusion kernel shared by [`fuse`] and the differentiable fusion op:
/// matched rows become the mean of the two rows, unmatched rows are copied
/// from `a`.
pub fn fuse_rows(a: &[f64], b: &[f64], channels: usize, map: &[Option<usize>]) -> Vec<f64> {
    let mut out = a.to_vec();
    for (i, m) in map.iter().enumerate() {
        if let Some(j) = *m {
            let dst = &mut out[i * channels..(i + 1) * channels];
            let src = &b[j * channels..(j + 1) * channels];
            for (o, s) in dst.iter_mut().zip(src) {
                *o = 0.5 * (*o + s);
            }
        }
    }
    out
}

pub fn fuse(f1: &TokenGrid, f2: &TokenGrid, tc: &TokenCorrespondence) -> Result<TokenGrid> {
    if f1.rows != f2.rows || f1.cols != f2.cols || f1.channels != f2.channels {
        return Err(Error::Shape("token grids differ in shape".into()));
    }
    if tc.rows != f1.rows || tc.cols != f1.cols {
        return Err(Error::Shape("correspondence does not match token grid".into()));
    }
    if tc.map.iter().flatten().any(|&j| j >= f2.num_tokens()) {
        return Err(Error::Shape("correspondence points outside the view-2 grid".into()));
    }
    Ok(TokenGrid {
        features: fuse_rows(&f1.features, &f2.features, f1.channels, &tc.map),
        ..f1.clone()
    })
}

/// View-1 pixels colored by the view-2 token they map to; unmapped pixels
/// stay dark.
pub fn save_correspondence_png(pc: &PixelCorrespondence, patch: usize, path: &Path) -> Result<()> {
    let cols = pc.width / patch.max(1);
    let tokens = (cols * (pc.height / patch.max(1))).max(1);
    let values: Vec<f64> = pc
        .map
        .iter()
        .map(|m| match m {
            Some((r, c)) => 0.15 + 0.85 * ((r / patch) * cols + c / patch) as f64 / tokens as f64,
            None => 0.0,
        })
        .collect();
    save_heatmap_png(&values, pc.width, pc.height, None, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(values: Vec<f64>, rows: usize, cols: usize, c: usize) -> TokenGrid {
        TokenGrid::new(rows, cols, c, 8, values).unwrap()
    }

    #[test]
    fn empty_correspondence_keeps_f1() {
        let f1 = grid((0..12).map(|v| v as f64).collect(), 2, 2, 3);
        let f2 = grid(vec![7.0; 12], 2, 2, 3);
        assert_eq!(fuse(&f1, &f2, &TokenCorrespondence::empty(2, 2)).unwrap(), f1);
    }

    #[test]
    fn identical_grids_fuse_to_themselves() {
        let f1 = grid((0..12).map(|v| v as f64 * 0.5).collect(), 2, 2, 3);
        assert_eq!(fuse(&f1, &f1, &TokenCorrespondence::identity(2, 2)).unwrap(), f1);
    }

    #[test]
    fn single_match_averages() {
        let f1 = grid(vec![0.0; 4], 1, 2, 2);
        let f2 = grid(vec![2.0; 4], 1, 2, 2);
        let tc = TokenCorrespondence {
            rows: 1,
            cols: 2,
            map: vec![Some(1), None],
        };
        assert_eq!(fuse(&f1, &f2, &tc).unwrap().features, vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let f1 = grid(vec![0.0; 4], 1, 2, 2);
        let f2 = grid(vec![0.0; 6], 1, 3, 2);
        assert!(matches!(
            fuse(&f1, &f2, &TokenCorrespondence::empty(1, 2)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn plurality_ties_go_to_lowest_token() {
        // Two pixels of a 2x2 token vote for token 3, two for token 1.
        let mut map = vec![None; 16];
        map[0] = Some((2, 2));
        map[1] = Some((0, 2));
        map[4] = Some((3, 3));
        map[5] = Some((1, 3));
        let pc = PixelCorrespondence {
            width: 4,
            height: 4,
            map,
            occluded: vec![false; 16],
        };
        let tc = token_correspondence(&pc, 2).unwrap();
        assert_eq!(tc.map[0], Some(1));
        assert_eq!(tc.map[1], None);
    }
}
