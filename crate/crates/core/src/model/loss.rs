//! Training losses, as graph nodes and as the composite objective.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::rot6d::Rotation6D;
use super::tensor::{Graph, Tensor, Var};
use crate::camera::DepthMap;

/// Weight on the action-scoring loss in the composite objective.
pub const SCORE_LOSS_WEIGHT: f64 = 100.0;

/// Mean absolute depth error over the ground-truth valid mask.
pub fn loss_depth(g: &mut Graph, pred: Var, gt: &DepthMap) -> Var {
    g.masked_l1(pred, Arc::new(gt.values.clone()), Arc::new(gt.valid.clone()))
}

/// Binary cross-entropy of probabilities against `{0, 1}` labels.
pub fn loss_afford(g: &mut Graph, pred: Var, labels: &[f64]) -> Var {
    g.bce(pred, Arc::new(labels.to_vec()))
}

pub fn loss_view(g: &mut Graph, pred: Var, good: bool) -> Var {
    g.bce(pred, Arc::new(vec![if good { 1.0 } else { 0.0 }]))
}

/// Gram-Schmidt canonicalization of `N × 6` raw rotation rows.
pub fn canonical_6d(g: &mut Graph, raw: Var) -> Var {
    let a = g.slice_cols(raw, 0, 3);
    let b = g.slice_cols(raw, 3, 3);
    let c0 = g.normalize_rows(a);
    let proj = g.row_dot(c0, b);
    let along = g.mul_col(c0, proj);
    let perp = g.sub(b, along);
    let c1 = g.normalize_rows(perp);
    g.concat_cols(&[c0, c1])
}

/// Mean squared difference of the canonicalized 6D vectors.
pub fn loss_rot(g: &mut Graph, pred_raw: Var, gt: &Rotation6D) -> Var {
    let canon = canonical_6d(g, pred_raw);
    let gt_raw = g.constant(Tensor::from_vec(1, 6, gt.0.to_vec()).expect("six values"));
    let gt_canon = canonical_6d(g, gt_raw);
    let d = g.sub(canon, gt_canon);
    let sq = g.square(d);
    g.mean(sq)
}

/// `(mean_score − target)²`.
pub fn loss_score(g: &mut Graph, mean_score: Var, target: Var) -> Var {
    let d = g.sub(mean_score, target);
    g.square(d)
}

/// The seven objective components of one training step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts<T> {
    pub la1: T,
    pub la2: T,
    pub lr: T,
    pub ls: T,
    pub ld1: T,
    pub ld2: T,
    pub lv: T,
}

pub type LossValues = LossParts<f64>;

impl LossValues {
    pub fn total(&self) -> f64 {
        (self.la1 + self.la2) + self.lr + SCORE_LOSS_WEIGHT * self.ls + (self.ld1 + self.ld2) + self.lv
    }

    pub fn all_finite(&self) -> bool {
        [self.la1, self.la2, self.lr, self.ls, self.ld1, self.ld2, self.lv]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn add(&mut self, o: &LossValues) {
        self.la1 += o.la1;
        self.la2 += o.la2;
        self.lr += o.lr;
        self.ls += o.ls;
        self.ld1 += o.ld1;
        self.ld2 += o.ld2;
        self.lv += o.lv;
    }

    pub fn scaled(&self, s: f64) -> LossValues {
        LossValues {
            la1: self.la1 * s,
            la2: self.la2 * s,
            lr: self.lr * s,
            ls: self.ls * s,
            ld1: self.ld1 * s,
            ld2: self.ld2 * s,
            lv: self.lv * s,
        }
    }
}

/// Composite objective; absent components contribute nothing.
pub fn total_loss(g: &mut Graph, parts: &LossParts<Option<Var>>) -> Var {
    let terms = [
        (parts.la1, 1.0),
        (parts.la2, 1.0),
        (parts.lr, 1.0),
        (parts.ls, SCORE_LOSS_WEIGHT),
        (parts.ld1, 1.0),
        (parts.ld2, 1.0),
        (parts.lv, 1.0),
    ];
    let mut acc: Option<Var> = None;
    for (v, w) in terms {
        let Some(v) = v else { continue };
        let term = if w == 1.0 { v } else { g.scale(v, w) };
        acc = Some(match acc {
            Some(a) => g.add(a, term),
            None => term,
        });
    }
    acc.unwrap_or_else(|| g.constant(Tensor::scalar(0.0)))
}

/// Values of the present components.
pub fn loss_values(g: &Graph, parts: &LossParts<Option<Var>>) -> LossValues {
    let v = |x: Option<Var>| x.map(|x| g.scalar(x)).unwrap_or(0.0);
    LossValues {
        la1: v(parts.la1),
        la2: v(parts.la2),
        lr: v(parts.lr),
        ls: v(parts.ls),
        ld1: v(parts.ld1),
        ld2: v(parts.ld2),
        lv: v(parts.lv),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_parts(g: &mut Graph) -> LossParts<Option<Var>> {
        let one = g.constant(Tensor::scalar(1.0));
        LossParts {
            la1: Some(one),
            la2: Some(one),
            lr: Some(one),
            ls: Some(one),
            ld1: Some(one),
            ld2: Some(one),
            lv: Some(one),
        }
    }

    #[test]
    fn unit_components_total_106() {
        let mut g = Graph::new();
        let parts = unit_parts(&mut g);
        let t = total_loss(&mut g, &parts);
        assert_eq!(g.scalar(t), 106.0);
        assert_eq!(loss_values(&g, &parts).total(), 106.0);
    }

    #[test]
    fn score_loss_weight_applies() {
        let mut g = Graph::new();
        let ls = g.constant(Tensor::scalar(0.01));
        let parts = LossParts {
            ls: Some(ls),
            ..Default::default()
        };
        let t = total_loss(&mut g, &parts);
        assert!((g.scalar(t) - 1.0).abs() < 1e-15);
        let empty = total_loss(&mut g, &LossParts::default());
        assert_eq!(g.scalar(empty), 0.0);
    }

    #[test]
    fn rotation_loss_is_zero_at_target_and_symmetric() {
        let r1 = Rotation6D([0.3, -1.2, 0.5, 2.0, 0.1, -0.7]);
        let r2 = Rotation6D([1.0, 0.2, 0.1, -0.3, 1.0, 0.4]);
        let eval = |a: &Rotation6D, b: &Rotation6D| {
            let mut g = Graph::new();
            let p = g.constant(Tensor::from_vec(1, 6, a.0.to_vec()).unwrap());
            let l = loss_rot(&mut g, p, b);
            g.scalar(l)
        };
        assert!(eval(&r1, &r1) < 1e-30);
        assert!((eval(&r1, &r2) - eval(&r2, &r1)).abs() < 1e-15);
        assert!(eval(&r1, &r2) > 0.0);
    }
}
