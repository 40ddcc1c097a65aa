//! Evaluation baselines against independent references: the oracle policy,
//! a Monte Carlo base rate for the random policy, and AbsRel by hand.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use viewfuse::camera::{unproject_pixel, DepthMap};
use viewfuse::config::Config;
use viewfuse::eval::{absrel, episodes, evaluate_policy, summarize, EpisodeResult, ModelSettings, PolicyKind, Split};
use viewfuse::geom::{frame_from_approach, sample_hemisphere};
use viewfuse::render::render;
use viewfuse::scene::{interact, Primitive};

fn small(seen: usize, unseen: usize) -> Config {
    let mut cfg = Config::default();
    cfg.eval.seen_episodes = seen;
    cfg.eval.unseen_episodes = unseen;
    cfg
}

#[test]
fn oracle_push_always_succeeds() {
    let cfg = small(15, 15);
    let eps = episodes(&cfg, 3).unwrap();
    let r = evaluate_policy(
        &cfg,
        &eps,
        Primitive::Push,
        PolicyKind::Oracle,
        None,
        ModelSettings::default(),
    )
    .unwrap();
    let rep = summarize(Primitive::Push, PolicyKind::Oracle, None, &r).unwrap();
    assert_eq!(rep.short_term, 100.0);
    assert_eq!(rep.episodes, 30);
}

#[test]
fn unreachable_threshold_means_no_success() {
    // A single stroke can never exceed a threshold above the stroke length.
    let mut cfg = small(10, 10);
    cfg.oracle.delta = 1.0;
    let eps = episodes(&cfg, 3).unwrap();
    for policy in [PolicyKind::Oracle, PolicyKind::Random] {
        let r = evaluate_policy(&cfg, &eps, Primitive::Push, policy, None, ModelSettings::default()).unwrap();
        assert_eq!(summarize(Primitive::Push, policy, None, &r).unwrap().short_term, 0.0);
    }
}

#[test]
fn model_policy_without_a_model_is_an_error() {
    let cfg = small(1, 1);
    let eps = episodes(&cfg, 3).unwrap();
    assert!(evaluate_policy(
        &cfg,
        &eps,
        Primitive::Push,
        PolicyKind::Model,
        None,
        ModelSettings::default()
    )
    .is_err());
}

/// Success probability of a uniformly random visible contact with a uniform
/// outward-facing approach, estimated by sampling the oracle directly.
fn monte_carlo_base_rate(cfg: &Config, seed: u64, per_episode: usize) -> f64 {
    let intr = cfg.camera.intrinsics().unwrap();
    let eps = episodes(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut hits, mut total) = (0usize, 0usize);
    for ep in &eps {
        let r = render(&ep.scene, &ep.pose1, &intr);
        let valid: Vec<usize> = (0..intr.num_pixels()).filter(|&i| r.gt_depth.valid[i]).collect();
        for _ in 0..per_episode {
            let i = valid[rand::Rng::random_range(&mut rng, 0..valid.len())];
            let p = unproject_pixel(i / intr.width, i % intr.width, r.gt_depth.values[i], &ep.pose1, &intr).unwrap();
            let d = -sample_hemisphere(&mut rng, &r.gt_normal[i]);
            let o = interact(&ep.scene, Primitive::Push, &p, &frame_from_approach(&d), &cfg.oracle).unwrap();
            hits += o.success as usize;
            total += 1;
        }
    }
    hits as f64 / total as f64
}

#[test]
fn random_policy_matches_the_monte_carlo_base_rate() {
    let cfg = small(100, 100);
    let seed = 17;
    let eps = episodes(&cfg, seed).unwrap();
    let r = evaluate_policy(
        &cfg,
        &eps,
        Primitive::Push,
        PolicyKind::Random,
        None,
        ModelSettings::default(),
    )
    .unwrap();
    let rate = summarize(Primitive::Push, PolicyKind::Random, None, &r)
        .unwrap()
        .short_term
        / 100.0;
    let base = monte_carlo_base_rate(&cfg, seed, 100);
    let sigma = (base * (1.0 - base) / eps.len() as f64).sqrt();
    assert!(base > 0.0 && base < 0.5, "base rate {base}");
    assert!(
        (rate - base).abs() <= 4.0 * sigma + 1e-9,
        "random {rate} vs base rate {base} (sigma {sigma})"
    );
}

fn depth_map(values: Vec<f64>, valid: Vec<bool>) -> DepthMap {
    DepthMap {
        width: values.len(),
        height: 1,
        values,
        valid,
    }
}

#[test]
fn absrel_of_a_ten_percent_overestimate() {
    let gt = depth_map(vec![0.2, 0.35, 0.5, 0.9], vec![true; 4]);
    let pred: Vec<f64> = gt.values.iter().map(|v| v * 1.1).collect();
    assert!((absrel(&pred, &gt).unwrap() - 0.1).abs() < 1e-12);
}

#[test]
fn absrel_recomputed_over_the_valid_mask() {
    let gt = depth_map(vec![0.2, 0.4, 0.0, 0.8], vec![true, true, false, true]);
    let pred = vec![0.3, 0.4, 5.0, 0.6];
    let expected = (0.1 / 0.2 + 0.0 + 0.2 / 0.8) / 3.0;
    assert!((absrel(&pred, &gt).unwrap() - expected).abs() < 1e-12);
    assert!(absrel(&pred[..3], &gt).is_err());
    assert!(absrel(&pred, &depth_map(vec![0.5; 4], vec![false; 4])).is_err());
}

fn result(split: Split, short: bool, long: bool, depth: Option<(f64, f64)>) -> EpisodeResult {
    EpisodeResult {
        split,
        index: 0,
        pixel: (0, 0),
        contact: None,
        short_success: short,
        delta_dis: 0.0,
        long_success: long,
        cumulative: 0.0,
        absrel_initial: depth.map(|d| d.0),
        absrel_refined: depth.map(|d| d.1),
        trajectory: Vec::new(),
    }
}

#[test]
fn summary_pools_episodes_and_splits_depth() {
    let results = vec![
        result(Split::Seen, true, true, Some((0.2, 0.1))),
        result(Split::Seen, false, false, Some((0.4, 0.3))),
        result(Split::Unseen, true, false, Some((0.6, 0.5))),
        result(Split::Unseen, true, false, None),
    ];
    let rep = summarize(Primitive::Pull, PolicyKind::Model, None, &results).unwrap();
    assert_eq!(rep.short_term, 75.0);
    assert_eq!(rep.long_term, 25.0);
    assert_eq!(rep.short_seen, 50.0);
    assert_eq!(rep.short_unseen, 100.0);
    assert!((rep.absrel_initial.unwrap() - 0.4).abs() < 1e-12);
    assert!((rep.absrel_refined.unwrap() - 0.3).abs() < 1e-12);
    let seen = rep.absrel_seen.unwrap();
    assert!((seen.initial - 0.3).abs() < 1e-12 && (seen.refined - 0.2).abs() < 1e-12);
    let unseen = rep.absrel_unseen.unwrap();
    assert!((unseen.initial - 0.6).abs() < 1e-12 && (unseen.refined - 0.5).abs() < 1e-12);
    assert!(summarize(Primitive::Pull, PolicyKind::Model, None, &[]).is_err());
}
