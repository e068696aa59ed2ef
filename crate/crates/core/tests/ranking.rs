mod support;

use lpr_core::kinematics::{EePose, Gripper, JointConfig, Path, PathSource};
use lpr_core::policy::validity_filter;
use lpr_core::ranker::{argmax_first, select_index, select_path, RankerParams};
use nalgebra::Vector2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::filter_oracle;

fn small_ranker(seed: u64) -> RankerParams {
    RankerParams::with_widths(3, &[16, 32], 64, &[32, 32], &mut ChaCha8Rng::seed_from_u64(seed))
}

fn config() -> impl Strategy<Value = JointConfig> {
    prop::collection::vec(-3.0..3.0f64, 3).prop_map(JointConfig)
}

fn goal() -> impl Strategy<Value = EePose> {
    (-1.0..1.0f64, -1.0..1.0f64, -3.0..3.0f64, any::<bool>()).prop_map(|(x, y, th, open)| {
        EePose::new(Vector2::new(x, y), th, if open { Gripper::Open } else { Gripper::Closed })
    })
}

fn path(len: std::ops::Range<usize>) -> impl Strategy<Value = Path> {
    (prop::collection::vec(config(), len), any::<bool>())
        .prop_map(|(c, flag)| Path::new(c, PathSource::Planner).with_collision(flag))
}

/// Distinct values on a coarse grid so monotone maps cannot merge or split ties
/// through rounding.
fn q_values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-40i32..40, 1..30).prop_map(|v| v.into_iter().map(|k| k as f64 / 8.0).collect())
}

fn monotone(kind: u8, x: f64) -> f64 {
    match kind % 4 {
        0 => 3.0 * x + 1.0,
        1 => x.exp(),
        2 => x * x * x + x,
        _ => x.atan() - 7.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn q_is_invariant_to_config_order(p in path(2..40), g in goal(), seed in 0u64..4, shuffle in any::<u64>()) {
        use rand::seq::SliceRandom;
        let net = small_ranker(seed);
        let mut configs = p.configs().to_vec();
        configs.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        let permuted = Path::new(configs, p.source).with_collision(p.in_collision);
        prop_assert_eq!(net.q_value(&p, &g).unwrap(), net.q_value(&permuted, &g).unwrap());
    }

    #[test]
    fn q_is_invariant_to_duplicated_configs(p in path(2..40), g in goal(), seed in 0u64..4, picks in prop::collection::vec(any::<prop::sample::Index>(), 1..20)) {
        let net = small_ranker(seed);
        let mut configs = p.configs().to_vec();
        for i in &picks {
            configs.push(p.configs()[i.index(p.len())].clone());
        }
        let padded = Path::new(configs, p.source).with_collision(p.in_collision);
        prop_assert_eq!(net.q_value(&p, &g).unwrap(), net.q_value(&padded, &g).unwrap());
    }

    #[test]
    fn selection_is_invariant_to_monotone_maps(q in q_values(), kind in any::<u8>(), eps in 0.0..1.0f64, seed in any::<u64>()) {
        let mapped: Vec<f64> = q.iter().map(|&x| monotone(kind, x)).collect();
        let a = select_index(q.clone(), eps, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = select_index(mapped, eps, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a.index, b.index);
        prop_assert_eq!(a.explored, b.explored);
        let greedy = select_index(q.clone(), 0.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(greedy.index, q.iter().position(|&v| v == best).unwrap());
    }

    #[test]
    fn select_path_agrees_with_scores(cands in prop::collection::vec(path(32..33), 1..8), g in goal(), seed in 0u64..4) {
        let net = small_ranker(seed);
        let sel = select_path(&net, &cands, &g, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let scores = net.score(&cands, &g).unwrap();
        prop_assert_eq!(Some(sel.index), argmax_first(&scores));
        prop_assert_eq!(sel.q_values, scores);
    }

    #[test]
    fn validity_filter_matches_brute_force(cand in path(2..20), sampled in prop::collection::vec(path(2..20), 0..12)) {
        prop_assert_eq!(validity_filter(&cand, &sampled), filter_oracle(&cand, &sampled));
    }
}

#[test]
fn validity_filter_edge_cases() {
    let line = |len: f64| Path::new(vec![JointConfig(vec![0.0]), JointConfig(vec![len])], PathSource::Planner);
    assert!(!validity_filter(&line(0.0), &[]));
    assert!(validity_filter(&line(1.0), &[line(2.0)]));
    // equal to the mean is not shorter
    assert!(!validity_filter(&line(2.0), &[line(1.0), line(3.0)]));
    assert!(!validity_filter(&line(5.0), &[line(1.0), line(3.0)]));
}
