use lpr_core::generators::{bernstein, bezier_point, sample_beziers, sample_plans, BezierConfig, PlannerConfig};
use lpr_core::kinematics::{forward_kinematics, inverse_kinematics, EePose, Gripper, Path, PathSource, Vec2};
use lpr_core::world::{check_collision, default_arm, home_config, Obstacle, SceneState, Task};
use nalgebra::Vector2;
use proptest::prelude::*;

/// Pascal's-triangle binomial, independent of the library's.
fn pascal(n: usize, i: usize) -> f64 {
    let mut row = vec![1.0f64];
    for _ in 0..n {
        let mut next = vec![1.0; row.len() + 1];
        for k in 1..row.len() {
            next[k] = row[k - 1] + row[k];
        }
        row = next;
    }
    row[i]
}

/// De Casteljau evaluation as the curve reference.
fn de_casteljau(points: &[Vec2], t: f64) -> Vec2 {
    let mut pts = points.to_vec();
    while pts.len() > 1 {
        pts = pts.windows(2).map(|w| w[0] * (1.0 - t) + w[1] * t).collect();
    }
    pts[0]
}

fn point() -> impl Strategy<Value = Vec2> {
    (-5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y)| Vector2::new(x, y))
}

#[test]
fn bernstein_examples() {
    assert_eq!(bernstein(2, 0, 0.0).unwrap(), 1.0);
    assert_eq!(bernstein(2, 1, 0.5).unwrap(), 0.5);
    let sum: f64 = (0..=5).map(|i| bernstein(5, i, 0.3).unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-12);
    assert!(bernstein(2, 3, 0.5).is_err());
}

#[test]
fn partition_of_unity_on_grid() {
    for n in 0..=8u32 {
        for k in 0..=200 {
            let t = k as f64 / 200.0;
            let sum: f64 = (0..=n).map(|i| bernstein(n, i, t).unwrap()).sum();
            assert!((sum - 1.0).abs() <= 1e-12, "n {n} t {t}");
        }
    }
}

#[test]
fn bezier_examples() {
    let cp = [Vector2::new(0.0, 0.0), Vector2::new(1.0, 2.0), Vector2::new(2.0, 0.0)];
    assert_eq!(bezier_point(&cp, 0.5), Vector2::new(1.0, 1.0));
    assert_eq!(bezier_point(&cp, 0.0), cp[0]);
    assert_eq!(bezier_point(&cp, 1.0), cp[2]);
    let same = [Vector2::new(0.3, -0.7); 3];
    for k in 0..=10 {
        let p = bezier_point(&same, k as f64 / 10.0);
        assert!((p - same[0]).norm() < 1e-15);
    }
}

proptest! {
    #[test]
    fn bernstein_matches_pascal(n in 0usize..=8, t in 0.0..=1.0f64, pick in 0usize..9) {
        let i = pick % (n + 1);
        let want = pascal(n, i) * t.powi(i as i32) * (1.0 - t).powi((n - i) as i32);
        prop_assert!((bernstein(n as u32, i as u32, t).unwrap() - want).abs() <= 1e-12);
    }

    #[test]
    fn partition_of_unity(n in 0u32..=8, t in 0.0..=1.0f64) {
        let sum: f64 = (0..=n).map(|i| bernstein(n, i, t).unwrap()).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn endpoints_interpolate_exactly(cp in prop::collection::vec(point(), 2..9)) {
        prop_assert_eq!(bezier_point(&cp, 0.0), cp[0]);
        prop_assert_eq!(bezier_point(&cp, 1.0), *cp.last().unwrap());
    }

    #[test]
    fn quadratic_midpoint_identity(p0 in point(), p1 in point(), p2 in point()) {
        let want = p0 * 0.25 + p1 * 0.5 + p2 * 0.25;
        prop_assert!((bezier_point(&[p0, p1, p2], 0.5) - want).norm() <= 1e-12);
    }

    #[test]
    fn matches_de_casteljau(cp in prop::collection::vec(point(), 2..9), t in 0.0..=1.0f64) {
        prop_assert!((bezier_point(&cp, t) - de_casteljau(&cp, t)).norm() <= 1e-10);
    }
}

fn goal_at(x: f64, y: f64) -> EePose {
    EePose::new(Vector2::new(x, y), 0.0, Gripper::Open)
}

fn empty_scene() -> SceneState {
    let mut s = Task::ReachTarget.scene(0);
    s.obstacles.clear();
    s.objects.clear();
    s.target = None;
    s
}

/// Exhaustive re-check of every contract a generated path carries.
fn assert_sound(scene: &SceneState, goal: &EePose, paths: &[Path], all_checked: bool) {
    for (k, p) in paths.iter().enumerate() {
        assert_eq!(p.first(), &scene.config, "path {k} does not start at the arm");
        let end = forward_kinematics(&scene.arm, p.last()).unwrap();
        assert!((end.position - goal.position).norm() <= 1e-4, "path {k} misses the goal");
        let colliding = p.configs().iter().filter(|q| check_collision(scene, q)).count();
        assert_eq!(p.in_collision, colliding > 0, "path {k} flag");
        if all_checked {
            assert_eq!(colliding, 0, "checked planner path {k} collides");
        }
    }
}

#[test]
fn empty_scene_plans_are_collision_free() {
    let scene = empty_scene();
    let goal = goal_at(0.6, -0.3);
    let paths = sample_plans(&scene, &goal, &PlannerConfig::default(), 3);
    assert!(!paths.is_empty() && paths.len() <= 20);
    assert!(paths.iter().all(|p| !p.in_collision && p.len() == 32));
    assert_sound(&scene, &goal, &paths, false);
}

#[test]
fn start_at_goal_gives_trivial_path() {
    let scene = empty_scene();
    let goal = forward_kinematics(&scene.arm, &scene.config).unwrap();
    let paths = sample_plans(&scene, &goal, &PlannerConfig { m: 4, ..PlannerConfig::default() }, 1);
    assert!(paths.iter().any(|p| p.cspace_length() < 1e-3));
}

#[test]
fn wall_splits_checked_and_unchecked_halves() {
    let mut scene = empty_scene();
    scene.obstacles.push(Obstacle::Segment {
        a: Vector2::new(0.45, 0.25),
        b: Vector2::new(0.45, 0.6),
    });
    // approached from below so the last link clears the wall
    let goal = EePose::new(Vector2::new(0.7, 0.3), std::f64::consts::FRAC_PI_2, Gripper::Open);
    let cfg = PlannerConfig::default();
    let paths = sample_plans(&scene, &goal, &cfg, 5);
    assert_sound(&scene, &goal, &paths, false);
    assert!(paths.len() <= cfg.m);
    let all = PlannerConfig {
        collision_free_fraction: 1.0,
        ..cfg
    };
    let routed = sample_plans(&scene, &goal, &all, 5);
    assert!(!routed.is_empty());
    assert_sound(&scene, &goal, &routed, true);
}

#[test]
fn bezier_limit_is_a_straight_segment() {
    let scene = empty_scene();
    let start = scene.ee_position();
    let goal = goal_at(0.6, 0.1);
    let cfg = BezierConfig {
        midpoint_std: 1e-9,
        b: 3,
        ..BezierConfig::default()
    };
    let paths = sample_beziers(&scene, &goal, &cfg, 2);
    assert!(!paths.is_empty());
    let chord = (goal.position - start).normalize();
    for p in &paths {
        for q in p.configs() {
            let e = scene.arm.ee_position(q).unwrap() - start;
            assert!((e.x * chord.y - e.y * chord.x).abs() <= 1e-6);
        }
    }
}

#[test]
fn boundary_goal_keeps_endpoint_contract() {
    let scene = empty_scene();
    let reach = scene.arm.reach();
    let goal = goal_at(reach - 1e-3, 0.0);
    let cfg = BezierConfig {
        midpoint_std: 0.8,
        ..BezierConfig::default()
    };
    let paths = sample_beziers(&scene, &goal, &cfg, 8);
    assert!(paths.len() <= cfg.b);
    assert_sound(&scene, &goal, &paths, false);
}

#[test]
fn samplers_are_seed_deterministic() {
    let scene = Task::OpenLid.scene(2);
    let goal = Task::OpenLid.goal(&scene, 0).unwrap();
    let plans = |s| sample_plans(&scene, &goal, &PlannerConfig::default(), s);
    let curves = |s| sample_beziers(&scene, &goal, &BezierConfig::default(), s);
    assert_eq!(plans(4), plans(4));
    assert_eq!(curves(4), curves(4));
    assert_ne!(curves(4), curves(5));
}

#[test]
fn generators_are_sound_on_task_scenes() {
    let planner = PlannerConfig::default();
    for (k, task) in Task::ALL.into_iter().cycle().take(24).enumerate() {
        let scene = task.scene(500 + k as u64);
        let goal = task.goal(&scene, 0).unwrap();
        let prepared = scene.prepared(goal.gripper);
        let plans = sample_plans(&prepared, &goal, &planner, k as u64);
        assert_sound(&prepared, &goal, &plans, false);
        let checked = PlannerConfig {
            collision_free_fraction: 1.0,
            m: 5,
            ..PlannerConfig::default()
        };
        assert_sound(&prepared, &goal, &sample_plans(&prepared, &goal, &checked, k as u64), true);
        let curves = sample_beziers(&prepared, &goal, &BezierConfig::default(), k as u64);
        assert!(curves.iter().all(|p| p.source == PathSource::Bezier));
        assert_sound(&prepared, &goal, &curves, false);
    }
}

#[test]
fn goal_ik_reaches_home_pose() {
    let arm = default_arm();
    let goal = forward_kinematics(&arm, &home_config()).unwrap();
    let q = inverse_kinematics(&arm, &goal, &home_config(), 0).unwrap();
    assert!((arm.ee_position(&q).unwrap() - goal.position).norm() <= 1e-4);
}
