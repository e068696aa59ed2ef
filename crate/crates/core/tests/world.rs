use lpr_core::generators::trace_waypoints;
use lpr_core::kinematics::{EePose, Gripper, JointConfig, Path, PathSource, Vec2};
use lpr_core::replay::replay_demo;
use lpr_core::world::{
    check_collision, execute_path, generate_demo, JointKind, Obstacle, SceneState, Task, GRASP_RADIUS,
};
use nalgebra::{Rotation2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const T: usize = 32;

/// Scene with the arm holding the first object's handle, as the scripted
/// demo leaves it after its approach stage.
fn grasped(task: Task, seed: u64) -> SceneState {
    let mut scene = generate_demo(task, seed, T).unwrap().steps[1].scene.clone();
    scene.apply_gripper(Gripper::Closed);
    assert_eq!(scene.attached, Some(0), "{task} seed {seed} not grasped");
    scene
}

fn traced(scene: &SceneState, points: &[Vec2], heading: impl Fn(usize) -> f64) -> Path {
    let poses: Vec<EePose> = points
        .iter()
        .enumerate()
        .map(|(k, &p)| EePose::new(p, heading(k), Gripper::Closed))
        .collect();
    let configs = trace_waypoints(&scene.arm, &scene.config, &poses, 1).expect("traceable");
    Path::new(configs, PathSource::Demo)
}

fn lid_geometry(scene: &SceneState) -> (Vec2, Vec2, f64) {
    let obj = &scene.objects[0];
    let JointKind::Revolute { pivot } = obj.kind else { panic!("lid") };
    (pivot, obj.handle().unwrap(), obj.success_threshold)
}

#[test]
fn lid_follows_arc_but_breaks_on_chord() {
    for seed in 0..5 {
        let scene = grasped(Task::OpenLid, seed);
        let (pivot, handle, angle) = lid_geometry(&scene);
        let start_heading = scene.ee_pose().orientation;
        let arm_of = handle - pivot;
        let arc: Vec<Vec2> = (0..T)
            .map(|k| pivot + Rotation2::new(angle * k as f64 / (T - 1) as f64) * arm_of)
            .collect();
        let step = |k: usize| start_heading + angle * k as f64 / (T - 1) as f64;
        let out = execute_path(Task::OpenLid, &scene, &traced(&scene, &arc, step), Gripper::Closed);
        assert!(out.done, "seed {seed}: arc did not open the lid");
        assert!((out.scene.objects[0].joint_value - angle).abs() < 1e-3);
        assert_eq!(out.scene.attached, Some(0));

        // the chord strays from the arc by its sagitta
        let sagitta = arm_of.norm() * (1.0 - (angle / 2.0).cos());
        assert!(sagitta > GRASP_RADIUS);
        let end = arc[T - 1];
        let chord: Vec<Vec2> = (0..T).map(|k| handle + (end - handle) * (k as f64 / (T - 1) as f64)).collect();
        let out = execute_path(Task::OpenLid, &scene, &traced(&scene, &chord, step), Gripper::Closed);
        assert!(!out.done, "seed {seed}: chord opened the lid");
        assert_eq!(out.scene.attached, None);
        assert!(out.scene.objects[0].joint_value < angle);
    }
}

#[test]
fn drawer_tracks_axis_projection() {
    for seed in 0..5 {
        let scene = grasped(Task::OpenDrawer, seed);
        let obj = &scene.objects[0];
        let JointKind::Prismatic { axis, .. } = obj.kind else { panic!("drawer") };
        let side = Vector2::new(-axis.y, axis.x);
        let handle = obj.handle().unwrap();
        let heading = scene.ee_pose().orientation;
        // a slight sideways drift stays within the grasp
        let end = handle + axis * 0.3 + side * 0.02;
        let line: Vec<Vec2> = (0..T).map(|k| handle + (end - handle) * (k as f64 / (T - 1) as f64)).collect();
        let out = execute_path(Task::OpenDrawer, &scene, &traced(&scene, &line, |_| heading), Gripper::Closed);
        let reached = out.scene.ee_position();
        let want = (reached - handle).dot(&axis);
        assert!((out.scene.objects[0].joint_value - want).abs() < 1e-9);
        assert!((want - 0.3).abs() < 1e-3);
        assert!(!out.done);

        // pulling across the axis tears the handle loose
        let end = handle + side * 0.15;
        let line: Vec<Vec2> = (0..T).map(|k| handle + (end - handle) * (k as f64 / (T - 1) as f64)).collect();
        let out = execute_path(Task::OpenDrawer, &scene, &traced(&scene, &line, |_| heading), Gripper::Closed);
        assert_eq!(out.scene.attached, None);
        assert!(out.scene.objects[0].joint_value.abs() < 0.05);
    }
}

fn bare_scene() -> SceneState {
    let mut s = Task::ReachTarget.scene(0);
    s.obstacles.clear();
    s.objects.clear();
    s
}

/// Closest approach of any arm link to `c`, by dense sampling along each link.
fn sampled_clearance(scene: &SceneState, q: &JointConfig, c: Vec2) -> f64 {
    let pts = scene.arm.joint_positions(q).unwrap();
    let mut best = f64::INFINITY;
    for w in pts.windows(2) {
        for k in 0..=2000 {
            let p = w[0] + (w[1] - w[0]) * (k as f64 / 2000.0);
            best = best.min((p - c).norm());
        }
    }
    best
}

#[test]
fn collision_matches_sampled_clearance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut scene = bare_scene();
    let mut hits = 0;
    for _ in 0..400 {
        let center = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let radius = rng.random_range(0.05..0.3);
        let q = scene.arm.random_config(&mut rng);
        let clearance = sampled_clearance(&scene, &q, center);
        if (clearance - radius).abs() < 1e-3 {
            continue;
        }
        scene.obstacles = vec![Obstacle::Circle { center, radius }];
        assert_eq!(check_collision(&scene, &q), clearance < radius);
        hits += (clearance < radius) as usize;
    }
    assert!(hits > 20);
}

#[test]
fn empty_scene_never_collides_and_base_circle_always_does() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut scene = bare_scene();
    for _ in 0..200 {
        let q = scene.arm.random_config(&mut rng);
        assert!(!check_collision(&scene, &q));
    }
    scene.obstacles.push(Obstacle::Circle {
        center: Vector2::new(0.02, -0.01),
        radius: 0.1,
    });
    for _ in 0..200 {
        let q = scene.arm.random_config(&mut rng);
        assert!(check_collision(&scene, &q));
    }
}

#[test]
fn obstacle_contact_truncates_execution() {
    let mut scene = bare_scene();
    let a = JointConfig(scene.config.0.clone());
    let mut b = a.clone();
    b.0[0] -= 1.2;
    let configs: Vec<JointConfig> = (0..T)
        .map(|k| {
            let t = k as f64 / (T - 1) as f64;
            JointConfig(a.0.iter().zip(&b.0).map(|(x, y)| x + (y - x) * t).collect())
        })
        .collect();
    // a post on the swept arc of the first link's tip
    let blocker = Rotation2::new(a.0[0] - 0.6) * Vector2::new(0.5, 0.0);
    scene.obstacles.push(Obstacle::Circle {
        center: blocker,
        radius: 0.03,
    });
    let path = Path::new(configs.clone(), PathSource::Planner);
    let out = execute_path(Task::ReachTarget, &scene, &path, Gripper::Open);
    let first_hit = configs.iter().position(|q| check_collision(&scene, q)).unwrap();
    assert_eq!(out.executed, first_hit);
    assert_eq!(out.scene.config, configs[first_hit - 1]);
}

#[test]
fn demos_replay_for_every_task() {
    for task in Task::ALL {
        for seed in 0..3 {
            let demo = generate_demo(task, seed, T).unwrap();
            assert!(demo.succeeded());
            assert!(!demo.steps.is_empty() && demo.steps.len() <= task.num_stages());
            assert!(demo.steps.iter().all(|s| s.path.len() == T));
            assert_eq!(replay_demo(&demo), 1.0, "{task} seed {seed}");
        }
    }
}

#[test]
fn lid_demo_second_stage_is_an_arc() {
    let demo = generate_demo(Task::OpenLid, 3, T).unwrap();
    assert_eq!(demo.steps.len(), 2);
    let stage = &demo.steps[1];
    let (pivot, _, _) = lid_geometry(&stage.scene);
    let radii: Vec<f64> = stage
        .path
        .configs()
        .iter()
        .map(|q| (stage.scene.arm.ee_position(q).unwrap() - pivot).norm())
        .collect();
    let r0 = radii[0];
    assert!(radii.iter().all(|r| (r - r0).abs() < 1e-3), "{radii:?}");
}

#[test]
fn ten_demos_are_distinct() {
    let demos: Vec<_> = (0..10).map(|s| generate_demo(Task::OpenLid, s, T).unwrap()).collect();
    for i in 0..demos.len() {
        for j in i + 1..demos.len() {
            assert_ne!(demos[i].initial_scene(), demos[j].initial_scene());
        }
    }
}

#[test]
fn scenes_are_seeded() {
    for task in Task::ALL {
        assert_eq!(task.scene(4), task.scene(4));
        assert_ne!(task.scene(4), task.scene(5));
        let s = task.scene(4);
        assert!(!check_collision(&s, &s.config));
        assert!(!task.success(&s));
    }
}
