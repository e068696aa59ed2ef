//! Sample-based candidate path generators: an RRT-Connect planner toward IK
//! goal configurations and quadratic Bézier curves in the workspace.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    config_distance, inverse_kinematics, normalize_angle, normalize_path, ArmSpec, EePose,
    JointConfig, Path, PathSource, Vec2, DEFAULT_PATH_LEN,
};
use crate::world::{check_collision, path_collides, SceneState};

/// Resolution at which planner edges are collision checked (radians).
const EDGE_RESOLUTION: f64 = 0.02;

/// Largest joint-space jump tolerated between consecutive traced waypoints.
const MAX_TRACE_JUMP: f64 = 0.6;

const BEZIER_DENSE_SAMPLES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub m: usize,
    pub collision_free_fraction: f64,
    pub step_size: f64,
    pub max_iterations: usize,
    pub goal_ik_attempts: usize,
    pub shortcut_attempts: usize,
    pub path_len: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            m: 20,
            collision_free_fraction: 0.5,
            step_size: 0.1,
            max_iterations: 2000,
            goal_ik_attempts: 10,
            shortcut_attempts: 50,
            path_len: DEFAULT_PATH_LEN,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidArgument("M must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.collision_free_fraction) {
            return Err(Error::InvalidArgument("collision_free_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn checked_count(&self) -> usize {
        ((self.collision_free_fraction * self.m as f64).ceil() as usize).min(self.m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BezierConfig {
    pub b: usize,
    /// Standard deviation of the middle control point per axis, in meters,
    /// for a start-goal distance of 1 m. It scales with that distance,
    /// clamped to `[0.5, 1.5]`.
    pub midpoint_std: f64,
    pub control_points: usize,
    pub path_len: usize,
}

impl Default for BezierConfig {
    fn default() -> Self {
        Self {
            b: 20,
            midpoint_std: 0.2,
            control_points: 3,
            path_len: DEFAULT_PATH_LEN,
        }
    }
}

impl BezierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(Error::InvalidArgument("B must be >= 1".into()));
        }
        if !(self.midpoint_std > 0.0) {
            return Err(Error::InvalidArgument("midpoint_std must be positive".into()));
        }
        if self.control_points != 3 {
            return Err(Error::InvalidArgument("only quadratic curves are supported".into()));
        }
        Ok(())
    }
}

fn binomial(n: u32, i: u32) -> f64 {
    let i = i.min(n - i);
    (0..i).fold(1.0, |acc, k| acc * (n - k) as f64 / (k + 1) as f64)
}

/// `C(n, i) t^i (1 - t)^(n - i)`.
pub fn bernstein(n: u32, i: u32, t: f64) -> Result<f64> {
    if i > n {
        return Err(Error::InvalidArgument(format!("bernstein index {i} > degree {n}")));
    }
    Ok(binomial(n, i) * t.powi(i as i32) * (1.0 - t).powi((n - i) as i32))
}

pub fn bezier_point(control_points: &[Vec2], t: f64) -> Vec2 {
    let n = control_points.len().saturating_sub(1) as u32;
    control_points
        .iter()
        .enumerate()
        .fold(Vec2::zeros(), |acc, (i, p)| {
            acc + p * bernstein(n, i as u32, t).expect("index within degree")
        })
}

/// Samples `n` points spaced uniformly by arc length along the curve.
pub fn bezier_arclength_points(control_points: &[Vec2], n: usize) -> Vec<(f64, Vec2)> {
    let dense: Vec<Vec2> = (0..=BEZIER_DENSE_SAMPLES)
        .map(|k| bezier_point(control_points, k as f64 / BEZIER_DENSE_SAMPLES as f64))
        .collect();
    let mut cum = vec![0.0];
    for w in dense.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let frac = k as f64 / (n - 1) as f64;
        if k == 0 || total == 0.0 {
            out.push((frac, if k + 1 == n { dense[BEZIER_DENSE_SAMPLES] } else { dense[0] }));
            continue;
        }
        if k + 1 == n {
            out.push((1.0, *control_points.last().unwrap()));
            continue;
        }
        let s = total * frac;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let span = cum[seg + 1] - cum[seg];
        let local = if span > 0.0 { (s - cum[seg]) / span } else { 0.0 };
        let t = (seg as f64 + local) / BEZIER_DENSE_SAMPLES as f64;
        out.push((frac, bezier_point(control_points, t)));
    }
    out
}

/// Converts workspace waypoints to joint configurations, seeding each IK
/// solve with the previous solution. The first waypoint is taken to be the
/// arm's current pose and maps to `start` exactly.
pub fn trace_waypoints(
    arm: &ArmSpec,
    start: &JointConfig,
    waypoints: &[EePose],
    rng_seed: u64,
) -> Option<Vec<JointConfig>> {
    let mut configs = Vec::with_capacity(waypoints.len());
    configs.push(start.clone());
    for (k, wp) in waypoints.iter().enumerate().skip(1) {
        let prev = configs.last().unwrap();
        let q = inverse_kinematics(arm, wp, prev, rng_seed.wrapping_add(k as u64)).ok()?;
        if config_distance(prev, &q).ok()? > MAX_TRACE_JUMP {
            return None;
        }
        configs.push(q);
    }
    Some(configs)
}

/// Motion-planning generator: up to `cfg.m` paths from the current
/// configuration to distinct IK solutions of `goal`.
///
/// The first `checked_count()` paths are planned with collision checking and
/// never contain a colliding configuration; the rest ignore the scene and carry
/// a post-hoc collision flag.
pub fn sample_plans(scene: &SceneState, goal: &EePose, cfg: &PlannerConfig, rng_seed: u64) -> Vec<Path> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let start = &scene.config;
    let start_at_goal = scene
        .arm
        .ee_position(start)
        .map(|p| (p - goal.position).norm() <= 1e-4)
        .unwrap_or(false);
    let n_checked = cfg.checked_count();
    let mut out = Vec::with_capacity(cfg.m);
    for k in 0..cfg.m {
        let checked = k < n_checked;
        let mut sub = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let goal_q = if k == 0 && start_at_goal && (!checked || !check_collision(scene, start)) {
            Some(start.clone())
        } else {
            sample_goal_config(scene, goal, cfg, checked, &mut sub)
        };
        let Some(goal_q) = goal_q else { continue };
        let Some(raw) = plan(scene, start, &goal_q, cfg, checked, &mut sub) else {
            continue;
        };
        let raw = Path::new(raw, PathSource::Planner);
        let Ok(mut path) = normalize_path(&raw, cfg.path_len) else {
            continue;
        };
        path.in_collision = path_collides(scene, &path);
        if checked && path.in_collision {
            continue;
        }
        out.push(path);
    }
    out
}

fn sample_goal_config(
    scene: &SceneState,
    goal: &EePose,
    cfg: &PlannerConfig,
    checked: bool,
    rng: &mut ChaCha8Rng,
) -> Option<JointConfig> {
    for _ in 0..cfg.goal_ik_attempts.max(1) {
        let seed_q = scene.arm.random_config(rng);
        let Ok(q) = inverse_kinematics(&scene.arm, goal, &seed_q, rng.next_u64()) else {
            continue;
        };
        if !checked || !check_collision(scene, &q) {
            return Some(q);
        }
    }
    None
}

struct Tree {
    nodes: Vec<JointConfig>,
    parents: Vec<usize>,
}

impl Tree {
    fn new(root: JointConfig) -> Self {
        Self {
            nodes: vec![root],
            parents: vec![usize::MAX],
        }
    }

    fn nearest(&self, q: &JointConfig) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = sq_dist(n, q);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    fn push(&mut self, q: JointConfig, parent: usize) -> usize {
        self.nodes.push(q);
        self.parents.push(parent);
        self.nodes.len() - 1
    }

    fn trace(&self, mut i: usize) -> Vec<JointConfig> {
        let mut out = Vec::new();
        while i != usize::MAX {
            out.push(self.nodes[i].clone());
            i = self.parents[i];
        }
        out
    }
}

fn sq_dist(a: &JointConfig, b: &JointConfig) -> f64 {
    a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum()
}

enum Extend {
    Reached(usize),
    Advanced(usize),
    Trapped,
}

struct Planner<'a> {
    scene: &'a SceneState,
    checked: bool,
    step: f64,
}

impl Planner<'_> {
    fn valid(&self, q: &JointConfig) -> bool {
        !self.checked || !check_collision(self.scene, q)
    }

    fn edge_valid(&self, a: &JointConfig, b: &JointConfig) -> bool {
        if !self.checked {
            return true;
        }
        let d = sq_dist(a, b).sqrt();
        let n = (d / EDGE_RESOLUTION).ceil().max(1.0) as usize;
        (1..=n).all(|k| self.valid(&a.lerp(b, k as f64 / n as f64)))
    }

    fn extend(&self, tree: &mut Tree, target: &JointConfig) -> Extend {
        let near = tree.nearest(target);
        let from = &tree.nodes[near];
        let d = sq_dist(from, target).sqrt();
        let (q, reached) = if d <= self.step {
            (target.clone(), true)
        } else {
            (from.lerp(target, self.step / d), false)
        };
        if !self.edge_valid(from, &q) {
            return Extend::Trapped;
        }
        let id = tree.push(q, near);
        if reached {
            Extend::Reached(id)
        } else {
            Extend::Advanced(id)
        }
    }

    fn connect(&self, tree: &mut Tree, target: &JointConfig) -> Option<usize> {
        loop {
            match self.extend(tree, target) {
                Extend::Reached(id) => return Some(id),
                Extend::Advanced(_) => continue,
                Extend::Trapped => return None,
            }
        }
    }
}

/// RRT-Connect followed by greedy shortcutting. Returns the raw waypoint list.
fn plan(
    scene: &SceneState,
    start: &JointConfig,
    goal: &JointConfig,
    cfg: &PlannerConfig,
    checked: bool,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<JointConfig>> {
    let planner = Planner {
        scene,
        checked,
        step: cfg.step_size,
    };
    if !planner.valid(start) || !planner.valid(goal) {
        return None;
    }
    if planner.edge_valid(start, goal) {
        return Some(vec![start.clone(), goal.clone()]);
    }
    let mut a = Tree::new(start.clone());
    let mut b = Tree::new(goal.clone());
    let mut a_is_start = true;
    let mut found = None;
    for _ in 0..cfg.max_iterations {
        let q_rand = scene.arm.random_config(rng);
        let new_id = match planner.extend(&mut a, &q_rand) {
            Extend::Reached(id) | Extend::Advanced(id) => id,
            Extend::Trapped => {
                std::mem::swap(&mut a, &mut b);
                a_is_start = !a_is_start;
                continue;
            }
        };
        let q_new = a.nodes[new_id].clone();
        if let Some(other) = planner.connect(&mut b, &q_new) {
            found = Some((new_id, other));
            break;
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    let (ia, ib) = found?;
    let (start_tree, start_id, goal_tree, goal_id) = if a_is_start {
        (&a, ia, &b, ib)
    } else {
        (&b, ib, &a, ia)
    };
    let mut path = start_tree.trace(start_id);
    path.reverse();
    let mut tail = goal_tree.trace(goal_id);
    // both trees end at the shared junction config
    tail.remove(0);
    path.extend(tail);
    shortcut(&planner, &mut path, cfg.shortcut_attempts, rng);
    Some(path)
}

fn shortcut(planner: &Planner<'_>, path: &mut Vec<JointConfig>, attempts: usize, rng: &mut ChaCha8Rng) {
    for _ in 0..attempts {
        if path.len() < 3 {
            return;
        }
        let i = rng.random_range(0..path.len() - 2);
        let j = rng.random_range(i + 2..path.len());
        if planner.edge_valid(&path[i], &path[j]) {
            path.drain(i + 1..j);
        }
    }
}

/// Bézier generator: up to `cfg.b` end-effector curves from the current pose
/// to `goal`, each traced through IK.
///
/// Curve waypoints are taken uniformly in workspace arc length, giving exactly
/// `path_len` configurations whose end-effector positions lie on the curve.
pub fn sample_beziers(scene: &SceneState, goal: &EePose, cfg: &BezierConfig, rng_seed: u64) -> Vec<Path> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let start = scene.ee_pose();
    let p0 = start.position;
    let p2 = goal.position;
    let spread = cfg.midpoint_std * (p2 - p0).norm().clamp(0.5, 1.5);
    let normal = Normal::new(0.0, spread).expect("positive std");
    let dth = normalize_angle(goal.orientation - start.orientation);
    let mut out = Vec::with_capacity(cfg.b);
    for _ in 0..cfg.b {
        let mid = (p0 + p2) * 0.5 + Vec2::new(normal.sample(&mut rng), normal.sample(&mut rng));
        let ik_seed = rng.next_u64();
        let ctrl = [p0, mid, p2];
        let waypoints: Vec<EePose> = bezier_arclength_points(&ctrl, cfg.path_len)
            .into_iter()
            .map(|(frac, p)| EePose::new(p, start.orientation + dth * frac, goal.gripper))
            .collect();
        let Some(configs) = trace_waypoints(&scene.arm, &scene.config, &waypoints, ik_seed) else {
            continue;
        };
        let mut path = Path::new(configs, PathSource::Bezier);
        path.in_collision = path_collides(scene, &path);
        out.push(path);
    }
    out
}
