//! Deterministic planar manipulation environment.
//!
//! A scene holds the arm, static obstacles (which stop motion) and object
//! bodies (which the arm may touch). Articulated objects follow the end
//! effector while grasped; free blocks are pushed by it.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::Rotation2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{self, PlannerConfig};
use crate::kinematics::{
    forward_kinematics, inverse_kinematics, normalize_angle, ArmSpec, EePose, Gripper, JointConfig, Path, PathSource,
    Vec2,
};

/// End-effector distance within which a closed gripper grabs a handle, and
/// beyond which a held handle slips out.
pub const GRASP_RADIUS: f64 = 0.05;

/// Joint-value slack when testing an articulated object against its threshold.
pub const SUCCESS_SLACK: f64 = 0.01;

pub const REACH_TOLERANCE: f64 = 0.02;
pub const PUSH_TOLERANCE: f64 = 0.05;
/// Gap between a free block's surface and its pushing handle.
pub const PUSH_STANDOFF: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Obstacle {
    Circle { center: Vec2, radius: f64 },
    Segment { a: Vec2, b: Vec2 },
}

impl Obstacle {
    fn hits_segment(&self, p: Vec2, q: Vec2) -> bool {
        match *self {
            Obstacle::Circle { center, radius } => point_segment_distance(center, p, q) < radius,
            Obstacle::Segment { a, b } => segments_intersect(p, q, a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JointKind {
    /// Drawer: the front slides along the unit `axis`; `half_width` is the
    /// half-length of the front panel.
    Prismatic { axis: Vec2, half_width: f64 },
    /// Lid: a panel from `pivot` to `anchor`, rotated counter-clockwise by the
    /// joint value.
    Revolute { pivot: Vec2 },
    /// Block: a disc of `radius` centred at `anchor`, moved by pushing.
    Free { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedObject {
    pub kind: JointKind,
    /// Prismatic: front centre at joint value 0. Revolute: panel tip at joint
    /// value 0. Free: current centre.
    pub anchor: Vec2,
    pub joint_value: f64,
    pub joint_range: (f64, f64),
    /// Handle position relative to the anchor at joint value 0.
    pub handle_offset: Vec2,
    pub success_threshold: f64,
}

enum Body {
    Segment(Vec2, Vec2),
    Disc(Vec2, f64),
}

impl ArticulatedObject {
    pub fn handle_at(&self, value: f64) -> Option<Vec2> {
        match self.kind {
            JointKind::Prismatic { axis, .. } => Some(self.anchor + self.handle_offset + axis * value),
            JointKind::Revolute { pivot } => {
                Some(pivot + Rotation2::new(value) * (self.anchor + self.handle_offset - pivot))
            }
            JointKind::Free { .. } => Some(self.anchor + self.handle_offset),
        }
    }

    pub fn handle(&self) -> Option<Vec2> {
        self.handle_at(self.joint_value)
    }

    fn body(&self) -> Body {
        match self.kind {
            JointKind::Prismatic { axis, half_width } => {
                let c = self.anchor + axis * self.joint_value;
                let perp = Vec2::new(-axis.y, axis.x) * half_width;
                Body::Segment(c - perp, c + perp)
            }
            JointKind::Revolute { pivot } => {
                let tip = pivot + Rotation2::new(self.joint_value) * (self.anchor - pivot);
                Body::Segment(pivot, tip)
            }
            JointKind::Free { radius } => Body::Disc(self.anchor, radius),
        }
    }

    fn body_hits_segment(&self, p: Vec2, q: Vec2) -> bool {
        match self.body() {
            Body::Segment(a, b) => segments_intersect(p, q, a, b),
            Body::Disc(c, r) => point_segment_distance(c, p, q) < r,
        }
    }

    /// Joint value implied by an end-effector position and its distance from
    /// the constraint curve at that (clamped) value.
    fn project(&self, ee: Vec2) -> Option<(f64, f64)> {
        let (lo, hi) = self.joint_range;
        let value = match self.kind {
            JointKind::Prismatic { axis, .. } => (ee - self.anchor - self.handle_offset).dot(&axis),
            JointKind::Revolute { pivot } => {
                let rest = self.anchor + self.handle_offset - pivot;
                let cur = ee - pivot;
                let rel = normalize_angle(cur.y.atan2(cur.x) - rest.y.atan2(rest.x));
                // unwrap around the current value so a lid near pi does not jump
                let near = self.joint_value + normalize_angle(rel - self.joint_value);
                near
            }
            JointKind::Free { .. } => return None,
        };
        let value = value.clamp(lo, hi);
        let deviation = (ee - self.handle_at(value)?).norm();
        Some((value, deviation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub arm: ArmSpec,
    pub config: JointConfig,
    pub gripper: Gripper,
    pub obstacles: Vec<Obstacle>,
    pub objects: Vec<ArticulatedObject>,
    /// Index into `objects` of the grasped object.
    pub attached: Option<usize>,
    /// Goal marker for reaching and pushing tasks.
    pub target: Option<Vec2>,
}

impl SceneState {
    pub fn ee_pose(&self) -> EePose {
        let mut p = forward_kinematics(&self.arm, &self.config).expect("scene config matches arm");
        p.gripper = self.gripper;
        p
    }

    pub fn ee_position(&self) -> Vec2 {
        self.arm.ee_position(&self.config).expect("scene config matches arm")
    }

    /// Sets the gripper: opening releases, closing grasps the nearest handle
    /// within the grasp radius if nothing is held.
    pub fn apply_gripper(&mut self, gripper: Gripper) {
        self.gripper = gripper;
        match gripper {
            Gripper::Open => self.attached = None,
            Gripper::Closed if self.attached.is_none() => {
                let ee = self.ee_position();
                self.attached = self
                    .objects
                    .iter()
                    .enumerate()
                    .filter_map(|(i, o)| o.handle().map(|h| (i, (h - ee).norm())))
                    .filter(|&(_, d)| d <= GRASP_RADIUS)
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(i, _)| i);
            }
            Gripper::Closed => {}
        }
    }

    /// Copy with the goal's gripper action applied, as seen by the generators.
    pub fn prepared(&self, gripper: Gripper) -> SceneState {
        let mut s = self.clone();
        s.apply_gripper(gripper);
        s
    }

    fn hits_obstacle(&self, q: &JointConfig) -> bool {
        let pts = match self.arm.joint_positions(q) {
            Ok(p) => p,
            Err(_) => return true,
        };
        pts.windows(2)
            .any(|l| self.obstacles.iter().any(|o| o.hits_segment(l[0], l[1])))
    }

    fn hits_object(&self, q: &JointConfig) -> bool {
        let pts = match self.arm.joint_positions(q) {
            Ok(p) => p,
            Err(_) => return true,
        };
        self.objects.iter().enumerate().any(|(i, obj)| {
            Some(i) != self.attached && pts.windows(2).any(|l| obj.body_hits_segment(l[0], l[1]))
        })
    }
}

/// True iff any link segment meets an obstacle or a non-attached object body.
pub fn check_collision(scene: &SceneState, q: &JointConfig) -> bool {
    scene.hits_obstacle(q) || scene.hits_object(q)
}

pub fn path_collides(scene: &SceneState, path: &Path) -> bool {
    path.configs().iter().any(|q| check_collision(scene, q))
}

/// Outcome of running one path.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub scene: SceneState,
    pub reward: f64,
    pub done: bool,
    /// Number of path configs actually reached (truncated on obstacle contact).
    pub executed: usize,
}

/// Runs `path` open loop from the scene's current configuration.
///
/// The gripper action applies at the start of the path. Contact with a
/// static obstacle stops the arm at the last free configuration.
pub fn execute_path(task: Task, scene: &SceneState, path: &Path, gripper: Gripper) -> StepOutcome {
    let mut s = scene.clone();
    debug_assert!(path
        .configs()
        .first()
        .map(|c| crate::kinematics::config_distance(c, &s.config).unwrap_or(1.0) < 1e-6)
        .unwrap_or(true));
    s.apply_gripper(gripper);
    let mut executed = 1;
    for q in path.configs().iter().skip(1) {
        if s.hits_obstacle(q) {
            break;
        }
        s.config = q.clone();
        executed += 1;
        let ee = s.ee_position();
        if let Some(i) = s.attached {
            let obj = &mut s.objects[i];
            if let JointKind::Free { .. } = obj.kind {
                obj.anchor = ee - obj.handle_offset;
            } else {
                match obj.project(ee) {
                    Some((value, dev)) if dev <= GRASP_RADIUS => obj.joint_value = value,
                    _ => s.attached = None,
                }
            }
        }
        for (i, obj) in s.objects.iter_mut().enumerate() {
            if s.attached == Some(i) {
                continue;
            }
            if let JointKind::Free { radius } = obj.kind {
                let delta = obj.anchor - ee;
                let dist = delta.norm();
                if dist < radius {
                    let dir = if dist > 1e-12 {
                        delta / dist
                    } else {
                        Vec2::new(1.0, 0.0)
                    };
                    obj.anchor = ee + dir * radius;
                }
            }
        }
    }
    let success = task.success(&s);
    StepOutcome {
        scene: s,
        reward: if success { 1.0 } else { 0.0 },
        done: success,
        executed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ReachTarget,
    PushBlock,
    OpenDrawer,
    OpenLid,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

/// Arm shared by every task: three links, base at the origin.
pub fn default_arm() -> ArmSpec {
    ArmSpec::new(
        vec![0.5, 0.4, 0.3],
        Vec2::zeros(),
        vec![(-PI, PI), (-2.8, 2.8), (-2.8, 2.8)],
    )
    .expect("valid arm")
}

pub fn home_config() -> JointConfig {
    JointConfig(vec![2.2, -1.6, -1.2])
}

const SCENE_ATTEMPTS: usize = 200;
const GOAL_IK_PROBES: u64 = 8;

impl Task {
    pub const ALL: [Task; 4] = [Task::ReachTarget, Task::PushBlock, Task::OpenDrawer, Task::OpenLid];

    pub fn name(self) -> &'static str {
        match self {
            Task::ReachTarget => "reach_target",
            Task::PushBlock => "push_block",
            Task::OpenDrawer => "open_drawer",
            Task::OpenLid => "open_lid",
        }
    }

    pub fn num_stages(self) -> usize {
        match self {
            Task::ReachTarget => 1,
            _ => 2,
        }
    }

    /// Environment steps per episode.
    pub fn max_steps(self) -> usize {
        self.num_stages()
    }

    pub fn success(self, scene: &SceneState) -> bool {
        match self {
            Task::ReachTarget => scene
                .target
                .map(|t| (scene.ee_position() - t).norm() <= REACH_TOLERANCE)
                .unwrap_or(false),
            Task::PushBlock => match (scene.target, scene.objects.first()) {
                (Some(t), Some(b)) => (b.anchor - t).norm() <= PUSH_TOLERANCE,
                _ => false,
            },
            Task::OpenDrawer | Task::OpenLid => scene
                .objects
                .first()
                .map(|o| o.joint_value >= o.success_threshold - SUCCESS_SLACK)
                .unwrap_or(false),
        }
    }

    /// Seeded randomized initial scene. Object layouts are drawn in a
    /// canonical frame and then rotated about the arm base.
    pub fn scene(self, seed: u64) -> SceneState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (self as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut last = None;
        for _ in 0..SCENE_ATTEMPTS {
            let s = self.sample_scene(&mut rng);
            if self.scene_is_valid(&s) {
                return s;
            }
            last = Some(s);
        }
        last.expect("at least one attempt")
    }

    fn sample_scene(self, rng: &mut ChaCha8Rng) -> SceneState {
        let arm = default_arm();
        let spin = rng.random_range(-0.4..0.4);
        let rot = Rotation2::new(spin);
        let mut scene = SceneState {
            arm,
            config: home_config(),
            gripper: Gripper::Open,
            obstacles: Vec::new(),
            objects: Vec::new(),
            attached: None,
            target: None,
        };
        match self {
            Task::ReachTarget => {
                let rho = rng.random_range(0.6..0.95);
                let alpha: f64 = rng.random_range(-0.5..0.5);
                let target = rot * Vec2::new(rho * alpha.cos(), rho * alpha.sin());
                let home = scene.ee_position();
                let mid = (home + target) * 0.5;
                let chord = target - home;
                let normal = Vec2::new(-chord.y, chord.x).normalize();
                let center = mid + normal * rng.random_range(-0.08..0.08);
                scene.obstacles.push(Obstacle::Circle {
                    center,
                    radius: rng.random_range(0.06..0.09),
                });
                scene.target = Some(target);
            }
            Task::PushBlock => {
                let rho = rng.random_range(0.55..0.75);
                let alpha: f64 = rng.random_range(-0.4..0.4);
                let dir = rot * Vec2::new(alpha.cos(), alpha.sin());
                scene.objects.push(ArticulatedObject {
                    kind: JointKind::Free { radius: 0.04 },
                    anchor: dir * rho,
                    joint_value: 0.0,
                    joint_range: (0.0, 0.0),
                    handle_offset: -dir * (0.04 + PUSH_STANDOFF),
                    success_threshold: PUSH_TOLERANCE,
                });
                scene.target = Some(dir * (rho + 0.2));
            }
            Task::OpenDrawer => {
                let x = rng.random_range(0.35..0.45);
                let y = rng.random_range(-0.35..-0.25);
                let axis = rot * Vec2::new(0.0, 1.0);
                scene.objects.push(ArticulatedObject {
                    kind: JointKind::Prismatic {
                        axis,
                        half_width: 0.1,
                    },
                    anchor: rot * Vec2::new(x, y),
                    joint_value: 0.0,
                    joint_range: (0.0, 0.55),
                    handle_offset: axis * 0.04,
                    success_threshold: 0.5,
                });
            }
            Task::OpenLid => {
                let px = rng.random_range(0.85..0.95);
                let py = rng.random_range(-0.05..0.05);
                let pivot = rot * Vec2::new(px, py);
                let dir = rot * Vec2::new(-1.0, 0.0);
                let normal = rot * Vec2::new(0.0, -1.0);
                scene.objects.push(ArticulatedObject {
                    kind: JointKind::Revolute { pivot },
                    anchor: pivot + dir * 0.4,
                    joint_value: 0.0,
                    joint_range: (0.0, FRAC_PI_2),
                    handle_offset: -dir * 0.05 + normal * 0.03,
                    success_threshold: 1.2,
                });
            }
        }
        scene
    }

    fn scene_is_valid(self, scene: &SceneState) -> bool {
        if check_collision(scene, &scene.config) || self.success(scene) {
            return false;
        }
        let reach = scene.arm.reach() - 0.05;
        (0..self.num_stages()).all(|stage| {
            self.goal(scene, stage)
                .map(|g| (g.position - scene.arm.base()).norm() < reach)
                .unwrap_or(false)
        }) && match self {
            Task::ReachTarget => {
                let t = scene.target.unwrap();
                let clear = scene.obstacles.iter().all(|o| match *o {
                    Obstacle::Circle { center, radius } => (center - t).norm() > radius + 0.12,
                    _ => true,
                });
                clear && self.goal(scene, 0).is_ok_and(|g| {
                    (0..GOAL_IK_PROBES).any(|k| {
                        inverse_kinematics(&scene.arm, &g, &scene.config, k)
                            .is_ok_and(|q| !check_collision(scene, &q))
                    })
                })
            }
            _ => true,
        }
    }

    /// Scripted next-best pose for `stage`, computed from current geometry.
    pub fn goal(self, scene: &SceneState, stage: usize) -> Result<EePose> {
        if stage >= self.num_stages() {
            return Err(Error::StageOutOfRange {
                stage,
                stages: self.num_stages(),
            });
        }
        let missing = || Error::InvalidArgument(format!("{self} scene is missing its object"));
        let pose = match self {
            Task::ReachTarget => {
                let t = scene.target.ok_or_else(missing)?;
                let d = t - scene.arm.base();
                EePose::new(t, d.y.atan2(d.x), Gripper::Open)
            }
            Task::PushBlock => {
                let t = scene.target.ok_or_else(missing)?;
                let block = scene.objects.first().ok_or_else(missing)?;
                let back = -block.handle_offset;
                let heading = back.y.atan2(back.x);
                if stage == 0 {
                    EePose::new(block.anchor + block.handle_offset, heading, Gripper::Open)
                } else {
                    EePose::new(t + block.handle_offset, heading, Gripper::Closed)
                }
            }
            Task::OpenDrawer => {
                let obj = scene.objects.first().ok_or_else(missing)?;
                let axis = match obj.kind {
                    JointKind::Prismatic { axis, .. } => axis,
                    _ => return Err(missing()),
                };
                let heading = (-axis.y).atan2(-axis.x);
                let handle = obj.handle().ok_or_else(missing)?;
                if stage == 0 {
                    EePose::new(handle, heading, Gripper::Open)
                } else {
                    EePose::new(handle + axis * obj.success_threshold, heading, Gripper::Closed)
                }
            }
            Task::OpenLid => {
                let obj = scene.objects.first().ok_or_else(missing)?;
                let pivot = match obj.kind {
                    JointKind::Revolute { pivot } => pivot,
                    _ => return Err(missing()),
                };
                let handle = obj.handle().ok_or_else(missing)?;
                // approach against the panel normal on the handle side
                let tip = pivot + Rotation2::new(obj.joint_value) * (obj.anchor - pivot);
                let along = (tip - pivot).normalize();
                let normal = if along.perp(&(handle - pivot)) >= 0.0 {
                    Vec2::new(-along.y, along.x)
                } else {
                    Vec2::new(along.y, -along.x)
                };
                let heading = (-normal.y).atan2(-normal.x);
                if stage == 0 {
                    EePose::new(handle, heading, Gripper::Open)
                } else {
                    let opened = pivot + Rotation2::new(obj.success_threshold) * (handle - pivot);
                    EePose::new(opened, heading + obj.success_threshold, Gripper::Closed)
                }
            }
        };
        Ok(pose)
    }

    /// Goal with optional additive position noise.
    pub fn noisy_goal<R: Rng + ?Sized>(
        self,
        scene: &SceneState,
        stage: usize,
        noise_std: f64,
        rng: &mut R,
    ) -> Result<EePose> {
        let mut g = self.goal(scene, stage)?;
        if noise_std > 0.0 {
            let n = Normal::new(0.0, noise_std).expect("positive std");
            g.position += Vec2::new(n.sample(rng), n.sample(rng));
        }
        Ok(g)
    }
}

/// One executed stage of a scripted demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoStep {
    pub scene: SceneState,
    pub goal: EePose,
    pub path: Path,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demo {
    pub task: Task,
    pub seed: u64,
    pub steps: Vec<DemoStep>,
}

impl Demo {
    pub fn initial_scene(&self) -> &SceneState {
        &self.steps[0].scene
    }

    pub fn succeeded(&self) -> bool {
        self.steps.last().map(|s| s.reward == 1.0).unwrap_or(false)
    }
}

/// Scripted expert rollout: planner paths for free-space approaches, exact
/// lines and arcs for constrained motion.
pub fn generate_demo(task: Task, seed: u64, path_len: usize) -> Result<Demo> {
    let mut reason = String::from("scripted rollout did not reach success");
    let steps = demo_from(task, seed, path_len, task.scene(seed), 0, &mut reason)?;
    let demo = Demo { task, seed, steps };
    if !demo.succeeded() {
        return Err(Error::DemoFailed {
            task: task.name().to_string(),
            seed,
            reason,
        });
    }
    Ok(demo)
}

/// Depth-first scripted rollout: unconstrained stages try collision-free
/// planner paths shortest first until the remaining stages succeed.
fn demo_from(
    task: Task,
    seed: u64,
    path_len: usize,
    scene: SceneState,
    stage: usize,
    reason: &mut String,
) -> Result<Vec<DemoStep>> {
    let goal = task.goal(&scene, stage)?;
    let constrained = stage == 1 && matches!(task, Task::OpenDrawer | Task::OpenLid);
    let candidates = if constrained {
        let waypoints = expert_waypoints(task, &scene, &goal, path_len)?;
        match generators::trace_waypoints(&scene.arm, &scene.config, &waypoints, seed) {
            Some(configs) => vec![Path::new(configs, PathSource::Demo)],
            None => {
                *reason = format!("IK failed while tracing stage {stage}");
                Vec::new()
            }
        }
    } else {
        let cfg = PlannerConfig {
            path_len,
            ..PlannerConfig::default()
        };
        let mut plans: Vec<Path> = generators::sample_plans(&scene.prepared(goal.gripper), &goal, &cfg, seed.wrapping_add(stage as u64))
            .into_iter()
            .filter(|p| !p.in_collision)
            .collect();
        if plans.is_empty() {
            *reason = format!("no collision-free plan for stage {stage}");
        }
        plans.sort_by(|a, b| a.cspace_length().total_cmp(&b.cspace_length()));
        plans
            .into_iter()
            .map(|p| Path::new(p.into_configs(), PathSource::Demo))
            .collect()
    };
    for path in candidates {
        let flag = path_collides(&scene.prepared(goal.gripper), &path);
        let path = path.with_collision(flag);
        let out = execute_path(task, &scene, &path, goal.gripper);
        let step = DemoStep {
            scene: scene.clone(),
            goal,
            path,
            reward: out.reward,
        };
        if out.done {
            return Ok(vec![step]);
        }
        if stage + 1 < task.num_stages() {
            let rest = demo_from(task, seed, path_len, out.scene, stage + 1, reason)?;
            if rest.last().is_some_and(|s| s.reward > 0.0) {
                let mut steps = vec![step];
                steps.extend(rest);
                return Ok(steps);
            }
        }
    }
    Ok(Vec::new())
}

fn expert_waypoints(task: Task, scene: &SceneState, goal: &EePose, n: usize) -> Result<Vec<EePose>> {
    let start = scene.ee_pose();
    let mut out = Vec::with_capacity(n);
    match task {
        Task::OpenLid => {
            let obj = &scene.objects[0];
            let pivot = match obj.kind {
                JointKind::Revolute { pivot } => pivot,
                _ => unreachable!(),
            };
            let from = obj.handle().unwrap();
            for k in 0..n {
                let t = k as f64 / (n - 1) as f64;
                let angle = obj.success_threshold * t;
                let p = pivot + Rotation2::new(angle) * (from - pivot);
                out.push(EePose::new(p, start.orientation + angle, goal.gripper));
            }
        }
        _ => {
            let dth = normalize_angle(goal.orientation - start.orientation);
            for k in 0..n {
                let t = k as f64 / (n - 1) as f64;
                let p = start.position + (goal.position - start.position) * t;
                out.push(EePose::new(p, start.orientation + dth * t, goal.gripper));
            }
        }
    }
    Ok(out)
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

pub fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = (p2 - p1).perp(&(q1 - p1));
    let d2 = (p2 - p1).perp(&(q2 - p1));
    let d3 = (q2 - q1).perp(&(p1 - q1));
    let d4 = (q2 - q1).perp(&(p2 - q1));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    const EPS: f64 = 1e-12;
    point_segment_distance(q1, p1, p2) < EPS
        || point_segment_distance(q2, p1, p2) < EPS
        || point_segment_distance(p1, q1, q2) < EPS
        || point_segment_distance(p2, q1, q2) < EPS
}
