//! Transition storage, keyframe discovery, demo augmentation, and the demo
//! file format.

use std::collections::VecDeque;
use std::fs;
use std::path::Path as FsPath;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, normalize_path, EePose, Gripper, JointConfig, Path, PathSource};
use crate::policy::PolicyInput;
use crate::world::{execute_path, Demo, SceneState, Task};

pub const REPLAY_CAPACITY: usize = 100_000;
pub const AUGMENT_STRIDE: usize = 4;
/// End-effector displacement per waypoint below which the arm counts as resting.
pub const KEYFRAME_SPEED: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub scene: SceneState,
    pub goal: EePose,
    pub reward: f64,
    pub next_scene: SceneState,
    pub executed_path: Path,
    pub next_executed_path: Option<Path>,
    /// Goal the successor path was selected for; present iff the successor is.
    pub next_goal: Option<EePose>,
    pub terminal: bool,
    pub episode_id: u64,
    pub episode_succeeded: bool,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        if self.reward != 0.0 && self.reward != 1.0 {
            return Err(Error::MalformedTransition(format!("reward {} is not 0 or 1", self.reward)));
        }
        match (self.terminal, &self.next_executed_path, &self.next_goal) {
            (true, None, None) | (false, Some(_), Some(_)) => Ok(()),
            (true, _, _) => Err(Error::MalformedTransition("terminal transition carries a successor".into())),
            (false, _, _) => Err(Error::MalformedTransition("non-terminal transition lacks a successor".into())),
        }
    }

    pub fn policy_pair(&self) -> (PolicyInput, Path) {
        (
            PolicyInput::new(self.scene.config.clone(), self.goal),
            self.executed_path.clone(),
        )
    }
}

/// Links consecutive steps of one episode: each transition's successor is the
/// next one's executed path, the last is terminal.
pub fn chain_episode(steps: Vec<(SceneState, EePose, Path, f64, SceneState)>, episode_id: u64) -> Vec<Transition> {
    let succeeded = steps.last().is_some_and(|s| s.3 == 1.0);
    let mut out: Vec<Transition> = Vec::with_capacity(steps.len());
    for (scene, goal, path, reward, next_scene) in steps {
        if let Some(prev) = out.last_mut() {
            prev.terminal = false;
            prev.next_executed_path = Some(path.clone());
            prev.next_goal = Some(goal);
        }
        out.push(Transition {
            scene,
            goal,
            reward,
            next_scene,
            executed_path: path,
            next_executed_path: None,
            next_goal: None,
            terminal: true,
            episode_id,
            episode_succeeded: succeeded,
        });
    }
    out
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        ReplayBuffer {
            capacity,
            items: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        t.validate()?;
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    /// Stores a finished episode, tagging every transition with its outcome.
    pub fn push_episode(&mut self, mut episode: Vec<Transition>, succeeded: bool) -> Result<()> {
        for t in &mut episode {
            t.episode_succeeded = succeeded;
            t.validate()?;
        }
        for t in episode {
            self.push(t)?;
        }
        Ok(())
    }

    /// Uniform draws with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.items.is_empty() {
            return Err(Error::NoEligible);
        }
        Ok((0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }

    /// Uniform draws over transitions from successful episodes only.
    pub fn sample_success_paths<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<(PolicyInput, Path)>> {
        let eligible: Vec<&Transition> = self.items.iter().filter(|t| t.episode_succeeded).collect();
        if eligible.is_empty() {
            return Err(Error::NoEligible);
        }
        Ok((0..n)
            .map(|_| eligible[rng.random_range(0..eligible.len())].policy_pair())
            .collect())
    }
}

/// A demo stretch between two keyframes.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Scene before the first waypoint executes.
    pub scene: SceneState,
    pub waypoints: Vec<JointConfig>,
    pub gripper: Gripper,
    /// Pose at the closing keyframe, carrying this segment's gripper action.
    pub goal: EePose,
}

/// Splits a successful demo at gripper toggles, resting points, and the final
/// waypoint.
pub fn keyframe_discovery(demo: &Demo) -> Result<Vec<Segment>> {
    let first = demo
        .steps
        .first()
        .ok_or_else(|| Error::InvalidArgument("demo has no steps".into()))?;
    let mut waypoints: Vec<JointConfig> = Vec::new();
    let mut grips: Vec<Gripper> = Vec::new();
    for step in &demo.steps {
        let skip = usize::from(!waypoints.is_empty());
        for q in step.path.configs().iter().skip(skip) {
            waypoints.push(q.clone());
            grips.push(step.goal.gripper);
        }
    }
    let arm = &first.scene.arm;
    let ee: Vec<_> = waypoints
        .iter()
        .map(|q| arm.ee_position(q))
        .collect::<Result<_>>()?;
    let last = waypoints.len() - 1;
    let mut keys = Vec::new();
    let mut resting = false;
    for i in 1..=last {
        if grips[i] != grips[i - 1] {
            keys.push(i - 1);
        }
        let slow = (ee[i] - ee[i - 1]).norm() < KEYFRAME_SPEED;
        if slow && !resting && !(i..=last).all(|k| (ee[k] - ee[k - 1]).norm() < KEYFRAME_SPEED) {
            keys.push(i);
        }
        resting = slow;
    }
    keys.push(last);
    keys.sort_unstable();
    keys.dedup();
    keys.retain(|&k| k > 0);

    let mut segments = Vec::with_capacity(keys.len());
    let mut scene = first.scene.clone();
    let mut from = 0;
    for &k in &keys {
        let gripper = grips[(from + 1).min(k)];
        let wps = waypoints[from..=k].to_vec();
        let mut goal = forward_kinematics(arm, &waypoints[k])?;
        goal.gripper = gripper;
        let path = Path::new(wps.clone(), PathSource::Demo);
        let next = execute_path(demo.task, &scene, &path, gripper).scene;
        segments.push(Segment {
            scene,
            waypoints: wps,
            gripper,
            goal,
        });
        scene = next;
        from = k;
    }
    Ok(segments)
}

/// One transition per segment, normalized to `path_len`, chained as an episode.
pub fn segment_transitions(task: Task, segments: &[Segment], path_len: usize, episode_id: u64) -> Result<Vec<Transition>> {
    let mut steps = Vec::with_capacity(segments.len());
    for seg in segments {
        let raw = Path::new(seg.waypoints.clone(), PathSource::Demo);
        let path = normalize_path(&raw, path_len)?;
        let out = execute_path(task, &seg.scene, &path, seg.gripper);
        steps.push((seg.scene.clone(), seg.goal, path, out.reward, out.scene));
    }
    Ok(chain_episode(steps, episode_id))
}

/// Extra transitions starting partway into each segment: waypoints
/// `1, 1 + stride, ...` short of the keyframe, each aiming at the segment's
/// keyframe with the remaining sub-path. A stride at least the segment length
/// adds nothing.
pub fn demo_augmentation(
    task: Task,
    segments: &[Segment],
    stride: usize,
    path_len: usize,
    episode_id: u64,
) -> Result<Vec<Transition>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let base = segment_transitions(task, segments, path_len, episode_id)?;
    let mut out = Vec::new();
    for (seg, parent) in segments.iter().zip(&base) {
        let len = seg.waypoints.len();
        if stride >= len {
            continue;
        }
        for start in (1..len - 1).step_by(stride) {
            let prefix = Path::new(seg.waypoints[..=start].to_vec(), PathSource::Demo);
            let scene = execute_path(task, &seg.scene, &prefix, seg.gripper).scene;
            let raw = Path::new(seg.waypoints[start..].to_vec(), PathSource::Demo);
            let path = normalize_path(&raw, path_len)?;
            let after = execute_path(task, &scene, &path, seg.gripper);
            out.push(Transition {
                scene,
                goal: seg.goal,
                reward: after.reward,
                next_scene: after.scene,
                executed_path: path,
                next_executed_path: parent.next_executed_path.clone(),
                next_goal: parent.next_goal,
                terminal: parent.terminal,
                episode_id,
                episode_succeeded: true,
            });
        }
    }
    Ok(out)
}

/// Demo file schema version.
pub const DEMO_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct DemoFile {
    version: u32,
    #[serde(flatten)]
    demo: Demo,
}

pub fn save_demo(demo: &Demo, path: &FsPath) -> Result<()> {
    let file = DemoFile {
        version: DEMO_FORMAT_VERSION,
        demo: demo.clone(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_demo(path: &FsPath) -> Result<Demo> {
    let file: DemoFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if file.version != DEMO_FORMAT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "demo file version {} (expected {DEMO_FORMAT_VERSION})",
            file.version
        )));
    }
    Ok(file.demo)
}

/// Re-executes a demo from its stored initial scene; returns the final reward.
pub fn replay_demo(demo: &Demo) -> f64 {
    let mut scene = demo.initial_scene().clone();
    let mut reward = 0.0;
    for step in &demo.steps {
        let out = execute_path(demo.task, &scene, &step.path, step.goal.gripper);
        reward = out.reward;
        scene = out.scene;
        if out.done {
            break;
        }
    }
    reward
}
