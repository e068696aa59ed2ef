//! The outer training loop: demo ingestion, rollouts over ranked candidate
//! paths, interleaved ranker and policy updates, and greedy evaluation.

use std::fmt;
use std::fs;
use std::path::Path as FsPath;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{sample_beziers, sample_plans, BezierConfig, PlannerConfig};
use crate::kinematics::{EePose, Path, PathSource, DEFAULT_PATH_LEN};
use crate::nn::{adam_sections, find_section, load_adam, read_checkpoint, write_checkpoint, Adam, AdamState, Section};
use crate::policy::{validity_filter, PathPolicy, PolicyInput};
use crate::ranker::{select_path, RankRecord, RankerParams, RankerTrainer};
use crate::replay::{
    chain_episode, demo_augmentation, keyframe_discovery, save_demo, segment_transitions, ReplayBuffer, Transition,
};
use crate::world::{default_arm, execute_path, generate_demo, path_collides, SceneState, Task};

/// Scene seeds for training episodes start here, offset per run seed.
const TRAIN_SCENE_BASE: u64 = 1_000_000;
/// Scene seeds for evaluation start here; disjoint from training and demos.
const EVAL_SCENE_BASE: u64 = 9_000_000;
/// Demo seeds for run seed `s` are `s * DEMO_SEED_STRIDE + i`.
const DEMO_SEED_STRIDE: u64 = 1_000;
/// Demo seeds tried per requested demo before giving up.
const DEMO_ATTEMPTS_PER_DEMO: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Planner, curve, and policy candidates ranked by the learned Q-function.
    Lpr,
    /// As `Lpr` without the policy generator.
    NoPolicy,
    /// Shortest collision-free planner path, no learning.
    ShortestPath,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Lpr => "lpr",
            Mode::NoPolicy => "no_policy",
            Mode::ShortestPath => "shortest_path",
        }
    }

    pub fn learns(self) -> bool {
        self != Mode::ShortestPath
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [Mode::Lpr, Mode::NoPolicy, Mode::ShortestPath]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| "expected lpr, no_policy or shortest_path".to_string())
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether `ms_per_step` records wall time or a constant zero. Wall time is
/// the only nondeterministic column of the metrics file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timing {
    Wall,
    Off,
}

impl FromStr for Timing {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "wall" => Ok(Timing::Wall),
            "off" => Ok(Timing::Off),
            _ => Err("expected wall or off".into()),
        }
    }
}

impl fmt::Display for Timing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Timing::Wall => "wall",
            Timing::Off => "off",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub num_demos: usize,
    pub total_env_steps: usize,
    pub gradient_steps_per_env_step: usize,
    pub planner_paths: usize,
    pub collision_free_fraction: f64,
    pub bezier_curves: usize,
    pub midpoint_std: f64,
    pub path_len: usize,
    pub gamma: f64,
    pub tau: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: usize,
    pub policy_lr: f64,
    pub ranker_lr: f64,
    pub batch_size: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    pub goal_noise: f64,
    pub replay_capacity: usize,
    pub augment_stride: usize,
    pub timing: Timing,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::OpenDrawer,
            mode: Mode::Lpr,
            seeds: vec![0],
            num_demos: 10,
            total_env_steps: 2000,
            gradient_steps_per_env_step: 1,
            planner_paths: 20,
            collision_free_fraction: 0.5,
            bezier_curves: 20,
            midpoint_std: 0.2,
            path_len: DEFAULT_PATH_LEN,
            gamma: 0.99,
            tau: 0.005,
            epsilon_start: 0.2,
            epsilon_end: 0.02,
            epsilon_decay_steps: 1000,
            policy_lr: 1e-3,
            ranker_lr: 1e-3,
            batch_size: 64,
            eval_every: 200,
            eval_episodes: 20,
            eval_seed: 0,
            goal_noise: 0.0,
            replay_capacity: crate::replay::REPLAY_CAPACITY,
            augment_stride: crate::replay::AUGMENT_STRIDE,
            timing: Timing::Wall,
        }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| config_err(key, format!("cannot parse `{value}`: {e}")))
}

impl TrainConfig {
    pub fn planner(&self) -> PlannerConfig {
        PlannerConfig {
            m: self.planner_paths,
            collision_free_fraction: self.collision_free_fraction,
            path_len: self.path_len,
            ..PlannerConfig::default()
        }
    }

    pub fn bezier(&self) -> BezierConfig {
        BezierConfig {
            b: self.bezier_curves,
            midpoint_std: self.midpoint_std,
            path_len: self.path_len,
            ..BezierConfig::default()
        }
    }

    /// Linear anneal from `epsilon_start` to `epsilon_end`.
    pub fn epsilon_at(&self, step: usize) -> f64 {
        if self.epsilon_decay_steps == 0 || step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let frac = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_demos", self.num_demos),
            ("gradient_steps_per_env_step", self.gradient_steps_per_env_step),
            ("planner_paths", self.planner_paths),
            ("bezier_curves", self.bezier_curves),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("replay_capacity", self.replay_capacity),
            ("augment_stride", self.augment_stride),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(config_err(key, "must be positive"));
            }
        }
        if self.path_len < 2 {
            return Err(config_err("path_len", "must be at least 2"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "need at least one seed"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(config_err("gamma", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(config_err("tau", "must lie in [0, 1]"));
        }
        for (key, v) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(config_err(key, "must lie in [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.collision_free_fraction) {
            return Err(config_err("collision_free_fraction", "must lie in [0, 1]"));
        }
        for (key, v) in [
            ("midpoint_std", self.midpoint_std),
            ("policy_lr", self.policy_lr),
            ("ranker_lr", self.ranker_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(key, "must be positive"));
            }
        }
        if !(self.goal_noise >= 0.0 && self.goal_noise.is_finite()) {
            return Err(config_err("goal_noise", "must be non-negative"));
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(line, format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "task" => self.task = value.parse().map_err(|e: Error| config_err(key, e.to_string()))?,
            "mode" => self.mode = parse_value(key, value)?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| parse_value::<u64>(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "num_demos" => self.num_demos = parse_value(key, value)?,
            "total_env_steps" => self.total_env_steps = parse_value(key, value)?,
            "gradient_steps_per_env_step" => self.gradient_steps_per_env_step = parse_value(key, value)?,
            "planner_paths" => self.planner_paths = parse_value(key, value)?,
            "collision_free_fraction" => self.collision_free_fraction = parse_value(key, value)?,
            "bezier_curves" => self.bezier_curves = parse_value(key, value)?,
            "midpoint_std" => self.midpoint_std = parse_value(key, value)?,
            "path_len" => self.path_len = parse_value(key, value)?,
            "gamma" => self.gamma = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "epsilon_start" => self.epsilon_start = parse_value(key, value)?,
            "epsilon_end" => self.epsilon_end = parse_value(key, value)?,
            "epsilon_decay_steps" => self.epsilon_decay_steps = parse_value(key, value)?,
            "policy_lr" => self.policy_lr = parse_value(key, value)?,
            "ranker_lr" => self.ranker_lr = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "eval_episodes" => self.eval_episodes = parse_value(key, value)?,
            "eval_seed" => self.eval_seed = parse_value(key, value)?,
            "goal_noise" => self.goal_noise = parse_value(key, value)?,
            "replay_capacity" => self.replay_capacity = parse_value(key, value)?,
            "augment_stride" => self.augment_stride = parse_value(key, value)?,
            "timing" => self.timing = parse_value(key, value)?,
            _ => return Err(config_err(key, "unknown key")),
        }
        Ok(())
    }

    /// Every key, one per line, in a form `from_kv` reads back exactly.
    pub fn to_kv(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let pairs: Vec<(&str, String)> = vec![
            ("task", self.task.to_string()),
            ("mode", self.mode.to_string()),
            ("seeds", seeds.join(",")),
            ("num_demos", self.num_demos.to_string()),
            ("total_env_steps", self.total_env_steps.to_string()),
            ("gradient_steps_per_env_step", self.gradient_steps_per_env_step.to_string()),
            ("planner_paths", self.planner_paths.to_string()),
            ("collision_free_fraction", self.collision_free_fraction.to_string()),
            ("bezier_curves", self.bezier_curves.to_string()),
            ("midpoint_std", self.midpoint_std.to_string()),
            ("path_len", self.path_len.to_string()),
            ("gamma", self.gamma.to_string()),
            ("tau", self.tau.to_string()),
            ("epsilon_start", self.epsilon_start.to_string()),
            ("epsilon_end", self.epsilon_end.to_string()),
            ("epsilon_decay_steps", self.epsilon_decay_steps.to_string()),
            ("policy_lr", self.policy_lr.to_string()),
            ("ranker_lr", self.ranker_lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("eval_seed", self.eval_seed.to_string()),
            ("goal_noise", self.goal_noise.to_string()),
            ("replay_capacity", self.replay_capacity.to_string()),
            ("augment_stride", self.augment_stride.to_string()),
            ("timing", self.timing.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Policy, ranker, and their optimizers.
#[derive(Debug, Clone)]
pub struct Agent {
    pub policy: PathPolicy,
    pub policy_adam: Adam,
    pub policy_state: AdamState,
    pub ranker: RankerTrainer,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(cfg: &TrainConfig, rng: &mut R) -> Result<Self> {
        let dof = default_arm().dof();
        let policy = PathPolicy::new(dof, cfg.path_len, rng);
        let ranker = RankerTrainer::new(RankerParams::new(dof, rng), cfg.ranker_lr, cfg.gamma, cfg.tau)?;
        Ok(Agent {
            policy_state: AdamState::new(&policy),
            policy,
            policy_adam: Adam::with_lr(cfg.policy_lr),
            ranker,
        })
    }

    pub fn bc_step(&mut self, batch: &[(PolicyInput, Path)]) -> Result<f64> {
        let (loss, grads) = self.policy.bc_loss_and_grads(batch)?;
        self.policy_adam.step(&mut self.policy.net, &grads, &mut self.policy_state)?;
        Ok(loss)
    }

    fn sections(&self) -> Vec<Section> {
        let mut s = vec![Section::of("policy", &self.policy)];
        s.extend(adam_sections("policy.adam", &self.policy_state));
        s.push(Section::of("ranker.online", &self.ranker.online));
        s.push(Section::of("ranker.target", &self.ranker.target));
        s.extend(adam_sections("ranker.adam", &self.ranker.state));
        s
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &self.sections())?;
        fs::write(path, buf)?;
        Ok(())
    }

    /// Restores every network and optimizer moment; shapes come from `cfg`.
    pub fn load(path: &FsPath, cfg: &TrainConfig) -> Result<Self> {
        let bytes = fs::read(path)?;
        let sections = read_checkpoint(bytes.as_slice())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut agent = Agent::new(cfg, &mut rng)?;
        find_section(&sections, "policy")?.load_into(&mut agent.policy)?;
        agent.policy_state = load_adam(&sections, "policy.adam", &agent.policy)?;
        find_section(&sections, "ranker.online")?.load_into(&mut agent.ranker.online)?;
        find_section(&sections, "ranker.target")?.load_into(&mut agent.ranker.target)?;
        agent.ranker.state = load_adam(&sections, "ranker.adam", &agent.ranker.online)?;
        Ok(agent)
    }
}

/// Candidate set for one decision: planner paths, then curves, then the
/// policy path if it passes the validity filter.
pub fn build_candidates(
    cfg: &TrainConfig,
    agent: Option<&Agent>,
    scene: &SceneState,
    goal: &EePose,
    planner_seed: u64,
    curve_seed: u64,
) -> Result<Vec<Path>> {
    let mut out = sample_plans(scene, goal, &cfg.planner(), planner_seed);
    if cfg.mode == Mode::ShortestPath {
        return Ok(out);
    }
    out.extend(sample_beziers(scene, goal, &cfg.bezier(), curve_seed));
    if cfg.mode == Mode::Lpr {
        let agent = agent.ok_or_else(|| Error::InvalidArgument("lpr mode needs an agent".into()))?;
        let path = agent.policy.predict(&PolicyInput::new(scene.config.clone(), *goal))?;
        let flag = path_collides(scene, &path);
        let path = path.with_collision(flag);
        if validity_filter(&path, &out) {
            out.push(path);
        }
    }
    Ok(out)
}

/// Shortest collision-free planner path, else the shortest planner path.
pub fn shortest_planner_index(candidates: &[Path]) -> Option<usize> {
    let shortest = |free_only: bool| {
        candidates
            .iter()
            .enumerate()
            .filter(|(_, p)| p.source == PathSource::Planner && (!free_only || !p.in_collision))
            .min_by(|a, b| a.1.cspace_length().total_cmp(&b.1.cspace_length()))
            .map(|(i, _)| i)
    };
    shortest(true).or_else(|| shortest(false))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub stage: usize,
    pub goal: EePose,
    pub sources: Vec<PathSource>,
    /// Empty in shortest-path mode.
    pub q_values: Vec<f64>,
    pub chosen: Option<usize>,
    pub explored: bool,
    pub reward: f64,
    /// Wall time from goal query through execution.
    pub acting_secs: f64,
}

impl StepRecord {
    pub fn chosen_source(&self) -> Option<PathSource> {
        self.chosen.map(|i| self.sources[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub scene_seed: u64,
    pub success: bool,
    pub steps: Vec<StepRecord>,
    pub transitions: Vec<Transition>,
}

impl EpisodeRecord {
    /// Environment steps consumed; a failed generation still costs one.
    pub fn env_steps(&self) -> usize {
        self.steps.len().max(1)
    }

    pub fn rank_records(&self, episode: usize) -> Vec<RankRecord> {
        self.steps
            .iter()
            .filter_map(|s| {
                Some(RankRecord {
                    episode,
                    stage: s.stage,
                    sources: s.sources.clone(),
                    q_values: s.q_values.clone(),
                    chosen: s.chosen?,
                    explored: s.explored,
                    reward: s.reward,
                })
            })
            .collect()
    }
}

/// Rolls out one episode of at most `step_limit` stages.
pub fn run_episode<R: Rng + ?Sized>(
    cfg: &TrainConfig,
    agent: Option<&Agent>,
    scene_seed: u64,
    epsilon: f64,
    step_limit: usize,
    episode_id: u64,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    let task = cfg.task;
    if cfg.mode.learns() && agent.is_none() {
        return Err(Error::InvalidArgument(format!("{} mode needs an agent", cfg.mode)));
    }
    let mut scene = task.scene(scene_seed);
    let mut steps = Vec::new();
    let mut executed = Vec::new();
    let mut success = false;
    for stage in 0..task.max_steps().min(step_limit) {
        let started = Instant::now();
        let goal = task.noisy_goal(&scene, stage, cfg.goal_noise, rng)?;
        let prepared = scene.prepared(goal.gripper);
        let (planner_seed, curve_seed) = (rng.next_u64(), rng.next_u64());
        let candidates = build_candidates(cfg, agent, &prepared, &goal, planner_seed, curve_seed)?;
        let sources: Vec<PathSource> = candidates.iter().map(|p| p.source).collect();
        let pick = match (cfg.mode, agent) {
            _ if candidates.is_empty() => None,
            (Mode::ShortestPath, _) => shortest_planner_index(&candidates).map(|i| (i, Vec::new(), false)),
            (_, Some(agent)) => {
                let sel = select_path(&agent.ranker.online, &candidates, &goal, epsilon, rng)?;
                Some((sel.index, sel.q_values, sel.explored))
            }
            (_, None) => unreachable!("checked above"),
        };
        let Some((index, q_values, explored)) = pick else {
            steps.push(StepRecord {
                stage,
                goal,
                sources,
                q_values: Vec::new(),
                chosen: None,
                explored: false,
                reward: 0.0,
                acting_secs: started.elapsed().as_secs_f64(),
            });
            break;
        };
        let path = candidates[index].clone();
        let out = execute_path(task, &scene, &path, goal.gripper);
        steps.push(StepRecord {
            stage,
            goal,
            sources,
            q_values,
            chosen: Some(index),
            explored,
            reward: out.reward,
            acting_secs: started.elapsed().as_secs_f64(),
        });
        executed.push((scene.clone(), goal, path, out.reward, out.scene.clone()));
        scene = out.scene;
        if out.done {
            success = true;
            break;
        }
    }
    Ok(EpisodeRecord {
        scene_seed,
        success,
        steps,
        transitions: chain_episode(executed, episode_id),
    })
}

/// Outcome of a batch of greedy episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalResult {
    pub fn success_rate(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().filter(|e| e.success).count() as f64 / self.episodes.len() as f64
    }

    /// Fraction of executed paths that came from `source`.
    pub fn chosen_fraction(&self, source: PathSource) -> f64 {
        let chosen: Vec<PathSource> = self
            .episodes
            .iter()
            .flat_map(|e| e.steps.iter().filter_map(StepRecord::chosen_source))
            .collect();
        if chosen.is_empty() {
            return 0.0;
        }
        chosen.iter().filter(|&&s| s == source).count() as f64 / chosen.len() as f64
    }

    pub fn mean_acting_ms(&self) -> f64 {
        let times: Vec<f64> = self
            .episodes
            .iter()
            .flat_map(|e| e.steps.iter().map(|s| s.acting_secs))
            .collect();
        if times.is_empty() {
            return 0.0;
        }
        1e3 * times.iter().sum::<f64>() / times.len() as f64
    }
}

pub fn eval_scene_seed(seed: u64, k: usize) -> u64 {
    EVAL_SCENE_BASE + seed * 10_000 + k as u64
}

/// Greedy episodes on held-out scenes.
pub fn evaluate(cfg: &TrainConfig, agent: Option<&Agent>, n_episodes: usize, seed: u64) -> Result<EvalResult> {
    let mut episodes = Vec::with_capacity(n_episodes);
    for k in 0..n_episodes {
        let scene_seed = eval_scene_seed(seed, k);
        let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
        episodes.push(run_episode(cfg, agent, scene_seed, 0.0, usize::MAX, k as u64, &mut rng)?);
    }
    Ok(EvalResult { episodes })
}

/// One row of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub step: usize,
    pub success_rate: f64,
    pub policy_chosen_frac: f64,
    pub frac_planner: f64,
    pub frac_bezier: f64,
    pub td_loss: f64,
    pub bc_loss: f64,
    pub ms_per_step: f64,
}

pub const METRICS_COLUMNS: [&str; 8] = [
    "step",
    "success_rate",
    "policy_chosen_frac",
    "frac_planner",
    "frac_bezier",
    "td_loss",
    "bc_loss",
    "ms_per_step",
];

pub fn write_metrics_csv(path: &FsPath, rows: &[Metrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    if rows.is_empty() {
        w.write_record(METRICS_COLUMNS).map_err(|e| Error::Io(e.into()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

/// Demo transitions: chained keyframe segments plus their augmentations.
pub fn ingest_demos(cfg: &TrainConfig, seed: u64, buffer: &mut ReplayBuffer, demo_dir: Option<&FsPath>) -> Result<Vec<u64>> {
    let mut used = Vec::new();
    let attempts = cfg.num_demos * DEMO_ATTEMPTS_PER_DEMO;
    let mut last_err = None;
    for i in 0..attempts as u64 {
        if used.len() == cfg.num_demos {
            break;
        }
        let demo_seed = seed * DEMO_SEED_STRIDE + i;
        let demo = match generate_demo(cfg.task, demo_seed, cfg.path_len) {
            Ok(d) => d,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let episode_id = u64::MAX - used.len() as u64;
        let segments = keyframe_discovery(&demo)?;
        let base = segment_transitions(cfg.task, &segments, cfg.path_len, episode_id)?;
        let succeeded = base.last().is_some_and(|t| t.reward == 1.0);
        buffer.push_episode(base, succeeded)?;
        for t in demo_augmentation(cfg.task, &segments, cfg.augment_stride, cfg.path_len, episode_id)? {
            buffer.push(t)?;
        }
        if let Some(dir) = demo_dir {
            save_demo(&demo, &dir.join(format!("demo_{:03}.json", used.len())))?;
        }
        used.push(demo_seed);
    }
    if used.len() < cfg.num_demos {
        return Err(last_err.unwrap_or_else(|| Error::InvalidArgument("no demos generated".into())));
    }
    Ok(used)
}

#[derive(Debug)]
pub struct RunOutput {
    pub metrics: Vec<Metrics>,
    pub agent: Option<Agent>,
    pub demo_seeds: Vec<u64>,
}

impl RunOutput {
    pub fn final_success(&self) -> f64 {
        self.metrics.last().map(|m| m.success_rate).unwrap_or(0.0)
    }
}

fn mean_or_nan(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Trains one seed. With `out_dir`, writes `metrics.csv`, `checkpoint.bin`
/// (overwritten at every evaluation), and `demos/`.
pub fn train(cfg: &TrainConfig, seed: u64, out_dir: Option<&FsPath>) -> Result<RunOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = if cfg.mode.learns() {
        Some(Agent::new(cfg, &mut rng)?)
    } else {
        None
    };
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let demo_dir = match out_dir {
        Some(d) => {
            let dd = d.join("demos");
            fs::create_dir_all(&dd)?;
            Some(dd)
        }
        None => None,
    };
    let demo_seeds = if cfg.mode.learns() {
        ingest_demos(cfg, seed, &mut buffer, demo_dir.as_deref())?
    } else {
        Vec::new()
    };

    let mut metrics = Vec::new();
    let mut td_losses = Vec::new();
    let mut bc_losses = Vec::new();
    let mut record = |step: usize, agent: Option<&Agent>, td: &mut Vec<f64>, bc: &mut Vec<f64>| -> Result<()> {
        let eval = evaluate(cfg, agent, cfg.eval_episodes, cfg.eval_seed)?;
        metrics.push(Metrics {
            step,
            success_rate: eval.success_rate(),
            policy_chosen_frac: eval.chosen_fraction(PathSource::Policy),
            frac_planner: eval.chosen_fraction(PathSource::Planner),
            frac_bezier: eval.chosen_fraction(PathSource::Bezier),
            td_loss: mean_or_nan(td),
            bc_loss: mean_or_nan(bc),
            ms_per_step: match cfg.timing {
                Timing::Wall => eval.mean_acting_ms(),
                Timing::Off => 0.0,
            },
        });
        td.clear();
        bc.clear();
        if let Some(dir) = out_dir {
            write_metrics_csv(&dir.join("metrics.csv"), &metrics)?;
            if let Some(a) = agent {
                a.save(&dir.join("checkpoint.bin"))?;
            }
        }
        Ok(())
    };
    record(0, agent.as_ref(), &mut td_losses, &mut bc_losses)?;

    let mut env_steps = 0;
    let mut episode = 0u64;
    let mut next_eval = cfg.eval_every;
    while env_steps < cfg.total_env_steps {
        let scene_seed = TRAIN_SCENE_BASE + seed * 100_000 + episode;
        let remaining = cfg.total_env_steps - env_steps;
        let ep = run_episode(
            cfg,
            agent.as_ref(),
            scene_seed,
            cfg.epsilon_at(env_steps),
            remaining,
            episode,
            &mut rng,
        )?;
        let used = ep.env_steps().min(remaining);
        if let Some(agent) = agent.as_mut() {
            buffer.push_episode(ep.transitions, ep.success)?;
            for _ in 0..used * cfg.gradient_steps_per_env_step {
                if buffer.len() >= cfg.batch_size {
                    let batch = buffer.sample_batch(cfg.batch_size, &mut rng)?;
                    td_losses.push(agent.ranker.train_step(&batch)?);
                }
                if cfg.mode == Mode::Lpr {
                    if let Ok(pairs) = buffer.sample_success_paths(cfg.batch_size, &mut rng) {
                        bc_losses.push(agent.bc_step(&pairs)?);
                    }
                }
            }
        }
        env_steps += used;
        episode += 1;
        if env_steps >= next_eval || env_steps == cfg.total_env_steps {
            record(env_steps, agent.as_ref(), &mut td_losses, &mut bc_losses)?;
            while next_eval <= env_steps {
                next_eval += cfg.eval_every;
            }
        }
    }
    Ok(RunOutput {
        metrics,
        agent,
        demo_seeds,
    })
}

/// Mean acting wall time per environment step over `n_steps` greedy steps on
/// held-out scenes.
pub fn measure_step_ms(cfg: &TrainConfig, agent: Option<&Agent>, n_steps: usize, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    let mut k = 0;
    while count < n_steps {
        let scene_seed = eval_scene_seed(seed, k);
        let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
        let ep = run_episode(cfg, agent, scene_seed, 0.0, n_steps - count, k as u64, &mut rng)?;
        for s in &ep.steps {
            total += s.acting_secs;
            count += 1;
        }
        if ep.steps.is_empty() {
            count += 1;
        }
        k += 1;
    }
    Ok(1e3 * total / count as f64)
}
