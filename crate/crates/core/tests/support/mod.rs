//! Independent oracles shared by the integration tests and the acceptance
//! runner.
#![allow(dead_code)]

use lpr_core::kinematics::{EePose, Gripper, JointConfig, Path, PathSource};
use lpr_core::nn::Layered;
use lpr_core::policy::{PathPolicy, PolicyInput};
use lpr_core::ranker::{RankerParams, RankerTrainer};
use lpr_core::replay::Transition;
use lpr_core::world::Task;
use nalgebra::Vector2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Differences within this many multiples of the central difference's
/// rounding noise, `eps * |f| / h`, are not resolvable and count as a match.
pub const FD_NOISE_MULTIPLE: f64 = 10.0;

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub checked: usize,
    /// Coordinates sitting on a ReLU or max-pool kink.
    pub skipped: usize,
    pub max_rel: f64,
    /// `(flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, f64, f64)>,
}

impl GradReport {
    pub fn merge(&mut self, other: &GradReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.max_rel > self.max_rel {
            self.max_rel = other.max_rel;
            self.worst = other.worst;
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel <= FD_REL_TOL && self.skipped * 100 <= self.checked
    }
}

fn param_mut(net: &mut impl Layered, mut index: usize) -> &mut f64 {
    for layer in net.layers_mut() {
        let nw = layer.weights.len();
        if index < nw {
            return &mut layer.weights.as_slice_mut().expect("standard layout")[index];
        }
        index -= nw;
        let nb = layer.biases.len();
        if index < nb {
            return &mut layer.biases[index];
        }
        index -= nb;
    }
    panic!("parameter index out of range")
}

/// Central differences of `loss` at the flat coordinates `indices`, compared
/// with `analytic`. Along one coordinate the loss of a ReLU net is piecewise
/// quadratic, so a mismatching coordinate whose fourth difference over `2h`
/// is nonzero straddles a kink and is skipped rather than failed.
pub fn check_gradient<N: Layered + Clone>(
    net: &N,
    analytic: &impl Layered,
    loss: impl Fn(&N) -> f64,
    indices: &[usize],
) -> GradReport {
    let grads = analytic.to_flat();
    let f0 = loss(net);
    let mut probe = net.clone();
    let mut at = |i: usize, delta: f64| {
        let orig = *param_mut(&mut probe, i);
        *param_mut(&mut probe, i) = orig + delta;
        let f = loss(&probe);
        *param_mut(&mut probe, i) = orig;
        f
    };
    let mut report = GradReport::default();
    for &i in indices {
        let fp = at(i, FD_STEP);
        let fm = at(i, -FD_STEP);
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let a = grads[i];
        let scale = f0.abs().max(fp.abs()).max(fm.abs());
        let noise = FD_NOISE_MULTIPLE * f64::EPSILON * scale / FD_STEP;
        let rel = (a - numeric).abs() / (a.abs().max(numeric.abs()) + noise / FD_REL_TOL);
        if rel > FD_REL_TOL {
            let fpp = at(i, 2.0 * FD_STEP);
            let fmm = at(i, -2.0 * FD_STEP);
            let fourth = fpp - 4.0 * fp + 6.0 * f0 - 4.0 * fm + fmm;
            if fourth.abs() > 16.0 * f64::EPSILON * scale * FD_NOISE_MULTIPLE {
                report.skipped += 1;
                continue;
            }
        }
        report.checked += 1;
        if rel > report.max_rel || report.worst.is_none() {
            report.max_rel = report.max_rel.max(rel);
            report.worst = Some((i, a, numeric));
        }
    }
    report
}

/// Up to `per_weights` weight and `per_biases` bias coordinates from every
/// layer, drawn without replacement.
pub fn stratified_indices<R: Rng>(net: &impl Layered, per_weights: usize, per_biases: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::new();
    let mut offset = 0;
    for layer in net.layers() {
        let nw = layer.weights.len();
        let nb = layer.biases.len();
        let mut w: Vec<usize> = (0..nw).collect();
        w.shuffle(rng);
        out.extend(w.into_iter().take(per_weights).map(|k| offset + k));
        let mut b: Vec<usize> = (0..nb).collect();
        b.shuffle(rng);
        out.extend(b.into_iter().take(per_biases).map(|k| offset + nw + k));
        offset += nw + nb;
    }
    out
}

pub fn random_config<R: Rng>(rng: &mut R, d: usize) -> JointConfig {
    JointConfig((0..d).map(|_| rng.random_range(-2.5..2.5)).collect())
}

pub fn random_goal<R: Rng>(rng: &mut R) -> EePose {
    let grip = if rng.random::<bool>() { Gripper::Open } else { Gripper::Closed };
    EePose::new(
        Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        rng.random_range(-3.0..3.0),
        grip,
    )
}

pub fn random_path<R: Rng>(rng: &mut R, d: usize, t: usize, source: PathSource) -> Path {
    let flag = rng.random::<bool>();
    Path::new((0..t).map(|_| random_config(rng, d)).collect(), source).with_collision(flag)
}

/// Summed squared config error averaged over the batch, with the first
/// config pinned to the start.
pub fn bc_loss_oracle(policy: &PathPolicy, batch: &[(PolicyInput, Path)]) -> f64 {
    let mut total = 0.0;
    for (input, target) in batch {
        let pred = policy.predict(input).unwrap();
        for (p, t) in pred.configs().iter().zip(target.configs()) {
            for (a, b) in p.0.iter().zip(&t.0) {
                total += (a - b) * (a - b);
            }
        }
    }
    total / batch.len() as f64
}

/// Mean squared TD error against targets computed from the frozen target net.
pub fn td_loss_oracle(online: &RankerParams, trainer: &RankerTrainer, batch: &[Transition]) -> f64 {
    let mut total = 0.0;
    for t in batch {
        let mut y = t.reward;
        if let (Some(p), Some(g)) = (&t.next_executed_path, &t.next_goal) {
            y += trainer.gamma * trainer.target.q_value(p, g).unwrap();
        }
        let q = online.q_value(&t.executed_path, &t.goal).unwrap();
        total += (q - y) * (q - y);
    }
    total / batch.len() as f64
}

/// A mixed batch of terminal and bootstrapped transitions over random paths.
pub fn random_transitions<R: Rng>(rng: &mut R, n: usize, d: usize, t: usize) -> Vec<Transition> {
    let scene = Task::ReachTarget.scene(0);
    (0..n)
        .map(|k| {
            let terminal = k % 2 == 0;
            let reward = if rng.random::<bool>() { 1.0 } else { 0.0 };
            Transition {
                scene: scene.clone(),
                goal: random_goal(rng),
                reward,
                next_scene: scene.clone(),
                executed_path: random_path(rng, d, t, PathSource::Bezier),
                next_executed_path: (!terminal).then(|| random_path(rng, d, t, PathSource::Planner)),
                next_goal: (!terminal).then(|| random_goal(rng)),
                terminal,
                episode_id: k as u64,
                episode_succeeded: reward == 1.0,
            }
        })
        .collect()
}

pub const DOF: usize = 3;
pub const T: usize = 32;

pub fn policy_point(seed: u64) -> (PathPolicy, Vec<(PolicyInput, Path)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = PathPolicy::new(DOF, T, &mut rng);
    let batch = (0..2)
        .map(|_| {
            let start = random_config(&mut rng, DOF);
            let input = PolicyInput::new(start, random_goal(&mut rng));
            (input, random_path(&mut rng, DOF, T, PathSource::Planner))
        })
        .collect();
    (policy, batch)
}

pub fn check_policy(seed: u64, indices: Option<&[usize]>) -> GradReport {
    let (policy, batch) = policy_point(seed);
    let (loss, grads) = policy.bc_loss_and_grads(&batch).unwrap();
    assert!((loss - bc_loss_oracle(&policy, &batch)).abs() <= 1e-9 * loss.max(1.0));
    let grads = PathPolicy::from_net(grads, DOF).unwrap();
    let all: Vec<usize> = (0..policy.num_params()).collect();
    check_gradient(&policy, &grads, |p| bc_loss_oracle(p, &batch), indices.unwrap_or(&all))
}

pub fn ranker_point(seed: u64) -> (RankerTrainer, Vec<Transition>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trainer = RankerTrainer::new(RankerParams::new(DOF, &mut rng), 1e-3, 0.99, 0.005).unwrap();
    // a distinct target net so the bootstrapped targets are not the online values
    trainer.target = RankerParams::new(DOF, &mut rng);
    (trainer, random_transitions(&mut rng, 4, DOF, T))
}

pub fn check_ranker(seed: u64, per_weights: usize, per_biases: usize) -> GradReport {
    let (trainer, batch) = ranker_point(seed);
    let refs: Vec<&Transition> = batch.iter().collect();
    let (loss, grads) = trainer.td_loss_and_grads(&refs).unwrap();
    assert!((loss - td_loss_oracle(&trainer.online, &trainer, &batch)).abs() <= 1e-9 * loss.max(1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let indices = stratified_indices(&trainer.online, per_weights, per_biases, &mut rng);
    check_gradient(&trainer.online, &grads, |p| td_loss_oracle(p, &trainer, &batch), &indices)
}

pub fn brute_force_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for v in values {
        sum += v;
    }
    Some(sum / values.len() as f64)
}

/// Rule oracle for the policy validity filter.
pub fn filter_oracle(candidate: &Path, sampled: &[Path]) -> bool {
    let lengths: Vec<f64> = sampled
        .iter()
        .map(|p| {
            p.configs()
                .windows(2)
                .map(|w| w[0].0.iter().zip(&w[1].0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .sum()
        })
        .collect();
    match brute_force_mean(&lengths) {
        None => false,
        Some(mean) => candidate.cspace_length() < mean,
    }
}

/// Both elbow solutions of a two-link arm reaching `(x, y)`.
pub fn two_link_closed_form(l1: f64, l2: f64, x: f64, y: f64) -> [(f64, f64); 2] {
    let c2 = ((x * x + y * y - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let mut out = [(0.0, 0.0); 2];
    for (k, s) in [1.0, -1.0].into_iter().enumerate() {
        let q2 = s * c2.acos();
        let q1 = y.atan2(x) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
        out[k] = (q1, q2);
    }
    out
}
