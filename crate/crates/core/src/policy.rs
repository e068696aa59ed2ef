//! Behavior-cloned path generator and its validity filter.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kinematics::{EePose, JointConfig, Path, PathSource, GOAL_ENCODING_DIM};
use crate::nn::{Activation, Layered, Mlp};

pub const POLICY_HIDDEN: [usize; 3] = [64, 256, 256];

/// Start configuration plus encoded goal.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput {
    pub start: JointConfig,
    pub goal: EePose,
}

impl PolicyInput {
    pub fn new(start: JointConfig, goal: EePose) -> Self {
        PolicyInput { start, goal }
    }

    /// `[q_1..q_d, x, y, cos, sin, grip]`.
    pub fn encode(&self) -> Vec<f64> {
        let mut v = self.start.0.clone();
        v.extend_from_slice(&self.goal.encode());
        v
    }
}

/// One-shot path regressor: input width `d + 5`, output `T * d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPolicy {
    pub net: Mlp,
    dof: usize,
    path_len: usize,
}

impl PathPolicy {
    pub fn new<R: Rng + ?Sized>(dof: usize, path_len: usize, rng: &mut R) -> Self {
        let mut sizes = vec![dof + GOAL_ENCODING_DIM];
        sizes.extend(POLICY_HIDDEN);
        sizes.push(path_len * dof);
        PathPolicy {
            net: Mlp::new(&sizes, Activation::Linear, rng),
            dof,
            path_len,
        }
    }

    /// Wraps an existing network, inferring `T` from its output width.
    pub fn from_net(net: Mlp, dof: usize) -> Result<Self> {
        if net.input_dim() != dof + GOAL_ENCODING_DIM || net.output_dim() % dof != 0 {
            return Err(Error::InvalidArgument(format!(
                "policy net {}->{} does not fit {dof} joints",
                net.input_dim(),
                net.output_dim()
            )));
        }
        let path_len = net.output_dim() / dof;
        Ok(PathPolicy { net, dof, path_len })
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn path_len(&self) -> usize {
        self.path_len
    }

    fn check(&self, input: &PolicyInput) -> Result<()> {
        if input.start.len() != self.dof {
            return Err(Error::DimensionMismatch {
                expected: self.dof,
                got: input.start.len(),
            });
        }
        Ok(())
    }

    fn input_matrix(&self, inputs: &[&PolicyInput]) -> Result<Array2<f64>> {
        let width = self.dof + GOAL_ENCODING_DIM;
        let mut x = Array2::zeros((inputs.len(), width));
        for (mut row, inp) in x.rows_mut().into_iter().zip(inputs) {
            self.check(inp)?;
            for (r, v) in row.iter_mut().zip(inp.encode()) {
                *r = v;
            }
        }
        Ok(x)
    }

    /// Predicted path with its first configuration pinned to the start. The
    /// collision flag is left clear; callers that know the scene set it.
    pub fn predict(&self, input: &PolicyInput) -> Result<Path> {
        let x = self.input_matrix(&[input])?;
        let out = self.net.forward(x.view())?;
        let configs = out
            .row(0)
            .as_slice()
            .expect("row-major output")
            .chunks(self.dof)
            .enumerate()
            .map(|(k, c)| {
                if k == 0 {
                    input.start.clone()
                } else {
                    JointConfig(c.to_vec())
                }
            })
            .collect();
        Ok(Path::new(configs, PathSource::Policy))
    }

    /// Mean over the batch of the summed squared config error. The pinned first
    /// configuration contributes its (constant) error but no gradient.
    pub fn bc_loss_and_grads(&self, batch: &[(PolicyInput, Path)]) -> Result<(f64, Mlp)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty behavior-cloning batch".into()));
        }
        let inputs: Vec<&PolicyInput> = batch.iter().map(|(i, _)| i).collect();
        let x = self.input_matrix(&inputs)?;
        let cache = self.net.forward_cached(x.view())?;
        let out = cache.output();
        let n = batch.len() as f64;
        let mut upstream = Array2::zeros(out.dim());
        let mut loss = 0.0;
        for (b, (inp, target)) in batch.iter().enumerate() {
            if target.len() != self.path_len {
                return Err(Error::DimensionMismatch {
                    expected: self.path_len,
                    got: target.len(),
                });
            }
            for (k, cfg) in target.configs().iter().enumerate() {
                if cfg.len() != self.dof {
                    return Err(Error::DimensionMismatch {
                        expected: self.dof,
                        got: cfg.len(),
                    });
                }
                for (j, &want) in cfg.0.iter().enumerate() {
                    let col = k * self.dof + j;
                    let pred = if k == 0 { inp.start.0[j] } else { out[[b, col]] };
                    let err = pred - want;
                    loss += err * err;
                    if k > 0 {
                        upstream[[b, col]] = 2.0 * err / n;
                    }
                }
            }
        }
        let (grads, _) = self.net.backward(&cache, &upstream)?;
        Ok((loss / n, grads))
    }
}

impl Layered for PathPolicy {
    fn layers(&self) -> Vec<&crate::nn::Dense> {
        self.net.layers()
    }

    fn layers_mut(&mut self) -> Vec<&mut crate::nn::Dense> {
        self.net.layers_mut()
    }
}

/// A policy path is admitted only if it is shorter in configuration space
/// than the mean of the sampled paths. With nothing to compare against it is
/// rejected.
pub fn validity_filter(candidate: &Path, sampled: &[Path]) -> bool {
    if sampled.is_empty() {
        return false;
    }
    let mean = sampled.iter().map(Path::cspace_length).sum::<f64>() / sampled.len() as f64;
    candidate.cspace_length() < mean
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Gripper;
    use crate::nn::{Adam, AdamState};
    use nalgebra::Vector2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn straight(len: f64) -> Path {
        Path::new(
            vec![JointConfig(vec![0.0]), JointConfig(vec![len])],
            PathSource::Planner,
        )
    }

    fn input() -> PolicyInput {
        PolicyInput::new(
            JointConfig(vec![0.1, -0.2, 0.3]),
            EePose::new(Vector2::new(0.4, 0.5), 0.7, Gripper::Closed),
        )
    }

    #[test]
    fn encoding_layout() {
        let e = input().encode();
        assert_eq!(e.len(), 8);
        assert_eq!(&e[..3], &[0.1, -0.2, 0.3]);
        assert_eq!(e[7], 1.0);
    }

    #[test]
    fn zero_net_predicts_zero_path_from_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = PathPolicy::new(3, 6, &mut rng);
        p.net = p.net.zeros_like();
        let path = p.predict(&input()).unwrap();
        assert_eq!(path.len(), 6);
        assert_eq!(path.source, PathSource::Policy);
        assert_eq!(path.first(), &input().start);
        for c in &path.configs()[1..] {
            assert_eq!(c.0, vec![0.0; 3]);
        }
    }

    #[test]
    fn loss_counts_squared_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = PathPolicy::new(3, 2, &mut rng);
        p.net = p.net.zeros_like();
        let start = input().start;
        let target = Path::new(vec![start.clone(), JointConfig(vec![0.0, 0.0, 0.0])], PathSource::Demo);
        let (loss, _) = p.bc_loss_and_grads(&[(input(), target)]).unwrap();
        assert_eq!(loss, 0.0);
        let target = Path::new(vec![start, JointConfig(vec![0.0, 2.0, 0.0])], PathSource::Demo);
        let (loss, _) = p.bc_loss_and_grads(&[(input(), target)]).unwrap();
        assert!((loss - 4.0).abs() < 1e-12);
    }

    #[test]
    fn overfits_a_single_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = PathPolicy::new(3, 8, &mut rng);
        let start = input().start;
        let target = Path::new(
            (0..8)
                .map(|k| {
                    let t = k as f64 / 7.0;
                    JointConfig(vec![0.1 + t, -0.2 - 0.5 * t, 0.3 + 2.0 * t])
                })
                .collect(),
            PathSource::Demo,
        );
        assert_eq!(target.first(), &start);
        let opt = Adam::default();
        let mut state = AdamState::new(&p);
        let batch = vec![(input(), target.clone())];
        for _ in 0..1500 {
            let (_, g) = p.bc_loss_and_grads(&batch).unwrap();
            opt.step(&mut p.net, &g, &mut state).unwrap();
        }
        let pred = p.predict(&input()).unwrap();
        for (a, b) in pred.configs().iter().zip(target.configs()) {
            for (x, y) in a.0.iter().zip(&b.0) {
                assert!((x - y).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn filter_examples() {
        assert!(validity_filter(&straight(3.0), &[straight(4.0), straight(6.0)]));
        assert!(!validity_filter(&straight(5.0), &[straight(4.0)]));
        assert!(!validity_filter(&straight(5.0), &[straight(5.0)]));
        assert!(!validity_filter(&straight(0.0), &[]));
    }
}
