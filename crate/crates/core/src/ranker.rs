//! Path-ranking Q-function: a shared per-configuration encoder, a max-pool
//! over the path, and a scoring head that also sees the collision flag.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{EePose, Path, PathSource, GOAL_ENCODING_DIM};
use crate::nn::{grouped_max_pool, soft_update, Activation, Adam, AdamState, Dense, Layered, Mlp};
use crate::replay::Transition;

pub const ENCODER_WIDTHS: [usize; 2] = [64, 128];
pub const POOLED_WIDTH: usize = 1024;
pub const HEAD_WIDTHS: [usize; 2] = [512, 512];

/// Per-config net `d+5 -> 64 -> 128 -> 1024` (linear last), pooled, then
/// `1025 -> 512 -> 512 -> 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerParams {
    /// First two per-config layers, ReLU after each.
    pub encoder: Mlp,
    /// Last per-config layer, linear, feeding the pool.
    pub lift: Dense,
    pub head: Mlp,
}

impl Layered for RankerParams {
    fn layers(&self) -> Vec<&Dense> {
        let mut v = self.encoder.layers();
        v.push(&self.lift);
        v.extend(self.head.layers());
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut v: Vec<&mut Dense> = self.encoder.layers.iter_mut().collect();
        v.push(&mut self.lift);
        v.extend(self.head.layers.iter_mut());
        v
    }
}

struct Forward {
    encoder: crate::nn::MlpCache,
    argmax: Array2<usize>,
    head: crate::nn::MlpCache,
}

impl RankerParams {
    pub fn new<R: Rng + ?Sized>(dof: usize, rng: &mut R) -> Self {
        Self::with_widths(dof, &ENCODER_WIDTHS, POOLED_WIDTH, &HEAD_WIDTHS, rng)
    }

    /// Same topology with custom widths; used to keep gradient checks cheap.
    pub fn with_widths<R: Rng + ?Sized>(
        dof: usize,
        encoder: &[usize],
        pooled: usize,
        head: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut enc = vec![dof + GOAL_ENCODING_DIM];
        enc.extend_from_slice(encoder);
        let lift = Dense::glorot(*enc.last().unwrap(), pooled, rng);
        let mut hd = vec![pooled + 1];
        hd.extend_from_slice(head);
        hd.push(1);
        RankerParams {
            encoder: Mlp::new(&enc, Activation::Relu, rng),
            lift,
            head: Mlp::new(&hd, Activation::Linear, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        RankerParams {
            encoder: self.encoder.zeros_like(),
            lift: Dense::zeros(self.lift.input_dim(), self.lift.output_dim()),
            head: self.head.zeros_like(),
        }
    }

    pub fn dof(&self) -> usize {
        self.encoder.input_dim() - GOAL_ENCODING_DIM
    }

    /// Rows `[config, goal]` for every config of every path, paths stacked.
    fn inputs(&self, items: &[(&Path, &EePose)]) -> Result<(Array2<f64>, usize)> {
        let dof = self.dof();
        let t = items.first().ok_or(Error::EmptyCandidates)?.0.len();
        let width = dof + GOAL_ENCODING_DIM;
        let mut x = Array2::zeros((items.len() * t, width));
        let mut r = 0;
        for (path, goal) in items {
            if path.len() != t {
                return Err(Error::DimensionMismatch {
                    expected: t,
                    got: path.len(),
                });
            }
            let g = goal.encode();
            for cfg in path.configs() {
                if cfg.len() != dof {
                    return Err(Error::DimensionMismatch {
                        expected: dof,
                        got: cfg.len(),
                    });
                }
                let mut row = x.row_mut(r);
                for (j, v) in cfg.0.iter().chain(g.iter()).enumerate() {
                    row[j] = *v;
                }
                r += 1;
            }
        }
        Ok((x, t))
    }

    fn forward(&self, items: &[(&Path, &EePose)]) -> Result<Forward> {
        let (x, t) = self.inputs(items)?;
        let encoder = self.encoder.forward_cached(x.view())?;
        // a per-column bias commutes with the max, so it is added after pooling
        let lifted = encoder.output().dot(&self.lift.weights.t());
        let (mut pooled, argmax) = grouped_max_pool(&lifted, t);
        pooled += &self.lift.biases;
        let mut head_in = Array2::zeros((items.len(), pooled.ncols() + 1));
        head_in.slice_mut(s![.., ..pooled.ncols()]).assign(&pooled);
        for (i, (path, _)) in items.iter().enumerate() {
            head_in[[i, pooled.ncols()]] = if path.in_collision { 1.0 } else { 0.0 };
        }
        let head = self.head.forward_cached(head_in.view())?;
        Ok(Forward { encoder, argmax, head })
    }

    /// Q-values for a batch of (path, goal) pairs sharing one path length.
    pub fn q_values(&self, items: &[(&Path, &EePose)]) -> Result<Vec<f64>> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.forward(items)?.head.output().column(0).to_vec())
    }

    pub fn q_value(&self, path: &Path, goal: &EePose) -> Result<f64> {
        Ok(self.q_values(&[(path, goal)])?[0])
    }

    pub fn score(&self, candidates: &[Path], goal: &EePose) -> Result<Vec<f64>> {
        let items: Vec<(&Path, &EePose)> = candidates.iter().map(|p| (p, goal)).collect();
        self.q_values(&items)
    }

    /// Parameter gradients of `sum_i upstream[i] * Q_i`.
    fn backward(&self, fwd: &Forward, upstream: &[f64]) -> Result<RankerParams> {
        let dq = Array2::from_shape_vec((upstream.len(), 1), upstream.to_vec()).expect("column");
        let (head_grads, d_head_in) = self.head.backward(&fwd.head, &dq)?;
        let pooled = self.lift.output_dim();
        let enc_out = fwd.encoder.output();
        // max-pool routes each pooled entry to its winning row only
        let width = enc_out.ncols();
        let enc = enc_out.as_slice().expect("standard layout");
        let weights = self.lift.weights.as_slice().expect("standard layout");
        let mut lift_w = Array2::zeros(self.lift.weights.dim());
        let mut lift_b = Array1::zeros(pooled);
        let mut d_enc = Array2::zeros(enc_out.dim());
        {
            let gw = lift_w.as_slice_mut().expect("fresh array");
            let ge = d_enc.as_slice_mut().expect("fresh array");
            for (p, d_row) in d_head_in.axis_iter(Axis(0)).enumerate() {
                for j in 0..pooled {
                    let g = d_row[j];
                    if g == 0.0 {
                        continue;
                    }
                    let r = fwd.argmax[[p, j]];
                    let src = &enc[r * width..(r + 1) * width];
                    for (w, x) in gw[j * width..(j + 1) * width].iter_mut().zip(src) {
                        *w += g * x;
                    }
                    let wj = &weights[j * width..(j + 1) * width];
                    for (e, w) in ge[r * width..(r + 1) * width].iter_mut().zip(wj) {
                        *e += g * w;
                    }
                    lift_b[j] += g;
                }
            }
        }
        let (enc_grads, _) = self.encoder.backward(&fwd.encoder, &d_enc)?;
        Ok(RankerParams {
            encoder: enc_grads,
            lift: Dense {
                weights: lift_w,
                biases: lift_b,
            },
            head: head_grads,
        })
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub q_values: Vec<f64>,
    pub explored: bool,
}

/// Greedy choice among `q_values`, replaced by a uniform pick with
/// probability `epsilon`. The RNG is untouched when `epsilon` is zero.
pub fn select_index<R: Rng + ?Sized>(q_values: Vec<f64>, epsilon: f64, rng: &mut R) -> Result<Selection> {
    let greedy = argmax_first(&q_values).ok_or(Error::EmptyCandidates)?;
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        let index = rng.random_range(0..q_values.len());
        return Ok(Selection {
            index,
            q_values,
            explored: true,
        });
    }
    Ok(Selection {
        index: greedy,
        q_values,
        explored: false,
    })
}

pub fn select_path<R: Rng + ?Sized>(
    params: &RankerParams,
    candidates: &[Path],
    goal: &EePose,
    epsilon: f64,
    rng: &mut R,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    select_index(params.score(candidates, goal)?, epsilon, rng)
}

/// Online and target rankers with their optimizer.
#[derive(Debug, Clone)]
pub struct RankerTrainer {
    pub online: RankerParams,
    pub target: RankerParams,
    pub adam: Adam,
    pub state: AdamState,
    pub gamma: f64,
    pub tau: f64,
}

impl RankerTrainer {
    pub fn new(online: RankerParams, lr: f64, gamma: f64, tau: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma {gamma} outside [0, 1)")));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidArgument(format!("tau {tau} outside [0, 1]")));
        }
        Ok(RankerTrainer {
            target: online.clone(),
            state: AdamState::new(&online),
            online,
            adam: Adam::with_lr(lr),
            gamma,
            tau,
        })
    }

    /// Bootstrapped regression targets `r + gamma * Q'(next)`; terminal
    /// transitions use `r` alone and never touch the target network.
    pub fn td_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        for t in batch {
            t.validate()?;
        }
        let successors: Vec<(usize, (&Path, &EePose))> = batch
            .iter()
            .enumerate()
            .filter_map(|(i, t)| Some((i, (t.next_executed_path.as_ref()?, t.next_goal.as_ref()?))))
            .collect();
        let mut targets: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        if !successors.is_empty() {
            let items: Vec<(&Path, &EePose)> = successors.iter().map(|(_, it)| *it).collect();
            let next_q = self.target.q_values(&items)?;
            for ((i, _), q) in successors.iter().zip(next_q) {
                targets[*i] += self.gamma * q;
            }
        }
        Ok(targets)
    }

    /// Mean squared TD error and its gradient with respect to the online net.
    pub fn td_loss_and_grads(&self, batch: &[&Transition]) -> Result<(f64, RankerParams)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty TD batch".into()));
        }
        let targets = self.td_targets(batch)?;
        let items: Vec<(&Path, &EePose)> = batch.iter().map(|t| (&t.executed_path, &t.goal)).collect();
        let fwd = self.online.forward(&items)?;
        let n = batch.len() as f64;
        let q = fwd.head.output().column(0).to_vec();
        let mut loss = 0.0;
        let mut upstream = Vec::with_capacity(q.len());
        for (qi, yi) in q.iter().zip(&targets) {
            let e = qi - yi;
            loss += e * e;
            upstream.push(2.0 * e / n);
        }
        let grads = self.online.backward(&fwd, &upstream)?;
        Ok((loss / n, grads))
    }

    /// One optimizer step on the online net, then the soft target update.
    pub fn train_step(&mut self, batch: &[&Transition]) -> Result<f64> {
        let (loss, grads) = self.td_loss_and_grads(batch)?;
        self.adam.step(&mut self.online, &grads, &mut self.state)?;
        soft_update(&mut self.target, &self.online, self.tau)?;
        Ok(loss)
    }
}

/// One ranked decision, as printed by the inspection tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub episode: usize,
    pub stage: usize,
    pub sources: Vec<PathSource>,
    pub q_values: Vec<f64>,
    pub chosen: usize,
    pub explored: bool,
    pub reward: f64,
}

impl RankRecord {
    /// Source of the highest-valued candidate.
    pub fn top_source(&self) -> Option<PathSource> {
        argmax_first(&self.q_values).map(|i| self.sources[i])
    }
}
