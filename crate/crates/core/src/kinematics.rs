//! Planar serial arm kinematics and configuration-space paths.
//!
//! The arm is a chain of revolute joints whose absolute link angle is the
//! running sum of joint angles. End-effector orientation is the absolute angle
//! of the last link.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;

/// Number of configurations in a normalized path.
pub const DEFAULT_PATH_LEN: usize = 32;

/// Width of [`EePose::encode`].
pub const GOAL_ENCODING_DIM: usize = 5;

/// Weight of the orientation residual relative to position in the IK objective.
pub const IK_ORIENTATION_WEIGHT: f64 = 0.1;

/// Position tolerance an IK solution must meet.
pub const IK_POSITION_TOL: f64 = 1e-6;

const IK_RESTARTS: usize = 12;
const IK_SHAPE_ITERS: usize = 40;
const IK_ITERS: usize = 60;
const IK_DAMPING: f64 = 0.05;
const IK_POLISH_DAMPING: f64 = 1e-3;

/// Wraps an angle to (-pi, pi].
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    link_lengths: Vec<f64>,
    base: Vec2,
    joint_limits: Vec<(f64, f64)>,
}

impl ArmSpec {
    pub fn new(link_lengths: Vec<f64>, base: Vec2, joint_limits: Vec<(f64, f64)>) -> Result<Self> {
        if link_lengths.len() < 2 {
            return Err(Error::InvalidArgument("arm needs at least 2 joints".into()));
        }
        if joint_limits.len() != link_lengths.len() {
            return Err(Error::DimensionMismatch {
                expected: link_lengths.len(),
                got: joint_limits.len(),
            });
        }
        if link_lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument("link lengths must be positive".into()));
        }
        if joint_limits.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidArgument("joint limits need lo < hi".into()));
        }
        Ok(Self {
            link_lengths,
            base,
            joint_limits,
        })
    }

    /// Two unit links at the origin with full-circle limits.
    pub fn two_link_unit() -> Self {
        Self::new(vec![1.0, 1.0], Vec2::zeros(), vec![(-PI, PI); 2]).unwrap()
    }

    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn link_lengths(&self) -> &[f64] {
        &self.link_lengths
    }

    pub fn base(&self) -> Vec2 {
        self.base
    }

    pub fn joint_limits(&self) -> &[(f64, f64)] {
        &self.joint_limits
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    pub fn clamp(&self, q: &mut JointConfig) {
        for (v, &(lo, hi)) in q.0.iter_mut().zip(&self.joint_limits) {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn within_limits(&self, q: &JointConfig) -> bool {
        q.0.iter()
            .zip(&self.joint_limits)
            .all(|(&v, &(lo, hi))| v >= lo - 1e-12 && v <= hi + 1e-12)
    }

    pub fn random_config<R: Rng + ?Sized>(&self, rng: &mut R) -> JointConfig {
        JointConfig(
            self.joint_limits
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..hi))
                .collect(),
        )
    }

    fn check_dim(&self, q: &JointConfig) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Joint positions from base to end effector (d + 1 points).
    pub fn joint_positions(&self, q: &JointConfig) -> Result<Vec<Vec2>> {
        self.check_dim(q)?;
        let mut pts = Vec::with_capacity(self.dof() + 1);
        let mut p = self.base;
        let mut angle = 0.0;
        pts.push(p);
        for (&qi, &len) in q.0.iter().zip(&self.link_lengths) {
            angle += qi;
            p += Vec2::new(angle.cos(), angle.sin()) * len;
            pts.push(p);
        }
        Ok(pts)
    }

    pub fn ee_position(&self, q: &JointConfig) -> Result<Vec2> {
        Ok(*self.joint_positions(q)?.last().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfig(pub Vec<f64>);

impl JointConfig {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn lerp(&self, other: &JointConfig, t: f64) -> JointConfig {
        JointConfig(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + (b - a) * t)
                .collect(),
        )
    }
}

impl From<Vec<f64>> for JointConfig {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gripper {
    Open,
    Closed,
}

impl Gripper {
    pub fn as_f64(self) -> f64 {
        match self {
            Gripper::Open => 0.0,
            Gripper::Closed => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EePose {
    pub position: Vec2,
    pub orientation: f64,
    pub gripper: Gripper,
}

impl EePose {
    pub fn new(position: Vec2, orientation: f64, gripper: Gripper) -> Self {
        Self {
            position,
            orientation: normalize_angle(orientation),
            gripper,
        }
    }

    /// `(x, y, cos θ, sin θ, gripper)` network encoding.
    pub fn encode(&self) -> [f64; GOAL_ENCODING_DIM] {
        [
            self.position.x,
            self.position.y,
            self.orientation.cos(),
            self.orientation.sin(),
            self.gripper.as_f64(),
        ]
    }
}

pub fn forward_kinematics(arm: &ArmSpec, q: &JointConfig) -> Result<EePose> {
    let position = arm.ee_position(q)?;
    let orientation: f64 = q.0.iter().sum();
    Ok(EePose::new(position, orientation, Gripper::Open))
}

pub fn config_distance(a: &JointConfig, b: &JointConfig) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Damped-least-squares IK with random restarts.
///
/// The first attempt starts at `seed_config`; restarts draw uniformly inside the
/// joint limits from an RNG seeded with `rng_seed`. Each attempt runs a
/// position + weighted-orientation phase followed by a position-only polish,
/// so the returned configuration always meets [`IK_POSITION_TOL`].
pub fn inverse_kinematics(
    arm: &ArmSpec,
    target: &EePose,
    seed_config: &JointConfig,
    rng_seed: u64,
) -> Result<JointConfig> {
    arm.check_dim(seed_config)?;
    let distance = (target.position - arm.base()).norm();
    let reach = arm.reach();
    if distance > reach + 1e-12 {
        return Err(Error::Unreachable { distance, reach });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut best_error = f64::INFINITY;
    for attempt in 0..IK_RESTARTS {
        let mut q = if attempt == 0 {
            seed_config.clone()
        } else {
            arm.random_config(&mut rng)
        };
        arm.clamp(&mut q);
        let err = solve_from(arm, target, &mut q);
        if err <= IK_POSITION_TOL {
            return Ok(q);
        }
        best_error = best_error.min(err);
    }
    Err(Error::NoConvergence { best_error })
}

/// One damped-least-squares step `J^T (J J^T + λ² I)^-1 e` for a Jacobian
/// whose rows are the position partials plus, optionally, a constant
/// orientation row.
fn dls_step(arm: &ArmSpec, q: &JointConfig, target: &EePose, with_orientation: bool, damping: f64) -> (Vec<f64>, f64) {
    let pts = arm.joint_positions(q).expect("dimension checked");
    let ee = pts[pts.len() - 1];
    let d = arm.dof();
    let dp = target.position - ee;
    let pos_err = dp.norm();
    // columns of the position Jacobian
    let cols: Vec<Vec2> = (0..d)
        .map(|i| {
            let r = ee - pts[i];
            Vec2::new(-r.y, r.x)
        })
        .collect();
    let lam2 = damping * damping;
    if with_orientation {
        let w = IK_ORIENTATION_WEIGHT;
        let orient: f64 = q.0.iter().sum();
        let e = Vector3::new(dp.x, dp.y, w * normalize_angle(target.orientation - orient));
        let mut a = Matrix3::identity() * lam2;
        for c in &cols {
            let row = Vector3::new(c.x, c.y, w);
            a += row * row.transpose();
        }
        let y = a.cholesky().map(|ch| ch.solve(&e)).unwrap_or_else(Vector3::zeros);
        (cols.iter().map(|c| c.x * y.x + c.y * y.y + w * y.z).collect(), pos_err)
    } else {
        let mut a = Matrix2::identity() * lam2;
        for c in &cols {
            a += c * c.transpose();
        }
        let y = a.cholesky().map(|ch| ch.solve(&dp)).unwrap_or_else(Vec2::zeros);
        (cols.iter().map(|c| c.dot(&y)).collect(), pos_err)
    }
}

/// Runs one IK attempt in place and returns the final position error.
fn solve_from(arm: &ArmSpec, target: &EePose, q: &mut JointConfig) -> f64 {
    for _ in 0..IK_SHAPE_ITERS {
        let (step, _) = dls_step(arm, q, target, true, IK_DAMPING);
        let norm = step.iter().map(|s| s * s).sum::<f64>().sqrt();
        for (v, s) in q.0.iter_mut().zip(&step) {
            *v += s;
        }
        arm.clamp(q);
        if norm < 1e-6 {
            break;
        }
    }
    for _ in 0..IK_ITERS {
        let (step, err) = dls_step(arm, q, target, false, IK_POLISH_DAMPING);
        if err < 1e-10 {
            return err;
        }
        for (v, s) in q.0.iter_mut().zip(&step) {
            *v += s;
        }
        arm.clamp(q);
    }
    (target.position - arm.ee_position(q).unwrap()).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathSource {
    Planner,
    Bezier,
    Policy,
    Demo,
}

impl PathSource {
    pub fn as_str(self) -> &'static str {
        match self {
            PathSource::Planner => "planner",
            PathSource::Bezier => "bezier",
            PathSource::Policy => "policy",
            PathSource::Demo => "demo",
        }
    }
}

impl fmt::Display for PathSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An ordered sequence of joint configurations with provenance metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    configs: Vec<JointConfig>,
    pub source: PathSource,
    pub in_collision: bool,
    cspace_length: f64,
}

impl Path {
    pub fn new(configs: Vec<JointConfig>, source: PathSource) -> Self {
        let cspace_length = polyline_length(&configs);
        Self {
            configs,
            source,
            in_collision: false,
            cspace_length,
        }
    }

    pub fn configs(&self) -> &[JointConfig] {
        &self.configs
    }

    pub fn into_configs(self) -> Vec<JointConfig> {
        self.configs
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn first(&self) -> &JointConfig {
        &self.configs[0]
    }

    pub fn last(&self) -> &JointConfig {
        &self.configs[self.configs.len() - 1]
    }

    pub fn cspace_length(&self) -> f64 {
        self.cspace_length
    }

    pub fn with_collision(mut self, in_collision: bool) -> Self {
        self.in_collision = in_collision;
        self
    }
}

fn polyline_length(configs: &[JointConfig]) -> f64 {
    configs
        .windows(2)
        .map(|w| config_distance(&w[0], &w[1]).unwrap_or(0.0))
        .sum()
}

/// Resamples a path to exactly `t` configurations spaced uniformly by
/// configuration-space arc length. Endpoints are copied, not interpolated.
pub fn normalize_path(raw: &Path, t: usize) -> Result<Path> {
    if raw.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "path needs >= 2 configs, got {}",
            raw.len()
        )));
    }
    if t < 2 {
        return Err(Error::InvalidArgument(format!("T must be >= 2, got {t}")));
    }
    let configs = raw.configs();
    let mut cumulative = Vec::with_capacity(configs.len());
    cumulative.push(0.0);
    for w in configs.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + config_distance(&w[0], &w[1])?);
    }
    let total = *cumulative.last().unwrap();
    let mut out = Vec::with_capacity(t);
    out.push(configs[0].clone());
    let mut seg = 0;
    for k in 1..t - 1 {
        if total == 0.0 {
            out.push(configs[0].clone());
            continue;
        }
        let s = total * k as f64 / (t - 1) as f64;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < s {
            seg += 1;
        }
        let span = cumulative[seg + 1] - cumulative[seg];
        let frac = if span > 0.0 {
            ((s - cumulative[seg]) / span).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(configs[seg].lerp(&configs[seg + 1], frac));
    }
    out.push(configs[configs.len() - 1].clone());
    Ok(Path::new(out, raw.source).with_collision(raw.in_collision))
}
