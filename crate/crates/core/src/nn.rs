//! Dense networks with hand-written reverse mode, a set max-pool, Adam, and a
//! little-endian binary checkpoint format.
//!
//! Batches are row-major: one sample per row.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};

/// One affine layer `y = W x + b` with `W` stored out x in.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl Dense {
    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let weights = Array2::from_shape_fn((output, input), |_| rng.random_range(-limit..=limit));
        Dense {
            weights,
            biases: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weights: Array2::zeros((output, input)),
            biases: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weights.t());
        y += &self.biases;
        y
    }

    fn zeros_like(&self) -> Self {
        Dense::zeros(self.input_dim(), self.output_dim())
    }
}

/// Anything that is an ordered list of dense layers: networks, their
/// gradients, and optimizer moments all share this shape.
pub trait Layered {
    fn layers(&self) -> Vec<&Dense>;
    fn layers_mut(&mut self) -> Vec<&mut Dense>;

    fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameters in checkpoint order: per layer, weights row-major then biases.
    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            out.extend(l.weights.iter());
            out.extend(l.biases.iter());
        }
        out
    }

    fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        let n = self.num_params();
        if values.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: values.len(),
            });
        }
        let mut it = values.iter();
        for l in self.layers_mut() {
            for w in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *w = *it.next().unwrap();
            }
        }
        Ok(())
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers().iter().map(|l| (l.output_dim(), l.input_dim())).collect()
    }

    fn is_finite(&self) -> bool {
        self.layers()
            .iter()
            .all(|l| l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()))
    }
}

fn check_congruent(a: &impl Layered, b: &impl Layered) -> Result<()> {
    let (sa, sb) = (a.shapes(), b.shapes());
    if sa != sb {
        return Err(Error::InvalidArgument(format!("shape mismatch: {sa:?} vs {sb:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

/// Fully connected chain with ReLU between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub output: Activation,
}

/// Post-activation values of every layer, input first.
#[derive(Debug, Clone)]
pub struct MlpCache {
    activations: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().unwrap()
    }
}

fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes gradient entries whose unit was inactive.
fn relu_mask(grad: &mut Array2<f64>, post: &Array2<f64>) {
    Zip::from(grad).and(post).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}

impl Mlp {
    /// `sizes` lists every width from input to output.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need input and output width");
        let layers = sizes.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect();
        Mlp { layers, output }
    }

    pub fn zeros(sizes: &[usize], output: Activation) -> Self {
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Mlp { layers, output }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
            output: self.output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    fn activates(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.output == Activation::Relu
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = self.layers[0].forward(x);
        for i in 0..self.layers.len() {
            if i > 0 {
                h = self.layers[i].forward(h.view());
            }
            if self.activates(i) {
                relu_inplace(&mut h);
            }
        }
        Ok(h)
    }

    /// Single-sample convenience wrapper.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, x.len()), x).expect("contiguous row");
        Ok(self.forward(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<MlpCache> {
        self.check_input(&x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut h = layer.forward(activations[i].view());
            if self.activates(i) {
                relu_inplace(&mut h);
            }
            activations.push(h);
        }
        Ok(MlpCache { activations })
    }

    /// Gradients of `sum(grad_out * output)` with respect to every parameter,
    /// plus the gradient with respect to the input batch.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>) -> Result<(Mlp, Array2<f64>)> {
        let out = cache.output();
        if grad_out.dim() != out.dim() {
            return Err(Error::InvalidArgument(format!(
                "upstream gradient {:?} does not match output {:?}",
                grad_out.dim(),
                out.dim()
            )));
        }
        let mut grads = self.zeros_like();
        let mut delta = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            if self.activates(i) {
                relu_mask(&mut delta, &cache.activations[i + 1]);
            }
            let input = &cache.activations[i];
            grads.layers[i].weights = delta.t().dot(input);
            grads.layers[i].biases = delta.sum_axis(Axis(0));
            delta = delta.dot(&self.layers[i].weights);
        }
        Ok((grads, delta))
    }
}

impl Layered for Mlp {
    fn layers(&self) -> Vec<&Dense> {
        self.layers.iter().collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        self.layers.iter_mut().collect()
    }
}

/// Elementwise maximum across a set of equal-length feature vectors.
pub fn set_max_pool(features: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = features.first().ok_or(Error::EmptyCandidates)?;
    let mut out = first.clone();
    for f in &features[1..] {
        if f.len() != out.len() {
            return Err(Error::DimensionMismatch {
                expected: out.len(),
                got: f.len(),
            });
        }
        for (o, &v) in out.iter_mut().zip(f) {
            if v > *o {
                *o = v;
            }
        }
    }
    Ok(out)
}

/// Max over consecutive row groups of `set_size` rows. Returns the pooled
/// rows and, per output entry, the absolute row index of the winner (first
/// index on ties).
pub fn grouped_max_pool(rows: &Array2<f64>, set_size: usize) -> (Array2<f64>, Array2<usize>) {
    assert!(set_size > 0 && rows.nrows() % set_size == 0);
    let groups = rows.nrows() / set_size;
    let width = rows.ncols();
    let rows = rows.as_standard_layout();
    let data = rows.as_slice().expect("standard layout");
    let mut pooled = Array2::from_elem((groups, width), f64::NEG_INFINITY);
    let mut argmax = Array2::zeros((groups, width));
    let pooled_data = pooled.as_slice_mut().expect("fresh array");
    let argmax_data = argmax.as_slice_mut().expect("fresh array");
    for g in 0..groups {
        let best = &mut pooled_data[g * width..(g + 1) * width];
        let at = &mut argmax_data[g * width..(g + 1) * width];
        for r in g * set_size..(g + 1) * set_size {
            let row = &data[r * width..(r + 1) * width];
            for j in 0..width {
                if row[j] > best[j] {
                    best[j] = row[j];
                    at[j] = r;
                }
            }
        }
    }
    (pooled, argmax)
}

pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
}

/// Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Dense>,
    pub second: Vec<Dense>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamState {
    pub fn new(params: &impl Layered) -> Self {
        let zeros: Vec<Dense> = params.layers().iter().map(|l| l.zeros_like()).collect();
        AdamState {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam { lr, ..Adam::default() }
    }

    /// One bias-corrected update of `params` against `grads`.
    pub fn step(&self, params: &mut impl Layered, grads: &impl Layered, state: &mut AdamState) -> Result<()> {
        check_congruent(params, grads)?;
        if state.first.len() != params.layers().len() {
            return Err(Error::InvalidArgument("optimizer state does not match parameters".into()));
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((p, g), m), v) in params
            .layers_mut()
            .into_iter()
            .zip(grads.layers())
            .zip(state.first.iter_mut())
            .zip(state.second.iter_mut())
        {
            Zip::from(&mut p.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(update);
            Zip::from(&mut p.biases)
                .and(&g.biases)
                .and(&mut m.biases)
                .and(&mut v.biases)
                .for_each(update);
        }
        Ok(())
    }
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut impl Layered, online: &impl Layered, tau: f64) -> Result<()> {
    check_congruent(target, online)?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside [0, 1]")));
    }
    for (t, o) in target.layers_mut().into_iter().zip(online.layers()) {
        Zip::from(&mut t.weights)
            .and(&o.weights)
            .for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
        Zip::from(&mut t.biases)
            .and(&o.biases)
            .for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
    }
    Ok(())
}

/// Checkpoint layout, all integers u32 and all reals f64, little-endian:
///
/// ```text
/// magic "LPRCKPT1"
/// section count
/// per section: name length, name bytes (utf-8), layer count,
///   per layer: rows, cols, rows*cols weights row-major, rows biases
/// ```
///
/// Adam state is stored as three sections: the step count in a 1x1 layer,
/// then the first and second moments shaped like the parameters.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LPRCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub layers: Vec<Dense>,
}

impl Section {
    pub fn of(name: &str, net: &impl Layered) -> Self {
        Section {
            name: name.to_string(),
            layers: net.layers().into_iter().cloned().collect(),
        }
    }

    /// Copies this section's values into `net`, which must have the same shapes.
    pub fn load_into(&self, net: &mut impl Layered) -> Result<()> {
        let want: Vec<(usize, usize)> = net.shapes();
        let have: Vec<(usize, usize)> = self.layers.iter().map(|l| (l.output_dim(), l.input_dim())).collect();
        if want != have {
            return Err(Error::Checkpoint(format!(
                "section `{}` has shapes {have:?}, expected {want:?}",
                self.name
            )));
        }
        for (dst, src) in net.layers_mut().into_iter().zip(&self.layers) {
            dst.clone_from(src);
        }
        Ok(())
    }
}

pub fn adam_sections(prefix: &str, state: &AdamState) -> Vec<Section> {
    let mut step = Dense::zeros(1, 1);
    step.weights[[0, 0]] = state.step as f64;
    vec![
        Section {
            name: format!("{prefix}.step"),
            layers: vec![step],
        },
        Section {
            name: format!("{prefix}.m"),
            layers: state.first.clone(),
        },
        Section {
            name: format!("{prefix}.v"),
            layers: state.second.clone(),
        },
    ]
}

pub fn write_checkpoint<W: Write>(mut w: W, sections: &[Section]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(&mut w, sections.len())?;
    for s in sections {
        write_u32(&mut w, s.name.len())?;
        w.write_all(s.name.as_bytes())?;
        write_u32(&mut w, s.layers.len())?;
        for l in &s.layers {
            write_u32(&mut w, l.output_dim())?;
            write_u32(&mut w, l.input_dim())?;
            for v in l.weights.iter().chain(l.biases.iter()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<Section>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let n = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let len = read_u32(&mut r)?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let count = read_u32(&mut r)?;
        let mut layers = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let rows = read_u32(&mut r)?;
            let cols = read_u32(&mut r)?;
            let mut weights = Array2::zeros((rows, cols));
            for v in weights.iter_mut() {
                *v = read_f64(&mut r)?;
            }
            let mut biases = Array1::zeros(rows);
            for v in biases.iter_mut() {
                *v = read_f64(&mut r)?;
            }
            layers.push(Dense { weights, biases });
        }
        out.push(Section { name, layers });
    }
    Ok(out)
}

pub fn find_section<'a>(sections: &'a [Section], name: &str) -> Result<&'a Section> {
    sections
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Checkpoint(format!("missing section `{name}`")))
}

pub fn load_adam(sections: &[Section], prefix: &str, params: &impl Layered) -> Result<AdamState> {
    let mut state = AdamState::new(params);
    let step = find_section(sections, &format!("{prefix}.step"))?;
    state.step = step
        .layers
        .first()
        .and_then(|l| l.weights.first().copied())
        .ok_or_else(|| Error::Checkpoint(format!("empty `{prefix}.step`")))? as u64;
    let mut first = Moments(&mut state.first);
    find_section(sections, &format!("{prefix}.m"))?.load_into(&mut first)?;
    let mut second = Moments(&mut state.second);
    find_section(sections, &format!("{prefix}.v"))?.load_into(&mut second)?;
    Ok(state)
}

struct Moments<'a>(&'a mut Vec<Dense>);

impl Layered for Moments<'_> {
    fn layers(&self) -> Vec<&Dense> {
        self.0.iter().collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        self.0.iter_mut().collect()
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
