//! Single-hidden-layer autoencoder: forward pass, regularized reconstruction
//! cost, backpropagation gradient, and full-batch training.
//!
//! The network maps an input vector of length `M` through a hidden layer of
//! `H < M` sigmoid units back to an output of length `M`. Training minimizes
//! the mean squared reconstruction error plus an L2 penalty on the weights
//! (biases are not penalized):
//!
//! ```text
//! J(W, b) = (1/T) * sum_i (1/2) * ||output(x[i]) - x[i]||^2
//!         + (lambda/2) * sum over both weight matrices of W_ij^2
//! ```
//!
//! All math is `f64`. Operations are pure functions of their arguments; the
//! only randomness is the seeded uniform weight initialization in
//! [`init_params`].

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Layer sizes of the network: `M` inputs, `H < M` hidden units, `M` outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkShape {
    input_dim: usize,
    hidden_dim: usize,
}

impl NetworkShape {
    /// Validates `1 <= hidden_dim < input_dim` (the network must compress).
    pub fn new(input_dim: usize, hidden_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be at least 1"));
        }
        if hidden_dim == 0 {
            return Err(Error::invalid("hidden_dim", "must be at least 1"));
        }
        if hidden_dim >= input_dim {
            return Err(Error::invalid(
                "hidden_dim",
                format!("must be smaller than input_dim ({hidden_dim} >= {input_dim})"),
            ));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// `1 - hidden_dim / input_dim`.
    pub fn compression_ratio(&self) -> f64 {
        1.0 - self.hidden_dim as f64 / self.input_dim as f64
    }
}

/// Weights and biases of the two layers.
///
/// `w_hidden` is `H x M`, `w_output` is `M x H`; biases match the destination
/// layer. These are the values exchanged between the cloud and the sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub w_hidden: Array2<f64>,
    pub b_hidden: Array1<f64>,
    pub w_output: Array2<f64>,
    pub b_output: Array1<f64>,
}

impl ModelParams {
    pub fn zeros(shape: NetworkShape) -> Self {
        let (m, h) = (shape.input_dim, shape.hidden_dim);
        Self {
            w_hidden: Array2::zeros((h, m)),
            b_hidden: Array1::zeros(h),
            w_output: Array2::zeros((m, h)),
            b_output: Array1::zeros(m),
        }
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            input_dim: self.w_hidden.ncols(),
            hidden_dim: self.w_hidden.nrows(),
        }
    }

    /// Checks internal shape consistency and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        let (h, m) = (self.w_hidden.nrows(), self.w_hidden.ncols());
        if self.b_hidden.len() != h {
            return Err(Error::DimensionMismatch {
                context: "b_hidden",
                expected: h,
                actual: self.b_hidden.len(),
            });
        }
        if self.w_output.nrows() != m || self.w_output.ncols() != h {
            return Err(Error::DimensionMismatch {
                context: "w_output rows",
                expected: m,
                actual: self.w_output.nrows(),
            });
        }
        if self.b_output.len() != m {
            return Err(Error::DimensionMismatch {
                context: "b_output",
                expected: m,
                actual: self.b_output.len(),
            });
        }
        let finite = self.w_hidden.iter().all(|v| v.is_finite())
            && self.b_hidden.iter().all(|v| v.is_finite())
            && self.w_output.iter().all(|v| v.is_finite())
            && self.b_output.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("params", "contains NaN or infinite entries"));
        }
        Ok(())
    }

    /// Sum of squared weights over both layers (biases excluded).
    pub fn weight_square_sum(&self) -> f64 {
        let w1: f64 = self.w_hidden.iter().map(|w| w * w).sum();
        let w2: f64 = self.w_output.iter().map(|w| w * w).sum();
        w1 + w2
    }

    /// Serialized size in bytes of the binary encoding written by [`write_model`].
    pub fn encoded_len(&self) -> usize {
        let shape = self.shape();
        let (m, h) = (shape.input_dim, shape.hidden_dim);
        MODEL_MAGIC.len() + 16 + 8 * (h * m + h + m * h + m)
    }
}

/// One day of readings: a vector of length `M` with every entry in `[0, 1]`.
///
/// The range restriction comes from the sigmoid output layer, which can only
/// reproduce values in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample(Array1<f64>);

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::from_array(Array1::from_vec(values))
    }

    pub fn from_array(values: Array1<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("sample"));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(v) {
                return Err(Error::invalid(
                    "sample",
                    format!("entry {i} is {v}, outside [0, 1]"),
                ));
            }
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Settings for [`train`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    /// L2 regularization weight; applies to weights only.
    pub lambda: f64,
    /// Base gradient-descent step size.
    pub step_size: f64,
    /// Number of full-batch gradient steps.
    pub epochs: usize,
    /// Half-width of the uniform weight initialization interval.
    pub init_scale: f64,
    /// Seed for weight initialization and retraining-set assembly.
    pub seed: u64,
    /// When set, each epoch halves the step (at most 20 times) until the cost
    /// does not increase, which makes the cost trace non-increasing.
    pub halving: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            step_size: 0.5,
            epochs: 500,
            init_scale: 0.05,
            seed: 0,
            halving: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda", "must be >= 0"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::invalid("step_size", "must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be >= 1"));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::invalid("init_scale", "must be > 0"));
        }
        Ok(())
    }
}

/// Gradient of the cost with respect to every parameter; same shapes as
/// [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Gradient {
    pub w_hidden: Array2<f64>,
    pub b_hidden: Array1<f64>,
    pub w_output: Array2<f64>,
    pub b_output: Array1<f64>,
}

impl Gradient {
    /// Largest absolute entry across all components.
    pub fn max_abs(&self) -> f64 {
        self.w_hidden
            .iter()
            .chain(self.b_hidden.iter())
            .chain(self.w_output.iter())
            .chain(self.b_output.iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

/// Result of [`train`]: final parameters plus the cost after every epoch.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: ModelParams,
    pub cost_trace: Vec<f64>,
}

impl TrainReport {
    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().expect("epochs >= 1")
    }
}

// Sigmoid saturates to exactly 0.0 / 1.0 in f64 for |z| beyond ~37; clamp the
// output so it stays strictly inside (0, 1) for any finite input.
const SIGMOID_FLOOR: f64 = 1e-300;
const SIGMOID_CEIL: f64 = 1.0 - 1e-16;

/// Logistic function `1 / (1 + exp(-z))`, overflow-safe for any finite `z`
/// and clamped to stay strictly inside `(0, 1)`.
pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(SIGMOID_FLOOR, SIGMOID_CEIL)
}

fn sigmoid_inplace(z: &mut Array2<f64>) {
    z.mapv_inplace(sigmoid);
}

fn check_sample_dims(params: &ModelParams, len: usize, context: &'static str) -> Result<()> {
    let m = params.shape().input_dim();
    if len != m {
        return Err(Error::DimensionMismatch {
            context,
            expected: m,
            actual: len,
        });
    }
    Ok(())
}

/// Runs the network on one sample; returns `(hidden activations, output)`.
///
/// Every output entry lies in `(0, 1)`.
pub fn forward(params: &ModelParams, x: &Sample) -> Result<(Array1<f64>, Array1<f64>)> {
    check_sample_dims(params, x.len(), "forward input")?;
    let mut hidden = params.w_hidden.dot(&x.values()) + &params.b_hidden;
    hidden.mapv_inplace(sigmoid);
    let mut output = params.w_output.dot(&hidden) + &params.b_output;
    output.mapv_inplace(sigmoid);
    Ok((hidden, output))
}

/// Naive-loop forward pass that also counts multiply-accumulate operations.
///
/// Used to verify the `O(M * hidden)` per-inference work bound; the counted
/// path doubles as an independent check on the matrix implementation of
/// [`forward`].
pub fn forward_instrumented(
    params: &ModelParams,
    x: &Sample,
) -> Result<(Array1<f64>, Array1<f64>, u64)> {
    check_sample_dims(params, x.len(), "forward input")?;
    let shape = params.shape();
    let (m, h) = (shape.input_dim(), shape.hidden_dim());
    let xv = x.values();
    let mut macs: u64 = 0;

    let mut hidden = Array1::zeros(h);
    for i in 0..h {
        let mut acc = params.b_hidden[i];
        for j in 0..m {
            acc += params.w_hidden[(i, j)] * xv[j];
            macs += 1;
        }
        hidden[i] = sigmoid(acc);
    }
    let mut output = Array1::zeros(m);
    for i in 0..m {
        let mut acc = params.b_output[i];
        for j in 0..h {
            acc += params.w_output[(i, j)] * hidden[j];
            macs += 1;
        }
        output[i] = sigmoid(acc);
    }
    Ok((hidden, output, macs))
}

/// Stacks samples as columns of an `M x T` matrix.
fn stack_samples(params: &ModelParams, samples: &[Sample]) -> Result<Array2<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("samples"));
    }
    let m = params.shape().input_dim();
    let mut x = Array2::zeros((m, samples.len()));
    for (t, s) in samples.iter().enumerate() {
        check_sample_dims(params, s.len(), "cost/gradient sample")?;
        x.column_mut(t).assign(&s.values());
    }
    Ok(x)
}

/// Batched forward pass over sample columns; returns `(A2, A3)` activations.
fn forward_columns(params: &ModelParams, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let b1 = params.b_hidden.view().insert_axis(Axis(1));
    let mut a2 = params.w_hidden.dot(x) + &b1;
    sigmoid_inplace(&mut a2);
    let b2 = params.b_output.view().insert_axis(Axis(1));
    let mut a3 = params.w_output.dot(&a2) + &b2;
    sigmoid_inplace(&mut a3);
    (a2, a3)
}

fn cost_from_outputs(outputs: &Array2<f64>, x: &Array2<f64>, penalty: f64) -> f64 {
    let t = x.ncols() as f64;
    let sq: f64 = outputs
        .iter()
        .zip(x.iter())
        .map(|(o, xi)| (o - xi) * (o - xi))
        .sum();
    sq / (2.0 * t) + penalty
}

/// Mean squared reconstruction error over `samples` plus the L2 weight
/// penalty `(lambda/2) * sum W^2`.
pub fn cost(params: &ModelParams, samples: &[Sample], lambda: f64) -> Result<f64> {
    let x = stack_samples(params, samples)?;
    let (_, a3) = forward_columns(params, &x);
    Ok(cost_from_outputs(
        &a3,
        &x,
        lambda / 2.0 * params.weight_square_sum(),
    ))
}

/// Analytic gradient of [`cost`] by backpropagation.
///
/// The `lambda` term contributes `lambda * W` to the weight components and
/// nothing to the biases.
pub fn gradient(params: &ModelParams, samples: &[Sample], lambda: f64) -> Result<Gradient> {
    let x = stack_samples(params, samples)?;
    Ok(gradient_batched(params, &x, lambda).0)
}

/// Shared batched backprop; also returns the cost at `params` so training can
/// reuse the forward pass.
fn gradient_batched(params: &ModelParams, x: &Array2<f64>, lambda: f64) -> (Gradient, f64) {
    let t = x.ncols() as f64;
    let (a2, a3) = forward_columns(params, x);

    // delta3 = (a3 - x) .* a3 .* (1 - a3), the output-layer error signal
    let mut delta3 = &a3 - x;
    delta3.zip_mut_with(&a3, |d, a| *d *= a * (1.0 - a));

    // delta2 = (W2^T delta3) .* a2 .* (1 - a2)
    let mut delta2 = params.w_output.t().dot(&delta3);
    delta2.zip_mut_with(&a2, |d, a| *d *= a * (1.0 - a));

    let w_output = delta3.dot(&a2.t()) / t + &(lambda * &params.w_output);
    let b_output = delta3.sum_axis(Axis(1)) / t;
    let w_hidden = delta2.dot(&x.t()) / t + &(lambda * &params.w_hidden);
    let b_hidden = delta2.sum_axis(Axis(1)) / t;

    let cost = cost_from_outputs(&a3, x, lambda / 2.0 * params.weight_square_sum());
    (
        Gradient {
            w_hidden,
            b_hidden,
            w_output,
            b_output,
        },
        cost,
    )
}

fn apply_step(params: &ModelParams, grad: &Gradient, step: f64) -> ModelParams {
    ModelParams {
        w_hidden: &params.w_hidden - &(step * &grad.w_hidden),
        b_hidden: &params.b_hidden - &(step * &grad.b_hidden),
        w_output: &params.w_output - &(step * &grad.w_output),
        b_output: &params.b_output - &(step * &grad.b_output),
    }
}

/// Draws weights uniformly from `[-init_scale, +init_scale]`; biases start at
/// zero. Deterministic given `seed`: `w_hidden` is filled row-major first,
/// then `w_output`.
pub fn init_params(shape: NetworkShape, init_scale: f64, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(shape);
    for w in params.w_hidden.iter_mut() {
        *w = rng.random_range(-init_scale..=init_scale);
    }
    for w in params.w_output.iter_mut() {
        *w = rng.random_range(-init_scale..=init_scale);
    }
    params
}

const MAX_HALVINGS: u32 = 20;

/// Runs `config.epochs` full-batch gradient-descent steps from `params`.
///
/// With `config.halving` set, each epoch backtracks (halving the step up to
/// 20 times) until the cost does not increase; an epoch that cannot find a
/// non-increasing step leaves the parameters unchanged. Returns the final
/// parameters and the cost recorded after every epoch.
pub fn train(params: &ModelParams, samples: &[Sample], config: &TrainingConfig) -> Result<TrainReport> {
    config.validate()?;
    params.validate()?;
    let x = stack_samples(params, samples)?;

    let mut current = params.clone();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (grad, cost_here) = gradient_batched(&current, &x, config.lambda);
        if !cost_here.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        if config.halving {
            let mut step = config.step_size;
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                let candidate = apply_step(&current, &grad, step);
                let (_, a3) = forward_columns(&candidate, &x);
                let candidate_cost =
                    cost_from_outputs(&a3, &x, config.lambda / 2.0 * candidate.weight_square_sum());
                if candidate_cost.is_finite() && candidate_cost <= cost_here {
                    current = candidate;
                    trace.push(candidate_cost);
                    accepted = true;
                    break;
                }
                step /= 2.0;
            }
            if !accepted {
                // Stationary (or numerically so); keep the parameters.
                trace.push(cost_here);
            }
        } else {
            current = apply_step(&current, &grad, config.step_size);
            let (_, a3) = forward_columns(&current, &x);
            let new_cost =
                cost_from_outputs(&a3, &x, config.lambda / 2.0 * current.weight_square_sum());
            if !new_cost.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            trace.push(new_cost);
        }
    }
    Ok(TrainReport {
        params: current,
        cost_trace: trace,
    })
}

// --- binary model encoding ---------------------------------------------------

/// 8-byte header of the binary model encoding; bump the trailing digit on any
/// layout change.
pub const MODEL_MAGIC: &[u8; 8] = b"AEMODEL1";

/// Writes the binary model record: the 8-byte magic, `input_dim` and
/// `hidden_dim` as little-endian `u64`, then `w_hidden` (row-major),
/// `b_hidden`, `w_output` (row-major), `b_output` as little-endian `f64`.
pub fn write_model<W: Write>(writer: &mut W, params: &ModelParams) -> Result<()> {
    params.validate()?;
    let shape = params.shape();
    writer.write_all(MODEL_MAGIC)?;
    writer.write_all(&(shape.input_dim() as u64).to_le_bytes())?;
    writer.write_all(&(shape.hidden_dim() as u64).to_le_bytes())?;
    let fields: [&[f64]; 4] = [
        params.w_hidden.as_slice().expect("row-major"),
        params.b_hidden.as_slice().expect("contiguous"),
        params.w_output.as_slice().expect("row-major"),
        params.b_output.as_slice().expect("contiguous"),
    ];
    for field in fields {
        for v in field {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a model record written by [`write_model`].
pub fn read_model<R: Read>(reader: &mut R) -> Result<ModelParams> {
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Malformed {
            what: "model file".into(),
            detail: format!("bad header {magic:?}, expected {MODEL_MAGIC:?}"),
        });
    }
    let mut u64buf = [0u8; 8];
    reader.read_exact(&mut u64buf)?;
    let m = u64::from_le_bytes(u64buf) as usize;
    reader.read_exact(&mut u64buf)?;
    let h = u64::from_le_bytes(u64buf) as usize;
    NetworkShape::new(m, h).map_err(|e| Error::Malformed {
        what: "model file".into(),
        detail: e.to_string(),
    })?;

    let mut read_vec = |len: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            reader.read_exact(&mut buf)?;
            out.push(f64::from_le_bytes(buf));
        }
        Ok(out)
    };
    let w_hidden = Array2::from_shape_vec((h, m), read_vec(h * m)?).expect("shape");
    let b_hidden = Array1::from_vec(read_vec(h)?);
    let w_output = Array2::from_shape_vec((m, h), read_vec(m * h)?).expect("shape");
    let b_output = Array1::from_vec(read_vec(m)?);
    let params = ModelParams {
        w_hidden,
        b_hidden,
        w_output,
        b_output,
    };
    params.validate().map_err(|e| Error::Malformed {
        what: "model file".into(),
        detail: e.to_string(),
    })?;
    Ok(params)
}

pub fn save_model(path: &Path, params: &ModelParams) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_model(&mut file, params)?;
    file.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_model(&mut file)
}
