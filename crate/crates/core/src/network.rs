//! Shallow fully connected network with a four-neuron output layer, and the
//! evidential / Gaussian transforms that turn the raw outputs into
//! distribution parameters.
//!
//! Parameters are stored as one flat vector so the optimizers can treat them
//! uniformly. Layer `l` occupies `in * out` weights in row-major `[in][out]`
//! order followed by `out` biases.
//!
//! Three forward paths exist:
//! - [`Parameters::forward`] records everything on a [`Tape`] so gradients
//!   with respect to every weight are available;
//! - [`Parameters::theta`] evaluates a single input with plain arithmetic;
//! - [`Parameters::forward_batch`] / [`Parameters::backward_batch`] run a
//!   mini-batch through dense matrix products. Training uses this path and
//!   differentiates only the loss on the tape.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, Tape, Var};
use crate::error::{Error, Result};

/// Number of raw output neurons (θ₁..θ₄).
pub const OUTPUT_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn on_tape(self, tape: &mut Tape, z: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(z),
            Activation::Relu => tape.relu(z),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidParameter(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub width: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<HiddenLayer>,
    pub output_dim: usize,
}

impl Default for Architecture {
    /// Two hidden layers of 64 tanh units.
    fn default() -> Self {
        Architecture::mlp(&[64, 64], Activation::Tanh)
    }
}

impl Architecture {
    /// Scalar input, the given hidden widths, four outputs.
    pub fn mlp(widths: &[usize], activation: Activation) -> Self {
        Architecture {
            input_dim: 1,
            hidden: widths.iter().map(|&width| HiddenLayer { width, activation }).collect(),
            output_dim: OUTPUT_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.input_dim != 1 {
            problems.push(format!("input_dim must be 1, got {}", self.input_dim));
        }
        if self.output_dim != OUTPUT_DIM {
            problems.push(format!("output_dim must be {OUTPUT_DIM}, got {}", self.output_dim));
        }
        for (i, l) in self.hidden.iter().enumerate() {
            if l.width == 0 {
                problems.push(format!("hidden layer {i} has width 0"));
            }
        }
        let total = self.layers().iter().try_fold(0usize, |acc, &(i, o, _)| {
            i.checked_mul(o)?.checked_add(o)?.checked_add(acc)
        });
        if !total.is_some_and(|n| n <= MAX_PARAMETERS) {
            problems.push(format!("network exceeds {MAX_PARAMETERS} parameters"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// `(fan_in, fan_out, activation)` for every dense layer; the output layer
    /// has no activation.
    fn layers(&self) -> Vec<(usize, usize, Option<Activation>)> {
        let mut out = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.input_dim;
        for l in &self.hidden {
            out.push((fan_in, l.width, Some(l.activation)));
            fan_in = l.width;
        }
        out.push((fan_in, self.output_dim, None));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.layers().iter().map(|&(i, o, _)| i * o + o).sum()
    }

    /// Compact descriptor such as `1-64tanh-64tanh-4`.
    pub fn describe(&self) -> String {
        let mut s = self.input_dim.to_string();
        for l in &self.hidden {
            s.push_str(&format!("-{}{}", l.width, l.activation));
        }
        s.push_str(&format!("-{}", self.output_dim));
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerSlice {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
    activation: Option<Activation>,
}

impl LayerSlice {
    fn bias_offset(&self) -> usize {
        self.offset + self.fan_in * self.fan_out
    }
}

/// Network weights ω.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    arch: Architecture,
    values: Vec<f64>,
    slices: Vec<LayerSlice>,
}

/// Activations kept from [`Parameters::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchCache {
    /// Layer inputs; `activations[0]` is the batch of `x`.
    activations: Vec<Array2<f64>>,
    /// Raw outputs, one row per sample.
    pub theta: Array2<f64>,
}

fn slices_for(arch: &Architecture) -> Vec<LayerSlice> {
    let mut offset = 0;
    arch.layers()
        .into_iter()
        .map(|(fan_in, fan_out, activation)| {
            let s = LayerSlice {
                fan_in,
                fan_out,
                offset,
                activation,
            };
            offset += fan_in * fan_out + fan_out;
            s
        })
        .collect()
}

impl Parameters {
    /// Weights uniform on `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`
    /// per layer, biases zero. Draws come from ChaCha8 seeded with `seed`,
    /// layer by layer in storage order.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slices = slices_for(arch);
        let mut values = Vec::with_capacity(arch.num_parameters());
        for s in &slices {
            let a = (6.0 / (s.fan_in + s.fan_out) as f64).sqrt();
            for _ in 0..s.fan_in * s.fan_out {
                values.push(rng.random_range(-a..=a));
            }
            values.extend(std::iter::repeat_n(0.0, s.fan_out));
        }
        Ok(Parameters {
            arch: arch.clone(),
            values,
            slices,
        })
    }

    pub fn from_values(arch: &Architecture, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let expected = arch.num_parameters();
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Parameters {
            arch: arch.clone(),
            values,
            slices: slices_for(arch),
        })
    }

    pub fn zeros(arch: &Architecture) -> Result<Self> {
        Self::from_values(arch, vec![0.0; arch.num_parameters()])
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Records the network on `tape` with every weight as a leaf, in
    /// flattened order, and returns the four raw outputs.
    pub fn forward(&self, tape: &mut Tape, x: f64) -> Result<[Var; OUTPUT_DIM]> {
        let weights: Vec<Var> = self.values.iter().map(|&w| tape.var(w)).collect();
        self.forward_with(tape, &weights, x)
    }

    /// Same as [`forward`](Self::forward) but reuses weight leaves that are
    /// already registered (several samples on one tape).
    pub fn forward_with(&self, tape: &mut Tape, weights: &[Var], x: f64) -> Result<[Var; OUTPUT_DIM]> {
        if weights.len() != self.values.len() {
            return Err(Error::LengthMismatch {
                expected: self.values.len(),
                got: weights.len(),
            });
        }
        let mut layer_in = vec![tape.constant(x)];
        for s in &self.slices {
            let mut next = Vec::with_capacity(s.fan_out);
            for j in 0..s.fan_out {
                let mut acc = weights[s.bias_offset() + j];
                for (i, &a) in layer_in.iter().enumerate() {
                    let p = tape.mul(a, weights[s.offset + i * s.fan_out + j]);
                    acc = tape.add(acc, p);
                }
                next.push(match s.activation {
                    Some(act) => act.on_tape(tape, acc),
                    None => acc,
                });
            }
            layer_in = next;
        }
        tape.check()?;
        Ok([layer_in[0], layer_in[1], layer_in[2], layer_in[3]])
    }

    /// Raw outputs for a single input without recording a graph.
    pub fn theta(&self, x: f64) -> [f64; OUTPUT_DIM] {
        let mut layer_in = vec![x];
        for s in &self.slices {
            let w = &self.values[s.offset..s.bias_offset()];
            let b = &self.values[s.bias_offset()..s.bias_offset() + s.fan_out];
            let mut next = b.to_vec();
            for (i, &a) in layer_in.iter().enumerate() {
                let row = &w[i * s.fan_out..(i + 1) * s.fan_out];
                for (n, &wij) in next.iter_mut().zip(row) {
                    *n += a * wij;
                }
            }
            if let Some(act) = s.activation {
                next.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            layer_in = next;
        }
        [layer_in[0], layer_in[1], layer_in[2], layer_in[3]]
    }

    fn weight_view(&self, s: &LayerSlice) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((s.fan_in, s.fan_out), &self.values[s.offset..s.bias_offset()])
            .expect("layer slice matches its shape")
    }

    /// Batched forward pass; `theta` has one row per input.
    pub fn forward_batch(&self, xs: &[f64]) -> Result<BatchCache> {
        let input = Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
        let mut activations = vec![input];
        let last = self.slices.len() - 1;
        for (l, s) in self.slices.iter().enumerate() {
            let bias = ndarray::ArrayView1::from(&self.values[s.bias_offset()..s.bias_offset() + s.fan_out]);
            let mut z = activations[l].dot(&self.weight_view(s));
            z += &bias;
            if let Some(act) = s.activation {
                z.mapv_inplace(|v| act.apply(v));
            }
            if l == last {
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Eval {
                        node: l,
                        op: "dense",
                        reason: "non-finite network output".into(),
                    });
                }
                return Ok(BatchCache { activations, theta: z });
            }
            activations.push(z);
        }
        unreachable!("architecture always has an output layer")
    }

    /// Back-propagates `d_theta` (∂loss/∂θ, one row per sample) to a gradient
    /// aligned with the flattened parameters.
    pub fn backward_batch(&self, cache: &BatchCache, d_theta: &Array2<f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.values.len()];
        let mut delta = d_theta.clone();
        for (l, s) in self.slices.iter().enumerate().rev() {
            let a_in = &cache.activations[l];
            let dw = a_in.t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            grad[s.offset..s.bias_offset()].copy_from_slice(dw.as_slice().expect("standard layout"));
            grad[s.bias_offset()..s.bias_offset() + s.fan_out].copy_from_slice(db.as_slice().expect("standard layout"));
            if l == 0 {
                break;
            }
            let mut d_in = delta.dot(&self.weight_view(s).t());
            let act = self.slices[l - 1]
                .activation
                .expect("hidden layers carry an activation");
            ndarray::Zip::from(&mut d_in)
                .and(a_in)
                .for_each(|d, &a| *d *= act.derivative_from_output(a));
            delta = d_in;
        }
        grad
    }

    /// Text checkpoint; see [`Parameters::from_checkpoint_str`] for the layout.
    pub fn to_checkpoint_string(&self) -> String {
        let mut s = String::with_capacity(self.values.len() * 24 + 128);
        s.push_str(CHECKPOINT_MAGIC);
        s.push('\n');
        s.push_str(&format!("input_dim {}\n", self.arch.input_dim));
        for l in &self.arch.hidden {
            s.push_str(&format!("hidden {} {}\n", l.width, l.activation));
        }
        s.push_str(&format!("output_dim {}\n", self.arch.output_dim));
        s.push_str(&format!("params {}\n", self.values.len()));
        for v in &self.values {
            s.push_str(&format!("{v:?}\n"));
        }
        s
    }

    /// Parses a checkpoint:
    ///
    /// ```text
    /// derlab-checkpoint v1
    /// input_dim 1
    /// hidden 64 tanh        (one line per hidden layer)
    /// output_dim 4
    /// params 4548
    /// <one value per line, shortest round-trip decimal>
    /// ```
    pub fn from_checkpoint_str(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i as u64 + 1, l.trim()));
        let err = |line: u64, msg: String| Error::parse(origin, line, msg);

        match lines.next() {
            Some((_, CHECKPOINT_MAGIC)) => {}
            Some((n, other)) => return Err(err(n, format!("expected `{CHECKPOINT_MAGIC}`, found `{other}`"))),
            None => return Err(err(1, "empty checkpoint".into())),
        }

        let mut input_dim = None;
        let mut hidden = Vec::new();
        let mut output_dim = None;
        let count = loop {
            let Some((n, line)) = lines.next() else {
                return Err(err(0, "missing `params` header".into()));
            };
            let mut words = line.split_whitespace();
            let key = words.next().unwrap_or("");
            let rest: Vec<&str> = words.collect();
            let one_usize = |rest: &[&str]| -> Result<usize> {
                match rest {
                    [v] => v.parse().map_err(|_| err(n, format!("invalid count `{v}`"))),
                    _ => Err(err(n, format!("`{key}` takes one value"))),
                }
            };
            match key {
                "input_dim" => input_dim = Some(one_usize(&rest)?),
                "output_dim" => output_dim = Some(one_usize(&rest)?),
                "hidden" => {
                    let [w, a] = rest[..] else {
                        return Err(err(n, "`hidden` takes a width and an activation".into()));
                    };
                    let width = w.parse().map_err(|_| err(n, format!("invalid width `{w}`")))?;
                    let activation = a.parse().map_err(|e: Error| err(n, e.to_string()))?;
                    hidden.push(HiddenLayer { width, activation });
                }
                "params" => break one_usize(&rest)?,
                other => return Err(err(n, format!("unknown key `{other}`"))),
            }
        };

        let arch = Architecture {
            input_dim: input_dim.ok_or_else(|| err(0, "missing `input_dim`".into()))?,
            hidden,
            output_dim: output_dim.ok_or_else(|| err(0, "missing `output_dim`".into()))?,
        };
        arch.validate().map_err(|e| err(0, e.to_string()))?;
        if arch.num_parameters() != count {
            return Err(err(
                0,
                format!(
                    "architecture needs {} parameters, header says {count}",
                    arch.num_parameters()
                ),
            ));
        }

        let mut values = Vec::with_capacity(count);
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| err(n, format!("invalid number `{line}`")))?;
            if !v.is_finite() {
                return Err(err(n, format!("non-finite parameter `{line}`")));
            }
            values.push(v);
        }
        if values.len() != count {
            return Err(err(0, format!("expected {count} parameters, found {}", values.len())));
        }
        Parameters::from_values(&arch, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text, &path.display().to_string())
    }
}

const CHECKPOINT_MAGIC: &str = "derlab-checkpoint v1";

/// Normal-inverse-gamma parameters m = (γ, ν, α, β) of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NigParams {
    pub gamma: f64,
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NigParams {
    /// γ = θ₁, ν = softplus(θ₂), α = softplus(θ₃) + 1, β = softplus(θ₄).
    ///
    /// For θ₃ below about −36 the sum `1 + softplus(θ₃)` rounds to exactly 1;
    /// α is then held at [`ALPHA_FLOOR`] so that α > 1 survives rounding.
    pub fn from_theta(theta: [f64; OUTPUT_DIM]) -> Self {
        NigParams {
            gamma: theta[0],
            nu: softplus(theta[1]),
            alpha: (softplus(theta[2]) + 1.0).max(ALPHA_FLOOR),
            beta: softplus(theta[3]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu > 0.0 && self.alpha > 1.0 && self.beta > 0.0 && self.gamma.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "NIG parameters out of range: {self:?} (need nu > 0, alpha > 1, beta > 0)"
            )))
        }
    }
}

/// Mean and variance σ² = β/ν of the Gaussian head (θ₃ unused).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub gamma: f64,
    pub nu: f64,
    pub beta: f64,
    pub sigma_sq: f64,
}

impl GaussianParams {
    pub fn from_theta(theta: [f64; OUTPUT_DIM]) -> Self {
        let nu = softplus(theta[1]);
        let beta = softplus(theta[3]);
        GaussianParams {
            gamma: theta[0],
            nu,
            beta,
            sigma_sq: beta / nu,
        }
    }
}

/// [`NigParams`] as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct NigNodes {
    pub gamma: Var,
    pub nu: Var,
    pub alpha: Var,
    pub beta: Var,
}

impl NigNodes {
    pub fn values(&self, tape: &Tape) -> NigParams {
        NigParams {
            gamma: tape.value(self.gamma),
            nu: tape.value(self.nu),
            alpha: tape.value(self.alpha),
            beta: tape.value(self.beta),
        }
    }
}

/// [`GaussianParams`] as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct GaussianNodes {
    pub gamma: Var,
    pub nu: Var,
    pub beta: Var,
    pub sigma_sq: Var,
}

impl GaussianNodes {
    pub fn values(&self, tape: &Tape) -> GaussianParams {
        GaussianParams {
            gamma: tape.value(self.gamma),
            nu: tape.value(self.nu),
            beta: tape.value(self.beta),
            sigma_sq: tape.value(self.sigma_sq),
        }
    }
}

/// Upper bound on [`Architecture::num_parameters`].
pub const MAX_PARAMETERS: usize = 1 << 26;

/// Smallest representable α above 1.
pub const ALPHA_FLOOR: f64 = 1.0 + f64::EPSILON;

pub fn evidential_head(tape: &mut Tape, theta: [Var; OUTPUT_DIM]) -> NigNodes {
    let nu = tape.softplus(theta[1]);
    let sp = tape.softplus(theta[2]);
    let mut alpha = tape.add_const(sp, 1.0);
    if tape.value(alpha) < ALPHA_FLOOR {
        alpha = tape.constant(ALPHA_FLOOR);
    }
    let beta = tape.softplus(theta[3]);
    NigNodes {
        gamma: theta[0],
        nu,
        alpha,
        beta,
    }
}

pub fn gaussian_head(tape: &mut Tape, theta: [Var; OUTPUT_DIM]) -> GaussianNodes {
    let nu = tape.softplus(theta[1]);
    let beta = tape.softplus(theta[3]);
    let sigma_sq = tape.div(beta, nu);
    GaussianNodes {
        gamma: theta[0],
        nu,
        beta,
        sigma_sq,
    }
}
