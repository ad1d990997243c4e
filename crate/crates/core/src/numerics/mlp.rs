use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::array::Array;
use super::math;
use super::params::ParamSet;
use super::rng::Rng;
use super::tape::{Mat, Tape, Var};
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

/// Glorot-uniform weights and zero biases for a fully connected stack.
///
/// Entries are named `w0, b0, w1, b1, ...`; `w{i}` has shape
/// `[dims[i], dims[i+1]]`.
pub fn mlp_init(layer_dims: &[usize], rng: &mut Rng) -> Result<ParamSet> {
    if layer_dims.len() < 2 {
        bail!(Config, "an MLP needs at least two layer sizes, got {:?}", layer_dims);
    }
    if layer_dims.iter().any(|&d| d == 0) {
        bail!(Config, "layer sizes must be positive, got {:?}", layer_dims);
    }
    let mut entries = Vec::with_capacity(2 * (layer_dims.len() - 1));
    for (i, pair) in layer_dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.uniform_in(-limit, limit)).collect();
        entries.push((format!("w{}", i), Array::new(alloc::vec![fan_in, fan_out], w)?));
        entries.push((format!("b{}", i), Array::zeros(&[fan_out])));
    }
    ParamSet::new(entries)
}

/// Layer sizes implied by a parameter set built by [`mlp_init`].
pub(crate) fn layer_dims(params: &ParamSet) -> Result<Vec<usize>> {
    let entries = params.entries();
    if entries.is_empty() || entries.len() % 2 != 0 {
        bail!(Shape, "an MLP parameter set has (weight, bias) pairs, got {} entries", entries.len());
    }
    let mut dims = Vec::new();
    for (i, pair) in entries.chunks(2).enumerate() {
        let (w, b) = (&pair[0].1, &pair[1].1);
        let [fan_in, fan_out] = *w.shape() else {
            bail!(Shape, "weight {} must be rank 2, got {:?}", i, w.shape());
        };
        if b.shape() != [fan_out] {
            bail!(Shape, "bias {} must have shape [{}], got {:?}", i, fan_out, b.shape());
        }
        if let Some(&prev) = dims.last() {
            if prev != fan_in {
                bail!(Shape, "layer {} expects {} inputs but the previous layer gives {}", i, fan_in, prev);
            }
        } else {
            dims.push(fan_in);
        }
        dims.push(fan_out);
    }
    Ok(dims)
}

/// Forward pass on the tape. `x` is `n x in_dim`; `params` are the tape
/// variables of an MLP parameter set in entry order. No activation after the
/// last layer.
pub fn mlp_forward_tape(tape: &mut Tape, params: &[Var], x: Var, activation: Activation) -> Var {
    let layers = params.len() / 2;
    let mut h = x;
    for l in 0..layers {
        let z = tape.matmul(h, params[2 * l]);
        let z = tape.add_row(z, params[2 * l + 1]);
        h = if l + 1 == layers {
            z
        } else {
            match activation {
                Activation::Relu => tape.relu(z),
                Activation::Tanh => tape.tanh(z),
            }
        };
    }
    h
}

/// Logits for a batch of inputs (rows of `xs`).
pub fn mlp_forward_batch(params: &ParamSet, xs: &Mat, activation: Activation) -> Result<Mat> {
    let dims = layer_dims(params)?;
    if xs.cols != dims[0] {
        bail!(Shape, "input has {} features, network expects {}", xs.cols, dims[0]);
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> =
        params.arrays().map(|a| Mat::from_array(a).map(|m| tape.constant(m))).collect::<Result<_>>()?;
    let x = tape.constant(xs.clone());
    let out = mlp_forward_tape(&mut tape, &vars, x, activation);
    Ok(tape.value(out).clone())
}

/// Logits for a single feature vector.
pub fn mlp_forward(params: &ParamSet, x: &Array, activation: Activation) -> Result<Array> {
    if x.shape().len() != 1 {
        bail!(Shape, "expected a feature vector, got shape {:?}", x.shape());
    }
    let out = mlp_forward_batch(params, &Mat::from_array(x)?, activation)?;
    let n = out.cols;
    Ok(out.to_array(&[n]))
}
