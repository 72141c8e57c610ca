//! Runs a layer stack under a [`HaltPolicy`] and applies the per-unit decisions.
//!
//! Every layer is executed for every unit so that its L2 progress can be
//! measured; the skip mode only decides which hidden state is carried forward.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{LacError, Result};
use crate::halting::{progress, HaltPolicy, ProgressHistory, SkipMode};
use crate::tensor::{l2_norm, NormGranularity, Tensor};

/// An ordered sequence of shape-preserving step functions.
///
/// `apply_layer` takes `&mut self` so that stateful stacks (a transformer with a
/// key/value cache) can be driven by the same executor as pure ones.
pub trait LayerStack {
    fn layer_count(&self) -> usize;
    fn apply_layer(&mut self, index: usize, h: &Tensor) -> Result<Tensor>;
}

pub type StepFn = Arc<dyn Fn(&Tensor) -> Result<Tensor> + Send + Sync>;

/// A stack of stateless closures.
#[derive(Clone, Default)]
pub struct FnStack {
    layers: Vec<StepFn>,
}

impl FnStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<F>(&mut self, f: F)
    where
        F: Fn(&Tensor) -> Result<Tensor> + Send + Sync + 'static,
    {
        self.layers.push(Arc::new(f));
    }

    pub fn from_steps(layers: Vec<StepFn>) -> Self {
        Self { layers }
    }

    /// The same stack with the zero-based layers in `removed` dropped.
    pub fn without(&self, removed: &BTreeSet<usize>) -> FnStack {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, f)| Arc::clone(f))
            .collect();
        FnStack { layers }
    }
}

impl LayerStack for FnStack {
    fn layer_count(&self) -> usize {
        self.layers.len()
    }

    fn apply_layer(&mut self, index: usize, h: &Tensor) -> Result<Tensor> {
        (self.layers[index])(h)
    }
}

/// Layer that rescales every token vector so its L2 norm grows by `increment`.
/// A zero vector gets `increment` written into its first component.
pub fn norm_increment_layer(increment: f32) -> StepFn {
    Arc::new(move |h: &Tensor| {
        let (_, _, d) = h.dims3()?;
        let mut out = h.clone();
        if d == 0 {
            return Ok(out);
        }
        for row in out.data_mut().chunks_mut(d) {
            let n = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if n == 0.0 {
                row[0] = increment;
            } else {
                let s = ((n + increment as f64) / n) as f32;
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
        Ok(out)
    })
}

/// Stack whose layer `t` adds `increments[t]` to every token's norm.
pub fn scripted_norm_stack(increments: &[f32]) -> FnStack {
    FnStack::from_steps(
        increments
            .iter()
            .map(|&i| norm_increment_layer(i))
            .collect(),
    )
}

/// Result of [`run_stack`]. Per-layer arrays are indexed `[layer][unit]`.
#[derive(Debug, Clone)]
pub struct ExecutionOutcome {
    pub final_hidden: Tensor,
    pub granularity: NormGranularity,
    pub batch: usize,
    pub length: usize,
    /// Norm of the input hidden state per unit.
    pub input_norms: Vec<f32>,
    pub void: Vec<Vec<bool>>,
    /// Norm of each layer's candidate output per unit.
    pub norms: Vec<Vec<f32>>,
    pub deltas: Vec<Vec<f32>>,
    pub thresholds: Vec<Vec<f32>>,
}

impl ExecutionOutcome {
    pub fn layer_count(&self) -> usize {
        self.void.len()
    }

    fn unit(&self, example: usize, token: usize) -> usize {
        self.granularity.unit_of(example, token, self.length)
    }

    /// Activation flags (true = activated) of the unit owning `(example, token)`.
    pub fn token_flags(&self, example: usize, token: usize) -> Vec<bool> {
        let u = self.unit(example, token);
        self.void.iter().map(|layer| !layer[u]).collect()
    }

    pub fn token_norms(&self, example: usize, token: usize) -> Vec<f32> {
        let u = self.unit(example, token);
        self.norms.iter().map(|layer| layer[u]).collect()
    }

    pub fn token_deltas(&self, example: usize, token: usize) -> Vec<f32> {
        let u = self.unit(example, token);
        self.deltas.iter().map(|layer| layer[u]).collect()
    }

    pub fn void_layers(&self, unit: usize) -> BTreeSet<usize> {
        (0..self.layer_count())
            .filter(|&t| self.void[t][unit])
            .collect()
    }
}

/// Copy of `h` with example `example` zeroed.
pub fn mask_example(h: &Tensor, example: usize) -> Result<Tensor> {
    let (b, l, d) = h.dims3()?;
    if example >= b {
        return Err(LacError::IndexOutOfRange {
            index: example,
            extent: b,
        });
    }
    let mut out = h.clone();
    out.data_mut()[example * l * d..(example + 1) * l * d].fill(0.0);
    Ok(out)
}

/// Copy of `h` with token `(example, token)` zeroed.
pub fn mask_token(h: &Tensor, example: usize, token: usize) -> Result<Tensor> {
    let range = h.token_range(example, token)?;
    let mut out = h.clone();
    out.data_mut()[range].fill(0.0);
    Ok(out)
}

fn apply_checked<S: LayerStack + ?Sized>(
    stack: &mut S,
    index: usize,
    h: &Tensor,
) -> Result<Tensor> {
    let out = stack.apply_layer(index, h)?;
    if out.shape() != h.shape() {
        return Err(LacError::LayerShape {
            layer: index + 1,
            expected: h.shape().to_vec(),
            actual: out.shape().to_vec(),
        });
    }
    Ok(out)
}

/// Rebuilds the next hidden state from the candidate for every unit flagged in `void`.
fn resolve(
    mode: SkipMode,
    granularity: NormGranularity,
    before: &Tensor,
    mut candidate: Tensor,
    void: &[bool],
) -> Result<Tensor> {
    if mode.is_passive() || !void.iter().any(|&v| v) {
        return Ok(candidate);
    }
    let (b, l, _) = candidate.dims3()?;
    for e in 0..b {
        for t in 0..l {
            if !void[granularity.unit_of(e, t, l)] {
                continue;
            }
            let range = candidate.token_range(e, t)?;
            match mode {
                SkipMode::MaskZero => candidate.data_mut()[range].fill(0.0),
                SkipMode::SkipIdentity | SkipMode::HaltFrozen => {
                    candidate.data_mut()[range.clone()].copy_from_slice(&before.data()[range])
                }
                SkipMode::Detect | SkipMode::Off => unreachable!(),
            }
        }
    }
    Ok(candidate)
}

/// Executes layers in order, measuring progress and applying `policy.skip_mode`.
pub fn run_stack<S: LayerStack + ?Sized>(
    stack: &mut S,
    h0: &Tensor,
    policy: &HaltPolicy,
) -> Result<ExecutionOutcome> {
    let layer_count = stack.layer_count();
    policy.validate(layer_count)?;
    let (batch, length, _) = h0.dims3()?;
    let g = policy.granularity;
    let units = g.unit_count(batch, length);

    let mut history = ProgressHistory::new(units);
    let mut h = h0.clone();
    let mut prev_norm = l2_norm(&h, g)?;
    let mut outcome = ExecutionOutcome {
        final_hidden: Tensor::zeros(&[0]),
        granularity: g,
        batch,
        length,
        input_norms: prev_norm.data().to_vec(),
        void: Vec::with_capacity(layer_count),
        norms: Vec::with_capacity(layer_count),
        deltas: Vec::with_capacity(layer_count),
        thresholds: Vec::with_capacity(layer_count),
    };

    for t in 0..layer_count {
        let candidate = apply_checked(stack, t, &h)?;
        let cand_norm = l2_norm(&candidate, g)?;
        let delta = progress(&prev_norm, &cand_norm)?.reshape(vec![units])?;

        let (void, lambda) = if policy.skip_mode == SkipMode::Off {
            (vec![false; units], vec![0.0; units])
        } else {
            let d = history.observe(&delta, policy)?;
            (d.void, d.threshold)
        };

        let next = resolve(policy.skip_mode, g, &h, candidate, &void)?;
        prev_norm = if policy.skip_mode.is_passive() {
            cand_norm.clone()
        } else {
            l2_norm(&next, g)?
        };
        h = next;

        outcome.norms.push(cand_norm.into_data());
        outcome.deltas.push(delta.into_data());
        outcome.void.push(void);
        outcome.thresholds.push(lambda);
    }
    outcome.final_hidden = h;
    Ok(outcome)
}

/// SkipIdentity with a predetermined set of zero-based void layers applied to
/// every unit, bypassing the controller.
pub fn run_stack_with_voids<S: LayerStack + ?Sized>(
    stack: &mut S,
    h0: &Tensor,
    voids: &BTreeSet<usize>,
) -> Result<Tensor> {
    let mut h = h0.clone();
    for t in 0..stack.layer_count() {
        let candidate = apply_checked(stack, t, &h)?;
        if !voids.contains(&t) {
            h = candidate;
        }
    }
    Ok(h)
}
