//! Progress tracking, dynamic thresholds and per-unit void decisions.
//!
//! For every halting unit the controller records the progress
//! `delta_t = ||h_t|| - ||h_{t-1}||` of each executed layer, keeps the running
//! range of all deltas seen so far (including the current one) and flags the
//! layer as a void when `delta_t < alpha * (max - min)`.
//!
//! Layers `1..=min_layers` always execute; a layer can only be flagged once
//! more than `min_layers` deltas have been recorded.

use std::collections::BTreeSet;

use crate::error::{LacError, Result};
use crate::tensor::{NormGranularity, Tensor};

/// How the threshold is derived from the progress range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ThresholdFormula {
    /// `alpha * |max - min|`
    Original,
    /// `alpha * (max - min)`
    Modified,
}

impl ThresholdFormula {
    pub fn name(self) -> &'static str {
        match self {
            ThresholdFormula::Original => "original",
            ThresholdFormula::Modified => "modified",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "original" => Some(ThresholdFormula::Original),
            "modified" => Some(ThresholdFormula::Modified),
            _ => None,
        }
    }

    pub fn apply(self, alpha: f32, max: f32, min: f32) -> f32 {
        match self {
            ThresholdFormula::Original => alpha * (max - min).abs(),
            ThresholdFormula::Modified => alpha * (max - min),
        }
    }
}

/// What the executor does with a unit flagged as a void.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SkipMode {
    /// Record flags only; hidden states are untouched.
    Detect,
    /// Zero the unit's activations before the next layer.
    MaskZero,
    /// The layer acts as the identity for the unit.
    SkipIdentity,
    /// The first void latches the unit; it keeps its pre-latch state to the end.
    HaltFrozen,
    /// Plain forward pass. Norms and deltas are still recorded, nothing is flagged.
    Off,
}

impl SkipMode {
    pub fn name(self) -> &'static str {
        match self {
            SkipMode::Detect => "detect",
            SkipMode::MaskZero => "mask-zero",
            SkipMode::SkipIdentity => "skip-identity",
            SkipMode::HaltFrozen => "halt-frozen",
            SkipMode::Off => "off",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "detect" => Some(SkipMode::Detect),
            "mask-zero" => Some(SkipMode::MaskZero),
            "skip-identity" => Some(SkipMode::SkipIdentity),
            "halt-frozen" => Some(SkipMode::HaltFrozen),
            "off" => Some(SkipMode::Off),
            _ => None,
        }
    }

    /// True for modes whose hidden states equal a plain forward pass.
    pub fn is_passive(self) -> bool {
        matches!(self, SkipMode::Detect | SkipMode::Off)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaltPolicy {
    pub granularity: NormGranularity,
    pub alpha: f32,
    pub formula: ThresholdFormula,
    pub skip_mode: SkipMode,
    pub min_layers: usize,
}

impl HaltPolicy {
    /// Per-token detection with the modified formula and `min_layers = 1`.
    pub fn new(alpha: f32) -> Self {
        Self {
            granularity: NormGranularity::PerToken,
            alpha,
            formula: ThresholdFormula::Modified,
            skip_mode: SkipMode::Detect,
            min_layers: 1,
        }
    }

    pub fn with_mode(mut self, mode: SkipMode) -> Self {
        self.skip_mode = mode;
        self
    }

    pub fn with_granularity(mut self, g: NormGranularity) -> Self {
        self.granularity = g;
        self
    }

    pub fn with_formula(mut self, f: ThresholdFormula) -> Self {
        self.formula = f;
        self
    }

    pub fn with_min_layers(mut self, n: usize) -> Self {
        self.min_layers = n;
        self
    }

    pub fn validate(&self, layer_count: usize) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.min_layers == 0 {
            return Err(LacError::Policy("min_layers must be at least 1".into()));
        }
        if self.min_layers > layer_count {
            return Err(LacError::Policy(format!(
                "min_layers {} exceeds layer count {}",
                self.min_layers, layer_count
            )));
        }
        Ok(())
    }
}

pub fn check_alpha(alpha: f32) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(LacError::Policy(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )))
    }
}

/// Per-unit record of every delta observed so far.
#[derive(Debug, Clone)]
pub struct ProgressHistory {
    units: usize,
    /// `deltas[step][unit]`
    deltas: Vec<Vec<f32>>,
    running_max: Vec<f32>,
    running_min: Vec<f32>,
    latched: Vec<bool>,
}

impl ProgressHistory {
    pub fn new(units: usize) -> Self {
        Self {
            units,
            deltas: Vec::new(),
            running_max: vec![f32::NEG_INFINITY; units],
            running_min: vec![f32::INFINITY; units],
            latched: vec![false; units],
        }
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn step_count(&self) -> usize {
        self.deltas.len()
    }

    pub fn deltas(&self) -> &[Vec<f32>] {
        &self.deltas
    }

    pub fn running_max(&self) -> &[f32] {
        &self.running_max
    }

    pub fn running_min(&self) -> &[f32] {
        &self.running_min
    }

    pub fn is_latched(&self, unit: usize) -> bool {
        self.latched[unit]
    }

    pub fn push(&mut self, delta: &Tensor) -> Result<()> {
        if delta.len() != self.units {
            return Err(LacError::Shape(format!(
                "delta has {} units, history tracks {}",
                delta.len(),
                self.units
            )));
        }
        delta.check_finite()?;
        for (u, &d) in delta.data().iter().enumerate() {
            self.running_max[u] = self.running_max[u].max(d);
            self.running_min[u] = self.running_min[u].min(d);
        }
        self.deltas.push(delta.data().to_vec());
        Ok(())
    }

    /// Appends `delta`, decides, and latches newly halted units under
    /// [`SkipMode::HaltFrozen`].
    pub fn observe(&mut self, delta: &Tensor, policy: &HaltPolicy) -> Result<HaltDecision> {
        self.push(delta)?;
        let decision = decide(self, delta, policy)?;
        if policy.skip_mode == SkipMode::HaltFrozen {
            for (u, &v) in decision.void.iter().enumerate() {
                if v {
                    self.latched[u] = true;
                }
            }
        }
        Ok(decision)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaltDecision {
    pub void: Vec<bool>,
    pub threshold: Vec<f32>,
    pub delta: Vec<f32>,
}

/// Elementwise progress `norm_curr - norm_prev`.
pub fn progress(norm_prev: &Tensor, norm_curr: &Tensor) -> Result<Tensor> {
    if norm_prev.shape() != norm_curr.shape() {
        return Err(LacError::Shape(format!(
            "progress: {:?} vs {:?}",
            norm_prev.shape(),
            norm_curr.shape()
        )));
    }
    let data = norm_prev
        .data()
        .iter()
        .zip(norm_curr.data())
        .map(|(p, c)| c - p)
        .collect();
    Tensor::new(norm_curr.shape().to_vec(), data)
}

/// Per-unit threshold from the recorded range, shape `[units]`.
pub fn threshold(
    history: &ProgressHistory,
    alpha: f32,
    formula: ThresholdFormula,
) -> Result<Tensor> {
    if history.step_count() == 0 {
        return Err(LacError::EmptyHistory);
    }
    check_alpha(alpha)?;
    let data = history
        .running_max
        .iter()
        .zip(&history.running_min)
        .map(|(&max, &min)| formula.apply(alpha, max, min))
        .collect();
    Tensor::new(vec![history.units], data)
}

/// Void flags for the step just appended to `history`.
pub fn decide(
    history: &ProgressHistory,
    delta: &Tensor,
    policy: &HaltPolicy,
) -> Result<HaltDecision> {
    if delta.len() != history.units() {
        return Err(LacError::Shape(format!(
            "delta has {} units, history tracks {}",
            delta.len(),
            history.units()
        )));
    }
    let lambda = threshold(history, policy.alpha, policy.formula)?;
    let eligible = history.step_count() > policy.min_layers;
    let frozen = policy.skip_mode == SkipMode::HaltFrozen;
    let void = delta
        .data()
        .iter()
        .zip(lambda.data())
        .enumerate()
        .map(|(u, (&d, &l))| (frozen && history.latched[u]) || (eligible && d < l))
        .collect();
    Ok(HaltDecision {
        void,
        threshold: lambda.into_data(),
        delta: delta.data().to_vec(),
    })
}

/// Replays a recorded `deltas[step][unit]` sequence through the controller and
/// returns, per unit, the zero-based indices of layers flagged as voids.
pub fn detect_voids_offline(
    delta_sequence: &[Vec<f32>],
    alpha: f32,
    formula: ThresholdFormula,
    min_layers: usize,
) -> Result<Vec<BTreeSet<usize>>> {
    let first = delta_sequence
        .first()
        .ok_or_else(|| LacError::Invalid("empty delta sequence".into()))?;
    let units = first.len();
    let policy = HaltPolicy {
        granularity: NormGranularity::PerToken,
        alpha,
        formula,
        skip_mode: SkipMode::Detect,
        min_layers: min_layers.max(1),
    };
    let mut history = ProgressHistory::new(units);
    let mut voids = vec![BTreeSet::new(); units];
    for (layer, step) in delta_sequence.iter().enumerate() {
        let delta = Tensor::new(vec![step.len()], step.clone())?;
        let decision = history.observe(&delta, &policy)?;
        for (u, &v) in decision.void.iter().enumerate() {
            if v {
                voids[u].insert(layer);
            }
        }
    }
    Ok(voids)
}

/// Single-unit form of [`detect_voids_offline`].
pub fn void_layers(
    deltas: &[f32],
    alpha: f32,
    formula: ThresholdFormula,
    min_layers: usize,
) -> Result<BTreeSet<usize>> {
    let seq: Vec<Vec<f32>> = deltas.iter().map(|&d| vec![d]).collect();
    Ok(detect_voids_offline(&seq, alpha, formula, min_layers)?
        .pop()
        .unwrap_or_default())
}
