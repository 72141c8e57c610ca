//! Aggregate statistics over trace records: per-layer usage, per-layer norm
//! profiles, offline alpha sweeps, and their CSV/JSON exports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{LacError, Result};
use crate::halting::{check_alpha, void_layers, ThresholdFormula};
use crate::trace::{Phase, TraceRecord};

/// Header of the combined per-layer CSV written by [`export_reports`].
pub const REPORT_CSV_HEADER: &str =
    "layer_index,pp_frequency,rg_frequency,pp_mean_norm,rg_mean_norm,pp_mean_delta,rg_mean_delta";

pub const NORMALIZATION_NOTE: &str =
    "normalized usage = layer frequency / maximum layer frequency within the same phase";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseUsage {
    pub token_count: usize,
    /// Fraction of tokens for which each layer was activated.
    pub frequency: Vec<f64>,
    pub normalized: Vec<f64>,
    /// Mean over tokens of active layers / layer count.
    pub average_usage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerUsageReport {
    pub layer_count: usize,
    pub alpha: f32,
    pub formula: ThresholdFormula,
    pub pp: Option<PhaseUsage>,
    pub rg: Option<PhaseUsage>,
}

impl LayerUsageReport {
    pub fn phase(&self, phase: Phase) -> Option<&PhaseUsage> {
        match phase {
            Phase::Pp => self.pp.as_ref(),
            Phase::Rg => self.rg.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseNorms {
    pub token_count: usize,
    pub mean_norm: Vec<f64>,
    pub mean_delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormProfile {
    pub layer_count: usize,
    pub pp: Option<PhaseNorms>,
    pub rg: Option<PhaseNorms>,
}

impl NormProfile {
    pub fn phase(&self, phase: Phase) -> Option<&PhaseNorms> {
        match phase {
            Phase::Pp => self.pp.as_ref(),
            Phase::Rg => self.rg.as_ref(),
        }
    }
}

fn uniform_layer_count(records: &[TraceRecord]) -> Result<usize> {
    let first = records
        .first()
        .ok_or_else(|| LacError::Invalid("no trace records".into()))?;
    let n = first.layer_count();
    for r in records {
        if r.layer_count() != n {
            return Err(LacError::MixedLayerCounts {
                first: n,
                other: r.layer_count(),
            });
        }
        r.check()?;
    }
    if n == 0 {
        return Err(LacError::Invalid("records carry no layers".into()));
    }
    Ok(n)
}

fn phase_usage<'a>(
    records: impl Iterator<Item = &'a TraceRecord>,
    layers: usize,
) -> Option<PhaseUsage> {
    let mut counts = vec![0usize; layers];
    let mut tokens = 0usize;
    let mut active = 0usize;
    for r in records {
        tokens += 1;
        for (c, &f) in counts.iter_mut().zip(&r.layer_flags) {
            if f {
                *c += 1;
                active += 1;
            }
        }
    }
    if tokens == 0 {
        return None;
    }
    let frequency: Vec<f64> = counts.iter().map(|&c| c as f64 / tokens as f64).collect();
    let max = frequency.iter().cloned().fold(0.0, f64::max);
    let normalized = frequency
        .iter()
        .map(|&f| if max > 0.0 { f / max } else { 0.0 })
        .collect();
    Some(PhaseUsage {
        token_count: tokens,
        frequency,
        normalized,
        average_usage: active as f64 / (tokens * layers) as f64,
    })
}

/// Per-layer activation statistics split by phase. A phase without records is `None`.
pub fn usage_report(records: &[TraceRecord]) -> Result<LayerUsageReport> {
    let layers = uniform_layer_count(records)?;
    Ok(LayerUsageReport {
        layer_count: layers,
        alpha: records[0].alpha,
        formula: records[0].formula,
        pp: phase_usage(records.iter().filter(|r| r.phase == Phase::Pp), layers),
        rg: phase_usage(records.iter().filter(|r| r.phase == Phase::Rg), layers),
    })
}

fn phase_norms<'a>(
    records: impl Iterator<Item = &'a TraceRecord>,
    layers: usize,
) -> Option<PhaseNorms> {
    let mut norm = vec![0f64; layers];
    let mut delta = vec![0f64; layers];
    let mut tokens = 0usize;
    for r in records {
        tokens += 1;
        for t in 0..layers {
            norm[t] += r.layer_norms[t] as f64;
            delta[t] += r.layer_deltas[t] as f64;
        }
    }
    if tokens == 0 {
        return None;
    }
    let n = tokens as f64;
    Some(PhaseNorms {
        token_count: tokens,
        mean_norm: norm.into_iter().map(|s| s / n).collect(),
        mean_delta: delta.into_iter().map(|s| s / n).collect(),
    })
}

/// Per-layer arithmetic means of norms and deltas, split by phase.
pub fn norm_profile(records: &[TraceRecord]) -> Result<NormProfile> {
    let layers = uniform_layer_count(records)?;
    Ok(NormProfile {
        layer_count: layers,
        pp: phase_norms(records.iter().filter(|r| r.phase == Phase::Pp), layers),
        rg: phase_norms(records.iter().filter(|r| r.phase == Phase::Rg), layers),
    })
}

/// Recomputes each record's flags from its recorded deltas at `alpha`.
pub fn redetect(
    records: &[TraceRecord],
    alpha: f32,
    formula: ThresholdFormula,
    min_layers: usize,
) -> Result<Vec<TraceRecord>> {
    check_alpha(alpha)?;
    records
        .iter()
        .map(|r| {
            if !r.skip_mode.is_passive() {
                return Err(LacError::Invalid(format!(
                    "offline detection needs off or detect traces, record {}:{} is {}",
                    r.sequence_id,
                    r.token_index,
                    r.skip_mode.name()
                )));
            }
            if r.layer_deltas.is_empty() {
                return Err(LacError::Invalid(format!(
                    "record {}:{} has no deltas",
                    r.sequence_id, r.token_index
                )));
            }
            let voids = void_layers(&r.layer_deltas, alpha, formula, min_layers)?;
            let mut out = r.clone();
            out.layer_flags = (0..r.layer_deltas.len())
                .map(|t| !voids.contains(&t))
                .collect();
            out.alpha = alpha;
            out.formula = formula;
            Ok(out)
        })
        .collect()
}

/// Usage reports for every alpha, recomputed offline from recorded deltas.
pub fn alpha_sweep(
    records: &[TraceRecord],
    alphas: &[f32],
    formula: ThresholdFormula,
    min_layers: usize,
) -> Result<Vec<(f32, LayerUsageReport)>> {
    uniform_layer_count(records)?;
    alphas
        .iter()
        .map(|&a| {
            Ok((
                a,
                usage_report(&redetect(records, a, formula, min_layers)?)?,
            ))
        })
        .collect()
}

/// Two-decimal fraction as in a usage table, e.g. `0.29`.
pub fn format_usage(u: f64) -> String {
    format!("{:.2}", u)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Combined per-layer CSV. Layer indices are 1-based; absent phases leave empty cells.
pub fn report_csv(usage: &LayerUsageReport, profile: &NormProfile) -> Result<String> {
    if usage.layer_count != profile.layer_count {
        return Err(LacError::MixedLayerCounts {
            first: usage.layer_count,
            other: profile.layer_count,
        });
    }
    let mut s = String::from(REPORT_CSV_HEADER);
    s.push('\n');
    for t in 0..usage.layer_count {
        let f = |p: Phase| usage.phase(p).map(|u| u.frequency[t]);
        let n = |p: Phase| profile.phase(p).map(|u| u.mean_norm[t]);
        let d = |p: Phase| profile.phase(p).map(|u| u.mean_delta[t]);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            t + 1,
            cell(f(Phase::Pp)),
            cell(f(Phase::Rg)),
            cell(n(Phase::Pp)),
            cell(n(Phase::Rg)),
            cell(d(Phase::Pp)),
            cell(d(Phase::Rg)),
        );
    }
    Ok(s)
}

/// One parsed data row of [`report_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub layer_index: usize,
    pub pp_frequency: Option<f64>,
    pub rg_frequency: Option<f64>,
    pub pp_mean_norm: Option<f64>,
    pub rg_mean_norm: Option<f64>,
    pub pp_mean_delta: Option<f64>,
    pub rg_mean_delta: Option<f64>,
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_CSV_HEADER) {
        return Err(LacError::Invalid("report csv: unexpected header".into()));
    }
    let opt = |s: &str, line: usize| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|e| LacError::Invalid(format!("report csv line {line}: {e}")))
        }
    };
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let line = i + 2;
            let cols: Vec<&str> = l.split(',').collect();
            if cols.len() != 7 {
                return Err(LacError::Invalid(format!(
                    "report csv line {line}: expected 7 columns, got {}",
                    cols.len()
                )));
            }
            Ok(ReportRow {
                layer_index: cols[0]
                    .parse()
                    .map_err(|e| LacError::Invalid(format!("report csv line {line}: {e}")))?,
                pp_frequency: opt(cols[1], line)?,
                rg_frequency: opt(cols[2], line)?,
                pp_mean_norm: opt(cols[3], line)?,
                rg_mean_norm: opt(cols[4], line)?,
                pp_mean_delta: opt(cols[5], line)?,
                rg_mean_delta: opt(cols[6], line)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseSummary {
    pub tokens: usize,
    pub average_usage: f64,
    pub average_usage_display: String,
    pub normalized_usage: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub alpha: f32,
    pub formula: &'static str,
    pub layer_count: usize,
    pub normalization: &'static str,
    pub pp: Option<PhaseSummary>,
    pub rg: Option<PhaseSummary>,
}

pub fn summary(usage: &LayerUsageReport) -> ReportSummary {
    let phase = |p: Option<&PhaseUsage>| {
        p.map(|u| PhaseSummary {
            tokens: u.token_count,
            average_usage: u.average_usage,
            average_usage_display: format_usage(u.average_usage),
            normalized_usage: u.normalized.clone(),
        })
    };
    ReportSummary {
        alpha: usage.alpha,
        formula: usage.formula.name(),
        layer_count: usage.layer_count,
        normalization: NORMALIZATION_NOTE,
        pp: phase(usage.pp.as_ref()),
        rg: phase(usage.rg.as_ref()),
    }
}

/// Writes `report.csv` and `summary.json` into `dir`, returning their paths.
pub fn export_reports(
    usage: &LayerUsageReport,
    profile: &NormProfile,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join("report.csv");
    std::fs::write(&csv_path, report_csv(usage, profile)?)?;
    let json_path = dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(&summary(usage))
        .map_err(|e| LacError::Invalid(e.to_string()))?;
    json.push('\n');
    std::fs::write(&json_path, json)?;
    Ok(vec![csv_path, json_path])
}
