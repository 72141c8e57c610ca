//! Durable per-token trace records, their JSONL encoding, and token x layer
//! activation bitmaps in ASCII PGM.
//!
//! One record is written per line with a fixed key order:
//!
//! ```text
//! {"sequence_id":"seq0000","token_index":0,"phase":"PP","token_id":104,
//!  "layer_flags":"1101","layer_norms":[...],"layer_deltas":[...],
//!  "alpha":8.00000000e-1,"formula":"modified","skip_mode":"detect"}
//! ```
//!
//! `layer_flags` lists layer 1 first, `1` meaning activated. Floats are written
//! with nine significant digits as `d.dddddddde<exp>`, the exponent having no
//! `+` sign and no zero padding.

use std::io::{BufRead, Write};

use serde::Deserialize;

use crate::error::{LacError, Result};
use crate::halting::{SkipMode, ThresholdFormula};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    /// Prompt processing.
    Pp,
    /// Response generation.
    Rg,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pp => "PP",
            Phase::Rg => "RG",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "PP" => Some(Phase::Pp),
            "RG" => Some(Phase::Rg),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub sequence_id: String,
    pub token_index: usize,
    pub phase: Phase,
    pub token_id: u32,
    /// `true` = activated, one entry per layer.
    pub layer_flags: Vec<bool>,
    /// Post-layer L2 norm of the unit owning this token.
    pub layer_norms: Vec<f32>,
    pub layer_deltas: Vec<f32>,
    pub alpha: f32,
    pub formula: ThresholdFormula,
    pub skip_mode: SkipMode,
}

impl TraceRecord {
    pub fn layer_count(&self) -> usize {
        self.layer_flags.len()
    }

    pub fn active_layers(&self) -> usize {
        self.layer_flags.iter().filter(|&&f| f).count()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.layer_flags.len();
        if self.layer_norms.len() != n || self.layer_deltas.len() != n {
            return Err(LacError::Invalid(format!(
                "record {}:{} has {} flags, {} norms, {} deltas",
                self.sequence_id,
                self.token_index,
                n,
                self.layer_norms.len(),
                self.layer_deltas.len()
            )));
        }
        Ok(())
    }
}

/// Nine significant digits, e.g. `8.00000000e-1`.
pub fn format_float(v: f32) -> String {
    format!("{:.8e}", v)
}

fn push_floats(line: &mut String, values: &[f32]) {
    line.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        line.push_str(&format_float(*v));
    }
    line.push(']');
}

/// Encodes one record as a newline-terminated JSON line.
pub fn encode_record(r: &TraceRecord) -> Result<String> {
    r.check()?;
    if let Some(v) = r
        .layer_norms
        .iter()
        .chain(&r.layer_deltas)
        .chain(std::iter::once(&r.alpha))
        .find(|v| !v.is_finite())
    {
        return Err(LacError::Invalid(format!(
            "cannot encode non-finite value {v}"
        )));
    }
    let id = serde_json::to_string(&r.sequence_id).map_err(|e| LacError::Invalid(e.to_string()))?;
    let flags: String = r
        .layer_flags
        .iter()
        .map(|&f| if f { '1' } else { '0' })
        .collect();
    let mut line = format!(
        "{{\"sequence_id\":{id},\"token_index\":{},\"phase\":\"{}\",\"token_id\":{},\"layer_flags\":\"{flags}\",\"layer_norms\":",
        r.token_index,
        r.phase.name(),
        r.token_id
    );
    push_floats(&mut line, &r.layer_norms);
    line.push_str(",\"layer_deltas\":");
    push_floats(&mut line, &r.layer_deltas);
    line.push_str(&format!(
        ",\"alpha\":{},\"formula\":\"{}\",\"skip_mode\":\"{}\"}}\n",
        format_float(r.alpha),
        r.formula.name(),
        r.skip_mode.name()
    ));
    Ok(line)
}

/// Appends `records` to `sink`, returning the number of bytes written.
pub fn write_trace<W: Write>(records: &[TraceRecord], sink: &mut W) -> Result<usize> {
    let mut written = 0;
    for r in records {
        let line = encode_record(r)?;
        sink.write_all(line.as_bytes())?;
        written += line.len();
    }
    Ok(written)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    sequence_id: String,
    token_index: usize,
    phase: String,
    token_id: u32,
    layer_flags: String,
    layer_norms: Vec<f32>,
    layer_deltas: Vec<f32>,
    alpha: f32,
    formula: String,
    skip_mode: String,
}

fn decode_line(line: &str, line_no: usize) -> Result<TraceRecord> {
    let err = |message: String| LacError::TraceParse {
        line: line_no,
        message,
    };
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
    let phase =
        Phase::parse(&raw.phase).ok_or_else(|| err(format!("unknown phase {:?}", raw.phase)))?;
    let formula = ThresholdFormula::parse(&raw.formula)
        .ok_or_else(|| err(format!("unknown formula {:?}", raw.formula)))?;
    let skip_mode = SkipMode::parse(&raw.skip_mode)
        .ok_or_else(|| err(format!("unknown skip mode {:?}", raw.skip_mode)))?;
    let layer_flags = raw
        .layer_flags
        .chars()
        .map(|c| match c {
            '1' => Ok(true),
            '0' => Ok(false),
            other => Err(err(format!("bad flag character {other:?}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let record = TraceRecord {
        sequence_id: raw.sequence_id,
        token_index: raw.token_index,
        phase,
        token_id: raw.token_id,
        layer_flags,
        layer_norms: raw.layer_norms,
        layer_deltas: raw.layer_deltas,
        alpha: raw.alpha,
        formula,
        skip_mode,
    };
    record.check().map_err(|e| err(e.to_string()))?;
    Ok(record)
}

/// Parses a JSONL trace. Blank lines are skipped; line numbers in errors are 1-based.
pub fn read_trace<R: BufRead>(source: R) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(decode_line(&line, i + 1)?);
    }
    Ok(out)
}

/// Greyscale image, row-major with the top row first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub const ACTIVE_PIXEL: u8 = 255;
pub const VOID_PIXEL: u8 = 0;

impl Bitmap {
    pub fn pixel(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn white_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == ACTIVE_PIXEL).count()
    }

    /// Plain PGM: `P2`, `width height`, `255`, then one line per row with
    /// pixels separated by single spaces.
    pub fn to_pgm(&self) -> String {
        let mut s = format!("P2\n{} {}\n255\n", self.width, self.height);
        for row in self.pixels.chunks(self.width.max(1)).take(self.height) {
            let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn parse_pgm(text: &str) -> Result<Bitmap> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        let bad = |m: &str| LacError::Invalid(format!("pgm: {m}"));
        if tokens.next() != Some("P2") {
            return Err(bad("missing P2 magic"));
        }
        let mut num = |what: &str| -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| bad(&format!("missing {what}")))?
                .parse::<usize>()
                .map_err(|e| bad(&format!("{what}: {e}")))
        };
        let width = num("width")?;
        let height = num("height")?;
        let maxval = num("maxval")?;
        if maxval != 255 {
            return Err(bad("maxval must be 255"));
        }
        let mut pixels = Vec::with_capacity(width * height);
        for _ in 0..width * height {
            let v = num("pixel")?;
            pixels.push(u8::try_from(v).map_err(|_| bad("pixel above 255"))?);
        }
        Ok(Bitmap {
            width,
            height,
            pixels,
        })
    }
}

/// Token x layer activation image for one sequence. Columns follow
/// `token_index`; the last layer is the top row so layer 1 sits at the bottom.
pub fn render_bitmap(records: &[TraceRecord], phase: Option<Phase>) -> Result<Bitmap> {
    let first = records
        .first()
        .ok_or_else(|| LacError::Invalid("no records to render".into()))?;
    let layers = first.layer_count();
    for r in records {
        if r.sequence_id != first.sequence_id {
            return Err(LacError::Invalid(format!(
                "bitmap mixes sequences {:?} and {:?}",
                first.sequence_id, r.sequence_id
            )));
        }
        if r.layer_count() != layers {
            return Err(LacError::MixedLayerCounts {
                first: layers,
                other: r.layer_count(),
            });
        }
    }
    let mut selected: Vec<&TraceRecord> = records
        .iter()
        .filter(|r| phase.is_none_or(|p| r.phase == p))
        .collect();
    if selected.is_empty() {
        return Err(LacError::Invalid(
            "no records match the phase filter".into(),
        ));
    }
    selected.sort_by_key(|r| r.token_index);
    let width = selected.len();
    let mut pixels = vec![VOID_PIXEL; width * layers];
    for (x, r) in selected.iter().enumerate() {
        for (layer, &active) in r.layer_flags.iter().enumerate() {
            let y = layers - 1 - layer;
            if active {
                pixels[y * width + x] = ACTIVE_PIXEL;
            }
        }
    }
    Ok(Bitmap {
        width,
        height: layers,
        pixels,
    })
}
