//! Command-line front end. Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    alpha_sweep, export_reports, format_usage, norm_profile, report_csv, usage_report,
};
use crate::halting::{HaltPolicy, SkipMode, ThresholdFormula};
use crate::model::{
    build_model, decode_bytes, encode_bytes, generate, run_prompt, Model, ModelConfig,
};
use crate::suites::{build_suite, score_item, SuiteItem};
use crate::tensor::NormGranularity;
use crate::trace::{read_trace, render_bitmap, write_trace, Phase, TraceRecord};
use crate::weights::{load_weights, save_weights};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "LAC_VOID_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "lac-void",
    version,
    about = "Trace, sweep and skip unactivated transformer layers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run prompt processing and generation, writing trace.jsonl.
    Trace(RunArgs),
    /// Offline alpha sweep over an off-mode trace, writing sweep.csv.
    Sweep(SweepArgs),
    /// Usage/norm reports and activation bitmaps from a trace file.
    Report(ReportArgs),
    /// Score a synthetic suite with and without skipping.
    Compare(RunArgs),
    /// Write synthetic weights to a tensor container.
    InitWeights(InitArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Synthetic model, e.g. `d8,h2,l4[,f32][,c512][,s0]`.
    #[arg(long)]
    pub seed_model: Option<String>,
    /// Tensor container with model weights.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub prompt: Option<String>,
    /// One prompt per non-empty line.
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long, default_value_t = 0.8)]
    pub alpha: f32,
    #[arg(long, default_value = "token", value_parser = ["batch", "example", "token"])]
    pub granularity: String,
    #[arg(long, default_value = "modified", value_parser = ["original", "modified"])]
    pub formula: String,
    /// Defaults to `detect` for trace/sweep and `skip-identity` for compare.
    #[arg(long, value_parser = ["off", "detect", "mask-zero", "skip-identity", "halt-frozen"])]
    pub mode: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub min_layers: usize,
    #[arg(long, default_value_t = 16)]
    pub max_new: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Seed for synthetic suites.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated alphas, e.g. `0.1,0.2,0.3`.
    #[arg(long)]
    pub alphas: String,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub seed_model: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<crate::error::LacError> for CliError {
    fn from(e: crate::error::LacError) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone)]
pub enum ModelSource {
    Seeded(ModelConfig),
    Weights(PathBuf),
}

#[derive(Debug, Clone)]
pub enum PromptSource {
    Literal(String),
    File(PathBuf),
    Suite(String),
}

/// Validated form of [`RunArgs`].
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub model: ModelSource,
    pub prompts: PromptSource,
    pub policy: HaltPolicy,
    pub max_new: usize,
    pub out: PathBuf,
    pub seed: u64,
}

impl RunSpec {
    pub fn from_args(a: &RunArgs, default_mode: SkipMode) -> CliResult<Self> {
        let model = match (&a.seed_model, &a.weights) {
            (Some(s), None) => ModelSource::Seeded(
                ModelConfig::parse_compact(s).map_err(|e| CliError::Usage(e.to_string()))?,
            ),
            (None, Some(p)) => ModelSource::Weights(p.clone()),
            _ => {
                return Err(CliError::Usage(
                    "give exactly one of --seed-model or --weights".into(),
                ))
            }
        };
        let prompts = match (&a.prompt, &a.prompt_file, &a.suite) {
            (Some(p), None, None) => PromptSource::Literal(p.clone()),
            (None, Some(f), None) => PromptSource::File(f.clone()),
            (None, None, Some(s)) => PromptSource::Suite(s.clone()),
            _ => {
                return Err(CliError::Usage(
                    "give exactly one of --prompt, --prompt-file or --suite".into(),
                ))
            }
        };
        if !(a.alpha > 0.0 && a.alpha <= 1.0) {
            return Err(CliError::Usage(format!(
                "--alpha must lie in (0, 1], got {}",
                a.alpha
            )));
        }
        if a.min_layers == 0 {
            return Err(CliError::Usage("--min-layers must be at least 1".into()));
        }
        let mode = match &a.mode {
            Some(m) => {
                SkipMode::parse(m).ok_or_else(|| CliError::Usage(format!("unknown mode {m}")))?
            }
            None => default_mode,
        };
        let policy = HaltPolicy {
            granularity: NormGranularity::parse(&a.granularity)
                .ok_or_else(|| CliError::Usage(format!("unknown granularity {}", a.granularity)))?,
            alpha: a.alpha,
            formula: ThresholdFormula::parse(&a.formula)
                .ok_or_else(|| CliError::Usage(format!("unknown formula {}", a.formula)))?,
            skip_mode: mode,
            min_layers: a.min_layers,
        };
        Ok(RunSpec {
            model,
            prompts,
            policy,
            max_new: a.max_new,
            out: a.out.clone(),
            seed: a.seed,
        })
    }

    pub fn load_model(&self) -> anyhow::Result<Model> {
        match &self.model {
            ModelSource::Seeded(cfg) => Ok(build_model(*cfg)?),
            ModelSource::Weights(p) => {
                load_weights(p).with_context(|| format!("loading weights from {}", p.display()))
            }
        }
    }

    pub fn load_prompts(&self) -> anyhow::Result<Vec<Vec<u8>>> {
        let prompts: Vec<Vec<u8>> = match &self.prompts {
            PromptSource::Literal(s) => vec![s.as_bytes().to_vec()],
            PromptSource::File(p) => std::fs::read(p)
                .with_context(|| format!("reading {}", p.display()))?
                .split(|&b| b == b'\n')
                .map(|l| l.strip_suffix(b"\r").unwrap_or(l).to_vec())
                .filter(|l| !l.is_empty())
                .collect(),
            PromptSource::Suite(name) => build_suite(name, self.seed)?
                .into_iter()
                .map(|i| i.prompt)
                .collect(),
        };
        if prompts.is_empty() || prompts.iter().any(Vec::is_empty) {
            return Err(anyhow!("no non-empty prompts"));
        }
        Ok(prompts)
    }
}

fn parse_alphas(s: &str) -> CliResult<Vec<f32>> {
    let alphas: Vec<f32> = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<f32>()
                .map_err(|_| CliError::Usage(format!("bad alpha {p:?}")))
        })
        .collect::<CliResult<_>>()?;
    if alphas.is_empty() {
        return Err(CliError::Usage("--alphas is empty".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
        return Err(CliError::Usage(format!("alpha {a} outside (0, 1]")));
    }
    Ok(alphas)
}

/// Worker pool sized by `LAC_VOID_THREADS` when set.
fn worker_pool() -> anyhow::Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
        b = b.num_threads(n.max(1));
    }
    Ok(b.build()?)
}

pub fn sequence_id(index: usize) -> String {
    format!("seq{index:04}")
}

/// Output of one prompt run.
#[derive(Debug, Clone)]
pub struct SequenceRun {
    pub id: String,
    pub records: Vec<TraceRecord>,
    pub generated: Vec<u8>,
}

pub fn run_sequence(
    model: &Model,
    id: &str,
    prompt: &[u8],
    policy: &HaltPolicy,
    max_new: usize,
) -> crate::error::Result<SequenceRun> {
    let (mut state, mut records) = run_prompt(model, id, &encode_bytes(prompt), policy)?;
    let (tokens, rg) = generate(&mut state, model, policy, max_new)?;
    records.extend(rg);
    Ok(SequenceRun {
        id: id.to_string(),
        records,
        generated: decode_bytes(&tokens),
    })
}

/// Runs every prompt in parallel; results keep prompt order.
pub fn run_all(
    model: &Model,
    prompts: &[Vec<u8>],
    policy: &HaltPolicy,
    max_new: &(dyn Fn(usize) -> usize + Sync),
) -> anyhow::Result<Vec<SequenceRun>> {
    let pool = worker_pool()?;
    let runs: crate::error::Result<Vec<SequenceRun>> = pool.install(|| {
        prompts
            .par_iter()
            .enumerate()
            .map(|(i, p)| run_sequence(model, &sequence_id(i), p, policy, max_new(i)))
            .collect()
    });
    Ok(runs?)
}

fn usage_of(records: &[TraceRecord], phase: Phase) -> Option<f64> {
    let sel: Vec<&TraceRecord> = records.iter().filter(|r| r.phase == phase).collect();
    if sel.is_empty() {
        return None;
    }
    let layers = sel[0].layer_count().max(1);
    let active: usize = sel.iter().map(|r| r.active_layers()).sum();
    Some(active as f64 / (sel.len() * layers) as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn write_records(path: &Path, records: &[TraceRecord]) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    write_trace(records, &mut buf)?;
    std::fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

/// Runs all prompts and writes `<out>/trace.jsonl`.
pub fn cmd_trace(spec: &RunSpec, stdout: &mut dyn Write) -> anyhow::Result<Vec<SequenceRun>> {
    let model = spec.load_model()?;
    spec.policy.validate(model.layer_count())?;
    let prompts = spec.load_prompts()?;
    let runs = run_all(&model, &prompts, &spec.policy, &|_| spec.max_new)?;
    std::fs::create_dir_all(&spec.out)?;
    let all: Vec<TraceRecord> = runs
        .iter()
        .flat_map(|r| r.records.iter().cloned())
        .collect();
    write_records(&spec.out.join("trace.jsonl"), &all)?;
    for run in &runs {
        let pp = run.records.iter().filter(|r| r.phase == Phase::Pp).count();
        writeln!(
            stdout,
            "{} tokens={}+{} pp_usage={} rg_usage={}",
            run.id,
            pp,
            run.records.len() - pp,
            fmt_opt(usage_of(&run.records, Phase::Pp)),
            fmt_opt(usage_of(&run.records, Phase::Rg)),
        )?;
    }
    Ok(runs)
}

/// Score in percent of a suite under `policy`, plus the records of all items.
pub fn score_suite(
    model: &Model,
    items: &[SuiteItem],
    policy: &HaltPolicy,
) -> anyhow::Result<(f64, Vec<TraceRecord>)> {
    let prompts: Vec<Vec<u8>> = items.iter().map(|i| i.prompt.clone()).collect();
    let runs = run_all(model, &prompts, policy, &|i| items[i].expected.len())?;
    let total: f64 = runs
        .iter()
        .zip(items)
        .map(|(r, item)| score_item(&item.expected, &r.generated))
        .sum();
    let records = runs.into_iter().flat_map(|r| r.records).collect();
    Ok((100.0 * total / items.len().max(1) as f64, records))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f32,
    pub pp_usage: Option<f64>,
    pub rg_usage: Option<f64>,
    pub task_score: Option<f64>,
}

pub const SWEEP_CSV_HEADER: &str = "alpha,pp_usage,rg_usage,task_score";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Off-mode trace, offline sweep, optional live skip scores; writes `<out>/sweep.csv`.
pub fn cmd_sweep(
    spec: &RunSpec,
    alphas: &[f32],
    stdout: &mut dyn Write,
) -> anyhow::Result<Vec<SweepRow>> {
    let model = spec.load_model()?;
    spec.policy.validate(model.layer_count())?;
    let prompts = spec.load_prompts()?;
    let off = spec.policy.with_mode(SkipMode::Off);
    let runs = run_all(&model, &prompts, &off, &|_| spec.max_new)?;
    let records: Vec<TraceRecord> = runs.into_iter().flat_map(|r| r.records).collect();
    let sweep = alpha_sweep(
        &records,
        alphas,
        spec.policy.formula,
        spec.policy.min_layers,
    )?;

    let items = match &spec.prompts {
        PromptSource::Suite(name) => Some(build_suite(name, spec.seed)?),
        _ => None,
    };
    let mut rows = Vec::with_capacity(sweep.len());
    for (alpha, report) in sweep {
        let task_score = match &items {
            Some(items) => {
                let policy = HaltPolicy {
                    alpha,
                    skip_mode: SkipMode::SkipIdentity,
                    ..spec.policy
                };
                Some(score_suite(&model, items, &policy)?.0)
            }
            None => None,
        };
        rows.push(SweepRow {
            alpha,
            pp_usage: report.pp.map(|u| u.average_usage),
            rg_usage: report.rg.map(|u| u.average_usage),
            task_score,
        });
    }

    let mut csv = String::from(SWEEP_CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            r.alpha,
            cell(r.pp_usage),
            cell(r.rg_usage),
            cell(r.task_score)
        );
    }
    std::fs::create_dir_all(&spec.out)?;
    std::fs::write(spec.out.join("sweep.csv"), &csv)?;
    for r in &rows {
        writeln!(
            stdout,
            "alpha={} pp_usage={} rg_usage={} task_score={}",
            r.alpha,
            fmt_opt(r.pp_usage),
            fmt_opt(r.rg_usage),
            r.task_score
                .map(|s| format!("{s:.2}"))
                .unwrap_or_else(|| "-".into())
        )?;
    }
    Ok(rows)
}

pub fn parse_sweep_csv(text: &str) -> anyhow::Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_CSV_HEADER) {
        return Err(anyhow!("sweep csv: unexpected header"));
    }
    let opt = |s: &str| -> anyhow::Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            Ok(Some(s.parse()?))
        }
    };
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            if c.len() != 4 {
                return Err(anyhow!("sweep csv: expected 4 columns in {l:?}"));
            }
            Ok(SweepRow {
                alpha: c[0].parse()?,
                pp_usage: opt(c[1])?,
                rg_usage: opt(c[2])?,
                task_score: opt(c[3])?,
            })
        })
        .collect()
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Reports and bitmaps from a trace file. Returns the written paths.
pub fn cmd_report(
    trace: &Path,
    out: &Path,
    stdout: &mut dyn Write,
) -> anyhow::Result<Vec<PathBuf>> {
    let file =
        std::fs::File::open(trace).with_context(|| format!("opening {}", trace.display()))?;
    let records = read_trace(BufReader::new(file))?;
    let usage = usage_report(&records)?;
    let profile = norm_profile(&records)?;
    let mut written = export_reports(&usage, &profile, out)?;

    let mut usage_csv =
        String::from("layer_index,pp_frequency,rg_frequency,pp_normalized,rg_normalized\n");
    let mut norms_csv =
        String::from("layer_index,pp_mean_norm,rg_mean_norm,pp_mean_delta,rg_mean_delta\n");
    for t in 0..usage.layer_count {
        let u = |p: Phase, norm: bool| {
            usage.phase(p).map(|x| {
                if norm {
                    x.normalized[t]
                } else {
                    x.frequency[t]
                }
            })
        };
        let n = |p: Phase, delta: bool| {
            profile.phase(p).map(|x| {
                if delta {
                    x.mean_delta[t]
                } else {
                    x.mean_norm[t]
                }
            })
        };
        let _ = writeln!(
            usage_csv,
            "{},{},{},{},{}",
            t + 1,
            cell(u(Phase::Pp, false)),
            cell(u(Phase::Rg, false)),
            cell(u(Phase::Pp, true)),
            cell(u(Phase::Rg, true))
        );
        let _ = writeln!(
            norms_csv,
            "{},{},{},{},{}",
            t + 1,
            cell(n(Phase::Pp, false)),
            cell(n(Phase::Rg, false)),
            cell(n(Phase::Pp, true)),
            cell(n(Phase::Rg, true))
        );
    }
    for (name, body) in [("usage.csv", usage_csv), ("norms.csv", norms_csv)] {
        let p = out.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
    }

    let mut ids: Vec<&str> = Vec::new();
    for r in &records {
        if !ids.contains(&r.sequence_id.as_str()) {
            ids.push(&r.sequence_id);
        }
    }
    for id in ids {
        let seq: Vec<TraceRecord> = records
            .iter()
            .filter(|r| r.sequence_id == id)
            .cloned()
            .collect();
        for phase in [Phase::Pp, Phase::Rg] {
            if !seq.iter().any(|r| r.phase == phase) {
                continue;
            }
            let bmp = render_bitmap(&seq, Some(phase))?;
            let p = out.join(format!(
                "{}_{}.pgm",
                file_stem(id),
                phase.name().to_lowercase()
            ));
            std::fs::write(&p, bmp.to_pgm())?;
            written.push(p);
        }
    }
    writeln!(
        stdout,
        "records={} layers={} pp_usage={} rg_usage={}",
        records.len(),
        usage.layer_count,
        usage
            .pp
            .as_ref()
            .map(|u| format_usage(u.average_usage))
            .unwrap_or_else(|| "-".into()),
        usage
            .rg
            .as_ref()
            .map(|u| format_usage(u.average_usage))
            .unwrap_or_else(|| "-".into()),
    )?;
    debug_assert!(report_csv(&usage, &profile).is_ok());
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareResult {
    pub suite: String,
    pub alpha: f32,
    pub skip_mode: &'static str,
    pub not_skipped: f64,
    pub skipped: f64,
    pub pp_usage: Option<f64>,
    pub rg_usage: Option<f64>,
}

/// Table with full-capacity and skipped scores on top and PP/RG usage below.
pub fn format_compare_table(r: &CompareResult) -> String {
    let usage = |u: Option<f64>| u.map(format_usage).unwrap_or_else(|| "-".into());
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:>12} {:>12}", "", "Not Skipped", "Skipped");
    let _ = writeln!(
        s,
        "{:<10} {:>12.2} {:>12.2}",
        r.suite, r.not_skipped, r.skipped
    );
    let _ = writeln!(s, "{:<10} {:>12} {:>12}", "Usage", "PP", "RG");
    let _ = writeln!(
        s,
        "{:<10} {:>12} {:>12}",
        r.suite,
        usage(r.pp_usage),
        usage(r.rg_usage)
    );
    s
}

/// Runs the suite with skipping off and with the requested mode; writes `<out>/compare.json`.
pub fn cmd_compare(spec: &RunSpec, stdout: &mut dyn Write) -> CliResult<CompareResult> {
    let suite = match &spec.prompts {
        PromptSource::Suite(s) => s.clone(),
        _ => return Err(CliError::Usage("compare needs --suite".into())),
    };
    let model = spec.load_model()?;
    spec.policy.validate(model.layer_count())?;
    let items = build_suite(&suite, spec.seed)?;
    let (not_skipped, _) = score_suite(&model, &items, &spec.policy.with_mode(SkipMode::Off))?;
    let (skipped, records) = score_suite(&model, &items, &spec.policy)?;
    let result = CompareResult {
        suite,
        alpha: spec.policy.alpha,
        skip_mode: spec.policy.skip_mode.name(),
        not_skipped,
        skipped,
        pp_usage: usage_of(&records, Phase::Pp),
        rg_usage: usage_of(&records, Phase::Rg),
    };
    std::fs::create_dir_all(&spec.out).map_err(anyhow::Error::from)?;
    let json = serde_json::to_string_pretty(&result).map_err(anyhow::Error::from)?;
    std::fs::write(spec.out.join("compare.json"), json + "\n").map_err(anyhow::Error::from)?;
    stdout
        .write_all(format_compare_table(&result).as_bytes())
        .map_err(anyhow::Error::from)?;
    Ok(result)
}

pub fn cmd_init_weights(args: &InitArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg =
        ModelConfig::parse_compact(&args.seed_model).map_err(|e| CliError::Usage(e.to_string()))?;
    let model = build_model(cfg)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(anyhow::Error::from)?;
    }
    save_weights(&model, &args.out)?;
    writeln!(stdout, "wrote {}", args.out.display()).map_err(anyhow::Error::from)?;
    Ok(())
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Trace(a) => {
            let spec = RunSpec::from_args(&a, SkipMode::Detect)?;
            cmd_trace(&spec, stdout)?;
        }
        Command::Sweep(a) => {
            let alphas = parse_alphas(&a.alphas)?;
            let spec = RunSpec::from_args(&a.run, SkipMode::Detect)?;
            cmd_sweep(&spec, &alphas, stdout)?;
        }
        Command::Report(a) => {
            cmd_report(&a.trace, &a.out, stdout)?;
        }
        Command::Compare(a) => {
            let spec = RunSpec::from_args(&a, SkipMode::SkipIdentity)?;
            cmd_compare(&spec, stdout)?;
        }
        Command::InitWeights(a) => cmd_init_weights(&a, stdout)?,
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command, returning the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return 2;
            }
            let _ = write!(stdout, "{e}");
            return 0;
        }
    };
    match dispatch(cli, stdout) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            let _ = writeln!(stderr, "error: {m}\n\nFor more information, try '--help'.");
            2
        }
        Err(CliError::Runtime(e)) => {
            let _ = writeln!(stderr, "error: {e:#}");
            1
        }
    }
}
