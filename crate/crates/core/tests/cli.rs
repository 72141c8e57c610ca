use std::path::Path;
use std::process::Command;

use lac_void::analysis::{parse_report_csv, usage_report};
use lac_void::cli::{parse_sweep_csv, run};
use lac_void::trace::{read_trace, Bitmap};
use lac_void::Phase;

fn lac(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("lac-void").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_records(path: &Path) -> Vec<lac_void::TraceRecord> {
    read_trace(std::io::BufReader::new(std::fs::File::open(path).unwrap())).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let out = path_str(d.path());
    for args in [
        vec![
            "trace",
            "--seed-model",
            "d8,h2,l4",
            "--prompt",
            "hi",
            "--alpha",
            "1.5",
            "--out",
            out,
        ],
        vec![
            "trace",
            "--seed-model",
            "d8,h2,l4",
            "--prompt",
            "hi",
            "--alpha=-0.2",
            "--out",
            out,
        ],
        vec![
            "trace",
            "--seed-model",
            "d8,h2,l4",
            "--prompt",
            "hi",
            "--alpha",
            "0",
            "--out",
            out,
        ],
        vec!["trace", "--prompt", "hi", "--out", out],
        vec!["trace", "--seed-model", "d8,h2,l4", "--out", out],
        vec![
            "trace",
            "--seed-model",
            "d8,h2",
            "--prompt",
            "hi",
            "--out",
            out,
        ],
        vec![
            "trace",
            "--seed-model",
            "d8,h2,l4",
            "--prompt",
            "hi",
            "--mode",
            "nope",
        ],
        vec![
            "sweep",
            "--seed-model",
            "d8,h2,l4",
            "--prompt",
            "hi",
            "--alphas",
            "",
            "--out",
            out,
        ],
        vec![
            "sweep",
            "--seed-model",
            "d8,h2,l4",
            "--prompt",
            "hi",
            "--alphas",
            "0.5,2",
            "--out",
            out,
        ],
        vec![
            "compare",
            "--seed-model",
            "d8,h2,l4",
            "--prompt",
            "hi",
            "--out",
            out,
        ],
        vec!["bogus"],
    ] {
        let (code, _, err) = lac(&args);
        assert_eq!(code, 2, "{args:?}: {err}");
        assert!(!err.is_empty());
    }
    assert!(!d.path().join("trace.jsonl").exists());
}

#[test]
fn runtime_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    let out = path_str(d.path());
    let (code, _, err) = lac(&[
        "compare",
        "--seed-model",
        "d8,h2,l4",
        "--suite",
        "mmlu",
        "--out",
        out,
    ]);
    assert_eq!(code, 1, "{err}");
    let missing = d.path().join("missing.lac");
    let (code, _, _) = lac(&[
        "trace",
        "--weights",
        path_str(&missing),
        "--prompt",
        "hi",
        "--out",
        out,
    ]);
    assert_eq!(code, 1);
    let (code, _, _) = lac(&[
        "report",
        "--trace",
        path_str(&d.path().join("none.jsonl")),
        "--out",
        out,
    ]);
    assert_eq!(code, 1);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_lac-void");
    let d = tempfile::tempdir().unwrap();
    let status = Command::new(bin)
        .args([
            "trace",
            "--seed-model",
            "d8,h2,l4",
            "--prompt",
            "hi",
            "--alpha",
            "1.5",
        ])
        .arg("--out")
        .arg(d.path())
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    let ok = Command::new(bin)
        .args([
            "trace",
            "--seed-model",
            "d8,h2,l4",
            "--prompt",
            "hi",
            "--max-new",
            "0",
        ])
        .arg("--out")
        .arg(d.path())
        .env("LAC_VOID_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("seq0000 tokens=2+0"));
}

#[test]
fn trace_contract() {
    let d = tempfile::tempdir().unwrap();
    let (code, stdout, err) = lac(&[
        "trace",
        "--seed-model",
        "d8,h2,l4",
        "--prompt",
        "hi",
        "--out",
        path_str(d.path()),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.starts_with("seq0000 tokens=2+"));
    let records = read_records(&d.path().join("trace.jsonl"));
    let pp: Vec<_> = records.iter().filter(|r| r.phase == Phase::Pp).collect();
    assert_eq!(pp.len(), 2);
    assert_eq!(pp[0].token_id, u32::from(b'h'));
    assert_eq!(pp[1].token_id, u32::from(b'i'));
    for r in &records {
        assert_eq!(r.layer_count(), 4);
        assert_eq!(r.alpha, 0.8);
        assert_eq!(r.sequence_id, "seq0000");
    }
    let text = std::fs::read_to_string(d.path().join("trace.jsonl")).unwrap();
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("{\"sequence_id\":\"seq0000\",\"token_index\":0,\"phase\":\"PP\""));
    assert!(first.contains("\"alpha\":8.00000012e-1"));
}

#[test]
fn trace_is_deterministic_across_thread_counts() {
    let d = tempfile::tempdir().unwrap();
    let prompts = d.path().join("prompts.txt");
    std::fs::write(&prompts, "alpha\nbeta gamma\n\ndelta\n").unwrap();
    let mut files = Vec::new();
    for (i, threads) in ["1", "4"].iter().enumerate() {
        let out = d.path().join(format!("run{i}"));
        let status = Command::new(env!("CARGO_BIN_EXE_lac-void"))
            .args([
                "trace",
                "--seed-model",
                "d16,h2,l4,s5",
                "--mode",
                "halt-frozen",
                "--prompt-file",
            ])
            .arg(&prompts)
            .arg("--out")
            .arg(&out)
            .env("LAC_VOID_THREADS", threads)
            .output()
            .unwrap();
        assert!(status.status.success());
        files.push(std::fs::read(out.join("trace.jsonl")).unwrap());
    }
    assert_eq!(files[0], files[1]);
    let records = read_trace(std::io::Cursor::new(&files[0])).unwrap();
    let ids: std::collections::BTreeSet<_> =
        records.iter().map(|r| r.sequence_id.as_str()).collect();
    assert_eq!(ids.len(), 3);
}

#[test]
fn sweep_rows_are_monotone() {
    let d = tempfile::tempdir().unwrap();
    let (code, _, err) = lac(&[
        "sweep",
        "--seed-model",
        "d16,h2,l6,s2",
        "--prompt",
        "monotone usage",
        "--alphas",
        "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0",
        "--out",
        path_str(d.path()),
    ]);
    assert_eq!(code, 0, "{err}");
    let rows =
        parse_sweep_csv(&std::fs::read_to_string(d.path().join("sweep.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 10);
    for w in rows.windows(2) {
        assert!(w[1].pp_usage.unwrap() <= w[0].pp_usage.unwrap());
        assert!(w[1].rg_usage.unwrap() <= w[0].rg_usage.unwrap());
        assert!(w[0].task_score.is_none());
    }
}

#[test]
fn single_alpha_sweep_matches_detect_report() {
    let d = tempfile::tempdir().unwrap();
    let out = path_str(d.path());
    let common = [
        "--seed-model",
        "d16,h2,l5,s3",
        "--prompt",
        "agree",
        "--alpha",
        "0.4",
        "--max-new",
        "6",
    ];
    let mut args = vec!["sweep", "--alphas", "0.4", "--out", out];
    args.extend(common);
    assert_eq!(lac(&args).0, 0);
    let mut args = vec!["trace", "--out", out];
    args.extend(common);
    assert_eq!(lac(&args).0, 0);

    let rows =
        parse_sweep_csv(&std::fs::read_to_string(d.path().join("sweep.csv")).unwrap()).unwrap();
    let usage = usage_report(&read_records(&d.path().join("trace.jsonl"))).unwrap();
    assert_eq!(rows[0].pp_usage, usage.pp.as_ref().map(|u| u.average_usage));
    assert_eq!(rows[0].rg_usage, usage.rg.as_ref().map(|u| u.average_usage));
}

#[test]
fn sweep_with_suite_scores_each_alpha() {
    let d = tempfile::tempdir().unwrap();
    let (code, _, err) = lac(&[
        "sweep",
        "--seed-model",
        "d8,h2,l3",
        "--suite",
        "copy",
        "--alphas",
        "0.3,0.9",
        "--out",
        path_str(d.path()),
    ]);
    assert_eq!(code, 0, "{err}");
    let rows =
        parse_sweep_csv(&std::fs::read_to_string(d.path().join("sweep.csv")).unwrap()).unwrap();
    assert!(rows
        .iter()
        .all(|r| matches!(r.task_score, Some(s) if (0.0..=100.0).contains(&s))));
}

#[test]
fn report_outputs() {
    let d = tempfile::tempdir().unwrap();
    let out = path_str(d.path());
    assert_eq!(
        lac(&[
            "trace",
            "--seed-model",
            "d8,h2,l4",
            "--prompt",
            "report",
            "--max-new",
            "5",
            "--out",
            out
        ])
        .0,
        0
    );
    let trace = d.path().join("trace.jsonl");
    let (code, stdout, err) = lac(&["report", "--trace", path_str(&trace), "--out", out]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.starts_with("records="));

    let records = read_records(&trace);
    let rows =
        parse_report_csv(&std::fs::read_to_string(d.path().join("report.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("summary.json")).unwrap())
            .unwrap();
    assert!(summary.is_object());
    for name in ["usage.csv", "norms.csv"] {
        assert!(d.path().join(name).exists());
    }
    for phase in [Phase::Pp, Phase::Rg] {
        let sel: Vec<_> = records.iter().filter(|r| r.phase == phase).collect();
        let file = d
            .path()
            .join(format!("seq0000_{}.pgm", phase.name().to_lowercase()));
        if sel.is_empty() {
            assert!(!file.exists());
            continue;
        }
        let bmp = Bitmap::parse_pgm(&std::fs::read_to_string(file).unwrap()).unwrap();
        assert_eq!((bmp.width, bmp.height), (sel.len(), 4));
        let active: usize = sel.iter().map(|r| r.active_layers()).sum();
        assert_eq!(bmp.white_count(), active);
    }
}

#[test]
fn compare_off_against_detect_is_equal() {
    let d = tempfile::tempdir().unwrap();
    let (code, stdout, err) = lac(&[
        "compare",
        "--seed-model",
        "d8,h2,l3",
        "--suite",
        "reverse",
        "--mode",
        "detect",
        "--out",
        path_str(d.path()),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("Not Skipped"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("compare.json")).unwrap())
            .unwrap();
    assert_eq!(json["skipped"], json["not_skipped"]);
    assert_eq!(json["skip_mode"], "detect");
}

#[test]
fn compare_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = d.path().join(format!("c{i}"));
        let (code, stdout, err) = lac(&[
            "compare",
            "--seed-model",
            "d8,h2,l4",
            "--suite",
            "copy",
            "--out",
            path_str(&out),
        ]);
        assert_eq!(code, 0, "{err}");
        outputs.push((stdout, std::fs::read(out.join("compare.json")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn init_weights_then_load() {
    let d = tempfile::tempdir().unwrap();
    let weights = d.path().join("w").join("model.lac");
    let (code, _, err) = lac(&[
        "init-weights",
        "--seed-model",
        "d8,h2,l3,s4",
        "--out",
        path_str(&weights),
    ]);
    assert_eq!(code, 0, "{err}");

    let a = d.path().join("a");
    let b = d.path().join("b");
    assert_eq!(
        lac(&[
            "trace",
            "--weights",
            path_str(&weights),
            "--prompt",
            "same",
            "--out",
            path_str(&a)
        ])
        .0,
        0
    );
    assert_eq!(
        lac(&[
            "trace",
            "--seed-model",
            "d8,h2,l3,s4",
            "--prompt",
            "same",
            "--out",
            path_str(&b)
        ])
        .0,
        0
    );
    assert_eq!(
        std::fs::read(a.join("trace.jsonl")).unwrap(),
        std::fs::read(b.join("trace.jsonl")).unwrap()
    );
}

#[test]
fn help_exits_zero() {
    let (code, stdout, _) = lac(&["--help"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("trace"));
}
