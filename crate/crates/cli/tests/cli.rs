use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qmic_core::audio::{synthetic_speech, AUDIO_SAMPLE_RATE};
use serde_json::Value;

fn qmic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmic")).args(args).output().expect("spawn qmic")
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

fn error_record(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error record on stderr");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {stderr}"))
}

const SMALL: &str = r#"{
    "benchmark": {"bins": 65536, "band_edges_hz": [200, 5000, 50000]},
    "audio": {"synthetic_files": 2, "clip_seconds": 0.25, "volume_steps": 4, "volume_start_db": 60},
    "stats": {"population": {"subjects": 12}, "power_replications": 50}
}"#;

#[test]
fn commands_are_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    for cmd in ["fringe-sweep", "noise-benchmark", "record-batch", "srt"] {
        let a = tmp.path().join(format!("{cmd}-a"));
        let b = tmp.path().join(format!("{cmd}-b"));
        for dir in [&a, &b] {
            let out = qmic(&["--config", &cfg, "--seed", "5", "--out-dir", dir.to_str().unwrap(), cmd]);
            assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        }
        let mut files: Vec<_> = walk(&a);
        files.sort();
        assert!(!files.is_empty(), "{cmd} wrote nothing");
        for rel in files {
            assert_eq!(fs::read(a.join(&rel)).unwrap(), fs::read(b.join(&rel)).unwrap(), "{cmd}: {rel}");
        }
    }
}

fn walk(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out
}

#[test]
fn fringe_sweep_reports_doubled_fringes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qmic(&["--out-dir", tmp.path().to_str().unwrap(), "fringe-sweep"]);
    assert!(out.status.success());
    let summary = fs::read_to_string(tmp.path().join("fringe_summary.csv")).unwrap();
    let row: Vec<f64> = summary.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((row[2] - 2.0).abs() < 1e-3, "ratio {}", row[2]);
    let sweep = fs::read_to_string(tmp.path().join("fringe_sweep.csv")).unwrap();
    let d: Vec<f64> = sweep.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert!(d.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn unknown_key_exits_with_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"quantum": {"visiblity": 0.9}}"#);
    let out = qmic(&["--config", &cfg, "fringe-sweep"]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_record(&out);
    assert_eq!(err["field"], "quantum");
    assert!(err["message"].as_str().unwrap().contains("visiblity"));

    let cfg = write_config(tmp.path(), r#"{"sead": 1}"#);
    let out = qmic(&["--config", &cfg, "fringe-sweep"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["field"], "sead");
}

#[test]
fn invalid_value_names_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"quantum": {"visibility": 1.5}}"#);
    let out = qmic(&["--config", &cfg, "noise-benchmark"]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_record(&out);
    assert_eq!(err["field"], "quantum.visibility");
    assert_eq!(err["exit_code"], 2);
}

#[test]
fn empty_detector_bins_are_a_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"classical": {"photon_rate": 10}, "quantum": {"photon_rate": 10}, "benchmark": {"bins": 4096}}"#,
    );
    let out = qmic(&["--config", &cfg, "--out-dir", tmp.path().to_str().unwrap(), "noise-benchmark"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_record(&out)["kind"], "numerical");
}

#[test]
fn record_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.wav");
    synthetic_speech(0.5, AUDIO_SAMPLE_RATE, 3).unwrap().write_wav(&input).unwrap();
    let output = tmp.path().join("nested/out.wav");
    let out = qmic(&[
        "record",
        "--in",
        input.to_str().unwrap(),
        "--scheme",
        "quantum",
        "--volume",
        "65",
        "--seed",
        "4",
        "--out",
        output.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rec = qmic_core::audio::AudioSignal::read_wav(&output).unwrap();
    assert_eq!(rec.len(), (0.5 * AUDIO_SAMPLE_RATE) as usize);

    let bad = qmic(&["record", "--in", input.to_str().unwrap(), "--scheme", "laser", "--volume", "60", "--out", "x.wav"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("laser"));
}

#[test]
fn record_batch_from_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    synthetic_speech(0.3, AUDIO_SAMPLE_RATE, 1).unwrap().write_wav(tmp.path().join("a.wav")).unwrap();
    let mut manifest = String::from("file,volume_db_spl,scheme,seed\n");
    for v in [55, 58, 61, 64] {
        for scheme in ["classical", "quantum"] {
            manifest += &format!("a.wav,{v},{scheme},{v}\n");
        }
    }
    fs::write(tmp.path().join("manifest.csv"), manifest).unwrap();
    let out_dir = tmp.path().join("out");
    let out = qmic(&[
        "--out-dir",
        out_dir.to_str().unwrap(),
        "record-batch",
        "--manifest",
        tmp.path().join("manifest.csv").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = fs::read_to_string(out_dir.join("snr_results.csv")).unwrap();
    assert_eq!(results.lines().next().unwrap(), "file,scheme,volume,snr_db");
    assert_eq!(results.lines().count(), 9);
    assert_eq!(walk(&out_dir.join("recordings")).len(), 8);
}

#[test]
fn srt_from_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let diffs = qmic_core::srt::reconstruct_population(45, -0.57, 1.45, 0.71).unwrap();
    let mut csv = String::from("subject,srt_classical_db,srt_quantum_db\n");
    for (i, d) in diffs.iter().enumerate() {
        csv += &format!("s{i},-10.0,{}\n", -10.0 + d);
    }
    let input = tmp.path().join("srt.csv");
    fs::write(&input, csv).unwrap();
    let out = qmic(&["--out-dir", tmp.path().to_str().unwrap(), "srt", "--input", input.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(tmp.path().join("srt_report.csv")).unwrap();
    let get = |key: &str| -> f64 {
        report.lines().find(|l| l.starts_with(key)).unwrap().split(',').nth(1).unwrap().parse().unwrap()
    };
    assert!((get("sem_db") - 0.216).abs() < 0.001);
    assert!((get("p_one_sided") - 0.006).abs() < 0.001);
    assert!(String::from_utf8_lossy(&out.stdout).contains("71%"));
}

#[test]
fn help_lists_flags() {
    let out = qmic(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--config", "--seed", "--out-dir", "fringe-sweep", "noise-benchmark", "record-batch", "srt"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}
