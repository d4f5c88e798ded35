use std::path::Path;
use std::process::{Command, Output};

use declip::clip_mask;
use declip::experiment::read_csv;
use declip::wav::{read_wav, write_wav, SampleFormat};
use declip::Signal;

fn declip(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_declip"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth(dir: &Path, seed: &str, count: &str) {
    let out = declip(
        dir,
        &[
            "synth",
            "--seed",
            seed,
            "--count",
            count,
            "--out-dir",
            "corpus",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn synth_writes_peak_normalized_files() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "9", "3");
    for i in 0..3 {
        let s = read_wav(dir.path().join(format!("corpus/synth-9-{i:04}.wav"))).unwrap();
        assert_eq!(s.len(), 16384);
        assert_eq!(s.sample_rate(), 16000);
        assert_eq!(s.peak(), 1.0);
    }
}

#[test]
fn clip_then_declip_is_consistent_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "4", "1");
    let out = declip(
        dir.path(),
        &[
            "clip",
            "--in",
            "corpus/synth-4-0000.wav",
            "--out",
            "clipped.wav",
            "--tau",
            "0.25",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = declip(
        dir.path(),
        &[
            "declip",
            "--in",
            "clipped.wav",
            "--out",
            "restored.wav",
            "--tau",
            "0.25",
            "--iters",
            "30",
            "--truth",
            "corpus/synth-4-0000.wav",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("delta_sdr="));
    let y = read_wav(dir.path().join("clipped.wav")).unwrap();
    let x = read_wav(dir.path().join("restored.wav")).unwrap();
    let mask = clip_mask(&y, 0.25).unwrap();
    assert!(mask.clip_ratio() > 0.0);
    assert!(mask.is_consistent(x.samples(), y.samples()));
}

#[test]
fn oracle_run_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "4", "1");
    let out = declip(
        dir.path(),
        &[
            "declip",
            "--in",
            "corpus/synth-4-0000.wav",
            "--out",
            "r.wav",
            "--input-sdr",
            "5",
            "--method",
            "applade-oracle",
            "--auto-lambda",
            "--iters",
            "12",
            "--trace",
            "trace.csv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(
        lines[0],
        "iteration,primal_residual,dual_change,delta_sdr,elapsed"
    );
    assert_eq!(lines.len(), 13);
}

#[test]
fn bad_arguments_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1", "1");
    let f = "corpus/synth-1-0000.wav";
    let cases: [&[&str]; 6] = [
        &["declip", "--out", "r.wav"],
        &[
            "declip",
            "--in",
            f,
            "--out",
            "r.wav",
            "--tau",
            "0.3",
            "--input-sdr",
            "3",
        ],
        &[
            "declip",
            "--in",
            f,
            "--out",
            "r.wav",
            "--lambda",
            "1",
            "--auto-lambda",
        ],
        &[
            "declip",
            "--in",
            f,
            "--out",
            "r.wav",
            "--method",
            "applade-dnn",
        ],
        &[
            "declip",
            "--in",
            f,
            "--out",
            "r.wav",
            "--method",
            "applade-oracle",
        ],
        &["clip", "--in", f, "--out", "c.wav"],
    ];
    for args in cases {
        let out = declip(dir.path(), args);
        assert_eq!(code(&out), 2, "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn io_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = declip(
        dir.path(),
        &["declip", "--in", "missing.wav", "--out", "r.wav"],
    );
    assert_eq!(code(&out), 3);
    std::fs::write(dir.path().join("bad.wav"), b"RIFF\0\0\0\0WAVX").unwrap();
    let out = declip(dir.path(), &["declip", "--in", "bad.wav", "--out", "r.wav"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("byte offset 8"), "{}", stderr(&out));
    let out = declip(
        dir.path(),
        &[
            "declip",
            "--in",
            "bad.wav",
            "--out",
            "r.wav",
            "--method",
            "applade-dnn",
            "--model",
            "none.aplw",
        ],
    );
    assert_eq!(code(&out), 3);
}

#[test]
fn divergence_exits_4_and_keeps_the_trace() {
    // an oversized lambda zeroes almost every bin; the dual variable then
    // drifts until the energy alarm fires
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "2024", "1");
    let out = declip(
        dir.path(),
        &[
            "declip",
            "--in",
            "corpus/synth-2024-0000.wav",
            "--out",
            "r.wav",
            "--input-sdr",
            "1",
            "--method",
            "applade-oracle",
            "--lambda",
            "18000",
            "--trace",
            "trace.csv",
        ],
    );
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"));
    assert!(!dir.path().join("r.wav").exists());
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.lines().count() > 2);
}

#[test]
fn bench_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{
        "corpus": {"synthetic": {"seed": 12, "count": 2}},
        "levels": [3, 10],
        "methods": [{"method": "clip-only"}, {"method": "pwl1"}],
        "iterations": 15,
        "outputs": {"csv": "m.csv", "summary": "s.json", "restored": "wav"}
    }"#;
    std::fs::write(dir.path().join("spec.json"), spec).unwrap();
    let out = declip(
        dir.path(),
        &["bench", "--spec", "spec.json", "--out-dir", "run"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = read_csv(&dir.path().join("run/m.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2);
    for r in &rows {
        assert!(r.is_ok());
        if r.method == "clip-only" {
            assert_eq!(r.delta_sdr_db, Some(0.0));
        }
        let tag = format!("{}dB", r.input_sdr_db);
        let y = read_wav(
            dir.path()
                .join(format!("run/wav/{}_{tag}_clipped.wav", r.signal_id)),
        )
        .unwrap();
        let x = read_wav(
            dir.path()
                .join(format!("run/wav/{}_{tag}_{}.wav", r.signal_id, r.method)),
        )
        .unwrap();
        let tau = r.tau.unwrap() as f32 as f64;
        assert!(clip_mask(&y, tau)
            .unwrap()
            .is_consistent(x.samples(), y.samples()));
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/s.json")).unwrap())
            .unwrap();
    assert_eq!(summary["rows"].as_array().unwrap().len(), 4);
    let bad = declip(
        dir.path(),
        &["bench", "--spec", "missing.json", "--out-dir", "run"],
    );
    assert_eq!(code(&bad), 3);
}

#[test]
fn help_lists_subcommands() {
    let out = declip(Path::new("."), &["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["declip", "clip", "synth", "bench"] {
        assert!(text.contains(sub));
    }
}

#[test]
fn bench_reads_and_normalizes_a_wav_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("in")).unwrap();
    let quiet = Signal::new(
        (0..4096).map(|t| 0.25 * (0.05 * t as f64).sin()).collect(),
        16000,
    )
    .unwrap();
    write_wav(
        dir.path().join("in/b_quiet.wav"),
        &quiet,
        SampleFormat::Float32,
    )
    .unwrap();
    write_wav(
        dir.path().join("in/a_notes.txt.wav"),
        &quiet
            .with_samples(quiet.samples().iter().map(|v| 2.0 * v).collect())
            .unwrap(),
        SampleFormat::Pcm16,
    )
    .unwrap();
    let spec = r#"{
        "corpus": {"wav_dir": "in"},
        "levels": [5],
        "methods": [{"method": "pwl1"}],
        "iterations": 10,
        "outputs": {"restored": "wav"}
    }"#;
    std::fs::write(dir.path().join("spec.json"), spec).unwrap();
    let out = declip(
        dir.path(),
        &["bench", "--spec", "spec.json", "--out-dir", "run"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = read_csv(&dir.path().join("run/metrics.csv")).unwrap();
    let ids: Vec<&str> = rows.iter().map(|r| r.signal_id.as_str()).collect();
    assert_eq!(ids, ["a_notes.txt", "b_quiet"]);
    // both signals are peak-normalized before clipping, so they share tau
    let (t0, t1) = (rows[0].tau.unwrap(), rows[1].tau.unwrap());
    assert!((t0 - t1).abs() < 1e-3, "{t0} vs {t1}");
    assert!(t0 > 0.25 && t0 < 1.0);
}
