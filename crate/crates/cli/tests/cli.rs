use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn lab(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fmae-lab"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

/// Parses the single JSON error line and returns its `error` object.
fn error_line(o: &Output) -> Value {
    assert!(!o.status.success());
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str::<Value>(line).expect("machine-parsable error")["error"].clone()
}

fn write_config(dir: &Path, name: &str, v: Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p
}

fn gen(dir: &Path, name: &str, count: usize, duration: f64, seed: u64) -> PathBuf {
    let cfg = write_config(
        dir,
        &format!("{name}.json"),
        json!({"schema_version": 1, "mode": "synth", "count": count, "duration_s": duration, "seed": seed}),
    );
    let out = dir.join(name);
    ok(&lab("gen", &cfg, &out, &[]));
    out
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn without_timestamps(mut v: Value) -> Value {
    let m = v.as_object_mut().unwrap();
    m.remove("started_unix");
    m.remove("finished_unix");
    v
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn synth_corpus_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = gen(tmp.path(), "a", 10, 0.05, 7);
    let wavs = fs::read_dir(&a).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "wav"));
    assert_eq!(wavs.count(), 10);
    let cfg = tmp.path().join("a.json");
    let b = tmp.path().join("b");
    ok(&lab("gen", &cfg, &b, &[]));
    assert_eq!(files(&a), files(&b));
    assert_eq!(without_timestamps(manifest(&a)), without_timestamps(manifest(&b)));
    assert_eq!(manifest(&a)["seed"], 7);
    // the flag wins over the config
    let c = tmp.path().join("c");
    ok(&lab("gen", &cfg, &c, &["--seed", "8"]));
    assert_ne!(files(&a), files(&c));
    assert_eq!(manifest(&c)["seed"], 8);
}

/// Minimal 16-bit PCM WAV with two interleaved channels.
fn stereo_wav(path: &Path) {
    let frames = 100u32;
    let data_len = frames * 4;
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data_len).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&2u16.to_le_bytes());
    b.extend_from_slice(&20_000u32.to_le_bytes());
    b.extend_from_slice(&80_000u32.to_le_bytes());
    b.extend_from_slice(&4u16.to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&data_len.to_le_bytes());
    for i in 0..frames * 2 {
        b.extend_from_slice(&((i as i16) * 50).to_le_bytes());
    }
    fs::write(path, b).unwrap();
}

#[test]
fn stereo_input_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    stereo_wav(&tmp.path().join("st.wav"));
    let cfg = write_config(tmp.path(), "ingest.json", json!({"schema_version": 1, "mode": "ingest", "files": ["st.wav"]}));
    let o = lab("gen", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let e = error_line(&o);
    assert_eq!(e["kind"], "signal");
    assert!(e["message"].as_str().unwrap().contains("mono"));
}

#[test]
fn config_problems_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "g.json", json!({"schema_version": 1, "mode": "synth", "duration_s": 0.1}));
    let o = lab("gen", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let e = error_line(&o);
    assert_eq!(e["kind"], "bad_config");
    assert!(e["message"].as_str().unwrap().contains("`count`"), "{e}");

    let cfg = write_config(tmp.path(), "v.json", json!({"schema_version": 9, "mode": "synth", "count": 1, "duration_s": 0.1}));
    let e = error_line(&lab("gen", &cfg, &tmp.path().join("out"), &[]));
    assert!(e["message"].as_str().unwrap().contains("schema_version 9"));
}

fn identity(channels: usize) -> Value {
    json!({"kind": "identity", "channels": channels})
}

#[test]
fn identity_weights_follow_the_level_law() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = gen(tmp.path(), "corpus", 4, 0.05, 1);
    let cfg = write_config(
        tmp.path(),
        "w.json",
        json!({"schema_version": 1, "model": identity(2), "corpus": "corpus", "grid": {"min": 40.0, "max": 80.0, "step": 10.0}}),
    );
    let out = tmp.path().join("w");
    ok(&lab("weights", &cfg, &out, &[]));
    let t: Value = serde_json::from_str(&fs::read_to_string(out.join("weights.json")).unwrap()).unwrap();
    let levels: Vec<f64> = serde_json::from_value(t["levels"].clone()).unwrap();
    let alpha: Vec<Vec<f64>> = serde_json::from_value(t["alpha"].clone()).unwrap();
    for row in &alpha {
        for (a, l) in row.iter().zip(&levels) {
            let expected = 10f64.powf((80.0 - l) / 20.0);
            assert!((a / expected - 1.0).abs() < 1e-9, "{a} vs {expected}");
        }
    }
    let m = manifest(&out);
    assert_eq!(m["command"], "weights");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 5);
    assert_eq!(m["outputs"][0]["path"], "weights.json");
    assert!(corpus.exists());

    let single = write_config(
        tmp.path(),
        "s.json",
        json!({"schema_version": 1, "model": identity(3), "corpus": "corpus", "grid": {"levels": [65.0]}}),
    );
    let out = tmp.path().join("s");
    ok(&lab("weights", &single, &out, &[]));
    let t: Value = serde_json::from_str(&fs::read_to_string(out.join("weights.json")).unwrap()).unwrap();
    let alpha: Vec<Vec<f64>> = serde_json::from_value(t["alpha"].clone()).unwrap();
    assert!(alpha.iter().all(|r| r.len() == 1 && (r[0] - 1.0).abs() < 1e-12));
}

#[test]
fn corrupted_corpus_is_detected() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = gen(tmp.path(), "corpus", 3, 0.05, 2);
    let mut bytes = fs::read(corpus.join("utt_00001.wav")).unwrap();
    let n = bytes.len();
    bytes[n - 1] ^= 0x40;
    fs::write(corpus.join("utt_00001.wav"), bytes).unwrap();
    let cfg = write_config(tmp.path(), "w.json", json!({"schema_version": 1, "model": identity(1), "corpus": "corpus"}));
    let o = lab("weights", &cfg, &tmp.path().join("w"), &[]);
    let e = error_line(&o);
    assert_eq!(e["kind"], "digest_mismatch");
    assert!(e["message"].as_str().unwrap().contains("utt_00001.wav"));
}

fn train_config(objective: &str, weights: Option<&str>) -> Value {
    let mut v = json!({
        "schema_version": 1,
        "seed": 3,
        "model": identity(2),
        "corpus": "train",
        "network": {"family": "waveunet", "blocks": 2, "kernel": 3, "decoder_kernel": 3, "depth": 4},
        "training": {
            "objective": objective, "epochs": 2, "batch_size": 4, "lr": 0.01,
            "window": {"window_len": 256, "left_context": 32, "right_context": 32},
            "grid": {"levels": [60.0, 80.0]}
        }
    });
    if let Some(w) = weights {
        v["weights"] = json!(w);
    }
    v
}

#[test]
fn fmae_training_without_weights_is_actionable() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "train", 2, 0.0512, 1);
    let cfg = write_config(tmp.path(), "t.json", train_config("fmae", None));
    let e = error_line(&lab("train", &cfg, &tmp.path().join("run"), &[]));
    assert_eq!(e["kind"], "missing_weight_table");
    assert!(e["hint"].as_str().unwrap().contains("fmae-lab weights"));
}

#[test]
fn train_then_evaluate_on_a_disjoint_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    gen(d, "train", 4, 0.0512, 1);
    gen(d, "test", 2, 0.0512, 99);
    let w = write_config(
        d,
        "w.json",
        json!({"schema_version": 1, "model": identity(2), "corpus": "train", "grid": {"levels": [60.0, 80.0]}}),
    );
    ok(&lab("weights", &w, &d.join("weights"), &[]));
    let t_fmae = write_config(d, "tf.json", train_config("fmae", Some("weights/weights.json")));
    let t_mae = write_config(d, "tm.json", train_config("mae", None));
    ok(&lab("train", &t_fmae, &d.join("run_fmae"), &[]));
    ok(&lab("train", &t_mae, &d.join("run_mae"), &[]));
    assert!(d.join("run_fmae/final.ckpt").exists());

    let eval = |test: &str, out: &str| {
        let cfg = write_config(
            d,
            &format!("{out}.json"),
            json!({
                "schema_version": 1, "model": identity(2), "test_corpus": test,
                "runs": {"mae": "run_mae", "fmae": "run_fmae"},
                "grid": {"levels": [60.0, 80.0]}, "deltas": [["fmae", "mae"]]
            }),
        );
        lab("eval", &cfg, &d.join(out), &[])
    };
    ok(&eval("test", "report"));
    let report = d.join("report");
    for f in ["ser_mae.csv", "ser_fmae.csv", "delta_fmae_minus_mae.csv", "logmae_mae.csv", "summary.json", "plot.py"] {
        assert!(report.join(f).exists(), "{f}");
    }
    let m = manifest(&report);
    let listed: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|a| a["path"].as_str().unwrap()).collect();
    let mut on_disk: Vec<String> = files(&report).into_iter().map(|(n, _)| n).collect();
    on_disk.sort();
    assert_eq!(listed, on_disk);
    let summary: Value = serde_json::from_str(&fs::read_to_string(report.join("summary.json")).unwrap()).unwrap();
    assert!(summary["ge"]["fmae"].as_f64().unwrap().is_finite());

    let e = error_line(&eval("train", "leaky"));
    assert_eq!(e["kind"], "eval");
    assert!(e["message"].as_str().unwrap().contains("training corpus"));
}

#[test]
fn energy_map_of_the_impaired_surrogate() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "corpus", 3, 0.2, 4);
    let cfg = write_config(
        tmp.path(),
        "e.json",
        json!({"schema_version": 1, "model": {"kind": "surrogate", "profile": "N3", "params": {"channels": 16}}, "corpus": "corpus"}),
    );
    let (one, two) = (tmp.path().join("e1"), tmp.path().join("e2"));
    ok(&lab("energymap", &cfg, &one, &["--workers", "1"]));
    ok(&lab("energymap", &cfg, &two, &["--workers", "2"]));
    assert_eq!(files(&one), files(&two));
    let s: Value = serde_json::from_str(&fs::read_to_string(one.join("energy_summary.json")).unwrap()).unwrap();
    assert!(s["max_min_ratio"].as_f64().unwrap() >= 1e6, "{s}");
    assert_eq!(s["monotone_channels"], 16);
    let csv = fs::read_to_string(one.join("energy.csv")).unwrap();
    assert!(csv.starts_with("cf_hz,40.0,50.0,"));
    assert_eq!(csv.lines().count(), 17);
}

#[test]
fn excitation_patterns_for_the_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "x.json",
        json!({
            "schema_version": 1, "model": {"kind": "surrogate", "params": {"channels": 16}},
            "freqs": [500.0, 2000.0], "levels": [60.0], "duration_s": 0.2
        }),
    );
    let out = tmp.path().join("x");
    ok(&lab("excite", &cfg, &out, &[]));
    let s: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let peaks = s["excitation_argmax_hz"]["reference"].as_array().unwrap();
    for (p, f) in peaks.iter().zip([500.0, 2000.0]) {
        assert!((p[2].as_f64().unwrap() / f - 1.0).abs() < 1e-9, "{p}");
    }
    let bad = write_config(
        tmp.path(),
        "n.json",
        json!({"schema_version": 1, "model": identity(1), "freqs": [12000.0], "levels": [60.0]}),
    );
    assert_eq!(error_line(&lab("excite", &bad, &tmp.path().join("n"), &[]))["kind"], "eval");
}
