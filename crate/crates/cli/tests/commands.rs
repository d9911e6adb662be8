use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use reparam_core::audiofeat::{read_feature_csv, write_wav, WaveClip};
use reparam_core::checkpoint::{load_model, save_model, Container};
use reparam_core::model::{ModelConfig, ModelSpec};

fn reparam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reparam"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_spec(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let text = format!(
        r#"{{
            "model": {{"family": "ConvTransformer"}},
            "train": {{"epochs": 2, "seeds": [1, 2]}},
            "data": {{"source": "synthetic", "samples_per_class": 10, "frames": 16}}
            {extra}
        }}"#
    );
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(dir: &Path, spec: &Path, out: &str) -> (Output, PathBuf) {
    let out_dir = dir.join(out);
    let o = reparam(&["train", "--config", s(spec), "--out", s(&out_dir)]);
    (o, out_dir)
}

#[test]
fn train_writes_checkpoint_logs_and_summary() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(tmp.path(), "plain.json", "");
    let (o, out) = train(tmp.path(), &spec, "plain");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("checkpoint.rptf").is_file());
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"].as_array().unwrap().len(), 2);
    assert!(summary["mean"]["WA"].is_number());
    assert_eq!(summary["train_params"], summary["merged_params"]);
    let log = fs::read_to_string(out.join("logs/seed-1.jsonl")).unwrap();
    let records: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 3);
    for key in ["epoch", "lr", "train_loss", "val_loss", "WA", "UA", "WF1", "MF1"] {
        assert!(records[2].get(key).is_some(), "missing {key}");
    }
}

#[test]
fn seed_list_flag_gives_five_rows() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(tmp.path(), "plain.json", "");
    let out = tmp.path().join("five");
    let o = reparam(&["train", "--config", s(&spec), "--seed-list", "1,2,3,4,5", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    let seeds: Vec<u64> = summary["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["seed"].as_u64().unwrap())
        .collect();
    assert_eq!(seeds, [1, 2, 3, 4, 5]);
    assert!(summary["mean"].is_object());
}

#[test]
fn hrf_train_merge_verify_round() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(
        tmp.path(),
        "hrf.json",
        r#", "hrf": {"selectors": ["FFN2"], "ratio": 8, "depth": 1}"#,
    );
    let (o, out) = train(tmp.path(), &spec, "hrf");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = out.join("checkpoint.rptf");

    let meta = Container::load(&ckpt).unwrap().meta;
    assert_eq!(meta["plan"]["ratio"], 8);
    assert_eq!(meta["plan"]["selectors"][0], "FFN2");

    let merged = tmp.path().join("merged.rptf");
    let o = reparam(&["merge", s(&ckpt), "--out", s(&merged)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["max_abs_output_diff"].as_f64().unwrap() <= 1e-9);
    assert_eq!(report["probes"], 100);

    let baseline = ModelSpec::new(ModelConfig::lightweight("ConvTransformer", 4).unwrap(), None)
        .instantiate(0)
        .unwrap()
        .param_count();
    let m = load_model(&merged).unwrap();
    assert_eq!(m.param_count(), baseline);
    assert_eq!(report["merged_param_count"].as_u64().unwrap() as usize, baseline);
    assert!(m.plan().is_none() && !m.is_expanded());

    let again = tmp.path().join("again.rptf");
    let o = reparam(&["merge", s(&merged), "--out", s(&again)]);
    assert_eq!(code(&o), 0);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["max_abs_output_diff"].as_f64().unwrap(), 0.0);
    assert_eq!(fs::read(&merged).unwrap(), fs::read(&again).unwrap());

    let o = reparam(&["verify", s(&ckpt), s(&ckpt)]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["max_abs_diff"].as_f64().unwrap(), 0.0);

    let o = reparam(&["verify", s(&ckpt), s(&merged)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));

    let fresh = tmp.path().join("fresh.rptf");
    let spec = ModelSpec::new(ModelConfig::lightweight("ConvTransformer", 4).unwrap(), None);
    save_model(&spec.instantiate(99).unwrap(), &fresh).unwrap();
    let o = reparam(&["verify", s(&ckpt), s(&fresh)]);
    assert_eq!(code(&o), 3);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["pass"], false);
}

#[test]
fn verify_rejects_mismatched_dims() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a.rptf");
    let b = tmp.path().join("b.rptf");
    for (path, classes) in [(&a, 4), (&b, 7)] {
        let spec = ModelSpec::new(ModelConfig::lightweight("ConvTransformer", classes).unwrap(), None);
        save_model(&spec.instantiate(1).unwrap(), path).unwrap();
    }
    assert_eq!(code(&reparam(&["verify", s(&a), s(&b)])), 2);
}

#[test]
fn bad_inputs_exit_with_usage_code() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"model": {"family": "ConvTransformer", "d_modle": 8}, "data": {"source": "synthetic"}}"#).unwrap();
    let o = reparam(&["train", "--config", s(&bad), "--out", s(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("d_modle"));

    let missing = tmp.path().join("missing.rptf");
    assert_eq!(code(&reparam(&["merge", s(&missing), "--out", s(&missing)])), 2);

    let garbage = tmp.path().join("garbage.rptf");
    fs::write(&garbage, b"NOPE0000000000000000").unwrap();
    let o = reparam(&["merge", s(&garbage), "--out", s(&missing)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));

    let spec = write_spec(tmp.path(), "ok.json", "");
    assert_eq!(code(&reparam(&["sweep", "--config", s(&spec), "--axis", "width", "--out", s(tmp.path())])), 2);
    assert_eq!(code(&reparam(&["train", "--config", s(&spec)])), 2);
    assert_eq!(code(&reparam(&["train", "--config", s(&spec), "--seed-list", "a", "--out", s(tmp.path())])), 2);
}

#[test]
fn divergence_exits_with_numeric_code() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("hot.json");
    fs::write(
        &path,
        r#"{"model": {"family": "ConvTransformer"},
            "train": {"epochs": 2, "seeds": [1], "lr0": 1e200},
            "data": {"source": "synthetic", "samples_per_class": 10, "frames": 16}}"#,
    )
    .unwrap();
    let out = tmp.path().join("hot");
    let o = reparam(&["train", "--config", s(&path), "--out", s(&out)]);
    assert_eq!(code(&o), 3);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"][0]["status"], "diverged");
}

fn tone(seconds: f64, freq: f64) -> WaveClip {
    let n = (seconds * 16000.0) as usize;
    let samples = (0..n)
        .map(|i| 0.3 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
        .collect();
    WaveClip::new(samples, 16000).unwrap()
}

#[test]
fn features_command_writes_fixed_shape_files_and_index() {
    let tmp = TempDir::new().unwrap();
    let wavs = tmp.path().join("wavs");
    fs::create_dir_all(wavs.join("calm")).unwrap();
    fs::create_dir_all(wavs.join("loud")).unwrap();
    write_wav(wavs.join("calm/a.wav"), &tone(5.0, 220.0)).unwrap();
    write_wav(wavs.join("calm/b.wav"), &tone(2.0, 330.0)).unwrap();
    write_wav(wavs.join("loud/c.wav"), &tone(7.0, 440.0)).unwrap();
    write_wav(wavs.join("loud/d.wav"), &WaveClip::new(vec![0.0; 8000], 8000).unwrap()).unwrap();

    let out = tmp.path().join("feat");
    let o = reparam(&["features", s(&wavs), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["written"], 3);
    assert_eq!(report["skipped"].as_array().unwrap().len(), 1);

    let index = fs::read_to_string(out.join("index.csv")).unwrap();
    assert_eq!(index, "path,label\ncalm/a.csv,0\ncalm/b.csv,0\nloud/c.csv,1\n");
    for f in ["calm/a.csv", "calm/b.csv", "loud/c.csv"] {
        assert_eq!(read_feature_csv(out.join(f)).unwrap().shape(), (78, 498));
    }

    let out2 = tmp.path().join("feat2");
    assert_eq!(code(&reparam(&["features", s(&wavs), "--out", s(&out2)])), 0);
    for f in ["index.csv", "calm/a.csv", "loud/c.csv"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(out2.join(f)).unwrap(), "{f}");
    }

    let out3 = tmp.path().join("feat3");
    let o = reparam(&["features", s(&wavs), "--out", s(&out3), "--format", "rptf", "--zscore"]);
    assert_eq!(code(&o), 0);
    let c = Container::load(out3.join("calm/b.rptf")).unwrap();
    assert_eq!(c.get("features").unwrap().shape(), (78, 498));
    assert!(c.meta["pad_frames"].as_u64().unwrap() > 0);
}

#[test]
fn features_command_fails_on_empty_or_unreadable_input() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert_eq!(code(&reparam(&["features", s(&empty), "--out", s(&tmp.path().join("o"))])), 2);

    let broken = tmp.path().join("broken");
    fs::create_dir_all(&broken).unwrap();
    fs::write(broken.join("x.wav"), b"not a wav").unwrap();
    let o = reparam(&["features", s(&broken), "--out", s(&tmp.path().join("o"))]);
    assert_ne!(code(&o), 0);
}

#[test]
fn sweep_ratio_axis_writes_four_rows() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(tmp.path(), "sweep.json", "");
    let out = tmp.path().join("sweep");
    let o = reparam(&["sweep", "--config", s(&spec), "--axis", "ratio", "--seed-list", "1", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep_ratio.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "axis,value,WA,UA,WF1,MF1,train_params,merged_params");
    let rows: Vec<Vec<&str>> = lines[1..].iter().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.iter().map(|r| r[1]).collect::<Vec<_>>(), ["0", "2", "4", "8"]);
    assert!(rows.iter().all(|r| r[7] == rows[0][7]));
    assert_eq!(rows[0][6], rows[0][7]);
    assert!(rows[1..].iter().all(|r| r[6].parse::<usize>().unwrap() > r[7].parse::<usize>().unwrap()));
    assert_eq!(String::from_utf8_lossy(&o.stdout), csv);
}
