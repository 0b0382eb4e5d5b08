//! End-to-end behaviour of the `spikekit` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spikekit_cli::provenance::hash_file;

fn spikekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikekit"))
        .args(args)
        .output()
        .expect("spawn spikekit")
}

fn ok(args: &[&str]) -> Output {
    let o = spikekit(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_writes_clip_dirs_and_prompts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    ok(&["synth", "--seed", "4", "--frames", "3", "--out", s(&out)]);
    let clip_dirs = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(clip_dirs, 48);
    let prompts = fs::read_to_string(out.join("prompts.txt")).unwrap();
    assert_eq!(prompts.lines().count(), 4);
    assert!(out.join("dataset.json.prov.json").exists());

    let again = dir.path().join("again");
    ok(&["synth", "--seed", "4", "--frames", "3", "--out", s(&again)]);
    for clip in ["wave_000", "throw_011"] {
        for f in ["frame_00000.pgm", "frame_00002.pgm"] {
            assert_eq!(
                fs::read(out.join(clip).join(f)).unwrap(),
                fs::read(again.join(clip).join(f)).unwrap()
            );
        }
    }
}

#[test]
fn synth_without_seed_is_a_precondition_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = spikekit(&["synth", "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
}

#[test]
fn decode_then_encode_at_unit_threshold_reproduces_stream() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "1", "--classes", "wave,clap", "--clips", "1", "--frames", "6", "--out", s(&d.join("data"))]);
    let first = d.join("a.dat");
    ok(&["encode", "--theta", "2.5", "--upsample", "4", s(&d.join("data/wave_000")), "--out", s(&first)]);
    ok(&["decode", s(&first), "--out", s(&d.join("frames"))]);
    let second = d.join("b.dat");
    ok(&["encode", "--theta", "1", s(&d.join("frames")), "--out", s(&second)]);
    assert_eq!(hash_file(&first).unwrap(), hash_file(&second).unwrap());
    assert!(d.join("b.dat.prov.json").exists());
}

#[test]
fn missing_stream_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let dat = dir.path().join("none.dat");
    fs::write(dir.path().join("none.meta.json"), r#"{"height":2,"width":2,"t_len":3,"threshold_theta":5.0}"#).unwrap();
    let o = spikekit(&["decode", s(&dat), "--out", s(&dir.path().join("f"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn dimension_mismatch_fails_loudly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("x.dat"), [0u8; 3]).unwrap();
    fs::write(d.join("x.meta.json"), r#"{"height":4,"width":4,"t_len":4,"threshold_theta":5.0}"#).unwrap();
    let o = spikekit(&["decode", s(&d.join("x.dat")), "--out", s(&d.join("f"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("length mismatch"));
}

#[test]
fn slice_and_subsample_honor_meta_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "2", "--classes", "punch,throw", "--clips", "1", "--frames", "8", "--out", s(&d.join("data"))]);
    let dat = d.join("p.dat");
    ok(&["encode", s(&d.join("data/punch_000")), "--upsample", "20", "--out", s(&dat)]);
    let meta = d.join("custom.json");
    fs::rename(d.join("p.meta.json"), &meta).unwrap();
    let o = spikekit(&["slice", s(&dat), "--out", s(&d.join("clips"))]);
    assert_eq!(o.status.code(), Some(2));
    ok(&["slice", s(&dat), "--meta", s(&meta), "--window", "100", "--stride", "20", "--out", s(&d.join("clips"))]);
    // 141 steps: floor((141 - 100) / 20) + 1 = 3 windows.
    let clips = fs::read_dir(d.join("clips"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "dat"))
        .count();
    assert_eq!(clips, 3);
    ok(&["subsample", s(&dat), "--meta", s(&meta), "--frames", "10", "--out", s(&d.join("sub.dat"))]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("sub.meta.json")).unwrap()).unwrap();
    assert_eq!(m["t_len"], 10);
}

#[test]
fn energy_from_published_totals() {
    let o = ok(&["energy", "--totals", "0.356", "1.469"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("-75.8%"));
}

#[test]
fn featurize_train_eval_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "3", "--clips", "2", "--out", s(&d.join("data"))]);
    let mut dats = Vec::new();
    for class in ["clap", "wave", "punch", "throw"] {
        for k in 0..2 {
            let id = format!("{class}_{k:03}");
            let dat = d.join(format!("{id}.dat"));
            ok(&["encode", "--upsample", "10", s(&d.join("data").join(&id)), "--out", s(&dat)]);
            dats.push((id, class, dat));
        }
    }
    let index: Vec<serde_json::Value> = dats
        .iter()
        .map(|(id, class, _)| serde_json::json!({"id": id, "label": class, "split": "support", "file": format!("{id}.dat")}))
        .collect();
    fs::write(d.join("streams.json"), serde_json::to_string(&index).unwrap()).unwrap();

    let emb = d.join("emb.json");
    let o = spikekit(&["featurize", "--weights", s(&d.join("w")), "--index", s(&d.join("streams.json")), "--out", s(&emb)]);
    assert_eq!(o.status.code(), Some(2), "weights cannot be generated without a seed");
    ok(&["featurize", "--seed", "5", "--weights", s(&d.join("w")), "--index", s(&d.join("streams.json")), "--out", s(&emb)]);
    // Weights now exist, so no seed is needed and the output is unchanged.
    let emb2 = d.join("emb2.json");
    ok(&["featurize", "--weights", s(&d.join("w")), "--index", s(&d.join("streams.json")), "--out", s(&emb2)]);
    assert_eq!(fs::read(&emb).unwrap(), fs::read(&emb2).unwrap());

    let head = d.join("head.json");
    let prompts = d.join("data/prompts.txt");
    ok(&["train-head", "--seed", "0", "--support", s(&emb), "--prompts", s(&prompts), "--shots", "2", "--epochs", "20", "--out", s(&head)]);
    let metrics = d.join("m.json");
    ok(&["eval", "--head", s(&head), s(&emb), "--k", "1", "--k", "4", "--out", s(&metrics)]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(m["n"], 8);
    assert_eq!(m["accuracy"]["top4"], 1.0);

    let o = spikekit(&["eval", "--head", s(&head), s(&emb), "--k", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("top-5"));

    let ledger = d.join("ledger.json");
    ok(&["snn-forward", "--seed", "9", "--weights", s(&d.join("snn")), s(&dats[0].2), "--out", s(&ledger)]);
    let o = ok(&["energy", s(&ledger), "--out", s(&d.join("energy.json"))]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("fsve.sdsa.attn"));
    assert!(d.join("energy.json.prov.json").exists());
}

#[test]
fn unknown_config_field_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"fewshot": {"shot": [2]}}"#).unwrap();
    let o = spikekit(&["run", "--seed", "0", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
}
