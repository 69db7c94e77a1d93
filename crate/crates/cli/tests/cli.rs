use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use avsel::config::{RunConfig, System};

fn avsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avsel"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = avsel(args);
    assert!(
        out.status.success(),
        "avsel {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let mut c = RunConfig::compact(System::E2e, 0);
    c.train.steps = 3;
    c.train.batch = 2;
    c.train.schedule.warmup_steps = 1;
    c.train.schedule.constant_until = 2;
    c.train.schedule.end_steps = 3;
    c.model.asr.encoder_units = 8;
    c.model.asr.decoder_units = 8;
    c.model.asr.joint_dim = 8;
    c.model.asr.embed_dim = 4;
    c.synth.max_words = 2;
    c.synth.min_words = 1;
    let p = dir.join("tiny.toml");
    std::fs::write(&p, c.to_toml()).unwrap();
    p
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    let train_dir = d.join("train");
    let eval_dir = d.join("eval");
    ok(&["corpus", "gen", "--config", s(&cfg), "--seed", "1", "--count", "6", "--out", s(&train_dir)]);
    ok(&["corpus", "gen", "--config", s(&cfg), "--seed", "2", "--count", "8", "--out", s(&eval_dir)]);
    let train_manifest = train_dir.join("manifest.jsonl");
    let eval_manifest = eval_dir.join("manifest.jsonl");
    assert_eq!(std::fs::read_to_string(&train_manifest).unwrap().lines().count(), 6);

    let ck = |name: &str| d.join(format!("{name}.ckpt"));
    let (ss, av, audio, e2e) = (ck("ss"), ck("av"), ck("audio"), ck("e2e"));
    for which in ["ss", "av", "audio"] {
        let out = ok(&[
            "train", which, "--config", s(&cfg), "--seed", "3", "--manifest", s(&train_manifest), "--out",
            s(&ck(which)),
        ]);
        assert!(out.contains("3 steps"), "{out}");
    }
    ok(&[
        "train", "e2e", "--config", s(&cfg), "--seed", "3", "--manifest", s(&train_manifest), "--warm-start",
        s(&ck("av")), "--out", s(&ck("e2e")),
    ]);
    // A flag overrides the config file.
    let out = ok(&[
        "train", "ss", "--config", s(&cfg), "--seed", "3", "--manifest", s(&train_manifest), "--steps", "2",
        "--out", s(&d.join("ss2.ckpt")),
    ]);
    assert!(out.contains("2 steps"), "{out}");

    let acc = d.join("acc.jsonl");
    let wer = d.join("wer.jsonl");
    let common = ["--manifest", s(&eval_manifest), "--config", s(&cfg), "--seed", "4"];
    let mut args = vec!["eval", "accuracy", "--ss", s(&ss), "--e2e", s(&e2e)];
    args.extend(common);
    args.extend(["--conditions", "clean-n2,snr0-n2", "--out", s(&acc)]);
    ok(&args);
    let first = std::fs::read(&acc).unwrap();
    ok(&args);
    assert_eq!(std::fs::read(&acc).unwrap(), first, "report bytes differ between runs");

    let mut args = vec![
        "eval", "wer", "--ss", s(&ss), "--e2e", s(&e2e), "--av", s(&av), "--audio", s(&audio),
    ];
    args.extend(common);
    args.extend(["--conditions", "clean-n1,clean-n2", "--out", s(&wer)]);
    ok(&args);

    let t1 = ok(&["report", s(&acc), "--layout", "table1", "--plot-dir", s(&d.join("plots"))]);
    assert!(t1.contains("SS") && t1.lines().count() == 4, "{t1}");
    assert_eq!(std::fs::read_dir(d.join("plots")).unwrap().count(), 4);
    let t2 = ok(&["report", s(&wer), "--layout", "table2"]);
    assert!(t2.contains("Oracle"), "{t2}");

    let multi = d.join("multi");
    ok(&[
        "corpus", "augment", "--manifest", s(&eval_manifest), "--noise", "snr10", "--tracks", "2", "--seed", "5",
        "--config", s(&cfg), "--out", s(&multi),
    ]);
    let multi_manifest = multi.join("manifest.jsonl");
    for (which, flags) in [
        ("e2e", vec!["--checkpoint", s(&ck("e2e"))]),
        ("two-step", vec!["--ss", s(&ck("ss")), "--av", s(&ck("av"))]),
        ("oracle", vec!["--av", s(&ck("av"))]),
    ] {
        let mut args = vec!["infer", which, "--manifest", s(&multi_manifest)];
        args.extend(flags);
        let out = ok(&args);
        assert_eq!(out.lines().count(), 8, "{which}: {out}");
        let first: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
        assert!(first["trace"].as_array().is_some_and(|t| !t.is_empty()));
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Missing --seed is a usage error.
    assert_eq!(avsel(&["corpus", "gen", "--count", "2", "--out", s(d)]).status.code(), Some(2));
    let bad = d.join("bad.toml");
    std::fs::write(&bad, "system = \"ss\"\nseed = 1\n[train]\nbatch = 1\n").unwrap();
    let out = avsel(&["train", "ss", "--config", s(&bad), "--seed", "1", "--out", s(&d.join("x"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let out = avsel(&[
        "train", "ss", "--seed", "1", "--manifest", s(&d.join("absent.jsonl")), "--set", "model=\"x\"",
        "--out", s(&d.join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = tiny_config(d);
    let out = avsel(&[
        "train", "ss", "--config", s(&cfg), "--seed", "1", "--manifest", s(&d.join("absent.jsonl")), "--out",
        s(&d.join("x")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let out = avsel(&["report", s(&d.join("absent.jsonl")), "--layout", "table1"]);
    assert_eq!(out.status.code(), Some(3));

    // A learning rate this large overflows the parameters after one update.
    let corpus = d.join("c");
    ok(&["corpus", "gen", "--config", s(&cfg), "--seed", "1", "--count", "3", "--out", s(&corpus)]);
    let out = avsel(&[
        "train", "ss", "--config", s(&cfg), "--seed", "1", "--manifest", s(&corpus.join("manifest.jsonl")),
        "--lr", "1e300", "--out", s(&d.join("x")),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
