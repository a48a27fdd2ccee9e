use gpn::model::{Mode, ModelConfig};
use gpn::trainer::{save_checkpoint, Checkpoint};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gpn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpn")).args(args).output().expect("spawn gpn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_corpus(dir: &Path) -> PathBuf {
    let words = ["the", "king", "and", "queen", "of", "night", "speak", "to", "me", "now", "what", "is"];
    let mut text = String::new();
    let mut x = 7u64;
    while text.len() < 40_000 {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        text.push_str(words[(x >> 33) as usize % words.len()]);
        text.push(if (x >> 20).is_multiple_of(9) { '\n' } else { ' ' });
    }
    let p = dir.join("corpus.txt");
    std::fs::write(&p, text).unwrap();
    p
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.json");
    std::fs::write(
        &p,
        r#"{"d": 16, "d_ffn": 32, "d_emb": 16, "heads": 2, "d_k": 4, "d_v": 4, "batch": 4, "seq_len": 32,
            "eval_every": 25, "eval_tokens": 2000, "warmup_steps": 10, "total_steps": 100}"#,
    )
    .unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn metrics_rows(dir: &Path) -> Vec<String> {
    std::fs::read_to_string(dir.join("metrics.csv")).unwrap().lines().skip(1).map(String::from).collect()
}

fn train_tiny(tmp: &Path, out: &Path, steps: &str) -> Output {
    let corpus = tiny_corpus(tmp);
    let cfg = tiny_config(tmp);
    gpn(&["train", "--config", s(&cfg), "--corpus", s(&corpus), "--out", s(out), "--mode", "gpn+m", "--steps", steps, "--quiet"])
}

#[test]
fn train_writes_metrics_config_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = train_tiny(tmp.path(), &out, "50");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = metrics_rows(&out);
    assert_eq!(rows.len(), 50);
    assert!(rows[24].split(',').nth(4).is_some_and(|v| !v.is_empty()));
    assert!(out.join("config.input.json").exists());
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["d"], 16);
    assert_eq!(cfg["mode"], "gpn+m");
    assert_eq!(cfg["total_steps"], 50);
    assert!(out.join("checkpoint-000050.gpn").exists());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_array().unwrap();
    let names: Vec<&str> = files.iter().map(|f| f["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"metrics.csv") && names.contains(&"config.json"));
    use sha2::Digest;
    for f in files {
        let bytes = std::fs::read(out.join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(sha2::Sha256::digest(&bytes)));
    }
}

#[test]
fn resume_continues_the_step_counter() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(code(&train_tiny(tmp.path(), &out, "20")), 0);
    let ck = out.join("checkpoint-000020.gpn");
    let corpus = tmp.path().join("corpus.txt");
    let o = gpn(&["train", "--resume", s(&ck), "--corpus", s(&corpus), "--out", s(&out), "--steps", "30", "--quiet"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let steps: Vec<usize> = metrics_rows(&out).iter().map(|r| r.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, (1..=30).collect::<Vec<_>>());
    assert!(out.join("checkpoint-000030.gpn").exists());
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(code(&gpn(&["train", "--out", s(&out)])), 2);
    let missing = tmp.path().join("nope.txt");
    assert_eq!(code(&gpn(&["train", "--out", s(&out), "--corpus", s(&missing)])), 2);
    assert_eq!(code(&gpn(&["train", "--out", s(&out), "--corpus", s(&missing), "--frobnicate"])), 2);
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"not_a_field": 1}"#).unwrap();
    let corpus = tiny_corpus(tmp.path());
    assert_eq!(code(&gpn(&["train", "--config", s(&bad), "--out", s(&out), "--corpus", s(&corpus)])), 2);
}

#[test]
fn diverging_run_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let corpus = tiny_corpus(tmp.path());
    let cfg = tiny_config(tmp.path());
    let o = gpn(&["train", "--config", s(&cfg), "--corpus", s(&corpus), "--out", s(&out), "--lr", "1e38", "--steps", "20", "--quiet"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

fn zero_decoder_checkpoint(dir: &Path) -> PathBuf {
    let cfg = ModelConfig { d: 8, d_ffn: 16, d_emb: 8, heads: 2, d_k: 4, d_v: 4, ..ModelConfig::desk(Mode::GpnM) };
    let mut params = gpn::model::init_params::<f32>(&cfg, 1).unwrap();
    params.dec_w.data.fill(0.0);
    let ck = Checkpoint { config: cfg, hyper: None, step: 0, params, optimizer: None };
    let p = dir.join("zero.gpn");
    save_checkpoint(&p, &ck).unwrap();
    p
}

#[test]
fn eval_of_zero_decoder_is_uniform_and_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = zero_decoder_checkpoint(tmp.path());
    let corpus = tiny_corpus(tmp.path());
    let out = tmp.path().join("eval");
    let a = gpn(&["eval", "--ckpt", s(&ck), "--corpus", s(&corpus), "--out", s(&out)]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let ppl: f64 = stdout(&a).lines().find_map(|l| l.strip_prefix("ppl ")).unwrap().parse().unwrap();
    assert!((ppl - 256.0).abs() < 1e-9, "{ppl}");
    let b = gpn(&["eval", "--ckpt", s(&ck), "--corpus", s(&corpus)]);
    assert_eq!(stdout(&a), stdout(&b));
    let csv = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    assert!(csv.starts_with("checkpoint,step,split,seq_len,tokens,mean_ce,ppl,bits_per_byte\nzero.gpn,0,val,"));
}

#[test]
fn damaged_checkpoints_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = zero_decoder_checkpoint(tmp.path());
    let corpus = tiny_corpus(tmp.path());
    let mut bytes = std::fs::read(&ck).unwrap();
    bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
    let v = tmp.path().join("version.gpn");
    std::fs::write(&v, &bytes).unwrap();
    let o = gpn(&["eval", "--ckpt", s(&v), "--corpus", s(&corpus)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("version_mismatch"));
    let o = gpn(&["inspect", "--ckpt", s(&tmp.path().join("missing.gpn"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn inspect_lists_config_and_tensors() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = zero_decoder_checkpoint(tmp.path());
    let o = gpn(&["inspect", "--ckpt", s(&ck)]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.starts_with("format version 1\n"));
    assert!(text.contains("\"mode\": \"gpn+m\""));
    assert!(text.contains("mem.w_k [8, 8]"));
    assert!(text.contains("dec.w [256, 8]"));
}

#[test]
fn analyze_writes_all_reports_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&train_tiny(tmp.path(), &run, "30")), 0);
    let ck = run.join("checkpoint-000030.gpn");
    let corpus = tmp.path().join("corpus.txt");
    let analyze = |out: &Path, extra: &[&str]| {
        let mut args = vec!["analyze", "--ckpt", s(&ck), "--corpus", s(&corpus), "--out", s(out)];
        args.extend_from_slice(extra);
        gpn(&args)
    };
    let small = ["--tokens", "1024", "--window", "128", "--max-lag", "64"];
    let a = tmp.path().join("a");
    let o = analyze(&a, &small);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let count = |dir: &Path, ext: &str| {
        std::fs::read_dir(dir).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext)).count()
    };
    assert_eq!(count(&a, "csv"), 7);
    assert_eq!(count(&a, "svg"), 4);
    for f in ["horizons_memory.csv", "halflives.csv", "retention.svg", "cosine.svg"] {
        assert!(a.join(f).exists(), "{f}");
    }

    let b = tmp.path().join("b");
    assert_eq!(code(&analyze(&b, &small)), 0);
    for e in std::fs::read_dir(&a).unwrap() {
        let name = e.unwrap().file_name();
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name:?}");
    }

    let c = tmp.path().join("c");
    let o = analyze(&c, &["--which", "horizons", "--window", "128", "--max-lag", "256"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least 257 tokens"));
    let o = analyze(&c, &["--which", "horizons", "--window", "20000", "--max-lag", "512"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least 20001 tokens"));
}

#[test]
fn gen_writes_marked_records_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = gpn(&["gen", "--out", s(dir), "--n-pairs", "4", "--count", "100", "--seed", "5"]);
        assert_eq!(code(&o), 0);
    }
    let recs = std::fs::read_to_string(a.join("recall.txt")).unwrap();
    assert_eq!(recs.lines().count(), 100);
    let answers = std::fs::read_to_string(a.join("answers.csv")).unwrap();
    let rows: Vec<&str> = answers.lines().skip(1).collect();
    assert_eq!(rows.len(), 100);
    for (line, row) in recs.lines().zip(&rows) {
        let toks: Vec<u32> = line.split(' ').map(|t| t.parse().unwrap()).collect();
        let f: Vec<usize> = row.split(',').map(|t| t.parse().unwrap()).collect();
        assert_eq!(toks.len(), 11);
        assert_eq!(toks[f[1]] as usize, f[2]);
    }
    for f in ["recall.txt", "answers.csv", "task.json", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let o = gpn(&["gen", "--out", s(&tmp.path().join("c")), "--key-vocab", "200", "--val-vocab", "100"]);
    assert_eq!(code(&o), 2);
}
