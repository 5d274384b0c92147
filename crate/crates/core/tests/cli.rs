use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dialogue(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dialogue"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn gen_corpus_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = dialogue(d, &["gen-corpus", "--seed", "7", "--n", "2000"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let first = fs::read(a.join("corpus.jsonl")).unwrap();
    assert_eq!(first, fs::read(b.join("corpus.jsonl")).unwrap());
    assert_eq!(first.iter().filter(|&&c| c == b'\n').count(), 2001);
}

#[test]
fn evaluate_names_the_first_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    assert!(dialogue(dir.path(), &["gen-corpus", "--n", "30"]).status.success());
    assert!(dialogue(dir.path(), &["build-vocab"]).status.success());
    let out = dialogue(dir.path(), &["evaluate"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("user.ckpt"), "{}", stderr(&out));
}

#[test]
fn missing_corpus_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = dialogue(dir.path(), &["build-vocab"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("schema.json") || stderr(&out).contains("corpus.jsonl"), "{}", stderr(&out));
}

#[test]
fn bad_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[rl]\nuser_bean = 3\n").unwrap();
    let out = dialogue(dir.path(), &["--config", cfg.to_str().unwrap(), "gen-corpus"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("user_bean"), "{}", stderr(&out));
}

#[test]
fn chat_requires_trained_models() {
    let dir = tempfile::tempdir().unwrap();
    assert!(dialogue(dir.path(), &["gen-corpus", "--n", "30"]).status.success());
    assert!(dialogue(dir.path(), &["build-vocab"]).status.success());
    let out = dialogue(dir.path(), &["chat"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("samia.ckpt"), "{}", stderr(&out));
}
