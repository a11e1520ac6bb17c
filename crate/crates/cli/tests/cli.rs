use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use muvf_core::frontend::{write_wav, PcmAudio, SAMPLE_RATE};
use muvf_core::model::{Model, ModelConfig};

fn muvf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_muvf")).args(args).output().expect("spawn muvf")
}

fn ok(args: &[&str]) -> Output {
    let out = muvf(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    muvf(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_to(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--out", s(dir)];
    args.extend_from_slice(extra);
    ok(&args);
    dir.join("final.ckpt")
}

fn log_totals(dir: &Path) -> Vec<f64> {
    let text = std::fs::read_to_string(dir.join("train_log.tsv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "step\tL_asym\tL_noise\tL_att\ttotal");
    lines.map(|l| l.split('\t').nth(4).unwrap().parse().unwrap()).collect()
}

#[test]
fn ten_steps_reduce_the_seeded_loss_and_repeat_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train_to(&a, &["--steps", "11", "--seed", "5"]);
    train_to(&b, &["--steps", "11", "--seed", "5"]);
    let totals = log_totals(&a);
    assert_eq!(totals.len(), 11);
    assert!(totals[10] < totals[0], "{totals:?}");
    assert_eq!(std::fs::read(a.join("final.ckpt")).unwrap(), std::fs::read(b.join("final.ckpt")).unwrap());
    assert!(a.join("best.ckpt").exists() && a.join("config.txt").exists());
}

#[test]
fn zero_steps_save_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = train_to(tmp.path(), &["--steps", "0", "--seed", "12"]);
    let init = Model::<f32>::new(ModelConfig::desk(), 12).unwrap().to_checkpoint();
    assert_eq!(std::fs::read(ck).unwrap(), init);
}

#[test]
fn config_file_is_read_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "steps=3\nseed=4\nbatch=2\n").unwrap();
    let out = tmp.path().join("o");
    ok(&["train", "--config", s(&cfg), "--steps", "2", "--out", s(&out)]);
    let resolved = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(resolved.contains("steps=2\n") && resolved.contains("seed=4\n") && resolved.contains("batch=2\n"));
    assert_eq!(log_totals(&out).len(), 2);
}

#[test]
fn bad_configuration_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = s(tmp.path());
    assert_eq!(code(&["train", "--out", o, "--nmax", "0"]), 2);
    assert_eq!(code(&["train", "--out", o, "--loss-weights", "1,2"]), 2);
    assert_eq!(code(&["train", "--out", o, "--beta", "1.5"]), 2);
    assert_eq!(code(&["train", "--out", o, "--scorer", "dot"]), 2);
    assert_eq!(code(&["train", "--out", o, "--steps", "x"]), 2);
    assert_eq!(code(&["no-such-command"]), 2);
}

#[test]
fn diverging_training_exits_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = muvf(&["train", "--out", s(tmp.path()), "--steps", "5", "--lr", "1e30", "--batch", "2"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn eval_writes_a_complete_grid_and_checks_topology() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = train_to(&tmp.path().join("t"), &["--steps", "0"]);
    let rep = tmp.path().join("r");
    let out = ok(&["eval", "--checkpoint", s(&ck), "--out", s(&rep), "--utterances", "32", "--length", "16"]);
    let tsv = std::fs::read_to_string(rep.join("report.tsv")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), tsv);
    let rows: Vec<&str> = tsv.lines().skip(2).collect();
    assert_eq!(rows.len(), 12);
    let four = rows.iter().find(|r| r.starts_with("speech\t4\t")).unwrap();
    let acc: f64 = four.split('\t').nth(2).unwrap().parse().unwrap();
    assert!((0.05..0.6).contains(&acc), "untrained accuracy {acc}");
    assert!(std::fs::read_to_string(rep.join("report.svg")).unwrap().starts_with("<svg"));
    assert_eq!(code(&["eval", "--checkpoint", s(&ck), "--out", s(&rep), "--nmax", "3"]), 2);
    assert_eq!(code(&["eval", "--checkpoint", s(&tmp.path().join("missing")), "--out", s(&rep)]), 2);
}

#[test]
fn infer_streams_feature_dumps_and_wavs_alike() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = train_to(&tmp.path().join("t"), &["--steps", "0"]);
    let corpus = tmp.path().join("c");
    ok(&["gen-corpus", "--count", "2", "--out", s(&corpus), "--materialize"]);
    let manifest = std::fs::read_to_string(corpus.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    let enroll = corpus.join("ex0.enroll.txt");

    let run = |input: &Path, out: &Path| {
        ok(&["infer", "--checkpoint", s(&ck), "--input", s(input), "--enroll", s(&enroll), "--out", s(out)]);
        (std::fs::read(out.join("enhanced.txt")).unwrap(), std::fs::read(out.join("attention.txt")).unwrap())
    };
    let mix = corpus.join("ex0.mix.txt");
    let (e1, a1) = run(&mix, &tmp.path().join("i1"));
    let (e2, a2) = run(&mix, &tmp.path().join("i2"));
    assert_eq!((&e1, &a1), (&e2, &a2));
    let header = |b: &[u8]| String::from_utf8_lossy(b).lines().next().unwrap().to_string();
    assert_eq!(header(&e1), header(&std::fs::read(&mix).unwrap()));

    let samples: Vec<f32> = (0..8000).map(|n| 0.3 * (n as f32 * 0.07).sin() + 0.1 * (n as f32 * 0.31).cos()).collect();
    let wav = tmp.path().join("a.wav");
    std::fs::write(&wav, write_wav(&PcmAudio { samples, sample_rate: SAMPLE_RATE })).unwrap();
    let dump = tmp.path().join("a.txt");
    ok(&["features", "--input", s(&wav), "--out", s(&dump)]);
    let from_wav = run(&wav, &tmp.path().join("w"));
    let from_dump = run(&dump, &tmp.path().join("d"));
    assert_eq!(from_wav, from_dump);
}

#[test]
fn infer_rejects_bad_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = train_to(&tmp.path().join("t"), &["--steps", "0"]);
    let corpus = tmp.path().join("c");
    ok(&["gen-corpus", "--count", "1", "--out", s(&corpus), "--materialize"]);
    let line = std::fs::read_to_string(corpus.join("ex0.enroll.txt")).unwrap();
    let first = line.lines().next().unwrap().split_once(' ').unwrap().1.to_string();
    let many: String = (0..5).map(|i| format!("u{i} {first}\n")).collect();
    let too_many = tmp.path().join("many.txt");
    std::fs::write(&too_many, many).unwrap();
    let mix = corpus.join("ex0.mix.txt");
    let o = tmp.path().join("o");
    assert_eq!(code(&["infer", "--checkpoint", s(&ck), "--input", s(&mix), "--enroll", s(&too_many), "--out", s(&o)]), 2);
    let junk = tmp.path().join("junk.txt");
    std::fs::write(&junk, "not features").unwrap();
    let enroll = corpus.join("ex0.enroll.txt");
    assert_eq!(code(&["infer", "--checkpoint", s(&ck), "--input", s(&junk), "--enroll", s(&enroll), "--out", s(&o)]), 2);
}

#[test]
fn inspect_reports_topology_and_rejects_truncation() {
    let tmp = tempfile::tempdir().unwrap();
    let desk = train_to(&tmp.path().join("d"), &["--steps", "0"]);
    let text = String::from_utf8(ok(&["inspect", "--checkpoint", s(&desk)]).stdout).unwrap();
    assert!(text.contains("n_max = 4"));
    assert!(text.contains("prenet.0.w_ih 128x512"));

    let full = train_to(&tmp.path().join("p"), &["--steps", "0", "--preset", "full"]);
    let text = String::from_utf8(ok(&["inspect", "--checkpoint", s(&full)]).stdout).unwrap();
    let count = |key: &str| -> usize {
        text.lines().find_map(|l| l.strip_prefix(key)).unwrap().trim().parse().unwrap()
    };
    assert_eq!(count("parameters "), count("closed-form parameters "));
    assert_eq!(count("parameters "), ModelConfig::full().param_count());

    let bytes = std::fs::read(&desk).unwrap();
    let cut = tmp.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let out = muvf(&["inspect", "--checkpoint", s(&cut)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}
