use std::path::Path;
use std::process::Command;

use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_collabsel"))
}

fn label(dir: &Path) -> std::path::PathBuf {
    std::fs::write(dir.join("gen.toml"), "n_points = 2500\nreference_size = 200\n").unwrap();
    let corpus = dir.join("corpus.jsonl");
    let out = bin()
        .args(["label", "--generator"])
        .arg(dir.join("gen.toml"))
        .arg("--output")
        .arg(&corpus)
        .args(["--seed", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("2500 points"));
    assert!(stdout.contains("Wikipedia"));
    corpus
}

fn write_run_config(dir: &Path, corpus: &Path, out: &str) -> std::path::PathBuf {
    let path = dir.join(format!("{out}.toml"));
    std::fs::write(
        &path,
        format!(
            "corpus = {:?}\noutput_dir = {:?}\ntotal_steps = 90\nupdate_every = 30\nk = 500\n\
             samples_per_subcategory = 20\ninit_candidates = 2000\nseed = 2\n",
            corpus.to_str().unwrap(),
            dir.join(out).to_str().unwrap()
        ),
    )
    .unwrap();
    path
}

#[test]
fn label_run_analyze_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = label(dir.path());
    let cfg = write_run_config(dir.path(), &corpus, "run");
    let out = bin().arg("run").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    for f in [
        "events.jsonl",
        "theta.csv",
        "composition.csv",
        "report.csv",
        "rewards.csv",
        "config.json",
        "final/model.json",
        "final/selected.txt",
        "snapshots/stage_3/actor_quality.json",
        "snapshots/stage_3/console.json",
        "init/domain_evaluations.csv",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let theta = std::fs::read_to_string(run.join("theta.csv")).unwrap();
    assert_eq!(theta.lines().count(), 4);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    let artifacts = manifest["artifacts"].as_object().unwrap();
    assert!(artifacts.len() >= 20);
    for (name, hash) in artifacts {
        let digest = hex::encode(Sha256::digest(std::fs::read(run.join(name)).unwrap()));
        assert_eq!(hash.as_str().unwrap(), digest, "{name}");
    }

    let out = bin()
        .args(["analyze", "--stage", "2", "--run"])
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(run.join("analysis/conflict_report.csv")).unwrap();
    assert!(report.starts_with(
        "domain,quality_interval,count,topic_entropy,max_topic_share,mean_influence,mean_influence_normalized\n"
    ));
    assert_eq!(report.lines().count(), 1 + 7 * 5);
    assert!(run.join("analysis/conflict_report.json").exists());
}

#[test]
fn repeated_runs_write_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = label(dir.path());
    for name in ["a", "b"] {
        let cfg = write_run_config(dir.path(), &corpus, name);
        let out = bin()
            .arg("run")
            .arg("--config")
            .arg(&cfg)
            .args(["--regime", "competitive"])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
    }
    let read = |n: &str, f: &str| std::fs::read(dir.path().join(n).join(f)).unwrap();
    assert_eq!(read("a", "events.jsonl"), read("b", "events.jsonl"));
    assert_eq!(read("a", "final/model.json"), read("b", "final/model.json"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = label(dir.path());

    let bad_key = dir.path().join("bad.toml");
    std::fs::write(&bad_key, "k = 10\nnot_a_key = 1\n").unwrap();
    let out = bin().arg("run").arg("--config").arg(&bad_key).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = bin()
        .args(["run", "--corpus", "/nonexistent/c.jsonl", "--output-dir", "x"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let cfg = write_run_config(dir.path(), &corpus, "r");
    let out = bin()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .args(["--regime", "single:nobody"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin().args(["bogus-command"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // a damaged corpus is a runtime failure
    let text = std::fs::read_to_string(&corpus).unwrap();
    std::fs::write(&corpus, text.replacen("\"features\"", "\"feat\"", 1)).unwrap();
    let out = bin().arg("run").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn labels_raw_records() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.jsonl");
    let mut lines = String::new();
    for i in 0..41 {
        let x = i as f64 / 10.0;
        lines += &format!(
            "{{\"features\": [{x}, {}], \"domain\": \"{}\"}}\n",
            1.0 - x,
            if i % 2 == 0 { "A" } else { "B" }
        );
    }
    std::fs::write(&raw, lines).unwrap();
    let cfg = dir.path().join("label.toml");
    std::fs::write(
        &cfg,
        "domains = [\"A\", \"B\"]\ntopics = [\"low\", \"high\"]\nquality_weights = [1.0, 0.0]\n\
         topic_centroids = [[0.0, 1.0], [4.0, -3.0]]\n",
    )
    .unwrap();
    let out = bin()
        .arg("label")
        .arg("--config")
        .arg(&cfg)
        .arg("--input")
        .arg(&raw)
        .arg("--output")
        .arg(dir.path().join("c.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let corpus = collabsel::Corpus::load(&dir.path().join("c.jsonl")).unwrap();
    assert_eq!(corpus.len(), 41);
    // 4.0 closes into the top interval
    assert_eq!(corpus.point(40).unwrap().quality_interval, 5);
    let p = corpus.point(39).unwrap();
    assert_eq!((p.quality_interval, p.topic.as_str()), (4, "high"));
    assert_eq!(corpus.point(0).unwrap().topic, "low");
}
