use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_realness");

fn realness(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = realness(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, count: usize, seed: u64) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "--out",
        s(&data),
        "--seed",
        &seed.to_string(),
        "dataset",
        "synth",
        "--count",
        &count.to_string(),
    ]);
    data.join("manifest.jsonl")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, body).unwrap();
    p
}

const SMOKE: &str = "seed = 4\n[train]\nepochs = 2\nbatch_size = 8\n";

#[test]
fn train_is_reproducible_from_its_run_record() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 24, 1);
    let cfg = write_config(dir.path(), SMOKE);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["--config", s(&cfg), "--out", s(&a), "train", "--manifest", s(&manifest)]);
    ok(&["--config", s(&cfg), "--out", s(&b), "train", "--manifest", s(&manifest)]);
    // replay from the emitted resolved config alone
    let resolved = a.join("config.toml");
    ok(&["--config", s(&resolved), "--out", s(&c), "train", "--manifest", s(&manifest)]);

    let history = |d: &Path| std::fs::read_to_string(d.join("history.jsonl")).unwrap();
    assert_eq!(history(&a).lines().count(), 2);
    assert_eq!(history(&a), history(&b));
    assert_eq!(history(&a), history(&c));
    let run: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 4);
    assert_eq!(run["config"]["train"]["epochs"], 2);
    assert!(run["config"]["model"].is_object());
    assert!(a.join("checkpoint/model.safetensors").is_file());
    let report = std::fs::read_to_string(a.join("report_test.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3, "15% of 24 records held out");
}

#[test]
fn ablate_emits_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 20, 2);
    let cfg = write_config(dir.path(), SMOKE);
    let out = dir.path().join("ablate");
    let stdout = ok(&["--config", s(&cfg), "--out", s(&out), "ablate", "--manifest", s(&manifest)]);
    let table = std::fs::read_to_string(out.join("ablation.md")).unwrap();
    assert_eq!(stdout, table);
    for label in ["Image only", "Text only", "Image + Text"] {
        assert_eq!(table.matches(label).count(), 1, "{table}");
    }
    let rows: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 3);
    for mode in ["image_only", "text_only", "joint"] {
        assert!(out.join(mode).join("history.jsonl").is_file());
    }
}

#[test]
fn eval_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 16, 3);
    let cfg = write_config(dir.path(), SMOKE);
    let run = dir.path().join("run");
    ok(&["--config", s(&cfg), "--out", s(&run), "train", "--manifest", s(&manifest)]);

    let ev = dir.path().join("eval");
    let ckpt = run.join("checkpoint");
    ok(&["--out", s(&ev), "eval", "--checkpoint", s(&ckpt), "--manifest", s(&manifest)]);
    let report = std::fs::read_to_string(ev.join("report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 1 + 16);

    let one = dir.path().join("plot1");
    ok(&["--out", s(&one), "plot", "--report", s(&ev.join("report.jsonl"))]);
    let files: Vec<_> = std::fs::read_dir(&one).unwrap().collect();
    assert_eq!(files.len(), 1);
    let svg = std::fs::read_to_string(one.join("scatter.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 16 + 1);
    assert!(svg.contains(r#"class="identity""#));

    let two = dir.path().join("plot2");
    let test_report = run.join("report_test.jsonl");
    ok(&[
        "--out",
        s(&two),
        "plot",
        "--report",
        s(&ev.join("report.jsonl")),
        "--report",
        s(&test_report),
        "--label",
        "all",
        "--label",
        "held out",
    ]);
    let svg = std::fs::read_to_string(two.join("scatter.svg")).unwrap();
    assert_eq!(svg.matches(r#"class="series""#).count(), 2);
    assert!(svg.contains("held out"));
}

#[test]
fn exit_codes_by_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 8, 5);

    let missing = realness(&["--out", s(&dir.path().join("e")), "eval", "--checkpoint", s(&dir.path().join("none")), "--manifest", s(&manifest)]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("configuration error"));

    let bad = write_config(dir.path(), "sede = 1\n");
    let out = dir.path().join("never");
    let r = realness(&["--config", s(&bad), "--out", s(&out), "train", "--manifest", s(&manifest)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists(), "config errors are reported before anything is written");

    let lr0 = write_config(dir.path(), "[train]\nlearning_rate = 0.0\n");
    let r = realness(&["--config", s(&lr0), "--out", s(&out), "train", "--manifest", s(&manifest)]);
    assert_eq!(r.status.code(), Some(2));

    let r = realness(&["--out", s(&out), "map", "--image", "x.png", "--text", "t", "--windows", "8", "--stride", "16"]);
    assert_eq!(r.status.code(), Some(2));

    let r = realness(&["--out", s(&out), "train", "--manifest", s(&dir.path().join("nope.jsonl"))]);
    assert_eq!(r.status.code(), Some(3));

    assert_eq!(realness(&["train"]).status.code(), Some(2), "usage errors");
}

#[test]
fn map_outputs_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 6, 6);
    let img = dir.path().join("data/images/syn0000.png");

    let single = dir.path().join("single");
    ok(&["--out", s(&single), "map", "--image", s(&img), "--text", "melted edges", "--windows", "16,8"]);
    assert!(single.join("syn0000.rgrid").is_file());
    assert!(single.join("syn0000_heatmap.png").is_file());
    let heat = image::open(single.join("syn0000_heatmap.png")).unwrap();
    assert_eq!((heat.width(), heat.height()), (32, 32));

    // three records with descriptions
    let text = std::fs::read_to_string(&manifest).unwrap();
    let three: Vec<&str> = text
        .lines()
        .filter(|l| l.contains("\"id\"") && !l.contains("\"description\":\"\""))
        .take(3)
        .collect();
    assert_eq!(three.len(), 3);
    let m3 = dir.path().join("data/three.jsonl");
    std::fs::write(&m3, three.join("\n")).unwrap();
    let many = dir.path().join("many");
    ok(&["--out", s(&many), "map", "--from-manifest", s(&m3), "--windows", "16,8"]);
    let outputs = std::fs::read_dir(&many)
        .unwrap()
        .filter(|e| {
            let n = e.as_ref().unwrap().file_name().to_string_lossy().into_owned();
            n.ends_with(".rgrid") || n.ends_with("_heatmap.png")
        })
        .count();
    assert_eq!(outputs, 6);

    let r = realness(&["--out", s(&single), "map", "--image", "/no/such/pic.png", "--text", "x"]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("/no/such/pic.png"));
}

#[test]
fn annotate_with_stub_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 3, 7);
    let responses = dir.path().join("responses.json");
    std::fs::write(
        &responses,
        r#"{"default": "Somewhat. The square has a faint seam along one edge."}"#,
    )
    .unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "[annotator]\ncache_dir = {:?}\n[[annotator.providers]]\nname = \"canned\"\nkind = \"stub\"\nresponses = {:?}\n",
            s(&dir.path().join("cache")),
            s(&responses)
        ),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = ok(&["--config", s(&cfg), "--out", s(&a), "annotate", "--manifest", s(&manifest), "--provider", "canned"]);
    assert!(first.starts_with("3 fetched, 0 from cache"), "{first}");
    let again = ok(&["--config", s(&cfg), "--out", s(&b), "annotate", "--manifest", s(&manifest), "--provider", "canned", "--concurrency", "2"]);
    assert!(again.starts_with("0 fetched, 3 from cache"), "{again}");
    let (ma, mb) = (
        std::fs::read_to_string(a.join("manifest.jsonl")).unwrap(),
        std::fs::read_to_string(b.join("manifest.jsonl")).unwrap(),
    );
    assert_eq!(ma, mb);
    assert_eq!(ma.matches(r#""verdict":"somewhat""#).count(), 3);
    assert_eq!(ma.matches("faint seam along one edge.").count(), 3);

    // an annotated manifest is skipped unless forced
    let c = dir.path().join("c");
    let skipped = ok(&["--config", s(&cfg), "--out", s(&c), "annotate", "--manifest", s(&a.join("manifest.jsonl")), "--provider", "canned"]);
    assert!(skipped.starts_with("0 fetched, 0 from cache, 3 already annotated"), "{skipped}");

    let r = realness(&["--out", s(&c), "annotate", "--manifest", s(&manifest), "--provider", "gpt"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn dataset_validate_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let lines: String = (0..600)
        .map(|i| format!("{{\"id\":\"r{i}\",\"image_ref\":\"img/{i}.jpg\",\"mos\":{}}}\n", 1.0 + (i % 5) as f64))
        .collect();
    let m = dir.path().join("m.jsonl");
    std::fs::write(&m, lines).unwrap();

    let v = ok(&["dataset", "validate", "--manifest", s(&m)]);
    assert!(v.contains("600 records, 0 error(s), 600 warning(s)"), "{v}");
    let r = realness(&["dataset", "validate", "--manifest", s(&m), "--strict"]);
    assert_eq!(r.status.code(), Some(3));

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = ok(&["--out", s(out), "--seed", "11", "dataset", "split", "--manifest", s(&m), "--test-count", "90"]);
        assert_eq!(o.trim(), "split: 510 train / 90 test");
    }
    assert_eq!(
        std::fs::read(a.join("split.test.txt")).unwrap(),
        std::fs::read(b.join("split.test.txt")).unwrap()
    );

    let k = dir.path().join("k");
    let o = ok(&["--out", s(&k), "dataset", "split", "--manifest", s(&m), "--k", "5"]);
    assert_eq!(o.lines().count(), 5);
    assert!(o.lines().all(|l| l.ends_with("480 train / 120 test")));

    // the split files feed back into training
    let data = synth(dir.path(), 12, 8);
    let ids = dir.path().join("test_ids.txt");
    std::fs::write(&ids, "syn0001\nsyn0005\n").unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let run = dir.path().join("run");
    ok(&["--config", s(&cfg), "--out", s(&run), "train", "--manifest", s(&data), "--test-ids", s(&ids)]);
    let report = std::fs::read_to_string(run.join("report_test.jsonl")).unwrap();
    assert!(report.contains("syn0001") && report.contains("syn0005"));
    assert_eq!(report.lines().count(), 3);
}

#[test]
fn aborted_training_keeps_finished_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 12, 9);
    let cfg = write_config(
        dir.path(),
        "seed = 1\n[train]\nepochs = 5\nbatch_size = 64\nlearning_rate = 1e30\naugmentation = { kind = \"none\" }\n",
    );
    let out = dir.path().join("run");
    let r = realness(&["--config", s(&cfg), "--out", s(&out), "train", "--manifest", s(&manifest)]);
    assert_eq!(r.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&r.stderr).contains("non-finite training loss at epoch 1"));
    let history = std::fs::read_to_string(out.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 1);
    assert!(history.starts_with(r#"{"epoch":0,"#));
    assert!(!out.join("checkpoint").exists());
}
