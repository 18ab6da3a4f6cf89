use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn corrmark(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corrmark"))
        .args(args)
        .env_remove("CORRMARK_BACKEND")
        .env_remove("CORRMARK_BUDGET_CAP")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = corrmark(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    corrmark(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn synth(root: &Path, count: usize) -> PathBuf {
    let dir = root.join("scenes");
    ok(&["synth", "--seed", "5", "--count", &count.to_string(), "--out", s(&dir)]);
    dir
}

#[test]
fn prompt_writes_marked_frames_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let scenes = synth(tmp.path(), 1);
    let scene = scenes.join("scene_000");
    let (frames, masks) = (scene.join("frames"), scene.join("masks"));

    let out = tmp.path().join("marks");
    ok(&["prompt", "--frames", s(&frames), "--masks", s(&masks), "--out", s(&out)]);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["frames"].as_array().unwrap().len(), 8);
    assert!(manifest["plan"]["tracklets"]["tracklets"].as_array().unwrap().len() <= 5);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["plan"]["style"]["diameter_px"], 60);
    assert_eq!(manifest["plan"]["style"]["tier"], "markers_plus_outline");
    let pngs = fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("marked_"))
        .count();
    assert_eq!(pngs, 8);

    let out8 = tmp.path().join("marks8");
    ok(&[
        "prompt",
        "--frames",
        s(&frames),
        "--masks",
        s(&masks),
        "--k",
        "8",
        "--out",
        s(&out8),
    ]);
    let k8 = read_json(&out8.join("manifest.json"));
    assert!(k8["plan"]["tracklets"]["tracklets"].as_array().unwrap().len() <= 8);
    assert_ne!(k8["config_hash"], manifest["config_hash"]);

    let override_path = tmp.path().join("marks.json");
    fs::write(
        &override_path,
        json!({"frames": [{"index": 0, "marks": [{"id": 1, "x": 3.0, "y": 4.0}]}]}).to_string(),
    )
    .unwrap();
    let outo = tmp.path().join("marks_override");
    ok(&[
        "prompt",
        "--frames",
        s(&frames),
        "--masks",
        s(&masks),
        "--override",
        s(&override_path),
        "--out",
        s(&outo),
    ]);
    let m = read_json(&outo.join("manifest.json"));
    assert_eq!(m["plan"]["override_source"], s(&override_path));
    let first: Vec<&Value> = m["plan"]["placements"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|p| p["frame_index"] == 0)
        .collect();
    assert_eq!(first.len(), 1);
    assert_eq!(first[0]["source"], "override");
}

#[test]
fn prompt_rejects_bad_configuration_and_data() {
    let tmp = tempfile::tempdir().unwrap();
    let scenes = synth(tmp.path(), 1);
    let scene = scenes.join("scene_000");
    let (frames, masks) = (scene.join("frames"), scene.join("masks"));
    let out = tmp.path().join("o");
    for bad in [["--m", "0"], ["--k", "0"], ["--diameter", "2"], ["--tier", "glow"]] {
        let mut args = vec!["prompt", "--frames", s(&frames), "--masks", s(&masks), "--out", s(&out)];
        args.extend(bad);
        assert_eq!(code(&args), 2, "{bad:?}");
    }
    let missing = tmp.path().join("missing");
    assert_eq!(
        code(&[
            "prompt",
            "--frames",
            s(&missing),
            "--masks",
            s(&masks),
            "--out",
            s(&out)
        ]),
        3
    );
}

#[test]
fn sot_eval_with_oracle_and_anti_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let scenes = synth(tmp.path(), 10);
    let out = tmp.path().join("oracle");
    let stdout = ok(&[
        "eval",
        "sot",
        "--scenes",
        s(&scenes),
        "--backend",
        "oracle",
        "--out",
        s(&out),
    ]);
    assert!(stdout.contains("100.0"));
    let report = read_json(&out.join("sot_report.json"));
    assert_eq!(report["harmonic_mean"], 100.0);
    assert_eq!(report["n_questions"], 50);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(
        fs::read_to_string(out.join("run_log.jsonl")).unwrap().lines().count(),
        100
    );

    let anti = tmp.path().join("anti");
    ok(&[
        "eval",
        "sot",
        "--scenes",
        s(&scenes),
        "--backend",
        "anti-oracle",
        "--out",
        s(&anti),
    ]);
    let report = read_json(&anti.join("sot_report.json"));
    assert_eq!(
        (report["origin_acc"].as_f64(), report["reverse_acc"].as_f64()),
        (Some(0.0), Some(0.0))
    );
}

#[test]
fn interrupted_run_resumes_to_identical_report() {
    let tmp = tempfile::tempdir().unwrap();
    let scenes = synth(tmp.path(), 3);
    let full = tmp.path().join("full");
    ok(&[
        "eval",
        "sot",
        "--scenes",
        s(&scenes),
        "--backend",
        "oracle",
        "--out",
        s(&full),
    ]);

    let part = tmp.path().join("part");
    let args = [
        "eval",
        "sot",
        "--scenes",
        s(&scenes),
        "--backend",
        "oracle",
        "--concurrency",
        "1",
        "--out",
        s(&part),
    ];
    let mut capped = args.to_vec();
    capped.extend(["--budget-cap", "7"]);
    assert_eq!(code(&capped), 5);
    assert!(!part.join("sot_report.json").exists());
    assert_eq!(
        fs::read_to_string(part.join("run_log.jsonl")).unwrap().lines().count(),
        7
    );

    let stdout = ok(&args);
    assert!(stdout.contains("resuming: 7"));
    assert_eq!(
        fs::read_to_string(part.join("run_log.jsonl")).unwrap().lines().count(),
        30
    );
    assert_eq!(
        fs::read(full.join("sot_report.json")).unwrap(),
        fs::read(part.join("sot_report.json")).unwrap()
    );

    // a fully cached rerun asks nothing and reproduces the report
    ok(&args);
    assert_eq!(
        fs::read_to_string(part.join("run_log.jsonl")).unwrap().lines().count(),
        30
    );
    assert_eq!(
        fs::read(full.join("sot_report.json")).unwrap(),
        fs::read(part.join("sot_report.json")).unwrap()
    );
}

#[test]
fn changed_template_invalidates_cached_answers() {
    let tmp = tempfile::tempdir().unwrap();
    let scenes = synth(tmp.path(), 1);
    let out = tmp.path().join("run");
    let base = [
        "eval",
        "sot",
        "--scenes",
        s(&scenes),
        "--backend",
        "oracle",
        "--out",
        s(&out),
    ];
    ok(&base);
    let mut plain = base.to_vec();
    plain.extend(["--template", "plain-v1"]);
    let stdout = ok(&plain);
    assert!(stdout.contains("resuming"));
    assert_eq!(
        fs::read_to_string(out.join("run_log.jsonl")).unwrap().lines().count(),
        20
    );
    let mut unknown = base.to_vec();
    unknown.extend(["--template", "nope"]);
    assert_eq!(code(&unknown), 2);
}

fn mcq_dataset(root: &Path) -> PathBuf {
    let path = root.join("mcq.json");
    let items: Vec<Value> = (0..4)
        .map(|i| {
            json!({
                "question_id": format!("v{i}"),
                "video_id": format!("scene_{:03}", i % 2),
                "question": "What is shown?",
                "options": ["a red box", "a blue disc", "nothing"],
                "gold_index": i % 3,
            })
        })
        .collect();
    fs::write(&path, Value::Array(items).to_string()).unwrap();
    path
}

#[test]
fn mcq_eval_and_score() {
    let tmp = tempfile::tempdir().unwrap();
    let scenes = synth(tmp.path(), 2);
    let dataset = mcq_dataset(tmp.path());

    let anti = tmp.path().join("anti");
    ok(&[
        "eval",
        "mcq",
        "--dataset",
        s(&dataset),
        "--scenes",
        s(&scenes),
        "--backend",
        "anti-oracle",
        "--out",
        s(&anti),
    ]);
    assert_eq!(read_json(&anti.join("metrics.json"))["accuracy"], 0.0);

    let good = tmp.path().join("good");
    ok(&[
        "eval",
        "mcq",
        "--dataset",
        s(&dataset),
        "--scenes",
        s(&scenes),
        "--backend",
        "oracle",
        "--out",
        s(&good),
    ]);
    assert_eq!(read_json(&good.join("metrics.json"))["accuracy"], 100.0);

    let log = good.join("run_log.jsonl");
    let (a, b) = (tmp.path().join("a.json"), tmp.path().join("b.json"));
    ok(&[
        "score",
        "mcq",
        "--log",
        s(&log),
        "--dataset",
        s(&dataset),
        "--out",
        s(&a),
    ]);
    ok(&[
        "score",
        "mcq",
        "--log",
        s(&log),
        "--dataset",
        s(&dataset),
        "--out",
        s(&b),
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(read_json(&a)["accuracy"], 100.0);

    let mut text = fs::read_to_string(&log).unwrap();
    text.push_str(&text.lines().next().unwrap().replace("\"v0\"", "\"ghost\""));
    text.push('\n');
    fs::write(&log, text).unwrap();
    assert_eq!(
        code(&[
            "score",
            "mcq",
            "--log",
            s(&log),
            "--dataset",
            s(&dataset),
            "--out",
            s(&a)
        ]),
        3
    );

    assert_eq!(code(&["eval", "mcq", "--scenes", s(&scenes), "--out", s(&good)]), 2);
}

#[test]
fn scanqa_eval_with_scripted_backend() {
    let tmp = tempfile::tempdir().unwrap();
    let scenes = synth(tmp.path(), 1);
    let dataset = tmp.path().join("scanqa.json");
    fs::write(
        &dataset,
        json!([
            {"question_id": "s0", "scene_id": "scene_000", "question": "What color is the box?", "answers": ["red"]},
            {"question_id": "s1", "scene_id": "scene_000", "question": "Where is the disc?", "answers": ["on the left side of the view"]},
        ])
        .to_string(),
    )
    .unwrap();
    let script = tmp.path().join("script.json");
    fs::write(
        &script,
        json!({"s0": "Red.", "s1": "on the left side of the view"}).to_string(),
    )
    .unwrap();
    let out = tmp.path().join("run");
    let stdout = ok(&[
        "eval",
        "scanqa",
        "--dataset",
        s(&dataset),
        "--scenes",
        s(&scenes),
        "--script",
        s(&script),
        "--out",
        s(&out),
    ]);
    assert!(stdout.contains("CIDEr"));
    let report = read_json(&out.join("metrics.json"));
    assert!((report["rouge_l"].as_f64().unwrap() - 100.0).abs() < 1e-9);
    assert_eq!(report["n_items"], 2);
    assert!(report["meteor_variant"].as_str().unwrap().contains("simplified"));

    fs::write(&script, json!({"s0": "red"}).to_string()).unwrap();
    let out2 = tmp.path().join("run2");
    assert_eq!(
        code(&[
            "eval",
            "scanqa",
            "--dataset",
            s(&dataset),
            "--scenes",
            s(&scenes),
            "--script",
            s(&script),
            "--out",
            s(&out2)
        ]),
        4
    );
}

#[test]
fn synth_spec_file_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    fs::write(&spec, json!({"random": {"seed": 42, "count": 10}}).to_string()).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth", "--spec", s(&spec), "--out", s(&a)]);
    ok(&["synth", "--spec", s(&spec), "--out", s(&b)]);
    let mut bundles: Vec<PathBuf> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().path()).collect();
    bundles.sort();
    assert_eq!(bundles.len(), 10);
    for dir in &bundles {
        let questions = read_json(&dir.join("questions.json"));
        assert_eq!(questions.as_array().unwrap().len(), 5);
        let other = b.join(dir.file_name().unwrap());
        for f in [
            "questions.json",
            "scene.json",
            "frames/frame_000000.png",
            "masks/frame_000015.png",
        ] {
            assert_eq!(fs::read(dir.join(f)).unwrap(), fs::read(other.join(f)).unwrap(), "{f}");
        }
    }
    fs::write(&spec, "{\"bogus\": 1}").unwrap();
    assert_ne!(code(&["synth", "--spec", s(&spec), "--out", s(&a)]), 0);
}
