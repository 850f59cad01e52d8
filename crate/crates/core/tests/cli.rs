//! End-to-end runs of the `mixdepth` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixdepth::io::{encode_pfm, read_pfm, unstack_planes};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mixdepth"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth_small(dir: &Path) -> PathBuf {
    let scene = dir.join("scene");
    let cfg = configs().join("small_box.json");
    assert!(run(&["synth", "--config", p(&cfg), "--out", p(&scene)])
        .status
        .success());
    scene
}

fn fit(scene: &Path, out: &Path, extra: &[&str]) -> Output {
    let cfg = configs().join("fit_quick.json");
    let mut args = vec![
        "fit",
        "--scene",
        p(scene),
        "--config",
        p(&cfg),
        "--out",
        p(out),
        "--threads",
        "1",
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_five_files_that_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("box");
    assert!(run(&["synth", "--out", p(&out)]).status.success());
    let mut names: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "scene.json",
            "source.ppm",
            "source_depth.pfm",
            "target.ppm",
            "target_depth.pfm"
        ]
    );
    for name in ["target_depth.pfm", "source_depth.pfm"] {
        let bytes = fs::read(out.join(name)).unwrap();
        assert_eq!(
            encode_pfm(&read_pfm(out.join(name)).unwrap()).unwrap(),
            bytes
        );
    }
    let spec = read_json(&out.join("scene.json"));
    assert_eq!(
        (spec["width"].as_u64(), spec["height"].as_u64()),
        (Some(192), Some(128))
    );
}

#[test]
fn synth_rejects_bad_specs_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = read_json(&configs().join("small_box.json"));
    spec["objects"][0]["depth"] = 12.0.into();
    let behind = dir.path().join("behind.json");
    fs::write(&behind, spec.to_string()).unwrap();
    let out = run(&[
        "synth",
        "--config",
        p(&behind),
        "--out",
        p(&dir.path().join("a")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("objects[0].depth"));

    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\n  \"width\": 48,\n  \"height\": }\n").unwrap();
    let out = run(&[
        "synth",
        "--config",
        p(&broken),
        "--out",
        p(&dir.path().join("b")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let unknown = dir.path().join("unknown.json");
    spec["objects"][0]["depth"] = 5.0.into();
    spec["colour"] = 1.into();
    fs::write(&unknown, spec.to_string()).unwrap();
    let out = run(&[
        "synth",
        "--config",
        p(&unknown),
        "--out",
        p(&dir.path().join("c")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn seed_changes_textures_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("small_box.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(
        run(&["synth", "--config", p(&cfg), "--out", p(&a), "--seed", "7"])
            .status
            .success()
    );
    assert!(run(&["synth", "--config", p(&cfg), "--out", p(&b)])
        .status
        .success());
    assert_ne!(
        fs::read(a.join("target.ppm")).unwrap(),
        fs::read(b.join("target.ppm")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("target_depth.pfm")).unwrap(),
        fs::read(b.join("target_depth.pfm")).unwrap()
    );
}

#[test]
fn fit_outputs_and_ablations() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_small(dir.path());
    let (mix, base) = (dir.path().join("mix"), dir.path().join("base"));
    assert!(fit(&scene, &mix, &[]).status.success());
    assert!(fit(&scene, &base, &["--baseline"]).status.success());
    for name in [
        "params.pfm",
        "disparity.pfm",
        "depth.pfm",
        "alpha.pfm",
        "train_log.jsonl",
        "config.json",
    ] {
        assert!(mix.join(name).exists(), "{name}");
    }
    let disparity = read_pfm(mix.join("disparity.pfm")).unwrap();
    assert_eq!((disparity.width(), disparity.height()), (48, 32));
    assert!(disparity.data().iter().all(|&d| d > 0.0 && d < 1.0));
    let planes = unstack_planes(&read_pfm(mix.join("params.pfm")).unwrap(), 5).unwrap();
    assert_eq!(planes.len(), 5);
    let log = fs::read_to_string(mix.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 40);
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert!(first["total"].is_number() && first["valid_pixel_count"].is_number());
    assert_ne!(
        log,
        fs::read_to_string(base.join("train_log.jsonl")).unwrap()
    );
    assert_ne!(
        fs::read(mix.join("disparity.pfm")).unwrap(),
        fs::read(base.join("disparity.pfm")).unwrap()
    );
    let alpha = read_pfm(base.join("alpha.pfm")).unwrap();
    assert!(alpha.data().iter().all(|&a| a == 1.0));

    let resolved = read_json(&mix.join("config.json"));
    assert_eq!(resolved["train"]["steps"], 40);
    assert_eq!(resolved["train"]["learning_rate"], 1.0);
    assert_eq!(
        read_json(&base.join("config.json"))["train"]["baseline"],
        true
    );

    let two = dir.path().join("two");
    assert!(fit(&scene, &two, &["--variance-mode", "two-constants"])
        .status
        .success());
    assert_eq!(
        read_json(&two.join("config.json"))["train"]["variance_mode"],
        "two-constants"
    );
    let bad = fit(
        &scene,
        &dir.path().join("bad"),
        &["--variance-mode", "three"],
    );
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn fit_keeps_last_finite_table_on_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_small(dir.path());
    let cfg = dir.path().join("explode.json");
    fs::write(&cfg, r#"{"steps": 5, "lambda_prior": 1.7e308}"#).unwrap();
    let out = dir.path().join("out");
    let res = run(&[
        "fit",
        "--scene",
        p(&scene),
        "--config",
        p(&cfg),
        "--out",
        p(&out),
    ]);
    assert_eq!(res.status.code(), Some(3));
    let planes = unstack_planes(&read_pfm(out.join("params.pfm")).unwrap(), 5).unwrap();
    assert!(planes
        .iter()
        .all(|pl| pl.data().iter().all(|v| v.is_finite())));
    assert!(out.join("config.json").exists());
}

#[test]
fn fit_missing_scene_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let res = fit(&dir.path().join("nothing"), &dir.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn eval_of_ground_truth_is_perfect_and_matches_schema() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_small(dir.path());
    let gt = scene.join("target_depth.pfm");
    let out = dir.path().join("eval");
    assert!(run(&[
        "eval",
        "--pred",
        p(&gt),
        "--gt",
        p(&gt),
        "--rig",
        p(&scene.join("scene.json")),
        "--out",
        p(&out)
    ])
    .status
    .success());
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["image"]["mae"], 0.0);
    assert_eq!(report["pointcloud"]["fscore"], 100.0);
    assert_eq!(report["pointcloud"]["iou"], 100.0);
    assert_eq!(report["edges"]["edge_completeness"], 0.0);
    assert!(report["config"]["canny"]["low"].is_number());

    let schema = read_json(
        &Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas/metrics_report.schema.json"),
    );
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(&report)
        .map(|e| e.to_string())
        .collect();
    assert!(errors.is_empty(), "{errors:?}");
    let mut broken = report.clone();
    broken["image"]["mae"] = "zero".into();
    assert!(!validator.is_valid(&broken));
}

#[test]
fn eval_dimension_mismatch_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let small = synth_small(dir.path());
    let big = dir.path().join("big");
    assert!(run(&["synth", "--out", p(&big)]).status.success());
    let res = run(&[
        "eval",
        "--pred",
        p(&small.join("target_depth.pfm")),
        "--gt",
        p(&big.join("target_depth.pfm")),
        "--rig",
        p(&big.join("scene.json")),
        "--out",
        p(&dir.path().join("e")),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("dimension mismatch"));
}

#[test]
fn check_prop_passes_and_fails_on_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let quick = configs().join("check_prop_quick.json");
    let out = dir.path().join("ok");
    assert!(
        run(&["check-prop", "--config", p(&quick), "--out", p(&out)])
            .status
            .success()
    );
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["pass"], true);
    assert_eq!(report["sigmas"].as_array().unwrap().len(), 3);
    assert!(out.join("config.json").exists());

    let mut strict = read_json(&quick);
    strict["tolerance"] = 1e-6.into();
    let strict_path = dir.path().join("strict.json");
    fs::write(&strict_path, strict.to_string()).unwrap();
    let res = run(&[
        "check-prop",
        "--config",
        p(&strict_path),
        "--out",
        p(&dir.path().join("strict")),
    ]);
    assert_eq!(res.status.code(), Some(4));
    assert_eq!(
        read_json(&dir.path().join("strict/report.json"))["pass"],
        false
    );
}

#[test]
fn single_thread_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scene_cfg = configs().join("small_box.json");
    let fit_cfg = configs().join("fit_quick.json");
    let roots: Vec<PathBuf> = (0..2)
        .map(|i| {
            let root = dir.path().join(format!("run{i}"));
            fs::create_dir_all(&root).unwrap();
            // relative paths keep the recorded configs identical between roots
            let steps: [&[&str]; 3] = [
                &[
                    "synth",
                    "--config",
                    p(&scene_cfg),
                    "--out",
                    "scene",
                    "--seed",
                    "3",
                    "--threads",
                    "1",
                ],
                &[
                    "fit",
                    "--scene",
                    "scene",
                    "--config",
                    p(&fit_cfg),
                    "--out",
                    "fit",
                    "--seed",
                    "3",
                    "--threads",
                    "1",
                ],
                &[
                    "eval",
                    "--pred",
                    "fit/depth.pfm",
                    "--gt",
                    "scene/target_depth.pfm",
                    "--rig",
                    "scene/scene.json",
                    "--out",
                    "eval",
                    "--threads",
                    "1",
                ],
            ];
            for args in steps {
                assert!(
                    bin()
                        .current_dir(&root)
                        .args(args)
                        .status()
                        .unwrap()
                        .success(),
                    "{args:?}"
                );
            }
            root
        })
        .collect();
    let mut compared = 0;
    for sub in ["scene", "fit", "eval"] {
        for entry in fs::read_dir(roots[0].join(sub)).unwrap() {
            let name = entry.unwrap().file_name();
            let a = fs::read(roots[0].join(sub).join(&name)).unwrap();
            let b = fs::read(roots[1].join(sub).join(&name)).unwrap();
            assert_eq!(a, b, "{sub}/{}", name.to_string_lossy());
            compared += 1;
        }
    }
    assert_eq!(compared, 5 + 6 + 2);
}
