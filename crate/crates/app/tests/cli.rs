mod common;

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Stdio};

use common::{fixture_checkpoint, get, json};
use serde_json::Value;

fn canopy(args: &[&str]) -> (bool, Value) {
    let out = Command::new(env!("CARGO_BIN_EXE_canopy"))
        .args(args)
        .output()
        .unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    let line = stdout.lines().last().unwrap_or_else(|| {
        panic!(
            "no output from {args:?}; stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    });
    (out.status.success(), json(line))
}

fn ok(args: &[&str]) -> Value {
    let (success, v) = canopy(args);
    assert!(success && v["ok"] == true, "{args:?}: {v}");
    v
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn dataset_train_eval_and_tile() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let v = ok(&[
        "synth",
        "dataset",
        "--out",
        s(&data),
        "--count",
        "6",
        "--seed",
        "3",
    ]);
    assert_eq!(v["images"], 6);
    assert!(v["boxes"].as_u64().unwrap() >= 18);

    let ckpt = dir.path().join("model.ckpt");
    let metrics = dir.path().join("metrics.csv");
    let v = ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&ckpt),
        "--metrics",
        s(&metrics),
        "--epochs",
        "3",
        "--batch-size",
        "4",
        "--seed",
        "1",
        "--no-augment",
    ]);
    assert_eq!(v["epochs_run"], 3);
    assert_eq!(
        v["train_images"].as_u64().unwrap() + v["val_images"].as_u64().unwrap(),
        6
    );
    assert!(ckpt.exists());
    let table = std::fs::read_to_string(&metrics).unwrap();
    assert_eq!(table.lines().count(), 4, "header plus one row per epoch");

    let v = ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--threshold",
        "0.05",
    ]);
    let map50 = v["report"]["map50"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map50));

    // Cut one 128-pixel scene into 64-pixel tiles with 16 pixels of overlap.
    let image = std::fs::read_dir(&data)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "png"))
        .unwrap();
    let annotations = data.join(canopy_core::datapipe::ANNOTATION_FILE);
    let tiles = dir.path().join("tiles");
    let v = ok(&[
        "tile",
        "--image",
        s(&image),
        "--annotations",
        s(&annotations),
        "--out",
        s(&tiles),
        "--tile-size",
        "64",
        "--overlap",
        "16",
    ]);
    assert_eq!(v["tiles"], 9);
    assert!(v["boxes_out"].as_u64().unwrap() >= v["boxes_in"].as_u64().unwrap());
    assert!(tiles.join(canopy_core::datapipe::ANNOTATION_FILE).exists());
}

#[test]
fn world_detect_and_serve() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("world");
    let v = ok(&[
        "synth",
        "world",
        "--out",
        s(&world),
        "--size",
        "2",
        "--seed",
        "4",
    ]);
    assert_eq!(v["world"]["tiles"], 4);
    let bbox: Vec<f64> = serde_json::from_value(v["world"]["bbox"].clone()).unwrap();

    let config = dir.path().join("canopy.toml");
    std::fs::write(
        &config,
        format!(
            "[model]\ncheckpoint = {:?}\n[tiling]\ntile_size = 128\noverlap = 32\n[tiles]\npath = \"world/tiles\"\n\
             [cadastral]\npath = \"world/cadastral.geojson\"\n[store]\ndir = \"store\"\n[detect]\nthreshold = {}\nchunk_deg = 0.0012\n",
            fixture_checkpoint(),
            common::FIXTURE_THRESHOLD
        ),
    )
    .unwrap();
    let cfg = s(&config);

    // Pull the edges in slightly so the scene covers exactly the world tiles.
    let e = 1e-8;
    let b = format!(
        "{},{},{},{}",
        bbox[0] + e,
        bbox[1] + e,
        bbox[2] - e,
        bbox[3] - e
    );
    let scene = ok(&["--config", cfg, "detect", "scene", "--bbox", &b]);
    assert!(scene["tree_count"].as_u64().unwrap() > 10);
    let parcel = ok(&[
        "--config",
        cfg,
        "detect",
        "parcel",
        "--community",
        "demo",
        "--block",
        "1",
        "--parcel",
        "2",
    ]);
    assert_eq!(parcel["area"], "parcel:demo/1/2");
    assert!(parcel["tree_count"].as_u64().unwrap() < scene["tree_count"].as_u64().unwrap());
    let community = ok(&[
        "--config",
        cfg,
        "detect",
        "community",
        "--community",
        "demo",
    ]);
    assert!(community["tree_count"].as_u64().unwrap() > parcel["tree_count"].as_u64().unwrap());
    let runs = std::fs::read_dir(dir.path().join("store/runs"))
        .unwrap()
        .count();
    assert_eq!(runs, 3);

    let (success, v) = canopy(&[
        "--config",
        cfg,
        "detect",
        "parcel",
        "--community",
        "demo",
        "--block",
        "9",
        "--parcel",
        "1",
    ]);
    assert!(!success);
    assert_eq!(v["ok"], false);

    let mut child = Command::new(env!("CARGO_BIN_EXE_canopy"))
        .args(["--config", cfg, "serve", "--bind", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let started = json(&line);
    let base = format!("http://{}", started["listening"].as_str().unwrap());
    assert_eq!(started["model_loaded"], true);
    let (status, body) = get(&base, "/areas/communities");
    let stored = get(
        &base,
        &format!("/runs/{}", community["run_id"].as_str().unwrap()),
    );
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(status, 200);
    assert_eq!(json(&body)[0]["id"], "demo");
    assert_eq!(stored.0, 200, "runs persist across processes");
    assert_eq!(json(&stored.1)["tree_count"], community["tree_count"]);
}

#[test]
fn detect_without_a_model_fails_cleanly() {
    let (success, v) = canopy(&[
        "detect",
        "community",
        "--community",
        "demo",
        "--tiles",
        "/nonexistent",
        "--cadastral",
        "/nonexistent.geojson",
    ]);
    assert!(!success);
    assert_eq!(v["ok"], false);
    assert!(v["error"].as_str().unwrap().len() > 5);
}
