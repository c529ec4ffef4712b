use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use outpaint_cli::exit;

fn toy_manifest() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy/manifest.tsv")
}

fn outpaint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_outpaint"))
        .args(args)
        .env_remove("OUTPAINT_CONFIG")
        .env_remove("OUTPAINT_STAGE1")
        .env_remove("OUTPAINT_STAGE2")
        .env_remove("OUTPAINT_PROFILE")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        "profile = \"desk\"\nmanifest = {:?}\ncheckpoint_dir = {:?}\n{extra}\n[train]\nbatch_size = 4\naugment = false\ncheckpoint_every = 0\n",
        toy_manifest(),
        dir.join("ck"),
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn failure_classes_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "profile = [").unwrap();
    let out = outpaint(&["--config", bad.to_str().unwrap(), "train", "--stage", "1"]);
    assert_eq!(code(&out), exit::CONFIG, "{}", stderr(&out));
    assert!(stderr(&out).contains("malformed config"));

    let missing = dir.path().join("none.tsv");
    let out = outpaint(&["--manifest", missing.to_str().unwrap(), "train", "--stage", "1"]);
    assert_eq!(code(&out), exit::DATASET, "{}", stderr(&out));

    let cfg = write_config(dir.path(), "");
    let out = outpaint(&[
        "--config",
        cfg.to_str().unwrap(),
        "outpaint",
        "--in",
        "a.png",
        "--out",
        "b.png",
    ]);
    assert_eq!(code(&out), exit::CHECKPOINT, "{}", stderr(&out));
    assert!(stderr(&out).contains("checkpoint not found"));

    let out = outpaint(&["train"]);
    assert_eq!(code(&out), exit::USAGE);
    let out = outpaint(&["--profile", "mars", "train", "--stage", "1"]);
    assert_eq!(code(&out), exit::CONFIG);
}

#[test]
fn train_outpaint_evaluate_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let cfg = cfg.to_str().unwrap();

    for stage in ["1", "2"] {
        let out = outpaint(&["--config", cfg, "train", "--stage", stage, "--steps", "2"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(summary["steps"], 2);
    }
    let ck = dir.path().join("ck");
    assert!(ck.join("layout_latest.safetensors").exists());
    assert!(ck.join("image_latest.safetensors").exists());
    let log = std::fs::read_to_string(ck.join("layout_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    // Resuming continues the step count and appends to the log.
    let out = outpaint(&["--config", cfg, "train", "--stage", "1", "--steps", "3", "--resume"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["steps"], 3);
    let log = std::fs::read_to_string(ck.join("layout_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);

    // Crop a validation image and extend it.
    let (pixels, _) = outpaint::layout_data::synthetic::toy_scene(3, 64);
    let input = dir.path().join("scene_x.png");
    outpaint::layout_data::io::write_rgb(&input, &pixels.crop(0, 0, 64, 48).unwrap()).unwrap();
    let layout_in = dir.path().join("scene_x_seg.png");
    let (_, layout) = outpaint::layout_data::synthetic::toy_scene(3, 64);
    outpaint::layout_data::io::write_label_map(&layout_in, &layout.crop(0, 0, 64, 48).unwrap()).unwrap();
    let (out_img, out_seg) = (dir.path().join("b.png"), dir.path().join("b_seg.png"));
    let out = outpaint(&[
        "--config",
        cfg,
        "outpaint",
        "--ratio",
        "0.25",
        "--in",
        input.to_str().unwrap(),
        "--layout-in",
        layout_in.to_str().unwrap(),
        "--out",
        out_img.to_str().unwrap(),
        "--layout-out",
        out_seg.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let img = outpaint::layout_data::io::read_rgb(&out_img).unwrap();
    assert_eq!((img.height(), img.width()), (64, 64));
    let seg = outpaint::layout_data::io::read_label_map(&out_seg, 8).unwrap();
    assert_eq!((seg.height(), seg.width()), (64, 64));
    // The known part of the output is the input.
    assert_eq!(img.crop(0, 0, 64, 48).unwrap().to_rgb8(), pixels.crop(0, 0, 64, 48).unwrap().to_rgb8());

    // Annotation lookup by file stem, ood ratio flagged.
    let real = toy_manifest().parent().unwrap().join("images/scene_008.png");
    let crop = outpaint::layout_data::io::read_rgb(&real).unwrap().crop(0, 0, 64, 40).unwrap();
    let input = dir.path().join("scene_008.png");
    outpaint::layout_data::io::write_rgb(&input, &crop).unwrap();
    let out = outpaint(&[
        "--config",
        cfg,
        "outpaint",
        "--ratio",
        "0.375",
        "--in",
        input.to_str().unwrap(),
        "--out",
        out_img.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["out_of_distribution"], true);
    assert_eq!(report["width"], 64);

    let out = outpaint(&["--config", cfg, "evaluate", "--split", "val", "--ratio", "0.5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["dataset"], "desk");
    assert_eq!(report["mask_fraction"], 0.5);
    assert_eq!(report["n_images"], 4);
    assert!(report["fid"].as_f64().unwrap() >= 0.0);

    let grid = dir.path().join("grid.png");
    let out = outpaint(&["--config", cfg, "export-grid", "--count", "2", "--tile", "32", "--out", grid.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let g = outpaint::layout_data::io::read_rgb(&grid).unwrap();
    assert_eq!((g.height(), g.width()), (64, 160));

    // A stage-2 checkpoint offered as stage 1 is refused.
    let out = outpaint(&[
        "--config",
        cfg,
        "--stage1",
        ck.join("image_latest.safetensors").to_str().unwrap(),
        "evaluate",
    ]);
    assert_eq!(code(&out), exit::CHECKPOINT, "{}", stderr(&out));
}
