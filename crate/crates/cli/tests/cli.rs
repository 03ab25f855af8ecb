//! End-to-end tests of the `zoomfuse` binary: exit codes, determinism, and
//! file handling.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_zoomfuse"))
}

fn small_scene(dir: &Path, translation: [f64; 2], noise: f64) -> std::path::PathBuf {
    let scene = format!(
        r#"{{
        "width": 128, "height": 96, "focal_ratio": 2.0,
        "translation": [{}, {}],
        "noise_sigma": {},
        "seed": 11, "margin": 8,
        "layers": [
            {{ "region": {{ "kind": "full" }}, "disparity": [1.0, 0.0], "blur_sigma": 0.0 }},
            {{ "region": {{ "kind": "rect", "x": 40.0, "y": 24.0, "width": 48.0, "height": 48.0 }},
               "disparity": [4.0, 0.0], "blur_sigma": 0.0 }}
        ]
    }}"#,
        translation[0], translation[1], noise
    );
    let path = dir.join("scene.json");
    fs::write(&path, scene).unwrap();
    path
}

fn simulate_into(scene: &Path, out_dir: &Path) -> Output {
    bin()
        .args(["simulate", "--scene"])
        .arg(scene)
        .arg("--out-dir")
        .arg(out_dir)
        .output()
        .unwrap()
}

fn run_fuse(pair: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("fuse")
        .arg("--wide")
        .arg(pair.join("wide.png"))
        .arg("--tele")
        .arg(pair.join("tele.png"))
        .arg("--meta")
        .arg(pair.join("meta.json"))
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn simulate_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let scene = small_scene(tmp.path(), [2.0, -1.0], 0.01);
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    assert!(simulate_into(&scene, &dir_a).status.success());
    assert!(simulate_into(&scene, &dir_b).status.success());
    for name in [
        "wide.png",
        "tele.png",
        "meta.json",
        "gt_flow.flo",
        "gt_occlusion.png",
        "gt_defocus.png",
    ] {
        let a = fs::read(dir_a.join(name)).unwrap();
        let b = fs::read(dir_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
}

#[test]
fn repo_sample_scene_simulates() {
    let tmp = TempDir::new().unwrap();
    let scene = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes/two_layer.json");
    let out = simulate_into(&scene, &tmp.path().join("pair"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_scene_field_exits_3_and_names_it() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("bad.json");
    fs::write(&scene, r#"{"width": 64}"#).unwrap();
    let out = simulate_into(&scene, &tmp.path().join("x"));
    assert_eq!(out.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("height"), "stderr: {msg}");
}

#[test]
fn fuse_runs_and_is_deterministic_across_threads() {
    let tmp = TempDir::new().unwrap();
    let scene = small_scene(tmp.path(), [1.5, 0.5], 0.0);
    let pair = tmp.path().join("pair");
    assert!(simulate_into(&scene, &pair).status.success());

    let out_a = tmp.path().join("a.png");
    let out_b = tmp.path().join("b.png");
    let out_c = tmp.path().join("c.png");
    let r1 = run_fuse(&pair, &out_a, &["--threads", "1"]);
    assert_eq!(r1.status.code(), Some(0), "{}", String::from_utf8_lossy(&r1.stderr));
    let r2 = run_fuse(&pair, &out_b, &["--threads", "4"]);
    assert_eq!(r2.status.code(), Some(0));
    let r3 = run_fuse(&pair, &out_c, &["--threads", "4"]);
    assert_eq!(r3.status.code(), Some(0));

    let a = fs::read(&out_a).unwrap();
    let b = fs::read(&out_b).unwrap();
    let c = fs::read(&out_c).unwrap();
    assert_eq!(a, b, "1 vs 4 threads differ");
    assert_eq!(b, c, "repeated runs differ");
}

#[test]
fn fuse_writes_dumps_and_timings() {
    let tmp = TempDir::new().unwrap();
    let scene = small_scene(tmp.path(), [0.0, 0.0], 0.0);
    let pair = tmp.path().join("pair");
    assert!(simulate_into(&scene, &pair).status.success());

    let out = tmp.path().join("out.png");
    let dump = tmp.path().join("dump");
    let timings = tmp.path().join("timings.json");
    let r = run_fuse(
        &pair,
        &out,
        &[
            "--dump-dir",
            dump.to_str().unwrap(),
            "--timings-json",
            timings.to_str().unwrap(),
        ],
    );
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    for name in [
        "i_src.png",
        "i_ref.png",
        "i_ref_warped.png",
        "flow_fwd.flo",
        "flow_fwd.logvar",
        "flow_bwd.flo",
        "flow_bwd.logvar",
        "m_occlusion.png",
        "m_defocus.png",
        "m_flow_uncertainty.png",
        "m_rejection.png",
        "m_blend.png",
        "blended.png",
    ] {
        assert!(dump.join(name).exists(), "missing dump {name}");
    }
    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&timings).unwrap()).unwrap();
    for key in [
        "color_matching_ms",
        "coarse_alignment_ms",
        "optical_flow_ms",
        "warping_ms",
        "occlusion_map_ms",
        "defocus_map_ms",
        "rejection_map_ms",
        "fusion_ms",
        "blending_ms",
        "total_ms",
    ] {
        assert!(parsed.get(key).is_some(), "missing stage {key}");
    }
    // The flow dump speaks the Middlebury header.
    let flo = fs::read(dump.join("flow_fwd.flo")).unwrap();
    assert_eq!(&flo[0..4], &202021.25f32.to_le_bytes());
}

#[test]
fn corrupt_tele_exits_2_without_partial_output() {
    let tmp = TempDir::new().unwrap();
    let scene = small_scene(tmp.path(), [0.0, 0.0], 0.0);
    let pair = tmp.path().join("pair");
    assert!(simulate_into(&scene, &pair).status.success());
    fs::write(pair.join("tele.png"), b"not a png at all").unwrap();

    let out = tmp.path().join("out.png");
    let r = run_fuse(&pair, &out, &[]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(!out.exists(), "partial output left behind");
}

#[test]
fn constant_pair_skips_with_exit_5_and_copies_wide() {
    let tmp = TempDir::new().unwrap();
    // Flat gray pair: no corners anywhere, so coarse alignment reports low
    // confidence and fusion is skipped.
    let wide = image::DynamicImage::ImageRgb16(image::ImageBuffer::from_pixel(
        96,
        96,
        image::Rgb([32768u16, 32768, 32768]),
    ));
    let tele = wide.clone();
    wide.save(tmp.path().join("wide.png")).unwrap();
    tele.save(tmp.path().join("tele.png")).unwrap();
    fs::write(
        tmp.path().join("meta.json"),
        r#"{"focal_ratio": 2.0,
            "tele_fov_rect": {"x": 24, "y": 24, "width": 48, "height": 48},
            "focus_roi": {"x": 8, "y": 8, "width": 16, "height": 16}}"#,
    )
    .unwrap();

    let out = tmp.path().join("out.png");
    let r = run_fuse(tmp.path(), &out, &[]);
    assert_eq!(r.status.code(), Some(5), "{}", String::from_utf8_lossy(&r.stderr));
    // The output is the wide frame passed through.
    let a = image::open(tmp.path().join("wide.png")).unwrap().into_rgb16();
    let b = image::open(&out).unwrap().into_rgb16();
    assert_eq!(a.as_raw(), b.as_raw());
}

#[test]
fn invalid_config_exits_3() {
    let tmp = TempDir::new().unwrap();
    let scene = small_scene(tmp.path(), [0.0, 0.0], 0.0);
    let pair = tmp.path().join("pair");
    assert!(simulate_into(&scene, &pair).status.success());

    let config = tmp.path().join("config.json");
    fs::write(&config, r#"{"schema_version": 1, "fusion_operator": "unet"}"#).unwrap();
    let out = tmp.path().join("out.png");
    let r = run_fuse(&pair, &out, &["--config", config.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(!out.exists());

    // Unknown keys are rejected too.
    fs::write(&config, r#"{"schema_version": 1, "no_such_key": true}"#).unwrap();
    let r = run_fuse(&pair, &out, &["--config", config.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn mismatched_meta_exits_4() {
    let tmp = TempDir::new().unwrap();
    let scene = small_scene(tmp.path(), [0.0, 0.0], 0.0);
    let pair = tmp.path().join("pair");
    assert!(simulate_into(&scene, &pair).status.success());
    // Rect outside the wide frame.
    fs::write(
        pair.join("meta.json"),
        r#"{"focal_ratio": 2.0,
            "tele_fov_rect": {"x": 1000, "y": 0, "width": 64, "height": 48},
            "focus_roi": {"x": 0, "y": 0, "width": 16, "height": 16}}"#,
    )
    .unwrap();
    let out = tmp.path().join("out.png");
    let r = run_fuse(&pair, &out, &[]);
    assert_eq!(r.status.code(), Some(4), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn bench_reports_all_stages() {
    let tmp = TempDir::new().unwrap();
    let scene = small_scene(tmp.path(), [0.0, 0.0], 0.0);
    let pair = tmp.path().join("pair");
    assert!(simulate_into(&scene, &pair).status.success());

    let r = bin()
        .arg("bench")
        .arg("--pair-dir")
        .arg(&pair)
        .args(["--repeats", "2"])
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let parsed: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert!(parsed.get("total_ms").and_then(|v| v.as_f64()).unwrap() > 0.0);
    assert!(parsed.get("fusion_ms").is_some());
}

#[test]
fn outside_rect_pixels_survive_the_full_cli_round_trip() {
    let tmp = TempDir::new().unwrap();
    let scene = small_scene(tmp.path(), [1.0, -0.5], 0.005);
    let pair = tmp.path().join("pair");
    assert!(simulate_into(&scene, &pair).status.success());

    let out = tmp.path().join("out.png");
    assert_eq!(run_fuse(&pair, &out, &[]).status.code(), Some(0));

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(pair.join("meta.json")).unwrap()).unwrap();
    let rect = &meta["tele_fov_rect"];
    let (rx, ry) = (rect["x"].as_f64().unwrap(), rect["y"].as_f64().unwrap());
    let (rw, rh) = (
        rect["width"].as_f64().unwrap(),
        rect["height"].as_f64().unwrap(),
    );

    let wide = image::open(pair.join("wide.png")).unwrap().into_rgb16();
    let fused = image::open(&out).unwrap().into_rgb16();
    assert_eq!(wide.dimensions(), fused.dimensions());
    let mut outside = 0usize;
    for y in 0..wide.height() {
        for x in 0..wide.width() {
            let cx = x as f64 + 0.5;
            let cy = y as f64 + 0.5;
            let inside = cx > rx && cx < rx + rw && cy > ry && cy < ry + rh;
            if !inside {
                outside += 1;
                assert_eq!(
                    wide.get_pixel(x, y),
                    fused.get_pixel(x, y),
                    "outside-rect pixel ({x},{y}) changed"
                );
            }
        }
    }
    assert!(outside > 0);
}
