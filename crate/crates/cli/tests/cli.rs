use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dualstream::composite::CompositeFrame;
use dualstream::depthcodec::{quantization_bound, ColorizationParams, DepthFrame};
use dualstream::geometry::Vec3;
use dualstream::pnm::{pgm_bytes, read_pgm, read_ppm};
use dualstream::pointcloud::{fit_plane, CloudPoint, PointCloud};
use tempfile::TempDir;

fn dualstream(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dualstream"));
    if !args.contains(&"--out-dir") {
        cmd.arg("--out-dir").arg(dir);
    }
    cmd.args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dualstream(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn exit_code(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = dualstream(dir, args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

fn read_ply(path: &Path) -> PointCloud {
    let text = fs::read_to_string(path).unwrap();
    let (header, body) = text.split_once("end_header\n").unwrap();
    let count: usize = header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .unwrap()
        .parse()
        .unwrap();
    let points: Vec<CloudPoint> = body
        .lines()
        .map(|l| {
            let f: Vec<f64> = l.split_whitespace().map(|x| x.parse().unwrap()).collect();
            CloudPoint { position: Vec3::new(f[0], f[1], f[2]), color: [f[3] as u8, f[4] as u8, f[5] as u8] }
        })
        .collect();
    assert_eq!(points.len(), count);
    PointCloud { points }
}

#[test]
fn encode_decode_round_trip_within_bound() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "ramp:0.2:2.0", "--resolution", "80x60"]);
    ok(dir, &["encode", &p(dir, "depth.pgm"), "-o", &p(dir, "depth.ppm")]);
    ok(dir, &["decode", &p(dir, "depth.ppm"), "-o", &p(dir, "back.pgm")]);
    let before = read_pgm(&dir.join("depth.pgm")).unwrap();
    let after = read_pgm(&dir.join("back.pgm")).unwrap();
    // Millimeter output adds at most half a millimeter of rounding.
    let bound_mm = quantization_bound(&ColorizationParams::env_profile()) * 1000.0 + 0.5;
    for (a, b) in before.samples.iter().zip(&after.samples) {
        assert!((*a as f64 - *b as f64).abs() <= bound_mm, "{a} vs {b}");
    }
}

#[test]
fn malformed_pgm_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.pgm"), b"P5\n4 4\n65535\nshort").unwrap();
    let (code, stderr) = exit_code(dir, &["encode", &p(dir, "bad.pgm"), "-o", &p(dir, "x.ppm")]);
    assert_eq!(code, 2);
    assert!(stderr.contains("PNM"), "{stderr}");
    assert!(!dir.join("x.ppm").exists());
}

#[test]
fn pack_unpack_is_bit_exact_and_keeps_absent_quadrants_absent() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "sphere", "--resolution", "48x36"]);
    ok(dir, &["encode", &p(dir, "depth.pgm"), "-o", &p(dir, "d.ppm")]);
    ok(
        dir,
        &[
            "pack",
            "--self-color",
            &p(dir, "color.ppm"),
            "--env-depth",
            &p(dir, "d.ppm"),
            "--timestamp-us",
            "1234",
            "--seq",
            "9",
            "-o",
            &p(dir, "f.dscf"),
        ],
    );
    let out_dir = dir.join("parts");
    let header = ok(dir, &["--out-dir", out_dir.to_str().unwrap(), "unpack", &p(dir, "f.dscf")]);
    assert!(header.contains("seq=9"));
    assert!(header.contains("timestamp_us=1234"));
    assert!(header.contains("self_depth=absent"));
    assert!(header.contains("env_color=absent"));
    assert_eq!(fs::read(out_dir.join("self_color.ppm")).unwrap(), fs::read(dir.join("color.ppm")).unwrap());
    assert_eq!(read_ppm(&out_dir.join("env_depth.ppm")).unwrap(), read_ppm(&dir.join("d.ppm")).unwrap());
    assert!(!out_dir.join("self_depth.ppm").exists());
    assert!(!out_dir.join("env_color.ppm").exists());
}

#[test]
fn corrupted_composite_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "ramp", "--resolution", "16x16"]);
    ok(dir, &["pack", "--env-color", &p(dir, "color.ppm"), "-o", &p(dir, "f.dscf")]);
    let mut bytes = fs::read(dir.join("f.dscf")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(dir.join("f.dscf"), &bytes).unwrap();
    let (code, stderr) = exit_code(dir, &["unpack", &p(dir, "f.dscf")]);
    assert_eq!(code, 2);
    assert!(stderr.to_lowercase().contains("checksum"), "{stderr}");
}

fn pack_env(dir: &Path, scene: &str, res: &str) {
    ok(dir, &["synth", scene, "--resolution", res]);
    ok(dir, &["encode", &p(dir, "depth.pgm"), "-o", &p(dir, "d.ppm")]);
    ok(dir, &["pack", "--env-color", &p(dir, "color.ppm"), "--env-depth", &p(dir, "d.ppm"), "-o", &p(dir, "f.dscf")]);
}

#[test]
fn reconstruct_flat_wall_is_planar() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    pack_env(dir, "flatwall:1.5", "64x48");
    ok(dir, &["reconstruct", &p(dir, "f.dscf"), "--which", "env", "-o", &p(dir, "wall.ply")]);
    let cloud = read_ply(&dir.join("wall.ply"));
    assert_eq!(cloud.len(), 64 * 48);
    let fit = fit_plane(&cloud).unwrap();
    assert!(fit.rms_residual <= quantization_bound(&ColorizationParams::env_profile()));
    assert!(fit.normal.z.abs() > 0.999);
}

#[test]
fn reconstruct_empty_depth_gives_no_vertices() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("empty.pgm"), pgm_bytes(&DepthFrame::filled(16, 12, 0))).unwrap();
    ok(dir, &["encode", &p(dir, "empty.pgm"), "-o", &p(dir, "d.ppm")]);
    ok(dir, &["synth", "ramp", "--resolution", "16x12"]);
    ok(dir, &["pack", "--env-color", &p(dir, "color.ppm"), "--env-depth", &p(dir, "d.ppm"), "-o", &p(dir, "f.dscf")]);
    ok(dir, &["reconstruct", &p(dir, "f.dscf"), "-o", &p(dir, "empty.ply")]);
    assert_eq!(read_ply(&dir.join("empty.ply")).len(), 0);
}

#[test]
fn reconstruct_respects_quadrant_selection() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    pack_env(dir, "ramp", "16x12");
    let (code, stderr) = exit_code(dir, &["reconstruct", &p(dir, "f.dscf"), "--which", "self", "-o", &p(dir, "x.ply")]);
    assert_eq!(code, 2);
    assert!(stderr.contains("self_color"), "{stderr}");
    ok(dir, &["reconstruct", &p(dir, "f.dscf"), "--which", "env", "-o", &p(dir, "x.ply")]);
    assert_eq!(read_ply(&dir.join("x.ply")).len(), 16 * 12);
}

#[test]
fn reconstruct_rejects_mismatched_codec_config() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    pack_env(dir, "ramp", "16x12");
    fs::write(dir.join("other.cfg"), "env.d_max_m = 3.0\n").unwrap();
    let (code, _) =
        exit_code(dir, &["--config", &p(dir, "other.cfg"), "reconstruct", &p(dir, "f.dscf"), "-o", &p(dir, "x.ply")]);
    assert_eq!(code, 2);
    // Keys for the other stream leave the environment digest alone.
    fs::write(dir.join("self.cfg"), "self.d_max_m = 3.0\n").unwrap();
    ok(dir, &["--config", &p(dir, "self.cfg"), "reconstruct", &p(dir, "f.dscf"), "-o", &p(dir, "x.ply")]);
}

const SCRIPT: &str = "\
0 - link av base_ms=100 jitter_ms=20 loss=0.01
0 - fps 10
0 a peer anchor=0,0,0 res=32x24
0 b peer anchor=2,0,0 res=32x24
0 a source env step
0 b source env ramp
0 a join
0 b join
20 a pose 0,0,1
20 b pose 0,0,1
300 a snapshot video
1000 - end
";

#[test]
fn simulate_is_deterministic_and_report_regenerates() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("s.txt"), SCRIPT).unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.join(name);
        let stdout = ok(dir, &["--seed", seed, "--out-dir", out.to_str().unwrap(), "simulate", &p(dir, "s.txt")]);
        (stdout, fs::read(out.join("report.txt")).unwrap(), fs::read(out.join("events.log")).unwrap())
    };
    let (stdout, report, events) = run("one", "5");
    let (_, report2, events2) = run("two", "5");
    assert_eq!(report, report2);
    assert_eq!(events, events2);
    assert_eq!(stdout.as_bytes(), &report[..]);
    assert!(stdout.contains("replicas_converged=true"));
    assert!(dir.join("one/state_digest.txt").exists());
    assert!(fs::read_dir(dir.join("one")).unwrap().any(|e| {
        let name = e.unwrap().file_name().into_string().unwrap();
        name.starts_with("snapshot") && name.ends_with(".ppm")
    }));

    let regenerated = ok(dir, &["report", &p(dir, "one")]);
    assert_eq!(regenerated.as_bytes(), &report[..]);
}

#[test]
fn simulate_rejects_a_fifth_peer_with_its_line() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let mut script = String::new();
    for name in ["a", "b", "c", "d", "e"] {
        script.push_str(&format!("0 {name} peer\n"));
    }
    for name in ["a", "b", "c", "d", "e"] {
        script.push_str(&format!("0 {name} join\n"));
    }
    fs::write(dir.join("five.txt"), &script).unwrap();
    let (code, stderr) = exit_code(dir, &["simulate", &p(dir, "five.txt")]);
    assert_eq!(code, 2);
    assert!(stderr.contains("line 10"), "{stderr}");

    fs::write(dir.join("four.txt"), script.replace("0 e join\n", "").replace("0 e peer\n", "")).unwrap();
    ok(dir, &["simulate", &p(dir, "four.txt")]);
}

#[test]
fn bench_with_zero_iterations_reports_nothing() {
    let tmp = TempDir::new().unwrap();
    let out = ok(tmp.path(), &["bench", "--iterations", "0"]);
    assert_eq!(out, "resolution=640x480\niterations=0\n");
}

#[test]
fn bench_smaller_frames_run_faster() {
    let tmp = TempDir::new().unwrap();
    let fps = |res: &str, iters: &str| -> f64 {
        let out = ok(tmp.path(), &["bench", "--resolution", res, "--iterations", iters]);
        out.lines().find_map(|l| l.strip_prefix("fps=")).unwrap().parse().unwrap()
    };
    assert!(fps("64x64", "50") > fps("640x480", "5"));
}

#[test]
fn bad_arguments_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(exit_code(tmp.path(), &["bench", "--resolution", "wide"]).0, 2);
    assert_eq!(exit_code(tmp.path(), &["synth", "cube"]).0, 2);
    assert_eq!(exit_code(tmp.path(), &["nonsense"]).0, 2);
}

#[test]
fn composite_file_parses_with_the_library() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    pack_env(dir, "ramp", "16x12");
    let frame = CompositeFrame::parse(&fs::read(dir.join("f.dscf")).unwrap()).unwrap();
    assert_eq!(frame.seq, 0);
}
