use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rihvr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rihvr")).args(args).output().expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = r#"
seed = 3
workers = 1
frame_interval = 0.01

[geometry]
nx = 32
ny = 32
nz = 8
pitch = 2e-6
dz = 6e-6
z0 = 200e-6
wavelength = 632e-9

[solver]
max_iters = 15

[segmentation]
min_vox = 2

[tracking]
max_disp = 8e-6
min_frames = 2

[tracking.smoothing]
method = "none"

[synthesis]
particles = 3
diameter = 6e-6
noise_sigma = 0.01
frames = 3

[synthesis.flow]
kind = "uniform"
velocity = [1e-4, 0.0, 0.0]
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn run_pipeline(dir: &Path, cfg: &str) {
    let out = dir.to_str().unwrap();
    ok(rihvr(&["--config", cfg, "--output", out, "synthesize"]));
    let input = format!("{out}/holograms/*.f32");
    ok(rihvr(&["--config", cfg, "--output", out, "reconstruct", "--input", &input]));
    ok(rihvr(&["--config", cfg, "--output", out, "track"]));
    let truth = format!("{out}/truth.tsv");
    let traj = format!("{out}/trajectories.tsv");
    ok(rihvr(&["--config", cfg, "--output", out, "evaluate", "--truth", &truth, "--trajectories", &traj]));
}

#[test]
fn full_pipeline_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = write_config(a.path(), SMALL);
    run_pipeline(a.path(), &cfg);
    run_pipeline(b.path(), &cfg);
    for f in ["truth.tsv", "particles.tsv", "trajectories.tsv", "ep.tsv", "errors.tsv", "velocity.tsv"] {
        let x = fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
    for f in ["volumes/frame_00002.rihv", "objective/frame_00000.tsv", "holograms/hologram_00001.f32.dims", "config.toml"] {
        assert!(a.path().join(f).is_file(), "{f} missing");
    }
    let particles = fs::read_to_string(a.path().join("particles.tsv")).unwrap();
    assert!(particles.starts_with("frame\tid\tx_vox"));
    assert!(particles.lines().count() > 1);
    let ep = fs::read_to_string(a.path().join("ep.tsv")).unwrap();
    assert_eq!(ep.lines().count(), 4);
}

#[test]
fn seed_flag_changes_output() {
    let a = tempfile::tempdir().unwrap();
    let cfg = write_config(a.path(), SMALL);
    let out = a.path().to_str().unwrap();
    ok(rihvr(&["--config", &cfg, "--output", out, "synthesize"]));
    let first = fs::read(a.path().join("truth.tsv")).unwrap();
    ok(rihvr(&["--config", &cfg, "--output", out, "--seed", "4", "synthesize"]));
    assert_ne!(first, fs::read(a.path().join("truth.tsv")).unwrap());
}

#[test]
fn empty_synthesis_gives_uniform_holograms() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("particles = 3", "particles = 0").replace("noise_sigma = 0.01", "noise_sigma = 0.0");
    let cfg = write_config(dir.path(), &text);
    ok(rihvr(&["--config", &cfg, "--output", dir.path().to_str().unwrap(), "synthesize"]));
    let truth = fs::read_to_string(dir.path().join("truth.tsv")).unwrap();
    assert_eq!(truth, "frame\tid\tx\ty\tz\tpx\tpy\tpz\n");
    let bytes = fs::read(dir.path().join("holograms/hologram_00000.f32")).unwrap();
    assert_eq!(bytes.len(), 32 * 32 * 4);
    assert!(bytes.chunks(4).all(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) == 1.0));
}

#[test]
fn baseline_method_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().to_str().unwrap();
    ok(rihvr(&["--config", &cfg, "--output", out, "synthesize"]));
    let input = format!("{out}/holograms/*.f32");
    ok(rihvr(&["--config", &cfg, "--output", out, "reconstruct", "--input", &input, "--method", "baseline", "--no-volumes"]));
    assert!(dir.path().join("particles.tsv").is_file());
    assert!(!dir.path().join("volumes").exists());
    assert!(!dir.path().join("objective").exists());
}

#[test]
fn invalid_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let bad = write_config(dir.path(), "[geometry]\nnx = 0\n[preprocessing]\nwindow = 4\n");
    let r = rihvr(&["--config", &bad, "config"]);
    assert!(!r.status.success());
    let msg = String::from_utf8_lossy(&r.stderr);
    assert!(msg.contains("geometry") && msg.contains("window"), "{msg}");

    let unknown = write_config(dir.path(), "colour = 1\n");
    assert!(!rihvr(&["--config", &unknown, "config"]).status.success());

    let missing = format!("{out}/nothing/*.f32");
    assert!(!rihvr(&["--output", out, "reconstruct", "--input", &missing]).status.success());

    let corrupt = dir.path().join("bad.png");
    fs::write(&corrupt, b"garbage").unwrap();
    let r = rihvr(&["--output", out, "reconstruct", "--input", corrupt.to_str().unwrap()]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("bad.png"));

    assert!(!rihvr(&["--output", out, "track", "--particles", "/nonexistent.tsv"]).status.success());
    assert!(!rihvr(&["--config", "/nonexistent.toml", "config"]).status.success());
    assert!(!rihvr(&["reconstruct", "--method", "magic"]).status.success());
}

#[test]
fn config_command_prints_parseable_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(rihvr(&["--seed", "9", "config"]));
    assert!(text.contains("seed = 9"));
    let cfg = write_config(dir.path(), &text);
    assert_eq!(ok(rihvr(&["--config", &cfg, "config"])), text);
}
