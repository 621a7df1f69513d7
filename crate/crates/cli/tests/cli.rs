use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rewag(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rewag"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CONFIG: &str = "\
seed = 3
[grid]
cols = 16
rows = 16
[filter]
count = 400
init_offset_m = 60.0
init_sigma_m = 150.0
[trajectory]
steps = 12
margin_m = 120.0
";

#[test]
fn full_pipeline_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("base.toml"), CONFIG).unwrap();

    let o = rewag(&["gen-world", "-c", "base.toml", "--out", "world.rwld"], d);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(&fs::read(d.join("world.rwld")).unwrap()[..4], b"RWLD");

    let o = rewag(&["gen-traj", "-c", "base.toml", "--out", "path.csv"], d);
    assert!(o.status.success(), "{o:?}");
    let path = fs::read_to_string(d.join("path.csv")).unwrap();
    assert!(path.starts_with("x,y,psi,dx,dy,dpsi\n"));
    assert_eq!(path.lines().count(), 13);

    let o = rewag(&["precompute", "-c", "base.toml", "--out", "store.rwss"], d);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(&fs::read(d.join("store.rwss")).unwrap()[..4], b"RWSS");

    let files = format!(
        "{CONFIG}\n[world]\nfile = \"world.rwld\"\n[embed]\nstore = \"store.rwss\"\n[similarity]\nbackend = \"safa\"\n"
    )
    .replace("[trajectory]\nsteps = 12\nmargin_m = 120.0\n", "[trajectory]\nfile = \"path.csv\"\n");
    fs::write(d.join("files.toml"), files).unwrap();
    let o = rewag(
        &[
            "run",
            "-c",
            "files.toml",
            "--trace",
            "trace.csv",
            "--summary",
            "summary.txt",
        ],
        d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = text(&o);
    assert!(stdout.contains("final_error_m:"));
    assert!(stdout.contains("convergence_step:"));
    let trace = fs::read_to_string(d.join("trace.csv")).unwrap();
    assert!(trace.starts_with("step,err_m,dispersion_m,ess,resampled,ms\n"));
    assert_eq!(trace.lines().count(), 13);
    assert_eq!(fs::read_to_string(d.join("summary.txt")).unwrap(), stdout);

    let o = rewag(&["report", "trace.csv"], d);
    assert!(o.status.success());
    assert_eq!(text(&o), stdout);
}

#[test]
fn flags_and_overrides_reach_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("base.toml"), CONFIG).unwrap();
    let a = rewag(
        &["run", "-c", "base.toml", "--trace", "a.csv", "--steps", "5"],
        d,
    );
    let b = rewag(
        &[
            "run",
            "-c",
            "base.toml",
            "--trace",
            "b.csv",
            "--set",
            "trajectory.steps=5",
            "--threads",
            "2",
        ],
        d,
    );
    assert!(a.status.success() && b.status.success());
    let a = fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(a.lines().count(), 6);
    assert_eq!(a, fs::read_to_string(d.join("b.csv")).unwrap());

    let c = rewag(
        &[
            "run",
            "-c",
            "base.toml",
            "--trace",
            "c.csv",
            "--steps",
            "5",
            "--seed",
            "4",
        ],
        d,
    );
    assert!(c.status.success());
    assert_ne!(a, fs::read_to_string(d.join("c.csv")).unwrap());
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("typo.toml"), "seed = 1\n[grdi]\ncols = 4\n").unwrap();
    let o = rewag(&["run", "-c", "typo.toml"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grdi"));

    let o = rewag(
        &["gen-world", "--set", "grid.spacing_m=-5", "--out", "w.rwld"],
        d,
    );
    assert_eq!(o.status.code(), Some(2));

    let o = rewag(&["run", "--set", "world.file=\"missing.rwld\""], d);
    assert_eq!(o.status.code(), Some(2));

    let o = rewag(&["run", "--pose-mode", "sideways"], d);
    assert_eq!(o.status.code(), Some(2));

    let o = rewag(&["frobnicate"], d);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = rewag(&["report", "absent.csv"], d);
    assert_eq!(o.status.code(), Some(1));

    fs::write(d.join("store.rwss"), b"RWSS not really a store").unwrap();
    fs::write(
        d.join("bad.toml"),
        format!("{CONFIG}[embed]\nstore = \"store.rwss\"\n[similarity]\nbackend = \"safa\"\n"),
    )
    .unwrap();
    let o = rewag(&["run", "-c", "bad.toml"], d);
    assert_eq!(
        o.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("corrupt"));
}

#[test]
fn report_prints_dash_for_a_run_that_never_converged() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("t.csv"),
        "step,err_m,dispersion_m,ess,resampled,ms\n0,900,800,10,0,0\n1,700,650,12,1,0\n",
    )
    .unwrap();
    let o = rewag(&["report", "t.csv"], d);
    assert!(o.status.success());
    let s = text(&o);
    assert!(s.contains("convergence_step: -"), "{s}");
    assert!(s.contains("final_error_m: 700.000"));
    assert!(s.contains("average_error_m: 800.000"));
}
