use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn angiofem(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_angiofem"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn preset_listing_and_parameter_table() {
    let tmp = tempfile::tempdir().unwrap();
    let o = angiofem(&["preset", "--list"], tmp.path());
    assert!(o.status.success());
    for name in ["set1", "set2", "set1a", "set1b"] {
        assert!(stdout(&o).lines().any(|l| l.starts_with(name)), "{}", stdout(&o));
    }
    let o = angiofem(&["preset", "set1b"], tmp.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("tau_br"));
    let o = angiofem(&["params"], tmp.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("kappa"));
}

#[test]
fn invalid_input_exits_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "final_time = \"2 d\"\n").unwrap();
    let o = angiofem(&["run", "--config", "bad.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mesh"), "{}", stderr(&o));

    let o = angiofem(&["preset", "set9"], tmp.path());
    assert_eq!(o.status.code(), Some(2));

    let o = angiofem(&["run", "--config", "missing.toml"], tmp.path());
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn run_checkpoint_restart_and_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for f in ["desk.toml", "testface_small.net"] {
        std::fs::copy(scenarios().join(f), dir.join(f)).unwrap();
    }
    let o = angiofem(&["run", "--config", "desk.toml", "--out", "full"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["series.csv", "events.csv", "config.toml"] {
        assert!(dir.join("full").join(f).is_file(), "{f}");
    }
    let series = std::fs::read_to_string(dir.join("full/series.csv")).unwrap();
    // header plus the initial record plus 20 steps of 6 h
    assert_eq!(series.lines().count(), 22);
    assert!(std::fs::read_dir(dir.join("full/vtk")).unwrap().count() > 0);

    let o = angiofem(&["run", "--config", "desk.toml", "--out", "part", "--checkpoint-every", "8"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.join("part/state_00008.bin").is_file());
    let o2 = angiofem(&["run", "--config", "desk.toml", "--out", "resumed", "--restart", "part/state_00008.bin"], dir);
    assert!(o2.status.success(), "{}", stderr(&o2));
    let last = |p: &str| std::fs::read_to_string(dir.join(p)).unwrap().lines().last().unwrap().to_string();
    assert_eq!(last("resumed/series.csv"), last("full/series.csv"));

    let o = angiofem(
        &["postprocess", "--series", "full/series.csv", "--series", "part/series.csv", "--plot", "mean_phi", "--out", "phi.svg"],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read_to_string(dir.join("phi.svg")).unwrap().starts_with("<svg"));
    let o = angiofem(&["postprocess", "--series", "full/series.csv", "--plot", "nope", "--out", "x.svg"], dir);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mean_phi"), "{}", stderr(&o));
}

#[test]
fn mesh_and_small_screening_campaign() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let o = angiofem(&["mesh", "--cube", "3", "--out", "cube.mesh"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.join("cube.mesh").is_file());

    std::fs::copy(scenarios().join("testface_small.net"), dir.join("testface_small.net")).unwrap();
    std::fs::write(
        dir.join("tiny.toml"),
        "mesh = { cube = 4, edge = \"1 mm\" }\nnetwork = \"testface_small.net\"\nfinal_time = \"1 d\"\n\
         time_step = \"6 h\"\nseed = 5\npreset = \"set1\"\n",
    )
    .unwrap();
    std::fs::write(dir.join("space.toml"), "levels = 4\n[[input]]\nname = \"gamma\"\n[[input]]\nname = \"tau\"\n").unwrap();
    let o = angiofem(
        &["morris", "--config", "tiny.toml", "--space", "space.toml", "--R", "6", "--r", "2", "--out", "sa", "--workers", "1"],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.join("sa/morris_p_phi.csv")).unwrap();
    assert!(csv.starts_with("input,time,mu_star,sigma"));
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.join("sa/trajectories.csv").is_file());

    let o = angiofem(&["morris", "--config", "tiny.toml", "--space", "space.toml", "--R", "2", "--r", "3", "--out", "sa2"], dir);
    assert_eq!(o.status.code(), Some(2));
}
