use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sce-bench")).args(args).output().expect("spawn sce-bench")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn list_presets_names_every_preset() {
    let out = bench(&["list-presets"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for (name, _) in sce_core::harness::config::PRESETS {
        assert!(text.contains(name), "missing {name}");
    }
}

#[test]
fn short_run_then_compare_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("res");
    let out_str = out_dir.to_string_lossy().into_owned();
    let out = bench(&["run", "--preset", "ring-0.99", "--seeds", "1,2", "--budget", "2000", "--out", &out_str]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("config.txt").exists());

    let cmp = bench(&["compare", "--out", &out_str]);
    assert!(cmp.status.success());
    assert!(String::from_utf8_lossy(&cmp.stdout).contains("sce"));

    let plot = bench(&["plot-data", "--out", &out_str]);
    assert!(plot.status.success());
    let n = std::fs::read_dir(out_dir.join("plot")).unwrap().count();
    assert!(n > 0);
}

#[test]
fn unknown_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "preset = ring-0.99\nno_such_key = 3\n");
    let out = bench(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_value_is_a_validation_error() {
    let out = bench(&["run", "--preset", "ring-0.99", "--seeds", "5..1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = bench(&["run", "--preset", "no-such-preset"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_result_dir_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing").to_string_lossy().into_owned();
    assert_eq!(bench(&["compare", "--out", &missing]).status.code(), Some(2));
}

#[test]
fn unexpected_divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("res").to_string_lossy().into_owned();
    let cfg = write_config(
        dir.path(),
        &format!("preset = baird-perfect-0.9\nalgorithms = td0\nexpect_divergence =\nseeds = 1\nout = {out_dir}\n"),
    );
    let out = bench(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = write_config(
        dir.path(),
        &format!("preset = baird-perfect-0.9\nalgorithms = td0\nseeds = 1\nout = {out_dir}\n"),
    );
    assert_eq!(bench(&["run", "--config", &cfg]).status.code(), Some(0));
}
