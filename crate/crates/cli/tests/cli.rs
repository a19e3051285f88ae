use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const OK: &str = r#"
grid.nx = 16
physics.T = 0.2
physics.a = 0.5
friction.gamma = 0.2
initial.h = "1 + 0.2*sin(2*pi*x1)*cos(2*pi*x2)"
initial.u1 = "0.3 + 0.1*sin(2*pi*x2)"
initial.u2 = "0.1*cos(2*pi*x1)"
output.count = 11
workbench.nodes = 17
workbench.patches = 2
diagnostics.coarse = 4
diagnostics.levels = [4, 8]
"#;

fn shlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shlab"))
        .args(args)
        .current_dir(dir)
        .env_remove("SHLAB_THREADS")
        .output()
        .unwrap()
}

fn setup(text: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ok.scn"), text).unwrap();
    dir
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn simulate_writes_ledger_and_manifest() {
    let dir = setup(OK);
    let out = shlab(&["simulate", "ok.scn", "--out", "d"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let d = dir.path().join("d");
    let ledger = fs::read_to_string(d.join("ledger.csv")).unwrap();
    assert!(ledger.starts_with("t,mass,kinetic"));
    assert_eq!(ledger.lines().count(), 12);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
    for f in manifest["outputs"].as_array().unwrap() {
        assert!(d.join(f.as_str().unwrap()).exists(), "{f}");
    }
    assert_eq!(manifest["scenario_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(fs::read_to_string(d.join("scenario.toml")).unwrap(), OK);
    assert!(fs::read_to_string(d.join("summary.txt"))
        .unwrap()
        .contains("e2 residual"));
}

#[test]
fn workbench_gap_has_initial_plus_steps_rows() {
    let dir = setup(OK);
    let out = shlab(
        &["workbench", "ok.scn", "--steps", "3", "--out", "w"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let gap = fs::read_to_string(dir.path().join("w/gap.csv")).unwrap();
    assert_eq!(gap.lines().count(), 1 + 4);
    let cert = fs::read_to_string(dir.path().join("w/certificate.csv")).unwrap();
    assert_eq!(cert.lines().count(), 1 + 17);
    for line in cert.lines().skip(1) {
        let m: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(m > 0.0);
    }
}

#[test]
fn default_output_directory_is_named_after_the_command() {
    let dir = setup(OK);
    let out = shlab(&["workbench", "ok.scn", "--steps", "1"], dir.path());
    assert_eq!(code(&out), 0);
    assert!(dir.path().join("shlab_workbench/gap.csv").exists());
}

#[test]
fn invalid_scenarios_exit_with_validation_code() {
    let dir = setup("friction.gamma = -1\n");
    let out = shlab(&["simulate", "ok.scn"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("friction.gamma"));

    let dir = setup("phyiscs.a = 0.5\n");
    let out = shlab(&["simulate", "ok.scn"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("phyiscs.a"));

    let dir = setup("grid.nx = 8\ninitial.h = \"cos(2*pi*x1)\"\n");
    let out = shlab(&["simulate", "ok.scn"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("h_0 > 0 in Ω"));

    let dir = setup(OK);
    let out = shlab(&["simulate", "ok.scn", "--cfl", "-1"], dir.path());
    assert_eq!(code(&out), 2);
    let out = shlab(&["wsu", "ok.scn", "--eps", "-0.1"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = shlab(&["simulate", "nope.scn"], dir.path());
    assert_eq!(code(&out), 4);
}

#[test]
fn infeasible_energy_level_is_a_numerical_error() {
    let dir = setup(&format!("{OK}workbench.lambda = 0.01\n"));
    let out = shlab(&["workbench", "ok.scn"], dir.path());
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn thread_variable_is_validated() {
    let dir = setup(OK);
    let bad = Command::new(env!("CARGO_BIN_EXE_shlab"))
        .args(["simulate", "ok.scn"])
        .current_dir(dir.path())
        .env("SHLAB_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&bad), 2);
    let good = Command::new(env!("CARGO_BIN_EXE_shlab"))
        .args(["simulate", "ok.scn", "--out", "t"])
        .current_dir(dir.path())
        .env("SHLAB_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&good), 0);
    let manifest = fs::read_to_string(dir.path().join("t/manifest.json")).unwrap();
    assert!(manifest.contains("\"threads\": 2"));
}

#[test]
fn identical_inputs_give_identical_csv_bytes() {
    let dir = setup(OK);
    for out in ["a", "b"] {
        assert_eq!(
            code(&shlab(&["simulate", "ok.scn", "--out", out], dir.path())),
            0
        );
        let o = format!("{out}w");
        assert_eq!(
            code(&shlab(
                &[
                    "workbench",
                    "ok.scn",
                    "--steps",
                    "2",
                    "--seed",
                    "5",
                    "--out",
                    &o
                ],
                dir.path()
            )),
            0
        );
    }
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/ledger.csv"), read("b/ledger.csv"));
    assert_eq!(read("a/h_final.shlab"), read("b/h_final.shlab"));
    assert_eq!(read("aw/gap.csv"), read("bw/gap.csv"));
    assert_eq!(read("aw/certificate.csv"), read("bw/certificate.csv"));
}

#[test]
fn diagnostic_commands_write_their_tables() {
    let dir = setup(OK);
    let cases = [
        ("diagnose", "diagnostics.csv"),
        ("wsu", "relative_energy.csv"),
        ("convergence", "convergence.csv"),
    ];
    for (cmd, file) in cases {
        let out = shlab(&[cmd, "ok.scn", "--out", cmd, "--eps", "0.01"], dir.path());
        assert_eq!(
            code(&out),
            0,
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(dir.path().join(cmd).join(file).exists(), "{cmd}");
        assert!(dir.path().join(cmd).join("summary.txt").exists());
    }
    let conv = fs::read_to_string(dir.path().join("convergence/convergence.csv")).unwrap();
    assert_eq!(conv.lines().count(), 3);
    let wsu = fs::read_to_string(dir.path().join("wsu/summary.txt")).unwrap();
    assert!(wsu.contains("Gronwall rate"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&shlab(&["explode"], dir.path())), 2);
}
