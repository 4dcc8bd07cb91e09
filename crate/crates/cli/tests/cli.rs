use std::path::Path;
use std::process::Command;

fn stica(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_stica")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = stica(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

const CONFIG: &str = r#"
[simulate]
subjects = 1
t = 60
noise_sd = 2.0
smooth_fwhm = 2.0
pool_size = 6
boundary_rings = 1
[simulate.population]
dims = { rows = 8, cols = 9 }
var_scale = 0.5
peaks = [
  { center = [2, 2], amplitude = 6.0, fwhm = 5.0 },
  { center = [5, 6], amplitude = 6.0, fwhm = 6.0 },
]
"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn subcommands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.toml"), CONFIG).unwrap();
    ok(&["simulate", "--out", s(&d.join("sim")), "--config", s(&d.join("cfg.toml")), "--seed", "4"]);
    ok(&["template", "--out", s(&d.join("tmpl")), "--from-sim", s(&d.join("sim")), "--subjects", "40"]);
    let y = d.join("sim/subject_1/Y.csv");
    ok(&["preprocess", "--data", s(&y), "--template", s(&d.join("tmpl")), "--out", s(&d.join("pre")), "--nuisance-iters", "0"]);
    for m in ["stica", "tica"] {
        let fit = d.join(m);
        ok(&[
            "fit", "--method", m, "--pre", s(&d.join("pre")), "--template", s(&d.join("tmpl")),
            "--mesh", s(&d.join("sim/mesh.txt")), "--out", s(&fit), "--kappa", "0.5",
        ]);
        assert!(fit.join("ic_2.csv").exists());
        ok(&[
            "excursions", "--fit", s(&fit), "--method", m, "--out", s(&d.join(format!("{m}_masks"))),
            "--samples", "2000", "--deviations", "--truth", s(&d.join("sim/subject_1")),
        ]);
        for f in ["mask_1.csv", "mask_2.csv", "dev_pos_1.csv", "dev_neg_2.csv"] {
            assert!(d.join(format!("{m}_masks")).join(f).exists(), "{m} {f}");
        }
    }
}

#[test]
fn fit_without_mesh_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = stica(&["fit", "--pre", s(dir.path()), "--template", s(dir.path()), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn pipeline_with_no_stages_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&["pipeline", "--out", s(&run), "--set", "stages=[]", "--seed", "7"]);
    let manifest = std::fs::read_to_string(run.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 7"));
}

#[test]
fn unknown_override_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = stica(&["pipeline", "--out", s(&dir.path().join("r")), "--set", "fit.tolerance=1"]);
    assert!(!out.status.success());
}
