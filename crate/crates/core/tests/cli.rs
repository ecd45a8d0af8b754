use std::path::Path;
use std::process::Command;

fn covmap(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_covmap"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_simulate_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), r#"{"sim":{"n_iter":100}}"#).unwrap();
    assert!(covmap(d, &["--seed", "2", "gen-city", "--out", "city"]).status.success());
    for f in ["buildings.json", "basestations.csv", "bounds.json", "run_manifest.json"] {
        assert!(d.join("city").join(f).exists(), "{f}");
    }
    let out = covmap(
        d,
        &["--seed", "2", "--config", "cfg.json", "simulate", "--city", "city", "--region", "0,0,100,60", "--spacing", "20", "--out", "g.json"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&d.join("g.json.manifest.json"));
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["seed"], 2);
    assert_eq!(m["config"]["sim"]["n_iter"], 100);
    assert_eq!(m["outputs"][0]["path"], "g.json");

    assert!(covmap(d, &["export", "--grid", "g.json", "--format", "csv", "--out", "g.csv"]).status.success());
    let csv = std::fs::read_to_string(d.join("g.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("x,y,p"));
    assert_eq!(csv.lines().count(), 1 + 6 * 4);

    assert!(covmap(d, &["export", "--grid", "g.json", "--format", "pgm", "--out", "g.pgm"]).status.success());
    let pgm = std::fs::read(d.join("g.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n6 4\n255\n"));
    assert_eq!(pgm.len(), b"P5\n6 4\n255\n".len() + 24);
}

#[test]
fn missing_model_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(covmap(d, &["gen-city", "--out", "city"]).status.success());
    let out = covmap(d, &["bench", "--city", "city", "--methods", "ml", "--out", "b.json"]);
    assert!(!out.status.success());
    assert!(!d.join("b.json").exists());
}
