use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_doublon-ed");

fn config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn spectrum_config(experiment: &str) -> String {
    format!(
        r#"{{"schema_version":1,"experiment":"{experiment}",
           "lattice":{{"Lx":4,"Ly":4,"bc_x":"periodic","bc_y":"periodic"}},
           "params":{{"J":1,"t":2,"P":4,"U":8,"N":2}},
           "solver":{{"mode":"dense"}}}}"#
    )
}

fn doublon_ed(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "off").output().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_writes_bundle_and_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.json", &spectrum_config("spectrum"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = doublon_ed(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", "2"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ra = std::fs::read(a.join("result.json")).unwrap();
    assert_eq!(ra, std::fs::read(b.join("result.json")).unwrap());
    assert!(a.join("timings.json").exists());

    let v = read_json(&a.join("result.json"));
    assert_eq!(v["schema_version"], 1);
    let block = &v["spectra"][0];
    let eigenvalues = block["eigenvalues"].as_array().unwrap();
    assert_eq!(eigenvalues.len(), 136);
    assert!(eigenvalues.iter().all(|e| e.as_array().unwrap().len() == 2));
    let tol = block["tolerance"].as_f64().unwrap();
    assert!(block["residuals"].as_array().unwrap().iter().all(|r| r.as_f64().unwrap() <= tol));
    assert_eq!(block["states"].as_array().unwrap().len(), 136);
}

#[test]
fn densities_write_csv_grids_with_header() {
    let tmp = tempfile::tempdir().unwrap();
    let body = spectrum_config("densities").replace(r#""solver""#, r#""options":{"grids":"all"},"solver""#);
    let cfg = config(tmp.path(), "c.json", &body);
    let out = tmp.path().join("o");
    let o = doublon_ed(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&out.join("result.json"));
    let grids = v["grids"].as_array().unwrap();
    assert_eq!(grids.len(), 2 * 136);
    let file = grids[0]["file"].as_str().unwrap();
    let text = std::fs::read_to_string(out.join(file)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,y,value"));
    let total: f64 = lines.map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    let expected = if grids[0]["kind"] == "n_density" { 2.0 } else { total };
    assert!((total - expected).abs() < 1e-9);
}

#[test]
fn dump_matrix_writes_coordinate_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.json", &spectrum_config("spectrum"));
    let out = tmp.path().join("o");
    let o = doublon_ed(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--dump-matrix"]);
    assert!(o.status.success());
    let v = read_json(&out.join("result.json"));
    assert_eq!(v["matrix"]["dim"], 136);
    let text = std::fs::read_to_string(out.join("hamiltonian.coo")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len() as u64, v["matrix"]["nnz"].as_u64().unwrap());
    for line in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(f.len(), 4);
        assert!(f[0].parse::<usize>().unwrap() < 136 && f[1].parse::<usize>().unwrap() < 136);
        f[2].parse::<f64>().unwrap();
        f[3].parse::<f64>().unwrap();
    }
}

#[test]
fn sweep_orders_points_and_accepts_empty_list() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.json", &spectrum_config("spectrum"));
    let out = tmp.path().join("s");
    let o = doublon_ed(&["sweep", cfg.to_str().unwrap(), "--axis", "V", "--values", "0,0.125", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let index = read_json(&out.join("sweep.json"));
    let points = index["points"].as_array().unwrap();
    assert_eq!(points.len(), 2);
    assert_eq!(points[1]["value"], 0.125);
    let second = read_json(&out.join(points[1]["dir"].as_str().unwrap()).join("result.json"));
    assert_eq!(second["config"]["params"]["V"], 0.125);

    let empty = tmp.path().join("e");
    let o = doublon_ed(&["sweep", cfg.to_str().unwrap(), "--axis", "P", "--values", "", "--out", empty.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(read_json(&empty.join("sweep.json"))["points"].as_array().unwrap().is_empty());
}

#[test]
fn config_errors_exit_two_with_error_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let cfg = config(tmp.path(), "bad.json", &spectrum_config("spectrum").replace(r#""N":2"#, r#""N":2,"X":1"#));
    let o = doublon_ed(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "config");
    assert_eq!(read_json(&out.join("error.json"))["exit_code"], 2);

    let odd = config(tmp.path(), "odd.json", &spectrum_config("spectrum").replace(r#""Lx":4"#, r#""Lx":5"#));
    assert_eq!(doublon_ed(&["run", odd.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(2));

    let axis = config(tmp.path(), "c.json", &spectrum_config("spectrum"));
    let o = doublon_ed(&["sweep", axis.to_str().unwrap(), "--axis", "N", "--values", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn capacity_errors_exit_four() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.json", &spectrum_config("spectrum"));
    let out = tmp.path().join("o");
    let o = Command::new(BIN)
        .args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("DOUBLON_ED_DENSE_CAP", "50")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(read_json(&out.join("error.json"))["error"], "capacity");
}

#[test]
fn solver_errors_exit_three() {
    // With J = t = 0 every scattering state sits exactly at E = 0.
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"{"schema_version":1,"experiment":"winding",
        "lattice":{"Lx":3,"Ly":2,"bc_x":"open","bc_y":"periodic"},
        "params":{"J":0,"t":0,"P":4,"U":8,"N":2},
        "options":{"e_ref":[[0,0]],"check_refinement":false}}"#;
    let cfg = config(tmp.path(), "c.json", body);
    let out = tmp.path().join("o");
    let o = doublon_ed(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&out.join("error.json"))["error"], "near_spectrum");
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let body = spectrum_config("spectrum").replace(r#""solver""#, r#""disorder":{"W":1,"seed":1},"solver""#);
    let cfg = config(tmp.path(), "c.json", &body);
    let out = tmp.path().join("o");
    let o = doublon_ed(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "42"]);
    assert!(o.status.success());
    let v = read_json(&out.join("result.json"));
    assert_eq!(v["config"]["disorder"]["seed"], 42);
    assert_eq!(v["spectra"][0]["disorder_seed"], 42);
}
