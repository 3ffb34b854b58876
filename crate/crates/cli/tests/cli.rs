use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn desk_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/configs/desk_default.json")
}

fn ris_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ris-lab")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path, n: usize) -> PathBuf {
    let text = std::fs::read_to_string(desk_config()).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    let side = (n as f64).sqrt() as usize;
    json["N_x"] = side.into();
    json["N_y"] = side.into();
    let path = dir.join(format!("n{n}.json"));
    std::fs::write(&path, json.to_string()).unwrap();
    path
}

fn gen(config: &Path, q: &str, scheme: &str, out: &Path) -> Output {
    ris_lab(&[
        "gen-codebook", "--config", path_str(config), "--q", q, "--scheme", scheme, "--seed", "3", "--out",
        path_str(out),
    ])
}

#[test]
fn gen_codebook_writes_entries_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 16);
    let out = dir.path().join("env.json");
    let o = gen(&cfg, "4", "env", &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cb = ris_lab::codebook::load_codebook(&out, None).unwrap();
    assert_eq!(cb.len(), 4);
    assert!(cb.entries.iter().all(|c| c.phase_indices.len() == 16 && c.power_allocation.len() == 2));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("env.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 1);
    assert!(manifest["config"].is_object());
}

#[test]
fn zero_codewords_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gen(&desk_config(), "0", "env", &dir.path().join("x.json"));
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("q"));
}

#[test]
fn codebook_for_another_surface_is_a_dimension_error() {
    let dir = tempfile::tempdir().unwrap();
    let cb = dir.path().join("n16.json");
    assert_eq!(code(&gen(&small_config(dir.path(), 16), "2", "random", &cb)), 0);
    let o = ris_lab(&[
        "simulate", "--config", path_str(&small_config(dir.path(), 36)), "--codebook", path_str(&cb), "--sweep",
        "P_d", "--values", "40", "--trials", "5", "--noise", "off", "--seed", "1", "--out",
        path_str(&dir.path().join("out.csv")),
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn q_sweep_writes_one_row_per_value_and_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("q.csv");
    let o = ris_lab(&[
        "simulate", "--config", path_str(&small_config(dir.path(), 16)), "--sweep", "Q", "--values", "1,16,64",
        "--trials", "10", "--noise", "on", "--seed", "2", "--out", path_str(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = ris_lab::experiments::read_csv(&out).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(dir.path().join("q.csv.manifest.json").exists());
}

#[test]
fn malformed_grid_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ris_lab(&[
        "verify", "--prop", "1", "--config", path_str(&desk_config()), "--grid", "N=sixty", "--trials", "10",
        "--seed", "1", "--out", path_str(&dir.path().join("v.csv")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn prop2_without_estimation_error_matches_prop1_theory() {
    let dir = tempfile::tempdir().unwrap();
    let run = |prop: &str, grid: &str, name: &str| {
        let out = dir.path().join(name);
        let o = ris_lab(&[
            "verify", "--prop", prop, "--config", path_str(&desk_config()), "--grid", grid, "--trials", "50",
            "--seed", "4", "--out", path_str(&out),
        ]);
        assert!(matches!(code(&o), 0 | 5), "{}", String::from_utf8_lossy(&o.stderr));
        ris_lab::experiments::read_csv(&out).unwrap()
    };
    let one = run("1", "N=16;F_r_db=3;Q=1,4", "p1.csv");
    let two = run("2", "N=16;F_r_db=3;Q=1,4;sigma_q2=0", "p2.csv");
    assert_eq!(one.len(), two.len());
    for (a, b) in one.iter().zip(&two) {
        let (ta, tb) = (a.theory_power.unwrap(), b.theory_power.unwrap());
        assert!((ta - tb).abs() <= 1e-12 * ta);
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 16);
    let mut outputs = Vec::new();
    for threads in ["1", "8"] {
        let out = dir.path().join(format!("t{threads}.csv"));
        let o = ris_lab(&[
            "--threads", threads, "simulate", "--config", path_str(&cfg), "--sweep", "N", "--values", "4,16",
            "--trials", "20", "--noise", "on", "--schemes", "environment-aware,optimal-config", "--seed", "9",
            "--out", path_str(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn zero_threads_is_rejected() {
    let o = ris_lab(&["--threads", "0", "verify", "--prop", "1", "--config", "x", "--grid", "N=4", "--trials", "1",
        "--seed", "1", "--out", "y"]);
    assert_eq!(code(&o), 2);
}
