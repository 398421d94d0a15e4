use std::path::PathBuf;
use std::process::{Command, Output};

fn slrep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slrep")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn temp_config(name: &str, body: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("slrep-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn catalogue_has_every_series() {
    let out = slrep(&["catalogue"]);
    assert!(out.status.success());
    let entries = json(&out);
    let entries = entries.as_array().unwrap();
    assert_eq!(entries.len(), 21);
    assert!(entries.iter().any(|e| e["series_id"] == "sl4c-stein" && e["space"] == "det-kernel"));
}

#[test]
fn verify_exit_codes() {
    let pass = temp_config(
        "pass",
        r#"{"seed": 1, "suites": [{"suite_name": "c", "check": "compose", "series": "sl2c-principal", "trials": 2}]}"#,
    );
    let out = slrep(&["verify", "--config", pass.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    assert_eq!(report["reports"][0]["status"], "Pass");

    let fail = temp_config(
        "fail",
        r#"{"seed": 1, "suites": [{"suite_name": "c", "check": "compose", "series": "sl2c-principal", "trials": 2, "tolerance": 0.0}]}"#,
    );
    assert_eq!(slrep(&["verify", "--config", fail.to_str().unwrap()]).status.code(), Some(1));

    let bad = temp_config("bad", r#"{"seed": 1, "suites": [{"suite_name": "c", "check": "compose", "series": "sl9-nothing"}]}"#);
    assert_eq!(slrep(&["verify", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn verify_is_deterministic_and_seed_sensitive() {
    let cfg = temp_config(
        "det",
        r#"{"seed": 5, "suites": [{"suite_name": "c", "check": "compose", "series": "sl3r-principal", "trials": 2}]}"#,
    );
    let strip = |v: serde_json::Value| {
        let mut v = v;
        for r in v["reports"].as_array_mut().unwrap() {
            r["wall_time_ms"] = serde_json::Value::Null;
        }
        v
    };
    let a = strip(json(&slrep(&["verify", "--config", cfg.to_str().unwrap()])));
    let b = strip(json(&slrep(&["verify", "--config", cfg.to_str().unwrap()])));
    let c = strip(json(&slrep(&["verify", "--config", cfg.to_str().unwrap(), "--seed", "6"])));
    assert_eq!(a, b);
    assert_ne!(a["reports"][0]["seed"], c["reports"][0]["seed"]);
}

#[test]
fn decompose_inversion_on_sl2c() {
    let out = slrep(&["decompose", "--group", "sl2c", "--pattern", "1,1", "--matrix", "0,1;-1,0", "--point", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let z: num_complex::Complex64 = v["z_out"][0].as_str().unwrap().parse().unwrap();
    assert!((z + 1.0).norm() < 1e-15);
}

#[test]
fn decompose_routes_agree() {
    let args = ["decompose", "--group", "sl3r", "--pattern", "2,1", "--matrix", "1,1,1;0,1,1;1,0,1", "--point", "0.3,-0.7"];
    let closed = json(&slrep(&args));
    let mut with_oracle = args.to_vec();
    with_oracle.push("--oracle");
    let oracle = json(&slrep(&with_oracle));
    for i in 0..2 {
        let a: num_complex::Complex64 = closed["z_out"][i].as_str().unwrap().parse().unwrap();
        let b: num_complex::Complex64 = oracle["z_out"][i].as_str().unwrap().parse().unwrap();
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn orbit_of_a_generic_tuple_has_six_members() {
    let out = slrep(&["orbit", "--params", "1,2,0.5,1.5"]);
    assert!(out.status.success());
    assert_eq!(json(&out).as_array().unwrap().len(), 6);
    let fixed = json(&slrep(&["orbit", "--params", "0,0,0,0"]));
    assert_eq!(fixed.as_array().unwrap().len(), 1);
}
