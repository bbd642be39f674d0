use std::path::PathBuf;
use std::process::{Command, Output};

fn qvar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qvar")).args(args).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("qvar_cli_{}_{name}", std::process::id()));
    std::fs::remove_file(&p).ok();
    p
}

#[test]
fn field_info_prints_one_json_line() {
    let out = qvar(&["field-info", "--D", "21"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    assert_eq!(v["parameters"]["p1"], 7);
    assert!((v["extra"]["log_eps"].as_f64().unwrap() - 1.566799236972411).abs() < 1e-14);
}

#[test]
fn bad_field_is_a_usage_error() {
    let out = qvar(&["field-info", "--D", "65"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("norm -1"));
}

#[test]
fn csv_output_appends_with_a_single_header() {
    let path = scratch("append.csv");
    let p = path.to_str().unwrap();
    for beta in ["3,-2", "-5,1"] {
        let out = qvar(&["poisson", "--D", "21", "--K", "80", "--beta", beta, "--format", "csv", "--out", p]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::remove_file(&path).ok();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("name,passed"));
    assert!(lines[1].starts_with("poisson,true") && lines[2].starts_with("poisson,true"));
}

#[test]
fn tolerance_override_decides_the_exit_code() {
    let args = ["poisson", "--D", "21", "--K", "80", "--beta", "3,-2"];
    assert!(qvar(&args).status.success());
    let mut strict = args.to_vec();
    strict.extend(["--tol", "0"]);
    assert_eq!(qvar(&strict).status.code(), Some(1));
}

#[test]
fn command_line_overrides_config() {
    let cfg = scratch("config.json");
    std::fs::write(&cfg, r#"{"D": 21, "K": 500, "r": 2, "x": 20, "format": "json"}"#).unwrap();
    let c = cfg.to_str().unwrap();
    let out = qvar(&["--config", c, "moment-bound", "--x", "10"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["parameters"]["x"], 10);
    assert_eq!(v["parameters"]["r"], 2);
    std::fs::write(&cfg, r#"{"D": 21, "bogus": 1}"#).unwrap();
    let out = qvar(&["--config", c, "field-info"]);
    std::fs::remove_file(&cfg).ok();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn hypothesis_and_large_window_guards() {
    let out = qvar(&["moment-bound", "--D", "21", "--K", "500", "--x", "2", "--enforce"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hypothesis violated"));
    let out = qvar(&["variance", "--D", "21", "--K", "1000"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--allow-large-k"));
}

#[test]
fn lambda_table_writes_csv() {
    let path = scratch("lambda.csv");
    let out = qvar(&["lambda-table", "--D", "21", "--kmax", "3", "--nmax", "50", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    assert_eq!(rdr.headers().unwrap().len(), 5);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    std::fs::remove_file(&path).ok();
    assert_eq!(rows.len(), 50);
    // lambda_0(n) counts ideals of norm n; 5 splits in Q(sqrt 21)
    assert_eq!(rows[4][1].parse::<f64>().unwrap(), 2.0);
}

#[test]
fn thread_count_does_not_change_results() {
    let run = |t: &str| {
        let out = qvar(&["nonsplit", "--D", "21", "--a", "3", "--b", "3", "--c", "-1", "--Ymax", "4e4", "--threads", t]);
        assert!(out.status.success());
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        v["computed"].as_f64().unwrap()
    };
    assert_eq!(run("1").to_bits(), run("2").to_bits());
}
