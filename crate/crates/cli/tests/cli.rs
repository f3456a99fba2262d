use std::path::Path;
use std::process::{Command, Output};

fn hqv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hqv")).args(args).output().expect("run hqv")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(hqv(&["qv", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(hqv(&[]).status.code(), Some(1));
    assert_eq!(hqv(&["simulate", "--H", "0.4", "--out", "/dev/null"]).status.code(), Some(1));
    assert_eq!(hqv(&["qv", "--input", "/nonexistent/field.bin"]).status.code(), Some(1));
    assert_eq!(hqv(&["--help"]).status.code(), Some(0));
}

#[test]
fn simulate_then_qv_and_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("field.bin");
    let p = path.to_str().unwrap();
    let o = hqv(&["simulate", "--q", "2", "--H", "0.7,0.6", "--N", "64", "--oversample", "2", "--seed", "9", "--out", p]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 8 * 129 * 129);
    let header = std::fs::read_to_string(dir.path().join("field.bin.hdr")).unwrap();
    assert!(header.contains("shape = 129,129") && header.contains("seed = 9") && header.contains("generator = "));
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("field.bin.json")).unwrap()).unwrap();
    assert_eq!(sidecar["q"], 2);

    let o = hqv(&["qv", "--input", p, "--N", "16", "--N", "32,8"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "N_1,N_2,V_N,T_N,mean_sq_increment,H_hat_1,H_hat_2");
    assert!(lines[1].starts_with("16,16,"));
    assert!(lines[2].starts_with("32,8,"));

    let o = hqv(&["estimate-h", "--input", p, "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let est = v["hurst_estimate"].as_array().unwrap();
    assert_eq!(est.len(), 2);
    assert!(hqv(&["estimate-h", "--input", p, "--N", "16", "--N", "32"]).status.code() == Some(1));
}

#[test]
fn oracle_variance_csv() {
    let o = hqv(&["oracle-variance", "--q", "2", "--H", "0.7", "--N-list", "16,32"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "N_1,F2_variance,normalized_ratio,diagonal_ratio,bound_r0,scaled_bound_r0,predicted_var_V_N,truncated_at"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "16");
    let ratio: f64 = row[2].parse().unwrap();
    assert!(ratio > 0.8 && ratio < 1.0);
}

fn run_to(args: &[&str], out: &Path) -> Vec<u8> {
    let mut full: Vec<&str> = args.to_vec();
    full.extend(["--out", out.to_str().unwrap()]);
    let o = hqv(&full);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::read(out).unwrap()
}

#[test]
fn campaigns_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["mc-limit", "--q", "2", "--H", "0.7", "--N", "16", "--replicas", "40", "--oversample", "4", "--seed", "3", "--format", "json"];
    let a = run_to(&args, &dir.path().join("a.json"));
    let mut seq = args.to_vec();
    seq.push("--sequential");
    let b = run_to(&seq, &dir.path().join("b.json"));
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["kind"], "mc-limit");
    assert!(v["generator"].as_str().unwrap().contains("chacha8"));
    assert!(v["records"].as_array().unwrap().len() == 1);
    assert!(v.get("wall_clock_seconds").is_some());

    let q1 = ["q1-regression", "--H", "0.6", "--N", "256", "--replicas", "40", "--seed", "1"];
    let a = run_to(&q1, &dir.path().join("q1a.csv"));
    let b = run_to(&q1, &dir.path().join("q1b.csv"));
    assert_eq!(a, b);
    assert!(String::from_utf8(a).unwrap().contains(",gaussian,"));
}

#[test]
fn selftest_passes_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_to(&["selftest", "--seed", "4"], &dir.path().join("a.csv"));
    let b = run_to(&["selftest", "--seed", "4"], &dir.path().join("b.csv"));
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("gate,value,lower,upper,result\n"));
    assert!(!text.contains("FAIL"));
}
