use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn retrial(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retrial")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in\n{text}"))
        .parse()
        .unwrap()
}

#[test]
fn rates_of_the_cellular_fixture() {
    let cfg = fixture("table1.toml");
    let o = retrial(&["rates", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!((value(&text, "lambda1") - 21.2727).abs() < 1e-3);
    assert!((value(&text, "lambda2") - 3.3333).abs() < 1e-3);
    assert!((value(&text, "sigma") - 26.5714).abs() < 1e-3);
    assert!((value(&text, "mu") - 8.1288).abs() < 1e-3);
    assert_eq!(value(&text, "K"), 4088.0);
}

#[test]
fn overloaded_instance_exits_with_code_2() {
    let cfg = fixture("small_m1.toml");
    let o = retrial(&["solve", cfg.to_str().unwrap(), "--set", "g=2"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let o = retrial(&["measures", cfg.to_str().unwrap(), "--set", "lambda_o=40"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_override_exits_with_code_1() {
    let cfg = fixture("small_m1.toml");
    let o = retrial(&["validate", cfg.to_str().unwrap(), "--set", "g=9"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("servers.g"));
    let o = retrial(&["solve", "/nonexistent.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn reruns_are_bit_identical() {
    let cfg = fixture("small_m1.toml");
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let o = retrial(&["solve", cfg.to_str().unwrap(), "--set", "g=6", "-o", path.to_str().unwrap()]);
        assert!(o.status.success());
        std::fs::read(path).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let text = String::from_utf8(a).unwrap();
    assert!(text.lines().any(|l| l == "level,busy,probability"));
    assert!(text.lines().any(|l| l.starts_with("# manifest=")));

    let sim = |name: &str| {
        let path = dir.path().join(name);
        let o = retrial(&[
            "simulate",
            cfg.to_str().unwrap(),
            "--set",
            "g=6",
            "--horizon",
            "2000",
            "--replications",
            "4",
            "--seed",
            "11",
            "-o",
            path.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        std::fs::read(path).unwrap()
    };
    assert_eq!(sim("s1.csv"), sim("s2.csv"));
}

#[test]
fn sweep_reports_each_point() {
    let cfg = fixture("small_m1.toml");
    let o = retrial(&["sweep", cfg.to_str().unwrap(), "--param", "g", "--values", "2,5,7"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "g,L_orb,P_b1,P_b2,L_b,rho");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("2,NaN,"));
    let p_b2 = |row: &str| row.split(',').nth(3).unwrap().parse::<f64>().unwrap();
    assert!(p_b2(rows[2]) < p_b2(rows[3]));
}

#[test]
fn optimizers_report_status() {
    let cfg = fixture("small_m1.toml");
    let o = retrial(&["optimize-g", cfg.to_str().unwrap(), "--p0", "1e-4"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("# status=optimal"));
    assert!(text.contains("# g_star=5"));

    let o = retrial(&["optimize-c", cfg.to_str().unwrap(), "--p1", "1e-6", "--p2", "1e-6", "--c-max", "4"]);
    assert_eq!(o.status.code(), Some(4));
}
