use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn helper(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_helper")).args(args).output().expect("binary runs")
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name).display().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn single_line_diagnostic(o: &Output) {
    let e = stderr(o);
    assert_eq!(e.trim_end().lines().count(), 1, "{e:?}");
    assert!(e.starts_with("helper: "), "{e:?}");
}

#[test]
fn validate_accepts_shipped_scenarios() {
    for name in ["grid.json", "convergecast.json", "field.json"] {
        let o = helper(&["validate", &scenario(name)]);
        assert_eq!(code(&o), 0, "{name}: {}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok\t"));
    }
}

#[test]
fn invalid_scenarios_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("empty.json", r#"{"schema":1,"nodes":[],"erc":0,"duration_s":10}"#),
        ("syntax.json", "{not json"),
        ("unknown.json", r#"{"schema":1,"nodes":[],"erc":0,"duration_s":10,"colour":"red"}"#),
    ];
    for (name, body) in cases {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        let o = helper(&["validate", p.to_str().unwrap()]);
        assert_eq!(code(&o), 3, "{name}");
        single_line_diagnostic(&o);
    }
    let o = helper(&["run", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    single_line_diagnostic(&o);
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["run", "x.json", "--bogus"][..],
        &["frobnicate"],
        &[],
        &["run", "x.json", "--routing", "shortest"],
        &["serve", "--time-scale", "0"],
        &["serve", "--bind", "not-an-address"],
    ] {
        let o = helper(args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
        single_line_diagnostic(&o);
    }
    assert_eq!(code(&helper(&["--help"])), 0);
}

fn run_into(out: &Path, extra: &[&str]) -> Output {
    let grid = scenario("grid.json");
    let mut args = vec!["run", grid.as_str(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    helper(&args)
}

fn read_all(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files.into_iter().map(|p| (p.file_name().unwrap().into(), std::fs::read(&p).unwrap())).collect()
}

#[test]
fn run_twice_gives_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = run_into(d, &["--routing", "greedy", "--seed", "7"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let (fa, fb) = (read_all(&a), read_all(&b));
    let csvs: Vec<_> = fa.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "csv")).collect();
    assert_eq!(csvs.len(), 5);
    assert_eq!(fa, fb);
    let summary = String::from_utf8_lossy(&fa.iter().find(|(p, _)| p == Path::new("summary.csv")).unwrap().1).into_owned();
    assert!(summary.contains("routing,greedy"));
    assert!(summary.contains("seed,7"));
}

#[test]
fn plots_are_optional() {
    let dir = tempfile::tempdir().unwrap();
    let (with, without) = (dir.path().join("with"), dir.path().join("without"));
    assert_eq!(code(&run_into(&with, &[])), 0);
    assert_eq!(code(&run_into(&without, &["--no-plots"])), 0);
    let svg = |d: &Path| read_all(d).iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "svg")).count();
    assert_eq!(svg(&with), 2);
    assert_eq!(svg(&without), 0);
    assert_eq!(read_all(&with).len(), read_all(&without).len() + 2);
}

#[test]
fn calibrate_prints_link_throughput() {
    let o = helper(&["calibrate"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    let th: f64 = out.trim().strip_prefix("th_link_bps\t").unwrap().parse().unwrap();
    // payload bits over a 5 kb/s air rate, after RTS/CTS/ACK and backoff
    assert!(th > 0.0 && th < 5000.0, "{th}");
}

#[test]
fn battery_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("battery.json");
    std::fs::write(&cfg, r#"{"seeds":[0,1],"session_counts":[1,2],"th_link_bps":2000.0}"#).unwrap();
    let out = dir.path().join("report");
    let o = helper(&["battery", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--no-plots"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["rows.csv", "summary.csv", "audit.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(!out.join("lifetime.svg").exists());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("lifetime\tk=2\tseek\tlifetime_s"));

    std::fs::write(&cfg, r#"{"seeds":[]}"#).unwrap();
    let o = helper(&["battery", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    single_line_diagnostic(&o);
}
