use std::io::Write;
use std::process::{Command, Output, Stdio};

fn teamopt(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_teamopt"))
        .args(args)
        .env("TEAMOPT_THREADS", "2")
        .stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs");
    if let Some(text) = stdin {
        child.stdin.take().unwrap().write_all(text.as_bytes()).unwrap();
    }
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn witsenhausen() -> String {
    stdout(&teamopt(&["benchmark", "witsenhausen"], None))
}

#[test]
fn counterexample_csv_has_exact_columns() {
    let o = teamopt(&["counterexample", "--nmax", "12"], None);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let header = rows.headers().unwrap().clone();
    let cost = header.iter().position(|h| h == "sequence_cost").unwrap();
    let gap = header.iter().position(|h| h == "full_joint_gap").unwrap();
    let mut count = 0;
    for r in rows.records() {
        let r = r.unwrap();
        assert_eq!(&r[cost], "0");
        assert_eq!(&r[gap], "0.125");
        count += 1;
    }
    assert_eq!(count, 12);
}

#[test]
fn piped_optimize_writes_monotone_trace_and_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = [
        "--out", out, "optimize", "--grid", "21", "--iters", "2", "--order", "16",
    ];
    let o = teamopt(&args, Some(&witsenhausen()));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let costs: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert!((costs[0] - 1.0).abs() < 1e-4, "{costs:?}");
    assert!(costs.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    assert!(*costs.last().unwrap() <= 1.0);
    for f in ["strategy_1_1.csv", "strategy_2_2.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    // The written strategies evaluate back to the final cost.
    let spec = dir.path().join("w.toml");
    std::fs::write(&spec, witsenhausen()).unwrap();
    let args = [
        "evaluate",
        "--spec",
        spec.to_str().unwrap(),
        "--strategies",
        out,
        "--reduced",
        "--order",
        "16",
    ];
    let e = teamopt(&args, None);
    assert_eq!(e.status.code(), Some(0), "{}", String::from_utf8_lossy(&e.stderr));
    let row = stdout(&e);
    let value: f64 = row.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((value - costs.last().unwrap()).abs() < 1e-9, "{value} vs {costs:?}");
}

#[test]
fn runs_are_byte_reproducible() {
    let spec = witsenhausen();
    let args = [
        "evaluate", "--method", "mc", "--n", "20000", "--seed", "5", "--linear", "1,0.5",
    ];
    let a = teamopt(&args, Some(&spec));
    let b = teamopt(&args, Some(&spec));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let header = stdout(&a).lines().next().unwrap().to_string();
    assert_eq!(header, "estimate,stderr,method,seed,order,n");
}

#[test]
fn zero_profile_quadrature_is_one() {
    let o = teamopt(&["evaluate", "--order", "32"], Some(&witsenhausen()));
    let text = stdout(&o);
    let v: f64 = text.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((v - 1.0).abs() < 1e-12, "{v}");
}

#[test]
fn certificate_exit_codes() {
    assert_eq!(
        teamopt(&["certify", "--condition", "c1", "--kernel", "step"], None)
            .status
            .code(),
        Some(3)
    );
    let g = teamopt(&["certify", "--condition", "c1"], None);
    assert_eq!(g.status.code(), Some(0));
    assert!(stdout(&g).contains("pass = true"));
    let ic = [
        "certify",
        "--condition",
        "ic",
        "--b",
        "u1_1",
        "--m",
        "1",
        "--search-box",
        "100",
    ];
    assert_eq!(teamopt(&ic, Some(&witsenhausen())).status.code(), Some(4));
    let seq = [
        "certify",
        "--condition",
        "sequential",
        "--samples",
        "20000",
        "--linear",
        "1,0.5",
    ];
    let s = teamopt(&seq, Some(&witsenhausen()));
    assert_eq!(s.status.code(), Some(0), "{}", String::from_utf8_lossy(&s.stderr));
    assert_eq!(stdout(&s).matches("[[rungs]]").count(), 2);
}

#[test]
fn usage_and_validation_errors() {
    assert_eq!(teamopt(&["frobnicate"], None).status.code(), Some(64));
    assert_eq!(
        teamopt(&["evaluate", "--method", "sideways"], None).status.code(),
        Some(64)
    );
    assert_eq!(teamopt(&["benchmark", "nope"], None).status.code(), Some(2));
    assert_eq!(
        teamopt(&["reduce"], Some("schema_version = 9\n")).status.code(),
        Some(2)
    );
    let bad = witsenhausen().replacen("covariance = [[1.0]]", "covariance = [[0.0]]", 1);
    assert_eq!(teamopt(&["reduce"], Some(&bad)).status.code(), Some(2));
    assert_eq!(teamopt(&["--help"], None).status.code(), Some(0));
}

#[test]
fn benchmark_params_reach_the_spec() {
    let o = teamopt(&["benchmark", "relay", "-p", "n=3", "-p", "lambda=0.2,0.3"], None);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.matches("[[team.decision_makers]]").count(), 3);
}
