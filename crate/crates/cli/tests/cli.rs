use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ogd_bzc::harness::TOY_CONFIG;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ogd-bzc"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn body(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

fn short_config() -> String {
    TOY_CONFIG.replacen("T = 200", "T = 40", 1)
}

#[test]
fn run_writes_a_trace_and_replay_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.toml", &short_config());
    let out_a = dir.path().join("a");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--seed", "11", "--out", out_a.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace_a = out_a.join("trace.csv");
    let text = std::fs::read_to_string(&trace_a).unwrap();
    assert!(text.starts_with('#') && text.contains("# seed: 11"));

    let replay = short_config().replacen(
        "variant = \"iid_uniform\"",
        &format!("variant = \"replay\"\ntrace = {:?}", trace_a.to_str().unwrap()),
        1,
    );
    let cfg_b = write_config(dir.path(), "b.toml", &replay);
    let out_b = dir.path().join("b");
    let o = run(&["run", "--config", cfg_b.to_str().unwrap(), "--out", out_b.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(body(&trace_a), body(&out_b.join("trace.csv")));
}

#[test]
fn reproduce_fig1a_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = run(&["reproduce", "fig1a", "--out", d.to_str().unwrap(), "--seed", "3"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let fa = std::fs::read(a.join("fig1a.csv")).unwrap();
    assert_eq!(fa, std::fs::read(b.join("fig1a.csv")).unwrap());
    let text = String::from_utf8(fa).unwrap();
    assert!(text.contains("# seed: 3") && text.contains("# figure: fig1a"));
    assert!(std::fs::read_to_string(a.join("fig1a.py")).unwrap().contains("matplotlib"));
}

#[test]
fn reproduce_fig1b_stays_safe_and_closer_to_the_origin() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["reproduce", "fig1b", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = body(&dir.path().join("fig1b.csv"));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x1,x2,u,cost,controller"));
    let mut max_norm = [0.0f64; 2];
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let (x1, x2): (f64, f64) = (f[1].parse().unwrap(), f[2].parse().unwrap());
        let which = usize::from(f[5] == "linear");
        max_norm[which] = max_norm[which].max(x1.hypot(x2));
        if which == 0 {
            assert!(x1 * x1 + x2 * x2 <= 1.0, "{line}");
            if !f[3].is_empty() {
                let u: f64 = f[3].parse().unwrap();
                assert!(u * u <= 1.0, "{line}");
            }
        }
    }
    assert!(max_norm[0] <= max_norm[1], "{max_norm:?}");
}

#[test]
fn config_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", &TOY_CONFIG.replacen("w_bar = 0.3", "w_bar = 0.3\nnoise = 1", 1));
    assert_eq!(code(&run(&["run", "--config", bad.to_str().unwrap()])), 3);
    assert_eq!(code(&run(&["run", "--config", "/nonexistent/config.toml"])), 3);
    assert_eq!(code(&run(&["reproduce", "fig9", "--out", "x"])), 3);
}

#[test]
fn infeasible_setup_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let tight = write_config(dir.path(), "tight.toml", &TOY_CONFIG.replacen("radius = 1.0", "radius = 0.3", 1));
    let o = run(&["run", "--config", tight.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
}

#[test]
fn fuzz_and_benchmark_succeed_on_the_example() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &short_config());
    let o = run(&["fuzz", "--config", cfg.to_str().unwrap(), "--seeds", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("runs: 8") && out.contains("adaptive: runs 2 violations 0"), "{out}");
    let o = run(&["benchmark", "--config", cfg.to_str().unwrap(), "--grid-step", "0.1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("K* trajectory safe: true") && out.contains("regret / T:"), "{out}");
}
