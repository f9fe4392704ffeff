use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TOY: &str = "eu,obs,time,rep,y\n1,1,1,1,1\n1,2,2,1,3\n2,3,1,1,11\n2,4,2,1,13\n";
const SMALL: &str = r#"{"n": 3, "M": 2, "t": 4, "K": 2, "L": 2, "G": 2, "seed": 5}"#;

fn dlmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlmm"))
        .args(args)
        .env_remove("DLMM_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = dlmm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn help_lists_every_flag() {
    let out = ok(&["--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["simulate", "group", "fit", "anova", "manova", "compare", "diagnose", "--threads", "--verbose"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
    let sub = |c: &str| String::from_utf8(ok(&[c, "--help"]).stdout).unwrap();
    let fit = sub("fit");
    for flag in ["--in", "--model", "--groups", "--strategy", "--criterion", "--formula", "--out", "--destructive", "--factors"] {
        assert!(fit.contains(flag), "fit help lacks {flag}");
    }
    for m in ["fixed", "deaton", "proposed", "randint", "manova"] {
        assert!(fit.contains(m));
    }
    let compare = sub("compare");
    for flag in ["--config", "--sweep", "--reps", "--hypothesis", "--seed", "--no-mse", "--no-truth", "--threads", "DLMM_SEED"] {
        assert!(compare.contains(flag), "compare help lacks {flag}");
    }
    assert!(sub("diagnose").contains("--max-lag"));
    assert!(sub("simulate").contains("--complete"));
}

#[test]
fn toy_fit_recovers_moment_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let toy = write(dir.path(), "toy.csv", TOY);
    let out = dir.path().join("fit.json");
    ok(&["fit", "--model", "randint", "--in", s(&toy), "--criterion", "reml", "--out", s(&out)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let vc = &json["variance_components"];
    assert!((vc["sigma_eps2"].as_f64().unwrap() - 2.0).abs() < 1e-6);
    assert!((vc["sigma_b2"].as_f64().unwrap() - 49.0).abs() < 1e-6);
    let b = json["random_effects"][0]["values"].as_array().unwrap();
    assert!((b[0].as_f64().unwrap() + 4.9).abs() < 1e-6);
    assert_eq!(json["effects"][0]["term"], "(Intercept)");
}

#[test]
fn proposed_model_on_single_observation_cells_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let toy = write(dir.path(), "toy.csv", TOY);
    let out = dlmm(&["fit", "--model", "proposed", "--groups", "2", "--in", s(&toy), "--out", s(&dir.path().join("f.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fewer than 2"));
    assert!(!dir.path().join("f.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dlmm(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dlmm(&["fit", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        dlmm(&["fit", "--model", "fixed", "--in", "/nonexistent.csv", "--out", "x.json"]).status.code(),
        Some(1)
    );
    // A second factor identical to the first makes X rank deficient.
    let text = "eu,obs,time,A,B,y\n1,1,1,a,a,1\n1,2,1,a,a,2\n2,3,1,b,b,5\n2,4,1,b,b,7\n";
    let dup = write(dir.path(), "dup.csv", text);
    let out = dlmm(&["fit", "--model", "fixed", "--formula", "A+B", "--in", s(&dup), "--out", s(&dir.path().join("f.json"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let bad_cfg = write(dir.path(), "bad.json", r#"{"n": 3, "colour": 1}"#);
    let out = dlmm(&["simulate", "--config", s(&bad_cfg), "--out", s(&dir.path().join("p.csv"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic_and_honours_the_seed_variable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", SMALL);
    let p = |n: &str| dir.path().join(n);
    ok(&["simulate", "--config", s(&cfg), "--out", s(&p("a.csv")), "--seed", "42"]);
    ok(&["simulate", "--config", s(&cfg), "--out", s(&p("b.csv")), "--seed", "42"]);
    ok(&["simulate", "--config", s(&cfg), "--out", s(&p("c.csv")), "--seed", "43"]);
    let read = |n: &str| fs::read(p(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));

    let out = Command::new(env!("CARGO_BIN_EXE_dlmm"))
        .args(["simulate", "--config", s(&cfg), "--out", s(&p("d.csv"))])
        .env("DLMM_SEED", "42")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(read("a.csv"), read("d.csv"));
}

#[test]
fn analysis_commands_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", SMALL);
    let p = |n: &str| dir.path().join(n);
    ok(&["simulate", "--config", s(&cfg), "--out", s(&p("panel.csv"))]);
    let panel = p("panel.csv");
    let read = |n: &str| fs::read_to_string(p(n)).unwrap();

    ok(&["group", "--in", s(&panel), "--groups", "2", "--out", s(&p("groups.csv"))]);
    assert!(read("groups.csv").starts_with("eu,time,obs,group\n"));

    for model in ["fixed", "deaton", "proposed"] {
        let name = format!("{model}.csv");
        ok(&["anova", "--model", model, "--in", s(&panel), "--out", s(&p(&name))]);
        let t = read(&name);
        assert!(t.starts_with("source,df,ss,ms,f,p\n"), "{t}");
        assert!(t.contains("\nA:T,"));
    }
    ok(&["anova", "--model", "proposed", "--in", s(&panel), "--format", "text", "--out", s(&p("a.txt"))]);
    assert!(read("a.txt").contains("eta(b)"));

    ok(&["manova", "--in", s(&panel), "--out", s(&p("manova.csv"))]);
    let m = read("manova.csv");
    assert!(m.starts_with("term,df,pillai,approxF,numdf,dendf,p\n"));
    assert_eq!(m.lines().count(), 4);

    for model in ["fixed", "deaton", "proposed", "randint", "manova"] {
        let name = format!("fit-{model}.json");
        ok(&["fit", "--model", model, "--in", s(&panel), "--out", s(&p(&name))]);
        let json: serde_json::Value = serde_json::from_str(&read(&name)).unwrap();
        assert_eq!(json["model"], model);
        assert!(json["mse"].as_f64().unwrap() > 0.0);
    }
    let fit: serde_json::Value = serde_json::from_str(&read("fit-proposed.json")).unwrap();
    let terms: Vec<&str> = fit["effects"].as_array().unwrap().iter().map(|e| e["term"].as_str().unwrap()).collect();
    assert_eq!(terms, vec!["(Intercept)", "A", "T", "A:T"]);
    let at = fit["effects"][3]["cells"].as_array().unwrap();
    assert_eq!(at.len(), 8);
    let total: f64 = at.iter().map(|c| c["value"].as_f64().unwrap()).sum();
    assert!(total.abs() < 1e-9);

    ok(&["diagnose", "--in", s(&panel), "--out", s(&p("diag"))]);
    for f in ["acf.csv", "tests.csv", "diagnostics.json", "correlogram.svg"] {
        assert!(p("diag").join(f).exists(), "{f}");
    }
    let svg = fs::read_to_string(p("diag").join("correlogram.svg")).unwrap();
    assert!(svg.contains("stroke-dasharray") && svg.contains("<circle"));
    // Three treatment-1 and three treatment-2 units with two groups each.
    assert_eq!(svg.matches("group ").count(), 12);
}

#[test]
fn compare_writes_reports_independent_of_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", SMALL);
    let run = |threads: &str, out: &Path| {
        ok(&[
            "compare", "--config", s(&cfg), "--sweep", "dAT=0,0.5,1", "--reps", "4", "--hypothesis", "1,2",
            "--threads", threads, "--out", s(out),
        ]);
    };
    let (a, b) = (dir.path().join("one"), dir.path().join("three"));
    run("1", &a);
    run("3", &b);
    for f in ["report.json", "tidy.csv", "quantiles.csv", "pvalues.csv", "mse.svg", "mse_deaton_proposed.svg", "mse_truth.svg", "p_H1.svg", "p_H2.svg"] {
        let x = fs::read(a.join(f)).unwrap_or_else(|_| panic!("missing {f}"));
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let tidy = fs::read_to_string(a.join("tidy.csv")).unwrap();
    assert!(tidy.starts_with("scenario,rep,method,metric,value\n"));
    assert!(tidy.contains("dAT=0.5,3,proposed,mse,"));
    assert_eq!(dlmm(&["compare", "--config", s(&cfg), "--threads", "0", "--reps", "1", "--out", s(&a)]).status.code(), Some(1));
}
