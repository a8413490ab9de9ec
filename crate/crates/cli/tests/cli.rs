use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn drpinn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drpinn"))
        .current_dir(dir)
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}`"))
        .parse()
        .unwrap()
}

const SHORT: &str = "[train]\niterations = 60\ncollocation = 64\nlog_every = 20\n";

#[test]
fn generate_then_fit_baseline_recovers_the_circuit() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "gen.cfg", "[run]\nmode = generate\n[data]\nsigma = 0\n");
    let o = drpinn(d, &["--config", "gen.cfg", "--out", "data"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(d.join("data/dataset.csv"));
    assert!(csv.starts_with("t,temperature,current\n"));
    assert_eq!(csv.lines().count(), 51);
    assert!(read(d.join("data/dataset.csv.meta")).contains("seed = 0"));

    write(d, "fit.cfg", "[data]\ninput = data/dataset.csv\n");
    let o = drpinn(d, &["fit-baseline", "--config", "fit.cfg", "--out", "fit"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read(d.join("fit/report.txt"));
    assert!(report.starts_with("method = lm\ntopology = static:2\n"));
    for (name, truth) in [("R0", 25.0), ("C1", 0.1), ("R1", 3.5), ("C2", 0.5), ("R2", 8.0)] {
        let got = value(&report, &format!("param.{name}"));
        assert!(((got - truth) / truth).abs() < 1e-5, "{name}: {got}");
    }
    assert!(read(d.join("fit/manifest.txt")).contains("input_sha256 = "));
}

#[test]
fn temperature_baseline_recovers_scale_capacitance_and_activation_energy() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "t.cfg", "[data]\nkind = temperature\nsigma = 0\n");
    let o = drpinn(d, &["fit-baseline", "--config", "t.cfg", "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read(d.join("o/report.txt"));
    assert!(report.contains("topology = temperature:1"));
    assert!((value(&report, "param.scale1") - 0.5).abs() < 1e-5);
    assert!((value(&report, "param.C1") - 0.5).abs() < 1e-5);
    assert!((value(&report, "param.W") - 0.76).abs() < 1e-5);
    let csv = read(d.join("o/dataset.csv"));
    assert_eq!(csv.lines().count(), 1 + 200);
    assert!(csv.lines().nth(1).unwrap().contains(",2.9400000000000000e2,"));
}

#[test]
fn training_writes_complete_deterministic_artifacts() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "s.cfg", &format!("[run]\nmode = train-static\n[data]\nsigma = 0.1\n{SHORT}"));
    for out in ["a", "b"] {
        let o = drpinn(d, &["--config", "s.cfg", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let names = [
        "config.resolved.txt",
        "dataset.csv",
        "dataset.csv.meta",
        "trace.csv",
        "prediction.csv",
        "report.txt",
        "manifest.txt",
    ];
    for n in names {
        assert_eq!(fs::read(d.join("a").join(n)).unwrap(), fs::read(d.join("b").join(n)).unwrap(), "{n}");
    }
    let trace = read(d.join("a/trace.csv"));
    assert!(trace.starts_with("step,loss_data,loss_phys,loss_ic,lr,R0,C1,R1,C2,R2\n"));
    assert_eq!(trace.lines().count(), 1 + 4);
    let report = read(d.join("a/report.txt"));
    assert!(report.contains("checkpoint.main.l0.w.0.0 = "));
    assert!(report.contains("checkpoint.raw.r0 = "));
    assert!(report.contains("meta.model_seed = 0"));

    let manifest = read(d.join("a/manifest.txt"));
    assert!(manifest.contains("mode = train-static\n"));
    for line in manifest.lines().filter(|l| l.starts_with("sha256.")) {
        let (file, sha) = line.trim_start_matches("sha256.").split_once(" = ").unwrap();
        let digest: String = Sha256::digest(fs::read(d.join("a").join(file)).unwrap())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        assert_eq!(digest, sha, "{file}");
    }
    let config_hash = manifest.lines().find_map(|l| l.strip_prefix("config_sha256 = ")).unwrap();
    assert!(report.contains(&format!("meta.config_sha256 = {config_hash}")));

    let o = drpinn(d, &["--config", "s.cfg", "--out", "c", "--seed", "7"]);
    assert_eq!(code(&o), 0);
    let other = read(d.join("c/report.txt"));
    assert!(other.contains("meta.model_seed = 7"));
    assert_ne!(other, report);
}

#[test]
fn temperature_training_writes_resistance_curves() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "t.cfg", &format!("[data]\nsigma = 0.2\n[run]\nplot_points = 7\n{SHORT}"));
    let o = drpinn(d, &["train-temperature", "--config", "t.cfg", "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let curves = read(d.join("o/resistance.csv"));
    assert!(curves.starts_with("temperature,learned_r0,true_r0,learned_r1,true_r1\n"));
    assert_eq!(curves.lines().count(), 8);
    let report = read(d.join("o/report.txt"));
    assert!(report.contains("param.scale1 = "));
    assert!(report.contains("param.W = "));
}

#[test]
fn table_reproductions_write_summaries() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "r.cfg", SHORT);
    let o = drpinn(d, &["reproduce-table1", "--config", "r.cfg", "--out", "t1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = read(d.join("t1/table1.txt"));
    assert_eq!(table.lines().count(), 2 + 6);
    assert!(table.lines().next().unwrap().contains("R0"));
    for s in ["0", "0.1", "0.2"] {
        assert!(d.join(format!("t1/sigma_{s}/report.txt")).exists());
        assert!(read(d.join(format!("t1/sigma_{s}/report_lm.txt"))).starts_with("method = lm"));
    }
    let csv = read(d.join("t1/table1.csv"));
    assert!(csv.starts_with("sigma,method,R0,C1,R1,C2,R2,max_rel_error\n"));

    write(d, "r2.cfg", &format!("[data]\nsigma = 0.4\n{SHORT}"));
    let o = drpinn(d, &["reproduce-table2", "--config", "r2.cfg", "--out", "t2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = read(d.join("t2/table2.txt"));
    assert!(table.lines().next().unwrap().contains("scale1"));
    assert!(d.join("t2/sigma_0.4/resistance.csv").exists());
}

#[test]
fn compare_reports_and_flags() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let base = "method = lm\ntopology = static:1\nparam.R0 = 10\nparam.C1 = 1\nparam.R1 = 2\n";
    write(d, "a.txt", base);
    write(d, "b.txt", &base.replace("param.R1 = 2", "param.R1 = 2.5"));
    write(d, "c.txt", &base.replace("static:1", "static:2"));

    let o = drpinn(d, &["compare", "a.txt", "a.txt"]);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8(o.stdout).unwrap();
    assert_eq!(table.matches(" ok").count(), 3);

    let o = drpinn(d, &["compare", "b.txt", "a.txt"]);
    assert_eq!(code(&o), 6);
    assert!(String::from_utf8(o.stdout).unwrap().contains("EXCEEDS"));
    assert_eq!(code(&drpinn(d, &["compare", "b.txt", "a.txt", "--threshold", "0.3"])), 0);

    assert_eq!(code(&drpinn(d, &["compare", "a.txt", "c.txt"])), 7);
}

#[test]
fn failure_classes_have_distinct_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "typo.cfg", "[ecm]\nrO = 25\n");
    let o = drpinn(d, &["generate", "--config", "typo.cfg", "--out", "x"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key `rO`"));

    write(d, "nomode.cfg", "[ecm]\nr0 = 25\n");
    assert_eq!(code(&drpinn(d, &["--config", "nomode.cfg", "--out", "x"])), 2);

    write(d, "bad.cfg", "[ecm]\nr0 = -1\n");
    assert_eq!(code(&drpinn(d, &["generate", "--config", "bad.cfg", "--out", "x"])), 3);

    write(d, "nan.cfg", "[train]\niterations = 50\ncollocation = 16\nlr0 = 1e300\n");
    let o = drpinn(d, &["train-static", "--config", "nan.cfg", "--out", "x"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));

    write(d, "missing.cfg", "[data]\ninput = nowhere.csv\n");
    assert_eq!(code(&drpinn(d, &["fit-baseline", "--config", "missing.cfg", "--out", "x"])), 5);
    assert_eq!(code(&drpinn(d, &["generate", "--config", "absent.cfg"])), 5);

    assert_eq!(code(&drpinn(d, &["compare", "nope.txt", "nope.txt"])), 5);
    write(d, "garbage.txt", "method = lm\ntopology = x\nwhat = 1\n");
    assert_eq!(code(&drpinn(d, &["compare", "garbage.txt", "garbage.txt"])), 3);
}

#[test]
fn svg_helper_renders_prediction_csv() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "p.csv", "t,observed,predicted\n0,,1\n0.5,0.62,0.6\n1,,0.36\n");
    let o = drpinn(d, &["svg", "p.csv", "--x", "t", "--y", "observed,predicted", "-o", "p.svg"]);
    assert_eq!(code(&o), 0);
    let svg = read(d.join("p.svg"));
    assert!(svg.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\""));
    assert!(svg.contains("<polyline"));
    assert_eq!(code(&drpinn(d, &["svg", "p.csv", "--x", "t", "--y", "zzz", "-o", "q.svg"])), 3);
}
