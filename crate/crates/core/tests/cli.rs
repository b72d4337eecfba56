use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use memsplit::archspace::{ArchFamily, FamilyKind};

const BIN: &str = env!("CARGO_BIN_EXE_memsplit");

fn memsplit(args: &[&str], root: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .env("MEMSPLIT_RUN_ROOT", root)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const MICRO: &str = r#"
[run]
family = "mlp"
setting = "A"
budgets = [600, 2400]
n_grid = [1, 2, 4]
replicates = 3
seed = 3
output = "micro"

[data]
dataset = "gaussian-blobs:train=200,val=100,test=400"

[train]
epochs = 15
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn count_paths() {
    let root = tempfile::tempdir().unwrap();
    let o = memsplit(&["count", "--family", "wrn28", "--k", "160"], root.path());
    assert!(o.status.success());
    let count: u64 = stdout(&o).trim().parse().unwrap();
    assert!((count as f64 - 36.8e6).abs() / 36.8e6 < 0.02);

    let o = memsplit(&["count", "--family", "wrn28", "--budget", &count.to_string()], root.path());
    assert_eq!(stdout(&o).trim(), "160");

    let vgg = ArchFamily::by_kind(FamilyKind::Vgg16Cifar);
    let quarter = vgg.param_count(64).unwrap() / 4;
    let scan = (vgg.k_min..=vgg.k_max)
        .min_by_key(|&k| (vgg.param_count(k).unwrap().abs_diff(quarter), k))
        .unwrap();
    let o = memsplit(&["count", "--family", "vgg16-cifar", "--budget", &quarter.to_string()], root.path());
    assert_eq!(stdout(&o).trim(), scan.to_string());

    let o = memsplit(&["count", "--family", "wrn28", "--budget", "0.0625std"], root.path());
    assert_eq!(stdout(&o).trim(), "40");

    for bad in [
        vec!["count", "--family", "wrn28", "--k", "1"],
        vec!["count", "--family", "wrn28", "--budget", "12"],
        vec!["count", "--family", "wrn28", "--budget", "1000std"],
        vec!["count", "--family", "nope", "--k", "3"],
        vec!["count", "--family", "wrn28"],
    ] {
        let o = memsplit(&bad, root.path());
        assert_eq!(o.status.code(), Some(2), "{bad:?}: {}", stderr(&o));
    }
}

#[test]
fn sweep_resume_report_and_corruption() {
    let root = tempfile::tempdir().unwrap();
    let cfg = write_config(root.path(), "micro.toml", MICRO);
    let start = Instant::now();
    let o = memsplit(&["sweep", &cfg, "--jobs", "2"], root.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(120));
    let run = root.path().join("micro");
    let records = run.join("records.jsonl");
    let first = std::fs::read(&records).unwrap();
    assert_eq!(first.iter().filter(|&&b| b == b'\n').count(), 2 * 3 * 3);

    // Rerun: nothing retrained, identical bytes.
    let again = memsplit(&["sweep", &cfg], root.path());
    assert!(again.status.success());
    assert_eq!(std::fs::read(&records).unwrap(), first);

    // Report, and the summary argmax agrees with the CSV argmax.
    let o = memsplit(&["report", "micro", "--chart", "memory-split"], root.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = stdout(&o);
    let csv_path = summary.lines().find_map(|l| l.strip_prefix("csv: ")).unwrap();
    let csv = std::fs::read_to_string(csv_path).unwrap();
    for budget in [600u64, 2400] {
        let best_n = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|c| c[0] == budget.to_string())
            .fold((0u64, f64::NEG_INFINITY), |best, c| {
                let mean: f64 = c[6].parse().unwrap();
                if mean > best.1 + 1e-12 {
                    (c[2].parse().unwrap(), mean)
                } else {
                    best
                }
            })
            .0;
        let line = summary.lines().find(|l| l.starts_with(&format!("budget {budget} "))).unwrap();
        assert!(line.contains(&format!("N* = {best_n} ")), "{line}");
        assert!(line.contains(&format!("msa_holds = {}", best_n > 1)));
    }
    for chart in ["optimal-trajectory", "width-quality", "nll-split"] {
        let o = memsplit(&["report", "micro", "--chart", chart], root.path());
        assert!(o.status.success(), "{chart}: {}", stderr(&o));
    }
    let o = memsplit(&["report", "micro", "--chart", "memory-split", "--metric", "calibrated_nll"], root.path());
    assert!(stdout(&o).starts_with("metric: calibrated_nll"));

    // Corrupt line 4: exit 3 naming the line.
    let mut lines: Vec<String> = String::from_utf8(first).unwrap().lines().map(String::from).collect();
    lines[3] = "{\"schema_version\": 1, \"family\": ".into();
    std::fs::write(&records, lines.join("\n") + "\n").unwrap();
    let o = memsplit(&["sweep", &cfg], root.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("records.jsonl:4"), "{}", stderr(&o));
    let o = memsplit(&["report", "micro"], root.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn report_on_empty_directory_fails_with_usage_code() {
    let root = tempfile::tempdir().unwrap();
    std::fs::create_dir(root.path().join("empty")).unwrap();
    let o = memsplit(&["report", "empty"], root.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("records.jsonl"));
}

#[test]
fn divergence_exits_with_code_four() {
    let root = tempfile::tempdir().unwrap();
    let text = MICRO.replace("epochs = 15", "epochs = 5\nlr = 1e9").replace("\"micro\"", "\"boom\"");
    let cfg = write_config(root.path(), "boom.toml", &text);
    let o = memsplit(&["sweep", &cfg], root.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged at epoch"));
}

#[test]
fn config_errors_exit_two() {
    let root = tempfile::tempdir().unwrap();
    let text = format!("{MICRO}\n[tune]\nmethod = \"grid\"\n");
    let cfg = write_config(root.path(), "bad.toml", &text);
    let o = memsplit(&["sweep", &cfg], root.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("setting A"));
    let o = memsplit(&["sweep", &root.path().join("missing.toml").to_string_lossy()], root.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tune_echoes_setting_a_and_caches_setting_b() {
    let root = tempfile::tempdir().unwrap();
    let a = write_config(root.path(), "a.toml", MICRO);
    let o = memsplit(&["tune", &a, "--k", "8"], root.path());
    assert!(o.status.success());
    let hp: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(hp["lr"], 0.05);
    assert_eq!(hp["weight_decay"], 0.0);
    assert_eq!(hp["dropout"], 0.0);

    let text = MICRO.replace("setting = \"A\"", "setting = \"B\"")
        + "\n[tune]\nmethod = \"grid\"\nlr = [0.01, 0.05]\nwd = [0.0001]\n";
    let b = write_config(root.path(), "b.toml", &text);
    let first = memsplit(&["tune", &b, "--k", "8"], root.path());
    assert!(first.status.success(), "{}", stderr(&first));
    let rec: serde_json::Value = serde_json::from_str(stdout(&first).trim()).unwrap();
    assert_eq!(rec["evaluations"], 2);
    assert_eq!(rec["hp"]["weight_decay"], 0.0001);
    let start = Instant::now();
    let second = memsplit(&["tune", &b, "--k", "8"], root.path());
    assert_eq!(stdout(&second), stdout(&first));
    assert!(start.elapsed() < Duration::from_secs(5));
    let cache = root.path().join("micro").join("tune.jsonl");
    assert_eq!(std::fs::read_to_string(cache).unwrap().lines().count(), 1);

    let o = memsplit(&["tune", &b, "--k", "100000"], root.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn setting_b_sweep_runs_end_to_end() {
    let root = tempfile::tempdir().unwrap();
    let text = MICRO
        .replace("setting = \"A\"", "setting = \"B\"")
        .replace("budgets = [600, 2400]", "budgets = [1200]")
        .replace("n_grid = [1, 2, 4]", "n_grid = [1, 2]")
        .replace("epochs = 15", "epochs = 6")
        + "\n[tune]\nmethod = \"bo\"\nlr = { lo = 0.001, hi = 0.1 }\nbo_iterations = 3\nbo_init_points = 2\n";
    let cfg = write_config(root.path(), "b.toml", &text);
    let o = memsplit(&["sweep", &cfg], root.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let tuned = std::fs::read_to_string(root.path().join("micro").join("tune.jsonl")).unwrap();
    assert_eq!(tuned.lines().count(), 2);
    let recs = std::fs::read_to_string(root.path().join("micro").join("records.jsonl")).unwrap();
    assert!(recs.lines().all(|l| l.contains("\"setting\":\"B\"")));
}

#[test]
fn run_directory_refuses_a_different_config() {
    let root = tempfile::tempdir().unwrap();
    let text = MICRO.replace("budgets = [600, 2400]", "budgets = [600]").replace("epochs = 15", "epochs = 2");
    let cfg = write_config(root.path(), "one.toml", &text);
    assert!(memsplit(&["sweep", &cfg], root.path()).status.success());
    let other = write_config(root.path(), "two.toml", &text.replace("seed = 3", "seed = 4"));
    let o = memsplit(&["sweep", &other], root.path());
    assert_eq!(o.status.code(), Some(2));
    let o = memsplit(&["sweep", &other, "--output", "elsewhere"], root.path());
    assert!(o.status.success());
    assert!(root.path().join("elsewhere").join("records.jsonl").is_file());
}
