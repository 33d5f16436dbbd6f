use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = "\
# small enough for a test run
hidden = 8, 8
latent_dim = 4
iterations = 4
batch = 8
eval_every = 2
eval_samples = 60
ivo_targets = 3
ivo_steps = 4
ivo_restarts = 1
";

fn lab(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gdpp-lab"));
    cmd.args(args).env_remove("GDPP_LAB_OUT");
    if let Some(p) = env_out {
        cmd.env("GDPP_LAB_OUT", p);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.cfg"), format!("{TINY}{extra}")).unwrap();
        Self { dir }
    }

    fn cfg(&self) -> String {
        self.dir.path().join("tiny.cfg").display().to_string()
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, args: &[&str]) -> Output {
        let cfg = self.cfg();
        let out = self.out().display().to_string();
        let mut all = args.to_vec();
        all.extend(["--config", &cfg, "--out", &out]);
        lab(&all, None)
    }

    /// The single `<command>-<hash>` directory under the output root.
    fn run_dir(&self, command: &str) -> PathBuf {
        let dirs: Vec<PathBuf> = fs::read_dir(self.out())
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| {
                p.file_name()
                    .unwrap()
                    .to_string_lossy()
                    .starts_with(&format!("{command}-"))
            })
            .collect();
        assert_eq!(dirs.len(), 1, "{dirs:?}");
        dirs[0].clone()
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn manifest_hash(run_dir: &Path) -> String {
    json(&run_dir.join("manifest.json"))["hash"]
        .as_str()
        .unwrap()
        .to_string()
}

fn parse_svg(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{} is not XML: {e}", path.display()));
    text
}

#[test]
fn train_writes_every_artifact() {
    let s = Sandbox::new("");
    let o = s.run(&[
        "train",
        "--benchmark",
        "ring",
        "--model",
        "gan",
        "--gdpp",
        "full",
        "--seed",
        "0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = s.run_dir("train");
    let hash = manifest_hash(&dir);
    let run = dir.join("seed-0");

    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(csv.starts_with(&format!("# manifest {hash}\n")));
    let records = gdpp::report::parse_metrics_csv(&csv).unwrap();
    assert_eq!(records.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![0, 2, 4]);
    assert!(records.last().unwrap().ivo_mse.is_some());

    let summary = json(&run.join("summary.json"));
    assert_eq!(summary["manifest"], hash.as_str());
    assert_eq!(summary["label"], "gdpp-gan/ring");
    assert_eq!(summary["seed"], 0);

    let ck = gdpp::models::Checkpoint::load(&run.join("checkpoint.json")).unwrap();
    assert_eq!(ck.manifest.as_deref(), Some(hash.as_str()));
    assert_eq!(ck.iteration, Some(4));

    let svg = parse_svg(&run.join("scatter.svg"));
    assert!(svg.contains(&format!("<metadata>manifest {hash}</metadata>")));
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let count = |class: &str, color: &str| {
        let g = doc
            .descendants()
            .find(|n| n.attribute("class") == Some(class))
            .unwrap_or_else(|| panic!("no {class} group"));
        assert_eq!(g.attribute("fill"), Some(color));
        g.children().filter(|c| c.has_tag_name("circle")).count()
    };
    assert_eq!(count("real", "#2ca02c"), 1000);
    assert_eq!(count("generated", "#1f77b4"), 1000);
}

#[test]
fn zero_iterations_reports_untrained_metrics() {
    let s = Sandbox::new("");
    let o = s.run(&["train", "--iterations", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = json(&s.run_dir("train").join("seed-0/summary.json"));
    assert_eq!(summary["iterations"], 0);
    assert_eq!(summary["final_metrics"]["iteration"], 0);
    assert_eq!(summary["avg_iteration_seconds"], 0.0);
}

#[test]
fn unknown_benchmark_is_a_usage_error() {
    let o = lab(&["train", "--benchmark", "spiral"], None);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("ring, grid, highdim"), "{err}");
}

#[test]
fn bad_gdpp_value_lists_choices() {
    let o = lab(&["train", "--gdpp", "logdet"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("off, full, magnitude, structure, unnorm, det"));
}

#[test]
fn bad_config_files_are_usage_errors() {
    let s = Sandbox::new("colour = blue\n");
    let o = s.run(&["train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));

    let missing = lab(&["train", "--config", "/nonexistent/gdpp.cfg"], None);
    assert_eq!(missing.status.code(), Some(2));

    let s = Sandbox::new("batch = 1\n");
    assert_eq!(s.run(&["train"]).status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    let o = lab(&["--help"], None);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["train", "table1", "ablate", "sweep", "eval"] {
        assert!(stdout(&o).contains(sub));
    }
}

#[test]
fn flags_override_config_file() {
    let s = Sandbox::new("seeds = 2\n");
    let o = s.run(&["train", "--batch", "6", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = s.run_dir("train");
    for seed in [3, 4] {
        let summary = json(&dir.join(format!("seed-{seed}/summary.json")));
        assert_eq!(summary["batch"], 6);
        assert_eq!(summary["seed"], seed);
    }
    assert_eq!(json(&dir.join("manifest.json"))["seeds"], serde_json::json!([3, 4]));
}

#[test]
fn env_var_sets_default_output_root() {
    let s = Sandbox::new("");
    let root = s.dir.path().join("from-env");
    let cfg = s.cfg();
    let o = lab(&["train", "--config", &cfg], Some(&root));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_dir(&root).unwrap().count(), 1);
}

#[test]
fn diverging_training_exits_one() {
    let s = Sandbox::new("gan_lr = 1e300\n");
    let o = s.run(&["train", "--iterations", "20"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("failed"), "{}", stderr(&o));
}

#[test]
fn reruns_reuse_their_own_directory() {
    let s = Sandbox::new("");
    assert!(s.run(&["train"]).status.success());
    let first = s.run_dir("train");
    let a = fs::read_to_string(first.join("seed-0/checkpoint.json")).unwrap();
    assert!(s.run(&["train"]).status.success());
    assert_eq!(s.run_dir("train"), first);
    assert_eq!(fs::read_to_string(first.join("seed-0/checkpoint.json")).unwrap(), a);
    assert!(s.run(&["train", "--seed", "9"]).status.success());
    assert_eq!(fs::read_dir(s.out()).unwrap().count(), 2);
}

#[test]
fn worker_count_does_not_change_results() {
    let one = Sandbox::new("seeds = 3\n");
    let three = Sandbox::new("seeds = 3\n");
    assert!(one.run(&["train", "--gdpp", "full"]).status.success());
    assert!(three
        .run(&["train", "--gdpp", "full", "--workers", "3"])
        .status
        .success());
    for seed in 0..3 {
        let path = |s: &Sandbox| s.run_dir("train").join(format!("seed-{seed}/checkpoint.json"));
        assert_eq!(
            fs::read_to_string(path(&one)).unwrap(),
            fs::read_to_string(path(&three)).unwrap()
        );
    }
}

#[test]
fn eval_reads_a_checkpoint() {
    let s = Sandbox::new("");
    assert!(s.run(&["train", "--benchmark", "grid"]).status.success());
    let dir = s.run_dir("train");
    let ck = dir.join("seed-0/checkpoint.json").display().to_string();
    let o = s.run(&["eval", "--checkpoint", &ck, "--benchmark", "grid"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["manifest"], manifest_hash(&dir).as_str());
    assert_eq!(v["metrics"]["iteration"], 4);
    assert!(v["metrics"]["ivo_mse"].as_f64().unwrap() >= 0.0);

    let wrong = s.run(&["eval", "--checkpoint", &ck, "--benchmark", "highdim"]);
    assert_eq!(wrong.status.code(), Some(2));
}

fn table_rows(md: &str) -> Vec<&str> {
    md.lines()
        .filter(|l| l.starts_with("| ") && !l.starts_with("| method"))
        .collect()
}

#[test]
fn table1_has_six_cells_with_references() {
    let s = Sandbox::new("");
    let o = s.run(&["table1", "--seeds", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = s.run_dir("table1");
    let md = fs::read_to_string(dir.join("table1.md")).unwrap();
    let rows = table_rows(&md);
    assert_eq!(rows.len(), 6, "{md}");
    assert!(rows
        .iter()
        .any(|r| r.starts_with("| gdpp-gan | ring |") && r.contains("| 8.0 | 71.7 |")));
    assert!(rows.iter().all(|r| r.ends_with("| 1/1 |")));
    let csv = fs::read_to_string(dir.join("table1.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 7);
}

#[test]
fn table1_aggregates_five_seeds_by_default() {
    let s = Sandbox::new("");
    let o = s.run(&["table1", "--iterations", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = s.run_dir("table1");
    assert!(table_rows(&fs::read_to_string(dir.join("table1.md")).unwrap())
        .iter()
        .all(|r| r.ends_with("| 5/5 |")));
    assert_eq!(fs::read_dir(dir.join("gan_ring")).unwrap().count(), 5);
}

#[test]
fn ablation_covers_every_variant() {
    let s = Sandbox::new("");
    let o = s.run(&["ablate", "--seeds", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let md = fs::read_to_string(s.run_dir("ablate").join("ablate.md")).unwrap();
    let rows = table_rows(&md);
    assert_eq!(rows.len(), 10, "{md}");
    for v in ["det", "magnitude", "structure", "unnorm"] {
        assert!(md.contains(&format!("gdpp[{v}]-gan")), "{v}");
    }
    assert!(rows
        .iter()
        .any(|r| r.starts_with("| gdpp[det]-gan | grid |") && r.contains("| 12.6 | 21.7 |")));
}

#[test]
fn failed_cells_still_produce_a_table() {
    let s = Sandbox::new("gan_lr = 1e300\n");
    let o = s.run(&["table1", "--seeds", "1", "--iterations", "20"]);
    assert_eq!(o.status.code(), Some(1));
    let md = fs::read_to_string(s.run_dir("table1").join("table1.md")).unwrap();
    assert!(md.contains("FAILED"));
}

#[test]
fn sweep_outputs() {
    let s = Sandbox::new("");
    let o = s.run(&["sweep", "--iterations", "2", "--sweep", "all"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = s.run_dir("sweep");
    let hash = manifest_hash(&dir);

    let batch = fs::read_to_string(dir.join("sweep_batch.csv")).unwrap();
    let rows: Vec<&str> = batch.lines().skip(2).collect();
    assert_eq!(rows.len(), 8);
    for method in ["gan/ring", "gdpp-gan/ring"] {
        let sizes: Vec<usize> = rows
            .iter()
            .filter(|r| r.starts_with(&format!("{method},")))
            .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(sizes, vec![64, 128, 256, 512]);
        for b in &sizes {
            let point = dir
                .join("batch")
                .join(method.replace('/', "_"))
                .join(format!("b{b}/seed-0/metrics.csv"));
            assert!(point.exists(), "{}", point.display());
        }
    }

    let iters = fs::read_to_string(dir.join("sweep_iterations.csv")).unwrap();
    let xs: Vec<usize> = iters
        .lines()
        .skip(2)
        .filter(|l| l.starts_with("gan/"))
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(xs, vec![0, 2]);
    let summary = json(&dir.join("iterations/gan_ring/seed-0/summary.json"));
    assert_eq!(summary["batch"], 512);

    for f in [
        "sweep_batch_modes.svg",
        "sweep_batch_hq.svg",
        "sweep_iterations_modes.svg",
        "sweep_iterations_hq.svg",
    ] {
        assert!(parse_svg(&dir.join(f)).contains(&hash), "{f}");
    }
    assert!(batch.starts_with(&format!("# manifest {hash}")));
}
