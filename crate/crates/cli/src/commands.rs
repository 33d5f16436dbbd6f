use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gdpp::data::Benchmark;
use gdpp::loss::GdppVariant;
use gdpp::metrics::MetricsRecord;
use gdpp::models::Checkpoint;
use gdpp::report::{
    apply_settings, emit_metrics_csv, format_f64, line_plot_svg, parse_config_text, scatter_svg, RunManifest,
    SeedAggregate, Series, Summary,
};
use gdpp::train::{
    draw_samples, evaluate, run_many_with, ModelKind, RunResult, TrainConfig, TrainedModel, SWEEP_BATCH_SIZES,
};

use crate::args::{Cli, Command, Common, EvalArgs, SweepArgs, SweepKind};
use crate::tables::{ablation_reference, render_csv, render_markdown, table1_reference, Cell};
use crate::CliError;

const DEFAULT_OUT: &str = "gdpp-runs";
const SCATTER_POINTS: usize = 1000;
const ITERATION_SWEEP_BATCH: usize = 512;

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(c) => train(&c),
        Command::Table1(c) => table1(&c),
        Command::Ablate(c) => ablate(&c),
        Command::Sweep(s) => sweep(&s),
        Command::Eval(e) => eval(&e),
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

struct Resolved {
    config: TrainConfig,
    seeds: Vec<u64>,
    workers: usize,
    root: PathBuf,
}

/// Defaults, then the config file, then flags.
fn resolve(c: &Common, default_seeds: usize) -> Result<Resolved, CliError> {
    let mut config = TrainConfig::default();
    let mut file_seeds = None;
    let mut file_workers = None;
    let mut file_out = None;
    if let Some(path) = &c.config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        let mut settings = parse_config_text(&text).map_err(usage)?;
        let count = |settings: &mut BTreeMap<String, String>, key: &str| {
            settings
                .remove(key)
                .map(|v| {
                    v.parse::<usize>()
                        .map_err(|_| usage(format!("`{key}` expects a number, got `{v}`")))
                })
                .transpose()
        };
        file_seeds = count(&mut settings, "seeds")?;
        file_workers = count(&mut settings, "workers")?;
        file_out = settings.remove("out").map(PathBuf::from);
        apply_settings(&mut config, &settings).map_err(usage)?;
    }

    if let Some(b) = c.benchmark {
        config.benchmark = b;
    }
    if let Some(m) = c.model {
        config.model = m;
    }
    if let Some(g) = c.gdpp {
        config.gdpp = g.0;
    }
    if let Some(n) = c.iterations {
        config.iterations = n;
    }
    if let Some(b) = c.batch {
        config.batch = b;
    }
    if let Some(s) = c.seed {
        config.seed = s;
    }
    if let Some(g) = c.gen_loss {
        config.gen_loss = g;
    }
    config.validate().map_err(usage)?;

    let count = c.seeds.or(file_seeds).unwrap_or(default_seeds);
    if count == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let workers = c.workers.or(file_workers).unwrap_or(1);
    if workers == 0 {
        return Err(usage("--workers must be at least 1"));
    }
    let root = c
        .out
        .clone()
        .or(file_out)
        .or_else(|| std::env::var_os("GDPP_LAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok(Resolved {
        seeds: (0..count as u64).map(|k| config.seed + k).collect(),
        config,
        workers,
        root,
    })
}

/// Creates `<root>/<command>-<hash>` and writes its manifest.
fn start(command: &str, r: &Resolved) -> Result<(RunManifest, PathBuf), CliError> {
    let probe = RunManifest::new(command, &r.config, &r.seeds, Path::new(""))?;
    let dir = r.root.join(format!("{command}-{}", probe.hash));
    fs::create_dir_all(&dir).map_err(gdpp::Error::from)?;
    let manifest = RunManifest {
        out_dir: dir.clone(),
        ..probe
    };
    manifest.save(&dir.join("manifest.json"))?;
    Ok((manifest, dir))
}

fn write_run(dir: &Path, run: &RunResult, hash: &str) -> gdpp::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), emit_metrics_csv(&run.records, Some(hash)))?;
    Summary::from_run(run, hash).save(&dir.join("summary.json"))?;
    run.model
        .to_checkpoint(Some(hash.into()), Some(run.config.iterations))
        .save(&dir.join("checkpoint.json"))?;
    if run.config.benchmark.spec(run.config.data_seed).ambient_dim == 2 {
        let (real, fake) = draw_samples(&run.config, &run.model, SCATTER_POINTS)?;
        let title = format!(
            "{} seed {} ({} iterations)",
            run.config.label(),
            run.config.seed,
            run.config.iterations
        );
        fs::write(dir.join("scatter.svg"), scatter_svg(&real, &fake, &title, Some(hash)))?;
    }
    Ok(())
}

fn describe(r: &MetricsRecord, max_modes: usize) -> String {
    format!(
        "modes {}/{max_modes}, HQ {:.1}%, KL {:.3}",
        r.modes_captured,
        100.0 * r.hq_fraction,
        r.mode_kl
    )
}

/// Trains every job, writing each run's files from this thread as it
/// finishes. Failed runs are reported and come back as `None`.
fn execute(jobs: &[(PathBuf, TrainConfig)], workers: usize, hash: &str) -> Vec<Option<RunResult>> {
    let configs: Vec<TrainConfig> = jobs.iter().map(|(_, c)| c.clone()).collect();
    let mut results: Vec<Option<RunResult>> = (0..jobs.len()).map(|_| None).collect();
    let total = jobs.len();
    let mut done = 0;
    run_many_with(&configs, workers, |i, result| {
        done += 1;
        let (dir, config) = &jobs[i];
        let tag = format!("[{done}/{total}] {} seed {}", config.label(), config.seed);
        match result.and_then(|run| write_run(dir, &run, hash).map(|()| run)) {
            Ok(run) => {
                let modes = config.benchmark.spec(config.data_seed).modes();
                println!(
                    "{tag}: {} ({:.4} s/iter) -> {}",
                    describe(run.last(), modes),
                    run.avg_iteration_seconds,
                    dir.display()
                );
                results[i] = Some(run);
            }
            Err(e) => eprintln!("{tag}: failed: {e}"),
        }
    });
    results
}

fn failures(results: &[Option<RunResult>]) -> Result<(), CliError> {
    let failed = results.iter().filter(|r| r.is_none()).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::PartialFailure {
            failed,
            total: results.len(),
        })
    }
}

fn with_seed(config: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..config.clone() }
}

fn slug(config: &TrainConfig) -> String {
    config.label().replace(['/', '[', ']'], "_")
}

fn train(c: &Common) -> Result<(), CliError> {
    let r = resolve(c, 1)?;
    let (manifest, dir) = start("train", &r)?;
    let jobs: Vec<(PathBuf, TrainConfig)> = r
        .seeds
        .iter()
        .map(|&s| (dir.join(format!("seed-{s}")), with_seed(&r.config, s)))
        .collect();
    let results = execute(&jobs, r.workers, &manifest.hash);
    failures(&results)
}

/// Runs `methods × benchmarks × seeds` and renders the pooled table.
fn comparison(
    command: &str,
    title: &str,
    c: &Common,
    methods: &[Option<GdppVariant>],
    benchmarks: &[Benchmark],
    reference: impl Fn(Option<GdppVariant>, Benchmark) -> crate::tables::Reference,
) -> Result<(), CliError> {
    let mut r = resolve(c, 5)?;
    r.config.model = ModelKind::Gan;
    let (manifest, dir) = start(command, &r)?;

    let mut cells = Vec::new();
    let mut jobs = Vec::new();
    for &benchmark in benchmarks {
        for &gdpp in methods {
            let config = TrainConfig {
                benchmark,
                gdpp,
                ..r.config.clone()
            };
            let first = jobs.len();
            for &s in &r.seeds {
                jobs.push((dir.join(slug(&config)).join(format!("seed-{s}")), with_seed(&config, s)));
            }
            cells.push((config.label(), benchmark, gdpp, first..jobs.len()));
        }
    }
    let results = execute(&jobs, r.workers, &manifest.hash);

    let cells: Vec<Cell> = cells
        .into_iter()
        .map(|(label, benchmark, gdpp, range)| {
            let ok: Vec<&MetricsRecord> = results[range.clone()].iter().flatten().map(|run| run.last()).collect();
            Cell {
                method: label.split('/').next().unwrap_or_default().to_string(),
                benchmark,
                max_modes: benchmark.spec(r.config.data_seed).modes(),
                failed: range.len() - ok.len(),
                aggregate: SeedAggregate::of(&ok),
                reference: reference(gdpp, benchmark),
            }
        })
        .collect();
    let md = render_markdown(title, &cells);
    fs::write(
        dir.join(format!("{command}.md")),
        format!("<!-- manifest {} -->\n{md}", manifest.hash),
    )
    .map_err(gdpp::Error::from)?;
    fs::write(dir.join(format!("{command}.csv")), render_csv(&cells, &manifest.hash)).map_err(gdpp::Error::from)?;
    println!("\n{md}");
    failures(&results)
}

fn table1(c: &Common) -> Result<(), CliError> {
    comparison(
        "table1",
        "Mode collapse and sample quality, GAN vs GDPP-GAN",
        c,
        &[None, Some(GdppVariant::Full)],
        &Benchmark::ALL,
        |g, b| table1_reference(g.is_some(), b),
    )
}

fn ablate(c: &Common) -> Result<(), CliError> {
    let methods: Vec<Option<GdppVariant>> = GdppVariant::ALL.into_iter().map(Some).collect();
    comparison(
        "ablate",
        "Loss ablation",
        c,
        &methods,
        &[Benchmark::Ring, Benchmark::Grid],
        |g, b| g.and_then(|v| ablation_reference(v, b)),
    )
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n.max(1) as f64
}

fn sweep(s: &SweepArgs) -> Result<(), CliError> {
    let r = resolve(&s.common, 1)?;
    let (manifest, dir) = start("sweep", &r)?;
    let hash = manifest.hash.as_str();
    let methods = [None, Some(r.config.gdpp.unwrap_or(GdppVariant::Full))];
    let mut all = Vec::new();

    if matches!(s.sweep, SweepKind::Batch | SweepKind::All) {
        let mut jobs = Vec::new();
        let mut points = Vec::new();
        for gdpp in methods {
            for batch in SWEEP_BATCH_SIZES {
                let config = TrainConfig {
                    gdpp,
                    batch,
                    ..r.config.clone()
                };
                let first = jobs.len();
                for &seed in &r.seeds {
                    let path = dir
                        .join("batch")
                        .join(slug(&config))
                        .join(format!("b{batch}"))
                        .join(format!("seed-{seed}"));
                    jobs.push((path, with_seed(&config, seed)));
                }
                points.push((config.label(), batch, first..jobs.len()));
            }
        }
        let results = execute(&jobs, r.workers, hash);
        let mut csv =
            format!("# manifest {hash}\nmethod,batch,runs,mean_modes,mean_hq,mean_kl,avg_iteration_seconds\n");
        let mut modes: BTreeMap<String, Series> = BTreeMap::new();
        let mut hq: BTreeMap<String, Series> = BTreeMap::new();
        for (label, batch, range) in points {
            let runs: Vec<&RunResult> = results[range].iter().flatten().collect();
            if runs.is_empty() {
                continue;
            }
            let m = mean(runs.iter().map(|x| x.last().modes_captured as f64));
            let h = mean(runs.iter().map(|x| x.last().hq_fraction));
            let k = mean(runs.iter().map(|x| x.last().mode_kl));
            let t = mean(runs.iter().map(|x| x.avg_iteration_seconds));
            csv += &format!(
                "{label},{batch},{},{},{},{},{}\n",
                runs.len(),
                format_f64(m),
                format_f64(h),
                format_f64(k),
                format_f64(t)
            );
            let series = |map: &mut BTreeMap<String, Series>, y: f64| {
                map.entry(label.clone())
                    .or_insert_with(|| Series {
                        name: label.clone(),
                        points: Vec::new(),
                    })
                    .points
                    .push((batch as f64, y))
            };
            series(&mut modes, m);
            series(&mut hq, 100.0 * h);
        }
        let write = |name: &str, text: String| fs::write(dir.join(name), text).map_err(gdpp::Error::from);
        write("sweep_batch.csv", csv)?;
        let modes: Vec<Series> = modes.into_values().collect();
        let hq: Vec<Series> = hq.into_values().collect();
        write(
            "sweep_batch_modes.svg",
            line_plot_svg("Modes vs batch size", "batch size", "modes", &modes, Some(hash)),
        )?;
        write(
            "sweep_batch_hq.svg",
            line_plot_svg("%HQ vs batch size", "batch size", "%HQ", &hq, Some(hash)),
        )?;
        all.extend(results);
    }

    if matches!(s.sweep, SweepKind::Iterations | SweepKind::All) {
        let batch = s.common.batch.unwrap_or(ITERATION_SWEEP_BATCH);
        let mut jobs = Vec::new();
        let mut groups = Vec::new();
        for gdpp in methods {
            let config = TrainConfig {
                gdpp,
                batch,
                ..r.config.clone()
            };
            let first = jobs.len();
            for &seed in &r.seeds {
                jobs.push((
                    dir.join("iterations").join(slug(&config)).join(format!("seed-{seed}")),
                    with_seed(&config, seed),
                ));
            }
            groups.push((config.label(), first..jobs.len()));
        }
        let results = execute(&jobs, r.workers, hash);
        let mut csv =
            format!("# manifest {hash}\nmethod,iteration,runs,mean_modes,mean_hq,mean_kl,mean_wall_seconds\n");
        let (mut modes, mut hq) = (Vec::new(), Vec::new());
        for (label, range) in groups {
            let runs: Vec<&RunResult> = results[range].iter().flatten().collect();
            let Some(first) = runs.first() else { continue };
            let mut m_series = Vec::new();
            let mut h_series = Vec::new();
            for (k, rec) in first.records.iter().enumerate() {
                let at = |f: &dyn Fn(&MetricsRecord) -> f64| mean(runs.iter().map(|x| f(&x.records[k])));
                let (m, h) = (at(&|x| x.modes_captured as f64), at(&|x| x.hq_fraction));
                csv += &format!(
                    "{label},{},{},{},{},{},{}\n",
                    rec.iteration,
                    runs.len(),
                    format_f64(m),
                    format_f64(h),
                    format_f64(at(&|x| x.mode_kl)),
                    format_f64(at(&|x| x.wall_seconds))
                );
                m_series.push((rec.iteration as f64, m));
                h_series.push((rec.iteration as f64, 100.0 * h));
            }
            modes.push(Series {
                name: label.clone(),
                points: m_series,
            });
            hq.push(Series {
                name: label,
                points: h_series,
            });
        }
        let write = |name: &str, text: String| fs::write(dir.join(name), text).map_err(gdpp::Error::from);
        write("sweep_iterations.csv", csv)?;
        write(
            "sweep_iterations_modes.svg",
            line_plot_svg(
                &format!("Modes vs iteration (batch {batch})"),
                "iteration",
                "modes",
                &modes,
                Some(hash),
            ),
        )?;
        write(
            "sweep_iterations_hq.svg",
            line_plot_svg(
                &format!("%HQ vs iteration (batch {batch})"),
                "iteration",
                "%HQ",
                &hq,
                Some(hash),
            ),
        )?;
        all.extend(results);
    }
    failures(&all)
}

fn eval(e: &EvalArgs) -> Result<(), CliError> {
    let r = resolve(&e.common, 1)?;
    let ck = Checkpoint::load(&e.checkpoint)?;
    let model = TrainedModel::from_checkpoint(&ck)?;
    let spec = r.config.benchmark.spec(r.config.data_seed);
    let dim = model.generator().spec().output_dim();
    if dim != spec.ambient_dim {
        return Err(usage(format!(
            "checkpoint generates {dim}-dimensional samples but benchmark `{}` is {}-dimensional",
            r.config.benchmark, spec.ambient_dim
        )));
    }
    let iteration = ck.iteration.unwrap_or(0);
    let record = evaluate(&r.config, &spec, &model, iteration, 0.0, true)?;
    let out = serde_json::json!({
        "manifest": ck.manifest,
        "checkpoint": e.checkpoint,
        "benchmark": r.config.benchmark,
        "metrics": record,
    });
    println!("{}", serde_json::to_string_pretty(&out).map_err(gdpp::Error::from)?);
    Ok(())
}
