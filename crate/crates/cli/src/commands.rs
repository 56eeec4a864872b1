use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use emucascade::graphbuild::load_graph;
use emucascade::toygen::load_truth;
use emucascade::tracks::load_tracks;
use emucascade::{GnnModel, TrackGraph};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Context};
use crate::manifest::RunManifest;
use crate::plot::{Figure, Mark, Series};
use crate::stages::*;

#[derive(Debug, Parser)]
#[command(
    name = "emucascade",
    version,
    about = "Shower segmentation in emulsion cloud chamber bricks"
)]
pub struct Cli {
    /// Worker threads (default: one per core). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// INI run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate toy bricks and their truth files.
    Gen {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        seed: u64,
        /// Showers per brick.
        #[arg(long)]
        showers: Option<usize>,
        #[arg(long)]
        bricks: Option<usize>,
        /// Output directory (default: the configured output directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration and brick, truth or graph files.
    Validate {
        #[command(flatten)]
        config: ConfigArg,
        files: Vec<PathBuf>,
    },
    /// Build labeled track graphs from brick files.
    BuildGraph {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the edge classifier.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long = "train", required = true, num_args = 1..)]
        train: Vec<PathBuf>,
        #[arg(long = "val", required = true, num_args = 1..)]
        val: Vec<PathBuf>,
        /// Model file to write; the training history goes next to it.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `[train] max_epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        /// Suppress per-epoch progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Write edge probabilities into graph files.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster scored graphs and export condensed trees.
    Cluster {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        min_cluster_size: Option<usize>,
    },
    /// Compute reconstruction metrics for clustered graphs.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        /// Clustered graphs to report on.
        #[arg(long = "graphs", required = true, num_args = 1..)]
        graphs: Vec<PathBuf>,
        /// Clustered graphs the energy model is fitted on (default: the report graphs).
        #[arg(long = "fit", num_args = 1..)]
        fit: Vec<PathBuf>,
        /// Directory with the matching brick and truth CSV files.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render plots and their CSV twins from metrics files.
    Report {
        #[arg(long = "metrics", required = true, num_args = 1..)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run generation (or loading), graph building, training, scoring,
    /// clustering, evaluation and reporting.
    Pipeline {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory (default: `[run] out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Suppress progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
}

fn set_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs.filter(|&n| n > 0) {
        // a second build in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    set_jobs(cli.jobs);
    match cli.command {
        Command::Gen {
            config,
            seed,
            showers,
            bricks,
            out,
        } => cmd_gen(config.config.as_deref(), seed, showers, bricks, out.as_deref()),
        Command::Validate { config, files } => cmd_validate(config.config.as_deref(), &files),
        Command::BuildGraph { config, inputs, out } => cmd_build_graph(config.config.as_deref(), &inputs, &out),
        Command::Train {
            config,
            train,
            val,
            out,
            epochs,
            quiet,
        } => cmd_train(config.config.as_deref(), &train, &val, &out, epochs, !quiet),
        Command::Score { model, inputs, out } => cmd_score(&model, &inputs, &out),
        Command::Cluster {
            config,
            inputs,
            out,
            threshold,
            min_cluster_size,
        } => cmd_cluster(config.config.as_deref(), &inputs, &out, threshold, min_cluster_size),
        Command::Eval {
            config,
            graphs,
            fit,
            data,
            out,
        } => cmd_eval(config.config.as_deref(), &graphs, &fit, &data, &out),
        Command::Report { metrics, out } => cmd_report(&metrics, &out),
        Command::Pipeline { config, out, quiet } => {
            let cfg = RunConfig::load_or_default(config.config.as_deref())?;
            if cli.jobs.is_none() && cfg.run.jobs > 0 {
                set_jobs(Some(cfg.run.jobs));
            }
            let out = out.unwrap_or_else(|| cfg.out_dir());
            cmd_pipeline(&cfg, &out, !quiet).map(|_| ())
        }
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).at(dir)
}

/// Writes `<out>.manifest.json` (file outputs) or `<out>/manifest.json`.
fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.json")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}

pub fn cmd_gen(
    config: Option<&Path>,
    seed: u64,
    showers: Option<usize>,
    bricks: Option<usize>,
    out: Option<&Path>,
) -> CliResult<()> {
    let mut cfg = RunConfig::load_or_default(config)?;
    let default_out = cfg.out_dir();
    let out = out.unwrap_or(&default_out);
    cfg.set_seed(seed);
    if let Some(n) = showers {
        cfg.gen.n_showers = n;
    }
    let n_bricks = bricks.unwrap_or(cfg.run.n_bricks);
    if n_bricks == 0 {
        return Err(CliError::usage("--bricks must be at least 1"));
    }
    cfg.gen.validate()?;
    create_dir(out)?;
    let t = Instant::now();
    let data = generate(&cfg.gen, n_bricks, out).stage("gen")?;
    let files: Vec<PathBuf> = data.iter().flat_map(|d| d.files.clone()).collect();
    let mut m = RunManifest::new("gen", &serde_json::to_string(&cfg.gen).expect("serializes"), out);
    m.record("gen", &[], &files, t.elapsed())?;
    m.write(&out.join("manifest.json"))
}

pub fn cmd_validate(config: Option<&Path>, files: &[PathBuf]) -> CliResult<()> {
    if config.is_none() && files.is_empty() {
        return Err(CliError::usage("nothing to validate: give --config and/or files"));
    }
    if let Some(c) = config {
        RunConfig::load_or_default(Some(c))?;
        println!("{}: ok", c.display());
    }
    for f in files {
        let name = f.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(id) = name.strip_prefix("truth_").and_then(|s| s.strip_suffix(".csv")) {
            let brick_path = f.with_file_name(format!("brick_{id}.csv"));
            let brick = load_tracks(&brick_path).at(&brick_path)?;
            load_truth(f, &brick).at(f)?;
        } else if name.ends_with(".jsonl") {
            load_graph(f).at(f)?;
        } else {
            load_tracks(f).at(f)?.validate().at(f)?;
        }
        println!("{}: ok", f.display());
    }
    Ok(())
}

pub fn cmd_build_graph(config: Option<&Path>, inputs: &[PathBuf], out: &Path) -> CliResult<()> {
    let cfg = RunConfig::load_or_default(config)?;
    create_dir(out)?;
    let t = Instant::now();
    let built: Vec<(i64, TrackGraph, Vec<PathBuf>)> = inputs
        .par_iter()
        .map(|p| {
            let d = load_brick(p)?;
            Ok((d.id(), build_labeled(&d.brick, &cfg.graph).at(p)?, d.files))
        })
        .collect::<CliResult<_>>()
        .stage("build-graph")?;
    let refs: Vec<(i64, &TrackGraph)> = built.iter().map(|(id, g, _)| (*id, g)).collect();
    let outputs = write_graphs(&refs, out)?;
    let in_files: Vec<PathBuf> = built.iter().flat_map(|b| b.2.clone()).collect();
    let mut m = RunManifest::new("build-graph", &serde_json::to_string(&cfg.graph).expect("serializes"), out);
    m.record("build-graph", &in_files, &outputs, t.elapsed())?;
    m.write(&out.join("manifest.json"))
}

fn graphs_only(paths: &[PathBuf]) -> CliResult<Vec<TrackGraph>> {
    Ok(read_graphs(paths)?.into_iter().map(|(_, g)| g).collect())
}

pub fn cmd_train(
    config: Option<&Path>,
    train: &[PathBuf],
    val: &[PathBuf],
    out: &Path,
    epochs: Option<usize>,
    verbose: bool,
) -> CliResult<()> {
    let mut cfg = RunConfig::load_or_default(config)?;
    if let Some(e) = epochs {
        cfg.train.max_epochs = e;
    }
    let t = Instant::now();
    let tr = graphs_only(train)?;
    let va = graphs_only(val)?;
    let (model, history) = train_model(&tr, &va, &cfg.model, &cfg.train, verbose).stage("train")?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    model.save(out).at(out)?;
    let hist = out.with_extension("history.json");
    write_text(&hist, &(serde_json::to_string_pretty(&history).expect("serializes") + "\n"))?;
    let inputs: Vec<PathBuf> = train.iter().chain(val).cloned().collect();
    let cfg_json = serde_json::to_string(&(&cfg.model, &cfg.train)).expect("serializes");
    let root = out.parent().unwrap_or(Path::new("."));
    let mut m = RunManifest::new("train", &cfg_json, root);
    m.record("train", &inputs, &[out.to_path_buf(), hist], t.elapsed())?;
    m.write(&manifest_path(out))
}

pub fn cmd_score(model: &Path, inputs: &[PathBuf], out: &Path) -> CliResult<()> {
    let t = Instant::now();
    let m = GnnModel::load(model).at(model)?;
    let mut graphs = read_graphs(inputs)?;
    graphs
        .par_iter_mut()
        .try_for_each(|(_, g)| m.score(g))
        .map_err(CliError::from)
        .stage("score")?;
    let refs: Vec<(i64, &TrackGraph)> = graphs.iter().map(|(id, g)| (*id, g)).collect();
    let outputs = write_graphs(&refs, out)?;
    let mut all_in = vec![model.to_path_buf()];
    all_in.extend(inputs.iter().cloned());
    let mut man = RunManifest::new("score", "{}", out);
    man.record("score", &all_in, &outputs, t.elapsed())?;
    man.write(&out.join("manifest.json"))
}

pub fn cmd_cluster(
    config: Option<&Path>,
    inputs: &[PathBuf],
    out: &Path,
    threshold: Option<f64>,
    min_cluster_size: Option<usize>,
) -> CliResult<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let mut params = cfg.cluster.clone();
    if let Some(t) = threshold {
        params.threshold = t;
    }
    if let Some(m) = min_cluster_size {
        params.min_cluster_size = m;
    }
    params.validate()?;
    let t = Instant::now();
    let mut graphs = read_graphs(inputs)?;
    let clusterings = cluster_all(&mut graphs, &params)?;
    let refs: Vec<(i64, &TrackGraph)> = graphs.iter().map(|(id, g)| (*id, g)).collect();
    let mut outputs = write_graphs(&refs, out)?;
    let trees: Vec<(i64, &emucascade::CondensedTree)> =
        graphs.iter().zip(&clusterings).map(|((id, _), c)| (*id, &c.tree)).collect();
    outputs.extend(write_trees(&out.join("trees"), &trees)?);
    let mut m = RunManifest::new("cluster", &serde_json::to_string(&params).expect("serializes"), out);
    m.record("cluster", inputs, &outputs, t.elapsed())?;
    m.write(&out.join("manifest.json"))
}

fn data_for(dir: &Path, ids: impl IntoIterator<Item = i64>) -> CliResult<Vec<BrickData>> {
    ids.into_iter()
        .map(|id| load_brick(&dir.join(emucascade::tracks::brick_file_name(id))))
        .collect()
}

/// Writes metrics, sweep and curve files for an evaluated run.
fn write_eval_outputs(metrics: &RunMetrics, curves_from: &[&TrackGraph], out: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files = vec![
        write_text(&out.join("metrics.json"), &metrics.to_json())?,
        write_text(&out.join("sweep.csv"), &sweep_csv(&metrics.sweep))?,
    ];
    if let Some((roc, pr)) = edge_curves(curves_from) {
        files.push(write_text(&out.join("edge_roc.csv"), &roc_csv(&roc))?);
        files.push(write_text(&out.join("edge_pr.csv"), &pr_csv(&pr))?);
    }
    if let Some(c) = &metrics.report.curves {
        files.push(write_text(&out.join("quality_roc.csv"), &roc_csv(&c.roc))?);
        files.push(write_text(&out.join("quality_pr.csv"), &pr_csv(&c.pr))?);
    }
    Ok(files)
}

pub fn cmd_eval(config: Option<&Path>, graphs: &[PathBuf], fit: &[PathBuf], data: &Path, out: &Path) -> CliResult<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let t = Instant::now();
    create_dir(out)?;
    let test_g = read_graphs(graphs)?;
    let fit_g = if fit.is_empty() { test_g.clone() } else { read_graphs(fit)? };
    let test_d = data_for(data, test_g.iter().map(|g| g.0))?;
    let fit_d = data_for(data, fit_g.iter().map(|g| g.0))?;
    for (id, g) in test_g.iter().chain(&fit_g) {
        if g.clusters.is_none() {
            return Err(CliError::validation(format!("graph of brick {id} is not clustered")));
        }
    }
    let pair = |d: &'_ [BrickData], g: &'_ [(i64, TrackGraph)]| -> Vec<(usize, usize)> {
        (0..d.len().min(g.len())).map(|i| (i, i)).collect()
    };
    let test_e: Vec<Evaluated> = pair(&test_d, &test_g)
        .into_iter()
        .map(|(i, j)| Evaluated {
            data: &test_d[i],
            graph: &test_g[j].1,
        })
        .collect();
    let fit_e: Vec<Evaluated> = pair(&fit_d, &fit_g)
        .into_iter()
        .map(|(i, j)| Evaluated {
            data: &fit_d[i],
            graph: &fit_g[j].1,
        })
        .collect();
    let report = evaluate(&fit_e, &test_e, &cfg.eval).stage("eval")?;
    let sweep = threshold_sweep(&fit_e, &test_e, &cfg.cluster, &cfg.sweep).stage("eval")?;
    let test_refs: Vec<&TrackGraph> = test_g.iter().map(|g| &g.1).collect();
    let metrics = RunMetrics {
        split: SplitIds {
            train: fit_g.iter().map(|g| g.0).collect(),
            val: Vec::new(),
            test: test_g.iter().map(|g| g.0).collect(),
        },
        training: None,
        edge_auc: EdgeAuc {
            val: None,
            test: edge_auc(&test_refs),
        },
        cluster: cfg.cluster.clone(),
        percentages: percentages(&report),
        sweep,
        report,
    };
    let outputs = write_eval_outputs(&metrics, &test_refs, out)?;
    let mut inputs: Vec<PathBuf> = graphs.iter().chain(fit).cloned().collect();
    inputs.extend(test_d.iter().chain(&fit_d).flat_map(|d| d.files.clone()));
    inputs.sort();
    inputs.dedup();
    let mut m = RunManifest::new("eval", &cfg.canonical_json(), out);
    m.record("eval", &inputs, &outputs, t.elapsed())?;
    m.write(&out.join("manifest.json"))
}

/// Figures drawn from one or more metrics files, keyed by output stem.
pub fn report_figures(runs: &[(String, RunMetrics)]) -> Vec<(&'static str, Figure)> {
    let mut recovered = Figure::new("Recovered showers vs threshold", "threshold", "showers, %");
    let mut er_thr = Figure::new("Energy resolution vs threshold", "threshold", "energy resolution");
    let mut er_n = Figure::new(
        "Energy resolution vs showers per brick",
        "showers per brick",
        "energy resolution",
    );
    let mut er_bins = Figure::new("Energy resolution per energy bin", "true energy, MeV", "energy resolution");
    let single = runs.len() == 1;
    for (name, m) in runs {
        let tag = |what: &str| if single { what.to_string() } else { format!("{name} {what}") };
        let pct = |f: fn(&emucascade::recon::CategoryRates) -> f64| {
            m.sweep
                .iter()
                .map(move |r| (r.threshold, 100.0 * f(&r.rates)))
                .collect::<Vec<_>>()
        };
        recovered
            .series
            .push(Series::new(tag("recovered"), Mark::Line, pct(|r| r.recovered)));
        if single {
            recovered.series.push(Series::new("stuck", Mark::Line, pct(|r| r.stuck)));
            recovered.series.push(Series::new("broken", Mark::Line, pct(|r| r.broken)));
            recovered.series.push(Series::new("lost", Mark::Line, pct(|r| r.lost)));
        }
        er_thr.series.push(Series::new(
            tag("ER"),
            Mark::Line,
            m.sweep.iter().map(|r| (r.threshold, r.energy_resolution.unwrap_or(f64::NAN))),
        ));
        er_n.series.push(Series::new(
            tag("bricks"),
            Mark::Points,
            m.report
                .bricks
                .iter()
                .map(|b| (b.n_showers as f64, b.energy_resolution.unwrap_or(f64::NAN))),
        ));
        er_bins.series.push(Series::new(
            tag("ER"),
            Mark::Line,
            m.report
                .aggregate
                .energy_bins
                .iter()
                .map(|b| (0.5 * (b.lo + b.hi), b.energy_resolution.unwrap_or(f64::NAN))),
        ));
    }
    vec![
        ("recovered_vs_threshold", recovered),
        ("er_vs_threshold", er_thr),
        ("er_vs_showers", er_n),
        ("er_vs_energy", er_bins),
    ]
}

fn write_figures(runs: &[(String, RunMetrics)], dir: &Path) -> CliResult<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut files = Vec::new();
    for (stem, fig) in report_figures(runs) {
        files.extend(fig.write(dir, stem)?);
    }
    Ok(files)
}

fn run_name(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    if stem == "metrics" {
        path.parent()
            .and_then(|p| p.file_name())
            .and_then(|s| s.to_str())
            .unwrap_or(stem)
            .to_string()
    } else {
        stem.to_string()
    }
}

pub fn cmd_report(metrics: &[PathBuf], out: &Path) -> CliResult<()> {
    if metrics.is_empty() {
        return Err(CliError::usage("report needs at least one metrics file"));
    }
    let t = Instant::now();
    let runs: Vec<(String, RunMetrics)> = metrics
        .iter()
        .map(|p| Ok((run_name(p), RunMetrics::load(p)?)))
        .collect::<CliResult<_>>()?;
    let files = write_figures(&runs, out)?;
    let mut m = RunManifest::new("report", "{}", out);
    m.record("report", metrics, &files, t.elapsed())?;
    m.write(&out.join("manifest.json"))
}

/// Paths of the files a pipeline run leaves in its output directory.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub metrics: RunMetrics,
    pub metrics_path: PathBuf,
    pub model_path: PathBuf,
    pub manifest_path: PathBuf,
}

pub fn cmd_pipeline(cfg: &RunConfig, out: &Path, verbose: bool) -> CliResult<PipelineOutput> {
    create_dir(out)?;
    let mut man = RunManifest::new("pipeline", &cfg.canonical_json(), out);
    let log = |msg: &str| {
        if verbose {
            eprintln!("{msg}");
        }
    };

    let t = Instant::now();
    let data = match cfg.data_dir() {
        Some(dir) => {
            let data = load_brick_dir(&dir).stage("load")?;
            let files: Vec<PathBuf> = data.iter().flat_map(|d| d.files.clone()).collect();
            man.record("load", &files, &[], t.elapsed())?;
            data
        }
        None => {
            let data = generate(&cfg.gen, cfg.run.n_bricks, &out.join("data")).stage("gen")?;
            let files: Vec<PathBuf> = data.iter().flat_map(|d| d.files.clone()).collect();
            man.record("gen", &[], &files, t.elapsed())?;
            data
        }
    };
    let ids: Vec<i64> = data.iter().map(BrickData::id).collect();
    let split = split_ids(&ids, [cfg.run.n_train, cfg.run.n_val, cfg.run.n_test], cfg.run.seed).stage("split")?;
    log(&format!(
        "{} bricks: train {:?}, val {:?}, test {:?} ({:.1?})",
        data.len(),
        split.train,
        split.val,
        split.test,
        t.elapsed()
    ));

    let t = Instant::now();
    let used: Vec<i64> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
    let index = |id: i64| ids.iter().position(|&x| x == id).expect("split ids come from the data");
    let mut graphs: Vec<(i64, TrackGraph)> = used
        .par_iter()
        .map(|&id| Ok((id, build_labeled(&data[index(id)].brick, &cfg.graph)?)))
        .collect::<CliResult<_>>()
        .stage("build-graph")?;
    let refs: Vec<(i64, &TrackGraph)> = graphs.iter().map(|(id, g)| (*id, g)).collect();
    let graph_files = write_graphs(&refs, &out.join("graphs"))?;
    let brick_files: Vec<PathBuf> = used.iter().flat_map(|&id| data[index(id)].files.clone()).collect();
    man.record("build-graph", &brick_files, &graph_files, t.elapsed())?;
    log(&format!("graphs built ({:.1?})", t.elapsed()));

    let t = Instant::now();
    let pick = |set: &[i64]| -> Vec<TrackGraph> {
        set.iter()
            .map(|id| graphs.iter().find(|g| g.0 == *id).expect("built").1.clone())
            .collect()
    };
    let model_path = out.join("model.json");
    let (model, training) = match cfg.model_path() {
        Some(p) => {
            let m = GnnModel::load(&p).at(&p).stage("load-model")?;
            m.save(&model_path).at(&model_path)?;
            man.record("load-model", &[p], std::slice::from_ref(&model_path), t.elapsed())?;
            (m, None)
        }
        None => {
            let (m, history) =
                train_model(&pick(&split.train), &pick(&split.val), &cfg.model, &cfg.train, verbose).stage("train")?;
            m.save(&model_path).at(&model_path)?;
            let hist = write_text(
                &out.join("history.json"),
                &(serde_json::to_string_pretty(&history).expect("serializes") + "\n"),
            )?;
            let train_files: Vec<PathBuf> = split
                .train
                .iter()
                .chain(&split.val)
                .map(|id| out.join("graphs").join(graph_file_name(*id)))
                .collect();
            man.record("train", &train_files, &[model_path.clone(), hist], t.elapsed())?;
            let summary = TrainingSummary::of(&history, &m);
            log(&format!(
                "trained {} epochs, best val auc {:.5} at epoch {} ({:.1?})",
                summary.epochs_run,
                summary.best_val_auc,
                summary.best_epoch,
                t.elapsed()
            ));
            (m, Some(summary))
        }
    };

    let t = Instant::now();
    graphs
        .par_iter_mut()
        .try_for_each(|(_, g)| model.score(g))
        .map_err(CliError::from)
        .stage("score")?;
    let clusterings = cluster_all(&mut graphs, &cfg.cluster)?;
    let refs: Vec<(i64, &TrackGraph)> = graphs.iter().map(|(id, g)| (*id, g)).collect();
    let mut cluster_files = write_graphs(&refs, &out.join("clustered"))?;
    let test_trees: Vec<(i64, &emucascade::CondensedTree)> = graphs
        .iter()
        .zip(&clusterings)
        .filter(|((id, _), _)| split.test.contains(id))
        .map(|((id, _), c)| (*id, &c.tree))
        .collect();
    cluster_files.extend(write_trees(&out.join("trees"), &test_trees)?);
    let mut inputs = graph_files.clone();
    inputs.push(model_path.clone());
    man.record("score-cluster", &inputs, &cluster_files, t.elapsed())?;
    log(&format!("scored and clustered ({:.1?})", t.elapsed()));

    let t = Instant::now();
    let graph_of = |id: i64| &graphs.iter().find(|g| g.0 == id).expect("built").1;
    let evaluated = |set: &[i64]| -> Vec<Evaluated<'_>> {
        set.iter()
            .map(|&id| Evaluated {
                data: &data[index(id)],
                graph: graph_of(id),
            })
            .collect()
    };
    let fit_e = evaluated(&split.train);
    let test_e = evaluated(&split.test);
    let report = evaluate(&fit_e, &test_e, &cfg.eval).stage("eval")?;
    let sweep = threshold_sweep(&fit_e, &test_e, &cfg.cluster, &cfg.sweep).stage("eval")?;
    let val_refs: Vec<&TrackGraph> = split.val.iter().map(|&id| graph_of(id)).collect();
    let test_refs: Vec<&TrackGraph> = split.test.iter().map(|&id| graph_of(id)).collect();
    let metrics = RunMetrics {
        split: split.clone(),
        training,
        edge_auc: EdgeAuc {
            val: edge_auc(&val_refs),
            test: edge_auc(&test_refs),
        },
        cluster: cfg.cluster.clone(),
        percentages: percentages(&report),
        sweep,
        report,
    };
    let eval_files = write_eval_outputs(&metrics, &test_refs, out)?;
    let cl_inputs: Vec<PathBuf> = split
        .train
        .iter()
        .chain(&split.test)
        .map(|id| out.join("clustered").join(graph_file_name(*id)))
        .collect();
    man.record("eval", &cl_inputs, &eval_files, t.elapsed())?;
    let p = metrics.percentages;
    log(&format!(
        "recovered {:.1}%  stuck {:.1}%  broken {:.1}%  lost {:.1}%  ({:.1?})",
        p.recovered,
        p.stuck,
        p.broken,
        p.lost,
        t.elapsed()
    ));

    let t = Instant::now();
    let plots = write_figures(&[("run".to_string(), metrics.clone())], &out.join("plots"))?;
    man.record("report", &[out.join("metrics.json")], &plots, t.elapsed())?;

    let manifest_path = out.join("manifest.json");
    man.write(&manifest_path)?;
    Ok(PipelineOutput {
        metrics,
        metrics_path: out.join("metrics.json"),
        model_path,
        manifest_path,
    })
}
