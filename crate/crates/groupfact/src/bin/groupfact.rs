//! Command-line front end: reproducible sample / fit / predict / eval /
//! learning-curve / export-bases runs driven by a TOML config with flag
//! overrides. Exit codes: 0 success, 2 config error, 3 data error,
//! 4 numerical failure.

use clap::{Parser, Subcommand};
use groupfact::classify;
use groupfact::config::RunConfig;
use groupfact::data::{self, IngestSchema};
use groupfact::error::{Error, Result};
use groupfact::inference::{self, Posterior};
use groupfact::model::{sample_dataset, GroupedDataset};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "groupfact", version, about = "Group NMF for multi-subject EEG features")]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides fit.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides fit.threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Decision rule: argmin, argmax, or scaled.
    #[arg(long, global = true)]
    rule: Option<String>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset from the generative model.
    Sample,
    /// Run variational inference on the configured subject files.
    Fit,
    /// Classify the configured subject files against a saved posterior.
    Predict,
    /// Predict, then score against the labels in the subject files.
    Eval,
    /// Accuracy as a function of training-set size.
    LearningCurve,
    /// Re-export basis heatmap CSV from a saved posterior.
    ExportBases,
}

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("GROUPFACT_LOG", "error"),
    )
    .init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.fit.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.fit.threads = threads;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out = Some(out.clone());
    }
    if let Some(rule) = &cli.rule {
        cfg.predict.rule = rule.parse()?;
    }
    cfg.validate()?;
    if cfg.fit.threads > 1 {
        log::info!("threads = {} requested; running single-threaded", cfg.fit.threads);
    }
    match cli.command {
        Command::Sample => cmd_sample(&cfg),
        Command::Fit => cmd_fit(&cfg),
        Command::Predict => cmd_predict(&cfg, false),
        Command::Eval => cmd_predict(&cfg, true),
        Command::LearningCurve => cmd_learning_curve(&cfg),
        Command::ExportBases => cmd_export_bases(&cfg),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    ))
}

fn load_configured_group(cfg: &RunConfig, schema: &IngestSchema) -> Result<GroupedDataset> {
    if cfg.paths.subjects.is_empty() {
        return Err(Error::Config("paths.subjects is empty".into()));
    }
    data::load_group(&cfg.paths.subjects, schema)
}

fn load_posterior(cfg: &RunConfig, dir: &Path) -> Result<Posterior> {
    let path = cfg.paths.posterior.clone().unwrap_or_else(|| dir.join("posterior.csv"));
    let file = File::open(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Posterior::load_csv(BufReader::new(file))
}

fn cmd_sample(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let schema = cfg.ingest_schema()?;
    let h = &cfg.model;
    let labels: Vec<Vec<usize>> = (0..cfg.sample.subjects)
        .map(|_| (0..cfg.sample.frames).map(|n| n % h.k + 1).collect())
        .collect();
    let (ds, latent) = sample_dataset(h, &labels, cfg.sample.features, cfg.fit.seed)?;
    let mut write_schema = schema.clone();
    write_schema.feature_count = cfg.sample.features;
    if write_schema.label_map.len() != h.k {
        // default map covers K=3; otherwise use identity raw labels
        write_schema.label_map = (1..=h.k as i64).map(|v| (v, v as usize)).collect();
    }
    for (l, x) in ds.features.iter().enumerate() {
        let path = dir.join(format!("subject_{}.txt", l + 1));
        write_schema.validate()?;
        data::write_subject(x, Some(&labels[l]), &write_schema, create(&path)?)?;
        println!("wrote {}", path.display());
    }
    let mut lf = create(&dir.join("labels.csv"))?;
    writeln!(lf, "subject,frame,label").map_err(|e| Error::io("labels.csv", e))?;
    for (l, y) in labels.iter().enumerate() {
        for (n, lab) in y.iter().enumerate() {
            writeln!(lf, "{},{},{}", l + 1, n + 1, lab).map_err(|e| Error::io("labels.csv", e))?;
        }
    }
    let mut gt = create(&dir.join("latent.csv"))?;
    let werr = |e| Error::io("latent.csv", e);
    writeln!(gt, "factor,subject,row,col,value").map_err(werr)?;
    for ((i, j), v) in latent.a_c.indexed_iter() {
        writeln!(gt, "A_C,0,{},{},{}", i + 1, j + 1, v).map_err(werr)?;
    }
    for (l, a) in latent.a_i.iter().enumerate() {
        for ((i, j), v) in a.indexed_iter() {
            writeln!(gt, "A_I,{},{},{},{}", l + 1, i + 1, j + 1, v).map_err(werr)?;
        }
    }
    for (l, s) in latent.s_i.iter().enumerate() {
        for ((i, j), v) in s.indexed_iter() {
            writeln!(gt, "S_I,{},{},{},{}", l + 1, i + 1, j + 1, v).map_err(werr)?;
        }
    }
    println!("wrote {}", dir.join("labels.csv").display());
    println!("wrote {}", dir.join("latent.csv").display());
    Ok(())
}

fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let schema = cfg.ingest_schema()?;
    let ds = load_configured_group(cfg, &schema)?;
    if ds.labels.is_none() {
        return Err(Error::Config(
            "fit requires labeled data; schema.label_column is none".into(),
        ));
    }
    let start = Instant::now();
    let result = inference::fit(&ds, &cfg.model, &cfg.fit_options())?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;

    result.posterior.save_csv(create(&dir.join("posterior.csv"))?)?;
    inference::write_trace_csv(&result.trace, create(&dir.join("trace.csv"))?)?;
    data::export_bases(&result.posterior, &cfg.layout, create(&dir.join("bases.csv"))?)?;

    let manifest = serde_json::json!({
        "config": cfg,
        "wall_ms": wall_ms,
        "iterations": result.iterations,
        "final_elbo": result.trace.last().map(|p| p.elbo),
        "empty_classes": result.empty_classes,
        "dataset": ds.summary(cfg.model.k),
    });
    serde_json::to_writer_pretty(create(&dir.join("manifest.json"))?, &manifest)
        .map_err(|e| Error::Data { path: "manifest.json".into(), message: e.to_string() })?;
    for name in ["posterior.csv", "trace.csv", "bases.csv", "manifest.json"] {
        println!("wrote {}", dir.join(name).display());
    }
    println!(
        "converged after {} sweeps, final elbo {}",
        result.iterations,
        result.trace.last().map(|p| p.elbo).unwrap_or(f64::NAN)
    );
    Ok(())
}

fn write_predictions(
    pred: &classify::Prediction,
    k: usize,
    path: &Path,
) -> Result<()> {
    let mut out = create(path)?;
    let werr = |e| Error::io("predictions.csv", e);
    let header: Vec<String> = (1..=k).map(|kk| format!("d_{kk}")).collect();
    writeln!(out, "subject,frame,label,{}", header.join(",")).map_err(werr)?;
    for (l, labels) in pred.labels.iter().enumerate() {
        for (n, lab) in labels.iter().enumerate() {
            let scores: Vec<String> =
                (0..k).map(|kk| format!("{}", pred.scores[l][[n, kk]])).collect();
            writeln!(out, "{},{},{},{}", l + 1, n + 1, lab, scores.join(","))
                .map_err(werr)?;
        }
    }
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, eval: bool) -> Result<()> {
    let dir = out_dir(cfg)?;
    let schema = cfg.ingest_schema()?;
    let ds = load_configured_group(cfg, &schema)?;
    let post = load_posterior(cfg, &dir)?;
    let pred = classify::predict(&ds, &post, cfg.predict.rule)?;
    let path = dir.join("predictions.csv");
    write_predictions(&pred, post.num_classes(), &path)?;
    println!("wrote {}", path.display());
    if eval {
        let truth = ds.labels.as_ref().ok_or_else(|| Error::Config(
            "eval requires labels in the subject files (schema.label_column)".into(),
        ))?;
        let report = classify::evaluate(&pred, truth)?;
        let path = dir.join("eval.json");
        serde_json::to_writer_pretty(create(&path)?, &report)
            .map_err(|e| Error::Data { path: "eval.json".into(), message: e.to_string() })?;
        println!("wrote {}", path.display());
        println!("pooled accuracy {}", report.pooled_accuracy);
    }
    Ok(())
}

fn cmd_learning_curve(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let schema = cfg.ingest_schema()?;
    let ds = load_configured_group(cfg, &schema)?;
    let points = classify::learning_curve(
        &ds,
        &cfg.model,
        &cfg.fit_options(),
        &cfg.learning_curve.fractions,
        cfg.learning_curve.test_fraction,
        cfg.predict.rule,
    )?;
    let path = dir.join("learning_curve.csv");
    classify::write_learning_curve_csv(&points, create(&path)?)?;
    println!("wrote {}", path.display());
    for p in &points {
        println!("fraction {} pooled accuracy {}", p.fraction, p.pooled_accuracy);
    }
    Ok(())
}

fn cmd_export_bases(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let post = load_posterior(cfg, &dir)?;
    let path = dir.join("bases.csv");
    data::export_bases(&post, &cfg.layout, create(&path)?)?;
    println!("wrote {}", path.display());
    Ok(())
}
