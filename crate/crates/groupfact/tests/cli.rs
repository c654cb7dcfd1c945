//! End-to-end tests of the `groupfact` binary: output shapes, byte-level
//! determinism, iteration bounds, decision-rule overrides, and exit codes.

use groupfact::data::{self, IngestSchema};
use groupfact::model::{sample_dataset_with_basis, Hyperparams};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groupfact"))
        .args(args)
        .output()
        .expect("failed to launch groupfact binary")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// Writes L labeled subject files drawn from a shared, well-separated common
/// basis; returns their paths.
fn write_group(
    dir: &Path,
    h: &Hyperparams,
    m: usize,
    n: usize,
    l: usize,
    scale: f64,
    seed: u64,
) -> Vec<PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Gamma::new(0.1, 1.0 / 0.1).unwrap();
    let a_c = Array2::from_shape_fn((m, h.k), |_| scale * g.sample(&mut rng));
    let labels: Vec<Vec<usize>> = (0..l).map(|_| (0..n).map(|i| i % h.k + 1).collect()).collect();
    let (ds, _) = sample_dataset_with_basis(h, &labels, m, seed + 1, Some(a_c)).unwrap();
    let mut schema = IngestSchema::default();
    schema.feature_count = m;
    let mut paths = Vec::new();
    for (li, x) in ds.features.iter().enumerate() {
        let path = dir.join(format!("subject_{}.txt", li + 1));
        let file = fs::File::create(&path).unwrap();
        data::write_subject(x, Some(&labels[li]), &schema, file).unwrap();
        paths.push(path);
    }
    paths
}

fn subjects_toml(paths: &[PathBuf]) -> String {
    let quoted: Vec<String> =
        paths.iter().map(|p| format!("\"{}\"", p.display())).collect();
    format!("subjects = [{}]", quoted.join(", "))
}

/// elbo column of a trace.csv, header skipped.
fn trace_elbos(path: &Path) -> Vec<f64> {
    read(path)
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

/// (subject, frame, label) triples of a predictions.csv.
fn prediction_labels(path: &Path) -> Vec<(usize, usize, usize)> {
    read(path)
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn sample_outputs_are_complete_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = run(&["sample", "--seed", "7", "--out", dir.to_str().unwrap()]);
        assert_ok(&out);
    }
    // defaults: 3 subjects x 60 frames x 24 features
    for l in 1..=3 {
        let text = read(&a.join(format!("subject_{l}.txt")));
        assert_eq!(text.lines().count(), 60);
        let first: Vec<&str> = text.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(first.len(), 25, "24 features plus trailing label column");
    }
    assert_eq!(read(&a.join("labels.csv")).lines().count(), 1 + 3 * 60);
    assert!(read(&a.join("latent.csv")).lines().count() > 1);
    for name in ["subject_1.txt", "subject_2.txt", "subject_3.txt", "labels.csv", "latent.csv"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn fit_eval_rules_and_export_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let h = Hyperparams { a: 0.1, b: 0.1, c: vec![0.1; 3], k: 3, j: 1 };
    let paths = write_group(tmp.path(), &h, 96, 60, 3, 5.0, 777);
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "[fit]\nmax_iters = 100\nmin_iters = 10\nrel_tol = 1e-7\n\n[paths]\n{}\n",
            subjects_toml(&paths)
        ),
    )
    .unwrap();
    let out_dir = tmp.path().join("out");
    let cfg_s = cfg.to_str().unwrap();
    let out_s = out_dir.to_str().unwrap();

    assert_ok(&run(&["fit", "--config", cfg_s, "--out", out_s]));
    for name in ["posterior.csv", "trace.csv", "bases.csv", "manifest.json"] {
        assert!(out_dir.join(name).is_file(), "{name} missing after fit");
    }
    let elbos = trace_elbos(&out_dir.join("trace.csv"));
    assert!(elbos.len() >= 11, "expected init plus at least min_iters sweeps");
    for pair in elbos.windows(2) {
        assert!(pair[1] >= pair[0] - 1e-8 * pair[0].abs(), "trace not monotone");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&out_dir.join("manifest.json"))).unwrap();
    assert!(manifest["iterations"].as_u64().unwrap() >= 10);
    assert!(manifest["final_elbo"].as_f64().unwrap().is_finite());

    assert_ok(&run(&["eval", "--config", cfg_s, "--out", out_s]));
    let report: serde_json::Value =
        serde_json::from_str(&read(&out_dir.join("eval.json"))).unwrap();
    let acc = report["pooled_accuracy"].as_f64().unwrap();
    assert!(acc >= 0.9, "pooled accuracy {acc} below 0.9 on separated data");

    // argmin and argmax disagree on every frame when scores are distinct
    assert_ok(&run(&["predict", "--config", cfg_s, "--out", out_s, "--rule", "argmin"]));
    let near = prediction_labels(&out_dir.join("predictions.csv"));
    assert_ok(&run(&["predict", "--config", cfg_s, "--out", out_s, "--rule", "argmax"]));
    let far = prediction_labels(&out_dir.join("predictions.csv"));
    assert_eq!(near.len(), far.len());
    assert_eq!(near.len(), 3 * 60);
    for (a, b) in near.iter().zip(&far) {
        assert_eq!((a.0, a.1), (b.0, b.1));
        assert_ne!(a.2, b.2, "argmin and argmax agree at subject {} frame {}", a.0, a.1);
    }

    // export-bases regenerates bases.csv bitwise from the saved posterior
    let saved = fs::read(out_dir.join("bases.csv")).unwrap();
    fs::remove_file(out_dir.join("bases.csv")).unwrap();
    assert_ok(&run(&["export-bases", "--config", cfg_s, "--out", out_s]));
    assert_eq!(saved, fs::read(out_dir.join("bases.csv")).unwrap());
}

#[test]
fn iteration_bounds_shape_the_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let h = Hyperparams { a: 0.1, b: 0.1, c: vec![0.1; 3], k: 3, j: 1 };
    let paths = write_group(tmp.path(), &h, 12, 15, 2, 1.0, 11);
    let base = format!(
        "[schema]\nfeature_count = 12\n\n[layout]\nchannels = 1\nbins_per_channel = 12\n\n[paths]\n{}\n",
        subjects_toml(&paths)
    );

    // a single sweep leaves exactly init + 1 trace points
    let cfg = tmp.path().join("one.toml");
    fs::write(&cfg, format!("[fit]\nmax_iters = 1\nmin_iters = 1\n\n{base}")).unwrap();
    let out_dir = tmp.path().join("one");
    assert_ok(&run(&["fit", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]));
    assert_eq!(trace_elbos(&out_dir.join("trace.csv")).len(), 2);

    // a huge tolerance stops at min_iters, never before
    let cfg = tmp.path().join("loose.toml");
    fs::write(&cfg, format!("[fit]\nmax_iters = 50\nmin_iters = 4\nrel_tol = 1e9\n\n{base}"))
        .unwrap();
    let out_dir = tmp.path().join("loose");
    assert_ok(&run(&["fit", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]));
    assert_eq!(trace_elbos(&out_dir.join("trace.csv")).len(), 5);
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&out_dir.join("manifest.json"))).unwrap();
    assert_eq!(manifest["iterations"].as_u64(), Some(4));
}

#[test]
fn learning_curve_output_is_shaped_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let h = Hyperparams { a: 0.1, b: 0.1, c: vec![0.1; 3], k: 3, j: 1 };
    let paths = write_group(tmp.path(), &h, 12, 16, 2, 3.0, 21);
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "[fit]\nmax_iters = 10\nmin_iters = 2\n\n[schema]\nfeature_count = 12\n\n\
             [layout]\nchannels = 1\nbins_per_channel = 12\n\n\
             [learning_curve]\nfractions = [0.5, 1.0]\ntest_fraction = 0.25\n\n[paths]\n{}\n",
            subjects_toml(&paths)
        ),
    )
    .unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        assert_ok(&run(&[
            "learning-curve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ]));
    }
    let text = read(&a.join("learning_curve.csv"));
    // header + |fractions| x (subjects + pooled)
    assert_eq!(text.lines().count(), 1 + 2 * (2 + 1));
    assert_eq!(
        fs::read(a.join("learning_curve.csv")).unwrap(),
        fs::read(b.join("learning_curve.csv")).unwrap()
    );
}

#[test]
fn exit_codes_distinguish_config_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();

    // K = 2 with the default three-entry activation prior is a config error
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[model]\nk = 2\n").unwrap();
    let out = run(&["fit", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    // a missing subject file is a data error
    let cfg = tmp.path().join("missing.toml");
    fs::write(
        &cfg,
        format!("[paths]\nsubjects = [\"{}\"]\n", tmp.path().join("nope.txt").display()),
    )
    .unwrap();
    let out = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    // predict without a saved posterior is likewise a data error
    let out = run(&["predict", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}
