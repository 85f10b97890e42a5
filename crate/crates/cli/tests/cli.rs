use std::path::Path;
use std::process::{Command, Output};

fn stgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stgraph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path, samples: usize) {
    let out = stgraph(&[
        "synth", "--rows", "6", "--cols", "6", "--regions", "2", "--genes-per-region", "2",
        "--embedding-dim", "4", "--dropout", "0.3", "--samples", &samples.to_string(),
        "--out", dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_writes_standard_files() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 2);
    for id in ["synth00", "synth01"] {
        for ext in ["spots.tsv", "expr.tsv", "emb.tsv", "labels.tsv"] {
            assert!(dir.path().join(format!("{id}.{ext}")).is_file(), "{id}.{ext}");
        }
    }
}

#[test]
fn pipeline_with_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 3);
    let out = dir.path().join("out");
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "data_dir = {:?}\nout_dir = {:?}\ncluster_size = 12\nheads = 2\nhead_dim = 3\nepochs = 2\nreplicates = 1\nfolds = 3\n",
            data.to_str().unwrap(),
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    let run = stgraph(&["pipeline", "--config", config.to_str().unwrap(), "--epochs", "3"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("3 samples"), "{stdout}");
    assert!(stdout.contains("cross-validation"), "{stdout}");
    let snapshot = std::fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(snapshot.contains("epochs = 3"), "flag should override the file: {snapshot}");
    for f in ["model.ckpt", "metrics.tsv", "cv.tsv", "heatmaps/synth00.R0G0.png"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }

    // The checkpoint evaluates to the same training metrics.
    let eval_dir = dir.path().join("eval");
    let eval = stgraph(&[
        "eval", "--config", config.to_str().unwrap(), "--out-dir", eval_dir.to_str().unwrap(),
        "--checkpoint", out.join("model.ckpt").to_str().unwrap(),
    ]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    assert_eq!(
        std::fs::read(out.join("metrics.tsv")).unwrap(),
        std::fs::read(eval_dir.join("metrics.tsv")).unwrap()
    );
}

#[test]
fn single_sample_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 1);
    let p = |ext: &str| dir.path().join(format!("synth00.{ext}")).to_str().unwrap().to_string();
    let input = ["--spots".to_string(), p("spots.tsv"), "--expr".into(), p("expr.tsv"), "--embeddings".into(), p("emb.tsv")];
    let input: Vec<&str> = input.iter().map(String::as_str).collect();
    let out = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    let mut args = vec!["smooth"];
    args.extend(&input);
    let smoothed = out("smoothed.tsv");
    args.extend(["--method", "8n", "--out", &smoothed]);
    let r = stgraph(&args);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(Path::new(&smoothed).is_file());

    let mut args = vec!["cluster"];
    args.extend(&input);
    let clusters = out("clusters.tsv");
    args.extend(["--size", "9", "--out", &clusters]);
    assert!(stgraph(&args).status.success());
    let text = std::fs::read_to_string(&clusters).unwrap();
    assert_eq!(text.lines().count(), 37);

    let mut args = vec!["build-graph"];
    args.extend(&input);
    let edges = out("edges.tsv");
    args.extend(["--size", "9", "--out", &edges]);
    assert!(stgraph(&args).status.success());
    assert!(std::fs::read_to_string(&edges).unwrap().starts_with("src\tdst\tkind"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let r = stgraph(&["pipeline", "--no-such-flag"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn too_few_samples_for_cv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 6);
    let r = stgraph(&[
        "cv", "--data-dir", data.to_str().unwrap(), "--out-dir", dir.path().join("out").to_str().unwrap(),
        "--folds", "8", "--epochs", "1", "--heads", "2", "--head-dim", "2",
    ]);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("fewer samples than folds"), "{err}");
}

#[test]
fn missing_data_dir_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let r = stgraph(&["train", "--data-dir", dir.path().join("absent").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(4), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn unknown_heatmap_gene_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 1);
    let out = dir.path().join("out");
    let r = stgraph(&[
        "pipeline", "--data-dir", data.to_str().unwrap(), "--out-dir", out.to_str().unwrap(),
        "--epochs", "1", "--heads", "2", "--head-dim", "2", "--replicates", "1", "--heatmap-gene", "FASN",
    ]);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("FASN") && err.contains("R0G0"), "{err}");
}

#[test]
fn version_reports_build_details() {
    let short = stgraph(&["--version"]);
    assert!(short.status.success());
    assert!(String::from_utf8_lossy(&short.stdout).starts_with("stgraph "));
}
