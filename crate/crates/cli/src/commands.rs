use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use rdalloc::classifier::train_and_evaluate;
use rdalloc::clustering::{error_vs_k_sweep, fit_cluster_model, KMeansConfig};
use rdalloc::evaluation::{
    actual_sweeps, baseline_sweep_expected, bd_rate, optimal_sweep_expected, oracle_sweep_actual,
    pair_with_crfs, predict_for_samples, Sweep,
};
use rdalloc::io::{
    join_labels, read_features, read_labels, read_rd_samples, write_features, write_labels,
    write_rd_samples,
};
use rdalloc::synth::{generate, SynthConfig};
use rdalloc::{
    estimate_weights, exhaustive_allocation, solve_allocation, ClassifierModel, ClusterModel,
    CorpusDistribution, QualityConstraints,
};

use crate::output::Outputs;
use crate::{
    ClassifyArgs, Cli, ClusterArgs, Command, EvaluateArgs, GenerateArgs, OptimizeArgs, TrainArgs,
    WeightsArgs,
};

/// Runs one command and returns the paths it wrote.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let seed = cli.seed.unwrap_or(0);
    let out = |name: &str| cli.out_dir.join(name);
    let outputs = match &cli.command {
        Command::Generate(a) => cmd_generate(a, cli.seed, out)?,
        Command::Cluster(a) => cmd_cluster(a, seed, out)?,
        Command::Train(a) => cmd_train(a, seed, out)?,
        Command::Classify(a) => cmd_classify(a, out)?,
        Command::Weights(a) => cmd_weights(a, out)?,
        Command::Optimize(a) => cmd_optimize(a, out)?,
        Command::Evaluate(a) => cmd_evaluate(a, out)?,
    };
    let paths = outputs.paths().map(Path::to_path_buf).collect();
    outputs.commit()?;
    Ok(paths)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn in_file<T>(path: &Path, r: rdalloc::Result<T>) -> Result<T> {
    r.with_context(|| format!("reading {}", path.display()))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> rdalloc::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn cmd_generate(
    a: &GenerateArgs,
    seed: Option<u64>,
    out: impl Fn(&str) -> PathBuf,
) -> Result<Outputs> {
    let cfg = match &a.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut cfg = in_file(path, SynthConfig::from_json(&text))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg
        }
        None => SynthConfig::default_corpus(a.n_chunks, seed.unwrap_or(0)),
    };
    let corpus = generate(&cfg)?;
    let labels: Vec<(String, usize)> = corpus
        .samples
        .iter()
        .zip(&corpus.labels)
        .map(|(s, &l)| (s.chunk_id.clone(), l))
        .collect();
    let mut outputs = Outputs::new();
    outputs.add(
        out("rd_samples.csv"),
        csv_bytes(|w| write_rd_samples(w, &corpus.grid, &corpus.samples))?,
    );
    outputs.add(
        out("features.csv"),
        csv_bytes(|w| write_features(w, &corpus.features))?,
    );
    outputs.add(
        out("labels.csv"),
        csv_bytes(|w| write_labels(w, "true_cluster", &labels))?,
    );
    Ok(outputs)
}

fn cmd_cluster(a: &ClusterArgs, seed: u64, out: impl Fn(&str) -> PathBuf) -> Result<Outputs> {
    let (grid, samples) = in_file(&a.rd, read_rd_samples(open(&a.rd)?))?;
    if samples.len() < a.k {
        bail!("{} chunks cannot form {} clusters", samples.len(), a.k);
    }
    let cfg = KMeansConfig::new(a.k, seed);
    let (model, vectors, fit) = fit_cluster_model(&samples, &grid, &cfg)?;
    let labels: Vec<(String, usize)> = samples
        .iter()
        .zip(&fit.assignment.labels)
        .map(|(s, &l)| (s.chunk_id.clone(), l))
        .collect();
    let mut outputs = Outputs::new();
    let mut json = model.to_json()?.into_bytes();
    json.push(b'\n');
    outputs.add(out("cluster_model.json"), json);
    outputs.add(
        out("cluster_labels.csv"),
        csv_bytes(|w| write_labels(w, "cluster", &labels))?,
    );
    if let Some(max_k) = a.sweep_max_k {
        if max_k == 0 || max_k > samples.len() {
            bail!(
                "--sweep-max-k must be between 1 and the number of chunks ({})",
                samples.len()
            );
        }
        let ks: Vec<usize> = (1..=max_k).collect();
        let sweep = error_vs_k_sweep(&vectors, &ks, &cfg)?;
        let mut text = String::from("k,mean_relative_error\n");
        for (k, e) in sweep {
            text.push_str(&format!("{k},{e}\n"));
        }
        outputs.add(out("k_sweep.csv"), text.into_bytes());
    }
    Ok(outputs)
}

fn cmd_train(a: &TrainArgs, seed: u64, out: impl Fn(&str) -> PathBuf) -> Result<Outputs> {
    let features = in_file(&a.features, read_features(open(&a.features)?))?;
    let labels = in_file(&a.labels, read_labels(open(&a.labels)?))?;
    let dataset = join_labels(&features, &labels).context("joining features with labels")?;
    let (model, report) =
        train_and_evaluate(&dataset, a.split, a.folds, &a.c_grid, &a.gamma_grid, seed)?;
    let mut outputs = Outputs::new();
    let mut json = model.to_json()?.into_bytes();
    json.push(b'\n');
    outputs.add(out("classifier_model.json"), json);
    outputs.add_json(out("train_report.json"), &report)?;
    Ok(outputs)
}

fn cmd_classify(a: &ClassifyArgs, out: impl Fn(&str) -> PathBuf) -> Result<Outputs> {
    let features = in_file(&a.features, read_features(open(&a.features)?))?;
    let model = in_file(&a.model, ClassifierModel::load(&a.model))?;
    let predictions = features
        .iter()
        .map(|f| Ok((f.chunk_id.clone(), model.predict_feature(f)?)))
        .collect::<rdalloc::Result<Vec<_>>>()?;
    let mut outputs = Outputs::new();
    outputs.add(
        out("predictions.csv"),
        csv_bytes(|w| write_labels(w, "cluster", &predictions))?,
    );
    Ok(outputs)
}

fn cmd_weights(a: &WeightsArgs, out: impl Fn(&str) -> PathBuf) -> Result<Outputs> {
    let predictions = in_file(&a.predictions, read_labels(open(&a.predictions)?))?;
    let ids: Vec<usize> = predictions.iter().map(|(_, l)| *l).collect();
    let weights = estimate_weights(&ids, a.k)?;
    let mut counts = vec![0usize; a.k];
    for &l in &ids {
        counts[l] += 1;
    }
    let mut histogram = String::from("cluster,count,weight\n");
    for (l, (c, w)) in counts.iter().zip(&weights.weights).enumerate() {
        histogram.push_str(&format!("{l},{c},{w}\n"));
    }
    let mut outputs = Outputs::new();
    outputs.add_json(out("weights.json"), &weights)?;
    outputs.add(out("cluster_histogram.csv"), histogram.into_bytes());
    Ok(outputs)
}

fn load_weights(path: &Path) -> Result<CorpusDistribution> {
    let raw: CorpusDistribution = serde_json::from_reader(open(path)?)
        .with_context(|| format!("reading {}", path.display()))?;
    in_file(path, CorpusDistribution::new(raw.weights))
}

fn cmd_optimize(a: &OptimizeArgs, out: impl Fn(&str) -> PathBuf) -> Result<Outputs> {
    let model = in_file(&a.model, ClusterModel::load(&a.model))?;
    let weights = load_weights(&a.weights)?;
    let constraints = QualityConstraints {
        min_avg_quality: a.min_avg_quality,
        min_worst_quality: a.min_worst_quality,
    };
    let solution = if a.exhaustive {
        exhaustive_allocation(&model, &weights, &constraints)?
    } else {
        solve_allocation(&model, &weights, &constraints)?
    };
    let mut outputs = Outputs::new();
    outputs.add_json(out("allocation.json"), &solution)?;
    Ok(outputs)
}

#[derive(Serialize)]
struct BdRateEntry {
    pair: String,
    bd_rate_percent: f64,
}

fn cmd_evaluate(a: &EvaluateArgs, out: impl Fn(&str) -> PathBuf) -> Result<Outputs> {
    let model = in_file(&a.cluster_model, ClusterModel::load(&a.cluster_model))?;
    let weights = load_weights(&a.weights)?;
    let (grid, samples) = in_file(&a.rd, read_rd_samples(open(&a.rd)?))?;
    if grid != model.grid {
        bail!(
            "{} uses grid {:?} but the cluster model was fit on {:?}",
            a.rd.display(),
            grid.points(),
            model.grid.points()
        );
    }
    let features = in_file(&a.features, read_features(open(&a.features)?))?;
    let classifier = in_file(&a.classifier, ClassifierModel::load(&a.classifier))?;
    let ladder = a
        .crf
        .clone()
        .unwrap_or_else(|| model.grid.points().to_vec());

    let baseline = baseline_sweep_expected(&model, &weights, &ladder)?;
    let (optimal, solutions) = optimal_sweep_expected(&model, &weights, &baseline)?;
    let plan = pair_with_crfs(&ladder, &baseline, &solutions)?;
    // with one cluster there is nothing to predict
    let predicted = if model.k == 1 {
        vec![0; samples.len()]
    } else {
        predict_for_samples(&samples, &features, &classifier)?
    };
    let (baseline_actual, optimal_actual) =
        actual_sweeps(&samples, &predicted, &model.grid, &plan)?;
    let oracle = oracle_sweep_actual(&samples, &baseline_actual)?;

    let sweeps = [
        &baseline,
        &optimal,
        &baseline_actual,
        &optimal_actual,
        &oracle,
    ];
    let mut csv = String::from("kind,label,avg_rate_kbps,avg_quality_db,worst_quality_db\n");
    for sweep in sweeps {
        for p in &sweep.points {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                sweep.kind.as_str(),
                p.label,
                p.avg_rate,
                p.avg_quality,
                p.worst_quality
            ));
        }
    }
    let entry = |test: &Sweep, reference: &Sweep| -> Result<BdRateEntry> {
        Ok(BdRateEntry {
            pair: format!("{}_vs_{}", test.kind.as_str(), reference.kind.as_str()),
            bd_rate_percent: bd_rate(reference, test)?,
        })
    };
    let report = vec![
        entry(&optimal, &baseline)?,
        entry(&optimal_actual, &baseline_actual)?,
        entry(&oracle, &baseline_actual)?,
    ];
    let mut outputs = Outputs::new();
    outputs.add(out("sweeps.csv"), csv.into_bytes());
    outputs.add_json(out("bdrate.json"), &report)?;
    Ok(outputs)
}
