use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use treematch::config::{file_sha256, PipelineConfig};
use treematch::data::{self, IngestedData, LabelMap, SplitRule, TestQuery};
use treematch::eval::{bench_latency, mean_recall, EvalReport};
use treematch::indexer::ClusterChain;
use treematch::inference::Prediction;
use treematch::model_dir::{ModelBundle, RunManifest};
use treematch::par::Executor;
use treematch::pipeline::{self, Bm25Baseline};
use treematch::synth::{self, SynthConfig};
use treematch::text::Vocabulary;
use treematch::{Error, Result};

use crate::{
    BenchArgs, BuildTreeArgs, EvaluateArgs, FitVectorizerArgs, IngestArgs, PredictArgs, PruneArgs, SearchArgs,
    SynthArgs, TrainArgs,
};

const QUERIES_FILE: &str = "queries.txt";
const Y_FILE: &str = "Y.csr";
const LABELS_FILE: &str = "labels.tsv";
const TEST_FILE: &str = "test.tsv";

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// `<file>.manifest.json` next to a single-file output.
fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

/// Query texts: one per line, anything after a tab dropped.
fn read_queries(path: &Path) -> Result<Vec<String>> {
    Ok(read(path)?
        .lines()
        .map(|l| l.split('\t').next().unwrap_or("").to_string())
        .collect())
}

fn load_training_dir(dir: &Path) -> Result<IngestedData> {
    let queries: Vec<String> = read(&dir.join(QUERIES_FILE))?.lines().map(str::to_string).collect();
    let y = data::read_csr(&dir.join(Y_FILE))?;
    let labels = LabelMap::load(&dir.join(LABELS_FILE))?;
    if queries.len() != y.n_rows() || labels.len() != y.n_cols() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            msg: format!(
                "{} queries, {}x{} Y and {} labels do not fit together",
                queries.len(),
                y.n_rows(),
                y.n_cols(),
                labels.len()
            ),
        });
    }
    Ok(IngestedData { queries, y, labels })
}

fn training_dir_hashes(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for f in [QUERIES_FILE, Y_FILE, LABELS_FILE] {
        out.insert(format!("data/{f}"), file_sha256(&dir.join(f))?);
    }
    Ok(out)
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    let catalog = match &a.catalog {
        Some(p) => Some(data::read_catalog(p)?.0),
        None => None,
    };
    let rule = match (a.test_fraction, a.split_column, &a.split_at) {
        (Some(f), _, _) => Some(SplitRule::Random {
            test_fraction: f,
            seed: a.seed,
        }),
        (None, Some(column), Some(cutoff)) => Some(SplitRule::Column {
            column,
            cutoff: cutoff.clone(),
        }),
        _ => None,
    };
    mkdir(&a.out)?;
    let mut manifest = RunManifest::new("ingest")
        .param("threshold", a.threshold)
        .input("pairs", &a.pairs)?;
    if let Some(c) = &a.catalog {
        manifest = manifest.input("catalog", c)?;
    }
    let ingested = match &rule {
        None => data::ingest_pairs(&a.pairs, a.threshold, catalog.as_ref())?,
        Some(rule) => {
            manifest = manifest.param("split", format!("{rule:?}"));
            let (train, test) = data::split_pairs(&a.pairs, rule)?;
            let test = data::test_set_from_lines(&a.pairs, &test, a.threshold)?;
            data::write_test_set(&a.out.join(TEST_FILE), &test)?;
            info!("held out {} test queries", test.len());
            data::ingest_lines(&a.pairs, &train, a.threshold, catalog.as_ref())?
        }
    };
    let mut queries = ingested.queries.join("\n");
    queries.push('\n');
    write(&a.out.join(QUERIES_FILE), queries)?;
    data::write_csr(&a.out.join(Y_FILE), &ingested.y)?;
    ingested.labels.save(&a.out.join(LABELS_FILE))?;
    info!(
        "{} queries, {} labels, {} positive pairs",
        ingested.y.n_rows(),
        ingested.y.n_cols(),
        ingested.y.nnz()
    );
    for f in [QUERIES_FILE, Y_FILE, LABELS_FILE, TEST_FILE] {
        let p = a.out.join(f);
        if p.exists() {
            manifest = manifest.output(f, &p)?;
        }
    }
    manifest.save(&a.out.join("manifest.json"))
}

pub fn fit_vectorizer(a: FitVectorizerArgs, executor: &Executor) -> Result<()> {
    let config = load_config(a.config.as_deref())?;
    let mut manifest = RunManifest::new("fit-vectorizer").param("config_sha256", config.sha256());
    let corpus = match (&a.data, &a.corpus) {
        (Some(dir), _) => {
            manifest.inputs.extend(training_dir_hashes(dir)?);
            load_training_dir(dir)?.queries
        }
        (None, Some(file)) => {
            manifest = manifest.input("corpus", file)?;
            read(file)?.lines().map(str::to_string).collect()
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let vocab = Vocabulary::fit_with(&corpus, &config.vectorizer, executor)?;
    info!("vocabulary of {} features from {} documents", vocab.dim(), vocab.n_docs());
    write(&a.out, vocab.to_text())?;
    manifest.output("vocab", &a.out)?.save(&sidecar(&a.out))
}

pub fn build_tree(a: BuildTreeArgs, executor: &Executor) -> Result<()> {
    let config = load_config(a.config.as_deref())?;
    let data = load_training_dir(&a.data)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let x = vocab.transform_batch(&data.queries, executor);
    let chain = pipeline::index_labels(&x, &data.y, &config, executor)?;
    info!("label tree widths {:?}", chain.widths());
    write(&a.out, chain.to_text())?;
    let mut manifest = RunManifest::new("build-tree").param("config_sha256", config.sha256());
    manifest.inputs.extend(training_dir_hashes(&a.data)?);
    manifest
        .input("vocab", &a.vocab)?
        .output("chain", &a.out)?
        .save(&sidecar(&a.out))
}

pub fn train(a: TrainArgs, executor: &Executor) -> Result<()> {
    let config = load_config(a.config.as_deref())?;
    let mut inputs = BTreeMap::new();
    let data = match &a.data {
        Some(dir) => {
            inputs.extend(training_dir_hashes(dir)?);
            load_training_dir(dir)?
        }
        None => {
            let pairs = config.data.pairs.as_ref().ok_or_else(|| {
                Error::Config(vec!["data.pairs must be set when --data is not given".to_string()])
            })?;
            inputs.insert("pairs".into(), file_sha256(pairs)?);
            let catalog = match &config.data.catalog {
                Some(p) => {
                    inputs.insert("catalog".into(), file_sha256(p)?);
                    Some(data::read_catalog(p)?.0)
                }
                None => None,
            };
            data::ingest_pairs(pairs, config.data.threshold, catalog.as_ref())?
        }
    };

    let (vocab, x) = match &a.vocab {
        Some(p) => {
            inputs.insert("vocab".into(), file_sha256(p)?);
            let vocab = Vocabulary::load(p)?;
            let x = vocab.transform_batch(&data.queries, executor);
            (vocab, x)
        }
        None => pipeline::featurize(&data, &config, executor)?,
    };
    let chain = match &a.chain {
        Some(p) => {
            inputs.insert("chain".into(), file_sha256(p)?);
            ClusterChain::load(p)?
        }
        None => pipeline::index_labels(&x, &data.y, &config, executor)?,
    };
    info!(
        "training on {} queries, {} features, tree widths {:?}",
        x.n_rows(),
        x.n_cols(),
        chain.widths()
    );
    let (bundle, report) = pipeline::train_model(vocab, &x, &data, chain, &config, inputs, executor)?;
    for l in &report.layers {
        info!(
            "layer {}: {} columns, {} active instances, {} empty, {} unconverged, nnz {}, objective {:.4}",
            l.layer, l.columns, l.active_total, l.empty_columns, l.unconverged_columns, l.nnz, l.objective
        );
    }
    bundle.save(&a.out)?;
    info!("model written to {}", a.out.display());
    Ok(())
}

pub fn prune(a: PruneArgs) -> Result<()> {
    if !(a.epsilon >= 0.0 && a.epsilon.is_finite()) {
        return Err(Error::Config(vec![format!("epsilon must be >= 0, got {}", a.epsilon)]));
    }
    let bundle = ModelBundle::load(&a.model)?;
    let before = bundle.model.nnz();
    let pruned = bundle.pruned(a.epsilon)?;
    info!(
        "nnz {} -> {} at epsilon {}",
        before,
        pruned.model.nnz(),
        pruned.config.train.prune_epsilon
    );
    pruned.save(&a.out)?;
    Ok(())
}

fn load_model(path: &Path, search: &SearchArgs) -> Result<ModelBundle> {
    let mut bundle = ModelBundle::load(path)?;
    if let Some(act) = search.activation {
        bundle.model.set_activation(act);
    }
    Ok(bundle)
}

fn check_search(search: &SearchArgs) -> Result<()> {
    let mut errs = Vec::new();
    if search.beam == Some(0) {
        errs.push("beam must be >= 1".to_string());
    }
    if search.k == 0 {
        errs.push("k must be >= 1".to_string());
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errs))
    }
}

pub fn predict(a: PredictArgs, executor: &Executor) -> Result<()> {
    check_search(&a.search)?;
    let bundle = load_model(&a.model, &a.search)?;
    let texts = read_queries(&a.queries)?;
    let beam = a.search.beam.unwrap_or(bundle.model.default_beam());
    let preds = if a.exact {
        let xs = bundle.featurize(&texts, executor);
        executor.map(xs.len(), |i| bundle.model.exact_predict(&xs[i], a.search.k))
    } else {
        bundle.predict(&texts, beam, a.search.k, executor)
    };
    write(&a.out, data::format_predictions(&preds, &bundle.labels))?;
    info!("wrote predictions for {} queries", preds.len());
    RunManifest::new("predict")
        .param("beam", if a.exact { "exact".to_string() } else { beam.to_string() })
        .param("k", a.search.k)
        .param("activation", bundle.model.activation().name())
        .input("model_manifest", &a.model.join("manifest.json"))?
        .input("queries", &a.queries)?
        .output("predictions", &a.out)?
        .save(&sidecar(&a.out))
}

/// Predictions and relevant sets mapped into one label id space.
fn external_predictions(
    file: &Path,
    test: &[TestQuery],
) -> Result<(Vec<Prediction>, Vec<std::collections::HashSet<u32>>)> {
    let parsed = data::read_predictions(file)?;
    if let Some((&q, _)) = parsed.range(test.len()..).next() {
        return Err(Error::InvalidInput(format!(
            "predictions mention query {q} but the test set has {} queries",
            test.len()
        )));
    }
    let mut labels = LabelMap::new();
    let preds = (0..test.len())
        .map(|q| {
            let mut p = Prediction::default();
            for (id, score) in parsed.get(&q).into_iter().flatten() {
                p.labels.push(labels.intern(id));
                p.scores.push(*score);
            }
            p
        })
        .collect();
    let truths = pipeline::truth_sets(test, &labels);
    Ok((preds, truths))
}

fn write_report(dir: &Path, report: &EvalReport, manifest: RunManifest) -> Result<()> {
    mkdir(dir)?;
    let text = report.to_text();
    print!("{text}");
    write(&dir.join("report.txt"), text)?;
    write(&dir.join("report.kv"), report.to_key_values())?;
    manifest
        .output("report.txt", &dir.join("report.txt"))?
        .output("report.kv", &dir.join("report.kv"))?
        .save(&dir.join("manifest.json"))
}

pub fn evaluate(a: EvaluateArgs, executor: &Executor) -> Result<()> {
    check_search(&a.search)?;
    if a.ks.contains(&0) {
        return Err(Error::Config(vec!["every k in --ks must be >= 1".into()]));
    }
    let test = data::read_test_set(&a.test)?;
    let texts: Vec<String> = test.iter().map(|q| q.text.clone()).collect();
    let k_max = a.ks.iter().copied().max().unwrap_or(a.search.k);
    let mut manifest = RunManifest::new("evaluate").input("test", &a.test)?;
    let mut settings: BTreeMap<String, String> = BTreeMap::new();
    let recall = if let Some(model) = &a.model {
        let bundle = load_model(model, &a.search)?;
        let beam = a.search.beam.unwrap_or(bundle.model.default_beam());
        settings.insert("method".into(), "tree".into());
        settings.insert("beam".into(), beam.to_string());
        settings.insert("activation".into(), bundle.model.activation().name().into());
        manifest = manifest.input("model_manifest", &model.join("manifest.json"))?;
        let preds = bundle.predict(&texts, beam, k_max, executor);
        pipeline::evaluate_predictions(&preds, &test, &bundle.labels, &a.ks)
    } else if let Some(file) = &a.predictions {
        settings.insert("method".into(), "predictions-file".into());
        manifest = manifest.input("predictions", file)?;
        let (preds, truths) = external_predictions(file, &test)?;
        mean_recall(&preds, &truths, &a.ks)
    } else if let Some(catalog) = &a.bm25_catalog {
        let (labels, titles) = data::read_catalog(catalog)?;
        let baseline = Bm25Baseline::new(labels, &titles, &PipelineConfig::default())?;
        let p = baseline.index.params();
        settings.insert("method".into(), "bm25".into());
        settings.insert("bm25.k1".into(), p.k1.to_string());
        settings.insert("bm25.b".into(), p.b.to_string());
        manifest = manifest.input("catalog", catalog)?;
        let preds = baseline.predict(&texts, k_max, executor);
        pipeline::evaluate_predictions(&preds, &test, &baseline.labels, &a.ks)
    } else {
        return Err(Error::Config(vec![
            "one of --model, --predictions or --bm25-catalog is required".into(),
        ]));
    };
    for (k, v) in &settings {
        manifest = manifest.param(k, v);
    }
    let report = EvalReport {
        recall,
        latency: None,
        config: settings,
    };
    write_report(&a.out, &report, manifest)
}

pub fn bench(a: BenchArgs) -> Result<()> {
    check_search(&a.search)?;
    let texts = read_queries(&a.queries)?;
    if texts.len() < 100 {
        return Err(Error::InvalidInput(format!(
            "latency benchmarks need at least 100 queries, got {}",
            texts.len()
        )));
    }
    let mut manifest = RunManifest::new("bench")
        .input("queries", &a.queries)?
        .param("warmup", a.warmup)
        .param("repetitions", a.repetitions);
    let mut settings: BTreeMap<String, String> = BTreeMap::new();
    settings.insert("threads".into(), "1".into());
    let latency = if let Some(model) = &a.model {
        let bundle = load_model(model, &a.search)?;
        let beam = a.search.beam.unwrap_or(bundle.model.default_beam());
        settings.insert("method".into(), "tree".into());
        settings.insert("beam".into(), beam.to_string());
        settings.insert("k".into(), a.search.k.to_string());
        manifest = manifest.input("model_manifest", &model.join("manifest.json"))?;
        bench_latency(&texts, a.warmup, a.repetitions, |q| {
            let x = bundle.vocab.transform(q);
            std::hint::black_box(bundle.model.beam_search(&x, beam, a.search.k));
        })
    } else if let Some(catalog) = &a.bm25_catalog {
        let (labels, titles) = data::read_catalog(catalog)?;
        let baseline = Bm25Baseline::new(labels, &titles, &PipelineConfig::default())?;
        settings.insert("method".into(), "bm25".into());
        settings.insert("k".into(), a.search.k.to_string());
        manifest = manifest.input("catalog", catalog)?;
        bench_latency(&texts, a.warmup, a.repetitions, |q| {
            std::hint::black_box(baseline.index.top_k(q, a.search.k));
        })
    } else {
        return Err(Error::Config(vec!["one of --model or --bm25-catalog is required".into()]));
    };
    for (k, v) in &settings {
        manifest = manifest.param(k, v);
    }
    let report = EvalReport {
        recall: Default::default(),
        latency: Some(latency),
        config: settings,
    };
    write_report(&a.out, &report, manifest)
}

pub fn synth_data(a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        seed: a.seed,
        n_labels: a.n_labels,
        n_queries: a.n_queries,
        synonym_rate: a.synonym_rate,
        test_fraction: a.test_fraction,
        ..SynthConfig::default()
    };
    let dataset = synth::generate(&config)?;
    dataset.write(&a.out)?;
    info!(
        "{} labels, {} training and {} test queries in {}",
        dataset.n_labels(),
        dataset.train_queries().count(),
        dataset.test_queries().count(),
        a.out.display()
    );
    let mut manifest = RunManifest::new("synth-data");
    for (k, v) in [
        ("seed", a.seed.to_string()),
        ("n_labels", a.n_labels.to_string()),
        ("n_queries", a.n_queries.to_string()),
        ("synonym_rate", a.synonym_rate.to_string()),
        ("test_fraction", a.test_fraction.to_string()),
    ] {
        manifest = manifest.param(k, v);
    }
    for f in ["labels.tsv", "pairs.tsv", "test.tsv"] {
        manifest = manifest.output(f, &a.out.join(f))?;
    }
    manifest.save(&a.out.join("manifest.json"))
}
