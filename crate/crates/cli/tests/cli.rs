use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treematch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// The bundled synthetic dataset and config laid out as in the repository,
/// plus one trained model, shared by every test.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn root(&self) -> &Path {
        self.dir.path()
    }
    fn data(&self, name: &str) -> PathBuf {
        self.root().join("data/synthetic").join(name)
    }
    fn config(&self) -> PathBuf {
        self.root().join("configs/synthetic.toml")
    }
    fn model(&self) -> PathBuf {
        self.root().join("model")
    }
}

fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml");
        fs::create_dir_all(f.config().parent().unwrap()).unwrap();
        fs::copy(shipped, f.config()).unwrap();
        ok(&["-q", "synth-data", "--out", p(&f.root().join("data/synthetic"))]);
        ok(&["-q", "train", "--config", p(&f.config()), "--out", p(&f.model())]);
        f
    })
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn key_values(path: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once('=').unwrap();
            (k.to_string(), v.to_string())
        })
        .collect()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn train_predict_evaluate_round_trip() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let preds = out.path().join("preds.tsv");
    let test = f.data("test.tsv");
    ok(&["-q", "predict", "--model", p(&f.model()), "--queries", p(&test), "--out", p(&preds)]);
    assert!(out.path().join("preds.tsv.manifest.json").exists());
    let first = fs::read_to_string(&preds).unwrap();
    let fields: Vec<&str> = first.lines().next().unwrap().split('\t').collect();
    assert_eq!(fields.len(), 3);
    assert_eq!(fields[0], "0");

    let from_preds = out.path().join("eval-preds");
    let from_model = out.path().join("eval-model");
    let stdout = ok(&["evaluate", "--test", p(&test), "--predictions", p(&preds), "--out", p(&from_preds)]).stdout;
    let text = String::from_utf8(stdout).unwrap();
    for k in ["Recall@10", "Recall@50", "Recall@100"] {
        assert!(text.contains(k), "{text}");
    }
    ok(&["-q", "evaluate", "--test", p(&test), "--model", p(&f.model()), "--out", p(&from_model)]);
    let a = key_values(&from_preds.join("report.kv"));
    let b = key_values(&from_model.join("report.kv"));
    for k in ["recall@10", "recall@50", "recall@100"] {
        assert_eq!(a[k], b[k]);
        let v: f64 = a[k].parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    assert!(a["recall@10"].parse::<f64>().unwrap() <= a["recall@100"].parse::<f64>().unwrap());
    assert!(from_model.join("manifest.json").exists());

    let bm25 = out.path().join("eval-bm25");
    ok(&["-q", "evaluate", "--test", p(&test), "--bm25-catalog", p(&f.data("labels.tsv")), "--out", p(&bm25)]);
    assert_eq!(key_values(&bm25.join("report.kv"))["config.method"], "bm25");
}

#[test]
fn training_is_deterministic_across_runs_and_threads() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let expected = dir_contents(&f.model());
    for threads in ["1", "8"] {
        let dir = out.path().join(format!("m{threads}"));
        ok(&["-q", "--threads", threads, "train", "--config", p(&f.config()), "--out", p(&dir)]);
        assert_eq!(dir_contents(&dir), expected, "threads {threads}");
    }
    let preds: Vec<Vec<u8>> = ["1", "8"]
        .iter()
        .map(|t| {
            let path = out.path().join(format!("p{t}.tsv"));
            ok(&["-q", "--threads", t, "predict", "--model", p(&f.model()), "--queries", p(&f.data("test.tsv")), "--out", p(&path)]);
            fs::read(path).unwrap()
        })
        .collect();
    assert_eq!(preds[0], preds[1]);
}

#[test]
fn staged_training_matches_one_shot() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let data = out.path().join("train-data");
    ok(&[
        "-q", "ingest", "--pairs", p(&f.data("pairs.tsv")), "--catalog", p(&f.data("labels.tsv")), "--out", p(&data),
    ]);
    assert!(data.join("manifest.json").exists());
    let vocab = out.path().join("vocab.txt");
    let chain = out.path().join("chain.txt");
    let model = out.path().join("model");
    ok(&["-q", "fit-vectorizer", "--data", p(&data), "--config", p(&f.config()), "--out", p(&vocab)]);
    ok(&["-q", "build-tree", "--data", p(&data), "--vocab", p(&vocab), "--config", p(&f.config()), "--out", p(&chain)]);
    ok(&[
        "-q", "train", "--config", p(&f.config()), "--data", p(&data), "--vocab", p(&vocab), "--chain", p(&chain),
        "--out", p(&model),
    ]);
    let staged = dir_contents(&model);
    let one_shot = dir_contents(&f.model());
    for (name, bytes) in &one_shot {
        if name != "manifest.json" {
            assert_eq!(&staged[name], bytes, "{name}");
        }
    }
}

#[test]
fn prune_composes_to_the_larger_threshold() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let m = |name: &str| out.path().join(name);
    ok(&["-q", "prune", "--model", p(&f.model()), "--epsilon", "0.2", "--out", p(&m("a"))]);
    ok(&["-q", "prune", "--model", p(&m("a")), "--epsilon", "0.3", "--out", p(&m("ab"))]);
    ok(&["-q", "prune", "--model", p(&f.model()), "--epsilon", "0.3", "--out", p(&m("b"))]);
    ok(&["-q", "prune", "--model", p(&m("b")), "--epsilon", "0.2", "--out", p(&m("ba"))]);
    let direct = dir_contents(&m("b"));
    assert_eq!(dir_contents(&m("ab")), direct);
    assert_eq!(dir_contents(&m("ba")), direct);
    let before = fs::metadata(f.model().join("layer-3.csc")).unwrap().len();
    let after = fs::metadata(m("b").join("layer-3.csc")).unwrap().len();
    assert!(after <= before);
}

#[test]
fn exact_prediction_equals_full_beam() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(f.model().join("manifest.json")).unwrap()).unwrap();
    let width = manifest["layers"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l["cols"].as_u64().unwrap())
        .max()
        .unwrap()
        .to_string();
    let exact = out.path().join("exact.tsv");
    let beam = out.path().join("beam.tsv");
    let q = f.data("test.tsv");
    ok(&["-q", "predict", "--model", p(&f.model()), "--queries", p(&q), "--exact", "--out", p(&exact)]);
    ok(&["-q", "predict", "--model", p(&f.model()), "--queries", p(&q), "--beam", &width, "--out", p(&beam)]);
    assert_eq!(fs::read(exact).unwrap(), fs::read(beam).unwrap());
}

#[test]
fn bench_reports_latency() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().join("bench");
    ok(&[
        "-q", "bench", "--model", p(&f.model()), "--queries", p(&f.data("test.tsv")), "--warmup", "10", "--out", p(&dir),
    ]);
    let kv = key_values(&dir.join("report.kv"));
    assert!(kv["latency_median_ms"].parse::<f64>().unwrap() > 0.0);
    assert!(kv["throughput_qps"].parse::<f64>().unwrap() > 0.0);
    assert!(!kv.contains_key("evaluated_queries"));
}

#[test]
fn missing_or_corrupt_model_exits_with_format_error() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let q = f.data("test.tsv");
    let preds = out.path().join("p.tsv");

    let empty = out.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let r = run(&["predict", "--model", p(&empty), "--queries", p(&q), "--out", p(&preds)]);
    assert_eq!(r.status.code(), Some(5), "{}", stderr(&r));
    assert!(stderr(&r).contains("missing model manifest"));

    let copy = out.path().join("copy");
    fs::create_dir(&copy).unwrap();
    for (name, bytes) in dir_contents(&f.model()) {
        fs::write(copy.join(name), bytes).unwrap();
    }
    let mut chain = fs::read(copy.join("chain.txt")).unwrap();
    chain.push(b'\n');
    fs::write(copy.join("chain.txt"), chain).unwrap();
    let r = run(&["predict", "--model", p(&copy), "--queries", p(&q), "--out", p(&preds)]);
    assert_eq!(r.status.code(), Some(5), "{}", stderr(&r));

    let manifest = fs::read_to_string(f.model().join("manifest.json")).unwrap();
    fs::write(copy.join("manifest.json"), manifest.replace("\"version\": 1", "\"version\": 99")).unwrap();
    let r = run(&["predict", "--model", p(&copy), "--queries", p(&q), "--out", p(&preds)]);
    assert_eq!(r.status.code(), Some(5));
    assert!(stderr(&r).contains("version 99"));
}

#[test]
fn invalid_config_lists_every_problem() {
    let out = tempfile::tempdir().unwrap();
    let config = out.path().join("bad.toml");
    fs::write(&config, "[tree]\nbranching = 1\nmax_leaf = 0\n[train]\nlambda = -1.0\n[inference]\nbeam = 0\n").unwrap();
    let r = run(&["train", "--config", p(&config), "--out", p(&out.path().join("m"))]);
    assert_eq!(r.status.code(), Some(3));
    let err = stderr(&r);
    for field in ["tree.branching", "tree.max_leaf", "lambda", "beam"] {
        assert!(err.contains(field), "{field} missing from: {err}");
    }

    fs::write(&config, "[tree]\nbranchng = 4\n").unwrap();
    let r = run(&["train", "--config", p(&config), "--out", p(&out.path().join("m"))]);
    assert_eq!(r.status.code(), Some(3), "{}", stderr(&r));
}

#[test]
fn malformed_pairs_report_the_line() {
    let out = tempfile::tempdir().unwrap();
    let pairs = out.path().join("pairs.tsv");
    fs::write(&pairs, "red case\tP1\nblue case\tP2\tnot-a-number\n").unwrap();
    let r = run(&["ingest", "--pairs", p(&pairs), "--out", p(&out.path().join("d"))]);
    assert_eq!(r.status.code(), Some(4));
    assert!(stderr(&r).contains(":2:"), "{}", stderr(&r));

    fs::write(&pairs, "only one field\n").unwrap();
    let r = run(&["ingest", "--pairs", p(&pairs), "--out", p(&out.path().join("d"))]);
    assert_eq!(r.status.code(), Some(4));
    assert!(stderr(&r).contains(":1:"), "{}", stderr(&r));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["predict"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn ingest_splits_by_column() {
    let out = tempfile::tempdir().unwrap();
    let pairs = out.path().join("pairs.tsv");
    fs::write(
        &pairs,
        "red case\tP1\t1\t2023-01\nblue case\tP2\t1\t2023-02\nred phone\tP1\t2\t2023-03\ngreen case\tP3\t1\t2023-04\n",
    )
    .unwrap();
    let dir = out.path().join("d");
    ok(&["-q", "ingest", "--pairs", p(&pairs), "--split-column", "3", "--split-at", "2023-03", "--out", p(&dir)]);
    let queries = fs::read_to_string(dir.join("queries.txt")).unwrap();
    assert_eq!(queries, "red case\nblue case\n");
    let test = fs::read_to_string(dir.join("test.tsv")).unwrap();
    assert!(test.contains("red phone\tP1"));
    assert!(test.contains("green case\tP3"));
}
