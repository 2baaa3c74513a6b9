use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};

use conceptcode::annotator::{annotate_corpus, attach_annotations, import_external, read_annotations, read_external_annotations, write_annotations};
use conceptcode::corpus::{
    coverage_stats, generate_synthetic, read_document_records, read_documents, read_split, split_by_patient, write_documents, write_split, CorpusSplit,
    Document,
};
use conceptcode::eval::BucketedF1;
use conceptcode::experiment::{evaluate_model, lambda_sweep, raw_codes_report, train_label_counts, write_sweep_csv};
use conceptcode::hashing::{bytes_hash, config_hash};
use conceptcode::model::{Checkpoint, Model};
use conceptcode::multitask::{tagging_accuracy_over, train, AuxConfig, TrainingSet, LAMBDA_GRID};
use conceptcode::ontology::{Dictionary, LabelSpace, Ontology};
use conceptcode::plot::{write_bucket_chart, write_histogram};
use conceptcode::Error;

use crate::config::{
    resolve_synthetic, AnnotateArgs, Cli, Command, DataArgs, EvaluateArgs, FileConfig, Part, PlotArgs, PlotKind, SimulateArgs, SweepArgs,
    TrainArgs, TrainingSettings,
};

/// Ratios used when no split file is given.
const DEFAULT_SPLIT: [f64; 3] = [0.8, 0.1, 0.1];

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Annotate(a) => annotate(a),
        Command::Simulate(a) => simulate(&file, a),
        Command::Train(a) => train_cmd(&file, a),
        Command::Evaluate(a) => evaluate(a),
        Command::SweepLambda(a) => sweep(&file, a),
        Command::Plot(a) => plot(a),
    }
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(bytes_hash(&fs::read(path).with_context(|| format!("reading {}", path.display()))?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// `manifest.json`: the config hash plus content hashes of inputs and outputs.
fn write_manifest(dir: &Path, command: &str, hash: &str, inputs: &[&Path], outputs: &[&str]) -> Result<()> {
    let mut ins = BTreeMap::new();
    for p in inputs {
        let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
        ins.insert(name, file_hash(p)?);
    }
    let mut outs = BTreeMap::new();
    for name in outputs {
        outs.insert(name.to_string(), file_hash(&dir.join(name))?);
    }
    write_json(
        &dir.join("manifest.json"),
        &json!({ "command": command, "config_hash": hash, "inputs": ins, "outputs": outs }),
    )
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn annotate(args: AnnotateArgs) -> Result<()> {
    let mut docs = read_documents(&args.corpus)?;
    let ontology = args.ontology.as_deref().map(Ontology::load).transpose()?;
    let mut inputs: Vec<&Path> = vec![&args.corpus];
    let mut report = Map::new();
    let hash;
    if let Some(ext_path) = &args.external {
        let records = read_document_records(&args.corpus)?;
        let spans = read_external_annotations(ext_path)?;
        let mut by_id: BTreeMap<String, Vec<_>> = BTreeMap::new();
        let mut discarded = 0usize;
        for (line, rec) in records {
            let Some(text) = rec.text else {
                bail!(Error::Parse {
                    path: args.corpus.clone(),
                    line,
                    message: "external annotations need the raw \"text\" field".into(),
                });
            };
            let outcome = import_external(&text, spans.get(&rec.doc_id).map_or(&[][..], Vec::as_slice))?;
            discarded += outcome.discarded;
            by_id.insert(rec.doc_id, outcome.annotations);
        }
        for d in &mut docs {
            d.annotations = Some(by_id.remove(&d.doc_id).unwrap_or_default());
        }
        report.insert("discarded_spans".into(), json!(discarded));
        inputs.push(ext_path);
        hash = config_hash(&json!({ "command": "annotate", "external": file_hash(ext_path)? }));
    } else {
        let Some(dict_path) = &args.dictionary else {
            bail!(Error::Config("missing dictionary: pass --dictionary or --external".into()));
        };
        let dictionary = Dictionary::load(dict_path, ontology.as_ref())?;
        annotate_corpus(&mut docs, &dictionary);
        let per_code: BTreeMap<&str, usize> = dictionary.phrases_per_code();
        report.insert("phrases_per_concept".into(), json!(per_code));
        inputs.push(dict_path);
        hash = config_hash(&json!({ "command": "annotate", "dictionary": file_hash(dict_path)? }));
    }
    if let Some(o) = &args.ontology {
        inputs.push(o);
    }
    create_dir(&args.output)?;
    write_annotations(&args.output.join("annotations.jsonl"), &docs)?;
    let stats = coverage_stats(&docs);
    report.insert("config_hash".into(), json!(hash));
    if let Value::Object(m) = serde_json::to_value(stats)? {
        report.extend(m);
    }
    write_json(&args.output.join("stats.json"), &report)?;
    write_manifest(&args.output, "annotate", &hash, &inputs, &["annotations.jsonl", "stats.json"])?;
    println!(
        "annotated {} documents: {:.2} concepts per document, coverage {:.4}",
        stats.documents, stats.mean_concepts_per_doc, stats.mean_coverage
    );
    Ok(())
}

fn simulate(file: &FileConfig, args: SimulateArgs) -> Result<()> {
    let spec = resolve_synthetic(file, &args)?;
    let hash = config_hash(&json!({ "command": "simulate", "spec": spec }));
    let corpus = generate_synthetic(&spec)?;
    let out = &args.output;
    create_dir(out)?;
    write_documents(&out.join("documents.jsonl"), &corpus.documents)?;
    write_annotations(&out.join("annotations.jsonl"), &corpus.documents)?;
    corpus.dictionary.write(&out.join("dictionary.tsv"))?;
    corpus.ontology.write(&out.join("ontology.tsv"))?;
    corpus.label_space.write(&out.join("labels.txt"))?;
    write_split(&out.join("split.json"), &corpus.split)?;
    let per_concept: BTreeMap<&str, usize> = corpus
        .concepts
        .iter()
        .map(String::as_str)
        .zip(corpus.variant_counts())
        .collect();
    let stats = coverage_stats(&corpus.documents);
    let mut report = Map::new();
    report.insert("config_hash".into(), json!(hash));
    report.insert("seed".into(), json!(spec.seed));
    if let Value::Object(m) = serde_json::to_value(stats)? {
        report.extend(m);
    }
    report.insert("phrases_per_concept".into(), json!(per_concept));
    report.insert("spec".into(), serde_json::to_value(&spec)?);
    write_json(&out.join("stats.json"), &report)?;
    write_manifest(
        out,
        "simulate",
        &hash,
        &[],
        &[
            "documents.jsonl",
            "annotations.jsonl",
            "dictionary.tsv",
            "ontology.tsv",
            "labels.txt",
            "split.json",
            "stats.json",
        ],
    )?;
    println!(
        "wrote {} documents ({} train, {} dev, {} test), coverage {:.4}",
        corpus.documents.len(),
        corpus.split.train.len(),
        corpus.split.dev.len(),
        corpus.split.test.len(),
        stats.mean_coverage
    );
    Ok(())
}

struct Loaded {
    train: Vec<Document>,
    dev: Vec<Document>,
    labels: LabelSpace,
    ontology: Option<Ontology>,
    inputs: Vec<PathBuf>,
}

fn load_training_data(data: &DataArgs, seed: u64) -> Result<Loaded> {
    let mut docs = read_documents(&data.corpus)?;
    let mut inputs = vec![data.corpus.clone(), data.labels.clone()];
    if let Some(a) = &data.annotations {
        attach_annotations(&mut docs, &read_annotations(a)?)?;
        inputs.push(a.clone());
    }
    let labels = LabelSpace::load(&data.labels)?;
    let ontology = data.ontology.as_deref().map(Ontology::load).transpose()?;
    if let Some(o) = &data.ontology {
        inputs.push(o.clone());
    }
    let split = load_split(data.split.as_deref(), &docs, seed)?;
    if let Some(s) = &data.split {
        inputs.push(s.clone());
    }
    let (train, dev, _) = split.apply(&docs);
    Ok(Loaded {
        train,
        dev,
        labels,
        ontology,
        inputs,
    })
}

fn load_split(path: Option<&Path>, docs: &[Document], seed: u64) -> Result<CorpusSplit> {
    Ok(match path {
        Some(p) => read_split(p)?,
        None => split_by_patient(docs, &DEFAULT_SPLIT, seed)?,
    })
}

fn train_cmd(file: &FileConfig, args: TrainArgs) -> Result<()> {
    let settings = TrainingSettings::resolve(file, &args.model)?;
    let hash = config_hash(&json!({ "command": "train", "settings": settings }));
    let data = load_training_data(&args.data, settings.model.seed)?;
    let model = Model::from_training(
        settings.model.clone(),
        settings.aux,
        &data.train,
        data.labels.clone(),
        data.ontology.as_ref(),
        settings.min_df,
    )?;
    create_dir(&args.output)?;
    let log_path = args.output.join("training_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path)?);
    let mut write_err = None;
    let outcome = train(
        model,
        TrainingSet {
            train: &data.train,
            dev: &data.dev,
        },
        &settings.trainer,
        |entry| {
            let mut v = serde_json::to_value(entry).expect("log entries serialize");
            v["config_hash"] = json!(hash);
            if let Err(e) = serde_json::to_writer(&mut log, &v).map_err(anyhow::Error::from).and_then(|_| Ok(log.write_all(b"\n")?)) {
                write_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = write_err {
        return Err(e);
    }
    log.flush()?;
    drop(log);
    let checkpoint = Checkpoint::new(outcome.model, outcome.best_epoch);
    checkpoint.save(&args.output.join("checkpoint.json"))?;
    let inputs: Vec<&Path> = data.inputs.iter().map(PathBuf::as_path).collect();
    write_manifest(&args.output, "train", &hash, &inputs, &["checkpoint.json", "training_log.jsonl"])?;
    println!(
        "trained {} for {} epochs; best dev P@{} {:.4} at epoch {}; vocabulary hash {}",
        checkpoint.policy,
        outcome.log.len(),
        outcome.log.first().map_or(8, |e| e.stop_k),
        outcome.best_score,
        outcome.best_epoch,
        checkpoint.vocab_hash
    );
    Ok(())
}

fn select_part(split: &CorpusSplit, docs: &[Document], part: Part) -> Vec<Document> {
    let (train, dev, test) = split.apply(docs);
    match part {
        Part::Train => train,
        Part::Dev => dev,
        Part::Test => test,
    }
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut docs = read_documents(&args.corpus)?;
    let split = load_split(args.split.as_deref(), &docs, args.seed)?;
    let mut out = Map::new();
    let hash;
    if args.raw_codes {
        let (Some(ann), Some(labels_path)) = (&args.annotations, &args.labels) else {
            bail!(Error::Config("--raw-codes needs --annotations and --labels".into()));
        };
        attach_annotations(&mut docs, &read_annotations(ann)?)?;
        let labels = LabelSpace::load(labels_path)?;
        let part = select_part(&split, &docs, args.part);
        let report = raw_codes_report(&part, &labels, args.seed)?;
        hash = config_hash(&json!({ "command": "evaluate", "method": "raw_codes", "part": args.part, "seed": args.seed }));
        out.insert("method".into(), json!("raw_codes"));
        out.extend(report.to_json(&labels));
    } else {
        let Some(ck_path) = &args.checkpoint else {
            bail!(Error::Config("missing --checkpoint".into()));
        };
        let ck = Checkpoint::load(ck_path)?;
        if let Some(l) = &args.labels {
            ck.check_labels(&LabelSpace::load(l)?)?;
        }
        if let Some(h) = &args.vocab_hash {
            ck.check_vocab_hash(h)?;
        }
        let model = &ck.model;
        if model.policy().reads_annotations() || args.tagging {
            let Some(ann) = &args.annotations else {
                let first = docs.first().map_or_else(String::new, |d| d.doc_id.clone());
                return Err(anyhow::Error::new(Error::MissingAnnotations(first))
                    .context(format!("policy {} or --tagging needs --annotations", model.policy())));
            };
            attach_annotations(&mut docs, &read_annotations(ann)?)?;
        }
        let part = select_part(&split, &docs, args.part);
        let (train, _, _) = split.apply(&docs);
        let counts = train_label_counts(model, &train);
        let mut report = evaluate_model(model, &part, Some(&counts), args.threshold)?;
        if args.tagging {
            let enc = part.iter().map(|d| model.encode_for_training(d)).collect::<conceptcode::Result<Vec<_>>>()?;
            report.tagging_accuracy = tagging_accuracy_over(model, &enc)?;
        }
        hash = config_hash(&json!({
            "command": "evaluate",
            "checkpoint_config_hash": ck.config_hash,
            "vocab_hash": ck.vocab_hash,
            "part": args.part,
            "threshold": args.threshold,
            "tagging": args.tagging,
        }));
        out.insert("method".into(), json!("model"));
        out.insert("policy".into(), json!(ck.policy));
        out.insert("checkpoint_config_hash".into(), json!(ck.config_hash));
        out.insert("vocab_hash".into(), json!(ck.vocab_hash));
        out.insert("seed".into(), json!(model.config.seed));
        out.extend(report.to_json(&model.labels));
    }
    out.insert("part".into(), serde_json::to_value(args.part)?);
    out.insert("documents".into(), json!(select_part(&split, &docs, args.part).len()));
    out.insert("config_hash".into(), json!(hash));
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_json(&args.output, &out)?;
    let show = |k: &str| out.get(k).and_then(Value::as_f64).map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "micro-F1 {} macro-F1 {} P@8 {} micro-AUC {}",
        show("f1_micro"),
        show("f1_macro"),
        show("p_at_8"),
        show("auc_micro")
    );
    Ok(())
}

fn sweep(file: &FileConfig, args: SweepArgs) -> Result<()> {
    let settings = TrainingSettings::resolve(file, &args.model)?;
    let aux = settings.aux.unwrap_or_default();
    let data = load_training_data(&args.data, settings.model.seed)?;
    let grid = args.grid.clone().unwrap_or_else(|| LAMBDA_GRID.to_vec());
    if grid.is_empty() {
        bail!(Error::Config("empty λ grid".into()));
    }
    for &l in &grid {
        AuxConfig { lambda: l, ..aux }.validate()?;
    }
    let rows = lambda_sweep(
        &data.train,
        &data.dev,
        &data.labels,
        data.ontology.as_ref(),
        &settings.model,
        aux,
        &settings.trainer,
        settings.min_df,
        &grid,
    )?;
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_sweep_csv(&args.output, &rows)?;
    for r in &rows {
        println!(
            "lambda {:>8}: micro-F1 {:.4} tagging {}",
            r.lambda,
            r.f1_micro,
            r.tagging_last_epoch.map_or("n/a".into(), |t| format!("{t:.4}"))
        );
    }
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    let mut hashes = Vec::new();
    let mut values = Vec::new();
    for p in &args.inputs {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        hashes.push(bytes_hash(text.as_bytes()));
        let v: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: p.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        values.push(v);
    }
    let hash = config_hash(&json!({ "command": "plot", "kind": args.kind, "inputs": hashes }));
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    match args.kind {
        PlotKind::Buckets => {
            let series: Vec<(String, BucketedF1)> = args
                .inputs
                .iter()
                .zip(&values)
                .map(|(p, v)| {
                    let get = |k: &str| v.get(k).and_then(Value::as_f64);
                    let f = BucketedF1 {
                        rare: get("f1_rare"),
                        semi_rare: get("f1_semi_rare"),
                        common: get("f1_common"),
                    };
                    (series_name(p, v), f)
                })
                .collect();
            write_bucket_chart(&args.output, &series, &hash)?;
        }
        PlotKind::Histogram => {
            let mut counts = Vec::new();
            for v in &values {
                if let Some(m) = v.get("phrases_per_concept").and_then(Value::as_object) {
                    counts.extend(m.values().filter_map(Value::as_u64).map(|c| c as usize));
                }
            }
            write_histogram(&args.output, &counts, &hash)?;
        }
    }
    println!("wrote {}", args.output.display());
    Ok(())
}

fn series_name(path: &Path, v: &Value) -> String {
    if let Some(p) = v.get("policy").and_then(Value::as_str) {
        return p.to_string();
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "metrics" {
        if let Some(dir) = path.parent().and_then(Path::file_name) {
            return dir.to_string_lossy().into_owned();
        }
    }
    stem
}
