use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use flexlog::corpus::{
    generate_synthetic, label_corpus, load_corpus, read_records, split, CorpusSplit, EventSpec, LabeledCorpus, SplitSizes,
};
use flexlog::evaluator::{
    emit_report, prepare_and_train, run_experiment_with, DatasetInput, ExperimentConfig, Method, ReportFormat,
    ReportMatrix, Timing,
};
use flexlog::manifest::RunManifest;
use flexlog::models::{train as train_model, ModelConfig, ModelKind, TrainConfig, TrainedModel};
use flexlog::mutator::{variant_matrix_with, write_manifest_csv, MutationPlan};
use flexlog::templates::{write_templates, AelConfig, DrainConfig, Miner, TemplateParser};
use flexlog::textprep::{prepare, EncodedDataset, PrepConfig, Vocabulary};

use crate::layout::{DatasetDir, Layout};
use crate::{
    AllArgs, DatasetOut, EvalArgs, FitArgs, IngestArgs, MutateArgs, ParseArgs, ReportArgs, SourceArgs, TrainArgs,
    TrainOpts, UserError,
};

fn user(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

fn load_spec(path: &Path) -> Result<EventSpec> {
    if !path.is_file() {
        return Err(user(format!("dataset config {} not found", path.display())));
    }
    Ok(EventSpec::load(path)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path, hint: &str) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| user(format!("cannot open {} ({e}); run `{hint}` first", path.display())))
}

fn write_corpus(c: &LabeledCorpus, log: &Path, labels: &Path) -> Result<()> {
    let mut w = create(log)?;
    c.write_log(&mut w)?;
    let mut w = create(labels)?;
    c.write_labels_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn read_corpus(log: &Path, labels: &Path, hint: &str) -> Result<LabeledCorpus> {
    let records = read_records(open(log, hint)?, usize::MAX)?;
    Ok(LabeledCorpus::from_labels_csv(records, open(labels, hint)?)?)
}

fn parse_model(id: &str) -> Result<ModelKind> {
    Ok(ModelKind::parse(id)?)
}

fn train_config(opts: &TrainOpts, seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: opts.max_epochs,
        patience: opts.patience,
        batch_size: opts.batch_size,
        seed,
        ..TrainConfig::default()
    }
}

/// Appends a stage to `<out>/manifest.json`, creating it on first use.
fn record_stage(out: &Path, stage: &str, configs: &[&Path], seeds: &[u64], inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
    let layout = Layout::new(out);
    let path = layout.manifest();
    let mut m = if path.is_file() {
        RunManifest::read(&path)?
    } else {
        RunManifest::new(stage, Vec::new(), Vec::new())
    };
    for c in configs {
        let c = c.display().to_string();
        if !m.config_paths.contains(&c) {
            m.config_paths.push(c);
        }
    }
    for s in seeds {
        if !m.seeds.contains(s) {
            m.seeds.push(*s);
        }
    }
    m.add_stage(stage, out, inputs, outputs)?;
    m.write(&path)?;
    Ok(())
}

struct Dataset {
    spec: EventSpec,
    config: PathBuf,
    dir: DatasetDir,
}

fn dataset(target: &DatasetOut) -> Result<Dataset> {
    dataset_at(&target.dataset, &target.out)
}

fn dataset_at(config: &Path, out: &Path) -> Result<Dataset> {
    let spec = load_spec(config)?;
    let dir = Layout::new(out).dataset(&spec.dataset_name);
    Ok(Dataset {
        spec,
        config: config.to_path_buf(),
        dir,
    })
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    ingest_with(&a.target, &a.source, a.seed.seed)
}

fn ingest_with(target: &DatasetOut, source: &SourceArgs, seed: u64) -> Result<()> {
    let ds = dataset(target)?;
    let sizes = SplitSizes {
        train: source.train_lines,
        test: source.test_lines,
    };
    let mut inputs = vec![ds.config.clone()];
    let records = match (&source.log, source.synthetic) {
        (_, Some(n)) => generate_synthetic(&ds.spec, n, seed).records().to_vec(),
        (Some(log), None) => {
            inputs.push(log.clone());
            load_corpus(log, sizes.total())?
        }
        (None, None) => {
            let dir = std::env::var_os("FLEXLOG_LOGHUB_DIR")
                .ok_or_else(|| user("no input: pass --log, --synthetic, or set FLEXLOG_LOGHUB_DIR"))?;
            let log = PathBuf::from(dir).join(format!("{}.log", ds.spec.dataset_name));
            inputs.push(log.clone());
            load_corpus(&log, sizes.total())?
        }
    };
    let corpus = label_corpus(&records, &ds.spec)?;
    let s = split(&corpus, sizes)?;
    write_corpus(&s.train, &ds.dir.train_log(), &ds.dir.train_labels())?;
    write_corpus(&s.test, &ds.dir.test_log(), &ds.dir.test_labels())?;
    log::info!(
        "{}: {} train lines ({} events), {} test lines ({} events)",
        ds.spec.dataset_name,
        s.train.len(),
        s.train.event_count(),
        s.test.len(),
        s.test.event_count()
    );
    let outputs = vec![ds.dir.train_log(), ds.dir.train_labels(), ds.dir.test_log(), ds.dir.test_labels()];
    record_stage(&target.out, "ingest", &[&ds.config], &[seed], &inputs, &outputs)
}

fn read_split(ds: &Dataset) -> Result<(LabeledCorpus, LabeledCorpus)> {
    let train = read_corpus(&ds.dir.train_log(), &ds.dir.train_labels(), "flexlog ingest")?;
    let test = read_corpus(&ds.dir.test_log(), &ds.dir.test_labels(), "flexlog ingest")?;
    Ok((train, test))
}

pub fn mutate(a: &MutateArgs) -> Result<()> {
    let ds = dataset(&a.target)?;
    let test = read_corpus(&ds.dir.test_log(), &ds.dir.test_labels(), "flexlog ingest")?;
    let variants = variant_matrix_with(&test, &ds.spec, &a.start.start_lines);
    let mut outputs = Vec::new();
    for v in &variants {
        let (log, labels) = (ds.dir.variant_log(&v.plan), ds.dir.variant_labels(&v.plan));
        write_corpus(&v.corpus, &log, &labels)?;
        outputs.extend([log, labels]);
    }
    let mut w = create(&ds.dir.variants_csv())?;
    write_manifest_csv(&variants, &mut w)?;
    w.flush()?;
    outputs.push(ds.dir.variants_csv());
    let inputs = vec![ds.config.clone(), ds.dir.test_log(), ds.dir.test_labels()];
    record_stage(&a.target.out, "mutate", &[&ds.config], &[], &inputs, &outputs)
}

pub fn prep(a: &DatasetOut) -> Result<()> {
    let ds = dataset(a)?;
    let train = read_corpus(&ds.dir.train_log(), &ds.dir.train_labels(), "flexlog ingest")?;
    let p = prepare(&train, &ds.spec.event_key, PrepConfig::default())?;
    let mut w = create(&ds.dir.vocab())?;
    p.vocab.write_csv(&mut w)?;
    let mut w = create(&ds.dir.train_encoded())?;
    p.train.write_csv(&mut w)?;
    w.flush()?;
    log::info!("{}: vocabulary {} tokens, L = {}", ds.spec.dataset_name, p.vocab.len(), p.train.max_len);
    let inputs = vec![ds.config.clone(), ds.dir.train_log(), ds.dir.train_labels()];
    record_stage(&a.out, "prep", &[&ds.config], &[], &inputs, &[ds.dir.vocab(), ds.dir.train_encoded()])
}

fn read_vocab(ds: &Dataset) -> Result<Vocabulary> {
    Ok(Vocabulary::read_csv(open(&ds.dir.vocab(), "flexlog prep")?)?)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let kind = parse_model(&a.model)?;
    let ds = dataset(&a.target)?;
    let seed = a.seed.seed;
    let vocab = read_vocab(&ds)?;
    let data = EncodedDataset::read_csv(open(&ds.dir.train_encoded(), "flexlog prep")?)?;
    let prep = PrepConfig::default().with_max_len(data.max_len);
    let tc = train_config(&a.opts, seed);
    let model = train_model(&ModelConfig::new(kind), &vocab, &prep, &data, &tc)?;
    let (ckpt, log_path) = (ds.dir.checkpoint(kind, seed), ds.dir.training_log(kind, seed));
    let mut w = create(&ckpt)?;
    model.write_checkpoint(&mut w)?;
    w.flush()?;
    let mut w = create(&log_path)?;
    model.write_log_csv(&mut w)?;
    let last = model.log.last().expect("at least one epoch");
    log::info!(
        "{} {kind}: {} epochs, best validation F1 {:.4} at epoch {}",
        ds.spec.dataset_name,
        last.epoch,
        model.log[model.best_epoch - 1].val_f1,
        model.best_epoch
    );
    let inputs = vec![ds.config.clone(), ds.dir.vocab(), ds.dir.train_encoded()];
    record_stage(&a.target.out, "train", &[&ds.config], &[seed], &inputs, &[ckpt, log_path])
}

fn load_model(ds: &Dataset, kind: ModelKind, seed: u64) -> Result<TrainedModel> {
    let vocab = read_vocab(ds)?;
    let f = open(&ds.dir.checkpoint(kind, seed), "flexlog train")?;
    Ok(TrainedModel::read_checkpoint(f, vocab)?)
}

fn variant_plans(ds: &Dataset, only: Option<&str>) -> Result<Vec<MutationPlan>> {
    let mut rdr = csv::Reader::from_reader(open(&ds.dir.variants_csv(), "flexlog mutate")?);
    let mut plans = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let name = rec.get(0).unwrap_or_default();
        let plan = MutationPlan::parse(name).ok_or_else(|| user(format!("bad variant name {name:?} in variants.csv")))?;
        if only.is_none_or(|o| o == name) {
            plans.push(plan);
        }
    }
    if let (Some(o), true) = (only, plans.is_empty()) {
        return Err(user(format!("unknown variant {o:?}")));
    }
    Ok(plans)
}

pub fn parse(a: &ParseArgs) -> Result<()> {
    let kind = parse_model(&a.model)?;
    let ds = dataset(&a.target)?;
    let seed = a.seed.seed;
    let model = load_model(&ds, kind, seed)?;
    let mut inputs = vec![ds.dir.vocab(), ds.dir.checkpoint(kind, seed)];
    let mut outputs = Vec::new();
    for plan in variant_plans(&ds, a.variant.as_deref())? {
        let (log, labels) = (ds.dir.variant_log(&plan), ds.dir.variant_labels(&plan));
        let corpus = read_corpus(&log, &labels, "flexlog mutate")?;
        let pred = model.predict_lines(corpus.lines())?;
        let path = ds.dir.predictions(kind, seed, &plan);
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["line_index", "prediction"])?;
        for (i, p) in pred.iter().enumerate() {
            w.write_record([(i + 1).to_string().as_str(), p.to_csv_field()])?;
        }
        w.flush()?;
        inputs.push(log);
        outputs.push(path);
    }
    record_stage(&a.target.out, "parse", &[&ds.config], &[seed], &inputs, &outputs)
}

fn miner(name: &str) -> Result<Miner> {
    match name {
        "drain" => Ok(Miner::Drain(DrainConfig::default())),
        "ael" => Ok(Miner::Ael(AelConfig::default())),
        other => Err(user(format!("unknown template method {other:?}; valid: drain, ael"))),
    }
}

pub fn fit_templates(a: &FitArgs) -> Result<()> {
    let ds = dataset(&a.target)?;
    let miners = a.method.iter().map(|m| miner(m)).collect::<Result<Vec<_>>>()?;
    let mut inputs = vec![ds.config.clone()];
    let mut outputs = Vec::new();
    for plan in variant_plans(&ds, a.variant.as_deref())? {
        let (log, labels) = (ds.dir.variant_log(&plan), ds.dir.variant_labels(&plan));
        let corpus = read_corpus(&log, &labels, "flexlog mutate")?;
        for m in &miners {
            let p = TemplateParser::fit(&corpus, &ds.spec, m)?;
            let path = ds.dir.templates(m.name(), &plan);
            let mut w = create(&path)?;
            write_templates(&p.templates, &mut w)?;
            w.flush()?;
            outputs.push(path);
        }
        inputs.extend([log, labels]);
    }
    record_stage(&a.target.out, "fit-templates", &[&ds.config], &[], &inputs, &outputs)
}

fn methods(models: &[String], baselines: &[String]) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for m in models {
        out.push(Method::Model(parse_model(m)?));
    }
    for b in baselines {
        match Method::parse(b)? {
            Method::Model(_) => return Err(user(format!("{b} is a model; pass it with --model"))),
            m => out.push(m),
        }
    }
    Ok(out)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let seed = a.seed.seed;
    let cfg = ExperimentConfig {
        methods: methods(&a.model, &a.eval.baseline)?,
        start_lines: a.eval.start.start_lines.clone(),
        seeds: vec![seed],
        train: train_config(&a.opts, seed),
        timing: Timing::parse(&a.eval.timing)?,
        ..ExperimentConfig::default()
    };
    let mut dirs = Vec::new();
    let mut inputs_data = Vec::new();
    let mut inputs = Vec::new();
    for config in &a.dataset {
        let ds = dataset_at(config, &a.out)?;
        let (train, test) = read_split(&ds)?;
        inputs.extend([ds.config.clone(), ds.dir.train_log(), ds.dir.train_labels(), ds.dir.test_log(), ds.dir.test_labels()]);
        for m in &cfg.methods {
            if let Method::Model(k) = m {
                let ckpt = ds.dir.checkpoint(*k, seed);
                if ckpt.is_file() {
                    inputs.extend([ckpt, ds.dir.vocab()]);
                }
            }
        }
        inputs_data.push(DatasetInput {
            spec: ds.spec.clone(),
            split: CorpusSplit { train, test },
        });
        dirs.push(ds);
    }
    let matrix = run_experiment_with(&inputs_data, &cfg, |data, model_cfg, tc| {
        let ds = dirs
            .iter()
            .find(|d| d.spec.dataset_name == data.spec.dataset_name)
            .expect("dataset registered");
        let ckpt = ds.dir.checkpoint(model_cfg.kind, tc.seed);
        if ckpt.is_file() {
            log::info!("{} {}: using {}", data.spec.dataset_name, model_cfg.kind, ckpt.display());
            load_model(ds, model_cfg.kind, tc.seed).map_err(|e| {
                flexlog::Error::Io {
                    path: ckpt.display().to_string(),
                    source: std::io::Error::other(format!("{e:#}")),
                }
            })
        } else {
            prepare_and_train(data, model_cfg, &cfg.prep, tc)
        }
    });
    for f in matrix.failures() {
        log::warn!("{} {} {}-{}: {}", f.dataset, f.method, f.kind, f.start_line, f.error.as_deref().unwrap_or(""));
    }
    let layout = Layout::new(&a.out);
    let path = layout.matrix();
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &matrix)?;
    w.write_all(b"\n")?;
    w.flush()?;
    let configs: Vec<&Path> = a.dataset.iter().map(PathBuf::as_path).collect();
    record_stage(&a.out, "eval", &configs, &[seed], &inputs, &[path])
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let layout = Layout::new(&a.out);
    let formats = a
        .format
        .iter()
        .map(|f| ReportFormat::parse(f).ok_or_else(|| user(format!("unknown report format {f:?}; valid: csv, json"))))
        .collect::<Result<Vec<_>>>()?;
    let matrix: ReportMatrix = serde_json::from_reader(open(&layout.matrix(), "flexlog eval")?)
        .map_err(|e| user(format!("malformed {}: {e}", layout.matrix().display())))?;
    let paths = emit_report(&matrix, &layout.report_dir(), &formats)?;
    for row in matrix.aggregate().iter().filter(|r| r.kind == "all") {
        println!("{:<14} median F1 {:.3}  mean F1 {:.3}  ({} runs)", row.method.id(), row.median_f1, row.mean_f1, row.runs);
    }
    record_stage(&a.out, "report", &[], &[], &[layout.matrix()], &paths)
}

pub fn all(a: &AllArgs) -> Result<()> {
    let seed = a.seed.seed;
    let kinds = a.model.iter().map(|m| parse_model(m)).collect::<Result<Vec<_>>>()?;
    Timing::parse(&a.eval.timing)?;
    ingest_with(&a.target, &a.source, seed)?;
    mutate(&MutateArgs {
        target: a.target.clone(),
        start: a.eval.start.clone(),
    })?;
    prep(&a.target)?;
    for kind in &kinds {
        let seed_arg = a.seed.clone();
        train(&TrainArgs {
            target: a.target.clone(),
            model: kind.id().to_string(),
            seed: seed_arg.clone(),
            opts: a.opts.clone(),
        })?;
        parse(&ParseArgs {
            target: a.target.clone(),
            model: kind.id().to_string(),
            seed: seed_arg,
            variant: None,
        })?;
    }
    let template_methods: Vec<String> = a
        .eval
        .baseline
        .iter()
        .filter(|b| matches!(b.as_str(), "drain" | "ael"))
        .cloned()
        .collect();
    if !template_methods.is_empty() {
        fit_templates(&FitArgs {
            target: a.target.clone(),
            method: template_methods,
            variant: None,
        })?;
    }
    eval(&EvalArgs {
        dataset: vec![a.target.dataset.clone()],
        out: a.target.out.clone(),
        model: a.model.clone(),
        seed: a.seed.clone(),
        eval: a.eval.clone(),
        opts: a.opts.clone(),
    })?;
    report(&ReportArgs {
        out: a.target.out.clone(),
        format: a.format.clone(),
    })
}
