use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use super::config::FileConfig;
use super::{AnalyzeArgs, CliError, CompareArgs, FreqArgs, GenCorpusArgs, InputArgs, TrainArgs, TrainingFlags};
use crate::analysis::{self, parse_range, AnalysisConfig, BinShare, Embeddings, FrequencyBins};
use crate::corpus::{
    self, count_frequencies, generate_zipf_corpus, FrequencyTable, TokenizedCorpus, Vocab, ZipfParams,
};
use crate::error::Error;
use crate::manifest::RunManifest;
use crate::model::{MlmModel, ModelConfig};
use crate::sampler::SamplerConfig;
use crate::trainer::{self, BinLoss, Strategy, TrainConfig, TrainOutcome};

type CliResult<T = ()> = Result<T, CliError>;

const MANIFEST: &str = "manifest.json";

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(Error::io(path, e)))
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult {
    let io = |e| CliError::Runtime(Error::io(path, e));
    let file = File::create(path).map_err(io)?;
    let mut out = BufWriter::new(file);
    write(&mut out).map_err(io)?;
    out.flush().map_err(io)
}

fn json_line<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

pub(super) fn gen_corpus(args: GenCorpusArgs) -> CliResult {
    let params = ZipfParams {
        vocab_size: args.vocab,
        num_sentences: args.sentences,
        min_len: args.min_len,
        max_len: args.max_len,
        exponent: args.zipf,
    };
    let (vocab, corpus) = generate_zipf_corpus(&params, args.seed)?;
    create_dir(&args.out)?;
    corpus::write_corpus_file(&corpus, &vocab, &args.out.join("corpus.txt"))?;
    corpus::write_vocab_file(&vocab, &args.out.join("vocab.txt"))?;
    let mut manifest = RunManifest::new("gen-corpus", Some(args.seed), serde_json::to_value(&params).map_err(Error::from)?);
    manifest.outputs = vec!["corpus.txt".into(), "vocab.txt".into()];
    manifest.write(&args.out.join(MANIFEST))?;
    Ok(())
}

fn load_inputs(input: &InputArgs, file: &FileConfig) -> CliResult<(Vocab, TokenizedCorpus)> {
    let vocab = Vocab::load(&input.vocab, &file.specials())?;
    let corpus = corpus::load_corpus(&input.corpus, &vocab)?;
    Ok((vocab, corpus))
}

fn record_inputs(manifest: &mut RunManifest, input: &InputArgs) -> CliResult {
    manifest.add_input("corpus", &input.corpus)?;
    manifest.add_input("vocab", &input.vocab)?;
    if let Some(cfg) = &input.config {
        manifest.add_input("config", cfg)?;
    }
    Ok(())
}

/// Manifest path for an output file: `<file>.manifest.json` beside it.
fn sibling_manifest(out: &Path) -> std::path::PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub(super) fn freq(args: FreqArgs) -> CliResult {
    let file = FileConfig::load_opt(args.input.config.as_deref())?;
    let (vocab, corpus) = load_inputs(&args.input, &file)?;
    let table = count_frequencies(&corpus, &vocab)?;
    let manifest_path = sibling_manifest(&args.out);
    let manifest_name = manifest_path.file_name().unwrap_or_default().to_string_lossy().into_owned();
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&args.out, |out| {
        writeln!(out, "# manifest={manifest_name}")?;
        table.write_tsv(&vocab, out)
    })?;
    let mut manifest = RunManifest::new(
        "freq",
        None,
        json!({ "special_tokens": file.specials(), "tokens": table.total(), "vocab_size": vocab.len() }),
    );
    record_inputs(&mut manifest, &args.input)?;
    manifest.outputs = vec![args.out.file_name().unwrap_or_default().to_string_lossy().into_owned()];
    manifest.write(&manifest_path)?;
    Ok(())
}

/// Flags over file over defaults; returns the config plus warnings about
/// hyperparameters the chosen strategy ignores.
pub(super) fn resolve_train_config(
    strategy: Option<&str>,
    flags: &TrainingFlags,
    file: &FileConfig,
    vocab_size: usize,
) -> CliResult<(TrainConfig, Vec<String>)> {
    let strategy: Strategy = strategy
        .or(file.train.strategy.as_deref())
        .unwrap_or("dynamic")
        .parse()
        .map_err(|e: Error| usage(e.to_string()))?;
    let defaults = TrainConfig::default();
    let sampler_defaults = SamplerConfig::default();
    let model_defaults = ModelConfig::default();
    let f = &file.sampler;
    let theta = flags.theta.or(f.theta);
    let alpha = flags.alpha.or(f.alpha);
    let tau = flags.tau.or(f.tau);
    let smoothing = flags.smoothing.or(f.smoothing);

    let mut warnings = Vec::new();
    if strategy != Strategy::Frequency {
        for (name, set) in [("theta", theta.is_some()), ("alpha", alpha.is_some())] {
            if set {
                warnings.push(format!("{name} is unused by the {strategy} strategy"));
            }
        }
    }
    if strategy != Strategy::Dynamic && tau.is_some() {
        warnings.push(format!("tau is unused by the {strategy} strategy"));
    }
    if strategy != Strategy::Dynamic && smoothing.is_some() {
        return Err(usage(format!("--smoothing requires the dynamic strategy, not {strategy}")));
    }

    let bins = flags
        .bins
        .as_deref()
        .or(file.train.bins.as_deref())
        .map(|b| FrequencyBins::parse(b, vocab_size))
        .transpose()?;
    let config = TrainConfig {
        strategy,
        epochs: flags.epochs.or(file.train.epochs).unwrap_or(defaults.epochs),
        batch_size: flags.batch_size.or(file.train.batch_size).unwrap_or(defaults.batch_size),
        learning_rate: flags
            .learning_rate
            .or(file.train.learning_rate)
            .unwrap_or(defaults.learning_rate),
        sampler: SamplerConfig {
            theta: theta.unwrap_or(sampler_defaults.theta),
            alpha: alpha.unwrap_or(sampler_defaults.alpha),
            tau: tau.unwrap_or(sampler_defaults.tau),
            mask_fraction: flags
                .mask_fraction
                .or(f.mask_fraction)
                .unwrap_or(sampler_defaults.mask_fraction),
            smoothing,
            weight_ceiling: flags
                .weight_ceiling
                .or(f.weight_ceiling)
                .unwrap_or(sampler_defaults.weight_ceiling),
        },
        model: ModelConfig {
            dim: flags.dim.or(file.model.dim).unwrap_or(model_defaults.dim),
            context_radius: flags
                .radius
                .or(file.model.context_radius)
                .unwrap_or(model_defaults.context_radius),
        },
        seed: flags.seed.or(file.train.seed).unwrap_or(defaults.seed),
        bins,
    };
    config.validate()?;
    Ok((config, warnings))
}

fn train_manifest(config: &TrainConfig, input: &InputArgs) -> CliResult<RunManifest> {
    let mut manifest = RunManifest::new(
        "train",
        Some(config.seed),
        serde_json::to_value(config).map_err(Error::from)?,
    );
    record_inputs(&mut manifest, input)?;
    Ok(manifest)
}

#[derive(Serialize)]
struct EpochLine<'a> {
    manifest: &'a str,
    strategy: Strategy,
    epoch: usize,
    mean_loss: f64,
    masked_positions: u64,
    mean_masked_rank: f64,
    bins: Vec<EpochBinLine>,
}

#[derive(Serialize)]
struct EpochBinLine {
    start: usize,
    end: usize,
    masked: u64,
    mean_loss: Option<f64>,
}

fn write_train_outputs(dir: &Path, vocab: &Vocab, outcome: &TrainOutcome, export_embeddings: bool) -> CliResult<Vec<String>> {
    let metrics = &outcome.metrics;
    let mut outputs = vec!["model.ckpt".to_string()];
    outcome.model.save(&dir.join("model.ckpt"))?;

    write_file(&dir.join("metrics.jsonl"), |out| {
        for e in &metrics.epochs {
            let line = EpochLine {
                manifest: MANIFEST,
                strategy: metrics.strategy,
                epoch: e.epoch,
                mean_loss: e.mean_loss,
                masked_positions: e.masked_positions,
                mean_masked_rank: e.mean_masked_rank,
                bins: metrics
                    .bins
                    .ranges()
                    .iter()
                    .enumerate()
                    .map(|(i, r)| EpochBinLine {
                        start: r.start,
                        end: r.end,
                        masked: e.bin_masked[i],
                        mean_loss: e.bin_loss[i],
                    })
                    .collect(),
            };
            writeln!(out, "{}", serde_json::to_string(&line)?)?;
        }
        Ok(())
    })?;
    outputs.push("metrics.jsonl".into());

    write_file(&dir.join("histogram.tsv"), |out| {
        writeln!(out, "# manifest={MANIFEST}")?;
        write!(out, "token\tid\trank")?;
        for e in &metrics.epochs {
            write!(out, "\tepoch{}", e.epoch)?;
        }
        writeln!(out)?;
        for &id in outcome.table.ranking() {
            write!(out, "{}\t{}\t{}", vocab.token(id), id, outcome.table.rank(id))?;
            for e in &metrics.epochs {
                write!(out, "\t{}", e.histogram[id as usize])?;
            }
            writeln!(out)?;
        }
        Ok(())
    })?;
    outputs.push("histogram.tsv".into());

    write_file(&dir.join("weights.tsv"), |out| {
        writeln!(out, "# manifest={MANIFEST}")?;
        outcome.weights.write_tsv(vocab, out)
    })?;
    outputs.push("weights.tsv".into());

    if export_embeddings {
        write_file(&dir.join("embeddings.tsv"), |out| {
            writeln!(out, "# manifest={MANIFEST}")?;
            outcome.model.write_embeddings_tsv(vocab, out)
        })?;
        outputs.push("embeddings.tsv".into());
    }
    Ok(outputs)
}

pub(super) fn train(args: TrainArgs) -> CliResult {
    let file = FileConfig::load_opt(args.input.config.as_deref())?;
    let (vocab, corpus) = load_inputs(&args.input, &file)?;
    let (config, warnings) = resolve_train_config(args.strategy.as_deref(), &args.flags, &file, vocab.len())?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let mut manifest = train_manifest(&config, &args.input)?;
    create_dir(&args.out)?;
    match trainer::train(&corpus, &vocab, &config) {
        Ok(outcome) => {
            manifest.outputs = write_train_outputs(&args.out, &vocab, &outcome, args.export_embeddings)?;
            manifest.write(&args.out.join(MANIFEST))?;
            Ok(())
        }
        Err(Error::Diverged { batch, reason, last_good }) => {
            last_good.save(&args.out.join("model.ckpt"))?;
            manifest.outputs = vec!["model.ckpt".into()];
            manifest.status = format!("diverged at batch {batch}: {reason}");
            manifest.write(&args.out.join(MANIFEST))?;
            Err(CliError::Runtime(Error::Diverged { batch, reason, last_good }))
        }
        Err(e) => Err(e.into()),
    }
}

fn load_table(args: &AnalyzeArgs, vocab: &Vocab) -> CliResult<FrequencyTable> {
    if let Some(path) = &args.freq {
        let f = File::open(path).map_err(|e| CliError::Runtime(Error::io(path, e)))?;
        return Ok(FrequencyTable::read_tsv(BufReader::new(f), vocab)?);
    }
    let path = args.corpus.as_ref().ok_or_else(|| usage("either --corpus or --freq is required"))?;
    let corpus = corpus::load_corpus(path, vocab)?;
    Ok(count_frequencies(&corpus, vocab)?)
}

pub(super) fn resolve_analysis_config(args: &AnalyzeArgs, file: &FileConfig, vocab_size: usize) -> CliResult<AnalysisConfig> {
    let mut cfg = AnalysisConfig::auto(vocab_size)?;
    let a = &file.analysis;
    if let Some(bins) = args.bins.as_deref().or(a.bins.as_deref()) {
        cfg.bins = FrequencyBins::parse(bins, vocab_size)?;
    }
    if let Some(knn) = args.knn.clone().or_else(|| a.knn.clone()) {
        if knn.is_empty() {
            return Err(usage("--knn needs at least one value"));
        }
        cfg.knn = knn;
    }
    if let Some(k) = args.nn_k.or(a.nn_k) {
        cfg.nn_k = k;
    }
    if let Some(r) = args.common_range.as_deref().or(a.common_range.as_deref()) {
        cfg.common_range = parse_range(r)?;
    }
    if let Some(r) = args.rare_range.as_deref().or(a.rare_range.as_deref()) {
        cfg.rare_range = parse_range(r)?;
    }
    for &k in cfg.knn.iter().chain([&cfg.nn_k]) {
        if k == 0 || k >= vocab_size {
            return Err(usage(format!("neighbour count {k} must be in 1..{vocab_size}")));
        }
    }
    for r in [&cfg.common_range, &cfg.rare_range] {
        if r.start >= r.end || r.end > vocab_size {
            return Err(usage(format!("rank range {}-{} invalid for vocab of {vocab_size}", r.start, r.end)));
        }
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct AnalysisFile<'a> {
    manifest: &'a str,
    report: &'a analysis::AnalysisReport,
}

pub(super) fn analyze(args: AnalyzeArgs) -> CliResult {
    let file = FileConfig::load_opt(args.config.as_deref())?;
    let vocab = Vocab::load(&args.vocab, &file.specials())?;
    let model = MlmModel::load(&args.checkpoint)?;
    if model.vocab_size() != vocab.len() {
        return Err(CliError::Runtime(Error::Integrity(format!(
            "checkpoint has {} embedding rows but vocab has {} tokens",
            model.vocab_size(),
            vocab.len()
        ))));
    }
    let table = load_table(&args, &vocab)?;
    let cfg = resolve_analysis_config(&args, &file, vocab.len())?;
    let report = analysis::analyze(&Embeddings::of(&model), &table, &cfg)?;

    create_dir(&args.out)?;
    let json = json_line(&AnalysisFile { manifest: MANIFEST, report: &report })?;
    fs::write(args.out.join("report.json"), json).map_err(|e| CliError::Runtime(Error::io(args.out.join("report.json"), e)))?;
    write_file(&args.out.join("report.txt"), |out| {
        writeln!(out, "# manifest={MANIFEST}")?;
        out.write_all(report.to_text().as_bytes())
    })?;

    let mut manifest = RunManifest::new(
        "analyze",
        Some(model.seed()),
        serde_json::to_value(&cfg).map_err(Error::from)?,
    );
    manifest.add_input("checkpoint", &args.checkpoint)?;
    manifest.add_input("vocab", &args.vocab)?;
    if let Some(p) = &args.corpus {
        manifest.add_input("corpus", p)?;
    }
    if let Some(p) = &args.freq {
        manifest.add_input("freq", p)?;
    }
    if let Some(p) = &args.config {
        manifest.add_input("config", p)?;
    }
    manifest.outputs = vec!["report.json".into(), "report.txt".into()];
    manifest.write(&args.out.join(MANIFEST))?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct ComparisonBin {
    pub start: usize,
    pub end: usize,
    pub baseline_coverage: f64,
    pub candidate_coverage: f64,
    pub coverage_delta: f64,
    pub baseline_train_loss: Option<f64>,
    pub candidate_train_loss: Option<f64>,
    pub train_loss_delta: Option<f64>,
    pub baseline_eval_loss: Option<f64>,
    pub candidate_eval_loss: Option<f64>,
    pub eval_loss_delta: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ComparisonReport {
    manifest: &'static str,
    baseline: Strategy,
    candidate: Strategy,
    seed: u64,
    mean_masked_rank: [f64; 2],
    mean_masked_rank_delta: f64,
    final_mean_loss: [f64; 2],
    bins: Vec<ComparisonBin>,
    baseline_manifest: RunManifest,
    candidate_manifest: RunManifest,
}

fn mean_masked_rank(outcome: &TrainOutcome) -> f64 {
    let hist = outcome.metrics.total_histogram();
    let n: u64 = hist.iter().sum();
    let s: f64 = hist
        .iter()
        .enumerate()
        .map(|(id, &c)| c as f64 * outcome.table.rank(id as u32) as f64)
        .sum();
    s / n.max(1) as f64
}

fn opt_delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

pub(super) fn compare(args: CompareArgs) -> CliResult {
    let file = FileConfig::load_opt(args.input.config.as_deref())?;
    let (vocab, corpus) = load_inputs(&args.input, &file)?;
    let (base_cfg, base_warn) = resolve_train_config(Some(&args.baseline), &args.flags, &file, vocab.len())?;
    let (cand_cfg, cand_warn) = resolve_train_config(Some(&args.candidate), &args.flags, &file, vocab.len())?;
    let mut warnings: Vec<&String> = base_warn.iter().chain(&cand_warn).collect();
    warnings.sort();
    warnings.dedup();
    // a hyperparameter is only "unused" if neither side uses it
    for w in warnings {
        let used = [&base_cfg, &cand_cfg].iter().any(|c| {
            (w.starts_with("theta") || w.starts_with("alpha")) && c.strategy == Strategy::Frequency
                || w.starts_with("tau") && c.strategy == Strategy::Dynamic
        });
        if !used {
            eprintln!("warning: {w}");
        }
    }

    let base = trainer::train(&corpus, &vocab, &base_cfg)?;
    let cand = trainer::train(&corpus, &vocab, &cand_cfg)?;
    let bins = base.metrics.bins.clone();
    let cov_base: Vec<BinShare> = analysis::mask_coverage_report(&base.metrics, &base.table, &bins)?;
    let cov_cand = analysis::mask_coverage_report(&cand.metrics, &cand.table, &bins)?;
    let eval_base: Vec<BinLoss> = trainer::evaluate_by_bin(&base.model, &corpus, &vocab, &base.table, &bins)?;
    let eval_cand = trainer::evaluate_by_bin(&cand.model, &corpus, &vocab, &cand.table, &bins)?;
    let (last_base, last_cand) = (base.metrics.final_epoch(), cand.metrics.final_epoch());
    let rows = (0..bins.len())
        .map(|i| ComparisonBin {
            start: bins.ranges()[i].start,
            end: bins.ranges()[i].end,
            baseline_coverage: cov_base[i].share,
            candidate_coverage: cov_cand[i].share,
            coverage_delta: cov_cand[i].share - cov_base[i].share,
            baseline_train_loss: last_base.bin_loss[i],
            candidate_train_loss: last_cand.bin_loss[i],
            train_loss_delta: opt_delta(last_base.bin_loss[i], last_cand.bin_loss[i]),
            baseline_eval_loss: eval_base[i].mean_loss,
            candidate_eval_loss: eval_cand[i].mean_loss,
            eval_loss_delta: opt_delta(eval_base[i].mean_loss, eval_cand[i].mean_loss),
        })
        .collect();
    let (rank_base, rank_cand) = (mean_masked_rank(&base), mean_masked_rank(&cand));
    let report = ComparisonReport {
        manifest: MANIFEST,
        baseline: base_cfg.strategy,
        candidate: cand_cfg.strategy,
        seed: base_cfg.seed,
        mean_masked_rank: [rank_base, rank_cand],
        mean_masked_rank_delta: rank_cand - rank_base,
        final_mean_loss: [last_base.mean_loss, last_cand.mean_loss],
        bins: rows,
        baseline_manifest: train_manifest(&base_cfg, &args.input)?,
        candidate_manifest: train_manifest(&cand_cfg, &args.input)?,
    };

    create_dir(&args.out)?;
    let path = args.out.join("compare.json");
    fs::write(&path, json_line(&report)?).map_err(|e| CliError::Runtime(Error::io(&path, e)))?;
    let mut manifest = RunManifest::new(
        "compare",
        Some(base_cfg.seed),
        json!({ "baseline": base_cfg, "candidate": cand_cfg }),
    );
    record_inputs(&mut manifest, &args.input)?;
    manifest.outputs = vec!["compare.json".into()];
    manifest.write(&args.out.join(MANIFEST))?;
    Ok(())
}
