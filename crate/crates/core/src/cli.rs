//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 on data or runtime errors (and on a failed
//! gradient check), 2 on usage errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::TrainingConfig;
use crate::corpus::{build_vocab, expand_multilabel, load_pairs, read_instances, IndexedInstance, Split};
use crate::error::{Error, Result};
use crate::parallel::Executor;
use crate::params::Mode;
use crate::synthetic::gradcheck_problem;
use crate::trainer::{self, evaluate, gradient_check, initial_params, predict_pair, TrainState};
use crate::treebank::{normalize, parse_ptb_many};

pub const SEED_ENV: &str = "TREECOMP_SEED";

#[derive(Debug, Parser)]
#[command(name = "treecomp", version, about = "Tree-structured discourse relation classifier")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize PTB trees or JSONL argument pairs into binary-tree JSONL.
    Preprocess(PreprocessArgs),
    /// Train a model and write checkpoints, a log and a run manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split and print the report as JSON.
    Eval(EvalArgs),
    /// Predict relation labels for argument pairs.
    Predict(PredictArgs),
    /// Compare analytic and finite-difference gradients on a random problem.
    Gradcheck(GradcheckArgs),
    /// Write the tag embedding table as TSV.
    ExportTagEmbeddings(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InputFormat {
    Ptb,
    Jsonl,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: InputFormat,
    /// Run manifest path [default: <output>.manifest.json]
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "from_manifest")]
    data: Option<PathBuf>,
    /// Best-model checkpoint path; `<out>.last` holds the resumable state.
    #[arg(long, required_unless_present = "from_manifest")]
    out: Option<PathBuf>,
    /// Pre-trained word vectors in GloVe text format.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Run seed [fallback: TREECOMP_SEED]
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Training log path [default: <out>.log.jsonl]
    #[arg(long)]
    log: Option<PathBuf>,
    /// Record per-epoch wall time in the log.
    #[arg(long)]
    log_timing: bool,
    /// Continue from `<out>.last` when it exists.
    #[arg(long)]
    resume: bool,
    /// Repeat a recorded run.
    #[arg(long, conflicts_with_all = ["config", "data", "embeddings", "overrides", "mode", "epochs", "seed", "resume"])]
    from_manifest: Option<PathBuf>,
    /// Run manifest path [default: <out>.manifest.json]
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Run manifest path [default: <model>.eval-<split>.manifest.json]
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output JSONL path [default: stdout]
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Run manifest path [default: <output or model>.predict.manifest.json]
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value = "tag_tree_lstm")]
    mode: Mode,
    /// Problem seed [fallback: TREECOMP_SEED, then 0]
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.0001)]
    lambda: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Also include the embedding tables in the L2 term.
    #[arg(long)]
    regularize_embeddings: bool,
    /// Run manifest path (written only when given).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output TSV path [default: stdout]
    #[arg(long)]
    output: Option<PathBuf>,
    /// Run manifest path [default: <output or model>.tags.manifest.json]
    #[arg(long)]
    manifest: Option<PathBuf>,
}

/// Fully resolved description of one invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub config: Option<TrainingConfig>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub options: BTreeMap<String, Value>,
}

impl RunManifest {
    fn new(command: &str, seed: Option<u64>, threads: usize) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            threads,
            config: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            options: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(format!("bad run manifest {}: {e}", path.display())))
    }

    fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

/// Parses `argv` (including the program name), runs the command and maps the
/// outcome to an exit code.
pub fn main_with<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

/// Runs a parsed command; `Ok(false)` signals a failed check.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Preprocess(a) => preprocess(a).map(|_| true),
        Command::Train(a) => train(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Predict(a) => predict(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a),
        Command::ExportTagEmbeddings(a) => export_tags(a).map(|_| true),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn normalize_argument(v: &Value, line: usize, key: &str) -> Result<String> {
    let texts: Vec<&str> = match v {
        Value::String(s) => vec![s.as_str()],
        Value::Array(items) => items
            .iter()
            .map(|i| i.as_str().ok_or_else(|| Error::data_at(line, format!("{key} entries must be strings"))))
            .collect::<Result<_>>()?,
        _ => return Err(Error::data_at(line, format!("{key} must be a string or a list of strings"))),
    };
    let mut trees = Vec::new();
    for t in texts {
        trees.extend(parse_ptb_many(t).map_err(|e| Error::data_at(line, format!("{key}: {e}")))?);
    }
    Ok(normalize(trees).map_err(|e| Error::data_at(line, format!("{key}: {e}")))?.to_string())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let mut out = String::new();
    match a.format {
        InputFormat::Ptb => {
            let trees = parse_ptb_many(&text).map_err(|e| Error::data(e.to_string()))?;
            for t in trees {
                let tree = normalize(vec![t])?.to_string();
                out.push_str(&json!({ "tree": tree }).to_string());
                out.push('\n');
            }
        }
        InputFormat::Jsonl => {
            for (no, line) in text.lines().enumerate() {
                let line_no = no + 1;
                if line.trim().is_empty() {
                    continue;
                }
                let mut rec: Value =
                    serde_json::from_str(line).map_err(|e| Error::data_at(line_no, format!("malformed JSON: {e}")))?;
                let obj = rec
                    .as_object_mut()
                    .ok_or_else(|| Error::data_at(line_no, "record must be a JSON object"))?;
                for key in ["arg1", "arg2"] {
                    let v = obj.get(key).ok_or_else(|| Error::data_at(line_no, format!("missing {key}")))?;
                    let norm = normalize_argument(v, line_no, key)?;
                    obj.insert(key.into(), Value::String(norm));
                }
                out.push_str(&rec.to_string());
                out.push('\n');
            }
        }
    }
    write_atomic(&a.output, out.as_bytes())?;
    let mut m = RunManifest::new("preprocess", None, 1);
    m.inputs.insert("input".into(), absolute(&a.input)?);
    m.outputs.insert("output".into(), absolute(&a.output)?);
    m.options.insert("format".into(), json!(format!("{:?}", a.format).to_lowercase()));
    m.save(&a.manifest.unwrap_or_else(|| with_suffix(&a.output, ".manifest.json")))
}

struct TrainPlan {
    config: TrainingConfig,
    data: PathBuf,
    embeddings: Option<PathBuf>,
    out: PathBuf,
    log: PathBuf,
    threads: usize,
    log_timing: bool,
    resume: bool,
    manifest: PathBuf,
}

fn resolve_train(a: TrainArgs) -> Result<TrainPlan> {
    if let Some(path) = &a.from_manifest {
        let m = RunManifest::load(path)?;
        if m.command != "train" {
            return Err(Error::InvalidArgument(format!("{} records a {} run", path.display(), m.command)));
        }
        let config = m.config.ok_or_else(|| Error::data("train manifest has no config"))?;
        let data = m.inputs.get("data").cloned().ok_or_else(|| Error::data("train manifest has no data input"))?;
        let (out, log) = match a.out {
            Some(out) => {
                let log = a.log.unwrap_or_else(|| with_suffix(&out, ".log.jsonl"));
                (out, log)
            }
            None => (
                m.outputs.get("checkpoint").cloned().ok_or_else(|| Error::data("train manifest has no checkpoint"))?,
                a.log.or_else(|| m.outputs.get("log").cloned()).ok_or_else(|| Error::data("train manifest has no log"))?,
            ),
        };
        let log_timing = a.log_timing || m.options.get("log_timing").and_then(Value::as_bool).unwrap_or(false);
        return Ok(TrainPlan {
            config,
            data,
            embeddings: m.inputs.get("embeddings").cloned(),
            manifest: a.manifest.unwrap_or_else(|| with_suffix(&out, ".manifest.json")),
            out,
            log,
            threads: a.threads.unwrap_or(m.threads),
            log_timing,
            resume: false,
        });
    }
    let mut config = TrainingConfig::default();
    let mut seed_set = false;
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        seed_set = config.apply_text(&text)?.iter().any(|k| k == "seed");
    }
    if !seed_set {
        if let Some(s) = env_seed()? {
            config.seed = s;
        }
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(m) = a.mode {
        config.mode = m;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    let out = a.out.expect("required by clap");
    Ok(TrainPlan {
        config,
        data: a.data.expect("required by clap"),
        embeddings: a.embeddings,
        log: a.log.unwrap_or_else(|| with_suffix(&out, ".log.jsonl")),
        manifest: a.manifest.unwrap_or_else(|| with_suffix(&out, ".manifest.json")),
        out,
        threads: a.threads.unwrap_or(1),
        log_timing: a.log_timing,
        resume: a.resume,
    })
}

fn load_split_instances(path: &Path, labels: &[String]) -> Result<Vec<crate::corpus::Instance>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_instances(BufReader::new(f), labels)
}

fn train(a: TrainArgs) -> Result<()> {
    let plan = resolve_train(a)?;
    let cfg = &plan.config;
    let executor = Executor::new(plan.threads)?;
    let labels = cfg.level.label_names();
    let instances = expand_multilabel(load_split_instances(&plan.data, &labels)?);
    let (train_raw, rest): (Vec<_>, Vec<_>) = instances.into_iter().partition(|i| i.split == Split::Train);
    if train_raw.is_empty() {
        return Err(Error::data("no training instances"));
    }
    let mut emb_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    emb_rng.set_stream(1);
    let (vocab, tables) = build_vocab(
        &train_raw,
        labels.clone(),
        plan.embeddings.as_deref(),
        cfg.word_dim,
        cfg.tag_dim,
        &mut emb_rng,
    )?;
    let train_set: Vec<IndexedInstance> = train_raw.iter().map(|i| vocab.index_instance(i)).collect();
    let dev_set: Vec<IndexedInstance> =
        rest.iter().filter(|i| i.split == Split::Dev).map(|i| vocab.index_instance(i)).collect();

    let last = with_suffix(&plan.out, ".last");
    let resumed = plan.resume && last.exists();
    let mut state = if resumed {
        let ckpt = Checkpoint::load(&last)?;
        let mut saved = ckpt.config.clone();
        saved.epochs = cfg.epochs;
        if saved != *cfg {
            return Err(Error::InvalidArgument(format!(
                "{} was trained with a different configuration",
                last.display()
            )));
        }
        if ckpt.vocab.hashes() != vocab.hashes() {
            return Err(Error::data(format!("{} was trained on a different vocabulary", last.display())));
        }
        ckpt.into_train_state()?
    } else {
        TrainState::new(initial_params(cfg, &tables, labels.len())?, cfg)?
    };

    let mut manifest = RunManifest::new("train", Some(cfg.seed), plan.threads);
    manifest.config = Some(cfg.clone());
    manifest.inputs.insert("data".into(), absolute(&plan.data)?);
    if let Some(e) = &plan.embeddings {
        manifest.inputs.insert("embeddings".into(), absolute(e)?);
    }
    let vocab_path = with_suffix(&plan.out, ".vocab.json");
    manifest.outputs.insert("checkpoint".into(), absolute(&plan.out)?);
    manifest.outputs.insert("resume_state".into(), absolute(&last)?);
    manifest.outputs.insert("log".into(), absolute(&plan.log)?);
    manifest.outputs.insert("vocab".into(), absolute(&vocab_path)?);
    manifest.options.insert("log_timing".into(), json!(plan.log_timing));
    manifest.options.insert("resumed".into(), json!(resumed));
    manifest.save(&plan.manifest)?;
    write_atomic(&vocab_path, format!("{}\n", vocab.to_json()).as_bytes())?;

    let log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resumed)
        .truncate(!resumed)
        .open(&plan.log)
        .map_err(|e| Error::io(&plan.log, e))?;
    let mut log = BufWriter::new(log_file);
    let save = |state: &TrainState| -> Result<()> {
        Checkpoint::best_of(cfg, &vocab, state).save(&plan.out)?;
        Checkpoint::resumable(cfg, &vocab, state).save(&last)
    };
    let started = Instant::now();
    trainer::train(&mut state, cfg, &train_set, &dev_set, &labels, &executor, |st, entry| {
        let mut entry = entry.clone();
        if plan.log_timing {
            entry.wall_time_secs = Some(started.elapsed().as_secs_f64());
        }
        let line = serde_json::to_string(&entry).expect("log entry serializes");
        writeln!(log, "{line}").and_then(|_| log.flush()).map_err(|e| Error::io(&plan.log, e))?;
        eprintln!("{line}");
        save(st)
    })?;
    save(&state)?;
    println!(
        "{}",
        json!({
            "epochs": state.epoch,
            "best_epoch": state.best_epoch,
            "best_dev_accuracy": state.best_dev_accuracy,
            "checkpoint": plan.out,
        })
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.model)?;
    let executor = Executor::new(a.threads)?;
    let instances = load_split_instances(&a.data, ckpt.vocab.labels())?;
    let selected: Vec<IndexedInstance> = instances
        .iter()
        .filter(|i| i.split == a.split)
        .map(|i| ckpt.vocab.index_instance(i))
        .collect();
    let report = evaluate(&ckpt.params, &selected, ckpt.vocab.labels(), &executor)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    let split = format!("{:?}", a.split).to_lowercase();
    let mut m = RunManifest::new("eval", None, a.threads);
    m.inputs.insert("model".into(), absolute(&a.model)?);
    m.inputs.insert("data".into(), absolute(&a.data)?);
    m.options.insert("split".into(), json!(split));
    m.options.insert("report".into(), serde_json::to_value(&report).expect("report serializes"));
    m.save(&a.manifest.unwrap_or_else(|| with_suffix(&a.model, &format!(".eval-{split}.manifest.json"))))
}

fn predict(a: PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.model)?;
    let executor = Executor::new(a.threads)?;
    let pairs = load_pairs(&a.data)?;
    let indexed: Vec<_> = pairs
        .iter()
        .map(|p| (ckpt.vocab.index_tree(&p.arg1), ckpt.vocab.index_tree(&p.arg2)))
        .collect();
    let dists = executor.map(indexed.len(), |k| predict_pair(&ckpt.params, &indexed[k].0, &indexed[k].1));
    let labels = ckpt.vocab.labels();
    let mut sink: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let out_name = a.output.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    for (pair, dist) in pairs.iter().zip(dists) {
        let dist = dist?;
        let distribution: Vec<Value> = labels
            .iter()
            .zip(&dist.probs)
            .map(|(l, p)| json!({ "label": l, "prob": p }))
            .collect();
        let rec = json!({
            "id": pair.id,
            "label": labels[dist.argmax()],
            "distribution": distribution,
        });
        writeln!(sink, "{rec}").map_err(|e| Error::io(&out_name, e))?;
    }
    sink.flush().map_err(|e| Error::io(&out_name, e))?;
    let mut m = RunManifest::new("predict", None, a.threads);
    m.inputs.insert("model".into(), absolute(&a.model)?);
    m.inputs.insert("data".into(), absolute(&a.data)?);
    if let Some(o) = &a.output {
        m.outputs.insert("predictions".into(), absolute(o)?);
    }
    let base = a.output.as_ref().unwrap_or(&a.model);
    m.save(&a.manifest.unwrap_or_else(|| with_suffix(base, ".predict.manifest.json")))
}

fn gradcheck(a: GradcheckArgs) -> Result<bool> {
    if !(a.lambda >= 0.0 && a.tolerance > 0.0) {
        return Err(Error::InvalidArgument("lambda must be non-negative and tolerance positive".into()));
    }
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let (params, inst, gold) = gradcheck_problem(a.mode, seed);
    let report = gradient_check(&params, &inst, gold, a.lambda, a.regularize_embeddings, seed)?;
    let mut out = io::stdout().lock();
    for t in &report.tensors {
        let _ = writeln!(out, "{}\t{:.3e}\t{}/{}", t.name, t.max_relative_error, t.checked, t.entries);
    }
    let pass = report.passes(a.tolerance);
    let _ = writeln!(
        out,
        "max\t{:.3e}\t{}",
        report.max_relative_error(),
        if pass { "PASS" } else { "FAIL" }
    );
    if let Some(path) = &a.manifest {
        let mut m = RunManifest::new("gradcheck", Some(seed), 1);
        m.options.insert("mode".into(), json!(a.mode));
        m.options.insert("lambda".into(), json!(a.lambda));
        m.options.insert("tolerance".into(), json!(a.tolerance));
        m.options.insert("regularize_embeddings".into(), json!(a.regularize_embeddings));
        m.options.insert("passed".into(), json!(pass));
        m.save(path)?;
    }
    Ok(pass)
}

fn export_tags(a: ExportArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.model)?;
    let table = ckpt.params.tags.as_ref().ok_or_else(|| {
        Error::Mode(format!("{} models have no tag embeddings", ckpt.params.mode))
    })?;
    let mut text = String::new();
    for (id, tag) in ckpt.vocab.tags().iter().enumerate() {
        text.push_str(tag);
        for v in table.row(id) {
            text.push('\t');
            text.push_str(&v.to_string());
        }
        text.push('\n');
    }
    match &a.output {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => io::stdout().lock().write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))?,
    }
    let mut m = RunManifest::new("export-tag-embeddings", None, 1);
    m.inputs.insert("model".into(), absolute(&a.model)?);
    if let Some(o) = &a.output {
        m.outputs.insert("tsv".into(), absolute(o)?);
    }
    let base = a.output.as_ref().unwrap_or(&a.model);
    m.save(&a.manifest.unwrap_or_else(|| with_suffix(base, ".tags.manifest.json")))
}

/// Reads a TSV written by `export-tag-embeddings`.
pub fn read_tag_tsv<R: BufRead>(reader: R) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rows = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<tsv>", e))?;
        let mut fields = line.split('\t');
        let tag = fields.next().unwrap_or_default().to_string();
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|_| Error::data_at(no + 1, format!("bad number {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push((tag, values));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_map_to_two() {
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), 2);
        assert_eq!(exit_code(&Error::data("x")), 1);
        assert_eq!(exit_code(&Error::Mode("x".into())), 1);
    }

    #[test]
    fn argument_normalization() {
        let v = json!(["(S (NN a))", "(S (NN b) (NN c))"]);
        assert_eq!(
            normalize_argument(&v, 1, "arg1").unwrap(),
            "(Root (NN a) (S (NN b) (NN c)))"
        );
        assert!(normalize_argument(&json!(3), 1, "arg1").is_err());
        assert!(normalize_argument(&json!("(S (NN a)"), 1, "arg1").is_err());
    }

    #[test]
    fn suffixes() {
        assert_eq!(with_suffix(Path::new("a/m.ckpt"), ".last"), PathBuf::from("a/m.ckpt.last"));
    }

    #[test]
    fn tsv_reader() {
        let rows = read_tag_tsv(io::Cursor::new("NP\t0.5\t-1\nVP\t2\t3\n")).unwrap();
        assert_eq!(rows[0], ("NP".to_string(), vec![0.5, -1.0]));
        assert!(read_tag_tsv(io::Cursor::new("NP\tx\n")).is_err());
    }
}
