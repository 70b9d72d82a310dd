//! Command-line workflows over the core library. Every subcommand reads the
//! inputs named by its flags, writes the outputs named by its flags, and
//! prints a one-object JSON summary to stdout; diagnostics go to stderr.
//! Exit codes: 0 success, 1 usage error, 2 input/parse error, 3
//! runtime/numeric error.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use nlx_core::corpus::{self, NleSample, Split};
use nlx_core::embedding::EmbeddingTable;
use nlx_core::metrics::{self, EvalMode};
use nlx_core::model::{self, ModelConfig, ModelError, TrainConfig};
use nlx_core::synth::{self, ClassDescriptionSet, ReplayProvider, RetryPolicy};
use nlx_core::tokenizer::{self, Vocabulary};
use nlx_core::zeroshot::{self, PromptTemplate};

#[derive(Parser)]
#[command(name = "nlx", version, about = "Unified explanation-dataset toolkit", disable_help_subcommand = true)]
struct Cli {
    /// Seed overriding any config-file seeds (default: config value or 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Bound the worker pool; results never depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read, validate, merge, and optionally split record files.
    BuildCorpus(BuildCorpusArgs),
    /// Build synthesis prompts from paragraphs or class labels.
    SynthPrompt(SynthPromptArgs),
    /// Parse raw completions (or fetch them first) into records.
    SynthParse(SynthParseArgs),
    /// Assemble class-description records from description sets.
    SynthAssemble(SynthAssembleArgs),
    /// Word-length and question-repetition statistics.
    Stats(StatsArgs),
    /// Build a vocabulary from unified record sequences.
    Vocab(VocabArgs),
    /// Train the segment-aware causal language model.
    Train(TrainArgs),
    /// Decode answers and explanations from a checkpoint.
    Generate(GenerateArgs),
    /// Score predictions under the filtered/unfiltered protocol.
    Evaluate(EvaluateArgs),
    /// Zero-shot classification over embeddings, or prompt rendering.
    Zeroshot(ZeroshotArgs),
    /// Describe an embedding table file.
    InspectEmbeddings(InspectArgs),
}

#[derive(Args)]
struct BuildCorpusArgs {
    /// Input record files (repeatable).
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the manifest to this path.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Keep only this split.
    #[arg(long)]
    split: Option<String>,
}

#[derive(Args)]
struct SynthPromptArgs {
    /// vqa-parax or imagenetx.
    #[arg(long)]
    kind: String,
    /// JSONL with {id, text}: text is a paragraph (vqa-parax) or class label.
    #[arg(long)]
    input: PathBuf,
    /// Triplets requested per paragraph prompt.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Emit each prompt this many times (e.g. 2 calls of k=3 to reach 6
    /// triplets per paragraph); synth-parse collects responses per id.
    #[arg(long, default_value_t = 1)]
    calls_per_input: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthParseArgs {
    /// JSONL with {id, response, image_ref?}; mutually exclusive with --prompts.
    #[arg(long)]
    responses: Option<PathBuf>,
    /// JSONL with {id, prompt, image_ref?}; requires --replay or --live-url.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Replay file: JSON map of prompt SHA-256 to response text.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Live chat-completions endpoint URL.
    #[arg(long)]
    live_url: Option<String>,
    /// Model name sent to the live endpoint.
    #[arg(long, default_value = "gpt-3.5-turbo")]
    live_model: String,
    /// Triplets expected per response.
    #[arg(long, default_value_t = 3)]
    expected_k: usize,
    #[arg(long, default_value = "train")]
    split: String,
    /// Drop repeated (question, answer) pairs within one source.
    #[arg(long)]
    dedup: bool,
    /// Records written here.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-response parse reports (JSONL).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Retries for transient fetch failures.
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
}

#[derive(Args)]
struct SynthAssembleArgs {
    /// JSONL of class description sets.
    #[arg(long)]
    classes: PathBuf,
    #[arg(long, default_value_t = 3)]
    per_desc_images: usize,
    #[arg(long, default_value_t = 3)]
    heldout: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VocabArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_freq: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// JSON {"model": {...}, "train": {...}} mirroring the config structs.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Loss curve CSV (step,lr,loss).
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long, requires = "embedding_ids")]
    embeddings: Option<PathBuf>,
    #[arg(long, requires = "embeddings")]
    embedding_ids: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Records supplying questions (and gold fields for the output).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Force the gold answer and generate only the explanation.
    #[arg(long)]
    answer_conditioned: bool,
    #[arg(long, default_value_t = 64)]
    max_new: usize,
    #[arg(long, requires = "embedding_ids")]
    embeddings: Option<PathBuf>,
    #[arg(long, requires = "embeddings")]
    embedding_ids: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// filtered or unfiltered.
    #[arg(long)]
    mode: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ZeroshotArgs {
    /// Render mode: a template containing {class label} and optionally
    /// {explanation}; reads --classes as JSONL {label, explanations?}.
    #[arg(long)]
    render_template: Option<String>,
    /// Classify: image embedding table.
    #[arg(long, requires = "image_ids")]
    images: Option<PathBuf>,
    #[arg(long)]
    image_ids: Option<PathBuf>,
    /// Classify: prompt embedding table.
    #[arg(long, requires = "prompt_ids")]
    prompt_embeddings: Option<PathBuf>,
    #[arg(long)]
    prompt_ids: Option<PathBuf>,
    /// Render: JSONL {label, explanations?}. Classify: JSONL {label, prompt_ids}.
    #[arg(long)]
    classes: PathBuf,
    /// Classify: JSONL {image_id, label}.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Recorded in the report for bookkeeping.
    #[arg(long)]
    template_note: Option<String>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    ids: PathBuf,
}

enum CliError {
    Usage(String),
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Input(e) | CliError::Runtime(e) => format!("{e:#}"),
        }
    }
}

fn input_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Input(e.into())
}

fn model_err(e: ModelError) -> CliError {
    match e {
        ModelError::Divergence { .. } => CliError::Runtime(e.into()),
        other => CliError::Input(other.into()),
    }
}

fn main() {
    std::process::exit(run(std::env::args()));
}

fn run<I>(argv: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return 1;
        }
    };
    if let Some(threads) = cli.threads {
        // A second invocation in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let result = match &cli.command {
        Command::BuildCorpus(args) => build_corpus(args),
        Command::SynthPrompt(args) => synth_prompt(args),
        Command::SynthParse(args) => synth_parse(args),
        Command::SynthAssemble(args) => synth_assemble(args),
        Command::Stats(args) => stats(args),
        Command::Vocab(args) => vocab(args),
        Command::Train(args) => train(args, cli.seed),
        Command::Generate(args) => generate(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Zeroshot(args) => zeroshot_cmd(args),
        Command::InspectEmbeddings(args) => inspect(args),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    s.parse::<Split>()
        .map_err(|_| CliError::Usage(format!("unknown split {s:?} (train|val|test)")))
}

fn read_records(path: &Path) -> Result<Vec<NleSample>, CliError> {
    corpus::read_records(path)
        .with_context(|| format!("reading records from {}", path.display()))
        .map_err(CliError::Input)
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(input_err)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn build_corpus(args: &BuildCorpusArgs) -> Result<serde_json::Value, CliError> {
    let split = args.split.as_deref().map(parse_split).transpose()?;
    let mut corpora = Vec::new();
    for path in &args.input {
        corpora.push(read_records(path)?);
    }
    let (mut merged, _) = corpus::merge(corpora).map_err(input_err)?;
    if let Some(split) = split {
        merged.retain(|s| s.split == split);
    }
    let manifest = corpus::CorpusManifest::from_samples(&merged);
    corpus::write_records_to_path(&merged, &args.out).map_err(input_err)?;
    if let Some(path) = &args.manifest {
        std::fs::write(path, serde_json::to_string_pretty(&manifest).unwrap()).map_err(input_err)?;
    }
    Ok(json!({
        "command": "build-corpus",
        "out": args.out,
        "manifest": manifest,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptInput {
    id: String,
    text: String,
    #[serde(default)]
    image_ref: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct PromptLine {
    id: String,
    prompt: String,
    prompt_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_ref: Option<String>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(CliError::Input)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(input_err)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{}:{}", path.display(), i + 1))
                .map_err(CliError::Input)?,
        );
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), CliError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(input_err)?);
    for item in items {
        let line = serde_json::to_string(item).map_err(input_err)?;
        writeln!(w, "{line}").map_err(input_err)?;
    }
    w.flush().map_err(input_err)?;
    Ok(())
}

fn synth_prompt(args: &SynthPromptArgs) -> Result<serde_json::Value, CliError> {
    let inputs: Vec<PromptInput> = read_jsonl(&args.input)?;
    let mut lines = Vec::with_capacity(inputs.len());
    for item in &inputs {
        let prompt = match args.kind.as_str() {
            "vqa-parax" => synth::build_vqa_parax_prompt(&item.text, args.k),
            "imagenetx" => synth::build_imagenetx_prompt(&item.text),
            other => {
                return Err(CliError::Usage(format!(
                    "unknown kind {other:?} (vqa-parax|imagenetx)"
                )))
            }
        }
        .map_err(input_err)?;
        for _ in 0..args.calls_per_input.max(1) {
            lines.push(PromptLine {
                id: item.id.clone(),
                prompt_sha256: synth::prompt_hash(&prompt),
                prompt: prompt.clone(),
                image_ref: item.image_ref.clone(),
            });
        }
    }
    write_jsonl(&lines, &args.out)?;
    Ok(json!({
        "command": "synth-prompt",
        "kind": args.kind,
        "k": args.k,
        "calls_per_input": args.calls_per_input.max(1),
        "prompts": lines.len(),
        "out": args.out,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseLine {
    id: String,
    response: String,
    #[serde(default)]
    image_ref: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptFetchLine {
    id: String,
    prompt: String,
    #[serde(default)]
    image_ref: Option<String>,
    // present in synth-prompt output; not needed here but accepted
    #[serde(default, rename = "prompt_sha256")]
    _prompt_sha256: Option<String>,
}

fn synth_parse(args: &SynthParseArgs) -> Result<serde_json::Value, CliError> {
    let split = parse_split(&args.split)?;
    let responses: Vec<ResponseLine> = match (&args.responses, &args.prompts) {
        (Some(path), None) => read_jsonl(path)?,
        (None, Some(path)) => {
            let prompts: Vec<PromptFetchLine> = read_jsonl(path)?;
            let texts: Vec<String> = prompts.iter().map(|p| p.prompt.clone()).collect();
            let policy = RetryPolicy {
                max_retries: args.max_retries,
                ..RetryPolicy::default()
            };
            let outcomes = match (&args.replay, &args.live_url) {
                (Some(replay), None) => {
                    let provider = ReplayProvider::load(replay).map_err(input_err)?;
                    synth::fetch_completions(&provider, &texts, policy).map_err(input_err)?
                }
                (None, Some(url)) => {
                    let provider =
                        synth::LiveProvider::new(url, &args.live_model, synth::TOKEN_ENV_VAR)
                            .map_err(input_err)?;
                    synth::fetch_completions(&provider, &texts, policy)
                        .map_err(|e| CliError::Runtime(e.into()))?
                }
                _ => {
                    return Err(CliError::Usage(
                        "--prompts needs exactly one of --replay or --live-url".to_string(),
                    ))
                }
            };
            prompts
                .into_iter()
                .zip(outcomes)
                .map(|(p, o)| ResponseLine {
                    id: p.id,
                    response: o.text,
                    image_ref: p.image_ref,
                })
                .collect()
        }
        _ => {
            return Err(CliError::Usage(
                "give exactly one of --responses or --prompts".to_string(),
            ))
        }
    };

    // Responses sharing an id are multiple calls for the same source
    // (paragraph); their triplets pool together so --dedup works across
    // calls, matching the two-calls-of-three route to six per paragraph.
    let mut order: Vec<String> = Vec::new();
    let mut by_source: HashMap<String, (Option<String>, Vec<synth::SynthTriplet>)> = HashMap::new();
    let mut reports = Vec::new();
    let mut n_triplets = 0usize;
    let mut n_errors = 0usize;
    let mut n_warnings = 0usize;
    for line in &responses {
        if !by_source.contains_key(&line.id) {
            order.push(line.id.clone());
            by_source.insert(line.id.clone(), (line.image_ref.clone(), Vec::new()));
        }
        match synth::parse_triplets(&line.response, args.expected_k) {
            Ok(report) => {
                n_triplets += report.triplets.len();
                n_errors += report.errors.len();
                n_warnings += report.warnings.len();
                by_source
                    .get_mut(&line.id)
                    .unwrap()
                    .1
                    .extend(report.triplets.iter().cloned());
                reports.push(json!({
                    "id": line.id,
                    "triplets": report.triplets,
                    "errors": report.errors,
                    "warnings": report.warnings,
                }));
            }
            Err(e) => {
                n_errors += 1;
                reports.push(json!({
                    "id": line.id,
                    "triplets": [],
                    "errors": [{"position": 0, "reason": e.to_string()}],
                    "warnings": [],
                }));
            }
        }
    }
    let mut records = Vec::new();
    for id in &order {
        let (image_ref, triplets) = &by_source[id];
        let recs =
            synth::triplets_to_records(id, image_ref.as_deref(), split, triplets, args.dedup)
                .map_err(input_err)?;
        records.extend(recs);
    }
    corpus::write_records_to_path(&records, &args.out).map_err(input_err)?;
    if let Some(path) = &args.report {
        write_jsonl(&reports, path)?;
    }
    Ok(json!({
        "command": "synth-parse",
        "responses": responses.len(),
        "triplets": n_triplets,
        "records": records.len(),
        "parse_errors": n_errors,
        "warnings": n_warnings,
        "out": args.out,
    }))
}

fn synth_assemble(args: &SynthAssembleArgs) -> Result<serde_json::Value, CliError> {
    let sets: Vec<ClassDescriptionSet> = read_jsonl(&args.classes)?;
    let records =
        synth::assemble_imagenetx(&sets, args.per_desc_images, args.heldout).map_err(input_err)?;
    let manifest = corpus::CorpusManifest::from_samples(&records);
    corpus::write_records_to_path(&records, &args.out).map_err(input_err)?;
    Ok(json!({
        "command": "synth-assemble",
        "classes": sets.len(),
        "manifest": manifest,
        "out": args.out,
    }))
}

fn stats(args: &StatsArgs) -> Result<serde_json::Value, CliError> {
    let records = read_records(&args.input)?;
    let stats = synth::corpus_stats(&records);
    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_string_pretty(&stats).unwrap()).map_err(input_err)?;
    }
    Ok(json!({
        "command": "stats",
        "stats": stats,
    }))
}

fn vocab(args: &VocabArgs) -> Result<serde_json::Value, CliError> {
    let records = read_records(&args.input)?;
    let mut texts = Vec::with_capacity(records.len());
    for r in &records {
        texts.push(corpus::unify(r).map_err(input_err)?.text);
    }
    let vocab = Vocabulary::build(&texts, args.min_freq).map_err(input_err)?;
    vocab.save_to_path(&args.out).map_err(input_err)?;
    Ok(json!({
        "command": "vocab",
        "records": records.len(),
        "min_freq": args.min_freq,
        "size": vocab.size(),
        "out": args.out,
    }))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TrainFileConfig {
    #[serde(default)]
    model: Option<ModelConfig>,
    #[serde(default)]
    train: Option<TrainConfig>,
}

fn load_embeddings(
    table: &Option<PathBuf>,
    ids: &Option<PathBuf>,
) -> Result<Option<EmbeddingTable<f32>>, CliError> {
    match (table, ids) {
        (Some(t), Some(i)) => Ok(Some(EmbeddingTable::load(t, i).map_err(input_err)?)),
        _ => Ok(None),
    }
}

fn encode_records(
    records: &[NleSample],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<tokenizer::TokenizedExample>, CliError> {
    records
        .iter()
        .map(|r| {
            let unified = corpus::unify(r).map_err(input_err)?;
            let mut example = tokenizer::encode(&unified, vocab, max_len)
                .with_context(|| format!("encoding record {}", r.id))
                .map_err(CliError::Input)?;
            example.image_ref = r.image_ref.clone();
            Ok(example)
        })
        .collect()
}

fn train(args: &TrainArgs, seed: Option<u64>) -> Result<serde_json::Value, CliError> {
    let records = read_records(&args.records)?;
    let vocab = Vocabulary::load_from_path(&args.vocab).map_err(input_err)?;
    let config_text = std::fs::read_to_string(&args.config).map_err(input_err)?;
    let file_config: TrainFileConfig = serde_json::from_str(&config_text)
        .with_context(|| format!("parsing {}", args.config.display()))
        .map_err(CliError::Input)?;
    let mut model_config = file_config.model.unwrap_or_default();
    let mut train_config = file_config.train.unwrap_or_default();
    if model_config.vocab_size == 0 {
        model_config.vocab_size = vocab.size();
    } else if model_config.vocab_size != vocab.size() {
        return Err(CliError::Input(anyhow!(
            "config vocab_size {} does not match vocabulary size {}",
            model_config.vocab_size,
            vocab.size()
        )));
    }
    if let Some(seed) = seed {
        model_config.seed = seed;
        train_config.seed = seed;
    }
    let images = load_embeddings(&args.embeddings, &args.embedding_ids)?;
    let max_len = model_config.max_len - model_config.prefix_len();
    let examples = encode_records(&records, &vocab, max_len)?;
    let (model, curve) =
        model::train::<f32>(&examples, images.as_ref(), &model_config, &train_config)
            .map_err(model_err)?;
    model::save_checkpoint(&model, &args.checkpoint).map_err(model_err)?;
    if let Some(path) = &args.curve {
        let file = std::fs::File::create(path).map_err(input_err)?;
        model::write_curve_csv(&curve, std::io::BufWriter::new(file)).map_err(input_err)?;
    }
    Ok(json!({
        "command": "train",
        "examples": examples.len(),
        "steps": curve.len(),
        "final_loss": curve.last().map(|p| p.loss),
        "checkpoint": args.checkpoint,
        "checkpoint_sha256": sha256_file(&args.checkpoint)?,
    }))
}

fn generate(args: &GenerateArgs) -> Result<serde_json::Value, CliError> {
    let records = read_records(&args.input)?;
    let vocab = Vocabulary::load_from_path(&args.vocab).map_err(input_err)?;
    let model: model::LanguageModel<f32> =
        model::load_checkpoint(&args.checkpoint).map_err(model_err)?;
    let images = load_embeddings(&args.embeddings, &args.embedding_ids)?;
    let mut outputs = Vec::with_capacity(records.len());
    let mut truncated = 0usize;
    for record in &records {
        let question_ids: Vec<u32> = tokenizer::tokenize_text(&record.question)
            .iter()
            .map(|t| vocab.id_or_unk(t))
            .collect();
        let image = match (&record.image_ref, &images) {
            (Some(r), Some(table)) => table.get(r),
            _ => None,
        };
        let generation = if args.answer_conditioned {
            let answer_ids: Vec<u32> = tokenizer::tokenize_text(&record.answer)
                .iter()
                .map(|t| vocab.id_or_unk(t))
                .collect();
            model
                .decode_with_answer(&question_ids, &answer_ids, image, args.max_new, &vocab)
                .map_err(model_err)?
        } else {
            model
                .greedy_decode(&question_ids, image, args.max_new, &vocab)
                .map_err(model_err)?
        };
        if generation.truncated {
            truncated += 1;
        }
        let text = tokenizer::decode(&generation.ids, &vocab).map_err(input_err)?;
        outputs.push(metrics::PredictionRecord {
            sample_id: record.id.clone(),
            generated_text: text,
            gold_answers: vec![record.answer.clone()],
            gold_explanations: vec![record.explanation.clone()],
        });
    }
    let file = std::fs::File::create(&args.out).map_err(input_err)?;
    metrics::write_predictions(&outputs, std::io::BufWriter::new(file)).map_err(input_err)?;
    Ok(json!({
        "command": "generate",
        "predictions": outputs.len(),
        "truncated": truncated,
        "answer_conditioned": args.answer_conditioned,
        "out": args.out,
    }))
}

fn evaluate(args: &EvaluateArgs) -> Result<serde_json::Value, CliError> {
    let mode: EvalMode = args.mode.parse().map_err(CliError::Usage)?;
    let predictions = metrics::read_predictions(&args.predictions).map_err(input_err)?;
    let report = metrics::evaluate(&predictions, mode).map_err(input_err)?;
    let report_json = report.to_json();
    if let Some(path) = &args.out {
        std::fs::write(path, &report_json).map_err(input_err)?;
    }
    Ok(serde_json::from_str(&report_json).expect("report is valid json"))
}

#[derive(Deserialize)]
struct RenderClassLine {
    label: String,
    #[serde(default)]
    explanations: Vec<String>,
}

#[derive(Deserialize)]
struct ClassifyClassLine {
    label: String,
    prompt_ids: Vec<String>,
}

#[derive(Deserialize)]
struct LabelLine {
    image_id: String,
    label: String,
}

fn zeroshot_cmd(args: &ZeroshotArgs) -> Result<serde_json::Value, CliError> {
    if let Some(pattern) = &args.render_template {
        let template = PromptTemplate::new(pattern.clone()).map_err(input_err)?;
        let classes: Vec<RenderClassLine> = read_jsonl(&args.classes)?;
        let mut lines = Vec::new();
        let mut n_prompts = 0usize;
        for class in &classes {
            let prompts = zeroshot::render_prompts(&template, &class.label, &class.explanations)
                .map_err(input_err)?;
            n_prompts += prompts.len();
            lines.push(json!({"label": class.label, "prompts": prompts}));
        }
        write_jsonl(&lines, &args.out)?;
        return Ok(json!({
            "command": "zeroshot",
            "mode": "render",
            "classes": classes.len(),
            "prompts": n_prompts,
            "out": args.out,
        }));
    }

    let (Some(images_path), Some(image_ids), Some(prompts_path), Some(prompt_ids), Some(labels_path)) = (
        &args.images,
        &args.image_ids,
        &args.prompt_embeddings,
        &args.prompt_ids,
        &args.labels,
    ) else {
        return Err(CliError::Usage(
            "classify mode needs --images/--image-ids, --prompt-embeddings/--prompt-ids and --labels (or use --render-template)"
                .to_string(),
        ));
    };
    let images: EmbeddingTable<f32> =
        EmbeddingTable::load(images_path, image_ids).map_err(input_err)?;
    let prompts: EmbeddingTable<f32> =
        EmbeddingTable::load(prompts_path, prompt_ids).map_err(input_err)?;
    let classes: Vec<ClassifyClassLine> = read_jsonl(&args.classes)?;
    if classes.is_empty() {
        return Err(CliError::Input(anyhow!("no classes given")));
    }
    let mut class_vectors = Vec::with_capacity(classes.len());
    let mut prompt_counts = Vec::new();
    for class in &classes {
        let vectors: Vec<Vec<f32>> = class
            .prompt_ids
            .iter()
            .map(|id| {
                prompts.get(id).map(<[f32]>::to_vec).ok_or_else(|| {
                    anyhow!("prompt embedding {id:?} missing for class {:?}", class.label)
                })
            })
            .collect::<Result<_, _>>()
            .map_err(CliError::Input)?;
        prompt_counts.push(vectors.len());
        class_vectors.push(zeroshot::class_vector(&vectors).map_err(input_err)?);
    }
    let labels: Vec<LabelLine> = read_jsonl(labels_path)?;
    let label_of: HashMap<&str, &str> = labels
        .iter()
        .map(|l| (l.image_id.as_str(), l.label.as_str()))
        .collect();
    let class_index: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.label.as_str(), i))
        .collect();
    let gold: Vec<usize> = images
        .ids()
        .iter()
        .map(|id| {
            let label = label_of
                .get(id.as_str())
                .ok_or_else(|| anyhow!("image {id:?} has no label"))?;
            class_index
                .get(label)
                .copied()
                .ok_or_else(|| anyhow!("label {label:?} is not a known class"))
        })
        .collect::<Result<_, _>>()
        .map_err(CliError::Input)?;

    let classification = zeroshot::classify(&images, &class_vectors).map_err(input_err)?;
    let uniform_e = if prompt_counts.windows(2).all(|w| w[0] == w[1]) {
        prompt_counts.first().copied().unwrap_or(0)
    } else {
        0
    };
    let mut report = zeroshot::top1(&classification.predictions, &gold, classes.len())
        .map_err(input_err)?
        .with_explanations_per_class(uniform_e);
    if let Some(note) = &args.template_note {
        report = report.with_template(note.clone());
    }
    std::fs::write(&args.out, serde_json::to_string_pretty(&report).unwrap())
        .map_err(input_err)?;
    Ok(json!({
        "command": "zeroshot",
        "mode": "classify",
        "images": images.len(),
        "classes": classes.len(),
        "zero_vectors": classification.zero_vector_ids,
        "report": report,
        "out": args.out,
    }))
}

fn inspect(args: &InspectArgs) -> Result<serde_json::Value, CliError> {
    let table: EmbeddingTable<f32> =
        EmbeddingTable::load(&args.embeddings, &args.ids).map_err(input_err)?;
    let mut min_norm = f64::INFINITY;
    let mut max_norm = 0f64;
    for (_, v) in table.rows() {
        let norm = v
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt();
        min_norm = min_norm.min(norm);
        max_norm = max_norm.max(norm);
    }
    let first_ids: Vec<&String> = table.ids().iter().take(5).collect();
    Ok(json!({
        "command": "inspect-embeddings",
        "dim": table.dim(),
        "count": table.len(),
        "dtype": "f32",
        "min_norm": min_norm,
        "max_norm": max_norm,
        "first_ids": first_ids,
    }))
}
