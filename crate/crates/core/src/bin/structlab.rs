use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use structlab::checkpoint::Checkpoint;
use structlab::config::RunConfig;
use structlab::corpus::{
    parse_raw, read_bracketed, read_conll, toy_grammar_generate, write_bracketed, write_conll, GoldSentence, Punctuation, Vocab,
};
use structlab::depdist::decode_parents;
use structlab::eval::{
    baseline_trees, check_alignment, evaluate_span_sets, mean_std, predict, random_parent_baseline, render_table, rooted_parents, Baseline,
    MeanStd,
};
use structlab::model::{Model, ModelConfig};
use structlab::structures::tree_spans;
use structlab::tensor::{DType, Real};
use structlab::train::{evaluate_ppl, train};
use structlab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "structlab",
    version,
    about = "Train and evaluate dependency-constrained masked language models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a toy corpus with gold trees and dependencies.
    Generate(GenerateArgs),
    /// Train one model per seed on a raw corpus.
    Train(TrainArgs),
    /// Parse raw sentences with a checkpoint.
    Parse(ParseArgs),
    /// Score checkpoints or baselines against gold files.
    Eval(EvalArgs),
    /// Dump distances, heights, parent distributions and relation weights.
    Inspect(InspectArgs),
    /// Print the resolved configuration.
    Config(ConfigArgs),
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    mask_rate: Option<String>,
    /// parent, dep or parent+dep.
    #[arg(long)]
    relations: Option<String>,
    /// on or off.
    #[arg(long)]
    calibrate: Option<String>,
    /// dependency or softmax.
    #[arg(long)]
    attention: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Comma-separated seed list.
    #[arg(long)]
    seeds: Option<String>,
}

impl ConfigArgs {
    /// File first, then `--set`, then the named flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv}")))?;
            c.set(k.trim(), v)?;
        }
        let flags = [
            ("mask_rate", &self.mask_rate),
            ("relations", &self.relations),
            ("calibrate", &self.calibrate),
            ("attention", &self.attention),
            ("steps", &self.steps),
            ("seed", &self.seed),
            ("seeds", &self.seeds),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                c.set(k, v)?;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 5000)]
    sentences: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving corpus.txt, gold.trees and gold.conll.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Raw text, one sentence per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Held-out raw text for the final perplexity.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Raw sentences; standard input when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Include distances and heights.
    #[arg(long)]
    dump: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint path; `{seed}` expands over the seed list. Repeatable.
    #[arg(long)]
    checkpoint: Vec<String>,
    /// Score right, left, random or gold (pass-through) predictions instead.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    gold_trees: Option<PathBuf>,
    #[arg(long)]
    gold_deps_stanford: Option<PathBuf>,
    #[arg(long)]
    gold_deps_conll: Option<PathBuf>,
    /// Raw text for masked-LM perplexity.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
    /// Directory receiving report.json, report.txt and config.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Raw sentences; standard input when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(e) = cap_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Parse(a) => cmd_parse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Config(a) => a.resolve().map(|c| print!("{}", c.echo())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn cap_threads() -> Result<()> {
    let Ok(v) = std::env::var("STRUCTLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("STRUCTLAB_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: Option<&Path>) -> Result<(String, String)> {
    match path {
        Some(p) => Ok((fs::read_to_string(p).map_err(|e| Error::io(p, e))?, p.display().to_string())),
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s).map_err(|e| Error::io("<stdin>", e))?;
            Ok((s, "<stdin>".into()))
        }
    }
}

/// Whitespace-tokenized sentences, logging skipped blank lines.
fn raw_sentences(path: Option<&Path>, lowercase: bool) -> Result<Vec<Vec<String>>> {
    let (text, source) = read_text(path)?;
    let (sentences, blank) = parse_raw(&text, lowercase);
    if blank > 0 {
        warn!("{source}: skipped {blank} empty line(s)");
    }
    info!("{source}: {} sentence(s)", sentences.len());
    Ok(sentences)
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    create_dir(&a.out)?;
    let gold = toy_grammar_generate(a.seed, a.sentences);
    let raw: String = gold.iter().map(|g| g.tokens.join(" ") + "\n").collect();
    write_file(&a.out.join("corpus.txt"), raw)?;
    write_file(&a.out.join("gold.trees"), write_bracketed(&gold)?)?;
    write_file(&a.out.join("gold.conll"), write_conll(&gold)?)?;
    info!("wrote {} sentences to {}", gold.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let config = a.config.resolve()?;
    create_dir(&a.out)?;
    write_file(&a.out.join("config.txt"), config.echo())?;
    let text = raw_sentences(Some(&a.corpus), config.lowercase)?;
    let before = text.len();
    let text: Vec<Vec<String>> = text.into_iter().filter(|s| s.len() <= config.train_max_len).collect();
    if text.len() < before {
        warn!(
            "dropped {} training sentence(s) longer than {} tokens; {} remain",
            before - text.len(),
            config.train_max_len,
            text.len()
        );
    }
    let vocab = Vocab::build(&text, config.min_freq)?;
    info!("vocabulary of {} entries", vocab.len());
    let data: Vec<Vec<usize>> = text.iter().map(|s| vocab.encode(s)).collect();
    let valid = match &a.valid {
        Some(p) => Some(
            raw_sentences(Some(p), config.lowercase)?
                .iter()
                .map(|s| vocab.encode(s))
                .collect::<Vec<_>>(),
        ),
        None => None,
    };
    let seeds = config.seed_list();
    for &seed in &seeds {
        let mut run = config.clone();
        run.set("seed", &seed.to_string())?;
        run.seeds.clear();
        let dir = if seeds.len() > 1 {
            a.out.join(format!("seed-{seed}"))
        } else {
            a.out.clone()
        };
        create_dir(&dir)?;
        match run.model.precision {
            DType::F32 => train_one::<f32>(&run, &vocab, &data, valid.as_deref(), &dir)?,
            DType::F64 => train_one::<f64>(&run, &vocab, &data, valid.as_deref(), &dir)?,
        }
    }
    Ok(())
}

fn train_one<F: Real>(config: &RunConfig, vocab: &Vocab, data: &[Vec<usize>], valid: Option<&[Vec<usize>]>, dir: &Path) -> Result<()> {
    write_file(&dir.join("config.txt"), config.echo())?;
    let mut model = Model::<F>::new(ModelConfig {
        vocab_size: vocab.len(),
        ..config.model.clone()
    })?;
    info!(
        "seed {}: {} parameters, {} steps of {} sentences",
        config.model.seed,
        model.parameter_count(),
        config.train.steps,
        config.train.batch_size
    );
    let metrics_path = dir.join("metrics.jsonl");
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let summary = train(&mut model, data, &config.train, Some(&mut metrics))?;
    let (split, held) = match valid {
        Some(v) => ("valid", v),
        None => ("train", data),
    };
    let ppl = evaluate_ppl(&model, held, config.eval_seed, config.eval_batch_size)?;
    let last = json!({ "final": true, "split": split, "ppl": ppl, "steps": summary.steps, "wall_time": summary.wall_time });
    writeln!(metrics, "{last}").map_err(|e| Error::io(&metrics_path, e))?;
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    let ckpt = Checkpoint {
        model,
        vocab: vocab.tokens().to_vec(),
        step: summary.steps,
    };
    ckpt.save(dir.join("model.ckpt"))?;
    info!(
        "seed {}: final {split} ppl {ppl:.3} after {:.1}s",
        config.model.seed, summary.wall_time
    );
    Ok(())
}

fn load(path: &Path) -> Result<(Model<f64>, Vocab)> {
    let ckpt = Checkpoint::<f64>::load(path)?;
    let vocab = Vocab::from_tokens(ckpt.vocab)?;
    Ok((ckpt.model, vocab))
}

fn cmd_parse(a: ParseArgs) -> Result<()> {
    let config = a.config.resolve()?;
    let (model, vocab) = load(&a.checkpoint)?;
    let sentences = raw_sentences(a.input.as_deref(), config.lowercase)?;
    let ids: Vec<Vec<usize>> = sentences.iter().map(|s| vocab.encode(s)).collect();
    let oov: usize = ids.iter().flatten().filter(|&&i| i == Vocab::UNK_ID).count();
    if oov > 0 {
        info!("{oov} token(s) mapped to <unk>");
    }
    let predictions = predict(&model, &ids, config.eval_batch_size)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (words, p) in sentences.iter().zip(&predictions) {
        let heads: Vec<usize> = p.parents.iter().map(|q| q.map_or(0, |q| q + 1)).collect();
        let mut record = json!({
            "tokens": words,
            "tree": p.tree.render(words),
            "heads": heads,
        });
        if a.dump {
            record["tau"] = json!(p.tau);
            record["delta"] = json!(p.delta);
        }
        writeln!(out, "{record}").map_err(|e| Error::io("<stdout>", e))?;
    }
    out.flush().map_err(|e| Error::io("<stdout>", e))
}

/// One scored run: a checkpoint or a baseline draw.
#[derive(Serialize)]
struct RunReport {
    name: String,
    metrics: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct EvalReport {
    config: String,
    runs: Vec<RunReport>,
    summary: BTreeMap<String, MeanStd>,
}

struct Gold {
    trees: Option<Vec<GoldSentence>>,
    deps: Vec<(&'static str, Vec<GoldSentence>)>,
}

fn read_gold(a: &EvalArgs) -> Result<Gold> {
    let punct = Punctuation::default();
    let trees = a.gold_trees.as_ref().map(|p| read_bracketed(p, &punct)).transpose()?;
    let mut deps = Vec::new();
    for (name, path) in [("stanford", &a.gold_deps_stanford), ("conll", &a.gold_deps_conll)] {
        if let Some(p) = path {
            deps.push((name, read_conll(p, &punct)?));
        }
    }
    Ok(Gold { trees, deps })
}

fn put_constituency(
    metrics: &mut BTreeMap<String, f64>,
    spans: &[std::collections::BTreeSet<(usize, usize)>],
    gold: &[GoldSentence],
) -> Result<()> {
    let r = evaluate_span_sets(spans, None, gold)?;
    metrics.insert("uf1".into(), r.uf1);
    metrics.insert("precision".into(), r.precision);
    metrics.insert("recall".into(), r.recall);
    for (label, v) in r.label_recall {
        metrics.insert(format!("recall.{label}"), v);
    }
    Ok(())
}

fn put_attachment(metrics: &mut BTreeMap<String, f64>, name: &str, parents: &[Vec<Option<usize>>], gold: &[GoldSentence]) -> Result<()> {
    let spans: Vec<_> = gold.iter().map(|_| Default::default()).collect();
    let r = evaluate_span_sets(&spans, Some(parents), gold)?;
    metrics.insert(format!("{name}.uas"), r.uas.unwrap_or(f64::NAN));
    metrics.insert(format!("{name}.uuas"), r.uuas.unwrap_or(f64::NAN));
    Ok(())
}

fn eval_checkpoint(path: &Path, gold: &Gold, ppl_text: Option<&[Vec<String>]>, config: &RunConfig) -> Result<BTreeMap<String, f64>> {
    let (model, vocab) = load(path)?;
    let mut metrics = BTreeMap::new();
    let encode = |g: &[GoldSentence]| -> Result<Vec<Vec<usize>>> {
        let ids: Vec<Vec<usize>> = g.iter().map(|s| vocab.encode(&s.tokens)).collect();
        check_alignment(&vocab, &ids, g)?;
        Ok(ids)
    };
    if let Some(trees) = &gold.trees {
        let preds = predict(&model, &encode(trees)?, config.eval_batch_size)?;
        let spans: Vec<_> = preds.iter().map(|p| tree_spans(&p.tree)).collect();
        put_constituency(&mut metrics, &spans, trees)?;
    }
    for (name, g) in &gold.deps {
        let preds = predict(&model, &encode(g)?, config.eval_batch_size)?;
        let parents: Vec<_> = preds.into_iter().map(|p| p.parents).collect();
        put_attachment(&mut metrics, name, &parents, g)?;
    }
    if let Some(text) = ppl_text {
        let ids: Vec<Vec<usize>> = text.iter().map(|s| vocab.encode(s)).collect();
        metrics.insert("ppl".into(), evaluate_ppl(&model, &ids, config.eval_seed, config.eval_batch_size)?);
    }
    Ok(metrics)
}

fn eval_baseline(kind: &str, seed: u64, gold: &Gold) -> Result<BTreeMap<String, f64>> {
    let mut metrics = BTreeMap::new();
    let lengths = |g: &[GoldSentence]| g.iter().map(GoldSentence::len).collect::<Vec<_>>();
    if kind == "gold" {
        if let Some(trees) = &gold.trees {
            let spans: Vec<_> = trees.iter().map(GoldSentence::span_set).collect();
            put_constituency(&mut metrics, &spans, trees)?;
        }
        for (name, g) in &gold.deps {
            let parents: Vec<_> = g.iter().map(|s| s.heads.clone().unwrap_or_default()).collect();
            put_attachment(&mut metrics, name, &parents, g)?;
        }
        return Ok(metrics);
    }
    let kind: Baseline = kind.parse()?;
    if let Some(trees) = &gold.trees {
        let spans: Vec<_> = baseline_trees(&lengths(trees), kind, seed)?.iter().map(tree_spans).collect();
        put_constituency(&mut metrics, &spans, trees)?;
    }
    if kind == Baseline::Random {
        for (name, g) in &gold.deps {
            put_attachment(&mut metrics, name, &random_parent_baseline(&lengths(g), seed)?, g)?;
        }
    }
    Ok(metrics)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let config = a.config.resolve()?;
    if a.checkpoint.is_empty() == a.baseline.is_none() {
        return Err(Error::Config("eval needs either --checkpoint or --baseline".into()));
    }
    if a.gold_trees.is_none() && a.gold_deps_stanford.is_none() && a.gold_deps_conll.is_none() && a.corpus.is_none() {
        return Err(Error::Config(
            "eval needs at least one of --gold-trees, --gold-deps-stanford, --gold-deps-conll, --corpus".into(),
        ));
    }
    let start = Instant::now();
    let gold = read_gold(&a)?;
    let ppl_text = a.corpus.as_deref().map(|p| raw_sentences(Some(p), config.lowercase)).transpose()?;
    let seeds = config.seed_list();
    let mut runs = Vec::new();
    if let Some(kind) = &a.baseline {
        for &seed in &seeds {
            runs.push(RunReport {
                name: format!("{kind}-seed-{seed}"),
                metrics: eval_baseline(kind, seed, &gold)?,
            });
        }
    }
    let mut paths = Vec::new();
    for pattern in &a.checkpoint {
        if pattern.contains("{seed}") {
            paths.extend(seeds.iter().map(|s| pattern.replace("{seed}", &s.to_string())));
        } else {
            paths.push(pattern.clone());
        }
    }
    for path in paths {
        let metrics = eval_checkpoint(Path::new(&path), &gold, ppl_text.as_deref(), &config)?;
        runs.push(RunReport { name: path, metrics });
    }
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &runs {
        for (k, v) in &r.metrics {
            columns.entry(k.clone()).or_default().push(*v);
        }
    }
    let summary: BTreeMap<String, MeanStd> = columns.into_iter().map(|(k, v)| (k, mean_std(&v))).collect();
    let report = EvalReport {
        config: config.echo(),
        runs,
        summary,
    };
    let table = render_table(&report.summary);
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("config.txt"), config.echo())?;
        write_file(&dir.join("report.json"), &json)?;
        write_file(&dir.join("report.txt"), &table)?;
    }
    if a.json {
        println!("{json}");
    } else {
        print!("{table}");
    }
    info!("evaluated {} run(s) in {:.1}s", report.runs.len(), start.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let config = a.config.resolve()?;
    let (model, vocab) = load(&a.checkpoint)?;
    let sentences = raw_sentences(a.input.as_deref(), config.lowercase)?;
    let ids: Vec<Vec<usize>> = sentences.iter().map(|s| vocab.encode(s)).collect();
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(File::create(p).map_err(|e| Error::io(p, e))?),
        None => Box::new(io::stdout()),
    };
    let mut out = BufWriter::new(sink);
    let dest = a.out.as_ref().map_or("<stdout>".to_string(), |p| p.display().to_string());
    let mut emit = |record: serde_json::Value| writeln!(out, "{record}").map_err(|e| Error::io(&dest, e));
    let (mu1, mu2) = model.temperatures().unzip();
    let weights: Vec<Vec<[f64; 2]>> = model
        .relation_mixes()
        .into_iter()
        .map(|layer| layer.into_iter().map(|(p, d)| [p, d]).collect())
        .collect();
    emit(json!({
        "relation_weights": weights,
        "relations": ["parent", "dependent"],
        "mu1": mu1,
        "mu2": mu2,
    }))?;
    for (chunk_words, chunk_ids) in sentences.chunks(config.eval_batch_size).zip(ids.chunks(config.eval_batch_size)) {
        for (words, s) in chunk_words.iter().zip(model.structures(chunk_ids)?) {
            let decoded = rooted_parents(&decode_parents(&s.parents), &s.delta);
            emit(json!({
                "tokens": words,
                "tau": s.tau,
                "delta": s.delta,
                "parent_matrix": s.parents.as_slice(),
                "row_entropy": s.parents.row_entropies(),
                "decoded_parents": decoded,
            }))?;
        }
    }
    out.flush().map_err(|e| Error::io(&dest, e))
}
