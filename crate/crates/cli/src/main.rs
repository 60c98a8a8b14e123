//! `hseq` command-line front end.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, CommandFactory, Parser, Subcommand};
use hseq_core::cascade::{
    build_coarse_training_set, build_fine_training_set, load_model, save_model, to_examples, translate_batch,
    translate_coarse_batch,
};
use hseq_core::config::RunConfig;
use hseq_core::corpus::{
    build_vocabulary, clean_corpus, corpus_stats, default_illegal, numericalize, pair_lines, read_lines, tokenize,
    SentencePair, Vocabulary,
};
use hseq_core::evaluation::{multi_ref_select, perplexity, EvaluationReport};
use hseq_core::segmenter::{parse_delimiter_list, segment, SegmentRuleSet};
use hseq_core::training::{fine_tune, train, TrainingOutcome};
use hseq_core::{HseqError, IdPair, NetworkRole, Seq2Seq};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "hseq", version, about = "Coarse-to-fine hierarchical translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split each line into segments, one per output line, blank line between sentences
    Segment(SegmentArgs),
    /// Corpus cleaning and segmentation statistics
    Stats(StatsArgs),
    /// Build a frequency-capped vocabulary file from a token corpus
    BuildVocab(BuildVocabArgs),
    /// Train the coarse network on short pairs and segments of long pairs
    TrainCoarse(TrainCoarseArgs),
    /// Train the fine network on coarse translations of the training sources
    TrainFine(TrainFineArgs),
    /// Translate a file line by line
    Translate(TranslateArgs),
    /// Score hypotheses with BLEU, long/short splits and length buckets
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct RuleArgs {
    /// Length above which a sentence is segmented
    #[arg(long, default_value_t = 50)]
    threshold: usize,
    /// File listing delimiters, one per line (replaces the built-in sets)
    #[arg(long)]
    delimiters: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    rules: RuleArgs,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[command(flatten)]
    rules: RuleArgs,
}

#[derive(Args, Debug)]
struct BuildVocabArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Maximum vocabulary size including the four reserved tokens
    #[arg(long, default_value_t = 50_000)]
    max_size: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long)]
    vocab_tgt: PathBuf,
    /// Output checkpoint; the network description is written next to it
    #[arg(long)]
    output: PathBuf,
    /// key = value run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint to fine-tune from instead of a random init
    #[arg(long)]
    init: Option<PathBuf>,
    /// Per-step `step<TAB>lr<TAB>loss` log
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Apply the corpus cleaning filters before training
    #[arg(long)]
    clean: bool,
    #[command(flatten)]
    rules: RuleArgs,
}

#[derive(Args, Debug)]
struct TrainCoarseArgs {
    #[command(flatten)]
    common: TrainArgs,
    #[arg(long)]
    vocab_src: PathBuf,
}

#[derive(Args, Debug)]
struct TrainFineArgs {
    #[command(flatten)]
    common: TrainArgs,
    /// Trained coarse checkpoint used to produce the fine inputs
    #[arg(long)]
    coarse: PathBuf,
}

#[derive(Args, Debug)]
struct TranslateArgs {
    #[arg(long)]
    coarse: PathBuf,
    /// Fine checkpoint; omit for coarse-only output
    #[arg(long)]
    fine: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    rules: RuleArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Hypotheses, one tokenized sentence per line
    #[arg(long)]
    hyp: PathBuf,
    /// Reference file; repeat for multiple references per sentence
    #[arg(long = "ref", required = true)]
    references: Vec<PathBuf>,
    /// Source file, used for length splits
    #[arg(long)]
    src: PathBuf,
    #[arg(long, default_value_t = 50)]
    threshold: usize,
    /// Checkpoint whose perplexity on (src, first ref) is reported
    #[arg(long)]
    model: Option<PathBuf>,
    /// Plain-text report; stdout when omitted
    #[arg(long)]
    report: Option<PathBuf>,
    /// TSV output; defaults to the hypothesis path with `.bleu.tsv` appended
    #[arg(long)]
    tsv: Option<PathBuf>,
}

/// Failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<HseqError> for Failure {
    fn from(e: HseqError) -> Self {
        let code = match e {
            HseqError::Divergence { .. } | HseqError::Stage { .. } | HseqError::Num(_) => EXIT_RUNTIME,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage(message: String, verb: &str) -> Failure {
    let mut cmd = Cli::command();
    let help = cmd
        .find_subcommand_mut(verb)
        .map(|c| c.render_usage().to_string())
        .unwrap_or_default();
    Failure {
        code: EXIT_USAGE,
        message: format!("{message}\n\n{help}"),
    }
}

fn require_file(path: &Path, what: &str, verb: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display()), verb))
    }
}

fn file_error(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    }
}

fn read_text_lines(path: &Path) -> CliResult<Vec<String>> {
    let f = File::open(path).map_err(|e| file_error(path, e))?;
    read_lines(BufReader::new(f)).map_err(|e| file_error(path, e))
}

fn read_vocab(path: &Path) -> CliResult<Vocabulary> {
    let f = File::open(path).map_err(|e| file_error(path, e))?;
    Vocabulary::read(BufReader::new(f)).map_err(|e| file_error(path, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| file_error(path, e))?))
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| file_error(path, e)
}

fn rules(args: &RuleArgs) -> CliResult<SegmentRuleSet> {
    let mut r = SegmentRuleSet::default().with_threshold(args.threshold);
    if let Some(path) = &args.delimiters {
        let text = fs::read_to_string(path).map_err(|e| file_error(path, e))?;
        r = r.with_delimiters(parse_delimiter_list(&text));
    }
    r.validate()?;
    Ok(r)
}

fn read_pairs(src: &Path, tgt: &Path, clean: bool) -> CliResult<Vec<SentencePair>> {
    let raw = pair_lines(read_text_lines(src)?, read_text_lines(tgt)?)?;
    if clean {
        return Ok(clean_corpus(&raw, default_illegal));
    }
    Ok(raw
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let (source, target) = (tokenize(&p.source), tokenize(&p.target));
            (!source.is_empty() && !target.is_empty()).then_some(SentencePair { id: i, source, target })
        })
        .collect())
}

fn run_segment(a: &SegmentArgs) -> CliResult<()> {
    let rules = rules(&a.rules)?;
    let lines = read_text_lines(&a.input)?;
    let mut out = create(&a.output)?;
    let err = io_at(&a.output);
    for (i, line) in lines.iter().enumerate() {
        let tokens = tokenize(line);
        if tokens.is_empty() {
            return Err(file_error(&a.input, format!("line {} is empty", i + 1)));
        }
        for seg in segment(&tokens, &rules)?.segments {
            writeln!(out, "{}", seg.join(" ")).map_err(&err)?;
        }
        writeln!(out).map_err(&err)?;
    }
    out.flush().map_err(&err)
}

fn run_stats(a: &StatsArgs) -> CliResult<()> {
    let rules = rules(&a.rules)?;
    let raw = pair_lines(read_text_lines(&a.src)?, read_text_lines(&a.tgt)?)?;
    let cleaned = clean_corpus(&raw, default_illegal);
    let s = corpus_stats(&cleaned, raw.len(), &rules)?;
    println!("original_pairs\t{}", s.original_count);
    println!("kept_pairs\t{}", s.kept_count);
    println!("short_ratio\t{:.4}", s.short_ratio);
    println!("long_ratio\t{:.4}", s.long_ratio);
    println!("avg_segments\t{:.4}", s.avg_segments);
    Ok(())
}

fn run_build_vocab(a: &BuildVocabArgs) -> CliResult<()> {
    let sentences: Vec<Vec<String>> = read_text_lines(&a.input)?.iter().map(|l| tokenize(l)).collect();
    let vocab = build_vocabulary(&sentences, a.max_size)?;
    let mut out = create(&a.output)?;
    vocab.write(&mut out)?;
    out.flush().map_err(io_at(&a.output))
}

fn load_config(common: &TrainArgs, role: NetworkRole) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| file_error(path, e))?;
            RunConfig::parse(&text, role).map_err(|e| file_error(path, e))?
        }
        None => RunConfig::defaults(role),
    };
    if let Some(s) = common.steps {
        cfg.steps = s;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(m) = &common.metrics {
        cfg.metrics_path = Some(m.clone());
    }
    Ok(cfg)
}

fn fit(
    cfg: &RunConfig,
    common: &TrainArgs,
    spec: hseq_core::NetworkSpec,
    examples: &[hseq_core::training::Example],
    verb: &str,
) -> CliResult<()> {
    let run = cfg.training_run(spec)?;
    let mut metrics = match &cfg.metrics_path {
        Some(p) => Some(create(p)?),
        None => None,
    };
    let sink = metrics.as_mut().map(|w| w as &mut dyn Write);
    let outcome: TrainingOutcome = match &common.init {
        Some(base) => {
            require_file(base, "init checkpoint", verb)?;
            fine_tune(&load_model(base)?, &run, examples, sink)?
        }
        None => train(&run, examples, sink)?,
    };
    if let (Some(w), Some(p)) = (metrics.as_mut(), &cfg.metrics_path) {
        w.flush().map_err(io_at(p))?;
    }
    save_model(&outcome.model, &common.output)?;
    if let Some(l) = outcome.final_loss() {
        eprintln!("trained {} steps, final loss {l:.4}", outcome.losses.len());
    }
    Ok(())
}

fn run_train_coarse(a: &TrainCoarseArgs) -> CliResult<()> {
    let c = &a.common;
    let rules = rules(&c.rules)?;
    let cfg = load_config(c, NetworkRole::Coarse)?;
    let (vs, vt) = (read_vocab(&a.vocab_src)?, read_vocab(&c.vocab_tgt)?);
    let pairs = read_pairs(&c.src, &c.tgt, c.clean)?;
    let set = build_coarse_training_set(&pairs, &rules)?;
    let examples = to_examples(&set, &vs, &vt);
    let spec = cfg.network_spec(vs, vt)?;
    fit(&cfg, c, spec, &examples, "train-coarse")
}

fn run_train_fine(a: &TrainFineArgs) -> CliResult<()> {
    let c = &a.common;
    require_file(&a.coarse, "coarse checkpoint", "train-fine")?;
    let rules = rules(&c.rules)?;
    let cfg = load_config(c, NetworkRole::Fine)?;
    let vt = read_vocab(&c.vocab_tgt)?;
    let coarse = load_model(&a.coarse)?;
    let pairs = read_pairs(&c.src, &c.tgt, c.clean)?;
    let set = build_fine_training_set(&pairs, &rules, &coarse)?;
    let examples = to_examples(&set, &vt, &vt);
    let spec = cfg.network_spec(vt.clone(), vt)?;
    fit(&cfg, c, spec, &examples, "train-fine")
}

fn run_translate(a: &TranslateArgs) -> CliResult<()> {
    require_file(&a.coarse, "coarse checkpoint", "translate")?;
    if let Some(f) = &a.fine {
        require_file(f, "fine checkpoint", "translate")?;
    }
    let rules = rules(&a.rules)?;
    let coarse = load_model(&a.coarse)?;
    let fine = a.fine.as_deref().map(load_model).transpose()?;
    let lines = read_text_lines(&a.input)?;
    let mut sources = Vec::with_capacity(lines.len());
    for (i, l) in lines.iter().enumerate() {
        let t = tokenize(l);
        if t.is_empty() {
            return Err(file_error(&a.input, format!("line {} is empty", i + 1)));
        }
        sources.push(t);
    }
    let outputs = match &fine {
        Some(f) => translate_batch(&sources, &rules, &coarse, f)?,
        None => translate_coarse_batch(&sources, &rules, &coarse)?,
    };
    let mut out = create(&a.output)?;
    let err = io_at(&a.output);
    for o in outputs {
        writeln!(out, "{}", o.join(" ")).map_err(&err)?;
    }
    out.flush().map_err(&err)
}

fn tokenized(path: &Path) -> CliResult<Vec<Vec<String>>> {
    Ok(read_text_lines(path)?.iter().map(|l| tokenize(l)).collect())
}

fn run_evaluate(a: &EvaluateArgs) -> CliResult<()> {
    if let Some(m) = &a.model {
        require_file(m, "model checkpoint", "evaluate")?;
    }
    let hyps = tokenized(&a.hyp)?;
    let src = tokenized(&a.src)?;
    let mut ref_sets = Vec::new();
    for path in &a.references {
        let r = tokenized(path)?;
        if r.len() != hyps.len() {
            return Err(HseqError::Alignment {
                source_lines: hyps.len(),
                target_lines: r.len(),
            }
            .into());
        }
        ref_sets.push(r);
    }
    if src.len() != hyps.len() {
        return Err(HseqError::Alignment {
            source_lines: src.len(),
            target_lines: hyps.len(),
        }
        .into());
    }
    let mut selected = Vec::with_capacity(hyps.len());
    for (i, h) in hyps.iter().enumerate() {
        let group = hseq_core::corpus::MultiRefGroup {
            source: src[i].clone(),
            references: ref_sets.iter().map(|r| r[i].clone()).collect(),
        };
        let (best, _) = multi_ref_select(h, &group)?;
        selected.push(vec![group.references[best].clone()]);
    }
    let lengths: Vec<usize> = src.iter().map(Vec::len).collect();
    let mut report = EvaluationReport::build(&hyps, &selected, &lengths, a.threshold)?;
    if let Some(path) = &a.model {
        let model: Seq2Seq<f32> = load_model(path)?;
        let spec = model.spec();
        let data: Vec<(Vec<usize>, Vec<usize>)> = src
            .iter()
            .zip(&ref_sets[0])
            .filter(|(s, r)| !s.is_empty() && !r.is_empty())
            .map(|(s, r)| (numericalize(s, &spec.source_vocab, false), numericalize(r, &spec.target_vocab, false)))
            .collect();
        let refs: Vec<IdPair> = data.iter().map(|(s, t)| (&s[..], &t[..])).collect();
        report.perplexity = Some(perplexity(&model, &refs)?);
    }
    let text = report.to_text();
    match &a.report {
        Some(p) => fs::write(p, &text).map_err(|e| file_error(p, e))?,
        None => print!("{text}"),
    }
    let tsv = a.tsv.clone().unwrap_or_else(|| {
        let mut s = a.hyp.as_os_str().to_owned();
        s.push(".bleu.tsv");
        PathBuf::from(s)
    });
    fs::write(&tsv, report.to_tsv()).map_err(|e| file_error(&tsv, e))
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Segment(a) => run_segment(a),
        Command::Stats(a) => run_stats(a),
        Command::BuildVocab(a) => run_build_vocab(a),
        Command::TrainCoarse(a) => run_train_coarse(a),
        Command::TrainFine(a) => run_train_fine(a),
        Command::Translate(a) => run_translate(a),
        Command::Evaluate(a) => run_evaluate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
