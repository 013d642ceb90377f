mod config;

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use negspan_core::corpus::{
    attach_hidden, default_context, default_lexicons, gen_synthetic, mask_entities, parse_conll,
    read_sidecar, write_conll, write_sidecar, SynthConfig,
};
use negspan_core::encoder::EncoderConfig;
use negspan_core::metrics::{bound_montecarlo, multi_hidden_escape, BoundReport};
use negspan_core::numcore::AdamConfig;
use negspan_core::spanscorer::ScorerConfig;
use negspan_core::study::{run_study, StudyConfig};
use negspan_core::train::{init_model, train_from};
use negspan_core::{Corpus, Error, Model, Regime, TrainConfig};

use config::Settings;

#[derive(Parser)]
#[command(name = "negspan", version, about = "Span-based NER trained with negative sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hide each annotated entity with probability --prob.
    Mask(MaskArgs),
    /// Generate a synthetic corpus.
    Gen(GenArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Score a model on an annotated corpus.
    Eval(EvalArgs),
    /// Write predicted entities.
    Predict(PredictArgs),
    /// Sweep masking probabilities and regimes.
    Study(StudyArgs),
    /// Check the non-selection bound for sampled negatives.
    Bound(BoundArgs),
}

#[derive(Args)]
struct MaskArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    prob: f64,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    sidecar: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    sentences: usize,
    #[arg(long, default_value_t = 5)]
    min_len: usize,
    #[arg(long, default_value_t = 20)]
    max_len: usize,
    #[arg(long, default_value_t = 1)]
    min_entities: usize,
    #[arg(long, default_value_t = 3)]
    max_entities: usize,
    /// Entity types (at most three get names PER, LOC, ORG).
    #[arg(long, default_value_t = 3)]
    types: usize,
    #[arg(long, default_value_t = 120)]
    phrases: usize,
    #[arg(long, default_value_t = 200)]
    pool: usize,
    #[arg(long, default_value_t = 400)]
    context: usize,
    #[arg(long, default_value_t = 1.0)]
    skew: f64,
    /// Seeds of the entity and context lexicons; corpora sharing both share
    /// a language.
    #[arg(long, default_value_t = 0x5eed)]
    lexicon_seed: u64,
    #[arg(long, default_value_t = 0xc0de)]
    context_seed: u64,
}

/// Hyperparameters shared by `train` and `study`. Each may also come from
/// the config file under the same name.
#[derive(Args)]
struct Hyper {
    /// `key=value` file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    scoring_dim: Option<usize>,
    #[arg(long)]
    bias: Option<bool>,
    /// 0 means no cap.
    #[arg(long)]
    max_span_len: Option<usize>,
}

const HYPER_KEYS: [&str; 15] = [
    "lambda",
    "epochs",
    "batch-size",
    "lr",
    "beta1",
    "beta2",
    "epsilon",
    "dropout",
    "l2",
    "seed",
    "embed-dim",
    "hidden-dim",
    "scoring-dim",
    "bias",
    "max-span-len",
];

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    regime: Option<String>,
    /// Hidden sets written by `mask`; required by hidden-aware regimes.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Whitespace-separated `token v1 ... vE` lines.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

// Output lines are `sentence<TAB>i<TAB>j<TAB>label<TAB>score` with 0-based
// sentence indices and 1-based inclusive token positions.
#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// CoNLL file; its tags are ignored.
    #[arg(long)]
    input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    /// Fully annotated training corpus.
    #[arg(long)]
    gold: PathBuf,
    /// Held-out corpus; defaults to the last fifth of --gold.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    probs: Option<String>,
    #[arg(long)]
    regimes: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    lambdas: Option<String>,
    #[arg(long)]
    mask_seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0.35)]
    lambda: f64,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also report the escape frequency for this many hidden spans.
    #[arg(long)]
    hidden: Option<usize>,
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    let f = File::open(path).map_err(Error::Io).with_context(|| format!("opening {}", path.display()))?;
    parse_conll(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(Error::Io).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load_model(path: &Path) -> Result<Model> {
    let f = File::open(path).map_err(Error::Io).with_context(|| format!("opening {}", path.display()))?;
    Model::load(BufReader::new(f)).with_context(|| format!("loading {}", path.display()))
}

fn train_config(h: &Hyper, s: &mut Settings, regime: Regime) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let cap = s.pick("max-span-len", h.max_span_len, 0)?;
    Ok(TrainConfig {
        regime,
        lambda: s.pick("lambda", h.lambda, d.lambda)?,
        epochs: s.pick("epochs", h.epochs, d.epochs)?,
        batch_size: s.pick("batch-size", h.batch_size, d.batch_size)?,
        adam: AdamConfig {
            lr: s.pick("lr", h.lr, d.adam.lr)?,
            beta1: s.pick("beta1", h.beta1, d.adam.beta1)?,
            beta2: s.pick("beta2", h.beta2, d.adam.beta2)?,
            epsilon: s.pick("epsilon", h.epsilon, d.adam.epsilon)?,
            weight_decay: 0.0,
        },
        l2: s.pick("l2", h.l2, d.l2)?,
        seed: s.pick("seed", h.seed, d.seed)?,
        encoder: EncoderConfig {
            embed_dim: s.pick("embed-dim", h.embed_dim, d.encoder.embed_dim)?,
            hidden_dim: s.pick("hidden-dim", h.hidden_dim, d.encoder.hidden_dim)?,
            dropout: s.pick("dropout", h.dropout, d.encoder.dropout)?,
        },
        scorer: ScorerConfig {
            scoring_dim: s.pick("scoring-dim", h.scoring_dim, d.scorer.scoring_dim)?,
            bias: s.pick("bias", h.bias, d.scorer.bias)?,
            max_span_len: (cap > 0).then_some(cap),
        },
    })
}

fn cmd_mask(a: MaskArgs) -> Result<()> {
    let input = read_corpus(&a.input)?;
    let masked = mask_entities(&input, a.prob, a.seed)?;
    write_conll(&masked, create(&a.output)?)?;
    write_sidecar(&masked, create(&a.sidecar)?)?;
    eprintln!(
        "masked {} of {} entities",
        masked.hidden_count(),
        input.gold_count()
    );
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let cfg = SynthConfig {
        sentences: a.sentences,
        min_len: a.min_len,
        max_len: a.max_len,
        min_entities: a.min_entities,
        max_entities: a.max_entities,
        lexicons: default_lexicons(a.types, a.phrases, a.pool, a.lexicon_seed),
        context: default_context(a.context, a.context_seed),
        phrase_skew: a.skew,
    };
    let corpus = gen_synthetic(&cfg, a.seed)?;
    write_conll(&corpus, create(&a.output)?)?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut known: Vec<&str> = HYPER_KEYS.to_vec();
    known.push("regime");
    let mut s = Settings::load(a.hyper.config.as_deref(), &known)?;
    let regime: Regime = s.pick("regime", a.regime.as_deref().map(str::to_string), "sampled".into())?.parse()?;
    let cfg = train_config(&a.hyper, &mut s, regime)?;
    eprint!("{}", s.echo());
    if !regime.uses_lambda() && (a.hyper.lambda.is_some() || s.file_has("lambda")) {
        eprintln!("warning: regime `{regime}` ignores --lambda");
    }

    let mut data = read_corpus(&a.data)?;
    if regime.needs_hidden() {
        let Some(path) = &a.sidecar else {
            return Err(Error::Config(format!("regime `{regime}` requires --sidecar")).into());
        };
        let f = File::open(path).map_err(Error::Io).with_context(|| format!("opening {}", path.display()))?;
        let records = read_sidecar(BufReader::new(f))?;
        data = attach_hidden(&data, &records)?;
    }
    let dev = a.dev.as_deref().map(read_corpus).transpose()?;

    let mut model = init_model(&data, &cfg)?;
    if let Some(path) = &a.pretrained {
        let f = File::open(path).map_err(Error::Io).with_context(|| format!("opening {}", path.display()))?;
        let rows = model
            .encoder
            .load_pretrained_embeddings(&mut model.params, BufReader::new(f))?;
        eprintln!("loaded {rows} pretrained embedding rows");
    }
    let outcome = train_from(model, &data, dev.as_ref(), &cfg)?;
    print!("{}", outcome.log_table());
    outcome.model.save(create(&a.out)?)?;
    eprintln!("kept epoch {}", outcome.best_epoch);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = read_corpus(&a.data)?;
    print!("{}", model.evaluate(&data)?.to_table());
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = read_corpus(&a.input)?;
    let mut out: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    writeln!(out, "# sentence\ti\tj\tlabel\tscore")?;
    for (idx, preds) in model.predict_corpus(&data)?.iter().enumerate() {
        for e in preds {
            writeln!(out, "{idx}\t{}\t{}\t{}\t{:.6}", e.start, e.end, e.label, e.score)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_study(a: StudyArgs) -> Result<ExitCode> {
    let mut known: Vec<&str> = HYPER_KEYS.to_vec();
    known.extend(["probs", "regimes", "seeds", "lambdas", "mask-seed", "jobs"]);
    let mut s = Settings::load(a.hyper.config.as_deref(), &known)?;
    let train = train_config(&a.hyper, &mut s, Regime::Sampled)?;
    let lambda = train.lambda.to_string();
    let cfg = StudyConfig {
        probs: s.pick_list("probs", a.probs.as_deref(), "0,0.1,0.2,0.4,0.5,0.6")?,
        regimes: s.pick_list("regimes", a.regimes.as_deref(), "sampled,full,oracle")?,
        seeds: s.pick_list("seeds", a.seeds.as_deref(), "1")?,
        lambdas: s.pick_list("lambdas", a.lambdas.as_deref(), &lambda)?,
        mask_seed: s.pick("mask-seed", a.mask_seed, 13)?,
        jobs: s.pick("jobs", a.jobs, 1)?,
        train,
    };
    eprint!("{}", s.echo());

    let gold = read_corpus(&a.gold)?;
    let (gold, test) = match &a.test {
        Some(p) => (gold, read_corpus(p)?),
        None => {
            let tail = gold.len() / 5;
            gold.split_tail(tail)
        }
    };
    let dev = a.dev.as_deref().map(read_corpus).transpose()?;
    let result = run_study(&gold, dev.as_ref(), &test, &cfg)?;

    fs::create_dir_all(a.out_dir.join("logs")).map_err(Error::Io)?;
    let write = |name: &str, text: &str| -> Result<()> {
        let path = a.out_dir.join(name);
        fs::write(&path, text).map_err(Error::Io).with_context(|| format!("writing {}", path.display()))
    };
    write("cells.tsv", &result.cells_table())?;
    write("summary.tsv", &result.summary_table())?;
    write("lambda.tsv", &result.lambda_table())?;
    for c in &result.cells {
        let lambda = c.cell.lambda.map_or_else(|| "na".to_string(), |l| l.to_string());
        let name = format!("logs/p{}_{}_l{lambda}_s{}.log", c.cell.p, c.cell.regime, c.cell.seed);
        write(&name, &c.log)?;
    }
    print!("{}", result.summary_table());
    let failed = result.failures();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed; see cells.tsv", result.cells.len());
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bound(a: BoundArgs) -> Result<ExitCode> {
    let report = bound_montecarlo(a.n, a.m, a.lambda, a.trials, a.seed)?;
    println!("{}", BoundReport::HEADER);
    println!("{}", report.summary_line());
    if let Some(h) = a.hidden.filter(|&h| h > 1) {
        let f = multi_hidden_escape(a.n, a.m, h, a.lambda, a.trials, a.seed)?;
        println!("# beyond the single-entity case: all {h} hidden spans escape with frequency {f:.5}");
    }
    if report.violates_bound() {
        eprintln!("empirical frequency below the bound by more than three standard errors");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if e.is_usage() => 1,
        Some(e) if e.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Mask(a) => cmd_mask(a).map(|_| ExitCode::SUCCESS),
        Command::Gen(a) => cmd_gen(a).map(|_| ExitCode::SUCCESS),
        Command::Train(a) => cmd_train(a).map(|_| ExitCode::SUCCESS),
        Command::Eval(a) => cmd_eval(a).map(|_| ExitCode::SUCCESS),
        Command::Predict(a) => cmd_predict(a).map(|_| ExitCode::SUCCESS),
        Command::Study(a) => cmd_study(a),
        Command::Bound(a) => cmd_bound(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
