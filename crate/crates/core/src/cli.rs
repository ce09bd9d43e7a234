//! Command-line entry point: data generation, training, decoding,
//! evaluation, and verification against brute-force oracles.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 training
//! divergence, 3 verification failure.

use crate::data_eval::{
    evaluate, gen_synthetic_segmental, gen_synthetic_strokes, load_corpus, save_corpus, Corpus,
    Instance, Prediction, SegmentalGenConfig, StrokesGenConfig, TokenKind, Tokens,
};
use crate::encoder::{apply_pretrained, load_pretrained_embeddings, Vocab};
use crate::error::{Error, Result};
use crate::model::{AnyModel, BioModel, CtcModel, Dims, InputSpec, SrnnModel};
use crate::oracle::{run_oracle_suite, OracleConfig};
use crate::storage::{load_model, save_model};
use crate::training::{
    gradient_check, train_with_progress, TrainConfig, TrainMode,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::io::Write;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DIVERGENCE: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

#[derive(Parser)]
#[command(
    name = "segrnn",
    version,
    about = "Segmental sequence labeling: train, decode, evaluate, verify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    GenData(GenDataArgs),
    /// Train a model and save the best epoch by dev metric.
    Train(TrainArgs),
    /// Decode a corpus with a trained model.
    Decode(DecodeArgs),
    /// Score predictions against gold annotations.
    Eval(EvalArgs),
    /// Check loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Check the dynamic programs against brute-force enumeration.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Segmental,
    Strokes,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum, default_value = "segmental")]
    task: TaskArg,
    /// Number of instances.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Label inventory size (segmental task).
    #[arg(long, default_value_t = 4)]
    labels: usize,
    /// Per-label inclusive duration ranges, e.g. `1-2,3-4`; one entry per
    /// label or a single entry for all.
    #[arg(long)]
    dur_profile: Option<String>,
    /// Emission noise.
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Token vector dimension (defaults to the label count).
    #[arg(long)]
    dim: Option<usize>,
    /// Inclusive range of segments per instance, e.g. `2-6`.
    #[arg(long, default_value = "2-6")]
    segments: String,
    /// Alphabet for the strokes task.
    #[arg(long, default_value = "abcd")]
    alphabet: String,
    /// Coordinate jitter for the strokes task.
    #[arg(long, default_value_t = 0.01)]
    jitter: f64,
    /// Inclusive range of characters per word (strokes task).
    #[arg(long, default_value = "1-5")]
    chars: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Full,
    Partial,
    Bio,
    Ctc,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> TrainMode {
        match m {
            ModeArg::Full => TrainMode::Full,
            ModeArg::Partial => TrainMode::Partial,
            ModeArg::Bio => TrainMode::Bio,
            ModeArg::Ctc => TrainMode::Ctc,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InputArg {
    /// Numeric tokens as raw vectors, symbols as embeddings.
    Auto,
    Vectors,
    /// Numeric tokens are flattened 4-dim point runs, pooled per stroke.
    Strokes,
    Symbols,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Maximum segment duration L. Defaults to the longest training
    /// instance when that is at most 64, else 8 for symbol tasks and 6 for
    /// point tasks.
    #[arg(long)]
    max_seg_len: Option<usize>,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// L2 regularization strength λ.
    #[arg(long, default_value_t = 1e-6)]
    l2: f64,
    /// Dimension overrides, e.g. `ctx=24,seg=18,stroke=5,label=8,dur=4,phi=20,embed=64,bio=128`.
    #[arg(long, default_value = "")]
    dims: String,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, value_enum, default_value = "auto")]
    input: InputArg,
    /// Pretrained symbol embeddings (text; `symbol v1 v2 …` per line).
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Metrics log (one `epoch,train_loss,dev_metric,seconds` line per
    /// epoch). Defaults to `<out>.log`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Corpus to decode.
    #[arg(long)]
    test: PathBuf,
    /// Output predictions (corpus format, durations filled where the model
    /// segments).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions in corpus format.
    #[arg(long)]
    pred: PathBuf,
    /// Gold corpus.
    #[arg(long)]
    gold: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "full")]
    mode: ModeArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Instances to check.
    #[arg(long, default_value_t = 3)]
    instances: usize,
    /// Minimum sampled coordinates per instance (always spans every tensor).
    #[arg(long, default_value_t = 10)]
    coords: usize,
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Negative control: corrupt the tanh backward rule by this factor and
    /// expect the check to fail.
    #[arg(long, hide = true)]
    corrupt_backward: Option<f64>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 6)]
    max_tokens: usize,
    #[arg(long, default_value_t = 3)]
    max_labels: usize,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

/// Parse argv and run. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not usage errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Oracle(a) => cmd_oracle(a),
    };
    match outcome {
        Ok(code) => code,
        Err(Error::Divergence(msg)) => {
            eprintln!("error: {msg}");
            EXIT_DIVERGENCE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn parse_range(spec: &str) -> Result<(usize, usize)> {
    let (lo, hi) = spec
        .split_once('-')
        .ok_or_else(|| Error::Validation(format!("bad range {spec:?}, expected lo-hi")))?;
    let lo: usize = lo.trim().parse().map_err(|_| Error::Validation(format!("bad range {spec:?}")))?;
    let hi: usize = hi.trim().parse().map_err(|_| Error::Validation(format!("bad range {spec:?}")))?;
    if lo == 0 || hi < lo {
        return Err(Error::Validation(format!("bad range {spec:?}")));
    }
    Ok((lo, hi))
}

fn parse_dur_profile(spec: &str, n_labels: usize) -> Result<Vec<(usize, usize)>> {
    let parts: Vec<(usize, usize)> = spec
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(parse_range)
        .collect::<Result<_>>()?;
    match parts.len() {
        1 => Ok(vec![parts[0]; n_labels]),
        n if n == n_labels => Ok(parts),
        n => Err(Error::Validation(format!(
            "duration profile has {n} entries for {n_labels} labels"
        ))),
    }
}

fn cmd_gen_data(args: GenDataArgs) -> Result<i32> {
    let corpus = match args.task {
        TaskArg::Segmental => {
            let mut cfg = SegmentalGenConfig::new(args.n, args.labels);
            if let Some(profile) = &args.dur_profile {
                cfg.dur_ranges = parse_dur_profile(profile, args.labels)?;
            }
            cfg.sigma = args.sigma;
            if let Some(dim) = args.dim {
                cfg.dim = dim;
            }
            cfg.segments = parse_range(&args.segments)?;
            gen_synthetic_segmental(&cfg, args.seed)
        }
        TaskArg::Strokes => {
            let mut cfg = StrokesGenConfig::new(args.n, &args.alphabet);
            cfg.jitter = args.jitter;
            cfg.chars_per_word = parse_range(&args.chars)?;
            gen_synthetic_strokes(&cfg, args.seed)
        }
    };
    save_corpus(&args.out, &corpus)?;
    println!(
        "wrote {} instances, {} labels to {}",
        corpus.len(),
        corpus.labels.len(),
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn resolve_input_spec(corpus: &Corpus, arg: InputArg) -> Result<InputSpec> {
    match (corpus.kind, arg) {
        (TokenKind::Symbols, InputArg::Auto | InputArg::Symbols) => Ok(InputSpec::Symbols {
            vocab: Vocab::build(corpus.symbol_inventory()),
        }),
        (TokenKind::Points, InputArg::Auto | InputArg::Vectors) => {
            let dim = match &corpus.instances[0].tokens {
                Tokens::Vectors(v) => v[0].len(),
                Tokens::Symbols(_) => unreachable!(),
            };
            Ok(InputSpec::Vectors { dim })
        }
        (TokenKind::Points, InputArg::Strokes) => Ok(InputSpec::Strokes),
        (kind, _) => Err(Error::Validation(format!(
            "input flag does not fit the corpus token kind {kind:?}"
        ))),
    }
}

fn default_max_seg_len(corpus: &Corpus) -> usize {
    let longest = corpus.instances.iter().map(|i| i.tokens.len()).max().unwrap_or(1);
    if longest <= 64 {
        longest
    } else if corpus.kind == TokenKind::Symbols {
        8
    } else {
        6
    }
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let mode: TrainMode = args.mode.into();
    let train_corpus = load_corpus(&args.train, None)?;
    let dev_corpus = load_corpus(&args.dev, None)?;
    if train_corpus.labels.is_empty() {
        return Err(Error::Validation("training corpus has no labels".into()));
    }
    let max_seg_len = args.max_seg_len.unwrap_or_else(|| default_max_seg_len(&train_corpus));
    let input = resolve_input_spec(&train_corpus, args.input)?;
    let dims = Dims::parse(&args.dims)?;
    let labels = train_corpus.labels.clone();

    let mut model = match mode {
        TrainMode::Full | TrainMode::Partial => AnyModel::Srnn(SrnnModel::new(
            dims,
            max_seg_len,
            labels,
            &input,
            args.seed,
        )?),
        TrainMode::Bio => AnyModel::Bio(BioModel::new(dims, labels, &input, args.seed)?),
        TrainMode::Ctc => AnyModel::Ctc(CtcModel::new(dims, labels, &input, args.seed)?),
    };

    if let Some(path) = &args.pretrained {
        match (model.front().symbol_table(), model.front().vocab.as_ref()) {
            (Some(table), Some(vocab)) => {
                let entries = load_pretrained_embeddings(path)?;
                let vocab = vocab.clone();
                let applied = apply_pretrained(model.params_mut(), table, &vocab, &entries)?;
                println!("applied {applied} pretrained embedding rows");
            }
            _ => {
                return Err(Error::Validation(
                    "--pretrained requires a symbol-input model".into(),
                ))
            }
        }
    }

    let mut config = TrainConfig::new(mode);
    config.learning_rate = args.lr;
    config.l2 = args.l2;
    config.epochs = args.epochs;
    config.patience = args.patience;
    config.seed = args.seed;
    config.workers = args.workers;

    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.log", args.out.display())));
    let mut log_file = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    let outcome = train_with_progress(&mut model, &train_corpus, &dev_corpus, &config, |entry| {
        let _ = writeln!(log_file, "{}", entry.line());
        let _ = log_file.flush();
    })?;

    save_model(&args.out, &model)?;
    println!(
        "best epoch {} (dev metric {:.4}); model saved to {}",
        outcome.best_epoch,
        outcome.best_dev_metric,
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn check_inventory(model: &AnyModel, corpus: &Corpus) -> Result<()> {
    for label in &corpus.labels {
        if !model.labels().contains(label) {
            return Err(Error::Validation(format!(
                "corpus label {label:?} is not in the model inventory"
            )));
        }
    }
    Ok(())
}

fn prediction_record(instance: &Instance, pred: &Prediction) -> Instance {
    match pred {
        Prediction::Segments(segs) => Instance {
            tokens: instance.tokens.clone(),
            labels: Some(segs.iter().map(|(_, _, l)| l.clone()).collect()),
            durations: Some(segs.iter().map(|(_, d, _)| *d).collect()),
        },
        Prediction::Labels(labels) => Instance {
            tokens: instance.tokens.clone(),
            labels: Some(labels.clone()),
            durations: None,
        },
    }
}

fn cmd_decode(args: DecodeArgs) -> Result<i32> {
    let model = load_model(&args.model)?;
    let corpus = load_corpus(&args.test, None)?;
    check_inventory(&model, &corpus)?;
    let mut out_instances = Vec::with_capacity(corpus.len());
    for instance in &corpus.instances {
        let pred = model.predict(instance)?;
        out_instances.push(prediction_record(instance, &pred));
    }
    let out = Corpus {
        labels: model.labels().to_vec(),
        instances: out_instances,
        kind: corpus.kind,
    };
    save_corpus(&args.out, &out)?;
    println!("decoded {} instances to {}", out.len(), args.out.display());
    Ok(EXIT_OK)
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    let pred_corpus = load_corpus(&args.pred, None)?;
    let gold_corpus = load_corpus(&args.gold, None)?;
    if pred_corpus.len() != gold_corpus.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} gold instances",
            pred_corpus.len(),
            gold_corpus.len()
        )));
    }
    let preds: Vec<Prediction> = pred_corpus
        .instances
        .iter()
        .map(|inst| {
            let labels = inst
                .labels
                .clone()
                .ok_or_else(|| Error::Validation("prediction instance has no labels".into()))?;
            Ok(match inst.gold_segments() {
                Some(segs) => Prediction::Segments(
                    segs.into_iter().map(|(s, d, l)| (s, d, l.to_string())).collect(),
                ),
                None => Prediction::Labels(labels),
            })
        })
        .collect::<Result<_>>()?;
    let gold: Vec<&Instance> = gold_corpus.instances.iter().collect();
    let metrics = evaluate(&preds, &gold)?;
    println!("{}", metrics.table());
    Ok(EXIT_OK)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let mode: TrainMode = args.mode.into();
    let mut cfg = SegmentalGenConfig::new(args.instances, 3);
    cfg.dur_ranges = vec![(1, 2), (1, 3), (2, 3)];
    cfg.segments = (2, 3);
    let corpus = gen_synthetic_segmental(&cfg, args.seed);
    let dims = Dims {
        ctx: 8,
        seg: 6,
        stroke: 3,
        label_embed: 4,
        dur_embed: 3,
        phi: 6,
        sym_embed: 8,
        bio_hidden: 12,
    };
    let input = InputSpec::Vectors { dim: cfg.dim };
    let max_len = cfg.max_duration();

    let mut all_ok = true;
    let mut global_max = 0.0f64;
    for (idx, instance) in corpus.instances.iter().enumerate() {
        let seed = args.seed + idx as u64;
        let labels: Vec<String> = corpus.labels.clone();
        let mut model = match mode {
            TrainMode::Full | TrainMode::Partial => {
                AnyModel::Srnn(SrnnModel::new(dims, max_len, labels, &input, seed)?)
            }
            TrainMode::Bio => AnyModel::Bio(BioModel::new(dims, labels, &input, seed)?),
            TrainMode::Ctc => AnyModel::Ctc(CtcModel::new(dims, labels, &input, seed)?),
        };
        let report = gradient_check(
            &mut model,
            instance,
            mode,
            args.coords,
            args.step,
            args.tol,
            args.corrupt_backward,
            seed,
        )?;
        let ok = report.passed(args.tol);
        all_ok &= ok;
        global_max = global_max.max(report.max_rel_error);
        println!(
            "instance {idx}: {} coordinates, max relative error {:.3e} at {} [{}]",
            report.coordinates,
            report.max_rel_error,
            if report.worst_coordinate.is_empty() { "-" } else { &report.worst_coordinate },
            if ok { "pass" } else { "FAIL" }
        );
        for f in &report.failures {
            println!("  {f}");
        }
    }
    println!("max relative error over all instances: {global_max:.3e}");
    Ok(if all_ok { EXIT_OK } else { EXIT_VERIFICATION })
}

fn cmd_oracle(args: OracleArgs) -> Result<i32> {
    let cfg = OracleConfig {
        max_tokens: args.max_tokens,
        max_labels: args.max_labels,
        seeds: args.seeds,
    };
    let report = run_oracle_suite(&cfg)?;
    println!("cases: {}", report.cases);
    println!("max potential deviation:   {:.3e}", report.max_potential_dev);
    println!("max partition deviation:   {:.3e}", report.max_partition_dev);
    println!("max constrained deviation: {:.3e}", report.max_constrained_dev);
    println!("max path-score deviation:  {:.3e}", report.max_path_dev);
    println!("MAP mismatches: {}", report.map_mismatches);
    if report.passed(args.tol) {
        println!("oracle suite: pass");
        Ok(EXIT_OK)
    } else {
        println!("oracle suite: FAIL");
        Ok(EXIT_VERIFICATION)
    }
}
