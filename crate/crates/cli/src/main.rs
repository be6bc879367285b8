use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lamemo::analysis::{
    alpha_profile, alpha_profile_table, attn_profile, attn_profile_table, export_g_curve, flops_count, flops_table,
    g_curve_table,
};
use lamemo::memory::MemMode;
use lamemo::model::ModelConfig;
use lamemo::numerics::{set_parallel, Precision, Rng, Scalar};
use lamemo::pipeline::{
    checkpoint_precision, evaluate, extrapolate_eval, extrapolation_table, generate, ingest, metrics_table,
    train_curve_table, Checkpoint, Corpus, ExperimentConfig, MetricRow, Split, Trainer,
};
use lamemo::posenc::RpeScheme;
use lamemo::report::Table;
use lamemo::verify::{check_table, run_all};

#[derive(Parser)]
#[command(name = "lamemo", version, about = "Look-ahead memory language-modelling laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file and write metrics, training curve and checkpoint.
    Train(TrainArgs),
    /// Perplexity and bits per character of a checkpoint on one split.
    Eval(EvalArgs),
    /// Evaluate with memory lengths `target·m` for each `m`.
    Extrapolate(ExtrapolateArgs),
    /// Continue a prompt by nucleus sampling.
    Generate(GenerateArgs),
    /// Write the operation-count, attention, memorisation and g(x) tables.
    Analyze(AnalyzeArgs),
    /// Run the oracle, leakage and gradient suites.
    Check(CheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "mem-mode")]
    mem_mode: Option<MemMode>,
    #[arg(long)]
    rpe: Option<RpeScheme>,
    #[arg(long = "mem-len")]
    mem_len: Option<usize>,
    #[arg(long = "seg-len")]
    seg_len: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    /// Continue from this checkpoint instead of initialising.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct Source {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus to read instead of the one named in the checkpoint.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Stop after this many predicted tokens.
    #[arg(long = "max-tokens")]
    max_tokens: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    source: Source,
    /// Memory length during evaluation; defaults to the trained one.
    #[arg(long = "mem-len")]
    mem_len: Option<usize>,
    #[arg(long = "seg-len")]
    seg_len: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ExtrapolateArgs {
    #[command(flatten)]
    source: Source,
    /// Multipliers as `a..b` (inclusive) or a comma list.
    #[arg(long, default_value = "1..10")]
    m: String,
    /// Segment length; memory length is `target·m`.
    #[arg(long, default_value_t = 64)]
    target: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value_t = 200)]
    tokens: usize,
    #[arg(long = "top-p", default_value_t = 0.95)]
    top_p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trained checkpoints; one attention profile per checkpoint.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Model config for the operation counts when no checkpoint is given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long = "profile-tokens", default_value_t = 1000)]
    profile_tokens: usize,
    #[arg(long = "alpha-segments", default_value_t = 50)]
    alpha_segments: usize,
    #[arg(long = "g-lo", default_value_t = -20.0, allow_negative_numbers = true)]
    g_lo: f64,
    #[arg(long = "g-hi", default_value_t = 20.0, allow_negative_numbers = true)]
    g_hi: f64,
    #[arg(long = "g-points", default_value_t = 401)]
    g_points: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// Also run the training determinism suite on this char corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn echo_config(exp: &ExperimentConfig) {
    println!("config: {}", serde_json::to_string(exp).expect("config serialises"));
}

fn emit(table: &Table, dir: &Path, file: &str) -> Result<()> {
    let path = dir.join(file);
    table.write(&path).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn load_corpus(exp: &ExperimentConfig, data: Option<&PathBuf>) -> Result<Corpus> {
    let path = data.unwrap_or(&exp.data.path);
    ingest(path, exp.data.mode).with_context(|| format!("reading corpus {}", path.display()))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut exp = ExperimentConfig::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    let m = &mut exp.model;
    if let Some(v) = a.mem_mode {
        m.mem_mode = v;
    }
    if let Some(v) = a.rpe {
        m.rpe_scheme = v;
    }
    if let Some(v) = a.mem_len {
        m.mem_len = v;
    }
    if let Some(v) = a.seg_len {
        m.seg_len = v;
    }
    if let Some(v) = a.steps {
        exp.train.steps = v;
    }
    if let Some(v) = a.seed {
        exp.seed = v;
    }
    let corpus = load_corpus(&exp, None)?;
    exp.model.vocab_size = corpus.vocab_size();
    exp.validate()?;
    echo_config(&exp);
    match exp.model.precision {
        Precision::F32 => train_as::<f32>(exp, &corpus, a.resume.as_deref(), &a.out),
        Precision::F64 => train_as::<f64>(exp, &corpus, a.resume.as_deref(), &a.out),
    }
}

fn train_as<T: Scalar>(exp: ExperimentConfig, corpus: &Corpus, resume: Option<&Path>, out: &Path) -> Result<()> {
    let mut trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::<T>::load_for(path, &exp.model)?;
            if ck.experiment != exp {
                bail!("resumed checkpoint was trained with a different experiment config");
            }
            Trainer::from_checkpoint(ck)?
        }
        None => Trainer::<T>::new(&exp)?,
    };
    std::fs::create_dir_all(out)?;
    let total = exp.train.steps;
    let ck_path = out.join("checkpoint.lmck");
    let mut log: Vec<MetricRow> = Vec::new();
    let mut failure = None;
    while trainer.step < total {
        let before = log.len();
        let stop = (trainer.step / exp.train.eval_interval + 1) * exp.train.eval_interval;
        if let Err(e) = trainer.run_until(corpus, stop, &mut log) {
            failure = Some(e);
            break;
        }
        for r in &log[before..] {
            println!(
                "step {} lr {:.3e} train_loss {:.4} dev_bpc {:.4} dev_ppl {:.3}",
                r.step, r.lr, r.train_loss, r.dev_bpc, r.dev_ppl
            );
        }
        trainer.checkpoint().save(&ck_path)?;
    }
    let scheme = exp.model.rpe_scheme.to_string();
    emit(&metrics_table(&log), out, "metrics.csv")?;
    emit(&train_curve_table(&scheme, &log), out, "train_curve.csv")?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    trainer.checkpoint().save(&ck_path)?;
    std::fs::write(out.join("config.json"), exp.to_json())?;
    eprintln!("wrote {}", ck_path.display());
    if let Some(last) = log.last() {
        println!("{}", metrics_table(std::slice::from_ref(last)));
    }
    Ok(())
}

/// Runs `body` with the checkpoint loaded at its stored precision.
macro_rules! with_checkpoint {
    ($path:expr, |$ck:ident| $body:expr) => {{
        let path: &Path = $path.as_ref();
        match checkpoint_precision(path).with_context(|| format!("reading {}", path.display()))? {
            Precision::F32 => {
                let $ck = Checkpoint::<f32>::load(path)?;
                $body
            }
            Precision::F64 => {
                let $ck = Checkpoint::<f64>::load(path)?;
                $body
            }
        }
    }};
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    with_checkpoint!(&a.source.checkpoint, |ck| {
        let mut exp = ck.experiment.clone();
        if let Some(n) = a.seg_len {
            exp.model.seg_len = n;
        }
        if let Some(m) = a.mem_len {
            exp.model.mem_len = m;
        }
        exp.model.validate()?;
        echo_config(&exp);
        let corpus = load_corpus(&exp, a.source.data.as_ref())?;
        let c = &exp.model;
        let r = evaluate(&ck.params, c, corpus.split(a.source.split), c.effective_mem_len(), a.source.max_tokens)?;
        let table = Table::new(
            "split,mem_len,tokens,mean_nll,ppl,bpc",
            vec![format!(
                "{},{},{},{},{},{}",
                a.source.split,
                c.effective_mem_len(),
                r.tokens,
                r.mean_nll,
                r.ppl,
                r.bpc
            )],
        );
        emit(&table, &a.out, "eval.csv")?;
        print!("{table}");
        Ok(())
    })
}

fn parse_m(arg: &str) -> Result<Vec<usize>> {
    let values: Vec<usize> = if let Some((lo, hi)) = arg.split_once("..") {
        let (lo, hi): (usize, usize) = (lo.trim().parse()?, hi.trim().parse()?);
        (lo..=hi).collect()
    } else {
        arg.split(',').map(|s| s.trim().parse()).collect::<std::result::Result<_, _>>()?
    };
    if values.is_empty() {
        bail!("`--m {arg}` selects no multipliers");
    }
    Ok(values)
}

fn cmd_extrapolate(a: ExtrapolateArgs) -> Result<()> {
    let ms = parse_m(&a.m)?;
    with_checkpoint!(&a.source.checkpoint, |ck| {
        let exp = ck.experiment.clone();
        echo_config(&exp);
        let corpus = load_corpus(&exp, a.source.data.as_ref())?;
        let rows = extrapolate_eval(&ck.params, &exp.model, corpus.split(a.source.split), a.target, &ms, a.source.max_tokens)?;
        let table = extrapolation_table(&rows);
        emit(&table, &a.out, "extrapolation.csv")?;
        print!("{table}");
        Ok(())
    })
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    with_checkpoint!(&a.checkpoint, |ck| {
        let exp = ck.experiment.clone();
        echo_config(&exp);
        let corpus = load_corpus(&exp, a.data.as_ref())?;
        let prompt = corpus.encode(&a.prompt)?;
        let mut rng = Rng::new(a.seed);
        let ids = generate(&ck.params, &exp.model, &prompt, a.tokens, a.top_p, &mut rng)?;
        println!("{}{}", corpus.decode(&prompt), corpus.decode(&ids));
        Ok(())
    })
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    let base: ModelConfig = match (a.checkpoint.first(), &a.config) {
        (Some(path), _) => with_checkpoint!(path, |ck| ck.experiment.model.clone()),
        (None, Some(path)) => ExperimentConfig::load(path)?.model,
        (None, None) => ModelConfig::wikitext(MemMode::Lamemo),
    };
    let flops: Vec<(MemMode, f64)> = [MemMode::None, MemMode::Xl, MemMode::Lamemo]
        .into_iter()
        .map(|mode| {
            let mut c = base.clone();
            c.mem_mode = mode;
            (mode, flops_count(&c))
        })
        .collect();
    let table = flops_table(&flops);
    emit(&table, &a.out, "flops.csv")?;
    print!("{table}");

    let mut profiles = Vec::new();
    let mut alphas = None;
    for path in &a.checkpoint {
        with_checkpoint!(path, |ck| {
            let exp = &ck.experiment;
            echo_config(exp);
            let corpus = load_corpus(exp, a.data.as_ref())?;
            let split = corpus.split(a.split);
            profiles.push((exp.model.mem_mode, attn_profile(&ck.params, &exp.model, split, a.profile_tokens)?));
            if alphas.is_none() && exp.model.mem_mode == MemMode::Lamemo {
                alphas = Some(alpha_profile(&ck.params, &exp.model, split, a.alpha_segments)?);
            }
        });
    }
    if profiles.is_empty() {
        eprintln!("no checkpoint given: skipping attn_profile.csv and alpha_profile.csv");
    } else {
        emit(&attn_profile_table(&profiles), &a.out, "attn_profile.csv")?;
        match &alphas {
            Some(points) => emit(&alpha_profile_table(points), &a.out, "alpha_profile.csv")?,
            None => eprintln!("no look-ahead checkpoint given: skipping alpha_profile.csv"),
        }
    }
    let curve = export_g_curve(64, a.g_lo, a.g_hi, a.g_points)?;
    emit(&g_curve_table(&curve), &a.out, "g_curve.csv")?;
    Ok(())
}

fn cmd_check(a: CheckArgs) -> Result<bool> {
    let corpus = match &a.corpus {
        Some(p) => Some(ingest(p, lamemo::pipeline::CorpusMode::Char)?),
        None => None,
    };
    let outcomes = run_all(corpus.as_ref());
    let table = check_table(&outcomes);
    emit(&table, &a.out, "check.csv")?;
    print!("{table}");
    Ok(outcomes.iter().all(|o| o.passed))
}

fn error_line(e: &anyhow::Error) -> String {
    let kind = e.chain().find_map(|c| c.downcast_ref::<lamemo::Error>()).map_or("cli", |le| le.kind());
    let message = format!("{e:#}");
    format!("error kind={kind} message={}", serde_json::to_string(&message).expect("string serialises"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error kind=usage message={}", serde_json::to_string(first).expect("string serialises"));
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    if std::env::var("LAMEMO_DETERMINISTIC").is_ok_and(|v| v == "1") {
        set_parallel(false);
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(a).map(|()| true),
        Command::Eval(a) => cmd_eval(a).map(|()| true),
        Command::Extrapolate(a) => cmd_extrapolate(a).map(|()| true),
        Command::Generate(a) => cmd_generate(a).map(|()| true),
        Command::Analyze(a) => cmd_analyze(a).map(|()| true),
        Command::Check(a) => cmd_check(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error kind=check message=\"one or more suites failed\"");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
