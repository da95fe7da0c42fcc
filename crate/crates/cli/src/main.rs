//! `typeforge`: file-based pipeline driver. Every stage reads its inputs from
//! and writes its outputs to one working directory.

mod workdir;

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use typeforge::checkpoint;
use typeforge::corpus::{Corpus, CorpusBuilder, CorpusError, Split};
use typeforge::embed::{
    compute_pivots, mention_embeddings, EmbedError, EmbeddingFormat, TokenEmbeddingTable,
};
use typeforge::encoder::{
    load_representations, save_representations, EncoderConfig, Phase1, RepresentationLayout,
    SimpleEncoder,
};
use typeforge::graph::{GraphError, GraphMode, NormalizedAdjacency, RefinementGraph};
use typeforge::infer::{self, nearest_neighbors, read_predictions, write_predictions, EvalError};
use typeforge::pipeline::{build_refinement, builtin_phase1, GraphConfig};
use typeforge::synthetic::{generate, SyntheticConfig};
use typeforge::training::{self, Model, RoundLog, TrainConfig};

use workdir::{Invalid, Workdir};

#[derive(Parser)]
#[command(
    name = "typeforge",
    version,
    about = "Fine-grained entity typing with graph-refined mention representations"
)]
struct Cli {
    /// Working directory for artifacts; TYPEFORGE_WORKDIR takes precedence.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse datasets into a corpus bundle and import token embeddings.
    Ingest(IngestArgs),
    /// Report per-type pivot support.
    Pivots(PivotsArgs),
    /// Build the refinement graph and its normalized adjacency.
    Graph(GraphArgs),
    /// Train encoder, graph network and label embeddings.
    Train(TrainArgs),
    /// Decode a split and score it, or score an existing predictions file.
    Eval(EvalArgs),
    /// Nearest mentions in the Phase-I or refined space.
    Neighbors(NeighborsArgs),
    /// Write a generated corpus and its token embeddings.
    Synth(SynthArgs),
}

#[derive(Args, Serialize)]
struct IngestArgs {
    /// Dataset files; records carry their own split or take `--split`.
    inputs: Vec<PathBuf>,
    /// Split for records of positional inputs that name none.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    train: Vec<PathBuf>,
    #[arg(long)]
    dev: Vec<PathBuf>,
    #[arg(long)]
    test: Vec<PathBuf>,
    /// Token embedding file, copied into the working directory.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// `binary` or `text`.
    #[arg(long, default_value = "binary")]
    format: String,
}

#[derive(Args, Serialize)]
struct PivotsArgs {}

#[derive(Args, Serialize)]
struct GraphArgs {
    /// attn, pivots, eye or rnd.
    #[arg(long, default_value = "attn")]
    mode: String,
    #[arg(long, default_value_t = 0.85)]
    thr: f64,
    /// Required for `--mode rnd`.
    #[arg(long)]
    seed: Option<u64>,
    /// Keep at most this many candidates per type.
    #[arg(long)]
    max_clique: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
enum Phase1Source {
    Builtin,
    File(PathBuf),
}

impl FromStr for Phase1Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "builtin" => Ok(Self::Builtin),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(Self::File(PathBuf::from(p))),
                _ => Err(format!("expected `builtin` or `file:PATH`, got {s:?}")),
            },
        }
    }
}

impl From<Phase1Source> for String {
    fn from(s: Phase1Source) -> String {
        match s {
            Phase1Source::Builtin => "builtin".into(),
            Phase1Source::File(p) => format!("file:{}", p.display()),
        }
    }
}

impl TryFrom<String> for Phase1Source {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

#[derive(Args, Serialize, Deserialize)]
struct TrainArgs {
    /// `builtin` or `file:PATH` (precomputed representations).
    #[arg(long, default_value = "builtin")]
    phase1: Phase1Source,
    /// Width of the mention block.
    #[arg(long, default_value_t = 200)]
    mention_dim: usize,
    /// Width of each context block.
    #[arg(long, default_value_t = 100)]
    context_dim: usize,
    /// Width of each position block.
    #[arg(long, default_value_t = 25)]
    position_dim: usize,
    /// Context tokens read on each side of a mention.
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    rounds: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minimum dev macro-F1 gain that resets patience.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Stale rounds before stopping; 0 disables early stopping.
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 1)]
    phase1_epochs: usize,
    #[arg(long, default_value_t = 50)]
    phase2_steps: usize,
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 128)]
    output: usize,
    /// Always emit the best root type during dev evaluation.
    #[arg(long)]
    force_root: bool,
}

impl TrainArgs {
    fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            layout: RepresentationLayout {
                mention: self.mention_dim,
                context: self.context_dim,
                position: self.position_dim,
            },
            window: self.window,
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            phase1_epochs: self.phase1_epochs,
            phase2_steps: self.phase2_steps,
            max_rounds: self.rounds,
            tol: self.tol,
            patience: self.patience,
            batch_size: self.batch,
            seed: self.seed,
            lr: self.lr,
            hidden: self.hidden,
            output: self.output,
            force_root: self.force_root,
        }
    }
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long, default_value = "test")]
    split: String,
    /// Always emit the best root type.
    #[arg(long)]
    force_root: bool,
    /// Score this predictions file instead of decoding.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct NeighborsArgs {
    /// Query mention id.
    #[arg(long)]
    mention: usize,
    #[arg(short = 'k', long, default_value_t = 5)]
    k: usize,
    /// `noisy` (Phase-I) or `refined`.
    #[arg(long, default_value = "refined")]
    space: String,
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
    /// Output token embedding file (binary).
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value_t = 500)]
    mentions: usize,
    #[arg(long, default_value_t = 2)]
    roots: usize,
    #[arg(long, default_value_t = 2)]
    children: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.2)]
    noisy_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct GraphMeta {
    nodes: usize,
    edges: usize,
    candidates: usize,
    mode: GraphMode,
    thr: f64,
    seed: Option<u64>,
    max_clique: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for bad input or missing artifacts, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    let invalid = e.chain().any(|c| {
        c.is::<Invalid>()
            || c.is::<CorpusError>()
            || c.is::<EmbedError>()
            || c.is::<EvalError>()
            || matches!(
                c.downcast_ref::<GraphError>(),
                Some(GraphError::MissingSeed)
            )
            || matches!(
                c.downcast_ref::<typeforge::Error>(),
                Some(
                    typeforge::Error::Corpus(_)
                        | typeforge::Error::Embed(_)
                        | typeforge::Error::Eval(_)
                        | typeforge::Error::Config(_)
                        | typeforge::Error::Graph(GraphError::MissingSeed)
                )
            )
    });
    if invalid {
        2
    } else {
        1
    }
}

fn run(cli: Cli) -> Result<()> {
    let dir = workdir::resolve(cli.workdir);
    match cli.command {
        Command::Synth(args) => synth(&args),
        Command::Ingest(args) => ingest(&Workdir::open(&dir, "ingest", &args)?, &args),
        Command::Pivots(args) => pivots(&Workdir::open(&dir, "pivots", &args)?),
        Command::Graph(args) => graph(&Workdir::open(&dir, "graph", &args)?, &args),
        Command::Train(args) => train(&Workdir::open(&dir, "train", &args)?, &args),
        Command::Eval(args) => eval(&Workdir::open(&dir, "eval", &args)?, &args),
        Command::Neighbors(args) => neighbors(&Workdir::open(&dir, "neighbors", &args)?, &args),
    }
}

fn parse<T: FromStr>(flag: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Invalid(format!("--{flag}: {e}")).into())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("reading {}", path.display()))?,
    ))
}

fn synth(args: &SynthArgs) -> Result<()> {
    if args.roots == 0 || args.children == 0 || args.dim == 0 || args.mentions == 0 {
        return Err(
            Invalid("--mentions, --roots, --children and --dim must be positive".into()).into(),
        );
    }
    if !(0.0..=1.0).contains(&args.noisy_rate) {
        return Err(Invalid("--noisy-rate must lie in [0, 1]".into()).into());
    }
    let data = generate(&SyntheticConfig {
        mentions: args.mentions,
        roots: args.roots,
        children: args.children,
        dim: args.dim,
        noisy_rate: args.noisy_rate,
        seed: args.seed,
        ..SyntheticConfig::default()
    });
    for path in [&args.out, &args.embeddings] {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    checkpoint::write_atomic(&args.out, data.jsonl().as_bytes())?;
    let mut bytes = Vec::new();
    data.table.write_binary(&mut bytes)?;
    checkpoint::write_atomic(&args.embeddings, &bytes)?;
    println!(
        "records={} types={}",
        data.records.len(),
        args.roots * (1 + args.children)
    );
    Ok(())
}

fn ingest(wd: &Workdir, args: &IngestArgs) -> Result<()> {
    let default_split = args
        .split
        .as_deref()
        .map(|s| parse::<Split>("split", s))
        .transpose()?;
    let sources: Vec<(&PathBuf, Option<Split>)> = args
        .inputs
        .iter()
        .map(|p| (p, default_split))
        .chain(args.train.iter().map(|p| (p, Some(Split::Train))))
        .chain(args.dev.iter().map(|p| (p, Some(Split::Dev))))
        .chain(args.test.iter().map(|p| (p, Some(Split::Test))))
        .collect();
    if sources.is_empty() {
        return Err(Invalid("no dataset files given".into()).into());
    }
    let mut builder = CorpusBuilder::new();
    for (path, split) in sources {
        builder.add_source(&path.display().to_string(), open(path)?, split)?;
    }
    let parsed = builder.finish()?;
    let corpus = parsed.corpus;

    let table = match &args.embeddings {
        Some(path) => {
            let format: EmbeddingFormat = parse("format", &args.format)?;
            let table = TokenEmbeddingTable::load(path, format)?;
            mention_embeddings(&corpus, &table)?;
            Some(table)
        }
        None => None,
    };

    let mut bytes = Vec::new();
    corpus.write_bundle(&mut bytes)?;
    wd.write(workdir::CORPUS, &bytes)?;
    if let Some(table) = table {
        let mut bytes = Vec::new();
        table.write_binary(&mut bytes)?;
        wd.write(workdir::EMBEDDINGS, &bytes)?;
    }

    let count = |s: Split| corpus.ids_in(s).len();
    println!(
        "mentions={} types={} train={} dev={} test={}",
        corpus.mentions.len(),
        corpus.type_count(),
        count(Split::Train),
        count(Split::Dev),
        count(Split::Test)
    );
    if count(Split::Train) > 0 {
        println!("train_clean={:.2}%", corpus.clean_percentage()?);
    }
    if count(Split::Test) > 0 {
        println!("test_clean={:.2}%", corpus.chain_percentage(Split::Test));
    }
    Ok(())
}

fn load_corpus(wd: &Workdir) -> Result<Corpus> {
    let path = wd.require(workdir::CORPUS, "ingest")?;
    Ok(Corpus::read_bundle(open(&path)?)?)
}

fn load_embeddings(wd: &Workdir) -> Result<TokenEmbeddingTable> {
    let path = wd.require(workdir::EMBEDDINGS, "ingest --embeddings")?;
    Ok(TokenEmbeddingTable::read_binary(open(&path)?)?)
}

fn pivots(wd: &Workdir) -> Result<()> {
    let corpus = load_corpus(wd)?;
    let table = load_embeddings(wd)?;
    let emb = mention_embeddings(&corpus, &table)?;
    let pivots = compute_pivots(&corpus, &emb);
    let mut out = String::from("type\tsupport\tusable\n");
    for ty in 0..pivots.type_count() {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            corpus.hierarchy.label(ty).name(),
            pivots.support(ty),
            pivots.is_usable(ty)
        ));
    }
    wd.write(workdir::PIVOTS, out.as_bytes())?;
    print!("{out}");
    Ok(())
}

fn graph(wd: &Workdir, args: &GraphArgs) -> Result<()> {
    let mode: GraphMode = parse("mode", &args.mode)?;
    if mode == GraphMode::Rnd && args.seed.is_none() {
        return Err(Invalid("--mode rnd requires --seed".into()).into());
    }
    if !(args.thr.is_finite() && (-1.0..=1.0).contains(&args.thr)) {
        return Err(Invalid("--thr must lie in [-1, 1]".into()).into());
    }
    let corpus = load_corpus(wd)?;
    let table = load_embeddings(wd)?;
    let emb = mention_embeddings(&corpus, &table)?;
    let cfg = GraphConfig {
        mode,
        thr: args.thr,
        seed: args.seed,
        max_clique: args.max_clique,
    };
    let refinement = build_refinement(&corpus, &emb, &cfg)?;
    let stats = refinement.stats();

    let mut edges = Vec::new();
    refinement.graph.write_edges(&mut edges)?;
    wd.write(workdir::EDGES, &edges)?;
    let mut coo = Vec::new();
    refinement.adjacency.write_coo(&mut coo)?;
    wd.write(workdir::ADJACENCY, &coo)?;
    let meta = GraphMeta {
        nodes: stats.nodes,
        edges: stats.edges,
        candidates: stats.candidates,
        mode,
        thr: args.thr,
        seed: args.seed,
        max_clique: args.max_clique,
    };
    wd.write(
        workdir::GRAPH_META,
        serde_json::to_string_pretty(&meta)?.as_bytes(),
    )?;
    println!(
        "nodes={} edges={} candidates={} mode={}",
        stats.nodes,
        stats.edges,
        stats.candidates,
        mode.as_str()
    );
    Ok(())
}

fn load_adjacency(wd: &Workdir, corpus: &Corpus) -> Result<NormalizedAdjacency> {
    let meta_path = wd.require(workdir::GRAPH_META, "graph")?;
    let meta: GraphMeta =
        serde_json::from_reader(open(&meta_path)?).context("reading graph metadata")?;
    if meta.nodes != corpus.mentions.len() {
        return Err(Invalid(format!(
            "graph has {} nodes but the corpus has {} mentions; rerun `typeforge graph`",
            meta.nodes,
            corpus.mentions.len()
        ))
        .into());
    }
    let edges_path = wd.require(workdir::EDGES, "graph")?;
    let graph = RefinementGraph::read_edges(open(&edges_path)?, meta.nodes, meta.mode)?;
    Ok(typeforge::graph::normalize(&graph)?)
}

fn phase1_from_file(path: &Path, corpus: &Corpus) -> Result<Phase1> {
    if !path.exists() {
        return Err(Invalid(format!("representation file {} not found", path.display())).into());
    }
    let x = load_representations(open(path)?, Some(corpus.mentions.len()))
        .map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
    Ok(Phase1::File(x))
}

fn save_model(wd: &Workdir, model: &Model) -> Result<()> {
    let mut bytes = Vec::new();
    checkpoint::write_gcn(&model.gcn, &mut bytes)?;
    wd.write(workdir::GCN_CKPT, &bytes)?;
    let mut bytes = Vec::new();
    checkpoint::write_labels(&model.labels, &mut bytes)?;
    wd.write(workdir::LABELS_CKPT, &bytes)?;
    match &model.encoder {
        Some(params) => {
            let mut bytes = Vec::new();
            checkpoint::write_encoder(params, &mut bytes)?;
            wd.write(workdir::ENCODER_CKPT, &bytes)?;
        }
        None => wd.remove(workdir::ENCODER_CKPT)?,
    }
    Ok(())
}

fn save_representations_to(wd: &Workdir, name: &str, x: &typeforge::linalg::Matrix) -> Result<()> {
    let mut bytes = Vec::new();
    save_representations(x, &mut bytes)?;
    wd.write(name, &bytes)
}

fn train(wd: &Workdir, args: &TrainArgs) -> Result<()> {
    let cfg = args.train_config();
    cfg.validate()?;
    let enc_cfg = args.encoder_config();
    let corpus = load_corpus(wd)?;
    let adj = load_adjacency(wd, &corpus)?;
    let mut phase1 = match &args.phase1 {
        Phase1Source::Builtin => builtin_phase1(&corpus, &load_embeddings(wd)?, enc_cfg, cfg.seed)?,
        Phase1Source::File(path) => phase1_from_file(path, &corpus)?,
    };

    let outcome = match training::train(&corpus, &adj, &mut phase1, &cfg) {
        Ok(o) => o,
        Err(typeforge::Error::Diverged {
            round,
            reason,
            last_good,
        }) => {
            save_model(wd, &last_good)?;
            anyhow::bail!(
                "training diverged at round {round}: {reason}; saved the last good parameters"
            );
        }
        Err(e) => return Err(e.into()),
    };

    let mut log = String::from(RoundLog::HEADER);
    log.push('\n');
    for entry in &outcome.log {
        log.push_str(&entry.line());
        log.push('\n');
    }
    wd.write(workdir::TRAIN_LOG, log.as_bytes())?;
    save_model(wd, &outcome.best)?;
    save_representations_to(wd, workdir::PHASE1, &outcome.best.phase1_rows(&phase1))?;
    save_representations_to(wd, workdir::REFINED, &outcome.best.refine(&phase1, &adj)?)?;

    eprint!("{log}");
    println!(
        "rounds={} best_round={} stop={:?}",
        outcome.log.len(),
        outcome.best_round,
        outcome.stop
    );
    if let Some(dev) = outcome
        .log
        .iter()
        .find(|l| l.round == outcome.best_round)
        .and_then(|l| l.dev)
    {
        println!(
            "dev strict={:.4} macro_f1={:.4} micro_f1={:.4}",
            dev.strict, dev.macro_f1, dev.micro_f1
        );
    }
    Ok(())
}

/// Rebuilds the trained model and its Phase-I source from the working directory.
fn load_model(wd: &Workdir, corpus: &Corpus) -> Result<(Model, Phase1)> {
    let config_path = wd.require(&workdir::config_name("train"), "train")?;
    let train_args: TrainArgs = serde_json::from_reader(open(&config_path)?)
        .map(|c: workdir::Provenance<TrainArgs>| c.args)
        .context("reading training configuration")?;
    let gcn = checkpoint::read_gcn(open(&wd.require(workdir::GCN_CKPT, "train")?)?)?;
    let labels = checkpoint::read_labels(open(&wd.require(workdir::LABELS_CKPT, "train")?)?)?;
    let (phase1, encoder) = match &train_args.phase1 {
        Phase1Source::Builtin => {
            let params =
                checkpoint::read_encoder(open(&wd.require(workdir::ENCODER_CKPT, "train")?)?)?;
            let config = EncoderConfig {
                layout: params.layout(),
                window: train_args.window,
            };
            let enc = SimpleEncoder::new(corpus, &load_embeddings(wd)?, config, params.clone())?;
            (Phase1::Builtin(Box::new(enc)), Some(params))
        }
        Phase1Source::File(path) => (phase1_from_file(path, corpus)?, None),
    };
    if gcn.dims().0 != phase1.width() || labels.type_count() != corpus.type_count() {
        return Err(Invalid(
            "checkpoints do not match the corpus or Phase-I source; rerun `typeforge train`".into(),
        )
        .into());
    }
    Ok((
        Model {
            gcn,
            labels,
            encoder,
        },
        phase1,
    ))
}

fn eval(wd: &Workdir, args: &EvalArgs) -> Result<()> {
    let split: Split = parse("split", &args.split)?;
    let corpus = load_corpus(wd)?;
    let gold = infer::gold_labels(&corpus, split);
    let predictions = match &args.predictions {
        Some(path) => {
            if !path.exists() {
                return Err(
                    Invalid(format!("predictions file {} not found", path.display())).into(),
                );
            }
            read_predictions(open(path)?, &corpus.hierarchy)?
        }
        None => {
            let (model, phase1) = load_model(wd, &corpus)?;
            let adj = load_adjacency(wd, &corpus)?;
            let refined = model.refine(&phase1, &adj)?;
            let ids: Vec<usize> = gold.iter().map(|g| g.mention).collect();
            let preds = infer::predict(
                &refined,
                &ids,
                &model.labels,
                &corpus.hierarchy,
                args.force_root,
            );
            let mut bytes = Vec::new();
            write_predictions(&preds, &corpus.hierarchy, &mut bytes)?;
            wd.write(workdir::PREDICTIONS, &bytes)?;
            save_representations_to(wd, workdir::REFINED, &refined)?;
            preds
        }
    };
    let report = infer::evaluate(&predictions, &gold)?;
    let mut text = Vec::new();
    report.write(&mut text)?;
    wd.write(workdir::REPORT, &text)?;
    std::io::stdout().write_all(&text)?;
    Ok(())
}

fn neighbors(wd: &Workdir, args: &NeighborsArgs) -> Result<()> {
    let file = match args.space.as_str() {
        "noisy" => workdir::PHASE1,
        "refined" => workdir::REFINED,
        other => {
            return Err(Invalid(format!(
                "--space: expected `noisy` or `refined`, got {other:?}"
            ))
            .into())
        }
    };
    let corpus = load_corpus(wd)?;
    let reps = load_representations(
        open(&wd.require(file, "train")?)?,
        Some(corpus.mentions.len()),
    )?;
    if args.mention >= corpus.mentions.len() {
        return Err(Invalid(format!("mention {} does not exist", args.mention)).into());
    }
    let describe = |id: usize| {
        let m = &corpus.mentions[id];
        format!(
            "{}\t{}\t{}",
            corpus.mention_tokens(m).join(" "),
            m.split,
            corpus.hierarchy.names(&m.labels).join(",")
        )
    };
    println!("query\t{}\t{}", args.mention, describe(args.mention));
    println!("rank\tmention\tcosine\ttext\tsplit\tlabels");
    for (rank, n) in nearest_neighbors(args.mention, &reps, args.k)?
        .iter()
        .enumerate()
    {
        println!(
            "{}\t{}\t{:.4}\t{}",
            rank + 1,
            n.mention,
            n.similarity,
            describe(n.mention)
        );
    }
    Ok(())
}
