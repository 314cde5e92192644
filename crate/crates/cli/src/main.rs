use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use ndarray::Array2;

use egostance::clf::{self, Model};
use egostance::config::RunConfig;
use egostance::corpus::{
    load_aux_graph, load_interactions, load_posts, load_predictions, save_predictions, InteractionKind,
    ObservationWindow, Post, Prediction, Stance,
};
use egostance::embed::{embed_feature, EmbeddingTable, FeatureInputs};
use egostance::enm::{build_all, load_ego_networks, save_ego_networks};
use egostance::ensemble::{save_final_predictions, vote_all, Vote, VoteSlate};
use egostance::harness::{all_pairs, emit_report, load_report, run_experiment, Artifacts, Dataset, SeedLabel};
use egostance::senm::{load_signed_networks, save_signed_networks, sign_all, Lexicon};
use egostance::syngen::{emit, generate};
use egostance::{Feature, FeatureSet};

#[derive(Parser, Debug)]
#[command(name = "egostance", version, about = "Ego network features for few-shot cross-target stance detection")]
struct Cli {
    /// TOML run configuration; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for ego networks, embeddings and experiment cells (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for the unsupervised stages and the generator (default 1).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus with planted stance homophily.
    Syngen(SyngenArgs),
    /// Build ego networks from an interaction log.
    BuildEnm(BuildEnmArgs),
    /// Sign every ego-alter relationship from interaction sentiment.
    Sign(SignArgs),
    /// Embed one feature graph with node2vec.
    Embed(EmbedArgs),
    /// Train a stance classifier on author embeddings.
    Train(TrainArgs),
    /// Predict stances with a trained classifier.
    Predict(PredictArgs),
    /// Combine per-feature predictions by majority vote.
    Vote(VoteArgs),
    /// Run the few-shot cross-target protocol and write report.csv plus plots.
    Experiment(ExperimentArgs),
    /// Re-render plots from an existing report.csv and print the mean rows.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SyngenArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of users (default 500).
    #[arg(long)]
    users: Option<usize>,
    /// Comma-separated target names (default A,B).
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<String>>,
    /// Probability that an alter shares the ego's camp (default 0.8).
    #[arg(long)]
    homophily: Option<f64>,
    /// Write precomputed sentiment instead of interaction texts.
    #[arg(long)]
    withhold_text: bool,
}

#[derive(Args, Debug)]
struct WindowArgs {
    /// Observation window start, UTC seconds (default: first event).
    #[arg(long)]
    window_start: Option<i64>,
    /// Observation window end, UTC seconds, exclusive (default: after the last event).
    #[arg(long)]
    window_end: Option<i64>,
}

#[derive(Args, Debug)]
struct BuildEnmArgs {
    /// interactions.jsonl
    #[arg(long)]
    interactions: PathBuf,
    /// Output ego_networks.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// Interaction kinds counted as contact (default reply,mention).
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<InteractionKind>>,
    /// Fixed mean-shift bandwidth (default: estimated per ego).
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Keep egos that fail the activity rule.
    #[arg(long)]
    keep_inactive: bool,
    #[command(flatten)]
    window: WindowArgs,
}

#[derive(Args, Debug)]
struct SignArgs {
    #[arg(long)]
    interactions: PathBuf,
    /// ego_networks.jsonl from build-enm.
    #[arg(long)]
    networks: PathBuf,
    /// Output signed_networks.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// Tab-separated token/valence lexicon (default: built in).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Negative-interaction ratio above which a relationship is negative (default 0.17).
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    window: WindowArgs,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    /// One of enm-full, enm-inner, enm-outer, senm, likes, followers, friends.
    #[arg(long)]
    feature: Feature,
    /// posts.csv; every author gets a row, zero when absent from the graph.
    #[arg(long)]
    posts: PathBuf,
    /// Output embeddings TSV.
    #[arg(long)]
    out: PathBuf,
    /// ego_networks.jsonl, for the enm features.
    #[arg(long)]
    networks: Option<PathBuf>,
    /// signed_networks.jsonl, for senm.
    #[arg(long)]
    signed: Option<PathBuf>,
    /// Edge list for likes, followers or friends.
    #[arg(long)]
    aux: Option<PathBuf>,
    /// Embedding dimension (default 128).
    #[arg(long)]
    dimension: Option<usize>,
    /// Return parameter p (default 1).
    #[arg(long)]
    p: Option<f64>,
    /// In-out parameter q (default 1).
    #[arg(long)]
    q: Option<f64>,
}

#[derive(Args, Debug)]
struct ClassifierArgs {
    /// Training epochs (default 100).
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size (default 128).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Hidden-unit dropout (default 0.2).
    #[arg(long)]
    dropout: Option<f64>,
    /// SGD learning rate (default 0.01).
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Embeddings TSV from embed.
    #[arg(long)]
    embeddings: PathBuf,
    /// Labelled posts.
    #[arg(long)]
    posts: PathBuf,
    /// Train only on posts about this target (default: all posts).
    #[arg(long)]
    target: Option<String>,
    /// Output model JSON.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    classifier: ClassifierArgs,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    posts: PathBuf,
    /// Predict only posts about this target (default: all posts).
    #[arg(long)]
    target: Option<String>,
    /// Output predictions.csv (post_id,label,confidence).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VoteArgs {
    /// Per-feature predictions as NAME=FILE; repeat for each feature.
    #[arg(long = "predictions", value_name = "NAME=FILE", required = true)]
    predictions: Vec<String>,
    /// Comma-separated names to vote with (default: all given).
    #[arg(long, value_delimiter = ',')]
    subset: Option<Vec<String>>,
    /// Output CSV (post_id,label,margin,tie_broken).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Corpus directory in the layout syngen writes.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for report.csv and the plots.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated feature sets; join features with + to vote, or use ct-tn (default enm-full).
    #[arg(long)]
    features: Option<String>,
    /// SOURCE:DESTINATION pairs, comma-separated, or "all" for every ordered pair (default A:B).
    #[arg(long)]
    pairs: Option<String>,
    /// Destination shots (default 100,200,300,400).
    #[arg(long, value_delimiter = ',')]
    shots: Option<Vec<usize>>,
    /// Protocol seeds (default 24,524,1024,1524,2024).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[command(flatten)]
    classifier: ClassifierArgs,
    #[command(flatten)]
    window: WindowArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// report.csv from experiment.
    #[arg(long)]
    report: PathBuf,
    /// Directory for the re-rendered report and plots.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Core(egostance::Error),
    Config(String),
    Usage(String),
}

impl From<egostance::Error> for Failure {
    fn from(e: egostance::Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn category(&self) -> &'static str {
        match self {
            Failure::Core(e) => e.category(),
            Failure::Config(_) => "config",
            Failure::Usage(_) => "usage",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Config(m) | Failure::Usage(m) => f.write_str(m),
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // One line: category first, detail after.
            let detail = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {detail}", e.category());
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_config(path: Option<&Path>) -> Outcome<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Core(egostance::Error::InvalidInput(format!("{}: {e}", path.display()))))?;
    toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {}", path.display(), e.message())))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_classifier(config: &mut RunConfig, args: &ClassifierArgs) {
    let c = &mut config.classifier;
    set(&mut c.epochs, args.epochs);
    set(&mut c.batch_size, args.batch_size);
    set(&mut c.dropout, args.dropout);
    set(&mut c.learning_rate, args.learning_rate);
}

fn window(args: &WindowArgs) -> Outcome<Option<ObservationWindow>> {
    match (args.window_start, args.window_end) {
        (None, None) => Ok(None),
        (Some(s), Some(e)) => Ok(Some(ObservationWindow::new(s, e)?)),
        _ => Err(Failure::Usage(
            "--window-start and --window-end must be given together".into(),
        )),
    }
}

fn dispatch(cli: Cli) -> Outcome {
    let mut config = load_config(cli.config.as_deref())?;
    set(&mut config.seed, cli.seed);
    if cli.threads.is_some() {
        config.threads = cli.threads;
    }
    if let Some(seed) = cli.seed {
        config.syngen.seed = seed;
    }
    match &cli.command {
        Command::Syngen(a) => {
            set(&mut config.syngen.n_users, a.users);
            set(&mut config.syngen.targets, a.targets.clone());
            set(&mut config.syngen.homophily, a.homophily);
            config.syngen.withhold_text |= a.withhold_text;
        }
        Command::BuildEnm(a) => {
            if let Some(k) = &a.kinds {
                config.enm.kinds = k.iter().copied().collect();
            }
            if a.bandwidth.is_some() {
                config.enm.bandwidth = a.bandwidth;
            }
            if a.keep_inactive {
                config.enm.require_active = false;
            }
        }
        Command::Sign(a) => set(&mut config.sign.threshold, a.threshold),
        Command::Embed(a) => {
            set(&mut config.embed.skipgram.dimension, a.dimension);
            set(&mut config.embed.walk.p, a.p);
            set(&mut config.embed.walk.q, a.q);
        }
        Command::Train(a) => apply_classifier(&mut config, &a.classifier),
        Command::Experiment(a) => {
            apply_classifier(&mut config, &a.classifier);
            if let Some(f) = &a.features {
                config.experiment.features = FeatureSet::parse_list(f)?;
            }
            set(&mut config.experiment.shots, a.shots.clone());
            set(&mut config.experiment.seeds, a.seeds.clone());
        }
        Command::Predict(_) | Command::Vote(_) | Command::Report(_) => {}
    }
    config.validate()?;
    let resolved = toml::to_string(&config).map_err(|e| Failure::Config(e.to_string()))?;
    println!("# resolved configuration\n{resolved}");

    if let Some(n) = config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    }

    match cli.command {
        Command::Syngen(a) => syngen(&config, &a),
        Command::BuildEnm(a) => build_enm(&config, &a),
        Command::Sign(a) => sign(&config, &a),
        Command::Embed(a) => embed(&config, &a),
        Command::Train(a) => train(&config, &a),
        Command::Predict(a) => predict(&a),
        Command::Vote(a) => run_vote(&a),
        Command::Experiment(a) => experiment(&config, &a),
        Command::Report(a) => report(&a),
    }
}

fn syngen(config: &RunConfig, a: &SyngenArgs) -> Outcome {
    let corpus = generate(&config.syngen)?;
    emit(&corpus, &a.out)?;
    println!(
        "wrote {} events and {} posts to {}",
        corpus.events.len(),
        corpus.posts.len(),
        a.out.display()
    );
    Ok(())
}

fn read_events(path: &Path, w: &WindowArgs) -> Outcome<(Vec<egostance::corpus::InteractionEvent>, ObservationWindow)> {
    let explicit = window(w)?;
    let ingest = load_interactions(path, explicit.unwrap_or(ObservationWindow::unbounded()))?;
    if !ingest.rejects.is_empty() {
        eprintln!("warning: {} interaction lines rejected", ingest.rejects.len());
    }
    let window = explicit
        .or_else(|| ObservationWindow::spanning(&ingest.items))
        .unwrap_or(ObservationWindow::unbounded());
    Ok((ingest.items, window))
}

fn build_enm(config: &RunConfig, a: &BuildEnmArgs) -> Outcome {
    let (events, window) = read_events(&a.interactions, &a.window)?;
    let build = build_all(&events, window, &config.enm)?;
    save_ego_networks(&a.out, &build.networks)?;
    println!(
        "{} ego networks ({} inactive, {} without qualifying interactions)",
        build.networks.len(),
        build.inactive.len(),
        build.empty.len()
    );
    Ok(())
}

fn sign(config: &RunConfig, a: &SignArgs) -> Outcome {
    let (events, _) = read_events(&a.interactions, &a.window)?;
    let networks = load_ego_networks(&a.networks)?;
    let lexicon = match &a.lexicon {
        Some(p) => Lexicon::load(p)?,
        None => Lexicon::builtin(),
    };
    let signed = sign_all(&networks, &events, &lexicon, &config.sign)?;
    save_signed_networks(&a.out, &signed)?;
    let negative: usize = signed
        .iter()
        .map(|s| s.signs.values().filter(|v| **v == egostance::senm::Sign::Negative).count())
        .sum();
    let total: usize = signed.iter().map(|s| s.signs.len()).sum();
    println!("signed {total} relationships, {negative} negative");
    Ok(())
}

fn embed(config: &RunConfig, a: &EmbedArgs) -> Outcome {
    let posts = load_posts(&a.posts)?;
    let users: BTreeSet<String> = posts.iter().map(|p| p.author_id.clone()).collect();
    let networks = match &a.networks {
        Some(p) => load_ego_networks(p)?,
        None if a.feature.circle_selector().is_some() && a.feature != Feature::Senm => {
            return Err(Failure::Usage(format!("{} needs --networks", a.feature)))
        }
        None => Vec::new(),
    };
    let signed = match &a.signed {
        Some(p) => Some(load_signed_networks(p)?),
        None if a.feature == Feature::Senm => return Err(Failure::Usage("senm needs --signed".into())),
        None => None,
    };
    let mut aux = BTreeMap::new();
    if let Some(kind) = a.feature.aux_kind() {
        let path = a
            .aux
            .as_ref()
            .ok_or_else(|| Failure::Usage(format!("{} needs --aux", a.feature)))?;
        aux.insert(kind, load_aux_graph(path, kind)?);
    }
    let inputs = FeatureInputs {
        users: &users,
        networks: &networks,
        signed: signed.as_deref(),
        aux: &aux,
    };
    let (table, coverage) = embed_feature(a.feature, &inputs, &config.embed, config.seed)?;
    table.save(&a.out, a.feature.name(), config.seed)?;
    println!(
        "{} vectors of dimension {}, {} users with zero vectors",
        table.len(),
        table.dimension,
        coverage.zero_vector_users.len()
    );
    Ok(())
}

fn select_posts(posts: &[Post], target: Option<&str>) -> Vec<Post> {
    posts
        .iter()
        .filter(|p| target.is_none_or(|t| p.target == t))
        .cloned()
        .collect()
}

fn matrix(table: &EmbeddingTable, posts: &[Post]) -> Array2<f64> {
    let mut x = Array2::zeros((posts.len(), table.dimension));
    for (i, p) in posts.iter().enumerate() {
        if let Some(v) = table.get(&p.author_id) {
            x.row_mut(i).assign(&ndarray::ArrayView1::from(v));
        }
    }
    x
}

fn train(config: &RunConfig, a: &TrainArgs) -> Outcome {
    let (table, _) = EmbeddingTable::load(&a.embeddings)?;
    let posts = select_posts(&load_posts(&a.posts)?, a.target.as_deref());
    let labels: Vec<Stance> = posts.iter().map(|p| p.stance).collect();
    let model = clf::train(matrix(&table, &posts).view(), &labels, &config.classifier)?;
    model.save(&a.out)?;
    println!(
        "trained on {} posts: loss {:.4} -> {:.4} over {} epochs",
        posts.len(),
        model.meta.initial_loss,
        model.meta.final_loss,
        model.meta.epochs_run
    );
    Ok(())
}

fn predict(a: &PredictArgs) -> Outcome {
    let model = Model::load(&a.model)?;
    let (table, _) = EmbeddingTable::load(&a.embeddings)?;
    let posts = select_posts(&load_posts(&a.posts)?, a.target.as_deref());
    let scored = model.predict_batch(matrix(&table, &posts).view())?;
    let preds: Vec<Prediction> = posts
        .iter()
        .zip(scored)
        .map(|(p, s)| Prediction {
            post_id: p.post_id.clone(),
            label: s.label,
            confidence: s.confidence,
        })
        .collect();
    save_predictions(&a.out, &preds)?;
    println!("wrote {} predictions", preds.len());
    Ok(())
}

fn run_vote(a: &VoteArgs) -> Outcome {
    let mut slates: BTreeMap<String, Vec<Vote>> = BTreeMap::new();
    let mut names = Vec::new();
    for spec in &a.predictions {
        let (name, file) = spec
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--predictions expects NAME=FILE, got {spec:?}")))?;
        names.push(name.to_string());
        for p in load_predictions(Path::new(file))?.entries.into_values() {
            slates.entry(p.post_id).or_default().push(Vote {
                feature: name.to_string(),
                label: p.label,
                confidence: p.confidence,
            });
        }
    }
    let slates: Vec<VoteSlate> = slates
        .into_iter()
        .map(|(post_id, votes)| VoteSlate { post_id, votes })
        .collect();
    let subset = a.subset.clone().unwrap_or(names);
    let subset: Vec<&str> = subset.iter().map(String::as_str).collect();
    let finals = vote_all(&slates, &subset)?;
    save_final_predictions(&a.out, &finals)?;
    println!(
        "voted {} posts, {} ties broken by confidence",
        finals.len(),
        finals.iter().filter(|f| f.tie_broken).count()
    );
    Ok(())
}

fn parse_pairs(spec: &str, posts: &[Post]) -> Outcome<Vec<(String, String)>> {
    if spec.trim() == "all" {
        let targets: BTreeSet<String> = posts.iter().map(|p| p.target.clone()).collect();
        return Ok(all_pairs(&targets.into_iter().collect::<Vec<_>>()));
    }
    spec.split(',')
        .map(|p| {
            p.split_once(':')
                .map(|(s, d)| (s.trim().to_string(), d.trim().to_string()))
                .ok_or_else(|| Failure::Usage(format!("pair {p:?} is not SOURCE:DESTINATION")))
        })
        .collect()
}

fn experiment(config: &RunConfig, a: &ExperimentArgs) -> Outcome {
    let dataset = Dataset::load_dir(&a.data, window(&a.window)?)?;
    let pairs = match &a.pairs {
        Some(spec) => parse_pairs(spec, &dataset.posts)?,
        None => vec![(config.experiment.source.clone(), config.experiment.destination.clone())],
    };
    let artifacts = Artifacts::build(&dataset, &config.experiment.needed_features(), &config.pipeline())?;
    for (f, c) in &artifacts.coverage {
        if !c.zero_vector_users.is_empty() {
            eprintln!("note: {f}: {} authors have zero vectors", c.zero_vector_users.len());
        }
    }
    let mut rows = Vec::new();
    for (s, d) in &pairs {
        info!("running {s} -> {d}");
        let run = run_experiment(&config.experiment.for_pair(s, d), &dataset.posts, &artifacts, &config.classifier)?;
        rows.extend(run.rows);
    }
    for path in emit_report(&rows, &a.out)? {
        println!("wrote {}", path.display());
    }
    print_means(&rows);
    Ok(())
}

fn print_means(rows: &[egostance::harness::ReportRow]) {
    for r in rows.iter().filter(|r| r.seed == SeedLabel::Mean) {
        println!("{}->{} {} {}-shot macro-F1 {:.4}", r.source, r.destination, r.features, r.shot, r.macro_f1);
    }
}

fn report(a: &ReportArgs) -> Outcome {
    let rows = load_report(&a.report)?;
    for path in emit_report(&rows, &a.out)? {
        println!("wrote {}", path.display());
    }
    print_means(&rows);
    Ok(())
}
