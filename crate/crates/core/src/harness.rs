//! Few-shot cross-target evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::{info, warn};
use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clf::{self, ClassifierHyper};
use crate::corpus::{
    load_aux_graph, load_interactions, load_posts, load_predictions, AuxGraph, AuxKind,
    ExternalPredictions, InteractionEvent, ObservationWindow, Post, Stance, UserId,
};
use crate::embed::{embed_feature, CoverageReport, EmbedParams, EmbeddingTable, FeatureInputs};
use crate::enm::{build_all, EnmParams};
use crate::ensemble::{vote_all, Vote, VoteSlate};
use crate::error::{Error, Result};
use crate::feature::{Feature, FeatureSet};
use crate::senm::{sign_all, Lexicon, SignParams};
use crate::syngen::{aux_file_name, INTERACTIONS_FILE, POSTS_FILE, PREDICTIONS_FILE};
use crate::util::{derive_seed, rng_for, str_hash};

pub const PROTOCOL_SEEDS: [u64; 5] = [24, 524, 1024, 1524, 2024];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub source: String,
    pub destination: String,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub source_train_size: usize,
    pub test_min: usize,
    pub test_max: usize,
    pub features: Vec<FeatureSet>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source: "A".into(),
            destination: "B".into(),
            shots: vec![100, 200, 300, 400],
            seeds: PROTOCOL_SEEDS.to_vec(),
            source_train_size: 1000,
            test_min: 500,
            test_max: 800,
            features: vec![FeatureSet::single(Feature::EnmFull)],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.source == self.destination {
            return bad(format!("source and destination are both {}", self.source));
        }
        if self.shots.is_empty() || self.shots.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("shots {:?} must be strictly increasing", self.shots));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.test_min > self.test_max || self.test_max == 0 {
            return bad(format!(
                "test size range {}..={} is empty",
                self.test_min, self.test_max
            ));
        }
        if self.features.is_empty() {
            return bad("no feature sets requested".into());
        }
        Ok(())
    }

    /// Distinct features across all requested sets, in a fixed order.
    pub fn needed_features(&self) -> Vec<Feature> {
        let set: BTreeSet<Feature> = self
            .features
            .iter()
            .flat_map(|fs| fs.members().iter().copied())
            .collect();
        set.into_iter().collect()
    }

    /// The same experiment for another ordered target pair.
    pub fn for_pair(&self, source: &str, destination: &str) -> ExperimentConfig {
        ExperimentConfig {
            source: source.into(),
            destination: destination.into(),
            ..self.clone()
        }
    }
}

/// All ordered pairs of distinct targets.
pub fn all_pairs(targets: &[String]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for s in targets {
        for d in targets {
            if s != d {
                out.push((s.clone(), d.clone()));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
    /// Why the split fell short of the requested sizes, if it did.
    pub degraded: Vec<String>,
}

fn posts_of<'a>(posts: &'a [Post], target: &str) -> Vec<&'a Post> {
    let mut v: Vec<&Post> = posts.iter().filter(|p| p.target == target).collect();
    v.sort_by(|a, b| a.post_id.cmp(&b.post_id));
    v
}

/// Seeded split for one (shot, seed) cell.
///
/// Source posts are a fresh sample per seed. Destination posts are permuted
/// once per seed: a shot of `n` injects the first `n`, and the test pool is
/// taken after the largest shot, so it is shared by every shot of the seed.
pub fn make_split(posts: &[Post], config: &ExperimentConfig, shot: usize, seed: u64) -> Result<Split> {
    let source = posts_of(posts, &config.source);
    let dest = posts_of(posts, &config.destination);
    let mut degraded = Vec::new();
    if dest.len() < shot {
        return Err(Error::Protocol(format!(
            "{} has {} posts, fewer than the {shot}-shot injection",
            config.destination,
            dest.len()
        )));
    }
    let n_source = config.source_train_size.min(source.len());
    if n_source < config.source_train_size {
        degraded.push(format!(
            "only {} {} posts for a source sample of {}",
            source.len(),
            config.source,
            config.source_train_size
        ));
    }
    let mut rng = rng_for(seed, &[str_hash(&config.source), 0x0053_5243]);
    let mut chosen = index::sample(&mut rng, source.len(), n_source).into_vec();
    chosen.sort_unstable();

    let mut order: Vec<usize> = (0..dest.len()).collect();
    order.shuffle(&mut rng_for(seed, &[str_hash(&config.destination), 0x0044_5354]));
    let reserved = config.shots.iter().copied().max().unwrap_or(shot).max(shot).min(dest.len());
    let pool = &order[reserved..];
    let n_test = pool.len().min(config.test_max);
    if n_test == 0 {
        return Err(Error::Protocol(format!(
            "no {} posts remain for testing after a {reserved}-post injection",
            config.destination
        )));
    }
    if n_test < config.test_min {
        degraded.push(format!(
            "test set has {n_test} posts, below the minimum of {}",
            config.test_min
        ));
    }
    let mut train: Vec<String> = chosen.iter().map(|&i| source[i].post_id.clone()).collect();
    train.extend(order[..shot].iter().map(|&i| dest[i].post_id.clone()));
    let test = pool[..n_test].iter().map(|&i| dest[i].post_id.clone()).collect();
    Ok(Split {
        train,
        test,
        degraded,
    })
}

/// Mean of the per-class F1 scores over FAVOR and AGAINST.
pub fn macro_f1(predicted: &BTreeMap<String, Stance>, gold: &BTreeMap<String, Stance>) -> Result<f64> {
    if predicted.len() != gold.len() || predicted.keys().any(|k| !gold.contains_key(k)) {
        let missing = gold
            .keys()
            .find(|k| !predicted.contains_key(*k))
            .or_else(|| predicted.keys().find(|k| !gold.contains_key(*k)));
        return Err(Error::InvalidInput(format!(
            "prediction and gold ids differ (e.g. {})",
            missing.map_or("?", String::as_str)
        )));
    }
    let mut tp = [0usize; 2];
    let mut fp = [0usize; 2];
    let mut fn_ = [0usize; 2];
    for (id, g) in gold {
        let p = predicted[id];
        if p == *g {
            tp[g.index()] += 1;
        } else {
            fp[p.index()] += 1;
            fn_[g.index()] += 1;
        }
    }
    let mut total = 0.0;
    for c in 0..2 {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom == 0 {
            warn!("class {} absent from gold and predictions; F1 counted as 0", Stance::from_index(c));
        } else {
            total += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    Ok(total / 2.0)
}

/// Everything an experiment reads.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub window: Option<ObservationWindow>,
    pub events: Vec<InteractionEvent>,
    pub posts: Vec<Post>,
    pub aux: BTreeMap<AuxKind, AuxGraph>,
    pub predictions: Option<ExternalPredictions>,
}

impl Dataset {
    /// Reads a corpus directory in the layout `syngen` writes. Aux graphs
    /// and predictions are optional. Without an explicit window the span of
    /// the interaction log is used.
    pub fn load_dir(dir: &Path, window: Option<ObservationWindow>) -> Result<Dataset> {
        let ingest = load_interactions(&dir.join(INTERACTIONS_FILE), window.unwrap_or(ObservationWindow::unbounded()))?;
        if !ingest.rejects.is_empty() {
            warn!("{} interaction lines rejected", ingest.rejects.len());
        }
        let events = ingest.items;
        let window = window.or_else(|| ObservationWindow::spanning(&events));
        let posts = load_posts(&dir.join(POSTS_FILE))?;
        let mut aux = BTreeMap::new();
        for kind in [AuxKind::Likes, AuxKind::Followers, AuxKind::Friends] {
            let path = dir.join(aux_file_name(kind));
            if path.exists() {
                aux.insert(kind, load_aux_graph(&path, kind)?);
            }
        }
        let path = dir.join(PREDICTIONS_FILE);
        let predictions = if path.exists() {
            Some(load_predictions(&path)?)
        } else {
            None
        };
        Ok(Dataset {
            window,
            events,
            posts,
            aux,
            predictions,
        })
    }

    pub fn authors(&self) -> BTreeSet<UserId> {
        self.posts.iter().map(|p| p.author_id.clone()).collect()
    }
}

/// Parameters of every stage that feeds the classifier.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub enm: EnmParams,
    pub sign: SignParams,
    pub embed: EmbedParams,
    pub classifier: ClassifierHyper,
    /// Seed for the unsupervised stages (walks and skip-gram).
    pub seed: u64,
}

/// Per-feature inputs to the classifiers.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub tables: BTreeMap<Feature, EmbeddingTable>,
    pub coverage: BTreeMap<Feature, CoverageReport>,
    pub predictions: Option<ExternalPredictions>,
}

impl Artifacts {
    /// Builds ego networks, signs and embeddings for `features`.
    pub fn build(dataset: &Dataset, features: &[Feature], params: &PipelineParams) -> Result<Artifacts> {
        let window = dataset.window.unwrap_or(ObservationWindow::unbounded());
        let users = dataset.authors();
        let needs_enm = features.iter().any(|f| f.circle_selector().is_some() || *f == Feature::Senm);
        let networks = if needs_enm {
            let build = build_all(&dataset.events, window, &params.enm)?;
            info!(
                "built {} ego networks ({} inactive, {} empty)",
                build.networks.len(),
                build.inactive.len(),
                build.empty.len()
            );
            build.networks
        } else {
            Vec::new()
        };
        let signed = if features.contains(&Feature::Senm) {
            Some(sign_all(&networks, &dataset.events, &Lexicon::builtin(), &params.sign)?)
        } else {
            None
        };
        let inputs = FeatureInputs {
            users: &users,
            networks: &networks,
            signed: signed.as_deref(),
            aux: &dataset.aux,
        };
        let mut out = Artifacts {
            predictions: dataset.predictions.clone(),
            ..Artifacts::default()
        };
        for &f in features {
            if f == Feature::Text {
                if dataset.predictions.is_none() {
                    return Err(Error::InvalidInput(
                        "feature text needs an external predictions file".into(),
                    ));
                }
                continue;
            }
            if let Some(kind) = f.aux_kind() {
                if !dataset.aux.contains_key(&kind) {
                    return Err(Error::InvalidInput(format!("feature {f} needs a {} graph", kind.as_str())));
                }
            }
            let (table, coverage) = embed_feature(f, &inputs, &params.embed, params.seed)
                .map_err(|e| e.context(format!("embedding {f}")))?;
            info!(
                "{f}: {} vectors, {} zero",
                table.len(),
                coverage.zero_vector_users.len()
            );
            out.tables.insert(f, table);
            out.coverage.insert(f, coverage);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SeedLabel {
    Seed(u64),
    Mean,
}

impl fmt::Display for SeedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeedLabel::Seed(s) => write!(f, "{s}"),
            SeedLabel::Mean => f.write_str("mean"),
        }
    }
}

impl FromStr for SeedLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "mean" {
            return Ok(SeedLabel::Mean);
        }
        s.parse()
            .map(SeedLabel::Seed)
            .map_err(|_| Error::InvalidInput(format!("bad seed column {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub source: String,
    pub destination: String,
    pub features: String,
    pub shot: usize,
    pub seed: SeedLabel,
    pub macro_f1: f64,
}

/// One evaluated (shot, seed) cell, kept for auditing.
#[derive(Debug, Clone)]
pub struct CellRecord {
    pub shot: usize,
    pub seed: u64,
    pub split: Split,
    /// Post ids each trained classifier saw, by feature.
    pub trained_on: BTreeMap<Feature, Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub rows: Vec<ReportRow>,
    pub cells: Vec<CellRecord>,
}

fn feature_matrix(table: &EmbeddingTable, posts: &[&Post]) -> Array2<f64> {
    let d = table.dimension;
    let mut x = Array2::zeros((posts.len(), d));
    for (i, p) in posts.iter().enumerate() {
        if let Some(v) = table.get(&p.author_id) {
            x.row_mut(i).assign(&ndarray::ArrayView1::from(v));
        }
    }
    x
}

fn run_cell(
    config: &ExperimentConfig,
    by_id: &BTreeMap<&str, &Post>,
    posts: &[Post],
    artifacts: &Artifacts,
    hyper: &ClassifierHyper,
    shot: usize,
    seed: u64,
) -> Result<(Vec<f64>, CellRecord)> {
    let split = make_split(posts, config, shot, seed)?;
    for d in &split.degraded {
        warn!("{}->{} shot {shot} seed {seed}: {d}", config.source, config.destination);
    }
    let train: Vec<&Post> = split.train.iter().map(|id| by_id[id.as_str()]).collect();
    let test: Vec<&Post> = split.test.iter().map(|id| by_id[id.as_str()]).collect();
    let labels: Vec<Stance> = train.iter().map(|p| p.stance).collect();

    let mut slates: Vec<VoteSlate> = test
        .iter()
        .map(|p| VoteSlate {
            post_id: p.post_id.clone(),
            votes: Vec::new(),
        })
        .collect();
    let mut trained_on = BTreeMap::new();
    for f in config.needed_features() {
        if f == Feature::Text {
            let preds = artifacts
                .predictions
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("no external predictions loaded".into()))?;
            for s in &mut slates {
                let p = preds.get(&s.post_id).ok_or_else(|| {
                    Error::InvalidInput(format!("no text prediction for post {}", s.post_id))
                })?;
                s.votes.push(Vote {
                    feature: f.name().into(),
                    label: p.label,
                    confidence: p.confidence,
                });
            }
            continue;
        }
        let table = artifacts
            .tables
            .get(&f)
            .ok_or_else(|| Error::InvalidInput(format!("no embedding table for {f}")))?;
        let cell_hyper = ClassifierHyper {
            seed: derive_seed(seed, &[shot as u64, str_hash(f.name())]),
            ..hyper.clone()
        };
        let model = clf::train(feature_matrix(table, &train).view(), &labels, &cell_hyper)
            .map_err(|e| e.context(format!("training {f}")))?;
        trained_on.insert(f, split.train.clone());
        let scored = model.predict_batch(feature_matrix(table, &test).view())?;
        for (s, p) in slates.iter_mut().zip(scored) {
            s.votes.push(Vote {
                feature: f.name().into(),
                label: p.label,
                confidence: p.confidence,
            });
        }
    }

    let gold: BTreeMap<String, Stance> = test.iter().map(|p| (p.post_id.clone(), p.stance)).collect();
    let mut scores = Vec::with_capacity(config.features.len());
    for fs in &config.features {
        let names: Vec<&str> = fs.members().iter().map(|f| f.name()).collect();
        let finals = vote_all(&slates, &names)?;
        let predicted = finals.into_iter().map(|p| (p.post_id, p.label)).collect();
        scores.push(macro_f1(&predicted, &gold)?);
    }
    Ok((
        scores,
        CellRecord {
            shot,
            seed,
            split,
            trained_on,
        },
    ))
}

/// Runs every (shot, seed) cell and assembles per-seed and mean rows.
///
/// Rows are ordered by feature set, then shot, with the seeds in config
/// order followed by the mean. Cells may run in parallel; the output does
/// not depend on scheduling.
pub fn run_experiment(
    config: &ExperimentConfig,
    posts: &[Post],
    artifacts: &Artifacts,
    hyper: &ClassifierHyper,
) -> Result<ExperimentRun> {
    config.validate()?;
    let by_id: BTreeMap<&str, &Post> = posts.iter().map(|p| (p.post_id.as_str(), p)).collect();
    let cells: Vec<(usize, u64)> = config
        .shots
        .iter()
        .flat_map(|&shot| config.seeds.iter().map(move |&seed| (shot, seed)))
        .collect();
    let results: Vec<(Vec<f64>, CellRecord)> = cells
        .par_iter()
        .map(|&(shot, seed)| {
            run_cell(config, &by_id, posts, artifacts, hyper, shot, seed)
                .map_err(|e| e.context(format!("shot {shot} seed {seed}")))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (fi, fs) in config.features.iter().enumerate() {
        for (si, &shot) in config.shots.iter().enumerate() {
            let per_seed: Vec<f64> = (0..config.seeds.len())
                .map(|k| results[si * config.seeds.len() + k].0[fi])
                .collect();
            let row = |seed, macro_f1| ReportRow {
                source: config.source.clone(),
                destination: config.destination.clone(),
                features: fs.name().to_string(),
                shot,
                seed,
                macro_f1,
            };
            for (&seed, &f1) in config.seeds.iter().zip(&per_seed) {
                rows.push(row(SeedLabel::Seed(seed), f1));
            }
            rows.push(row(SeedLabel::Mean, per_seed.iter().sum::<f64>() / per_seed.len() as f64));
        }
    }
    Ok(ExperimentRun {
        rows,
        cells: results.into_iter().map(|(_, c)| c).collect(),
    })
}

pub const REPORT_HEADER: &str = "source,destination,features,shot,seed,macro_f1";

pub fn write_report_csv<W: Write>(w: W, rows: &[ReportRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_HEADER.split(','))?;
    for r in rows {
        out.write_record([
            r.source.as_str(),
            &r.destination,
            &r.features,
            &r.shot.to_string(),
            &r.seed.to_string(),
            &r.macro_f1.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<report>", e))
}

pub fn read_report_csv<R: std::io::Read>(reader: R, source: &str) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != REPORT_HEADER {
        return Err(Error::parse(source, 1, format!("expected header {REPORT_HEADER}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or_default();
        let bad = |m: String| Error::parse(source, line, m);
        if rec.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", rec.len())));
        }
        rows.push(ReportRow {
            source: field(0).into(),
            destination: field(1).into(),
            features: field(2).into(),
            shot: field(3).parse().map_err(|e| bad(format!("shot: {e}")))?,
            seed: field(4).parse().map_err(|e: Error| bad(e.to_string()))?,
            macro_f1: field(5).parse().map_err(|e| bad(format!("macro_f1: {e}")))?,
        });
    }
    Ok(rows)
}

pub fn load_report(path: &Path) -> Result<Vec<ReportRow>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_report_csv(f, &path.display().to_string())
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];

/// Mean macro-F1 against shot, one polyline per feature set.
pub fn render_svg(source: &str, destination: &str, rows: &[&ReportRow]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 50.0);
    let mut series: BTreeMap<&str, Vec<(usize, f64)>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for r in rows.iter().filter(|r| r.seed == SeedLabel::Mean) {
        if !series.contains_key(r.features.as_str()) {
            order.push(&r.features);
        }
        series.entry(&r.features).or_default().push((r.shot, r.macro_f1));
    }
    let shots: BTreeSet<usize> = series.values().flatten().map(|(s, _)| *s).collect();
    let (lo, hi) = match (shots.first(), shots.last()) {
        (Some(&a), Some(&b)) if a < b => (a as f64, b as f64),
        (Some(&a), _) => (a as f64 - 1.0, a as f64 + 1.0),
        _ => (0.0, 1.0),
    };
    let px = |shot: f64| left + (shot - lo) / (hi - lo) * (w - left - right);
    let py = |f1: f64| top + (1.0 - f1) * (h - top - bottom);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!("<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{} &#8594; {}</text>\n",
        (left + w - right) / 2.0,
        xml_escape(source),
        xml_escape(destination)
    ));
    for k in 0..=5 {
        let f1 = k as f64 / 5.0;
        let y = py(f1);
        svg.push_str(&format!(
            "<line x1=\"{left}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{f1:.1}</text>\n",
            w - right,
            left - 6.0,
            y + 4.0
        ));
    }
    for &s in &shots {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{s}</text>\n",
            px(s as f64),
            h - bottom + 18.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">shot</text>\n",
        (left + w - right) / 2.0,
        h - 10.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">mean macro-F1</text>\n",
        (top + h - bottom) / 2.0,
        (top + h - bottom) / 2.0
    ));
    for (i, name) in order.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = series[name].clone();
        pts.sort_by_key(|p| p.0);
        let coords: Vec<String> = pts
            .iter()
            .map(|&(s, f1)| format!("{:.1},{:.1}", px(s as f64), py(f1)))
            .collect();
        svg.push_str(&format!(
            "<polyline data-features=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            xml_escape(name),
            coords.join(" ")
        ));
        let ly = top + 10.0 + 18.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            w - right + 10.0,
            w - right + 30.0,
            w - right + 36.0,
            ly + 4.0,
            xml_escape(name)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Writes `report.csv` and one `<source>-<destination>.svg` per pair.
/// Returns the written paths.
pub fn emit_report(rows: &[ReportRow], dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("no report rows to emit".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let path = dir.join("report.csv");
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_report_csv(BufWriter::new(f), rows)?;
    written.push(path);

    let mut pairs: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let key = (r.source.as_str(), r.destination.as_str());
        if !pairs.contains(&key) {
            pairs.push(key);
        }
    }
    for (s, d) in pairs {
        let subset: Vec<&ReportRow> = rows.iter().filter(|r| r.source == s && r.destination == d).collect();
        let path = dir.join(format!("{}-{}.svg", file_safe(s), file_safe(d)));
        std::fs::write(&path, render_svg(s, d, &subset)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Stance::{Against as A, Favor as F};

    fn labels(v: &[Stance]) -> BTreeMap<String, Stance> {
        v.iter().enumerate().map(|(i, s)| (format!("{i}"), *s)).collect()
    }

    #[test]
    fn macro_f1_hand_computed() {
        let gold = labels(&[F, F, A, A]);
        let pred = labels(&[F, A, A, A]);
        let m = macro_f1(&pred, &gold).unwrap();
        // FAVOR: p=1, r=1/2 -> 2/3. AGAINST: p=2/3, r=1 -> 4/5.
        assert!((m - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
        assert_eq!(macro_f1(&gold, &gold).unwrap(), 1.0);
        let all_f = labels(&[F, F, F, F]);
        assert!((macro_f1(&all_f, &gold).unwrap() - 0.5 * 2.0 / 3.0).abs() < 1e-15);
        let mut short = pred.clone();
        short.remove("0");
        assert!(macro_f1(&short, &gold).is_err());
    }

    fn corpus(n_src: usize, n_dst: usize) -> Vec<Post> {
        let mk = |i: usize, target: &str| Post {
            post_id: format!("{target}{i:05}"),
            author_id: format!("u{}", i % 50),
            target: target.into(),
            stance: Stance::from_index(i % 2),
            ts: 0,
            text: String::new(),
        };
        (0..n_src).map(|i| mk(i, "S")).chain((0..n_dst).map(|i| mk(i, "D"))).collect()
    }

    fn cfg() -> ExperimentConfig {
        ExperimentConfig {
            source: "S".into(),
            destination: "D".into(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn splits_nest_and_share_a_test_pool() {
        let posts = corpus(1500, 1500);
        let c = cfg();
        let s100 = make_split(&posts, &c, 100, 24).unwrap();
        let s200 = make_split(&posts, &c, 200, 24).unwrap();
        assert_eq!(s100.train.len(), 1100);
        assert_eq!(s100.test.len(), 800);
        assert_eq!(s100.test, s200.test);
        let inj100: BTreeSet<_> = s100.train.iter().filter(|id| id.starts_with('D')).collect();
        let inj200: BTreeSet<_> = s200.train.iter().filter(|id| id.starts_with('D')).collect();
        assert_eq!(inj100.len(), 100);
        assert!(inj100.is_subset(&inj200));
        for s in [&s100, &s200] {
            let train: BTreeSet<_> = s.train.iter().collect();
            assert!(s.test.iter().all(|t| !train.contains(t) && t.starts_with('D')));
            assert!(s.degraded.is_empty());
        }
        assert_ne!(s100.test, make_split(&posts, &c, 100, 524).unwrap().test);
    }

    #[test]
    fn small_destination_degrades_or_fails() {
        let posts = corpus(1500, 700);
        let s = make_split(&posts, &cfg(), 400, 24).unwrap();
        assert_eq!(s.test.len(), 300);
        assert_eq!(s.degraded.len(), 1);
        let posts = corpus(1500, 50);
        assert_eq!(make_split(&posts, &cfg(), 100, 24).unwrap_err().category(), "protocol");
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.shots = vec![200, 100];
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.destination = "S".into();
        assert!(c.validate().is_err());
        assert_eq!(all_pairs(&["a".into(), "b".into(), "c".into()]).len(), 6);
    }

    fn rows() -> Vec<ReportRow> {
        let mut rows = Vec::new();
        for fs in ["enm-full", "senm+text"] {
            for shot in [100, 200, 300, 400] {
                let vals: Vec<f64> = (0..3).map(|k| 0.5 + 0.01 * (shot / 100 + k) as f64 / 3.0).collect();
                for (k, v) in vals.iter().enumerate() {
                    rows.push(ReportRow {
                        source: "A".into(),
                        destination: "B".into(),
                        features: fs.into(),
                        shot,
                        seed: SeedLabel::Seed(k as u64),
                        macro_f1: *v,
                    });
                }
                rows.push(ReportRow {
                    source: "A".into(),
                    destination: "B".into(),
                    features: fs.into(),
                    shot,
                    seed: SeedLabel::Mean,
                    macro_f1: vals.iter().sum::<f64>() / 3.0,
                });
            }
        }
        rows
    }

    #[test]
    fn report_round_trip_and_plot() {
        let rows = rows();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&rows, dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        assert_eq!(load_report(&files[0]).unwrap(), rows);
        let svg = std::fs::read_to_string(&files[1]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        for line in svg.lines().filter(|l| l.starts_with("<polyline")) {
            let pts = line.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
            assert_eq!(pts.split(' ').count(), 4);
        }
        assert!(emit_report(&[], dir.path()).is_err());
    }

    proptest! {
        #[test]
        fn macro_f1_bounded_and_equals_accuracy_when_balanced(
            pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..60)
        ) {
            let to = |b: bool| if b { F } else { A };
            let gold = labels(&pairs.iter().map(|p| to(p.0)).collect::<Vec<_>>());
            let pred = labels(&pairs.iter().map(|p| to(p.1)).collect::<Vec<_>>());
            let m = macro_f1(&pred, &gold).unwrap();
            prop_assert!((0.0..=1.0).contains(&m));

            // Mirror every example with both labels flipped: the confusion
            // matrix becomes symmetric, where macro-F1 equals accuracy.
            let mut g2: Vec<Stance> = pairs.iter().map(|p| to(p.0)).collect();
            let mut p2: Vec<Stance> = pairs.iter().map(|p| to(p.1)).collect();
            g2.extend(pairs.iter().map(|p| to(!p.0)));
            p2.extend(pairs.iter().map(|p| to(!p.1)));
            let acc = g2.iter().zip(&p2).filter(|(a, b)| a == b).count() as f64 / g2.len() as f64;
            let m2 = macro_f1(&labels(&p2), &labels(&g2)).unwrap();
            if acc > 0.0 {
                prop_assert!((m2 - acc).abs() < 1e-12, "{} vs {}", m2, acc);
            }
        }
    }
}
