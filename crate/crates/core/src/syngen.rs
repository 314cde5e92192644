//! Synthetic corpora with planted stance homophily.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    save_aux_graph, save_interactions, save_posts, save_predictions, AuxGraph, AuxKind,
    ExternalPredictions, InteractionEvent, InteractionKind, ObservationWindow, Post, Prediction,
    Stance, UserId,
};
use crate::error::{Error, Result};
use crate::senm::{score_text, Lexicon, Sign, NEGATIVE_RATIO_THRESHOLD};
use crate::util::{rng_for, MEAN_MONTH_SECS};

/// 2020-01-01T00:00:00Z.
pub const DEFAULT_START_TS: i64 = 1_577_836_800;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    pub n_users: usize,
    pub targets: Vec<String>,
    /// Probability that a user's stance on a later target equals their
    /// stance on the first one.
    pub stance_correlation: f64,
    /// Probability that an edge joins two users of the same camp.
    pub homophily: f64,
    /// Cumulative circle sizes; the last one is the number of alters per ego.
    pub circle_size_targets: Vec<usize>,
    pub negative_rate_cross: f64,
    pub negative_rate_same: f64,
    /// Posts per user per target, drawn uniformly from `min..=max`.
    pub posts_per_user_min: usize,
    pub posts_per_user_max: usize,
    pub months: u32,
    pub start_ts: i64,
    /// Median interaction count of an innermost-ring alter over the whole
    /// window. Each further ring divides it by `ring_decay`.
    pub base_interactions: f64,
    pub ring_decay: f64,
    /// Log-normal shape of per-alter counts.
    pub count_sigma: f64,
    /// Out-degree of every user in each auxiliary graph.
    pub aux_out_degree: usize,
    /// Accuracy of the stand-in text model written to predictions.csv.
    pub text_model_accuracy: f64,
    /// Emit precomputed sentiment instead of interaction texts.
    pub withhold_text: bool,
    pub seed: u64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            n_users: 500,
            targets: vec!["A".into(), "B".into()],
            stance_correlation: 0.9,
            homophily: 0.8,
            circle_size_targets: vec![2, 5, 15, 50, 150],
            negative_rate_cross: 0.6,
            negative_rate_same: 0.05,
            posts_per_user_min: 4,
            posts_per_user_max: 8,
            months: 12,
            start_ts: DEFAULT_START_TS,
            base_interactions: 60.0,
            ring_decay: 3.0,
            count_sigma: 0.25,
            aux_out_degree: 10,
            text_model_accuracy: 0.7,
            withhold_text: false,
            seed: 1,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.targets.is_empty() || self.targets.iter().any(|t| t.trim().is_empty()) {
            return bad("targets must be non-empty names".into());
        }
        if self.targets.iter().collect::<BTreeSet<_>>().len() != self.targets.len() {
            return bad("targets must be distinct".into());
        }
        if !(0.5..=1.0).contains(&self.homophily) {
            return bad(format!("homophily {} outside [0.5, 1]", self.homophily));
        }
        for (name, v) in [
            ("stance_correlation", self.stance_correlation),
            ("negative_rate_cross", self.negative_rate_cross),
            ("negative_rate_same", self.negative_rate_same),
            ("text_model_accuracy", self.text_model_accuracy),
        ] {
            if !unit(v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.circle_size_targets.is_empty()
            || self.circle_size_targets[0] == 0
            || self.circle_size_targets.windows(2).any(|w| w[0] >= w[1])
        {
            return bad(format!(
                "circle_size_targets {:?} must be positive and strictly increasing",
                self.circle_size_targets
            ));
        }
        let alters = *self.circle_size_targets.last().unwrap();
        if self.n_users <= alters {
            return bad(format!(
                "n_users {} cannot give every ego {alters} alters; use at least {} users",
                self.n_users,
                alters + 1
            ));
        }
        if self.aux_out_degree >= self.n_users {
            return bad(format!("aux_out_degree {} must be below n_users", self.aux_out_degree));
        }
        if self.posts_per_user_min > self.posts_per_user_max {
            return bad("posts_per_user_min exceeds posts_per_user_max".into());
        }
        if self.months == 0 {
            return bad("months must be positive".into());
        }
        if !(self.base_interactions >= 1.0 && self.ring_decay >= 1.0 && self.count_sigma >= 0.0) {
            return bad("base_interactions and ring_decay must be >= 1, count_sigma >= 0".into());
        }
        Ok(())
    }

    pub fn window(&self) -> ObservationWindow {
        let len = (self.months as f64 * MEAN_MONTH_SECS).round() as i64;
        ObservationWindow {
            start: self.start_ts,
            end: self.start_ts + len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub stance_of: BTreeMap<(UserId, String), Stance>,
    pub sign_of: BTreeMap<(UserId, UserId), Sign>,
}

#[derive(Serialize, Deserialize)]
struct StanceEntry {
    user: UserId,
    target: String,
    stance: Stance,
}

#[derive(Serialize, Deserialize)]
struct SignEntry {
    ego: UserId,
    alter: UserId,
    sign: Sign,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthFile {
    stances: Vec<StanceEntry>,
    signs: Vec<SignEntry>,
}

impl GroundTruth {
    pub fn to_json(&self) -> Result<String> {
        let file = GroundTruthFile {
            stances: self
                .stance_of
                .iter()
                .map(|((user, target), &stance)| StanceEntry {
                    user: user.clone(),
                    target: target.clone(),
                    stance,
                })
                .collect(),
            signs: self
                .sign_of
                .iter()
                .map(|((ego, alter), &sign)| SignEntry {
                    ego: ego.clone(),
                    alter: alter.clone(),
                    sign,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<GroundTruth> {
        let file: GroundTruthFile = serde_json::from_str(text)?;
        Ok(GroundTruth {
            stance_of: file
                .stances
                .into_iter()
                .map(|s| ((s.user, s.target), s.stance))
                .collect(),
            sign_of: file
                .signs
                .into_iter()
                .map(|s| ((s.ego, s.alter), s.sign))
                .collect(),
        })
    }

    pub fn load(path: &Path) -> Result<GroundTruth> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub window: ObservationWindow,
    pub events: Vec<InteractionEvent>,
    pub posts: Vec<Post>,
    pub aux: BTreeMap<AuxKind, AuxGraph>,
    pub predictions: ExternalPredictions,
    pub truth: GroundTruth,
}

const NEUTRAL_TOKENS: &[&str] = &[
    "the", "debate", "today", "policy", "vote", "people", "news", "rally", "about", "campaign",
    "election", "speech", "thread", "watching", "tonight", "article",
];
const FAVOR_TOKENS: &[&str] = &["backing", "endorse", "champion", "forward", "yes"];
const AGAINST_TOKENS: &[&str] = &["oppose", "reject", "resist", "against", "nope"];

/// Tone of one interaction.
#[derive(Clone, Copy, PartialEq)]
enum Tone {
    Positive,
    Neutral,
    Negative,
}

fn user_id(i: usize, width: usize) -> UserId {
    format!("u{i:0width$}")
}

fn interaction_text(rng: &mut ChaCha8Rng, tone: Tone, pos: &[&str], neg: &[&str]) -> String {
    let mut words: Vec<&str> = (0..rng.random_range(2..=4))
        .map(|_| *NEUTRAL_TOKENS.choose(rng).unwrap())
        .collect();
    let pool = match tone {
        Tone::Positive => pos,
        Tone::Negative => neg,
        Tone::Neutral => &[][..],
    };
    for _ in 0..(if pool.is_empty() { 0 } else { rng.random_range(1..=2) }) {
        words.push(pool.choose(rng).unwrap());
    }
    words.shuffle(rng);
    words.join(" ")
}

/// Draws a fresh user of `camp` not in `taken`, falling back to the other
/// camp when this one is exhausted.
fn pick_alter(
    rng: &mut ChaCha8Rng,
    members: &[Vec<usize>; 2],
    camp: usize,
    taken: &BTreeSet<usize>,
) -> Option<usize> {
    for c in [camp, 1 - camp] {
        let pool = &members[c];
        let free = pool.len() - pool.iter().filter(|u| taken.contains(u)).count();
        if free == 0 {
            continue;
        }
        // Rejection is cheap while most of the camp is free.
        if free * 2 >= pool.len() {
            loop {
                let u = *pool.choose(rng).unwrap();
                if !taken.contains(&u) {
                    return Some(u);
                }
            }
        }
        let open: Vec<usize> = pool.iter().copied().filter(|u| !taken.contains(u)).collect();
        return open.choose(rng).copied();
    }
    None
}

/// Generates a corpus. All randomness comes from one generator seeded by
/// `params.seed`.
pub fn generate(params: &GeneratorParams) -> Result<SyntheticCorpus> {
    params.validate()?;
    let mut rng = rng_for(params.seed, &[0x5359_4e47]);
    let n = params.n_users;
    let width = (n - 1).to_string().len().max(3);
    let ids: Vec<UserId> = (0..n).map(|i| user_id(i, width)).collect();
    let window = params.window();
    let span = window.end - window.start;

    // Balanced camps: index 0 favours the first target.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut camp = vec![0usize; n];
    for &u in &order[n / 2..] {
        camp[u] = 1;
    }
    let members: [Vec<usize>; 2] = [
        (0..n).filter(|&u| camp[u] == 0).collect(),
        (0..n).filter(|&u| camp[u] == 1).collect(),
    ];

    let mut truth = GroundTruth::default();
    let mut stances: Vec<Vec<Stance>> = Vec::with_capacity(n);
    for u in 0..n {
        let first = Stance::from_index(camp[u]);
        let mut row = vec![first];
        for _ in 1..params.targets.len() {
            row.push(if rng.random_bool(params.stance_correlation) {
                first
            } else {
                first.flip()
            });
        }
        for (t, s) in params.targets.iter().zip(&row) {
            truth.stance_of.insert((ids[u].clone(), t.clone()), *s);
        }
        stances.push(row);
    }

    let lexicon = Lexicon::builtin();
    let pos_words = lexicon.tokens_with_sign(true);
    let neg_words = lexicon.tokens_with_sign(false);
    let ring_sizes: Vec<usize> = params
        .circle_size_targets
        .iter()
        .scan(0, |prev, &c| {
            let size = c - *prev;
            *prev = c;
            Some(size)
        })
        .collect();

    let mut events = Vec::new();
    for ego in 0..n {
        let mut taken = BTreeSet::from([ego]);
        let mut alters = Vec::with_capacity(*params.circle_size_targets.last().unwrap());
        for _ in 0..alters.capacity() {
            let same = rng.random_bool(params.homophily);
            let want = if same { camp[ego] } else { 1 - camp[ego] };
            let a = pick_alter(&mut rng, &members, want, &taken).expect("n_users exceeds alters");
            taken.insert(a);
            alters.push(a);
        }
        let mut slot = 0;
        for (ring, &size) in ring_sizes.iter().enumerate() {
            let median = params.base_interactions / params.ring_decay.powi(ring as i32);
            let counts = LogNormal::new(median.ln(), params.count_sigma)
                .map_err(|e| Error::InvalidParam(e.to_string()))?;
            for &alter in &alters[slot..slot + size] {
                let cross = camp[ego] != camp[alter];
                let neg_rate = if cross {
                    params.negative_rate_cross
                } else {
                    params.negative_rate_same
                };
                let sign = if neg_rate > NEGATIVE_RATIO_THRESHOLD {
                    Sign::Negative
                } else {
                    Sign::Positive
                };
                truth.sign_of.insert((ids[ego].clone(), ids[alter].clone()), sign);
                let count = (counts.sample(&mut rng).round() as usize).max(1);
                for _ in 0..count {
                    let ts = window.start + rng.random_range(0..span);
                    let kind = match rng.random_range(0..10) {
                        0..=5 => InteractionKind::Reply,
                        6..=8 => InteractionKind::Mention,
                        _ => InteractionKind::Other,
                    };
                    let tone = if rng.random_bool(neg_rate) {
                        Tone::Negative
                    } else if rng.random_bool(0.7) {
                        Tone::Positive
                    } else {
                        Tone::Neutral
                    };
                    let text = interaction_text(&mut rng, tone, &pos_words, &neg_words);
                    let (text, sentiment) = if params.withhold_text {
                        (None, Some(score_text(&lexicon, &text).compound))
                    } else {
                        (Some(text), None)
                    };
                    events.push(InteractionEvent {
                        ego: ids[ego].clone(),
                        alter: ids[alter].clone(),
                        ts,
                        kind,
                        text,
                        sentiment,
                    });
                }
            }
            slot += size;
        }
    }
    events.sort_by(|a, b| (a.ts, &a.ego, &a.alter).cmp(&(b.ts, &b.ego, &b.alter)));

    let mut posts = Vec::new();
    let mut predictions = Vec::new();
    for (t_idx, target) in params.targets.iter().enumerate() {
        for u in 0..n {
            let k = rng.random_range(params.posts_per_user_min..=params.posts_per_user_max);
            for _ in 0..k {
                let stance = stances[u][t_idx];
                let cue = match stance {
                    Stance::Favor => FAVOR_TOKENS,
                    Stance::Against => AGAINST_TOKENS,
                };
                let mut words: Vec<&str> = (0..rng.random_range(3..=6))
                    .map(|_| *NEUTRAL_TOKENS.choose(&mut rng).unwrap())
                    .collect();
                words.push(cue.choose(&mut rng).unwrap());
                words.push(target);
                words.shuffle(&mut rng);
                let post_id = format!("p{:07}", posts.len());
                let label = if rng.random_bool(params.text_model_accuracy) {
                    stance
                } else {
                    stance.flip()
                };
                let confidence = (rng.random_range(0.5..=1.0f64) * 1e4).round() / 1e4;
                predictions.push(Prediction {
                    post_id: post_id.clone(),
                    label,
                    confidence,
                });
                posts.push(Post {
                    post_id,
                    author_id: ids[u].clone(),
                    target: target.clone(),
                    stance,
                    ts: window.start + rng.random_range(0..span),
                    text: words.join(" "),
                });
            }
        }
    }

    let mut aux = BTreeMap::new();
    for kind in [AuxKind::Likes, AuxKind::Followers, AuxKind::Friends] {
        let mut g = AuxGraph::new(kind);
        for u in 0..n {
            let mut taken = BTreeSet::from([u]);
            for _ in 0..params.aux_out_degree {
                let same = rng.random_bool(params.homophily);
                let want = if same { camp[u] } else { 1 - camp[u] };
                if let Some(v) = pick_alter(&mut rng, &members, want, &taken) {
                    taken.insert(v);
                    g.insert(&ids[u], &ids[v]);
                }
            }
        }
        aux.insert(kind, g);
    }

    Ok(SyntheticCorpus {
        window,
        events,
        posts,
        aux,
        predictions: ExternalPredictions::from_predictions(predictions),
        truth,
    })
}

pub const INTERACTIONS_FILE: &str = "interactions.jsonl";
pub const POSTS_FILE: &str = "posts.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

pub fn aux_file_name(kind: AuxKind) -> String {
    format!("{}.txt", kind.as_str())
}

/// Writes the corpus in the ingest formats plus `ground_truth.json`.
pub fn emit(corpus: &SyntheticCorpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_interactions(&dir.join(INTERACTIONS_FILE), &corpus.events)?;
    save_posts(&dir.join(POSTS_FILE), &corpus.posts)?;
    for g in corpus.aux.values() {
        save_aux_graph(&dir.join(aux_file_name(g.kind)), g)?;
    }
    save_predictions(&dir.join(PREDICTIONS_FILE), corpus.predictions.entries.values())?;
    let path = dir.join(GROUND_TRUTH_FILE);
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(corpus.truth.to_json()?.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::senm::Polarity;

    fn small(seed: u64) -> GeneratorParams {
        GeneratorParams {
            n_users: 80,
            circle_size_targets: vec![2, 5, 15, 30],
            posts_per_user_min: 1,
            posts_per_user_max: 2,
            base_interactions: 30.0,
            seed,
            ..GeneratorParams::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(3)).unwrap();
        assert_eq!(a, generate(&small(3)).unwrap());
        assert_ne!(a.events, generate(&small(4)).unwrap().events);
    }

    #[test]
    fn too_few_users_is_an_error() {
        let p = GeneratorParams {
            n_users: 150,
            ..GeneratorParams::default()
        };
        let err = generate(&p).unwrap_err();
        assert!(err.to_string().contains("at least 151"), "{err}");
    }

    #[test]
    fn invalid_params() {
        for p in [
            GeneratorParams { homophily: 0.4, ..small(1) },
            GeneratorParams { circle_size_targets: vec![5, 5], ..small(1) },
            GeneratorParams { targets: vec![], ..small(1) },
            GeneratorParams { negative_rate_cross: 1.5, ..small(1) },
        ] {
            assert_eq!(generate(&p).unwrap_err().category(), "invalid-param");
        }
    }

    #[test]
    fn unbiased_homophily_mixes_camps() {
        let p = GeneratorParams {
            n_users: 400,
            homophily: 0.5,
            circle_size_targets: vec![2, 5, 15, 50],
            base_interactions: 3.0,
            posts_per_user_min: 0,
            posts_per_user_max: 0,
            ..GeneratorParams::default()
        };
        let c = generate(&p).unwrap();
        let first = &p.targets[0];
        let same = c
            .truth
            .sign_of
            .keys()
            .filter(|(e, a)| {
                c.truth.stance_of[&(e.clone(), first.clone())]
                    == c.truth.stance_of[&(a.clone(), first.clone())]
            })
            .count();
        let total = c.truth.sign_of.len();
        assert!(total >= 10_000);
        let frac = same as f64 / total as f64;
        assert!((frac - 0.5).abs() < 0.05, "{frac}");
    }

    #[test]
    fn negative_fraction_matches_mixture() {
        let p = GeneratorParams {
            n_users: 300,
            homophily: 0.9,
            negative_rate_cross: 0.6,
            negative_rate_same: 0.05,
            circle_size_targets: vec![2, 5, 15, 50],
            base_interactions: 20.0,
            posts_per_user_min: 0,
            posts_per_user_max: 0,
            ..GeneratorParams::default()
        };
        let c = generate(&p).unwrap();
        let lex = Lexicon::builtin();
        let neg = c
            .events
            .iter()
            .filter(|e| score_text(&lex, e.text.as_deref().unwrap()).polarity == Polarity::Negative)
            .count();
        let frac = neg as f64 / c.events.len() as f64;
        let expected = 0.9 * 0.05 + 0.1 * 0.6;
        assert!((expected - 0.105f64).abs() < 1e-12);
        assert!((frac - expected).abs() < 0.02, "{frac}");
    }

    #[test]
    fn tone_texts_score_as_planted() {
        let lex = Lexicon::builtin();
        let pos = lex.tokens_with_sign(true);
        let neg = lex.tokens_with_sign(false);
        let mut rng = rng_for(5, &[]);
        for _ in 0..500 {
            let t = interaction_text(&mut rng, Tone::Negative, &pos, &neg);
            assert_eq!(score_text(&lex, &t).polarity, Polarity::Negative, "{t}");
            let t = interaction_text(&mut rng, Tone::Positive, &pos, &neg);
            assert_eq!(score_text(&lex, &t).polarity, Polarity::Positive, "{t}");
            let t = interaction_text(&mut rng, Tone::Neutral, &pos, &neg);
            assert_eq!(score_text(&lex, &t).polarity, Polarity::Neutral, "{t}");
        }
    }

    #[test]
    fn withheld_text_carries_sentiment() {
        let c = generate(&GeneratorParams {
            withhold_text: true,
            ..small(2)
        })
        .unwrap();
        assert!(c.events.iter().all(|e| e.text.is_none() && e.sentiment.is_some()));
    }

    #[test]
    fn truth_covers_authors_and_edges() {
        let p = small(6);
        let c = generate(&p).unwrap();
        for post in &c.posts {
            assert!(c.truth.stance_of.contains_key(&(post.author_id.clone(), post.target.clone())));
            assert_eq!(c.truth.stance_of[&(post.author_id.clone(), post.target.clone())], post.stance);
        }
        for e in &c.events {
            assert!(c.truth.sign_of.contains_key(&(e.ego.clone(), e.alter.clone())));
            assert!(c.window.contains(e.ts));
        }
        assert_eq!(c.truth.sign_of.len(), p.n_users * 30);
        let back = GroundTruth::from_json(&c.truth.to_json().unwrap()).unwrap();
        assert_eq!(back, c.truth);
    }
}
