//! Data model and ingestion for interaction logs, labelled posts, auxiliary
//! social graphs and external text-model predictions.
//!
//! File formats:
//!
//! * `interactions.jsonl`: one object per line with keys `ego`, `alter`,
//!   `ts`, `kind` and the optional `text` / `sentiment`.
//! * `posts.csv`: header `post_id,author_id,target,stance,ts,text`, text
//!   always quoted. A `.jsonl` file with the same keys is accepted too.
//! * aux graphs: one whitespace-separated `user other` pair per line.
//! * `predictions.csv`: header `post_id,label,confidence`.
//!
//! Blank lines are ignored everywhere and do not count towards line totals.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type UserId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stance {
    Favor,
    Against,
}

impl Stance {
    pub const ALL: [Stance; 2] = [Stance::Favor, Stance::Against];

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Favor => "FAVOR",
            Stance::Against => "AGAINST",
        }
    }

    /// Class index used by the classifier output layer.
    pub fn index(self) -> usize {
        match self {
            Stance::Favor => 0,
            Stance::Against => 1,
        }
    }

    pub fn from_index(i: usize) -> Stance {
        if i == 0 {
            Stance::Favor
        } else {
            Stance::Against
        }
    }

    pub fn flip(self) -> Stance {
        match self {
            Stance::Favor => Stance::Against,
            Stance::Against => Stance::Favor,
        }
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("favor") {
            Ok(Stance::Favor)
        } else if t.eq_ignore_ascii_case("against") {
            Ok(Stance::Against)
        } else {
            Err(Error::UnknownStance(s.to_string()))
        }
    }
}

impl Serialize for Stance {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Stance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionKind {
    Reply,
    Mention,
    Other,
}

impl InteractionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InteractionKind::Reply => "reply",
            InteractionKind::Mention => "mention",
            InteractionKind::Other => "other",
        }
    }
}

impl FromStr for InteractionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reply" => Ok(InteractionKind::Reply),
            "mention" => Ok(InteractionKind::Mention),
            "other" => Ok(InteractionKind::Other),
            _ => Err(Error::InvalidParam(format!("unknown interaction kind {s:?}"))),
        }
    }
}

/// One directed communication from `ego` to `alter`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub ego: UserId,
    pub alter: UserId,
    pub ts: i64,
    pub kind: InteractionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Precomputed compound score in [-1, 1].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment: Option<f64>,
}

impl InteractionEvent {
    pub fn is_scorable(&self) -> bool {
        self.text.is_some() || self.sentiment.is_some()
    }
}

/// Half-open interval `[start, end)` of UTC seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub start: i64,
    pub end: i64,
}

impl ObservationWindow {
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if start >= end {
            return Err(Error::InvalidParam(format!(
                "observation window start {start} must precede end {end}"
            )));
        }
        Ok(ObservationWindow { start, end })
    }

    /// Window accepting every representable timestamp.
    pub fn unbounded() -> Self {
        ObservationWindow {
            start: i64::MIN,
            end: i64::MAX,
        }
    }

    /// Smallest window containing all events, or `None` for an empty slice.
    pub fn spanning(events: &[InteractionEvent]) -> Option<Self> {
        let lo = events.iter().map(|e| e.ts).min()?;
        let hi = events.iter().map(|e| e.ts).max()?;
        Some(ObservationWindow {
            start: lo,
            end: hi.saturating_add(1),
        })
    }

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.start && ts < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    OutsideWindow,
    SelfInteraction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based physical line number.
    pub line: usize,
    pub reason: RejectReason,
}

/// Result of ingesting a line-oriented file.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingest<T> {
    pub items: Vec<T>,
    pub rejects: Vec<Rejection>,
    pub total_lines: usize,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn load_interactions(path: &Path, window: ObservationWindow) -> Result<Ingest<InteractionEvent>> {
    read_interactions(open(path)?, &path.display().to_string(), window)
}

pub fn read_interactions<R: BufRead>(
    reader: R,
    source: &str,
    window: ObservationWindow,
) -> Result<Ingest<InteractionEvent>> {
    let mut out = Ingest {
        items: Vec::new(),
        rejects: Vec::new(),
        total_lines: 0,
    };
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.total_lines += 1;
        let event: InteractionEvent = serde_json::from_str(&line)
            .map_err(|e| Error::parse(source, lineno, e.to_string()))?;
        if let Some(s) = event.sentiment {
            if !(-1.0..=1.0).contains(&s) {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!("sentiment {s} outside [-1, 1]"),
                ));
            }
        }
        if event.ego.is_empty() || event.alter.is_empty() {
            return Err(Error::parse(source, lineno, "empty user id"));
        }
        if event.ego == event.alter {
            log::debug!("{source}:{lineno}: self-interaction rejected");
            out.rejects.push(Rejection {
                line: lineno,
                reason: RejectReason::SelfInteraction,
            });
        } else if !window.contains(event.ts) {
            log::debug!("{source}:{lineno}: timestamp {} outside window", event.ts);
            out.rejects.push(Rejection {
                line: lineno,
                reason: RejectReason::OutsideWindow,
            });
        } else {
            out.items.push(event);
        }
    }
    Ok(out)
}

pub fn write_interactions<W: Write>(mut w: W, events: &[InteractionEvent]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn save_interactions(path: &Path, events: &[InteractionEvent]) -> Result<()> {
    let mut w = create(path)?;
    write_interactions(&mut w, events)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// A labelled text about a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub author_id: UserId,
    pub target: String,
    pub stance: Stance,
    pub ts: i64,
    pub text: String,
}

pub const POSTS_HEADER: [&str; 6] = ["post_id", "author_id", "target", "stance", "ts", "text"];

/// Loads `posts.csv`, or the JSON-lines variant when the extension is `.jsonl`.
pub fn load_posts(path: &Path) -> Result<Vec<Post>> {
    let name = path.display().to_string();
    let posts = if path.extension().is_some_and(|e| e == "jsonl") {
        read_posts_jsonl(open(path)?, &name)?
    } else {
        read_posts_csv(open(path)?, &name)?
    };
    Ok(posts)
}

fn check_post(post: &Post, seen: &mut HashSet<String>, source: &str, line: usize) -> Result<()> {
    if post.post_id.is_empty() {
        return Err(Error::parse(source, line, "empty post_id"));
    }
    if post.target.trim().is_empty() {
        return Err(Error::parse(source, line, "empty target"));
    }
    if !seen.insert(post.post_id.clone()) {
        return Err(Error::parse(
            source,
            line,
            format!("duplicate post_id {:?}", post.post_id),
        ));
    }
    Ok(())
}

pub fn read_posts_csv<R: std::io::Read>(reader: R, source: &str) -> Result<Vec<Post>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::parse(source, 1, format!("missing column {name:?}")))
    };
    let idx = [
        col("post_id")?,
        col("author_id")?,
        col("target")?,
        col("stance")?,
        col("ts")?,
        col("text")?,
    ];
    let mut seen = HashSet::new();
    let mut posts = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| record.get(idx[i]).unwrap_or("");
        let stance: Stance = field(3)
            .parse()
            .map_err(|e: Error| e.context(format!("{source}:{line}")))?;
        let ts: i64 = field(4)
            .trim()
            .parse()
            .map_err(|_| Error::parse(source, line, format!("bad timestamp {:?}", field(4))))?;
        let post = Post {
            post_id: field(0).to_string(),
            author_id: field(1).to_string(),
            target: field(2).to_string(),
            stance,
            ts,
            text: field(5).to_string(),
        };
        check_post(&post, &mut seen, source, line)?;
        posts.push(post);
    }
    Ok(posts)
}

pub fn read_posts_jsonl<R: BufRead>(reader: R, source: &str) -> Result<Vec<Post>> {
    let mut seen = HashSet::new();
    let mut posts = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        // Surface a bad stance as its own error rather than a generic parse failure.
        if let Some(s) = value.get("stance").and_then(|s| s.as_str()) {
            s.parse::<Stance>()
                .map_err(|e| e.context(format!("{source}:{}", i + 1)))?;
        }
        let post: Post =
            serde_json::from_value(value).map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        check_post(&post, &mut seen, source, i + 1)?;
        posts.push(post);
    }
    Ok(posts)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        quoted(s)
    } else {
        s.to_string()
    }
}

fn quoted(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

pub fn write_posts_csv<W: Write>(mut w: W, posts: &[Post]) -> Result<()> {
    let io = |e| Error::io("<writer>", e);
    writeln!(w, "{}", POSTS_HEADER.join(",")).map_err(io)?;
    for p in posts {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            csv_field(&p.post_id),
            csv_field(&p.author_id),
            csv_field(&p.target),
            p.stance,
            p.ts,
            quoted(&p.text)
        )
        .map_err(io)?;
    }
    Ok(())
}

pub fn save_posts(path: &Path, posts: &[Post]) -> Result<()> {
    let mut w = create(path)?;
    write_posts_csv(&mut w, posts)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxKind {
    Likes,
    Followers,
    Friends,
}

impl AuxKind {
    pub const ALL: [AuxKind; 3] = [AuxKind::Likes, AuxKind::Followers, AuxKind::Friends];

    pub fn as_str(self) -> &'static str {
        match self {
            AuxKind::Likes => "likes",
            AuxKind::Followers => "followers",
            AuxKind::Friends => "friends",
        }
    }
}

impl FromStr for AuxKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "likes" => Ok(AuxKind::Likes),
            "followers" => Ok(AuxKind::Followers),
            "friends" => Ok(AuxKind::Friends),
            _ => Err(Error::InvalidParam(format!("unknown aux graph kind {s:?}"))),
        }
    }
}

/// Likes, followers or friends edges; `(user, other)` pairs without self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuxGraph {
    pub kind: AuxKind,
    pub edges: BTreeSet<(UserId, UserId)>,
}

impl AuxGraph {
    pub fn new(kind: AuxKind) -> Self {
        AuxGraph {
            kind,
            edges: BTreeSet::new(),
        }
    }

    /// Inserts an edge; self-loops are refused and reported as `false`.
    pub fn insert(&mut self, a: &str, b: &str) -> bool {
        if a == b {
            return false;
        }
        self.edges.insert((a.to_string(), b.to_string()));
        true
    }

    pub fn users(&self) -> BTreeSet<&str> {
        self.edges
            .iter()
            .flat_map(|(a, b)| [a.as_str(), b.as_str()])
            .collect()
    }
}

pub fn load_aux_graph(path: &Path, kind: AuxKind) -> Result<AuxGraph> {
    read_aux_graph(open(path)?, &path.display().to_string(), kind)
}

pub fn read_aux_graph<R: BufRead>(reader: R, source: &str, kind: AuxKind) -> Result<AuxGraph> {
    let mut graph = AuxGraph::new(kind);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        let mut parts = line.split_whitespace();
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (None, _, _) => continue,
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(Error::parse(source, i + 1, "expected two user ids")),
        };
        if !graph.insert(a, b) {
            log::warn!("{source}:{}: self-loop on {a} dropped", i + 1);
        }
    }
    Ok(graph)
}

pub fn save_aux_graph(path: &Path, graph: &AuxGraph) -> Result<()> {
    let mut w = create(path)?;
    for (a, b) in &graph.edges {
        writeln!(w, "{a} {b}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A stance prediction for one post, as produced by any branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub post_id: String,
    pub label: Stance,
    pub confidence: f64,
}

/// Predictions from a model run outside this crate (the text branch).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExternalPredictions {
    pub entries: BTreeMap<String, Prediction>,
}

impl ExternalPredictions {
    pub fn get(&self, post_id: &str) -> Option<&Prediction> {
        self.entries.get(post_id)
    }

    pub fn from_predictions(preds: impl IntoIterator<Item = Prediction>) -> Self {
        ExternalPredictions {
            entries: preds.into_iter().map(|p| (p.post_id.clone(), p)).collect(),
        }
    }
}

pub fn load_predictions(path: &Path) -> Result<ExternalPredictions> {
    read_predictions(open(path)?, &path.display().to_string())
}

pub fn read_predictions<R: std::io::Read>(reader: R, source: &str) -> Result<ExternalPredictions> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["post_id", "label", "confidence"];
    if headers.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::parse(
            source,
            1,
            format!("expected header {}", expected.join(",")),
        ));
    }
    let mut out = ExternalPredictions::default();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let label: Stance = record[1]
            .parse()
            .map_err(|e: Error| e.context(format!("{source}:{line}")))?;
        let confidence: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(source, line, format!("bad confidence {:?}", &record[2])))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::parse(
                source,
                line,
                format!("confidence {confidence} outside [0, 1]"),
            ));
        }
        let post_id = record[0].to_string();
        if out.entries.contains_key(&post_id) {
            return Err(Error::parse(source, line, format!("duplicate post_id {post_id:?}")));
        }
        out.entries.insert(
            post_id.clone(),
            Prediction {
                post_id,
                label,
                confidence,
            },
        );
    }
    Ok(out)
}

pub fn write_predictions<'a, W: Write>(
    mut w: W,
    preds: impl IntoIterator<Item = &'a Prediction>,
) -> Result<()> {
    let io = |e| Error::io("<writer>", e);
    writeln!(w, "post_id,label,confidence").map_err(io)?;
    for p in preds {
        writeln!(w, "{},{},{}", csv_field(&p.post_id), p.label, p.confidence).map_err(io)?;
    }
    Ok(())
}

pub fn save_predictions<'a>(
    path: &Path,
    preds: impl IntoIterator<Item = &'a Prediction>,
) -> Result<()> {
    let mut w = create(path)?;
    write_predictions(&mut w, preds)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Advisory consistency report over a loaded corpus.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    /// Post authors that appear in no interaction at all; these users get a
    /// zero vector from every interaction-derived feature.
    pub coverage_gaps: BTreeSet<UserId>,
    /// Prediction post ids with no matching post.
    pub unknown_prediction_posts: BTreeSet<String>,
    /// Aux-graph users never seen in the interaction log.
    pub aux_users_unseen: BTreeMap<AuxKind, BTreeSet<UserId>>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.coverage_gaps.is_empty()
            && self.unknown_prediction_posts.is_empty()
            && self.aux_users_unseen.values().all(BTreeSet::is_empty)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return writeln!(f, "corpus consistent");
        }
        writeln!(f, "embedding-coverage gaps: {}", self.coverage_gaps.len())?;
        for u in &self.coverage_gaps {
            writeln!(f, "  {u}")?;
        }
        writeln!(
            f,
            "predictions for unknown posts: {}",
            self.unknown_prediction_posts.len()
        )?;
        for p in &self.unknown_prediction_posts {
            writeln!(f, "  {p}")?;
        }
        for (kind, users) in &self.aux_users_unseen {
            writeln!(f, "{} users unseen in interactions: {}", kind.as_str(), users.len())?;
        }
        Ok(())
    }
}

pub fn validate_corpus(
    events: &[InteractionEvent],
    posts: &[Post],
    aux_graphs: &[AuxGraph],
    predictions: Option<&ExternalPredictions>,
) -> ValidationReport {
    let seen: HashSet<&str> = events
        .iter()
        .flat_map(|e| [e.ego.as_str(), e.alter.as_str()])
        .collect();
    let post_ids: HashSet<&str> = posts.iter().map(|p| p.post_id.as_str()).collect();

    let coverage_gaps = posts
        .iter()
        .map(|p| p.author_id.as_str())
        .filter(|a| !seen.contains(a))
        .map(str::to_string)
        .collect();
    let unknown_prediction_posts = predictions
        .map(|preds| {
            preds
                .entries
                .keys()
                .filter(|id| !post_ids.contains(id.as_str()))
                .cloned()
                .collect()
        })
        .unwrap_or_default();
    let mut aux_users_unseen = BTreeMap::new();
    for g in aux_graphs {
        let missing: BTreeSet<UserId> = g
            .users()
            .into_iter()
            .filter(|u| !seen.contains(u))
            .map(str::to_string)
            .collect();
        if !missing.is_empty() {
            aux_users_unseen
                .entry(g.kind)
                .or_insert_with(BTreeSet::new)
                .extend(missing);
        }
    }
    ValidationReport {
        coverage_gaps,
        unknown_prediction_posts,
        aux_users_unseen,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn window() -> ObservationWindow {
        ObservationWindow::new(1000, 2000).unwrap()
    }

    #[test]
    fn three_valid_lines() {
        let data = r#"{"ego":"a","alter":"b","ts":1000,"kind":"reply"}
{"ego":"a","alter":"c","ts":1500,"kind":"mention","text":"hi there"}
{"ego":"b","alter":"a","ts":1999,"kind":"other","sentiment":-0.25}
"#;
        let ingest = read_interactions(data.as_bytes(), "t", window()).unwrap();
        assert_eq!(ingest.items.len(), 3);
        assert!(ingest.rejects.is_empty());
        assert_eq!(ingest.total_lines, 3);
        assert_eq!(ingest.items[1].text.as_deref(), Some("hi there"));
        assert_eq!(ingest.items[2].sentiment, Some(-0.25));
    }

    #[test]
    fn out_of_window_and_self_loops_are_rejected() {
        let data = r#"{"ego":"a","alter":"b","ts":999,"kind":"reply"}
{"ego":"a","alter":"a","ts":1500,"kind":"reply"}

{"ego":"a","alter":"b","ts":1500,"kind":"reply"}
{"ego":"a","alter":"b","ts":2000,"kind":"reply"}
"#;
        let ingest = read_interactions(data.as_bytes(), "t", window()).unwrap();
        assert_eq!(ingest.items.len(), 1);
        assert_eq!(
            ingest.rejects,
            vec![
                Rejection {
                    line: 1,
                    reason: RejectReason::OutsideWindow
                },
                Rejection {
                    line: 2,
                    reason: RejectReason::SelfInteraction
                },
                Rejection {
                    line: 5,
                    reason: RejectReason::OutsideWindow
                },
            ]
        );
        assert_eq!(ingest.items.len() + ingest.rejects.len(), ingest.total_lines);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let data = "{\"ego\":\"a\",\"alter\":\"b\",\"ts\":1500,\"kind\":\"reply\"}\n{not json\n";
        match read_interactions(data.as_bytes(), "log", window()) {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(path, "log");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_sentiment_is_malformed() {
        let data = r#"{"ego":"a","alter":"b","ts":1500,"kind":"reply","sentiment":1.5}"#;
        assert!(read_interactions(data.as_bytes(), "t", window()).is_err());
    }

    #[test]
    fn stance_parsing() {
        assert_eq!("FAVOR".parse::<Stance>().unwrap(), Stance::Favor);
        assert_eq!("against".parse::<Stance>().unwrap(), Stance::Against);
        let err = "NONE".parse::<Stance>().unwrap_err();
        assert_eq!(err.to_string(), "unknown stance \"NONE\"");
    }

    #[test]
    fn posts_csv_reads_stances_case_insensitively() {
        let data = "post_id,author_id,target,stance,ts,text\n\
                    p1,u1,Biden,FAVOR,10,\"go, joe\"\n\
                    p2,u2,Trump,against,11,\"no \"\"way\"\"\"\n";
        let posts = read_posts_csv(data.as_bytes(), "posts.csv").unwrap();
        assert_eq!(posts[0].stance, Stance::Favor);
        assert_eq!(posts[0].text, "go, joe");
        assert_eq!(posts[1].stance, Stance::Against);
        assert_eq!(posts[1].text, "no \"way\"");

        let mut out = Vec::new();
        write_posts_csv(&mut out, &posts).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), data.replace("against", "AGAINST"));
    }

    #[test]
    fn unknown_stance_in_posts_is_hard_error() {
        let data = "post_id,author_id,target,stance,ts,text\np1,u1,Biden,NONE,10,\"x\"\n";
        let err = read_posts_csv(data.as_bytes(), "posts.csv").unwrap_err();
        assert_eq!(err.category(), "unknown-stance");
        assert!(err.to_string().contains("NONE"));
    }

    #[test]
    fn posts_jsonl() {
        let data = r#"{"post_id":"p1","author_id":"u1","target":"A","stance":"Favor","ts":3,"text":"t"}"#;
        let posts = read_posts_jsonl(data.as_bytes(), "p").unwrap();
        assert_eq!(posts[0].stance, Stance::Favor);
        let bad = r#"{"post_id":"p1","author_id":"u1","target":"A","stance":"meh","ts":3,"text":"t"}"#;
        assert_eq!(
            read_posts_jsonl(bad.as_bytes(), "p").unwrap_err().category(),
            "unknown-stance"
        );
    }

    #[test]
    fn empty_target_rejected() {
        let data = "post_id,author_id,target,stance,ts,text\np1,u1,,FAVOR,10,\"x\"\n";
        assert!(read_posts_csv(data.as_bytes(), "p").is_err());
    }

    #[test]
    fn aux_graph_drops_self_loops() {
        let data = "a b\nb b\n\nc\ta\n";
        let g = read_aux_graph(data.as_bytes(), "likes", AuxKind::Likes).unwrap();
        assert_eq!(g.edges.len(), 2);
        assert!(read_aux_graph("a b c\n".as_bytes(), "x", AuxKind::Likes).is_err());
    }

    #[test]
    fn predictions_validate_range_and_header() {
        let ok = "post_id,label,confidence\np1,FAVOR,0.8\np2,against,0.55\n";
        let preds = read_predictions(ok.as_bytes(), "p").unwrap();
        assert_eq!(preds.get("p2").unwrap().label, Stance::Against);
        assert!(read_predictions("post_id,label,confidence\np1,FAVOR,1.2\n".as_bytes(), "p").is_err());
        assert!(read_predictions("id,label,confidence\n".as_bytes(), "p").is_err());
    }

    fn sample_corpus() -> (Vec<InteractionEvent>, Vec<Post>, Vec<AuxGraph>, ExternalPredictions) {
        let ev = |a: &str, b: &str| InteractionEvent {
            ego: a.into(),
            alter: b.into(),
            ts: 1500,
            kind: InteractionKind::Reply,
            text: None,
            sentiment: None,
        };
        let events = vec![ev("u1", "u2"), ev("u2", "u3")];
        let post = |id: &str, author: &str| Post {
            post_id: id.into(),
            author_id: author.into(),
            target: "A".into(),
            stance: Stance::Favor,
            ts: 1,
            text: String::new(),
        };
        let posts = vec![post("p1", "u1"), post("p2", "u3")];
        let mut likes = AuxGraph::new(AuxKind::Likes);
        likes.insert("u1", "u3");
        let preds = ExternalPredictions::from_predictions([Prediction {
            post_id: "p1".into(),
            label: Stance::Favor,
            confidence: 0.9,
        }]);
        (events, posts, vec![likes], preds)
    }

    #[test]
    fn consistent_corpus_has_empty_report() {
        let (events, posts, aux, preds) = sample_corpus();
        let report = validate_corpus(&events, &posts, &aux, Some(&preds));
        assert!(report.is_empty(), "{report}");
    }

    #[test]
    fn report_names_unknown_prediction_and_coverage_gap() {
        let (events, mut posts, mut aux, mut preds) = sample_corpus();
        preds.entries.insert(
            "ghost".into(),
            Prediction {
                post_id: "ghost".into(),
                label: Stance::Against,
                confidence: 0.7,
            },
        );
        posts.push(Post {
            post_id: "p3".into(),
            author_id: "lurker".into(),
            target: "A".into(),
            stance: Stance::Against,
            ts: 2,
            text: String::new(),
        });
        aux[0].insert("u1", "stranger");
        let report = validate_corpus(&events, &posts, &aux, Some(&preds));

        // Set-difference oracle: authors minus interaction participants.
        let participants: BTreeSet<&str> = events
            .iter()
            .flat_map(|e| [e.ego.as_str(), e.alter.as_str()])
            .collect();
        let expected: BTreeSet<String> = posts
            .iter()
            .map(|p| p.author_id.as_str())
            .collect::<BTreeSet<_>>()
            .difference(&participants)
            .map(|s| s.to_string())
            .collect();
        assert_eq!(report.coverage_gaps, expected);
        assert_eq!(
            report.unknown_prediction_posts,
            BTreeSet::from(["ghost".to_string()])
        );
        assert_eq!(
            report.aux_users_unseen[&AuxKind::Likes],
            BTreeSet::from(["stranger".to_string()])
        );
        // Pure: a second call gives the same report.
        assert_eq!(report, validate_corpus(&events, &posts, &aux, Some(&preds)));
    }

    fn arb_event() -> impl Strategy<Value = InteractionEvent> {
        (
            "[a-z]{1,4}",
            "[A-Z]{1,4}",
            1000i64..2000,
            prop_oneof![
                Just(InteractionKind::Reply),
                Just(InteractionKind::Mention),
                Just(InteractionKind::Other)
            ],
            proptest::option::of("[ -~]{0,20}"),
            proptest::option::of(-1.0f64..=1.0),
        )
            .prop_map(|(ego, alter, ts, kind, text, sentiment)| InteractionEvent {
                ego,
                alter,
                ts,
                kind,
                text,
                sentiment,
            })
    }

    proptest! {
        #[test]
        fn interactions_round_trip(events in proptest::collection::vec(arb_event(), 0..20)) {
            let mut buf = Vec::new();
            write_interactions(&mut buf, &events).unwrap();
            let back = read_interactions(buf.as_slice(), "t", window()).unwrap();
            prop_assert_eq!(&back.items, &events);
            let mut again = Vec::new();
            write_interactions(&mut again, &back.items).unwrap();
            prop_assert_eq!(again, buf);
        }

        #[test]
        fn accepted_plus_rejected_is_total(
            events in proptest::collection::vec(arb_event(), 0..30),
            start in 900i64..1500,
            len in 1i64..800,
        ) {
            let mut buf = Vec::new();
            write_interactions(&mut buf, &events).unwrap();
            let w = ObservationWindow::new(start, start + len).unwrap();
            let ingest = read_interactions(buf.as_slice(), "t", w).unwrap();
            prop_assert_eq!(ingest.items.len() + ingest.rejects.len(), ingest.total_lines);
            prop_assert_eq!(ingest.total_lines, events.len());
        }
    }
}
