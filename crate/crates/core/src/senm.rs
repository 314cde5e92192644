//! Lexicon sentiment scoring and relationship signing.
//!
//! The scorer follows the usual VADER conventions: negation scales a valence
//! by -0.74, boosters and all-caps emphasis push it away from zero, each
//! exclamation mark (up to three) adds 0.292 to the magnitude of the sum,
//! and the sum is squashed with `s / sqrt(s^2 + 15)`. Emoji, idioms and
//! the full degree-adverb tables are not modelled.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{InteractionEvent, InteractionKind, UserId};
use crate::enm::EgoNetwork;
use crate::error::{Error, Result};

pub const NEGATION_SCALAR: f64 = -0.74;
pub const CAPS_INCREMENT: f64 = 0.733;
pub const EXCLAMATION_INCREMENT: f64 = 0.292;
pub const MAX_EXCLAMATIONS: usize = 3;
pub const NORMALIZATION_ALPHA: f64 = 15.0;
pub const POLARITY_BAND: f64 = 0.05;
/// Negative-interaction ratio above which a relationship is negative.
pub const NEGATIVE_RATIO_THRESHOLD: f64 = 0.17;
const NEGATION_LOOKBACK: usize = 3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Lexicon {
    pub valence: HashMap<String, f64>,
    pub negators: HashSet<String>,
    pub boosters: HashMap<String, f64>,
}

const BUILTIN_VALENCE: &[(&str, f64)] = &[
    ("good", 1.9),
    ("great", 3.1),
    ("love", 3.2),
    ("happy", 2.7),
    ("nice", 1.8),
    ("excellent", 2.7),
    ("best", 3.2),
    ("support", 1.7),
    ("agree", 1.5),
    ("thanks", 1.9),
    ("proud", 2.1),
    ("hope", 1.9),
    ("win", 2.8),
    ("strong", 2.3),
    ("honest", 2.3),
    ("bad", -2.5),
    ("terrible", -2.1),
    ("hate", -2.7),
    ("awful", -2.0),
    ("wrong", -2.1),
    ("stupid", -2.4),
    ("liar", -3.1),
    ("corrupt", -3.0),
    ("disgusting", -2.4),
    ("worst", -3.1),
    ("fail", -2.5),
    ("angry", -2.3),
    ("sad", -2.1),
    ("shame", -2.1),
    ("fake", -2.1),
    ("disaster", -3.1),
    ("weak", -1.9),
];

const BUILTIN_NEGATORS: &[&str] = &[
    "not", "no", "never", "dont", "don't", "isnt", "isn't", "cannot", "can't", "wont", "won't",
    "without", "nothing",
];

const BUILTIN_BOOSTERS: &[(&str, f64)] = &[
    ("very", 0.293),
    ("really", 0.293),
    ("extremely", 0.293),
    ("so", 0.293),
    ("totally", 0.293),
    ("slightly", -0.293),
    ("barely", -0.293),
];

impl Lexicon {
    /// Small built-in lexicon shared by tests and the synthetic generator.
    pub fn builtin() -> Self {
        Lexicon {
            valence: BUILTIN_VALENCE
                .iter()
                .map(|(t, v)| (t.to_string(), *v))
                .collect(),
            negators: BUILTIN_NEGATORS.iter().map(|t| t.to_string()).collect(),
            boosters: BUILTIN_BOOSTERS
                .iter()
                .map(|(t, v)| (t.to_string(), *v))
                .collect(),
        }
    }

    /// Tokens with positive (or negative) valence, sorted.
    pub fn tokens_with_sign(&self, positive: bool) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .valence
            .iter()
            .filter(|(_, &v)| if positive { v > 0.0 } else { v < 0.0 })
            .map(|(t, _)| t.as_str())
            .collect();
        out.sort_unstable();
        out
    }

    /// Parses `lexicon.tsv`: `token<TAB>valence` lines, with `#negator` and
    /// `#booster` switching sections (`#valence` switches back). Other lines
    /// starting with `#` are comments.
    pub fn read<R: BufRead>(reader: R, source: &str) -> Result<Self> {
        enum Section {
            Valence,
            Negator,
            Booster,
        }
        let mut lex = Lexicon::default();
        let mut section = Section::Valence;
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            match t {
                "#valence" => section = Section::Valence,
                "#negator" | "#negators" => section = Section::Negator,
                "#booster" | "#boosters" => section = Section::Booster,
                _ if t.starts_with('#') => {}
                _ => {
                    let mut parts = t.split('\t');
                    let token = parts.next().unwrap_or("").trim().to_lowercase();
                    let value = parts.next().map(str::trim);
                    let parse_value = |v: Option<&str>| -> Result<f64> {
                        v.and_then(|v| v.parse::<f64>().ok())
                            .ok_or_else(|| Error::parse(source, i + 1, "expected token<TAB>number"))
                    };
                    match section {
                        Section::Negator => {
                            lex.negators.insert(token);
                        }
                        Section::Booster => {
                            lex.boosters.insert(token, parse_value(value)?);
                        }
                        Section::Valence => {
                            let v = parse_value(value)?;
                            if !(-4.0..=4.0).contains(&v) {
                                return Err(Error::parse(
                                    source,
                                    i + 1,
                                    format!("valence {v} outside [-4, 4]"),
                                ));
                            }
                            lex.valence.insert(token, v);
                        }
                    }
                }
            }
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f), &path.display().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Neutral,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentimentScore {
    pub compound: f64,
    pub polarity: Polarity,
}

impl SentimentScore {
    pub fn from_compound(compound: f64) -> Self {
        let polarity = if compound >= POLARITY_BAND {
            Polarity::Positive
        } else if compound <= -POLARITY_BAND {
            Polarity::Negative
        } else {
            Polarity::Neutral
        };
        SentimentScore { compound, polarity }
    }
}

pub fn normalize(sum: f64) -> f64 {
    sum / (sum * sum + NORMALIZATION_ALPHA).sqrt()
}

fn tokens(text: &str) -> Vec<&str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|t| t.trim_matches('\''))
        .filter(|t| !t.is_empty())
        .collect()
}

fn is_shouting(token: &str) -> bool {
    token.chars().any(char::is_alphabetic) && !token.chars().any(char::is_lowercase)
}

pub fn score_text(lexicon: &Lexicon, text: &str) -> SentimentScore {
    let raw = tokens(text);
    let lower: Vec<String> = raw.iter().map(|t| t.to_lowercase()).collect();
    let mixed_case = raw.iter().any(|t| t.chars().any(char::is_lowercase));

    let mut sum = 0.0;
    for (i, token) in lower.iter().enumerate() {
        let Some(&base) = lexicon.valence.get(token) else {
            continue;
        };
        if base == 0.0 {
            continue;
        }
        let sign = base.signum();
        let mut v = base;
        if mixed_case && is_shouting(raw[i]) {
            v += sign * CAPS_INCREMENT;
        }
        if i > 0 {
            if let Some(b) = lexicon.boosters.get(&lower[i - 1]) {
                v += sign * b;
            }
        }
        let negated = lower[i.saturating_sub(NEGATION_LOOKBACK)..i]
            .iter()
            .any(|t| lexicon.negators.contains(t));
        if negated {
            v *= NEGATION_SCALAR;
        }
        sum += v;
    }
    if sum != 0.0 {
        let bangs = text.chars().filter(|&c| c == '!').count().min(MAX_EXCLAMATIONS);
        sum += sum.signum() * EXCLAMATION_INCREMENT * bangs as f64;
    }
    SentimentScore::from_compound(normalize(sum))
}

/// Precomputed sentiment wins over text.
pub fn score_event(event: &InteractionEvent, lexicon: &Lexicon) -> Result<SentimentScore> {
    match (&event.sentiment, &event.text) {
        (Some(s), _) => Ok(SentimentScore::from_compound(*s)),
        (None, Some(t)) => Ok(score_text(lexicon, t)),
        (None, None) => Err(Error::UnscorableEvent {
            ego: event.ego.clone(),
            alter: event.alter.clone(),
            ts: event.ts,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Positive => "positive",
            Sign::Negative => "negative",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignParams {
    pub threshold: f64,
    /// Count neutral interactions in the ratio's denominator.
    pub include_neutral: bool,
    pub kinds: std::collections::BTreeSet<InteractionKind>,
}

impl Default for SignParams {
    fn default() -> Self {
        SignParams {
            threshold: NEGATIVE_RATIO_THRESHOLD,
            include_neutral: true,
            kinds: crate::enm::EnmParams::default().kinds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelationshipSign {
    pub sign: Sign,
    pub n_scored: usize,
    pub n_negative: usize,
}

/// Negative iff `n_negative / n_scored` strictly exceeds the threshold.
///
/// With `include_neutral == false` neutral scores leave the denominator; a
/// relationship made only of neutral interactions is then positive.
pub fn sign_relationship(scores: &[SentimentScore], params: &SignParams) -> Result<RelationshipSign> {
    if scores.is_empty() {
        return Err(Error::InvalidInput(
            "cannot sign a relationship without scored interactions".into(),
        ));
    }
    let n_negative = scores
        .iter()
        .filter(|s| s.polarity == Polarity::Negative)
        .count();
    let n_scored = if params.include_neutral {
        scores.len()
    } else {
        scores
            .iter()
            .filter(|s| s.polarity != Polarity::Neutral)
            .count()
    };
    let negative = n_scored > 0 && (n_negative as f64 / n_scored as f64) > params.threshold;
    Ok(RelationshipSign {
        sign: if negative { Sign::Negative } else { Sign::Positive },
        n_scored,
        n_negative,
    })
}

/// Ego network with a polarity per alter.
///
/// Serialises as one line of `signed_networks.jsonl`: the ego-network keys
/// plus `signs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedEgoNetwork {
    #[serde(flatten)]
    pub base: EgoNetwork,
    pub signs: BTreeMap<UserId, Sign>,
}

/// Signs every alter with at least one ego-to-alter interaction of an
/// included kind. Alters without one are left out of `signs`; an included
/// event with neither text nor sentiment is an error.
pub fn sign_ego_network(
    network: &EgoNetwork,
    events: &[InteractionEvent],
    lexicon: &Lexicon,
    params: &SignParams,
) -> Result<SignedEgoNetwork> {
    let refs: Vec<&InteractionEvent> = events.iter().filter(|e| e.ego == network.ego).collect();
    sign_from_refs(network, &refs, lexicon, params)
}

fn sign_from_refs(
    network: &EgoNetwork,
    ego_events: &[&InteractionEvent],
    lexicon: &Lexicon,
    params: &SignParams,
) -> Result<SignedEgoNetwork> {
    let mut by_alter: BTreeMap<&str, Vec<SentimentScore>> = BTreeMap::new();
    for e in ego_events {
        if e.ego != network.ego
            || !params.kinds.contains(&e.kind)
            || !network.frequencies.contains_key(&e.alter)
        {
            continue;
        }
        by_alter.entry(&e.alter).or_default().push(score_event(e, lexicon)?);
    }
    let mut signs = BTreeMap::new();
    for (alter, scores) in by_alter {
        signs.insert(alter.to_string(), sign_relationship(&scores, params)?.sign);
    }
    Ok(SignedEgoNetwork {
        base: network.clone(),
        signs,
    })
}

/// Signs many networks, grouping the log by ego once.
pub fn sign_all(
    networks: &[EgoNetwork],
    events: &[InteractionEvent],
    lexicon: &Lexicon,
    params: &SignParams,
) -> Result<Vec<SignedEgoNetwork>> {
    use rayon::prelude::*;
    let mut by_ego: HashMap<&str, Vec<&InteractionEvent>> = HashMap::new();
    for e in events {
        by_ego.entry(e.ego.as_str()).or_default().push(e);
    }
    networks
        .par_iter()
        .map(|n| {
            let evs = by_ego.get(n.ego.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            sign_from_refs(n, evs, lexicon, params)
        })
        .collect()
}

pub fn write_signed_networks<W: Write>(mut w: W, networks: &[SignedEgoNetwork]) -> Result<()> {
    for n in networks {
        serde_json::to_writer(&mut w, n)?;
        w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn read_signed_networks<R: BufRead>(reader: R, source: &str) -> Result<Vec<SignedEgoNetwork>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let n: SignedEgoNetwork =
            serde_json::from_str(&line).map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        n.base
            .check_invariants()
            .map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        if let Some(a) = n.signs.keys().find(|a| !n.base.frequencies.contains_key(*a)) {
            return Err(Error::parse(source, i + 1, format!("sign for unknown alter {a}")));
        }
        out.push(n);
    }
    Ok(out)
}

pub fn save_signed_networks(path: &Path, networks: &[SignedEgoNetwork]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_signed_networks(&mut w, networks)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_signed_networks(path: &Path) -> Result<Vec<SignedEgoNetwork>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_signed_networks(std::io::BufReader::new(f), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex() -> Lexicon {
        Lexicon::builtin()
    }

    #[test]
    fn empty_and_unknown_text_is_neutral() {
        for t in ["", "the debate tonight", "!!!"] {
            let s = score_text(&lex(), t);
            assert_eq!(s.compound, 0.0);
            assert_eq!(s.polarity, Polarity::Neutral);
        }
    }

    #[test]
    fn single_word_normalization() {
        let s = score_text(&lex(), "good");
        let expected = 1.9 / (1.9f64 * 1.9 + 15.0).sqrt();
        assert!((s.compound - expected).abs() < 1e-12);
        assert!((s.compound - 0.4404).abs() < 1e-4);
        assert_eq!(s.polarity, Polarity::Positive);
    }

    #[test]
    fn negation_flips_and_dampens() {
        let s = score_text(&lex(), "not good");
        let v = 1.9 * -0.74;
        assert!((s.compound - v / (v * v + 15.0f64).sqrt()).abs() < 1e-12);
        assert!((s.compound + 0.3412).abs() < 1e-4);
        assert_eq!(s.polarity, Polarity::Negative);
        // Three tokens back still negates, four does not.
        assert!(score_text(&lex(), "not a b good").compound < 0.0);
        assert!(score_text(&lex(), "not a b c good").compound > 0.0);
    }

    #[test]
    fn boosters_caps_and_exclamations() {
        let l = lex();
        let plain = score_text(&l, "good").compound;
        let boosted = score_text(&l, "very good").compound;
        let expected = normalize(1.9 + 0.293);
        assert!((boosted - expected).abs() < 1e-12);
        assert!(boosted > plain);
        // Booster on a negative word increases its magnitude.
        assert!((score_text(&l, "very bad").compound - normalize(-2.5 - 0.293)).abs() < 1e-12);
        let caps = score_text(&l, "so GOOD").compound;
        assert!((caps - normalize(1.9 + 0.733 + 0.293)).abs() < 1e-12);
        // All-caps text gets no caps emphasis.
        assert!((score_text(&l, "GOOD").compound - plain).abs() < 1e-12);
        let bang = score_text(&l, "good!!!!!").compound;
        assert!((bang - normalize(1.9 + 3.0 * 0.292)).abs() < 1e-12);
        let neg_bang = score_text(&l, "bad!").compound;
        assert!((neg_bang - normalize(-2.5 - 0.292)).abs() < 1e-12);
    }

    fn event(text: Option<&str>, sentiment: Option<f64>) -> InteractionEvent {
        InteractionEvent {
            ego: "e".into(),
            alter: "a".into(),
            ts: 0,
            kind: InteractionKind::Reply,
            text: text.map(str::to_string),
            sentiment,
        }
    }

    #[test]
    fn event_scoring_precedence() {
        let l = lex();
        let s = score_event(&event(Some("great great"), Some(-0.5)), &l).unwrap();
        assert_eq!(s.polarity, Polarity::Negative);
        assert_eq!(
            score_event(&event(None, Some(0.0)), &l).unwrap().polarity,
            Polarity::Neutral
        );
        assert_eq!(
            score_event(&event(Some("awful"), None), &l).unwrap(),
            score_text(&l, "awful")
        );
        let err = score_event(&event(None, None), &l).unwrap_err();
        assert_eq!(err.category(), "unscorable-event");
    }

    fn scores(neg: usize, total: usize) -> Vec<SentimentScore> {
        (0..total)
            .map(|i| SentimentScore::from_compound(if i < neg { -0.5 } else { 0.0 }))
            .collect()
    }

    #[test]
    fn threshold_examples() {
        let p = SignParams::default();
        assert_eq!(sign_relationship(&scores(0, 10), &p).unwrap().sign, Sign::Positive);
        assert_eq!(sign_relationship(&scores(2, 10), &p).unwrap().sign, Sign::Negative);
        let at = sign_relationship(&scores(17, 100), &p).unwrap();
        assert_eq!((at.sign, at.n_scored, at.n_negative), (Sign::Positive, 100, 17));
        assert!(sign_relationship(&[], &p).is_err());
    }

    #[test]
    fn neutral_exclusion_flag() {
        let p = SignParams {
            include_neutral: false,
            ..SignParams::default()
        };
        // 1 negative, 9 neutral: 1/1 once neutrals leave the denominator.
        let r = sign_relationship(&scores(1, 10), &p).unwrap();
        assert_eq!((r.sign, r.n_scored), (Sign::Negative, 1));
        let r = sign_relationship(&scores(0, 5), &p).unwrap();
        assert_eq!((r.sign, r.n_scored), (Sign::Positive, 0));
    }

    #[test]
    fn threshold_step_location() {
        let p = SignParams::default();
        for n in 1..=100usize {
            let step = (17 * n) / 100 + 1;
            for k in 0..=n {
                let s = sign_relationship(&scores(k, n), &p).unwrap().sign;
                assert_eq!(s == Sign::Negative, k >= step, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn signs_cover_alters_with_events_only() {
        let mut frequencies = BTreeMap::new();
        for a in ["a", "b", "c"] {
            frequencies.insert(a.to_string(), 1.0);
        }
        let net = EgoNetwork {
            ego: "e".into(),
            rings: vec![vec!["a".into(), "b".into(), "c".into()]],
            frequencies,
        };
        let mk = |alter: &str, text: Option<&str>| InteractionEvent {
            alter: alter.into(),
            ..event(text, None)
        };
        let events = vec![
            mk("a", Some("love it")),
            mk("a", Some("great")),
            mk("b", Some("hate this")),
            mk("z", Some("bad")),
        ];
        let signed = sign_ego_network(&net, &events, &lex(), &SignParams::default()).unwrap();
        let mut unscorable = events.clone();
        unscorable.push(mk("c", None));
        let err = sign_ego_network(&net, &unscorable, &lex(), &SignParams::default()).unwrap_err();
        assert_eq!(err.category(), "unscorable-event");
        assert_eq!(signed.signs.len(), 2);
        assert_eq!(signed.signs["a"], Sign::Positive);
        assert_eq!(signed.signs["b"], Sign::Negative);

        let mut buf = Vec::new();
        write_signed_networks(&mut buf, std::slice::from_ref(&signed)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"signs\":{\"a\":\"positive\",\"b\":\"negative\"}"));
        assert_eq!(read_signed_networks(buf.as_slice(), "t").unwrap(), vec![signed]);
    }

    #[test]
    fn lexicon_file_sections() {
        let data = "# comment\ngood\t1.9\nugh\t-1.5\n#negator\nnah\n#booster\nsuper\t0.4\n";
        let l = Lexicon::read(data.as_bytes(), "lex").unwrap();
        assert_eq!(l.valence.len(), 2);
        assert!(l.negators.contains("nah"));
        assert_eq!(l.boosters["super"], 0.4);
        assert!(score_text(&l, "nah good").compound < 0.0);
        assert!(Lexicon::read("x\t9\n".as_bytes(), "lex").is_err());
        assert!(Lexicon::read("x\n".as_bytes(), "lex").is_err());
    }

    fn plain_tokens() -> impl Strategy<Value = Vec<&'static str>> {
        let pool = [
            "good", "great", "bad", "hate", "the", "debate", "love", "awful", "news", "rally",
            "win", "weak",
        ];
        proptest::collection::vec(proptest::sample::select(pool.to_vec()), 0..12)
    }

    proptest! {
        #[test]
        fn compound_is_bounded(toks in plain_tokens(), bangs in 0usize..6) {
            let text = format!("{}{}", toks.join(" "), "!".repeat(bangs));
            let c = score_text(&lex(), &text).compound;
            prop_assert!(c > -1.0 && c < 1.0);
        }

        #[test]
        fn appending_positive_token_never_decreases(
            toks in plain_tokens(),
            extra in proptest::sample::select(vec!["good", "great", "love", "win"]),
            bangs in 0usize..4,
        ) {
            let l = lex();
            let before = format!("{}{}", toks.join(" "), "!".repeat(bangs));
            let after = format!("{} {}{}", toks.join(" "), extra, "!".repeat(bangs));
            prop_assert!(score_text(&l, &after).compound >= score_text(&l, &before).compound);
        }

        #[test]
        fn sign_is_single_step(n in 1usize..400) {
            let p = SignParams::default();
            let signs: Vec<bool> = (0..=n)
                .map(|k| sign_relationship(&scores(k, n), &p).unwrap().sign == Sign::Negative)
                .collect();
            let transitions = signs.windows(2).filter(|w| w[0] != w[1]).count();
            prop_assert_eq!(transitions, 1);
            prop_assert!(!signs[(17 * n) / 100]);
            prop_assert!(signs[(17 * n) / 100 + 1]);
        }
    }
}
