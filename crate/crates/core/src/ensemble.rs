//! Majority vote over per-feature predictions.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Stance;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub feature: String,
    pub label: Stance,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteSlate {
    pub post_id: String,
    pub votes: Vec<Vote>,
}

impl VoteSlate {
    pub fn validate(&self) -> Result<()> {
        if self.votes.is_empty() {
            return Err(Error::InvalidInput(format!("post {} has no votes", self.post_id)));
        }
        let mut seen = BTreeSet::new();
        for v in &self.votes {
            if !seen.insert(v.feature.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "post {} has two votes from {}",
                    self.post_id, v.feature
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalPrediction {
    pub post_id: String,
    pub label: Stance,
    /// Winning votes minus losing votes.
    pub margin: usize,
    pub tie_broken: bool,
}

/// Strict majority wins. On a tie the side with the higher mean confidence
/// wins, then FAVOR.
pub fn vote(slate: &VoteSlate) -> Result<FinalPrediction> {
    slate.validate()?;
    let mut count = [0usize; 2];
    let mut conf = [0.0f64; 2];
    for v in &slate.votes {
        count[v.label.index()] += 1;
        conf[v.label.index()] += v.confidence;
    }
    let (f, a) = (Stance::Favor.index(), Stance::Against.index());
    let label = if count[f] != count[a] {
        if count[f] > count[a] {
            Stance::Favor
        } else {
            Stance::Against
        }
    } else {
        // Equal counts, so comparing sums compares means.
        if conf[a] > conf[f] {
            Stance::Against
        } else {
            Stance::Favor
        }
    };
    Ok(FinalPrediction {
        post_id: slate.post_id.clone(),
        label,
        margin: count[f].abs_diff(count[a]),
        tie_broken: count[f] == count[a],
    })
}

/// Votes every slate using only the features in `subset`.
pub fn vote_all(slates: &[VoteSlate], subset: &[&str]) -> Result<Vec<FinalPrediction>> {
    if subset.is_empty() {
        return Err(Error::InvalidParam("empty feature subset".into()));
    }
    slates
        .iter()
        .map(|s| {
            let restricted = VoteSlate {
                post_id: s.post_id.clone(),
                votes: s
                    .votes
                    .iter()
                    .filter(|v| subset.contains(&v.feature.as_str()))
                    .cloned()
                    .collect(),
            };
            if restricted.votes.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "post {} has no vote from any of {}",
                    s.post_id,
                    subset.join(", ")
                )));
            }
            vote(&restricted)
        })
        .collect()
}

pub fn write_final_predictions<W: Write>(mut w: W, preds: &[FinalPrediction]) -> Result<()> {
    let io = |e| Error::io("<writer>", e);
    writeln!(w, "post_id,label,margin,tie_broken").map_err(io)?;
    for p in preds {
        let id = if p.post_id.contains([',', '"', '\n']) {
            format!("\"{}\"", p.post_id.replace('"', "\"\""))
        } else {
            p.post_id.clone()
        };
        writeln!(w, "{id},{},{},{}", p.label, p.margin, p.tie_broken).map_err(io)?;
    }
    Ok(())
}

pub fn save_final_predictions(path: &Path, preds: &[FinalPrediction]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_final_predictions(&mut w, preds)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn slate(votes: &[(Stance, f64)]) -> VoteSlate {
        VoteSlate {
            post_id: "p".into(),
            votes: votes
                .iter()
                .enumerate()
                .map(|(i, &(label, confidence))| Vote {
                    feature: format!("f{i}"),
                    label,
                    confidence,
                })
                .collect(),
        }
    }

    use Stance::{Against as A, Favor as F};

    #[test]
    fn strict_majority() {
        let p = vote(&slate(&[(F, 0.6), (F, 0.6), (A, 0.9)])).unwrap();
        assert_eq!((p.label, p.margin, p.tie_broken), (F, 1, false));
    }

    #[test]
    fn tie_goes_to_confidence_then_favor() {
        let p = vote(&slate(&[(F, 0.9), (A, 0.6)])).unwrap();
        assert_eq!((p.label, p.margin, p.tie_broken), (F, 0, true));
        assert_eq!(vote(&slate(&[(F, 0.6), (A, 0.9)])).unwrap().label, A);
        assert_eq!(vote(&slate(&[(A, 0.7), (F, 0.7)])).unwrap().label, F);
    }

    #[test]
    fn invalid_slates() {
        assert!(vote(&slate(&[])).is_err());
        let mut s = slate(&[(F, 0.9), (A, 0.6)]);
        s.votes[1].feature = "f0".into();
        assert!(vote(&s).is_err());
    }

    #[test]
    fn subset_restriction() {
        let slates = vec![
            VoteSlate {
                post_id: "1".into(),
                votes: vec![
                    Vote { feature: "enm-full".into(), label: A, confidence: 0.8 },
                    Vote { feature: "text".into(), label: F, confidence: 0.9 },
                    Vote { feature: "likes".into(), label: F, confidence: 0.7 },
                ],
            },
            VoteSlate {
                post_id: "2".into(),
                votes: vec![Vote { feature: "text".into(), label: F, confidence: 0.9 }],
            },
        ];
        let one = vote_all(&slates[..1], &["enm-full"]).unwrap();
        assert_eq!(one[0].label, A);
        assert_eq!(one.len(), 1);
        let all = vote_all(&slates[..1], &["enm-full", "text", "likes"]).unwrap();
        assert_eq!((all[0].label, all[0].margin), (F, 1));
        let err = vote_all(&slates, &["enm-full"]).unwrap_err();
        assert!(err.to_string().contains("post 2"));
        assert!(vote_all(&slates, &[]).is_err());
    }

    #[test]
    fn csv_output() {
        let preds = vec![FinalPrediction {
            post_id: "p,1".into(),
            label: A,
            margin: 2,
            tie_broken: false,
        }];
        let mut buf = Vec::new();
        write_final_predictions(&mut buf, &preds).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "post_id,label,margin,tie_broken\n\"p,1\",AGAINST,2,false\n"
        );
    }

    fn arb_votes() -> impl Strategy<Value = Vec<(Stance, f64)>> {
        prop::collection::vec(
            (prop::bool::ANY.prop_map(|b| if b { F } else { A }), 0.5f64..=1.0),
            1..8,
        )
    }

    proptest! {
        #[test]
        fn permutation_invariant(votes in arb_votes(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = votes.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = vote(&slate(&votes)).unwrap();
            let b = vote(&slate(&shuffled)).unwrap();
            prop_assert_eq!(a.label, b.label);
            prop_assert_eq!(a.margin, b.margin);
        }

        #[test]
        fn flipping_a_loser_keeps_winner(votes in arb_votes()) {
            let before = vote(&slate(&votes)).unwrap();
            if let Some(i) = votes.iter().position(|v| v.0 != before.label) {
                let mut flipped = votes.clone();
                flipped[i].0 = before.label;
                prop_assert_eq!(vote(&slate(&flipped)).unwrap().label, before.label);
            }
        }

        #[test]
        fn duplicating_doubles_margin(votes in arb_votes()) {
            let before = vote(&slate(&votes)).unwrap();
            let doubled: Vec<_> = votes.iter().chain(&votes).copied().collect();
            let after = vote(&slate(&doubled)).unwrap();
            prop_assert_eq!(after.label, before.label);
            prop_assert_eq!(after.margin, 2 * before.margin);
        }
    }
}
