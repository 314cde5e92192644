use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::AuxKind;
use crate::enm::CircleSelector;
use crate::error::{Error, Result};

/// One prediction branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    EnmFull,
    EnmInner,
    EnmOuter,
    Senm,
    Likes,
    Followers,
    Friends,
    /// Predictions supplied by an external text model.
    Text,
}

impl Feature {
    pub const ALL: [Feature; 8] = [
        Feature::EnmFull,
        Feature::EnmInner,
        Feature::EnmOuter,
        Feature::Senm,
        Feature::Likes,
        Feature::Followers,
        Feature::Friends,
        Feature::Text,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::EnmFull => "enm-full",
            Feature::EnmInner => "enm-inner",
            Feature::EnmOuter => "enm-outer",
            Feature::Senm => "senm",
            Feature::Likes => "likes",
            Feature::Followers => "followers",
            Feature::Friends => "friends",
            Feature::Text => "text",
        }
    }

    /// Graph-derived features need an embedding; `Text` does not.
    pub fn is_embedded(self) -> bool {
        self != Feature::Text
    }

    pub fn circle_selector(self) -> Option<CircleSelector> {
        match self {
            Feature::EnmFull | Feature::Senm => Some(CircleSelector::Full),
            Feature::EnmInner => Some(CircleSelector::Inner),
            Feature::EnmOuter => Some(CircleSelector::Outer),
            _ => None,
        }
    }

    pub fn aux_kind(self) -> Option<AuxKind> {
        match self {
            Feature::Likes => Some(AuxKind::Likes),
            Feature::Followers => Some(AuxKind::Followers),
            Feature::Friends => Some(AuxKind::Friends),
            _ => None,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == t)
            .ok_or_else(|| Error::UnknownFeature(s.to_string()))
    }
}

/// Features whose predictions are combined by majority vote.
///
/// Parsed from a single feature name, `ct-tn` (text + likes + followers +
/// friends), or several names joined with `+`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureSet {
    name: String,
    members: Vec<Feature>,
}

impl FeatureSet {
    pub const CT_TN: &'static str = "ct-tn";

    pub fn single(f: Feature) -> Self {
        FeatureSet {
            name: f.name().to_string(),
            members: vec![f],
        }
    }

    pub fn ct_tn() -> Self {
        FeatureSet {
            name: Self::CT_TN.to_string(),
            members: vec![
                Feature::Text,
                Feature::Likes,
                Feature::Followers,
                Feature::Friends,
            ],
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn members(&self) -> &[Feature] {
        &self.members
    }

    /// Parses a comma-separated list of feature sets.
    pub fn parse_list(s: &str) -> Result<Vec<FeatureSet>> {
        let sets: Vec<FeatureSet> = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        if sets.is_empty() {
            return Err(Error::InvalidParam("empty feature list".into()));
        }
        Ok(sets)
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t == Self::CT_TN {
            return Ok(Self::ct_tn());
        }
        let mut members = Vec::new();
        for part in t.split('+') {
            let f: Feature = part.parse()?;
            if members.contains(&f) {
                return Err(Error::InvalidParam(format!("feature {f} listed twice in {t:?}")));
            }
            members.push(f);
        }
        Ok(FeatureSet {
            name: t.to_string(),
            members,
        })
    }
}

impl Serialize for FeatureSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name)
    }
}

impl<'de> Deserialize<'de> for FeatureSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_names() {
        for f in Feature::ALL {
            assert_eq!(f.name().parse::<Feature>().unwrap(), f);
        }
        assert_eq!("bogus".parse::<Feature>().unwrap_err().category(), "unknown-feature");
    }

    #[test]
    fn parse_sets() {
        let sets = FeatureSet::parse_list("enm-full,ct-tn,senm+text").unwrap();
        assert_eq!(sets[0].members(), &[Feature::EnmFull]);
        assert_eq!(sets[1].members().len(), 4);
        assert_eq!(sets[2].members(), &[Feature::Senm, Feature::Text]);
        assert_eq!(sets[2].name(), "senm+text");
        assert!(FeatureSet::parse_list("enm-full+enm-full").is_err());
        assert!(FeatureSet::parse_list("").is_err());
    }
}
