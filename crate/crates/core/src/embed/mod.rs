//! node2vec: biased second-order random walks fed to skip-gram.

mod alias;
mod graph;
mod skipgram;
mod walk;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use alias::AliasTable;
pub use graph::{aux_edges, build_feature_graph, FeatureGraphs, Graph, GraphMode, SignMap};
pub use skipgram::{pair_gradients, pair_loss, train_skipgram, SkipGramModel, SkipGramParams};
pub use walk::{generate_walks, transition_distribution, WalkParams, WalkSampler};

use crate::corpus::{AuxGraph, AuxKind, UserId};
use crate::enm::{select_edges, CircleSelector, EgoNetwork};
use crate::error::{Error, Result};
use crate::feature::Feature;
use crate::senm::SignedEgoNetwork;
use crate::util::{derive_seed, str_hash};

/// User vectors of one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dimension: usize,
    pub vectors: BTreeMap<UserId, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dimension: usize) -> Self {
        EmbeddingTable {
            dimension,
            vectors: BTreeMap::new(),
        }
    }

    pub fn get(&self, user: &str) -> Option<&[f64]> {
        self.vectors.get(user).map(Vec::as_slice)
    }

    /// The user's vector, or zeros when the table has none.
    pub fn vector_or_zero(&self, user: &str) -> Vec<f64> {
        self.get(user)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.dimension])
    }

    pub fn insert(&mut self, user: UserId, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: vector.len(),
            });
        }
        if let Some(x) = vector.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite entry {x} for {user}")));
        }
        self.vectors.insert(user, vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Users whose vector is all zeros.
    pub fn zero_users(&self) -> Vec<UserId> {
        self.vectors
            .iter()
            .filter(|(_, v)| v.iter().all(|&x| x == 0.0))
            .map(|(u, _)| u.clone())
            .collect()
    }

    pub fn write_tsv<W: Write>(&self, mut w: W, feature: &str, seed: u64) -> Result<()> {
        writeln!(w, "#d={} feature={feature} seed={seed}", self.dimension)
            .map_err(|e| Error::io("<embeddings>", e))?;
        for (user, v) in &self.vectors {
            let mut line = user.clone();
            for x in v {
                line.push('\t');
                // `{:?}` prints the shortest string that parses back exactly.
                line.push_str(&format!("{x:?}"));
            }
            writeln!(w, "{line}").map_err(|e| Error::io("<embeddings>", e))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, feature: &str, seed: u64) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_tsv(&mut w, feature, seed)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a table; returns it with the header's feature name and seed.
    pub fn read_tsv<R: BufRead>(reader: R, source: &str) -> Result<(EmbeddingTable, TableHeader)> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line.map_err(|e| Error::io(source, e))?,
            None => return Err(Error::parse(source, 1, "missing header")),
        };
        let header = TableHeader::parse(&header).ok_or_else(|| {
            Error::parse(source, 1, format!("bad header {header:?}, expected #d=<dim> feature=<name> seed=<seed>"))
        })?;
        let mut table = EmbeddingTable::new(header.dimension);
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(source, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let user = fields.next().unwrap_or_default().to_string();
            let vector = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
            if table.vectors.contains_key(&user) {
                return Err(Error::parse(source, i + 1, format!("duplicate node {user}")));
            }
            table
                .insert(user, vector)
                .map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        }
        Ok((table, header))
    }

    pub fn load(path: &Path) -> Result<(EmbeddingTable, TableHeader)> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_tsv(BufReader::new(f), &path.display().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableHeader {
    pub dimension: usize,
    pub feature: String,
    pub seed: u64,
}

impl TableHeader {
    fn parse(line: &str) -> Option<TableHeader> {
        let rest = line.strip_prefix('#')?;
        let (mut d, mut feature, mut seed) = (None, None, None);
        for part in rest.split_whitespace() {
            let (k, v) = part.split_once('=')?;
            match k {
                "d" => d = v.parse().ok(),
                "feature" => feature = Some(v.to_string()),
                "seed" => seed = v.parse().ok(),
                _ => return None,
            }
        }
        Some(TableHeader {
            dimension: d?,
            feature: feature?,
            seed: seed?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedParams {
    pub walk: WalkParams,
    pub skipgram: SkipGramParams,
    /// Treat ego-to-alter edges as arcs.
    pub directed: bool,
}

/// Runs node2vec on one graph at the given dimension. Only nodes of the
/// graph get a vector; an edgeless graph yields an empty map.
pub fn embed_graph(
    graph: &Graph,
    params: &EmbedParams,
    dimension: usize,
    seed: u64,
) -> Result<BTreeMap<UserId, Vec<f64>>> {
    if graph.n_edges() == 0 {
        return Ok(BTreeMap::new());
    }
    let walks = generate_walks(graph, &params.walk, seed)?;
    let sg = SkipGramParams {
        dimension,
        seed: derive_seed(seed, &[1]),
        ..params.skipgram.clone()
    };
    let model = train_skipgram(&walks, graph.n_nodes(), &sg)?;
    Ok(graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), model.vector(i).to_vec()))
        .collect())
}

/// Inputs an embedded feature can draw on.
#[derive(Debug, Clone, Copy)]
pub struct FeatureInputs<'a> {
    /// Users that must appear in the output table.
    pub users: &'a BTreeSet<UserId>,
    pub networks: &'a [EgoNetwork],
    pub signed: Option<&'a [SignedEgoNetwork]>,
    pub aux: &'a BTreeMap<AuxKind, AuxGraph>,
}

/// Users who ended up with a zero vector.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoverageReport {
    pub zero_vector_users: Vec<UserId>,
}

/// Builds the feature graph for `feature` and embeds it.
///
/// The table covers `inputs.users` plus every graph node. For `senm` the
/// first half of each vector comes from the positive graph and the second
/// from the negative graph; a user missing from one graph has zeros there.
pub fn embed_feature(
    feature: Feature,
    inputs: &FeatureInputs<'_>,
    params: &EmbedParams,
    seed: u64,
) -> Result<(EmbeddingTable, CoverageReport)> {
    let d = params.skipgram.dimension;
    let seed = derive_seed(seed, &[str_hash(feature.name())]);
    let mut table = EmbeddingTable::new(d);

    let parts: Vec<(BTreeMap<UserId, Vec<f64>>, usize)> = match feature {
        Feature::Text => {
            return Err(Error::UnknownFeature(format!(
                "{} is not a graph feature; its predictions are read from a file",
                feature.name()
            )))
        }
        Feature::Senm => {
            let signed = inputs.signed.ok_or_else(|| {
                Error::InvalidInput("senm needs signed ego networks".into())
            })?;
            let bases: Vec<EgoNetwork> = signed.iter().map(|s| s.base.clone()).collect();
            let edges = select_edges(&bases, CircleSelector::Full);
            let signs: SignMap = signed
                .iter()
                .flat_map(|s| {
                    s.signs
                        .iter()
                        .map(move |(a, sign)| ((s.base.ego.clone(), a.clone()), *sign))
                })
                .collect();
            let FeatureGraphs::Split { positive, negative } =
                build_feature_graph(&edges, Some(&signs), GraphMode::SignedSplit, params.directed)?
            else {
                unreachable!("split mode yields split graphs")
            };
            let (dp, dn) = (d - d / 2, d / 2);
            vec![
                (embed_graph(&positive, params, dp, derive_seed(seed, &[0]))?, dp),
                (embed_graph(&negative, params, dn, derive_seed(seed, &[1]))?, dn),
            ]
        }
        f => {
            let edges = if let Some(sel) = f.circle_selector() {
                select_edges(inputs.networks, sel)
            } else {
                let kind = f.aux_kind().expect("remaining features are aux graphs");
                inputs.aux.get(&kind).map(aux_edges).unwrap_or_default()
            };
            let FeatureGraphs::Unsigned(g) =
                build_feature_graph(&edges, None, GraphMode::Unsigned, params.directed)?
            else {
                unreachable!("unsigned mode yields one graph")
            };
            vec![(embed_graph(&g, params, d, seed)?, d)]
        }
    };

    let mut users: BTreeSet<&UserId> = inputs.users.iter().collect();
    for (vectors, _) in &parts {
        users.extend(vectors.keys());
    }
    for user in users {
        let mut v = Vec::with_capacity(d);
        for (vectors, width) in &parts {
            match vectors.get(user) {
                Some(part) => v.extend_from_slice(part),
                None => v.extend(std::iter::repeat_n(0.0, *width)),
            }
        }
        table.insert(user.clone(), v)?;
    }
    let report = CoverageReport {
        zero_vector_users: table.zero_users(),
    };
    Ok((table, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::senm::Sign;

    fn network(ego: &str, rings: &[&[(&str, f64)]]) -> EgoNetwork {
        let mut frequencies = BTreeMap::new();
        let rings = rings
            .iter()
            .map(|r| {
                r.iter()
                    .map(|(a, f)| {
                        frequencies.insert(a.to_string(), *f);
                        a.to_string()
                    })
                    .collect()
            })
            .collect();
        EgoNetwork {
            ego: ego.into(),
            rings,
            frequencies,
        }
    }

    fn small_params() -> EmbedParams {
        EmbedParams {
            walk: WalkParams {
                walk_length: 10,
                walks_per_node: 4,
                ..WalkParams::default()
            },
            skipgram: SkipGramParams {
                dimension: 8,
                epochs: 2,
                ..SkipGramParams::default()
            },
            directed: false,
        }
    }

    #[test]
    fn senm_positive_only_user_has_zero_negative_half() {
        let base = network("e", &[&[("a", 5.0)], &[("b", 2.0), ("c", 1.0)]]);
        let mut signs = BTreeMap::new();
        signs.insert("a".to_string(), Sign::Positive);
        signs.insert("b".to_string(), Sign::Negative);
        signs.insert("c".to_string(), Sign::Negative);
        let signed = vec![SignedEgoNetwork { base, signs }];
        let users = BTreeSet::from(["ghost".to_string()]);
        let aux = BTreeMap::new();
        let inputs = FeatureInputs {
            users: &users,
            networks: &[],
            signed: Some(&signed),
            aux: &aux,
        };
        let (table, report) = embed_feature(Feature::Senm, &inputs, &small_params(), 3).unwrap();
        assert_eq!(table.dimension, 8);
        let a = table.get("a").unwrap();
        assert!(a[..4].iter().any(|&x| x != 0.0));
        assert!(a[4..].iter().all(|&x| x == 0.0));
        let b = table.get("b").unwrap();
        assert!(b[..4].iter().all(|&x| x == 0.0));
        assert!(b[4..].iter().any(|&x| x != 0.0));
        assert_eq!(report.zero_vector_users, vec!["ghost".to_string()]);
    }

    #[test]
    fn enm_inner_dimension_and_coverage() {
        let nets = vec![
            network("e", &[&[("a", 9.0)], &[("b", 4.0)], &[("c", 1.0)]]),
            network("f", &[&[("a", 3.0)], &[("d", 1.0)]]),
        ];
        let users = BTreeSet::from(["e".to_string(), "z".to_string()]);
        let aux = BTreeMap::new();
        let inputs = FeatureInputs {
            users: &users,
            networks: &nets,
            signed: None,
            aux: &aux,
        };
        let (table, report) = embed_feature(Feature::EnmInner, &inputs, &small_params(), 5).unwrap();
        assert_eq!(table.dimension, 8);
        assert!(table.vectors.values().all(|v| v.len() == 8));
        // c sits in ring 3, outside the inner selection.
        assert_eq!(report.zero_vector_users, vec!["z".to_string()]);
        assert!(table.get("c").is_none());
        assert_eq!(report.zero_vector_users, table.zero_users());

        let again = embed_feature(Feature::EnmInner, &inputs, &small_params(), 5).unwrap();
        assert_eq!(again.0, table);
    }

    #[test]
    fn text_is_not_embeddable() {
        let users = BTreeSet::new();
        let aux = BTreeMap::new();
        let inputs = FeatureInputs {
            users: &users,
            networks: &[],
            signed: None,
            aux: &aux,
        };
        let err = embed_feature(Feature::Text, &inputs, &small_params(), 1).unwrap_err();
        assert_eq!(err.category(), "unknown-feature");
    }

    #[test]
    fn tsv_round_trip() {
        let mut t = EmbeddingTable::new(3);
        t.insert("u1".into(), vec![0.1, -2.5e-7, 3.0]).unwrap();
        t.insert("u2".into(), vec![0.0, 1.0 / 3.0, -0.0]).unwrap();
        let mut buf = Vec::new();
        t.write_tsv(&mut buf, "enm-full", 42).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("#d=3 feature=enm-full seed=42\n"));
        let (back, header) = EmbeddingTable::read_tsv(&buf[..], "mem").unwrap();
        assert_eq!(back, t);
        assert_eq!(header.feature, "enm-full");
        assert_eq!(header.seed, 42);
        assert!(t.insert("bad".into(), vec![1.0]).is_err());
    }
}
