use std::collections::BTreeMap;

use egostance::corpus::validate_corpus;
use egostance::embed::{embed_feature, generate_walks, EmbedParams, FeatureInputs, Graph, WalkParams};
use egostance::enm::{build_all, EnmParams};
use egostance::harness::Dataset;
use egostance::syngen::{emit, generate, GeneratorParams, GroundTruth, GROUND_TRUTH_FILE};
use egostance::Feature;

fn small() -> GeneratorParams {
    GeneratorParams {
        n_users: 200,
        seed: 3,
        ..GeneratorParams::default()
    }
}

fn dir_bytes(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn generated_corpus_loads_clean() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = generate(&small()).unwrap();
    emit(&corpus, tmp.path()).unwrap();
    let ds = Dataset::load_dir(tmp.path(), Some(corpus.window)).unwrap();
    assert_eq!(ds.events.len(), corpus.events.len());
    assert_eq!(ds.posts, corpus.posts);
    let aux: Vec<_> = ds.aux.values().cloned().collect();
    let report = validate_corpus(&ds.events, &ds.posts, &aux, ds.predictions.as_ref());
    assert!(report.is_empty(), "{report}");

    let truth = GroundTruth::load(&tmp.path().join(GROUND_TRUTH_FILE)).unwrap();
    for p in &ds.posts {
        assert_eq!(truth.stance_of[&(p.author_id.clone(), p.target.clone())], p.stance);
    }
}

#[test]
fn re_emitting_gives_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = generate(&small()).unwrap();
    emit(&corpus, tmp.path()).unwrap();
    let first = dir_bytes(tmp.path());
    emit(&generate(&small()).unwrap(), tmp.path()).unwrap();
    assert_eq!(dir_bytes(tmp.path()), first);
}

#[test]
fn embeddings_are_bit_for_bit_reproducible() {
    let corpus = generate(&small()).unwrap();
    let nets = build_all(&corpus.events, corpus.window, &EnmParams::default()).unwrap().networks;
    let users = corpus.posts.iter().map(|p| p.author_id.clone()).collect();
    let inputs = FeatureInputs {
        users: &users,
        networks: &nets,
        signed: None,
        aux: &corpus.aux,
    };
    let mut params = EmbedParams::default();
    params.skipgram.dimension = 16;
    params.walk.walks_per_node = 2;
    for f in [Feature::EnmInner, Feature::Likes] {
        let (a, _) = embed_feature(f, &inputs, &params, 9).unwrap();
        let (b, _) = embed_feature(f, &inputs, &params, 9).unwrap();
        let bits = |t: &egostance::embed::EmbeddingTable| -> Vec<u64> {
            t.vectors.values().flatten().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        let (c, _) = embed_feature(f, &inputs, &params, 10).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }
}

#[test]
fn triangle_walks_follow_the_bias() {
    // On a triangle plus a pendant node, after arriving at the hub from a
    // triangle node the walker returns with weight 1/p, goes to the other
    // triangle node with weight 1 and to the pendant with weight 1/q.
    let edges = [("a", "b"), ("b", "c"), ("a", "c"), ("c", "d")]
        .map(|(x, y)| (x.to_string(), y.to_string(), 1.0));
    let g = Graph::from_edges(edges, false).unwrap();
    let params = WalkParams {
        p: 0.5,
        q: 2.0,
        walk_length: 40,
        walks_per_node: 400,
        weighted: true,
    };
    let walks = generate_walks(&g, &params, 11).unwrap();
    let [a, c, d] = ["a", "c", "d"].map(|n| g.index_of(n).unwrap());
    let mut counts = [0usize; 3];
    for w in &walks {
        for s in w.windows(3) {
            if s[0] == a && s[1] == c {
                let k = [a, g.index_of("b").unwrap(), d].iter().position(|&n| n == s[2]).unwrap();
                counts[k] += 1;
            }
        }
    }
    let total: usize = counts.iter().sum();
    // Weights 2, 1, 0.5 normalise to 4/7, 2/7, 1/7.
    for (k, expected) in [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0].into_iter().enumerate() {
        let observed = counts[k] as f64 / total as f64;
        let sd = (expected * (1.0 - expected) / total as f64).sqrt();
        assert!((observed - expected).abs() < 5.0 * sd, "{k}: {observed} vs {expected}");
    }
}
