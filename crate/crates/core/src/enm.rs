//! Unsigned ego networks: activity filtering, contact frequencies, 1-D mean
//! shift over frequencies and concentric circle assembly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{InteractionEvent, InteractionKind, ObservationWindow, UserId};
use crate::error::{Error, Result};
use crate::util::{day_index, days_in_month, month_index, MEAN_MONTH_SECS};

/// Minimum timeline length, in calendar months, for an active user.
pub const ACTIVE_MIN_MONTHS: i64 = 6;

const MAX_SHIFT_ITERS: usize = 300;
const SHIFT_TOLERANCE: f64 = 1e-4;
const MERGE_RADIUS: f64 = 0.5;
const BANDWIDTH_QUANTILE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relationship {
    pub ego: UserId,
    pub alter: UserId,
    pub interaction_count: u32,
    pub first_ts: i64,
    pub last_ts: i64,
    /// Interactions per month.
    pub frequency: f64,
}

/// Active-user rule: the timeline covers at least six calendar months, and
/// in at least half of the months where the user has events they post on
/// at least a third of that month's days.
///
/// Events outside `window` are ignored. `user_events` must all belong to
/// one user.
pub fn is_active(user_events: &[InteractionEvent], window: ObservationWindow) -> bool {
    let refs: Vec<&InteractionEvent> = user_events.iter().collect();
    is_active_refs(&refs, window)
}

fn is_active_refs(user_events: &[&InteractionEvent], window: ObservationWindow) -> bool {
    let mut days_by_month: BTreeMap<i64, BTreeSet<i64>> = BTreeMap::new();
    for e in user_events.iter().filter(|e| window.contains(e.ts)) {
        days_by_month
            .entry(month_index(e.ts))
            .or_default()
            .insert(day_index(e.ts));
    }
    let (Some(first), Some(last)) = (
        days_by_month.keys().next().copied(),
        days_by_month.keys().next_back().copied(),
    ) else {
        return false;
    };
    if last - first + 1 < ACTIVE_MIN_MONTHS {
        return false;
    }
    let dense = days_by_month
        .iter()
        .filter(|(&m, days)| days.len() as u32 >= days_in_month(m).div_ceil(3))
        .count();
    2 * dense >= days_by_month.len()
}

/// One relationship per alter the ego contacted through one of `kinds`.
///
/// Frequency is the interaction count divided by the number of months from
/// the ego's first in-window event (of any kind) to the window end, floored
/// at one month. Output is sorted by alter id.
pub fn contact_frequencies(
    events: &[InteractionEvent],
    ego: &str,
    kinds: &BTreeSet<InteractionKind>,
    window: ObservationWindow,
) -> Vec<Relationship> {
    relationships_from(events.iter(), ego, kinds, window)
}

fn relationships_from<'a>(
    events: impl Iterator<Item = &'a InteractionEvent>,
    ego: &str,
    kinds: &BTreeSet<InteractionKind>,
    window: ObservationWindow,
) -> Vec<Relationship> {
    let mut first_event: Option<i64> = None;
    let mut per_alter: BTreeMap<&str, (u32, i64, i64)> = BTreeMap::new();
    for e in events.filter(|e| e.ego == ego && window.contains(e.ts)) {
        first_event = Some(first_event.map_or(e.ts, |f| f.min(e.ts)));
        if !kinds.contains(&e.kind) {
            continue;
        }
        let slot = per_alter.entry(&e.alter).or_insert((0, e.ts, e.ts));
        slot.0 += 1;
        slot.1 = slot.1.min(e.ts);
        slot.2 = slot.2.max(e.ts);
    }
    let Some(first) = first_event else {
        return Vec::new();
    };
    let months = ((window.end - first) as f64 / MEAN_MONTH_SECS).max(1.0);
    per_alter
        .into_iter()
        .map(|(alter, (count, first_ts, last_ts))| Relationship {
            ego: ego.to_string(),
            alter: alter.to_string(),
            interaction_count: count,
            first_ts,
            last_ts,
            frequency: count as f64 / months,
        })
        .collect()
}

/// Result of 1-D mean shift.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster centres, strictly descending.
    pub modes: Vec<f64>,
    /// Cluster index of each input value, aligned with the input order.
    pub labels: Vec<usize>,
    pub bandwidth: f64,
}

impl Clustering {
    pub fn n_clusters(&self) -> usize {
        self.modes.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.modes.len()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Mean over points of the distance to their k-th nearest neighbour, with
/// k = ceil(0.3 n) clamped to [1, n - 1].
///
/// Falls back to the mean gap between distinct values when the quantile
/// distance is zero (heavily duplicated input), and to 1.0 when all values
/// coincide.
pub fn estimate_bandwidth(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n < 2 {
        return sorted.first().copied().filter(|v| *v > 0.0).unwrap_or(1.0);
    }
    let k = ((BANDWIDTH_QUANTILE * n as f64).ceil() as usize).clamp(1, n - 1);
    let mut total = 0.0;
    for i in 0..n {
        total += kth_neighbour_distance(&sorted, i, k);
    }
    let estimate = total / n as f64;
    if estimate > 0.0 {
        return estimate;
    }
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < 2 {
        return 1.0;
    }
    (distinct[distinct.len() - 1] - distinct[0]) / (distinct.len() - 1) as f64
}

fn kth_neighbour_distance(sorted: &[f64], i: usize, k: usize) -> f64 {
    let x = sorted[i];
    let (mut left, mut right) = (i, i + 1);
    let mut d = 0.0;
    for _ in 0..k {
        let dl = if left > 0 { x - sorted[left - 1] } else { f64::INFINITY };
        let dr = if right < sorted.len() {
            sorted[right] - x
        } else {
            f64::INFINITY
        };
        if dl <= dr {
            d = dl;
            left -= 1;
        } else {
            d = dr;
            right += 1;
        }
    }
    d
}

/// Flat-kernel mean shift on positive reals.
///
/// Every point moves to the mean of the values within `bandwidth` of it
/// until the shift drops below `1e-4 * bandwidth` (at most 300 steps).
/// Converged positions closer than `bandwidth / 2` merge, the one reached by
/// more points surviving. Values are then labelled with their nearest mode,
/// ties going to the higher mode. The result does not depend on input order.
pub fn mean_shift_1d(values: &[f64], bandwidth: Option<f64>) -> Result<Clustering> {
    if values.is_empty() {
        return Err(Error::InvalidInput("mean shift over no values".into()));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "mean shift values must be finite and positive, got {v}"
        )));
    }
    let bw = match bandwidth {
        Some(b) if b.is_finite() && b > 0.0 => b,
        Some(b) => {
            return Err(Error::InvalidParam(format!(
                "bandwidth must be positive, got {b}"
            )))
        }
        None => estimate_bandwidth(values),
    };

    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut prefix = Vec::with_capacity(sorted.len() + 1);
    prefix.push(0.0);
    for v in &sorted {
        prefix.push(prefix.last().unwrap() + v);
    }

    // Identical starting points follow identical trajectories.
    let mut converged: Vec<(f64, usize)> = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].partition_point(|v| *v == sorted[i]) + i;
        converged.push((shift_to_mode(&sorted, &prefix, sorted[i], bw), j - i));
        i = j;
    }

    converged.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut grouped: Vec<(f64, usize)> = Vec::new();
    for (pos, support) in converged {
        match grouped.last_mut() {
            Some(last) if last.0 == pos => last.1 += support,
            _ => grouped.push((pos, support)),
        }
    }
    grouped.sort_by(|a, b| b.1.cmp(&a.1).then(b.0.total_cmp(&a.0)));
    let mut modes: Vec<f64> = Vec::new();
    for (pos, _) in grouped {
        if modes.iter().all(|m| (m - pos).abs() > MERGE_RADIUS * bw) {
            modes.push(pos);
        }
    }
    modes.sort_by(|a, b| b.total_cmp(a));

    let mut labels: Vec<usize> = values.iter().map(|&v| nearest_mode(&modes, v)).collect();
    // A mode can lose all its points to a nearer neighbour; drop it.
    let mut used = vec![false; modes.len()];
    for &l in &labels {
        used[l] = true;
    }
    if used.iter().any(|u| !u) {
        let mut remap = vec![usize::MAX; modes.len()];
        let mut kept = Vec::new();
        for (i, m) in modes.iter().enumerate() {
            if used[i] {
                remap[i] = kept.len();
                kept.push(*m);
            }
        }
        for l in &mut labels {
            *l = remap[*l];
        }
        modes = kept;
    }

    Ok(Clustering {
        modes,
        labels,
        bandwidth: bw,
    })
}

fn shift_to_mode(sorted: &[f64], prefix: &[f64], start: f64, bw: f64) -> f64 {
    let mut x = start;
    for _ in 0..MAX_SHIFT_ITERS {
        let lo = sorted.partition_point(|v| *v < x - bw);
        let hi = sorted.partition_point(|v| *v <= x + bw);
        if hi <= lo {
            break;
        }
        let next = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
        let shift = (next - x).abs();
        x = next;
        if shift < SHIFT_TOLERANCE * bw {
            break;
        }
    }
    x
}

/// Index of the closest mode in a descending list; ties pick the higher mode.
fn nearest_mode(modes: &[f64], v: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, m) in modes.iter().enumerate() {
        let d = (m - v).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Mean shift result keyed by alter.
#[derive(Debug, Clone, PartialEq)]
pub struct AlterClustering {
    pub modes: Vec<f64>,
    pub assignment: BTreeMap<UserId, usize>,
    pub bandwidth: f64,
}

pub fn cluster_alters(relationships: &[Relationship], bandwidth: Option<f64>) -> Result<AlterClustering> {
    let values: Vec<f64> = relationships.iter().map(|r| r.frequency).collect();
    let c = mean_shift_1d(&values, bandwidth)?;
    let assignment = relationships
        .iter()
        .zip(&c.labels)
        .map(|(r, &l)| (r.alter.clone(), l))
        .collect();
    Ok(AlterClustering {
        modes: c.modes,
        assignment,
        bandwidth: c.bandwidth,
    })
}

/// An ego's alters grouped into frequency rings, innermost first.
///
/// Serialises as one line of `ego_networks.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoNetwork {
    pub ego: UserId,
    pub rings: Vec<Vec<UserId>>,
    pub frequencies: BTreeMap<UserId, f64>,
}

impl EgoNetwork {
    pub fn n_rings(&self) -> usize {
        self.rings.len()
    }

    pub fn n_alters(&self) -> usize {
        self.frequencies.len()
    }

    /// Circle `i` (1-based): the union of rings 1..=i.
    pub fn circle(&self, i: usize) -> BTreeSet<&str> {
        self.rings
            .iter()
            .take(i)
            .flatten()
            .map(String::as_str)
            .collect()
    }

    pub fn circle_sizes(&self) -> Vec<usize> {
        self.rings
            .iter()
            .scan(0, |acc, r| {
                *acc += r.len();
                Some(*acc)
            })
            .collect()
    }

    /// Zero-based ring index of an alter.
    pub fn ring_of(&self, alter: &str) -> Option<usize> {
        self.rings.iter().position(|r| r.iter().any(|a| a == alter))
    }

    /// Checks partition, frequency ordering and ring non-emptiness.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for ring in &self.rings {
            if ring.is_empty() {
                return Err(Error::InvalidInput(format!("ego {}: empty ring", self.ego)));
            }
            for a in ring {
                if !self.frequencies.contains_key(a) || !seen.insert(a.as_str()) {
                    return Err(Error::InvalidInput(format!(
                        "ego {}: rings do not partition the alters ({a})",
                        self.ego
                    )));
                }
            }
        }
        if seen.len() != self.frequencies.len() {
            return Err(Error::InvalidInput(format!(
                "ego {}: {} alters missing from rings",
                self.ego,
                self.frequencies.len() - seen.len()
            )));
        }
        for pair in self.rings.windows(2) {
            let min_inner = pair[0]
                .iter()
                .map(|a| self.frequencies[a])
                .fold(f64::INFINITY, f64::min);
            let max_outer = pair[1]
                .iter()
                .map(|a| self.frequencies[a])
                .fold(f64::NEG_INFINITY, f64::max);
            if min_inner < max_outer {
                return Err(Error::InvalidInput(format!(
                    "ego {}: ring frequency order violated ({min_inner} < {max_outer})",
                    self.ego
                )));
            }
        }
        Ok(())
    }
}

pub fn build_ego_network(relationships: &[Relationship], clustering: &AlterClustering) -> Result<EgoNetwork> {
    let ego = match relationships.first() {
        Some(r) => r.ego.clone(),
        None => return Err(Error::InvalidInput("ego network without relationships".into())),
    };
    let mut frequencies = BTreeMap::new();
    for r in relationships {
        if r.ego != ego {
            return Err(Error::InvalidInput(format!(
                "relationships mix egos {ego} and {}",
                r.ego
            )));
        }
        if frequencies.insert(r.alter.clone(), r.frequency).is_some() {
            return Err(Error::InvalidInput(format!("duplicate alter {}", r.alter)));
        }
    }
    if clustering.assignment.len() != frequencies.len()
        || !clustering.assignment.keys().all(|a| frequencies.contains_key(a))
    {
        return Err(Error::InvalidInput(format!(
            "ego {ego}: clustering does not cover exactly the relationship alters"
        )));
    }
    let mut rings: Vec<Vec<UserId>> = vec![Vec::new(); clustering.modes.len()];
    for (alter, &label) in &clustering.assignment {
        let ring = rings.get_mut(label).ok_or_else(|| {
            Error::InvalidInput(format!("ego {ego}: cluster index {label} out of range"))
        })?;
        ring.push(alter.clone());
    }
    rings.retain(|r| !r.is_empty());
    for ring in &mut rings {
        ring.sort_by(|a, b| frequencies[b].total_cmp(&frequencies[a]).then(a.cmp(b)));
    }
    Ok(EgoNetwork {
        ego,
        rings,
        frequencies,
    })
}

/// Which rings contribute edges to a feature graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CircleSelector {
    Full,
    /// Rings 1 and 2.
    Inner,
    /// Rings 3 and beyond.
    Outer,
}

impl CircleSelector {
    pub fn includes_ring(self, ring: usize) -> bool {
        match self {
            CircleSelector::Full => true,
            CircleSelector::Inner => ring < 2,
            CircleSelector::Outer => ring >= 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEdge {
    pub ego: UserId,
    pub alter: UserId,
    pub weight: f64,
}

pub fn select_edges(networks: &[EgoNetwork], selector: CircleSelector) -> Vec<WeightedEdge> {
    networks
        .iter()
        .flat_map(|n| {
            n.rings
                .iter()
                .enumerate()
                .filter(move |(i, _)| selector.includes_ring(*i))
                .flat_map(move |(_, ring)| {
                    ring.iter().map(move |a| WeightedEdge {
                        ego: n.ego.clone(),
                        alter: a.clone(),
                        weight: n.frequencies[a],
                    })
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnmParams {
    /// Interaction kinds counted towards contact frequency.
    pub kinds: BTreeSet<InteractionKind>,
    /// Fixed mean-shift bandwidth; estimated per ego when absent.
    pub bandwidth: Option<f64>,
    /// Drop egos failing the activity rule.
    pub require_active: bool,
}

impl Default for EnmParams {
    fn default() -> Self {
        EnmParams {
            kinds: BTreeSet::from([InteractionKind::Reply, InteractionKind::Mention]),
            bandwidth: None,
            require_active: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnmBuild {
    pub networks: Vec<EgoNetwork>,
    /// Egos excluded by the activity rule.
    pub inactive: Vec<UserId>,
    /// Active egos without any qualifying interaction.
    pub empty: Vec<UserId>,
}

/// Builds an ego network for every ego in the log. Egos are processed in
/// parallel; the output is sorted by ego id either way.
pub fn build_all(
    events: &[InteractionEvent],
    window: ObservationWindow,
    params: &EnmParams,
) -> Result<EnmBuild> {
    let mut by_ego: HashMap<&str, Vec<&InteractionEvent>> = HashMap::new();
    for e in events {
        by_ego.entry(e.ego.as_str()).or_default().push(e);
    }
    let mut egos: Vec<(&str, Vec<&InteractionEvent>)> = by_ego.into_iter().collect();
    egos.sort_by(|a, b| a.0.cmp(b.0));

    enum Outcome {
        Built(EgoNetwork),
        Inactive(UserId),
        Empty(UserId),
    }

    let outcomes: Vec<Result<Outcome>> = egos
        .into_par_iter()
        .map(|(ego, mut evs)| {
            evs.sort_by_key(|e| e.ts);
            if params.require_active && !is_active_refs(&evs, window) {
                return Ok(Outcome::Inactive(ego.to_string()));
            }
            let rels = relationships_from(evs.iter().copied(), ego, &params.kinds, window);
            if rels.is_empty() {
                return Ok(Outcome::Empty(ego.to_string()));
            }
            let clustering = cluster_alters(&rels, params.bandwidth)
                .map_err(|e| e.context(format!("ego {ego}")))?;
            build_ego_network(&rels, &clustering).map(Outcome::Built)
        })
        .collect();

    let mut out = EnmBuild::default();
    for o in outcomes {
        match o? {
            Outcome::Built(n) => out.networks.push(n),
            Outcome::Inactive(u) => out.inactive.push(u),
            Outcome::Empty(u) => out.empty.push(u),
        }
    }
    Ok(out)
}

pub fn write_ego_networks<W: Write>(mut w: W, networks: &[EgoNetwork]) -> Result<()> {
    for n in networks {
        serde_json::to_writer(&mut w, n)?;
        w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn read_ego_networks<R: BufRead>(reader: R, source: &str) -> Result<Vec<EgoNetwork>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let n: EgoNetwork =
            serde_json::from_str(&line).map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        n.check_invariants()
            .map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        out.push(n);
    }
    Ok(out)
}

pub fn save_ego_networks(path: &Path, networks: &[EgoNetwork]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_ego_networks(&mut w, networks)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_ego_networks(path: &Path) -> Result<Vec<EgoNetwork>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ego_networks(std::io::BufReader::new(f), &path.display().to_string())
}
