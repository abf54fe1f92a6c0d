//! The reduced factor graph for one active user, and the genre histograms
//! that shape its local functions.
//!
//! Factor nodes are users other than the active user, variable nodes are all
//! items. Items the active user already rated are clamped to that rating.
//! Edges are numbered factor-major so per-edge message buffers can be flat
//! arrays.

use std::collections::{HashMap, VecDeque};
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{GenreSet, RatingMatrix, RatingScale};
use crate::distribution::{Distribution, LEVELS};
use crate::inference::LocalEvidence;

/// Which users become factor nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborhoodMode {
    /// Users sharing at least one rated item with the active user.
    #[default]
    TwoHop,
    /// Every user reachable from the active user by any path.
    AllUsers,
}

impl FromStr for NeighborhoodMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two-hop" | "2-hop" => Ok(NeighborhoodMode::TwoHop),
            "all" | "all-users" => Ok(NeighborhoodMode::AllUsers),
            other => Err(format!(
                "unknown neighborhood mode {other:?} (expected two-hop or all)"
            )),
        }
    }
}

impl std::fmt::Display for NeighborhoodMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NeighborhoodMode::TwoHop => "two-hop",
            NeighborhoodMode::AllUsers => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveGraph {
    active_user: usize,
    num_items: usize,
    /// Factor node slot -> user index, ascending.
    factors: Vec<u32>,
    factor_offsets: Vec<usize>,
    edge_factor: Vec<u32>,
    edge_item: Vec<u32>,
    edge_rating: Vec<u8>,
    /// Incoming edge ids grouped by item, each group in factor order.
    item_offsets: Vec<usize>,
    item_edges: Vec<u32>,
    clamps: Vec<Option<u8>>,
}

/// Builds the factor graph for active user `z` from the training matrix.
///
/// # Panics
///
/// If `z` is not a user index of `train`.
pub fn build_active_graph(train: &RatingMatrix, z: usize, mode: NeighborhoodMode) -> ActiveGraph {
    assert!(z < train.num_users(), "active user {z} out of range");
    let mut selected = vec![false; train.num_users()];
    match mode {
        NeighborhoodMode::TwoHop => {
            for &item in train.user_ratings(z).0 {
                for &user in train.item_ratings(item as usize).0 {
                    selected[user as usize] = true;
                }
            }
        }
        NeighborhoodMode::AllUsers => {
            let mut item_seen = vec![false; train.num_items()];
            let mut queue = VecDeque::from([z]);
            selected[z] = true;
            while let Some(user) = queue.pop_front() {
                for &item in train.user_ratings(user).0 {
                    if std::mem::replace(&mut item_seen[item as usize], true) {
                        continue;
                    }
                    for &other in train.item_ratings(item as usize).0 {
                        if !std::mem::replace(&mut selected[other as usize], true) {
                            queue.push_back(other as usize);
                        }
                    }
                }
            }
        }
    }
    selected[z] = false;

    let factors: Vec<u32> = (0..train.num_users() as u32)
        .filter(|&u| selected[u as usize])
        .collect();

    let mut factor_offsets = Vec::with_capacity(factors.len() + 1);
    factor_offsets.push(0);
    let mut edge_factor = Vec::new();
    let mut edge_item = Vec::new();
    let mut edge_rating = Vec::new();
    for (slot, &user) in factors.iter().enumerate() {
        let (items, ratings) = train.user_ratings(user as usize);
        edge_factor.extend(std::iter::repeat(slot as u32).take(items.len()));
        edge_item.extend_from_slice(items);
        edge_rating.extend_from_slice(ratings);
        factor_offsets.push(edge_item.len());
    }

    let num_items = train.num_items();
    let mut item_offsets = vec![0usize; num_items + 1];
    for &item in &edge_item {
        item_offsets[item as usize + 1] += 1;
    }
    for i in 0..num_items {
        item_offsets[i + 1] += item_offsets[i];
    }
    let mut cursor = item_offsets.clone();
    let mut item_edges = vec![0u32; edge_item.len()];
    for (edge, &item) in edge_item.iter().enumerate() {
        item_edges[cursor[item as usize]] = edge as u32;
        cursor[item as usize] += 1;
    }

    let mut clamps = vec![None; num_items];
    let (items, ratings) = train.user_ratings(z);
    for (&item, &rating) in items.iter().zip(ratings) {
        clamps[item as usize] = Some(rating);
    }

    ActiveGraph {
        active_user: z,
        num_items,
        factors,
        factor_offsets,
        edge_factor,
        edge_item,
        edge_rating,
        item_offsets,
        item_edges,
        clamps,
    }
}

impl ActiveGraph {
    pub fn active_user(&self) -> usize {
        self.active_user
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_item.len()
    }

    /// User indices of the factor nodes, ascending.
    pub fn factor_users(&self) -> &[u32] {
        &self.factors
    }

    pub fn factor_user(&self, slot: usize) -> usize {
        self.factors[slot] as usize
    }

    /// Slot of `user` among the factor nodes.
    pub fn factor_slot(&self, user: usize) -> Option<usize> {
        self.factors.binary_search(&(user as u32)).ok()
    }

    /// Edge ids of factor `slot` (its neighbors N_k).
    pub fn factor_edges(&self, slot: usize) -> std::ops::Range<usize> {
        self.factor_offsets[slot]..self.factor_offsets[slot + 1]
    }

    /// Edge ids incident to `item` (its raters N_a).
    pub fn item_edges(&self, item: usize) -> &[u32] {
        &self.item_edges[self.item_offsets[item]..self.item_offsets[item + 1]]
    }

    pub fn item_degree(&self, item: usize) -> usize {
        self.item_offsets[item + 1] - self.item_offsets[item]
    }

    pub fn edge_factor(&self, edge: usize) -> usize {
        self.edge_factor[edge] as usize
    }

    pub fn edge_item(&self, edge: usize) -> usize {
        self.edge_item[edge] as usize
    }

    pub fn edge_rating(&self, edge: usize) -> u8 {
        self.edge_rating[edge]
    }

    /// Edge between factor `slot` and `item`, if any.
    pub fn edge_between(&self, slot: usize, item: usize) -> Option<usize> {
        let range = self.factor_edges(slot);
        let start = range.start;
        self.edge_item[range]
            .binary_search(&(item as u32))
            .ok()
            .map(|pos| start + pos)
    }

    /// The active user's own rating of `item`, if it is clamped.
    pub fn clamp(&self, item: usize) -> Option<u8> {
        self.clamps[item]
    }

    pub fn is_clamped(&self, item: usize) -> bool {
        self.clamps[item].is_some()
    }

    pub fn num_clamped(&self) -> usize {
        self.clamps.iter().filter(|c| c.is_some()).count()
    }

    /// Writes `factor variable rating` lines using the matrix's raw ids.
    pub fn write_edge_list<W: Write>(&self, matrix: &RatingMatrix, mut out: W) -> io::Result<()> {
        for edge in 0..self.num_edges() {
            writeln!(
                out,
                "{} {} {}",
                matrix.raw_user_id(self.factor_user(self.edge_factor(edge))),
                matrix.raw_item_id(self.edge_item(edge)),
                self.edge_rating(edge)
            )?;
        }
        Ok(())
    }
}

/// Rating histograms of the active user that shape the local functions for
/// one item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenreHistogram {
    /// Items sharing a genre with the target item, bucketed by the active
    /// user's rating.
    pub counts: [u32; LEVELS],
    /// The active user's overall rating histogram.
    pub overall: [u32; LEVELS],
    /// The active user's mean rating, `None` if they rated nothing.
    pub average: Option<f64>,
}

impl GenreHistogram {
    /// `(count + 1) / sum(count + 1)` over the genre counts.
    pub fn smoothed_weights(&self) -> Distribution {
        Distribution::smoothed(self.counts)
    }

    /// The active user's smoothed overall histogram; uniform if they rated
    /// nothing.
    pub fn fallback_weights(&self) -> Distribution {
        Distribution::smoothed(self.overall)
    }

    /// Genre weights, or the fallback when there is no genre evidence.
    pub fn effective_weights(&self) -> Distribution {
        if self.counts.iter().all(|&c| c == 0) {
            self.fallback_weights()
        } else {
            self.smoothed_weights()
        }
    }
}

fn overall_histogram(train: &RatingMatrix, z: usize) -> ([u32; LEVELS], Option<f64>) {
    let mut overall = [0u32; LEVELS];
    let ratings = train.user_ratings(z).1;
    for &r in ratings {
        overall[RatingScale::index(r)] += 1;
    }
    let average = (!ratings.is_empty())
        .then(|| ratings.iter().map(|&r| r as f64).sum::<f64>() / ratings.len() as f64);
    (overall, average)
}

/// Genre histogram of active user `z` for item `a`. `genres` is indexed by
/// dense item index.
pub fn genre_stats(
    train: &RatingMatrix,
    genres: &[GenreSet],
    z: usize,
    a: usize,
) -> GenreHistogram {
    let (overall, average) = overall_histogram(train, z);
    let mut counts = [0u32; LEVELS];
    let (items, ratings) = train.user_ratings(z);
    for (&j, &r) in items.iter().zip(ratings) {
        if genres[j as usize].intersects(genres[a]) {
            counts[RatingScale::index(r)] += 1;
        }
    }
    GenreHistogram {
        counts,
        overall,
        average,
    }
}

/// Genre histograms of one active user for every item, plus the fallback
/// prior. This is the evidence provider used during inference.
#[derive(Debug, Clone)]
pub struct GenreStats {
    histograms: Vec<GenreHistogram>,
    weights: Vec<Distribution>,
    prior: Distribution,
}

impl GenreStats {
    pub fn for_user(train: &RatingMatrix, genres: &[GenreSet], z: usize) -> Self {
        let (overall, average) = overall_histogram(train, z);
        // Group the user's ratings by distinct genre set; far fewer sets than
        // items in practice.
        let mut by_set: HashMap<GenreSet, [u32; LEVELS]> = HashMap::new();
        let (items, ratings) = train.user_ratings(z);
        for (&j, &r) in items.iter().zip(ratings) {
            by_set.entry(genres[j as usize]).or_default()[RatingScale::index(r)] += 1;
        }
        let mut groups: Vec<(GenreSet, [u32; LEVELS])> = by_set.into_iter().collect();
        groups.sort_by_key(|g| g.0 .0);

        let histograms: Vec<GenreHistogram> = genres
            .iter()
            .map(|&g| {
                let mut counts = [0u32; LEVELS];
                for (set, c) in &groups {
                    if set.intersects(g) {
                        for (acc, x) in counts.iter_mut().zip(c) {
                            *acc += x;
                        }
                    }
                }
                GenreHistogram {
                    counts,
                    overall,
                    average,
                }
            })
            .collect();
        let weights = histograms.iter().map(|h| h.effective_weights()).collect();
        GenreStats {
            histograms,
            weights,
            prior: Distribution::smoothed(overall),
        }
    }

    pub fn histogram(&self, item: usize) -> &GenreHistogram {
        &self.histograms[item]
    }
}

impl LocalEvidence for GenreStats {
    fn weights(&self, item: usize) -> Distribution {
        self.weights[item]
    }

    fn prior(&self) -> Distribution {
        self.prior
    }
}
