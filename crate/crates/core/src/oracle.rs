//! Exact marginals by enumeration, for checking inference on tiny graphs.
//!
//! The joint over the unclamped items is the product over factor nodes of
//! per-item local functions, with each factor's confidence held fixed.
//! Clamped items are fixed to the active user's rating. Every joint
//! assignment is enumerated and all items but the target are summed out.

use thiserror::Error;

use crate::distribution::{Distribution, LEVELS};
use crate::graph::ActiveGraph;

/// Largest joint state space the oracle will enumerate.
pub const MAX_JOINT_STATES: usize = 625;
/// Largest number of factor nodes in a tiny instance.
pub const MAX_FACTORS: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("{unclamped} unclamped items give {states} joint states, above the cap of {MAX_JOINT_STATES}")]
    TooManyStates { unclamped: usize, states: usize },
    #[error("{0} factor nodes exceed the cap of {MAX_FACTORS}")]
    TooManyFactors(usize),
    #[error("item {0} is clamped")]
    Clamped(usize),
    #[error("item {item} out of range for {num_items} items")]
    NoSuchItem { item: usize, num_items: usize },
    #[error("every joint assignment has zero weight")]
    ZeroMass,
}

/// A small graph with frozen confidences and per-item uncertainty weights.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub graph: ActiveGraph,
    /// Confidence per factor slot.
    pub confidences: Vec<f64>,
    /// Uncertainty weights per item.
    pub weights: Vec<Distribution>,
}

impl TinyInstance {
    pub fn new(
        graph: ActiveGraph,
        confidences: Vec<f64>,
        weights: Vec<Distribution>,
    ) -> Result<Self, OracleError> {
        if graph.num_factors() > MAX_FACTORS {
            return Err(OracleError::TooManyFactors(graph.num_factors()));
        }
        let unclamped = (0..graph.num_items())
            .filter(|&a| !graph.is_clamped(a))
            .count();
        let states = LEVELS.checked_pow(unclamped as u32).unwrap_or(usize::MAX);
        if states > MAX_JOINT_STATES {
            return Err(OracleError::TooManyStates { unclamped, states });
        }
        assert_eq!(confidences.len(), graph.num_factors());
        assert_eq!(weights.len(), graph.num_items());
        Ok(TinyInstance {
            graph,
            confidences,
            weights,
        })
    }

    /// Local function of the factor owning `edge`, evaluated at level `level`.
    fn local(&self, edge: usize, level: usize) -> f64 {
        let r = self.confidences[self.graph.edge_factor(edge)];
        let w = self.weights[self.graph.edge_item(edge)][level];
        let own = (self.graph.edge_rating(edge) - 1) as usize;
        if level == own {
            r + (1.0 - r) * w
        } else {
            (1.0 - r) * w
        }
    }
}

/// Exact marginal of unclamped item `a`.
pub fn exact_marginal(inst: &TinyInstance, a: usize) -> Result<Distribution, OracleError> {
    let g = &inst.graph;
    if a >= g.num_items() {
        return Err(OracleError::NoSuchItem {
            item: a,
            num_items: g.num_items(),
        });
    }
    if g.is_clamped(a) {
        return Err(OracleError::Clamped(a));
    }
    let free: Vec<usize> = (0..g.num_items()).filter(|&i| !g.is_clamped(i)).collect();
    let target = free.iter().position(|&i| i == a).expect("a is unclamped");
    let states = LEVELS.pow(free.len() as u32);

    // Level of every item under the current assignment; clamped items fixed.
    let mut level: Vec<usize> = (0..g.num_items())
        .map(|i| g.clamp(i).map_or(0, |r| (r - 1) as usize))
        .collect();
    let mut marginal = [0.0; LEVELS];
    for code in 0..states {
        let mut rest = code;
        for &i in &free {
            level[i] = rest % LEVELS;
            rest /= LEVELS;
        }
        let mut weight = 1.0;
        for slot in 0..g.num_factors() {
            for e in g.factor_edges(slot) {
                weight *= inst.local(e, level[g.edge_item(e)]);
            }
        }
        marginal[level[free[target]]] += weight;
    }
    let total: f64 = marginal.iter().sum();
    if !(total > 0.0) {
        return Err(OracleError::ZeroMass);
    }
    Ok(Distribution(marginal.map(|m| m / total)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Entry, RatingMatrix};
    use crate::graph::{build_active_graph, NeighborhoodMode};

    fn graph(users: usize, items: usize, triples: &[(u32, u32, u8)]) -> ActiveGraph {
        let entries: Vec<Entry> = triples
            .iter()
            .map(|&(user, item, rating)| Entry { user, item, rating })
            .collect();
        let m = RatingMatrix::from_entries(users, items, &entries).unwrap();
        build_active_graph(&m, 0, NeighborhoodMode::AllUsers)
    }

    #[test]
    fn single_certain_rater() {
        let g = graph(2, 2, &[(0, 0, 2), (1, 0, 2), (1, 1, 4)]);
        let inst = TinyInstance::new(g, vec![1.0], vec![Distribution::uniform(); 2]).unwrap();
        assert_eq!(
            exact_marginal(&inst, 1).unwrap(),
            Distribution::indicator(4)
        );
    }

    #[test]
    fn marginal_is_normalized_and_items_are_independent() {
        // Item 1 rated by users 1, 2; item 2 by user 3 only.
        let g = graph(
            4,
            3,
            &[
                (0, 0, 3),
                (1, 0, 3),
                (1, 1, 5),
                (2, 1, 2),
                (2, 0, 1),
                (3, 0, 4),
                (3, 2, 1),
            ],
        );
        let w: Vec<Distribution> = (0..3)
            .map(|a| Distribution::smoothed([a, 2, 0, 1, 3]))
            .collect();
        let inst = TinyInstance::new(g.clone(), vec![0.3, 0.6, 0.8], w.clone()).unwrap();
        let m1 = exact_marginal(&inst, 1).unwrap();
        assert!((m1.sum() - 1.0).abs() < 1e-12);

        // Changing item 2's only rater leaves item 1 untouched.
        let other = TinyInstance::new(g, vec![0.3, 0.6, 0.05], w).unwrap();
        assert!(exact_marginal(&other, 1).unwrap().max_abs_diff(&m1) < 1e-15);
    }

    #[test]
    fn refuses_large_instances() {
        let triples: Vec<(u32, u32, u8)> = (1..=5)
            .map(|i| (1, i, 3))
            .chain([(0, 0, 1), (1, 0, 1)])
            .collect();
        let g = graph(2, 6, &triples);
        let err = TinyInstance::new(g, vec![0.5], vec![Distribution::uniform(); 6]).unwrap_err();
        assert_eq!(
            err,
            OracleError::TooManyStates {
                unclamped: 5,
                states: 3125
            }
        );

        let triples: Vec<(u32, u32, u8)> = (0..=7).map(|u| (u, 0, 3)).collect();
        let g = graph(8, 1, &triples);
        let err = TinyInstance::new(g, vec![0.5; 7], vec![Distribution::uniform()]).unwrap_err();
        assert_eq!(err, OracleError::TooManyFactors(7));
    }

    #[test]
    fn clamped_target_is_rejected() {
        let g = graph(2, 2, &[(0, 0, 2), (1, 0, 2), (1, 1, 4)]);
        let inst = TinyInstance::new(g, vec![0.5], vec![Distribution::uniform(); 2]).unwrap();
        assert_eq!(exact_marginal(&inst, 0), Err(OracleError::Clamped(0)));
    }
}
