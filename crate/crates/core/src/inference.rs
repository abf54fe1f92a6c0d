//! Belief propagation over an [`ActiveGraph`].
//!
//! Each iteration runs a synchronous flooding schedule:
//!
//! 1. every factor node `k` sends `lambda[k -> a]`, its local function for
//!    item `a` evaluated at the previous confidence `R_k`;
//! 2. every item sends `mu[a -> k]`, the normalized product of the lambdas
//!    from its other raters (or the active user's rating, if clamped);
//! 3. every confidence is recomputed as one minus the mean rating
//!    inconsistency of `k` against the mu messages it received;
//! 4. every unclamped item forms its posterior from all its raters and
//!    predicts the posterior mean.
//!
//! Iteration stops once no prediction moves by `epsilon` or more, or at
//! `max_iterations`.
//!
//! The free functions [`factor_message`], [`variable_message`],
//! [`update_confidence`] and [`posterior_belief`] evaluate single messages
//! from a [`BeliefState`] by definition. [`iterate`] computes the same
//! quantities in bulk: each item's posterior is accumulated once in the log
//! domain and the per-edge `mu` is obtained by dividing out the recipient's
//! own lambda.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{RatingMatrix, RatingScale};
use crate::distribution::{Distribution, LEVELS};
use crate::graph::{ActiveGraph, NeighborhoodMode};

/// Confidences are capped below one when forming lambda messages so every
/// lambda coordinate stays strictly positive.
pub const CONFIDENCE_CAP: f64 = 1.0 - 1e-12;

/// Tolerance on `sum(p) == 1` for every emitted message.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("initial confidence must lie in (0, 1), got {0}")]
    InitialConfidence(f64),
    #[error("convergence epsilon must be positive, got {0}")]
    Epsilon(f64),
    #[error("max iterations must be at least 1")]
    MaxIterations,
    #[error("imported confidence for user {user} must lie in [0, 1], got {value}")]
    ImportedConfidence { user: u32, value: f64 },
}

#[derive(Debug, Error)]
pub enum ConfidenceIoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Range(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Confidence assigned to every factor node before the first iteration.
    pub initial_confidence: f64,
    /// Stop once the largest prediction change falls below this.
    pub epsilon: f64,
    pub max_iterations: usize,
    pub mode: NeighborhoodMode,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            initial_confidence: 0.5,
            epsilon: 1e-3,
            max_iterations: 20,
            mode: NeighborhoodMode::TwoHop,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let rho0 = self.initial_confidence;
        if !(rho0 > 0.0 && rho0 < 1.0) {
            return Err(ConfigError::InitialConfidence(rho0));
        }
        if !(self.epsilon > 0.0) {
            return Err(ConfigError::Epsilon(self.epsilon));
        }
        if self.max_iterations == 0 {
            return Err(ConfigError::MaxIterations);
        }
        Ok(())
    }
}

/// Per-item evidence from the active user's own history: the weights that
/// split a rater's uncertainty across rating levels, and the prior used for
/// items no retained user rated.
pub trait LocalEvidence {
    fn weights(&self, item: usize) -> Distribution;
    fn prior(&self) -> Distribution;
}

/// Explicit per-item weights, for synthetic instances.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedEvidence {
    pub weights: Vec<Distribution>,
    pub prior: Distribution,
}

impl LocalEvidence for FixedEvidence {
    fn weights(&self, item: usize) -> Distribution {
        self.weights[item]
    }

    fn prior(&self) -> Distribution {
        self.prior
    }
}

/// Probability that the active user would rate an item at each level, as
/// implied by one rater who gave `rating` with confidence `confidence`. The
/// mass `1 - confidence` is spread by `weights`.
pub fn local_function(rating: u8, confidence: f64, weights: &Distribution) -> Distribution {
    let doubt = 1.0 - confidence;
    let mut p = weights.0.map(|w| doubt * w);
    p[RatingScale::index(rating)] += confidence;
    Distribution(p)
}

/// Counters accumulated while messages are emitted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Lambda and mu messages emitted.
    pub messages: u64,
    /// Messages whose entries were negative, non-finite, or did not sum to
    /// one within [`NORMALIZATION_TOL`].
    pub normalization_violations: u64,
    pub max_normalization_error: f64,
    /// Products that vanished in every coordinate and were replaced by the
    /// prior.
    pub underflow_fallbacks: u64,
}

impl Diagnostics {
    fn record(&mut self, message: &Distribution) {
        self.messages += 1;
        let err = (message.sum() - 1.0).abs();
        if err.is_nan() {
            self.max_normalization_error = f64::INFINITY;
        } else if err > self.max_normalization_error {
            self.max_normalization_error = err;
        }
        if !message.is_normalized(NORMALIZATION_TOL) {
            self.normalization_violations += 1;
        }
    }

    pub fn merge(&mut self, other: &Diagnostics) {
        self.messages += other.messages;
        self.normalization_violations += other.normalization_violations;
        self.max_normalization_error = self
            .max_normalization_error
            .max(other.max_normalization_error);
        self.underflow_fallbacks += other.underflow_fallbacks;
    }
}

/// Mutable state of one inference session.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    /// Completed iterations.
    pub iteration: usize,
    /// Confidence per factor slot after the last completed iteration.
    pub confidences: Vec<f64>,
    /// Lambda per edge from the last completed iteration.
    pub lambda: Vec<Distribution>,
    /// Mu per edge from the last completed iteration.
    pub mu: Vec<Distribution>,
    /// Posterior per item. Clamped items hold the indicator of the active
    /// user's rating.
    pub beliefs: Vec<Distribution>,
    pub predictions: Vec<f64>,
    /// Items whose prediction comes from the prior rather than messages.
    pub fallback: Vec<bool>,
    /// `history[v - 1]` holds the predictions after iteration `v`.
    pub history: Vec<Vec<f64>>,
    pub converged: bool,
    pub diagnostics: Diagnostics,
}

impl BeliefState {
    /// State before the first iteration: the given confidences, and every
    /// unclamped item at the prior.
    pub fn new(graph: &ActiveGraph, evidence: &dyn LocalEvidence, confidences: Vec<f64>) -> Self {
        assert_eq!(confidences.len(), graph.num_factors());
        let prior = evidence.prior();
        let beliefs: Vec<Distribution> = (0..graph.num_items())
            .map(|a| graph.clamp(a).map_or(prior, Distribution::indicator))
            .collect();
        let predictions = beliefs.iter().map(Distribution::expectation).collect();
        let fallback = (0..graph.num_items())
            .map(|a| !graph.is_clamped(a) && graph.item_degree(a) == 0)
            .collect();
        let blank = Distribution([0.0; LEVELS]);
        BeliefState {
            iteration: 0,
            confidences,
            lambda: vec![blank; graph.num_edges()],
            mu: vec![blank; graph.num_edges()],
            beliefs,
            predictions,
            fallback,
            history: Vec::new(),
            converged: false,
            diagnostics: Diagnostics::default(),
        }
    }

    /// Every factor node at `initial_confidence`.
    pub fn initial(
        graph: &ActiveGraph,
        evidence: &dyn LocalEvidence,
        config: &InferenceConfig,
    ) -> Self {
        Self::new(
            graph,
            evidence,
            vec![config.initial_confidence; graph.num_factors()],
        )
    }

    pub fn prediction(&self, item: usize) -> f64 {
        self.predictions[item]
    }

    /// Predictions after iteration `v` (1-based). Iterations past the last
    /// completed one return the final predictions.
    pub fn predictions_at(&self, v: usize) -> &[f64] {
        match self.history.len() {
            0 => &self.predictions,
            n => &self.history[v.clamp(1, n) - 1],
        }
    }
}

/// Lambda from factor of `edge` to its item, using the state's confidences.
pub fn factor_message(
    graph: &ActiveGraph,
    evidence: &dyn LocalEvidence,
    state: &BeliefState,
    edge: usize,
) -> Distribution {
    let confidence = state.confidences[graph.edge_factor(edge)].min(CONFIDENCE_CAP);
    local_function(
        graph.edge_rating(edge),
        confidence,
        &evidence.weights(graph.edge_item(edge)),
    )
}

fn product_of(state: &BeliefState, edges: impl Iterator<Item = usize>) -> Option<Distribution> {
    let mut logs = [0.0; LEVELS];
    for e in edges {
        for (acc, p) in logs.iter_mut().zip(state.lambda[e].0) {
            *acc += p.ln();
        }
    }
    Distribution::from_log_weights(logs)
}

/// Mu from the item of `edge` back to its factor, from the state's lambdas.
pub fn variable_message(
    graph: &ActiveGraph,
    evidence: &dyn LocalEvidence,
    state: &BeliefState,
    edge: usize,
) -> Distribution {
    let item = graph.edge_item(edge);
    if let Some(rating) = graph.clamp(item) {
        return Distribution::indicator(rating);
    }
    let others = graph
        .item_edges(item)
        .iter()
        .map(|&e| e as usize)
        .filter(|&e| e != edge);
    if graph.item_degree(item) == 1 {
        return evidence.prior();
    }
    product_of(state, others).unwrap_or_else(|| evidence.prior())
}

/// Posterior of an unclamped item: the normalized product of the lambdas
/// from all its raters, or the prior when it has none.
pub fn posterior_belief(
    graph: &ActiveGraph,
    evidence: &dyn LocalEvidence,
    state: &BeliefState,
    item: usize,
) -> Distribution {
    if graph.item_degree(item) == 0 {
        return evidence.prior();
    }
    product_of(state, graph.item_edges(item).iter().map(|&e| e as usize))
        .unwrap_or_else(|| evidence.prior())
}

/// Confidence of factor `slot` from the mu messages it received: one minus
/// its mean absolute deviation, scaled by the largest possible deviation.
pub fn update_confidence(graph: &ActiveGraph, state: &BeliefState, slot: usize) -> f64 {
    let edges = graph.factor_edges(slot);
    let degree = edges.len();
    if degree == 0 {
        return state.confidences[slot];
    }
    let inconsistency: f64 = edges
        .map(|e| state.mu[e].mean_abs_deviation(graph.edge_rating(e)))
        .sum();
    (1.0 - inconsistency / (RatingScale::RHO * degree as f64)).clamp(0.0, 1.0)
}

/// Predicted rating of `item`: the posterior mean, or the active user's own
/// rating for clamped items.
pub fn predict(state: &BeliefState, item: usize) -> f64 {
    state.predictions[item]
}

/// One synchronous iteration. Returns the largest absolute prediction change.
pub fn iterate(graph: &ActiveGraph, evidence: &dyn LocalEvidence, state: &mut BeliefState) -> f64 {
    let num_items = graph.num_items();
    let prior = evidence.prior();
    let weights: Vec<Option<Distribution>> = (0..num_items)
        .map(|a| (graph.item_degree(a) > 0).then(|| evidence.weights(a)))
        .collect();

    // Lambdas from the previous confidences.
    for slot in 0..graph.num_factors() {
        let confidence = state.confidences[slot].min(CONFIDENCE_CAP);
        for e in graph.factor_edges(slot) {
            let w = weights[graph.edge_item(e)]
                .as_ref()
                .expect("item has a rater");
            let msg = local_function(graph.edge_rating(e), confidence, w);
            state.diagnostics.record(&msg);
            state.lambda[e] = msg;
        }
    }

    // Posteriors and mu messages.
    let mut max_change: f64 = 0.0;
    let mut next_predictions = state.predictions.clone();
    for a in 0..num_items {
        let edges = graph.item_edges(a);
        if let Some(rating) = graph.clamp(a) {
            let msg = Distribution::indicator(rating);
            for &e in edges {
                state.diagnostics.record(&msg);
                state.mu[e as usize] = msg;
            }
            continue;
        }
        if edges.is_empty() {
            continue;
        }
        let mut logs = [0.0; LEVELS];
        for &e in edges {
            for (acc, p) in logs.iter_mut().zip(state.lambda[e as usize].0) {
                *acc += p.ln();
            }
        }
        let posterior = match Distribution::from_log_weights(logs) {
            Some(p) => {
                state.fallback[a] = false;
                p
            }
            None => {
                state.diagnostics.underflow_fallbacks += 1;
                state.fallback[a] = true;
                prior
            }
        };
        for &e in edges {
            let e = e as usize;
            let msg = if edges.len() == 1 {
                prior
            } else {
                let lambda = &state.lambda[e];
                let mut ratio = [0.0; LEVELS];
                for (l, r) in ratio.iter_mut().enumerate() {
                    *r = posterior[l] / lambda[l];
                }
                Distribution::normalized(ratio).unwrap_or_else(|| {
                    state.diagnostics.underflow_fallbacks += 1;
                    variable_message(graph, evidence, state, e)
                })
            };
            state.diagnostics.record(&msg);
            state.mu[e] = msg;
        }
        state.beliefs[a] = posterior;
        let g = posterior.expectation();
        max_change = max_change.max((g - state.predictions[a]).abs());
        next_predictions[a] = g;
    }

    // Confidences from the fresh mu messages.
    let next_confidences: Vec<f64> = (0..graph.num_factors())
        .map(|slot| update_confidence(graph, state, slot))
        .collect();
    state.confidences = next_confidences;
    state.predictions = next_predictions;
    state.history.push(state.predictions.clone());
    state.iteration += 1;
    max_change
}

/// Runs iterations from `state` until convergence or `config.max_iterations`
/// total iterations.
pub fn run_from(
    graph: &ActiveGraph,
    evidence: &dyn LocalEvidence,
    config: &InferenceConfig,
    mut state: BeliefState,
) -> BeliefState {
    while state.iteration < config.max_iterations {
        let change = iterate(graph, evidence, &mut state);
        if change < config.epsilon {
            state.converged = true;
            break;
        }
    }
    state
}

/// Full inference session for the graph's active user, starting every
/// factor node at `config.initial_confidence`.
pub fn run_inference(
    graph: &ActiveGraph,
    evidence: &dyn LocalEvidence,
    config: &InferenceConfig,
) -> BeliefState {
    run_from(
        graph,
        evidence,
        config,
        BeliefState::initial(graph, evidence, config),
    )
}

/// Confidences carried between sessions, keyed by user index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfidenceTable(pub HashMap<usize, f64>);

#[derive(Serialize, Deserialize)]
struct ConfidenceRow {
    user: u32,
    confidence: f64,
}

impl ConfidenceTable {
    pub fn from_state(graph: &ActiveGraph, state: &BeliefState) -> Self {
        ConfidenceTable(
            graph
                .factor_users()
                .iter()
                .zip(&state.confidences)
                .map(|(&u, &r)| (u as usize, r))
                .collect(),
        )
    }

    /// Per-slot confidences for `graph`, with `default` for users not in the
    /// table.
    pub fn confidences_for(&self, graph: &ActiveGraph, default: f64) -> Vec<f64> {
        graph
            .factor_users()
            .iter()
            .map(|&u| self.0.get(&(u as usize)).copied().unwrap_or(default))
            .collect()
    }

    /// Writes `user,confidence` rows with raw user ids, ordered by user.
    pub fn write_csv<W: Write>(
        &self,
        matrix: &RatingMatrix,
        out: W,
    ) -> Result<(), ConfidenceIoError> {
        let mut rows: Vec<_> = self.0.iter().map(|(&u, &r)| (u, r)).collect();
        rows.sort_by_key(|r| r.0);
        let mut w = csv::Writer::from_writer(out);
        for (user, confidence) in rows {
            w.serialize(ConfidenceRow {
                user: matrix.raw_user_id(user),
                confidence,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `user,confidence` rows; users absent from `matrix` are skipped.
    pub fn read_csv<R: Read>(matrix: &RatingMatrix, input: R) -> Result<Self, ConfidenceIoError> {
        let mut table = HashMap::new();
        for row in csv::Reader::from_reader(input).deserialize() {
            let row: ConfidenceRow = row?;
            if !(0.0..=1.0).contains(&row.confidence) {
                return Err(ConfigError::ImportedConfidence {
                    user: row.user,
                    value: row.confidence,
                }
                .into());
            }
            if let Some(idx) = matrix.user_index(row.user) {
                table.insert(idx, row.confidence);
            }
        }
        Ok(ConfidenceTable(table))
    }
}

/// Writes `active_user,iteration,item,prediction` rows for every unclamped
/// item at every completed iteration, with raw ids.
pub fn write_trace<W: Write>(
    matrix: &RatingMatrix,
    graph: &ActiveGraph,
    state: &BeliefState,
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["active_user", "iteration", "item", "prediction"])?;
    let user = matrix.raw_user_id(graph.active_user()).to_string();
    for (v, predictions) in state.history.iter().enumerate() {
        for (item, g) in predictions.iter().enumerate() {
            if graph.is_clamped(item) {
                continue;
            }
            w.write_record(&[
                user.clone(),
                (v + 1).to_string(),
                matrix.raw_item_id(item).to_string(),
                format!("{g:.6}"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
