//! Scoring and experiment orchestration.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{GenreSet, RatingMatrix, TestRating};
use crate::graph::{build_active_graph, GenreStats, NeighborhoodMode};
use crate::inference::{run_inference, ConfigError, Diagnostics, InferenceConfig};

/// Published RMSE of the correlation-based neighborhood model on MovieLens 100K.
pub const CORNGBR_RMSE: f64 = 0.9406;
/// Published RMSE of a 50-factor SVD model on MovieLens 100K.
pub const SVD_RMSE: f64 = 0.9046;
/// Published RMSE of the per-movie average on MovieLens 100K.
pub const MOVIE_AVG_RMSE: f64 = 1.053;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("no prediction for user {user}, item {item}")]
    MissingPrediction { user: u32, item: u32 },
    #[error("precision cutoff K must be at least 1")]
    ZeroCutoff,
    #[error("no test user has a relevant item at threshold {0}")]
    NoRelevantUsers(u8),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub user: u32,
    pub item: u32,
    pub value: f64,
}

fn index_predictions(predictions: &[Prediction]) -> HashMap<(u32, u32), f64> {
    predictions
        .iter()
        .map(|p| ((p.user, p.item), p.value))
        .collect()
}

/// Root mean squared error over every pair in `truth`.
pub fn rmse(predictions: &[Prediction], truth: &[TestRating]) -> Result<f64, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let by_key = index_predictions(predictions);
    let mut sorted: Vec<&TestRating> = truth.iter().collect();
    sorted.sort_unstable();
    let mut sum = 0.0;
    for t in sorted {
        let g = by_key
            .get(&(t.user, t.item))
            .ok_or(EvalError::MissingPrediction {
                user: t.user,
                item: t.item,
            })?;
        let d = g - t.rating as f64;
        sum += d * d;
    }
    Ok((sum / truth.len() as f64).sqrt())
}

/// Per-item mean training rating, falling back to the global training mean.
#[derive(Debug, Clone)]
pub struct MovieAvg {
    means: Vec<Option<f64>>,
    global: f64,
}

impl MovieAvg {
    pub fn fit(train: &RatingMatrix) -> Self {
        let means = (0..train.num_items())
            .map(|a| {
                let ratings = train.item_ratings(a).1;
                (!ratings.is_empty())
                    .then(|| ratings.iter().map(|&r| r as f64).sum::<f64>() / ratings.len() as f64)
            })
            .collect();
        MovieAvg {
            means,
            global: train.global_mean(),
        }
    }

    pub fn predict(&self, item: usize) -> f64 {
        self.means[item].unwrap_or(self.global)
    }

    pub fn predict_all(&self, test: &[TestRating]) -> Vec<Prediction> {
        test.iter()
            .map(|t| Prediction {
                user: t.user,
                item: t.item,
                value: self.predict(t.item as usize),
            })
            .collect()
    }
}

/// Mean training rating of `item`; the user is ignored.
pub fn movie_avg_predict(train: &RatingMatrix, _user: usize, item: usize) -> f64 {
    let ratings = train.item_ratings(item).1;
    if ratings.is_empty() {
        train.global_mean()
    } else {
        ratings.iter().map(|&r| r as f64).sum::<f64>() / ratings.len() as f64
    }
}

/// Mean over users of the fraction of their top-`k` test items (ranked by
/// predicted rating, ties by ascending item) whose true rating is at least
/// `threshold`. Only users with at least one relevant test item count. A
/// user with fewer than `k` test items is scored over all of them.
pub fn precision_at_k(
    predictions: &[Prediction],
    truth: &[TestRating],
    k: usize,
    threshold: u8,
) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroCutoff);
    }
    let by_key = index_predictions(predictions);
    let mut per_user: BTreeMap<u32, Vec<(f64, u32, bool)>> = BTreeMap::new();
    for t in truth {
        let g = by_key
            .get(&(t.user, t.item))
            .ok_or(EvalError::MissingPrediction {
                user: t.user,
                item: t.item,
            })?;
        per_user
            .entry(t.user)
            .or_default()
            .push((*g, t.item, t.rating >= threshold));
    }
    let mut total = 0.0;
    let mut users = 0usize;
    for ranked in per_user.values_mut() {
        if !ranked.iter().any(|r| r.2) {
            continue;
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let top = &ranked[..k.min(ranked.len())];
        total += top.iter().filter(|r| r.2).count() as f64 / top.len() as f64;
        users += 1;
    }
    if users == 0 {
        return Err(EvalError::NoRelevantUsers(threshold));
    }
    Ok(total / users as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub inference: InferenceConfig,
    pub precision_k: Vec<usize>,
    pub relevance_threshold: u8,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            inference: InferenceConfig::default(),
            precision_k: vec![5, 10],
            relevance_threshold: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageStats {
    pub messages: u64,
    pub normalization_violations: u64,
    pub max_normalization_error: f64,
    pub underflow_fallbacks: u64,
}

impl From<Diagnostics> for MessageStats {
    fn from(d: Diagnostics) -> Self {
        MessageStats {
            messages: d.messages,
            normalization_violations: d.normalization_violations,
            max_normalization_error: d.max_normalization_error,
            underflow_fallbacks: d.underflow_fallbacks,
        }
    }
}

/// Deterministic summary of one experiment. Wall-clock figures live in
/// [`UserRun`] instead, so reruns serialize byte-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: NeighborhoodMode,
    pub active_users: usize,
    pub test_pairs: usize,
    pub rmse: f64,
    /// `rmse_curve[v - 1]` is the RMSE after iteration `v`; users that
    /// converged earlier contribute their final predictions.
    pub rmse_curve: Vec<f64>,
    pub movie_avg_rmse: f64,
    pub precision_at_k: BTreeMap<usize, f64>,
    pub relevance_threshold: u8,
    pub mean_iterations: f64,
    pub median_iterations: f64,
    pub converged_fraction: f64,
    /// Fraction of test pairs predicted from messages rather than the prior.
    pub coverage: f64,
    pub message_stats: MessageStats,
}

/// Per-active-user outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRun {
    pub user: u32,
    pub ratings_count: usize,
    pub factors: usize,
    pub edges: usize,
    pub iterations: usize,
    pub converged: bool,
    pub millis: f64,
    pub diagnostics: Diagnostics,
    /// Test pairs of this user: item, truth, predictions per iteration
    /// (padded with the final value), and whether the prior was used.
    pub pairs: Vec<PairTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairTrace {
    pub item: u32,
    pub truth: u8,
    pub per_iteration: Vec<f64>,
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: EvalReport,
    pub runs: Vec<UserRun>,
}

impl Experiment {
    /// Final predictions for every test pair.
    pub fn predictions(&self) -> Vec<Prediction> {
        self.predictions_at(self.report.rmse_curve.len())
    }

    /// Predictions after iteration `v` (1-based).
    pub fn predictions_at(&self, v: usize) -> Vec<Prediction> {
        self.runs
            .iter()
            .flat_map(|run| {
                run.pairs.iter().map(move |p| Prediction {
                    user: run.user,
                    item: p.item,
                    value: p.per_iteration[v - 1],
                })
            })
            .collect()
    }

    /// `iteration,rmse` rows.
    pub fn write_convergence_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "rmse"])?;
        for (v, r) in self.report.rmse_curve.iter().enumerate() {
            w.write_record(&[(v + 1).to_string(), format!("{r:.10}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `user,item,rating,prediction` rows with raw ids, final predictions.
    pub fn write_predictions_csv<W: Write>(
        &self,
        matrix: &RatingMatrix,
        out: W,
    ) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user", "item", "rating", "prediction"])?;
        for run in &self.runs {
            for p in &run.pairs {
                w.write_record(&[
                    matrix.raw_user_id(run.user as usize).to_string(),
                    matrix.raw_item_id(p.item as usize).to_string(),
                    p.truth.to_string(),
                    format!(
                        "{:.10}",
                        p.per_iteration.last().expect("at least one iteration")
                    ),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `user,ratings_count,graph_size,ms` rows with raw user ids.
    pub fn write_timings_csv<W: Write>(
        &self,
        matrix: &RatingMatrix,
        out: W,
    ) -> Result<(), csv::Error> {
        write_timings(matrix, &self.runs, out)
    }
}

pub fn write_timings<W: Write>(
    matrix: &RatingMatrix,
    runs: &[UserRun],
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user", "ratings_count", "graph_size", "ms"])?;
    for run in runs {
        w.write_record(&[
            matrix.raw_user_id(run.user as usize).to_string(),
            run.ratings_count.to_string(),
            run.edges.to_string(),
            format!("{:.3}", run.millis),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs inference for one active user and records the predictions of the
/// given test items at every iteration up to `max_iterations`.
pub fn run_user(
    train: &RatingMatrix,
    genres: &[GenreSet],
    user: usize,
    test_items: &[(u32, u8)],
    config: &InferenceConfig,
) -> UserRun {
    let start = Instant::now();
    let graph = build_active_graph(train, user, config.mode);
    let stats = GenreStats::for_user(train, genres, user);
    let state = run_inference(&graph, &stats, config);
    let millis = start.elapsed().as_secs_f64() * 1e3;
    let pairs = test_items
        .iter()
        .map(|&(item, truth)| PairTrace {
            item,
            truth,
            per_iteration: (1..=config.max_iterations)
                .map(|v| state.predictions_at(v)[item as usize])
                .collect(),
            fallback: state.fallback[item as usize],
        })
        .collect();
    UserRun {
        user: user as u32,
        ratings_count: train.user_degree(user),
        factors: graph.num_factors(),
        edges: graph.num_edges(),
        iterations: state.iteration,
        converged: state.converged,
        millis,
        diagnostics: state.diagnostics,
        pairs,
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Runs inference for every user in `test` (in parallel) and scores the
/// results.
pub fn run_experiment(
    train: &RatingMatrix,
    test: &[TestRating],
    genres: &[GenreSet],
    config: &ExperimentConfig,
) -> Result<Experiment, EvalError> {
    config.inference.validate()?;
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let mut by_user: BTreeMap<u32, Vec<(u32, u8)>> = BTreeMap::new();
    for t in test {
        by_user.entry(t.user).or_default().push((t.item, t.rating));
    }
    let jobs: Vec<(u32, Vec<(u32, u8)>)> = by_user.into_iter().collect();
    let runs: Vec<UserRun> = jobs
        .par_iter()
        .map(|(user, items)| run_user(train, genres, *user as usize, items, &config.inference))
        .collect();

    let max_iterations = config.inference.max_iterations;
    let pairs = runs.iter().map(|r| r.pairs.len()).sum::<usize>();
    let rmse_curve: Vec<f64> = (1..=max_iterations)
        .map(|v| {
            let sum: f64 = runs
                .iter()
                .flat_map(|r| &r.pairs)
                .map(|p| {
                    let d = p.per_iteration[v - 1] - p.truth as f64;
                    d * d
                })
                .sum();
            (sum / pairs as f64).sqrt()
        })
        .collect();

    let experiment = Experiment {
        report: EvalReport {
            mode: config.inference.mode,
            active_users: runs.len(),
            test_pairs: pairs,
            rmse: *rmse_curve.last().expect("max_iterations >= 1"),
            rmse_curve,
            movie_avg_rmse: rmse(&MovieAvg::fit(train).predict_all(test), test)?,
            precision_at_k: BTreeMap::new(),
            relevance_threshold: config.relevance_threshold,
            mean_iterations: runs.iter().map(|r| r.iterations as f64).sum::<f64>()
                / runs.len() as f64,
            median_iterations: median(
                &mut runs.iter().map(|r| r.iterations as f64).collect::<Vec<_>>(),
            ),
            converged_fraction: runs.iter().filter(|r| r.converged).count() as f64
                / runs.len() as f64,
            coverage: runs
                .iter()
                .flat_map(|r| &r.pairs)
                .filter(|p| !p.fallback)
                .count() as f64
                / pairs as f64,
            message_stats: runs
                .iter()
                .fold(Diagnostics::default(), |mut acc, r| {
                    acc.merge(&r.diagnostics);
                    acc
                })
                .into(),
        },
        runs,
    };
    let predictions = experiment.predictions();
    let mut report = experiment.report;
    for &k in &config.precision_k {
        match precision_at_k(&predictions, test, k, config.relevance_threshold) {
            Ok(p) => {
                report.precision_at_k.insert(k, p);
            }
            Err(EvalError::NoRelevantUsers(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(Experiment {
        report,
        runs: experiment.runs,
    })
}

/// Least-squares slope of `ln(ms)` against `ln(edges)` over runs with at
/// least one edge.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
