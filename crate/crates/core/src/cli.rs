//! Command implementations behind the `bprs` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{
    split, write_ratings_csv, DatasetError, Entry, GenreSet, MovieLens, RatingMatrix, SplitSpec,
};
use crate::distribution::Distribution;
use crate::eval::{
    log_log_slope, run_experiment, EvalError, EvalReport, Experiment, ExperimentConfig,
};
use crate::graph::{build_active_graph, GenreStats, NeighborhoodMode};
use crate::inference::{
    iterate, posterior_belief, run_inference, BeliefState, ConfigError, FixedEvidence,
    InferenceConfig,
};
use crate::oracle::{exact_marginal, TinyInstance};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    /// 1 usage, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(c) => c.into(),
            other => CliError::Internal(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Internal(format!("{}: {e}", path.display()))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Internal(format!("csv: {e}"))
}

#[derive(Debug, Parser)]
#[command(
    name = "bprs",
    version,
    about = "Belief-propagation rating prediction on MovieLens 100K"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split, run inference for every test user, and write report files.
    Evaluate {
        #[command(flatten)]
        run: RunConfig,
        /// Also write train.csv and test.csv snapshots of the split.
        #[arg(long)]
        dump_split: bool,
    },
    /// Predict one user's unseen items from the full data set.
    Recommend {
        #[command(flatten)]
        run: RunConfig,
        /// Raw MovieLens user id.
        #[arg(long)]
        user: u32,
    },
    /// Time single-user inference against neighborhood size.
    Bench {
        #[command(flatten)]
        run: RunConfig,
        /// Number of users to time.
        #[arg(long, default_value_t = 50)]
        sample: usize,
        /// Time synthetic matrices of controlled density instead of MovieLens.
        #[arg(long)]
        synthetic: bool,
    },
    /// Compare inference against brute-force marginals on a random tiny graph.
    #[command(hide = true)]
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunConfig {
    /// Directory holding u.data and u.item.
    #[arg(long, default_value = "data/ml-100k")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long = "train-frac", default_value_t = 0.8)]
    pub train_frac: f64,
    /// Initial confidence of every factor node, in (0, 1).
    #[arg(long = "rho0", default_value_t = 0.5)]
    pub rho0: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    #[arg(long = "max-iters", default_value_t = 20)]
    pub max_iters: usize,
    /// two-hop or all.
    #[arg(long, default_value = "two-hop")]
    pub mode: NeighborhoodMode,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long = "top-n", default_value_t = 10)]
    pub top_n: usize,
    /// Cutoffs for precision@K, comma separated.
    #[arg(long = "precision-k", value_delimiter = ',', default_values_t = [5usize, 10])]
    pub precision_k: Vec<usize>,
    /// Minimum true rating counted as relevant.
    #[arg(long, default_value_t = 4)]
    pub threshold: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: PathBuf::from("data/ml-100k"),
            seed: 42,
            train_frac: 0.8,
            rho0: 0.5,
            epsilon: 1e-3,
            max_iters: 20,
            mode: NeighborhoodMode::TwoHop,
            out: PathBuf::from("out"),
            top_n: 10,
            precision_k: vec![5, 10],
            threshold: 4,
        }
    }
}

impl RunConfig {
    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            initial_confidence: self.rho0,
            epsilon: self.epsilon,
            max_iterations: self.max_iters,
            mode: self.mode,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_frac,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.inference().validate()?;
        if !(self.train_frac > 0.0 && self.train_frac <= 1.0) {
            return Err(CliError::Usage(format!(
                "train fraction must lie in (0, 1], got {}",
                self.train_frac
            )));
        }
        if self.precision_k.contains(&0) {
            return Err(CliError::Usage(
                "precision cutoffs must be at least 1".into(),
            ));
        }
        if !(1..=5).contains(&self.threshold) {
            return Err(CliError::Usage(format!(
                "relevance threshold must be a rating in 1..=5, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

struct Loaded {
    data: MovieLens,
    manifest_inputs: Vec<InputHash>,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct InputHash {
    pub file: String,
    pub bytes: u64,
    /// SHA-256 over `blob <len>\0` followed by the file contents.
    pub sha256: String,
}

/// Git-style content hash of a file.
pub fn hash_file(path: &Path) -> Result<InputHash, CliError> {
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
    hasher.update(&bytes);
    let digest = hasher.finalize();
    Ok(InputHash {
        file: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        bytes: bytes.len() as u64,
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

fn load(config: &RunConfig) -> Result<Loaded, CliError> {
    let ratings = config.data.join("u.data");
    let items = config.data.join("u.item");
    for path in [&ratings, &items] {
        if !path.is_file() {
            return Err(DatasetError::Io {
                path: path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "missing input file"),
            }
            .into());
        }
    }
    Ok(Loaded {
        data: MovieLens::load(&config.data)?,
        manifest_inputs: vec![hash_file(&ratings)?, hash_file(&items)?],
    })
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    inputs: &'a [InputHash],
    outputs: Vec<&'a str>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn create(path: &Path) -> Result<fs::File, CliError> {
    fs::File::create(path).map_err(io_err(path))
}

/// Outcome of [`cmd_evaluate`].
#[derive(Debug)]
pub struct EvaluateOutput {
    pub report: EvalReport,
    pub experiment: Experiment,
    pub train: RatingMatrix,
    pub files: Vec<PathBuf>,
}

/// Runs the full experiment and writes `report.json`, `convergence.csv`,
/// `timings.csv` and `manifest.json` into `config.out`.
pub fn cmd_evaluate(config: &RunConfig, dump_split: bool) -> Result<EvaluateOutput, CliError> {
    config.validate()?;
    let loaded = load(config)?;
    let data = &loaded.data;
    if data.ratings.is_empty() {
        return Err(CliError::Data(DatasetError::Malformed {
            line: 0,
            reason: "u.data holds no ratings".into(),
        }));
    }
    let (train, test) = split(&data.ratings, &config.split_spec());
    if test.is_empty() {
        return Err(CliError::Usage(
            "the split leaves no test ratings; lower --train-frac".into(),
        ));
    }
    let genres = data.catalog.genres_for(&train)?;
    let experiment = run_experiment(
        &train,
        &test,
        &genres,
        &ExperimentConfig {
            inference: config.inference(),
            precision_k: config.precision_k.clone(),
            relevance_threshold: config.threshold,
        },
    )?;

    let out = &config.out;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut files = Vec::new();
    let report_path = out.join("report.json");
    write_json(&report_path, &experiment.report)?;
    files.push(report_path);

    let conv_path = out.join("convergence.csv");
    experiment
        .write_convergence_csv(create(&conv_path)?)
        .map_err(csv_err)?;
    files.push(conv_path);

    let timings_path = out.join("timings.csv");
    experiment
        .write_timings_csv(&train, create(&timings_path)?)
        .map_err(csv_err)?;
    files.push(timings_path);

    let predictions_path = out.join("predictions.csv");
    experiment
        .write_predictions_csv(&train, create(&predictions_path)?)
        .map_err(csv_err)?;
    files.push(predictions_path);

    let mut outputs = vec![
        "report.json",
        "convergence.csv",
        "timings.csv",
        "predictions.csv",
    ];
    if dump_split {
        let train_path = out.join("train.csv");
        write_ratings_csv(&train, train.entries(), create(&train_path)?)?;
        let test_path = out.join("test.csv");
        write_ratings_csv(&train, test.iter().copied(), create(&test_path)?)?;
        files.extend([train_path, test_path]);
        outputs.extend(["train.csv", "test.csv"]);
    }

    let manifest_path = out.join("manifest.json");
    write_json(
        &manifest_path,
        &Manifest {
            command: "evaluate",
            version: env!("CARGO_PKG_VERSION"),
            config,
            inputs: &loaded.manifest_inputs,
            outputs,
        },
    )?;
    files.push(manifest_path);

    Ok(EvaluateOutput {
        report: experiment.report.clone(),
        experiment,
        train,
        files,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecommendedItem {
    pub item: u32,
    pub title: String,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    pub user: u32,
    pub iterations: usize,
    pub converged: bool,
    pub items: Vec<RecommendedItem>,
}

/// Top-N unseen items for one user, from inference over the full data set.
pub fn recommend(
    matrix: &RatingMatrix,
    genres: &[GenreSet],
    titles: &dyn Fn(u32) -> String,
    raw_user: u32,
    top_n: usize,
    config: &InferenceConfig,
) -> Result<Recommendation, CliError> {
    config.validate()?;
    let user = matrix
        .user_index(raw_user)
        .ok_or_else(|| CliError::Usage(format!("unknown user id {raw_user}")))?;
    let graph = build_active_graph(matrix, user, config.mode);
    let stats = GenreStats::for_user(matrix, genres, user);
    let state = run_inference(&graph, &stats, config);
    let mut unseen: Vec<(usize, f64)> = (0..matrix.num_items())
        .filter(|&a| !graph.is_clamped(a))
        .map(|a| (a, state.predictions[a]))
        .collect();
    unseen.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    unseen.truncate(top_n);
    Ok(Recommendation {
        user: raw_user,
        iterations: state.iteration,
        converged: state.converged,
        items: unseen
            .into_iter()
            .map(|(a, prediction)| {
                let item = matrix.raw_item_id(a);
                RecommendedItem {
                    item,
                    title: titles(item),
                    prediction,
                }
            })
            .collect(),
    })
}

pub fn cmd_recommend(config: &RunConfig, user: u32) -> Result<Recommendation, CliError> {
    config.validate()?;
    let loaded = load(config)?;
    let data = &loaded.data;
    let genres = data.catalog.genres_for(&data.ratings)?;
    let titles = |id: u32| {
        data.catalog
            .get(id)
            .map(|it| it.title.clone())
            .unwrap_or_default()
    };
    recommend(
        &data.ratings,
        &genres,
        &titles,
        user,
        config.top_n,
        &config.inference(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchOutput {
    pub rows: Vec<BenchRow>,
    /// Slope of `ln(ms)` against `ln(graph_size)`.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub user: u32,
    pub ratings_count: usize,
    pub graph_size: usize,
    pub ms: f64,
}

/// Times graph construction plus exactly `iterations` iterations for one
/// user; the best of `repeats` runs is kept.
pub fn time_user(
    matrix: &RatingMatrix,
    genres: &[GenreSet],
    user: usize,
    config: &InferenceConfig,
    iterations: usize,
    repeats: usize,
) -> BenchRow {
    let mut best = f64::INFINITY;
    let mut edges = 0;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let graph = build_active_graph(matrix, user, config.mode);
        let stats = GenreStats::for_user(matrix, genres, user);
        let mut state = BeliefState::initial(&graph, &stats, config);
        for _ in 0..iterations {
            iterate(&graph, &stats, &mut state);
        }
        best = best.min(start.elapsed().as_secs_f64() * 1e3);
        edges = graph.num_edges();
        std::hint::black_box(&state);
    }
    BenchRow {
        user: matrix.raw_user_id(user),
        ratings_count: matrix.user_degree(user),
        graph_size: edges,
        ms: best,
    }
}

/// Users spread evenly over the rating-count order.
pub fn stratified_sample(matrix: &RatingMatrix, sample: usize) -> Vec<usize> {
    let mut users: Vec<usize> = (0..matrix.num_users()).collect();
    users.sort_by_key(|&u| (matrix.user_degree(u), u));
    let n = users.len();
    if sample >= n {
        return users;
    }
    (0..sample)
        .map(|i| {
            users[if sample == 1 {
                n / 2
            } else {
                i * (n - 1) / (sample - 1)
            }]
        })
        .collect()
}

/// Matrix where every user rates `per_user` distinct items drawn uniformly
/// from `num_items`, with uniform ratings.
pub fn synthetic_matrix(
    num_users: usize,
    num_items: usize,
    per_user: usize,
    seed: u64,
) -> RatingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<u32> = (0..num_items as u32).collect();
    let entries: Vec<Entry> = (0..num_users as u32)
        .flat_map(|user| {
            let picks: Vec<u32> = items.choose_multiple(&mut rng, per_user).copied().collect();
            picks
                .into_iter()
                .map(|item| Entry {
                    user,
                    item,
                    rating: rng.gen_range(1..=5),
                })
                .collect::<Vec<_>>()
        })
        .collect();
    RatingMatrix::from_entries(num_users, num_items, &entries).expect("distinct picks")
}

/// Synthetic scaling series: the user count doubles at each step while items
/// and ratings per user stay fixed, so the active user's neighborhood edge
/// count roughly doubles too.
pub fn synthetic_bench(steps: usize, config: &InferenceConfig) -> BenchOutput {
    let num_items = 1000;
    let per_user = 20;
    let genres = vec![GenreSet::UNKNOWN; num_items];
    let rows: Vec<BenchRow> = (0..steps)
        .map(|s| {
            let users = 500 << s;
            let m = synthetic_matrix(users, num_items, per_user, 1000 + s as u64);
            time_user(&m, &genres, 0, config, 10, 5)
        })
        .collect();
    let slope = log_log_slope(
        &rows
            .iter()
            .map(|r| (r.graph_size as f64, r.ms))
            .collect::<Vec<_>>(),
    );
    BenchOutput { rows, slope }
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user", "ratings_count", "graph_size", "ms"])?;
    for r in rows {
        w.write_record(&[
            r.user.to_string(),
            r.ratings_count.to_string(),
            r.graph_size.to_string(),
            format!("{:.3}", r.ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Times `sample` users (or the synthetic series) and writes `timings.csv`.
pub fn cmd_bench(
    config: &RunConfig,
    sample: usize,
    synthetic: bool,
) -> Result<BenchOutput, CliError> {
    config.validate()?;
    let inference = config.inference();
    let output = if synthetic {
        synthetic_bench(sample.clamp(2, 6), &inference)
    } else {
        let loaded = load(config)?;
        let matrix = &loaded.data.ratings;
        let genres = loaded.data.catalog.genres_for(matrix)?;
        let rows: Vec<BenchRow> = stratified_sample(matrix, sample)
            .into_iter()
            .map(|u| time_user(matrix, &genres, u, &inference, 10, 1))
            .collect();
        let slope = log_log_slope(
            &rows
                .iter()
                .map(|r| (r.graph_size as f64, r.ms))
                .collect::<Vec<_>>(),
        );
        BenchOutput { rows, slope }
    };
    fs::create_dir_all(&config.out).map_err(io_err(&config.out))?;
    let path = config.out.join("timings.csv");
    write_bench_csv(&output.rows, create(&path)?).map_err(csv_err)?;
    Ok(output)
}

/// Random tiny instance: user 0 is active, up to 4 unclamped items and up to
/// 6 factor nodes, with random frozen confidences and weights.
pub fn random_tiny_instance<R: Rng>(rng: &mut R) -> TinyInstance {
    loop {
        let clamped = rng.gen_range(0..=2usize);
        let free = rng.gen_range(1..=4usize);
        let num_items = clamped + free;
        let factors = rng.gen_range(1..=6usize);
        let mut entries = Vec::new();
        for item in 0..clamped {
            entries.push(Entry {
                user: 0,
                item: item as u32,
                rating: rng.gen_range(1..=5),
            });
        }
        for user in 1..=factors {
            for item in 0..num_items {
                if rng.gen_bool(0.6) {
                    entries.push(Entry {
                        user: user as u32,
                        item: item as u32,
                        rating: rng.gen_range(1..=5),
                    });
                }
            }
        }
        let m =
            RatingMatrix::from_entries(factors + 1, num_items, &entries).expect("distinct pairs");
        let graph = build_active_graph(&m, 0, NeighborhoodMode::AllUsers);
        // Keep instances where at least one unclamped item has a rater.
        if !(clamped..num_items).any(|a| graph.item_degree(a) > 0) {
            continue;
        }
        let confidences = (0..graph.num_factors())
            .map(|_| rng.gen_range(0.0..0.99))
            .collect();
        let weights = (0..num_items)
            .map(|_| Distribution::smoothed([(); 5].map(|_| rng.gen_range(0..6))))
            .collect();
        return TinyInstance::new(graph, confidences, weights).expect("within caps");
    }
}

/// Posterior of every unclamped rated item from one round of factor messages
/// at the instance's frozen confidences, paired with the exact marginal.
pub fn compare_with_oracle(inst: &TinyInstance) -> Vec<(usize, Distribution, Distribution)> {
    let evidence = FixedEvidence {
        weights: inst.weights.clone(),
        prior: Distribution::uniform(),
    };
    let graph = &inst.graph;
    let mut state = BeliefState::new(graph, &evidence, inst.confidences.clone());
    for e in 0..graph.num_edges() {
        state.lambda[e] = crate::inference::factor_message(graph, &evidence, &state, e);
    }
    (0..graph.num_items())
        .filter(|&a| !graph.is_clamped(a) && graph.item_degree(a) > 0)
        .map(|a| {
            let bp = posterior_belief(graph, &evidence, &state, a);
            let exact = exact_marginal(inst, a).expect("instance within caps");
            (a, bp, exact)
        })
        .collect()
}

pub fn cmd_oracle(seed: u64) -> Vec<(usize, Distribution, Distribution)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    compare_with_oracle(&random_tiny_instance(&mut rng))
}
