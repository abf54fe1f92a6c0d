//! MovieLens 100K ingestion, the sparse rating matrix, and seeded splits.
//!
//! Raw user and item ids are remapped to dense 0-based indices (sorted by the
//! raw id) so that adjacency can live in flat arrays. The raw ids are kept in
//! side tables for reporting and for the CSV snapshot format.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of genre flags in a MovieLens 100K `u.item` line.
pub const NUM_GENRES: usize = 19;

/// Genre names in `u.item` flag order. Index 0 is the "unknown" genre.
pub const GENRE_NAMES: [&str; NUM_GENRES] = [
    "unknown",
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: rating {value} is outside the scale {min}..={max}")]
    RatingOutOfScale {
        line: usize,
        value: i64,
        min: u8,
        max: u8,
    },
    #[error("line {line}: duplicate rating for user {user}, item {item}")]
    Duplicate { line: usize, user: u32, item: u32 },
    #[error("entry ({user}, {item}) is outside a {num_users}x{num_items} matrix")]
    OutOfRange {
        user: usize,
        item: usize,
        num_users: usize,
        num_items: usize,
    },
    #[error("duplicate entry for user index {user}, item index {item}")]
    DuplicateEntry { user: usize, item: usize },
    #[error("item {0} has ratings but no catalog entry")]
    MissingCatalogItem(u32),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// The integer rating scale `{MIN, ..., MAX}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatingScale;

impl RatingScale {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 5;
    /// Number of rating levels.
    pub const LEVELS: usize = (Self::MAX - Self::MIN + 1) as usize;
    /// Highest possible deviation between two ratings.
    pub const RHO: f64 = (Self::MAX - Self::MIN) as f64;

    pub fn contains(value: i64) -> bool {
        (Self::MIN as i64..=Self::MAX as i64).contains(&value)
    }

    /// Zero-based level index of a rating.
    #[inline]
    pub fn index(rating: u8) -> usize {
        (rating - Self::MIN) as usize
    }

    /// Rating value at a zero-based level index.
    #[inline]
    pub fn value(index: usize) -> f64 {
        (index + Self::MIN as usize) as f64
    }
}

/// One observed rating, addressed by dense indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entry {
    pub user: u32,
    pub item: u32,
    pub rating: u8,
}

/// Compressed adjacency: for each row, a run of `(column, rating)` pairs
/// sorted by column.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Adjacency {
    offsets: Vec<usize>,
    columns: Vec<u32>,
    ratings: Vec<u8>,
}

impl Adjacency {
    fn build(rows: usize, mut edges: Vec<(u32, u32, u8)>) -> Self {
        edges.sort_unstable_by_key(|&(row, col, _)| (row, col));
        let mut offsets = vec![0usize; rows + 1];
        for &(row, _, _) in &edges {
            offsets[row as usize + 1] += 1;
        }
        for r in 0..rows {
            offsets[r + 1] += offsets[r];
        }
        Adjacency {
            offsets,
            columns: edges.iter().map(|e| e.1).collect(),
            ratings: edges.iter().map(|e| e.2).collect(),
        }
    }

    fn row(&self, row: usize) -> (&[u32], &[u8]) {
        let range = self.offsets[row]..self.offsets[row + 1];
        (&self.columns[range.clone()], &self.ratings[range])
    }
}

/// Sparse item-user rating matrix with both per-user and per-item adjacency.
///
/// Immutable after construction; share it by reference across inference
/// sessions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingMatrix {
    num_users: usize,
    num_items: usize,
    user_ids: Vec<u32>,
    item_ids: Vec<u32>,
    by_user: Adjacency,
    by_item: Adjacency,
}

impl RatingMatrix {
    /// Builds a matrix over dense indices with identity raw ids.
    pub fn from_entries(
        num_users: usize,
        num_items: usize,
        entries: &[Entry],
    ) -> Result<Self, DatasetError> {
        Self::with_ids(
            (0..num_users as u32).collect(),
            (0..num_items as u32).collect(),
            entries,
        )
    }

    /// Builds a matrix whose dense indices map to the given raw ids.
    pub fn with_ids(
        user_ids: Vec<u32>,
        item_ids: Vec<u32>,
        entries: &[Entry],
    ) -> Result<Self, DatasetError> {
        let (num_users, num_items) = (user_ids.len(), item_ids.len());
        let mut seen = HashSet::with_capacity(entries.len());
        for e in entries {
            if e.user as usize >= num_users || e.item as usize >= num_items {
                return Err(DatasetError::OutOfRange {
                    user: e.user as usize,
                    item: e.item as usize,
                    num_users,
                    num_items,
                });
            }
            if !RatingScale::contains(e.rating as i64) {
                return Err(DatasetError::RatingOutOfScale {
                    line: 0,
                    value: e.rating as i64,
                    min: RatingScale::MIN,
                    max: RatingScale::MAX,
                });
            }
            if !seen.insert((e.user, e.item)) {
                return Err(DatasetError::DuplicateEntry {
                    user: e.user as usize,
                    item: e.item as usize,
                });
            }
        }
        let by_user = Adjacency::build(
            num_users,
            entries.iter().map(|e| (e.user, e.item, e.rating)).collect(),
        );
        let by_item = Adjacency::build(
            num_items,
            entries.iter().map(|e| (e.item, e.user, e.rating)).collect(),
        );
        Ok(RatingMatrix {
            num_users,
            num_items,
            user_ids,
            item_ids,
            by_user,
            by_item,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_entries(&self) -> usize {
        self.by_user.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.num_entries() == 0
    }

    /// Items rated by `user` (sorted by item index) and the ratings given.
    pub fn user_ratings(&self, user: usize) -> (&[u32], &[u8]) {
        self.by_user.row(user)
    }

    /// Users who rated `item` (sorted by user index) and the ratings given.
    pub fn item_ratings(&self, item: usize) -> (&[u32], &[u8]) {
        self.by_item.row(item)
    }

    pub fn user_degree(&self, user: usize) -> usize {
        self.by_user.offsets[user + 1] - self.by_user.offsets[user]
    }

    pub fn item_degree(&self, item: usize) -> usize {
        self.by_item.offsets[item + 1] - self.by_item.offsets[item]
    }

    pub fn rating(&self, user: usize, item: usize) -> Option<u8> {
        let (items, ratings) = self.user_ratings(user);
        items
            .binary_search(&(item as u32))
            .ok()
            .map(|pos| ratings[pos])
    }

    /// All entries in user-major order.
    pub fn entries(&self) -> impl Iterator<Item = Entry> + '_ {
        (0..self.num_users).flat_map(move |user| {
            let (items, ratings) = self.user_ratings(user);
            items
                .iter()
                .zip(ratings)
                .map(move |(&item, &rating)| Entry {
                    user: user as u32,
                    item,
                    rating,
                })
        })
    }

    pub fn user_ids(&self) -> &[u32] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[u32] {
        &self.item_ids
    }

    pub fn raw_user_id(&self, user: usize) -> u32 {
        self.user_ids[user]
    }

    pub fn raw_item_id(&self, item: usize) -> u32 {
        self.item_ids[item]
    }

    pub fn user_index(&self, raw: u32) -> Option<usize> {
        self.user_ids.binary_search(&raw).ok()
    }

    pub fn item_index(&self, raw: u32) -> Option<usize> {
        self.item_ids.binary_search(&raw).ok()
    }

    /// Mean of all stored ratings, or the scale midpoint for an empty matrix.
    pub fn global_mean(&self) -> f64 {
        let n = self.num_entries();
        if n == 0 {
            return (RatingScale::MIN + RatingScale::MAX) as f64 / 2.0;
        }
        self.by_user.ratings.iter().map(|&r| r as f64).sum::<f64>() / n as f64
    }

    /// Same index space and id tables, different edge set.
    fn restricted_to(&self, entries: &[Entry]) -> Result<Self, DatasetError> {
        Self::with_ids(self.user_ids.clone(), self.item_ids.clone(), entries)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DatasetError> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(buf)
}

fn parse_field<T: std::str::FromStr>(
    field: &str,
    line: usize,
    what: &str,
) -> Result<T, DatasetError> {
    field.trim().parse().map_err(|_| DatasetError::Malformed {
        line,
        reason: format!("bad {what} field {field:?}"),
    })
}

/// Parses MovieLens 100K `u.data` (tab-separated `user item rating timestamp`).
pub fn parse_ratings(path: impl AsRef<Path>) -> Result<RatingMatrix, DatasetError> {
    let bytes = read_file(path.as_ref())?;
    parse_ratings_str(&String::from_utf8_lossy(&bytes))
}

/// [`parse_ratings`] over in-memory text.
pub fn parse_ratings_str(text: &str) -> Result<RatingMatrix, DatasetError> {
    let mut raw = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(DatasetError::Malformed {
                line: line_no,
                reason: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let user: u32 = parse_field(fields[0], line_no, "user")?;
        let item: u32 = parse_field(fields[1], line_no, "item")?;
        let rating: i64 = parse_field(fields[2], line_no, "rating")?;
        let _timestamp: u64 = parse_field(fields[3], line_no, "timestamp")?;
        if !RatingScale::contains(rating) {
            return Err(DatasetError::RatingOutOfScale {
                line: line_no,
                value: rating,
                min: RatingScale::MIN,
                max: RatingScale::MAX,
            });
        }
        if !seen.insert((user, item)) {
            return Err(DatasetError::Duplicate {
                line: line_no,
                user,
                item,
            });
        }
        raw.push((user, item, rating as u8));
    }
    from_raw_triples(&raw)
}

fn from_raw_triples(raw: &[(u32, u32, u8)]) -> Result<RatingMatrix, DatasetError> {
    let user_ids: Vec<u32> = raw
        .iter()
        .map(|r| r.0)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let item_ids: Vec<u32> = raw
        .iter()
        .map(|r| r.1)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let entries: Vec<Entry> = raw
        .iter()
        .map(|&(u, i, rating)| Entry {
            user: user_ids.binary_search(&u).unwrap() as u32,
            item: item_ids.binary_search(&i).unwrap() as u32,
            rating,
        })
        .collect();
    RatingMatrix::with_ids(user_ids, item_ids, &entries)
}

/// Set of genre ids as a bitmask over [`GENRE_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct GenreSet(pub u32);

impl GenreSet {
    pub const UNKNOWN: GenreSet = GenreSet(1);

    pub fn from_ids(ids: impl IntoIterator<Item = usize>) -> Self {
        GenreSet(ids.into_iter().fold(0, |acc, g| acc | (1 << g)))
    }

    pub fn contains(self, genre: usize) -> bool {
        self.0 & (1 << genre) != 0
    }

    pub fn intersects(self, other: GenreSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn ids(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&g| self.contains(g))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogItem {
    pub id: u32,
    pub title: String,
    pub genres: GenreSet,
}

/// Item metadata from `u.item`, sorted by raw item id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemCatalog {
    items: Vec<CatalogItem>,
    genre_names: Vec<String>,
}

impl ItemCatalog {
    pub fn new(mut items: Vec<CatalogItem>) -> Self {
        items.sort_by_key(|it| it.id);
        for it in &mut items {
            if it.genres.is_empty() {
                it.genres = GenreSet::UNKNOWN;
            }
        }
        ItemCatalog {
            items,
            genre_names: GENRE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[CatalogItem] {
        &self.items
    }

    pub fn genre_names(&self) -> &[String] {
        &self.genre_names
    }

    pub fn get(&self, raw_id: u32) -> Option<&CatalogItem> {
        self.items
            .binary_search_by_key(&raw_id, |it| it.id)
            .ok()
            .map(|pos| &self.items[pos])
    }

    /// Genre sets indexed by the matrix's dense item index.
    pub fn genres_for(&self, matrix: &RatingMatrix) -> Result<Vec<GenreSet>, DatasetError> {
        matrix
            .item_ids()
            .iter()
            .map(|&raw| {
                self.get(raw)
                    .map(|it| it.genres)
                    .ok_or(DatasetError::MissingCatalogItem(raw))
            })
            .collect()
    }
}

/// Parses MovieLens 100K `u.item`: `id|title|release|video-release|url|` then
/// 19 binary genre flags. Titles may be Latin-1.
pub fn parse_items(path: impl AsRef<Path>) -> Result<ItemCatalog, DatasetError> {
    let bytes = read_file(path.as_ref())?;
    // Latin-1 maps each byte to the code point of the same value.
    let text: String = bytes.iter().map(|&b| b as char).collect();
    parse_items_str(&text)
}

/// [`parse_items`] over in-memory text.
pub fn parse_items_str(text: &str) -> Result<ItemCatalog, DatasetError> {
    let mut items = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() < 6 {
            return Err(DatasetError::Malformed {
                line: line_no,
                reason: format!(
                    "expected id, title and genre flags, found {} fields",
                    fields.len()
                ),
            });
        }
        let flag_count = fields.len() - 5;
        if flag_count != NUM_GENRES {
            return Err(DatasetError::Malformed {
                line: line_no,
                reason: format!("expected {NUM_GENRES} genre flags, found {flag_count}"),
            });
        }
        let id: u32 = parse_field(fields[0], line_no, "item id")?;
        let mut genres = GenreSet::default();
        for (g, flag) in fields[5..].iter().enumerate() {
            match flag.trim() {
                "0" => {}
                "1" => genres.0 |= 1 << g,
                other => {
                    return Err(DatasetError::Malformed {
                        line: line_no,
                        reason: format!("genre flag {g} is {other:?}, expected 0 or 1"),
                    })
                }
            }
        }
        items.push(CatalogItem {
            id,
            title: fields[1].to_string(),
            genres,
        });
    }
    Ok(ItemCatalog::new(items))
}

/// A held-out rating, by dense indices.
pub type TestRating = Entry;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 42,
        }
    }
}

/// Global random split over rating records.
///
/// The train matrix keeps the full user and item index space, so users or
/// items left without training ratings are still addressable. Test entries
/// come back sorted by (user, item).
pub fn split(matrix: &RatingMatrix, spec: &SplitSpec) -> (RatingMatrix, Vec<TestRating>) {
    let mut entries: Vec<Entry> = matrix.entries().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    entries.shuffle(&mut rng);
    let fraction = spec.train_fraction.clamp(0.0, 1.0);
    let n_train = (entries.len() as f64 * fraction).round() as usize;
    let mut test = entries.split_off(n_train);
    test.sort_unstable();
    let train = matrix
        .restricted_to(&entries)
        .expect("subset of a valid matrix is valid");
    (train, test)
}

/// Writes `user,item,rating` rows with raw ids.
pub fn write_ratings_csv<W: Write>(
    matrix: &RatingMatrix,
    entries: impl IntoIterator<Item = Entry>,
    out: W,
) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user", "item", "rating"])?;
    for e in entries {
        w.write_record(&[
            matrix.raw_user_id(e.user as usize).to_string(),
            matrix.raw_item_id(e.item as usize).to_string(),
            e.rating.to_string(),
        ])?;
    }
    w.flush().map_err(|source| DatasetError::Io {
        path: PathBuf::from("<csv>"),
        source,
    })?;
    Ok(())
}

#[derive(Deserialize)]
struct CsvRow {
    user: u32,
    item: u32,
    rating: i64,
}

/// Reads a `user,item,rating` snapshot (raw ids) into a fresh matrix.
pub fn read_ratings_csv<R: Read>(input: R) -> Result<RatingMatrix, DatasetError> {
    let mut raw = Vec::new();
    let mut seen = HashSet::new();
    for (n, row) in csv::Reader::from_reader(input).deserialize().enumerate() {
        let row: CsvRow = row?;
        let line = n + 2;
        if !RatingScale::contains(row.rating) {
            return Err(DatasetError::RatingOutOfScale {
                line,
                value: row.rating,
                min: RatingScale::MIN,
                max: RatingScale::MAX,
            });
        }
        if !seen.insert((row.user, row.item)) {
            return Err(DatasetError::Duplicate {
                line,
                user: row.user,
                item: row.item,
            });
        }
        raw.push((row.user, row.item, row.rating as u8));
    }
    from_raw_triples(&raw)
}

/// `u.data` and `u.item` loaded from one directory.
#[derive(Debug, Clone)]
pub struct MovieLens {
    pub ratings: RatingMatrix,
    pub catalog: ItemCatalog,
}

impl MovieLens {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let dir = dir.as_ref();
        Ok(MovieLens {
            ratings: parse_ratings(dir.join("u.data"))?,
            catalog: parse_items(dir.join("u.item"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(set: &[usize]) -> String {
        (0..NUM_GENRES)
            .map(|g| if set.contains(&g) { "1" } else { "0" })
            .collect::<Vec<_>>()
            .join("|")
    }

    #[test]
    fn empty_file_gives_empty_matrix() {
        let m = parse_ratings_str("").unwrap();
        assert_eq!((m.num_users(), m.num_items(), m.num_entries()), (0, 0, 0));
    }

    #[test]
    fn remaps_to_dense_indices() {
        let m = parse_ratings_str("10\t7\t3\t1\n5\t7\t4\t2\n10\t99\t5\t3\n").unwrap();
        assert_eq!(m.user_ids(), &[5, 10]);
        assert_eq!(m.item_ids(), &[7, 99]);
        assert_eq!(m.rating(1, 1), Some(5));
        assert_eq!(m.rating(0, 1), None);
        assert_eq!(m.item_ratings(0), (&[0u32, 1][..], &[4u8, 3][..]));
    }

    #[test]
    fn rating_six_names_the_line() {
        let err = parse_ratings_str("1\t1\t3\t0\n1\t2\t6\t0\n").unwrap_err();
        assert!(matches!(
            err,
            DatasetError::RatingOutOfScale {
                line: 2,
                value: 6,
                ..
            }
        ));
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn duplicate_pair_is_rejected() {
        let err = parse_ratings_str("1\t1\t3\t0\n1\t1\t4\t0\n").unwrap_err();
        assert!(matches!(
            err,
            DatasetError::Duplicate {
                line: 2,
                user: 1,
                item: 1
            }
        ));
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = parse_ratings_str("1\t1\t3\t0\n1 2 3 4\n").unwrap_err();
        assert!(matches!(err, DatasetError::Malformed { line: 2, .. }));
        let err = parse_ratings_str("1\tx\t3\t0\n").unwrap_err();
        assert!(matches!(err, DatasetError::Malformed { line: 1, .. }));
    }

    #[test]
    fn all_zero_flags_become_unknown() {
        let text = format!("1|Some Film (1995)|01-Jan-1995||http://x|{}\n", flags(&[]));
        let cat = parse_items_str(&text).unwrap();
        assert_eq!(cat.get(1).unwrap().genres, GenreSet::UNKNOWN);
    }

    #[test]
    fn multi_genre_flags() {
        let text = format!("3|Film|||u|{}\n", flags(&[5, 8]));
        let cat = parse_items_str(&text).unwrap();
        let g = cat.get(3).unwrap().genres;
        assert_eq!(g.ids().collect::<Vec<_>>(), vec![5, 8]);
        assert_eq!(cat.genre_names()[5], "Comedy");
    }

    #[test]
    fn eighteen_flags_is_an_error() {
        let short = vec!["0"; 18].join("|");
        let err = parse_items_str(&format!("1|Film|||u|{short}\n")).unwrap_err();
        assert!(matches!(err, DatasetError::Malformed { line: 1, .. }));
    }

    #[test]
    fn non_binary_flag_is_an_error() {
        let mut f: Vec<&str> = vec!["0"; 19];
        f[3] = "2";
        let err = parse_items_str(&format!("1|Film|||u|{}\n", f.join("|"))).unwrap_err();
        assert!(matches!(err, DatasetError::Malformed { .. }));
    }

    #[test]
    fn latin1_title_is_tolerated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.item");
        let mut bytes = b"1|Caf\xe9 (1995)|||u|".to_vec();
        bytes.extend_from_slice(flags(&[8]).as_bytes());
        bytes.push(b'\n');
        fs::write(&path, bytes).unwrap();
        let cat = parse_items(&path).unwrap();
        assert_eq!(cat.get(1).unwrap().title, "Café (1995)");
    }

    #[test]
    fn catalog_alignment_requires_every_item() {
        let m = parse_ratings_str("1\t4\t3\t0\n").unwrap();
        let cat = parse_items_str(&format!("1|Film|||u|{}\n", flags(&[1]))).unwrap();
        assert!(matches!(
            cat.genres_for(&m),
            Err(DatasetError::MissingCatalogItem(4))
        ));
    }

    fn grid(users: u32, items: u32) -> RatingMatrix {
        let entries: Vec<Entry> = (0..users)
            .flat_map(|u| {
                (0..items)
                    .filter(move |i| (u + i) % 3 != 0)
                    .map(move |i| Entry {
                        user: u,
                        item: i,
                        rating: ((u * 7 + i) % 5 + 1) as u8,
                    })
            })
            .collect();
        RatingMatrix::from_entries(users as usize, items as usize, &entries).unwrap()
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let m = grid(40, 50);
        let spec = SplitSpec {
            train_fraction: 0.8,
            seed: 7,
        };
        let (train, test) = split(&m, &spec);
        let (train2, test2) = split(&m, &spec);
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        assert_eq!(train.num_users(), m.num_users());
        assert_eq!(train.num_items(), m.num_items());

        let train_set: HashSet<Entry> = train.entries().collect();
        let test_set: HashSet<Entry> = test.iter().copied().collect();
        assert!(train_set.is_disjoint(&test_set));
        let union: HashSet<Entry> = train_set.union(&test_set).copied().collect();
        assert_eq!(union, m.entries().collect::<HashSet<_>>());
        let frac = train.num_entries() as f64 / m.num_entries() as f64;
        assert!((frac - 0.8).abs() <= 0.005);
    }

    #[test]
    fn full_train_fraction_leaves_test_empty() {
        let m = grid(5, 5);
        let (train, test) = split(
            &m,
            &SplitSpec {
                train_fraction: 1.0,
                seed: 1,
            },
        );
        assert!(test.is_empty());
        assert_eq!(train.num_entries(), m.num_entries());
    }

    #[test]
    fn different_seeds_differ() {
        let m = grid(30, 30);
        let a = split(
            &m,
            &SplitSpec {
                train_fraction: 0.8,
                seed: 1,
            },
        )
        .1;
        let b = split(
            &m,
            &SplitSpec {
                train_fraction: 0.8,
                seed: 2,
            },
        )
        .1;
        assert_ne!(a, b);
    }

    #[test]
    fn csv_snapshot_uses_raw_ids() {
        let m = parse_ratings_str("10\t7\t3\t1\n5\t8\t4\t2\n").unwrap();
        let mut buf = Vec::new();
        write_ratings_csv(&m, m.entries(), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "user,item,rating\n5,8,4\n10,7,3\n"
        );
    }
}
