//! MovieLens-100k ingestion: per-user rating tasks with a withheld-user
//! split.
//!
//! Reads the published `u.data` / `u.item` / `u.user` files. Users are
//! partitioned 70/10/20 into train/validation/test pools by a seeded
//! shuffle; the test pool is never seen during training, so evaluation
//! measures few-shot adaptation to entirely new users.
//!
//! Item features are the 19-flag genre vector, the rating timestamp
//! (z-scored with training-pool statistics), user age (z-scored, median
//! imputed), sex one-hot, occupation one-hot and a learned movie-embedding
//! id in the final slot. Movies with at most one training occurrence — and
//! movies never seen in training — share embedding id 0.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

use super::{RegressionTask, TaskSource};

pub const NUM_GENRES: usize = 19;
/// Embedding id reserved for low-resource and unseen movies.
pub const SHARED_EMBEDDING_ID: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingRow {
    pub user_id: u32,
    pub item_id: u32,
    pub rating: f64,
    pub timestamp: f64,
}

#[derive(Debug, Clone)]
pub struct UserInfo {
    pub age: Option<f64>,
    pub is_male: bool,
    pub is_female: bool,
    pub occupation: String,
}

/// Feature bookkeeping derived from the training pool only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureVocab {
    pub ts_mean: f64,
    pub ts_std: f64,
    pub age_mean: f64,
    pub age_std: f64,
    pub age_median: f64,
    /// Sorted occupation names. Unknown occupations map to `other`.
    pub occupations: Vec<String>,
    /// Movie id -> embedding id for movies with two or more training
    /// occurrences; everything else uses [`SHARED_EMBEDDING_ID`].
    pub movie_embedding: BTreeMap<u32, usize>,
    /// Total embedding rows, including the shared one.
    pub num_embeddings: usize,
}

impl FeatureVocab {
    pub fn occupation_slot(&self, occ: &str) -> usize {
        self.occupations
            .iter()
            .position(|o| o == occ)
            .unwrap_or_else(|| {
                self.occupations
                    .iter()
                    .position(|o| o == "other")
                    .expect("vocab always carries an `other` slot")
            })
    }

    pub fn embedding_id(&self, item_id: u32) -> usize {
        *self
            .movie_embedding
            .get(&item_id)
            .unwrap_or(&SHARED_EMBEDDING_ID)
    }

    /// Width of the feature vector this vocabulary produces.
    pub fn feature_dim(&self) -> usize {
        NUM_GENRES + 1 + 1 + 2 + self.occupations.len() + 1
    }
}

/// One user's rating function: item features paired with ratings in `[1,5]`.
#[derive(Debug, Clone)]
pub struct RatingTask {
    pub user_id: u32,
    pub items: Vec<(Vec<f64>, f64)>,
}

impl RatingTask {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// The ingested dataset: per-user tasks partitioned into pools.
#[derive(Debug, Clone)]
pub struct MovieLens {
    pub train: Vec<RatingTask>,
    pub valid: Vec<RatingTask>,
    pub test: Vec<RatingTask>,
    pub vocab: FeatureVocab,
    pub num_ratings: usize,
    pub num_users: usize,
    pub num_items: usize,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Parse `u.data`: tab-separated `user \t item \t rating \t timestamp`.
pub fn parse_u_data(path: &Path) -> Result<Vec<RatingRow>> {
    let bytes = read_file(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let mut next = |what: &str| {
            fields
                .next()
                .ok_or_else(|| parse_err(path, i + 1, format!("missing {what}")))
        };
        let user_id: u32 = next("user id")?
            .parse()
            .map_err(|e| parse_err(path, i + 1, format!("bad user id: {e}")))?;
        let item_id: u32 = next("item id")?
            .parse()
            .map_err(|e| parse_err(path, i + 1, format!("bad item id: {e}")))?;
        let rating: f64 = next("rating")?
            .parse()
            .map_err(|e| parse_err(path, i + 1, format!("bad rating: {e}")))?;
        let timestamp: f64 = next("timestamp")?
            .parse()
            .map_err(|e| parse_err(path, i + 1, format!("bad timestamp: {e}")))?;
        if !(1.0..=5.0).contains(&rating) {
            return Err(parse_err(path, i + 1, format!("rating {rating} out of [1,5]")));
        }
        rows.push(RatingRow {
            user_id,
            item_id,
            rating,
            timestamp,
        });
    }
    Ok(rows)
}

/// Parse `u.item`: pipe-separated, 19 trailing genre flags. Titles may be
/// Latin-1; only the id and the flags are consumed.
pub fn parse_u_item(path: &Path) -> Result<BTreeMap<u32, Vec<f64>>> {
    let bytes = read_file(path)?;
    let mut genres = BTreeMap::new();
    for (i, line) in bytes.split(|&b| b == b'\n').enumerate() {
        if line.is_empty() || line == b"\r" {
            continue;
        }
        let fields: Vec<&[u8]> = line.split(|&b| b == b'|').collect();
        if fields.len() < NUM_GENRES + 1 {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected at least {} fields, got {}", NUM_GENRES + 1, fields.len()),
            ));
        }
        let id: u32 = String::from_utf8_lossy(fields[0])
            .parse()
            .map_err(|e| parse_err(path, i + 1, format!("bad movie id: {e}")))?;
        let mut flags = Vec::with_capacity(NUM_GENRES);
        for f in &fields[fields.len() - NUM_GENRES..] {
            let s = String::from_utf8_lossy(f);
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|e| parse_err(path, i + 1, format!("bad genre flag {s:?}: {e}")))?;
            flags.push(v);
        }
        genres.insert(id, flags);
    }
    Ok(genres)
}

/// Parse `u.user`: pipe-separated `id|age|gender|occupation|zip`.
pub fn parse_u_user(path: &Path) -> Result<BTreeMap<u32, UserInfo>> {
    let bytes = read_file(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let mut users = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() < 4 {
            return Err(parse_err(path, i + 1, format!("expected 5 fields, got {}", fields.len())));
        }
        let id: u32 = fields[0]
            .parse()
            .map_err(|e| parse_err(path, i + 1, format!("bad user id: {e}")))?;
        let age = fields[1].trim().parse::<f64>().ok().filter(|a| *a > 0.0);
        let gender = fields[2].trim();
        users.insert(
            id,
            UserInfo {
                age,
                is_male: gender.eq_ignore_ascii_case("M"),
                is_female: gender.eq_ignore_ascii_case("F"),
                occupation: fields[3].trim().to_string(),
            },
        );
    }
    Ok(users)
}

/// Item feature vector for one rating row.
pub fn movielens_featurize(
    row: &RatingRow,
    genres: &BTreeMap<u32, Vec<f64>>,
    users: &BTreeMap<u32, UserInfo>,
    vocab: &FeatureVocab,
) -> Vec<f64> {
    let mut f = Vec::with_capacity(vocab.feature_dim());
    match genres.get(&row.item_id) {
        Some(g) => f.extend_from_slice(g),
        None => f.extend(std::iter::repeat(0.0).take(NUM_GENRES)),
    }
    f.push((row.timestamp - vocab.ts_mean) / vocab.ts_std);
    let user = users.get(&row.user_id);
    let age = user
        .and_then(|u| u.age)
        .unwrap_or(vocab.age_median);
    f.push((age - vocab.age_mean) / vocab.age_std);
    match user {
        Some(u) => {
            f.push(if u.is_male { 1.0 } else { 0.0 });
            f.push(if u.is_female { 1.0 } else { 0.0 });
        }
        None => {
            f.push(0.0);
            f.push(0.0);
        }
    }
    let occ_slot = user
        .map(|u| vocab.occupation_slot(&u.occupation))
        .unwrap_or_else(|| vocab.occupation_slot("other"));
    for k in 0..vocab.occupations.len() {
        f.push(if k == occ_slot { 1.0 } else { 0.0 });
    }
    f.push(vocab.embedding_id(row.item_id) as f64);
    f
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(1e-9))
}

/// Build the feature vocabulary from training-pool rows and users.
pub fn build_vocab(
    train_rows: &[RatingRow],
    users: &BTreeMap<u32, UserInfo>,
    train_users: &[u32],
) -> FeatureVocab {
    let (ts_mean, ts_std) = mean_std(train_rows.iter().map(|r| r.timestamp));

    let ages: Vec<f64> = train_users
        .iter()
        .filter_map(|u| users.get(u).and_then(|i| i.age))
        .collect();
    let (age_mean, age_std) = mean_std(ages.iter().cloned());
    let age_median = {
        let mut s = ages.clone();
        s.sort_by(|a, b| a.partial_cmp(b).expect("finite ages"));
        if s.is_empty() {
            30.0
        } else {
            s[s.len() / 2]
        }
    };

    let mut occupations: Vec<String> = train_users
        .iter()
        .filter_map(|u| users.get(u).map(|i| i.occupation.clone()))
        .collect();
    occupations.push("other".to_string());
    occupations.sort();
    occupations.dedup();

    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for r in train_rows {
        *counts.entry(r.item_id).or_default() += 1;
    }
    let mut movie_embedding = BTreeMap::new();
    let mut next_id = 1usize;
    for (&item, &c) in &counts {
        if c >= 2 {
            movie_embedding.insert(item, next_id);
            next_id += 1;
        }
    }

    FeatureVocab {
        ts_mean,
        ts_std,
        age_mean,
        age_std,
        age_median,
        occupations,
        movie_embedding,
        num_embeddings: next_id,
    }
}

/// Ingest a MovieLens-100k directory (`u.data`, `u.item`, `u.user`) and
/// split users 70/10/20 with the given seed.
pub fn movielens_ingest(dir: &Path, split_seed: u64) -> Result<MovieLens> {
    let rows = parse_u_data(&dir.join("u.data"))?;
    let genres = parse_u_item(&dir.join("u.item"))?;
    let users = parse_u_user(&dir.join("u.user"))?;
    if rows.is_empty() {
        return Err(Error::invalid("movielens_ingest", "no ratings"));
    }

    let mut user_ids: Vec<u32> = rows.iter().map(|r| r.user_id).collect();
    user_ids.sort_unstable();
    user_ids.dedup();
    let mut shuffled = user_ids.clone();
    let mut rng = rng_from_seed(split_seed);
    shuffled.shuffle(&mut rng);

    let n = shuffled.len();
    let n_train = ((n as f64) * 0.7).round() as usize;
    let n_valid = ((n as f64) * 0.1).round() as usize;
    let train_users: Vec<u32> = shuffled[..n_train].to_vec();
    let valid_users: Vec<u32> = shuffled[n_train..n_train + n_valid].to_vec();
    let test_users: Vec<u32> = shuffled[n_train + n_valid..].to_vec();

    let in_pool = |pool: &[u32], id: u32| pool.contains(&id);
    let train_rows: Vec<RatingRow> = rows
        .iter()
        .filter(|r| in_pool(&train_users, r.user_id))
        .cloned()
        .collect();
    let vocab = build_vocab(&train_rows, &users, &train_users);

    let mut per_user: BTreeMap<u32, Vec<(Vec<f64>, f64)>> = BTreeMap::new();
    for row in &rows {
        let f = movielens_featurize(row, &genres, &users, &vocab);
        per_user.entry(row.user_id).or_default().push((f, row.rating));
    }
    let mut items_seen: Vec<u32> = rows.iter().map(|r| r.item_id).collect();
    items_seen.sort_unstable();
    items_seen.dedup();

    let collect_pool = |pool: &[u32], per_user: &mut BTreeMap<u32, Vec<(Vec<f64>, f64)>>| {
        let mut out = Vec::with_capacity(pool.len());
        // keep the shuffled order deterministic but sort for stable output
        let mut sorted = pool.to_vec();
        sorted.sort_unstable();
        for id in sorted {
            if let Some(items) = per_user.remove(&id) {
                out.push(RatingTask { user_id: id, items });
            }
        }
        out
    };

    Ok(MovieLens {
        train: collect_pool(&train_users, &mut per_user),
        valid: collect_pool(&valid_users, &mut per_user),
        test: collect_pool(&test_users, &mut per_user),
        vocab,
        num_ratings: rows.len(),
        num_users: n,
        num_items: items_seen.len(),
    })
}

impl MovieLens {
    /// Feature width produced by this dataset's vocabulary.
    pub fn feature_dim(&self) -> usize {
        self.vocab.feature_dim()
    }

    /// Meta-training source over the given pools; users with fewer than two
    /// ratings cannot form a context/target split and are skipped.
    pub fn task_source(&self, pools: &[&[RatingTask]]) -> Result<super::PoolSource> {
        let mut tasks = Vec::new();
        for pool in pools {
            for t in pool.iter() {
                if t.len() < 2 {
                    continue;
                }
                tasks.push(RegressionTask {
                    xs: t.items.iter().map(|(f, _)| f.clone()).collect(),
                    ys: t.items.iter().map(|(_, r)| vec![*r]).collect(),
                });
            }
        }
        super::PoolSource::new(tasks, self.feature_dim(), 1)
    }
}

/// Per-user task source backed by a rating-task pool.
pub struct RatingTaskSource {
    tasks: Vec<RegressionTask>,
    dim: usize,
}

impl RatingTaskSource {
    pub fn new(pool: &[RatingTask], dim: usize) -> Result<Self> {
        let tasks: Vec<RegressionTask> = pool
            .iter()
            .filter(|t| t.len() >= 2)
            .map(|t| RegressionTask {
                xs: t.items.iter().map(|(f, _)| f.clone()).collect(),
                ys: t.items.iter().map(|(_, r)| vec![*r]).collect(),
            })
            .collect();
        if tasks.is_empty() {
            return Err(Error::invalid("RatingTaskSource::new", "no usable tasks"));
        }
        Ok(RatingTaskSource { tasks, dim })
    }
}

impl TaskSource for RatingTaskSource {
    fn sample_task(&mut self, rng: &mut crate::rng::Rng) -> Result<RegressionTask> {
        use rand::Rng as _;
        let i = rng.random_range(0..self.tasks.len());
        Ok(self.tasks[i].clone())
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path) {
        // 10 ratings over 4 users and 5 items; users 1-4, items 1-5
        let u_data = "\
1\t1\t5\t100\n\
1\t2\t3\t200\n\
2\t1\t4\t300\n\
2\t3\t2\t400\n\
3\t2\t1\t500\n\
3\t4\t5\t600\n\
4\t1\t3\t700\n\
4\t5\t4\t800\n\
1\t3\t2\t900\n\
2\t2\t5\t1000\n";
        std::fs::write(dir.join("u.data"), u_data).unwrap();
        let mut u_item = String::new();
        for id in 1..=5 {
            let mut flags = vec!["0"; NUM_GENRES];
            flags[id % NUM_GENRES] = "1";
            if id == 2 {
                flags[5] = "1"; // two genres for movie 2
            }
            u_item.push_str(&format!(
                "{id}|Movie {id} (1995)|01-Jan-1995||http://x|{}\n",
                flags.join("|")
            ));
        }
        std::fs::write(dir.join("u.item"), u_item).unwrap();
        let u_user = "\
1|24|M|technician|85711\n\
2|53|F|writer|94043\n\
3|33|M|astronaut|32067\n\
4|41|F|other|10011\n";
        std::fs::write(dir.join("u.user"), u_user).unwrap();
    }

    #[test]
    fn toy_fixture_parses_to_expected_tuples() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let rows = parse_u_data(&dir.path().join("u.data")).unwrap();
        assert_eq!(rows.len(), 10);
        assert_eq!(
            rows[0],
            RatingRow {
                user_id: 1,
                item_id: 1,
                rating: 5.0,
                timestamp: 100.0
            }
        );
        assert_eq!(
            rows[9],
            RatingRow {
                user_id: 2,
                item_id: 2,
                rating: 5.0,
                timestamp: 1000.0
            }
        );
        let genres = parse_u_item(&dir.path().join("u.item")).unwrap();
        assert_eq!(genres.len(), 5);
        // movie 2 carries exactly two genre flags
        let two: f64 = genres[&2].iter().sum();
        assert_eq!(two, 2.0);
        let users = parse_u_user(&dir.path().join("u.user")).unwrap();
        assert_eq!(users.len(), 4);
        assert!(users[&2].is_female);
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let a = movielens_ingest(dir.path(), 7).unwrap();
        let b = movielens_ingest(dir.path(), 7).unwrap();
        let ids = |p: &[RatingTask]| p.iter().map(|t| t.user_id).collect::<Vec<_>>();
        assert_eq!(ids(&a.train), ids(&b.train));
        assert_eq!(ids(&a.valid), ids(&b.valid));
        assert_eq!(ids(&a.test), ids(&b.test));
        // every user in exactly one pool
        let mut all: Vec<u32> = ids(&a.train)
            .into_iter()
            .chain(ids(&a.valid))
            .chain(ids(&a.test))
            .collect();
        all.sort_unstable();
        assert_eq!(all, vec![1, 2, 3, 4]);
        assert_eq!(a.num_ratings, 10);
        assert_eq!(a.num_users, 4);
        assert_eq!(a.num_items, 5);
    }

    #[test]
    fn pool_proportions_within_one() {
        // synthesize 40 users worth of ratings
        let dir = tempfile::tempdir().unwrap();
        let mut u_data = String::new();
        for u in 1..=40 {
            for it in 1..=3 {
                u_data.push_str(&format!("{u}\t{it}\t3\t{}\n", 100 * u + it));
            }
        }
        std::fs::write(dir.path().join("u.data"), u_data).unwrap();
        let mut u_item = String::new();
        for id in 1..=3 {
            u_item.push_str(&format!(
                "{id}|M {id}|||x|{}\n",
                vec!["0"; NUM_GENRES].join("|")
            ));
        }
        std::fs::write(dir.path().join("u.item"), u_item).unwrap();
        let mut u_user = String::new();
        for u in 1..=40 {
            u_user.push_str(&format!("{u}|30|M|writer|00000\n"));
        }
        std::fs::write(dir.path().join("u.user"), u_user).unwrap();

        let d = movielens_ingest(dir.path(), 3).unwrap();
        assert!((d.train.len() as f64 - 28.0).abs() <= 1.0);
        assert!((d.valid.len() as f64 - 4.0).abs() <= 1.0);
        assert!((d.test.len() as f64 - 8.0).abs() <= 1.0);
        assert_eq!(d.train.len() + d.valid.len() + d.test.len(), 40);
    }

    #[test]
    fn featurization_rules() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let d = movielens_ingest(dir.path(), 1).unwrap();
        let rows = parse_u_data(&dir.path().join("u.data")).unwrap();
        let genres = parse_u_item(&dir.path().join("u.item")).unwrap();
        let users = parse_u_user(&dir.path().join("u.user")).unwrap();

        // timestamp equal to the training mean normalizes to zero
        let row = RatingRow {
            user_id: 1,
            item_id: 1,
            rating: 3.0,
            timestamp: d.vocab.ts_mean,
        };
        let f = movielens_featurize(&row, &genres, &users, &d.vocab);
        assert_eq!(f.len(), d.vocab.feature_dim());
        assert_eq!(f[NUM_GENRES], 0.0);

        // unknown occupation maps to the reserved `other` slot
        assert_eq!(
            d.vocab.occupation_slot("zookeeper"),
            d.vocab.occupation_slot("other")
        );

        // single-occurrence training movies use the shared embedding id
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        let train_ids: Vec<u32> = d.train.iter().map(|t| t.user_id).collect();
        for r in rows.iter().filter(|r| train_ids.contains(&r.user_id)) {
            *counts.entry(r.item_id).or_default() += 1;
        }
        for (&item, &c) in &counts {
            if c <= 1 {
                assert_eq!(d.vocab.embedding_id(item), SHARED_EMBEDDING_ID);
            } else {
                assert_ne!(d.vocab.embedding_id(item), SHARED_EMBEDDING_ID);
            }
        }
        // unseen movie id falls back to the shared embedding
        assert_eq!(d.vocab.embedding_id(9999), SHARED_EMBEDDING_ID);
    }

    #[test]
    fn no_leakage_from_test_featurization() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let d = movielens_ingest(dir.path(), 7).unwrap();
        let rows = parse_u_data(&dir.path().join("u.data")).unwrap();
        let users = parse_u_user(&dir.path().join("u.user")).unwrap();
        let genres = parse_u_item(&dir.path().join("u.item")).unwrap();

        // featurize every test-pool row ...
        let test_ids: Vec<u32> = d.test.iter().map(|t| t.user_id).collect();
        for r in rows.iter().filter(|r| test_ids.contains(&r.user_id)) {
            let _ = movielens_featurize(r, &genres, &users, &d.vocab);
        }
        // ... then recompute the training statistics: they must be unchanged
        let train_ids: Vec<u32> = d.train.iter().map(|t| t.user_id).collect();
        let train_rows: Vec<RatingRow> = rows
            .iter()
            .filter(|r| train_ids.contains(&r.user_id))
            .cloned()
            .collect();
        let again = build_vocab(&train_rows, &users, &train_ids);
        assert_eq!(again.ts_mean, d.vocab.ts_mean);
        assert_eq!(again.ts_std, d.vocab.ts_std);
        assert_eq!(again.age_mean, d.vocab.age_mean);
        assert_eq!(again.movie_embedding, d.vocab.movie_embedding);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("u.data"), "1\t1\t5\t100\n1\t2\tbad\t200\n").unwrap();
        let err = parse_u_data(&dir.path().join("u.data")).unwrap_err();
        assert!(err.to_string().contains(":2"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = parse_u_data(Path::new("/nonexistent/u.data")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
