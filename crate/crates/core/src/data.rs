//! Interaction logs, modality feature matrices, the temporal leave-one-out
//! split and negative sampling.
//!
//! Downstream modules only ever see a [`TrainView`]: the training partition
//! of a [`TemporalSplit`]. Validation and test interactions are reachable
//! only through the split itself, which keeps every derived statistic free
//! of future information.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// One timestamped user–item interaction with dense IDs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    /// Seconds since epoch.
    pub time: f64,
}

/// Timestamped interactions with dense, first-appearance-ordered IDs.
#[derive(Debug, Clone)]
pub struct InteractionLog {
    user_keys: Vec<String>,
    item_keys: Vec<String>,
    /// Deduplicated interactions in input order.
    interactions: Vec<Interaction>,
    /// Per user, indices into `interactions` sorted by time; ties keep input order.
    by_user: Vec<Vec<usize>>,
}

impl InteractionLog {
    /// Builds a log from raw string-keyed triples in input order.
    pub fn from_keyed<I, S>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S, f64)>,
        S: AsRef<str>,
    {
        let mut user_index: HashMap<String, u32> = HashMap::new();
        let mut item_index: HashMap<String, u32> = HashMap::new();
        let mut user_keys = Vec::new();
        let mut item_keys = Vec::new();
        let mut seen: HashSet<(u32, u32, u64)> = HashSet::new();
        let mut interactions = Vec::new();

        for (user, item, time) in records {
            if !time.is_finite() || time < 0.0 {
                return Err(Error::Data(format!(
                    "timestamp {time} must be finite and non-negative"
                )));
            }
            let u = intern(&mut user_index, &mut user_keys, user.as_ref());
            let i = intern(&mut item_index, &mut item_keys, item.as_ref());
            if seen.insert((u, i, time.to_bits())) {
                interactions.push(Interaction {
                    user: u,
                    item: i,
                    time,
                });
            }
        }
        if interactions.is_empty() {
            return Err(Error::Data("interaction log is empty".into()));
        }
        Ok(Self::assemble(user_keys, item_keys, interactions))
    }

    /// Builds a log from already-dense triples. IDs are rendered as decimal keys.
    pub fn from_dense(num_users: usize, num_items: usize, triples: Vec<Interaction>) -> Result<Self> {
        for t in &triples {
            if t.user as usize >= num_users || t.item as usize >= num_items {
                return Err(Error::Data(format!(
                    "interaction ({}, {}) outside {num_users} users x {num_items} items",
                    t.user, t.item
                )));
            }
            if !t.time.is_finite() || t.time < 0.0 {
                return Err(Error::Data(format!("timestamp {} invalid", t.time)));
            }
        }
        let mut seen = HashSet::new();
        let interactions: Vec<_> = triples
            .into_iter()
            .filter(|t| seen.insert((t.user, t.item, t.time.to_bits())))
            .collect();
        if interactions.is_empty() {
            return Err(Error::Data("interaction log is empty".into()));
        }
        let user_keys = (0..num_users).map(|u| u.to_string()).collect();
        let item_keys = (0..num_items).map(|i| i.to_string()).collect();
        Ok(Self::assemble(user_keys, item_keys, interactions))
    }

    fn assemble(user_keys: Vec<String>, item_keys: Vec<String>, interactions: Vec<Interaction>) -> Self {
        let mut by_user = vec![Vec::new(); user_keys.len()];
        for (idx, t) in interactions.iter().enumerate() {
            by_user[t.user as usize].push(idx);
        }
        for list in &mut by_user {
            // stable sort: equal timestamps keep input order
            list.sort_by(|&a, &b| interactions[a].time.total_cmp(&interactions[b].time));
        }
        Self {
            user_keys,
            item_keys,
            interactions,
            by_user,
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_keys.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_keys.len()
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    /// Interactions in (deduplicated) input order.
    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    /// A user's interactions in chronological order.
    pub fn user_history(&self, user: usize) -> impl Iterator<Item = &Interaction> + '_ {
        self.by_user[user].iter().map(move |&idx| &self.interactions[idx])
    }

    pub fn user_key(&self, user: usize) -> &str {
        &self.user_keys[user]
    }

    pub fn item_key(&self, item: usize) -> &str {
        &self.item_keys[item]
    }

    /// Writes `user<TAB>item<TAB>timestamp` lines in input order.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for t in &self.interactions {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.user_keys[t.user as usize], self.item_keys[t.item as usize], t.time
            )
            .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn intern(index: &mut HashMap<String, u32>, keys: &mut Vec<String>, key: &str) -> u32 {
    if let Some(&id) = index.get(key) {
        return id;
    }
    let id = keys.len() as u32;
    keys.push(key.to_string());
    index.insert(key.to_string(), id);
    id
}

/// Reads a tab-separated `user<TAB>item<TAB>timestamp` file.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<InteractionLog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text)
}

pub fn parse_interactions(text: &str) -> Result<InteractionLog> {
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(user), Some(item), Some(ts), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::Parse {
                line: line_no,
                message: "expected 3 tab-separated fields".into(),
            });
        };
        let time: f64 = ts.trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("timestamp `{ts}` is not a number"),
        })?;
        if !time.is_finite() || time < 0.0 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("timestamp `{ts}` must be finite and non-negative"),
            });
        }
        records.push((user, item, time));
    }
    if records.is_empty() {
        return Err(Error::Data("interaction file is empty".into()));
    }
    InteractionLog::from_keyed(records)
}

/// Item feature matrix for one modality, `items x dim`, stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeatures {
    pub name: String,
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

pub const FEATURE_MAGIC: &[u8; 5] = b"TMMF1";

impl ModalityFeatures {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} feature matrix",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self {
            name: name.into(),
            rows,
            cols,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.rows,
            self.cols,
            self.values.iter().map(|&v| v as f64).collect(),
        )
        .expect("shape checked at construction")
    }

    /// Binary `TMMF1` encoding: magic, rows and cols as u32 LE, then f32 LE row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.values.len() * 4);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Loads one modality's features, binary `TMMF1` or the text fallback.
/// The modality name defaults to the file stem.
pub fn load_features(path: impl AsRef<Path>) -> Result<ModalityFeatures> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "features".into());
    parse_features(&name, &bytes)
}

pub fn parse_features(name: &str, bytes: &[u8]) -> Result<ModalityFeatures> {
    if bytes.starts_with(FEATURE_MAGIC) {
        return parse_binary_features(name, bytes);
    }
    if bytes.len() >= 4 && bytes[..4] == FEATURE_MAGIC[..4] {
        return Err(Error::Data("feature magic mismatch".into()));
    }
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Data("feature file is neither TMMF1 nor UTF-8 text".into()))?;
    parse_text_features(name, text)
}

fn parse_binary_features(name: &str, bytes: &[u8]) -> Result<ModalityFeatures> {
    if bytes.len() < 13 {
        return Err(Error::Data("truncated TMMF1 header".into()));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let payload = &bytes[13..];
    let expected = rows * cols * 4;
    if payload.len() != expected {
        return Err(Error::Shape(format!(
            "TMMF1 declares {rows}x{cols} ({expected} bytes) but payload has {} bytes",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ModalityFeatures::new(name, rows, cols, values)
}

fn parse_text_features(name: &str, text: &str) -> Result<ModalityFeatures> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::Data("feature file is empty".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse {
            line: hline + 1,
            message: "header must be `rows cols`".into(),
        })?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Parse {
            line: hline + 1,
            message: "header must be `rows cols`".into(),
        });
    };
    let mut values = Vec::with_capacity(rows * cols);
    let mut row = 0;
    for (n, line) in lines {
        if row >= rows {
            return Err(Error::Shape(format!("more than {rows} rows")));
        }
        let before = values.len();
        for (col, tok) in line.split_whitespace().enumerate() {
            let v: f32 = tok.parse().map_err(|_| Error::Parse {
                line: n + 1,
                message: format!("`{tok}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            values.push(v);
        }
        if values.len() - before != cols {
            return Err(Error::Shape(format!(
                "row {row} has {} values, expected {cols}",
                values.len() - before
            )));
        }
        row += 1;
    }
    if row != rows {
        return Err(Error::Shape(format!("found {row} rows, header declares {rows}")));
    }
    ModalityFeatures::new(name, rows, cols, values)
}

/// Training partition with per-user chronological histories.
#[derive(Debug, Clone)]
pub struct TrainView {
    num_users: usize,
    num_items: usize,
    /// Grouped by user, chronological within each user.
    edges: Vec<Interaction>,
    user_offsets: Vec<usize>,
    /// Sorted, deduplicated item IDs per user.
    user_items: Vec<Vec<u32>>,
}

impl TrainView {
    /// Builds a view from per-user chronological histories.
    pub fn from_histories(num_items: usize, histories: Vec<Vec<Interaction>>) -> Self {
        let num_users = histories.len();
        let mut edges = Vec::new();
        let mut user_offsets = Vec::with_capacity(num_users + 1);
        let mut user_items = Vec::with_capacity(num_users);
        user_offsets.push(0);
        for h in histories {
            let mut items: Vec<u32> = h.iter().map(|t| t.item).collect();
            items.sort_unstable();
            items.dedup();
            user_items.push(items);
            edges.extend(h);
            user_offsets.push(edges.len());
        }
        Self {
            num_users,
            num_items,
            edges,
            user_offsets,
            user_items,
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    /// All train interactions, grouped by user.
    pub fn interactions(&self) -> &[Interaction] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn user_history(&self, user: usize) -> &[Interaction] {
        &self.edges[self.user_offsets[user]..self.user_offsets[user + 1]]
    }

    /// Sorted distinct items the user interacted with in train.
    pub fn user_items(&self, user: usize) -> &[u32] {
        &self.user_items[user]
    }

    pub fn contains(&self, user: usize, item: u32) -> bool {
        self.user_items[user].binary_search(&item).is_ok()
    }

    /// The user's most recent train timestamp.
    pub fn anchor(&self, user: usize) -> Option<f64> {
        self.user_history(user)
            .iter()
            .map(|t| t.time)
            .max_by(f64::total_cmp)
    }

    /// `(min, max)` train timestamp over all users.
    pub fn time_range(&self) -> (f64, f64) {
        self.edges
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
                (lo.min(t.time), hi.max(t.time))
            })
    }

    /// `t_max - t_min` over the user's train interactions; 0 for empty histories.
    pub fn user_span(&self, user: usize) -> f64 {
        let h = self.user_history(user);
        let (lo, hi) = h.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
            (lo.min(t.time), hi.max(t.time))
        });
        if h.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

/// Leave-one-out temporal split.
#[derive(Debug, Clone)]
pub struct TemporalSplit {
    train: TrainView,
    valid: Vec<Option<Interaction>>,
    test: Vec<Option<Interaction>>,
}

/// Users with at least this many interactions are evaluated.
pub const MIN_EVAL_INTERACTIONS: usize = 3;

/// Per user: most recent → test, second most recent → validation, rest → train.
/// Users with fewer than three interactions are train-only and not evaluated.
pub fn make_temporal_split(log: &InteractionLog) -> TemporalSplit {
    let mut histories = Vec::with_capacity(log.num_users());
    let mut valid = Vec::with_capacity(log.num_users());
    let mut test = Vec::with_capacity(log.num_users());
    for u in 0..log.num_users() {
        let mut h: Vec<Interaction> = log.user_history(u).copied().collect();
        if h.len() >= MIN_EVAL_INTERACTIONS {
            let t = h.pop();
            let v = h.pop();
            test.push(t);
            valid.push(v);
        } else {
            test.push(None);
            valid.push(None);
        }
        histories.push(h);
    }
    TemporalSplit {
        train: TrainView::from_histories(log.num_items(), histories),
        valid,
        test,
    }
}

impl TemporalSplit {
    pub fn train(&self) -> &TrainView {
        &self.train
    }

    pub fn valid(&self, user: usize) -> Option<&Interaction> {
        self.valid[user].as_ref()
    }

    pub fn test(&self, user: usize) -> Option<&Interaction> {
        self.test[user].as_ref()
    }

    pub fn num_users(&self) -> usize {
        self.train.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items()
    }

    /// Users with held-out validation and test interactions.
    pub fn evaluated_users(&self) -> Vec<usize> {
        (0..self.num_users())
            .filter(|&u| self.test[u].is_some())
            .collect()
    }

    /// Same held-out interactions with a replaced training partition.
    pub fn with_train(&self, train: TrainView) -> Self {
        assert_eq!(train.num_users(), self.train.num_users());
        assert_eq!(train.num_items(), self.train.num_items());
        Self {
            train,
            valid: self.valid.clone(),
            test: self.test.clone(),
        }
    }
}

/// Uniform negative items for a user: no train interaction with `user`,
/// distinct within the call, deterministic for a given seed.
pub fn sample_negatives(train: &TrainView, user: usize, n: usize, seed: u64) -> Result<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_negatives_with(train, user, n, &mut rng)
}

pub fn sample_negatives_with<R: Rng + ?Sized>(
    train: &TrainView,
    user: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<u32>> {
    if n == 0 {
        return Err(Error::InvalidArgument("negative count must be >= 1".into()));
    }
    let positives = train.user_items(user);
    let pool = train.num_items() - positives.len();
    if pool == 0 {
        return Err(Error::Data(format!(
            "user {user} interacted with every item; no negatives to sample"
        )));
    }
    if n > pool {
        return Err(Error::Data(format!(
            "requested {n} distinct negatives but only {pool} candidates exist for user {user}"
        )));
    }
    // dense enumeration when the pool is small relative to the request
    if pool <= 4 * n {
        let mut candidates: Vec<u32> = (0..train.num_items() as u32)
            .filter(|i| positives.binary_search(i).is_err())
            .collect();
        let (chosen, _) = candidates.partial_shuffle(rng, n);
        return Ok(chosen.to_vec());
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let item = rng.gen_range(0..train.num_items() as u32);
        if positives.binary_search(&item).is_err() && !out.contains(&item) {
            out.push(item);
        }
    }
    Ok(out)
}

/// One negative for `user` by rejection; the caller guarantees a non-empty pool.
#[inline]
pub(crate) fn sample_one_negative<R: Rng + ?Sized>(train: &TrainView, user: usize, rng: &mut R) -> u32 {
    let positives = train.user_items(user);
    loop {
        let item = rng.gen_range(0..train.num_items() as u32);
        if positives.binary_search(&item).is_err() {
            return item;
        }
    }
}
