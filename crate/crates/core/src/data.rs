//! Rating and attribute storage, ingestion, synthetic corpora, splits and
//! feature encoding.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::fm::{FmModel, Task};
use crate::rng::seeded_rng;
use crate::{Error, Result};

/// Closed interval of admissible rating values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl Default for RatingScale {
    fn default() -> Self {
        Self { min: 1.0, max: 5.0 }
    }
}

impl RatingScale {
    pub fn contains(&self, value: f64) -> bool {
        value.is_finite() && value >= self.min && value <= self.max
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
}

/// Sparse user × item ratings together with the item × attribute matrix.
///
/// Immutable once built; per-user and per-item views are precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingStore {
    num_users: usize,
    num_items: usize,
    num_attrs: usize,
    ratings: Vec<Rating>,
    item_attrs: Vec<Vec<usize>>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    attr_ids: Vec<String>,
    scale: RatingScale,
    by_user: Vec<Vec<(usize, f64)>>,
    by_item: Vec<Vec<(usize, f64)>>,
}

impl RatingStore {
    /// Builds a store with index-derived raw ids (`u0`, `i0`, `a0`, ...).
    pub fn new(
        num_users: usize,
        num_items: usize,
        num_attrs: usize,
        ratings: Vec<Rating>,
        item_attrs: Vec<Vec<usize>>,
        scale: RatingScale,
    ) -> Result<Self> {
        let ids = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect();
        Self::with_ids(
            ratings,
            item_attrs,
            ids("u", num_users),
            ids("i", num_items),
            ids("a", num_attrs),
            scale,
        )
    }

    pub fn with_ids(
        ratings: Vec<Rating>,
        mut item_attrs: Vec<Vec<usize>>,
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        attr_ids: Vec<String>,
        scale: RatingScale,
    ) -> Result<Self> {
        let (num_users, num_items, num_attrs) = (user_ids.len(), item_ids.len(), attr_ids.len());
        if scale.min > scale.max || !scale.min.is_finite() || !scale.max.is_finite() {
            return Err(Error::validation(format!(
                "invalid rating scale [{}, {}]",
                scale.min, scale.max
            )));
        }
        if item_attrs.len() != num_items {
            return Err(Error::validation(format!(
                "attribute rows ({}) do not match item count ({num_items})",
                item_attrs.len()
            )));
        }
        for (item, attrs) in item_attrs.iter_mut().enumerate() {
            attrs.sort_unstable();
            attrs.dedup();
            if let Some(&a) = attrs.last() {
                if a >= num_attrs {
                    return Err(Error::validation(format!(
                        "item {item} references attribute {a} >= {num_attrs}"
                    )));
                }
            }
        }

        let mut by_user = vec![Vec::new(); num_users];
        let mut by_item = vec![Vec::new(); num_items];
        let mut seen = HashSet::with_capacity(ratings.len());
        for r in &ratings {
            if r.user >= num_users || r.item >= num_items {
                return Err(Error::validation(format!(
                    "rating ({}, {}) out of range for {num_users} users x {num_items} items",
                    r.user, r.item
                )));
            }
            if !scale.contains(r.value) {
                return Err(Error::validation(format!(
                    "rating {} for ({}, {}) outside scale [{}, {}]",
                    r.value, user_ids[r.user], item_ids[r.item], scale.min, scale.max
                )));
            }
            if !seen.insert((r.user, r.item)) {
                return Err(Error::validation(format!(
                    "duplicate rating for pair ({}, {})",
                    user_ids[r.user], item_ids[r.item]
                )));
            }
            by_user[r.user].push((r.item, r.value));
            by_item[r.item].push((r.user, r.value));
        }
        for row in by_user.iter_mut().chain(by_item.iter_mut()) {
            row.sort_unstable_by_key(|&(idx, _)| idx);
        }

        Ok(Self {
            num_users,
            num_items,
            num_attrs,
            ratings,
            item_attrs,
            user_ids,
            item_ids,
            attr_ids,
            scale,
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

    pub fn num_attrs(&self) -> usize {
        self.num_attrs
    }

    pub fn num_ratings(&self) -> usize {
        self.ratings.len()
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    /// Sorted attribute indices of `item` (the nonzero entries of its T row).
    pub fn item_attrs(&self, item: usize) -> &[usize] {
        &self.item_attrs[item]
    }

    /// `(item, rating)` pairs of `user`, sorted by item.
    pub fn user_ratings(&self, user: usize) -> &[(usize, f64)] {
        &self.by_user[user]
    }

    /// `(user, rating)` pairs for `item`, sorted by user.
    pub fn item_ratings(&self, item: usize) -> &[(usize, f64)] {
        &self.by_item[item]
    }

    pub fn rating(&self, user: usize, item: usize) -> Option<f64> {
        let row = &self.by_user[user];
        row.binary_search_by_key(&item, |&(i, _)| i)
            .ok()
            .map(|pos| row[pos].1)
    }

    pub fn user_id(&self, user: usize) -> &str {
        &self.user_ids[user]
    }

    pub fn item_id(&self, item: usize) -> &str {
        &self.item_ids[item]
    }

    pub fn attr_id(&self, attr: usize) -> &str {
        &self.attr_ids[attr]
    }

    /// Writes the store in the two-file CSV corpus format.
    pub fn write_corpus(&self, ratings_path: &Path, attributes_path: &Path) -> Result<()> {
        fn io(p: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
            move |e| Error::io(p, e)
        }
        let mut out = BufWriter::new(File::create(ratings_path).map_err(io(ratings_path))?);
        for r in &self.ratings {
            writeln!(
                out,
                "{},{},{}",
                self.user_ids[r.user], self.item_ids[r.item], r.value
            )
            .map_err(io(ratings_path))?;
        }
        out.flush().map_err(io(ratings_path))?;

        let mut out = BufWriter::new(File::create(attributes_path).map_err(io(attributes_path))?);
        for (item, attrs) in self.item_attrs.iter().enumerate() {
            for &a in attrs {
                writeln!(out, "{},{}", self.item_ids[item], self.attr_ids[a])
                    .map_err(io(attributes_path))?;
            }
        }
        out.flush().map_err(io(attributes_path))?;
        Ok(())
    }
}

fn intern(ids: &mut Vec<String>, index: &mut HashMap<String, usize>, raw: &str) -> usize {
    if let Some(&i) = index.get(raw) {
        return i;
    }
    let i = ids.len();
    ids.push(raw.to_string());
    index.insert(raw.to_string(), i);
    i
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a ratings CSV (`user_id,item_id,rating[,timestamp]`) and an
/// attributes CSV (`item_id,attr_id`) into a store.
///
/// Raw ids are mapped to dense indices in first-seen order, ratings file
/// first. Items that only appear in the attributes file are kept as items
/// without ratings.
pub fn ingest(ratings_path: &Path, attributes_path: &Path, scale: RatingScale) -> Result<RatingStore> {
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut attr_ids = Vec::new();
    let mut user_index = HashMap::new();
    let mut item_index = HashMap::new();
    let mut attr_index = HashMap::new();
    let mut ratings = Vec::new();

    let mut reader = csv_reader(ratings_path)?;
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(n + 1);
            parse_error(ratings_path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(n + 1);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() < 3 || record.len() > 4 {
            return Err(parse_error(
                ratings_path,
                line,
                format!("expected 3 or 4 fields, found {}", record.len()),
            ));
        }
        let value: f64 = match record[2].parse() {
            Ok(v) => v,
            // a non-numeric rating on the first record is a header
            Err(_) if n == 0 => continue,
            Err(_) => {
                return Err(parse_error(
                    ratings_path,
                    line,
                    format!("rating '{}' is not a number", &record[2]),
                ))
            }
        };
        if record[0].is_empty() || record[1].is_empty() {
            return Err(parse_error(ratings_path, line, "empty user or item id"));
        }
        let user = intern(&mut user_ids, &mut user_index, &record[0]);
        let item = intern(&mut item_ids, &mut item_index, &record[1]);
        ratings.push(Rating { user, item, value });
    }

    let mut pairs = Vec::new();
    let mut reader = csv_reader(attributes_path)?;
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(n + 1);
            parse_error(attributes_path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(n + 1);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 2 {
            return Err(parse_error(
                attributes_path,
                line,
                format!("expected 2 fields, found {}", record.len()),
            ));
        }
        if n == 0
            && record[0].eq_ignore_ascii_case("item_id")
            && record[1].eq_ignore_ascii_case("attr_id")
        {
            continue;
        }
        if record[0].is_empty() || record[1].is_empty() {
            return Err(parse_error(attributes_path, line, "empty item or attribute id"));
        }
        let item = intern(&mut item_ids, &mut item_index, &record[0]);
        let attr = intern(&mut attr_ids, &mut attr_index, &record[1]);
        pairs.push((item, attr));
    }

    let mut item_attrs = vec![Vec::new(); item_ids.len()];
    for (item, attr) in pairs {
        item_attrs[item].push(attr);
    }
    RatingStore::with_ids(ratings, item_attrs, user_ids, item_ids, attr_ids, scale)
}

/// Parameters of the synthetic corpus generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_attrs: usize,
    pub latent_dim: usize,
    pub density: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_users: 300,
            n_items: 200,
            n_attrs: 50,
            latent_dim: 4,
            density: 0.05,
            noise_std: 0.2,
            seed: 7,
        }
    }
}

const MAX_ATTRS_PER_ITEM: usize = 4;

/// Generates a corpus whose clean ratings are the output of a random
/// factorization machine over user, item and attribute one-hots.
///
/// Which ratings are observed depends only on user activity and
/// attribute-driven item popularity, so the willingness to rate is
/// learnable from users and attributes.
pub fn generate_synthetic(spec: &SyntheticSpec, scale: RatingScale) -> Result<RatingStore> {
    if spec.n_users == 0 || spec.n_items == 0 || spec.n_attrs == 0 || spec.latent_dim == 0 {
        return Err(Error::validation("synthetic counts must be at least 1"));
    }
    if !(spec.density > 0.0 && spec.density <= 1.0) {
        return Err(Error::validation(format!(
            "density must lie in (0, 1], got {}",
            spec.density
        )));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(Error::validation("noise_std must be finite and >= 0"));
    }
    let mut rng = seeded_rng(spec.seed);

    let per_item = spec.n_attrs.min(MAX_ATTRS_PER_ITEM);
    let item_attrs: Vec<Vec<usize>> = (0..spec.n_items)
        .map(|_| {
            let count = rng.random_range(1..=per_item);
            let mut attrs = index::sample(&mut rng, spec.n_attrs, count).into_vec();
            attrs.sort_unstable();
            attrs
        })
        .collect();

    let layout = Layout {
        users: spec.n_users,
        items: Some(spec.n_items),
        attrs: spec.n_attrs,
    };
    let dim = spec.latent_dim;
    let mut truth = FmModel::zeros(layout, dim, Task::Regression);
    truth.w0 = (scale.min + scale.max) / 2.0;
    let blocks = [
        (0, spec.n_users, 0.3, 0.5),
        (spec.n_users, spec.n_items, 0.5, 0.3),
        (spec.n_users + spec.n_items, spec.n_attrs, 0.3, 0.35),
    ];
    for (offset, len, w_std, v_std) in blocks {
        for i in offset..offset + len {
            truth.w[i] = w_std * rng.sample::<f64, _>(StandardNormal);
            for f in 0..dim {
                truth.v[i * dim + f] = v_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    let activity: Vec<f64> = (0..spec.n_users)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let attr_pop: Vec<f64> = (0..spec.n_attrs)
        .map(|_| 0.8 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let item_pop: Vec<f64> = item_attrs
        .iter()
        .map(|attrs| {
            let s: f64 = attrs.iter().map(|&a| attr_pop[a]).sum();
            s / (attrs.len() as f64).sqrt() + 0.3 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();

    let mut clean = Vec::with_capacity(spec.n_users * spec.n_items);
    let mut logits = Vec::with_capacity(spec.n_users * spec.n_items);
    for (u, &act) in activity.iter().enumerate() {
        for (i, attrs) in item_attrs.iter().enumerate() {
            let x = encode(layout, u, Some(i), attrs)?;
            let score = truth.predict(&x)?;
            clean.push(score);
            logits.push(act + item_pop[i]);
        }
    }

    let offset = if spec.density >= 1.0 {
        f64::INFINITY
    } else {
        calibrate_offset(&logits, spec.density)
    };
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::validation(e.to_string()))?;

    let mut ratings = Vec::new();
    for u in 0..spec.n_users {
        for i in 0..spec.n_items {
            let cell = u * spec.n_items + i;
            let observed = offset.is_infinite() || rng.random::<f64>() < sigmoid(offset + logits[cell]);
            if !observed {
                continue;
            }
            let eps = if spec.noise_std > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            ratings.push(Rating {
                user: u,
                item: i,
                value: scale.clamp(clean[cell] + eps),
            });
        }
    }

    RatingStore::new(
        spec.n_users,
        spec.n_items,
        spec.n_attrs,
        ratings,
        item_attrs,
        scale,
    )
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Offset `b` such that the mean of `sigmoid(b + logit)` equals `target`.
fn calibrate_offset(logits: &[f64], target: f64) -> f64 {
    let mean_at = |b: f64| logits.iter().map(|&l| sigmoid(b + l)).sum::<f64>() / logits.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Partition of items into train/test and of users into the
/// active-selection and prediction halves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Split {
    pub train_items: Vec<usize>,
    pub test_items: Vec<usize>,
    pub active_users: Vec<usize>,
    pub prediction_users: Vec<usize>,
    pub seed: u64,
    #[serde(skip)]
    is_test: Vec<bool>,
    #[serde(skip)]
    is_active: Vec<bool>,
}

impl Split {
    pub fn is_test_item(&self, item: usize) -> bool {
        self.is_test[item]
    }

    pub fn is_active_user(&self, user: usize) -> bool {
        self.is_active[user]
    }
}

/// Round-half-up of `fraction * n`.
pub fn test_item_count(n_items: usize, fraction: f64) -> usize {
    (fraction * n_items as f64 + 0.5).floor() as usize
}

/// Draws the item and user partitions from a seeded generator.
pub fn make_split(store: &RatingStore, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::validation(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let (n_items, n_users) = (store.num_items(), store.num_users());
    if n_items < 2 || n_users < 2 {
        return Err(Error::validation("a split needs at least 2 items and 2 users"));
    }
    let n_test = test_item_count(n_items, test_fraction);
    if n_test == 0 || n_test == n_items {
        return Err(Error::validation(format!(
            "test_fraction {test_fraction} leaves one side of the item split empty"
        )));
    }

    let mut rng = seeded_rng(seed);
    let mut items: Vec<usize> = (0..n_items).collect();
    items.shuffle(&mut rng);
    let mut users: Vec<usize> = (0..n_users).collect();
    users.shuffle(&mut rng);

    let mut test_items = items[..n_test].to_vec();
    let mut train_items = items[n_test..].to_vec();
    let n_active = n_users.div_ceil(2);
    let mut active_users = users[..n_active].to_vec();
    let mut prediction_users = users[n_active..].to_vec();
    for v in [
        &mut test_items,
        &mut train_items,
        &mut active_users,
        &mut prediction_users,
    ] {
        v.sort_unstable();
    }

    let mut is_test = vec![false; n_items];
    test_items.iter().for_each(|&i| is_test[i] = true);
    let mut is_active = vec![false; n_users];
    active_users.iter().for_each(|&u| is_active[u] = true);

    Ok(Split {
        train_items,
        test_items,
        active_users,
        prediction_users,
        seed,
        is_test,
        is_active,
    })
}

/// Sparse 0/1 matrix stored as sorted column lists per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    ones: Vec<Vec<usize>>,
}

impl BinaryMatrix {
    pub fn from_ones(rows: usize, cols: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut ones = vec![Vec::new(); rows];
        for (r, c) in pairs {
            assert!(r < rows && c < cols, "index ({r}, {c}) outside {rows}x{cols}");
            ones[r].push(c);
        }
        for row in &mut ones {
            row.sort_unstable();
            row.dedup();
        }
        Self { rows, cols, ones }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.ones[row].binary_search(&col).is_ok()
    }

    pub fn row_ones(&self, row: usize) -> &[usize] {
        &self.ones[row]
    }

    pub fn count_ones(&self) -> usize {
        self.ones.iter().map(Vec::len).sum()
    }
}

/// The observed-rating indicator matrix (users × items).
pub fn binarize(store: &RatingStore) -> BinaryMatrix {
    BinaryMatrix::from_ones(
        store.num_users(),
        store.num_items(),
        store.ratings().iter().map(|r| (r.user, r.item)),
    )
}

/// Block structure of a feature vector: user one-hot, optional item
/// one-hot, then attribute indicators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub users: usize,
    pub items: Option<usize>,
    pub attrs: usize,
}

impl Layout {
    pub fn user_attr(store: &RatingStore) -> Self {
        Self {
            users: store.num_users(),
            items: None,
            attrs: store.num_attrs(),
        }
    }

    pub fn user_item_attr(store: &RatingStore) -> Self {
        Self {
            users: store.num_users(),
            items: Some(store.num_items()),
            attrs: store.num_attrs(),
        }
    }

    /// A layout of `dim` free-form features, for raw numeric inputs.
    pub fn flat(dim: usize) -> Self {
        Self {
            users: 0,
            items: None,
            attrs: dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.users + self.items.unwrap_or(0) + self.attrs
    }

    pub fn attr_offset(&self) -> usize {
        self.users + self.items.unwrap_or(0)
    }
}

/// Sparse feature vector with entries sorted by feature index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    pub fn from_sparse(dim: usize, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.sort_unstable_by_key(|&(i, _)| i);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::contract("duplicate feature index"));
        }
        if entries.last().is_some_and(|&(i, _)| i >= dim) {
            return Err(Error::contract(format!("feature index beyond dimension {dim}")));
        }
        Ok(Self { dim, entries })
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self {
            dim: values.len(),
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, &v)| (i, v))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

/// Concatenates user one-hot | item one-hot (if the layout has one) |
/// attribute indicators.
pub fn encode(layout: Layout, user: usize, item: Option<usize>, attrs: &[usize]) -> Result<FeatureVector> {
    if user >= layout.users {
        return Err(Error::contract(format!(
            "user {user} outside user block of size {}",
            layout.users
        )));
    }
    let mut entries = Vec::with_capacity(2 + attrs.len());
    entries.push((user, 1.0));
    match (layout.items, item) {
        (Some(n_items), Some(item)) if item < n_items => entries.push((layout.users + item, 1.0)),
        (Some(n_items), Some(item)) => {
            return Err(Error::contract(format!(
                "item {item} outside item block of size {n_items}"
            )))
        }
        (Some(_), None) => return Err(Error::contract("layout has an item block but no item was given")),
        (None, Some(_)) => return Err(Error::contract("item given for a layout without an item block")),
        (None, None) => {}
    }
    let offset = layout.attr_offset();
    for &a in attrs {
        if a >= layout.attrs {
            return Err(Error::contract(format!(
                "attribute {a} outside attribute block of size {}",
                layout.attrs
            )));
        }
        entries.push((offset + a, 1.0));
    }
    FeatureVector::from_sparse(layout.dim(), entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn ingest_minimal_store() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(dir.path(), "r.csv", "u1,i1,4.0\n");
        let a = write(dir.path(), "a.csv", "");
        let store = ingest(&r, &a, RatingScale::default()).unwrap();
        assert_eq!((store.num_users(), store.num_items(), store.num_attrs()), (1, 1, 0));
        assert_eq!(store.rating(0, 0), Some(4.0));
    }

    #[test]
    fn ingest_header_timestamp_and_first_seen_order() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(
            dir.path(),
            "r.csv",
            "userId,movieId,rating,timestamp\n42,7,3.5,100\n17,7,5,101\n42,9,1,102\n",
        );
        let a = write(dir.path(), "a.csv", "item_id,attr_id\n9,drama\n7,comedy\n7,drama\n11,noir\n");
        let store = ingest(&r, &a, RatingScale::default()).unwrap();
        assert_eq!(store.num_users(), 2);
        assert_eq!(store.user_id(0), "42");
        assert_eq!(store.item_id(1), "9");
        // item 11 only appears in the attribute file
        assert_eq!(store.num_items(), 3);
        assert_eq!(store.item_ratings(2).len(), 0);
        assert_eq!(store.attr_id(0), "drama");
        assert_eq!(store.item_attrs(0), &[0, 1]);
    }

    #[test]
    fn ingest_rejects_duplicates_and_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.csv", "");
        let dup = write(dir.path(), "dup.csv", "u1,i1,4\nu1,i1,3\n");
        let err = ingest(&dup, &a, RatingScale::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("(u1, i1)")), "{err}");

        let bad = write(dir.path(), "bad.csv", "u1,i1,4\nu2,i1,four\n");
        match ingest(&bad, &a, RatingScale::default()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }

        let short = write(dir.path(), "short.csv", "u1,i1\n");
        assert!(matches!(
            ingest(&short, &a, RatingScale::default()),
            Err(Error::Parse { line: 1, .. })
        ));

        let out = write(dir.path(), "out.csv", "u1,i1,7\n");
        assert!(matches!(
            ingest(&out, &a, RatingScale::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn synthetic_is_deterministic_and_round_trips() {
        let spec = SyntheticSpec::default();
        let a = generate_synthetic(&spec, RatingScale::default()).unwrap();
        let b = generate_synthetic(&spec, RatingScale::default()).unwrap();
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        let (ra, aa) = (dir.path().join("ra.csv"), dir.path().join("aa.csv"));
        let (rb, ab) = (dir.path().join("rb.csv"), dir.path().join("ab.csv"));
        a.write_corpus(&ra, &aa).unwrap();
        b.write_corpus(&rb, &ab).unwrap();
        assert_eq!(std::fs::read(&ra).unwrap(), std::fs::read(&rb).unwrap());
        assert_eq!(std::fs::read(&aa).unwrap(), std::fs::read(&ab).unwrap());

        let back = ingest(&ra, &aa, RatingScale::default()).unwrap();
        assert_eq!(back.num_ratings(), a.num_ratings());
        for r in a.ratings() {
            let u = (0..back.num_users()).find(|&u| back.user_id(u) == a.user_id(r.user)).unwrap();
            let i = (0..back.num_items()).find(|&i| back.item_id(i) == a.item_id(r.item)).unwrap();
            assert_eq!(back.rating(u, i), Some(r.value));
        }
    }

    #[test]
    fn synthetic_density_and_degenerate_attributes() {
        let spec = SyntheticSpec::default();
        let store = generate_synthetic(&spec, RatingScale::default()).unwrap();
        let density = store.num_ratings() as f64 / (300.0 * 200.0);
        assert!((density - 0.05).abs() < 0.01, "density {density}");

        let one = SyntheticSpec { n_attrs: 1, ..spec };
        let store = generate_synthetic(&one, RatingScale::default()).unwrap();
        assert!((0..store.num_items()).all(|i| store.item_attrs(i) == [0]));

        let zero = SyntheticSpec { density: 0.0, ..spec };
        assert!(matches!(
            generate_synthetic(&zero, RatingScale::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let store = RatingStore::new(4, 10, 0, vec![], vec![vec![]; 10], RatingScale::default()).unwrap();
        let s = make_split(&store, 0.2, 3).unwrap();
        assert_eq!(s.test_items.len(), 2);
        assert_eq!(s.train_items.len(), 8);
        assert_eq!(s.active_users.len(), 2);
        assert_eq!(s, make_split(&store, 0.2, 3).unwrap());
        assert_eq!(test_item_count(9998, 0.2), 2000);

        let tiny = RatingStore::new(1, 1, 0, vec![], vec![vec![]], RatingScale::default()).unwrap();
        assert!(matches!(make_split(&tiny, 0.5, 0), Err(Error::Validation(_))));
        assert!(matches!(make_split(&store, 1.0, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn binarize_marks_rated_cells() {
        let ratings = vec![
            Rating { user: 0, item: 0, value: 4.5 },
            Rating { user: 1, item: 2, value: 1.0 },
        ];
        let store = RatingStore::new(2, 3, 0, ratings, vec![vec![]; 3], RatingScale::default()).unwrap();
        let r01 = binarize(&store);
        assert!(r01.get(0, 0) && r01.get(1, 2));
        assert_eq!(r01.count_ones(), 2);
        assert!(!r01.get(0, 2));

        let empty = RatingStore::new(2, 3, 0, vec![], vec![vec![]; 3], RatingScale::default()).unwrap();
        assert_eq!(binarize(&empty).count_ones(), 0);
    }

    #[test]
    fn encode_block_layout() {
        let no_item = Layout { users: 4, items: None, attrs: 3 };
        let x = encode(no_item, 0, None, &[0, 2]).unwrap();
        let idx: Vec<usize> = x.entries().iter().map(|e| e.0).collect();
        assert_eq!(idx, vec![0, 4, 6]);
        assert_eq!(x.dim(), 7);

        let with_item = Layout { users: 4, items: Some(2), attrs: 3 };
        let x = encode(with_item, 3, Some(1), &[]).unwrap();
        let idx: Vec<usize> = x.entries().iter().map(|e| e.0).collect();
        assert_eq!(idx, vec![3, 5]);
        assert_eq!(x, encode(with_item, 3, Some(1), &[]).unwrap());

        assert!(matches!(encode(with_item, 0, None, &[]), Err(Error::Contract(_))));
        assert!(matches!(encode(no_item, 4, None, &[]), Err(Error::Contract(_))));
    }
}
