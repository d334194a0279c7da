//! Sparse binary user-item data, task labels, and a synthetic corpus generator.
//!
//! Likes are stored as one sorted index list per user; only the `x_ij = 1`
//! entries exist. Tasks pick a labeled subset of users and attach a binary
//! trait to each.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Users x items binary incidence, one sorted row of item indices per user.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBinaryDataset {
    user_ids: Vec<String>,
    item_vocab: Vec<String>,
    rows: Vec<Vec<usize>>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
}

impl SparseBinaryDataset {
    /// Builds a dataset. Rows are sorted and deduplicated; indices must be
    /// below `item_vocab.len()`.
    pub fn new(
        user_ids: Vec<String>,
        item_vocab: Vec<String>,
        rows: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if item_vocab.is_empty() {
            return Err(Error::validation("item vocabulary is empty"));
        }
        if user_ids.len() != rows.len() {
            return Err(Error::validation(format!(
                "{} user ids but {} rows",
                user_ids.len(),
                rows.len()
            )));
        }
        let user_index = index_of(&user_ids, "user id")?;
        let item_index = index_of(&item_vocab, "item id")?;
        let n_items = item_vocab.len();
        let mut clean = Vec::with_capacity(rows.len());
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&last) = row.last() {
                if last >= n_items {
                    return Err(Error::validation(format!(
                        "user {} references item index {last} but only {n_items} items exist",
                        user_ids[i]
                    )));
                }
            }
            clean.push(row);
        }
        Ok(SparseBinaryDataset {
            user_ids,
            item_vocab,
            rows: clean,
            user_index,
            item_index,
        })
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_vocab.len()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_vocab(&self) -> &[String] {
        &self.item_vocab
    }

    /// Sorted item indices Liked by user `user`.
    pub fn row(&self, user: usize) -> &[usize] {
        &self.rows[user]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    /// Number of stored `x_ij = 1` entries.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn density(&self) -> f64 {
        if self.n_users() == 0 {
            return 0.0;
        }
        self.nnz() as f64 / (self.n_users() as f64 * self.n_items() as f64)
    }

    /// Users (as sets of item ids) who Like each item, for column comparisons.
    pub fn columns(&self) -> Vec<Vec<usize>> {
        let mut cols = vec![Vec::new(); self.n_items()];
        for (u, row) in self.rows.iter().enumerate() {
            for &j in row {
                cols[j].push(u);
            }
        }
        cols
    }
}

fn index_of(ids: &[String], what: &str) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if map.insert(id.clone(), i).is_some() {
            return Err(Error::validation(format!("duplicate {what} {id:?}")));
        }
    }
    Ok(map)
}

/// One binary prediction task over a labeled subset of the dataset's users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    /// Dataset user indices, in label-file order.
    pub labeled_users: Vec<usize>,
    pub labels: Vec<bool>,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, labeled_users: Vec<usize>, labels: Vec<bool>) -> Result<Self> {
        let name = name.into();
        if labeled_users.len() != labels.len() {
            return Err(Error::validation(format!(
                "task {name}: {} users but {} labels",
                labeled_users.len(),
                labels.len()
            )));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = labeled_users.iter().find(|u| !seen.insert(**u)) {
            return Err(Error::validation(format!(
                "task {name}: user index {dup} labeled twice"
            )));
        }
        let task = TaskSpec {
            name,
            labeled_users,
            labels,
        };
        let rate = task.positive_rate();
        if !(rate > 0.0 && rate < 1.0) {
            return Err(Error::validation(format!(
                "task {} has single-class labels (positive rate {rate})",
                task.name
            )));
        }
        Ok(task)
    }

    pub fn n_labeled(&self) -> usize {
        self.labels.len()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }

    pub fn positive_rate(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.n_positive() as f64 / self.labels.len() as f64
    }

    /// Label of a dataset user, if the user belongs to this task.
    pub fn label_of(&self, user: usize) -> Option<bool> {
        self.labeled_users
            .iter()
            .position(|&u| u == user)
            .map(|i| self.labels[i])
    }

    /// Map from dataset user index to label.
    pub fn label_map(&self) -> HashMap<usize, bool> {
        self.labeled_users
            .iter()
            .copied()
            .zip(self.labels.iter().copied())
            .collect()
    }

    /// The same users with labels replaced, e.g. by a permutation.
    pub fn with_labels(&self, labels: Vec<bool>) -> Result<Self> {
        TaskSpec::new(self.name.clone(), self.labeled_users.clone(), labels)
    }
}

/// Reads a likes edge list and a labels file.
///
/// Users and items are indexed in order of first appearance in the likes file.
/// Repeated edges collapse to one entry. A row with an empty `item_id` declares
/// a user with no Likes, and one with an empty `user_id` declares an item.
pub fn load_dataset(
    likes_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<(SparseBinaryDataset, Vec<TaskSpec>)> {
    let likes_path = likes_path.as_ref();
    let labels_path = labels_path.as_ref();

    let mut reader = open_csv(likes_path, &["user_id", "item_id"])?;
    let mut user_ids: Vec<String> = Vec::new();
    let mut user_pos: HashMap<String, usize> = HashMap::new();
    let mut items: Vec<String> = Vec::new();
    let mut item_pos: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<usize>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_parse_error(likes_path, e))?;
        let line = line_of(&record);
        if record.len() != 2 {
            return Err(parse_error(
                likes_path,
                line,
                format!("expected 2 fields, found {}", record.len()),
            ));
        }
        let (user, item) = (record[0].trim(), record[1].trim());
        if user.is_empty() && item.is_empty() {
            return Err(parse_error(likes_path, line, "empty user_id and item_id"));
        }
        let u = (!user.is_empty()).then(|| {
            *user_pos.entry(user.to_owned()).or_insert_with(|| {
                user_ids.push(user.to_owned());
                rows.push(Vec::new());
                user_ids.len() - 1
            })
        });
        let j = (!item.is_empty()).then(|| {
            *item_pos.entry(item.to_owned()).or_insert_with(|| {
                items.push(item.to_owned());
                items.len() - 1
            })
        });
        if let (Some(u), Some(j)) = (u, j) {
            rows[u].push(j);
        }
    }
    let dataset = SparseBinaryDataset::new(user_ids, items, rows)?;

    let mut reader = open_csv(labels_path, &["user_id", "task", "label"])?;
    let mut task_order: Vec<String> = Vec::new();
    let mut task_rows: HashMap<String, (Vec<usize>, Vec<bool>)> = HashMap::new();
    let mut seen: HashMap<(usize, String), bool> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_parse_error(labels_path, e))?;
        let line = line_of(&record);
        if record.len() != 3 {
            return Err(parse_error(
                labels_path,
                line,
                format!("expected 3 fields, found {}", record.len()),
            ));
        }
        let (user, task, label) = (record[0].trim(), record[1].trim(), record[2].trim());
        let label = match label {
            "0" => false,
            "1" => true,
            other => {
                return Err(parse_error(
                    labels_path,
                    line,
                    format!("label must be 0 or 1, found {other:?}"),
                ))
            }
        };
        if task.is_empty() {
            return Err(parse_error(labels_path, line, "empty task name"));
        }
        let u = dataset.user_index(user).ok_or_else(|| {
            Error::validation(format!(
                "{}:{line}: label for unknown user {user:?}",
                labels_path.display()
            ))
        })?;
        match seen.get(&(u, task.to_owned())) {
            Some(&prev) if prev == label => continue,
            Some(_) => {
                return Err(Error::validation(format!(
                    "{}:{line}: conflicting labels for user {user:?} on task {task:?}",
                    labels_path.display()
                )))
            }
            None => {
                seen.insert((u, task.to_owned()), label);
            }
        }
        let entry = task_rows.entry(task.to_owned()).or_insert_with(|| {
            task_order.push(task.to_owned());
            (Vec::new(), Vec::new())
        });
        entry.0.push(u);
        entry.1.push(label);
    }
    if task_order.is_empty() {
        return Err(Error::validation("no tasks"));
    }
    let tasks = task_order
        .into_iter()
        .map(|name| {
            let (users, labels) = task_rows.remove(&name).expect("task recorded");
            TaskSpec::new(name, users, labels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((dataset, tasks))
}

/// Writes the likes edge list and the labels file in the loader's format.
pub fn write_dataset(
    dataset: &SparseBinaryDataset,
    tasks: &[TaskSpec],
    likes_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let likes_path = likes_path.as_ref();
    let mut w = csv::Writer::from_path(likes_path)?;
    w.write_record(["user_id", "item_id"])?;
    for item in &dataset.item_vocab {
        w.write_record(["", item.as_str()])?;
    }
    for (u, row) in dataset.rows().iter().enumerate() {
        if row.is_empty() {
            w.write_record([dataset.user_ids[u].as_str(), ""])?;
        }
        for &j in row {
            w.write_record([&dataset.user_ids[u], &dataset.item_vocab[j]])?;
        }
    }
    w.flush().map_err(|e| Error::io(likes_path, e))?;

    let labels_path = labels_path.as_ref();
    let mut w = csv::Writer::from_path(labels_path)?;
    w.write_record(["user_id", "task", "label"])?;
    for task in tasks {
        for (&u, &y) in task.labeled_users.iter().zip(&task.labels) {
            w.write_record([
                dataset.user_ids[u].as_str(),
                task.name.as_str(),
                if y { "1" } else { "0" },
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let found = reader
        .headers()
        .map_err(|e| csv_parse_error(path, e))?
        .iter()
        .map(str::trim)
        .collect::<Vec<_>>();
    if found != header {
        return Err(parse_error(
            path,
            1,
            format!("expected header {:?}, found {:?}", header.join(","), found.join(",")),
        ));
    }
    Ok(reader)
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line,
        message: message.into(),
    }
}

fn csv_parse_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    parse_error(path, line, err.to_string())
}

/// One row of the per-task summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    pub n_users: usize,
    pub positive_rate: f64,
    pub avg_likes: f64,
}

/// Corpus-wide shape plus one row per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_users: usize,
    pub n_items: usize,
    pub n_likes: usize,
    pub density: f64,
    pub tasks: Vec<TaskSummary>,
}

pub fn dataset_summary(dataset: &SparseBinaryDataset, tasks: &[TaskSpec]) -> DatasetSummary {
    let tasks = tasks
        .iter()
        .map(|t| {
            let likes: usize = t.labeled_users.iter().map(|&u| dataset.row(u).len()).sum();
            TaskSummary {
                task: t.name.clone(),
                n_users: t.n_labeled(),
                positive_rate: t.positive_rate(),
                avg_likes: if t.n_labeled() == 0 {
                    0.0
                } else {
                    likes as f64 / t.n_labeled() as f64
                },
            }
        })
        .collect();
    DatasetSummary {
        n_users: dataset.n_users(),
        n_items: dataset.n_items(),
        n_likes: dataset.nnz(),
        density: dataset.density(),
        tasks,
    }
}

impl fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} users, {} items, {} Likes, density {:.4}%",
            self.n_users,
            self.n_items,
            self.n_likes,
            100.0 * self.density
        )?;
        writeln!(
            f,
            "{:<28} {:>10} {:>11} {:>10}",
            "Task", "# Users", "% Positive", "Avg. Likes"
        )?;
        for t in &self.tasks {
            writeln!(
                f,
                "{:<28} {:>10} {:>11.3} {:>10.0}",
                t.task,
                group_thousands(t.n_users),
                t.positive_rate,
                t.avg_likes
            )?;
        }
        Ok(())
    }
}

fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Parameters of the synthetic corpus generator.
///
/// Labels are drawn first; Likes are then drawn conditioned on the label, so
/// the informative items and their clones are known ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_users: usize,
    pub n_items: usize,
    /// Target density of the incidence matrix.
    pub sparsity: f64,
    pub trait_prevalence: f64,
    pub n_informative: usize,
    /// Odds multiplier applied to informative items for users with the trait.
    pub lift: f64,
    /// Number of identical columns emitted for each informative item.
    pub duplication_factor: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_for(1)
    }

    fn validate_for(&self, n_tasks: usize) -> Result<()> {
        if self.n_users < 2 {
            return Err(Error::validation("n_users must be at least 2"));
        }
        if self.n_items == 0 {
            return Err(Error::validation("n_items must be positive"));
        }
        if !(self.sparsity > 0.0 && self.sparsity < 1.0) {
            return Err(Error::validation(format!(
                "sparsity must lie in (0, 1), got {}",
                self.sparsity
            )));
        }
        if !(self.trait_prevalence > 0.0 && self.trait_prevalence < 1.0) {
            return Err(Error::validation(format!(
                "trait_prevalence must lie in (0, 1), got {}",
                self.trait_prevalence
            )));
        }
        if !(self.lift >= 1.0 && self.lift.is_finite()) {
            return Err(Error::validation(format!(
                "lift must be a finite value >= 1, got {}",
                self.lift
            )));
        }
        if self.duplication_factor == 0 {
            return Err(Error::validation("duplication_factor must be at least 1"));
        }
        let needed = n_tasks * self.n_informative * self.duplication_factor;
        if needed > self.n_items {
            return Err(Error::validation(format!(
                "{n_tasks} task(s) x {} informative items x duplication {} = {needed} columns \
                 exceed n_items = {}",
                self.n_informative, self.duplication_factor, self.n_items
            )));
        }
        let peak = self.sparsity * POPULARITY_MAX * ACTIVITY_MAX;
        if peak >= 1.0 {
            return Err(Error::validation(format!(
                "sparsity {} is infeasible: the most popular item would need a Like \
                 probability of {peak:.2} for the most active users",
                self.sparsity
            )));
        }
        Ok(())
    }
}

// Item popularity and user activity are log-normal multipliers clamped to
// these ranges (before normalization to mean one).
const POPULARITY_SIGMA: f64 = 0.8;
const POPULARITY_MAX: f64 = 5.0;
const ACTIVITY_SIGMA: f64 = 0.5;
const ACTIVITY_MAX: f64 = 2.5;

/// A generated corpus together with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub dataset: SparseBinaryDataset,
    pub tasks: Vec<TaskSpec>,
    /// `informative[t][g]` lists the item indices of clone group `g` of task `t`.
    pub informative: Vec<Vec<Vec<usize>>>,
}

impl SyntheticCorpus {
    /// Generates `n_tasks` independent traits over one user population.
    ///
    /// Each task gets its own disjoint set of `n_informative` item groups. Every
    /// user is labeled for every task.
    pub fn generate(spec: &SynthSpec, n_tasks: usize) -> Result<Self> {
        if n_tasks == 0 {
            return Err(Error::validation("at least one task is required"));
        }
        spec.validate_for(n_tasks)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let d = spec.duplication_factor;

        let labels: Vec<Vec<bool>> = (0..n_tasks)
            .map(|_| {
                (0..spec.n_users)
                    .map(|_| rng.random_bool(spec.trait_prevalence))
                    .collect()
            })
            .collect();

        // A "feature" is one latent column; informative features expand into d items.
        let n_groups = n_tasks * spec.n_informative;
        let n_features = spec.n_items - n_groups * (d - 1);
        let mut slots: Vec<usize> = (0..spec.n_items).collect();
        slots.shuffle(&mut rng);
        let mut feature_items: Vec<Vec<usize>> = Vec::with_capacity(n_features);
        let mut cursor = 0;
        for f in 0..n_features {
            let width = if f < n_groups { d } else { 1 };
            let mut items = slots[cursor..cursor + width].to_vec();
            items.sort_unstable();
            feature_items.push(items);
            cursor += width;
        }

        let popularity = lognormal_multipliers(&mut rng, n_features, POPULARITY_SIGMA, POPULARITY_MAX);
        // Normalize so that the expected number of item entries per user is sparsity * n_items.
        let width_weighted: f64 = popularity
            .iter()
            .zip(&feature_items)
            .map(|(m, items)| m * items.len() as f64)
            .sum();
        let scale = spec.n_items as f64 / width_weighted;
        let base_rate: Vec<f64> = popularity.iter().map(|m| spec.sparsity * m * scale).collect();
        let activity = lognormal_multipliers(&mut rng, spec.n_users, ACTIVITY_SIGMA, ACTIVITY_MAX);

        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); spec.n_users];
        for (u, row) in rows.iter_mut().enumerate() {
            for (f, items) in feature_items.iter().enumerate() {
                let mut p = (base_rate[f] * activity[u]).min(1.0);
                if f < n_groups && labels[f / spec.n_informative][u] {
                    let odds = spec.lift * p / (1.0 - p);
                    p = odds / (1.0 + odds);
                }
                if rng.random_bool(p) {
                    row.extend_from_slice(items);
                }
            }
        }

        let width = spec.n_items.to_string().len();
        let user_width = spec.n_users.to_string().len();
        let user_ids = (0..spec.n_users).map(|u| format!("u{u:0user_width$}")).collect();
        let item_vocab = (0..spec.n_items).map(|j| format!("like{j:0width$}")).collect();
        let dataset = SparseBinaryDataset::new(user_ids, item_vocab, rows)?;

        let all_users: Vec<usize> = (0..spec.n_users).collect();
        let tasks = labels
            .into_iter()
            .enumerate()
            .map(|(t, y)| TaskSpec::new(format!("trait_{t}"), all_users.clone(), y))
            .collect::<Result<Vec<_>>>()?;
        let informative = (0..n_tasks)
            .map(|t| {
                feature_items[t * spec.n_informative..(t + 1) * spec.n_informative].to_vec()
            })
            .collect();
        Ok(SyntheticCorpus {
            dataset,
            tasks,
            informative,
        })
    }
}

/// Generates a single-task synthetic corpus (see [`SyntheticCorpus::generate`]).
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(SparseBinaryDataset, TaskSpec)> {
    let mut corpus = SyntheticCorpus::generate(spec, 1)?;
    let task = corpus.tasks.pop().expect("one task");
    Ok((corpus.dataset, task))
}

fn lognormal_multipliers(rng: &mut ChaCha8Rng, n: usize, sigma: f64, max: f64) -> Vec<f64> {
    let bound = max.ln();
    let raw: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (sigma * z).clamp(-bound, bound).exp()
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / n.max(1) as f64;
    // Renormalizing can push a multiplier above `max`; keep the feasibility bound honest.
    raw.into_iter().map(|m| (m / mean).min(max)).collect()
}

/// Writes a dataset as `likes.csv` and `labels.csv` inside `dir`.
pub fn write_dataset_dir(
    dataset: &SparseBinaryDataset,
    tasks: &[TaskSpec],
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_dataset(dataset, tasks, dir.join(LIKES_FILE), dir.join(LABELS_FILE))
}

/// Loads `likes.csv` and `labels.csv` from `dir`.
pub fn load_dataset_dir(dir: impl AsRef<Path>) -> Result<(SparseBinaryDataset, Vec<TaskSpec>)> {
    let dir = dir.as_ref();
    load_dataset(dir.join(LIKES_FILE), dir.join(LABELS_FILE))
}

pub const LIKES_FILE: &str = "likes.csv";
pub const LABELS_FILE: &str = "labels.csv";

/// Writes a summary as CSV (`task,n_users,positive_rate,avg_likes`).
pub fn write_summary_csv(summary: &DatasetSummary, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task", "n_users", "positive_rate", "avg_likes"])?;
    for t in &summary.tasks {
        w.write_record([
            t.task.clone(),
            t.n_users.to_string(),
            t.positive_rate.to_string(),
            t.avg_likes.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<summary>", e))?;
    Ok(())
}
