//! Model training. Every family is reduced to one additive form,
//! `score(x) = bias + sum of weights[j] over Liked items j`, so downstream
//! code never needs to know which family produced a model.

pub mod cv;
pub mod logistic;
pub mod naive_bayes;
pub mod svd;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{SparseBinaryDataset, TaskSpec};
use crate::error::{Error, Result};
use crate::mix_seed;

use self::cv::{roc_auc, split, stratified_folds};
use self::logistic::{fit_logistic, sigmoid, DenseDesign, Design, OptimizerOptions, SparseDesign, Subset};
use self::naive_bayes::BernoulliCounts;
use self::svd::{fit_svd_rows, SvdBasis, SvdOptions};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModelFamily {
    /// Logistic regression on the raw binary Likes.
    LrRaw,
    /// Logistic regression on truncated-SVD coordinates.
    LrSvd,
    /// Bernoulli naive Bayes.
    Nb,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] = [ModelFamily::LrSvd, ModelFamily::LrRaw, ModelFamily::Nb];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::LrRaw => "LR_RAW",
            ModelFamily::LrSvd => "LR_SVD",
            ModelFamily::Nb => "NB",
        }
    }

    /// Column label used in rendered tables.
    pub fn short_name(self) -> &'static str {
        match self {
            ModelFamily::LrRaw => "LR",
            ModelFamily::LrSvd => "LRSVD",
            ModelFamily::Nb => "NB",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "lr" | "lrraw" => Ok(ModelFamily::LrRaw),
            "lrsvd" => Ok(ModelFamily::LrSvd),
            "nb" => Ok(ModelFamily::Nb),
            _ => Err(Error::validation(format!(
                "unknown model family {s:?} (expected lr, lrsvd or nb)"
            ))),
        }
    }
}

/// Score-to-probability map. Only the logistic link is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    #[default]
    Logistic,
}

/// Training configuration snapshot stored with every model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub task: String,
    pub n_train: usize,
    pub n_positive: usize,
    pub seed: u64,
    pub cv_folds: usize,
    pub regularization_grid: Vec<f64>,
    pub selected_lambda: Option<f64>,
    /// Mean inner-fold AUC per grid value; `None` where a fold failed to converge.
    pub inner_cv_auc: Vec<Option<f64>>,
    pub optimizer: Option<OptimizerOptions>,
    pub iterations: Option<usize>,
    pub svd_k: Option<usize>,
    pub svd_projection: Option<String>,
    pub nb_smoothing: Option<f64>,
}

/// A trained model in additive form.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveScoreModel {
    pub family: ModelFamily,
    pub bias: f64,
    /// One weight per item of `item_vocab`.
    pub weights: Vec<f64>,
    pub item_vocab: Vec<String>,
    pub calibration: Calibration,
    pub provenance: Provenance,
}

impl AdditiveScoreModel {
    pub fn n_items(&self) -> usize {
        self.weights.len()
    }

    /// `bias + sum(weights[j] for j in row)`.
    pub fn score(&self, row: &[usize]) -> f64 {
        row.iter().fold(self.bias, |s, &j| s + self.weights[j])
    }

    pub fn probability(&self, row: &[usize]) -> f64 {
        self.probability_of_score(self.score(row))
    }

    pub fn probability_of_score(&self, score: f64) -> f64 {
        match self.calibration {
            Calibration::Logistic => sigmoid(score),
        }
    }

    /// The score change caused by Liking `item`, i.e. its weight. The item
    /// must be present in `row`.
    pub fn contribution(&self, row: &[usize], item: usize) -> Result<f64> {
        if !row.contains(&item) {
            return Err(Error::Domain(format!(
                "item {item} is not Liked by this user"
            )));
        }
        Ok(self.weights[item])
    }
}

/// Serialized form: a versioned JSON document.
#[derive(Serialize, Deserialize)]
struct ModelArtifact {
    schema_version: u32,
    family: ModelFamily,
    bias: f64,
    weights: Vec<f64>,
    item_vocab: Vec<String>,
    calibration: Calibration,
    provenance: Provenance,
}

pub fn save_model(model: &AdditiveScoreModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let artifact = ModelArtifact {
        schema_version: SCHEMA_VERSION,
        family: model.family,
        bias: model.bias,
        weights: model.weights.clone(),
        item_vocab: model.item_vocab.clone(),
        calibration: model.calibration,
        provenance: model.provenance.clone(),
    };
    let text = serde_json::to_string_pretty(&artifact)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AdditiveScoreModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}

pub fn model_from_json(text: &str) -> Result<AdditiveScoreModel> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::validation("model artifact has no schema_version"))?;
    if found != u64::from(SCHEMA_VERSION) {
        return Err(Error::SchemaVersion {
            found: found as u32,
            expected: SCHEMA_VERSION,
        });
    }
    let a: ModelArtifact = serde_json::from_value(value)?;
    if a.weights.len() != a.item_vocab.len() {
        return Err(Error::validation(format!(
            "model has {} weights but {} vocabulary entries",
            a.weights.len(),
            a.item_vocab.len()
        )));
    }
    if !a.bias.is_finite() || a.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::validation("model contains non-finite parameters"));
    }
    Ok(AdditiveScoreModel {
        family: a.family,
        bias: a.bias,
        weights: a.weights,
        item_vocab: a.item_vocab,
        calibration: a.calibration,
        provenance: a.provenance,
    })
}

/// Training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub family: ModelFamily,
    /// L2 strengths tried by inner cross-validation.
    pub regularization_grid: Vec<f64>,
    pub cv_folds: usize,
    pub svd_k: usize,
    pub nb_smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            family: ModelFamily::LrSvd,
            regularization_grid: default_grid(),
            cv_folds: 5,
            svd_k: 100,
            nb_smoothing: 1.0,
            seed: 0,
        }
    }
}

/// Seven values, one per decade from 1e-5 to 1e1.
pub fn default_grid() -> Vec<f64> {
    (-5..=1).map(|e| 10f64.powi(e)).collect()
}

impl TrainConfig {
    pub fn with_family(&self, family: ModelFamily) -> Self {
        TrainConfig {
            family,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.regularization_grid.is_empty() {
            return Err(Error::validation("regularization grid is empty"));
        }
        if let Some(bad) = self
            .regularization_grid
            .iter()
            .find(|l| !(l.is_finite() && **l > 0.0))
        {
            return Err(Error::validation(format!(
                "regularization values must be positive and finite, got {bad}"
            )));
        }
        if self.cv_folds < 2 {
            return Err(Error::validation(format!(
                "cv_folds must be >= 2, got {}",
                self.cv_folds
            )));
        }
        if self.svd_k == 0 {
            return Err(Error::validation("svd_k must be positive"));
        }
        if !(self.nb_smoothing > 0.0 && self.nb_smoothing.is_finite()) {
            return Err(Error::validation("nb_smoothing must be positive"));
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Labeled rows a model is fitted on.
#[derive(Debug, Clone)]
pub struct TrainingData<'a> {
    pub task: &'a str,
    pub rows: Vec<&'a [usize]>,
    pub labels: Vec<bool>,
    pub item_vocab: &'a [String],
}

impl<'a> TrainingData<'a> {
    pub fn from_task(dataset: &'a SparseBinaryDataset, task: &'a TaskSpec) -> Self {
        TrainingData {
            task: &task.name,
            rows: task.labeled_users.iter().map(|&u| dataset.row(u)).collect(),
            labels: task.labels.clone(),
            item_vocab: dataset.item_vocab(),
        }
    }

    pub fn subset(&self, index: &[usize]) -> TrainingData<'a> {
        TrainingData {
            task: self.task,
            rows: index.iter().map(|&i| self.rows[i]).collect(),
            labels: index.iter().map(|&i| self.labels[i]).collect(),
            item_vocab: self.item_vocab,
        }
    }

    pub fn n_items(&self) -> usize {
        self.item_vocab.len()
    }

    fn check_classes(&self) -> Result<usize> {
        let pos = self.labels.iter().filter(|&&y| y).count();
        if pos == 0 || pos == self.labels.len() {
            return Err(Error::validation(format!(
                "task {} has single-class training labels",
                self.task
            )));
        }
        Ok(pos)
    }
}

/// Trains one model on every labeled user of `task`.
pub fn train(
    dataset: &SparseBinaryDataset,
    task: &TaskSpec,
    config: &TrainConfig,
) -> Result<AdditiveScoreModel> {
    fit(&TrainingData::from_task(dataset, task), config)
}

/// Trains one model on explicit training data.
pub fn fit(data: &TrainingData<'_>, config: &TrainConfig) -> Result<AdditiveScoreModel> {
    config.validate()?;
    match config.family {
        ModelFamily::Nb => fit_nb(data, config),
        ModelFamily::LrRaw => fit_lr_raw(data, config),
        ModelFamily::LrSvd => fit_lr_svd(data, config).map(|f| f.model),
    }
}

fn base_provenance(data: &TrainingData<'_>, config: &TrainConfig, n_positive: usize) -> Provenance {
    Provenance {
        task: data.task.to_owned(),
        n_train: data.labels.len(),
        n_positive,
        seed: config.seed,
        cv_folds: config.cv_folds,
        regularization_grid: Vec::new(),
        selected_lambda: None,
        inner_cv_auc: Vec::new(),
        optimizer: None,
        iterations: None,
        svd_k: None,
        svd_projection: None,
        nb_smoothing: None,
    }
}

fn fit_nb(data: &TrainingData<'_>, config: &TrainConfig) -> Result<AdditiveScoreModel> {
    let n_positive = data.check_classes()?;
    let counts =
        BernoulliCounts::from_rows(&data.rows, &data.labels, data.n_items(), config.nb_smoothing);
    let (bias, weights) = counts.additive_form();
    let mut provenance = base_provenance(data, config, n_positive);
    provenance.nb_smoothing = Some(config.nb_smoothing);
    Ok(AdditiveScoreModel {
        family: ModelFamily::Nb,
        bias,
        weights,
        item_vocab: data.item_vocab.to_vec(),
        calibration: Calibration::Logistic,
        provenance,
    })
}

fn fit_lr_raw(data: &TrainingData<'_>, config: &TrainConfig) -> Result<AdditiveScoreModel> {
    let n_positive = data.check_classes()?;
    let design = SparseDesign::new(data.rows.clone(), data.n_items());
    let selection = select_lambda(&design, &data.labels, config)?;
    let fit = fit_logistic(&design, &data.labels, selection.lambda, &OPTIMIZER, None)?;
    let mut provenance = base_provenance(data, config, n_positive);
    selection.record(&mut provenance, config);
    provenance.iterations = Some(fit.iterations);
    Ok(AdditiveScoreModel {
        family: ModelFamily::LrRaw,
        bias: fit.intercept,
        weights: fit.coefficients,
        item_vocab: data.item_vocab.to_vec(),
        calibration: Calibration::Logistic,
        provenance,
    })
}

/// An LR_SVD fit with the component-space pieces kept alongside the additive model.
#[derive(Debug, Clone)]
pub struct LrSvdFit {
    pub model: AdditiveScoreModel,
    pub basis: SvdBasis,
    /// Logistic coefficients on the component coordinates.
    pub component_coefficients: Vec<f64>,
}

impl LrSvdFit {
    /// Score computed the long way: intercept + theta . (row . V).
    pub fn component_score(&self, row: &[usize]) -> f64 {
        let coords = self.basis.project(row);
        self.model.bias
            + coords
                .iter()
                .zip(&self.component_coefficients)
                .map(|(x, t)| x * t)
                .sum::<f64>()
    }
}

/// Per-item effective weights `w_j = sum_c theta_c V[j, c]`.
pub fn fold_component_weights(basis: &SvdBasis, theta: &[f64]) -> Vec<f64> {
    assert_eq!(basis.k(), theta.len());
    (0..basis.n_items())
        .map(|j| {
            theta
                .iter()
                .enumerate()
                .map(|(c, t)| t * basis.components[(j, c)])
                .sum()
        })
        .collect()
}

pub fn fit_lr_svd(data: &TrainingData<'_>, config: &TrainConfig) -> Result<LrSvdFit> {
    config.validate()?;
    let n_positive = data.check_classes()?;
    let svd_options = SvdOptions {
        seed: mix_seed(config.seed, 0x5fd),
        ..SvdOptions::default()
    };
    let basis = fit_svd_rows(&data.rows, data.n_items(), config.svd_k, &svd_options)?;
    let design = DenseDesign::new(basis.project_rows(data.rows.iter().copied()), basis.k());
    let selection = select_lambda(&design, &data.labels, config)?;
    let fit = fit_logistic(&design, &data.labels, selection.lambda, &OPTIMIZER, None)?;
    let weights = fold_component_weights(&basis, &fit.coefficients);
    let mut provenance = base_provenance(data, config, n_positive);
    selection.record(&mut provenance, config);
    provenance.iterations = Some(fit.iterations);
    provenance.svd_k = Some(basis.k());
    provenance.svd_projection = Some("unscaled right singular vectors (row . V)".into());
    Ok(LrSvdFit {
        model: AdditiveScoreModel {
            family: ModelFamily::LrSvd,
            bias: fit.intercept,
            weights,
            item_vocab: data.item_vocab.to_vec(),
            calibration: Calibration::Logistic,
            provenance,
        },
        basis,
        component_coefficients: fit.coefficients,
    })
}

/// Fixed optimizer stopping rule, recorded in every model's provenance.
pub const OPTIMIZER: OptimizerOptions = OptimizerOptions {
    tolerance: 1e-6,
    max_iterations: 500,
    history: 10,
};

struct LambdaSelection {
    lambda: f64,
    mean_auc: Vec<Option<f64>>,
}

impl LambdaSelection {
    fn record(&self, provenance: &mut Provenance, config: &TrainConfig) {
        provenance.regularization_grid = config.regularization_grid.clone();
        provenance.selected_lambda = Some(self.lambda);
        provenance.inner_cv_auc = self.mean_auc.clone();
        provenance.optimizer = Some(OPTIMIZER);
    }
}

/// Picks the grid value with the highest mean inner-fold AUC (ties go to the
/// stronger penalty). Grid values where any fold fails to converge are skipped.
fn select_lambda<D: Design>(
    design: &D,
    labels: &[bool],
    config: &TrainConfig,
) -> Result<LambdaSelection> {
    let grid = &config.regularization_grid;
    if grid.len() == 1 {
        return Ok(LambdaSelection {
            lambda: grid[0],
            mean_auc: vec![None],
        });
    }
    let folds = stratified_folds(labels, config.cv_folds, mix_seed(config.seed, 0x1a9e7))?;
    // Walk the grid from strongest to weakest penalty so each fit warm-starts the next.
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));

    let per_fold: Vec<Vec<Result<f64>>> = (0..config.cv_folds)
        .into_par_iter()
        .map(|f| {
            let (train_idx, test_idx) = split(&folds, f);
            let train = Subset::new(design, &train_idx);
            let train_labels: Vec<bool> = train_idx.iter().map(|&i| labels[i]).collect();
            let test_labels: Vec<bool> = test_idx.iter().map(|&i| labels[i]).collect();
            let mut out: Vec<Result<f64>> = (0..grid.len()).map(|_| Ok(f64::NAN)).collect();
            let mut warm: Option<Vec<f64>> = None;
            for &g in &order {
                out[g] = fit_logistic(&train, &train_labels, grid[g], &OPTIMIZER, warm.as_deref())
                    .and_then(|fit| {
                        let theta = fit.to_theta();
                        let p = design.n_features();
                        let scores: Vec<f64> = test_idx
                            .iter()
                            .map(|&i| theta[p] + design.dot(i, &theta[..p]))
                            .collect();
                        warm = Some(theta);
                        roc_auc(&scores, &test_labels).ok_or_else(|| {
                            Error::validation("single class in a validation fold")
                        })
                    });
            }
            out
        })
        .collect();

    let mut first_error = None;
    let mean_auc: Vec<Option<f64>> = (0..grid.len())
        .map(|g| {
            let mut sum = 0.0;
            for fold in &per_fold {
                match &fold[g] {
                    Ok(a) => sum += a,
                    Err(e) => {
                        first_error.get_or_insert_with(|| e.to_string());
                        return None;
                    }
                }
            }
            Some(sum / per_fold.len() as f64)
        })
        .collect();
    let best = order
        .iter()
        .filter_map(|&g| mean_auc[g].map(|a| (g, a)))
        .fold(None::<(usize, f64)>, |best, (g, a)| match best {
            Some((_, b)) if b >= a => best,
            _ => Some((g, a)),
        });
    match best {
        Some((g, _)) => Ok(LambdaSelection {
            lambda: grid[g],
            mean_auc,
        }),
        None => Err(Error::validation(format!(
            "no regularization value succeeded in inner cross-validation: {}",
            first_error.unwrap_or_default()
        ))),
    }
}

/// Held-out AUC from outer cross-validation: each outer training split runs
/// the full inner selection, and the resulting model scores its held-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterCvAuc {
    pub mean: f64,
    pub per_fold: Vec<f64>,
}

pub fn cross_validated_auc(
    dataset: &SparseBinaryDataset,
    task: &TaskSpec,
    config: &TrainConfig,
) -> Result<OuterCvAuc> {
    config.validate()?;
    let data = TrainingData::from_task(dataset, task);
    data.check_classes()?;
    let folds = stratified_folds(&data.labels, config.cv_folds, mix_seed(config.seed, 0x0c7e2))?;
    let per_fold = (0..config.cv_folds)
        .into_par_iter()
        .map(|f| {
            let (train_idx, test_idx) = split(&folds, f);
            let train = data.subset(&train_idx);
            let model = fit(&train, config)?;
            let scores: Vec<f64> = test_idx.iter().map(|&i| model.score(data.rows[i])).collect();
            let labels: Vec<bool> = test_idx.iter().map(|&i| data.labels[i]).collect();
            roc_auc(&scores, &labels)
                .ok_or_else(|| Error::validation("single class in an outer test fold"))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(OuterCvAuc {
        mean: per_fold.iter().sum::<f64>() / per_fold.len() as f64,
        per_fold,
    })
}
