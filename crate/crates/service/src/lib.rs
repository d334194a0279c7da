//! What-if cloaking over HTTP.
//!
//! The service loads one or more (model, dataset, task, delta) bundles at boot,
//! freezes each bundle's targeting cutoff, and then answers read-only queries:
//!
//! - `GET /tasks` lists the loaded bundles.
//! - `POST /whatif` scores a user with a client-chosen set of Likes hidden and
//!   suggests the remaining greedy cloak.
//! - `GET /users/{id}/explanation?task=...` returns the minimal evidence set,
//!   the contribution ranking and the probability trajectory.
//!
//! Hidden sets travel with every request; the server keeps no session state.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use likecloak::cloaking::{cloak_trajectory, cloak_user, compute_targeting, CloakStatus, TargetingRule};
use likecloak::corpus::{load_dataset_dir, SparseBinaryDataset, TaskSpec};
use likecloak::models::{load_model, AdditiveScoreModel, ModelFamily};
use likecloak::{Error, Result};

/// Contents of the `serve --config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind_address: String,
    #[serde(default)]
    pub bundles: Vec<BundleConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleConfig {
    /// Model artifact JSON.
    pub model_path: PathBuf,
    /// Directory holding `likes.csv` and `labels.csv`.
    pub data_path: PathBuf,
    pub task: String,
    pub delta: f64,
}

impl ServiceConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut config: ServiceConfig = serde_json::from_str(&text)?;
        // Relative paths are relative to the config file.
        if let Some(base) = path.parent() {
            for b in &mut config.bundles {
                b.model_path = base.join(&b.model_path);
                b.data_path = base.join(&b.data_path);
            }
        }
        Ok(config)
    }
}

/// One loaded task: model, data and the cutoff frozen at boot.
#[derive(Debug)]
pub struct Bundle {
    pub model: AdditiveScoreModel,
    pub dataset: Arc<SparseBinaryDataset>,
    pub task: TaskSpec,
    pub rule: TargetingRule,
}

impl Bundle {
    pub fn new(model: AdditiveScoreModel, dataset: Arc<SparseBinaryDataset>, task: TaskSpec, delta: f64) -> Result<Self> {
        let rule = compute_targeting(&model, &dataset, &task, delta)?;
        Ok(Bundle {
            model,
            dataset,
            task,
            rule,
        })
    }
}

/// Immutable state shared by all requests.
#[derive(Debug, Default)]
pub struct AppState {
    bundles: Vec<Bundle>,
}

impl AppState {
    pub fn new(bundles: Vec<Bundle>) -> Result<Self> {
        for (i, b) in bundles.iter().enumerate() {
            if bundles[..i].iter().any(|o| o.task.name == b.task.name) {
                return Err(Error::Validation(format!("task {:?} is loaded twice", b.task.name)));
            }
        }
        Ok(AppState { bundles })
    }

    /// Loads every bundle of `config`; datasets shared by several bundles are read once.
    pub fn from_config(config: &ServiceConfig) -> Result<Self> {
        let mut cache: HashMap<PathBuf, (Arc<SparseBinaryDataset>, Vec<TaskSpec>)> = HashMap::new();
        let mut bundles = Vec::with_capacity(config.bundles.len());
        for b in &config.bundles {
            if !cache.contains_key(&b.data_path) {
                let (dataset, tasks) = load_dataset_dir(&b.data_path)?;
                cache.insert(b.data_path.clone(), (Arc::new(dataset), tasks));
            }
            let (dataset, tasks) = &cache[&b.data_path];
            let task = tasks
                .iter()
                .find(|t| t.name == b.task)
                .ok_or_else(|| {
                    Error::Validation(format!("task {:?} not found in {}", b.task, b.data_path.display()))
                })?
                .clone();
            let model = load_model(&b.model_path)?;
            bundles.push(Bundle::new(model, Arc::clone(dataset), task, b.delta)?);
        }
        AppState::new(bundles)
    }

    pub fn bundles(&self) -> &[Bundle] {
        &self.bundles
    }

    fn bundle(&self, task: &str) -> Result<&Bundle, ApiError> {
        self.bundles
            .iter()
            .find(|b| b.task.name == task)
            .ok_or_else(|| ApiError::NotFound(format!("unknown task {task:?}")))
    }
}

/// Error body: `{"error": "..."}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Unprocessable(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error) = match self {
            ApiError::BadRequest(e) => (StatusCode::BAD_REQUEST, e),
            ApiError::NotFound(e) => (StatusCode::NOT_FOUND, e),
            ApiError::Unprocessable(e) => (StatusCode::UNPROCESSABLE_ENTITY, e),
        };
        (status, Json(ErrorBody { error })).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub task: String,
    pub delta: f64,
    pub cutoff_score: f64,
    pub model_family: ModelFamily,
    pub n_targeted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfRequest {
    pub task: String,
    pub user: String,
    #[serde(default)]
    pub hidden_items: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub item: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloakStep {
    pub item: String,
    pub weight: f64,
    pub score_after: f64,
    pub probability_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub task: String,
    pub user: String,
    pub score: f64,
    pub probability: f64,
    pub cutoff_score: f64,
    pub targeted: bool,
    /// Visible Likes by weight, largest first.
    pub contributions: Vec<Contribution>,
    /// Greedy plan from the current visible state; empty when not targeted or uncloakable.
    pub suggested_cloak: Vec<CloakStep>,
    pub uncloakable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub step: usize,
    pub item: Option<String>,
    pub weight: Option<f64>,
    pub score: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub task: String,
    pub user: String,
    pub score: f64,
    pub probability: f64,
    pub cutoff_score: f64,
    pub targeted: bool,
    /// `not targeted` or `uncloakable` when the minimal set is empty.
    pub flag: Option<String>,
    pub minimal_set: Vec<String>,
    pub contributions: Vec<Contribution>,
    /// Greedy removals over every positive-weight Like; step 0 hides nothing.
    pub trajectory: Vec<TrajectoryStep>,
}

#[derive(Debug, Deserialize)]
pub struct ExplanationQuery {
    pub task: Option<String>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/tasks", get(list_tasks))
        .route("/whatif", post(what_if))
        .route("/users/{id}/explanation", get(explanation))
        .with_state(state)
}

async fn list_tasks(State(state): State<Arc<AppState>>) -> Json<Vec<TaskEntry>> {
    Json(
        state
            .bundles
            .iter()
            .map(|b| TaskEntry {
                task: b.task.name.clone(),
                delta: b.rule.delta,
                cutoff_score: b.rule.cutoff_score,
                model_family: b.model.family,
                n_targeted: b.rule.targeted.len(),
            })
            .collect(),
    )
}

async fn what_if(
    State(state): State<Arc<AppState>>,
    Json(request): Json<WhatIfRequest>,
) -> Result<Json<WhatIfResponse>, ApiError> {
    evaluate_what_if(&state, &request).map(Json)
}

async fn explanation(
    State(state): State<Arc<AppState>>,
    UrlPath(user): UrlPath<String>,
    Query(query): Query<ExplanationQuery>,
) -> Result<Json<Explanation>, ApiError> {
    let task = query
        .task
        .ok_or_else(|| ApiError::BadRequest("missing query parameter task".into()))?;
    explain(&state, &task, &user).map(Json)
}

fn user_row<'a>(bundle: &'a Bundle, user: &str) -> Result<&'a [usize], ApiError> {
    bundle
        .dataset
        .user_index(user)
        .map(|u| bundle.dataset.row(u))
        .ok_or_else(|| ApiError::NotFound(format!("unknown user {user:?}")))
}

fn contributions(bundle: &Bundle, row: &[usize]) -> Vec<Contribution> {
    let weights = &bundle.model.weights;
    let mut items = row.to_vec();
    items.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    items
        .into_iter()
        .map(|j| Contribution {
            item: bundle.model.item_vocab[j].clone(),
            weight: weights[j],
        })
        .collect()
}

/// Core of `POST /whatif`, usable without HTTP.
pub fn evaluate_what_if(state: &AppState, request: &WhatIfRequest) -> Result<WhatIfResponse, ApiError> {
    let bundle = state.bundle(&request.task)?;
    let row = user_row(bundle, &request.user)?;
    let mut hidden = Vec::with_capacity(request.hidden_items.len());
    for id in &request.hidden_items {
        match bundle.dataset.item_index(id) {
            Some(j) if row.contains(&j) => hidden.push(j),
            _ => {
                return Err(ApiError::Unprocessable(format!(
                    "item {id:?} is not Liked by user {:?}",
                    request.user
                )))
            }
        }
    }
    let visible: Vec<usize> = row.iter().copied().filter(|j| !hidden.contains(j)).collect();
    let model = &bundle.model;
    let cutoff = bundle.rule.cutoff_score;
    let score = model.score(&visible);
    let targeted = bundle.rule.is_targeted(score);
    let (suggested_cloak, uncloakable) = if targeted {
        let plan = cloak_user(model, &visible, cutoff).expect("targeted users score above the cutoff");
        match plan.status {
            CloakStatus::Cloaked => (
                plan.removed
                    .into_iter()
                    .map(|s| CloakStep {
                        item: model.item_vocab[s.item].clone(),
                        weight: s.weight,
                        score_after: s.score_after,
                        probability_after: s.probability_after,
                    })
                    .collect(),
                false,
            ),
            CloakStatus::Uncloakable => (Vec::new(), true),
        }
    } else {
        (Vec::new(), false)
    };
    Ok(WhatIfResponse {
        task: request.task.clone(),
        user: request.user.clone(),
        score,
        probability: model.probability_of_score(score),
        cutoff_score: cutoff,
        targeted,
        contributions: contributions(bundle, &visible),
        suggested_cloak,
        uncloakable,
    })
}

/// Core of `GET /users/{id}/explanation`, usable without HTTP.
pub fn explain(state: &AppState, task: &str, user: &str) -> Result<Explanation, ApiError> {
    let bundle = state.bundle(task)?;
    let row = user_row(bundle, user)?;
    let what_if = evaluate_what_if(
        state,
        &WhatIfRequest {
            task: task.to_owned(),
            user: user.to_owned(),
            hidden_items: Vec::new(),
        },
    )?;
    let flag = if !what_if.targeted {
        Some("not targeted".to_owned())
    } else if what_if.uncloakable {
        Some("uncloakable".to_owned())
    } else {
        None
    };
    let vocab = &bundle.model.item_vocab;
    let trajectory = cloak_trajectory(&bundle.model, row, row.len())
        .into_iter()
        .map(|p| TrajectoryStep {
            step: p.step,
            item: p.item.map(|j| vocab[j].clone()),
            weight: p.weight,
            score: p.score,
            probability: p.probability,
        })
        .collect();
    Ok(Explanation {
        task: what_if.task,
        user: what_if.user,
        score: what_if.score,
        probability: what_if.probability,
        cutoff_score: what_if.cutoff_score,
        targeted: what_if.targeted,
        flag,
        minimal_set: what_if.suggested_cloak.into_iter().map(|s| s.item).collect(),
        contributions: what_if.contributions,
        trajectory,
    })
}

/// Binds `config.bind_address` and serves until the process is stopped.
pub async fn serve(config: &ServiceConfig) -> std::io::Result<()> {
    let state = AppState::from_config(config).map_err(std::io::Error::other)?;
    let addr: SocketAddr = config
        .bind_address
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("bind_address: {e}")))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(address = %listener.local_addr()?, bundles = state.bundles.len(), "serving");
    axum::serve(listener, router(Arc::new(state))).await
}
