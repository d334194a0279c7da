//! The effort, randomization, true/false-positive and model-comparison studies.
//!
//! Every study is built from the same unit of work, a *cell*: one model family
//! trained on one task, its targeted set at the plan's `delta`, the cloaking
//! effort of every targeted user, and optionally the held-out AUC and a
//! randomization baseline. Cells run in parallel and are reduced in a fixed
//! order, so a plan with a fixed seed always yields the same report.

mod report;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloaking::{compute_targeting, effort_summary, EffortSummary};
use crate::corpus::{SparseBinaryDataset, SynthSpec, TaskSpec};
use crate::error::{Error, Result};
use crate::mix_seed;
use crate::models::{cross_validated_auc, train, ModelFamily, TrainConfig};
use crate::stats::MeanCi;

pub use report::{
    effort_csv, render_report, Cell, CellStatus, DuplicationPoint, ExperimentReport, FamilySummary, Measure,
    ReportFormat, SignTestSummary, RANDOMIZATION_METHOD, REPORT_SCHEMA, REPORT_SCHEMA_VERSION,
};

/// Redraws allowed per randomization rep before the rep is declared failed.
pub const MAX_REDRAWS: usize = 10;

/// What to run. Mirrors the `plan.json` accepted by the `experiment` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    /// Task names to run; empty selects every task in the dataset.
    #[serde(default)]
    pub tasks: Vec<String>,
    pub families: Vec<ModelFamily>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub cv: TrainConfig,
    /// Randomization reps per cell; 0 disables the randomization study.
    #[serde(default)]
    pub randomization_reps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Whether to estimate held-out AUC by outer cross-validation.
    #[serde(default = "default_true")]
    pub outer_cv_auc: bool,
    /// Optional effort-vs-duplication curves on synthetic corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplication_sweep: Option<DuplicationSweep>,
}

fn default_delta() -> f64 {
    0.9
}

fn default_true() -> bool {
    true
}

/// Regenerates `spec` once per duplication factor and runs every family on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DuplicationSweep {
    pub spec: SynthSpec,
    pub factors: Vec<usize>,
}

impl ExperimentPlan {
    pub fn new(families: Vec<ModelFamily>) -> Self {
        ExperimentPlan {
            tasks: Vec::new(),
            families,
            delta: default_delta(),
            cv: TrainConfig::default(),
            randomization_reps: 0,
            seed: 0,
            outer_cv_auc: true,
            duplication_sweep: None,
        }
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: ExperimentPlan = serde_json::from_str(&text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::validation("plan lists no model families"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.families.iter().find(|f| !seen.insert(**f)) {
            return Err(Error::validation(format!("family {dup} listed twice")));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::validation(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        self.cv.validate()?;
        if let Some(sweep) = &self.duplication_sweep {
            if sweep.factors.is_empty() {
                return Err(Error::validation("duplication sweep lists no factors"));
            }
            for &d in &sweep.factors {
                SynthSpec {
                    duplication_factor: d,
                    ..sweep.spec.clone()
                }
                .validate()?;
            }
        }
        Ok(())
    }

    /// The plan's tasks, in plan order (or dataset order when none are named).
    pub fn select_tasks<'a>(&self, tasks: &'a [TaskSpec]) -> Result<Vec<&'a TaskSpec>> {
        if self.tasks.is_empty() {
            return Ok(tasks.iter().collect());
        }
        self.tasks
            .iter()
            .map(|name| {
                tasks
                    .iter()
                    .find(|t| &t.name == name)
                    .ok_or_else(|| Error::validation(format!("unknown task {name:?}")))
            })
            .collect()
    }

    /// Training configuration of one cell. The seed depends only on the plan
    /// seed, task name and family, so a cell's result does not change when
    /// other tasks are added or removed.
    pub fn cell_config(&self, task: &str, family: ModelFamily) -> TrainConfig {
        TrainConfig {
            seed: mix_seed(self.seed, fnv1a(task) ^ family_salt(family)),
            ..self.cv.with_family(family)
        }
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn family_salt(family: ModelFamily) -> u64 {
    match family {
        ModelFamily::LrRaw => 0x11,
        ModelFamily::LrSvd => 0x22,
        ModelFamily::Nb => 0x33,
    }
}

/// Real and randomized effort for one (task, family).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationOutcome {
    /// Mean effort over the real model's cloaked targeted users.
    pub real: Option<MeanCi>,
    /// One mean effort per rep.
    pub randomized: Vec<f64>,
    /// Mean of the rep means with a 95% CI over reps.
    pub randomized_summary: Option<MeanCi>,
    /// Permutations discarded and redrawn, summed over reps.
    pub redraws: usize,
}

/// Permutes the task's labels, retrains and re-measures effort, `reps` times.
///
/// Each rep draws a uniform permutation of the labels over the labeled users,
/// which severs any dependence between Likes and the trait while keeping both
/// marginals. A rep whose training fails (for instance a single-class fold) or
/// that leaves no cloaked user is redrawn, at most [`MAX_REDRAWS`] times.
pub fn run_randomization_study(
    plan: &ExperimentPlan,
    dataset: &SparseBinaryDataset,
    task: &TaskSpec,
    family: ModelFamily,
) -> Result<RandomizationOutcome> {
    if plan.randomization_reps == 0 {
        return Err(Error::validation(
            "randomization study needs randomization_reps >= 1",
        ));
    }
    plan.validate()?;
    let config = plan.cell_config(&task.name, family);
    let model = train(dataset, task, &config)?;
    let rule = compute_targeting(&model, dataset, task, plan.delta)?;
    let real = effort_summary(&model, dataset, task, &rule, None)?;
    randomize(plan, dataset, task, &config, &real)
}

fn randomize(
    plan: &ExperimentPlan,
    dataset: &SparseBinaryDataset,
    task: &TaskSpec,
    config: &TrainConfig,
    real: &EffortSummary,
) -> Result<RandomizationOutcome> {
    let reps: Vec<(f64, usize)> = (0..plan.randomization_reps)
        .into_par_iter()
        .map(|rep| randomized_rep(plan, dataset, task, config, rep as u64))
        .collect::<Result<_>>()?;
    let randomized: Vec<f64> = reps.iter().map(|r| r.0).collect();
    Ok(RandomizationOutcome {
        real: real.all.effort,
        randomized_summary: MeanCi::of(&randomized),
        redraws: reps.iter().map(|r| r.1).sum(),
        randomized,
    })
}

fn randomized_rep(
    plan: &ExperimentPlan,
    dataset: &SparseBinaryDataset,
    task: &TaskSpec,
    config: &TrainConfig,
    rep: u64,
) -> Result<(f64, usize)> {
    let rep_seed = mix_seed(config.seed, 0x7a3d_0000 + rep);
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    let mut last_error = String::new();
    for attempt in 0..=MAX_REDRAWS {
        let mut labels = task.labels.clone();
        labels.shuffle(&mut rng);
        let permuted = task.with_labels(labels)?;
        let config = TrainConfig {
            seed: mix_seed(rep_seed, attempt as u64),
            ..config.clone()
        };
        let outcome = train(dataset, &permuted, &config).and_then(|model| {
            let rule = compute_targeting(&model, dataset, &permuted, plan.delta)?;
            effort_summary(&model, dataset, &permuted, &rule, None)
        });
        match outcome.map(|s| s.mean_effort()) {
            Ok(Some(mean)) => return Ok((mean, attempt)),
            Ok(None) => last_error = "no cloaked targeted user".to_owned(),
            Err(e) => last_error = e.to_string(),
        }
    }
    Err(Error::Domain(format!(
        "randomization rep {rep} failed after {MAX_REDRAWS} redraws: {last_error}"
    )))
}

fn run_cell(
    plan: &ExperimentPlan,
    dataset: &SparseBinaryDataset,
    task: &TaskSpec,
    family: ModelFamily,
    randomization: bool,
) -> Cell {
    let config = plan.cell_config(&task.name, family);
    let attempt = || -> Result<Cell> {
        let model = train(dataset, task, &config)?;
        let rule = compute_targeting(&model, dataset, task, plan.delta)?;
        let summary = effort_summary(&model, dataset, task, &rule, Some(&task.labels))?;
        let mut cell = Cell::from_summary(task, family, &summary, model.provenance.selected_lambda);
        if plan.outer_cv_auc {
            cell.auc = match cross_validated_auc(dataset, task, &config) {
                Ok(a) => Measure::Value(a.mean),
                Err(e) => Measure::na(e.to_string()),
            };
        }
        if randomization && plan.randomization_reps > 0 {
            match randomize(plan, dataset, task, &config, &summary) {
                Ok(outcome) => cell.set_randomization(&outcome),
                Err(e) => cell.randomization_failed(&e.to_string()),
            }
        }
        Ok(cell)
    };
    attempt().unwrap_or_else(|e| Cell::failed(&task.name, family, task.n_labeled(), &e.to_string()))
}

fn run_cells(
    plan: &ExperimentPlan,
    dataset: &SparseBinaryDataset,
    tasks: &[&TaskSpec],
    randomization: bool,
) -> Vec<Cell> {
    let pairs: Vec<(&TaskSpec, ModelFamily)> = tasks
        .iter()
        .flat_map(|&t| plan.families.iter().map(move |&f| (t, f)))
        .collect();
    pairs
        .par_iter()
        .map(|&(t, f)| run_cell(plan, dataset, t, f, randomization))
        .collect()
}

/// Runs every study the plan enables: effort with TP/FP splits and AUC for
/// each (task, family), randomization baselines when `randomization_reps > 0`,
/// cross-task means and sign tests, and the duplication sweep if configured.
pub fn run_plan(
    plan: &ExperimentPlan,
    dataset: &SparseBinaryDataset,
    tasks: &[TaskSpec],
) -> Result<ExperimentReport> {
    plan.validate()?;
    let selected = plan.select_tasks(tasks)?;
    let cells = run_cells(plan, dataset, &selected, true);
    let mut report = ExperimentReport::assemble(plan, cells);
    if let Some(sweep) = &plan.duplication_sweep {
        report.duplication_curve = run_duplication_sweep(plan, sweep)?;
    }
    Ok(report)
}

/// Effort per (task, family): train with nested CV, target at `plan.delta`,
/// cloak every targeted user. Randomization is not run.
pub fn run_effort_study(
    plan: &ExperimentPlan,
    dataset: &SparseBinaryDataset,
    tasks: &[TaskSpec],
) -> Result<ExperimentReport> {
    plan.validate()?;
    let selected = plan.select_tasks(tasks)?;
    let cells = run_cells(plan, dataset, &selected, false);
    Ok(ExperimentReport::assemble(plan, cells))
}

/// Minimum number of tasks for the cross-task sign test.
pub const MIN_SIGN_TEST_TASKS: usize = 6;

/// True-positive vs false-positive effort per task, with an exact sign test
/// across tasks on the direction `tp_effort > fp_effort`.
pub fn run_tpfp_study(
    plan: &ExperimentPlan,
    dataset: &SparseBinaryDataset,
    tasks: &[TaskSpec],
) -> Result<ExperimentReport> {
    let n = plan.select_tasks(tasks)?.len();
    if n < MIN_SIGN_TEST_TASKS {
        return Err(Error::validation(format!(
            "the sign test needs at least {MIN_SIGN_TEST_TASKS} tasks, got {n}"
        )));
    }
    run_effort_study(plan, dataset, tasks)
}

/// Side-by-side effort of all three families.
pub fn run_model_comparison(
    plan: &ExperimentPlan,
    dataset: &SparseBinaryDataset,
    tasks: &[TaskSpec],
) -> Result<ExperimentReport> {
    let missing: Vec<&str> = ModelFamily::ALL
        .iter()
        .filter(|f| !plan.families.contains(f))
        .map(|f| f.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "model comparison needs every family; missing {}",
            missing.join(", ")
        )));
    }
    let mut report = run_effort_study(plan, dataset, tasks)?;
    if let Some(sweep) = &plan.duplication_sweep {
        report.duplication_curve = run_duplication_sweep(plan, sweep)?;
    }
    Ok(report)
}

/// Mean effort per family at each duplication factor of the sweep.
pub fn run_duplication_sweep(
    plan: &ExperimentPlan,
    sweep: &DuplicationSweep,
) -> Result<Vec<DuplicationPoint>> {
    let mut points = Vec::new();
    for &d in &sweep.factors {
        let spec = SynthSpec {
            duplication_factor: d,
            ..sweep.spec.clone()
        };
        let (dataset, task) = crate::corpus::generate_synthetic(&spec)?;
        let cells = run_cells(plan, &dataset, &[&task], false);
        points.extend(cells.into_iter().map(|c| DuplicationPoint {
            duplication_factor: d,
            family: c.family,
            mean_effort: c.mean_effort,
            mean_relative_effort: c.mean_relative_effort,
            auc: c.auc,
        }));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_json_defaults() {
        let plan: ExperimentPlan = serde_json::from_str(r#"{"families": ["LR_RAW"]}"#).unwrap();
        assert_eq!(plan.delta, 0.9);
        assert_eq!(plan.randomization_reps, 0);
        assert!(plan.outer_cv_auc);
        assert!(plan.validate().is_ok());
        assert!(serde_json::from_str::<ExperimentPlan>(r#"{"families": [], "bogus": 1}"#).is_err());
    }

    #[test]
    fn plan_validation() {
        let mut plan = ExperimentPlan::new(vec![]);
        assert!(plan.validate().is_err());
        plan.families = vec![ModelFamily::Nb, ModelFamily::Nb];
        assert!(plan.validate().is_err());
        plan.families = vec![ModelFamily::Nb];
        plan.delta = 1.0;
        assert!(plan.validate().is_err());
    }

    #[test]
    fn cell_seeds_depend_on_task_and_family_only() {
        let plan = ExperimentPlan::new(vec![ModelFamily::Nb]);
        let a = plan.cell_config("x", ModelFamily::Nb).seed;
        assert_eq!(a, plan.cell_config("x", ModelFamily::Nb).seed);
        assert_ne!(a, plan.cell_config("y", ModelFamily::Nb).seed);
        assert_ne!(a, plan.cell_config("x", ModelFamily::LrRaw).seed);
    }
}
