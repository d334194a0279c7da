//! Targeting and cloaking.
//!
//! Users whose score lies strictly above the cutoff `s_delta` are targeted.
//! A targeted user is cloaked by hiding present Likes one at a time, always the
//! one with the largest positive weight, until the score is at or below the
//! cutoff. The model is never retrained during cloaking. For an additive score
//! this greedy order reaches the cutoff with the fewest possible removals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{SparseBinaryDataset, TaskSpec};
use crate::error::{Error, Result};
use crate::models::AdditiveScoreModel;
use crate::stats::MeanCi;

/// Cutoff and targeted set for one task at quantile `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetingRule {
    pub delta: f64,
    pub cutoff_score: f64,
    /// Dataset user indices with score strictly above the cutoff, ascending.
    pub targeted: Vec<usize>,
    pub n_labeled: usize,
}

impl TargetingRule {
    pub fn is_targeted(&self, score: f64) -> bool {
        score > self.cutoff_score
    }
}

/// `floor((1 - delta) * n)`, guarded against `1 - 0.9` rounding just below 0.1.
pub fn targeted_count(delta: f64, n: usize) -> usize {
    ((1.0 - delta) * n as f64 + 1e-9).floor() as usize
}

/// Ranks the task's labeled users by score and targets the top `1 - delta` share.
///
/// The model must have been trained on the dataset's item vocabulary.
pub fn compute_targeting(
    model: &AdditiveScoreModel,
    dataset: &SparseBinaryDataset,
    task: &TaskSpec,
    delta: f64,
) -> Result<TargetingRule> {
    if model.item_vocab != dataset.item_vocab() {
        return Err(Error::validation(format!(
            "model for task {:?} was trained on a different item vocabulary",
            task.name
        )));
    }
    let scored: Vec<(usize, f64)> = task
        .labeled_users
        .iter()
        .map(|&u| (u, model.score(dataset.row(u))))
        .collect();
    targeting_from_scores(&scored, delta)
}

/// Targeting over `(user, score)` pairs.
///
/// The cutoff is the score at rank `n_t + 1` (1-based, descending) where
/// `n_t = floor((1 - delta) * N)`; users tied with the cutoff are not targeted.
pub fn targeting_from_scores(scored: &[(usize, f64)], delta: f64) -> Result<TargetingRule> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::validation(format!("delta must lie in (0, 1), got {delta}")));
    }
    if scored.len() < 2 {
        return Err(Error::validation(format!(
            "targeting needs at least 2 labeled users, got {}",
            scored.len()
        )));
    }
    let mut scores: Vec<f64> = scored.iter().map(|&(_, s)| s).collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::validation("non-finite score in targeting population"));
    }
    scores.sort_by(|a, b| b.total_cmp(a));
    let n_t = targeted_count(delta, scored.len()).min(scored.len() - 1);
    let cutoff_score = scores[n_t];
    let mut targeted: Vec<usize> = scored
        .iter()
        .filter(|&&(_, s)| s > cutoff_score)
        .map(|&(u, _)| u)
        .collect();
    targeted.sort_unstable();
    Ok(TargetingRule {
        delta,
        cutoff_score,
        targeted,
        n_labeled: scored.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloakStatus {
    Cloaked,
    /// Still above the cutoff after every positive-weight Like is hidden.
    Uncloakable,
}

/// One hidden Like and the state right after hiding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalStep {
    pub item: usize,
    pub weight: f64,
    pub score_after: f64,
    pub probability_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloakResult {
    pub user: Option<usize>,
    pub initial_score: f64,
    pub removed: Vec<RemovalStep>,
    pub status: CloakStatus,
    /// Number of Likes hidden; `None` for uncloakable users.
    pub effort: Option<usize>,
    pub n_likes: usize,
    pub relative_effort: Option<f64>,
}

impl CloakResult {
    pub fn removed_items(&self) -> Vec<usize> {
        self.removed.iter().map(|s| s.item).collect()
    }
}

/// Present items with positive weight, in greedy removal order: weight
/// descending, ties by ascending item index.
pub fn greedy_order(model: &AdditiveScoreModel, row: &[usize]) -> Vec<usize> {
    let mut items: Vec<usize> = row.iter().copied().filter(|&j| model.weights[j] > 0.0).collect();
    items.sort_by(|&a, &b| model.weights[b].total_cmp(&model.weights[a]).then(a.cmp(&b)));
    items.dedup();
    items
}

/// Greedy walk over `row`, yielding the score after each removal. Scores are
/// recomputed from the remaining Likes so that every reported score is exactly
/// what [`AdditiveScoreModel::score`] returns for the edited row.
struct GreedyWalk<'a> {
    model: &'a AdditiveScoreModel,
    row: &'a [usize],
    hidden: Vec<bool>,
    order: std::vec::IntoIter<usize>,
}

impl<'a> GreedyWalk<'a> {
    fn new(model: &'a AdditiveScoreModel, row: &'a [usize]) -> Self {
        GreedyWalk {
            model,
            row,
            hidden: vec![false; row.len()],
            order: greedy_order(model, row).into_iter(),
        }
    }

    fn current_score(&self) -> f64 {
        self.row
            .iter()
            .zip(&self.hidden)
            .filter(|(_, &h)| !h)
            .fold(self.model.bias, |s, (&j, _)| s + self.model.weights[j])
    }
}

impl Iterator for GreedyWalk<'_> {
    type Item = RemovalStep;

    fn next(&mut self) -> Option<RemovalStep> {
        let item = self.order.next()?;
        for (pos, &j) in self.row.iter().enumerate() {
            if j == item {
                self.hidden[pos] = true;
            }
        }
        let score_after = self.current_score();
        Some(RemovalStep {
            item,
            weight: self.model.weights[item],
            score_after,
            probability_after: self.model.probability_of_score(score_after),
        })
    }
}

/// Computes the minimal cloak set of a targeted user.
pub fn cloak_user(model: &AdditiveScoreModel, row: &[usize], cutoff_score: f64) -> Result<CloakResult> {
    let initial_score = model.score(row);
    if initial_score <= cutoff_score {
        return Err(Error::Domain(format!(
            "not targeted: score {initial_score} is not above cutoff {cutoff_score}"
        )));
    }
    let mut removed = Vec::new();
    let mut status = CloakStatus::Uncloakable;
    for step in GreedyWalk::new(model, row) {
        let done = step.score_after <= cutoff_score;
        removed.push(step);
        if done {
            status = CloakStatus::Cloaked;
            break;
        }
    }
    let n_likes = row.len();
    let effort = (status == CloakStatus::Cloaked).then_some(removed.len());
    Ok(CloakResult {
        user: None,
        initial_score,
        removed,
        status,
        effort,
        n_likes,
        relative_effort: effort.map(|e| e as f64 / n_likes as f64),
    })
}

/// One point of a probability-vs-removals trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    /// `None` at step 0 (nothing hidden yet).
    pub item: Option<usize>,
    pub weight: Option<f64>,
    pub score: f64,
    pub probability: f64,
}

/// Greedy removals continued past the cutoff, up to `max_steps` or until no
/// positive-weight Like is left. Step 0 is the uncloaked state.
pub fn cloak_trajectory(
    model: &AdditiveScoreModel,
    row: &[usize],
    max_steps: usize,
) -> Vec<TrajectoryPoint> {
    let score = model.score(row);
    let mut points = vec![TrajectoryPoint {
        step: 0,
        item: None,
        weight: None,
        score,
        probability: model.probability_of_score(score),
    }];
    points.extend(
        GreedyWalk::new(model, row)
            .take(max_steps)
            .enumerate()
            .map(|(i, s)| TrajectoryPoint {
                step: i + 1,
                item: Some(s.item),
                weight: Some(s.weight),
                score: s.score_after,
                probability: s.probability_after,
            }),
    );
    points
}

/// Renders a trajectory as CSV `step,item_id,weight,score,probability`.
/// Step 0 leaves `item_id` and `weight` empty.
pub fn trajectory_csv(points: &[TrajectoryPoint], item_vocab: &[String]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "item_id", "weight", "score", "probability"])?;
    for p in points {
        w.write_record([
            p.step.to_string(),
            p.item.map_or_else(String::new, |j| item_vocab[j].clone()),
            p.weight.map_or_else(String::new, |x| x.to_string()),
            p.score.to_string(),
            p.probability.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Domain(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Cloaks every targeted user; results follow `rule.targeted` order and do not
/// depend on thread scheduling.
pub fn cloak_targeted(
    model: &AdditiveScoreModel,
    dataset: &SparseBinaryDataset,
    rule: &TargetingRule,
) -> Vec<CloakResult> {
    rule.targeted
        .par_iter()
        .map(|&u| {
            let mut r = cloak_user(model, dataset.row(u), rule.cutoff_score)
                .expect("targeted users score above the cutoff");
            r.user = Some(u);
            r
        })
        .collect()
}

/// Effort statistics over one group of targeted users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEffort {
    pub n_targeted: usize,
    pub n_uncloakable: usize,
    /// Mean effort over cloaked users with its 95% CI; `None` when nobody was cloaked.
    pub effort: Option<MeanCi>,
    pub relative_effort: Option<MeanCi>,
}

impl GroupEffort {
    pub fn from_results<'a>(results: impl IntoIterator<Item = &'a CloakResult>) -> Self {
        let mut n_targeted = 0;
        let mut efforts = Vec::new();
        let mut relative = Vec::new();
        for r in results {
            n_targeted += 1;
            if let (Some(e), Some(rel)) = (r.effort, r.relative_effort) {
                efforts.push(e as f64);
                relative.push(rel);
            }
        }
        GroupEffort {
            n_targeted,
            n_uncloakable: n_targeted - efforts.len(),
            effort: MeanCi::of(&efforts),
            relative_effort: MeanCi::of(&relative),
        }
    }

    pub fn mean_effort(&self) -> Option<f64> {
        self.effort.map(|c| c.mean)
    }
}

/// True-positive / false-positive split of the targeted set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub true_positive: GroupEffort,
    pub false_positive: GroupEffort,
}

/// Average cloaking effort over a task's targeted users. Uncloakable users are
/// counted but left out of the means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffortSummary {
    pub task: String,
    pub cutoff_score: f64,
    pub n_targeted: usize,
    pub n_uncloakable: usize,
    pub all: GroupEffort,
    pub per_group: Option<GroupSplit>,
}

impl EffortSummary {
    /// Mean number of Likes hidden; `None` marks an empty (or fully uncloakable) targeted set.
    pub fn mean_effort(&self) -> Option<f64> {
        self.all.mean_effort()
    }

    pub fn mean_relative_effort(&self) -> Option<f64> {
        self.all.relative_effort.map(|c| c.mean)
    }

    pub fn is_empty(&self) -> bool {
        self.n_targeted == 0
    }
}

/// Cloaks the targeted set of `rule` and aggregates efforts. With
/// `group_labels` (parallel to `task.labeled_users`), targeted users are also
/// split by their true label.
pub fn effort_summary(
    model: &AdditiveScoreModel,
    dataset: &SparseBinaryDataset,
    task: &TaskSpec,
    rule: &TargetingRule,
    group_labels: Option<&[bool]>,
) -> Result<EffortSummary> {
    let results = cloak_targeted(model, dataset, rule);
    summarize_efforts(task, rule, &results, group_labels)
}

/// Aggregates precomputed cloak results (see [`effort_summary`]).
pub fn summarize_efforts(
    task: &TaskSpec,
    rule: &TargetingRule,
    results: &[CloakResult],
    group_labels: Option<&[bool]>,
) -> Result<EffortSummary> {
    let all = GroupEffort::from_results(results);
    let per_group = match group_labels {
        None => None,
        Some(labels) => {
            if labels.len() != task.labeled_users.len() {
                return Err(Error::validation(format!(
                    "{} group labels for {} labeled users",
                    labels.len(),
                    task.labeled_users.len()
                )));
            }
            let map: std::collections::HashMap<usize, bool> =
                task.labeled_users.iter().copied().zip(labels.iter().copied()).collect();
            let label = |r: &&CloakResult| {
                r.user
                    .and_then(|u| map.get(&u).copied())
                    .ok_or_else(|| Error::validation("cloak result for an unlabeled user"))
            };
            let mut tp = Vec::new();
            let mut fp = Vec::new();
            for r in results {
                if label(&r)? {
                    tp.push(r);
                } else {
                    fp.push(r);
                }
            }
            Some(GroupSplit {
                true_positive: GroupEffort::from_results(tp),
                false_positive: GroupEffort::from_results(fp),
            })
        }
    };
    Ok(EffortSummary {
        task: task.name.clone(),
        cutoff_score: rule.cutoff_score,
        n_targeted: all.n_targeted,
        n_uncloakable: all.n_uncloakable,
        all,
        per_group,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Calibration, ModelFamily, Provenance};

    pub(crate) fn model(bias: f64, weights: &[f64]) -> AdditiveScoreModel {
        AdditiveScoreModel {
            family: ModelFamily::LrRaw,
            bias,
            weights: weights.to_vec(),
            item_vocab: (0..weights.len()).map(|j| format!("i{j}")).collect(),
            calibration: Calibration::Logistic,
            provenance: Provenance {
                task: "t".into(),
                n_train: 0,
                n_positive: 0,
                seed: 0,
                cv_folds: 5,
                regularization_grid: vec![],
                selected_lambda: None,
                inner_cv_auc: vec![],
                optimizer: None,
                iterations: None,
                svd_k: None,
                svd_projection: None,
                nb_smoothing: None,
            },
        }
    }

    #[test]
    fn ten_distinct_scores() {
        let scored: Vec<(usize, f64)> = (0..10).map(|u| (u, (u + 1) as f64)).collect();
        let rule = targeting_from_scores(&scored, 0.9).unwrap();
        assert_eq!(rule.cutoff_score, 9.0);
        assert_eq!(rule.targeted, vec![9]);
    }

    #[test]
    fn total_tie_targets_nobody() {
        let scored: Vec<(usize, f64)> = (0..10).map(|u| (u, 1.5)).collect();
        let rule = targeting_from_scores(&scored, 0.9).unwrap();
        assert!(rule.targeted.is_empty());
    }

    #[test]
    fn targeted_set_is_bounded() {
        let scored: Vec<(usize, f64)> = (0..20).map(|u| (u, (u * 7 % 13) as f64)).collect();
        let rule = targeting_from_scores(&scored, 0.9).unwrap();
        assert!(rule.targeted.len() <= 2);
        assert!(targeting_from_scores(&scored[..1], 0.9).is_err());
        assert!(targeting_from_scores(&scored, 1.0).is_err());
    }

    #[test]
    fn three_item_example() {
        let m = model(0.0, &[3.0, 2.0, 1.0]);
        let r = cloak_user(&m, &[0, 1, 2], 2.5).unwrap();
        assert_eq!(r.status, CloakStatus::Cloaked);
        assert_eq!(r.effort, Some(2));
        assert_eq!(r.removed_items(), vec![0, 1]);
        assert_eq!(r.removed[0].score_after, 3.0);
        assert_eq!(r.removed[1].score_after, 1.0);
    }

    #[test]
    fn single_item_example() {
        let m = model(0.0, &[5.0]);
        let r = cloak_user(&m, &[0], 4.0).unwrap();
        assert_eq!(r.effort, Some(1));
        assert_eq!(r.relative_effort, Some(1.0));
    }

    #[test]
    fn bias_alone_is_uncloakable() {
        let m = model(10.0, &[-1.0, -2.0]);
        let r = cloak_user(&m, &[0, 1], 0.0).unwrap();
        assert_eq!(r.status, CloakStatus::Uncloakable);
        assert!(r.removed.is_empty());
        assert_eq!(r.effort, None);
    }

    #[test]
    fn non_targeted_user_is_a_domain_error() {
        let m = model(0.0, &[1.0]);
        assert!(matches!(cloak_user(&m, &[0], 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn ties_break_by_item_index() {
        let m = model(0.0, &[1.0, 2.0, 2.0, 2.0]);
        assert_eq!(greedy_order(&m, &[0, 1, 2, 3]), vec![1, 2, 3, 0]);
        let r = cloak_user(&m, &[3, 2, 1], 3.5).unwrap();
        assert_eq!(r.removed_items(), vec![1, 2]);
    }

    #[test]
    fn trajectory_examples() {
        let m = model(0.0, &[3.0, 2.0, 1.0]);
        let t = cloak_trajectory(&m, &[0, 1, 2], 0);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].probability, m.probability(&[0, 1, 2]));

        let t = cloak_trajectory(&m, &[0, 1, 2], 3);
        let scores: Vec<f64> = t.iter().map(|p| p.score).collect();
        assert_eq!(scores, vec![6.0, 3.0, 1.0, 0.0]);
        let sigma = |z: f64| 1.0 / (1.0 + (-z).exp());
        for (p, s) in t.iter().zip([6.0, 3.0, 1.0, 0.0]) {
            assert!((p.probability - sigma(s)).abs() < 1e-15);
        }
        assert!(t.windows(2).all(|w| w[1].probability <= w[0].probability));
        assert_eq!(cloak_trajectory(&m, &[0, 1, 2], 10).len(), 4);

        let csv = trajectory_csv(&t[..2], &m.item_vocab).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,item_id,weight,score,probability");
        assert!(lines[1].starts_with("0,,,6,"));
        assert!(lines[2].starts_with("1,i0,3,3,"));
    }

    fn toy_task() -> (SparseBinaryDataset, TaskSpec) {
        let ds = SparseBinaryDataset::new(
            (0..4).map(|u| format!("u{u}")).collect(),
            (0..6).map(|j| format!("i{j}")).collect(),
            vec![vec![0, 1], vec![0, 1, 2, 3], vec![4], vec![5]],
        )
        .unwrap();
        let task = TaskSpec::new("t", vec![0, 1, 2, 3], vec![true, true, false, false]).unwrap();
        (ds, task)
    }

    #[test]
    fn summary_means_and_groups() {
        let (ds, task) = toy_task();
        let m = model(0.0, &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        // Scores: 2, 4, 0, 0. Cutoff 0 targets users 0 and 1 with efforts 2 and 4.
        let rule = TargetingRule {
            delta: 0.5,
            cutoff_score: 0.0,
            targeted: vec![0, 1],
            n_labeled: 4,
        };
        let s = effort_summary(&m, &ds, &task, &rule, Some(&[true, false, false, false])).unwrap();
        assert_eq!(s.mean_effort(), Some(3.0));
        let g = s.per_group.unwrap();
        assert_eq!(g.true_positive.mean_effort(), Some(2.0));
        assert_eq!(g.false_positive.mean_effort(), Some(4.0));
    }

    #[test]
    fn empty_targeted_set_is_marked() {
        let (ds, task) = toy_task();
        let m = model(0.0, &[0.0; 6]);
        let rule = compute_targeting(&m, &ds, &task, 0.9).unwrap();
        let s = effort_summary(&m, &ds, &task, &rule, None).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.mean_effort(), None);
    }

    #[test]
    fn group_means_from_hand_efforts() {
        let fake = |user: usize, effort: usize| CloakResult {
            user: Some(user),
            initial_score: 1.0,
            removed: vec![],
            status: CloakStatus::Cloaked,
            effort: Some(effort),
            n_likes: 10,
            relative_effort: Some(effort as f64 / 10.0),
        };
        let task = TaskSpec::new("t", vec![0, 1, 2, 3], vec![true, true, false, false]).unwrap();
        let results = vec![fake(0, 4), fake(1, 6), fake(2, 1), fake(3, 3)];
        let rule = TargetingRule {
            delta: 0.9,
            cutoff_score: 0.0,
            targeted: vec![0, 1, 2, 3],
            n_labeled: 4,
        };
        let s = summarize_efforts(&task, &rule, &results, Some(&task.labels)).unwrap();
        let g = s.per_group.unwrap();
        assert_eq!(g.true_positive.mean_effort(), Some(5.0));
        assert_eq!(g.false_positive.mean_effort(), Some(2.0));
    }
}
