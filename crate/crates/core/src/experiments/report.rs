use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use super::{ExperimentPlan, RandomizationOutcome};
use crate::cloaking::{EffortSummary, GroupEffort};
use crate::corpus::TaskSpec;
use crate::error::{Error, Result};
use crate::models::ModelFamily;
use crate::stats::{sign_test, MeanCi};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// JSON Schema that every `report.json` validates against.
pub const REPORT_SCHEMA: &str = include_str!("../../schema/report.schema.json");

/// Recorded in every report so the randomization procedure is explicit.
pub const RANDOMIZATION_METHOD: &str = "permute_labels_retrain";

/// A reported number, or the reason it is missing. Serialized as a JSON number
/// or the string `NA:<reason>`; never blank.
#[derive(Debug, Clone, PartialEq)]
pub enum Measure {
    Value(f64),
    Na(String),
}

impl Measure {
    pub fn na(reason: impl Into<String>) -> Self {
        let reason: String = reason.into();
        Measure::Na(reason.split_whitespace().collect::<Vec<_>>().join(" "))
    }

    pub fn count(n: usize) -> Self {
        Measure::Value(n as f64)
    }

    pub fn or_na(value: Option<f64>, reason: &str) -> Self {
        match value {
            Some(v) if v.is_finite() => Measure::Value(v),
            Some(v) => Measure::na(format!("non-finite value {v}")),
            None => Measure::na(reason),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Measure::Value(v) => Some(*v),
            Measure::Na(_) => None,
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::Value(v) => write!(f, "{v}"),
            Measure::Na(r) => write!(f, "NA:{r}"),
        }
    }
}

impl Serialize for Measure {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Measure::Value(v) => s.serialize_f64(*v),
            Measure::Na(_) => s.serialize_str(&self.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Measure {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(Measure::Value(v)),
            Raw::Text(t) => t
                .strip_prefix("NA:")
                .map(|r| Measure::Na(r.to_owned()))
                .ok_or_else(|| serde::de::Error::custom(format!("expected a number or NA:<reason>, got {t:?}"))),
        }
    }
}

/// `ok`, or `NA:<reason>` for a cell whose training or targeting failed.
#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Ok,
    Failed(String),
}

impl Serialize for CellStatus {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CellStatus::Ok => s.serialize_str("ok"),
            CellStatus::Failed(r) => s.serialize_str(&format!("NA:{r}")),
        }
    }
}

impl<'de> Deserialize<'de> for CellStatus {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let t = String::deserialize(d)?;
        if t == "ok" {
            return Ok(CellStatus::Ok);
        }
        t.strip_prefix("NA:")
            .map(|r| CellStatus::Failed(r.to_owned()))
            .ok_or_else(|| serde::de::Error::custom(format!("bad cell status {t:?}")))
    }
}

/// Results for one (task, family). CI fields are 95% half-widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub task: String,
    pub family: ModelFamily,
    pub status: CellStatus,
    pub n_labeled: Measure,
    pub n_targeted: Measure,
    pub n_uncloakable: Measure,
    pub cutoff_score: Measure,
    pub selected_lambda: Measure,
    pub mean_effort: Measure,
    pub effort_ci: Measure,
    pub mean_relative_effort: Measure,
    pub tp_targeted: Measure,
    pub tp_effort: Measure,
    pub tp_ci: Measure,
    pub fp_targeted: Measure,
    pub fp_effort: Measure,
    pub fp_ci: Measure,
    pub randomized_efforts: Vec<f64>,
    pub randomized_mean_effort: Measure,
    pub randomized_ci: Measure,
    pub randomization_redraws: Measure,
    pub auc: Measure,
}

const NO_CI: &str = "fewer than two cloaked users";

fn group_measures(group: &GroupEffort, who: &str) -> (Measure, Measure, Measure) {
    let reason = if group.n_targeted == 0 {
        format!("no {who} targeted")
    } else {
        format!("every targeted {who} is uncloakable")
    };
    (
        Measure::count(group.n_targeted),
        Measure::or_na(group.mean_effort(), &reason),
        match group.effort {
            None => Measure::na(reason),
            Some(ci) => Measure::or_na(ci.half_width, NO_CI),
        },
    )
}

impl Cell {
    pub fn from_summary(
        task: &TaskSpec,
        family: ModelFamily,
        summary: &EffortSummary,
        selected_lambda: Option<f64>,
    ) -> Self {
        let (_, mean_effort, effort_ci) = group_measures(&summary.all, "user");
        let (tp_targeted, tp_effort, tp_ci, fp_targeted, fp_effort, fp_ci) = match &summary.per_group {
            Some(g) => {
                let tp = group_measures(&g.true_positive, "true positive");
                let fp = group_measures(&g.false_positive, "false positive");
                (tp.0, tp.1, tp.2, fp.0, fp.1, fp.2)
            }
            None => {
                let na = || Measure::na("labels not split");
                (na(), na(), na(), na(), na(), na())
            }
        };
        let disabled = || Measure::na("randomization disabled");
        Cell {
            task: task.name.clone(),
            family,
            status: CellStatus::Ok,
            n_labeled: Measure::count(task.n_labeled()),
            n_targeted: Measure::count(summary.n_targeted),
            n_uncloakable: Measure::count(summary.n_uncloakable),
            cutoff_score: Measure::or_na(Some(summary.cutoff_score), ""),
            selected_lambda: Measure::or_na(selected_lambda, "not regularized"),
            mean_relative_effort: match summary.all.relative_effort {
                Some(ci) => Measure::Value(ci.mean),
                None => mean_effort.clone(),
            },
            mean_effort,
            effort_ci,
            tp_targeted,
            tp_effort,
            tp_ci,
            fp_targeted,
            fp_effort,
            fp_ci,
            randomized_efforts: Vec::new(),
            randomized_mean_effort: disabled(),
            randomized_ci: disabled(),
            randomization_redraws: disabled(),
            auc: Measure::na("not computed"),
        }
    }

    /// A cell whose pipeline failed; every number carries the failure reason.
    pub fn failed(task: &str, family: ModelFamily, n_labeled: usize, reason: &str) -> Self {
        let reason = Measure::na(reason);
        let Measure::Na(text) = &reason else { unreachable!() };
        let na = || reason.clone();
        Cell {
            task: task.to_owned(),
            family,
            status: CellStatus::Failed(text.clone()),
            n_labeled: Measure::count(n_labeled),
            n_targeted: na(),
            n_uncloakable: na(),
            cutoff_score: na(),
            selected_lambda: na(),
            mean_effort: na(),
            effort_ci: na(),
            mean_relative_effort: na(),
            tp_targeted: na(),
            tp_effort: na(),
            tp_ci: na(),
            fp_targeted: na(),
            fp_effort: na(),
            fp_ci: na(),
            randomized_efforts: Vec::new(),
            randomized_mean_effort: na(),
            randomized_ci: na(),
            randomization_redraws: na(),
            auc: na(),
        }
    }

    pub(super) fn set_randomization(&mut self, outcome: &RandomizationOutcome) {
        self.randomized_efforts = outcome.randomized.clone();
        let summary = outcome.randomized_summary;
        self.randomized_mean_effort = Measure::or_na(summary.map(|c| c.mean), "no reps");
        self.randomized_ci = Measure::or_na(summary.and_then(|c| c.half_width), "fewer than two reps");
        self.randomization_redraws = Measure::count(outcome.redraws);
    }

    pub(super) fn randomization_failed(&mut self, reason: &str) {
        self.randomized_mean_effort = Measure::na(reason);
        self.randomized_ci = Measure::na(reason);
        self.randomization_redraws = Measure::na(reason);
    }

    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }

    fn ci_bounds(mean: &Measure, half: &Measure) -> (Measure, Measure) {
        match (mean, half) {
            (Measure::Value(m), Measure::Value(h)) => (Measure::Value(m - h), Measure::Value(m + h)),
            (Measure::Na(_), _) => (mean.clone(), mean.clone()),
            (_, Measure::Na(_)) => (half.clone(), half.clone()),
        }
    }
}

/// Exact sign test across tasks on `tp_effort > fp_effort`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTestSummary {
    pub n_tp_greater: usize,
    pub n_fp_greater: usize,
    pub n_ties: usize,
    /// Tasks without both group means (failed, or an empty group).
    pub n_excluded: usize,
    pub p_value: f64,
}

/// Cross-task means for one family (the `MEAN` row of the tables).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub family: ModelFamily,
    pub n_tasks: usize,
    pub n_failed: usize,
    pub mean_effort: Measure,
    pub mean_relative_effort: Measure,
    pub tp_effort: Measure,
    pub fp_effort: Measure,
    pub randomized_mean_effort: Measure,
    pub auc: Measure,
    pub sign_test: SignTestSummary,
}

/// Effort at one duplication factor of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicationPoint {
    pub duplication_factor: usize,
    pub family: ModelFamily,
    pub mean_effort: Measure,
    pub mean_relative_effort: Measure,
    pub auc: Measure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub seed: u64,
    pub delta: f64,
    pub families: Vec<ModelFamily>,
    pub randomization_method: String,
    pub randomization_reps: usize,
    /// Task-major, then in plan family order.
    pub cells: Vec<Cell>,
    pub summary: Vec<FamilySummary>,
    pub duplication_curve: Vec<DuplicationPoint>,
}

fn mean_of<'a>(cells: impl Iterator<Item = &'a Measure>) -> Measure {
    let values: Vec<f64> = cells.filter_map(Measure::value).collect();
    Measure::or_na(MeanCi::of(&values).map(|c| c.mean), "no task with a value")
}

impl ExperimentReport {
    pub(super) fn assemble(plan: &ExperimentPlan, cells: Vec<Cell>) -> Self {
        let summary = plan
            .families
            .iter()
            .map(|&family| {
                let of: Vec<&Cell> = cells.iter().filter(|c| c.family == family).collect();
                let paired: Vec<f64> = of
                    .iter()
                    .filter_map(|c| Some(c.tp_effort.value()? - c.fp_effort.value()?))
                    .collect();
                let test = sign_test(paired.iter().copied());
                FamilySummary {
                    family,
                    n_tasks: of.len(),
                    n_failed: of.iter().filter(|c| !c.is_ok()).count(),
                    mean_effort: mean_of(of.iter().map(|c| &c.mean_effort)),
                    mean_relative_effort: mean_of(of.iter().map(|c| &c.mean_relative_effort)),
                    tp_effort: mean_of(of.iter().map(|c| &c.tp_effort)),
                    fp_effort: mean_of(of.iter().map(|c| &c.fp_effort)),
                    randomized_mean_effort: mean_of(of.iter().map(|c| &c.randomized_mean_effort)),
                    auc: mean_of(of.iter().map(|c| &c.auc)),
                    sign_test: SignTestSummary {
                        n_tp_greater: test.n_positive,
                        n_fp_greater: test.n_negative,
                        n_ties: test.n_ties,
                        n_excluded: of.len() - paired.len(),
                        p_value: test.p_value,
                    },
                }
            })
            .collect();
        ExperimentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            seed: plan.seed,
            delta: plan.delta,
            families: plan.families.clone(),
            randomization_method: RANDOMIZATION_METHOD.to_owned(),
            randomization_reps: plan.randomization_reps,
            cells,
            summary,
            duplication_curve: Vec::new(),
        }
    }

    pub fn cell(&self, task: &str, family: ModelFamily) -> Option<&Cell> {
        self.cells.iter().find(|c| c.task == task && c.family == family)
    }

    pub fn family_summary(&self, family: ModelFamily) -> Option<&FamilySummary> {
        self.summary.iter().find(|s| s.family == family)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Long-format CSV (`path,kind,value`) holding every field of the report.
    pub fn to_csv(&self) -> Result<String> {
        let mut rows = Vec::new();
        flatten(&serde_json::to_value(self)?, String::new(), &mut rows);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["path", "kind", "value"])?;
        for (path, kind, value) in rows {
            w.write_record([path, kind.to_owned(), value])?;
        }
        finish(w)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        if reader.headers()?.iter().collect::<Vec<_>>() != ["path", "kind", "value"] {
            return Err(Error::validation("report CSV must have header path,kind,value"));
        }
        let mut root = Value::Null;
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let line = i as u64 + 2;
            let bad = |message: String| Error::Parse {
                path: "<report csv>".into(),
                line,
                message,
            };
            let leaf = match (&record[1], &record[2]) {
                ("number", v) => {
                    let n: Value = serde_json::from_str(v).map_err(|e| bad(e.to_string()))?;
                    if !n.is_number() {
                        return Err(bad(format!("not a number: {v:?}")));
                    }
                    n
                }
                ("string", v) => Value::String(v.to_owned()),
                ("bool", v) => Value::Bool(v.parse().map_err(|_| bad(format!("not a bool: {v:?}")))?),
                ("array", "[]") => Value::Array(Vec::new()),
                ("object", "{}") => Value::Object(Map::new()),
                (kind, _) => return Err(bad(format!("unknown kind {kind:?}"))),
            };
            let tokens = parse_path(&record[0]).ok_or_else(|| bad(format!("bad path {:?}", &record[0])))?;
            insert(&mut root, &tokens, leaf).map_err(bad)?;
        }
        Ok(serde_json::from_value(root)?)
    }

    /// `table2.csv`: effort, TP/FP split, randomized baseline and AUC per
    /// (task, family), then one `MEAN` row per family.
    pub fn table2_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "task",
            "family",
            "status",
            "n_labeled",
            "n_targeted",
            "n_uncloakable",
            "mean_effort",
            "effort_ci_low",
            "effort_ci_high",
            "mean_relative_effort",
            "tp_effort",
            "fp_effort",
            "randomized_mean_effort",
            "auc",
            "sign_test_p",
        ])?;
        for c in &self.cells {
            let (lo, hi) = Cell::ci_bounds(&c.mean_effort, &c.effort_ci);
            w.write_record([
                c.task.clone(),
                c.family.to_string(),
                status_text(&c.status),
                c.n_labeled.to_string(),
                c.n_targeted.to_string(),
                c.n_uncloakable.to_string(),
                c.mean_effort.to_string(),
                lo.to_string(),
                hi.to_string(),
                c.mean_relative_effort.to_string(),
                c.tp_effort.to_string(),
                c.fp_effort.to_string(),
                c.randomized_mean_effort.to_string(),
                c.auc.to_string(),
                "NA:cross-task only".to_owned(),
            ])?;
        }
        for s in &self.summary {
            let of = self.cells.iter().filter(|c| c.family == s.family);
            let total = |f: fn(&Cell) -> &Measure| {
                of.clone().filter_map(|c| f(c).value()).sum::<f64>().to_string()
            };
            let row_only = "NA:per-task only".to_owned();
            w.write_record([
                "MEAN".to_owned(),
                s.family.to_string(),
                format!("{}/{} ok", s.n_tasks - s.n_failed, s.n_tasks),
                total(|c| &c.n_labeled),
                total(|c| &c.n_targeted),
                total(|c| &c.n_uncloakable),
                s.mean_effort.to_string(),
                row_only.clone(),
                row_only,
                s.mean_relative_effort.to_string(),
                s.tp_effort.to_string(),
                s.fp_effort.to_string(),
                s.randomized_mean_effort.to_string(),
                s.auc.to_string(),
                s.sign_test.p_value.to_string(),
            ])?;
        }
        finish(w)
    }

    /// `table3.csv`: mean effort and AUC per task with one column pair per family.
    pub fn table3_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["task".to_owned()];
        for f in &self.families {
            header.push(format!("{}_effort", f.short_name()));
            header.push(format!("{}_auc", f.short_name()));
        }
        w.write_record(&header)?;
        let mut tasks: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !tasks.contains(&c.task.as_str()) {
                tasks.push(&c.task);
            }
        }
        for task in tasks {
            let mut row = vec![task.to_owned()];
            for &f in &self.families {
                match self.cell(task, f) {
                    Some(c) => {
                        row.push(c.mean_effort.to_string());
                        row.push(c.auc.to_string());
                    }
                    None => {
                        row.push("NA:not run".into());
                        row.push("NA:not run".into());
                    }
                }
            }
            w.write_record(&row)?;
        }
        let mut row = vec!["MEAN".to_owned()];
        for s in &self.summary {
            row.push(s.mean_effort.to_string());
            row.push(s.auc.to_string());
        }
        w.write_record(&row)?;
        finish(w)
    }

    /// Figure data: mean effort with 95% CI bounds for all targeted users and
    /// for the true- and false-positive groups.
    pub fn fig2_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["task", "family", "group", "n_targeted", "mean_effort", "ci_low", "ci_high"])?;
        for c in &self.cells {
            for (group, n, mean, ci) in [
                ("all", &c.n_targeted, &c.mean_effort, &c.effort_ci),
                ("tp", &c.tp_targeted, &c.tp_effort, &c.tp_ci),
                ("fp", &c.fp_targeted, &c.fp_effort, &c.fp_ci),
            ] {
                let (lo, hi) = Cell::ci_bounds(mean, ci);
                w.write_record([
                    c.task.clone(),
                    c.family.to_string(),
                    group.to_owned(),
                    n.to_string(),
                    mean.to_string(),
                    lo.to_string(),
                    hi.to_string(),
                ])?;
            }
        }
        finish(w)
    }

    /// Figure data: real vs randomized mean effort with 95% CI bounds. The
    /// real arm's CI is over users, the randomized arm's over reps.
    pub fn fig3_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["task", "family", "arm", "n", "mean_effort", "ci_low", "ci_high"])?;
        for c in &self.cells {
            let reps = if c.randomized_efforts.is_empty() {
                c.randomized_mean_effort.clone()
            } else {
                Measure::count(c.randomized_efforts.len())
            };
            for (arm, n, mean, ci) in [
                ("real", &c.n_targeted, &c.mean_effort, &c.effort_ci),
                ("randomized", &reps, &c.randomized_mean_effort, &c.randomized_ci),
            ] {
                let (lo, hi) = Cell::ci_bounds(mean, ci);
                w.write_record([
                    c.task.clone(),
                    c.family.to_string(),
                    arm.to_owned(),
                    n.to_string(),
                    mean.to_string(),
                    lo.to_string(),
                    hi.to_string(),
                ])?;
            }
        }
        finish(w)
    }

    /// Effort-vs-duplication curves.
    pub fn duplication_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["duplication_factor", "family", "mean_effort", "mean_relative_effort", "auc"])?;
        for p in &self.duplication_curve {
            w.write_record([
                p.duplication_factor.to_string(),
                p.family.to_string(),
                p.mean_effort.to_string(),
                p.mean_relative_effort.to_string(),
                p.auc.to_string(),
            ])?;
        }
        finish(w)
    }

    /// Writes `table2.csv`, `table3.csv`, `fig2.csv`, `fig3.csv`, `report.json`
    /// and `report.csv` into `dir`, plus `duplication.csv` when a sweep ran.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = vec![
            ("table2.csv", self.table2_csv()?),
            ("table3.csv", self.table3_csv()?),
            ("fig2.csv", self.fig2_csv()?),
            ("fig3.csv", self.fig3_csv()?),
            ("report.json", self.to_json()?),
            ("report.csv", self.to_csv()?),
        ];
        if !self.duplication_curve.is_empty() {
            files.push(("duplication.csv", self.duplication_csv()?));
        }
        for (name, text) in files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn status_text(status: &CellStatus) -> String {
    match status {
        CellStatus::Ok => "ok".into(),
        CellStatus::Failed(r) => format!("NA:{r}"),
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::validation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::UnknownFormat(s.to_owned())),
        }
    }
}

/// One row per cell in the format `task,n_targeted,n_uncloakable,mean_effort,mean_relative_effort,tp_effort,fp_effort`.
pub fn effort_csv(cells: &[Cell]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "task",
        "n_targeted",
        "n_uncloakable",
        "mean_effort",
        "mean_relative_effort",
        "tp_effort",
        "fp_effort",
    ])?;
    for c in cells {
        w.write_record([
            c.task.clone(),
            c.n_targeted.to_string(),
            c.n_uncloakable.to_string(),
            c.mean_effort.to_string(),
            c.mean_relative_effort.to_string(),
            c.tp_effort.to_string(),
            c.fp_effort.to_string(),
        ])?;
    }
    finish(w)
}

/// Renders the full report in `format`.
pub fn render_report(report: &ExperimentReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json(),
    }
}

enum Token {
    Key(String),
    Index(usize),
}

fn flatten(value: &Value, path: String, out: &mut Vec<(String, &'static str, String)>) {
    match value {
        Value::Object(map) if !map.is_empty() => {
            for (k, v) in map {
                let child = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                flatten(v, child, out);
            }
        }
        Value::Array(items) if !items.is_empty() => {
            for (i, v) in items.iter().enumerate() {
                flatten(v, format!("{path}[{i}]"), out);
            }
        }
        Value::Object(_) => out.push((path, "object", "{}".into())),
        Value::Array(_) => out.push((path, "array", "[]".into())),
        Value::Number(n) => out.push((path, "number", n.to_string())),
        Value::String(s) => out.push((path, "string", s.clone())),
        Value::Bool(b) => out.push((path, "bool", b.to_string())),
        // Reports carry no nulls: missing numbers are `NA:` strings.
        Value::Null => out.push((path, "string", "NA:null".into())),
    }
}

fn parse_path(path: &str) -> Option<Vec<Token>> {
    let mut tokens = Vec::new();
    for part in path.split('.') {
        let (key, mut rest) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if key.is_empty() {
            return None;
        }
        tokens.push(Token::Key(key.to_owned()));
        while !rest.is_empty() {
            let close = rest.find(']')?;
            tokens.push(Token::Index(rest.get(1..close)?.parse().ok()?));
            rest = &rest[close + 1..];
            if !rest.is_empty() && !rest.starts_with('[') {
                return None;
            }
        }
    }
    Some(tokens)
}

fn insert(slot: &mut Value, tokens: &[Token], leaf: Value) -> std::result::Result<(), String> {
    let Some((first, rest)) = tokens.split_first() else {
        *slot = leaf;
        return Ok(());
    };
    match first {
        Token::Key(k) => {
            if slot.is_null() {
                *slot = Value::Object(Map::new());
            }
            let map = slot.as_object_mut().ok_or("path mixes object and array")?;
            insert(map.entry(k.clone()).or_insert(Value::Null), rest, leaf)
        }
        Token::Index(i) => {
            if slot.is_null() {
                *slot = Value::Array(Vec::new());
            }
            let items = slot.as_array_mut().ok_or("path mixes object and array")?;
            if *i == items.len() {
                items.push(Value::Null);
            } else if *i > items.len() {
                return Err(format!("array index {i} skips ahead of {}", items.len()));
            }
            insert(&mut items[*i], rest, leaf)
        }
    }
}
