use likecloak::corpus::{generate_synthetic, SynthSpec, SyntheticCorpus};
use likecloak::experiments::{
    run_effort_study, run_model_comparison, run_plan, run_randomization_study, run_tpfp_study,
    render_report, CellStatus, DuplicationSweep, ExperimentPlan, ExperimentReport, Measure,
    ReportFormat, REPORT_SCHEMA,
};
use likecloak::models::{ModelFamily, TrainConfig};

fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        n_users: 600,
        n_items: 200,
        sparsity: 0.05,
        trait_prevalence: 0.3,
        n_informative: 15,
        lift: 4.0,
        duplication_factor: 1,
        seed,
    }
}

fn fast_plan(families: Vec<ModelFamily>) -> ExperimentPlan {
    ExperimentPlan {
        cv: TrainConfig {
            regularization_grid: vec![0.01, 0.1],
            svd_k: 10,
            ..TrainConfig::default()
        },
        seed: 17,
        ..ExperimentPlan::new(families)
    }
}

fn csv_records(text: &str) -> Vec<csv::StringRecord> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader.records().map(Result::unwrap).collect()
}

fn render_all(report: &ExperimentReport) -> Vec<String> {
    vec![
        report.to_json().unwrap(),
        report.to_csv().unwrap(),
        report.table2_csv().unwrap(),
        report.table3_csv().unwrap(),
        report.fig2_csv().unwrap(),
        report.fig3_csv().unwrap(),
        report.duplication_csv().unwrap(),
    ]
}

#[test]
fn single_task_report_is_bounded() {
    let (ds, task) = generate_synthetic(&small_spec(1)).unwrap();
    let report = run_effort_study(&fast_plan(vec![ModelFamily::LrRaw]), &ds, &[task]).unwrap();
    assert_eq!(report.cells.len(), 1);
    let cell = &report.cells[0];
    assert_eq!(cell.status, CellStatus::Ok);
    let effort = cell.mean_effort.value().unwrap();
    assert!(effort.is_finite() && effort >= 1.0);
    assert!(cell.mean_relative_effort.value().unwrap() < 1.0);
    let auc = cell.auc.value().unwrap();
    assert!(auc > 0.5 && auc <= 1.0);
}

#[test]
fn plans_with_a_fixed_seed_render_byte_identically() {
    let corpus = SyntheticCorpus::generate(&small_spec(2), 2).unwrap();
    let mut plan = fast_plan(ModelFamily::ALL.to_vec());
    plan.randomization_reps = 2;
    plan.duplication_sweep = Some(DuplicationSweep {
        spec: small_spec(3),
        factors: vec![1, 2],
    });
    let a = run_plan(&plan, &corpus.dataset, &corpus.tasks).unwrap();
    let b = run_plan(&plan, &corpus.dataset, &corpus.tasks).unwrap();
    assert_eq!(render_all(&a), render_all(&b));
    assert_eq!(a.duplication_curve.len(), 6);

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    a.write_dir(dir_a.path()).unwrap();
    b.write_dir(dir_b.path()).unwrap();
    for name in ["table2.csv", "table3.csv", "fig2.csv", "fig3.csv", "report.json", "duplication.csv"] {
        let x = std::fs::read(dir_a.path().join(name)).unwrap();
        let y = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn renderings_parse_back_to_the_same_report() {
    let corpus = SyntheticCorpus::generate(&small_spec(4), 2).unwrap();
    let mut plan = fast_plan(vec![ModelFamily::Nb, ModelFamily::LrRaw]);
    plan.randomization_reps = 2;
    let report = run_plan(&plan, &corpus.dataset, &corpus.tasks).unwrap();
    let csv = render_report(&report, ReportFormat::Csv).unwrap();
    assert_eq!(ExperimentReport::from_csv(&csv).unwrap(), report);
    let json = render_report(&report, ReportFormat::Json).unwrap();
    assert_eq!(ExperimentReport::from_json(&json).unwrap(), report);
}

#[test]
fn failed_cells_are_annotated_never_blank() {
    let (ds, task) = generate_synthetic(&small_spec(5)).unwrap();
    let mut plan = fast_plan(vec![ModelFamily::LrSvd, ModelFamily::Nb]);
    // More components than items: every LR_SVD fit fails validation.
    plan.cv.svd_k = 500;
    let report = run_effort_study(&plan, &ds, &[task]).unwrap();
    let failed = report.cell("trait_0", ModelFamily::LrSvd).unwrap();
    assert!(matches!(&failed.status, CellStatus::Failed(r) if r.contains("SVD rank")));
    assert!(matches!(&failed.mean_effort, Measure::Na(_)));
    assert_eq!(report.cell("trait_0", ModelFamily::Nb).unwrap().status, CellStatus::Ok);

    for text in render_all(&report).iter().skip(1) {
        for record in csv_records(&text) {
            assert!(record.iter().all(|f| !f.is_empty()), "blank field in {record:?}");
        }
    }
    let table2 = report.table2_csv().unwrap();
    assert!(table2.contains("NA:validation failed: SVD rank"));
    assert_eq!(ExperimentReport::from_csv(&report.to_csv().unwrap()).unwrap(), report);
}

#[test]
fn json_reports_validate_against_the_schema() {
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();

    let corpus = SyntheticCorpus::generate(&small_spec(6), 2).unwrap();
    let mut plan = fast_plan(ModelFamily::ALL.to_vec());
    plan.randomization_reps = 1;
    let ok = run_plan(&plan, &corpus.dataset, &corpus.tasks).unwrap();
    plan.cv.svd_k = 500;
    plan.randomization_reps = 0;
    let with_failure = run_plan(&plan, &corpus.dataset, &corpus.tasks).unwrap();

    for report in [ok, with_failure] {
        let value: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{errors:?}");
    }
    let mut broken: serde_json::Value =
        serde_json::from_str(&run_effort_study(&fast_plan(vec![ModelFamily::Nb]), &corpus.dataset, &corpus.tasks).unwrap().to_json().unwrap())
            .unwrap();
    broken["cells"][0]["mean_effort"] = serde_json::json!("");
    assert!(!validator.is_valid(&broken));
}

#[test]
fn study_preconditions() {
    let corpus = SyntheticCorpus::generate(&small_spec(7), 2).unwrap();
    let err = run_model_comparison(&fast_plan(vec![ModelFamily::LrSvd]), &corpus.dataset, &corpus.tasks)
        .unwrap_err()
        .to_string();
    assert!(err.contains("LR_RAW") && err.contains("NB") && !err.contains("LR_SVD"), "{err}");

    let err = run_tpfp_study(&fast_plan(vec![ModelFamily::Nb]), &corpus.dataset, &corpus.tasks).unwrap_err();
    assert!(err.to_string().contains("at least 6"));

    let plan = fast_plan(vec![ModelFamily::Nb]);
    assert!(run_randomization_study(&plan, &corpus.dataset, &corpus.tasks[0], ModelFamily::Nb).is_err());

    let mut unknown = fast_plan(vec![ModelFamily::Nb]);
    unknown.tasks = vec!["nope".into()];
    assert!(run_plan(&unknown, &corpus.dataset, &corpus.tasks).is_err());
}

#[test]
fn a_single_randomization_rep_is_reproducible() {
    let (ds, task) = generate_synthetic(&small_spec(8)).unwrap();
    let mut plan = fast_plan(vec![ModelFamily::LrRaw]);
    plan.randomization_reps = 1;
    let a = run_randomization_study(&plan, &ds, &task, ModelFamily::LrRaw).unwrap();
    let b = run_randomization_study(&plan, &ds, &task, ModelFamily::LrRaw).unwrap();
    assert_eq!(a.randomized.len(), 1);
    assert_eq!(a, b);
    assert!(a.randomized_summary.unwrap().half_width.is_none());
}

#[test]
fn null_randomization_has_no_direction() {
    // Independent lift-1 corpora: real and randomized effort are exchangeable,
    // so "real exceeds randomized" should hold about half the time.
    let reps = 200;
    let mut plan = fast_plan(vec![ModelFamily::Nb]);
    plan.randomization_reps = 1;
    let mut wins = 0.0;
    for r in 0..reps {
        let spec = SynthSpec {
            n_users: 400,
            n_items: 120,
            lift: 1.0,
            seed: 1000 + r,
            ..small_spec(0)
        };
        let (ds, task) = generate_synthetic(&spec).unwrap();
        let outcome = run_randomization_study(&plan, &ds, &task, ModelFamily::Nb).unwrap();
        let real = outcome.real.unwrap().mean;
        let randomized = outcome.randomized[0];
        wins += if real > randomized {
            1.0
        } else if real == randomized {
            0.5
        } else {
            0.0
        };
    }
    let fraction = wins / reps as f64;
    let sigma = (0.25 / reps as f64).sqrt();
    assert!((fraction - 0.5).abs() <= 3.0 * sigma, "fraction {fraction}");
}
