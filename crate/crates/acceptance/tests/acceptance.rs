use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

use likecloak::cloaking::cloak_user;
use likecloak::corpus::{generate_synthetic, SynthSpec, SyntheticCorpus};
use likecloak::experiments::{
    run_effort_study, run_plan, run_randomization_study, run_tpfp_study, DuplicationSweep,
    ExperimentPlan, Measure,
};
use likecloak::models::logistic::{LogisticObjective, SparseDesign};
use likecloak::models::{
    fit, fit_lr_svd, train, AdditiveScoreModel, Calibration, ModelFamily, Provenance, TrainConfig,
    TrainingData,
};
use likecloak_acceptance::{
    central_difference, duplication_spec, exhaustive_min_removals, naive_bayes_log_odds,
    reference_spec, tpfp_spec, Runner,
};
use likecloak_service::{router, AppState, Bundle, WhatIfRequest, WhatIfResponse};

const MINUTE: Duration = Duration::from_secs(60);

const GREEDY_MODELS: usize = 250;
const GREEDY_MAX_ITEMS: usize = 15;
const SVD_RELATIVE_TOL: f64 = 1e-9;
const NB_ABSOLUTE_TOL: f64 = 1e-10;
const GRADIENT_RELATIVE_TOL: f64 = 1e-5;
const GRADIENT_POINTS: usize = 20;
const SMALL_RELATIVE_EFFORT: f64 = 0.10;
const SMALL_ABSOLUTE_EFFORT: f64 = 15.0;
const RANDOMIZATION_REPS: usize = 10;
const TPFP_TASKS: usize = 10;
const SIGN_TEST_ALPHA: f64 = 0.05;
const NB_OVER_LR_MIN: f64 = 2.0;
const LR_DRIFT_MAX: f64 = 0.25;
const AUC_GAP_MAX: f64 = 0.05;
const SERVICE_EDITS: usize = 100;

fn lr_families() -> [ModelFamily; 2] {
    [ModelFamily::LrRaw, ModelFamily::LrSvd]
}

fn plan(families: Vec<ModelFamily>, seed: u64) -> ExperimentPlan {
    ExperimentPlan {
        seed,
        outer_cv_auc: false,
        ..ExperimentPlan::new(families)
    }
}

fn value(m: &Measure) -> Result<f64, String> {
    m.value().ok_or_else(|| format!("missing value: {m}"))
}

fn toy_model(bias: f64, weights: Vec<f64>) -> AdditiveScoreModel {
    let n = weights.len();
    AdditiveScoreModel {
        family: ModelFamily::LrRaw,
        bias,
        weights,
        item_vocab: (0..n).map(|j| format!("i{j}")).collect(),
        calibration: Calibration::Logistic,
        provenance: Provenance {
            task: "random".into(),
            n_train: 0,
            n_positive: 0,
            seed: 0,
            cv_folds: 2,
            regularization_grid: vec![1.0],
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

fn greedy_optimality() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = 0;
    let mut uncloakable = 0;
    let mut mismatches = 0;
    for _ in 0..GREEDY_MODELS {
        let n_items = 30;
        let weights: Vec<f64> = (0..n_items).map(|_| rng.random_range(-2.0..3.0)).collect();
        let model = toy_model(rng.random_range(-1.0..1.0), weights);
        for _ in 0..4 {
            let k = rng.random_range(1..=GREEDY_MAX_ITEMS);
            let mut items: Vec<usize> = (0..n_items).collect();
            items.shuffle(&mut rng);
            let mut row = items[..k].to_vec();
            row.sort_unstable();
            let score = model.score(&row);
            let cutoff = score - rng.random_range(0.01..8.0);
            let greedy = cloak_user(&model, &row, cutoff).map_err(|e| e.to_string())?;
            let exact = exhaustive_min_removals(model.bias, &model.weights, &row, cutoff);
            if greedy.effort != exact {
                mismatches += 1;
            }
            uncloakable += usize::from(exact.is_none());
            cases += 1;
        }
    }
    Ok((
        mismatches == 0,
        format!("{mismatches} mismatches over {cases} users of {GREEDY_MODELS} models ({uncloakable} uncloakable)"),
    ))
}

fn additive_form_fidelity() -> Result<(bool, String), String> {
    let spec = SynthSpec {
        n_users: 1000,
        n_items: 300,
        sparsity: 0.03,
        trait_prevalence: 0.3,
        n_informative: 20,
        lift: 4.0,
        duplication_factor: 1,
        seed: 5,
    };
    let (ds, task) = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        svd_k: 20,
        regularization_grid: vec![0.01],
        ..TrainConfig::default()
    };
    let svd = fit_lr_svd(&TrainingData::from_task(&ds, &task), &config).map_err(|e| e.to_string())?;
    let mut svd_err: f64 = 0.0;
    for u in 0..ds.n_users() {
        let a = svd.component_score(ds.row(u));
        let b = svd.model.score(ds.row(u));
        svd_err = svd_err.max((a - b).abs() / a.abs().max(1.0));
    }

    let j = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<usize>> = (0..300)
        .map(|_| (0..j).filter(|_| rng.random_bool(0.3)).collect())
        .collect();
    let labels: Vec<bool> = (0..300).map(|_| rng.random_bool(0.35)).collect();
    let vocab: Vec<String> = (0..j).map(|i| format!("i{i}")).collect();
    let data = TrainingData {
        task: "nb",
        rows: rows.iter().map(Vec::as_slice).collect(),
        labels: labels.clone(),
        item_vocab: &vocab,
    };
    let nb = fit(&data, &TrainConfig::default().with_family(ModelFamily::Nb)).map_err(|e| e.to_string())?;
    let mut nb_err: f64 = 0.0;
    for mask in 0u32..1 << j {
        let x: Vec<bool> = (0..j).map(|i| mask >> i & 1 == 1).collect();
        let row: Vec<usize> = (0..j).filter(|&i| x[i]).collect();
        let direct = naive_bayes_log_odds(&rows, &labels, j, 1.0, &x);
        nb_err = nb_err.max((nb.score(&row) - direct).abs());
    }
    Ok((
        svd_err <= SVD_RELATIVE_TOL && nb_err <= NB_ABSOLUTE_TOL,
        format!(
            "LR_SVD max relative error {svd_err:.2e} over {} users; NB max error {nb_err:.2e} over {} rows",
            ds.n_users(),
            1 << j
        ),
    ))
}

fn gradient_check() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, j) = (120, 25);
    let rows: Vec<Vec<usize>> = (0..n)
        .map(|_| (0..j).filter(|_| rng.random_bool(0.25)).collect())
        .collect();
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    let design = SparseDesign::new(rows.iter().map(Vec::as_slice).collect(), j);
    let objective = LogisticObjective::new(&design, &labels, 0.05);
    let dim = objective.dimension();
    let mut worst: f64 = 0.0;
    for _ in 0..GRADIENT_POINTS {
        let theta: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut grad = vec![0.0; dim];
        objective.value_and_gradient(&theta, &mut grad);
        for (k, g) in grad.iter().enumerate() {
            let fd = central_difference(|t| objective.value(t), &theta, k, 1e-5);
            worst = worst.max((g - fd).abs() / g.abs().max(1e-3));
        }
    }
    Ok((
        worst <= GRADIENT_RELATIVE_TOL,
        format!("max relative error {worst:.2e} over {GRADIENT_POINTS} points x {dim} coordinates"),
    ))
}

fn small_effort() -> Result<(bool, String), String> {
    let (ds, task) = generate_synthetic(&reference_spec()).map_err(|e| e.to_string())?;
    let report = run_effort_study(&plan(lr_families().to_vec(), 1), &ds, &[task]).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for family in lr_families() {
        let cell = report.cell("trait_0", family).ok_or("missing cell")?;
        let effort = value(&cell.mean_effort)?;
        let relative = value(&cell.mean_relative_effort)?;
        ok &= effort < SMALL_ABSOLUTE_EFFORT && relative < SMALL_RELATIVE_EFFORT;
        parts.push(format!(
            "{family} mean effort {effort:.3}, relative {relative:.4} ({} targeted)",
            cell.n_targeted
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn randomization_direction() -> Result<(bool, String), String> {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut study = ExperimentPlan {
        randomization_reps: RANDOMIZATION_REPS,
        ..plan(lr_families().to_vec(), 1)
    };
    for (label, lift) in [("real", reference_spec().lift), ("null", 1.0)] {
        let spec = SynthSpec { lift, ..reference_spec() };
        let (ds, task) = generate_synthetic(&spec).map_err(|e| e.to_string())?;
        study.seed = if lift > 1.0 { 1 } else { 2 };
        for family in lr_families() {
            let out = run_randomization_study(&study, &ds, &task, family).map_err(|e| e.to_string())?;
            let real = out.real.ok_or("no cloaked user on the real model")?;
            let randomized = out.randomized_summary.ok_or("no randomized rep")?;
            if label == "real" {
                ok &= real.mean > randomized.mean;
                parts.push(format!(
                    "{family} real {:.3} vs randomized {:.3}",
                    real.mean, randomized.mean
                ));
            } else {
                let overlap = real.overlaps(&randomized);
                ok &= overlap;
                parts.push(format!(
                    "{family} lift=1 real [{:.3}, {:.3}] vs randomized [{:.3}, {:.3}] {}",
                    real.lower(),
                    real.upper(),
                    randomized.lower(),
                    randomized.upper(),
                    if overlap { "overlap" } else { "disjoint" }
                ));
            }
        }
    }
    Ok((ok, parts.join("; ")))
}

fn tp_fp_direction() -> Result<(bool, String), String> {
    let corpus = SyntheticCorpus::generate(&tpfp_spec(), TPFP_TASKS).map_err(|e| e.to_string())?;
    let report = run_tpfp_study(&plan(vec![ModelFamily::LrSvd], 3), &corpus.dataset, &corpus.tasks)
        .map_err(|e| e.to_string())?;
    let s = report.family_summary(ModelFamily::LrSvd).ok_or("missing summary")?;
    let tp = value(&s.tp_effort)?;
    let fp = value(&s.fp_effort)?;
    let t = &s.sign_test;
    Ok((
        tp > fp && t.p_value < SIGN_TEST_ALPHA,
        format!(
            "LR_SVD over {TPFP_TASKS} tasks: TP {tp:.3} vs FP {fp:.3}; TP greater in {}, FP in {}, ties {}, excluded {}; sign test p = {:.4}",
            t.n_tp_greater, t.n_fp_greater, t.n_ties, t.n_excluded, t.p_value
        ),
    ))
}

fn nb_double_counting() -> Result<(bool, String), String> {
    let sweep = ExperimentPlan {
        outer_cv_auc: true,
        duplication_sweep: Some(DuplicationSweep {
            spec: duplication_spec(),
            factors: (1..=5).collect(),
        }),
        ..plan(vec![ModelFamily::LrRaw, ModelFamily::Nb], 4)
    };
    let curve = likecloak::experiments::run_duplication_sweep(&sweep, sweep.duplication_sweep.as_ref().unwrap())
        .map_err(|e| e.to_string())?;
    let series = |family: ModelFamily, field: fn(&likecloak::experiments::DuplicationPoint) -> &Measure| {
        curve
            .iter()
            .filter(|p| p.family == family)
            .map(|p| value(field(p)))
            .collect::<Result<Vec<f64>, String>>()
    };
    let nb = series(ModelFamily::Nb, |p| &p.mean_effort)?;
    let lr = series(ModelFamily::LrRaw, |p| &p.mean_effort)?;
    let nb_auc = series(ModelFamily::Nb, |p| &p.auc)?;
    let lr_auc = series(ModelFamily::LrRaw, |p| &p.auc)?;
    let last = nb.len() - 1;
    let ratio = nb[last] / lr[last];
    let increasing = nb.windows(2).all(|w| w[1] > w[0]);
    let drift = lr[last] / lr[0] - 1.0;
    let auc_gap = (nb_auc[last] - lr_auc[last]).abs();
    let checks = [
        ratio >= NB_OVER_LR_MIN,
        increasing,
        drift.abs() <= LR_DRIFT_MAX,
        auc_gap <= AUC_GAP_MAX,
    ];
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
    Ok((
        checks.iter().all(|&c| c),
        format!(
            "d=1..5 NB effort [{}], LR effort [{}]; NB/LR at d=5 {ratio:.2} ({}); NB increasing {}; LR drift {:+.0}% ({}); AUC NB {:.3} vs LR {:.3} ({})",
            fmt(&nb),
            fmt(&lr),
            if checks[0] { "ok" } else { "below 2" },
            if checks[1] { "yes" } else { "no" },
            drift * 100.0,
            if checks[2] { "ok" } else { "outside 25%" },
            nb_auc[last],
            lr_auc[last],
            if checks[3] { "ok" } else { "gap too large" },
        ),
    ))
}

fn determinism() -> Result<(bool, String), String> {
    let spec = SynthSpec {
        n_users: 800,
        n_items: 300,
        sparsity: 0.04,
        trait_prevalence: 0.25,
        n_informative: 20,
        lift: 4.0,
        duplication_factor: 1,
        seed: 13,
    };
    let corpus = SyntheticCorpus::generate(&spec, 3).map_err(|e| e.to_string())?;
    let plan = ExperimentPlan {
        cv: TrainConfig {
            svd_k: 20,
            ..TrainConfig::default()
        },
        randomization_reps: 3,
        seed: 99,
        duplication_sweep: Some(DuplicationSweep {
            spec: SynthSpec { seed: 14, ..spec.clone() },
            factors: vec![1, 3],
        }),
        ..ExperimentPlan::new(ModelFamily::ALL.to_vec())
    };
    let mut outputs = Vec::new();
    for threads in [1, 4] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        let report = pool
            .install(|| run_plan(&plan, &corpus.dataset, &corpus.tasks))
            .map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        report.write_dir(dir.path()).map_err(|e| e.to_string())?;
        let mut files = Vec::new();
        for name in ["table2.csv", "table3.csv", "fig2.csv", "fig3.csv", "report.json"] {
            files.push(std::fs::read(dir.path().join(name)).map_err(|e| e.to_string())?);
        }
        outputs.push(files);
    }
    let identical = outputs[0] == outputs[1];
    let bytes: usize = outputs[0].iter().map(Vec::len).sum();
    Ok((
        identical,
        format!(
            "two runs (1 and 4 worker threads), 5 output files, {bytes} bytes: {}",
            if identical { "byte-identical" } else { "differ" }
        ),
    ))
}

async fn post(state: &Arc<AppState>, req: &WhatIfRequest) -> Result<WhatIfResponse, String> {
    let request = Request::post("/whatif")
        .header("content-type", "application/json")
        .body(Body::from(serde_json::to_vec(req).map_err(|e| e.to_string())?))
        .map_err(|e| e.to_string())?;
    let response = router(Arc::clone(state)).oneshot(request).await.map_err(|e| e.to_string())?;
    if response.status() != StatusCode::OK {
        return Err(format!("status {}", response.status()));
    }
    let body = response.into_body().collect().await.map_err(|e| e.to_string())?.to_bytes();
    serde_json::from_slice(&body).map_err(|e| e.to_string())
}

async fn service_checks() -> Result<(bool, String), String> {
    let spec = SynthSpec {
        n_users: 2000,
        n_items: 600,
        sparsity: 0.02,
        trait_prevalence: 0.2,
        n_informative: 40,
        lift: 4.0,
        duplication_factor: 1,
        seed: 21,
    };
    let corpus = SyntheticCorpus::generate(&spec, 2).map_err(|e| e.to_string())?;
    let ds = Arc::new(corpus.dataset);
    let mut bundles = Vec::new();
    for (t, family) in [(0, ModelFamily::LrRaw), (1, ModelFamily::Nb)] {
        let task = corpus.tasks[t].clone();
        let config = TrainConfig::default().with_family(family);
        let model = train(&ds, &task, &config).map_err(|e| e.to_string())?;
        bundles.push(Bundle::new(model, Arc::clone(&ds), task, 0.9).map_err(|e| e.to_string())?);
    }
    let state = Arc::new(AppState::new(bundles).map_err(|e| e.to_string())?);

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut score_mismatches = 0;
    for i in 0..SERVICE_EDITS {
        let bundle = &state.bundles()[i % 2];
        let u = rng.random_range(0..ds.n_users());
        let row = ds.row(u);
        let hidden: Vec<usize> = row.iter().copied().filter(|_| rng.random_bool(0.3)).collect();
        let response = post(
            &state,
            &WhatIfRequest {
                task: bundle.task.name.clone(),
                user: ds.user_ids()[u].clone(),
                hidden_items: hidden.iter().map(|&j| ds.item_vocab()[j].clone()).collect(),
            },
        )
        .await?;
        let visible: Vec<usize> = row.iter().copied().filter(|j| !hidden.contains(j)).collect();
        let expected = bundle.model.score(&visible);
        if response.score.to_bits() != expected.to_bits()
            || response.probability.to_bits() != bundle.model.probability_of_score(expected).to_bits()
        {
            score_mismatches += 1;
        }
    }

    let mut plans = 0;
    let mut unsound = 0;
    let mut not_minimal = 0;
    for bundle in state.bundles() {
        for &u in bundle.rule.targeted.iter().take(25) {
            let req = |hidden: &[String]| WhatIfRequest {
                task: bundle.task.name.clone(),
                user: ds.user_ids()[u].clone(),
                hidden_items: hidden.to_vec(),
            };
            let start = post(&state, &req(&[])).await?;
            if start.uncloakable {
                continue;
            }
            let plan: Vec<String> = start.suggested_cloak.iter().map(|s| s.item.clone()).collect();
            plans += 1;
            if post(&state, &req(&plan)).await?.targeted {
                unsound += 1;
            }
            for k in 0..plan.len() {
                if !post(&state, &req(&plan[..k])).await?.targeted {
                    not_minimal += 1;
                }
            }
        }
    }
    Ok((
        score_mismatches == 0 && unsound == 0 && not_minimal == 0 && plans > 0,
        format!(
            "{score_mismatches} score mismatches over {SERVICE_EDITS} edits; {plans} suggested cloaks: {unsound} unsound, {not_minimal} escaping prefixes"
        ),
    ))
}

fn service_equivalence() -> Result<(bool, String), String> {
    tokio::runtime::Builder::new_current_thread()
        .build()
        .map_err(|e| e.to_string())?
        .block_on(service_checks())
}

fn main() -> ExitCode {
    let mut runner = Runner::default();
    runner.run("greedy-optimality", "0 mismatches vs exhaustive search", MINUTE, greedy_optimality);
    runner.run(
        "additive-form-fidelity",
        "LR_SVD 1e-9 relative; NB 1e-10 absolute",
        MINUTE,
        additive_form_fidelity,
    );
    runner.run("gradient-check", "1e-5 relative", MINUTE, gradient_check);
    runner.run(
        "small-effort",
        "relative < 0.10 and absolute < 15 for LR_RAW and LR_SVD",
        10 * MINUTE,
        small_effort,
    );
    runner.run(
        "randomization-direction",
        "real > randomized (R=10); lift=1 95% CIs overlap",
        20 * MINUTE,
        randomization_direction,
    );
    runner.run(
        "tp-fp-direction",
        "TP > FP and sign test p < 0.05 over 10 tasks",
        20 * MINUTE,
        tp_fp_direction,
    );
    runner.run(
        "nb-double-counting",
        "NB >= 2x LR at d=5; NB strictly increasing; LR within 25%; AUC gap <= 0.05",
        15 * MINUTE,
        nb_double_counting,
    );
    runner.run("determinism", "byte-identical outputs", 10 * MINUTE, determinism);
    runner.run(
        "service-equivalence",
        "bit-exact scores; sound, prefix-minimal cloaks",
        10 * MINUTE,
        service_equivalence,
    );

    let passed = runner.outcomes.iter().filter(|o| o.passed).count();
    let unexpected = runner.unexpected_failures();
    println!(
        "{passed}/{} criteria passed; {} unexpected failure(s)",
        runner.outcomes.len(),
        unexpected.len()
    );
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
