use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing::info;

use likecloak::cloaking::{cloak_trajectory, compute_targeting, effort_summary, trajectory_csv};
use likecloak::corpus::{
    dataset_summary, load_dataset_dir, write_dataset_dir, write_summary_csv, SparseBinaryDataset,
    SynthSpec, SyntheticCorpus, TaskSpec,
};
use likecloak::experiments::{effort_csv, run_plan, Cell, ExperimentPlan};
use likecloak::models::{load_model, save_model, train, ModelFamily, TrainConfig};
use likecloak_service::ServiceConfig;

/// Cloaking effort for additive Like-based classifiers.
#[derive(Debug, Parser)]
#[command(name = "likecloak", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus (likes.csv, labels.csv, informative.json).
    Generate(GenerateArgs),
    /// Print per-task user counts, positive rates and average Likes.
    Summary(SummaryArgs),
    /// Train one model on every labeled user of a task.
    Train(TrainArgs),
    /// Cloak the targeted users of a task, or trace one user's trajectory.
    Cloak(CloakArgs),
    /// Run an experiment plan and write its tables and figure data.
    Experiment(ExperimentArgs),
    /// Serve the what-if API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// SynthSpec JSON file.
    #[arg(long)]
    spec: PathBuf,
    /// Number of independent traits.
    #[arg(long, default_value_t = 1)]
    tasks: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SummaryArgs {
    /// Directory holding likes.csv and labels.csv.
    #[arg(long)]
    data: PathBuf,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    family: ModelFamily,
    #[arg(long)]
    task: String,
    /// TrainConfig JSON; defaults apply when omitted. `--family` overrides its family.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding likes.csv and labels.csv.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CloakArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory holding likes.csv and labels.csv.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = 0.9)]
    delta: f64,
    /// Write this user's removal trajectory instead of the task's effort summary.
    #[arg(long)]
    user: Option<String>,
    /// Maximum trajectory steps; defaults to every positive-weight Like.
    #[arg(long, requires = "user")]
    trajectory: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Directory holding likes.csv and labels.csv.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    match Cli::parse().command {
        Command::Generate(a) => generate(a),
        Command::Summary(a) => summary(a),
        Command::Train(a) => train_cmd(a),
        Command::Cloak(a) => cloak(a),
        Command::Experiment(a) => experiment(a),
        Command::Serve(a) => serve(a),
    }
}

fn load_data(dir: &Path) -> Result<(SparseBinaryDataset, Vec<TaskSpec>)> {
    let (ds, tasks) =
        load_dataset_dir(dir).with_context(|| format!("loading dataset from {}", dir.display()))?;
    info!(
        users = ds.n_users(),
        items = ds.n_items(),
        density = ds.density(),
        tasks = tasks.len(),
        "loaded dataset"
    );
    Ok((ds, tasks))
}

fn find_task(tasks: Vec<TaskSpec>, name: &str) -> Result<TaskSpec> {
    let names: Vec<String> = tasks.iter().map(|t| t.name.clone()).collect();
    match tasks.into_iter().find(|t| t.name == name) {
        Some(t) => Ok(t),
        None => bail!("unknown task {name:?} (available: {})", names.join(", ")),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let spec = SynthSpec::from_json_file(&a.spec)?;
    let corpus = SyntheticCorpus::generate(&spec, a.tasks)?;
    write_dataset_dir(&corpus.dataset, &corpus.tasks, &a.out)?;
    let vocab = corpus.dataset.item_vocab();
    let informative: serde_json::Map<String, serde_json::Value> = corpus
        .tasks
        .iter()
        .zip(&corpus.informative)
        .map(|(t, groups)| {
            let groups: Vec<Vec<&str>> = groups
                .iter()
                .map(|g| g.iter().map(|&j| vocab[j].as_str()).collect())
                .collect();
            (t.name.clone(), serde_json::json!(groups))
        })
        .collect();
    fs::write(
        a.out.join("informative.json"),
        serde_json::to_string_pretty(&informative)? + "\n",
    )?;
    info!(
        users = corpus.dataset.n_users(),
        items = corpus.dataset.n_items(),
        density = corpus.dataset.density(),
        out = %a.out.display(),
        "wrote corpus"
    );
    Ok(())
}

fn summary(a: SummaryArgs) -> Result<()> {
    let (ds, tasks) = load_data(&a.data)?;
    let s = dataset_summary(&ds, &tasks);
    match a.out {
        Some(path) => write_summary_csv(&s, fs::File::create(&path)?)?,
        None => write_summary_csv(&s, std::io::stdout().lock())?,
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let config = match &a.config {
        Some(path) => TrainConfig::from_json_file(path)
            .with_context(|| format!("reading {}", path.display()))?,
        None => TrainConfig::default(),
    }
    .with_family(a.family);
    let (ds, tasks) = load_data(&a.data)?;
    let task = find_task(tasks, &a.task)?;
    let model = train(&ds, &task, &config)?;
    save_model(&model, &a.out)?;
    info!(
        family = %model.family,
        lambda = ?model.provenance.selected_lambda,
        out = %a.out.display(),
        "trained model"
    );
    Ok(())
}

fn cloak(a: CloakArgs) -> Result<()> {
    let model = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let (ds, tasks) = load_data(&a.data)?;
    let task = find_task(tasks, &a.task)?;
    let text = match &a.user {
        Some(id) => {
            let u = ds
                .user_index(id)
                .with_context(|| format!("unknown user {id:?}"))?;
            let row = ds.row(u);
            let steps = a.trajectory.unwrap_or(row.len());
            let points = cloak_trajectory(&model, row, steps);
            trajectory_csv(&points, &model.item_vocab)?
        }
        None => {
            let rule = compute_targeting(&model, &ds, &task, a.delta)?;
            let summary = effort_summary(&model, &ds, &task, &rule, Some(&task.labels))?;
            info!(
                targeted = summary.n_targeted,
                uncloakable = summary.n_uncloakable,
                cutoff = summary.cutoff_score,
                "cloaked targeted users"
            );
            let cell = Cell::from_summary(&task, model.family, &summary, model.provenance.selected_lambda);
            effort_csv(&[cell])?
        }
    };
    fs::write(&a.out, text).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let plan = ExperimentPlan::from_json_file(&a.plan)
        .with_context(|| format!("reading {}", a.plan.display()))?;
    let (ds, tasks) = load_data(&a.data)?;
    let report = run_plan(&plan, &ds, &tasks)?;
    report.write_dir(&a.out)?;
    let failed = report.cells.iter().filter(|c| !c.is_ok()).count();
    info!(cells = report.cells.len(), failed, out = %a.out.display(), "wrote report");
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let config = ServiceConfig::from_json_file(&a.config)
        .with_context(|| format!("reading {}", a.config.display()))?;
    tokio::runtime::Runtime::new()?.block_on(likecloak_service::serve(&config))?;
    Ok(())
}
