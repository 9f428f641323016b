use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use crowd_sched::config::EngineConfig;
use crowd_sched::eval::{compare_predictors, generate_synthetic, write_comparison_csv, SyntheticSpec};
use crowd_sched::exec::Execution;
use crowd_sched::platform::Pool;
use crowd_sched::predictor::{kfold_cv, train, training_set, MlpModel};
use crowd_sched::scheduler::{
    schedule_project, write_decisions_csv, write_probability_curve, write_timeline, ScheduleMode,
};
use crowd_sched::similarity::PreparedTask;
use crowd_sched::task::{load_dataset_auto, save_dataset, Dataset, DatasetFormat, Day, TaskRecord};
use crowd_sched_service::{AppState, DEFAULT_LISTEN, LISTEN_ENV};
use serde::Serialize;
use serde_json::json;

/// Failure prediction and posting-day scheduling for crowdsourced tasks.
#[derive(Debug, Parser)]
#[command(name = "crowd-sched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Engine configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run single-threaded even when built with the parallel feature.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn engine(&self) -> Result<EngineConfig> {
        match &self.config {
            Some(p) => EngineConfig::load(p).with_context(|| format!("loading {}", p.display())),
            None => Ok(EngineConfig::default()),
        }
    }

    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its ground-truth sidecar.
    Synth {
        /// Corpus spec (TOML). The planted corpus is used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Dataset file; `.csv` or `.json`.
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth CSV. Defaults to `<out stem>.truth.csv`.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Platform state on a day, optionally as seen by one arriving task.
    Snapshot {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        day: Day,
        #[arg(long)]
        task: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the network on every task and write the model file.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Holdout plus K-fold cross-validation; prints the report JSON.
    Crossval {
        #[arg(long)]
        dataset: PathBuf,
        /// Overrides `train.kfold_k`.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Greedy posting-day schedule for a project.
    Schedule {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Project id, a dataset file holding new tasks, or `all`.
        #[arg(long)]
        project: String,
        /// Overrides `schedule.mode`.
        #[arg(long)]
        mode: Option<ScheduleMode>,
        /// Per-task CSV of predictions and chosen offsets.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Directory for probability-curve and timeline plot data.
        #[arg(long)]
        plot: Option<PathBuf>,
        /// Schedule JSON; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare the network against the baselines under cross-validation.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Metrics table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = LISTEN_ENV, default_value = DEFAULT_LISTEN)]
        listen: SocketAddr,
        /// Dataset to preload.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Model to preload.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Where session snapshots are written.
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn load(path: &Path, cfg: &EngineConfig) -> Result<Dataset> {
    load_dataset_auto(path, &cfg.ingest.load_options()).with_context(|| format!("loading dataset {}", path.display()))
}

fn build_pool(ds: &Dataset, cfg: &EngineConfig) -> Result<Pool> {
    Ok(Pool::new(ds, &cfg.similarity.weights, cfg.platform)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(p) => create(p)?.write_all(text.as_bytes())?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn default_truth_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    out.with_file_name(format!("{stem}.truth.csv"))
}

fn synth(spec: Option<&Path>, out: &Path, truth: Option<&Path>) -> Result<()> {
    let spec = match spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SyntheticSpec>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SyntheticSpec::planted(),
    };
    let data = generate_synthetic(&spec)?;
    let format = DatasetFormat::from_path(out)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_dataset(&data.dataset, out, format)?;
    let truth = truth.map(Path::to_path_buf).unwrap_or_else(|| default_truth_path(out));
    let mut w = create(&truth)?;
    data.write_truth_csv(&mut w)?;
    w.flush()?;
    let failed = data.truth.iter().filter(|t| t.failed).count();
    emit(
        &json!({
            "dataset": out.display().to_string(),
            "truth": truth.display().to_string(),
            "tasks": data.dataset.len(),
            "projects": data.dataset.project_ids().len(),
            "failure_rate": failed as f64 / data.truth.len() as f64,
            "mean_phi": data.truth.iter().map(|t| t.phi).sum::<f64>() / data.truth.len() as f64,
        }),
        None,
    )
}

fn snapshot(dataset: &Path, day: Day, task: Option<&str>, common: &Common) -> Result<()> {
    let cfg = common.engine()?;
    let ds = load(dataset, &cfg)?;
    let pool = build_pool(&ds, &cfg)?;
    let arriving = match task {
        Some(id) => {
            let t = ds.get(id).with_context(|| format!("unknown task `{id}`"))?;
            Some(PreparedTask::new(t.shifted(day - t.registration_start)))
        }
        None => None,
    };
    emit(&pool.snapshot(day, arriving.as_ref()), None)
}

fn train_cmd(dataset: &Path, out: &Path, common: &Common) -> Result<()> {
    let cfg = common.engine()?;
    let ds = load(dataset, &cfg)?;
    let pool = build_pool(&ds, &cfg)?;
    let set = training_set(&pool, cfg.train.target, common.exec())?;
    let outcome = train(&set, &cfg.train)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    outcome.model.save(out)?;
    emit(
        &json!({
            "model": out.display().to_string(),
            "rows": set.len(),
            "best_epoch": outcome.best_epoch,
            "restarts": outcome.restarts,
            "curve": outcome.curve,
        }),
        None,
    )
}

fn crossval(dataset: &Path, k: Option<usize>, out: Option<&Path>, common: &Common) -> Result<()> {
    let mut cfg = common.engine()?;
    if let Some(k) = k {
        cfg.train.kfold_k = k;
    }
    let ds = load(dataset, &cfg)?;
    let pool = build_pool(&ds, &cfg)?;
    let set = training_set(&pool, cfg.train.target, common.exec())?;
    let report = kfold_cv(&set, &cfg.train, common.exec())?;
    emit(&report, out)
}

/// Tasks named by `--project`: an existing dataset file, `all`, or a
/// project id in the dataset.
fn project_tasks(ds: &Dataset, project: &str, cfg: &EngineConfig) -> Result<Vec<TaskRecord>> {
    let as_path = Path::new(project);
    if as_path.is_file() {
        return Ok(load(as_path, cfg)?.into_tasks());
    }
    if project == "all" {
        return Ok(ds.tasks().to_vec());
    }
    let tasks = ds.project(project);
    if tasks.is_empty() {
        bail!("no task belongs to project `{project}` and no such file exists");
    }
    Ok(tasks)
}

#[allow(clippy::too_many_arguments)]
fn schedule(
    dataset: &Path,
    model: &Path,
    project: &str,
    mode: Option<ScheduleMode>,
    csv: Option<&Path>,
    plot: Option<&Path>,
    out: Option<&Path>,
    common: &Common,
) -> Result<()> {
    let cfg = common.engine()?;
    let ds = load(dataset, &cfg)?;
    let pool = build_pool(&ds, &cfg)?;
    let model = MlpModel::load(model).with_context(|| format!("loading model {}", model.display()))?;
    let tasks = project_tasks(&ds, project, &cfg)?;
    let mode = mode.unwrap_or(cfg.schedule.mode);
    let result = schedule_project(&pool, &model, &tasks, mode, common.exec())?;
    if let Some(p) = csv {
        let mut w = create(p)?;
        write_decisions_csv(&result.decisions, &mut w)?;
        w.flush()?;
    }
    if let Some(dir) = plot {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut w = create(&dir.join("probability_curve.csv"))?;
        write_probability_curve(&result, &mut w)?;
        w.flush()?;
        let mut w = create(&dir.join("timeline.csv"))?;
        write_timeline(&tasks, &result, &mut w)?;
        w.flush()?;
    }
    emit(&result, out)
}

fn eval(dataset: &Path, csv: Option<&Path>, common: &Common) -> Result<()> {
    let cfg = common.engine()?;
    let ds = load(dataset, &cfg)?;
    let pool = build_pool(&ds, &cfg)?;
    let set = training_set(&pool, cfg.train.target, common.exec())?;
    let days: Vec<Day> = pool.tasks().iter().map(|t| t.record.registration_start).collect();
    let report = compare_predictors(&set, &days, &cfg.train, &cfg.eval, common.exec())?;
    if let Some(p) = csv {
        let mut w = create(p)?;
        write_comparison_csv(&report, &mut w)?;
        w.flush()?;
    }
    emit(&report, None)
}

fn serve(
    listen: SocketAddr,
    dataset: Option<&Path>,
    model: Option<&Path>,
    snapshot_dir: Option<&Path>,
    common: &Common,
) -> Result<()> {
    let cfg = common.engine()?;
    let preload = dataset.map(|p| load(p, &cfg)).transpose()?;
    let model = model
        .map(|p| MlpModel::load(p).with_context(|| format!("loading model {}", p.display())))
        .transpose()?;
    let mut state = AppState::new(cfg);
    if let Some(dir) = snapshot_dir {
        fs::create_dir_all(dir)?;
        state = state.with_snapshot_dir(dir);
    }
    if let Some(ds) = preload {
        state.add_dataset(None, ds).map_err(|e| anyhow::anyhow!(e.message))?;
    }
    if let Some(m) = model {
        state.add_model(None, m);
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(crowd_sched_service::serve(listen, Arc::new(state)))?;
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Synth { spec, out, truth } => synth(spec.as_deref(), out, truth.as_deref()),
        Command::Snapshot {
            dataset,
            day,
            task,
            common,
        } => snapshot(dataset, *day, task.as_deref(), common),
        Command::Train { dataset, out, common } => train_cmd(dataset, out, common),
        Command::Crossval {
            dataset,
            k,
            out,
            common,
        } => crossval(dataset, *k, out.as_deref(), common),
        Command::Schedule {
            dataset,
            model,
            project,
            mode,
            csv,
            plot,
            out,
            common,
        } => schedule(
            dataset,
            model,
            project,
            *mode,
            csv.as_deref(),
            plot.as_deref(),
            out.as_deref(),
            common,
        ),
        Command::Eval { dataset, csv, common } => eval(dataset, csv.as_deref(), common),
        Command::Serve {
            listen,
            dataset,
            model,
            snapshot_dir,
            common,
        } => serve(
            *listen,
            dataset.as_deref(),
            model.as_deref(),
            snapshot_dir.as_deref(),
            common,
        ),
    }
}
