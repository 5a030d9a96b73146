use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use whatif_core::counterfactual::DistanceNorm;
use whatif_core::dataset::{ingest, Dataset, DeclaredFeature, Format, SortKey};
use whatif_core::model::{ModelHandle, ModelSlot, RemoteOptions, TaskKind};
use whatif_core::pdp::PdpSpec;
use whatif_core::performance::{
    CostRatio, FairnessStrategy, GroundTruthBinding, SliceSort, SliceSpec, Thresholds, DEFAULT_EPSILON,
};
use whatif_core::report::{self, ThresholdChoice};
use whatif_core::Error;
use whatif_service::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "whatif", version, about = "What-if analysis for black-box models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Per-feature summary statistics.
    Stats {
        #[command(flatten)]
        data: DataArgs,
        /// non-uniformity, missing or alpha
        #[arg(long, default_value = "non-uniformity")]
        sort: String,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Nearest datapoint with a different predicted outcome.
    Counterfactual {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long)]
        point: u64,
        #[arg(long, default_value = "l1")]
        norm: String,
        /// Slot to explain when two models are loaded.
        #[arg(long)]
        slot: Option<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Partial dependence curve data.
    Pdp {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long)]
        feature: String,
        #[arg(long, conflicts_with = "global", required_unless_present = "global")]
        point: Option<u64>,
        #[arg(long)]
        global: bool,
        /// Numeric sweep range as lo:hi.
        #[arg(long, allow_hyphen_values = true)]
        range: Option<String>,
        #[arg(long)]
        points: Option<usize>,
        /// Comma-separated categorical values to sweep.
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        top_n: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sliced performance, or fairness-constrained thresholds with --strategy.
    Performance(PerformanceArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV or JSONL file.
    #[arg(long)]
    dataset: PathBuf,
    /// JSON list of {name, kind} overriding type inference.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// csv or jsonl; guessed from the extension otherwise.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct ModelArgs {
    /// Weights file or remote URL, optionally prefixed by its slot (model2=...).
    #[arg(long = "model", value_name = "[SLOT=]SPEC|URL", required = true)]
    models: Vec<String>,
    /// Second model for comparison.
    #[arg(long, value_name = "SPEC|URL")]
    model2: Option<String>,
    /// Task of remote models: binary, regression or multiclass:N.
    #[arg(long)]
    task: Option<String>,
    /// Concurrent requests per remote batch.
    #[arg(long, env = "WHATIF_FAN_OUT", default_value_t = 8)]
    fan_out: usize,
}

#[derive(Args)]
struct OutArgs {
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long = "model", value_name = "[SLOT=]SPEC|URL")]
    models: Vec<String>,
    #[arg(long, value_name = "SPEC|URL")]
    model2: Option<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long, env = "WHATIF_FAN_OUT", default_value_t = 8)]
    fan_out: usize,
    #[arg(long, env = "WHATIF_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Allow several independent sessions.
    #[arg(long)]
    multi_session: bool,
    /// Permissive CORS headers.
    #[arg(long)]
    cors: bool,
    /// Static workbench assets to serve under /ui.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PerformanceArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    models: ModelArgs,
    #[arg(long)]
    label: String,
    /// Positive label value for binary models.
    #[arg(long)]
    positive: Option<String>,
    /// Comma-separated class labels for multiclass models, in output order.
    #[arg(long)]
    classes: Option<String>,
    /// One or two comma-separated features.
    #[arg(long)]
    slice_by: Option<String>,
    #[arg(long)]
    bins: Option<usize>,
    /// Cost of a false positive relative to a false negative.
    #[arg(long)]
    cost_ratio: Option<f64>,
    /// Fixed global threshold.
    #[arg(long, conflicts_with = "cost_ratio")]
    threshold: Option<f64>,
    /// single, group, demographic-parity, equal-opportunity or equal-accuracy
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// count, alpha, accuracy or mean-error
    #[arg(long)]
    sort: Option<String>,
    #[command(flatten)]
    out: OutArgs,
}

enum Failure {
    Input(String),
    Backend(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Backend(e.to_string())
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn input(message: impl Into<String>) -> Failure {
    Failure::Input(message.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Backend(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Serve(args) => serve(args),
        Command::Stats { data, sort, out } => {
            let dataset = load_dataset(&data)?;
            let sort: SortKey = sort.parse()?;
            emit(&out, &report::stats_report(&dataset, sort)?)
        }
        Command::Counterfactual {
            data,
            models,
            point,
            norm,
            slot,
            out,
        } => {
            let dataset = load_dataset(&data)?;
            let handles = load_models(&models.models, models.model2.as_deref(), models.task.as_deref(), models.fan_out)?;
            let norm: DistanceNorm = norm.parse()?;
            let model = match slot {
                Some(s) => {
                    let s: ModelSlot = s.parse()?;
                    handles.iter().find(|h| h.slot() == s).ok_or(Error::NoModel(s))?
                }
                None => &handles[0],
            };
            emit(&out, &report::counterfactual_report(&dataset, model, point, norm)?)
        }
        Command::Pdp {
            data,
            models,
            feature,
            point,
            global: _,
            range,
            points,
            values,
            top_n,
            out,
        } => {
            let dataset = load_dataset(&data)?;
            let handles = load_models(&models.models, models.model2.as_deref(), models.task.as_deref(), models.fan_out)?;
            let mut spec = PdpSpec::new(feature);
            spec.range = range.as_deref().map(whatif_service::parse_range).transpose()?;
            if let Some(n) = points {
                spec.num_points = n;
            }
            if let Some(n) = top_n {
                spec.top_n = n;
            }
            let values = split_list(values.as_deref());
            if !values.is_empty() {
                spec.categorical_values = Some(values);
            }
            let refs: Vec<&ModelHandle> = handles.iter().collect();
            emit(&out, &report::pdp_report(&dataset, &refs, point, &spec, None)?)
        }
        Command::Performance(args) => performance(args),
    }
}

fn performance(args: PerformanceArgs) -> Outcome {
    let dataset = load_dataset(&args.data)?;
    let m = &args.models;
    let handles = load_models(&m.models, m.model2.as_deref(), m.task.as_deref(), m.fan_out)?;
    let refs: Vec<&ModelHandle> = handles.iter().collect();
    let task = handles[0].task();
    let binding = GroundTruthBinding {
        feature: args.label,
        positive: match task {
            TaskKind::BinaryClassification => Some(args.positive.unwrap_or_else(|| "1".to_string())),
            _ => args.positive,
        },
        classes: Some(split_list(args.classes.as_deref())).filter(|c| !c.is_empty()),
    };
    let mut slices = SliceSpec {
        features: split_list(args.slice_by.as_deref()),
        ..SliceSpec::default()
    };
    if let Some(b) = args.bins {
        slices.numeric_bin_count = b;
    }

    if let Some(strategy) = args.strategy {
        let strategy: FairnessStrategy = strategy.parse()?;
        let ratio = CostRatio::new(args.cost_ratio.unwrap_or(1.0))?;
        let epsilon = args.epsilon.unwrap_or(DEFAULT_EPSILON);
        let body = report::fairness_report(&dataset, &refs, &binding, &slices, strategy, ratio, epsilon)?;
        return emit(&args.out, &body);
    }
    if args.epsilon.is_some() {
        return Err(input("--epsilon only applies with --strategy"));
    }
    let choice = match (args.cost_ratio, args.threshold) {
        (Some(r), _) => ThresholdChoice::Optimize(CostRatio::new(r)?),
        (None, Some(t)) => ThresholdChoice::Fixed(Thresholds::Global(t)),
        (None, None) => ThresholdChoice::Fixed(Thresholds::default()),
    };
    let sort = args.sort.as_deref().map(str::parse::<SliceSort>).transpose()?.unwrap_or_default();
    emit(
        &args.out,
        &report::performance_report(&dataset, &refs, &binding, &slices, &choice, sort)?,
    )
}

fn serve(args: ServeArgs) -> Outcome {
    let config = ServiceConfig {
        multi_session: args.multi_session,
        cors: args.cors,
        ui_dir: args.ui_dir,
        remote: remote_options(args.fan_out)?,
    };
    let state = AppState::new(config);
    if let Some(path) = &args.dataset {
        let schema = read_schema(args.schema.as_deref())?;
        whatif_service::preload_dataset(&state, path, schema.as_deref())
            .map_err(|e| prefixed(e, &format!("dataset {}", path.display())))?;
    }
    let task = args.task.as_deref().map(parse_task).transpose()?;
    for (slot, source) in model_sources(&args.models, args.model2.as_deref())? {
        whatif_service::preload_model(&state, slot, &source, task).map_err(|e| prefixed(e, &format!("{slot}")))?;
    }

    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Backend(e.to_string()))?;
    runtime.block_on(async move {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Failure::Backend(format!("cannot listen on {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| Failure::Backend(e.to_string()))?;
        eprintln!("listening on http://{local}");
        let shutdown = async {
            tokio::signal::ctrl_c().await.ok();
        };
        whatif_service::serve(Arc::new(state), listener, shutdown)
            .await
            .map_err(|e| Failure::Backend(e.to_string()))
    })
}

fn prefixed(e: Error, what: &str) -> Failure {
    match Failure::from(e) {
        Failure::Input(m) => Failure::Input(format!("{what}: {m}")),
        Failure::Backend(m) => Failure::Backend(format!("{what}: {m}")),
    }
}

fn split_list(s: Option<&str>) -> Vec<String> {
    s.map(|s| s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
        .unwrap_or_default()
}

fn read_schema(path: Option<&Path>) -> Outcome<Option<Vec<DeclaredFeature>>> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Backend(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| input(format!("schema {}: {e}", path.display())))
}

fn load_dataset(args: &DataArgs) -> Outcome<Dataset> {
    let bytes = std::fs::read(&args.dataset).map_err(|e| Failure::Backend(format!("{}: {e}", args.dataset.display())))?;
    let format = match &args.format {
        Some(f) => f.parse()?,
        None => Format::from_path(&args.dataset.to_string_lossy()),
    };
    let schema = read_schema(args.schema.as_deref())?;
    Ok(ingest(&bytes, format, schema.as_deref())?)
}

fn parse_task(s: &str) -> Outcome<TaskKind> {
    let lower = s.to_ascii_lowercase();
    match lower.as_str() {
        "binary" | "binary_classification" => Ok(TaskKind::BinaryClassification),
        "regression" => Ok(TaskKind::Regression),
        _ => lower
            .strip_prefix("multiclass:")
            .and_then(|n| n.parse().ok())
            .filter(|&n: &usize| n >= 2)
            .map(|num_classes| TaskKind::MultiClassification { num_classes })
            .ok_or_else(|| input(format!("unknown task {s:?}; use binary, regression or multiclass:N"))),
    }
}

fn remote_options(fan_out: usize) -> Outcome<RemoteOptions> {
    if fan_out == 0 {
        return Err(input("fan-out must be at least 1"));
    }
    Ok(RemoteOptions {
        fan_out,
        ..RemoteOptions::default()
    })
}

/// Pairs each `--model` value with its slot. Unprefixed values fill the
/// slots in order.
fn model_sources(models: &[String], model2: Option<&str>) -> Outcome<Vec<(ModelSlot, String)>> {
    let mut out: Vec<(ModelSlot, String)> = Vec::new();
    let mut next = ModelSlot::ALL.iter();
    for m in models {
        let explicit = m
            .split_once('=')
            .and_then(|(slot, rest)| slot.parse::<ModelSlot>().ok().map(|s| (s, rest.to_string())));
        let (slot, source) = match explicit {
            Some(pair) => pair,
            None => (*next.next().ok_or_else(|| input("at most two models"))?, m.clone()),
        };
        out.push((slot, source));
    }
    if let Some(m) = model2 {
        out.push((ModelSlot::Model2, m.to_string()));
    }
    out.sort_by_key(|(slot, _)| *slot);
    if out.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(input("two models given for the same slot"));
    }
    Ok(out)
}

fn load_models(models: &[String], model2: Option<&str>, task: Option<&str>, fan_out: usize) -> Outcome<Vec<ModelHandle>> {
    let task = task.map(parse_task).transpose()?;
    let options = remote_options(fan_out)?;
    let handles = model_sources(models, model2)?
        .into_iter()
        .map(|(slot, source)| {
            let src = whatif_service::model_source(&source, task).map_err(|e| prefixed(e, &source))?;
            ModelHandle::from_source(slot, src, None, &options).map_err(|e| prefixed(e, &source))
        })
        .collect::<Outcome<Vec<_>>>()?;
    if let [a, b] = handles.as_slice() {
        if a.task() != b.task() {
            return Err(input("both models must have the same task"));
        }
    }
    Ok(handles)
}

fn emit<T: serde::Serialize>(out: &OutArgs, value: &T) -> Outcome {
    let text = report::to_json(value);
    let result = match &out.out {
        Some(path) => std::fs::write(path, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    };
    result.map_err(|e| Failure::Backend(e.to_string()))
}
