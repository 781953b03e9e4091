use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use nhac::io::{load_dataset, load_model, save_dataset, write_atomic};
use nhac::pipeline::{ablation, compare_resampling, default_deltas, delta_sweep, evaluate_model, run, RunReport};
use nhac::report::{
    bar_chart, comparison_csv, rows_from_csv, sweep_csv, sweep_from_csv, sweep_svg, write_run_dir,
    write_trajectory_plots, MODEL_FILE,
};
use nhac::{generate, NhacError, PipelineConfig, SyntheticSpec};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "nhac", version, about = "Unsupervised tracklet clustering with graph trimming and node re-sampling")]
struct Cli {
    /// Worker threads for parallel phases (default: all cores).
    #[arg(long, global = true, env = "NHAC_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tracklet dataset.
    Generate {
        /// Generator parameters (JSON object); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the clustering loop and write a report directory.
    Run(RunArgs),
    /// Compare the baseline, each module alone and the full method.
    Ablate(RunArgs),
    /// Repeat the run over several trimming relaxations.
    SweepDelta {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated values in (0, 1]; defaults to 0.1 through 0.9.
        #[arg(long, value_delimiter = ',')]
        deltas: Option<Vec<f64>>,
    },
    /// Compare the over, under and combined re-sampling criteria.
    CompareResampling(RunArgs),
    /// Score a saved model on a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Model file, or a report directory containing one.
        #[arg(long)]
        model: PathBuf,
        /// Write the scores as JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SVG charts from a report or sweep CSV.
    Plot {
        /// `report.csv` of a run or `sweep.csv` of a delta sweep.
        #[arg(long)]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration (JSON object); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<NhacError> for Failure {
    fn from(e: NhacError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Unreadable input files are usage errors, not runtime failures.
fn input<T>(r: nhac::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        NhacError::Io { .. } => Failure::Validation(e.to_string()),
        other => other.into(),
    })
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = input(fs::read_to_string(path).map_err(|e| NhacError::io(path, e)))?;
    serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn pipeline_config(args: &RunArgs) -> CliResult<PipelineConfig> {
    let mut config: PipelineConfig = read_json(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::from(NhacError::io(dir, e)))
}

fn variant_dir(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

fn comparison_svg(title: &str, reports: &[RunReport]) -> String {
    let methods: Vec<String> = reports.iter().map(|r| r.label.clone()).collect();
    let metric = |f: fn(&RunReport) -> Option<f64>| reports.iter().map(|r| f(r).unwrap_or(0.0)).collect();
    bar_chart(
        title,
        "score",
        &methods,
        &[
            ("best Rank-1".to_string(), metric(|r| r.best_rank1())),
            ("best mAP".to_string(), metric(|r| r.best_map())),
            ("final pairwise F1".to_string(), metric(|r| r.final_row().pair_f1)),
        ],
    )
}

fn write_comparison(out: &Path, title: &str, reports: &[RunReport]) -> CliResult<()> {
    for r in reports {
        write_run_dir(r, &out.join(variant_dir(&r.label)))?;
    }
    write_atomic(&out.join("comparison.csv"), comparison_csv(reports)?.as_bytes())?;
    write_atomic(&out.join("comparison.svg"), comparison_svg(title, reports).as_bytes())?;
    Ok(())
}

fn check_aborted<'a>(reports: impl IntoIterator<Item = &'a RunReport>) -> CliResult<()> {
    for r in reports {
        if let Some(reason) = &r.aborted {
            return Err(Failure::Runtime(format!("{} stopped early: {reason}", r.label)));
        }
    }
    Ok(())
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Generate { config, out, seed } => {
            let mut spec: SyntheticSpec = read_json(config.as_deref())?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let data = generate(&spec)?;
            save_dataset(&data, &out)?;
            info!("wrote {} tracklets ({} frames) to {}", data.len(), data.frame_count(), out.display());
        }
        Command::Run(args) => {
            let config = pipeline_config(&args)?;
            let data = input(load_dataset(&args.data))?;
            let report = run(&config, &data)?;
            write_run_dir(&report, &args.out)?;
            info!("report written to {}", args.out.display());
            check_aborted([&report])?;
        }
        Command::Ablate(args) => {
            let config = pipeline_config(&args)?;
            let data = input(load_dataset(&args.data))?;
            prepare_out(&args.out)?;
            let reports = ablation(&config, &data)?;
            write_comparison(&args.out, "Component ablation", &reports)?;
            check_aborted(&reports)?;
        }
        Command::SweepDelta { run, deltas } => {
            let config = pipeline_config(&run)?;
            let data = input(load_dataset(&run.data))?;
            prepare_out(&run.out)?;
            let deltas = deltas.unwrap_or_else(default_deltas);
            let rows = delta_sweep(&config, &data, &deltas)?;
            let csv = sweep_csv(&rows)?;
            write_atomic(&run.out.join("sweep.csv"), csv.as_bytes())?;
            write_atomic(&run.out.join("sweep.svg"), sweep_svg(&sweep_from_csv(&csv)?).as_bytes())?;
            check_aborted(rows.iter().map(|r| &r.report))?;
        }
        Command::CompareResampling(args) => {
            let config = pipeline_config(&args)?;
            let data = input(load_dataset(&args.data))?;
            prepare_out(&args.out)?;
            let reports = compare_resampling(&config, &data)?;
            write_comparison(&args.out, "Re-sampling criteria", &reports)?;
            check_aborted(&reports)?;
        }
        Command::Eval { data, model, out } => {
            let model_path = if model.is_dir() { model.join(MODEL_FILE) } else { model };
            let model = input(load_model(&model_path))?;
            let data = input(load_dataset(&data))?;
            let scores = evaluate_model(&model, &data)?;
            let json = serde_json::to_string_pretty(&scores).map_err(NhacError::from)?;
            match out {
                Some(path) => write_atomic(&path, json.as_bytes())?,
                None => println!("{json}"),
            }
        }
        Command::Plot { input: path, out } => {
            let text = input(fs::read_to_string(&path).map_err(|e| NhacError::io(&path, e)))?;
            prepare_out(&out)?;
            if text.starts_with("delta,") {
                write_atomic(&out.join("sweep.svg"), sweep_svg(&sweep_from_csv(&text)?).as_bytes())?;
            } else {
                write_trajectory_plots(&rows_from_csv(&text)?, &out)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            error!("--threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            error!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            error!("{msg}");
            ExitCode::from(2)
        }
    }
}
