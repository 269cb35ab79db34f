//! `headpose` command line: simulate, predict, tune, evaluate, loso.
//!
//! Exit codes: 0 on success, 2 when a reported statistic is degenerate (every
//! paired difference zero), 1 on I/O or configuration errors.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{Overrides, RunConfig};
use crate::dataset::{read_dataset_dir, read_track, RouteId, Track};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_groups, frame_errors_csv, loso_cv, prepare_tracks, protocol_notes, tune_w, CvReport,
    EvaluationReport, TuneResult,
};
use crate::stream::{predict_track, run_stream};
use crate::walker_sim::{default_routes, generate_dataset, write_dataset, RouteSpec};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_DEGENERATE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "headpose", version, about = "Head-pose-conditioned 3D head-position prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset: one CSV per (subject, route) plus manifest.json.
    Simulate(SimulateArgs),
    /// Emit positions (a), (b), (c) for every frame of a track.
    Predict(PredictArgs),
    /// Grid-search the blend weight on a dataset.
    Tune(DataArgs),
    /// Compare baseline and proposed errors per route group at a fixed weight.
    Evaluate(DataArgs),
    /// Leave-one-subject-out tuning and evaluation.
    Loso(DataArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Key-value TOML file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// RNG seed [default: 20]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Blend weight w [default: 1]
    #[arg(long)]
    pub w: Option<f64>,
    /// Prediction horizon in frames [default: 15]
    #[arg(long = "n-steps")]
    pub n_steps: Option<u32>,
    /// Frame rate for simulation and stream input [default: 30]
    #[arg(long)]
    pub fps: Option<f64>,
    /// Upper bound of w and of the tuning grid [default: 1]
    #[arg(long = "w-max")]
    pub w_max: Option<f64>,
    /// Tuning grid spacing [default: 0.05]
    #[arg(long = "grid-step")]
    pub grid_step: Option<f64>,
    /// Process-noise density of the position filter, m²/s³ [default: 2]
    #[arg(long = "q-accel")]
    pub q_accel: Option<f64>,
    /// Position measurement noise std, m [default: 0.02]
    #[arg(long = "r-pos")]
    pub r_pos: Option<f64>,
    /// Nearest accepted nose depth, m [default: 0.5]
    #[arg(long = "min-depth")]
    pub min_depth: Option<f64>,
    /// Farthest accepted nose depth, m [default: 5.46]
    #[arg(long = "max-depth")]
    pub max_depth: Option<f64>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            w: self.w,
            n_steps: self.n_steps,
            fps: self.fps,
            w_max: self.w_max,
            grid_step: self.grid_step,
            q_accel: self.q_accel,
            r_pos: self.r_pos,
            min_depth: self.min_depth,
            max_depth: self.max_depth,
            ..Overrides::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of subjects [default: 14]
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Routes: all, straight (R1), quarter-turn (R3), three-quarter-turn (R5), or a list like R1,R4
    #[arg(long, default_value = "all")]
    pub routes: String,
    /// Head yaw lead over body heading, s [default: 0.2]
    #[arg(long = "head-lead")]
    pub head_lead: Option<f64>,
    /// Extra peak head yaw during turns, rad [default: 0]
    #[arg(long = "head-overshoot")]
    pub head_overshoot: Option<f64>,
    /// Observation position noise std, m [default: 0.02]
    #[arg(long = "noise-pos")]
    pub noise_pos: Option<f64>,
    /// Observation yaw noise std, rad [default: 0.05]
    #[arg(long = "noise-yaw")]
    pub noise_yaw: Option<f64>,
    /// Recording length cap, s [default: 5]
    #[arg(long)]
    pub duration: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// Track CSV; `-` reads standard input
    #[arg(long, default_value = "-")]
    pub input: String,
    /// Output CSV [default: standard output]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Process rows as they arrive and flush one prediction per row
    #[arg(long)]
    pub stream: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory of track CSV files
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for reports [default: JSON to standard output]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn resolve(common: &CommonArgs, extra: Overrides) -> Result<RunConfig> {
    let flags = common.overrides().over(&extra);
    let merged = match &common.config {
        Some(path) => flags.over(&Overrides::load(path)?),
        None => flags,
    };
    RunConfig::resolve(&merged)
}

/// Parses `all`, a named route class, or a comma-separated list of route ids.
pub fn select_routes(spec: &str) -> Result<Vec<RouteSpec>> {
    let all = default_routes();
    let pick = |ids: &[RouteId]| -> Vec<RouteSpec> {
        all.iter().copied().filter(|r| ids.contains(&r.route_id)).collect()
    };
    let routes = match spec.trim() {
        "all" => all.clone(),
        "straight" => pick(&[RouteId::R1]),
        "quarter-turn" => pick(&[RouteId::R3]),
        "three-quarter-turn" => pick(&[RouteId::R5]),
        list => {
            let ids = list
                .split(',')
                .map(|s| s.trim().parse::<RouteId>())
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Config(e.to_string()))?;
            pick(&ids)
        }
    };
    if routes.is_empty() {
        return Err(Error::Config(format!("no routes selected by {spec:?}")));
    }
    Ok(routes)
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    config: &'a RunConfig,
    #[serde(flatten)]
    body: &'a T,
}

fn write_json<T: Serialize>(out: Option<&Path>, file: &str, cfg: &RunConfig, body: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&Report { config: cfg, body })?;
    text.push('\n');
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(file), text)?;
        }
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn load_dataset(dir: &Path, cfg: &RunConfig) -> Result<Vec<Track>> {
    let tracks = read_dataset_dir(dir)?;
    if tracks.is_empty() {
        return Err(Error::Config(format!("no track files in {}", dir.display())));
    }
    Ok(prepare_tracks(&tracks, &cfg.range))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8> {
    let extra = Overrides {
        subjects: args.subjects,
        head_lead_s: args.head_lead,
        head_overshoot: args.head_overshoot,
        noise_pos: args.noise_pos,
        noise_yaw: args.noise_yaw,
        duration_s: args.duration,
        ..Overrides::default()
    };
    let cfg = resolve(&args.common, extra)?;
    let routes = select_routes(&args.routes)?;
    let tracks = generate_dataset(cfg.subjects, &routes, &cfg.sim)?;
    let manifest = write_dataset(&args.out, &tracks, cfg.subjects, &routes, &cfg.sim)?;
    log::info!("wrote {} tracks to {}", manifest.tracks.len(), args.out.display());
    println!("{} tracks written to {}", manifest.tracks.len(), args.out.display());
    Ok(EXIT_OK)
}

fn cmd_predict(args: &PredictArgs) -> Result<u8> {
    let cfg = resolve(&args.common, Overrides::default())?;
    if args.stream {
        let stdin;
        let file;
        let reader: Box<dyn io::BufRead> = if args.input == "-" {
            stdin = io::stdin();
            Box::new(stdin.lock())
        } else {
            file = fs::File::open(&args.input)?;
            Box::new(BufReader::new(file))
        };
        let summary = match &args.out {
            Some(path) => run_stream(reader, fs::File::create(path)?, cfg.predictor, cfg.filters)?,
            None => run_stream(reader, io::stdout().lock(), cfg.predictor, cfg.filters)?,
        };
        log::info!(
            "{} frames, p50 {:.1} us, p99 {:.1} us",
            summary.frames, summary.p50_us, summary.p99_us
        );
        return Ok(EXIT_OK);
    }
    let track = if args.input == "-" {
        let text = io::read_to_string(io::stdin())?;
        crate::dataset::parse_track(&text)?
    } else {
        read_track(Path::new(&args.input))?
    };
    let mut filters = cfg.filters;
    filters.kalman.dt = 1.0 / track.fps;
    let text = predict_track(&track, &cfg.predictor, &filters)?;
    match &args.out {
        Some(path) => fs::write(path, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct TuneBody<'a> {
    tune: &'a TuneResult,
    notes: std::collections::BTreeMap<String, String>,
}

fn cmd_tune(args: &DataArgs) -> Result<u8> {
    let cfg = resolve(&args.common, Overrides::default())?;
    let tracks = load_dataset(&args.data, &cfg)?;
    let result = tune_w(&tracks, &cfg.grid()?, &cfg.eval_settings())?;
    write_json(
        args.out.as_deref(),
        "tune.json",
        &cfg,
        &TuneBody {
            tune: &result,
            notes: protocol_notes(),
        },
    )?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct EvaluateBody<'a> {
    #[serde(flatten)]
    report: &'a EvaluationReport,
    notes: std::collections::BTreeMap<String, String>,
}

fn write_errors(out: Option<&Path>, errors: &[crate::eval::FrameError]) -> Result<()> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("frame_errors.csv"), frame_errors_csv(errors))?;
    }
    Ok(())
}

fn cmd_evaluate(args: &DataArgs) -> Result<u8> {
    let cfg = resolve(&args.common, Overrides::default())?;
    let tracks = load_dataset(&args.data, &cfg)?;
    let report = evaluate_groups(&tracks, &cfg.eval_settings())?;
    write_json(
        args.out.as_deref(),
        "evaluate.json",
        &cfg,
        &EvaluateBody {
            report: &report,
            notes: protocol_notes(),
        },
    )?;
    write_errors(args.out.as_deref(), &report.frame_errors)?;
    Ok(if report.any_degenerate() { EXIT_DEGENERATE } else { EXIT_OK })
}

fn cmd_loso(args: &DataArgs) -> Result<u8> {
    let cfg = resolve(&args.common, Overrides::default())?;
    let tracks = load_dataset(&args.data, &cfg)?;
    let report: CvReport = loso_cv(&tracks, &cfg.grid()?, &cfg.eval_settings())?;
    write_json(args.out.as_deref(), "loso.json", &cfg, &report)?;
    write_errors(args.out.as_deref(), &report.frame_errors)?;
    Ok(if report.any_degenerate() { EXIT_DEGENERATE } else { EXIT_OK })
}

pub fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Loso(a) => cmd_loso(a),
    }
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::DegenerateSample(_) => EXIT_DEGENERATE,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` and runs the command, mapping errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn route_selection() {
        assert_eq!(select_routes("all").unwrap().len(), 6);
        assert_eq!(select_routes("straight").unwrap()[0].route_id, RouteId::R1);
        let r = select_routes("R2, R6").unwrap();
        assert_eq!(r.iter().map(|r| r.route_id).collect::<Vec<_>>(), vec![RouteId::R2, RouteId::R6]);
        assert!(select_routes("R7").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::DegenerateSample("x".into())), 2);
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
    }
}
