//! `sbomm`: run the optimizer, sweep the consistency analysis, dump case
//! tables, and build or check against grid truth rasters.

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use sbomm_core::analysis::{
    case_probability, default_grid, enumerate_cases, sweep, ScenarioFile, SweepAxis,
};
use sbomm_core::consistency::{consistency_scores, decide};
use sbomm_core::engine::RunConfig;
use sbomm_core::models::{
    builtin, truth_oracle, TruthRaster, BUILTIN_MODELS, MIN_ORACLE_RESOLUTION,
};
use sbomm_core::report::{to_canonical_json, SolutionFile};
use sbomm_core::space::DecisionSpace;
use sbomm_core::validate::{agreement, check_domains};
use sbomm_core::{ConsistencyParams, Engine64, Error, Hyperbox64};

#[derive(Parser)]
#[command(
    name = "sbomm",
    version,
    about = "Set-based optimization over multiple models"
)]
struct Cli {
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimizer; writes solution.json and trace.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, created if missing.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Overrides master_seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Outcome probabilities along a grid of v or r values.
    Sweep {
        /// Scenario file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_axis)]
        axis: SweepAxis,
        /// Value of the parameter held fixed.
        #[arg(long)]
        fixed: f64,
        #[command(flatten)]
        grid: GridSpec,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every case of a scenario with its probability, scores, and verdict.
    Cases {
        /// Scenario file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        v: f64,
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dense-grid truth raster of one built-in model.
    Oracle {
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 0.2)]
        delta: f64,
        #[arg(long, default_value_t = 512)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Agreement of a solution's verdicts with the ideal-classifier verdicts.
    Validate {
        #[arg(long)]
        solution: PathBuf,
        /// One raster per model, in model order.
        #[arg(long = "oracle", required = true)]
        oracles: Vec<PathBuf>,
        /// Defaults to the run's v.
        #[arg(long)]
        v: Option<f64>,
        /// Defaults to the run's r.
        #[arg(long)]
        r: Option<f64>,
        /// JSON report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(multiple = false)]
struct GridSpec {
    /// Evenly spaced points on (0, N].
    #[arg(long, default_value_t = 300)]
    points: usize,
    /// Explicit comma-separated grid.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse::<SweepAxis>().map_err(|e| e.to_string())
}

/// Failure classes, mapped to exit codes 2 and 1.
enum Failure {
    Input(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::InvalidArgument(_)
            | Error::OutOfDomain { .. }
            | Error::TooLarge { .. } => Failure::Input(e.to_string()),
            Error::InvalidState(_) => Failure::Runtime(e.to_string()),
        }
    }
}

fn input(context: impl Display, e: impl Display) -> Failure {
    Failure::Input(format!("{context}: {e}"))
}

fn runtime(context: impl Display, e: impl Display) -> Failure {
    Failure::Runtime(format!("{context}: {e}"))
}

type CliResult<T> = Result<T, Failure>;

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| input(path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| input(path.display(), e))
}

/// Writes through a temporary file in the destination directory, then
/// renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| runtime(dir.display(), e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| runtime(dir.display(), e))?;
    tmp.write_all(bytes)
        .map_err(|e| runtime(path.display(), e))?;
    tmp.persist(path)
        .map_err(|e| runtime(path.display(), e.error))?;
    Ok(())
}

fn csv_bytes<R: Serialize>(rows: impl IntoIterator<Item = R>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| runtime("csv", e))?;
    }
    w.into_inner().map_err(|e| runtime("csv", e))
}

fn cmd_run(config: &Path, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let mut cfg: RunConfig = read_json(config)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let engine = Engine64::new(cfg.clone())?;
    let total = engine.space().volume();
    let solution = engine.run()?;
    info!(
        "stopped after {} iterations ({:?}), class-1 fraction {:.4}",
        solution.iterations_used,
        solution.stop_reason,
        solution.fraction(sbomm_core::Verdict::ConsistentAs(1), total)
    );
    let file = SolutionFile::from_solution(&cfg, &solution);
    write_atomic(&out.join("solution.json"), file.to_json().as_bytes())?;
    write_atomic(&out.join("trace.csv"), &csv_bytes(&solution.trace)?)?;
    Ok(())
}

#[derive(Serialize)]
struct SweepLine {
    param: f64,
    p_correct: f64,
    p_incorrect: f64,
    p_inconsistent: f64,
}

fn cmd_sweep(
    config: &Path,
    axis: SweepAxis,
    fixed: f64,
    grid: &GridSpec,
    out: &Path,
) -> CliResult<()> {
    let scenario = read_json::<ScenarioFile>(config)?.to_scenario::<f64>()?;
    let grid = match &grid.values {
        Some(values) => values.clone(),
        None if grid.points == 0 => return Err(Failure::Input("--points must be positive".into())),
        None => default_grid(scenario.models(), grid.points),
    };
    let rows = sweep(&scenario, axis, fixed, &grid)?;
    let lines = rows.iter().map(|row| SweepLine {
        param: row.param,
        p_correct: row.outcome.p_correct,
        p_incorrect: row.outcome.p_incorrect,
        p_inconsistent: row.outcome.p_inconsistent,
    });
    write_atomic(out, &csv_bytes(lines)?)
}

fn cmd_cases(config: &Path, v: f64, r: f64, out: Option<&Path>) -> CliResult<()> {
    let scenario = read_json::<ScenarioFile>(config)?.to_scenario::<f64>()?;
    let params = ConsistencyParams::new(v, r);
    params.validate(scenario.models())?;
    let k = scenario.classes();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "case".to_string(),
        "labels".to_string(),
        "probability".to_string(),
    ];
    header.extend((1..=k).map(|c| format!("c{c}")));
    header.push("verdict".into());
    w.write_record(&header).map_err(|e| runtime("csv", e))?;
    for (i, case) in enumerate_cases(scenario.models(), k)?.iter().enumerate() {
        let scores = consistency_scores(case, scenario.probs())?;
        let labels: Vec<String> = case.labels().iter().map(ToString::to_string).collect();
        let mut record = vec![
            (i + 1).to_string(),
            labels.join("-"),
            case_probability(case, &scenario)?.to_string(),
        ];
        record.extend(scores.0.iter().map(ToString::to_string));
        record.push(decide(&scores, &params).to_string());
        w.write_record(&record).map_err(|e| runtime("csv", e))?;
    }
    let bytes = w.into_inner().map_err(|e| runtime("csv", e))?;
    match out {
        Some(path) => write_atomic(path, &bytes),
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| runtime("stdout", e)),
    }
}

fn cmd_oracle(model: &str, delta: f64, resolution: usize, out: &Path) -> CliResult<()> {
    let spec = builtin::<f64>(model, 1).ok_or_else(|| {
        Failure::Input(format!(
            "unknown model `{model}`; expected one of {}",
            BUILTIN_MODELS.join(", ")
        ))
    })?;
    if resolution < MIN_ORACLE_RESOLUTION {
        return Err(Failure::Input(format!(
            "resolution must be at least {MIN_ORACLE_RESOLUTION}, got {resolution}"
        )));
    }
    let raster = truth_oracle(&spec, delta, resolution)?;
    info!(
        "{model}: threshold {}, member fraction {:.4}",
        raster.threshold,
        raster.member_fraction()
    );
    write_atomic(out, &raster_csv(&raster)?)
}

fn raster_csv(raster: &TruthRaster<f64>) -> CliResult<Vec<u8>> {
    let dims = raster.domain.dims();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=dims).map(|d| format!("x{d}")).collect();
    header.extend(["value".to_string(), "member".to_string()]);
    w.write_record(&header).map_err(|e| runtime("csv", e))?;
    for cell in 0..raster.cells() {
        let mut record: Vec<String> = raster
            .cell_center(cell)
            .iter()
            .map(ToString::to_string)
            .collect();
        record.push(raster.value(cell).to_string());
        record.push(u8::from(raster.is_member(cell)).to_string());
        w.write_record(&record).map_err(|e| runtime("csv", e))?;
    }
    w.into_inner().map_err(|e| runtime("csv", e))
}

/// Reads a raster CSV back; domain and resolution are recovered from the
/// cell centers.
fn read_raster(path: &Path) -> CliResult<TruthRaster<f64>> {
    let bad = |e: &dyn Display| input(path.display(), e);
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(&e))?;
    let dims = reader
        .headers()
        .map_err(|e| bad(&e))?
        .len()
        .saturating_sub(2);
    if dims == 0 {
        return Err(bad(&"expected columns x1..xd,value,member"));
    }
    let mut centers: Vec<Vec<f64>> = Vec::new();
    let (mut values, mut members) = (Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| bad(&e))?;
        let num = |i: usize| -> CliResult<f64> {
            record
                .get(i)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(&e))
        };
        centers.push((0..dims).map(num).collect::<CliResult<_>>()?);
        values.push(num(dims)?);
        members.push(match record.get(dims + 1).map(str::trim) {
            Some("1") => true,
            Some("0") => false,
            other => return Err(bad(&format!("member must be 0 or 1, got {other:?}"))),
        });
    }
    let resolution = (values.len() as f64).powf(1.0 / dims as f64).round() as usize;
    if resolution < 2 || resolution.pow(dims as u32) != values.len() {
        return Err(bad(&format!(
            "{} cells do not form a {dims}-dimensional grid",
            values.len()
        )));
    }
    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    for d in 0..dims {
        let lo = centers.iter().map(|c| c[d]).fold(f64::INFINITY, f64::min);
        let hi = centers
            .iter()
            .map(|c| c[d])
            .fold(f64::NEG_INFINITY, f64::max);
        let half = (hi - lo) / (resolution - 1) as f64 / 2.0;
        lower.push(lo - half);
        upper.push(hi + half);
    }
    let domain = DecisionSpace::new(lower, upper).map_err(|e| bad(&e))?;
    let threshold = values
        .iter()
        .zip(&members)
        .filter(|&(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let name = path
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    Ok(TruthRaster::from_parts(
        name, domain, resolution, threshold, values, members,
    )?)
}

fn cmd_validate(
    solution: &Path,
    oracles: &[PathBuf],
    v: Option<f64>,
    r: Option<f64>,
    out: Option<&Path>,
) -> CliResult<()> {
    let text = fs::read_to_string(solution).map_err(|e| input(solution.display(), e))?;
    let sol = SolutionFile::from_json(&text)?;
    let params = ConsistencyParams::new(
        v.unwrap_or(sol.config.consistency.v),
        r.unwrap_or(sol.config.consistency.r),
    );
    params.validate(sol.config.models.len())?;
    if oracles.len() != sol.config.models.len() {
        return Err(Failure::Input(format!(
            "{} oracle files for {} models",
            oracles.len(),
            sol.config.models.len()
        )));
    }
    let rasters = oracles
        .iter()
        .map(|p| read_raster(p))
        .collect::<CliResult<Vec<_>>>()?;
    let space = match &sol.config.domain {
        Some(b) => DecisionSpace::new(b.lower.clone(), b.upper.clone())?,
        None => sol.config.resolve_models::<f64>()?[0].domain.clone(),
    };
    check_domains(&rasters, &space)?;
    let boxes: Vec<Hyperbox64> = sol.regions.iter().map(|r| r.bounds.clone()).collect();
    let report = agreement(
        boxes.iter().zip(sol.regions.iter().map(|r| r.verdict)),
        &rasters,
        &params,
    );
    let mut json = to_canonical_json(&report)?;
    json.push('\n');
    match out {
        Some(path) => write_atomic(path, json.as_bytes()),
        None => std::io::stdout()
            .write_all(json.as_bytes())
            .map_err(|e| runtime("stdout", e)),
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| runtime("thread pool", e))?;
    }
    match &cli.command {
        Command::Run { config, out, seed } => cmd_run(config, out, *seed),
        Command::Sweep {
            config,
            axis,
            fixed,
            grid,
            out,
        } => cmd_sweep(config, *axis, *fixed, grid, out),
        Command::Cases { config, v, r, out } => cmd_cases(config, *v, *r, out.as_deref()),
        Command::Oracle {
            model,
            delta,
            resolution,
            out,
        } => cmd_oracle(model, *delta, *resolution, out),
        Command::Validate {
            solution,
            oracles,
            v,
            r,
            out,
        } => cmd_validate(solution, oracles, *v, *r, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SBOMM_LOG", "warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
