//! Command-line front end.
//!
//! Every subcommand reads a flat `key = value` configuration file; a few flags
//! override individual keys. Outputs are written to the configured directory
//! and depend only on the input files, the configuration and the seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::annuity::{self, forecast_tables, price_grid, AnnuityError};
use crate::eval::{run_expanding_window, EvalError, Variant, WindowPlan};
use crate::fpca::{ComponentSelector, MftsScaling, DEFAULT_EVR_KMAX};
use crate::lifetable::{
    gini_equality_index, life_expectancy, modal_age, normalize_to_density, panel_to_csv, read_hmd, LifeTableError,
    LifeTableSeries, Sex, DEFAULT_RADIX,
};
use crate::pipeline::{forecast, ComponentSummary, ForecastRun, Method, PipelineConfig, PipelineError, DEFAULT_BOOTSTRAP};
use crate::synthetic::{to_hmd_text, GompertzSpec};
use crate::transforms::DEFAULT_CLIP_EPS;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {msg}")]
    Config { path: String, msg: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error(transparent)]
    LifeTable(#[from] LifeTableError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Annuity(#[from] AnnuityError),
    #[error("manifest serialisation: {0}")]
    Json(String),
}

impl CliError {
    /// 2 for bad input data or configuration, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        let data = match self {
            CliError::Config { .. } | CliError::Io { .. } | CliError::LifeTable(_) => true,
            CliError::Pipeline(e) => e.is_data_error(),
            CliError::Eval(EvalError::Window { source, .. }) => source.is_data_error(),
            CliError::Eval(_) => true,
            CliError::Annuity(AnnuityError::LifeTable(_) | AnnuityError::Parse { .. }) => true,
            CliError::Annuity(_) => false,
            CliError::Json(_) => false,
        };
        if data {
            2
        } else {
            3
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mortcast", version, about = "Forecast life-table death distributions and price annuities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-year life expectancy, Gini equality index and modal age, plus density panels.
    Describe(RunArgs),
    /// Point and interval forecasts of the death distribution.
    Forecast(RunArgs),
    /// Expanding-window accuracy comparison.
    Evaluate(RunArgs),
    /// Temporary annuity prices from forecast life tables.
    Annuity(RunArgs),
    /// Write synthetic life tables and a matching configuration file.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub method: Option<Method>,
    /// Fixed number of principal components.
    #[arg(long, conflicts_with = "evr")]
    pub k: Option<usize>,
    /// Choose the number of components by the eigenvalue-ratio criterion.
    #[arg(long)]
    pub evr: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 1975)]
    pub first_year: i32,
    #[arg(long, default_value_t = 48)]
    pub years: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Settings shared by all subcommands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub female: Option<PathBuf>,
    pub male: Option<PathBuf>,
    pub output: PathBuf,
    pub methods: Vec<Method>,
    pub selectors: Vec<ComponentSelector>,
    pub horizon: usize,
    pub alpha: f64,
    pub seed: u64,
    pub bootstrap: usize,
    pub clip_eps: f64,
    pub mfts_scaling: MftsScaling,
    pub radix: f64,
    pub first_year: Option<i32>,
    pub last_year: Option<i32>,
    pub train_start: Option<i32>,
    pub first_test_year: Option<i32>,
    pub etas: Vec<f64>,
    pub annuity_method: Method,
    pub annuity_horizon: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            female: None,
            male: None,
            output: PathBuf::from("output"),
            methods: Method::ALL.to_vec(),
            selectors: vec![ComponentSelector::default()],
            horizon: 16,
            alpha: 0.2,
            seed: 1,
            bootstrap: DEFAULT_BOOTSTRAP,
            clip_eps: DEFAULT_CLIP_EPS,
            mfts_scaling: MftsScaling::PerAge,
            radix: DEFAULT_RADIX,
            first_year: None,
            last_year: None,
            train_start: None,
            first_test_year: None,
            etas: vec![0.0025],
            annuity_method: Method::CdfMlfts,
            annuity_horizon: 50,
        }
    }
}

fn parse_list<T>(value: &str, item: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(item)
        .collect::<std::result::Result<_, _>>()?;
    if items.is_empty() {
        return Err("empty list".into());
    }
    Ok(items)
}

fn parse_selector(s: &str) -> std::result::Result<ComponentSelector, String> {
    let lower = s.to_ascii_lowercase();
    if lower == "evr" {
        return Ok(ComponentSelector::Evr { kmax: DEFAULT_EVR_KMAX });
    }
    let k = lower.strip_prefix("k=").unwrap_or(&lower);
    match k.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(ComponentSelector::Fixed(k)),
        _ => Err(format!("selector '{s}' is neither a positive K nor 'evr'")),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| format!("'{s}': {e}"))
}

/// Parses a configuration file; relative paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path, source: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut evr_kmax = DEFAULT_EVR_KMAX;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| CliError::Config {
            path: source.to_string(),
            msg: format!("line {}: {msg}", i + 1),
        };
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(format!("expected key = value, found '{line}'")))?;
        let path = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        let result: std::result::Result<(), String> = (|| {
            match key {
                "female" => cfg.female = Some(path(value)),
                "male" => cfg.male = Some(path(value)),
                "output" => cfg.output = path(value),
                "methods" => cfg.methods = parse_list(value, |s| s.parse::<Method>())?,
                "selectors" | "selector" => cfg.selectors = parse_list(value, parse_selector)?,
                "evr_kmax" => evr_kmax = parse_num(value)?,
                "horizon" => cfg.horizon = parse_num(value)?,
                "alpha" => cfg.alpha = parse_num(value)?,
                "seed" => cfg.seed = parse_num(value)?,
                "bootstrap" => cfg.bootstrap = parse_num(value)?,
                "clip_eps" => cfg.clip_eps = parse_num(value)?,
                "mfts_scaling" => {
                    cfg.mfts_scaling = match value {
                        "per-age" => MftsScaling::PerAge,
                        "scalar" => MftsScaling::Scalar,
                        other => return Err(format!("unknown scaling '{other}' (per-age or scalar)")),
                    }
                }
                "radix" => cfg.radix = parse_num(value)?,
                "first_year" => cfg.first_year = Some(parse_num(value)?),
                "last_year" => cfg.last_year = Some(parse_num(value)?),
                "train_start" => cfg.train_start = Some(parse_num(value)?),
                "first_test_year" => cfg.first_test_year = Some(parse_num(value)?),
                "eta" | "etas" => cfg.etas = parse_list(value, parse_num::<f64>)?,
                "annuity_method" => cfg.annuity_method = value.parse()?,
                "annuity_horizon" => cfg.annuity_horizon = parse_num(value)?,
                other => return Err(format!("unknown key '{other}'")),
            }
            Ok(())
        })();
        result.map_err(err)?;
    }
    for s in cfg.selectors.iter_mut() {
        if let ComponentSelector::Evr { kmax } = s {
            *kmax = evr_kmax;
        }
    }
    validate_config(&cfg).map_err(|msg| CliError::Config { path: source.to_string(), msg })?;
    Ok(cfg)
}

fn validate_config(cfg: &RunConfig) -> std::result::Result<(), String> {
    if cfg.female.is_none() && cfg.male.is_none() {
        return Err("at least one of 'female' and 'male' must be set".into());
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(format!("alpha {} not in (0, 1)", cfg.alpha));
    }
    if cfg.horizon == 0 || cfg.annuity_horizon == 0 {
        return Err("horizons must be at least 1".into());
    }
    if cfg.etas.iter().any(|e| !(*e >= 0.0)) {
        return Err("interest rates must be non-negative".into());
    }
    for p in [&cfg.female, &cfg.male].into_iter().flatten() {
        if !p.is_file() {
            return Err(format!("data file {} does not exist", p.display()));
        }
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base, &path.display().to_string())
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = load_config(&self.config)?;
        if let Some(m) = self.method {
            cfg.methods = vec![m];
            cfg.annuity_method = m;
        }
        if let Some(k) = self.k {
            cfg.selectors = vec![ComponentSelector::Fixed(k)];
        }
        if self.evr {
            let kmax = cfg
                .selectors
                .iter()
                .find_map(|s| match s {
                    ComponentSelector::Evr { kmax } => Some(*kmax),
                    _ => None,
                })
                .unwrap_or(DEFAULT_EVR_KMAX);
            cfg.selectors = vec![ComponentSelector::Evr { kmax }];
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.eta {
            cfg.etas = vec![e];
        }
        validate_config(&cfg).map_err(|msg| CliError::Config {
            path: self.config.display().to_string(),
            msg,
        })?;
        Ok(cfg)
    }
}

fn load_data(cfg: &RunConfig) -> Result<Vec<LifeTableSeries>> {
    let mut out = Vec::new();
    for (sex, path) in [(Sex::Female, &cfg.female), (Sex::Male, &cfg.male)] {
        if let Some(path) = path {
            let mut lt = read_hmd(path, sex, cfg.radix)?;
            if cfg.first_year.is_some() || cfg.last_year.is_some() {
                lt = lt.slice_years(cfg.first_year.unwrap_or(i32::MIN), cfg.last_year.unwrap_or(i32::MAX))?;
            }
            out.push(lt);
        }
    }
    Ok(out)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io {
        path: dir.display().to_string(),
        msg: e.to_string(),
    })
}

fn pipeline_config(cfg: &RunConfig, selector: ComponentSelector, horizon: usize) -> PipelineConfig {
    PipelineConfig {
        selector,
        horizon,
        alpha: cfg.alpha,
        bootstrap: cfg.bootstrap,
        seed: cfg.seed,
        clip_eps: cfg.clip_eps,
        mfts_scaling: cfg.mfts_scaling,
    }
}

/// Runs a method on the series it applies to (joint methods need both sexes).
fn run_method(method: Method, data: &[LifeTableSeries], pc: &PipelineConfig) -> Result<Option<ForecastRun>> {
    let joint = matches!(method, Method::CdfMfts | Method::CdfMlfts);
    if joint && data.len() < 2 {
        return Ok(None);
    }
    Ok(Some(forecast(method, data, pc)?))
}

pub const DESCRIBE_HEADER: &str = "sex,year,e0,gini_equality,modal_age";
pub const FORECAST_HEADER: &str = "method,sex,horizon,age,point,lower,upper";

pub fn cmd_describe(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    ensure_dir(&cfg.output)?;
    let mut summary = String::from(DESCRIBE_HEADER);
    summary.push('\n');
    for lt in &data {
        let density = normalize_to_density(lt)?;
        for (t, year) in density.years.iter().enumerate() {
            let row = density.row(t);
            let _ = writeln!(
                summary,
                "{},{},{},{},{}",
                lt.sex,
                year,
                life_expectancy(&row, &density.ages)?,
                gini_equality_index(&row, &density.ages)?,
                modal_age(&row, &density.ages)
            );
        }
        write(
            &cfg.output,
            &format!("density_{}.csv", lt.sex),
            &panel_to_csv(&density.years, &density.ages, &density.d),
        )?;
    }
    write(&cfg.output, "describe.csv", &summary)
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    method: Method,
    selector: ComponentSelector,
    components: &'a [ComponentSummary],
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a RunConfig,
    seed: u64,
    runs: Vec<ManifestEntry<'a>>,
}

pub fn cmd_forecast(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    ensure_dir(&cfg.output)?;
    let selector = cfg.selectors[0];
    let pc = pipeline_config(cfg, selector, cfg.horizon);
    let mut runs = Vec::new();
    for &method in &cfg.methods {
        if let Some(run) = run_method(method, &data, &pc)? {
            runs.push(run);
        }
    }
    let mut csv = String::from(FORECAST_HEADER);
    csv.push('\n');
    for run in &runs {
        for res in &run.results {
            for h in 1..=res.horizon() {
                for (x, age) in res.ages.iter().enumerate() {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{},{}",
                        res.method,
                        res.sex,
                        h,
                        age,
                        res.point[(h - 1, x)],
                        res.lower[(h - 1, x)],
                        res.upper[(h - 1, x)]
                    );
                }
            }
        }
    }
    write(&cfg.output, "forecast.csv", &csv)?;
    let manifest = Manifest {
        config: cfg,
        seed: cfg.seed,
        runs: runs
            .iter()
            .map(|r| ManifestEntry {
                method: r.method,
                selector,
                components: &r.components,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Json(e.to_string()))?;
    write(&cfg.output, "manifest.json", &(json + "\n"))
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    ensure_dir(&cfg.output)?;
    let first = data.iter().map(|lt| lt.years[0]).max().unwrap();
    let last = data.iter().map(|lt| *lt.years.last().unwrap()).min().unwrap();
    let train_start = cfg.train_start.unwrap_or(first);
    let first_test = cfg.first_test_year.unwrap_or(last - cfg.horizon as i32 + 1);
    let plan = WindowPlan::new(train_start, first_test, last, cfg.horizon)?;
    let mut variants = Vec::new();
    for &selector in &cfg.selectors {
        for &method in &cfg.methods {
            let joint = matches!(method, Method::CdfMfts | Method::CdfMlfts);
            if !joint || data.len() >= 2 {
                variants.push(Variant { method, selector });
            }
        }
    }
    let base = pipeline_config(cfg, cfg.selectors[0], cfg.horizon);
    let report = run_expanding_window(&data, &variants, &plan, &base)?;
    write(&cfg.output, "metrics.csv", &report.to_csv())?;
    write(&cfg.output, "tables.txt", &report.render_tables())
}

pub fn cmd_annuity(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    ensure_dir(&cfg.output)?;
    let pc = pipeline_config(cfg, cfg.selectors[0], cfg.annuity_horizon);
    let run = run_method(cfg.annuity_method, &data, &pc)?.ok_or_else(|| CliError::Config {
        path: "annuity_method".into(),
        msg: format!("{} needs both female and male data", cfg.annuity_method),
    })?;
    let mut cells = Vec::new();
    for res in &run.results {
        let tables = forecast_tables(res, cfg.radix)?;
        cells.extend(price_grid(&tables, &cfg.etas)?);
    }
    write(&cfg.output, "annuity.csv", &annuity::grid_to_csv(&cells))?;
    write(&cfg.output, "annuity.txt", &annuity::render_grid(&cells))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    ensure_dir(&args.output)?;
    let mut conf = String::from("# synthetic Gompertz-Makeham life tables\n");
    for (i, sex) in [Sex::Female, Sex::Male].into_iter().enumerate() {
        let lt = GompertzSpec::preset(sex, args.first_year, args.years, args.seed.wrapping_add(i as u64)).generate();
        let name = format!("{sex}.txt");
        write(&args.output, &name, &to_hmd_text(&lt))?;
        let _ = writeln!(conf, "{sex} = {name}");
    }
    conf.push_str("output = out\nhorizon = 16\nalpha = 0.2\nseed = 1\nbootstrap = 1000\nselectors = 6\neta = 0.0025, 0.03\n");
    write(&args.output, "mortcast.conf", &conf)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Describe(a) => cmd_describe(&a.resolve()?),
        Command::Forecast(a) => cmd_forecast(&a.resolve()?),
        Command::Evaluate(a) => cmd_evaluate(&a.resolve()?),
        Command::Annuity(a) => cmd_annuity(&a.resolve()?),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// One parsed row of `forecast.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRow {
    pub method: Method,
    pub sex: Sex,
    pub horizon: usize,
    pub age: u32,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

fn csv_records<'a>(text: &'a str, header: &str, fields: usize) -> std::result::Result<Vec<Vec<&'a str>>, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(header) {
        return Err(format!("expected header '{header}'"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() == fields {
                Ok(f)
            } else {
                Err(format!("line {}: expected {fields} fields", i + 2))
            }
        })
        .collect()
}

pub fn parse_forecast_csv(text: &str) -> std::result::Result<Vec<ForecastRow>, String> {
    csv_records(text, FORECAST_HEADER, 7)?
        .into_iter()
        .map(|f| {
            Ok(ForecastRow {
                method: f[0].parse()?,
                sex: f[1].parse()?,
                horizon: parse_num(f[2])?,
                age: parse_num(f[3])?,
                point: parse_num(f[4])?,
                lower: parse_num(f[5])?,
                upper: parse_num(f[6])?,
            })
        })
        .collect()
}

/// One parsed row of `describe.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescribeRow {
    pub sex: Sex,
    pub year: i32,
    pub e0: f64,
    pub gini_equality: f64,
    pub modal_age: u32,
}

pub fn parse_describe_csv(text: &str) -> std::result::Result<Vec<DescribeRow>, String> {
    csv_records(text, DESCRIBE_HEADER, 5)?
        .into_iter()
        .map(|f| {
            Ok(DescribeRow {
                sex: f[0].parse()?,
                year: parse_num(f[1])?,
                e0: parse_num(f[2])?,
                gini_equality: parse_num(f[3])?,
                modal_age: parse_num(f[4])?,
            })
        })
        .collect()
}

/// Groups the forecast rows by (method, sex) into horizon-by-age point matrices.
pub fn forecast_points(rows: &[ForecastRow]) -> BTreeMap<(Method, Sex), Vec<Vec<f64>>> {
    let mut out: BTreeMap<(Method, Sex), Vec<Vec<f64>>> = BTreeMap::new();
    for r in rows {
        let m = out.entry((r.method, r.sex)).or_default();
        if m.len() < r.horizon {
            m.resize(r.horizon, Vec::new());
        }
        m[r.horizon - 1].push(r.point);
    }
    out
}

pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
