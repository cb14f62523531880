//! Command-line frontend: `run`, `capacity` and `sweep`.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{link_set, ConfigError, ScenarioConfig};
use crate::mld::PolicyKind;
use crate::scenario::{run_seeds, RunError};
use crate::stats::{
    capacity_search, export_ccdf, summarize, write_capacity_csv, write_ccdf_csv, write_delays_csv, CapacityPoint,
    CapacityResult, DelayRecord, RunSummary,
};
use crate::traffic::StreamKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mlosim", version, about = "Multi-link Wi-Fi simulator for AR traffic")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration over all seeds.
    Run(CommonArgs),
    /// Find the largest station count meeting every delay budget.
    Capacity(CommonArgs),
    /// Run a policy x link set x station count matrix.
    Sweep(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario file (TOML). Omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "MLOSIM_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Seed list, e.g. `1,2,3` or `1..10`; overrides the config.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value = "info")]
    pub log_level: log::LevelFilter,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(RunError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => CliError::Config(c),
            other => CliError::Run(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(_) | CliError::Io { .. } => EXIT_INTERNAL,
        }
    }
}

/// Parses `1,2,5..7` into `[1, 2, 5, 6, 7]`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range '{part}'"))?;
            let b: u64 = b
                .trim()
                .trim_start_matches('=')
                .parse()
                .map_err(|_| format!("bad seed range '{part}'"))?;
            if b < a {
                return Err(format!("empty seed range '{part}'"));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| format!("bad seed '{part}'"))?);
        }
    }
    if out.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(out)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let io_err = |source| CliError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io_err)?;
    f.write_all(contents).map_err(io_err)?;
    f.sync_all().map_err(io_err)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err)
}

fn write_with<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_atomic(path, &buf)
}

fn to_toml<T: Serialize>(v: &T) -> String {
    toml::to_string(v).expect("output tables serialize")
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_path: Option<String>,
    output_dir: String,
    version: &'a str,
    runtime_s: f64,
    config: &'a ScenarioConfig,
}

fn write_manifest(
    out: &Path,
    command: &str,
    args: &CommonArgs,
    cfg: &ScenarioConfig,
    started: Instant,
) -> Result<(), CliError> {
    let m = Manifest {
        command,
        config_path: args.config.as_ref().map(|p| p.display().to_string()),
        output_dir: out.display().to_string(),
        version: env!("CARGO_PKG_VERSION"),
        runtime_s: started.elapsed().as_secs_f64(),
        config: cfg,
    };
    write_atomic(&out.join("manifest.toml"), to_toml(&m).as_bytes())
}

fn read_config_text(args: &CommonArgs) -> Result<String, CliError> {
    match &args.config {
        None => Ok(String::new()),
        Some(p) => fs::read_to_string(p).map_err(|source| {
            CliError::Config(ConfigError::Io {
                path: p.display().to_string(),
                source,
            })
        }),
    }
}

fn apply_seed_flag(cfg: &mut ScenarioConfig, args: &CommonArgs) -> Result<(), CliError> {
    if let Some(s) = &args.seeds {
        cfg.seeds = parse_seeds(s).map_err(CliError::Usage)?;
    }
    Ok(())
}

/// Writes the per-run artifacts (records, CCDFs, summary) into `dir`.
pub fn write_run_outputs(dir: &Path, cfg: &ScenarioConfig, records: &[DelayRecord]) -> Result<RunSummary, CliError> {
    write_with(&dir.join("delays.csv"), |b| write_delays_csv(b, records))?;
    for k in StreamKind::ALL {
        if cfg.traffic.get(k).enabled {
            let rows = export_ccdf(records, k);
            write_with(&dir.join(format!("ccdf_{k}.csv")), |b| write_ccdf_csv(b, &rows))?;
        }
    }
    let (_, summary) = summarize(cfg, records);
    write_atomic(&dir.join("summary.toml"), to_toml(&summary).as_bytes())?;
    Ok(summary)
}

pub fn cmd_run(args: &CommonArgs) -> Result<RunSummary, CliError> {
    let started = Instant::now();
    let mut cfg = ScenarioConfig::from_toml_str(&read_config_text(args)?)?;
    apply_seed_flag(&mut cfg, args)?;
    cfg.validate()?;
    let records = run_seeds(&cfg)?;
    let summary = write_run_outputs(&args.out, &cfg, &records)?;
    for s in &summary.streams {
        log::info!(
            "{}: worst p99 {} us (budget {} us) {}",
            s.stream,
            s.worst_p99_us,
            s.pdb_us,
            if s.pass { "pass" } else { "FAIL" }
        );
    }
    write_manifest(&args.out, "run", args, &cfg, started)?;
    Ok(summary)
}

/// Capacity search for one configuration.
pub fn capacity_for(cfg: &ScenarioConfig) -> Result<CapacityResult, CliError> {
    let res = capacity_search(
        cfg.policy.as_str(),
        &cfg.link_set_name(),
        cfg.capacity.max_sta,
        cfg.capacity.lookahead,
        |n| {
            let mut c = cfg.clone();
            c.n_sta = n;
            let records = run_seeds(&c)?;
            let (v, _) = summarize(&c, &records);
            log::info!(
                "{}/{} n={n}: {}",
                c.policy,
                c.link_set_name(),
                if v.pass() { "pass" } else { "fail" }
            );
            Ok::<_, CliError>(v)
        },
    )?;
    Ok(res)
}

#[derive(Debug, Serialize, Deserialize)]
struct CapacityFileOut {
    results: Vec<CapacityResult>,
}

pub fn cmd_capacity(args: &CommonArgs) -> Result<Vec<CapacityResult>, CliError> {
    let started = Instant::now();
    let mut cfg = ScenarioConfig::from_toml_str(&read_config_text(args)?)?;
    apply_seed_flag(&mut cfg, args)?;
    cfg.validate()?;
    let mut variants = vec![cfg.clone()];
    for v in &cfg.capacity.variants {
        let links = link_set(&v.link_set).expect("validated link set");
        let c = cfg.with_variant(v.policy, &links);
        c.validate()?;
        variants.push(c);
    }
    let results: Vec<CapacityResult> = variants.iter().map(capacity_for).collect::<Result<_, _>>()?;
    for r in &results {
        let dir = args.out.join("points").join(format!("{}_{}", r.policy, r.link_set));
        for p in &r.points {
            write_atomic(
                &dir.join(format!("n{:03}.toml", p.n_sta)),
                to_toml::<CapacityPoint>(p).as_bytes(),
            )?;
        }
        log::info!("{}/{}: max_sta = {}", r.policy, r.link_set, r.max_sta);
        for w in &r.warnings {
            log::warn!("{}/{}: {w}", r.policy, r.link_set);
        }
    }
    let file = CapacityFileOut { results };
    write_atomic(&args.out.join("capacity.toml"), to_toml(&file).as_bytes())?;
    write_with(&args.out.join("capacity.csv"), |b| write_capacity_csv(b, &file.results))?;
    write_manifest(&args.out, "capacity", args, &cfg, started)?;
    Ok(file.results)
}

/// The matrix of a sweep file's `[sweep]` table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepMatrix {
    pub policies: Vec<PolicyKind>,
    pub link_sets: Vec<String>,
    pub n_sta: Vec<u16>,
}

/// Splits a sweep file into its base scenario and its matrix.
pub fn parse_sweep(text: &str) -> Result<(ScenarioConfig, SweepMatrix), CliError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let sweep = table.remove("sweep").ok_or_else(|| ConfigError::Invalid {
        key: "sweep".into(),
        message: "a sweep file needs a [sweep] table".into(),
    })?;
    let matrix: SweepMatrix = sweep.try_into().map_err(|e: toml::de::Error| ConfigError::Invalid {
        key: "sweep".into(),
        message: e.to_string(),
    })?;
    for (i, s) in matrix.link_sets.iter().enumerate() {
        if link_set(s).is_none() {
            return Err(ConfigError::Invalid {
                key: format!("sweep.link_sets[{i}]"),
                message: format!("unknown link set '{s}'"),
            }
            .into());
        }
    }
    if matrix.n_sta.contains(&0) {
        return Err(ConfigError::Invalid {
            key: "sweep.n_sta".into(),
            message: "station counts must be >= 1".into(),
        }
        .into());
    }
    let base = ScenarioConfig::from_toml_str(&toml::to_string(&table).expect("re-serialize table"))?;
    Ok((base, matrix))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub policy: PolicyKind,
    pub link_set: String,
    pub n_sta: u16,
    /// Per-stream worst p99 or the failure message of the cell.
    pub outcome: Result<CapacityPoint, String>,
}

pub fn run_sweep(base: &ScenarioConfig, matrix: &SweepMatrix) -> Vec<SweepRow> {
    let mut cells = Vec::new();
    for &p in &matrix.policies {
        for s in &matrix.link_sets {
            for &n in &matrix.n_sta {
                cells.push((p, s.clone(), n));
            }
        }
    }
    cells
        .into_par_iter()
        .map(|(policy, set, n)| {
            let mut c = base.with_variant(policy, &link_set(&set).expect("validated"));
            c.n_sta = n;
            let outcome = c
                .validate()
                .map_err(|e| e.to_string())
                .and_then(|_| run_seeds(&c).map_err(|e| e.to_string()))
                .map(|records| CapacityPoint::from_verdict(n, &summarize(&c, &records).0));
            if let Err(e) = &outcome {
                log::warn!("sweep cell {policy}/{set}/n={n} failed: {e}");
            }
            SweepRow {
                policy,
                link_set: c.link_set_name(),
                n_sta: n,
                outcome,
            }
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(
        w,
        "policy,link_set,n_sta,status,pass,dl_video_p99_us,ul_video_p99_us,pose_p99_us"
    )?;
    for r in rows {
        match &r.outcome {
            Ok(p) => writeln!(
                w,
                "{},{},{},ok,{},{},{},{}",
                r.policy, r.link_set, r.n_sta, p.pass, p.dl_video_p99_us, p.ul_video_p99_us, p.pose_p99_us
            )?,
            Err(e) => writeln!(
                w,
                "{},{},{},\"error: {}\",,,,",
                r.policy,
                r.link_set,
                r.n_sta,
                e.replace('"', "'")
            )?,
        }
    }
    Ok(())
}

pub fn cmd_sweep(args: &CommonArgs) -> Result<Vec<SweepRow>, CliError> {
    let started = Instant::now();
    if args.config.is_none() {
        return Err(CliError::Usage("sweep requires --config with a [sweep] table".into()));
    }
    let (mut base, matrix) = parse_sweep(&read_config_text(args)?)?;
    apply_seed_flag(&mut base, args)?;
    let rows = run_sweep(&base, &matrix);
    write_with(&args.out.join("sweep.csv"), |b| write_sweep_csv(b, &rows))?;
    write_manifest(&args.out, "sweep", args, &base, started)?;
    Ok(rows)
}

fn init_logging(level: log::LevelFilter) {
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}

/// Entry point; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let args = match &cli.command {
        Command::Run(a) | Command::Capacity(a) | Command::Sweep(a) => a,
    };
    init_logging(args.log_level);
    let pool = match args.workers {
        Some(0) => {
            eprintln!("error: --workers must be >= 1");
            return EXIT_USAGE;
        }
        Some(w) => rayon::ThreadPoolBuilder::new().num_threads(w).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start workers: {e}");
            return EXIT_INTERNAL;
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Run(a) => cmd_run(a).map(|s| {
            if !s.pass {
                log::warn!("configuration does not meet every delay budget");
            }
        }),
        Command::Capacity(a) => cmd_capacity(a).map(drop),
        Command::Sweep(a) => cmd_sweep(a).map(drop),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1,2,3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seeds("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_seeds("5, 1..=2").unwrap(), vec![5, 1, 2]);
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("4..1").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn sweep_file_split() {
        let (base, m) = parse_sweep(
            "n_sta = 3\n[sweep]\npolicies = [\"greedy\", \"uniform\"]\nlink_sets = [\"2x40\"]\nn_sta = [2, 3]\n",
        )
        .unwrap();
        assert_eq!(base.n_sta, 3);
        assert_eq!(m.policies, vec![PolicyKind::Greedy, PolicyKind::Uniform]);
        assert!(parse_sweep("n_sta = 3").is_err());
        assert!(parse_sweep("[sweep]\npolicies = []\nlink_sets = [\"3x7\"]\nn_sta = [1]\n").is_err());
    }
}
