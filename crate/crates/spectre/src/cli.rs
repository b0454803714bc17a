//! Command-line front end: TOML configuration with flag overrides, complex
//! matrix text I/O, CSV report output and the experiment subcommands.
//!
//! Exit codes: `0` success, `1` runtime failure (partial results are flushed
//! with a `.partial` suffix), `2` configuration or input error.

use crate::equilibrium::EquilibriumContext;
use crate::inference::{self, DetectionConfig};
use crate::montecarlo::{
    self, Constellation, ExperimentReport, MonteCarloError, Scenario,
};
use crate::spectral_model::ArmaSpec;
use faer::Mat;
use num_complex::Complex64;
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or input file: exit code 2.
    Config(String),
    /// Failure while producing results: exit code 1.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<MonteCarloError> for CliError {
    fn from(e: MonteCarloError) -> Self {
        match e {
            MonteCarloError::InvalidScenario(_) | MonteCarloError::Noise(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Edge,
    Detect,
    Powers,
    Music,
    FigDetection,
    FigRoc,
    FigPower,
    FigMusicMse,
    FigResolution,
    FigFluct,
}

impl Command {
    fn parse(s: &str) -> Option<Command> {
        Some(match s {
            "edge" => Command::Edge,
            "detect" => Command::Detect,
            "powers" => Command::Powers,
            "music" => Command::Music,
            "fig-detection" => Command::FigDetection,
            "fig-roc" => Command::FigRoc,
            "fig-power" => Command::FigPower,
            "fig-music-mse" => Command::FigMusicMse,
            "fig-resolution" => Command::FigResolution,
            "fig-fluct" => Command::FigFluct,
            _ => return None,
        })
    }
}

const USAGE: &str = "\
usage: spectre <command> [--config <path>] [--seed <u64>] [--trials <n>]
               [--out <dir>] [--<section>.<key> <value>]...

commands:
  edge            print the bulk edge, m_b and the detectability threshold
  detect          analyze a stored observation matrix (count, powers, angles)
  powers          power estimates for a stored observation matrix
  music           localization scan for a stored observation matrix
  fig-detection   detection rates versus array size (with MDL/AIC baselines)
  fig-roc         ROC curves parameterized by the gap threshold
  fig-power       power-estimate NMSE versus SNR with theory overlay
  fig-music-mse   localization-function MSE versus SNR
  fig-resolution  two-source resolution probability versus SNR
  fig-fluct       spike fluctuation variances versus their predictions

common overrides: --c <ratio>, --snr-db <dB>, --noise.ar <a1,a2,...>,
  --scenario.n <N>, --detection.epsilon <eps>, --io.input <file>
";

// ---------------------------------------------------------------------------
// configuration schema

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    command: Option<String>,
    seed: Option<u64>,
    trials: Option<usize>,
    grid_step_deg: Option<f64>,
    scenario: Option<ScenarioSection>,
    noise: Option<NoiseSection>,
    detection: Option<DetectionSection>,
    io: Option<IoSection>,
    sweep: Option<SweepSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSection {
    n: Option<usize>,
    t: Option<usize>,
    /// Dimension ratio `N/T`; alternative to `t`.
    c: Option<f64>,
    k: Option<usize>,
    thetas_deg: Option<Vec<f64>>,
    snr_db: Option<Vec<f64>>,
    amplitudes: Option<Vec<f64>>,
    constellation: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSection {
    /// Autoregressive coefficients in regression form: `ar = [0.6]` gives
    /// lag-one correlation 0.6.
    ar: Option<Vec<f64>>,
    ma: Option<Vec<f64>>,
    unit_variance: Option<bool>,
    quad_points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionSection {
    l: Option<usize>,
    epsilon: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct IoSection {
    input: Option<String>,
    output: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    n: Option<Vec<usize>>,
    snr_db: Option<Vec<f64>>,
    epsilon: Option<Vec<f64>>,
    window_deg: Option<Vec<f64>>,
}

/// Fully resolved run configuration.
#[derive(Debug)]
pub struct RunConfig {
    pub command: Command,
    pub scenario: Scenario,
    /// Dimension ratio used by ratio-only commands such as `edge`.
    pub ratio: f64,
    pub seed: u64,
    pub trials: usize,
    pub grid_step_deg: f64,
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub sweep_n: Vec<usize>,
    pub sweep_snr_db: Vec<f64>,
    pub sweep_epsilon: Vec<f64>,
    pub window_deg: (f64, f64),
}

struct Defaults {
    n: usize,
    c: f64,
    k: usize,
    thetas_deg: Vec<f64>,
    snr_db: f64,
    amplitudes: Option<Vec<f64>>,
    constellation: Constellation,
    ar: Vec<f64>,
    trials: usize,
}

fn command_defaults(command: Command) -> Defaults {
    let base = Defaults {
        n: 20,
        c: 0.5,
        k: 1,
        thetas_deg: vec![10.0],
        snr_db: 10.0,
        amplitudes: None,
        constellation: Constellation::Qpsk,
        ar: vec![0.6],
        trials: 10_000,
    };
    match command {
        Command::Edge | Command::Detect | Command::Powers | Command::Music => Defaults {
            ar: Vec::new(),
            ..base
        },
        Command::FigDetection | Command::FigPower => base,
        Command::FigRoc => Defaults {
            snr_db: 2.0,
            ar: vec![0.2],
            ..base
        },
        Command::FigMusicMse => Defaults { c: 0.2, ..base },
        Command::FigResolution => Defaults {
            c: 0.2,
            k: 2,
            thetas_deg: vec![10.0, 12.0],
            snr_db: 16.0,
            trials: 5_000,
            ..base
        },
        // unit-power noise, source power fixed at 3 sqrt(c)
        Command::FigFluct => Defaults {
            n: 200,
            ar: Vec::new(),
            constellation: Constellation::ComplexGaussian,
            amplitudes: Some(vec![(3.0 * 0.5f64.sqrt()).sqrt()]),
            trials: 2_000,
            ..base
        },
    }
}

fn default_sweep(command: Command, cfg: &RunConfig) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    match command {
        Command::FigDetection => ((12..=30).collect(), Vec::new(), Vec::new()),
        Command::FigRoc => {
            // geometric epsilon grid
            let pts = 80;
            let (lo, hi) = (0.01f64, 4.0f64);
            let eps = (0..pts)
                .map(|i| lo * (hi / lo).powf(i as f64 / (pts - 1) as f64))
                .collect();
            (Vec::new(), Vec::new(), eps)
        }
        Command::FigPower => (
            Vec::new(),
            (0..=24).map(|i| i as f64 * 0.5).collect(),
            Vec::new(),
        ),
        Command::FigMusicMse => (Vec::new(), (0..=12).map(|i| i as f64).collect(), Vec::new()),
        Command::FigResolution => (
            Vec::new(),
            (10..=22).map(|i| i as f64).collect(),
            Vec::new(),
        ),
        _ => (
            Vec::new(),
            vec![cfg.scenario.amplitudes.first().map_or(10.0, |a| 20.0 * a.log10())],
            Vec::new(),
        ),
    }
}

// ---------------------------------------------------------------------------
// flag parsing and override application

fn parse_flag_value(key: &str, raw: &str) -> Result<toml::Value, CliError> {
    const ARRAY_KEYS: &[&str] = &[
        "scenario.thetas_deg",
        "scenario.snr_db",
        "scenario.amplitudes",
        "noise.ar",
        "noise.ma",
        "sweep.n",
        "sweep.snr_db",
        "sweep.epsilon",
        "sweep.window_deg",
    ];
    let scalar = |s: &str| -> toml::Value {
        if let Ok(v) = s.parse::<i64>() {
            toml::Value::Integer(v)
        } else if let Ok(v) = s.parse::<f64>() {
            toml::Value::Float(v)
        } else if let Ok(v) = s.parse::<bool>() {
            toml::Value::Boolean(v)
        } else {
            toml::Value::String(s.to_string())
        }
    };
    if ARRAY_KEYS.contains(&key) {
        let items: Result<Vec<toml::Value>, CliError> = raw
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                if key == "sweep.n" {
                    tok.parse::<i64>()
                        .map(toml::Value::Integer)
                        .map_err(|_| CliError::Config(format!("--{key}: bad integer `{tok}`")))
                } else {
                    tok.parse::<f64>()
                        .map(toml::Value::Float)
                        .map_err(|_| CliError::Config(format!("--{key}: bad number `{tok}`")))
                }
            })
            .collect();
        Ok(toml::Value::Array(items?))
    } else {
        Ok(scalar(raw))
    }
}

fn apply_override(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    match parts.as_slice() {
        [k] => {
            table.insert((*k).to_string(), value);
        }
        [section, k] => {
            let entry = table
                .entry((*section).to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match entry.as_table_mut() {
                Some(t) => {
                    t.insert((*k).to_string(), value);
                }
                None => {
                    return Err(CliError::Config(format!(
                        "`{section}` is not a section in the config file"
                    )))
                }
            }
        }
        _ => {
            return Err(CliError::Config(format!(
                "override key `{key}` has too many components"
            )))
        }
    }
    Ok(())
}

/// Parses the command line and config file into a resolved [`RunConfig`].
/// Flag overrides win over file values, which win over per-command defaults.
pub fn parse_config(args: &[String]) -> Result<RunConfig, CliError> {
    let mut command: Option<Command> = None;
    let mut config_path: Option<PathBuf> = None;
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut it = args.iter().peekable();
    while let Some(arg) = it.next() {
        if let Some(flag) = arg.strip_prefix("--") {
            let key = flag.replace('-', "_");
            let key = match key.as_str() {
                "config" => {
                    let v = it
                        .next()
                        .ok_or_else(|| CliError::Config("--config needs a path".into()))?;
                    config_path = Some(PathBuf::from(v));
                    continue;
                }
                // aliases
                "out" => "io.output".to_string(),
                "c" => "scenario.c".to_string(),
                "snr_db" => "scenario.snr_db".to_string(),
                other => other.to_string(),
            };
            let value = it
                .next()
                .ok_or_else(|| CliError::Config(format!("--{flag} needs a value")))?;
            overrides.push((key, value.clone()));
        } else if command.is_none() {
            command = Some(
                Command::parse(arg)
                    .ok_or_else(|| CliError::Config(format!("unknown command `{arg}`\n{USAGE}")))?,
            );
        } else {
            return Err(CliError::Config(format!("unexpected argument `{arg}`")));
        }
    }

    let mut table: toml::Table = match &config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            text.parse()
                .map_err(|e| CliError::Config(format!("malformed config: {e}")))?
        }
        None => toml::Table::new(),
    };
    for (key, raw) in overrides {
        let value = parse_flag_value(&key, &raw)?;
        apply_override(&mut table, &key, value)?;
    }
    let file: FileConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;

    let command = match (command, &file.command) {
        (Some(c), _) => c,
        (None, Some(s)) => Command::parse(s)
            .ok_or_else(|| CliError::Config(format!("unknown command `{s}` in config")))?,
        (None, None) => return Err(CliError::Config(format!("no command given\n{USAGE}"))),
    };
    resolve(command, file)
}

fn resolve(command: Command, file: FileConfig) -> Result<RunConfig, CliError> {
    let d = command_defaults(command);
    let sc = file.scenario.unwrap_or_default();
    let noise_sec = file.noise.unwrap_or_default();
    let det = file.detection.unwrap_or_default();
    let io = file.io.unwrap_or_default();
    let sweep = file.sweep.unwrap_or_default();

    let n = sc.n.unwrap_or(d.n);
    let ratio_requested = sc.c;
    let t = match (sc.t, ratio_requested) {
        (Some(t), _) => t,
        (None, Some(c)) => {
            let valid = c.is_finite() && c > 0.0;
            if !valid {
                return Err(CliError::Config(format!("ratio c must be positive, got {c}")));
            }
            (n as f64 / c).round().max(1.0) as usize
        }
        (None, None) => (n as f64 / d.c).round() as usize,
    };
    let k = sc.k.unwrap_or(d.k);
    let thetas_deg = sc.thetas_deg.unwrap_or_else(|| {
        if k == d.k {
            d.thetas_deg.clone()
        } else {
            // spread defaults when k differs from the command default
            (0..k).map(|i| 10.0 + 2.0 * i as f64).collect()
        }
    });
    let broadcast = |v: Vec<f64>, what: &str| -> Result<Vec<f64>, CliError> {
        if v.len() == k {
            Ok(v)
        } else if v.len() == 1 {
            Ok(vec![v[0]; k])
        } else {
            Err(CliError::Config(format!(
                "{what} has {} entries for k = {k}",
                v.len()
            )))
        }
    };
    let amplitudes = match (sc.amplitudes, sc.snr_db) {
        (Some(a), _) => broadcast(a, "scenario.amplitudes")?,
        (None, Some(snr)) => broadcast(snr, "scenario.snr_db")?
            .into_iter()
            .map(|s| 10f64.powf(s / 20.0))
            .collect(),
        (None, None) => match &d.amplitudes {
            Some(a) => a.clone(),
            None => vec![10f64.powf(d.snr_db / 20.0); k],
        },
    };
    let constellation = match sc
        .constellation
        .as_deref()
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        None => d.constellation,
        Some("qpsk") => Constellation::Qpsk,
        Some("gaussian") | Some("complex-gaussian") => Constellation::ComplexGaussian,
        Some(other) => {
            return Err(CliError::Config(format!(
                "unknown constellation `{other}` (expected qpsk or gaussian)"
            )))
        }
    };
    let ar_user = noise_sec.ar.unwrap_or(d.ar);
    let ma = noise_sec.ma.unwrap_or_default();
    // config-level AR coefficients are in regression form; the transfer
    // function denominator wants them negated
    let ar_poly: Vec<f64> = ar_user.iter().map(|a| -a).collect();
    let noise = ArmaSpec::with_options(
        ma,
        ar_poly,
        noise_sec.unit_variance.unwrap_or(true),
        1 << 20,
        noise_sec.quad_points.unwrap_or(2048),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let detection = DetectionConfig::new(det.l.unwrap_or(5), det.epsilon.unwrap_or(0.75))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let scenario = Scenario {
        n,
        t,
        k,
        thetas_deg,
        amplitudes,
        constellation,
        noise,
        detection,
    };
    scenario
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let window = sweep.window_deg.unwrap_or_else(|| vec![5.0, 17.0]);
    if window.len() != 2 || window[0] >= window[1] {
        return Err(CliError::Config(
            "sweep.window_deg must be [low, high] with low < high".into(),
        ));
    }
    let mut cfg = RunConfig {
        command,
        ratio: ratio_requested.unwrap_or(n as f64 / t as f64),
        scenario,
        seed: file.seed.unwrap_or(42),
        trials: file.trials.unwrap_or(d.trials),
        grid_step_deg: file.grid_step_deg.unwrap_or(0.05),
        input: io.input.map(PathBuf::from),
        out_dir: PathBuf::from(io.output.unwrap_or_else(|| "results".into())),
        sweep_n: Vec::new(),
        sweep_snr_db: Vec::new(),
        sweep_epsilon: Vec::new(),
        window_deg: (window[0], window[1]),
    };
    let (dn, dsnr, deps) = default_sweep(command, &cfg);
    cfg.sweep_n = sweep.n.unwrap_or(dn);
    cfg.sweep_snr_db = sweep.snr_db.unwrap_or(dsnr);
    cfg.sweep_epsilon = sweep.epsilon.unwrap_or(deps);
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// matrix file format: comma-separated `a+bi` entries, one row per line

fn parse_complex(token: &str) -> Option<Complex64> {
    let s = token.trim();
    let body = s.strip_suffix('i').or_else(|| s.strip_suffix('I'))?;
    // split at the last sign that is not an exponent sign and not leading
    let bytes = body.as_bytes();
    let mut split = None;
    for i in (1..bytes.len()).rev() {
        let c = bytes[i];
        if (c == b'+' || c == b'-') && !matches!(bytes[i - 1], b'e' | b'E') {
            split = Some(i);
            break;
        }
    }
    let i = split?;
    let re: f64 = body[..i].trim().parse().ok()?;
    let im: f64 = body[i..].trim().parse().ok()?;
    Some(Complex64::new(re, im))
}

fn format_complex(z: Complex64) -> String {
    format!("{:.16e}{:+.16e}i", z.re, z.im)
}

/// Reads an `N x T` complex matrix from the text format.
pub fn read_matrix(path: &Path) -> Result<Mat<Complex64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    for (r, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (c, token) in line.split(',').enumerate() {
            match parse_complex(token) {
                Some(z) => row.push(z),
                None => {
                    return Err(CliError::Config(format!(
                        "{}: bad complex entry at row {}, column {}: `{}`",
                        path.display(),
                        r + 1,
                        c + 1,
                        token.trim()
                    )))
                }
            }
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(CliError::Config(format!(
                    "{}: row {} has {} entries, expected {}",
                    path.display(),
                    r + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Config(format!(
            "{}: empty matrix file",
            path.display()
        )));
    }
    Ok(Mat::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]))
}

/// Writes a complex matrix in the text format (17 significant digits, so a
/// read-back reproduces every entry bit-exactly).
pub fn write_matrix(m: faer::MatRef<'_, Complex64>, path: &Path) -> Result<(), CliError> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_complex(m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// CSV reports

fn format_float(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

/// Writes one CSV per curve into `dir`, returning the written paths.
/// `suffix` is appended to the file names (used for partial flushes).
pub fn write_report(
    report: &ExperimentReport,
    dir: &Path,
    suffix: &str,
) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let mut written = Vec::new();
    for curve in &report.curves {
        let has_theory = curve.points.iter().any(|p| p.theory.is_some());
        let mut text = String::new();
        text.push_str("sweep,metric,ci_low,ci_high,n_trials");
        if has_theory {
            text.push_str(",theory");
        }
        text.push('\n');
        for p in &curve.points {
            let _ = write!(
                text,
                "{},{},{},{},{}",
                format_float(p.sweep),
                format_float(p.value),
                format_float(p.ci_low),
                format_float(p.ci_high),
                p.n_trials
            );
            if has_theory {
                text.push(',');
                if let Some(th) = p.theory {
                    text.push_str(&format_float(th));
                }
            }
            text.push('\n');
        }
        let path = dir.join(format!("{}_{}.csv{}", report.name, curve.label, suffix));
        std::fs::write(&path, text)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// command handlers

fn cmd_edge(cfg: &RunConfig) -> Result<(), CliError> {
    let ctx = EquilibriumContext::from_noise(&cfg.scenario.noise, cfg.ratio)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let edge = ctx.edge().map_err(|e| CliError::Runtime(e.to_string()))?;
    let p_lim = ctx
        .detectability_threshold()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("c = {}", cfg.ratio);
    println!("b = {:.10}", edge.b);
    println!("m_b = {:.10}", edge.m_b);
    println!("p_lim = {:.10}", p_lim);
    for (i, p) in cfg.scenario.powers().iter().enumerate() {
        match ctx.spike_location(*p) {
            Ok(rho) => println!("rho_{} = {:.10}  (p = {:.6})", i + 1, rho, p),
            Err(_) => println!("rho_{} = subcritical  (p = {:.6} <= p_lim)", i + 1, p),
        }
    }
    Ok(())
}

fn load_eigs(cfg: &RunConfig) -> Result<(inference::EigenDecomp, f64), CliError> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs io.input (or --io.input)".into()))?;
    let y = read_matrix(input)?;
    let (n, t) = (y.nrows(), y.ncols());
    if n > t {
        eprintln!("warning: matrix has more rows ({n}) than snapshots ({t})");
    }
    let eigs = inference::sample_gram_eigs(y.as_ref())
        .map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
    Ok((eigs, n as f64 / t as f64))
}

fn cmd_detect(cfg: &RunConfig, with_music: bool) -> Result<(), CliError> {
    let (eigs, c_t) = load_eigs(cfg)?;
    let grid = inference::angle_grid_deg(-90.0, 90.0, cfg.grid_step_deg);
    let outcome =
        montecarlo::analyze_observation(&eigs, &cfg.scenario.detection, c_t, &grid, &[])
            .map_err(CliError::from)?;
    println!("k_hat = {}", outcome.k_hat);
    let ratios: Vec<String> = outcome
        .top_eigenvalues
        .windows(2)
        .map(|w| format!("{:.4}", w[0] / w[1]))
        .collect();
    println!("eigenvalue ratios = [{}]", ratios.join(", "));
    for (i, p) in outcome.p_hats.iter().enumerate() {
        let tag = if p.reliable { "" } else { "  (unreliable)" };
        println!("p_hat_{} = {:.6}{tag}", i + 1, p.value);
    }
    if with_music {
        for (i, th) in outcome.theta_hats_deg.iter().enumerate() {
            println!("theta_hat_{} = {:.4} deg", i + 1, th);
        }
    }
    Ok(())
}

fn cmd_music(cfg: &RunConfig) -> Result<(), CliError> {
    let (eigs, c_t) = load_eigs(cfg)?;
    let det = inference::detect_sources(&eigs, &cfg.scenario.detection)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if det.k_hat == 0 {
        println!("k_hat = 0 (no isolated eigenvalue; nothing to localize)");
        return Ok(());
    }
    let grid = inference::angle_grid_deg(-90.0, 90.0, cfg.grid_step_deg);
    let scan = inference::music_scan(&eigs, det.k_hat, c_t, &grid)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    let path = cfg.out_dir.join("music_scan.csv");
    let mut text = String::from("theta_deg,gamma\n");
    for (theta, gamma) in scan.theta_grid.iter().zip(&scan.gamma) {
        let _ = writeln!(text, "{},{}", format_float(theta.to_degrees()), format_float(*gamma));
    }
    std::fs::write(&path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    println!("k_hat = {}", det.k_hat);
    for (i, angle) in scan.angle_estimates(det.k_hat).iter().enumerate() {
        println!("theta_hat_{} = {:.4} deg", i + 1, angle.to_degrees());
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn run_figure(cfg: &RunConfig) -> Result<(), CliError> {
    let sc = &cfg.scenario;
    let result = match cfg.command {
        Command::FigDetection => {
            montecarlo::run_detection_experiment(sc, &cfg.sweep_n, cfg.trials, cfg.seed)
        }
        Command::FigRoc => {
            montecarlo::run_roc_experiment(sc, &cfg.sweep_epsilon, cfg.trials, cfg.seed)
        }
        Command::FigPower => {
            montecarlo::run_power_nmse_experiment(sc, &cfg.sweep_snr_db, cfg.trials, cfg.seed)
        }
        Command::FigMusicMse => {
            montecarlo::run_music_mse_experiment(sc, &cfg.sweep_snr_db, cfg.trials, cfg.seed)
        }
        Command::FigResolution => montecarlo::run_resolution_experiment(
            sc,
            &cfg.sweep_snr_db,
            cfg.trials,
            cfg.seed,
            cfg.window_deg,
            cfg.grid_step_deg,
        ),
        Command::FigFluct => montecarlo::run_fluctuation_experiment(sc, cfg.trials, cfg.seed),
        _ => unreachable!("not a figure command"),
    };
    match result {
        Ok(report) => {
            let paths = write_report(&report, &cfg.out_dir, "")?;
            for p in paths {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Err(failure) => {
            let paths = write_report(&failure.partial, &cfg.out_dir, ".partial")?;
            for p in paths {
                eprintln!("flushed partial results to {}", p.display());
            }
            Err(CliError::Runtime(failure.error.to_string()))
        }
    }
}

/// Entry point used by the `spectre` binary.
pub fn run(args: Vec<String>) -> ExitCode {
    if let Ok(threads) = std::env::var("SPECTRE_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("configuration error: SPECTRE_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    let cfg = match parse_config(&args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let outcome = match cfg.command {
        Command::Edge => cmd_edge(&cfg),
        Command::Detect => cmd_detect(&cfg, true),
        Command::Powers => cmd_detect(&cfg, false),
        Command::Music => cmd_music(&cfg),
        _ => run_figure(&cfg),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e @ CliError::Runtime(_)) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
