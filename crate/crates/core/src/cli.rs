//! The `mfamp` command-line front end.
//!
//! Every setting is a `key = value` pair. Defaults are overridden by a config
//! file (`--config path`, one pair per line, `#` comments), which is in turn
//! overridden by flags of the same name. Output files start with `#` metadata
//! lines that echo the full resolved configuration; feeding the `key = value`
//! lines back as a config file reproduces the data section exactly.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Command as ClapCommand};
use rayon::prelude::*;

use crate::amp::{run_amp, AmpOptions, AmpResult};
use crate::error::Error;
use crate::instance::{generate_instance, load_instance, save_instance};
use crate::params::{Eta, ModelParams};
use crate::potential::{mmse_with, phase_diagram_with, potential, Spinodal, SpinodalOptions, GRID_MIN};
use crate::state_evolution::{run_se, SeInit, SeOptions, SePoint};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_IO,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) | Error::InvalidSize(_) | Error::ShapeMismatch(_) => EXIT_USAGE,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Domain(_) | Error::OracleFailure(_) | Error::Consistency(_) | Error::Scan { .. } => EXIT_NUMERICAL,
        Error::File(_) => EXIT_IO,
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        CliError {
            code: exit_code(&err),
            message: err.to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Gen,
    Amp,
    Se,
    Potential,
    Phase,
}

impl Command {
    pub const ALL: [Command; 5] = [Command::Gen, Command::Amp, Command::Se, Command::Potential, Command::Phase];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Amp => "amp",
            Command::Se => "se",
            Command::Potential => "potential",
            Command::Phase => "phase",
        }
    }

    fn about(self) -> &'static str {
        match self {
            Command::Gen => "Generate a synthetic instance and write it in the MFAMP1 format",
            Command::Amp => "Run message passing on generated or loaded instances",
            Command::Se => "Run state evolution and report fixed points and the MMSE",
            Command::Potential => "Tabulate the replica potential on an (E, D) grid",
            Command::Phase => "Sweep rho and pi for thresholds and MMSE curves",
        }
    }

    fn schema(self) -> &'static str {
        match self {
            Command::Gen => "gen/1",
            Command::Amp => "amp/1",
            Command::Se => "se/1",
            Command::Potential => "potential/1",
            Command::Phase => "phase/1",
        }
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| CliError::usage(format!("unknown command {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridScale {
    Linear,
    Log,
}

/// Inclusive arithmetic grid `start:stop:step`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        // Rounding to 12 decimals removes the accumulated representation error.
        (0..count)
            .map(|k| ((self.start + k as f64 * self.step) * 1e12).round() / 1e12)
            .collect()
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", num(self.start), num(self.stop), num(self.step))
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("grid must be start:stop:step, got {s:?}"));
        }
        let mut v = [0.0; 3];
        for (slot, part) in v.iter_mut().zip(&parts) {
            *slot = parse_f64(part)?;
        }
        let g = Grid {
            start: v[0],
            stop: v[1],
            step: v[2],
        };
        if !(g.step > 0.0) || g.stop < g.start {
            return Err(format!("grid {s:?} needs step > 0 and stop >= start"));
        }
        if (g.stop - g.start) / g.step > 1e6 {
            return Err(format!("grid {s:?} has too many points"));
        }
        Ok(g)
    }
}

/// Fully resolved settings for one invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub alpha: f64,
    pub rho: f64,
    pub pi: f64,
    pub delta: f64,
    pub eta: Eta,
    pub n: usize,
    pub seed: u64,
    pub amp: AmpOptions,
    pub instance: Option<PathBuf>,
    pub pi_grid: Option<Grid>,
    pub rho_grid: Option<Grid>,
    pub se_init: SeInit,
    pub grid_points: usize,
    pub grid_scale: GridScale,
    pub spinodal_tol: f64,
    pub pi_max: f64,
    pub output: Option<PathBuf>,
    pub format: Format,
}

struct Key {
    name: &'static str,
    help: &'static str,
    commands: &'static [Command],
}

const ALL: &[Command] = &Command::ALL;
const GEN_AMP: &[Command] = &[Command::Gen, Command::Amp];
const AMP: &[Command] = &[Command::Amp];
const SAMPLE_RATIO: &[Command] = &[Command::Gen, Command::Amp, Command::Se, Command::Potential];
const PI_SWEEP: &[Command] = &[Command::Amp, Command::Se, Command::Phase];
const TABLES: &[Command] = &[Command::Amp, Command::Se, Command::Potential, Command::Phase];

const KEYS: &[Key] = &[
    Key { name: "alpha", help: "measurement ratio M/N (required)", commands: ALL },
    Key { name: "rho", help: "sparsity fraction [default: 0.2]", commands: SAMPLE_RATIO },
    Key { name: "pi", help: "sample ratio P/N [default: 2]", commands: SAMPLE_RATIO },
    Key { name: "delta", help: "measurement noise variance [default: 0]", commands: ALL },
    Key { name: "eta", help: "side-information noise ratio, or inf [default: 0.01]", commands: ALL },
    Key { name: "n", help: "signal dimension N [default: 128]", commands: GEN_AMP },
    Key { name: "seed", help: "instance seed [default: 0]", commands: GEN_AMP },
    Key { name: "damping", help: "weight on new a, v, r, s [default: 0.5]", commands: AMP },
    Key { name: "max-iter", help: "sweep limit [default: 500]", commands: AMP },
    Key { name: "conv-tol", help: "stop when max |change of a| is below this [default: 1e-8]", commands: AMP },
    Key { name: "init-jitter", help: "initial jitter scale [default: 0.1]", commands: AMP },
    Key { name: "delta-floor", help: "floor for residual and squared means [default: 1e-12]", commands: AMP },
    Key { name: "mode", help: "calibration or dictionary [default: calibration]", commands: AMP },
    Key { name: "pooled-variances", help: "average over all columns instead of per column [default: false]", commands: AMP },
    Key { name: "jitter-seed", help: "seed of the initial jitter [default: the instance seed]", commands: AMP },
    Key { name: "instance", help: "read this MFAMP1 file instead of generating", commands: AMP },
    Key { name: "pi-grid", help: "sweep pi over start:stop:step", commands: PI_SWEEP },
    Key { name: "rho-grid", help: "sweep rho over start:stop:step [default: 0.05:0.45:0.05]", commands: &[Command::Phase] },
    Key { name: "se-init", help: "uninformative or informed [default: uninformative]", commands: &[Command::Se] },
    Key { name: "grid-points", help: "points per axis [default: 41]", commands: &[Command::Potential] },
    Key { name: "grid-scale", help: "lin or log [default: lin]", commands: &[Command::Potential] },
    Key { name: "spinodal-tol", help: "bisection tolerance on pi [default: 0.001]", commands: &[Command::Phase] },
    Key { name: "pi-max", help: "upper end of the spinodal scan [default: 20]", commands: &[Command::Phase] },
    Key { name: "format", help: "csv or json [default: csv]", commands: TABLES },
    Key { name: "output", help: "output file [default: stdout; required for gen]", commands: ALL },
];

fn key(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let t = s.trim();
    let v = match t.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => f64::INFINITY,
        _ => t.parse::<f64>().map_err(|_| format!("cannot parse number from {s:?}"))?,
    };
    if v.is_nan() {
        return Err(format!("cannot parse number from {s:?}"));
    }
    Ok(v)
}

fn parse_num<T: FromStr>(s: &str) -> Result<T, String> {
    s.trim().parse().map_err(|_| format!("cannot parse integer from {s:?}"))
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("cannot parse boolean from {s:?}")),
    }
}

fn num(x: f64) -> String {
    if x.is_finite() {
        ryu::Buffer::new().format(x).to_string()
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

impl RunConfig {
    /// Defaults for `command`, with `alpha` still unset (NaN).
    pub fn defaults(command: Command) -> Self {
        let amp = AmpOptions::default();
        RunConfig {
            command,
            alpha: f64::NAN,
            rho: 0.2,
            pi: 2.0,
            delta: 0.0,
            eta: Eta::Finite(1e-2),
            n: 128,
            seed: 0,
            amp,
            instance: None,
            pi_grid: None,
            rho_grid: None,
            se_init: SeInit::Uninformative,
            grid_points: 41,
            grid_scale: GridScale::Linear,
            spinodal_tol: 1e-3,
            pi_max: 20.0,
            output: None,
            format: Format::Csv,
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, name: &str, value: &str) -> Result<(), CliError> {
        let spec = key(name).ok_or_else(|| CliError::usage(format!("unknown key {name:?}")))?;
        if !spec.commands.contains(&self.command) {
            return Err(CliError::usage(format!(
                "key {name:?} does not apply to the {} command",
                self.command.as_str()
            )));
        }
        let bad = |msg: String| CliError::usage(format!("--{name}: {msg}"));
        let v = value.trim();
        match name {
            "alpha" => self.alpha = parse_f64(v).map_err(bad)?,
            "rho" => self.rho = parse_f64(v).map_err(bad)?,
            "pi" => self.pi = parse_f64(v).map_err(bad)?,
            "delta" => self.delta = parse_f64(v).map_err(bad)?,
            "eta" => self.eta = v.parse().map_err(|e: Error| bad(e.to_string()))?,
            "n" => self.n = parse_num(v).map_err(bad)?,
            "seed" => self.seed = parse_num(v).map_err(bad)?,
            "damping" => self.amp.damping = parse_f64(v).map_err(bad)?,
            "max-iter" => self.amp.max_iter = parse_num(v).map_err(bad)?,
            "conv-tol" => self.amp.conv_tol = parse_f64(v).map_err(bad)?,
            "init-jitter" => self.amp.init_jitter = parse_f64(v).map_err(bad)?,
            "delta-floor" => self.amp.delta_floor = parse_f64(v).map_err(bad)?,
            "mode" => self.amp.mode = v.parse().map_err(|e: Error| bad(e.to_string()))?,
            "pooled-variances" => self.amp.column_variances = !parse_bool(v).map_err(bad)?,
            "jitter-seed" => self.amp.jitter_seed = Some(parse_num(v).map_err(bad)?),
            "instance" => self.instance = Some(PathBuf::from(v)),
            "pi-grid" => self.pi_grid = Some(v.parse().map_err(bad)?),
            "rho-grid" => self.rho_grid = Some(v.parse().map_err(bad)?),
            "se-init" => {
                self.se_init = match v {
                    "uninformative" => SeInit::Uninformative,
                    "informed" => SeInit::Informed(crate::state_evolution::INFORMED_START),
                    _ => return Err(bad(format!("expected uninformative or informed, got {v:?}"))),
                }
            }
            "grid-points" => self.grid_points = parse_num(v).map_err(bad)?,
            "grid-scale" => {
                self.grid_scale = match v {
                    "lin" => GridScale::Linear,
                    "log" => GridScale::Log,
                    _ => return Err(bad(format!("expected lin or log, got {v:?}"))),
                }
            }
            "spinodal-tol" => self.spinodal_tol = parse_f64(v).map_err(bad)?,
            "pi-max" => self.pi_max = parse_f64(v).map_err(bad)?,
            "format" => {
                self.format = match v {
                    "csv" => Format::Csv,
                    "json" => Format::Json,
                    _ => return Err(bad(format!("expected csv or json, got {v:?}"))),
                }
            }
            "output" => self.output = Some(PathBuf::from(v)),
            _ => unreachable!("key table and setter disagree on {name}"),
        }
        Ok(())
    }

    fn check(&self) -> Result<(), CliError> {
        if self.alpha.is_nan() {
            return Err(CliError::usage("missing required --alpha"));
        }
        if self.command == Command::Gen && self.output.is_none() {
            return Err(CliError::usage("gen needs --output"));
        }
        if self.instance.is_some() && self.pi_grid.is_some() {
            return Err(CliError::usage("--instance and --pi-grid cannot be combined"));
        }
        if self.grid_points < 2 {
            return Err(CliError::usage("--grid-points must be at least 2"));
        }
        if self.n == 0 {
            return Err(CliError::usage("--n must be positive"));
        }
        self.amp.validate()?;
        for pi in self.pis() {
            for rho in self.rhos() {
                ModelParams::new(self.alpha, pi, rho, self.delta, self.eta)?;
            }
        }
        Ok(())
    }

    fn pis(&self) -> Vec<f64> {
        match (self.command, self.pi_grid) {
            (_, Some(g)) => g.values(),
            (Command::Phase, None) => DEFAULT_PI_GRID.values(),
            _ => vec![self.pi],
        }
    }

    fn rhos(&self) -> Vec<f64> {
        match (self.command, self.rho_grid) {
            (Command::Phase, Some(g)) => g.values(),
            (Command::Phase, None) => DEFAULT_RHO_GRID.values(),
            _ => vec![self.rho],
        }
    }

    fn params(&self, pi: f64) -> Result<ModelParams, Error> {
        ModelParams::new(self.alpha, pi, self.rho, self.delta, self.eta)
    }

    /// The resolved settings as `key = value` pairs in table order, leaving
    /// out the output path.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![("command", self.command.as_str().to_string())];
        for k in KEYS.iter().filter(|k| k.commands.contains(&self.command)) {
            let value = match k.name {
                "alpha" => num(self.alpha),
                "rho" => num(self.rho),
                "pi" => num(self.pi),
                "delta" => num(self.delta),
                "eta" => self.eta.to_string(),
                "n" => self.n.to_string(),
                "seed" => self.seed.to_string(),
                "damping" => num(self.amp.damping),
                "max-iter" => self.amp.max_iter.to_string(),
                "conv-tol" => num(self.amp.conv_tol),
                "init-jitter" => num(self.amp.init_jitter),
                "delta-floor" => num(self.amp.delta_floor),
                "mode" => self.amp.mode.as_str().to_string(),
                "pooled-variances" => (!self.amp.column_variances).to_string(),
                "jitter-seed" => match self.amp.jitter_seed {
                    Some(s) => s.to_string(),
                    None => continue,
                },
                "instance" => match &self.instance {
                    Some(p) => p.display().to_string(),
                    None => continue,
                },
                "pi-grid" => match (self.pi_grid, self.command) {
                    (Some(g), _) => g.to_string(),
                    (None, Command::Phase) => DEFAULT_PI_GRID.to_string(),
                    _ => continue,
                },
                "rho-grid" => self.rho_grid.unwrap_or(DEFAULT_RHO_GRID).to_string(),
                "se-init" => match self.se_init {
                    SeInit::Informed(_) => "informed".into(),
                    _ => "uninformative".into(),
                },
                "grid-points" => self.grid_points.to_string(),
                "grid-scale" => match self.grid_scale {
                    GridScale::Linear => "lin".into(),
                    GridScale::Log => "log".into(),
                },
                "spinodal-tol" => num(self.spinodal_tol),
                "pi-max" => num(self.pi_max),
                "format" => match self.format {
                    Format::Csv => "csv".into(),
                    Format::Json => "json".into(),
                },
                _ => continue,
            };
            out.push((k.name, value));
        }
        out
    }
}

const DEFAULT_RHO_GRID: Grid = Grid {
    start: 0.05,
    stop: 0.45,
    step: 0.05,
};

const DEFAULT_PI_GRID: Grid = Grid {
    start: 1.0,
    stop: 8.0,
    step: 0.1,
};

fn clap_command() -> ClapCommand {
    let mut root = ClapCommand::new("mfamp")
        .version(VERSION)
        .about("Message passing and asymptotic theory for blind calibration and dictionary learning")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for cmd in Command::ALL {
        let mut sub = ClapCommand::new(cmd.as_str()).about(cmd.about()).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("read key = value settings from FILE (flags take precedence)"),
        );
        for k in KEYS.iter().filter(|k| k.commands.contains(&cmd)) {
            let mut arg = Arg::new(k.name).long(k.name).value_name("VALUE").help(k.help);
            if k.name == "pooled-variances" {
                arg = arg.num_args(0..=1).default_missing_value("true");
            }
            sub = sub.arg(arg);
        }
        root = root.subcommand(sub);
    }
    root
}

/// Parses a flat `key = value` config text.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected key = value", lineno + 1)))?;
        pairs.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(pairs)
}

fn flag_pairs(m: &ArgMatches, cmd: Command) -> Vec<(String, String)> {
    KEYS.iter()
        .filter(|k| k.commands.contains(&cmd))
        .filter(|k| m.value_source(k.name) == Some(ValueSource::CommandLine))
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect()
}

/// Resolves `argv` (program name first) against an optional config text.
///
/// When `config_text` is `None` and `--config` is given, the file is read.
pub fn parse_config<I, T>(argv: I, config_text: Option<&str>) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = clap_command().try_get_matches_from(argv).map_err(|e| CliError {
        code: e.exit_code(),
        message: e.render().to_string(),
    })?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let command: Command = name.parse()?;

    let file_text = match (config_text, sub.get_one::<String>("config")) {
        (Some(t), _) => Some(t.to_string()),
        (None, Some(path)) => {
            Some(fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read config {path}: {e}")))?)
        }
        (None, None) => None,
    };

    let mut cfg = RunConfig::defaults(command);
    if let Some(text) = file_text {
        for (k, v) in parse_config_text(&text)? {
            if k == "command" {
                if v != command.as_str() {
                    return Err(CliError::usage(format!(
                        "config file is for the {v:?} command, not {:?}",
                        command.as_str()
                    )));
                }
                continue;
            }
            cfg.set(&k, &v)?;
        }
    }
    for (k, v) in flag_pairs(sub, command) {
        cfg.set(&k, &v)?;
    }
    cfg.check()?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq)]
enum Cell {
    F(f64),
    U(u64),
    S(String),
    B(bool),
    Empty,
}

impl Cell {
    fn opt(x: Option<f64>) -> Cell {
        x.map(Cell::F).unwrap_or(Cell::Empty)
    }

    fn csv(&self) -> String {
        match self {
            Cell::F(x) => num(*x),
            Cell::U(u) => u.to_string(),
            Cell::S(s) => s.replace([',', '\n'], ";"),
            Cell::B(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> serde_json::Value {
        use serde_json::Value;
        match self {
            Cell::F(x) if x.is_finite() => serde_json::Number::from_f64(*x).map(Value::Number).unwrap_or(Value::Null),
            Cell::F(x) => Value::String(num(*x)),
            Cell::U(u) => Value::from(*u),
            Cell::S(s) => Value::String(s.clone()),
            Cell::B(b) => Value::Bool(*b),
            Cell::Empty => Value::Null,
        }
    }
}

struct Table {
    columns: &'static [&'static str],
    rows: Vec<Vec<Cell>>,
}

fn render(cfg: &RunConfig, table: &Table) -> Vec<u8> {
    let echo = cfg.echo();
    match cfg.format {
        Format::Csv => {
            let mut s = format!("# mfamp {VERSION}\n# schema: {}\n# config:\n", cfg.command.schema());
            for (k, v) in &echo {
                s.push_str(&format!("# {k} = {v}\n"));
            }
            s.push_str(&table.columns.join(","));
            s.push('\n');
            for row in &table.rows {
                let cells: Vec<String> = row.iter().map(Cell::csv).collect();
                s.push_str(&cells.join(","));
                s.push('\n');
            }
            s.into_bytes()
        }
        Format::Json => {
            let mut config = serde_json::Map::new();
            for (k, v) in &echo {
                config.insert(k.to_string(), serde_json::Value::String(v.clone()));
            }
            let rows: Vec<serde_json::Value> = table
                .rows
                .iter()
                .map(|row| {
                    let obj: serde_json::Map<String, serde_json::Value> = table
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(c, v)| (c.to_string(), v.json()))
                        .collect();
                    serde_json::Value::Object(obj)
                })
                .collect();
            let doc = serde_json::json!({
                "meta": {
                    "version": VERSION,
                    "schema": cfg.command.schema(),
                    "seed": cfg.seed,
                    "config": config,
                },
                "rows": rows,
            });
            let mut out = serde_json::to_vec_pretty(&doc).expect("json values are always serialisable");
            out.push(b'\n');
            out
        }
    }
}

const AMP_COLUMNS: &[&str] = &["pi", "kind", "t", "e", "d", "residual", "converged", "clamped"];

fn amp_rows(pi: f64, res: &AmpResult, rows: &mut Vec<Vec<Cell>>) {
    for p in &res.trajectory {
        rows.push(vec![
            Cell::F(pi),
            Cell::S("iter".into()),
            Cell::U(p.t as u64),
            Cell::F(p.e),
            Cell::F(p.d),
            Cell::F(p.residual),
            Cell::Empty,
            Cell::Empty,
        ]);
    }
    if let Some(last) = res.last() {
        rows.push(vec![
            Cell::F(pi),
            Cell::S("summary".into()),
            Cell::U(res.iterations as u64),
            Cell::F(last.e),
            Cell::F(last.d),
            Cell::F(last.residual),
            Cell::B(res.converged),
            Cell::U(res.clamped as u64),
        ]);
    }
}

fn amp_table(cfg: &RunConfig) -> Result<(Table, Option<Error>), CliError> {
    // A loaded instance reports its own sample ratio.
    let one = |pi: f64| -> (f64, Result<AmpResult, Error>) {
        let inst = match &cfg.instance {
            Some(path) => load_instance(path),
            None => cfg.params(pi).and_then(|p| generate_instance(p, cfg.n, cfg.seed)),
        };
        match inst {
            Ok(inst) => {
                let pi = if cfg.instance.is_some() { inst.realized_pi() } else { pi };
                (pi, run_amp(&inst, &cfg.amp))
            }
            Err(e) => (pi, Err(e)),
        }
    };
    let pis = cfg.pis();
    let results: Vec<(f64, Result<AmpResult, Error>)> = if pis.len() > 1 {
        pis.par_iter().map(|&pi| one(pi)).collect()
    } else {
        pis.iter().map(|&pi| one(pi)).collect()
    };
    let mut rows = Vec::new();
    let mut failure = None;
    for (pi, res) in results {
        match res {
            Ok(r) => amp_rows(pi, &r, &mut rows),
            Err(Error::Divergence { iteration, partial }) => {
                amp_rows(pi, &partial, &mut rows);
                failure.get_or_insert(Error::Divergence { iteration, partial });
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok((
        Table {
            columns: AMP_COLUMNS,
            rows,
        },
        failure,
    ))
}

const SE_COLUMNS: &[&str] = &["pi", "kind", "t", "e", "d", "phi", "basin"];

fn se_table(cfg: &RunConfig) -> Result<Table, CliError> {
    let opts = SeOptions::default();
    let pis = cfg.pis();
    let mut rows = Vec::new();
    if cfg.pi_grid.is_none() {
        let params = cfg.params(cfg.pi)?;
        let traj = run_se(&params, cfg.se_init, &opts)?;
        for (t, p) in traj.points.iter().enumerate() {
            rows.push(vec![
                Cell::F(cfg.pi),
                Cell::S("iter".into()),
                Cell::U(t as u64),
                Cell::F(p.e),
                Cell::F(p.d),
                Cell::opt(potential(*p, &params).ok()),
                Cell::Empty,
            ]);
        }
    }
    let per_pi: Vec<Result<Vec<Vec<Cell>>, Error>> = pis
        .par_iter()
        .map(|&pi| {
            let params = cfg.params(pi)?;
            let m = mmse_with(&params, &opts)?;
            let mut out: Vec<Vec<Cell>> = m
                .candidates
                .iter()
                .map(|fp| {
                    vec![
                        Cell::F(pi),
                        Cell::S("fixed".into()),
                        Cell::Empty,
                        Cell::F(fp.point.e),
                        Cell::F(fp.point.d),
                        Cell::F(fp.phi),
                        Cell::S(fp.basin.as_str().into()),
                    ]
                })
                .collect();
            out.push(vec![
                Cell::F(pi),
                Cell::S("mmse".into()),
                Cell::Empty,
                Cell::F(m.point.e),
                Cell::F(m.point.d),
                Cell::F(m.phi),
                Cell::Empty,
            ]);
            Ok(out)
        })
        .collect();
    for r in per_pi {
        rows.extend(r?);
    }
    Ok(Table {
        columns: SE_COLUMNS,
        rows,
    })
}

fn axis(max: f64, points: usize, scale: GridScale) -> Vec<f64> {
    let last = (points - 1) as f64;
    (0..points)
        .map(|k| {
            let u = k as f64 / last;
            match scale {
                GridScale::Linear => max * u,
                GridScale::Log => GRID_MIN * (max / GRID_MIN).powf(u),
            }
        })
        .collect()
}

fn potential_table(cfg: &RunConfig) -> Result<Table, CliError> {
    let params = cfg.params(cfg.pi)?;
    let es = axis(cfg.rho, cfg.grid_points, cfg.grid_scale);
    let ds = axis(1.0, cfg.grid_points, cfg.grid_scale);
    let rows = es
        .par_iter()
        .flat_map_iter(|&e| {
            ds.iter()
                .map(move |&d| vec![Cell::F(e), Cell::F(d), Cell::opt(potential(SePoint::new(e, d), &params).ok())])
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(Table {
        columns: &["e", "d", "phi"],
        rows,
    })
}

const PHASE_COLUMNS: &[&str] = &[
    "pi",
    "rho",
    "e",
    "d",
    "phi",
    "phase",
    "pi_star",
    "pi_spinodal",
    "spinodal",
    "note",
];

fn phase_table(cfg: &RunConfig) -> Result<Table, CliError> {
    let opts = SpinodalOptions {
        pi_max: cfg.pi_max,
        tol: cfg.spinodal_tol,
        ..SpinodalOptions::default()
    };
    let records = phase_diagram_with(cfg.alpha, cfg.delta, cfg.eta, &cfg.rhos(), &cfg.pis(), &opts)?;
    let mut rows = Vec::new();
    for rec in &records {
        let (value, status) = match (&rec.pi_spinodal, &rec.spinodal_error) {
            (Some(Spinodal::At(v)), _) => (Some(*v), "at".to_string()),
            (Some(Spinodal::NoHardPhase), _) => (None, "no-hard-phase".to_string()),
            (Some(Spinodal::BeyondRange), _) => (None, "beyond-range".to_string()),
            (None, Some(err)) => (None, format!("error: {err}")),
            (None, None) => (None, "error".to_string()),
        };
        for c in &rec.mmse_curve {
            rows.push(vec![
                Cell::F(c.pi),
                Cell::F(rec.rho),
                Cell::F(c.e),
                Cell::F(c.d),
                Cell::F(c.phi),
                Cell::S(c.phase.as_str().into()),
                Cell::opt(rec.pi_star),
                Cell::opt(value),
                Cell::S(status.clone()),
                c.error.clone().map(Cell::S).unwrap_or(Cell::Empty),
            ]);
        }
    }
    Ok(Table {
        columns: PHASE_COLUMNS,
        rows,
    })
}

/// Bytes of the output file, plus a deferred error (divergence) that should
/// set the exit status after the partial results are written.
pub fn execute_to_bytes(cfg: &RunConfig) -> Result<(Vec<u8>, Option<CliError>), CliError> {
    let (table, deferred) = match cfg.command {
        Command::Gen => {
            let inst = generate_instance(cfg.params(cfg.pi)?, cfg.n, cfg.seed)?;
            return Ok((crate::instance::encode_instance(&inst), None));
        }
        Command::Amp => {
            let (t, fail) = amp_table(cfg)?;
            (t, fail.map(CliError::from))
        }
        Command::Se => (se_table(cfg)?, None),
        Command::Potential => (potential_table(cfg)?, None),
        Command::Phase => (phase_table(cfg)?, None),
    };
    Ok((render(cfg, &table), deferred))
}

/// Runs `cfg`, writing to its output path or to `stdout`.
pub fn execute(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    if cfg.command == Command::Gen {
        let inst = generate_instance(cfg.params(cfg.pi)?, cfg.n, cfg.seed)?;
        save_instance(&inst, cfg.output.as_ref().expect("checked in parse_config"))?;
        return Ok(());
    }
    let (bytes, deferred) = execute_to_bytes(cfg)?;
    match &cfg.output {
        Some(path) => fs::write(path, &bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?,
        None => stdout.write_all(&bytes).map_err(|e| CliError::io(format!("stdout: {e}")))?,
    }
    match deferred {
        Some(err) => Err(err),
        None => Ok(()),
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("MFAMP_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::usage(format!("MFAMP_THREADS must be a positive integer, got {raw:?}")))?;
    // A pool that already exists (repeated calls in one process) is fine.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

/// Entry point of the `mfamp` binary; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let result = configure_threads()
        .and_then(|_| parse_config(argv, None))
        .and_then(|cfg| execute(&cfg, &mut io::stdout().lock()));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) if e.code == EXIT_OK => {
            print!("{}", e.message);
            EXIT_OK
        }
        Err(e) => {
            let msg = e.message.trim_end();
            if msg.starts_with("error:") {
                eprintln!("{msg}");
            } else {
                eprintln!("error: {msg}");
            }
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &str) -> Result<RunConfig, CliError> {
        let argv: Vec<&str> = std::iter::once("mfamp").chain(args.split_whitespace()).collect();
        parse_config(argv, None)
    }

    #[test]
    fn flags_are_echoed() {
        let cfg = parse("amp --alpha 0.5 --rho 0.2 --pi 4 --eta 1e-2 --delta 1e-8 --n 128 --seed 7").unwrap();
        assert_eq!(cfg.command, Command::Amp);
        assert_eq!((cfg.alpha, cfg.rho, cfg.pi, cfg.delta), (0.5, 0.2, 4.0, 1e-8));
        assert_eq!(cfg.eta, Eta::Finite(1e-2));
        assert_eq!((cfg.n, cfg.seed), (128, 7));
        let echo = cfg.echo();
        assert!(echo.contains(&("seed", "7".into())));
        assert!(echo.contains(&("eta", "0.01".into())));
    }

    #[test]
    fn phase_sweep_config() {
        let cfg = parse("phase --alpha 0.5 --delta 0 --eta inf --rho-grid 0.05:0.45:0.05 --pi-grid 1:8:0.1").unwrap();
        assert_eq!(cfg.eta, Eta::Infinite);
        let rhos = cfg.rhos();
        assert_eq!(rhos.len(), 9);
        assert_eq!(rhos[2], 0.15);
        let pis = cfg.pis();
        assert_eq!(pis.len(), 71);
        assert_eq!(pis[2], 1.2);
        assert_eq!(*pis.last().unwrap(), 8.0);
    }

    #[test]
    fn usage_errors_are_distinct() {
        let missing = parse("amp --rho 0.2").unwrap_err();
        assert_eq!(missing.code, EXIT_USAGE);
        assert!(missing.message.contains("--alpha"));

        let unknown = parse("amp --alpha 0.5 --bogus 1").unwrap_err();
        assert_eq!(unknown.code, EXIT_USAGE);

        let number = parse("amp --alpha zero").unwrap_err();
        assert_eq!(number.code, EXIT_USAGE);
        assert!(number.message.contains("cannot parse number"));

        assert_eq!(parse("se --alpha 0.5 --n 10").unwrap_err().code, EXIT_USAGE);
        let wrong_cmd = parse_config(["mfamp", "se"], Some("alpha = 0.5\nn = 10\n")).unwrap_err();
        assert!(wrong_cmd.message.contains("does not apply"));
    }

    #[test]
    fn file_then_flags() {
        let text = "# comment\ncommand = amp\nalpha = 0.3\nrho = 0.1 # inline\nmax_iter = 7\n";
        let argv = ["mfamp", "amp", "--rho", "0.05"];
        let cfg = parse_config(argv, Some(text)).unwrap();
        assert_eq!(cfg.alpha, 0.3);
        assert_eq!(cfg.rho, 0.05);
        assert_eq!(cfg.amp.max_iter, 7);

        let clash = parse_config(["mfamp", "se"], Some("command = amp\nalpha = 0.5\n")).unwrap_err();
        assert!(clash.message.contains("amp"));
        let unknown = parse_config(["mfamp", "se"], Some("alpha = 0.5\nlambda = 1\n")).unwrap_err();
        assert!(unknown.message.contains("unknown key"));
    }

    #[test]
    fn echo_replays_to_the_same_config() {
        let cfg = parse("amp --alpha 0.5 --pi 3 --eta inf --mode dictionary --pooled-variances --jitter-seed 4").unwrap();
        assert!(!cfg.amp.column_variances);
        let text: String = cfg.echo().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let again = parse_config(["mfamp", "amp"], Some(&text)).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn csv_numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 5e-324, 12345.678e10] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(f64::INFINITY), "inf");
    }

    #[test]
    fn symbolic_grids() {
        let g: Grid = "0.1:0.3:0.1".parse().unwrap();
        assert_eq!(g.values(), vec![0.1, 0.2, 0.3]);
        assert!("1:0:0.1".parse::<Grid>().is_err());
        assert!("1:2".parse::<Grid>().is_err());
        assert_eq!(g.to_string(), "0.1:0.3:0.1");
    }

    #[test]
    fn error_codes() {
        assert_eq!(exit_code(&Error::Domain("x".into())), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::Consistency("x".into())), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::File(crate::error::FileError::BadMagic)), EXIT_IO);
        assert_eq!(
            exit_code(&Error::Divergence {
                iteration: 1,
                partial: Box::default()
            }),
            EXIT_DIVERGENCE
        );
    }
}
