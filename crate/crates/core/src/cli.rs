//! Config-driven experiment runner behind the `cbsde` binary.
//!
//! A run reads one TOML document, applies command-line overrides to it,
//! validates every key, executes a single experiment and writes a summary
//! (JSON or CSV) plus a CSV detail table. Outputs contain no timestamps or
//! paths, so equal configs produce byte-identical files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::bsde::{check_stability, residual_check, solve_bsde};
use crate::lattice::{build_lattice, AdaptedField, LatticeMode, LatticeModel};
use crate::model::{random_table, Barrier, Claim, Constraint, Generator, SequenceScheme};
use crate::penalize::{
    solve_full_schedule, solve_minimal, solve_penalized, DomainStatus, PenalizedDriver, Schedule, Tolerances,
};
use crate::properties::{
    random_claims, random_convex_triples, random_ordered_pairs, Harness, PropertyReport, FATOU_LIMIT_BUDGET,
    L2_FINAL_BOUND, MONOTONE_TOL,
};
use crate::reflected::{barrier_violation, complementarity_violation, solve_reflected};

/// Default output directory when neither the config nor `--output` sets one.
pub const OUTPUT_DIR_ENV: &str = "CBSDE_OUTPUT_DIR";
const DEFAULT_OUTPUT_DIR: &str = "cbsde-out";

/// Residual bound for supersolution identities.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Largest step count for which detail tables list every node.
pub const NODE_DETAIL_MAX_STEPS: usize = 6;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_PROPERTY_FAILURE: i32 = 1;
pub const EXIT_CONFIG_ERROR: i32 = 2;
pub const EXIT_SOLVER_ERROR: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Solve,
    Penalize,
    Minimal,
    Reflected,
    CompareOracle,
    Comparison,
    Convexity,
    Fatou,
    L2,
    FromBelow,
    Risk,
}

impl Experiment {
    pub const ALL: [Experiment; 11] = [
        Experiment::Solve,
        Experiment::Penalize,
        Experiment::Minimal,
        Experiment::Reflected,
        Experiment::CompareOracle,
        Experiment::Comparison,
        Experiment::Convexity,
        Experiment::Fatou,
        Experiment::L2,
        Experiment::FromBelow,
        Experiment::Risk,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Solve => "solve",
            Experiment::Penalize => "penalize",
            Experiment::Minimal => "minimal",
            Experiment::Reflected => "reflected",
            Experiment::CompareOracle => "compare-oracle",
            Experiment::Comparison => "comparison",
            Experiment::Convexity => "convexity",
            Experiment::Fatou => "fatou",
            Experiment::L2 => "l2",
            Experiment::FromBelow => "from-below",
            Experiment::Risk => "risk",
        }
    }

    pub fn parse(s: &str) -> Option<Experiment> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }

    fn needs_claim(&self) -> bool {
        !matches!(self, Experiment::Comparison | Experiment::Convexity | Experiment::Risk)
    }

    fn needs_reflection(&self) -> bool {
        matches!(self, Experiment::Reflected | Experiment::CompareOracle)
    }

    fn uses_penalty(&self) -> bool {
        !matches!(self, Experiment::Solve | Experiment::Reflected)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One problem with a config, tied to the key that causes it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigError {
    Parse(String),
    Invalid(Vec<Violation>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse(msg) => write!(f, "config parse error: {msg}"),
            ConfigError::Invalid(v) => {
                write!(f, "invalid config:")?;
                for violation in v {
                    write!(f, "\n  {violation}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Parameters of the property checks, with per-experiment defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckParams {
    pub count: Option<usize>,
    pub scheme: SequenceScheme,
    pub t_step: Option<usize>,
    pub halvings: usize,
    pub budget: f64,
    pub final_bound: Option<f64>,
    pub agreement: f64,
    pub fatou_count: usize,
}

impl Default for CheckParams {
    fn default() -> Self {
        Self {
            count: None,
            scheme: SequenceScheme::ShiftUp,
            t_step: None,
            halvings: 6,
            budget: FATOU_LIMIT_BUDGET,
            final_bound: None,
            agreement: 1e-2,
            fatou_count: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub lattice: LatticeModel,
    pub generator: Generator,
    pub constraint: Constraint,
    pub claim: Option<Claim>,
    pub schedule: Schedule,
    pub tolerances: Tolerances,
    pub seed: u64,
    pub check: CheckParams,
    pub format: OutputFormat,
    pub output_dir: Option<PathBuf>,
    pub name: String,
    /// SHA-256 of the effective config with the output path removed.
    pub digest: String,
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub m_max: Option<f64>,
    pub tol: Option<f64>,
    pub output: Option<PathBuf>,
}

pub fn parse_toml(text: &str) -> Result<Table, ConfigError> {
    text.parse::<Table>().map_err(|e| ConfigError::Parse(e.to_string()))
}

fn section_mut<'t>(table: &'t mut Table, key: &str) -> &'t mut Table {
    let entry = table.entry(key.to_string()).or_insert_with(|| Value::Table(Table::new()));
    if !entry.is_table() {
        *entry = Value::Table(Table::new());
    }
    entry.as_table_mut().expect("just made a table")
}

pub fn apply_overrides(table: &mut Table, o: &Overrides) {
    if let Some(n) = o.steps {
        section_mut(table, "grid").insert("n_steps".into(), Value::Integer(n as i64));
    }
    if let Some(seed) = o.seed {
        table.insert("seed".into(), Value::Integer(seed as i64));
    }
    if let Some(m) = o.m_max {
        section_mut(table, "schedule").insert("m_max".into(), Value::Float(m));
    }
    if let Some(tol) = o.tol {
        section_mut(table, "tolerances").insert("tol_m".into(), Value::Float(tol));
    }
    if let Some(path) = &o.output {
        section_mut(table, "output").insert("path".into(), Value::String(path.display().to_string()));
    }
}

/// Hex SHA-256 of the canonical rendering, ignoring where outputs go.
pub fn config_digest(table: &Table) -> String {
    let mut t = table.clone();
    if let Some(Value::Table(out)) = t.get_mut("output") {
        out.remove("path");
        if out.is_empty() {
            t.remove("output");
        }
    }
    let canonical = toml::to_string(&t).unwrap_or_default();
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

#[derive(Default)]
struct Reader {
    violations: Vec<Violation>,
}

impl Reader {
    fn flag(&mut self, key: String, message: impl Into<String>) {
        self.violations.push(Violation {
            key,
            message: message.into(),
        });
    }

    fn known(&mut self, t: &Table, path: &str, allowed: &[&str]) {
        for key in t.keys() {
            if !allowed.contains(&key.as_str()) {
                self.flag(join(path, key), format!("unknown key (expected one of {})", allowed.join(", ")));
            }
        }
    }

    fn opt_f64(&mut self, t: &Table, path: &str, key: &str) -> Option<f64> {
        match t.get(key)? {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.flag(join(path, key), "expected a number");
                None
            }
        }
    }

    fn req_f64(&mut self, t: &Table, path: &str, key: &str) -> Option<f64> {
        if !t.contains_key(key) {
            self.flag(join(path, key), "missing");
            return None;
        }
        self.opt_f64(t, path, key)
    }

    fn f64_or(&mut self, t: &Table, path: &str, key: &str, default: f64) -> f64 {
        self.opt_f64(t, path, key).unwrap_or(default)
    }

    fn opt_uint(&mut self, t: &Table, path: &str, key: &str) -> Option<u64> {
        match t.get(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            _ => {
                self.flag(join(path, key), "expected a non-negative integer");
                None
            }
        }
    }

    fn opt_str<'t>(&mut self, t: &'t Table, path: &str, key: &str) -> Option<&'t str> {
        match t.get(key)? {
            Value::String(s) => Some(s.as_str()),
            _ => {
                self.flag(join(path, key), "expected a string");
                None
            }
        }
    }

    fn req_str<'t>(&mut self, t: &'t Table, path: &str, key: &str) -> Option<&'t str> {
        if !t.contains_key(key) {
            self.flag(join(path, key), "missing");
            return None;
        }
        self.opt_str(t, path, key)
    }

    fn opt_table<'t>(&mut self, t: &'t Table, path: &str, key: &str) -> Option<&'t Table> {
        match t.get(key)? {
            Value::Table(sub) => Some(sub),
            _ => {
                self.flag(join(path, key), "expected a table");
                None
            }
        }
    }

    fn req_table<'t>(&mut self, t: &'t Table, path: &str, key: &str) -> Option<&'t Table> {
        if !t.contains_key(key) {
            self.flag(join(path, key), "missing");
            return None;
        }
        self.opt_table(t, path, key)
    }

    fn unknown_kind(&mut self, path: &str, kind: &str, expected: &[&str]) {
        self.flag(
            join(path, "kind"),
            format!("unknown kind \"{kind}\" (expected one of {})", expected.join(", ")),
        );
    }

    fn generator(&mut self, t: &Table, path: &str) -> Option<Generator> {
        const KINDS: [&str; 5] = ["zero", "linear", "discount", "drift", "abs_z"];
        let kind = self.req_str(t, path, "kind")?;
        let g = match kind {
            "zero" => {
                self.known(t, path, &["kind"]);
                Some(Generator::Zero)
            }
            "linear" => {
                self.known(t, path, &["kind", "a", "b"]);
                let a = self.req_f64(t, path, "a");
                let b = self.req_f64(t, path, "b");
                Some(Generator::Linear { a: a?, b: b? })
            }
            "discount" => {
                self.known(t, path, &["kind", "r"]);
                Some(Generator::Discount {
                    r: self.req_f64(t, path, "r")?,
                })
            }
            "drift" => {
                self.known(t, path, &["kind", "mu"]);
                Some(Generator::Drift {
                    mu: self.req_f64(t, path, "mu")?,
                })
            }
            "abs_z" => {
                self.known(t, path, &["kind", "c"]);
                Some(Generator::AbsZ {
                    c: self.req_f64(t, path, "c")?,
                })
            }
            other => {
                self.unknown_kind(path, other, &KINDS);
                None
            }
        }?;
        match g.validate() {
            Ok(()) => Some(g),
            Err(e) => {
                self.flag(path.to_string(), e.to_string());
                None
            }
        }
    }

    fn barrier(&mut self, t: &Table, path: &str) -> Option<Barrier> {
        let kind = self.req_str(t, path, "kind")?;
        match kind {
            "constant" => {
                self.known(t, path, &["kind", "k"]);
                Some(Barrier::Constant {
                    k: self.req_f64(t, path, "k")?,
                })
            }
            "abs_w" => {
                self.known(t, path, &["kind", "scale"]);
                Some(Barrier::AbsW {
                    scale: self.req_f64(t, path, "scale")?,
                })
            }
            other => {
                self.unknown_kind(path, other, &["constant", "abs_w"]);
                None
            }
        }
    }

    fn constraint(&mut self, t: &Table, path: &str) -> Option<Constraint> {
        const KINDS: [&str; 4] = ["none", "reflect_below", "z_ball", "y_floor"];
        let kind = self.req_str(t, path, "kind")?;
        let phi = match kind {
            "none" => {
                self.known(t, path, &["kind"]);
                Some(Constraint::None)
            }
            "reflect_below" => {
                self.known(t, path, &["kind", "barrier"]);
                let sub = self.req_table(t, path, "barrier")?;
                Some(Constraint::ReflectBelow {
                    barrier: self.barrier(sub, &join(path, "barrier"))?,
                })
            }
            "z_ball" => {
                self.known(t, path, &["kind", "r"]);
                Some(Constraint::ZBall {
                    r: self.req_f64(t, path, "r")?,
                })
            }
            "y_floor" => {
                self.known(t, path, &["kind", "c"]);
                Some(Constraint::YFloor {
                    c: self.req_f64(t, path, "c")?,
                })
            }
            other => {
                self.unknown_kind(path, other, &KINDS);
                None
            }
        }?;
        match phi.validate() {
            Ok(()) => Some(phi),
            Err(e) => {
                self.flag(path.to_string(), e.to_string());
                None
            }
        }
    }

    fn sub_claim(&mut self, t: &Table, path: &str, key: &str, ctx: &ClaimContext) -> Option<Claim> {
        let sub = self.req_table(t, path, key)?;
        self.claim(sub, &join(path, key), ctx)
    }

    fn claim(&mut self, t: &Table, path: &str, ctx: &ClaimContext) -> Option<Claim> {
        const KINDS: [&str; 12] = [
            "terminal_w", "constant", "call", "max_with", "table", "random", "shift", "scale", "max", "min", "add",
            "mix",
        ];
        let kind = self.req_str(t, path, "kind")?;
        match kind {
            "terminal_w" => {
                self.known(t, path, &["kind"]);
                Some(Claim::TerminalW)
            }
            "constant" => {
                self.known(t, path, &["kind", "value"]);
                Some(Claim::Constant(self.req_f64(t, path, "value")?))
            }
            "call" => {
                self.known(t, path, &["kind", "k"]);
                Some(Claim::Call {
                    k: self.req_f64(t, path, "k")?,
                })
            }
            "max_with" => {
                self.known(t, path, &["kind", "k"]);
                Some(Claim::MaxWith {
                    k: self.req_f64(t, path, "k")?,
                })
            }
            "table" => {
                self.known(t, path, &["kind", "values"]);
                let key = join(path, "values");
                let Some(Value::Array(items)) = t.get("values") else {
                    self.flag(key, "expected an array of numbers");
                    return None;
                };
                let mut values = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        Value::Float(x) => values.push(*x),
                        Value::Integer(i) => values.push(*i as f64),
                        _ => {
                            self.flag(key, "expected an array of numbers");
                            return None;
                        }
                    }
                }
                if let Some(l) = ctx.lattice {
                    if values.len() != l.leaf_count() {
                        self.flag(key, format!("{} values for {} leaves", values.len(), l.leaf_count()));
                        return None;
                    }
                }
                Some(Claim::Table(values))
            }
            "random" => {
                self.known(t, path, &["kind", "lo", "hi", "seed"]);
                let lo = self.f64_or(t, path, "lo", -1.0);
                let hi = self.f64_or(t, path, "hi", 1.0);
                let seed = self.opt_uint(t, path, "seed").unwrap_or(ctx.seed);
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    self.flag(join(path, "lo"), format!("need finite lo <= hi, got [{lo}, {hi}]"));
                    return None;
                }
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                Some(random_table(ctx.lattice?, &mut rng, lo, hi))
            }
            "shift" => {
                self.known(t, path, &["kind", "by", "of"]);
                let by = self.req_f64(t, path, "by");
                let of = self.sub_claim(t, path, "of", ctx);
                Some(of?.shift(by?))
            }
            "scale" => {
                self.known(t, path, &["kind", "factor", "of"]);
                let factor = self.req_f64(t, path, "factor");
                let of = self.sub_claim(t, path, "of", ctx);
                Some(of?.scale(factor?))
            }
            "max" | "min" | "add" => {
                self.known(t, path, &["kind", "first", "second"]);
                let a = self.sub_claim(t, path, "first", ctx);
                let b = self.sub_claim(t, path, "second", ctx);
                let (a, b) = (a?, b?);
                Some(match kind {
                    "max" => a.max(b),
                    "min" => a.min(b),
                    _ => a.add(b),
                })
            }
            "mix" => {
                self.known(t, path, &["kind", "a", "first", "second"]);
                let w = self.req_f64(t, path, "a");
                let a = self.sub_claim(t, path, "first", ctx);
                let b = self.sub_claim(t, path, "second", ctx);
                let w = w?;
                if !(0.0..=1.0).contains(&w) {
                    self.flag(join(path, "a"), format!("weight must lie in [0, 1], got {w}"));
                    return None;
                }
                Some(Claim::mix(w, a?, b?))
            }
            other => {
                self.unknown_kind(path, other, &KINDS);
                None
            }
        }
    }
}

struct ClaimContext<'a> {
    lattice: Option<&'a LatticeModel>,
    seed: u64,
}

fn positive(r: &mut Reader, key: &str, value: f64) {
    if !(value.is_finite() && value > 0.0) {
        r.flag(key.to_string(), format!("must be positive and finite, got {value}"));
    }
}

/// Parses and validates a config. `experiment` replaces the `experiment` key
/// when the subcommand already names one.
pub fn parse_config(table: &Table, experiment: Option<Experiment>) -> Result<ExperimentConfig, Vec<Violation>> {
    let mut r = Reader::default();
    r.known(
        table,
        "",
        &[
            "experiment", "seed", "grid", "generator", "constraint", "claim", "schedule", "tolerances", "check",
            "output",
        ],
    );

    let experiment = match experiment {
        Some(e) => Some(e),
        None => match r.req_str(table, "", "experiment") {
            Some(s) => {
                let e = Experiment::parse(s);
                if e.is_none() {
                    let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.as_str()).collect();
                    r.flag("experiment".into(), format!("unknown experiment \"{s}\" (expected one of {})", names.join(", ")));
                }
                e
            }
            None => None,
        },
    };
    let seed = r.opt_uint(table, "", "seed").unwrap_or(0);

    // grid
    let lattice = match r.req_table(table, "", "grid") {
        Some(grid) => {
            r.known(grid, "grid", &["horizon", "n_steps", "mode"]);
            let horizon = r.req_f64(grid, "grid", "horizon");
            let n_steps = if grid.contains_key("n_steps") {
                r.opt_uint(grid, "grid", "n_steps")
            } else {
                r.flag("grid.n_steps".into(), "missing");
                None
            };
            let mode = match r.opt_str(grid, "grid", "mode") {
                None | Some("recombining") => Some(LatticeMode::Recombining),
                Some("full_tree") => Some(LatticeMode::FullTree),
                Some(other) => {
                    r.flag("grid.mode".into(), format!("unknown mode \"{other}\" (expected recombining or full_tree)"));
                    None
                }
            };
            match (horizon, n_steps, mode) {
                (Some(h), Some(n), Some(mode)) => match build_lattice(h, n as usize, mode) {
                    Ok(l) => Some(l),
                    Err(e) => {
                        r.flag("grid".into(), e.to_string());
                        None
                    }
                },
                _ => None,
            }
        }
        None => None,
    };

    let generator = r.req_table(table, "", "generator").and_then(|t| r.generator(t, "generator"));
    let constraint = match r.opt_table(table, "", "constraint") {
        Some(t) => r.constraint(t, "constraint"),
        None if table.contains_key("constraint") => None,
        None => Some(Constraint::None),
    };

    let ctx = ClaimContext {
        lattice: lattice.as_ref(),
        seed,
    };
    let needs_claim = experiment.is_some_and(|e| e.needs_claim());
    let claim = if needs_claim || table.contains_key("claim") {
        r.req_table(table, "", "claim").and_then(|t| r.claim(t, "claim", &ctx))
    } else {
        None
    };

    let schedule = {
        let d = Schedule::default();
        let s = match r.opt_table(table, "", "schedule") {
            Some(t) => {
                r.known(t, "schedule", &["m0", "growth", "m_max"]);
                Schedule {
                    m0: r.f64_or(t, "schedule", "m0", d.m0),
                    growth: r.f64_or(t, "schedule", "growth", d.growth),
                    m_max: r.f64_or(t, "schedule", "m_max", d.m_max),
                }
            }
            None => d,
        };
        if let Err(e) = s.validate() {
            r.flag("schedule".into(), e.to_string());
        }
        s
    };

    let tolerances = {
        let d = Tolerances::default();
        let tol = match r.opt_table(table, "", "tolerances") {
            Some(t) => {
                r.known(t, "tolerances", &["tol_m", "y_max"]);
                Tolerances {
                    tol_m: r.f64_or(t, "tolerances", "tol_m", d.tol_m),
                    y_max: r.f64_or(t, "tolerances", "y_max", d.y_max),
                }
            }
            None => d,
        };
        positive(&mut r, "tolerances.tol_m", tol.tol_m);
        positive(&mut r, "tolerances.y_max", tol.y_max);
        tol
    };

    let mut check = CheckParams::default();
    if let Some(t) = r.opt_table(table, "", "check") {
        r.known(
            t,
            "check",
            &["count", "scheme", "t_step", "halvings", "budget", "final_bound", "agreement", "fatou_count"],
        );
        check.count = r.opt_uint(t, "check", "count").map(|c| c as usize);
        if check.count == Some(0) {
            r.flag("check.count".into(), "must be at least 1");
        }
        match r.opt_str(t, "check", "scheme") {
            None | Some("shift") => {}
            Some("truncate") => check.scheme = SequenceScheme::TruncateBelow,
            Some(other) => r.flag("check.scheme".into(), format!("unknown scheme \"{other}\" (expected shift or truncate)")),
        }
        check.t_step = r.opt_uint(t, "check", "t_step").map(|s| s as usize);
        check.halvings = r.opt_uint(t, "check", "halvings").map_or(check.halvings, |h| h as usize);
        if check.halvings == 0 {
            r.flag("check.halvings".into(), "must be at least 1");
        }
        check.fatou_count = r.opt_uint(t, "check", "fatou_count").map_or(check.fatou_count, |h| h as usize);
        if check.fatou_count == 0 {
            r.flag("check.fatou_count".into(), "must be at least 1");
        }
        check.budget = r.f64_or(t, "check", "budget", check.budget);
        positive(&mut r, "check.budget", check.budget);
        check.final_bound = r.opt_f64(t, "check", "final_bound");
        if let Some(b) = check.final_bound {
            positive(&mut r, "check.final_bound", b);
        }
        check.agreement = r.f64_or(t, "check", "agreement", check.agreement);
        positive(&mut r, "check.agreement", check.agreement);
    }
    if let (Some(step), Some(l)) = (check.t_step, &lattice) {
        if step > l.n_steps() {
            r.flag("check.t_step".into(), format!("{step} beyond n_steps = {}", l.n_steps()));
        }
    }

    let mut format = OutputFormat::Json;
    let mut output_dir = None;
    let mut name = experiment.map_or_else(String::new, |e| e.as_str().to_string());
    if let Some(t) = r.opt_table(table, "", "output") {
        r.known(t, "output", &["format", "path", "name"]);
        match r.opt_str(t, "output", "format") {
            None | Some("json") => {}
            Some("csv") => format = OutputFormat::Csv,
            Some(other) => r.flag("output.format".into(), format!("unknown format \"{other}\" (expected csv or json)")),
        }
        output_dir = r.opt_str(t, "output", "path").map(PathBuf::from);
        if let Some(n) = r.opt_str(t, "output", "name") {
            if n.is_empty() || n.contains(['/', '\\']) {
                r.flag("output.name".into(), "must be a non-empty file stem without separators");
            } else {
                name = n.to_string();
            }
        }
    }

    // cross-field requirements
    if let (Some(e), Some(phi)) = (experiment, &constraint) {
        if e.needs_reflection() && phi.barrier().is_none() {
            r.flag("constraint.kind".into(), format!("{e} needs a reflect_below constraint"));
        }
        if e == Experiment::Risk && !phi.independent_of_y() {
            r.flag("constraint.kind".into(), "risk measure needs a constraint independent of y");
        }
    }
    if let (Some(Experiment::Risk), Some(g)) = (experiment, &generator) {
        if !(g.vanishes_at_zero() && g.independent_of_y()) {
            r.flag("generator.kind".into(), "risk measure needs g independent of y with g(t, y, 0) = 0");
        }
        if claim.is_none() && check.count.is_none() && !table.contains_key("claim") {
            r.flag("claim".into(), "risk needs a claim or check.count for the axiom audit");
        }
    }
    if let (Some(e), Some(l), Some(g), Some(phi)) = (experiment, &lattice, &generator, &constraint) {
        if let Err(err) = check_stability(g, l) {
            r.flag("generator".into(), err.to_string());
        } else if e.uses_penalty() && *phi != Constraint::None {
            let driver = PenalizedDriver {
                generator: g,
                constraint: phi,
                m: schedule.m_max,
            };
            if let Err(err) = check_stability(&driver, l) {
                r.flag("schedule.m_max".into(), err.to_string());
            }
        }
    }

    if !r.violations.is_empty() {
        return Err(r.violations);
    }
    Ok(ExperimentConfig {
        experiment: experiment.expect("checked above"),
        lattice: lattice.expect("checked above"),
        generator: generator.expect("checked above"),
        constraint: constraint.expect("checked above"),
        claim,
        schedule,
        tolerances,
        seed,
        check,
        format,
        output_dir,
        name,
        digest: config_digest(table),
    })
}

/// Every violation of `table`; empty iff a run would start.
pub fn validate(table: &Table, experiment: Option<Experiment>) -> Vec<Violation> {
    parse_config(table, experiment).err().unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub item: String,
    pub y0: Option<f64>,
    pub domain_status: Option<String>,
    pub max_violation: Option<f64>,
    pub tolerance: Option<f64>,
    pub pass: bool,
    pub note: String,
}

impl SummaryRow {
    fn value(item: &str, y0: f64) -> Self {
        Self {
            item: item.to_string(),
            y0: Some(y0),
            domain_status: None,
            max_violation: None,
            tolerance: None,
            pass: true,
            note: String::new(),
        }
    }

    fn bound(item: &str, violation: f64, tolerance: f64) -> Self {
        Self {
            item: item.to_string(),
            y0: None,
            domain_status: None,
            max_violation: Some(violation),
            tolerance: Some(tolerance),
            pass: violation <= tolerance,
            note: String::new(),
        }
    }

    fn with_y0(mut self, y0: f64) -> Self {
        self.y0 = Some(y0);
        self
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    fn from_report(r: &PropertyReport) -> Self {
        Self {
            item: r.property_name.clone(),
            y0: None,
            domain_status: None,
            max_violation: Some(r.max_violation),
            tolerance: Some(r.tolerance),
            pass: r.pass,
            note: format!("{} instances; worst: {}", r.instances_tested, r.worst_instance),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub config_digest: String,
    pub pass: bool,
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(x) => format_sig(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as u64)
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetailTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl DetailTable {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }
}

/// `%.15g`-style rendering: 15 significant digits, trailing zeros dropped.
pub fn format_sig(x: f64) -> String {
    const DIGITS: i32 = 15;
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..DIGITS).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp) as usize;
        trim(&format!("{x:.decimals$}"))
    }
}

fn field_rows(lattice: &LatticeModel, fields: &[(&str, &AdaptedField)]) -> DetailTable {
    let mut header = vec!["step", "node", "t", "w"];
    header.extend(fields.iter().map(|(name, _)| *name));
    let mut table = DetailTable::new(&header);
    for step in 0..=lattice.n_steps() {
        for node in 0..lattice.nodes_at(step) {
            let p = lattice.point(step, node);
            let mut row: Vec<Cell> = vec![step.into(), node.into(), p.t.into(), p.w.into()];
            for (_, f) in fields {
                row.push(if f.covers(step) { f.at(step, node).into() } else { Cell::Empty });
            }
            table.push(row);
        }
    }
    table
}

fn layer_rows(lattice: &LatticeModel, y: &AdaptedField) -> crate::Result<DetailTable> {
    let mut table = DetailTable::new(&["step", "t", "nodes", "y_mean", "y_min", "y_max"]);
    for step in 0..=lattice.n_steps() {
        let layer = y.layer(step)?;
        let lo = layer.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = layer.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        table.push(vec![
            step.into(),
            lattice.grid().time(step).into(),
            layer.len().into(),
            lattice.expectation(step, layer)?.into(),
            lo.into(),
            hi.into(),
        ]);
    }
    Ok(table)
}

fn fields_or_layers(lattice: &LatticeModel, fields: &[(&str, &AdaptedField)]) -> crate::Result<DetailTable> {
    if lattice.n_steps() <= NODE_DETAIL_MAX_STEPS {
        Ok(field_rows(lattice, fields))
    } else {
        layer_rows(lattice, fields[0].1)
    }
}

fn trace_rows(reports: &[PropertyReport]) -> DetailTable {
    let mut table = DetailTable::new(&["report", "instance", "label", "violation", "metrics"]);
    for r in reports {
        for rec in &r.trace {
            let metrics: Vec<String> = rec
                .metrics
                .iter()
                .map(|m| format!("{}={}", m.name, format_sig(m.value)))
                .collect();
            table.push(vec![
                r.property_name.as_str().into(),
                rec.instance.into(),
                rec.label.clone().into(),
                rec.violation.into(),
                metrics.join(";").into(),
            ]);
        }
    }
    table
}

impl ExperimentConfig {
    pub fn harness(&self) -> Harness {
        Harness::new(
            self.generator,
            self.constraint,
            self.lattice.clone(),
            self.schedule,
            self.tolerances,
        )
    }

    pub fn claim(&self) -> &Claim {
        self.claim.as_ref().expect("validated: experiment has a claim")
    }

    pub fn t_step(&self) -> usize {
        self.check.t_step.unwrap_or(self.lattice.n_steps() / 2)
    }
}

/// Runs the configured experiment and assembles its summary and detail table.
pub fn execute(cfg: &ExperimentConfig) -> crate::Result<(Summary, DetailTable)> {
    let l = &cfg.lattice;
    let g = &cfg.generator;
    let phi = &cfg.constraint;
    let (rows, detail) = match cfg.experiment {
        Experiment::Solve => {
            let sol = solve_bsde(g, cfg.claim(), l)?;
            let residual = residual_check(&sol.lift_zero(l), g, l);
            let row = SummaryRow::bound("solve", residual, RESIDUAL_TOL).with_y0(sol.y0());
            (vec![row], fields_or_layers(l, &[("y", &sol.y), ("z", &sol.z)])?)
        }
        Experiment::Penalize => {
            let m = cfg.schedule.m_max;
            let run = solve_penalized(g, phi, m, cfg.claim(), l)?;
            let residual = residual_check(&run.to_supersolution(), g, l);
            let row = SummaryRow::bound("penalize", residual, RESIDUAL_TOL)
                .with_y0(run.y0())
                .with_note(format!("m={}", format_sig(m)));
            let detail = fields_or_layers(
                l,
                &[("y", run.y()), ("z", &run.solution.z), ("a_increment", &run.a_increments)],
            )?;
            (vec![row], detail)
        }
        Experiment::Minimal => {
            let res = solve_minimal(g, phi, cfg.claim(), l, &cfg.schedule, &cfg.tolerances)?;
            let mut row = SummaryRow::value("minimal", res.y0());
            row.domain_status = Some(res.domain_status.as_str().to_string());
            row.max_violation = res.final_gap();
            row.tolerance = Some(cfg.tolerances.tol_m);
            row.pass = res.domain_status == DomainStatus::Converged;
            row.note = match &res.divergence {
                Some(why) => format!("final m={}; {why}", format_sig(res.final_m())),
                None => format!("final m={}", format_sig(res.final_m())),
            };
            let mut detail = DetailTable::new(&["m", "y0", "gap"]);
            for rec in &res.gap_trace {
                detail.push(vec![rec.m.into(), rec.y0.into(), rec.gap.into()]);
            }
            (vec![row], detail)
        }
        Experiment::Reflected => {
            let barrier = phi.barrier().expect("validated: reflect_below");
            let out = solve_reflected(g, &barrier, cfg.claim(), l)?;
            let rows = vec![
                SummaryRow::bound("reflected", residual_check(&out, g, l), RESIDUAL_TOL).with_y0(out.y0()),
                SummaryRow::bound("complementarity", complementarity_violation(&out, &barrier, l), RESIDUAL_TOL),
                SummaryRow::bound("barrier", barrier_violation(&out, &barrier, l), 1e-12),
            ];
            let detail = fields_or_layers(l, &[("y", &out.y), ("z", &out.z), ("c_increment", &out.c_increments)])?;
            (rows, detail)
        }
        Experiment::CompareOracle => compare_oracle(cfg)?,
        Experiment::Comparison => {
            let pairs = random_ordered_pairs(l, cfg.seed, cfg.check.count.unwrap_or(200));
            reports_output(vec![cfg.harness().check_comparison(&pairs)?])
        }
        Experiment::Convexity => {
            let triples = random_convex_triples(l, cfg.seed, cfg.check.count.unwrap_or(200));
            reports_output(cfg.harness().check_convexity(&triples)?)
        }
        Experiment::Fatou => reports_output(cfg.harness().check_fatou(
            cfg.claim(),
            cfg.check.scheme,
            cfg.check.count.unwrap_or(100),
            cfg.check.budget,
        )?),
        Experiment::L2 => reports_output(cfg.harness().check_l2_continuity(
            cfg.claim(),
            cfg.t_step(),
            cfg.seed,
            cfg.check.halvings,
            cfg.check.final_bound.unwrap_or(L2_FINAL_BOUND),
        )?),
        Experiment::FromBelow => reports_output(cfg.harness().check_from_below(
            cfg.claim(),
            cfg.t_step(),
            cfg.check.count.unwrap_or(100),
            cfg.check.final_bound.unwrap_or(FATOU_LIMIT_BUDGET),
        )?),
        Experiment::Risk => {
            let h = cfg.harness();
            let mut rows = Vec::new();
            if let Some(xi) = &cfg.claim {
                let v = h.risk_measure(xi)?;
                let mut row = SummaryRow::value("rho", v.rho).with_note(format!("final m={}", format_sig(v.final_m)));
                row.domain_status = Some(v.status.as_str().to_string());
                row.pass = v.status == DomainStatus::Converged;
                rows.push(row);
            }
            let mut detail = DetailTable::new(&["report", "instance", "label", "violation", "metrics"]);
            if let Some(count) = cfg.check.count {
                let claims = random_claims(l, cfg.seed, count);
                let reports = h.audit_risk_axioms(&claims, cfg.seed, cfg.check.fatou_count, cfg.check.budget)?;
                let (report_rows, table) = reports_output(reports);
                rows.extend(report_rows);
                detail = table;
            }
            (rows, detail)
        }
    };
    let summary = Summary {
        experiment: cfg.experiment.as_str().to_string(),
        config_digest: cfg.digest.clone(),
        pass: rows.iter().all(|r| r.pass),
        rows,
    };
    Ok((summary, detail))
}

fn reports_output(reports: Vec<PropertyReport>) -> (Vec<SummaryRow>, DetailTable) {
    (reports.iter().map(SummaryRow::from_report).collect(), trace_rows(&reports))
}

/// Penalized schedule against the reflected solution: agreement at the
/// limit, gap decay, monotonicity in `m` and supersolution identities.
fn compare_oracle(cfg: &ExperimentConfig) -> crate::Result<(Vec<SummaryRow>, DetailTable)> {
    let l = &cfg.lattice;
    let g = &cfg.generator;
    let barrier = cfg.constraint.barrier().expect("validated: reflect_below");
    let xi = cfg.claim();
    let oracle = solve_reflected(g, &barrier, xi, l)?;
    let minimal = solve_minimal(g, &cfg.constraint, xi, l, &cfg.schedule, &cfg.tolerances)?;
    let full = solve_full_schedule(g, &cfg.constraint, xi, l, &cfg.schedule, &cfg.tolerances)?;
    let y_ref = oracle.y0();

    let mut detail = DetailTable::new(&["m", "y0_penalized", "y0_reflected", "gap", "residual", "monotone_drop"]);
    let mut worst_residual = residual_check(&oracle, g, l);
    let mut gaps = Vec::with_capacity(full.runs.len());
    for (k, run) in full.runs.iter().enumerate() {
        let residual = residual_check(&run.to_supersolution(), g, l);
        worst_residual = worst_residual.max(residual);
        let drop = if k == 0 {
            None
        } else {
            Some(full.runs[k - 1].y().max_pairwise(run.y(), |a, b| a - b).max(0.0))
        };
        let gap = (run.y0() - y_ref).abs();
        gaps.push((run.m, gap));
        detail.push(vec![run.m.into(), run.y0().into(), y_ref.into(), gap.into(), residual.into(), drop.into()]);
    }

    let agreement = (minimal.y0() - y_ref).abs();
    let mut rows = vec![SummaryRow::bound("agreement", agreement, cfg.check.agreement)
        .with_y0(minimal.y0())
        .with_note(format!("reflected y0={}", format_sig(y_ref)))];
    rows[0].domain_status = Some(minimal.domain_status.as_str().to_string());

    // last gap against the gap at a quarter of the final level
    let (m_last, gap_last) = *gaps.last().expect("non-empty schedule");
    let earlier = gaps.iter().rev().find(|(m, _)| *m <= m_last / 4.0 * (1.0 + 1e-12));
    rows.push(match earlier {
        Some(&(m_q, gap_q)) => SummaryRow::bound("gap_decay", gap_last - 0.6 * gap_q, 0.0).with_note(format!(
            "gap(m={})={} vs 0.6 * gap(m={})={}",
            format_sig(m_last),
            format_sig(gap_last),
            format_sig(m_q),
            format_sig(gap_q)
        )),
        None => SummaryRow::bound("gap_decay", 0.0, 0.0).with_note("schedule too short to compare"),
    });
    rows.push(SummaryRow::bound("monotone_in_m", full.monotonicity_violation(), MONOTONE_TOL));
    rows.push(SummaryRow::bound("residual", worst_residual, RESIDUAL_TOL));
    rows.push(SummaryRow::bound(
        "complementarity",
        complementarity_violation(&oracle, &barrier, l),
        RESIDUAL_TOL,
    ));
    Ok((rows, detail))
}

fn summary_csv(s: &Summary) -> String {
    let mut table = DetailTable::new(&[
        "experiment",
        "config_digest",
        "item",
        "y0",
        "domain_status",
        "max_violation",
        "tolerance",
        "pass",
        "note",
    ]);
    for r in &s.rows {
        table.push(vec![
            s.experiment.as_str().into(),
            s.config_digest.as_str().into(),
            r.item.as_str().into(),
            r.y0.into(),
            r.domain_status.clone().map_or(Cell::Empty, Cell::Text),
            r.max_violation.into(),
            r.tolerance.into(),
            if r.pass { "true" } else { "false" }.into(),
            r.note.as_str().into(),
        ]);
    }
    table.to_csv()
}

/// Where outputs go: config or `--output`, then the environment, then a default.
pub fn resolve_output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

/// Writes `<name>_summary.{json,csv}` and `<name>_detail.csv` into `dir`.
pub fn write_outputs(
    cfg: &ExperimentConfig,
    summary: &Summary,
    detail: &DetailTable,
    dir: &Path,
) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let (ext, body) = match cfg.format {
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(summary).map_err(std::io::Error::other)?;
            s.push('\n');
            ("json", s)
        }
        OutputFormat::Csv => ("csv", summary_csv(summary)),
    };
    let summary_path = dir.join(format!("{}_summary.{ext}", cfg.name));
    let detail_path = dir.join(format!("{}_detail.csv", cfg.name));
    fs::write(&summary_path, body)?;
    fs::write(&detail_path, detail.to_csv())?;
    Ok(vec![summary_path, detail_path])
}

/// Loads, validates and runs one config, returning the process exit code.
pub fn run_file(path: &Path, experiment: Option<Experiment>, overrides: &Overrides) -> i32 {
    let cfg = match load(path, experiment, overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG_ERROR;
        }
    };
    let (summary, detail) = match execute(&cfg) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("solver error: {e}");
            return EXIT_SOLVER_ERROR;
        }
    };
    let dir = resolve_output_dir(&cfg);
    let files = match write_outputs(&cfg, &summary, &detail, &dir) {
        Ok(files) => files,
        Err(e) => {
            eprintln!("cannot write outputs to {}: {e}", dir.display());
            return EXIT_SOLVER_ERROR;
        }
    };
    for r in &summary.rows {
        let mut line = format!("{} {}", if r.pass { "PASS" } else { "FAIL" }, r.item);
        if let Some(y0) = r.y0 {
            line.push_str(&format!(" y0={}", format_sig(y0)));
        }
        if let Some(status) = &r.domain_status {
            line.push_str(&format!(" status={status}"));
        }
        if let (Some(v), Some(t)) = (r.max_violation, r.tolerance) {
            line.push_str(&format!(" violation={} tol={}", format_sig(v), format_sig(t)));
        }
        println!("{line}");
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    if summary.pass {
        EXIT_PASS
    } else {
        EXIT_PROPERTY_FAILURE
    }
}

/// Prints every violation; exit code 0 iff there are none.
pub fn validate_file(path: &Path, experiment: Option<Experiment>, overrides: &Overrides) -> i32 {
    match read_table(path, overrides) {
        Ok(table) => {
            let violations = validate(&table, experiment);
            for v in &violations {
                println!("{v}");
            }
            if violations.is_empty() {
                println!("ok");
                EXIT_PASS
            } else {
                EXIT_CONFIG_ERROR
            }
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_CONFIG_ERROR
        }
    }
}

fn read_table(path: &Path, overrides: &Overrides) -> Result<Table, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
    let mut table = parse_toml(&text)?;
    apply_overrides(&mut table, overrides);
    Ok(table)
}

pub fn load(path: &Path, experiment: Option<Experiment>, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let table = read_table(path, overrides)?;
    parse_config(&table, experiment).map_err(ConfigError::Invalid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str, e: Option<Experiment>) -> Result<ExperimentConfig, Vec<Violation>> {
        parse_config(&parse_toml(text).unwrap(), e)
    }

    const MINIMAL: &str = r#"
        experiment = "minimal"
        [grid]
        horizon = 1.0
        n_steps = 4
        [generator]
        kind = "zero"
        [constraint]
        kind = "reflect_below"
        barrier = { kind = "constant", k = 0.0 }
        [claim]
        kind = "max_with"
        k = 0.0
    "#;

    #[test]
    fn format_sig_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333333333"),
            (2.0 / 3.0, "0.666666666666667"),
            (123456.789, "123456.789"),
            (1e-5, "1e-05"),
            (1.5e-7, "1.5e-07"),
            (0.0001, "0.0001"),
            (1e15, "1e+15"),
            (123456789012345.0, "123456789012345"),
            (std::f64::consts::E.powi(-1), "0.367879441171442"),
            (0.0001 * (1.0 - 1e-16), "0.0001"),
        ];
        for (x, want) in cases {
            assert_eq!(format_sig(x), want, "{x:e}");
        }
        assert_eq!(format_sig(f64::NAN), "nan");
    }

    #[test]
    fn well_formed_config_has_no_violations() {
        assert!(validate(&parse_toml(MINIMAL).unwrap(), None).is_empty());
        let c = cfg(MINIMAL, None).unwrap();
        assert_eq!(c.experiment, Experiment::Minimal);
        assert_eq!(c.schedule, Schedule::default());
        assert_eq!(c.format, OutputFormat::Json);
        assert_eq!(c.name, "minimal");
    }

    #[test]
    fn missing_horizon_is_named() {
        let text = MINIMAL.replace("horizon = 1.0", "");
        let v = cfg(&text, None).unwrap_err();
        assert!(v.iter().any(|v| v.key == "grid.horizon"), "{v:?}");
    }

    #[test]
    fn unknown_generator_kind_is_named() {
        let text = MINIMAL.replace("kind = \"zero\"", "kind = \"quadratic\"");
        let v = cfg(&text, None).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].key, "generator.kind");
        assert!(v[0].message.contains("quadratic"));
    }

    #[test]
    fn unstable_m_max_is_flagged() {
        let text = MINIMAL.replace(
            "kind = \"reflect_below\"\n        barrier = { kind = \"constant\", k = 0.0 }",
            "kind = \"z_ball\"\n        r = 1.0",
        );
        let v = cfg(&text, None).unwrap_err();
        assert!(v.iter().any(|v| v.key == "schedule.m_max"), "{v:?}");
        let ok = text.replace("[claim]", "[schedule]\n m_max = 1.0\n [claim]");
        assert!(cfg(&ok, None).is_ok());
    }

    #[test]
    fn violations_accumulate_and_name_nested_keys() {
        let text = r#"
            experiment = "fatou"
            seed = -1
            [grid]
            n_steps = 4
            mode = "hex"
            [generator]
            kind = "linear"
            a = 1.0
            [claim]
            kind = "shift"
            of = { kind = "call" }
            [output]
            format = "xml"
        "#;
        let keys: Vec<String> = cfg(text, None).unwrap_err().into_iter().map(|v| v.key).collect();
        for k in ["seed", "grid.horizon", "grid.mode", "generator.b", "claim.by", "claim.of.k", "output.format"] {
            assert!(keys.iter().any(|x| x == k), "{k} not in {keys:?}");
        }
    }

    #[test]
    fn experiment_structure_is_checked() {
        let text = MINIMAL.replace(
            "kind = \"reflect_below\"\n        barrier = { kind = \"constant\", k = 0.0 }",
            "kind = \"none\"",
        );
        let v = cfg(&text, Some(Experiment::Reflected)).unwrap_err();
        assert_eq!(v[0].key, "constraint.kind");
        let v = cfg(&MINIMAL.replace("kind = \"zero\"", "kind = \"discount\"\n r = 0.1"), Some(Experiment::Risk))
            .unwrap_err();
        assert!(v.iter().any(|v| v.key == "generator.kind"));
        let v = cfg(&MINIMAL.replace("experiment = \"minimal\"", ""), None).unwrap_err();
        assert_eq!(v[0].key, "experiment");
        let v = cfg(&MINIMAL.replace("[claim]", "[claims]"), None).unwrap_err();
        assert!(v.iter().any(|v| v.key == "claims"));
    }

    #[test]
    fn overrides_replace_scalars_and_skip_digest() {
        let mut t = parse_toml(MINIMAL).unwrap();
        let before = config_digest(&t);
        apply_overrides(
            &mut t,
            &Overrides {
                output: Some(PathBuf::from("/tmp/x")),
                ..Default::default()
            },
        );
        assert_eq!(before, config_digest(&t));
        apply_overrides(
            &mut t,
            &Overrides {
                steps: Some(6),
                seed: Some(9),
                m_max: Some(8.0),
                tol: Some(1e-6),
                output: None,
            },
        );
        assert_ne!(before, config_digest(&t));
        let c = parse_config(&t, None).unwrap();
        assert_eq!(c.lattice.n_steps(), 6);
        assert_eq!(c.seed, 9);
        assert_eq!(c.schedule.m_max, 8.0);
        assert_eq!(c.tolerances.tol_m, 1e-6);
        assert_eq!(c.output_dir, Some(PathBuf::from("/tmp/x")));
    }

    #[test]
    fn solve_zero_generator_row() {
        let c = cfg(MINIMAL.replace("max_with\"\n        k = 0.0", "terminal_w\"").as_str(), Some(Experiment::Solve))
            .unwrap();
        let (s, d) = execute(&c).unwrap();
        assert!(s.pass);
        assert_eq!(s.rows[0].y0, Some(0.0));
        // four steps list every node of the recombining lattice
        assert_eq!(d.rows.len(), 15);
        assert_eq!(d.header, ["step", "node", "t", "w", "y", "z"]);
    }

    #[test]
    fn minimal_summary_reports_convergence() {
        let (s, d) = execute(&cfg(MINIMAL, None).unwrap()).unwrap();
        assert!(s.pass);
        assert_eq!(s.rows[0].domain_status.as_deref(), Some("converged"));
        assert_eq!(d.header, ["m", "y0", "gap"]);
        assert_eq!(s.config_digest.len(), 64);
    }

    #[test]
    fn claim_catalog_parses() {
        let text = MINIMAL.replace(
            "[claim]\n        kind = \"max_with\"\n        k = 0.0",
            r#"[claim]
            kind = "mix"
            a = 0.25
            first = { kind = "table", values = [0, 1, 2, 3, 4] }
            second = { kind = "max", first = { kind = "terminal_w" }, second = { kind = "scale", factor = 2, of = { kind = "random" } } }"#,
        );
        let c = cfg(&text, Some(Experiment::Solve)).unwrap();
        assert_eq!(c.claim().leaves(&c.lattice).unwrap().len(), 5);
        let bad = text.replace("[0, 1, 2, 3, 4]", "[0, 1]");
        let v = cfg(&bad, Some(Experiment::Solve)).unwrap_err();
        assert_eq!(v[0].key, "claim.first.values");
    }

    #[test]
    fn csv_quotes_labels() {
        let mut t = DetailTable::new(&["a", "b"]);
        t.push(vec!["x, y".into(), 0.5.into()]);
        assert_eq!(t.to_csv(), "a,b\n\"x, y\",0.5\n");
    }
}
