//! The `qfg` command line.
//!
//! Exit codes: 0 on success, 1 on a domain failure (validation, zero
//! probability, resource limit, failed self-check) and 2 on usage, I/O or
//! parse errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use qfg_core::inference::{backward_reduction_deviation, conditional_given, empirical_distribution, DensityDiagnostics};
use qfg_core::mirror::build_hmm_graph;
use qfg_core::oracle::{hmm_forward, oracle_joint};
use qfg_core::random::{random_model, ModelRng, ModelShape};
use qfg_core::tensor::TensorError;
use qfg_core::{
    conditional_distribution, density_after, density_before, joint_distribution, Complex64,
    HmmModel, InferenceError, InferenceOptions, Matrix, OutcomeDistribution, QuantumModel,
    ValidationReport,
};

use crate::json::Node;
use crate::model_io::{complex_node, load_model, ModelDocument, ModelIoError, ModelKind};
use crate::sampling::sample_trajectories_parallel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum When {
    Before,
    After,
}

/// Probabilities of quantum measurement sequences via complex factor graphs.
#[derive(Debug, Parser)]
#[command(name = "qfg", version)]
pub struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Largest number of outcome tuples a query may enumerate.
    #[arg(long, global = true, env = "QFG_ENUM_CAP")]
    pub enum_cap: Option<usize>,
    /// Override the model's unitarity tolerance
    #[arg(long, global = true)]
    pub unitarity_tol: Option<f64>,
    /// Override the model's Kraus completeness tolerance
    #[arg(long, global = true)]
    pub completeness_tol: Option<f64>,
    /// Override the model's normalization tolerance
    #[arg(long, global = true)]
    pub normalization_tol: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check unitarity, completeness and normalization of a model file.
    Validate { model: PathBuf },
    /// Joint distribution of all outcomes.
    Joint {
        model: PathBuf,
        /// Recompute with the matrix oracle and report the largest difference.
        #[arg(long)]
        oracle: bool,
    },
    /// Distribution of one outcome given observed ones.
    Condition {
        model: PathBuf,
        /// Observed outcomes, `y1=0,y2=1` or positionally `0,1`.
        #[arg(long, default_value = "")]
        given: String,
        /// Measurement to predict (1-based); defaults to the one after the prefix.
        #[arg(long)]
        at: Option<usize>,
    },
    /// Density matrix before or after a measurement.
    Density {
        model: PathBuf,
        #[arg(long, default_value = "")]
        given: String,
        #[arg(long)]
        at: Option<usize>,
        #[arg(long, value_enum, default_value_t = When::Before)]
        when: When,
    },
    /// Draw trajectories and compare their frequencies to the exact joint.
    Sample {
        model: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long)]
        seed: u64,
        /// Number of trajectories to list.
        #[arg(long, default_value_t = 10)]
        show: usize,
    },
    /// Run the consistency checks on a model file or a generated model.
    Selfcheck {
        #[arg(required_unless_present = "random", conflicts_with = "random")]
        model: Option<PathBuf>,
        #[arg(long)]
        random: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        steps: usize,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Load(ModelIoError),
    Domain(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) | CliError::Load(_) => 2,
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::ResourceLimit { .. } | InferenceError::Tensor(TensorError::ResourceLimit { .. }) => {
                CliError::Domain(format!("{e}; raise the limit with --enum-cap N or QFG_ENUM_CAP"))
            }
            InferenceError::StageOutOfRange { .. } | InferenceError::Build(_) => CliError::Usage(e.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

/// Rendered result of one command.
struct Output {
    table: String,
    node: Node,
    code: u8,
}

struct Ctx {
    format: Format,
    opts: InferenceOptions,
    cli: CliOverrides,
}

struct CliOverrides {
    unitarity: Option<f64>,
    completeness: Option<f64>,
    normalization: Option<f64>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let mut opts = InferenceOptions::default();
    if let Some(cap) = cli.enum_cap {
        opts.enumeration_cap = cap;
    }
    let ctx = Ctx {
        format: cli.format,
        opts,
        cli: CliOverrides { unitarity: cli.unitarity_tol, completeness: cli.completeness_tol, normalization: cli.normalization_tol },
    };
    match execute(&ctx, &cli.command) {
        Ok(output) => {
            let _ = match ctx.format {
                Format::Table => write!(out, "{}", output.table),
                Format::Structured => write!(out, "{}", output.node.to_pretty()),
            };
            output.code
        }
        Err(e) => {
            let message = match &e {
                CliError::Usage(m) | CliError::Domain(m) => m.clone(),
                CliError::Load(ModelIoError::Io { path, message }) => format!("cannot read {path}: {message}"),
                CliError::Load(io) => format!("invalid model file: {io}"),
            };
            let _ = writeln!(err, "error: {message}");
            e.code()
        }
    }
}

fn execute(ctx: &Ctx, command: &Command) -> Result<Output, CliError> {
    match command {
        Command::Validate { model } => cmd_validate(ctx, &load(ctx, model)?),
        Command::Joint { model, oracle } => cmd_joint(ctx, &load(ctx, model)?, *oracle),
        Command::Condition { model, given, at } => cmd_condition(ctx, require_valid(&load(ctx, model)?)?, given, *at),
        Command::Density { model, given, at, when } => {
            cmd_density(ctx, require_valid(&load(ctx, model)?)?, given, *at, *when)
        }
        Command::Sample { model, count, seed, show } => {
            cmd_sample(ctx, require_valid(&load(ctx, model)?)?, *count, *seed, *show)
        }
        Command::Selfcheck { model, random, seed, dim, steps } => {
            let doc = match (model, random) {
                (Some(path), _) => load(ctx, path)?,
                (None, _) => {
                    if *dim == 0 || *steps == 0 {
                        return Err(CliError::Usage("--dim and --steps must be at least 1".into()));
                    }
                    let m = random_model(&mut ModelRng::new(*seed), ModelShape::new(*dim, *steps));
                    ModelDocument::new(ModelKind::Quantum(apply_overrides_quantum(&ctx.cli, m)))
                }
            };
            cmd_selfcheck(ctx, &doc)
        }
    }
}

fn apply_overrides_quantum(o: &CliOverrides, m: QuantumModel) -> QuantumModel {
    let mut t = m.tolerances();
    t.unitarity = o.unitarity.unwrap_or(t.unitarity);
    t.completeness = o.completeness.unwrap_or(t.completeness);
    t.normalization = o.normalization.unwrap_or(t.normalization);
    m.with_tolerances(t)
}

fn load(ctx: &Ctx, path: &Path) -> Result<ModelDocument, CliError> {
    let doc = load_model(path).map_err(CliError::Load)?;
    let model = match doc.model {
        ModelKind::Quantum(m) => ModelKind::Quantum(apply_overrides_quantum(&ctx.cli, m)),
        ModelKind::Hmm(h) => {
            let t = ctx.cli.normalization.unwrap_or(h.tolerance());
            ModelKind::Hmm(h.with_tolerance(t))
        }
    };
    Ok(ModelDocument::new(model))
}

fn require_valid(doc: &ModelDocument) -> Result<&QuantumModel, CliError> {
    if !doc.report.passed() {
        let failed: Vec<String> = doc.report.failures().map(describe_check).collect();
        return Err(CliError::Domain(format!("model failed validation: {}", failed.join("; "))));
    }
    doc.quantum().ok_or_else(|| CliError::Usage("this command needs a quantum model; HMM files support validate, joint and selfcheck".into()))
}

fn describe_check(c: &qfg_core::model::Check) -> String {
    let stage = c.stage.map(|s| format!(" at stage {s}")).unwrap_or_default();
    format!("{}{} (deviation {:.1e} > {:.1e})", c.name, stage, c.deviation, c.tolerance)
}

/// Probabilities with 12 significant digits, trailing zeros trimmed.
pub fn sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..12).contains(&exp) {
        let s = format!("{:.*}", (11 - exp).max(0) as usize, x);
        if s.contains('.') {
            return s.trim_end_matches('0').trim_end_matches('.').to_string();
        }
        s
    } else {
        let s = format!("{x:.11e}");
        let (mantissa, e) = s.split_once('e').expect("exponent form");
        let mantissa = if mantissa.contains('.') { mantissa.trim_end_matches('0').trim_end_matches('.') } else { mantissa };
        format!("{mantissa}e{e}")
    }
}

fn complex12(z: Complex64) -> String {
    let sign = if z.im.is_sign_negative() { '-' } else { '+' };
    format!("{}{}{}i", sig12(z.re), sign, sig12(z.im.abs()))
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i + 1 == cells.len() {
                s.push_str(cell);
            } else {
                let _ = write!(s, "{cell:<w$}  ");
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    for row in rows {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

fn tuple_label(labels: &[String]) -> String {
    format!("({})", labels.join(", "))
}

fn outcome_labels(m: &QuantumModel) -> Vec<Vec<String>> {
    m.stages().iter().map(|s| s.measurement.labels()).collect()
}

fn check_node(name: &str, stage: Option<usize>, deviation: f64, tolerance: f64, passed: bool) -> Node {
    Node::object([
        ("name", Node::str(name)),
        ("deviation", Node::Float(deviation)),
        ("passed", Node::Bool(passed)),
        ("stage", stage.map_or(Node::Null, Node::uint)),
        ("tolerance", Node::Float(tolerance)),
    ])
}

/// Groups checks by name, keeping first-appearance order.
fn grouped(report: &ValidationReport) -> Vec<(&'static str, f64, f64, Vec<usize>)> {
    let mut groups: Vec<(&'static str, f64, f64, Vec<usize>)> = Vec::new();
    for c in &report.checks {
        let idx = match groups.iter().position(|g| g.0 == c.name) {
            Some(i) => i,
            None => {
                groups.push((c.name, f64::NEG_INFINITY, c.tolerance, Vec::new()));
                groups.len() - 1
            }
        };
        let g = &mut groups[idx];
        if !(c.deviation <= g.1) {
            g.1 = c.deviation;
            g.2 = c.tolerance;
        }
        if !c.passed() {
            g.3.push(c.stage.unwrap_or(0));
        }
    }
    groups
}

fn check_meaning(name: &str) -> &'static str {
    match name {
        "unitarity" => "U^H U != I",
        "basis unitarity" => "projection basis B^H B != I",
        "completeness" => "sum_y A(y)^H A(y) != I",
        "initial normalization" => "initial state does not sum to 1",
        "initial nonnegativity" => "initial pmf has negative entries",
        "kernel normalization" => "kernel does not sum to 1 over (y, x_next)",
        "kernel nonnegativity" => "kernel has negative entries",
        _ => "check failed",
    }
}

fn cmd_validate(_ctx: &Ctx, doc: &ModelDocument) -> Result<Output, CliError> {
    let mut text = String::new();
    for (name, dev, tol, failed) in grouped(&doc.report) {
        let _ = write!(text, "{name}: max dev {dev:.1e} (tolerance {tol:.1e})");
        if failed.is_empty() {
            text.push_str(" ok\n");
        } else {
            let stages: Vec<String> = failed.iter().filter(|&&s| s > 0).map(|s| s.to_string()).collect();
            let at = if stages.is_empty() { String::new() } else { format!(" at stage {}", stages.join(", ")) };
            let _ = writeln!(text, " FAIL: {}{at}", check_meaning(name));
        }
    }
    for note in &doc.report.notes {
        let _ = writeln!(text, "note: {note}");
    }
    let passed = doc.report.passed();
    text.push_str(if passed { "valid\n" } else { "invalid\n" });
    let node = Node::object([
        ("command", Node::str("validate")),
        (
            "checks",
            Node::Array(doc.report.checks.iter().map(|c| check_node(c.name, c.stage, c.deviation, c.tolerance, c.passed())).collect()),
        ),
        ("notes", Node::Array(doc.report.notes.iter().map(Node::str).collect())),
        ("passed", Node::Bool(passed)),
    ]);
    Ok(Output { table: text, node, code: if passed { 0 } else { 1 } })
}

fn hmm_joint(h: &HmmModel, opts: &InferenceOptions) -> Result<OutcomeDistribution, CliError> {
    let alphabets: Vec<usize> = h.kernels().iter().map(|k| k.outcomes()).collect();
    let tuples = alphabets.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).unwrap_or(usize::MAX);
    if tuples > opts.enumeration_cap {
        return Err(InferenceError::ResourceLimit { tuples, cap: opts.enumeration_cap }.into());
    }
    let hg = build_hmm_graph(h, h.len()).map_err(|e| CliError::Domain(e.to_string()))?;
    let f = hg
        .graph
        .external_function_with(&opts.contraction)
        .and_then(|f| f.permuted(&hg.outcomes))
        .map_err(|e| InferenceError::from(e))?;
    let probs = f.values().iter().map(|z| z.re).collect();
    Ok(OutcomeDistribution::new(alphabets, probs))
}

fn hmm_forward_joint(h: &HmmModel, alphabets: &[usize]) -> OutcomeDistribution {
    let empty = OutcomeDistribution::new(alphabets.to_vec(), vec![0.0; alphabets.iter().product()]);
    let probs = empty.iter().map(|(t, _)| hmm_forward(h, &t)).collect();
    OutcomeDistribution::new(alphabets.to_vec(), probs)
}

fn cmd_joint(ctx: &Ctx, doc: &ModelDocument, oracle: bool) -> Result<Output, CliError> {
    let (dist, labels, reference) = match &doc.model {
        ModelKind::Quantum(_) => {
            let m = require_valid(doc)?;
            let dist = joint_distribution(m, &ctx.opts)?;
            let reference = if oracle {
                Some(oracle_joint(m, ctx.opts.enumeration_cap).map_err(|e| CliError::Domain(format!("oracle: {e}")))?)
            } else {
                None
            };
            (dist, outcome_labels(m), reference)
        }
        ModelKind::Hmm(h) => {
            if !doc.report.passed() {
                let failed: Vec<String> = doc.report.failures().map(describe_check).collect();
                return Err(CliError::Domain(format!("model failed validation: {}", failed.join("; "))));
            }
            let dist = hmm_joint(h, &ctx.opts)?;
            let labels = dist.alphabets().iter().map(|&a| (0..a).map(|y| y.to_string()).collect()).collect();
            let reference = oracle.then(|| hmm_forward_joint(h, dist.alphabets()));
            (dist, labels, reference)
        }
    };
    let mut rows = Vec::new();
    let mut nodes = Vec::new();
    for (tuple, p) in dist.iter() {
        let names: Vec<String> = tuple.iter().enumerate().map(|(k, &y)| labels[k][y].clone()).collect();
        rows.push(vec![tuple_label(&names), sig12(p)]);
        nodes.push(Node::object([
            ("outcomes", Node::Array(names.iter().map(Node::str).collect())),
            ("probability", Node::Float(p)),
        ]));
    }
    let total = dist.total();
    rows.push(vec!["total".into(), sig12(total)]);
    let mut text = table(&["outcome", "probability"], &rows);
    let mut fields = vec![
        ("command", Node::str("joint")),
        ("rows", Node::Array(nodes)),
        ("total", Node::Float(total)),
        ("max_imaginary", Node::Float(dist.max_imaginary())),
    ];
    if let Some(r) = reference {
        let dev = dist.max_abs_diff(&r);
        let _ = writeln!(text, "oracle max |Δ|: {dev:.3e}");
        fields.push(("oracle_max_abs_diff", Node::Float(dev)));
    }
    Ok(Output { table: text, node: Node::object(fields), code: 0 })
}

/// Parses `y1=0,y2=1` or `0,1` into one optional outcome per measurement.
fn parse_given(given: &str, m: &QuantumModel) -> Result<Vec<Option<usize>>, CliError> {
    let mut observed = vec![None; m.len()];
    for (pos, item) in given.split(',').map(str::trim).filter(|s| !s.is_empty()).enumerate() {
        let (k, label) = match item.split_once('=') {
            Some((key, value)) => {
                let key = key.trim();
                let digits = key.strip_prefix('y').or_else(|| key.strip_prefix('Y')).unwrap_or(key);
                let k: usize = digits.parse().map_err(|_| CliError::Usage(format!("bad observation key {key:?}; use y1, y2, ...")))?;
                if k == 0 {
                    return Err(CliError::Usage("measurements are numbered from y1".into()));
                }
                (k - 1, value.trim())
            }
            None => (pos, item),
        };
        if k >= m.len() {
            return Err(CliError::Usage(format!("y{} is beyond the model's {} measurements", k + 1, m.len())));
        }
        if observed[k].is_some() {
            return Err(CliError::Usage(format!("y{} given twice", k + 1)));
        }
        let y = m.stages()[k]
            .measurement
            .outcome_index(label)
            .ok_or_else(|| CliError::Usage(format!("y{} has no outcome labelled {label:?}", k + 1)))?;
        observed[k] = Some(y);
    }
    Ok(observed)
}

/// The observed outcomes if they form a prefix `y1..yj` with nothing after.
fn as_prefix(observed: &[Option<usize>]) -> Option<Vec<usize>> {
    let j = observed.iter().position(Option::is_none).unwrap_or(observed.len());
    observed[j..].iter().all(Option::is_none).then(|| observed[..j].iter().map(|y| y.expect("prefix")).collect())
}

fn given_node(observed: &[Option<usize>], labels: &[Vec<String>]) -> Node {
    Node::object(observed.iter().enumerate().filter_map(|(k, y)| y.map(|y| (format!("y{}", k + 1), Node::str(labels[k][y].clone())))))
}

fn given_text(observed: &[Option<usize>], labels: &[Vec<String>]) -> String {
    let parts: Vec<String> = observed.iter().enumerate().filter_map(|(k, y)| y.map(|y| format!("y{}={}", k + 1, labels[k][y]))).collect();
    parts.join(", ")
}

fn cmd_condition(ctx: &Ctx, m: &QuantumModel, given: &str, at: Option<usize>) -> Result<Output, CliError> {
    let observed = parse_given(given, m)?;
    let labels = outcome_labels(m);
    let k = match at {
        Some(0) => return Err(CliError::Usage("--at is 1-based".into())),
        Some(k) => k,
        None => observed.iter().rposition(Option::is_some).map_or(1, |i| i + 2),
    };
    if k > m.len() {
        return Err(CliError::Usage(format!("--at {k} is beyond the model's {} measurements", m.len())));
    }
    if observed[k - 1].is_some() {
        return Err(CliError::Usage(format!("y{k} is both observed and predicted")));
    }
    let prefix = as_prefix(&observed).filter(|p| p.len() == k - 1);
    let cond = match &prefix {
        Some(p) => conditional_distribution(m, p, &ctx.opts)?,
        None => conditional_given(m, &observed, k - 1, &ctx.opts)?,
    };
    let cond_text = given_text(&observed, &labels);
    let mut text = format!("P(Y{k} | {})\n", if cond_text.is_empty() { "nothing observed".to_string() } else { cond_text });
    let rows: Vec<Vec<String>> =
        cond.probabilities.iter().enumerate().map(|(y, &p)| vec![labels[k - 1][y].clone(), sig12(p)]).collect();
    text.push_str(&table(&["outcome", "probability"], &rows));
    let _ = writeln!(text, "evidence probability: {}", sig12(cond.evidence));
    if cond.non_prefix_evidence {
        text.push_str("note: observations are not a prefix y1..y(k-1); computed by clamping and summing, outside the prefix-conditioning results\n");
    }
    let node = Node::object([
        ("command", Node::str("condition")),
        ("at", Node::uint(k)),
        ("given", given_node(&observed, &labels)),
        (
            "probabilities",
            Node::Array(
                cond.probabilities
                    .iter()
                    .enumerate()
                    .map(|(y, &p)| Node::object([("outcome", Node::str(labels[k - 1][y].clone())), ("probability", Node::Float(p))]))
                    .collect(),
            ),
        ),
        ("evidence", Node::Float(cond.evidence)),
        ("non_prefix_evidence", Node::Bool(cond.non_prefix_evidence)),
    ]);
    Ok(Output { table: text, node, code: 0 })
}

fn diagnostics_node(d: &DensityDiagnostics) -> Node {
    Node::object([
        ("hermiticity", Node::Float(d.hermiticity)),
        ("trace_deviation", Node::Float(d.trace_deviation)),
        ("min_eigenvalue", Node::Float(d.min_eigenvalue)),
        ("max_eigenvalue", Node::Float(d.max_eigenvalue)),
        ("valid", Node::Bool(d.is_valid())),
    ])
}

fn matrix_text(m: &Matrix) -> String {
    let rows: Vec<Vec<String>> = (0..m.rows()).map(|r| m.row(r).iter().map(|&z| complex12(z)).collect()).collect();
    let header: Vec<String> = (0..m.cols()).map(|c| format!("[{c}]")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    table(&header, &rows)
}

fn cmd_density(ctx: &Ctx, m: &QuantumModel, given: &str, at: Option<usize>, when: When) -> Result<Output, CliError> {
    let observed = parse_given(given, m)?;
    let labels = outcome_labels(m);
    let prefix = as_prefix(&observed).ok_or_else(|| CliError::Usage("density needs a prefix y1..yj of observations".into()))?;
    let k = match (at, when) {
        (Some(0), _) => return Err(CliError::Usage("--at is 1-based".into())),
        (Some(k), _) => k,
        (None, When::Before) => prefix.len() + 1,
        (None, When::After) => prefix.len(),
    };
    let (rho, title) = match when {
        When::Before => {
            if prefix.len() != k - 1 {
                return Err(CliError::Usage(format!("density before measurement {k} needs --given y1..y{}", k - 1)));
            }
            (density_before(m, &prefix, &ctx.opts)?, format!("rho_{k} (before measurement {k})"))
        }
        When::After => {
            if k == 0 || prefix.len() != k {
                return Err(CliError::Usage(format!("density after measurement {k} needs --given y1..y{k}")));
            }
            (density_after(m, &prefix, &ctx.opts)?, format!("rho~_{k} (after measurement {k})"))
        }
    };
    let d = rho.diagnostics();
    let cond_text = given_text(&observed, &labels);
    let mut text = format!("{title}{}\n", if cond_text.is_empty() { String::new() } else { format!(" given {cond_text}") });
    text.push_str(&matrix_text(rho.matrix()));
    let _ = writeln!(text, "hermiticity deviation: {:.3e}", d.hermiticity);
    let _ = writeln!(text, "trace deviation: {:.3e}", d.trace_deviation);
    let _ = writeln!(text, "eigenvalues: min {} max {}", sig12(d.min_eigenvalue), sig12(d.max_eigenvalue));
    let _ = writeln!(text, "valid density matrix: {}", if d.is_valid() { "yes" } else { "no" });
    let mat = rho.matrix();
    let node = Node::object([
        ("command", Node::str("density")),
        ("at", Node::uint(k)),
        ("when", Node::str(if when == When::Before { "before" } else { "after" })),
        ("given", given_node(&observed, &labels)),
        (
            "matrix",
            Node::Array((0..mat.rows()).map(|r| Node::Array(mat.row(r).iter().map(|&z| complex_node(z)).collect())).collect()),
        ),
        ("diagnostics", diagnostics_node(&d)),
    ]);
    Ok(Output { table: text, node, code: 0 })
}

fn cmd_sample(ctx: &Ctx, m: &QuantumModel, count: usize, seed: u64, show: usize) -> Result<Output, CliError> {
    let labels = outcome_labels(m);
    let trajectories = sample_trajectories_parallel(m, count, seed, &ctx.opts)?;
    let names = |t: &[usize]| -> Vec<String> { t.iter().enumerate().map(|(k, &y)| labels[k][y].clone()).collect() };
    let shown = &trajectories[..show.min(trajectories.len())];
    let rows: Vec<Vec<String>> =
        shown.iter().enumerate().map(|(i, t)| vec![i.to_string(), tuple_label(&names(&t.outcomes)), sig12(t.probability)]).collect();
    let mut text = format!("{count} trajectories, seed {seed}\n");
    text.push_str(&table(&["index", "outcomes", "probability"], &rows));
    if trajectories.len() > shown.len() {
        let _ = writeln!(text, "({} more not shown)", trajectories.len() - shown.len());
    }
    let exact = match joint_distribution(m, &ctx.opts) {
        Ok(d) => Some(d),
        Err(InferenceError::ResourceLimit { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let mut freq_nodes = Vec::new();
    let mut max_dev = None;
    if let Some(exact) = &exact {
        let empirical = empirical_distribution(exact.alphabets(), &trajectories);
        let rows: Vec<Vec<String>> = exact
            .iter()
            .zip(empirical.probabilities())
            .map(|((t, p), &f): ((Vec<usize>, f64), &f64)| {
                freq_nodes.push(Node::object([
                    ("outcomes", Node::Array(names(&t).into_iter().map(Node::Str).collect())),
                    ("empirical", Node::Float(f)),
                    ("exact", Node::Float(p)),
                ]));
                vec![tuple_label(&names(&t)), sig12(f), sig12(p)]
            })
            .collect();
        text.push_str(&table(&["outcome", "empirical", "exact"], &rows));
        if count > 0 {
            let dev = empirical.max_abs_diff(exact);
            let _ = writeln!(text, "max |empirical - exact|: {dev:.3e}");
            max_dev = Some(dev);
        }
    } else {
        text.push_str("exact distribution skipped: outcome space exceeds the enumeration cap\n");
    }
    let node = Node::object([
        ("command", Node::str("sample")),
        ("count", Node::uint(count)),
        ("seed", Node::Int(seed as i64)),
        (
            "trajectories",
            Node::Array(
                shown
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        Node::object([
                            ("index", Node::uint(i)),
                            ("outcomes", Node::Array(names(&t.outcomes).into_iter().map(Node::Str).collect())),
                            ("probability", Node::Float(t.probability)),
                        ])
                    })
                    .collect(),
            ),
        ),
        ("frequencies", Node::Array(freq_nodes)),
        ("max_deviation", max_dev.map_or(Node::Null, Node::Float)),
    ]);
    Ok(Output { table: text, node, code: 0 })
}

struct SelfCheck {
    name: String,
    deviation: f64,
    tolerance: f64,
    detail: Option<String>,
}

impl SelfCheck {
    fn new(name: impl Into<String>, deviation: f64, tolerance: f64) -> Self {
        Self { name: name.into(), deviation, tolerance, detail: None }
    }

    fn error(name: impl Into<String>, tolerance: f64, detail: impl ToString) -> Self {
        Self { name: name.into(), deviation: f64::INFINITY, tolerance, detail: Some(detail.to_string()) }
    }

    fn passed(&self) -> bool {
        self.detail.is_none() && self.deviation <= self.tolerance
    }
}

const REDUCTION_TOL: f64 = 1e-10;
const ORACLE_TOL: f64 = 1e-10;
const HERMITICITY_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-9;

fn density_checks(m: &QuantumModel, joint: &OutcomeDistribution, opts: &InferenceOptions) -> Vec<SelfCheck> {
    let mut herm = 0.0f64;
    let mut trace = 0.0f64;
    let mut psd = 0.0f64;
    let mut failure = None;
    let mut seen = std::collections::BTreeSet::new();
    for (tuple, p) in joint.iter() {
        if p <= 1e-9 {
            continue;
        }
        for k in 0..m.len() {
            if !seen.insert(tuple[..=k].to_vec()) {
                continue;
            }
            for rho in [density_before(m, &tuple[..k], opts), density_after(m, &tuple[..=k], opts)] {
                match rho {
                    Ok(rho) => {
                        let d = rho.diagnostics();
                        herm = herm.max(d.hermiticity);
                        trace = trace.max(d.trace_deviation);
                        psd = psd.max(-d.min_eigenvalue);
                    }
                    Err(e) => failure = Some(e.to_string()),
                }
            }
        }
    }
    let mk = |name: &str, dev: f64, tol: f64| match &failure {
        Some(e) => SelfCheck::error(name, tol, e),
        None => SelfCheck::new(name, dev.max(0.0), tol),
    };
    vec![mk("density hermiticity", herm, HERMITICITY_TOL), mk("density trace", trace, TRACE_TOL), mk("density positivity", psd, PSD_TOL)]
}

fn quantum_selfchecks(m: &QuantumModel, opts: &InferenceOptions) -> Vec<SelfCheck> {
    let mut checks = Vec::new();
    for (k, stage) in m.stages().iter().enumerate() {
        let name = format!("summed-out reduction, measurement {}", k + 1);
        checks.push(match backward_reduction_deviation(m.dimension(), Some(&stage.unitary), &stage.measurement, opts) {
            Ok(dev) => SelfCheck::new(name, dev, REDUCTION_TOL),
            Err(e) => SelfCheck::error(name, REDUCTION_TOL, e),
        });
    }
    let tol = m.tolerances().normalization;
    match joint_distribution(m, opts) {
        Ok(joint) => {
            checks.push(SelfCheck::new("normalization", (joint.total() - 1.0).abs(), tol));
            checks.push(match oracle_joint(m, opts.enumeration_cap) {
                Ok(o) => SelfCheck::new("oracle agreement", joint.max_abs_diff(&o), ORACLE_TOL),
                Err(e) => SelfCheck::error("oracle agreement", ORACLE_TOL, e),
            });
            checks.extend(density_checks(m, &joint, opts));
        }
        Err(e) => {
            checks.push(SelfCheck::error("normalization", tol, &e));
            checks.push(SelfCheck::error("oracle agreement", ORACLE_TOL, &e));
        }
    }
    checks
}

fn hmm_selfchecks(h: &HmmModel, opts: &InferenceOptions) -> Vec<SelfCheck> {
    match hmm_joint(h, opts) {
        Ok(joint) => {
            let forward = hmm_forward_joint(h, joint.alphabets());
            vec![
                SelfCheck::new("normalization", (joint.total() - 1.0).abs(), h.tolerance()),
                SelfCheck::new("forward agreement", joint.max_abs_diff(&forward), 1e-12),
            ]
        }
        Err(CliError::Domain(e) | CliError::Usage(e)) => vec![SelfCheck::error("normalization", h.tolerance(), e)],
        Err(CliError::Load(e)) => vec![SelfCheck::error("normalization", h.tolerance(), e)],
    }
}

fn cmd_selfcheck(ctx: &Ctx, doc: &ModelDocument) -> Result<Output, CliError> {
    let mut checks: Vec<SelfCheck> = grouped(&doc.report)
        .into_iter()
        .map(|(name, dev, tol, failed)| SelfCheck {
            name: name.to_string(),
            deviation: dev,
            tolerance: tol,
            detail: (!failed.is_empty()).then(|| check_meaning(name).to_string()),
        })
        .collect();
    let validation_checks = checks.len();
    checks.extend(match &doc.model {
        ModelKind::Quantum(m) => quantum_selfchecks(m, &ctx.opts),
        ModelKind::Hmm(h) => hmm_selfchecks(h, &ctx.opts),
    });
    let mut text = String::new();
    for c in &checks {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        let _ = write!(text, "{status} {}: deviation {:.3e} (tolerance {:.1e})", c.name, c.deviation, c.tolerance);
        match &c.detail {
            Some(d) => {
                let _ = writeln!(text, ": {d}");
            }
            None => text.push('\n'),
        }
    }
    let max_dev = checks[validation_checks..].iter().map(|c| c.deviation).fold(0.0, f64::max);
    let passed = checks.iter().all(SelfCheck::passed);
    let _ = writeln!(text, "max deviation: {max_dev:.3e}");
    text.push_str(if passed { "all checks passed\n" } else { "some checks failed\n" });
    let node = Node::object([
        ("command", Node::str("selfcheck")),
        (
            "checks",
            Node::Array(
                checks
                    .iter()
                    .map(|c| {
                        Node::object([
                            ("name", Node::str(c.name.clone())),
                            ("deviation", Node::Float(c.deviation)),
                            ("tolerance", Node::Float(c.tolerance)),
                            ("passed", Node::Bool(c.passed())),
                            ("detail", c.detail.clone().map_or(Node::Null, Node::Str)),
                        ])
                    })
                    .collect(),
            ),
        ),
        ("max_deviation", Node::Float(max_dev)),
        ("passed", Node::Bool(passed)),
    ]);
    Ok(Output { table: text, node, code: if passed { 0 } else { 1 } })
}
