//! The `atr` command line: check, run, normalize, bound, verify and corpus.
//!
//! Exit codes: 0 ok, 1 rejected program or failed check, 2 IO or usage,
//! 3 fuel exhausted, 4 bound synthesis failure.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::bits::Bits;
use crate::bounds::check::{check_bounding, check_termination, input_shapes, random_input, CheckSummary, GRID};
use crate::bounds::{program_bound, BoundReport, CheckCounts, ProgramBound};
use crate::corpus::{self, encode_list, parse_oracle_config, CorpusProgram, CORPUS_DIR_VAR, PROGRAM_NAMES};
use crate::eval::{evaluate_applied, CostReport, EvalError, OracleTable};
use crate::machine::{inject, run_traced, MachineError};
use crate::normalize::normalize_program;
use crate::parser::{parse_program, pretty_print, ParseError, SurfaceProgram};
use crate::syntax::{Span, Term, TermKind, TermRef, Type};
use crate::tcpoly::{parse_poly, PolyContext};
use crate::typecheck::{infer, Derivation, TypeContext, TypeError};

#[derive(Parser, Debug)]
#[command(name = "atr", version, about = "Affine tiered recursion: typecheck, run and bound programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse and typecheck a program.
    Check(ProgramArgs),
    /// Evaluate a program on bit-string inputs.
    Run(RunArgs),
    /// Put every recursion body into plain affine form and print the program.
    Normalize(ProgramArgs),
    /// Synthesize cost and potential bounds.
    Bound(BoundArgs),
    /// Compare synthesized bounds with measured runs on random inputs.
    Verify(VerifyArgs),
    /// List, print or export the built-in programs.
    Corpus(CorpusArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Engine {
    Bigstep,
    Machine,
}

#[derive(Args, Debug)]
pub struct ProgramArgs {
    /// A `.atr` file, or the name of a corpus program.
    pub program: String,
    /// Oracle configuration: a JSON object from oracle name to builtin id.
    #[arg(long)]
    pub oracles: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub program: ProgramArgs,
    /// Bit-string arguments, in order.
    pub inputs: Vec<String>,
    /// A list argument `a,b,c`, encoded and placed after the bit-string
    /// arguments; repeatable.
    #[arg(long = "list", value_name = "ITEMS")]
    pub lists: Vec<String>,
    #[arg(long, value_enum, default_value_t = Engine::Bigstep)]
    pub engine: Engine,
    /// Maximum number of rule instances.
    #[arg(long)]
    pub fuel: Option<u64>,
    /// Skip typechecking; requires --fuel.
    #[arg(long)]
    pub unchecked: bool,
    /// Write one line per machine transition to this file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BoundArgs {
    #[command(flatten)]
    pub program: ProgramArgs,
    /// Evaluate the bound at these input lengths, e.g. `3,5`.
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<u64>>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub program: ProgramArgs,
    /// Random inputs per grid length.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input lengths to sample; every argument gets the same length.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<u64>>,
    /// A bound report whose `costPoly` and `potPoly` replace the synthesized ones.
    #[arg(long)]
    pub bound: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CorpusArgs {
    /// Print this program's source.
    pub name: Option<String>,
    /// Write every program (and oracle configurations) into this directory.
    #[arg(long)]
    pub export: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

/// Why a command failed; each maps to one exit code.
#[derive(Debug)]
pub enum Failure {
    Rejected { code: String, span: Option<Span>, message: String },
    Io(String),
    Usage(String),
    Fuel(String),
    Synthesis(String),
    /// Measured runs exceeded the bound; the report was already printed.
    Violated(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Rejected { .. } | Failure::Violated(_) => 1,
            Failure::Io(_) | Failure::Usage(_) => 2,
            Failure::Fuel(_) => 3,
            Failure::Synthesis(_) => 4,
        }
    }

    fn code(&self) -> &str {
        match self {
            Failure::Rejected { code, .. } => code,
            Failure::Io(_) => "IoError",
            Failure::Usage(_) => "UsageError",
            Failure::Fuel(_) => "FuelExhausted",
            Failure::Synthesis(_) => "SynthesisFailed",
            Failure::Violated(_) => "BoundViolated",
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Rejected { message, .. }
            | Failure::Io(message)
            | Failure::Usage(message)
            | Failure::Fuel(message)
            | Failure::Synthesis(message)
            | Failure::Violated(message) => message,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let span = match self {
            Failure::Rejected { span: Some(s), .. } => json!({"line": s.line, "col": s.col}),
            _ => serde_json::Value::Null,
        };
        json!({"code": self.code(), "span": span, "message": self.message()})
    }
}

impl From<TypeError> for Failure {
    fn from(e: TypeError) -> Self {
        Failure::Rejected { code: e.code.to_string(), span: Some(e.span), message: e.message }
    }
}

impl From<ParseError> for Failure {
    fn from(e: ParseError) -> Self {
        Failure::Rejected { code: e.code().to_string(), span: Some(e.span()), message: e.to_string() }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::FuelExhausted(_) => Failure::Fuel(e.to_string()),
            other => Failure::Rejected { code: "RuntimeError".into(), span: None, message: other.to_string() },
        }
    }
}

fn mismatch(message: String) -> Failure {
    Failure::Rejected { code: "CheckFailed".into(), span: None, message }
}

/// A program as loaded from a file or the corpus, possibly not yet typed.
struct Loaded {
    name: String,
    surface: SurfaceProgram,
    term: TermRef,
    oracles: OracleTable,
    /// Set when the program declares oracles but none were configured.
    unconfigured: bool,
}

impl Loaded {
    fn require_oracles(&self) -> Result<(), Failure> {
        if self.unconfigured {
            return Err(Failure::Usage("program declares oracles; pass --oracles".into()));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {}", path.display(), e)))
}

fn load(args: &ProgramArgs) -> Result<Loaded, Failure> {
    let path = Path::new(&args.program);
    let (name, source, sibling) = if path.exists() {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("program").to_string();
        let cfg = path.with_file_name(format!("{}.oracles.json", name));
        let sibling = if cfg.exists() { Some(read(&cfg)?) } else { None };
        (name, read(path)?, sibling)
    } else if PROGRAM_NAMES.contains(&args.program.as_str()) {
        let p = corpus::corpus_program(&args.program).map_err(|e| Failure::Io(e.to_string()))?;
        let cfg: BTreeMap<String, &str> =
            p.oracles.iter().filter_map(|b| Some((b.name.to_string(), b.builtin?.id()))).collect();
        let cfg = (!cfg.is_empty()).then(|| serde_json::to_string(&cfg).expect("string map serializes"));
        (p.name, p.source, cfg)
    } else {
        return Err(Failure::Io(format!("{}: no such file or corpus program", args.program)));
    };
    let cfg = match &args.oracles {
        Some(p) => Some(read(p)?),
        None => sibling,
    };
    let (surface, term) = parse_program(&source)?;
    let oracles = match &cfg {
        Some(text) => parse_oracle_config(text, &surface).map_err(Failure::Usage)?,
        None => OracleTable::new(),
    };
    let unconfigured = cfg.is_none() && !surface.oracles.is_empty();
    Ok(Loaded { name, surface, term, oracles, unconfigured })
}

fn typecheck(p: &Loaded) -> Result<Derivation, Failure> {
    let d = infer(&p.term, &TypeContext::new())?;
    if let Some(ann) = p.surface.main_annotation() {
        if !crate::syntax::subtype(&d.ty, ann) {
            return Err(Failure::Rejected {
                code: "NotSubtype".into(),
                span: None,
                message: format!("program has type {} but is annotated {}", d.ty, ann),
            });
        }
    }
    Ok(d)
}

fn checked(p: Loaded) -> Result<CorpusProgram, Failure> {
    let derivation = typecheck(&p)?;
    p.require_oracles()?;
    Ok(CorpusProgram {
        name: p.name,
        source: String::new(),
        ty: derivation.ty.clone(),
        surface: p.surface,
        term: p.term,
        derivation,
        oracles: p.oracles,
    })
}

/// Positional bit strings followed by encoded `--list` arguments.
pub fn collect_inputs(inputs: &[String], lists: &[String]) -> Result<Vec<Bits>, String> {
    let mut out = Vec::new();
    for s in inputs {
        out.push(Bits::parse(s).ok_or_else(|| format!("`{}` is not a bit string", s))?);
    }
    for l in lists {
        let items = if l.is_empty() { Vec::new() } else { l.split(',').map(|s| s.trim()).collect() };
        let items = items
            .into_iter()
            .map(|s| Bits::parse(s).ok_or_else(|| format!("list item `{}` is not a bit string", s)))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(encode_list(&items));
    }
    Ok(out)
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    writeln!(out, "{}", text).map_err(|e| Failure::Io(e.to_string()))
}

fn emit_json(out: &mut dyn Write, v: &impl Serialize) -> Result<(), Failure> {
    emit(out, &serde_json::to_string_pretty(v).expect("reports serialize"))
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct MachineSummary {
    steps: u64,
    values_equal: bool,
    within_bound: bool,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct RunReport {
    value: String,
    total_cost: u64,
    rule_count: u64,
    rdp_by_site: BTreeMap<String, crate::eval::SiteStats>,
    engine: &'static str,
    machine: Option<MachineSummary>,
}

impl RunReport {
    fn new(r: &CostReport, machine: Option<MachineSummary>) -> Self {
        RunReport {
            value: r.value.to_string(),
            total_cost: r.total_cost,
            rule_count: r.rule_count,
            rdp_by_site: r.rdp_by_site.iter().map(|(s, st)| (s.0.to_string(), *st)).collect(),
            engine: if machine.is_some() { "machine" } else { "bigstep" },
            machine,
        }
    }
}

fn cmd_check(args: &ProgramArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let p = load(args)?;
    let d = typecheck(&p)?;
    match args.format {
        Format::Text => emit(out, &format!("{}: {}", p.name, d.ty)),
        Format::Json => emit_json(out, &json!({"program": p.name, "type": d.ty.to_string()})),
    }
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let p = load(&args.program)?;
    p.require_oracles()?;
    if args.unchecked && args.fuel.is_none() {
        return Err(Failure::Usage("--unchecked requires --fuel".into()));
    }
    let inputs = collect_inputs(&args.inputs, &args.lists).map_err(Failure::Usage)?;
    if !args.unchecked {
        let d = typecheck(&p)?;
        if d.ty.arity() != inputs.len() {
            return Err(Failure::Usage(format!("program of type {} takes {} arguments, got {}", d.ty, d.ty.arity(), inputs.len())));
        }
    }
    let report = evaluate_applied(&p.term, &inputs, &p.oracles, args.fuel)?;
    let machine = match args.engine {
        Engine::Bigstep => None,
        Engine::Machine => {
            let applied = Term::apps(p.term.clone(), inputs.iter().map(|a| Term::at(TermKind::Const(a.clone()), p.term.span)));
            let mut lines = Vec::new();
            let mut sink = |l: &str| lines.push(l.to_string());
            let trace: Option<&mut dyn FnMut(&str)> = if args.trace.is_some() { Some(&mut sink) } else { None };
            let budget = 3 * report.total_cost + 3;
            let result = run_traced(inject(&applied, &Default::default()), &p.oracles, Some(budget), trace);
            if let Some(path) = &args.trace {
                std::fs::write(path, lines.join("\n") + "\n").map_err(|e| Failure::Io(format!("{}: {}", path.display(), e)))?;
            }
            let (v, steps) = match result {
                Ok(r) => r,
                Err(MachineError::StepBudgetExhausted(n)) => {
                    return Err(mismatch(format!("machine exceeded {} steps for big-step cost {}", n, report.total_cost)))
                }
                Err(MachineError::Eval(e)) => return Err(e.into()),
            };
            if v != report.value {
                return Err(mismatch(format!("machine value {} differs from big-step value {}", v, report.value)));
            }
            Some(MachineSummary { steps, values_equal: true, within_bound: steps <= 3 * report.total_cost })
        }
    };
    let r = RunReport::new(&report, machine);
    match args.program.format {
        Format::Json => emit_json(out, &r),
        Format::Text => {
            emit(out, &format!("value: {}", if r.value.is_empty() { "\"\"" } else { &r.value }))?;
            emit(out, &format!("totalCost: {}", r.total_cost))?;
            for (site, st) in &r.rdp_by_site {
                emit(out, &format!("site {}: unfoldings {}, depth {}", site, st.unfoldings, st.max_depth))?;
            }
            if let Some(m) = &r.machine {
                emit(out, &format!("machine steps: {} (values equal)", m.steps))?;
            }
            Ok(())
        }
    }
}

fn cmd_normalize(args: &ProgramArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let p = load(args)?;
    typecheck(&p)?;
    let n = normalize_program(&p.term)
        .map_err(|e| Failure::Rejected { code: "NotPlainAffine".into(), span: Some(e.span), message: e.to_string() })?;
    match args.format {
        Format::Text => emit(out, pretty_print(&n).trim_end()),
        Format::Json => emit_json(out, &json!({"program": p.name, "source": pretty_print(&n)})),
    }
}

fn synthesize(p: &CorpusProgram) -> Result<ProgramBound, Failure> {
    program_bound(&p.derivation).map_err(|e| Failure::Synthesis(e.to_string()))
}

fn report_synthesis_failure(name: &str, f: &Failure, format: Format, out: &mut dyn Write) -> Result<(), Failure> {
    if let (Failure::Synthesis(reason), Format::Json) = (f, format) {
        emit_json(out, &BoundReport::failed(name, reason))?;
    }
    Ok(())
}

fn print_report(r: &BoundReport, out: &mut dyn Write) -> Result<(), Failure> {
    emit(out, &format!("program: {}", r.program))?;
    emit(out, &format!("mode: {}", r.mode))?;
    emit(out, &format!("cost: {}", r.cost_poly))?;
    emit(out, &format!("potential: {}", r.pot_poly))?;
    for c in &r.per_crec {
        let how = match (&c.phi_poly, &c.fallback) {
            (Some(phi), _) => format!("phi = {}", phi),
            (None, Some(why)) => format!("numeric ({})", why),
            (None, None) => "numeric".to_string(),
        };
        emit(out, &format!("  {}@{}: depth <= {}; {}", c.name, c.site, c.termination_poly, how))?;
    }
    Ok(())
}

fn cmd_bound(args: &BoundArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let p = checked(load(&args.program)?)?;
    let b = match synthesize(&p) {
        Ok(b) => b,
        Err(f) => {
            report_synthesis_failure(&p.name, &f, args.program.format, out)?;
            return Err(f);
        }
    };
    let report = BoundReport::new(&p.name, &b, CheckCounts::default());
    let at = match &args.lengths {
        None => None,
        Some(ls) if ls.len() != b.inputs.len() => {
            return Err(Failure::Usage(format!("{} lengths given for {} inputs", ls.len(), b.inputs.len())))
        }
        Some(ls) => {
            let (c, q) = b.eval_at(ls, &p.oracles).map_err(|e| Failure::Synthesis(e.to_string()))?;
            Some((ls.clone(), c, q))
        }
    };
    match args.program.format {
        Format::Json => {
            let mut v = serde_json::to_value(&report).expect("report serializes");
            if let Some((ls, c, q)) = at {
                v["evaluation"] = json!({"lengths": ls, "cost": c.to_string(), "pot": q.to_string()});
            }
            emit_json(out, &v)
        }
        Format::Text => {
            print_report(&report, out)?;
            if let Some((ls, c, q)) = at {
                emit(out, &format!("at lengths {:?}: cost {}, potential {}", ls, c, q))?;
            }
            Ok(())
        }
    }
}

/// Replaces the program's bound with the polynomials of a saved report.
fn override_bound(b: &mut ProgramBound, path: &Path) -> Result<(), Failure> {
    let text = read(path)?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {}", path.display(), e)))?;
    let ctx = b.inputs.iter().fold(PolyContext::new(), |ctx, (x, t)| ctx.with_var(x, t.clone()));
    let field = |key: &str| {
        let s = v[key].as_str().ok_or_else(|| Failure::Usage(format!("{}: missing `{}`", path.display(), key)))?;
        parse_poly(s, &ctx).map_err(|e| Failure::Usage(format!("{}: {}: {}", path.display(), key, e)))
    };
    b.cost = field("costPoly")?;
    b.pot = field("potPoly")?;
    Ok(())
}

fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let p = checked(load(&args.program)?)?;
    if p.ty.uncurry().0.iter().any(|a| !a.is_base()) {
        return Err(Failure::Usage(format!("cannot sample inputs of type {}", p.ty)));
    }
    let mut b = match synthesize(&p) {
        Ok(b) => b,
        Err(f) => {
            report_synthesis_failure(&p.name, &f, args.program.format, out)?;
            return Err(f);
        }
    };
    if let Some(path) = &args.bound {
        override_bound(&mut b, path)?;
    }
    let grid = args.grid.clone().unwrap_or_else(|| GRID.to_vec());
    let summary: CheckSummary =
        check_bounding(&p, &b, &grid, args.trials, args.seed).map_err(|e| Failure::Synthesis(e.to_string()))?;
    let depth_violations = termination_sweep(&p, &b, &grid, args.trials, args.seed)?;
    let violations = summary.violations.len() + depth_violations;
    let report = BoundReport::new(&p.name, &b, CheckCounts { trials: summary.trials, violations });
    match args.program.format {
        Format::Json => {
            let mut v = serde_json::to_value(&report).expect("report serializes");
            v["counterexamples"] = serde_json::to_value(&summary.violations).expect("violations serialize");
            emit_json(out, &v)?;
        }
        Format::Text => {
            print_report(&report, out)?;
            emit(out, &format!("trials: {}, violations: {}", summary.trials, violations))?;
            for v in summary.violations.iter().take(5) {
                emit(
                    out,
                    &format!(
                        "  inputs {:?}: cost {} > {} or length {} > {}",
                        v.inputs, v.measured_cost, v.bound_cost, v.measured_length, v.bound_length
                    ),
                )?;
            }
        }
    }
    if violations > 0 {
        return Err(Failure::Violated(format!("{} violations in {} trials", violations, summary.trials)));
    }
    Ok(())
}

/// Depth checks over the same kind of sweep, with a derived seed.
fn termination_sweep(p: &CorpusProgram, b: &ProgramBound, grid: &[u64], trials: usize, seed: u64) -> Result<usize, Failure> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shapes = input_shapes(&p.name, p.arity());
    let mut bad = 0;
    for &n in grid {
        for _ in 0..trials.min(20) {
            let args: Vec<Bits> = shapes.iter().map(|s| random_input(&mut rng, *s, n as usize)).collect();
            let run = evaluate_applied(&p.term, &args, &p.oracles, None)?;
            let base = b.valuation(&args.iter().map(|a| a.len() as u64).collect::<Vec<_>>(), &p.oracles);
            bad += check_termination(b, &run, &base).len();
        }
    }
    Ok(bad)
}

fn cmd_corpus(args: &CorpusArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let programs = corpus::corpus_programs().map_err(|e| Failure::Io(e.to_string()))?;
    if let Some(dir) = &args.export {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {}", dir.display(), e)))?;
        for p in &programs {
            let write = |file: PathBuf, text: &str| std::fs::write(&file, text).map_err(|e| Failure::Io(format!("{}: {}", file.display(), e)));
            write(dir.join(format!("{}.atr", p.name)), &p.source)?;
            if p.oracles.iter().next().is_some() {
                let cfg: BTreeMap<String, &str> =
                    p.oracles.iter().filter_map(|b| Some((b.name.to_string(), b.builtin?.id()))).collect();
                write(dir.join(format!("{}.oracles.json", p.name)), &serde_json::to_string_pretty(&cfg).expect("map serializes"))?;
            }
        }
        return emit(out, &format!("wrote {} programs to {}", programs.len(), dir.display()));
    }
    match &args.name {
        Some(name) => {
            let p = programs
                .iter()
                .find(|p| &p.name == name)
                .ok_or_else(|| Failure::Io(format!("no corpus program `{}`", name)))?;
            match args.format {
                Format::Text => emit(out, p.source.trim_end()),
                Format::Json => emit_json(out, &json!({"program": p.name, "type": p.ty.to_string(), "source": p.source})),
            }
        }
        None => {
            let listing: Vec<(String, Type)> = programs.iter().map(|p| (p.name.clone(), p.ty.clone())).collect();
            match args.format {
                Format::Text => {
                    if let Some(dir) = std::env::var_os(CORPUS_DIR_VAR) {
                        emit(out, &format!("# from {}", Path::new(&dir).display()))?;
                    }
                    for (n, t) in &listing {
                        emit(out, &format!("{:<9} : {}", n, t))?;
                    }
                    Ok(())
                }
                Format::Json => emit_json(
                    out,
                    &listing.iter().map(|(n, t)| json!({"program": n, "type": t.to_string()})).collect::<Vec<_>>(),
                ),
            }
        }
    }
}

fn format_of(c: &Command) -> Format {
    match c {
        Command::Check(a) | Command::Normalize(a) => a.format,
        Command::Run(a) => a.program.format,
        Command::Bound(a) => a.program.format,
        Command::Verify(a) => a.program.format,
        Command::Corpus(a) => a.format,
    }
}

/// Runs one command, writing results to `out` and errors to `err`;
/// returns the exit code.
pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::Check(a) => cmd_check(a, out),
        Command::Run(a) => cmd_run(a, out),
        Command::Normalize(a) => cmd_normalize(a, out),
        Command::Bound(a) => cmd_bound(a, out),
        Command::Verify(a) => cmd_verify(a, out),
        Command::Corpus(a) => cmd_corpus(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            // These already printed a report in JSON mode.
            let reported = matches!(f, Failure::Violated(_))
                || matches!(f, Failure::Synthesis(_)) && matches!(cli.command, Command::Bound(_) | Command::Verify(_));
            if format_of(&cli.command) == Format::Json && !reported {
                let _ = writeln!(out, "{}", serde_json::to_string_pretty(&f.to_json()).expect("error serializes"));
            }
            let _ = writeln!(err, "error[{}]: {}", f.code(), f.message());
            f.exit_code()
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli, out, err),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
            } else {
                let _ = write!(out, "{}", e.render());
            }
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_with_args(std::iter::once("atr").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn list_sugar_encodes_after_positional() {
        let got = collect_inputs(&["01".into()], &["0,1".into(), "".into()]).unwrap();
        assert_eq!(got, vec![Bits::parse("01").unwrap(), Bits::parse("100110").unwrap(), Bits::empty()]);
        assert!(collect_inputs(&["2".into()], &[]).is_err());
    }

    #[test]
    fn check_corpus_program() {
        let (code, out, _) = run(&["check", "ins_sort"]);
        assert_eq!(code, 0);
        assert!(out.contains("N_eps -> N_eps"), "{}", out);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert_eq!(run(&["check", "/nonexistent/x.atr"]).0, 2);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(&["frobnicate"]).0, 2);
        assert_eq!(run(&["run", "reverse", "--unchecked"]).0, 2);
    }

    #[test]
    fn run_reports_cost_and_fuel() {
        let (code, out, _) = run(&["run", "ins_sort", "--list", "11,01,10", "--format", "json"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        let sorted = encode_list(&["01", "10", "11"].map(|s| Bits::parse(s).unwrap()));
        assert_eq!(v["value"], sorted.to_string());
        assert!(v["totalCost"].as_u64().unwrap() > 0);
        assert_eq!(run(&["run", "ins_sort", "--list", "11,01,10", "--fuel", "10"]).0, 3);
    }

    #[test]
    fn machine_engine_agrees() {
        let (code, out, err) = run(&["run", "reverse", "--list", "1,0", "--engine", "machine"]);
        assert_eq!(code, 0, "{}", err);
        assert!(out.contains("machine steps"));
    }

    #[test]
    fn bound_cons_is_symbolic() {
        let (code, out, _) = run(&["bound", "cons", "--format", "json", "--lengths", "2,3"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["mode"], "symbolic");
        assert!(v["evaluation"]["cost"].is_string());
    }
}
