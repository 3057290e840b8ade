//! Command-line front end for the invariant-shape pipeline.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 parse error,
//! 3 response budget exhausted, 4 shape insufficient, 5 check failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use invaris::ais::{AisError, InvariantTemplate, MemoryPool};
use invaris::config::AisConfig;
use invaris::interp::{run as run_program, Valuation};
use invaris::lang::{parse, Program};
use invaris::pipeline::{self, PredictReport, SolveReport};
use invaris::shapespace::{extract_fragments, Fragment};
use invaris::solver::{check_invariant, ConcreteInvariant, SolveError};
use invaris::synth::ShapePolynomial;

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_BUDGET: u8 = 3;
const EXIT_SHAPE_INSUFFICIENT: u8 = 4;
const EXIT_CHECK_FAILED: u8 = 5;

#[derive(Parser)]
#[command(
    name = "invaris",
    about = "Predict loop-invariant shapes with an immune-inspired engine and instantiate them from traces",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Trace budget for the solver.
    #[arg(long)]
    traces: Option<usize>,
    /// Input sampling range, inclusive, as `lo,hi`.
    #[arg(long)]
    range: Option<String>,
    /// Include constant-update fragments in the shape.
    #[arg(long)]
    include_constant_updates: bool,
}

impl ConfigArgs {
    fn build(&self) -> Result<AisConfig> {
        let mut cfg = AisConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            cfg.apply_kv_text(&text)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(traces) = self.traces {
            cfg.max_traces = traces;
        }
        if let Some(range) = &self.range {
            cfg.apply_kv("input_range", range)?;
        }
        if self.include_constant_updates {
            cfg.include_constant_updates = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Execute a program on given inputs and print the trace as JSON.
    Run {
        program: PathBuf,
        /// Input bindings, e.g. `a=6 b=4`.
        #[arg(value_name = "NAME=VALUE")]
        inputs: Vec<String>,
        /// Interpreter step budget.
        #[arg(long)]
        fuel: Option<u64>,
    },
    /// Store a known fragment/template pair in a memory file.
    Train {
        program: PathBuf,
        /// Fragment selector: an index or the assignment text.
        #[arg(long)]
        fragment: String,
        /// Template text, e.g. `x = x0 + 2*n`.
        #[arg(long)]
        template: String,
        /// Memory file to update (created if missing).
        #[arg(long)]
        memory: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Predict the invariant shape of a program.
    Predict {
        program: PathBuf,
        /// Memory file to recall from and learn into.
        #[arg(long)]
        memory: Option<PathBuf>,
        /// Emit one machine-readable JSON document instead of text.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Instantiate concrete invariants for every loop of a program.
    Solve {
        program: PathBuf,
        /// Shape document; when omitted the shape is predicted first.
        #[arg(long)]
        shape: Option<PathBuf>,
        /// Memory file backing the prediction.
        #[arg(long)]
        memory: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Check an invariant document against freshly sampled traces.
    Check {
        program: PathBuf,
        /// Invariant document produced by `solve`.
        #[arg(long)]
        invariant: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Show the cells of a memory file.
    Memory { memory: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run {
            program,
            inputs,
            fuel,
        } => cmd_run(&program, &inputs, fuel),
        Command::Train {
            program,
            fragment,
            template,
            memory,
            config,
        } => cmd_train(&program, &fragment, &template, &memory, &config.build()?),
        Command::Predict {
            program,
            memory,
            json,
            config,
        } => cmd_predict(&program, memory.as_deref(), json, &config.build()?),
        Command::Solve {
            program,
            shape,
            memory,
            json,
            config,
        } => cmd_solve(
            &program,
            shape.as_deref(),
            memory.as_deref(),
            json,
            &config.build()?,
        ),
        Command::Check {
            program,
            invariant,
            config,
        } => cmd_check(&program, &invariant, config.traces, &config.build()?),
        Command::Memory { memory } => cmd_memory(&memory),
    }
}

fn load_program(path: &Path) -> Result<Result<Program, u8>> {
    let source = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read program {}", path.display()))?;
    match parse(&source) {
        Ok(p) => Ok(Ok(p)),
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            Ok(Err(EXIT_PARSE))
        }
    }
}

fn load_pool(path: Option<&Path>, cfg: &AisConfig) -> Result<MemoryPool> {
    match path {
        Some(path) if path.exists() => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read memory {}", path.display()))?;
            Ok(MemoryPool::from_json_str(&text, cfg.capacity)?)
        }
        Some(path) => {
            eprintln!(
                "warning: memory file {} not found, starting empty",
                path.display()
            );
            Ok(MemoryPool::new(cfg.capacity))
        }
        None => {
            eprintln!("warning: no memory file given, starting empty");
            Ok(MemoryPool::new(cfg.capacity))
        }
    }
}

fn save_pool(path: &Path, pool: &MemoryPool) -> Result<()> {
    std::fs::write(path, pool.to_json_pretty())
        .with_context(|| format!("cannot write memory {}", path.display()))
}

fn cmd_run(program: &Path, inputs: &[String], fuel: Option<u64>) -> Result<u8> {
    let p = match load_program(program)? {
        Ok(p) => p,
        Err(code) => return Ok(code),
    };
    let mut valuation = Valuation::new();
    for binding in inputs {
        let (name, value) = binding
            .split_once('=')
            .ok_or_else(|| anyhow!("input '{binding}' is not of the form name=value"))?;
        let value = value
            .parse()
            .map_err(|_| anyhow!("input '{binding}' has a non-integer value"))?;
        valuation.set(name.trim().to_string(), value);
    }
    let fuel = fuel.unwrap_or_else(|| AisConfig::default().fuel);
    let trace = run_program(&p, &valuation, fuel)?;
    println!("{}", serde_json::to_string_pretty(&trace)?);
    Ok(EXIT_OK)
}

fn select_fragment(p: &Program, selector: &str) -> Result<Fragment> {
    let fragments = extract_fragments(p);
    if let Ok(index) = selector.parse::<usize>() {
        return fragments.get(index).cloned().ok_or_else(|| {
            anyhow!(
                "fragment index {index} out of range (0..{})",
                fragments.len()
            )
        });
    }
    let normalize = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
    let wanted = normalize(selector);
    fragments
        .iter()
        .find(|f| normalize(&f.render()) == wanted)
        .cloned()
        .ok_or_else(|| anyhow!("no fragment matches '{selector}'"))
}

fn cmd_train(
    program: &Path,
    selector: &str,
    template_text: &str,
    memory: &Path,
    cfg: &AisConfig,
) -> Result<u8> {
    let p = match load_program(program)? {
        Ok(p) => p,
        Err(code) => return Ok(code),
    };
    let fragment = select_fragment(&p, selector)?;
    if !fragment.in_loop() {
        return Err(anyhow!(
            "fragment '{}' is outside every loop and carries no invariant",
            fragment.render()
        ));
    }
    let template = InvariantTemplate::parse(template_text)?;
    let mut pool = load_pool(Some(memory), cfg)?;
    match invaris::ais::train(&mut pool, &fragment, template, cfg) {
        Ok(()) => {}
        Err(e @ AisError::OracleRejected { .. }) => {
            eprintln!("{e}");
            return Ok(EXIT_CHECK_FAILED);
        }
        Err(e) => return Err(e.into()),
    }
    save_pool(memory, &pool)?;
    println!(
        "trained: {}  |-  {}",
        fragment.render(),
        template_text.trim()
    );
    println!("memory: {} cell(s) in {}", pool.len(), memory.display());
    Ok(EXIT_OK)
}

fn print_predict_text(report: &PredictReport) {
    for outcome in &report.outcomes {
        let path = outcome
            .fragment
            .loop_path
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(".");
        match &outcome.result {
            Ok((template, stats)) => println!(
                "fragment [loop {path}] {:24} -> {}  (iterations={} mutations={} edits={} memory_hit={})",
                outcome.fragment.render(),
                template,
                stats.iterations,
                stats.mutations_applied,
                stats.edits_applied,
                stats.memory_hit
            ),
            Err(e) => println!(
                "fragment [loop {path}] {:24} -> unanswered: {e}",
                outcome.fragment.render()
            ),
        }
    }
    println!(
        "shape ({} monomial(s) + constant, over {}):",
        report.shape.len(),
        report.vars.join(", ")
    );
    println!("  {}", report.shape.render_symbolic());
    println!("shape-json: {}", report.shape.to_json());
}

fn predict_json(report: &PredictReport) -> serde_json::Value {
    serde_json::json!({
        "fragments": report.outcomes.iter().map(|o| {
            let base = serde_json::json!({
                "fragment": o.fragment.render(),
                "loop_path": o.fragment.loop_path,
            });
            let mut obj = base.as_object().cloned().expect("object");
            match &o.result {
                Ok((template, stats)) => {
                    obj.insert("template".into(), template.render().into());
                    obj.insert("stats".into(), serde_json::to_value(stats).expect("stats"));
                }
                Err(e) => {
                    obj.insert("error".into(), e.to_string().into());
                }
            }
            serde_json::Value::Object(obj)
        }).collect::<Vec<_>>(),
        "skipped_outside_loops": report.skipped_outside_loops,
        "vars": report.vars,
        "shape": report.shape.to_json(),
        "shape_text": report.shape.render_symbolic(),
    })
}

fn cmd_predict(program: &Path, memory: Option<&Path>, json: bool, cfg: &AisConfig) -> Result<u8> {
    let p = match load_program(program)? {
        Ok(p) => p,
        Err(code) => return Ok(code),
    };
    let mut pool = load_pool(memory, cfg)?;
    let report = pipeline::predict(&p, &mut pool, cfg);
    if let Some(path) = memory {
        save_pool(path, &pool)?;
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&predict_json(&report))?);
    } else {
        print_predict_text(&report);
    }
    Ok(if report.failures > 0 {
        EXIT_BUDGET
    } else {
        EXIT_OK
    })
}

fn solve_json(report: &SolveReport) -> serde_json::Value {
    serde_json::json!({
        "holdout_traces": report.holdout_traces,
        "loops": report.loops.iter().map(|l| match &l.result {
            Ok(sol) => serde_json::json!({
                "loop": l.loop_id,
                "invariants": sol.invariants.iter().map(|i| i.to_json()).collect::<Vec<_>>(),
                "invariant_text": sol.invariants.iter().map(|i| i.render()).collect::<Vec<_>>(),
                "traces_used": sol.traces_used,
                "rows_used": sol.rows_used,
                "rows_skipped": sol.rows_skipped,
                "holdout_ok": sol.holdout_ok,
                "postcondition_ok": sol.postcondition_ok,
            }),
            Err(e) => serde_json::json!({
                "loop": l.loop_id,
                "error": e.to_string(),
            }),
        }).collect::<Vec<_>>(),
    })
}

fn cmd_solve(
    program: &Path,
    shape_file: Option<&Path>,
    memory: Option<&Path>,
    json: bool,
    cfg: &AisConfig,
) -> Result<u8> {
    let p = match load_program(program)? {
        Ok(p) => p,
        Err(code) => return Ok(code),
    };
    if p.loop_ids().is_empty() {
        return Err(anyhow!("program has no loops; nothing to solve"));
    }

    let mut budget_exhausted = false;
    let shape: ShapePolynomial = match shape_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read shape {}", path.display()))?;
            let value: serde_json::Value = match serde_json::from_str(&text) {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("{}: {e}", path.display());
                    return Ok(EXIT_PARSE);
                }
            };
            match ShapePolynomial::from_json(&value) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{}: {e}", path.display());
                    return Ok(EXIT_PARSE);
                }
            }
        }
        None => {
            let mut pool = load_pool(memory, cfg)?;
            let report = pipeline::predict(&p, &mut pool, cfg);
            if let Some(path) = memory {
                save_pool(path, &pool)?;
            }
            budget_exhausted = report.failures > 0;
            if !json {
                println!("predicted shape: {}", report.shape.render_symbolic());
            }
            report.shape
        }
    };

    let report = pipeline::solve(&p, &shape, cfg)?;
    let mut insufficient = false;
    let mut check_failed = false;
    if json {
        println!("{}", serde_json::to_string_pretty(&solve_json(&report))?);
        for l in &report.loops {
            match &l.result {
                Ok(sol) => check_failed |= !sol.holdout_ok,
                Err(SolveError::EmptyNullSpace) => insufficient = true,
                Err(_) => insufficient = true,
            }
        }
    } else {
        for l in &report.loops {
            match &l.result {
                Ok(sol) => {
                    for inv in &sol.invariants {
                        println!("loop {}: {}", l.loop_id, inv.render());
                    }
                    println!(
                        "loop {}: held-out check {} over {} trace(s){}  [traces_used={} rows={} skipped={}]",
                        l.loop_id,
                        if sol.holdout_ok { "passed" } else { "FAILED" },
                        report.holdout_traces,
                        match sol.postcondition_ok {
                            Some(true) => ", postcondition holds at exit",
                            Some(false) => ", postcondition FAILS at exit",
                            None => "",
                        },
                        sol.traces_used,
                        sol.rows_used,
                        sol.rows_skipped,
                    );
                    check_failed |= !sol.holdout_ok;
                }
                Err(e) => {
                    println!("loop {}: {e}", l.loop_id);
                    insufficient = true;
                }
            }
        }
    }

    Ok(if insufficient {
        EXIT_SHAPE_INSUFFICIENT
    } else if check_failed {
        EXIT_CHECK_FAILED
    } else if budget_exhausted {
        EXIT_BUDGET
    } else {
        EXIT_OK
    })
}

fn cmd_check(
    program: &Path,
    invariant: &Path,
    traces: Option<usize>,
    cfg: &AisConfig,
) -> Result<u8> {
    let p = match load_program(program)? {
        Ok(p) => p,
        Err(code) => return Ok(code),
    };
    let text = std::fs::read_to_string(invariant)
        .with_context(|| format!("cannot read invariant {}", invariant.display()))?;
    let value: serde_json::Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{}: {e}", invariant.display());
            return Ok(EXIT_PARSE);
        }
    };
    let inv = match ConcreteInvariant::from_json(&value) {
        Ok(i) => i,
        Err(e) => {
            eprintln!("{}: {e}", invariant.display());
            return Ok(EXIT_PARSE);
        }
    };

    let count = traces.unwrap_or(cfg.holdout_traces).max(1);
    let inputs = invaris::interp::sample_inputs(&p, count, cfg.input_range, cfg.seed)?;
    let mut all_hold = true;
    let mut post_all = p.post.as_ref().map(|_| true);
    let mut snapshots = 0usize;
    for v in &inputs {
        let trace = run_program(&p, v, cfg.fuel)?;
        let outcome = check_invariant(&inv, &trace, p.post.as_ref(), cfg.exponent_cap);
        all_hold &= outcome.holds;
        snapshots += outcome.snapshots_checked;
        if let (Some(acc), Some(got)) = (post_all.as_mut(), outcome.postcondition_holds) {
            *acc &= got;
        }
    }
    println!(
        "invariant {}: {} on {} trace(s), {} snapshot(s){}",
        inv.render(),
        if all_hold { "holds" } else { "VIOLATED" },
        inputs.len(),
        snapshots,
        match post_all {
            Some(true) => ", postcondition holds at exit",
            Some(false) => ", postcondition FAILS at exit",
            None => "",
        }
    );
    Ok(if all_hold { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_memory(memory: &Path) -> Result<u8> {
    if !memory.exists() {
        println!("0 cells");
        return Ok(EXIT_OK);
    }
    let text = std::fs::read_to_string(memory)
        .with_context(|| format!("cannot read memory {}", memory.display()))?;
    let pool = match MemoryPool::from_json_str(&text, usize::MAX) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{}: {e}", memory.display());
            return Ok(EXIT_PARSE);
        }
    };
    println!("{} cells", pool.len());
    for (i, cell) in pool.cells().iter().enumerate() {
        println!(
            "  [{i}] {:24} |- {:28} hits={} age={}",
            cell.pattern.render(),
            cell.template.render(),
            cell.hits,
            cell.created_at
        );
    }
    Ok(EXIT_OK)
}
