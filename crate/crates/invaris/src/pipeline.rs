//! End-to-end orchestration: predict a shape for a program, then solve it
//! against sampled traces. The CLI is a thin wrapper over this module, so
//! the whole flow is exercised directly in tests.

use thiserror::Error;

use crate::ais::{respond, AisError, InvariantTemplate, MemoryPool, ResponseStats};
use crate::config::AisConfig;
use crate::interp::{run, sample_inputs, InterpError, Trace};
use crate::lang::{LoopId, Program};
use crate::shapespace::{encode, extract_fragments, Fragment, ShapeVector};
use crate::solver::{check_invariant, instantiate, ConcreteInvariant, SolveError};
use crate::synth::{default_param_terms, synthesize_shape, ShapePolynomial};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("program has no loops")]
    NoLoops,
}

/// How one fragment fared during prediction.
#[derive(Debug, Clone)]
pub struct FragmentOutcome {
    pub fragment: Fragment,
    pub pattern: Option<ShapeVector>,
    pub result: Result<(InvariantTemplate, ResponseStats), String>,
}

/// Everything `predict` produces for a program.
#[derive(Debug)]
pub struct PredictReport {
    /// In-loop fragments in program order, with their responses.
    pub outcomes: Vec<FragmentOutcome>,
    /// Fragments outside every loop, skipped by construction.
    pub skipped_outside_loops: usize,
    pub shape: ShapePolynomial,
    /// Variables substituted for the iteration counter.
    pub vars: Vec<String>,
    /// Fragments whose response exhausted the budget.
    pub failures: usize,
}

/// Presents every in-loop fragment of `p` to the pool and synthesizes the
/// invariant shape from the successful responses. The pool learns as it
/// answers; persisting it afterwards is the caller's choice.
pub fn predict(p: &Program, pool: &mut MemoryPool, cfg: &AisConfig) -> PredictReport {
    let fragments = extract_fragments(p);
    let vars = p.body_vars();
    let mut outcomes = Vec::new();
    let mut skipped = 0usize;
    let mut failures = 0usize;

    for fragment in fragments {
        if !fragment.in_loop() {
            skipped += 1;
            continue;
        }
        let pattern = encode(&fragment).ok();
        let result = match respond(pool, &fragment, cfg) {
            Ok(ok) => Ok(ok),
            Err(e) => {
                failures += 1;
                Err(e.to_string())
            }
        };
        outcomes.push(FragmentOutcome {
            fragment,
            pattern,
            result,
        });
    }

    let pairs: Vec<(&Fragment, InvariantTemplate)> = outcomes
        .iter()
        .filter_map(|o| {
            o.result
                .as_ref()
                .ok()
                .map(|(t, _)| (&o.fragment, t.clone()))
        })
        .collect();
    let shape = synthesize_shape(&pairs, &vars, cfg.include_constant_updates);

    PredictReport {
        outcomes,
        skipped_outside_loops: skipped,
        shape,
        vars,
        failures,
    }
}

/// Trains the pool on a single known (fragment, template) pair.
pub fn train_pair(
    pool: &mut MemoryPool,
    fragment: &Fragment,
    template: InvariantTemplate,
    cfg: &AisConfig,
) -> Result<(), AisError> {
    crate::ais::train(pool, fragment, template, cfg)
}

/// Solve results for one loop of the program.
#[derive(Debug)]
pub struct LoopReport {
    pub loop_id: LoopId,
    pub result: Result<LoopSolution, SolveError>,
}

#[derive(Debug)]
pub struct LoopSolution {
    pub invariants: Vec<ConcreteInvariant>,
    pub traces_used: usize,
    pub rows_used: usize,
    pub rows_skipped: usize,
    /// True iff every invariant vanishes on every held-out trace.
    pub holdout_ok: bool,
    /// Postcondition evaluated at exit of every held-out trace, when the
    /// program declares one.
    pub postcondition_ok: Option<bool>,
}

/// Full solve output: per-loop reports plus the held-out traces used.
#[derive(Debug)]
pub struct SolveReport {
    pub loops: Vec<LoopReport>,
    pub holdout_traces: usize,
}

/// Samples traces, instantiates the shape for every loop of the program,
/// and re-checks each invariant on freshly seeded held-out traces.
pub fn solve(
    p: &Program,
    shape: &ShapePolynomial,
    cfg: &AisConfig,
) -> Result<SolveReport, PipelineError> {
    let loop_ids = p.loop_ids();
    if loop_ids.is_empty() {
        return Err(PipelineError::NoLoops);
    }
    let param_terms = default_param_terms(&p.params);

    let inputs = sample_inputs(p, cfg.max_traces, cfg.input_range, cfg.seed)?;
    let traces: Vec<Trace> = inputs
        .iter()
        .map(|v| run(p, v, cfg.fuel))
        .collect::<Result<_, _>>()?;

    // Held-out traces come from an independent seed stream.
    let holdout_inputs = sample_inputs(
        p,
        cfg.holdout_traces,
        cfg.input_range,
        cfg.seed.wrapping_add(0x5EED_0FF5),
    )?;
    let holdout: Vec<Trace> = holdout_inputs
        .iter()
        .map(|v| run(p, v, cfg.fuel))
        .collect::<Result<_, _>>()?;

    let mut loops = Vec::new();
    for loop_id in loop_ids {
        let result = instantiate(
            shape,
            &traces,
            loop_id,
            &param_terms,
            cfg.trace_batch,
            cfg.exponent_cap,
        )
        .map(|inst| {
            let mut holdout_ok = true;
            let mut post_ok: Option<bool> = p.post.as_ref().map(|_| true);
            for inv in &inst.invariants {
                for t in &holdout {
                    let outcome = check_invariant(inv, t, p.post.as_ref(), cfg.exponent_cap);
                    holdout_ok &= outcome.holds;
                    if let (Some(acc), Some(got)) = (post_ok.as_mut(), outcome.postcondition_holds)
                    {
                        *acc &= got;
                    }
                }
            }
            LoopSolution {
                invariants: inst.invariants,
                traces_used: inst.traces_used,
                rows_used: inst.rows_used,
                rows_skipped: inst.rows_skipped,
                holdout_ok,
                postcondition_ok: post_ok,
            }
        });
        loops.push(LoopReport { loop_id, result });
    }
    Ok(SolveReport {
        loops,
        holdout_traces: holdout.len(),
    })
}
