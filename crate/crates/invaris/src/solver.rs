//! Trace-based exact instantiation: evaluate the shape's monomials on
//! loop-head snapshots, compute the rational null space of the resulting
//! system, and emit normalized, re-checked concrete invariants.
//!
//! Trace batches are consumed until the null-space dimension is unchanged
//! across two consecutive batches, which guards against spurious
//! invariants read off too little data. Everything is exact; no rounding
//! exists anywhere in this module.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::interp::{eval_cond, Trace, Valuation};
use crate::lang::{Cond, Ident, LoopId};
use crate::numeric::{int_pow, rat_display, rat_pow};
use crate::synth::{Factor, GeneralizedMonomial, ParamTerm, ShapePolynomial};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("no snapshots recorded for loop {0}")]
    NoSnapshots(LoopId),
    #[error("the shape is empty")]
    EmptyShape,
    #[error("no traces supplied")]
    NoTraces,
    #[error("the shape cannot express an invariant for these traces (empty null space)")]
    EmptyNullSpace,
    #[error("null space did not stabilize within {traces} traces")]
    NotStabilized { traces: usize },
    #[error("invalid invariant document: {0}")]
    InvalidDocument(String),
}

/// Why a monomial could not be evaluated on a snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalFailure {
    /// An exponent fell outside `[0, cap]`; the row is skipped.
    ExponentOverCap,
    Unbound(Ident),
}

/// Evaluates one monomial on a snapshot valuation, with input values for
/// the param columns. Exponents are checked against `cap` before any
/// power is taken.
pub fn evaluate_monomial(
    m: &GeneralizedMonomial,
    vals: &Valuation,
    params: &Valuation,
    cap: u64,
) -> Result<BigRational, EvalFailure> {
    let mut acc = BigRational::one();
    let lookup = |env: &Valuation, v: &Ident| -> Result<BigInt, EvalFailure> {
        env.get(v)
            .cloned()
            .ok_or_else(|| EvalFailure::Unbound(v.clone()))
    };
    let checked_exp = |e: &BigInt| -> Result<u64, EvalFailure> {
        if e.is_negative() {
            return Err(EvalFailure::ExponentOverCap);
        }
        e.to_u64()
            .filter(|&e| e <= cap)
            .ok_or(EvalFailure::ExponentOverCap)
    };
    for f in m.factors() {
        let factor_value: BigRational = match f {
            Factor::VarPow { var, power } => {
                BigRational::from(int_pow(&lookup(vals, var)?, u64::from(*power)))
            }
            Factor::VarExpVar { base, exponent } => {
                let b = lookup(vals, base)?;
                let e = checked_exp(&lookup(vals, exponent)?)?;
                BigRational::from(int_pow(&b, e))
            }
            Factor::VarExpExp {
                base,
                inner_base,
                inner_exponent,
            } => {
                let b = lookup(vals, base)?;
                let inner = checked_exp(&lookup(vals, inner_exponent)?)?;
                let outer = checked_exp(&int_pow(inner_base, inner))?;
                BigRational::from(int_pow(&b, outer))
            }
            Factor::ConstExpVar { base, exponent } => {
                let e = checked_exp(&lookup(vals, exponent)?)?;
                rat_pow(base, e)
            }
            Factor::Param(p) => match p {
                ParamTerm::One => BigRational::one(),
                ParamTerm::Var(v) => BigRational::from(lookup(params, v)?),
                ParamTerm::Prod(a, b) => BigRational::from(lookup(params, a)? * lookup(params, b)?),
                ParamTerm::Exp(a, b) => {
                    let base = lookup(params, a)?;
                    let e = checked_exp(&lookup(params, b)?)?;
                    BigRational::from(int_pow(&base, e))
                }
            },
        };
        acc *= factor_value;
    }
    Ok(acc)
}

/// An exact linear system: one labeled column per shape monomial and
/// param term, one row per usable loop-head snapshot.
#[derive(Debug, Clone)]
pub struct RationalMatrix {
    pub columns: Vec<GeneralizedMonomial>,
    pub rows: Vec<Vec<BigRational>>,
    /// Snapshots dropped because some column exceeded the exponent cap.
    pub skipped_rows: usize,
}

impl RationalMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }
}

/// The full column list for a shape: its monomials followed by the param
/// terms. The shape's constant slot is realized as the `1` param column.
pub fn system_columns(
    shape: &ShapePolynomial,
    param_terms: &[ParamTerm],
) -> Vec<GeneralizedMonomial> {
    let mut columns: Vec<GeneralizedMonomial> = shape.monomials().to_vec();
    for p in param_terms {
        if !shape.includes_constant && *p == ParamTerm::One {
            continue;
        }
        let col = GeneralizedMonomial::param(p.clone());
        if !columns.contains(&col) {
            columns.push(col);
        }
    }
    columns
}

/// Builds the system for `loop_id` from every snapshot in `traces`.
pub fn build_system(
    shape: &ShapePolynomial,
    traces: &[Trace],
    loop_id: LoopId,
    param_terms: &[ParamTerm],
    cap: u64,
) -> Result<RationalMatrix, SolveError> {
    if shape.is_empty() && !shape.includes_constant {
        return Err(SolveError::EmptyShape);
    }
    if traces.is_empty() {
        return Err(SolveError::NoTraces);
    }
    let columns = system_columns(shape, param_terms);
    let mut matrix = RationalMatrix {
        columns,
        rows: Vec::new(),
        skipped_rows: 0,
    };
    let mut saw_snapshot = false;
    for trace in traces {
        for snap in trace.snapshots_for(loop_id) {
            saw_snapshot = true;
            append_row(&mut matrix, &snap.vars, &trace.inputs, cap);
        }
    }
    if !saw_snapshot {
        return Err(SolveError::NoSnapshots(loop_id));
    }
    Ok(matrix)
}

fn append_row(matrix: &mut RationalMatrix, vals: &Valuation, inputs: &Valuation, cap: u64) {
    let mut row = Vec::with_capacity(matrix.columns.len());
    for col in &matrix.columns {
        match evaluate_monomial(col, vals, inputs, cap) {
            Ok(v) => row.push(v),
            Err(_) => {
                matrix.skipped_rows += 1;
                return;
            }
        }
    }
    matrix.rows.push(row);
}

/// Exact basis of `{v : M v = 0}` by Gauss-Jordan elimination with a
/// deterministic pivot order: leftmost column first, smallest row index
/// first. Basis vectors correspond to the free columns in column order.
pub fn null_space(matrix: &RationalMatrix) -> Vec<Vec<BigRational>> {
    let cols = matrix.n_cols();
    let mut rows: Vec<Vec<BigRational>> = matrix.rows.clone();
    let n_rows = rows.len();

    let mut pivot_of_col: Vec<Option<usize>> = vec![None; cols];
    let mut pivot_row = 0usize;
    for col in 0..cols {
        if pivot_row >= n_rows {
            break;
        }
        let Some(found) = (pivot_row..n_rows).find(|&r| !rows[r][col].is_zero()) else {
            continue;
        };
        rows.swap(pivot_row, found);
        let inv = rows[pivot_row][col].recip();
        for x in &mut rows[pivot_row][col..] {
            *x *= &inv;
        }
        let pivot_vals = rows[pivot_row].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r == pivot_row || row[col].is_zero() {
                continue;
            }
            let factor = row[col].clone();
            for (x, p) in row[col..].iter_mut().zip(&pivot_vals[col..]) {
                *x -= &factor * p;
            }
        }
        pivot_of_col[col] = Some(pivot_row);
        pivot_row += 1;
    }

    let mut basis = Vec::new();
    for free_col in 0..cols {
        if pivot_of_col[free_col].is_some() {
            continue;
        }
        let mut v = vec![BigRational::zero(); cols];
        v[free_col] = BigRational::one();
        for (col, pivot) in pivot_of_col.iter().enumerate() {
            if let Some(r) = pivot {
                v[col] = -rows[*r][free_col].clone();
            }
        }
        basis.push(v);
    }
    basis
}

/// A solved invariant: exact coefficients over the system columns,
/// normalized to coprime integers with a positive leading coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcreteInvariant {
    pub loop_id: LoopId,
    /// Nonzero coefficients in column order.
    pub terms: Vec<(GeneralizedMonomial, BigRational)>,
}

impl ConcreteInvariant {
    pub fn coefficient(&self, m: &GeneralizedMonomial) -> BigRational {
        self.terms
            .iter()
            .find(|(col, _)| col == m)
            .map(|(_, c)| c.clone())
            .unwrap_or_else(BigRational::zero)
    }

    /// Text form such as `x*u + y*v - a*b = 0`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, (m, c)) in self.terms.iter().enumerate() {
            let negative = c.is_negative();
            let abs = c.abs();
            if i == 0 {
                if negative {
                    out.push('-');
                }
            } else {
                out.push_str(if negative { " - " } else { " + " });
            }
            let is_one_monomial = m.factors() == [Factor::Param(ParamTerm::One)];
            if abs.is_one() && !is_one_monomial {
                out.push_str(&m.render());
            } else if is_one_monomial {
                out.push_str(&rat_display(&abs));
            } else {
                out.push_str(&format!("{}*{}", rat_display(&abs), m.render()));
            }
        }
        out.push_str(" = 0");
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "loop": self.loop_id,
            "terms": self.terms.iter().map(|(m, c)| serde_json::json!({
                "label": m.render(),
                "monomial": crate::synth::monomial_to_json(m),
                "num": c.numer().to_string(),
                "den": c.denom().to_string(),
            })).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, SolveError> {
        let invalid = || SolveError::InvalidDocument("malformed invariant".into());
        let obj = v.as_object().ok_or_else(invalid)?;
        let loop_id = LoopId(
            obj.get("loop")
                .and_then(|l| l.as_u64())
                .ok_or_else(invalid)? as u32,
        );
        let mut terms = Vec::new();
        for t in obj
            .get("terms")
            .and_then(|t| t.as_array())
            .ok_or_else(invalid)?
        {
            let m = crate::synth::monomial_from_json(t.get("monomial").ok_or_else(invalid)?)
                .map_err(|_| invalid())?;
            let num: BigInt = t
                .get("num")
                .and_then(|s| s.as_str())
                .and_then(|s| s.parse().ok())
                .ok_or_else(invalid)?;
            let den: BigInt = t
                .get("den")
                .and_then(|s| s.as_str())
                .and_then(|s| s.parse().ok())
                .ok_or_else(invalid)?;
            if den.is_zero() {
                return Err(invalid());
            }
            terms.push((m, BigRational::new(num, den)));
        }
        Ok(ConcreteInvariant { loop_id, terms })
    }
}

/// Scales a rational vector to coprime integers with the first nonzero
/// coefficient positive.
pub fn normalize_vector(v: &[BigRational]) -> Vec<BigRational> {
    let mut denom_lcm = BigInt::one();
    for x in v {
        if !x.is_zero() {
            denom_lcm = denom_lcm.lcm(x.denom());
        }
    }
    let scaled: Vec<BigInt> = v
        .iter()
        .map(|x| (x * BigRational::from(denom_lcm.clone())).to_integer())
        .collect();
    let mut g = BigInt::zero();
    for x in &scaled {
        g = g.gcd(x);
    }
    if g.is_zero() {
        return v.to_vec();
    }
    let sign = scaled
        .iter()
        .find(|x| !x.is_zero())
        .map(|x| {
            if x.is_negative() {
                -BigInt::one()
            } else {
                BigInt::one()
            }
        })
        .unwrap_or_else(BigInt::one);
    let g = g * sign;
    scaled
        .into_iter()
        .map(|x| BigRational::from(x / &g))
        .collect()
}

/// Instantiation outcome, including how much data was needed.
#[derive(Debug, Clone)]
pub struct Instantiation {
    pub invariants: Vec<ConcreteInvariant>,
    pub traces_used: usize,
    pub rows_used: usize,
    pub rows_skipped: usize,
    /// Null-space dimension after each consumed batch.
    pub dim_history: Vec<usize>,
}

/// Consumes `traces` in batches of `batch` until the null-space dimension
/// is unchanged across two consecutive batches, then normalizes each basis
/// vector and re-checks it against every snapshot of every supplied trace
/// (consumed or not).
pub fn instantiate(
    shape: &ShapePolynomial,
    traces: &[Trace],
    loop_id: LoopId,
    param_terms: &[ParamTerm],
    batch: usize,
    cap: u64,
) -> Result<Instantiation, SolveError> {
    if traces.is_empty() {
        return Err(SolveError::NoTraces);
    }
    let batch = batch.max(1);
    let columns = system_columns(shape, param_terms);
    if columns.is_empty() {
        return Err(SolveError::EmptyShape);
    }
    let mut matrix = RationalMatrix {
        columns,
        rows: Vec::new(),
        skipped_rows: 0,
    };

    let mut dim_history: Vec<usize> = Vec::new();
    let mut consumed = 0usize;
    let mut saw_snapshot = false;
    let mut stable: Option<Vec<Vec<BigRational>>> = None;

    while consumed < traces.len() {
        let upto = (consumed + batch).min(traces.len());
        for trace in &traces[consumed..upto] {
            for snap in trace.snapshots_for(loop_id) {
                saw_snapshot = true;
                append_row(&mut matrix, &snap.vars, &trace.inputs, cap);
            }
        }
        consumed = upto;
        if !saw_snapshot {
            continue;
        }
        let basis = null_space(&matrix);
        dim_history.push(basis.len());
        if basis.is_empty() {
            return Err(SolveError::EmptyNullSpace);
        }
        let n = dim_history.len();
        if n >= 2 && dim_history[n - 1] == dim_history[n - 2] {
            stable = Some(basis);
            break;
        }
    }

    if !saw_snapshot {
        return Err(SolveError::NoSnapshots(loop_id));
    }
    let basis = stable.ok_or(SolveError::NotStabilized {
        traces: traces.len(),
    })?;

    let mut invariants = Vec::new();
    for vector in basis {
        let normalized = normalize_vector(&vector);
        let inv = ConcreteInvariant {
            loop_id,
            terms: matrix
                .columns
                .iter()
                .cloned()
                .zip(normalized)
                .filter(|(_, c)| !c.is_zero())
                .collect(),
        };
        // Every emitted invariant must vanish on all supplied traces,
        // including the ones never consumed by the system.
        if traces
            .iter()
            .all(|t| check_invariant(&inv, t, None, cap).holds)
        {
            invariants.push(inv);
        }
    }
    if invariants.is_empty() {
        return Err(SolveError::EmptyNullSpace);
    }
    Ok(Instantiation {
        invariants,
        traces_used: consumed,
        rows_used: matrix.n_rows(),
        rows_skipped: matrix.skipped_rows,
        dim_history,
    })
}

/// Result of checking one invariant against one trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckOutcome {
    /// True iff the invariant evaluates to exactly zero on every snapshot
    /// of its loop in the trace.
    pub holds: bool,
    pub snapshots_checked: usize,
    /// Postcondition evaluated on the exit valuation, when one was given.
    pub postcondition_holds: Option<bool>,
}

/// Evaluates the invariant on every snapshot of its loop; any evaluation
/// failure counts as a violation, never a crash. When `post` is given it
/// is additionally evaluated on the exit valuation, which together with
/// the (failed) loop condition at exit is the trace-level reading of
/// "invariant and exit condition give the postcondition".
pub fn check_invariant(
    inv: &ConcreteInvariant,
    trace: &Trace,
    post: Option<&Cond>,
    cap: u64,
) -> CheckOutcome {
    let mut holds = true;
    let mut checked = 0usize;
    for snap in trace.snapshots_for(inv.loop_id) {
        checked += 1;
        let mut acc = BigRational::zero();
        let mut ok = true;
        for (m, c) in &inv.terms {
            match evaluate_monomial(m, &snap.vars, &trace.inputs, cap) {
                Ok(v) => acc += c * v,
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok || !acc.is_zero() {
            holds = false;
        }
    }
    let postcondition_holds = post.map(|p| eval_cond(p, &trace.exit).unwrap_or(false));
    CheckOutcome {
        holds,
        snapshots_checked: checked,
        postcondition_holds,
    }
}

/// Map view of the nonzero coefficients, keyed by rendered label.
pub fn coefficient_map(inv: &ConcreteInvariant) -> BTreeMap<String, BigRational> {
    inv.terms
        .iter()
        .map(|(m, c)| (m.render(), c.clone()))
        .collect()
}
