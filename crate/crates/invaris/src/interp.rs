//! Big-integer interpreter that records loop-head snapshots.
//!
//! Division is floor division and `odd(e)` means `e mod 2 != 0` under the
//! matching floor remainder, so the binary decompositions in the corpus
//! programs behave the way their invariants require.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::lang::{BinOp, CmpOp, Cond, Expr, Ident, LoopId, Program, Stmt};
use crate::numeric::int_pow;

/// Largest exponent the interpreter will evaluate in `exp(b, e)`.
const MAX_EXP: u64 = 1 << 20;

#[derive(Debug, Error)]
pub enum InterpError {
    #[error("input valuation is missing '{0}'")]
    MissingInput(Ident),
    #[error("unknown input '{0}' (not a program input)")]
    UnknownInput(Ident),
    #[error("precondition does not hold on the given inputs")]
    PreconditionViolated,
    #[error("division or modulo by zero")]
    DivisionByZero,
    #[error("negative exponent in exp()")]
    NegativeExponent,
    #[error("exponent too large in exp()")]
    ExponentTooLarge,
    #[error("identifier '{0}' read before assignment")]
    Unbound(Ident),
    #[error("step budget of {0} exhausted (program may not terminate)")]
    FuelExhausted(u64),
    #[error("empty sampling range")]
    EmptyRange,
    #[error("no inputs satisfying the precondition found in {attempts} attempts")]
    PreconditionUnsatisfiable { attempts: u32 },
}

/// A mapping from identifiers to exact integers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Valuation(pub BTreeMap<Ident, BigInt>);

impl Valuation {
    pub fn new() -> Self {
        Valuation(BTreeMap::new())
    }

    pub fn get(&self, name: &str) -> Option<&BigInt> {
        self.0.get(name)
    }

    pub fn set(&mut self, name: impl Into<Ident>, value: BigInt) {
        self.0.insert(name.into(), value);
    }

    pub fn from_pairs<I, K>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, BigInt)>,
        K: Into<Ident>,
    {
        Valuation(pairs.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

// Values are serialized as decimal strings so arbitrary precision survives
// JSON round-trips.
impl Serialize for Valuation {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, &v.to_string())?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Valuation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Valuation;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a map from identifiers to decimal integer strings")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut out = BTreeMap::new();
                while let Some((k, v)) = access.next_entry::<String, String>()? {
                    let n: BigInt = v
                        .parse()
                        .map_err(|_| serde::de::Error::custom(format!("bad integer '{v}'")))?;
                    out.insert(k, n);
                }
                Ok(Valuation(out))
            }
        }
        deserializer.deserialize_map(V)
    }
}

/// State captured when a loop condition is about to be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    #[serde(rename = "loop")]
    pub loop_id: LoopId,
    pub vars: Valuation,
}

/// One deterministic execution: the inputs, every loop-head snapshot in
/// execution order (including the final failing test of each loop), and
/// the state at program exit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub inputs: Valuation,
    pub snapshots: Vec<Snapshot>,
    pub exit: Valuation,
    pub step_count: u64,
}

impl Trace {
    pub fn snapshots_for(&self, loop_id: LoopId) -> impl Iterator<Item = &Snapshot> {
        self.snapshots.iter().filter(move |s| s.loop_id == loop_id)
    }
}

pub fn eval_expr(e: &Expr, env: &Valuation) -> Result<BigInt, InterpError> {
    match e {
        Expr::Var(v) => env
            .get(v)
            .cloned()
            .ok_or_else(|| InterpError::Unbound(v.clone())),
        Expr::Int(n) => Ok(n.clone()),
        Expr::Bin(op, l, r) => {
            let a = eval_expr(l, env)?;
            let b = eval_expr(r, env)?;
            match op {
                BinOp::Add => Ok(a + b),
                BinOp::Sub => Ok(a - b),
                BinOp::Mul => Ok(a * b),
                BinOp::Div => {
                    if b.is_zero() {
                        Err(InterpError::DivisionByZero)
                    } else {
                        Ok(a.div_floor(&b))
                    }
                }
                BinOp::Mod => {
                    if b.is_zero() {
                        Err(InterpError::DivisionByZero)
                    } else {
                        Ok(a.mod_floor(&b))
                    }
                }
            }
        }
        Expr::Exp(base, exponent) => {
            let b = eval_expr(base, env)?;
            let e = eval_expr(exponent, env)?;
            if e.is_negative() {
                return Err(InterpError::NegativeExponent);
            }
            let e = e
                .to_u64()
                .filter(|&e| e <= MAX_EXP)
                .ok_or(InterpError::ExponentTooLarge)?;
            Ok(int_pow(&b, e))
        }
    }
}

pub fn eval_cond(c: &Cond, env: &Valuation) -> Result<bool, InterpError> {
    match c {
        Cond::Cmp(op, l, r) => {
            let a = eval_expr(l, env)?;
            let b = eval_expr(r, env)?;
            Ok(match op {
                CmpOp::Eq => a == b,
                CmpOp::Ne => a != b,
                CmpOp::Lt => a < b,
                CmpOp::Gt => a > b,
                CmpOp::Le => a <= b,
                CmpOp::Ge => a >= b,
            })
        }
        Cond::Odd(e) => {
            let v = eval_expr(e, env)?;
            Ok(!v.mod_floor(&BigInt::from(2)).is_zero())
        }
        Cond::And(a, b) => Ok(eval_cond(a, env)? && eval_cond(b, env)?),
        Cond::Or(a, b) => Ok(eval_cond(a, env)? || eval_cond(b, env)?),
        Cond::Not(c) => Ok(!eval_cond(c, env)?),
    }
}

struct Machine {
    env: Valuation,
    snapshots: Vec<Snapshot>,
    steps: u64,
    fuel: u64,
}

impl Machine {
    fn tick(&mut self) -> Result<(), InterpError> {
        self.steps += 1;
        if self.steps > self.fuel {
            Err(InterpError::FuelExhausted(self.fuel))
        } else {
            Ok(())
        }
    }

    fn exec(&mut self, stmts: &[Stmt]) -> Result<(), InterpError> {
        for s in stmts {
            match s {
                Stmt::Assign { lhs, rhs, .. } => {
                    self.tick()?;
                    let v = eval_expr(rhs, &self.env)?;
                    self.env.set(lhs.clone(), v);
                }
                Stmt::While { id, cond, body, .. } => loop {
                    self.snapshots.push(Snapshot {
                        loop_id: *id,
                        vars: self.env.clone(),
                    });
                    self.tick()?;
                    if !eval_cond(cond, &self.env)? {
                        break;
                    }
                    self.exec(body)?;
                },
                Stmt::If {
                    cond,
                    then_branch,
                    else_branch,
                    ..
                } => {
                    self.tick()?;
                    if eval_cond(cond, &self.env)? {
                        self.exec(then_branch)?;
                    } else {
                        self.exec(else_branch)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Runs `p` on `inputs`, checking the precondition first. Deterministic:
/// identical arguments produce identical traces.
pub fn run(p: &Program, inputs: &Valuation, fuel: u64) -> Result<Trace, InterpError> {
    for param in &p.params {
        if inputs.get(param).is_none() {
            return Err(InterpError::MissingInput(param.clone()));
        }
    }
    for key in inputs.0.keys() {
        if !p.params.contains(key) {
            return Err(InterpError::UnknownInput(key.clone()));
        }
    }
    if !eval_cond(&p.pre, inputs)? {
        return Err(InterpError::PreconditionViolated);
    }

    let mut machine = Machine {
        env: inputs.clone(),
        snapshots: Vec::new(),
        steps: 0,
        fuel,
    };
    machine.exec(&p.body)?;
    Ok(Trace {
        inputs: inputs.clone(),
        snapshots: machine.snapshots,
        exit: machine.env,
        step_count: machine.steps,
    })
}

/// Total rejection-sampling attempts allowed per requested valuation.
const SAMPLE_ATTEMPTS: u32 = 10_000;

/// Draws `count` input valuations uniformly from `range` (inclusive on
/// both ends), rejecting any that violate the precondition. Reproducible
/// from `seed`.
pub fn sample_inputs(
    p: &Program,
    count: usize,
    range: (i64, i64),
    seed: u64,
) -> Result<Vec<Valuation>, InterpError> {
    let (lo, hi) = range;
    if lo > hi {
        return Err(InterpError::EmptyRange);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut found = None;
        for _ in 0..SAMPLE_ATTEMPTS {
            let mut v = Valuation::new();
            for param in &p.params {
                v.set(param.clone(), BigInt::from(rng.gen_range(lo..=hi)));
            }
            if eval_cond(&p.pre, &v)? {
                found = Some(v);
                break;
            }
        }
        match found {
            Some(v) => out.push(v),
            None => {
                return Err(InterpError::PreconditionUnsatisfiable {
                    attempts: SAMPLE_ATTEMPTS,
                })
            }
        }
    }
    Ok(out)
}
