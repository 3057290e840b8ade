//! Fragment extraction and the shape space over program fragments.
//!
//! A fragment is a single assignment statement together with the stack of
//! loops enclosing it. Fragments inside at least one loop are encoded as
//! five-slot vectors (left-hand identifier, operator, operand kind,
//! operand value, recurrence form) and compared by slot-wise Hamming
//! distance. The left-hand identifier is canonicalized out of the
//! right-hand side before the slots are read, so a consistent rename of
//! the fragment costs exactly one slot.

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ais::InvariantTemplate;
use crate::lang::{format_expr, BinOp, Expr, Ident, LoopId, Program, Span, Stmt};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("fragment '{0}' is not a recognized single-operator recurrence")]
    UnrecognizedForm(String),
}

/// An assignment statement in context: the antigen of the immune engine.
#[derive(Debug, Clone)]
pub struct Fragment {
    pub lhs: Ident,
    pub rhs: Expr,
    /// Ids of the loops enclosing the assignment, outermost first.
    /// Empty means the fragment sits outside every loop and carries no
    /// invariant.
    pub loop_path: Vec<LoopId>,
    pub span: Span,
}

impl Fragment {
    pub fn in_loop(&self) -> bool {
        !self.loop_path.is_empty()
    }

    /// Source-level rendering, e.g. `x := x + 2`.
    pub fn render(&self) -> String {
        format!("{} := {}", self.lhs, format_expr(&self.rhs))
    }

    /// The fragment's identifier universe: its target plus everything the
    /// right-hand side reads.
    pub fn scope(&self) -> Vec<Ident> {
        let mut vars = self.rhs.vars();
        vars.insert(self.lhs.clone());
        vars.into_iter().collect()
    }
}

/// All assignments of the program in source order, each with its loop path.
pub fn extract_fragments(p: &Program) -> Vec<Fragment> {
    fn walk(stmts: &[Stmt], path: &mut Vec<LoopId>, out: &mut Vec<Fragment>) {
        for s in stmts {
            match s {
                Stmt::Assign { lhs, rhs, span } => out.push(Fragment {
                    lhs: lhs.clone(),
                    rhs: rhs.clone(),
                    loop_path: path.clone(),
                    span: *span,
                }),
                Stmt::While { id, body, .. } => {
                    path.push(*id);
                    walk(body, path, out);
                    path.pop();
                }
                Stmt::If {
                    then_branch,
                    else_branch,
                    ..
                } => {
                    walk(then_branch, path, out);
                    walk(else_branch, path, out);
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(&p.body, &mut Vec::new(), &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotOp {
    Add,
    Sub,
    Mul,
    Div,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Const,
    Var,
    #[serde(rename = "self")]
    SelfRef,
}

/// The operand slot payload. `Absent` is the ⊥ filler used when the
/// recurrence has no independent operand (`x := x * x`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TermSlot {
    Const(BigInt),
    Var(Ident),
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Additive,
    Multiplicative,
    SelfProduct,
    Other,
}

/// Five-slot encoding of a fragment: a point in fragment shape space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeVector {
    pub lhs: Ident,
    pub op: SlotOp,
    pub term_kind: TermKind,
    pub term: TermSlot,
    pub form: Form,
}

impl ShapeVector {
    /// Pseudo-assignment rendering of the pattern, for reports.
    pub fn render(&self) -> String {
        let term = match &self.term {
            TermSlot::Const(c) => c.to_string(),
            TermSlot::Var(v) => v.clone(),
            TermSlot::Absent => self.lhs.clone(),
        };
        match (self.op, self.form) {
            (SlotOp::None, _) => format!("{0} := {0}", self.lhs),
            (_, Form::Other) => {
                format!("{} := {} {} {}", self.lhs, term, op_sym(self.op), self.lhs)
            }
            (op, _) => format!("{0} := {0} {1} {2}", self.lhs, op_sym(op), term),
        }
    }
}

fn op_sym(op: SlotOp) -> &'static str {
    match op {
        SlotOp::Add => "+",
        SlotOp::Sub => "-",
        SlotOp::Mul => "*",
        SlotOp::Div => "/",
        SlotOp::None => "",
    }
}

/// Slot-wise Hamming distance; bounded by the slot count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Distance(pub u8);

impl Distance {
    pub fn value(self) -> u8 {
        self.0
    }
}

impl std::fmt::Display for Distance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One-operator right-hand sides the encoder understands.
enum Recurrence {
    SelfOnly,
    SelfOpTerm(BinOp, Leaf),
    TermOpSelf(BinOp, Leaf),
    SelfTimesSelf,
}

enum Leaf {
    Const(BigInt),
    Var(Ident),
}

fn leaf_of(e: &Expr, lhs: &Ident) -> Option<Leaf> {
    match e {
        Expr::Int(n) => Some(Leaf::Const(n.clone())),
        Expr::Var(v) if v != lhs => Some(Leaf::Var(v.clone())),
        _ => None,
    }
}

fn classify(lhs: &Ident, rhs: &Expr) -> Option<Recurrence> {
    let is_self = |e: &Expr| matches!(e, Expr::Var(v) if v == lhs);
    match rhs {
        Expr::Var(v) if v == lhs => Some(Recurrence::SelfOnly),
        Expr::Bin(op, l, r) => match (is_self(l), is_self(r)) {
            (true, true) if *op == BinOp::Mul => Some(Recurrence::SelfTimesSelf),
            (true, true) => None,
            (true, false) => leaf_of(r, lhs).map(|t| Recurrence::SelfOpTerm(*op, t)),
            (false, true) => leaf_of(l, lhs).map(|t| Recurrence::TermOpSelf(*op, t)),
            (false, false) => None,
        },
        _ => None,
    }
}

/// Encodes a fragment as a shape vector.
///
/// Recognized right-hand sides are `lhs op t`, `t op lhs`, `lhs * lhs`,
/// and `lhs` alone, where `t` is a constant or another variable. Anything
/// else (no reference to the target, nesting beyond one operator, a
/// modulo) is `UnrecognizedForm`; such fragments can only be answered by
/// receptor editing in the immune engine.
pub fn encode(f: &Fragment) -> Result<ShapeVector, EncodeError> {
    let unrecognized = || EncodeError::UnrecognizedForm(f.render());
    let rec = classify(&f.lhs, &f.rhs).ok_or_else(unrecognized)?;

    let (op, term, form) = match rec {
        Recurrence::SelfOnly => (SlotOp::None, Leaf::Const(BigInt::from(0)), Form::Additive),
        Recurrence::SelfTimesSelf => {
            return Ok(ShapeVector {
                lhs: f.lhs.clone(),
                op: SlotOp::Mul,
                term_kind: TermKind::SelfRef,
                term: TermSlot::Absent,
                form: Form::SelfProduct,
            })
        }
        Recurrence::SelfOpTerm(op, t) => match op {
            BinOp::Add => (SlotOp::Add, t, Form::Additive),
            BinOp::Sub => (SlotOp::Sub, t, Form::Additive),
            BinOp::Mul => (SlotOp::Mul, t, Form::Multiplicative),
            BinOp::Div => (SlotOp::Div, t, Form::Multiplicative),
            BinOp::Mod => return Err(unrecognized()),
        },
        Recurrence::TermOpSelf(op, t) => match op {
            // Commutative: same recurrence as `lhs op t`.
            BinOp::Add => (SlotOp::Add, t, Form::Additive),
            BinOp::Mul => (SlotOp::Mul, t, Form::Multiplicative),
            // `t - lhs` and `t / lhs` are different recurrences; keep them
            // apart from the additive/multiplicative families.
            BinOp::Sub => (SlotOp::Sub, t, Form::Other),
            BinOp::Div => (SlotOp::Div, t, Form::Other),
            BinOp::Mod => return Err(unrecognized()),
        },
    };
    let (term_kind, term) = match term {
        Leaf::Const(c) => (TermKind::Const, TermSlot::Const(c)),
        Leaf::Var(v) => (TermKind::Var, TermSlot::Var(v)),
    };
    Ok(ShapeVector {
        lhs: f.lhs.clone(),
        op,
        term_kind,
        term,
        form,
    })
}

/// Number of differing slots between two fragment encodings.
pub fn antigenic_distance(a: &ShapeVector, b: &ShapeVector) -> Distance {
    let mut d = 0u8;
    d += u8::from(a.lhs != b.lhs);
    d += u8::from(a.op != b.op);
    d += u8::from(a.term_kind != b.term_kind);
    d += u8::from(a.term != b.term);
    d += u8::from(a.form != b.form);
    Distance(d)
}

/// Number of differing slots between two invariant templates, mirroring
/// the fragment distance: a consistent rename again costs exactly one.
pub fn antibody_distance(a: &InvariantTemplate, b: &InvariantTemplate) -> Distance {
    let sa = a.slots();
    let sb = b.slots();
    let mut d = 0u8;
    d += u8::from(sa.kind != sb.kind);
    d += u8::from(sa.op != sb.op);
    d += u8::from(sa.term_kind != sb.term_kind);
    d += u8::from(sa.term != sb.term);
    d += u8::from(sa.lhs != sb.lhs);
    Distance(d)
}
