//! Abstract syntax for the while-language.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

pub type Ident = String;

/// Stable per-program loop identifier, assigned in source (pre-)order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LoopId(pub u32);

impl std::fmt::Display for LoopId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Var(Ident),
    Int(BigInt),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    /// `exp(base, exponent)` as a built-in function.
    Exp(Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Collects every identifier mentioned in the expression.
    pub fn collect_vars(&self, out: &mut BTreeSet<Ident>) {
        match self {
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Int(_) => {}
            Expr::Bin(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Expr::Exp(b, e) => {
                b.collect_vars(out);
                e.collect_vars(out);
            }
        }
    }

    pub fn vars(&self) -> BTreeSet<Ident> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cond {
    Cmp(CmpOp, Expr, Expr),
    Odd(Expr),
    And(Box<Cond>, Box<Cond>),
    Or(Box<Cond>, Box<Cond>),
    Not(Box<Cond>),
}

impl Cond {
    pub fn collect_vars(&self, out: &mut BTreeSet<Ident>) {
        match self {
            Cond::Cmp(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Cond::Odd(e) => e.collect_vars(out),
            Cond::And(a, b) | Cond::Or(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Cond::Not(c) => c.collect_vars(out),
        }
    }

    /// Identifiers in source (left-to-right) order, deduplicated.
    pub fn vars_in_order(&self) -> Vec<Ident> {
        fn walk(c: &Cond, seen: &mut BTreeSet<Ident>, out: &mut Vec<Ident>) {
            fn walk_expr(e: &Expr, seen: &mut BTreeSet<Ident>, out: &mut Vec<Ident>) {
                match e {
                    Expr::Var(v) => {
                        if seen.insert(v.clone()) {
                            out.push(v.clone());
                        }
                    }
                    Expr::Int(_) => {}
                    Expr::Bin(_, l, r) => {
                        walk_expr(l, seen, out);
                        walk_expr(r, seen, out);
                    }
                    Expr::Exp(b, e) => {
                        walk_expr(b, seen, out);
                        walk_expr(e, seen, out);
                    }
                }
            }
            match c {
                Cond::Cmp(_, l, r) => {
                    walk_expr(l, seen, out);
                    walk_expr(r, seen, out);
                }
                Cond::Odd(e) => walk_expr(e, seen, out),
                Cond::And(a, b) | Cond::Or(a, b) => {
                    walk(a, seen, out);
                    walk(b, seen, out);
                }
                Cond::Not(c) => walk(c, seen, out),
            }
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        walk(self, &mut seen, &mut out);
        out
    }
}

#[derive(Debug, Clone)]
pub enum Stmt {
    Assign {
        lhs: Ident,
        rhs: Expr,
        span: Span,
    },
    While {
        id: LoopId,
        label: Option<Ident>,
        cond: Cond,
        body: Vec<Stmt>,
        span: Span,
    },
    If {
        cond: Cond,
        then_branch: Vec<Stmt>,
        else_branch: Vec<Stmt>,
        span: Span,
    },
}

impl Stmt {
    /// Structural equality ignoring source spans.
    pub fn structural_eq(&self, other: &Stmt) -> bool {
        match (self, other) {
            (
                Stmt::Assign {
                    lhs: l1, rhs: r1, ..
                },
                Stmt::Assign {
                    lhs: l2, rhs: r2, ..
                },
            ) => l1 == l2 && r1 == r2,
            (
                Stmt::While {
                    id: i1,
                    label: n1,
                    cond: c1,
                    body: b1,
                    ..
                },
                Stmt::While {
                    id: i2,
                    label: n2,
                    cond: c2,
                    body: b2,
                    ..
                },
            ) => i1 == i2 && n1 == n2 && c1 == c2 && stmts_eq(b1, b2),
            (
                Stmt::If {
                    cond: c1,
                    then_branch: t1,
                    else_branch: e1,
                    ..
                },
                Stmt::If {
                    cond: c2,
                    then_branch: t2,
                    else_branch: e2,
                    ..
                },
            ) => c1 == c2 && stmts_eq(t1, t2) && stmts_eq(e1, e2),
            _ => false,
        }
    }
}

fn stmts_eq(a: &[Stmt], b: &[Stmt]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.structural_eq(y))
}

#[derive(Debug, Clone)]
pub struct Program {
    /// Symbolic inputs, in order of first mention.
    pub params: Vec<Ident>,
    pub pre: Cond,
    pub body: Vec<Stmt>,
    pub post: Option<Cond>,
}

impl Program {
    pub fn structural_eq(&self, other: &Program) -> bool {
        self.params == other.params
            && self.pre == other.pre
            && stmts_eq(&self.body, &other.body)
            && self.post == other.post
    }

    /// All loop ids in pre-order.
    pub fn loop_ids(&self) -> Vec<LoopId> {
        fn walk(stmts: &[Stmt], out: &mut Vec<LoopId>) {
            for s in stmts {
                match s {
                    Stmt::While { id, body, .. } => {
                        out.push(*id);
                        walk(body, out);
                    }
                    Stmt::If {
                        then_branch,
                        else_branch,
                        ..
                    } => {
                        walk(then_branch, out);
                        walk(else_branch, out);
                    }
                    Stmt::Assign { .. } => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.body, &mut out);
        out
    }

    /// Variables assigned in the body, in order of first assignment.
    /// These are the candidates substituted for the iteration counter
    /// when the invariant shape is synthesized.
    pub fn body_vars(&self) -> Vec<Ident> {
        fn walk(stmts: &[Stmt], seen: &mut BTreeSet<Ident>, out: &mut Vec<Ident>) {
            for s in stmts {
                match s {
                    Stmt::Assign { lhs, .. } => {
                        if seen.insert(lhs.clone()) {
                            out.push(lhs.clone());
                        }
                    }
                    Stmt::While { body, .. } => walk(body, seen, out),
                    Stmt::If {
                        then_branch,
                        else_branch,
                        ..
                    } => {
                        walk(then_branch, seen, out);
                        walk(else_branch, seen, out);
                    }
                }
            }
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        walk(&self.body, &mut seen, &mut out);
        out
    }
}
