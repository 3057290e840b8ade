//! Canonical pretty-printer. `parse(format_program(p))` is structurally
//! identical to `p`, so the printed form is safe to store and re-read.

use super::ast::{BinOp, CmpOp, Cond, Expr, Program, Stmt};

pub fn format_program(p: &Program) -> String {
    let mut out = String::new();
    out.push_str("{ ");
    out.push_str(&format_cond(&p.pre));
    out.push_str(" }\n");
    fmt_stmts(&p.body, 0, &mut out);
    if let Some(post) = &p.post {
        out.push_str("{ ");
        out.push_str(&format_cond(post));
        out.push_str(" }\n");
    }
    out
}

fn indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn fmt_stmts(stmts: &[Stmt], level: usize, out: &mut String) {
    for s in stmts {
        match s {
            Stmt::Assign { lhs, rhs, .. } => {
                indent(level, out);
                out.push_str(lhs);
                out.push_str(" := ");
                out.push_str(&format_expr(rhs));
                out.push_str(";\n");
            }
            Stmt::While {
                label, cond, body, ..
            } => {
                indent(level, out);
                out.push_str("while ");
                if let Some(l) = label {
                    out.push('[');
                    out.push_str(l);
                    out.push_str("] ");
                }
                out.push_str(&format_cond(cond));
                out.push_str(" do\n");
                fmt_stmts(body, level + 1, out);
                indent(level, out);
                out.push_str("end while;\n");
            }
            Stmt::If {
                cond,
                then_branch,
                else_branch,
                ..
            } => {
                indent(level, out);
                out.push_str("if ");
                out.push_str(&format_cond(cond));
                out.push_str(" then\n");
                fmt_stmts(then_branch, level + 1, out);
                if !else_branch.is_empty() {
                    indent(level, out);
                    out.push_str("else\n");
                    fmt_stmts(else_branch, level + 1, out);
                }
                indent(level, out);
                out.push_str("end if;\n");
            }
        }
    }
}

fn expr_prec(op: BinOp) -> u8 {
    match op {
        BinOp::Add | BinOp::Sub => 1,
        BinOp::Mul | BinOp::Div | BinOp::Mod => 2,
    }
}

fn op_str(op: BinOp) -> &'static str {
    match op {
        BinOp::Add => "+",
        BinOp::Sub => "-",
        BinOp::Mul => "*",
        BinOp::Div => "/",
        BinOp::Mod => "%",
    }
}

pub fn format_expr(e: &Expr) -> String {
    let mut out = String::new();
    fmt_expr(e, 0, false, &mut out);
    out
}

/// `ctx_prec` is the precedence of the enclosing operator and `is_right`
/// whether we sit in its right operand; a right operand at equal
/// precedence must keep its parentheses for the reparse to rebuild the
/// same tree.
fn fmt_expr(e: &Expr, ctx_prec: u8, is_right: bool, out: &mut String) {
    match e {
        Expr::Var(v) => out.push_str(v),
        Expr::Int(n) => out.push_str(&n.to_string()),
        Expr::Exp(base, exponent) => {
            out.push_str("exp(");
            fmt_expr(base, 0, false, out);
            out.push_str(", ");
            fmt_expr(exponent, 0, false, out);
            out.push(')');
        }
        Expr::Bin(op, l, r) => {
            let prec = expr_prec(*op);
            let parens = prec < ctx_prec || (prec == ctx_prec && is_right);
            if parens {
                out.push('(');
            }
            fmt_expr(l, prec, false, out);
            out.push(' ');
            out.push_str(op_str(*op));
            out.push(' ');
            fmt_expr(r, prec, true, out);
            if parens {
                out.push(')');
            }
        }
    }
}

fn cmp_str(op: CmpOp) -> &'static str {
    match op {
        CmpOp::Eq => "=",
        CmpOp::Ne => "!=",
        CmpOp::Lt => "<",
        CmpOp::Gt => ">",
        CmpOp::Le => "<=",
        CmpOp::Ge => ">=",
    }
}

pub fn format_cond(c: &Cond) -> String {
    let mut out = String::new();
    fmt_cond(c, 0, false, &mut out);
    out
}

fn cond_prec(c: &Cond) -> u8 {
    match c {
        Cond::Or(..) => 1,
        Cond::And(..) => 2,
        Cond::Not(..) => 3,
        Cond::Cmp(..) | Cond::Odd(..) => 4,
    }
}

fn fmt_cond(c: &Cond, ctx_prec: u8, is_right: bool, out: &mut String) {
    let prec = cond_prec(c);
    let parens = prec < ctx_prec
        || (prec == ctx_prec && is_right && !matches!(c, Cond::Cmp(..) | Cond::Odd(..)));
    if parens {
        out.push('(');
    }
    match c {
        Cond::Cmp(op, l, r) => {
            out.push_str(&format_expr(l));
            out.push(' ');
            out.push_str(cmp_str(*op));
            out.push(' ');
            out.push_str(&format_expr(r));
        }
        Cond::Odd(e) => {
            out.push_str("odd(");
            out.push_str(&format_expr(e));
            out.push(')');
        }
        Cond::And(a, b) => {
            fmt_cond(a, 2, false, out);
            out.push_str(" and ");
            fmt_cond(b, 2, true, out);
        }
        Cond::Or(a, b) => {
            fmt_cond(a, 1, false, out);
            out.push_str(" or ");
            fmt_cond(b, 1, true, out);
        }
        Cond::Not(inner) => {
            out.push_str("not ");
            fmt_cond(inner, 3, true, out);
        }
    }
    if parens {
        out.push(')');
    }
}
