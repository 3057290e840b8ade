//! Recursive descent parser and program well-formedness checks.
//!
//! A simultaneous assignment `(x, y) := (a, b);` is desugared into the
//! equivalent sequence of single assignments at parse time (the components
//! must not read each other, which the arity/distinctness checks plus the
//! read-before-assign analysis enforce), so downstream passes only ever
//! see plain assignments.

use std::collections::BTreeSet;

use super::ast::{BinOp, CmpOp, Cond, Expr, Ident, LoopId, Program, Span, Stmt};
use super::lexer::{lex, Tok};
use super::ParseError;

/// Parses a source file into a validated [`Program`].
pub fn parse(source: &str) -> Result<Program, ParseError> {
    let toks = lex(source)?;
    let mut parser = Parser {
        toks,
        pos: 0,
        next_loop: 0,
        end_span: last_span(source),
    };
    parser.parse_program()
}

fn last_span(source: &str) -> Span {
    let mut line = 1u32;
    let mut col = 1u32;
    for c in source.chars() {
        if c == '\n' {
            line += 1;
            col = 1;
        } else {
            col += 1;
        }
    }
    Span { line, col }
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    next_loop: u32,
    end_span: Span,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn peek_span(&self) -> Span {
        self.toks
            .get(self.pos)
            .map(|(_, s)| *s)
            .unwrap_or(self.end_span)
    }

    fn advance(&mut self) -> Option<(Tok, Span)> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        let span = self.peek_span();
        let found = match self.peek() {
            Some(t) => t.to_string(),
            None => "end of input".into(),
        };
        ParseError::Unexpected {
            expected: expected.into(),
            found,
            line: span.line,
            col: span.col,
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<Span, ParseError> {
        if self.peek() == Some(&tok) {
            let span = self.peek_span();
            self.pos += 1;
            Ok(span)
        } else {
            Err(self.unexpected(&tok.to_string()))
        }
    }

    fn expect_ident(&mut self) -> Result<(Ident, Span), ParseError> {
        match self.peek() {
            Some(Tok::Ident(_)) => {
                let (tok, span) = self.advance().expect("peeked");
                match tok {
                    Tok::Ident(name) => Ok((name, span)),
                    _ => unreachable!(),
                }
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    fn parse_program(&mut self) -> Result<Program, ParseError> {
        self.expect(Tok::LBrace)?;
        let pre = self.parse_cond()?;
        self.expect(Tok::RBrace)?;

        let body = self.parse_stmts()?;
        if body.is_empty() {
            let span = self.peek_span();
            return Err(ParseError::Invalid {
                msg: "program body is empty".into(),
                line: span.line,
                col: span.col,
            });
        }

        let post = if self.eat(&Tok::LBrace) {
            let c = self.parse_cond()?;
            self.expect(Tok::RBrace)?;
            Some(c)
        } else {
            None
        };

        if self.peek().is_some() {
            return Err(self.unexpected("end of input"));
        }

        finalize(pre, body, post)
    }

    fn parse_stmts(&mut self) -> Result<Vec<Stmt>, ParseError> {
        let mut out = Vec::new();
        while let Some(Tok::Ident(_) | Tok::LParen | Tok::While | Tok::If) = self.peek() {
            self.parse_stmt(&mut out)?;
        }
        Ok(out)
    }

    fn parse_stmt(&mut self, out: &mut Vec<Stmt>) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Ident(_)) => {
                let (lhs, span) = self.expect_ident()?;
                self.expect(Tok::Assign)?;
                let rhs = self.parse_expr()?;
                self.expect(Tok::Semi)?;
                out.push(Stmt::Assign { lhs, rhs, span });
                Ok(())
            }
            Some(Tok::LParen) => self.parse_sim_assign(out),
            Some(Tok::While) => {
                let span = self.expect(Tok::While)?;
                let label = if self.eat(&Tok::LBracket) {
                    let (name, _) = self.expect_ident()?;
                    self.expect(Tok::RBracket)?;
                    Some(name)
                } else {
                    None
                };
                let id = LoopId(self.next_loop);
                self.next_loop += 1;
                let cond = self.parse_cond()?;
                self.expect(Tok::Do)?;
                let body = self.parse_stmts()?;
                self.expect(Tok::End)?;
                self.expect(Tok::While)?;
                self.eat(&Tok::Semi);
                out.push(Stmt::While {
                    id,
                    label,
                    cond,
                    body,
                    span,
                });
                Ok(())
            }
            Some(Tok::If) => {
                let span = self.expect(Tok::If)?;
                let cond = self.parse_cond()?;
                self.expect(Tok::Then)?;
                let then_branch = self.parse_stmts()?;
                let else_branch = if self.eat(&Tok::Else) {
                    self.parse_stmts()?
                } else {
                    Vec::new()
                };
                self.expect(Tok::End)?;
                self.expect(Tok::If)?;
                self.eat(&Tok::Semi);
                out.push(Stmt::If {
                    cond,
                    then_branch,
                    else_branch,
                    span,
                });
                Ok(())
            }
            _ => Err(self.unexpected("statement")),
        }
    }

    fn parse_sim_assign(&mut self, out: &mut Vec<Stmt>) -> Result<(), ParseError> {
        let span = self.expect(Tok::LParen)?;
        let mut lhss = Vec::new();
        loop {
            let (name, _) = self.expect_ident()?;
            lhss.push(name);
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RParen)?;
        self.expect(Tok::Assign)?;
        self.expect(Tok::LParen)?;
        let mut rhss = Vec::new();
        loop {
            rhss.push(self.parse_expr()?);
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RParen)?;
        self.expect(Tok::Semi)?;

        if lhss.len() != rhss.len() {
            return Err(ParseError::Invalid {
                msg: format!(
                    "simultaneous assignment has {} targets but {} values",
                    lhss.len(),
                    rhss.len()
                ),
                line: span.line,
                col: span.col,
            });
        }
        let mut seen = BTreeSet::new();
        for name in &lhss {
            if !seen.insert(name.clone()) {
                return Err(ParseError::Invalid {
                    msg: format!("simultaneous assignment targets '{name}' twice"),
                    line: span.line,
                    col: span.col,
                });
            }
        }
        // The components must not read the targets; otherwise sequencing
        // would change meaning.
        for rhs in &rhss {
            for v in rhs.vars() {
                if seen.contains(&v) {
                    return Err(ParseError::Invalid {
                        msg: format!("simultaneous assignment reads its own target '{v}'"),
                        line: span.line,
                        col: span.col,
                    });
                }
            }
        }
        for (lhs, rhs) in lhss.into_iter().zip(rhss) {
            out.push(Stmt::Assign { lhs, rhs, span });
        }
        Ok(())
    }

    fn parse_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            self.advance();
            let rhs = self.parse_term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_factor()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                Some(Tok::Percent) => BinOp::Mod,
                _ => break,
            };
            self.advance();
            let rhs = self.parse_factor()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_factor(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::Int(_)) => {
                let (tok, _) = self.advance().expect("peeked");
                match tok {
                    Tok::Int(n) => Ok(Expr::Int(n)),
                    _ => unreachable!(),
                }
            }
            Some(Tok::Ident(_)) => {
                let (name, _) = self.expect_ident()?;
                Ok(Expr::Var(name))
            }
            Some(Tok::ExpKw) => {
                self.advance();
                self.expect(Tok::LParen)?;
                let base = self.parse_expr()?;
                self.expect(Tok::Comma)?;
                let exponent = self.parse_expr()?;
                self.expect(Tok::RParen)?;
                Ok(Expr::Exp(Box::new(base), Box::new(exponent)))
            }
            Some(Tok::LParen) => {
                self.advance();
                let e = self.parse_expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            _ => Err(self.unexpected("expression")),
        }
    }

    fn parse_cond(&mut self) -> Result<Cond, ParseError> {
        let mut lhs = self.parse_and_cond()?;
        while self.eat(&Tok::Or) {
            let rhs = self.parse_and_cond()?;
            lhs = Cond::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_and_cond(&mut self) -> Result<Cond, ParseError> {
        let mut lhs = self.parse_not_cond()?;
        while self.eat(&Tok::And) {
            let rhs = self.parse_not_cond()?;
            lhs = Cond::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_not_cond(&mut self) -> Result<Cond, ParseError> {
        match self.peek() {
            Some(Tok::Not) => {
                self.advance();
                let c = self.parse_not_cond()?;
                Ok(Cond::Not(Box::new(c)))
            }
            Some(Tok::Odd) => {
                self.advance();
                self.expect(Tok::LParen)?;
                let e = self.parse_expr()?;
                self.expect(Tok::RParen)?;
                Ok(Cond::Odd(e))
            }
            Some(Tok::LParen) => {
                // '(' may open a parenthesized condition or a parenthesized
                // expression that starts a comparison; try the condition
                // reading first and fall back on failure.
                let saved = self.pos;
                self.advance();
                if let Ok(c) = self.parse_cond() {
                    if self.eat(&Tok::RParen) && !self.peek_is_cmp_op() {
                        return Ok(c);
                    }
                }
                self.pos = saved;
                self.parse_cmp()
            }
            _ => self.parse_cmp(),
        }
    }

    fn peek_is_cmp_op(&self) -> bool {
        matches!(
            self.peek(),
            Some(Tok::Eq)
                | Some(Tok::Ne)
                | Some(Tok::Lt)
                | Some(Tok::Gt)
                | Some(Tok::Le)
                | Some(Tok::Ge)
        )
    }

    fn parse_cmp(&mut self) -> Result<Cond, ParseError> {
        let lhs = self.parse_expr()?;
        let op = match self.peek() {
            Some(Tok::Eq) => CmpOp::Eq,
            Some(Tok::Ne) => CmpOp::Ne,
            Some(Tok::Lt) => CmpOp::Lt,
            Some(Tok::Gt) => CmpOp::Gt,
            Some(Tok::Le) => CmpOp::Le,
            Some(Tok::Ge) => CmpOp::Ge,
            _ => return Err(self.unexpected("comparison operator")),
        };
        self.advance();
        let rhs = self.parse_expr()?;
        if self.peek_is_cmp_op() {
            let span = self.peek_span();
            return Err(ParseError::Invalid {
                msg: "comparison chains are not allowed".into(),
                line: span.line,
                col: span.col,
            });
        }
        Ok(Cond::Cmp(op, lhs, rhs))
    }
}

/// Derives the program inputs and runs the well-formedness checks.
fn finalize(pre: Cond, body: Vec<Stmt>, post: Option<Cond>) -> Result<Program, ParseError> {
    check_labels(&body)?;

    // Inputs: everything the precondition mentions, plus whatever the body
    // reads before assigning.
    let mut params: Vec<Ident> = pre.vars_in_order();
    let mut param_set: BTreeSet<Ident> = params.iter().cloned().collect();
    let mut assigned: BTreeSet<Ident> = BTreeSet::new();

    scan_stmts(&body, &mut assigned, &mut param_set, &mut params)?;

    if let Some(post) = &post {
        let mut post_vars = BTreeSet::new();
        post.collect_vars(&mut post_vars);
        for v in post_vars {
            if !param_set.contains(&v) && !assigned.contains(&v) {
                return Err(ParseError::Invalid {
                    msg: format!("identifier '{v}' in postcondition is never defined"),
                    line: 1,
                    col: 1,
                });
            }
        }
    }

    Ok(Program {
        params,
        pre,
        body,
        post,
    })
}

fn check_labels(body: &[Stmt]) -> Result<(), ParseError> {
    fn walk(stmts: &[Stmt], seen: &mut BTreeSet<Ident>) -> Result<(), ParseError> {
        for s in stmts {
            match s {
                Stmt::While {
                    label, body, span, ..
                } => {
                    if let Some(l) = label {
                        if !seen.insert(l.clone()) {
                            return Err(ParseError::DuplicateLoopLabel {
                                label: l.clone(),
                                line: span.line,
                                col: span.col,
                            });
                        }
                    }
                    walk(body, seen)?;
                }
                Stmt::If {
                    then_branch,
                    else_branch,
                    ..
                } => {
                    walk(then_branch, seen)?;
                    walk(else_branch, seen)?;
                }
                Stmt::Assign { .. } => {}
            }
        }
        Ok(())
    }
    walk(body, &mut BTreeSet::new())
}

/// Forward scan in syntactic order: a read of an identifier nobody has
/// assigned yet makes it an input, and inputs must never be assigned.
fn scan_stmts(
    stmts: &[Stmt],
    assigned: &mut BTreeSet<Ident>,
    param_set: &mut BTreeSet<Ident>,
    params: &mut Vec<Ident>,
) -> Result<(), ParseError> {
    for s in stmts {
        match s {
            Stmt::Assign { lhs, rhs, span } => {
                note_reads(&rhs.vars(), assigned, param_set, params);
                if param_set.contains(lhs) {
                    return Err(ParseError::AssignToParam {
                        name: lhs.clone(),
                        line: span.line,
                        col: span.col,
                    });
                }
                assigned.insert(lhs.clone());
            }
            Stmt::While { cond, body, .. } => {
                let mut vars = BTreeSet::new();
                cond.collect_vars(&mut vars);
                note_reads(&vars, assigned, param_set, params);
                scan_stmts(body, assigned, param_set, params)?;
            }
            Stmt::If {
                cond,
                then_branch,
                else_branch,
                ..
            } => {
                let mut vars = BTreeSet::new();
                cond.collect_vars(&mut vars);
                note_reads(&vars, assigned, param_set, params);
                let mut then_assigned = assigned.clone();
                scan_stmts(then_branch, &mut then_assigned, param_set, params)?;
                let mut else_assigned = assigned.clone();
                scan_stmts(else_branch, &mut else_assigned, param_set, params)?;
                // Only variables assigned on both paths are definitely
                // assigned afterwards.
                for v in then_assigned.intersection(&else_assigned) {
                    assigned.insert(v.clone());
                }
            }
        }
    }
    Ok(())
}

fn note_reads(
    vars: &BTreeSet<Ident>,
    assigned: &BTreeSet<Ident>,
    param_set: &mut BTreeSet<Ident>,
    params: &mut Vec<Ident>,
) {
    for v in vars {
        if !assigned.contains(v) && param_set.insert(v.clone()) {
            params.push(v.clone());
        }
    }
}
