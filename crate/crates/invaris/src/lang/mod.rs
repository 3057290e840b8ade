//! Frontend for the while-language: AST, lexer, parser, pretty-printer.
//!
//! The language has integer variables only. Programs carry a precondition
//! over their inputs in `{ ... }` before the body and an optional
//! postcondition in `{ ... }` after it. Inputs are not declared; they are
//! the identifiers read before ever being assigned (including everything
//! mentioned in the precondition), and assigning to one is an error.

mod ast;
mod lexer;
mod parser;
mod printer;

pub use ast::{BinOp, CmpOp, Cond, Expr, Ident, LoopId, Program, Span, Stmt};
pub use parser::parse;
pub use printer::{format_cond, format_expr, format_program};

use thiserror::Error;

/// Errors produced while lexing, parsing, or validating a program.
#[derive(Debug, Error)]
pub enum ParseError {
    #[error("lexical error at {line}:{col}: {msg}")]
    Lex { msg: String, line: u32, col: u32 },
    #[error("non-integer literal at {line}:{col}: only decimal integers are allowed")]
    NonIntegerLiteral { line: u32, col: u32 },
    #[error("syntax error at {line}:{col}: expected {expected}, found {found}")]
    Unexpected {
        expected: String,
        found: String,
        line: u32,
        col: u32,
    },
    #[error("syntax error at {line}:{col}: {msg}")]
    Invalid { msg: String, line: u32, col: u32 },
    #[error("duplicate loop annotation '{label}' at {line}:{col}")]
    DuplicateLoopLabel { label: String, line: u32, col: u32 },
    #[error("'{name}' is a program input and cannot be assigned (at {line}:{col})")]
    AssignToParam { name: String, line: u32, col: u32 },
}
