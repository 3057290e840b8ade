//! Tokenizer for the while-language.

use std::fmt;

use num_bigint::BigInt;

use super::ast::Span;
use super::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(BigInt),
    Assign,
    Semi,
    Comma,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
    While,
    Do,
    End,
    If,
    Then,
    Else,
    Odd,
    And,
    Or,
    Not,
    ExpKw,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tok::Ident(name) => return write!(f, "identifier '{name}'"),
            Tok::Int(n) => return write!(f, "integer {n}"),
            Tok::Assign => "':='",
            Tok::Semi => "';'",
            Tok::Comma => "','",
            Tok::LParen => "'('",
            Tok::RParen => "')'",
            Tok::LBrace => "'{'",
            Tok::RBrace => "'}'",
            Tok::LBracket => "'['",
            Tok::RBracket => "']'",
            Tok::Plus => "'+'",
            Tok::Minus => "'-'",
            Tok::Star => "'*'",
            Tok::Slash => "'/'",
            Tok::Percent => "'%'",
            Tok::Eq => "'='",
            Tok::Ne => "'!='",
            Tok::Lt => "'<'",
            Tok::Gt => "'>'",
            Tok::Le => "'<='",
            Tok::Ge => "'>='",
            Tok::While => "'while'",
            Tok::Do => "'do'",
            Tok::End => "'end'",
            Tok::If => "'if'",
            Tok::Then => "'then'",
            Tok::Else => "'else'",
            Tok::Odd => "'odd'",
            Tok::And => "'and'",
            Tok::Or => "'or'",
            Tok::Not => "'not'",
            Tok::ExpKw => "'exp'",
        };
        f.write_str(s)
    }
}

fn keyword(word: &str) -> Option<Tok> {
    Some(match word {
        "while" => Tok::While,
        "do" => Tok::Do,
        "end" => Tok::End,
        "if" => Tok::If,
        "then" => Tok::Then,
        "else" => Tok::Else,
        "odd" => Tok::Odd,
        "and" => Tok::And,
        "or" => Tok::Or,
        "not" => Tok::Not,
        "exp" => Tok::ExpKw,
        _ => return None,
    })
}

pub fn lex(source: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let mut toks = Vec::new();
    let mut line: u32 = 1;
    let mut col: u32 = 1;
    let chars: Vec<char> = source.chars().collect();
    let mut i = 0usize;

    while i < chars.len() {
        let c = chars[i];
        let span = Span { line, col };
        match c {
            ' ' | '\t' | '\r' => {
                i += 1;
                col += 1;
            }
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            '0'..='9' => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                    col += 1;
                }
                if i < chars.len() && chars[i] == '.' {
                    return Err(ParseError::NonIntegerLiteral {
                        line: span.line,
                        col: span.col,
                    });
                }
                let text: String = chars[start..i].iter().collect();
                let value: BigInt = text.parse().expect("digits parse as BigInt");
                toks.push((Tok::Int(value), span));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                    col += 1;
                }
                let word: String = chars[start..i].iter().collect();
                toks.push((keyword(&word).unwrap_or(Tok::Ident(word)), span));
            }
            ':' => {
                if i + 1 < chars.len() && chars[i + 1] == '=' {
                    toks.push((Tok::Assign, span));
                    i += 2;
                    col += 2;
                } else {
                    return Err(ParseError::Lex {
                        msg: "':' must be followed by '='".into(),
                        line: span.line,
                        col: span.col,
                    });
                }
            }
            '!' => {
                if i + 1 < chars.len() && chars[i + 1] == '=' {
                    toks.push((Tok::Ne, span));
                    i += 2;
                    col += 2;
                } else {
                    return Err(ParseError::Lex {
                        msg: "'!' must be followed by '='".into(),
                        line: span.line,
                        col: span.col,
                    });
                }
            }
            '<' => {
                if i + 1 < chars.len() && chars[i + 1] == '=' {
                    toks.push((Tok::Le, span));
                    i += 2;
                    col += 2;
                } else {
                    toks.push((Tok::Lt, span));
                    i += 1;
                    col += 1;
                }
            }
            '>' => {
                if i + 1 < chars.len() && chars[i + 1] == '=' {
                    toks.push((Tok::Ge, span));
                    i += 2;
                    col += 2;
                } else {
                    toks.push((Tok::Gt, span));
                    i += 1;
                    col += 1;
                }
            }
            '=' => {
                toks.push((Tok::Eq, span));
                i += 1;
                col += 1;
            }
            '+' => {
                toks.push((Tok::Plus, span));
                i += 1;
                col += 1;
            }
            '-' => {
                toks.push((Tok::Minus, span));
                i += 1;
                col += 1;
            }
            '*' => {
                toks.push((Tok::Star, span));
                i += 1;
                col += 1;
            }
            '/' => {
                toks.push((Tok::Slash, span));
                i += 1;
                col += 1;
            }
            '%' => {
                toks.push((Tok::Percent, span));
                i += 1;
                col += 1;
            }
            ';' => {
                toks.push((Tok::Semi, span));
                i += 1;
                col += 1;
            }
            ',' => {
                toks.push((Tok::Comma, span));
                i += 1;
                col += 1;
            }
            '(' => {
                toks.push((Tok::LParen, span));
                i += 1;
                col += 1;
            }
            ')' => {
                toks.push((Tok::RParen, span));
                i += 1;
                col += 1;
            }
            '{' => {
                toks.push((Tok::LBrace, span));
                i += 1;
                col += 1;
            }
            '}' => {
                toks.push((Tok::RBrace, span));
                i += 1;
                col += 1;
            }
            '[' => {
                toks.push((Tok::LBracket, span));
                i += 1;
                col += 1;
            }
            ']' => {
                toks.push((Tok::RBracket, span));
                i += 1;
                col += 1;
            }
            other => {
                return Err(ParseError::Lex {
                    msg: format!("unexpected character '{other}'"),
                    line: span.line,
                    col: span.col,
                });
            }
        }
    }
    Ok(toks)
}
