//! Combines per-fragment invariant templates into the invariant shape: a
//! linear combination, with symbolic coefficients, of the monomials
//! obtained by substituting each program variable for the iteration
//! counter in every fragment's closed form.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use thiserror::Error;

use crate::ais::{InvariantTemplate, TemplateTerm};
use crate::lang::Ident;
use crate::numeric::rat_display;

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error("invalid shape document: {0}")]
    InvalidJson(String),
}

/// One multiplicative factor of a generalized monomial.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Factor {
    /// `var^power` with a syntactic positive power.
    VarPow { var: Ident, power: u32 },
    /// `base^exponent` with a variable exponent, printed `exp(base, exponent)`.
    VarExpVar { base: Ident, exponent: Ident },
    /// `exp(base, exp(inner_base, inner_exponent))`.
    VarExpExp {
        base: Ident,
        inner_base: BigInt,
        inner_exponent: Ident,
    },
    /// `const^exponent` with a variable exponent; arises only when
    /// constant-update fragments are included.
    ConstExpVar { base: BigRational, exponent: Ident },
    /// A term over the program inputs (solver columns).
    Param(ParamTerm),
}

/// The fixed library of input-only terms the solver may give a nonzero
/// coefficient: the symbolic-constant slot realized over the inputs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamTerm {
    One,
    Var(Ident),
    /// Product of two inputs (equal for a square), factors sorted.
    Prod(Ident, Ident),
    /// `exp(base, exponent)` over two distinct inputs.
    Exp(Ident, Ident),
}

/// A product of factors in canonical (sorted) order, compared as a value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GeneralizedMonomial {
    factors: Vec<Factor>,
}

impl GeneralizedMonomial {
    pub fn new(mut factors: Vec<Factor>) -> Self {
        factors.sort();
        GeneralizedMonomial { factors }
    }

    pub fn var(v: impl Into<Ident>) -> Self {
        GeneralizedMonomial::new(vec![Factor::VarPow {
            var: v.into(),
            power: 1,
        }])
    }

    pub fn param(p: ParamTerm) -> Self {
        GeneralizedMonomial::new(vec![Factor::Param(p)])
    }

    /// Product of two variables; `x * x` collapses to `x^2`.
    pub fn var_product(a: &Ident, b: &Ident) -> Self {
        if a == b {
            GeneralizedMonomial::new(vec![Factor::VarPow {
                var: a.clone(),
                power: 2,
            }])
        } else {
            GeneralizedMonomial::new(vec![
                Factor::VarPow {
                    var: a.clone(),
                    power: 1,
                },
                Factor::VarPow {
                    var: b.clone(),
                    power: 1,
                },
            ])
        }
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn render(&self) -> String {
        self.factors
            .iter()
            .map(render_factor)
            .collect::<Vec<_>>()
            .join("*")
    }
}

impl std::fmt::Display for GeneralizedMonomial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.render())
    }
}

fn render_factor(f: &Factor) -> String {
    match f {
        Factor::VarPow { var, power: 1 } => var.clone(),
        Factor::VarPow { var, power } => format!("{var}^{power}"),
        Factor::VarExpVar { base, exponent } => format!("exp({base},{exponent})"),
        Factor::VarExpExp {
            base,
            inner_base,
            inner_exponent,
        } => {
            format!("exp({base},exp({inner_base},{inner_exponent}))")
        }
        Factor::ConstExpVar { base, exponent } => {
            format!("exp({},{exponent})", rat_display(base))
        }
        Factor::Param(p) => render_param(p),
    }
}

fn render_param(p: &ParamTerm) -> String {
    match p {
        ParamTerm::One => "1".into(),
        ParamTerm::Var(v) => v.clone(),
        ParamTerm::Prod(a, b) if a == b => format!("{a}^2"),
        ParamTerm::Prod(a, b) => format!("{a}*{b}"),
        ParamTerm::Exp(a, b) => format!("exp({a},{b})"),
    }
}

/// The predicted invariant skeleton: a set of monomials, each carrying a
/// symbolic coefficient, plus a symbolic constant slot, summed to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapePolynomial {
    monomials: Vec<GeneralizedMonomial>,
    pub includes_constant: bool,
}

impl ShapePolynomial {
    pub fn new(includes_constant: bool) -> Self {
        ShapePolynomial {
            monomials: Vec::new(),
            includes_constant,
        }
    }

    pub fn push(&mut self, m: GeneralizedMonomial) {
        if !self.monomials.contains(&m) {
            self.monomials.push(m);
        }
    }

    /// Monomials in insertion order (deduplicated).
    pub fn monomials(&self) -> &[GeneralizedMonomial] {
        &self.monomials
    }

    /// Order-insensitive view for equality checks.
    pub fn monomial_set(&self) -> BTreeSet<&GeneralizedMonomial> {
        self.monomials.iter().collect()
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    /// Classic rendering with symbolic coefficient letters:
    /// `A*x + B*v + ... + Q = 0`. The letters skip `I` and `O`.
    pub fn render_symbolic(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        let mut letters = coefficient_letters();
        for m in &self.monomials {
            let letter = letters.next().expect("letter stream is infinite");
            parts.push(format!("{letter}*{}", m.render()));
        }
        if self.includes_constant {
            let letter = letters.next().expect("letter stream is infinite");
            parts.push(letter);
        }
        if parts.is_empty() {
            "0 = 0".to_string()
        } else {
            format!("{} = 0", parts.join(" + "))
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "monomials": self.monomials.iter().map(monomial_to_json).collect::<Vec<_>>(),
            "includes_constant": self.includes_constant,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, ShapeError> {
        let obj = v
            .as_object()
            .ok_or_else(|| ShapeError::InvalidJson("expected an object".into()))?;
        let includes_constant = obj
            .get("includes_constant")
            .and_then(|b| b.as_bool())
            .ok_or_else(|| ShapeError::InvalidJson("missing includes_constant".into()))?;
        let monomials = obj
            .get("monomials")
            .and_then(|m| m.as_array())
            .ok_or_else(|| ShapeError::InvalidJson("missing monomials".into()))?;
        let mut shape = ShapePolynomial::new(includes_constant);
        for m in monomials {
            shape.push(monomial_from_json(m)?);
        }
        Ok(shape)
    }
}

/// A, B, C, ..., skipping I and O as coefficient names, then AA, AB, ...
fn coefficient_letters() -> impl Iterator<Item = String> {
    const ALPHA: &[u8] = b"ABCDEFGHJKLMNPQRSTUVWXYZ";
    let singles = ALPHA.iter().map(|&c| (c as char).to_string());
    let doubles = ALPHA
        .iter()
        .flat_map(|&a| ALPHA.iter().map(move |&b| format!("{}{}", a as char, b as char)));
    let numbered = (1usize..).map(|i| format!("C{i}"));
    singles.chain(doubles).chain(numbered)
}

/// JSON factor-record encoding of one monomial.
pub fn monomial_to_json(m: &GeneralizedMonomial) -> serde_json::Value {
    let factors: Vec<serde_json::Value> = m
        .factors()
        .iter()
        .map(|f| match f {
            Factor::VarPow { var, power } => serde_json::json!({
                "kind": "var_pow", "var": var, "power": power,
            }),
            Factor::VarExpVar { base, exponent } => serde_json::json!({
                "kind": "var_exp_var", "base": base, "exponent": exponent,
            }),
            Factor::VarExpExp {
                base,
                inner_base,
                inner_exponent,
            } => serde_json::json!({
                "kind": "var_exp_exp", "base": base,
                "inner_base": inner_base.to_string(), "inner_exponent": inner_exponent,
            }),
            Factor::ConstExpVar { base, exponent } => serde_json::json!({
                "kind": "const_exp_var", "base": rat_display(base), "exponent": exponent,
            }),
            Factor::Param(p) => serde_json::json!({
                "kind": "param", "term": render_param(p),
            }),
        })
        .collect();
    serde_json::Value::Array(factors)
}

/// Reads a monomial back from its factor-record encoding.
pub fn monomial_from_json(v: &serde_json::Value) -> Result<GeneralizedMonomial, ShapeError> {
    let arr = v
        .as_array()
        .ok_or_else(|| ShapeError::InvalidJson("monomial must be an array".into()))?;
    let mut factors = Vec::new();
    for f in arr {
        let obj = f
            .as_object()
            .ok_or_else(|| ShapeError::InvalidJson("factor must be an object".into()))?;
        let get = |k: &str| -> Result<&str, ShapeError> {
            obj.get(k)
                .and_then(|s| s.as_str())
                .ok_or_else(|| ShapeError::InvalidJson(format!("missing field '{k}'")))
        };
        let kind = get("kind")?;
        factors.push(match kind {
            "var_pow" => Factor::VarPow {
                var: get("var")?.to_string(),
                power: obj
                    .get("power")
                    .and_then(|p| p.as_u64())
                    .ok_or_else(|| ShapeError::InvalidJson("missing power".into()))?
                    as u32,
            },
            "var_exp_var" => Factor::VarExpVar {
                base: get("base")?.to_string(),
                exponent: get("exponent")?.to_string(),
            },
            "var_exp_exp" => Factor::VarExpExp {
                base: get("base")?.to_string(),
                inner_base: get("inner_base")?
                    .parse()
                    .map_err(|_| ShapeError::InvalidJson("bad inner_base".into()))?,
                inner_exponent: get("inner_exponent")?.to_string(),
            },
            "const_exp_var" => Factor::ConstExpVar {
                base: get("base")?
                    .parse()
                    .map_err(|_| ShapeError::InvalidJson("bad base".into()))?,
                exponent: get("exponent")?.to_string(),
            },
            "param" => Factor::Param(parse_param(get("term")?)?),
            other => {
                return Err(ShapeError::InvalidJson(format!(
                    "unknown factor kind '{other}'"
                )))
            }
        });
    }
    Ok(GeneralizedMonomial::new(factors))
}

fn parse_param(s: &str) -> Result<ParamTerm, ShapeError> {
    if s == "1" {
        return Ok(ParamTerm::One);
    }
    if let Some(rest) = s.strip_prefix("exp(").and_then(|r| r.strip_suffix(')')) {
        let (a, b) = rest
            .split_once(',')
            .ok_or_else(|| ShapeError::InvalidJson(format!("bad param '{s}'")))?;
        return Ok(ParamTerm::Exp(a.trim().to_string(), b.trim().to_string()));
    }
    if let Some((a, b)) = s.split_once('*') {
        return Ok(param_prod(a.trim(), b.trim()));
    }
    if let Some(base) = s.strip_suffix("^2") {
        return Ok(ParamTerm::Prod(base.to_string(), base.to_string()));
    }
    Ok(ParamTerm::Var(s.to_string()))
}

/// Canonical (sorted) input product.
pub fn param_prod(a: &str, b: &str) -> ParamTerm {
    if a <= b {
        ParamTerm::Prod(a.to_string(), b.to_string())
    } else {
        ParamTerm::Prod(b.to_string(), a.to_string())
    }
}

/// The default solver column library over the program inputs:
/// 1, each input, all pairwise products and squares, and `exp(p, q)` for
/// each ordered pair of distinct inputs (first-mentioned input as base).
pub fn default_param_terms(params: &[Ident]) -> Vec<ParamTerm> {
    let mut out = vec![ParamTerm::One];
    for p in params {
        out.push(ParamTerm::Var(p.clone()));
    }
    for (i, p) in params.iter().enumerate() {
        for q in params.iter().skip(i + 1) {
            out.push(param_prod(p, q));
        }
    }
    for p in params {
        out.push(ParamTerm::Prod(p.clone(), p.clone()));
    }
    for (i, p) in params.iter().enumerate() {
        for q in params.iter().skip(i + 1) {
            out.push(ParamTerm::Exp(p.clone(), q.clone()));
        }
    }
    out
}

/// Monomials a solved fragment contributes once the iteration counter is
/// substituted by each program variable:
///
/// - additive `lhs = lhs0 ± t·n` with a variable term: `lhs` plus `t·v`
///   for every variable `v`;
/// - multiplicative `lhs = lhs0 · t^n` with a variable term:
///   `lhs · t^v` for every `v`;
/// - double-exponential: `exp(lhs, exp(2, v))` for every `v`.
///
/// Fragments whose term is a constant contribute nothing unless
/// `include_constant_updates` is set, in which case the additive case
/// degenerates to `{lhs} ∪ vars` (a constant times a variable is just the
/// variable with a symbolic coefficient) and the multiplicative case to
/// `lhs · c^v`.
pub fn fragment_monomials(
    template: &InvariantTemplate,
    vars: &[Ident],
    include_constant_updates: bool,
) -> Vec<GeneralizedMonomial> {
    let mut out = Vec::new();
    let mut push = |m: GeneralizedMonomial| {
        if !out.contains(&m) {
            out.push(m);
        }
    };
    match template {
        InvariantTemplate::Additive { lhs, term, .. } => match term {
            TemplateTerm::Var(t) => {
                push(GeneralizedMonomial::var(lhs.clone()));
                for v in vars {
                    push(GeneralizedMonomial::var_product(t, v));
                }
            }
            TemplateTerm::Const(_) => {
                if include_constant_updates {
                    push(GeneralizedMonomial::var(lhs.clone()));
                    for v in vars {
                        push(GeneralizedMonomial::var(v.clone()));
                    }
                }
            }
        },
        InvariantTemplate::Multiplicative { lhs, term } => match term {
            TemplateTerm::Var(t) => {
                for v in vars {
                    push(GeneralizedMonomial::new(vec![
                        Factor::VarPow {
                            var: lhs.clone(),
                            power: 1,
                        },
                        Factor::VarExpVar {
                            base: t.clone(),
                            exponent: v.clone(),
                        },
                    ]));
                }
            }
            TemplateTerm::Const(c) => {
                if include_constant_updates {
                    for v in vars {
                        push(GeneralizedMonomial::new(vec![
                            Factor::VarPow {
                                var: lhs.clone(),
                                power: 1,
                            },
                            Factor::ConstExpVar {
                                base: c.clone(),
                                exponent: v.clone(),
                            },
                        ]));
                    }
                }
            }
        },
        InvariantTemplate::DoubleExp { lhs } => {
            for v in vars {
                push(GeneralizedMonomial::new(vec![Factor::VarExpExp {
                    base: lhs.clone(),
                    inner_base: BigInt::from(2),
                    inner_exponent: v.clone(),
                }]));
            }
        }
    }
    out
}

/// Union of the contributions of all solved fragments, plus the constant
/// slot. Linear (`lhs`) monomials come first in pair order, then each
/// pair's products, keeping first occurrences, so the symbolic rendering
/// lists coefficients in a stable, conventional order. As a set of
/// monomials the result is independent of pair order.
pub fn synthesize_shape(
    pairs: &[(&crate::shapespace::Fragment, InvariantTemplate)],
    vars: &[Ident],
    include_constant_updates: bool,
) -> ShapePolynomial {
    let mut shape = ShapePolynomial::new(true);
    for (_, template) in pairs {
        for m in fragment_monomials(template, vars, include_constant_updates) {
            if m.factors().len() == 1 && matches!(m.factors()[0], Factor::VarPow { power: 1, .. }) {
                shape.push(m);
            }
        }
    }
    for (_, template) in pairs {
        for m in fragment_monomials(template, vars, include_constant_updates) {
            shape.push(m);
        }
    }
    shape
}
