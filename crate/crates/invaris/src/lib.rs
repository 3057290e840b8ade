//! Loop-invariant shape prediction with a clonal-selection immune engine
//! and exact trace-based instantiation.
//!
//! The pipeline, end to end:
//!
//! 1. [`lang`] parses a program written in a small integer while-language.
//! 2. [`shapespace`] splits it into assignment *fragments* and encodes each
//!    in-loop fragment as a five-slot shape vector (the antigen).
//! 3. [`ais`] holds a bounded memory of (pattern, invariant-template) cells
//!    (the antibodies) and answers each fragment by memory recall, clonal
//!    selection with somatic hypermutation, or receptor editing. Every
//!    answer is validated against an exact recurrence oracle.
//! 4. [`synth`] combines the per-fragment closed forms into a polynomial
//!    *shape*: the monomial skeleton of the loop invariant with symbolic
//!    coefficients.
//! 5. [`interp`] executes the program on sampled inputs and records
//!    loop-head snapshots; [`solver`] evaluates the shape on those
//!    snapshots and recovers exact coefficients as the rational null space
//!    of the resulting system.
//!
//! Everything is exact: big integers in the interpreter, big rationals in
//! the oracle and the solver. No floating point touches any value that
//! ends up in an invariant.

pub mod ais;
pub mod config;
pub mod corpus;
pub mod interp;
pub mod lang;
pub mod numeric;
pub mod pipeline;
pub mod shapespace;
pub mod solver;
pub mod synth;

#[cfg(test)]
pub(crate) mod testutil {
    use crate::lang::parse;
    use crate::shapespace::{extract_fragments, Fragment};

    /// Builds a well-formed one-loop program around `assign` and returns
    /// that in-loop fragment.
    pub fn fragment(assign: &str) -> Fragment {
        let mut inits = String::new();
        let mut seen = std::collections::BTreeSet::new();
        for word in assign
            .split(|c: char| !c.is_ascii_alphanumeric() && c != '_')
            .filter(|w| w.chars().next().is_some_and(|c| c.is_ascii_alphabetic()))
        {
            if word != "exp" && seen.insert(word.to_string()) {
                inits.push_str(&format!("{word} := q;\n"));
            }
        }
        let src = format!(
            "{{ q > 0 }}\n{inits}seed_var := q;\nwhile seed_var > 0 do\n{assign};\nseed_var := seed_var - 1;\nend while;\n"
        );
        let p = parse(&src).unwrap();
        extract_fragments(&p)
            .into_iter()
            .find(|f| f.in_loop() && f.render() == assign)
            .unwrap_or_else(|| panic!("fragment '{assign}' not found"))
    }
}
