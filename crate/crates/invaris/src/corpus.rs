//! The benchmark programs shipped with the project, embedded from
//! `programs/` so library users, tests, and the CLI all see the same
//! sources.

use num_bigint::BigInt;
use num_rational::BigRational;

use crate::ais::{InvariantTemplate, MemoryPool, Sign, TemplateTerm};
use crate::config::AisConfig;
use crate::lang::{parse, Program};
use crate::shapespace::{extract_fragments, Fragment};

/// Binary multiplication of two non-negative inputs.
pub const MULTIPLICATION: &str = include_str!("../../../programs/multiplication.whl");

/// Simultaneous gcd/lcm of two positive inputs.
pub const GCD_LCM: &str = include_str!("../../../programs/gcd_lcm.whl");

/// Fast exponentiation by squaring.
pub const EXPONENTIATION: &str = include_str!("../../../programs/exponentiation.whl");

/// Tiny program whose loop contains the canonical training fragment
/// `x := x + 2`.
pub const TRAIN_ADD_TWO: &str = include_str!("../../../programs/train_add_two.whl");

/// Hand-written shape for the multiplication program, as a shape document.
pub const MULTIPLICATION_SHAPE_JSON: &str =
    include_str!("../../../programs/multiplication_shape.json");

pub fn multiplication() -> Program {
    parse(MULTIPLICATION).expect("corpus program parses")
}

pub fn gcd_lcm() -> Program {
    parse(GCD_LCM).expect("corpus program parses")
}

pub fn exponentiation() -> Program {
    parse(EXPONENTIATION).expect("corpus program parses")
}

pub fn train_add_two() -> Program {
    parse(TRAIN_ADD_TWO).expect("corpus program parses")
}

/// The in-loop fragment `x := x + 2` of [`TRAIN_ADD_TWO`].
pub fn training_fragment() -> Fragment {
    extract_fragments(&train_add_two())
        .into_iter()
        .find(|f| f.in_loop())
        .expect("training program has an in-loop fragment")
}

/// Its closed form, `x = x0 + 2*n`.
pub fn training_template() -> InvariantTemplate {
    InvariantTemplate::Additive {
        lhs: "x".into(),
        sign: Sign::Plus,
        term: TemplateTerm::Const(BigRational::from(BigInt::from(2))),
    }
}

/// A pool holding exactly the canonical training pair.
pub fn trained_pool(cfg: &AisConfig) -> MemoryPool {
    let mut pool = MemoryPool::new(cfg.capacity);
    crate::ais::train(&mut pool, &training_fragment(), training_template(), cfg)
        .expect("training pair passes the oracle");
    pool
}
