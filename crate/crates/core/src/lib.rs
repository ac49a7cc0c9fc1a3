//! Finite-dimensional bi-parameter dyadic Hardy spaces `H^p_N(H^q_N)` and the
//! randomized block-basis construction that factors the identity of `V_n`
//! through any operator on `V_N` with large diagonal.
//!
//! The crate is organised bottom-up:
//!
//! * [`dyadic`]: exact dyadic intervals, rectangles and the canonical basis order.
//! * [`haar`]: Haar-coefficient vectors, the mixed square-function norm and pairings.
//! * [`collections`]: Jones/Capon condition checkers and the Gamlen–Gaudet construction.
//! * [`block_basis`]: the randomized block basis and the operators `B`, `A`, `P`.
//! * [`operators`]: Gram-matrix operators, diagonal analysis, generators and norms.
//! * [`randomization`]: the random variables `W, X, Y, Z`, their moments and the sign search.
//! * [`factorization`]: constants, `U`, `S` and the factorization operators `E`, `F`.

pub mod block_basis;
pub mod collections;
pub mod dyadic;
pub mod error;
pub mod factorization;
pub mod haar;
mod numeric;
pub mod operators;
pub mod randomization;
pub mod rng;

pub use block_basis::{build_system, BlockBasisSystem, SignAssignment};
pub use collections::{
    alpha, check_capon, check_jones, gamlen_gaudet, CollectionFamily, ConditionReport,
    ConditionTag, Violation, Witness,
};
pub use dyadic::{enumerate, tensor, BasisEnumeration, DyadicInterval, DyadicRectangle};
pub use error::{Error, Result};
pub use factorization::{
    constants, factorize, verify_diagram, Constants, DiagramReport, FactorizationArtifacts,
    FactorizationParams, Mode,
};
pub use haar::{
    block_norm_closed_form, dual_norm_lower_bound, l2_inner, mixed_norm, ExponentPair,
    HardyElement, Side, SpaceDescriptor,
};
pub use operators::{
    generate_test_operator, norm_estimate, NormEstimate, NormMethod, OperatorMatrix, Structure,
};
pub use randomization::{
    eval_rv, exhaustive_moments, mc_moments, search_signs, MomentMethod, MomentReport,
    RandomVariable, RvIndex, SignSearchReport,
};
