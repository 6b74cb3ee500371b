//! Numerical evidence for the structural conditions behind existence of
//! optimal team strategies: kernel regularity, coercivity of the cost,
//! tail bounds and compact-set tightness.
//!
//! Grid and sampling checks are falsifiers, not proofs. The exception is
//! the coercivity certificate for quadratic leading terms, which is built
//! analytically and then re-checked by sampling.

mod c1;
mod ic;
mod markov;
mod tightness;

pub use c1::{check_condition_c1, C1Grid, C1Kernel, C1Options, C1Report};
pub use ic::{check_ic_class, IcMethod, IcQuery, IcReport, WitnessPoint};
pub use markov::{generalized_markov_bound, MarkovBound};
pub use tightness::{
    sequential_tail_mass, sequential_tightness, tightness_sets, Marginal, Rung, TailCheck, TightnessCertificate,
    TightnessQuery,
};
