//! Symbolic analysis of security protocols for type-flaw attacks under the
//! ACUN (XOR) equational theory: term algebra, free and equational
//! unification, strand-space protocol models, the constraint-reduction
//! solver and the tagging transformations that prevent the attacks it finds.

pub mod acun;
pub mod dsl;
pub mod trace;
pub mod analysis;
pub mod protocol;
pub mod solver;
pub mod combine;
pub mod subst;
pub mod term;
pub mod unify;

pub use acun::{unify_acun, AcunError, PureProblem, Theory};
pub use combine::{combine, mgu_combined, purify, CombinationChoice, CombineError};
pub use subst::{SubstError, Substitution};
pub use term::{equal_mod_acun, Atom, Constant, Term, TypeTag, Variable};
pub use unify::{mgu_syntactic, UnifyError, UnifyProblem};
