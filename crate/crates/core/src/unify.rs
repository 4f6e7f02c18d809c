//! Syntactic (free-theory) unification with occurs check.

use crate::subst::Substitution;
use crate::term::{Term, Variable};
use std::collections::BTreeSet;
use thiserror::Error;

/// A set of equations to be solved simultaneously.
#[derive(Debug, Clone, Default)]
pub struct UnifyProblem {
    pub equations: Vec<(Term, Term)>,
}

impl UnifyProblem {
    pub fn one(lhs: Term, rhs: Term) -> UnifyProblem {
        UnifyProblem { equations: vec![(lhs, rhs)] }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UnifyError {
    /// The problem contains an XOR node; it must go through the equational
    /// route instead.
    #[error("problem contains an XOR term; use the equational unifier")]
    ImpureProblem,
}

/// Most general unifier over the free theory. `None` means not unifiable
/// (including occurs-check failures).
pub fn mgu_syntactic(p: &UnifyProblem) -> Result<Option<Substitution>, UnifyError> {
    for (l, r) in &p.equations {
        if l.contains_xor() || r.contains_xor() {
            return Err(UnifyError::ImpureProblem);
        }
    }
    Ok(unify_frozen(&p.equations, &BTreeSet::new()))
}

/// Martelli–Montanari style unification where variables in `frozen` behave
/// as constants: they are never bound, but free variables may be bound to
/// terms containing them. Used by the theory-combination driver.
pub(crate) fn unify_frozen(
    equations: &[(Term, Term)],
    frozen: &BTreeSet<Variable>,
) -> Option<Substitution> {
    unify_inner(equations, frozen, false)
}

fn unify_inner(
    equations: &[(Term, Term)],
    frozen: &BTreeSet<Variable>,
    assoc: bool,
) -> Option<Substitution> {
    let mut sigma = Substitution::empty();
    let mut work: Vec<(Term, Term)> = equations.to_vec();
    while let Some((l, r)) = work.pop() {
        let l = sigma.apply(&l);
        let r = sigma.apply(&r);
        if l == r {
            continue;
        }
        match (l, r) {
            (Term::Variable(v), t) | (t, Term::Variable(v)) if !frozen.contains(&v) => {
                if t.contains_var(&v) {
                    return None; // occurs check
                }
                let bind = Substitution::singleton(v, t);
                sigma = sigma.compose(&bind).ok()?;
            }
            (Term::Concat(a), Term::Concat(b)) => {
                if a.len() == b.len() {
                    work.extend(a.into_iter().zip(b));
                } else if assoc {
                    // flat lists of different lengths can still align when
                    // the shorter ends in a free variable absorbing the
                    // remaining suffix as a re-bracketed pair
                    let (short, long) = if a.len() < b.len() { (a, b) } else { (b, a) };
                    if short.len() < 2 {
                        return None;
                    }
                    let Some(Term::Variable(tail)) = short.last() else {
                        return None;
                    };
                    if frozen.contains(tail) {
                        return None;
                    }
                    let head = short.len() - 1;
                    let suffix = long[head..].to_vec();
                    let absorbed =
                        if suffix.len() == 1 { suffix[0].clone() } else { Term::Concat(suffix) };
                    work.push((Term::Variable(tail.clone()), absorbed));
                    work.extend(
                        short[..head].iter().cloned().zip(long[..head].iter().cloned()),
                    );
                } else {
                    return None;
                }
            }
            (Term::PublicKey(a), Term::PublicKey(b)) => work.push((*a, *b)),
            (Term::SharedKey(a1, a2), Term::SharedKey(b1, b2)) => {
                work.push((*a1, *b1));
                work.push((*a2, *b2));
            }
            (Term::AsymEnc { body: b1, key: k1 }, Term::AsymEnc { body: b2, key: k2 })
            | (Term::SymEnc { body: b1, key: k1 }, Term::SymEnc { body: b2, key: k2 })
            | (Term::Signature { body: b1, key: k1 }, Term::Signature { body: b2, key: k2 }) => {
                work.push((*b1, *b2));
                work.push((*k1, *k2));
            }
            (Term::Hash(a), Term::Hash(b)) => work.push((*a, *b)),
            _ => return None,
        }
    }
    Some(sigma)
}

/// Unification under associative re-bracketing of concatenations: both
/// sides flattened, with a trailing free variable absorbing a longer
/// partner's suffix at any depth.
pub(crate) fn unify_assoc(l: &Term, r: &Term) -> Option<Substitution> {
    unify_inner(&[(l.clone(), r.clone())], &BTreeSet::new(), true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::TypeTag;

    fn agent_var(n: &str) -> Term {
        Term::var(n, TypeTag::Agent)
    }

    #[test]
    fn reflexive_gives_empty_mgu() {
        let x = Term::var("X", TypeTag::Nonce);
        let s = mgu_syntactic(&UnifyProblem::one(x.clone(), x)).unwrap().unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn nsl_subproblem_one() {
        // penc([1, n_a]; pk(B)) ≈ penc([1, N_B]; pk(a)) → {n_a/N_B, a/B}
        let lhs = Term::penc(
            Term::concat(vec![Term::num(1), Term::atom("n_a", TypeTag::Nonce)]),
            Term::pk(agent_var("B")),
        );
        let rhs = Term::penc(
            Term::concat(vec![Term::num(1), Term::var("N_B", TypeTag::Nonce)]),
            Term::pk(Term::atom("a", TypeTag::Agent)),
        );
        let s = mgu_syntactic(&UnifyProblem::one(lhs.clone(), rhs.clone())).unwrap().unwrap();
        assert_eq!(s.apply(&lhs), s.apply(&rhs));
        assert_eq!(s.get_by_name("N_B"), Some(&Term::atom("n_a", TypeTag::Nonce)));
        assert_eq!(s.get_by_name("B"), Some(&Term::atom("a", TypeTag::Agent)));
        assert!(s.is_well_typed());
    }

    #[test]
    fn nsl_subproblem_two() {
        // [2, A] ≈ [2, b] → {b/A}
        let lhs = Term::concat(vec![Term::num(2), agent_var("A")]);
        let rhs = Term::concat(vec![Term::num(2), Term::atom("b", TypeTag::Agent)]);
        let s = mgu_syntactic(&UnifyProblem::one(lhs, rhs)).unwrap().unwrap();
        assert_eq!(s.get_by_name("A"), Some(&Term::atom("b", TypeTag::Agent)));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn occurs_check_rejects() {
        let x = Term::var("X", TypeTag::Nonce);
        let enc = Term::penc(x.clone(), Term::atom("k", TypeTag::Key));
        assert_eq!(mgu_syntactic(&UnifyProblem::one(x, enc)).unwrap(), None);
    }

    #[test]
    fn xor_is_rejected_as_impure() {
        let l = Term::Xor(vec![
            Term::atom("a", TypeTag::Agent),
            Term::atom("b", TypeTag::Agent),
        ]);
        let r = Term::atom("c", TypeTag::Agent);
        assert_eq!(
            mgu_syntactic(&UnifyProblem::one(l, r)),
            Err(UnifyError::ImpureProblem)
        );
    }

    #[test]
    fn distinct_constructors_never_unify() {
        let a = Term::atom("a", TypeTag::Agent);
        let k = Term::atom("k", TypeTag::Key);
        let penc = Term::penc(a.clone(), k.clone());
        let senc = Term::senc(a.clone(), k.clone());
        let hash = Term::hash(a.clone());
        let sig = Term::sig(a.clone(), k.clone());
        for (l, r) in [
            (penc.clone(), senc.clone()),
            (penc, hash.clone()),
            (senc, sig.clone()),
            (hash, sig),
        ] {
            assert_eq!(mgu_syntactic(&UnifyProblem::one(l, r)).unwrap(), None);
        }
        // Different-length concats do not unify either.
        let c2 = Term::concat(vec![a.clone(), k.clone()]);
        let c3 = Term::concat(vec![a.clone(), k.clone(), a.clone()]);
        assert_eq!(mgu_syntactic(&UnifyProblem::one(c2, c3)).unwrap(), None);
    }

    #[test]
    fn frozen_variables_behave_as_constants() {
        let frozen: BTreeSet<Variable> =
            [Variable { name: "W".into(), ty: TypeTag::Nonce }].into();
        let w = Term::var("W", TypeTag::Nonce);
        let a = Term::atom("a", TypeTag::Nonce);
        // frozen W can't bind to a...
        assert!(unify_frozen(&[(w.clone(), a.clone())], &frozen).is_none());
        // ...but a free variable may bind to W.
        let x = Term::var("X", TypeTag::Nonce);
        let s = unify_frozen(&[(x, w.clone())], &frozen).unwrap();
        assert_eq!(s.get_by_name("X"), Some(&w));
    }

    #[test]
    fn assoc_suffix_absorption() {
        // [a, b, n_b, 3] ≈ [a, b, X] → X := [n_b, 3]
        let a = Term::atom("a", TypeTag::Agent);
        let b = Term::atom("b", TypeTag::Agent);
        let n_b = Term::atom("n_b", TypeTag::Nonce);
        let long = Term::concat(vec![a.clone(), b.clone(), n_b.clone(), Term::num(3)]);
        let short = Term::concat(vec![a, b, Term::var("X", TypeTag::Nonce)]);
        let s = unify_assoc(&long, &short).unwrap();
        assert_eq!(
            s.get_by_name("X"),
            Some(&Term::concat(vec![n_b, Term::num(3)]))
        );
    }
}
