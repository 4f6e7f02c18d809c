//! Substitutions: finite maps from variables to terms, kept idempotent.

use crate::term::{Term, Variable};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SubstError {
    /// Two substitutions bind the same variable to irreconcilable terms.
    #[error("conflicting bindings for {var}: {left} vs {right}")]
    Conflict { var: String, left: String, right: String },
    /// Resolving the bindings runs into a dependency cycle (occurs failure).
    #[error("cyclic bindings involving {var}")]
    Cycle { var: String },
}

/// An idempotent substitution. Invariants:
/// - no binding maps a variable to itself,
/// - no bound variable occurs in any binding's image,
/// - all images are in ACUN normal form.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Substitution {
    bindings: BTreeMap<Variable, Term>,
}

impl Substitution {
    pub fn empty() -> Substitution {
        Substitution::default()
    }

    pub fn singleton(v: Variable, t: Term) -> Substitution {
        let mut s = Substitution::empty();
        if Term::Variable(v.clone()) != t {
            s.bindings.insert(v, t.xor_normalize());
        }
        s
    }

    /// Builds a substitution from raw bindings and normalizes it to
    /// idempotent triangular form.
    pub fn from_bindings(
        pairs: impl IntoIterator<Item = (Variable, Term)>,
    ) -> Result<Substitution, SubstError> {
        let mut raw = Substitution::empty();
        for (v, t) in pairs {
            let t = t.xor_normalize();
            if let Some(prev) = raw.bindings.get(&v) {
                if *prev != t {
                    return Err(SubstError::Conflict {
                        var: v.name.clone(),
                        left: prev.to_string(),
                        right: t.to_string(),
                    });
                }
            } else if Term::Variable(v.clone()) != t {
                raw.bindings.insert(v, t);
            }
        }
        raw.into_idempotent()
    }

    /// Iterates application into the images until no bound variable occurs
    /// in any image. Bails out on cycles.
    fn into_idempotent(mut self) -> Result<Substitution, SubstError> {
        let bound: i64 = self.bindings.len() as i64 + 1;
        for _ in 0..bound {
            let mut changed = false;
            let snapshot = self.clone();
            for (v, t) in self.bindings.iter_mut() {
                let nt = snapshot.apply(t);
                if nt != *t {
                    if nt.contains_var(v) {
                        return Err(SubstError::Cycle { var: v.name.clone() });
                    }
                    *t = nt;
                    changed = true;
                }
            }
            if !changed {
                self.bindings.retain(|v, t| Term::Variable(v.clone()) != *t);
                return Ok(self);
            }
        }
        let offender = self.bindings.keys().next().cloned();
        Err(SubstError::Cycle { var: offender.map(|v| v.name).unwrap_or_default() })
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn get(&self, v: &Variable) -> Option<&Term> {
        self.bindings.get(v)
    }

    /// Looks a variable up by name, ignoring the declared type. Handy for
    /// tests and trace inspection where freshened instance suffixes apply.
    pub fn get_by_name(&self, name: &str) -> Option<&Term> {
        self.bindings.iter().find(|(v, _)| v.name == name).map(|(_, t)| t)
    }

    pub fn domain(&self) -> impl Iterator<Item = &Variable> {
        self.bindings.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Variable, &Term)> {
        self.bindings.iter()
    }

    /// Simultaneous replacement of bound variables, with XOR sums
    /// re-normalized on the way out.
    pub fn apply(&self, t: &Term) -> Term {
        if self.bindings.is_empty() {
            return t.clone();
        }
        match t {
            Term::Variable(v) => self.bindings.get(v).cloned().unwrap_or_else(|| t.clone()),
            Term::Constant(_) | Term::Atom(_) => t.clone(),
            Term::Concat(es) => Term::Concat(es.iter().map(|e| self.apply(e)).collect()),
            Term::PublicKey(a) => Term::pk(self.apply(a)),
            Term::SharedKey(a, b) => Term::sh(self.apply(a), self.apply(b)),
            Term::AsymEnc { body, key } => Term::penc(self.apply(body), self.apply(key)),
            Term::SymEnc { body, key } => Term::senc(self.apply(body), self.apply(key)),
            Term::Hash(b) => Term::hash(self.apply(b)),
            Term::Signature { body, key } => Term::sig(self.apply(body), self.apply(key)),
            Term::Xor(es) => Term::xor(es.iter().map(|e| self.apply(e)).collect()),
        }
    }

    /// Composition: `apply(compose(σ,τ), t) = apply(τ, apply(σ, t))`.
    pub fn compose(&self, tau: &Substitution) -> Result<Substitution, SubstError> {
        let mut out: BTreeMap<Variable, Term> = BTreeMap::new();
        for (v, t) in &self.bindings {
            out.insert(v.clone(), tau.apply(t));
        }
        for (v, t) in &tau.bindings {
            match out.get(v) {
                None => {
                    out.insert(v.clone(), t.clone());
                }
                Some(existing) => {
                    // σ already rewrote v; τ's own binding is reachable only
                    // if the two agree.
                    let theirs = tau.apply(t);
                    if *existing != theirs {
                        return Err(SubstError::Conflict {
                            var: v.name.clone(),
                            left: existing.to_string(),
                            right: theirs.to_string(),
                        });
                    }
                }
            }
        }
        Substitution { bindings: out }.into_idempotent()
    }

    /// True iff every binding t/V satisfies type(t) = type(V).
    pub fn is_well_typed(&self) -> bool {
        self.bindings.iter().all(|(v, t)| t.type_of().compatible(&v.ty))
    }

    /// Keeps only bindings for the given variables.
    pub fn restricted_to(&self, keep: impl Fn(&Variable) -> bool) -> Substitution {
        Substitution {
            bindings: self
                .bindings
                .iter()
                .filter(|(v, _)| keep(v))
                .map(|(v, t)| (v.clone(), t.clone()))
                .collect(),
        }
    }
}

impl fmt::Display for Substitution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (v, t)) in self.bindings.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{t}/{name}", name = v.name)?;
        }
        write!(f, "}}")
    }
}
