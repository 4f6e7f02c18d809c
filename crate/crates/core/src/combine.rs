//! Combined unification for the union of the free theory and ACUN:
//! purification into theory-pure sub-problems, exhaustive enumeration of
//! variable identifications and theory assignments, and recombination of
//! the pure most general unifiers.
//!
//! The enumeration is the classic nondeterministic combination scheme:
//! guess a partition of the variables into equivalence classes (each class
//! collapses to a representative), guess for each representative the theory
//! in which it is solved as a variable (it is a free constant in the other),
//! solve the pure problems independently, and merge. Instead of also
//! guessing a linear order on representatives, the order is read off the
//! dependency graph of the two pure unifiers; cyclic merges reject the
//! choice. Both component unifiers are unitary, so no unifier is lost.

use crate::acun::{unify_acun, PureProblem, Theory};
use crate::subst::Substitution;
use crate::term::{equal_mod_acun, Term, Variable};
use crate::unify::unify_frozen;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

/// Reserved namespace for abstraction variables introduced by purification.
pub const ABSTRACTION_PREFIX: &str = "_W";

pub fn is_abstraction_var(v: &Variable) -> bool {
    v.name.starts_with(ABSTRACTION_PREFIX)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CombineError {
    #[error("combination of pure unifiers has a dependency cycle at {0}")]
    Conflict(String),
}

/// One branch of the combination nondeterminism.
#[derive(Debug, Clone)]
pub struct CombinationChoice {
    /// Equivalence classes of variables; the first member is the
    /// representative the others are renamed to.
    pub identification: Vec<Vec<Variable>>,
    /// Theory in which each representative is solved as a variable.
    pub theory_assignment: BTreeMap<Variable, Theory>,
}

struct Purifier {
    counter: usize,
    std_eqs: Vec<(Term, Term)>,
    acun_eqs: Vec<(Term, Term)>,
    abstraction: BTreeMap<Variable, Term>,
    seen: BTreeMap<(Term, bool), Variable>,
}

impl Purifier {
    fn new() -> Purifier {
        Purifier {
            counter: 0,
            std_eqs: Vec::new(),
            acun_eqs: Vec::new(),
            abstraction: BTreeMap::new(),
            seen: BTreeMap::new(),
        }
    }

    fn fresh(&mut self, original: &Term) -> Variable {
        self.counter += 1;
        let v = Variable {
            name: format!("{}{}", ABSTRACTION_PREFIX, self.counter),
            ty: original.type_of(),
        };
        self.abstraction.insert(v.clone(), original.clone());
        v
    }

    /// Abstracts an alien subterm by a fresh variable with a defining
    /// equation in the theory the subterm belongs to.
    fn abstract_term(&mut self, t: &Term, def_theory: Theory) -> Term {
        let key = (t.clone(), matches!(def_theory, Theory::Acun));
        if let Some(v) = self.seen.get(&key) {
            return Term::Variable(v.clone());
        }
        let v = self.fresh(t);
        self.seen.insert(key, v.clone());
        let purified = self.purify_in(t, def_theory);
        match def_theory {
            Theory::Std => self.std_eqs.push((Term::Variable(v.clone()), purified)),
            Theory::Acun => self.acun_eqs.push((Term::Variable(v.clone()), purified)),
        }
        Term::Variable(v)
    }

    fn purify_in(&mut self, t: &Term, theory: Theory) -> Term {
        match (t, theory) {
            (Term::Variable(_) | Term::Constant(_) | Term::Atom(_), _) => t.clone(),
            (Term::Xor(es), Theory::Acun) => Term::xor(
                es.iter()
                    .map(|e| match e {
                        Term::Variable(_) | Term::Constant(_) | Term::Atom(_) => e.clone(),
                        alien => self.abstract_term(alien, Theory::Std),
                    })
                    .collect(),
            ),
            (Term::Xor(_), Theory::Std) => self.abstract_term(t, Theory::Acun),
            (std_term, Theory::Acun) => self.abstract_term(std_term, Theory::Std),
            (std_term, Theory::Std) => match std_term {
                Term::Concat(es) => {
                    Term::Concat(es.iter().map(|e| self.purify_in(e, Theory::Std)).collect())
                }
                Term::PublicKey(a) => Term::pk(self.purify_in(a, Theory::Std)),
                Term::SharedKey(a, b) => {
                    Term::sh(self.purify_in(a, Theory::Std), self.purify_in(b, Theory::Std))
                }
                Term::AsymEnc { body, key } => Term::penc(
                    self.purify_in(body, Theory::Std),
                    self.purify_in(key, Theory::Std),
                ),
                Term::SymEnc { body, key } => Term::senc(
                    self.purify_in(body, Theory::Std),
                    self.purify_in(key, Theory::Std),
                ),
                Term::Hash(b) => Term::hash(self.purify_in(b, Theory::Std)),
                Term::Signature { body, key } => Term::sig(
                    self.purify_in(body, Theory::Std),
                    self.purify_in(key, Theory::Std),
                ),
                _ => unreachable!("handled above"),
            },
        }
    }
}

/// Splits mixed-theory equations into theory-pure problems, abstracting
/// every alien subterm by a fresh `_W` variable with a defining equation.
/// The union of the pure problems plus the abstraction map is equivalent to
/// the input.
pub fn purify(
    equations: &[(Term, Term)],
) -> (Vec<PureProblem>, BTreeMap<Variable, Term>) {
    let mut p = Purifier::new();
    for (l, r) in equations {
        let l = l.xor_normalize();
        let r = r.xor_normalize();
        let is_acun = matches!(l, Term::Xor(_)) || matches!(r, Term::Xor(_));
        if is_acun {
            let pl = p.purify_in(&l, Theory::Acun);
            let pr = p.purify_in(&r, Theory::Acun);
            p.acun_eqs.push((pl, pr));
        } else {
            let pl = p.purify_in(&l, Theory::Std);
            let pr = p.purify_in(&r, Theory::Std);
            p.std_eqs.push((pl, pr));
        }
    }
    let mut out = Vec::new();
    if !p.std_eqs.is_empty() {
        out.push(PureProblem { theory: Theory::Std, equations: p.std_eqs });
    }
    if !p.acun_eqs.is_empty() {
        out.push(PureProblem { theory: Theory::Acun, equations: p.acun_eqs });
    }
    (out, p.abstraction)
}

fn rename_term(t: &Term, renaming: &BTreeMap<Variable, Variable>) -> Term {
    match t {
        Term::Variable(v) => {
            Term::Variable(renaming.get(v).cloned().unwrap_or_else(|| v.clone()))
        }
        Term::Constant(_) | Term::Atom(_) => t.clone(),
        Term::Concat(es) => Term::Concat(es.iter().map(|e| rename_term(e, renaming)).collect()),
        Term::PublicKey(a) => Term::pk(rename_term(a, renaming)),
        Term::SharedKey(a, b) => Term::sh(rename_term(a, renaming), rename_term(b, renaming)),
        Term::AsymEnc { body, key } => {
            Term::penc(rename_term(body, renaming), rename_term(key, renaming))
        }
        Term::SymEnc { body, key } => {
            Term::senc(rename_term(body, renaming), rename_term(key, renaming))
        }
        Term::Hash(b) => Term::hash(rename_term(b, renaming)),
        Term::Signature { body, key } => {
            Term::sig(rename_term(body, renaming), rename_term(key, renaming))
        }
        Term::Xor(es) => Term::xor(es.iter().map(|e| rename_term(e, renaming)).collect()),
    }
}

/// All set partitions of `vars` whose classes are pairwise plausible.
fn enumerate_partitions(
    vars: &[Variable],
    plausible: &dyn Fn(&Variable, &Variable) -> bool,
) -> Vec<Vec<Vec<Variable>>> {
    let mut out = Vec::new();
    let mut classes: Vec<Vec<Variable>> = Vec::new();
    fn rec(
        vars: &[Variable],
        idx: usize,
        classes: &mut Vec<Vec<Variable>>,
        plausible: &dyn Fn(&Variable, &Variable) -> bool,
        out: &mut Vec<Vec<Vec<Variable>>>,
    ) {
        if idx == vars.len() {
            out.push(classes.clone());
            return;
        }
        let v = &vars[idx];
        for c in 0..classes.len() {
            if classes[c].iter().all(|m| plausible(m, v)) {
                classes[c].push(v.clone());
                rec(vars, idx + 1, classes, plausible, out);
                classes[c].pop();
            }
        }
        classes.push(vec![v.clone()]);
        rec(vars, idx + 1, classes, plausible, out);
        classes.pop();
    }
    rec(vars, 0, &mut classes, plausible, &mut out);
    out
}

/// Merges the two pure unifiers into one substitution over the original
/// variables, resolving abstraction variables away. The linear order on
/// variables is derived by the iterated-application fixpoint; a genuine
/// cycle is a `Conflict`.
pub fn combine(
    sigma_std: &Substitution,
    sigma_acun: &Substitution,
    abstraction: &BTreeMap<Variable, Term>,
) -> Result<Substitution, CombineError> {
    combine_with_renaming(sigma_std, sigma_acun, &BTreeMap::new(), abstraction, None)
}

fn combine_with_renaming(
    sigma_std: &Substitution,
    sigma_acun: &Substitution,
    renaming: &BTreeMap<Variable, Variable>,
    abstraction: &BTreeMap<Variable, Term>,
    project_to: Option<&BTreeSet<Variable>>,
) -> Result<Substitution, CombineError> {
    let mut all: Vec<(Variable, Term)> = Vec::new();
    for (m, rep) in renaming {
        all.push((m.clone(), Term::Variable(rep.clone())));
    }
    for (v, t) in sigma_std.iter().chain(sigma_acun.iter()) {
        all.push((v.clone(), t.clone()));
    }
    let merged = Substitution::from_bindings(all)
        .map_err(|e| CombineError::Conflict(e.to_string()))?;

    // Resolve abstraction variables: each _W stands for its original
    // subterm under the merged substitution.
    let resolve_limit = abstraction.len() + 2;
    let mut bindings: Vec<(Variable, Term)> = Vec::new();
    let keep = |v: &Variable| match project_to {
        Some(set) => set.contains(v),
        None => !is_abstraction_var(v),
    };
    for (v, t) in merged.iter() {
        if !keep(v) {
            continue;
        }
        let mut img = t.clone();
        let mut rounds = 0;
        while img.vars().iter().any(is_abstraction_var) {
            rounds += 1;
            if rounds > resolve_limit {
                return Err(CombineError::Conflict(v.name.clone()));
            }
            let reps: Vec<(Variable, Term)> = img
                .vars()
                .into_iter()
                .filter(is_abstraction_var)
                .filter_map(|w| {
                    abstraction.get(&w).map(|orig| (w, merged.apply(orig)))
                })
                .collect();
            if reps.is_empty() {
                return Err(CombineError::Conflict(v.name.clone()));
            }
            let step = Substitution::from_bindings(reps)
                .map_err(|e| CombineError::Conflict(e.to_string()))?;
            img = step.apply(&img);
        }
        bindings.push((v.clone(), img));
    }
    Substitution::from_bindings(bindings).map_err(|e| CombineError::Conflict(e.to_string()))
}

/// Complete unification modulo the free theory plus ACUN. Returns the
/// deduplicated set of unifiers; the empty list means non-unifiable. Every
/// result is sound (it equalizes the inputs modulo ACUN) and the set is
/// ground-complete on the finite enumeration this procedure performs.
pub fn mgu_combined(t: &Term, u: &Term) -> Vec<Substitution> {
    let t = t.xor_normalize();
    let u = u.xor_normalize();
    if t == u {
        return vec![Substitution::empty()];
    }
    if !t.contains_xor() && !u.contains_xor() {
        return match unify_frozen(&[(t, u)], &BTreeSet::new()) {
            Some(s) => vec![s],
            None => Vec::new(),
        };
    }

    let (problems, abstraction) = purify(&[(t.clone(), u.clone())]);
    let std_eqs: Vec<(Term, Term)> = problems
        .iter()
        .filter(|p| p.theory == Theory::Std)
        .flat_map(|p| p.equations.clone())
        .collect();
    let acun_eqs: Vec<(Term, Term)> = problems
        .iter()
        .filter(|p| p.theory == Theory::Acun)
        .flat_map(|p| p.equations.clone())
        .collect();

    let mut all_vars: BTreeSet<Variable> = BTreeSet::new();
    for (l, r) in std_eqs.iter().chain(acun_eqs.iter()) {
        l.collect_vars(&mut all_vars);
        r.collect_vars(&mut all_vars);
    }
    let vars: Vec<Variable> = all_vars.iter().cloned().collect();

    // Theory of each abstraction variable's defining term, for plausibility
    // pruning of identification classes.
    let def_head: BTreeMap<Variable, &Term> =
        abstraction.iter().map(|(v, t)| (v.clone(), t)).collect();
    let plausible = |a: &Variable, b: &Variable| -> bool {
        match (def_head.get(a), def_head.get(b)) {
            (Some(da), Some(db)) => {
                let a_xor = matches!(da, Term::Xor(_));
                let b_xor = matches!(db, Term::Xor(_));
                if a_xor || b_xor {
                    return true; // cancellation can reconcile XOR definitions
                }
                unify_frozen(&[((*da).clone(), (*db).clone())], &BTreeSet::new()).is_some()
            }
            _ => true,
        }
    };

    let original_vars: BTreeSet<Variable> = {
        let mut s = t.vars();
        s.extend(u.vars());
        s
    };

    let mut results: Vec<Substitution> = Vec::new();
    let mut std_memo: HashMap<String, Option<Substitution>> = HashMap::new();
    let mut acun_memo: HashMap<String, Option<Substitution>> = HashMap::new();

    for classes in enumerate_partitions(&vars, &plausible) {
        // Representative = smallest member; rename the rest onto it.
        let mut renaming: BTreeMap<Variable, Variable> = BTreeMap::new();
        let mut reps: Vec<Variable> = Vec::new();
        for class in &classes {
            let rep = class.iter().min().cloned().expect("non-empty class");
            for m in class {
                if *m != rep {
                    renaming.insert(m.clone(), rep.clone());
                }
            }
            reps.push(rep);
        }
        reps.sort();

        let std_renamed: Vec<(Term, Term)> = std_eqs
            .iter()
            .map(|(l, r)| (rename_term(l, &renaming), rename_term(r, &renaming)))
            .collect();
        let acun_renamed: Vec<(Term, Term)> = acun_eqs
            .iter()
            .map(|(l, r)| (rename_term(l, &renaming), rename_term(r, &renaming)))
            .collect();

        let occurs = |eqs: &[(Term, Term)], v: &Variable| {
            eqs.iter().any(|(l, r)| l.contains_var(v) || r.contains_var(v))
        };

        // Per representative: the theories it may be solved in. A variable
        // absent from one theory's equations gains nothing from being
        // solvable there, so its assignment is forced.
        let mut choices_per_rep: Vec<(Variable, Vec<Theory>)> = Vec::new();
        for rep in &reps {
            let in_std = occurs(&std_renamed, rep);
            let in_acun = occurs(&acun_renamed, rep);
            let options = match (in_std, in_acun) {
                (true, true) => vec![Theory::Std, Theory::Acun],
                (false, true) => vec![Theory::Acun],
                _ => vec![Theory::Std],
            };
            choices_per_rep.push((rep.clone(), options));
        }

        let mut assignment_stack: Vec<BTreeMap<Variable, Theory>> = vec![BTreeMap::new()];
        for (rep, options) in &choices_per_rep {
            let mut next = Vec::new();
            for partial in &assignment_stack {
                for th in options {
                    let mut p = partial.clone();
                    p.insert(rep.clone(), *th);
                    next.push(p);
                }
            }
            assignment_stack = next;
        }

        for assignment in assignment_stack {
            let frozen_for_std: BTreeSet<Variable> = assignment
                .iter()
                .filter(|(_, th)| **th == Theory::Acun)
                .map(|(v, _)| v.clone())
                .collect();
            let frozen_for_acun: BTreeSet<Variable> = assignment
                .iter()
                .filter(|(_, th)| **th == Theory::Std)
                .map(|(v, _)| v.clone())
                .collect();

            let std_key = format!("{std_renamed:?}|{frozen_for_std:?}");
            let sigma_std = std_memo
                .entry(std_key)
                .or_insert_with(|| unify_frozen(&std_renamed, &frozen_for_std))
                .clone();
            let Some(sigma_std) = sigma_std else { continue };

            let acun_key = format!("{acun_renamed:?}|{frozen_for_acun:?}");
            let sigma_acun = acun_memo
                .entry(acun_key)
                .or_insert_with(|| {
                    let p = PureProblem { theory: Theory::Acun, equations: acun_renamed.clone() };
                    match unify_acun(&p, &frozen_for_acun) {
                        Ok(mut sols) => sols.pop(),
                        Err(_) => None,
                    }
                })
                .clone();
            let sigma_acun = if acun_renamed.is_empty() {
                Substitution::empty()
            } else {
                match sigma_acun {
                    Some(s) => s,
                    None => continue,
                }
            };

            let Ok(candidate) = combine_with_renaming(
                &sigma_std,
                &sigma_acun,
                &renaming,
                &abstraction,
                Some(&original_vars),
            ) else {
                continue;
            };

            if equal_mod_acun(&candidate.apply(&t), &candidate.apply(&u)) {
                results.push(candidate);
            }
        }
    }

    dedup_unifiers(results)
}

/// `general` subsumes `specific` when some substitution instance of
/// `general` agrees with `specific` on every bound variable. The matcher is
/// syntactic with a simple XOR-difference rule; it under-approximates, which
/// only means occasionally keeping a redundant unifier.
fn subsumes(general: &Substitution, specific: &Substitution) -> bool {
    let mut tau = Substitution::empty();
    let mut vars: BTreeSet<Variable> = general.domain().cloned().collect();
    vars.extend(specific.domain().cloned());
    for v in vars {
        let vg = general.apply(&Term::Variable(v.clone()));
        let vs = specific.apply(&Term::Variable(v.clone()));
        if !match_into(&vg, &vs, &mut tau) {
            return false;
        }
    }
    true
}

fn match_into(pattern: &Term, target: &Term, tau: &mut Substitution) -> bool {
    let p = tau.apply(pattern);
    if equal_mod_acun(&p, target) {
        return true;
    }
    match (&p, target) {
        (Term::Variable(v), t) => match Substitution::singleton(v.clone(), t.clone()) {
            bind => match tau.compose(&bind) {
                Ok(next) => {
                    *tau = next;
                    true
                }
                Err(_) => false,
            },
        },
        (Term::Concat(a), Term::Concat(b)) if a.len() == b.len() => {
            a.iter().zip(b).all(|(x, y)| match_into(x, y, tau))
        }
        (Term::PublicKey(a), Term::PublicKey(b)) => match_into(a, b, tau),
        (Term::SharedKey(a1, a2), Term::SharedKey(b1, b2)) => {
            match_into(a1, b1, tau) && match_into(a2, b2, tau)
        }
        (Term::AsymEnc { body: b1, key: k1 }, Term::AsymEnc { body: b2, key: k2 })
        | (Term::SymEnc { body: b1, key: k1 }, Term::SymEnc { body: b2, key: k2 })
        | (Term::Signature { body: b1, key: k1 }, Term::Signature { body: b2, key: k2 }) => {
            match_into(b1, b2, tau) && match_into(k1, k2, tau)
        }
        (Term::Hash(a), Term::Hash(b)) => match_into(a, b, tau),
        (Term::Xor(pes), _) => {
            // Cancel pattern elements that occur verbatim in the target sum,
            // then let a single leftover variable absorb the difference.
            let tes: Vec<Term> = match target {
                Term::Xor(tes) => tes.clone(),
                other => vec![other.clone()],
            };
            let mut remaining_t = tes;
            let mut leftover_p: Vec<Term> = Vec::new();
            for pe in pes {
                if let Some(pos) = remaining_t.iter().position(|te| te == pe) {
                    remaining_t.remove(pos);
                } else {
                    leftover_p.push(pe.clone());
                }
            }
            match leftover_p.as_slice() {
                [] => remaining_t.is_empty(),
                [Term::Variable(v)] => {
                    match_into(&Term::Variable(v.clone()), &Term::xor(remaining_t), tau)
                }
                _ => false,
            }
        }
        _ => false,
    }
}

fn dedup_unifiers(mut results: Vec<Substitution>) -> Vec<Substitution> {
    results.sort_by_key(|s| s.to_string());
    results.dedup();
    let mut keep: Vec<Substitution> = Vec::new();
    'outer: for (i, cand) in results.iter().enumerate() {
        for (j, other) in results.iter().enumerate() {
            if i != j && subsumes(other, cand) && !(subsumes(cand, other) && i < j) {
                continue 'outer;
            }
        }
        keep.push(cand.clone());
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::TypeTag;

    fn agent_atom(n: &str) -> Term {
        Term::atom(n, TypeTag::Agent)
    }
    fn nonce_atom(n: &str) -> Term {
        Term::atom(n, TypeTag::Nonce)
    }

    /// The worked unification problem:
    /// penc([1,n_a];pk(B)) ≈ penc([1,N_B];pk(a)) ⊕ [2,A] ⊕ [2,b]
    fn worked_problem() -> (Term, Term) {
        let lhs = Term::penc(
            Term::concat(vec![Term::num(1), nonce_atom("n_a")]),
            Term::pk(Term::var("B", TypeTag::Agent)),
        );
        let rhs = Term::xor(vec![
            Term::penc(
                Term::concat(vec![Term::num(1), Term::var("N_B", TypeTag::Nonce)]),
                Term::pk(agent_atom("a")),
            ),
            Term::concat(vec![Term::num(2), Term::var("A", TypeTag::Agent)]),
            Term::concat(vec![Term::num(2), agent_atom("b")]),
        ]);
        (lhs, rhs)
    }

    #[test]
    fn purify_worked_problem_shape() {
        let (lhs, rhs) = worked_problem();
        let (problems, abstraction) = purify(&[(lhs, rhs)]);
        let std: Vec<_> = problems.iter().filter(|p| p.theory == Theory::Std).collect();
        let acun: Vec<_> = problems.iter().filter(|p| p.theory == Theory::Acun).collect();
        assert_eq!(std.len(), 1);
        assert_eq!(acun.len(), 1);
        // Four abstracted standard terms, one ACUN equation _W ≈ _X ⊕ _Y ⊕ _Z.
        assert_eq!(std[0].equations.len(), 4);
        assert_eq!(acun[0].equations.len(), 1);
        assert_eq!(abstraction.len(), 4);
    }

    #[test]
    fn purify_pure_std_input_is_untouched() {
        let l = Term::penc(agent_atom("a"), Term::pk(agent_atom("b")));
        let r = Term::var("X", TypeTag::Key);
        let (problems, abstraction) = purify(&[(l, r)]);
        assert_eq!(problems.len(), 1);
        assert_eq!(problems[0].theory, Theory::Std);
        assert!(abstraction.is_empty());
    }

    #[test]
    fn purify_pure_acun_input_has_no_abstraction() {
        let l = Term::Xor(vec![agent_atom("a"), agent_atom("b")]);
        let (problems, abstraction) = purify(&[(l.clone(), l)]);
        assert_eq!(problems.len(), 1);
        assert_eq!(problems[0].theory, Theory::Acun);
        assert!(abstraction.is_empty());
    }

    #[test]
    fn worked_problem_has_exactly_one_unifier() {
        let (lhs, rhs) = worked_problem();
        let sols = mgu_combined(&lhs, &rhs);
        assert_eq!(sols.len(), 1, "got: {:?}", sols.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        let s = &sols[0];
        assert_eq!(s.get_by_name("N_B"), Some(&nonce_atom("n_a")));
        assert_eq!(s.get_by_name("A"), Some(&agent_atom("b")));
        assert_eq!(s.get_by_name("B"), Some(&agent_atom("a")));
        assert!(s.is_well_typed());
        assert!(equal_mod_acun(&s.apply(&lhs), &s.apply(&rhs)));
    }

    #[test]
    fn identical_terms_unify_with_empty_mgu() {
        let t = Term::xor(vec![agent_atom("a"), Term::var("X", TypeTag::Agent)]);
        let sols = mgu_combined(&t, &t);
        assert_eq!(sols.len(), 1);
        assert!(sols[0].is_empty());
    }

    #[test]
    fn differing_tagged_xor_elements_do_not_unify() {
        // [#nonce, n_a] ⊕ [#agent, b]  vs  [#key, k] ⊕ [#num, 1]
        let l = Term::xor(vec![
            Term::concat(vec![Term::tag("nonce"), nonce_atom("n_a")]),
            Term::concat(vec![Term::tag("agent"), agent_atom("b")]),
        ]);
        let r = Term::xor(vec![
            Term::concat(vec![Term::tag("key"), Term::atom("k", TypeTag::Key)]),
            Term::concat(vec![Term::tag("num"), Term::num(1)]),
        ]);
        assert!(mgu_combined(&l, &r).is_empty());
    }

    #[test]
    fn xor_variable_solution_from_attack() {
        // n_a ⊕ i ≈ N_A ⊕ b → N_A := n_a ⊕ b ⊕ i
        let l = Term::xor(vec![nonce_atom("n_a"), Term::attacker()]);
        let r = Term::xor(vec![Term::var("N_A", TypeTag::Nonce), agent_atom("b")]);
        let sols = mgu_combined(&l, &r);
        assert_eq!(sols.len(), 1);
        assert_eq!(
            sols[0].get_by_name("N_A"),
            Some(&Term::xor(vec![nonce_atom("n_a"), agent_atom("b"), Term::attacker()]))
        );
        assert!(!sols[0].is_well_typed());
    }

    #[test]
    fn combine_examples() {
        let b_for_a = Substitution::singleton(
            Variable { name: "A".into(), ty: TypeTag::Agent },
            agent_atom("b"),
        );
        let merged = combine(&b_for_a, &Substitution::empty(), &BTreeMap::new()).unwrap();
        assert_eq!(merged, b_for_a);

        let disjoint = Substitution::singleton(
            Variable { name: "N".into(), ty: TypeTag::Nonce },
            nonce_atom("n_a"),
        );
        let merged2 = combine(&b_for_a, &disjoint, &BTreeMap::new()).unwrap();
        assert_eq!(merged2.len(), 2);
        let probe = Term::concat(vec![
            Term::var("A", TypeTag::Agent),
            Term::var("N", TypeTag::Nonce),
        ]);
        assert_eq!(
            merged2.apply(&probe),
            Term::concat(vec![agent_atom("b"), nonce_atom("n_a")])
        );
    }

    #[test]
    fn identified_std_variables_unify_through_equivalence_class() {
        // [h(X), X ⊕ a] ≈ [h(Y), Y ⊕ a] needs the {X,Y} identification.
        let l = Term::concat(vec![
            Term::hash(Term::var("X", TypeTag::Nonce)),
            Term::xor(vec![Term::var("X", TypeTag::Nonce), nonce_atom("a")]),
        ]);
        let r = Term::concat(vec![
            Term::hash(Term::var("Y", TypeTag::Nonce)),
            Term::xor(vec![Term::var("Y", TypeTag::Nonce), nonce_atom("a")]),
        ]);
        let sols = mgu_combined(&l, &r);
        assert!(!sols.is_empty());
        for s in &sols {
            assert!(equal_mod_acun(&s.apply(&l), &s.apply(&r)));
        }
    }
}
