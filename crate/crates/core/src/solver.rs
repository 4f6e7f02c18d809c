//! The constraint-satisfaction procedure: depth-first application of the
//! reduction rules (pair/encryption rules, the XOR rules, unification and
//! key substitution, plus the optional cipher-weakness rules) to decide
//! satisfiability of a constraint sequence and collect the satisfying
//! substitutions.

use crate::combine::mgu_combined;
use crate::protocol::{Constraint, ConstraintSequence};
use crate::subst::Substitution;
use crate::term::{Constant, Term};
use crate::unify::{unify_assoc, unify_frozen};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::hash::{Hash, Hasher};
use thiserror::Error;

/// Reduction rules. The first block is the core set; the second block are
/// the cipher-weakness rules, off unless enabled per scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    Elim,
    Split,
    Pdec,
    Sdec,
    XorR,
    Un,
    Concat,
    Penc,
    Senc,
    Sig,
    Hash,
    XorL,
    Ksub,
    Prefix,
    Suffix,
    Homomorphic,
    RsaLowExp,
    Guessing,
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::Elim => "elim",
            Rule::Split => "split",
            Rule::Pdec => "pdec",
            Rule::Sdec => "sdec",
            Rule::XorR => "xor_r",
            Rule::Un => "un",
            Rule::Concat => "concat",
            Rule::Penc => "penc",
            Rule::Senc => "senc",
            Rule::Sig => "sig",
            Rule::Hash => "hash",
            Rule::XorL => "xor_l",
            Rule::Ksub => "ksub",
            Rule::Prefix => "prefix",
            Rule::Suffix => "suffix",
            Rule::Homomorphic => "homomorphic",
            Rule::RsaLowExp => "rsa_low_exp",
            Rule::Guessing => "guessing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WeaknessRule {
    Prefix,
    Suffix,
    Homomorphic,
    RsaLowExp,
    Guessing,
}

impl WeaknessRule {
    fn as_rule(&self) -> Rule {
        match self {
            WeaknessRule::Prefix => Rule::Prefix,
            WeaknessRule::Suffix => Rule::Suffix,
            WeaknessRule::Homomorphic => Rule::Homomorphic,
            WeaknessRule::RsaLowExp => Rule::RsaLowExp,
            WeaknessRule::Guessing => Rule::Guessing,
        }
    }
}

/// Which rules the search may use. The XOR rules are tied to the ACUN
/// theory switch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub acun: bool,
    pub weaknesses: BTreeSet<WeaknessRule>,
    pub assoc_pairs: bool,
}

impl RuleSet {
    pub fn core_std() -> RuleSet {
        RuleSet { acun: false, weaknesses: BTreeSet::new(), assoc_pairs: false }
    }
    pub fn core_acun() -> RuleSet {
        RuleSet { acun: true, weaknesses: BTreeSet::new(), assoc_pairs: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchLimits {
    pub max_depth: usize,
    pub max_states: u64,
    pub xor_subset_bound: usize,
    pub max_solutions: usize,
    pub max_sequences: usize,
}

impl Default for SearchLimits {
    fn default() -> SearchLimits {
        SearchLimits {
            max_depth: 300,
            max_states: 300_000,
            xor_subset_bound: 4,
            max_solutions: 64,
            max_sequences: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub rules: RuleSet,
    pub limits: SearchLimits,
    /// Restricted search: prune (un) branches whose unifier is ill-typed.
    pub restrict_well_typed: bool,
    /// Verification hook: record every ill-typed unifier produced by (un);
    /// set when the semi-bundle is NUT-satisfying, where none may occur.
    pub expect_well_typed: bool,
    /// Record knowledge-set additions that are not subterms of the state.
    pub instrument_subterms: bool,
    pub weak_keys: BTreeSet<Term>,
}

impl SolveOptions {
    pub fn new(rules: RuleSet) -> SolveOptions {
        SolveOptions {
            rules,
            limits: SearchLimits::default(),
            restrict_well_typed: false,
            expect_well_typed: false,
            instrument_subterms: false,
            weak_keys: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("rule {0} is not applicable to the active constraint")]
    RuleNotApplicable(&'static str),
    #[error("no active constraint: the sequence is simple")]
    NoActiveConstraint,
}

/// One applied rule instance in a solution's derivation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub rule: String,
    pub detail: String,
    pub added: Vec<Term>,
    pub subterm_ok: bool,
}

/// A search node: the remaining sequence and the substitution gathered on
/// the way to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolverState {
    pub constraints: Vec<Constraint>,
    pub sigma: Substitution,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Satisfier {
    pub substitution: Substitution,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtermViolation {
    pub rule: String,
    pub term: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub states_expanded: u64,
    pub max_depth_seen: usize,
    pub solutions_found: usize,
    pub budget_exceeded: bool,
    pub solutions_truncated: bool,
    pub subterm_violation_count: u64,
    pub subterm_violations: Vec<SubtermViolation>,
    /// Ill-typed (un) unifiers observed while `expect_well_typed` was set.
    pub well_typed_violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveReport {
    pub satisfiers: Vec<Satisfier>,
    /// True iff the search space was fully explored within the limits, so
    /// absence of satisfiers is a real absence claim.
    pub exhausted: bool,
    pub stats: SearchStats,
}

/// Shared per-call machinery: options plus a unification cache.
pub struct SolveContext {
    pub opts: SolveOptions,
    unify_cache: RefCell<HashMap<(Term, Term), Vec<Substitution>>>,
}

impl SolveContext {
    pub fn new(opts: SolveOptions) -> SolveContext {
        SolveContext { opts, unify_cache: RefCell::new(HashMap::new()) }
    }

    fn unifiers(&self, m: &Term, t: &Term) -> Vec<Substitution> {
        if let Some(hit) = self.unify_cache.borrow().get(&(m.clone(), t.clone())) {
            return hit.clone();
        }
        let sols = if self.opts.rules.assoc_pairs {
            unify_assoc(m, t).into_iter().collect()
        } else if self.opts.rules.acun {
            mgu_combined(m, t)
        } else {
            unify_frozen(&[(m.clone(), t.clone())], &BTreeSet::new())
                .into_iter()
                .collect()
        };
        self.unify_cache.borrow_mut().insert((m.clone(), t.clone()), sols.clone());
        sols
    }
}

/// Leftmost constraint whose target is not a variable. `None` iff the
/// sequence is simple.
pub fn active_constraint(state: &SolverState) -> Option<(usize, &Constraint)> {
    state
        .constraints
        .iter()
        .enumerate()
        .find(|(_, c)| !c.target.is_variable())
}

/// Removes every stand-alone variable from the active constraint's
/// knowledge set. Returns whether anything was removed.
pub fn elim(state: &mut SolverState) -> bool {
    let Some((idx, _)) = active_constraint(state) else {
        return false;
    };
    let before = state.constraints[idx].knowledge.len();
    state.constraints[idx].knowledge.retain(|t| !t.is_variable());
    state.constraints[idx].knowledge.len() != before
}

fn run_elim(state: &mut SolverState) {
    if elim(state) {
        state.trace.push(TraceStep {
            rule: Rule::Elim.name().into(),
            detail: "drop stand-alone variables".into(),
            added: Vec::new(),
            subterm_ok: true,
        });
    }
}

/// Structural containment including key positions. Used only by the
/// subterm instrumentation: the (sdec) argument treats a derived key as a
/// subterm even though the subterm definition does not descend into keys.
fn contained_in(t: &Term, u: &Term) -> bool {
    if t == u {
        return true;
    }
    match u {
        Term::Concat(es) | Term::Xor(es) => es.iter().any(|e| contained_in(t, e)),
        Term::AsymEnc { body, key }
        | Term::SymEnc { body, key }
        | Term::Signature { body, key } => contained_in(t, body) || contained_in(t, key),
        Term::Hash(b) => contained_in(t, b),
        Term::PublicKey(a) => contained_in(t, a),
        Term::SharedKey(a, b) => contained_in(t, a) || contained_in(t, b),
        _ => false,
    }
}

fn is_pk_eps(t: &Term) -> bool {
    matches!(t, Term::PublicKey(a) if matches!(**a, Term::Constant(Constant::Attacker)))
}

fn normalize_term(t: &Term, assoc: bool) -> Term {
    if assoc {
        t.flatten_concats().xor_normalize()
    } else {
        t.xor_normalize()
    }
}

fn apply_to_sequence(
    constraints: &[Constraint],
    tau: &Substitution,
    assoc: bool,
) -> Vec<Constraint> {
    constraints
        .iter()
        .map(|c| {
            let mut knowledge: Vec<Term> =
                c.knowledge.iter().map(|t| normalize_term(&tau.apply(t), assoc)).collect();
            knowledge.sort();
            knowledge.dedup();
            Constraint { target: normalize_term(&tau.apply(&c.target), assoc), knowledge }
        })
        .collect()
}

struct Successor {
    state: SolverState,
    added: Vec<Term>,
}

impl SolverState {
    fn child(&self, rule: Rule, detail: String, constraints: Vec<Constraint>, added: Vec<Term>)
        -> Successor
    {
        let mut trace = self.trace.clone();
        trace.push(TraceStep {
            rule: rule.name().into(),
            detail,
            added: added.clone(),
            subterm_ok: true,
        });
        Successor { state: SolverState { constraints, sigma: self.sigma.clone(), trace }, added }
    }

    fn child_with_sigma(
        &self,
        rule: Rule,
        detail: String,
        constraints: Vec<Constraint>,
        tau: &Substitution,
    ) -> Option<Successor> {
        let sigma = self.sigma.compose(tau).ok()?;
        let mut trace = self.trace.clone();
        trace.push(TraceStep {
            rule: rule.name().into(),
            detail,
            added: Vec::new(),
            subterm_ok: true,
        });
        Some(Successor { state: SolverState { constraints, sigma, trace }, added: Vec::new() })
    }
}

/// Applies one rule to the active constraint, returning every successor
/// state the rule licenses.
pub fn apply_rule(
    rule: Rule,
    state: &SolverState,
    ctx: &SolveContext,
) -> Result<Vec<SolverState>, RuleError> {
    let succ = successors_of(rule, state, ctx);
    if succ.is_empty() {
        Err(RuleError::RuleNotApplicable(rule.name()))
    } else {
        Ok(succ.into_iter().map(|s| s.state).collect())
    }
}

fn successors_of(rule: Rule, state: &SolverState, ctx: &SolveContext) -> Vec<Successor> {
    let Some((ai, active)) = active_constraint(state) else {
        return Vec::new();
    };
    let assoc = ctx.opts.rules.assoc_pairs;
    let mut out: Vec<Successor> = Vec::new();

    let replace_active = |new_cs: Vec<Constraint>| -> Vec<Constraint> {
        let mut cs = state.constraints.clone();
        cs.splice(ai..=ai, new_cs);
        cs
    };
    let with_active = |c: Constraint| -> Vec<Constraint> {
        let mut cs = state.constraints.clone();
        cs[ai] = c;
        cs
    };
    let knowledge_without = |skip: &Term| -> Vec<Term> {
        active.knowledge.iter().filter(|t| *t != skip).cloned().collect()
    };

    match rule {
        Rule::Elim => {}

        Rule::Split => {
            for t in &active.knowledge {
                if let Term::Concat(es) = t {
                    let mut k = knowledge_without(t);
                    k.extend(es.iter().cloned());
                    k.sort();
                    k.dedup();
                    out.push(state.child(
                        rule,
                        format!("split {t}"),
                        with_active(Constraint { target: active.target.clone(), knowledge: k }),
                        es.clone(),
                    ));
                }
            }
        }

        Rule::Pdec => {
            for t in &active.knowledge {
                if let Term::AsymEnc { body, key } = t {
                    if is_pk_eps(key) {
                        let mut k = knowledge_without(t);
                        k.push((**body).clone());
                        k.sort();
                        k.dedup();
                        out.push(state.child(
                            rule,
                            format!("pdec {t}"),
                            with_active(Constraint {
                                target: active.target.clone(),
                                knowledge: k,
                            }),
                            vec![(**body).clone()],
                        ));
                    }
                }
            }
        }

        Rule::Sdec => {
            for t in &active.knowledge {
                if let Term::SymEnc { body, key } = t {
                    let rest = knowledge_without(t);
                    let key_goal = Constraint::new((**key).clone(), rest.iter().cloned());
                    let mut k = rest.clone();
                    k.push((**body).clone());
                    k.push((**key).clone());
                    k.sort();
                    k.dedup();
                    let main = Constraint { target: active.target.clone(), knowledge: k };
                    out.push(state.child(
                        rule,
                        format!("sdec {t}"),
                        replace_active(vec![key_goal, main]),
                        vec![(**body).clone(), (**key).clone()],
                    ));
                }
            }
        }

        Rule::XorR => {
            if !ctx.opts.rules.acun {
                return out;
            }
            let eligible: Vec<&Term> = active
                .knowledge
                .iter()
                .filter(|t| matches!(t, Term::Xor(_)) || t.as_tagged_pair().is_some())
                .collect();
            let bound = ctx.opts.limits.xor_subset_bound.min(eligible.len());
            let mut subset: Vec<usize> = Vec::new();
            fn subsets(
                eligible: &[&Term],
                start: usize,
                bound: usize,
                subset: &mut Vec<usize>,
                out: &mut Vec<Vec<usize>>,
            ) {
                if subset.len() >= 2 {
                    out.push(subset.clone());
                }
                if subset.len() == bound {
                    return;
                }
                for i in start..eligible.len() {
                    subset.push(i);
                    subsets(eligible, i + 1, bound, subset, out);
                    subset.pop();
                }
            }
            let mut all = Vec::new();
            subsets(&eligible, 0, bound, &mut subset, &mut all);
            for idxs in all {
                let chosen: Vec<Term> = idxs.iter().map(|&i| eligible[i].clone()).collect();
                let sum = Term::xor(chosen.clone());
                let mut k: Vec<Term> = active
                    .knowledge
                    .iter()
                    .filter(|t| !chosen.contains(t))
                    .cloned()
                    .collect();
                if k.contains(&sum) {
                    continue;
                }
                k.push(sum.clone());
                k.sort();
                k.dedup();
                out.push(state.child(
                    rule,
                    format!("xor_r -> {sum}"),
                    with_active(Constraint { target: active.target.clone(), knowledge: k }),
                    vec![sum],
                ));
            }
        }

        Rule::Un => {
            for t in &active.knowledge {
                if t.is_variable() {
                    continue;
                }
                for tau in ctx.unifiers(&active.target, t) {
                    let ill_typed = !tau.is_well_typed();
                    if ctx.opts.restrict_well_typed && ill_typed {
                        continue;
                    }
                    let mut cs = state.constraints.clone();
                    cs.remove(ai);
                    let cs = apply_to_sequence(&cs, &tau, assoc);
                    if let Some(succ) = state.child_with_sigma(
                        rule,
                        format!("un {} with {} via {}", active.target, t, tau),
                        cs,
                        &tau,
                    ) {
                        out.push(succ);
                    }
                }
            }
        }

        Rule::Concat => {
            if let Term::Concat(es) = &active.target {
                let cs: Vec<Constraint> = es
                    .iter()
                    .map(|e| Constraint {
                        target: e.clone(),
                        knowledge: active.knowledge.clone(),
                    })
                    .collect();
                out.push(state.child(
                    rule,
                    format!("concat {}", active.target),
                    replace_active(cs),
                    Vec::new(),
                ));
            }
        }

        Rule::Penc | Rule::Senc => {
            let parts = match (&active.target, rule) {
                (Term::AsymEnc { body, key }, Rule::Penc) => Some((body, key)),
                (Term::SymEnc { body, key }, Rule::Senc) => Some((body, key)),
                _ => None,
            };
            if let Some((body, key)) = parts {
                let cs = vec![
                    Constraint { target: (**key).clone(), knowledge: active.knowledge.clone() },
                    Constraint { target: (**body).clone(), knowledge: active.knowledge.clone() },
                ];
                out.push(state.child(
                    rule,
                    format!("compose {}", active.target),
                    replace_active(cs),
                    Vec::new(),
                ));
            }
        }

        Rule::Sig => {
            // Composition on the target needs the signing key; extraction
            // from the knowledge set keeps the signature usable for replay.
            if let Term::Signature { body, key } = &active.target {
                let cs = vec![
                    Constraint { target: (**body).clone(), knowledge: active.knowledge.clone() },
                    Constraint { target: (**key).clone(), knowledge: active.knowledge.clone() },
                ];
                out.push(state.child(
                    rule,
                    format!("compose {}", active.target),
                    replace_active(cs),
                    Vec::new(),
                ));
            }
            for t in &active.knowledge {
                if let Term::Signature { body, .. } = t {
                    if !active.knowledge.contains(body) {
                        let mut k = active.knowledge.clone();
                        k.push((**body).clone());
                        k.sort();
                        k.dedup();
                        out.push(state.child(
                            rule,
                            format!("open {t}"),
                            with_active(Constraint {
                                target: active.target.clone(),
                                knowledge: k,
                            }),
                            vec![(**body).clone()],
                        ));
                    }
                }
            }
        }

        Rule::Hash => {
            if let Term::Hash(body) = &active.target {
                let cs = vec![Constraint {
                    target: (**body).clone(),
                    knowledge: active.knowledge.clone(),
                }];
                out.push(state.child(
                    rule,
                    format!("compose {}", active.target),
                    replace_active(cs),
                    Vec::new(),
                ));
            }
        }

        Rule::XorL => {
            if !ctx.opts.rules.acun {
                return out;
            }
            if let Term::Xor(es) = &active.target {
                for (i, e) in es.iter().enumerate() {
                    let rest: Vec<Term> =
                        es.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, t)| t.clone()).collect();
                    let cs = vec![
                        Constraint { target: e.clone(), knowledge: active.knowledge.clone() },
                        Constraint { target: Term::xor(rest), knowledge: active.knowledge.clone() },
                    ];
                    out.push(state.child(
                        rule,
                        format!("xor_l split {e}"),
                        replace_active(cs),
                        Vec::new(),
                    ));
                }
            }
        }

        Rule::Ksub => {
            for t in &active.knowledge {
                if let Term::AsymEnc { key, .. } = t {
                    if is_pk_eps(key) {
                        continue;
                    }
                    let Some(tau) =
                        unify_frozen(&[((**key).clone(), Term::pk(Term::attacker()))], &BTreeSet::new())
                    else {
                        continue;
                    };
                    if tau.is_empty() {
                        continue;
                    }
                    let cs = apply_to_sequence(&state.constraints, &tau, assoc);
                    if let Some(succ) = state.child_with_sigma(
                        rule,
                        format!("ksub {key} ~ pk(eps) via {tau}"),
                        cs,
                        &tau,
                    ) {
                        out.push(succ);
                    }
                }
            }
        }

        Rule::Prefix | Rule::Suffix => {
            for t in &active.knowledge {
                if let Term::SymEnc { body, key } = t {
                    if let Term::Concat(es) = &**body {
                        for cut in 1..es.len() {
                            let part: Vec<Term> = if rule == Rule::Prefix {
                                es[..cut].to_vec()
                            } else {
                                es[cut..].to_vec()
                            };
                            let piece = if part.len() == 1 {
                                part[0].clone()
                            } else {
                                Term::Concat(part)
                            };
                            let derived = Term::senc(piece, (**key).clone());
                            if active.knowledge.contains(&derived) {
                                continue;
                            }
                            let mut k = active.knowledge.clone();
                            k.push(derived.clone());
                            k.sort();
                            k.dedup();
                            out.push(state.child(
                                rule,
                                format!("{} of {t} -> {derived}", rule.name()),
                                with_active(Constraint {
                                    target: active.target.clone(),
                                    knowledge: k,
                                }),
                                vec![derived],
                            ));
                        }
                    }
                }
            }
        }

        Rule::Homomorphic => {
            for t in &active.knowledge {
                if let Term::SymEnc { body, key } = t {
                    if let Term::Concat(es) = &**body {
                        for e in es {
                            let derived = Term::senc(e.clone(), (**key).clone());
                            if active.knowledge.contains(&derived) {
                                continue;
                            }
                            let mut k = active.knowledge.clone();
                            k.push(derived.clone());
                            k.sort();
                            k.dedup();
                            out.push(state.child(
                                rule,
                                format!("homomorphic {t} -> {derived}"),
                                with_active(Constraint {
                                    target: active.target.clone(),
                                    knowledge: k,
                                }),
                                vec![derived],
                            ));
                        }
                    }
                }
            }
        }

        Rule::RsaLowExp => {
            // { [a,x,b]->k, [c,x,d]->k, a, b, c, d } |- x  with a≠c or b≠d
            let encs: Vec<(&Term, &Vec<Term>, &Term)> = active
                .knowledge
                .iter()
                .filter_map(|t| match t {
                    Term::AsymEnc { body, key } => match &**body {
                        Term::Concat(es) if es.len() == 3 => Some((t, es, &**key)),
                        _ => None,
                    },
                    _ => None,
                })
                .collect();
            for (i, (t1, es1, k1)) in encs.iter().enumerate() {
                for (t2, es2, k2) in encs.iter().skip(i + 1) {
                    if k1 != k2 || es1[1] != es2[1] {
                        continue;
                    }
                    let (a, b, c, d) = (&es1[0], &es1[2], &es2[0], &es2[2]);
                    if a == c && b == d {
                        continue;
                    }
                    let known = |t: &Term| active.knowledge.contains(t);
                    if !(known(a) && known(b) && known(c) && known(d)) {
                        continue;
                    }
                    let x = es1[1].clone();
                    if active.knowledge.contains(&x) {
                        continue;
                    }
                    let mut k = active.knowledge.clone();
                    k.push(x.clone());
                    k.sort();
                    k.dedup();
                    out.push(state.child(
                        rule,
                        format!("rsa_low_exp {t1}, {t2} -> {x}"),
                        with_active(Constraint { target: active.target.clone(), knowledge: k }),
                        vec![x],
                    ));
                }
            }
        }

        Rule::Guessing => {
            // two ciphertexts under the same weak key sharing their first
            // component verify a guess of that key
            let encs: Vec<(&Term, &Vec<Term>, &Term)> = active
                .knowledge
                .iter()
                .filter_map(|t| match t {
                    Term::SymEnc { body, key } => match &**body {
                        Term::Concat(es) if es.len() == 2 => Some((t, es, &**key)),
                        _ => None,
                    },
                    _ => None,
                })
                .collect();
            for (i, (t1, es1, k1)) in encs.iter().enumerate() {
                for (t2, es2, k2) in encs.iter().skip(i + 1) {
                    if k1 != k2 || !ctx.opts.weak_keys.contains(*k1) {
                        continue;
                    }
                    if es1[0] != es2[0] || es1[1] == es2[1] {
                        continue;
                    }
                    let w = (*k1).clone();
                    if active.knowledge.contains(&w) {
                        continue;
                    }
                    let mut k = active.knowledge.clone();
                    k.push(w.clone());
                    k.sort();
                    k.dedup();
                    out.push(state.child(
                        rule,
                        format!("guessing {t1}, {t2} -> {w}"),
                        with_active(Constraint { target: active.target.clone(), knowledge: k }),
                        vec![w],
                    ));
                }
            }
        }
    }
    out
}

fn state_key(state: &SolverState) -> (u64, u64) {
    use std::collections::hash_map::DefaultHasher;
    let mut repr = String::new();
    for c in &state.constraints {
        repr.push_str(&c.target.to_string());
        repr.push(':');
        for t in &c.knowledge {
            repr.push_str(&t.to_string());
            repr.push(',');
        }
        repr.push(';');
    }
    repr.push('|');
    repr.push_str(&state.sigma.to_string());
    let mut h1 = DefaultHasher::new();
    repr.hash(&mut h1);
    let mut h2 = DefaultHasher::new();
    0xa5u8.hash(&mut h2);
    repr.hash(&mut h2);
    (h1.finish(), h2.finish())
}

const RULE_ORDER: [Rule; 12] = [
    Rule::Split,
    Rule::Pdec,
    Rule::Sdec,
    Rule::XorR,
    Rule::Un,
    Rule::Concat,
    Rule::Penc,
    Rule::Senc,
    Rule::Sig,
    Rule::Hash,
    Rule::XorL,
    Rule::Ksub,
];

const WEAKNESS_ORDER: [WeaknessRule; 5] = [
    WeaknessRule::Prefix,
    WeaknessRule::Suffix,
    WeaknessRule::Homomorphic,
    WeaknessRule::RsaLowExp,
    WeaknessRule::Guessing,
];

/// Depth-first search over rule applications, collecting every satisfying
/// substitution up to the configured limits. Deterministic for fixed inputs.
pub fn solve(seq: &ConstraintSequence, ctx: &SolveContext) -> SolveReport {
    let assoc = ctx.opts.rules.assoc_pairs;
    let initial_constraints: Vec<Constraint> =
        apply_to_sequence(&seq.constraints, &seq.binding, assoc);

    let mut stats = SearchStats::default();
    let mut satisfiers: Vec<Satisfier> = Vec::new();
    let mut seen: HashSet<(u64, u64)> = HashSet::new();
    let mut initial = SolverState {
        constraints: initial_constraints,
        sigma: seq.binding.clone(),
        trace: Vec::new(),
    };
    run_elim(&mut initial);
    seen.insert(state_key(&initial));
    let mut stack: Vec<SolverState> = vec![initial];

    while let Some(state) = stack.pop() {
        stats.states_expanded += 1;
        stats.max_depth_seen = stats.max_depth_seen.max(state.trace.len());
        if stats.states_expanded > ctx.opts.limits.max_states {
            stats.budget_exceeded = true;
            break;
        }

        if active_constraint(&state).is_none() {
            satisfiers.push(Satisfier {
                substitution: state.sigma.clone(),
                trace: state.trace.clone(),
            });
            stats.solutions_found += 1;
            if satisfiers.len() >= ctx.opts.limits.max_solutions {
                stats.solutions_truncated = true;
                break;
            }
            continue;
        }

        if state.trace.len() >= ctx.opts.limits.max_depth {
            stats.budget_exceeded = true;
            continue;
        }

        let pre_terms: Vec<Term> = state
            .constraints
            .iter()
            .flat_map(|c| std::iter::once(c.target.clone()).chain(c.knowledge.iter().cloned()))
            .collect();

        let mut successors: Vec<Successor> = Vec::new();
        for rule in RULE_ORDER {
            successors.extend(successors_of(rule, &state, ctx));
        }
        for w in WEAKNESS_ORDER {
            if ctx.opts.rules.weaknesses.contains(&w) {
                successors.extend(successors_of(w.as_rule(), &state, ctx));
            }
        }

        for succ in successors.iter_mut() {
            if ctx.opts.instrument_subterms && !succ.added.is_empty() {
                let mut ok = true;
                for t in &succ.added {
                    if !pre_terms.iter().any(|u| contained_in(t, u)) {
                        ok = false;
                        stats.subterm_violation_count += 1;
                        if stats.subterm_violations.len() < 32 {
                            stats.subterm_violations.push(SubtermViolation {
                                rule: succ.state.trace.last().unwrap().rule.clone(),
                                term: t.to_string(),
                            });
                        }
                    }
                }
                if let Some(step) = succ.state.trace.last_mut() {
                    step.subterm_ok = ok;
                }
            }
            if ctx.opts.expect_well_typed {
                if let Some(step) = succ.state.trace.last() {
                    if step.rule == "un" || step.rule == "ksub" {
                        let tail = succ.state.sigma.clone();
                        if !tail.is_well_typed() {
                            stats.well_typed_violations.push(step.detail.clone());
                        }
                    }
                }
            }
        }

        // dedup at push keeps the stack free of revisits; push in reverse
        // so the first rule's successors are explored first
        let mut fresh: Vec<SolverState> = Vec::new();
        for mut succ in successors {
            run_elim(&mut succ.state);
            if seen.insert(state_key(&succ.state)) {
                fresh.push(succ.state);
            }
        }
        for s in fresh.into_iter().rev() {
            stack.push(s);
        }
    }

    let exhausted = !stats.budget_exceeded && !stats.solutions_truncated;
    SolveReport { satisfiers, exhausted, stats }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Constraint;
    use crate::term::TypeTag;

    fn seq(constraints: Vec<Constraint>) -> ConstraintSequence {
        ConstraintSequence {
            constraints,
            binding: Substitution::empty(),
            interleaving: Vec::new(),
        }
    }

    fn ctx_std() -> SolveContext {
        SolveContext::new(SolveOptions::new(RuleSet::core_std()))
    }

    fn ctx_acun() -> SolveContext {
        SolveContext::new(SolveOptions::new(RuleSet::core_acun()))
    }

    fn atom(n: &str) -> Term {
        Term::atom(n, TypeTag::Agent)
    }

    #[test]
    fn active_constraint_skips_variable_targets() {
        let state = SolverState {
            constraints: vec![
                Constraint::new(Term::var("X", TypeTag::Nonce), vec![atom("a")]),
                Constraint::new(atom("b"), vec![atom("a")]),
            ],
            sigma: Substitution::empty(),
            trace: Vec::new(),
        };
        let (idx, c) = active_constraint(&state).unwrap();
        assert_eq!(idx, 1);
        assert_eq!(c.target, atom("b"));

        let simple = SolverState {
            constraints: vec![Constraint::new(Term::var("X", TypeTag::Nonce), vec![atom("a")])],
            sigma: Substitution::empty(),
            trace: Vec::new(),
        };
        assert!(active_constraint(&simple).is_none());
    }

    #[test]
    fn elim_drops_only_bare_variables() {
        let mut state = SolverState {
            constraints: vec![Constraint::new(
                atom("m"),
                vec![Term::var("X", TypeTag::Nonce), atom("a")],
            )],
            sigma: Substitution::empty(),
            trace: Vec::new(),
        };
        assert!(elim(&mut state));
        assert_eq!(state.constraints[0].knowledge, vec![atom("a")]);
        assert!(!elim(&mut state));

        let mut all_vars = SolverState {
            constraints: vec![Constraint::new(
                atom("m"),
                vec![Term::var("X", TypeTag::Nonce), Term::var("Y", TypeTag::Nonce)],
            )],
            sigma: Substitution::empty(),
            trace: Vec::new(),
        };
        assert!(elim(&mut all_vars));
        assert!(all_vars.constraints[0].knowledge.is_empty());
    }

    #[test]
    fn immediate_un_on_identical_terms() {
        let report = solve(&seq(vec![Constraint::new(atom("a"), vec![atom("a")])]), &ctx_std());
        assert!(report.exhausted);
        assert_eq!(report.satisfiers.len(), 1);
        assert!(report.satisfiers[0].substitution.is_empty());
        assert_eq!(report.satisfiers[0].trace.len(), 1);
        assert_eq!(report.satisfiers[0].trace[0].rule, "un");
    }

    #[test]
    fn empty_knowledge_is_unsatisfiable_but_exhausted() {
        let report =
            solve(&seq(vec![Constraint::new(Term::atom("k", TypeTag::Key), vec![])]), &ctx_std());
        assert!(report.exhausted);
        assert!(report.satisfiers.is_empty());
    }

    #[test]
    fn pdec_opens_attacker_encryptions() {
        let enc = Term::penc(atom("s"), Term::pk(Term::attacker()));
        let report = solve(&seq(vec![Constraint::new(atom("s"), vec![enc])]), &ctx_std());
        assert!(!report.satisfiers.is_empty());
        let rules: Vec<&str> =
            report.satisfiers[0].trace.iter().map(|s| s.rule.as_str()).collect();
        assert!(rules.contains(&"pdec"));
    }

    #[test]
    fn pdec_rule_shape() {
        let enc = Term::penc(atom("t"), Term::pk(Term::attacker()));
        let state = SolverState {
            constraints: vec![Constraint::new(atom("m"), vec![enc, atom("x")])],
            sigma: Substitution::empty(),
            trace: Vec::new(),
        };
        let succs = apply_rule(Rule::Pdec, &state, &ctx_std()).unwrap();
        assert_eq!(succs.len(), 1);
        assert_eq!(succs[0].constraints[0].knowledge, vec![atom("t"), atom("x")]);
    }

    #[test]
    fn xor_l_splits_target() {
        let target = Term::xor(vec![atom("a"), atom("b")]);
        let state = SolverState {
            constraints: vec![Constraint::new(target, vec![atom("c")])],
            sigma: Substitution::empty(),
            trace: Vec::new(),
        };
        let succs = apply_rule(Rule::XorL, &state, &ctx_acun()).unwrap();
        // one branch per choice of split-off element
        assert_eq!(succs.len(), 2);
        assert_eq!(succs[0].constraints.len(), 2);
        assert_eq!(succs[0].constraints[0].target, atom("a"));
        assert_eq!(succs[0].constraints[1].target, atom("b"));
    }

    #[test]
    fn xor_rules_disabled_without_acun() {
        let target = Term::xor(vec![atom("a"), atom("b")]);
        let state = SolverState {
            constraints: vec![Constraint::new(target, vec![atom("c")])],
            sigma: Substitution::empty(),
            trace: Vec::new(),
        };
        assert!(apply_rule(Rule::XorL, &state, &ctx_std()).is_err());
    }

    #[test]
    fn un_single_step_binds_variable() {
        // penc([3,N_B];pk(b)) : {penc([3,n_b];pk(b))} → σ ⊇ {n_b/N_B}
        let b = atom("b");
        let target = Term::penc(
            Term::concat(vec![Term::num(3), Term::var("N_B", TypeTag::Nonce)]),
            Term::pk(b.clone()),
        );
        let known = Term::penc(
            Term::concat(vec![Term::num(3), Term::atom("n_b", TypeTag::Nonce)]),
            Term::pk(b),
        );
        let state = SolverState {
            constraints: vec![Constraint::new(target, vec![known])],
            sigma: Substitution::empty(),
            trace: Vec::new(),
        };
        let succs = apply_rule(Rule::Un, &state, &ctx_std()).unwrap();
        assert_eq!(succs.len(), 1);
        assert_eq!(
            succs[0].sigma.get_by_name("N_B"),
            Some(&Term::atom("n_b", TypeTag::Nonce))
        );
        assert!(succs[0].constraints.is_empty());
    }

    #[test]
    fn ksub_substitutes_attacker_key() {
        // m : {penc(t; pk(B))} — ksub unifies pk(B) with pk(eps)
        let enc = Term::penc(atom("t"), Term::pk(Term::var("B", TypeTag::Agent)));
        let state = SolverState {
            constraints: vec![Constraint::new(Term::atom("t", TypeTag::Agent), vec![enc])],
            sigma: Substitution::empty(),
            trace: Vec::new(),
        };
        let succs = apply_rule(Rule::Ksub, &state, &ctx_std()).unwrap();
        assert_eq!(succs.len(), 1);
        assert_eq!(succs[0].sigma.get_by_name("B"), Some(&Term::attacker()));
        assert!(succs[0].sigma.is_well_typed());
        // the encryption is now under pk(eps)
        assert!(succs[0].constraints[0].knowledge.iter().any(|t| match t {
            Term::AsymEnc { key, .. } => is_pk_eps(key),
            _ => false,
        }));
    }

    #[test]
    fn prefix_rule_generates_prefix_encryptions() {
        let k = Term::sh(atom("b"), atom("s"));
        let body = Term::concat(vec![
            atom("a"),
            atom("b"),
            Term::concat(vec![Term::atom("n_b", TypeTag::Nonce), Term::num(3)]),
            Term::num(2),
        ]);
        let enc = Term::senc(body, k.clone());
        let mut opts = SolveOptions::new(RuleSet::core_std());
        opts.rules.weaknesses.insert(WeaknessRule::Prefix);
        let ctx = SolveContext::new(opts);
        let state = SolverState {
            constraints: vec![Constraint::new(atom("m"), vec![enc])],
            sigma: Substitution::empty(),
            trace: Vec::new(),
        };
        let succs = apply_rule(Rule::Prefix, &state, &ctx).unwrap();
        // prefixes of length 1..3: [a], [a,b], [a,b,[n_b,3]]
        assert_eq!(succs.len(), 3);
        let added: Vec<&Term> = succs
            .iter()
            .flat_map(|s| s.constraints[0].knowledge.iter())
            .filter(|t| matches!(t, Term::SymEnc { .. }))
            .collect();
        assert!(added.iter().any(|t| **t
            == Term::senc(
                Term::concat(vec![
                    atom("a"),
                    atom("b"),
                    Term::concat(vec![Term::atom("n_b", TypeTag::Nonce), Term::num(3)])
                ]),
                k.clone()
            )));
    }

    #[test]
    fn rsa_rule_requires_differing_padding() {
        let k = Term::pk(atom("s"));
        let x = Term::atom("x", TypeTag::Key);
        let e1 = Term::penc(Term::concat(vec![atom("a"), x.clone(), atom("b")]), k.clone());
        let e2 = Term::penc(Term::concat(vec![atom("a"), x.clone(), atom("b")]), k.clone());
        let mut opts = SolveOptions::new(RuleSet::core_std());
        opts.rules.weaknesses.insert(WeaknessRule::RsaLowExp);
        let ctx = SolveContext::new(opts);
        // a = c and b = d: not applicable
        let state = SolverState {
            constraints: vec![Constraint::new(
                atom("m"),
                vec![e1, e2, atom("a"), atom("b")],
            )],
            sigma: Substitution::empty(),
            trace: Vec::new(),
        };
        assert!(apply_rule(Rule::RsaLowExp, &state, &ctx).is_err());

        // differing padding c,d releases x
        let e3 = Term::penc(Term::concat(vec![atom("c"), x.clone(), atom("d")]), k.clone());
        let e4 = Term::penc(Term::concat(vec![atom("a"), x.clone(), atom("b")]), k);
        let state2 = SolverState {
            constraints: vec![Constraint::new(
                atom("m"),
                vec![e3, e4, atom("a"), atom("b"), atom("c"), atom("d")],
            )],
            sigma: Substitution::empty(),
            trace: Vec::new(),
        };
        let succs = apply_rule(Rule::RsaLowExp, &state2, &ctx).unwrap();
        assert_eq!(succs.len(), 1);
        assert!(succs[0].constraints[0].knowledge.contains(&x));
    }

    #[test]
    fn guessing_rule_on_weak_password() {
        let passwd = Term::sh(atom("a"), atom("b"));
        let n_a = Term::atom("n_a", TypeTag::Nonce);
        let e1 = Term::senc(
            Term::concat(vec![n_a.clone(), Term::atom("k", TypeTag::Key)]),
            passwd.clone(),
        );
        let e2 = Term::senc(
            Term::concat(vec![n_a, Term::atom("k2", TypeTag::Key)]),
            passwd.clone(),
        );
        let mut opts = SolveOptions::new(RuleSet::core_std());
        opts.rules.weaknesses.insert(WeaknessRule::Guessing);
        opts.weak_keys.insert(passwd.clone());
        let ctx = SolveContext::new(opts);
        let report = solve(
            &seq(vec![Constraint::new(passwd.clone(), vec![e1.clone(), e2.clone()])]),
            &ctx,
        );
        assert!(!report.satisfiers.is_empty());

        // without the weak mark the rule does not fire
        let mut opts2 = SolveOptions::new(RuleSet::core_std());
        opts2.rules.weaknesses.insert(WeaknessRule::Guessing);
        let ctx2 = SolveContext::new(opts2);
        let report2 = solve(&seq(vec![Constraint::new(passwd, vec![e1, e2])]), &ctx2);
        assert!(report2.satisfiers.is_empty());
        assert!(report2.exhausted);
    }

    #[test]
    fn search_is_deterministic() {
        let enc = Term::penc(
            Term::concat(vec![Term::num(1), Term::var("N", TypeTag::Nonce), atom("a")]),
            Term::pk(atom("b")),
        );
        let t0 = vec![atom("a"), atom("b"), Term::num(1), Term::pk(atom("b"))];
        let mk = || {
            let report = solve(&seq(vec![Constraint::new(enc.clone(), t0.clone())]), &ctx_std());
            format!("{report:?}")
        };
        assert_eq!(mk(), mk());
    }

    #[test]
    fn core_rules_add_only_contained_terms() {
        let k = Term::sh(atom("b"), atom("s"));
        let enc = Term::senc(Term::concat(vec![atom("a"), atom("x")]), k.clone());
        let mut opts = SolveOptions::new(RuleSet::core_std());
        opts.instrument_subterms = true;
        let ctx = SolveContext::new(opts);
        let report = solve(
            &seq(vec![Constraint::new(atom("a"), vec![enc, k])]),
            &ctx,
        );
        assert_eq!(report.stats.subterm_violation_count, 0);
    }
}
