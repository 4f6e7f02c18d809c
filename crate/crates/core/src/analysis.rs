//! Non-unifiability checking, tagging transformations, and end-to-end
//! type-flaw attack detection.

use crate::combine::mgu_combined;
use crate::protocol::{
    constraint_sequences, normalize_sequence, ConstraintSequence, Protocol, SemiBundle, Strand,
};
use crate::solver::{
    solve, RuleSet, SearchLimits, SearchStats, Satisfier, SolveContext, SolveOptions,
    WeaknessRule,
};
use crate::subst::Substitution;
use crate::term::{Constant, Term, TypeTag};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Equational theories the analyzer can be asked for. Only the free theory
/// and ACUN are implemented; the remaining monoidal theories are accepted
/// as configuration and reported unsupported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TheoryChoice {
    Std,
    Acun,
    Acu,
    AcuIdem,
    Ag,
}

impl TheoryChoice {
    pub fn supported(&self) -> bool {
        matches!(self, TheoryChoice::Std | TheoryChoice::Acun)
    }
    pub fn name(&self) -> &'static str {
        match self {
            TheoryChoice::Std => "std",
            TheoryChoice::Acun => "acun",
            TheoryChoice::Acu => "acu",
            TheoryChoice::AcuIdem => "acuidem",
            TheoryChoice::Ag => "ag",
        }
    }
}

/// Analyzer configuration: theory, optional inference rules, bounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub theory: TheoryChoice,
    pub weaknesses: BTreeSet<WeaknessRule>,
    pub assoc_pairs: bool,
    pub limits: SearchLimits,
    /// Enables the runtime invariant assertions (well-typed unifiers on
    /// NUT-satisfying bundles, subterm production).
    pub verify: bool,
    /// Worker count for fanning out constraint sequences; 1 = sequential.
    pub jobs: usize,
}

impl AnalysisConfig {
    pub fn new(theory: TheoryChoice) -> AnalysisConfig {
        AnalysisConfig {
            theory,
            weaknesses: BTreeSet::new(),
            assoc_pairs: false,
            limits: SearchLimits::default(),
            verify: false,
            jobs: 1,
        }
    }

    pub fn rule_set(&self) -> RuleSet {
        RuleSet {
            acun: self.theory == TheoryChoice::Acun,
            weaknesses: self.weaknesses.clone(),
            assoc_pairs: self.assoc_pairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum NutViolation {
    /// Two textually distinct compound terms of the protocol unify.
    UnifiableCompounds { first: Term, second: Term },
    /// An XOR element is not a `[type-tag, payload]` pair.
    UntaggedXorElement { xor_term: Term, element: Term },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NutReport {
    pub satisfied: bool,
    pub violations: Vec<NutViolation>,
}

/// Alpha-equivalence of parametric terms: a consistent bijective renaming
/// of variables mapping one onto the other.
fn alpha_equivalent(a: &Term, b: &Term) -> bool {
    fn go(a: &Term, b: &Term, fwd: &mut BTreeMap<String, String>, bwd: &mut BTreeMap<String, String>) -> bool {
        match (a, b) {
            (Term::Variable(x), Term::Variable(y)) => {
                if x.ty != y.ty {
                    return false;
                }
                let f = fwd.entry(x.name.clone()).or_insert_with(|| y.name.clone());
                let g = bwd.entry(y.name.clone()).or_insert_with(|| x.name.clone());
                f == &y.name && g == &x.name
            }
            (Term::Constant(c), Term::Constant(d)) => c == d,
            (Term::Atom(x), Term::Atom(y)) => x == y,
            (Term::Concat(xs), Term::Concat(ys)) | (Term::Xor(xs), Term::Xor(ys)) => {
                xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| go(x, y, fwd, bwd))
            }
            (Term::PublicKey(x), Term::PublicKey(y)) => go(x, y, fwd, bwd),
            (Term::SharedKey(x1, x2), Term::SharedKey(y1, y2)) => {
                go(x1, y1, fwd, bwd) && go(x2, y2, fwd, bwd)
            }
            (Term::AsymEnc { body: b1, key: k1 }, Term::AsymEnc { body: b2, key: k2 })
            | (Term::SymEnc { body: b1, key: k1 }, Term::SymEnc { body: b2, key: k2 })
            | (Term::Signature { body: b1, key: k1 }, Term::Signature { body: b2, key: k2 }) => {
                go(b1, b2, fwd, bwd) && go(k1, k2, fwd, bwd)
            }
            (Term::Hash(x), Term::Hash(y)) => go(x, y, fwd, bwd),
            _ => false,
        }
    }
    go(a, b, &mut BTreeMap::new(), &mut BTreeMap::new())
}

/// True when `specific` is a substitution instance of `pattern`
/// (one-sided structural matching; variables bind consistently).
fn is_instance_of(specific: &Term, pattern: &Term) -> bool {
    fn go(p: &Term, s: &Term, bind: &mut BTreeMap<String, Term>) -> bool {
        match (p, s) {
            (Term::Variable(v), t) => match bind.get(&v.name) {
                Some(prev) => prev == t,
                None => {
                    bind.insert(v.name.clone(), t.clone());
                    true
                }
            },
            (Term::Constant(c), Term::Constant(d)) => c == d,
            (Term::Atom(x), Term::Atom(y)) => x == y,
            (Term::Concat(xs), Term::Concat(ys)) | (Term::Xor(xs), Term::Xor(ys)) => {
                xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| go(x, y, bind))
            }
            (Term::PublicKey(x), Term::PublicKey(y)) => go(x, y, bind),
            (Term::SharedKey(x1, x2), Term::SharedKey(y1, y2)) => {
                go(x1, y1, bind) && go(x2, y2, bind)
            }
            (Term::AsymEnc { body: b1, key: k1 }, Term::AsymEnc { body: b2, key: k2 })
            | (Term::SymEnc { body: b1, key: k1 }, Term::SymEnc { body: b2, key: k2 })
            | (Term::Signature { body: b1, key: k1 }, Term::Signature { body: b2, key: k2 }) => {
                go(b1, b2, bind) && go(k1, k2, bind)
            }
            (Term::Hash(x), Term::Hash(y)) => go(x, y, bind),
            _ => false,
        }
    }
    go(pattern, specific, &mut BTreeMap::new())
}

/// Checks the two tagging conditions: textually distinct compound terms are
/// pairwise non-unifiable, and every XOR element carries its type tag.
pub fn check_nut(protocol: &Protocol) -> NutReport {
    let mut violations = Vec::new();

    // Clause 1 over the compound terms of all roles. Textual distinctness
    // is up to consistent renaming within a role; across roles the same
    // message is written with the same variables, so plain equality
    // deduplicates it.
    let mut compounds: Vec<(usize, Term)> = Vec::new();
    for (ri, role) in protocol.roles.iter().enumerate() {
        for node in &role.nodes {
            for c in node.term.compound_terms() {
                compounds.push((ri, c));
            }
        }
    }
    let mut distinct: Vec<(usize, Term)> = Vec::new();
    'outer: for (ri, c) in compounds {
        for (rj, d) in &distinct {
            if c == *d || (ri == *rj && alpha_equivalent(&c, d)) {
                continue 'outer;
            }
        }
        distinct.push((ri, c));
    }
    // A strict one-way instance is the same message seen at two precisions
    // (a forwarding role writes an opaque variable where another role
    // writes the payload structure); such pairs are not distinct terms.
    let same_message = |a: &Term, b: &Term| -> bool {
        !alpha_equivalent(a, b) && (is_instance_of(a, b) || is_instance_of(b, a))
    };
    for i in 0..distinct.len() {
        for j in (i + 1)..distinct.len() {
            let (a, b) = (&distinct[i].1, &distinct[j].1);
            if same_message(a, b) {
                continue;
            }
            if !mgu_combined(a, b).is_empty() {
                violations.push(NutViolation::UnifiableCompounds {
                    first: a.clone(),
                    second: b.clone(),
                });
            }
        }
    }

    // Clause 2: every element of every XOR sum is [type(t''), t''].
    fn scan_xor(t: &Term, violations: &mut Vec<NutViolation>) {
        match t {
            Term::Xor(es) => {
                for e in es {
                    let tagged_ok = match e.as_tagged_pair() {
                        Some((tag, payload)) => tag == payload.type_of().tag_name(),
                        None => false,
                    };
                    if !tagged_ok {
                        violations.push(NutViolation::UntaggedXorElement {
                            xor_term: t.clone(),
                            element: e.clone(),
                        });
                    }
                    scan_xor(e, violations);
                }
            }
            Term::Concat(es) => {
                for e in es {
                    scan_xor(e, violations);
                }
            }
            Term::AsymEnc { body, key }
            | Term::SymEnc { body, key }
            | Term::Signature { body, key } => {
                scan_xor(body, violations);
                scan_xor(key, violations);
            }
            Term::Hash(b) => scan_xor(b, violations),
            _ => {}
        }
    }
    for t in protocol.terms() {
        scan_xor(t, &mut violations);
    }

    NutReport { satisfied: violations.is_empty(), violations }
}

fn max_existing_numeral(protocol: &Protocol) -> u64 {
    fn scan(t: &Term, max: &mut u64) {
        match t {
            Term::Constant(Constant::Num(n)) => *max = (*max).max(*n),
            Term::Concat(es) | Term::Xor(es) => es.iter().for_each(|e| scan(e, max)),
            Term::AsymEnc { body, key }
            | Term::SymEnc { body, key }
            | Term::Signature { body, key } => {
                scan(body, max);
                scan(key, max);
            }
            Term::Hash(b) => scan(b, max),
            Term::PublicKey(a) => scan(a, max),
            Term::SharedKey(a, b) => {
                scan(a, max);
                scan(b, max);
            }
            _ => {}
        }
    }
    let mut max = 0;
    for t in protocol.terms() {
        scan(t, &mut max);
    }
    max
}

fn body_is_numbered(body: &Term) -> bool {
    matches!(body, Term::Concat(es) if matches!(es.first(), Some(Term::Constant(Constant::Num(_)))))
}

/// Inserts a fresh component number as the first element of every distinct
/// compound term's body. Numbering is deterministic (pre-order over roles,
/// nodes, then left to right) and the same compound gets the same number
/// everywhere. Already-numbered bodies are untouched, so the transformation
/// is idempotent.
pub fn tag_component_numbers(protocol: &Protocol) -> Protocol {
    let mut numbering: BTreeMap<Term, u64> = BTreeMap::new();
    let mut next = max_existing_numeral(protocol) + 1;
    for role in &protocol.roles {
        for node in &role.nodes {
            for c in node.term.compound_terms() {
                let body = match &c {
                    Term::AsymEnc { body, .. }
                    | Term::SymEnc { body, .. }
                    | Term::Signature { body, .. } => body,
                    Term::Hash(b) => b,
                    _ => unreachable!(),
                };
                if !body_is_numbered(body) && !numbering.contains_key(&c) {
                    numbering.insert(c.clone(), next);
                    next += 1;
                }
            }
        }
    }

    fn rewrite(t: &Term, numbering: &BTreeMap<Term, u64>) -> Term {
        let number_body = |orig: &Term, body: &Term| -> Term {
            let body = rewrite(body, numbering);
            match numbering.get(orig) {
                Some(n) if !body_is_numbered(&body) => {
                    let mut es = vec![Term::num(*n)];
                    match body {
                        Term::Concat(inner) => es.extend(inner),
                        other => es.push(other),
                    }
                    Term::Concat(es)
                }
                _ => body,
            }
        };
        match t {
            Term::AsymEnc { body, key } => {
                Term::penc(number_body(t, body), rewrite(key, numbering))
            }
            Term::SymEnc { body, key } => {
                Term::senc(number_body(t, body), rewrite(key, numbering))
            }
            Term::Signature { body, key } => {
                Term::sig(number_body(t, body), rewrite(key, numbering))
            }
            Term::Hash(b) => Term::hash(number_body(t, b)),
            Term::Concat(es) => {
                Term::Concat(es.iter().map(|e| rewrite(e, numbering)).collect())
            }
            Term::Xor(es) => Term::xor(es.iter().map(|e| rewrite(e, numbering)).collect()),
            Term::PublicKey(a) => Term::pk(rewrite(a, numbering)),
            Term::SharedKey(a, b) => Term::sh(rewrite(a, numbering), rewrite(b, numbering)),
            _ => t.clone(),
        }
    }

    Protocol {
        name: protocol.name.clone(),
        roles: protocol
            .roles
            .iter()
            .map(|r| Strand {
                role_name: r.role_name.clone(),
                nodes: r
                    .nodes
                    .iter()
                    .map(|n| crate::protocol::Node {
                        sign: n.sign,
                        term: rewrite(&n.term, &numbering),
                    })
                    .collect(),
            })
            .collect(),
    }
}

fn wrap_tag(t: Term) -> Term {
    if let Some((tag, payload)) = t.as_tagged_pair() {
        if tag == payload.type_of().tag_name() {
            return t;
        }
    }
    let tag = Term::tag(t.type_of().tag_name());
    Term::concat(vec![tag, t])
}

/// Type-tagging transformation.
///
/// With `detailed_xor` only the elements of XOR sums are wrapped as
/// `[type-tag, element]` (the minimum the tagging condition's second clause
/// demands). Otherwise full type-tagging is applied: every field of a
/// concatenation is wrapped, nested pairs get the pair tag, XOR sums in
/// field position get their compound tag, and XOR elements are wrapped too.
/// Idempotent in both modes.
pub fn tag_types(protocol: &Protocol, detailed_xor: bool) -> Protocol {
    fn tag_xor_elements(t: &Term) -> Term {
        match t {
            Term::Xor(es) => {
                Term::xor(es.iter().map(|e| wrap_tag(tag_xor_elements(e))).collect())
            }
            Term::Concat(es) => Term::Concat(es.iter().map(tag_xor_elements).collect()),
            Term::AsymEnc { body, key } => {
                Term::penc(tag_xor_elements(body), tag_xor_elements(key))
            }
            Term::SymEnc { body, key } => {
                Term::senc(tag_xor_elements(body), tag_xor_elements(key))
            }
            Term::Signature { body, key } => {
                Term::sig(tag_xor_elements(body), tag_xor_elements(key))
            }
            Term::Hash(b) => Term::hash(tag_xor_elements(b)),
            _ => t.clone(),
        }
    }

    // Full tagging: wrap every field. Keys and bare numerals leading a
    // numbered body stay unwrapped; tags are never re-tagged.
    fn full(t: &Term) -> Term {
        match t {
            Term::Concat(es) => Term::Concat(es.iter().map(|e| wrap_field(e)).collect()),
            Term::Xor(es) => Term::xor(es.iter().map(|e| wrap_field(e)).collect()),
            Term::AsymEnc { body, key } => Term::penc(full(body), (**key).clone()),
            Term::SymEnc { body, key } => Term::senc(full(body), (**key).clone()),
            Term::Signature { body, key } => Term::sig(full(body), (**key).clone()),
            Term::Hash(b) => Term::hash(full(b)),
            _ => t.clone(),
        }
    }

    fn wrap_field(t: &Term) -> Term {
        match t {
            Term::Constant(Constant::Tag(_)) | Term::Constant(Constant::Num(_)) => t.clone(),
            Term::PublicKey(_) | Term::SharedKey(_, _) => t.clone(),
            _ => {
                if let Some((tag, payload)) = t.as_tagged_pair() {
                    if tag == payload.type_of().tag_name() {
                        // keep the tag, keep tagging below it
                        return Term::concat(vec![Term::tag(tag.to_string()), full_sub(payload)]);
                    }
                }
                wrap_tag(full_sub(t))
            }
        }
    }

    fn full_sub(t: &Term) -> Term {
        match t {
            Term::Concat(_) | Term::Xor(_) | Term::AsymEnc { .. } | Term::SymEnc { .. }
            | Term::Signature { .. } | Term::Hash(_) => full(t),
            _ => t.clone(),
        }
    }

    let transform = |t: &Term| if detailed_xor { tag_xor_elements(t) } else { full(t) };
    Protocol {
        name: protocol.name.clone(),
        roles: protocol
            .roles
            .iter()
            .map(|r| Strand {
                role_name: r.role_name.clone(),
                nodes: r
                    .nodes
                    .iter()
                    .map(|n| crate::protocol::Node { sign: n.sign, term: transform(&n.term) })
                    .collect(),
            })
            .collect(),
    }
}

/// Outcome of the attack search over a semi-bundle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackVerdict {
    /// The sequence is satisfiable, but only with ill-typed substitutions.
    TypeFlawAttack {
        substitution: Substitution,
        trace: Vec<crate::solver::TraceStep>,
        sequence_index: usize,
    },
    /// A well-typed satisfier exists, so whatever is wrong is not a
    /// type-flaw by definition.
    WellTypedAttackExists {
        substitution: Substitution,
        trace: Vec<crate::solver::TraceStep>,
        sequence_index: usize,
    },
    /// No satisfiable sequence found; `exhausted` says whether the searches
    /// ran to completion within the bounds.
    NoAttackWithinBounds { exhausted: bool },
}

impl AttackVerdict {
    pub fn kind(&self) -> &'static str {
        match self {
            AttackVerdict::TypeFlawAttack { .. } => "type-flaw-attack",
            AttackVerdict::WellTypedAttackExists { .. } => "well-typed-attack",
            AttackVerdict::NoAttackWithinBounds { .. } => "no-attack-within-bounds",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisOutcome {
    pub verdict: AttackVerdict,
    pub sequences_examined: usize,
    pub sequences_truncated: bool,
    pub stats: SearchStats,
    /// The normalized constraint sequence behind the verdict, when any.
    pub sequence: Option<ConstraintSequence>,
    /// Invariant assertions that failed in verify mode.
    pub assertion_failures: Vec<String>,
}

enum SequenceVerdict {
    TypeFlaw(Satisfier),
    WellTyped(Satisfier),
    Nothing { exhausted: bool },
}

fn examine_sequence(
    seq: &ConstraintSequence,
    cfg: &AnalysisConfig,
    bundle: &SemiBundle,
    expect_well_typed: bool,
) -> (SequenceVerdict, SearchStats, ConstraintSequence) {
    let normalized = normalize_sequence(seq);
    let mut opts = SolveOptions::new(cfg.rule_set());
    opts.limits = cfg.limits.clone();
    opts.weak_keys = bundle.weak_keys.clone();
    opts.expect_well_typed = expect_well_typed && cfg.verify;
    opts.instrument_subterms = cfg.verify;

    let free = solve(&normalized, &SolveContext::new(opts.clone()));
    let mut stats = free.stats.clone();

    if let Some(wt) = free.satisfiers.iter().find(|s| s.substitution.is_well_typed()) {
        return (SequenceVerdict::WellTyped(wt.clone()), stats, normalized);
    }
    let ill = free.satisfiers.iter().find(|s| !s.substitution.is_well_typed());
    if let Some(ill) = ill {
        // restricted second search: only well-typed unifiers allowed
        let mut ropts = opts.clone();
        ropts.restrict_well_typed = true;
        let restricted = solve(&normalized, &SolveContext::new(ropts));
        stats.states_expanded += restricted.stats.states_expanded;
        if let Some(wt) = restricted.satisfiers.iter().find(|s| s.substitution.is_well_typed()) {
            return (SequenceVerdict::WellTyped(wt.clone()), stats, normalized);
        }
        if restricted.exhausted && restricted.satisfiers.is_empty() {
            return (SequenceVerdict::TypeFlaw(ill.clone()), stats, normalized);
        }
        // Could not certify absence of a well-typed satisfier: report the
        // budget problem rather than a type-flaw claim.
        stats.budget_exceeded = true;
        return (SequenceVerdict::Nothing { exhausted: false }, stats, normalized);
    }
    (SequenceVerdict::Nothing { exhausted: free.exhausted }, stats, normalized)
}

fn merge_stats(total: &mut SearchStats, part: &SearchStats) {
    total.states_expanded += part.states_expanded;
    total.max_depth_seen = total.max_depth_seen.max(part.max_depth_seen);
    total.solutions_found += part.solutions_found;
    total.budget_exceeded |= part.budget_exceeded;
    total.solutions_truncated |= part.solutions_truncated;
    total.subterm_violation_count += part.subterm_violation_count;
    for v in &part.subterm_violations {
        if total.subterm_violations.len() < 32 {
            total.subterm_violations.push(v.clone());
        }
    }
    total.well_typed_violations.extend(part.well_typed_violations.iter().cloned());
}

/// Searches every constraint sequence of the semi-bundle for a type-flaw
/// attack. Sequences are examined independently (in parallel when `jobs`
/// allows); the verdict is the first definitive one by sequence index, so
/// the result does not depend on scheduling.
pub fn find_typeflaw(
    bundle: &SemiBundle,
    protocol: &Protocol,
    cfg: &AnalysisConfig,
) -> AnalysisOutcome {
    let nut_ok = check_nut(protocol).satisfied;
    // The well-typed-unifier invariant presumes subterm-producing rules;
    // weakness rules break that premise, so the assertion stays off there.
    let assert_well_typed = nut_ok && cfg.weaknesses.is_empty();
    let (sequences, truncated) =
        constraint_sequences(bundle, Some(cfg.limits.max_sequences));

    let examine =
        |seq: &ConstraintSequence| examine_sequence(seq, cfg, bundle, assert_well_typed);

    let results: Vec<(SequenceVerdict, SearchStats, ConstraintSequence)> =
        run_over_sequences(&sequences, cfg.jobs, examine);

    let mut stats = SearchStats::default();
    let mut all_exhausted = !truncated;
    let mut verdict: Option<(usize, AttackVerdict, ConstraintSequence)> = None;
    for (i, (sv, s, normalized)) in results.iter().enumerate() {
        merge_stats(&mut stats, s);
        match sv {
            SequenceVerdict::TypeFlaw(sat) if verdict.is_none() => {
                verdict = Some((
                    i,
                    AttackVerdict::TypeFlawAttack {
                        substitution: sat.substitution.clone(),
                        trace: sat.trace.clone(),
                        sequence_index: i,
                    },
                    normalized.clone(),
                ));
            }
            SequenceVerdict::WellTyped(sat) if verdict.is_none() => {
                verdict = Some((
                    i,
                    AttackVerdict::WellTypedAttackExists {
                        substitution: sat.substitution.clone(),
                        trace: sat.trace.clone(),
                        sequence_index: i,
                    },
                    normalized.clone(),
                ));
            }
            SequenceVerdict::Nothing { exhausted } => {
                all_exhausted &= exhausted;
            }
            _ => {}
        }
    }

    let mut assertion_failures = Vec::new();
    if cfg.verify && assert_well_typed && !stats.well_typed_violations.is_empty() {
        assertion_failures.push(format!(
            "well-typed-unifiers: {} ill-typed unifier(s) observed on a NUT-satisfying bundle",
            stats.well_typed_violations.len()
        ));
    }

    match verdict {
        Some((_, v, sequence)) => AnalysisOutcome {
            verdict: v,
            sequences_examined: sequences.len(),
            sequences_truncated: truncated,
            stats,
            sequence: Some(sequence),
            assertion_failures,
        },
        None => AnalysisOutcome {
            verdict: AttackVerdict::NoAttackWithinBounds { exhausted: all_exhausted },
            sequences_examined: sequences.len(),
            sequences_truncated: truncated,
            stats,
            sequence: None,
            assertion_failures,
        },
    }
}

#[cfg(feature = "parallel")]
fn run_over_sequences<F>(
    sequences: &[ConstraintSequence],
    jobs: usize,
    examine: F,
) -> Vec<(SequenceVerdict, SearchStats, ConstraintSequence)>
where
    F: Fn(&ConstraintSequence) -> (SequenceVerdict, SearchStats, ConstraintSequence) + Sync + Send,
{
    use rayon::prelude::*;
    if jobs <= 1 {
        return sequences.iter().map(examine).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    pool.install(|| sequences.par_iter().map(examine).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_over_sequences<F>(
    sequences: &[ConstraintSequence],
    _jobs: usize,
    examine: F,
) -> Vec<(SequenceVerdict, SearchStats, ConstraintSequence)>
where
    F: Fn(&ConstraintSequence) -> (SequenceVerdict, SearchStats, ConstraintSequence),
{
    sequences.iter().map(examine).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Node;

    fn nsl_untagged() -> Protocol {
        let n_a = Term::var("N_A", TypeTag::Nonce);
        let n_b = Term::var("N_B", TypeTag::Nonce);
        let a = Term::var("A", TypeTag::Agent);
        let b = Term::var("B", TypeTag::Agent);
        let msg1 = Term::penc(
            Term::concat(vec![Term::num(1), n_a.clone(), a.clone()]),
            Term::pk(b.clone()),
        );
        let msg2 = Term::penc(
            Term::concat(vec![
                Term::num(2),
                Term::xor(vec![n_a.clone(), b.clone()]),
                n_b.clone(),
            ]),
            Term::pk(a.clone()),
        );
        let msg3 = Term::penc(Term::concat(vec![Term::num(3), n_b]), Term::pk(b));
        Protocol {
            name: "nsl_xor".into(),
            roles: vec![
                Strand {
                    role_name: "A".into(),
                    nodes: vec![
                        Node::send(msg1.clone()),
                        Node::recv(msg2.clone()),
                        Node::send(msg3.clone()),
                    ],
                },
                Strand {
                    role_name: "B".into(),
                    nodes: vec![Node::recv(msg1), Node::send(msg2), Node::recv(msg3)],
                },
            ],
        }
    }

    #[test]
    fn untagged_nsl_violates_clause_two() {
        let report = check_nut(&nsl_untagged());
        assert!(!report.satisfied);
        let found = report.violations.iter().any(|v| match v {
            NutViolation::UntaggedXorElement { element, .. } => {
                *element == Term::var("N_A", TypeTag::Nonce)
            }
            _ => false,
        });
        assert!(found, "expected the untagged N_A element to be reported");
    }

    #[test]
    fn detailed_tagging_satisfies_nut() {
        let tagged = tag_types(&nsl_untagged(), true);
        let report = check_nut(&tagged);
        assert!(report.satisfied, "violations: {:?}", report.violations);
    }

    #[test]
    fn identical_compounds_across_roles_are_not_a_pair() {
        // the same parametric message on a send and the peer's receive
        let p = nsl_untagged();
        let report = check_nut(&p);
        assert!(report
            .violations
            .iter()
            .all(|v| !matches!(v, NutViolation::UnifiableCompounds { .. })));
    }

    #[test]
    fn clause_one_is_symmetric() {
        // two genuinely unifiable distinct compounds, in both orders
        let a = Term::var("A", TypeTag::Agent);
        let n = Term::var("N", TypeTag::Nonce);
        let m1 = Term::penc(
            Term::concat(vec![n.clone(), Term::num(1)]),
            Term::pk(a.clone()),
        );
        let m2 = Term::penc(
            Term::concat(vec![Term::num(2), Term::var("M", TypeTag::Nonce)]),
            Term::pk(a.clone()),
        );
        let proto = |x: Term, y: Term| Protocol {
            name: "p".into(),
            roles: vec![Strand {
                role_name: "R".into(),
                nodes: vec![Node::send(x), Node::send(y)],
            }],
        };
        let r1 = check_nut(&proto(m1.clone(), m2.clone()));
        let r2 = check_nut(&proto(m2, m1));
        assert_eq!(r1.satisfied, r2.satisfied);
        assert!(!r1.satisfied);
    }

    #[test]
    fn component_numbering_example() {
        // penc([N_A, A]; pk(B)) → penc([k, N_A, A]; pk(B)) for fresh k
        let p = Protocol {
            name: "p".into(),
            roles: vec![Strand {
                role_name: "A".into(),
                nodes: vec![Node::send(Term::penc(
                    Term::concat(vec![
                        Term::var("N_A", TypeTag::Nonce),
                        Term::var("A", TypeTag::Agent),
                    ]),
                    Term::pk(Term::var("B", TypeTag::Agent)),
                ))],
            }],
        };
        let numbered = tag_component_numbers(&p);
        let Term::AsymEnc { body, .. } = &numbered.roles[0].nodes[0].term else {
            panic!()
        };
        assert!(body_is_numbered(body));
        // idempotent
        assert_eq!(tag_component_numbers(&numbered), numbered);
    }

    #[test]
    fn nested_compounds_get_distinct_numbers() {
        let inner = Term::senc(
            Term::concat(vec![
                Term::var("N_B", TypeTag::Nonce),
                Term::var("A", TypeTag::Agent),
            ]),
            Term::sh(Term::var("A", TypeTag::Agent), Term::var("B", TypeTag::Agent)),
        );
        let outer = Term::senc(
            Term::concat(vec![Term::var("N_A", TypeTag::Nonce), inner]),
            Term::sh(Term::var("B", TypeTag::Agent), Term::var("S", TypeTag::Agent)),
        );
        let p = Protocol {
            name: "p".into(),
            roles: vec![Strand { role_name: "A".into(), nodes: vec![Node::send(outer)] }],
        };
        let numbered = tag_component_numbers(&p);
        let Term::SymEnc { body, .. } = &numbered.roles[0].nodes[0].term else { panic!() };
        let Term::Concat(es) = &**body else { panic!() };
        let Term::Constant(Constant::Num(outer_n)) = &es[0] else { panic!() };
        let Term::SymEnc { body: inner_body, .. } = &es[2] else { panic!() };
        let Term::Concat(ies) = &**inner_body else { panic!() };
        let Term::Constant(Constant::Num(inner_n)) = &ies[0] else { panic!() };
        assert_ne!(outer_n, inner_n);
    }

    #[test]
    fn detailed_xor_tagging_example() {
        // N_A ⊕ B → [#nonce, N_A] ⊕ [#agent, B]
        let p = Protocol {
            name: "p".into(),
            roles: vec![Strand {
                role_name: "A".into(),
                nodes: vec![Node::send(Term::xor(vec![
                    Term::var("N_A", TypeTag::Nonce),
                    Term::var("B", TypeTag::Agent),
                ]))],
            }],
        };
        let tagged = tag_types(&p, true);
        let expected = Term::xor(vec![
            Term::concat(vec![Term::tag("nonce"), Term::var("N_A", TypeTag::Nonce)]),
            Term::concat(vec![Term::tag("agent"), Term::var("B", TypeTag::Agent)]),
        ]);
        assert_eq!(tagged.roles[0].nodes[0].term, expected);
        assert_eq!(tag_types(&tagged, true), tagged);
    }

    #[test]
    fn full_tagging_wraps_nested_pairs() {
        // [A, [b, c], d] → [[#agent,A],[#pair,[[#nonce,b],[#agent,c]]],[#key,d]]
        let t = Term::concat(vec![
            Term::var("A", TypeTag::Agent),
            Term::concat(vec![
                Term::atom("b", TypeTag::Nonce),
                Term::atom("c", TypeTag::Agent),
            ]),
            Term::atom("d", TypeTag::Key),
        ]);
        let p = Protocol {
            name: "p".into(),
            roles: vec![Strand { role_name: "A".into(), nodes: vec![Node::send(t)] }],
        };
        let tagged = tag_types(&p, false);
        let expected = Term::concat(vec![
            Term::concat(vec![Term::tag("agent"), Term::var("A", TypeTag::Agent)]),
            Term::concat(vec![
                Term::tag("pair"),
                Term::concat(vec![
                    Term::concat(vec![Term::tag("nonce"), Term::atom("b", TypeTag::Nonce)]),
                    Term::concat(vec![Term::tag("agent"), Term::atom("c", TypeTag::Agent)]),
                ]),
            ]),
            Term::concat(vec![Term::tag("key"), Term::atom("d", TypeTag::Key)]),
        ]);
        assert_eq!(tagged.roles[0].nodes[0].term, expected);
        assert_eq!(tag_types(&tagged, false), tagged);
    }

    #[test]
    fn atom_only_message_unchanged_by_detailed_tagging() {
        let p = Protocol {
            name: "p".into(),
            roles: vec![Strand {
                role_name: "A".into(),
                nodes: vec![Node::send(Term::var("A", TypeTag::Agent))],
            }],
        };
        assert_eq!(tag_types(&p, true), p);
    }

    #[test]
    fn numbering_then_detailed_tagging_passes_nut() {
        let p = nsl_untagged();
        let pipeline = tag_types(&tag_component_numbers(&p), true);
        assert!(check_nut(&pipeline).satisfied);
    }
}
