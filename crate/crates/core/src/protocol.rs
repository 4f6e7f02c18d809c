//! Strand-space protocol model: parametric roles, honest instantiation to
//! semi-strands, semi-bundles, and the constraint sequences the solver
//! consumes.

use crate::subst::Substitution;
use crate::term::{Term, Variable};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

/// A send (`+`) or receive (`-`) event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub sign: Sign,
    pub term: Term,
}

impl Node {
    pub fn send(term: Term) -> Node {
        Node { sign: Sign::Plus, term }
    }
    pub fn recv(term: Term) -> Node {
        Node { sign: Sign::Minus, term }
    }
}

/// A sequence of nodes; intra-strand order is the `precedes` relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strand {
    pub role_name: String,
    pub nodes: Vec<Node>,
}

/// A set of parametric strands: terms contain only variables and constants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub name: String,
    pub roles: Vec<Strand>,
}

impl Protocol {
    pub fn role(&self, name: &str) -> Option<&Strand> {
        self.roles.iter().find(|r| r.role_name == name)
    }

    /// All terms appearing on any node of any role.
    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.roles.iter().flat_map(|r| r.nodes.iter().map(|n| &n.term))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("honest substitution is ill-typed: {binding}")]
    IllTypedHonestSubstitution { binding: String },
    #[error("substitution binds {var}, which does not occur in role {role}")]
    UnknownVariable { var: String, role: String },
    #[error("unknown role {0}")]
    UnknownRole(String),
}

/// A partially instantiated strand together with the honest substitution
/// that produced it and the session metadata used for trace rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemiStrand {
    pub role_name: String,
    pub instance_name: String,
    pub nodes: Vec<Node>,
    pub honest_sub: Substitution,
    /// The agent playing this strand, when known.
    pub self_agent: Option<Term>,
    /// The peer this strand believes it is talking to, when known.
    pub peer_agent: Option<Term>,
    /// Goal strands embed the violated property; they are not rendered as
    /// protocol messages.
    pub is_goal: bool,
}

/// A set of semi-strands plus the attacker's initial knowledge and the
/// scenario options the solver needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemiBundle {
    pub strands: Vec<SemiStrand>,
    pub initial_knowledge: BTreeSet<Term>,
    pub weak_keys: BTreeSet<Term>,
    pub assoc_pairs: bool,
}

/// One intruder-derivation obligation: derive `target` from `knowledge`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub target: Term,
    pub knowledge: Vec<Term>,
}

impl Constraint {
    pub fn new(target: Term, knowledge: impl IntoIterator<Item = Term>) -> Constraint {
        let mut k: Vec<Term> = knowledge.into_iter().collect();
        k.sort();
        k.dedup();
        Constraint { target, knowledge: k }
    }
}

/// An ordered list of constraints plus the substitution accumulated while
/// solving. `interleaving` records which (strand, node) produced each event,
/// for trace rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSequence {
    pub constraints: Vec<Constraint>,
    pub binding: Substitution,
    pub interleaving: Vec<(usize, usize)>,
}

/// Instantiates a role with a well-typed honest substitution and renames
/// the remaining variables fresh (suffix `#<instance>`) so distinct
/// sessions stay distinguishable.
pub fn instantiate_role(
    role: &Strand,
    sigma: &Substitution,
    instance: &str,
) -> Result<Strand, ProtocolError> {
    let mut role_vars: BTreeSet<Variable> = BTreeSet::new();
    for n in &role.nodes {
        n.term.collect_vars(&mut role_vars);
    }
    for (v, t) in sigma.iter() {
        if !role_vars.contains(v) {
            return Err(ProtocolError::UnknownVariable {
                var: v.name.clone(),
                role: role.role_name.clone(),
            });
        }
        if !t.type_of().compatible(&v.ty) {
            return Err(ProtocolError::IllTypedHonestSubstitution {
                binding: format!("{t}/{}", v.name),
            });
        }
    }
    let freshen = Substitution::from_bindings(role_vars.iter().filter_map(|v| {
        if sigma.get(v).is_some() {
            None
        } else {
            let fresh = Variable { name: format!("{}#{instance}", v.name), ty: v.ty.clone() };
            Some((v.clone(), Term::Variable(fresh)))
        }
    }))
    .expect("freshening is conflict-free");

    let nodes = role
        .nodes
        .iter()
        .map(|n| Node { sign: n.sign, term: freshen.apply(&sigma.apply(&n.term)) })
        .collect();
    Ok(Strand { role_name: role.role_name.clone(), nodes })
}

/// Enumerates every interleaving of the strands' nodes consistent with the
/// intra-strand order and emits the constraint sequence of each: the `-`
/// node targets against the knowledge accumulated from the initial set and
/// all preceding `+` nodes. Duplicate sequences (interleavings differing
/// only in `+`-node placement that yields the same knowledge sets) are
/// emitted once. `max_sequences` truncates the stream; `None` on no bound.
pub fn constraint_sequences(
    bundle: &SemiBundle,
    max_sequences: Option<usize>,
) -> (Vec<ConstraintSequence>, bool) {
    let strands = &bundle.strands;
    let mut out: Vec<ConstraintSequence> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut truncated = false;

    let mut cursors = vec![0usize; strands.len()];
    let mut order: Vec<(usize, usize)> = Vec::new();

    fn rec(
        bundle: &SemiBundle,
        cursors: &mut Vec<usize>,
        order: &mut Vec<(usize, usize)>,
        out: &mut Vec<ConstraintSequence>,
        seen: &mut BTreeSet<String>,
        truncated: &mut bool,
        max: Option<usize>,
    ) {
        if let Some(m) = max {
            if out.len() >= m {
                *truncated = true;
                return;
            }
        }
        if cursors.iter().enumerate().all(|(s, &c)| c == bundle.strands[s].nodes.len()) {
            let seq = build_sequence(bundle, order);
            let key = sequence_key(&seq);
            if seen.insert(key) {
                out.push(seq);
            }
            return;
        }
        for s in 0..bundle.strands.len() {
            if cursors[s] < bundle.strands[s].nodes.len() {
                order.push((s, cursors[s]));
                cursors[s] += 1;
                rec(bundle, cursors, order, out, seen, truncated, max);
                cursors[s] -= 1;
                order.pop();
            }
        }
    }

    rec(bundle, &mut cursors, &mut order, &mut out, &mut seen, &mut truncated, max_sequences);
    (out, truncated)
}

fn build_sequence(bundle: &SemiBundle, order: &[(usize, usize)]) -> ConstraintSequence {
    let mut knowledge: Vec<Term> = bundle.initial_knowledge.iter().cloned().collect();
    let mut constraints = Vec::new();
    for &(s, n) in order {
        let node = &bundle.strands[s].nodes[n];
        match node.sign {
            Sign::Plus => knowledge.push(node.term.clone()),
            Sign::Minus => {
                constraints.push(Constraint::new(node.term.clone(), knowledge.iter().cloned()))
            }
        }
    }
    ConstraintSequence {
        constraints,
        binding: Substitution::empty(),
        interleaving: order.to_vec(),
    }
}

fn sequence_key(seq: &ConstraintSequence) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    for c in &seq.constraints {
        let _ = write!(s, "{}:", c.target);
        for t in &c.knowledge {
            let _ = write!(s, "{t},");
        }
        s.push(';');
    }
    s
}

/// Eagerly applies the pair rules on both sides of every constraint until
/// no target and no knowledge element is a concatenation. Satisfiability is
/// preserved.
pub fn normalize_sequence(seq: &ConstraintSequence) -> ConstraintSequence {
    let mut constraints: Vec<Constraint> = Vec::new();
    for c in &seq.constraints {
        let mut knowledge: Vec<Term> = Vec::new();
        let mut stack: Vec<Term> = c.knowledge.iter().cloned().collect();
        while let Some(t) = stack.pop() {
            match t {
                Term::Concat(es) => stack.extend(es),
                other => knowledge.push(other),
            }
        }
        knowledge.sort();
        knowledge.dedup();

        // elements are pushed reversed so the leftmost pops first
        let mut targets: Vec<Term> = Vec::new();
        let mut tstack: Vec<Term> = vec![c.target.clone()];
        while let Some(t) = tstack.pop() {
            match t {
                Term::Concat(es) => tstack.extend(es.into_iter().rev()),
                other => targets.push(other),
            }
        }
        for target in targets {
            constraints.push(Constraint { target, knowledge: knowledge.clone() });
        }
    }
    ConstraintSequence {
        constraints,
        binding: seq.binding.clone(),
        interleaving: seq.interleaving.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::TypeTag;

    fn v(name: &str, ty: TypeTag) -> Variable {
        Variable { name: name.into(), ty }
    }

    /// Tagged role A as displayed in the strand-model walkthrough: note the
    /// xor pairs [(#nonce, N_A), (#agent, A)].
    fn tagged_role_a() -> Strand {
        let n_a = Term::var("N_A", TypeTag::Nonce);
        let a = Term::var("A", TypeTag::Agent);
        let b = Term::var("B", TypeTag::Agent);
        let n_b = Term::var("N_B", TypeTag::Nonce);
        Strand {
            role_name: "A".into(),
            nodes: vec![
                Node::send(Term::penc(
                    Term::concat(vec![Term::num(1), n_a.clone(), a.clone()]),
                    Term::pk(b.clone()),
                )),
                Node::recv(Term::penc(
                    Term::concat(vec![
                        Term::num(2),
                        Term::xor(vec![
                            Term::concat(vec![Term::tag("nonce"), n_a.clone()]),
                            Term::concat(vec![Term::tag("agent"), a.clone()]),
                        ]),
                        n_b.clone(),
                    ]),
                    Term::pk(a.clone()),
                )),
                Node::send(Term::penc(Term::concat(vec![Term::num(3), n_b]), Term::pk(b))),
            ],
        }
    }

    #[test]
    fn instantiate_tagged_role_a() {
        let role = tagged_role_a();
        let sigma = Substitution::from_bindings(vec![
            (v("A", TypeTag::Agent), Term::atom("a", TypeTag::Agent)),
            (v("N_A", TypeTag::Nonce), Term::atom("n_a", TypeTag::Nonce)),
        ])
        .unwrap();
        let semi = instantiate_role(&role, &sigma, "1").unwrap();
        let expected_first = Term::penc(
            Term::concat(vec![
                Term::num(1),
                Term::atom("n_a", TypeTag::Nonce),
                Term::atom("a", TypeTag::Agent),
            ]),
            Term::pk(Term::var("B#1", TypeTag::Agent)),
        );
        assert_eq!(semi.nodes[0].term, expected_first);
        let expected_second = Term::penc(
            Term::concat(vec![
                Term::num(2),
                Term::xor(vec![
                    Term::concat(vec![Term::tag("nonce"), Term::atom("n_a", TypeTag::Nonce)]),
                    Term::concat(vec![Term::tag("agent"), Term::atom("a", TypeTag::Agent)]),
                ]),
                Term::var("N_B#1", TypeTag::Nonce),
            ]),
            Term::pk(Term::atom("a", TypeTag::Agent)),
        );
        assert_eq!(semi.nodes[1].term, expected_second);
    }

    #[test]
    fn instantiate_with_empty_sigma_freshens_everything() {
        let role = tagged_role_a();
        let semi = instantiate_role(&role, &Substitution::empty(), "7").unwrap();
        let mut vars = BTreeSet::new();
        for n in &semi.nodes {
            n.term.collect_vars(&mut vars);
        }
        assert!(vars.iter().all(|v| v.name.ends_with("#7")));
    }

    #[test]
    fn ill_typed_honest_substitution_is_rejected() {
        let role = tagged_role_a();
        let sigma = Substitution::singleton(
            v("N_A", TypeTag::Nonce),
            Term::atom("b", TypeTag::Agent),
        );
        assert!(matches!(
            instantiate_role(&role, &sigma, "1"),
            Err(ProtocolError::IllTypedHonestSubstitution { .. })
        ));
    }

    #[test]
    fn unknown_variable_is_rejected() {
        let role = tagged_role_a();
        let sigma = Substitution::singleton(
            v("Z", TypeTag::Nonce),
            Term::atom("n", TypeTag::Nonce),
        );
        assert!(matches!(
            instantiate_role(&role, &sigma, "1"),
            Err(ProtocolError::UnknownVariable { .. })
        ));
    }

    fn bundle_of(strands: Vec<SemiStrand>, t0: Vec<Term>) -> SemiBundle {
        SemiBundle {
            strands,
            initial_knowledge: t0.into_iter().collect(),
            weak_keys: BTreeSet::new(),
            assoc_pairs: false,
        }
    }

    fn bare_strand(name: &str, nodes: Vec<Node>) -> SemiStrand {
        SemiStrand {
            role_name: name.into(),
            instance_name: name.into(),
            nodes,
            honest_sub: Substitution::empty(),
            self_agent: None,
            peer_agent: None,
            is_goal: false,
        }
    }

    #[test]
    fn single_receive_gives_one_sequence() {
        let s = bare_strand("r", vec![Node::recv(Term::var("X", TypeTag::Nonce))]);
        let t0 = vec![Term::attacker()];
        let (seqs, truncated) = constraint_sequences(&bundle_of(vec![s], t0.clone()), None);
        assert!(!truncated);
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].constraints.len(), 1);
        assert_eq!(seqs[0].constraints[0].knowledge, t0);
    }

    #[test]
    fn two_strands_interleave_into_two_sequences() {
        let sender = bare_strand("p", vec![Node::send(Term::atom("a", TypeTag::Agent))]);
        let receiver = bare_strand("q", vec![Node::recv(Term::var("A", TypeTag::Agent))]);
        let (seqs, _) =
            constraint_sequences(&bundle_of(vec![sender, receiver], vec![Term::attacker()]), None);
        assert_eq!(seqs.len(), 2);
        let sizes: BTreeSet<usize> =
            seqs.iter().map(|s| s.constraints[0].knowledge.len()).collect();
        // one sequence sees only T0, the other sees T0 plus the sent atom
        assert_eq!(sizes, BTreeSet::from([1, 2]));
    }

    #[test]
    fn knowledge_sets_are_monotone_and_originate_before_use() {
        let s1 = bare_strand(
            "p",
            vec![
                Node::send(Term::atom("a", TypeTag::Agent)),
                Node::recv(Term::var("X", TypeTag::Agent)),
                Node::send(Term::atom("b", TypeTag::Agent)),
            ],
        );
        let s2 = bare_strand(
            "q",
            vec![
                Node::recv(Term::var("Y", TypeTag::Agent)),
                Node::send(Term::atom("c", TypeTag::Agent)),
            ],
        );
        let bundle = bundle_of(vec![s1, s2], vec![Term::attacker()]);
        let (seqs, _) = constraint_sequences(&bundle, None);
        for seq in &seqs {
            for w in seq.constraints.windows(2) {
                let earlier: BTreeSet<&Term> = w[0].knowledge.iter().collect();
                let later: BTreeSet<&Term> = w[1].knowledge.iter().collect();
                assert!(earlier.is_subset(&later));
            }
            // every knowledge element beyond T0 was sent by an earlier + node
            let mut sent: BTreeSet<Term> = bundle.initial_knowledge.clone();
            let mut ci = 0;
            for &(s, n) in &seq.interleaving {
                let node = &bundle.strands[s].nodes[n];
                match node.sign {
                    Sign::Plus => {
                        sent.insert(node.term.clone());
                    }
                    Sign::Minus => {
                        for t in &seq.constraints[ci].knowledge {
                            assert!(sent.contains(t));
                        }
                        ci += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn normalize_splits_target_pairs() {
        let seq = ConstraintSequence {
            constraints: vec![Constraint::new(
                Term::concat(vec![
                    Term::atom("a", TypeTag::Agent),
                    Term::atom("b", TypeTag::Agent),
                ]),
                vec![Term::atom("c", TypeTag::Agent)],
            )],
            binding: Substitution::empty(),
            interleaving: vec![],
        };
        let n = normalize_sequence(&seq);
        assert_eq!(n.constraints.len(), 2);
        assert_eq!(n.constraints[0].target, Term::atom("a", TypeTag::Agent));
        assert_eq!(n.constraints[1].target, Term::atom("b", TypeTag::Agent));
    }

    #[test]
    fn normalize_splits_knowledge_pairs_and_is_idempotent() {
        let seq = ConstraintSequence {
            constraints: vec![Constraint::new(
                Term::var("X", TypeTag::Nonce),
                vec![Term::concat(vec![
                    Term::atom("a", TypeTag::Agent),
                    Term::atom("b", TypeTag::Agent),
                ])],
            )],
            binding: Substitution::empty(),
            interleaving: vec![],
        };
        let n = normalize_sequence(&seq);
        assert_eq!(
            n.constraints[0].knowledge,
            vec![Term::atom("a", TypeTag::Agent), Term::atom("b", TypeTag::Agent)]
        );
        assert_eq!(normalize_sequence(&n), n);
    }
}
