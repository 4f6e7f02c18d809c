//! Attack-trace documents: a machine-readable JSON form plus the
//! human-readable message rendering, and a reader that re-checks a trace's
//! substitution against its recorded constraint sequence.

use crate::analysis::{AnalysisConfig, AnalysisOutcome, AttackVerdict};
use crate::protocol::{Constraint, ConstraintSequence, SemiBundle, Sign};
use crate::solver::{solve, SolveContext, SolveOptions};
use crate::subst::Substitution;
use crate::term::{equal_mod_acun, Constant, Term};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictDoc {
    pub kind: String,
    pub exhausted: Option<bool>,
    pub sequence_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BindingDoc {
    pub var: String,
    pub ty: String,
    pub term: String,
    pub term_ast: Term,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageDoc {
    pub label: String,
    pub sender: String,
    pub receiver: String,
    pub spoofed: bool,
    pub term: String,
    pub term_ast: Term,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleStepDoc {
    pub rule: String,
    pub detail: String,
    pub subterm_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsDoc {
    pub states_expanded: u64,
    pub sequences_examined: usize,
    pub exhausted: bool,
    pub subterm_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintDoc {
    pub target: Term,
    pub knowledge: Vec<Term>,
}

/// The trace file format. Field order is fixed; XOR multisets and the
/// substitution are serialized in canonical order, so identical inputs
/// produce byte-identical documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceDocument {
    pub protocol: String,
    pub scenario: String,
    pub theory: String,
    pub rules: Vec<String>,
    pub verdict: VerdictDoc,
    pub substitution: Vec<BindingDoc>,
    pub messages: Vec<MessageDoc>,
    pub goals: Vec<String>,
    pub rule_trace: Vec<RuleStepDoc>,
    pub sequence: Vec<ConstraintDoc>,
    pub search_stats: StatsDoc,
}

fn agent_display(t: &Term, alias: Option<&str>) -> String {
    match t {
        Term::Constant(Constant::Attacker) => alias.unwrap_or("eps").to_string(),
        other => other.to_string(),
    }
}

fn is_attacker(t: &Term) -> bool {
    matches!(t, Term::Constant(Constant::Attacker))
}

/// Renders the attack interleaving as message lines. A counterpart session
/// is one whose self/peer mirror the sender's; when no counterpart
/// sends/receives the same instantiated term, the party is the intruder
/// wearing that agent's name.
fn render_messages(
    bundle: &SemiBundle,
    seq: &ConstraintSequence,
    sigma: &Substitution,
    alias: Option<&str>,
) -> (Vec<MessageDoc>, Vec<String>) {
    let mut messages = Vec::new();
    let mut goals = Vec::new();
    let norm = |t: &Term| -> Term {
        let t = sigma.apply(t);
        if bundle.assoc_pairs {
            t.flatten_concats().xor_normalize()
        } else {
            t
        }
    };

    struct Event {
        strand: usize,
        node: usize,
        term: Term,
    }
    let events: Vec<Event> = seq
        .interleaving
        .iter()
        .map(|&(s, n)| Event { strand: s, node: n, term: norm(&bundle.strands[s].nodes[n].term) })
        .collect();

    let counterpart_matches = |i: usize, want_sign: Sign, before: bool| -> bool {
        let me = &bundle.strands[events[i].strand];
        let (Some(self_a), Some(peer_a)) = (&me.self_agent, &me.peer_agent) else {
            return false;
        };
        events.iter().enumerate().any(|(j, e)| {
            if (before && j >= i) || (!before && j <= i) {
                return false;
            }
            let other = &bundle.strands[e.strand];
            if other.is_goal || bundle.strands[e.strand].nodes[e.node].sign != want_sign {
                return false;
            }
            other.self_agent.as_ref() == Some(peer_a)
                && other.peer_agent.as_ref() == Some(self_a)
                && equal_mod_acun(&e.term, &events[i].term)
        })
    };

    for (i, ev) in events.iter().enumerate() {
        let strand = &bundle.strands[ev.strand];
        if strand.is_goal {
            goals.push(format!("derived {}", ev.term));
            continue;
        }
        let label = format!("{}.{}", strand.instance_name, ev.node + 1);
        let self_name = strand
            .self_agent
            .as_ref()
            .map(|t| agent_display(t, alias))
            .unwrap_or_else(|| "?".into());
        let peer = strand.peer_agent.clone();
        let peer_name =
            peer.as_ref().map(|t| agent_display(t, alias)).unwrap_or_else(|| "?".into());
        let peer_is_attacker = peer.as_ref().is_some_and(is_attacker);
        let sign = strand.nodes[ev.node].sign;

        let (sender, receiver, spoofed) = match sign {
            Sign::Plus => {
                let honest = peer_is_attacker || counterpart_matches(i, Sign::Minus, false);
                let recv =
                    if honest { peer_name.clone() } else { format!("i({peer_name})") };
                (self_name.clone(), recv, !honest)
            }
            Sign::Minus => {
                let honest = peer_is_attacker || counterpart_matches(i, Sign::Plus, true);
                let send =
                    if honest { peer_name.clone() } else { format!("i({peer_name})") };
                (send, self_name.clone(), !honest)
            }
        };

        // replay annotation: a reception matching an earlier send from an
        // unrelated session
        let note = if sign == Sign::Minus {
            events[..i]
                .iter()
                .find(|e| {
                    let other = &bundle.strands[e.strand];
                    !other.is_goal
                        && e.strand != ev.strand
                        && bundle.strands[e.strand].nodes[e.node].sign == Sign::Plus
                        && equal_mod_acun(&e.term, &ev.term)
                })
                .map(|e| {
                    format!(
                        "replaying {}.{}",
                        bundle.strands[e.strand].instance_name,
                        e.node + 1
                    )
                })
        } else {
            None
        };

        messages.push(MessageDoc {
            label,
            sender,
            receiver,
            spoofed,
            term: ev.term.to_string(),
            term_ast: ev.term.clone(),
            note,
        });
    }
    (messages, goals)
}

/// Builds the trace document for an analysis outcome.
pub fn emit_trace(
    outcome: &AnalysisOutcome,
    bundle: &SemiBundle,
    protocol_name: &str,
    scenario_name: &str,
    cfg: &AnalysisConfig,
    attacker_alias: Option<&str>,
) -> TraceDocument {
    let (kind, exhausted, sequence_index, sigma, steps) = match &outcome.verdict {
        AttackVerdict::TypeFlawAttack { substitution, trace, sequence_index } => {
            ("type-flaw-attack", None, Some(*sequence_index), Some(substitution), Some(trace))
        }
        AttackVerdict::WellTypedAttackExists { substitution, trace, sequence_index } => {
            ("well-typed-attack", None, Some(*sequence_index), Some(substitution), Some(trace))
        }
        AttackVerdict::NoAttackWithinBounds { exhausted } => {
            ("no-attack-within-bounds", Some(*exhausted), None, None, None)
        }
    };

    let substitution = sigma
        .map(|s| {
            s.iter()
                .map(|(v, t)| BindingDoc {
                    var: v.name.clone(),
                    ty: v.ty.to_string(),
                    term: t.to_string(),
                    term_ast: t.clone(),
                })
                .collect()
        })
        .unwrap_or_default();

    let (messages, goals) = match (&outcome.sequence, sigma) {
        (Some(seq), Some(sigma)) => render_messages(bundle, seq, sigma, attacker_alias),
        _ => (Vec::new(), Vec::new()),
    };

    let rule_trace = steps
        .map(|tr| {
            tr.iter()
                .map(|s| RuleStepDoc {
                    rule: s.rule.clone(),
                    detail: s.detail.clone(),
                    subterm_ok: s.subterm_ok,
                })
                .collect()
        })
        .unwrap_or_default();

    let sequence = outcome
        .sequence
        .as_ref()
        .map(|seq| {
            seq.constraints
                .iter()
                .map(|c| ConstraintDoc { target: c.target.clone(), knowledge: c.knowledge.clone() })
                .collect()
        })
        .unwrap_or_default();

    TraceDocument {
        protocol: protocol_name.to_string(),
        scenario: scenario_name.to_string(),
        theory: cfg.theory.name().to_string(),
        rules: cfg.weaknesses.iter().map(|w| format!("{w:?}").to_lowercase()).collect(),
        verdict: VerdictDoc { kind: kind.into(), exhausted, sequence_index },
        substitution,
        messages,
        goals,
        rule_trace,
        sequence,
        search_stats: StatsDoc {
            states_expanded: outcome.stats.states_expanded,
            sequences_examined: outcome.sequences_examined,
            exhausted: match &outcome.verdict {
                AttackVerdict::NoAttackWithinBounds { exhausted } => *exhausted,
                _ => true,
            },
            subterm_violations: outcome.stats.subterm_violation_count,
        },
    }
}

pub fn to_json(doc: &TraceDocument) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("trace serializes");
    s.push('\n');
    s
}

pub fn read_trace(text: &str) -> Result<TraceDocument, serde_json::Error> {
    serde_json::from_str(text)
}

/// Human-readable rendering of the trace.
pub fn render_text(doc: &TraceDocument) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "protocol {} / scenario {}", doc.protocol, doc.scenario);
    let _ = writeln!(out, "verdict: {}", doc.verdict.kind);
    if let Some(ex) = doc.verdict.exhausted {
        let _ = writeln!(out, "search exhausted: {ex}");
    }
    if !doc.substitution.is_empty() {
        let bindings: Vec<String> =
            doc.substitution.iter().map(|b| format!("{}/{}", b.term, b.var)).collect();
        let _ = writeln!(out, "substitution: {{{}}}", bindings.join(", "));
    }
    for m in &doc.messages {
        let note = m.note.as_ref().map(|n| format!("   ({n})")).unwrap_or_default();
        let _ = writeln!(
            out,
            "Msg {label}. {s} -> {r} : {t}{note}",
            label = m.label,
            s = m.sender,
            r = m.receiver,
            t = m.term
        );
    }
    for g in &doc.goals {
        let _ = writeln!(out, "goal: {g}");
    }
    out
}

/// Re-checks a trace document: applying its substitution to its recorded
/// constraint sequence must leave a satisfiable sequence.
pub fn verify_trace(
    doc: &TraceDocument,
    opts: SolveOptions,
) -> Result<(), String> {
    if doc.sequence.is_empty() {
        return Ok(());
    }
    let sigma = Substitution::from_bindings(
        doc.substitution
            .iter()
            .map(|b| {
                (
                    crate::term::Variable {
                        name: b.var.clone(),
                        ty: parse_ty(&b.ty),
                    },
                    b.term_ast.clone(),
                )
            })
            .collect::<Vec<_>>(),
    )
    .map_err(|e| e.to_string())?;
    let seq = ConstraintSequence {
        constraints: doc
            .sequence
            .iter()
            .map(|c| Constraint { target: c.target.clone(), knowledge: c.knowledge.clone() })
            .collect(),
        binding: sigma,
        interleaving: Vec::new(),
    };
    let report = solve(&seq, &SolveContext::new(opts));
    if report.satisfiers.is_empty() {
        Err("recorded substitution does not satisfy the recorded sequence".into())
    } else {
        Ok(())
    }
}

fn parse_ty(s: &str) -> crate::term::TypeTag {
    // binding types in documents come from TypeTag::Display; only the base
    // names matter for re-application (structural types re-derive).
    match s {
        "agent" => crate::term::TypeTag::Agent,
        "nonce" => crate::term::TypeTag::Nonce,
        "key" => crate::term::TypeTag::Key,
        "num" => crate::term::TypeTag::Number,
        "attacker" => crate::term::TypeTag::AttackerName,
        _ => crate::term::TypeTag::Agent,
    }
}
