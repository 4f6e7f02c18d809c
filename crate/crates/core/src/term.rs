//! Message term algebra: terms, structural types, tag constants, subterm
//! structure and ACUN (XOR) normal forms.
//!
//! Terms are immutable values. Every constructor that can produce an XOR
//! node goes through [`Term::xor`], so any term observable outside this
//! module is in canonical ACUN normal form: XOR sums are flat, carry no
//! unity element, contain no element an even number of times, and are
//! ordered by the total structural term order.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Structural type of a term. Variables and atoms are declared with one of
/// the base types; composite terms get a type computed by [`Term::type_of`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TypeTag {
    Agent,
    Nonce,
    Key,
    Number,
    /// Type of the attacker name constant. Compatible with `Agent` for
    /// well-typedness checks: the attacker is an agent.
    AttackerName,
    /// Type of the reserved tag constants (`#nonce`, `#agent`, ...). Distinct
    /// from every payload type so tags never unify with protocol data.
    Tag,
    Pair(Vec<TypeTag>),
    Penc(Box<TypeTag>, Box<TypeTag>),
    Senc(Box<TypeTag>, Box<TypeTag>),
    HashT(Box<TypeTag>),
    SigT(Box<TypeTag>, Box<TypeTag>),
    /// Multiset of element types of an XOR sum, kept sorted.
    XorT(Vec<TypeTag>),
}

impl TypeTag {
    /// Type equality as used by well-typedness checks. `AttackerName` is
    /// compatible with `Agent`; everything else is structural.
    pub fn compatible(&self, other: &TypeTag) -> bool {
        use TypeTag::*;
        match (self, other) {
            (Agent, AttackerName) | (AttackerName, Agent) => true,
            (Pair(a), Pair(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.compatible(y))
            }
            (Penc(a1, k1), Penc(a2, k2)) | (Senc(a1, k1), Senc(a2, k2)) => {
                a1.compatible(a2) && k1.compatible(k2)
            }
            (HashT(a), HashT(b)) => a.compatible(b),
            (SigT(a1, k1), SigT(a2, k2)) => a1.compatible(a2) && k1.compatible(k2),
            (XorT(a), XorT(b)) => {
                // Multiset compatibility: a bijection between the element
                // types. Sizes are tiny, so backtracking is fine.
                fn matching(rest: &[TypeTag], pool: &mut Vec<Option<TypeTag>>) -> bool {
                    let Some((first, rest)) = rest.split_first() else {
                        return true;
                    };
                    for i in 0..pool.len() {
                        if let Some(cand) = pool[i].clone() {
                            if first.compatible(&cand) {
                                pool[i] = None;
                                if matching(rest, pool) {
                                    return true;
                                }
                                pool[i] = Some(cand);
                            }
                        }
                    }
                    false
                }
                a.len() == b.len()
                    && matching(a, &mut b.iter().cloned().map(Some).collect::<Vec<_>>())
            }
            _ => self == other,
        }
    }

    /// Name of the tag constant standing for this type: one tag per
    /// constructor, compound XOR tags joined with `⊕`.
    pub fn tag_name(&self) -> String {
        use TypeTag::*;
        match self {
            Agent | AttackerName => "agent".into(),
            Nonce => "nonce".into(),
            Key => "key".into(),
            Number => "num".into(),
            Tag => "tag".into(),
            Pair(_) => "pair".into(),
            Penc(_, _) => "penc".into(),
            Senc(_, _) => "senc".into(),
            HashT(_) => "hash".into(),
            SigT(_, _) => "sig".into(),
            XorT(elems) => {
                let names: Vec<String> = elems.iter().map(|t| t.tag_name()).collect();
                names.join("⊕")
            }
        }
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use TypeTag::*;
        match self {
            Agent => write!(f, "agent"),
            Nonce => write!(f, "nonce"),
            Key => write!(f, "key"),
            Number => write!(f, "num"),
            AttackerName => write!(f, "attacker"),
            Tag => write!(f, "tag"),
            Pair(ts) => {
                write!(f, "pair(")?;
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{t}")?;
                }
                write!(f, ")")
            }
            Penc(b, k) => write!(f, "penc({b},{k})"),
            Senc(b, k) => write!(f, "senc({b},{k})"),
            HashT(b) => write!(f, "hash({b})"),
            SigT(b, k) => write!(f, "sig({b},{k})"),
            XorT(ts) => {
                write!(f, "xor(")?;
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{t}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// A protocol variable with its declared type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub ty: TypeTag,
}

/// A named atomic value (nonce, agent name, key, ...).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub name: String,
    pub ty: TypeTag,
}

/// Constants: numerals, the XOR unity `0`, the attacker name and the
/// reserved `#`-prefixed tag constants.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Constant {
    Num(u64),
    Zero,
    Attacker,
    Tag(String),
}

impl Constant {
    pub fn type_of(&self) -> TypeTag {
        match self {
            Constant::Num(_) | Constant::Zero => TypeTag::Number,
            Constant::Attacker => TypeTag::AttackerName,
            Constant::Tag(_) => TypeTag::Tag,
        }
    }
}

/// A symbolic message.
///
/// The derived `Ord` (variant order, then recursive lexicographic) is the
/// total structural term order used to canonicalize XOR multisets, so
/// equality modulo AC is plain `==` on normal forms.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Term {
    Variable(Variable),
    Constant(Constant),
    Atom(Atom),
    Concat(Vec<Term>),
    PublicKey(Box<Term>),
    SharedKey(Box<Term>, Box<Term>),
    AsymEnc { body: Box<Term>, key: Box<Term> },
    SymEnc { body: Box<Term>, key: Box<Term> },
    Hash(Box<Term>),
    Signature { body: Box<Term>, key: Box<Term> },
    Xor(Vec<Term>),
}

impl Term {
    pub fn var(name: impl Into<String>, ty: TypeTag) -> Term {
        Term::Variable(Variable { name: name.into(), ty })
    }

    pub fn atom(name: impl Into<String>, ty: TypeTag) -> Term {
        Term::Atom(Atom { name: name.into(), ty })
    }

    pub fn num(n: u64) -> Term {
        Term::Constant(Constant::Num(n))
    }

    pub fn zero() -> Term {
        Term::Constant(Constant::Zero)
    }

    pub fn attacker() -> Term {
        Term::Constant(Constant::Attacker)
    }

    pub fn tag(name: impl Into<String>) -> Term {
        Term::Constant(Constant::Tag(name.into()))
    }

    /// Flat n-ary concatenation, n >= 2.
    pub fn concat(elems: Vec<Term>) -> Term {
        debug_assert!(elems.len() >= 2, "Concat needs at least two elements");
        Term::Concat(elems)
    }

    pub fn pk(agent: Term) -> Term {
        Term::PublicKey(Box::new(agent))
    }

    pub fn sh(a: Term, b: Term) -> Term {
        Term::SharedKey(Box::new(a), Box::new(b))
    }

    pub fn penc(body: Term, key: Term) -> Term {
        Term::AsymEnc { body: Box::new(body), key: Box::new(key) }
    }

    pub fn senc(body: Term, key: Term) -> Term {
        Term::SymEnc { body: Box::new(body), key: Box::new(key) }
    }

    pub fn hash(body: Term) -> Term {
        Term::Hash(Box::new(body))
    }

    pub fn sig(body: Term, key: Term) -> Term {
        Term::Signature { body: Box::new(body), key: Box::new(key) }
    }

    /// XOR sum in canonical form: flattened, unity-free, pairwise
    /// cancellation by multiset parity, elements sorted.
    pub fn xor(elems: Vec<Term>) -> Term {
        let mut parity: BTreeMap<Term, bool> = BTreeMap::new();
        fn add(parity: &mut BTreeMap<Term, bool>, t: Term) {
            match t {
                Term::Xor(inner) => {
                    for e in inner {
                        add(parity, e);
                    }
                }
                Term::Constant(Constant::Zero) => {}
                other => {
                    let slot = parity.entry(other).or_insert(false);
                    *slot = !*slot;
                }
            }
        }
        for e in elems {
            add(&mut parity, e);
        }
        let mut survivors: Vec<Term> =
            parity.into_iter().filter(|(_, odd)| *odd).map(|(t, _)| t).collect();
        match survivors.len() {
            0 => Term::zero(),
            1 => survivors.pop().unwrap(),
            _ => Term::Xor(survivors),
        }
    }

    /// Recursively rewrites every XOR node to canonical ACUN normal form.
    /// Idempotent and invariant under permutation and re-grouping of XOR
    /// elements.
    pub fn xor_normalize(&self) -> Term {
        match self {
            Term::Variable(_) | Term::Constant(_) | Term::Atom(_) => self.clone(),
            Term::Concat(es) => Term::Concat(es.iter().map(|e| e.xor_normalize()).collect()),
            Term::PublicKey(a) => Term::pk(a.xor_normalize()),
            Term::SharedKey(a, b) => Term::sh(a.xor_normalize(), b.xor_normalize()),
            Term::AsymEnc { body, key } => Term::penc(body.xor_normalize(), key.xor_normalize()),
            Term::SymEnc { body, key } => Term::senc(body.xor_normalize(), key.xor_normalize()),
            Term::Hash(b) => Term::hash(b.xor_normalize()),
            Term::Signature { body, key } => Term::sig(body.xor_normalize(), key.xor_normalize()),
            Term::Xor(es) => Term::xor(es.iter().map(|e| e.xor_normalize()).collect()),
        }
    }

    /// Structural type. Total on ground and semi-terms; variables report
    /// their declared type.
    pub fn type_of(&self) -> TypeTag {
        match self {
            Term::Variable(v) => v.ty.clone(),
            Term::Atom(a) => a.ty.clone(),
            Term::Constant(c) => c.type_of(),
            Term::Concat(es) => TypeTag::Pair(es.iter().map(|e| e.type_of()).collect()),
            Term::PublicKey(_) | Term::SharedKey(_, _) => TypeTag::Key,
            Term::AsymEnc { body, key } => {
                TypeTag::Penc(Box::new(body.type_of()), Box::new(key.type_of()))
            }
            Term::SymEnc { body, key } => {
                TypeTag::Senc(Box::new(body.type_of()), Box::new(key.type_of()))
            }
            Term::Hash(b) => TypeTag::HashT(Box::new(b.type_of())),
            Term::Signature { body, key } => {
                TypeTag::SigT(Box::new(body.type_of()), Box::new(key.type_of()))
            }
            Term::Xor(es) => {
                let mut tys: Vec<TypeTag> = es.iter().map(|e| e.type_of()).collect();
                tys.sort();
                TypeTag::XorT(tys)
            }
        }
    }

    /// Subterm relation. Keys of encryptions and signatures, and the
    /// arguments of pk/sh, are deliberately not subterms.
    pub fn is_subterm(&self, of: &Term) -> bool {
        if self == of {
            return true;
        }
        match of {
            Term::Concat(es) | Term::Xor(es) => es.iter().any(|e| self.is_subterm(e)),
            Term::AsymEnc { body, .. }
            | Term::SymEnc { body, .. }
            | Term::Signature { body, .. } => self.is_subterm(body),
            Term::Hash(b) => self.is_subterm(b),
            _ => false,
        }
    }

    pub fn is_variable(&self) -> bool {
        matches!(self, Term::Variable(_))
    }

    pub fn contains_xor(&self) -> bool {
        match self {
            Term::Xor(_) => true,
            Term::Variable(_) | Term::Constant(_) | Term::Atom(_) => false,
            Term::Concat(es) => es.iter().any(|e| e.contains_xor()),
            Term::PublicKey(a) => a.contains_xor(),
            Term::SharedKey(a, b) => a.contains_xor() || b.contains_xor(),
            Term::AsymEnc { body, key }
            | Term::SymEnc { body, key }
            | Term::Signature { body, key } => body.contains_xor() || key.contains_xor(),
            Term::Hash(b) => b.contains_xor(),
        }
    }

    /// All variables occurring in the term.
    pub fn vars(&self) -> BTreeSet<Variable> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    pub(crate) fn collect_vars(&self, out: &mut BTreeSet<Variable>) {
        match self {
            Term::Variable(v) => {
                out.insert(v.clone());
            }
            Term::Constant(_) | Term::Atom(_) => {}
            Term::Concat(es) | Term::Xor(es) => {
                for e in es {
                    e.collect_vars(out);
                }
            }
            Term::PublicKey(a) => a.collect_vars(out),
            Term::SharedKey(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Term::AsymEnc { body, key }
            | Term::SymEnc { body, key }
            | Term::Signature { body, key } => {
                body.collect_vars(out);
                key.collect_vars(out);
            }
            Term::Hash(b) => b.collect_vars(out),
        }
    }

    pub fn contains_var(&self, v: &Variable) -> bool {
        match self {
            Term::Variable(w) => w == v,
            Term::Constant(_) | Term::Atom(_) => false,
            Term::Concat(es) | Term::Xor(es) => es.iter().any(|e| e.contains_var(v)),
            Term::PublicKey(a) => a.contains_var(v),
            Term::SharedKey(a, b) => a.contains_var(v) || b.contains_var(v),
            Term::AsymEnc { body, key }
            | Term::SymEnc { body, key }
            | Term::Signature { body, key } => body.contains_var(v) || key.contains_var(v),
            Term::Hash(b) => b.contains_var(v),
        }
    }

    /// `[#tag, payload]` shape test: a two-element concatenation whose first
    /// element is a tag constant.
    pub fn as_tagged_pair(&self) -> Option<(&str, &Term)> {
        if let Term::Concat(es) = self {
            if es.len() == 2 {
                if let Term::Constant(Constant::Tag(name)) = &es[0] {
                    return Some((name, &es[1]));
                }
            }
        }
        None
    }

    /// Splices nested concatenations into their parent, recursively. This is
    /// the re-bracketing model of associative pairing (the `assoc-pairs`
    /// option); it is not applied unless that option is on.
    pub fn flatten_concats(&self) -> Term {
        match self {
            Term::Variable(_) | Term::Constant(_) | Term::Atom(_) => self.clone(),
            Term::Concat(es) => {
                let mut out = Vec::new();
                for e in es {
                    match e.flatten_concats() {
                        Term::Concat(inner) => out.extend(inner),
                        other => out.push(other),
                    }
                }
                if out.len() == 1 {
                    out.pop().unwrap()
                } else {
                    Term::Concat(out)
                }
            }
            Term::PublicKey(a) => Term::pk(a.flatten_concats()),
            Term::SharedKey(a, b) => Term::sh(a.flatten_concats(), b.flatten_concats()),
            Term::AsymEnc { body, key } => {
                Term::penc(body.flatten_concats(), key.flatten_concats())
            }
            Term::SymEnc { body, key } => {
                Term::senc(body.flatten_concats(), key.flatten_concats())
            }
            Term::Hash(b) => Term::hash(b.flatten_concats()),
            Term::Signature { body, key } => {
                Term::sig(body.flatten_concats(), key.flatten_concats())
            }
            Term::Xor(es) => Term::xor(es.iter().map(|e| e.flatten_concats()).collect()),
        }
    }

    /// Collects every compound term (encryptions, hashes, signatures)
    /// occurring in the term, recursively, in pre-order.
    pub fn compound_terms(&self) -> Vec<Term> {
        let mut out = Vec::new();
        self.collect_compounds(&mut out);
        out
    }

    fn collect_compounds(&self, out: &mut Vec<Term>) {
        match self {
            Term::AsymEnc { body, key } | Term::SymEnc { body, key } => {
                out.push(self.clone());
                body.collect_compounds(out);
                key.collect_compounds(out);
            }
            Term::Signature { body, key } => {
                out.push(self.clone());
                body.collect_compounds(out);
                key.collect_compounds(out);
            }
            Term::Hash(b) => {
                out.push(self.clone());
                b.collect_compounds(out);
            }
            Term::Concat(es) | Term::Xor(es) => {
                for e in es {
                    e.collect_compounds(out);
                }
            }
            Term::PublicKey(a) => a.collect_compounds(out),
            Term::SharedKey(a, b) => {
                a.collect_compounds(out);
                b.collect_compounds(out);
            }
            Term::Variable(_) | Term::Constant(_) | Term::Atom(_) => {}
        }
    }
}

/// Two terms equal modulo the ACUN equations.
pub fn equal_mod_acun(a: &Term, b: &Term) -> bool {
    a.xor_normalize() == b.xor_normalize()
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Variable(v) => write!(f, "{}", v.name),
            Term::Atom(a) => write!(f, "{}", a.name),
            Term::Constant(Constant::Num(n)) => write!(f, "{n}"),
            Term::Constant(Constant::Zero) => write!(f, "0"),
            Term::Constant(Constant::Attacker) => write!(f, "eps"),
            Term::Constant(Constant::Tag(t)) => write!(f, "#{t}"),
            Term::Concat(es) => {
                write!(f, "[")?;
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{e}")?;
                }
                write!(f, "]")
            }
            Term::PublicKey(a) => write!(f, "pk({a})"),
            Term::SharedKey(a, b) => write!(f, "sh({a},{b})"),
            Term::AsymEnc { body, key } => write!(f, "penc({body};{key})"),
            Term::SymEnc { body, key } => write!(f, "senc({body};{key})"),
            Term::Hash(b) => write!(f, "h({b})"),
            Term::Signature { body, key } => write!(f, "sig({body};{key})"),
            Term::Xor(es) => {
                write!(f, "xor(")?;
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{e}")?;
                }
                write!(f, ")")
            }
        }
    }
}
