//! Line-oriented concrete syntax for protocols and scenarios, plus the
//! pretty-printer. `--` starts a comment; terms follow the shared grammar
//! (`[t1,...,tn]`, `penc(t;k)`, `senc(t;k)`, `pk(A)`, `sh(A,B)`, `h(t)`,
//! `sig(t;k)`, `xor(t1,...,tn)`, `#tag`, numerals, `eps`, literal `0`).

use crate::analysis::TheoryChoice;
use crate::protocol::{
    instantiate_role, Node, Protocol, ProtocolError, SemiBundle, SemiStrand, Sign, Strand,
};
use crate::subst::Substitution;
use crate::term::{Constant, Term, TypeTag, Variable};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: undeclared identifier `{name}`")]
    UndeclaredIdentifier { line: usize, col: usize, name: String },
    #[error("{line}:{col}: declaration of `{name}` is missing a type annotation")]
    TypeAnnotationMissing { line: usize, col: usize, name: String },
    #[error("{line}:{col}: unknown role `{name}`")]
    UnknownRole { line: usize, col: usize, name: String },
    #[error("{line}:{col}: {msg}")]
    Conflict { line: usize, col: usize, msg: String },
    #[error("instance `{instance}`: {source}")]
    Instantiation { instance: String, source: ProtocolError },
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, col, msg: msg.into() }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Number(u64),
    Tag(String),
    LBracket,
    RBracket,
    LParen,
    RParen,
    Comma,
    Semi,
    Colon,
    Eq,
}

struct Cursor {
    toks: Vec<(Tok, usize)>,
    idx: usize,
    line: usize,
    end_col: usize,
}

impl Cursor {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|(t, _)| t)
    }
    fn col(&self) -> usize {
        self.toks.get(self.idx).map(|(_, c)| *c).unwrap_or(self.end_col)
    }
    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.idx).map(|(t, _)| t.clone());
        if t.is_some() {
            self.idx += 1;
        }
        t
    }
    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        let col = self.col();
        match self.next() {
            Some(t) if t == want => Ok(()),
            _ => Err(syntax(self.line, col, format!("expected {what}"))),
        }
    }
    fn expect_ident(&mut self, what: &str) -> Result<(String, usize), ParseError> {
        let col = self.col();
        match self.next() {
            Some(Tok::Ident(s)) => Ok((s, col)),
            _ => Err(syntax(self.line, col, format!("expected {what}"))),
        }
    }
    fn at_end(&self) -> bool {
        self.idx >= self.toks.len()
    }
    fn expect_end(&self) -> Result<(), ParseError> {
        if self.at_end() {
            Ok(())
        } else {
            Err(syntax(self.line, self.col(), "unexpected trailing input"))
        }
    }
}

fn tokenize(line_no: usize, line: &str) -> Result<Cursor, ParseError> {
    let mut toks = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    let is_ident_char =
        |c: char| c.is_alphanumeric() || c == '_' || c == '\'' || c == '-' || c == '⊕';
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            ' ' | '\t' => i += 1,
            '[' => {
                toks.push((Tok::LBracket, col));
                i += 1;
            }
            ']' => {
                toks.push((Tok::RBracket, col));
                i += 1;
            }
            '(' => {
                toks.push((Tok::LParen, col));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, col));
                i += 1;
            }
            ',' => {
                toks.push((Tok::Comma, col));
                i += 1;
            }
            ';' => {
                toks.push((Tok::Semi, col));
                i += 1;
            }
            ':' => {
                toks.push((Tok::Colon, col));
                i += 1;
            }
            '=' => {
                toks.push((Tok::Eq, col));
                i += 1;
            }
            '#' => {
                i += 1;
                let start = i;
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                if start == i {
                    return Err(syntax(line_no, col, "empty tag constant after `#`"));
                }
                toks.push((Tok::Tag(chars[start..i].iter().collect()), col));
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let n = text
                    .parse::<u64>()
                    .map_err(|_| syntax(line_no, col, "numeral out of range"))?;
                toks.push((Tok::Number(n), col));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                toks.push((Tok::Ident(chars[start..i].iter().collect()), col));
            }
            other => return Err(syntax(line_no, col, format!("unexpected character `{other}`"))),
        }
    }
    Ok(Cursor { toks, idx: 0, line: line_no, end_col: chars.len() + 1 })
}

fn strip_comment(line: &str) -> &str {
    match line.find("--") {
        Some(p) => &line[..p],
        None => line,
    }
}

fn parse_type(cx: &mut Cursor) -> Result<TypeTag, ParseError> {
    let (name, col) = cx.expect_ident("a type name")?;
    let simple = |t: TypeTag| -> Result<TypeTag, ParseError> { Ok(t) };
    match name.as_str() {
        "agent" => simple(TypeTag::Agent),
        "nonce" => simple(TypeTag::Nonce),
        "key" => simple(TypeTag::Key),
        "num" => simple(TypeTag::Number),
        "attacker" => simple(TypeTag::AttackerName),
        "tag" => simple(TypeTag::Tag),
        "pair" | "xor" => {
            cx.expect(Tok::LParen, "`(`")?;
            let mut elems = vec![parse_type(cx)?];
            while cx.peek() == Some(&Tok::Comma) {
                cx.next();
                elems.push(parse_type(cx)?);
            }
            cx.expect(Tok::RParen, "`)`")?;
            if name == "pair" {
                Ok(TypeTag::Pair(elems))
            } else {
                elems.sort();
                Ok(TypeTag::XorT(elems))
            }
        }
        "penc" | "senc" | "sig" => {
            cx.expect(Tok::LParen, "`(`")?;
            let a = parse_type(cx)?;
            cx.expect(Tok::Comma, "`,`")?;
            let b = parse_type(cx)?;
            cx.expect(Tok::RParen, "`)`")?;
            Ok(match name.as_str() {
                "penc" => TypeTag::Penc(Box::new(a), Box::new(b)),
                "senc" => TypeTag::Senc(Box::new(a), Box::new(b)),
                _ => TypeTag::SigT(Box::new(a), Box::new(b)),
            })
        }
        "hash" => {
            cx.expect(Tok::LParen, "`(`")?;
            let a = parse_type(cx)?;
            cx.expect(Tok::RParen, "`)`")?;
            Ok(TypeTag::HashT(Box::new(a)))
        }
        other => Err(syntax(cx.line, col, format!("unknown type `{other}`"))),
    }
}

type Resolver<'a> = dyn FnMut(&str, usize, usize) -> Result<Term, ParseError> + 'a;

fn parse_term(cx: &mut Cursor, resolve: &mut Resolver) -> Result<Term, ParseError> {
    let col = cx.col();
    match cx.next() {
        Some(Tok::Number(0)) => Ok(Term::zero()),
        Some(Tok::Number(n)) => Ok(Term::num(n)),
        Some(Tok::Tag(t)) => Ok(Term::tag(t)),
        Some(Tok::LBracket) => {
            let mut elems = vec![parse_term(cx, resolve)?];
            while cx.peek() == Some(&Tok::Comma) {
                cx.next();
                elems.push(parse_term(cx, resolve)?);
            }
            cx.expect(Tok::RBracket, "`]`")?;
            if elems.len() < 2 {
                return Err(syntax(cx.line, col, "a concatenation needs at least two elements"));
            }
            Ok(Term::concat(elems))
        }
        Some(Tok::Ident(name)) => match name.as_str() {
            "eps" => Ok(Term::attacker()),
            "penc" | "senc" | "sig" => {
                cx.expect(Tok::LParen, "`(`")?;
                let body = parse_term(cx, resolve)?;
                cx.expect(Tok::Semi, "`;` between body and key")?;
                let key = parse_term(cx, resolve)?;
                cx.expect(Tok::RParen, "`)`")?;
                Ok(match name.as_str() {
                    "penc" => Term::penc(body, key),
                    "senc" => Term::senc(body, key),
                    _ => Term::sig(body, key),
                })
            }
            "pk" => {
                cx.expect(Tok::LParen, "`(`")?;
                let agent = parse_term(cx, resolve)?;
                cx.expect(Tok::RParen, "`)`")?;
                require_agent(&agent, cx.line, col)?;
                Ok(Term::pk(agent))
            }
            "sh" | "passwd" => {
                cx.expect(Tok::LParen, "`(`")?;
                let a = parse_term(cx, resolve)?;
                cx.expect(Tok::Comma, "`,`")?;
                let b = parse_term(cx, resolve)?;
                cx.expect(Tok::RParen, "`)`")?;
                require_agent(&a, cx.line, col)?;
                require_agent(&b, cx.line, col)?;
                Ok(Term::sh(a, b))
            }
            "h" => {
                cx.expect(Tok::LParen, "`(`")?;
                let body = parse_term(cx, resolve)?;
                cx.expect(Tok::RParen, "`)`")?;
                Ok(Term::hash(body))
            }
            "xor" => {
                cx.expect(Tok::LParen, "`(`")?;
                let mut elems = vec![parse_term(cx, resolve)?];
                while cx.peek() == Some(&Tok::Comma) {
                    cx.next();
                    elems.push(parse_term(cx, resolve)?);
                }
                cx.expect(Tok::RParen, "`)`")?;
                Ok(Term::xor(elems))
            }
            other => resolve(other, cx.line, col),
        },
        _ => Err(syntax(cx.line, col, "expected a term")),
    }
}

fn require_agent(t: &Term, line: usize, col: usize) -> Result<(), ParseError> {
    let ok = match t {
        Term::Variable(v) => v.ty == TypeTag::Agent,
        Term::Atom(a) => a.ty == TypeTag::Agent,
        Term::Constant(Constant::Attacker) => true,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(ParseError::Conflict {
            line,
            col,
            msg: format!("key argument `{t}` must be an agent variable or atom"),
        })
    }
}

fn is_uppercase_name(name: &str) -> bool {
    name.chars().next().is_some_and(|c| c.is_ascii_uppercase())
}

/// Parses a protocol description: typed variable declarations followed by
/// named roles listing `send`/`recv` messages. Terms are parametric.
pub fn parse_protocol(text: &str) -> Result<Protocol, ParseError> {
    let mut name: Option<String> = None;
    let mut decls: BTreeMap<String, TypeTag> = BTreeMap::new();
    let mut roles: Vec<Strand> = Vec::new();
    let mut current: Option<Strand> = None;

    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let mut cx = tokenize(line_no, line)?;
        let (head, head_col) = cx.expect_ident("a directive")?;
        match head.as_str() {
            "protocol" => {
                let (n, _) = cx.expect_ident("the protocol name")?;
                cx.expect_end()?;
                name = Some(n);
            }
            "var" => {
                let mut names = Vec::new();
                loop {
                    let (n, c) = cx.expect_ident("a variable name")?;
                    if !is_uppercase_name(&n) {
                        return Err(syntax(line_no, c, "variable names start uppercase"));
                    }
                    names.push((n, c));
                    match cx.peek() {
                        Some(Tok::Comma) => {
                            cx.next();
                        }
                        Some(Tok::Colon) => break,
                        _ => {
                            let (n, c) = names.last().cloned().unwrap();
                            return Err(ParseError::TypeAnnotationMissing {
                                line: line_no,
                                col: c,
                                name: n,
                            });
                        }
                    }
                }
                cx.expect(Tok::Colon, "`:`")?;
                let ty = parse_type(&mut cx)?;
                cx.expect_end()?;
                for (n, c) in names {
                    if decls.insert(n.clone(), ty.clone()).is_some() {
                        return Err(ParseError::Conflict {
                            line: line_no,
                            col: c,
                            msg: format!("variable `{n}` declared twice"),
                        });
                    }
                }
            }
            "role" => {
                if let Some(done) = current.take() {
                    roles.push(done);
                }
                let (n, c) = cx.expect_ident("the role name")?;
                cx.expect(Tok::Colon, "`:`")?;
                cx.expect_end()?;
                if !decls.contains_key(&n) {
                    return Err(ParseError::UndeclaredIdentifier {
                        line: line_no,
                        col: c,
                        name: n,
                    });
                }
                current = Some(Strand { role_name: n, nodes: Vec::new() });
            }
            "send" | "recv" => {
                let Some(role) = current.as_mut() else {
                    return Err(syntax(line_no, head_col, "message outside of a role block"));
                };
                let mut resolve = |n: &str, l: usize, c: usize| -> Result<Term, ParseError> {
                    match decls.get(n) {
                        Some(ty) => Ok(Term::var(n, ty.clone())),
                        None => Err(ParseError::UndeclaredIdentifier {
                            line: l,
                            col: c,
                            name: n.into(),
                        }),
                    }
                };
                let term = parse_term(&mut cx, &mut resolve)?;
                cx.expect_end()?;
                let term = term.xor_normalize();
                role.nodes.push(if head == "send" {
                    Node::send(term)
                } else {
                    Node::recv(term)
                });
            }
            other => {
                return Err(syntax(line_no, head_col, format!("unknown directive `{other}`")))
            }
        }
    }
    if let Some(done) = current.take() {
        roles.push(done);
    }
    let Some(name) = name else {
        return Err(syntax(1, 1, "missing `protocol <name>` header"));
    };
    if roles.is_empty() {
        return Err(syntax(1, 1, "protocol has no roles"));
    }
    Ok(Protocol { name, roles })
}

/// One `instance` line of a scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceDecl {
    pub name: String,
    pub role: String,
    pub bindings: Vec<(String, Term)>,
}

/// Parsed scenario: session instances with honest substitutions, goals,
/// knowledge additions, weak-key marks and options.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioSource {
    pub name: String,
    pub protocol_name: String,
    pub attacker_alias: Option<String>,
    pub agents: Vec<String>,
    pub instances: Vec<InstanceDecl>,
    pub secrecy_goals: Vec<Term>,
    pub knows: Vec<Term>,
    pub weak_keys: Vec<Term>,
    pub assoc_pairs: bool,
    pub theory: Option<TheoryChoice>,
}

/// Parses a scenario against an already parsed protocol. Atom types are
/// inferred from the variables they instantiate; the attacker alias parses
/// to the attacker constant.
pub fn parse_scenario(text: &str, protocol: &Protocol) -> Result<ScenarioSource, ParseError> {
    let mut var_types: BTreeMap<String, TypeTag> = BTreeMap::new();
    for role in &protocol.roles {
        for node in &role.nodes {
            for v in node.term.vars() {
                var_types.insert(v.name.clone(), v.ty.clone());
            }
        }
    }

    let mut name = None;
    let mut protocol_name = None;
    let mut attacker_alias: Option<String> = None;
    let mut agents: Vec<String> = Vec::new();
    let mut atom_types: BTreeMap<String, TypeTag> = BTreeMap::new();
    let mut instances: Vec<InstanceDecl> = Vec::new();
    let mut secrecy_goals = Vec::new();
    let mut knows = Vec::new();
    let mut weak_keys = Vec::new();
    let mut assoc_pairs = false;
    let mut theory = None;

    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let mut cx = tokenize(line_no, line)?;
        let (head, head_col) = cx.expect_ident("a directive")?;

        // ground-term resolver over the scenario's atoms
        macro_rules! resolver {
            ($expected:expr) => {
                |n: &str, l: usize, c: usize| -> Result<Term, ParseError> {
                    if Some(n) == attacker_alias.as_deref() {
                        return Ok(Term::attacker());
                    }
                    if is_uppercase_name(n) {
                        return Err(ParseError::Conflict {
                            line: l,
                            col: c,
                            msg: format!("`{n}` is a variable; scenario terms are ground"),
                        });
                    }
                    let expected: Option<&TypeTag> = $expected;
                    match (atom_types.get(n), expected) {
                        (Some(ty), Some(want)) if !ty.compatible(want) => {
                            Err(ParseError::Conflict {
                                line: l,
                                col: c,
                                msg: format!(
                                    "atom `{n}` already has type {ty}, needed {want}"
                                ),
                            })
                        }
                        (Some(ty), _) => Ok(Term::atom(n, ty.clone())),
                        (None, Some(want)) => Ok(Term::atom(n, want.clone())),
                        (None, None) => Err(ParseError::UndeclaredIdentifier {
                            line: l,
                            col: c,
                            name: n.into(),
                        }),
                    }
                }
            };
        }

        match head.as_str() {
            "scenario" => {
                let (n, _) = cx.expect_ident("the scenario name")?;
                let (kw, c) = cx.expect_ident("`for`")?;
                if kw != "for" {
                    return Err(syntax(line_no, c, "expected `for`"));
                }
                let (p, _) = cx.expect_ident("the protocol name")?;
                cx.expect_end()?;
                name = Some(n);
                protocol_name = Some(p);
            }
            "attacker" => {
                let (n, _) = cx.expect_ident("the attacker's name")?;
                cx.expect_end()?;
                attacker_alias = Some(n);
            }
            "agents" => loop {
                let (n, _) = cx.expect_ident("an agent name")?;
                atom_types.insert(n.clone(), TypeTag::Agent);
                agents.push(n);
                match cx.peek() {
                    Some(Tok::Comma) => {
                        cx.next();
                    }
                    None => break,
                    _ => return Err(syntax(line_no, cx.col(), "expected `,`")),
                }
            },
            "instance" => {
                let (iname, _) = cx.expect_ident("the instance name")?;
                cx.expect(Tok::Colon, "`:`")?;
                let (kw, c) = cx.expect_ident("`role`")?;
                if kw != "role" {
                    return Err(syntax(line_no, c, "expected `role`"));
                }
                let (rname, rcol) = cx.expect_ident("the role name")?;
                if protocol.role(&rname).is_none() {
                    return Err(ParseError::UnknownRole {
                        line: line_no,
                        col: rcol,
                        name: rname,
                    });
                }
                cx.expect(Tok::LBracket, "`[`")?;
                let mut bindings = Vec::new();
                if cx.peek() != Some(&Tok::RBracket) {
                    loop {
                        let (vname, vcol) = cx.expect_ident("a variable name")?;
                        let Some(vty) = var_types.get(&vname).cloned() else {
                            return Err(ParseError::UndeclaredIdentifier {
                                line: line_no,
                                col: vcol,
                                name: vname,
                            });
                        };
                        cx.expect(Tok::Eq, "`=`")?;
                        let want = vty.clone();
                        let term = parse_term(&mut cx, &mut resolver!(Some(&want)))?;
                        if let Term::Atom(at) = &term {
                            atom_types.entry(at.name.clone()).or_insert(at.ty.clone());
                        }
                        bindings.push((vname, term));
                        match cx.peek() {
                            Some(Tok::Comma) => {
                                cx.next();
                            }
                            Some(Tok::RBracket) => break,
                            _ => return Err(syntax(line_no, cx.col(), "expected `,` or `]`")),
                        }
                    }
                }
                cx.expect(Tok::RBracket, "`]`")?;
                cx.expect_end()?;
                instances.push(InstanceDecl { name: iname, role: rname, bindings });
            }
            "goal" => {
                let (kind, c) = cx.expect_ident("a goal kind")?;
                if kind != "secrecy" {
                    return Err(syntax(line_no, c, "only `secrecy` goals are supported"));
                }
                let term = parse_term(&mut cx, &mut resolver!(None))?;
                cx.expect_end()?;
                secrecy_goals.push(term);
            }
            "know" => {
                let term = parse_term(&mut cx, &mut resolver!(None))?;
                cx.expect_end()?;
                knows.push(term);
            }
            "weak" => {
                let term = parse_term(&mut cx, &mut resolver!(None))?;
                cx.expect_end()?;
                weak_keys.push(term);
            }
            "option" => {
                let (opt, c) = cx.expect_ident("an option name")?;
                cx.expect_end()?;
                match opt.as_str() {
                    "assoc-pairs" => assoc_pairs = true,
                    other => {
                        return Err(syntax(line_no, c, format!("unknown option `{other}`")))
                    }
                }
            }
            "theory" => {
                let (t, c) = cx.expect_ident("a theory name")?;
                cx.expect_end()?;
                theory = Some(match t.as_str() {
                    "std" => TheoryChoice::Std,
                    "acun" => TheoryChoice::Acun,
                    "acu" => TheoryChoice::Acu,
                    "acuidem" => TheoryChoice::AcuIdem,
                    "ag" => TheoryChoice::Ag,
                    other => {
                        return Err(syntax(line_no, c, format!("unknown theory `{other}`")))
                    }
                });
            }
            other => {
                return Err(syntax(line_no, head_col, format!("unknown directive `{other}`")))
            }
        }
    }

    let Some(name) = name else {
        return Err(syntax(1, 1, "missing `scenario <name> for <protocol>` header"));
    };
    Ok(ScenarioSource {
        name,
        protocol_name: protocol_name.unwrap_or_default(),
        attacker_alias,
        agents,
        instances,
        secrecy_goals,
        knows,
        weak_keys,
        assoc_pairs,
        theory,
    })
}

fn collect_constants(t: &Term, out: &mut BTreeSet<Term>) {
    match t {
        Term::Constant(Constant::Num(_)) | Term::Constant(Constant::Tag(_)) => {
            out.insert(t.clone());
        }
        Term::Concat(es) | Term::Xor(es) => es.iter().for_each(|e| collect_constants(e, out)),
        Term::AsymEnc { body, key }
        | Term::SymEnc { body, key }
        | Term::Signature { body, key } => {
            collect_constants(body, out);
            collect_constants(key, out);
        }
        Term::Hash(b) => collect_constants(b, out),
        Term::PublicKey(a) => collect_constants(a, out),
        Term::SharedKey(a, b) => {
            collect_constants(a, out);
            collect_constants(b, out);
        }
        _ => {}
    }
}

impl ScenarioSource {
    /// Builds the semi-bundle: instantiates each declared session, appends
    /// goal strands, and assembles the attacker's initial knowledge
    /// (attacker name and key material, public data, constants, plus
    /// explicit `know` additions).
    pub fn build(&self, protocol: &Protocol) -> Result<SemiBundle, ParseError> {
        let mut strands = Vec::new();
        for inst in &self.instances {
            let role = protocol.role(&inst.role).ok_or_else(|| ParseError::UnknownRole {
                line: 0,
                col: 0,
                name: inst.role.clone(),
            })?;
            let mut pairs = Vec::new();
            let mut var_ty = BTreeMap::new();
            for node in &role.nodes {
                for v in node.term.vars() {
                    var_ty.insert(v.name.clone(), v.ty.clone());
                }
            }
            for (vname, term) in &inst.bindings {
                let ty = var_ty.get(vname).cloned().ok_or_else(|| {
                    ParseError::Instantiation {
                        instance: inst.name.clone(),
                        source: ProtocolError::UnknownVariable {
                            var: vname.clone(),
                            role: inst.role.clone(),
                        },
                    }
                })?;
                pairs.push((Variable { name: vname.clone(), ty }, term.clone()));
            }
            let sigma = Substitution::from_bindings(pairs).map_err(|e| ParseError::Conflict {
                line: 0,
                col: 0,
                msg: format!("instance `{}`: {e}", inst.name),
            })?;
            let semi = instantiate_role(role, &sigma, &inst.name).map_err(|e| {
                ParseError::Instantiation { instance: inst.name.clone(), source: e }
            })?;

            let self_agent = sigma.get_by_name(&inst.role).cloned();
            let peer_agent = first_peer_var(role, &inst.role)
                .and_then(|peer| sigma.get_by_name(&peer).cloned());
            strands.push(SemiStrand {
                role_name: inst.role.clone(),
                instance_name: inst.name.clone(),
                nodes: semi.nodes,
                honest_sub: sigma,
                self_agent,
                peer_agent,
                is_goal: false,
            });
        }
        for (gi, goal) in self.secrecy_goals.iter().enumerate() {
            strands.push(SemiStrand {
                role_name: "goal".into(),
                instance_name: if self.secrecy_goals.len() == 1 {
                    "goal".into()
                } else {
                    format!("goal{}", gi + 1)
                },
                nodes: vec![Node::recv(goal.clone())],
                honest_sub: Substitution::empty(),
                self_agent: None,
                peer_agent: None,
                is_goal: true,
            });
        }

        let mut t0: BTreeSet<Term> = BTreeSet::new();
        t0.insert(Term::attacker());
        t0.insert(Term::pk(Term::attacker()));
        t0.insert(Term::zero());
        let mut agent_terms: BTreeSet<Term> = BTreeSet::new();
        for a in &self.agents {
            agent_terms.insert(Term::atom(a, TypeTag::Agent));
        }
        for strand in &strands {
            for (_, t) in strand.honest_sub.iter() {
                if let Term::Atom(at) = t {
                    if at.ty == TypeTag::Agent {
                        agent_terms.insert(t.clone());
                    }
                }
            }
        }
        for a in &agent_terms {
            t0.insert(a.clone());
            t0.insert(Term::pk(a.clone()));
            t0.insert(Term::sh(a.clone(), Term::attacker()));
            t0.insert(Term::sh(Term::attacker(), a.clone()));
        }
        for t in protocol.terms() {
            collect_constants(t, &mut t0);
        }
        for strand in &strands {
            for n in &strand.nodes {
                collect_constants(&n.term, &mut t0);
            }
        }
        for k in &self.knows {
            t0.insert(k.clone());
        }

        let mut bundle = SemiBundle {
            strands,
            initial_knowledge: t0,
            weak_keys: self.weak_keys.iter().cloned().collect(),
            assoc_pairs: self.assoc_pairs,
        };
        if self.assoc_pairs {
            for s in &mut bundle.strands {
                for n in &mut s.nodes {
                    n.term = n.term.flatten_concats();
                }
            }
            bundle.initial_knowledge =
                bundle.initial_knowledge.iter().map(|t| t.flatten_concats()).collect();
        }
        Ok(bundle)
    }
}

/// First agent-typed variable other than the role's own name, in node
/// order. Used only to label trace output.
fn first_peer_var(role: &Strand, self_name: &str) -> Option<String> {
    for node in &role.nodes {
        let mut vars = BTreeSet::new();
        node.term.collect_vars(&mut vars);
        let mut in_order: Vec<&Variable> = vars.iter().collect();
        in_order.sort_by_key(|v| v.name.clone());
        for v in in_order {
            if v.ty == TypeTag::Agent && v.name != self_name {
                return Some(v.name.clone());
            }
        }
    }
    None
}

/// Faithful pretty-printer: `parse . print . parse = parse`.
pub fn print_protocol(protocol: &Protocol) -> String {
    let mut decls: BTreeMap<String, TypeTag> = BTreeMap::new();
    for role in &protocol.roles {
        decls.insert(role.role_name.clone(), TypeTag::Agent);
        for node in &role.nodes {
            for v in node.term.vars() {
                decls.insert(v.name.clone(), v.ty.clone());
            }
        }
    }
    let mut by_type: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (n, ty) in &decls {
        by_type.entry(ty.to_string()).or_default().push(n.clone());
    }
    let mut out = String::new();
    let _ = writeln!(out, "protocol {}", protocol.name);
    let _ = writeln!(out);
    for (ty, names) in &by_type {
        let _ = writeln!(out, "var {}: {}", names.join(", "), ty);
    }
    for role in &protocol.roles {
        let _ = writeln!(out);
        let _ = writeln!(out, "role {}:", role.role_name);
        for node in &role.nodes {
            let kw = match node.sign {
                Sign::Plus => "send",
                Sign::Minus => "recv",
            };
            let _ = writeln!(out, "  {kw} {}", node.term);
        }
    }
    out
}

/// Parses a standalone term (the `unify` command input). Identifier types
/// follow the naming conventions: `N*`/`n*` are nonces, `K*`/`k*` keys,
/// everything else agents.
pub fn parse_standalone_term(text: &str) -> Result<Term, ParseError> {
    let mut cx = tokenize(1, strip_comment(text).trim())?;
    let mut resolve = |n: &str, _l: usize, _c: usize| -> Result<Term, ParseError> {
        let ty = match n.chars().next() {
            Some('N') | Some('n') => TypeTag::Nonce,
            Some('K') | Some('k') => TypeTag::Key,
            _ => TypeTag::Agent,
        };
        Ok(if is_uppercase_name(n) { Term::var(n, ty) } else { Term::atom(n, ty) })
    };
    let t = parse_term(&mut cx, &mut resolve)?;
    cx.expect_end()?;
    Ok(t.xor_normalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    const NSL_XOR: &str = "\
-- adapted NSL with an XOR-masked nonce
protocol nsl_xor

var A, B: agent
var N_A, N_B: nonce

role A:
  send penc([1, N_A, A]; pk(B))
  recv penc([2, xor(N_A, B), N_B]; pk(A))
  send penc([3, N_B]; pk(B))

role B:
  recv penc([1, N_A, A]; pk(B))
  send penc([2, xor(N_A, B), N_B]; pk(A))
  recv penc([3, N_B]; pk(B))
";

    const TWO_SESSION: &str = "\
scenario two_session for nsl_xor
theory acun

attacker i
agents a, b

instance alpha: role A [A = a, N_A = n_a, B = i]
instance beta:  role B [B = b, A = a, N_B = n_b]

goal secrecy n_b
";

    #[test]
    fn parse_nsl_protocol() {
        let p = parse_protocol(NSL_XOR).unwrap();
        assert_eq!(p.name, "nsl_xor");
        assert_eq!(p.roles.len(), 2);
        assert_eq!(p.roles[0].nodes.len(), 3);
        assert_eq!(p.roles[1].nodes.len(), 3);
        assert_eq!(p.roles[0].nodes[0].sign, Sign::Plus);
        assert_eq!(p.roles[1].nodes[0].sign, Sign::Minus);
        // both roles state message 1 with the same parametric term
        assert_eq!(p.roles[0].nodes[0].term, p.roles[1].nodes[0].term);
    }

    #[test]
    fn empty_file_is_a_syntax_error() {
        assert!(matches!(parse_protocol(""), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn undeclared_variable_is_reported_with_position() {
        let bad = "protocol p\nvar A: agent\nrole A:\n  send pk(Z)\n";
        match parse_protocol(bad) {
            Err(ParseError::UndeclaredIdentifier { line, name, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(name, "Z");
            }
            other => panic!("expected UndeclaredIdentifier, got {other:?}"),
        }
    }

    #[test]
    fn missing_type_annotation() {
        let bad = "protocol p\nvar A\nrole A:\n";
        assert!(matches!(
            parse_protocol(bad),
            Err(ParseError::TypeAnnotationMissing { .. })
        ));
    }

    #[test]
    fn parse_two_session_scenario() {
        let p = parse_protocol(NSL_XOR).unwrap();
        let s = parse_scenario(TWO_SESSION, &p).unwrap();
        assert_eq!(s.instances.len(), 2);
        assert_eq!(s.theory, Some(TheoryChoice::Acun));
        let bundle = s.build(&p).unwrap();
        assert_eq!(bundle.strands.len(), 3); // two sessions plus the goal
        assert!(bundle.strands[2].is_goal);
        // the attacker alias resolves to the attacker constant
        assert_eq!(
            bundle.strands[0].honest_sub.get_by_name("B"),
            Some(&Term::attacker())
        );
        // T0 basics
        assert!(bundle.initial_knowledge.contains(&Term::attacker()));
        assert!(bundle.initial_knowledge.contains(&Term::pk(Term::attacker())));
        assert!(bundle
            .initial_knowledge
            .contains(&Term::atom("a", TypeTag::Agent)));
        assert!(bundle.initial_knowledge.contains(&Term::num(1)));
        assert!(!bundle
            .initial_knowledge
            .contains(&Term::atom("n_a", TypeTag::Nonce)));
    }

    #[test]
    fn unknown_role_in_scenario() {
        let p = parse_protocol(NSL_XOR).unwrap();
        let bad = "scenario s for nsl_xor\ninstance x: role C []\n";
        assert!(matches!(
            parse_scenario(bad, &p),
            Err(ParseError::UnknownRole { .. })
        ));
    }

    #[test]
    fn ill_typed_instance_binding_is_rejected() {
        let p = parse_protocol(NSL_XOR).unwrap();
        // n_x was introduced as a nonce; binding it to an agent variable
        // makes the honest substitution ill-typed.
        let bad = "scenario s for nsl_xor\nagents a\ninstance x: role A [N_A = a]\n";
        assert!(matches!(
            parse_scenario(bad, &p),
            Err(ParseError::Conflict { .. }) | Err(ParseError::Instantiation { .. })
        ));
    }

    #[test]
    fn empty_scenario_is_valid_and_trivial() {
        let p = parse_protocol(NSL_XOR).unwrap();
        let s = parse_scenario("scenario empty for nsl_xor\n", &p).unwrap();
        let bundle = s.build(&p).unwrap();
        assert!(bundle.strands.is_empty());
    }

    #[test]
    fn weak_password_mark_lands_on_the_bundle() {
        let proto = "\
protocol gong
var A, B: agent
var N_A: nonce
var K: key
role A:
  send penc([1, A, B, N_A]; pk(B))
  recv senc([N_A, K]; passwd(A, B))
role B:
  recv penc([1, A, B, N_A]; pk(B))
  send senc([N_A, K]; passwd(A, B))
";
        let p = parse_protocol(proto).unwrap();
        let scen = "\
scenario two_run for gong
attacker i
agents a, b
instance r1: role A [A = a, B = b, N_A = n_a]
instance r2: role B [A = a, B = b, K = k]
weak passwd(a, b)
goal secrecy passwd(a, b)
";
        let s = parse_scenario(scen, &p).unwrap();
        let bundle = s.build(&p).unwrap();
        let pw = Term::sh(
            Term::atom("a", TypeTag::Agent),
            Term::atom("b", TypeTag::Agent),
        );
        assert!(bundle.weak_keys.contains(&pw));
    }

    #[test]
    fn print_parse_roundtrip() {
        let p = parse_protocol(NSL_XOR).unwrap();
        let printed = print_protocol(&p);
        let reparsed = parse_protocol(&printed).unwrap();
        assert_eq!(p, reparsed);
        assert_eq!(print_protocol(&reparsed), printed);
    }

    #[test]
    fn standalone_term_conventions() {
        let t = parse_standalone_term("penc([1,n_a];pk(B))").unwrap();
        let expected = Term::penc(
            Term::concat(vec![Term::num(1), Term::atom("n_a", TypeTag::Nonce)]),
            Term::pk(Term::var("B", TypeTag::Agent)),
        );
        assert_eq!(t, expected);
        // xor inputs normalize on the way in
        let x = parse_standalone_term("xor(a, a, b)").unwrap();
        assert_eq!(x, Term::atom("b", TypeTag::Agent));
    }

    #[test]
    fn tag_constants_parse_and_print() {
        let t = parse_standalone_term("xor([#nonce, n_a], [#agent, b])").unwrap();
        assert_eq!(parse_standalone_term(&t.to_string()).unwrap(), t);
    }
}
