//! S-expression logical forms over a knowledge base.
//!
//! Atom kinds are assigned by position only: the first argument of `JOIN`
//! and the argument of `R` are relations, bare `AND`/`ARGMIN`/`ARGMAX`
//! operands are classes, the second argument of a comparative is a literal,
//! and any other run of bare words in a value position is fused into a single
//! entity (so `simon birch` stays one atom). No schema lookup is done.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AtomKind {
    Relation,
    Class,
    Entity,
    Literal,
    /// `SubgraphN` reference to an earlier decomposition step. Only produced
    /// by [`parse_step`].
    Placeholder,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub kind: AtomKind,
    pub text: String,
}

impl Atom {
    pub fn new(kind: AtomKind, text: impl Into<String>) -> Self {
        Self { kind, text: text.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operator {
    And,
    Join,
    R,
    Count,
    ArgMin,
    ArgMax,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Operator {
    pub const ALL: [Operator; 10] = [
        Operator::And,
        Operator::Join,
        Operator::R,
        Operator::Count,
        Operator::ArgMin,
        Operator::ArgMax,
        Operator::Lt,
        Operator::Le,
        Operator::Gt,
        Operator::Ge,
    ];

    /// Canonical spelling. Comparatives print lowercase, as in GrailQA.
    pub fn as_str(self) -> &'static str {
        match self {
            Operator::And => "AND",
            Operator::Join => "JOIN",
            Operator::R => "R",
            Operator::Count => "COUNT",
            Operator::ArgMin => "ARGMIN",
            Operator::ArgMax => "ARGMAX",
            Operator::Lt => "lt",
            Operator::Le => "le",
            Operator::Gt => "gt",
            Operator::Ge => "ge",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|op| op.as_str().eq_ignore_ascii_case(token))
    }

    pub fn is_comparative(self) -> bool {
        matches!(self, Operator::Lt | Operator::Le | Operator::Gt | Operator::Ge)
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LogicalForm {
    Atom(Atom),
    Op(Operator, Vec<LogicalForm>),
}

impl LogicalForm {
    pub fn atom(kind: AtomKind, text: impl Into<String>) -> Self {
        LogicalForm::Atom(Atom::new(kind, text))
    }

    pub fn op(op: Operator, args: Vec<LogicalForm>) -> Self {
        LogicalForm::Op(op, args)
    }

    pub fn is_composite(&self) -> bool {
        matches!(self, LogicalForm::Op(..))
    }

    /// Visits every atom, depth-first, left to right.
    pub fn atoms(&self) -> Vec<&Atom> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a Atom>) {
        match self {
            LogicalForm::Atom(a) => out.push(a),
            LogicalForm::Op(_, args) => args.iter().for_each(|a| a.collect_atoms(out)),
        }
    }
}

impl fmt::Display for LogicalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogicalForm::Atom(a) => f.write_str(&a.text),
            LogicalForm::Op(op, args) => {
                write!(f, "({op}")?;
                for arg in args {
                    write!(f, " {arg}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty logical form")]
    Empty,
    #[error("unbalanced parentheses at byte {position} (near `{token}`)")]
    UnbalancedParens { token: String, position: usize },
    #[error("unknown operator `{token}` at byte {position}")]
    UnknownOperator { token: String, position: usize },
    #[error("arity violation for `{token}` at byte {position}: {detail}")]
    ArityViolation {
        token: String,
        position: usize,
        detail: String,
    },
    #[error("invalid {expected} `{token}` at byte {position}")]
    InvalidAtom {
        token: String,
        position: usize,
        expected: &'static str,
    },
    #[error("unexpected `{token}` at byte {position} after the end of the expression")]
    TrailingInput { token: String, position: usize },
}

#[derive(Debug, Clone)]
enum Raw<'a> {
    Word(usize, &'a str),
    List(usize, Vec<Raw<'a>>),
}

impl Raw<'_> {
    fn position(&self) -> usize {
        match self {
            Raw::Word(p, _) | Raw::List(p, _) => *p,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Token<'a> {
    Open(usize),
    Close(usize),
    Word(usize, &'a str),
}

fn lex(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push(Token::Word(s, &text[s..i]));
            }
            match c {
                '(' => tokens.push(Token::Open(i)),
                ')' => tokens.push(Token::Close(i)),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(Token::Word(s, &text[s..]));
    }
    tokens
}

fn read_tree<'a>(tokens: &[Token<'a>]) -> Result<Raw<'a>, ParseError> {
    let mut stack: Vec<(usize, Vec<Raw<'a>>)> = Vec::new();
    let mut root: Option<Raw<'a>> = None;
    for tok in tokens {
        if root.is_some() {
            return Err(match *tok {
                Token::Open(p) => ParseError::TrailingInput { token: "(".into(), position: p },
                Token::Close(p) => ParseError::UnbalancedParens { token: ")".into(), position: p },
                Token::Word(p, w) => ParseError::TrailingInput { token: w.into(), position: p },
            });
        }
        match *tok {
            Token::Open(p) => stack.push((p, Vec::new())),
            Token::Close(p) => {
                let (start, items) = stack
                    .pop()
                    .ok_or(ParseError::UnbalancedParens { token: ")".into(), position: p })?;
                let list = Raw::List(start, items);
                match stack.last_mut() {
                    Some((_, parent)) => parent.push(list),
                    None => root = Some(list),
                }
            }
            Token::Word(p, w) => match stack.last_mut() {
                Some((_, parent)) => parent.push(Raw::Word(p, w)),
                None => {
                    return Err(ParseError::ArityViolation {
                        token: w.to_string(),
                        position: p,
                        detail: "a logical form must start with an operator expression".into(),
                    })
                }
            },
        }
    }
    if let Some((start, _)) = stack.pop() {
        return Err(ParseError::UnbalancedParens { token: "(".into(), position: start });
    }
    root.ok_or(ParseError::Empty)
}

/// `segment(.segment)*` where each segment is made of word characters.
pub fn is_dotted_identifier(text: &str) -> bool {
    !text.is_empty()
        && text
            .split('.')
            .all(|seg| !seg.is_empty() && seg.chars().all(|c| c.is_alphanumeric() || c == '_'))
}

pub fn is_literal_text(text: &str) -> bool {
    text.contains("^^") || text.parse::<f64>().is_ok()
}

/// Freebase machine identifier such as `m.0hqs1x` or `g.11b6z2`.
pub fn is_machine_id(text: &str) -> bool {
    let Some(rest) = text.strip_prefix("m.").or_else(|| text.strip_prefix("g.")) else {
        return false;
    };
    !rest.is_empty() && rest.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub fn placeholder_index(text: &str) -> Option<usize> {
    let digits = text.strip_prefix("Subgraph")?;
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

struct Builder {
    placeholders: bool,
}

impl Builder {
    fn expr(&self, raw: &Raw<'_>) -> Result<LogicalForm, ParseError> {
        let Raw::List(start, items) = raw else {
            unreachable!("expr is only called on lists");
        };
        let (op_pos, op_tok) = match items.first() {
            Some(Raw::Word(p, w)) => (*p, *w),
            Some(Raw::List(p, _)) => {
                return Err(ParseError::UnknownOperator { token: "(".into(), position: *p })
            }
            None => {
                return Err(ParseError::ArityViolation {
                    token: "()".into(),
                    position: *start,
                    detail: "empty expression".into(),
                })
            }
        };
        let op = Operator::from_token(op_tok).ok_or_else(|| ParseError::UnknownOperator {
            token: op_tok.to_string(),
            position: op_pos,
        })?;
        let args = &items[1..];
        let arity = |detail: &str| ParseError::ArityViolation {
            token: op_tok.to_string(),
            position: op_pos,
            detail: format!("{detail}, got {} argument item(s)", args.len()),
        };

        let built = match op {
            Operator::Join => {
                if args.len() < 2 {
                    return Err(arity("JOIN needs a relation and a value"));
                }
                let relation = match &args[0] {
                    Raw::Word(p, w) => self.relation(*p, w)?,
                    list @ Raw::List(..) => {
                        let inner = self.expr(list)?;
                        if !matches!(inner, LogicalForm::Op(Operator::R, _)) {
                            return Err(ParseError::ArityViolation {
                                token: op_tok.to_string(),
                                position: list.position(),
                                detail: "JOIN relation slot must be a relation or an (R ...) node"
                                    .into(),
                            });
                        }
                        inner
                    }
                };
                let value = self.value(&args[1..]).ok_or_else(|| {
                    arity("JOIN value must be one sub-expression or a run of bare words")
                })??;
                vec![relation, value]
            }
            Operator::R => match args {
                [Raw::Word(p, w)] => vec![self.relation(*p, w)?],
                _ => return Err(arity("R wraps exactly one relation")),
            },
            Operator::Count => match args {
                [one] => vec![self.operand(one, false)?],
                _ => return Err(arity("COUNT takes exactly one sub-expression")),
            },
            Operator::And => match args {
                [a, b] => vec![self.operand(a, true)?, self.operand(b, true)?],
                _ => return Err(arity("AND takes exactly two operands")),
            },
            Operator::ArgMin | Operator::ArgMax => match args {
                [a, Raw::Word(p, w)] => vec![self.operand(a, true)?, self.relation(*p, w)?],
                _ => return Err(arity("ARGMIN/ARGMAX take a class or expression, then a relation")),
            },
            Operator::Lt | Operator::Le | Operator::Gt | Operator::Ge => match args {
                [Raw::Word(rp, r), Raw::Word(lp, l)] => {
                    if !is_literal_text(l) {
                        return Err(ParseError::InvalidAtom {
                            token: l.to_string(),
                            position: *lp,
                            expected: "literal",
                        });
                    }
                    vec![self.relation(*rp, r)?, LogicalForm::atom(AtomKind::Literal, *l)]
                }
                _ => return Err(arity("comparatives take a relation, then a literal")),
            },
        };
        Ok(LogicalForm::Op(op, built))
    }

    fn relation(&self, position: usize, word: &str) -> Result<LogicalForm, ParseError> {
        if !is_dotted_identifier(word) {
            return Err(ParseError::InvalidAtom {
                token: word.to_string(),
                position,
                expected: "relation",
            });
        }
        Ok(LogicalForm::atom(AtomKind::Relation, word))
    }

    /// `AND`, `COUNT` and `ARGMIN`/`ARGMAX` operands: a sub-expression, a
    /// placeholder, or (when `class_ok`) a bare class identifier.
    fn operand(&self, raw: &Raw<'_>, class_ok: bool) -> Result<LogicalForm, ParseError> {
        match raw {
            list @ Raw::List(..) => self.composite(list),
            Raw::Word(p, w) => {
                if self.placeholders && placeholder_index(w).is_some() {
                    return Ok(LogicalForm::atom(AtomKind::Placeholder, *w));
                }
                if !class_ok {
                    return Err(ParseError::ArityViolation {
                        token: w.to_string(),
                        position: *p,
                        detail: "expected a sub-expression".into(),
                    });
                }
                if !is_dotted_identifier(w) {
                    return Err(ParseError::InvalidAtom {
                        token: w.to_string(),
                        position: *p,
                        expected: "class",
                    });
                }
                Ok(LogicalForm::atom(AtomKind::Class, *w))
            }
        }
    }

    fn composite(&self, raw: &Raw<'_>) -> Result<LogicalForm, ParseError> {
        let node = self.expr(raw)?;
        if matches!(node, LogicalForm::Op(Operator::R, _)) {
            return Err(ParseError::ArityViolation {
                token: "R".into(),
                position: raw.position(),
                detail: "(R ...) may only appear as the relation of a JOIN".into(),
            });
        }
        Ok(node)
    }

    /// Value slot of a JOIN. `None` when the items are neither a single
    /// expression nor a non-empty run of words.
    fn value(&self, items: &[Raw<'_>]) -> Option<Result<LogicalForm, ParseError>> {
        match items {
            [list @ Raw::List(..)] => Some(self.composite(list)),
            words if !words.is_empty() && words.iter().all(|r| matches!(r, Raw::Word(..))) => {
                let parts: Vec<&str> = words
                    .iter()
                    .map(|r| match r {
                        Raw::Word(_, w) => *w,
                        Raw::List(..) => unreachable!(),
                    })
                    .collect();
                if let [single] = parts.as_slice() {
                    if self.placeholders && placeholder_index(single).is_some() {
                        return Some(Ok(LogicalForm::atom(AtomKind::Placeholder, *single)));
                    }
                    if single.contains("^^") {
                        return Some(Ok(LogicalForm::atom(AtomKind::Literal, *single)));
                    }
                }
                Some(Ok(LogicalForm::atom(AtomKind::Entity, parts.join(" "))))
            }
            _ => None,
        }
    }
}

fn parse_with(text: &str, placeholders: bool) -> Result<LogicalForm, ParseError> {
    let tokens = lex(text);
    let tree = read_tree(&tokens)?;
    let form = Builder { placeholders }.expr(&tree)?;
    if matches!(form, LogicalForm::Op(Operator::R, _)) {
        return Err(ParseError::ArityViolation {
            token: "R".into(),
            position: tree.position(),
            detail: "(R ...) cannot be the root".into(),
        });
    }
    Ok(form)
}

/// Parses an s-expression logical form.
pub fn parse(text: &str) -> Result<LogicalForm, ParseError> {
    parse_with(text, false)
}

/// Parses a decomposition step, where bare `SubgraphN` words are
/// placeholders rather than entities or classes.
pub fn parse_step(text: &str) -> Result<LogicalForm, ParseError> {
    parse_with(text, true)
}

/// Canonical single-spaced rendering.
pub fn serialize(lf: &LogicalForm) -> String {
    lf.to_string()
}

/// Abstract query graph: relations and classes become `r`, entities and
/// literals become `e`, operators and nesting are kept.
pub fn skeletonize(lf: &LogicalForm) -> String {
    fn go(lf: &LogicalForm, out: &mut String) {
        match lf {
            LogicalForm::Atom(a) => out.push_str(match a.kind {
                AtomKind::Relation | AtomKind::Class => "r",
                AtomKind::Entity | AtomKind::Literal => "e",
                AtomKind::Placeholder => &a.text,
            }),
            LogicalForm::Op(op, args) => {
                out.push('(');
                out.push_str(op.as_str());
                for arg in args {
                    out.push(' ');
                    go(arg, out);
                }
                out.push(')');
            }
        }
    }
    let mut out = String::new();
    go(lf, &mut out);
    out
}

/// Entity id to surface name.
pub type EntityNames = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Substitution {
    pub form: LogicalForm,
    /// Machine identifiers that had no surface name and were left as-is.
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no surface name for entity id(s): {}", .ids.join(", "))]
pub struct MissingName {
    pub ids: Vec<String>,
}

impl Substitution {
    /// Fails if any machine identifier was left unmapped.
    pub fn strict(self) -> Result<LogicalForm, MissingName> {
        if self.missing.is_empty() {
            Ok(self.form)
        } else {
            Err(MissingName { ids: self.missing })
        }
    }
}

/// Replaces entity ids with their surface names. Unmapped machine ids are
/// kept and reported; the caller decides whether that is fatal.
pub fn substitute_entities(lf: &LogicalForm, names: &EntityNames) -> Substitution {
    fn go(lf: &LogicalForm, names: &EntityNames, missing: &mut Vec<String>) -> LogicalForm {
        match lf {
            LogicalForm::Atom(a) if a.kind == AtomKind::Entity => match names.get(&a.text) {
                Some(name) => LogicalForm::atom(AtomKind::Entity, name.clone()),
                None => {
                    if is_machine_id(&a.text) && !missing.contains(&a.text) {
                        missing.push(a.text.clone());
                    }
                    lf.clone()
                }
            },
            LogicalForm::Atom(_) => lf.clone(),
            LogicalForm::Op(op, args) => {
                LogicalForm::Op(*op, args.iter().map(|a| go(a, names, missing)).collect())
            }
        }
    }
    let mut missing = Vec::new();
    let form = go(lf, names, &mut missing);
    Substitution { form, missing }
}

#[derive(Debug, Error)]
pub enum NamesError {
    #[error("reading entity names from {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("entity names JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("entity names TSV line {line}: expected `id<TAB>surface name`")]
    Tsv { line: usize },
}

/// Reads an entity-name map from a JSON object or a two-column TSV file.
pub fn load_entity_names(path: &Path) -> Result<EntityNames, NamesError> {
    let text = std::fs::read_to_string(path).map_err(|source| NamesError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_entity_names(&text)
}

pub fn parse_entity_names(text: &str) -> Result<EntityNames, NamesError> {
    if text.trim_start().starts_with('{') {
        return Ok(serde_json::from_str(text)?);
    }
    let mut names = EntityNames::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, name) = line.split_once('\t').ok_or(NamesError::Tsv { line: i + 1 })?;
        let (id, name) = (id.trim(), name.trim());
        if id.is_empty() || name.is_empty() {
            return Err(NamesError::Tsv { line: i + 1 });
        }
        names.insert(id.to_string(), name.to_string());
    }
    Ok(names)
}
