//! Predicate-based bidirectional transformations at peer gateways.
//!
//! A [`PredicateLens`] pairs an *offer* predicate (what the peer shares out,
//! the get direction) with an *accept* predicate (what it takes in, the put
//! direction). Views of the local set are produced by [`PredicateLens::get_view`]
//! and folded back by [`PredicateLens::put_view`]; operations crossing the
//! gateway are gated element-wise by [`PredicateLens::transform_outbound`] and
//! [`PredicateLens::transform_inbound`], with suppressed operations turning
//! into the identity `!` rather than disappearing.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::op::{Element, Operation};

/// Element set produced by the get direction of a lens.
pub type SharedView = BTreeSet<Element>;

/// Pure predicate over elements: `true`, a modulo test, or a boolean
/// combination of those.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Predicate {
    True,
    /// `x % modulus == residue`, with `modulus > 0` and `0 <= residue < modulus`.
    /// Negative elements take the nonnegative residue.
    Modulo { modulus: i64, residue: i64 },
    And(Box<Predicate>, Box<Predicate>),
    Or(Box<Predicate>, Box<Predicate>),
}

impl Predicate {
    pub fn modulo(modulus: i64, residue: i64) -> Result<Self, LensError> {
        if modulus <= 0 {
            return Err(LensError::ZeroModulus);
        }
        if residue < 0 || residue >= modulus {
            return Err(LensError::ResidueOutOfRange { modulus, residue });
        }
        Ok(Predicate::Modulo { modulus, residue })
    }

    pub fn and(self, other: Predicate) -> Self {
        Predicate::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Predicate) -> Self {
        Predicate::Or(Box::new(self), Box::new(other))
    }

    pub fn eval(&self, e: Element) -> bool {
        match self {
            Predicate::True => true,
            Predicate::Modulo { modulus, residue } => e.0.rem_euclid(*modulus) == *residue,
            Predicate::And(l, r) => l.eval(e) && r.eval(e),
            Predicate::Or(l, r) => l.eval(e) || r.eval(e),
        }
    }

    /// Parses the scenario-file predicate grammar:
    ///
    /// ```text
    /// pred := "true" | "x % <int> == <int>" | pred (and|or) pred
    /// ```
    ///
    /// `and`/`or` share one precedence level and associate left; parentheses
    /// group.
    pub fn parse(text: &str) -> Result<Self, LensError> {
        let tokens = tokenize(text)?;
        let mut parser = PredParser { tokens, pos: 0 };
        let pred = parser.expr()?;
        match parser.peek() {
            None => Ok(pred),
            Some(tok) => Err(LensError::Syntax {
                position: tok.position,
                message: format!("unexpected {:?} after complete predicate", tok.text),
            }),
        }
    }
}

impl fmt::Display for Predicate {
    /// Canonical text form that reparses to the same tree: left-associated
    /// chains stay flat, composite right operands get parentheses.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn composite(p: &Predicate) -> bool {
            matches!(p, Predicate::And(..) | Predicate::Or(..))
        }
        fn write_operand(p: &Predicate, f: &mut fmt::Formatter<'_>, parens: bool) -> fmt::Result {
            if parens {
                write!(f, "({p})")
            } else {
                write!(f, "{p}")
            }
        }
        match self {
            Predicate::True => f.write_str("true"),
            Predicate::Modulo { modulus, residue } => write!(f, "x % {modulus} == {residue}"),
            Predicate::And(l, r) => {
                write_operand(l, f, false)?;
                f.write_str(" and ")?;
                write_operand(r, f, composite(r))
            }
            Predicate::Or(l, r) => {
                write_operand(l, f, false)?;
                f.write_str(" or ")?;
                write_operand(r, f, composite(r))
            }
        }
    }
}

struct Token {
    text: String,
    position: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, LensError> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '(' || c == ')' || c == '%' {
            tokens.push(Token { text: c.to_string(), position: i });
            i += 1;
        } else if c == '=' {
            if chars.get(i + 1) == Some(&'=') {
                tokens.push(Token { text: "==".into(), position: i });
                i += 2;
            } else {
                return Err(LensError::Syntax {
                    position: i,
                    message: "expected ==".into(),
                });
            }
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            tokens.push(Token {
                text: chars[start..i].iter().collect(),
                position: start,
            });
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            tokens.push(Token {
                text: chars[start..i].iter().collect(),
                position: start,
            });
        } else {
            return Err(LensError::Syntax {
                position: i,
                message: format!("unexpected character {c:?}"),
            });
        }
    }
    Ok(tokens)
}

struct PredParser {
    tokens: Vec<Token>,
    pos: usize,
}

impl PredParser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<&Token> {
        let tok = self.tokens.get(self.pos);
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn expect(&mut self, text: &str) -> Result<(), LensError> {
        match self.next() {
            Some(tok) if tok.text == text => Ok(()),
            Some(tok) => Err(LensError::Syntax {
                position: tok.position,
                message: format!("expected {:?}, found {:?}", text, tok.text),
            }),
            None => Err(LensError::Syntax {
                position: self.tokens.last().map_or(0, |t| t.position + t.text.len()),
                message: format!("expected {text:?}, found end of input"),
            }),
        }
    }

    fn integer(&mut self) -> Result<(i64, usize), LensError> {
        match self.next() {
            Some(tok) if tok.text.chars().all(|c| c.is_ascii_digit()) => {
                let position = tok.position;
                let value = tok.text.parse().map_err(|_| LensError::Syntax {
                    position,
                    message: format!("integer {:?} out of range", tok.text),
                })?;
                Ok((value, position))
            }
            Some(tok) => Err(LensError::Syntax {
                position: tok.position,
                message: format!("expected integer, found {:?}", tok.text),
            }),
            None => Err(LensError::Syntax {
                position: self.tokens.last().map_or(0, |t| t.position + t.text.len()),
                message: "expected integer, found end of input".into(),
            }),
        }
    }

    fn expr(&mut self) -> Result<Predicate, LensError> {
        let mut acc = self.atom()?;
        while let Some(tok) = self.peek() {
            let op = tok.text.clone();
            if op != "and" && op != "or" {
                break;
            }
            self.pos += 1;
            let rhs = self.atom()?;
            acc = if op == "and" { acc.and(rhs) } else { acc.or(rhs) };
        }
        Ok(acc)
    }

    fn atom(&mut self) -> Result<Predicate, LensError> {
        match self.next() {
            Some(tok) if tok.text == "(" => {
                let inner = self.expr()?;
                self.expect(")")?;
                Ok(inner)
            }
            Some(tok) if tok.text == "true" => Ok(Predicate::True),
            Some(tok) if tok.text == "x" => {
                self.expect("%")?;
                let (modulus, mod_pos) = self.integer()?;
                self.expect("==")?;
                let (residue, res_pos) = self.integer()?;
                Predicate::modulo(modulus, residue).map_err(|e| match e {
                    LensError::ZeroModulus => LensError::Syntax {
                        position: mod_pos,
                        message: "modulus must be positive".into(),
                    },
                    LensError::ResidueOutOfRange { modulus, residue } => LensError::Syntax {
                        position: res_pos,
                        message: format!("residue {residue} out of range for modulus {modulus}"),
                    },
                    other => other,
                })
            }
            Some(tok) => Err(LensError::Syntax {
                position: tok.position,
                message: format!("expected predicate, found {:?}", tok.text),
            }),
            None => Err(LensError::Syntax {
                position: 0,
                message: "empty predicate".into(),
            }),
        }
    }
}

/// A peer's gateway toward one partner: what it offers and what it accepts.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PredicateLens {
    offer: Predicate,
    accept: Predicate,
}

impl PredicateLens {
    pub fn new(offer: Predicate, accept: Predicate) -> Self {
        PredicateLens { offer, accept }
    }

    /// Lens that offers and accepts everything.
    pub fn open() -> Self {
        PredicateLens::new(Predicate::True, Predicate::True)
    }

    /// Lens with the same predicate on both directions, which is always
    /// well-behaved.
    pub fn symmetric(pred: Predicate) -> Self {
        PredicateLens::new(pred.clone(), pred)
    }

    pub fn offer(&self) -> &Predicate {
        &self.offer
    }

    pub fn accept(&self) -> &Predicate {
        &self.accept
    }

    pub fn offers(&self, e: Element) -> bool {
        self.offer.eval(e)
    }

    pub fn accepts(&self, e: Element) -> bool {
        self.accept.eval(e)
    }

    /// Get direction: the subset of `d` this peer offers.
    pub fn get_view(&self, d: &BTreeSet<Element>) -> SharedView {
        d.iter().copied().filter(|&e| self.offers(e)).collect()
    }

    /// Put direction: replace the offered part of `d` by the accepted part
    /// of the view `v`.
    pub fn put_view(&self, d: &BTreeSet<Element>, v: &SharedView) -> BTreeSet<Element> {
        d.iter()
            .copied()
            .filter(|&e| !self.offers(e))
            .chain(v.iter().copied().filter(|&e| self.accepts(e)))
            .collect()
    }

    /// Outbound gate: an insert/delete passes through untouched if its
    /// element is offered, and collapses to `!` otherwise. Stamps survive
    /// either way.
    pub fn transform_outbound(&self, op: &Operation) -> Operation {
        self.gate(op, |lens, e| lens.offers(e))
    }

    /// Inbound gate: same shape, but keyed on the accept predicate.
    pub fn transform_inbound(&self, op: &Operation) -> Operation {
        self.gate(op, |lens, e| lens.accepts(e))
    }

    fn gate(&self, op: &Operation, admit: impl Fn(&Self, Element) -> bool) -> Operation {
        match op.element() {
            Some(e) if admit(self, e) => op.clone(),
            Some(_) => op.suppressed(),
            None => op.clone(),
        }
    }

    /// Checks the round-tripping laws on the given samples.
    ///
    /// GetPut: `put(d, get(d)) = d`. PutGet: `get(put(d, v)) = v`. Samples
    /// whose view holds an element the lens would not accept are ill-typed
    /// (put silently drops them, so neither law is meaningful) and rejected.
    pub fn check_well_behaved(
        &self,
        samples: &[(BTreeSet<Element>, SharedView)],
    ) -> Result<LawReport, LensError> {
        for (_, v) in samples {
            if let Some(&bad) = v.iter().find(|&&e| !self.accepts(e)) {
                return Err(LensError::IllTypedView { element: bad });
            }
        }
        let mut counterexamples = Vec::new();
        for (d, v) in samples {
            let round = self.put_view(d, &self.get_view(d));
            if round != *d {
                counterexamples.push(LawViolation {
                    law: LensLaw::GetPut,
                    source: d.clone(),
                    view: self.get_view(d),
                    got: round,
                    want: d.clone(),
                });
            }
            let folded = self.get_view(&self.put_view(d, v));
            if folded != *v {
                counterexamples.push(LawViolation {
                    law: LensLaw::PutGet,
                    source: d.clone(),
                    view: v.clone(),
                    got: folded,
                    want: v.clone(),
                });
            }
        }
        Ok(LawReport {
            samples: samples.len(),
            counterexamples,
        })
    }

    /// Randomized law check: draws `samples` (set, view) pairs with elements
    /// from `universe`. Views keep only elements the lens accepts (anything
    /// else is ill-typed), which still leaves offer-rejected elements free to
    /// expose PutGet violations of asymmetric lenses.
    pub fn fuzz_well_behaved(
        &self,
        universe: std::ops::RangeInclusive<i64>,
        samples: usize,
        seed: u64,
    ) -> Result<LawReport, LensError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let span = (universe.end() - universe.start() + 1).max(1);
        let mut drawn = Vec::with_capacity(samples);
        for _ in 0..samples {
            let d_size = rng.random_range(0..=16u32);
            let v_size = rng.random_range(0..=16u32);
            let mut d = BTreeSet::new();
            for _ in 0..d_size {
                d.insert(Element(universe.start() + rng.random_range(0..span)));
            }
            let mut v = BTreeSet::new();
            for _ in 0..v_size {
                let e = Element(universe.start() + rng.random_range(0..span));
                if self.accepts(e) {
                    v.insert(e);
                }
            }
            drawn.push((d, v));
        }
        self.check_well_behaved(&drawn)
    }
}

/// Which round-tripping law a counterexample violates.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LensLaw {
    GetPut,
    PutGet,
}

impl fmt::Display for LensLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LensLaw::GetPut => f.write_str("GetPut"),
            LensLaw::PutGet => f.write_str("PutGet"),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LawViolation {
    pub law: LensLaw,
    pub source: BTreeSet<Element>,
    pub view: SharedView,
    pub got: BTreeSet<Element>,
    pub want: BTreeSet<Element>,
}

impl fmt::Display for LawViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violated: source={} view={} got={} want={}",
            self.law,
            format_set(&self.source),
            format_set(&self.view),
            format_set(&self.got),
            format_set(&self.want),
        )
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LawReport {
    pub samples: usize,
    pub counterexamples: Vec<LawViolation>,
}

impl LawReport {
    pub fn ok(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// Renders a set as `{1,2,3}`.
pub fn format_set<'a>(set: impl IntoIterator<Item = &'a Element>) -> String {
    let inner: Vec<String> = set.into_iter().map(|e| e.to_string()).collect();
    format!("{{{}}}", inner.join(","))
}

/// The domain shared across one direction of a link: elements the offerer
/// offers and the accepter accepts.
pub fn shared_domain(offerer: &PredicateLens, accepter: &PredicateLens) -> Predicate {
    offerer.offer().clone().and(accepter.accept().clone())
}

/// True iff both directions of the link share the same domain over every
/// element of the universe. Links failing this are excluded from the
/// convergence guarantee.
pub fn link_symmetric(
    lens_a: &PredicateLens,
    lens_b: &PredicateLens,
    universe: std::ops::RangeInclusive<i64>,
) -> bool {
    let ab = shared_domain(lens_a, lens_b);
    let ba = shared_domain(lens_b, lens_a);
    universe.map(Element).all(|e| ab.eval(e) == ba.eval(e))
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum LensError {
    #[error("modulus must be positive")]
    ZeroModulus,
    #[error("residue {residue} out of range for modulus {modulus}")]
    ResidueOutOfRange { modulus: i64, residue: i64 },
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("ill-typed view: element {element} fails the accept predicate")]
    IllTypedView { element: Element },
}
