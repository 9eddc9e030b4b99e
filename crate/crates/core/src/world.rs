//! Registries for objects, attributes and compositional terms, plus the clause
//! grammar and its text rendering.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConceptId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CompositionalId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Location,
    Relation,
    Negation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionalTerm {
    pub key: String,
    /// Surface form, possibly several words ("to the left").
    pub text: String,
    pub kind: TermKind,
    pub antonym: Option<CompositionalId>,
    /// Synonym class; terms in one class share a functional row.
    pub fr_class: String,
}

/// Fixed compositional vocabulary: (key, surface, kind).
const TERMS: [(&str, &str, TermKind); 11] = [
    ("left_of", "left of", TermKind::Relation),
    ("right_of", "right of", TermKind::Relation),
    ("above", "above", TermKind::Relation),
    ("below", "below", TermKind::Relation),
    ("to_the_left", "to the left", TermKind::Location),
    ("to_the_right", "to the right", TermKind::Location),
    ("at_top", "at the top", TermKind::Location),
    ("at_bottom", "at the bottom", TermKind::Location),
    ("but_not", "but not", TermKind::Negation),
    ("and_no", "and no", TermKind::Negation),
    ("without", "without", TermKind::Negation),
];

const ANTONYMS: [(&str, &str); 4] =
    [("left_of", "right_of"), ("above", "below"), ("to_the_left", "to_the_right"), ("at_top", "at_bottom")];

/// Class key shared by every negation word.
pub const NEGATION_CLASS: &str = "negation";

/// Joins adjacent noun phrases when rendering.
pub const CONJUNCTION: &str = "and";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub num_objects: usize,
    pub num_attributes: usize,
    pub dimension: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self { num_objects: 16, num_attributes: 8, dimension: 64, seed: 0 }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_objects < 2 {
            return Err(Error::ConfigInvalid(format!("need at least 2 objects, got {}", self.num_objects)));
        }
        if self.num_attributes < 2 {
            return Err(Error::ConfigInvalid(format!("need at least 2 attributes, got {}", self.num_attributes)));
        }
        if self.num_objects > self.dimension {
            return Err(Error::ConfigInvalid(format!(
                "{} objects exceed dimension {}",
                self.num_objects, self.dimension
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptWorld {
    pub config: WorldConfig,
    pub objects: Vec<String>,
    pub attributes: Vec<String>,
    pub terms: Vec<CompositionalTerm>,
}

pub fn build_world(cfg: WorldConfig) -> Result<ConceptWorld> {
    cfg.validate()?;
    let objects = (0..cfg.num_objects).map(|i| format!("obj{i:02}")).collect();
    let attributes = (0..cfg.num_attributes).map(|i| format!("attr{i:02}")).collect();
    ConceptWorld::with_names(cfg, objects, attributes)
}

impl ConceptWorld {
    /// Builds a world with caller-chosen object and attribute names.
    pub fn with_names(mut cfg: WorldConfig, objects: Vec<String>, attributes: Vec<String>) -> Result<ConceptWorld> {
        cfg.num_objects = objects.len();
        cfg.num_attributes = attributes.len();
        cfg.validate()?;

        let terms = fixed_terms();
        let mut seen = std::collections::HashSet::new();
        let reserved: Vec<&str> = terms
            .iter()
            .flat_map(|t| t.text.split(' '))
            .chain([CONJUNCTION, "<eos>"])
            .collect();
        for name in objects.iter().chain(&attributes) {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::ConfigInvalid(format!("name `{name}` must be a single non-empty word")));
            }
            if reserved.contains(&name.as_str()) {
                return Err(Error::ConfigInvalid(format!("name `{name}` collides with a functional word")));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::ConfigInvalid(format!("duplicate name `{name}`")));
            }
        }
        Ok(ConceptWorld { config: cfg, objects, attributes, terms })
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn object_ids(&self) -> impl Iterator<Item = ConceptId> {
        (0..self.objects.len()).map(ConceptId)
    }

    pub fn attribute_ids(&self) -> impl Iterator<Item = AttributeId> {
        (0..self.attributes.len()).map(AttributeId)
    }

    pub fn term_ids(&self) -> impl Iterator<Item = CompositionalId> {
        (0..self.terms.len()).map(CompositionalId)
    }

    pub fn term(&self, id: CompositionalId) -> &CompositionalTerm {
        &self.terms[id.0]
    }

    pub fn term_by_key(&self, key: &str) -> Option<CompositionalId> {
        self.terms.iter().position(|t| t.key == key).map(CompositionalId)
    }

    pub fn terms_of_kind(&self, kind: TermKind) -> Vec<CompositionalId> {
        self.term_ids().filter(|&g| self.term(g).kind == kind).collect()
    }

    pub fn antonym(&self, id: CompositionalId) -> Option<CompositionalId> {
        self.term(id).antonym
    }

    /// Sorted, de-duplicated synonym-class keys.
    pub fn fr_classes(&self) -> Vec<String> {
        let mut classes: Vec<String> = self.terms.iter().map(|t| t.fr_class.clone()).collect();
        classes.sort();
        classes.dedup();
        classes
    }

    pub fn object_name(&self, x: ConceptId) -> &str {
        &self.objects[x.0]
    }

    pub fn attribute_name(&self, a: AttributeId) -> &str {
        &self.attributes[a.0]
    }

    /// Flat vocabulary index used when datasets store captions as id lists.
    pub fn token_id(&self, token: Token) -> usize {
        let (m, a, g) = (self.objects.len(), self.attributes.len(), self.terms.len());
        match token {
            Token::Object(x) => x.0,
            Token::Attribute(b) => m + b.0,
            Token::Term(t) => m + a + t.0,
            Token::Conjunction => m + a + g,
            Token::Eos => m + a + g + 1,
        }
    }

    pub fn token_from_id(&self, id: usize) -> Result<Token> {
        let (m, a, g) = (self.objects.len(), self.attributes.len(), self.terms.len());
        Ok(match id {
            i if i < m => Token::Object(ConceptId(i)),
            i if i < m + a => Token::Attribute(AttributeId(i - m)),
            i if i < m + a + g => Token::Term(CompositionalId(i - m - a)),
            i if i == m + a + g => Token::Conjunction,
            i if i == m + a + g + 1 => Token::Eos,
            i => return Err(Error::UnknownToken(format!("#{i}"))),
        })
    }

    pub fn token_label(&self, token: Token) -> String {
        match token {
            Token::Object(x) => self.object_name(x).to_string(),
            Token::Attribute(a) => self.attribute_name(a).to_string(),
            Token::Term(g) => self.term(g).key.clone(),
            Token::Conjunction => CONJUNCTION.to_string(),
            Token::Eos => "<eos>".to_string(),
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&WorldFile::from(self))?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<ConceptWorld> {
        let file: WorldFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let world = ConceptWorld::with_names(file.config, file.objects, file.attributes)?;
        if world.terms != file.terms {
            return Err(Error::Format("compositional vocabulary does not match this build".into()));
        }
        Ok(world)
    }
}

fn fixed_terms() -> Vec<CompositionalTerm> {
    let index = |key: &str| TERMS.iter().position(|t| t.0 == key).map(CompositionalId);
    TERMS
        .iter()
        .map(|&(key, text, kind)| {
            let antonym = ANTONYMS.iter().find_map(|&(l, r)| {
                if l == key {
                    index(r)
                } else if r == key {
                    index(l)
                } else {
                    None
                }
            });
            let fr_class = if kind == TermKind::Negation { NEGATION_CLASS.to_string() } else { key.to_string() };
            CompositionalTerm { key: key.into(), text: text.into(), kind, antonym, fr_class }
        })
        .collect()
}

/// On-disk form of a world: registries plus antonym and synonym tables.
#[derive(Debug, Serialize, Deserialize)]
struct WorldFile {
    config: WorldConfig,
    objects: Vec<String>,
    attributes: Vec<String>,
    terms: Vec<CompositionalTerm>,
    antonyms: Vec<(String, String)>,
    synonym_classes: BTreeMap<String, Vec<String>>,
}

impl From<&ConceptWorld> for WorldFile {
    fn from(w: &ConceptWorld) -> Self {
        let antonyms = ANTONYMS.iter().map(|&(l, r)| (l.to_string(), r.to_string())).collect();
        let mut synonym_classes: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for t in &w.terms {
            synonym_classes.entry(t.fr_class.clone()).or_default().push(t.key.clone());
        }
        WorldFile {
            config: w.config,
            objects: w.objects.clone(),
            attributes: w.attributes.clone(),
            terms: w.terms.clone(),
            antonyms,
            synonym_classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    Object(ConceptId),
    Attribute(AttributeId),
    Term(CompositionalId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Token {
    Object(ConceptId),
    Attribute(AttributeId),
    Term(CompositionalId),
    Conjunction,
    Eos,
}

impl Token {
    pub fn is_functional(self) -> bool {
        matches!(self, Token::Term(_))
    }

    /// Objects and attributes: the tokens with a visual referent.
    pub fn is_content(self) -> bool {
        matches!(self, Token::Object(_) | Token::Attribute(_))
    }
}

/// An ordered combination of registry elements.
///
/// Grammar: an attribute is bound to the object right after it; a location
/// term follows exactly one object; a relation term sits between two noun
/// phrases; a negation term precedes a noun phrase and is either clause-initial
/// or follows an object. Adjacent noun phrases render joined by "and".
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Clause(pub Vec<Element>);

impl Clause {
    pub fn new(elements: Vec<Element>) -> Self {
        Clause(elements)
    }

    pub fn elements(&self) -> &[Element] {
        &self.0
    }

    pub fn objects(&self) -> impl Iterator<Item = ConceptId> + '_ {
        self.0.iter().filter_map(|e| match e {
            Element::Object(x) => Some(*x),
            _ => None,
        })
    }

    pub fn validate(&self, world: &ConceptWorld) -> Result<()> {
        let els = &self.0;
        let bad = |why: &str| Err(Error::Ungrammatical(format!("{why} in {els:?}")));
        if els.is_empty() {
            return bad("empty clause");
        }
        for (i, e) in els.iter().enumerate() {
            let prev = i.checked_sub(1).map(|j| els[j]);
            let next = els.get(i + 1).copied();
            match *e {
                Element::Object(x) => {
                    if x.0 >= world.num_objects() {
                        return bad("unregistered object");
                    }
                }
                Element::Attribute(a) => {
                    if a.0 >= world.num_attributes() {
                        return bad("unregistered attribute");
                    }
                    if !matches!(next, Some(Element::Object(_))) {
                        return bad("attribute not followed by its object");
                    }
                }
                Element::Term(g) => {
                    if g.0 >= world.terms.len() {
                        return bad("unregistered term");
                    }
                    let after_object = matches!(prev, Some(Element::Object(_)));
                    let before_np = matches!(next, Some(Element::Object(_) | Element::Attribute(_)));
                    match world.term(g).kind {
                        TermKind::Location => {
                            if !after_object {
                                return bad("location term must follow an object");
                            }
                        }
                        TermKind::Relation => {
                            if !after_object || !before_np {
                                return bad("relation term must sit between two objects");
                            }
                        }
                        TermKind::Negation => {
                            if !(prev.is_none() || after_object) || !before_np {
                                return bad("negation term must precede an object");
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn needs_conjunction(prev: Element, next: Element) -> bool {
        let ends_phrase = matches!(prev, Element::Object(_))
            || matches!(prev, Element::Term(_));
        let starts_phrase = matches!(next, Element::Object(_) | Element::Attribute(_));
        ends_phrase && starts_phrase
    }

    /// Token sequence (without EOS) that renders this clause.
    pub fn tokens(&self, world: &ConceptWorld) -> Result<Vec<Token>> {
        self.validate(world)?;
        let mut out = Vec::with_capacity(self.0.len() + 2);
        for (i, &e) in self.0.iter().enumerate() {
            if i > 0 {
                let prev = self.0[i - 1];
                // A relation or negation term binds the next phrase directly.
                let binds_next = matches!(prev, Element::Term(g)
                    if world.term(g).kind != TermKind::Location);
                if !binds_next && Self::needs_conjunction(prev, e) {
                    out.push(Token::Conjunction);
                }
            }
            out.push(match e {
                Element::Object(x) => Token::Object(x),
                Element::Attribute(a) => Token::Attribute(a),
                Element::Term(g) => Token::Term(g),
            });
        }
        Ok(out)
    }

    pub fn render(&self, world: &ConceptWorld) -> Result<String> {
        let tokens = self.tokens(world)?;
        Ok(tokens
            .iter()
            .map(|&t| match t {
                Token::Object(x) => world.object_name(x).to_string(),
                Token::Attribute(a) => world.attribute_name(a).to_string(),
                Token::Term(g) => world.term(g).text.clone(),
                Token::Conjunction => CONJUNCTION.to_string(),
                Token::Eos => String::new(),
            })
            .collect::<Vec<_>>()
            .join(" "))
    }

    /// Inverse of [`Clause::tokens`]: drops conjunctions and EOS, validates.
    pub fn from_tokens(world: &ConceptWorld, tokens: &[Token]) -> Result<Clause> {
        let elements = tokens
            .iter()
            .filter_map(|&t| match t {
                Token::Object(x) => Some(Element::Object(x)),
                Token::Attribute(a) => Some(Element::Attribute(a)),
                Token::Term(g) => Some(Element::Term(g)),
                Token::Conjunction | Token::Eos => None,
            })
            .collect();
        let clause = Clause(elements);
        if clause.tokens(world)? != tokens.iter().copied().filter(|t| *t != Token::Eos).collect::<Vec<_>>() {
            return Err(Error::Ungrammatical("conjunctions out of place".into()));
        }
        Ok(clause)
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Whitespace tokenizer over the template grammar; multi-word functional
/// terms collapse to one token (longest match first). Appends EOS.
pub fn tokenize(world: &ConceptWorld, text: &str) -> Result<Vec<Token>> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut phrases: Vec<(Vec<&str>, CompositionalId)> =
        world.term_ids().map(|g| (world.term(g).text.split(' ').collect(), g)).collect();
    phrases.sort_by_key(|(p, _)| std::cmp::Reverse(p.len()));

    let mut out = Vec::with_capacity(words.len() + 1);
    let mut i = 0;
    'outer: while i < words.len() {
        for (phrase, g) in &phrases {
            if words.len() - i >= phrase.len() && words[i..i + phrase.len()] == phrase[..] {
                out.push(Token::Term(*g));
                i += phrase.len();
                continue 'outer;
            }
        }
        let w = words[i];
        if let Some(x) = world.objects.iter().position(|o| o == w) {
            out.push(Token::Object(ConceptId(x)));
        } else if let Some(a) = world.attributes.iter().position(|o| o == w) {
            out.push(Token::Attribute(AttributeId(a)));
        } else if w == CONJUNCTION {
            out.push(Token::Conjunction);
        } else {
            return Err(Error::UnknownToken(w.to_string()));
        }
        i += 1;
    }
    out.push(Token::Eos);
    Ok(out)
}
