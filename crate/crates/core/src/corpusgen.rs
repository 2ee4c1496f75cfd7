//! Grammar-driven generation of labeled utterances.
//!
//! A grammar maps each intent signature to a start symbol of a finite
//! context-free grammar. Expanding a start symbol yields delexicalized
//! templates such as `i don't want <tag>`; instantiation binds placeholders
//! to schema vocabulary and attaches the bound intent sequence as the label.
//!
//! Placeholders carry a slot number (`<tag#1>`) so that compound signatures
//! can bind two independent values in one utterance.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clu::{
    cue_vocabulary, superlative_of, Inclusivity, Intent, ParseContext, Parser, PredicateType,
    SortDirection,
};
use crate::relatedness::Lexicon;
use crate::schema::{
    CategoryId, Facet, FacetId, FacetType, NudgeDirection, ProductCategory, Schema, SpanTarget,
    Tag, TagRef,
};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceholderKind {
    Tag,
    Span,
    Facet,
    Number,
    Number2,
    Comparative,
    Superlative,
    Category,
}

impl PlaceholderKind {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "tag" => Self::Tag,
            "span" => Self::Span,
            "facet" => Self::Facet,
            "number" => Self::Number,
            "number2" => Self::Number2,
            "comparative" => Self::Comparative,
            "superlative" => Self::Superlative,
            "category" => Self::Category,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::Tag => "tag",
            Self::Span => "span",
            Self::Facet => "facet",
            Self::Number => "number",
            Self::Number2 => "number2",
            Self::Comparative => "comparative",
            Self::Superlative => "superlative",
            Self::Category => "category",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Placeholder {
    pub kind: PlaceholderKind,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Symbol {
    Terminal(String),
    NonTerminal { name: String, slot_offset: usize },
    Placeholder(Placeholder),
}

impl Symbol {
    /// Reads one whitespace-delimited symbol: `_Name` or `(_Name)` is a
    /// nonterminal, `<kind>` or `<kind#n>` a placeholder, anything else a
    /// terminal word.
    pub fn parse(token: &str) -> Result<Self, GrammarError> {
        let bare = token
            .strip_prefix('(')
            .and_then(|t| t.strip_suffix(')'))
            .unwrap_or(token);
        if bare.starts_with('_') {
            return Ok(Symbol::NonTerminal {
                name: bare.to_string(),
                slot_offset: 0,
            });
        }
        if let Some(inner) = token.strip_prefix('<').and_then(|t| t.strip_suffix('>')) {
            let (name, slot) = match inner.split_once('#') {
                Some((n, s)) => (
                    n,
                    s.parse()
                        .map_err(|_| GrammarError::BadSymbol(token.to_string()))?,
                ),
                None => (inner, 0),
            };
            let kind = PlaceholderKind::parse(name)
                .ok_or_else(|| GrammarError::BadSymbol(token.to_string()))?;
            return Ok(Symbol::Placeholder(Placeholder { kind, slot }));
        }
        Ok(Symbol::Terminal(token.to_string()))
    }
}

/// A delexicalized utterance: terminals and placeholders only.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Template(pub Vec<Symbol>);

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let words: Vec<String> = self
            .0
            .iter()
            .map(|s| match s {
                Symbol::Terminal(t) => t.clone(),
                Symbol::Placeholder(p) if p.slot == 0 => format!("<{}>", p.kind.name()),
                Symbol::Placeholder(p) => format!("<{}#{}>", p.kind.name(), p.slot),
                Symbol::NonTerminal { name, .. } => name.clone(),
            })
            .collect();
        f.write_str(&tidy(&words.join(" ")))
    }
}

impl Template {
    pub fn placeholders(&self) -> BTreeSet<Placeholder> {
        self.0
            .iter()
            .filter_map(|s| match s {
                Symbol::Placeholder(p) => Some(*p),
                _ => None,
            })
            .collect()
    }
}

fn tidy(s: &str) -> String {
    s.replace(" ;", ";").replace(" ,", ",")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrammarRule {
    pub name: String,
    pub alternatives: Vec<Vec<Symbol>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    /// Tag of a facet without numeric values.
    Tag,
    /// Tag of an ORDERED facet without numeric values.
    #[serde(rename = "otag")]
    OrderedTag,
    /// Tag of a NUMERIC facet that carries a value.
    #[serde(rename = "ntag")]
    NumericTag,
    Span,
    /// `<number>` on the category's currency facet.
    Price,
    /// `<number2>` on the category's currency facet.
    Price2,
    /// `<number>` on a non-currency NUMERIC facet.
    #[serde(rename = "fnum")]
    FacetNumber,
    /// `<number2>` on a non-currency NUMERIC facet.
    #[serde(rename = "fnum2")]
    FacetNumber2,
}

/// One intent of a signature, unbound to facet or tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    tag = "operator",
    rename_all = "SCREAMING_SNAKE_CASE",
    deny_unknown_fields
)]
pub enum IntentPattern {
    SetValue {
        value: ValueKind,
        predicate_type: PredicateType,
        #[serde(default)]
        inclusivity: Inclusivity,
        #[serde(default)]
        slot: usize,
    },
    ClearValue {
        value: ValueKind,
        #[serde(default)]
        slot: usize,
    },
    ClearFacet {
        #[serde(default)]
        slot: usize,
    },
    ClearAllFacets,
    NudgeFacet {
        nudge_direction: NudgeDirection,
        #[serde(default)]
        slot: usize,
    },
    OrderBy {
        sort_direction: SortDirection,
        #[serde(default)]
        slot: usize,
    },
}

impl IntentPattern {
    fn slot(&self) -> Option<usize> {
        match self {
            IntentPattern::SetValue { slot, .. }
            | IntentPattern::ClearValue { slot, .. }
            | IntentPattern::ClearFacet { slot }
            | IntentPattern::NudgeFacet { slot, .. }
            | IntentPattern::OrderBy { slot, .. } => Some(*slot),
            IntentPattern::ClearAllFacets => None,
        }
    }

    fn shifted(&self, by: usize) -> Self {
        let mut p = self.clone();
        match &mut p {
            IntentPattern::SetValue { slot, .. }
            | IntentPattern::ClearValue { slot, .. }
            | IntentPattern::ClearFacet { slot }
            | IntentPattern::NudgeFacet { slot, .. }
            | IntentPattern::OrderBy { slot, .. } => *slot += by,
            IntentPattern::ClearAllFacets => {}
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentSignature {
    pub id: String,
    pub start: String,
    pub intents: Vec<IntentPattern>,
}

impl IntentSignature {
    pub fn slot_count(&self) -> usize {
        self.intents
            .iter()
            .filter_map(IntentPattern::slot)
            .map(|s| s + 1)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledUtterance {
    pub text: String,
    pub category: CategoryId,
    pub signature: String,
    pub intents: Vec<Intent>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("malformed grammar document: {0}")]
    Malformed(String),
    #[error("bad symbol '{0}'")]
    BadSymbol(String),
    #[error("unknown nonterminal '{0}'")]
    UnknownNonTerminal(String),
    #[error("grammar is recursive through '{0}'")]
    Recursive(String),
    #[error("duplicate signature '{0}'")]
    DuplicateSignature(String),
    #[error("start symbol '{0}' is used by more than one signature")]
    SharedStart(String),
    #[error("unknown signature '{0}'")]
    UnknownSignature(String),
    #[error("signature '{signature}': {message}")]
    BadSignature { signature: String, message: String },
    #[error("no schema vocabulary for {0}")]
    NoVocabulary(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompoundDoc {
    parts: [String; 2],
    joiner: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrammarDoc {
    #[serde(default = "default_weight")]
    weight: f64,
    #[serde(default = "default_range")]
    default_number_range: [f64; 2],
    #[serde(default)]
    span_fillers: Vec<String>,
    rules: BTreeMap<String, Vec<String>>,
    signatures: Vec<IntentSignature>,
    #[serde(default)]
    compounds: Vec<CompoundDoc>,
}

fn default_weight() -> f64 {
    0.5
}

fn default_range() -> [f64; 2] {
    [10.0, 500.0]
}

#[derive(Debug, Clone)]
pub struct Grammar {
    pub rules: BTreeMap<String, GrammarRule>,
    pub signatures: Vec<IntentSignature>,
    pub span_fillers: Vec<String>,
    pub default_number_range: [f64; 2],
    pub weight: f64,
}

pub fn load_grammar(bytes: &[u8]) -> Result<Grammar, GrammarError> {
    let doc: GrammarDoc =
        serde_json::from_slice(bytes).map_err(|e| GrammarError::Malformed(e.to_string()))?;
    let mut rules = BTreeMap::new();
    for (name, alts) in doc.rules {
        if !name.starts_with('_') {
            return Err(GrammarError::BadSymbol(name));
        }
        let alternatives = alts
            .iter()
            .map(|a| {
                a.split_whitespace()
                    .map(Symbol::parse)
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        rules.insert(name.clone(), GrammarRule { name, alternatives });
    }
    let mut signatures = doc.signatures;
    for c in doc.compounds {
        let find = |id: &str| {
            signatures
                .iter()
                .find(|s| s.id == id)
                .cloned()
                .ok_or_else(|| GrammarError::UnknownSignature(id.to_string()))
        };
        let (a, b) = (find(&c.parts[0])?, find(&c.parts[1])?);
        let offset = a.slot_count();
        let start = format!("{}+{}", a.start, b.start);
        let nonterminal = |name: &str, slot_offset| Symbol::NonTerminal {
            name: name.to_string(),
            slot_offset,
        };
        rules.insert(
            start.clone(),
            GrammarRule {
                name: start.clone(),
                alternatives: vec![vec![
                    nonterminal(&a.start, 0),
                    nonterminal(&c.joiner, 0),
                    nonterminal(&b.start, offset),
                ]],
            },
        );
        let intents = a
            .intents
            .iter()
            .cloned()
            .chain(b.intents.iter().map(|p| p.shifted(offset)))
            .collect();
        signatures.push(IntentSignature {
            id: format!("{} + {}", a.id, b.id),
            start,
            intents,
        });
    }
    let grammar = Grammar {
        rules,
        signatures,
        span_fillers: doc.span_fillers,
        default_number_range: doc.default_number_range,
        weight: doc.weight,
    };
    grammar.validate()?;
    Ok(grammar)
}

impl Grammar {
    fn validate(&self) -> Result<(), GrammarError> {
        let mut ids = BTreeSet::new();
        let mut starts = BTreeSet::new();
        for s in &self.signatures {
            if !ids.insert(&s.id) {
                return Err(GrammarError::DuplicateSignature(s.id.clone()));
            }
            if !starts.insert(&s.start) {
                return Err(GrammarError::SharedStart(s.start.clone()));
            }
            if !self.rules.contains_key(&s.start) {
                return Err(GrammarError::UnknownNonTerminal(s.start.clone()));
            }
        }
        let mut state = HashMap::new();
        for name in self.rules.keys() {
            self.check_acyclic(name, &mut state)?;
        }
        if !(self.weight > 0.0 && self.weight <= 1.0) {
            return Err(GrammarError::Malformed(format!(
                "weight {} outside (0, 1]",
                self.weight
            )));
        }
        Ok(())
    }

    fn check_acyclic<'g>(
        &'g self,
        name: &'g str,
        state: &mut HashMap<&'g str, bool>,
    ) -> Result<(), GrammarError> {
        match state.get(name) {
            Some(true) => return Ok(()),
            Some(false) => return Err(GrammarError::Recursive(name.to_string())),
            None => {}
        }
        let rule = self
            .rules
            .get(name)
            .ok_or_else(|| GrammarError::UnknownNonTerminal(name.to_string()))?;
        state.insert(name, false);
        for alt in &rule.alternatives {
            for sym in alt {
                if let Symbol::NonTerminal { name: child, .. } = sym {
                    self.check_acyclic(child, state)?;
                }
            }
        }
        state.insert(name, true);
        Ok(())
    }

    pub fn signature(&self, id: &str) -> Option<&IntentSignature> {
        self.signatures.iter().find(|s| s.id == id)
    }

    /// Every template derivable from `symbol`.
    pub fn expand_symbol(&self, symbol: &str) -> Result<Vec<Template>, GrammarError> {
        let mut memo = HashMap::new();
        let mut visiting = BTreeSet::new();
        self.expand_rule(symbol, &mut memo, &mut visiting)
            .map(|seqs| seqs.into_iter().map(Template).collect())
    }

    fn expand_rule(
        &self,
        name: &str,
        memo: &mut HashMap<String, Vec<Vec<Symbol>>>,
        visiting: &mut BTreeSet<String>,
    ) -> Result<Vec<Vec<Symbol>>, GrammarError> {
        if let Some(done) = memo.get(name) {
            return Ok(done.clone());
        }
        if !visiting.insert(name.to_string()) {
            return Err(GrammarError::Recursive(name.to_string()));
        }
        let rule = self
            .rules
            .get(name)
            .ok_or_else(|| GrammarError::UnknownNonTerminal(name.to_string()))?;
        let mut out = Vec::new();
        for alt in &rule.alternatives {
            let mut partial: Vec<Vec<Symbol>> = vec![Vec::new()];
            for sym in alt {
                let options: Vec<Vec<Symbol>> = match sym {
                    Symbol::NonTerminal { name, slot_offset } => self
                        .expand_rule(name, memo, visiting)?
                        .into_iter()
                        .map(|seq| shift(seq, *slot_offset))
                        .collect(),
                    other => vec![vec![other.clone()]],
                };
                partial = partial
                    .iter()
                    .flat_map(|p| {
                        options.iter().map(move |o| {
                            let mut v = p.clone();
                            v.extend(o.iter().cloned());
                            v
                        })
                    })
                    .collect();
            }
            out.extend(partial);
        }
        visiting.remove(name);
        memo.insert(name.to_string(), out.clone());
        Ok(out)
    }
}

fn shift(seq: Vec<Symbol>, by: usize) -> Vec<Symbol> {
    if by == 0 {
        return seq;
    }
    seq.into_iter()
        .map(|s| match s {
            Symbol::Placeholder(p) => Symbol::Placeholder(Placeholder {
                kind: p.kind,
                slot: p.slot + by,
            }),
            other => other,
        })
        .collect()
}

/// Full cartesian expansion of a signature's start symbol.
pub fn expand_templates(
    grammar: &Grammar,
    signature: &IntentSignature,
) -> Result<Vec<Template>, GrammarError> {
    grammar.expand_symbol(&signature.start)
}

/// What a slot has to bind to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Role {
    Value(ValueKind),
    Facet,
    Nudge(NudgeDirection),
    Order(SortDirection),
}

/// A concrete binding of one slot.
#[derive(Debug, Clone, Default)]
struct Binding {
    facet: Option<FacetId>,
    tag: Option<TagRef>,
    tag_surfaces: Vec<String>,
    facet_surfaces: Vec<String>,
    phrase: Option<String>,
    span: Option<String>,
    numbers: [f64; 2],
}

impl Binding {
    /// Identity that must not repeat across the slots of one utterance.
    fn key(&self, role: Role) -> Option<String> {
        if let Some(t) = &self.tag {
            return Some(format!("tag:{}/{}", t.facet.0, t.tag.0));
        }
        if let Some(s) = &self.span {
            return Some(format!("span:{s}"));
        }
        match role {
            Role::Facet => self.facet.as_ref().map(|f| format!("facet:{}", f.0)),
            _ => None,
        }
    }
}

/// Vocabulary of one category that renders unambiguously.
struct CategoryVocab<'s> {
    category: &'s ProductCategory,
    tags: Vec<(&'s Facet, &'s Tag, Vec<String>)>,
    facet_names: HashMap<FacetId, Vec<String>>,
    spans: Vec<String>,
    triggers: Vec<String>,
}

struct Vocabulary<'s> {
    categories: Vec<CategoryVocab<'s>>,
}

fn reserved(tokens: &[String], cues: &BTreeSet<&str>) -> bool {
    tokens
        .iter()
        .any(|t| cues.contains(t.as_str()) || text::is_separator(t))
}

impl<'s> Vocabulary<'s> {
    fn new(schema: &'s Schema, lexicon: &Lexicon, span_fillers: &[String]) -> Self {
        let cues = cue_vocabulary();
        let mut categories = Vec::new();
        for category in schema.categories() {
            let unique = |tokens: &[String], target: &SpanTarget| -> bool {
                if tokens.is_empty()
                    || reserved(tokens, &cues)
                    || !schema.match_triggers(tokens).is_empty()
                {
                    return false;
                }
                match schema.lookup_spans(&category.id, tokens) {
                    Ok(anns) => {
                        anns.len() == 1
                            && anns[0].start == 0
                            && anns[0].end == tokens.len()
                            && anns[0].targets.as_slice() == std::slice::from_ref(target)
                    }
                    Err(_) => false,
                }
            };
            let mut tags = Vec::new();
            let mut facet_names = HashMap::new();
            for facet in &category.facets {
                for tag in &facet.tags {
                    let target = SpanTarget::Tag(TagRef::new(facet.id.0.clone(), tag.id.0.clone()));
                    let mut surfaces: Vec<String> = tag
                        .surfaces()
                        .map(text::normalize)
                        .filter(|toks| unique(toks, &target))
                        .map(|toks| toks.join(" "))
                        .collect();
                    if let Some(v) = tag
                        .value
                        .filter(|v| v.fract() == 0.0 && *v >= 2.0 && *v < 1000.0)
                    {
                        if surfaces.iter().any(|s| text::parse_number(s) == Some(v)) {
                            surfaces.push(number_words(v as u32));
                        }
                    }
                    surfaces.dedup();
                    if !surfaces.is_empty() {
                        tags.push((facet, tag, surfaces));
                    }
                }
                let target = SpanTarget::Facet(facet.id.clone());
                let names: Vec<String> = facet
                    .name_synonyms
                    .iter()
                    .chain(std::iter::once(&facet.display_name))
                    .map(|s| text::normalize(s))
                    .filter(|toks| unique(toks, &target))
                    .map(|toks| toks.join(" "))
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                if !names.is_empty() {
                    facet_names.insert(facet.id.clone(), names);
                }
            }
            let spans = span_fillers
                .iter()
                .map(|s| text::normalize(s))
                .filter(|toks| {
                    !toks.is_empty()
                        && !text::is_stop_word(&toks[0])
                        && !text::is_stop_word(&toks[toks.len() - 1])
                        && !toks.iter().any(|t| text::is_number(t))
                        && !reserved(toks, &cues)
                        && schema.match_triggers(toks).is_empty()
                        && schema
                            .lookup_spans(&category.id, toks)
                            .is_ok_and(|a| a.is_empty())
                        && lexicon.lookup(&category.id, &toks.join(" ")).is_none()
                })
                .map(|toks| toks.join(" "))
                .collect();
            let triggers = category
                .trigger_phrases
                .iter()
                .map(|t| text::normalize(t))
                .filter(|toks| {
                    let m = schema.match_triggers(toks);
                    m.len() == 1
                        && m[0] == (0, toks.len(), category.id.clone())
                        && !reserved(toks, &cues)
                })
                .map(|toks| toks.join(" "))
                .collect();
            categories.push(CategoryVocab {
                category,
                tags,
                facet_names,
                spans,
                triggers,
            });
        }
        Self { categories }
    }
}

impl CategoryVocab<'_> {
    fn numeric_range(&self, facet: &Facet, default: [f64; 2]) -> [f64; 2] {
        let values: Vec<f64> = facet.tags.iter().filter_map(|t| t.value).collect();
        match (
            values.iter().copied().reduce(f64::min),
            values.iter().copied().reduce(f64::max),
        ) {
            (Some(lo), Some(hi)) if lo < hi => [lo, hi],
            _ => default,
        }
    }

    /// Comparative phrases of one direction owned by a single facet.
    fn comparatives(&self, direction: NudgeDirection) -> Vec<(&Facet, String)> {
        let mut owners: HashMap<String, usize> = HashMap::new();
        for f in &self.category.facets {
            for phrase in f.comparatives.keys() {
                *owners.entry(text::normalize(phrase).join(" ")).or_default() += 1;
            }
        }
        let cues = cue_vocabulary();
        self.category
            .facets
            .iter()
            .flat_map(|f| {
                f.comparatives
                    .iter()
                    .filter(move |(_, d)| **d == direction)
                    .map(move |(p, _)| (f, text::normalize(p)))
            })
            .filter(|(_, toks)| owners.get(&toks.join(" ")) == Some(&1))
            .filter(|(_, toks)| toks.len() == 1 || !reserved(toks, &cues))
            .map(|(f, toks)| (f, toks.join(" ")))
            .collect()
    }

    /// Candidate bindings for a slot, or an empty list.
    fn candidates(&self, role: Role, uses: &BTreeSet<PlaceholderKind>) -> Vec<Binding> {
        let needs_name = uses.contains(&PlaceholderKind::Facet);
        let with_names = |f: &Facet| self.facet_names.get(&f.id).cloned().unwrap_or_default();
        let named_ok = |f: &Facet| !needs_name || self.facet_names.contains_key(&f.id);
        let tag_binding = |f: &Facet, t: &Tag, surfaces: &[String]| Binding {
            facet: Some(f.id.clone()),
            tag: Some(TagRef::new(f.id.0.clone(), t.id.0.clone())),
            tag_surfaces: surfaces.to_vec(),
            facet_surfaces: with_names(f),
            ..Binding::default()
        };
        match role {
            Role::Value(kind) => match kind {
                ValueKind::Tag | ValueKind::OrderedTag | ValueKind::NumericTag => self
                    .tags
                    .iter()
                    .filter(|(f, t, _)| match kind {
                        ValueKind::Tag => !f.has_type(FacetType::Numeric),
                        ValueKind::OrderedTag => {
                            f.has_type(FacetType::Ordered) && !f.has_type(FacetType::Numeric)
                        }
                        _ => f.has_type(FacetType::Numeric) && t.value.is_some(),
                    })
                    .filter(|(f, _, _)| named_ok(f))
                    .map(|(f, t, s)| tag_binding(f, t, s))
                    .collect(),
                ValueKind::Span => self
                    .spans
                    .iter()
                    .map(|s| Binding {
                        span: Some(s.clone()),
                        ..Binding::default()
                    })
                    .collect(),
                ValueKind::Price | ValueKind::Price2 => self
                    .category
                    .currency_facet()
                    .filter(|f| named_ok(f))
                    .map(|f| Binding {
                        facet: Some(f.id.clone()),
                        facet_surfaces: with_names(f),
                        ..Binding::default()
                    })
                    .into_iter()
                    .collect(),
                ValueKind::FacetNumber | ValueKind::FacetNumber2 => self
                    .category
                    .facets
                    .iter()
                    .filter(|f| {
                        f.has_type(FacetType::Numeric)
                            && !f.is_currency()
                            && self.facet_names.contains_key(&f.id)
                    })
                    .map(|f| Binding {
                        facet: Some(f.id.clone()),
                        facet_surfaces: with_names(f),
                        ..Binding::default()
                    })
                    .collect(),
            },
            Role::Facet => self
                .category
                .facets
                .iter()
                .filter(|f| self.facet_names.contains_key(&f.id))
                .map(|f| Binding {
                    facet: Some(f.id.clone()),
                    facet_surfaces: with_names(f),
                    ..Binding::default()
                })
                .collect(),
            Role::Nudge(dir) => {
                if uses.contains(&PlaceholderKind::Comparative) {
                    self.comparatives(dir)
                        .into_iter()
                        .filter(|(f, _)| named_ok(f))
                        .map(|(f, p)| Binding {
                            facet: Some(f.id.clone()),
                            facet_surfaces: with_names(f),
                            phrase: Some(p),
                            ..Binding::default()
                        })
                        .collect()
                } else {
                    self.ordered_named()
                }
            }
            Role::Order(dir) => {
                if uses.contains(&PlaceholderKind::Superlative) {
                    let nudge = match dir {
                        SortDirection::Ascending => NudgeDirection::Negative,
                        SortDirection::Descending => NudgeDirection::Positive,
                    };
                    self.comparatives(nudge)
                        .into_iter()
                        .filter(|(f, _)| named_ok(f))
                        .filter_map(|(f, p)| {
                            let sup = superlative_of(&p)?;
                            let toks = text::normalize(&sup);
                            let taken = toks.iter().any(|t| cue_vocabulary().contains(t.as_str()));
                            (!taken).then(|| Binding {
                                facet: Some(f.id.clone()),
                                facet_surfaces: with_names(f),
                                phrase: Some(toks.join(" ")),
                                ..Binding::default()
                            })
                        })
                        .collect()
                } else {
                    self.ordered_named()
                }
            }
        }
    }

    fn ordered_named(&self) -> Vec<Binding> {
        self.category
            .facets
            .iter()
            .filter(|f| f.is_ordered())
            .filter_map(|f| {
                let names = self.facet_names.get(&f.id)?;
                Some(Binding {
                    facet: Some(f.id.clone()),
                    facet_surfaces: names.clone(),
                    ..Binding::default()
                })
            })
            .collect()
    }
}

/// English words for 1..=999. The tokenizer folds them back to digits,
/// except a bare "one".
pub fn number_words(n: u32) -> String {
    const ONES: [&str; 20] = [
        "zero",
        "one",
        "two",
        "three",
        "four",
        "five",
        "six",
        "seven",
        "eight",
        "nine",
        "ten",
        "eleven",
        "twelve",
        "thirteen",
        "fourteen",
        "fifteen",
        "sixteen",
        "seventeen",
        "eighteen",
        "nineteen",
    ];
    const TENS: [&str; 10] = [
        "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
    ];
    let below_hundred = |n: u32| -> String {
        if n < 20 {
            ONES[n as usize].to_string()
        } else if n.is_multiple_of(10) {
            TENS[(n / 10) as usize].to_string()
        } else {
            format!("{} {}", TENS[(n / 10) as usize], ONES[(n % 10) as usize])
        }
    };
    if n < 100 {
        return below_hundred(n);
    }
    let head = format!("{} hundred", ONES[(n / 100) as usize]);
    match n % 100 {
        0 => head,
        rest => format!("{head} {}", below_hundred(rest)),
    }
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v:.2}")
    }
}

/// Generator over one grammar, schema and lexicon.
pub struct CorpusGenerator<'g> {
    grammar: &'g Grammar,
    vocab: Vocabulary<'g>,
    expansions: Vec<(&'g IntentSignature, Vec<Template>)>,
    prepared: Vec<Vec<Prepared>>,
    pool: Vec<Vec<Binding>>,
}

struct SlotPlan {
    role: Role,
    uses: BTreeSet<PlaceholderKind>,
}

/// A template with its slot plans and, per category that can bind every
/// slot, the candidate lists (indices into the generator's pool).
struct Prepared {
    template: Template,
    plans: Vec<SlotPlan>,
    options: Vec<(usize, Vec<usize>)>,
}

/// Consecutive failed draws after which a signature counts as unsatisfiable.
const MAX_ATTEMPTS: usize = 1000;

impl<'g> CorpusGenerator<'g> {
    pub fn new(
        grammar: &'g Grammar,
        schema: &'g Schema,
        lexicon: &Lexicon,
    ) -> Result<Self, GrammarError> {
        let vocab = Vocabulary::new(schema, lexicon, &grammar.span_fillers);
        let mut expansions = Vec::new();
        for sig in &grammar.signatures {
            expansions.push((sig, expand_templates(grammar, sig)?));
        }
        let mut pool = Vec::new();
        let mut pooled: HashMap<(usize, Role, BTreeSet<PlaceholderKind>), usize> = HashMap::new();
        let mut prepared = Vec::new();
        for (sig, templates) in &expansions {
            let mut per_sig = Vec::new();
            for template in templates {
                let plans = Self::plan(sig, template)?;
                let needs_category = template
                    .placeholders()
                    .iter()
                    .any(|p| p.kind == PlaceholderKind::Category);
                let mut options = Vec::new();
                for (ci, v) in vocab.categories.iter().enumerate() {
                    if needs_category && v.triggers.is_empty() {
                        continue;
                    }
                    let mut lists = Vec::new();
                    for plan in &plans {
                        let key = (ci, plan.role, plan.uses.clone());
                        let idx = *pooled.entry(key).or_insert_with(|| {
                            pool.push(v.candidates(plan.role, &plan.uses));
                            pool.len() - 1
                        });
                        lists.push(idx);
                    }
                    if lists.iter().all(|&i| !pool[i].is_empty()) {
                        options.push((ci, lists));
                    }
                }
                if !options.is_empty() {
                    per_sig.push(Prepared {
                        template: template.clone(),
                        plans,
                        options,
                    });
                }
            }
            prepared.push(per_sig);
        }
        Ok(Self {
            grammar,
            vocab,
            expansions,
            prepared,
            pool,
        })
    }

    pub fn signatures(&self) -> impl Iterator<Item = (&IntentSignature, &[Template])> {
        self.expansions.iter().map(|(s, t)| (*s, t.as_slice()))
    }

    /// Signatures with at least one template the schema can instantiate.
    pub fn instantiable(&self) -> impl Iterator<Item = &IntentSignature> {
        self.expansions
            .iter()
            .zip(&self.prepared)
            .filter(|(_, p)| !p.is_empty())
            .map(|((s, _), _)| *s)
    }

    fn plan(
        signature: &IntentSignature,
        template: &Template,
    ) -> Result<Vec<SlotPlan>, GrammarError> {
        let bad = |message: String| GrammarError::BadSignature {
            signature: signature.id.clone(),
            message,
        };
        let mut plans: BTreeMap<usize, SlotPlan> = BTreeMap::new();
        for p in &signature.intents {
            let Some(slot) = p.slot() else { continue };
            let role = match p {
                IntentPattern::SetValue { value, .. } | IntentPattern::ClearValue { value, .. } => {
                    Role::Value(*value)
                }
                IntentPattern::ClearFacet { .. } => Role::Facet,
                IntentPattern::NudgeFacet {
                    nudge_direction, ..
                } => Role::Nudge(*nudge_direction),
                IntentPattern::OrderBy { sort_direction, .. } => Role::Order(*sort_direction),
                IntentPattern::ClearAllFacets => unreachable!("no slot"),
            };
            match plans.get(&slot) {
                Some(existing) if !compatible(existing.role, role) => {
                    return Err(bad(format!("slot {slot} used with two roles")));
                }
                Some(_) => {}
                None => {
                    plans.insert(
                        slot,
                        SlotPlan {
                            role,
                            uses: BTreeSet::new(),
                        },
                    );
                }
            }
        }
        for ph in template.placeholders() {
            match plans.get_mut(&ph.slot) {
                Some(plan) => {
                    plan.uses.insert(ph.kind);
                }
                None if ph.kind == PlaceholderKind::Category => {}
                None => {
                    return Err(bad(format!(
                        "placeholder <{}#{}> has no intent",
                        ph.kind.name(),
                        ph.slot
                    )))
                }
            }
        }
        let count = plans.keys().next_back().map_or(0, |m| m + 1);
        if plans.len() != count {
            return Err(bad("slots are not numbered consecutively".into()));
        }
        Ok(plans.into_values().collect())
    }

    /// Draws one labeled utterance. Returns `None` when the random choices
    /// left a slot without an unused candidate.
    fn draw(
        &self,
        signature: &IntentSignature,
        prepared: &Prepared,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<LabeledUtterance>, GrammarError> {
        let template = &prepared.template;
        let plans = &prepared.plans;
        let (ci, lists) = prepared
            .options
            .choose(rng)
            .expect("prepared options are non-empty");
        let vocab = &self.vocab.categories[*ci];
        let default_range = self.grammar.default_number_range;
        let mut bindings: Vec<Binding> = Vec::new();
        let mut taken: BTreeSet<String> = BTreeSet::new();
        for (plan, &list) in plans.iter().zip(lists) {
            let fresh: Vec<&Binding> = self.pool[list]
                .iter()
                .filter(|b| b.key(plan.role).is_none_or(|k| !taken.contains(&k)))
                .collect();
            let Some(chosen) = fresh.choose(rng) else {
                return Ok(None);
            };
            let mut b = (*chosen).clone();
            if let Some(k) = b.key(plan.role) {
                taken.insert(k);
            }
            if let Role::Value(kind) = plan.role {
                if matches!(
                    kind,
                    ValueKind::Price
                        | ValueKind::Price2
                        | ValueKind::FacetNumber
                        | ValueKind::FacetNumber2
                ) {
                    let facet = vocab
                        .category
                        .facet(b.facet.as_ref().expect("numeric binding"))
                        .expect("facet");
                    b.numbers = draw_numbers(
                        vocab.numeric_range(facet, default_range),
                        kind == ValueKind::Price,
                        rng,
                    );
                }
            }
            bindings.push(b);
        }

        let mut words: Vec<String> = Vec::new();
        for sym in &template.0 {
            match sym {
                Symbol::Terminal(t) => words.push(t.clone()),
                Symbol::NonTerminal { name, .. } => {
                    return Err(GrammarError::UnknownNonTerminal(name.clone()))
                }
                Symbol::Placeholder(p) if p.kind == PlaceholderKind::Category => {
                    words.push(vocab.triggers.choose(rng).expect("trigger").clone());
                }
                Symbol::Placeholder(p) => {
                    let b = &bindings[p.slot];
                    let currency = matches!(
                        plans[p.slot].role,
                        Role::Value(ValueKind::Price | ValueKind::Price2)
                    );
                    let rendered = match p.kind {
                        PlaceholderKind::Tag => b.tag_surfaces.choose(rng).cloned(),
                        PlaceholderKind::Span => b.span.clone(),
                        PlaceholderKind::Facet => b.facet_surfaces.choose(rng).cloned(),
                        PlaceholderKind::Comparative | PlaceholderKind::Superlative => {
                            b.phrase.clone()
                        }
                        PlaceholderKind::Number | PlaceholderKind::Number2 => {
                            let v = b.numbers[usize::from(p.kind == PlaceholderKind::Number2)];
                            Some(render_number(v, currency, rng))
                        }
                        PlaceholderKind::Category => unreachable!(),
                    };
                    let rendered = rendered.ok_or_else(|| GrammarError::BadSignature {
                        signature: signature.id.clone(),
                        message: format!("slot {} cannot render <{}>", p.slot, p.kind.name()),
                    })?;
                    words.push(rendered);
                }
            }
        }

        let intents = signature
            .intents
            .iter()
            .map(|p| bind_intent(p, &bindings, vocab.category))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| GrammarError::BadSignature {
                signature: signature.id.clone(),
                message: "binding does not fit the intent pattern".into(),
            })?;
        Ok(Some(LabeledUtterance {
            text: tidy(&words.join(" ")),
            category: vocab.category.id.clone(),
            signature: signature.id.clone(),
            intents,
            weight: self.grammar.weight,
        }))
    }

    fn draw_from(
        &self,
        signature: &IntentSignature,
        prepared: &[Prepared],
        rng: &mut ChaCha8Rng,
    ) -> Result<LabeledUtterance, GrammarError> {
        for _ in 0..MAX_ATTEMPTS {
            let p = prepared
                .choose(rng)
                .ok_or_else(|| GrammarError::NoVocabulary(signature.id.clone()))?;
            if let Some(u) = self.draw(signature, p, rng)? {
                return Ok(u);
            }
        }
        Err(GrammarError::NoVocabulary(signature.id.clone()))
    }

    /// `n` utterances for one signature.
    pub fn instantiate_signature(
        &self,
        id: &str,
        n: usize,
        seed: u64,
    ) -> Result<Vec<LabeledUtterance>, GrammarError> {
        let pos = self
            .expansions
            .iter()
            .position(|(s, _)| s.id == id)
            .ok_or_else(|| GrammarError::UnknownSignature(id.to_string()))?;
        let signature = self.expansions[pos].0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| self.draw_from(signature, &self.prepared[pos], &mut rng))
            .collect()
    }

    /// `n` utterances over all instantiable signatures, signature chosen
    /// uniformly per item.
    pub fn instantiate(&self, n: usize, seed: u64) -> Result<Vec<LabeledUtterance>, GrammarError> {
        let usable: Vec<usize> = (0..self.expansions.len())
            .filter(|&i| !self.prepared[i].is_empty())
            .collect();
        if n > 0 && usable.is_empty() {
            return Err(GrammarError::NoVocabulary("any signature".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let i = *usable.choose(&mut rng).expect("non-empty");
                self.draw_from(self.expansions[i].0, &self.prepared[i], &mut rng)
            })
            .collect()
    }
}

/// Two integers `a < b` in `[lo, hi]`; `a` sometimes gets a `.99` price ending.
fn draw_numbers([lo, hi]: [f64; 2], price: bool, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let (lo, hi) = (lo.ceil() as i64, hi.floor() as i64);
    let a = rng.random_range(lo..hi);
    let b = rng.random_range(a + 1..=hi);
    let mut first = a as f64;
    if price && a + 1 < b && rng.random_bool(0.15) {
        first += 0.99;
    }
    [first, b as f64]
}

fn compatible(a: Role, b: Role) -> bool {
    use ValueKind::*;
    match (a, b) {
        (Role::Value(x), Role::Value(y)) => {
            x == y
                || matches!(
                    (x, y),
                    (Price, Price2)
                        | (Price2, Price)
                        | (FacetNumber, FacetNumber2)
                        | (FacetNumber2, FacetNumber)
                )
        }
        _ => a == b,
    }
}

fn render_number(v: f64, currency: bool, rng: &mut ChaCha8Rng) -> String {
    let digits = format_number(v);
    let integral = v.fract() == 0.0 && (2.0..1000.0).contains(&v);
    let words = integral.then(|| number_words(v as u32));
    if currency {
        let mut forms = vec![
            format!("${digits}"),
            format!("{digits} dollars"),
            format!("{digits} bucks"),
        ];
        if let Some(w) = words {
            forms.push(format!("{w} dollars"));
            forms.push(format!("{w} bucks"));
        }
        forms.choose(rng).expect("forms").clone()
    } else {
        match words {
            Some(w) if rng.random_bool(0.3) => w,
            _ => digits,
        }
    }
}

fn bind_intent(
    p: &IntentPattern,
    bindings: &[Binding],
    category: &ProductCategory,
) -> Option<Intent> {
    let b = |slot: usize| bindings.get(slot);
    Some(match p {
        IntentPattern::SetValue {
            value,
            predicate_type,
            inclusivity,
            slot,
        } => {
            let b = b(*slot)?;
            match value {
                ValueKind::Tag | ValueKind::OrderedTag | ValueKind::NumericTag => {
                    Intent::set_tag(b.tag.clone()?, *predicate_type, *inclusivity)
                }
                ValueKind::Span => Intent::set_span(b.span.clone()?, *predicate_type, *inclusivity),
                ValueKind::Price | ValueKind::FacetNumber => {
                    Intent::set_number(b.facet.clone()?, b.numbers[0], *predicate_type)
                }
                ValueKind::Price2 | ValueKind::FacetNumber2 => {
                    Intent::set_number(b.facet.clone()?, b.numbers[1], *predicate_type)
                }
            }
        }
        IntentPattern::ClearValue { value, slot } => {
            let b = b(*slot)?;
            match value {
                ValueKind::Span => Intent::clear_span(b.span.clone()?),
                _ => Intent::clear_tag(b.tag.clone()?),
            }
        }
        IntentPattern::ClearFacet { slot } => Intent::clear_facet(b(*slot)?.facet.clone()?),
        IntentPattern::ClearAllFacets => Intent::ClearAllFacets,
        IntentPattern::NudgeFacet {
            nudge_direction,
            slot,
        } => {
            let f = b(*slot)?.facet.clone()?;
            category.facet(&f)?;
            Intent::nudge(f, *nudge_direction)
        }
        IntentPattern::OrderBy {
            sort_direction,
            slot,
        } => Intent::order_by(b(*slot)?.facet.clone()?, *sort_direction),
    })
}

/// Samples `n` utterances from the whole grammar; deterministic in `seed`.
pub fn instantiate(
    grammar: &Grammar,
    schema: &Schema,
    lexicon: &Lexicon,
    n: usize,
    seed: u64,
) -> Result<Vec<LabeledUtterance>, GrammarError> {
    CorpusGenerator::new(grammar, schema, lexicon)?.instantiate(n, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub index: usize,
    pub text: String,
    pub expected: Vec<Intent>,
    pub actual: Result<Vec<Intent>, String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundTripReport {
    pub total: usize,
    pub exact_match: usize,
    pub mismatches: Vec<Mismatch>,
}

impl RoundTripReport {
    pub fn all_match(&self) -> bool {
        self.total == self.exact_match
    }
}

fn multiset(intents: &[Intent]) -> Vec<String> {
    let mut keys: Vec<String> = intents
        .iter()
        .map(|i| serde_json::to_string(i).expect("intent serializes"))
        .collect();
    keys.sort();
    keys
}

/// True when both sequences hold the same intents, order aside.
pub fn same_intents(a: &[Intent], b: &[Intent]) -> bool {
    multiset(a) == multiset(b)
}

/// Parses every item in its own category and compares with its label.
pub fn round_trip_eval(corpus: &[LabeledUtterance], parser: &Parser<'_>) -> RoundTripReport {
    let mut report = RoundTripReport {
        total: corpus.len(),
        ..RoundTripReport::default()
    };
    for (index, item) in corpus.iter().enumerate() {
        let context = ParseContext::in_category(item.category.0.clone());
        let actual = parser
            .parse(&item.text, &context)
            .map(|r| r.intents)
            .map_err(|e| e.to_string());
        match &actual {
            Ok(intents) if same_intents(intents, &item.intents) => report.exact_match += 1,
            _ => report.mismatches.push(Mismatch {
                index,
                text: item.text.clone(),
                expected: item.intents.clone(),
                actual,
            }),
        }
    }
    report
}

/// One JSON object per line.
pub fn write_jsonl(corpus: &[LabeledUtterance]) -> String {
    let mut out = String::new();
    for item in corpus {
        out.push_str(&serde_json::to_string(item).expect("utterance serializes"));
        out.push('\n');
    }
    out
}

pub fn read_jsonl(text: &str) -> Result<Vec<LabeledUtterance>, GrammarError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| GrammarError::Malformed(format!("line {}: {e}", n + 1)))
        })
        .collect()
}
