//! Contextual language understanding.
//!
//! Maps an utterance, interpreted against the current dialog context, to a
//! sequence of [`Intent`]s over six operators. The parser is a fixed set of
//! ordered cue rules applied clause by clause over schema-annotated tokens;
//! the rule inventory mirrors the generation grammar in [`crate::corpusgen`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::relatedness::Lexicon;
use crate::schema::{
    resolve_ambiguous_tag, Annotation, CategoryId, FacetEvidence, FacetId, NudgeDirection,
    ProductCategory, Schema, TagId, TagRef,
};
use crate::text::{self, CURRENCY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PredicateType {
    Equals,
    NotEquals,
    LessThan,
    LessEq,
    GreaterThan,
    GreaterEq,
}

impl PredicateType {
    pub fn is_range(self) -> bool {
        !matches!(self, PredicateType::Equals | PredicateType::NotEquals)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Inclusivity {
    Inclusive,
    Exclusive,
    #[default]
    Undefined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SortDirection {
    Ascending,
    Descending,
}

/// Argument of a tag-level operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Tag(TagRef),
    /// Ungrounded span: normalized tokens joined by single spaces.
    Span(String),
    Number(f64),
}

impl Value {
    pub fn as_tag(&self) -> Option<&TagRef> {
        match self {
            Value::Tag(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_span(&self) -> Option<&str> {
        match self {
            Value::Span(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "operator", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Intent {
    SetValue {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        facet: Option<FacetId>,
        value: Value,
        predicate_type: PredicateType,
        #[serde(default)]
        inclusivity: Inclusivity,
    },
    ClearValue {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        facet: Option<FacetId>,
        value: Value,
    },
    ClearFacet {
        facet: FacetId,
    },
    ClearAllFacets,
    NudgeFacet {
        facet: FacetId,
        nudge_direction: NudgeDirection,
    },
    OrderBy {
        facet: FacetId,
        sort_direction: SortDirection,
    },
}

impl Intent {
    pub fn set_tag(tag: TagRef, predicate_type: PredicateType, inclusivity: Inclusivity) -> Self {
        Intent::SetValue {
            facet: Some(tag.facet.clone()),
            value: Value::Tag(tag),
            predicate_type,
            inclusivity,
        }
    }

    pub fn set_span(
        span: impl Into<String>,
        predicate_type: PredicateType,
        inclusivity: Inclusivity,
    ) -> Self {
        Intent::SetValue {
            facet: None,
            value: Value::Span(span.into()),
            predicate_type,
            inclusivity,
        }
    }

    pub fn set_number(facet: FacetId, value: f64, predicate_type: PredicateType) -> Self {
        Intent::SetValue {
            facet: Some(facet),
            value: Value::Number(value),
            predicate_type,
            inclusivity: Inclusivity::Undefined,
        }
    }

    pub fn clear_tag(tag: TagRef) -> Self {
        Intent::ClearValue {
            facet: Some(tag.facet.clone()),
            value: Value::Tag(tag),
        }
    }

    pub fn clear_span(span: impl Into<String>) -> Self {
        Intent::ClearValue {
            facet: None,
            value: Value::Span(span.into()),
        }
    }

    pub fn clear_facet(facet: impl Into<FacetId>) -> Self {
        Intent::ClearFacet {
            facet: facet.into(),
        }
    }

    pub fn nudge(facet: impl Into<FacetId>, nudge_direction: NudgeDirection) -> Self {
        Intent::NudgeFacet {
            facet: facet.into(),
            nudge_direction,
        }
    }

    pub fn order_by(facet: impl Into<FacetId>, sort_direction: SortDirection) -> Self {
        Intent::OrderBy {
            facet: facet.into(),
            sort_direction,
        }
    }

    pub fn facet(&self) -> Option<&FacetId> {
        match self {
            Intent::SetValue { facet, .. } | Intent::ClearValue { facet, .. } => facet.as_ref(),
            Intent::ClearFacet { facet }
            | Intent::NudgeFacet { facet, .. }
            | Intent::OrderBy { facet, .. } => Some(facet),
            Intent::ClearAllFacets => None,
        }
    }

    pub fn is_clear(&self) -> bool {
        matches!(
            self,
            Intent::ClearValue { .. } | Intent::ClearFacet { .. } | Intent::ClearAllFacets
        )
    }
}

/// What the system asked last, if anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PromptKind {
    Refinement,
    Clarification,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseContext {
    pub active_category: Option<CategoryId>,
    pub last_touched_facet: Option<FacetId>,
    pub pending_prompt: Option<PromptKind>,
    /// Facets holding at least one predicate in the dialog state.
    pub constrained_facets: Vec<FacetId>,
}

impl ParseContext {
    pub fn in_category(category: impl Into<String>) -> Self {
        Self {
            active_category: Some(CategoryId(category.into())),
            ..Self::default()
        }
    }
}

impl FacetEvidence for ParseContext {
    fn last_touched_facet(&self) -> Option<&FacetId> {
        self.last_touched_facet.as_ref()
    }

    fn has_predicate_on(&self, facet: &FacetId) -> bool {
        self.constrained_facets.contains(facet)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    content = "category",
    rename_all = "SCREAMING_SNAKE_CASE"
)]
pub enum CategoryDecision {
    Keep,
    Switch(CategoryId),
    Initial(CategoryId),
}

impl CategoryDecision {
    pub fn category(&self) -> Option<&CategoryId> {
        match self {
            CategoryDecision::Keep => None,
            CategoryDecision::Switch(c) | CategoryDecision::Initial(c) => Some(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DialogAct {
    #[default]
    None,
    Affirm,
    Deny,
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseResult {
    pub intents: Vec<Intent>,
    pub category_decision: CategoryDecision,
    pub dialog_act: DialogAct,
    pub unparsed: bool,
}

impl ParseResult {
    fn new(
        intents: Vec<Intent>,
        category_decision: CategoryDecision,
        dialog_act: DialogAct,
    ) -> Self {
        let unparsed = intents.is_empty()
            && dialog_act == DialogAct::None
            && category_decision == CategoryDecision::Keep;
        Self {
            intents,
            category_decision,
            dialog_act,
            unparsed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("utterance mentions several product categories: {}", join(.0))]
    AmbiguousCategory(Vec<CategoryId>),
    #[error("'{span}' could refer to {}", join(.candidates))]
    AmbiguousTag {
        span: String,
        candidates: Vec<FacetId>,
    },
    #[error("cannot tell which facet '{cue}' refers to")]
    UnresolvedFacet { cue: String },
    #[error("unknown category '{0}'")]
    UnknownCategory(CategoryId),
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Whole-utterance dialog acts. Affirm and deny only count while a prompt is pending.
const DENY_PHRASES: &[&[&str]] = &[
    &["no"],
    &["nope"],
    &["no", "thanks"],
    &["no", "thank", "you"],
    &["that", "is", "all"],
    &["no", "that", "is", "all"],
    &["that", "is", "it"],
    &["nothing", "else"],
    &["i", "am", "good"],
    &["no", "i", "am", "good"],
    &["i", "am", "done"],
];
const AFFIRM_PHRASES: &[&[&str]] = &[
    &["yes"],
    &["yeah"],
    &["yep"],
    &["sure"],
    &["ok"],
    &["okay"],
    &["yes", "please"],
];
const RESET_PHRASES: &[&[&str]] = &[&["new", "search"], &["start", "a", "new", "search"]];

const RESET_CUES: &[&[&str]] = &[
    &["start", "over"],
    &["start", "again"],
    &["reset", "everything"],
    &["clear", "everything"],
    &["forget", "everything"],
    &["reset"],
    &["clear"],
];

const SORT_CUES: &[&[&str]] = &[
    &["sort", "by"],
    &["sorted", "by"],
    &["order", "by"],
    &["rank", "by"],
];
const ASCENDING_CUES: &[&[&str]] = &[
    &["low", "to", "high"],
    &["ascending"],
    &["increasing"],
    &["lowest", "first"],
];
const DESCENDING_CUES: &[&[&str]] = &[
    &["high", "to", "low"],
    &["descending"],
    &["decreasing"],
    &["highest", "first"],
];
const EXTREME_CUES: &[(&[&str], SortDirection)] = &[
    (&["lowest"], SortDirection::Ascending),
    (&["highest"], SortDirection::Descending),
];

const CLEAR_FACET_CUES: &[&[&str]] = &[
    &["does", "not", "matter"],
    &["do", "not", "matter"],
    &["do", "not", "care", "about"],
    &["does", "not", "care", "about"],
    &["do", "not", "care"],
    &["reset"],
    &["forget", "about"],
    &["forget"],
    &["clear"],
    &["whatever"],
];

const CLEAR_VALUE_CUES: &[&[&str]] = &[
    &["not", "have", "to", "be"],
    &["not", "need", "to", "be"],
    &["do", "not", "care", "if"],
    &["do", "not", "care", "whether"],
    &["do", "not", "care", "about"],
    &["do", "not", "mind", "if"],
    &["whether", "or", "not"],
];

const NUDGE_VERBS: &[(&str, NudgeDirection)] = &[
    ("increase", NudgeDirection::Positive),
    ("raise", NudgeDirection::Positive),
    ("decrease", NudgeDirection::Negative),
    ("reduce", NudgeDirection::Negative),
    ("lower", NudgeDirection::Negative),
];

#[derive(Debug, Clone, Copy, PartialEq)]
enum RangeCue {
    Prefix(PredicateType),
    Between,
}

const RANGE_CUES: &[(&[&str], RangeCue)] = &[
    (
        &["no", "more", "than"],
        RangeCue::Prefix(PredicateType::LessEq),
    ),
    (
        &["not", "more", "than"],
        RangeCue::Prefix(PredicateType::LessEq),
    ),
    (
        &["no", "less", "than"],
        RangeCue::Prefix(PredicateType::GreaterEq),
    ),
    (
        &["not", "less", "than"],
        RangeCue::Prefix(PredicateType::GreaterEq),
    ),
    (
        &["no", "fewer", "than"],
        RangeCue::Prefix(PredicateType::GreaterEq),
    ),
    (&["less", "than"], RangeCue::Prefix(PredicateType::LessThan)),
    (
        &["fewer", "than"],
        RangeCue::Prefix(PredicateType::LessThan),
    ),
    (
        &["lower", "than"],
        RangeCue::Prefix(PredicateType::LessThan),
    ),
    (
        &["more", "than"],
        RangeCue::Prefix(PredicateType::GreaterThan),
    ),
    (
        &["greater", "than"],
        RangeCue::Prefix(PredicateType::GreaterThan),
    ),
    (
        &["higher", "than"],
        RangeCue::Prefix(PredicateType::GreaterThan),
    ),
    (&["at", "least"], RangeCue::Prefix(PredicateType::GreaterEq)),
    (&["at", "most"], RangeCue::Prefix(PredicateType::LessEq)),
    (&["up", "to"], RangeCue::Prefix(PredicateType::LessEq)),
    (&["under"], RangeCue::Prefix(PredicateType::LessThan)),
    (&["below"], RangeCue::Prefix(PredicateType::LessThan)),
    (&["over"], RangeCue::Prefix(PredicateType::GreaterThan)),
    (&["above"], RangeCue::Prefix(PredicateType::GreaterThan)),
    (&["between"], RangeCue::Between),
];

const RANGE_SUFFIXES: &[(&[&str], PredicateType)] = &[
    (&["or", "more"], PredicateType::GreaterEq),
    (&["or", "higher"], PredicateType::GreaterEq),
    (&["or", "above"], PredicateType::GreaterEq),
    (&["or", "greater"], PredicateType::GreaterEq),
    (&["or", "bigger"], PredicateType::GreaterEq),
    (&["or", "less"], PredicateType::LessEq),
    (&["or", "fewer"], PredicateType::LessEq),
    (&["or", "lower"], PredicateType::LessEq),
    (&["or", "below"], PredicateType::LessEq),
    (&["or", "smaller"], PredicateType::LessEq),
    (&["or", "cheaper"], PredicateType::LessEq),
];

const NEGATION_CUES: &[&[&str]] = &[
    &["not"],
    &["no"],
    &["never"],
    &["without"],
    &["hate"],
    &["dislike"],
];
const EXCLUSIVE_CUES: &[&[&str]] = &[&["only"], &["just"], &["exclusively"]];
const INCLUSIVE_CUES: &[&[&str]] = &[&["also"], &["too"], &["as", "well"], &["additionally"]];

/// Words that join values inside a clause and never start or end a span.
const CONNECTORS: &[&str] = &["and", "or"];

/// Every token that takes part in a cue phrase or dialog act.
pub fn cue_vocabulary() -> BTreeSet<&'static str> {
    let phrase_lists: [&[&[&str]]; 12] = [
        DENY_PHRASES,
        AFFIRM_PHRASES,
        RESET_PHRASES,
        RESET_CUES,
        SORT_CUES,
        ASCENDING_CUES,
        DESCENDING_CUES,
        CLEAR_FACET_CUES,
        CLEAR_VALUE_CUES,
        NEGATION_CUES,
        EXCLUSIVE_CUES,
        INCLUSIVE_CUES,
    ];
    let mut out: BTreeSet<&'static str> = phrase_lists
        .iter()
        .flat_map(|l| l.iter().flat_map(|c| c.iter().copied()))
        .collect();
    out.extend(RANGE_CUES.iter().flat_map(|(c, _)| c.iter().copied()));
    out.extend(RANGE_SUFFIXES.iter().flat_map(|(c, _)| c.iter().copied()));
    out.extend(EXTREME_CUES.iter().flat_map(|(c, _)| c.iter().copied()));
    out.extend(NUDGE_VERBS.iter().map(|(v, _)| *v));
    out.extend(CONNECTORS.iter().copied());
    out.extend(["but", "between", "than", "first", "any", CURRENCY]);
    out
}

/// Tokenizes raw text. See [`text::normalize`].
pub fn normalize(text: &str) -> Vec<String> {
    text::normalize(text)
}

/// Decides whether the utterance introduces or switches the product category.
pub fn detect_category<S: AsRef<str>>(
    tokens: &[S],
    schema: &Schema,
    context: &ParseContext,
) -> Result<CategoryDecision, ParseError> {
    let mut found: Vec<CategoryId> = Vec::new();
    for (_, _, c) in schema.match_triggers(tokens) {
        if !found.contains(&c) {
            found.push(c);
        }
    }
    match found.len() {
        0 => Ok(CategoryDecision::Keep),
        1 => {
            let c = found.remove(0);
            Ok(match &context.active_category {
                None => CategoryDecision::Initial(c),
                Some(active) if active == &c => CategoryDecision::Keep,
                Some(_) => CategoryDecision::Switch(c),
            })
        }
        _ => Err(ParseError::AmbiguousCategory(found)),
    }
}

/// Parses one utterance in context.
pub fn parse_utterance(
    raw: &str,
    schema: &Schema,
    lexicon: &Lexicon,
    context: &ParseContext,
) -> Result<ParseResult, ParseError> {
    Parser::new(schema, lexicon).parse(raw, context)
}

/// Reusable handle over a schema and lexicon.
#[derive(Clone, Copy)]
pub struct Parser<'a> {
    schema: &'a Schema,
    lexicon: &'a Lexicon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Word,
    Separator,
    Trigger,
    Ann(usize),
}

/// A comparative or superlative phrase bound to its facet.
#[derive(Debug, Clone)]
struct Gradable {
    tokens: Vec<String>,
    facet: FacetId,
    direction: NudgeDirection,
}

impl<'a> Parser<'a> {
    pub fn new(schema: &'a Schema, lexicon: &'a Lexicon) -> Self {
        Self { schema, lexicon }
    }

    pub fn parse(&self, raw: &str, context: &ParseContext) -> Result<ParseResult, ParseError> {
        let tokens = text::normalize(raw);
        self.parse_tokens(&tokens, context)
    }

    pub fn parse_tokens(
        &self,
        tokens: &[String],
        context: &ParseContext,
    ) -> Result<ParseResult, ParseError> {
        let bare: Vec<&str> = tokens
            .iter()
            .map(String::as_str)
            .filter(|t| !text::is_separator(t))
            .collect();
        if RESET_PHRASES.contains(&bare.as_slice()) {
            return Ok(ParseResult::new(
                Vec::new(),
                CategoryDecision::Keep,
                DialogAct::Reset,
            ));
        }
        if context.pending_prompt.is_some() {
            if DENY_PHRASES.contains(&bare.as_slice()) {
                return Ok(ParseResult::new(
                    Vec::new(),
                    CategoryDecision::Keep,
                    DialogAct::Deny,
                ));
            }
            if AFFIRM_PHRASES.contains(&bare.as_slice()) {
                return Ok(ParseResult::new(
                    Vec::new(),
                    CategoryDecision::Keep,
                    DialogAct::Affirm,
                ));
            }
        }

        let decision = detect_category(tokens, self.schema, context)?;
        let category_id = match decision.category().or(context.active_category.as_ref()) {
            Some(c) => c.clone(),
            None => return Ok(ParseResult::new(Vec::new(), decision, DialogAct::None)),
        };
        let category = self
            .schema
            .category(&category_id)
            .ok_or_else(|| ParseError::UnknownCategory(category_id.clone()))?;

        let mut kinds: Vec<Kind> = tokens
            .iter()
            .map(|t| {
                if text::is_separator(t) {
                    Kind::Separator
                } else {
                    Kind::Word
                }
            })
            .collect();
        for (s, e, _) in self.schema.match_triggers(tokens) {
            kinds[s..e].iter_mut().for_each(|k| *k = Kind::Trigger);
        }
        let masked: Vec<&str> = tokens
            .iter()
            .zip(&kinds)
            .map(|(t, k)| if *k == Kind::Trigger { "" } else { t.as_str() })
            .collect();
        let annotations = self
            .schema
            .lookup_spans(&category_id, &masked)
            .map_err(|_| ParseError::UnknownCategory(category_id.clone()))?;
        for (i, a) in annotations.iter().enumerate() {
            kinds[a.start..a.end]
                .iter_mut()
                .for_each(|k| *k = Kind::Ann(i));
        }

        // A category switch discards the old context, including the last touched facet.
        let local_context;
        let context = if matches!(decision, CategoryDecision::Switch(_)) {
            local_context = ParseContext {
                active_category: Some(category_id.clone()),
                pending_prompt: context.pending_prompt,
                ..ParseContext::default()
            };
            &local_context
        } else {
            context
        };

        let mut cp = ClauseParser {
            tokens,
            kinds: &kinds,
            annotations: &annotations,
            category,
            lexicon: self.lexicon,
            context,
            consumed: vec![false; tokens.len()],
            comparatives: comparatives(category),
            start: 0,
            end: 0,
            out: Vec::new(),
        };
        for (s, e) in split_clauses(tokens, &kinds) {
            cp.start = s;
            cp.end = e;
            cp.clause()?;
        }
        let mut out = cp.out;
        out.sort_by_key(|(pos, _)| *pos);
        Ok(ParseResult::new(
            out.into_iter().map(|(_, i)| i).collect(),
            decision,
            DialogAct::None,
        ))
    }
}

fn comparatives(category: &ProductCategory) -> Vec<Gradable> {
    let mut out: Vec<Gradable> = category
        .facets
        .iter()
        .flat_map(|f| {
            f.comparatives.iter().map(move |(phrase, dir)| Gradable {
                tokens: text::normalize(phrase),
                facet: f.id.clone(),
                direction: *dir,
            })
        })
        .collect();
    out.sort_by_key(|g| std::cmp::Reverse(g.tokens.len()));
    out
}

/// Superlative form of a comparative: "cheaper" → "cheapest",
/// "more expensive" → "most expensive", "less expensive" → "least expensive".
pub fn superlative_of(comparative: &str) -> Option<String> {
    let tokens = text::normalize(comparative);
    let (head, rest) = tokens.split_first()?;
    let head = match head.as_str() {
        "more" if !rest.is_empty() => "most".to_string(),
        "less" if !rest.is_empty() => "least".to_string(),
        h if rest.is_empty() && h.len() > 3 && h.ends_with("er") => {
            format!("{}est", &h[..h.len() - 2])
        }
        _ => return None,
    };
    Some(
        std::iter::once(head)
            .chain(rest.iter().cloned())
            .collect::<Vec<_>>()
            .join(" "),
    )
}

/// Splits into clauses at separators, "but", and "and" unless the "and"
/// closes a "between" or joins two values.
fn split_clauses(tokens: &[String], kinds: &[Kind]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut in_between = false;
    for i in 0..tokens.len() {
        let t = tokens[i].as_str();
        let boundary = match kinds[i] {
            Kind::Separator => true,
            Kind::Word if t == "but" => true,
            Kind::Word if t == "between" => {
                in_between = true;
                false
            }
            Kind::Word if t == "and" => {
                if in_between {
                    in_between = false;
                    false
                } else {
                    let joins_value = tokens.get(i + 1).is_some_and(|next| {
                        matches!(kinds[i + 1], Kind::Ann(_))
                            || text::is_number(next)
                            || next == CURRENCY
                    });
                    !joins_value
                }
            }
            _ => false,
        };
        if boundary {
            if start < i {
                out.push((start, i));
            }
            start = i + 1;
            in_between = false;
        }
    }
    if start < tokens.len() {
        out.push((start, tokens.len()));
    }
    out
}

struct ClauseParser<'p> {
    tokens: &'p [String],
    kinds: &'p [Kind],
    annotations: &'p [Annotation],
    category: &'p ProductCategory,
    lexicon: &'p Lexicon,
    context: &'p ParseContext,
    consumed: Vec<bool>,
    comparatives: Vec<Gradable>,
    start: usize,
    end: usize,
    out: Vec<(usize, Intent)>,
}

impl ClauseParser<'_> {
    fn clause(&mut self) -> Result<(), ParseError> {
        if self.reset()
            || self.sort()?
            || self.clear_facet()
            || self.clear_value()
            || self.nudge()?
        {
            return Ok(());
        }
        self.values()
    }

    fn emit(&mut self, pos: usize, intent: Intent) {
        self.out.push((pos, intent));
    }

    fn is_word(&self, i: usize) -> bool {
        self.kinds[i] == Kind::Word && !self.consumed[i]
    }

    fn matches_at(&self, i: usize, seq: &[impl AsRef<str>]) -> bool {
        i + seq.len() <= self.end
            && seq
                .iter()
                .enumerate()
                .all(|(k, s)| self.is_word(i + k) && self.tokens[i + k] == s.as_ref())
    }

    fn find(&self, seq: &[impl AsRef<str>]) -> Option<usize> {
        (self.start..self.end).find(|&i| self.matches_at(i, seq))
    }

    fn find_any(&self, cues: &[&[&str]]) -> Option<(usize, usize)> {
        cues.iter().find_map(|c| self.find(c).map(|i| (i, c.len())))
    }

    fn consume(&mut self, start: usize, len: usize) {
        self.consumed[start..start + len]
            .iter_mut()
            .for_each(|c| *c = true);
    }

    fn clause_annotations(&self) -> Vec<usize> {
        let mut seen = Vec::new();
        for i in self.start..self.end {
            if let Kind::Ann(a) = self.kinds[i] {
                if !seen.contains(&a) {
                    seen.push(a);
                }
            }
        }
        seen
    }

    fn facet_names(&self) -> Vec<(usize, FacetId)> {
        self.clause_annotations()
            .into_iter()
            .filter_map(|a| {
                let ann = &self.annotations[a];
                (!ann.is_tag()).then(|| ann.facet_name().cloned().map(|f| (ann.start, f)))?
            })
            .collect()
    }

    fn has_tags(&self) -> bool {
        self.clause_annotations()
            .iter()
            .any(|&a| self.annotations[a].is_tag())
    }

    fn is_ordered(&self, facet: &FacetId) -> bool {
        self.category.facet(facet).is_some_and(|f| f.is_ordered())
    }

    /// Picks one facet among `candidates` using clause facet names, then context.
    fn pick_facet(&self, candidates: &[FacetId], cue: &str) -> Result<FacetId, ParseError> {
        if let [only] = candidates {
            return Ok(only.clone());
        }
        let named: Vec<FacetId> = self
            .facet_names()
            .into_iter()
            .map(|(_, f)| f)
            .filter(|f| candidates.contains(f))
            .collect();
        if let Some(f) = named.first() {
            return Ok(f.clone());
        }
        if let Some(last) = self.context.last_touched_facet.as_ref() {
            if candidates.contains(last) {
                return Ok(last.clone());
            }
        }
        Err(ParseError::UnresolvedFacet {
            cue: cue.to_string(),
        })
    }

    fn reset(&mut self) -> bool {
        if !self.facet_names().is_empty() || self.has_tags() {
            return false;
        }
        match self.find_any(RESET_CUES) {
            Some((i, len)) => {
                self.consume(i, len);
                self.emit(i, Intent::ClearAllFacets);
                true
            }
            None => false,
        }
    }

    fn direction_cue(&self) -> Option<SortDirection> {
        if self.find_any(DESCENDING_CUES).is_some() {
            Some(SortDirection::Descending)
        } else if self.find_any(ASCENDING_CUES).is_some() {
            Some(SortDirection::Ascending)
        } else {
            None
        }
    }

    fn sort(&mut self) -> Result<bool, ParseError> {
        let ordered_names: Vec<(usize, FacetId)> = self
            .facet_names()
            .into_iter()
            .filter(|(_, f)| self.is_ordered(f))
            .collect();
        if let Some((i, _)) = self.find_any(SORT_CUES) {
            if let Some((_, facet)) = ordered_names.iter().find(|(p, _)| *p > i) {
                let dir = self.direction_cue().unwrap_or(SortDirection::Ascending);
                self.emit(i, Intent::order_by(facet.clone(), dir));
                return Ok(true);
            }
        }
        for (cue, dir) in EXTREME_CUES {
            if let Some(i) = self.find(cue) {
                if let Some((_, facet)) = ordered_names.iter().find(|(p, _)| *p == i + 1) {
                    self.emit(i, Intent::order_by(facet.clone(), *dir));
                    return Ok(true);
                }
            }
        }
        let grads = self.comparatives.clone();
        let mut hits: Vec<(usize, &Gradable)> = Vec::new();
        for g in &grads {
            let phrase = g.tokens.join(" ");
            if let Some(sup) = superlative_of(&phrase) {
                let sup: Vec<String> = sup.split(' ').map(str::to_string).collect();
                if let Some(i) = self.find(&sup) {
                    hits.push((i, g));
                }
            }
            if let Some(i) = self.find(&g.tokens) {
                let mut j = i + g.tokens.len();
                while j < self.end && self.is_word(j) && text::is_stop_word(&self.tokens[j]) {
                    j += 1;
                }
                if j < self.end && self.is_word(j) && self.tokens[j] == "first" {
                    hits.push((i, g));
                }
            }
        }
        let Some(&(pos, first)) = hits.first() else {
            return Ok(false);
        };
        let same_pos: Vec<FacetId> = hits
            .iter()
            .filter(|(p, _)| *p == pos)
            .map(|(_, g)| g.facet.clone())
            .fold(Vec::new(), dedup_push);
        let facet = self.pick_facet(&same_pos, &first.tokens.join(" "))?;
        let dir = hits
            .iter()
            .find(|(p, g)| *p == pos && g.facet == facet)
            .map(|(_, g)| g.direction)
            .unwrap_or(first.direction);
        let sort_dir = match dir {
            NudgeDirection::Negative => SortDirection::Ascending,
            NudgeDirection::Positive => SortDirection::Descending,
        };
        self.emit(pos, Intent::order_by(facet, sort_dir));
        Ok(true)
    }

    fn clear_facet(&mut self) -> bool {
        let names = self.facet_names();
        if names.is_empty() {
            return false;
        }
        let any_before = names
            .iter()
            .any(|(p, _)| *p > self.start && self.is_word(p - 1) && self.tokens[p - 1] == "any");
        if !any_before && self.find_any(CLEAR_FACET_CUES).is_none() {
            return false;
        }
        let mut done: Vec<FacetId> = Vec::new();
        for (p, f) in names {
            if !done.contains(&f) {
                self.emit(p, Intent::clear_facet(f.clone()));
                done.push(f);
            }
        }
        true
    }

    fn clear_value(&mut self) -> bool {
        let Some((i, len)) = self.find_any(CLEAR_VALUE_CUES) else {
            return false;
        };
        self.consume(i, len);
        if let Some(j) = self.find(&["or", "not"]) {
            self.consume(j, 2);
        }
        let mut any = false;
        for a in self.clause_annotations() {
            let ann = &self.annotations[a];
            if let Some(tag) = self.pick_tag(ann) {
                self.emit(ann.start, Intent::clear_tag(tag));
                any = true;
            }
        }
        if !any {
            for (pos, value) in self.residual() {
                match value {
                    Value::Tag(t) => self.emit(pos, Intent::clear_tag(t)),
                    Value::Span(s) => self.emit(pos, Intent::clear_span(s)),
                    Value::Number(_) => {}
                }
            }
        }
        true
    }

    fn nudge(&mut self) -> Result<bool, ParseError> {
        let grads = self.comparatives.clone();
        let mut hits: Vec<(usize, &Gradable)> = Vec::new();
        for g in &grads {
            for i in self.start..self.end {
                if self.matches_at(i, &g.tokens) {
                    let next = self.tokens.get(i + g.tokens.len()).map(String::as_str);
                    let suffix = i > self.start && self.tokens[i - 1] == "or";
                    if !suffix && !matches!(next, Some("than") | Some("first")) {
                        hits.push((i, g));
                    }
                }
            }
        }
        if let Some(&(pos, first)) = hits.iter().min_by_key(|(p, _)| *p) {
            let candidates: Vec<FacetId> = hits
                .iter()
                .filter(|(p, _)| *p == pos)
                .map(|(_, g)| g.facet.clone())
                .fold(Vec::new(), dedup_push);
            let facet = self.pick_facet(&candidates, &first.tokens.join(" "))?;
            let dir = hits
                .iter()
                .find(|(p, g)| *p == pos && g.facet == facet)
                .map(|(_, g)| g.direction)
                .unwrap_or(first.direction);
            self.emit(pos, Intent::nudge(facet, dir));
            return Ok(true);
        }
        for (verb, dir) in NUDGE_VERBS {
            let Some(i) = self.find(&[*verb]) else {
                continue;
            };
            let suffix = i > self.start && self.tokens[i - 1] == "or";
            if suffix || self.tokens.get(i + 1).is_some_and(|t| t == "than") {
                continue;
            }
            let named = self
                .facet_names()
                .into_iter()
                .map(|(_, f)| f)
                .find(|f| self.is_ordered(f));
            let facet = named
                .or_else(|| {
                    self.context
                        .last_touched_facet
                        .clone()
                        .filter(|f| self.is_ordered(f))
                })
                .ok_or_else(|| ParseError::UnresolvedFacet {
                    cue: verb.to_string(),
                })?;
            self.emit(i, Intent::nudge(facet, *dir));
            return Ok(true);
        }
        Ok(false)
    }

    /// A lone number followed by a currency marker is an amount of money,
    /// even where it also names a numeric tag.
    fn is_currency_amount(&self, ann: &Annotation) -> bool {
        ann.end - ann.start == 1
            && text::is_number(&self.tokens[ann.start])
            && self.tokens.get(ann.end).is_some_and(|t| t == CURRENCY)
            && self.category.currency_facet().is_some()
    }

    /// Grounds a tag annotation to one tag, resolving ambiguity.
    fn pick_tag(&self, ann: &Annotation) -> Option<TagRef> {
        if !ann.is_tag() {
            return None;
        }
        let candidates = ann.candidate_facets();
        let facet = if candidates.len() == 1 {
            candidates[0].clone()
        } else {
            let named: Vec<FacetId> = self
                .facet_names()
                .into_iter()
                .map(|(_, f)| f)
                .filter(|f| candidates.contains(f))
                .collect();
            match named.first() {
                Some(f) => f.clone(),
                None => resolve_ambiguous_tag(ann, self.context)?,
            }
        };
        ann.tag_for_facet(&facet).cloned()
    }

    fn ambiguity(&self, ann: &Annotation) -> ParseError {
        ParseError::AmbiguousTag {
            span: self.tokens[ann.start..ann.end].join(" "),
            candidates: ann.candidate_facets(),
        }
    }

    fn ann_at(&self, i: usize) -> Option<&Annotation> {
        match self.kinds.get(i) {
            Some(Kind::Ann(a)) => Some(&self.annotations[*a]),
            _ => None,
        }
    }

    /// Resolves the facet of a bound value at `pos`.
    fn bound_facet(
        &self,
        cue_start: usize,
        pos: usize,
        has_currency: bool,
    ) -> Result<FacetId, ParseError> {
        let cue = self.tokens[cue_start..=pos.min(self.tokens.len() - 1)].join(" ");
        if has_currency {
            return self
                .category
                .currency_facet()
                .map(|f| f.id.clone())
                .ok_or(ParseError::UnresolvedFacet { cue });
        }
        let ordered_name_at = |i: usize| {
            self.ann_at(i)
                .filter(|a| !a.is_tag())
                .and_then(|a| a.facet_name())
                .filter(|f| self.is_ordered(f))
                .cloned()
        };
        let value_end = self.ann_at(pos).map(|a| a.end).unwrap_or(pos + 1);
        let adjacent = [
            cue_start.checked_sub(1),
            Some(pos.wrapping_sub(1)),
            Some(value_end),
        ]
        .into_iter()
        .flatten()
        .filter(|&i| i >= self.start && i < self.end)
        .find_map(ordered_name_at);
        if let Some(f) = adjacent {
            return Ok(f);
        }
        if let Some(ann) = self.ann_at(pos) {
            if ann.is_tag() {
                let ordered: Vec<FacetId> = ann
                    .candidate_facets()
                    .into_iter()
                    .filter(|f| self.is_ordered(f))
                    .collect();
                if ordered.len() == 1 {
                    return Ok(ordered[0].clone());
                }
                if ordered.len() > 1 {
                    let named = self
                        .facet_names()
                        .into_iter()
                        .map(|(_, f)| f)
                        .find(|f| ordered.contains(f));
                    return named
                        .or_else(|| resolve_ambiguous_tag(ann, self.context))
                        .ok_or_else(|| self.ambiguity(ann));
                }
            }
        }
        if let Some((_, f)) = self
            .facet_names()
            .into_iter()
            .find(|(_, f)| self.is_ordered(f))
        {
            return Ok(f);
        }
        self.context
            .last_touched_facet
            .clone()
            .filter(|f| self.is_ordered(f))
            .ok_or(ParseError::UnresolvedFacet { cue })
    }

    /// Reads a bound value at `pos`: a number token or an ordered tag.
    /// Returns the value, the number of tokens it covers and whether a
    /// currency marker follows.
    fn bound_value(&self, pos: usize) -> Option<Bound> {
        if pos >= self.end {
            return None;
        }
        if let Some(ann) = self.ann_at(pos) {
            if ann.is_tag() && ann.start == pos {
                let len = ann.end - ann.start;
                let cur = self.tokens.get(ann.end).is_some_and(|t| t == CURRENCY);
                return Some(Bound {
                    tok: BoundTok::Ann(ann.clone()),
                    len,
                    currency: cur,
                });
            }
            return None;
        }
        if !self.is_word(pos) {
            return None;
        }
        let v = text::parse_number(&self.tokens[pos])?;
        let cur = pos + 1 < self.end && self.tokens[pos + 1] == CURRENCY;
        Some(Bound {
            tok: BoundTok::Number(v),
            len: 1,
            currency: cur,
        })
    }

    /// Skips facet-name annotations between a cue and its value.
    fn skip_facet_names(&self, mut pos: usize) -> usize {
        while let Some(ann) = self.ann_at(pos) {
            if ann.is_tag() || pos >= self.end {
                break;
            }
            pos = ann.end;
        }
        pos
    }

    /// Builds the intent for one bound and consumes its tokens.
    fn bound_intent(
        &mut self,
        cue_start: usize,
        pos: usize,
        bound: Bound,
        ptype: PredicateType,
        facet_hint: Option<FacetId>,
    ) -> Result<Intent, ParseError> {
        let Bound {
            tok: value,
            len,
            currency: cur,
        } = bound;
        let facet_id = match facet_hint {
            Some(f) => f,
            None => self.bound_facet(cue_start, pos, cur)?,
        };
        let facet = self
            .category
            .facet(&facet_id)
            .ok_or_else(|| ParseError::UnresolvedFacet {
                cue: facet_id.to_string(),
            })?;
        let intent = match value {
            BoundTok::Number(v) if facet.has_type(crate::schema::FacetType::Numeric) => {
                Intent::set_number(facet_id.clone(), v, ptype)
            }
            BoundTok::Number(v) => {
                let tag = facet
                    .tags
                    .iter()
                    .find(|t| t.value == Some(v) || text::parse_number(&t.text) == Some(v))
                    .ok_or_else(|| ParseError::UnresolvedFacet {
                        cue: self.tokens[pos].clone(),
                    })?;
                Intent::set_tag(
                    TagRef::new(facet_id.0.clone(), tag.id.0.clone()),
                    ptype,
                    Inclusivity::Undefined,
                )
            }
            BoundTok::Ann(ann)
                if ann.tag_for_facet(&facet_id).is_none()
                    && ann.end - ann.start == 1
                    && facet.has_type(crate::schema::FacetType::Numeric)
                    && text::is_number(&self.tokens[ann.start]) =>
            {
                let v = text::parse_number(&self.tokens[ann.start]).expect("checked number");
                Intent::set_number(facet_id.clone(), v, ptype)
            }
            BoundTok::Ann(ann) => {
                let tag = ann
                    .tag_for_facet(&facet_id)
                    .cloned()
                    .ok_or_else(|| self.ambiguity(&ann))?;
                let (f, t) = self
                    .category
                    .tag(&tag)
                    .expect("annotation tags exist in schema");
                match t.value.or_else(|| text::parse_number(&t.text)) {
                    Some(v) if f.has_type(crate::schema::FacetType::Numeric) => {
                        Intent::set_number(facet_id.clone(), v, ptype)
                    }
                    _ => Intent::set_tag(tag, ptype, Inclusivity::Undefined),
                }
            }
        };
        self.consume(pos, len + usize::from(cur));
        for i in [
            cue_start.checked_sub(1),
            pos.checked_sub(1),
            Some(pos + len + usize::from(cur)),
        ]
        .into_iter()
        .flatten()
        {
            if let Some(ann) = self.ann_at(i) {
                if !ann.is_tag()
                    && ann.facet_name() == Some(&facet_id)
                    && i >= self.start
                    && i < self.end
                {
                    let (s, e) = (ann.start, ann.end);
                    self.consume(s, e - s);
                }
            }
        }
        Ok(intent)
    }

    fn ranges(&mut self) -> Result<(), ParseError> {
        let grads = self.comparatives.clone();
        let mut i = self.start;
        while i < self.end {
            let mut matched: Option<(usize, RangeCue, Option<FacetId>)> = None;
            for g in &grads {
                let mut seq = g.tokens.clone();
                seq.push("than".to_string());
                if self.matches_at(i, &seq) {
                    let ptype = match g.direction {
                        NudgeDirection::Negative => PredicateType::LessThan,
                        NudgeDirection::Positive => PredicateType::GreaterThan,
                    };
                    matched = Some((seq.len(), RangeCue::Prefix(ptype), Some(g.facet.clone())));
                    break;
                }
            }
            if matched.is_none() {
                matched = RANGE_CUES
                    .iter()
                    .find(|(c, _)| self.matches_at(i, c))
                    .map(|(c, k)| (c.len(), *k, None));
            }
            let Some((len, cue, hint)) = matched else {
                i += 1;
                continue;
            };
            let pos = self.skip_facet_names(i + len);
            match cue {
                RangeCue::Prefix(ptype) => {
                    if let Some(bound) = self.bound_value(pos) {
                        let vlen = bound.len;
                        let intent = self.bound_intent(i, pos, bound, ptype, hint)?;
                        self.consume(i, len);
                        self.emit(i, intent);
                        i = pos + vlen;
                        continue;
                    }
                }
                RangeCue::Between => {
                    if let Some(lo) = self.bound_value(pos) {
                        let and = lo.end(pos);
                        if and < self.end && self.matches_at(and, &["and"]) {
                            let hi_pos = self.skip_facet_names(and + 1);
                            if let Some(hi) = self.bound_value(hi_pos) {
                                let hi_len = hi.len;
                                let cur = lo.currency || hi.currency;
                                let facet = self.bound_facet(i, pos, cur)?;
                                let lower = self.bound_intent(
                                    i,
                                    pos,
                                    lo,
                                    PredicateType::GreaterEq,
                                    Some(facet.clone()),
                                )?;
                                let upper = self.bound_intent(
                                    i,
                                    hi_pos,
                                    hi,
                                    PredicateType::LessEq,
                                    Some(facet),
                                )?;
                                self.consume(i, len);
                                self.consume(and, 1);
                                self.emit(i, lower);
                                self.emit(i, upper);
                                i = hi_pos + hi_len;
                                continue;
                            }
                        }
                    }
                }
            }
            i += 1;
        }

        // Suffix forms: "<value> or more".
        let mut i = self.start;
        while i < self.end {
            if let Some(bound) = self.bound_value(i) {
                let after = bound.end(i);
                if let Some((suffix, ptype)) = RANGE_SUFFIXES
                    .iter()
                    .find(|(s, _)| self.matches_at(after, s))
                {
                    let intent = self.bound_intent(i, i, bound, *ptype, None)?;
                    self.consume(after, suffix.len());
                    self.emit(i, intent);
                    i = after + suffix.len();
                    continue;
                }
            }
            i += 1;
        }
        Ok(())
    }

    fn take_cue(&mut self, cues: &[&[&str]]) -> bool {
        let mut found = false;
        for cue in cues {
            while let Some(i) = self.find(cue) {
                self.consume(i, cue.len());
                found = true;
            }
        }
        found
    }

    fn values(&mut self) -> Result<(), ParseError> {
        self.ranges()?;
        let negated = self.take_cue(NEGATION_CUES);
        let exclusive = self.take_cue(EXCLUSIVE_CUES);
        let inclusive = self.take_cue(INCLUSIVE_CUES);
        let ptype = if negated {
            PredicateType::NotEquals
        } else {
            PredicateType::Equals
        };
        let inclusivity = match (ptype, exclusive, inclusive) {
            (PredicateType::Equals, true, _) => Inclusivity::Exclusive,
            (PredicateType::Equals, false, true) => Inclusivity::Inclusive,
            _ => Inclusivity::Undefined,
        };

        for a in self.clause_annotations() {
            let ann = &self.annotations[a];
            if !ann.is_tag() || self.consumed[ann.start] || self.is_currency_amount(ann) {
                continue;
            }
            let tag = self.pick_tag(ann).ok_or_else(|| self.ambiguity(ann))?;
            let (s, e) = (ann.start, ann.end);
            self.consume(s, e - s);
            self.emit(s, Intent::set_tag(tag, ptype, inclusivity));
        }

        // Bare numbers with a currency marker or an adjacent numeric facet name.
        for i in self.start..self.end {
            let amount = self.ann_at(i).is_some_and(|a| self.is_currency_amount(a));
            if !self.is_word(i) && !(amount && !self.consumed[i]) {
                continue;
            }
            let Some(v) = text::parse_number(&self.tokens[i]) else {
                continue;
            };
            let cur = i + 1 < self.end && self.tokens[i + 1] == CURRENCY;
            let facet = if cur {
                self.category.currency_facet().map(|f| f.id.clone())
            } else {
                [i.checked_sub(1), Some(i + 1)]
                    .into_iter()
                    .flatten()
                    .filter(|&j| j >= self.start && j < self.end)
                    .find_map(|j| {
                        self.ann_at(j)
                            .filter(|a| !a.is_tag())
                            .and_then(|a| a.facet_name())
                            .filter(|f| {
                                self.category
                                    .facet(f)
                                    .is_some_and(|f| f.has_type(crate::schema::FacetType::Numeric))
                            })
                            .cloned()
                    })
            };
            if let Some(f) = facet {
                self.consume(i, 1 + usize::from(cur));
                let p = if negated {
                    PredicateType::NotEquals
                } else {
                    PredicateType::Equals
                };
                self.emit(i, Intent::set_number(f, v, p));
            }
        }

        for (pos, value) in self.residual() {
            let intent = match value {
                Value::Tag(t) => Intent::set_tag(t, ptype, inclusivity),
                Value::Span(s) => Intent::set_span(s, ptype, inclusivity),
                Value::Number(_) => continue,
            };
            self.emit(pos, intent);
        }
        Ok(())
    }

    /// Runs of unconsumed plain words, trimmed of stop words, as values.
    /// A run that is a lexicon phrase for a schema tag is grounded.
    fn residual(&mut self) -> Vec<(usize, Value)> {
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut run_start: Option<usize> = None;
        for i in self.start..=self.end {
            let inside = i < self.end
                && self.is_word(i)
                && self.tokens[i] != CURRENCY
                && !CONNECTORS.contains(&self.tokens[i].as_str());
            match (inside, run_start) {
                (true, None) => run_start = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i));
                    run_start = None;
                }
                _ => {}
            }
        }
        let mut out = Vec::new();
        for (mut s, mut e) in runs {
            while s < e && text::is_stop_word(&self.tokens[s]) {
                s += 1;
            }
            while e > s && text::is_stop_word(&self.tokens[e - 1]) {
                e -= 1;
            }
            if s == e {
                continue;
            }
            self.consume(s, e - s);
            let words = &self.tokens[s..e];
            let phrase = words.join(" ");
            let grounded =
                self.lexicon
                    .lookup(&self.category.id, &phrase)
                    .and_then(|(concept, facet)| {
                        let tag = TagRef::new(facet, concept);
                        self.category.tag(&tag).map(|_| tag)
                    });
            out.push((s, grounded.map(Value::Tag).unwrap_or(Value::Span(phrase))));
        }
        out
    }
}

#[derive(Debug, Clone)]
enum BoundTok {
    Number(f64),
    Ann(Annotation),
}

/// A range bound: its value token(s) and whether a currency marker follows.
struct Bound {
    tok: BoundTok,
    len: usize,
    currency: bool,
}

impl Bound {
    /// Position just past the bound when it starts at `pos`.
    fn end(&self, pos: usize) -> usize {
        pos + self.len + usize::from(self.currency)
    }
}

fn dedup_push(mut acc: Vec<FacetId>, f: FacetId) -> Vec<FacetId> {
    if !acc.contains(&f) {
        acc.push(f);
    }
    acc
}

/// Tag reference helper for tests and fixtures.
pub fn tag(facet: &str, tag: &str) -> TagRef {
    TagRef {
        facet: FacetId::from(facet),
        tag: TagId::from(tag),
    }
}
