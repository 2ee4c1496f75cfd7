//! Dialog state tracking.
//!
//! [`StateTracker::apply`] folds one utterance's intents into the cumulative
//! [`DialogState`] in five steps: facet-independent operators first, then
//! per-facet groups with clears moved to the front, conflict clearing for
//! every incoming set, and finally sequential application.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clu::{
    Inclusivity, Intent, ParseContext, PredicateType, PromptKind, SortDirection, Value,
};
use crate::fulfillment::FacetStats;
use crate::relatedness::RelationOracle;
use crate::schema::{
    CategoryId, Facet, FacetEvidence, FacetId, FacetType, NudgeDirection, ProductCategory, Schema,
    TagRef,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub inclusive: bool,
}

/// Interval over a facet's scale; `None` bounds are unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Range {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Bound>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Bound>,
}

impl Range {
    /// The half-line described by a range predicate.
    pub fn half_line(predicate_type: PredicateType, value: f64) -> Option<Self> {
        let b = |inclusive| Some(Bound { value, inclusive });
        Some(match predicate_type {
            PredicateType::LessThan => Range {
                lower: None,
                upper: b(false),
            },
            PredicateType::LessEq => Range {
                lower: None,
                upper: b(true),
            },
            PredicateType::GreaterThan => Range {
                lower: b(false),
                upper: None,
            },
            PredicateType::GreaterEq => Range {
                lower: b(true),
                upper: None,
            },
            PredicateType::Equals | PredicateType::NotEquals => return None,
        })
    }

    pub fn point(value: f64) -> Self {
        let b = Some(Bound {
            value,
            inclusive: true,
        });
        Range { lower: b, upper: b }
    }

    pub fn contains(&self, v: f64) -> bool {
        let above = self.lower.is_none_or(|b| {
            if b.inclusive {
                v >= b.value
            } else {
                v > b.value
            }
        });
        let below = self.upper.is_none_or(|b| {
            if b.inclusive {
                v <= b.value
            } else {
                v < b.value
            }
        });
        above && below
    }

    pub fn is_empty(&self) -> bool {
        match (self.lower, self.upper) {
            (Some(l), Some(u)) => {
                l.value > u.value || (l.value == u.value && !(l.inclusive && u.inclusive))
            }
            _ => false,
        }
    }

    pub fn intersect(&self, other: &Range) -> Range {
        let lower = match (self.lower, other.lower) {
            (Some(a), Some(b)) => Some(
                if a.value > b.value || (a.value == b.value && !a.inclusive) {
                    a
                } else {
                    b
                },
            ),
            (a, b) => a.or(b),
        };
        let upper = match (self.upper, other.upper) {
            (Some(a), Some(b)) => Some(
                if a.value < b.value || (a.value == b.value && !a.inclusive) {
                    a
                } else {
                    b
                },
            ),
            (a, b) => a.or(b),
        };
        Range { lower, upper }
    }
}

/// Intersects a new half-line with the existing range. When the two are
/// disjoint the newer constraint wins and replaces the old range.
pub fn merge_range(
    existing: Option<&Range>,
    predicate_type: PredicateType,
    value: f64,
) -> Result<Range, DstError> {
    if !value.is_finite() {
        return Err(DstError::InvalidValue(format!("non-finite bound {value}")));
    }
    let new = Range::half_line(predicate_type, value).ok_or_else(|| {
        DstError::InvalidValue(format!("{predicate_type:?} is not a range predicate"))
    })?;
    Ok(match existing {
        None => new,
        Some(e) => {
            let merged = e.intersect(&new);
            if merged.is_empty() {
                new
            } else {
                merged
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub value: Value,
    pub predicate_type: PredicateType,
    pub turn_index: u64,
    /// Facet an ungrounded span was attributed to by the relatedness oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facet: Option<FacetId>,
}

impl Predicate {
    fn tag(&self) -> Option<&TagRef> {
        self.value.as_tag()
    }

    fn span(&self) -> Option<&str> {
        self.value.as_span()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FacetState {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub positive: Vec<Predicate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub negative: Vec<Predicate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<Range>,
}

impl FacetState {
    pub fn is_empty(&self) -> bool {
        self.positive.is_empty() && self.negative.is_empty() && self.range.is_none()
    }

    fn remove_tag(&mut self, tag: &TagRef) {
        self.positive.retain(|p| p.tag() != Some(tag));
        self.negative.retain(|p| p.tag() != Some(tag));
    }

    pub fn positive_tags(&self) -> impl Iterator<Item = &TagRef> {
        self.positive.iter().filter_map(Predicate::tag)
    }

    pub fn negative_tags(&self) -> impl Iterator<Item = &TagRef> {
        self.negative.iter().filter_map(Predicate::tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortOrder {
    pub facet: FacetId,
    pub direction: SortDirection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DialogState {
    pub category: Option<CategoryId>,
    pub facets: BTreeMap<FacetId, FacetState>,
    pub ungrounded: Vec<Predicate>,
    pub sort: Option<SortOrder>,
    pub last_touched_facet: Option<FacetId>,
    pub turn: u64,
}

impl DialogState {
    pub fn new(category: Option<CategoryId>) -> Self {
        Self {
            category,
            ..Self::default()
        }
    }

    /// True when no preferences are held, whatever the category.
    pub fn is_empty(&self) -> bool {
        self.facets.is_empty() && self.ungrounded.is_empty() && self.sort.is_none()
    }

    /// Fresh state for a new category; the turn counter carries over.
    pub fn switched_to(&self, category: CategoryId) -> Self {
        Self {
            category: Some(category),
            turn: self.turn,
            ..Self::default()
        }
    }

    /// Canonical JSON with sorted object keys.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("dialog state serializes");
        serde_json::to_string(&value).expect("json value serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn parse_context(&self, pending_prompt: Option<PromptKind>) -> ParseContext {
        ParseContext {
            active_category: self.category.clone(),
            last_touched_facet: self.last_touched_facet.clone(),
            pending_prompt,
            constrained_facets: self.facets.keys().cloned().collect(),
        }
    }

    pub fn facet(&self, id: &FacetId) -> Option<&FacetState> {
        self.facets.get(id)
    }
}

impl FacetEvidence for DialogState {
    fn last_touched_facet(&self) -> Option<&FacetId> {
        self.last_touched_facet.as_ref()
    }

    fn has_predicate_on(&self, facet: &FacetId) -> bool {
        self.facets.get(facet).is_some_and(|f| !f.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DstEvent {
    /// A nudge could not move past the end of an ordered facet.
    AtLimit { facet: FacetId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub state: DialogState,
    pub events: Vec<DstEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DstError {
    #[error("no active product category")]
    NoCategory,
    #[error("unknown category '{0}'")]
    UnknownCategory(CategoryId),
    #[error("unknown facet '{0}'")]
    UnknownFacet(FacetId),
    #[error("unknown tag '{tag}' in facet '{facet}'")]
    UnknownTag { facet: FacetId, tag: String },
    #[error("facet '{0}' has no order, so it cannot be nudged or sorted")]
    NotOrdered(FacetId),
    #[error("range predicate on unordered facet '{0}'")]
    RangeOnUnordered(FacetId),
    #[error("nothing to nudge on facet '{0}'")]
    NoNudgeAnchor(FacetId),
    #[error("invalid value: {0}")]
    InvalidValue(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DstConfig {
    /// Multiplier applied to an upper bound on a NEGATIVE nudge.
    pub shrink_factor: f64,
    /// Multiplier applied to a lower bound on a POSITIVE nudge.
    pub grow_factor: f64,
    pub clear_all_resets_category: bool,
    /// Nudged bounds are rounded to a multiple of this step.
    pub rounding: f64,
}

impl Default for DstConfig {
    fn default() -> Self {
        Self {
            shrink_factor: 0.8,
            grow_factor: 1.25,
            clear_all_resets_category: false,
            rounding: 0.01,
        }
    }
}

/// An intent with the facet its span was attributed to.
type Keyed<'i> = (&'i Intent, Option<FacetId>);

#[derive(Debug, Clone, PartialEq, Eq)]
enum GroupKey {
    Facet(FacetId),
    Loose(usize),
}

pub struct StateTracker<'a> {
    schema: &'a Schema,
    oracle: &'a dyn RelationOracle,
    config: DstConfig,
}

/// Applies intents with the default configuration.
pub fn apply_intents(
    state: &DialogState,
    intents: &[Intent],
    schema: &Schema,
    oracle: &dyn RelationOracle,
    stats: &[FacetStats],
) -> Result<Update, DstError> {
    StateTracker::new(schema, oracle).apply(state, intents, stats)
}

impl<'a> StateTracker<'a> {
    pub fn new(schema: &'a Schema, oracle: &'a dyn RelationOracle) -> Self {
        Self::with_config(schema, oracle, DstConfig::default())
    }

    pub fn with_config(
        schema: &'a Schema,
        oracle: &'a dyn RelationOracle,
        config: DstConfig,
    ) -> Self {
        Self {
            schema,
            oracle,
            config,
        }
    }

    pub fn config(&self) -> &DstConfig {
        &self.config
    }

    pub fn apply(
        &self,
        state: &DialogState,
        intents: &[Intent],
        stats: &[FacetStats],
    ) -> Result<Update, DstError> {
        let mut next = state.clone();
        next.turn += 1;
        if intents.is_empty() {
            return Ok(Update {
                state: next,
                events: Vec::new(),
            });
        }
        if next.category.is_none() && intents.iter().all(|i| matches!(i, Intent::ClearAllFacets)) {
            next.facets.clear();
            next.ungrounded.clear();
            next.sort = None;
            next.last_touched_facet = None;
            return Ok(Update {
                state: next,
                events: Vec::new(),
            });
        }
        let category = self.category(&next)?;
        for intent in intents {
            self.validate(category, intent)?;
        }
        let mut run = Run {
            tracker: self,
            category,
            state: next,
            events: Vec::new(),
            stats,
        };

        // Step 1: facet-independent operators.
        if intents.iter().any(|i| matches!(i, Intent::ClearAllFacets)) {
            run.clear_all();
        }
        for intent in intents {
            if let Intent::OrderBy {
                facet,
                sort_direction,
            } = intent
            {
                run.state.sort = Some(SortOrder {
                    facet: facet.clone(),
                    direction: *sort_direction,
                });
            }
        }

        // Step 2: group the rest by facet, in order of first appearance.
        let mut groups: Vec<(GroupKey, Vec<Keyed>)> = Vec::new();
        for (n, intent) in intents.iter().enumerate() {
            if matches!(intent, Intent::ClearAllFacets | Intent::OrderBy { .. }) {
                continue;
            }
            let span_facet = match intent {
                Intent::SetValue {
                    value: Value::Span(s),
                    ..
                }
                | Intent::ClearValue {
                    value: Value::Span(s),
                    ..
                } => run.span_facet(s),
                _ => None,
            };
            let key = match intent.facet().cloned().or_else(|| span_facet.clone()) {
                Some(f) => GroupKey::Facet(f),
                None => GroupKey::Loose(n),
            };
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, members)) => members.push((intent, span_facet)),
                None => groups.push((key, vec![(intent, span_facet)])),
            }
        }

        // Step 3: clears first within each group.
        for (_, members) in &mut groups {
            members.sort_by_key(|(i, _)| !i.is_clear());
        }

        // Step 4: conflict clearing for every incoming set.
        for (_, members) in &groups {
            for (intent, span_facet) in members {
                if let Intent::SetValue { .. } = intent {
                    run.clear_conflicts(intent, span_facet.as_ref())?;
                }
            }
        }

        // Step 5: sequential application.
        for (_, members) in &groups {
            for (intent, span_facet) in members {
                run.apply_one(intent, span_facet.as_ref())?;
            }
        }

        if let Some(last) = intents.iter().rev().find_map(|i| match i {
            Intent::ClearAllFacets => None,
            _ => i.facet().cloned().or_else(|| match i {
                Intent::SetValue {
                    value: Value::Span(s),
                    ..
                }
                | Intent::ClearValue {
                    value: Value::Span(s),
                    ..
                } => run.span_facet(s),
                _ => None,
            }),
        }) {
            run.state.last_touched_facet = Some(last);
        }
        run.state.facets.retain(|_, f| !f.is_empty());
        Ok(Update {
            state: run.state,
            events: run.events,
        })
    }

    fn category(&self, state: &DialogState) -> Result<&'a ProductCategory, DstError> {
        let c = state.category.as_ref().ok_or(DstError::NoCategory)?;
        self.schema
            .category(c)
            .ok_or_else(|| DstError::UnknownCategory(c.clone()))
    }

    fn validate(&self, category: &ProductCategory, intent: &Intent) -> Result<(), DstError> {
        let facet_of = |id: &FacetId| {
            category
                .facet(id)
                .ok_or_else(|| DstError::UnknownFacet(id.clone()))
        };
        let check_tag = |t: &TagRef| -> Result<&Facet, DstError> {
            let f = facet_of(&t.facet)?;
            f.tag(&t.tag).ok_or_else(|| DstError::UnknownTag {
                facet: t.facet.clone(),
                tag: t.tag.0.clone(),
            })?;
            Ok(f)
        };
        match intent {
            Intent::SetValue {
                facet,
                value,
                predicate_type,
                ..
            } => {
                let f = match value {
                    Value::Tag(t) => {
                        if facet.as_ref().is_some_and(|f| f != &t.facet) {
                            return Err(DstError::InvalidValue(format!(
                                "tag {} outside facet",
                                t.tag
                            )));
                        }
                        Some(check_tag(t)?)
                    }
                    Value::Number(v) => {
                        let id = facet.as_ref().ok_or_else(|| {
                            DstError::InvalidValue(format!("number {v} without a facet"))
                        })?;
                        let f = facet_of(id)?;
                        if !f.has_type(FacetType::Numeric) {
                            return Err(DstError::InvalidValue(format!(
                                "number {v} on non-numeric facet '{id}'"
                            )));
                        }
                        if !v.is_finite() {
                            return Err(DstError::InvalidValue(format!(
                                "non-finite number on '{id}'"
                            )));
                        }
                        if *predicate_type == PredicateType::NotEquals
                            && f.tags.iter().all(|t| t.value != Some(*v))
                        {
                            return Err(DstError::InvalidValue(format!(
                                "cannot exclude untagged value {v}"
                            )));
                        }
                        Some(f)
                    }
                    Value::Span(_) => {
                        if predicate_type.is_range() {
                            return Err(DstError::InvalidValue(
                                "range predicate on free text".into(),
                            ));
                        }
                        facet.as_ref().map(facet_of).transpose()?
                    }
                };
                if predicate_type.is_range() {
                    let f = f.expect("range values name a facet");
                    if !f.is_ordered() {
                        return Err(DstError::RangeOnUnordered(f.id.clone()));
                    }
                }
            }
            Intent::ClearValue { facet, value } => match value {
                Value::Tag(t) => {
                    check_tag(t)?;
                }
                Value::Number(_) => {
                    let id = facet
                        .as_ref()
                        .ok_or_else(|| DstError::InvalidValue("number without a facet".into()))?;
                    facet_of(id)?;
                }
                Value::Span(_) => {}
            },
            Intent::ClearFacet { facet } => {
                facet_of(facet)?;
            }
            Intent::NudgeFacet { facet, .. } | Intent::OrderBy { facet, .. } => {
                if !facet_of(facet)?.is_ordered() {
                    return Err(DstError::NotOrdered(facet.clone()));
                }
            }
            Intent::ClearAllFacets => {}
        }
        Ok(())
    }
}

/// Mutable working copy for one `apply` call.
struct Run<'r, 'a> {
    tracker: &'r StateTracker<'a>,
    category: &'a ProductCategory,
    state: DialogState,
    events: Vec<DstEvent>,
    stats: &'r [FacetStats],
}

impl Run<'_, '_> {
    fn oracle(&self) -> &dyn RelationOracle {
        self.tracker.oracle
    }

    fn tag_text(&self, tag: &TagRef) -> Option<&str> {
        self.category.tag(tag).map(|(_, t)| t.text.as_str())
    }

    /// Facet an ungrounded span belongs to, if the oracle can tell.
    fn span_facet(&self, span: &str) -> Option<FacetId> {
        let cat = &self.category.id;
        let oracle = self.oracle();
        for facet in &self.category.facets {
            if oracle.of_facet(cat, span, &facet.id) {
                return Some(facet.id.clone());
            }
        }
        for (fid, fs) in &self.state.facets {
            let related = fs
                .positive_tags()
                .chain(fs.negative_tags())
                .filter_map(|t| self.tag_text(t))
                .any(|text| oracle.same_facet(cat, span, text));
            if related {
                return Some(fid.clone());
            }
        }
        self.state
            .ungrounded
            .iter()
            .filter(|p| p.facet.is_some())
            .find(|p| p.span().is_some_and(|s| oracle.same_facet(cat, span, s)))
            .and_then(|p| p.facet.clone())
    }

    fn clear_all(&mut self) {
        let category = if self.tracker.config.clear_all_resets_category {
            None
        } else {
            self.state.category.clone()
        };
        self.state = DialogState {
            category,
            turn: self.state.turn,
            ..DialogState::default()
        };
    }

    fn facet_mut(&mut self, id: &FacetId) -> &mut FacetState {
        self.state.facets.entry(id.clone()).or_default()
    }

    fn scalar(&self, tag: &TagRef) -> Option<f64> {
        let (facet, t) = self.category.tag(tag)?;
        facet.scalar_of(t)
    }

    fn numeric_tag(&self, facet: &FacetId, v: f64) -> Option<TagRef> {
        let f = self.category.facet(facet)?;
        f.tags
            .iter()
            .find(|t| t.value == Some(v))
            .map(|t| TagRef::new(facet.0.clone(), t.id.0.clone()))
    }

    /// Scalar position of a range bound on its facet.
    fn bound_scalar(&self, facet: &FacetId, value: &Value) -> Result<f64, DstError> {
        match value {
            Value::Number(v) => Ok(*v),
            Value::Tag(t) => self.scalar(t).ok_or_else(|| {
                DstError::InvalidValue(format!("tag {} has no position on '{facet}'", t.tag))
            }),
            Value::Span(s) => Err(DstError::InvalidValue(format!("'{s}' is not a bound"))),
        }
    }

    fn drop_spans_of(&mut self, facet: &FacetId, only_positive: bool) {
        self.state.ungrounded.retain(|p| {
            p.facet.as_ref() != Some(facet)
                || (only_positive && p.predicate_type != PredicateType::Equals)
        });
    }

    fn clear_conflicts(
        &mut self,
        intent: &Intent,
        span_facet: Option<&FacetId>,
    ) -> Result<(), DstError> {
        let Intent::SetValue {
            facet,
            value,
            predicate_type,
            inclusivity,
        } = intent
        else {
            return Ok(());
        };
        let cat = self.category.id.clone();
        match value {
            Value::Span(span) => {
                let oracle = self.tracker.oracle;
                let replace = *predicate_type == PredicateType::Equals
                    && *inclusivity != Inclusivity::Inclusive;
                self.state.ungrounded.retain(|p| {
                    let Some(other) = p.span() else { return true };
                    if oracle.same_tag(&cat, span, other) {
                        return false;
                    }
                    !(replace
                        && p.predicate_type == PredicateType::Equals
                        && oracle.same_facet(&cat, span, other))
                });
                if let (true, Some(f)) = (replace, span_facet) {
                    if *inclusivity == Inclusivity::Exclusive {
                        self.state.facets.remove(f);
                        self.drop_spans_of(f, false);
                    } else {
                        self.facet_mut(f).positive.clear();
                    }
                }
            }
            Value::Tag(_) | Value::Number(_) => {
                let f = facet
                    .clone()
                    .or_else(|| value.as_tag().map(|t| t.facet.clone()));
                let f = f.expect("validated values name a facet");
                let tag = match value {
                    Value::Tag(t) => Some(t.clone()),
                    Value::Number(v) => self.numeric_tag(&f, *v),
                    Value::Span(_) => None,
                };
                match (predicate_type, inclusivity) {
                    (PredicateType::Equals, Inclusivity::Exclusive) => {
                        self.state.facets.remove(&f);
                        self.drop_spans_of(&f, false);
                    }
                    (PredicateType::Equals, Inclusivity::Inclusive) => {
                        if let Some(t) = &tag {
                            self.facet_mut(&f).negative.retain(|p| p.tag() != Some(t));
                        }
                    }
                    (PredicateType::Equals, Inclusivity::Undefined) => {
                        let scalar = match &tag {
                            Some(t) => self.scalar(t),
                            None => match value {
                                Value::Number(v) => Some(*v),
                                _ => None,
                            },
                        };
                        let fs = self.facet_mut(&f);
                        fs.positive.clear();
                        if let Some(t) = &tag {
                            fs.negative.retain(|p| p.tag() != Some(t));
                        }
                        if tag.is_none() {
                            fs.range = None;
                        } else if let (Some(r), Some(v)) = (fs.range, scalar) {
                            if !r.contains(v) {
                                fs.range = None;
                            }
                        }
                        self.drop_spans_of(&f, true);
                    }
                    (PredicateType::NotEquals, _) => {
                        if let Some(t) = &tag {
                            self.facet_mut(&f).positive.retain(|p| p.tag() != Some(t));
                        }
                    }
                    (range_type, _) => {
                        let v = self.bound_scalar(&f, value)?;
                        let half = Range::half_line(*range_type, v).expect("range predicate");
                        let positives: Vec<TagRef> = self
                            .state
                            .facets
                            .get(&f)
                            .map(|fs| fs.positive_tags().cloned().collect())
                            .unwrap_or_default();
                        let outside: Vec<TagRef> = positives
                            .into_iter()
                            .filter(|t| self.scalar(t).is_some_and(|s| !half.contains(s)))
                            .collect();
                        self.facet_mut(&f)
                            .positive
                            .retain(|p| p.tag().is_none_or(|t| !outside.contains(t)));
                    }
                }
            }
        }
        Ok(())
    }

    fn predicate(
        &self,
        value: Value,
        predicate_type: PredicateType,
        facet: Option<FacetId>,
    ) -> Predicate {
        Predicate {
            value,
            predicate_type,
            turn_index: self.state.turn,
            facet,
        }
    }

    fn apply_one(&mut self, intent: &Intent, span_facet: Option<&FacetId>) -> Result<(), DstError> {
        match intent {
            Intent::ClearAllFacets | Intent::OrderBy { .. } => {}
            Intent::ClearFacet { facet } => {
                self.state.facets.remove(facet);
                self.drop_spans_of(facet, false);
            }
            Intent::ClearValue { facet, value } => match value {
                Value::Tag(t) => self.facet_mut(&t.facet).remove_tag(&t.clone()),
                Value::Number(v) => {
                    let f = facet.clone().expect("validated");
                    if let Some(t) = self.numeric_tag(&f, *v) {
                        self.facet_mut(&f).remove_tag(&t);
                    } else if let Some(fs) = self.state.facets.get_mut(&f) {
                        if fs.range == Some(Range::point(*v)) {
                            fs.range = None;
                        }
                    }
                }
                Value::Span(s) => {
                    let cat = self.category.id.clone();
                    let oracle = self.tracker.oracle;
                    self.state
                        .ungrounded
                        .retain(|p| p.span().is_none_or(|o| !oracle.same_tag(&cat, s, o)));
                }
            },
            Intent::SetValue {
                facet,
                value,
                predicate_type,
                ..
            } => match value {
                Value::Span(s) => {
                    let cat = self.category.id.clone();
                    let oracle = self.tracker.oracle;
                    self.state
                        .ungrounded
                        .retain(|p| p.span().is_none_or(|o| !oracle.same_tag(&cat, s, o)));
                    let p = self.predicate(
                        Value::Span(s.clone()),
                        *predicate_type,
                        span_facet.cloned(),
                    );
                    self.state.ungrounded.push(p);
                }
                _ => {
                    let f = facet
                        .clone()
                        .or_else(|| value.as_tag().map(|t| t.facet.clone()));
                    let f = f.expect("validated values name a facet");
                    self.set_grounded(&f, value, *predicate_type)?;
                }
            },
            Intent::NudgeFacet {
                facet,
                nudge_direction,
            } => self.nudge(facet, *nudge_direction)?,
        }
        Ok(())
    }

    fn set_grounded(
        &mut self,
        f: &FacetId,
        value: &Value,
        predicate_type: PredicateType,
    ) -> Result<(), DstError> {
        let tag = match value {
            Value::Tag(t) => Some(t.clone()),
            Value::Number(v) => self.numeric_tag(f, *v),
            Value::Span(_) => None,
        };
        match predicate_type {
            PredicateType::Equals | PredicateType::NotEquals => match tag {
                Some(t) => {
                    let p = self.predicate(Value::Tag(t.clone()), predicate_type, None);
                    let fs = self.facet_mut(f);
                    fs.remove_tag(&t);
                    if predicate_type == PredicateType::Equals {
                        fs.positive.push(p);
                    } else {
                        fs.negative.push(p);
                    }
                }
                None => {
                    let Value::Number(v) = value else {
                        return Err(DstError::InvalidValue("untagged value".into()));
                    };
                    self.facet_mut(f).range = Some(Range::point(*v));
                }
            },
            range_type => {
                let v = self.bound_scalar(f, value)?;
                let fs = self.facet_mut(f);
                fs.range = Some(merge_range(fs.range.as_ref(), range_type, v)?);
            }
        }
        Ok(())
    }

    fn round(&self, v: f64) -> f64 {
        let step = self.tracker.config.rounding;
        if step > 0.0 {
            (v / step).round() * step
        } else {
            v
        }
    }

    fn nudge(&mut self, facet_id: &FacetId, dir: NudgeDirection) -> Result<(), DstError> {
        let facet = self.category.facet(facet_id).expect("validated facet");
        let fs = self.state.facets.get(facet_id).cloned().unwrap_or_default();
        let latest_tag = fs
            .positive
            .iter()
            .filter(|p| p.tag().is_some())
            .max_by_key(|p| p.turn_index)
            .cloned();

        if facet.has_type(FacetType::Ordered) {
            if let Some(p) = &latest_tag {
                let t = p.tag().expect("filtered to tags");
                let rank = facet
                    .tag(&t.tag)
                    .and_then(|t| t.rank)
                    .expect("ordered tags carry ranks");
                let next = match dir {
                    NudgeDirection::Positive => rank.checked_add(1),
                    NudgeDirection::Negative => rank.checked_sub(1),
                };
                match next.and_then(|r| facet.tag_at_rank(r)) {
                    Some(next_tag) => {
                        let new = TagRef::new(facet_id.0.clone(), next_tag.id.0.clone());
                        let pred =
                            self.predicate(Value::Tag(new.clone()), PredicateType::Equals, None);
                        let fs = self.facet_mut(facet_id);
                        fs.positive.retain(|q| q.tag() != Some(t));
                        fs.remove_tag(&new);
                        fs.positive.push(pred);
                    }
                    None => self.events.push(DstEvent::AtLimit {
                        facet: facet_id.clone(),
                    }),
                }
                return Ok(());
            }
            if !facet.has_type(FacetType::Numeric) {
                return self.nudge_rank_range(facet, fs.range, dir);
            }
        }

        // Numeric scale.
        let point = fs.range.filter(|r| r.lower.is_some() && r.lower == r.upper);
        let equals_value = latest_tag
            .as_ref()
            .and_then(|p| p.tag())
            .and_then(|t| self.scalar(t))
            .or_else(|| point.and_then(|r| r.lower.map(|b| b.value)));
        let range = if point.is_some() { None } else { fs.range };
        let (lower, upper) = (range.and_then(|r| r.lower), range.and_then(|r| r.upper));
        let cfg = self.tracker.config;
        let (ptype, target) = match dir {
            NudgeDirection::Negative => {
                let anchor = upper
                    .map(|b| b.value)
                    .or(equals_value)
                    .or(lower.map(|b| b.value));
                let target = match anchor {
                    Some(a) => Some(self.round(a * cfg.shrink_factor)),
                    None => self.median(facet_id),
                };
                (PredicateType::LessThan, target)
            }
            NudgeDirection::Positive => {
                let anchor = lower
                    .map(|b| b.value)
                    .or(equals_value)
                    .or(upper.map(|b| b.value));
                let target = match anchor {
                    Some(a) => Some(self.round(a * cfg.grow_factor)),
                    None => self.median(facet_id),
                };
                (PredicateType::GreaterThan, target)
            }
        };
        let target = target.ok_or_else(|| DstError::NoNudgeAnchor(facet_id.clone()))?;
        let fs = self.facet_mut(facet_id);
        if equals_value.is_some() {
            fs.positive.clear();
        }
        fs.range = Some(merge_range(range.as_ref(), ptype, target)?);
        Ok(())
    }

    fn median(&self, facet: &FacetId) -> Option<f64> {
        self.stats
            .iter()
            .find(|s| &s.facet == facet)
            .map(|s| s.median)
    }

    /// Shifts a rank range on an ordered, non-numeric facet by one step.
    fn nudge_rank_range(
        &mut self,
        facet: &Facet,
        range: Option<Range>,
        dir: NudgeDirection,
    ) -> Result<(), DstError> {
        let max_rank = facet.tags.iter().filter_map(|t| t.rank).max().unwrap_or(0);
        let Some(r) = range else {
            let median = self
                .median(&facet.id)
                .ok_or_else(|| DstError::NoNudgeAnchor(facet.id.clone()))?;
            let ptype = match dir {
                NudgeDirection::Positive => PredicateType::GreaterThan,
                NudgeDirection::Negative => PredicateType::LessThan,
            };
            self.facet_mut(&facet.id).range = Some(merge_range(None, ptype, median)?);
            return Ok(());
        };
        let step = match dir {
            NudgeDirection::Positive => 1.0,
            NudgeDirection::Negative => -1.0,
        };
        let shift = |b: Option<Bound>| {
            b.map(|b| Bound {
                value: b.value + step,
                ..b
            })
        };
        let moved = Range {
            lower: shift(r.lower),
            upper: shift(r.upper),
        };
        let in_scale = (0..=max_rank).any(|k| moved.contains(f64::from(k)));
        if in_scale {
            self.facet_mut(&facet.id).range = Some(moved);
        } else {
            self.events.push(DstEvent::AtLimit {
                facet: facet.id.clone(),
            });
        }
        Ok(())
    }
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.2}")
    }
}

fn format_bound(facet: &Facet, v: f64) -> String {
    if facet.has_type(FacetType::Numeric) {
        let n = format_number(v);
        if facet.is_currency() {
            format!("${n}")
        } else {
            match &facet.unit {
                Some(u) => format!("{n} {u}"),
                None => n,
            }
        }
    } else {
        // Ordered, non-numeric facets range over ranks.
        let rank = v.round().max(0.0) as u32;
        facet
            .tag_at_rank(rank)
            .map(|t| t.text.to_lowercase())
            .unwrap_or_else(|| format_number(v))
    }
}

fn render_range(facet: &Facet, r: &Range) -> String {
    match (r.lower, r.upper) {
        (Some(l), Some(u)) if l == u => format_bound(facet, l.value),
        (Some(l), Some(u)) => format!(
            "between {} and {}",
            format_bound(facet, l.value),
            format_bound(facet, u.value)
        ),
        (None, Some(u)) if u.inclusive => format!("{} or less", format_bound(facet, u.value)),
        (None, Some(u)) => format!("under {}", format_bound(facet, u.value)),
        (Some(l), None) if l.inclusive => format!("{} or more", format_bound(facet, l.value)),
        (Some(l), None) => format!("over {}", format_bound(facet, l.value)),
        (None, None) => "any".to_string(),
    }
}

/// One-line grounding summary of the state.
pub fn render_state(state: &DialogState, schema: &Schema) -> String {
    let category = state.category.as_ref().and_then(|c| schema.category(c));
    if state.is_empty() && category.is_none() {
        return "no preferences yet".to_string();
    }
    let mut parts: Vec<String> = Vec::new();
    if let Some(c) = category {
        parts.push(c.canonical_phrase.to_lowercase());
    }
    for (fid, fs) in &state.facets {
        let facet = category.and_then(|c| c.facet(fid));
        let text_of = |t: &TagRef| {
            facet
                .and_then(|f| f.tag(&t.tag))
                .map(|t| t.text.to_lowercase())
                .unwrap_or_else(|| t.tag.0.clone())
        };
        let boolean = facet.is_some_and(|f| f.has_type(FacetType::Boolean) && !f.is_ordered());
        let mut bits: Vec<String> = Vec::new();
        let pos: Vec<String> = fs.positive_tags().map(text_of).collect();
        if !pos.is_empty() {
            bits.push(pos.join(" or "));
        }
        for t in fs.negative_tags() {
            bits.push(format!("not {}", text_of(t)));
        }
        if let (Some(r), Some(f)) = (&fs.range, facet) {
            bits.push(render_range(f, r));
        }
        let label = facet.map(|f| f.label()).unwrap_or_else(|| fid.0.clone());
        if boolean {
            parts.push(bits.join(", "));
        } else {
            parts.push(format!("{label}: {}", bits.join(", ")));
        }
    }
    for p in &state.ungrounded {
        if let Some(s) = p.span() {
            if p.predicate_type == PredicateType::NotEquals {
                parts.push(format!("not '{s}'"));
            } else {
                parts.push(format!("'{s}'"));
            }
        }
    }
    if let Some(sort) = &state.sort {
        let label = category
            .and_then(|c| c.facet(&sort.facet))
            .map(|f| f.label())
            .unwrap_or_else(|| sort.facet.0.clone());
        let dir = match sort.direction {
            SortDirection::Ascending => "low to high",
            SortDirection::Descending => "high to low",
        };
        parts.push(format!("sorted by {label} ({dir})"));
    }
    parts.join(" · ")
}
