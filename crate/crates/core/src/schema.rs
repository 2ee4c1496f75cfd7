//! Faceted-search schema: product categories, typed facets, tags and the
//! per-category surface vocabulary used to annotate utterances.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Identifier of a product category.
    CategoryId
);
string_id!(
    /// Identifier of a facet, unique within its category.
    FacetId
);
string_id!(
    /// Identifier of a tag, unique within its facet.
    TagId
);

/// A grounded reference to one tag of one facet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TagRef {
    pub facet: FacetId,
    pub tag: TagId,
}

impl TagRef {
    pub fn new(facet: impl Into<String>, tag: impl Into<String>) -> Self {
        Self {
            facet: FacetId(facet.into()),
            tag: TagId(tag.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FacetType {
    Boolean,
    Numeric,
    Ordered,
    Unordered,
}

/// Direction of a relative adjustment along an ordered or numeric facet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NudgeDirection {
    #[serde(alias = "INCREASE")]
    Positive,
    #[serde(alias = "DECREASE")]
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tag {
    pub id: TagId,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synonyms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<u32>,
}

impl Tag {
    /// Canonical text followed by synonyms.
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.text.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Facet {
    pub id: FacetId,
    pub display_name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub name_synonyms: Vec<String>,
    pub types: Vec<FacetType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub comparatives: BTreeMap<String, NudgeDirection>,
    #[serde(default)]
    pub tags: Vec<Tag>,
}

impl Facet {
    pub fn has_type(&self, ty: FacetType) -> bool {
        self.types.contains(&ty)
    }

    /// Range predicates, nudges and sorting need an order.
    pub fn is_ordered(&self) -> bool {
        self.has_type(FacetType::Numeric) || self.has_type(FacetType::Ordered)
    }

    pub fn tag(&self, id: &TagId) -> Option<&Tag> {
        self.tags.iter().find(|t| &t.id == id)
    }

    pub fn tag_at_rank(&self, rank: u32) -> Option<&Tag> {
        self.tags.iter().find(|t| t.rank == Some(rank))
    }

    /// Position of a tag on this facet's scale: its numeric value on
    /// NUMERIC facets, otherwise its rank on ORDERED facets.
    pub fn scalar_of(&self, tag: &Tag) -> Option<f64> {
        if self.has_type(FacetType::Numeric) {
            if let Some(v) = tag.value {
                return Some(v);
            }
        }
        if self.has_type(FacetType::Ordered) && !self.has_type(FacetType::Numeric) {
            return tag.rank.map(f64::from);
        }
        None
    }

    pub fn is_currency(&self) -> bool {
        self.has_type(FacetType::Numeric)
            && self
                .unit
                .as_deref()
                .is_some_and(|u| matches!(u, "$" | "USD" | "usd" | "dollars"))
    }

    /// Lowercased display name used in grounding summaries.
    pub fn label(&self) -> String {
        self.display_name.to_lowercase()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductCategory {
    pub id: CategoryId,
    pub canonical_phrase: String,
    #[serde(default)]
    pub trigger_phrases: Vec<String>,
    #[serde(default)]
    pub facets: Vec<Facet>,
}

impl ProductCategory {
    pub fn facet(&self, id: &FacetId) -> Option<&Facet> {
        self.facets.iter().find(|f| &f.id == id)
    }

    pub fn tag(&self, tag: &TagRef) -> Option<(&Facet, &Tag)> {
        let facet = self.facet(&tag.facet)?;
        facet.tag(&tag.tag).map(|t| (facet, t))
    }

    /// The numeric facet measured in currency, if any (typically Price).
    pub fn currency_facet(&self) -> Option<&Facet> {
        self.facets.iter().find(|f| f.is_currency())
    }
}

/// What a vocabulary match points at.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanTarget {
    Tag(TagRef),
    Facet(FacetId),
}

/// A schema vocabulary match over a token range `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub start: usize,
    pub end: usize,
    pub targets: Vec<SpanTarget>,
    /// More than one facet claims this surface string.
    pub ambiguous: bool,
}

impl Annotation {
    pub fn tags(&self) -> impl Iterator<Item = &TagRef> {
        self.targets.iter().filter_map(|t| match t {
            SpanTarget::Tag(r) => Some(r),
            SpanTarget::Facet(_) => None,
        })
    }

    pub fn facet_name(&self) -> Option<&FacetId> {
        self.targets.iter().find_map(|t| match t {
            SpanTarget::Facet(f) => Some(f),
            SpanTarget::Tag(_) => None,
        })
    }

    pub fn is_tag(&self) -> bool {
        self.tags().next().is_some()
    }

    /// Distinct facets among the tag candidates, in candidate order.
    pub fn candidate_facets(&self) -> Vec<FacetId> {
        let mut out: Vec<FacetId> = Vec::new();
        for t in self.tags() {
            if !out.contains(&t.facet) {
                out.push(t.facet.clone());
            }
        }
        out
    }

    pub fn tag_for_facet(&self, facet: &FacetId) -> Option<&TagRef> {
        self.tags().find(|t| &t.facet == facet)
    }
}

/// Evidence used to pick one facet for an ambiguous tag.
pub trait FacetEvidence {
    fn last_touched_facet(&self) -> Option<&FacetId>;
    fn has_predicate_on(&self, facet: &FacetId) -> bool;
}

/// Picks the facet of an ambiguous annotation: the last touched facet when it
/// is a candidate, otherwise the only candidate already constrained in the
/// dialog, otherwise `None` so the caller can ask for clarification.
pub fn resolve_ambiguous_tag(
    annotation: &Annotation,
    evidence: &dyn FacetEvidence,
) -> Option<FacetId> {
    let candidates = annotation.candidate_facets();
    if candidates.len() == 1 {
        return candidates.into_iter().next();
    }
    if let Some(last) = evidence.last_touched_facet() {
        if candidates.contains(last) {
            return Some(last.clone());
        }
    }
    let constrained: Vec<&FacetId> = candidates
        .iter()
        .filter(|f| evidence.has_predicate_on(f))
        .collect();
    match constrained.as_slice() {
        [only] => Some((*only).clone()),
        _ => None,
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("malformed schema document: {0}")]
    Malformed(String),
    #[error("{path}: duplicate id '{id}'")]
    DuplicateId { path: String, id: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("unknown category '{0}'")]
    UnknownCategory(CategoryId),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> SchemaError {
    SchemaError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDoc {
    categories: Vec<ProductCategory>,
}

#[derive(Debug, Clone)]
struct Vocabulary<T> {
    phrases: HashMap<Vec<String>, Vec<T>>,
    max_len: usize,
}

impl<T> Default for Vocabulary<T> {
    fn default() -> Self {
        Self {
            phrases: HashMap::new(),
            max_len: 0,
        }
    }
}

impl<T: PartialEq> Vocabulary<T> {
    fn insert(&mut self, tokens: Vec<String>, target: T) {
        if tokens.is_empty() {
            return;
        }
        self.max_len = self.max_len.max(tokens.len());
        let entry = self.phrases.entry(tokens).or_default();
        if !entry.contains(&target) {
            entry.push(target);
        }
    }
}

/// Validated, immutable schema with per-category lookup tables.
#[derive(Debug, Clone)]
pub struct Schema {
    categories: Vec<ProductCategory>,
    vocab: HashMap<CategoryId, Vocabulary<SpanTarget>>,
    triggers: Vocabulary<CategoryId>,
}

impl PartialEq for Schema {
    fn eq(&self, other: &Self) -> bool {
        self.categories == other.categories
    }
}

/// Parses and validates a schema document.
pub fn load_schema(bytes: &[u8]) -> Result<Schema, SchemaError> {
    let doc: SchemaDoc =
        serde_json::from_slice(bytes).map_err(|e| SchemaError::Malformed(e.to_string()))?;
    Schema::new(doc.categories)
}

impl Schema {
    pub fn new(categories: Vec<ProductCategory>) -> Result<Self, SchemaError> {
        validate(&categories)?;
        let mut vocab = HashMap::new();
        let mut triggers = Vocabulary::default();
        for cat in &categories {
            let mut v = Vocabulary::default();
            for facet in &cat.facets {
                for tag in &facet.tags {
                    for surface in tag.surfaces() {
                        v.insert(
                            surface_tokens(surface),
                            SpanTarget::Tag(TagRef {
                                facet: facet.id.clone(),
                                tag: tag.id.clone(),
                            }),
                        );
                    }
                }
                for name in &facet.name_synonyms {
                    v.insert(surface_tokens(name), SpanTarget::Facet(facet.id.clone()));
                }
            }
            vocab.insert(cat.id.clone(), v);
            for phrase in &cat.trigger_phrases {
                triggers.insert(surface_tokens(phrase), cat.id.clone());
            }
        }
        Ok(Self {
            categories,
            vocab,
            triggers,
        })
    }

    pub fn categories(&self) -> &[ProductCategory] {
        &self.categories
    }

    pub fn category(&self, id: &CategoryId) -> Option<&ProductCategory> {
        self.categories.iter().find(|c| &c.id == id)
    }

    pub fn require_category(&self, id: &CategoryId) -> Result<&ProductCategory, SchemaError> {
        self.category(id)
            .ok_or_else(|| SchemaError::UnknownCategory(id.clone()))
    }

    /// Serializes to the schema file format.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SchemaDoc {
            categories: self.categories.clone(),
        })
        .expect("schema serializes")
    }

    /// All maximal vocabulary matches (longest match, leftmost first) of the
    /// category's tags, tag synonyms and facet names over `tokens`.
    ///
    /// When one surface is both a tag and a facet name, only the tag targets
    /// are kept.
    pub fn lookup_spans<S: AsRef<str>>(
        &self,
        category: &CategoryId,
        tokens: &[S],
    ) -> Result<Vec<Annotation>, SchemaError> {
        let vocab = self
            .vocab
            .get(category)
            .ok_or_else(|| SchemaError::UnknownCategory(category.clone()))?;
        Ok(scan(vocab, tokens)
            .into_iter()
            .map(|(start, end, targets)| {
                let has_tag = targets.iter().any(|t| matches!(t, SpanTarget::Tag(_)));
                let targets: Vec<SpanTarget> = if has_tag {
                    targets
                        .into_iter()
                        .filter(|t| matches!(t, SpanTarget::Tag(_)))
                        .collect()
                } else {
                    targets
                };
                let mut ann = Annotation {
                    start,
                    end,
                    targets,
                    ambiguous: false,
                };
                ann.ambiguous = ann.candidate_facets().len() > 1;
                ann
            })
            .collect())
    }

    /// Categories whose trigger phrases occur in `tokens`, with the token
    /// ranges they cover.
    pub fn match_triggers<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<(usize, usize, CategoryId)> {
        scan(&self.triggers, tokens)
            .into_iter()
            .flat_map(|(s, e, cats)| cats.into_iter().map(move |c| (s, e, c)))
            .collect()
    }
}

fn surface_tokens(surface: &str) -> Vec<String> {
    text::normalize(surface)
        .into_iter()
        .filter(|t| !text::is_separator(t))
        .collect()
}

fn scan<S: AsRef<str>, T: Clone>(
    vocab: &Vocabulary<T>,
    tokens: &[S],
) -> Vec<(usize, usize, Vec<T>)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = (1..=vocab.max_len.min(tokens.len() - i))
            .rev()
            .find_map(|len| {
                let key: Vec<String> = tokens[i..i + len]
                    .iter()
                    .map(|t| t.as_ref().to_string())
                    .collect();
                vocab
                    .phrases
                    .get(&key)
                    .map(|targets| (len, targets.clone()))
            });
        match longest {
            Some((len, targets)) => {
                out.push((i, i + len, targets));
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

fn validate(categories: &[ProductCategory]) -> Result<(), SchemaError> {
    let mut cat_ids = HashSet::new();
    for (ci, cat) in categories.iter().enumerate() {
        let cpath = format!("categories[{ci}]");
        if !cat_ids.insert(&cat.id) {
            return Err(SchemaError::DuplicateId {
                path: cpath,
                id: cat.id.0.clone(),
            });
        }
        if cat.canonical_phrase.trim().is_empty() {
            return Err(invalid(
                format!("{cpath}.canonical_phrase"),
                "canonical phrase is empty",
            ));
        }
        let mut facet_ids = HashSet::new();
        for (fi, facet) in cat.facets.iter().enumerate() {
            let fpath = format!("{cpath}.facets[{fi}]");
            if !facet_ids.insert(&facet.id) {
                return Err(SchemaError::DuplicateId {
                    path: fpath,
                    id: facet.id.0.clone(),
                });
            }
            validate_facet(facet, &fpath)?;
        }
    }
    Ok(())
}

fn validate_facet(facet: &Facet, fpath: &str) -> Result<(), SchemaError> {
    if facet.types.is_empty() {
        return Err(invalid(format!("{fpath}.types"), "facet has no types"));
    }
    let distinct: HashSet<_> = facet.types.iter().collect();
    if distinct.len() != facet.types.len() {
        return Err(invalid(format!("{fpath}.types"), "repeated facet type"));
    }
    let numeric = facet.has_type(FacetType::Numeric);
    let ordered = facet.has_type(FacetType::Ordered);
    let numeric_only = numeric
        && facet
            .types
            .iter()
            .all(|t| matches!(t, FacetType::Numeric | FacetType::Ordered));
    if facet.unit.is_some() && !numeric {
        return Err(invalid(
            format!("{fpath}.unit"),
            "unit on a non-numeric facet",
        ));
    }
    if !facet.comparatives.is_empty() && !facet.is_ordered() {
        return Err(invalid(
            format!("{fpath}.comparatives"),
            "comparatives on a facet that is neither numeric nor ordered",
        ));
    }
    let mut tag_ids = HashSet::new();
    let mut ranks = Vec::new();
    for (ti, tag) in facet.tags.iter().enumerate() {
        let tpath = format!("{fpath}.tags[{ti}]");
        if !tag_ids.insert(&tag.id) {
            return Err(SchemaError::DuplicateId {
                path: tpath,
                id: tag.id.0.clone(),
            });
        }
        if tag.text.trim().is_empty() {
            return Err(invalid(format!("{tpath}.text"), "tag text is empty"));
        }
        match (ordered, tag.rank) {
            (true, None) => {
                return Err(invalid(
                    format!("{tpath}.rank"),
                    "ORDERED facet tag without rank",
                ))
            }
            (false, Some(_)) => {
                return Err(invalid(
                    format!("{tpath}.rank"),
                    "rank on a facet that is not ORDERED",
                ))
            }
            (true, Some(r)) => ranks.push(r),
            (false, None) => {}
        }
        match (numeric, tag.value) {
            (false, Some(_)) => {
                return Err(invalid(
                    format!("{tpath}.value"),
                    "value on a facet that is not NUMERIC",
                ))
            }
            (true, None) if numeric_only => {
                return Err(invalid(
                    format!("{tpath}.value"),
                    "NUMERIC facet tag without value",
                ))
            }
            (_, Some(v)) if !v.is_finite() => {
                return Err(invalid(format!("{tpath}.value"), "value is not finite"))
            }
            _ => {}
        }
    }
    if ordered {
        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        let expected: Vec<u32> = (0..ranks.len() as u32).collect();
        if sorted != expected {
            return Err(invalid(
                format!("{fpath}.tags"),
                format!(
                    "ranks {ranks:?} are not a permutation of 0..{}",
                    ranks.len()
                ),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{"categories":[{"id":"shoes","canonical_phrase":"shoes","trigger_phrases":["shoes"],
      "facets":[
        {"id":"brand","display_name":"Brand","name_synonyms":["brand"],"types":["UNORDERED"],
         "tags":[{"id":"nike","text":"Nike"},{"id":"adidas","text":"Adidas"}]},
        {"id":"color","display_name":"Color","name_synonyms":["color","colour"],"types":["UNORDERED"],
         "tags":[{"id":"red","text":"red"},{"id":"pink","text":"pink","synonyms":["hot pink"]}]},
        {"id":"size","display_name":"Size","name_synonyms":["size"],"types":["ORDERED","NUMERIC"],
         "tags":[{"id":"6","text":"6","value":6,"rank":0},{"id":"7","text":"7","value":7,"rank":1},
                 {"id":"8","text":"8","value":8,"rank":2},{"id":"9","text":"9","value":9,"rank":3},
                 {"id":"10","text":"10","value":10,"rank":4},{"id":"11","text":"11","value":11,"rank":5},
                 {"id":"12","text":"12","value":12,"rank":6},{"id":"13","text":"13","value":13,"rank":7},
                 {"id":"14","text":"14","value":14,"rank":8}]}
      ]}]}"#;

    fn small() -> Schema {
        load_schema(SMALL.as_bytes()).unwrap()
    }

    fn shoes() -> CategoryId {
        CategoryId::from("shoes")
    }

    #[test]
    fn loads_fixture_document() {
        let s = small();
        assert_eq!(s.categories().len(), 1);
        assert_eq!(s.categories()[0].facets.len(), 3);
        let size = s.categories()[0].facet(&"size".into()).unwrap();
        assert!(size.has_type(FacetType::Ordered) && size.has_type(FacetType::Numeric));
        assert_eq!(size.tags.len(), 9);
    }

    #[test]
    fn empty_categories_is_valid() {
        let s = load_schema(br#"{"categories":[]}"#).unwrap();
        assert!(s.categories().is_empty());
    }

    #[test]
    fn duplicate_facet_id_rejected() {
        let doc = r#"{"categories":[{"id":"c","canonical_phrase":"c","facets":[
            {"id":"color","display_name":"Color","types":["UNORDERED"]},
            {"id":"color","display_name":"Colour","types":["UNORDERED"]}]}]}"#;
        let err = load_schema(doc.as_bytes()).unwrap_err();
        assert_eq!(
            err,
            SchemaError::DuplicateId {
                path: "categories[0].facets[1]".into(),
                id: "color".into()
            }
        );
    }

    #[test]
    fn duplicate_category_and_tag_ids_rejected() {
        let doc = r#"{"categories":[{"id":"c","canonical_phrase":"c"},{"id":"c","canonical_phrase":"d"}]}"#;
        assert!(matches!(
            load_schema(doc.as_bytes()),
            Err(SchemaError::DuplicateId { .. })
        ));
        let doc = r#"{"categories":[{"id":"c","canonical_phrase":"c","facets":[
            {"id":"f","display_name":"F","types":["UNORDERED"],"tags":[{"id":"a","text":"a"},{"id":"a","text":"b"}]}]}]}"#;
        let err = load_schema(doc.as_bytes()).unwrap_err();
        assert!(
            err.to_string().contains("categories[0].facets[0].tags[1]"),
            "{err}"
        );
    }

    #[test]
    fn ordered_rank_errors() {
        let missing = r#"{"categories":[{"id":"c","canonical_phrase":"c","facets":[
            {"id":"f","display_name":"F","types":["ORDERED"],"tags":[{"id":"a","text":"a","rank":0},{"id":"b","text":"b"}]}]}]}"#;
        let err = load_schema(missing.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("tags[1].rank"), "{err}");
        let dup = r#"{"categories":[{"id":"c","canonical_phrase":"c","facets":[
            {"id":"f","display_name":"F","types":["ORDERED"],"tags":[{"id":"a","text":"a","rank":0},{"id":"b","text":"b","rank":0}]}]}]}"#;
        let err = load_schema(dup.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("permutation"), "{err}");
    }

    #[test]
    fn misplaced_rank_and_value_rejected() {
        let rank = r#"{"categories":[{"id":"c","canonical_phrase":"c","facets":[
            {"id":"f","display_name":"F","types":["UNORDERED"],"tags":[{"id":"a","text":"a","rank":0}]}]}]}"#;
        assert!(load_schema(rank.as_bytes())
            .unwrap_err()
            .to_string()
            .contains("not ORDERED"));
        let value = r#"{"categories":[{"id":"c","canonical_phrase":"c","facets":[
            {"id":"f","display_name":"F","types":["BOOLEAN"],"tags":[{"id":"a","text":"a","value":1}]}]}]}"#;
        assert!(load_schema(value.as_bytes())
            .unwrap_err()
            .to_string()
            .contains("not NUMERIC"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let doc = r#"{"categories":[],"extra":1}"#;
        assert!(matches!(
            load_schema(doc.as_bytes()),
            Err(SchemaError::Malformed(_))
        ));
        let doc = r#"{"categories":[{"id":"c","canonical_phrase":"c","colour":"x"}]}"#;
        assert!(matches!(
            load_schema(doc.as_bytes()),
            Err(SchemaError::Malformed(_))
        ));
    }

    #[test]
    fn red_nike_shoes() {
        let s = small();
        let toks = text::normalize("show me red nike shoes");
        let anns = s.lookup_spans(&shoes(), &toks).unwrap();
        assert_eq!(anns.len(), 2);
        assert_eq!((anns[0].start, anns[0].end), (2, 3));
        assert_eq!(
            anns[0].targets,
            vec![SpanTarget::Tag(TagRef::new("color", "red"))]
        );
        assert_eq!((anns[1].start, anns[1].end), (3, 4));
        assert_eq!(
            anns[1].targets,
            vec![SpanTarget::Tag(TagRef::new("brand", "nike"))]
        );
        assert!(anns.iter().all(|a| !a.ambiguous));
    }

    #[test]
    fn facet_name_annotation() {
        let s = small();
        let toks = text::normalize("any color will do");
        let anns = s.lookup_spans(&shoes(), &toks).unwrap();
        assert_eq!(anns.len(), 1);
        assert_eq!(anns[0].facet_name(), Some(&FacetId::from("color")));
    }

    #[test]
    fn longest_match_wins() {
        let s = small();
        let toks = text::normalize("hot pink please");
        let anns = s.lookup_spans(&shoes(), &toks).unwrap();
        assert_eq!(anns.len(), 1);
        assert_eq!((anns[0].start, anns[0].end), (0, 2));
    }

    #[test]
    fn unknown_category() {
        let s = small();
        assert_eq!(
            s.lookup_spans(&"boats".into(), &["red"]).unwrap_err(),
            SchemaError::UnknownCategory("boats".into())
        );
    }

    #[test]
    fn round_trip_serialization() {
        let s = small();
        let again = load_schema(s.to_json().as_bytes()).unwrap();
        assert_eq!(s, again);
    }

    struct Ev(Option<FacetId>, Vec<FacetId>);
    impl FacetEvidence for Ev {
        fn last_touched_facet(&self) -> Option<&FacetId> {
            self.0.as_ref()
        }
        fn has_predicate_on(&self, facet: &FacetId) -> bool {
            self.1.contains(facet)
        }
    }

    fn ambiguous_five() -> Annotation {
        Annotation {
            start: 0,
            end: 1,
            targets: vec![
                SpanTarget::Tag(TagRef::new("size", "5")),
                SpanTarget::Tag(TagRef::new("volume", "5")),
            ],
            ambiguous: true,
        }
    }

    #[test]
    fn ambiguity_resolution_rules() {
        let ann = ambiguous_five();
        assert_eq!(
            resolve_ambiguous_tag(&ann, &Ev(Some("size".into()), vec![])),
            Some("size".into())
        );
        assert_eq!(resolve_ambiguous_tag(&ann, &Ev(None, vec![])), None);
        assert_eq!(
            resolve_ambiguous_tag(&ann, &Ev(None, vec!["volume".into()])),
            Some("volume".into())
        );
        assert_eq!(
            resolve_ambiguous_tag(&ann, &Ev(None, vec!["volume".into(), "size".into()])),
            None
        );
        assert_eq!(
            resolve_ambiguous_tag(&ann, &Ev(Some("brand".into()), vec![])),
            None,
            "last touched facet outside the candidates is no evidence"
        );
        let single = Annotation {
            start: 0,
            end: 1,
            targets: vec![SpanTarget::Tag(TagRef::new("size", "5"))],
            ambiguous: false,
        };
        assert_eq!(
            resolve_ambiguous_tag(&single, &Ev(None, vec![])),
            Some("size".into())
        );
    }
}
