//! Category-scoped relations between attribute phrases.
//!
//! The state tracker needs three relations when it reconciles ungrounded
//! spans: same tag, same facet, and membership of a phrase in a given
//! facet. All of them depend on the product category, so "lemon" may be a
//! scent for detergent and mean nothing for shoes.
//!
//! [`LexiconOracle`] answers from a curated [`Lexicon`] backed by the schema.
//! Any other backend can be plugged in through [`RelationOracle`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{CategoryId, FacetId, Schema};
use crate::text::normalize_phrase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RelationVerdict {
    pub same_tag: bool,
    pub same_facet: bool,
    pub of_facet: bool,
}

pub trait RelationOracle: Send + Sync {
    fn same_tag(&self, category: &CategoryId, a: &str, b: &str) -> bool;
    fn same_facet(&self, category: &CategoryId, a: &str, b: &str) -> bool;
    fn of_facet(&self, category: &CategoryId, phrase: &str, facet: &FacetId) -> bool;

    /// All three answers at once; `of_facet` asks whether `b` names the facet of `a`.
    fn relate(&self, category: &CategoryId, a: &str, b: &str) -> RelationVerdict;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconEntry {
    pub category: CategoryId,
    pub phrase: String,
    pub concept: String,
    pub facet: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconDoc {
    entries: Vec<LexiconEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Sense {
    concept: String,
    facet: String,
}

/// Category-scoped phrase → (concept, facet) table.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
    senses: HashMap<(CategoryId, String), Sense>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LexiconError {
    #[error("malformed lexicon document: {0}")]
    Malformed(String),
    #[error("entries[{index}]: phrase '{phrase}' already belongs to concept '{existing}' in category '{category}'")]
    PhraseInTwoConcepts {
        index: usize,
        category: CategoryId,
        phrase: String,
        existing: String,
    },
    #[error("entries[{index}]: concept '{concept}' already assigned to facet '{existing}' in category '{category}'")]
    ConceptInTwoFacets {
        index: usize,
        category: CategoryId,
        concept: String,
        existing: String,
    },
    #[error("entries[{index}]: empty phrase")]
    EmptyPhrase { index: usize },
}

pub fn load_lexicon(bytes: &[u8]) -> Result<Lexicon, LexiconError> {
    let doc: LexiconDoc =
        serde_json::from_slice(bytes).map_err(|e| LexiconError::Malformed(e.to_string()))?;
    Lexicon::new(doc.entries)
}

impl Lexicon {
    pub fn new(entries: Vec<LexiconEntry>) -> Result<Self, LexiconError> {
        let mut senses: HashMap<(CategoryId, String), Sense> = HashMap::new();
        let mut concept_facet: HashMap<(CategoryId, String), String> = HashMap::new();
        for (index, e) in entries.iter().enumerate() {
            let phrase = normalize_phrase(&e.phrase);
            if phrase.is_empty() {
                return Err(LexiconError::EmptyPhrase { index });
            }
            let key = (e.category.clone(), phrase.clone());
            if let Some(existing) = senses.get(&key) {
                if existing.concept != e.concept {
                    return Err(LexiconError::PhraseInTwoConcepts {
                        index,
                        category: e.category.clone(),
                        phrase,
                        existing: existing.concept.clone(),
                    });
                }
            }
            let ckey = (e.category.clone(), e.concept.clone());
            match concept_facet.get(&ckey) {
                Some(f) if f != &e.facet => {
                    return Err(LexiconError::ConceptInTwoFacets {
                        index,
                        category: e.category.clone(),
                        concept: e.concept.clone(),
                        existing: f.clone(),
                    })
                }
                _ => {
                    concept_facet.insert(ckey, e.facet.clone());
                }
            }
            senses.insert(
                key,
                Sense {
                    concept: e.concept.clone(),
                    facet: e.facet.clone(),
                },
            );
        }
        Ok(Self { entries, senses })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    /// Distinct concepts, optionally restricted to one category.
    pub fn concept_count(&self, category: Option<&CategoryId>) -> usize {
        let mut seen: Vec<(&CategoryId, &str)> = Vec::new();
        for e in &self.entries {
            if category.is_some_and(|c| c != &e.category) {
                continue;
            }
            if !seen.contains(&(&e.category, e.concept.as_str())) {
                seen.push((&e.category, e.concept.as_str()));
            }
        }
        seen.len()
    }

    /// Looks up an already-normalized phrase.
    fn sense(&self, category: &CategoryId, normalized: &str) -> Option<&Sense> {
        self.senses.get(&(category.clone(), normalized.to_string()))
    }

    /// Concept and facet of a phrase as recorded in the lexicon.
    pub fn lookup(&self, category: &CategoryId, phrase: &str) -> Option<(&str, &str)> {
        self.sense(category, &normalize_phrase(phrase))
            .map(|s| (s.concept.as_str(), s.facet.as_str()))
    }
}

/// What a phrase resolves to inside one category.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Resolved {
    concept: String,
    facet: String,
}

/// Deterministic oracle over schema vocabulary plus lexicon entries.
///
/// Phrases unknown to both sources relate to nothing except an identical
/// phrase.
pub struct LexiconOracle<'a> {
    schema: &'a Schema,
    lexicon: &'a Lexicon,
    tag_phrases: HashMap<(CategoryId, String), Vec<(String, String)>>,
    facet_names: HashMap<(CategoryId, String), String>,
}

impl<'a> LexiconOracle<'a> {
    pub fn new(schema: &'a Schema, lexicon: &'a Lexicon) -> Self {
        let mut tag_phrases: HashMap<(CategoryId, String), Vec<(String, String)>> = HashMap::new();
        let mut facet_names = HashMap::new();
        for cat in schema.categories() {
            for facet in &cat.facets {
                for tag in &facet.tags {
                    for surface in tag.surfaces() {
                        let entry = tag_phrases
                            .entry((cat.id.clone(), normalize_phrase(surface)))
                            .or_default();
                        let item = (facet.id.0.clone(), tag.id.0.clone());
                        if !entry.contains(&item) {
                            entry.push(item);
                        }
                    }
                }
                for name in facet
                    .name_synonyms
                    .iter()
                    .chain(std::iter::once(&facet.display_name))
                {
                    facet_names
                        .insert((cat.id.clone(), normalize_phrase(name)), facet.id.0.clone());
                }
            }
        }
        Self {
            schema,
            lexicon,
            tag_phrases,
            facet_names,
        }
    }

    fn resolve(&self, category: &CategoryId, normalized: &str) -> Option<Resolved> {
        if let Some(sense) = self.lexicon.sense(category, normalized) {
            let grounded = self
                .schema
                .category(category)
                .and_then(|c| c.facet(&FacetId(sense.facet.clone())))
                .is_some_and(|f| f.tags.iter().any(|t| t.id.0 == sense.concept));
            let concept = if grounded {
                format!("tag:{}/{}", sense.facet, sense.concept)
            } else {
                format!("lex:{}", sense.concept)
            };
            return Some(Resolved {
                concept,
                facet: sense.facet.clone(),
            });
        }
        match self
            .tag_phrases
            .get(&(category.clone(), normalized.to_string()))?
            .as_slice()
        {
            [(facet, tag)] => Some(Resolved {
                concept: format!("tag:{facet}/{tag}"),
                facet: facet.clone(),
            }),
            // A surface shared by several tags stays unresolved.
            _ => None,
        }
    }
}

impl RelationOracle for LexiconOracle<'_> {
    fn same_tag(&self, category: &CategoryId, a: &str, b: &str) -> bool {
        let (na, nb) = (normalize_phrase(a), normalize_phrase(b));
        if na.is_empty() || nb.is_empty() {
            return false;
        }
        if na == nb {
            return true;
        }
        match (self.resolve(category, &na), self.resolve(category, &nb)) {
            (Some(x), Some(y)) => x.concept == y.concept,
            _ => false,
        }
    }

    fn same_facet(&self, category: &CategoryId, a: &str, b: &str) -> bool {
        let (na, nb) = (normalize_phrase(a), normalize_phrase(b));
        if na.is_empty() || nb.is_empty() {
            return false;
        }
        if na == nb {
            return true;
        }
        match (self.resolve(category, &na), self.resolve(category, &nb)) {
            (Some(x), Some(y)) => x.facet == y.facet,
            _ => false,
        }
    }

    fn of_facet(&self, category: &CategoryId, phrase: &str, facet: &FacetId) -> bool {
        self.resolve(category, &normalize_phrase(phrase))
            .is_some_and(|r| r.facet == facet.0)
    }

    fn relate(&self, category: &CategoryId, a: &str, b: &str) -> RelationVerdict {
        let named_facet = self
            .facet_names
            .get(&(category.clone(), normalize_phrase(b)));
        RelationVerdict {
            same_tag: self.same_tag(category, a, b),
            same_facet: self.same_facet(category, a, b),
            of_facet: named_facet.is_some_and(|f| self.of_facet(category, a, &FacetId(f.clone()))),
        }
    }
}
