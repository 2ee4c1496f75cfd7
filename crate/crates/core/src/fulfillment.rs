//! Query compilation and an in-memory faceted product index.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clu::{PredicateType, SortDirection};
use crate::dst::{DialogState, Range, SortOrder};
use crate::schema::{CategoryId, FacetId, FacetType, Schema, TagId, TagRef};
use crate::text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Product {
    pub id: String,
    pub category: CategoryId,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub tags: Vec<TagRef>,
    #[serde(default)]
    pub values: BTreeMap<FacetId, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub products: Vec<Product>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpan {
    pub text: String,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FacetRestrict {
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub allowed: BTreeSet<TagId>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub forbidden: BTreeSet<TagId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<Range>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub category: CategoryId,
    pub category_phrase: String,
    pub query_spans: Vec<QuerySpan>,
    pub restricts: BTreeMap<FacetId, FacetRestrict>,
    pub sort: Option<SortOrder>,
}

impl SearchRequest {
    /// Request that only selects the category.
    pub fn for_category(category: CategoryId, category_phrase: impl Into<String>) -> Self {
        Self {
            category,
            category_phrase: category_phrase.into(),
            query_spans: Vec::new(),
            restricts: BTreeMap::new(),
            sort: None,
        }
    }

    /// Search query text: the category phrase plus positive spans, with
    /// negative spans prefixed by `-`.
    pub fn query_text(&self) -> String {
        let mut out = vec![self.category_phrase.clone()];
        for s in &self.query_spans {
            match s.polarity {
                Polarity::Positive => out.push(format!("\"{}\"", s.text)),
                Polarity::Negative => out.push(format!("-\"{}\"", s.text)),
            }
        }
        out.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetStats {
    pub facet: FacetId,
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FulfillmentError {
    #[error("dialog state has no product category")]
    MissingCategory,
    #[error("unknown category '{0}'")]
    UnknownCategory(CategoryId),
    #[error("malformed catalog document: {0}")]
    Malformed(String),
    #[error("products[{index}] ('{id}'): {message}")]
    InvalidProduct {
        index: usize,
        id: String,
        message: String,
    },
}

/// Compiles dialog state into a search request.
pub fn compile_request(
    state: &DialogState,
    schema: &Schema,
) -> Result<SearchRequest, FulfillmentError> {
    let cid = state
        .category
        .as_ref()
        .ok_or(FulfillmentError::MissingCategory)?;
    let category = schema
        .category(cid)
        .ok_or_else(|| FulfillmentError::UnknownCategory(cid.clone()))?;
    let query_spans = state
        .ungrounded
        .iter()
        .filter_map(|p| {
            let text = p.value.as_span()?.to_string();
            let polarity = if p.predicate_type == PredicateType::NotEquals {
                Polarity::Negative
            } else {
                Polarity::Positive
            };
            Some(QuerySpan { text, polarity })
        })
        .collect();
    let restricts = state
        .facets
        .iter()
        .filter(|(_, fs)| !fs.is_empty())
        .map(|(fid, fs)| {
            (
                fid.clone(),
                FacetRestrict {
                    allowed: fs.positive_tags().map(|t| t.tag.clone()).collect(),
                    forbidden: fs.negative_tags().map(|t| t.tag.clone()).collect(),
                    range: fs.range,
                },
            )
        })
        .collect();
    Ok(SearchRequest {
        category: cid.clone(),
        category_phrase: category.canonical_phrase.clone(),
        query_spans,
        restricts,
        sort: state.sort.clone(),
    })
}

type Postings = Vec<u32>;

/// Immutable inverted index over a validated catalog.
#[derive(Debug, Clone, Default)]
pub struct Index {
    products: Vec<Product>,
    by_category: HashMap<CategoryId, Postings>,
    postings: HashMap<(CategoryId, FacetId, TagId), Postings>,
    tokens: HashMap<String, Postings>,
    scalars: Vec<HashMap<FacetId, Vec<f64>>>,
}

/// Parses, validates and indexes a catalog document.
pub fn build_index(bytes: &[u8], schema: &Schema) -> Result<Index, FulfillmentError> {
    let catalog: Catalog =
        serde_json::from_slice(bytes).map_err(|e| FulfillmentError::Malformed(e.to_string()))?;
    Index::new(catalog.products, schema)
}

fn intersect(a: &[u32], b: &[u32]) -> Postings {
    let (mut i, mut j, mut out) = (0, 0, Vec::new());
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

impl Index {
    pub fn new(mut products: Vec<Product>, schema: &Schema) -> Result<Self, FulfillmentError> {
        let mut seen = HashSet::new();
        for (index, p) in products.iter().enumerate() {
            let err = |message: String| FulfillmentError::InvalidProduct {
                index,
                id: p.id.clone(),
                message,
            };
            if !seen.insert(p.id.clone()) {
                return Err(err("duplicate product id".into()));
            }
            let category = schema
                .category(&p.category)
                .ok_or_else(|| err(format!("unknown category '{}'", p.category)))?;
            for t in &p.tags {
                category.tag(t).ok_or_else(|| {
                    err(format!(
                        "tag {}/{} is not in category '{}'",
                        t.facet, t.tag, p.category
                    ))
                })?;
            }
            for (f, v) in &p.values {
                let facet = category
                    .facet(f)
                    .ok_or_else(|| err(format!("value for unknown facet '{f}'")))?;
                if !facet.has_type(FacetType::Numeric) {
                    return Err(err(format!("value for non-numeric facet '{f}'")));
                }
                if !v.is_finite() {
                    return Err(err(format!("non-finite value for '{f}'")));
                }
            }
        }
        products.sort_by(|a, b| a.id.cmp(&b.id));

        let mut index = Index::default();
        for (n, p) in products.iter().enumerate() {
            let n = n as u32;
            index
                .by_category
                .entry(p.category.clone())
                .or_default()
                .push(n);
            let category = schema.category(&p.category).expect("validated");
            let mut scalars: HashMap<FacetId, Vec<f64>> = HashMap::new();
            for t in &p.tags {
                let list = index
                    .postings
                    .entry((p.category.clone(), t.facet.clone(), t.tag.clone()))
                    .or_default();
                if list.last() != Some(&n) {
                    list.push(n);
                }
                let (facet, tag) = category.tag(t).expect("validated");
                if let Some(s) = facet.scalar_of(tag) {
                    scalars.entry(t.facet.clone()).or_default().push(s);
                }
            }
            for (f, v) in &p.values {
                scalars.entry(f.clone()).or_default().push(*v);
            }
            let words: BTreeSet<String> =
                text::content_tokens(&format!("{} {}", p.title, p.description))
                    .into_iter()
                    .collect();
            for w in words {
                index.tokens.entry(w).or_default().push(n);
            }
            index.scalars.push(scalars);
        }
        index.products = products;
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    /// Products in ascending id order.
    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn product(&self, id: &str) -> Option<&Product> {
        self.products
            .binary_search_by(|p| p.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.products[i])
    }

    /// Number of products in `category` carrying `tag`.
    pub fn posting_count(&self, category: &CategoryId, tag: &TagRef) -> usize {
        self.postings
            .get(&(category.clone(), tag.facet.clone(), tag.tag.clone()))
            .map_or(0, Vec::len)
    }

    /// Positions of a product on a facet's scale: explicit numeric values
    /// plus the values or ranks of its tags on that facet.
    pub fn scalars(&self, product: &Product, facet: &FacetId) -> &[f64] {
        self.products
            .binary_search_by(|p| p.id.cmp(&product.id))
            .ok()
            .and_then(|i| self.scalars[i].get(facet))
            .map_or(&[], Vec::as_slice)
    }

    fn span_postings(&self, span: &str) -> Option<Postings> {
        let words = text::content_tokens(span);
        if words.is_empty() {
            return None;
        }
        let mut acc: Option<Postings> = None;
        for w in words {
            let list = self.tokens.get(&w).map_or(&[][..], Vec::as_slice);
            acc = Some(match acc {
                None => list.to_vec(),
                Some(a) => intersect(&a, list),
            });
        }
        acc
    }

    /// Every matching product, ordered.
    pub fn search_all(&self, req: &SearchRequest) -> Vec<&Product> {
        let mut cands: Postings = self
            .by_category
            .get(&req.category)
            .cloned()
            .unwrap_or_default();
        for (fid, r) in &req.restricts {
            if !r.allowed.is_empty() {
                let mut union: BTreeSet<u32> = BTreeSet::new();
                for t in &r.allowed {
                    if let Some(list) =
                        self.postings
                            .get(&(req.category.clone(), fid.clone(), t.clone()))
                    {
                        union.extend(list);
                    }
                }
                let union: Postings = union.into_iter().collect();
                cands = intersect(&cands, &union);
            }
            for t in &r.forbidden {
                if let Some(list) =
                    self.postings
                        .get(&(req.category.clone(), fid.clone(), t.clone()))
                {
                    let banned: HashSet<u32> = list.iter().copied().collect();
                    cands.retain(|n| !banned.contains(n));
                }
            }
            if let Some(range) = &r.range {
                cands.retain(|&n| {
                    self.scalars[n as usize]
                        .get(fid)
                        .is_some_and(|vs| vs.iter().any(|v| range.contains(*v)))
                });
            }
        }
        for span in &req.query_spans {
            let Some(hits) = self.span_postings(&span.text) else {
                continue;
            };
            match span.polarity {
                Polarity::Positive => cands = intersect(&cands, &hits),
                Polarity::Negative => {
                    let hits: HashSet<u32> = hits.into_iter().collect();
                    cands.retain(|n| !hits.contains(n));
                }
            }
        }
        if let Some(sort) = &req.sort {
            let key = |n: u32| -> Option<f64> {
                let vs = self.scalars[n as usize].get(&sort.facet)?;
                match sort.direction {
                    SortDirection::Ascending => vs.iter().copied().reduce(f64::min),
                    SortDirection::Descending => vs.iter().copied().reduce(f64::max),
                }
            };
            cands.sort_by(|&a, &b| {
                let (ka, kb) = (key(a), key(b));
                let ord = match (ka, kb) {
                    (Some(x), Some(y)) => match sort.direction {
                        SortDirection::Ascending => x.total_cmp(&y),
                        SortDirection::Descending => y.total_cmp(&x),
                    },
                    (Some(_), None) => std::cmp::Ordering::Less,
                    (None, Some(_)) => std::cmp::Ordering::Greater,
                    (None, None) => std::cmp::Ordering::Equal,
                };
                ord.then(a.cmp(&b))
            });
        }
        cands
            .into_iter()
            .map(|n| &self.products[n as usize])
            .collect()
    }

    /// First `page_size` matching products.
    pub fn search(&self, req: &SearchRequest, page_size: usize) -> Vec<&Product> {
        let mut all = self.search_all(req);
        all.truncate(page_size);
        all
    }
}

/// See [`Index::search`].
pub fn search<'i>(index: &'i Index, req: &SearchRequest, page_size: usize) -> Vec<&'i Product> {
    index.search(req, page_size)
}

/// Summary statistics of a facet's scalar values over a result set.
pub fn facet_stats(index: &Index, results: &[&Product], facet: &FacetId) -> Option<FacetStats> {
    let mut values: Vec<f64> = results
        .iter()
        .flat_map(|p| index.scalars(p, facet).iter().copied())
        .collect();
    stats_of(facet, &mut values)
}

/// Statistics over raw values; `None` when `values` is empty.
pub fn stats_of(facet: &FacetId, values: &mut [f64]) -> Option<FacetStats> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    };
    Some(FacetStats {
        facet: facet.clone(),
        count: n,
        min: values[0],
        median,
        max: values[n - 1],
    })
}
