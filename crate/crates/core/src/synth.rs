//! Seeded random catalogs, intents and dialog states for property tests,
//! the acceptance suite and benchmarks.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::clu::{Inclusivity, Intent, PredicateType, SortDirection};
use crate::dst::{DialogState, StateTracker};
use crate::fulfillment::{FacetStats, Product};
use crate::schema::{FacetType, NudgeDirection, ProductCategory, Schema, TagRef};

/// Free-text vocabulary shared by product titles and ungrounded spans.
pub const WORDS: &[&str] = &[
    "trail",
    "running",
    "hiking",
    "comfortable",
    "lightweight",
    "breathable",
    "durable",
    "classic",
    "gym",
    "kids",
    "eco",
    "washable",
    "gentle",
    "sensitive",
    "gaming",
    "warm",
    "stylish",
    "retro",
    "premium",
    "soft",
];

/// Bounds for numeric values of facets without tags.
pub const VALUE_RANGE: (f64, f64) = (5.0, 400.0);

/// A catalog of `n` products spread over the schema's categories.
pub fn random_catalog(schema: &Schema, n: usize, rng: &mut impl Rng) -> Vec<Product> {
    (0..n)
        .map(|i| {
            let category = schema
                .categories()
                .choose(rng)
                .expect("schema has categories");
            random_product(category, format!("p{i:05}"), rng)
        })
        .collect()
}

pub fn random_product(category: &ProductCategory, id: String, rng: &mut impl Rng) -> Product {
    let mut tags = Vec::new();
    let mut values = BTreeMap::new();
    for facet in &category.facets {
        if facet.tags.is_empty() {
            if facet.has_type(FacetType::Numeric) && rng.random_bool(0.9) {
                let v = rng.random_range(VALUE_RANGE.0..VALUE_RANGE.1);
                values.insert(facet.id.clone(), (v * 100.0).round() / 100.0);
            }
            continue;
        }
        if rng.random_bool(0.15) {
            continue;
        }
        let k = rng.random_range(1..=facet.tags.len().min(3));
        for tag in facet.tags.choose_multiple(rng, k) {
            tags.push(TagRef::new(facet.id.0.clone(), tag.id.0.clone()));
        }
    }
    tags.sort();
    let words = |rng: &mut _, k| {
        let mut w: Vec<&str> = WORDS.choose_multiple(rng, k).copied().collect();
        w.shuffle(rng);
        w.join(" ")
    };
    let title_len = rng.random_range(1..=3);
    let desc_len = rng.random_range(0..=4);
    Product {
        id,
        category: category.id.clone(),
        title: words(rng, title_len),
        description: words(rng, desc_len),
        tags,
        values,
    }
}

/// One random intent valid for `category`'s schema, not necessarily
/// applicable to every state.
pub fn random_intent(category: &ProductCategory, rng: &mut impl Rng) -> Intent {
    let facet = category.facets.choose(rng).expect("category has facets");
    let ordered = facet.is_ordered();
    let pick = rng.random_range(0..100);
    let inclusivity = *[
        Inclusivity::Undefined,
        Inclusivity::Inclusive,
        Inclusivity::Exclusive,
    ]
    .choose(rng)
    .expect("non-empty");
    match pick {
        0..=39 if !facet.tags.is_empty() => {
            let tag = facet.tags.choose(rng).expect("non-empty");
            let tag_ref = TagRef::new(facet.id.0.clone(), tag.id.0.clone());
            let ptype = if ordered && rng.random_bool(0.3) {
                *[
                    PredicateType::LessThan,
                    PredicateType::LessEq,
                    PredicateType::GreaterThan,
                    PredicateType::GreaterEq,
                ]
                .choose(rng)
                .expect("non-empty")
            } else if rng.random_bool(0.3) {
                PredicateType::NotEquals
            } else {
                PredicateType::Equals
            };
            let inc = if ptype == PredicateType::Equals {
                inclusivity
            } else {
                Inclusivity::Undefined
            };
            Intent::set_tag(tag_ref, ptype, inc)
        }
        0..=54 if facet.has_type(FacetType::Numeric) => {
            let ptype = *[
                PredicateType::LessThan,
                PredicateType::LessEq,
                PredicateType::GreaterThan,
                PredicateType::GreaterEq,
            ]
            .choose(rng)
            .expect("non-empty");
            let v = rng.random_range(VALUE_RANGE.0..VALUE_RANGE.1).round();
            Intent::set_number(facet.id.clone(), v, ptype)
        }
        0..=64 => {
            let span = WORDS.choose(rng).expect("non-empty");
            let ptype = if rng.random_bool(0.25) {
                PredicateType::NotEquals
            } else {
                PredicateType::Equals
            };
            let inc = if ptype == PredicateType::Equals {
                inclusivity
            } else {
                Inclusivity::Undefined
            };
            Intent::set_span(*span, ptype, inc)
        }
        65..=74 if !facet.tags.is_empty() => {
            let tag = facet.tags.choose(rng).expect("non-empty");
            Intent::clear_tag(TagRef::new(facet.id.0.clone(), tag.id.0.clone()))
        }
        75..=82 => Intent::clear_facet(facet.id.clone()),
        83..=85 => Intent::ClearAllFacets,
        86..=92 if ordered => {
            let d = if rng.random_bool(0.5) {
                NudgeDirection::Positive
            } else {
                NudgeDirection::Negative
            };
            Intent::nudge(facet.id.clone(), d)
        }
        _ if ordered => {
            let d = if rng.random_bool(0.5) {
                SortDirection::Ascending
            } else {
                SortDirection::Descending
            };
            Intent::order_by(facet.id.clone(), d)
        }
        _ => Intent::clear_facet(facet.id.clone()),
    }
}

/// A reachable dialog state: `turns` random intent batches applied in
/// `category`, skipping batches the tracker rejects.
pub fn random_state(
    tracker: &StateTracker<'_>,
    category: &ProductCategory,
    turns: usize,
    rng: &mut impl Rng,
) -> DialogState {
    let mut state = DialogState::new(Some(category.id.clone()));
    let stats = nudge_stats(category);
    for _ in 0..turns {
        let len = rng.random_range(1..=3);
        let intents: Vec<Intent> = (0..len).map(|_| random_intent(category, rng)).collect();
        if let Ok(update) = tracker.apply(&state, &intents, &stats) {
            state = update.state;
        }
    }
    state
}

/// Fixed statistics so nudges without a bound still have an anchor.
pub fn nudge_stats(category: &ProductCategory) -> Vec<FacetStats> {
    category
        .facets
        .iter()
        .filter(|f| f.has_type(FacetType::Numeric))
        .map(|f| FacetStats {
            facet: f.id.clone(),
            count: 1,
            min: VALUE_RANGE.0,
            median: (VALUE_RANGE.0 + VALUE_RANGE.1) / 2.0,
            max: VALUE_RANGE.1,
        })
        .collect()
}
