#![allow(dead_code)]

pub mod props;

use std::sync::Arc;

use facetalk_core::{
    build_index, load_grammar, load_lexicon, load_schema, Engine, EngineConfig, Grammar, Index,
    Lexicon, MemoryStore, Schema, SessionManager,
};

pub fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

pub fn schema() -> Schema {
    load_schema(&fixture("schema.json")).unwrap()
}

pub fn lexicon() -> Lexicon {
    load_lexicon(&fixture("lexicon.json")).unwrap()
}

pub fn grammar() -> Grammar {
    load_grammar(&fixture("grammar.json")).unwrap()
}

pub fn index(schema: &Schema) -> Index {
    build_index(&fixture("catalog.json"), schema).unwrap()
}

pub fn engine(config: EngineConfig) -> Arc<Engine> {
    let schema = schema();
    let index = index(&schema);
    Arc::new(Engine::new(schema, lexicon(), index, config))
}

pub fn manager() -> SessionManager {
    SessionManager::new(
        engine(EngineConfig::default()),
        Arc::new(MemoryStore::new()),
        7,
    )
}

/// The customer turns of the reference shoe dialog.
pub const SHOE_DIALOG: [&str; 11] = [
    "Show me some Nike women’s shoes please.",
    "Do you have anything in red?",
    "How about pink?",
    "Actually, almost any color will do; just make sure it’s not white.",
    "Hmmm… let’s also see Adidas.",
    "Okay, it doesn’t have to be Adidas but I want ones that are good for running.",
    "Something that protects my feet in heavy rain.",
    "Do you have anything less than a hundred bucks?",
    "Anything even cheaper?",
    "Size 9.",
    "I want to buy some red socks too.",
];

pub mod table {
    use facetalk_core::clu::{CategoryDecision, Inclusivity, Intent, ParseContext, PredicateType};
    use facetalk_core::{FacetId, NudgeDirection, TagRef};

    pub struct Row {
        pub utterance: &'static str,
        pub context: ParseContext,
        pub intents: Vec<Intent>,
        pub category: Option<CategoryDecision>,
    }

    fn eq(facet: &str, tag: &str) -> Intent {
        Intent::set_tag(
            TagRef::new(facet, tag),
            PredicateType::Equals,
            Inclusivity::Undefined,
        )
    }

    /// The intent table for the shoe domain. Row 8 runs after row 7 touched
    /// the size facet.
    pub fn rows() -> Vec<Row> {
        let shoes = || ParseContext::in_category("shoes");
        let row = |utterance, intents| Row {
            utterance,
            context: shoes(),
            intents,
            category: None,
        };
        vec![
            Row {
                utterance: "Show me some Nike shoes",
                context: ParseContext::default(),
                intents: vec![eq("brand", "nike")],
                category: Some(CategoryDecision::Initial("shoes".into())),
            },
            row(
                "Something for running",
                vec![Intent::set_span(
                    "running",
                    PredicateType::Equals,
                    Inclusivity::Undefined,
                )],
            ),
            row(
                "Adidas ones too please",
                vec![Intent::set_tag(
                    TagRef::new("brand", "adidas"),
                    PredicateType::Equals,
                    Inclusivity::Inclusive,
                )],
            ),
            row(
                "Orange is okay but I don’t want pink",
                vec![
                    eq("color", "orange"),
                    Intent::set_tag(
                        TagRef::new("color", "pink"),
                        PredicateType::NotEquals,
                        Inclusivity::Undefined,
                    ),
                ],
            ),
            row(
                "Do you have anything in razmatazz?",
                vec![Intent::set_span(
                    "razmatazz",
                    PredicateType::Equals,
                    Inclusivity::Undefined,
                )],
            ),
            row(
                "Actually any color is OK",
                vec![Intent::clear_facet(FacetId::new("color"))],
            ),
            row("Size 9", vec![eq("size", "9")]),
            Row {
                utterance: "Show me something bigger",
                context: ParseContext {
                    last_touched_facet: Some(FacetId::new("size")),
                    ..shoes()
                },
                intents: vec![Intent::nudge(
                    FacetId::new("size"),
                    NudgeDirection::Positive,
                )],
                category: None,
            },
            row(
                "It doesn't have to be black",
                vec![Intent::clear_tag(TagRef::new("color", "black"))],
            ),
            row(
                "Do you have anything less than fifty bucks?",
                vec![Intent::set_number(
                    FacetId::new("price"),
                    50.0,
                    PredicateType::LessThan,
                )],
            ),
            row("start over", vec![Intent::ClearAllFacets]),
        ]
    }
}

/// Linear-scan reference for catalog search, written against the dialog
/// state directly.
pub mod oracle {
    use std::cmp::Ordering;
    use std::collections::BTreeSet;

    use facetalk_core::clu::{PredicateType, SortDirection};
    use facetalk_core::dst::Range;
    use facetalk_core::text::content_tokens;
    use facetalk_core::{DialogState, FacetId, Product, ProductCategory, Schema};

    fn in_range(r: &Range, v: f64) -> bool {
        let lo = r.lower.is_none_or(|b| {
            if b.inclusive {
                v >= b.value
            } else {
                v > b.value
            }
        });
        let hi = r.upper.is_none_or(|b| {
            if b.inclusive {
                v <= b.value
            } else {
                v < b.value
            }
        });
        lo && hi
    }

    pub fn scalars(category: &ProductCategory, p: &Product, facet: &FacetId) -> Vec<f64> {
        let Some(f) = category.facet(facet) else {
            return vec![];
        };
        let mut out: Vec<f64> = p
            .tags
            .iter()
            .filter(|t| &t.facet == facet)
            .filter_map(|t| f.tag(&t.tag).and_then(|tag| f.scalar_of(tag)))
            .collect();
        out.extend(p.values.get(facet));
        out
    }

    fn words(p: &Product) -> BTreeSet<String> {
        content_tokens(&format!("{} {}", p.title, p.description))
            .into_iter()
            .collect()
    }

    pub fn matches(schema: &Schema, state: &DialogState, p: &Product) -> bool {
        let Some(cid) = &state.category else {
            return false;
        };
        if &p.category != cid {
            return false;
        }
        let category = schema.category(cid).unwrap();
        for (fid, fs) in &state.facets {
            let has = |tag: &facetalk_core::TagRef| p.tags.contains(tag);
            let pos: Vec<_> = fs.positive_tags().collect();
            if !pos.is_empty() && !pos.iter().any(|t| has(t)) {
                return false;
            }
            if fs.negative_tags().any(has) {
                return false;
            }
            if let Some(r) = &fs.range {
                if !scalars(category, p, fid)
                    .into_iter()
                    .any(|v| in_range(r, v))
                {
                    return false;
                }
            }
        }
        let have = words(p);
        for pred in &state.ungrounded {
            let Some(span) = pred.value.as_span() else {
                continue;
            };
            let need = content_tokens(span);
            if need.is_empty() {
                continue;
            }
            let all = need.iter().all(|w| have.contains(w));
            let negative = pred.predicate_type == PredicateType::NotEquals;
            if all == negative {
                return false;
            }
        }
        true
    }

    pub fn search<'p>(
        schema: &Schema,
        state: &DialogState,
        products: &'p [Product],
    ) -> Vec<&'p Product> {
        let mut hits: Vec<&Product> = products
            .iter()
            .filter(|p| matches(schema, state, p))
            .collect();
        hits.sort_by(|a, b| a.id.cmp(&b.id));
        if let (Some(sort), Some(cid)) = (&state.sort, &state.category) {
            let category = schema.category(cid).unwrap();
            let key = |p: &Product| {
                let vs = scalars(category, p, &sort.facet);
                match sort.direction {
                    SortDirection::Ascending => vs.into_iter().min_by(f64::total_cmp),
                    SortDirection::Descending => vs.into_iter().max_by(f64::total_cmp),
                }
            };
            hits.sort_by(|a, b| match (key(a), key(b)) {
                (Some(x), Some(y)) => {
                    let o = x.total_cmp(&y);
                    if sort.direction == SortDirection::Descending {
                        o.reverse()
                    } else {
                        o
                    }
                }
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => Ordering::Equal,
            });
        }
        hits
    }
}
