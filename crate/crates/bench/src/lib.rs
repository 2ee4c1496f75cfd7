//! Fixture loading shared by the benchmarks.

use facetalk_core::{
    build_index, load_grammar, load_lexicon, load_schema, Grammar, Index, Lexicon, Schema,
};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures");

fn read(name: &str) -> Vec<u8> {
    std::fs::read(format!("{FIXTURES}/{name}")).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn schema() -> Schema {
    load_schema(&read("schema.json")).expect("fixture schema")
}

pub fn lexicon() -> Lexicon {
    load_lexicon(&read("lexicon.json")).expect("fixture lexicon")
}

pub fn grammar() -> Grammar {
    load_grammar(&read("grammar.json")).expect("fixture grammar")
}

pub fn index(schema: &Schema) -> Index {
    build_index(&read("catalog.json"), schema).expect("fixture catalog")
}

/// A representative shopping dialog, one utterance per turn.
pub const DIALOG: &[&str] = &[
    "i want to buy women's nike shoes",
    "show me red",
    "actually i want pink",
    "i don't care about the color but not white",
    "adidas or nike",
    "good for running",
    "waterproof",
    "under 100 dollars",
    "cheaper",
    "size 9",
    "red socks",
];
