//! Command-line and HTTP front end over `facetalk_core`.

pub mod http;
pub mod repl;

use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use facetalk_core::{
    build_index, load_lexicon, load_schema, Engine, EngineConfig, Lexicon, Schema,
};

pub fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

pub fn schema_from(path: &Path) -> Result<Schema> {
    load_schema(&read(path)?).with_context(|| format!("loading schema {}", path.display()))
}

pub fn lexicon_from(path: &Path) -> Result<Lexicon> {
    load_lexicon(&read(path)?).with_context(|| format!("loading lexicon {}", path.display()))
}

pub fn engine_from(
    schema: &Path,
    lexicon: &Path,
    catalog: &Path,
    config: EngineConfig,
) -> Result<Arc<Engine>> {
    let schema = schema_from(schema)?;
    let lexicon = lexicon_from(lexicon)?;
    let index = build_index(&read(catalog)?, &schema)
        .with_context(|| format!("loading catalog {}", catalog.display()))?;
    Ok(Arc::new(Engine::new(schema, lexicon, index, config)))
}
