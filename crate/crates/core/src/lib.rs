//! Conversational faceted search: utterance parsing, dialog state tracking
//! and catalog fulfillment over a product schema.

pub mod clu;
pub mod corpusgen;
pub mod dst;
pub mod fulfillment;
pub mod relatedness;
pub mod schema;
pub mod session;
pub mod synth;
pub mod text;

pub use clu::{
    CategoryDecision, DialogAct, Inclusivity, Intent, ParseContext, ParseError, ParseResult,
    Parser, PredicateType, PromptKind, SortDirection, Value,
};
pub use corpusgen::{
    load_grammar, round_trip_eval, Grammar, GrammarError, LabeledUtterance, RoundTripReport,
};
pub use dst::{
    render_state, DialogState, DstConfig, DstError, DstEvent, Range, SortOrder, StateTracker,
};
pub use fulfillment::{
    build_index, Catalog, FacetStats, FulfillmentError, Index, Product, SearchRequest,
};
pub use relatedness::{load_lexicon, Lexicon, LexiconOracle, RelationOracle};
pub use schema::{
    load_schema, CategoryId, Facet, FacetId, FacetType, NudgeDirection, ProductCategory, Schema,
    SchemaError, Tag, TagId, TagRef,
};
pub use session::{
    Engine, EngineConfig, Event, FileStore, MemoryStore, SessionError, SessionManager,
    SnapshotStore, TurnResponse,
};
