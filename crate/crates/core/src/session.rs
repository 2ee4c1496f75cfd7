//! Per-turn orchestration and session management.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::{FairMutex, Mutex, RwLock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clu::{
    CategoryDecision, DialogAct, Intent, ParseContext, ParseResult, Parser, PromptKind,
};
use crate::dst::{render_state, DialogState, DstConfig, DstEvent, StateTracker};
use crate::fulfillment::{compile_request, facet_stats, FacetStats, Index, Product};
use crate::relatedness::{Lexicon, LexiconOracle};
use crate::schema::{CategoryId, FacetId, Schema};
use crate::text;

pub const MAX_UTTERANCE_TOKENS: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Event {
    CategorySwitch {
        #[serde(skip_serializing_if = "Option::is_none")]
        from: Option<CategoryId>,
        to: CategoryId,
    },
    AtLimit {
        facet: FacetId,
    },
    ClarificationNeeded {
        reason: String,
    },
    ZeroResults,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResponse {
    pub session_id: String,
    pub turn: u64,
    pub intents: Vec<Intent>,
    pub dialog_act: DialogAct,
    pub state_summary: String,
    pub products: Vec<Product>,
    pub prompt: Option<String>,
    pub events: Vec<Event>,
}

impl TurnResponse {
    pub fn has_event(&self, pred: impl Fn(&Event) -> bool) -> bool {
        self.events.iter().any(pred)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub session_id: String,
    pub state: DialogState,
    pub summary: String,
    pub prompt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub utterance: String,
    pub parse: Option<ParseResult>,
    pub snapshot: String,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub state: DialogState,
    pub context: ParseContext,
    pub last_results: Vec<String>,
    pub history: Vec<HistoryEntry>,
    prompt: Option<String>,
    prompting: bool,
}

impl Session {
    fn new(id: String, prompting: bool) -> Self {
        Self {
            id,
            state: DialogState::default(),
            context: ParseContext::default(),
            last_results: Vec::new(),
            history: Vec::new(),
            prompt: None,
            prompting,
        }
    }

    pub fn prompt(&self) -> Option<&str> {
        self.prompt.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("no session '{0}'")]
    NotFound(String),
    #[error("utterance has {tokens} tokens; the limit is {limit}")]
    TooLong { tokens: usize, limit: usize },
    #[error("snapshot store: {0}")]
    Store(String),
}

impl SessionError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::NotFound(_) => "NOT_FOUND",
            SessionError::TooLong { .. } => "UTTERANCE_TOO_LONG",
            SessionError::Store(_) => "STORE_ERROR",
        }
    }
}

/// Key-value persistence for per-turn state snapshots.
pub trait SnapshotStore: Send + Sync {
    /// Stores a snapshot and returns its id.
    fn put(&self, session_id: &str, turn: u64, state_json: &str) -> Result<String, SessionError>;
    fn get(&self, snapshot_id: &str) -> Result<Option<String>, SessionError>;
    fn latest(&self, session_id: &str) -> Result<Option<String>, SessionError>;
    fn remove_session(&self, session_id: &str) -> Result<(), SessionError>;
}

fn snapshot_id(session_id: &str, turn: u64) -> String {
    format!("{session_id}/{turn:06}")
}

#[derive(Default)]
pub struct MemoryStore {
    map: Mutex<BTreeMap<String, String>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SnapshotStore for MemoryStore {
    fn put(&self, session_id: &str, turn: u64, state_json: &str) -> Result<String, SessionError> {
        let id = snapshot_id(session_id, turn);
        self.map.lock().insert(id.clone(), state_json.to_string());
        Ok(id)
    }

    fn get(&self, snapshot_id: &str) -> Result<Option<String>, SessionError> {
        Ok(self.map.lock().get(snapshot_id).cloned())
    }

    fn latest(&self, session_id: &str) -> Result<Option<String>, SessionError> {
        let prefix = format!("{session_id}/");
        Ok(self
            .map
            .lock()
            .range(prefix.clone()..)
            .take_while(|(k, _)| k.starts_with(&prefix))
            .last()
            .map(|(_, v)| v.clone()))
    }

    fn remove_session(&self, session_id: &str) -> Result<(), SessionError> {
        let prefix = format!("{session_id}/");
        self.map.lock().retain(|k, _| !k.starts_with(&prefix));
        Ok(())
    }
}

/// One directory per session, one JSON file per turn.
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| SessionError::Store(e.to_string()))?;
        Ok(Self { root })
    }

    fn path(&self, snapshot_id: &str) -> Option<PathBuf> {
        let (session, turn) = snapshot_id.split_once('/')?;
        valid_session_id(session).then(|| self.root.join(session).join(format!("{turn}.json")))
    }
}

fn valid_session_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn io_err(e: std::io::Error) -> SessionError {
    SessionError::Store(e.to_string())
}

impl SnapshotStore for FileStore {
    fn put(&self, session_id: &str, turn: u64, state_json: &str) -> Result<String, SessionError> {
        let id = snapshot_id(session_id, turn);
        let path = self
            .path(&id)
            .ok_or_else(|| SessionError::Store(format!("invalid session id '{session_id}'")))?;
        fs::create_dir_all(path.parent().expect("session dir")).map_err(io_err)?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, state_json).map_err(io_err)?;
        fs::rename(&tmp, &path).map_err(io_err)?;
        Ok(id)
    }

    fn get(&self, snapshot_id: &str) -> Result<Option<String>, SessionError> {
        let Some(path) = self.path(snapshot_id) else {
            return Ok(None);
        };
        match fs::read_to_string(path) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(e)),
        }
    }

    fn latest(&self, session_id: &str) -> Result<Option<String>, SessionError> {
        if !valid_session_id(session_id) {
            return Ok(None);
        }
        let dir = self.root.join(session_id);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(e)),
        };
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.ends_with(".json"))
            .collect();
        names.sort();
        match names.last() {
            Some(n) => fs::read_to_string(dir.join(n)).map(Some).map_err(io_err),
            None => Ok(None),
        }
    }

    fn remove_session(&self, session_id: &str) -> Result<(), SessionError> {
        if !valid_session_id(session_id) {
            return Ok(());
        }
        match fs::remove_dir_all(self.root.join(session_id)) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(io_err(e)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub page_size: usize,
    pub prompting: bool,
    pub max_tokens: usize,
    pub dst: DstConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            page_size: 10,
            prompting: true,
            max_tokens: MAX_UTTERANCE_TOKENS,
            dst: DstConfig::default(),
        }
    }
}

/// Schema, lexicon and product index shared by all sessions.
pub struct Engine {
    schema: Schema,
    lexicon: Lexicon,
    index: RwLock<Arc<Index>>,
    config: EngineConfig,
}

impl Engine {
    pub fn new(schema: Schema, lexicon: Lexicon, index: Index, config: EngineConfig) -> Self {
        Self {
            schema,
            lexicon,
            index: RwLock::new(Arc::new(index)),
            config,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn index(&self) -> Arc<Index> {
        self.index.read().clone()
    }

    /// Swaps in a new catalog; turns already running keep the old one.
    pub fn replace_index(&self, index: Index) {
        *self.index.write() = Arc::new(index);
    }

    fn products(&self, index: &Index, ids: &[String]) -> Vec<Product> {
        ids.iter()
            .filter_map(|id| index.product(id).cloned())
            .collect()
    }

    fn clarify(
        &self,
        session: &mut Session,
        utterance: &str,
        parse: Option<ParseResult>,
        reason: String,
        prompt: String,
    ) -> TurnResponse {
        let index = self.index();
        session.prompt = Some(prompt);
        session.history.push(HistoryEntry {
            utterance: utterance.to_string(),
            parse: parse.clone(),
            snapshot: snapshot_id(&session.id, session.state.turn),
        });
        TurnResponse {
            session_id: session.id.clone(),
            turn: session.state.turn,
            intents: parse.map(|p| p.intents).unwrap_or_default(),
            dialog_act: DialogAct::None,
            state_summary: render_state(&session.state, &self.schema),
            products: self.products(&index, &session.last_results),
            prompt: session.prompt.clone(),
            events: vec![Event::ClarificationNeeded { reason }],
        }
    }

    /// Runs one turn: parse, update state, search and respond.
    pub fn handle_turn(
        &self,
        session: &mut Session,
        utterance: &str,
        store: &dyn SnapshotStore,
    ) -> Result<TurnResponse, SessionError> {
        let tokens = text::normalize(utterance);
        if tokens.len() > self.config.max_tokens {
            return Err(SessionError::TooLong {
                tokens: tokens.len(),
                limit: self.config.max_tokens,
            });
        }
        let pending = session.prompt.as_ref().map(|_| {
            session
                .context
                .pending_prompt
                .unwrap_or(PromptKind::Refinement)
        });
        let context = session.state.parse_context(pending);
        let parser = Parser::new(&self.schema, &self.lexicon);
        let parse = match parser.parse_tokens(&tokens, &context) {
            Ok(p) => p,
            Err(e) => {
                let prompt = format!("sorry, {e}. could you rephrase?");
                session.context.pending_prompt = Some(PromptKind::Clarification);
                return Ok(self.clarify(session, utterance, None, e.to_string(), prompt));
            }
        };
        if parse.unparsed {
            session.context.pending_prompt = Some(PromptKind::Clarification);
            let prompt = "sorry, i didn't get that. could you rephrase?".to_string();
            return Ok(self.clarify(
                session,
                utterance,
                Some(parse),
                "utterance not understood".into(),
                prompt,
            ));
        }

        let mut events = Vec::new();
        let mut next = session.state.clone();
        match &parse.category_decision {
            CategoryDecision::Keep => {}
            CategoryDecision::Initial(c) => next = next.switched_to(c.clone()),
            CategoryDecision::Switch(c) => {
                events.push(Event::CategorySwitch {
                    from: next.category.clone(),
                    to: c.clone(),
                });
                next = next.switched_to(c.clone());
            }
        }

        let index = self.index();
        let mut ended_prompting = false;
        match parse.dialog_act {
            DialogAct::Deny => {
                ended_prompting = true;
                next.turn += 1;
            }
            DialogAct::Affirm => next.turn += 1,
            DialogAct::Reset => {
                next = DialogState {
                    turn: next.turn + 1,
                    ..DialogState::default()
                };
            }
            DialogAct::None => {
                let stats = self.nudge_stats(&index, &session.last_results, &parse.intents);
                let oracle = LexiconOracle::new(&self.schema, &self.lexicon);
                let tracker = StateTracker::with_config(&self.schema, &oracle, self.config.dst);
                match tracker.apply(&next, &parse.intents, &stats) {
                    Ok(update) => {
                        next = update.state;
                        events.extend(update.events.into_iter().map(|e| match e {
                            DstEvent::AtLimit { facet } => Event::AtLimit { facet },
                        }));
                    }
                    Err(e) => {
                        session.context.pending_prompt = Some(PromptKind::Clarification);
                        let prompt = format!("sorry, {e}. could you say more?");
                        return Ok(self.clarify(
                            session,
                            utterance,
                            Some(parse),
                            e.to_string(),
                            prompt,
                        ));
                    }
                }
            }
        }

        let results: Vec<String> = match compile_request(&next, &self.schema) {
            Ok(req) => {
                let page: Vec<String> = index
                    .search(&req, self.config.page_size)
                    .into_iter()
                    .map(|p| p.id.clone())
                    .collect();
                if page.is_empty() {
                    events.push(Event::ZeroResults);
                }
                page
            }
            Err(_) => Vec::new(),
        };

        let snapshot = store.put(&session.id, next.turn, &next.to_canonical_json())?;
        if ended_prompting {
            session.prompting = false;
        }
        let prompt = if session.prompting {
            Some(self.refinement_prompt(&next, &parse.category_decision))
        } else {
            None
        };
        session.state = next;
        session.context = session
            .state
            .parse_context(prompt.as_ref().map(|_| PromptKind::Refinement));
        session.last_results = results;
        session.prompt = prompt;
        session.history.push(HistoryEntry {
            utterance: utterance.to_string(),
            parse: Some(parse.clone()),
            snapshot,
        });
        Ok(TurnResponse {
            session_id: session.id.clone(),
            turn: session.state.turn,
            intents: parse.intents,
            dialog_act: parse.dialog_act,
            state_summary: render_state(&session.state, &self.schema),
            products: self.products(&index, &session.last_results),
            prompt: session.prompt.clone(),
            events,
        })
    }

    fn refinement_prompt(&self, state: &DialogState, decision: &CategoryDecision) -> String {
        let category = state
            .category
            .as_ref()
            .and_then(|c| self.schema.category(c));
        match (category, decision) {
            (None, _) => "what are you shopping for?".to_string(),
            (Some(c), CategoryDecision::Initial(_) | CategoryDecision::Switch(_))
                if state.is_empty() =>
            {
                format!(
                    "got it! what kind of {} did you have in mind?",
                    c.canonical_phrase
                )
            }
            _ => "anything else?".to_string(),
        }
    }

    fn nudge_stats(
        &self,
        index: &Index,
        last_results: &[String],
        intents: &[Intent],
    ) -> Vec<FacetStats> {
        let page: Vec<&Product> = last_results
            .iter()
            .filter_map(|id| index.product(id))
            .collect();
        intents
            .iter()
            .filter_map(|i| match i {
                Intent::NudgeFacet { facet, .. } => facet_stats(index, &page, facet),
                _ => None,
            })
            .collect()
    }
}

/// Seeded generator of opaque session ids.
pub struct IdGen {
    rng: ChaCha8Rng,
}

impl IdGen {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_id(&mut self) -> String {
        format!("s-{:016x}", self.rng.random::<u64>())
    }
}

/// Live sessions. Turns of one session run one at a time in arrival order;
/// different sessions proceed in parallel.
pub struct SessionManager {
    engine: Arc<Engine>,
    store: Arc<dyn SnapshotStore>,
    sessions: RwLock<HashMap<String, Arc<FairMutex<Session>>>>,
    ids: Mutex<IdGen>,
}

impl SessionManager {
    pub fn new(engine: Arc<Engine>, store: Arc<dyn SnapshotStore>, seed: u64) -> Self {
        Self {
            engine,
            store,
            sessions: RwLock::new(HashMap::new()),
            ids: Mutex::new(IdGen::new(seed)),
        }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn len(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn create_session(&self) -> String {
        let mut sessions = self.sessions.write();
        let id = loop {
            let id = self.ids.lock().next_id();
            if !sessions.contains_key(&id) {
                break id;
            }
        };
        let session = Session::new(id.clone(), self.engine.config.prompting);
        sessions.insert(id.clone(), Arc::new(FairMutex::new(session)));
        id
    }

    /// Reopens a session from its latest stored snapshot.
    pub fn resume_session(&self, id: &str) -> Result<(), SessionError> {
        let json = self
            .store
            .latest(id)?
            .ok_or_else(|| SessionError::NotFound(id.to_string()))?;
        let state =
            DialogState::from_json(&json).map_err(|e| SessionError::Store(e.to_string()))?;
        let mut session = Session::new(id.to_string(), self.engine.config.prompting);
        session.context = state.parse_context(None);
        session.state = state;
        self.sessions
            .write()
            .insert(id.to_string(), Arc::new(FairMutex::new(session)));
        Ok(())
    }

    fn session(&self, id: &str) -> Result<Arc<FairMutex<Session>>, SessionError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    pub fn handle_utterance(&self, id: &str, text: &str) -> Result<TurnResponse, SessionError> {
        let session = self.session(id)?;
        let mut guard = session.lock();
        self.engine
            .handle_turn(&mut guard, text, self.store.as_ref())
    }

    pub fn get_state(&self, id: &str) -> Result<StateView, SessionError> {
        let session = self.session(id)?;
        let guard = session.lock();
        Ok(StateView {
            session_id: guard.id.clone(),
            state: guard.state.clone(),
            summary: render_state(&guard.state, &self.engine.schema),
            prompt: guard.prompt.clone(),
        })
    }

    /// Copy of the full session record.
    pub fn snapshot(&self, id: &str) -> Result<Session, SessionError> {
        Ok(self.session(id)?.lock().clone())
    }

    pub fn delete_session(&self, id: &str) -> Result<(), SessionError> {
        self.sessions
            .write()
            .remove(id)
            .ok_or_else(|| SessionError::NotFound(id.to_string()))?;
        self.store.remove_session(id)
    }
}
