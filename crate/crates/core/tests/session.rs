mod common;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::thread;

use facetalk_core::session::{
    Event, FileStore, MemoryStore, SessionManager, SnapshotStore, MAX_UTTERANCE_TOKENS,
};
use facetalk_core::{DialogAct, DialogState, EngineConfig, SessionError};

use common::{engine, manager, SHOE_DIALOG};

#[test]
fn two_sessions_get_distinct_ids() {
    let m = manager();
    let a = m.create_session();
    let b = m.create_session();
    assert_ne!(a, b);
    assert_eq!(m.len(), 2);
}

#[test]
fn fresh_session_has_no_preferences() {
    let m = manager();
    let id = m.create_session();
    let view = m.get_state(&id).unwrap();
    assert_eq!(view.summary, "no preferences yet");
    assert_eq!(view.state, DialogState::default());
    assert_eq!(view.prompt, None);
}

#[test]
fn hundred_concurrent_creations() {
    let m = Arc::new(manager());
    let handles: Vec<_> = (0..100)
        .map(|_| {
            let m = Arc::clone(&m);
            thread::spawn(move || m.create_session())
        })
        .collect();
    let ids: BTreeSet<String> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(ids.len(), 100);
    assert_eq!(m.len(), 100);
    for id in &ids {
        assert!(m.get_state(id).is_ok());
    }
}

#[test]
fn category_only_turn_prompts_for_refinement() {
    let m = manager();
    let id = m.create_session();
    let r = m.handle_utterance(&id, "i want to buy shoes").unwrap();
    assert_eq!(
        r.prompt.as_deref(),
        Some("got it! what kind of shoes did you have in mind?")
    );
    assert_eq!(m.get_state(&id).unwrap().state.category.unwrap().0, "shoes");
    assert_eq!(r.state_summary, "shoes");
    assert!(!r.products.is_empty());
    assert!(r.products.iter().all(|p| p.category.0 == "shoes"));
    assert!(r.events.is_empty());
}

#[test]
fn red_shoes_summary() {
    let m = manager();
    let id = m.create_session();
    m.handle_utterance(&id, "red shoes").unwrap();
    assert!(m.get_state(&id).unwrap().summary.contains("color: red"));
}

#[test]
fn deny_while_prompt_pending_ends_prompting() {
    let m = manager();
    let id = m.create_session();
    m.handle_utterance(&id, "nike shoes").unwrap();
    let before = m.get_state(&id).unwrap();
    assert!(before.prompt.is_some());
    let r = m.handle_utterance(&id, "no thank you").unwrap();
    assert_eq!(r.dialog_act, DialogAct::Deny);
    assert_eq!(r.prompt, None);
    assert!(r.intents.is_empty());
    let after = m.get_state(&id).unwrap();
    assert_eq!(after.state.facets, before.state.facets);
    assert_eq!(after.state.category, before.state.category);
    assert_eq!(after.summary, before.summary);
    let next = m.handle_utterance(&id, "red").unwrap();
    assert_eq!(next.prompt, None);
    assert!(next.state_summary.contains("color: red"));
}

#[test]
fn no_without_prompt_is_not_a_deny() {
    let m = SessionManager::new(
        engine(EngineConfig {
            prompting: false,
            ..EngineConfig::default()
        }),
        Arc::new(MemoryStore::new()),
        1,
    );
    let id = m.create_session();
    let r = m.handle_utterance(&id, "nike shoes").unwrap();
    assert_eq!(r.prompt, None);
    let r = m.handle_utterance(&id, "no").unwrap();
    assert_ne!(r.dialog_act, DialogAct::Deny);
}

#[test]
fn unparsed_turn_keeps_state_and_results() {
    let m = manager();
    let id = m.create_session();
    m.handle_utterance(&id, "nike shoes under $100").unwrap();
    let before = m.snapshot(&id).unwrap();
    let r = m.handle_utterance(&id, "hmm, well, um").unwrap();
    assert!(r.has_event(|e| matches!(e, Event::ClarificationNeeded { .. })));
    assert!(r.prompt.is_some());
    let after = m.snapshot(&id).unwrap();
    assert_eq!(after.state, before.state);
    assert_eq!(after.last_results, before.last_results);
    assert_eq!(after.history.len(), before.history.len() + 1);
    assert_eq!(
        r.products.iter().map(|p| p.id.clone()).collect::<Vec<_>>(),
        before.last_results
    );
}

#[test]
fn zero_results_event_iff_empty_page() {
    let m = manager();
    let id = m.create_session();
    for u in [
        "nike shoes",
        "under $5",
        "start over",
        "televisions",
        "sony",
        "samsung only",
    ] {
        let r = m.handle_utterance(&id, u).unwrap();
        let zero = r.has_event(|e| matches!(e, Event::ZeroResults));
        assert_eq!(zero, r.products.is_empty(), "{u}");
    }
    let r = m.handle_utterance(&id, "under 1 dollars").unwrap();
    assert!(r.products.is_empty());
    assert!(r.has_event(|e| matches!(e, Event::ZeroResults)));
}

#[test]
fn oversized_utterance_rejected() {
    let m = manager();
    let id = m.create_session();
    let ok = vec!["red"; MAX_UTTERANCE_TOKENS].join(" ");
    assert!(m.handle_utterance(&id, &ok).is_ok());
    let long = vec!["red"; MAX_UTTERANCE_TOKENS + 1].join(" ");
    let err = m.handle_utterance(&id, &long).unwrap_err();
    assert_eq!(
        err,
        SessionError::TooLong {
            tokens: MAX_UTTERANCE_TOKENS + 1,
            limit: MAX_UTTERANCE_TOKENS
        }
    );
    assert_eq!(err.code(), "UTTERANCE_TOO_LONG");
}

#[test]
fn unknown_session_is_not_found() {
    let m = manager();
    assert_eq!(m.get_state("s-nope").unwrap_err().code(), "NOT_FOUND");
    assert!(matches!(
        m.handle_utterance("s-nope", "red"),
        Err(SessionError::NotFound(_))
    ));
    assert!(matches!(
        m.delete_session("s-nope"),
        Err(SessionError::NotFound(_))
    ));
}

#[test]
fn delete_removes_session() {
    let m = manager();
    let id = m.create_session();
    m.handle_utterance(&id, "red shoes").unwrap();
    m.delete_session(&id).unwrap();
    assert!(m.get_state(&id).is_err());
    assert!(m.is_empty());
}

fn replay(m: &SessionManager) -> Vec<String> {
    let id = m.create_session();
    SHOE_DIALOG
        .iter()
        .map(|u| {
            m.handle_utterance(&id, u).unwrap();
            m.get_state(&id).unwrap().state.to_canonical_json()
        })
        .collect()
}

#[test]
fn replay_is_deterministic() {
    let a = replay(&manager());
    let b = replay(&manager());
    assert_eq!(a, b);
    let m = manager();
    assert_eq!(replay(&m), replay(&m));
}

#[test]
fn history_grows_and_context_mirrors_state() {
    let m = manager();
    let id = m.create_session();
    for (n, u) in SHOE_DIALOG.iter().enumerate() {
        m.handle_utterance(&id, u).unwrap();
        let s = m.snapshot(&id).unwrap();
        assert_eq!(s.history.len(), n + 1);
        assert_eq!(s.context.active_category, s.state.category);
    }
}

#[test]
fn file_store_persists_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(FileStore::new(dir.path()).unwrap());
    let m = SessionManager::new(engine(EngineConfig::default()), store.clone(), 3);
    let id = m.create_session();
    m.handle_utterance(&id, "nike shoes").unwrap();
    m.handle_utterance(&id, "not white").unwrap();
    let state = m.get_state(&id).unwrap().state;
    assert_eq!(
        store.latest(&id).unwrap().unwrap(),
        state.to_canonical_json()
    );
    let first = store.get(&format!("{id}/{:06}", 1)).unwrap().unwrap();
    assert!(DialogState::from_json(&first)
        .unwrap()
        .facets
        .contains_key(&"brand".into()));

    let fresh = SessionManager::new(engine(EngineConfig::default()), store.clone(), 4);
    fresh.resume_session(&id).unwrap();
    assert_eq!(fresh.get_state(&id).unwrap().state, state);
    fresh.delete_session(&id).unwrap();
    assert_eq!(store.latest(&id).unwrap(), None);
}

#[test]
fn file_store_rejects_bad_ids() {
    let dir = tempfile::tempdir().unwrap();
    let store = FileStore::new(dir.path()).unwrap();
    assert!(store.put("../escape", 1, "{}").is_err());
    assert!(store.put("ok-id_1", 1, "{}").is_ok());
}

#[test]
fn memory_store_latest_is_highest_turn() {
    let store = MemoryStore::new();
    store.put("a", 2, "two").unwrap();
    store.put("a", 10, "ten").unwrap();
    store.put("b", 5, "other").unwrap();
    assert_eq!(store.latest("a").unwrap().as_deref(), Some("ten"));
    assert_eq!(store.get("a/000002").unwrap().as_deref(), Some("two"));
    store.remove_session("a").unwrap();
    assert_eq!(store.len(), 1);
}

#[test]
fn turns_of_one_session_are_serialized() {
    let m = Arc::new(manager());
    let id = m.create_session();
    m.handle_utterance(&id, "shoes").unwrap();
    let handles: Vec<_> = ["red", "pink", "blue", "green", "black", "grey"]
        .into_iter()
        .map(|c| {
            let m = Arc::clone(&m);
            let id = id.clone();
            thread::spawn(move || m.handle_utterance(&id, &format!("also {c}")).unwrap().turn)
        })
        .collect();
    let mut turns: Vec<u64> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    turns.sort();
    assert_eq!(turns, (2..=7).collect::<Vec<_>>());
    let state = m.get_state(&id).unwrap().state;
    assert_eq!(state.facets[&"color".into()].positive.len(), 6);
}
