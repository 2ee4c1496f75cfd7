//! Line-oriented chat loop: one utterance per line, summary and top
//! products after each turn.

use std::io::{BufRead, Write};

use anyhow::Result;
use facetalk_core::session::Event;
use facetalk_core::SessionManager;

pub fn run(
    sessions: &SessionManager,
    input: impl BufRead,
    mut out: impl Write,
    top_k: usize,
) -> Result<()> {
    let id = sessions.create_session();
    for line in input.lines() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text == ":quit" {
            break;
        }
        let turn = match sessions.handle_utterance(&id, text) {
            Ok(t) => t,
            Err(e) => {
                writeln!(out, "error [{}]: {e}", e.code())?;
                continue;
            }
        };
        writeln!(out, "[{}] {}", turn.turn, turn.state_summary)?;
        for p in turn.products.iter().take(top_k) {
            writeln!(out, "  {}  {}", p.id, p.title)?;
        }
        if turn.has_event(|e| matches!(e, Event::ZeroResults)) {
            writeln!(out, "  (no matching products)")?;
        }
        if let Some(prompt) = &turn.prompt {
            writeln!(out, "> {prompt}")?;
        }
    }
    Ok(())
}
