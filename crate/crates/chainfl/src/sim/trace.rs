//! Structured run trace. Events append in dispatch order and serialize as
//! JSON lines, one object per line, with deterministic key order. Tests and
//! the CLI both consume this stream.

use super::SimTime;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TraceEvent {
    pub t: SimTime,
    pub entity: String,
    pub kind: String,
    pub detail: Value,
}

#[derive(Debug, Default, Clone)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, t: SimTime, entity: impl Into<String>, kind: impl Into<String>, detail: Value) {
        self.events.push(TraceEvent { t, entity: entity.into(), kind: kind.into(), detail });
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// One JSON object per line. `serde_json` maps are sorted, so the bytes
    /// are a pure function of the recorded events.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }
}
