//! Parsers and emitters for the three on-disk formats.
//!
//! * Session logs: JSONL, one event per line, envelope fields
//!   `seq`/`ts`/`event`/`session_id` plus a per-type payload. Only
//!   `tool_call` and `tool_result` lines become events; everything else is
//!   skipped but counted, with `session_start` metadata retained.
//! * Combined corpus files: one JSON document per class holding
//!   `is_malicious`, a triple-nested `sessions` list (chains, fragments,
//!   tool uses), and, for the malicious file, a parallel `malicious_source`
//!   array. This is the canonical interchange format; the other two parsers
//!   normalize into [`ChainRecord`]s shaped exactly like its output.
//! * Attack-graph files: one JSON record per run with
//!   `variation.fragments[]`, each fragment carrying a `tools_executed`
//!   list of `[tool, *args]` rows that become synthesized ToolCall events.
//!
//! Field names follow the upstream schemas byte-for-byte
//! (`tool_call_index`, `result_preview`, `is_malicious`, ...). Unknown
//! fields are ignored; parsing never interprets verdict or judge content.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::event::{ChainRecord, Corpus, EventKind, ToolUseEvent};

// --- shared JSON field helpers ---

fn ctx(origin: &str, line: usize) -> String {
    format!("{origin}:{line}")
}

fn need<'v>(v: &'v Value, key: &str, at: &str) -> Result<&'v Value> {
    v.get(key).ok_or_else(|| Error::Schema(format!("{at}: missing field `{key}`")))
}

fn need_str(v: &Value, key: &str, at: &str) -> Result<String> {
    need(v, key, at)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| Error::Schema(format!("{at}: field `{key}` must be a string")))
}

fn need_u64(v: &Value, key: &str, at: &str) -> Result<u64> {
    need(v, key, at)?
        .as_u64()
        .ok_or_else(|| Error::Schema(format!("{at}: field `{key}` must be a non-negative integer")))
}

fn need_bool(v: &Value, key: &str, at: &str) -> Result<bool> {
    need(v, key, at)?
        .as_bool()
        .ok_or_else(|| Error::Schema(format!("{at}: field `{key}` must be a boolean")))
}

fn opt_str(v: &Value, key: &str) -> Option<String> {
    v.get(key).and_then(Value::as_str).map(str::to_owned)
}

fn opt_u64(v: &Value, key: &str) -> Option<u64> {
    v.get(key).and_then(Value::as_u64)
}

// --- tool-event payload shared by session logs and combined files ---

struct WireToolEvent {
    kind: EventKind,
    seq: u64,
    ts: Option<String>,
    iteration: u64,
    tool: String,
    arguments: String,
    success: bool,
    request_bytes: u64,
    response_bytes: u64,
    call_index: Option<u64>,
    result_index: Option<u64>,
}

/// Decode one record if it is a tool event; `Ok(None)` for other types.
fn wire_tool_event(v: &Value, at: &str) -> Result<Option<WireToolEvent>> {
    let event = need_str(v, "event", at)?;
    let seq = need_u64(v, "seq", at)?;
    let ts = opt_str(v, "ts");
    match event.as_str() {
        "tool_call" => Ok(Some(WireToolEvent {
            kind: EventKind::ToolCall,
            seq,
            ts,
            iteration: need_u64(v, "iteration", at)?,
            tool: need_str(v, "tool", at)?,
            arguments: need_str(v, "arguments", at)?,
            success: true,
            request_bytes: need_u64(v, "arguments_bytes", at)?,
            response_bytes: 0,
            call_index: Some(need_u64(v, "tool_call_index", at)?),
            result_index: None,
        })),
        "tool_result" => Ok(Some(WireToolEvent {
            kind: EventKind::ToolResult,
            seq,
            ts,
            iteration: need_u64(v, "iteration", at)?,
            tool: need_str(v, "tool", at)?,
            arguments: need_str(v, "result_preview", at)?,
            success: need_bool(v, "success", at)?,
            request_bytes: 0,
            response_bytes: need_u64(v, "result_bytes", at)?,
            call_index: None,
            result_index: Some(need_u64(v, "tool_result_index", at)?),
        })),
        _ => Ok(None),
    }
}

impl WireToolEvent {
    fn into_event(self, event_id: usize, user_id: String, session_id: String) -> ToolUseEvent {
        ToolUseEvent {
            event_id,
            user_id,
            session_id,
            seq: self.seq,
            iteration: self.iteration,
            kind: self.kind,
            tool: self.tool,
            arguments: self.arguments,
            success: self.success,
            request_bytes: self.request_bytes,
            response_bytes: self.response_bytes,
            call_index: self.call_index,
            result_index: self.result_index,
            ts: self.ts,
        }
    }
}

// --- session logs (JSONL) ---

/// Metadata captured from a `session_start` line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionMeta {
    pub run_id: Option<String>,
    pub campaign: Option<String>,
    pub style: Option<String>,
    pub user_id: Option<String>,
}

#[derive(Debug, Default)]
pub struct SessionLogParse {
    pub events: Vec<ToolUseEvent>,
    /// Lines of recognized non-tool event types (session_start, verdict, ...).
    pub skipped: usize,
    pub sessions: BTreeMap<String, SessionMeta>,
}

/// Parse a Table-style session log. `origin` names the stream in errors.
pub fn parse_session_log(text: &str, origin: &str) -> Result<SessionLogParse> {
    let mut out = SessionLogParse::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = ctx(origin, idx + 1);
        let v: Value = serde_json::from_str(line)
            .map_err(|e| Error::parse(&at, format!("malformed record: {e}")))?;
        let session_id = need_str(&v, "session_id", &at)?;
        match wire_tool_event(&v, &at)? {
            Some(wire) => {
                let meta = out.sessions.entry(session_id.clone()).or_default();
                let user_id = meta.user_id.clone().unwrap_or_else(|| session_id.clone());
                let event_id = out.events.len();
                out.events.push(wire.into_event(event_id, user_id, session_id));
            }
            None => {
                let event = need_str(&v, "event", &at)?;
                // Envelope checks still apply to skipped lines.
                need_u64(&v, "seq", &at)?;
                if event == "session_start" {
                    out.sessions.insert(
                        session_id,
                        SessionMeta {
                            run_id: opt_str(&v, "run_id"),
                            campaign: opt_str(&v, "campaign"),
                            style: opt_str(&v, "style"),
                            user_id: opt_str(&v, "user_id"),
                        },
                    );
                }
                out.skipped += 1;
            }
        }
    }
    Ok(out)
}

// --- combined corpus files ---

#[derive(Debug, Clone, Serialize)]
struct WireSource<'a> {
    run_id: &'a str,
    seed: u64,
    campaign: &'a str,
    campaign_id: &'a str,
    attack_graph_file: &'a str,
}

#[derive(Serialize)]
struct WireCall<'a> {
    seq: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    ts: Option<&'a str>,
    event: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    session_id: Option<&'a str>,
    iteration: u64,
    tool: &'a str,
    arguments: &'a str,
    arguments_bytes: u64,
    tool_call_index: u64,
}

#[derive(Serialize)]
struct WireResult<'a> {
    seq: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    ts: Option<&'a str>,
    event: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    session_id: Option<&'a str>,
    iteration: u64,
    tool: &'a str,
    success: bool,
    result_preview: &'a str,
    result_bytes: u64,
    tool_result_index: u64,
}

fn event_value(ev: &ToolUseEvent, session_id: Option<&str>) -> Result<Value> {
    let v = match ev.kind {
        EventKind::ToolCall => serde_json::to_value(WireCall {
            seq: ev.seq,
            ts: ev.ts.as_deref(),
            event: "tool_call",
            session_id,
            iteration: ev.iteration,
            tool: &ev.tool,
            arguments: &ev.arguments,
            arguments_bytes: ev.request_bytes,
            tool_call_index: ev.call_index.ok_or_else(|| {
                Error::Usage(format!("event {}: ToolCall without call_index", ev.event_id))
            })?,
        }),
        EventKind::ToolResult => serde_json::to_value(WireResult {
            seq: ev.seq,
            ts: ev.ts.as_deref(),
            event: "tool_result",
            session_id,
            iteration: ev.iteration,
            tool: &ev.tool,
            success: ev.success,
            result_preview: &ev.arguments,
            result_bytes: ev.response_bytes,
            tool_result_index: ev.result_index.ok_or_else(|| {
                Error::Usage(format!("event {}: ToolResult without result_index", ev.event_id))
            })?,
        }),
    };
    Ok(v.expect("wire serialization"))
}

pub fn synth_session_id(chain_id: &str, k: usize) -> String {
    format!("{chain_id}/s{k}")
}

pub fn synth_user_id(chain_id: &str) -> String {
    format!("{chain_id}/u0")
}

pub fn benign_chain_id(k: usize) -> String {
    format!("benign-{k:04}")
}

/// Parse one combined-format document into its chains. Event ids are
/// assigned in stream order within this document; callers merging several
/// documents re-number via [`Corpus::renumber`].
pub fn parse_combined(text: &str, origin: &str) -> Result<Vec<ChainRecord>> {
    let v: Value = serde_json::from_str(text)
        .map_err(|e| Error::parse(origin, format!("malformed document: {e}")))?;
    let is_malicious = need_bool(&v, "is_malicious", origin)?;
    let sessions = need(&v, "sessions", origin)?
        .as_array()
        .ok_or_else(|| Error::Schema(format!("{origin}: `sessions` must be a list")))?;

    let sources: Vec<&Value> = match v.get("malicious_source") {
        Some(s) => s
            .as_array()
            .ok_or_else(|| Error::Schema(format!("{origin}: `malicious_source` must be a list")))?
            .iter()
            .collect(),
        None => Vec::new(),
    };
    if is_malicious && sources.len() != sessions.len() {
        return Err(Error::Schema(format!(
            "{origin}: malicious_source length {} != chains length {}",
            sources.len(),
            sessions.len()
        )));
    }
    if !is_malicious && !sources.is_empty() {
        return Err(Error::Schema(format!("{origin}: benign file carries malicious_source")));
    }

    let mut chains = Vec::with_capacity(sessions.len());
    let mut next_event = 0usize;
    for (ci, chain_v) in sessions.iter().enumerate() {
        let at = format!("{origin}: chain {ci}");
        let fragments = chain_v
            .as_array()
            .ok_or_else(|| Error::Schema(format!("{at}: nesting depth != 3 (chain level)")))?;

        let (chain_id, campaign, campaign_id, run_id, seed, attack_graph_file) = if is_malicious {
            let src = sources[ci];
            let run_id = need_str(src, "run_id", &at)?;
            (
                run_id.clone(),
                Some(need_str(src, "campaign", &at)?),
                opt_str(src, "campaign_id"),
                Some(run_id),
                opt_u64(src, "seed"),
                opt_str(src, "attack_graph_file"),
            )
        } else {
            (benign_chain_id(ci), None, None, None, None, None)
        };

        let user_id = synth_user_id(&chain_id);
        let mut out_sessions = Vec::with_capacity(fragments.len());
        for (fi, frag_v) in fragments.iter().enumerate() {
            let at = format!("{origin}: chain {ci} fragment {fi}");
            let uses = frag_v
                .as_array()
                .ok_or_else(|| Error::Schema(format!("{at}: nesting depth != 3 (fragment level)")))?;
            let session_id = synth_session_id(&chain_id, fi);
            let mut events = Vec::with_capacity(uses.len());
            for (ui, use_v) in uses.iter().enumerate() {
                if !use_v.is_object() {
                    return Err(Error::Schema(format!(
                        "{at} entry {ui}: nesting depth != 3 (tool-use level)"
                    )));
                }
                let at = format!("{at} entry {ui}");
                if let Some(wire) = wire_tool_event(use_v, &at)? {
                    events.push(wire.into_event(next_event, user_id.clone(), session_id.clone()));
                    next_event += 1;
                }
            }
            out_sessions.push(events);
        }

        chains.push(ChainRecord {
            chain_id,
            is_malicious,
            campaign,
            campaign_id,
            run_id,
            seed,
            style: None,
            attack_graph_file,
            sessions: out_sessions,
            cover_sessions: Vec::new(),
        });
    }
    Ok(chains)
}

/// Serialize chains of one class as a combined-format document.
/// All chains must share `is_malicious`; malicious chains must carry the
/// source fields the format records.
pub fn emit_combined(chains: &[ChainRecord], is_malicious: bool) -> Result<String> {
    let mut sessions = Vec::with_capacity(chains.len());
    let mut sources = Vec::with_capacity(chains.len());
    for chain in chains {
        if chain.is_malicious != is_malicious {
            return Err(Error::Usage(format!(
                "chain {}: class does not match document is_malicious={is_malicious}",
                chain.chain_id
            )));
        }
        if is_malicious {
            let missing = |f: &str| Error::Usage(format!("chain {}: missing {f}", chain.chain_id));
            sources.push(WireSource {
                run_id: chain.run_id.as_deref().ok_or_else(|| missing("run_id"))?,
                seed: chain.seed.ok_or_else(|| missing("seed"))?,
                campaign: chain.campaign.as_deref().ok_or_else(|| missing("campaign"))?,
                campaign_id: chain.campaign_id.as_deref().ok_or_else(|| missing("campaign_id"))?,
                attack_graph_file: chain
                    .attack_graph_file
                    .as_deref()
                    .ok_or_else(|| missing("attack_graph_file"))?,
            });
        }
        let mut frags = Vec::with_capacity(chain.sessions.len());
        for session in &chain.sessions {
            let mut uses = Vec::with_capacity(session.len());
            for ev in session {
                uses.push(event_value(ev, None)?);
            }
            frags.push(Value::Array(uses));
        }
        sessions.push(Value::Array(frags));
    }

    let mut doc = serde_json::Map::new();
    doc.insert("is_malicious".into(), Value::Bool(is_malicious));
    doc.insert("sessions".into(), Value::Array(sessions));
    if is_malicious {
        doc.insert("malicious_source".into(), serde_json::to_value(&sources).expect("sources"));
    }
    Ok(serde_json::to_string(&Value::Object(doc)).expect("combined serialization"))
}

/// Serialize one session as a JSONL log: `session_start`, the tool events,
/// `session_end`. Timestamps pass through from the events.
pub fn emit_session_log(
    session_id: &str,
    meta: &SessionMeta,
    events: &[ToolUseEvent],
) -> Result<String> {
    let mut lines = Vec::with_capacity(events.len() + 2);

    let mut start = serde_json::Map::new();
    start.insert("seq".into(), Value::from(0u64));
    if let Some(ts) = events.first().and_then(|e| e.ts.clone()) {
        start.insert("ts".into(), Value::from(ts));
    }
    start.insert("event".into(), Value::from("session_start"));
    start.insert("session_id".into(), Value::from(session_id));
    start.insert("schema_version".into(), Value::from(1u64));
    if let Some(run_id) = &meta.run_id {
        start.insert("run_id".into(), Value::from(run_id.as_str()));
    }
    if let Some(campaign) = &meta.campaign {
        start.insert("campaign".into(), Value::from(campaign.as_str()));
    }
    if let Some(style) = &meta.style {
        start.insert("style".into(), Value::from(style.as_str()));
    }
    if let Some(user_id) = &meta.user_id {
        start.insert("user_id".into(), Value::from(user_id.as_str()));
    }
    lines.push(serde_json::to_string(&Value::Object(start)).expect("session_start"));

    let mut last_seq = 0u64;
    for ev in events {
        lines.push(
            serde_json::to_string(&event_value(ev, Some(session_id))?).expect("event line"),
        );
        last_seq = last_seq.max(ev.seq);
    }

    let mut end = serde_json::Map::new();
    end.insert("seq".into(), Value::from(last_seq + 1));
    if let Some(ts) = events.last().and_then(|e| e.ts.clone()) {
        end.insert("ts".into(), Value::from(ts));
    }
    end.insert("event".into(), Value::from("session_end"));
    end.insert("session_id".into(), Value::from(session_id));
    end.insert("total_events".into(), Value::from(events.len() as u64 + 2));
    lines.push(serde_json::to_string(&Value::Object(end)).expect("session_end"));

    let mut out = lines.join("\n");
    out.push('\n');
    Ok(out)
}

// --- attack-graph files ---

#[derive(Debug)]
pub struct AttackGraphParse {
    pub chain: ChainRecord,
    pub warnings: Vec<String>,
}

/// Parse one attack-graph record: each fragment becomes one session whose
/// `tools_executed` rows turn into synthesized ToolCall events.
pub fn parse_attack_graph(text: &str, origin: &str) -> Result<AttackGraphParse> {
    let v: Value = serde_json::from_str(text)
        .map_err(|e| Error::parse(origin, format!("malformed document: {e}")))?;
    let run_id = need_str(&v, "run_id", origin)?;
    let campaign = need_str(&v, "campaign", origin)?;
    let style = opt_str(&v, "style");
    let variation = need(&v, "variation", origin)
        .map_err(|_| Error::Schema(format!("{origin}: missing variation block")))?;
    let fragments = need(variation, "fragments", origin)?
        .as_array()
        .ok_or_else(|| Error::Schema(format!("{origin}: variation.fragments must be a list")))?;

    let mut warnings = Vec::new();
    if fragments.is_empty() {
        warnings.push(format!("{origin}: run {run_id} has no fragments (empty chain)"));
    }

    let chain_id = run_id.clone();
    let user_id = opt_str(variation, "user_id").unwrap_or_else(|| synth_user_id(&chain_id));

    // Fragments are emitted in fragment_index order regardless of file order.
    let mut ordered: Vec<(u64, usize, &Value)> = fragments
        .iter()
        .enumerate()
        .map(|(i, f)| (opt_u64(f, "fragment_index").unwrap_or(i as u64), i, f))
        .collect();
    ordered.sort_by_key(|(idx, file_pos, _)| (*idx, *file_pos));

    let mut sessions = Vec::with_capacity(ordered.len());
    let mut cover_sessions = Vec::new();
    let mut next_event = 0usize;
    for (si, (_, file_pos, frag)) in ordered.into_iter().enumerate() {
        let at = format!("{origin}: fragment {file_pos}");
        let session_id =
            opt_str(frag, "session_path").unwrap_or_else(|| synth_session_id(&chain_id, si));
        if frag.get("is_cover").and_then(Value::as_bool).unwrap_or(false) {
            cover_sessions.push(si);
        }
        let tools = match frag.get("tools_executed") {
            Some(t) => t
                .as_array()
                .ok_or_else(|| Error::Schema(format!("{at}: tools_executed must be a list")))?
                .as_slice(),
            None => &[],
        };
        let mut events = Vec::with_capacity(tools.len());
        for (ti, row) in tools.iter().enumerate() {
            let row = row.as_array().ok_or_else(|| {
                Error::Schema(format!("{at}: tools_executed[{ti}] must be [tool, *args]"))
            })?;
            let tool = row
                .first()
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Schema(format!("{at}: tools_executed[{ti}] missing tool name")))?;
            let arguments = row[1..]
                .iter()
                .map(|a| match a {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(" ");
            events.push(ToolUseEvent {
                event_id: next_event,
                user_id: user_id.clone(),
                session_id: session_id.clone(),
                seq: ti as u64 + 1,
                iteration: ti as u64 + 1,
                kind: EventKind::ToolCall,
                tool: tool.to_owned(),
                request_bytes: arguments.len() as u64,
                response_bytes: 0,
                arguments,
                success: true,
                call_index: Some(ti as u64),
                result_index: None,
                ts: None,
            });
            next_event += 1;
        }
        sessions.push(events);
    }

    Ok(AttackGraphParse {
        chain: ChainRecord {
            chain_id,
            is_malicious: true,
            campaign: Some(campaign),
            campaign_id: opt_str(variation, "campaign_id"),
            run_id: Some(run_id),
            seed: opt_u64(variation, "seed"),
            style,
            attack_graph_file: Some(origin.to_owned()),
            sessions,
            cover_sessions,
        },
        warnings,
    })
}

/// Load malicious + benign combined files into one renumbered corpus,
/// malicious chains first.
pub fn load_corpus(malicious: &str, benign: &str) -> Result<Corpus> {
    let mut chains = parse_combined(malicious, "malicious")?;
    chains.extend(parse_combined(benign, "benign")?);
    let mut corpus = Corpus::new(chains);
    corpus.renumber();
    Ok(corpus)
}
