//! Deterministic synthetic corpus generator and the separability audit that
//! gates it.
//!
//! The generator emits fragmented malicious chains and benign cover traffic
//! whose one-dimensional event marginals match by construction: both classes
//! share the same step vocabulary, the same per-role byte profiles, the same
//! session shapes, and the same noise law. What separates the classes is
//! relational: cross-session artifact hand-offs, near-duplicate ritual
//! arguments between consecutive fragments, and chain-coherent byte levels
//! that only show up when an event is compared with its graph neighbours.
//! The audit at the bottom of this module verifies the marginal-matching
//! claim numerically and is wired into the CLI as a hard gate.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{ChainRecord, Corpus, EventKind, ToolUseEvent};
use crate::features::{self, ToolVocabulary, OWN_DIMS};

/// Campaign labels cycled over malicious chains.
pub const CAMPAIGNS: [&str; 24] = [
    "ad_discovery",
    "ai_phishing",
    "clickfix_via_ai_chat",
    "coinbait",
    "coral_sleet",
    "deepfake_id_fraud",
    "dprk_fraud",
    "gtg1002",
    "honestcue",
    "jasper_sleet",
    "london_drugs_lockbit",
    "malterminal",
    "nocode_ransomware",
    "ns_power_ransomware",
    "operation_false_witness",
    "promptflux",
    "promptsteal",
    "quietvault",
    "ru_malware_clusters",
    "scope_creep",
    "tycoon2fa",
    "unc2970_operation_dream_job",
    "vibe_extortion",
    "wormgpt_kawaiigpt",
];

const RECON: [&str; 4] = ["list_directory", "search_files", "system_info", "list_processes"];
const READ_TOOLS: [&str; 2] = ["read_file", "parse_document"];
const NET_IN: [&str; 4] = ["http_get", "fetch_url", "download_file", "resolve_host"];
const TRANSFORM: [&str; 5] =
    ["run_command", "execute_script", "transform_data", "compress_files", "extract_archive"];
const WRITE_TOOLS: [&str; 2] = ["write_file", "save_report"];
const NET_OUT: [&str; 3] = ["http_post", "send_email", "sync_remote"];
const AUX: [&str; 3] = ["schedule_task", "delete_file", "query_database"];
const STATUS_TOOL: &str = "check_status";

const WORK_POOLS: [&[&str]; 4] = [&RECON, &NET_IN, &TRANSFORM, &AUX];

/// Fragment-count law for malicious chains: 4..=16 sessions, mode 8.
const MAL_FRAGMENTS: [(usize, u32); 13] = [
    (4, 1),
    (5, 2),
    (6, 4),
    (7, 7),
    (8, 10),
    (9, 7),
    (10, 5),
    (11, 4),
    (12, 3),
    (13, 2),
    (14, 2),
    (15, 1),
    (16, 1),
];

/// Session-count law for benign chains: 7..=14 sessions, mode 8.
const BENIGN_SESSIONS: [(usize, u32); 8] =
    [(7, 3), (8, 8), (9, 3), (10, 2), (11, 2), (12, 2), (13, 1), (14, 1)];

/// Highest one-dimensional balanced accuracy the audit tolerates before the
/// corpus is declared trivially separable.
pub const AUDIT_GATE: f64 = 0.65;

/// Knobs for the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub malicious_chains: usize,
    pub benign_chains: usize,
    /// Probability that a session gains one failed call and its error result.
    pub noise_rate: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { seed: 42, malicious_chains: 100, benign_chains: 200, noise_rate: 0.30 }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::Usage(format!(
                "noise_rate must lie in [0, 1], got {}",
                self.noise_rate
            )));
        }
        Ok(())
    }
}

fn hex_token(rng: &mut ChaCha8Rng, len: usize) -> String {
    const H: &[u8; 16] = b"0123456789abcdef";
    (0..len).map(|_| H[rng.random_range(0..16usize)] as char).collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

fn draw_count(rng: &mut ChaCha8Rng, table: &[(usize, u32)]) -> usize {
    let total: u32 = table.iter().map(|&(_, w)| w).sum();
    let mut t = rng.random_range(0..total);
    for &(v, w) in table {
        if t < w {
            return v;
        }
        t -= w;
    }
    unreachable!("weight table exhausted")
}

fn alnum_token(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    const ALNUM: &[u8; 36] = b"abcdefghijklmnopqrstuvwxyz0123456789";
    let len = rng.random_range(lo..=hi);
    (0..len).map(|_| ALNUM[rng.random_range(0..ALNUM.len())] as char).collect()
}

/// One anchor token that dominates the trigram mass of every string a session
/// (or, for ritual steps, a chain) emits. The anchor gives each session its
/// own random signature direction, so strings from different sessions land
/// far apart in SimHash space even when they share a short template, while
/// strings from the same session land close together and harmlessly occupy
/// each other's similarity-candidate slots. Without this, the population bias
/// of hashed trigrams correlates all same-shaped strings and unrelated
/// sessions collide under the linking threshold at corpus scale. A single
/// long token over a wide alphabet decorrelates best: the repeated string
/// concentrates the signature on a few voice-specific trigram directions
/// instead of averaging toward the population mean.
#[derive(Debug, Clone)]
struct Voice {
    anchor: String,
}

impl Voice {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        const WIDE: &[u8; 50] = b"abcdefghijklmnopqrstuvwxyz0123456789-_./:+=@#%&*()";
        let len = rng.random_range(12..=16usize);
        Self {
            anchor: (0..len).map(|_| WIDE[rng.random_range(0..WIDE.len())] as char).collect(),
        }
    }

    /// Repeat the anchor until `s` reaches `target` bytes. Per-string entropy
    /// comes from the template's own id tokens, not from the fill.
    fn fill(&self, s: &mut String, target: usize) {
        while s.len() < target {
            s.push(' ');
            s.push_str(&self.anchor);
        }
    }

    /// Result preview: a short tool-specific phrase, one id token, and the
    /// anchor fill to a length drawn from a range. The varying length and the
    /// anchor dominance keep previews of unrelated sessions far apart.
    fn preview(&self, rng: &mut ChaCha8Rng, core: String) -> String {
        let target = rng.random_range(180..=260);
        pad_to(format!("{core} {}", alnum_token(rng, 6, 6)), target, self)
    }
}

/// Pad `s` with the voice's anchors to the target length. Targets below the
/// current length leave the string untouched.
fn pad_to(mut s: String, target: usize, voice: &Voice) -> String {
    voice.fill(&mut s, target);
    s
}

/// One byte-count law. Benign chains draw i.i.d. from `[lo, hi]`; malicious
/// chains draw around a per-chain centre with a small jitter, which keeps the
/// marginal inside the same interval while making values cohere within a
/// chain. Coherence is a purely relational signal: no single event reveals
/// it, but graph neighbours do.
#[derive(Debug, Clone, Copy)]
struct ByteLaw {
    lo: u64,
    hi: u64,
    jitter: u64,
    center: Option<u64>,
}

impl ByteLaw {
    fn iid(lo: u64, hi: u64, jitter: u64) -> Self {
        Self { lo, hi, jitter, center: None }
    }

    fn coherent(rng: &mut ChaCha8Rng, lo: u64, hi: u64, jitter: u64) -> Self {
        // Chain profiles sit in the outer tenths of the legal range, so
        // per-chain coherence implies a guaranteed offset from the population
        // mean rather than a chance one. The profile marginal stays two-sided
        // and inside [lo, hi], which keeps any single threshold on the raw
        // byte dimensions near chance.
        let band = (hi - lo) / 10;
        let (blo, bhi) = if rng.random::<bool>() {
            (hi - jitter - band, hi - jitter)
        } else {
            (lo + jitter, lo + jitter + band)
        };
        let center = rng.random_range(blo..=bhi);
        Self { lo, hi, jitter, center: Some(center) }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> u64 {
        match self.center {
            Some(c) => rng.random_range(c - self.jitter..=c + self.jitter),
            None => rng.random_range(self.lo..=self.hi),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ByteLaws {
    work_req: ByteLaw,
    write_req: ByteLaw,
    read_resp: ByteLaw,
    mid_resp: ByteLaw,
    small_resp: ByteLaw,
}

impl ByteLaws {
    fn benign() -> Self {
        Self {
            work_req: ByteLaw::iid(150, 900, 60),
            write_req: ByteLaw::iid(300, 2000, 150),
            read_resp: ByteLaw::iid(200, 1500, 150),
            mid_resp: ByteLaw::iid(100, 800, 60),
            small_resp: ByteLaw::iid(20, 220, 25),
        }
    }

    fn malicious(rng: &mut ChaCha8Rng) -> Self {
        Self {
            work_req: ByteLaw::coherent(rng, 150, 900, 60),
            write_req: ByteLaw::coherent(rng, 300, 2000, 150),
            read_resp: ByteLaw::coherent(rng, 200, 1500, 150),
            mid_resp: ByteLaw::coherent(rng, 100, 800, 60),
            small_resp: ByteLaw::coherent(rng, 20, 220, 25),
        }
    }
}

/// One call/result pair before materialization into events.
struct Step {
    tool: String,
    args: String,
    preview: String,
    resp: u64,
    fail: bool,
}

fn work_step(
    rng: &mut ChaCha8Rng,
    laws: &ByteLaws,
    voice: &Voice,
    tilt: usize,
    force_pool: Option<usize>,
    workspace: &str,
) -> Step {
    let pool = force_pool.unwrap_or_else(|| {
        let mut w = [8u32, 8, 10, 6];
        w[tilt] *= 2;
        let total: u32 = w.iter().sum();
        let mut t = rng.random_range(0..total);
        let mut chosen = 0;
        for (i, &wi) in w.iter().enumerate() {
            if t < wi {
                chosen = i;
                break;
            }
            t -= wi;
        }
        chosen
    });
    let tool = pick(rng, WORK_POOLS[pool]).to_string();
    let n = rng.random_range(3..=400u64);
    let (args, core) = match pool {
        0 => (
            format!(
                "scan /opt/app-{}/lib depth {} token {}",
                hex_token(rng, 6),
                rng.random_range(1..=4u32),
                hex_token(rng, 8)
            ),
            format!("{tool} listed {n} entries"),
        ),
        1 => (
            format!(
                "fetch https://m-{}.example/{} token {}",
                hex_token(rng, 6),
                hex_token(rng, 6),
                hex_token(rng, 8)
            ),
            format!("{tool} fetched {n} objects"),
        ),
        2 => (
            format!(
                "run pipeline over /srv/job-{} stage {} token {}",
                hex_token(rng, 6),
                rng.random_range(1..=4u32),
                hex_token(rng, 8)
            ),
            format!("{tool} finished {n} items"),
        ),
        _ => (
            format!(
                "queue task for /srv/job-{} slot {} token {}",
                hex_token(rng, 6),
                rng.random_range(1..=9u32),
                hex_token(rng, 8)
            ),
            format!("{tool} queued {n} units"),
        ),
    };
    // Every work step names the workspace it operates in. Malicious
    // fragments pass the chain workspace directory, benign sessions their
    // local working file, so the shared-resource neighbourhood of a work
    // event reflects who else touched that workspace.
    let args = format!("{args} workspace {workspace}");
    let target = laws.work_req.draw(rng) as usize;
    let args = pad_to(args, target, voice);
    let preview = voice.preview(rng, core);
    let resp_law = if pool == 1 { laws.read_resp } else { laws.mid_resp };
    Step { tool, args, preview, resp: resp_law.draw(rng), fail: false }
}

fn read_step(rng: &mut ChaCha8Rng, laws: &ByteLaws, voice: &Voice, path: &str) -> Step {
    let args = format!(
        "read {path} limit {} token {}",
        rng.random_range(50..=950u32),
        hex_token(rng, 8)
    );
    let target = laws.work_req.draw(rng) as usize;
    let tool = pick(rng, &READ_TOOLS).to_string();
    let core = format!("{tool} read {} bytes", rng.random_range(40..=4000u32));
    let preview = voice.preview(rng, core);
    Step {
        tool,
        args: pad_to(args, target, voice),
        preview,
        resp: laws.read_resp.draw(rng),
        fail: false,
    }
}

fn write_step(rng: &mut ChaCha8Rng, laws: &ByteLaws, voice: &Voice, path: &str) -> Step {
    let args = format!("write {path} mode append chunk {}", hex_token(rng, 8));
    let target = laws.write_req.draw(rng) as usize;
    let tool = pick(rng, &WRITE_TOOLS).to_string();
    let core = format!("{tool} wrote {} bytes", rng.random_range(40..=4000u32));
    let preview = voice.preview(rng, core);
    Step {
        tool,
        args: pad_to(args, target, voice),
        preview,
        resp: laws.small_resp.draw(rng),
        fail: false,
    }
}

fn netout_step(rng: &mut ChaCha8Rng, laws: &ByteLaws, voice: &Voice) -> Step {
    let args = format!(
        "post https://relay-{}.example/in token {}",
        hex_token(rng, 6),
        hex_token(rng, 8)
    );
    let target = laws.work_req.draw(rng) as usize;
    let tool = pick(rng, &NET_OUT).to_string();
    let preview = voice.preview(rng, format!("{tool} delivered receipt"));
    Step {
        tool,
        args: pad_to(args, target, voice),
        preview,
        resp: laws.small_resp.draw(rng),
        fail: false,
    }
}

fn noise_step(rng: &mut ChaCha8Rng, laws: &ByteLaws, voice: &Voice, tool: &str) -> Step {
    let args = format!(
        "retry probe target /srv/tmp-{} token {}",
        hex_token(rng, 6),
        hex_token(rng, 8)
    );
    let req_law =
        if WRITE_TOOLS.contains(&tool) { laws.write_req } else { laws.work_req };
    let target = req_law.draw(rng) as usize;
    let core = format!("{tool} error timeout after {}s", rng.random_range(2..=90u32));
    let preview = voice.preview(rng, core);
    Step {
        tool: tool.to_string(),
        args: pad_to(args, target, voice),
        preview,
        resp: laws.small_resp.draw(rng),
        fail: true,
    }
}

fn artifact_path(workspace: &str, stage: usize) -> String {
    format!("/var/tmp/wk-{workspace}/stage{stage:02}.bin")
}

/// Materialize steps into call/result event pairs with contiguous seq.
fn emit_session(session_id: &str, user_id: &str, steps: Vec<Step>) -> Vec<ToolUseEvent> {
    let mut events = Vec::with_capacity(steps.len() * 2);
    for (pair, st) in steps.into_iter().enumerate() {
        let base = ToolUseEvent {
            event_id: 0,
            user_id: user_id.to_string(),
            session_id: session_id.to_string(),
            seq: 0,
            iteration: pair as u64 + 1,
            kind: EventKind::ToolCall,
            tool: st.tool.clone(),
            arguments: String::new(),
            success: true,
            request_bytes: 0,
            response_bytes: 0,
            call_index: None,
            result_index: None,
            ts: None,
        };
        let mut call = base.clone();
        call.seq = events.len() as u64 + 1;
        call.request_bytes = st.args.len() as u64;
        call.arguments = st.args;
        call.call_index = Some(pair as u64);
        events.push(call);
        let mut result = base;
        result.seq = events.len() as u64 + 1;
        result.kind = EventKind::ToolResult;
        result.arguments = st.preview;
        result.success = !st.fail;
        result.response_bytes = st.resp;
        result.result_index = Some(pair as u64);
        events.push(result);
    }
    events
}

/// Shared post-pass: a few oversized reads and large writes per chain, drawn
/// identically for both classes. Re-padded writes keep their session's voice.
fn apply_outliers(rng: &mut ChaCha8Rng, sessions: &mut [Vec<ToolUseEvent>], voices: &[Voice]) {
    let mut reads = Vec::new();
    let mut writes = Vec::new();
    for (si, s) in sessions.iter().enumerate() {
        for (ei, e) in s.iter().enumerate() {
            let t = e.tool.as_str();
            if e.is_result()
                && e.success
                && (READ_TOOLS.contains(&t) || NET_IN.contains(&t))
            {
                reads.push((si, ei));
            }
            if e.is_call() && WRITE_TOOLS.contains(&t) {
                writes.push((si, ei));
            }
        }
    }
    let k = rng.random_range(1..=4usize).min(reads.len());
    reads.shuffle(rng);
    for &(si, ei) in reads.iter().take(k) {
        sessions[si][ei].response_bytes = rng.random_range(5000..=15000u64);
    }
    let k = rng.random_range(2..=4usize).min(writes.len());
    writes.shuffle(rng);
    for &(si, ei) in writes.iter().take(k) {
        let target = rng.random_range(3000..=10000u64) as usize;
        let e = &mut sessions[si][ei];
        let padded = pad_to(std::mem::take(&mut e.arguments), target, &voices[si]);
        e.request_bytes = padded.len() as u64;
        e.arguments = padded;
    }
}

/// Shuffle the four step slots; malicious sessions keep the consume step in
/// the first half and the produce step in the second half, benign sessions
/// are unconstrained. Partial randomization keeps step-order bigrams from
/// becoming a deterministic class marker.
fn step_order(rng: &mut ChaCha8Rng, constrained: bool) -> [usize; 4] {
    let mut order = [0usize, 1, 2, 3];
    loop {
        order.shuffle(rng);
        if !constrained {
            return order;
        }
        let cpos = order.iter().position(|&x| x == 0).expect("slot 0");
        let ppos = order.iter().position(|&x| x == 3).expect("slot 3");
        if cpos <= 1 && ppos >= 2 {
            return order;
        }
    }
}

fn assemble(
    rng: &mut ChaCha8Rng,
    laws: &ByteLaws,
    voice: &Voice,
    slots: [Step; 4],
    order: [usize; 4],
    noise_rate: f64,
) -> Vec<Step> {
    let mut slots = slots.map(Some);
    let mut steps: Vec<Step> =
        order.iter().map(|&t| slots[t].take().expect("slot taken once")).collect();
    if rng.random::<f64>() < noise_rate {
        let at = rng.random_range(0..steps.len());
        let noise = noise_step(rng, laws, voice, &steps[at].tool.clone());
        steps.insert(at, noise);
    }
    steps
}

fn build_malicious(
    idx: usize,
    campaign: &str,
    chain_seed: u64,
    cfg: &GeneratorConfig,
) -> ChainRecord {
    let rng = &mut ChaCha8Rng::seed_from_u64(chain_seed);
    let n_frag = draw_count(rng, &MAL_FRAGMENTS);
    let workspace = hex_token(rng, 8);
    let wk_dir = format!("/var/tmp/wk-{workspace}");
    let ritual_target = rng.random_range(240..=380usize);
    // Fixed prefix shared by every ritual of the chain; consecutive rituals
    // then differ by exactly one appended marker, which keeps their SimHash
    // distance inside the linking threshold. The pad is the chain voice, so
    // rituals of unrelated chains sit far apart.
    let chain_voice = Voice::sample(rng);
    // The prefix names the chain workspace directory, so every ritual
    // references the same path resource: consecutive rituals pick up a
    // shared-resource link on top of the similarity link. The directory
    // string never appears in stage-file arguments, so artifact-handoff
    // cardinality is unaffected.
    let ritual_prefix = pad_to(
        format!("check status workspace {wk_dir} marker"),
        ritual_target,
        &chain_voice,
    );
    let marks: Vec<String> = (0..n_frag).map(|_| hex_token(rng, 6)).collect();
    let laws = ByteLaws::malicious(rng);
    let tilt = rng.random_range(0..4usize);
    let chain_id = format!("run_{campaign}_{idx:04}");
    let user_id = format!("{chain_id}/u0");

    let mut sessions = Vec::with_capacity(n_frag);
    let mut voices = Vec::with_capacity(n_frag);
    for k in 0..n_frag {
        let session_id = format!("{chain_id}/s{k}");
        let voice = Voice::sample(rng);
        let consume = if k == 0 {
            work_step(rng, &laws, &voice, tilt, Some(0), &wk_dir)
        } else {
            read_step(rng, &laws, &voice, &artifact_path(&workspace, k - 1))
        };
        let work = work_step(rng, &laws, &voice, tilt, None, &wk_dir);
        let mut ritual_args = ritual_prefix.clone();
        for m in &marks[..=k] {
            ritual_args.push(' ');
            ritual_args.push_str(m);
        }
        let ritual = Step {
            tool: STATUS_TOOL.to_string(),
            args: ritual_args,
            preview: voice.preview(rng, format!("{STATUS_TOOL} ok pass {k}")),
            resp: laws.small_resp.draw(rng),
            fail: false,
        };
        let produce = if k + 1 == n_frag {
            netout_step(rng, &laws, &voice)
        } else {
            write_step(rng, &laws, &voice, &artifact_path(&workspace, k))
        };
        let order = step_order(rng, true);
        let steps =
            assemble(rng, &laws, &voice, [consume, work, ritual, produce], order, cfg.noise_rate);
        sessions.push(emit_session(&session_id, &user_id, steps));
        voices.push(voice);
    }
    apply_outliers(rng, &mut sessions, &voices);

    ChainRecord {
        chain_id: chain_id.clone(),
        is_malicious: true,
        campaign: Some(campaign.to_string()),
        campaign_id: Some(format!("{campaign}_{}", chain_seed % 100_000)),
        run_id: Some(chain_id.clone()),
        seed: Some(chain_seed),
        style: Some("fragmented".to_string()),
        attack_graph_file: Some(format!("results/runs/attack_graph_{chain_id}.json")),
        sessions,
        cover_sessions: Vec::new(),
    }
}

fn build_benign(idx: usize, chain_seed: u64, cfg: &GeneratorConfig) -> ChainRecord {
    let rng = &mut ChaCha8Rng::seed_from_u64(chain_seed);
    let n_sess = draw_count(rng, &BENIGN_SESSIONS);
    let laws = ByteLaws::benign();
    let tilt = rng.random_range(0..4usize);
    let chain_id = format!("benign-{idx:04}");
    let user_id = format!("{chain_id}/u0");

    let mut sessions = Vec::with_capacity(n_sess);
    let mut voices = Vec::with_capacity(n_sess);
    for s in 0..n_sess {
        let session_id = format!("{chain_id}/s{s}");
        let voice = Voice::sample(rng);
        let status_target = rng.random_range(240..=380usize);
        let reuse_path = format!(
            "/home/u{:03}/proj-{}/draft-{}.dat",
            idx % 1000,
            hex_token(rng, 6),
            hex_token(rng, 4)
        );
        // Matched substitution rates: malicious chains open without a consume
        // and close without a produce, roughly one session in nine each way.
        let u = rng.random::<f64>();
        let read_s = if u < 1.0 / 9.0 {
            work_step(rng, &laws, &voice, tilt, Some(0), &reuse_path)
        } else {
            read_step(rng, &laws, &voice, &reuse_path)
        };
        let write_s = if (1.0 / 9.0..2.0 / 9.0).contains(&u) {
            netout_step(rng, &laws, &voice)
        } else {
            write_step(rng, &laws, &voice, &reuse_path)
        };
        let work = work_step(rng, &laws, &voice, tilt, None, &reuse_path);
        // The health report names the session's working file, so benign
        // statuses carry a shared-resource link too; theirs stays inside the
        // session because the path is not reused across sessions.
        let status_args = pad_to(
            format!(
                "report health for workspace {reuse_path} cycle {s} token {}",
                hex_token(rng, 8)
            ),
            status_target,
            &voice,
        );
        let status = Step {
            tool: STATUS_TOOL.to_string(),
            args: status_args,
            preview: voice.preview(rng, format!("{STATUS_TOOL} health nominal cycle {s}")),
            resp: laws.small_resp.draw(rng),
            fail: false,
        };
        let order = step_order(rng, false);
        let steps =
            assemble(rng, &laws, &voice, [write_s, work, status, read_s], order, cfg.noise_rate);
        sessions.push(emit_session(&session_id, &user_id, steps));
        voices.push(voice);
    }
    apply_outliers(rng, &mut sessions, &voices);

    ChainRecord {
        chain_id,
        is_malicious: false,
        campaign: None,
        campaign_id: None,
        run_id: None,
        seed: None,
        style: None,
        attack_graph_file: None,
        sessions,
        cover_sessions: Vec::new(),
    }
}

/// Generate the full corpus: malicious chains first (campaigns cycled), then
/// benign chains, each from an independent sub-seed drawn off the master
/// stream so chain counts can change without reshuffling every chain.
pub fn generate(cfg: &GeneratorConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut chains = Vec::with_capacity(cfg.malicious_chains + cfg.benign_chains);
    for i in 0..cfg.malicious_chains {
        let sub = master.random::<u64>();
        chains.push(build_malicious(i, CAMPAIGNS[i % CAMPAIGNS.len()], sub, cfg));
    }
    for j in 0..cfg.benign_chains {
        let sub = master.random::<u64>();
        chains.push(build_benign(j, sub, cfg));
    }
    let mut corpus = Corpus { chains };
    corpus.renumber();
    Ok(corpus)
}

/// Separability of one own-event feature dimension.
#[derive(Debug, Clone, Serialize)]
pub struct AuditDim {
    pub dim: usize,
    pub name: String,
    /// Best class-balanced accuracy over every threshold and both polarities.
    pub balanced_accuracy: f64,
    /// Kolmogorov-Smirnov statistic, `2 * balanced_accuracy - 1`.
    pub ks: f64,
}

/// Corpus-level audit: no single own-event dimension may separate the
/// classes better than the gate.
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub positives: usize,
    pub negatives: usize,
    /// Fraction of sessions containing at least one failed event.
    pub noise_fraction: f64,
    pub max_balanced_accuracy: f64,
    pub worst_dim: String,
    pub dims: Vec<AuditDim>,
}

impl AuditReport {
    pub fn passes(&self) -> bool {
        self.max_balanced_accuracy <= AUDIT_GATE
    }
}

fn best_threshold(vals: &mut [(f64, bool)], pos: f64, neg: f64) -> f64 {
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut pos_below = 0.0;
    let mut neg_below = 0.0;
    let mut best = 0.5f64;
    let mut i = 0;
    while i < vals.len() {
        let v = vals[i].0;
        while i < vals.len() && vals[i].0 == v {
            if vals[i].1 {
                pos_below += 1.0;
            } else {
                neg_below += 1.0;
            }
            i += 1;
        }
        let bal = ((pos - pos_below) / pos + neg_below / neg) / 2.0;
        best = best.max(bal.max(1.0 - bal));
    }
    best
}

/// Sweep every own-event dimension with a one-dimensional threshold rule and
/// report the best class-balanced accuracy found. The vocabulary is built
/// over the whole corpus because the audit is a data-quality check, not a
/// detector: leaking the full tool list here only makes the gate stricter.
pub fn separability_audit(corpus: &Corpus, label_covers: bool) -> Result<AuditReport> {
    let events: Vec<&ToolUseEvent> = corpus.events().collect();
    let labels = corpus.labels(label_covers);
    if events.len() != labels.len() {
        return Err(Error::Schema("label/event count mismatch in audit".into()));
    }
    let positives = labels.iter().filter(|l| l.y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Usage(
            "separability audit needs both classes present in the corpus".into(),
        ));
    }
    let vocab = ToolVocabulary::build(events.iter().map(|e| e.tool.as_str()));
    let x = features::own_matrix(&events, &vocab);

    let mut dims = Vec::with_capacity(OWN_DIMS);
    for d in 0..OWN_DIMS {
        let mut vals: Vec<(f64, bool)> =
            (0..events.len()).map(|i| (x[(i, d)], labels[i].y == 1)).collect();
        let bal = best_threshold(&mut vals, positives as f64, negatives as f64);
        dims.push(AuditDim {
            dim: d,
            name: features::own_dim_name(d, &vocab),
            balanced_accuracy: bal,
            ks: 2.0 * bal - 1.0,
        });
    }
    let worst = dims
        .iter()
        .max_by(|a, b| a.balanced_accuracy.total_cmp(&b.balanced_accuracy))
        .expect("at least one dim");
    let (max_bal, worst_dim) = (worst.balanced_accuracy, worst.name.clone());

    let mut total_sessions = 0usize;
    let mut noisy_sessions = 0usize;
    for chain in &corpus.chains {
        for session in &chain.sessions {
            total_sessions += 1;
            if session.iter().any(|e| !e.success) {
                noisy_sessions += 1;
            }
        }
    }
    let noise_fraction =
        if total_sessions == 0 { 0.0 } else { noisy_sessions as f64 / total_sessions as f64 };

    Ok(AuditReport {
        positives,
        negatives,
        noise_fraction,
        max_balanced_accuracy: max_bal,
        worst_dim,
        dims,
    })
}
