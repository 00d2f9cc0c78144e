#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use chrono::{DateTime, Duration, TimeZone, Utc};
use http_body_util::BodyExt;
use mirror_core::network::{AccountId, Hops, MutualGraph};
use mirror_core::ExperimentStore;
use mirror_service::api::{router, ApiSettings, AppState};
use mirror_service::config::Config;
use mirror_service::ingest::{ingest, DatasetBundle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tower::ServiceExt;

pub const SECRET: &str = "test-secret";
pub const ADMIN: &str = "admin-token";

pub fn node(i: usize) -> String {
    format!("u{i:06}")
}

pub fn id(s: &str) -> AccountId {
    AccountId::new(s).unwrap()
}

/// Ring lattice where each node links to its `reach` nearest neighbors on
/// both sides (a 2*reach-core), plus random chords and a pendant tail that
/// the core must strip.
pub fn lattice_edges(n: usize, reach: usize, chords: usize, tail: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(n * reach + chords + tail);
    for i in 0..n {
        for d in 1..=reach {
            edges.push((i, (i + d) % n));
        }
    }
    for _ in 0..chords {
        edges.push((rng.gen_range(0..n), rng.gen_range(0..n)));
    }
    for t in 0..tail {
        let anchor = if t == 0 { 0 } else { n + t - 1 };
        edges.push((anchor, n + t));
    }
    edges
}

/// Writes edges, ideology scores, alignment table and tweets into `dir`
/// and returns a config pointing at them.
pub fn write_dataset(dir: &Path, edges: &[(usize, usize)], sample_size: usize, layout_iterations: usize) -> Config {
    let nodes: BTreeSet<usize> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    let mut edge_text = String::from("# synthetic mutual-follow pairs\n");
    for &(a, b) in edges {
        writeln!(edge_text, "{},{}", node(a), node(b)).unwrap();
    }
    std::fs::write(dir.join("edges.csv"), edge_text).unwrap();

    // every seventh node has no classifier score
    let mut scores = String::from("id,p_left\n");
    for &i in &nodes {
        let p = match i % 7 {
            0 => continue,
            1..=3 => 0.9,
            4 | 5 => 0.1,
            _ => 0.5,
        };
        writeln!(scores, "{},{p}", node(i)).unwrap();
    }
    std::fs::write(dir.join("ideology.csv"), scores).unwrap();
    std::fs::write(dir.join("alignment.csv"), "domain,alignment\nleft.example,-0.8\nright.example,0.7\n").unwrap();

    let mut tweets = String::from("id,text\n");
    for &i in nodes.iter().take(20) {
        writeln!(tweets, "{},\"hello from {}\"", node(i), node(i)).unwrap();
    }
    std::fs::write(dir.join("tweets.csv"), tweets).unwrap();

    let mut config = Config::default();
    config.data.edges = dir.join("edges.csv");
    config.data.ideology = dir.join("ideology.csv");
    config.data.alignment = dir.join("alignment.csv");
    config.data.tweets = Some(dir.join("tweets.csv"));
    config.cache_dir = dir.join("cache");
    config.store_dir = dir.join("store");
    config.sample_size = sample_size;
    config.layout.iterations = layout_iterations;
    config.token_secret = SECRET.into();
    config.admin_token = ADMIN.into();
    config
}

pub fn small_bundle(dir: &Path) -> (Config, Arc<DatasetBundle>) {
    let config = write_dataset(dir, &lattice_edges(120, 3, 60, 5, 11), 60, 50);
    let (bundle, _) = ingest(&config).unwrap();
    (config, Arc::new(bundle))
}

pub fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2018, 2, 1, 12, 0, 0).unwrap()
}

/// App whose clock advances one second per reading, so journals written by
/// identical scripts are byte-identical.
pub fn app(bundle: Arc<DatasetBundle>, store: ExperimentStore, audit_log: Option<&Path>) -> (Arc<AppState>, Router) {
    let settings = ApiSettings {
        token_secret: SECRET.into(),
        admin_token: ADMIN.into(),
        max_recommendations: 5,
        audit_log: audit_log.map(Path::to_path_buf),
    };
    let ticks = std::sync::atomic::AtomicI64::new(0);
    let clock = Arc::new(move || epoch() + Duration::seconds(ticks.fetch_add(1, std::sync::atomic::Ordering::SeqCst)));
    let state = Arc::new(AppState::new(bundle, store, settings).unwrap().with_clock(clock));
    (Arc::clone(&state), router(state))
}

pub struct Reply {
    pub status: StatusCode,
    pub body: Value,
    pub raw: String,
}

pub async fn call(app: &Router, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> Reply {
    let mut request = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        request = request.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let request = match body {
        Some(json) => request
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(json.to_string()))
            .unwrap(),
        None => request.body(Body::empty()).unwrap(),
    };
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let raw = String::from_utf8(bytes.to_vec()).unwrap();
    let body = serde_json::from_str(&raw).unwrap_or(Value::Null);
    Reply { status, body, raw }
}

/// Field names and string values that would reveal ideology to a
/// participant who must not see it.
const FORBIDDEN_KEYS: [&str; 9] =
    ["color", "colors", "ideology", "political_ideology", "label", "labels", "p_left", "lean", "party"];
const FORBIDDEN_VALUES: [&str; 8] = ["left", "right", "unsure", "blue", "red", "gray", "liberal", "conservative"];

/// Every offending path in `value`.
pub fn ideology_leaks(value: &Value) -> Vec<String> {
    fn walk(v: &Value, path: String, out: &mut Vec<String>) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    if FORBIDDEN_KEYS.contains(&k.to_ascii_lowercase().as_str()) {
                        out.push(format!("{path}.{k}"));
                    }
                    walk(child, format!("{path}.{k}"), out);
                }
            }
            Value::Array(items) => {
                for (i, child) in items.iter().enumerate() {
                    walk(child, format!("{path}[{i}]"), out);
                }
            }
            Value::String(s) => {
                let lower = s.to_ascii_lowercase();
                if FORBIDDEN_VALUES.contains(&lower.as_str()) || lower.contains("ideolog") {
                    out.push(format!("{path} = {s:?}"));
                }
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(value, "$".into(), &mut out);
    out
}

/// Breadth-first hop count written independently of the library.
pub fn bfs_hops(graph: &MutualGraph, from: &AccountId, to: &AccountId) -> Hops {
    let ids = graph.ids();
    let start = ids.iter().position(|x| x == from).unwrap();
    let goal = ids.iter().position(|x| x == to).unwrap();
    let mut dist = vec![u32::MAX; ids.len()];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for (v, other) in ids.iter().enumerate() {
            if dist[v] == u32::MAX && graph.has_edge(&ids[u], other) {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    match dist[goal] {
        u32::MAX => Hops::Unreachable,
        d => Hops::Finite(d),
    }
}

pub struct SessionRun {
    pub user: String,
    pub session_id: u64,
    pub token: String,
    pub arm: String,
    pub replies: Vec<Reply>,
}

/// Drives one participant through every participant endpoint, including
/// the ones their arm is refused, and keeps every reply.
pub async fn full_session(app: &Router, user: &str, guess: &str) -> SessionRun {
    let created = call(app, Method::POST, "/api/session", None, Some(serde_json::json!({ "user_id": user }))).await;
    assert_eq!(created.status, StatusCode::OK, "{}", created.raw);
    let session_id = created.body["session_id"].as_u64().unwrap();
    let token = created.body["token"].as_str().unwrap().to_string();
    let arm = created.body["arm"].as_str().unwrap().to_string();
    let base = format!("/api/session/{session_id}");
    let t = Some(token.as_str());
    let mut replies = vec![created];

    let pre = serde_json::json!({ "answers": [3, 2, 4, 3] });
    replies.push(call(app, Method::POST, &format!("{base}/survey/pre"), t, Some(pre)).await);
    replies.push(call(app, Method::GET, &format!("{base}/network"), t, None).await);
    replies.push(call(app, Method::GET, &format!("{base}/tweets/{}", node(1)), t, None).await);
    replies.push(call(app, Method::POST, &format!("{base}/guess"), t, Some(serde_json::json!({ "account_id": guess }))).await);
    let recs = call(app, Method::GET, &format!("{base}/recommendations"), t, None).await;
    let picks: Vec<Value> = recs.body["recommendations"]
        .as_array()
        .map(|list| list.iter().take(2).map(|r| r["account_id"].clone()).collect())
        .unwrap_or_default();
    replies.push(recs);
    replies.push(call(app, Method::POST, &format!("{base}/whatif"), t, Some(serde_json::json!({ "selected": picks }))).await);
    let post = serde_json::json!({ "answers": [4, 2, 5, 3] });
    replies.push(call(app, Method::POST, &format!("{base}/survey/post"), t, Some(post)).await);
    let demo = serde_json::json!({ "political_ideology": "moderate", "gender": "declined", "age_band": "25-34" });
    replies.push(call(app, Method::POST, &format!("{base}/demographics"), t, Some(demo)).await);
    SessionRun { user: user.to_string(), session_id, token, arm, replies }
}
