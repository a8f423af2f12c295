#[path = "../../core/tests/support/stub.rs"]
mod stub;

use std::sync::atomic::Ordering;
use std::sync::Arc;

use adaptmt::gateway::{FixtureTable, ProviderKind, RetryPolicy};
use adaptmt_server::{router, AppState, ServerConfig};
use proptest::prelude::*;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

async fn spawn(config: ServerConfig) -> (String, Arc<AppState>) {
    let state = AppState::open(config).unwrap();
    let app = router(state.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}"), state)
}

async fn echo_server() -> (String, Arc<AppState>) {
    spawn(ServerConfig::new(ProviderKind::EchoTopMatch)).await
}

async fn create(client: &Client, base: &str, src: &str, tgt: &str) -> String {
    let resp = client
        .post(format!("{base}/v1/projects"))
        .json(&json!({"source_lang": src, "target_lang": tgt}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    resp.json::<Value>().await.unwrap()["project_id"].as_str().unwrap().to_string()
}

async fn post_tm(client: &Client, base: &str, id: &str, body: &str) -> (StatusCode, Value) {
    let resp = client.post(format!("{base}/v1/projects/{id}/tm")).body(body.to_string()).send().await.unwrap();
    (resp.status(), resp.json().await.unwrap_or(Value::Null))
}

async fn post_json(client: &Client, url: String, body: Value) -> (StatusCode, Value) {
    let resp = client.post(url).json(&body).send().await.unwrap();
    (resp.status(), resp.json().await.unwrap_or(Value::Null))
}

const TSV: &str = "The cat sleeps.\tLe chat dort.\nThe dog barks.\tLe chien aboie.\nThe cat eats.\tLe chat mange.\n";

#[tokio::test]
async fn health_and_project_creation() {
    let (base, _) = echo_server().await;
    let client = Client::new();
    let health: Value = client.get(format!("{base}/health")).send().await.unwrap().json().await.unwrap();
    assert_eq!(health, json!({"status": "ok"}));
    let a = create(&client, &base, "en", "fr").await;
    let b = create(&client, &base, "en", "fr").await;
    assert_ne!(a, b);
    let (status, _) = post_json(&client, format!("{base}/v1/projects"), json!({"source_lang": "en", "target_lang": "e n"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post_json(&client, format!("{base}/v1/projects"), json!({"source_lang": "en", "target_lang": "en"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let info: Value = client.get(format!("{base}/v1/projects/{a}")).send().await.unwrap().json().await.unwrap();
    assert_eq!(info["lang"]["length_multiplier"], 4);
    assert_eq!(info["tm_size"], 0);
}

#[tokio::test]
async fn ingestion_formats_and_errors() {
    let (base, _) = echo_server().await;
    let client = Client::new();
    let id = create(&client, &base, "en", "fr").await;
    let (status, body) = post_tm(&client, &base, &id, TSV).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!((body["ingested"].as_u64(), body["dropped"].as_u64()), (Some(3), Some(0)));

    let jsonl = "{\"source\": \"The cat sleeps.\", \"target\": \"Le chat dort.\"}\n{\"source\": \"Birds sing.\", \"target\": \"Les oiseaux chantent.\"}\n";
    let (status, body) = post_tm(&client, &base, &id, jsonl).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!((body["ingested"].as_u64(), body["dropped"].as_u64(), body["tm_size"].as_u64()), (Some(1), Some(1), Some(4)));

    let (status, body) = post_tm(&client, &base, &id, "ok\tfine\nno tab here\n\tonly target\n").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let lines: Vec<u64> = body["rows"].as_array().unwrap().iter().map(|r| r["line"].as_u64().unwrap()).collect();
    assert_eq!(lines, vec![2, 3]);

    let (status, _) = post_tm(&client, &base, &id, "\n  \n").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = post_tm(&client, &base, "p999", TSV).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let resp = client.post(format!("{base}/v1/projects/{id}/tm?format=xml")).body(TSV).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let export = client.get(format!("{base}/v1/projects/{id}/tm")).send().await.unwrap().text().await.unwrap();
    assert_eq!(export.lines().count(), 4);
}

#[tokio::test]
async fn matches_are_ranked() {
    let (base, _) = echo_server().await;
    let client = Client::new();
    let id = create(&client, &base, "en", "fr").await;
    post_tm(&client, &base, &id, TSV).await;
    let body: Value = client
        .get(format!("{base}/v1/projects/{id}/matches?q=The%20cat%20sleeps.&k=2"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let m = body["matches"].as_array().unwrap();
    assert_eq!(m.len(), 2);
    assert_eq!(m[0]["target"], "Le chat dort.");
    assert!((m[0]["score"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!(m[0]["score"].as_f64() >= m[1]["score"].as_f64());
    let resp = client.get(format!("{base}/v1/projects/{id}/matches?q=%20")).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let resp = client.get(format!("{base}/v1/projects/nope/matches?q=x")).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn approve_then_translate_reads_its_own_write() {
    let (base, _) = echo_server().await;
    let client = Client::new();
    let id = create(&client, &base, "en", "fr").await;
    post_tm(&client, &base, &id, TSV).await;
    let url = format!("{base}/v1/projects/{id}/approve");
    let (status, first) = post_json(&client, url.clone(), json!({"source": "Rain falls softly.", "target": "La pluie tombe doucement."})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first["created"], true);
    let (_, again) = post_json(&client, url.clone(), json!({"source": "Rain falls softly.", "target": "La pluie tombe doucement."})).await;
    assert_eq!(again["pair_id"], first["pair_id"]);
    assert_eq!(again["created"], false);
    let (status, _) = post_json(&client, url, json!({"source": "x", "target": "  "})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, result) =
        post_json(&client, format!("{base}/v1/projects/{id}/translate"), json!({"source": "Rain falls softly."})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(result["output"], "La pluie tombe doucement.");
    assert_eq!(result["matches_used"][0]["id"], first["pair_id"]);
    assert!(result.get("prompt_used").is_none());

    let (_, debug) = post_json(
        &client,
        format!("{base}/v1/projects/{id}/translate?debug=1"),
        json!({"source": "Rain falls softly.", "strategy": {"kind": "zero_shot", "top_k": 0}}),
    )
    .await;
    assert!(debug["prompt_used"].as_str().unwrap().ends_with("French:"));
    assert_eq!(debug["kind_used"], "zero_shot");

    let (status, err) = post_json(
        &client,
        format!("{base}/v1/projects/{id}/translate"),
        json!({"source": "x", "strategy": {"kind": "few_shot_fuzzy", "top_k": 0}}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["stage"], "strategy");
}

#[tokio::test]
async fn provider_failure_is_a_bad_gateway() {
    let stub = Arc::new(stub::CompletionStub::default());
    *stub.steady_status.lock().unwrap() = Some(503);
    let url = stub::spawn_completion_stub(stub.clone()).await;
    let mut config = ServerConfig::new(ProviderKind::http(url, None));
    config.retry = RetryPolicy { max_attempts: 2, base_delay_ms: 1, max_delay_ms: 5, jitter: false, ..RetryPolicy::default() };
    let (base, _) = spawn(config).await;
    let client = Client::new();
    let id = create(&client, &base, "en", "fr").await;
    post_tm(&client, &base, &id, TSV).await;
    let (status, body) =
        post_json(&client, format!("{base}/v1/projects/{id}/translate"), json!({"source": "The cat sleeps."})).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["stage"], "gateway");
    assert_eq!(stub.calls.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn bearer_token_guards_the_api() {
    let mut config = ServerConfig::new(ProviderKind::EchoTopMatch);
    config.bearer_token = Some("tok".into());
    let (base, _) = spawn(config).await;
    let client = Client::new();
    assert_eq!(client.get(format!("{base}/health")).send().await.unwrap().status(), StatusCode::OK);
    let resp = client
        .post(format!("{base}/v1/projects"))
        .json(&json!({"source_lang": "en", "target_lang": "fr"}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
    let resp = client
        .post(format!("{base}/v1/projects"))
        .bearer_auth("wrong")
        .json(&json!({"source_lang": "en", "target_lang": "fr"}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
    let resp = client
        .post(format!("{base}/v1/projects"))
        .bearer_auth("tok")
        .json(&json!({"source_lang": "en", "target_lang": "fr"}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
}

#[tokio::test]
async fn state_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServerConfig::new(ProviderKind::EchoTopMatch);
    config.data_dir = Some(dir.path().to_path_buf());
    let client = Client::new();
    let (id, approved, matches_before) = {
        let (base, _) = spawn(config.clone()).await;
        let id = create(&client, &base, "en", "fr").await;
        post_tm(&client, &base, &id, TSV).await;
        let (_, a) = post_json(&client, format!("{base}/v1/projects/{id}/approve"), json!({"source": "Snow melts.", "target": "La neige fond."})).await;
        post_json(&client, format!("{base}/v1/projects/{id}/terms"), json!({"terms": [{"src": "cat", "tgt": "chat"}, {"src": "cat", "tgt": "chat"}]})).await;
        post_json(&client, format!("{base}/v1/projects/{id}/glossary/compile"), json!({})).await;
        let m: Value = client.get(format!("{base}/v1/projects/{id}/matches?q=The%20cat&k=4")).send().await.unwrap().json().await.unwrap();
        (id, a["pair_id"].clone(), m)
    };
    let (base, _) = spawn(config).await;
    let info: Value = client.get(format!("{base}/v1/projects/{id}")).send().await.unwrap().json().await.unwrap();
    assert_eq!(info["tm_size"], 4);
    assert_eq!(info["glossary_size"], 1);
    let m: Value = client.get(format!("{base}/v1/projects/{id}/matches?q=The%20cat&k=4")).send().await.unwrap().json().await.unwrap();
    assert_eq!(m, matches_before);
    let (_, again) = post_json(&client, format!("{base}/v1/projects/{id}/approve"), json!({"source": "Snow melts.", "target": "La neige fond."})).await;
    assert_eq!(again["pair_id"], approved);
    assert_eq!(again["created"], false);
    let next = create(&client, &base, "en", "de").await;
    assert_ne!(next, id);
    let tsv = client.get(format!("{base}/v1/projects/{id}/glossary")).send().await.unwrap().text().await.unwrap();
    assert!(tsv.contains("cat\tchat"));
}

#[tokio::test]
async fn glossary_lifecycle() {
    let mut table = FixtureTable::new().with_fallback("cat = chat\ndog = chien");
    table.insert_prompt("unused", "x");
    let (base, state) = spawn(ServerConfig::new(ProviderKind::fixture(table))).await;
    let client = Client::new();
    let id = create(&client, &base, "en", "fr").await;
    let resp = client.get(format!("{base}/v1/projects/{id}/glossary")).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);

    let (status, empty) = post_json(&client, format!("{base}/v1/projects/{id}/glossary/compile"), json!({})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(empty["entries"], 0);
    assert_eq!(empty["warnings"].as_array().unwrap().len(), 1);

    post_tm(&client, &base, &id, "The cat and the dog.\tLe chat et le chien.\nA cat.\tUn chat.\nA dog.\tUn chien.\n").await;
    let (status, run) = post_json(&client, format!("{base}/v1/projects/{id}/terms/extract"), json!({"n": 2})).await;
    assert_eq!(status, StatusCode::OK, "{run}");
    assert_eq!(run["extracted"], 3);

    let project = state.registry.get(&id).unwrap();
    project.extraction_pending.store(true, Ordering::SeqCst);
    let (status, _) = post_json(&client, format!("{base}/v1/projects/{id}/glossary/compile"), json!({})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    project.extraction_pending.store(false, Ordering::SeqCst);

    let (status, compiled) = post_json(&client, format!("{base}/v1/projects/{id}/glossary/compile"), json!({"min_freq": 2})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(compiled["entries"], 2, "{compiled}");
    let tsv = client.get(format!("{base}/v1/projects/{id}/glossary")).send().await.unwrap().text().await.unwrap();
    assert_eq!(tsv.lines().count(), 2);

    let (_, result) = post_json(
        &client,
        format!("{base}/v1/projects/{id}/translate?debug=1"),
        json!({"source": "My cat.", "strategy": {"kind": "zero_shot_glossary_terms", "top_k": 0}}),
    )
    .await;
    assert_eq!(result["terms_used"][0]["src"], "cat", "{result}");
    let (status, _) = post_json(&client, format!("{base}/v1/projects/{id}/glossary/compile"), json!({"max_ngram": 9})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn concurrent_approvals_get_distinct_ids() {
    let (base, _) = echo_server().await;
    let client = Client::new();
    let id = create(&client, &base, "en", "fr").await;
    let mut tasks = Vec::new();
    for i in 0..40 {
        let client = client.clone();
        let url = format!("{base}/v1/projects/{id}/approve");
        let murl = format!("{base}/v1/projects/{id}/matches?q=sentence%20{i}");
        tasks.push(tokio::spawn(async move {
            let (_, a) = post_json(&client, url, json!({"source": format!("sentence {}", i % 20), "target": format!("phrase {}", i % 20)})).await;
            let m = client.get(murl).send().await.unwrap().status();
            (i % 20, a["pair_id"].as_u64().unwrap(), m)
        }));
    }
    let mut by_source = std::collections::HashMap::new();
    for t in tasks {
        let (src, pid, status) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        assert_eq!(*by_source.entry(src).or_insert(pid), pid);
    }
    let mut ids: Vec<u64> = by_source.values().copied().collect();
    ids.sort();
    assert_eq!(ids, (1..=20).collect::<Vec<_>>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn approve_is_idempotent_per_pair(ops in prop::collection::vec((0u8..6, 0u8..3), 1..25)) {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async {
            let (base, _) = echo_server().await;
            let client = Client::new();
            let id = create(&client, &base, "en", "es").await;
            let mut seen = std::collections::HashMap::new();
            for (s, t) in ops {
                let (_, body) = post_json(
                    &client,
                    format!("{base}/v1/projects/{id}/approve"),
                    json!({"source": format!("src {s}"), "target": format!("tgt {t}")}),
                )
                .await;
                let pid = body["pair_id"].as_u64().unwrap();
                let expected = *seen.entry((s, t)).or_insert(pid);
                assert_eq!(pid, expected);
                let (_, result) = post_json(
                    &client,
                    format!("{base}/v1/projects/{id}/translate"),
                    json!({"source": format!("src {s}"), "strategy": {"kind": "few_shot_fuzzy", "top_k": 1}}),
                )
                .await;
                assert!(result["output"].as_str().unwrap().starts_with("tgt "));
            }
            let info: Value = client.get(format!("{base}/v1/projects/{id}")).send().await.unwrap().json().await.unwrap();
            assert_eq!(info["tm_size"].as_u64().unwrap() as usize, seen.len());
        });
    }
}
