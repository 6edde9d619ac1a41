//! The http-chat client against a local fake OpenAI-compatible server.

mod common;

use std::sync::{Arc, Mutex};

use align_core::backend::{chat_request_body, connect, BackendError, BackendSpec, CompletionRequest, GenerationParams};
use align_core::structured::{build_schema, parse_decision};
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::Router;

#[derive(Clone, Default)]
struct Seen {
    bodies: Arc<Mutex<Vec<String>>>,
    auth: Arc<Mutex<Vec<Option<String>>>>,
}

async fn serve(status: StatusCode, reply: String) -> (String, Seen) {
    let seen = Seen::default();
    let app = Router::new()
        .route(
            "/v1/chat/completions",
            post(move |State(seen): State<Seen>, headers: HeaderMap, body: String| {
                let reply = reply.clone();
                async move {
                    seen.bodies.lock().unwrap().push(body);
                    seen.auth.lock().unwrap().push(
                        headers
                            .get("authorization")
                            .map(|v| v.to_str().unwrap().to_string()),
                    );
                    (status, reply)
                }
            }),
        )
        .with_state(seen.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1"), seen)
}

fn request() -> CompletionRequest {
    CompletionRequest {
        system_prompt: "You are a test.".into(),
        user_prompt: "Pick one.\n\n0. A\n1. B".into(),
        params: GenerationParams::default(),
        attempt: 0,
    }
}

#[test]
fn request_body_matches_golden() {
    let body = chat_request_body("test-model", &request()).to_string();
    assert_eq!(body, common::golden("chat_request.json"));
}

#[tokio::test]
async fn round_trip_against_recorded_fixture() {
    let (endpoint, seen) = serve(StatusCode::OK, common::golden("chat_response.json")).await;
    let spec = BackendSpec::http_chat("fake", endpoint, "test-model");
    let resp = connect(&spec).unwrap().complete(&request()).await.unwrap();

    assert_eq!(
        resp.text,
        "```json\n{\"reasoning\": \"B is safer.\", \"choice\": 1}\n```"
    );
    let usage = resp.usage.unwrap();
    assert_eq!((usage.prompt_tokens, usage.completion_tokens), (31, 17));
    assert_eq!(seen.bodies.lock().unwrap()[0], common::golden("chat_request.json"));
    assert_eq!(seen.auth.lock().unwrap()[0], None);

    let d = parse_decision(&resp.text, &build_schema(2).unwrap()).unwrap();
    assert_eq!(d.choice, 1);
}

#[tokio::test]
async fn bearer_token_from_env() {
    let (endpoint, seen) = serve(StatusCode::OK, common::golden("chat_response.json")).await;
    let mut spec = BackendSpec::http_chat("fake", endpoint, "test-model");
    spec.auth = Some("ALIGN_HTTP_TEST_KEY".into());
    std::env::set_var("ALIGN_HTTP_TEST_KEY", "sk-test");
    connect(&spec).unwrap().complete(&request()).await.unwrap();
    assert_eq!(
        seen.auth.lock().unwrap()[0].as_deref(),
        Some("Bearer sk-test")
    );
    // The spec carries only the variable name.
    assert!(!serde_json::to_string(&spec).unwrap().contains("sk-test"));
}

#[tokio::test]
async fn provider_errors_are_surfaced() {
    let (endpoint, _) = serve(
        StatusCode::SERVICE_UNAVAILABLE,
        r#"{"error":{"message":"model is loading"}}"#.into(),
    )
    .await;
    let spec = BackendSpec::http_chat("fake", endpoint, "test-model");
    let err = connect(&spec).unwrap().complete(&request()).await.unwrap_err();
    assert_eq!(
        err,
        BackendError::Provider {
            status: 503,
            message: "model is loading".into()
        }
    );
    assert!(err.is_retryable());
}

#[tokio::test]
async fn unauthorized_is_auth_error() {
    let (endpoint, _) = serve(StatusCode::UNAUTHORIZED, r#"{"error":{"message":"bad key"}}"#.into()).await;
    let spec = BackendSpec::http_chat("fake", endpoint, "test-model");
    let err = connect(&spec).unwrap().complete(&request()).await.unwrap_err();
    assert_eq!(err, BackendError::Auth("bad key".into()));
    assert!(!err.is_retryable());
}

#[tokio::test]
async fn connection_refused_is_network_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    drop(listener);
    let spec = BackendSpec::http_chat("fake", format!("http://127.0.0.1:{port}/v1"), "m");
    let err = connect(&spec).unwrap().complete(&request()).await.unwrap_err();
    assert!(matches!(err, BackendError::Network(_)), "{err:?}");
}
