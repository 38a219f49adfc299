//! Thin async client for the chat service.

use missa_core::api::{Aggregate, CreateSession, ErrorBody, MessageReply, PostMessage, RatingReply, SessionView, VariantList};
use missa_core::session::Ratings;
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("{status}: {message}")]
    Api { status: StatusCode, message: String },
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn call<B: Serialize, T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<&B>) -> Result<T> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(body) = body {
            req = req.json(body);
        }
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
        Err(ClientError::Api { status, message })
    }

    pub async fn create_session(&self, req: &CreateSession) -> Result<SessionView> {
        self.call(Method::POST, "/sessions", Some(req)).await
    }

    pub async fn session(&self, id: &str) -> Result<SessionView> {
        self.call::<(), _>(Method::GET, &format!("/sessions/{id}"), None).await
    }

    pub async fn post_message(&self, id: &str, text: &str) -> Result<MessageReply> {
        let body = PostMessage { text: text.to_string() };
        self.call(Method::POST, &format!("/sessions/{id}/message"), Some(&body)).await
    }

    pub async fn rate(&self, id: &str, ratings: Ratings) -> Result<RatingReply> {
        self.call(Method::POST, &format!("/sessions/{id}/rating"), Some(&ratings)).await
    }

    pub async fn variants(&self) -> Result<VariantList> {
        self.call::<(), _>(Method::GET, "/variants", None).await
    }

    pub async fn aggregate(&self) -> Result<Aggregate> {
        self.call::<(), _>(Method::GET, "/aggregate", None).await
    }
}
