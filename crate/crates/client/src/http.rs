use std::time::Duration;

use mapro_core::harness::ReportBundle;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::api::{
    ApiErrorBody, Health, IterationReport, JobState, OptimizeRequest, RunSnapshot, RunSpec, RunStatus,
    ScoresResponse, SolveRequest, SolveResponse,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("service returned HTTP {status}: {message}")]
    Api { status: u16, message: String },
}

#[derive(Debug, Clone)]
pub struct MaproClient {
    base: String,
    http: reqwest::Client,
}

impl MaproClient {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ApiErrorBody>(&text).map(|b| b.error).unwrap_or(text);
        Err(ClientError::Api { status: status.as_u16(), message })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::decode(self.http.get(self.url(path)).send().await?).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        Self::decode(self.http.post(self.url(path)).json(body).send().await?).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.get("/health").await
    }

    pub async fn solve(&self, req: &SolveRequest) -> Result<SolveResponse, ClientError> {
        self.post("/v1/solve", req).await
    }

    pub async fn create_run(&self, spec: &RunSpec) -> Result<RunStatus, ClientError> {
        self.post("/v1/runs", spec).await
    }

    pub async fn list_runs(&self) -> Result<Vec<RunStatus>, ClientError> {
        self.get("/v1/runs").await
    }

    pub async fn status(&self, id: &str) -> Result<RunStatus, ClientError> {
        self.get(&format!("/v1/runs/{id}")).await
    }

    pub async fn iterate(&self, id: &str) -> Result<IterationReport, ClientError> {
        self.post(&format!("/v1/runs/{id}/iterate"), &()).await
    }

    /// Starts the optimization loop in the background.
    pub async fn optimize(&self, id: &str, req: &OptimizeRequest) -> Result<RunStatus, ClientError> {
        self.post(&format!("/v1/runs/{id}/optimize"), req).await
    }

    /// Polls until the background job is no longer running, reporting every
    /// status change to `progress`.
    pub async fn wait(
        &self,
        id: &str,
        poll: Duration,
        mut progress: impl FnMut(&RunStatus),
    ) -> Result<RunStatus, ClientError> {
        let mut seen = usize::MAX;
        loop {
            let s = self.status(id).await?;
            if s.iteration != seen {
                seen = s.iteration;
                progress(&s);
            }
            if s.job != JobState::Running {
                return Ok(s);
            }
            tokio::time::sleep(poll).await;
        }
    }

    pub async fn scores(&self, id: &str) -> Result<ScoresResponse, ClientError> {
        self.get(&format!("/v1/runs/{id}/scores")).await
    }

    pub async fn snapshot(&self, id: &str) -> Result<RunSnapshot, ClientError> {
        self.get(&format!("/v1/runs/{id}/snapshot")).await
    }

    pub async fn restore(&self, snapshot: &RunSnapshot) -> Result<RunStatus, ClientError> {
        self.post("/v1/runs/restore", snapshot).await
    }

    pub async fn report(&self, id: &str) -> Result<ReportBundle, ClientError> {
        self.get(&format!("/v1/runs/{id}/report")).await
    }

    pub async fn delete(&self, id: &str) -> Result<(), ClientError> {
        let resp = self.http.delete(self.url(&format!("/v1/runs/{id}"))).send().await?;
        if resp.status().is_success() {
            return Ok(());
        }
        let status = resp.status().as_u16();
        let message = resp.text().await.unwrap_or_default();
        Err(ClientError::Api { status, message })
    }
}
