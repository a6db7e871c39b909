//! Black-box client for a target service.

use super::wire::{EmbeddingResponse, ErrorBody, InputsBody, PredictResponse, ERR_BUDGET_EXHAUSTED, ERR_NOT_FOUND};
use crate::nn::Matrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("query budget exhausted (remaining {remaining})")]
    BudgetExhausted { remaining: u64 },
    #[error("endpoint not available: {0}")]
    EndpointMissing(String),
    #[error("service rejected the request: {0}")]
    Rejected(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed service response: {0}")]
    MalformedResponse(String),
}

/// Query surface the attack pipelines run against. Implemented by the HTTP
/// client; tests may implement it in-process.
pub trait ServiceApi: Send + Sync {
    fn predict(&self, inputs: &Matrix) -> Result<Matrix, ClientError>;
    fn embedding(&self, inputs: &Matrix) -> Result<Matrix, ClientError>;
}

/// Result of a chunked query loop that may run into the budget.
#[derive(Debug)]
pub struct ChunkedOutcome {
    /// Rows obtained before any refusal, in request order.
    pub rows: Matrix,
    /// Set when the service refused a chunk for budget reasons.
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone)]
pub struct ServiceClient {
    predict_url: String,
    embedding_url: Option<String>,
    timeout_secs: u64,
}

impl ServiceClient {
    pub fn new(predict_url: impl Into<String>, embedding_url: Option<String>) -> Self {
        ServiceClient {
            predict_url: predict_url.into(),
            embedding_url,
            timeout_secs: 60,
        }
    }

    pub fn has_embedding(&self) -> bool {
        self.embedding_url.is_some()
    }

    /// True when the service answers its health endpoint.
    pub fn reachable(&self) -> bool {
        let Some(base) = self.predict_url.strip_suffix("/predict") else {
            return false;
        };
        minreq::get(format!("{base}/health"))
            .with_timeout(5)
            .send()
            .map(|r| r.status_code == 200)
            .unwrap_or(false)
    }

    fn post_inputs(&self, url: &str, inputs: &Matrix) -> Result<minreq::Response, ClientError> {
        let body = serde_json::to_string(&InputsBody {
            inputs: inputs.iter_rows().map(|r| r.to_vec()).collect(),
        })
        .expect("request serialization cannot fail");
        minreq::post(url)
            .with_header("Content-Type", "application/json")
            .with_body(body)
            .with_timeout(self.timeout_secs)
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))
    }

    fn map_error(response: &minreq::Response) -> ClientError {
        let parsed: Result<ErrorBody, _> = serde_json::from_str(response.as_str().unwrap_or(""));
        match parsed {
            Ok(body) if body.error == ERR_BUDGET_EXHAUSTED => ClientError::BudgetExhausted {
                remaining: body.remaining_budget.unwrap_or(0),
            },
            Ok(body) if body.error == ERR_NOT_FOUND => ClientError::EndpointMissing(body.message),
            Ok(body) => ClientError::Rejected(format!("{}: {}", body.error, body.message)),
            Err(_) => ClientError::MalformedResponse(format!(
                "status {} with unparseable error body",
                response.status_code
            )),
        }
    }

    fn rows_to_matrix(rows: Vec<Vec<f64>>, expected_rows: usize) -> Result<Matrix, ClientError> {
        if rows.len() != expected_rows {
            return Err(ClientError::MalformedResponse(format!(
                "expected {expected_rows} rows, got {}",
                rows.len()
            )));
        }
        let width = rows.first().map_or(0, |r| r.len());
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(ClientError::MalformedResponse("ragged response rows".into()));
        }
        Ok(Matrix::from_rows(&rows))
    }

    /// Queries either endpoint in bounded chunks, stopping cleanly if the
    /// budget runs out mid-way. Rows obtained so far are returned.
    pub fn query_chunked(
        &self,
        inputs: &Matrix,
        chunk: usize,
        embedding: bool,
    ) -> Result<ChunkedOutcome, ClientError> {
        assert!(chunk >= 1);
        let mut collected: Vec<Vec<f64>> = Vec::with_capacity(inputs.rows());
        let indices: Vec<usize> = (0..inputs.rows()).collect();
        for block in indices.chunks(chunk) {
            let sub = inputs.select_rows(block);
            let result = if embedding {
                self.embedding(&sub)
            } else {
                self.predict(&sub)
            };
            match result {
                Ok(m) => collected.extend(m.iter_rows().map(|r| r.to_vec())),
                Err(ClientError::BudgetExhausted { .. }) => {
                    return Ok(ChunkedOutcome {
                        rows: Matrix::from_rows(&collected),
                        budget_exhausted: true,
                    });
                }
                Err(e) => return Err(e),
            }
        }
        Ok(ChunkedOutcome {
            rows: Matrix::from_rows(&collected),
            budget_exhausted: false,
        })
    }
}

impl ServiceApi for ServiceClient {
    fn predict(&self, inputs: &Matrix) -> Result<Matrix, ClientError> {
        let response = self.post_inputs(&self.predict_url, inputs)?;
        if response.status_code != 200 {
            return Err(Self::map_error(&response));
        }
        let body: PredictResponse = response
            .json()
            .map_err(|e| ClientError::MalformedResponse(e.to_string()))?;
        Self::rows_to_matrix(body.posteriors, inputs.rows())
    }

    fn embedding(&self, inputs: &Matrix) -> Result<Matrix, ClientError> {
        let Some(url) = &self.embedding_url else {
            return Err(ClientError::EndpointMissing(
                "no embedding endpoint advertised for this service".into(),
            ));
        };
        let response = self.post_inputs(url, inputs)?;
        if response.status_code != 200 {
            return Err(Self::map_error(&response));
        }
        let body: EmbeddingResponse = response
            .json()
            .map_err(|e| ClientError::MalformedResponse(e.to_string()))?;
        Self::rows_to_matrix(body.embeddings, inputs.rows())
    }
}

/// In-process [`ServiceApi`] over a loaded model, with the same ledger
/// semantics as the HTTP server. Useful for oracle comparisons and tests
/// that do not need a socket.
pub struct LocalService {
    model: crate::nn::Model,
    expose_embedding: bool,
    ledger: super::QueryLedger,
}

impl LocalService {
    pub fn new(model: crate::nn::Model, expose_embedding: bool, budget: Option<u64>) -> Self {
        LocalService {
            model,
            expose_embedding,
            ledger: super::QueryLedger::new(budget),
        }
    }

    pub fn ledger(&self) -> &super::QueryLedger {
        &self.ledger
    }

    fn admit(&self, rows: usize, endpoint: super::Endpoint) -> Result<(), ClientError> {
        self.ledger
            .admit(rows as u64, endpoint)
            .map_err(|refusal| ClientError::BudgetExhausted {
                remaining: refusal.remaining,
            })
    }
}

impl ServiceApi for LocalService {
    fn predict(&self, inputs: &Matrix) -> Result<Matrix, ClientError> {
        self.admit(inputs.rows(), super::Endpoint::Predict)?;
        crate::nn::forward(&self.model, inputs)
            .map(|f| f.posteriors)
            .map_err(|e| ClientError::Rejected(e.to_string()))
    }

    fn embedding(&self, inputs: &Matrix) -> Result<Matrix, ClientError> {
        if !self.expose_embedding {
            return Err(ClientError::EndpointMissing(
                "embedding endpoint is not enabled on this service".into(),
            ));
        }
        self.admit(inputs.rows(), super::Endpoint::Embedding)?;
        crate::nn::embed(&self.model, inputs, None).map_err(|e| ClientError::Rejected(e.to_string()))
    }
}
