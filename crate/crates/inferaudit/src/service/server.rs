//! HTTP server for the prediction and embedding endpoints.

use super::ledger::{Endpoint, QueryLedger};
use super::wire::{
    matrix_to_rows, parse_inputs_body, EmbeddingResponse, ErrorBody, PredictResponse,
    ERR_BAD_REQUEST, ERR_BUDGET_EXHAUSTED, ERR_INTERNAL, ERR_NOT_FOUND, MAX_BODY_BYTES,
};
use super::{load_for_serving, ServiceConfig, ServiceError};
use crate::nn::{self, Model};
use serde::Serialize;
use std::io::Read;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;
use tiny_http::{Header, Request, Response, Server};

const WORKER_THREADS: usize = 8;
const RECV_POLL: Duration = Duration::from_millis(25);

/// Running service. Dropping the handle shuts the server down.
pub struct ServiceHandle {
    addr: SocketAddr,
    ledger: Arc<QueryLedger>,
    stop: Arc<AtomicBool>,
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn predict_url(&self) -> String {
        format!("http://{}/predict", self.addr)
    }

    pub fn embedding_url(&self) -> String {
        format!("http://{}/embedding", self.addr)
    }

    pub fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }

    fn stop_workers(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.server.unblock();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop_workers();
    }
}

/// Loads the artifact and starts serving. The predict endpoint is always
/// live; the embedding endpoint only when configured. The ledger starts
/// at zero.
pub fn serve(config: &ServiceConfig) -> Result<ServiceHandle, ServiceError> {
    let model = Arc::new(load_for_serving(config)?);
    let server = Server::http(config.addr).map_err(|e| ServiceError::Bind {
        addr: config.addr,
        source: std::io::Error::other(e.to_string()),
    })?;
    let addr = match server.server_addr() {
        tiny_http::ListenAddr::IP(a) => a,
        _ => unreachable!("http server always binds an ip address"),
    };
    let server = Arc::new(server);
    let ledger = Arc::new(QueryLedger::new(config.query_budget));
    let stop = Arc::new(AtomicBool::new(false));
    let workers = (0..WORKER_THREADS)
        .map(|_| {
            let server = Arc::clone(&server);
            let model = Arc::clone(&model);
            let ledger = Arc::clone(&ledger);
            let stop = Arc::clone(&stop);
            let expose_embedding = config.expose_embedding;
            std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match server.recv_timeout(RECV_POLL) {
                        Ok(Some(request)) => {
                            handle_request(request, &model, &ledger, expose_embedding)
                        }
                        Ok(None) => continue,
                        Err(_) => break,
                    }
                }
            })
        })
        .collect();
    Ok(ServiceHandle {
        addr,
        ledger,
        stop,
        server,
        workers,
    })
}

fn json_response<T: Serialize>(status: u16, body: &T) -> Response<std::io::Cursor<Vec<u8>>> {
    let text = serde_json::to_string(body).expect("response serialization cannot fail");
    Response::from_string(text)
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").unwrap())
}

fn respond_error(request: Request, status: u16, code: &str, message: String, remaining: Option<u64>) {
    let body = ErrorBody {
        error: code.to_string(),
        message,
        remaining_budget: remaining,
    };
    let _ = request.respond(json_response(status, &body));
}

fn handle_request(
    request: Request,
    model: &Model,
    ledger: &QueryLedger,
    expose_embedding: bool,
) {
    let method = request.method().as_str().to_string();
    let url = request.url().to_string();
    match (method.as_str(), url.as_str()) {
        ("GET", "/health") => {
            let _ = request.respond(json_response(200, &serde_json::json!({"status": "ok"})));
        }
        ("POST", "/predict") => handle_scoring(request, model, ledger, Endpoint::Predict),
        ("POST", "/embedding") => {
            if !expose_embedding {
                respond_error(
                    request,
                    404,
                    ERR_NOT_FOUND,
                    "embedding endpoint is not enabled on this service".into(),
                    None,
                );
                return;
            }
            handle_scoring(request, model, ledger, Endpoint::Embedding)
        }
        _ => respond_error(
            request,
            404,
            ERR_NOT_FOUND,
            format!("no route for {method} {url}"),
            None,
        ),
    }
}

fn handle_scoring(mut request: Request, model: &Model, ledger: &QueryLedger, endpoint: Endpoint) {
    if request
        .body_length()
        .is_some_and(|len| len > MAX_BODY_BYTES)
    {
        respond_error(request, 400, ERR_BAD_REQUEST, "body too large".into(), None);
        return;
    }
    let mut body = Vec::new();
    {
        let mut reader = request.as_reader().take(MAX_BODY_BYTES as u64 + 1);
        if reader.read_to_end(&mut body).is_err() {
            respond_error(request, 400, ERR_BAD_REQUEST, "unreadable body".into(), None);
            return;
        }
    }
    if body.len() > MAX_BODY_BYTES {
        respond_error(request, 400, ERR_BAD_REQUEST, "body too large".into(), None);
        return;
    }
    let inputs = match parse_inputs_body(&body) {
        Ok(m) => m,
        Err(msg) => {
            respond_error(request, 400, ERR_BAD_REQUEST, msg, None);
            return;
        }
    };
    if inputs.cols() != model.input_width() {
        respond_error(
            request,
            400,
            ERR_BAD_REQUEST,
            format!(
                "dimension mismatch: service expects {} features per row, got {}",
                model.input_width(),
                inputs.cols()
            ),
            None,
        );
        return;
    }
    // Count the rows before responding; refusals count nothing.
    if let Err(refusal) = ledger.admit(inputs.rows() as u64, endpoint) {
        respond_error(
            request,
            429,
            ERR_BUDGET_EXHAUSTED,
            format!(
                "query budget of {} exhausted; {} rows remaining, {} requested",
                refusal.budget,
                refusal.remaining,
                inputs.rows()
            ),
            Some(refusal.remaining),
        );
        return;
    }
    match endpoint {
        Endpoint::Predict => match nn::forward(model, &inputs) {
            Ok(fwd) => {
                let body = PredictResponse {
                    posteriors: matrix_to_rows(&fwd.posteriors),
                };
                let _ = request.respond(json_response(200, &body));
            }
            Err(e) => respond_error(request, 500, ERR_INTERNAL, e.to_string(), None),
        },
        Endpoint::Embedding => match nn::embed(model, &inputs, None) {
            Ok(emb) => {
                let body = EmbeddingResponse {
                    embeddings: matrix_to_rows(&emb),
                };
                let _ = request.respond(json_response(200, &body));
            }
            Err(e) => respond_error(request, 500, ERR_INTERNAL, e.to_string(), None),
        },
    }
}
