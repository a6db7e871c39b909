//! JSON bodies shared by the server and the client.
//!
//! Values are serialized by `serde_json`, which emits the shortest decimal
//! that round-trips the exact f64, so posteriors cross the wire at full
//! precision.

use crate::nn::Matrix;
use serde::{Deserialize, Serialize};

pub const MAX_BODY_BYTES: usize = 32 << 20;
pub const MAX_ROWS: usize = 100_000;
pub const MAX_COLS: usize = 1 << 16;

#[derive(Debug, Serialize, Deserialize)]
pub struct InputsBody {
    pub inputs: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictResponse {
    pub posteriors: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remaining_budget: Option<u64>,
}

pub const ERR_BAD_REQUEST: &str = "bad_request";
pub const ERR_NOT_FOUND: &str = "not_found";
pub const ERR_BUDGET_EXHAUSTED: &str = "budget_exhausted";
pub const ERR_INTERNAL: &str = "internal";

/// Parses and validates a request body of input rows. This is the
/// untrusted edge of the service: sizes are capped, rows must be
/// rectangular and finite.
pub fn parse_inputs_body(bytes: &[u8]) -> Result<Matrix, String> {
    let body: InputsBody =
        serde_json::from_slice(bytes).map_err(|e| format!("malformed JSON body: {e}"))?;
    if body.inputs.is_empty() {
        return Err("inputs must contain at least one row".into());
    }
    if body.inputs.len() > MAX_ROWS {
        return Err(format!("too many rows (> {MAX_ROWS})"));
    }
    let width = body.inputs[0].len();
    if width == 0 || width > MAX_COLS {
        return Err(format!("row width {width} out of range"));
    }
    for (i, row) in body.inputs.iter().enumerate() {
        if row.len() != width {
            return Err(format!(
                "ragged inputs: row {i} has {} values, row 0 has {width}",
                row.len()
            ));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(format!("row {i} contains a non-finite value"));
        }
    }
    Ok(Matrix::from_rows(&body.inputs))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(|r| r.to_vec()).collect()
}
