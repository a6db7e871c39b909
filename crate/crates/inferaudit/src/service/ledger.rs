//! Atomic query accounting.

use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Predict,
    Embedding,
}

/// Refusal returned when admitting a batch would cross the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetRefusal {
    pub budget: u64,
    pub remaining: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub total: u64,
    pub predict: u64,
    pub embedding: u64,
    pub budget: Option<u64>,
}

/// Monotone counter of scored input rows, shared by every endpoint.
/// Admission is an atomic check-and-increment: either the whole batch fits
/// under the budget and is counted, or nothing is.
#[derive(Debug)]
pub struct QueryLedger {
    budget: Option<u64>,
    total: AtomicU64,
    predict: AtomicU64,
    embedding: AtomicU64,
}

impl QueryLedger {
    pub fn new(budget: Option<u64>) -> Self {
        QueryLedger {
            budget,
            total: AtomicU64::new(0),
            predict: AtomicU64::new(0),
            embedding: AtomicU64::new(0),
        }
    }

    /// Admits `n` rows or refuses without counting anything. `n` must be
    /// at least 1; zero-row requests are a caller bug, not a free probe.
    pub fn admit(&self, n: u64, endpoint: Endpoint) -> Result<(), BudgetRefusal> {
        assert!(n >= 1, "admit(0) is invalid");
        let budget = self.budget;
        self.total
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |cur| {
                match budget {
                    Some(b) if cur.saturating_add(n) > b => None,
                    _ => Some(cur + n),
                }
            })
            .map_err(|cur| BudgetRefusal {
                budget: budget.unwrap_or(u64::MAX),
                remaining: budget.map_or(u64::MAX, |b| b.saturating_sub(cur)),
            })?;
        match endpoint {
            Endpoint::Predict => self.predict.fetch_add(n, Ordering::SeqCst),
            Endpoint::Embedding => self.embedding.fetch_add(n, Ordering::SeqCst),
        };
        Ok(())
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            total: self.total.load(Ordering::SeqCst),
            predict: self.predict.load(Ordering::SeqCst),
            embedding: self.embedding.load(Ordering::SeqCst),
            budget: self.budget,
        }
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }
}
