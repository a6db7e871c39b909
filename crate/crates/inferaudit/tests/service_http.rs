//! Wire-level tests of the target service endpoints.

use inferaudit::data::{generate_synthetic_dataset, AttributeSpec, DatasetSpec};
use inferaudit::nn::{self, Matrix};
use inferaudit::rng::Rng;
use inferaudit::service::{
    serve, ClientError, ServiceApi, ServiceClient, ServiceConfig,
};
use std::path::PathBuf;

fn trained_artifact(dir: &std::path::Path, seed: u64) -> (PathBuf, nn::Model) {
    let spec = DatasetSpec {
        name: "wire".into(),
        n_samples: 300,
        n_features: 8,
        n_classes: 3,
        attributes: vec![AttributeSpec {
            name: "tone".into(),
            num_classes: 2,
            correlation: 0.8,
        }],
        noise_scale: 1.5,
        seed,
        common_tasks: None,
    };
    let ds = generate_synthetic_dataset(&spec).unwrap();
    let model = nn::init_model(&[8, 16, 8, 3], seed).unwrap();
    let batch = nn::Batch {
        inputs: ds.inputs.clone(),
        targets: nn::Targets::Classes(ds.labels.clone()),
    };
    let config = nn::TrainConfig {
        learning_rate: 1e-3,
        batch_size: 64,
        epochs: 30,
        loss_kind: nn::LossKind::HardCe,
        seed,
    };
    let (model, _) = nn::train(model, &batch, &config).unwrap();
    let path = dir.join("wire_model.bin");
    nn::write_model(&path, &model, "{}").unwrap();
    (path, model)
}

fn random_inputs(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = Rng::seed_from(seed);
    let mut m = Matrix::zeros(n, d);
    for v in m.data_mut() {
        *v = rng.normal();
    }
    m
}

#[test]
fn server_matches_local_forward_within_1e12() {
    let dir = tempfile::tempdir().unwrap();
    let (artifact, model) = trained_artifact(dir.path(), 1);
    let handle = serve(&ServiceConfig {
        artifact_path: artifact,
        expose_embedding: true,
        query_budget: None,
        addr: "127.0.0.1:0".parse().unwrap(),
    })
    .unwrap();
    let client = ServiceClient::new(handle.predict_url(), Some(handle.embedding_url()));
    let inputs = random_inputs(64, 8, 2);

    let wire_posteriors = client.predict(&inputs).unwrap();
    let local = nn::forward(&model, &inputs).unwrap();
    for i in 0..inputs.rows() {
        let row = wire_posteriors.row(i);
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        for (w, l) in row.iter().zip(local.posteriors.row(i)) {
            assert!((w - l).abs() < 1e-12, "wire {w} vs local {l}");
        }
    }

    let wire_embeddings = client.embedding(&inputs).unwrap();
    let local_emb = nn::embed(&model, &inputs, None).unwrap();
    assert_eq!(wire_embeddings.cols(), 8); // penultimate layer width
    for i in 0..inputs.rows() {
        for (w, l) in wire_embeddings.row(i).iter().zip(local_emb.row(i)) {
            assert!((w - l).abs() < 1e-12);
        }
    }
    // Both endpoints count toward one ledger.
    assert_eq!(handle.ledger().snapshot().total, 128);
    assert_eq!(handle.ledger().snapshot().predict, 64);
    assert_eq!(handle.ledger().snapshot().embedding, 64);
    handle.shutdown();
}

#[test]
fn wire_errors_are_typed_and_budget_is_visible() {
    let dir = tempfile::tempdir().unwrap();
    let (artifact, _) = trained_artifact(dir.path(), 3);
    let handle = serve(&ServiceConfig {
        artifact_path: artifact,
        expose_embedding: false,
        query_budget: Some(10),
        addr: "127.0.0.1:0".parse().unwrap(),
    })
    .unwrap();
    let client = ServiceClient::new(handle.predict_url(), Some(handle.embedding_url()));

    // Dimension mismatch is a 4xx rejection naming the widths.
    let wrong = random_inputs(2, 5, 0);
    match client.predict(&wrong) {
        Err(ClientError::Rejected(msg)) => {
            assert!(msg.contains("dimension mismatch"), "{msg}")
        }
        other => panic!("expected rejection, got {other:?}"),
    }
    // The embedding endpoint is disabled: a typed not-found error.
    let ok = random_inputs(2, 8, 1);
    assert!(matches!(
        client.embedding(&ok),
        Err(ClientError::EndpointMissing(_))
    ));
    // Valid rows count; exceeding the budget yields the distinct error and
    // leaves the ledger untouched.
    client.predict(&random_inputs(10, 8, 2)).unwrap();
    match client.predict(&random_inputs(1, 8, 3)) {
        Err(ClientError::BudgetExhausted { remaining }) => assert_eq!(remaining, 0),
        other => panic!("expected budget exhaustion, got {other:?}"),
    }
    assert_eq!(handle.ledger().snapshot().total, 10);
    handle.shutdown();
}

#[test]
fn malformed_bodies_are_rejected_not_crashed() {
    let dir = tempfile::tempdir().unwrap();
    let (artifact, _) = trained_artifact(dir.path(), 5);
    let handle = serve(&ServiceConfig {
        artifact_path: artifact,
        expose_embedding: false,
        query_budget: None,
        addr: "127.0.0.1:0".parse().unwrap(),
    })
    .unwrap();
    let url = handle.predict_url();
    for body in [
        "not json",
        r#"{"inputs": []}"#,
        r#"{"inputs": [[1.0], [1.0, 2.0]]}"#,
        r#"{"inputs": [[1e999]]}"#,
        r#"{"wrong_key": 1}"#,
    ] {
        let response = minreq::post(&url)
            .with_header("Content-Type", "application/json")
            .with_body(body)
            .with_timeout(10)
            .send()
            .unwrap();
        assert_eq!(response.status_code, 400, "body {body}");
        let parsed: serde_json::Value = response.json().unwrap();
        assert_eq!(parsed["error"], "bad_request");
    }
    // Unknown routes 404.
    let response = minreq::get(format!("http://{}/nope", handle.addr()))
        .with_timeout(10)
        .send()
        .unwrap();
    assert_eq!(response.status_code, 404);
    // Nothing counted.
    assert_eq!(handle.ledger().snapshot().total, 0);
    handle.shutdown();
}

#[test]
fn serving_requires_hidden_layer_for_embeddings_and_valid_artifact() {
    let dir = tempfile::tempdir().unwrap();
    // No hidden layer: embedding exposure must be refused.
    let linear = nn::init_model(&[4, 2], 0).unwrap();
    let path = dir.path().join("linear.bin");
    nn::write_model(&path, &linear, "{}").unwrap();
    match serve(&ServiceConfig {
        artifact_path: path.clone(),
        expose_embedding: true,
        query_budget: None,
        addr: "127.0.0.1:0".parse().unwrap(),
    }) {
        Err(err) => assert!(err.to_string().contains("hidden layer"), "{err}"),
        Ok(_) => panic!("embedding exposure without a hidden layer must be refused"),
    }

    // Corrupt artifact: served never.
    let corrupt = dir.path().join("corrupt.bin");
    std::fs::write(&corrupt, b"garbage").unwrap();
    assert!(serve(&ServiceConfig {
        artifact_path: corrupt,
        expose_embedding: false,
        query_budget: None,
        addr: "127.0.0.1:0".parse().unwrap(),
    })
    .is_err());
}
