#![allow(dead_code)]

//! Shared fixtures: a populated environment plus running target services.

use inferaudit::agent::{EnvPaths, ScoringPaths, TargetServiceInfo};
use inferaudit::attack::{default_manifests, save_task_registry};
use inferaudit::data::{
    combine_attributes, default_model_records, generate_synthetic_dataset, split_dataset,
    write_dataset, AttributeInfo, AttributeSpec, Dataset, DatasetRecord, DatasetSpec,
    save_dataset_registry, save_model_registry,
};
use inferaudit::nn;
use inferaudit::service::{
    self, serve, ServiceConfig, ServiceHandle, TARGET_TRAIN_SPLIT,
};
use std::path::{Path, PathBuf};

pub struct FixtureService {
    pub name: &'static str,
    pub info: TargetServiceInfo,
    pub scoring_dir: PathBuf,
    pub scoring: ScoringPaths,
    pub artifact: PathBuf,
    pub handle: ServiceHandle,
    pub expects_attribute_attack: bool,
}

pub struct Fixture {
    pub root: PathBuf,
    pub env: EnvPaths,
    pub services: Vec<FixtureService>,
}

struct ServicePlan {
    name: &'static str,
    spec: DatasetSpec,
    /// Attributes combined into the target task label, when the task is
    /// attribute-derived.
    task_attributes: Option<Vec<&'static str>>,
    expose_embedding: bool,
    sensitive_attribute: Option<&'static str>,
    task_text: &'static str,
    common_tasks: &'static str,
}

fn service_plans() -> Vec<ServicePlan> {
    vec![
        ServicePlan {
            name: "synth_five",
            spec: DatasetSpec {
                name: "synth_five".into(),
                n_samples: 3200,
                n_features: 12,
                n_classes: 5,
                attributes: vec![],
                noise_scale: 3.0,
                seed: 101,
                common_tasks: Some("synthetic 5-way cluster category prediction".into()),
            },
            task_attributes: None,
            expose_embedding: false,
            sensitive_attribute: None,
            task_text: "a 5-way cluster category prediction service over sensor vectors",
            common_tasks: "synthetic 5-way cluster category prediction",
        },
        ServicePlan {
            name: "synth_six",
            spec: DatasetSpec {
                name: "synth_six".into(),
                n_samples: 3200,
                n_features: 16,
                n_classes: 6,
                attributes: vec![],
                noise_scale: 2.5,
                seed: 102,
                common_tasks: Some("synthetic 6-way cluster category prediction".into()),
            },
            task_attributes: None,
            expose_embedding: false,
            sensitive_attribute: None,
            task_text: "a 6-way cluster category prediction service over telemetry vectors",
            common_tasks: "synthetic 6-way cluster category prediction",
        },
        ServicePlan {
            name: "synth_attr",
            spec: DatasetSpec {
                name: "synth_attr".into(),
                n_samples: 3200,
                n_features: 12,
                n_classes: 4,
                attributes: vec![
                    AttributeSpec {
                        name: "group".into(),
                        num_classes: 2,
                        correlation: 0.9,
                    },
                    AttributeSpec {
                        name: "stray".into(),
                        num_classes: 2,
                        correlation: 0.0,
                    },
                ],
                noise_scale: 2.0,
                seed: 103,
                common_tasks: Some(
                    "synthetic 4-way profile classification with annotated group traits".into(),
                ),
            },
            task_attributes: None,
            expose_embedding: true,
            sensitive_attribute: Some("group"),
            task_text: "a 4-way profile classification service over feature vectors",
            common_tasks: "synthetic 4-way profile classification with annotated group traits",
        },
        ServicePlan {
            name: "synth_faces",
            spec: DatasetSpec {
                name: "synth_faces".into(),
                n_samples: 3200,
                n_features: 16,
                n_classes: 2,
                attributes: vec![
                    AttributeSpec {
                        name: "trait_x".into(),
                        num_classes: 2,
                        correlation: 0.85,
                    },
                    AttributeSpec {
                        name: "trait_y".into(),
                        num_classes: 2,
                        correlation: 0.85,
                    },
                    AttributeSpec {
                        name: "trait_z".into(),
                        num_classes: 2,
                        correlation: 0.85,
                    },
                    AttributeSpec {
                        name: "age_group".into(),
                        num_classes: 2,
                        correlation: 0.9,
                    },
                ],
                noise_scale: 2.0,
                seed: 104,
                common_tasks: Some(
                    "facial trait profile prediction from three binary traits".into(),
                ),
            },
            task_attributes: Some(vec!["trait_x", "trait_y", "trait_z"]),
            expose_embedding: true,
            sensitive_attribute: Some("age_group"),
            task_text: "an 8-way facial trait profile prediction service",
            common_tasks: "facial trait profile prediction from three binary traits",
        },
    ]
}

fn relabel(ds: &Dataset, attrs: &[&str]) -> Dataset {
    let composite = combine_attributes(ds, attrs).expect("fixture attributes exist");
    ds.with_labels(composite.labels.clone(), composite.num_classes, "composite_task")
}

/// Builds the full environment and serves every fixture target.
/// `budget_for` lets one service advertise a query budget.
pub fn build_fixture(root: &Path, budget_for: &[(&str, u64)]) -> Fixture {
    let env_dir = root.join("env");
    std::fs::create_dir_all(env_dir.join("data")).unwrap();
    let mut records: Vec<DatasetRecord> = Vec::new();
    let mut services = Vec::new();

    for plan in service_plans() {
        let rootset = generate_synthetic_dataset(&plan.spec).unwrap();
        let parts = split_dataset(
            &rootset,
            &[
                (TARGET_TRAIN_SPLIT, 0.25),
                ("target_eval", 0.25),
                ("assessment", 0.5),
            ],
            plan.spec.seed,
        )
        .unwrap();
        let shadow_rel = format!("data/{}_shadow.bin", plan.name);
        write_dataset(&env_dir.join(&shadow_rel), &parts[2]).unwrap();
        records.push(DatasetRecord {
            name: plan.name.into(),
            num_classes: plan.spec.n_classes,
            input_size: plan.spec.n_features,
            class_names: (0..plan.spec.n_classes).map(|i| format!("class_{i}")).collect(),
            path: shadow_rel,
            common_tasks: plan.common_tasks.into(),
            attributes: plan
                .spec
                .attributes
                .iter()
                .map(|a| AttributeInfo {
                    name: a.name.clone(),
                    num_classes: a.num_classes,
                })
                .collect(),
            extra: Default::default(),
        });

        let (train, eval) = match &plan.task_attributes {
            Some(attrs) => (relabel(&parts[0], attrs), relabel(&parts[1], attrs)),
            None => (parts[0].clone(), parts[1].clone()),
        };
        let class_count = train.n_classes;
        let service_dir = root.join("services").join(plan.name);
        let artifact = service_dir.join("target_model.bin");
        let record = default_model_records()
            .into_iter()
            .find(|r| r.name == "medium")
            .unwrap();
        service::train_target(
            &train,
            &record,
            &service::default_target_config(plan.spec.seed),
            &artifact,
        )
        .unwrap();
        let scoring_dir = service_dir.join("scoring");
        let scoring =
            service::write_scoring_bundle(&train, &eval, &scoring_dir, plan.spec.seed, 400)
                .unwrap();

        let budget = budget_for
            .iter()
            .find(|(name, _)| *name == plan.name)
            .map(|&(_, b)| b);
        let handle = serve(&ServiceConfig {
            artifact_path: artifact.clone(),
            expose_embedding: plan.expose_embedding,
            query_budget: budget,
            addr: "127.0.0.1:0".parse().unwrap(),
        })
        .unwrap();

        let info = TargetServiceInfo {
            task_description: plan.task_text.into(),
            predict_url: handle.predict_url(),
            embedding_url: plan.expose_embedding.then(|| handle.embedding_url()),
            input_format: format!("rows of {} real-valued features", plan.spec.n_features),
            output_format: format!("{class_count}-dim posteriors"),
            class_count: None,
            sensitive_attribute: plan.sensitive_attribute.map(str::to_string),
            query_budget: budget,
        };
        services.push(FixtureService {
            name: plan.name,
            info,
            scoring_dir,
            scoring,
            artifact,
            handle,
            expects_attribute_attack: plan.expose_embedding,
        });
    }

    save_dataset_registry(&env_dir.join("available_datasets.json"), &records).unwrap();
    save_model_registry(
        &env_dir.join("available_models.json"),
        &default_model_records(),
    )
    .unwrap();
    save_task_registry(&env_dir.join("available_tasks.json"), &default_manifests()).unwrap();

    Fixture {
        root: root.to_path_buf(),
        env: EnvPaths::under(&env_dir),
        services,
    }
}

/// One fixture per test process; building it trains four targets, so
/// sharing it keeps the suites fast.
pub fn shared_fixture() -> &'static Fixture {
    use std::sync::OnceLock;
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().to_path_buf();
        // Lives for the whole test process.
        std::mem::forget(dir);
        build_fixture(&path, &[])
    })
}

/// The dedicated membership-inference probe target: a small training half
/// deliberately overfit (or early-stopped) on a hard task.
pub struct MiaProbe {
    pub shadow: Dataset,
    pub members: Dataset,
    pub nonmembers: Dataset,
    pub model: nn::Model,
}

pub fn build_mia_probe(seed: u64, epochs: usize) -> MiaProbe {
    let spec = DatasetSpec {
        name: "mia_probe".into(),
        n_samples: 800,
        n_features: 12,
        n_classes: 4,
        attributes: vec![],
        noise_scale: 3.0,
        seed,
        common_tasks: None,
    };
    let root = generate_synthetic_dataset(&spec).unwrap();
    let parts = split_dataset(
        &root,
        &[
            (TARGET_TRAIN_SPLIT, 0.25),
            ("target_eval", 0.25),
            ("assessment", 0.5),
        ],
        seed,
    )
    .unwrap();
    let mut config = service::default_target_config(seed);
    config.epochs = epochs;
    let mut layer_sizes = vec![parts[0].n_features()];
    layer_sizes.extend_from_slice(&[64, 32]);
    layer_sizes.push(parts[0].n_classes);
    let model = nn::init_model(&layer_sizes, seed).unwrap();
    let batch = nn::Batch {
        inputs: parts[0].inputs.clone(),
        targets: nn::Targets::Classes(parts[0].labels.clone()),
    };
    let (model, _) = nn::train(model, &batch, &config).unwrap();
    MiaProbe {
        shadow: parts[2].clone(),
        members: parts[0].clone(),
        nonmembers: parts[1].clone(),
        model,
    }
}
