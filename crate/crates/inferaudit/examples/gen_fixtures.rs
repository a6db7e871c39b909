//! Regenerates the checked-in fixtures: the sample environment registry
//! under `fixtures/sample_env/` and the fuzz corpus seeds under
//! `fuzz/corpus/<target>/`.
//!
//! ```text
//! cargo run -p inferaudit --example gen_fixtures
//! ```

use inferaudit::data::{
    encode_dataset, generate_synthetic_dataset, save_dataset_registry, save_model_registry,
    AttributeInfo, AttributeSpec, DatasetRecord, DatasetSpec,
};
use inferaudit::nn;
use std::fs;
use std::path::{Path, PathBuf};

fn crate_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn small_dataset(name: &str, classes: usize, attrs: &[(&str, f64)], seed: u64) -> DatasetSpec {
    DatasetSpec {
        name: name.into(),
        n_samples: 24,
        n_features: 8,
        n_classes: classes,
        attributes: attrs
            .iter()
            .map(|(n, corr)| AttributeSpec {
                name: (*n).into(),
                num_classes: 2,
                correlation: *corr,
            })
            .collect(),
        noise_scale: 1.5,
        seed,
        common_tasks: Some(format!("sample {classes}-way cluster classification")),
    }
}

fn write_sample_env(root: &Path) {
    let env_dir = root.join("fixtures/sample_env");
    fs::create_dir_all(env_dir.join("data")).unwrap();
    let specs = [
        small_dataset("sample_two", 2, &[], 1),
        small_dataset("sample_three", 3, &[("tone", 0.8)], 2),
        small_dataset("sample_four", 4, &[("tone", 0.8), ("grain", 0.0)], 3),
        small_dataset("sample_five", 5, &[], 4),
    ];
    let mut records = Vec::new();
    for spec in &specs {
        let ds = generate_synthetic_dataset(spec).unwrap();
        let rel = format!("data/{}.bin", spec.name);
        fs::write(env_dir.join(&rel), encode_dataset(&ds)).unwrap();
        records.push(DatasetRecord {
            name: spec.name.clone(),
            num_classes: spec.n_classes,
            input_size: spec.n_features,
            class_names: (0..spec.n_classes).map(|i| format!("class_{i}")).collect(),
            path: rel,
            common_tasks: spec.common_tasks.clone().unwrap_or_default(),
            attributes: spec
                .attributes
                .iter()
                .map(|a| AttributeInfo {
                    name: a.name.clone(),
                    num_classes: a.num_classes,
                })
                .collect(),
            extra: Default::default(),
        });
    }
    save_dataset_registry(&env_dir.join("available_datasets.json"), &records).unwrap();
    save_model_registry(
        &env_dir.join("available_models.json"),
        &inferaudit::data::default_model_records(),
    )
    .unwrap();
    println!("sample env written to {}", env_dir.display());
}

fn seed(root: &Path, target: &str, name: &str, bytes: &[u8]) {
    let dir = root.join("fuzz/corpus").join(target);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join(name), bytes).unwrap();
}

fn write_fuzz_corpus(root: &Path) {
    let model = nn::init_model(&[3, 4, 2], 1).unwrap();
    seed(
        root,
        "model_artifact",
        "small_model",
        &nn::encode_model(&model, r#"{"origin":"seed"}"#),
    );

    let ds = generate_synthetic_dataset(&small_dataset("seed", 2, &[("tone", 0.5)], 9)).unwrap();
    seed(root, "dataset_container", "small_dataset", &encode_dataset(&ds));

    seed(
        root,
        "dataset_registry",
        "two_records",
        br#"{"format_version":1,"datasets":[{"name":"a","num_classes":2,"input_size":4,"class_names":["x","y"],"path":"a.bin","common_tasks":"demo","attributes":[{"name":"tone","num_classes":2}]},{"name":"b","num_classes":3,"input_size":4,"class_names":[],"path":"b.bin","common_tasks":""}]}"#,
    );
    seed(
        root,
        "model_registry",
        "three_tiers",
        br#"{"format_version":1,"models":[{"name":"small","hidden_sizes":[16],"capacity_rank":1,"note":""},{"name":"medium","hidden_sizes":[64,32],"capacity_rank":2,"note":""},{"name":"large","hidden_sizes":[256,128],"capacity_rank":3,"note":"","overfit_risk":true}]}"#,
    );
    seed(
        root,
        "plan_text",
        "well_formed",
        b"Reflection: the registry was listed\nPlan: choose the dataset\nImportant Information:\n- shadow_dataset: sample_two\nAction: Choose Shadow Dataset\nAction Input: {\"file\": \"/env/available_datasets.json\"}\n",
    );
    seed(
        root,
        "wire_inputs",
        "two_rows",
        br#"{"inputs": [[0.25, -1.5, 3.0], [0.0, 0.125, -7.25]]}"#,
    );
    let trace_seed = concat!(
        r#"{"kind":"header","format_version":1,"run_id":"run-1","agent_id":"controller","attack":null,"initial_instruction":"role: controller","action_space":["Monitor Attacks"]}"#,
        "\n",
        r#"{"kind":"step","agent_id":"controller","step":1,"t_start_ms":0,"t_end_ms":1,"reflection":"r","plan":"p","important_information":[],"action":"Monitor Attacks","action_input":{},"observation_digest":"statuses: none","observation_ref":"observations/controller/step_001.txt","input_tokens":10,"output_tokens":5,"meta":{}}"#,
        "\n",
        r#"{"kind":"end","agent_id":"controller","status":"completed","steps":1}"#,
        "\n",
    );
    seed(root, "trace_records", "one_step", trace_seed.as_bytes());
    seed(
        root,
        "chat_completion",
        "with_usage",
        br#"{"choices":[{"message":{"content":"Reflection: ok"}}],"usage":{"prompt_tokens":42,"completion_tokens":7}}"#,
    );
    println!("fuzz corpus written under {}", root.join("fuzz/corpus").display());
}

fn main() {
    let root = crate_root();
    write_sample_env(&root);
    write_fuzz_corpus(&root);
}
