//! Synthetic datasets, splits, and the environment registries.
//!
//! The generator plants class-conditional Gaussian clusters for the task
//! label and, per attribute, a linear direction whose written level agrees
//! with the attribute label with probability `corr + (1 - corr)/k` (for
//! binary attributes that is `(1 + corr)/2`). Correlation 0 therefore means
//! exact independence and correlation 1 means a clean linear footprint —
//! which is the knob every attack's signal depends on.

mod container;
mod registry;

pub use container::{decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_FORMAT_VERSION};
pub use registry::{
    default_model_records, load_dataset_registry, load_model_registry, parse_dataset_registry,
    parse_model_registry, save_dataset_registry, save_model_registry, AttributeInfo,
    DatasetRecord, ModelRecord, REGISTRY_FORMAT_VERSION,
};

use crate::nn::Matrix;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("invalid split fractions: {0}")]
    BadFractions(String),
    #[error("unknown attribute: {0}")]
    UnknownAttribute(String),
    #[error("registry validation failed: {0}")]
    Validation(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("registry parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("dataset container error: {0}")]
    Container(String),
    #[error("search space overflow")]
    Overflow,
}

/// Spec for one synthetic attribute: `k`-class label planted along a random
/// direction with the given correlation strength in `[0, 1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub num_classes: usize,
    pub correlation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    #[serde(default)]
    pub attributes: Vec<AttributeSpec>,
    pub noise_scale: f64,
    pub seed: u64,
    /// Free-text task description advertised in the registry.
    #[serde(default)]
    pub common_tasks: Option<String>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.name.is_empty() {
            return Err(DataError::InvalidSpec("name must be non-empty".into()));
        }
        if self.n_samples == 0 {
            return Err(DataError::InvalidSpec("n_samples must be >= 1".into()));
        }
        if self.n_features == 0 {
            return Err(DataError::InvalidSpec("n_features must be >= 1".into()));
        }
        if self.n_classes < 2 {
            return Err(DataError::InvalidSpec("n_classes must be >= 2".into()));
        }
        if self.n_features < self.n_classes + self.attributes.len() + 1 {
            return Err(DataError::InvalidSpec(format!(
                "n_features {} too small; need > n_classes {} + attributes {} so attribute \
                 directions can be made orthogonal to the task signal",
                self.n_features,
                self.n_classes,
                self.attributes.len()
            )));
        }
        if !(self.noise_scale > 0.0) {
            return Err(DataError::InvalidSpec("noise_scale must be > 0".into()));
        }
        for a in &self.attributes {
            if a.num_classes < 2 {
                return Err(DataError::InvalidSpec(format!(
                    "attribute {} must have >= 2 classes",
                    a.name
                )));
            }
            if !(0.0..=1.0).contains(&a.correlation) {
                return Err(DataError::InvalidSpec(format!(
                    "attribute {} correlation {} outside [0, 1]",
                    a.name, a.correlation
                )));
            }
        }
        let mut names: Vec<&str> = self.attributes.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.attributes.len() {
            return Err(DataError::InvalidSpec("duplicate attribute names".into()));
        }
        Ok(())
    }
}

/// One attribute column of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeColumn {
    pub name: String,
    pub num_classes: usize,
    pub labels: Vec<usize>,
}

/// Where a dataset came from: the generating source plus every split it
/// has been through, with sample indices into the original generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub lineage: Vec<String>,
    pub original_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub attributes: Vec<AttributeColumn>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.inputs.cols()
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeColumn> {
        self.attributes.iter().find(|a| a.name == name)
    }

    /// Row subset with aligned labels, attributes, and lineage indices.
    pub fn select(&self, indices: &[usize], lineage_note: &str) -> Dataset {
        let mut lineage = self.provenance.lineage.clone();
        lineage.push(lineage_note.to_string());
        Dataset {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            attributes: self
                .attributes
                .iter()
                .map(|a| AttributeColumn {
                    name: a.name.clone(),
                    num_classes: a.num_classes,
                    labels: indices.iter().map(|&i| a.labels[i]).collect(),
                })
                .collect(),
            provenance: Provenance {
                source: self.provenance.source.clone(),
                lineage,
                original_indices: indices
                    .iter()
                    .map(|&i| self.provenance.original_indices[i])
                    .collect(),
            },
        }
    }

    /// Returns a copy whose task label is replaced by the given column.
    pub fn with_labels(&self, labels: Vec<usize>, n_classes: usize, note: &str) -> Dataset {
        assert_eq!(labels.len(), self.len());
        let mut out = self.clone();
        out.labels = labels;
        out.n_classes = n_classes;
        out.provenance.lineage.push(note.to_string());
        out
    }
}

const CENTER_SCALE: f64 = 1.5;
const ATTRIBUTE_SCALE: f64 = 2.0;

/// Generates a dataset from its spec; fully determined by `spec.seed`.
pub fn generate_synthetic_dataset(spec: &DatasetSpec) -> Result<Dataset, DataError> {
    generate_with_geometry(spec).map(|(ds, _, _)| ds)
}

/// Like [`generate_synthetic_dataset`] but also returns the class centers
/// and the planted attribute directions, for tests that probe the geometry.
pub fn generate_with_geometry(
    spec: &DatasetSpec,
) -> Result<(Dataset, Matrix, Vec<Vec<f64>>), DataError> {
    spec.validate()?;
    let mut rng = Rng::seed_from(spec.seed);
    let (n, d, c) = (spec.n_samples, spec.n_features, spec.n_classes);

    let mut centers = Matrix::zeros(c, d);
    for v in centers.data_mut() {
        *v = rng.normal() * CENTER_SCALE;
    }

    // Unit direction per attribute, orthogonalized against the class
    // centers and against each other so the planted footprint is not
    // confounded with the task signal.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for i in 0..c {
        push_orthonormal(&mut basis, centers.row(i).to_vec());
    }
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(spec.attributes.len());
    for _ in &spec.attributes {
        let dir = loop {
            let raw: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            if let Some(dir) = orthonormal_residual(&basis, raw) {
                break dir;
            }
        };
        push_orthonormal(&mut basis, dir.clone());
        directions.push(dir);
    }

    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let mut attributes: Vec<AttributeColumn> = spec
        .attributes
        .iter()
        .map(|a| AttributeColumn {
            name: a.name.clone(),
            num_classes: a.num_classes,
            labels: Vec::with_capacity(n),
        })
        .collect();

    let mut inputs = Matrix::zeros(n, d);
    for i in 0..n {
        let row = inputs.row_mut(i);
        let center = centers.row(labels[i]);
        for (j, v) in row.iter_mut().enumerate() {
            *v = center[j] + spec.noise_scale * rng.normal();
        }
        for (a, attr) in spec.attributes.iter().enumerate() {
            let k = attr.num_classes as u64;
            let label = rng.below(k) as usize;
            // Written level: the true label with probability corr, else a
            // fresh uniform draw, so corr = 0 is exact independence.
            let written = if rng.next_f64() < attr.correlation {
                label
            } else {
                rng.below(k) as usize
            };
            let level = if attr.num_classes == 1 {
                0.0
            } else {
                2.0 * written as f64 / (attr.num_classes - 1) as f64 - 1.0
            };
            for (j, v) in row.iter_mut().enumerate() {
                *v += ATTRIBUTE_SCALE * level * directions[a][j];
            }
            attributes[a].labels.push(label);
        }
    }

    let dataset = Dataset {
        inputs,
        labels,
        n_classes: c,
        attributes,
        provenance: Provenance {
            source: spec.name.clone(),
            lineage: vec!["root".into()],
            original_indices: (0..n).collect(),
        },
    };
    Ok((dataset, centers, directions))
}

/// Removes the component of `v` lying in the span of `basis` and
/// normalizes; `None` when the residual is numerically degenerate.
fn orthonormal_residual(basis: &[Vec<f64>], mut v: Vec<f64>) -> Option<Vec<f64>> {
    for b in basis {
        let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        for (x, y) in v.iter_mut().zip(b) {
            *x -= dot * y;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return None;
    }
    for x in &mut v {
        *x /= norm;
    }
    Some(v)
}

fn push_orthonormal(basis: &mut Vec<Vec<f64>>, v: Vec<f64>) {
    if let Some(unit) = orthonormal_residual(basis, v) {
        basis.push(unit);
    }
}

/// Splits into named disjoint partitions whose union is the dataset.
/// Fractions must sum to 1 within 1e-9; sizes come from rounded cumulative
/// boundaries so nothing is lost or duplicated.
pub fn split_dataset(
    dataset: &Dataset,
    parts: &[(&str, f64)],
    seed: u64,
) -> Result<Vec<Dataset>, DataError> {
    if parts.is_empty() {
        return Err(DataError::BadFractions("no partitions requested".into()));
    }
    let sum: f64 = parts.iter().map(|(_, f)| *f).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(DataError::BadFractions(format!(
            "fractions sum to {sum}, expected 1"
        )));
    }
    if parts.iter().any(|(_, f)| *f < 0.0) {
        return Err(DataError::BadFractions("negative fraction".into()));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    Rng::seed_from(seed).shuffle(&mut order);

    let mut out = Vec::with_capacity(parts.len());
    let mut cum = 0.0;
    let mut start = 0usize;
    for (i, (name, frac)) in parts.iter().enumerate() {
        cum += frac;
        let end = if i == parts.len() - 1 {
            n
        } else {
            (cum * n as f64).round() as usize
        };
        let indices = &order[start..end];
        out.push(dataset.select(indices, name));
        start = end;
    }
    Ok(out)
}

/// Result of combining attributes into one task label.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeLabel {
    /// Attribute names with their class counts, most significant first.
    pub radices: Vec<(String, usize)>,
    pub num_classes: usize,
    pub labels: Vec<usize>,
}

impl CompositeLabel {
    /// Decodes a composite code back to constituent attribute values, in
    /// the order of `radices`.
    pub fn decode(&self, code: usize) -> Vec<usize> {
        let mut out = vec![0; self.radices.len()];
        let mut rest = code;
        for (slot, (_, k)) in out.iter_mut().zip(&self.radices).rev() {
            *slot = rest % k;
            rest /= k;
        }
        out
    }
}

/// Mixed-radix combination of attribute labels into a single task label;
/// the first listed attribute is the most significant digit.
pub fn combine_attributes(dataset: &Dataset, attr_names: &[&str]) -> Result<CompositeLabel, DataError> {
    if attr_names.is_empty() {
        return Err(DataError::UnknownAttribute("empty attribute list".into()));
    }
    let mut columns = Vec::with_capacity(attr_names.len());
    for name in attr_names {
        let col = dataset
            .attribute(name)
            .ok_or_else(|| DataError::UnknownAttribute((*name).to_string()))?;
        columns.push(col);
    }
    let num_classes = columns.iter().map(|c| c.num_classes).product();
    let mut labels = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let mut code = 0usize;
        for col in &columns {
            code = code * col.num_classes + col.labels[i];
        }
        labels.push(code);
    }
    Ok(CompositeLabel {
        radices: columns
            .iter()
            .map(|c| (c.name.clone(), c.num_classes))
            .collect(),
        num_classes,
        labels,
    })
}

/// Size of the assessment configuration space:
/// `sum_i L(D_i) * |M| * prod_j k_j`, where a dataset contributes its task
/// label plus one label per annotated attribute.
pub fn search_space_size(
    datasets: &[DatasetRecord],
    models: &[ModelRecord],
    candidate_counts: &[u64],
) -> Result<u128, DataError> {
    let labels: u128 = datasets
        .iter()
        .map(|d| 1u128 + d.attributes.len() as u128)
        .sum();
    let mut product: u128 = models.len() as u128;
    for &k in candidate_counts {
        product = product.checked_mul(k as u128).ok_or(DataError::Overflow)?;
    }
    labels.checked_mul(product).ok_or(DataError::Overflow)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn small_spec() -> DatasetSpec {
        DatasetSpec {
            name: "synth_small".into(),
            n_samples: 240,
            n_features: 8,
            n_classes: 4,
            attributes: vec![
                AttributeSpec {
                    name: "attr_a".into(),
                    num_classes: 2,
                    correlation: 0.9,
                },
                AttributeSpec {
                    name: "attr_b".into(),
                    num_classes: 2,
                    correlation: 0.0,
                },
            ],
            noise_scale: 1.0,
            seed: 11,
            common_tasks: None,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let a = generate_synthetic_dataset(&spec).unwrap();
        let b = generate_synthetic_dataset(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generation_rejects_bad_specs() {
        let mut spec = small_spec();
        spec.n_classes = 1;
        assert!(generate_synthetic_dataset(&spec).is_err());
        let mut spec = small_spec();
        spec.attributes[0].correlation = 1.5;
        assert!(generate_synthetic_dataset(&spec).is_err());
        let mut spec = small_spec();
        spec.noise_scale = 0.0;
        assert!(generate_synthetic_dataset(&spec).is_err());
    }

    #[test]
    fn correlated_attribute_is_linearly_visible_and_uncorrelated_is_not() {
        // Project onto the planted direction: with correlation 1 and small
        // noise the sign tracks the label; with correlation 0 it cannot.
        let mut spec = small_spec();
        spec.n_samples = 2000;
        spec.attributes[0].correlation = 1.0;
        spec.noise_scale = 0.1;
        let (ds, _, dirs) = generate_with_geometry(&spec).unwrap();
        for (attr_idx, expect_high) in [(0usize, true), (1usize, false)] {
            let col = &ds.attributes[attr_idx];
            let dir = &dirs[attr_idx];
            let mut correct = 0usize;
            for i in 0..ds.len() {
                let proj: f64 = ds.inputs.row(i).iter().zip(dir).map(|(x, w)| x * w).sum();
                if usize::from(proj > 0.0) == col.labels[i] {
                    correct += 1;
                }
            }
            let acc = correct as f64 / ds.len() as f64;
            if expect_high {
                assert!(acc > 0.999, "separable attribute acc {acc}");
            } else {
                assert!((acc - 0.5).abs() < 0.06, "independent attribute acc {acc}");
            }
        }
    }

    #[test]
    fn split_halves_are_disjoint_and_exhaustive() {
        let ds = generate_synthetic_dataset(&small_spec()).unwrap();
        let mut spec = small_spec();
        spec.n_samples = 1000;
        let ds1000 = generate_synthetic_dataset(&spec).unwrap();
        let parts = split_dataset(&ds1000, &[("target", 0.5), ("assessment", 0.5)], 3).unwrap();
        assert_eq!(parts[0].len(), 500);
        assert_eq!(parts[1].len(), 500);
        let mut seen: Vec<usize> = parts
            .iter()
            .flat_map(|p| p.provenance.original_indices.iter().copied())
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..1000).collect::<Vec<_>>());
        // Lineage recorded.
        assert_eq!(parts[0].provenance.lineage, vec!["root", "target"]);
        drop(ds);
    }

    #[test]
    fn split_union_reindexes_to_original() {
        let ds = generate_synthetic_dataset(&small_spec()).unwrap();
        let parts = split_dataset(&ds, &[("a", 0.3), ("b", 0.7)], 9).unwrap();
        for part in &parts {
            for (local, &orig) in part.provenance.original_indices.iter().enumerate() {
                assert_eq!(part.inputs.row(local), ds.inputs.row(orig));
                assert_eq!(part.labels[local], ds.labels[orig]);
            }
        }
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let ds = generate_synthetic_dataset(&small_spec()).unwrap();
        assert!(split_dataset(&ds, &[("a", 0.7), ("b", 0.7)], 0).is_err());
        assert!(split_dataset(&ds, &[], 0).is_err());
    }

    #[test]
    fn three_binary_attributes_give_eight_classes() {
        let mut spec = small_spec();
        spec.attributes = vec![
            AttributeSpec { name: "x".into(), num_classes: 2, correlation: 0.5 },
            AttributeSpec { name: "y".into(), num_classes: 2, correlation: 0.5 },
            AttributeSpec { name: "z".into(), num_classes: 2, correlation: 0.5 },
        ];
        let ds = generate_synthetic_dataset(&spec).unwrap();
        let composite = combine_attributes(&ds, &["x", "y", "z"]).unwrap();
        assert_eq!(composite.num_classes, 8);
        // Brute-force decode over all 8 codes: x is the most significant.
        for code in 0..8 {
            let vals = composite.decode(code);
            assert_eq!(vals, vec![code / 4, (code / 2) % 2, code % 2]);
        }
        // Every sample decodes back to its constituent labels.
        for i in 0..ds.len() {
            let vals = composite.decode(composite.labels[i]);
            assert_eq!(vals[0], ds.attributes[0].labels[i]);
            assert_eq!(vals[1], ds.attributes[1].labels[i]);
            assert_eq!(vals[2], ds.attributes[2].labels[i]);
        }
    }

    #[test]
    fn single_attribute_is_identity_relabeling() {
        let ds = generate_synthetic_dataset(&small_spec()).unwrap();
        let composite = combine_attributes(&ds, &["attr_a"]).unwrap();
        assert_eq!(composite.num_classes, 2);
        assert_eq!(composite.labels, ds.attributes[0].labels);
    }

    #[test]
    fn combine_rejects_unknown_names() {
        let ds = generate_synthetic_dataset(&small_spec()).unwrap();
        assert!(matches!(
            combine_attributes(&ds, &["nope"]),
            Err(DataError::UnknownAttribute(_))
        ));
    }

    #[test]
    fn search_space_matches_hand_multiplication() {
        let mk_ds = |name: &str, attrs: usize| DatasetRecord {
            name: name.into(),
            num_classes: 2,
            input_size: 4,
            class_names: vec!["a".into(), "b".into()],
            path: "unused.bin".into(),
            common_tasks: String::new(),
            attributes: (0..attrs)
                .map(|i| AttributeInfo {
                    name: format!("attr{i}"),
                    num_classes: 2,
                })
                .collect(),
            extra: Default::default(),
        };
        let mk_model = |name: &str| ModelRecord {
            name: name.into(),
            hidden_sizes: vec![8],
            capacity_rank: 1,
            note: String::new(),
            overfit_risk: false,
            extra: Default::default(),
        };
        // Two datasets with 3 and 5 labels (task + attributes), 4 models,
        // parameter candidate counts (3, 2): (3 + 5) * 4 * 6 = 192.
        let datasets = vec![mk_ds("d1", 2), mk_ds("d2", 4)];
        let models: Vec<ModelRecord> = (0..4).map(|i| mk_model(&format!("m{i}"))).collect();
        assert_eq!(
            search_space_size(&datasets, &models, &[3, 2]).unwrap(),
            192
        );
        // Single dataset with just its task label, one model, no params.
        assert_eq!(
            search_space_size(&[mk_ds("d", 0)], &[mk_model("m")], &[]).unwrap(),
            1
        );
        // Empty model registry.
        assert_eq!(search_space_size(&[mk_ds("d", 3)], &[], &[2]).unwrap(), 0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn splits_are_always_disjoint_partitions(
                n in 2usize..400,
                frac in 0.05f64..0.95,
                seed in 0u64..1000,
            ) {
                let spec = DatasetSpec {
                    name: "p".into(),
                    n_samples: n,
                    n_features: 3,
                    n_classes: 2,
                    attributes: vec![],
                    noise_scale: 1.0,
                    seed: 1,
                    common_tasks: None,
                };
                let ds = generate_synthetic_dataset(&spec).unwrap();
                let parts = split_dataset(&ds, &[("a", frac), ("b", 1.0 - frac)], seed).unwrap();
                let mut all: Vec<usize> = parts
                    .iter()
                    .flat_map(|p| p.provenance.original_indices.iter().copied())
                    .collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            }

            #[test]
            fn mixed_radix_round_trips(
                a in 0usize..3, b in 0usize..4, c in 0usize..2
            ) {
                let code = (a * 4 + b) * 2 + c;
                let composite = CompositeLabel {
                    radices: vec![("a".into(), 3), ("b".into(), 4), ("c".into(), 2)],
                    num_classes: 24,
                    labels: vec![],
                };
                prop_assert_eq!(composite.decode(code), vec![a, b, c]);
            }
        }
    }

    #[test]
    fn attribute_correlation_is_monotone_in_mutual_information() {
        // Empirical MI between the sign of the projection onto the planted
        // direction and the attribute label, rank-tested over 5 levels.
        let levels = [0.0, 0.25, 0.5, 0.75, 1.0];
        let mut mis = Vec::new();
        for (i, &corr) in levels.iter().enumerate() {
            let mut mi_acc = 0.0;
            for seed in 0..3u64 {
                let spec = DatasetSpec {
                    name: format!("mono{i}"),
                    n_samples: 3000,
                    n_features: 6,
                    n_classes: 2,
                    attributes: vec![AttributeSpec {
                        name: "attr".into(),
                        num_classes: 2,
                        correlation: corr,
                    }],
                    noise_scale: 0.4,
                    seed: 100 + seed,
                    common_tasks: None,
                };
                let (ds, _, dirs) = generate_with_geometry(&spec).unwrap();
                let dir = &dirs[0];
                let mut counts = [[0f64; 2]; 2];
                for r in 0..ds.len() {
                    let proj: f64 = ds.inputs.row(r).iter().zip(dir).map(|(x, w)| x * w).sum();
                    let s = usize::from(proj > 0.0);
                    counts[s][ds.attributes[0].labels[r]] += 1.0;
                }
                let n = ds.len() as f64;
                let mut mi = 0.0;
                for s in 0..2 {
                    for l in 0..2 {
                        let p = counts[s][l] / n;
                        if p > 0.0 {
                            let ps = (counts[s][0] + counts[s][1]) / n;
                            let pl = (counts[0][l] + counts[1][l]) / n;
                            mi += p * (p / (ps * pl)).ln();
                        }
                    }
                }
                mi_acc += mi;
            }
            mis.push(mi_acc / 3.0);
        }
        for w in mis.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-3,
                "mutual information not monotone: {mis:?}"
            );
        }
    }
}
