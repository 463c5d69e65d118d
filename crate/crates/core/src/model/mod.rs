//! Metatask data model.
//!
//! A [`Metatask`] bundles one OpenML classification task: its dataset, the
//! task's fold assignment and the stored predictions of the top-n base
//! models. Everything downstream (curation, simulation, reporting) consumes
//! metatasks and never trains a base model.

mod io;

use std::collections::{BTreeMap, HashSet};

use chrono::{DateTime, Utc};
use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::parser::DiscrepancyClass;

pub use io::{load_metatask, save_metatask};

/// Index into a metatask's `class_labels`.
pub type ClassIdx = usize;

/// Tolerance used when validating that confidence rows are distributions.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid metatask: {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("{}{}: {message}", file.display(), row.map(|r| format!(" (row {r})")).unwrap_or_default())]
    Parse {
        file: std::path::PathBuf,
        row: Option<usize>,
        message: String,
    },
    #[error("index {index} out of range for {len} instances")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("duplicate index {0} in slice")]
    DuplicateIndex(usize),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Category list in declaration order; empty for numeric features.
    #[serde(default)]
    pub categories: Vec<String>,
    pub allows_missing: bool,
}

impl FeatureSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Numeric,
            categories: Vec::new(),
            allows_missing: false,
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
            allows_missing: false,
        }
    }

    pub fn with_missing(mut self, allows_missing: bool) -> Self {
        self.allows_missing = allows_missing;
        self
    }
}

/// One feature value of one instance.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Missing,
    Number(f64),
    Text(String),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }
}

/// One OpenML run turned into a base model of the metatask.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseModelRun {
    pub run_id: u64,
    pub flow_id: u64,
    pub flow_name: String,
    pub setup_id: u64,
    /// Score of the ranking metric as reported by OpenML.
    pub metric_score: f64,
    /// Predicted class per instance (instance order of the metatask).
    pub predictions: Vec<ClassIdx>,
    /// `n × C` confidences, columns in `class_labels` order.
    pub confidences: Array2<f64>,
    pub discrepancy: Vec<DiscrepancyClass>,
    /// Set when any instance carries an unexplainable discrepancy.
    pub corrupted: bool,
}

impl BaseModelRun {
    /// True when at least one row was adjusted by the repair step.
    pub fn repaired(&self) -> bool {
        self.discrepancy.iter().any(|d| d.is_repaired())
    }

    pub fn discrepancy_counts(&self) -> BTreeMap<DiscrepancyClass, usize> {
        let mut counts = BTreeMap::new();
        for d in &self.discrepancy {
            *counts.entry(*d).or_insert(0) += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub tool_version: String,
    pub fetch_timestamp: DateTime<Utc>,
    pub ranking_metric: String,
    pub top_n: usize,
    #[serde(default)]
    pub source_suite: Option<u64>,
    /// SHA-256 of each raw prediction file, keyed by run id.
    #[serde(default)]
    pub prediction_sha256: BTreeMap<u64, String>,
}

impl BuildInfo {
    /// Build info stamped with the current time, or with
    /// `SOURCE_DATE_EPOCH` when that is set, for reproducible builds.
    pub fn new(ranking_metric: impl Into<String>, top_n: usize) -> Self {
        let fetch_timestamp = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.trim().parse::<i64>().ok())
            .and_then(|secs| DateTime::from_timestamp(secs, 0))
            .unwrap_or_else(Utc::now);
        BuildInfo {
            tool_version: crate::TOOL_VERSION.to_string(),
            fetch_timestamp,
            ranking_metric: ranking_metric.into(),
            top_n,
            source_suite: None,
            prediction_sha256: BTreeMap::new(),
        }
    }
}

/// Reproducible recipe for a curated benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub task_ids: Vec<u64>,
    pub metric: String,
    pub gap_threshold: f64,
    pub min_base_models: usize,
    pub drop_worse_than_random: bool,
    pub drop_corrupted: bool,
    pub split_ratio: f64,
    pub seed: u64,
    pub tool_version: String,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            task_ids: Vec::new(),
            metric: "area_under_roc_curve".to_string(),
            gap_threshold: 0.05,
            min_base_models: 10,
            drop_worse_than_random: true,
            drop_corrupted: true,
            split_ratio: 0.5,
            seed: 0,
            tool_version: crate::TOOL_VERSION.to_string(),
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(ModelError::invalid(
                "split_ratio",
                format!("{} not in (0, 1)", self.split_ratio),
            ));
        }
        if self.gap_threshold.is_nan() || self.gap_threshold < 0.0 {
            return Err(ModelError::invalid(
                "gap_threshold",
                format!("{} is negative", self.gap_threshold),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metatask {
    pub task_id: u64,
    pub dataset_name: String,
    pub target_name: String,
    pub class_labels: Vec<String>,
    pub features: Vec<FeatureSpec>,
    /// Row-major feature table in OpenML row order.
    pub instances: Vec<Vec<Cell>>,
    pub ground_truth: Vec<ClassIdx>,
    pub fold_of_instance: Vec<usize>,
    pub n_folds: usize,
    pub base_models: Vec<BaseModelRun>,
    pub build_info: BuildInfo,
}

impl Metatask {
    pub fn n_instances(&self) -> usize {
        self.ground_truth.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn class_index(&self, label: &str) -> Option<ClassIdx> {
        self.class_labels.iter().position(|l| l == label)
    }

    /// Test-set instance indices of `fold`, ascending.
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        self.fold_of_instance
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks every structural invariant and names the offending field.
    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.instances.len();
        let n_classes = self.class_labels.len();
        if n_classes == 0 {
            return Err(ModelError::invalid("class_labels", "empty"));
        }
        let mut seen = HashSet::new();
        for label in &self.class_labels {
            if !seen.insert(label.as_str()) {
                return Err(ModelError::invalid(
                    "class_labels",
                    format!("duplicate label {label:?}"),
                ));
            }
        }
        let mut names = HashSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(ModelError::invalid(
                    "feature_schema",
                    format!("duplicate feature name {:?}", f.name),
                ));
            }
            if f.kind == FeatureKind::Categorical && f.categories.is_empty() {
                return Err(ModelError::invalid(
                    "feature_schema",
                    format!("categorical feature {:?} has no categories", f.name),
                ));
            }
        }
        if self.ground_truth.len() != n {
            return Err(ModelError::invalid(
                "ground_truth",
                format!("length {} != {n} instances", self.ground_truth.len()),
            ));
        }
        if self.fold_of_instance.len() != n {
            return Err(ModelError::invalid(
                "fold_of_instance",
                format!("length {} != {n} instances", self.fold_of_instance.len()),
            ));
        }
        for (i, row) in self.instances.iter().enumerate() {
            if row.len() != self.features.len() {
                return Err(ModelError::invalid(
                    "instances",
                    format!(
                        "row {i} has {} cells, schema has {}",
                        row.len(),
                        self.features.len()
                    ),
                ));
            }
        }
        if let Some(i) = self.ground_truth.iter().position(|&c| c >= n_classes) {
            return Err(ModelError::invalid(
                "ground_truth",
                format!("instance {i} has class index outside class_labels"),
            ));
        }
        if self.n_folds == 0 {
            return Err(ModelError::invalid("n_folds", "must be positive"));
        }
        if let Some(i) = self
            .fold_of_instance
            .iter()
            .position(|&f| f >= self.n_folds)
        {
            return Err(ModelError::invalid(
                "fold_of_instance",
                format!(
                    "instance {i} assigned to fold outside [0, {})",
                    self.n_folds
                ),
            ));
        }
        if self.build_info.top_n == 0 {
            return Err(ModelError::invalid(
                "build_info.top_n",
                "must be at least 1",
            ));
        }
        if self.base_models.is_empty() {
            return Err(ModelError::invalid("base_models", "roster is empty"));
        }
        let mut run_ids = HashSet::new();
        for bm in &self.base_models {
            let field = |what: &str| format!("base_models[run {}].{what}", bm.run_id);
            if !run_ids.insert(bm.run_id) {
                return Err(ModelError::invalid(field("run_id"), "duplicate run id"));
            }
            if bm.predictions.len() != n {
                return Err(ModelError::invalid(
                    field("predictions"),
                    format!("covers {} instances, expected {n}", bm.predictions.len()),
                ));
            }
            if bm.confidences.dim() != (n, n_classes) {
                return Err(ModelError::invalid(
                    field("confidences"),
                    format!(
                        "shape {:?}, expected ({n}, {n_classes})",
                        bm.confidences.dim()
                    ),
                ));
            }
            if bm.discrepancy.len() != n {
                return Err(ModelError::invalid(
                    field("discrepancy"),
                    format!("length {}, expected {n}", bm.discrepancy.len()),
                ));
            }
            if let Some(i) = bm.predictions.iter().position(|&c| c >= n_classes) {
                return Err(ModelError::invalid(
                    field("predictions"),
                    format!("instance {i} predicts a label outside class_labels"),
                ));
            }
            for (i, row) in bm.confidences.axis_iter(Axis(0)).enumerate() {
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::invalid(
                        field("confidences"),
                        format!("instance {i} has a non-finite confidence"),
                    ));
                }
                if bm.discrepancy[i] == DiscrepancyClass::Unexplainable {
                    continue;
                }
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(ModelError::invalid(
                        field("confidences"),
                        format!("instance {i} sums to {sum}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Aligned prediction data for `indices`, in the given order.
    pub fn slice(&self, indices: &[usize]) -> Result<PredictionMatrix, ModelError> {
        self.slice_with(indices, false)
    }

    /// Like [`Metatask::slice`], optionally leaving out corrupted base models.
    pub fn slice_with(
        &self,
        indices: &[usize],
        drop_corrupted: bool,
    ) -> Result<PredictionMatrix, ModelError> {
        let n = self.n_instances();
        let mut seen = HashSet::with_capacity(indices.len());
        for &i in indices {
            if i >= n {
                return Err(ModelError::IndexOutOfRange { index: i, len: n });
            }
            if !seen.insert(i) {
                return Err(ModelError::DuplicateIndex(i));
            }
        }
        let models: Vec<&BaseModelRun> = self
            .base_models
            .iter()
            .filter(|bm| !(drop_corrupted && bm.corrupted))
            .collect();
        let k = indices.len();
        let b = models.len();
        let c = self.n_classes();
        let mut predictions = Array2::zeros((k, b));
        let mut confidences = Array3::zeros((k, b, c));
        for (row, &i) in indices.iter().enumerate() {
            for (m, bm) in models.iter().enumerate() {
                predictions[[row, m]] = bm.predictions[i];
                confidences
                    .slice_mut(ndarray::s![row, m, ..])
                    .assign(&bm.confidences.row(i));
            }
        }
        Ok(PredictionMatrix {
            n_classes: c,
            instance_indices: indices.to_vec(),
            run_ids: models.iter().map(|bm| bm.run_id).collect(),
            ground_truth: indices.iter().map(|&i| self.ground_truth[i]).collect(),
            predictions,
            confidences,
            features: indices.iter().map(|&i| self.instances[i].clone()).collect(),
        })
    }

    /// Prediction data of every instance in row order.
    pub fn full_matrix(&self) -> PredictionMatrix {
        let all: Vec<usize> = (0..self.n_instances()).collect();
        self.slice(&all).expect("full index range is valid")
    }

    /// Copy of this metatask keeping only base models accepted by `keep`.
    pub fn retain_base_models(&self, mut keep: impl FnMut(&BaseModelRun) -> bool) -> Metatask {
        let mut out = self.clone();
        out.base_models.retain(|bm| keep(bm));
        out
    }
}

/// Prediction data of a set of instances: `k` instances, `B` base models and
/// `C` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub n_classes: usize,
    pub instance_indices: Vec<usize>,
    /// Roster identity, used to reject fit/predict mismatches.
    pub run_ids: Vec<u64>,
    pub ground_truth: Vec<ClassIdx>,
    /// `k × B`
    pub predictions: Array2<ClassIdx>,
    /// `k × B × C`
    pub confidences: Array3<f64>,
    pub features: Vec<Vec<Cell>>,
}

impl PredictionMatrix {
    /// Builds a matrix from per-model prediction and confidence tables.
    /// Mostly useful for synthetic data; features are left empty.
    pub fn from_models(
        ground_truth: Vec<ClassIdx>,
        predictions: Vec<Vec<ClassIdx>>,
        confidences: Vec<Array2<f64>>,
        n_classes: usize,
    ) -> Self {
        let k = ground_truth.len();
        let b = predictions.len();
        assert_eq!(confidences.len(), b, "one confidence table per model");
        let mut pred = Array2::zeros((k, b));
        let mut conf = Array3::zeros((k, b, n_classes));
        for m in 0..b {
            assert_eq!(predictions[m].len(), k);
            assert_eq!(confidences[m].dim(), (k, n_classes));
            for i in 0..k {
                pred[[i, m]] = predictions[m][i];
                conf.slice_mut(ndarray::s![i, m, ..])
                    .assign(&confidences[m].row(i));
            }
        }
        PredictionMatrix {
            n_classes,
            instance_indices: (0..k).collect(),
            run_ids: (0..b as u64).collect(),
            ground_truth,
            predictions: pred,
            confidences: conf,
            features: vec![Vec::new(); k],
        }
    }

    pub fn n_instances(&self) -> usize {
        self.ground_truth.len()
    }

    pub fn n_models(&self) -> usize {
        self.predictions.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.n_instances() == 0
    }

    /// `k × C` confidences of base model `b`.
    pub fn model_confidences(&self, b: usize) -> ArrayView2<'_, f64> {
        self.confidences.index_axis(Axis(1), b)
    }

    pub fn model_predictions(&self, b: usize) -> ArrayView1<'_, ClassIdx> {
        self.predictions.column(b)
    }

    /// Matrix restricted to the given positions (rows of this matrix).
    pub fn select_rows(&self, rows: &[usize]) -> PredictionMatrix {
        PredictionMatrix {
            n_classes: self.n_classes,
            instance_indices: rows.iter().map(|&r| self.instance_indices[r]).collect(),
            run_ids: self.run_ids.clone(),
            ground_truth: rows.iter().map(|&r| self.ground_truth[r]).collect(),
            predictions: self.predictions.select(Axis(0), rows),
            confidences: self.confidences.select(Axis(0), rows),
            features: rows.iter().map(|&r| self.features[r].clone()).collect(),
        }
    }

    /// Matrix restricted to the given base models, in the given order.
    pub fn select_models(&self, models: &[usize]) -> PredictionMatrix {
        PredictionMatrix {
            n_classes: self.n_classes,
            instance_indices: self.instance_indices.clone(),
            run_ids: models.iter().map(|&m| self.run_ids[m]).collect(),
            ground_truth: self.ground_truth.clone(),
            predictions: self.predictions.select(Axis(1), models),
            confidences: self.confidences.select(Axis(1), models),
            features: self.features.clone(),
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn tiny_metatask() -> Metatask {
        let conf_a = array![[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]];
        let conf_b = array![[0.4, 0.6], [0.1, 0.9], [0.7, 0.3], [0.5, 0.5]];
        let model = |run_id: u64, conf: Array2<f64>| BaseModelRun {
            run_id,
            flow_id: run_id * 10,
            flow_name: format!("flow-{run_id}"),
            setup_id: run_id * 100,
            metric_score: 0.8,
            predictions: conf
                .axis_iter(Axis(0))
                .map(|r| if r[1] > r[0] { 1 } else { 0 })
                .collect(),
            confidences: conf,
            discrepancy: vec![DiscrepancyClass::Consistent; 4],
            corrupted: false,
        };
        Metatask {
            task_id: 1,
            dataset_name: "tiny".into(),
            target_name: "class".into(),
            class_labels: vec!["no".into(), "yes".into()],
            features: vec![
                FeatureSpec::numeric("x").with_missing(true),
                FeatureSpec::categorical("color", ["red", "blue"]),
            ],
            instances: vec![
                vec![Cell::Number(1.5), Cell::Text("red".into())],
                vec![Cell::Missing, Cell::Text("blue".into())],
                vec![Cell::Number(-2.0), Cell::Text("red".into())],
                vec![Cell::Number(0.25), Cell::Text("blue".into())],
            ],
            ground_truth: vec![0, 1, 0, 1],
            fold_of_instance: vec![0, 1, 0, 1],
            n_folds: 2,
            base_models: vec![model(11, conf_a), model(12, conf_b)],
            build_info: BuildInfo::new("area_under_roc_curve", 50),
        }
    }

    #[test]
    fn tiny_is_valid() {
        tiny_metatask().validate().unwrap();
    }

    #[test]
    fn empty_roster_is_rejected() {
        let mut m = tiny_metatask();
        m.base_models.clear();
        let err = m.validate().unwrap_err();
        assert!(err.to_string().contains("base_models"), "{err}");
    }

    #[test]
    fn duplicate_run_ids_rejected() {
        let mut m = tiny_metatask();
        m.base_models[1].run_id = 11;
        assert!(m
            .validate()
            .unwrap_err()
            .to_string()
            .contains("duplicate run id"));
    }

    #[test]
    fn fold_out_of_range_rejected() {
        let mut m = tiny_metatask();
        m.fold_of_instance[3] = 2;
        assert!(m
            .validate()
            .unwrap_err()
            .to_string()
            .contains("fold_of_instance"));
    }

    #[test]
    fn bad_row_sum_rejected() {
        let mut m = tiny_metatask();
        m.base_models[0].confidences[[0, 0]] = 0.5;
        assert!(m.validate().unwrap_err().to_string().contains("sums to"));
    }

    #[test]
    fn slice_full_empty_and_ordered() {
        let m = tiny_metatask();
        let full = m.full_matrix();
        assert_eq!(full.n_models(), 2);
        assert_eq!(full.n_instances(), 4);

        let empty = m.slice(&[]).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.n_models(), 2);

        let s = m.slice(&[2, 0]).unwrap();
        assert_eq!(s.instance_indices, vec![2, 0]);
        assert_eq!(s.ground_truth, vec![m.ground_truth[2], m.ground_truth[0]]);
        assert_eq!(s.confidences[[0, 1, 0]], 0.7);
        assert_eq!(s.features[1], m.instances[0]);
    }

    #[test]
    fn slice_rejects_bad_indices() {
        let m = tiny_metatask();
        assert!(matches!(
            m.slice(&[4]),
            Err(ModelError::IndexOutOfRange { index: 4, len: 4 })
        ));
        assert!(matches!(
            m.slice(&[1, 1]),
            Err(ModelError::DuplicateIndex(1))
        ));
    }

    #[test]
    fn slice_drops_corrupted_on_request() {
        let mut m = tiny_metatask();
        m.base_models[0].corrupted = true;
        assert_eq!(m.slice_with(&[0, 1], true).unwrap().run_ids, vec![12]);
        assert_eq!(m.slice_with(&[0, 1], false).unwrap().n_models(), 2);
    }

    #[test]
    fn folds_partition_instances() {
        let m = tiny_metatask();
        let mut all: Vec<usize> = (0..m.n_folds).flat_map(|f| m.fold_indices(f)).collect();
        all.sort_unstable();
        assert_eq!(all, (0..m.n_instances()).collect::<Vec<_>>());
    }

    #[test]
    fn spec_validation() {
        let mut spec = BenchmarkSpec::default();
        spec.validate().unwrap();
        spec.split_ratio = 1.0;
        assert!(spec.validate().is_err());
        spec.split_ratio = 0.5;
        spec.gap_threshold = -0.1;
        assert!(spec.validate().is_err());
    }
}
