//! Assembles a metatask from OpenML: task, dataset, fold assignment and the
//! parsed, repaired predictions of the best `top_n` usable runs.

use std::collections::{BTreeMap, HashSet};

use log::{info, warn};
use ndarray::Array2;
use rayon::prelude::*;

use crate::metrics::Metric;
use crate::model::{BaseModelRun, BuildInfo, ClassIdx, Metatask, ModelError};
use crate::openml::{ClientError, OpenMlClient, RunSummary};
use crate::parser::{self, RepairPolicy};

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("task {0}: no run with usable prediction data")]
    NoBaseModels(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub metric: Metric,
    pub top_n: usize,
    pub source_suite: Option<u64>,
    pub repair: RepairPolicy,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            metric: Metric::Auroc,
            top_n: 50,
            source_suite: None,
            repair: RepairPolicy::default(),
        }
    }
}

/// Why a ranked run did not become a base model.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedRun {
    pub run_id: u64,
    pub reason: String,
}

/// Turns one prediction file into a base model of a task with the given
/// labels, ground truth and fold assignment.
pub fn base_model_from_file(
    run: &RunSummary,
    bytes: &[u8],
    class_labels: &[String],
    ground_truth: &[ClassIdx],
    fold_of_instance: &[usize],
    policy: &RepairPolicy,
) -> Result<BaseModelRun, String> {
    let rows = parser::parse_prediction_file(bytes, class_labels).map_err(|e| e.to_string())?;
    let n = ground_truth.len();
    if rows.len() != n {
        return Err(format!("{} prediction rows for {n} instances", rows.len()));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.row_id != i {
            return Err(format!("no prediction for instance {i}"));
        }
        if let Some(f) = r.fold {
            if f != fold_of_instance[i] {
                return Err(format!(
                    "instance {i} predicted in fold {f}, task puts it in fold {}",
                    fold_of_instance[i]
                ));
            }
        }
    }
    let out = parser::repair(&rows, Some(ground_truth), policy);
    let c = class_labels.len();
    let mut confidences = Array2::zeros((n, c));
    for (i, r) in out.rows.iter().enumerate() {
        for (k, v) in r.confidence.iter().enumerate() {
            confidences[[i, k]] = *v;
        }
    }
    Ok(BaseModelRun {
        run_id: run.run_id,
        flow_id: run.flow_id,
        flow_name: run.flow_name.clone(),
        setup_id: run.setup_id,
        metric_score: run.metric_value,
        predictions: out.rows.iter().map(|r| r.predicted).collect(),
        confidences,
        discrepancy: out.classes,
        corrupted: out.corrupted,
    })
}

/// Builds the metatask of `task_id`. Runs whose predictions are missing or
/// unusable are skipped and replaced by the next-ranked runs until `top_n`
/// base models are found or the ranking is exhausted.
pub fn build_metatask(
    client: &OpenMlClient,
    task_id: u64,
    options: &BuildOptions,
) -> Result<(Metatask, Vec<SkippedRun>), BuildError> {
    let task = client.fetch_task(task_id)?;
    let data = client.fetch_dataset_with_target(task.dataset_id, Some(&task.target_name))?;
    let folds = client.fetch_splits(&task, data.instances.len())?;
    info!(
        "task {task_id}: dataset {} ({} instances, {} features, {} classes)",
        data.name,
        data.instances.len(),
        data.features.len(),
        data.class_labels.len()
    );

    let top_n = options.top_n.max(1);
    let mut limit = top_n;
    let mut tried = HashSet::new();
    let mut models: Vec<BaseModelRun> = Vec::new();
    let mut hashes = BTreeMap::new();
    let mut skipped = Vec::new();
    loop {
        let ranked = client.fetch_top_runs(task_id, options.metric.name(), limit)?;
        let fresh: Vec<RunSummary> = ranked
            .iter()
            .filter(|r| !tried.contains(&r.run_id))
            .cloned()
            .collect();
        let mut pending = fresh.as_slice();
        while models.len() < top_n && !pending.is_empty() {
            let take = (top_n - models.len()).min(pending.len());
            let (batch, rest) = pending.split_at(take);
            pending = rest;
            let results: Vec<_> = batch
                .par_iter()
                .map(|run| {
                    let file = client.fetch_predictions(run).map_err(|e| e.to_string())?;
                    let bm = base_model_from_file(
                        run,
                        &file.bytes,
                        &data.class_labels,
                        &data.ground_truth,
                        &folds,
                        &options.repair,
                    )?;
                    Ok::<_, String>((bm, file.sha256))
                })
                .collect();
            for (run, result) in batch.iter().zip(results) {
                tried.insert(run.run_id);
                match result {
                    Ok((bm, sha)) => {
                        hashes.insert(bm.run_id, sha);
                        models.push(bm);
                    }
                    Err(reason) => {
                        warn!("task {task_id}: skipping run {}: {reason}", run.run_id);
                        skipped.push(SkippedRun {
                            run_id: run.run_id,
                            reason,
                        });
                    }
                }
            }
        }
        if models.len() >= top_n || ranked.len() < limit {
            break;
        }
        limit *= 2;
    }
    if models.is_empty() {
        return Err(BuildError::NoBaseModels(task_id));
    }
    let mut build_info = BuildInfo::new(options.metric.name(), top_n);
    build_info.source_suite = options.source_suite;
    build_info.prediction_sha256 = hashes;
    let m = Metatask {
        task_id,
        dataset_name: data.name,
        target_name: task.target_name,
        class_labels: data.class_labels,
        features: data.features,
        instances: data.instances,
        ground_truth: data.ground_truth,
        fold_of_instance: folds,
        n_folds: task.n_folds,
        base_models: models,
        build_info,
    };
    m.validate()?;
    Ok((m, skipped))
}
