//! Evaluation protocol: every fold's test predictions are split into a
//! stratified meta-train and meta-test half, each technique is fitted on the
//! first and scored on the second.

mod report;

use std::collections::BTreeMap;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use report::{
    aggregate, read_results_csv, render_csv, render_markdown, render_svg, write_results_csv,
    BenchmarkReport, Stratum, TaskSummary, TechniqueStats, RESULTS_COLUMNS,
};

use crate::ensemble::{self, SimConfig, TechniqueId, TechniqueState};
use crate::learners::{preprocess, PreprocessedFeatures};
use crate::metrics::Metric;
use crate::model::{BenchmarkSpec, ClassIdx, Metatask, ModelError};
use crate::seed::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("cannot split {0} instance(s) into two non-empty halves")]
    TooFewInstances(usize),
    #[error("split ratio {0} not in (0, 1)")]
    InvalidRatio(f64),
    #[error("{indices} indices with {labels} labels")]
    Misaligned { indices: usize, labels: usize },
    #[error("fold {fold} out of range for {n_folds} folds")]
    FoldOutOfRange { fold: usize, n_folds: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("results file: {0}")]
    Csv(#[from] csv::Error),
    #[error("results file lacks column {0:?}")]
    MissingColumn(String),
    #[error("results file line {line}: {message}")]
    BadValue { line: usize, message: String },
}

/// Settings of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub split_ratio: f64,
    pub seed: u64,
    pub drop_corrupted: bool,
    pub sim: SimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            split_ratio: 0.5,
            seed: 0,
            drop_corrupted: true,
            sim: SimConfig::default(),
        }
    }
}

impl From<&BenchmarkSpec> for ExperimentConfig {
    fn from(spec: &BenchmarkSpec) -> Self {
        ExperimentConfig {
            split_ratio: spec.split_ratio,
            seed: spec.seed,
            drop_corrupted: spec.drop_corrupted,
            sim: SimConfig {
                metric: spec.metric.parse().unwrap_or_default(),
                ..SimConfig::default()
            },
        }
    }
}

/// One (task, fold, technique) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldRun {
    pub task_id: u64,
    pub dataset_name: String,
    pub fold: usize,
    pub technique: TechniqueId,
    pub metric: Metric,
    /// `None` when the fold is invalid.
    pub score: Option<f64>,
    pub reason: String,
    pub seed: u64,
    pub meta_train_size: usize,
    pub meta_test_size: usize,
    pub n_instances: usize,
}

impl FoldRun {
    pub fn valid(&self) -> bool {
        self.score.is_some()
    }
}

/// Seed of one (task, fold) work item.
pub fn fold_seed(seed: u64, task_id: u64, fold: usize) -> u64 {
    derive_seed(&[seed, task_id, fold as u64])
}

/// Stratified split of `indices` into (meta-train, meta-test).
///
/// Each class sends `floor(ratio × count)` members to meta-train; the
/// remaining meta-train slots (to reach `round(ratio × n)`) go one each to
/// classes picked by a seeded shuffle. Both halves come back ascending.
pub fn stratified_half_split(
    indices: &[usize],
    labels: &[ClassIdx],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), HarnessError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(HarnessError::InvalidRatio(ratio));
    }
    if indices.len() != labels.len() {
        return Err(HarnessError::Misaligned {
            indices: indices.len(),
            labels: labels.len(),
        });
    }
    let n = indices.len();
    if n < 2 {
        return Err(HarnessError::TooFewInstances(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<ClassIdx, Vec<usize>> = BTreeMap::new();
    for (&i, &y) in indices.iter().zip(labels) {
        by_class.entry(y).or_default().push(i);
    }
    let mut quota: BTreeMap<ClassIdx, usize> = BTreeMap::new();
    let mut candidates = Vec::new();
    for (&y, members) in by_class.iter_mut() {
        members.shuffle(&mut rng);
        let exact = ratio * members.len() as f64;
        let floor = exact.floor() as usize;
        quota.insert(y, floor);
        if floor < members.len() && exact > floor as f64 {
            candidates.push(y);
        }
    }
    let target = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let base: usize = quota.values().sum();
    candidates.shuffle(&mut rng);
    for y in candidates.into_iter().take(target.saturating_sub(base)) {
        *quota.get_mut(&y).expect("candidate has a quota") += 1;
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (y, members) in &by_class {
        let q = quota[y];
        train.extend_from_slice(&members[..q]);
        test.extend_from_slice(&members[q..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Runs `techniques` on one fold. The split, and the error models shared by
/// DCS and DES, are computed once.
pub fn run_fold_techniques(
    m: &Metatask,
    features: &PreprocessedFeatures,
    fold: usize,
    techniques: &[TechniqueId],
    config: &ExperimentConfig,
) -> Result<Vec<FoldRun>, HarnessError> {
    if fold >= m.n_folds {
        return Err(HarnessError::FoldOutOfRange {
            fold,
            n_folds: m.n_folds,
        });
    }
    let seed = fold_seed(config.seed, m.task_id, fold);
    let fold_idx = m.fold_indices(fold);
    let labels: Vec<ClassIdx> = fold_idx.iter().map(|&i| m.ground_truth[i]).collect();
    let metric = config.sim.metric;
    let blank = |technique: TechniqueId| FoldRun {
        task_id: m.task_id,
        dataset_name: m.dataset_name.clone(),
        fold,
        technique,
        metric,
        score: None,
        reason: String::new(),
        seed,
        meta_train_size: 0,
        meta_test_size: 0,
        n_instances: m.n_instances(),
    };
    let (train_idx, test_idx) =
        match stratified_half_split(&fold_idx, &labels, config.split_ratio, seed) {
            Ok(s) => s,
            Err(e) => {
                return Ok(techniques
                    .iter()
                    .map(|&t| FoldRun {
                        reason: e.to_string(),
                        meta_test_size: fold_idx.len(),
                        ..blank(t)
                    })
                    .collect())
            }
        };
    let pm_train = m.slice_with(&train_idx, config.drop_corrupted)?;
    let pm_test = m.slice_with(&test_idx, config.drop_corrupted)?;
    let f_train = features.select_rows(&train_idx);
    let f_test = features.select_rows(&test_idx);

    let mut epms: Option<Result<TechniqueState, String>> = None;
    let mut runs = Vec::with_capacity(techniques.len());
    for &t in techniques {
        let mut run = FoldRun {
            meta_train_size: train_idx.len(),
            meta_test_size: test_idx.len(),
            ..blank(t)
        };
        let fitted = if matches!(t, TechniqueId::Dcs | TechniqueId::Des) {
            let shared = epms.get_or_insert_with(|| {
                ensemble::fit(TechniqueId::Dcs, &pm_train, &f_train, &config.sim, seed)
                    .map(|f| f.state)
                    .map_err(|e| e.to_string())
            });
            shared.clone().map(|state| ensemble::FittedTechnique {
                technique: t,
                run_ids: pm_train.run_ids.clone(),
                state,
            })
        } else {
            ensemble::fit(t, &pm_train, &f_train, &config.sim, seed).map_err(|e| e.to_string())
        };
        let scored = fitted.and_then(|f| {
            let out =
                ensemble::predict(&f, &pm_test, &f_test, &config.sim).map_err(|e| e.to_string())?;
            metric
                .score(
                    &pm_test.ground_truth,
                    &out.predictions,
                    out.confidences.view(),
                )
                .map_err(|e| e.to_string())
        });
        match scored {
            Ok(s) => run.score = Some(s),
            Err(reason) => {
                debug!("task {} fold {fold} {t}: {reason}", m.task_id);
                run.reason = reason;
            }
        }
        runs.push(run);
    }
    Ok(runs)
}

/// Runs a single technique on one fold.
pub fn run_fold(
    m: &Metatask,
    fold: usize,
    technique: TechniqueId,
    config: &ExperimentConfig,
) -> Result<FoldRun, HarnessError> {
    let features = preprocess(&m.instances, &m.features);
    let mut runs = run_fold_techniques(m, &features, fold, &[technique], config)?;
    Ok(runs.remove(0))
}

/// Every (metatask, fold, technique) combination, executed in parallel and
/// returned ordered by task, fold and the order of `techniques`.
pub fn run_benchmark(
    metatasks: &[Metatask],
    techniques: &[TechniqueId],
    config: &ExperimentConfig,
) -> Vec<FoldRun> {
    if techniques.is_empty() {
        return Vec::new();
    }
    let features: Vec<PreprocessedFeatures> = metatasks
        .par_iter()
        .map(|m| preprocess(&m.instances, &m.features))
        .collect();
    let items: Vec<(usize, usize)> = metatasks
        .iter()
        .enumerate()
        .flat_map(|(t, m)| (0..m.n_folds).map(move |f| (t, f)))
        .collect();
    let mut runs: Vec<FoldRun> = items
        .par_iter()
        .flat_map_iter(|&(t, fold)| {
            let m = &metatasks[t];
            run_fold_techniques(m, &features[t], fold, techniques, config)
                .expect("fold index comes from the metatask")
        })
        .collect();
    let position = |t: TechniqueId| {
        techniques
            .iter()
            .position(|&x| x == t)
            .unwrap_or(usize::MAX)
    };
    runs.sort_by(|a, b| {
        (a.task_id, a.fold, position(a.technique)).cmp(&(b.task_id, b.fold, position(b.technique)))
    });
    runs
}
